mod common;

use common::{crop_len, normals, rng};
use hybridpool::checks::check_model;
use hybridpool::nn::Mode;
use hybridpool::resnet::{forward_shapes, spectral_target, SecondPool};
use hybridpool::{Error, Graph, Model, ModelConfig, ParamKind, Tensor, Variant};
use rand::Rng;

const TABLE_ROWS: [[f64; 5]; 6] = [
    [1.0, 1.0, 2.0, 2.0, 2.0],
    [1.0, 1.0, 2.0, 2.0, 3.0],
    [1.0, 1.0, 1.0, 3.0, 1.0],
    [1.0, 1.0, 3.0, 1.0, 3.0],
    [1.0, 1.0, 3.0, 1.0, 2.0],
    [1.0, 1.0, 3.0, 2.0, 3.0],
];

/// Full ResNet-18 geometry with narrow stages; shapes do not depend on width.
fn narrow(variant: Variant, inits: &[f64]) -> ModelConfig {
    ModelConfig {
        stride_inits: inits.to_vec(),
        stage_channels: vec![4, 4, 8, 8],
        ..ModelConfig::resnet18(variant, 10)
    }
}

fn images(seed: u64, n: usize, c: usize, side: usize) -> Tensor<f64> {
    Tensor::new(vec![n, c, side, side], normals(&mut rng(seed), n * c * side * side)).unwrap()
}

fn traced(model: &mut Model<f64>, x: Tensor<f64>) -> (Tensor<f64>, Vec<(String, Vec<usize>)>) {
    let g = Graph::new();
    let xv = g.constant(x).unwrap();
    let (y, trace) = model.forward_traced(&g, xv, Mode::Train).unwrap();
    (g.value(y).as_ref().clone(), trace)
}

#[test]
fn symbolic_shapes_agree_with_forward_for_every_row_and_variant() {
    for row in TABLE_ROWS {
        for variant in Variant::ALL {
            let config = narrow(variant, &row);
            let mut model = Model::<f64>::build(&config).unwrap();
            let (logits, trace) = traced(&mut model, images(1, 2, 3, 32));
            assert_eq!(trace, forward_shapes(&config, 2).unwrap(), "{row:?} {variant}");
            assert_eq!(trace, model.shapes(2).unwrap());
            assert_eq!(logits.shape(), &[2, 10]);
            assert!(logits.all_finite());
        }
    }
}

#[test]
fn stage_sizes_follow_the_shape_law_cumulatively() {
    for row in TABLE_ROWS {
        let config = narrow(Variant::HybridSpectral, &row);
        let trace = forward_shapes(&config, 1).unwrap();
        let mut n = 32;
        let mut want = vec![("stem".to_string(), n)];
        for (stage, &s) in row[1..].iter().enumerate() {
            n = if s > 1.0 { crop_len(n, s, 1.0) } else { n };
            want.push((format!("stage{}.block1", stage + 1), n));
            want.push((format!("stage{}.block2", stage + 1), n));
        }
        want.push(("pool2".to_string(), spectral_target(n, 0.5)));
        let got: Vec<(String, usize)> = trace
            .iter()
            .filter(|(_, s)| s.len() == 4)
            .map(|(name, s)| (name.clone(), s[2]))
            .collect();
        assert_eq!(got, want, "{row:?}");
    }
}

#[test]
fn full_width_resnet18_runs_for_every_variant() {
    for variant in Variant::ALL {
        let config = ModelConfig::resnet18(variant, 100);
        let mut model = Model::<f32>::build(&config).unwrap();
        let g = Graph::new();
        let x = g.constant(images(2, 1, 3, 32).cast()).unwrap();
        let (y, trace) = model.forward_traced(&g, x, Mode::Eval).unwrap();
        assert_eq!(g.shape(y), vec![1, 100]);
        let sizes: Vec<usize> = trace.iter().filter(|(_, s)| s.len() == 4).map(|(_, s)| s[2]).collect();
        let tail = match variant {
            Variant::Baseline => vec![],
            Variant::HybridSpectral => vec![4],
            Variant::HybridDiffStride => vec![crop_len(8, 2.0, 1.0)],
        };
        let mut want = vec![32, 32, 32, 18, 18, 11, 11, 8, 8];
        want.extend(tail);
        assert_eq!(sizes, want, "{variant}");
    }
}

#[test]
fn stride_pair_count_is_the_number_of_inits_above_one() {
    for row in TABLE_ROWS {
        let model = Model::<f64>::build(&narrow(Variant::Baseline, &row)).unwrap();
        let strides = model
            .params()
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Stride)
            .count();
        assert_eq!(strides, row.iter().filter(|&&s| s > 1.0).count());
        assert_eq!(model.diffstride_layers().len(), strides);
    }
    let with_stem = Model::<f64>::build(&narrow(Variant::Baseline, &[2.0, 1.0, 2.0, 1.0, 1.0])).unwrap();
    let names: Vec<String> = with_stem.diffstride_layers().iter().map(|l| l.name.clone()).collect();
    assert_eq!(names, ["stem.pool", "stage2.block1.pool"]);
}

#[test]
fn variants_differ_only_by_the_second_pool() {
    let count = |v| {
        Model::<f64>::build(&narrow(v, &TABLE_ROWS[0]))
            .unwrap()
            .params()
            .num_scalars()
    };
    let base = count(Variant::Baseline);
    assert_eq!(count(Variant::HybridSpectral), base);
    assert_eq!(count(Variant::HybridDiffStride), base + 2);

    let base_model = Model::<f64>::build_base(&narrow(Variant::Baseline, &TABLE_ROWS[0])).unwrap();
    let mut placed = base_model.clone();
    placed.place_second_pool(Variant::Baseline).unwrap();
    assert_eq!(placed.layer_count(), base_model.layer_count());
    assert!(matches!(
        placed.place_second_pool(Variant::HybridSpectral),
        Err(Error::Contract(_))
    ));

    let mut spectral = base_model.clone();
    spectral.place_second_pool(Variant::HybridSpectral).unwrap();
    assert!(matches!(spectral.second_pool(), Some(SecondPool::Spectral { .. })));
    let trace = spectral.shapes(1).unwrap();
    let names: Vec<&str> = trace.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names.iter().filter(|n| **n == "pool2").count(), 1);
    assert_eq!(&names[names.len() - 3..], ["pool2", "gap", "dense"]);

    let mut twice = base_model.clone();
    twice.place_second_pool(Variant::HybridDiffStride).unwrap();
    let extra: Vec<String> = twice
        .params()
        .iter()
        .map(|(_, p)| p.name.clone())
        .filter(|n| base_model.params().id(n).is_none())
        .collect();
    assert_eq!(extra, ["pool2.stride"]);
}

#[test]
fn spectral_pool_halves_a_4x4_last_stage() {
    let config = ModelConfig {
        stride_inits: vec![1.0, 1.0, 2.0],
        smoothness: 0.0,
        ..ModelConfig::tiny(Variant::HybridSpectral, 10, 8)
    };
    let trace = forward_shapes(&config, 1).unwrap();
    let last_stage = &trace.iter().rev().find(|(n, _)| n.starts_with("stage")).unwrap().1;
    assert_eq!(&last_stage[2..], &[4, 4]);
    let pool = &trace.iter().find(|(n, _)| n == "pool2").unwrap().1;
    assert_eq!(&pool[2..], &[2, 2]);
}

#[test]
fn identity_only_network_keeps_the_input_size() {
    let config = ModelConfig {
        stride_inits: vec![1.0, 1.0, 1.0],
        stage_channels: vec![8, 8],
        ..ModelConfig::tiny(Variant::Baseline, 10, 12)
    };
    let model = Model::<f64>::build(&config).unwrap();
    assert!(model.diffstride_layers().is_empty());
    for (name, shape) in forward_shapes(&config, 3).unwrap() {
        if shape.len() == 4 {
            assert_eq!(shape, [3, 8, 12, 12], "{name}");
        }
    }
}

#[test]
fn every_parameter_gets_a_finite_gradient() {
    for variant in Variant::ALL {
        let config = ModelConfig {
            stride_inits: vec![1.0, 2.3, 1.7],
            second_stride_init: 2.2,
            ..ModelConfig::tiny(variant, 10, 16)
        };
        let mut model = Model::<f64>::build(&config).unwrap();
        let g = Graph::new();
        let labels: Vec<usize> = (0..4).collect();
        let (loss, _) = model.loss(&g, images(3, 4, 3, 16), &labels, Mode::Train).unwrap();
        g.backward(loss, model.params_mut()).unwrap();
        for (_, p) in model.params().iter() {
            let grad = p
                .grad()
                .unwrap_or_else(|| panic!("{variant}: {} has no gradient", p.name));
            assert!(grad.all_finite(), "{variant}: {}", p.name);
            if p.kind == ParamKind::Stride {
                let size = grad.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                // global average pooling reads only the DC bin, which is
                // always on the plateau, so a DiffStride right before it
                // has no influence on the loss beyond roundoff
                if p.name == "pool2.stride" {
                    assert!(size < 1e-12, "{variant}: {size}");
                } else {
                    assert!(
                        grad.data().iter().all(|v| v.abs() > 1e-6),
                        "{variant}: {} {:?}",
                        p.name,
                        grad.data()
                    );
                }
            }
        }
    }
}

#[test]
fn shortcut_branches_always_agree() {
    let config = narrow(Variant::Baseline, &[1.0, 1.0, 2.0, 2.0, 2.0]);
    let model = Model::<f64>::build(&config).unwrap();
    let inputs: Vec<(hybridpool::ParamId, usize, usize)> = model
        .stride_inputs()
        .unwrap()
        .into_iter()
        .map(|(l, h, w)| (l.strides, h, w))
        .collect();
    assert_eq!(inputs.len(), 3);
    let mut r = rng(4);
    for (i, &(id, h, w)) in inputs.iter().enumerate() {
        for _ in 0..20 {
            let mut m = model.clone();
            let s = [r.random_range(1.0..h as f64), r.random_range(1.0..w as f64)];
            m.params_mut()
                .set_value(id, Tensor::from_f64(vec![2], &s).unwrap())
                .unwrap();
            let (y, trace) = traced(&mut m, images(i as u64, 2, 3, 32));
            assert_eq!(y.shape(), &[2, 10]);
            assert_eq!(trace, m.shapes(2).unwrap());
        }
    }
}

#[test]
fn model_check_reports_every_parameter_group() {
    for variant in Variant::ALL {
        let out = check_model(variant, 3, 0).unwrap();
        let cfg = hybridpool::checks::check_model_config(variant, 0);
        let model = Model::<f64>::build(&cfg).unwrap();
        let reported: Vec<&str> = out.report.per_param.iter().map(|p| p.name.as_str()).collect();
        let expected: Vec<String> = model.params().iter().map(|(_, p)| p.name.clone()).collect();
        assert_eq!(reported, expected, "{variant}");
        for p in &out.report.per_param {
            if p.name == "pool2.stride" {
                assert!(p.zero_analytic);
            } else {
                assert!(p.max_rel_error < 1e-4, "{variant}: {}", out.summary());
            }
        }
    }
}
