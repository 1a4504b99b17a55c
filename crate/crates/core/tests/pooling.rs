mod common;

use common::*;
use hybridpool::pooling::{
    build_mask, diffstride_forward, output_size, project_strides, spectral_pool_forward, stride_is_smooth, StridePair,
};
use hybridpool::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn random(seed: u64, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, normals(&mut rng(seed), n)).unwrap()
}

#[test]
fn spectral_pool_matches_oracle_8x8_to_4x4() {
    let x = random(1, vec![1, 2, 8, 8]);
    let got = spectral_pool_forward(&x, 4, 4).unwrap();
    let want = per_plane(x.data(), 8, 8, |p| spectral_pool_plane(p, 8, 8, 4, 4));
    assert_eq!(got.shape(), &[1, 2, 4, 4]);
    assert!(max_abs_diff(got.data(), &want) < 1e-5);
}

#[test]
fn spectral_pool_matches_oracle_on_every_shape_up_to_16() {
    let mut r = rng(2);
    for hh in 1..=16 {
        for ww in 1..=16 {
            let (h, w) = (r.random_range(1..=hh), r.random_range(1..=ww));
            let x = random((hh * 17 + ww) as u64, vec![1, 1, hh, ww]);
            let got = spectral_pool_forward(&x, h, w).unwrap();
            let want = spectral_pool_plane(x.data(), hh, ww, h, w);
            assert!(max_abs_diff(got.data(), &want) < 1e-5, "{hh}x{ww} -> {h}x{w}");
        }
    }
}

#[test]
fn spectral_pool_preserves_the_scaled_mean() {
    // sum(x)/sqrt(HW) = sum(pooled)/sqrt(hw): both are the DC coefficient
    for (hh, ww, h, w) in [(8, 8, 4, 4), (9, 6, 2, 5), (16, 16, 3, 7)] {
        let x = random(3, vec![hh, ww]);
        let y = spectral_pool_forward(&x, h, w).unwrap();
        let lhs = x.sum() / ((hh * ww) as f64).sqrt();
        let rhs = y.sum() / ((h * w) as f64).sqrt();
        assert!((lhs - rhs).abs() < 1e-5);
    }
}

#[test]
fn diffstride_matches_composed_oracle_8x8() {
    let x = random(4, vec![2, 3, 8, 8]);
    let (got, _) = diffstride_forward(&x, StridePair::new(2.0, 2.5, 1.0)).unwrap();
    let want = per_plane(x.data(), 8, 8, |p| diffstride_plane(p, 8, 8, 2.0, 2.5, 1.0));
    assert_eq!(got.shape(), &[2, 3, 6, 5]);
    assert!(max_abs_diff(got.data(), &want) < 1e-5);
}

#[test]
fn diffstride_matches_composed_oracle_on_every_shape_up_to_16() {
    let mut r = rng(5);
    for hh in 1..=16 {
        for ww in 1..=16 {
            let s_h = if hh == 1 { 1.0 } else { r.random_range(1.0..hh as f64) };
            let s_w = if ww == 1 { 1.0 } else { r.random_range(1.0..ww as f64) };
            let smooth = [0.0, 0.5, 1.0, 2.0][r.random_range(0..4)];
            let x = random((hh * 31 + ww) as u64, vec![1, 1, hh, ww]);
            let (got, _) = diffstride_forward(&x, StridePair::new(s_h, s_w, smooth)).unwrap();
            let want = diffstride_plane(x.data(), hh, ww, s_h, s_w, smooth);
            assert!(
                max_abs_diff(got.data(), &want) < 1e-5,
                "{hh}x{ww} S=({s_h}, {s_w}) R={smooth}"
            );
        }
    }
}

#[test]
fn mask_derivative_matches_finite_difference_of_the_formula() {
    let (s, n, r, eps) = (2.5, 8, 1.0, 1e-6);
    let mask = build_mask(s, s, n, n, r).unwrap();
    assert_eq!(mask.crop, (5, 5));
    let ramp = mask.rows.ramp();
    assert!(!ramp.is_empty());
    for &p in &ramp {
        let k = freq(p, n);
        let fd = (mask_1d(k, n, s + eps, r) - mask_1d(k, n, s - eps, r)) / (2.0 * eps);
        assert!((mask.rows.dvalues[p] - -0.64).abs() < 1e-12);
        assert!((fd - -0.64).abs() < 1e-6, "{fd}");
        assert!((mask.rows.values[p] - mask_1d(k, n, s, r)).abs() < 1e-12);
    }
}

#[test]
fn identity_and_reference_shapes() {
    let x = random(6, vec![1, 2, 7, 9]);
    let (y, _) = diffstride_forward(&x, StridePair::new(1.0, 1.0, 0.0)).unwrap();
    assert!(y.max_abs_diff(&x).unwrap() < 1e-5);
    assert!(spectral_pool_forward(&x, 7, 9).unwrap().max_abs_diff(&x).unwrap() < 1e-5);
    let big = random(7, vec![1, 1, 32, 32]);
    let (y, _) = diffstride_forward(&big, StridePair::new(2.0, 2.0, 1.0)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 18, 18]);
}

#[test]
fn shape_law_grid() {
    for n in [8, 16, 32] {
        for s in [1.0, 1.3, 2.0, 2.5, 3.0] {
            for r in [0.0, 1.0, 4.0] {
                let x = random(n as u64, vec![1, 1, n, n]);
                let (y, _) = diffstride_forward(&x, StridePair::new(s, s, r)).unwrap();
                let want = crop_len(n, s, r);
                assert_eq!(y.shape(), &[1, 1, want, want], "N={n} S={s} R={r}");
            }
        }
    }
}

/// `sum(y * c)` for a fixed random `c`, and the analytic stride gradient.
fn projected(x: &Tensor<f64>, pair: StridePair, weights: &[f64]) -> (f64, (f64, f64)) {
    let (y, cache) = diffstride_forward(x, pair).unwrap();
    let loss = y.data().iter().zip(weights).map(|(a, b)| a * b).sum();
    let upstream = Tensor::new(y.shape().to_vec(), weights[..y.len()].to_vec()).unwrap();
    (loss, cache.stride_gradient(&upstream).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn stride_gradient_matches_central_differences() {
    let eps = 1e-4;
    let mut r = rng(8);
    let mut checked = 0;
    while checked < 24 {
        let (h, w) = (r.random_range(4..=16), r.random_range(4..=16));
        let smooth = [0.5, 1.0, 2.0][r.random_range(0..3)];
        let s_h = r.random_range(1.0..h as f64);
        let s_w = r.random_range(1.0..w as f64);
        if !stride_is_smooth(s_h, h, smooth, eps) || !stride_is_smooth(s_w, w, smooth, eps) {
            continue;
        }
        let x = random(checked, vec![2, 2, h, w]);
        let weights = normals(&mut r, 2 * 2 * h * w);
        let (_, (gh, gw)) = projected(&x, StridePair::new(s_h, s_w, smooth), &weights);
        let f = |a: f64, b: f64| projected(&x, StridePair::new(a, b, smooth), &weights).0;
        let fd_h = (f(s_h + eps, s_w) - f(s_h - eps, s_w)) / (2.0 * eps);
        let fd_w = (f(s_h, s_w + eps) - f(s_h, s_w - eps)) / (2.0 * eps);
        assert!(
            rel(gh, fd_h) < 1e-4,
            "{h}x{w} S=({s_h}, {s_w}) R={smooth}: {gh} vs {fd_h}"
        );
        assert!(
            rel(gw, fd_w) < 1e-4,
            "{h}x{w} S=({s_h}, {s_w}) R={smooth}: {gw} vs {fd_w}"
        );
        checked += 1;
    }
}

#[test]
fn scaling_the_loss_scales_the_stride_gradient() {
    let x = random(9, vec![1, 2, 12, 12]);
    let pair = StridePair::new(2.3, 1.7, 1.0);
    let (y, cache) = diffstride_forward(&x, pair).unwrap();
    let u = random(12, y.shape().to_vec());
    let g1 = cache.stride_gradient(&u).unwrap();
    let g8 = cache.stride_gradient(&u.map(|v| 8.0 * v)).unwrap();
    let g10 = cache.stride_gradient(&u.map(|v| 10.0 * v)).unwrap();
    assert!(g1.0.abs() > 1e-3 && g1.1.abs() > 1e-3);
    assert_eq!((g8.0, g8.1), (8.0 * g1.0, 8.0 * g1.1));
    assert!(rel(g10.0, 10.0 * g1.0) < 1e-12 && rel(g10.1, 10.0 * g1.1) < 1e-12);
}

#[test]
fn input_gradient_is_the_adjoint_of_the_forward_map() {
    let x = random(10, vec![1, 1, 9, 10]);
    let pair = StridePair::new(1.8, 2.6, 1.0);
    let (y, cache) = diffstride_forward(&x, pair).unwrap();
    let u = random(11, y.shape().to_vec());
    let gx = cache.input_gradient(&u).unwrap();
    let lhs: f64 = y.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

fn shape_stride() -> impl Strategy<Value = (usize, usize, f64, f64, f64)> {
    (2usize..=12, 2usize..=12).prop_flat_map(|(h, w)| {
        (
            Just(h),
            Just(w),
            1.0..h as f64,
            1.0..w as f64,
            prop::sample::select(vec![0.0, 0.5, 1.0, 3.0]),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diffstride_never_adds_energy((h, w, s_h, s_w, r) in shape_stride(), seed in 0u64..1000) {
        let x = random(seed, vec![1, 1, h, w]);
        let (y, _) = diffstride_forward(&x, StridePair::new(s_h, s_w, r)).unwrap();
        prop_assert!(y.norm() <= x.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn mask_shape_properties((h, w, s_h, s_w, r) in shape_stride()) {
        let mask = build_mask(s_h, s_w, h, w, r).unwrap();
        prop_assert_eq!(mask.value(h / 2, w / 2), 1.0);
        for u in 0..h {
            for v in 0..w {
                prop_assert_eq!(mask.value(u, v), mask.rows.values[u] * mask.cols.values[v]);
            }
        }
        for axis in [&mask.rows, &mask.cols] {
            let n = axis.values.len();
            for p in 0..n {
                for q in 0..n {
                    if freq(p, n).abs() <= freq(q, n).abs() {
                        prop_assert!(axis.values[p] >= axis.values[q]);
                    }
                }
            }
        }
        let inside = |&(u, v): &(usize, usize)| mask.value(u, v) > 0.0 && mask.value(u, v) < 1.0;
        prop_assert!(mask.ramp_region().iter().all(inside));
    }

    #[test]
    fn larger_strides_never_open_the_mask(n in 2usize..=32, a in 1.0f64..32.0, b in 1.0f64..32.0, r in 0.0f64..4.0) {
        let (lo, hi) = (a.min(b).min(n as f64 - 1e-3).max(1.0), a.max(b).min(n as f64 - 1e-3).max(1.0));
        let m_lo = build_mask(lo, 1.0, n, 1, r).unwrap();
        let m_hi = build_mask(hi, 1.0, n, 1, r).unwrap();
        for p in 0..n {
            prop_assert!(m_hi.rows.values[p] <= m_lo.rows.values[p]);
        }
        prop_assert!(output_size(n, hi, r) <= output_size(n, lo, r));
    }

    #[test]
    fn projection_is_idempotent_and_in_range(s_h in -5.0f64..40.0, s_w in -5.0f64..40.0, h in 1usize..33, w in 1usize..33) {
        let p = project_strides(StridePair::new(s_h, s_w, 1.0), h, w);
        prop_assert_eq!(project_strides(p, h, w), p);
        prop_assert!(p.s_h >= 1.0 && (p.s_h < h as f64 || h == 1));
        prop_assert!(p.s_w >= 1.0 && (p.s_w < w as f64 || w == 1));
    }
}
