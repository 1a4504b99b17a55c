//! Brute-force references and fixtures for the integration tests. The
//! references are written from the defining sums with explicit index
//! bookkeeping and share no code with the library.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Centered frequency held by position `p` of an axis of length `n`.
pub fn freq(p: usize, n: usize) -> i64 {
    p as i64 - (n / 2) as i64
}

/// Position of centered frequency `k` on an axis of length `n`.
pub fn pos(k: i64, n: usize) -> usize {
    (k + (n / 2) as i64) as usize
}

fn phase(k: i64, i: usize, n: usize) -> f64 {
    2.0 * PI * (k as f64) * (i as f64) / n as f64
}

/// Unitary forward DFT of one `h x w` plane, centered output, `(re, im)`.
pub fn dft_plane(x: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![(0.0, 0.0); h * w];
    for p in 0..h {
        for q in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let t = phase(freq(p, h), i, h) + phase(freq(q, w), j, w);
                    re += x[i * w + j] * t.cos();
                    im -= x[i * w + j] * t.sin();
                }
            }
            out[p * w + q] = (re * scale, im * scale);
        }
    }
    out
}

/// Unitary inverse DFT of one centered `h x w` plane.
pub fn idft_plane(y: &[(f64, f64)], h: usize, w: usize) -> Vec<(f64, f64)> {
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for p in 0..h {
                for q in 0..w {
                    let t = phase(freq(p, h), i, h) + phase(freq(q, w), j, w);
                    let (a, b) = y[p * w + q];
                    re += a * t.cos() - b * t.sin();
                    im += a * t.sin() + b * t.cos();
                }
            }
            out[i * w + j] = (re * scale, im * scale);
        }
    }
    out
}

/// Unitary Hartley transform with the `cas` kernel, centered output. The
/// same sum read with centered input and spatial output is its inverse.
pub fn dht_plane(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0; h * w];
    for p in 0..h {
        for q in 0..w {
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..w {
                    let t = phase(freq(p, h), i, h) + phase(freq(q, w), j, w);
                    s += x[i * w + j] * (t.cos() + t.sin());
                }
            }
            out[p * w + q] = s * scale;
        }
    }
    out
}

pub fn idht_plane(y: &[f64], h: usize, w: usize) -> Vec<f64> {
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for p in 0..h {
                for q in 0..w {
                    let t = phase(freq(p, h), i, h) + phase(freq(q, w), j, w);
                    s += y[p * w + q] * (t.cos() + t.sin());
                }
            }
            out[i * w + j] = s * scale;
        }
    }
    out
}

/// Keeps the frequencies an `h x w` centered grid can hold, looked up by
/// frequency value rather than by offset.
pub fn crop_plane<E: Copy>(y: &[E], hh: usize, ww: usize, h: usize, w: usize) -> Vec<E> {
    let mut out = Vec::with_capacity(h * w);
    for p in 0..h {
        for q in 0..w {
            out.push(y[pos(freq(p, h), hh) * ww + pos(freq(q, w), ww)]);
        }
    }
    out
}

pub fn spectral_pool_plane(x: &[f64], hh: usize, ww: usize, h: usize, w: usize) -> Vec<f64> {
    let y = dht_plane(x, hh, ww);
    idht_plane(&crop_plane(&y, hh, ww, h, w), h, w)
}

/// One axis of the smoothed box, straight from the clamp formula. The floor
/// on `r` applies to both occurrences, so a hard box keeps its edge bin.
pub fn mask_1d(k: i64, n: usize, s: f64, r: f64) -> f64 {
    let r = r.max(1e-6);
    ((n as f64 / (2.0 * s) + r - k.abs() as f64) / r).clamp(0.0, 1.0)
}

pub fn crop_len(n: usize, s: f64, r: f64) -> usize {
    ((n as f64 / s + 2.0 * r).round() as usize).min(n)
}

pub fn diffstride_plane(x: &[f64], hh: usize, ww: usize, s_h: f64, s_w: f64, r: f64) -> Vec<f64> {
    let mut y = dft_plane(x, hh, ww);
    for p in 0..hh {
        for q in 0..ww {
            let m = mask_1d(freq(p, hh), hh, s_h, r) * mask_1d(freq(q, ww), ww, s_w, r);
            let c = &mut y[p * ww + q];
            *c = (c.0 * m, c.1 * m);
        }
    }
    let (h, w) = (crop_len(hh, s_h, r), crop_len(ww, s_w, r));
    idft_plane(&crop_plane(&y, hh, ww, h, w), h, w)
        .into_iter()
        .map(|c| c.0)
        .collect()
}

/// Applies a per-plane map to every `[.., H, W]` plane of `x`.
pub fn per_plane(x: &[f64], hh: usize, ww: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    x.chunks(hh * ww).flat_map(f).collect()
}

/// Direct six-loop cross-correlation with symmetric zero padding `pad`.
#[allow(clippy::too_many_arguments)]
pub fn conv_naive(
    x: &[f64],
    (n, c_in, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    (c_out, k): (usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * c_out * ho * wo];
    for b in 0..n {
        for o in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let mut s = bias.map_or(0.0, |bv| bv[o]);
                    for c in 0..c_in {
                        for di in 0..k {
                            for dj in 0..k {
                                let (yi, xj) = (
                                    (i * stride + di) as i64 - pad as i64,
                                    (j * stride + dj) as i64 - pad as i64,
                                );
                                if yi < 0 || xj < 0 || yi >= h as i64 || xj >= w as i64 {
                                    continue;
                                }
                                s += x[((b * c_in + c) * h + yi as usize) * w + xj as usize]
                                    * weight[((o * c_in + c) * k + di) * k + dj];
                            }
                        }
                    }
                    out[((b * c_out + o) * ho + i) * wo + j] = s;
                }
            }
        }
    }
    (out, ho, wo)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn l2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Writes a full-size CIFAR-10 binary release into `dir`: five train files
/// and one test file of 10 000 records, labels round-robin. The first
/// `synthetic.0` train and `synthetic.1` test records hold generated
/// class-dependent images, the rest random bytes.
pub fn write_cifar10(dir: &std::path::Path, synthetic: (usize, usize), seed: u64) {
    use std::io::Write;
    let pixels = 3 * 32 * 32;
    let images = |n: usize, s: u64| {
        if n == 0 {
            Vec::new()
        } else {
            hybridpool::data::synthetic_dataset(s, n, 10, 32)
                .unwrap()
                .pixels()
                .to_vec()
        }
    };
    let train_px = images(synthetic.0, seed);
    let val_px = images(synthetic.1, seed ^ 0xABCD);
    let mut r = rng(seed);
    let mut write = |name: &str, first: usize, head: &[u8]| {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name)).unwrap());
        let mut noise = vec![0u8; pixels];
        for i in 0..10_000 {
            let global = first + i;
            f.write_all(&[(global % 10) as u8]).unwrap();
            if (global + 1) * pixels <= head.len() {
                f.write_all(&head[global * pixels..(global + 1) * pixels]).unwrap();
            } else {
                r.fill(&mut noise[..]);
                f.write_all(&noise).unwrap();
            }
        }
    };
    for b in 0..5 {
        write(&format!("data_batch_{}.bin", b + 1), b * 10_000, &train_px);
    }
    write("test_batch.bin", 0, &val_px);
}

/// Full-size CIFAR-100 release of random images: fine label `i % 100`,
/// coarse label `fine / 5`.
pub fn write_cifar100(dir: &std::path::Path, seed: u64) {
    use std::io::Write;
    let mut r = rng(seed);
    for (name, n) in [("train.bin", 50_000), ("test.bin", 10_000)] {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name)).unwrap());
        let mut noise = vec![0u8; 3072];
        for i in 0..n {
            let fine = (i % 100) as u8;
            r.fill(&mut noise[..]);
            f.write_all(&[fine / 5, fine]).unwrap();
            f.write_all(&noise).unwrap();
        }
    }
}
