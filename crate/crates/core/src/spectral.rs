//! Unitary 2D Fourier and Hartley transforms in a DC-centered layout, and
//! centered spectrum cropping.
//!
//! Every transform acts on the last two axes and treats the leading axes as
//! independent planes. Spectra are DC-centered: position `p` along an axis of
//! length `n` holds frequency `k = p - n/2` (integer division), so the
//! retained frequencies are `[-floor(n/2), ceil(n/2) - 1]`.
//!
//! With unitary scaling, [`idft2`] is exactly the adjoint of [`dft2`] and
//! [`idht2`] is the transpose of [`dht2`], which is what the pooling layers
//! use for their backward passes.

use std::any::{Any, TypeId};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// DC-centered (or spatial, when `centered` is false) complex planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum<T> {
    shape: Vec<usize>,
    data: Vec<Complex<T>>,
    centered: bool,
}

impl<T: Scalar> ComplexSpectrum<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<Complex<T>>, centered: bool) -> Result<Self> {
        let shape = shape.into();
        if shape.len() < 2 || shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "spectrum",
                format!("shape {shape:?} does not hold {} values", data.len()),
            ));
        }
        Ok(ComplexSpectrum { shape, data, centered })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        ComplexSpectrum {
            shape,
            data: vec![Complex::new(T::zero(), T::zero()); n],
            centered: true,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// `(planes, H, W)`.
    pub fn plane_dims(&self) -> (usize, usize, usize) {
        plane_dims(&self.shape)
    }

    pub fn re(&self) -> Tensor<T> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|c| c.re).collect()).expect("same shape")
    }

    pub fn im(&self) -> Tensor<T> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|c| c.im).collect()).expect("same shape")
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt()
    }

    /// Value at centered frequency `(kh, kw)` of a plane.
    pub fn at_frequency(&self, plane: usize, kh: isize, kw: isize) -> Complex<T> {
        let (_, h, w) = self.plane_dims();
        let p = (kh + (h / 2) as isize) as usize;
        let q = (kw + (w / 2) as isize) as usize;
        self.data[plane * h * w + p * w + q]
    }
}

fn plane_dims(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape.len();
    let (h, w) = (shape[n - 2], shape[n - 1]);
    (shape[..n - 2].iter().product(), h, w)
}

fn check_spatial<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    if x.ndim() < 2 || x.shape()[x.ndim() - 2] == 0 || x.shape()[x.ndim() - 1] == 0 {
        return Err(Error::shape(
            op,
            format!("need [..., H, W] with H, W >= 1, got {:?}", x.shape()),
        ));
    }
    Ok(plane_dims(x.shape()))
}

/// Cached FFT plans keyed by element type, length and direction.
type PlanCache = HashMap<(TypeId, usize, bool), Box<dyn Any>>;

thread_local! {
    static PLANS: RefCell<PlanCache> = RefCell::new(HashMap::new());
}

fn plan<T: Scalar>(len: usize, inverse: bool) -> Arc<dyn Fft<T>> {
    PLANS.with(|plans| {
        let mut plans = plans.borrow_mut();
        let entry = plans.entry((TypeId::of::<T>(), len, inverse)).or_insert_with(|| {
            let mut planner = FftPlanner::<T>::new();
            let fft = if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            };
            Box::new(fft)
        });
        Arc::clone(
            entry
                .downcast_ref::<Arc<dyn Fft<T>>>()
                .expect("plan cache keyed by type"),
        )
    })
}

/// In-place unnormalized 2D FFT of contiguous `h x w` planes.
fn fft2_planes<T: Scalar>(data: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    let row = plan::<T>(w, inverse);
    let col = plan::<T>(h, inverse);
    let mut scratch =
        vec![Complex::new(T::zero(), T::zero()); row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
    row.process_with_scratch(data, &mut scratch);
    let mut t = vec![Complex::new(T::zero(), T::zero()); h * w];
    for plane in data.chunks_mut(h * w) {
        for i in 0..h {
            for j in 0..w {
                t[j * h + i] = plane[i * w + j];
            }
        }
        col.process_with_scratch(&mut t, &mut scratch);
        for i in 0..h {
            for j in 0..w {
                plane[i * w + j] = t[j * h + i];
            }
        }
    }
}

/// Moves raw FFT order into centered order (`forward`) or back.
fn shift_planes<E: Copy>(data: &[E], h: usize, w: usize, forward: bool) -> Vec<E> {
    let mut out = data.to_vec();
    let (sh, sw) = if forward {
        (h / 2, w / 2)
    } else {
        (h - h / 2, w - w / 2)
    };
    for (src, dst) in data.chunks(h * w).zip(out.chunks_mut(h * w)) {
        for i in 0..h {
            let di = (i + sh) % h;
            for j in 0..w {
                dst[di * w + (j + sw) % w] = src[i * w + j];
            }
        }
    }
    out
}

fn unitary_scale<T: Scalar>(h: usize, w: usize) -> T {
    T::cast(1.0 / ((h * w) as f64).sqrt())
}

/// Unitary 2D DFT of a real tensor, DC-centered.
pub fn dft2<T: Scalar>(x: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    let (_, h, w) = check_spatial(x, "dft2")?;
    let mut data: Vec<Complex<T>> = x.data().iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft2_planes(&mut data, h, w, false);
    let s = unitary_scale::<T>(h, w);
    for c in &mut data {
        *c *= s;
    }
    Ok(ComplexSpectrum {
        shape: x.shape().to_vec(),
        data: shift_planes(&data, h, w, true),
        centered: true,
    })
}

/// Unitary inverse DFT of a centered spectrum, keeping the complex result.
pub fn idft2_complex<T: Scalar>(y: &ComplexSpectrum<T>) -> Result<ComplexSpectrum<T>> {
    if !y.centered {
        return Err(Error::Contract("idft2 expects a DC-centered spectrum".into()));
    }
    let (_, h, w) = y.plane_dims();
    let mut data = shift_planes(&y.data, h, w, false);
    fft2_planes(&mut data, h, w, true);
    let s = unitary_scale::<T>(h, w);
    for c in &mut data {
        *c *= s;
    }
    Ok(ComplexSpectrum {
        shape: y.shape.clone(),
        data,
        centered: false,
    })
}

/// Real part of the unitary inverse DFT. Lossy when `y` is not Hermitian.
pub fn idft2<T: Scalar>(y: &ComplexSpectrum<T>) -> Result<Tensor<T>> {
    Ok(idft2_complex(y)?.re())
}

/// Unitary 2D Hartley transform in raw (uncentered) layout:
/// `Re(DFT(x)) - Im(DFT(x))`. Its own inverse.
pub fn dht2_raw<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = check_spatial(x, "dht2")?;
    let mut data: Vec<Complex<T>> = x.data().iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft2_planes(&mut data, h, w, false);
    let s = unitary_scale::<T>(h, w);
    Tensor::new(x.shape().to_vec(), data.iter().map(|c| (c.re - c.im) * s).collect())
}

/// Unitary 2D Hartley transform, DC-centered.
pub fn dht2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = check_spatial(x, "dht2")?;
    let raw = dht2_raw(x)?;
    Tensor::new(x.shape().to_vec(), shift_planes(raw.data(), h, w, true))
}

/// Inverse (and transpose) of [`dht2`]: takes a centered Hartley spectrum back
/// to the spatial domain.
pub fn idht2<T: Scalar>(y: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = check_spatial(y, "idht2")?;
    let raw = Tensor::new(y.shape().to_vec(), shift_planes(y.data(), h, w, false))?;
    dht2_raw(&raw)
}

/// First retained position along an axis of length `n` when keeping `m`
/// centered frequencies.
pub fn crop_offset(n: usize, m: usize) -> usize {
    n / 2 - m / 2
}

fn check_crop(shape: &[usize], h: usize, w: usize, op: &'static str) -> Result<()> {
    let (_, hh, ww) = plane_dims(shape);
    if h == 0 || w == 0 || h > hh || w > ww {
        return Err(Error::Bounds {
            index: format!("{op}({h}, {w})"),
            msg: format!("crop size must lie in [1, {hh}] x [1, {ww}]"),
        });
    }
    Ok(())
}

fn crop_planes<E: Copy>(data: &[E], hh: usize, ww: usize, h: usize, w: usize) -> Vec<E> {
    let (oh, ow) = (crop_offset(hh, h), crop_offset(ww, w));
    let mut out = Vec::with_capacity(data.len() / (hh * ww) * h * w);
    for plane in data.chunks(hh * ww) {
        for i in 0..h {
            let start = (oh + i) * ww + ow;
            out.extend_from_slice(&plane[start..start + w]);
        }
    }
    out
}

fn pad_planes<E: Copy>(data: &[E], h: usize, w: usize, hh: usize, ww: usize, zero: E) -> Vec<E> {
    let (oh, ow) = (crop_offset(hh, h), crop_offset(ww, w));
    let mut out = vec![zero; data.len() / (h * w) * hh * ww];
    for (src, dst) in data.chunks(h * w).zip(out.chunks_mut(hh * ww)) {
        for i in 0..h {
            let start = (oh + i) * ww + ow;
            dst[start..start + w].copy_from_slice(&src[i * w..(i + 1) * w]);
        }
    }
    out
}

fn with_plane_size(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let n = s.len();
    s[n - 2] = h;
    s[n - 1] = w;
    s
}

/// Keeps the `h x w` window of frequencies centered on DC.
pub fn center_crop_spectrum<T: Scalar>(y: &ComplexSpectrum<T>, h: usize, w: usize) -> Result<ComplexSpectrum<T>> {
    if !y.centered {
        return Err(Error::Contract("crop expects a DC-centered spectrum".into()));
    }
    check_crop(&y.shape, h, w, "center_crop_spectrum")?;
    let (_, hh, ww) = y.plane_dims();
    Ok(ComplexSpectrum {
        shape: with_plane_size(&y.shape, h, w),
        data: crop_planes(&y.data, hh, ww, h, w),
        centered: true,
    })
}

/// Real-valued counterpart of [`center_crop_spectrum`] for Hartley spectra.
pub fn center_crop<T: Scalar>(y: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    check_spatial(y, "center_crop")?;
    check_crop(y.shape(), h, w, "center_crop")?;
    let (_, hh, ww) = plane_dims(y.shape());
    Tensor::new(with_plane_size(y.shape(), h, w), crop_planes(y.data(), hh, ww, h, w))
}

/// Adjoint of [`center_crop_spectrum`]: zero-pads back to `hh x ww`.
pub fn zero_pad_spectrum<T: Scalar>(y: &ComplexSpectrum<T>, hh: usize, ww: usize) -> Result<ComplexSpectrum<T>> {
    let (_, h, w) = y.plane_dims();
    if h > hh || w > ww {
        return Err(Error::shape(
            "zero_pad_spectrum",
            format!("cannot pad {h}x{w} into {hh}x{ww}"),
        ));
    }
    Ok(ComplexSpectrum {
        shape: with_plane_size(&y.shape, hh, ww),
        data: pad_planes(&y.data, h, w, hh, ww, Complex::new(T::zero(), T::zero())),
        centered: y.centered,
    })
}

/// Adjoint of [`center_crop`].
pub fn zero_pad<T: Scalar>(y: &Tensor<T>, hh: usize, ww: usize) -> Result<Tensor<T>> {
    let (_, h, w) = check_spatial(y, "zero_pad")?;
    if h > hh || w > ww {
        return Err(Error::shape("zero_pad", format!("cannot pad {h}x{w} into {hh}x{ww}")));
    }
    Tensor::new(
        with_plane_size(y.shape(), hh, ww),
        pad_planes(y.data(), h, w, hh, ww, T::zero()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_has_only_dc() {
        let x = Tensor::<f64>::full(vec![4, 4], 1.0);
        let y = dft2(&x).unwrap();
        for kh in -2..2 {
            for kw in -2..2 {
                let v = y.at_frequency(0, kh, kw);
                let expected = if kh == 0 && kw == 0 { 4.0 } else { 0.0 };
                assert!((v.re - expected).abs() < 1e-12 && v.im.abs() < 1e-12);
            }
        }
        let c = 2.5;
        let hy = dht2(&Tensor::<f64>::full(vec![4, 4], c)).unwrap();
        for (i, &v) in hy.data().iter().enumerate() {
            let expected = if i == 2 * 4 + 2 { 4.0 * c } else { 0.0 };
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = Tensor::<f64>::zeros(vec![4, 4]);
        x.data_mut()[0] = 1.0;
        let y = dft2(&x).unwrap();
        for c in y.data() {
            assert!((c.norm() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant() {
        let mut y = ComplexSpectrum::<f64>::zeros(vec![3, 5]);
        y.data_mut()[5 + 2] = Complex::new(3.0, 0.0);
        let x = idft2(&y).unwrap();
        let expected = 3.0 / 15f64.sqrt();
        assert!(x.data().iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn crop_extremes() {
        let x = Tensor::<f64>::from_f64(vec![4, 4], &(0..16).map(f64::from).collect::<Vec<_>>()).unwrap();
        let y = dft2(&x).unwrap();
        assert_eq!(center_crop_spectrum(&y, 4, 4).unwrap(), y);
        let dc = center_crop_spectrum(&y, 1, 1).unwrap();
        assert_eq!(dc.data(), &[y.at_frequency(0, 0, 0)]);
        assert!(matches!(center_crop_spectrum(&y, 5, 1), Err(Error::Bounds { .. })));
        assert!(matches!(center_crop_spectrum(&y, 2, 0), Err(Error::Bounds { .. })));
    }

    #[test]
    fn even_crop_keeps_extra_negative_frequency() {
        // Tag each centered position with its frequency pair.
        let (hh, ww) = (6, 7);
        let data: Vec<Complex<f64>> = (0..hh * ww)
            .map(|i| {
                let kh = (i / ww) as f64 - (hh / 2) as f64;
                let kw = (i % ww) as f64 - (ww / 2) as f64;
                Complex::new(kh, kw)
            })
            .collect();
        let y = ComplexSpectrum::new(vec![hh, ww], data, true).unwrap();
        let c = center_crop_spectrum(&y, 4, 3).unwrap();
        let kh: Vec<f64> = c.data().iter().step_by(3).map(|z| z.re).collect();
        let kw: Vec<f64> = c.data()[..3].iter().map(|z| z.im).collect();
        assert_eq!(kh, vec![-2.0, -1.0, 0.0, 1.0]);
        assert_eq!(kw, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn pad_is_adjoint_of_crop() {
        let a = Tensor::<f64>::from_f64(
            vec![2, 5, 6],
            &(0..60).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>(),
        )
        .unwrap();
        let b = Tensor::<f64>::from_f64(
            vec![2, 3, 4],
            &(0..24).map(|i| (i as f64 * 0.91).cos()).collect::<Vec<_>>(),
        )
        .unwrap();
        let lhs: f64 = center_crop(&a, 3, 4)
            .unwrap()
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| x * y)
            .sum();
        let rhs: f64 = a
            .data()
            .iter()
            .zip(zero_pad(&b, 5, 6).unwrap().data())
            .map(|(x, y)| x * y)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_centered_input() {
        let y = ComplexSpectrum::<f64>::new(vec![2, 2], vec![Complex::new(0.0, 0.0); 4], false).unwrap();
        assert!(matches!(idft2(&y), Err(Error::Contract(_))));
    }
}
