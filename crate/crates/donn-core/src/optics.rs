//! Scalar-diffraction primitives: paraxial free-space propagation through a
//! precomputed frequency-domain transfer function, elementwise complex
//! modulation, and detector-region energy readout. Every forward operation
//! has an explicit adjoint (vector-Jacobian product).
//!
//! Cotangent convention: for a real loss `L` and a complex intermediate
//! `x = a + ib`, the cotangent carried backwards is `g_x = dL/da + i dL/db`.
//! All vjps in this crate use this convention, so gradients of real
//! parameters come out as plain partial derivatives.

use ndarray::Array2;
use num_complex::Complex;

use crate::error::{DonnError, Result};
use crate::fft::Fft2;
use crate::field::ComplexField;
use crate::real::Real;

/// Free-space propagation geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    /// Laser wavelength in meters.
    pub wavelength: f64,
    /// Plane-to-plane distance in meters.
    pub distance: f64,
    /// Grid size N (fields are N x N).
    pub grid_size: usize,
    /// Physical size of one grid cell in meters.
    pub pixel_pitch: f64,
    /// Zero-padding factor before the FFT; 1 keeps the plain emulation
    /// behavior, 2 suppresses circular wraparound.
    pub pad_factor: usize,
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0) {
            return Err(DonnError::NonPositiveWavelength);
        }
        if !(self.distance > 0.0) {
            return Err(DonnError::NonPositiveDistance);
        }
        if self.grid_size < 2 {
            return Err(DonnError::Config(format!(
                "grid size must be >= 2, got {}",
                self.grid_size
            )));
        }
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite()) {
            return Err(DonnError::Config(format!(
                "pixel pitch must be positive, got {}",
                self.pixel_pitch
            )));
        }
        if self.pad_factor < 1 {
            return Err(DonnError::Config("pad factor must be >= 1".into()));
        }
        Ok(())
    }

    /// Free-space wavenumber `k = 2 pi / lambda`.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }
}

/// Precomputed frequency-domain propagation kernel for one distance.
///
/// `H(a, b, z) = exp(i k z) * exp(-i pi lambda z (a^2 + b^2))`, sampled on
/// the signed FFT frequency grid `a_u = u / (M * pitch)` with
/// `M = N * pad_factor`. Unimodular by construction.
#[derive(Debug, Clone)]
pub struct TransferFunction<T: Real> {
    h: Array2<Complex<T>>,
    n: usize,
    m: usize,
    pad_offset: usize,
    pixel_pitch: f64,
    distance: f64,
    fft: Fft2<T>,
}

impl<T: Real> TransferFunction<T> {
    #[inline]
    pub fn grid_size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn padded_size(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn distance(&self) -> f64 {
        self.distance
    }

    #[inline]
    pub fn kernel(&self) -> &Array2<Complex<T>> {
        &self.h
    }
}

/// Signed FFT index for bin `u` of an `m`-point transform.
#[inline]
fn signed_index(u: usize, m: usize) -> i64 {
    if u < m.div_ceil(2) {
        u as i64
    } else {
        u as i64 - m as i64
    }
}

/// Samples the analytic Fresnel transfer function on the FFT frequency grid.
///
/// The phase is accumulated and wrapped in f64 before narrowing to `T`; the
/// plane-wave term `k z` alone is ~1e6 rad for visible-light geometries and
/// would lose all precision if reduced in f32.
pub fn make_transfer_function<T: Real>(cfg: &PropagationConfig) -> Result<TransferFunction<T>> {
    cfg.validate()?;
    let n = cfg.grid_size;
    let m = n * cfg.pad_factor;
    let two_pi = 2.0 * std::f64::consts::PI;
    // k z mod 2 pi, via the fractional part of z / lambda.
    let kz_wrapped = two_pi * (cfg.distance / cfg.wavelength).fract();
    let lz = cfg.wavelength * cfg.distance;
    let freq_step = 1.0 / (m as f64 * cfg.pixel_pitch);

    let mut h = Array2::zeros((m, m));
    for u in 0..m {
        let alpha = signed_index(u, m) as f64 * freq_step;
        for v in 0..m {
            let beta = signed_index(v, m) as f64 * freq_step;
            let chirp = std::f64::consts::PI * lz * (alpha * alpha + beta * beta);
            let phase = (kz_wrapped - chirp).rem_euclid(two_pi);
            h[[u, v]] = Complex::new(T::of(phase.cos()), T::of(phase.sin()));
        }
    }

    Ok(TransferFunction {
        h,
        n,
        m,
        pad_offset: (m - n) / 2,
        pixel_pitch: cfg.pixel_pitch,
        distance: cfg.distance,
        fft: Fft2::new(m),
    })
}

fn check_compat<T: Real>(f: &ComplexField<T>, tf: &TransferFunction<T>) -> Result<()> {
    if f.n() != tf.n {
        return Err(DonnError::ShapeMismatch(format!(
            "field is {}x{} but transfer function expects {}x{}",
            f.n(),
            f.n(),
            tf.n,
            tf.n
        )));
    }
    if f.pixel_pitch() != tf.pixel_pitch {
        return Err(DonnError::ShapeMismatch(format!(
            "field pitch {} differs from transfer function pitch {}",
            f.pixel_pitch(),
            tf.pixel_pitch
        )));
    }
    Ok(())
}

fn propagate_with_kernel<T: Real>(
    f: &ComplexField<T>,
    tf: &TransferFunction<T>,
    conjugate: bool,
) -> Result<ComplexField<T>> {
    check_compat(f, tf)?;
    let n = tf.n;
    let m = tf.m;
    let o = tf.pad_offset;

    let mut buf = if m == n {
        f.data().clone()
    } else {
        let mut padded = Array2::zeros((m, m));
        padded
            .slice_mut(ndarray::s![o..o + n, o..o + n])
            .assign(f.data());
        padded
    };

    tf.fft.forward(&mut buf);
    if conjugate {
        for (z, h) in buf.iter_mut().zip(tf.h.iter()) {
            *z *= h.conj();
        }
    } else {
        for (z, h) in buf.iter_mut().zip(tf.h.iter()) {
            *z *= *h;
        }
    }
    tf.fft.inverse(&mut buf);

    let out = if m == n {
        buf
    } else {
        buf.slice(ndarray::s![o..o + n, o..o + n]).to_owned()
    };
    Ok(ComplexField::from_parts(out, f.pixel_pitch()))
}

/// Fresnel free-space propagation: `ifft2(fft2(f) * H)`, with centered
/// zero-padding to `M x M` and cropping back when `pad_factor > 1`.
pub fn propagate<T: Real>(f: &ComplexField<T>, tf: &TransferFunction<T>) -> Result<ComplexField<T>> {
    propagate_with_kernel(f, tf, false)
}

/// Adjoint of [`propagate`]: the same transform with `conj(H)`. Satisfies
/// `<propagate(x), y> == <x, propagate_vjp(y)>` for all fields.
pub fn propagate_vjp<T: Real>(
    g_out: &ComplexField<T>,
    tf: &TransferFunction<T>,
) -> Result<ComplexField<T>> {
    propagate_with_kernel(g_out, tf, true)
}

fn check_same_shape<T: Real>(f: &ComplexField<T>, m: &Array2<Complex<T>>) -> Result<()> {
    if f.data().dim() != m.dim() {
        return Err(DonnError::ShapeMismatch(format!(
            "field {:?} vs modulation {:?}",
            f.data().dim(),
            m.dim()
        )));
    }
    Ok(())
}

/// Elementwise complex modulation `out = f * m`.
pub fn modulate<T: Real>(f: &ComplexField<T>, m: &Array2<Complex<T>>) -> Result<ComplexField<T>> {
    check_same_shape(f, m)?;
    let mut out = f.data().clone();
    for (z, w) in out.iter_mut().zip(m.iter()) {
        *z *= *w;
    }
    Ok(ComplexField::from_parts(out, f.pixel_pitch()))
}

/// Adjoint of [`modulate`]: `g_f = g_out * conj(m)`, `g_m = g_out * conj(f)`.
pub fn modulate_vjp<T: Real>(
    g_out: &ComplexField<T>,
    f: &ComplexField<T>,
    m: &Array2<Complex<T>>,
) -> Result<(ComplexField<T>, Array2<Complex<T>>)> {
    check_same_shape(f, m)?;
    check_same_shape(g_out, m)?;
    let mut g_f = g_out.data().clone();
    for (z, w) in g_f.iter_mut().zip(m.iter()) {
        *z *= w.conj();
    }
    let mut g_m = g_out.data().clone();
    for (z, w) in g_m.iter_mut().zip(f.data().iter()) {
        *z *= w.conj();
    }
    Ok((ComplexField::from_parts(g_f, f.pixel_pitch()), g_m))
}

/// Axis-aligned detector region in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    fn overlaps(&self, other: &Region) -> bool {
        self.row < other.row + other.height
            && other.row < self.row + self.height
            && self.col < other.col + other.width
            && other.col < self.col + self.width
    }
}

/// Ten disjoint readout rectangles on the output plane, one per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorLayout {
    regions: Vec<Region>,
}

impl DetectorLayout {
    pub fn new(regions: Vec<Region>, grid_size: usize) -> Result<Self> {
        if regions.is_empty() {
            return Err(DonnError::Config("detector layout has no regions".into()));
        }
        for (i, r) in regions.iter().enumerate() {
            if r.height == 0 || r.width == 0 {
                return Err(DonnError::RegionOutOfBounds(format!("region {i} is empty")));
            }
            if r.row + r.height > grid_size || r.col + r.width > grid_size {
                return Err(DonnError::RegionOutOfBounds(format!(
                    "region {i} ({}..{} x {}..{}) exceeds the {grid_size}x{grid_size} plane",
                    r.row,
                    r.row + r.height,
                    r.col,
                    r.col + r.width
                )));
            }
        }
        for i in 0..regions.len() {
            for j in (i + 1)..regions.len() {
                if regions[i].overlaps(&regions[j]) {
                    return Err(DonnError::Config(format!(
                        "detector regions {i} and {j} overlap"
                    )));
                }
            }
        }
        Ok(Self { regions })
    }

    /// Standard layout: ten square regions in two rows of five, spread
    /// evenly over an `n x n` plane. At `n = 200` this gives the default
    /// ten 20x20 regions; tiny planes (n >= 8) fall back to 1x1 regions.
    pub fn evenly_spaced(n: usize) -> Result<Self> {
        let side = (n / 10).max(1);
        if n < 8 {
            return Err(DonnError::Config(format!(
                "plane of size {n} is too small for ten detector regions"
            )));
        }
        let mut regions = Vec::with_capacity(10);
        for (r, row_center) in [(n / 3), (2 * n / 3)].into_iter().enumerate() {
            for c in 0..5 {
                let col_center = (2 * c + 1) * n / 10;
                regions.push(Region {
                    row: row_center - side / 2,
                    col: col_center - side / 2,
                    height: side,
                    width: side,
                });
                let _ = r;
            }
        }
        Self::new(regions, n)
    }

    #[inline]
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    #[inline]
    pub fn class_count(&self) -> usize {
        self.regions.len()
    }

    pub fn validate_against(&self, grid_size: usize) -> Result<()> {
        Self::new(self.regions.clone(), grid_size).map(|_| ())
    }
}

/// Summed intensity per detector region: `out[c] = sum_{(i,j) in c} |f|^2`.
pub fn detect<T: Real>(f: &ComplexField<T>, layout: &DetectorLayout) -> Result<Vec<T>> {
    layout.validate_against(f.n())?;
    let data = f.data();
    let mut out = Vec::with_capacity(layout.regions.len());
    for r in &layout.regions {
        let mut acc = T::zero();
        for i in r.row..r.row + r.height {
            for j in r.col..r.col + r.width {
                acc += data[[i, j]].norm_sqr();
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Adjoint of [`detect`]: `g_f[i,j] = 2 * g_out[c] * f[i,j]` inside region
/// `c`, zero elsewhere.
pub fn detect_vjp<T: Real>(
    g_out: &[T],
    f: &ComplexField<T>,
    layout: &DetectorLayout,
) -> Result<ComplexField<T>> {
    layout.validate_against(f.n())?;
    if g_out.len() != layout.regions.len() {
        return Err(DonnError::ShapeMismatch(format!(
            "cotangent has {} entries for {} regions",
            g_out.len(),
            layout.regions.len()
        )));
    }
    let mut g = Array2::zeros((f.n(), f.n()));
    let two = T::of(2.0);
    for (r, &gc) in layout.regions.iter().zip(g_out.iter()) {
        let s = two * gc;
        for i in r.row..r.row + r.height {
            for j in r.col..r.col + r.width {
                let z = f.data()[[i, j]];
                g[[i, j]] = Complex::new(z.re * s, z.im * s);
            }
        }
    }
    Ok(ComplexField::from_parts(g, f.pixel_pitch()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, pad: usize) -> PropagationConfig {
        PropagationConfig {
            wavelength: 532e-9,
            distance: 0.2794,
            grid_size: n,
            pixel_pitch: 36e-6,
            pad_factor: pad,
        }
    }

    #[test]
    fn transfer_function_is_unimodular() {
        let tf = make_transfer_function::<f64>(&cfg(16, 1)).unwrap();
        let worst = tf
            .kernel()
            .iter()
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-12, "max | |H| - 1 | = {worst}");
    }

    #[test]
    fn rejects_non_positive_distance_and_wavelength() {
        let mut c = cfg(16, 1);
        c.distance = 0.0;
        assert!(matches!(
            make_transfer_function::<f64>(&c),
            Err(DonnError::NonPositiveDistance)
        ));
        let mut c = cfg(16, 1);
        c.wavelength = -1.0;
        assert!(matches!(
            make_transfer_function::<f64>(&c),
            Err(DonnError::NonPositiveWavelength)
        ));
    }

    #[test]
    fn constant_field_picks_up_the_dc_phase() {
        // Only the DC bin is populated, so out = c * H[0,0] = c * exp(ikz).
        let c = cfg(8, 1);
        let tf = make_transfer_function::<f64>(&c).unwrap();
        let f = ComplexField::constant(8, Complex::new(0.7, -0.1), c.pixel_pitch).unwrap();
        let out = propagate(&f, &tf).unwrap();
        let expected = f.data()[[0, 0]] * tf.kernel()[[0, 0]];
        for z in out.data().iter() {
            assert!((z - expected).norm() < 1e-12);
        }
        let kz = c.wavenumber() * c.distance;
        let dc = Complex::new(kz.cos(), kz.sin());
        assert!((tf.kernel()[[0, 0]] - dc).norm() < 1e-9);
    }

    #[test]
    fn energy_is_conserved_without_padding() {
        let c = cfg(16, 1);
        let tf = make_transfer_function::<f64>(&c).unwrap();
        let mut rng = 1u64;
        let mut next = || {
            // xorshift, deterministic and dependency-free
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng as f64 / u64::MAX as f64) - 0.5
        };
        let data = Array2::from_shape_fn((16, 16), |_| Complex::new(next(), next()));
        let f = ComplexField::new(data, c.pixel_pitch).unwrap();
        let out = propagate(&f, &tf).unwrap();
        let rel = (out.energy() - f.energy()).abs() / f.energy();
        assert!(rel < 1e-12, "energy drift {rel}");
    }

    #[test]
    fn padded_propagation_crops_back() {
        let c = cfg(10, 2);
        let tf = make_transfer_function::<f64>(&c).unwrap();
        let f = ComplexField::constant(10, Complex::new(1.0, 0.0), c.pixel_pitch).unwrap();
        let out = propagate(&f, &tf).unwrap();
        assert_eq!(out.n(), 10);
    }

    #[test]
    fn modulate_identity_and_pure_phase() {
        let pitch = 36e-6;
        let f = ComplexField::constant(4, Complex::new(0.3, 0.4), pitch).unwrap();
        let ones = Array2::from_elem((4, 4), Complex::new(1.0, 0.0));
        let out = modulate(&f, &ones).unwrap();
        assert_eq!(out.data(), f.data());

        let phase = Array2::from_elem((4, 4), Complex::from_polar(1.0, 1.1));
        let out = modulate(&f, &phase).unwrap();
        for (a, b) in out.data().iter().zip(f.data().iter()) {
            let diff: f64 = a.norm() - b.norm();
            assert!(diff.abs() < 1e-14);
        }
    }

    #[test]
    fn modulate_arithmetic_example() {
        // 1 * 0.5 e^{i pi} = -0.5
        let pitch = 36e-6;
        let f = ComplexField::constant(4, Complex::new(1.0, 0.0), pitch).unwrap();
        let m = Array2::from_elem((4, 4), Complex::from_polar(0.5, std::f64::consts::PI));
        let out = modulate(&f, &m).unwrap();
        for z in out.data().iter() {
            assert!((z - Complex::new(-0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn modulate_vjp_special_cases() {
        let pitch = 36e-6;
        let f = ComplexField::constant(4, Complex::new(0.2, -0.7), pitch).unwrap();
        let g_out = ComplexField::constant(4, Complex::new(1.5, 0.25), pitch).unwrap();
        let ones = Array2::from_elem((4, 4), Complex::new(1.0, 0.0));
        let (g_f, _) = modulate_vjp(&g_out, &f, &ones).unwrap();
        assert_eq!(g_f.data(), g_out.data());

        let zero = ComplexField::<f64>::zeros(4, pitch).unwrap();
        let (_, g_m) = modulate_vjp(&g_out, &zero, &ones).unwrap();
        assert!(g_m.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn detect_region_sums() {
        let layout = DetectorLayout::evenly_spaced(200).unwrap();
        assert_eq!(layout.class_count(), 10);
        for r in layout.regions() {
            assert_eq!((r.height, r.width), (20, 20));
        }

        // Field = 1 inside region 0 only -> out[0] = area, rest 0.
        let mut data: Array2<Complex<f64>> = Array2::zeros((200, 200));
        let r0 = layout.regions()[0];
        for i in r0.row..r0.row + r0.height {
            for j in r0.col..r0.col + r0.width {
                data[[i, j]] = Complex::new(1.0, 0.0);
            }
        }
        let f = ComplexField::new(data, 36e-6).unwrap();
        let out = detect(&f, &layout).unwrap();
        assert_eq!(out[0], 400.0);
        assert!(out[1..].iter().all(|&x| x == 0.0));

        let zero = ComplexField::<f64>::zeros(200, 36e-6).unwrap();
        let out = detect(&zero, &layout).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn detect_rejects_out_of_bounds() {
        let layout = DetectorLayout::evenly_spaced(200).unwrap();
        let f = ComplexField::<f64>::zeros(64, 36e-6).unwrap();
        assert!(detect(&f, &layout).is_err());
    }

    #[test]
    fn detect_vjp_zero_cases() {
        let layout = DetectorLayout::evenly_spaced(20).unwrap();
        let f = ComplexField::constant(20, Complex::new(0.3, 0.1), 36e-6).unwrap();
        let g = detect_vjp(&[0.0; 10], &f, &layout).unwrap();
        assert!(g.data().iter().all(|z| z.norm() == 0.0));

        let zero = ComplexField::<f64>::zeros(20, 36e-6).unwrap();
        let g = detect_vjp(&[1.0; 10], &zero, &layout).unwrap();
        assert!(g.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn layout_rejects_overlap() {
        let r = Region {
            row: 0,
            col: 0,
            height: 4,
            width: 4,
        };
        let s = Region {
            row: 2,
            col: 2,
            height: 4,
            width: 4,
        };
        assert!(DetectorLayout::new(vec![r, s], 16).is_err());
    }
}
