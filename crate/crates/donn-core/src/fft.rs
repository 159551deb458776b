use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::real::Real;

/// Planned 2D FFT over a square `len x len` grid.
///
/// Plans are `Arc`-shared and safe to use from multiple worker threads; each
/// call owns its scratch.
#[derive(Clone)]
pub struct Fft2<T: Real> {
    len: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Fft2<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("len", &self.len).finish()
    }
}

impl<T: Real> Fft2<T> {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            fwd: planner.plan_fft(len, FftDirection::Forward),
            inv: planner.plan_fft(len, FftDirection::Inverse),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    /// Unnormalized forward 2D FFT in place.
    pub fn forward(&self, a: &mut Array2<Complex<T>>) {
        self.apply(a, &self.fwd);
    }

    /// Inverse 2D FFT in place, normalized by `1 / len^2` so that
    /// `inverse(forward(x)) == x` up to round-off.
    pub fn inverse(&self, a: &mut Array2<Complex<T>>) {
        self.apply(a, &self.inv);
        let scale = T::of(1.0 / (self.len as f64 * self.len as f64));
        for z in a.iter_mut() {
            *z = Complex::new(z.re * scale, z.im * scale);
        }
    }

    fn apply(&self, a: &mut Array2<Complex<T>>, plan: &Arc<dyn Fft<T>>) {
        assert_eq!(a.dim(), (self.len, self.len), "fft grid size mismatch");
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()];
        // Row pass, transpose, row pass again, transpose back. Rows of a
        // standard-layout Array2 are contiguous, so the plan can process the
        // whole buffer as `len` back-to-back transforms.
        let buf = a.as_slice_mut().expect("standard layout");
        plan.process_with_scratch(buf, &mut scratch);
        transpose_square(buf, self.len);
        plan.process_with_scratch(buf, &mut scratch);
        transpose_square(buf, self.len);
    }
}

fn transpose_square<T: Copy>(buf: &mut [T], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_identity() {
        let n = 8;
        let fft = Fft2::<f64>::new(n);
        let mut a = Array2::from_shape_fn((n, n), |(i, j)| {
            Complex::new((i * n + j) as f64 * 0.1, -((i + j) as f64) * 0.2)
        });
        let orig = a.clone();
        fft.forward(&mut a);
        fft.inverse(&mut a);
        for (x, y) in a.iter().zip(orig.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn impulse_transforms_to_constant() {
        let n = 4;
        let fft = Fft2::<f64>::new(n);
        let mut a = Array2::zeros((n, n));
        a[[0, 0]] = Complex::new(1.0, 0.0);
        fft.forward(&mut a);
        for z in a.iter() {
            assert!((z - Complex::new(1.0, 0.0)).norm() < 1e-14);
        }
    }
}
