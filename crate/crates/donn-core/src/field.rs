use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex;

use crate::error::{DonnError, Result};
use crate::real::Real;

const FIELD_MAGIC: &[u8; 8] = b"DONNFLD1";

/// Square complex-valued optical wavefunction sampled on a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField<T: Real> {
    data: Array2<Complex<T>>,
    pixel_pitch: f64,
}

impl<T: Real> ComplexField<T> {
    /// Wraps an `n x n` array of samples. Rejects non-square, too-small and
    /// non-finite inputs.
    pub fn new(data: Array2<Complex<T>>, pixel_pitch: f64) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(DonnError::ShapeMismatch(format!(
                "field must be square, got {r}x{c}"
            )));
        }
        if r < 2 {
            return Err(DonnError::ShapeMismatch(format!(
                "field must be at least 2x2, got {r}x{c}"
            )));
        }
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return Err(DonnError::Config(format!(
                "pixel pitch must be positive and finite, got {pixel_pitch}"
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(DonnError::NonFinite("field sample".into()));
        }
        Ok(Self { data, pixel_pitch })
    }

    pub fn zeros(n: usize, pixel_pitch: f64) -> Result<Self> {
        Self::new(Array2::zeros((n, n)), pixel_pitch)
    }

    /// Constant field `c` everywhere.
    pub fn constant(n: usize, value: Complex<T>, pixel_pitch: f64) -> Result<Self> {
        Self::new(Array2::from_elem((n, n), value), pixel_pitch)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    #[inline]
    pub fn data(&self) -> &Array2<Complex<T>> {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut Array2<Complex<T>> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<Complex<T>> {
        self.data
    }

    /// Rewraps raw data produced by an operation that preserved the grid.
    pub(crate) fn from_parts(data: Array2<Complex<T>>, pixel_pitch: f64) -> Self {
        Self { data, pixel_pitch }
    }

    /// Total energy `sum |f[i,j]|^2`, accumulated in f64.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr().to64()).sum()
    }

    /// Per-pixel intensity `|f[i,j]|^2`.
    pub fn intensity(&self) -> Array2<f64> {
        self.data.mapv(|z| z.norm_sqr().to64())
    }

    /// Writes the plain binary dump: magic, u32 grid size (LE), then
    /// `n^2` (re, im) pairs of little-endian f64, row-major.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.n() as u32).to_le_bytes())?;
        for z in self.data.iter() {
            w.write_all(&z.re.to64().to_le_bytes())?;
            w.write_all(&z.im.to64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(&path).map_err(|e| DonnError::io(&path, e))?;
        self.write_binary(&mut f).map_err(|e| DonnError::io(&path, e))
    }

    pub fn read_binary<R: Read>(r: &mut R, pixel_pitch: f64) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| DonnError::Dataset("field dump truncated before magic".into()))?;
        if &magic != FIELD_MAGIC {
            return Err(DonnError::Dataset("bad field dump magic".into()));
        }
        let mut nb = [0u8; 4];
        r.read_exact(&mut nb)
            .map_err(|_| DonnError::Dataset("field dump truncated before size".into()))?;
        let n = u32::from_le_bytes(nb) as usize;
        let mut data = Array2::zeros((n, n));
        let mut buf = [0u8; 16];
        for z in data.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| DonnError::Dataset("field dump truncated in payload".into()))?;
            let re = f64::from_le_bytes(buf[..8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[8..].try_into().unwrap());
            *z = Complex::new(T::of(re), T::of(im));
        }
        Self::new(data, pixel_pitch)
    }

    pub fn load<P: AsRef<Path>>(path: P, pixel_pitch: f64) -> Result<Self> {
        let mut f = std::fs::File::open(&path).map_err(|e| DonnError::io(&path, e))?;
        Self::read_binary(&mut f, pixel_pitch)
    }
}

/// Inner product `sum x * conj(y)` accumulated in f64, used by the adjoint
/// identity tests.
pub fn inner<T: Real>(x: &ComplexField<T>, y: &ComplexField<T>) -> Complex<f64> {
    x.data()
        .iter()
        .zip(y.data().iter())
        .fold(Complex::new(0.0, 0.0), |acc, (a, b)| {
            let a = Complex::new(a.re.to64(), a.im.to64());
            let b = Complex::new(b.re.to64(), b.im.to64());
            acc + a * b.conj()
        })
}
