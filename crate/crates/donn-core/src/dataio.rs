//! Dataset ingestion (IDX image/label containers, raw or gzip), bilinear
//! interpolation onto the optical grid, complex encoding, and deterministic
//! per-epoch batching.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DonnError, Result};
use crate::field::ComplexField;
use crate::real::Real;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Grayscale image classification dataset: `count` images of
/// `rows x cols` bytes plus one label byte each.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl Dataset {
    pub fn new(images: Vec<u8>, labels: Vec<u8>, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(DonnError::Dataset("zero image dimensions".into()));
        }
        if images.len() != labels.len() * rows * cols {
            return Err(DonnError::Dataset(format!(
                "image bytes {} do not match {} labels of {rows}x{cols}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 9) {
            return Err(DonnError::Dataset(format!("label {l} out of range 0..10")));
        }
        Ok(Self {
            images,
            labels,
            rows,
            cols,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn image(&self, idx: usize) -> &[u8] {
        let sz = self.rows * self.cols;
        &self.images[idx * sz..(idx + 1) * sz]
    }

    #[inline]
    pub fn label(&self, idx: usize) -> u8 {
        self.labels[idx]
    }

    /// First `n` samples, e.g. for the scaled desk profile.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        if n == 0 {
            return Err(DonnError::Dataset("empty subset requested".into()));
        }
        Dataset::new(
            self.images[..n * self.rows * self.cols].to_vec(),
            self.labels[..n].to_vec(),
            self.rows,
            self.cols,
        )
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let f = std::fs::File::open(path).map_err(|e| DonnError::io(path, e))?;
    let mut head = [0u8; 2];
    let n = {
        use std::io::Read as _;
        let mut probe = std::io::BufReader::new(&f);
        probe.read(&mut head).map_err(|e| DonnError::io(path, e))?
    };
    // reopen to rewind; gzip files start with 0x1f 0x8b
    let f = std::fs::File::open(path).map_err(|e| DonnError::io(path, e))?;
    if n == 2 && head == [0x1f, 0x8b] {
        Ok(Box::new(flate2::read::GzDecoder::new(f)))
    } else {
        Ok(Box::new(f))
    }
}

fn read_u32_be(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| DonnError::Dataset(format!("truncated before {what}")))?;
    Ok(u32::from_be_bytes(b))
}

/// Parses a big-endian IDX image/label file pair. Accepts raw or
/// gzip-compressed files (detected by content, not extension).
pub fn load_idx<P: AsRef<Path>>(images_path: P, labels_path: P) -> Result<Dataset> {
    let ip = images_path.as_ref();
    let lp = labels_path.as_ref();

    let mut ir = open_maybe_gz(ip)?;
    let magic = read_u32_be(&mut ir, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(DonnError::Dataset(format!(
            "bad magic 0x{magic:08x} in {} (expected image magic 0x{IMAGE_MAGIC:08x})",
            ip.display()
        )));
    }
    let count = read_u32_be(&mut ir, "image count")? as usize;
    let rows = read_u32_be(&mut ir, "image rows")? as usize;
    let cols = read_u32_be(&mut ir, "image cols")? as usize;
    let mut images = vec![0u8; count * rows * cols];
    ir.read_exact(&mut images).map_err(|_| {
        DonnError::Dataset(format!(
            "{} shorter than the declared {count} images of {rows}x{cols}",
            ip.display()
        ))
    })?;

    let mut lr = open_maybe_gz(lp)?;
    let magic = read_u32_be(&mut lr, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(DonnError::Dataset(format!(
            "bad magic 0x{magic:08x} in {} (expected label magic 0x{LABEL_MAGIC:08x})",
            lp.display()
        )));
    }
    let lcount = read_u32_be(&mut lr, "label count")? as usize;
    if lcount != count {
        return Err(DonnError::Dataset(format!(
            "{count} images but {lcount} labels"
        )));
    }
    let mut labels = vec![0u8; lcount];
    lr.read_exact(&mut labels).map_err(|_| {
        DonnError::Dataset(format!(
            "{} shorter than the declared {lcount} labels",
            lp.display()
        ))
    })?;

    Dataset::new(images, labels, rows, cols)
}

/// Writes a dataset as a raw IDX image/label file pair.
pub fn write_idx<P: AsRef<Path>>(ds: &Dataset, images_path: P, labels_path: P) -> Result<()> {
    use std::io::Write;
    let ip = images_path.as_ref();
    let mut f = std::fs::File::create(ip).map_err(|e| DonnError::io(ip, e))?;
    let hdr = |f: &mut std::fs::File, m: u32| f.write_all(&m.to_be_bytes());
    hdr(&mut f, IMAGE_MAGIC).map_err(|e| DonnError::io(ip, e))?;
    hdr(&mut f, ds.len() as u32).map_err(|e| DonnError::io(ip, e))?;
    hdr(&mut f, ds.rows as u32).map_err(|e| DonnError::io(ip, e))?;
    hdr(&mut f, ds.cols as u32).map_err(|e| DonnError::io(ip, e))?;
    f.write_all(&ds.images).map_err(|e| DonnError::io(ip, e))?;

    let lp = labels_path.as_ref();
    let mut f = std::fs::File::create(lp).map_err(|e| DonnError::io(lp, e))?;
    hdr(&mut f, LABEL_MAGIC).map_err(|e| DonnError::io(lp, e))?;
    hdr(&mut f, ds.len() as u32).map_err(|e| DonnError::io(lp, e))?;
    f.write_all(&ds.labels).map_err(|e| DonnError::io(lp, e))?;
    Ok(())
}

/// Bilinear interpolation of a `src x src` byte image onto an `n x n` grid,
/// corner-aligned, scaled to `[0, 1]` by dividing by 255.
pub fn interpolate<T: Real>(image: &[u8], src: usize, n: usize) -> Result<Array2<T>> {
    if n < 1 {
        return Err(DonnError::Config("interpolation target must be >= 1".into()));
    }
    if image.len() != src * src {
        return Err(DonnError::ShapeMismatch(format!(
            "image has {} bytes, expected {src}x{src}",
            image.len()
        )));
    }
    let scale = if n > 1 {
        (src as f64 - 1.0) / (n as f64 - 1.0)
    } else {
        0.0
    };
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let y = i as f64 * scale;
        let y0 = (y.floor() as usize).min(src - 1);
        let y1 = (y0 + 1).min(src - 1);
        let fy = y - y0 as f64;
        for j in 0..n {
            let x = j as f64 * scale;
            let x0 = (x.floor() as usize).min(src - 1);
            let x1 = (x0 + 1).min(src - 1);
            let fx = x - x0 as f64;
            let p00 = image[y0 * src + x0] as f64;
            let p01 = image[y0 * src + x1] as f64;
            let p10 = image[y1 * src + x0] as f64;
            let p11 = image[y1 * src + x1] as f64;
            let v = p00 * (1.0 - fy) * (1.0 - fx)
                + p01 * (1.0 - fy) * fx
                + p10 * fy * (1.0 - fx)
                + p11 * fy * fx;
            // the weights sum to 1 only up to round-off; clamp the dust
            out[[i, j]] = T::of((v / 255.0).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Amplitude encoding: real part = pixel value in `[0, 1]`, imaginary part
/// zero.
pub fn encode<T: Real>(image: &Array2<T>, pixel_pitch: f64) -> Result<ComplexField<T>> {
    if image.iter().any(|&v| v < T::zero() || v > T::one()) {
        return Err(DonnError::Dataset(
            "encode expects values in [0, 1]".into(),
        ));
    }
    let data = image.mapv(|v| Complex::new(v, T::zero()));
    ComplexField::new(data, pixel_pitch)
}

/// Interpolate + encode one dataset sample onto the optical grid.
pub fn encode_sample<T: Real>(
    ds: &Dataset,
    idx: usize,
    n: usize,
    pixel_pitch: f64,
) -> Result<ComplexField<T>> {
    let img = interpolate::<T>(ds.image(idx), ds.rows, n)?;
    encode(&img, pixel_pitch)
}

/// Deterministic per-epoch batch index partition. Every dataset index
/// appears exactly once; the final partial batch is emitted.
pub fn epoch_batches(
    count: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>> {
    if count == 0 {
        return Err(DonnError::Dataset("empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(DonnError::Config("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..count).collect();
    if shuffle {
        // dedicated stream per epoch so batch order is independent of how
        // much noise the training stream consumed
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5348_5546_0000_0000 | epoch as u64);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}
