//! Trainable discrete device selection: Gumbel noise, temperature-controlled
//! softmax relaxation, straight-through hard selection, and the mapping of
//! selections to complex modulations through a device response table.
//!
//! Straight-through semantics: the forward modulation is built from the hard
//! per-pixel argmax, so every emitted value is exactly representable on the
//! device; the backward pass differentiates the soft relaxation instead. The
//! vjp here is the exact gradient of that soft surrogate, which is what the
//! finite-difference oracles check.

use ndarray::{Array2, Array3};
use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::device::DeviceResponseTable;
use crate::error::{DonnError, Result};
use crate::real::Real;

/// I.i.d. standard Gumbel samples for one layer, `n x n x k`.
#[derive(Debug, Clone)]
pub struct GumbelNoise<T: Real> {
    g: Array3<T>,
    provenance: u64,
}

impl<T: Real> GumbelNoise<T> {
    #[inline]
    pub fn values(&self) -> &Array3<T> {
        &self.g
    }

    /// Seed (or draw counter) this noise was generated from.
    #[inline]
    pub fn provenance(&self) -> u64 {
        self.provenance
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            g: Array3::zeros((n, n, k)),
            provenance: 0,
        }
    }
}

/// Draws `n x n x k` standard Gumbel samples from a fresh seeded stream.
pub fn sample_gumbel<T: Real>(n: usize, k: usize, seed: u64) -> GumbelNoise<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_gumbel_from(n, k, &mut rng, seed)
}

/// Draws from an existing stream; `provenance` records where in the training
/// run the draw happened.
pub fn sample_gumbel_from<T: Real>(
    n: usize,
    k: usize,
    rng: &mut impl Rng,
    provenance: u64,
) -> GumbelNoise<T> {
    let g = Array3::from_shape_simple_fn((n, n, k), || {
        // u uniform on (0, 1): the half-open draw lands on 0 with
        // probability 2^-53, which would send -ln(-ln u) to -inf.
        let u: f64 = rng.random();
        let u = if u > 0.0 { u } else { f64::MIN_POSITIVE };
        T::of(-(-u.ln()).ln())
    });
    GumbelNoise { g, provenance }
}

/// Whether selection uses noisy relaxed sampling or deterministic argmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Train,
    Inference,
}

/// Per-pixel soft probabilities plus the hard argmax selection.
///
/// The hard one-hot tensor is stored compactly as the selected level index
/// per pixel.
#[derive(Debug, Clone)]
pub struct SelectionTensor<T: Real> {
    pub soft: Array3<T>,
    pub hard: Array2<usize>,
}

fn check_logits<T: Real>(logits: &Array3<T>) -> Result<()> {
    let (r, c, k) = logits.dim();
    if r != c || r == 0 {
        return Err(DonnError::ShapeMismatch(format!(
            "logits must be square in the pixel axes, got {r}x{c}x{k}"
        )));
    }
    if k < 2 {
        return Err(DonnError::ShapeMismatch(format!(
            "need at least 2 levels, got {k}"
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(DonnError::NonFinite("logits".into()));
    }
    Ok(())
}

/// Temperature-controlled softmax relaxation with hard argmax.
///
/// Train mode: `soft = softmax((logits + g) / tau)` per pixel (computed with
/// max subtraction), `hard = argmax(soft)`. Inference mode ignores the noise
/// and temperature: `hard = argmax(logits)` and `soft` is its one-hot.
/// Argmax ties resolve to the lowest index.
pub fn gumbel_softmax<T: Real>(
    logits: &Array3<T>,
    noise: &GumbelNoise<T>,
    tau: T,
    mode: SelectMode,
) -> Result<SelectionTensor<T>> {
    check_logits(logits)?;
    if !(tau > T::zero()) {
        return Err(DonnError::NonPositiveTemperature);
    }
    let (n, _, k) = logits.dim();

    match mode {
        SelectMode::Inference => {
            let mut soft = Array3::zeros((n, n, k));
            let mut hard = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    let row = logits.slice(ndarray::s![i, j, ..]);
                    let a = argmax(row.iter().copied());
                    hard[[i, j]] = a;
                    soft[[i, j, a]] = T::one();
                }
            }
            Ok(SelectionTensor { soft, hard })
        }
        SelectMode::Train => {
            if noise.g.dim() != logits.dim() {
                return Err(DonnError::ShapeMismatch(format!(
                    "noise shape {:?} does not match logits {:?}",
                    noise.g.dim(),
                    logits.dim()
                )));
            }
            let mut soft = Array3::zeros((n, n, k));
            let mut hard = Array2::zeros((n, n));
            let mut scaled = vec![T::zero(); k];
            for i in 0..n {
                for j in 0..n {
                    let mut max = T::neg_infinity();
                    let mut arg = 0usize;
                    for l in 0..k {
                        let s = (logits[[i, j, l]] + noise.g[[i, j, l]]) / tau;
                        scaled[l] = s;
                        if s > max {
                            max = s;
                            arg = l;
                        }
                    }
                    let mut sum = T::zero();
                    for l in 0..k {
                        let e = (scaled[l] - max).exp();
                        soft[[i, j, l]] = e;
                        sum += e;
                    }
                    for l in 0..k {
                        soft[[i, j, l]] /= sum;
                    }
                    hard[[i, j]] = arg;
                }
            }
            Ok(SelectionTensor { soft, hard })
        }
    }
}

fn argmax<T: PartialOrd>(it: impl Iterator<Item = T>) -> usize {
    let mut best = 0usize;
    let mut best_v: Option<T> = None;
    for (i, v) in it.enumerate() {
        match &best_v {
            Some(b) if !(v > *b) => {}
            _ => {
                best_v = Some(v);
                best = i;
            }
        }
    }
    best
}

/// Which weighting the modulation is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPath {
    Hard,
    Soft,
}

/// Maps a selection onto complex modulations through the device table:
/// `amp = w . A`, `phase = w . P`, `out = amp * (cos phase + i sin phase)`.
/// Mixing happens in (amplitude, phase) space, not in complex space.
pub fn build_modulation<T: Real>(
    sel: &SelectionTensor<T>,
    table: &DeviceResponseTable,
    path: SelectionPath,
) -> Result<Array2<Complex<T>>> {
    let (n, _, k) = sel.soft.dim();
    if k != table.levels() {
        return Err(DonnError::ShapeMismatch(format!(
            "selection has {k} levels but device table has {}",
            table.levels()
        )));
    }
    let amps = table.amplitude_as::<T>();
    let phases = table.phase_as::<T>();
    let mut out = Array2::zeros((n, n));
    match path {
        SelectionPath::Hard => {
            for i in 0..n {
                for j in 0..n {
                    let l = sel.hard[[i, j]];
                    let (s, c) = phases[l].sin_cos();
                    out[[i, j]] = Complex::new(amps[l] * c, amps[l] * s);
                }
            }
        }
        SelectionPath::Soft => {
            for i in 0..n {
                for j in 0..n {
                    let mut amp = T::zero();
                    let mut phase = T::zero();
                    for l in 0..k {
                        let w = sel.soft[[i, j, l]];
                        amp += w * amps[l];
                        phase += w * phases[l];
                    }
                    let (s, c) = phase.sin_cos();
                    out[[i, j]] = Complex::new(amp * c, amp * s);
                }
            }
        }
    }
    Ok(out)
}

/// Everything the backward pass needs from a train-mode forward.
#[derive(Debug, Clone)]
pub struct StCache<T: Real> {
    soft: Array3<T>,
    soft_amp: Array2<T>,
    soft_phase: Array2<T>,
    tau: T,
    amps: Vec<T>,
    phases: Vec<T>,
}

/// Train-mode forward through the discrete mapping.
///
/// Returns the hard modulation (the forward value; always a member of the
/// device's k-point response set), the soft modulation (the surrogate the
/// backward pass differentiates), and the cache for [`gumbel_softmax_vjp`].
pub fn straight_through_forward<T: Real>(
    logits: &Array3<T>,
    noise: &GumbelNoise<T>,
    tau: T,
    table: &DeviceResponseTable,
) -> Result<(Array2<Complex<T>>, Array2<Complex<T>>, StCache<T>)> {
    let sel = gumbel_softmax(logits, noise, tau, SelectMode::Train)?;
    let hard_mod = build_modulation(&sel, table, SelectionPath::Hard)?;

    let (n, _, k) = sel.soft.dim();
    let amps = table.amplitude_as::<T>();
    let phases = table.phase_as::<T>();
    let mut soft_amp = Array2::zeros((n, n));
    let mut soft_phase = Array2::zeros((n, n));
    let mut soft_mod = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut amp = T::zero();
            let mut phase = T::zero();
            for l in 0..k {
                let w = sel.soft[[i, j, l]];
                amp += w * amps[l];
                phase += w * phases[l];
            }
            soft_amp[[i, j]] = amp;
            soft_phase[[i, j]] = phase;
            let (s, c) = phase.sin_cos();
            soft_mod[[i, j]] = Complex::new(amp * c, amp * s);
        }
    }

    Ok((
        hard_mod,
        soft_mod,
        StCache {
            soft: sel.soft,
            soft_amp,
            soft_phase,
            tau,
            amps,
            phases,
        },
    ))
}

/// Backward through the soft path: complex modulation cotangent to logits
/// gradient.
///
/// Chains (a) the Euler-formula derivatives of `amp * e^{i phase}`, (b) the
/// dot products with the device's amplitude and phase arrays, (c) the
/// per-pixel softmax Jacobian `(diag(y) - y y^T) / tau`.
pub fn gumbel_softmax_vjp<T: Real>(
    g_mod: &Array2<Complex<T>>,
    cache: &StCache<T>,
) -> Result<Array3<T>> {
    let (n, _, k) = cache.soft.dim();
    if g_mod.dim() != (n, n) {
        return Err(DonnError::ShapeMismatch(format!(
            "cotangent is {:?} but cache was built for {n}x{n}",
            g_mod.dim()
        )));
    }
    let mut g_logits = Array3::zeros((n, n, k));
    let mut g_y = vec![T::zero(); k];
    for i in 0..n {
        for j in 0..n {
            let g = g_mod[[i, j]];
            let amp = cache.soft_amp[[i, j]];
            let (s, c) = cache.soft_phase[[i, j]].sin_cos();
            // m = amp * (c + i s); dL/d amp = Re(conj(g) * e^{i phase}),
            // dL/d phase = Re(conj(g) * i * m).
            let g_amp = g.re * c + g.im * s;
            let g_phase = amp * (g.im * c - g.re * s);
            let mut dot = T::zero();
            for l in 0..k {
                g_y[l] = g_amp * cache.amps[l] + g_phase * cache.phases[l];
                dot += cache.soft[[i, j, l]] * g_y[l];
            }
            for l in 0..k {
                let y = cache.soft[[i, j, l]];
                g_logits[[i, j, l]] = y * (g_y[l] - dot) / cache.tau;
            }
        }
    }
    Ok(g_logits)
}
