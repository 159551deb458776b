//! Conventional quantization baselines: a continuous voltage-response model
//! fitted to the calibrated device table, float-precision training in either
//! voltage or phase parameterization, post-training rounding (PTQ),
//! quantization-aware training with periodic projection (QAT), and k-means
//! weight sharing (WSQ) with the physical-feasibility post-processing step.

use ndarray::{Array2, Array3};
use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{encode_sample, epoch_batches, Dataset};
use crate::device::DeviceResponseTable;
use crate::engine::{
    evaluate_compiled, pipeline_backward, pipeline_forward, sample_loss, EpochRow, Engine,
    IterRow, TrainConfig, TrainReport,
};
use crate::error::{DonnError, Result};
use crate::exec::map_chunks;
use crate::model::{CompiledModel, DonnModel, ModulationLayerParams};
use crate::optics::{DetectorLayout, PropagationConfig};
use crate::optim::AdamState;
use crate::real::Real;
use crate::schedule::tau_at;

/// Polynomial in the monomial basis, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, &c)| i as f64 * c)
            .collect();
        Poly { coeffs }
    }
}

/// Continuous voltage -> (amplitude, phase) response, fitted by least
/// squares to the calibrated table. Evaluation clamps to the fitted voltage
/// range.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageResponseModel {
    pub amp: Poly,
    pub phase: Poly,
    pub degree: usize,
    pub v_min: f64,
    pub v_max: f64,
    /// Root-mean-square residuals on the calibration points.
    pub amp_residual: f64,
    pub phase_residual: f64,
}

impl VoltageResponseModel {
    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.v_min, self.v_max)
    }

    pub fn amplitude(&self, v: f64) -> f64 {
        self.amp.eval(self.clamp(v))
    }

    pub fn phase_at(&self, v: f64) -> f64 {
        self.phase.eval(self.clamp(v))
    }

    /// Derivatives of the clamped response: zero outside the valid range.
    pub fn d_amplitude(&self, v: f64) -> f64 {
        if v < self.v_min || v > self.v_max {
            0.0
        } else {
            self.amp.derivative().eval(v)
        }
    }

    pub fn d_phase(&self, v: f64) -> f64 {
        if v < self.v_min || v > self.v_max {
            0.0
        } else {
            self.phase.derivative().eval(v)
        }
    }
}

/// Least-squares polynomial fit via SVD on the Vandermonde system.
fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<(Poly, f64)> {
    let n = xs.len();
    let cols = degree + 1;
    let mut a = nalgebra::DMatrix::zeros(n, cols);
    for (i, &x) in xs.iter().enumerate() {
        let mut p = 1.0;
        for j in 0..cols {
            a[(i, j)] = p;
            p *= x;
        }
    }
    let b = nalgebra::DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-12 * svd.singular_values[0])
        .count();
    if rank < cols {
        return Err(DonnError::Quantization(format!(
            "rank-deficient polynomial fit (rank {rank} < {cols}); duplicate control values?"
        )));
    }
    let sol = svd
        .solve(&b, 1e-14)
        .map_err(|e| DonnError::Quantization(format!("polynomial fit failed: {e}")))?;
    let coeffs: Vec<f64> = sol.iter().copied().collect();
    let poly = Poly { coeffs };
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (poly.eval(x) - y).powi(2))
        .sum();
    Ok((poly, (rss / n as f64).sqrt()))
}

/// Fits degree-`degree` polynomials voltage -> amplitude and voltage ->
/// phase to the `k` calibrated points. Requires `k > degree`.
pub fn fit_voltage_response(
    table: &DeviceResponseTable,
    degree: usize,
) -> Result<VoltageResponseModel> {
    let k = table.levels();
    if k <= degree {
        return Err(DonnError::Quantization(format!(
            "need more calibration points ({k}) than polynomial degree ({degree})"
        )));
    }
    let xs = table.control();
    let (amp, amp_residual) = polyfit(xs, table.amplitude(), degree)?;
    let (phase, phase_residual) = polyfit(xs, table.phase(), degree)?;
    Ok(VoltageResponseModel {
        amp,
        phase,
        degree,
        v_min: xs[0],
        v_max: xs[k - 1],
        amp_residual,
        phase_residual,
    })
}

/// Synthesizes a finer device table (e.g. 12 or 16 levels) by sampling the
/// fitted response polynomials evenly across the control range.
pub fn derived_table(table: &DeviceResponseTable, levels: usize) -> Result<DeviceResponseTable> {
    if levels < 2 {
        return Err(DonnError::Quantization(format!(
            "derived table needs >= 2 levels, got {levels}"
        )));
    }
    let resp = fit_voltage_response(table, 3.min(table.levels() - 1))?;
    let step = (resp.v_max - resp.v_min) / (levels - 1) as f64;
    let mut control = Vec::with_capacity(levels);
    let mut amp = Vec::with_capacity(levels);
    let mut phase = Vec::with_capacity(levels);
    for i in 0..levels {
        let v = resp.v_min + step * i as f64;
        control.push(v);
        amp.push(resp.amplitude(v).max(0.0));
        // the fit can dip a hair below zero at the range ends; clamp so the
        // value does not wrap to just under 2 pi
        phase.push(resp.phase_at(v).max(0.0));
    }
    DeviceResponseTable::new(control, amp, phase)
}

/// Continuous parameterization of the float baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatParam {
    /// Per-pixel supply voltage, mapped through the fitted response
    /// polynomials; clamped to the valid range.
    Voltage,
    /// Per-pixel phase in unconstrained radians, amplitude fixed at 1.
    Phase,
}

/// Float-precision model: per-layer continuous parameters over the same
/// optics as the discrete model.
#[derive(Debug, Clone)]
pub struct FloatDonnModel<T: Real> {
    pub kind: FloatParam,
    pub layers: Vec<Array2<T>>,
    /// One fitted response per layer (voltage parameterization only).
    pub responses: Vec<VoltageResponseModel>,
    pub optics: PropagationConfig,
    pub detector: DetectorLayout,
}

impl<T: Real> FloatDonnModel<T> {
    /// Fresh model. Voltage parameterization starts at the center of each
    /// layer's valid range; phase parameterization starts at zero.
    pub fn new(
        kind: FloatParam,
        optics: PropagationConfig,
        detector: DetectorLayout,
        responses: Vec<VoltageResponseModel>,
        depth: usize,
    ) -> Result<Self> {
        optics.validate()?;
        detector.validate_against(optics.grid_size)?;
        if depth == 0 {
            return Err(DonnError::Config("model needs at least one layer".into()));
        }
        let n = optics.grid_size;
        let layers = match kind {
            FloatParam::Voltage => {
                if responses.len() != depth {
                    return Err(DonnError::Config(format!(
                        "{} responses for {depth} layers",
                        responses.len()
                    )));
                }
                responses
                    .iter()
                    .map(|r| Array2::from_elem((n, n), T::of(0.5 * (r.v_min + r.v_max))))
                    .collect()
            }
            FloatParam::Phase => vec![Array2::zeros((n, n)); depth],
        };
        Ok(Self {
            kind,
            layers,
            responses,
            optics,
            detector,
        })
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn layer_modulation(&self, l: usize) -> Array2<Complex<T>> {
        match self.kind {
            FloatParam::Voltage => {
                let r = &self.responses[l];
                self.layers[l].mapv(|v| {
                    let v = r.clamp(v.to64());
                    Complex::from_polar(T::of(r.amplitude(v)), T::of(r.phase_at(v)))
                })
            }
            FloatParam::Phase => self.layers[l].mapv(|p| {
                let (s, c) = p.sin_cos();
                Complex::new(c, s)
            }),
        }
    }

    pub fn modulations(&self) -> Vec<Array2<Complex<T>>> {
        (0..self.depth()).map(|l| self.layer_modulation(l)).collect()
    }

    /// Gradient of the parameters from the modulation cotangent:
    /// `g_p = Re(conj(g_m) * dm/dp)` per pixel.
    fn layer_param_grad(&self, l: usize, g_m: &Array2<Complex<T>>) -> Array2<T> {
        let n = self.optics.grid_size;
        let mut g = Array2::zeros((n, n));
        match self.kind {
            FloatParam::Voltage => {
                let r = &self.responses[l];
                for ((i, j), gp) in g.indexed_iter_mut() {
                    let v = self.layers[l][[i, j]].to64();
                    let vc = r.clamp(v);
                    let (amp, phase) = (r.amplitude(vc), r.phase_at(vc));
                    let (da, dp) = (r.d_amplitude(v), r.d_phase(v));
                    let (s, c) = phase.sin_cos();
                    // dm/dv = (A' + i A P') e^{iP}
                    let dm = Complex::new(da, amp * dp) * Complex::new(c, s);
                    let gm = g_m[[i, j]];
                    *gp = T::of(gm.re.to64() * dm.re + gm.im.to64() * dm.im);
                }
            }
            FloatParam::Phase => {
                for ((i, j), gp) in g.indexed_iter_mut() {
                    let (s, c) = self.layers[l][[i, j]].sin_cos();
                    // dm/dp = i e^{ip} = -s + i c
                    let gm = g_m[[i, j]];
                    *gp = gm.im * c - gm.re * s;
                }
            }
        }
        g
    }

    pub fn compile(&self) -> Result<CompiledModel<T>> {
        CompiledModel::new(self.modulations(), self.optics.clone(), self.detector.clone())
    }
}

/// Mean batch loss, correct-prediction count, and per-layer parameter
/// gradients for a float model over one batch. The gradient chains the
/// pipeline vjps into `Re(conj(g_m) * dm/dparam)` per pixel.
pub fn float_loss_and_grad<T: Real>(
    engine: &Engine<T>,
    model: &FloatDonnModel<T>,
    fields: &[crate::field::ComplexField<T>],
    labels: &[u8],
) -> Result<(T, usize, Vec<Array2<T>>)> {
    if fields.len() != labels.len() {
        return Err(DonnError::ShapeMismatch(format!(
            "{} fields vs {} labels",
            fields.len(),
            labels.len()
        )));
    }
    let mods = model.modulations();
    let inv_b = T::of(1.0 / labels.len() as f64);
    let partials = map_chunks(labels.len(), engine.exec, |range| {
        let mut g_mods: Vec<Array2<Complex<T>>> =
            mods.iter().map(|m| Array2::zeros(m.dim())).collect();
        let mut loss_sum = T::zero();
        let mut correct = 0usize;
        for i in range {
            let (det, cache) =
                pipeline_forward(&fields[i], &mods, &engine.tf, &engine.detector, true)?;
            let (l, mut g_det) = sample_loss(&det, labels[i], engine.loss)?;
            loss_sum += l;
            let mut best = 0usize;
            for (c, v) in det.iter().enumerate().skip(1) {
                if *v > det[best] {
                    best = c;
                }
            }
            if best == labels[i] as usize {
                correct += 1;
            }
            for g in g_det.iter_mut() {
                *g *= inv_b;
            }
            let sample_g = pipeline_backward(
                &cache.expect("cache requested"),
                &mods,
                &engine.tf,
                &engine.detector,
                &g_det,
            )?;
            for (acc, g) in g_mods.iter_mut().zip(sample_g) {
                *acc += &g;
            }
        }
        Ok::<_, DonnError>((g_mods, loss_sum, correct))
    });

    let mut g_mods: Vec<Array2<Complex<T>>> =
        mods.iter().map(|m| Array2::zeros(m.dim())).collect();
    let mut loss_sum = T::zero();
    let mut correct = 0usize;
    for p in partials {
        let (g, l, c) = p?;
        for (acc, gl) in g_mods.iter_mut().zip(g) {
            *acc += &gl;
        }
        loss_sum += l;
        correct += c;
    }
    let g_params = (0..model.depth())
        .map(|l| model.layer_param_grad(l, &g_mods[l]))
        .collect();
    Ok((loss_sum * inv_b, correct, g_params))
}

/// Trains a float-precision model with the same loop as the discrete
/// trainer (the temperature schedule only affects reporting rows; the float
/// path has no relaxation). Returns the loss curves.
pub fn train_float<T: Real>(
    model: &mut FloatDonnModel<T>,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    float_train_loop(model, train, test, cfg, None).map(|(report, _, _)| report)
}

/// Loss curves plus the final optimizer state, for checkpointing.
pub struct FloatTrainOutcome<T: Real> {
    pub report: TrainReport,
    pub adam: Vec<AdamState<T>>,
}

pub fn train_float_full<T: Real>(
    model: &mut FloatDonnModel<T>,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<FloatTrainOutcome<T>> {
    float_train_loop(model, train, test, cfg, None)
        .map(|(report, _, adam)| FloatTrainOutcome { report, adam })
}

/// Result of a quantization-aware training run.
pub struct QatOutcome<T: Real> {
    pub model: DonnModel<T>,
    pub report: TrainReport,
    /// How many times the voltages were projected during training (the
    /// final projection included).
    pub projections: usize,
}

/// Quantization-aware training: continuous training with the voltages
/// projected onto the nearest feasible level every `quantize_every`
/// processed samples (default: once per epoch, i.e. every `train.len()`
/// samples). The final model is projected.
pub fn qat_train<T: Real>(
    model: &mut FloatDonnModel<T>,
    tables: &[DeviceResponseTable],
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    quantize_every: Option<usize>,
) -> Result<QatOutcome<T>> {
    if model.kind != FloatParam::Voltage {
        return Err(DonnError::Quantization(
            "QAT projects voltages; the model is phase-parameterized".into(),
        ));
    }
    if tables.len() != model.depth() {
        return Err(DonnError::Quantization(format!(
            "{} device tables for {} layers",
            tables.len(),
            model.depth()
        )));
    }
    let every = quantize_every.unwrap_or(train.len()).max(1);
    let (report, projections, _) = float_train_loop(model, train, test, cfg, Some((tables, every)))?;
    let discrete = ptq_round(model, tables)?;
    // leave the float model at the projected point as well
    project_voltages(model, tables);
    Ok(QatOutcome {
        model: discrete,
        report,
        projections: projections + 1,
    })
}

fn float_train_loop<T: Real>(
    model: &mut FloatDonnModel<T>,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    project: Option<(&[DeviceResponseTable], usize)>,
) -> Result<(TrainReport, usize, Vec<AdamState<T>>)> {
    cfg.schedule.validate()?;
    if !(cfg.learning_rate >= 0.0) {
        return Err(DonnError::Config(format!(
            "learning rate must be non-negative, got {}",
            cfg.learning_rate
        )));
    }
    let engine = Engine::<T> {
        tf: crate::optics::make_transfer_function(&model.optics)?,
        detector: model.detector.clone(),
        loss: cfg.loss,
        exec: cfg.exec,
    };
    let n = model.optics.grid_size;
    let pitch = model.optics.pixel_pitch;
    let mut adam: Vec<AdamState<T>> = model
        .layers
        .iter()
        .map(|l| AdamState::new(l.len()))
        .collect();
    let mut report = TrainReport::default();
    let mut iter = 0usize;
    let mut projections = 0usize;
    let mut samples_since_projection = 0usize;

    for epoch in 0..cfg.epochs {
        let tau = tau_at(&cfg.schedule, epoch);
        let batches = epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch, cfg.shuffle)?;
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;

        for idxs in &batches {
            let fields = idxs
                .iter()
                .map(|&i| encode_sample::<T>(train, i, n, pitch))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<u8> = idxs.iter().map(|&i| train.label(i)).collect();

            let (loss, correct, g_params) = float_loss_and_grad(&engine, model, &fields, &labels)?;
            let batch_loss = loss.to64();
            if !batch_loss.is_finite() {
                return Err(DonnError::NonFinite(format!(
                    "loss at epoch {epoch} iter {iter}"
                )));
            }
            epoch_loss += batch_loss * labels.len() as f64;
            epoch_correct += correct;

            for l in 0..model.depth() {
                let params = model.layers[l].as_slice_mut().expect("standard layout");
                let grads = g_params[l].as_slice().expect("standard layout");
                adam[l].step(params, grads, cfg.learning_rate)?;
            }

            if let Some((tables, every)) = project {
                samples_since_projection += labels.len();
                if samples_since_projection >= every {
                    samples_since_projection = 0;
                    project_voltages(model, tables);
                    projections += 1;
                }
            }

            report.iters.push(IterRow {
                epoch,
                iter,
                train_loss: batch_loss,
                tau,
            });
            iter += 1;
        }

        let stats = evaluate_compiled(&model.compile()?, test, cfg.loss, cfg.exec)?;
        report.epochs.push(EpochRow {
            epoch,
            iter: iter.saturating_sub(1),
            train_loss: epoch_loss / train.len() as f64,
            test_loss: stats.loss,
            train_acc: epoch_correct as f64 / train.len() as f64,
            test_acc: stats.accuracy,
            tau,
        });
    }
    Ok((report, projections, adam))
}

fn project_voltages<T: Real>(model: &mut FloatDonnModel<T>, tables: &[DeviceResponseTable]) {
    for (layer, table) in model.layers.iter_mut().zip(tables) {
        for v in layer.iter_mut() {
            let level = table.nearest_level(v.to64());
            *v = T::of(table.control()[level]);
        }
    }
}

fn hard_logits<T: Real>(n: usize, k: usize, selection: impl Fn(usize, usize) -> usize) -> Array3<T> {
    let mut logits = Array3::zeros((n, n, k));
    for i in 0..n {
        for j in 0..n {
            logits[[i, j, selection(i, j)]] = T::one();
        }
    }
    logits
}

/// Rounds a trained voltage-parameterized model to the nearest feasible
/// level per pixel (clamped at the range ends, ties to the lower level) and
/// expresses the result as a hard-selection discrete model.
pub fn ptq_round<T: Real>(
    model: &FloatDonnModel<T>,
    tables: &[DeviceResponseTable],
) -> Result<DonnModel<T>> {
    if model.kind != FloatParam::Voltage {
        return Err(DonnError::Quantization(
            "PTQ rounds voltages; the model is phase-parameterized".into(),
        ));
    }
    if tables.len() != model.depth() {
        return Err(DonnError::Quantization(format!(
            "{} device tables for {} layers",
            tables.len(),
            model.depth()
        )));
    }
    let n = model.optics.grid_size;
    let layers = model
        .layers
        .iter()
        .zip(tables)
        .map(|(params, table)| ModulationLayerParams {
            logits: hard_logits(n, table.levels(), |i, j| {
                table.nearest_level(params[[i, j]].to64())
            }),
            device: table.clone(),
        })
        .collect();
    Ok(DonnModel {
        layers,
        optics: model.optics.clone(),
        detector: model.detector.clone(),
    })
}

/// k-means clustering of a flat weight vector: seeded k-means++ style
/// initialization, Lloyd iterations until assignments stabilize (or 300
/// iterations).
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub centers: Vec<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

pub fn wsq_kmeans(weights: &[f64], k: usize, seed: u64) -> Result<ClusterModel> {
    let mut distinct: Vec<f64> = weights.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(DonnError::Quantization(format!(
            "{} distinct values cannot form {k} clusters",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = weights.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(weights[rng.random_range(0..n)]);
    let mut d2 = vec![0.0f64; n];
    while centers.len() < k {
        let mut total = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            let d = centers
                .iter()
                .map(|&c| (w - c).powi(2))
                .fold(f64::INFINITY, f64::min);
            d2[i] = d;
            total += d;
        }
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            weights[pick]
        } else {
            // all points coincide with a center; fall back to a distinct value
            *distinct
                .iter()
                .find(|v| !centers.contains(v))
                .expect("checked distinct count")
        };
        centers.push(next);
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, &w) in weights.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, &ctr) in centers.iter().enumerate() {
                let d = (w - ctr).powi(2);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0f64; k];
        let mut counts = vec![0usize; k];
        for (i, &w) in weights.iter().enumerate() {
            sums[assignment[i]] += w;
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }

    let inertia = weights
        .iter()
        .zip(&assignment)
        .map(|(&w, &a)| (w - centers[a]).powi(2))
        .sum();
    Ok(ClusterModel {
        centers,
        assignment,
        inertia,
    })
}

/// Per-layer k-means over the phase weights of a float model.
pub fn wsq_cluster_layers<T: Real>(
    model: &FloatDonnModel<T>,
    k: usize,
    seed: u64,
) -> Result<Vec<ClusterModel>> {
    if model.kind != FloatParam::Phase {
        return Err(DonnError::Quantization(
            "WSQ clusters phase weights; the model is voltage-parameterized".into(),
        ));
    }
    model
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let flat: Vec<f64> = layer.iter().map(|v| v.to64()).collect();
            wsq_kmeans(&flat, k, seed.wrapping_add(l as u64))
        })
        .collect()
}

/// The quantized-but-not-yet-feasible model ("WSQ w/o post-processing"):
/// every weight replaced by its cluster center.
pub fn wsq_quantized_float<T: Real>(
    model: &FloatDonnModel<T>,
    clusters: &[ClusterModel],
) -> Result<FloatDonnModel<T>> {
    if clusters.len() != model.depth() {
        return Err(DonnError::Quantization(format!(
            "{} cluster models for {} layers",
            clusters.len(),
            model.depth()
        )));
    }
    let mut out = model.clone();
    for (layer, cm) in out.layers.iter_mut().zip(clusters) {
        for (v, &a) in layer.iter_mut().zip(&cm.assignment) {
            *v = T::of(cm.centers[a]);
        }
    }
    Ok(out)
}

/// Feasibility post-processing: negative centers map to the level whose
/// phase is nearest zero; non-negative centers map to the level with the
/// nearest phase. The result is a hard-selection discrete model.
pub fn wsq_postprocess<T: Real>(
    model: &FloatDonnModel<T>,
    clusters: &[ClusterModel],
    table: &DeviceResponseTable,
) -> Result<DonnModel<T>> {
    if model.kind != FloatParam::Phase {
        return Err(DonnError::Quantization(
            "WSQ post-processing applies to phase-parameterized models".into(),
        ));
    }
    if clusters.len() != model.depth() {
        return Err(DonnError::Quantization(format!(
            "{} cluster models for {} layers",
            clusters.len(),
            model.depth()
        )));
    }
    let n = model.optics.grid_size;
    let layers = clusters
        .iter()
        .map(|cm| {
            let center_level: Vec<usize> = cm
                .centers
                .iter()
                .map(|&c| {
                    if c < 0.0 {
                        table.nearest_phase_level(0.0)
                    } else {
                        table.nearest_phase_level(c)
                    }
                })
                .collect();
            ModulationLayerParams {
                logits: hard_logits(n, table.levels(), |i, j| {
                    center_level[cm.assignment[i * n + j]]
                }),
                device: table.clone(),
            }
        })
        .collect();
    Ok(DonnModel {
        layers,
        optics: model.optics.clone(),
        detector: model.detector.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyfit_recovers_exact_polynomial() {
        // points on 2 - x + 0.5 x^2, degree 2 -> residual ~ 0
        let table = DeviceResponseTable::new(
            (0..5).map(|v| v as f64).collect(),
            (0..5).map(|v| 2.0 - v as f64 + 0.5 * (v * v) as f64).collect(),
            vec![0.0; 5],
        )
        .unwrap();
        let resp = fit_voltage_response(&table, 2).unwrap();
        assert!(resp.amp_residual < 1e-10, "residual {}", resp.amp_residual);
        assert!((resp.amplitude(3.0) - (2.0 - 3.0 + 4.5)).abs() < 1e-9);
    }

    #[test]
    fn degree_k_minus_one_interpolates() {
        let table = DeviceResponseTable::fixture_8level();
        let resp = fit_voltage_response(&table, 7).unwrap();
        for (i, &c) in table.control().iter().enumerate() {
            assert!(
                (resp.amplitude(c) - table.amplitude()[i]).abs() < 1e-6,
                "amp at level {i}"
            );
            assert!(
                (resp.phase_at(c) - table.phase()[i]).abs() < 1e-6,
                "phase at level {i}"
            );
        }
    }

    #[test]
    fn fit_requires_more_points_than_degree() {
        let table = DeviceResponseTable::fixture_8level();
        assert!(fit_voltage_response(&table, 8).is_err());
        assert!(fit_voltage_response(&table, 3).is_ok());
    }

    #[test]
    fn derived_tables_have_requested_levels() {
        let base = DeviceResponseTable::fixture_8level();
        for levels in [12usize, 16] {
            let t = derived_table(&base, levels).unwrap();
            assert_eq!(t.levels(), levels);
            assert!(t.amplitude().iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn kmeans_exact_on_repeated_distinct_values() {
        let mut weights = Vec::new();
        for &v in &[-1.5f64, 0.25, 2.0] {
            weights.extend(std::iter::repeat(v).take(40));
        }
        let cm = wsq_kmeans(&weights, 3, 7).unwrap();
        assert!(cm.inertia < 1e-24, "inertia {}", cm.inertia);
        let mut centers = cm.centers.clone();
        centers.sort_by(f64::total_cmp);
        for (c, e) in centers.iter().zip([-1.5, 0.25, 2.0]) {
            assert!((c - e).abs() < 1e-12);
        }
        // every weight assigned to its nearest center
        for (&w, &a) in weights.iter().zip(&cm.assignment) {
            let d_own = (w - cm.centers[a]).abs();
            for &c in &cm.centers {
                assert!(d_own <= (w - c).abs() + 1e-12);
            }
        }
    }

    #[test]
    fn kmeans_rejects_too_few_distinct() {
        let weights = vec![1.0f64; 50];
        assert!(wsq_kmeans(&weights, 2, 0).is_err());
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut weights = Vec::new();
        let n_half = 4000;
        for _ in 0..n_half {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            weights.push(-2.0 + 0.3 * g);
        }
        for _ in 0..n_half {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            weights.push(3.0 + 0.3 * g);
        }
        let cm = wsq_kmeans(&weights, 2, 5).unwrap();
        let mut centers = cm.centers.clone();
        centers.sort_by(f64::total_cmp);
        let bound = 3.0 * 0.3 / (n_half as f64).sqrt();
        assert!((centers[0] + 2.0).abs() < bound, "center {}", centers[0]);
        assert!((centers[1] - 3.0).abs() < bound, "center {}", centers[1]);
    }

    #[test]
    fn wsq_postprocess_maps_negative_centers_toward_zero_phase() {
        let table = DeviceResponseTable::fixture_8level();
        let optics = PropagationConfig {
            wavelength: 532e-9,
            distance: 0.03,
            grid_size: 20,
            pixel_pitch: 36e-6,
            pad_factor: 1,
        };
        let layout = DetectorLayout::evenly_spaced(20).unwrap();
        let mut model =
            FloatDonnModel::<f64>::new(FloatParam::Phase, optics, layout, vec![], 1).unwrap();
        // half the pixels at -1.3, half at 1.95 (== the phase of level 3)
        for (i, v) in model.layers[0].iter_mut().enumerate() {
            *v = if i % 2 == 0 { -1.3 } else { 1.95 };
        }
        let clusters = wsq_cluster_layers(&model, 2, 3).unwrap();
        assert!(clusters[0].centers.iter().any(|&c| c < 0.0));

        let discrete = wsq_postprocess(&model, &clusters, &table).unwrap();
        let zero_level = table.nearest_phase_level(0.0);
        assert_eq!(zero_level, 0);
        let sels = discrete.inference_selections().unwrap();
        for ((i, j), &level) in sels[0].indexed_iter() {
            let idx = i * 20 + j;
            if idx % 2 == 0 {
                assert_eq!(level, 0, "negative center must land at phase nearest 0");
            } else {
                assert_eq!(level, 3, "center equal to a feasible phase keeps its level");
            }
        }
    }
}
