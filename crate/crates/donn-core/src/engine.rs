//! The L-layer forward pipeline (encode -> [propagate -> modulate] x L ->
//! propagate -> detect), full reverse-mode gradients chained from the
//! per-stage vjps, and the Adam training loop.
//!
//! Straight-through batching: the modulation is a network parameter, so one
//! noise draw per layer is shared by every sample in a batch. The reported
//! forward detections come from the hard selections; the gradient is the
//! exact gradient of the soft surrogate (the same fixed noise, soft mixing),
//! which is what the finite-difference oracles compare against.
//!
//! Batch samples are processed in fixed-size chunks whose partial results
//! are folded in chunk order, so training trajectories are bit-identical
//! between sequential and parallel execution.

use std::io::Write;
use std::path::PathBuf;

use ndarray::{Array2, Array3};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{encode_sample, epoch_batches, Dataset};
use crate::error::{DonnError, Result};
use crate::exec::{map_chunks, ExecMode};
use crate::field::ComplexField;
use crate::gumbel::{
    build_modulation, gumbel_softmax, sample_gumbel_from, straight_through_forward, GumbelNoise,
    SelectMode, SelectionPath, StCache,
};
use crate::model::{CompiledModel, DonnModel};
use crate::optics::{
    detect, detect_vjp, make_transfer_function, modulate, modulate_vjp, propagate, propagate_vjp,
    DetectorLayout, TransferFunction,
};
use crate::optim::AdamState;
use crate::real::Real;
use crate::schedule::{tau_at, TemperatureSchedule};

/// Training loss. The default normalizes detector sums with a softmax before
/// the MSE against the one-hot label, matching how confidence is evaluated;
/// `RawMse` compares raw intensity sums instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    SoftmaxMse,
    RawMse,
}

/// Full experiment hyperparameters for [`Engine::fit`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: TemperatureSchedule,
    pub seed: u64,
    pub loss: LossKind,
    pub exec: ExecMode,
    pub shuffle: bool,
    /// When set, per-epoch checkpoints and the loss-curve CSV are written
    /// here.
    pub out_dir: Option<PathBuf>,
    /// Digest of the experiment configuration, embedded in every artifact.
    pub config_digest: [u8; 32],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 100,
            batch_size: 500,
            schedule: TemperatureSchedule::default_linear(),
            seed: 0,
            loss: LossKind::SoftmaxMse,
            exec: ExecMode::Parallel,
            shuffle: true,
            out_dir: None,
            config_digest: [0; 32],
        }
    }
}

/// Per-sample intermediate fields retained for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct SampleCache<T: Real> {
    /// Field arriving at each modulation layer (after the propagation into
    /// it).
    pre_mod: Vec<ComplexField<T>>,
    /// Field at the detector plane.
    final_field: ComplexField<T>,
}

/// Runs one sample through the optical stack with the given per-layer
/// modulations.
pub(crate) fn pipeline_forward<T: Real>(
    input: &ComplexField<T>,
    mods: &[Array2<Complex<T>>],
    tf: &TransferFunction<T>,
    detector: &DetectorLayout,
    want_cache: bool,
) -> Result<(Vec<T>, Option<SampleCache<T>>)> {
    let mut pre_mod = Vec::with_capacity(if want_cache { mods.len() } else { 0 });
    let mut field = input.clone();
    for (l, m) in mods.iter().enumerate() {
        field = propagate(&field, tf)?;
        check_finite(&field, l)?;
        if want_cache {
            pre_mod.push(field.clone());
        }
        field = modulate(&field, m)?;
    }
    field = propagate(&field, tf)?;
    check_finite(&field, mods.len())?;
    let detections = detect(&field, detector)?;
    let cache = want_cache.then(|| SampleCache {
        pre_mod,
        final_field: field,
    });
    Ok((detections, cache))
}

fn check_finite<T: Real>(f: &ComplexField<T>, layer: usize) -> Result<()> {
    if f.data()
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(DonnError::NonFinite(format!(
            "field after propagation into layer {layer}"
        )));
    }
    Ok(())
}

/// Backward through the stack: detector cotangent in, per-layer modulation
/// cotangents out.
pub(crate) fn pipeline_backward<T: Real>(
    cache: &SampleCache<T>,
    mods: &[Array2<Complex<T>>],
    tf: &TransferFunction<T>,
    detector: &DetectorLayout,
    g_detections: &[T],
) -> Result<Vec<Array2<Complex<T>>>> {
    let mut g_field = detect_vjp(g_detections, &cache.final_field, detector)?;
    g_field = propagate_vjp(&g_field, tf)?;
    let mut g_mods = vec![Array2::zeros((0, 0)); mods.len()];
    for l in (0..mods.len()).rev() {
        let (g_in, g_m) = modulate_vjp(&g_field, &cache.pre_mod[l], &mods[l])?;
        g_mods[l] = g_m;
        g_field = propagate_vjp(&g_in, tf)?;
    }
    Ok(g_mods)
}

/// Numerically stable softmax of a detection row.
pub fn softmax<T: Real>(d: &[T]) -> Vec<T> {
    let max = d.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = d.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-sample loss and its cotangent with respect to the detections.
///
/// SoftmaxMse: `p = softmax(d)`, `loss = sum_c (p_c - onehot_c)^2 / C`.
pub fn sample_loss<T: Real>(detections: &[T], label: u8, kind: LossKind) -> Result<(T, Vec<T>)> {
    let c = detections.len();
    if (label as usize) >= c {
        return Err(DonnError::LabelOutOfRange(label));
    }
    let inv_c = T::of(1.0 / c as f64);
    let two = T::of(2.0);
    match kind {
        LossKind::SoftmaxMse => {
            let p = softmax(detections);
            let mut loss = T::zero();
            let mut dl_dp = vec![T::zero(); c];
            for i in 0..c {
                let t = if i == label as usize { T::one() } else { T::zero() };
                let d = p[i] - t;
                loss += d * d * inv_c;
                dl_dp[i] = two * d * inv_c;
            }
            // softmax jacobian: dL/dd_j = p_j (dL/dp_j - sum_i dL/dp_i p_i)
            let dot: T = dl_dp.iter().zip(p.iter()).map(|(&a, &b)| a * b).sum();
            let g = (0..c).map(|j| p[j] * (dl_dp[j] - dot)).collect();
            Ok((loss, g))
        }
        LossKind::RawMse => {
            let mut loss = T::zero();
            let mut g = vec![T::zero(); c];
            for i in 0..c {
                let t = if i == label as usize { T::one() } else { T::zero() };
                let d = detections[i] - t;
                loss += d * d * inv_c;
                g[i] = two * d * inv_c;
            }
            Ok((loss, g))
        }
    }
}

fn argmax_slice<T: Real>(d: &[T]) -> usize {
    let mut best = 0usize;
    for (i, v) in d.iter().enumerate().skip(1) {
        if *v > d[best] {
            best = i;
        }
    }
    best
}

/// Forward-pass cache for [`Engine::loss_and_grad`].
pub struct BatchCache<T: Real> {
    soft_mods: Vec<Array2<Complex<T>>>,
    st: Vec<StCache<T>>,
    samples: Vec<SampleCache<T>>,
    /// Detections of the soft surrogate path, one row per sample.
    pub soft_detections: Array2<T>,
}

/// Loss value, surrogate loss, and per-layer logits gradients for one batch.
pub struct LossGrad<T: Real> {
    /// Mean loss of the batch as forwarded (hard selections).
    pub loss: T,
    /// Mean loss of the soft surrogate the gradient differentiates.
    pub surrogate_loss: T,
    pub g_logits: Vec<Array3<T>>,
}

/// Bound pipeline: precomputed transfer function, detector layout, loss and
/// execution mode.
pub struct Engine<T: Real> {
    pub tf: TransferFunction<T>,
    pub detector: DetectorLayout,
    pub loss: LossKind,
    pub exec: ExecMode,
}

impl<T: Real> Engine<T> {
    pub fn for_model(model: &DonnModel<T>, loss: LossKind, exec: ExecMode) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            tf: make_transfer_function(&model.optics)?,
            detector: model.detector.clone(),
            loss,
            exec,
        })
    }

    /// Batched forward pass.
    ///
    /// Train mode: builds the per-layer straight-through modulations from
    /// `noise` (one draw per layer, shared across the batch), returns the
    /// hard-path detections and a cache holding the soft-path stacks.
    /// Inference mode: noise-free argmax selections, no cache.
    pub fn forward_pass(
        &self,
        model: &DonnModel<T>,
        batch: &[ComplexField<T>],
        noise: &[GumbelNoise<T>],
        tau: T,
        mode: SelectMode,
    ) -> Result<(Array2<T>, Option<BatchCache<T>>)> {
        let classes = self.detector.class_count();
        match mode {
            SelectMode::Inference => {
                let mods = inference_modulations(model)?;
                let dets = self.batch_detections(batch, &mods)?;
                Ok((dets, None))
            }
            SelectMode::Train => {
                if noise.len() != model.depth() {
                    return Err(DonnError::ShapeMismatch(format!(
                        "{} noise draws for {} layers",
                        noise.len(),
                        model.depth()
                    )));
                }
                let mut hard_mods = Vec::with_capacity(model.depth());
                let mut soft_mods = Vec::with_capacity(model.depth());
                let mut st = Vec::with_capacity(model.depth());
                for (layer, nz) in model.layers.iter().zip(noise) {
                    let (h, s, cache) =
                        straight_through_forward(&layer.logits, nz, tau, &layer.device)?;
                    hard_mods.push(h);
                    soft_mods.push(s);
                    st.push(cache);
                }

                let results = map_chunks(batch.len(), self.exec, |range| {
                    let mut rows = Vec::with_capacity(range.len());
                    for i in range {
                        let (hard_det, _) = pipeline_forward(
                            &batch[i],
                            &hard_mods,
                            &self.tf,
                            &self.detector,
                            false,
                        )?;
                        let (soft_det, cache) = pipeline_forward(
                            &batch[i],
                            &soft_mods,
                            &self.tf,
                            &self.detector,
                            true,
                        )?;
                        rows.push((hard_det, soft_det, cache.expect("cache requested")));
                    }
                    Ok::<_, DonnError>(rows)
                });

                let mut detections = Array2::zeros((batch.len(), classes));
                let mut soft_detections = Array2::zeros((batch.len(), classes));
                let mut samples = Vec::with_capacity(batch.len());
                let mut row = 0usize;
                for chunk in results {
                    for (hard_det, soft_det, cache) in chunk? {
                        for c in 0..classes {
                            detections[[row, c]] = hard_det[c];
                            soft_detections[[row, c]] = soft_det[c];
                        }
                        samples.push(cache);
                        row += 1;
                    }
                }
                Ok((
                    detections,
                    Some(BatchCache {
                        soft_mods,
                        st,
                        samples,
                        soft_detections,
                    }),
                ))
            }
        }
    }

    /// Mean batch loss plus per-layer logits gradients.
    ///
    /// The loss is computed from the detections as forwarded; the gradient
    /// chains detector -> modulation -> selection vjps through the cached
    /// soft stacks and is averaged over the batch.
    pub fn loss_and_grad(
        &self,
        detections: &Array2<T>,
        labels: &[u8],
        cache: &BatchCache<T>,
    ) -> Result<LossGrad<T>> {
        let b = labels.len();
        if detections.nrows() != b || cache.samples.len() != b {
            return Err(DonnError::ShapeMismatch(format!(
                "{} labels, {} detection rows, {} cached samples",
                b,
                detections.nrows(),
                cache.samples.len()
            )));
        }
        let inv_b = T::of(1.0 / b as f64);
        let layers = cache.soft_mods.len();

        let partials = map_chunks(b, self.exec, |range| {
            let mut g_mods: Vec<Array2<Complex<T>>> = cache
                .soft_mods
                .iter()
                .map(|m| Array2::zeros(m.dim()))
                .collect();
            let mut hard_loss = T::zero();
            let mut soft_loss = T::zero();
            for i in range {
                let det_row: Vec<T> = detections.row(i).to_vec();
                let (hl, _) = sample_loss(&det_row, labels[i], self.loss)?;
                hard_loss += hl;

                let soft_row: Vec<T> = cache.soft_detections.row(i).to_vec();
                let (sl, mut g_det) = sample_loss(&soft_row, labels[i], self.loss)?;
                soft_loss += sl;
                for g in g_det.iter_mut() {
                    *g *= inv_b;
                }
                let sample_g = pipeline_backward(
                    &cache.samples[i],
                    &cache.soft_mods,
                    &self.tf,
                    &self.detector,
                    &g_det,
                )?;
                for (acc, g) in g_mods.iter_mut().zip(sample_g) {
                    *acc += &g;
                }
            }
            Ok::<_, DonnError>((g_mods, hard_loss, soft_loss))
        });

        let mut g_mods: Vec<Array2<Complex<T>>> = cache
            .soft_mods
            .iter()
            .map(|m| Array2::zeros(m.dim()))
            .collect();
        let mut hard_loss = T::zero();
        let mut soft_loss = T::zero();
        for p in partials {
            let (g, hl, sl) = p?;
            for (acc, gl) in g_mods.iter_mut().zip(g) {
                *acc += &gl;
            }
            hard_loss += hl;
            soft_loss += sl;
        }

        let mut g_logits = Vec::with_capacity(layers);
        for l in 0..layers {
            g_logits.push(crate::gumbel::gumbel_softmax_vjp(&g_mods[l], &cache.st[l])?);
        }
        Ok(LossGrad {
            loss: hard_loss * inv_b,
            surrogate_loss: soft_loss * inv_b,
            g_logits,
        })
    }

    /// Mean loss of the soft surrogate path held in a train-mode cache. This
    /// is the scalar the analytic gradient differentiates, so it is what
    /// finite-difference checks evaluate.
    pub fn surrogate_loss(&self, cache: &BatchCache<T>, labels: &[u8]) -> Result<T> {
        if cache.soft_detections.nrows() != labels.len() {
            return Err(DonnError::ShapeMismatch(format!(
                "{} labels for {} cached rows",
                labels.len(),
                cache.soft_detections.nrows()
            )));
        }
        let mut acc = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row: Vec<T> = cache.soft_detections.row(i).to_vec();
            let (l, _) = sample_loss(&row, label, self.loss)?;
            acc += l;
        }
        Ok(acc * T::of(1.0 / labels.len() as f64))
    }

    /// Detections for a batch against fixed modulations (no cache).
    fn batch_detections(
        &self,
        batch: &[ComplexField<T>],
        mods: &[Array2<Complex<T>>],
    ) -> Result<Array2<T>> {
        let classes = self.detector.class_count();
        let results = map_chunks(batch.len(), self.exec, |range| {
            let mut rows = Vec::with_capacity(range.len());
            for i in range {
                let (det, _) = pipeline_forward(&batch[i], mods, &self.tf, &self.detector, false)?;
                rows.push(det);
            }
            Ok::<_, DonnError>(rows)
        });
        let mut out = Array2::zeros((batch.len(), classes));
        let mut row = 0usize;
        for chunk in results {
            for det in chunk? {
                for c in 0..classes {
                    out[[row, c]] = det[c];
                }
                row += 1;
            }
        }
        Ok(out)
    }
}

fn inference_modulations<T: Real>(model: &DonnModel<T>) -> Result<Vec<Array2<Complex<T>>>> {
    model
        .layers
        .iter()
        .map(|layer| {
            let sel = gumbel_softmax(
                &layer.logits,
                &GumbelNoise::zeros(model.grid_size(), layer.device.levels()),
                T::one(),
                SelectMode::Inference,
            )?;
            build_modulation(&sel, &layer.device, SelectionPath::Hard)
        })
        .collect()
}

/// Mean loss and accuracy of a frozen model over a dataset, streaming
/// samples through the shared inference pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

pub fn evaluate_compiled<T: Real>(
    model: &CompiledModel<T>,
    ds: &Dataset,
    loss: LossKind,
    exec: ExecMode,
) -> Result<EvalStats> {
    if ds.is_empty() {
        return Err(DonnError::Dataset("empty dataset".into()));
    }
    let n = model.optics.grid_size;
    let pitch = model.optics.pixel_pitch;
    let partials = map_chunks(ds.len(), exec, |range| {
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for i in range {
            let field = encode_sample::<T>(ds, i, n, pitch)?;
            let (det, _) =
                pipeline_forward(&field, &model.modulations, &model.transfer, &model.detector, false)?;
            let (l, _) = sample_loss(&det, ds.label(i), loss)?;
            loss_sum += l.to64();
            if argmax_slice(&det) == ds.label(i) as usize {
                correct += 1;
            }
        }
        Ok::<_, DonnError>((loss_sum, correct))
    });
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for p in partials {
        let (l, c) = p?;
        loss_sum += l;
        correct += c;
    }
    Ok(EvalStats {
        loss: loss_sum / ds.len() as f64,
        accuracy: correct as f64 / ds.len() as f64,
        correct,
        total: ds.len(),
    })
}

/// One per-iteration loss record.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRow {
    pub epoch: usize,
    pub iter: usize,
    pub train_loss: f64,
    pub tau: f64,
}

/// One per-epoch summary record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub iter: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub tau: f64,
}

/// Loss and accuracy curves at both batch and epoch granularity.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub iters: Vec<IterRow>,
    pub epochs: Vec<EpochRow>,
}

impl TrainReport {
    /// `epoch,iter,train_loss,test_loss,train_acc,test_acc,tau`; iteration
    /// rows leave the test columns empty, epoch rows carry the full summary.
    pub fn write_csv<W: Write>(&self, w: &mut W, digest: &[u8; 32], seed: u64) -> std::io::Result<()> {
        writeln!(w, "# digest={} seed={seed}", hex(digest))?;
        writeln!(w, "epoch,iter,train_loss,test_loss,train_acc,test_acc,tau")?;
        let mut ei = self.epochs.iter().peekable();
        for row in &self.iters {
            writeln!(
                w,
                "{},{},{},,,,{}",
                row.epoch, row.iter, row.train_loss, row.tau
            )?;
            if let Some(e) = ei.peek() {
                if e.epoch == row.epoch && e.iter == row.iter {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        e.epoch, e.iter, e.train_loss, e.test_loss, e.train_acc, e.test_acc, e.tau
                    )?;
                    ei.next();
                }
            }
        }
        Ok(())
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_acc)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// State snapshot produced once per epoch by [`Engine::fit`].
pub struct FitSnapshot<'a, T: Real> {
    pub epoch: usize,
    pub model: &'a DonnModel<T>,
    pub adam: &'a [AdamState<T>],
    pub rng_word_pos: u128,
    pub noise_draws: u64,
}

impl<T: Real> Engine<T> {
    /// Runs the full training loop; returns the loss curves. When
    /// `cfg.out_dir` is set, writes `loss_curve.csv` and a checkpoint per
    /// epoch via `snapshot_sink`.
    pub fn fit(
        &self,
        model: &mut DonnModel<T>,
        train: &Dataset,
        test: &Dataset,
        cfg: &TrainConfig,
        mut snapshot_sink: Option<&mut dyn FnMut(FitSnapshot<'_, T>) -> Result<()>>,
    ) -> Result<TrainReport> {
        model.validate()?;
        cfg.schedule.validate()?;
        // lr = 0 is a valid no-op run (useful as a control); negatives are not
        if !(cfg.learning_rate >= 0.0) {
            return Err(DonnError::Config(format!(
                "learning rate must be non-negative, got {}",
                cfg.learning_rate
            )));
        }
        if let Some(total) = cfg.schedule.total_stage_epochs() {
            if cfg.epochs > 0 && total != cfg.epochs {
                return Err(DonnError::Config(format!(
                    "schedule stages cover {total} epochs but training runs {}",
                    cfg.epochs
                )));
            }
        }
        let n = model.grid_size();
        let pitch = model.optics.pixel_pitch;
        let mut adam: Vec<AdamState<T>> = model
            .layers
            .iter()
            .map(|l| AdamState::new(l.logits.len()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut draws = 0u64;
        let mut report = TrainReport::default();
        let mut iter = 0usize;

        for epoch in 0..cfg.epochs {
            let tau = T::of(tau_at(&cfg.schedule, epoch));
            let batches = epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch, cfg.shuffle)?;
            let mut epoch_loss = 0.0f64;
            let mut epoch_correct = 0usize;

            for idxs in &batches {
                let noise: Vec<GumbelNoise<T>> = model
                    .layers
                    .iter()
                    .map(|l| {
                        let nz = sample_gumbel_from(n, l.device.levels(), &mut rng, draws);
                        draws += 1;
                        nz
                    })
                    .collect();

                let fields = idxs
                    .iter()
                    .map(|&i| encode_sample::<T>(train, i, n, pitch))
                    .collect::<Result<Vec<_>>>()?;
                let labels: Vec<u8> = idxs.iter().map(|&i| train.label(i)).collect();

                let (dets, cache) =
                    self.forward_pass(model, &fields, &noise, tau, SelectMode::Train)?;
                let cache = cache.expect("train mode caches");
                let lg = self.loss_and_grad(&dets, &labels, &cache)?;
                if !lg.loss.is_finite() || !lg.surrogate_loss.is_finite() {
                    return Err(DonnError::NonFinite(format!(
                        "loss at epoch {epoch} iter {iter}"
                    )));
                }

                for (i, &label) in labels.iter().enumerate() {
                    let row: Vec<T> = dets.row(i).to_vec();
                    if argmax_slice(&row) == label as usize {
                        epoch_correct += 1;
                    }
                }
                epoch_loss += lg.loss.to64() * labels.len() as f64;

                for (layer, (state, g)) in model
                    .layers
                    .iter_mut()
                    .zip(adam.iter_mut().zip(lg.g_logits.iter()))
                {
                    let params = layer.logits.as_slice_mut().expect("standard layout");
                    let grads = g.as_slice().expect("standard layout");
                    state.step(params, grads, cfg.learning_rate)?;
                }

                report.iters.push(IterRow {
                    epoch,
                    iter,
                    train_loss: lg.loss.to64(),
                    tau: tau.to64(),
                });
                iter += 1;
            }

            let compiled = model.compile()?;
            let test_stats = evaluate_compiled(&compiled, test, self.loss, self.exec)?;
            report.epochs.push(EpochRow {
                epoch,
                iter: iter - 1,
                train_loss: epoch_loss / train.len() as f64,
                test_loss: test_stats.loss,
                train_acc: epoch_correct as f64 / train.len() as f64,
                test_acc: test_stats.accuracy,
                tau: tau.to64(),
            });

            if let Some(sink) = snapshot_sink.as_mut() {
                sink(FitSnapshot {
                    epoch,
                    model,
                    adam: &adam,
                    rng_word_pos: rng.get_word_pos(),
                    noise_draws: draws,
                })?;
            }
        }

        if let Some(dir) = &cfg.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| DonnError::io(dir, e))?;
            let path = dir.join("loss_curve.csv");
            let mut f = std::fs::File::create(&path).map_err(|e| DonnError::io(&path, e))?;
            report
                .write_csv(&mut f, &cfg.config_digest, cfg.seed)
                .map_err(|e| DonnError::io(&path, e))?;
        }
        Ok(report)
    }
}
