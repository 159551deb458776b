//! Evaluation: accuracy, the confidence-perturbation analysis, per-layer
//! weight-distribution histograms, and per-plane propagation intensity
//! dumps. Everything runs over a [`CompiledModel`], the same frozen
//! inference path every training method compiles to.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::dataio::{encode_sample, Dataset};
use crate::engine::{evaluate_compiled, pipeline_forward, softmax, LossKind};
use crate::error::{DonnError, Result};
use crate::exec::{map_chunks, ExecMode};
use crate::field::ComplexField;
use crate::model::{CompiledModel, DonnModel};
use crate::optics::{modulate, propagate};
use crate::quant::FloatDonnModel;
use crate::real::Real;

/// Fraction of samples whose argmax detector region matches the label
/// (noise-free inference; ties pick the lowest class index).
pub fn accuracy<T: Real>(model: &CompiledModel<T>, ds: &Dataset, exec: ExecMode) -> Result<f64> {
    evaluate_compiled(model, ds, LossKind::SoftmaxMse, exec).map(|s| s.accuracy)
}

/// Accuracy after the confidence perturbation: for each correctly-classified
/// sample the top softmax probability is reduced by `epsilon` and the other
/// nine outputs gain `epsilon / 9` each, then the argmax is re-taken.
/// Incorrectly-classified samples stay incorrect.
pub fn confidence_eval<T: Real>(
    model: &CompiledModel<T>,
    ds: &Dataset,
    epsilon: f64,
    exec: ExecMode,
) -> Result<f64> {
    if !(0.0..=0.09).contains(&epsilon) {
        return Err(DonnError::Config(format!(
            "epsilon must lie in [0, 0.09], got {epsilon}"
        )));
    }
    if ds.is_empty() {
        return Err(DonnError::Dataset("empty dataset".into()));
    }
    let n = model.optics.grid_size;
    let pitch = model.optics.pixel_pitch;
    let classes = model.detector.class_count();
    let share = epsilon / (classes as f64 - 1.0);

    let partials = map_chunks(ds.len(), exec, |range| {
        let mut correct = 0usize;
        for i in range {
            let field = encode_sample::<T>(ds, i, n, pitch)?;
            let (det, _) =
                pipeline_forward(&field, &model.modulations, &model.transfer, &model.detector, false)?;
            let p: Vec<f64> = softmax(&det).into_iter().map(|x| x.to64()).collect();
            let pred = argmax_f64(&p);
            if pred != ds.label(i) as usize {
                continue;
            }
            let mut q = p;
            for (c, qc) in q.iter_mut().enumerate() {
                if c == pred {
                    *qc -= epsilon;
                } else {
                    *qc += share;
                }
            }
            if argmax_f64(&q) == ds.label(i) as usize {
                correct += 1;
            }
        }
        Ok::<_, DonnError>(correct)
    });
    let mut correct = 0usize;
    for p in partials {
        correct += p?;
    }
    Ok(correct as f64 / ds.len() as f64)
}

fn argmax_f64(d: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, v) in d.iter().enumerate().skip(1) {
        if *v > d[best] {
            best = i;
        }
    }
    best
}

/// One row of the confidence report.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRow {
    pub epsilon: f64,
    pub accuracy: f64,
}

/// Confidence evaluation across a list of perturbation levels.
#[derive(Debug, Clone)]
pub struct ConfidenceReport {
    pub depth: usize,
    pub rows: Vec<ConfidenceRow>,
}

pub const CONFIDENCE_EPSILONS: [f64; 4] = [0.0, 0.01, 0.03, 0.05];

pub fn confidence_report<T: Real>(
    model: &CompiledModel<T>,
    ds: &Dataset,
    epsilons: &[f64],
    exec: ExecMode,
) -> Result<ConfidenceReport> {
    let rows = epsilons
        .iter()
        .map(|&e| {
            confidence_eval(model, ds, e, exec).map(|accuracy| ConfidenceRow {
                epsilon: e,
                accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfidenceReport {
        depth: model.depth(),
        rows,
    })
}

impl ConfidenceReport {
    /// `depth,epsilon,accuracy` rows.
    pub fn write_csv<W: Write>(&self, w: &mut W, digest: &[u8; 32], seed: u64) -> std::io::Result<()> {
        writeln!(w, "# digest={} seed={seed}", crate::engine::hex(digest))?;
        writeln!(w, "depth,epsilon,accuracy")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", self.depth, r.epsilon, r.accuracy)?;
        }
        Ok(())
    }
}

/// Per-layer histogram over the effective phase weights.
#[derive(Debug, Clone)]
pub struct LayerHistogram {
    /// `bins + 1` edges, uniform over the observed range.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct HistogramExport {
    pub layers: Vec<LayerHistogram>,
}

pub const HISTOGRAM_BINS: usize = 64;

fn histogram(values: impl Iterator<Item = f64> + Clone, bins: usize) -> LayerHistogram {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut count = 0usize;
    for v in values.clone() {
        lo = lo.min(v);
        hi = hi.max(v);
        count += 1;
    }
    if count == 0 {
        return LayerHistogram {
            edges: vec![0.0; bins + 1],
            counts: vec![0; bins],
        };
    }
    let span = hi - lo;
    let mut counts = vec![0u64; bins];
    if span == 0.0 {
        // degenerate range: everything in the first bin
        counts[0] = count as u64;
        return LayerHistogram {
            edges: (0..=bins).map(|_| lo).collect(),
            counts,
        };
    }
    for v in values {
        let idx = (((v - lo) / span) * bins as f64) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    let edges = (0..=bins)
        .map(|i| lo + span * i as f64 / bins as f64)
        .collect();
    LayerHistogram { edges, counts }
}

/// Histogram of the selected phase values of a discrete model (inference
/// selections).
pub fn weight_histogram_discrete<T: Real>(model: &DonnModel<T>) -> Result<HistogramExport> {
    let selections = model.inference_selections()?;
    let layers = selections
        .iter()
        .zip(&model.layers)
        .map(|(sel, layer)| {
            let phases = layer.device.phase();
            let values: Vec<f64> = sel.iter().map(|&l| phases[l]).collect();
            histogram(values.into_iter(), HISTOGRAM_BINS)
        })
        .collect();
    Ok(HistogramExport { layers })
}

/// Histogram of the raw continuous weights of a float model.
pub fn weight_histogram_float<T: Real>(model: &FloatDonnModel<T>) -> HistogramExport {
    let layers = model
        .layers
        .iter()
        .map(|layer| {
            let values: Vec<f64> = layer.iter().map(|v| v.to64()).collect();
            histogram(values.into_iter(), HISTOGRAM_BINS)
        })
        .collect();
    HistogramExport { layers }
}

impl HistogramExport {
    /// Writes one `hist_layer{i}.csv` per layer: `bin_lo,bin_hi,count`.
    pub fn write_csv_files(
        &self,
        dir: &Path,
        digest: &[u8; 32],
        seed: u64,
    ) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| DonnError::io(dir, e))?;
        let mut paths = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let path = dir.join(format!("hist_layer{i}.csv"));
            let mut f = std::fs::File::create(&path).map_err(|e| DonnError::io(&path, e))?;
            (|| -> std::io::Result<()> {
                writeln!(f, "# digest={} seed={seed}", crate::engine::hex(digest))?;
                writeln!(f, "bin_lo,bin_hi,count")?;
                for b in 0..layer.counts.len() {
                    writeln!(f, "{},{},{}", layer.edges[b], layer.edges[b + 1], layer.counts[b])?;
                }
                Ok(())
            })()
            .map_err(|e| DonnError::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Per-plane intensity maps for one sample: the encoded input, the field
/// after each propagate+modulate stage, and the detector plane
/// (`depth + 2` maps in total).
pub fn dump_propagation<T: Real>(
    model: &CompiledModel<T>,
    sample: &ComplexField<T>,
) -> Result<Vec<Array2<f64>>> {
    let mut maps = Vec::with_capacity(model.depth() + 2);
    maps.push(sample.intensity());
    let mut field = sample.clone();
    for m in &model.modulations {
        field = propagate(&field, &model.transfer)?;
        field = modulate(&field, m)?;
        maps.push(field.intensity());
    }
    field = propagate(&field, &model.transfer)?;
    maps.push(field.intensity());
    Ok(maps)
}

/// 16-bit binary PGM (P5), normalized to the map's own maximum.
pub fn write_pgm16<W: Write>(w: &mut W, map: &Array2<f64>) -> std::io::Result<()> {
    let (h, wd) = map.dim();
    let max = map.iter().cloned().fold(0.0f64, f64::max);
    writeln!(w, "P5")?;
    writeln!(w, "{wd} {h}")?;
    writeln!(w, "65535")?;
    for &v in map.iter() {
        let scaled = if max > 0.0 {
            ((v / max) * 65535.0).round() as u16
        } else {
            0
        };
        w.write_all(&scaled.to_be_bytes())?;
    }
    Ok(())
}

pub fn write_map_csv<W: Write>(w: &mut W, map: &Array2<f64>) -> std::io::Result<()> {
    for row in map.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Writes `prop_plane{i}.pgm` and `prop_plane{i}.csv` for every plane.
pub fn export_propagation(maps: &[Array2<f64>], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| DonnError::io(dir, e))?;
    let mut paths = Vec::new();
    for (i, map) in maps.iter().enumerate() {
        let pgm = dir.join(format!("prop_plane{i}.pgm"));
        let mut f = std::fs::File::create(&pgm).map_err(|e| DonnError::io(&pgm, e))?;
        write_pgm16(&mut f, map).map_err(|e| DonnError::io(&pgm, e))?;
        let csv = dir.join(format!("prop_plane{i}.csv"));
        let mut f = std::fs::File::create(&csv).map_err(|e| DonnError::io(&csv, e))?;
        write_map_csv(&mut f, map).map_err(|e| DonnError::io(&csv, e))?;
        paths.push(pgm);
        paths.push(csv);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceResponseTable;
    use crate::optics::{DetectorLayout, PropagationConfig};

    fn optics(n: usize) -> PropagationConfig {
        PropagationConfig {
            wavelength: 532e-9,
            distance: 0.03,
            grid_size: n,
            pixel_pitch: 36e-6,
            pad_factor: 1,
        }
    }

    fn gs_model(n: usize, layers: usize) -> DonnModel<f64> {
        DonnModel::new(
            optics(n),
            DetectorLayout::evenly_spaced(n).unwrap(),
            vec![DeviceResponseTable::fixture_8level(); layers],
        )
        .unwrap()
    }

    #[test]
    fn confidence_zero_equals_accuracy() {
        let model = gs_model(16, 1).compile().unwrap();
        let ds = crate::synth::generate(30, 3).unwrap();
        let acc = accuracy(&model, &ds, ExecMode::Sequential).unwrap();
        let c0 = confidence_eval(&model, &ds, 0.0, ExecMode::Sequential).unwrap();
        assert_eq!(acc, c0);
    }

    #[test]
    fn confidence_is_monotone_and_validates_epsilon() {
        let model = gs_model(16, 1).compile().unwrap();
        let ds = crate::synth::generate(30, 4).unwrap();
        let mut prev = f64::INFINITY;
        for &e in &CONFIDENCE_EPSILONS {
            let a = confidence_eval(&model, &ds, e, ExecMode::Sequential).unwrap();
            assert!(a <= prev + 1e-12, "accuracy increased at epsilon {e}");
            prev = a;
        }
        assert!(confidence_eval(&model, &ds, 0.1, ExecMode::Sequential).is_err());
        assert!(confidence_eval(&model, &ds, -0.01, ExecMode::Sequential).is_err());
    }

    #[test]
    fn confidence_flip_example() {
        // p = (0.505, 0.495, 0, ...), eps = 0.01 -> 0.495 + 0.00111 > 0.495:
        // class 2 overtakes, the prediction flips.
        let p = [0.505, 0.495, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let pred = argmax_f64(&p);
        assert_eq!(pred, 0);
        let eps = 0.01;
        let mut q = p;
        for (c, qc) in q.iter_mut().enumerate() {
            if c == pred {
                *qc -= eps;
            } else {
                *qc += eps / 9.0;
            }
        }
        assert_eq!(argmax_f64(&q), 1);
        assert!((q[1] - 0.4961111111111111).abs() < 1e-12);
    }

    #[test]
    fn fresh_model_histogram_mass_at_level_zero_phase() {
        let model = gs_model(16, 2);
        let hist = weight_histogram_discrete(&model).unwrap();
        assert_eq!(hist.layers.len(), 2);
        for layer in &hist.layers {
            let total: u64 = layer.counts.iter().sum();
            assert_eq!(total, 16 * 16);
            // zero logits -> argmax picks level 0 -> all mass in one bin
            assert_eq!(layer.counts[0], 16 * 16);
        }
    }

    #[test]
    fn discrete_histogram_support_is_feasible() {
        let mut model = gs_model(12, 1);
        // push pixels to various levels
        for ((i, j, l), v) in model.layers[0].logits.indexed_iter_mut() {
            *v = if (i * 5 + j * 3) % 8 == l { 4.0 } else { 0.0 };
        }
        let hist = weight_histogram_discrete(&model).unwrap();
        let phases = model.layers[0].device.phase();
        let layer = &hist.layers[0];
        let total: u64 = layer.counts.iter().sum();
        assert_eq!(total, 12 * 12);
        for (b, &c) in layer.counts.iter().enumerate() {
            if c > 0 {
                let lo = layer.edges[b];
                let hi = layer.edges[b + 1];
                assert!(
                    phases.iter().any(|&p| p >= lo - 1e-12 && p <= hi + 1e-12),
                    "bin [{lo}, {hi}] holds no feasible phase"
                );
            }
        }
    }

    #[test]
    fn propagation_dump_has_depth_plus_two_planes() {
        let compiled = gs_model(16, 3).compile().unwrap();
        let sample = ComplexField::constant(16, num_complex::Complex::new(0.5, 0.0), 36e-6).unwrap();
        let maps = dump_propagation(&compiled, &sample).unwrap();
        assert_eq!(maps.len(), 5);

        // L = 0: exactly two maps (input, detector plane)
        let empty = CompiledModel::<f64>::new(
            vec![],
            optics(16),
            DetectorLayout::evenly_spaced(16).unwrap(),
        )
        .unwrap();
        let maps = dump_propagation(&empty, &sample).unwrap();
        assert_eq!(maps.len(), 2);

        let zero = ComplexField::<f64>::zeros(16, 36e-6).unwrap();
        for map in dump_propagation(&compiled, &zero).unwrap() {
            assert!(map.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dump_energy_non_increasing_with_attenuating_devices() {
        // fixture amplitudes are all <= 1, so modulation only attenuates
        let compiled = gs_model(16, 3).compile().unwrap();
        let img = ndarray::Array2::from_elem((16, 16), 0.5f64);
        let sample = crate::dataio::encode(&img, 36e-6).unwrap();
        let maps = dump_propagation(&compiled, &sample).unwrap();
        let energies: Vec<f64> = maps.iter().map(|m| m.iter().sum()).collect();
        for w in energies.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "energy grew: {energies:?}");
        }
    }

    #[test]
    fn pgm_export_shape() {
        let map = Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f64);
        let mut buf = Vec::new();
        write_pgm16(&mut buf, &map).unwrap();
        let header = b"P5\n6 4\n65535\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf.len(), header.len() + 4 * 6 * 2);
        // max value maps to 65535 big-endian at the end
        assert_eq!(&buf[buf.len() - 2..], &[0xff, 0xff]);
    }
}
