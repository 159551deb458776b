//! Full-network gradient validation: the analytic reverse-mode gradient of
//! the soft surrogate loss against central finite differences, on a randomly
//! generated small instance. Finite differences cost two forward passes per
//! parameter, so instance sizes are capped.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::encode;
use crate::device::DeviceResponseTable;
use crate::engine::{Engine, LossKind};
use crate::error::{DonnError, Result};
use crate::exec::ExecMode;
use crate::field::ComplexField;
use crate::gumbel::{sample_gumbel, GumbelNoise, SelectMode};
use crate::model::DonnModel;
use crate::optics::{DetectorLayout, PropagationConfig};
use crate::real::Real;

pub const MAX_GRADCHECK_SIZE: usize = 16;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub params_checked: usize,
}

/// Random device table with `levels` levels, amplitudes in [0.55, 1.0] and
/// phases spread over most of the period.
fn random_table(levels: usize, rng: &mut ChaCha8Rng) -> DeviceResponseTable {
    let control: Vec<f64> = (0..levels).map(|v| v as f64).collect();
    let amplitude: Vec<f64> = (0..levels)
        .map(|_| 0.55 + 0.45 * rng.random::<f64>())
        .collect();
    let phase: Vec<f64> = (0..levels)
        .map(|_| rng.random::<f64>() * 5.8)
        .collect();
    DeviceResponseTable::new(control, amplitude, phase).expect("random table is valid")
}

/// Builds a random instance and compares analytic and central-difference
/// gradients of the soft surrogate loss. `corrupt` deliberately perturbs one
/// analytic component (a negative control hook: the check must then fail).
pub fn gradcheck<T: Real>(
    size: usize,
    layers: usize,
    levels: usize,
    batch: usize,
    seed: u64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    if size > MAX_GRADCHECK_SIZE {
        return Err(DonnError::Config(format!(
            "gradcheck size {size} exceeds the cap of {MAX_GRADCHECK_SIZE} \
             (finite differences run two forward passes per parameter)"
        )));
    }
    if size < 8 {
        return Err(DonnError::Config(format!(
            "gradcheck needs size >= 8 for the detector layout, got {size}"
        )));
    }
    if layers == 0 || levels < 2 || batch == 0 {
        return Err(DonnError::Config(
            "gradcheck needs layers >= 1, levels >= 2, batch >= 1".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let optics = PropagationConfig {
        wavelength: 532e-9,
        distance: 0.05,
        grid_size: size,
        pixel_pitch: 36e-6,
        pad_factor: 1,
    };
    let detector = DetectorLayout::evenly_spaced(size)?;
    let devices: Vec<DeviceResponseTable> =
        (0..layers).map(|_| random_table(levels, &mut rng)).collect();
    let mut model = DonnModel::<T>::new(optics.clone(), detector, devices)?;
    for layer in &mut model.layers {
        for x in layer.logits.iter_mut() {
            *x = T::of(rng.random::<f64>() - 0.5);
        }
    }

    let fields: Vec<ComplexField<T>> = (0..batch)
        .map(|_| {
            let img = Array2::from_shape_fn((size, size), |_| T::of(rng.random::<f64>()));
            encode(&img, optics.pixel_pitch)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = (0..batch).map(|_| rng.random_range(0..10u8)).collect();
    let noise: Vec<GumbelNoise<T>> = (0..layers)
        .map(|l| sample_gumbel(size, levels, seed.wrapping_mul(31).wrapping_add(l as u64)))
        .collect();
    let tau = T::of(2.0);

    let engine = Engine::for_model(&model, LossKind::SoftmaxMse, ExecMode::Sequential)?;
    let (dets, cache) = engine.forward_pass(&model, &fields, &noise, tau, SelectMode::Train)?;
    let cache = cache.expect("train mode caches");
    let mut analytic = engine.loss_and_grad(&dets, &labels, &cache)?.g_logits;
    if corrupt {
        analytic[0][[0, 0, 0]] = analytic[0][[0, 0, 0]] + T::of(1.0);
    }

    let scale = analytic
        .iter()
        .flat_map(|g| g.iter())
        .map(|g| g.to64().abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let h = T::of(1e-5);
    let mut worst = 0.0f64;
    let mut params = 0usize;
    for l in 0..layers {
        for i in 0..size {
            for j in 0..size {
                for v in 0..levels {
                    let orig = model.layers[l].logits[[i, j, v]];
                    model.layers[l].logits[[i, j, v]] = orig + h;
                    let plus = surrogate_of(&engine, &model, &fields, &noise, tau, &labels)?;
                    model.layers[l].logits[[i, j, v]] = orig - h;
                    let minus = surrogate_of(&engine, &model, &fields, &noise, tau, &labels)?;
                    model.layers[l].logits[[i, j, v]] = orig;
                    let fd = (plus - minus).to64() / (2.0 * h.to64());
                    let rel = (analytic[l][[i, j, v]].to64() - fd).abs() / scale;
                    worst = worst.max(rel);
                    params += 1;
                }
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        params_checked: params,
    })
}

fn surrogate_of<T: Real>(
    engine: &Engine<T>,
    model: &DonnModel<T>,
    fields: &[ComplexField<T>],
    noise: &[GumbelNoise<T>],
    tau: T,
    labels: &[u8],
) -> Result<T> {
    let (_, cache) = engine.forward_pass(model, fields, noise, tau, SelectMode::Train)?;
    engine.surrogate_loss(&cache.expect("train mode caches"), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_cap_enforced() {
        assert!(gradcheck::<f64>(64, 1, 2, 1, 0, false).is_err());
        assert!(gradcheck::<f64>(17, 1, 2, 1, 0, false).is_err());
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let clean = gradcheck::<f64>(8, 1, 2, 1, 5, false).unwrap();
        let bad = gradcheck::<f64>(8, 1, 2, 1, 5, true).unwrap();
        assert!(clean.max_rel_error < 1e-5, "clean {}", clean.max_rel_error);
        assert!(bad.max_rel_error > 1e-2, "corrupted {}", bad.max_rel_error);
    }
}
