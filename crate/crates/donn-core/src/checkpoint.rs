//! Binary checkpoint container. Self-contained: optics, detector layout,
//! per-layer device tables, parameters (always stored as 64-bit floats),
//! optimizer moments, and the training stream position, so a run can be
//! inspected or continued from the file alone. Save -> load -> save is
//! byte-identical.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::device::DeviceResponseTable;
use crate::error::{DonnError, Result};
use crate::model::{DonnModel, ModulationLayerParams};
use crate::optics::{DetectorLayout, PropagationConfig, Region};
use crate::optim::AdamState;
use crate::quant::{FloatDonnModel, FloatParam, Poly, VoltageResponseModel};
use crate::real::Real;

const CKPT_MAGIC: &[u8; 8] = b"DONNCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    GsLogits,
    FloatVoltage,
    FloatPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn of<T: Real>() -> Self {
        if T::NAME == "f64" {
            Precision::F64
        } else {
            Precision::F32
        }
    }
}

#[derive(Debug, Clone)]
pub enum CheckpointParams {
    /// Per-layer logits, `n x n x k`.
    Gs(Vec<Array3<f64>>),
    /// Per-layer continuous parameters, `n x n`.
    Float(Vec<Array2<f64>>),
}

#[derive(Debug, Clone, Default)]
pub struct AdamSnapshot {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub precision: Precision,
    pub config_digest: [u8; 32],
    pub optics: PropagationConfig,
    pub detector: DetectorLayout,
    pub devices: Vec<DeviceResponseTable>,
    pub epoch: u32,
    pub seed: u64,
    pub rng_word_pos: u128,
    pub noise_draws: u64,
    pub params: CheckpointParams,
    /// Fitted responses, present only for `FloatVoltage`.
    pub responses: Vec<VoltageResponseModel>,
    pub adam: AdamSnapshot,
}

impl Checkpoint {
    pub fn depth(&self) -> usize {
        match &self.params {
            CheckpointParams::Gs(l) => l.len(),
            CheckpointParams::Float(l) => l.len(),
        }
    }

    pub fn from_gs_model<T: Real>(
        model: &DonnModel<T>,
        adam: &[AdamState<T>],
        epoch: u32,
        seed: u64,
        rng_word_pos: u128,
        noise_draws: u64,
        config_digest: [u8; 32],
    ) -> Self {
        let params = CheckpointParams::Gs(
            model
                .layers
                .iter()
                .map(|l| l.logits.mapv(|x| x.to64()))
                .collect(),
        );
        Checkpoint {
            kind: CheckpointKind::GsLogits,
            precision: Precision::of::<T>(),
            config_digest,
            optics: model.optics.clone(),
            detector: model.detector.clone(),
            devices: model.layers.iter().map(|l| l.device.clone()).collect(),
            epoch,
            seed,
            rng_word_pos,
            noise_draws,
            params,
            responses: Vec::new(),
            adam: snapshot_adam(adam),
        }
    }

    pub fn from_float_model<T: Real>(
        model: &FloatDonnModel<T>,
        devices: Vec<DeviceResponseTable>,
        adam: &[AdamState<T>],
        epoch: u32,
        seed: u64,
        config_digest: [u8; 32],
    ) -> Self {
        Checkpoint {
            kind: match model.kind {
                FloatParam::Voltage => CheckpointKind::FloatVoltage,
                FloatParam::Phase => CheckpointKind::FloatPhase,
            },
            precision: Precision::of::<T>(),
            config_digest,
            optics: model.optics.clone(),
            detector: model.detector.clone(),
            devices,
            epoch,
            seed,
            rng_word_pos: 0,
            noise_draws: 0,
            params: CheckpointParams::Float(
                model.layers.iter().map(|l| l.mapv(|x| x.to64())).collect(),
            ),
            responses: model.responses.clone(),
            adam: snapshot_adam(adam),
        }
    }

    /// Reconstructs the discrete model; fails if the checkpoint does not
    /// hold logits or its shapes are internally inconsistent.
    pub fn to_gs_model<T: Real>(&self) -> Result<DonnModel<T>> {
        let CheckpointParams::Gs(logits) = &self.params else {
            return Err(DonnError::Checkpoint(
                "checkpoint holds a float model, not discrete logits".into(),
            ));
        };
        if logits.len() != self.devices.len() {
            return Err(DonnError::Checkpoint(format!(
                "{} parameter layers vs {} device tables",
                logits.len(),
                self.devices.len()
            )));
        }
        let n = self.optics.grid_size;
        let layers = logits
            .iter()
            .zip(&self.devices)
            .enumerate()
            .map(|(i, (lg, dev))| {
                let (r, c, k) = lg.dim();
                if r != n || c != n || k != dev.levels() {
                    return Err(DonnError::Checkpoint(format!(
                        "layer {i}: logits {r}x{c}x{k} do not match grid {n} / device k={}",
                        dev.levels()
                    )));
                }
                Ok(ModulationLayerParams {
                    logits: lg.mapv(T::of),
                    device: dev.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = DonnModel {
            layers,
            optics: self.optics.clone(),
            detector: self.detector.clone(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_float_model<T: Real>(&self) -> Result<FloatDonnModel<T>> {
        let CheckpointParams::Float(params) = &self.params else {
            return Err(DonnError::Checkpoint(
                "checkpoint holds discrete logits, not a float model".into(),
            ));
        };
        let kind = match self.kind {
            CheckpointKind::FloatVoltage => FloatParam::Voltage,
            CheckpointKind::FloatPhase => FloatParam::Phase,
            CheckpointKind::GsLogits => {
                return Err(DonnError::Checkpoint(
                    "discrete checkpoint cannot become a float model".into(),
                ))
            }
        };
        let n = self.optics.grid_size;
        for (i, p) in params.iter().enumerate() {
            if p.dim() != (n, n) {
                return Err(DonnError::Checkpoint(format!(
                    "layer {i}: params {:?} do not match grid {n}",
                    p.dim()
                )));
            }
        }
        if kind == FloatParam::Voltage && self.responses.len() != params.len() {
            return Err(DonnError::Checkpoint(format!(
                "{} responses for {} voltage layers",
                self.responses.len(),
                params.len()
            )));
        }
        Ok(FloatDonnModel {
            kind,
            layers: params.iter().map(|p| p.mapv(T::of)).collect(),
            responses: self.responses.clone(),
            optics: self.optics.clone(),
            detector: self.detector.clone(),
        })
    }

    /// Restores per-layer Adam state in the requested precision.
    pub fn adam_states<T: Real>(&self) -> Vec<AdamState<T>> {
        self.adam
            .m
            .iter()
            .zip(&self.adam.v)
            .map(|(m, v)| {
                let mut s = AdamState::new(m.len());
                s.t = self.adam.t;
                s.m = m.iter().map(|&x| T::of(x)).collect();
                s.v = v.iter().map(|&x| T::of(x)).collect();
                s
            })
            .collect()
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(&path).map_err(|e| DonnError::io(&path, e))?;
        self.write(&mut f).map_err(|e| DonnError::io(&path, e))
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut f = std::fs::File::open(&path).map_err(|e| DonnError::io(&path, e))?;
        Self::read(&mut f)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w_u32(w, CKPT_VERSION)?;
        w.write_all(&[match self.kind {
            CheckpointKind::GsLogits => 0u8,
            CheckpointKind::FloatVoltage => 1,
            CheckpointKind::FloatPhase => 2,
        }])?;
        w.write_all(&[match self.precision {
            Precision::F32 => 0u8,
            Precision::F64 => 1,
        }])?;
        w.write_all(&self.config_digest)?;
        w_f64(w, self.optics.wavelength)?;
        w_f64(w, self.optics.distance)?;
        w_u32(w, self.optics.grid_size as u32)?;
        w_f64(w, self.optics.pixel_pitch)?;
        w_u32(w, self.optics.pad_factor as u32)?;
        w_u32(w, self.detector.regions().len() as u32)?;
        for r in self.detector.regions() {
            w_u32(w, r.row as u32)?;
            w_u32(w, r.col as u32)?;
            w_u32(w, r.height as u32)?;
            w_u32(w, r.width as u32)?;
        }
        w_u32(w, self.devices.len() as u32)?;
        for d in &self.devices {
            w_u32(w, d.levels() as u32)?;
            for i in 0..d.levels() {
                w_f64(w, d.control()[i])?;
                w_f64(w, d.amplitude()[i])?;
                w_f64(w, d.phase()[i])?;
            }
        }
        w_u32(w, self.epoch)?;
        w_u64(w, self.seed)?;
        w.write_all(&self.rng_word_pos.to_le_bytes())?;
        w_u64(w, self.noise_draws)?;

        match &self.params {
            CheckpointParams::Gs(layers) => {
                w.write_all(&[0u8])?;
                w_u32(w, layers.len() as u32)?;
                for l in layers {
                    let (_, _, k) = l.dim();
                    w_u32(w, k as u32)?;
                    for &x in l.iter() {
                        w_f64(w, x)?;
                    }
                }
            }
            CheckpointParams::Float(layers) => {
                w.write_all(&[1u8])?;
                w_u32(w, layers.len() as u32)?;
                for l in layers {
                    w_u32(w, 0)?;
                    for &x in l.iter() {
                        w_f64(w, x)?;
                    }
                }
            }
        }

        w_u32(w, self.responses.len() as u32)?;
        for r in &self.responses {
            w_u32(w, r.degree as u32)?;
            for &c in &r.amp.coeffs {
                w_f64(w, c)?;
            }
            for &c in &r.phase.coeffs {
                w_f64(w, c)?;
            }
            w_f64(w, r.v_min)?;
            w_f64(w, r.v_max)?;
            w_f64(w, r.amp_residual)?;
            w_f64(w, r.phase_residual)?;
        }

        w_u64(w, self.adam.t)?;
        w_u32(w, self.adam.m.len() as u32)?;
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            w_u64(w, m.len() as u64)?;
            for &x in m {
                w_f64(w, x)?;
            }
            for &x in v {
                w_f64(w, x)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic, "magic")?;
        if &magic != CKPT_MAGIC {
            return Err(DonnError::Checkpoint("bad magic".into()));
        }
        let version = r_u32(r, "version")?;
        if version != CKPT_VERSION {
            return Err(DonnError::Checkpoint(format!(
                "unsupported version {version} (expected {CKPT_VERSION})"
            )));
        }
        let mut b = [0u8; 2];
        read_exact(r, &mut b, "kind/precision")?;
        let kind = match b[0] {
            0 => CheckpointKind::GsLogits,
            1 => CheckpointKind::FloatVoltage,
            2 => CheckpointKind::FloatPhase,
            x => return Err(DonnError::Checkpoint(format!("unknown kind {x}"))),
        };
        let precision = match b[1] {
            0 => Precision::F32,
            1 => Precision::F64,
            x => return Err(DonnError::Checkpoint(format!("unknown precision {x}"))),
        };
        let mut config_digest = [0u8; 32];
        read_exact(r, &mut config_digest, "config digest")?;
        let optics = PropagationConfig {
            wavelength: r_f64(r, "wavelength")?,
            distance: r_f64(r, "distance")?,
            grid_size: r_u32(r, "grid size")? as usize,
            pixel_pitch: r_f64(r, "pixel pitch")?,
            pad_factor: r_u32(r, "pad factor")? as usize,
        };
        let region_count = r_u32(r, "region count")? as usize;
        let mut regions = Vec::with_capacity(region_count);
        for _ in 0..region_count {
            regions.push(Region {
                row: r_u32(r, "region row")? as usize,
                col: r_u32(r, "region col")? as usize,
                height: r_u32(r, "region height")? as usize,
                width: r_u32(r, "region width")? as usize,
            });
        }
        let detector = DetectorLayout::new(regions, optics.grid_size)
            .map_err(|e| DonnError::Checkpoint(format!("detector layout: {e}")))?;
        let device_count = r_u32(r, "device count")? as usize;
        let mut devices = Vec::with_capacity(device_count);
        for _ in 0..device_count {
            let k = r_u32(r, "device levels")? as usize;
            let mut control = Vec::with_capacity(k);
            let mut amp = Vec::with_capacity(k);
            let mut phase = Vec::with_capacity(k);
            for _ in 0..k {
                control.push(r_f64(r, "control")?);
                amp.push(r_f64(r, "amplitude")?);
                phase.push(r_f64(r, "phase")?);
            }
            devices.push(
                DeviceResponseTable::new(control, amp, phase)
                    .map_err(|e| DonnError::Checkpoint(format!("device table: {e}")))?,
            );
        }
        let epoch = r_u32(r, "epoch")?;
        let seed = r_u64(r, "seed")?;
        let mut wp = [0u8; 16];
        read_exact(r, &mut wp, "rng word pos")?;
        let rng_word_pos = u128::from_le_bytes(wp);
        let noise_draws = r_u64(r, "noise draws")?;

        let mut tag = [0u8; 1];
        read_exact(r, &mut tag, "params tag")?;
        let layer_count = r_u32(r, "layer count")? as usize;
        let n = optics.grid_size;
        let params = match tag[0] {
            0 => {
                let mut layers = Vec::with_capacity(layer_count);
                for li in 0..layer_count {
                    let k = r_u32(r, "layer k")? as usize;
                    let mut arr = Array3::zeros((n, n, k));
                    for x in arr.iter_mut() {
                        *x = r_f64(r, "logit")?;
                    }
                    if li < devices.len() && devices[li].levels() != k {
                        return Err(DonnError::Checkpoint(format!(
                            "layer {li}: k={k} but device has {} levels",
                            devices[li].levels()
                        )));
                    }
                    layers.push(arr);
                }
                CheckpointParams::Gs(layers)
            }
            1 => {
                let mut layers = Vec::with_capacity(layer_count);
                for _ in 0..layer_count {
                    let _k = r_u32(r, "layer k")?;
                    let mut arr = Array2::zeros((n, n));
                    for x in arr.iter_mut() {
                        *x = r_f64(r, "param")?;
                    }
                    layers.push(arr);
                }
                CheckpointParams::Float(layers)
            }
            x => return Err(DonnError::Checkpoint(format!("unknown params tag {x}"))),
        };

        let resp_count = r_u32(r, "response count")? as usize;
        let mut responses = Vec::with_capacity(resp_count);
        for _ in 0..resp_count {
            let degree = r_u32(r, "poly degree")? as usize;
            let mut amp_coeffs = Vec::with_capacity(degree + 1);
            for _ in 0..=degree {
                amp_coeffs.push(r_f64(r, "amp coeff")?);
            }
            let mut phase_coeffs = Vec::with_capacity(degree + 1);
            for _ in 0..=degree {
                phase_coeffs.push(r_f64(r, "phase coeff")?);
            }
            responses.push(VoltageResponseModel {
                amp: Poly { coeffs: amp_coeffs },
                phase: Poly {
                    coeffs: phase_coeffs,
                },
                degree,
                v_min: r_f64(r, "v_min")?,
                v_max: r_f64(r, "v_max")?,
                amp_residual: r_f64(r, "amp residual")?,
                phase_residual: r_f64(r, "phase residual")?,
            });
        }

        let t = r_u64(r, "adam t")?;
        let adam_layers = r_u32(r, "adam layer count")? as usize;
        let mut m = Vec::with_capacity(adam_layers);
        let mut v = Vec::with_capacity(adam_layers);
        for _ in 0..adam_layers {
            let len = r_u64(r, "adam len")? as usize;
            let mut mi = Vec::with_capacity(len);
            for _ in 0..len {
                mi.push(r_f64(r, "adam m")?);
            }
            let mut vi = Vec::with_capacity(len);
            for _ in 0..len {
                vi.push(r_f64(r, "adam v")?);
            }
            m.push(mi);
            v.push(vi);
        }

        Ok(Checkpoint {
            kind,
            precision,
            config_digest,
            optics,
            detector,
            devices,
            epoch,
            seed,
            rng_word_pos,
            noise_draws,
            params,
            responses,
            adam: AdamSnapshot { t, m, v },
        })
    }
}

fn snapshot_adam<T: Real>(adam: &[AdamState<T>]) -> AdamSnapshot {
    AdamSnapshot {
        t: adam.first().map(|s| s.t).unwrap_or(0),
        m: adam
            .iter()
            .map(|s| s.m.iter().map(|&x| x.to64()).collect())
            .collect(),
        v: adam
            .iter()
            .map(|s| s.v.iter().map(|&x| x.to64()).collect())
            .collect(),
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| DonnError::Checkpoint(format!("truncated before {what}")))
}

fn w_u32<W: Write>(w: &mut W, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn w_u64<W: Write>(w: &mut W, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn w_f64<W: Write>(w: &mut W, x: f64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn r_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn r_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}
