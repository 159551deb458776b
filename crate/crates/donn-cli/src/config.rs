//! Flat `key = value` experiment configuration with dotted sections.
//! Unknown keys are rejected; a SHA-256 digest of the resolved
//! configuration is embedded into every output artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use donn_core::device::DeviceResponseTable;
use donn_core::engine::{LossKind, TrainConfig};
use donn_core::error::{DonnError, Result};
use donn_core::exec::ExecMode;
use donn_core::optics::{DetectorLayout, PropagationConfig, Region};
use donn_core::quant::{derived_table, FloatParam};
use donn_core::schedule::TemperatureSchedule;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gs,
    Float,
    Ptq,
    Qat,
    Wsq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionOpt {
    F32,
    F64,
}

#[derive(Debug, Clone)]
pub enum DataSource {
    /// IDX file pairs; paths fall back to `$DONN_DATA_DIR` with the
    /// standard MNIST file names.
    Idx {
        train_images: Option<PathBuf>,
        train_labels: Option<PathBuf>,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
    },
    /// Deterministic synthetic digit glyphs.
    Synth {
        train: usize,
        test: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub precision: PrecisionOpt,
    pub seed: u64,
    pub threads: usize,
    pub out_dir: Option<PathBuf>,
    pub optics: PropagationConfig,
    pub detector: DetectorLayout,
    pub layers: usize,
    pub devices: Vec<DeviceResponseTable>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub schedule: TemperatureSchedule,
    pub float_param: FloatParam,
    pub poly_degree: usize,
    pub data: DataSource,
    pub train_limit: usize,
    pub test_limit: usize,
    pub digest: [u8; 32],
}

impl ExperimentConfig {
    pub fn exec_mode(&self) -> ExecMode {
        if self.threads == 1 {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: self.schedule.clone(),
            seed: self.seed,
            loss: self.loss,
            exec: self.exec_mode(),
            shuffle: true,
            out_dir: self.out_dir.clone(),
            config_digest: self.digest,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> DonnError {
    DonnError::Config(msg.into())
}

struct KeyMap {
    map: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl KeyMap {
    fn get(&self, key: &str) -> Option<String> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).cloned()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| cfg_err(format!("key `{key}`: cannot parse `{v}`"))),
        }
    }

    fn unknown_keys(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.map
            .keys()
            .filter(|k| !used.contains(*k) && !k.starts_with("device.table"))
            .cloned()
            .collect()
    }
}

fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(cfg_err(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(cfg_err(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    Ok(map)
}

/// Built-in device tables: the shipped 8-level fixture plus 12- and 16-level
/// tables derived from its fitted response curve.
pub fn builtin_device(name: &str) -> Result<DeviceResponseTable> {
    let base = DeviceResponseTable::fixture_8level();
    match name {
        "fixture8" => Ok(base),
        "fixture12" => derived_table(&base, 12),
        "fixture16" => derived_table(&base, 16),
        other => Err(cfg_err(format!(
            "unknown builtin device `{other}` (expected fixture8|fixture12|fixture16)"
        ))),
    }
}

fn device_from_spec(spec: &str) -> Result<DeviceResponseTable> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        builtin_device(name)
    } else {
        DeviceResponseTable::load_csv(spec)
    }
}

fn data_dir_fallback(name: &str) -> Option<PathBuf> {
    std::env::var_os("DONN_DATA_DIR").map(|d| PathBuf::from(d).join(name))
}

/// The desk-scale profile used by the scaled acceptance runs: 64x64 grid,
/// 10k/2k samples, 15 epochs, linear temperature 50 -> 1. The layer count
/// stays a config choice (the scaled checks compare depths).
pub const DESK_PROFILE: &str = "\
optics.grid_size = 64
optics.pixel_pitch_um = 112.5
train.epochs = 15
train.batch_size = 100
schedule.kind = linear
schedule.tau_start = 50
schedule.tau_end = 1
schedule.decay = 3.5
data.train_limit = 10000
data.test_limit = 2000
precision = f32
";

pub fn load_config(path: &Path, profile: Option<&str>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| DonnError::io(path, e))?;
    let mut map = parse_key_values(&text)?;
    if let Some(p) = profile {
        let profile_text = match p {
            "desk" => DESK_PROFILE,
            other => return Err(cfg_err(format!("unknown profile `{other}`"))),
        };
        // profile values override the file
        for (k, v) in parse_key_values(profile_text)? {
            map.insert(k, v);
        }
    }
    for (k, v) in overrides {
        map.insert(k.clone(), v.clone());
    }
    resolve(map)
}

fn resolve(map: BTreeMap<String, String>) -> Result<ExperimentConfig> {
    // canonical digest over the fully-resolved key set
    let mut hasher = Sha256::new();
    for (k, v) in &map {
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(v.as_bytes());
        hasher.update(b"\n");
    }
    let digest: [u8; 32] = hasher.finalize().into();

    let km = KeyMap {
        map,
        used: Default::default(),
    };

    let method = match km.get("method").as_deref() {
        None | Some("gs") => Method::Gs,
        Some("float") => Method::Float,
        Some("ptq") => Method::Ptq,
        Some("qat") => Method::Qat,
        Some("wsq") => Method::Wsq,
        Some(other) => return Err(cfg_err(format!("unknown method `{other}`"))),
    };
    let precision = match km.get("precision").as_deref() {
        None | Some("f32") => PrecisionOpt::F32,
        Some("f64") => PrecisionOpt::F64,
        Some(other) => return Err(cfg_err(format!("unknown precision `{other}`"))),
    };
    let seed = km.parse("seed", 0u64)?;
    let threads = km.parse("threads", 0usize)?;
    let out_dir = km.get("out_dir").map(PathBuf::from);

    let optics = PropagationConfig {
        wavelength: km.parse("optics.wavelength_nm", 532.0f64)? * 1e-9,
        distance: km.parse("optics.distance_m", 0.2794f64)?,
        grid_size: km.parse("optics.grid_size", 200usize)?,
        pixel_pitch: km.parse("optics.pixel_pitch_um", 36.0f64)? * 1e-6,
        pad_factor: km.parse("optics.pad_factor", 1usize)?,
    };
    optics.validate()?;

    let detector = match km.get("detector.regions") {
        None => DetectorLayout::evenly_spaced(optics.grid_size)?,
        Some(spec) => {
            let mut regions = Vec::new();
            for part in spec.split(';').filter(|s| !s.trim().is_empty()) {
                let nums: Vec<usize> = part
                    .split(':')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| cfg_err(format!("bad region spec `{part}`")))
                    })
                    .collect::<Result<_>>()?;
                if nums.len() != 4 {
                    return Err(cfg_err(format!(
                        "region `{part}` must be row:col:height:width"
                    )));
                }
                regions.push(Region {
                    row: nums[0],
                    col: nums[1],
                    height: nums[2],
                    width: nums[3],
                });
            }
            DetectorLayout::new(regions, optics.grid_size)?
        }
    };

    let layers = km.parse("train.layers", 5usize)?;
    if layers == 0 {
        return Err(cfg_err("train.layers must be >= 1"));
    }
    let default_device = km
        .get("device.table")
        .unwrap_or_else(|| "builtin:fixture8".to_string());
    let mut devices = Vec::with_capacity(layers);
    for l in 0..layers {
        let spec = km
            .get(&format!("device.table{l}"))
            .unwrap_or_else(|| default_device.clone());
        devices.push(device_from_spec(&spec)?);
    }

    let learning_rate = km.parse("train.learning_rate", 0.5f64)?;
    let epochs = km.parse("train.epochs", 100usize)?;
    let batch_size = km.parse("train.batch_size", 500usize)?;
    if batch_size == 0 {
        return Err(cfg_err("train.batch_size must be >= 1"));
    }
    let loss = match km.get("train.loss").as_deref() {
        None | Some("softmax_mse") => LossKind::SoftmaxMse,
        Some("raw_mse") => LossKind::RawMse,
        Some(other) => return Err(cfg_err(format!("unknown loss `{other}`"))),
    };

    let schedule = match km.get("schedule.kind").as_deref() {
        None | Some("linear") => TemperatureSchedule::Linear {
            tau_start: km.parse("schedule.tau_start", 50.0f64)?,
            tau_end: km.parse("schedule.tau_end", 1.0f64)?,
            decay_per_epoch: km.parse("schedule.decay", 0.5f64)?,
        },
        Some("static") => TemperatureSchedule::Static {
            tau: km.parse("schedule.tau", 1.0f64)?,
        },
        Some(kind @ ("cosine_list" | "step_list")) => {
            let spec = km
                .get("schedule.stages")
                .ok_or_else(|| cfg_err("list schedules need `schedule.stages`"))?;
            let mut stages = Vec::new();
            for part in spec.split(';').filter(|s| !s.trim().is_empty()) {
                let (tau, ep) = part
                    .split_once(':')
                    .ok_or_else(|| cfg_err(format!("stage `{part}` must be tau:epochs")))?;
                stages.push((
                    tau.trim()
                        .parse()
                        .map_err(|_| cfg_err(format!("bad tau in `{part}`")))?,
                    ep.trim()
                        .parse()
                        .map_err(|_| cfg_err(format!("bad epochs in `{part}`")))?,
                ));
            }
            if kind == "cosine_list" {
                TemperatureSchedule::CosineList { stages }
            } else {
                TemperatureSchedule::StepList { stages }
            }
        }
        Some(other) => return Err(cfg_err(format!("unknown schedule kind `{other}`"))),
    };
    schedule.validate()?;

    let float_param = match km.get("float.param").as_deref() {
        None | Some("voltage") => FloatParam::Voltage,
        Some("phase") => FloatParam::Phase,
        Some(other) => return Err(cfg_err(format!("unknown float.param `{other}`"))),
    };
    let poly_degree = km.parse("float.poly_degree", 3usize)?;

    let data = match km.get("data.source").as_deref() {
        None | Some("idx") => DataSource::Idx {
            train_images: km
                .get("data.train_images")
                .map(PathBuf::from)
                .or_else(|| data_dir_fallback("train-images-idx3-ubyte.gz"))
                .or_else(|| data_dir_fallback("train-images-idx3-ubyte")),
            train_labels: km
                .get("data.train_labels")
                .map(PathBuf::from)
                .or_else(|| data_dir_fallback("train-labels-idx1-ubyte.gz"))
                .or_else(|| data_dir_fallback("train-labels-idx1-ubyte")),
            test_images: km
                .get("data.test_images")
                .map(PathBuf::from)
                .or_else(|| data_dir_fallback("t10k-images-idx3-ubyte.gz"))
                .or_else(|| data_dir_fallback("t10k-images-idx3-ubyte")),
            test_labels: km
                .get("data.test_labels")
                .map(PathBuf::from)
                .or_else(|| data_dir_fallback("t10k-labels-idx1-ubyte.gz"))
                .or_else(|| data_dir_fallback("t10k-labels-idx1-ubyte")),
        },
        Some("synth") => DataSource::Synth {
            train: km.parse("data.synth_train", 10_000usize)?,
            test: km.parse("data.synth_test", 2_000usize)?,
            seed: km.parse("data.synth_seed", 7u64)?,
        },
        Some(other) => return Err(cfg_err(format!("unknown data.source `{other}`"))),
    };
    let train_limit = km.parse("data.train_limit", 0usize)?;
    let test_limit = km.parse("data.test_limit", 0usize)?;

    // touch idx keys so they do not count as unknown when the source is synth
    for k in [
        "data.train_images",
        "data.train_labels",
        "data.test_images",
        "data.test_labels",
        "data.synth_train",
        "data.synth_test",
        "data.synth_seed",
        "schedule.tau",
        "schedule.tau_start",
        "schedule.tau_end",
        "schedule.decay",
        "schedule.stages",
    ] {
        km.get(k);
    }

    let unknown = km.unknown_keys();
    if !unknown.is_empty() {
        return Err(cfg_err(format!("unknown keys: {}", unknown.join(", "))));
    }

    Ok(ExperimentConfig {
        method,
        precision,
        seed,
        threads,
        out_dir,
        optics,
        detector,
        layers,
        devices,
        learning_rate,
        epochs,
        batch_size,
        loss,
        schedule,
        float_param,
        poly_degree,
        data,
        train_limit,
        test_limit,
        digest,
    })
}

/// Loads (or synthesizes) the train and test datasets named by the config,
/// applying the configured subset limits.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(donn_core::dataio::Dataset, donn_core::dataio::Dataset)> {
    let (train, test) = match &cfg.data {
        DataSource::Synth { train, test, seed } => (
            donn_core::synth::generate(*train, *seed)?,
            donn_core::synth::generate(*test, seed.wrapping_add(1))?,
        ),
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let need = |p: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
                p.clone().ok_or_else(|| {
                    DonnError::Dataset(format!(
                        "no {what} path configured and DONN_DATA_DIR is unset"
                    ))
                })
            };
            let ti = need(train_images, "train image")?;
            let tl = need(train_labels, "train label")?;
            let vi = need(test_images, "test image")?;
            let vl = need(test_labels, "test label")?;
            (
                donn_core::dataio::load_idx(&ti, &tl)?,
                donn_core::dataio::load_idx(&vi, &vl)?,
            )
        }
    };
    let train = if cfg.train_limit > 0 {
        train.take(cfg.train_limit)?
    } else {
        train
    };
    let test = if cfg.test_limit > 0 {
        test.take(cfg.test_limit)?
    } else {
        test
    };
    Ok((train, test))
}

pub fn hex_digest(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
