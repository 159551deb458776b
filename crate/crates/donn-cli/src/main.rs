//! `donn` — train, evaluate, and quantize diffractive optical neural
//! networks with device-feasible discrete parameters.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
//! failure. Structured errors go to stderr; stdout carries data only.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use config::{builtin_device, hex_digest, load_config, load_datasets, ExperimentConfig, Method, PrecisionOpt};
use donn_core::checkpoint::{Checkpoint, CheckpointKind};
use donn_core::dataio::encode_sample;
use donn_core::engine::{Engine, TrainConfig};
use donn_core::error::{DonnError, Result};
use donn_core::eval::{
    accuracy, confidence_report, dump_propagation, export_propagation, weight_histogram_discrete,
    weight_histogram_float, ConfidenceReport, CONFIDENCE_EPSILONS,
};
use donn_core::gradcheck::gradcheck;
use donn_core::model::{CompiledModel, DonnModel};
use donn_core::optim::AdamState;
use donn_core::quant::{
    derived_table, fit_voltage_response, ptq_round, qat_train, train_float_full, wsq_cluster_layers,
    wsq_postprocess, wsq_quantized_float, FloatDonnModel, FloatParam,
};
use donn_core::real::Real;

#[derive(Parser)]
#[command(name = "donn", version, about = "Diffractive optical neural network trainer and emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (method `gs` or `float`) from an experiment config.
    Train {
        /// Experiment config file (flat `key = value` lines).
        #[arg(long)]
        config: PathBuf,
        /// Scaled preset overriding the config (currently: `desk`).
        #[arg(long)]
        profile: Option<String>,
        /// Output directory (overrides `out_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads: 0 = all cores, 1 = sequential.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Epoch-count override.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint: accuracy, confidence table, histograms,
    /// propagation dumps.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        profile: Option<String>,
        /// Also run the confidence perturbation sweep (0%, 1%, 3%, 5%).
        #[arg(long)]
        confidence: bool,
        /// Write per-layer weight histograms.
        #[arg(long)]
        histogram: bool,
        /// Dump per-plane propagation intensity for this test-set sample.
        #[arg(long)]
        dump_sample: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Quantize a float checkpoint with a conventional baseline.
    Quantize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        profile: Option<String>,
        /// ptq | qat | wsq
        #[arg(long)]
        method: String,
        /// Discrete level count: 8 uses the device table as-is, 12/16 use a
        /// table derived from its fitted response curve.
        #[arg(long, default_value_t = 8)]
        levels: usize,
        /// QAT: project voltages every N processed samples (default: one
        /// epoch).
        #[arg(long)]
        quantize_every: Option<usize>,
        /// WSQ: clusters per layer (default: the level count).
        #[arg(long)]
        kmeans_k: Option<usize>,
        /// Polynomial degree for the voltage response fit.
        #[arg(long)]
        poly_degree: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Compare analytic and central-finite-difference gradients on a random
    /// small instance; exits non-zero if the relative error exceeds 1e-4.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative-control hook: corrupt one analytic component so the
        /// check must fail.
        #[arg(long, hide = true)]
        corrupt_vjp: bool,
    },
    /// Write a built-in device response table as CSV.
    ExportDevice {
        #[arg(long, default_value_t = 8)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    });
}

fn exit_code(e: &DonnError) -> i32 {
    match e {
        DonnError::Io { .. } | DonnError::Dataset(_) => 2,
        DonnError::NonFinite(_) => 3,
        _ => 1,
    }
}

fn setup_threads(threads: usize) {
    if threads > 1 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train {
            config,
            profile,
            out,
            threads,
            seed,
            epochs,
        } => {
            let mut overrides: Vec<(String, String)> = vec![("threads".into(), threads.to_string())];
            if let Some(s) = seed {
                overrides.push(("seed".into(), s.to_string()));
            }
            if let Some(e) = epochs {
                overrides.push(("train.epochs".into(), e.to_string()));
            }
            let mut cfg = load_config(&config, profile.as_deref(), &overrides)?;
            if let Some(out) = out {
                cfg.out_dir = Some(out);
            }
            setup_threads(cfg.threads);
            match cfg.precision {
                PrecisionOpt::F32 => cmd_train::<f32>(&cfg),
                PrecisionOpt::F64 => cmd_train::<f64>(&cfg),
            }
        }
        Command::Eval {
            checkpoint,
            config,
            profile,
            confidence,
            histogram,
            dump_sample,
            out,
            threads,
        } => {
            let overrides = vec![("threads".into(), threads.to_string())];
            let mut cfg = load_config(&config, profile.as_deref(), &overrides)?;
            if let Some(out) = out {
                cfg.out_dir = Some(out);
            }
            setup_threads(cfg.threads);
            let ck = Checkpoint::load(&checkpoint)?;
            match ck.precision {
                donn_core::checkpoint::Precision::F32 => {
                    cmd_eval::<f32>(&cfg, &ck, confidence, histogram, dump_sample)
                }
                donn_core::checkpoint::Precision::F64 => {
                    cmd_eval::<f64>(&cfg, &ck, confidence, histogram, dump_sample)
                }
            }
        }
        Command::Quantize {
            checkpoint,
            config,
            profile,
            method,
            levels,
            quantize_every,
            kmeans_k,
            poly_degree,
            out,
            threads,
        } => {
            let overrides = vec![("threads".into(), threads.to_string())];
            let mut cfg = load_config(&config, profile.as_deref(), &overrides)?;
            if let Some(out) = out {
                cfg.out_dir = Some(out);
            }
            if let Some(d) = poly_degree {
                cfg.poly_degree = d;
            }
            setup_threads(cfg.threads);
            let ck = Checkpoint::load(&checkpoint)?;
            let opts = QuantizeOpts {
                method,
                levels,
                quantize_every,
                kmeans_k,
            };
            match ck.precision {
                donn_core::checkpoint::Precision::F32 => cmd_quantize::<f32>(&cfg, &ck, &opts),
                donn_core::checkpoint::Precision::F64 => cmd_quantize::<f64>(&cfg, &ck, &opts),
            }
        }
        Command::Gradcheck {
            size,
            layers,
            levels,
            batch,
            seed,
            corrupt_vjp,
        } => {
            let report = gradcheck::<f64>(size, layers, levels, batch, seed, corrupt_vjp)?;
            println!(
                "gradcheck size={size} layers={layers} levels={levels} batch={batch} \
                 params={} max_rel_error={:e}",
                report.params_checked, report.max_rel_error
            );
            Ok(if report.max_rel_error < 1e-4 { 0 } else { 1 })
        }
        Command::ExportDevice { levels, out } => {
            let table = match levels {
                8 => builtin_device("fixture8")?,
                12 => builtin_device("fixture12")?,
                16 => builtin_device("fixture16")?,
                other => {
                    return Err(DonnError::Config(format!(
                        "supported level counts are 8, 12, 16; got {other}"
                    )))
                }
            };
            table.save_csv(&out)?;
            println!("wrote {} levels to {}", table.levels(), out.display());
            Ok(0)
        }
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("donn-out"));
    std::fs::create_dir_all(&dir).map_err(|e| DonnError::io(&dir, e))?;
    Ok(dir)
}

fn write_summary(dir: &Path, cfg: &ExperimentConfig, lines: &[(String, String)]) -> Result<()> {
    let path = dir.join("summary.txt");
    let mut f = std::fs::File::create(&path).map_err(|e| DonnError::io(&path, e))?;
    (|| -> std::io::Result<()> {
        writeln!(f, "digest = {}", hex_digest(&cfg.digest))?;
        writeln!(f, "seed = {}", cfg.seed)?;
        for (k, v) in lines {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    })()
    .map_err(|e| DonnError::io(&path, e))
}

fn cmd_train<T: Real>(cfg: &ExperimentConfig) -> Result<i32> {
    let (train, test) = load_datasets(cfg)?;
    let dir = out_dir(cfg)?;
    let tc = cfg.train_config();

    match cfg.method {
        Method::Gs => {
            let mut model =
                DonnModel::<T>::new(cfg.optics.clone(), cfg.detector.clone(), cfg.devices.clone())?;
            let engine = Engine::for_model(&model, cfg.loss, cfg.exec_mode())?;
            let ck_dir = dir.clone();
            let digest = cfg.digest;
            let seed = cfg.seed;
            let mut sink = |snap: donn_core::engine::FitSnapshot<'_, T>| -> Result<()> {
                let ck = Checkpoint::from_gs_model(
                    snap.model,
                    snap.adam,
                    snap.epoch as u32 + 1,
                    seed,
                    snap.rng_word_pos,
                    snap.noise_draws,
                    digest,
                );
                ck.save(ck_dir.join(format!("checkpoint_epoch_{:04}.donn", snap.epoch)))
            };
            let report = engine.fit(&mut model, &train, &test, &tc, Some(&mut sink))?;

            // the final checkpoint is the last epoch snapshot; an epochs=0
            // run gets a fresh initial-state checkpoint instead
            let final_path = dir.join("checkpoint_final.donn");
            if cfg.epochs > 0 {
                let last = dir.join(format!("checkpoint_epoch_{:04}.donn", cfg.epochs - 1));
                std::fs::copy(&last, &final_path).map_err(|e| DonnError::io(&final_path, e))?;
            } else {
                let adam: Vec<AdamState<T>> = model
                    .layers
                    .iter()
                    .map(|l| AdamState::new(l.logits.len()))
                    .collect();
                Checkpoint::from_gs_model(&model, &adam, 0, cfg.seed, 0, 0, cfg.digest)
                    .save(&final_path)?;
            }

            let (train_acc, test_acc) = match report.epochs.last() {
                Some(e) => (e.train_acc, e.test_acc),
                None => {
                    let c = model.compile()?;
                    (
                        accuracy(&c, &train, cfg.exec_mode())?,
                        accuracy(&c, &test, cfg.exec_mode())?,
                    )
                }
            };
            write_summary(
                &dir,
                cfg,
                &[
                    ("method".into(), "gs".into()),
                    ("precision".into(), T::NAME.into()),
                    ("epochs".into(), cfg.epochs.to_string()),
                    ("train_acc".into(), train_acc.to_string()),
                    ("test_acc".into(), test_acc.to_string()),
                ],
            )?;
            println!("train_acc {train_acc}");
            println!("test_acc {test_acc}");
            Ok(0)
        }
        Method::Float => {
            let responses = match cfg.float_param {
                FloatParam::Voltage => cfg
                    .devices
                    .iter()
                    .map(|t| fit_voltage_response(t, cfg.poly_degree))
                    .collect::<Result<Vec<_>>>()?,
                FloatParam::Phase => Vec::new(),
            };
            let mut model = FloatDonnModel::<T>::new(
                cfg.float_param,
                cfg.optics.clone(),
                cfg.detector.clone(),
                responses,
                cfg.layers,
            )?;
            let outcome = train_float_full(&mut model, &train, &test, &tc)?;
            let ck = Checkpoint::from_float_model(
                &model,
                cfg.devices.clone(),
                &outcome.adam,
                cfg.epochs as u32,
                cfg.seed,
                cfg.digest,
            );
            ck.save(dir.join("checkpoint_final.donn"))?;
            if let Some(e) = outcome.report.epochs.last() {
                write_summary(
                    &dir,
                    cfg,
                    &[
                        ("method".into(), "float".into()),
                        ("precision".into(), T::NAME.into()),
                        ("epochs".into(), cfg.epochs.to_string()),
                        ("train_acc".into(), e.train_acc.to_string()),
                        ("test_acc".into(), e.test_acc.to_string()),
                    ],
                )?;
                println!("train_acc {}", e.train_acc);
                println!("test_acc {}", e.test_acc);
            }
            let path = dir.join("loss_curve.csv");
            let mut f = std::fs::File::create(&path).map_err(|e| DonnError::io(&path, e))?;
            outcome
                .report
                .write_csv(&mut f, &cfg.digest, cfg.seed)
                .map_err(|e| DonnError::io(&path, e))?;
            Ok(0)
        }
        _ => Err(DonnError::Config(
            "`train` runs method gs or float; use `quantize` for ptq/qat/wsq".into(),
        )),
    }
}

fn cmd_eval<T: Real>(
    cfg: &ExperimentConfig,
    ck: &Checkpoint,
    confidence: bool,
    histogram: bool,
    dump_sample: Option<usize>,
) -> Result<i32> {
    let (_, test) = load_datasets(cfg)?;
    let dir = out_dir(cfg)?;
    let exec = cfg.exec_mode();

    let (compiled, hist): (CompiledModel<T>, _) = match ck.kind {
        CheckpointKind::GsLogits => {
            let model = ck.to_gs_model::<T>()?;
            let h = weight_histogram_discrete(&model)?;
            (model.compile()?, h)
        }
        CheckpointKind::FloatVoltage | CheckpointKind::FloatPhase => {
            let model = ck.to_float_model::<T>()?;
            let h = weight_histogram_float(&model);
            (model.compile()?, h)
        }
    };

    let acc = accuracy(&compiled, &test, exec)?;
    println!("accuracy {acc}");

    if confidence {
        let report: ConfidenceReport =
            confidence_report(&compiled, &test, &CONFIDENCE_EPSILONS, exec)?;
        let path = dir.join("confidence.csv");
        let mut f = std::fs::File::create(&path).map_err(|e| DonnError::io(&path, e))?;
        report
            .write_csv(&mut f, &cfg.digest, cfg.seed)
            .map_err(|e| DonnError::io(&path, e))?;
        for row in &report.rows {
            println!("confidence {} {}", row.epsilon, row.accuracy);
        }
    }
    if histogram {
        hist.write_csv_files(&dir, &cfg.digest, cfg.seed)?;
    }
    if let Some(idx) = dump_sample {
        if idx >= test.len() {
            return Err(DonnError::Dataset(format!(
                "sample {idx} out of range (test set has {})",
                test.len()
            )));
        }
        let field = encode_sample::<T>(&test, idx, cfg.optics.grid_size, cfg.optics.pixel_pitch)?;
        let maps = dump_propagation(&compiled, &field)?;
        export_propagation(&maps, &dir)?;
        println!("dumped {} planes", maps.len());
    }
    Ok(0)
}

struct QuantizeOpts {
    method: String,
    levels: usize,
    quantize_every: Option<usize>,
    kmeans_k: Option<usize>,
}

fn quant_table(ck: &Checkpoint, levels: usize) -> Result<donn_core::device::DeviceResponseTable> {
    let base = ck
        .devices
        .first()
        .cloned()
        .ok_or_else(|| DonnError::Checkpoint("checkpoint has no device table".into()))?;
    if levels == base.levels() {
        Ok(base)
    } else {
        derived_table(&base, levels)
    }
}

fn append_comparison(
    dir: &Path,
    cfg: &ExperimentConfig,
    rows: &[(String, usize, usize, f64, f64)],
) -> Result<()> {
    let path = dir.join("comparison.csv");
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| DonnError::io(&path, e))?;
    (|| -> std::io::Result<()> {
        if fresh {
            writeln!(f, "# digest={} seed={}", hex_digest(&cfg.digest), cfg.seed)?;
            writeln!(f, "method,layers,levels,train_acc,test_acc")?;
        }
        for (m, l, k, tr, te) in rows {
            writeln!(f, "{m},{l},{k},{tr},{te}")?;
        }
        Ok(())
    })()
    .map_err(|e| DonnError::io(&path, e))
}

fn cmd_quantize<T: Real>(cfg: &ExperimentConfig, ck: &Checkpoint, opts: &QuantizeOpts) -> Result<i32> {
    let (train, test) = load_datasets(cfg)?;
    let dir = out_dir(cfg)?;
    let exec = cfg.exec_mode();
    let evaluate = |m: &CompiledModel<T>| -> Result<(f64, f64)> {
        Ok((accuracy(m, &train, exec)?, accuracy(m, &test, exec)?))
    };

    let mut rows = Vec::new();
    match opts.method.as_str() {
        "ptq" => {
            let float = ck.to_float_model::<T>()?;
            if float.kind != FloatParam::Voltage {
                return Err(DonnError::Quantization(
                    "PTQ needs a voltage-parameterized float checkpoint".into(),
                ));
            }
            let table = quant_table(ck, opts.levels)?;
            let tables = vec![table; float.depth()];
            let discrete = ptq_round(&float, &tables)?;
            let (tr, te) = evaluate(&discrete.compile()?)?;
            rows.push(("ptq".to_string(), discrete.depth(), opts.levels, tr, te));
            save_discrete(&dir, cfg, &discrete)?;
        }
        "qat" => {
            let mut float = ck.to_float_model::<T>()?;
            let table = quant_table(ck, opts.levels)?;
            let tables = vec![table; float.depth()];
            let tc = TrainConfig {
                out_dir: None,
                ..cfg.train_config()
            };
            let outcome = qat_train(&mut float, &tables, &train, &test, &tc, opts.quantize_every)?;
            let (tr, te) = evaluate(&outcome.model.compile()?)?;
            rows.push(("qat".to_string(), outcome.model.depth(), opts.levels, tr, te));
            save_discrete(&dir, cfg, &outcome.model)?;
        }
        "wsq" => {
            let float = ck.to_float_model::<T>()?;
            if float.kind != FloatParam::Phase {
                return Err(DonnError::Quantization(
                    "WSQ needs a phase-parameterized float checkpoint".into(),
                ));
            }
            let table = quant_table(ck, opts.levels)?;
            let k = opts.kmeans_k.unwrap_or(table.levels());
            let clusters = wsq_cluster_layers(&float, k, cfg.seed)?;
            for (l, cm) in clusters.iter().enumerate() {
                println!(
                    "wsq layer {l}: {} centers, inertia {:.6}",
                    cm.centers.len(),
                    cm.inertia
                );
            }
            let quantized = wsq_quantized_float(&float, &clusters)?;
            let (tr0, te0) = evaluate(&quantized.compile()?)?;
            rows.push(("wsq_nopost".to_string(), float.depth(), k, tr0, te0));
            let discrete = wsq_postprocess(&float, &clusters, &table)?;
            let (tr, te) = evaluate(&discrete.compile()?)?;
            rows.push(("wsq".to_string(), discrete.depth(), opts.levels, tr, te));
            save_discrete(&dir, cfg, &discrete)?;
        }
        other => {
            return Err(DonnError::Config(format!(
                "unknown quantization method `{other}` (ptq|qat|wsq)"
            )))
        }
    }

    append_comparison(&dir, cfg, &rows)?;
    for (m, l, k, tr, te) in &rows {
        println!("{m} layers={l} levels={k} train_acc={tr} test_acc={te}");
    }
    Ok(0)
}

fn save_discrete<T: Real>(dir: &Path, cfg: &ExperimentConfig, model: &DonnModel<T>) -> Result<()> {
    let adam: Vec<AdamState<T>> = model
        .layers
        .iter()
        .map(|l| AdamState::new(l.logits.len()))
        .collect();
    let ck = Checkpoint::from_gs_model(model, &adam, 0, cfg.seed, 0, 0, cfg.digest);
    ck.save(dir.join("quantized.donn"))
}
