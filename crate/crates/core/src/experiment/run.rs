use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::config::{ExperimentConfig, Protocol};
use super::dataset::LoadedData;
use super::{ExperimentError, Result};
use crate::data::{apply_transition_protocol, make_splits, WindowSet};
use crate::evaluation::{
    accuracy, export_weight_surface, proxy_a_distance, ConvergenceTrace, ConvergenceTracker, MetricsReport, ProbeSet,
    SurfaceBounds, WeightSurfaceGrid, MIN_SAMPLES_PER_DOMAIN, PROBES_PER_DOMAIN,
};
use crate::networks::NetworkBundle;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{run_training, Method, StepLog, TrainError, TrainState};
use crate::Domain;

/// One line of the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub new_user: String,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub a_distance: Option<f64>,
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed { error: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub surface: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub source_train: usize,
    pub source_val: usize,
    pub target_adapt: usize,
    pub target_test: usize,
}

/// Record of one (new user, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub method: Method,
    pub new_user: String,
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub source_users: Vec<String>,
    pub splits: Option<SplitSizes>,
    pub validation_accuracy: Option<f64>,
    pub artifacts: RunArtifacts,
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    pub row: ResultRow,
    pub report: MetricsReport,
    pub manifest: RunManifest,
    pub logs: Vec<StepLog>,
    pub trace: Option<ConvergenceTrace>,
    pub surface: Option<WeightSurfaceGrid>,
    pub bundle: NetworkBundle<T>,
}

/// Directory of one run below the output root.
pub fn run_dir(root: &Path, method: Method, new_user: &str, seed: u64) -> PathBuf {
    root.join(method.as_str()).join(new_user).join(format!("seed-{seed}"))
}

/// Users excluded from the source domain of a run.
pub fn excluded_users(config: &ExperimentConfig, new_user: &str) -> Vec<String> {
    match config.protocol {
        Protocol::FixedNewUserSet => config.new_users.iter().filter(|u| *u != new_user).cloned().collect(),
        Protocol::LeaveOneUserOut => Vec::new(),
    }
}

fn argmax_rows<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let c = probs.shape()[1];
    probs
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Splits, tensors and role bookkeeping of a prepared run.
struct RunData<T> {
    source_users: Vec<String>,
    sizes: SplitSizes,
    source_x: Tensor<T>,
    source_y: Vec<usize>,
    val_x: Tensor<T>,
    val_y: Vec<usize>,
    adapt_x: Tensor<T>,
    test_x: Tensor<T>,
    test_y: Vec<usize>,
}

fn prepare<T: Scalar>(set: &WindowSet, seed: u64, transition_classes: &[usize]) -> Result<RunData<T>> {
    let source = set.indices_where(|w| w.domain == Domain::Source);
    let target = set.indices_where(|w| w.domain == Domain::Target);
    let plan = make_splits(source.len(), target.len(), seed)?;
    let plan = if transition_classes.is_empty() {
        plan
    } else {
        apply_transition_protocol(&plan, &set.labels(&source), &set.labels(&target), transition_classes)
    };
    let pick = |base: &[usize], idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| base[i]).collect() };
    let (s_train, s_val) = (pick(&source, &plan.source_train), pick(&source, &plan.source_val));
    let (t_adapt, t_test) = (pick(&target, &plan.target_adapt), pick(&target, &plan.target_test));
    if s_train.is_empty() || t_adapt.is_empty() || t_test.is_empty() {
        return Err(ExperimentError::Data(crate::data::DataError::InvalidParameter(
            "a split is empty after filtering".into(),
        )));
    }
    let mut source_users: Vec<String> = source.iter().map(|&i| set.windows[i].user.clone()).collect();
    source_users.sort();
    source_users.dedup();
    Ok(RunData {
        source_users,
        sizes: SplitSizes {
            source_train: s_train.len(),
            source_val: s_val.len(),
            target_adapt: t_adapt.len(),
            target_test: t_test.len(),
        },
        source_x: set.tensor(&s_train)?,
        source_y: set.labels(&s_train),
        val_x: set.tensor(&s_val)?,
        val_y: set.labels(&s_val),
        adapt_x: set.tensor(&t_adapt)?,
        test_x: set.tensor(&t_test)?,
        test_y: set.labels(&t_test),
    })
}

/// Trains and evaluates one (new user, seed) pair without touching disk.
pub fn execute_run<T: Scalar>(
    config: &ExperimentConfig,
    data: &LoadedData,
    new_user: &str,
    seed: u64,
) -> Result<RunOutput<T>> {
    let started = Instant::now();
    let set = data.windows_for(new_user, &excluded_users(config, new_user))?;
    let d = prepare::<T>(&set, seed, data.transition_classes())?;
    let mut arch = config.architecture.clone();
    arch.in_channels = set.channels;
    arch.window_len = set.window_len;
    arch.n_classes = set.n_classes;
    let mut state = TrainState::<T>::new(&arch, config.hyperparams.clone(), config.method, seed)?;

    let mut tracker = if config.analysis.trace_interval > 0 {
        let ns = d.source_y.len().min(PROBES_PER_DOMAIN);
        let nt = d.adapt_x.shape()[0].min(PROBES_PER_DOMAIN);
        let probes = ProbeSet {
            source_x: d.source_x.rows(0, ns)?,
            source_y: d.source_y[..ns].to_vec(),
            target_x: d.adapt_x.rows(0, nt)?,
        };
        Some(ConvergenceTracker::new(
            config.analysis.trace_interval,
            probes,
            d.test_x.clone(),
            d.test_y.clone(),
        )?)
    } else {
        None
    };

    let mut logs = Vec::with_capacity(config.hyperparams.total_steps);
    let mut analysis_error = None;
    let trained = run_training(&mut state, &d.source_x, &d.source_y, &d.adapt_x, |st, out| {
        logs.push(out.log.clone());
        if let Some(t) = tracker.as_mut() {
            if let Err(e) = t.observe(st) {
                analysis_error = Some(e);
                return Err(TrainError::InvalidInput("convergence tracking failed".into()));
            }
        }
        Ok(())
    });
    if let Some(e) = analysis_error {
        return Err(e.into());
    }
    trained?;

    let bundle = state.bundle;
    let preds = argmax_rows(&bundle.class_probs(&d.test_x)?);
    let mut report = MetricsReport::compute(new_user, seed, &d.test_y, &preds, arch.n_classes)?;
    let validation_accuracy = if d.val_y.is_empty() {
        None
    } else {
        Some(accuracy(&d.val_y, &argmax_rows(&bundle.class_probs(&d.val_x)?))?)
    };
    if config.analysis.a_distance && d.val_y.len() >= MIN_SAMPLES_PER_DOMAIN && d.test_y.len() >= MIN_SAMPLES_PER_DOMAIN {
        let fs = bundle.features(&d.val_x)?.cast::<f64>();
        let ft = bundle.features(&d.test_x)?.cast::<f64>();
        report.a_distance = Some(proxy_a_distance(&fs, &ft, seed)?);
    }
    let bounds = final_epoch_bounds(&logs, d.source_y.len(), config.hyperparams.batch_size);
    let surface = match &bundle.allocator {
        Some(theta_w) => Some(export_weight_surface(
            theta_w,
            config.method,
            bounds,
            config.analysis.surface_resolution,
        )?),
        None => None,
    };
    let row = ResultRow {
        method: config.method,
        new_user: new_user.to_string(),
        seed,
        accuracy: report.accuracy,
        macro_f1: report.macro_f1,
        a_distance: report.a_distance,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        method: config.method,
        new_user: new_user.to_string(),
        seed,
        status: RunStatus::Completed,
        source_users: d.source_users,
        splits: Some(d.sizes),
        validation_accuracy,
        artifacts: RunArtifacts::default(),
    };
    Ok(RunOutput {
        row,
        report,
        manifest,
        logs,
        trace: tracker.map(ConvergenceTracker::into_trace),
        surface,
        bundle,
    })
}

/// `[0, max l_c] × [0, max l_d]` over the last epoch of per-sample losses,
/// one epoch being `ceil(n_source_train / batch_size)` steps.
pub fn final_epoch_bounds(logs: &[StepLog], n_source_train: usize, batch_size: usize) -> SurfaceBounds {
    let epoch = n_source_train.div_ceil(batch_size.max(1)).max(1);
    let tail = &logs[logs.len().saturating_sub(epoch)..];
    SurfaceBounds::from_observed(
        tail.iter().map(|l| l.max_sample_loss_c).fold(0.0, f64::max),
        tail.iter().map(|l| l.max_sample_loss_d).fold(0.0, f64::max),
    )
}

pub fn read_manifest(run: &Path) -> Result<RunManifest> {
    let path = run.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))
}

pub fn read_step_log(path: &Path) -> Result<Vec<StepLog>> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display()))))
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))
}

/// Writes the checkpoint, step log, metrics, trace, surface and manifest of
/// a finished run into `dir`.
pub fn write_run_artifacts<T: Scalar>(dir: &Path, out: &mut RunOutput<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::Io(format!("{}: {e}", dir.display())))?;
    let mut art = RunArtifacts::default();

    let ckpt = dir.join("checkpoint");
    save_checkpoint(&ckpt, &out.bundle, out.logs.len())?;
    art.checkpoint = Some(ckpt);

    let mut log = Vec::new();
    for l in &out.logs {
        serde_json::to_writer(&mut log, l).expect("step log serializes");
        log.push(b'\n');
    }
    let log_path = dir.join("log.jsonl");
    write_file(&log_path, &log)?;
    art.log = Some(log_path);

    let metrics = dir.join("metrics.json");
    write_file(&metrics, serde_json::to_string_pretty(&out.report).expect("report serializes").as_bytes())?;
    art.metrics = Some(metrics);

    if let Some(trace) = &out.trace {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf)?;
        let p = dir.join("convergence.csv");
        write_file(&p, &buf)?;
        art.trace = Some(p);
    }
    if let Some(surface) = &out.surface {
        let mut buf = Vec::new();
        surface.write_csv(&mut buf)?;
        let p = dir.join("weight_surface.csv");
        write_file(&p, &buf)?;
        art.surface = Some(p);
    }
    out.manifest.artifacts = art;
    let mut manifest = serde_json::to_vec_pretty(&out.manifest).expect("manifest serializes");
    manifest.push(b'\n');
    write_file(&dir.join("manifest.json"), &manifest)
}

/// Trains, evaluates and writes one run below `config.output_dir`.
pub fn run_single(config: &ExperimentConfig, data: &LoadedData, new_user: &str, seed: u64) -> Result<RunOutput<f32>> {
    let mut out = execute_run::<f32>(config, data, new_user, seed)?;
    write_run_artifacts(&run_dir(&config.output_dir, config.method, new_user, seed), &mut out)?;
    Ok(out)
}

/// Appends rows to a results CSV, writing the header for a new file.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let exists = path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| ExperimentError::Io(format!("{}: {e}", parent.display())))?;
    }
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| ExperimentError::Io(e.to_string()))?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}

/// Pre-softmax classifier outputs of the selected windows as CSV:
/// `user,domain,label,f0..f{n_c-1}`.
pub fn export_features<T: Scalar, W: Write>(
    bundle: &NetworkBundle<T>,
    set: &WindowSet,
    indices: &[usize],
    out: W,
) -> Result<()> {
    let logits = bundle.class_logits(&set.tensor(indices)?)?;
    let c = logits.shape()[1];
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["user".to_string(), "domain".to_string(), "label".to_string()];
    header.extend((0..c).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for (row, &i) in logits.data().chunks(c).zip(indices) {
        let win = &set.windows[i];
        let domain = match win.domain {
            Domain::Source => "source",
            Domain::Target => "target",
        };
        let mut rec = vec![win.user.clone(), domain.to_string(), win.label.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| ExperimentError::Io(e.to_string()))?;
    Ok(())
}
