use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use swl_core::data::{generate_synthetic, write_cache, DataError, NormalizationScope, SyntheticSpec};
use swl_core::evaluation::export_weight_surface;
use swl_core::experiment::{
    append_results, compare_methods, excluded_users, export_features, load_checkpoint, load_data, read_results,
    final_epoch_bounds, read_manifest, read_step_log, results_path, run_dir, run_protocol, run_single, summarize,
    window_recordings, DatasetSource, ExperimentConfig, ExperimentError, LoadedData,
};
use swl_core::training::Method;

#[derive(Parser)]
#[command(name = "swl-adapt", version, about = "Sample-weighted adversarial adaptation for cross-user activity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    new_user: Option<String>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the configured CSV dataset and write a windowed cache to --out.
    Preprocess(Common),
    /// Generate the configured (or default) synthetic task and cache it in --out.
    Synth(Common),
    /// Train and evaluate one (new user, seed) run.
    Train(Common),
    /// Run every (new user, seed) pair of the configured protocol.
    Protocol(Common),
    /// Write the allocator surface of a finished run as CSV.
    ExportSurface {
        /// Run directory containing manifest.json.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write pre-softmax classifier outputs of a run's windows as CSV.
    ExportFeatures {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize results CSVs; optionally t-test two methods.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        compare: Option<Vec<Method>>,
    },
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = common.method {
        config.method = m;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(t) = common.threads {
        config.threads = t;
    }
    if let Some(s) = common.seed {
        config.seeds = vec![s];
    }
    if let Some(u) = &common.new_user {
        config.new_users = vec![u.clone()];
    }
    config.validate()?;
    Ok(config)
}

fn require_out(common: &Common) -> anyhow::Result<PathBuf> {
    common
        .out
        .clone()
        .ok_or_else(|| ExperimentError::Config("--out is required".into()).into())
}

fn preprocess(common: &Common) -> anyhow::Result<()> {
    let config = load_config(common)?;
    let out = require_out(common)?;
    let set = match load_data(&config.dataset)? {
        LoadedData::Windows { set, .. } => set,
        LoadedData::Recordings {
            recordings,
            preset,
            n_classes,
            scope,
            ..
        } => {
            if scope == NormalizationScope::SourceOnly {
                bail!(ExperimentError::Config(
                    "source-only normalization depends on the new user; train from the CSV directly".into()
                ));
            }
            window_recordings(&recordings, &preset, n_classes, scope, None)?
        }
    };
    write_cache(&out, &set)?;
    println!("wrote {} windows ({} users) to {}", set.len(), set.users().len(), out.display());
    Ok(())
}

fn synth(common: &Common) -> anyhow::Result<()> {
    let config = match &common.config {
        Some(_) => load_config(common)?,
        None => ExperimentConfig::default(),
    };
    let mut spec = match config.dataset {
        DatasetSource::Synthetic(spec) => spec,
        _ => SyntheticSpec::default(),
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    let out = require_out(common)?;
    let set = generate_synthetic(&spec)?;
    write_cache(&out, &set)?;
    println!("wrote {} synthetic windows to {}", set.len(), out.display());
    Ok(())
}

fn train(common: &Common) -> anyhow::Result<()> {
    let config = load_config(common)?;
    let data = load_data(&config.dataset)?;
    let user = config
        .new_users
        .first()
        .cloned()
        .ok_or_else(|| ExperimentError::Config("no new user given".into()))?;
    let seed = config.seeds[0];
    let out = run_single(&config, &data, &user, seed)?;
    append_results(&results_path(&config), std::slice::from_ref(&out.row))?;
    println!(
        "{} user {} seed {}: accuracy {:.4}, macro F1 {:.4}",
        config.method, user, seed, out.row.accuracy, out.row.macro_f1
    );
    println!("artifacts in {}", run_dir(&config.output_dir, config.method, &user, seed).display());
    Ok(())
}

fn protocol(common: &Common) -> anyhow::Result<()> {
    let config = load_config(common)?;
    let data = load_data(&config.dataset)?;
    let outcome = run_protocol(&config, &data, config.threads)?;
    for s in &outcome.summary {
        println!(
            "{}: {} runs, accuracy {:.4} ± {:.4}, macro F1 {:.4} ± {:.4}",
            s.method, s.runs, s.accuracy_mean, s.accuracy_std, s.macro_f1_mean, s.macro_f1_std
        );
    }
    println!("results in {}", outcome.results_csv.display());
    Ok(())
}

fn write_or_print(out: Option<&Path>, bytes: Vec<u8>) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{}", String::from_utf8(bytes)?);
            Ok(())
        }
    }
}

fn export_surface(run: &Path, resolution: Option<usize>, out: Option<&Path>) -> anyhow::Result<()> {
    let manifest = read_manifest(run)?;
    let ckpt = load_checkpoint::<f32>(&run.join("checkpoint"), None)?;
    let theta_w = ckpt
        .bundle
        .allocator
        .as_ref()
        .ok_or_else(|| anyhow!("method {} has no weight allocator", manifest.method))?;
    let logs = read_step_log(&run.join("log.jsonl"))?;
    let b = manifest.config.hyperparams.batch_size;
    let train = manifest.splits.as_ref().map_or(b, |s| s.source_train);
    let bounds = final_epoch_bounds(&logs, train, b);
    let res = resolution.unwrap_or(manifest.config.analysis.surface_resolution);
    let grid = export_weight_surface(theta_w, manifest.method, bounds, res)?;
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)?;
    write_or_print(out, buf)
}

fn export_feature_csv(run: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let manifest = read_manifest(run)?;
    let ckpt = load_checkpoint::<f32>(&run.join("checkpoint"), None)?;
    let data = load_data(&manifest.config.dataset)?;
    let set = data.windows_for(&manifest.new_user, &excluded_users(&manifest.config, &manifest.new_user))?;
    let all: Vec<usize> = (0..set.len()).collect();
    let mut buf = Vec::new();
    export_features(&ckpt.bundle, &set, &all, &mut buf)?;
    write_or_print(out, buf)
}

fn report(results: &[PathBuf], compare: Option<&[Method]>) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for p in results {
        rows.extend(read_results(p).map_err(|e| anyhow!(DataError::Cache(format!("{}: {e}", p.display()))))?);
    }
    println!("method,runs,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std");
    for s in summarize(&rows) {
        println!(
            "{},{},{:.4},{:.4},{:.4},{:.4}",
            s.method, s.runs, s.accuracy_mean, s.accuracy_std, s.macro_f1_mean, s.macro_f1_std
        );
    }
    if let Some([a, b]) = compare {
        let c = compare_methods(&rows, *a, *b)?;
        println!(
            "{} vs {} over {} pairs: accuracy t={:.4} p={:.4}; macro F1 t={:.4} p={:.4}",
            c.a, c.b, c.pairs, c.accuracy.t, c.accuracy.p, c.macro_f1.t, c.macro_f1.p
        );
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ExperimentError>() {
            return e.exit_code() as u8;
        }
        if cause.downcast_ref::<DataError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Preprocess(c) => preprocess(c),
        Command::Synth(c) => synth(c),
        Command::Train(c) => train(c),
        Command::Protocol(c) => protocol(c),
        Command::ExportSurface { run, resolution, out } => export_surface(run, *resolution, out.as_deref()),
        Command::ExportFeatures { run, out } => export_feature_csv(run, out.as_deref()),
        Command::Report { results, compare } => report(results, compare.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
