//! The `meta-semi` command line: `train`, `check`, `sweep` and `compare`.
//!
//! Exit codes: `0` success, `1` a check failed or training diverged, `2` a
//! configuration or usage error (the message names the offending key), `3`
//! an I/O failure.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::{Arm, RunConfig};
use crate::data::{build_dataset, DatasetSource};
use crate::diagnostics::{self, Prop1Summary};
use crate::error::{ConfigError, Error, Result};
use crate::rng::Rng;
use crate::train::{train_with, MetricsRecord, TrainConfig, TrainState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Environment variable capping the worker threads of `sweep` and `compare`.
pub const THREADS_ENV: &str = "META_SEMI_THREADS";

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "meta_loss",
    "selected_fraction",
    "student_test_error",
    "teacher_test_error",
    "sup_grad_norm",
    "lr",
    "assumption_ratio",
    "selection_precision",
];

#[derive(Debug, Parser)]
#[command(
    name = "meta-semi",
    version,
    about = "Meta-reweighted semi-supervised training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Run configuration (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// IDX image file; requires --data-idx-labels.
    #[arg(long)]
    pub data_idx_images: Option<PathBuf>,
    /// IDX label file; requires --data-idx-images.
    #[arg(long)]
    pub data_idx_labels: Option<PathBuf>,
    /// CSV file with a header row and a trailing integer label column.
    #[arg(long, conflicts_with_all = ["data_idx_images", "data_idx_labels"])]
    pub data_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    Gradcheck,
    Prop1,
    Assumption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Beta,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model, writing manifest, metrics.csv and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a numerical diagnostic and print PASS or FAIL.
    Check {
        what: CheckKind,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run training for each value of a hyper-parameter over the seed set.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "beta")]
        param: SweepParam,
        /// Comma-separated values; defaults to the `sweep_values` key.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Paired runs of several methods or ablations on identical seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated arms such as `meta_semi,const1,meta_semi+no_ema`;
        /// defaults to the `compare` key.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train { common, out } => cmd_train(&common, &out),
        Command::Check { what, common } => cmd_check(what, &common),
        Command::Sweep {
            common,
            out,
            param,
            values,
        } => cmd_sweep(&common, &out, param, values),
        Command::Compare {
            common,
            out,
            methods,
        } => cmd_compare(&common, &out, methods),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Maps library errors to process exit codes.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidHyperparameter(_) | Error::InsufficientExamples { .. } => {
            EXIT_CONFIG
        }
        Error::Io { .. } | Error::Idx(_) | Error::Dataset(_) | Error::Checkpoint(_) => EXIT_IO,
        _ => EXIT_FAILED,
    }
}

/// Reads the config file (if any) and applies command-line overrides.
pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    match (&common.data_idx_images, &common.data_idx_labels) {
        (Some(images), Some(labels)) => {
            cfg.data.source = DatasetSource::Idx {
                images: images.clone(),
                labels: labels.clone(),
            }
        }
        (Some(_), None) => {
            return Err(ConfigError::MissingKey {
                key: "data-idx-labels".into(),
            }
            .into())
        }
        (None, Some(_)) => {
            return Err(ConfigError::MissingKey {
                key: "data-idx-images".into(),
            }
            .into())
        }
        (None, None) => {}
    }
    if let Some(path) = &common.data_csv {
        cfg.data.source = DatasetSource::Csv { path: path.clone() };
    }
    Ok(cfg)
}

/// `{:.16e}`: 17 significant digits, exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn metrics_row(r: &MetricsRecord) -> [String; 9] {
    [
        r.epoch.to_string(),
        fmt_f64(r.meta_loss),
        fmt_opt(r.selected_fraction),
        fmt_f64(r.student_test_error),
        fmt_f64(r.teacher_test_error),
        fmt_f64(r.sup_grad_norm),
        fmt_f64(r.lr),
        fmt_opt(r.assumption_ratio),
        fmt_opt(r.selection_precision),
    ]
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_rows<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r.as_ref()).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// Writes the resolved configuration, preceded by comment lines with the
/// tool version and artifact paths. The file is itself a valid config.
pub fn write_manifest(cfg: &RunConfig, out: &Path, artifacts: &[&str]) -> Result<PathBuf> {
    let path = out.join("manifest.conf");
    let mut text = format!("# meta-semi {}\n", env!("CARGO_PKG_VERSION"));
    for a in artifacts {
        text.push_str(&format!("# artifact: {}\n", out.join(a).display()));
    }
    text.push_str(&cfg.render());
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn checkpoint_of(state: &TrainState) -> Checkpoint {
    Checkpoint {
        arch: state.arch.clone(),
        student: state.student.clone(),
        teacher: Some(state.teacher.params.clone()),
    }
}

fn cmd_train(common: &Common, out: &Path) -> Result<i32> {
    let cfg = load_config(common)?;
    create_dir(out)?;
    write_manifest(&cfg, out, &["metrics.csv", "checkpoint.txt"])?;
    let data = build_dataset(&cfg.data, cfg.train.seed)?;

    let metrics_path = out.join("metrics.csv");
    let mut w = csv_writer(&metrics_path)?;
    w.write_record(METRICS_HEADER)
        .map_err(|e| csv_err(&metrics_path, e))?;
    let every = cfg.checkpoint_every;
    let (state, history) = train_with(&cfg.train, &data, |state, record| {
        w.write_record(metrics_row(record))
            .map_err(|e| csv_err(&metrics_path, e))?;
        w.flush().map_err(|e| Error::io(&metrics_path, e))?;
        if every > 0 && record.epoch % every == 0 {
            checkpoint_of(state)
                .save(&out.join(format!("checkpoint-epoch{}.txt", record.epoch)))?;
        }
        Ok(())
    })?;
    checkpoint_of(&state).save(&out.join("checkpoint.txt"))?;
    if let Some(last) = history.last() {
        println!(
            "trained {} epochs: student test error {:.4}, teacher test error {:.4}",
            last.epoch, last.student_test_error, last.teacher_test_error
        );
    }
    Ok(EXIT_OK)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_check(what: CheckKind, common: &Common) -> Result<i32> {
    let cfg = load_config(common)?;
    let seed = cfg.train.seed;
    match what {
        CheckKind::Gradcheck => {
            let threshold = 1e-5;
            let r = diagnostics::gradient_check_suite(
                &mut Rng::stream(seed, "gradcheck"),
                cfg.check_cases,
            )?;
            let pass = r.max_rel_err < threshold;
            println!(
                "{} gradcheck max_rel_err={:e} threshold={threshold:e} cases={} checked={} excluded={}",
                verdict(pass),
                r.max_rel_err,
                r.cases,
                r.checked,
                r.excluded
            );
            Ok(if pass { EXIT_OK } else { EXIT_FAILED })
        }
        CheckKind::Prop1 => {
            let s = diagnostics::prop1_suite(
                &mut Rng::stream(seed, "prop1"),
                cfg.check_cases,
                cfg.prop1_steps,
            )?;
            println!(
                "{} prop1 m={} closed_form_max_rel={:e} (tolerance max({:e} rel, {:e} abs)) \
                 linearity_max_rel={:e} threshold={:e} sign_agreement={}/{}",
                verdict(s.passed()),
                s.m,
                s.closed_form_max_rel,
                Prop1Summary::CLOSED_FORM_REL,
                Prop1Summary::CLOSED_FORM_ABS,
                s.linearity_max_rel,
                Prop1Summary::LINEARITY_REL,
                s.sign_agree,
                s.sign_total
            );
            Ok(if s.passed() { EXIT_OK } else { EXIT_FAILED })
        }
        CheckKind::Assumption => {
            let data = build_dataset(&cfg.data, seed)?;
            let arch = cfg.train.arch(data.input_dim(), data.num_classes)?;
            let state = TrainState::new(&cfg.train, arch)?;
            let r =
                diagnostics::assumption_ratio(&state, &cfg.train, &data, cfg.assumption_draws, 0)?;
            println!(
                "assumption draws={} numerator={:e} denominator={:e} ratio={}",
                r.draws.len(),
                r.numerator,
                r.denominator,
                r.ratio
                    .map(|v| format!("{v:e}"))
                    .unwrap_or_else(|| "undefined".into())
            );
            Ok(EXIT_OK)
        }
    }
}

/// Thread pool sized by `META_SEMI_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize =
            v.trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| ConfigError::InvalidValue {
                    key: THREADS_ENV.into(),
                    message: format!("expected a positive integer, got `{v}`"),
                })?;
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::io("thread pool", std::io::Error::other(e.to_string())))
}

/// Final-epoch student test error of one run.
pub fn final_error(cfg: &TrainConfig, run: &RunConfig) -> Result<f64> {
    let data = build_dataset(&run.data, cfg.seed)?;
    let (_, history) = train_with(cfg, &data, |_, _| Ok(()))?;
    history
        .last()
        .map(|r| r.student_test_error)
        .ok_or_else(|| Error::InvalidHyperparameter("epochs must be at least 1".into()))
}

/// Runs every `(group, seed)` pair in parallel and returns the errors grouped
/// in declared order.
pub fn paired_runs(run: &RunConfig, groups: &[TrainConfig]) -> Result<Vec<Vec<f64>>> {
    let seeds: Vec<u64> = (0..run.seeds as u64).map(|s| run.train.seed + s).collect();
    let jobs: Vec<(usize, TrainConfig)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, cfg)| {
            seeds.iter().map(move |&seed| {
                (
                    g,
                    TrainConfig {
                        seed,
                        ..cfg.clone()
                    },
                )
            })
        })
        .collect();
    let errors: Vec<(usize, f64)> = thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|(g, cfg)| final_error(cfg, run).map(|e| (*g, e)))
            .collect::<Result<_>>()
    })?;
    let mut out = vec![Vec::new(); groups.len()];
    for (g, e) in errors {
        out[g].push(e);
    }
    Ok(out)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cmd_sweep(
    common: &Common,
    out: &Path,
    param: SweepParam,
    values: Option<Vec<f64>>,
) -> Result<i32> {
    let cfg = load_config(common)?;
    let values = values.unwrap_or_else(|| cfg.sweep_values.clone());
    if values.is_empty() {
        return Err(ConfigError::MissingKey {
            key: "sweep_values".into(),
        }
        .into());
    }
    let groups = values
        .iter()
        .map(|&v| {
            let mut t = cfg.train.clone();
            match param {
                SweepParam::Beta => t.beta = v,
            }
            t.validate().map(|_| t)
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    write_manifest(&cfg, out, &["sweep.csv", "sweep_runs.csv"])?;
    let errors = paired_runs(&cfg, &groups)?;

    let mut summary = Vec::new();
    let mut runs = Vec::new();
    for (v, errs) in values.iter().zip(&errors) {
        let (m, s) = mean_std(errs);
        summary.push(vec![fmt_f64(*v), fmt_f64(m), fmt_f64(s)]);
        for (i, e) in errs.iter().enumerate() {
            runs.push(vec![
                fmt_f64(*v),
                (cfg.train.seed + i as u64).to_string(),
                fmt_f64(*e),
            ]);
        }
        println!(
            "beta {v}: mean error {m:.4} (std {s:.4}, {} seeds)",
            errs.len()
        );
    }
    write_rows(
        &out.join("sweep.csv"),
        &["beta", "mean_error", "std_error"],
        &summary,
    )?;
    write_rows(
        &out.join("sweep_runs.csv"),
        &["beta", "seed", "test_error"],
        &runs,
    )?;
    Ok(EXIT_OK)
}

fn cmd_compare(common: &Common, out: &Path, methods: Option<Vec<String>>) -> Result<i32> {
    let cfg = load_config(common)?;
    let arms = match methods {
        Some(list) => list
            .iter()
            .map(|s| {
                Arm::parse(s.trim()).ok_or_else(|| {
                    Error::from(ConfigError::InvalidValue {
                        key: "methods".into(),
                        message: format!("unknown arm `{s}`"),
                    })
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => cfg.compare_arms.clone(),
    };
    if arms.is_empty() {
        return Err(ConfigError::MissingKey {
            key: "compare".into(),
        }
        .into());
    }
    let groups: Vec<TrainConfig> = arms.iter().map(|a| a.apply(&cfg.train)).collect();
    create_dir(out)?;
    write_manifest(&cfg, out, &["compare.csv", "compare_runs.csv"])?;
    let errors = paired_runs(&cfg, &groups)?;

    let mut summary = Vec::new();
    let mut runs = Vec::new();
    for (arm, errs) in arms.iter().zip(&errors) {
        let (m, s) = mean_std(errs);
        summary.push(vec![
            arm.label(),
            fmt_f64(m),
            fmt_f64(s),
            errs.len().to_string(),
        ]);
        for (i, e) in errs.iter().enumerate() {
            runs.push(vec![
                arm.label(),
                (cfg.train.seed + i as u64).to_string(),
                fmt_f64(*e),
            ]);
        }
        println!(
            "{}: mean error {m:.4} (std {s:.4}, {} seeds)",
            arm.label(),
            errs.len()
        );
    }
    write_rows(
        &out.join("compare.csv"),
        &["method", "mean_error", "std_error", "runs"],
        &summary,
    )?;
    write_rows(
        &out.join("compare_runs.csv"),
        &["method", "seed", "test_error"],
        &runs,
    )?;
    std::io::stdout()
        .flush()
        .map_err(|e| Error::io("stdout", e))?;
    Ok(EXIT_OK)
}
