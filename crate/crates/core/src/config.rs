//! Plain-text run configuration: one `key = value` per line, `#` starts a
//! comment. Parsing is strict (unknown or repeated keys are errors); every
//! key is optional and falls back to the defaults in
//! `configs/reference.conf`.
//!
//! ```
//! use meta_semi::config::RunConfig;
//!
//! let cfg = RunConfig::parse("beta = 0.2\nmethod = const1  # ablation\n").unwrap();
//! assert_eq!(cfg.train.beta, 0.2);
//! assert_eq!(cfg.train.method.name(), "const1");
//! let again = RunConfig::parse(&cfg.render()).unwrap();
//! assert_eq!(again, cfg);
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::{DatasetSource, DatasetSpec, LabelBudget};
use crate::error::ConfigError;
use crate::nn::Activation;
use crate::train::{Flags, Method, Schedule, TrainConfig};

/// One arm of a `compare` run: a method plus ablation flags turned on.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub method: Method,
    pub flags: Vec<String>,
}

impl Arm {
    /// `method[+flag...]`, e.g. `meta_semi+no_ema`.
    pub fn parse(s: &str) -> Option<Arm> {
        let mut parts = s.split('+').map(str::trim);
        let method = Method::parse(parts.next()?)?;
        let flags: Vec<String> = parts.map(str::to_string).collect();
        if flags.iter().any(|f| Flags::default().get(f).is_none()) {
            return None;
        }
        Some(Arm { method, flags })
    }

    pub fn label(&self) -> String {
        std::iter::once(self.method.name().to_string())
            .chain(self.flags.iter().cloned())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// `base` with this arm's method and flags applied.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.method = self.method;
        for f in &self.flags {
            cfg.flags.set(f, true);
        }
        cfg
    }
}

/// Everything a CLI run reads from its config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DatasetSpec,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Sweeps and comparisons use seeds `seed .. seed + seeds`.
    pub seeds: usize,
    pub sweep_values: Vec<f64>,
    pub compare_arms: Vec<Arm>,
    /// Random instances for `check gradcheck` and `check prop1`.
    pub check_cases: usize,
    /// Virtual steps for `check prop1`.
    pub prop1_steps: usize,
    /// Monte-Carlo draws for `check assumption`.
    pub assumption_draws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data: DatasetSpec {
                source: DatasetSource::TwoMoons {
                    n: 1000,
                    noise: 0.1,
                },
                labels_per_class: LabelBudget::PerClass(3),
                val_fraction: 0.2,
                n_test: 1000,
                test_fraction: 0.2,
                standardize: true,
            },
            checkpoint_every: 0,
            seeds: 5,
            sweep_values: vec![0.2, 0.5, 1.0],
            compare_arms: [
                "meta_semi",
                "supervised",
                "supervised_mixup",
                "const1",
                "pm1",
            ]
            .iter()
            .filter_map(|s| Arm::parse(s))
            .collect(),
            check_cases: 20,
            prop1_steps: 5,
            assumption_draws: 100,
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| {
        invalid(
            key,
            format!("`{v}` is not a valid {}", std::any::type_name::<T>()),
        )
    })
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, format!("expected true or false, got `{v}`"))),
    }
}

fn list<T>(
    key: &str,
    v: &str,
    f: impl Fn(&str) -> Result<T, ConfigError>,
) -> Result<Vec<T>, ConfigError> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| f(s.trim()))
        .collect::<Result<_, _>>()
        .map_err(|e| match e {
            ConfigError::InvalidValue { message, .. } => invalid(key, message),
            other => other,
        })
}

/// Source-specific keys, collected first and assembled at the end so their
/// order in the file does not matter.
#[derive(Default)]
struct SourceKeys {
    dataset: Option<String>,
    n: Option<usize>,
    noise: Option<f64>,
    centers: Option<Vec<Vec<f64>>>,
    blob_std: Option<f64>,
    idx_images: Option<PathBuf>,
    idx_labels: Option<PathBuf>,
    csv: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut src = SourceKeys::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let (key, v) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Malformed {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if seen.iter().any(|k| k == key) {
                return Err(invalid(key, format!("given twice (line {})", i + 1)));
            }
            seen.push(key.to_string());
            cfg.set(key, v, i + 1, &mut src)?;
        }
        cfg.data.source = build_source(src, &cfg.data.source)?;
        cfg.train
            .validate()
            .map_err(|e| invalid("train", e.to_string()))?;
        Ok(cfg)
    }

    fn set(
        &mut self,
        key: &str,
        v: &str,
        line: usize,
        src: &mut SourceKeys,
    ) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "dataset" => src.dataset = Some(v.to_string()),
            "n" => src.n = Some(num(key, v)?),
            "noise" => src.noise = Some(num(key, v)?),
            "blob_centers" => {
                src.centers = Some(
                    v.split(';')
                        .map(|c| list(key, c.trim(), |s| num::<f64>(key, s)))
                        .collect::<Result<_, _>>()?,
                )
            }
            "blob_std" => src.blob_std = Some(num(key, v)?),
            "idx_images" => src.idx_images = Some(PathBuf::from(v)),
            "idx_labels" => src.idx_labels = Some(PathBuf::from(v)),
            "csv" => src.csv = Some(PathBuf::from(v)),
            "labels_per_class" => {
                self.data.labels_per_class = if v == "all" {
                    LabelBudget::All
                } else {
                    LabelBudget::PerClass(num(key, v)?)
                }
            }
            "val_fraction" => self.data.val_fraction = fraction(key, v)?,
            "test_fraction" => self.data.test_fraction = fraction(key, v)?,
            "n_test" => self.data.n_test = num(key, v)?,
            "standardize" => self.data.standardize = boolean(key, v)?,
            "hidden" => t.hidden = list(key, v, |s| num(key, s))?,
            "activation" => {
                t.activation =
                    Activation::parse(v).ok_or_else(|| invalid(key, "expected relu or tanh"))?
            }
            "beta" => t.beta = num(key, v)?,
            "alpha0" => t.alpha0 = num(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "labeled_batch" => t.labeled_batch = num(key, v)?,
            "unlabeled_batch" => t.unlabeled_batch = num(key, v)?,
            "ema_decay" => t.ema_decay = num(key, v)?,
            "schedule" => {
                t.schedule =
                    Schedule::parse(v).ok_or_else(|| invalid(key, "expected cosine or inv_t"))?
            }
            "method" => {
                t.method =
                    Method::parse(v).ok_or_else(|| invalid(key, format!("unknown method `{v}`")))?
            }
            "consistency_coeff" => t.consistency_coeff = num(key, v)?,
            "consistency_noise_std" => t.consistency_noise_std = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "weight_decay" => t.weight_decay = num(key, v)?,
            "momentum" => t.momentum = num(key, v)?,
            "assumption_mc" => t.assumption_mc = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "seeds" => self.seeds = num(key, v)?,
            "sweep_values" => self.sweep_values = list(key, v, |s| num(key, s))?,
            "compare" => {
                self.compare_arms = list(key, v, |s| {
                    Arm::parse(s).ok_or_else(|| invalid(key, format!("unknown arm `{s}`")))
                })?
            }
            "check_cases" => self.check_cases = num(key, v)?,
            "prop1_steps" => self.prop1_steps = num(key, v)?,
            "assumption_draws" => self.assumption_draws = num(key, v)?,
            _ if Flags::NAMES.contains(&key) => {
                t.flags.set(key, boolean(key, v)?);
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line,
                })
            }
        }
        Ok(())
    }

    /// Full resolved configuration in the same format, every key explicit.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let t = &self.train;
        let d = &self.data;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &d.source {
            DatasetSource::TwoMoons { n, noise } => {
                kv("dataset", "two_moons".into());
                kv("n", n.to_string());
                kv("noise", format!("{noise:?}"));
            }
            DatasetSource::Blobs { n, centers, std } => {
                kv("dataset", "blobs".into());
                kv("n", n.to_string());
                kv(
                    "blob_centers",
                    centers
                        .iter()
                        .map(|c| join(c))
                        .collect::<Vec<_>>()
                        .join("; "),
                );
                kv("blob_std", format!("{std:?}"));
            }
            DatasetSource::Idx { images, labels } => {
                kv("dataset", "idx".into());
                kv("idx_images", images.display().to_string());
                kv("idx_labels", labels.display().to_string());
            }
            DatasetSource::Csv { path } => {
                kv("dataset", "csv".into());
                kv("csv", path.display().to_string());
            }
        }
        kv(
            "labels_per_class",
            match d.labels_per_class {
                LabelBudget::All => "all".into(),
                LabelBudget::PerClass(n) => n.to_string(),
            },
        );
        kv("val_fraction", format!("{:?}", d.val_fraction));
        kv("n_test", d.n_test.to_string());
        kv("test_fraction", format!("{:?}", d.test_fraction));
        kv("standardize", d.standardize.to_string());
        kv(
            "hidden",
            t.hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("activation", t.activation.name().into());
        kv("beta", format!("{:?}", t.beta));
        kv("alpha0", format!("{:?}", t.alpha0));
        kv("epochs", t.epochs.to_string());
        kv("labeled_batch", t.labeled_batch.to_string());
        kv("unlabeled_batch", t.unlabeled_batch.to_string());
        kv("ema_decay", format!("{:?}", t.ema_decay));
        kv("schedule", t.schedule.name().into());
        kv("method", t.method.name().into());
        for name in Flags::NAMES {
            kv(name, t.flags.get(name).unwrap_or(false).to_string());
        }
        kv("consistency_coeff", format!("{:?}", t.consistency_coeff));
        kv(
            "consistency_noise_std",
            format!("{:?}", t.consistency_noise_std),
        );
        kv("seed", t.seed.to_string());
        kv("weight_decay", format!("{:?}", t.weight_decay));
        kv("momentum", format!("{:?}", t.momentum));
        kv("assumption_mc", t.assumption_mc.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("seeds", self.seeds.to_string());
        kv("sweep_values", join(&self.sweep_values));
        kv(
            "compare",
            self.compare_arms
                .iter()
                .map(Arm::label)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("check_cases", self.check_cases.to_string());
        kv("prop1_steps", self.prop1_steps.to_string());
        kv("assumption_draws", self.assumption_draws.to_string());
        s
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn fraction(key: &str, v: &str) -> Result<f64, ConfigError> {
    let f: f64 = num(key, v)?;
    if (0.0..1.0).contains(&f) {
        Ok(f)
    } else {
        Err(invalid(key, format!("must lie in [0, 1), got {f}")))
    }
}

fn build_source(k: SourceKeys, default: &DatasetSource) -> Result<DatasetSource, ConfigError> {
    let need = |key: &str| ConfigError::MissingKey {
        key: key.to_string(),
    };
    let kind = match k.dataset.as_deref() {
        Some(d) => d,
        None => match default {
            DatasetSource::TwoMoons { .. } => "two_moons",
            DatasetSource::Blobs { .. } => "blobs",
            DatasetSource::Idx { .. } => "idx",
            DatasetSource::Csv { .. } => "csv",
        },
    };
    Ok(match kind {
        "two_moons" => DatasetSource::TwoMoons {
            n: k.n.unwrap_or(1000),
            noise: k.noise.unwrap_or(0.1),
        },
        "blobs" => DatasetSource::Blobs {
            n: k.n.unwrap_or(200),
            centers: k
                .centers
                .unwrap_or_else(|| vec![vec![-2.0, 0.0], vec![2.0, 0.0]]),
            std: k.blob_std.unwrap_or(0.5),
        },
        "idx" => DatasetSource::Idx {
            images: k.idx_images.ok_or_else(|| need("idx_images"))?,
            labels: k.idx_labels.ok_or_else(|| need("idx_labels"))?,
        },
        "csv" => DatasetSource::Csv {
            path: k.csv.ok_or_else(|| need("csv"))?,
        },
        other => {
            return Err(invalid(
                "dataset",
                format!("`{other}` is not one of two_moons, blobs, idx, csv"),
            ))
        }
    })
}
