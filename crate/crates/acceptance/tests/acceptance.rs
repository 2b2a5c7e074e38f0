//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.
//!
//! Criterion numbers given as arguments restrict the run to those criteria.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use meta_semi::checkpoint::Checkpoint;
use meta_semi::cli::{self, mean_std, paired_runs, EXIT_OK};
use meta_semi::config::RunConfig;
use meta_semi::data::{
    build_dataset, load_idx, DatasetSource, DatasetSpec, LabelBudget, LabeledExample,
};
use meta_semi::diagnostics::{gradient_check_suite, prop1_suite, Prop1Summary};
use meta_semi::error::{Error, IdxError};
use meta_semi::meta::{
    assign_weights, meta_gradients, meta_loss, meta_loss_grad, WeightMode, WeightVector,
};
use meta_semi::nn::{self, init_params, Activation, MlpArch, ParamVector};
use meta_semi::rng::Rng;
use meta_semi::tensor::Mat64;
use meta_semi::train::{train, train_iteration, Method, Schedule, TrainConfig, TrainState};

const TWO_MOONS: &str = include_str!("../../../configs/two_moons.conf");

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Outcome = Result<Verdict, Box<dyn std::error::Error>>;

/// Final test errors shared by the benchmark criteria.
#[derive(Default)]
struct Bench {
    base: Option<RunConfig>,
    meta_semi: Option<Vec<f64>>,
    supervised: Option<Vec<f64>>,
}

impl Bench {
    fn config(&mut self) -> RunConfig {
        self.base
            .get_or_insert_with(|| RunConfig::parse(TWO_MOONS).expect("bundled config parses"))
            .clone()
    }

    fn with_method(&mut self, m: Method) -> TrainConfig {
        TrainConfig {
            method: m,
            ..self.config().train
        }
    }

    /// Runs meta_semi and the supervised baseline on five seeds, once.
    fn headline(&mut self) -> Result<(Vec<f64>, Vec<f64>), Error> {
        if self.meta_semi.is_none() {
            let groups = [
                self.with_method(Method::MetaSemi),
                self.with_method(Method::Supervised),
            ];
            let mut runs = paired_runs(&self.config(), &groups)?;
            self.supervised = runs.pop();
            self.meta_semi = runs.pop();
        }
        Ok((
            self.meta_semi.clone().unwrap(),
            self.supervised.clone().unwrap(),
        ))
    }

    fn gap(&mut self) -> Result<f64, Error> {
        let (m, s) = self.headline()?;
        Ok(mean_std(&s).0 - mean_std(&m).0)
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let took = start.elapsed();
    (
        took < limit,
        format!("{:.1}s of {}s", took.as_secs_f64(), limit.as_secs()),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let r = gradient_check_suite(&mut Rng::stream(1, "acceptance-gradcheck"), 20)?;
    let (fast, time) = within(Duration::from_secs(10), start);
    Ok(verdict(
        r.max_rel_err < 1e-5 && r.checked > 0 && fast,
        format!(
            "max_rel_err={:.3e} (< 1e-5) over {} instances, {} coordinates checked, {} at ReLU kinks excluded; {time}",
            r.max_rel_err, r.cases, r.checked, r.excluded
        ),
    ))
}

fn closed_form() -> Outcome {
    let start = Instant::now();
    let s = prop1_suite(&mut Rng::stream(2, "acceptance-prop1"), 10, 1)?;
    let (fast, time) = within(Duration::from_secs(30), start);
    Ok(verdict(
        s.closed_form_ok && fast,
        format!(
            "10 instances, worst relative deviation {:.3e} (tolerance max({:e} rel, {:e} abs)); {time}",
            s.closed_form_max_rel,
            Prop1Summary::CLOSED_FORM_REL,
            Prop1Summary::CLOSED_FORM_ABS
        ),
    ))
}

fn linearity() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for m in [2, 5] {
        // same seed as the closed-form check, hence the same instances
        let s = prop1_suite(&mut Rng::stream(2, "acceptance-prop1"), 10, m)?;
        pass &= s.linearity_max_rel < Prop1Summary::LINEARITY_REL && s.sign_agree == s.sign_total;
        parts.push(format!(
            "M={m}: max_rel={:.3e} (< 2e-3), signs {}/{}",
            s.linearity_max_rel, s.sign_agree, s.sign_total
        ));
    }
    let (fast, time) = within(Duration::from_secs(120), start);
    Ok(verdict(
        pass && fast,
        format!("{}; {time}", parts.join(", ")),
    ))
}

fn weight_invariance() -> Outcome {
    let mut rng = Rng::stream(4, "acceptance-weights");
    let mut mismatches = 0;
    for case in 0..100 {
        let n = 1 + rng.below(32);
        let dots: Vec<f64> = (0..n)
            .map(|j| match (case + j) % 7 {
                0 => 0.0,
                1 => rng.normal() * 1e-12,
                _ => rng.normal() * 10f64.powi(rng.below(9) as i32 - 4),
            })
            .collect();
        let reference = assign_weights(&meta_gradients(&dots, 0.1), WeightMode::Meta);
        for c in [1e-3, 1.0, 1e3] {
            let scaled: Vec<f64> = dots.iter().map(|d| d * c).collect();
            for alpha in [1e-3, 0.1] {
                if assign_weights(&meta_gradients(&scaled, alpha), WeightMode::Meta).w
                    != reference.w
                {
                    mismatches += 1;
                }
            }
        }
    }
    Ok(verdict(
        mismatches == 0,
        format!("100 dot vectors x c in {{1e-3, 1, 1e3}} x alpha in {{1e-3, 0.1}}: {mismatches} weight vectors differ"),
    ))
}

fn loss_conventions() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // zero weight sum: loss 0 and a zero gradient
    let arch = MlpArch::new(vec![3, 4, 2], Activation::Relu)?;
    let mut rng = Rng::stream(5, "acceptance-loss");
    let params = init_params(&arch, &mut rng);
    let inputs = Mat64::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect())?;
    let mut labels = Mat64::zeros(4, 2);
    for r in 0..4 {
        labels.row_mut(r)[r % 2] = 1.0;
    }
    let losses = nn::per_sample_losses(&params, &arch, &inputs, &labels)?;
    let cancel = WeightVector {
        w: vec![1.0, -1.0, 0.0, 0.0],
        mode: WeightMode::PlusMinusOne,
    };
    let zero_loss = meta_loss(&cancel, &losses)? == 0.0;
    let zero_grad = meta_loss_grad(&params, &arch, &inputs, &labels, &cancel)?
        .iter()
        .all(|&g| g == 0.0);
    pass &= zero_loss && zero_grad;
    notes.push(format!(
        "sum w = 0 gives loss 0: {zero_loss}, zero gradient: {zero_grad}"
    ));

    // a full iteration whose weights cancel leaves student and momentum untouched
    let cfg = TrainConfig {
        hidden: vec![8],
        method: Method::Pm1,
        flags: meta_semi::train::Flags {
            no_mixup: true,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let small = cfg.arch(2, 2)?;
    let n = small.num_params();
    let mut state = TrainState::new(&cfg, small)?;
    state.student = ParamVector::zeros(n);
    state.teacher.params = ParamVector::zeros(n);
    state.teacher.params[n - 2] = -10.0;
    state.teacher.params[n - 1] = 10.0;
    state.momentum_buffer.iter_mut().for_each(|v| *v = 0.25);
    let before = state.clone();
    let x = [LabeledExample::new(vec![0.5, -0.5], 0, 2)];
    let u = [vec![0.5, -0.5]];
    let out = train_iteration(&mut state, &cfg, &x, &u, 100, None)?;
    let bits = |p: &ParamVector| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let frozen = out.skipped
        && out.loss == 0.0
        && bits(&state.student) == bits(&before.student)
        && bits(&state.momentum_buffer) == bits(&before.momentum_buffer);
    pass &= frozen;
    notes.push(format!(
        "cancelling iteration (weights {:?}) leaves student and momentum bitwise equal: {frozen}",
        out.weights.map(|w| w.w).unwrap_or_default()
    ));

    // unit weights pick out a single loss
    let mut exact = true;
    for j in 0..losses.len() {
        let mut w = vec![0.0; losses.len()];
        w[j] = 1.0;
        let wv = WeightVector {
            w,
            mode: WeightMode::Meta,
        };
        exact &= meta_loss(&wv, &losses)? == losses[j];
    }
    pass &= exact;
    notes.push(format!("e_j weights give L_j exactly: {exact}"));
    Ok(verdict(pass, notes.join("; ")))
}

fn convergence() -> Outcome {
    let start = Instant::now();
    let data = build_dataset(
        &DatasetSpec {
            source: DatasetSource::Blobs {
                n: 200,
                centers: vec![vec![-3.0, 0.0], vec![3.0, 0.0]],
                std: 0.5,
            },
            labels_per_class: LabelBudget::PerClass(5),
            val_fraction: 0.0,
            n_test: 200,
            test_fraction: 0.0,
            standardize: true,
        },
        0,
    )?;
    // Plain SGD as in the step-size conditions; MixUp is off because its soft
    // targets move the stationary point away from the supervised minimum.
    let cfg = TrainConfig {
        hidden: vec![],
        epochs: 200,
        schedule: Schedule::InvT,
        method: Method::MetaSemi,
        alpha0: 0.14,
        momentum: 0.0,
        flags: meta_semi::train::Flags {
            no_mixup: true,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let (_, history) = train(&cfg, &data)?;
    let norms: Vec<f64> = history.iter().map(|r| r.sup_grad_norm).collect();
    let (first, last) = (norms[0], *norms.last().unwrap());
    let smooth: Vec<f64> = norms
        .windows(10)
        .map(|w| w.iter().sum::<f64>() / 10.0)
        .collect();
    let rises = smooth.windows(2).filter(|p| p[1] > p[0]).count();
    let (fast, time) = within(Duration::from_secs(60), start);
    Ok(verdict(
        last < 0.1 * first && rises == 0 && fast,
        format!(
            "grad norm epoch 1 {first:.4e}, epoch 200 {last:.4e} (ratio {:.4}, need < 0.1); smoothed series rises {rises} times; {time}",
            last / first
        ),
    ))
}

fn ssl_benefit(bench: &mut Bench) -> Outcome {
    let start = Instant::now();
    let (m, s) = bench.headline()?;
    let (mm, ms) = (mean_std(&m).0, mean_std(&s).0);
    let gap = ms - mm;
    let (fast, time) = within(Duration::from_secs(300), start);
    Ok(verdict(
        gap >= 0.05 && mm < 0.10 && fast,
        format!(
            "meta_semi {:.2}% vs supervised {:.2}%: gap {:.2}pp (need >= 5), meta_semi < 10%: {}; per seed {:?}; {time}",
            100.0 * mm,
            100.0 * ms,
            100.0 * gap,
            mm < 0.10,
            m.iter().map(|e| (1000.0 * e).round() / 10.0).collect::<Vec<_>>()
        ),
    ))
}

fn ablation_order(bench: &mut Bench) -> Outcome {
    let (m, _) = bench.headline()?;
    let start = Instant::now();
    let groups = [
        bench.with_method(Method::Const1),
        bench.with_method(Method::Pm1),
    ];
    let runs = paired_runs(&bench.config(), &groups)?;
    let (fast, time) = within(Duration::from_secs(900), start);
    let (mm, c1, pm) = (mean_std(&m).0, mean_std(&runs[0]).0, mean_std(&runs[1]).0);
    let slack = 0.01;
    Ok(verdict(
        mm <= c1 + slack && c1 <= pm + slack && fast,
        format!(
            "meta_semi {:.2}% <= const1 {:.2}% <= pm1 {:.2}% (1pp slack); {time}",
            100.0 * mm,
            100.0 * c1,
            100.0 * pm
        ),
    ))
}

fn beta_sensitivity(bench: &mut Bench) -> Outcome {
    let gap = bench.gap()?;
    let start = Instant::now();
    let mut run = bench.config();
    run.seeds = 3;
    let groups: Vec<TrainConfig> = [0.2, 0.5, 1.0]
        .iter()
        .map(|&beta| TrainConfig {
            beta,
            ..bench.with_method(Method::MetaSemi)
        })
        .collect();
    let means: Vec<f64> = paired_runs(&run, &groups)?
        .iter()
        .map(|e| mean_std(e).0)
        .collect();
    let spread = means.iter().cloned().fold(f64::MIN, f64::max)
        - means.iter().cloned().fold(f64::MAX, f64::min);
    let (fast, time) = within(Duration::from_secs(600), start);
    Ok(verdict(
        spread < gap / 2.0 && fast,
        format!(
            "mean errors for beta 0.2/0.5/1.0: {:.2}%/{:.2}%/{:.2}%, spread {:.2}pp vs half-gap {:.2}pp; {time}",
            100.0 * means[0],
            100.0 * means[1],
            100.0 * means[2],
            100.0 * spread,
            50.0 * gap
        ),
    ))
}

/// Trains through the command-line entry point; returns the output folder.
fn cli_train(config: &Path, out: &Path) -> Result<PathBuf, Box<dyn std::error::Error>> {
    let args = [
        "meta-semi",
        "train",
        "--config",
        path_str(config),
        "--out",
        path_str(out),
    ];
    match cli::main_with_args(args) {
        EXIT_OK => Ok(out.to_path_buf()),
        code => Err(format!("train exited with status {code}").into()),
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("temporary paths are UTF-8")
}

/// The criterion-7 setup with the per-epoch assumption diagnostic switched on.
fn diagnostic_config(dir: &Path) -> Result<PathBuf, Box<dyn std::error::Error>> {
    let path = dir.join("diagnostic.conf");
    fs::write(&path, format!("{TWO_MOONS}assumption_mc = 100\n"))
        .map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

fn assumption_series(dir: &Path) -> Outcome {
    let start = Instant::now();
    let out = cli_train(&diagnostic_config(dir)?, &dir.join("first"))?;
    let path = out.join("metrics.csv");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let col = lines
        .next()
        .and_then(|h| h.split(',').position(|c| c == "assumption_ratio"))
        .ok_or("metrics.csv has no assumption_ratio column")?;
    let ratios: Vec<Option<f64>> = lines
        .map(|l| l.split(',').nth(col).and_then(|v| v.parse().ok()))
        .collect();
    let good = ratios
        .iter()
        .filter(|r| matches!(r, Some(v) if v.is_finite() && *v >= 0.0))
        .count();
    let (lo, hi) = ratios
        .iter()
        .flatten()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(verdict(
        good == ratios.len() && ratios.len() == 100,
        format!(
            "{good}/{} epochs with a finite non-negative ratio (range {lo:.3e}..{hi:.3e}), exported to metrics.csv; {:.1}s",
            ratios.len(),
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn determinism(dir: &Path) -> Outcome {
    let first = dir.join("first");
    if !first.join("metrics.csv").exists() {
        cli_train(&diagnostic_config(dir)?, &first)?;
    }
    let again = cli_train(&first.join("manifest.conf"), &dir.join("again"))?;
    let read = |p: PathBuf| fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    let (a, b) = (
        read(first.join("metrics.csv"))?,
        read(again.join("metrics.csv"))?,
    );
    Ok(verdict(
        a == b,
        format!(
            "rerun from manifest.conf: metrics.csv {} bytes, identical: {}",
            a.len(),
            a == b
        ),
    ))
}

fn idx_bytes(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut b: Vec<u8> = std::iter::once(magic)
        .chain(dims.iter().copied())
        .flat_map(u32::to_be_bytes)
        .collect();
    b.extend_from_slice(body);
    b
}

fn round_trips(dir: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let mut rng = Rng::stream(12, "acceptance-checkpoint");
    let mut identical = 0;
    for i in 0..20 {
        let sizes = match i % 3 {
            0 => vec![2, 2],
            1 => vec![4, 16, 3],
            _ => vec![2, 32, 32, 2],
        };
        let arch = MlpArch::new(sizes, Activation::Relu)?;
        let mut student = init_params(&arch, &mut rng);
        student
            .iter_mut()
            .for_each(|v| *v *= 10f64.powi(rng.below(40) as i32 - 20));
        let ck = Checkpoint {
            teacher: Some(init_params(&arch, &mut rng)),
            arch,
            student,
        };
        let path = dir.join(format!("ck{i}.txt"));
        ck.save(&path)?;
        let back = Checkpoint::load(&path)?;
        let bits = |c: &Checkpoint| -> Vec<u64> {
            c.student
                .iter()
                .chain(c.teacher.iter().flat_map(|t| t.iter()))
                .map(|v| v.to_bits())
                .collect()
        };
        if bits(&ck) == bits(&back) && ck.arch == back.arch {
            identical += 1;
        }
    }
    pass &= identical == 20;
    notes.push(format!("checkpoints bitwise identical {identical}/20"));

    let write = |name: &str, bytes: Vec<u8>| -> Result<PathBuf, Box<dyn std::error::Error>> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| format!("{}: {e}", p.display()))?;
        Ok(p)
    };
    let pixels = [0u8, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 17];
    let img = write("img", idx_bytes(0x0803, &[2, 2, 3], &pixels))?;
    let lbl = write("lbl", idx_bytes(0x0801, &[2], &[7, 1]))?;
    let (images, labels) = load_idx(&img, &lbl)?;
    let exact = images.images.concat()
        == pixels.iter().map(|&p| p as f64 / 255.0).collect::<Vec<_>>()
        && labels == vec![7, 1]
        && (images.rows, images.cols) == (2, 3);
    pass &= exact;
    notes.push(format!("IDX fixture parses to exact pixels: {exact}"));

    let bad_magic = write("bad_magic", idx_bytes(0x0801, &[2], &[1, 2]))?;
    let short = write("short", idx_bytes(0x0803, &[2, 2, 3], &pixels[..11]))?;
    let one_label = write("one", idx_bytes(0x0801, &[1], &[3]))?;
    let cases = [
        ("bad magic", load_idx(&bad_magic, &lbl).err(), "BadMagic"),
        ("truncated", load_idx(&short, &lbl).err(), "Truncated"),
        (
            "count mismatch",
            load_idx(&img, &one_label).err(),
            "CountMismatch",
        ),
        (
            "missing file",
            load_idx(&dir.join("absent"), &lbl).err(),
            "Io",
        ),
    ];
    for (what, err, want) in cases {
        let got = match err {
            Some(Error::Idx(IdxError::BadMagic { .. })) => "BadMagic",
            Some(Error::Idx(IdxError::Truncated { .. })) => "Truncated",
            Some(Error::Idx(IdxError::CountMismatch { .. })) => "CountMismatch",
            Some(Error::Io { .. }) => "Io",
            Some(_) => "other error",
            None => "no error",
        };
        pass &= got == want;
        notes.push(format!("{what} -> {got}"));
    }
    Ok(verdict(pass, notes.join("; ")))
}

fn main() {
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let scratch = tempfile::tempdir().expect("temporary directory");
    let mut bench = Bench::default();

    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (pass, detail) = match outcome {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {n:>2} {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    };

    if wanted(1) {
        report(1, "gradient correctness", gradient_correctness());
    }
    if wanted(2) {
        report(2, "one-step meta-gradient closed form", closed_form());
    }
    if wanted(3) {
        report(3, "M-step linearity", linearity());
    }
    if wanted(4) {
        report(4, "weight-rule invariance", weight_invariance());
    }
    if wanted(5) {
        report(5, "meta-loss conventions", loss_conventions());
    }
    if wanted(6) {
        report(6, "linear-model convergence", convergence());
    }
    if wanted(7) {
        report(7, "semi-supervised benefit", ssl_benefit(&mut bench));
    }
    if wanted(8) {
        report(8, "reweighting ablation order", ablation_order(&mut bench));
    }
    if wanted(9) {
        report(9, "beta sensitivity", beta_sensitivity(&mut bench));
    }
    if wanted(10) {
        report(
            10,
            "assumption diagnostic",
            assumption_series(scratch.path()),
        );
    }
    if wanted(11) {
        report(11, "determinism", determinism(scratch.path()));
    }
    if wanted(12) {
        report(
            12,
            "checkpoint and IDX round trips",
            round_trips(scratch.path()),
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
