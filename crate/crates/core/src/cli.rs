//! The `specbound` command line: gen-data, train, analyze, verify,
//! attack-eval.
//!
//! Exit codes: 0 success, 1 usage (bad flags, unreadable or malformed
//! files), 2 lemma-verification failure, 3 numeric failure. Every output
//! goes to an explicit path and is a pure function of the inputs, flags and
//! seed. Progress goes to standard error. `SPECBOUND_THREADS` caps the
//! worker pool.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::bounds::{generalization_bound, BoundInputs, BoundReport, TheoremTag};
use crate::data::{gen_blobs, gen_blobs_with_spread, Dataset};
use crate::error::{Error, Result};
use crate::io::{self, Field, ReportFormat};
use crate::margin::{losses_from_margins, median, sample_margins, AttackSpec, NormOrder, SampleMargins};
use crate::network::NetworkKind;
use crate::train::{train, TrainConfig, TrainMode};
use crate::verify::{run_suite, Suite, SuiteConfig};

pub const THREADS_ENV: &str = "SPECBOUND_THREADS";

/// Floor of the automatic margin scale.
pub const GAMMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "specbound", version, about = "Spectrally-normalized PAC-Bayes bounds for ReLU networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic blob dataset, or convert IDX image files.
    GenData(GenDataArgs),
    /// Train a feedforward ReLU network with SGD.
    Train(TrainArgs),
    /// Compute generalization bounds and empirical margin losses.
    Analyze(AnalyzeArgs),
    /// Run Monte-Carlo checks of the perturbation inequalities.
    Verify(VerifyArgs),
    /// Write per-sample clean and attacked margins.
    AttackEval(AttackEvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Per-coordinate cluster spread; defaults to separation / (8√n).
    #[arg(long)]
    pub spread: Option<f64>,
    /// Norm bound B.
    #[arg(long = "B", visible_alias = "b", default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// IDX image file; switches to conversion mode with --idx-labels.
    #[arg(long, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    #[arg(long)]
    pub max_count: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Hidden widths, comma separated; empty for a linear classifier.
    #[arg(long, value_delimiter = ',', default_value = "32,32")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value = "standard")]
    pub mode: String,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    #[arg(long, default_value = "2")]
    pub p: NormOrder,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_net: PathBuf,
    #[arg(long)]
    pub out_history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Margin scale, or "auto" for the floored median clean margin.
    #[arg(long, default_value = "auto")]
    pub gamma: String,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value = "2")]
    pub p: NormOrder,
    /// Adds the FGM comparison bound with this gradient floor.
    #[arg(long)]
    pub farnia_kappa: Option<f64>,
    /// Adds the non-ℓ_p bound with this magnitude bound.
    #[arg(long = "nonlp-D", visible_alias = "nonlp-d")]
    pub nonlp_d: Option<f64>,
    #[arg(long)]
    pub union_bound: bool,
    /// Bound modes to report, comma separated; chosen from the flags by default.
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<TheoremTag>,
    /// Held-out data for the empirical gap proxy.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Also write a standard-vs-robust comparison table (CSV).
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Report format; inferred from the extension by default.
    #[arg(long)]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// recursion, margin, robust-margin, endpoint, tail, homogeneity or all.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid points per axis of the brute-force oracle.
    #[arg(long, default_value_t = 41)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Args)]
pub struct AttackEvalArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value = "2")]
    pub p: NormOrder,
    #[arg(long, default_value_t = 40)]
    pub steps: usize,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("specbound: {e}");
        return e.exit_code();
    }
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("specbound: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn execute(command: Command) -> Result<i32> {
    match command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::AttackEval(a) => cmd_attack_eval(&a),
    }
}

fn report_format(flag: Option<ReportFormat>, path: &Path) -> ReportFormat {
    flag.unwrap_or_else(|| ReportFormat::from_path(path))
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<i32> {
    let data = match (&a.idx_images, &a.idx_labels) {
        (Some(images), Some(labels)) => io::load_idx(images, labels, a.max_count, a.b)?,
        _ => match a.spread {
            Some(spread) => gen_blobs_with_spread(a.k, a.n, a.m, a.separation, a.b, spread, a.seed)?,
            None => gen_blobs(a.k, a.n, a.m, a.separation, a.b, a.seed)?,
        },
    };
    io::save_dataset(&data, &a.out)?;
    eprintln!("wrote {} samples (n = {}, k = {}, B = {}) to {}", data.len(), data.n(), data.k(), data.b(), a.out.display());
    Ok(0)
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let data = io::load_dataset(&a.data)?;
    let mut config = TrainConfig::standard(a.hidden.clone(), a.epochs, a.lr, a.batch_size, a.seed);
    if a.mode.parse::<TrainMode>()? == TrainMode::Adversarial {
        config = config.adversarial(a.p, a.eps);
    }
    let (net, history) = train(&data, &config)?;
    io::save_network(&net, &a.out_net)?;
    if let Some(path) = &a.out_history {
        history.write_csv(path)?;
    }
    if let Some(last) = history.last() {
        eprintln!(
            "{} training: epoch {} loss {:.4e} error {:.4e} phi {:.4e}",
            config.mode, last.epoch, last.loss, last.error, last.phi
        );
    }
    Ok(0)
}

/// `max(1e-6, median clean label margin)`.
pub fn auto_gamma(margins: &[SampleMargins]) -> f64 {
    let clean: Vec<f64> = margins.iter().map(|m| m.clean).collect();
    median(&clean).map_or(GAMMA_FLOOR, |m| m.max(GAMMA_FLOOR))
}

fn default_modes(a: &AnalyzeArgs, kind: NetworkKind) -> Vec<TheoremTag> {
    if !a.modes.is_empty() {
        return a.modes.clone();
    }
    if kind == NetworkKind::Resnet {
        return vec![TheoremTag::Resnet];
    }
    let mut modes = vec![TheoremTag::Standard, TheoremTag::Robust];
    if a.p != NormOrder::L2 {
        modes.push(TheoremTag::RobustLp);
    }
    if a.nonlp_d.is_some() {
        modes.push(TheoremTag::NonLp);
    }
    if a.farnia_kappa.is_some() {
        modes.push(TheoremTag::Farnia);
    }
    modes
}

/// Clean and robust 0-1 margin losses at γ = 0 used by the gap proxy.
fn zero_margin_errors(margins: &[SampleMargins]) -> (f64, Option<f64>) {
    let l = losses_from_margins(margins, 0.0);
    (l.clean_loss, l.robust_loss)
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<i32> {
    if !(a.eps >= 0.0) {
        return Err(Error::usage(format!("--eps must be >= 0, got {}", a.eps)));
    }
    let net = io::load_network(&a.net)?;
    let data = io::load_dataset(&a.data)?;
    if data.max_norm() > data.b() {
        return Err(Error::usage("dataset violates its stored norm bound"));
    }
    let attack = AttackSpec::new(a.p, a.eps).with_seed(a.seed);
    let margins = sample_margins(&net, &data, Some(&attack))?;
    let (gamma, gamma_auto) = match a.gamma.as_str() {
        "auto" => (auto_gamma(&margins), true),
        v => (
            v.parse::<f64>()
                .ok()
                .filter(|g| *g > 0.0 && g.is_finite())
                .ok_or_else(|| Error::usage(format!("--gamma must be a positive number or auto, got {v:?}")))?,
            false,
        ),
    };
    let losses = losses_from_margins(&margins, gamma);

    let mut inputs = BoundInputs::new(data.b(), a.eps, gamma, a.delta, data.len(), data.n());
    inputs.p = a.p;
    inputs.kappa = a.farnia_kappa;
    inputs.d_bound = a.nonlp_d;
    inputs.union_bound = a.union_bound;
    let reports = default_modes(a, net.kind())
        .into_iter()
        .map(|mode| generalization_bound(&net, &inputs, mode))
        .collect::<Result<Vec<BoundReport>>>()?;

    let (clean_gap, robust_gap) = match &a.test_data {
        Some(path) => {
            let test = io::load_dataset(path)?;
            let test_margins = sample_margins(&net, &test, Some(&attack))?;
            let (train_clean, train_robust) = zero_margin_errors(&margins);
            let (test_clean, test_robust) = zero_margin_errors(&test_margins);
            (
                Some(test_clean - train_clean),
                test_robust.zip(train_robust).map(|(t, r)| t - r),
            )
        }
        None => (None, None),
    };

    let opt = |v: Option<f64>| v.map_or(Field::Null, Field::Num);
    let report = io::bound_report(&reports, Some(a.seed))
        .with_summary("gamma", Field::Num(gamma))
        .with_summary("gamma_auto", Field::Bool(gamma_auto))
        .with_summary("m", Field::Int(data.len() as u64))
        .with_summary("clean_margin_loss", Field::Num(losses.clean_loss))
        .with_summary("robust_margin_loss_lower", opt(losses.robust_loss))
        .with_summary("clean_gap_proxy", opt(clean_gap))
        .with_summary("robust_gap_proxy", opt(robust_gap));
    io::write_report(&report, &a.out, report_format(a.format, &a.out))?;

    if let Some(path) = &a.compare {
        let find = |tag| reports.iter().find(|r| r.theorem_tag == tag).map(|r| r.bound_value);
        let cell = |v: Option<f64>| v.map_or(String::new(), io::format_number);
        let table = format!(
            "quantity,standard,robust\ngap_proxy,{},{}\nbound,{},{}\n",
            cell(clean_gap),
            cell(robust_gap),
            cell(find(TheoremTag::Standard)),
            cell(find(TheoremTag::Robust)),
        );
        std::fs::write(path, table).map_err(|e| Error::io(path, e))?;
    }
    for r in &reports {
        eprintln!("{:<10} bound {:.4e} phi {:.4e}", r.theorem_tag, r.bound_value, r.phi);
    }
    Ok(0)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let suites: Vec<Suite> = match a.suite.as_str() {
        "all" => Suite::ALL.to_vec(),
        s => vec![s.parse()?],
    };
    if a.trials == 0 {
        return Err(Error::usage("--trials must be at least 1"));
    }
    if a.resolution < 2 {
        return Err(Error::usage("--resolution must be at least 2"));
    }
    let config = SuiteConfig {
        resolution: a.resolution,
        ..SuiteConfig::default()
    };
    let mut summaries = Vec::with_capacity(suites.len());
    for suite in suites {
        let s = run_suite(suite, a.trials, a.seed, &config)?;
        eprintln!(
            "{:<14} trials {:>6} violations {:>4} inconclusive {:>4} min slack {:.3e}",
            s.name, s.trials, s.violations, s.inconclusive, s.min_slack
        );
        summaries.push(s);
    }
    let report = io::suite_report(&summaries, a.seed);
    io::write_report(&report, &a.out, report_format(a.format, &a.out))?;
    Ok(if summaries.iter().all(|s| s.passed()) { 0 } else { 2 })
}

pub fn cmd_attack_eval(a: &AttackEvalArgs) -> Result<i32> {
    let net = io::load_network(&a.net)?;
    let data = io::load_dataset(&a.data)?;
    let mut attack = AttackSpec::new(a.p, a.eps).with_seed(a.seed);
    attack.steps = a.steps;
    attack.restarts = a.restarts;
    if a.steps > 0 && a.eps > 0.0 {
        attack.step_size = 2.5 * a.eps / a.steps as f64;
    }
    let margins = sample_margins(&net, &data, Some(&attack))?;
    write_margins(&data, &margins, &a.out)?;
    let losses = losses_from_margins(&margins, 0.0);
    eprintln!(
        "clean error {:.4e}, attacked error {:.4e}",
        losses.clean_loss,
        losses.robust_loss.unwrap_or(f64::NAN)
    );
    Ok(0)
}

fn write_margins(data: &Dataset, margins: &[SampleMargins], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let encode = |e: csv::Error| Error::numeric(format!("csv encoding failed: {e}"));
    w.write_record(["index", "label", "clean_margin", "robust_margin", "method"])
        .map_err(encode)?;
    for (i, (s, m)) in data.samples().iter().zip(margins).enumerate() {
        w.write_record([
            i.to_string(),
            s.y.to_string(),
            format!("{:e}", m.clean),
            m.robust.map_or(String::new(), |r| format!("{r:e}")),
            m.method.map_or("", |x| x.as_str()).to_string(),
        ])
        .map_err(encode)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::numeric(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
