use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;

use permlearn::autodiff::run_gradient_gate;
use permlearn::gumbel::{sample_gumbel_matching, sample_gumbel_sinkhorn};
use permlearn::io::{self, load_logits, params_document, params_from_json, SCHEMA_VERSION};
use permlearn::matching::hungarian;
use permlearn::rng::derive_seed;
use permlearn::sinkhorn::sinkhorn;
use permlearn::sortnet::{self, evaluate_sort, table1_csv, train_sort, Table1Row, TrainConfig};
use permlearn::vi::{run_vi_experiment, ViExperiment};
use permlearn::{Error, Matrix, Result, SinkhornConfig};

use crate::run_dir::RunDir;
use crate::settings::Settings;
use crate::{Cli, Command, Common, Format};

#[derive(Debug, Args)]
pub struct SinkhornArgs {
    /// Input matrix (.csv or .json).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output file; stdout in `--format` when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Receives the JSON array `mapping`, with item `i` assigned to `mapping[i]`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SampleMode {
    Matching,
    Sinkhorn,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "matching")]
    pub mode: SampleMode,
    #[arg(long)]
    pub count: Option<usize>,
    /// JSON-lines output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckGradsArgs {
    /// Random instances per check.
    #[arg(long)]
    pub instances: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// Sequence length.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub units: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Gumbel draws per training example.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub train_low: Option<f64>,
    #[arg(long)]
    pub train_high: Option<f64>,
    #[arg(long)]
    pub test_low: Option<f64>,
    #[arg(long)]
    pub test_high: Option<f64>,
    #[arg(long)]
    pub test_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainSortArgs {
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalSortArgs {
    /// Parameter document written by `train-sort`.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub test_low: Option<f64>,
    #[arg(long)]
    pub test_high: Option<f64>,
    #[arg(long)]
    pub test_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ViMatchArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Item dimension.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub tau_prior: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of independent tasks.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Drop the KL term from the objective.
    #[arg(long)]
    pub no_kl: bool,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    /// Comma-separated `low:high` test intervals.
    #[arg(long, value_delimiter = ',', value_parser = parse_interval)]
    pub test_dists: Option<Vec<Interval>>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval(pub f64, pub f64);

fn parse_interval(s: &str) -> std::result::Result<Interval, String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected low:high, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    if !(lo < hi) {
        return Err(format!("empty interval {s:?}"));
    }
    Ok(Interval(lo, hi))
}

fn list_setting<T: std::str::FromStr + ToString>(
    settings: &mut Settings,
    key: &str,
    flag: Option<Vec<T>>,
    default: &str,
) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let joined = flag.map(|v| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
    let raw: String = settings.get(key, joined, default.to_string())?;
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|e| Error::Config(format!("{key}: {part:?}: {e}")))
        })
        .collect()
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.0, self.1)
    }
}

impl std::str::FromStr for Interval {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_interval(s)
    }
}

/// Resolved values shared by every subcommand.
struct Context {
    settings: Settings,
    seed: u64,
    format: Format,
    out_dir: PathBuf,
    name: String,
}

impl Context {
    fn new(common: &Common, default_name: &str) -> Result<Self> {
        let mut settings = Settings::load(common.config.as_deref())?;
        let seed = settings.get("seed", common.seed, 0u64)?;
        let format = match settings.get("format", common.format.map(format_name), "csv".to_string())?.as_str() {
            "csv" => Format::Csv,
            "json" => Format::Json,
            other => return Err(Error::Config(format!("unknown format {other:?}"))),
        };
        let out_dir: String = settings.get(
            "out_dir",
            common.out_dir.as_ref().map(|p| p.display().to_string()),
            ".".to_string(),
        )?;
        let name = settings.get("name", common.name.clone(), default_name.to_string())?;
        Ok(Self {
            settings,
            seed,
            format,
            out_dir: PathBuf::from(out_dir),
            name,
        })
    }

    fn sinkhorn(&mut self, common: &Common, default_iters: usize) -> Result<SinkhornConfig> {
        let tau = self.settings.get("tau", common.tau, 1.0)?;
        let iters = self.settings.get("iters", common.iters, default_iters)?;
        let cfg = SinkhornConfig::new(tau, iters);
        cfg.validate()?;
        Ok(cfg)
    }

    fn run_dir(&self) -> Result<RunDir> {
        let dir = RunDir::create(&self.out_dir, &self.name)?;
        dir.write("config.snapshot", &self.settings.snapshot())?;
        Ok(dir)
    }
}

fn format_name(f: Format) -> String {
    match f {
        Format::Csv => "csv".into(),
        Format::Json => "json".into(),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Sinkhorn(a) => cmd_sinkhorn(c, a),
        Command::Match(a) => cmd_match(c, a),
        Command::Sample(a) => cmd_sample(c, a),
        Command::CheckGrads(a) => cmd_check_grads(c, a),
        Command::TrainSort(a) => cmd_train_sort(c, a),
        Command::EvalSort(a) => cmd_eval_sort(c, a),
        Command::ViMatch(a) => cmd_vi_match(c, a),
        Command::Table1(a) => cmd_table1(c, a),
    }
}

fn cmd_sinkhorn(common: &Common, a: &SinkhornArgs) -> Result<()> {
    let mut ctx = Context::new(common, "sinkhorn")?;
    let cfg = ctx.sinkhorn(common, 20)?;
    let x = load_logits(&a.input)?;
    let s = sinkhorn(&x, &cfg)?.into_matrix();
    match &a.out {
        Some(p) => io::save_matrix(p, &s),
        None => write_output(None, &matrix_text(&s, ctx.format)?),
    }
}

fn matrix_text(m: &Matrix<f64>, format: Format) -> Result<String> {
    Ok(match format {
        Format::Csv => io::matrix_to_csv(m),
        Format::Json => io::matrix_to_json(m)? + "\n",
    })
}

fn cmd_match(common: &Common, a: &MatchArgs) -> Result<()> {
    Context::new(common, "match")?;
    let x = load_logits(&a.input)?;
    let p = hungarian(&x)?;
    write_output(a.out.as_deref(), &(serde_json::to_string(p.mapping())? + "\n"))
}

fn cmd_sample(common: &Common, a: &SampleArgs) -> Result<()> {
    let mut ctx = Context::new(common, "sample")?;
    let cfg = ctx.sinkhorn(common, 20)?;
    let count = ctx.settings.get("count", a.count, 1usize)?;
    let x = load_logits(&a.input)?;
    let mut out = String::new();
    for k in 0..count {
        let seed = derive_seed(ctx.seed, k as u64);
        let line = match a.mode {
            SampleMode::Matching => {
                let p = sample_gumbel_matching(&x, seed)?;
                json!({"schema_version": SCHEMA_VERSION, "index": k, "seed": seed, "permutation": p.mapping()})
            }
            SampleMode::Sinkhorn => {
                let s = sample_gumbel_sinkhorn(&x, &cfg, seed)?;
                json!({"schema_version": SCHEMA_VERSION, "index": k, "seed": seed, "matrix": s.matrix().to_rows()})
            }
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    write_output(a.out.as_deref(), &out)
}

fn cmd_check_grads(common: &Common, a: &CheckGradsArgs) -> Result<()> {
    let mut ctx = Context::new(common, "check-grads")?;
    let instances = ctx.settings.get("instances", a.instances, 20usize)?;
    let rows = run_gradient_gate(instances, ctx.seed)?;
    let text = match ctx.format {
        Format::Csv => {
            let mut s = String::from("op,tau,instances,max_rel_error,tolerance,passed\n");
            for r in &rows {
                let tau = r.tau.map_or(String::new(), |t| t.to_string());
                let _ = writeln!(s, "{},{tau},{},{},{},{}", r.op, r.instances, r.max_rel_error, r.tolerance, r.passed);
            }
            s
        }
        Format::Json => serde_json::to_string_pretty(&json!({"schema_version": SCHEMA_VERSION, "checks": rows}))? + "\n",
    };
    write_output(None, &text)?;
    match rows.iter().find(|r| !r.passed) {
        Some(r) => Err(Error::Domain(format!(
            "gradient check {} failed: {:e} > {:e}",
            r.op, r.max_rel_error, r.tolerance
        ))),
        None => Ok(()),
    }
}

fn train_config(ctx: &mut Context, common: &Common, t: &TrainFlags, n_default: usize) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let sk = ctx.sinkhorn(common, d.iterations)?;
    let s = &mut ctx.settings;
    let cfg = TrainConfig {
        n: s.get("n", t.n, n_default)?,
        n_units: s.get("units", t.units, d.n_units)?,
        tau: sk.tau,
        iterations: sk.iterations,
        noise_scale: s.get("noise_scale", t.noise_scale, d.noise_scale)?,
        samples_per_example: s.get("samples", t.samples, d.samples_per_example)?,
        batch_size: s.get("batch_size", t.batch_size, d.batch_size)?,
        learning_rate: s.get("lr", t.lr, d.learning_rate)?,
        steps: s.get("steps", t.steps, d.steps)?,
        seed: ctx.seed,
        train_low: s.get("train_low", t.train_low, d.train_low)?,
        train_high: s.get("train_high", t.train_high, d.train_high)?,
        test_low: s.get("test_low", t.test_low, d.test_low)?,
        test_high: s.get("test_high", t.test_high, d.test_high)?,
        test_size: s.get("test_size", t.test_size, d.test_size)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn rows_text(rows: &[Table1Row], format: Format) -> Result<String> {
    Ok(match format {
        Format::Csv => table1_csv(rows),
        Format::Json => serde_json::to_string_pretty(&json!({"schema_version": SCHEMA_VERSION, "rows": rows}))? + "\n",
    })
}

fn log_losses(dir: &mut RunDir, n: usize, losses: &[f64]) -> Result<()> {
    let every = (losses.len() / 20).max(1);
    for (step, loss) in losses.iter().enumerate().filter(|(s, _)| s % every == 0 || s + 1 == losses.len()) {
        dir.log(&format!("N={n} step {step} loss {loss:.6}"))?;
    }
    Ok(())
}

fn cmd_train_sort(common: &Common, a: &TrainSortArgs) -> Result<()> {
    let mut ctx = Context::new(common, "train-sort")?;
    let cfg = train_config(&mut ctx, common, &a.train, TrainConfig::default().n)?;
    let mut dir = ctx.run_dir()?;
    dir.log(&format!("training N={} for {} steps", cfg.n, cfg.steps))?;
    let (params, log) = train_sort(&cfg)?;
    log_losses(&mut dir, cfg.n, &log.losses)?;
    let metrics = evaluate_sort(&params, cfg.test_low, cfg.test_high, cfg.test_size, cfg.seed)?;
    let rows = [Table1Row {
        test_dist_low: cfg.test_low,
        test_dist_high: cfg.test_high,
        n: cfg.n,
        metrics,
    }];
    dir.write("params.json", &(io::params_to_json(&params)? + "\n"))?;
    dir.write("metrics.csv", &table1_csv(&rows))?;
    dir.log("done")?;
    write_output(None, &rows_text(&rows, ctx.format)?)
}

fn cmd_eval_sort(common: &Common, a: &EvalSortArgs) -> Result<()> {
    let mut ctx = Context::new(common, "eval-sort")?;
    let text = std::fs::read_to_string(&a.params).map_err(|e| Error::Io(format!("{}: {e}", a.params.display())))?;
    let params = params_from_json(&text)?;
    let d = TrainConfig::default();
    let low = ctx.settings.get("test_low", a.test_low, d.test_low)?;
    let high = ctx.settings.get("test_high", a.test_high, d.test_high)?;
    let size = ctx.settings.get("test_size", a.test_size, d.test_size)?;
    let metrics = evaluate_sort(&params, low, high, size, ctx.seed)?;
    let rows = [Table1Row {
        test_dist_low: low,
        test_dist_high: high,
        n: params.n(),
        metrics,
    }];
    write_output(None, &rows_text(&rows, ctx.format)?)
}

fn cmd_vi_match(common: &Common, a: &ViMatchArgs) -> Result<()> {
    let mut ctx = Context::new(common, "vi-match")?;
    let d = ViExperiment::default();
    let sk = ctx.sinkhorn(common, d.iterations)?;
    let s = &mut ctx.settings;
    let exp = ViExperiment {
        n: s.get("n", a.n, d.n)?,
        d: s.get("d", a.d, d.d)?,
        sigma: s.get("sigma", a.sigma, d.sigma)?,
        tau: sk.tau,
        tau_prior: s.get("tau_prior", a.tau_prior, sk.tau)?,
        iterations: sk.iterations,
        mc_samples: s.get("mc_samples", a.mc_samples, d.mc_samples)?,
        steps: s.get("steps", a.steps, d.steps)?,
        learning_rate: s.get("lr", a.lr, d.learning_rate)?,
        seeds: s.get("seeds", a.seeds, d.seeds)?,
        use_kl: !s.switch("no_kl", a.no_kl)?,
        seed: ctx.seed,
    };
    let mut dir = ctx.run_dir()?;
    dir.log(&format!("fitting {} tasks", exp.seeds))?;
    let report = run_vi_experiment(&exp)?;
    let mut csv = String::from("task,task_seed,accuracy,final_elbo\n");
    for (k, o) in report.outcomes.iter().enumerate() {
        let _ = writeln!(csv, "{k},{},{},{}", o.task_seed, o.accuracy, o.elbo_trace.last().copied().unwrap_or(f64::NAN));
    }
    dir.write("metrics.csv", &csv)?;
    let posteriors: Vec<_> = report.outcomes.iter().map(|o| o.x.to_rows()).collect();
    let params = json!({"schema_version": SCHEMA_VERSION, "kind": "vi_posteriors", "x": posteriors});
    dir.write("params.json", &(serde_json::to_string_pretty(&params)? + "\n"))?;
    let report_json = serde_json::to_string_pretty(&report)? + "\n";
    dir.write("report.json", &report_json)?;
    dir.log(&format!("mean accuracy {}", report.mean_accuracy))?;
    let text = match ctx.format {
        Format::Csv => csv,
        Format::Json => report_json,
    };
    write_output(None, &text)
}

fn cmd_table1(common: &Common, a: &Table1Args) -> Result<()> {
    let mut ctx = Context::new(common, "table1")?;
    let base = train_config(&mut ctx, common, &a.train, TrainConfig::default().n)?;
    let ns: Vec<usize> = list_setting(&mut ctx.settings, "ns", a.ns.clone(), "5,10,15")?;
    let dists: Vec<Interval> = list_setting(&mut ctx.settings, "test_dists", a.test_dists.clone(), "0:1")?;
    let dists: Vec<(f64, f64)> = dists.iter().map(|i| (i.0, i.1)).collect();
    let mut dir = ctx.run_dir()?;
    dir.log(&format!("training N in {ns:?}"))?;
    let result = sortnet::table1(&base, &ns, &dists)?;
    for (n, log) in ns.iter().zip(&result.logs) {
        log_losses(&mut dir, *n, &log.losses)?;
    }
    let models: Vec<_> = result.models.iter().map(params_document).collect();
    let params = json!({"schema_version": SCHEMA_VERSION, "kind": "sortnet_models", "models": models});
    dir.write("params.json", &(serde_json::to_string_pretty(&params)? + "\n"))?;
    dir.write("metrics.csv", &table1_csv(&result.rows))?;
    dir.log("done")?;
    write_output(None, &rows_text(&result.rows, ctx.format)?)
}
