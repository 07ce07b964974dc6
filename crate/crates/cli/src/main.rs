mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use pathshift::data::{build_frame, load_csv, one_hot, Dataset, GroupRole, OutcomeScale, RoleSpec};
use pathshift::decomposition::{decompose, write_csv_all, DecompositionConfig, DecompositionKind, ReportScale};
use pathshift::estimand::EstimandId;
use pathshift::learners::{Learner, LearnerKind};
use pathshift::nuisance::NuisanceConfig;
use pathshift::oracle::DiscreteDgp;
use pathshift::simulation::{run_grid, DgpKind, DgpSpec, GridConfig, Method, Misspecification, Target};

use config::{FileConfig, OracleConfig, SimulateConfig};

const SEED_ENV: &str = "PATHSHIFT_SEED";
const DEFAULT_N: [usize; 6] = [250, 500, 1000, 2000, 4000, 8000];
const DEFAULT_REPS: usize = 500;

#[derive(Parser)]
#[command(name = "pathshift", version, about = "Mediator-based disparity decomposition")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; falls back to the config, then PATHSHIFT_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a disparity in an observed dataset.
    Decompose(DecomposeArgs),
    /// Run a replication grid on a built-in or custom DGP.
    Simulate(SimulateArgs),
    /// Check the estimators against exact enumeration on discrete fixtures.
    OracleCheck(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Difference,
    Geometric,
    Probability,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Natural,
    Sequential,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LearnerArg {
    Glm,
    SuperLearner,
    Saturated,
    Both,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    #[arg(long, value_enum)]
    decomposition: Option<KindArg>,
    /// Probability truncation level.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    crossfit_folds: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    learner: Option<LearnerArg>,
    /// Comparison pair as `REFERENCE:COMPARISON`; repeatable.
    #[arg(long = "pair")]
    pairs: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// `sim1`, `sim2`, `sim2_exp`, or a JSON DGP spec or discrete fixture.
    #[arg(long)]
    dgp: Option<String>,
    /// `correct`, `misspecified`, `table1`, or a comma list of those.
    #[arg(long)]
    conditions: Option<String>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    truth_draws: Option<usize>,
    #[arg(long, value_enum)]
    learner: Option<LearnerArg>,
    /// Outcome transform: `raw`, `log_positive` or `positive_indicator`.
    #[arg(long, value_parser = parse_outcome_scale)]
    scale: Option<OutcomeScale>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct OracleArgs {
    /// Discrete DGP fixture; repeatable.
    #[arg(long = "fixture")]
    fixtures: Vec<PathBuf>,
    /// Cascade Monte-Carlo draws per estimand; 0 skips the check.
    #[arg(long)]
    mc_draws: Option<usize>,
    /// Largest allowed exact discrepancy.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Largest allowed Monte-Carlo z-score.
    #[arg(long)]
    z: Option<f64>,
}

/// Failure that maps to a distinct exit status.
#[derive(Debug)]
struct CheckFailed;

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("oracle check failed")
    }
}

impl std::error::Error for CheckFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<CheckFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = resolve_seed(cli.seed, file.seed)?;
    if let Some(t) = cli.threads.or(file.threads) {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| file.out.as_ref().map(|p| file.resolve(p)))
        .unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Decompose(args) => cmd_decompose(&args, &file, seed, &out),
        Command::Simulate(args) => cmd_simulate(&args, &file, seed, &out),
        Command::OracleCheck(args) => cmd_oracle_check(&args, &file, seed),
    }
}

fn parse_outcome_scale(s: &str) -> Result<OutcomeScale, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("`{s}` is not one of raw, log_positive, positive_indicator"))
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

fn create_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn learner_for(arg: LearnerArg) -> Learner {
    match arg {
        LearnerArg::Glm => Learner::base(LearnerKind::Linear),
        LearnerArg::SuperLearner | LearnerArg::Both => Learner::default(),
        LearnerArg::Saturated => Learner::Saturated,
    }
}

fn decomposition_config(args: &DecomposeArgs, file: &FileConfig, seed: u64) -> Result<DecompositionConfig> {
    let mut cfg = file.decomposition.clone().unwrap_or_default();
    if let Some(s) = args.scale {
        cfg.scale = match s {
            ScaleArg::Difference => ReportScale::Difference,
            ScaleArg::Geometric => ReportScale::Geometric,
            ScaleArg::Probability => ReportScale::Probability,
        };
    }
    if let Some(k) = args.decomposition {
        cfg.kind = match k {
            KindArg::Natural => DecompositionKind::Natural,
            KindArg::Sequential => DecompositionKind::Sequential,
            KindArg::Both => DecompositionKind::Both,
        };
    }
    if let Some(d) = args.delta {
        cfg.nuisance.delta = d;
    }
    if let Some(f) = args.crossfit_folds {
        cfg.nuisance.crossfit_folds = Some(f);
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(l) = args.learner {
        if l == LearnerArg::Both {
            bail!("--learner both is only meaningful for simulate");
        }
        cfg.nuisance.learner = learner_for(l);
    }
    cfg.nuisance.seed = seed;
    cfg.validate().context("invalid decomposition settings")?;
    Ok(cfg)
}

/// Expands one-hot encoded names in a role list to their indicator columns.
fn expand(names: &[String], encoded: &[String], ds: &Dataset) -> Vec<String> {
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        if encoded.contains(name) {
            let prefix = format!("{name}=");
            out.extend(ds.column_names().filter(|c| c.starts_with(&prefix)).map(String::from));
        } else {
            out.push(name.clone());
        }
    }
    out
}

fn parse_pair(s: &str) -> Result<(String, String)> {
    match s.split_once(':') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
        _ => bail!("--pair expects REFERENCE:COMPARISON, got `{s}`"),
    }
}

fn cmd_decompose(args: &DecomposeArgs, file: &FileConfig, seed: u64, out: &Path) -> Result<()> {
    let data = args
        .data
        .clone()
        .or_else(|| file.data.as_ref().map(|p| file.resolve(p)))
        .ok_or_else(|| anyhow!("no data file: pass --data or set `data` in the config"))?;
    let roles = file
        .roles
        .as_ref()
        .ok_or_else(|| anyhow!("the config needs a [roles] table to assign columns"))?;
    let pairs: Vec<(String, String)> = if args.pairs.is_empty() {
        file.pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    } else {
        args.pairs.iter().map(|s| parse_pair(s)).collect::<Result<_>>()?
    };
    if pairs.is_empty() {
        bail!("no comparison pairs: pass --pair or set `pairs` in the config");
    }
    let cfg = decomposition_config(args, file, seed)?;

    let mut ds = load_csv(&data, &file.na_codes).with_context(|| format!("cannot load {}", data.display()))?;
    for name in &file.one_hot {
        ds = one_hot(&ds, name).with_context(|| format!("cannot one-hot encode `{name}`"))?;
    }
    let covariates = expand(&roles.covariates, &file.one_hot, &ds);
    let mediators = roles
        .mediators
        .iter()
        .map(|block| expand(block, &file.one_hot, &ds))
        .collect();

    let mut reports = Vec::with_capacity(pairs.len());
    for (reference, comparison) in &pairs {
        let spec = RoleSpec {
            covariates: covariates.clone(),
            group: GroupRole {
                name: roles.group.clone(),
                reference: reference.clone(),
                comparison: comparison.clone(),
            },
            mediators: Vec::clone(&mediators),
            outcome: roles.outcome.clone(),
        };
        let frame = build_frame(&ds, &spec).with_context(|| format!("{reference} vs {comparison}"))?;
        info!("{reference} vs {comparison}: {} complete cases", frame.n());
        let report = decompose(&frame, &cfg).with_context(|| format!("{reference} vs {comparison}"))?;
        println!("{}", report.to_text());
        reports.push(report);
    }

    create_out_dir(out)?;
    let json = serde_json::to_string_pretty(&reports)?;
    fs::write(out.join("decomposition.json"), json + "\n")?;
    let mut w = create(&out.join("decomposition.csv"))?;
    write_csv_all(&reports, &mut w)?;
    w.flush()?;
    let text: Vec<String> = reports.iter().map(|r| r.to_text()).collect();
    fs::write(out.join("decomposition.txt"), text.join("\n"))?;
    Ok(())
}

fn load_dgp(name: &str, base: Option<&FileConfig>) -> Result<DgpSpec> {
    Ok(match name {
        "sim1" => DgpSpec::sim1(),
        "sim2" => DgpSpec::sim2(),
        "sim2_exp" => DgpSpec::sim2_log(),
        path => {
            let p = base.map_or_else(|| PathBuf::from(path), |f| f.resolve(Path::new(path)));
            let text = fs::read_to_string(&p).with_context(|| format!("cannot read DGP file {}", p.display()))?;
            match serde_json::from_str::<DgpSpec>(&text) {
                Ok(spec) => spec,
                Err(_) => DgpSpec::discrete(
                    &DiscreteDgp::from_json(&text).with_context(|| format!("invalid DGP file {}", p.display()))?,
                ),
            }
        }
    })
}

fn parse_conditions(s: &str) -> Result<Vec<(String, Misspecification)>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        match part {
            "correct" => out.push(("correct".to_string(), Misspecification::None)),
            "misspecified" => out.push(("all_misspecified".to_string(), Misspecification::All)),
            "table1" => {
                out.push(("correct".to_string(), Misspecification::None));
                out.extend((1..=4).map(|c| (format!("condition_{c}"), Misspecification::Condition(c))));
                out.push(("all_misspecified".to_string(), Misspecification::All));
            }
            other => bail!("unknown condition set `{other}`; use correct, misspecified or table1"),
        }
    }
    out.dedup_by(|a, b| a.0 == b.0);
    Ok(out)
}

fn methods(learner: LearnerArg, conditions: &[(String, Misspecification)], delta: Option<f64>) -> Vec<Method> {
    let learners: Vec<(&str, Learner)> = match learner {
        LearnerArg::Both => vec![("sl", Learner::default()), ("glm", Learner::base(LearnerKind::Linear))],
        LearnerArg::Glm => vec![("glm", learner_for(learner))],
        LearnerArg::SuperLearner => vec![("sl", learner_for(learner))],
        LearnerArg::Saturated => vec![("saturated", learner_for(learner))],
    };
    let mut out = Vec::new();
    for (prefix, l) in &learners {
        for (name, m) in conditions {
            let mut nuisance = NuisanceConfig::with_learner(l.clone());
            if let Some(d) = delta {
                nuisance.delta = d;
            }
            out.push(Method::new(format!("{prefix}_{name}"), nuisance, *m));
        }
    }
    out
}

struct SimDefaults {
    targets: Vec<Target>,
    scale: OutcomeScale,
    learner: LearnerArg,
    conditions: &'static str,
}

fn sim_defaults(spec: &DgpSpec) -> SimDefaults {
    let k = spec.k();
    match &spec.kind {
        DgpKind::Sim1MepsLike { .. } => SimDefaults {
            targets: (1..=k)
                .map(|j| Target::rho(EstimandId::Mediator(j)))
                .chain([Target::rho(EstimandId::Direct)])
                .collect(),
            scale: OutcomeScale::LogPositive,
            learner: LearnerArg::Both,
            conditions: "correct",
        },
        DgpKind::Sim2Misspec { exp_outcome, .. } => SimDefaults {
            targets: [EstimandId::Direct]
                .into_iter()
                .chain((1..=k).map(EstimandId::Mediator))
                .map(Target::gamma)
                .collect(),
            scale: if *exp_outcome { OutcomeScale::LogPositive } else { OutcomeScale::Raw },
            learner: LearnerArg::Glm,
            conditions: "correct,misspecified",
        },
        DgpKind::DiscreteToy { .. } => SimDefaults {
            targets: EstimandId::natural(k).into_iter().map(Target::gamma).collect(),
            scale: OutcomeScale::Raw,
            learner: LearnerArg::Saturated,
            conditions: "correct",
        },
    }
}

fn cmd_simulate(args: &SimulateArgs, file: &FileConfig, seed: u64, out: &Path) -> Result<()> {
    let sc: SimulateConfig = file.simulate.clone().unwrap_or_default();
    let spec = match (&args.dgp, &sc.dgp) {
        (Some(d), _) => load_dgp(d, None)?,
        (None, Some(d)) => load_dgp(d, Some(file))?,
        (None, None) => bail!("no DGP: pass --dgp or set `simulate.dgp` in the config"),
    }
    .with_seed(seed);
    spec.validate().context("invalid DGP")?;
    let defaults = sim_defaults(&spec);

    let methods = match (&sc.methods, args.learner.is_some() || args.conditions.is_some()) {
        (Some(m), false) => m.clone(),
        _ => {
            let learner = args
                .learner
                .or(sc.learner.as_deref().map(|s| LearnerArg::from_str(s, true)).transpose().map_err(|e| anyhow!(e))?)
                .unwrap_or(defaults.learner);
            let conditions = args
                .conditions
                .as_deref()
                .or(sc.conditions.as_deref())
                .unwrap_or(defaults.conditions);
            methods(learner, &parse_conditions(conditions)?, None)
        }
    };
    let cfg = GridConfig {
        targets: sc.targets.clone().unwrap_or(defaults.targets),
        n_list: args.n.clone().or(sc.n.clone()).unwrap_or_else(|| DEFAULT_N.to_vec()),
        reps: args.reps.or(sc.reps).unwrap_or(DEFAULT_REPS),
        methods,
        scale: args.scale.or(sc.scale).unwrap_or(defaults.scale),
        truth_draws: args.truth_draws.or(sc.truth_draws).unwrap_or(10_000_000),
        truth_seed: sc.truth_seed.unwrap_or(seed.wrapping_add(1)),
        alpha: args.alpha.or(sc.alpha).unwrap_or(0.05),
    };
    cfg.validate().context("invalid simulation settings")?;
    info!(
        "{}: {} targets, n = {:?}, {} reps, {} methods",
        spec.name(),
        cfg.targets.len(),
        cfg.n_list,
        cfg.reps,
        cfg.methods.len()
    );
    let report = run_grid(&spec, &cfg)?;

    create_out_dir(out)?;
    fs::write(out.join("simulation.json"), report.to_json()? + "\n")?;
    let mut w = create(&out.join("simulation.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out.join("simulation_curves.dat"))?;
    report.write_curves(&mut w)?;
    w.flush()?;

    println!("{} ({} reps, scale {:?})", report.dgp, report.reps, report.scale);
    for t in &report.truths {
        println!("truth {:<24} {:>12.6} (se {:.2e})", t.target.to_string(), t.value, t.se);
    }
    println!(
        "{:<24} {:>6} {:<22} {:>10} {:>10} {:>9} {:>9}",
        "target", "n", "method", "bias", "sd", "coverage", "failures"
    );
    for c in &report.cells {
        println!(
            "{:<24} {:>6} {:<22} {:>10.5} {:>10.5} {:>9.3} {:>9}",
            c.label, c.n, c.method, c.bias, c.sd, c.coverage, c.failures
        );
    }
    if !report.failures.is_empty() {
        eprintln!("{} replicate fits failed; see simulation.json", report.failures.len());
    }
    Ok(())
}

fn cmd_oracle_check(args: &OracleArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let oc: OracleConfig = file.oracle.clone().unwrap_or_default();
    let fixtures: Vec<PathBuf> = if args.fixtures.is_empty() {
        oc.fixtures.iter().flatten().map(|p| file.resolve(p)).collect()
    } else {
        args.fixtures.clone()
    };
    if fixtures.is_empty() {
        bail!("no fixtures: pass --fixture or set `oracle.fixtures` in the config");
    }
    let draws = args.mc_draws.or(oc.mc_draws).unwrap_or(1_000_000);
    let tol = args.tolerance.or(oc.tolerance).unwrap_or(1e-8);
    let z = args.z.or(oc.z).unwrap_or(4.0);

    let mut ok = true;
    for path in &fixtures {
        let dgp = DiscreteDgp::load(path).with_context(|| format!("invalid fixture {}", path.display()))?;
        let report = dgp.check(draws, seed)?;
        println!("{} (K = {})", path.display(), report.k);
        println!(
            "{:<18} {:>14} {:>12} {:>12} {:>9}",
            "estimand", "enumerated", "exact gap", "mc mean", "mc z"
        );
        for row in &report.rows {
            let (mc, zs) = match (row.mc, row.mc_z()) {
                (Some(m), Some(z)) => (format!("{:.8}", m.mean), format!("{z:.2}")),
                _ => ("-".into(), "-".into()),
            };
            println!(
                "{:<18} {:>14.10} {:>12.3e} {:>12} {:>9}",
                row.estimand.to_string(),
                row.enumerated,
                row.exact_gap(),
                mc,
                zs
            );
        }
        let pass = report.passes(tol, z);
        println!(
            "max |Δ| = {:.3e}, density ratio gap = {:.3e}, max z = {}: {}",
            report.max_exact_gap(),
            report.density_ratio_gap,
            report.max_mc_z().map_or("-".into(), |v| format!("{v:.2}")),
            if pass { "pass" } else { "FAIL" }
        );
        ok &= pass;
    }
    if ok {
        Ok(())
    } else {
        Err(CheckFailed.into())
    }
}
