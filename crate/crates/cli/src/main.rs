//! `netid`: command-line front end.
//!
//! Exit codes: 0 success, 1 estimation failures, 2 usage or input errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use netid_core::baselines::{run_variant, Variant};
use netid_core::harness::{
    fit_score, parse_experiment_config, pearson, run_experiment, simulate_replicate, write_outputs, ExperimentConfig,
};
use netid_core::mcem::{parse_estimator_config, EstimatorConfig};
use netid_core::network::{
    build_predictor_model, check_parallel_path_loop, condition_report, parse_network_spec, NetworkSpec, NodeId,
    NodeSet, ParallelPathReport,
};
use netid_core::presets;
use netid_core::regression::TargetParam;
use netid_core::simulate::{read_signals_csv, SignalBundle};

#[derive(Parser)]
#[command(name = "netid", version, about = "Target module identification with a missing node signal")]
struct Cli {
    /// Print failures as a JSON object on stderr.
    #[arg(long, global = true)]
    error_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Problem {
    /// Network TOML file (the bundled four-node network by default).
    #[arg(long)]
    network: Option<PathBuf>,
    /// Target module as `j,i`.
    #[arg(long, value_parser = parse_pair, default_value = "3,1")]
    target: (usize, usize),
    /// Measured nodes.
    #[arg(long, value_delimiter = ',', default_value = "1,3,4")]
    measured: Vec<usize>,
    /// Unmeasured predictor node.
    #[arg(long)]
    missing: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Report the structural conditions for a target and measured set.
    Check {
        #[command(flatten)]
        problem: Problem,
        /// Use measured descendants of the missing node as extra outputs.
        #[arg(long)]
        additional: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the network and write `signals.csv`.
    Simulate {
        #[arg(long)]
        network: Option<PathBuf>,
        /// Number of samples (overrides the config).
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run one estimator on a signal file and write `result.csv`.
    Identify {
        #[command(flatten)]
        problem: Problem,
        #[arg(long)]
        signals: PathBuf,
        #[arg(long, default_value = "MC-EBDMA")]
        variant: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run a Monte Carlo experiment.
    Experiment {
        /// Number of replicates (overrides the config).
        #[arg(long)]
        replicates: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected j,i")?;
    Ok((a.trim().parse().map_err(|_| "bad j")?, b.trim().parse().map_err(|_| "bad i")?))
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure { code: 2, kind: "input", message: e.to_string() }
    }

    fn estimation(e: impl std::fmt::Display) -> Self {
        Failure { code: 1, kind: "estimation", message: e.to_string() }
    }
}

type CliResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_network(path: Option<&Path>) -> Result<NetworkSpec, Failure> {
    match path {
        Some(p) => parse_network_spec(&read(p)?).map_err(Failure::input),
        None => Ok(presets::four_node_network()),
    }
}

fn out_dir(common: &Common) -> Result<PathBuf, Failure> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn set(ids: &[usize]) -> NodeSet {
    ids.iter().map(|&k| NodeId(k)).collect()
}

fn report_json(r: &ParallelPathReport) -> serde_json::Value {
    json!({
        "satisfied": r.satisfied,
        "witnesses": r.witnesses.iter().map(|w| ParallelPathReport::describe_witness(w)).collect::<Vec<_>>(),
    })
}

fn check(problem: &Problem, additional: bool, common: &Common) -> CliResult {
    let spec = load_network(problem.network.as_deref())?;
    let (j, i) = (NodeId(problem.target.0), NodeId(problem.target.1));
    let inputs: NodeSet = set(&problem.measured).into_iter().filter(|&k| k != j).collect();
    let c1 = check_parallel_path_loop(&spec, (j, i), &inputs).map_err(Failure::input)?;
    let mut report = json!({ "target": [j.0, i.0], "condition1": report_json(&c1) });
    println!("Condition 1 (direct method, inputs {:?}): {}", inputs.iter().map(|n| n.0).collect::<Vec<_>>(), verdict(&c1));
    if let Some(m) = problem.missing {
        let model = build_predictor_model(&spec, (j, i), &set(&problem.measured), Some(NodeId(m)), additional)
            .map_err(Failure::input)?;
        let r = condition_report(&spec, &model).map_err(Failure::input)?;
        println!("Condition 2 (confounders): {}", if r.confounders.is_empty() { "satisfied".into() } else { format!("violated by {:?}", r.confounders.iter().map(|n| n.0).collect::<Vec<_>>()) });
        println!("Condition 3 (outputs): {}", if r.unblocked_outputs.is_empty() { "satisfied".into() } else { format!("violated by {:?}", r.unblocked_outputs.iter().map(|n| n.0).collect::<Vec<_>>()) });
        println!("Condition 4 (with missing node {m}): {}", verdict(&r.condition4));
        println!("Outputs: {:?}", model.outputs.iter().map(|n| n.0).collect::<Vec<_>>());
        report["missing"] = json!(m);
        report["condition2"] = json!(r.confounders.iter().map(|n| n.0).collect::<Vec<_>>());
        report["condition3"] = json!(r.unblocked_outputs.iter().map(|n| n.0).collect::<Vec<_>>());
        report["condition4"] = report_json(&r.condition4);
        report["outputs"] = json!(model.outputs.iter().map(|n| n.0).collect::<Vec<_>>());
    }
    if common.out.is_some() {
        let dir = out_dir(common)?;
        let text = serde_json::to_string_pretty(&report).map_err(Failure::input)?;
        fs::write(dir.join("report.json"), text + "\n").map_err(Failure::input)?;
    }
    Ok(())
}

fn verdict(r: &ParallelPathReport) -> String {
    if r.satisfied {
        "satisfied".into()
    } else {
        let w: Vec<String> = r.witnesses.iter().map(|w| ParallelPathReport::describe_witness(w)).collect();
        format!("violated, witness {}", w.join(", "))
    }
}

fn experiment_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => parse_experiment_config(&read(p)?).map_err(Failure::input)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn network_of(cfg: &ExperimentConfig, cli: Option<&Path>, config_path: Option<&Path>) -> Result<NetworkSpec, Failure> {
    let path = cli.map(Path::to_path_buf).or_else(|| {
        cfg.network.as_ref().map(|p| config_path.and_then(Path::parent).unwrap_or(Path::new(".")).join(p))
    });
    let spec = load_network(path.as_deref())?;
    match &cfg.noise_variances {
        Some(v) => spec.with_noise_variances(v).map_err(Failure::input),
        None => Ok(spec),
    }
}

fn simulate(network: Option<&Path>, n: Option<usize>, common: &Common) -> CliResult {
    let mut cfg = experiment_config(common)?;
    if let Some(n) = n {
        cfg.n = n;
    }
    let spec = network_of(&cfg, network, common.config.as_deref())?;
    let signals = simulate_replicate(&spec, cfg.n, cfg.seed).map_err(Failure::input)?;
    let dir = out_dir(common)?;
    let file = fs::File::create(dir.join("signals.csv")).map_err(Failure::input)?;
    signals.write_csv(file).map_err(Failure::input)
}

fn identify(problem: &Problem, signals_path: &Path, variant: &str, common: &Common) -> CliResult {
    let variant: Variant = variant.parse().map_err(Failure::input)?;
    let spec = load_network(problem.network.as_deref())?;
    let mut cfg = match &common.config {
        Some(p) => parse_estimator_config(&read(p)?).map_err(Failure::input)?,
        None => EstimatorConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let table = read_signals_csv(read(signals_path)?.as_bytes()).map_err(Failure::input)?;
    let signals = SignalBundle::from_measurements(&spec, table.w, table.r).map_err(Failure::input)?;
    let missing = problem.missing.map(NodeId).ok_or_else(|| Failure::input("--missing is required"))?;
    let p = netid_core::baselines::Problem {
        target: (NodeId(problem.target.0), NodeId(problem.target.1)),
        measured: set(&problem.measured),
        missing,
    };
    let out = run_variant(variant, &spec, &p, &signals, &cfg).map_err(Failure::estimation)?;
    let tf0 = spec.module(p.target.0, p.target.1).ok_or_else(|| Failure::input("target module not in network"))?;
    let g0 = tf0.impulse_response(signals.len()).map_err(Failure::input)?;
    let theta0 = match cfg.target {
        TargetParam::Rational { .. } => cfg.target.theta_of(tf0),
        TargetParam::Fir { len } => tf0.impulse_response(len).ok(),
    };
    let fit_imp = fit_score(&g0, &out.g_hat).ok();
    let fit_theta = theta0.and_then(|t| fit_score(&t, &out.theta).ok());
    let corr = out.w_m_hat.as_ref().map(|w| pearson(w, signals.w(missing)));

    let dir = out_dir(common)?;
    let mut wtr = csv::Writer::from_path(dir.join("result.csv")).map_err(Failure::input)?;
    let mut header = vec!["variant", "converged", "iterations", "fit_imp", "fit_theta", "w_m_corr"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend((1..=out.theta.len()).map(|k| format!("theta_{k}")));
    let num = |x: Option<f64>| x.map_or("NaN".to_string(), |v| v.to_string());
    let mut row = vec![
        variant.to_string(),
        out.converged.to_string(),
        out.iterations.to_string(),
        num(fit_imp),
        num(fit_theta),
        num(corr),
    ];
    row.extend(out.theta.iter().map(|v| v.to_string()));
    wtr.write_record(&header).map_err(Failure::input)?;
    wtr.write_record(&row).map_err(Failure::input)?;
    wtr.flush().map_err(Failure::input)?;
    if let Some(w) = &out.w_m_hat {
        let mut wtr = csv::Writer::from_path(dir.join("reconstruction.csv")).map_err(Failure::input)?;
        wtr.write_record(["t", "w_m_hat"]).map_err(Failure::input)?;
        for (t, v) in w.iter().enumerate() {
            wtr.write_record([(t + 1).to_string(), v.to_string()]).map_err(Failure::input)?;
        }
        wtr.flush().map_err(Failure::input)?;
    }
    println!("{variant}: theta = {:?}, Fit_imp = {}, Fit_theta = {}", out.theta, num(fit_imp), num(fit_theta));
    Ok(())
}

fn experiment(replicates: Option<usize>, common: &Common) -> CliResult {
    let mut cfg = experiment_config(common)?;
    if let Some(r) = replicates {
        cfg.replicates = r;
        cfg.designated_replicate = cfg.designated_replicate.min(r.saturating_sub(1));
    }
    cfg.check().map_err(Failure::input)?;
    let spec = network_of(&ExperimentConfig { noise_variances: None, ..cfg.clone() }, None, common.config.as_deref())?;
    let out = run_experiment(&spec, &cfg).map_err(Failure::estimation)?;
    let dir = out_dir(common)?;
    write_outputs(&out, cfg.designated_replicate, &dir).map_err(Failure::input)?;
    for s in out.summary.iter().filter(|s| s.metric == "fit_imp") {
        println!("{:<9} median Fit_imp {:.4} (IQR {:.4}, n = {})", s.variant.name(), s.median, s.iqr(), s.count);
    }
    let failed = out.records.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        return Err(Failure::estimation(format!("{failed} estimator runs failed; see fits.csv")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Check { problem, additional, common } => check(problem, *additional, common),
        Command::Simulate { network, n, common } => simulate(network.as_deref(), *n, common),
        Command::Identify { problem, signals, variant, common } => identify(problem, signals, variant, common),
        Command::Experiment { replicates, common } => experiment(*replicates, common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if cli.error_json {
                eprintln!("{}", json!({ "error": f.kind, "message": f.message, "exit_code": f.code }));
            } else {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
