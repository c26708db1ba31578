use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ddprior::correlation::{rho, CorrelationMode};
use ddprior::error::{Error, ErrorKind, Result};
use ddprior::estimator::{estimate_node, EstimateTable, NodePrior};
use ddprior::io::{
    parse_network, read_dataset, weight_records, write_estimates, PiSpec, PriorConfig, RunReport,
};
use ddprior::model::{count_tuples, BeliefNet, CountTable};
use ddprior::prior::{mdd_to_dd, PiVector, PriorSampler, RNG_ALGORITHM};
use ddprior::reproduce::{self, Check, Target};
use ddprior::selection::{fit_pi, mse_ratio_grid, pool_flat, Scenario};

const EXIT_PARSE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_TOLERANCE: u8 = 5;

/// Optimal linear estimation of belief-net CP-tables under dependent
/// Dirichlet priors.
#[derive(Parser)]
#[command(name = "ddprior", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate every CP-table of a network from complete data.
    Estimate(EstimateArgs),
    /// Fit pi by regression on pooled pairwise correlation estimates.
    FitPi(FitPiArgs),
    /// MSE-ratio of a selected pi over the simplex of true pi.
    MseRatio(MseRatioArgs),
    /// Draw CP-tables from a node's prior.
    SamplePrior(SamplePriorArgs),
    /// Tabulate rho(alpha, gamma).
    Correlations(CorrelationsArgs),
    /// Recompute published values and compare.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct EstimateFlags {
    /// Prior file; defaults to flat priors with pi = <0.25, 0.5, 0.25>.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Correlation mode, overriding the prior file.
    #[arg(long)]
    mode: Option<CorrelationMode>,
    /// Seed for Monte Carlo covariances of general DD priors.
    #[arg(long)]
    seed: Option<u64>,
    /// Clamp estimates into [0, 1].
    #[arg(long, overrides_with = "no_adjust")]
    adjust: bool,
    #[arg(long)]
    no_adjust: bool,
    /// Rescale clamped rows to sum to one.
    #[arg(long)]
    renormalize: bool,
    /// Write per-row weights and B matrices as JSON.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Write a JSON run report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    flags: EstimateFlags,
    #[arg(short, long, default_value = "-")]
    output: String,
}

#[derive(Args)]
struct FitPiArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Estimate with the fitted pi and write the CSV here.
    #[arg(long, value_name = "PATH")]
    then_estimate: Option<String>,
    #[command(flatten)]
    flags: EstimateFlags,
    #[arg(short, long, default_value = "-")]
    output: String,
}

#[derive(Args)]
struct MseRatioArgs {
    /// The three selections and scenario of the published sensitivity plot.
    #[arg(long)]
    figure1: bool,
    /// Selected pi as `pi0,pi1,pi2`; repeatable.
    #[arg(long, value_parser = parse_pi)]
    select: Vec<PiVector>,
    /// Parent domain sizes, comma separated.
    #[arg(long, default_value = "2,2,2,2", value_delimiter = ',')]
    radices: Vec<usize>,
    /// Cases per row.
    #[arg(long, default_value_t = 3)]
    count: u64,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Prior means, comma separated; default uniform binary.
    #[arg(long, value_delimiter = ',')]
    mu: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long, default_value_t = CorrelationMode::default())]
    mode: CorrelationMode,
    #[arg(short, long, default_value = "-")]
    output: String,
}

#[derive(Args)]
struct SamplePriorArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    node: String,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(short, long, default_value = "-")]
    output: String,
}

#[derive(Args)]
struct CorrelationsArgs {
    #[arg(long, default_value = "2,3,4,5,10,20", value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long, default_value_t = CorrelationMode::default())]
    mode: CorrelationMode,
    #[arg(short, long, default_value = "-")]
    output: String,
}

#[derive(Args)]
struct ReproduceArgs {
    /// table1, table2, table3, example4, figure1 or all.
    #[arg(default_value = "all")]
    target: String,
    /// Mode whose results decide the exit status.
    #[arg(long, default_value_t = CorrelationMode::default())]
    mode: CorrelationMode,
    /// Mode reported for information only.
    #[arg(long, default_value_t = CorrelationMode::Exact)]
    secondary: CorrelationMode,
    #[arg(long)]
    no_secondary: bool,
    #[arg(short, long, default_value = "-")]
    output: String,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

fn parse_pi(s: &str) -> std::result::Result<PiVector, String> {
    let v: Vec<f64> = parse_list(s)?;
    match v[..] {
        [a, b, c] => PiVector::new(a, b, c).map_err(|e| e.to_string()),
        _ => Err("expected pi0,pi1,pi2".into()),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::parse(path.display().to_string(), e))
}

fn open_output(target: &str) -> Result<Box<dyn Write>> {
    Ok(if target == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        Box::new(BufWriter::new(fs::File::create(target)?))
    })
}

fn warn(message: impl AsRef<str>) {
    eprintln!("{}", json!({"level": "warning", "message": message.as_ref()}));
}

struct Loaded {
    net: BeliefNet,
    counts: Vec<CountTable>,
    config: PriorConfig,
    report: RunReport,
}

fn load(inputs: &Inputs, flags: &EstimateFlags, command: &str) -> Result<Loaded> {
    let mut report = RunReport::new(command);
    let net_text = read_text(&inputs.network)?;
    report.add_input("network", &inputs.network.display().to_string(), net_text.as_bytes());
    let net = parse_network(&net_text)?;
    let data_bytes = fs::read(&inputs.data)
        .map_err(|e| Error::parse(inputs.data.display().to_string(), e))?;
    report.add_input("data", &inputs.data.display().to_string(), &data_bytes);
    let data = read_dataset(data_bytes.as_slice(), &net)?;
    if data.is_empty() {
        warn("data file has no records; estimates equal the prior means");
    }
    let counts = count_tuples(&net, &data)?;
    let mut config = match &flags.prior {
        Some(path) => {
            let text = read_text(path)?;
            report.add_input("prior", &path.display().to_string(), text.as_bytes());
            PriorConfig::parse(&text)?
        }
        None => PriorConfig::default(),
    };
    config.check_nodes(&net)?;
    for block in std::iter::once(&mut config.default).chain(config.nodes.values_mut()) {
        if let Some(mode) = flags.mode {
            block.correlation_mode = Some(mode);
        }
        if let Some(seed) = flags.seed {
            block.seed = Some(seed);
        }
        if flags.adjust {
            block.adjust = Some(true);
        }
        if flags.no_adjust {
            block.adjust = Some(false);
        }
        if flags.renormalize {
            block.renormalize = Some(true);
        }
    }
    report.seed = config.default.seed;
    Ok(Loaded {
        net,
        counts,
        config,
        report,
    })
}

fn run_estimates(loaded: &mut Loaded, flags: &EstimateFlags, output: &str) -> Result<()> {
    let mut estimates: Vec<EstimateTable> = Vec::new();
    for counts in &loaded.counts {
        let resolved = loaded.config.resolve(&loaded.net, &counts.node)?;
        if let NodePrior::Dd(_) = resolved.prior {
            loaded.report.seed = Some(resolved.options.mc_seed);
        }
        let est = estimate_node(counts, &resolved.prior, &resolved.options)?;
        loaded.report.add_node(counts, &est, &resolved);
        estimates.push(est);
    }
    for d in &loaded.report.nodes {
        if d.clamped_cells > 0 {
            let msg = format!("{}: {} estimate(s) clamped into [0, 1]", d.node, d.clamped_cells);
            warn(&msg);
            loaded.report.warnings.push(msg);
        }
        if d.non_unique_rows > 0 {
            let msg = format!(
                "{}: {} row(s) with singular B; minimum-norm weights used",
                d.node, d.non_unique_rows
            );
            warn(&msg);
            loaded.report.warnings.push(msg);
        }
    }
    let pairs: Vec<_> = loaded.counts.iter().zip(&estimates).collect();
    let mut out = open_output(output)?;
    write_estimates(&mut out, &pairs)?;
    out.flush()?;
    if let Some(path) = &flags.weights {
        let records: Vec<_> = estimates.iter().flat_map(weight_records).collect();
        fs::write(path, serde_json::to_string_pretty(&records).expect("serializable"))?;
    }
    if let Some(path) = &flags.report {
        fs::write(path, serde_json::to_string_pretty(&loaded.report).expect("serializable"))?;
    }
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<u8> {
    let mut loaded = load(&args.inputs, &args.flags, "estimate")?;
    run_estimates(&mut loaded, &args.flags, &args.output)?;
    Ok(0)
}

fn cmd_fit_pi(args: FitPiArgs) -> Result<u8> {
    let mut loaded = load(&args.inputs, &args.flags, "fit-pi")?;
    let samples = pool_flat(&loaded.counts)?;
    let fit = fit_pi(&samples)?;
    if fit.degenerate {
        warn("all pairs share one agreement level; the parent weight is not identified");
    }
    let record = json!({
        "pi": fit.pi,
        "path": fit.path.as_str(),
        "rss": fit.rss,
        "samples": fit.samples,
        "degenerate": fit.degenerate,
        "rho_hat": "averaged over all values of each node",
    });
    let mut out = open_output(&args.output)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&record).expect("serializable"))?;
    out.flush()?;
    if let Some(path) = args.then_estimate {
        let pi = PiSpec::Symmetric {
            pi0: fit.pi.pi0,
            pi1: fit.pi.pi1,
            pi2: fit.pi.pi2,
        };
        for block in std::iter::once(&mut loaded.config.default).chain(loaded.config.nodes.values_mut()) {
            if block.dd.is_none() {
                block.pi = Some(pi.clone());
            }
        }
        run_estimates(&mut loaded, &args.flags, &path)?;
    }
    Ok(0)
}

fn cmd_mse_ratio(args: MseRatioArgs) -> Result<u8> {
    let (scenario, selections) = if args.figure1 {
        (Scenario::figure1(), reproduce::figure1_selections().to_vec())
    } else {
        let rows: usize = args.radices.iter().product();
        let mu = args.mu.unwrap_or_else(|| vec![0.5, 0.5]);
        let scenario = Scenario::new(&args.radices, vec![args.count; rows], args.alpha, mu)?;
        if args.select.is_empty() {
            return Err(Error::Precondition("give --select or --figure1".into()));
        }
        (scenario, args.select)
    };
    let mut w = csv::Writer::from_writer(open_output(&args.output)?);
    let head = ["pi0_select", "pi1_select", "pi2_select", "pi0_true", "pi1_true", "pi2_true", "ratio"];
    w.write_record(head).map_err(|e| Error::Numeric(e.to_string()))?;
    for select in selections {
        for p in mse_ratio_grid(select, &scenario, args.step, args.mode)? {
            let cells = [
                p.select.pi0,
                p.select.pi1,
                p.select.pi2,
                p.truth.pi0,
                p.truth.pi1,
                p.truth.pi2,
                p.ratio,
            ];
            w.write_record(cells.map(|v| v.to_string()))
                .map_err(|e| Error::Numeric(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(0)
}

fn cmd_sample_prior(args: SamplePriorArgs) -> Result<u8> {
    let net = parse_network(&read_text(&args.network)?)?;
    let config = match &args.prior {
        Some(p) => PriorConfig::parse(&read_text(p)?)?,
        None => PriorConfig::default(),
    };
    config.check_nodes(&net)?;
    let resolved = config.resolve(&net, &args.node)?;
    let layout = net.layout(&args.node)?;
    let spec = match resolved.prior {
        NodePrior::Mdd(p) => mdd_to_dd(&p, &layout)?,
        NodePrior::Dd(p) => p,
    };
    if args.count == 0 {
        return Err(Error::Precondition("--count must be at least 1".into()));
    }
    let values = &net.node(&args.node)?.domain;
    let mut sampler = PriorSampler::new(&spec, args.seed)?;
    let mut theta = vec![0.0; sampler.table_len()];
    let mut w = csv::Writer::from_writer(open_output(&args.output)?);
    w.write_record(["sample", "row", "x", "theta"])
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let labels: Vec<String> = (0..layout.n_rows()).map(|f| layout.row_label(f)).collect();
    for s in 0..args.count {
        sampler.draw_into(&mut theta);
        for (f, row) in labels.iter().enumerate() {
            for (x, value) in values.iter().enumerate() {
                w.write_record([
                    s.to_string().as_str(),
                    row,
                    value,
                    &theta[f * values.len() + x].to_string(),
                ])
                .map_err(|e| Error::Numeric(e.to_string()))?;
            }
        }
    }
    w.flush()?;
    eprintln!(
        "{}",
        json!({"level": "info", "seed": args.seed, "rng": RNG_ALGORITHM, "samples": args.count})
    );
    Ok(0)
}

fn cmd_correlations(args: CorrelationsArgs) -> Result<u8> {
    let grid = (1.0 / args.step).round();
    if !(args.step > 0.0 && args.step <= 1.0) || (grid * args.step - 1.0).abs() > 1e-9 {
        return Err(Error::Hyperparameter {
            name: "step".into(),
            value: args.step.to_string(),
            constraint: "must divide 1".into(),
        });
    }
    let grid = grid as usize;
    let mut w = csv::Writer::from_writer(open_output(&args.output)?);
    w.write_record(["alpha", "gamma", "rho"])
        .map_err(|e| Error::Numeric(e.to_string()))?;
    for &alpha in &args.alpha {
        for i in 0..=grid {
            let gamma = i as f64 / grid as f64;
            let r = rho(alpha, gamma, args.mode)?;
            w.write_record([alpha, gamma, r].map(|v| v.to_string()))
                .map_err(|e| Error::Numeric(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(0)
}

fn cmd_reproduce(args: ReproduceArgs) -> Result<u8> {
    let targets = if args.target == "all" {
        Target::ALL.to_vec()
    } else {
        vec![Target::parse(&args.target).ok_or_else(|| Error::Hyperparameter {
            name: "target".into(),
            value: args.target.clone(),
            constraint: "must be table1, table2, table3, example4, figure1 or all".into(),
        })?]
    };
    let mut modes = vec![(args.mode, true)];
    if !args.no_secondary && args.secondary != args.mode {
        modes.push((args.secondary, false));
    }
    let mut w = csv::Writer::from_writer(open_output(&args.output)?);
    w.write_record([
        "target", "mode", "role", "label", "computed", "expected", "deviation", "check", "pass",
    ])
    .map_err(|e| Error::Numeric(e.to_string()))?;
    let mut breach = false;
    for &(mode, primary) in &modes {
        for &target in &targets {
            let report = reproduce::run(target, mode)?;
            for c in &report.comparisons {
                let check = match c.check {
                    Check::Within(tol) => format!("within {tol}"),
                    Check::AtMost => "at most".to_string(),
                    Check::AtLeast => "at least".to_string(),
                };
                w.write_record([
                    target.as_str(),
                    mode.as_str(),
                    if primary { "primary" } else { "secondary" },
                    &c.label,
                    &c.computed.to_string(),
                    &c.expected.to_string(),
                    &c.deviation().to_string(),
                    &check,
                    if c.passed() { "true" } else { "false" },
                ])
                .map_err(|e| Error::Numeric(e.to_string()))?;
            }
            if primary && !report.passed() {
                breach = true;
                warn(format!("{} deviates beyond tolerance in {} mode", target.as_str(), mode));
            }
        }
    }
    w.flush()?;
    Ok(if breach { EXIT_TOLERANCE } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::FitPi(a) => cmd_fit_pi(a),
        Command::MseRatio(a) => cmd_mse_ratio(a),
        Command::SamplePrior(a) => cmd_sample_prior(a),
        Command::Correlations(a) => cmd_correlations(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Parse => ("parse", EXIT_PARSE),
                ErrorKind::Validation => ("validation", EXIT_VALIDATION),
                ErrorKind::Numeric => ("numeric", EXIT_NUMERIC),
            };
            eprintln!("{}", json!({"level": "error", "kind": kind, "message": e.to_string()}));
            ExitCode::from(code)
        }
    }
}
