use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use qdisc::channel_div::{
    dmax_channel_divergence_choi, exact_classical_channel_divergence, regularized_estimate, stabilized_divergence,
    OptimizerConfig, DEFAULT_DIM_CAP,
};
use qdisc::channels::{ChannelJson, KrausChannel};
use qdisc::divergences::{hypothesis_testing, smoothed_max_bracket, DivergenceKind, DivergenceResult, Method};
use qdisc::operator::{random_density, DensityMatrix, MatrixJson};
use qdisc::strategies::{greedy_strategy, stein_sweep, verify_oneshot, AdaptiveStrategy, StrategyJson};
use qdisc::suite::{self, Format};
use qdisc::tails::{default_grid, finiteness_diagnostic_with, GrowthThresholds, TailPair};
use qdisc::util::fmt_real;
use qdisc::{Error, Result};

#[derive(Parser)]
#[command(name = "qdisc", version, about = "Quantum divergences, smoothing bounds and channel discrimination")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Global {
    /// Master seed for random constructors, optimizer restarts and suites.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output format: json or csv.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Tolerance override for the subcommand's acceptance test.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Register dimension cap.
    #[arg(long, global = true)]
    cap: Option<usize>,
    /// Plain-text `key = value` defaults (seed, out, tol, cap, restarts, max_iterations, size).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Divergence between two states.
    Divergence(DivergenceArgs),
    /// Stabilized or regularized channel divergence.
    ChannelDiv(ChannelDivArgs),
    /// Parallel exponent sweep over (eps, n).
    Stein(SteinArgs),
    /// Adaptive-to-parallel conversion check for a strategy.
    Oneshot(OneshotArgs),
    /// Finiteness diagnostics for the truncated example sequences.
    Tails(TailsArgs),
    /// Randomized property suites.
    Suite(SuiteArgs),
}

#[derive(Args)]
struct DivergenceArgs {
    /// umegaki, petz, geometric, dmax, hypothesis, smoothed_max
    #[arg(long)]
    kind: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// JSON file or constructor (diag:p1,p2,.. | mixed:d | random:d[:rank])
    #[arg(long)]
    rho: String,
    #[arg(long)]
    sigma: String,
}

#[derive(Args)]
struct ChannelDivArgs {
    #[arg(long)]
    kind: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// JSON file or constructor (identity:d | replacer:<state> | depolarizing:<lambda>:<state> |
    /// random:din:dout:env | classical:row;row)
    #[arg(long)]
    e: String,
    #[arg(long)]
    f: String,
    /// Copies: `k` or a range `1..k` for the regularized sequence.
    #[arg(long, default_value = "1")]
    n: String,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args)]
struct SteinArgs {
    #[arg(long, default_value = "replacer:diag:0.5,0.5")]
    e: String,
    #[arg(long, default_value = "replacer:diag:0.25,0.75")]
    f: String,
    #[arg(long, default_value = "0.05", value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long, default_value = "1,2,3,4,5,6,7,8,9,10", value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args)]
struct OneshotArgs {
    #[arg(long, default_value = "replacer:diag:0.5,0.5")]
    e: String,
    #[arg(long, default_value = "replacer:diag:0.25,0.75")]
    f: String,
    /// product, greedy, or a strategy JSON file.
    #[arg(long, default_value = "product")]
    strategy: String,
    /// Rounds for the built-in strategies.
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha_a: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha_p: f64,
    #[arg(long, default_value_t = 0.01)]
    mu: f64,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args)]
struct TailsArgs {
    #[arg(long, default_value = "pq")]
    pair: String,
    #[arg(long, default_value = "dmax")]
    kind: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Evaluate the generalized depolarizing channel pair instead of the states.
    #[arg(long)]
    channel: bool,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Normalize the sequences before building the states.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct SuiteArgs {
    /// Suite name (see --list).
    name: Option<String>,
    #[arg(long)]
    all: bool,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    list: bool,
}

/// Settings after merging the config file under the command-line flags.
struct Settings {
    seed: u64,
    format: Format,
    output: Option<PathBuf>,
    tol: Option<f64>,
    cap: usize,
    restarts: Option<usize>,
    max_iterations: Option<usize>,
    size: Option<usize>,
}

fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("config line {}: expected key = value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidInput(format!("cannot parse {key} = '{v}'")))
}

fn settings(g: &Global, default_format: Format) -> Result<Settings> {
    let cfg = match &g.config {
        Some(p) => read_config(p)?,
        None => BTreeMap::new(),
    };
    for k in cfg.keys() {
        if !["seed", "out", "tol", "cap", "restarts", "max_iterations", "size"].contains(&k.as_str()) {
            return Err(Error::InvalidInput(format!("unknown config key '{k}'")));
        }
    }
    let get = |k: &str| cfg.get(k).map(String::as_str);
    let opt_num = |k: &str| -> Result<Option<usize>> { get(k).map(|v| parse_num(k, v)).transpose() };
    let format = match g.out.as_deref().or(get("out")) {
        Some(f) => Format::parse(f)?,
        None => default_format,
    };
    Ok(Settings {
        seed: match g.seed {
            Some(s) => s,
            None => get("seed").map(|v| parse_num("seed", v)).transpose()?.unwrap_or(0),
        },
        format,
        output: g.output.clone(),
        tol: match g.tol {
            Some(t) => Some(t),
            None => get("tol").map(|v| parse_num("tol", v)).transpose()?,
        },
        cap: g.cap.or(opt_num("cap")?).unwrap_or(DEFAULT_DIM_CAP),
        restarts: opt_num("restarts")?,
        max_iterations: opt_num("max_iterations")?,
        size: opt_num("size")?,
    })
}

fn optimizer(s: &Settings, restarts: Option<usize>) -> OptimizerConfig {
    let mut cfg = OptimizerConfig {
        seed: s.seed,
        ..Default::default()
    };
    if let Some(r) = restarts.or(s.restarts) {
        cfg.restarts = r;
    }
    if let Some(m) = s.max_iterations {
        cfg.max_iterations = m;
    }
    if let Some(t) = s.tol {
        cfg.tol = t;
    }
    cfg
}

fn write_output(s: &Settings, text: &str) -> Result<()> {
    match &s.output {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn parse_list(v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse_num("entry", x.trim())).collect()
}

fn load_state(spec: &str, seed: u64) -> Result<DensityMatrix> {
    let parts: Vec<&str> = spec.splitn(2, ':').collect();
    match parts.as_slice() {
        ["diag", rest] => DensityMatrix::from_diag(&parse_list(rest)?),
        ["mixed", d] => Ok(DensityMatrix::maximally_mixed(parse_num("dimension", d)?)),
        ["random", rest] => {
            let nums: Vec<usize> = rest
                .split(':')
                .map(|x| parse_num("dimension", x))
                .collect::<Result<_>>()?;
            let d = nums[0];
            random_density(d, nums.get(1).copied().unwrap_or(d), seed)
        }
        _ => {
            let text = std::fs::read_to_string(spec)?;
            DensityMatrix::from_json(&serde_json::from_str::<MatrixJson>(&text)?)
        }
    }
}

fn load_channel(spec: &str, seed: u64) -> Result<KrausChannel> {
    let (head, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match head {
        "identity" => Ok(KrausChannel::identity(parse_num("dimension", rest)?)),
        "replacer" => {
            let s = load_state(rest, seed)?;
            let d = s.dim();
            Ok(KrausChannel::replacer(&s, d))
        }
        "depolarizing" => {
            let (lambda, state) = rest
                .split_once(':')
                .ok_or_else(|| Error::InvalidInput("depolarizing:<lambda>:<state>".into()))?;
            KrausChannel::generalized_depolarizing(&load_state(state, seed)?, parse_num("lambda", lambda)?)
        }
        "random" => {
            let nums: Vec<usize> = rest
                .split(':')
                .map(|x| parse_num("dimension", x))
                .collect::<Result<_>>()?;
            if nums.len() != 3 {
                return Err(Error::InvalidInput("random:din:dout:env".into()));
            }
            KrausChannel::random_channel(nums[0], nums[1], nums[2], seed)
        }
        "classical" => {
            let rows = rest.split(';').map(parse_list).collect::<Result<Vec<_>>>()?;
            KrausChannel::classical_channel_embed(&rows)
        }
        _ => {
            let text = std::fs::read_to_string(spec)?;
            KrausChannel::from_json(&serde_json::from_str::<ChannelJson>(&text)?)
        }
    }
}

fn load_pair(e: &str, f: &str, seed: u64) -> Result<(KrausChannel, KrausChannel)> {
    // distinct seeds so `random:` constructors give different channels
    Ok((load_channel(e, seed)?, load_channel(f, seed.wrapping_add(1))?))
}

fn result_csv(rows: &[(String, &DivergenceResult)]) -> String {
    let mut out = String::from("kind,value,lower,upper,method\n");
    let method = |m: Method| serde_json::to_value(m).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    for (k, r) in rows {
        out.push_str(&format!(
            "{k},{},{},{},{}\n",
            fmt_real(r.value),
            r.lower.map(fmt_real).unwrap_or_default(),
            r.upper.map(fmt_real).unwrap_or_default(),
            method(r.method)
        ));
    }
    out
}

fn cmd_divergence(a: &DivergenceArgs, s: &Settings) -> Result<bool> {
    let rho = load_state(&a.rho, s.seed)?;
    let sigma = load_state(&a.sigma, s.seed.wrapping_add(1))?;
    let (result, extra) = match a.kind.as_str() {
        "smoothed_max" | "smoothed_dmax" => {
            let eps = a.eps.ok_or_else(|| Error::InvalidInput("smoothed_max needs --eps".into()))?;
            let sm = smoothed_max_bracket(eps, &rho, &sigma)?;
            let extra = json!({ "lambda": sm.lambda });
            (sm.result, Some(extra))
        }
        name => match DivergenceKind::parse(name, a.alpha, a.eps)? {
            DivergenceKind::Hypothesis(eps) => {
                let h = hypothesis_testing(eps, &rho, &sigma)?;
                if let Some(t) = s.tol {
                    if h.gap > t {
                        return Err(Error::NumericalGap { gap: h.gap });
                    }
                }
                let extra = json!({
                    "threshold": h.threshold,
                    "beta_primal": h.beta_primal,
                    "beta_dual": h.beta_dual,
                    "gap": h.gap,
                });
                (h.result, Some(extra))
            }
            kind => (DivergenceResult::exact(kind.evaluate(&rho, &sigma)?), None),
        },
    };
    let text = match s.format {
        Format::Json => {
            let mut v = serde_json::to_value(&result)?;
            if let (Some(obj), Some(serde_json::Value::Object(extra))) = (v.as_object_mut(), extra) {
                obj.extend(extra);
            }
            to_json(&v)?
        }
        Format::Csv => result_csv(&[(a.kind.clone(), &result)]),
    };
    write_output(s, &text)?;
    Ok(true)
}

fn parse_copies(n: &str) -> Result<usize> {
    match n.split_once("..") {
        Some((lo, hi)) => {
            let lo: usize = parse_num("n", lo.trim())?;
            if lo != 1 {
                return Err(Error::InvalidInput("copy ranges start at 1".into()));
            }
            parse_num("n", hi.trim().trim_start_matches('='))
        }
        None => parse_num("n", n.trim()),
    }
}

fn cmd_channel_div(a: &ChannelDivArgs, s: &Settings) -> Result<bool> {
    let kind = DivergenceKind::parse(&a.kind, a.alpha, a.eps)?;
    let (e, f) = load_pair(&a.e, &a.f, s.seed)?;
    let cfg = optimizer(s, a.restarts);
    let n_max = parse_copies(&a.n)?;
    if n_max == 0 {
        return Err(Error::InvalidInput("need at least one copy".into()));
    }
    let mut report = serde_json::Map::new();
    report.insert("kind".into(), json!(kind.name()));
    if n_max == 1 {
        let d = e.dim_in();
        if d * d.max(e.dim_out()) > s.cap {
            return Err(Error::CapExceeded { dim: d * d.max(e.dim_out()), cap: s.cap });
        }
        let est = stabilized_divergence(kind, &e, &f, &cfg)?;
        report.insert("optimizer".into(), serde_json::to_value(&est)?);
    } else {
        let seq = regularized_estimate(kind, &e, &f, n_max, &cfg, s.cap)?;
        let rows: Vec<_> = seq.iter().map(|(n, v)| json!({ "n": n, "per_copy": fmt_real(*v) })).collect();
        report.insert("regularized".into(), json!(rows));
    }
    if e.is_classical() && f.is_classical() {
        report.insert("exact_classical".into(), serde_json::to_value(exact_classical_channel_divergence(kind, &e, &f)?)?);
    }
    if matches!(kind, DivergenceKind::Dmax) {
        report.insert("choi_dmax".into(), serde_json::to_value(dmax_channel_divergence_choi(&e, &f)?)?);
    }
    let text = match s.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut out = String::from("quantity,value\n");
            for (k, v) in &report {
                if let Some(x) = v.get("value") {
                    out.push_str(&format!("{k},{}\n", x.as_str().map(String::from).unwrap_or_else(|| x.to_string())));
                }
            }
            if let Some(serde_json::Value::Array(rows)) = report.get("regularized") {
                for r in rows {
                    out.push_str(&format!("per_copy_n{},{}\n", r["n"], r["per_copy"].as_str().unwrap_or("")));
                }
            }
            out
        }
    };
    write_output(s, &text)?;
    Ok(true)
}

fn cmd_stein(a: &SteinArgs, s: &Settings) -> Result<bool> {
    let (e, f) = load_pair(&a.e, &a.f, s.seed)?;
    let cfg = optimizer(s, a.restarts);
    let rows = stein_sweep(&e, &f, &a.eps, &a.n, &cfg, s.cap)?;
    let text = match s.format {
        Format::Json => to_json(&rows)?,
        Format::Csv => suite::stein_csv(&rows)?,
    };
    write_output(s, &text)?;
    Ok(true)
}

fn cmd_oneshot(a: &OneshotArgs, s: &Settings) -> Result<bool> {
    let (e, f) = load_pair(&a.e, &a.f, s.seed)?;
    let d = e.dim_in();
    let strategy = match a.strategy.as_str() {
        "product" => {
            let psi = qdisc::channel_div::maximally_entangled(d);
            AdaptiveStrategy::product(&DensityMatrix::from_pure(&psi, &[d, d])?, e.dim_out(), a.n)?
        }
        "greedy" => greedy_strategy(&e, &f, a.n, s.cap)?,
        path => {
            let text = std::fs::read_to_string(path)?;
            AdaptiveStrategy::from_json(&serde_json::from_str::<StrategyJson>(&text)?)?
        }
    };
    let cfg = optimizer(s, a.restarts);
    let r = verify_oneshot(&strategy, &e, &f, a.m, a.alpha_a, a.alpha_p, a.mu, &cfg, s.cap)?;
    let text = match s.format {
        Format::Json => to_json(&r)?,
        Format::Csv => {
            let status = serde_json::to_value(r.status)?.as_str().unwrap_or("").to_string();
            format!(
                "status,n,m,lhs,parallel_rate,error_term,c,rhs,candidate\n{status},{},{},{},{},{},{},{},{}\n",
                r.n,
                r.m,
                fmt_real(r.lhs),
                fmt_real(r.parallel_rate),
                fmt_real(r.error_term),
                fmt_real(r.c),
                fmt_real(r.rhs),
                r.candidate
            )
        }
    };
    write_output(s, &text)?;
    Ok(true)
}

fn cmd_tails(a: &TailsArgs, s: &Settings) -> Result<bool> {
    let pair = TailPair::parse(&a.pair)?;
    let kind = DivergenceKind::parse(&a.kind, a.alpha, None)?;
    let grid = a.grid.clone().unwrap_or_else(|| default_grid(pair, kind));
    let mut t = GrowthThresholds::default();
    if let Some(tol) = s.tol {
        t.convergence_tol = tol;
    }
    let lambda = a.channel.then_some(a.lambda);
    let d = finiteness_diagnostic_with(pair, kind, &grid, lambda, a.normalize, t)?;
    let text = match s.format {
        Format::Json => to_json(&d)?,
        Format::Csv => d.to_csv(),
    };
    write_output(s, &text)?;
    Ok(true)
}

fn cmd_suite(a: &SuiteArgs, s: &Settings) -> Result<bool> {
    if a.list {
        write_output(s, &(suite::SUITES.join("\n") + "\n"))?;
        return Ok(true);
    }
    let size = a.size.or(s.size);
    let reports = match (&a.name, a.all) {
        (_, true) => suite::run_all(s.seed, size, s.tol)?,
        (Some(name), false) => vec![suite::run_suite_with(name, s.seed, size, s.tol)?],
        (None, false) => return Err(Error::InvalidInput("give a suite name or --all".into())),
    };
    for r in &reports {
        eprintln!(
            "{:<18} {:>5} cases {:>6} checks {:>3} failures  min slack {:>12}  {:.2}s",
            r.suite,
            r.cases,
            r.checks,
            r.failures.len(),
            fmt_real(r.min_slack),
            r.wall_time_s
        );
    }
    match &s.output {
        Some(p) => suite::emit(&reports, s.format, p)?,
        None => print!("{}", suite::render(&reports, s.format)?),
    }
    Ok(reports.iter().all(|r| r.passed()))
}

fn run(cli: &Cli) -> Result<bool> {
    let default_format = match cli.command {
        Command::Tails(_) | Command::Stein(_) => Format::Csv,
        _ => Format::Json,
    };
    let s = settings(&cli.global, default_format)?;
    match &cli.command {
        Command::Divergence(a) => cmd_divergence(a, &s),
        Command::ChannelDiv(a) => cmd_channel_div(a, &s),
        Command::Stein(a) => cmd_stein(a, &s),
        Command::Oneshot(a) => cmd_oneshot(a, &s),
        Command::Tails(a) => cmd_tails(a, &s),
        Command::Suite(a) => cmd_suite(a, &s),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::CapExceeded { .. } => 3,
                Error::InvalidInput(_) | Error::UnknownSuite(_) | Error::Io(_) | Error::Json(_) => 2,
                _ => 1,
            })
        }
    }
}
