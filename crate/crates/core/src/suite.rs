//! Randomized property suites. Every case draws its instance from a seed
//! derived from (master seed, stream name, case index), so reports are
//! reproducible regardless of thread scheduling.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_div::{
    geometric_additivity_check, geometric_channel_exact, geometric_chain_rule_check, ChainMode, CheckStatus, OptimizerConfig,
    DEFAULT_DIM_CAP,
};
use crate::channels::KrausChannel;
use crate::divergences::{
    almost_concavity_check, dh_from_dmax_bound, dh_upper_via_umegaki, dmax_from_renyi_bound, fidelity,
    gentle_measurement_post_state, geometric_renyi, geometric_trace_term, hypothesis_testing, max_relative,
    petz_continuity_lower, petz_continuity_upper, petz_renyi, aep_bounds, sine_distance,
    smoothed_max_bracket, trace_distance, DivergenceKind,
};
use crate::operator::{
    random_density_with, random_diagonal_density, random_isometry, rng_from_seed, tensor, CMatrix,
    DensityMatrix, HermitianOperator, C64,
};
use crate::strategies::{
    adaptive_exponent, conversion_error_term, greedy_strategy, parallel_as_adaptive, parallel_output,
    rollout, smoothed_chain_step, stein_sweep, verify_oneshot, AdaptiveStrategy, SteinRow,
};
use crate::tails::{
    default_grid, dpr_conventions, finiteness_diagnostic, sandwich_check, Classification, TailPair,
};
use crate::util::{ext_real, fingerprint};
use crate::{Error, Result};

/// Every runnable suite, in `--all` order.
pub const SUITES: [&str; 18] = [
    "ordering",
    "dpi",
    "np",
    "corollaries",
    "lemma9",
    "aep",
    "chain_geometric",
    "chain_smoothed",
    "additivity",
    "stein",
    "oneshot",
    "tails",
    "almost_concavity",
    "fvg",
    "gentle",
    "dmax_triangle",
    "direct_sum",
    "anti_monotonicity",
];

/// Instance count used when no size is requested. Fixed-plan suites
/// (`stein`, `oneshot`, `tails`) ignore the size.
pub fn default_size(name: &str) -> Result<usize> {
    Ok(match name {
        "ordering" | "fvg" => 500,
        "dpi" | "np" | "corollaries" | "lemma9" | "almost_concavity" | "gentle" | "dmax_triangle" => 300,
        "chain_geometric" => 200,
        "additivity" | "direct_sum" | "anti_monotonicity" => 100,
        "aep" | "chain_smoothed" => 50,
        "stein" | "oneshot" | "tails" => 1,
        other => return Err(Error::UnknownSuite(other.into())),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    /// `stream#index`, or the stream name for suite-level checks.
    pub case: String,
    pub seed: u64,
    pub fingerprint: String,
    pub check: String,
    #[serde(with = "ext_real")]
    pub slack: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub master_seed: u64,
    pub size: usize,
    pub cases: usize,
    pub checks: usize,
    pub failures: Vec<Failure>,
    /// Smallest slack over all checks (`inf` when nothing was checked).
    #[serde(with = "ext_real")]
    pub min_slack: f64,
    /// Per-outcome tallies such as verdicts and skipped preconditions.
    pub counters: BTreeMap<String, usize>,
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stein_table: Option<Vec<SteinRow>>,
    /// Not part of the reproducible content.
    pub wall_time_s: f64,
}

impl SuiteReport {
    pub fn empty(suite: &str, master_seed: u64, size: usize) -> Self {
        Self {
            suite: suite.into(),
            master_seed,
            size,
            cases: 0,
            checks: 0,
            failures: Vec::new(),
            min_slack: f64::INFINITY,
            counters: BTreeMap::new(),
            notes: Vec::new(),
            stein_table: None,
            wall_time_s: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// The report with the wall time cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }

    fn counter(&self, key: &str) -> usize {
        self.counters.get(key).copied().unwrap_or(0)
    }
}

struct Check {
    label: String,
    slack: f64,
    tol: f64,
    strict: bool,
}

impl Check {
    /// Passes when `slack ≥ −tol`; NaN fails.
    fn new(label: impl Into<String>, slack: f64, tol: f64) -> Self {
        Self {
            label: label.into(),
            slack,
            tol,
            strict: false,
        }
    }

    /// Passes when `slack > 0`.
    fn strict(label: impl Into<String>, slack: f64) -> Self {
        Self {
            label: label.into(),
            slack,
            tol: 0.0,
            strict: true,
        }
    }

    fn flag(label: impl Into<String>, ok: bool) -> Self {
        Self::new(label, if ok { 0.0 } else { f64::NEG_INFINITY }, 0.0)
    }

    fn passed(&self) -> bool {
        if self.strict {
            self.slack > 0.0
        } else {
            self.slack >= -self.tol
        }
    }
}

#[derive(Default)]
struct Outcome {
    fingerprint: String,
    checks: Vec<Check>,
    tags: Vec<String>,
    notes: Vec<String>,
}

impl Outcome {
    fn new(states: &[&DensityMatrix]) -> Self {
        Self {
            fingerprint: fp(states),
            ..Default::default()
        }
    }

    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn tag(&mut self, t: impl Into<String>) {
        self.tags.push(t.into());
    }
}

fn fp(states: &[&DensityMatrix]) -> String {
    states.iter().map(|s| fingerprint(s.matrix())).collect::<Vec<_>>().join(":")
}

fn splitmix64(z: u64) -> u64 {
    let mut x = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of case `index` of `stream` under `master`.
pub fn case_seed(master: u64, stream: &str, index: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ splitmix64(h)).wrapping_add(index as u64))
}

struct Builder {
    report: SuiteReport,
    tol_override: Option<f64>,
}

impl Builder {
    fn absorb(&mut self, case: String, seed: u64, outcome: Result<Outcome>) {
        self.report.cases += 1;
        match outcome {
            Ok(o) => {
                for t in o.tags {
                    *self.report.counters.entry(t).or_insert(0) += 1;
                }
                self.report.notes.extend(o.notes);
                for mut c in o.checks {
                    if let Some(t) = self.tol_override {
                        if !c.strict && c.tol > 0.0 {
                            c.tol = t;
                        }
                    }
                    self.report.checks += 1;
                    if !c.slack.is_nan() {
                        self.report.min_slack = self.report.min_slack.min(c.slack);
                    }
                    if !c.passed() {
                        self.report.failures.push(Failure {
                            case: case.clone(),
                            seed,
                            fingerprint: o.fingerprint.clone(),
                            check: c.label,
                            slack: c.slack,
                            detail: if c.strict {
                                "expected a strictly positive margin".into()
                            } else if c.tol == 0.0 {
                                "negative slack".into()
                            } else {
                                format!("slack below {:e}", -c.tol)
                            },
                        });
                    }
                }
            }
            Err(e) => {
                self.report.checks += 1;
                self.report.failures.push(Failure {
                    case,
                    seed,
                    fingerprint: String::new(),
                    check: "error".into(),
                    slack: f64::NAN,
                    detail: e.to_string(),
                });
            }
        }
    }

    fn run<F>(&mut self, stream: &str, count: usize, f: F)
    where
        F: Fn(&mut ChaCha8Rng, usize) -> Result<Outcome> + Sync,
    {
        let master = self.report.master_seed;
        let results: Vec<(u64, Result<Outcome>)> = (0..count)
            .into_par_iter()
            .map(|i| {
                let seed = case_seed(master, stream, i);
                let mut rng = rng_from_seed(seed);
                (seed, f(&mut rng, i))
            })
            .collect();
        for (i, (seed, r)) in results.into_iter().enumerate() {
            self.absorb(format!("{stream}#{i}"), seed, r);
        }
    }

    fn fixed(&mut self, label: &str, outcome: Result<Outcome>) {
        let seed = self.report.master_seed;
        self.absorb(label.into(), seed, outcome);
    }
}

/// Runs one suite. `size` defaults to [`default_size`].
pub fn run_suite(name: &str, master_seed: u64, size: Option<usize>) -> Result<SuiteReport> {
    run_suite_with(name, master_seed, size, None)
}

/// [`run_suite`] with every nonzero check tolerance replaced by `tol`.
pub fn run_suite_with(name: &str, master_seed: u64, size: Option<usize>, tol: Option<f64>) -> Result<SuiteReport> {
    let size = match size {
        Some(s) => s,
        None => default_size(name)?,
    };
    default_size(name)?;
    let start = Instant::now();
    let mut b = Builder {
        report: SuiteReport::empty(name, master_seed, size),
        tol_override: tol,
    };
    match name {
        "ordering" => ordering(&mut b, size),
        "dpi" => dpi(&mut b, size),
        "np" => np(&mut b, size),
        "corollaries" => corollaries(&mut b, size),
        "lemma9" => lemma9(&mut b, size),
        "aep" => aep(&mut b, size),
        "chain_geometric" => chain_geometric(&mut b, size),
        "chain_smoothed" => chain_smoothed(&mut b, size),
        "additivity" => additivity(&mut b, size),
        "stein" => stein(&mut b),
        "oneshot" => oneshot(&mut b),
        "tails" => tails(&mut b),
        "almost_concavity" => almost_concavity(&mut b, size),
        "fvg" => fvg(&mut b, size),
        "gentle" => gentle(&mut b, size),
        "dmax_triangle" => dmax_triangle(&mut b, size),
        "direct_sum" => direct_sum(&mut b, size),
        "anti_monotonicity" => anti_monotonicity(&mut b, size),
        other => return Err(Error::UnknownSuite(other.into())),
    }
    let mut report = b.report;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Runs every suite in [`SUITES`] order.
pub fn run_all(master_seed: u64, size: Option<usize>, tol: Option<f64>) -> Result<Vec<SuiteReport>> {
    SUITES.iter().map(|s| run_suite_with(s, master_seed, size, tol)).collect()
}

fn full_rank(d: usize, rng: &mut ChaCha8Rng) -> Result<DensityMatrix> {
    random_density_with(d, d, rng)
}

fn any_rank(d: usize, rng: &mut ChaCha8Rng) -> Result<DensityMatrix> {
    let r = rng.random_range(1..=d);
    random_density_with(d, r, rng)
}

fn pick<T: Copy>(items: &[T], rng: &mut ChaCha8Rng) -> T {
    items[rng.random_range(0..items.len())]
}

fn random_stochastic(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = (0..d_in).map(|_| random_diagonal_density(d_out, rng).op().diagonal()).collect();
    (0..d_out).map(|y| (0..d_in).map(|x| cols[x][y]).collect()).collect()
}

fn random_classical_channel(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Result<KrausChannel> {
    KrausChannel::classical_channel_embed(&random_stochastic(d_in, d_out, rng))
}

/// `slack = before − after`, with `inf ≤ inf` treated as satisfied.
fn upper_slack(upper: f64, lower: f64) -> f64 {
    if upper == f64::INFINITY {
        f64::INFINITY
    } else if lower == f64::INFINITY {
        f64::NEG_INFINITY
    } else {
        upper - lower
    }
}

const ORDER_ALPHAS: [f64; 3] = [1.25, 1.5, 2.0];
const PETZ_GRID: [f64; 6] = [0.3, 0.6, 0.9, 1.3, 1.7, 2.0];

fn ordering(b: &mut Builder, size: usize) {
    b.run("ordering", size, |rng, _| {
        let d = rng.random_range(2..=8);
        let (rho, sigma) = (full_rank(d, rng)?, full_rank(d, rng)?);
        let mut o = Outcome::new(&[&rho, &sigma]);
        let dmax = max_relative(&rho, &sigma)?.value;
        for a in ORDER_ALPHAS {
            let p = petz_renyi(a, &rho, &sigma)?.value;
            let g = geometric_renyi(a, &rho, &sigma)?.value;
            o.check(Check::new(format!("petz<=geometric({a})"), g - p, 1e-9));
            o.check(Check::new(format!("geometric({a})<=dmax"), dmax - g, 1e-9));
        }
        let vals = PETZ_GRID
            .iter()
            .map(|&a| Ok(petz_renyi(a, &rho, &sigma)?.value))
            .collect::<Result<Vec<f64>>>()?;
        for (w, a) in vals.windows(2).zip(PETZ_GRID.windows(2)) {
            o.check(Check::new(format!("petz_monotone({}->{})", a[0], a[1]), w[1] - w[0], 1e-9));
        }
        Ok(o)
    });
}

fn dpi(b: &mut Builder, size: usize) {
    b.run("dpi", size, |rng, _| {
        let d_in: usize = rng.random_range(2..=4);
        let d_out: usize = rng.random_range(2..=4);
        let env = rng.random_range(d_in.div_ceil(d_out)..=4);
        let (rho, sigma) = (full_rank(d_in, rng)?, full_rank(d_in, rng)?);
        let ch = KrausChannel::random_channel(d_in, d_out, env, rng.random())?;
        let alpha = pick(&[0.5, 1.5, 2.0], rng);
        let (cr, cs) = (ch.apply_full(&rho)?, ch.apply_full(&sigma)?);
        let mut o = Outcome::new(&[&rho, &sigma]);
        o.fingerprint.push(':');
        o.fingerprint.push_str(&fingerprint(ch.choi().matrix()));
        for kind in [
            DivergenceKind::Umegaki,
            DivergenceKind::Petz(alpha),
            DivergenceKind::Geometric(alpha),
            DivergenceKind::Dmax,
            DivergenceKind::Hypothesis(0.1),
        ] {
            let before = kind.evaluate(&rho, &sigma)?;
            let after = kind.evaluate(&cr, &cs)?;
            o.check(Check::new(format!("dpi:{}", kind.name()), upper_slack(before, after), 1e-8));
        }
        Ok(o)
    });
}

/// `max_{t ≥ 0} t(1−ε) − Σ(t p_i − q_i)₊`, attained at `t = 0` or a ratio `q_i/p_i`.
fn classical_np_beta(eps: f64, p: &[f64], q: &[f64]) -> f64 {
    let g = |t: f64| t * (1.0 - eps) - p.iter().zip(q).map(|(a, b)| (t * a - b).max(0.0)).sum::<f64>();
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| g(b / a))
        .fold(g(0.0), f64::max)
}

const NP_EPS: [f64; 6] = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5];

fn np(b: &mut Builder, size: usize) {
    b.run("np/quantum", size, |rng, _| {
        let d = rng.random_range(2..=6);
        let (rho, sigma) = (any_rank(d, rng)?, any_rank(d, rng)?);
        let eps = pick(&NP_EPS, rng);
        let mut o = Outcome::new(&[&rho, &sigma]);
        let h = hypothesis_testing(eps, &rho, &sigma)?;
        o.check(Check::new(format!("primal_dual_gap(eps={eps})"), -h.gap, 1e-8));
        Ok(o)
    });
    b.run("np/commuting", size / 3, |rng, i| {
        let d = rng.random_range(2..=8);
        let mut p = random_diagonal_density(d, rng).op().diagonal();
        let mut q = random_diagonal_density(d, rng).op().diagonal();
        let k = rng.random_range(0..d);
        match i % 3 {
            1 => q[k] = 0.0,
            2 => p[k] = 0.0,
            _ => {}
        }
        for v in [&mut p, &mut q] {
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
        }
        let eps = pick(&NP_EPS, rng);
        let (rho, sigma) = (DensityMatrix::from_diag(&p)?, DensityMatrix::from_diag(&q)?);
        let mut o = Outcome::new(&[&rho, &sigma]);
        let got = hypothesis_testing(eps, &rho, &sigma)?.result.value;
        let want = -classical_np_beta(eps, &p, &q).log2();
        let diff = if got == want { 0.0 } else { (got - want).abs() };
        o.check(Check::new(format!("classical_oracle(eps={eps})"), -diff, 1e-9));
        Ok(o)
    });
}

fn corollaries(b: &mut Builder, size: usize) {
    b.run("corollaries", size, |rng, _| {
        let d = rng.random_range(2..=4);
        let (rho, sigma) = (full_rank(d, rng)?, full_rank(d, rng)?);
        let mut o = Outcome::new(&[&rho, &sigma]);
        for eps in [0.1, 0.2, 0.3] {
            let sm = smoothed_max_bracket(eps, &rho, &sigma)?;
            let lower = sm.result.lower.unwrap_or(f64::NEG_INFINITY);
            let upper = sm.result.upper.unwrap_or(f64::INFINITY);
            let dh = hypothesis_testing(1.0 - eps * eps, &rho, &sigma)?.result.value;
            o.check(Check::new(format!("lambda<=dh(eps={eps})"), dh - sm.lambda, 1e-8));
            o.check(Check::new(format!("bracket_order(eps={eps})"), upper - lower, 1e-8));
            let dh_bound = dh_from_dmax_bound(eps, &rho, &sigma)?;
            o.check(Check::new(format!("lower<=dh_bound(eps={eps})"), dh_bound - lower, 1e-8));
            for a in [1.5, 2.0] {
                let renyi_bound = dmax_from_renyi_bound(eps, a, &rho, &sigma)?;
                o.check(Check::new(format!("lower<=renyi_bound(eps={eps},alpha={a})"), renyi_bound - lower, 1e-8));
            }
            if let Some(w) = &sm.witness {
                o.check(Check::new(
                    format!("witness_in_ball(eps={eps})"),
                    eps - w.sine_distance_to_original,
                    1e-8,
                ));
            }
        }
        let dh = hypothesis_testing(0.1, &rho, &sigma)?.result.value;
        o.check(Check::new("dh<=umegaki_bound(eps=0.1)", dh_upper_via_umegaki(0.1, &rho, &sigma)? - dh, 1e-8));
        Ok(o)
    });
}

fn lemma9(b: &mut Builder, size: usize) {
    b.run("lemma9", size, |rng, _| {
        let d = rng.random_range(2..=4);
        let (rho, sigma) = (full_rank(d, rng)?, full_rank(d, rng)?);
        let mut o = Outcome::new(&[&rho, &sigma]);
        for (gamma, delta) in [(1.0, 0.05), (0.5, 0.1)] {
            match petz_continuity_upper(delta, gamma, &rho, &sigma) {
                Ok(s) => o.check(Check::new(format!("upper(gamma={gamma},delta={delta})"), s, 1e-9)),
                Err(Error::PreconditionViolated(_)) => o.tag(format!("skipped_upper(gamma={gamma})")),
                Err(e) => return Err(e),
            }
            match petz_continuity_lower(delta, gamma, &rho, &sigma) {
                Ok(s) => o.check(Check::new(format!("lower(gamma={gamma},delta={delta})"), s, 1e-9)),
                Err(Error::PreconditionViolated(_)) => o.tag(format!("skipped_lower(gamma={gamma})")),
                Err(e) => return Err(e),
            }
        }
        Ok(o)
    });
}

fn aep(b: &mut Builder, size: usize) {
    b.run("aep", size, |rng, _| {
        let (rho, sigma) = (full_rank(2, rng)?, full_rank(2, rng)?);
        let mut o = Outcome::new(&[&rho, &sigma]);
        let eps = 0.3;
        for n in [1, 2, 4] {
            let (lo, up) = aep_bounds(n, eps, 1.0, &rho, &sigma)?;
            let br = smoothed_max_bracket(eps, &rho.tensor_power(n), &sigma.tensor_power(n))?;
            let bl = br.result.lower.unwrap_or(f64::NEG_INFINITY) / n as f64;
            let bu = br.result.upper.unwrap_or(f64::INFINITY) / n as f64;
            o.check(Check::new(format!("intersect(n={n})"), up.min(bu) - lo.max(bl), 0.0));
        }
        Ok(o)
    });
}

fn chain_geometric(b: &mut Builder, size: usize) {
    b.run("chain_geometric/classical", size, |rng, _| {
        let d_in = rng.random_range(2..=4);
        let d_out = rng.random_range(2..=4);
        let (e, f) = (random_classical_channel(d_in, d_out, rng)?, random_classical_channel(d_in, d_out, rng)?);
        let rho = random_diagonal_density(d_in, rng);
        let sigma = random_diagonal_density(d_in, rng);
        let alpha = pick(&ORDER_ALPHAS, rng);
        let mut o = Outcome::new(&[&rho, &sigma]);
        let r = geometric_chain_rule_check(alpha, &e, &f, &rho, &sigma, ChainMode::Classical)?;
        o.tag(format!("classical_{}", status_name(r.status)));
        o.check(Check::new(format!("chain_exact(alpha={alpha})"), r.slack, 1e-8));
        let d2 = rng.random_range(2..=3);
        let (e2, f2) = (random_classical_channel(d2, d2, rng)?, random_classical_channel(d2, d2, rng)?);
        let add = geometric_additivity_check(alpha, &e, &f, &e2, &f2, &OptimizerConfig::default())?;
        o.check(Check::new(format!("additivity_gap(alpha={alpha})"), -add.gap.abs(), 1e-8));
        Ok(o)
    });
    let n_cert = size.div_ceil(4);
    b.run("chain_geometric/certified", n_cert, |rng, _| {
        let d = rng.random_range(2..=3);
        let (t1, t2) = (full_rank(d, rng)?, full_rank(d, rng)?);
        let lambda = rng.random_range(0.2..0.9);
        let e = KrausChannel::generalized_depolarizing(&t1, lambda)?;
        let f = KrausChannel::generalized_depolarizing(&t2, lambda)?;
        let (rho, sigma) = (full_rank(d, rng)?, full_rank(d, rng)?);
        let alpha = pick(&ORDER_ALPHAS, rng);
        let mut o = Outcome::new(&[&rho, &sigma, &t1, &t2]);
        let r = geometric_chain_rule_check(alpha, &e, &f, &rho, &sigma, ChainMode::QuantumCertified)?;
        o.tag(format!("certified_{}", status_name(r.status)));
        o.check(Check::flag("certified_not_violated", r.status != CheckStatus::Violated));
        if r.status == CheckStatus::Verified {
            o.check(Check::new(format!("chain_certified(alpha={alpha})"), r.slack, 1e-8));
        }
        Ok(o)
    });
    let verified = b.report.counter("certified_verified");
    let frac = if n_cert == 0 { 1.0 } else { verified as f64 / n_cert as f64 };
    b.report.notes.push(format!("certified verified fraction {frac:.4} ({verified}/{n_cert})"));
    let mut o = Outcome::default();
    o.check(Check::new("certified_verified_fraction>=0.9", frac - 0.9, 0.0));
    b.fixed("chain_geometric/summary", Ok(o));
}

fn status_name(s: CheckStatus) -> &'static str {
    match s {
        CheckStatus::Verified => "verified",
        CheckStatus::Violated => "violated",
        CheckStatus::Inconclusive => "inconclusive",
    }
}

/// Generalized depolarizing pair with random full-rank targets.
pub fn depolarizing_fixture(seed: u64, dim: usize, lambda: f64) -> Result<(KrausChannel, KrausChannel)> {
    let mut rng = rng_from_seed(seed);
    let (t1, t2) = (full_rank(dim, &mut rng)?, full_rank(dim, &mut rng)?);
    Ok((
        KrausChannel::generalized_depolarizing(&t1, lambda)?,
        KrausChannel::generalized_depolarizing(&t2, lambda)?,
    ))
}

fn chain_smoothed(b: &mut Builder, size: usize) {
    b.run("chain_smoothed", size, |rng, _| {
        let (rho, sigma) = (full_rank(2, rng)?, full_rank(2, rng)?);
        let lambda = rng.random_range(0.2..0.8);
        let (e, f) = depolarizing_fixture(rng.random(), 2, lambda)?;
        let mut o = Outcome::new(&[&rho, &sigma]);
        let r = smoothed_chain_step(0.2, 0.2, 0.01, 2, &rho, &sigma, &e, &f)?;
        o.check(Check::new("smoothed_chain_step", r.slack, 1e-8));
        Ok(o)
    });
}

fn suite_optimizer(seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        restarts: 4,
        max_iterations: 200,
        seed,
        ..Default::default()
    }
}

fn additivity(b: &mut Builder, size: usize) {
    b.run("additivity/classical", size, |rng, _| {
        let alpha = pick(&ORDER_ALPHAS, rng);
        let (a_in, a_out) = (rng.random_range(2..=3), rng.random_range(2..=3));
        let (b_in, b_out) = (rng.random_range(2..=3), rng.random_range(2..=3));
        let e1 = random_classical_channel(a_in, a_out, rng)?;
        let f1 = random_classical_channel(a_in, a_out, rng)?;
        let e2 = random_classical_channel(b_in, b_out, rng)?;
        let f2 = random_classical_channel(b_in, b_out, rng)?;
        let mut o = Outcome::default();
        o.fingerprint = [&e1, &f1, &e2, &f2].iter().map(|c| fingerprint(c.choi().matrix())).collect::<Vec<_>>().join(":");
        let r = geometric_additivity_check(alpha, &e1, &f1, &e2, &f2, &OptimizerConfig::default())?;
        o.check(Check::new(format!("exact_gap(alpha={alpha})"), -r.gap.abs(), 1e-8));
        Ok(o)
    });
    // optimizer estimates seeded with the product witness can only gain
    b.run("additivity/quantum", size.div_ceil(20), |rng, _| {
        let alpha = pick(&ORDER_ALPHAS, rng);
        let (l1, l2) = (rng.random_range(0.2..0.9), rng.random_range(0.2..0.9));
        let (e1, f1) = depolarizing_fixture(rng.random(), 2, l1)?;
        let (e2, f2) = depolarizing_fixture(rng.random(), 2, l2)?;
        let mut o = Outcome::default();
        o.fingerprint = [&e1, &f1, &e2, &f2].iter().map(|c| fingerprint(c.choi().matrix())).collect::<Vec<_>>().join(":");
        let cfg = suite_optimizer(rng.random());
        let r = geometric_additivity_check(alpha, &e1, &f1, &e2, &f2, &cfg)?;
        o.check(Check::new(format!("joint>=sum(alpha={alpha})"), upper_slack(r.joint, r.sum), 1e-6));
        let exact = |e: &KrausChannel, f: &KrausChannel| -> Result<f64> {
            geometric_channel_exact(alpha, e, f)?.ok_or_else(|| Error::InvalidInput("singular Choi operator".into()))
        };
        let joint = exact(&KrausChannel::tensor_channels(&e1, &e2), &KrausChannel::tensor_channels(&f1, &f2))?;
        let gap = joint - exact(&e1, &f1)? - exact(&e2, &f2)?;
        o.check(Check::new(format!("closed_form_gap(alpha={alpha})"), -gap.abs(), 1e-8));
        Ok(o)
    });
}

/// `D(diag(.5,.5) ‖ diag(.25,.75)) = 1 − ½ log₂3`.
pub const STEIN_TARGET: f64 = 0.207_518_749_639_422;

fn diag(p: &[f64]) -> Result<DensityMatrix> {
    DensityMatrix::from_diag(p)
}

fn stein(b: &mut Builder) {
    let seed = b.report.master_seed;
    let run = || -> Result<(Outcome, Vec<SteinRow>)> {
        let e = KrausChannel::replacer(&diag(&[0.5, 0.5])?, 2);
        let f = KrausChannel::replacer(&diag(&[0.25, 0.75])?, 2);
        let cfg = suite_optimizer(seed);
        let n_list: Vec<usize> = (1..=10).collect();
        let rows = stein_sweep(&e, &f, &[0.05], &n_list, &cfg, DEFAULT_DIM_CAP)?;
        let mut o = Outcome::default();
        let target = rows[0].target.unwrap_or(f64::NAN);
        o.check(Check::new("target", -(target - STEIN_TARGET).abs(), 1e-9));
        let dev = |n: usize| rows.iter().find(|r| r.n == n).and_then(|r| r.deviation).unwrap_or(f64::NAN);
        o.check(Check::strict("deviation(n=10)<deviation(n=2)", dev(2) - dev(10)));
        o.check(Check::new("deviation(n=10)<=0.12", 0.12 - dev(10), 0.0));
        let same = stein_sweep(&e, &e, &[0.05], &[1, 2, 4], &cfg, DEFAULT_DIM_CAP)?;
        for r in &same {
            let want = -(0.95_f64).log2() / r.n as f64;
            o.check(Check::new(format!("equal_channels(n={})", r.n), -(r.value - want).abs(), 1e-9));
        }
        Ok((o, rows))
    };
    match run() {
        Ok((o, rows)) => {
            b.fixed("stein/replacer", Ok(o));
            b.report.stein_table = Some(rows);
        }
        Err(e) => b.fixed("stein/replacer", Err(e)),
    }
}

fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn oneshot(b: &mut Builder) {
    b.fixed("oneshot/conversion", Ok(conversion_checks()));
    let seed = b.report.master_seed;
    b.fixed("oneshot/replacer", verify_fixtures_replacer(seed));
    b.fixed("oneshot/depolarizing", verify_fixture_depolarizing(seed));
    b.run("oneshot/embedding", 10, |rng, _| {
        let nu = full_rank(8, rng)?.with_dims(&[2, 2, 2])?;
        let e = KrausChannel::random_channel(2, 2, 2, rng.random())?;
        let (s, fin) = parallel_as_adaptive(&nu, 2, 2)?;
        let adaptive = rollout(&s, &e)?.final_state.permute(&fin)?;
        let direct = parallel_output(&nu, &e, 2, DEFAULT_DIM_CAP)?;
        let mut o = Outcome::new(&[&nu]);
        o.check(Check::new("embedding", -max_abs_diff(adaptive.matrix(), direct.matrix()), 1e-10));
        Ok(o)
    });
    b.run("oneshot/register_isometry", 10, |rng, _| {
        let e = KrausChannel::random_channel(2, 2, 2, rng.random())?;
        let f = KrausChannel::random_channel(2, 2, 2, rng.random())?;
        let psi = crate::operator::random_unit_vector(4, rng);
        let input = DensityMatrix::from_pure(&psi, &[2, 2])?;
        let s = AdaptiveStrategy::product(&input, 2, 2)?;
        let eps = 0.1;
        let rep = adaptive_exponent(&s, &e, &f, eps)?;
        let (a, bb) = (rollout(&s, &e)?.final_state, rollout(&s, &f)?.final_state);
        let head = a.dims()[0];
        let rest = a.dim() / head;
        let v = random_isometry(rest + 1, rest, rng);
        let iso = KrausChannel::new(vec![tensor(&CMatrix::identity(head, head), &v)])?;
        let (a2, b2) = (
            iso.apply_full(&a.with_dims(&[a.dim()])?)?,
            iso.apply_full(&bb.with_dims(&[bb.dim()])?)?,
        );
        let moved = hypothesis_testing(eps, &a2, &b2)?.result.value / s.n_rounds() as f64;
        let mut o = Outcome::new(&[&input]);
        let diff = if moved == rep.value_bits_per_use { 0.0 } else { (moved - rep.value_bits_per_use).abs() };
        o.check(Check::new("register_isometry_invariance", -diff, 1e-9));
        o.check(Check::new("exponent_nonnegative", rep.value_bits_per_use, 1e-12));
        let same = adaptive_exponent(&s, &e, &e, eps)?.value_bits_per_use;
        o.check(Check::new("equal_channels_nonnegative", same, 1e-12));
        Ok(o)
    });
}

fn conversion_checks() -> Outcome {
    let mut o = Outcome::default();
    let l2 = f64::log2;
    // h(1/4) = 1/2 + (3/4) log₂(4/3), h(1/10) = (1/10) log₂10 + (9/10) log₂(10/9)
    let h_quarter = 0.5 + 0.75 * l2(4.0 / 3.0);
    let h_tenth = 0.1 * l2(10.0) + 0.9 * l2(10.0 / 9.0);
    let fixtures = [
        (
            (0.5, 0.5, 100, 2, 0.01, 16.0),
            2.0 * (3.2 * 4.0 + (1.0 + l2(8.0 / 7.0) + 0.01) / 100.0 + 0.5),
        ),
        (
            (0.25, 0.5, 16, 4, 0.1, 0.0),
            ((1.0 + l2(8.0 / 7.0) + 0.1) / 16.0 + h_quarter / 4.0) / 0.75,
        ),
        (
            (0.1, 0.2, 9, 3, 0.05, 2.0),
            (2.0 * l2(40.0) + (l2(5.0) - l2(0.95) + 0.05) / 9.0 + h_tenth / 3.0) / 0.9,
        ),
    ];
    for (k, ((aa, ap, m, n, mu, c), want)) in fixtures.into_iter().enumerate() {
        let got = conversion_error_term(aa, ap, m, n, mu, c);
        o.check(Check::new(format!("conversion_fixture_{}", k + 1), -(got - want).abs(), 1e-12));
    }
    let ms = [1, 4, 16, 64, 256, 1024];
    let cs = [0.0, 0.5, 2.0, 8.0, 32.0];
    for &c in &cs {
        for w in ms.windows(2) {
            let (a, bv) = (
                conversion_error_term(0.3, 0.4, w[0], 3, 0.01, c),
                conversion_error_term(0.3, 0.4, w[1], 3, 0.01, c),
            );
            o.check(Check::new(format!("decreasing_in_m(C={c},m={})", w[1]), a - bv, 0.0));
        }
    }
    for &m in &ms {
        for w in cs.windows(2) {
            let (a, bv) = (
                conversion_error_term(0.3, 0.4, m, 3, 0.01, w[0]),
                conversion_error_term(0.3, 0.4, m, 3, 0.01, w[1]),
            );
            o.check(Check::new(format!("increasing_in_C(m={m},C={})", w[1]), bv - a, 0.0));
        }
    }
    o
}

fn max_entangled_state(d: usize) -> Result<DensityMatrix> {
    DensityMatrix::from_pure(&crate::channel_div::maximally_entangled(d), &[d, d])
}

fn verified_check(o: &mut Outcome, label: &str, r: &crate::strategies::OneshotReport) {
    o.tag(format!("{}", status_name(r.status)));
    o.notes.push(format!(
        "{label}: status {} lhs {:.6} rhs {:.6} (parallel rate {:.6}, error term {:.6}, C {:.6}, candidate {})",
        status_name(r.status),
        r.lhs,
        r.rhs,
        r.parallel_rate,
        r.error_term,
        r.c,
        r.candidate
    ));
    o.check(Check::flag(format!("{label}:verified"), r.status == CheckStatus::Verified));
    o.check(Check::new(format!("{label}:rhs-lhs"), r.rhs - r.lhs, 1e-8));
}

fn verify_fixtures_replacer(seed: u64) -> Result<Outcome> {
    let cfg = suite_optimizer(seed);
    let mut o = Outcome::default();
    let qubit = (
        KrausChannel::replacer(&diag(&[0.5, 0.5])?, 2),
        KrausChannel::replacer(&diag(&[0.25, 0.75])?, 2),
    );
    let mut rng = rng_from_seed(case_seed(seed, "oneshot/replacer", 0));
    let qutrit = (
        KrausChannel::replacer(&full_rank(3, &mut rng)?, 2),
        KrausChannel::replacer(&full_rank(3, &mut rng)?, 2),
    );
    for (name, (e, f)) in [("qubit_replacer", qubit), ("qutrit_replacer", qutrit)] {
        let product = AdaptiveStrategy::product(&max_entangled_state(2)?, e.dim_out(), 2)?;
        let r = verify_oneshot(&product, &e, &f, 2, 0.5, 0.5, 0.01, &cfg, DEFAULT_DIM_CAP)?;
        verified_check(&mut o, &format!("{name}/product(n=2,m=2)"), &r);
        let greedy = greedy_strategy(&e, &f, 2, DEFAULT_DIM_CAP)?;
        let r = verify_oneshot(&greedy, &e, &f, 4, 0.5, 0.5, 0.01, &cfg, DEFAULT_DIM_CAP)?;
        verified_check(&mut o, &format!("{name}/greedy(n=2,m=4)"), &r);
    }
    Ok(o)
}

/// Seed of the qubit depolarizing verification fixture.
pub const DEPOLARIZING_FIXTURE_SEED: u64 = 17;

fn verify_fixture_depolarizing(seed: u64) -> Result<Outcome> {
    let cfg = suite_optimizer(seed);
    let (e, f) = depolarizing_fixture(DEPOLARIZING_FIXTURE_SEED, 2, 0.5)?;
    let mut o = Outcome::default();
    let product = AdaptiveStrategy::product(&max_entangled_state(2)?, 2, 2)?;
    let r = verify_oneshot(&product, &e, &f, 4, 0.5, 0.5, 0.01, &cfg, DEFAULT_DIM_CAP)?;
    verified_check(&mut o, "depolarizing/product(n=2,m=4)", &r);
    let greedy = greedy_strategy(&e, &f, 2, DEFAULT_DIM_CAP)?;
    let r = verify_oneshot(&greedy, &e, &f, 4, 0.5, 0.5, 0.01, &cfg, DEFAULT_DIM_CAP)?;
    verified_check(&mut o, "depolarizing/greedy(n=2,m=4)", &r);
    Ok(o)
}

fn class_name(c: Classification) -> &'static str {
    match c {
        Classification::Converged => "converged",
        Classification::Diverging => "diverging",
        Classification::Inconclusive => "inconclusive",
    }
}

/// Channel-mode grid: the state grid capped at 64 levels (10 for `r`).
fn channel_grid(pair: TailPair, kind: DivergenceKind) -> Vec<usize> {
    match pair {
        TailPair::Pq => default_grid(pair, kind),
        TailPair::Pr => vec![2, 4, 6, 8, 10],
    }
}

fn tails(b: &mut Builder) {
    let g15 = DivergenceKind::Geometric(1.5);
    let g2 = DivergenceKind::Geometric(2.0);
    let expected = [
        (TailPair::Pq, DivergenceKind::Dmax, Classification::Diverging),
        (TailPair::Pq, g15, Classification::Converged),
        (TailPair::Pq, g2, Classification::Converged),
        (TailPair::Pr, g2, Classification::Diverging),
        (TailPair::Pr, DivergenceKind::Umegaki, Classification::Converged),
    ];
    let all_kinds = [
        (TailPair::Pq, DivergenceKind::Umegaki),
        (TailPair::Pq, DivergenceKind::Dmax),
        (TailPair::Pq, g15),
        (TailPair::Pq, g2),
        (TailPair::Pr, DivergenceKind::Umegaki),
        (TailPair::Pr, DivergenceKind::Dmax),
        (TailPair::Pr, g2),
    ];
    let results: Vec<Result<Outcome>> = all_kinds
        .par_iter()
        .map(|&(pair, kind)| -> Result<Outcome> {
            let mut o = Outcome::default();
            let label = format!("{}/{}", pair.name(), kind.name());
            let state = finiteness_diagnostic(pair, kind, &default_grid(pair, kind), None, false)?;
            let grid = channel_grid(pair, kind);
            let chan = finiteness_diagnostic(pair, kind, &grid, Some(0.5), false)?;
            o.notes.push(format!(
                "{label}: state {} on N<={}, channel(lambda=0.5) {} on N<={}",
                class_name(state.classification),
                state.grid.last().copied().unwrap_or(0),
                class_name(chan.classification),
                grid.last().copied().unwrap_or(0)
            ));
            if let Some(&(_, _, want)) = expected.iter().find(|(p, k, _)| *p == pair && *k == kind) {
                o.check(Check::flag(format!("{label}:state_{}", class_name(want)), state.classification == want));
            }
            o.check(Check::flag(
                format!("{label}:channel_consistent"),
                !(chan.classification == Classification::Converged
                    && state.classification == Classification::Diverging),
            ));
            if state.classification == Classification::Diverging {
                o.check(Check::flag(
                    format!("{label}:channel_diverging"),
                    chan.classification == Classification::Diverging,
                ));
            }
            for (i, (lo, up)) in chan.values.iter().zip(&chan.upper).enumerate() {
                o.check(Check::new(format!("{label}:channel_lower<=upper(N={})", grid[i]), upper_slack(*up, *lo), 1e-9));
            }
            if pair == TailPair::Pq && kind == DivergenceKind::Dmax {
                for (n, v) in state.grid.iter().zip(&state.classical) {
                    o.check(Check::new(format!("classical_dmax=log2N(N={n})"), -(v - (*n as f64).log2()).abs(), 1e-12));
                }
            }
            Ok(o)
        })
        .collect();
    for (r, (pair, kind)) in results.into_iter().zip(all_kinds) {
        b.fixed(&format!("tails/{}/{}", pair.name(), kind.name()), r);
    }
    let sandwich = || -> Result<Outcome> {
        let mut o = Outcome::default();
        for n in [8, 16, 32, 64] {
            for kind in [DivergenceKind::Umegaki, DivergenceKind::Geometric(1.5), DivergenceKind::Geometric(2.0), DivergenceKind::Dmax] {
                let s = sandwich_check(kind, n)?;
                o.check(Check::new(format!("sandwich({},N={n})", kind.name()), s.slack(), 1e-8));
            }
        }
        Ok(o)
    };
    b.fixed("tails/sandwich", sandwich());
    let dpr = || -> Result<Outcome> {
        let mut o = Outcome::default();
        let c = dpr_conventions(30)?;
        o.notes.push(format!(
            "D(p||r) at N=30: direct {:.12} lindblad {:.12} printed {:.12} flagged {}",
            c.direct, c.lindblad, c.printed, c.flagged
        ));
        let direct: f64 = (1..=30).map(|k| 1.0 / (k * k) as f64).sum();
        o.check(Check::new("dpr_direct", -(c.direct - direct).abs(), 1e-12));
        o.check(Check::flag("dpr_flagged", c.flagged));
        Ok(o)
    };
    b.fixed("tails/dpr", dpr());
}

fn almost_concavity(b: &mut Builder, size: usize) {
    b.run("almost_concavity", size, |rng, _| {
        let k = rng.random_range(1..=4);
        let d = rng.random_range(2..=4);
        let rhos = (0..k).map(|_| full_rank(d, rng)).collect::<Result<Vec<_>>>()?;
        let sigma = full_rank(d, rng)?;
        let lambda = random_diagonal_density(k, rng).op().diagonal();
        let s: f64 = lambda.iter().sum();
        let lambda: Vec<f64> = lambda.iter().map(|x| x / s).collect();
        let mut refs: Vec<&DensityMatrix> = rhos.iter().collect();
        refs.push(&sigma);
        let mut o = Outcome::new(&refs);
        o.check(Check::new("almost_concavity", almost_concavity_check(&lambda, &rhos, &sigma)?, 1e-9));
        Ok(o)
    });
}

fn fvg(b: &mut Builder, size: usize) {
    b.run("fvg", size, |rng, _| {
        let d = rng.random_range(2..=8);
        let (rho, sigma) = (any_rank(d, rng)?, any_rank(d, rng)?);
        let mut o = Outcome::new(&[&rho, &sigma]);
        let f = fidelity(&rho, &sigma)?;
        let t = trace_distance(&rho, &sigma)?;
        let p = sine_distance(&rho, &sigma)?;
        o.check(Check::new("1-sqrtF<=T", t - (1.0 - f.sqrt()), 1e-10));
        o.check(Check::new("T<=P", p - t, 1e-10));
        Ok(o)
    });
}

fn random_effect(d: usize, rng: &mut ChaCha8Rng) -> Result<HermitianOperator> {
    let u = random_isometry(d, d, rng);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
    let dm = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(d, w.iter().map(|&x| C64::new(x, 0.0))));
    HermitianOperator::new(&u * dm * u.adjoint())
}

fn gentle(b: &mut Builder, size: usize) {
    b.run("gentle", size, |rng, _| {
        let d = rng.random_range(2..=6);
        let rho = any_rank(d, rng)?;
        let effect = random_effect(d, rng)?;
        let mut o = Outcome::new(&[&rho]);
        let g = gentle_measurement_post_state(&rho, &effect)?;
        o.check(Check::new("sine_distance<=bound", g.bound - g.sine_distance, 1e-9));
        Ok(o)
    });
}

fn dmax_triangle(b: &mut Builder, size: usize) {
    b.run("dmax_triangle", size, |rng, _| {
        let d = rng.random_range(2..=6);
        let (rho, sigma, tau) = (full_rank(d, rng)?, full_rank(d, rng)?, full_rank(d, rng)?);
        let mut o = Outcome::new(&[&rho, &sigma, &tau]);
        let lhs = max_relative(&rho, &tau)?.value;
        let rhs = max_relative(&rho, &sigma)?.value + max_relative(&sigma, &tau)?.value;
        o.check(Check::new("dmax_triangle", rhs - lhs, 1e-9));
        Ok(o)
    });
}

fn direct_sum_matrix(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (m, n) = (a.nrows(), b.nrows());
    let mut out = CMatrix::zeros(m + n, m + n);
    out.view_mut((0, 0), (m, m)).copy_from(a);
    out.view_mut((m, m), (n, n)).copy_from(b);
    out
}

fn direct_sum(b: &mut Builder, size: usize) {
    b.run("direct_sum", size, |rng, _| {
        let (d1, d2) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let (r1, r2) = (full_rank(d1, rng)?, full_rank(d2, rng)?);
        let (s1, s2) = (full_rank(d1, rng)?, full_rank(d2, rng)?);
        let p = rng.random_range(0.1..0.9);
        let q = rng.random_range(0.1..0.9);
        let alpha = pick(&[0.5, 1.5, 2.0], rng);
        let c = |x: f64| C64::new(x, 0.0);
        let (a1, a2) = (r1.matrix() * c(p), r2.matrix() * c(1.0 - p));
        let (b1, b2) = (s1.matrix() * c(q), s2.matrix() * c(1.0 - q));
        let d = d1 + d2;
        // hide the block structure behind a random unitary
        let u = random_isometry(d, d, rng);
        let rho = DensityMatrix::new(&u * direct_sum_matrix(&a1, &a2) * u.adjoint(), &[d])?;
        let sigma = DensityMatrix::new(&u * direct_sum_matrix(&b1, &b2) * u.adjoint(), &[d])?;
        let whole = geometric_trace_term(alpha, &rho, &sigma)?;
        let parts = geometric_trace_term(
            alpha,
            &DensityMatrix::new_unnormalized(a1, &[d1])?,
            &DensityMatrix::new_unnormalized(b1, &[d1])?,
        )? + geometric_trace_term(
            alpha,
            &DensityMatrix::new_unnormalized(a2, &[d2])?,
            &DensityMatrix::new_unnormalized(b2, &[d2])?,
        )?;
        let mut o = Outcome::new(&[&rho, &sigma]);
        // trace terms reach ~1e2 for ill-conditioned σ, so compare on that scale
        let scale = parts.abs().max(1.0);
        o.check(Check::new(format!("direct_sum(alpha={alpha})"), -(whole - parts).abs() / scale, 1e-10));
        Ok(o)
    });
}

fn anti_monotonicity(b: &mut Builder, size: usize) {
    b.run("anti_monotonicity", size, |rng, _| {
        let d = rng.random_range(2..=5);
        let (rho, s1) = (full_rank(d, rng)?, full_rank(d, rng)?);
        let bump = any_rank(d, rng)?;
        let t = rng.random_range(0.01..1.0);
        let s2 = DensityMatrix::new_unnormalized(s1.matrix() + bump.matrix() * C64::new(t, 0.0), &[d])?;
        let mut o = Outcome::new(&[&rho, &s1, &bump]);
        for alpha in [0.5, 1.5, 2.0] {
            let a = geometric_renyi(alpha, &rho, &s1)?.value;
            let c = geometric_renyi(alpha, &rho, &s2)?.value;
            o.check(Check::new(format!("anti_monotone(alpha={alpha})"), a - c, 1e-9));
        }
        Ok(o)
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidInput(format!("unknown format '{other}' (json|csv)"))),
        }
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Stein table with columns `eps,n,value,target,deviation,status`.
pub fn stein_csv(rows: &[SteinRow]) -> Result<String> {
    use crate::util::fmt_real;
    let mut w = csv_writer();
    w.write_record(["eps", "n", "value", "target", "deviation", "status"]).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(fmt_real).unwrap_or_default();
    for r in rows {
        w.write_record([
            fmt_real(r.eps),
            r.n.to_string(),
            fmt_real(r.value),
            opt(r.target),
            opt(r.deviation),
            r.status.clone(),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Failure rows (one per failed check) under a fixed header; a single stein
/// report renders its table instead.
pub fn render(reports: &[SuiteReport], format: Format) -> Result<String> {
    match format {
        Format::Json => {
            let mut s = if reports.len() == 1 {
                serde_json::to_string_pretty(&reports[0])?
            } else {
                serde_json::to_string_pretty(reports)?
            };
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            if let [r] = reports {
                if let Some(rows) = &r.stein_table {
                    return stein_csv(rows);
                }
            }
            let mut w = csv_writer();
            w.write_record(["suite", "case", "seed", "fingerprint", "check", "slack", "detail"])
                .map_err(csv_err)?;
            for r in reports {
                for f in &r.failures {
                    w.write_record([
                        r.suite.clone(),
                        f.case.clone(),
                        f.seed.to_string(),
                        f.fingerprint.clone(),
                        f.check.clone(),
                        crate::util::fmt_real(f.slack),
                        f.detail.clone(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            finish_csv(w)
        }
    }
}

/// Writes the rendered reports to `path`.
pub fn emit(reports: &[SuiteReport], format: Format, path: &Path) -> Result<()> {
    std::fs::write(path, render(reports, format)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;


    #[test]
    fn oracle_matches_known_pair() {
        // β for (.5,.5) vs (.25,.75) at ε = .05: reject the 2nd outcome partly
        let beta = classical_np_beta(0.05, &[0.5, 0.5], &[0.25, 0.75]);
        // T = (1, .9): type-II = .25 + .9·.75 = .925
        assert!((beta - 0.925).abs() < 1e-15);
    }

    #[test]
    fn seeds_differ_by_stream_and_index() {
        let a = case_seed(42, "ordering", 0);
        assert_ne!(a, case_seed(42, "ordering", 1));
        assert_ne!(a, case_seed(42, "dpi", 0));
        assert_ne!(a, case_seed(43, "ordering", 0));
        assert_eq!(a, case_seed(42, "ordering", 0));
    }

    #[test]
    fn unknown_suite() {
        assert!(matches!(run_suite("nope", 1, Some(1)), Err(Error::UnknownSuite(_))));
    }

    #[test]
    fn empty_report_csv_is_header_only() {
        let r = SuiteReport::empty("fvg", 1, 0);
        let csv = render(&[r], Format::Csv).unwrap();
        assert_eq!(csv, "suite,case,seed,fingerprint,check,slack,detail\n");
    }

    #[test]
    fn small_suites_pass() {
        for name in ["ordering", "fvg", "gentle", "dmax_triangle", "direct_sum", "anti_monotonicity", "almost_concavity"] {
            let r = run_suite(name, 5, Some(8)).unwrap();
            assert_eq!(r.cases, 8);
            assert!(r.passed(), "{name}: {:?}", r.failures);
        }
    }
}
