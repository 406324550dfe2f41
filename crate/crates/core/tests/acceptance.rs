//! Acceptance criteria, one pass/fail line per criterion.

use std::time::{Duration, Instant};

use qdisc::divergences::DivergenceKind;
use qdisc::suite::{run_suite, SuiteReport, STEIN_TARGET};
use qdisc::tails::{default_grid, finiteness_diagnostic, Classification, TailPair};

const SEED: u64 = 42;

struct Verdict {
    ok: bool,
    detail: String,
}

fn run(name: &str, size: Option<usize>) -> SuiteReport {
    run_suite(name, SEED, size).unwrap_or_else(|e| panic!("suite {name}: {e}"))
}

/// Zero failures and every slack at or above `-tol`.
fn suites_clean(reports: &[SuiteReport], tol: f64) -> Verdict {
    let mut problems = Vec::new();
    for r in reports {
        if !r.failures.is_empty() {
            let f = &r.failures[0];
            problems.push(format!("{}: {} failures, first {} {} slack {:e}", r.suite, r.failures.len(), f.case, f.check, f.slack));
        } else if r.min_slack < -tol {
            problems.push(format!("{}: min slack {:e} < -{tol:e}", r.suite, r.min_slack));
        }
    }
    let summary = reports
        .iter()
        .map(|r| format!("{} {} cases/{} checks min slack {:.3e}", r.suite, r.cases, r.checks, r.min_slack))
        .collect::<Vec<_>>()
        .join("; ");
    Verdict {
        ok: problems.is_empty(),
        detail: if problems.is_empty() { summary } else { problems.join("; ") },
    }
}

fn and(mut v: Verdict, ok: bool, what: &str) -> Verdict {
    if !ok {
        v.ok = false;
        v.detail = format!("{what}; {}", v.detail);
    }
    v
}

fn criterion_1() -> Verdict {
    let r = run("ordering", Some(500));
    let ok = r.cases == 500;
    and(suites_clean(&[r], 1e-9), ok, "expected 500 cases")
}

fn criterion_2() -> Verdict {
    let r = run("dpi", Some(300));
    let ok = r.cases == 300 && r.checks == 1500;
    and(suites_clean(&[r], 1e-8), ok, "expected 300 cases x 5 kinds")
}

fn criterion_3() -> Verdict {
    // 300 quantum primal/dual instances and 100 commuting oracle instances
    let r = run("np", Some(300));
    let ok = r.cases == 400;
    and(suites_clean(&[r], 1e-8), ok, "expected 300 + 100 cases")
}

fn criterion_4() -> Verdict {
    let r = run("corollaries", Some(300));
    let ok = r.cases == 300;
    and(suites_clean(&[r], 1e-8), ok, "expected 300 cases")
}

fn criterion_5() -> Verdict {
    let r = run("lemma9", Some(300));
    let ok = r.cases == 300;
    and(suites_clean(&[r], 1e-9), ok, "expected 300 cases")
}

fn criterion_6() -> Verdict {
    let r = run("aep", Some(50));
    let ok = r.cases == 50 && r.checks == 150;
    and(suites_clean(&[r], 0.0), ok, "expected 50 pairs x n in {1,2,4}")
}

fn criterion_7() -> Verdict {
    let r = run("chain_geometric", Some(200));
    let verified = r.counters.get("certified_verified").copied().unwrap_or(0);
    let violated = r.counters.get("certified_violated").copied().unwrap_or(0);
    let ok = verified * 10 >= 50 * 9 && violated == 0 && r.cases >= 250;
    let mut v = and(suites_clean(&[r], 1e-8), ok, "certified fraction or instance count");
    v.detail = format!("certified verified {verified}/50, violated {violated}; {}", v.detail);
    v
}

fn criterion_8() -> Verdict {
    let r = run("stein", None);
    let rows = r.stein_table.clone().unwrap_or_default();
    let dev = |n: usize| rows.iter().find(|x| x.n == n && x.eps == 0.05).and_then(|x| x.deviation);
    let target = rows.first().and_then(|x| x.target);
    let (d2, d10) = (dev(2), dev(10));
    let ok = matches!((d2, d10), (Some(a), Some(b)) if b < a && b <= 0.12)
        && target.is_some_and(|t| (t - STEIN_TARGET).abs() < 1e-9 && (t - 0.20752).abs() < 5e-6)
        && rows.len() == 10;
    let mut v = and(suites_clean(&[r], 1e-9), ok, "deviation shape");
    v.detail = format!("deviation n=2 {d2:?} n=10 {d10:?}; {}", v.detail);
    v
}

fn criterion_9() -> Verdict {
    let one = run("oneshot", None);
    let verified = one.counters.get("verified").copied().unwrap_or(0);
    let chain = run("chain_smoothed", Some(50));
    let ok = verified >= 6 && chain.cases == 50;
    let mut v = and(suites_clean(&[one, chain], 1e-8), ok, "verdicts or fixture count");
    v.detail = format!("verified fixtures {verified}; {}", v.detail);
    v
}

fn criterion_10() -> Verdict {
    let r = run("tails", None);
    let mut ok = true;
    let mut seen = Vec::new();
    let g15 = DivergenceKind::Geometric(1.5);
    let g2 = DivergenceKind::Geometric(2.0);
    for (pair, kind, want) in [
        (TailPair::Pq, DivergenceKind::Dmax, Classification::Diverging),
        (TailPair::Pq, g15, Classification::Converged),
        (TailPair::Pq, g2, Classification::Converged),
        (TailPair::Pr, g2, Classification::Diverging),
        (TailPair::Pr, DivergenceKind::Umegaki, Classification::Converged),
    ] {
        let d = finiteness_diagnostic(pair, kind, &default_grid(pair, kind), None, false).unwrap();
        ok &= d.classification == want;
        if pair == TailPair::Pq && kind == DivergenceKind::Dmax {
            ok &= d.grid.iter().zip(&d.classical).all(|(n, v)| (v - (*n as f64).log2()).abs() < 1e-12);
        }
        seen.push(format!("{}/{}={:?}", pair.name(), kind.name(), d.classification));
    }
    let mut v = and(suites_clean(&[r], 1e-9), ok, "classification mismatch");
    v.detail = format!("{}; {}", seen.join(" "), v.detail);
    v
}

fn criterion_11() -> Verdict {
    let plan = [
        ("fvg", 500),
        ("gentle", 300),
        ("almost_concavity", 300),
        ("dmax_triangle", 300),
        ("direct_sum", 100),
        ("anti_monotonicity", 100),
    ];
    let reports: Vec<SuiteReport> = plan.iter().map(|(s, n)| run(s, Some(*n))).collect();
    let ok = reports.iter().zip(plan).all(|(r, (_, n))| r.cases == n);
    and(suites_clean(&reports, 1e-9), ok, "instance counts")
}

fn main() {
    let criteria: [(&str, fn() -> Verdict, u64); 11] = [
        ("1 ordering", criterion_1, 30),
        ("2 data processing", criterion_2, 120),
        ("3 Neyman-Pearson", criterion_3, 60),
        ("4 smoothing bounds", criterion_4, 120),
        ("5 continuity", criterion_5, 60),
        ("6 AEP interval", criterion_6, 120),
        ("7 geometric chain rule", criterion_7, 180),
        ("8 Stein sweep", criterion_8, 180),
        ("9 one-shot pipeline", criterion_9, 300),
        ("10 tail finiteness", criterion_10, 120),
        ("11 auxiliary inequalities", criterion_11, 120),
    ];
    let mut failed = Vec::new();
    for (name, f, limit) in criteria {
        let start = Instant::now();
        let v = f();
        let took = start.elapsed();
        let in_time = took < Duration::from_secs(limit);
        let ok = v.ok && in_time;
        println!(
            "criterion {name}: {} ({:.2}s, limit {limit}s) {}",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            v.detail
        );
        if !ok {
            failed.push(name);
        }
    }
    let start = Instant::now();
    let all = qdisc::suite::run_all(SEED, None, None).unwrap();
    let took = start.elapsed();
    let ok = all.iter().all(|r| r.passed()) && took < Duration::from_secs(15 * 60);
    println!(
        "suite --all: {} ({:.2}s, {} suites, {} failures)",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        all.len(),
        all.iter().map(|r| r.failures.len()).sum::<usize>()
    );
    if !ok {
        failed.push("suite --all");
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
