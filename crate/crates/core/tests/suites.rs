use qdisc::suite::{render, run_suite, run_suite_with, stein_csv, Format, SuiteReport, SUITES};

#[test]
fn fvg_hundred_cases_pass() {
    let r = run_suite("fvg", 42, Some(100)).unwrap();
    assert_eq!(r.cases, 100);
    assert!(r.failures.is_empty(), "{:?}", r.failures);
}

#[test]
fn same_seed_same_report() {
    let a = run_suite("ordering", 42, Some(10)).unwrap();
    let b = run_suite("ordering", 42, Some(10)).unwrap();
    let (ja, jb) = (
        render(&[a.without_timing()], Format::Json).unwrap(),
        render(&[b.without_timing()], Format::Json).unwrap(),
    );
    assert_eq!(ja, jb);
    let c = run_suite("ordering", 43, Some(10)).unwrap();
    assert_ne!(ja, render(&[c.without_timing()], Format::Json).unwrap());
}

#[test]
fn json_round_trip() {
    // a failing report exercises every field
    let r = run_suite_with("gentle", 3, Some(4), Some(-1.0)).unwrap();
    assert!(!r.failures.is_empty());
    let text = render(&[r.clone()], Format::Json).unwrap();
    let back: SuiteReport = serde_json::from_str(&text).unwrap();
    assert_eq!(render(&[back], Format::Json).unwrap(), text);

    let many = vec![r.clone(), run_suite("fvg", 3, Some(2)).unwrap()];
    let text = render(&many, Format::Json).unwrap();
    let back: Vec<SuiteReport> = serde_json::from_str(&text).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0].failures, r.failures);
}

#[test]
fn infinite_slack_serializes() {
    let r = SuiteReport::empty("fvg", 1, 0);
    let text = render(&[r], Format::Json).unwrap();
    let back: SuiteReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back.min_slack, f64::INFINITY);
}

#[test]
fn csv_failure_rows() {
    let r = run_suite_with("gentle", 3, Some(4), Some(-1.0)).unwrap();
    let csv = render(&[r.clone()], Format::Csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("suite,case,seed,fingerprint,check,slack,detail"));
    assert_eq!(lines.count(), r.failures.len());
    assert!(!csv.contains('\r'));
    let empty = render(&[SuiteReport::empty("gentle", 3, 0)], Format::Csv).unwrap();
    assert_eq!(empty, "suite,case,seed,fingerprint,check,slack,detail\n");
}

#[test]
fn stein_csv_schema() {
    let r = run_suite("stein", 7, None).unwrap();
    assert!(r.passed(), "{:?}", r.failures);
    let rows = r.stein_table.clone().unwrap();
    let csv = stein_csv(&rows).unwrap();
    let mut rd = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..5], ["eps", "n", "value", "target", "deviation"]);
    let mut ns = Vec::new();
    for rec in rd.records() {
        let rec = rec.unwrap();
        let eps: f64 = rec[0].parse().unwrap();
        assert_eq!(eps, 0.05);
        ns.push(rec[1].parse::<usize>().unwrap());
        let value: f64 = rec[2].parse().unwrap();
        let target: f64 = rec[3].parse().unwrap();
        let dev: f64 = rec[4].parse().unwrap();
        assert!((dev - (target - value).abs()).abs() < 1e-12);
    }
    assert_eq!(ns, (1..=10).collect::<Vec<_>>());
    assert_eq!(render(&[r], Format::Csv).unwrap(), csv);
}

#[test]
fn every_suite_runs_small() {
    for name in SUITES {
        if matches!(name, "stein" | "oneshot" | "tails") {
            continue;
        }
        let r = run_suite(name, 11, Some(3)).unwrap();
        assert!(r.cases >= 3, "{name}");
        assert!(r.passed(), "{name}: {:?}", r.failures);
    }
}
