use std::process::{Command, Output};

fn qdisc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdisc")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_lists_subcommands() {
    let o = qdisc(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for sub in ["divergence", "channel-div", "stein", "oneshot", "tails", "suite"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    for flag in ["--seed", "--out", "--tol"] {
        assert!(text.contains(flag));
    }
}

#[test]
fn divergence_json_and_csv() {
    let o = qdisc(&["divergence", "--kind", "umegaki", "--rho", "diag:0.5,0.5", "--sigma", "diag:0.25,0.75"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let want = 1.0 - 0.5 * 3f64.log2();
    assert!((v["value"].as_f64().unwrap() - want).abs() < 1e-12);

    let o = qdisc(&["divergence", "--kind", "dmax", "--rho", "diag:1,0", "--sigma", "diag:0,1", "--out", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("kind,value"));
    assert!(text.lines().nth(1).unwrap().starts_with("dmax,inf"));
}

#[test]
fn exit_codes() {
    assert_eq!(qdisc(&["suite", "fvg", "--size", "3"]).status.code(), Some(0));
    // a negative tolerance demands positive slack and fails every check
    assert_eq!(qdisc(&["suite", "fvg", "--size", "3", "--tol=-1"]).status.code(), Some(1));
    assert_eq!(qdisc(&["bogus"]).status.code(), Some(2));
    assert_eq!(qdisc(&["suite", "nosuch"]).status.code(), Some(2));
    let o = qdisc(&[
        "channel-div", "--kind", "geometric", "--alpha", "2", "--e", "replacer:diag:0.5,0.5", "--f",
        "replacer:diag:0.25,0.75", "--cap", "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn suite_output_is_reproducible() {
    let dir = std::env::temp_dir().join(format!("qdisc-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let run = |name: &str| {
        let path = dir.join(name);
        let o = qdisc(&["--seed", "5", "--output", path.to_str().unwrap(), "suite", "ordering", "--size", "4"]);
        assert!(o.status.success());
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        v["wall_time_s"] = 0.into();
        v
    };
    let (a, b) = (run("a.json"), run("b.json"));
    assert_eq!(a, b);
    assert_eq!(a["master_seed"], 5);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn stein_csv_output() {
    let o = qdisc(&["stein", "--n", "1,2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("eps,n,value,target,deviation"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn config_file_sets_defaults() {
    let dir = std::env::temp_dir().join(format!("qdisc-cfg-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("qdisc.conf");
    std::fs::write(&cfg, "seed = 9\nout = csv\n").unwrap();
    let o = qdisc(&["--config", cfg.to_str().unwrap(), "suite", "fvg", "--size", "2"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("suite,case,seed"));
    // flags override the file
    let o = qdisc(&["--config", cfg.to_str().unwrap(), "--out", "json", "suite", "fvg", "--size", "2"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["master_seed"], 9);
    std::fs::remove_dir_all(dir).ok();
}
