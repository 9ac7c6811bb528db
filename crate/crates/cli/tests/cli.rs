use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spatial-causal"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SHORT: [&str; 4] = ["--iterations", "600", "--burn-in", "200"];

#[test]
fn simulate_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["one", "two"] {
        stdout(&run(
            &[
                "simulate",
                "--scenario",
                "nonlinear",
                "--seed",
                "7",
                "--grid",
                "6x5",
                "--out",
                out,
            ],
            dir.path(),
        ));
    }
    for f in [
        "nonlinear_seed7.csv",
        "nonlinear_seed7_truth.csv",
        "grid_6x5.adj",
    ] {
        let a = fs::read(dir.path().join("one").join(f)).unwrap();
        let b = fs::read(dir.path().join("two").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs between runs");
    }
    let truth = fs::read_to_string(dir.path().join("one/nonlinear_seed7_truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 31);
    assert!(truth.starts_with("region,beta,u,v,prob\n"));
}

#[test]
fn fit_writes_one_estimate_row() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&run(
        &[
            "simulate",
            "--scenario",
            "a",
            "--seed",
            "3",
            "--grid",
            "6x6",
        ],
        dir.path(),
    ));
    let mut args = vec![
        "fit",
        "--estimator",
        "S+P",
        "--data",
        "a_seed3.csv",
        "--lattice",
        "grid_6x6.adj",
    ];
    args.extend(SHORT);
    let text = stdout(&run(&args, dir.path()));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "dataset_id,estimator,point,lo95,hi95,flags");
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&cells[..2], &["a_seed3", "S+P"]);
    let (p, lo, hi): (f64, f64, f64) = (
        cells[2].parse().unwrap(),
        cells[3].parse().unwrap(),
        cells[4].parse().unwrap(),
    );
    assert!(lo <= p && p <= hi);
}

#[test]
fn validation_failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--scenario", "zz", "--seed", "1"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown scenario"));

    stdout(&run(
        &[
            "simulate",
            "--scenario",
            "b",
            "--seed",
            "1",
            "--grid",
            "4x4",
        ],
        dir.path(),
    ));
    let o = run(
        &[
            "fit",
            "--estimator",
            "NOPE",
            "--data",
            "b_seed1.csv",
            "--lattice",
            "grid_4x4.adj",
        ],
        dir.path(),
    );
    assert!(!o.status.success());
    // lattice smaller than the dataset
    fs::write(dir.path().join("tiny.adj"), "0: 1\n1: 0\n").unwrap();
    let o = run(
        &[
            "fit",
            "--estimator",
            "NS",
            "--data",
            "b_seed1.csv",
            "--lattice",
            "tiny.adj",
        ],
        dir.path(),
    );
    assert!(!o.status.success());
    let o = run(&["fit", "--estimator", "NS"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    fs::write(dir.path().join("bad.cfg"), "iterations=10 burnin=20\n").unwrap();
    let o = run(&["sim-study", "--config", "bad.cfg"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn sim_study_writes_per_scenario_files_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bench.cfg"),
        "scenario=a,b grid=8x8 datasets=2\niterations=400 burnin=100 seed=9 estimators=NS,S\n",
    )
    .unwrap();
    let text = stdout(&run(
        &["sim-study", "--config", "bench.cfg", "--out", "results"],
        dir.path(),
    ));
    let res = dir.path().join("results");
    let summary = fs::read_to_string(res.join("summary.csv")).unwrap();
    assert_eq!(summary, text);
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "scenario,estimator,n_datasets,mean_bias,coverage95,mean_ci_width,n_failed"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("a,NS,"));
    assert!(lines[4].starts_with("b,S,"));
    for s in ["a", "b"] {
        let est = fs::read_to_string(res.join(format!("estimates_{s}.csv"))).unwrap();
        assert_eq!(est.lines().count(), 1 + 2 * 2);
    }
}

fn write_grouped(path: &Path) {
    let mut s = String::from("region,group,y,a\n");
    for i in 0..60usize {
        let g = i / 4;
        let a = ((i * 7 + g) % 3 == 0) as u8;
        let y = 1.0 + 0.8 * a as f64 + 0.1 * ((i * 37) % 11) as f64;
        s.push_str(&format!("{i},{g},{y},{a}\n"));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn interference_reports_coefficients_and_policy_effects() {
    let dir = tempfile::tempdir().unwrap();
    write_grouped(&dir.path().join("g.csv"));
    let mut args = vec![
        "interference",
        "--data",
        "g.csv",
        "--mode",
        "partial",
        "--out",
        "int",
    ];
    args.extend(SHORT);
    args.extend(["--draws", "2000", "--policies", "0.3,0.6"]);
    let text = stdout(&run(&args, dir.path()));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "effect,policy,value,mc_se,method");
    assert_eq!(lines.len(), 1 + 2 * 4);
    assert!(lines.iter().skip(1).all(|l| l.ends_with("monte-carlo")));
    let coef = fs::read_to_string(dir.path().join("int/coefficients.csv")).unwrap();
    assert!(coef.starts_with("parameter,estimate,lo95,hi95\ndirect,"));

    let o = run(
        &["interference", "--data", "g.csv", "--mode", "network"],
        dir.path(),
    );
    assert!(!o.status.success());
}

#[test]
fn spacetime_did_and_geostat_discontinuity() {
    let dir = tempfile::tempdir().unwrap();
    let mut panel = String::from("region,t,y,a\n");
    for i in 0..30usize {
        let a = (i % 3 == 0) as u8;
        let u = ((i * 13) % 7) as f64 * 0.3;
        for t in 1..=2usize {
            let y =
                u + 0.5 * t as f64 + 1.5 * (t - 1) as f64 * a as f64 + 0.05 * ((i + t) % 4) as f64;
            panel.push_str(&format!("{i},{t},{y},{a}\n"));
        }
    }
    fs::write(dir.path().join("p.csv"), panel).unwrap();
    let mut args = vec!["spacetime", "--data", "p.csv", "--method", "did"];
    args.extend(SHORT);
    let text = stdout(&run(&args, dir.path()));
    let beta3 = text.lines().find(|l| l.starts_with("beta3,")).unwrap();
    let est: f64 = beta3.split(',').nth(1).unwrap().parse().unwrap();
    assert!((est - 1.5).abs() < 0.1, "{beta3}");

    let mut pts = String::from("s1,s2,y,a\n");
    for i in 0..60usize {
        let s1 = (i % 10) as f64 / 9.0;
        let s2 = (i / 10) as f64 / 5.0;
        let y = 2.0 + if s1 >= 0.5 { 1.0 } else { 0.0 } + 0.2 * s2 + 0.01 * ((i * 7) % 5) as f64;
        pts.push_str(&format!("{s1},{s2},{y},0\n"));
    }
    fs::write(dir.path().join("pts.csv"), pts).unwrap();
    let text = stdout(&run(
        &[
            "geostat",
            "--data",
            "pts.csv",
            "--method",
            "discontinuity",
            "--half-plane",
            "1,0,0.5",
        ],
        dir.path(),
    ));
    assert!(text.starts_with("parameter,estimate,lo95,hi95\nbeta,"));
    let o = run(
        &[
            "geostat",
            "--data",
            "pts.csv",
            "--method",
            "discontinuity",
            "--half-plane",
            "1,0,5",
        ],
        dir.path(),
    );
    assert!(!o.status.success());

    let o = run(
        &[
            "geostat",
            "--data",
            "p.csv",
            "--method",
            "krige",
            "--spacing",
            "0.5",
        ],
        dir.path(),
    );
    assert!(!o.status.success(), "panel file has no coordinates");

    let mut field = String::from("s1,s2,y,a\n");
    for i in 0..25usize {
        let (s1, s2) = ((i % 5) as f64 / 4.0, (i / 5) as f64 / 4.0);
        field.push_str(&format!("{s1},{s2},0,{}\n", (3.0 * s1).sin() + s2 * s2));
    }
    fs::write(dir.path().join("f.csv"), field).unwrap();
    let text = stdout(&run(
        &[
            "geostat",
            "--data",
            "f.csv",
            "--method",
            "krige",
            "--spacing",
            "0.125",
        ],
        dir.path(),
    ));
    assert!(text.starts_with("s1,s2,value\n"));
    assert_eq!(text.lines().count(), 1 + 81);
}
