use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vrf_rls::analysis::geometric_ratio_limit;
use vrf_rls::io::{fmt_f64, parse_scenario, read_trace};
use vrf_rls::sim::run_scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vrf-rls"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn column(csv_text: &str, name: &str) -> Vec<String> {
    let mut lines = csv_text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

fn floats(col: &[String]) -> Vec<f64> {
    col.iter().map(|v| v.parse().unwrap()).collect()
}

fn run_to(dir: &Path, scenario: &str) -> (Output, String) {
    let out = dir.join(scenario.replace(".json", ".csv"));
    let o = exec(&[
        "run",
        "--scenario",
        bundled(scenario).to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&out).unwrap_or_default();
    (o, text)
}

#[test]
fn bundled_scenarios_run() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "vrf_noiseless.json",
        "crf_noiseless.json",
        "vrf_noisy.json",
        "crf_noisy.json",
    ] {
        let (o, text) = run_to(dir.path(), name);
        assert_eq!(code(&o), 0, "{name}: {}", stderr(&o));
        assert!(stdout(&o).contains("final error_norm"), "{name}");
        assert!(stdout(&o).contains("change at k=100"), "{name}");
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,theta_1,theta_2,theta_3,theta_4,beta,rho,residual_norm,error_norm,y,u"
        );
        assert_eq!(lines.clone().count(), 250);
        assert!(lines.all(|l| l.split(',').count() == 4 + 7));
    }
}

#[test]
fn vrf_reconverges_where_crf_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let (o, vrf) = run_to(dir.path(), "vrf_noiseless.json");
    assert!(stdout(&o).contains("reconverged"));
    let (_, crf) = run_to(dir.path(), "crf_noiseless.json");
    let ev = floats(&column(&vrf, "error_norm"));
    let ec = floats(&column(&crf, "error_norm"));
    assert!(ev[99] < 1e-3);
    assert!(ec[200] >= 5.0 * ev[200]);
}

#[test]
fn trace_round_trips_at_the_string_level() {
    let dir = tempfile::tempdir().unwrap();
    let (_, text) = run_to(dir.path(), "vrf_noisy.json");
    let scenario =
        parse_scenario(&std::fs::read_to_string(bundled("vrf_noisy.json")).unwrap()).unwrap();
    let direct = run_scenario(&scenario).unwrap();
    let reread = read_trace(text.as_bytes()).unwrap();
    assert_eq!(reread, direct);
    let betas = column(&text, "beta");
    let rhos = column(&text, "rho");
    let mut rho = 1.0;
    for (i, r) in reread.records.iter().enumerate() {
        assert_eq!(fmt_f64(r.beta), betas[i]);
        rho *= r.beta;
        assert_eq!(fmt_f64(rho), rhos[i]);
    }
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let s = bundled("vrf_noisy.json");
    for (out, seed) in [(&a, "0"), (&b, "9")] {
        let o = exec(&[
            "run",
            "--scenario",
            s.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed-override",
            seed,
        ]);
        assert_eq!(code(&o), 0);
    }
    let (ta, tb) = (
        std::fs::read_to_string(a).unwrap(),
        std::fs::read_to_string(b).unwrap(),
    );
    assert_ne!(column(&ta, "u"), column(&tb, "u"));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn malformed_scenario_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let good = std::fs::read_to_string(bundled("vrf_noiseless.json")).unwrap();
    let cases = [
        ("truncated.json", good[..good.len() / 2].to_string()),
        (
            "unknown.json",
            good.replacen("\"horizon\"", "\"horizn\": 1, \"horizon\"", 1),
        ),
        (
            "indefinite.json",
            good.replace("\"P0_diag\": [1000", "\"P0_diag\": [-1"),
        ),
    ];
    for (name, text) in cases {
        assert_ne!(text, good, "{name} fixture did not change");
        let scenario = write(dir.path(), name, &text);
        let out = dir.path().join(format!("{name}.csv"));
        let o = exec(&[
            "run",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 2, "{name}: {}", stderr(&o));
        assert!(!out.exists(), "{name}");
    }
    let truncated = exec(&[
        "run",
        "--scenario",
        dir.path().join("truncated.json").to_str().unwrap(),
        "--out",
        "x.csv",
    ]);
    assert!(
        stderr(&truncated).contains("line"),
        "{}",
        stderr(&truncated)
    );
}

#[test]
fn missing_scenario_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    let o = exec(&[
        "run",
        "--scenario",
        dir.path().join("nope.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

fn record(betas: &[f64], phi: impl Fn(usize) -> Vec<f64>) -> String {
    let n = phi(0).len();
    let mut s = String::from("k,beta");
    for i in 1..=n {
        s.push_str(&format!(",phi_{i}"));
    }
    s.push('\n');
    for (k, b) in betas.iter().enumerate() {
        s.push_str(&format!("{k},{b}"));
        for v in phi(k) {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

fn analyze(dir: &Path, input: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join("analysis.csv");
    let mut args = vec![
        "analyze",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    (exec(&args), out)
}

fn cycling(k: usize) -> Vec<f64> {
    [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]][k % 3].to_vec()
}

#[test]
fn analyze_unit_record() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "unit.csv", &record(&[1.0; 300], cycling));
    let (o, out) = analyze(dir.path(), &input, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("persistent with N = 1"));
    assert!(stdout(&o).contains(": holds"));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("j,s_l,s_u,q_l,q_u,upper,lower\n"));
    let upper = floats(&column(&text, "upper"));
    assert!(upper[1..].windows(2).all(|w| w[1] < w[0]));
    for (j, u) in upper.iter().enumerate().skip(1) {
        let j = j as f64;
        assert!((u - (j + 1.0) / (j * j)).abs() < 1e-12 * u);
    }
    let profile = std::fs::read_to_string(dir.path().join("analysis.profile.csv")).unwrap();
    assert!(profile.starts_with("window,alpha,beta_ub,persistent\n1,"));
}

#[test]
fn analyze_geometric_record() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "geo.csv", &record(&[1.5; 400], cycling));
    let (o, out) = analyze(dir.path(), &input, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains(": does not hold"));
    let lower = floats(&column(&std::fs::read_to_string(out).unwrap(), "lower"));
    let limit = geometric_ratio_limit(1.5, 1).unwrap();
    assert!((lower.last().unwrap() - limit).abs() < 1e-9 * limit);
}

#[test]
fn analyze_reports_non_persistent_record() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "zero.csv",
        &record(&[1.0; 50], |_| vec![0.0, 0.0]),
    );
    let (o, _) = analyze(dir.path(), &input, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("not persistent up to N_max"));
    let profile = std::fs::read_to_string(dir.path().join("analysis.profile.csv")).unwrap();
    assert!(profile.ends_with("8,,,false\n"));
}

#[test]
fn analyze_short_and_malformed_records() {
    let dir = tempfile::tempdir().unwrap();
    let short = write(dir.path(), "short.csv", &record(&[1.0; 9], cycling));
    let (o, out) = analyze(dir.path(), &short, &[]);
    assert_eq!(code(&o), 4);
    assert!(!out.exists());
    let (o, _) = analyze(dir.path(), &short, &["--nmax", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let bad = write(dir.path(), "bad.csv", "k,beta,phi_1\n0,1,one\n");
    let (o, _) = analyze(dir.path(), &bad, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn analyze_accepts_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (_, text) = run_to(dir.path(), "vrf_noiseless.json");
    let trace = write(dir.path(), "trace.csv", &text);
    let (o, out) = analyze(dir.path(), &trace, &["--nmax", "8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("persistent with N ="));
    assert!(out.exists());
}

fn montecarlo(dir: &Path, scenario: &Path, runs: &str, checkpoints: &str) -> (Output, PathBuf) {
    let out = dir.join("mc.csv");
    let o = exec(&[
        "montecarlo",
        "--scenario",
        scenario.to_str().unwrap(),
        "--runs",
        runs,
        "--checkpoints",
        checkpoints,
        "--out",
        out.to_str().unwrap(),
    ]);
    (o, out)
}

#[test]
fn montecarlo_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = montecarlo(dir.path(), &bundled("mc_unit.json"), "50", "100");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("insufficient runs"));
    assert!(!out.exists());

    let (o, out) = montecarlo(dir.path(), &bundled("vrf_noisy.json"), "100", "100");
    assert_eq!(code(&o), 5);
    assert!(!out.exists());

    let noiseless = std::fs::read_to_string(bundled("mc_unit.json"))
        .unwrap()
        .replace("\"variance\": 0.05", "\"variance\": 0.0");
    let s = write(dir.path(), "noiseless.json", &noiseless);
    let (o, _) = montecarlo(dir.path(), &s, "100", "100");
    assert_eq!(code(&o), 2);
}

#[test]
fn montecarlo_writes_bracketed_table() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = montecarlo(dir.path(), &bundled("mc_unit.json"), "100", "400,100");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("k,lambda_min,lambda_max,se_min,se_max,bound_lower,bound_upper\n"));
    assert_eq!(column(&text, "k"), vec!["100", "400"]);
    let lmax = floats(&column(&text, "lambda_max"));
    let upper = floats(&column(&text, "bound_upper"));
    let lower = floats(&column(&text, "bound_lower"));
    let lmin = floats(&column(&text, "lambda_min"));
    assert!(lmax[1] < lmax[0]);
    for i in 0..2 {
        assert!(lower[i] <= lmin[i] && lmax[i] <= upper[i]);
    }
}
