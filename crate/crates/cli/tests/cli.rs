use std::path::Path;
use std::process::{Command, Output};

const TUMOR: &str = "id,days,status,age,sex\n1,1192,0,67,m\n2,33,1,69,m\n3,579,0,67,f\n4,308,1,79,m\n";

fn pamm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pamm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = pamm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn as_ped_tumor_golden() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("t.csv"), TUMOR).unwrap();
    ok(
        d.path(),
        &["as-ped", "--data", "t.csv", "--formula", "Surv(days, status) ~ .", "--cut", "0:1000:200", "--out", "b"],
    );
    let ped = read(d.path(), "b/ped.csv");
    let lines: Vec<&str> = ped.lines().collect();
    assert_eq!(lines.len(), 12);
    assert_eq!(lines[0], "id,tstart,tend,intlen,interval,offset,ped_status,age,sex");
    let key: Vec<String> = lines[1..]
        .iter()
        .map(|l| {
            // the quoted interval label adds one comma
            let c: Vec<&str> = l.split(',').collect();
            format!("{}:{}-{}:{}", c[0], c[1], c[2], c[7])
        })
        .collect();
    assert_eq!(
        key,
        [
            "1:0-200:0", "1:200-400:0", "1:400-600:0", "1:600-800:0", "1:800-1000:0", "2:0-200:1", "3:0-200:0",
            "3:200-400:0", "3:400-600:0", "4:0-200:0", "4:200-400:1",
        ]
    );
    assert!(ped.contains("\r\n"));
    let info = ok(d.path(), &["info", "b"]);
    let text = String::from_utf8(info.stdout).unwrap();
    assert!(text.contains("rows: 11"));
    assert!(text.contains("intervals: 5"));
    assert!(text.contains("covariate: sex (categorical: m, f)"));
}

#[test]
fn user_errors_exit_one_and_name_the_culprit() {
    let d = tempfile::tempdir().unwrap();
    let out = pamm(d.path(), &["fit", "--bogus-flag", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus-flag"));

    let out = pamm(d.path(), &["info", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a PED bundle"));

    std::fs::write(d.path().join("t.csv"), "id,days,age\n1,3,4\n").unwrap();
    let out = pamm(
        d.path(),
        &["as-ped", "--data", "t.csv", "--formula", "Surv(days, status) ~ .", "--out", "b"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("status"));

    let out = pamm(d.path(), &["lag-lead", "--cut", "0:4:1", "--tz-grid", "0:3:1", "--ll", "window:1", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--ll"));
}

#[test]
fn help_and_version_exit_zero() {
    let d = tempfile::tempdir().unwrap();
    let v = ok(d.path(), &["--version"]);
    let text = String::from_utf8(v.stdout).unwrap();
    assert!(text.contains("model format 1") && text.contains("bundle format 1"));
    ok(d.path(), &["predict", "--help"]);
}

const HAZARD: &str = "~ -3.5 + f0(t) - 0.5*x1 + sqrt(x2)";

fn simulate(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec![
        "simulate", "--hazard", HAZARD, "--n", "200", "--covariate", "x1=uniform:-3,3", "--covariate",
        "x2=uniform:0,6", "--cut", "0:10:0.1", "--seed", "11", "--out", out,
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn simulate_is_deterministic_and_thread_invariant() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "a.csv", &["--threads", "1"]);
    simulate(d.path(), "b.csv", &["--threads", "4"]);
    simulate(d.path(), "c.csv", &[]);
    assert_eq!(read(d.path(), "a.csv"), read(d.path(), "b.csv"));
    assert_eq!(read(d.path(), "a.csv"), read(d.path(), "c.csv"));
    assert!(read(d.path(), "a.csv").starts_with("id,time,status,x1,x2\r\n"));
}

/// simulate, as-ped, fit and predict twice with different thread counts.
#[test]
fn pipeline_outputs_are_byte_identical_across_thread_counts() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    simulate(p, "s.csv", &[]);
    std::fs::write(p.join("nd.json"), r#"{"tend": [1, 2, 3, 4], "x1": [0, 1]}"#).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let b = format!("b{threads}");
        let m = format!("m{threads}.json");
        let o = format!("p{threads}.csv");
        let c = format!("c{threads}.csv");
        ok(p, &["as-ped", "--data", "s.csv", "--formula", "Surv(time, status) ~ .", "--cut", "0:10:0.5", "--out", &b, "--threads", threads]);
        ok(p, &["fit", "--ped", &b, "--model", "ped_status ~ s(tend) + x1 + s(x2)", "--out", &m, "--threads", threads]);
        ok(p, &[
            "predict", "--model", &m, "--ped", &b, "--newdata", "nd.json", "--add", "hazard,cumu,surv", "--seed", "5",
            "--out", &o, "--threads", threads,
        ]);
        ok(p, &["cumu-coef", "--model", &m, "--ped", &b, "--term", "x1", "--seed", "5", "--out", &c, "--threads", threads]);
        outputs.push([read(p, &format!("{b}/ped.csv")), read(p, &m), read(p, &o), read(p, &c)]);
    }
    assert_eq!(outputs[0], outputs[1]);
    let pred = &outputs[0][2];
    assert_eq!(pred.lines().count(), 9);
    assert!(pred.lines().next().unwrap().ends_with("surv_prob,surv_lower,surv_upper"));
}

#[test]
fn predict_requires_seed_for_stochastic_outputs() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    simulate(p, "s.csv", &[]);
    ok(p, &["as-ped", "--data", "s.csv", "--formula", "Surv(time, status) ~ .", "--cut", "0:10:1", "--out", "b"]);
    ok(p, &["fit", "--ped", "b", "--model", "ped_status ~ s(tend) + x1", "--lambda", "fixed:1", "--out", "m.json"]);
    let out = pamm(p, &["predict", "--model", "m.json", "--ped", "b", "--add", "surv", "--out", "o.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    ok(p, &["predict", "--model", "m.json", "--ped", "b", "--out", "o.csv"]);
    assert_eq!(read(p, "o.csv").lines().count(), 11);
    let info = String::from_utf8(ok(p, &["info", "m.json"]).stdout).unwrap();
    assert!(info.contains("formula: ped_status ~ s(tend"));
}

#[test]
fn config_fills_missing_flags() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("t.csv"), TUMOR).unwrap();
    std::fs::write(
        p.join("cfg.json"),
        r#"{"formula": "Surv(days, status) ~ age", "cut": "0:1000:500", "out": "fromcfg"}"#,
    )
    .unwrap();
    ok(p, &["as-ped", "--config", "cfg.json", "--data", "t.csv", "--out", "explicit"]);
    assert!(p.join("explicit/meta.json").exists());
    assert!(!p.join("fromcfg").exists());
    let ped = read(p, "explicit/ped.csv");
    assert!(ped.starts_with("id,tstart,tend,intlen,interval,offset,ped_status,age\r\n"));
    assert_eq!(ped.lines().count(), 1 + 2 + 1 + 2 + 1);
}

#[test]
fn exposure_pipeline_and_lag_lead_table() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &[
        "simulate", "--hazard", "~ -3.5 + f0(t) | fcumu(t, tz, z.tz, f_xyz=f_wce, ll_fun=window(0,12))", "--n", "100",
        "--cut", "0:40:1", "--tdc-grid", "-5:30:1", "--seed", "4", "--out", "w.csv", "--tdc-out", "wz.csv",
    ]);
    assert!(read(p, "wz.csv").starts_with("id,tz,z.tz\r\n"));
    assert_eq!(read(p, "wz.csv").lines().count(), 1 + 100 * 36);
    ok(p, &[
        "as-ped", "--data", "w.csv", "--tdc", "wz.csv", "--formula",
        r#"Surv(time, status) ~ . | cumulative(latency(tz), z.tz, tz_var = "tz", ll_fun = window(0, 12))"#, "--cut",
        "0:40:1", "--out", "wb",
    ]);
    ok(p, &["lag-lead", "--ped", "wb", "--out", "ll.csv"]);
    let ll = read(p, "ll.csv");
    assert_eq!(ll.lines().count(), 1 + 40 * 36);
    assert!(ll.starts_with("tz_var,interval,tstart,tend,tz,weight\r\n"));
    let out = pamm(p, &["simulate", "--hazard", "~ -3 | fcumu(t, tz, z.tz, f_xyz=f_wce)", "--n", "5", "--cut", "0:5:1", "--seed", "1", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--tdc-grid"));
}
