use std::process::{Command, Output};

fn fbmxcov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbmxcov"))
        .args(args)
        .env_remove("FBMXCOV_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// The data rows of a CSV artifact, split into fields.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn config_line(text: &str) -> &str {
    text.lines()
        .find_map(|l| l.strip_prefix("# config "))
        .expect("embedded config")
}

#[test]
fn covar_constant_and_identity() {
    let o = fbmxcov(&["covar", "--hurst", "0.75", "--t", "1", "--s", "1", "-F", "const:1", "-G", "const:1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("tau_or_t,sigma_or_s,value,isometry_term,trace_term,est_rel_error\n"));
    let r = rows(&text);
    assert_eq!(r.len(), 1);
    assert!((r[0][2].parse::<f64>().unwrap() - 1.0).abs() < 1e-6);

    let o = fbmxcov(&["covar", "--hurst", "0.75", "--t", "2", "--s", "1", "-F", "id", "-G", "id"]);
    assert!(o.status.success());
    let v: f64 = rows(&stdout(&o))[0][2].parse().unwrap();
    assert!((v - 1.0).abs() < 1e-4, "{v}");
}

#[test]
fn embedded_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let o = fbmxcov(&[
        "covar", "--hurst", "0.7", "--t", "1.5", "--s", "0.5", "-F", "sum:(tanh)+(steps:0:2)", "-G", "sin",
        "-o", first.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&first).unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, config_line(&text)).unwrap();
    let second = dir.path().join("second.csv");
    let o = fbmxcov(&["--config", cfg_path.to_str().unwrap(), "-o", second.to_str().unwrap()]);
    assert!(o.status.success());
    let again = std::fs::read_to_string(&second).unwrap();
    assert_eq!(rows(&again), rows(&text));
    let names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 3, "no temporary files left behind: {names:?}");
}

#[test]
fn json_output_mirrors_result_fields() {
    let o = fbmxcov(&["covar", "-F", "sgn", "-G", "sgn", "--hurst", "0.75", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config"]["f_spec"], "sgn");
    let r = &v["results"][0];
    for key in ["value", "isometry_term", "trace_term", "est_rel_error"] {
        assert!(r[key].is_number(), "{key}");
    }
    let total = r["isometry_term"].as_f64().unwrap() + r["trace_term"].as_f64().unwrap();
    assert!((total - r["value"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(fbmxcov(&[]).status.code(), Some(1));
    assert_eq!(fbmxcov(&["covar", "--hurst", "0.4"]).status.code(), Some(1));
    assert_eq!(fbmxcov(&["covar", "-F", "sgn("]).status.code(), Some(1));
    assert_eq!(fbmxcov(&["covar", "--bogus"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"command":"covar","hurst":0.7,"colour":"red"}"#).unwrap();
    let o = fbmxcov(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn non_convergence_exits_with_two_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = fbmxcov(&[
        "covar", "-F", "sgn", "-G", "tanh", "--hurst", "0.6", "--cells", "8", "--target-rel-error", "1e-15",
        "-o", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("# converged false"));
    let r = rows(&text);
    assert!(r[0][2].parse::<f64>().unwrap().is_finite());
    assert_eq!(r[0][3], "");
}

#[test]
fn surface_rows() {
    let o = fbmxcov(&["surface", "-F", "const:1", "-G", "const:1", "--hurst", "0.6", "--t-nodes", "1,2", "--s-nodes", "0.5,1,1.5"]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 6);
    for row in &r {
        let (t, s, v): (f64, f64, f64) = (row[0].parse().unwrap(), row[1].parse().unwrap(), row[2].parse().unwrap());
        let rh = 0.5 * (t.powf(1.2) + s.powf(1.2) - (t - s).abs().powf(1.2));
        assert!((v - rh).abs() < 1e-6 * rh);
    }
}

fn mc_rows(extra: &[&str]) -> (Output, Vec<Vec<String>>) {
    let mut args = vec!["mc", "-F", "id", "-G", "id", "--n", "64", "--n-paths", "20000", "--seed", "3"];
    args.extend_from_slice(extra);
    let o = fbmxcov(&args);
    let r = rows(&stdout(&o));
    (o, r)
}

#[test]
fn mc_compare_mode_and_thread_independence() {
    let (o, r) = mc_rows(&["--compare", "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(r.len(), 1);
    let z: f64 = r[0][7].parse().unwrap();
    assert!(z <= 3.0, "{r:?}");
    let (_, r4) = mc_rows(&["--compare", "--threads", "4"]);
    assert_eq!(r, r4);
}

#[test]
fn mc_with_jumps_runs_the_ladder() {
    let o = fbmxcov(&["mc", "-F", "sgn", "-G", "sgn", "--n", "64", "--n-paths", "2000", "--levels", "4,16"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let r = rows(&text);
    assert_eq!(r.iter().map(|x| x[2].as_str()).collect::<Vec<_>>(), ["4", "16", "extrapolated"]);
    assert!(text.contains("mollified ladder"));
}

#[test]
fn ensemble_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_fbmxcov"))
            .args(["mc", "-F", "sin", "-G", "tanh", "--n", "32", "--n-paths", "1000"])
            .env("FBMXCOV_CACHE_DIR", dir.path())
            .output()
            .unwrap()
    };
    let a = run();
    assert!(a.status.success());
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), 1);
    let bytes = std::fs::read(files[0].as_ref().unwrap().path()).unwrap();
    assert_eq!(&bytes[..4], b"FBME");
    let b = run();
    assert_eq!(rows(&stdout(&a)), rows(&stdout(&b)));
    let fresh = fbmxcov(&["mc", "-F", "sin", "-G", "tanh", "--n", "32", "--n-paths", "1000"]);
    assert_eq!(rows(&stdout(&fresh)), rows(&stdout(&a)));
}

#[test]
fn analysis_commands() {
    let o = fbmxcov(&["notfbm", "-F", "sgn", "-G", "sgn", "--hurst", "0.75", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["results"]["verdict"], "not_fbm");

    let o = fbmxcov(&["notfbm", "--probe", "1,0.5,1.5,1", "--probe", "2,1,3,2"]);
    assert!(o.status.success());
    assert!(rows(&stdout(&o)).iter().all(|r| r[9] == "consistent_with_fbm"));

    let o = fbmxcov(&["limit", "-F", "const:1", "-G", "const:1", "--t", "2", "--s", "1"]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 3);
    let devs: Vec<f64> = r.iter().map(|x| x[6].parse().unwrap()).collect();
    assert!(devs[0] > devs[1] && devs[1] > devs[2]);

    let o = fbmxcov(&["trace-check", "-F", "sin", "-G", "tanh", "--hurst", "0.7", "--trace-cells", "16,32", "--trace-kernels", "5"]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 4);
    assert!(r.iter().filter(|x| x[0] == "oracle").all(|x| x[2].parse::<f64>().unwrap() < 1e-8));

    let o = fbmxcov(&["finiteness", "--hurst", "0.75"]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    let v: f64 = r[0][2].parse().unwrap();
    assert!((v - 7.2945).abs() < 1e-3, "{v}");
}
