//! End-to-end tests driving the compiled binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn splicefit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splicefit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary must run")
}

fn write_model(dir: &Path) -> std::path::PathBuf {
    use splicefit::model::{MeParams, SplicedModel, UpperBound};
    let body = MeParams::from_alphas(vec![0.3, 0.7], vec![1, 4], 1.0, 0.0, 6.0).unwrap();
    let model = SplicedModel::new(0.9, body, 0.5, 0.0, 6.0, UpperBound::Infinite).unwrap();
    let path = dir.join("model.json");
    fs::write(&path, model.to_json()).unwrap();
    path
}

#[test]
fn unknown_subcommand_exits_1_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = splicefit(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.to_lowercase().contains("usage"), "stderr: {msg}");
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = splicefit(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("fit"));
}

#[test]
fn missing_data_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = splicefit(
        &["fit", "--data", "nope.csv", "--tl", "0", "--t", "5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn t_below_tl_exits_2_with_message() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("obs.csv"), "lower,upper\n1,1\n").unwrap();
    let out = splicefit(
        &["fit", "--data", "obs.csv", "--tl", "5", "--t", "3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("must exceed"));
}

#[test]
fn simulate_is_deterministic_and_parseable() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let model_s = model.to_str().unwrap();
    let a = splicefit(
        &["simulate", "--model", model_s, "-n", "50", "--seed", "7"],
        dir.path(),
    );
    assert_eq!(
        a.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&a.stderr)
    );
    let b = splicefit(
        &["simulate", "--model", model_s, "-n", "50", "--seed", "7"],
        dir.path(),
    );
    assert_eq!(
        a.stdout, b.stdout,
        "same seed must give byte-identical output"
    );
    let c = splicefit(
        &["simulate", "--model", model_s, "-n", "50", "--seed", "8"],
        dir.path(),
    );
    assert_ne!(a.stdout, c.stdout);

    // n = 0 still produces a valid header
    let empty = splicefit(&["simulate", "--model", model_s, "-n", "0"], dir.path());
    assert_eq!(String::from_utf8_lossy(&empty.stdout), "lower,upper\n");

    // output parses back, censoring schemes included
    let censored = splicefit(
        &[
            "simulate",
            "--model",
            model_s,
            "-n",
            "200",
            "--seed",
            "3",
            "--right-censor-mean",
            "4.0",
            "--interval-widen",
            "0.3,0.5",
            "--out",
            "obs.csv",
        ],
        dir.path(),
    );
    assert_eq!(censored.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("obs.csv")).unwrap();
    let obs = splicefit::data::parse_observations(text.as_bytes()).unwrap();
    assert_eq!(obs.len(), 200);
    assert!(obs.iter().any(|o| o.is_censored()));
}

#[test]
fn fit_round_trip_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let model_s = model.to_str().unwrap().to_string();
    let sim = splicefit(
        &[
            "simulate", "--model", &model_s, "-n", "3000", "--seed", "11", "--out", "obs.csv",
        ],
        dir.path(),
    );
    assert_eq!(sim.status.code(), Some(0));
    let out = splicefit(
        &[
            "fit",
            "--data",
            "obs.csv",
            "--tl",
            "0",
            "--t",
            "6",
            "--fixed-shapes",
            "1,4",
            "--spread",
            "4",
            "--em-tol",
            "1e-7",
            "--out-model",
            "fitted.json",
            "--out-report",
            "report.json",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fitted: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fitted.json")).unwrap()).unwrap();
    let theta = fitted["theta"].as_f64().unwrap();
    let gamma = fitted["gamma"].as_f64().unwrap();
    let pi = fitted["pi"].as_f64().unwrap();
    assert!((theta - 1.0).abs() < 0.1, "theta {theta}");
    assert!((gamma - 0.5).abs() < 0.1, "gamma {gamma}");
    assert!((pi - 0.9).abs() < 0.03, "pi {pi}");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["converged"].as_bool().unwrap());
    assert_eq!(
        report["case_counts"]["i"].as_u64().unwrap()
            + report["case_counts"]["ii"].as_u64().unwrap(),
        3000
    );
    assert!(report["loglik_trace"].as_array().unwrap().len() >= 2);
    assert_eq!(report["df"].as_u64().unwrap(), 5);
}

#[test]
fn fit_with_search_runs_on_small_data() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let model_s = model.to_str().unwrap().to_string();
    splicefit(
        &[
            "simulate", "--model", &model_s, "-n", "400", "--seed", "2", "--out", "obs.csv",
        ],
        dir.path(),
    );
    let out = splicefit(
        &[
            "fit",
            "--data",
            "obs.csv",
            "--tl",
            "0",
            "--t",
            "6",
            "--m-init",
            "3",
            "--spread",
            "1:3",
            "--ic",
            "bic",
            "--threads",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("model.json").exists());
    assert!(dir.path().join("report.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("fitted M="));
}

#[test]
fn thread_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let model_s = model.to_str().unwrap().to_string();
    splicefit(
        &[
            "simulate", "--model", &model_s, "-n", "200", "--seed", "1", "--out", "obs.csv",
        ],
        dir.path(),
    );
    let out = Command::new(env!("CARGO_BIN_EXE_splicefit"))
        .args([
            "fit", "--data", "obs.csv", "--tl", "0", "--t", "6", "--m-init", "2", "--spread", "1:2",
        ])
        .env("SPLICE_EM_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn risk_outputs_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let model_s = model.to_str().unwrap().to_string();
    let out = splicefit(
        &["risk", "--model", &model_s, "--retentions", "1,5,10,50"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("R,premium"));
    let premiums: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(premiums.len(), 4);
    assert!(
        premiums.windows(2).all(|w| w[1] <= w[0]),
        "premiums must fall in R"
    );

    let out = splicefit(
        &[
            "risk", "--model", &model_s, "--var", "0.995", "--tvar", "0.995",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let v = doc["var_0.995"].as_f64().unwrap();
    let tv = doc["tvar_0.995"].as_f64().unwrap();
    assert!(
        tv > v && v > 6.0,
        "VaR at 99.5% must sit in the Pareto tail"
    );

    // nothing requested is a usage-style data error
    let out = splicefit(&["risk", "--model", &model_s], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diagnose_writes_plots_and_gof() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let model_s = model.to_str().unwrap().to_string();
    splicefit(
        &[
            "simulate", "--model", &model_s, "-n", "300", "--seed", "5", "--out", "obs.csv",
        ],
        dir.path(),
    );
    let out = splicefit(
        &[
            "diagnose",
            "--model",
            &model_s,
            "--data",
            "obs.csv",
            "--plots",
            "plots",
            "--bootstrap",
            "60",
            "--seed",
            "9",
            "--out",
            "gof.json",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["survival.csv", "qq.csv", "pp.csv", "pp_minuslog.csv"] {
        assert!(
            dir.path().join("plots").join(name).exists(),
            "{name} missing"
        );
    }
    let gof: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gof.json")).unwrap()).unwrap();
    assert!(gof["ks_stat"].as_f64().unwrap() > 0.0);
    assert!((0.0..=1.0).contains(&gof["ks_pvalue"].as_f64().unwrap()));
    assert_eq!(gof["n_bootstrap"].as_u64().unwrap(), 60);

    // identical seeds give identical p-values
    let again = splicefit(
        &[
            "diagnose",
            "--model",
            &model_s,
            "--data",
            "obs.csv",
            "--bootstrap",
            "60",
            "--seed",
            "9",
        ],
        dir.path(),
    );
    let doc: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(doc["ks_pvalue"], gof["ks_pvalue"]);
    assert_eq!(doc["ad_pvalue"], gof["ad_pvalue"]);
}

#[test]
fn evt_meplot_and_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("lower,upper\n");
    for x in [1.0, 1.3, 1.9, 2.8, 4.1, 6.3, 9.9, 16.0] {
        csv.push_str(&format!("{x},{x}\n"));
    }
    fs::write(dir.path().join("obs.csv"), &csv).unwrap();
    let out = splicefit(&["evt", "meplot", "--data", "obs.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("k,v,e_hat\n"));
    assert_eq!(text.lines().count(), 8); // header + n−1 points

    // censored data requires the Turnbull mode
    fs::write(
        dir.path().join("cens.csv"),
        "lower,upper\n1,2\n1.5,1.5\n2,inf\n3,3\n4,4\n",
    )
    .unwrap();
    let out = splicefit(&["evt", "meplot", "--data", "cens.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = splicefit(
        &["evt", "meplot", "--data", "cens.csv", "--turnbull"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));

    // endpoint estimation on a sample clustered near its maximum
    let mut csv = String::from("lower,upper\n");
    for x in [1.0, 1.01, 1.02, 1.03, 2.0] {
        csv.push_str(&format!("{x},{x}\n"));
    }
    fs::write(dir.path().join("trunc.csv"), &csv).unwrap();
    let out = splicefit(
        &["evt", "endpoint", "--data", "trunc.csv", "--k", "4"],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["gamma_hat"].as_f64().unwrap() > 0.0);
    assert!(doc["T_hat"].as_f64().unwrap() >= 2.0);
}
