use std::path::Path;
use std::process::Command;

use serde_json::json;
use udeuq_cli::{cmd_fit, cmd_generate, cmd_report, load_dataset, CliError, Manifest, RunConfig};
use udeuq_core::ensemble::sample_start_points;
use udeuq_core::model::NetInit;
use udeuq_core::vi::MeanFieldPosterior;

fn config(out: &Path, scenario: &str, noise: serde_json::Value, method: serde_json::Value) -> RunConfig {
    let v = json!({
        "scenario": scenario,
        "noise": noise,
        "seed": 3,
        "method": method,
        "output_dir": out,
        "report": { "grid_points": 25, "noise_draws": 5, "vi_draws": 40 }
    });
    RunConfig::from_json(&v.to_string()).unwrap()
}

fn quick_ensemble() -> serde_json::Value {
    json!({ "ensemble": { "m": 3, "fit": { "adam_epochs": 40, "qn_max_iters": 10 } } })
}

fn quick_vi(steps: usize, warm: bool) -> serde_json::Value {
    let ws = if warm {
        json!({ "fit": { "adam_epochs": 20, "qn_max_iters": 5 } })
    } else {
        serde_json::Value::Null
    };
    json!({ "vi": { "steps": steps, "warm_start": ws } })
}

fn gaussian(sigma: f64) -> serde_json::Value {
    json!({ "kind": "gaussian", "sigma": sigma })
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn generate_is_idempotent_with_catalog_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "quadratic", gaussian(0.01), quick_ensemble());
    let d = cmd_generate(&cfg).unwrap();
    let first = read(&d.join("dataset.csv"));
    assert_eq!(first.lines().count(), 1 + 12);
    cmd_generate(&cfg).unwrap();
    assert_eq!(read(&d.join("dataset.csv")), first);
    assert_eq!(read(&d.join("dataset.json")), read(&d.join("dataset.json")));

    let cfg = config(dir.path(), "seir_pulse", gaussian(0.03), quick_ensemble());
    let d = cmd_generate(&cfg).unwrap();
    assert_eq!(read(&d.join("dataset.csv")).lines().count(), 1 + 30);
}

#[test]
fn fit_requires_generated_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "quadratic", gaussian(0.05), quick_ensemble());
    let err = cmd_fit(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Data(_)));
    assert!(err.to_string().contains("udeuq generate"));
    assert_eq!(err.exit_code(), 3);
    let err = cmd_report(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn config_errors() {
    let out = "/tmp/never";
    let bad_noise = json!({ "scenario": "quadratic", "noise": gaussian(0.2), "method": quick_ensemble(), "output_dir": out });
    let err = RunConfig::from_json(&bad_noise.to_string()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let mut custom = bad_noise.clone();
    custom["custom"] = json!(true);
    assert!(RunConfig::from_json(&custom.to_string()).is_ok());
    let two_methods = json!({
        "scenario": "quadratic", "noise": gaussian(0.05), "output_dir": out,
        "method": { "ensemble": {}, "vi": {} }
    });
    assert!(RunConfig::from_json(&two_methods.to_string()).is_err());
    let unknown = json!({ "scenario": "quadratic", "noise": gaussian(0.05), "method": quick_ensemble(), "output_dir": out, "bogus": 1 });
    assert!(RunConfig::from_json(&unknown.to_string()).is_err());
}

#[test]
fn ensemble_and_vi_pipeline_with_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let ens = config(dir.path(), "quadratic", gaussian(0.05), quick_ensemble());
    cmd_generate(&ens).unwrap();
    let out = cmd_fit(&ens).unwrap();
    assert_eq!(read(&out.dir.join("members.jsonl")).lines().count(), 3);
    let manifest = Manifest::read(&out.dir).unwrap();
    assert_eq!(manifest.config, ens);
    assert_eq!(manifest.config_sha256, ens.sha256());
    assert!(manifest.wall_time_s > 0.0);
    // the manifest alone is enough to rerun
    let text = serde_json::to_string(&manifest.config).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), ens);

    let vi = config(dir.path(), "quadratic", gaussian(0.05), quick_vi(0, false));
    let out = cmd_fit(&vi).unwrap();
    let (q, _) = MeanFieldPosterior::load(&out.dir, "posterior").unwrap();
    let data = load_dataset(&vi).unwrap();
    let problem = udeuq_core::UdeProblem::new(data.scenario, data.noise.kind(), &Default::default()).unwrap();
    let init = sample_start_points(&problem.default_space(), &problem.mlp, 1, 3, NetInit::default()).unwrap();
    assert_eq!(q.mu, init[0]);
    assert!(q.log_sigma.iter().all(|&s| s == -2.0));

    let rep = cmd_report(&vi).unwrap();
    assert_eq!(rep.methods, ["ensemble", "vi"]);
    let cmp = read(&rep.dir.join("comparison.csv"));
    assert_eq!(cmp.lines().next(), Some("method,state,width_0.5,width_0.8,width_0.99,coverage_0.99"));
    assert_eq!(cmp.lines().filter(|l| l.contains(",x,")).count(), 2);
    for f in ["bands_ensemble.csv", "bands_vi.csv", "params_vi_summary.csv", "params_vi_histograms.csv", "ensemble_waterfall.svg", "ensemble_x.svg"] {
        assert!(rep.dir.join(f).exists(), "{f}");
    }
    let bands = read(&rep.dir.join("bands_vi.csv"));
    assert!(bands.contains(",epistemic_only") && bands.contains(",full_predictive"));
}

#[test]
fn seir_new_initial_condition_and_samplers() {
    let dir = tempfile::tempdir().unwrap();
    let nuts = json!({ "nuts": {
        "n_samples": 20, "n_warmup": 10, "max_depth": 4,
        "warm_start": { "fit": { "adam_epochs": 20, "qn_max_iters": 5 } }
    }});
    let mut cfg = config(dir.path(), "seir_waves", json!({ "kind": "negbin", "dispersion": 1.2 }), nuts);
    cmd_generate(&cfg).unwrap();
    let out = cmd_fit(&cfg).unwrap();
    let csv = read(&out.dir.join("chain_0.csv"));
    assert_eq!(csv.lines().count(), 1 + 20);
    assert!(csv.lines().next().unwrap().starts_with("draw,logpost,alpha,gamma,net[0]"));

    cfg.report.x0_override = Some(vec![0.8, 0.1, 0.0, 0.1]);
    let rep = cmd_report(&cfg).unwrap();
    for f in ["new_ic_nuts.csv", "beta_nuts.csv", "nuts_new_ic_S.svg", "nuts_beta.svg"] {
        assert!(rep.dir.join(f).exists(), "{f}");
    }
    let text = read(&rep.dir.join("new_ic_nuts.csv"));
    // first grid point carries the new initial state
    let first_s = text.lines().nth(1).unwrap();
    assert!(first_s.starts_with("0,S,"), "{first_s}");
    assert!((first_s.split(',').nth(4).unwrap().parse::<f64>().unwrap() - 0.8).abs() < 1e-12);

    cfg.report.x0_override = Some(vec![1.0, 0.0]);
    assert_eq!(cmd_report(&cfg).unwrap_err().exit_code(), 2);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_udeuq");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let st = Command::new(exe).args(["fit"]).arg(&bad).status().unwrap();
    assert_eq!(st.code(), Some(2));

    let cfg = config(&dir.path().join("run"), "quadratic", gaussian(0.05), quick_ensemble());
    let good = dir.path().join("run.json");
    std::fs::write(&good, cfg.to_json()).unwrap();
    let st = Command::new(exe).args(["--log-level", "warn", "fit"]).arg(&good).status().unwrap();
    assert_eq!(st.code(), Some(3));
    let st = Command::new(exe).args(["--log-level", "warn", "generate"]).arg(&good).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(dir.path().join("run/data/dataset.csv").exists());
}

#[test]
fn relative_output_dirs_use_the_root_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Path::new("rel/run"), "quadratic", gaussian(0.05), quick_ensemble());
    let exe = env!("CARGO_BIN_EXE_udeuq");
    let path = dir.path().join("c.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let st = Command::new(exe)
        .env(udeuq_cli::OUTPUT_ROOT_VAR, dir.path())
        .args(["--log-level", "error", "generate"])
        .arg(&path)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(dir.path().join("rel/run/data/dataset.csv").exists());
}
