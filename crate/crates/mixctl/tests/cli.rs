use std::fs;
use std::path::Path;
use std::process::Command;

use mixctl::cli::{cmd_select, RunArgs};
use mixctl::data::{builtin, load_csv, write_csv};
use mixctl::simulate::{simulate, SimSpec};
use modalmix::engine::QuadratureConfig;
use modalmix::sampler::{run_modal_gibbs, SamplerConfig};
use modalmix::select::{log_evidence_chib, ChibVariant};
use modalmix::{Family, Observations, PriorSpec};
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_mixctl");

fn sha256_hex(path: &Path) -> String {
    let bytes = fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn mixctl(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn run_args(builtin: &str, out: &Path) -> RunArgs {
    RunArgs {
        data: None,
        builtin: Some(builtin.into()),
        family: None,
        shared_precision: false,
        poisson_prior: None,
        k: None,
        k_min: Some(1),
        k_max: Some(4),
        alpha: 2.0,
        burn_in: 100,
        iters: 3_000,
        thin: 5,
        seed: 1,
        out: out.to_path_buf(),
    }
}

#[test]
fn packaged_data_checksums() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    assert_eq!(
        sha256_hex(&dir.join("galaxies.csv")),
        "42a4e4a9642da817abe8aaa985a1ffa93cc8a1c361484ea3f064f115e6d1de22"
    );
    assert_eq!(
        sha256_hex(&dir.join("earthquakes.csv")),
        "7715b7f918db70d85ad0abb9e705c34e4c134db46d6df1015522d1bb659e4640"
    );
    assert_eq!(builtin("galaxies").unwrap().values.len(), 82);
    assert_eq!(builtin("earthquakes").unwrap().values.len(), 107);
}

#[test]
fn simulated_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for spec in [SimSpec::gaussian_replica(), SimSpec::poisson_replica()] {
        let values = simulate(&spec, 9).unwrap();
        let path = dir.path().join("sim.csv");
        write_csv(&path, &values).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(values.len(), back.len());
        assert!(values.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn simulate_command_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("p.csv");
    let out = mixctl(&[
        "simulate", "--family", "poisson", "--means", "2,20", "--sizes", "5,7", "--seed", "3",
        "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let values = load_csv(&path).unwrap();
    assert_eq!(values.len(), 12);
    assert!(values.iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("a.csv");
    fs::write(&csv, "y\n1\n2\n30\n").unwrap();
    let csv = csv.to_str().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();

    let config_errors: [&[&str]; 5] = [
        &["fit", "--data", "/no/such/file.csv", "--family", "poisson", "--k", "2", "--out", out],
        &["fit", "--builtin", "nonesuch", "--k", "2", "--out", out],
        &["fit", "--data", csv, "--family", "poisson", "--k", "5", "--out", out],
        &["fit", "--data", csv, "--family", "poisson", "--shared-precision", "--k", "2", "--out", out],
        &["fit", "--data", csv, "--k", "2", "--out", out],
    ];
    for args in config_errors {
        assert_eq!(mixctl(args).status.code(), Some(2), "{args:?}");
    }
    // an empty third component has alpha + n = 1 under alpha = 1
    let numerical = mixctl(&[
        "fit", "--data", csv, "--family", "poisson", "--k", "3", "--alpha", "1", "--iters", "100", "--out", out,
    ]);
    assert_eq!(numerical.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&numerical.stderr).contains("mode undefined"));
}

#[test]
fn report_json_has_model_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let status = mixctl(&[
        "fit", "--builtin", "earthquakes", "--k", "2", "--iters", "500", "--burn-in", "50", "--thin", "5",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let model = &report["models"][0];
    for key in [
        "model", "log_evidence_I", "log_evidence_chib_G", "log_evidence_chib_M", "prob_I", "prob_G", "prob_M",
        "components", "diagnostic_tv", "seed", "runtime_ms",
    ] {
        assert!(model.get(key).is_some(), "missing {key}");
    }
    assert_eq!(model["model"], "M2");
    assert_eq!(model["components"].as_array().unwrap().len(), 2);
    let dens: Vec<_> = fs::read_dir(&out).unwrap().filter_map(|e| e.ok()).collect();
    assert!(dens.iter().any(|e| e.file_name().to_string_lossy().ends_with(".csv")));
}

#[test]
fn galaxy_selection_peaks_at_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_args("galaxies", dir.path()).resolve("select").unwrap();
    let report = cmd_select(&cfg, "select").unwrap();
    let best = report
        .models
        .iter()
        .max_by(|a, b| a.log_evidence_i.total_cmp(&b.log_evidence_i))
        .unwrap();
    assert_eq!(best.k, 3);
    let sum: f64 = report.models.iter().map(|m| m.prob_i).sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn chib_variants_agree_on_gaussian_replica() {
    let fam = Family::Gaussian { shared_precision: false };
    let y = Observations::new(simulate(&SimSpec::gaussian_replica(), 1).unwrap(), &fam).unwrap();
    let priors = PriorSpec::new(3);
    let cfg = SamplerConfig::default();
    let t = run_modal_gibbs(&y, 3, &fam, &priors, &QuadratureConfig::default(), &cfg).unwrap();
    let g = log_evidence_chib(&t, &priors.alpha, ChibVariant::G).unwrap();
    let m = log_evidence_chib(&t, &priors.alpha, ChibVariant::M).unwrap();
    assert!((g - m).abs() < 2.0, "G {g} M {m}");
}
