use std::path::Path;
use std::process::Command;

use ghbs_core::pipeline::io::read_csv;
use ghbs_core::pipeline::{Pipeline, PipelineConfig, PipelineError, RunManifest};

const RIDGE: &str = r#"
[forward]
model = "planted-ridge"
[noise]
absolute = 1.0
[synthetic]
add_noise = false
[gradients]
n_samples = 60
[subspace]
n_boot = 30
dim = 2
[kde]
n_samples = 5000
[mcmc]
n_steps = 6000
burn_in = 600
"#;

fn pipeline(out: &Path, body: &str) -> Pipeline {
    let text = format!("out = {:?}\n{body}", out.display().to_string());
    Pipeline::new(PipelineConfig::from_toml_str(&text, "test").unwrap()).unwrap()
}

fn ran(p: &Pipeline, stage: &str) -> bool {
    p.run(stage)
        .unwrap()
        .iter()
        .all(|(_, s)| matches!(s, ghbs_core::pipeline::StageStatus::Ran { .. }))
}

#[test]
fn full_run_is_idempotent_and_every_csv_has_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), RIDGE);
    assert!(ran(&p, "all"));
    let again = p.run("all").unwrap();
    assert!(again.iter().all(|(_, s)| *s == ghbs_core::pipeline::StageStatus::UpToDate));

    let manifest = RunManifest::load(dir.path()).unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        if path.file_name().unwrap() != "manifest.toml" {
            assert!(text.starts_with("# config_hash="), "{}", path.display());
        }
    }
    assert!(manifest.stages.contains_key("report_k2"));

    let plot = read_csv(&dir.path().join("summary_plot.csv")).unwrap();
    assert_eq!(plot.header, ["index", "y1", "y2", "f"]);
    assert_eq!(plot.rows.len(), 60);
    let resp = read_csv(&dir.path().join("posterior_response_k2.csv")).unwrap();
    assert_eq!(resp.rows.len(), 46);
    let grads = read_csv(&dir.path().join("gradients.csv")).unwrap();
    assert_eq!(grads.header.len(), 1 + 8 + 1 + 8 + 1);
    assert_eq!(grads.header[0], "index");
}

#[test]
fn changing_chain_settings_reruns_only_downstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), RIDGE).run("all").unwrap();
    let changed = RIDGE.replace("n_steps = 6000", "n_steps = 7000");
    let statuses = pipeline(dir.path(), &changed).run("all").unwrap();
    let reran: Vec<&str> = statuses
        .iter()
        .filter(|(_, s)| *s != ghbs_core::pipeline::StageStatus::UpToDate)
        .map(|(n, _)| n.as_str())
        .collect();
    assert_eq!(reran, ["mcmc", "reconstruct", "report"]);
}

#[test]
fn missing_prerequisite_names_both_stages() {
    let dir = tempfile::tempdir().unwrap();
    let err = pipeline(dir.path(), RIDGE).run("subspace").unwrap_err();
    match &err {
        PipelineError::Prerequisite { stage, prerequisite } => {
            assert_eq!(stage, "subspace");
            assert_eq!(prerequisite, "gradients");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn interrupted_gradient_run_resumes_from_partial_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), RIDGE);
    p.run("synth-data").unwrap();
    p.run("gradients").unwrap();
    let full = std::fs::read(dir.path().join("gradients.csv")).unwrap();

    // keep the header and the first 25 samples as if the run had stopped
    let text = String::from_utf8(full.clone()).unwrap();
    let partial: Vec<&str> = text.lines().take(2 + 25).collect();
    std::fs::write(dir.path().join("gradients.partial.csv"), partial.join("\n") + "\n").unwrap();
    std::fs::remove_file(dir.path().join("gradients.csv")).unwrap();

    let status = p.run("gradients").unwrap();
    assert_eq!(status[0].1, ghbs_core::pipeline::StageStatus::Ran { computed: 35 });
    assert_eq!(std::fs::read(dir.path().join("gradients.csv")).unwrap(), full);
    assert!(!dir.path().join("gradients.partial.csv").exists());
}

#[test]
fn config_errors_are_located() {
    let err = PipelineConfig::from_toml_str("[mcmc]\nn_steps = 10\nburn_in = 20\n", "c.toml").unwrap_err();
    assert!(err.to_string().starts_with("c.toml:"), "{err}");
}

#[test]
fn cli_simulate_writes_a_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ghbs"))
        .args(["simulate", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = read_csv(&dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(t.rows.len(), 1351);
    assert_eq!(
        t.header,
        ["step", "axial_strain", "vol_strain", "p", "q", "lambda_acc", "alpha", "beta"]
    );
}

#[test]
fn cli_reports_stage_qualified_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ghbs"))
        .args(["mcmc", "--subspace-dim", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage mcmc_k2") && stderr.contains("surrogate_k2"), "{stderr}");
}
