use std::collections::BTreeMap;

use super::config::*;
use super::*;
use crate::optics::Topology;

fn hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files).unwrap();
    files
        .into_iter()
        .filter(|f| f != MANIFEST_NAME)
        .map(|f| {
            let h = sha256_hex(&fs::read(dir.join(&f)).unwrap());
            (f, h)
        })
        .collect()
}

fn config(kind: ExperimentKind, dir: &Path, extra: &str) -> ExperimentConfig {
    let text = format!("kind = \"{}\"\nseed = 5\nout_dir = {:?}\n{extra}", kind.name(), dir);
    ExperimentConfig::from_toml_str(&text).unwrap()
}

fn fast_tables(nus: &str, i_offs: &str) -> String {
    format!(
        "[laser]\nnu_ghz = 10.0\n[tables]\nnus_ghz = {nus}\ni_offs_ma = {i_offs}\npulses = 200\n[sweep]\nn_phase = 8\nn_att = 4\n[solver]\nnode_count = 128\ngrid_points = 12\nstarts = 2\n"
    )
}

#[test]
fn estimate_q_first_order_known_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(ExperimentKind::EstimateQ, dir.path(), "[model]\nlc = 1\nsigma = 3.54003\n");
    let outcome = run_config(cfg).unwrap();
    assert_eq!(outcome.exit_code(), EXIT_OK);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("q.json")).unwrap()).unwrap();
    let q = v["result"]["q"].as_f64().unwrap();
    assert!((q - 0.9924).abs() <= 5e-4, "q = {q}");
    let csv = fs::read_to_string(dir.path().join("q.csv")).unwrap();
    assert!(csv.starts_with("q,raw_q,exactness\n"));
}

#[test]
fn manifest_lists_every_output_with_checksums() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("notes.txt"), b"left by the user").unwrap();
    let cfg = config(ExperimentKind::SynthPhases, dir.path(), "[model]\nr = [1.0, 0.5]\nsigma = 0.7\n[sequence]\nrounds = 500\n");
    let outcome = run_config(cfg).unwrap();
    let on_disk = hashes(dir.path());
    let listed: BTreeMap<String, String> =
        outcome.manifest.outputs.iter().map(|e| (e.path.clone(), e.sha256.clone())).collect();
    assert_eq!(listed, on_disk);
    assert!(on_disk.contains_key("phases.csv") && on_disk.contains_key("phases.json") && on_disk.contains_key(CONFIG_NAME));
    let stage = |p: &str| outcome.manifest.outputs.iter().find(|e| e.path == p).unwrap().stage.clone();
    assert_eq!(stage("notes.txt"), "preexisting");
    assert_eq!(stage("phases.csv"), "synth-phases");
    assert_eq!(RunManifest::read(dir.path()).unwrap(), outcome.manifest);
}

#[test]
fn rerun_and_config_roundtrip_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        ExperimentKind::Calibrate,
        dir.path(),
        "[model]\nr = [1.0, 0.6]\nsigma = 0.5\n[sequence]\nrounds = 2000\n[network]\ntopology = \"cascade\"\nell_c = 2\nattenuators = [1.0]\n[sweep]\nn_phase = 8\nn_att = 4\n",
    );
    run_config(cfg.clone()).unwrap();
    let first = hashes(dir.path());
    run_config(cfg).unwrap();
    assert_eq!(hashes(dir.path()), first);
    let echoed = dir.path().join(CONFIG_NAME);
    run(&echoed).unwrap();
    assert_eq!(hashes(dir.path()), first);
}

#[test]
fn calibrate_recovers_synthetic_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        ExperimentKind::Calibrate,
        dir.path(),
        "[model]\nr = [1.0, 0.6]\nsigma = 0.4\ndelta_phi_bar = 0.2\n[sequence]\nrounds = 20000\n[network]\ntopology = \"cascade\"\nell_c = 2\nattenuators = [1.0]\n[sweep]\nn_phase = 32\nn_att = 16\n",
    );
    run_config(cfg).unwrap();
    let cal: crate::visibility::CalibrationResult =
        serde_json::from_slice(&fs::read(dir.path().join("calibration.json")).unwrap()).unwrap();
    assert!((cal.r_hat[1] - 0.6).abs() <= 0.08, "{:?}", cal.r_hat);
    assert!((cal.sigma_hat - 0.4).abs() <= 0.03, "{}", cal.sigma_hat);
    assert!(crate::circular::wrap_angle(cal.delta_phi_bar_hat.value() - 0.2).abs() <= 0.04);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("phase_shift,a1,v,standard_error"));
    assert_eq!(csv.lines().count(), 1 + 32 * 16 + 49);
}

#[test]
fn visibility_from_external_phases() {
    let dir = tempfile::tempdir().unwrap();
    let seq = crate::phase_model::synthesize(&crate::phase_model::CorrelationModel::first_order(0.3, 0.0).unwrap(), 5000, 3).unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, seq.to_csv_string()).unwrap();
    let out = dir.path().join("out");
    let extra = format!("[sequence]\ninput = {input:?}\n[network]\ntopology = \"mzi\"\n");
    run_config(config(ExperimentKind::Visibility, &out, &extra)).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join("visibility.json")).unwrap()).unwrap();
    let sigma = v["sigma_hat"].as_f64().unwrap();
    assert!((sigma - 0.3).abs() < 0.02, "{sigma}");
    assert_eq!(v["rounds"].as_u64(), Some(5000));
}

#[test]
fn simulate_laser_writes_trajectory_and_pulses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(ExperimentKind::SimulateLaser, dir.path(), "[laser]\nnu_ghz = 10.0\npulses = 20\ndecimate = 100\n");
    run_config(cfg).unwrap();
    for f in ["laser.json", "pulses.json", "pulses.csv", "pulses.intensity.csv", "trajectory.csv", "trajectory.bin"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let (_, samples, dt, _) = crate::laser::FieldTrajectory::read_binary(&dir.path().join("trajectory.bin")).unwrap();
    assert_eq!(dt, 0.01e-12);
    assert_eq!(samples.len(), fs::read_to_string(dir.path().join("trajectory.csv")).unwrap().lines().count() - 1);
    let phases = fs::read_to_string(dir.path().join("pulses.csv")).unwrap();
    assert_eq!(phases.lines().count(), 21);
}

#[test]
fn one_cell_sweep_matches_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(ExperimentKind::Table2, dir.path(), &fast_tables("[10.0]", "[7.0]")).resolve().unwrap();
    let outcome = run_config(cfg.clone()).unwrap();
    assert_eq!(outcome.exit_code(), EXIT_OK);
    let rows: Vec<CellResult> = serde_json::from_slice(&fs::read(dir.path().join("table2.json")).unwrap()).unwrap();
    let direct = run_cell(&cfg, 10.0, 7.0, cfg.seed);
    let mut direct_json = serde_json::to_value(&direct).unwrap();
    assert_eq!(serde_json::to_value(&rows[0]).unwrap(), direct_json.take());
    let e = direct.estimate().unwrap();
    assert!(e.sigma_hat < 0.2 && e.q.unwrap() < 0.2, "{e:?}");
    assert!(dir.path().join("cells/table2_nu10ghz_ioff7ma.json").exists());
}

#[test]
fn failing_cell_gives_partial_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(ExperimentKind::Table1, dir.path(), &fast_tables("[10.0]", "[0.0, 500.0]"));
    let outcome = run_config(cfg).unwrap();
    assert_eq!(outcome.manifest.status, RunStatus::Partial);
    assert_eq!(outcome.exit_code(), EXIT_PARTIAL);
    let rows: Vec<CellResult> = serde_json::from_slice(&fs::read(dir.path().join("table1.json")).unwrap()).unwrap();
    assert!(rows[0].estimate().is_some());
    assert!(matches!(&rows[1].outcome, CellOutcome::Failed { error } if error.starts_with("laser")));
    let csv = fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    assert!(csv.lines().nth(2).unwrap().ends_with("failed"));
}

#[test]
fn fig4_writes_one_panel_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(ExperimentKind::Fig4, dir.path(), &fast_tables("[10.0]", "[7.0, 14.0]"));
    run_config(cfg).unwrap();
    for f in ["fig4_nu10ghz_ioff7ma.csv", "fig4_nu10ghz_ioff14ma.csv"] {
        let s = fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(s.lines().count(), 1 + 8 * 4, "{f}");
    }
}

#[test]
fn fig3_rows_cover_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "[fig3]\nsigmas = [1.0, 2.0]\nr2s = [0.5]\n[solver]\nnode_count = 128\ngrid_points = 12\nstarts = 2\n";
    run_config(config(ExperimentKind::Fig3, dir.path(), extra)).unwrap();
    let pts: Vec<pipelines::Fig3Point> = serde_json::from_slice(&fs::read(dir.path().join("fig3.json")).unwrap()).unwrap();
    assert_eq!(pts.len(), 2);
    assert!(pts[0].q < pts[1].q);
    assert_eq!(fs::read_to_string(dir.path().join("fig3.csv")).unwrap().lines().next(), Some("sigma,r2,q,raw_q"));
}

#[test]
fn exit_codes_separate_validation_from_pipeline_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = config(ExperimentKind::EstimateQ, dir.path(), "[model]\nlc = 1\nsigma = 0.0\n");
    let r = run_config(bad);
    assert_eq!(exit_code(&r), EXIT_VALIDATION);
    assert!(matches!(r.err().unwrap(), Error::Config { ref field, .. } if field == "model.sigma"));
    let missing = dir.path().join("absent.csv");
    let extra = format!("[sequence]\ninput = {missing:?}\n[network]\ntopology = \"mzi\"\n");
    let r = run_config(config(ExperimentKind::Visibility, dir.path(), &extra));
    assert_eq!(exit_code(&r), EXIT_NUMERICAL);
    assert!(r.err().unwrap().to_string().starts_with("sequence:"));
    assert_eq!(exit_code(&run(&dir.path().join("nope.toml"))), EXIT_VALIDATION);
}

#[test]
fn network_block_topologies() {
    let n = NetworkBlock {
        topology: Topology::Feedback,
        ell_c: 2,
        phase_shift: 0.1,
        attenuators: vec![0.5],
        loop_reflectance: 0.9,
        mu: 1.0,
    };
    assert!((n.to_network().unwrap().loop_transmittance() - 0.225).abs() < 1e-12);
    let bad = NetworkBlock { attenuators: vec![], ..n };
    assert!(matches!(bad.to_network(), Err(Error::Config { ref field, .. }) if field == "network"));
}
