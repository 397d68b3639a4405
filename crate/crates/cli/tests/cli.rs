use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use leo_isac::channel::RadarStructure;
use leo_isac::scenario::{Scenario, ScenarioConfig};
use sha2::{Digest, Sha256};

fn leo(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leo-isac"))
        .arg("--out-dir")
        .arg(out)
        .arg("--workers")
        .arg("2")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Header and rows of a CSV file as strings.
fn table(p: PathBuf) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(&p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"))
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn pathloss_matches_channel_formula_and_orders_structures() {
    let dir = tempfile::tempdir().unwrap();
    let o = leo(
        dir.path(),
        &["pathloss", "--alt-min", "1", "--alt-max", "50", "--steps", "50"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = table(dir.path().join("pathloss.csv"));
    assert_eq!(h, ["altitude_km", "bistatic_db", "monostatic_db"]);
    assert_eq!(rows.len(), 50);

    let cfg = ScenarioConfig::desk();
    let scn = Scenario::build(&cfg, 0).unwrap();
    let gap = |r: &Vec<String>| num(&r[2]) - num(&r[1]);
    for r in &rows {
        let alt = num(&r[0]);
        let tar = leo_isac::geometry::Vec3::new(scn.tar.x, scn.tar.y, alt * 1e3);
        let scene = scn.radar_scene.with_target(tar);
        let bi = scene.echo_path_loss_db(RadarStructure::Bistatic).unwrap();
        let mono = scene.echo_path_loss_db(RadarStructure::Monostatic).unwrap();
        assert!((num(&r[1]) - bi).abs() <= 1e-9 * bi.abs(), "bistatic at {alt} km");
        assert!((num(&r[2]) - mono).abs() <= 1e-9 * mono.abs(), "monostatic at {alt} km");
        if alt < 20.0 {
            assert!(num(&r[1]) < num(&r[2]), "bistatic not below monostatic at {alt} km");
        }
    }
    let at = |km: f64| rows.iter().find(|r| num(&r[0]) == km).unwrap();
    assert!(gap(at(1.0)) > gap(at(20.0)));
}

#[test]
fn manifest_lists_outputs_with_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let o = leo(dir.path(), &["--seed", "7", "pathloss", "--steps", "4"]);
    assert_eq!(code(&o), 0);
    let m: toml::Value = toml::from_str(&read(dir.path().join("manifest.toml"))).unwrap();
    assert_eq!(m["command"].as_str(), Some("pathloss"));
    assert_eq!(m["seed"].as_integer(), Some(7));
    assert_eq!(m["user_seed"].as_integer(), Some(7));
    assert_eq!(m["workers"].as_integer(), Some(2));
    assert!(m["timings"].as_array().is_some_and(|t| !t.is_empty()));

    let cfg_text = read(dir.path().join("config.toml"));
    assert_eq!(
        m["config_sha256"].as_str().unwrap(),
        hex::encode(Sha256::digest(cfg_text.as_bytes()))
    );
    let cfg = ScenarioConfig::from_toml(&cfg_text).unwrap();
    assert_eq!(cfg.seed, 7);

    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 1);
    let f = &outputs[0];
    assert_eq!(f["file"].as_str(), Some("pathloss.csv"));
    assert_eq!(f["rows"].as_integer(), Some(4));
    let bytes = std::fs::read(dir.path().join("pathloss.csv")).unwrap();
    assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
}

#[test]
fn rerun_from_written_config_reproduces_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&leo(a.path(), &["--seed", "3", "track"])), 0);
    let cfg = a.path().join("config.toml");
    assert_eq!(code(&leo(b.path(), &["--config", cfg.to_str().unwrap(), "track"])), 0);
    for f in ["matched_filter.csv", "report.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&leo(dir.path(), &["pathloss", "--alt-min", "5", "--alt-max", "1"])),
        2
    );
    assert_eq!(code(&leo(dir.path(), &["pathloss", "--steps", "0"])), 2);
    assert_eq!(code(&leo(dir.path(), &["--profile", "huge", "pathloss"])), 2);
    assert_eq!(code(&leo(dir.path(), &["optimize", "--mode", "rsma-fancy"])), 2);
    assert_eq!(code(&leo(dir.path(), &["optimize", "--crb-threshold", "1e-5"])), 2);

    let mut text = ScenarioConfig::desk().to_toml();
    text.push_str("\nunknown-key = 1\n");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(
        code(&leo(dir.path(), &["--config", cfg.to_str().unwrap(), "pathloss"])),
        2
    );

    let missing = dir.path().join("missing.toml");
    assert_eq!(
        code(&leo(dir.path(), &["--config", missing.to_str().unwrap(), "pathloss"])),
        2
    );
}

#[test]
fn unreachable_crb_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = leo(dir.path(), &["optimize", "--crb-threshold", "1e-12,1e-12"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = table(dir.path().join("optimize.csv"));
    assert_eq!(rows[0][col(&h, "status")], "infeasible");
}

#[test]
fn optimize_reports_a_feasible_precoder() {
    let dir = tempfile::tempdir().unwrap();
    let o = leo(dir.path(), &["optimize", "--power", "20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = table(dir.path().join("optimize.csv"));
    let r = &rows[0];
    assert_eq!(r[col(&h, "status")], "converged");
    assert!(num(&r[col(&h, "total_power_w")]) <= 100.0 * (1.0 + 1e-6));
    let th = ScenarioConfig::desk().crb_threshold;
    assert!(num(&r[col(&h, "crb_theta_rad2")]) <= th[0] * (1.0 + 1e-3));
    assert!(num(&r[col(&h, "crb_phi_rad2")]) <= th[1] * (1.0 + 1e-3));
    assert!(num(&r[col(&h, "r_min_bps_hz")]) > 0.0);
}

#[test]
fn beampattern_ratios_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = leo(dir.path(), &["beampattern", "--power", "10", "--step-deg", "10"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = table(dir.path().join("beampattern.csv"));
    assert_eq!(h, ["theta_deg", "phi_deg", "p_radar", "p_common", "p_private"]);
    assert_eq!(rows.len(), 36 * 10);
    let (h, rows) = table(dir.path().join("power_ratio.csv"));
    assert_eq!(h, ["stream", "power_ratio"]);
    let sum: f64 = rows.iter().map(|r| num(&r[1])).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    let ratio = |s: &str| num(&rows.iter().find(|r| r[0] == s).unwrap()[1]);
    // RSMA at tight power puts nothing on the radar sequence
    assert!(ratio("radar") < 1e-3, "radar ratio {}", ratio("radar"));
    let privates = rows.iter().filter(|r| r[0].starts_with("private")).map(|r| num(&r[1]));
    assert!(privates.into_iter().all(|p| p < ratio("common")));
}

#[test]
fn music_peak_is_on_the_target() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&leo(dir.path(), &["music"])), 0);
    let (h, rows) = table(dir.path().join("music_summary.csv"));
    assert!(num(&rows[0][col(&h, "cell_error")]) <= 1.0);
    let (h, rows) = table(dir.path().join("music.csv"));
    assert_eq!(h, ["theta_deg", "phi_deg", "spectrum_db"]);
    let peak = rows.iter().map(|r| num(&r[2])).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(peak, 0.0);
}

#[test]
fn track_flags_a_corrupted_aoa() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&leo(dir.path(), &["track"])), 0);
    let (h, rows) = table(dir.path().join("report.csv"));
    let r = &rows[0];
    assert_eq!(r[col(&h, "detected")], "true");
    assert_eq!(r[col(&h, "tau_hat_samples")], r[col(&h, "tau_true_samples")]);
    assert!(num(&r[col(&h, "position_error_m")]) <= num(&r[col(&h, "position_bound_m")]));

    let bad = tempfile::tempdir().unwrap();
    assert_eq!(code(&leo(bad.path(), &["track", "--aoa-offset-deg=-20,10"])), 0);
    let (h, rows) = table(bad.path().join("report.csv"));
    assert_eq!(rows[0][col(&h, "detected")], "false");
    let (h, rows) = table(bad.path().join("matched_filter.csv"));
    assert_eq!(h, ["tau_samples", "doppler_hz", "score", "score_db"]);
    assert!(!rows.is_empty());
}

#[test]
fn sweep_is_ordered_and_worker_independent() {
    let a = tempfile::tempdir().unwrap();
    let args = [
        "minrate-sweep",
        "--power-list",
        "10,20",
        "--modes",
        "rsma-comm-only,sdma-comm-only",
        "--drops",
        "1",
    ];
    assert_eq!(code(&leo(a.path(), &args)), 0);
    let one = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_leo-isac"))
        .args(["--out-dir", one.path().to_str().unwrap(), "--workers", "1"])
        .args(args)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let bytes = std::fs::read(a.path().join("minrate.csv")).unwrap();
    assert_eq!(bytes, std::fs::read(one.path().join("minrate.csv")).unwrap());

    let (h, rows) = table(a.path().join("minrate.csv"));
    assert_eq!(h, ["mode", "p_t_dbw", "r_min_bps_hz", "status", "iterations"]);
    let keys: Vec<(&str, &str)> = rows.iter().map(|r| (r[0].as_str(), r[1].as_str())).collect();
    assert_eq!(
        keys,
        [
            ("rsma-comm-only", "10.0"),
            ("rsma-comm-only", "20.0"),
            ("sdma-comm-only", "10.0"),
            ("sdma-comm-only", "20.0")
        ]
    );
    for i in 0..2 {
        assert!(num(&rows[i][2]) >= num(&rows[i + 2][2]) - 1e-6, "RSMA below SDMA");
        assert!(num(&rows[2 * (i / 2)][2]) <= num(&rows[2 * (i / 2) + 1][2]) + 1e-6);
    }
}
