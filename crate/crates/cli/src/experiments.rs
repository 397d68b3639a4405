//! Experiment drivers. Each returns the rows of its CSV files.

use leo_isac::channel::{self, RadarStructure};
use leo_isac::estimation::AngleGrid;
use leo_isac::geometry::{AnglePair, Vec3};
use leo_isac::precoder::{self, OptResult, OptStatus};
use leo_isac::rates::{self, ModeConfig};
use leo_isac::scenario::{Scenario, ScenarioConfig};
use leo_isac::sensing::{self, SearchGrids, SensingOutcome};
use leo_isac::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::failure::Failure;

pub const PATHLOSS_HEADER: &[&str] = &["altitude_km", "bistatic_db", "monostatic_db"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathlossRow {
    pub altitude_km: f64,
    pub bistatic_db: f64,
    pub monostatic_db: f64,
}

/// Echo path loss of both radar structures at the configured target x-y over
/// `steps` evenly spaced altitudes.
pub fn pathloss(
    cfg: &ScenarioConfig,
    alt_min_km: f64,
    alt_max_km: f64,
    steps: usize,
) -> Result<Vec<PathlossRow>, Failure> {
    if !(alt_min_km > 0.0 && alt_max_km >= alt_min_km && alt_max_km.is_finite()) || steps < 1 {
        return Err(Failure::Config(format!(
            "altitude range must satisfy 0 < min <= max with at least one step, got {alt_min_km}..{alt_max_km} km in {steps} steps"
        )));
    }
    if steps == 1 && alt_max_km != alt_min_km {
        return Err(Failure::Config("a single step needs alt-min == alt-max".into()));
    }
    let scn = Scenario::build(cfg, 0)?;
    let altitudes: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                alt_min_km * 1e3
            } else {
                (alt_min_km + (alt_max_km - alt_min_km) * i as f64 / (steps - 1) as f64) * 1e3
            }
        })
        .collect();
    let xy = (scn.tar.x, scn.tar.y);
    let bi = channel::echo_path_loss_curve(&scn.radar_scene, xy, &altitudes, RadarStructure::Bistatic)?;
    let mono = channel::echo_path_loss_curve(&scn.radar_scene, xy, &altitudes, RadarStructure::Monostatic)?;
    Ok(bi
        .iter()
        .zip(&mono)
        .map(|(b, m)| PathlossRow {
            altitude_km: b.0 * 1e-3,
            bistatic_db: b.1,
            monostatic_db: m.1,
        })
        .collect())
}

/// Optimizer outcome for one drop; an unreachable CRB is reported as an
/// infeasible result rather than an error.
pub fn solve_drop(cfg: &ScenarioConfig, drop: u64) -> Result<(Scenario, OptResult), Failure> {
    let scn = Scenario::build(cfg, drop)?;
    let inputs = scn.opt_inputs();
    match precoder::solve(&inputs, &scn.opt_config()) {
        Ok(r) => Ok((scn, r)),
        Err(Error::InfeasibleCrb { required, available }) => {
            log::info!("drop {drop}: CRB needs target gain {required:.3e}, budget reaches {available:.3e}");
            let n = cfg.tx_array.len();
            let users = scn.users.len();
            Ok((
                scn,
                OptResult {
                    status: OptStatus::Infeasible,
                    precoder: rates::PrecoderMatrix::zeros(n, users),
                    alloc: vec![0.0; users],
                    r_min: f64::NAN,
                    r_min_lifted: f64::NAN,
                    w_trajectory: Vec::new(),
                    eigen_ratios: vec![None; users + 2],
                    lift: None,
                    outer_iterations: 0,
                    subproblems: 0,
                },
            ))
        }
        Err(e) => Err(e.into()),
    }
}

/// Failure for a non-converged single solve.
pub fn require_converged(r: &OptResult) -> Result<(), Failure> {
    match r.status {
        OptStatus::Converged => Ok(()),
        OptStatus::Infeasible => Err(Failure::Infeasible("optimizer found no feasible precoder".into())),
        OptStatus::IterCap => Err(Failure::IterationCap(format!(
            "no rank-one solution after {} outer iterations",
            r.outer_iterations
        ))),
    }
}

pub const OPTIMIZE_HEADER: &[&str] = &[
    "mode",
    "p_t_dbw",
    "status",
    "r_min_bps_hz",
    "r_min_lifted_bps_hz",
    "outer_iterations",
    "subproblems",
    "total_power_w",
    "crb_theta_rad2",
    "crb_phi_rad2",
];

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeRow {
    pub mode: String,
    pub p_t_dbw: f64,
    pub status: &'static str,
    pub r_min: f64,
    pub r_min_lifted: f64,
    pub outer_iterations: usize,
    pub subproblems: usize,
    pub total_power_w: f64,
    pub crb_theta: f64,
    pub crb_phi: f64,
}

pub fn optimize_row(cfg: &ScenarioConfig, scn: &Scenario, r: &OptResult) -> OptimizeRow {
    let crb = if cfg.mode.has_crb() && r.status != OptStatus::Infeasible {
        precoder::achieved_crb(&scn.opt_inputs(), &r.precoder)
    } else {
        None
    };
    OptimizeRow {
        mode: cfg.mode.label(),
        p_t_dbw: cfg.p_t_dbw,
        status: r.status.as_str(),
        r_min: r.r_min,
        r_min_lifted: r.r_min_lifted,
        outer_iterations: r.outer_iterations,
        subproblems: r.subproblems,
        total_power_w: r.precoder.total_power(),
        crb_theta: crb.map_or(f64::NAN, |c| c.0),
        crb_phi: crb.map_or(f64::NAN, |c| c.1),
    }
}

pub const RATIO_HEADER: &[&str] = &["stream", "power_ratio"];

#[derive(Debug, Clone, Serialize)]
pub struct RatioRow {
    pub stream: String,
    pub power_ratio: f64,
}

pub fn ratio_rows(r: &OptResult) -> Vec<RatioRow> {
    let ratios = rates::power_ratios(&r.precoder);
    let users = r.precoder.users();
    ratios
        .into_iter()
        .enumerate()
        .map(|(j, power_ratio)| {
            let stream = match j {
                j if j < users => format!("private-{}", j + 1),
                j if j == users => "common".to_string(),
                _ => "radar".to_string(),
            };
            RatioRow { stream, power_ratio }
        })
        .collect()
}

pub const SWEEP_HEADER: &[&str] = &["mode", "p_t_dbw", "r_min_bps_hz", "status", "iterations"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mode: String,
    pub p_t_dbw: f64,
    /// Mean over drops that reached a precoder.
    pub r_min: f64,
    /// Worst status over the drops.
    pub status: &'static str,
    /// Mean outer iterations per drop.
    pub iterations: f64,
}

fn severity(s: OptStatus) -> u8 {
    match s {
        OptStatus::Converged => 0,
        OptStatus::IterCap => 1,
        OptStatus::Infeasible => 2,
    }
}

/// Min-rate sweep over modes and powers, `drops` user drops per point.
/// Points run on the current rayon pool; rows come back in mode-major order.
pub fn minrate_sweep(cfg: &ScenarioConfig, powers: &[f64], modes: &[ModeConfig]) -> Result<Vec<SweepRow>, Failure> {
    let drops = cfg.drops as u64;
    let jobs: Vec<(ModeConfig, f64, u64)> = modes
        .iter()
        .flat_map(|&m| powers.iter().flat_map(move |&p| (0..drops).map(move |d| (m, p, d))))
        .collect();
    let results: Vec<Result<OptResult, Failure>> = jobs
        .par_iter()
        .map(|&(mode, p, drop)| {
            let c = ScenarioConfig {
                mode,
                p_t_dbw: p,
                ..cfg.clone()
            };
            solve_drop(&c, drop).map(|(_, r)| r)
        })
        .collect();
    let mut rows = Vec::new();
    for (chunk, point) in results.chunks(drops as usize).zip(jobs.chunks(drops as usize)) {
        let (mode, p, _) = point[0];
        let mut worst = OptStatus::Converged;
        let (mut sum, mut count, mut iters) = (0.0, 0usize, 0usize);
        for r in chunk {
            let r = match r {
                Ok(r) => r,
                Err(e) => return Err(Failure::Numerical(format!("{} at {p} dBW: {e}", mode.label()))),
            };
            if severity(r.status) > severity(worst) {
                worst = r.status;
            }
            if r.status != OptStatus::Infeasible {
                sum += r.r_min;
                count += 1;
            }
            iters += r.outer_iterations;
        }
        rows.push(SweepRow {
            mode: mode.label(),
            p_t_dbw: p,
            r_min: if count > 0 { sum / count as f64 } else { f64::NAN },
            status: worst.as_str(),
            iterations: iters as f64 / chunk.len() as f64,
        });
    }
    Ok(rows)
}

pub const BEAM_HEADER: &[&str] = &["theta_deg", "phi_deg", "p_radar", "p_common", "p_private"];

#[derive(Debug, Clone, Serialize)]
pub struct BeamRow {
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub p_radar: f64,
    pub p_common: f64,
    pub p_private: f64,
}

/// Beampatterns normalized by total transmit power on a hemisphere grid.
pub fn beampattern(cfg: &ScenarioConfig, r: &OptResult, step_deg: f64) -> Result<Vec<BeamRow>, Failure> {
    let grid = AngleGrid::hemisphere(step_deg.to_radians())?;
    let angles: Vec<AnglePair> = (0..grid.theta.len())
        .flat_map(|i| (0..grid.phi.len()).map(move |j| (i, j)))
        .map(|(i, j)| grid.angle(i, j))
        .collect();
    Ok(rates::beampatterns(&r.precoder, cfg.tx_array, &angles)?
        .into_iter()
        .map(|b| BeamRow {
            theta_deg: b.angle.theta.to_degrees(),
            phi_deg: b.angle.phi.to_degrees(),
            p_radar: b.radar,
            p_common: b.common,
            p_private: b.private,
        })
        .collect())
}

pub const MUSIC_HEADER: &[&str] = &["theta_deg", "phi_deg", "spectrum_db"];

#[derive(Debug, Clone, Serialize)]
pub struct MusicRow {
    pub theta_deg: f64,
    pub phi_deg: f64,
    /// Normalized to 0 dB at the peak.
    pub spectrum_db: f64,
}

pub const MUSIC_SUMMARY_HEADER: &[&str] = &[
    "aoa_theta_deg",
    "aoa_phi_deg",
    "true_theta_deg",
    "true_phi_deg",
    "cell_error",
    "peak_to_sidelobe_db",
    "peak_to_median_db",
];

#[derive(Debug, Clone, Serialize)]
pub struct MusicSummary {
    pub aoa_theta_deg: f64,
    pub aoa_phi_deg: f64,
    pub true_theta_deg: f64,
    pub true_phi_deg: f64,
    pub cell_error: usize,
    pub peak_to_sidelobe_db: f64,
    pub peak_to_median_db: f64,
}

/// One sensing trial with the optimized precoder; `aoa_offset` perturbs the
/// angle fed to the matched filter.
pub fn sensing_trial(
    scn: &Scenario,
    r: &OptResult,
    trial: u64,
    aoa_offset: Option<(f64, f64)>,
) -> Result<(SearchGrids, SensingOutcome), Failure> {
    let grids = SearchGrids::for_scenario(scn)?;
    let first = sensing::run_trial(scn, &grids, &r.precoder, trial, None)?;
    let Some((dt, dp)) = aoa_offset else {
        return Ok((grids, first));
    };
    let a = first.music.aoa;
    let corrupted = AnglePair::new(a.theta + dt, (a.phi + dp).clamp(0.0, std::f64::consts::FRAC_PI_2));
    let out = sensing::run_trial(scn, &grids, &r.precoder, trial, Some(corrupted))?;
    Ok((grids, out))
}

pub fn music_rows(grids: &SearchGrids, o: &SensingOutcome) -> Vec<MusicRow> {
    let g = &grids.angles;
    let peak = o.music.values[o.music.argmax];
    let mut rows = Vec::with_capacity(g.len());
    for i in 0..g.theta.len() {
        for j in 0..g.phi.len() {
            rows.push(MusicRow {
                theta_deg: g.theta[i].to_degrees(),
                phi_deg: g.phi[j].to_degrees(),
                spectrum_db: 10.0 * (o.music.values[(i, j)] / peak).log10(),
            });
        }
    }
    rows
}

pub fn music_summary(scn: &Scenario, grids: &SearchGrids, o: &SensingOutcome) -> MusicSummary {
    MusicSummary {
        aoa_theta_deg: o.music.aoa.theta.to_degrees(),
        aoa_phi_deg: o.music.aoa.phi.to_degrees(),
        true_theta_deg: o.truth.aoa.theta.to_degrees(),
        true_phi_deg: o.truth.aoa.phi.to_degrees(),
        cell_error: o.aoa_cell_error(&grids.angles),
        peak_to_sidelobe_db: 10.0 * o.music.peak_to_sidelobe(scn.config.rx_array, &grids.angles).log10(),
        peak_to_median_db: 10.0 * o.music.peak_to_median().log10(),
    }
}

pub const MATCHED_HEADER: &[&str] = &["tau_samples", "doppler_hz", "score", "score_db"];

#[derive(Debug, Clone, Serialize)]
pub struct MatchedRow {
    pub tau_samples: usize,
    pub doppler_hz: f64,
    pub score: f64,
    /// Normalized to 0 dB at the peak; empty for inadmissible delays.
    pub score_db: Option<f64>,
}

pub fn matched_rows(grids: &SearchGrids, o: &SensingOutcome) -> Vec<MatchedRow> {
    let s = &o.matched.scores;
    let peak = s.max();
    let mut rows = Vec::with_capacity(s.len());
    for (i, &tau) in grids.delays.iter().enumerate() {
        for (j, &v) in grids.dopplers.iter().enumerate() {
            let score = s[(i, j)];
            rows.push(MatchedRow {
                tau_samples: tau,
                doppler_hz: v,
                score: if score.is_finite() { score } else { f64::NAN },
                score_db: score.is_finite().then(|| 20.0 * (score / peak).log10()),
            });
        }
    }
    rows
}

pub const REPORT_HEADER: &[&str] = &[
    "aoa_theta_deg",
    "aoa_phi_deg",
    "tau_hat_samples",
    "doppler_hat_hz",
    "aod_theta_deg",
    "aod_phi_deg",
    "x_hat_km",
    "y_hat_km",
    "z_hat_km",
    "peak_to_median",
    "detected",
    "tau_true_samples",
    "doppler_true_hz",
    "position_error_m",
    "position_bound_m",
];

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub aoa_theta_deg: f64,
    pub aoa_phi_deg: f64,
    pub tau_hat: usize,
    pub doppler_hat_hz: f64,
    pub aod_theta_deg: f64,
    pub aod_phi_deg: f64,
    pub x_hat_km: f64,
    pub y_hat_km: f64,
    pub z_hat_km: f64,
    pub peak_to_median: f64,
    pub detected: bool,
    pub tau_true: usize,
    pub doppler_true_hz: f64,
    pub position_error_m: f64,
    pub position_bound_m: f64,
}

/// Distance between the positions implied by `tau_hat` and `tau_hat + 1` along
/// the estimated arrival direction: one delay bin mapped through the ellipsoid.
pub fn delay_bin_range(scn: &Scenario, aoa: AnglePair, tau: usize) -> Result<f64, Failure> {
    let ts = scn.config.sample_period();
    let at = |t: usize| -> Result<Vec3, Error> {
        let range = scn.window_start() + t as f64 * channel::SPEED_OF_LIGHT * ts;
        let (rel, _) = leo_isac::geometry::invert_bistatic_ellipsoid(scn.sat - scn.rx, aoa.direction(), range)?;
        Ok(scn.rx + rel)
    };
    Ok(at(tau)?.distance(at(tau + 1)?))
}

pub fn report_row(scn: &Scenario, o: &SensingOutcome) -> Result<ReportRow, Failure> {
    let r = &o.matched.report;
    let km = r.position_hat.to_km();
    Ok(ReportRow {
        aoa_theta_deg: r.aoa_hat.theta.to_degrees(),
        aoa_phi_deg: r.aoa_hat.phi.to_degrees(),
        tau_hat: r.tau_hat,
        doppler_hat_hz: r.v_hat,
        aod_theta_deg: r.aod_hat.theta.to_degrees(),
        aod_phi_deg: r.aod_hat.phi.to_degrees(),
        x_hat_km: km[0],
        y_hat_km: km[1],
        z_hat_km: km[2],
        peak_to_median: r.peak_to_median,
        detected: r.detected,
        tau_true: o.truth.tau,
        doppler_true_hz: o.truth.doppler_hz,
        position_error_m: o.position_error(),
        position_bound_m: delay_bin_range(scn, r.aoa_hat, r.tau_hat)?,
    })
}
