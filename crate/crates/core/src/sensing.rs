//! One sensing trial at a scenario: transmit frame, echo, MUSIC and the
//! joint matched filter.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::Result;
use crate::estimation::{self, AngleGrid, MatchedFilterOutput, MatchedFilterSetup, MusicSpectrum};
use crate::geometry::{self, AnglePair, Frame, Vec3};
use crate::rates::PrecoderMatrix;
use crate::scenario::Scenario;
use crate::waveform::{self, EchoFrame, EchoParams};

type CMat = DMatrix<Complex64>;

fn mix(seed: u64, trial: u64, salt: u64) -> u64 {
    seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt
}

/// Precoded frame `X = P S` for a trial.
pub fn transmit_frame(scn: &Scenario, precoder: &PrecoderMatrix, trial: u64) -> Result<CMat> {
    let cfg = &scn.config;
    let streams = waveform::generate_streams(precoder.users(), cfg.frames, mix(cfg.seed, trial, 0x51), cfg.mode)?;
    Ok(precoder.matrix() * streams.s)
}

/// Echo with on-grid delay and Doppler and thermal noise.
pub fn echo_for_trial(scn: &Scenario, x: &CMat, trial: u64) -> Result<EchoFrame> {
    let cfg = &scn.config;
    let p = EchoParams {
        tau: scn.target_delay()?,
        doppler_hz: scn.target_doppler(trial),
        sample_period: cfg.sample_period(),
        tau_max: cfg.radar.tau_max,
        noise_var: scn.noise,
        seed: mix(cfg.seed, trial, 0xEC40),
    };
    waveform::synthesize_echo(x, &scn.link, cfg.tx_array, cfg.rx_array, &p)
}

/// Search grids of a scenario: hemisphere angles, delays `1..=tau_max`, the
/// scenario's Doppler grid.
#[derive(Debug, Clone)]
pub struct SearchGrids {
    pub angles: AngleGrid,
    pub delays: Vec<usize>,
    pub dopplers: Vec<f64>,
}

impl SearchGrids {
    pub fn for_scenario(scn: &Scenario) -> Result<Self> {
        Ok(Self {
            angles: AngleGrid::hemisphere(scn.config.radar.angle_step_deg.to_radians())?,
            delays: (1..=scn.config.radar.tau_max).collect(),
            dopplers: scn.doppler_grid(),
        })
    }
}

/// Ground truth of a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub tau: usize,
    pub doppler_hz: f64,
    pub aoa: AnglePair,
    pub aod: AnglePair,
    pub position: Vec3,
}

#[derive(Debug, Clone)]
pub struct SensingOutcome {
    pub truth: Truth,
    pub music: MusicSpectrum,
    pub matched: MatchedFilterOutput,
}

impl SensingOutcome {
    /// Grid steps between the MUSIC peak and the grid cell nearest the true AOA,
    /// largest over the two axes.
    pub fn aoa_cell_error(&self, grid: &AngleGrid) -> usize {
        let (ti, pj) = grid.nearest(self.truth.aoa);
        let (ei, ej) = self.music.argmax;
        let nt = grid.theta.len();
        // azimuth wraps around
        let dt = ti.abs_diff(ei).min(nt - ti.abs_diff(ei));
        dt.max(pj.abs_diff(ej))
    }

    pub fn bins_recovered(&self) -> bool {
        let r = &self.matched.report;
        r.tau_hat == self.truth.tau && r.v_hat == self.truth.doppler_hz
    }

    pub fn position_error(&self) -> f64 {
        self.matched.report.position_hat.distance(self.truth.position)
    }
}

/// MUSIC on the echo covariance, then the matched filter on the echo combined
/// towards the MUSIC estimate. `aoa_override` replaces the MUSIC estimate.
pub fn estimate(
    scn: &Scenario,
    grids: &SearchGrids,
    x: &CMat,
    echo: &EchoFrame,
    aoa_override: Option<AnglePair>,
) -> Result<(MusicSpectrum, MatchedFilterOutput)> {
    let cfg = &scn.config;
    let r = estimation::sample_covariance(echo)?;
    let music = estimation::music_spectrum(&r, cfg.rx_array, &grids.angles)?;
    let aoa = aoa_override.unwrap_or(music.aoa);
    let y = waveform::receive_combine(echo, &geometry::steering_vector(cfg.rx_array, aoa))?;
    let setup = MatchedFilterSetup {
        x,
        tx: cfg.tx_array,
        sat: scn.sat,
        rx: scn.rx,
        window_start: scn.window_start(),
        sample_period: cfg.sample_period(),
        delays: &grids.delays,
        dopplers: &grids.dopplers,
        peak_to_median_min: cfg.radar.peak_to_median_min,
    };
    let matched = estimation::matched_filter_joint(&setup, &y, aoa)?;
    Ok((music, matched))
}

/// Full trial with the scenario's precoder.
pub fn run_trial(
    scn: &Scenario,
    grids: &SearchGrids,
    precoder: &PrecoderMatrix,
    trial: u64,
    aoa_override: Option<AnglePair>,
) -> Result<SensingOutcome> {
    let x = transmit_frame(scn, precoder, trial)?;
    let echo = echo_for_trial(scn, &x, trial)?;
    let (music, matched) = estimate(scn, grids, &x, &echo, aoa_override)?;
    let truth = Truth {
        tau: echo.tau,
        doppler_hz: echo.doppler_hz,
        aoa: scn.link.aoa,
        aod: geometry::angles_from_positions(scn.sat, scn.tar, Frame::SatelliteDown)?,
        position: scn.tar,
    };
    Ok(SensingOutcome { truth, music, matched })
}
