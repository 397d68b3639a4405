//! Satellite-to-user Rician channels, radar link budgets and noise powers.
//!
//! Everything here is linear-domain; dB conversions happen at the config boundary.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, AnglePair, Frame, UpaSpec, Vec3};

pub const SPEED_OF_LIGHT: f64 = 3e8;
pub const BOLTZMANN: f64 = 1.38e-23;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Free-space average channel power `G_sat G_ut (c / (4 pi f_c d))^2`.
pub fn avg_channel_power(g_sat_dbi: f64, g_ut_dbi: f64, carrier_hz: f64, distance_m: f64) -> f64 {
    let fs = SPEED_OF_LIGHT / (4.0 * PI * carrier_hz * distance_m);
    db_to_linear(g_sat_dbi) * db_to_linear(g_ut_dbi) * fs * fs
}

/// Thermal noise power `k_B B T`, watts.
pub fn noise_power(bandwidth_hz: f64, temp_k: f64) -> f64 {
    BOLTZMANN * bandwidth_hz * temp_k
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RicianParams {
    /// Rician factor, linear.
    pub kappa: f64,
    /// Average channel power `E|g|^2`, linear.
    pub gamma: f64,
}

impl RicianParams {
    pub fn new(kappa: f64, gamma: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !(gamma > 0.0) {
            return Err(Error::Config(format!(
                "invalid Rician parameters kappa={kappa}, gamma={gamma}"
            )));
        }
        Ok(Self { kappa, gamma })
    }

    /// Draw `g` with i.i.d. real/imaginary parts `N(sqrt(kappa gamma / 2(kappa+1)), gamma / 2(kappa+1))`.
    pub fn sample_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let mean = (self.kappa * self.gamma / (2.0 * (self.kappa + 1.0))).sqrt();
        let std = (self.gamma / (2.0 * (self.kappa + 1.0))).sqrt();
        let n = Normal::new(mean, std).expect("finite Rician moments");
        Complex64::new(n.sample(rng), n.sample(rng))
    }
}

/// One user's downlink: `h = g * a`.
#[derive(Debug, Clone)]
pub struct CommChannel {
    pub g: Complex64,
    pub a: DVector<Complex64>,
    /// Noise-to-average-channel-power ratio `sigma_c^2 / gamma`.
    pub rho: f64,
}

impl CommChannel {
    pub fn h(&self) -> DVector<Complex64> {
        &self.a * self.g
    }
}

pub fn sample_comm_channel(
    params: RicianParams,
    aod: AnglePair,
    upa: UpaSpec,
    noise_power: f64,
    seed: u64,
) -> CommChannel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CommChannel {
        g: params.sample_gain(&mut rng),
        a: geometry::steering_vector(upa, aod),
        rho: noise_power / params.gamma,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadarStructure {
    Bistatic,
    Monostatic,
}

/// Positions and RF constants needed by the radar equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarScene {
    pub sat: Vec3,
    pub rx: Vec3,
    pub tar: Vec3,
    /// Satellite antenna gain, linear.
    pub g_sat: f64,
    /// Radar receiver antenna gain, linear.
    pub g_rx: f64,
    pub carrier_hz: f64,
    pub rcs_mono_m2: f64,
}

/// `G_sat G_R c^2 sigma / ((4 pi)^3 R_tx^2 R_rx^2 f_c^2)`.
pub fn radar_equation(g_sat: f64, g_rx: f64, carrier_hz: f64, rcs_m2: f64, r_tx: f64, r_rx: f64) -> f64 {
    let four_pi = 4.0 * PI;
    g_sat * g_rx * SPEED_OF_LIGHT * SPEED_OF_LIGHT * rcs_m2
        / (four_pi.powi(3) * r_tx * r_tx * r_rx * r_rx * carrier_hz * carrier_hz)
}

impl RadarScene {
    pub fn r_tx(&self) -> f64 {
        self.sat.distance(self.tar)
    }

    pub fn r_rx(&self) -> f64 {
        self.rx.distance(self.tar)
    }

    pub fn r_los(&self) -> f64 {
        self.rx.distance(self.sat)
    }

    /// Bistatic RCS `sigma_mono cos(beta/2)`, using the half-angle identity so
    /// that opposite rays give exactly zero.
    pub fn bistatic_rcs(&self) -> Result<f64> {
        let cos_beta = geometry::bistatic_cosine(self.sat, self.tar, self.rx)?;
        Ok(self.rcs_mono_m2 * ((1.0 + cos_beta) / 2.0).max(0.0).sqrt())
    }

    /// Echo power gain `|alpha|^2`.
    pub fn reflection_power(&self, structure: RadarStructure) -> Result<f64> {
        let r_tx = self.r_tx();
        if r_tx == 0.0 {
            return Err(Error::DegenerateGeometry("target coincides with satellite"));
        }
        match structure {
            RadarStructure::Bistatic => {
                let r_rx = self.r_rx();
                if r_rx == 0.0 {
                    return Err(Error::DegenerateGeometry("target coincides with receiver"));
                }
                let rcs = self.bistatic_rcs()?;
                Ok(radar_equation(self.g_sat, self.g_rx, self.carrier_hz, rcs, r_tx, r_rx))
            }
            RadarStructure::Monostatic => Ok(radar_equation(
                self.g_sat,
                self.g_rx,
                self.carrier_hz,
                self.rcs_mono_m2,
                r_tx,
                r_tx,
            )),
        }
    }

    /// Echo path loss in dB, `-10 log10 |alpha|^2`.
    pub fn echo_path_loss_db(&self, structure: RadarStructure) -> Result<f64> {
        Ok(-linear_to_db(self.reflection_power(structure)?))
    }

    pub fn with_target(&self, tar: Vec3) -> Self {
        Self { tar, ..*self }
    }
}

/// Echo path loss for a target at `(x, y)` swept over altitudes (meters).
pub fn echo_path_loss_curve(
    scene: &RadarScene,
    target_xy: (f64, f64),
    altitudes_m: &[f64],
    structure: RadarStructure,
) -> Result<Vec<(f64, f64)>> {
    altitudes_m
        .iter()
        .map(|&alt| {
            if !(alt > 0.0) {
                return Err(Error::Config(format!("altitude must be positive, got {alt}")));
            }
            let s = scene.with_target(Vec3::new(target_xy.0, target_xy.1, alt));
            Ok((alt, s.echo_path_loss_db(structure)?))
        })
        .collect()
}

/// Point-target radar link `H_R = alpha b(aoa) a(aod)^H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarLink {
    pub alpha: Complex64,
    pub aod: AnglePair,
    pub aoa: AnglePair,
    pub r_tx: f64,
    pub r_rx: f64,
    pub r_los: f64,
    pub beta: f64,
}

impl RadarLink {
    /// Bistatic link with reflection phase `phase` (radians).
    pub fn from_scene(scene: &RadarScene, phase: f64) -> Result<Self> {
        let alpha2 = scene.reflection_power(RadarStructure::Bistatic)?;
        Ok(Self {
            alpha: Complex64::from_polar(alpha2.sqrt(), phase),
            aod: geometry::angles_from_positions(scene.sat, scene.tar, Frame::SatelliteDown)?,
            aoa: geometry::angles_from_positions(scene.rx, scene.tar, Frame::ReceiverUp)?,
            r_tx: scene.r_tx(),
            r_rx: scene.r_rx(),
            r_los: scene.r_los(),
            beta: geometry::bistatic_angle(scene.sat, scene.tar, scene.rx)?,
        })
    }

    pub fn bistatic_range(&self) -> f64 {
        self.r_tx + self.r_rx
    }
}
