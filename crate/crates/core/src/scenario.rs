//! Scenario configuration and the derived quantities every experiment needs.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, RadarLink, RadarScene, RadarStructure, RicianParams};
use crate::crb::CrbContext;
use crate::error::{Error, Result};
use crate::geometry::{self, AnglePair, Frame, UpaSpec, Vec3};
use crate::precoder::{OptConfig, OptInputs};
use crate::rates::ModeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "kebab-case",
    rename_all_fields = "kebab-case",
    deny_unknown_fields
)]
pub enum UserPlacement {
    /// Ground positions in kilometers.
    Explicit { positions_km: Vec<[f64; 3]> },
    /// `count` users uniform on a ground disk centered below the satellite.
    UniformDisk { count: usize, diameter_km: f64, seed: u64 },
}

/// Radar processing window and search grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RadarWindow {
    /// Largest delay hypothesis, samples.
    pub tau_max: usize,
    /// Bistatic range at delay zero, km; defaults to the satellite-receiver baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_start_km: Option<f64>,
    /// Target Doppler is drawn on the Doppler grid within `+-doppler_max_hz`.
    pub doppler_max_hz: f64,
    /// Angle grid step for MUSIC, degrees.
    pub angle_step_deg: f64,
    /// Detection threshold on the matched-filter peak-to-median ratio.
    pub peak_to_median_min: f64,
    /// Reflection phase of the target, radians.
    pub alpha_phase: f64,
    /// Extra gain on the echo power `|alpha|^2`, dB. Zero reproduces the
    /// link budget; desk runs use it to stand in for the array and frame
    /// gain lost by shrinking the arrays.
    #[serde(default)]
    pub echo_gain_db: f64,
}

impl Default for RadarWindow {
    fn default() -> Self {
        Self {
            tau_max: 256,
            window_start_km: None,
            doppler_max_hz: 30e3,
            angle_step_deg: 0.5,
            peak_to_median_min: 20.0,
            alpha_phase: 0.7,
            echo_gain_db: 0.0,
        }
    }
}

/// Full experiment description. Lengths in km, powers in dBW, gains in dBi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ScenarioConfig {
    pub satellite_km: [f64; 3],
    pub receiver_km: [f64; 3],
    pub target_km: [f64; 3],
    pub users: UserPlacement,
    pub tx_array: UpaSpec,
    pub rx_array: UpaSpec,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_temp_k: f64,
    pub g_sat_dbi: f64,
    pub g_rx_dbi: f64,
    pub g_ut_dbi: f64,
    pub kappa_db: f64,
    pub rcs_mono_m2: f64,
    pub p_t_dbw: f64,
    /// `(gamma_theta, gamma_phi)`.
    pub crb_threshold: [f64; 2],
    /// Samples per frame `L`.
    pub frames: usize,
    #[serde(with = "mode_label")]
    pub mode: ModeConfig,
    pub structure: RadarStructure,
    #[serde(default)]
    pub radar: RadarWindow,
    /// Seed for echo noise, streams and target Doppler.
    pub seed: u64,
    /// User drops per sweep point.
    #[serde(default = "default_drops")]
    pub drops: usize,
}

fn default_drops() -> usize {
    20
}

mod mode_label {
    use super::ModeConfig;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &ModeConfig, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.label())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ModeConfig, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl ScenarioConfig {
    /// Table I parameters: 8x8 satellite array, 32x32 receiver, four users,
    /// 4096 samples.
    pub fn paper() -> Self {
        Self {
            satellite_km: [30.0, -30.0, 340.0],
            receiver_km: [0.0, 0.0, 0.0],
            target_km: [3.0, 3.0, 5.0],
            users: UserPlacement::UniformDisk {
                count: 4,
                diameter_km: 100.0,
                seed: 1,
            },
            tx_array: UpaSpec { nx: 8, ny: 8 },
            rx_array: UpaSpec { nx: 32, ny: 32 },
            carrier_hz: 2e9,
            bandwidth_hz: 10e6,
            noise_temp_k: 150.0,
            g_sat_dbi: 6.0,
            g_rx_dbi: 3.0,
            g_ut_dbi: 0.0,
            kappa_db: 10.0,
            rcs_mono_m2: 100.0,
            p_t_dbw: 20.0,
            crb_threshold: [8e-7, 8e-7],
            frames: 4096,
            mode: ModeConfig::isac(crate::rates::MultipleAccess::Rsma, true, true),
            structure: RadarStructure::Bistatic,
            radar: RadarWindow::default(),
            seed: 1,
            drops: 20,
        }
    }

    /// Table I geometry and RF constants with a 4x4 satellite array, 8x8
    /// receiver, three users and 512 samples.
    pub fn desk() -> Self {
        Self {
            users: UserPlacement::UniformDisk {
                count: 3,
                diameter_km: 100.0,
                seed: 1,
            },
            tx_array: UpaSpec { nx: 4, ny: 4 },
            rx_array: UpaSpec { nx: 8, ny: 8 },
            frames: 512,
            crb_threshold: [DESK_CRB_THRESHOLD, DESK_CRB_THRESHOLD],
            radar: RadarWindow {
                echo_gain_db: DESK_ECHO_GAIN_DB,
                ..RadarWindow::default()
            },
            ..Self::paper()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier-hz", self.carrier_hz),
            ("bandwidth-hz", self.bandwidth_hz),
            ("noise-temp-k", self.noise_temp_k),
            ("rcs-mono-m2", self.rcs_mono_m2),
            ("crb-threshold", self.crb_threshold[0]),
            ("crb-threshold", self.crb_threshold[1]),
            ("doppler-max-hz", self.radar.doppler_max_hz),
            ("angle-step-deg", self.radar.angle_step_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let finite = self.satellite_km.iter().chain(&self.receiver_km).chain(&self.target_km);
        if finite
            .chain([&self.p_t_dbw, &self.kappa_db, &self.radar.echo_gain_db])
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("positions and powers must be finite".into()));
        }
        UpaSpec::new(self.tx_array.nx, self.tx_array.ny)?;
        UpaSpec::new(self.rx_array.nx, self.rx_array.ny)?;
        if self.frames < 1 || self.radar.tau_max < 1 {
            return Err(Error::Config("frames and tau-max must be at least 1".into()));
        }
        if self.drops < 1 {
            return Err(Error::Config("drops must be at least 1".into()));
        }
        match &self.users {
            UserPlacement::Explicit { positions_km } if positions_km.is_empty() => {
                Err(Error::Config("at least one user is required".into()))
            }
            UserPlacement::UniformDisk { count: 0, .. } => Err(Error::Config("at least one user is required".into())),
            UserPlacement::UniformDisk { diameter_km, .. } if !(*diameter_km > 0.0) => {
                Err(Error::Config("disk diameter must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn p_t_watts(&self) -> f64 {
        channel::db_to_linear(self.p_t_dbw)
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    /// User positions in meters; disk users sit on the ground (z = 0).
    pub fn user_positions(&self, drop: u64) -> Vec<Vec3> {
        match &self.users {
            UserPlacement::Explicit { positions_km } => positions_km.iter().map(|p| Vec3::from_km(*p)).collect(),
            UserPlacement::UniformDisk {
                count,
                diameter_km,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(drop.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
                let radius = diameter_km * 1e3 / 2.0;
                let sat = Vec3::from_km(self.satellite_km);
                (0..*count)
                    .map(|_| {
                        let r = radius * rng.gen::<f64>().sqrt();
                        let t = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                        Vec3::new(sat.x + r * t.cos(), sat.y + r * t.sin(), 0.0)
                    })
                    .collect()
            }
        }
    }
}

/// CRB threshold of the desk profile, rad^2.
pub const DESK_CRB_THRESHOLD: f64 = 6e-6;
/// Echo gain of the desk profile, dB.
pub const DESK_ECHO_GAIN_DB: f64 = 45.0;

/// Derived link quantities for one user drop.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub sat: Vec3,
    pub rx: Vec3,
    pub tar: Vec3,
    pub users: Vec<Vec3>,
    pub user_aods: Vec<AnglePair>,
    pub a_users: Vec<DVector<Complex64>>,
    /// Average channel powers, linear.
    pub gamma: Vec<f64>,
    /// Noise power shared by users and the radar receiver, watts.
    pub noise: f64,
    pub rho: Vec<f64>,
    pub radar_scene: RadarScene,
    pub link: RadarLink,
    pub crb: CrbContext,
}

impl Scenario {
    pub fn build(config: &ScenarioConfig, drop: u64) -> Result<Self> {
        config.validate()?;
        let sat = Vec3::from_km(config.satellite_km);
        let rx = Vec3::from_km(config.receiver_km);
        let tar = Vec3::from_km(config.target_km);
        let users = config.user_positions(drop);
        let noise = channel::noise_power(config.bandwidth_hz, config.noise_temp_k);
        let tx = config.tx_array;
        let mut user_aods = Vec::with_capacity(users.len());
        let mut gamma = Vec::with_capacity(users.len());
        for &u in &users {
            user_aods.push(geometry::angles_from_positions(sat, u, Frame::SatelliteDown)?);
            gamma.push(channel::avg_channel_power(
                config.g_sat_dbi,
                config.g_ut_dbi,
                config.carrier_hz,
                sat.distance(u),
            ));
        }
        let a_users = user_aods
            .iter()
            .map(|&ang| geometry::steering_vector(tx, ang))
            .collect();
        let rho = gamma.iter().map(|g| noise / g).collect();
        let radar_scene = RadarScene {
            sat,
            rx,
            tar,
            g_sat: channel::db_to_linear(config.g_sat_dbi),
            g_rx: channel::db_to_linear(config.g_rx_dbi),
            carrier_hz: config.carrier_hz,
            rcs_mono_m2: config.rcs_mono_m2,
        };
        let mut link = RadarLink::from_scene(&radar_scene, config.radar.alpha_phase)?;
        link.alpha *= channel::db_to_linear(config.radar.echo_gain_db).sqrt();
        let crb = CrbContext::from_link(&link, tx, config.rx_array, noise, config.frames)?;
        Ok(Self {
            config: config.clone(),
            sat,
            rx,
            tar,
            users,
            user_aods,
            a_users,
            gamma,
            noise,
            rho,
            radar_scene,
            link,
            crb,
        })
    }

    pub fn opt_inputs(&self) -> OptInputs {
        OptInputs {
            a_users: self.a_users.clone(),
            rho: self.rho.clone(),
            crb: Some(self.crb.clone()),
        }
    }

    pub fn opt_config(&self) -> OptConfig {
        let t = self.config.crb_threshold;
        OptConfig::new(self.config.p_t_watts(), (t[0], t[1]), self.config.mode)
    }

    pub fn rician(&self, k: usize) -> Result<RicianParams> {
        RicianParams::new(channel::db_to_linear(self.config.kappa_db), self.gamma[k])
    }

    /// Bistatic range at delay zero, meters.
    pub fn window_start(&self) -> f64 {
        self.config.radar.window_start_km.map_or(self.link.r_los, |km| km * 1e3)
    }

    /// Target delay in samples relative to the window start, rounded to the
    /// nearest sample.
    pub fn target_delay(&self) -> Result<usize> {
        let ts = self.config.sample_period();
        let tau = ((self.link.bistatic_range() - self.window_start()) / (channel::SPEED_OF_LIGHT * ts)).round();
        let tau_max = self.config.radar.tau_max;
        if tau < 1.0 || tau > tau_max as f64 {
            return Err(Error::DelayOutOfRange {
                tau: tau.max(0.0) as usize,
                tau_max,
            });
        }
        Ok(tau as usize)
    }

    /// Doppler grid step `1 / (L T_s)`.
    pub fn doppler_step(&self) -> f64 {
        1.0 / (self.config.frames as f64 * self.config.sample_period())
    }

    /// Doppler grid covering `+-doppler_max_hz`.
    pub fn doppler_grid(&self) -> Vec<f64> {
        let step = self.doppler_step();
        let half = (self.config.radar.doppler_max_hz / step).floor() as i64;
        (-half..=half).map(|i| i as f64 * step).collect()
    }

    /// Target Doppler drawn uniformly from the Doppler grid.
    pub fn target_doppler(&self, trial: u64) -> f64 {
        let grid = self.doppler_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ trial.wrapping_mul(0xD1B5_4A32_D192_ED03));
        grid[rng.gen_range(0..grid.len())]
    }
}
