//! Rate-splitting downlink rates: instantaneous SINR rates and the ergodic
//! upper bounds driven only by steering vectors and noise ratios.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, AnglePair, UpaSpec};

/// Dual-functional precoder `P = [p_1 .. p_K, p_c, p_R]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderMatrix {
    cols: DMatrix<Complex64>,
}

impl PrecoderMatrix {
    /// Wrap an `N x (K+2)` matrix.
    pub fn from_matrix(cols: DMatrix<Complex64>) -> Result<Self> {
        if cols.ncols() < 3 || cols.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "precoder needs N x (K+2) with K >= 1, got {}x{}",
                cols.nrows(),
                cols.ncols()
            )));
        }
        Ok(Self { cols })
    }

    pub fn zeros(n_tx: usize, users: usize) -> Self {
        Self {
            cols: DMatrix::zeros(n_tx, users + 2),
        }
    }

    pub fn n_tx(&self) -> usize {
        self.cols.nrows()
    }

    pub fn users(&self) -> usize {
        self.cols.ncols() - 2
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.cols
    }

    pub fn private(&self, k: usize) -> DVector<Complex64> {
        self.cols.column(k).into_owned()
    }

    pub fn common(&self) -> DVector<Complex64> {
        self.cols.column(self.users()).into_owned()
    }

    pub fn radar(&self) -> DVector<Complex64> {
        self.cols.column(self.users() + 1).into_owned()
    }

    /// Column `j` in stream order (`0..K` private, `K` common, `K+1` radar).
    pub fn column(&self, j: usize) -> DVector<Complex64> {
        self.cols.column(j).into_owned()
    }

    pub fn set_column(&mut self, j: usize, v: &DVector<Complex64>) {
        self.cols.set_column(j, v);
    }

    pub fn total_power(&self) -> f64 {
        self.cols.norm_squared()
    }

    /// `||P^H a||^2`.
    pub fn gain_towards(&self, a: &DVector<Complex64>) -> f64 {
        (self.cols.adjoint() * a).norm_squared()
    }

    /// `|a^H p_j|^2` for every column.
    pub fn column_gains(&self, a: &DVector<Complex64>) -> Vec<f64> {
        (0..self.cols.ncols())
            .map(|j| self.cols.column(j).dotc(a).norm_sqr())
            .collect()
    }

    /// Zero the columns disabled by `mode`.
    pub fn apply_mode(&mut self, mode: &ModeConfig) {
        let k = self.users();
        if !mode.has_common() {
            self.cols.column_mut(k).fill(Complex64::new(0.0, 0.0));
        }
        if !mode.has_radar_sequence() {
            self.cols.column_mut(k + 1).fill(Complex64::new(0.0, 0.0));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MultipleAccess {
    Rsma,
    Sdma,
}

/// One cell of the transmission-mode table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub multiple_access: MultipleAccess,
    pub radar_sequence: bool,
    pub sic_of_radar: bool,
    pub comm_only: bool,
}

impl ModeConfig {
    pub const fn isac(multiple_access: MultipleAccess, radar_sequence: bool, sic_of_radar: bool) -> Self {
        Self {
            multiple_access,
            radar_sequence,
            sic_of_radar,
            comm_only: false,
        }
    }

    pub const fn comm_only(multiple_access: MultipleAccess) -> Self {
        Self {
            multiple_access,
            radar_sequence: false,
            sic_of_radar: false,
            comm_only: true,
        }
    }

    /// The eight transmission modes, RSMA first.
    pub fn table() -> [ModeConfig; 8] {
        let mut out = [Self::comm_only(MultipleAccess::Rsma); 8];
        for (i, ma) in [MultipleAccess::Rsma, MultipleAccess::Sdma].into_iter().enumerate() {
            out[4 * i] = Self::comm_only(ma);
            out[4 * i + 1] = Self::isac(ma, true, true);
            out[4 * i + 2] = Self::isac(ma, true, false);
            out[4 * i + 3] = Self::isac(ma, false, false);
        }
        out
    }

    /// 0 when users cancel the radar sequence, 1 otherwise.
    pub fn delta_sic(&self) -> f64 {
        if self.has_radar_sequence() && !self.sic_of_radar {
            1.0
        } else {
            0.0
        }
    }

    pub fn has_common(&self) -> bool {
        self.multiple_access == MultipleAccess::Rsma
    }

    pub fn has_radar_sequence(&self) -> bool {
        self.radar_sequence && !self.comm_only
    }

    pub fn has_crb(&self) -> bool {
        !self.comm_only
    }

    /// Stream indices (`0..K`, `K` common, `K+1` radar) that may carry power.
    pub fn active_streams(&self, users: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..users).collect();
        if self.has_common() {
            v.push(users);
        }
        if self.has_radar_sequence() {
            v.push(users + 1);
        }
        v
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ModeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ma = match self.multiple_access {
            MultipleAccess::Rsma => "rsma",
            MultipleAccess::Sdma => "sdma",
        };
        let rest = if self.comm_only {
            "comm-only"
        } else if !self.radar_sequence {
            "no-sr"
        } else if self.sic_of_radar {
            "sr-sic"
        } else {
            "sr-nosic"
        };
        write!(f, "{ma}-{rest}")
    }
}

impl std::str::FromStr for ModeConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModeConfig::table()
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }
}

/// Per-user rates in bits/s/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePair {
    pub common: Vec<f64>,
    pub private: Vec<f64>,
}

/// Common and private rates from signal and interference powers at one user.
/// `gains[j]` is `|h^H p_j|^2` in stream order.
fn rates_from_gains(gains: &[f64], k: usize, users: usize, delta_sic: f64, noise: f64) -> (f64, f64) {
    let private_sum: f64 = gains[..users].iter().sum();
    let radar = delta_sic * gains[users + 1];
    let common = (1.0 + gains[users] / (private_sum + radar + noise)).log2();
    let private = (1.0 + gains[k] / (private_sum - gains[k] + radar + noise)).log2();
    (common, private)
}

/// Instantaneous common and private rates for channels `h_k`.
pub fn instantaneous_rates(
    h: &[DVector<Complex64>],
    p: &PrecoderMatrix,
    delta_sic: f64,
    noise: f64,
) -> Result<RatePair> {
    let users = p.users();
    if h.len() != users || h.iter().any(|v| v.len() != p.n_tx()) {
        return Err(Error::Dimension(format!(
            "{} channels for {} users of size {}",
            h.len(),
            users,
            p.n_tx()
        )));
    }
    let (common, private) = h
        .iter()
        .enumerate()
        .map(|(k, hk)| rates_from_gains(&p.column_gains(hk), k, users, delta_sic, noise))
        .unzip();
    Ok(RatePair { common, private })
}

/// Ergodic upper bounds from steering vectors `a_k` and noise ratios `rho_k`.
pub fn ergodic_bounds(a: &[DVector<Complex64>], rho: &[f64], p: &PrecoderMatrix, delta_sic: f64) -> Result<RatePair> {
    let users = p.users();
    if a.len() != users || rho.len() != users || a.iter().any(|v| v.len() != p.n_tx()) {
        return Err(Error::Dimension(format!(
            "{} steering vectors, {} noise ratios, {} users",
            a.len(),
            rho.len(),
            users
        )));
    }
    if rho.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Config("noise ratios must be positive".into()));
    }
    let (common, private) = a
        .iter()
        .zip(rho)
        .enumerate()
        .map(|(k, (ak, &r))| rates_from_gains(&p.column_gains(ak), k, users, delta_sic, r))
        .unzip();
    Ok(RatePair { common, private })
}

/// Ergodic bounds with steering vectors built from AOD pairs.
pub fn ergodic_bounds_from_aods(
    aods: &[AnglePair],
    upa: UpaSpec,
    rho: &[f64],
    p: &PrecoderMatrix,
    delta_sic: f64,
) -> Result<RatePair> {
    let a: Vec<_> = aods.iter().map(|&ang| geometry::steering_vector(upa, ang)).collect();
    ergodic_bounds(&a, rho, p, delta_sic)
}

/// `min_k (R_p,k + C_k)` under the common-decodability condition.
pub fn min_total_rate(bounds: &RatePair, alloc: &[f64]) -> Result<f64> {
    if alloc.len() != bounds.private.len() {
        return Err(Error::Dimension(format!(
            "{} allocations for {} users",
            alloc.len(),
            bounds.private.len()
        )));
    }
    if alloc.iter().any(|&c| c < 0.0) {
        return Err(Error::Config("common-rate portions must be nonnegative".into()));
    }
    let sum: f64 = alloc.iter().sum();
    let min_common = bounds.common.iter().copied().fold(f64::INFINITY, f64::min);
    if sum > min_common * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::InfeasibleAllocation { sum, min_common });
    }
    Ok(bounds
        .private
        .iter()
        .zip(alloc)
        .map(|(r, c)| r + c)
        .fold(f64::INFINITY, f64::min))
}

/// Normalized transmit beampatterns at one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSample {
    pub angle: AnglePair,
    pub radar: f64,
    pub common: f64,
    pub private: f64,
}

pub fn beampatterns(p: &PrecoderMatrix, upa: UpaSpec, grid: &[AnglePair]) -> Result<Vec<BeamSample>> {
    if grid.is_empty() {
        return Err(Error::Config("empty beampattern grid".into()));
    }
    if upa.len() != p.n_tx() {
        return Err(Error::Dimension(format!(
            "array has {} elements, precoder {}",
            upa.len(),
            p.n_tx()
        )));
    }
    let norm = p.total_power();
    let users = p.users();
    Ok(grid
        .iter()
        .map(|&angle| {
            let g = p.column_gains(&geometry::steering_vector(upa, angle));
            let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            BeamSample {
                angle,
                radar: g[users + 1] * scale,
                common: g[users] * scale,
                private: g[..users].iter().sum::<f64>() * scale,
            }
        })
        .collect())
}

/// Share of total power per column, in stream order.
pub fn power_ratios(p: &PrecoderMatrix) -> Vec<f64> {
    let total = p.total_power();
    (0..p.users() + 2)
        .map(|j| {
            if total > 0.0 {
                p.matrix().column(j).norm_squared() / total
            } else {
                0.0
            }
        })
        .collect()
}
