//! Fisher information and Cramér-Rao bounds for the echo angle of arrival.

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;

use crate::channel::RadarLink;
use crate::error::{Error, Result};
use crate::geometry::{self, AnglePair, UpaSpec};
use crate::rates::PrecoderMatrix;

/// Everything the AOA bound needs apart from the precoder.
#[derive(Debug, Clone)]
pub struct CrbContext {
    /// Echo power gain `|alpha|^2`.
    pub alpha2: f64,
    /// Receiver noise power.
    pub sigma_r2: f64,
    /// Number of frame samples `L`.
    pub frames: usize,
    /// Satellite steering vector towards the target.
    pub a_tar: DVector<Complex64>,
    pub b_dtheta: DVector<Complex64>,
    pub b_dphi: DVector<Complex64>,
}

impl CrbContext {
    pub fn new(
        alpha2: f64,
        sigma_r2: f64,
        frames: usize,
        a_tar: DVector<Complex64>,
        (b_dtheta, b_dphi): (DVector<Complex64>, DVector<Complex64>),
    ) -> Result<Self> {
        if frames == 0 || !(alpha2 > 0.0) || !(sigma_r2 > 0.0) {
            return Err(Error::Config(format!(
                "CRB context needs L >= 1 and positive powers (L={frames}, |alpha|^2={alpha2}, sigma^2={sigma_r2})"
            )));
        }
        let ctx = Self {
            alpha2,
            sigma_r2,
            frames,
            a_tar,
            b_dtheta,
            b_dphi,
        };
        if !(ctx.derivative_determinant() > 0.0) {
            return Err(Error::Unidentifiable);
        }
        Ok(ctx)
    }

    pub fn from_link(link: &RadarLink, tx: UpaSpec, rx: UpaSpec, sigma_r2: f64, frames: usize) -> Result<Self> {
        Self::new(
            link.alpha.norm_sqr(),
            sigma_r2,
            frames,
            geometry::steering_vector(tx, link.aod),
            geometry::steering_derivatives(rx, link.aoa),
        )
    }

    fn cross(&self) -> f64 {
        self.b_dtheta.dotc(&self.b_dphi).re
    }

    /// `||b_theta||^2 ||b_phi||^2 - Re(b_theta^H b_phi)^2`, zero when the
    /// derivatives are parallel.
    fn derivative_determinant(&self) -> f64 {
        let (t, p) = (self.b_dtheta.norm_squared(), self.b_dphi.norm_squared());
        let d = t * p - self.cross().powi(2);
        if d <= 1e-12 * t * p {
            0.0
        } else {
            d
        }
    }

    /// Common factor of both bounds, independent of the precoder.
    pub fn q(&self) -> f64 {
        self.sigma_r2 / (2.0 * self.frames as f64 * self.alpha2 * self.derivative_determinant())
    }

    /// Smallest `tr(A_tar sum_j Pbar_j) = ||P^H a_tar||^2` meeting both thresholds.
    pub fn required_target_gain(&self, gamma_theta: f64, gamma_phi: f64) -> f64 {
        let q = self.q();
        (q * self.b_dphi.norm_squared() / gamma_theta).max(q * self.b_dtheta.norm_squared() / gamma_phi)
    }
}

/// Closed-form FIM of `(theta, phi)` at the receiver.
pub fn fim(ctx: &CrbContext, p: &PrecoderMatrix) -> Matrix2<f64> {
    let scale = 2.0 * ctx.frames as f64 * ctx.alpha2 / ctx.sigma_r2 * p.gain_towards(&ctx.a_tar);
    let cross = ctx.cross();
    Matrix2::new(ctx.b_dtheta.norm_squared(), cross, cross, ctx.b_dphi.norm_squared()) * scale
}

/// `(CRB_theta, CRB_phi)`.
pub fn crb_pair(ctx: &CrbContext, p: &PrecoderMatrix) -> Result<(f64, f64)> {
    crb_pair_from_gain(ctx, p.gain_towards(&ctx.a_tar))
}

/// Bounds given the beamforming gain `||P^H a_tar||^2` directly.
pub fn crb_pair_from_gain(ctx: &CrbContext, gain: f64) -> Result<(f64, f64)> {
    if !(gain > 0.0) || ctx.derivative_determinant() == 0.0 {
        return Err(Error::Unidentifiable);
    }
    let q = ctx.q();
    Ok((
        q * ctx.b_dphi.norm_squared() / gain,
        q * ctx.b_dtheta.norm_squared() / gain,
    ))
}

/// Inputs of the finite-difference FIM.
#[derive(Debug, Clone, Copy)]
pub struct EchoModel {
    pub tx: UpaSpec,
    pub rx: UpaSpec,
    pub aod: AnglePair,
    pub aoa: AnglePair,
    pub alpha: Complex64,
    pub sigma_r2: f64,
}

/// Numeric FIM from `mu(xi) = alpha vec(b(xi) a^H X)` with white noise,
/// differentiating `b` by Richardson-extrapolated central differences.
pub fn numeric_fim_oracle(model: &EchoModel, x: &DMatrix<Complex64>) -> Matrix2<f64> {
    let a = geometry::steering_vector(model.tx, model.aod);
    let ax = x.adjoint() * &a; // (a^H X)^H, length L
    let b_at = |t: f64, p: f64| geometry::steering_vector(model.rx, AnglePair { theta: t, phi: p });
    let (t0, p0) = (model.aoa.theta, model.aoa.phi);
    let central = |h: f64, along_theta: bool| -> DVector<Complex64> {
        let (plus, minus) = if along_theta {
            (b_at(t0 + h, p0), b_at(t0 - h, p0))
        } else {
            (b_at(t0, p0 + h), b_at(t0, p0 - h))
        };
        (plus - minus) / Complex64::from(2.0 * h)
    };
    let derivative = |along_theta: bool| {
        let h = 1e-4;
        let coarse = central(h, along_theta);
        let fine = central(h / 2.0, along_theta);
        (fine * Complex64::from(4.0) - coarse) / Complex64::from(3.0)
    };
    // d mu / d xi = alpha vec(db (a^H X)); entries db_n * conj(ax_l)
    let dmu = |db: &DVector<Complex64>| -> DVector<Complex64> {
        let outer = db * ax.adjoint() * model.alpha;
        DVector::from_column_slice(outer.as_slice())
    };
    let d = [dmu(&derivative(true)), dmu(&derivative(false))];
    Matrix2::from_fn(|i, j| 2.0 * d[i].dotc(&d[j]).re / model.sigma_r2)
}
