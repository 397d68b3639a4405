//! Coordinate frames, planar-array manifolds and bistatic geometry.
//!
//! The radar receiver sits at the origin of a local Cartesian frame with `z`
//! pointing up. All lengths are meters; configuration code converts from km.
//! Both arrays are uniform planar arrays with half-wavelength spacing lying in
//! the horizontal plane: the satellite array looks down (nadir boresight), the
//! receiver array looks up (zenith boresight). Angles are `(azimuth, off-boresight)`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Sub};

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cartesian position or direction, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ORIGIN: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_km(km: [f64; 3]) -> Self {
        Self::new(km[0] * 1e3, km[1] * 1e3, km[2] * 1e3)
    }

    pub fn to_km(self) -> [f64; 3] {
        [self.x * 1e-3, self.y * 1e-3, self.z * 1e-3]
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Uniform planar array with half-wavelength element spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpaSpec {
    pub nx: usize,
    pub ny: usize,
}

impl UpaSpec {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!(
                "array dimensions must be positive, got {nx}x{ny}"
            )));
        }
        Ok(Self { nx, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(theta, phi)`: azimuth in (-pi, pi] and off-boresight angle in [0, pi/2].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnglePair {
    pub theta: f64,
    pub phi: f64,
}

impl AnglePair {
    pub const fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi }
    }

    /// Unit vector `[sin(phi)cos(theta), sin(phi)sin(theta), cos(phi)]` in the
    /// array frame with boresight along `+z`.
    pub fn direction(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vec3::new(sp * ct, sp * st, cp)
    }
}

/// Which way the array's boresight points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Satellite array, boresight toward nadir.
    SatelliteDown,
    /// Ground receiver array, boresight toward zenith.
    ReceiverUp,
}

/// Phase progression `pi*sin(phi)cos(theta)` and `pi*sin(phi)sin(theta)` per element step.
fn spatial_frequencies(ang: AnglePair) -> (f64, f64) {
    let sp = ang.phi.sin();
    (PI * sp * ang.theta.cos(), PI * sp * ang.theta.sin())
}

/// Array response `a_x(theta,phi) ⊗ a_y(theta,phi)`. Element `(nx, ny)` lives at
/// index `nx * upa.ny + ny` and equals `exp(-j*pi*(nx sin(phi)cos(theta) + ny sin(phi)sin(theta)))`.
pub fn steering_vector(upa: UpaSpec, ang: AnglePair) -> DVector<Complex64> {
    let (ux, uy) = spatial_frequencies(ang);
    let ax: Vec<Complex64> = (0..upa.nx)
        .map(|i| Complex64::from_polar(1.0, -ux * i as f64))
        .collect();
    let ay: Vec<Complex64> = (0..upa.ny)
        .map(|i| Complex64::from_polar(1.0, -uy * i as f64))
        .collect();
    DVector::from_iterator(upa.len(), ax.iter().flat_map(|&x| ay.iter().map(move |&y| x * y)))
}

/// Analytic partial derivatives `(∂a/∂theta, ∂a/∂phi)` of [`steering_vector`].
pub fn steering_derivatives(upa: UpaSpec, ang: AnglePair) -> (DVector<Complex64>, DVector<Complex64>) {
    let a = steering_vector(upa, ang);
    let (st, ct) = ang.theta.sin_cos();
    let (sp, cp) = ang.phi.sin_cos();
    let mut d_theta = DVector::zeros(upa.len());
    let mut d_phi = DVector::zeros(upa.len());
    for ix in 0..upa.nx {
        for iy in 0..upa.ny {
            let (fx, fy) = (ix as f64, iy as f64);
            let idx = ix * upa.ny + iy;
            // phase = -pi * (fx sp ct + fy sp st)
            let dphase_dtheta = -PI * sp * (-fx * st + fy * ct);
            let dphase_dphi = -PI * cp * (fx * ct + fy * st);
            d_theta[idx] = a[idx] * Complex64::new(0.0, dphase_dtheta);
            d_phi[idx] = a[idx] * Complex64::new(0.0, dphase_dphi);
        }
    }
    (d_theta, d_phi)
}

/// Azimuth of `(dx, dy)` following the explicit five-case arctangent table.
/// Directly below/above (`dx == dy == 0`) the azimuth is undefined; 0 is returned.
pub fn azimuth(dx: f64, dy: f64) -> f64 {
    if dx > 0.0 {
        (dy / dx).atan()
    } else if dx < 0.0 {
        if dy >= 0.0 {
            (dy / dx).atan() + PI
        } else {
            (dy / dx).atan() - PI
        }
    } else if dy > 0.0 {
        FRAC_PI_2
    } else if dy < 0.0 {
        -FRAC_PI_2
    } else {
        0.0
    }
}

/// Angle pair of `to` as seen from an array at `from`.
pub fn angles_from_positions(from: Vec3, to: Vec3, frame: Frame) -> Result<AnglePair> {
    let d = to - from;
    let range = d.norm();
    if range == 0.0 || !range.is_finite() {
        return Err(Error::DegenerateGeometry("coincident points have no direction"));
    }
    let axial = match frame {
        Frame::SatelliteDown => -d.z,
        Frame::ReceiverUp => d.z,
    };
    let phi = (axial / range).clamp(-1.0, 1.0).acos();
    Ok(AnglePair::new(azimuth(d.x, d.y), phi))
}

/// Bistatic angle at the target between the rays toward `sat` and `rx`, in `[0, pi]`.
pub fn bistatic_angle(sat: Vec3, tar: Vec3, rx: Vec3) -> Result<f64> {
    Ok(bistatic_cosine(sat, tar, rx)?.acos())
}

/// Cosine of the bistatic angle, clamped to `[-1, 1]`.
pub fn bistatic_cosine(sat: Vec3, tar: Vec3, rx: Vec3) -> Result<f64> {
    let to_sat = (sat - tar)
        .normalized()
        .ok_or(Error::DegenerateGeometry("target coincides with satellite"))?;
    let to_rx = (rx - tar)
        .normalized()
        .ok_or(Error::DegenerateGeometry("target coincides with receiver"))?;
    Ok(to_sat.dot(to_rx).clamp(-1.0, 1.0))
}

/// Target position on the bistatic ellipsoid along the receiver's line of sight.
///
/// `sat` is expressed relative to the receiver (receiver at the origin) and
/// `aoa_dir` is the unit arrival direction. Returns the target position and
/// its receiver range.
pub fn invert_bistatic_ellipsoid(sat: Vec3, aoa_dir: Vec3, bistatic_range: f64) -> Result<(Vec3, f64)> {
    let baseline = sat.norm();
    if baseline == 0.0 {
        return Err(Error::DegenerateGeometry("satellite at the receiver"));
    }
    if !(bistatic_range > baseline) {
        return Err(Error::InsideBaseline {
            range_m: bistatic_range,
            baseline_m: baseline,
        });
    }
    let d_sat = sat * (1.0 / baseline);
    let cos_eta = d_sat.dot(aoa_dir).clamp(-1.0, 1.0);
    let denom = 2.0 * (bistatic_range - baseline * cos_eta);
    if !(denom > 0.0) {
        return Err(Error::DegenerateColinear);
    }
    let r_rx = (bistatic_range * bistatic_range - baseline * baseline) / denom;
    Ok((aoa_dir * r_rx, r_rx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn steering_at_boresight_is_all_ones() {
        let a = steering_vector(UpaSpec::new(2, 2).unwrap(), AnglePair::new(0.0, 0.0));
        assert_eq!(a.len(), 4);
        for z in a.iter() {
            assert_relative_eq!(z.re, 1.0);
            assert_eq!(z.im, 0.0);
        }
    }

    #[test]
    fn steering_1x2_endfire() {
        let a = steering_vector(UpaSpec::new(1, 2).unwrap(), AnglePair::new(FRAC_PI_2, FRAC_PI_2));
        assert_relative_eq!(a[0].re, 1.0);
        assert_relative_eq!(a[1].re, -1.0, epsilon = 1e-15);
        assert!(a[1].im.abs() < 1e-15);
    }

    #[test]
    fn steering_matches_element_delay_model() {
        // exp(-j 2 pi f_c dtau) with dtau = (nx sin(phi)cos(theta) + ny sin(phi)sin(theta)) / (2 f_c)
        let fc = 2e9;
        let upa = UpaSpec::new(4, 4).unwrap();
        let ang = AnglePair::new(-2.1, 0.73);
        let a = steering_vector(upa, ang);
        for nx in 0..4 {
            for ny in 0..4 {
                let dtau = (nx as f64 * ang.phi.sin() * ang.theta.cos() + ny as f64 * ang.phi.sin() * ang.theta.sin())
                    / (2.0 * fc);
                let expect = Complex64::from_polar(1.0, -2.0 * PI * fc * dtau);
                assert!((a[nx * 4 + ny] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn derivatives_vanish_for_single_element() {
        let (dt, dp) = steering_derivatives(UpaSpec::new(1, 1).unwrap(), AnglePair::new(0.4, 0.3));
        assert_eq!(dt[0], Complex64::new(0.0, 0.0));
        assert_eq!(dp[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn theta_derivative_zero_at_boresight() {
        let (dt, _) = steering_derivatives(UpaSpec::new(3, 4).unwrap(), AnglePair::new(1.2, 0.0));
        assert!(dt.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn aod_table_geometry() {
        let sat = Vec3::from_km([30.0, -30.0, 340.0]);
        let tar = Vec3::from_km([3.0, 3.0, 5.0]);
        let ang = angles_from_positions(sat, tar, Frame::SatelliteDown).unwrap();
        let d = [-27.0f64, 33.0, -335.0];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        assert_relative_eq!(ang.phi, (335.0 / n).acos(), max_relative = 1e-14);
        // x_tar < x_sat, y_tar >= y_sat
        assert_relative_eq!(ang.theta, (33.0f64 / -27.0).atan() + PI, max_relative = 1e-14);
    }

    #[test]
    fn aod_special_cases() {
        let sat = Vec3::from_km([1.0, 2.0, 300.0]);
        let nadir = angles_from_positions(sat, Vec3::from_km([1.0, 2.0, 0.0]), Frame::SatelliteDown).unwrap();
        assert_eq!(nadir, AnglePair::new(0.0, 0.0));
        let north = angles_from_positions(sat, Vec3::from_km([1.0, 9.0, 0.0]), Frame::SatelliteDown).unwrap();
        assert_eq!(north.theta, FRAC_PI_2);
        let south = angles_from_positions(sat, Vec3::from_km([1.0, -9.0, 0.0]), Frame::SatelliteDown).unwrap();
        assert_eq!(south.theta, -FRAC_PI_2);
        assert!(angles_from_positions(sat, sat, Frame::ReceiverUp).is_err());
    }

    #[test]
    fn receiver_frame_mirrors_satellite_frame() {
        let tar = Vec3::from_km([3.0, 3.0, 5.0]);
        let ang = angles_from_positions(Vec3::ORIGIN, tar, Frame::ReceiverUp).unwrap();
        assert_relative_eq!(ang.theta, PI / 4.0, max_relative = 1e-15);
        let dir = ang.direction();
        let unit = tar * (1.0 / tar.norm());
        assert!((dir - unit).norm() < 1e-15);
    }

    #[test]
    fn bistatic_angle_cases() {
        let beta = bistatic_angle(
            Vec3::from_km([0.0, 0.0, 340.0]),
            Vec3::from_km([0.0, 0.0, 5.0]),
            Vec3::ORIGIN,
        );
        assert_eq!(beta.unwrap(), PI);
        // target at (5,0,5) km, sat at (5,0,340), rx at origin-shifted so the rays are orthogonal
        let beta = bistatic_angle(
            Vec3::from_km([5.0, 0.0, 340.0]),
            Vec3::from_km([5.0, 0.0, 5.0]),
            Vec3::from_km([0.0, 0.0, 5.0]),
        );
        assert_relative_eq!(beta.unwrap(), FRAC_PI_2, max_relative = 1e-15);
        assert!(bistatic_angle(Vec3::ORIGIN, Vec3::ORIGIN, Vec3::from_km([1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn bistatic_angle_matches_law_of_cosines() {
        let sat = Vec3::from_km([30.0, -30.0, 340.0]);
        let tar = Vec3::from_km([3.0, 3.0, 5.0]);
        let (r_tx, r_rx, r_los) = (sat.distance(tar), tar.norm(), sat.norm());
        let oracle = ((r_tx * r_tx + r_rx * r_rx - r_los * r_los) / (2.0 * r_tx * r_rx)).acos();
        assert_relative_eq!(
            bistatic_angle(sat, tar, Vec3::ORIGIN).unwrap(),
            oracle,
            max_relative = 1e-12
        );
    }

    #[test]
    fn ellipsoid_inversion_recovers_table_geometry() {
        let sat = Vec3::from_km([30.0, -30.0, 340.0]);
        let tar = Vec3::from_km([3.0, 3.0, 5.0]);
        let aoa = angles_from_positions(Vec3::ORIGIN, tar, Frame::ReceiverUp).unwrap();
        let range = tar.norm() + sat.distance(tar);
        let (est, r_rx) = invert_bistatic_ellipsoid(sat, aoa.direction(), range).unwrap();
        assert!((est - tar).norm() * 1e-3 <= 1e-9);
        assert_relative_eq!(r_rx, tar.norm(), max_relative = 1e-12);
    }

    #[test]
    fn ellipsoid_inversion_errors_and_colinear_limit() {
        let sat = Vec3::from_km([0.0, 0.0, 340.0]);
        let up = Vec3::new(0.0, 0.0, 1.0);
        let baseline = sat.norm();
        assert!(matches!(
            invert_bistatic_ellipsoid(sat, up, baseline),
            Err(Error::InsideBaseline { .. })
        ));
        let range = baseline + 1_000.0;
        let (_, r_rx) = invert_bistatic_ellipsoid(sat, up, range).unwrap();
        assert_relative_eq!(r_rx, (range + baseline) / 2.0, max_relative = 1e-14);
    }
}
