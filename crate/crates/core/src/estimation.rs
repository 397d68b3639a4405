//! MUSIC angle-of-arrival estimation and the joint delay-Doppler-AOD matched filter.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::SPEED_OF_LIGHT;
use crate::error::{Error, Result};
use crate::geometry::{self, AnglePair, Frame, UpaSpec, Vec3};
use crate::waveform::EchoFrame;

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

/// Rectangular search grid over azimuth and off-boresight angle, radians.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl AngleGrid {
    pub fn new(theta: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let increasing =
            |v: &[f64]| !v.is_empty() && v.windows(2).all(|w| w[1] > w[0]) && v.iter().all(|x| x.is_finite());
        if !increasing(&theta) || !increasing(&phi) {
            return Err(Error::Config(
                "angle grid axes must be non-empty and strictly increasing".into(),
            ));
        }
        Ok(Self { theta, phi })
    }

    /// Azimuth over `(-pi, pi]` and off-boresight angle over `[0, pi/2]`
    /// with the same step on both axes.
    pub fn hemisphere(step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= PI / 2.0) {
            return Err(Error::Config(format!("angle step {step} rad out of range")));
        }
        let n_theta = (2.0 * PI / step).round() as usize;
        let n_phi = (PI / 2.0 / step).round() as usize + 1;
        Self::new(
            (1..=n_theta).map(|i| -PI + i as f64 * step).collect(),
            (0..n_phi).map(|i| i as f64 * step).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.theta.len() * self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn angle(&self, i: usize, j: usize) -> AnglePair {
        AnglePair::new(self.theta[i], self.phi[j])
    }

    /// Indices of the grid point closest to `ang` on each axis.
    pub fn nearest(&self, ang: AnglePair) -> (usize, usize) {
        let closest = |axis: &[f64], x: f64| {
            let mut best = 0;
            for (i, &v) in axis.iter().enumerate() {
                if (v - x).abs() < (axis[best] - x).abs() {
                    best = i;
                }
            }
            best
        };
        (closest(&self.theta, ang.theta), closest(&self.phi, ang.phi))
    }
}

/// `R = Y Y^H / (L + tau_max)`.
pub fn sample_covariance(echo: &EchoFrame) -> Result<CMat> {
    let cols = echo.y.ncols();
    if cols == 0 {
        return Err(Error::Dimension("echo frame has no columns".into()));
    }
    let r = &echo.y * echo.y.adjoint() / Complex64::from(cols as f64);
    Ok((&r + r.adjoint()) * Complex64::from(0.5))
}

/// MUSIC pseudo-spectrum on a grid, `values[(i, j)]` at `(theta[i], phi[j])`.
#[derive(Debug, Clone)]
pub struct MusicSpectrum {
    pub values: DMatrix<f64>,
    pub argmax: (usize, usize),
    pub aoa: AnglePair,
    /// Unit signal-subspace basis vector.
    pub signal: CVec,
}

impl MusicSpectrum {
    /// `b^H U_n U_n^H b` at `ang`.
    pub fn projector_residual(&self, rx: UpaSpec, ang: AnglePair) -> f64 {
        noise_projection(&self.signal, &geometry::steering_vector(rx, ang))
    }

    /// Peak value over the largest value outside the main lobe, where the
    /// main lobe holds the directions whose normalized array correlation with
    /// the peak is at least one half.
    pub fn peak_to_sidelobe(&self, rx: UpaSpec, grid: &AngleGrid) -> f64 {
        let n = rx.len() as f64;
        let b0 = geometry::steering_vector(rx, self.aoa);
        let mut side = 0.0f64;
        for i in 0..grid.theta.len() {
            for j in 0..grid.phi.len() {
                let b = geometry::steering_vector(rx, grid.angle(i, j));
                if b0.dotc(&b).norm_sqr() / (n * n) < 0.5 {
                    side = side.max(self.values[(i, j)]);
                }
            }
        }
        self.values[self.argmax] / side
    }

    /// Peak value over the median of the spectrum.
    pub fn peak_to_median(&self) -> f64 {
        let peak = self.values[self.argmax];
        peak / median(self.values.as_slice())
    }
}

/// `||b||^2 - |u^H b|^2`: projection onto the orthogonal complement of the
/// one-dimensional signal subspace spanned by the unit vector `u`.
fn noise_projection(u: &CVec, b: &CVec) -> f64 {
    (b.norm_squared() - u.dotc(b).norm_sqr()).max(0.0)
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// MUSIC with a one-dimensional signal subspace: `1 / (b^H U_n U_n^H b)`
/// with `U_n` the `N_Rx - 1` minor eigenvectors of `R`. Ties go to the first
/// grid point in `(theta, phi)` order.
pub fn music_spectrum(r: &CMat, rx: UpaSpec, grid: &AngleGrid) -> Result<MusicSpectrum> {
    let n = rx.len();
    if r.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "covariance {}x{} for {n} receive elements",
            r.nrows(),
            r.ncols()
        )));
    }
    let eig = ((r + r.adjoint()) * Complex64::from(0.5)).symmetric_eigen();
    let top = (0..n).fold(0, |b, i| if eig.eigenvalues[i] > eig.eigenvalues[b] { i } else { b });
    let signal: CVec = eig.eigenvectors.column(top).into_owned();
    let mut values = DMatrix::zeros(grid.theta.len(), grid.phi.len());
    let mut argmax = (0, 0);
    for i in 0..grid.theta.len() {
        for j in 0..grid.phi.len() {
            let b = geometry::steering_vector(rx, grid.angle(i, j));
            let v = 1.0 / noise_projection(&signal, &b).max(f64::MIN_POSITIVE);
            values[(i, j)] = v;
            if v > values[argmax] {
                argmax = (i, j);
            }
        }
    }
    Ok(MusicSpectrum {
        aoa: grid.angle(argmax.0, argmax.1),
        values,
        argmax,
        signal,
    })
}

/// Known geometry and signal of the matched filter.
#[derive(Debug, Clone)]
pub struct MatchedFilterSetup<'a> {
    /// Transmitted signal `X`, `N_Tx x L`.
    pub x: &'a CMat,
    pub tx: UpaSpec,
    pub sat: Vec3,
    pub rx: Vec3,
    /// Bistatic range at delay zero, meters.
    pub window_start: f64,
    pub sample_period: f64,
    pub delays: &'a [usize],
    pub dopplers: &'a [f64],
    pub peak_to_median_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub aoa_hat: AnglePair,
    pub tau_hat: usize,
    pub v_hat: f64,
    pub aod_hat: AnglePair,
    pub position_hat: Vec3,
    pub peak_to_median: f64,
    /// `peak_to_median` reached the detection threshold.
    pub detected: bool,
    /// Delay cells whose ellipsoid inversion failed.
    pub invalid_delays: Vec<usize>,
}

/// Matched-filter surface `|y^H y_ref|`, rows over delays and columns over
/// Dopplers; invalid delays hold `-inf`.
#[derive(Debug, Clone)]
pub struct MatchedFilterOutput {
    pub report: EstimationReport,
    pub scores: DMatrix<f64>,
}

/// Target position and AOD implied by delay `tau` along the arrival direction.
pub fn geometry_for_delay(setup: &MatchedFilterSetup, aoa: AnglePair, tau: usize) -> Result<(Vec3, AnglePair)> {
    let range = setup.window_start + tau as f64 * SPEED_OF_LIGHT * setup.sample_period;
    let (rel, _) = geometry::invert_bistatic_ellipsoid(setup.sat - setup.rx, aoa.direction(), range)?;
    let pos = setup.rx + rel;
    Ok((
        pos,
        geometry::angles_from_positions(setup.sat, pos, Frame::SatelliteDown)?,
    ))
}

/// Joint delay-Doppler search with the AOD of every delay hypothesis taken
/// from the bistatic ellipsoid. `y` is the combined row `b_hat^H Y`.
/// Ties go to the smallest `(tau, v)`.
pub fn matched_filter_joint(setup: &MatchedFilterSetup, y: &CVec, aoa_hat: AnglePair) -> Result<MatchedFilterOutput> {
    if setup.delays.is_empty() || setup.dopplers.is_empty() {
        return Err(Error::Config("delay and Doppler grids must be non-empty".into()));
    }
    let frames = setup.x.ncols();
    let tau_top = *setup.delays.iter().max().expect("non-empty");
    if y.len() < frames + tau_top {
        return Err(Error::Dimension(format!(
            "combined echo of length {} for L = {frames} and delay {tau_top}",
            y.len()
        )));
    }
    let (nd, nv) = (setup.delays.len(), setup.dopplers.len());
    let mut scores = DMatrix::from_element(nd, nv, f64::NEG_INFINITY);
    let mut invalid = Vec::new();
    let mut best: Option<(usize, usize, Vec3, AnglePair)> = None;
    // delays and Dopplers are visited in ascending order so the first strict
    // maximum is the lexicographically smallest
    let mut order_d: Vec<usize> = (0..nd).collect();
    order_d.sort_by_key(|&i| setup.delays[i]);
    let mut order_v: Vec<usize> = (0..nv).collect();
    order_v.sort_by(|&a, &b| setup.dopplers[a].total_cmp(&setup.dopplers[b]));
    for &i in &order_d {
        let tau = setup.delays[i];
        let Ok((pos, aod)) = geometry_for_delay(setup, aoa_hat, tau) else {
            invalid.push(tau);
            continue;
        };
        let a = geometry::steering_vector(setup.tx, aod);
        let s: Vec<Complex64> = setup.x.column_iter().map(|c| a.dotc(&c)).collect();
        for &j in &order_v {
            let w = 2.0 * PI * setup.dopplers[j] * setup.sample_period;
            // y^H y_ref = sum_l y^H[l + tau] s[l] exp(j w l), with y stored as the row y^H
            let mut acc = Complex64::from(0.0);
            for (l, &sl) in s.iter().enumerate() {
                acc += y[l + tau] * sl.conj() * Complex64::from_polar(1.0, -w * (l + 1) as f64);
            }
            let score = acc.norm();
            scores[(i, j)] = score;
            if best.as_ref().map_or(true, |b| score > scores[(b.0, b.1)]) {
                best = Some((i, j, pos, aod));
            }
        }
    }
    let (i, j, position_hat, aod_hat) = best.ok_or(Error::NoAdmissibleGeometry)?;
    let peak = scores[(i, j)];
    let peak_to_median = peak / median(scores.as_slice());
    invalid.sort_unstable();
    Ok(MatchedFilterOutput {
        report: EstimationReport {
            aoa_hat,
            tau_hat: setup.delays[i],
            v_hat: setup.dopplers[j],
            aod_hat,
            position_hat,
            peak_to_median,
            detected: peak_to_median >= setup.peak_to_median_min,
            invalid_delays: invalid,
        },
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RadarLink;
    use crate::waveform::{self, complex_gaussian, EchoParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TS: f64 = 1e-7;

    fn noise_frame(n: usize, cols: usize, var: f64, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMat::from_fn(n, cols, |_, _| complex_gaussian(&mut rng, var))
    }

    fn echo_of(y: CMat, tau_max: usize) -> EchoFrame {
        EchoFrame {
            y,
            tau: 1,
            doppler_hz: 0.0,
            tau_max,
        }
    }

    #[test]
    fn covariance_of_single_column() {
        let mut y = CMat::zeros(3, 5);
        let col = CVec::from_vec(vec![
            Complex64::new(1.0, 2.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(3.0, 0.5),
        ]);
        y.set_column(2, &col);
        let r = sample_covariance(&echo_of(y, 1)).unwrap();
        let expected = &col * col.adjoint() / Complex64::from(5.0);
        assert!((&r - expected).norm() < 1e-15);
        assert_eq!((&r - r.adjoint()).norm(), 0.0);
        let eig = r.symmetric_eigenvalues();
        assert_eq!(eig.iter().filter(|&&v| v.abs() > 1e-12).count(), 1);
    }

    #[test]
    fn noise_covariance_concentrates() {
        let (n, cols, var) = (8, 20000, 2.0);
        let r = sample_covariance(&echo_of(noise_frame(n, cols, var, 4), 0)).unwrap();
        for i in 0..n {
            assert!((r[(i, i)].re - var).abs() < 0.1 * var);
            for j in 0..n {
                if i != j {
                    assert!(r[(i, j)].norm() <= 5.0 / (cols as f64).sqrt() * var);
                }
            }
        }
    }

    #[test]
    fn noise_free_music_hits_true_cell() {
        let rx = UpaSpec::new(6, 6).unwrap();
        let grid = AngleGrid::hemisphere(1f64.to_radians()).unwrap();
        let truth = grid.angle(210, 37);
        let b = geometry::steering_vector(rx, truth);
        let s = noise_frame(1, 200, 1.0, 2);
        let r = sample_covariance(&echo_of(&b * s, 0)).unwrap();
        let spec = music_spectrum(&r, rx, &grid).unwrap();
        assert_eq!(spec.argmax, (210, 37));
        assert!(spec.projector_residual(rx, truth) <= 1e-12 * rx.len() as f64);
        assert!(spec.peak_to_median() >= 1e6);
    }

    #[test]
    fn isotropic_covariance_gives_flat_spectrum() {
        let rx = UpaSpec::new(4, 4).unwrap();
        let grid = AngleGrid::hemisphere(5f64.to_radians()).unwrap();
        let r = CMat::identity(16, 16) * Complex64::from(0.7);
        let spec = music_spectrum(&r, rx, &grid).unwrap();
        let max = spec.values.max();
        let min = spec.values.min();
        assert!(max / min <= 1.0 + 1e-6);
    }

    #[test]
    fn grid_axes_validated() {
        assert!(AngleGrid::new(vec![0.0, 0.0], vec![0.1]).is_err());
        assert!(AngleGrid::new(vec![], vec![0.1]).is_err());
        let g = AngleGrid::hemisphere(0.5f64.to_radians()).unwrap();
        assert_eq!(g.theta.len(), 720);
        assert_eq!(g.phi.len(), 181);
        assert!((g.theta[719] - PI).abs() < 1e-12);
        assert_eq!(g.nearest(g.angle(100, 50)), (100, 50));
    }

    struct Scene {
        sat: Vec3,
        tar: Vec3,
        tx: UpaSpec,
        rx: UpaSpec,
        link: RadarLink,
        window_start: f64,
        tau: usize,
    }

    /// Table geometry with the target moved onto an integer delay.
    fn scene() -> Scene {
        let sat = Vec3::from_km([30.0, -30.0, 340.0]);
        let tar0 = Vec3::from_km([3.0, 3.0, 5.0]);
        let aoa = geometry::angles_from_positions(Vec3::ORIGIN, tar0, Frame::ReceiverUp).unwrap();
        let window_start = sat.norm();
        let tau = 40;
        let range = window_start + tau as f64 * SPEED_OF_LIGHT * TS;
        let (tar, _) = geometry::invert_bistatic_ellipsoid(sat, aoa.direction(), range).unwrap();
        let link = RadarLink {
            alpha: Complex64::from_polar(1.0, 0.4),
            aod: geometry::angles_from_positions(sat, tar, Frame::SatelliteDown).unwrap(),
            aoa,
            r_tx: sat.distance(tar),
            r_rx: tar.norm(),
            r_los: window_start,
            beta: geometry::bistatic_angle(sat, tar, Vec3::ORIGIN).unwrap(),
        };
        Scene {
            sat,
            tar,
            tx: UpaSpec::new(4, 4).unwrap(),
            rx: UpaSpec::new(4, 4).unwrap(),
            link,
            window_start,
            tau,
        }
    }

    fn run(sc: &Scene, x: &CMat, v: f64, noise_var: f64, aoa_fed: AnglePair) -> MatchedFilterOutput {
        let frames = x.ncols();
        let p = EchoParams {
            tau: sc.tau,
            doppler_hz: v,
            sample_period: TS,
            tau_max: 64,
            noise_var,
            seed: 8,
        };
        let echo = waveform::synthesize_echo(x, &sc.link, sc.tx, sc.rx, &p).unwrap();
        let y = waveform::receive_combine(&echo, &geometry::steering_vector(sc.rx, aoa_fed)).unwrap();
        let delays: Vec<usize> = (1..=64).collect();
        let step = 1.0 / (frames as f64 * TS);
        let dopplers: Vec<f64> = (-3..=3).map(|i| i as f64 * step).collect();
        let setup = MatchedFilterSetup {
            x,
            tx: sc.tx,
            sat: sc.sat,
            rx: Vec3::ORIGIN,
            window_start: sc.window_start,
            sample_period: TS,
            delays: &delays,
            dopplers: &dopplers,
            peak_to_median_min: 20.0,
        };
        matched_filter_joint(&setup, &y, aoa_fed).unwrap()
    }

    #[test]
    fn noise_free_matched_filter_recovers_truth() {
        let sc = scene();
        let x = noise_frame(16, 256, 1.0, 5);
        let v = 2.0 / (256.0 * TS);
        let out = run(&sc, &x, v, 0.0, sc.link.aoa);
        let r = &out.report;
        assert_eq!((r.tau_hat, r.v_hat), (sc.tau, v));
        assert!((r.aod_hat.theta - sc.link.aod.theta).abs() <= 1e-6);
        assert!((r.aod_hat.phi - sc.link.aod.phi).abs() <= 1e-6);
        assert!(r.position_hat.distance(sc.tar) <= 1e-9 * sc.tar.norm());
        assert!(r.detected, "peak to median {}", r.peak_to_median);
        assert!(r.invalid_delays.is_empty());
        // the true cell strictly dominates
        let (ti, vi) = (sc.tau - 1, 5);
        for i in 0..out.scores.nrows() {
            for j in 0..out.scores.ncols() {
                if (i, j) != (ti, vi) {
                    assert!(out.scores[(i, j)] < out.scores[(ti, vi)]);
                }
            }
        }
        let aod = geometry::angles_from_positions(sc.sat, r.position_hat, Frame::SatelliteDown).unwrap();
        assert_eq!(aod, r.aod_hat);
    }

    #[test]
    fn wrong_aoa_is_flagged() {
        let sc = Scene {
            rx: UpaSpec::new(8, 8).unwrap(),
            ..scene()
        };
        let x = noise_frame(16, 512, 1.0, 6);
        // per-element echo SNR of -10 dB
        let noise_var = 10.0 * 16.0;
        let good = run(&sc, &x, 0.0, noise_var, sc.link.aoa);
        assert!(good.report.detected, "peak to median {}", good.report.peak_to_median);
        let wrong = AnglePair::new(sc.link.aoa.theta + 1.2, (sc.link.aoa.phi + 0.4).min(1.5));
        let bad = run(&sc, &x, 0.0, noise_var, wrong);
        assert!(!bad.report.detected, "peak to median {}", bad.report.peak_to_median);
    }

    #[test]
    fn doppler_neighbours_decorrelate() {
        let l = 512;
        let step = 1.0 / (l as f64 * TS);
        for seed in 0..5 {
            let s = noise_frame(1, l, 1.0, 100 + seed);
            let shifted = waveform::delay_doppler(&s, 0, 0.0, TS, 0).unwrap();
            let corr = |v: f64| {
                let r = waveform::delay_doppler(&s, 0, v, TS, 0).unwrap();
                shifted
                    .iter()
                    .zip(r.iter())
                    .map(|(a, b)| a * b.conj())
                    .sum::<Complex64>()
                    .norm()
            };
            assert!(corr(step) <= 0.7 * corr(0.0));
            assert!(corr(-2.0 * step) <= 0.7 * corr(0.0));
        }
    }

    #[test]
    fn inadmissible_window_errors() {
        let sc = scene();
        let x = noise_frame(16, 32, 1.0, 1);
        let y = CVec::zeros(40);
        let delays = [1usize, 2, 3];
        let setup = MatchedFilterSetup {
            x: &x,
            tx: sc.tx,
            sat: sc.sat,
            rx: Vec3::ORIGIN,
            window_start: 0.0,
            sample_period: TS,
            delays: &delays,
            dopplers: &[0.0],
            peak_to_median_min: 20.0,
        };
        assert_eq!(
            matched_filter_joint(&setup, &y, sc.link.aoa).unwrap_err(),
            Error::NoAdmissibleGeometry
        );
    }
}
