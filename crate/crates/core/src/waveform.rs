//! Symbol streams, precoding and synthesis of the delayed, Doppler-shifted echo.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::RadarLink;
use crate::error::{Error, Result};
use crate::geometry::{self, UpaSpec};
use crate::rates::ModeConfig;

type CMat = DMatrix<Complex64>;

/// `(K+2) x L` stream matrix in the order `[s_1..s_K, s_c, s_R]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub s: CMat,
    pub seed: u64,
}

impl SymbolFrame {
    pub fn users(&self) -> usize {
        self.s.nrows() - 2
    }

    pub fn len(&self) -> usize {
        self.s.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.s.ncols() == 0
    }
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Unit-power Gaussian communication streams and a unit-modulus pseudo-random
/// radar sequence. Rows of streams the mode disables are zero.
pub fn generate_streams(users: usize, frames: usize, seed: u64, mode: ModeConfig) -> Result<SymbolFrame> {
    if users == 0 || frames < users + 2 {
        return Err(Error::Config(format!(
            "need K >= 1 and L >= K + 2, got K = {users}, L = {frames}"
        )));
    }
    let mut comm = ChaCha8Rng::seed_from_u64(seed);
    // the radar sequence has its own stream so it depends on the seed alone
    let mut radar = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_5EC0_0001);
    let mut s = CMat::zeros(users + 2, frames);
    for l in 0..frames {
        for k in 0..=users {
            s[(k, l)] = complex_gaussian(&mut comm, 1.0);
        }
        s[(users + 1, l)] = Complex64::from_polar(1.0, radar.gen_range(0.0..std::f64::consts::TAU));
    }
    if !mode.has_common() {
        s.row_mut(users).fill(Complex64::from(0.0));
    }
    if !mode.has_radar_sequence() {
        s.row_mut(users + 1).fill(Complex64::from(0.0));
    }
    Ok(SymbolFrame { s, seed })
}

/// `X̃ = [X V(v), 0] J(tau)`: column `l` of `X` (1-based) moves to column
/// `l + tau` and picks up the phase `exp(j 2 pi v l T_s)`.
pub fn delay_doppler(x: &CMat, tau: usize, doppler_hz: f64, sample_period: f64, tau_max: usize) -> Result<CMat> {
    if tau > tau_max {
        return Err(Error::DelayOutOfRange { tau, tau_max });
    }
    let frames = x.ncols();
    let mut out = CMat::zeros(x.nrows(), frames + tau_max);
    for i in 0..frames {
        let phase = std::f64::consts::TAU * doppler_hz * (i + 1) as f64 * sample_period;
        let rot = Complex64::from_polar(1.0, phase);
        out.column_mut(i + tau).zip_apply(&x.column(i), |o, v| *o = v * rot);
    }
    Ok(out)
}

/// `a^H X` as a `1 x L` matrix.
pub fn beam_output(a: &DVector<Complex64>, x: &CMat) -> CMat {
    CMat::from_iterator(1, x.ncols(), x.column_iter().map(|c| a.dotc(&c)))
}

/// Received echo and the delay/Doppler it was built with.
#[derive(Debug, Clone)]
pub struct EchoFrame {
    /// `N_Rx x (L + tau_max)`.
    pub y: CMat,
    pub tau: usize,
    pub doppler_hz: f64,
    pub tau_max: usize,
}

/// Echo parameters of [`synthesize_echo`].
#[derive(Debug, Clone, Copy)]
pub struct EchoParams {
    pub tau: usize,
    pub doppler_hz: f64,
    pub sample_period: f64,
    pub tau_max: usize,
    pub noise_var: f64,
    pub seed: u64,
}

/// `Y = alpha b a^H X̃ + Z` with `Z` i.i.d. `CN(0, noise_var)`.
pub fn synthesize_echo(x: &CMat, link: &RadarLink, tx: UpaSpec, rx: UpaSpec, p: &EchoParams) -> Result<EchoFrame> {
    if p.tau < 1 || p.tau > p.tau_max {
        return Err(Error::DelayOutOfRange {
            tau: p.tau,
            tau_max: p.tau_max,
        });
    }
    if !((p.doppler_hz * p.sample_period).abs() < 0.5) {
        return Err(Error::Config(format!(
            "Doppler {} Hz aliases at T_s = {} s",
            p.doppler_hz, p.sample_period
        )));
    }
    if x.nrows() != tx.len() {
        return Err(Error::Dimension(format!(
            "signal has {} rows for {} transmit elements",
            x.nrows(),
            tx.len()
        )));
    }
    let a = geometry::steering_vector(tx, link.aod);
    let b = geometry::steering_vector(rx, link.aoa) * link.alpha;
    let shifted = delay_doppler(&beam_output(&a, x), p.tau, p.doppler_hz, p.sample_period, p.tau_max)?;
    let mut y = &b * shifted;
    if p.noise_var > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        for v in y.iter_mut() {
            *v += complex_gaussian(&mut rng, p.noise_var);
        }
    }
    Ok(EchoFrame {
        y,
        tau: p.tau,
        doppler_hz: p.doppler_hz,
        tau_max: p.tau_max,
    })
}

/// `y^H = b_hat^H Y`, returned as the row `y^H`.
pub fn receive_combine(echo: &EchoFrame, b_hat: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    if b_hat.len() != echo.y.nrows() || !(b_hat.norm() > 0.0) {
        return Err(Error::Dimension(format!(
            "combiner of length {} for {} receive elements",
            b_hat.len(),
            echo.y.nrows()
        )));
    }
    Ok((b_hat.adjoint() * &echo.y).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnglePair;
    use crate::rates::MultipleAccess;

    fn link() -> RadarLink {
        RadarLink {
            alpha: Complex64::from_polar(0.8, 0.3),
            aod: AnglePair::new(0.4, 0.3),
            aoa: AnglePair::new(-1.0, 0.7),
            r_tx: 0.0,
            r_rx: 0.0,
            r_los: 0.0,
            beta: 0.0,
        }
    }

    #[test]
    fn stream_statistics() {
        let f = generate_streams(4, 4096, 3, ModeConfig::isac(MultipleAccess::Rsma, true, true)).unwrap();
        for r in 0..6 {
            let p = f.s.row(r).norm_squared() / 4096.0;
            assert!((0.98..=1.02).contains(&p), "row {r} power {p}");
        }
        let gram = &f.s * f.s.adjoint() / Complex64::from(4096.0);
        assert!((gram - CMat::identity(6, 6)).norm() <= 0.15);
    }

    #[test]
    fn disabled_rows_are_zero() {
        let sdma = generate_streams(2, 64, 1, ModeConfig::isac(MultipleAccess::Sdma, true, true)).unwrap();
        assert!(sdma.s.row(2).iter().all(|v| *v == Complex64::from(0.0)));
        let comm = generate_streams(2, 64, 1, "rsma-comm-only".parse().unwrap()).unwrap();
        assert!(comm.s.row(3).iter().all(|v| *v == Complex64::from(0.0)));
        assert!(comm.s.row(2).iter().any(|v| *v != Complex64::from(0.0)));
    }

    #[test]
    fn radar_sequence_depends_on_seed_only() {
        let a = generate_streams(2, 64, 9, ModeConfig::isac(MultipleAccess::Rsma, true, true)).unwrap();
        let b = generate_streams(3, 64, 9, ModeConfig::isac(MultipleAccess::Sdma, true, false)).unwrap();
        assert_eq!(a.s.row(3), b.s.row(4));
        assert!(a.s.row(3).iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        assert_eq!(
            a,
            generate_streams(2, 64, 9, ModeConfig::isac(MultipleAccess::Rsma, true, true)).unwrap()
        );
    }

    #[test]
    fn short_frame_rejected() {
        assert!(generate_streams(3, 4, 0, ModeConfig::isac(MultipleAccess::Rsma, true, true)).is_err());
    }

    fn frame(n: usize, l: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMat::from_fn(n, l, |_, _| complex_gaussian(&mut rng, 1.0))
    }

    #[test]
    fn noiseless_echo_is_shifted_product() {
        let (tx, rx) = (UpaSpec::new(2, 2).unwrap(), UpaSpec::new(3, 2).unwrap());
        let x = frame(4, 32, 5);
        let link = link();
        let (tau, v, ts) = (5, 1234.0, 1e-7);
        let p = EchoParams {
            tau,
            doppler_hz: v,
            sample_period: ts,
            tau_max: 8,
            noise_var: 0.0,
            seed: 0,
        };
        let e = synthesize_echo(&x, &link, tx, rx, &p).unwrap();
        assert_eq!(e.y.shape(), (6, 40));
        let a = geometry::steering_vector(tx, link.aod);
        let b = geometry::steering_vector(rx, link.aoa);
        for l in 1..=32usize {
            let expected = &b
                * (link.alpha * a.dotc(&x.column(l - 1).into_owned()))
                * Complex64::from_polar(1.0, std::f64::consts::TAU * v * l as f64 * ts);
            assert!((e.y.column(l - 1 + tau) - expected).norm() < 1e-12);
        }
        for c in (0..tau).chain(32 + tau..40) {
            assert_eq!(e.y.column(c).norm(), 0.0);
        }
        let energy = link.alpha.norm_sqr() * b.norm_squared() * (a.adjoint() * &x).norm_squared();
        assert!((e.y.norm_squared() - energy).abs() < 1e-9 * energy);
    }

    #[test]
    fn zero_doppler_is_pure_shift() {
        let x = frame(3, 10, 2);
        let d = delay_doppler(&x, 2, 0.0, 1e-7, 4).unwrap();
        assert_eq!(d.columns(2, 10), x.columns(0, 10));
    }

    #[test]
    fn doppler_preserves_column_norms() {
        let x = frame(3, 10, 4);
        let d = delay_doppler(&x, 0, 37e3, 1e-7, 0).unwrap();
        for i in 0..10 {
            assert!((d.column(i).norm() - x.column(i).norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn shifts_compose() {
        let x = frame(2, 12, 6);
        let once = delay_doppler(&x, 5, 0.0, 1e-7, 8).unwrap();
        let first = delay_doppler(&x, 2, 0.0, 1e-7, 2).unwrap();
        let twice = delay_doppler(&first, 3, 0.0, 1e-7, 6).unwrap();
        assert_eq!(once.columns(0, 20), twice.columns(0, 20));
    }

    #[test]
    fn delay_bounds_checked() {
        let x = frame(4, 8, 1);
        let (tx, rx) = (UpaSpec::new(2, 2).unwrap(), UpaSpec::new(2, 2).unwrap());
        let mut p = EchoParams {
            tau: 0,
            doppler_hz: 0.0,
            sample_period: 1e-7,
            tau_max: 4,
            noise_var: 0.0,
            seed: 0,
        };
        assert!(matches!(
            synthesize_echo(&x, &link(), tx, rx, &p),
            Err(Error::DelayOutOfRange { .. })
        ));
        p.tau = 5;
        assert!(synthesize_echo(&x, &link(), tx, rx, &p).is_err());
    }

    #[test]
    fn coherent_and_orthogonal_combining() {
        let (tx, rx) = (UpaSpec::new(2, 2).unwrap(), UpaSpec::new(4, 1).unwrap());
        let x = frame(4, 16, 3);
        let link = RadarLink {
            aoa: AnglePair::new(0.0, (0.5f64).asin()),
            ..link()
        };
        let p = EchoParams {
            tau: 2,
            doppler_hz: 0.0,
            sample_period: 1e-7,
            tau_max: 4,
            noise_var: 0.0,
            seed: 0,
        };
        let e = synthesize_echo(&x, &link, tx, rx, &p).unwrap();
        let b = geometry::steering_vector(rx, link.aoa);
        let y = receive_combine(&e, &b).unwrap();
        let a = geometry::steering_vector(tx, link.aod);
        let reference = delay_doppler(&beam_output(&a, &x), 2, 0.0, 1e-7, 4).unwrap();
        for i in 0..20 {
            assert!((y[i] - link.alpha * 4.0 * reference[(0, i)]).norm() < 1e-12);
        }
        // phase step pi/2 across four elements: this direction is orthogonal
        let orth = geometry::steering_vector(rx, AnglePair::new(0.0, 0.0));
        assert!(receive_combine(&e, &orth).unwrap().norm() < 1e-12);
    }

    #[test]
    fn combining_gain_matches_array_size() {
        let (tx, rx) = (UpaSpec::new(2, 2).unwrap(), UpaSpec::new(4, 4).unwrap());
        let x = frame(4, 2048, 8);
        let link = link();
        let mut p = EchoParams {
            tau: 1,
            doppler_hz: 0.0,
            sample_period: 1e-7,
            tau_max: 1,
            noise_var: 0.0,
            seed: 3,
        };
        let clean = synthesize_echo(&x, &link, tx, rx, &p).unwrap();
        p.noise_var = 2.0;
        let noisy = synthesize_echo(&x, &link, tx, rx, &p).unwrap();
        let noise = EchoFrame {
            y: &noisy.y - &clean.y,
            ..clean.clone()
        };
        let b = geometry::steering_vector(rx, link.aoa);
        let snr_element = clean.y.row(0).norm_squared() / noise.y.row(0).norm_squared();
        let snr_combined =
            receive_combine(&clean, &b).unwrap().norm_squared() / receive_combine(&noise, &b).unwrap().norm_squared();
        let gain_db = 10.0 * (snr_combined / snr_element).log10();
        assert!((gain_db - 10.0 * 16f64.log10()).abs() < 0.5, "gain {gain_db} dB");
    }

    #[test]
    fn identical_seeds_identical_echo() {
        let (tx, rx) = (UpaSpec::new(2, 2).unwrap(), UpaSpec::new(2, 2).unwrap());
        let x = frame(4, 8, 1);
        let p = EchoParams {
            tau: 1,
            doppler_hz: 5.0,
            sample_period: 1e-7,
            tau_max: 4,
            noise_var: 0.3,
            seed: 11,
        };
        let a = synthesize_echo(&x, &link(), tx, rx, &p).unwrap();
        let b = synthesize_echo(&x, &link(), tx, rx, &p).unwrap();
        assert_eq!(a.y, b.y);
    }
}
