//! Two-layer precoder optimization: sequential rank-one constraint relaxation
//! (outer) around successive convex approximation (inner) of the lifted
//! max-min rate problem under power and Cramér-Rao constraints.
//!
//! Internally every lifted matrix is normalized by the power budget,
//! `X_j = Pbar_j / P_t`, so the trace budget is one and the logarithmic
//! auxiliaries are shifted by `ln P_t`. Public results are in watts.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::conic::{self, Affine, BlockCoef, Cone};
use crate::crb::{self, CrbContext};
use crate::error::{Error, Result};
use crate::rates::{self, ModeConfig, PrecoderMatrix, RatePair};

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

/// Largest rank-relaxation weight handed to the solver; at exactly one the
/// constraint admits only rank-one matrices and has no interior.
const MAX_WEIGHT: f64 = 1.0 - 1e-6;
/// Blocks whose normalized trace is below this carry no power and are
/// ignored by the rank test.
const DEAD_TRACE: f64 = 1e-7;
const LOG_BOX: f64 = 80.0;
const RATE_BOX: f64 = 200.0;
const ALLOC_BOX: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub eps_rank: f64,
    /// Inner-loop tolerance on `R_min`, bits/s/Hz.
    pub eps_obj: f64,
    pub delta0: f64,
    pub m_max: usize,
    pub n_max: usize,
    /// Power budget, watts.
    pub p_t: f64,
    /// `(gamma_theta, gamma_phi)` thresholds.
    pub crb_th: (f64, f64),
    pub mode: ModeConfig,
    pub solver: conic::Settings,
}

impl OptConfig {
    pub fn new(p_t: f64, crb_th: (f64, f64), mode: ModeConfig) -> Self {
        Self {
            eps_rank: 0.9999,
            eps_obj: 1e-4,
            delta0: 0.1,
            m_max: 60,
            n_max: 30,
            p_t,
            crb_th,
            mode,
            solver: conic::Settings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_rank > 0.0
            && self.eps_rank < 1.0
            && self.delta0 > 0.0
            && self.eps_obj > 0.0
            && self.m_max >= 1
            && self.n_max >= 1
            && self.p_t > 0.0
            && (self.mode.comm_only || (self.crb_th.0 > 0.0 && self.crb_th.1 > 0.0));
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

/// Geometry and statistics the optimizer consumes.
#[derive(Debug, Clone)]
pub struct OptInputs {
    /// User steering vectors `a_k`.
    pub a_users: Vec<CVec>,
    /// Noise-to-average-channel-power ratios `rho_k`, watts.
    pub rho: Vec<f64>,
    /// Radar bound context; required unless the mode is communication-only.
    pub crb: Option<CrbContext>,
}

impl OptInputs {
    pub fn users(&self) -> usize {
        self.a_users.len()
    }

    pub fn n_tx(&self) -> usize {
        self.a_users.first().map_or(0, |a| a.len())
    }

    fn validate(&self, mode: &ModeConfig) -> Result<()> {
        if self.users() == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        let n = self.n_tx();
        if self.rho.len() != self.users() || self.a_users.iter().any(|a| a.len() != n) {
            return Err(Error::Dimension("user vectors and noise ratios disagree".into()));
        }
        if self.rho.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config("noise ratios must be positive".into()));
        }
        match (&self.crb, mode.has_crb()) {
            (None, true) => Err(Error::Config("radar constraints need a CRB context".into())),
            (Some(c), _) if c.a_tar.len() != n => Err(Error::Dimension("target steering vector size".into())),
            _ => Ok(()),
        }
    }

    /// `tr(A_tar sum Pbar)` needed for both thresholds, watts times array gain.
    pub fn required_target_gain(&self, cfg: &OptConfig) -> Option<f64> {
        if !cfg.mode.has_crb() {
            return None;
        }
        self.crb
            .as_ref()
            .map(|c| c.required_target_gain(cfg.crb_th.0, cfg.crb_th.1))
    }
}

/// Role of each constraint in a subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintTag {
    Power,
    CrbTrace,
    /// `v^H Pbar_j v >= w_j tr(Pbar_j)` for stream `j`.
    RankRelaxation(usize),
    /// Common-rate numerator bounded below by `e^{c_k}`.
    CommonNumerator(usize),
    /// Linearized upper bound `e^{d_k}` on the private-plus-noise power.
    PrivateTotalUpper(usize),
    /// Private-plus-noise power bounded below by `e^{e_k}`.
    PrivateTotalLower(usize),
    /// Linearized upper bound `e^{f_k}` on interference plus noise.
    InterferenceUpper(usize),
    MinRate(usize),
    CommonDecoding(usize),
    AllocNonNeg(usize),
    /// Bounds on the auxiliary variables keeping the feasible set compact.
    Box,
}

/// Indices of the real variables.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLayout {
    pub r_min: usize,
    pub alloc: Vec<usize>,
    pub c: Vec<usize>,
    pub d: Vec<usize>,
    pub e: Vec<usize>,
    pub f: Vec<usize>,
    pub len: usize,
}

impl VarLayout {
    fn new(users: usize, common: bool) -> Self {
        let mut next = 1;
        let mut take = |on: bool| -> Vec<usize> {
            if !on {
                return Vec::new();
            }
            let v: Vec<usize> = (next..next + users).collect();
            next += users;
            v
        };
        let alloc = take(common);
        let c = take(common);
        let d = take(common);
        let e = take(true);
        let f = take(true);
        Self {
            r_min: 0,
            alloc,
            c,
            d,
            e,
            f,
            len: next,
        }
    }
}

/// SCA expansion point for the two linearized exponentials, normalized logs.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub d: Vec<f64>,
    pub f: Vec<f64>,
}

/// One convex subproblem with its constraints tagged by role.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub problem: conic::Problem,
    pub tags: Vec<ConstraintTag>,
    pub layout: VarLayout,
    /// Stream index of each matrix block.
    pub streams: Vec<usize>,
}

/// Lifted solution in watts.
#[derive(Debug, Clone)]
pub struct SdrLift {
    /// One matrix per stream (`K` private, common, radar); zero for absent streams.
    pub pbar: Vec<CMat>,
    pub alloc: Vec<f64>,
    pub r_min: f64,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
}

impl SdrLift {
    pub fn total_power(&self) -> f64 {
        self.pbar.iter().map(|p| p.trace().re).sum()
    }

    /// `tr(A sum_j Pbar_j)` for `A = a a^H`.
    pub fn gain_towards(&self, a: &CVec) -> f64 {
        self.pbar.iter().map(|p| (a.adjoint() * p * a)[(0, 0)].re).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptStatus {
    Converged,
    IterCap,
    Infeasible,
}

impl OptStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptStatus::Converged => "converged",
            OptStatus::IterCap => "iter-cap",
            OptStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub status: OptStatus,
    pub precoder: PrecoderMatrix,
    pub alloc: Vec<f64>,
    /// `min_k (R_p,k + C_k)` re-evaluated from the extracted precoder.
    pub r_min: f64,
    /// Objective value of the last accepted lifted subproblem.
    pub r_min_lifted: f64,
    pub w_trajectory: Vec<Vec<f64>>,
    /// `lambda_max / tr` per stream; `None` for streams the mode disables
    /// and for streams left without power, which are zeroed.
    pub eigen_ratios: Vec<Option<f64>>,
    pub lift: Option<SdrLift>,
    pub outer_iterations: usize,
    pub subproblems: usize,
}

/// Eigenvalue-to-trace ratio and principal eigenpair of a Hermitian PSD matrix.
/// Ties within `1e-9` relative go to the lowest eigen index; the phase is fixed
/// by making the largest-magnitude entry real positive.
pub fn principal_eigen(m: &CMat) -> (f64, f64, CVec) {
    let n = m.nrows();
    let eig = ((m + m.adjoint()) * Complex64::from(0.5)).symmetric_eigen();
    let top = eig.eigenvalues.max();
    let idx = (0..n)
        .find(|&i| eig.eigenvalues[i] >= top - 1e-9 * top.abs())
        .unwrap_or(0);
    let mut v: CVec = eig.eigenvectors.column(idx).into_owned();
    let (mut best, mut mag) = (0, -1.0);
    for i in 0..n {
        if v[i].norm() > mag + 1e-12 {
            best = i;
            mag = v[i].norm();
        }
    }
    if mag > 0.0 {
        let ph = v[best].conj() / mag;
        v *= ph;
    }
    let tr = m.trace().re;
    let ratio = if tr > 0.0 { top / tr } else { 0.0 };
    (ratio, top.max(0.0), v)
}

/// Outcome of the rank-weight schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub w: Vec<f64>,
    pub delta: f64,
}

/// Next rank weights from the eigen ratios of the last accepted matrices.
/// A solvable step resets the step size; an unsolvable one halves it.
pub fn sroc_schedule_update(ratios: &[f64], delta: f64, delta0: f64, solvable: bool) -> Result<Schedule> {
    let delta = if solvable { delta0 } else { delta / 2.0 };
    if delta < 1e-12 {
        return Err(Error::Config("rank step size underflow".into()));
    }
    Ok(Schedule {
        w: ratios.iter().map(|r| (r + delta).min(1.0)).collect(),
        delta,
    })
}

/// Stream indices of the columns that carry power in `mode`.
pub fn active_streams(users: usize, mode: &ModeConfig) -> Vec<usize> {
    mode.active_streams(users)
}

/// Sum of `tr(A_k X_j)` coefficients appearing in the rate terms for user `k`.
struct RateTerms {
    /// Private-plus-noise: all private streams plus the uncanceled radar sequence.
    total: Vec<(usize, f64)>,
    /// `total` plus the common stream.
    with_common: Vec<(usize, f64)>,
    /// `total` without stream `k`.
    interference: Vec<(usize, f64)>,
}

fn rate_terms(k: usize, users: usize, streams: &[usize], delta_sic: f64) -> RateTerms {
    let mut total = Vec::new();
    let mut with_common = Vec::new();
    let mut interference = Vec::new();
    for (b, &s) in streams.iter().enumerate() {
        if s < users {
            total.push((b, 1.0));
            with_common.push((b, 1.0));
            if s != k {
                interference.push((b, 1.0));
            }
        } else if s == users {
            with_common.push((b, 1.0));
        } else if delta_sic != 0.0 {
            total.push((b, delta_sic));
            with_common.push((b, delta_sic));
            interference.push((b, delta_sic));
        }
    }
    RateTerms {
        total,
        with_common,
        interference,
    }
}

fn user_quadratic(terms: &[(usize, f64)], k: usize, scale: f64) -> Affine {
    let mut a = Affine::default();
    for &(b, w) in terms {
        a = a.with_block(b, BlockCoef::rank1(k, w * scale));
    }
    a
}

/// Build subproblem `[m, n]` in normalized variables.
///
/// `w[b]` and `v[b]` are the rank weight and reference eigenvector of block
/// `b`; a zero weight drops the rank row.
pub fn build_subproblem(
    inputs: &OptInputs,
    cfg: &OptConfig,
    w: &[f64],
    v: &[Option<CVec>],
    lin: &Linearization,
) -> Result<Subproblem> {
    inputs.validate(&cfg.mode)?;
    let users = inputs.users();
    let n = inputs.n_tx();
    let streams = active_streams(users, &cfg.mode);
    let nb = streams.len();
    if w.len() != nb || v.len() != nb || lin.d.len() != users || lin.f.len() != users {
        return Err(Error::Dimension(
            "rank weights or linearization point have the wrong length".into(),
        ));
    }
    let common = cfg.mode.has_common();
    let layout = VarLayout::new(users, common);
    let delta_sic = cfg.mode.delta_sic();
    let rho: Vec<f64> = inputs.rho.iter().map(|r| r / cfg.p_t).collect();

    // dictionary per block: users, then target, then the rank vector
    let tar_idx = users;
    let rank_idx = users + usize::from(cfg.mode.has_crb());
    let mut dictionaries = Vec::with_capacity(nb);
    for vb in v {
        let mut cols: Vec<CVec> = inputs.a_users.clone();
        if cfg.mode.has_crb() {
            cols.push(inputs.crb.as_ref().expect("validated").a_tar.clone());
        }
        if let Some(vb) = vb {
            cols.push(vb.clone());
        }
        dictionaries.push(CMat::from_columns(&cols));
    }

    let mut cons = Vec::new();
    let mut tags = Vec::new();
    let mut push = |c: Cone, t: ConstraintTag| {
        cons.push(c);
        tags.push(t);
    };

    let mut power = Affine::constant(1.0);
    for b in 0..nb {
        power = power.with_block(b, BlockCoef::identity(-1.0));
    }
    push(Cone::NonNeg(power), ConstraintTag::Power);

    if let Some(req) = inputs.required_target_gain(cfg) {
        let scale = 1.0 / n as f64;
        let mut row = Affine::constant(-req / cfg.p_t * scale);
        for b in 0..nb {
            row = row.with_block(b, BlockCoef::rank1(tar_idx, scale));
        }
        push(Cone::NonNeg(row), ConstraintTag::CrbTrace);
    }

    for b in 0..nb {
        if w[b] > 0.0 {
            let coef = BlockCoef {
                ident: -w[b],
                rank1: vec![(rank_idx, 1.0)],
            };
            push(
                Cone::NonNeg(Affine::default().with_block(b, coef)),
                ConstraintTag::RankRelaxation(streams[b]),
            );
        }
    }

    for (k, &rho_k) in rho.iter().enumerate() {
        let terms = rate_terms(k, users, &streams, delta_sic);
        let total = user_quadratic(&terms.total, k, 1.0).with_constant(rho_k);
        let interference = user_quadratic(&terms.interference, k, 1.0).with_constant(rho_k);
        if common {
            let numer = user_quadratic(&terms.with_common, k, 1.0).with_constant(rho_k);
            push(
                Cone::ExpEpigraph {
                    x: Affine::var(layout.c[k], 1.0),
                    z: numer,
                },
                ConstraintTag::CommonNumerator(k),
            );
            // e^{d^}(d - d^ + 1) >= total, divided by e^{d^}
            let dh = lin.d[k];
            let row = total
                .clone()
                .scaled(-(-dh).exp())
                .with_y(layout.d[k], 1.0)
                .with_constant(1.0 - dh);
            push(Cone::NonNeg(row), ConstraintTag::PrivateTotalUpper(k));
        }
        push(
            Cone::ExpEpigraph {
                x: Affine::var(layout.e[k], 1.0),
                z: total,
            },
            ConstraintTag::PrivateTotalLower(k),
        );
        let fh = lin.f[k];
        let row = interference
            .scaled(-(-fh).exp())
            .with_y(layout.f[k], 1.0)
            .with_constant(1.0 - fh);
        push(Cone::NonNeg(row), ConstraintTag::InterferenceUpper(k));

        let mut min_rate = Affine::var(layout.e[k], 1.0 / LN_2)
            .with_y(layout.f[k], -1.0 / LN_2)
            .with_y(layout.r_min, -1.0);
        if common {
            min_rate = min_rate.with_y(layout.alloc[k], 1.0);
        }
        push(Cone::NonNeg(min_rate), ConstraintTag::MinRate(k));
        if common {
            let mut dec = Affine::var(layout.c[k], 1.0 / LN_2).with_y(layout.d[k], -1.0 / LN_2);
            for &i in &layout.alloc {
                dec = dec.with_y(i, -1.0);
            }
            push(Cone::NonNeg(dec), ConstraintTag::CommonDecoding(k));
            push(
                Cone::NonNeg(Affine::var(layout.alloc[k], 1.0)),
                ConstraintTag::AllocNonNeg(k),
            );
            push(
                Cone::NonNeg(Affine::var(layout.alloc[k], -1.0).with_constant(ALLOC_BOX)),
                ConstraintTag::Box,
            );
        }
    }
    let logs = layout
        .c
        .iter()
        .chain(&layout.d)
        .chain(&layout.e)
        .chain(&layout.f)
        .copied()
        .collect::<Vec<_>>();
    for i in logs {
        push(
            Cone::NonNeg(Affine::var(i, 1.0).with_constant(LOG_BOX)),
            ConstraintTag::Box,
        );
        push(
            Cone::NonNeg(Affine::var(i, -1.0).with_constant(LOG_BOX)),
            ConstraintTag::Box,
        );
    }
    push(
        Cone::NonNeg(Affine::var(layout.r_min, 1.0).with_constant(RATE_BOX)),
        ConstraintTag::Box,
    );
    push(
        Cone::NonNeg(Affine::var(layout.r_min, -1.0).with_constant(RATE_BOX)),
        ConstraintTag::Box,
    );

    let mut objective = DVector::zeros(layout.len);
    objective[layout.r_min] = -1.0;
    Ok(Subproblem {
        problem: conic::Problem {
            dictionaries,
            n_y: layout.len,
            objective,
            constraints: cons,
        },
        tags,
        layout,
        streams,
    })
}

/// Normalized denominators at `x` (one matrix per stream, zero when absent):
/// `(private total, interference)` per user.
fn denominators(inputs: &OptInputs, cfg: &OptConfig, x: &[CMat]) -> (Vec<f64>, Vec<f64>) {
    let users = inputs.users();
    let delta = cfg.mode.delta_sic();
    let mut total = Vec::with_capacity(users);
    let mut interf = Vec::with_capacity(users);
    for (k, a) in inputs.a_users.iter().enumerate() {
        let q = |m: &CMat| (a.adjoint() * m * a)[(0, 0)].re;
        let private: f64 = (0..users).map(|j| q(&x[j])).sum();
        let radar = delta * q(&x[users + 1]);
        let rho = inputs.rho[k] / cfg.p_t;
        total.push(private + radar + rho);
        interf.push(private - q(&x[k]) + radar + rho);
    }
    (total, interf)
}

/// Feasible starting point in watts.
#[derive(Debug, Clone)]
pub struct InitPoint {
    pub pbar: Vec<CMat>,
    pub precoder: PrecoderMatrix,
    /// Logs of the private-plus-noise powers, watts.
    pub d: Vec<f64>,
    /// Logs of the interference-plus-noise powers, watts.
    pub f: Vec<f64>,
}

/// Heuristic precoder: a matched beam on the target carrying the power the
/// bound needs (plus 10%), remaining power matched to users.
pub fn init_linearization(inputs: &OptInputs, cfg: &OptConfig) -> Result<InitPoint> {
    cfg.validate()?;
    inputs.validate(&cfg.mode)?;
    let users = inputs.users();
    let n = inputs.n_tx();
    let nf = n as f64;
    let mut target = PrecoderMatrix::zeros(n, users);
    let mut user_part = PrecoderMatrix::zeros(n, users);
    let unit = |a: &CVec| a / Complex64::from(a.norm());
    let streams = cfg.mode.active_streams(users);
    let target_col = if cfg.mode.has_radar_sequence() {
        Some(users + 1)
    } else if cfg.mode.has_common() {
        Some(users)
    } else {
        None
    };
    if let Some(req) = inputs.required_target_gain(cfg) {
        if req > nf * cfg.p_t * (1.0 + 1e-12) {
            return Err(Error::InfeasibleCrb {
                required: req,
                available: nf * cfg.p_t,
            });
        }
        let q = (1.1 * req / nf).min(cfg.p_t);
        let a_tar = unit(&inputs.crb.as_ref().expect("validated").a_tar);
        match target_col {
            Some(j) => target.set_column(j, &(&a_tar * Complex64::from(q.sqrt()))),
            None => {
                for k in 0..users {
                    target.set_column(k, &(&a_tar * Complex64::from((q / users as f64).sqrt())));
                }
            }
        }
    }
    for (k, a) in inputs.a_users.iter().enumerate() {
        let mut col = unit(a);
        // align with the target beam so adding it never cancels target gain
        let overlap = target.column(k).dotc(&col);
        if overlap.norm() > 0.0 {
            col *= overlap.conj() / overlap.norm();
        }
        user_part.set_column(k, &col);
    }
    let assemble = |s: f64| {
        PrecoderMatrix::from_matrix(target.matrix() + user_part.matrix() * Complex64::from(s.sqrt())).expect("shape")
    };
    let (mut lo, mut hi) = (0.0, cfg.p_t);
    while assemble(hi).total_power() <= cfg.p_t {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if assemble(mid).total_power() <= cfg.p_t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut p = assemble(lo);
    for j in 0..users + 2 {
        if !streams.contains(&j) {
            p.set_column(j, &CVec::zeros(n));
        }
    }
    let pbar: Vec<CMat> = (0..users + 2)
        .map(|j| {
            let c = p.column(j);
            &c * c.adjoint()
        })
        .collect();
    let x: Vec<CMat> = pbar.iter().map(|m| m / Complex64::from(cfg.p_t)).collect();
    let (total, interf) = denominators(inputs, cfg, &x);
    let shift = cfg.p_t.ln();
    Ok(InitPoint {
        pbar,
        precoder: p,
        d: total.iter().map(|t| t.ln() + shift).collect(),
        f: interf.iter().map(|t| t.ln() + shift).collect(),
    })
}

struct Accepted {
    blocks: Vec<CMat>,
    y: DVector<f64>,
    lin: Linearization,
    r_min: f64,
}

/// Run the two-layer algorithm.
pub fn solve(inputs: &OptInputs, cfg: &OptConfig) -> Result<OptResult> {
    cfg.validate()?;
    inputs.validate(&cfg.mode)?;
    let users = inputs.users();
    let n = inputs.n_tx();
    let streams = active_streams(users, &cfg.mode);
    let nb = streams.len();
    let infeasible = |subproblems| OptResult {
        status: OptStatus::Infeasible,
        precoder: PrecoderMatrix::zeros(n, users),
        alloc: vec![0.0; users],
        r_min: f64::NAN,
        r_min_lifted: f64::NAN,
        w_trajectory: Vec::new(),
        eigen_ratios: vec![None; users + 2],
        lift: None,
        outer_iterations: 0,
        subproblems,
    };
    let init = match init_linearization(inputs, cfg) {
        Ok(p) => p,
        Err(Error::InfeasibleCrb { .. }) => return Ok(infeasible(0)),
        Err(e) => return Err(e),
    };
    let shift = cfg.p_t.ln();
    let mut lin = Linearization {
        d: init.d.iter().map(|v| v - shift).collect(),
        f: init.f.iter().map(|v| v - shift).collect(),
    };

    let mut w = vec![0.0; nb];
    let mut v: Vec<Option<CVec>> = vec![None; nb];
    let mut delta = cfg.delta0;
    let mut accepted: Option<Accepted> = None;
    let mut w_trajectory = Vec::new();
    let mut subproblems = 0;
    let mut status = OptStatus::IterCap;
    let mut outer = 0;

    while outer < cfg.m_max {
        outer += 1;
        w_trajectory.push(full_weights(&w, &streams, users));
        let w_solver: Vec<f64> = w.iter().map(|x| x.min(MAX_WEIGHT)).collect();
        let mut inner_best: Option<Accepted> = None;
        let mut inner_lin = lin.clone();
        for _ in 0..cfg.n_max {
            let sub = build_subproblem(inputs, cfg, &w_solver, &v, &inner_lin)?;
            let sol = conic::solve(&sub.problem, None, &cfg.solver);
            subproblems += 1;
            log::debug!(
                "outer {outer} sub {subproblems}: {:?} obj {:.6} gap {:.2e} newton {}",
                sol.status,
                -sol.objective,
                sol.gap,
                sol.newton_steps
            );
            if sol.status != conic::Status::Optimal {
                break;
            }
            let r = sol.y[sub.layout.r_min];
            let next_lin = Linearization {
                d: if sub.layout.d.is_empty() {
                    inner_lin.d.clone()
                } else {
                    sub.layout.d.iter().map(|&i| sol.y[i]).collect()
                },
                f: sub.layout.f.iter().map(|&i| sol.y[i]).collect(),
            };
            let prev = inner_best.as_ref().map(|a| a.r_min);
            inner_best = Some(Accepted {
                blocks: sol.blocks,
                y: sol.y,
                lin: next_lin.clone(),
                r_min: r,
            });
            inner_lin = next_lin;
            if let Some(p) = prev {
                if (r - p).abs() <= cfg.eps_obj {
                    break;
                }
            }
        }
        let solvable = inner_best.is_some();
        if let Some(acc) = inner_best {
            lin = acc.lin.clone();
            accepted = Some(acc);
        } else if let Some(acc) = &accepted {
            // roll back matrices and linearization together
            lin = acc.lin.clone();
        } else {
            return Ok(OptResult {
                w_trajectory,
                ..infeasible(subproblems)
            });
        }
        let acc = accepted.as_ref().expect("set above");
        let eig: Vec<(f64, f64, CVec)> = acc.blocks.iter().map(principal_eigen).collect();
        let live = |b: usize| acc.blocks[b].trace().re > DEAD_TRACE;
        if solvable && (0..nb).all(|b| !live(b) || eig[b].0 >= cfg.eps_rank) {
            status = OptStatus::Converged;
            break;
        }
        let ratios: Vec<f64> = eig.iter().map(|e| e.0).collect();
        match sroc_schedule_update(&ratios, delta, cfg.delta0, solvable) {
            Ok(s) => {
                w = s.w;
                delta = s.delta;
            }
            Err(_) => break,
        }
        for b in 0..nb {
            v[b] = Some(eig[b].2.clone());
        }
    }

    let acc = accepted.expect("at least one accepted subproblem");
    Ok(finish(
        inputs,
        cfg,
        &streams,
        acc,
        status,
        w_trajectory,
        outer,
        subproblems,
    ))
}

fn full_weights(w: &[f64], streams: &[usize], users: usize) -> Vec<f64> {
    let mut out = vec![0.0; users + 2];
    for (b, &s) in streams.iter().enumerate() {
        out[s] = w[b];
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn finish(
    inputs: &OptInputs,
    cfg: &OptConfig,
    streams: &[usize],
    acc: Accepted,
    status: OptStatus,
    w_trajectory: Vec<Vec<f64>>,
    outer_iterations: usize,
    subproblems: usize,
) -> OptResult {
    let users = inputs.users();
    let n = inputs.n_tx();
    let layout = VarLayout::new(users, cfg.mode.has_common());
    let scale = Complex64::from(cfg.p_t);
    let mut pbar = vec![CMat::zeros(n, n); users + 2];
    let mut precoder = PrecoderMatrix::zeros(n, users);
    let mut ratios = vec![None; users + 2];
    for (b, &s) in streams.iter().enumerate() {
        if acc.blocks[b].trace().re <= DEAD_TRACE {
            continue;
        }
        let m = hermitian(&acc.blocks[b]) * scale;
        let (ratio, lam, v) = principal_eigen(&m);
        precoder.set_column(s, &(v * Complex64::from(lam.sqrt())));
        ratios[s] = Some(ratio);
        pbar[s] = m;
    }
    let pick = |idx: &[usize], shift: f64| idx.iter().map(|&i| acc.y[i] + shift).collect::<Vec<f64>>();
    let shift = cfg.p_t.ln();
    let mut alloc: Vec<f64> = if layout.alloc.is_empty() {
        vec![0.0; users]
    } else {
        layout.alloc.iter().map(|&i| acc.y[i].max(0.0)).collect()
    };
    let bounds = rates::ergodic_bounds(&inputs.a_users, &inputs.rho, &precoder, cfg.mode.delta_sic())
        .expect("validated dimensions");
    rescale_alloc(&bounds, &mut alloc);
    let r_min = rates::min_total_rate(&bounds, &alloc).unwrap_or(f64::NAN);
    let lift = SdrLift {
        pbar,
        alloc: layout.alloc.iter().map(|&i| acc.y[i]).collect(),
        r_min: acc.r_min,
        c: pick(&layout.c, shift),
        d: pick(&layout.d, shift),
        e: pick(&layout.e, shift),
        f: pick(&layout.f, shift),
    };
    OptResult {
        status,
        precoder,
        alloc,
        r_min,
        r_min_lifted: acc.r_min,
        w_trajectory,
        eigen_ratios: ratios,
        lift: Some(lift),
        outer_iterations,
        subproblems,
    }
}

fn hermitian(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::from(0.5)
}

/// Shrink the common-rate portions proportionally until every user can
/// decode the common stream of the extracted precoder.
fn rescale_alloc(bounds: &RatePair, alloc: &mut [f64]) {
    let sum: f64 = alloc.iter().sum();
    let min_common = bounds.common.iter().copied().fold(f64::INFINITY, f64::min);
    if sum > min_common && sum > 0.0 {
        let s = (min_common.max(0.0) / sum) * (1.0 - 1e-12);
        for c in alloc.iter_mut() {
            *c *= s;
        }
    }
}

/// CRB pair achieved by an extracted precoder.
pub fn achieved_crb(inputs: &OptInputs, p: &PrecoderMatrix) -> Option<(f64, f64)> {
    inputs.crb.as_ref().and_then(|c| crb::crb_pair(c, p).ok())
}
