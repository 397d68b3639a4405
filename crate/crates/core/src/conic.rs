//! Log-barrier interior-point solver over Hermitian positive-definite blocks
//! and a real vector.
//!
//! Every constraint is an affine function of the blocks and the vector. The
//! block coefficient of a row is restricted to `alpha I + sum_r s_r v_r v_r^H`
//! where the `v_r` come from a fixed per-block dictionary. This keeps a Newton
//! step at `O(n^3)` per block regardless of the number of constraints: the
//! block Hessian of `-log det Z` is inverted in closed form and the remaining
//! coupling is a small dense system in the constraint rows.
//!
//! Supported cones:
//! * `NonNeg(l)`: `l(Z, y) >= 0`
//! * `ExpEpigraph { x, z }`: `z(Z, y) >= exp(x(Z, y))`

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

type CMat = DMatrix<Complex64>;

/// Block coefficient `ident * I + sum (s * v_r v_r^H)` over the block dictionary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockCoef {
    pub ident: f64,
    pub rank1: Vec<(usize, f64)>,
}

impl BlockCoef {
    pub fn identity(scale: f64) -> Self {
        Self {
            ident: scale,
            rank1: Vec::new(),
        }
    }

    pub fn rank1(index: usize, scale: f64) -> Self {
        Self {
            ident: 0.0,
            rank1: vec![(index, scale)],
        }
    }
}

/// `sum_j <G_j, Z_j> + a^T y + b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub blocks: Vec<(usize, BlockCoef)>,
    pub y: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(b: f64) -> Self {
        Self {
            constant: b,
            ..Self::default()
        }
    }

    pub fn var(i: usize, scale: f64) -> Self {
        Self {
            y: vec![(i, scale)],
            ..Self::default()
        }
    }

    pub fn with_y(mut self, i: usize, scale: f64) -> Self {
        self.y.push((i, scale));
        self
    }

    pub fn with_block(mut self, j: usize, coef: BlockCoef) -> Self {
        self.blocks.push((j, coef));
        self
    }

    pub fn with_constant(mut self, b: f64) -> Self {
        self.constant += b;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for (_, c) in &mut self.blocks {
            c.ident *= s;
            for r in &mut c.rank1 {
                r.1 *= s;
            }
        }
        for v in &mut self.y {
            v.1 *= s;
        }
        self.constant *= s;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cone {
    NonNeg(Affine),
    ExpEpigraph { x: Affine, z: Affine },
}

/// Minimize `c^T y` subject to `Z_j > 0` and the cone constraints.
///
/// The feasible set must be bounded (add boxes on every vector entry) so that
/// the barrier has a minimizer for every `t`.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Per block, the `n_j x r_j` dictionary of rank-one directions.
    pub dictionaries: Vec<CMat>,
    pub n_y: usize,
    pub objective: DVector<f64>,
    pub constraints: Vec<Cone>,
}

impl Affine {
    /// Value at `(z, y)` with block dictionaries `dicts`.
    pub fn eval(&self, dicts: &[CMat], z: &[CMat], y: &DVector<f64>) -> f64 {
        let mut v = self.constant;
        for &(i, a) in &self.y {
            v += a * y[i];
        }
        for (j, c) in &self.blocks {
            v += c.ident * z[*j].trace().re;
            for &(r, s) in &c.rank1 {
                let d = dicts[*j].column(r);
                v += s * (d.adjoint() * &z[*j] * d)[(0, 0)].re;
            }
        }
        v
    }
}

impl Problem {
    /// Per constraint: `l` for `NonNeg(l)` and `z - exp(x)` for exponential epigraphs.
    pub fn slacks(&self, z: &[CMat], y: &DVector<f64>) -> Vec<f64> {
        let d = &self.dictionaries;
        self.constraints
            .iter()
            .map(|c| match c {
                Cone::NonNeg(a) => a.eval(d, z, y),
                Cone::ExpEpigraph { x, z: zz } => zz.eval(d, z, y) - x.eval(d, z, y).exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub gap_rel: f64,
    pub gap_abs: f64,
    /// Barrier parameter growth per outer iteration.
    pub mu: f64,
    pub max_newton: usize,
    /// Relative gap still reported as optimal when centering stalls in
    /// floating point before `gap_rel` is met.
    pub reduced_gap_rel: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            gap_rel: 1e-8,
            gap_abs: 1e-10,
            mu: 20.0,
            max_newton: 800,
            reduced_gap_rel: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub blocks: Vec<CMat>,
    pub y: DVector<f64>,
    pub objective: f64,
    /// Upper bound on suboptimality at exit.
    pub gap: f64,
    pub newton_steps: usize,
    /// Lower-triangular factors with `blocks[j] = L_j L_j^H`.
    pub factors: Vec<CMat>,
}

impl Solution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            factors: self.factors.clone(),
            y: self.y.clone(),
        }
    }
}

/// Starting point for [`solve`] given by block factors.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub factors: Vec<CMat>,
    pub y: DVector<f64>,
}

impl WarmStart {
    /// Factor positive-definite blocks; `None` if one is not positive definite.
    pub fn from_blocks(blocks: &[CMat], y: &DVector<f64>) -> Option<Self> {
        let factors = blocks
            .iter()
            .map(|z| Cholesky::new(hermitize(z)).map(|c| c.unpack()))
            .collect::<Option<_>>()?;
        Some(Self { factors, y: y.clone() })
    }

    fn blocks(&self) -> Vec<CMat> {
        self.factors.iter().map(|l| l * l.adjoint()).collect()
    }
}

/// Dense form of one affine row.
#[derive(Debug, Clone)]
struct Row {
    alpha: Vec<f64>,
    s: Vec<DVector<f64>>,
    a: DVector<f64>,
    b: f64,
    touches_blocks: bool,
}

impl Row {
    fn compile(aff: &Affine, dims: &[(usize, usize)], n_y: usize) -> Self {
        let mut alpha = vec![0.0; dims.len()];
        let mut s: Vec<DVector<f64>> = dims.iter().map(|&(_, r)| DVector::zeros(r)).collect();
        let mut touches = false;
        for (j, c) in &aff.blocks {
            alpha[*j] += c.ident;
            for &(r, v) in &c.rank1 {
                s[*j][r] += v;
            }
            touches |= c.ident != 0.0 || c.rank1.iter().any(|r| r.1 != 0.0);
        }
        let mut a = DVector::zeros(n_y);
        for &(i, v) in &aff.y {
            a[i] += v;
        }
        Self {
            alpha,
            s,
            a,
            b: aff.constant,
            touches_blocks: touches,
        }
    }

    fn value(&self, cache: &[BlockCache], y: &DVector<f64>) -> f64 {
        let mut v = self.a.dot(y) + self.b;
        for (j, c) in cache.iter().enumerate() {
            v += self.alpha[j] * c.tr + self.s[j].dot(&c.diag_gamma);
        }
        v
    }

    fn slope(&self, dirs: &[BlockDirection], dy: &DVector<f64>) -> f64 {
        let mut v = self.a.dot(dy);
        for (j, d) in dirs.iter().enumerate() {
            v += self.alpha[j] * d.tr + self.s[j].dot(&d.diag);
        }
        v
    }

    /// `tr(G_j)` summed over blocks.
    fn block_trace(&self, dicts: &[CMat]) -> f64 {
        let mut t = 0.0;
        for (j, d) in dicts.iter().enumerate() {
            t += self.alpha[j] * d.nrows() as f64;
            for r in 0..d.ncols() {
                t += self.s[j][r] * d.column(r).norm_squared();
            }
        }
        t
    }
}

#[derive(Debug, Clone)]
enum Group {
    Lin(usize),
    Exp { x: usize, z: usize },
}

impl Group {
    fn rows(&self) -> Vec<usize> {
        match *self {
            Group::Lin(r) => vec![r],
            Group::Exp { x, z } => vec![x, z],
        }
    }

    /// Barrier value, gradient, and the lower Cholesky factor of the Hessian
    /// (row-major), all in the row values; `None` outside the domain.
    fn barrier(&self, vals: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        match *self {
            Group::Lin(r) => {
                let l = vals[r];
                (l > 0.0).then(|| (-l.ln(), vec![-1.0 / l], vec![1.0 / l]))
            }
            Group::Exp { x, z } => {
                let (xv, zv) = (vals[x], vals[z]);
                if !(zv > 0.0) {
                    return None;
                }
                let q = zv.ln() - xv;
                if !(q > 0.0) {
                    return None;
                }
                let f = -q.ln() - zv.ln();
                let g = vec![1.0 / q, -1.0 / (zv * q) - 1.0 / zv];
                // Hessian [[1/q^2, -1/(z q^2)], [., 1/(z^2 q^2) + 1/(z^2 q) + 1/z^2]]
                let l11 = 1.0 / q;
                let l21 = -1.0 / (zv * q);
                let l22 = ((1.0 / q + 1.0).sqrt()) / zv;
                Some((f, g, vec![l11, 0.0, l21, l22]))
            }
        }
    }

    fn nu(&self) -> f64 {
        match self {
            Group::Lin(_) => 1.0,
            Group::Exp { .. } => 2.0,
        }
    }
}

/// Quantities of one block derived from its factor.
struct BlockCache {
    /// Lower-triangular factor, `Z = L L^H`.
    l: CMat,
    /// `L^H v_r` for every dictionary vector.
    lv: CMat,
    /// `L^H L`.
    ltl: CMat,
    diag_gamma: DVector<f64>,
    tr: f64,
    logdet: f64,
}

impl BlockCache {
    fn new(l: &CMat, dict: &CMat) -> Option<Self> {
        let mut logdet = 0.0;
        for i in 0..l.nrows() {
            let d = l[(i, i)].norm();
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            logdet += 2.0 * d.ln();
        }
        let lv = l.adjoint() * dict;
        let ltl = l.adjoint() * l;
        Some(Self {
            diag_gamma: DVector::from_fn(dict.ncols(), |i, _| lv.column(i).norm_squared()),
            tr: ltl.trace().re,
            l: l.clone(),
            ltl,
            lv,
            logdet,
        })
    }

    /// `L^H G L` for `G = ident I + sum_r s_r v_r v_r^H`.
    fn congruence(&self, ident: f64, s: &DVector<f64>) -> CMat {
        let mut out = &self.ltl * Complex64::from(ident);
        for r in 0..s.len() {
            if s[r] != 0.0 {
                let col = self.lv.column(r);
                out += col * col.adjoint() * Complex64::from(s[r]);
            }
        }
        out
    }
}

/// Hermitian `n x n` matrix as a real vector of length `n^2` preserving
/// the trace inner product.
fn stack_hermitian(m: &CMat, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = 0;
    for i in 0..n {
        out[k] = m[(i, i)].re;
        k += 1;
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            out[k] = std::f64::consts::SQRT_2 * v.re;
            out[k + 1] = std::f64::consts::SQRT_2 * v.im;
            k += 2;
        }
    }
}

/// Block step `Delta Z = L X L^H` kept in congruence coordinates.
struct BlockDirection {
    x: CMat,
    tr: f64,
    diag: DVector<f64>,
    /// Smallest eigenvalue of `X`; `I + a X` stays positive definite for
    /// `a < -1 / min_eig` when it is negative.
    min_eig: f64,
}

fn hermitize(z: &CMat) -> CMat {
    (z + z.adjoint()) * Complex64::from(0.5)
}

/// Cholesky solve of a symmetric positive-definite system after diagonal scaling.
struct ScaledChol {
    scale: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl ScaledChol {
    fn new(m: &DMatrix<f64>) -> Option<Self> {
        let n = m.nrows();
        let scale = DVector::from_fn(n, |i, _| {
            let d = m[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        });
        let scaled = DMatrix::from_fn(n, n, |i, k| m[(i, k)] * scale[i] * scale[k]);
        let sym = (&scaled + scaled.transpose()) * 0.5;
        let chol = Cholesky::new(sym)?;
        Some(Self { scale, chol })
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let sb = b.component_mul(&self.scale);
        self.chol.solve(&sb).component_mul(&self.scale)
    }
}

/// Iterate: block factors and the vector.
#[derive(Clone)]
struct Point {
    l: Vec<CMat>,
    y: DVector<f64>,
}

/// Compiled problem with the barrier machinery.
struct Barrier<'a> {
    dicts: &'a [CMat],
    n_y: usize,
    c: DVector<f64>,
    rows: Vec<Row>,
    groups: Vec<Group>,
    nu: f64,
}

struct Step {
    dirs: Vec<BlockDirection>,
    dy: DVector<f64>,
    decrement2: f64,
}

enum Centering {
    Done,
    Failed,
}

impl<'a> Barrier<'a> {
    fn new(dicts: &'a [CMat], n_y: usize, c: DVector<f64>, cones: &[Cone]) -> Self {
        let dims: Vec<(usize, usize)> = dicts.iter().map(|d| (d.nrows(), d.ncols())).collect();
        let mut rows = Vec::new();
        let mut groups = Vec::new();
        for cone in cones {
            match cone {
                Cone::NonNeg(a) => {
                    rows.push(Row::compile(a, &dims, n_y));
                    groups.push(Group::Lin(rows.len() - 1));
                }
                Cone::ExpEpigraph { x, z } => {
                    rows.push(Row::compile(x, &dims, n_y));
                    rows.push(Row::compile(z, &dims, n_y));
                    groups.push(Group::Exp {
                        x: rows.len() - 2,
                        z: rows.len() - 1,
                    });
                }
            }
        }
        let nu = dims.iter().map(|d| d.0 as f64).sum::<f64>() + groups.iter().map(Group::nu).sum::<f64>();
        Self {
            dicts,
            n_y,
            c,
            rows,
            groups,
            nu,
        }
    }

    fn caches(&self, p: &Point) -> Option<Vec<BlockCache>> {
        p.l.iter().zip(self.dicts).map(|(l, d)| BlockCache::new(l, d)).collect()
    }

    fn row_values(&self, cache: &[BlockCache], y: &DVector<f64>) -> Vec<f64> {
        self.rows.iter().map(|r| r.value(cache, y)).collect()
    }

    /// `t c^T y + barrier`, `None` outside the domain.
    fn merit(&self, t: f64, cache: &[BlockCache], y: &DVector<f64>) -> Option<f64> {
        let vals = self.row_values(cache, y);
        let mut f = t * self.c.dot(y) - cache.iter().map(|c| c.logdet).sum::<f64>();
        for g in &self.groups {
            f += g.barrier(&vals)?.0;
        }
        f.is_finite().then_some(f)
    }

    fn strictly_feasible(&self, p: &Point) -> bool {
        self.caches(p)
            .is_some_and(|cache| self.merit(0.0, &cache, &p.y).is_some())
    }

    fn newton_step(&self, t: f64, cache: &[BlockCache], y: &DVector<f64>) -> Option<Step> {
        let vals = self.row_values(cache, y);
        let nb = cache.len();
        let mut grad_row = vec![0.0; self.rows.len()];
        let mut g_y = &self.c * t;
        let mut h_yy = DMatrix::<f64>::zeros(self.n_y, self.n_y);
        // rows coupled to blocks, and the Hessian factor of their groups
        let mut coupled: Vec<usize> = Vec::new();
        let mut factors: Vec<(usize, DMatrix<f64>)> = Vec::new();
        for g in &self.groups {
            let (_, grad, chol) = g.barrier(&vals)?;
            let rows = g.rows();
            for (k, &r) in rows.iter().enumerate() {
                grad_row[r] = grad[k];
                g_y.axpy(grad[k], &self.rows[r].a, 1.0);
            }
            let d = rows.len();
            let l = DMatrix::from_row_slice(d, d, &chol);
            if rows.iter().any(|&r| self.rows[r].touches_blocks) {
                factors.push((coupled.len(), l));
                coupled.extend(rows);
            } else {
                for col in 0..d {
                    let mut w = DVector::zeros(self.n_y);
                    for (k, &r) in rows.iter().enumerate() {
                        w.axpy(l[(k, col)], &self.rows[r].a, 1.0);
                    }
                    h_yy += &w * w.transpose();
                }
            }
        }
        let dn = coupled.len();
        let mut l_c = DMatrix::<f64>::zeros(dn, dn);
        for (start, l) in &factors {
            l_c.view_mut((*start, *start), l.shape()).copy_from(l);
        }
        let mut a_y = DMatrix::<f64>::zeros(dn, self.n_y);
        for (i, &r) in coupled.iter().enumerate() {
            a_y.set_row(i, &self.rows[r].a.transpose());
        }

        // In congruence coordinates X -> L^H X L the block Hessian is the
        // identity; F holds the coupled rows there and phi the block gradient.
        let offsets: Vec<usize> = cache
            .iter()
            .scan(0, |acc, c| {
                let o = *acc;
                *acc += c.l.nrows() * c.l.nrows();
                Some(o)
            })
            .collect();
        let total: usize = cache.iter().map(|c| c.l.nrows() * c.l.nrows()).sum();
        let mut f = DMatrix::<f64>::zeros(total, dn);
        let mut phi = DVector::<f64>::zeros(total);
        let mut phi_blocks = Vec::with_capacity(nb);
        let mut f_blocks: Vec<Vec<Option<CMat>>> = Vec::with_capacity(nb);
        for (j, bc) in cache.iter().enumerate() {
            let n = bc.l.nrows();
            let len = n * n;
            let mut beta = 0.0;
            let mut gam = DVector::zeros(bc.diag_gamma.len());
            for (r, row) in self.rows.iter().enumerate() {
                if grad_row[r] != 0.0 {
                    beta += grad_row[r] * row.alpha[j];
                    gam.axpy(grad_row[r], &row.s[j], 1.0);
                }
            }
            let ph = bc.congruence(beta, &gam) - CMat::identity(n, n);
            stack_hermitian(&ph, &mut phi.as_mut_slice()[offsets[j]..offsets[j] + len]);
            phi_blocks.push(ph);
            let mut fj = Vec::with_capacity(dn);
            for (i, &r) in coupled.iter().enumerate() {
                let row = &self.rows[r];
                if row.alpha[j] == 0.0 && row.s[j].iter().all(|&v| v == 0.0) {
                    fj.push(None);
                    continue;
                }
                let m = bc.congruence(row.alpha[j], &row.s[j]);
                let mut col = f.column_mut(i);
                stack_hermitian(&m, &mut col.as_mut_slice()[offsets[j]..offsets[j] + len]);
                fj.push(Some(m));
            }
            f_blocks.push(fj);
        }

        let (dy, w_dual) = if dn > 0 {
            // (I + E^T E) w = E^T(-phi) + W_y dy with E = F L_c, W_y = L_c^T A_y
            let e = &f * &l_c;
            let mut stacked = DMatrix::<f64>::zeros(total + dn, dn);
            stacked.view_mut((0, 0), (total, dn)).copy_from(&e);
            stacked.view_mut((total, 0), (dn, dn)).fill_with_identity();
            let r = stacked.qr().r();
            let w_y = l_c.transpose() * &a_y;
            let r_w = -(e.transpose() * &phi);
            let rt_solve = |b: &DMatrix<f64>| r.transpose().solve_lower_triangular(b);
            let k = rt_solve(&w_y)?;
            let kr = rt_solve(&DMatrix::from_column_slice(dn, 1, r_w.as_slice()))?;
            let s_mat = &h_yy + k.transpose() * &k;
            let rhs = -(&g_y + k.transpose() * &kr);
            let dy = ScaledChol::new(&s_mat)?.solve(&rhs);
            let rhs_w = kr + &k * &dy;
            let w = r.solve_upper_triangular(&rhs_w)?;
            (dy, &l_c * DVector::from_column_slice(w.as_slice()))
        } else {
            let dy = ScaledChol::new(&h_yy)?.solve(&(-&g_y));
            (dy, DVector::zeros(0))
        };

        // X = -(phi + F u) in congruence coordinates
        let mut dirs = Vec::with_capacity(nb);
        let mut inner_gx = 0.0;
        for (j, bc) in cache.iter().enumerate() {
            let mut xi = phi_blocks[j].clone();
            for (i, fm) in f_blocks[j].iter().enumerate() {
                if let Some(m) = fm {
                    xi += m * Complex64::from(w_dual[i]);
                }
            }
            inner_gx -= (phi_blocks[j].adjoint() * &xi).trace().re;
            let x = hermitize(&(-xi));
            let tr = (&bc.ltl * &x).trace().re;
            let diag = DVector::from_fn(bc.lv.ncols(), |i, _| {
                let v = bc.lv.column(i);
                (v.adjoint() * &x * v)[(0, 0)].re
            });
            let min_eig = x.clone().symmetric_eigenvalues().min();
            dirs.push(BlockDirection { x, tr, diag, min_eig });
        }
        let decrement2 = -(inner_gx + g_y.dot(&dy));
        if !decrement2.is_finite() {
            return None;
        }
        Some(Step {
            dirs,
            dy,
            decrement2: decrement2.max(0.0),
        })
    }

    /// `L_j <- L_j chol(I + alpha X_j)`, `y <- y + alpha dy`.
    fn advance(&self, p: &Point, step: &Step, alpha: f64) -> Option<Point> {
        let l =
            p.l.iter()
                .zip(&step.dirs)
                .map(|(l, d)| {
                    let n = l.nrows();
                    let m = CMat::identity(n, n) + &d.x * Complex64::from(alpha);
                    Cholesky::new(m).map(|c| l * c.unpack())
                })
                .collect::<Option<Vec<_>>>()?;
        Some(Point {
            l,
            y: &p.y + &step.dy * alpha,
        })
    }

    /// Barrier weight whose central point is closest, in the local norm, to
    /// the start point. The squared Newton decrement is quadratic in `t`.
    fn initial_t(&self, p: &Point) -> f64 {
        let Some(cache) = self.caches(p) else { return 1.0 };
        let dec = |t: f64| self.newton_step(t, &cache, &p.y).map(|s| s.decrement2);
        let (Some(d0), Some(d1), Some(d2)) = (dec(0.0), dec(1.0), dec(2.0)) else {
            return 1.0;
        };
        let curv = (d2 - 2.0 * d1 + d0) / 2.0;
        let lin = (d1 - d0 - curv) / 2.0;
        if !(curv > 0.0) {
            return 1.0;
        }
        (-lin / curv).clamp(1.0, 1e12)
    }

    /// Damped Newton centering at fixed `t`.
    fn center(&self, t: f64, p: &mut Point, budget: &mut usize) -> Centering {
        loop {
            let Some(cache) = self.caches(p) else {
                return Centering::Failed;
            };
            let Some(f0) = self.merit(t, &cache, &p.y) else {
                return Centering::Failed;
            };
            let Some(step) = self.newton_step(t, &cache, &p.y) else {
                log::trace!("newton system failed at t = {t:e}");
                return Centering::Failed;
            };
            if step.decrement2 / 2.0 <= 1e-9 {
                return Centering::Done;
            }
            if *budget == 0 {
                return Centering::Failed;
            }
            *budget -= 1;
            let vals = self.row_values(&cache, &p.y);
            let mut alpha_max = f64::INFINITY;
            for g in &self.groups {
                let r = match *g {
                    Group::Lin(r) => r,
                    Group::Exp { z, .. } => z,
                };
                let d = self.rows[r].slope(&step.dirs, &step.dy);
                if d < 0.0 {
                    alpha_max = alpha_max.min(-vals[r] / d);
                }
            }
            for d in &step.dirs {
                if d.min_eig < 0.0 {
                    alpha_max = alpha_max.min(-1.0 / d.min_eig);
                }
            }
            let mut alpha = if alpha_max.is_finite() {
                (0.99 * alpha_max).min(1.0)
            } else {
                1.0
            };
            let mut accepted = false;
            while alpha > 1e-16 {
                if let Some(trial) = self.advance(p, &step, alpha) {
                    if let Some(ft) = self.caches(&trial).and_then(|c| self.merit(t, &c, &trial.y)) {
                        if ft <= f0 - 0.01 * alpha * step.decrement2 {
                            *p = trial;
                            accepted = true;
                            // merit no longer resolves the decrease
                            if ft >= f0 && step.decrement2 < 1e-5 {
                                return Centering::Done;
                            }
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                log::trace!("line search stalled at t = {t:e}, decrement^2 = {:e}", step.decrement2);
                // at the limit of floating-point resolution; treat as centered
                return if step.decrement2 < 1e-5 {
                    Centering::Done
                } else {
                    Centering::Failed
                };
            }
        }
    }

    /// Path-following from a strictly feasible point. `stop` is checked after
    /// every centering and ends the run early when it returns true.
    fn follow_path(
        &self,
        mut p: Point,
        settings: &Settings,
        stop: impl Fn(&DVector<f64>, f64) -> bool,
    ) -> (Status, Point, f64, usize) {
        let mut t = self.initial_t(&p);
        let mut budget = settings.max_newton;
        let mut centered_once = false;
        loop {
            let fail = matches!(self.center(t, &mut p, &mut budget), Centering::Failed);
            if fail {
                // the previous centering certified nu/(t/mu)
                let prev_gap = self.nu * settings.mu / t;
                let tol = settings.gap_abs + settings.reduced_gap_rel * self.c.dot(&p.y).abs().max(1.0);
                let status = if centered_once && prev_gap <= tol {
                    Status::Optimal
                } else {
                    Status::NumericalFailure
                };
                return (status, p, prev_gap, settings.max_newton - budget);
            }
            centered_once = true;
            log::trace!("centered t = {t:e} after {} newton steps", settings.max_newton - budget);
            let gap = self.nu / t;
            if stop(&p.y, gap) || gap <= settings.gap_abs + settings.gap_rel * self.c.dot(&p.y).abs() {
                return (Status::Optimal, p, gap, settings.max_newton - budget);
            }
            t *= settings.mu;
        }
    }
}

fn factor_all(z: &[CMat]) -> Option<Vec<CMat>> {
    z.iter()
        .map(|m| Cholesky::new(hermitize(m)).map(|c| c.unpack()))
        .collect()
}

/// Solve `problem`, starting from `hint` when it is strictly feasible and
/// running a phase-one search otherwise.
pub fn solve(problem: &Problem, hint: Option<&WarmStart>, settings: &Settings) -> Solution {
    let nb = problem.dictionaries.len();
    let dims: Vec<usize> = problem.dictionaries.iter().map(|d| d.nrows()).collect();
    let phase2 = Barrier::new(
        &problem.dictionaries,
        problem.n_y,
        problem.objective.clone(),
        &problem.constraints,
    );
    let finish = |status, p: Point, gap, newton_steps| {
        let blocks = p.l.iter().map(|l| l * l.adjoint()).collect();
        Solution {
            status,
            objective: problem.objective.dot(&p.y),
            blocks,
            y: p.y,
            gap,
            newton_steps,
            factors: p.l,
        }
    };
    let start = match hint {
        Some(h) if h.factors.len() == nb && h.y.len() == problem.n_y => Point {
            l: h.factors.clone(),
            y: h.y.clone(),
        },
        _ => Point {
            l: dims
                .iter()
                .map(|&n| CMat::identity(n, n) * Complex64::from((1.0 / (n * nb.max(1)) as f64).sqrt()))
                .collect(),
            y: DVector::zeros(problem.n_y),
        },
    };
    let mut steps = 0;
    let start = if phase2.strictly_feasible(&start) {
        start
    } else {
        let z0 = WarmStart {
            factors: start.l,
            y: start.y,
        }
        .blocks();
        match phase_one(
            problem,
            &z0,
            &hint.map_or_else(|| DVector::zeros(problem.n_y), |h| h.y.clone()),
            settings,
        ) {
            PhaseOne::Feasible(p, n) => {
                steps += n;
                p
            }
            PhaseOne::Infeasible(p, n) => return finish(Status::Infeasible, p, f64::INFINITY, n),
            PhaseOne::Failed(p, n) => return finish(Status::NumericalFailure, p, f64::INFINITY, n),
        }
    };
    let (status, p, gap, n) = phase2.follow_path(start, settings, |_, _| false);
    finish(status, p, gap, steps + n)
}

enum PhaseOne {
    Feasible(Point, usize),
    Infeasible(Point, usize),
    Failed(Point, usize),
}

/// Minimize a slack `s` that shifts every block by `sI` and relaxes every
/// row by at least `s`, in the variables `Z'_j = Z_j + sI`.
fn phase_one(problem: &Problem, z0: &[CMat], y0: &DVector<f64>, settings: &Settings) -> PhaseOne {
    let n_y = problem.n_y;
    let s_idx = n_y;
    let dims: Vec<(usize, usize)> = problem.dictionaries.iter().map(|d| (d.nrows(), d.ncols())).collect();
    // Z_j = Z'_j - s I turns <G, Z> into <G, Z'> - s tr(G)
    let relax = |aff: &Affine, sign: f64| -> Affine {
        let row = Row::compile(aff, &dims, n_y);
        let tr = row.block_trace(&problem.dictionaries);
        let kappa = 1.0 + tr.abs();
        aff.clone().with_y(s_idx, -tr + sign * kappa)
    };
    let mut cones: Vec<Cone> = problem
        .constraints
        .iter()
        .map(|c| match c {
            Cone::NonNeg(a) => Cone::NonNeg(relax(a, 1.0)),
            Cone::ExpEpigraph { x, z } => Cone::ExpEpigraph {
                x: relax(x, -1.0),
                z: relax(z, 1.0),
            },
        })
        .collect();
    cones.push(Cone::NonNeg(Affine::var(s_idx, 1.0).with_constant(1.0)));
    let mut c = DVector::zeros(n_y + 1);
    c[s_idx] = 1.0;
    let bar = Barrier::new(&problem.dictionaries, n_y + 1, c, &cones);

    // shifted start: project onto the PSD cone plus a small ridge
    let zp: Vec<CMat> = z0
        .iter()
        .map(|z| {
            let n = z.nrows();
            let lmin = hermitize(z).symmetric_eigenvalues().min();
            let ridge = (1e-3 * z.trace().re.abs() / n as f64).max(1e-6) + (-lmin).max(0.0);
            hermitize(z) + CMat::identity(n, n) * Complex64::from(ridge)
        })
        .collect();
    let unshift = |p: &Point| -> Point {
        let s = p.y[s_idx];
        let z: Vec<CMat> =
            p.l.iter()
                .map(|l| l * l.adjoint() - CMat::identity(l.nrows(), l.nrows()) * Complex64::from(s))
                .collect();
        let l = factor_all(&z).unwrap_or_else(|| p.l.clone());
        Point {
            l,
            y: p.y.rows(0, n_y).into_owned(),
        }
    };
    let Some(lp) = factor_all(&zp) else {
        let l = zp.iter().map(|z| CMat::identity(z.nrows(), z.nrows())).collect();
        return PhaseOne::Failed(Point { l, y: y0.clone() }, 0);
    };
    let mut s = 1.0;
    let mut p = Point {
        l: lp,
        y: y0.clone().push(s),
    };
    let mut found = false;
    for _ in 0..200 {
        p.y[s_idx] = s;
        if bar.strictly_feasible(&p) {
            found = true;
            break;
        }
        s *= 2.0;
    }
    if !found {
        return PhaseOne::Failed(unshift(&p), 0);
    }
    let (status, p, _, steps) = bar.follow_path(p, settings, |y, gap| y[s_idx] < 0.0 || y[s_idx] - gap > 0.0);
    let s_final = p.y[s_idx];
    let out = unshift(&p);
    if s_final < 0.0 {
        PhaseOne::Feasible(out, steps)
    } else if status == Status::Optimal {
        PhaseOne::Infeasible(out, steps)
    } else {
        PhaseOne::Failed(out, steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn max_quadratic_form_under_unit_trace() {
        // maximize v^H Z v with tr Z <= 1: optimum |v|^2 at Z = vv^H/|v|^2
        let v = DMatrix::from_column_slice(3, 1, &[c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 1.0)]);
        let problem = Problem {
            dictionaries: vec![v.clone()],
            n_y: 1,
            objective: DVector::from_element(1, -1.0),
            constraints: vec![
                Cone::NonNeg(Affine::constant(1.0).with_block(0, BlockCoef::identity(-1.0))),
                Cone::NonNeg(Affine::var(0, -1.0).with_block(0, BlockCoef::rank1(0, 1.0))),
                Cone::NonNeg(Affine::var(0, 1.0).with_constant(100.0)),
            ],
        };
        let sol = solve(&problem, None, &Settings::default());
        assert_eq!(sol.status, Status::Optimal);
        assert_relative_eq!(-sol.objective, 7.0, max_relative = 1e-7);
        let z = &sol.blocks[0];
        let top = z.clone().symmetric_eigenvalues().max();
        assert!(top / z.trace().re > 1.0 - 1e-6);
    }

    #[test]
    fn exponential_epigraph_log_bound() {
        // maximize x subject to e^x <= 1 + tr(Z), tr Z <= 2  => x = ln 3
        let problem = Problem {
            dictionaries: vec![DMatrix::zeros(2, 0)],
            n_y: 1,
            objective: DVector::from_element(1, -1.0),
            constraints: vec![
                Cone::NonNeg(Affine::constant(2.0).with_block(0, BlockCoef::identity(-1.0))),
                Cone::ExpEpigraph {
                    x: Affine::var(0, 1.0),
                    z: Affine::constant(1.0).with_block(0, BlockCoef::identity(1.0)),
                },
                Cone::NonNeg(Affine::var(0, 1.0).with_constant(50.0)),
            ],
        };
        let sol = solve(&problem, None, &Settings::default());
        assert_eq!(sol.status, Status::Optimal);
        assert_relative_eq!(sol.y[0], 3f64.ln(), max_relative = 1e-7);
    }

    #[test]
    fn detects_infeasible() {
        // tr Z <= 1 and v^H Z v >= 5 with |v|^2 = 2
        let v = DMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.0, 1.0)]);
        let problem = Problem {
            dictionaries: vec![v],
            n_y: 1,
            objective: DVector::from_element(1, 1.0),
            constraints: vec![
                Cone::NonNeg(Affine::constant(1.0).with_block(0, BlockCoef::identity(-1.0))),
                Cone::NonNeg(Affine::constant(-5.0).with_block(0, BlockCoef::rank1(0, 1.0))),
                Cone::NonNeg(Affine::var(0, 1.0).with_constant(1.0)),
                Cone::NonNeg(Affine::var(0, -1.0).with_constant(1.0)),
            ],
        };
        assert_eq!(solve(&problem, None, &Settings::default()).status, Status::Infeasible);
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let v = DMatrix::from_column_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.5), c(0.0, 1.0), c(1.0, 0.0)]);
        let problem = Problem {
            dictionaries: vec![v],
            n_y: 1,
            objective: DVector::from_element(1, -1.0),
            constraints: vec![
                Cone::NonNeg(Affine::constant(1.0).with_block(0, BlockCoef::identity(-1.0))),
                Cone::NonNeg(Affine::var(0, -1.0).with_block(0, BlockCoef::rank1(0, 1.0))),
                Cone::NonNeg(Affine::var(0, -1.0).with_block(0, BlockCoef::rank1(1, 1.0))),
                Cone::NonNeg(Affine::var(0, 1.0).with_constant(10.0)),
            ],
        };
        let cold = solve(&problem, None, &Settings::default());
        let warm = solve(&problem, Some(&cold.warm_start()), &Settings::default());
        assert_eq!(warm.status, Status::Optimal);
        assert_relative_eq!(cold.objective, warm.objective, max_relative = 1e-7);
    }
}
