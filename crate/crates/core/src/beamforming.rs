//! Reflection and precoder design from estimated CSI, plus SINR and sum rate.
//!
//! With matched single-stream precoders of equal power the weighted sum of
//! received signal powers is `F(Theta) = sum_k w_k |G(Theta) e_k|^2`, a convex
//! quadratic in `Theta`. Each round maximizes its linearization
//! `Re tr(Theta D)` over the feasible set, which can only increase `F`. For a
//! BD-RIS block the maximizer is the Takagi projection of the symmetrized
//! ascent matrix `D^H`; for a diagonal RIS it is the entry-wise phase.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bdris::Topology;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{is_finite, matmul, pinv, CMat, PINV_REL_TOL, ZERO};

/// Channel knowledge the optimizer works from.
#[derive(Debug, Clone, PartialEq)]
pub enum Csi {
    /// Separate `H` (`N x M`) and `E` (`M x K`).
    Factors { h: CMat, e: CMat },
    /// Composite `Z = [E_g^T (x) H_g]_g` of size `NK x G M_bar^2`.
    Composite { z: CMat, n: usize, k: usize, groups: usize },
}

impl Csi {
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            Csi::Factors { h, e } => (h.nrows(), e.ncols(), h.ncols()),
            Csi::Composite { z, n, k, groups } => {
                let mb = ((z.ncols() / groups) as f64).sqrt().round() as usize;
                (*n, *k, mb * groups)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Csi::Factors { h, e } => {
                if h.ncols() != e.nrows() {
                    return dim_err(format!("H {:?} and E {:?} do not chain", h.shape(), e.shape()));
                }
                if !is_finite(h) || !is_finite(e) {
                    return Err(Error::NonFinite("csi"));
                }
            }
            Csi::Composite { z, n, k, groups } => {
                let (_, _, m) = self.dims();
                let mb = m / groups.max(&1);
                if *groups == 0 || z.nrows() != n * k || z.ncols() != groups * mb * mb {
                    return dim_err(format!("Z {:?} does not fit N = {n}, K = {k}, G = {groups}", z.shape()));
                }
                if !is_finite(z) {
                    return Err(Error::NonFinite("csi"));
                }
            }
        }
        Ok(())
    }

    /// `G(Theta)`, `N x K`.
    pub fn cascade(&self, theta: &CMat) -> CMat {
        match self {
            Csi::Factors { h, e } => matmul(&matmul(h, theta), e),
            Csi::Composite { z, n, k, groups } => {
                let (_, _, m) = self.dims();
                let mb = m / groups;
                let d = mb * mb;
                let mut g = CMat::zeros(n * k, 1);
                for gi in 0..*groups {
                    let v = CMat::from_fn(d, 1, |r, _| theta[(gi * mb + r % mb, gi * mb + r / mb)]);
                    g += matmul(&z.columns(gi * d, d).into_owned(), &v);
                }
                CMat::from_column_slice(*n, *k, g.as_slice())
            }
        }
    }

    /// `D` such that `dF = 2 Re tr(dTheta D)` at `theta` for per-user weights `w`.
    fn linear_term(&self, theta: &CMat, w: &[f64]) -> CMat {
        let g = self.cascade(theta);
        match self {
            Csi::Factors { h, e } => {
                // sum_k w_k e_k c_k^H H
                let mut wc = g.adjoint();
                for (k, wk) in w.iter().enumerate() {
                    wc.row_mut(k).scale_mut(*wk);
                }
                matmul(&matmul(e, &wc), h)
            }
            Csi::Composite { z, n, groups, .. } => {
                let (_, _, m) = self.dims();
                let mb = m / groups;
                let d = mb * mb;
                let wg = CMat::from_fn(1, g.len(), |_, r| g[(r % n, r / n)].conj() * w[r / n]);
                let mut out = CMat::zeros(m, m);
                for gi in 0..*groups {
                    let row = matmul(&wg, &z.columns(gi * d, d).into_owned());
                    for i in 0..mb {
                        for j in 0..mb {
                            out[(gi * mb + j, gi * mb + i)] = row[(0, i + j * mb)];
                        }
                    }
                }
                out
            }
        }
    }
}

/// Takagi factorization `A = U diag(s) U^T` of a complex symmetric matrix.
/// Singular values are returned in decreasing order.
pub fn takagi(a: &CMat) -> Result<(CMat, Vec<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return dim_err("Takagi factorization needs a square matrix");
    }
    if !is_finite(a) {
        return Err(Error::NonFinite("takagi"));
    }
    // A conj(x) = s x with x = p + i q  <=>  [[B, C], [C, -B]] [p; q] = s [p; q]
    let big = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| {
        let (bi, bj) = (i / n, j / n);
        let z = 0.5 * (a[(i % n, j % n)] + a[(j % n, i % n)]);
        match (bi, bj) {
            (0, 0) => z.re,
            (1, 1) => -z.re,
            _ => z.im,
        }
    });
    let eig = SymmetricEigen::new(big);
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let smax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let mut cols: Vec<CMat> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for &idx in order.iter().take(n) {
        let ev = eig.eigenvalues[idx];
        if ev <= tol {
            break;
        }
        let x = CMat::from_fn(n, 1, |r, _| Complex64::new(eig.eigenvectors[(r, idx)], eig.eigenvectors[(r + n, idx)]));
        let nx = x.norm();
        cols.push(x.unscale(nx));
        s.push(ev);
    }
    // null directions: any orthonormal completion satisfies A conj(x) = 0
    let mut basis = 0;
    while cols.len() < n && basis < n {
        let mut v = CMat::zeros(n, 1);
        v[(basis, 0)] = Complex64::new(1.0, 0.0);
        for c in &cols {
            let proj = c.dotc(&v);
            v -= c * proj;
        }
        let nv = v.norm();
        if nv > 1e-6 {
            cols.push(v.unscale(nv));
            s.push(0.0);
        }
        basis += 1;
    }
    let mut u = CMat::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        u.set_column(j, &c.column(0));
    }
    Ok((u, s))
}

/// Nearest symmetric unitary: symmetrize, Takagi-factor, set every Takagi
/// value to one.
pub fn project_symmetric_unitary(x: &CMat) -> Result<CMat> {
    let (u, _) = takagi(x)?;
    Ok(&u * u.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Precoding {
    #[default]
    Matched,
    ZeroForcing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformingSettings {
    pub rounds: usize,
    /// Stop once a round improves the objective by less than this (relative).
    pub tol: f64,
    pub precoding: Precoding,
    /// User weights; `None` means `1/K` each.
    pub weights: Option<Vec<f64>>,
}

impl Default for BeamformingSettings {
    fn default() -> Self {
        BeamformingSettings { rounds: 100, tol: 1e-8, precoding: Precoding::Matched, weights: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    pub topology: Topology,
    pub diagonal: bool,
    pub theta: CMat,
    /// Column `k` is `u_k`; the squared column norms sum to one.
    pub precoders: CMat,
    pub weights: Vec<f64>,
    /// Weighted sum power with matched precoders after each round.
    pub objective_trace: Vec<f64>,
}

impl BeamformingSolution {
    /// Final value of the traced objective.
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

/// `sum_k w_k |G e_k|^2`.
pub fn matched_objective(csi: &Csi, theta: &CMat, w: &[f64]) -> f64 {
    let g = csi.cascade(theta);
    w.iter().enumerate().map(|(k, wk)| wk * g.column(k).norm_squared()).sum()
}

/// `sum_k alpha_k |g_k^T u_k|^2` for cascade `g` and precoders `u`.
pub fn weighted_sum_power(g: &CMat, u: &CMat, alpha: &[f64]) -> f64 {
    alpha.iter().enumerate().map(|(k, a)| a * (g.column(k).transpose() * u.column(k))[(0, 0)].norm_sqr()).sum()
}

/// Equal-power precoders for cascade `g` (`N x K`).
pub fn precoders(g: &CMat, kind: Precoding) -> Result<CMat> {
    let k = g.ncols();
    let mut u = match kind {
        Precoding::Matched => g.map(|z| z.conj()),
        Precoding::ZeroForcing => pinv(&g.transpose(), PINV_REL_TOL)?,
    };
    let share = (k as f64).sqrt();
    for mut col in u.column_iter_mut() {
        let nc = col.norm();
        if nc > 0.0 {
            col.unscale_mut(nc * share);
        }
    }
    let total: f64 = u.norm_squared();
    if total > 0.0 && (total - 1.0).abs() > 1e-12 {
        // users with a zero channel get no power; spread their share
        u.unscale_mut(total.sqrt());
    }
    Ok(u)
}

fn check_feasible(theta: &CMat, topology: Topology, diagonal: bool) -> Result<()> {
    let m = theta.nrows();
    let mb = topology.group_size(m);
    if diagonal {
        for i in 0..m {
            for j in 0..m {
                let z = theta[(i, j)];
                let bad = if i == j { (z.norm() - 1.0).abs() > 1e-10 } else { z != ZERO };
                if bad {
                    return Err(Error::InvalidArgument("diagonal reflection has a non-unit or off-diagonal entry".into()));
                }
            }
        }
        Ok(())
    } else {
        crate::bdris::ReflectionMatrix { topology, theta: theta.clone() }.check(1e-10).map(|_| ()).map_err(|e| {
            Error::InvalidArgument(format!("reflection with M_bar = {mb} is infeasible: {e}"))
        })
    }
}

fn mm_step(csi: &Csi, theta: &CMat, w: &[f64], topology: Topology, diagonal: bool) -> Result<CMat> {
    let m = theta.nrows();
    let d = csi.linear_term(theta, w);
    let mut next = CMat::zeros(m, m);
    if diagonal {
        for i in 0..m {
            let z = d[(i, i)].conj();
            next[(i, i)] = if z.norm() > 0.0 { z / z.norm() } else { theta[(i, i)] };
        }
        return Ok(next);
    }
    let mb = topology.group_size(m);
    for g in 0..topology.groups() {
        let r = g * mb;
        let block = d.view((r, r), (mb, mb)).adjoint();
        let p = if block.norm() > 0.0 { project_symmetric_unitary(&block)? } else { theta.view((r, r), (mb, mb)).into_owned() };
        next.view_mut((r, r), (mb, mb)).copy_from(&p);
    }
    Ok(next)
}

fn ascend(
    csi: &Csi,
    mut theta: CMat,
    w: &[f64],
    topology: Topology,
    diagonal: bool,
    settings: &BeamformingSettings,
    trace: &mut Vec<f64>,
) -> Result<CMat> {
    let mut f = matched_objective(csi, &theta, w);
    if trace.is_empty() {
        trace.push(f);
    }
    for _ in 0..settings.rounds {
        let cand = mm_step(csi, &theta, w, topology, diagonal)?;
        let fc = matched_objective(csi, &cand, w);
        if !(fc > f) {
            break;
        }
        let gain = (fc - f) / f.abs().max(f64::MIN_POSITIVE);
        theta = cand;
        f = fc;
        trace.push(f);
        if gain < settings.tol {
            break;
        }
    }
    Ok(theta)
}

/// Alternating design of `Theta` and the precoders for `topology`. With
/// `diagonal` the reflection is restricted to unit-modulus diagonal entries.
/// A BD-RIS design starts from the optimized diagonal solution.
pub fn optimize(csi: &Csi, topology: Topology, diagonal: bool, settings: &BeamformingSettings) -> Result<BeamformingSolution> {
    csi.validate()?;
    let (_, k, m) = csi.dims();
    if m == 0 || k == 0 {
        return dim_err("empty channel");
    }
    if m % topology.groups() != 0 {
        return dim_err(format!("M = {m} is not divisible into {} groups", topology.groups()));
    }
    let alpha = match &settings.weights {
        Some(w) if w.len() != k => return dim_err(format!("{} weights for {k} users", w.len())),
        Some(w) if w.iter().any(|&a| !(a > 0.0)) => return Err(Error::InvalidArgument("weights must be positive".into())),
        Some(w) => w.clone(),
        None => vec![1.0 / k as f64; k],
    };
    // matched precoders give every user power 1/K
    let w: Vec<f64> = alpha.iter().map(|a| a / k as f64).collect();
    let mut trace = Vec::new();
    let start = CMat::identity(m, m);
    let mut theta = ascend(csi, start, &w, topology, true, settings, &mut trace)?;
    if !diagonal {
        theta = ascend(csi, theta, &w, topology, false, settings, &mut trace)?;
    }
    check_feasible(&theta, topology, diagonal)?;
    let u = precoders(&csi.cascade(&theta), settings.precoding)?;
    Ok(BeamformingSolution { topology, diagonal, theta, precoders: u, weights: alpha, objective_trace: trace })
}

/// Objective of a solution re-evaluated on another channel.
pub fn objective_on(sol: &BeamformingSolution, csi: &Csi) -> f64 {
    let w: Vec<f64> = sol.weights.iter().map(|a| a / sol.weights.len() as f64).collect();
    matched_objective(csi, &sol.theta, &w)
}

/// SINR of every user when `sol` is applied to the true cascade `g_true`.
pub fn sinrs(sol: &BeamformingSolution, g_true: &CMat, p_d: f64, sigma2: f64) -> Result<Vec<f64>> {
    let k = sol.precoders.ncols();
    if g_true.ncols() != k || g_true.nrows() != sol.precoders.nrows() {
        return dim_err(format!("cascade {:?} does not match precoders {:?}", g_true.shape(), sol.precoders.shape()));
    }
    let gains = g_true.transpose() * &sol.precoders;
    Ok((0..k)
        .map(|kk| {
            let a = sol.weights[kk] * p_d;
            let sig = a * gains[(kk, kk)].norm_sqr();
            let intf: f64 = (0..k).filter(|&i| i != kk).map(|i| gains[(kk, i)].norm_sqr()).sum::<f64>() * a;
            let den = intf + sigma2;
            if den == 0.0 {
                if sig > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                sig / den
            }
        })
        .collect())
}

/// SINR of user `k` with the true channels `h`, `e`.
pub fn sinr(sol: &BeamformingSolution, h: &CMat, e: &CMat, k: usize, p_d: f64, sigma2: f64) -> Result<f64> {
    if k >= e.ncols() {
        return Err(Error::InvalidArgument(format!("user {k} out of range")));
    }
    Ok(sinrs(sol, &(h * &sol.theta * e), p_d, sigma2)?[k])
}

/// `lambda sum_k log2(1 + SINR_k)`.
pub fn sum_rate(sinrs: &[f64], lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if sinrs.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidArgument("SINR values must be non-negative".into()));
    }
    Ok(lambda * sinrs.iter().map(|s| (1.0 + s).log2()).sum::<f64>())
}
