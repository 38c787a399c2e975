//! Tucker2 channel estimation by bilinear alternating least squares (BALS).
//!
//! The received slices obey `Y_t = H Theta_t E + noise`, i.e. a Tucker2 model
//! with known core slices `Theta_t`. Holding `E` fixed, `H` solves
//! `[Y_1 .. Y_T] = H [Theta_1 E .. Theta_T E]`; holding `H` fixed, `E^T`
//! solves `[Y_1^T .. Y_T^T] = E^T [Theta_1^T H^T .. Theta_T^T H^T]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bdris::{PilotBook, Topology};
use crate::channel::PilotObservation;
use crate::error::{dim_err, Error, Result};
use crate::io::{self, Bundle};
use crate::rng::{cn_matrix, purpose, stream};
use crate::tensor::{fro2, is_finite, matmul, pinv_with_rank, right_lstsq, CMat, Tensor3, PINV_REL_TOL};

/// Starting point for `E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// i.i.d. `CN(0,1)` entries.
    Random,
    /// Leading Kronecker factor of the minimum-norm composite estimate,
    /// perturbed by the random draw for restarts after the first.
    #[default]
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalsSettings {
    pub kappa: f64,
    pub i_max: usize,
    /// Seed of the random `E` initialization.
    pub seed: u64,
    /// Exact line search along the last update direction after each sweep.
    pub line_search: bool,
    /// Independent starts; the run with the lowest final residual wins.
    pub restarts: usize,
    pub init: Init,
}

impl Default for BalsSettings {
    fn default() -> Self {
        BalsSettings { kappa: 1e-6, i_max: 30, seed: 0, line_search: true, restarts: 1, init: Init::Spectral }
    }
}

impl BalsSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.i_max == 0 {
            return Err(Error::Config("i_max must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub h_hat: CMat,
    pub e_hat: CMat,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Anchor the gauge was fixed to, if any.
    pub beta_anchor: Option<Complex64>,
    pub converged: bool,
    /// True when some LS system lost rank during the iterations.
    pub rank_deficient: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    iterations: usize,
    converged: bool,
    rank_deficient: bool,
    residuals: &'a [f64],
    anchor: Option<[f64; 2]>,
}

impl EstimateResult {
    /// `H_hat E_hat`.
    pub fn composite(&self) -> CMat {
        matmul(&self.h_hat, &self.e_hat)
    }

    pub fn to_bundle(&self) -> Bundle {
        vec![("H_hat".into(), self.h_hat.clone()), ("E_hat".into(), self.e_hat.clone())]
    }

    /// Factor matrices as bundle CSV.
    pub fn to_csv(&self) -> String {
        io::to_csv(&self.to_bundle())
    }

    /// JSON run summary.
    pub fn summary_json(&self) -> String {
        let s = Summary {
            iterations: self.iterations,
            converged: self.converged,
            rank_deficient: self.rank_deficient,
            residuals: &self.residual_history,
            anchor: self.beta_anchor.map(|z| [z.re, z.im]),
        };
        serde_json::to_string(&s).expect("summary serializes")
    }
}

fn check_identifiable(m: usize, n: usize, k: usize, t: usize) -> Result<()> {
    if m > (n * t).min(k * t) {
        return Err(Error::Identifiability(format!("M <= min(N*T, K*T) violated: {m} > min({}, {})", n * t, k * t)));
    }
    Ok(())
}

fn residual(slices: &[CMat], thetas: &[CMat], h: &CMat, e: &CMat) -> f64 {
    slices
        .iter()
        .zip(thetas)
        .map(|(y, th)| fro2(&(y - matmul(&matmul(h, th), e))))
        .sum()
}

/// Core BALS loop on explicit slices and reflections, starting from `e0`.
pub fn bals_slices(slices: &[CMat], thetas: &[CMat], e0: CMat, settings: &BalsSettings) -> Result<EstimateResult> {
    settings.validate()?;
    let t = slices.len();
    if t == 0 || thetas.len() != t {
        return dim_err(format!("{} slices but {} reflections", t, thetas.len()));
    }
    let (n, k) = slices[0].shape();
    let m = thetas[0].nrows();
    if slices.iter().any(|y| y.shape() != (n, k)) || thetas.iter().any(|th| th.shape() != (m, m)) || e0.shape() != (m, k) {
        return dim_err("inconsistent slice, reflection or initialization shapes");
    }
    if slices.iter().any(|y| !is_finite(y)) {
        return Err(Error::NonFinite("bals"));
    }
    check_identifiable(m, n, k, t)?;

    // mode-1 and mode-2 unfoldings of the observation
    let mut y1 = CMat::zeros(n, k * t);
    let mut y2 = CMat::zeros(k, n * t);
    for (i, y) in slices.iter().enumerate() {
        y1.view_mut((0, i * k), (n, k)).copy_from(y);
        y2.view_mut((0, i * n), (k, n)).copy_from(&y.transpose());
    }

    let mut e = e0;
    let mut h = CMat::zeros(n, m);
    let mut history: Vec<f64> = Vec::with_capacity(settings.i_max);
    let mut converged = false;
    let mut rank_deficient = false;
    let mut a = CMat::zeros(m, k * t);
    let mut b = CMat::zeros(m, n * t);
    let mut prev: Option<(CMat, CMat)> = None;
    for _ in 0..settings.i_max {
        for (i, th) in thetas.iter().enumerate() {
            a.view_mut((0, i * k), (m, k)).copy_from(&matmul(th, &e));
        }
        let (hn, ra) = right_lstsq(&y1, &a, PINV_REL_TOL)?;
        rank_deficient |= ra < m;
        h = hn;

        let ht = h.transpose();
        for (i, th) in thetas.iter().enumerate() {
            b.view_mut((0, i * n), (m, n)).copy_from(&matmul(&th.transpose(), &ht));
        }
        let (et, rb) = right_lstsq(&y2, &b, PINV_REL_TOL)?;
        rank_deficient |= rb < m;
        e = et.transpose();

        if !is_finite(&h) || !is_finite(&e) {
            return Err(Error::NonFinite("bals iterate"));
        }
        let mut r = residual(slices, thetas, &h, &e);
        if let Some((hp, ep)) = prev.as_ref().filter(|_| settings.line_search) {
            if let Some((h2, e2, r2)) = extrapolate(slices, thetas, hp, ep, &h, &e) {
                if r2 < r {
                    (h, e, r) = (h2, e2, r2);
                }
            }
        }
        if settings.line_search {
            prev = Some((h.clone(), e.clone()));
        }
        history.push(r);
        let len = history.len();
        if r == 0.0 {
            converged = true;
            break;
        }
        if len >= 2 {
            let d = (history[len - 1] - history[len - 2]).abs();
            if d <= settings.kappa || d / history[0].max(1e-30) <= settings.kappa {
                converged = true;
                break;
            }
        }
    }
    Ok(EstimateResult {
        h_hat: h,
        e_hat: e,
        iterations: history.len(),
        residual_history: history,
        beta_anchor: None,
        converged,
        rank_deficient,
    })
}

fn re_inner(a: &[CMat], b: &[CMat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dotc(y).re).sum()
}

/// Minimizes the quartic residual along `prev + s (new - prev)` for `s` in
/// `(1, 30]`. Returns the extrapolated pair and its residual.
fn extrapolate(slices: &[CMat], thetas: &[CMat], hp: &CMat, ep: &CMat, h: &CMat, e: &CMat) -> Option<(CMat, CMat, f64)> {
    let dh = h - hp;
    let de = e - ep;
    let mut r0 = Vec::with_capacity(slices.len());
    let mut p1 = Vec::with_capacity(slices.len());
    let mut p2 = Vec::with_capacity(slices.len());
    for (y, th) in slices.iter().zip(thetas) {
        let hpt = matmul(hp, th);
        let dht = matmul(&dh, th);
        r0.push(y - matmul(&hpt, ep));
        p1.push(matmul(&dht, ep) + matmul(&hpt, &de));
        p2.push(matmul(&dht, &de));
    }
    // f(s) = |R0 - s P1 - s^2 P2|^2
    let c = [
        re_inner(&r0, &r0),
        -2.0 * re_inner(&r0, &p1),
        re_inner(&p1, &p1) - 2.0 * re_inner(&r0, &p2),
        2.0 * re_inner(&p1, &p2),
        re_inner(&p2, &p2),
    ];
    let f = |s: f64| c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * c[4])));
    let df = |s: f64| c[1] + s * (2.0 * c[2] + s * (3.0 * c[3] + s * 4.0 * c[4]));
    let d2f = |s: f64| 2.0 * c[2] + s * (6.0 * c[3] + s * 12.0 * c[4]);
    let mut best = 1.0;
    let mut fbest = f(1.0);
    for i in 1..=1000 {
        let s = 1.0 + 29.0 * i as f64 / 1000.0;
        let v = f(s);
        if v < fbest {
            (best, fbest) = (s, v);
        }
    }
    if best == 1.0 {
        return None;
    }
    for _ in 0..3 {
        let curv = d2f(best);
        if curv > 0.0 {
            let s = best - df(best) / curv;
            if s > 1.0 && f(s) < fbest {
                (best, fbest) = (s, f(s));
            }
        }
    }
    let h2 = hp + dh * Complex64::new(best, 0.0);
    let e2 = ep + de * Complex64::new(best, 0.0);
    let r2 = residual(slices, thetas, &h2, &e2);
    Some((h2, e2, r2))
}

fn init_e(settings: &BalsSettings, group: usize, restart: usize, m: usize, k: usize) -> CMat {
    let mut tags = vec![purpose::INIT, group as u64];
    if restart > 0 {
        tags.push(restart as u64);
    }
    cn_matrix(&mut stream(settings.seed, &tags), m, k, 1.0)
}

/// `E` from the rank-one Kronecker approximation of `Z0 = Y Phi^+`, where
/// `Phi = [vec Theta_1 .. vec Theta_T]` and `Z = E^T (x) H`. The leading
/// singular vector of the rearranged `Z0` is found by power iteration.
pub fn spectral_init(slices: &[CMat], thetas: &[CMat]) -> Result<CMat> {
    let t = slices.len();
    if t == 0 || thetas.len() != t {
        return dim_err("spectral init needs one reflection per slice");
    }
    let (n, k) = slices[0].shape();
    let m = thetas[0].nrows();
    let phi = CMat::from_fn(m * m, t, |r, c| thetas[c][(r % m, r / m)]);
    let ups = CMat::from_fn(n * k, t, |r, c| slices[c][(r % n, r / n)]);
    let z0 = matmul(&ups, &pinv_with_rank(&phi, PINV_REL_TOL)?.0);
    // R[(kk*M + m2), (m1*N + nn)] = Z0[(kk*N + nn), (m2*M + m1)] ~ vec(E) vec(H)^T
    let r = CMat::from_fn(k * m, m * n, |row, col| {
        let (kk, m2) = (row / m, row % m);
        let (m1, nn) = (col / n, col % n);
        z0[(kk * n + nn, m2 * m + m1)]
    });
    let rh = r.adjoint();
    let mut u = CMat::from_fn(k * m, 1, |i, _| Complex64::new(1.0, 0.1 * i as f64));
    let mut sigma2 = 0.0;
    for _ in 0..50 {
        let w = matmul(&r, &matmul(&rh, &u));
        let nw = w.norm();
        if nw == 0.0 {
            break;
        }
        let next = w.unscale(nw);
        let change = (&next - &u).norm();
        u = next;
        sigma2 = nw;
        if change < 1e-10 {
            break;
        }
    }
    let e = u.scale(sigma2.sqrt().sqrt());
    Ok(CMat::from_column_slice(m, k, e.as_slice()))
}

/// Runs every configured start for one group and keeps the best.
fn bals_best(slices: &[CMat], thetas: &[CMat], settings: &BalsSettings, group: usize) -> Result<EstimateResult> {
    let m = thetas.first().map_or(0, |th| th.nrows());
    let k = slices.first().map_or(0, |y| y.ncols());
    let spectral = match settings.init {
        Init::Spectral => Some(spectral_init(slices, thetas)?),
        Init::Random => None,
    };
    let mut best: Option<EstimateResult> = None;
    for r in 0..settings.restarts {
        let e0 = match (&spectral, r) {
            (Some(s), 0) => s.clone(),
            (Some(s), _) => {
                let scale = s.norm() / ((m * k) as f64).sqrt();
                s + init_e(settings, group, r, m, k).scale(0.5 * scale)
            }
            (None, _) => init_e(settings, group, r, m, k),
        };
        let cur = bals_slices(slices, thetas, e0, settings)?;
        let last = |x: &EstimateResult| x.residual_history.last().copied().unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|b| last(&cur) < last(b)) {
            best = Some(cur);
        }
    }
    best.ok_or_else(|| Error::Config("restarts must be at least 1".into()))
}

/// Fully-connected estimator. When `anchor` is given the gauge is fixed so
/// that `H_hat[0,0] == anchor`.
pub fn bals_fully(obs: &PilotObservation, book: &PilotBook, settings: &BalsSettings, anchor: Option<Complex64>) -> Result<EstimateResult> {
    let [_, k, t] = obs.y.dims();
    if t != book.len() {
        return dim_err(format!("observation has {t} slices, book has {}", book.len()));
    }
    if book.topology != Topology::FullyConnected {
        return Err(Error::InvalidArgument("bals_fully needs a fully-connected book".into()));
    }
    if k == 0 {
        return dim_err("observation has no users");
    }
    let r = bals_best(&obs.y.slices(), &book.thetas, settings, 0)?;
    match anchor {
        Some(a) => resolve_scaling(r, a),
        None => Ok(r),
    }
}

/// Splits a full group-connected observation into one per group.
pub fn split_by_group(obs: &PilotObservation, book: &PilotBook) -> Result<Vec<PilotObservation>> {
    if obs.y.dims()[2] != book.len() {
        return dim_err("observation and book lengths differ");
    }
    (0..book.topology.groups())
        .map(|g| {
            let slices: Vec<CMat> = book.group_indices(g).into_iter().map(|t| obs.y.slice(t)).collect();
            Ok(PilotObservation { y: Tensor3::from_slices(&slices)?, ..obs.clone() })
        })
        .collect()
}

/// Per-group estimates of `H_g` and `E_g`.
pub fn bals_group_parts(obs_per_group: &[PilotObservation], book: &PilotBook, settings: &BalsSettings) -> Result<Vec<EstimateResult>> {
    let g = book.topology.groups();
    if obs_per_group.len() != g {
        return dim_err(format!("{} observations for {g} groups", obs_per_group.len()));
    }
    obs_per_group
        .iter()
        .enumerate()
        .map(|(gi, obs)| {
            let thetas = book.group_thetas(gi);
            bals_best(&obs.y.slices(), &thetas, settings, gi).map_err(|e| match e {
                Error::Identifiability(s) => Error::Identifiability(format!("group {gi}: {s}")),
                Error::Singular(s) => Error::Singular(format!("group {gi}: {s}")),
                other => other,
            })
        })
        .collect()
}

/// Group-connected estimator: one BALS per group, then `H_hat = [H_1 .. H_G]`
/// and `E_hat` stacked by rows. `anchors[g]` fixes the gauge of group `g`.
pub fn bals_group(
    obs_per_group: &[PilotObservation],
    book: &PilotBook,
    settings: &BalsSettings,
    anchors: Option<&[Complex64]>,
) -> Result<EstimateResult> {
    let mut parts = bals_group_parts(obs_per_group, book, settings)?;
    if let Some(a) = anchors {
        if a.len() != parts.len() {
            return dim_err("one anchor per group is required");
        }
        parts = parts.into_iter().zip(a).map(|(p, &z)| resolve_scaling(p, z)).collect::<Result<_>>()?;
    }
    Ok(assemble(parts))
}

fn assemble(parts: Vec<EstimateResult>) -> EstimateResult {
    if parts.len() == 1 {
        return parts.into_iter().next().expect("one part");
    }
    let n = parts[0].h_hat.nrows();
    let k = parts[0].e_hat.ncols();
    let m: usize = parts.iter().map(|p| p.h_hat.ncols()).sum();
    let mut h = CMat::zeros(n, m);
    let mut e = CMat::zeros(m, k);
    let mut off = 0;
    for p in &parts {
        let mb = p.h_hat.ncols();
        h.view_mut((0, off), (n, mb)).copy_from(&p.h_hat);
        e.view_mut((off, 0), (mb, k)).copy_from(&p.e_hat);
        off += mb;
    }
    let iterations = parts.iter().map(|p| p.iterations).max().unwrap_or(0);
    // total residual per iteration; finished groups hold their last value
    let residual_history = (0..iterations)
        .map(|i| parts.iter().map(|p| p.residual_history.get(i).or(p.residual_history.last()).copied().unwrap_or(0.0)).sum())
        .collect();
    EstimateResult {
        h_hat: h,
        e_hat: e,
        iterations,
        residual_history,
        beta_anchor: parts[0].beta_anchor,
        converged: parts.iter().all(|p| p.converged),
        rank_deficient: parts.iter().any(|p| p.rank_deficient),
    }
}

/// Fixes the scalar gauge: `H_hat *= anchor / H_hat[0,0]`, `E_hat` divided by
/// the same factor.
pub fn resolve_scaling(mut r: EstimateResult, anchor: Complex64) -> Result<EstimateResult> {
    let h00 = r.h_hat.get((0, 0)).copied().ok_or(Error::DegenerateAnchor)?;
    if h00.norm() == 0.0 || !h00.is_finite() {
        return Err(Error::DegenerateAnchor);
    }
    let c = anchor / h00;
    r.h_hat *= c;
    r.e_hat /= c;
    r.beta_anchor = Some(anchor);
    Ok(r)
}

/// `H_hat Theta E_hat`.
pub fn cascade(r: &EstimateResult, theta: &CMat) -> Result<CMat> {
    let m = r.h_hat.ncols();
    if theta.shape() != (m, m) || r.e_hat.nrows() != m {
        return dim_err(format!("Theta {:?} does not match M = {m}", theta.shape()));
    }
    Ok(matmul(&matmul(&r.h_hat, theta), &r.e_hat))
}

/// True anchors `H[0, g*M_bar]` for each group of `topology`.
pub fn true_anchors(h: &CMat, topology: Topology) -> Vec<Complex64> {
    let mb = topology.group_size(h.ncols());
    (0..topology.groups()).map(|g| h[(0, g * mb)]).collect()
}
