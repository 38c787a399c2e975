//! Channel aging: Jakes autocorrelation, diagonally loaded Levinson-Durbin
//! AR fitting, multi-step AR forecasting and the Doppler pattern bank.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};
use crate::tensor::CMat;

/// Default diagonal loading.
pub const DEFAULT_EPSILON: f64 = 0.1;

const SERIES_LIMIT: f64 = 12.0;
const MILLER_LIMIT: f64 = 35.0;

/// Bessel function of the first kind, order zero.
///
/// Power series below 12, Miller backward recurrence up to 35 and the Hankel
/// asymptotic expansion (optimally truncated) beyond that.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < SERIES_LIMIT {
        j0_series(ax)
    } else if ax < MILLER_LIMIT {
        j0_miller(ax)
    } else {
        j0_asymptotic(ax)
    }
}

fn j0_series(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * kf);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn j0_miller(x: f64) -> f64 {
    let start = 2 * ((x + 20.0 + (40.0 * x).sqrt()) as usize / 2 + 1);
    let mut jp1 = 0.0;
    let mut j = 1e-30;
    let mut norm = 0.0;
    let mut j0 = 0.0;
    for k in (1..=start).rev() {
        let jm1 = 2.0 * k as f64 / x * j - jp1;
        jp1 = j;
        j = jm1;
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
        }
        // j now holds J_{k-1}
        if k - 1 == 0 {
            j0 = j;
        } else if (k - 1) % 2 == 0 {
            norm += 2.0 * j;
        }
    }
    j0 / (norm + j0)
}

fn j0_asymptotic(x: f64) -> f64 {
    let mut p = 1.0;
    let mut q = 0.0;
    let mut t = 1.0f64;
    let mut prev = f64::INFINITY;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        let next = t * -(odd * odd) / (8.0 * k as f64 * x);
        if next.abs() >= prev {
            break;
        }
        prev = next.abs();
        t = next;
        // t_k = (-1)^k a_k / x^k; P collects even k with sign (-1)^{k/2}, Q odd k
        if k % 2 == 0 {
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            p += sign * t.abs();
        } else {
            let sign = if ((k - 1) / 2) % 2 == 0 { -1.0 } else { 1.0 };
            q += sign * t.abs();
        }
    }
    let chi = x - std::f64::consts::FRAC_PI_4;
    (2.0 / (std::f64::consts::PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Jakes autocorrelation `J0(2 pi f_n |lag|)`.
pub fn jakes_acf(f_n: f64, lag: i64) -> Result<f64> {
    if !(f_n >= 0.0) || !f_n.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "normalized Doppler must be finite and non-negative, got {f_n}"
        )));
    }
    Ok(bessel_j0(2.0 * std::f64::consts::PI * f_n * lag.unsigned_abs() as f64))
}

/// Jakes ACF at lags `0..=order`.
pub fn jakes_acf_vec(f_n: f64, order: usize) -> Result<Vec<f64>> {
    (0..=order as i64).map(|l| jakes_acf(f_n, l)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub order: usize,
    /// Coefficients `a_1..a_Q`; the predictor is `x[l] = -sum a_q x[l-q]`.
    pub a: Vec<f64>,
    pub sigma2_omega: f64,
    pub epsilon: f64,
    pub f_n: Option<f64>,
}

impl ArModel {
    /// All-zero predictor of the given order.
    pub fn zero(order: usize) -> Self {
        ArModel { order, a: vec![0.0; order], sigma2_omega: 1.0, epsilon: 0.0, f_n: None }
    }
}

/// Fit AR(Q) coefficients to `acf[0..=Q]` with `acf[0]` loaded by `epsilon`.
pub fn levinson_durbin(acf: &[f64], epsilon: f64) -> Result<ArModel> {
    if acf.len() < 2 {
        return Err(Error::InvalidArgument("AR order must be at least 1".into()));
    }
    if acf.iter().any(|v| !v.is_finite()) || !epsilon.is_finite() {
        return Err(Error::NonFinite("levinson_durbin"));
    }
    if !(acf[0] > 0.0) {
        return Err(Error::InvalidArgument(format!("acf[0] must be positive, got {}", acf[0])));
    }
    if epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!("loading must be >= 0, got {epsilon}")));
    }
    let q = acf.len() - 1;
    let r0 = acf[0] + epsilon;
    let mut a = vec![0.0; q];
    let mut err = r0;
    let mut prev = vec![0.0; q];
    for m in 1..=q {
        let mut acc = acf[m];
        for j in 1..m {
            acc += a[j - 1] * acf[m - j];
        }
        let k = -acc / err;
        if !(k.abs() < 1.0) {
            return Err(Error::UnstableFilter(format!(
                "reflection coefficient {k} at stage {m} (loading {epsilon})"
            )));
        }
        prev[..m - 1].copy_from_slice(&a[..m - 1]);
        for j in 1..m {
            a[j - 1] = prev[j - 1] + k * prev[m - j - 1];
        }
        a[m - 1] = k;
        err *= 1.0 - k * k;
        if !(err > 0.0) {
            return Err(Error::Singular(format!("prediction error vanished at stage {m}")));
        }
    }
    let sigma2_omega = r0 + a.iter().zip(&acf[1..]).map(|(ai, ri)| ai * ri).sum::<f64>();
    Ok(ArModel { order: q, a, sigma2_omega, epsilon, f_n: None })
}

/// AR model for a Jakes channel of normalized Doppler `f_n`.
pub fn fit_jakes(f_n: f64, order: usize, epsilon: f64) -> Result<ArModel> {
    let acf = jakes_acf_vec(f_n, order)?;
    let mut m = levinson_durbin(&acf, epsilon)?;
    m.f_n = Some(f_n);
    Ok(m)
}

/// Forecast `horizon` intervals past the end of `history` (oldest first).
///
/// Step 1 uses only measured matrices; later steps feed predicted matrices
/// back for the lags that reach past the measured window.
pub fn ar_predict(history: &[CMat], model: &ArModel, horizon: usize) -> Result<Vec<CMat>> {
    let q = model.order;
    if history.len() < q {
        return Err(Error::InvalidArgument(format!(
            "AR({q}) prediction needs {q} past matrices, got {}",
            history.len()
        )));
    }
    if horizon == 0 {
        return Ok(Vec::new());
    }
    let (r, c) = history.last().map(|m| m.shape()).unwrap_or((0, 0));
    if history.iter().any(|m| m.shape() != (r, c)) {
        return dim_err("history matrices differ in shape");
    }
    let mut series: Vec<CMat> = history[history.len() - q..].to_vec();
    for _ in 0..horizon {
        let n = series.len();
        let mut next = CMat::zeros(r, c);
        for (qi, &aq) in model.a.iter().enumerate() {
            next += &series[n - 1 - qi] * Complex64::new(-aq, 0.0);
        }
        series.push(next);
    }
    Ok(series.split_off(q))
}

/// Real-valued network input: real parts of `history` side by side on top,
/// imaginary parts below. Shape `2M x VK`.
pub fn preprocess_csi(history: &[CMat], v: usize) -> Result<DMatrix<f64>> {
    if history.len() != v || v == 0 {
        return dim_err(format!("expected {v} matrices, got {}", history.len()));
    }
    let (m, k) = history[0].shape();
    if history.iter().any(|h| h.shape() != (m, k)) {
        return dim_err("history matrices differ in shape");
    }
    let mut out = DMatrix::zeros(2 * m, v * k);
    for (t, h) in history.iter().enumerate() {
        for j in 0..k {
            for i in 0..m {
                let z = h[(i, j)];
                out[(i, t * k + j)] = z.re;
                out[(m + i, t * k + j)] = z.im;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`preprocess_csi`].
pub fn reassemble_csi(c: &DMatrix<f64>, v: usize) -> Result<Vec<CMat>> {
    let (rows, cols) = c.shape();
    if v == 0 || rows % 2 != 0 || cols % v != 0 {
        return dim_err(format!("cannot split {rows}x{cols} into {v} complex blocks"));
    }
    let m = rows / 2;
    let k = cols / v;
    Ok((0..v)
        .map(|t| CMat::from_fn(m, k, |i, j| Complex64::new(c[(i, t * k + j)], c[(m + i, t * k + j)])))
        .collect())
}

/// Biased sample autocorrelation of a matrix series, pooled over entries and
/// normalized to `R[0] = 1`. Only the real part is kept.
pub fn sample_acf(series: &[CMat], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= max_lag {
        return Err(Error::InvalidArgument(format!(
            "need more than {max_lag} samples for the sample ACF, got {n}"
        )));
    }
    let shape = series[0].shape();
    if series.iter().any(|m| m.shape() != shape) {
        return dim_err("series matrices differ in shape");
    }
    let mut acf = vec![0.0; max_lag + 1];
    for (lag, slot) in acf.iter_mut().enumerate() {
        let mut s = Complex64::new(0.0, 0.0);
        for t in 0..n - lag {
            s += series[t + lag].dotc(&series[t]);
        }
        *slot = s.re / n as f64;
    }
    let r0 = acf[0];
    if !(r0 > 0.0) {
        return Err(Error::InvalidArgument("series has zero power".into()));
    }
    acf.iter_mut().for_each(|v| *v /= r0);
    Ok(acf)
}

/// AR model fitted from measured data instead of the Jakes ACF.
pub fn fit_from_samples(series: &[CMat], order: usize, epsilon: f64) -> Result<ArModel> {
    levinson_durbin(&sample_acf(series, order)?, epsilon)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

/// Pre-computed AR models for the Doppler classes a classifier can pick from.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternBank {
    pub entries: Vec<(f64, ArModel)>,
}

impl PatternBank {
    pub fn new(entries: Vec<(f64, ArModel)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("pattern bank is empty".into()));
        }
        if entries.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::InvalidArgument("bank f_n values must be strictly increasing".into()));
        }
        Ok(PatternBank { entries })
    }

    pub fn from_jakes(grid: &[f64], order: usize, epsilon: f64) -> Result<Self> {
        let entries = grid
            .iter()
            .map(|&f| fit_jakes(f, order, epsilon).map(|m| (f, m)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn f_values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn model(&self, idx: usize) -> &ArModel {
        &self.entries[idx].1
    }

    /// Index of the entry closest to `f_n` on a log scale.
    pub fn nearest(&self, f_n: f64) -> usize {
        let key = |f: f64| if f > 0.0 { f.ln() } else { f64::NEG_INFINITY };
        let target = key(f_n);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, (f, _)) in self.entries.iter().enumerate() {
            let d = (key(*f) - target).abs();
            let d = if d.is_nan() { 0.0 } else { d };
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// CSV rows `f_n,Q,epsilon,sigma2_omega,a_1,...,a_Q`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("f_n,Q,epsilon,sigma2_omega,coefficients...\n");
        for (f, m) in &self.entries {
            let _ = write!(s, "{f:e},{},{:e},{:e}", m.order, m.epsilon, m.sigma2_omega);
            for a in &m.a {
                let _ = write!(s, ",{a:e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::Format(format!("bank CSV line {line}: {what}"));
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 4 {
                return Err(bad(ln + 1, "too few columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(ln + 1, "not a number"));
            let f = num(cols[0])?;
            let order: usize = cols[1].parse().map_err(|_| bad(ln + 1, "bad order"))?;
            if cols.len() != 4 + order {
                return Err(bad(ln + 1, "coefficient count does not match order"));
            }
            let a = cols[4..].iter().map(|c| num(c)).collect::<Result<Vec<_>>>()?;
            entries.push((
                f,
                ArModel { order, a, epsilon: num(cols[2])?, sigma2_omega: num(cols[3])?, f_n: Some(f) },
            ));
        }
        Self::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    // J0 as (1/pi) * integral_0^pi cos(x sin t) dt; the trapezoid rule converges
    // geometrically for this periodic integrand.
    fn j0_integral(x: f64) -> f64 {
        let n = 400;
        let h = std::f64::consts::PI / n as f64;
        // both endpoints evaluate to cos(0) = 1
        let mut s = 1.0;
        for i in 1..n {
            s += (x * (i as f64 * h).sin()).cos();
        }
        s * h / std::f64::consts::PI
    }

    #[test]
    fn j0_matches_integral_oracle() {
        for i in 0..200 {
            let x = i as f64 * 0.25;
            let got = bessel_j0(x);
            let want = j0_integral(x);
            assert!((got - want).abs() < 1e-12, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn jakes_examples() {
        assert_eq!(jakes_acf(0.01, 0).unwrap(), 1.0);
        assert_eq!(jakes_acf(0.0, 17).unwrap(), 1.0);
        let x = 2.0 * std::f64::consts::PI * 0.005 * 10.0;
        assert!((jakes_acf(0.005, 10).unwrap() - j0_integral(x)).abs() < 1e-10);
        assert_eq!(jakes_acf(0.005, -10).unwrap(), jakes_acf(0.005, 10).unwrap());
        assert!(jakes_acf(-0.1, 1).is_err());
    }

    #[test]
    fn jakes_grid_oracle() {
        for i in 0..10 {
            for lag in 0..10 {
                let f = 0.005 * i as f64;
                let x = 2.0 * std::f64::consts::PI * f * lag as f64;
                assert!((jakes_acf(f, lag).unwrap() - j0_integral(x)).abs() < 1e-10);
            }
        }
    }

    fn toeplitz_residual(acf: &[f64], m: &ArModel) -> f64 {
        let q = m.order;
        let mut worst: f64 = 0.0;
        for i in 0..q {
            let mut s = acf[i + 1];
            for j in 0..q {
                let r = if i == j { acf[0] + m.epsilon } else { acf[i.abs_diff(j)] };
                s += r * m.a[j];
            }
            worst = worst.max(s.abs());
        }
        worst
    }

    fn direct_solve(acf: &[f64], eps: f64) -> Vec<f64> {
        let q = acf.len() - 1;
        let r = DMatrix::from_fn(q, q, |i, j| if i == j { acf[0] + eps } else { acf[i.abs_diff(j)] });
        let w = DVector::from_fn(q, |i, _| -acf[i + 1]);
        r.lu().solve(&w).unwrap().iter().copied().collect()
    }

    fn poles_inside(m: &ArModel) -> bool {
        let q = m.order;
        let mut c = DMatrix::<f64>::zeros(q, q);
        for j in 0..q {
            c[(0, j)] = -m.a[j];
        }
        for i in 1..q {
            c[(i, i - 1)] = 1.0;
        }
        c.complex_eigenvalues().iter().all(|z| z.norm() < 1.0)
    }

    #[test]
    fn levinson_order_one_closed_form() {
        for &f in &[0.0, 0.001, 0.005, 0.02, 0.05] {
            let r1 = jakes_acf(f, 1).unwrap();
            let m = levinson_durbin(&[1.0, r1], 0.1).unwrap();
            assert!((m.a[0] + r1 / 1.1).abs() < 1e-12);
        }
    }

    #[test]
    fn levinson_white_noise() {
        for q in 1..6 {
            let mut acf = vec![0.0; q + 1];
            acf[0] = 1.0;
            let m = levinson_durbin(&acf, 0.1).unwrap();
            assert!(m.a.iter().all(|&a| a == 0.0));
            assert!((m.sigma2_omega - 1.1).abs() < 1e-15);
        }
    }

    #[test]
    fn levinson_matches_direct_solve_and_is_stable() {
        for &f in &[0.0, 0.001, 0.005, 0.01, 0.03, 0.05] {
            for q in [1, 2, 8, 16, 24, 32] {
                let acf = jakes_acf_vec(f, q).unwrap();
                let m = levinson_durbin(&acf, 0.1).unwrap();
                assert!(toeplitz_residual(&acf, &m) < 1e-10, "f={f} q={q}");
                let d = direct_solve(&acf, 0.1);
                for (x, y) in m.a.iter().zip(&d) {
                    assert!((x - y).abs() < 1e-8);
                }
                assert!(poles_inside(&m), "f={f} q={q}");
                assert!(m.sigma2_omega >= 0.0);
            }
        }
    }

    #[test]
    fn levinson_rejects_bad_input() {
        assert!(levinson_durbin(&[1.0], 0.1).is_err());
        assert!(levinson_durbin(&[0.0, 0.0], 0.1).is_err());
        assert!(levinson_durbin(&[1.0, f64::NAN], 0.1).is_err());
        // unloaded constant ACF is singular
        assert!(levinson_durbin(&[1.0, 1.0, 1.0], 0.0).is_err());
    }

    fn scalar(z: Complex64) -> CMat {
        CMat::from_element(1, 1, z)
    }

    #[test]
    fn prediction_exact_for_noiseless_ar() {
        let m = ArModel { order: 2, a: vec![-1.6, 0.8], sigma2_omega: 1.0, epsilon: 0.0, f_n: None };
        let mut x = vec![Complex64::new(1.0, 0.5), Complex64::new(0.3, -0.2)];
        for l in 2..30 {
            let v = -(m.a[0] * x[l - 1] + m.a[1] * x[l - 2]);
            x.push(v);
        }
        let hist: Vec<CMat> = x[..10].iter().map(|&z| scalar(z)).collect();
        let pred = ar_predict(&hist, &m, 20).unwrap();
        for (p, &z) in pred.iter().zip(&x[10..]) {
            assert!((p[(0, 0)] - z).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_model_predicts_zero() {
        let hist = vec![scalar(Complex64::new(1.0, 1.0)); 4];
        let pred = ar_predict(&hist, &ArModel::zero(4), 3).unwrap();
        assert!(pred.iter().all(|p| p[(0, 0)].norm() == 0.0));
        assert!(ar_predict(&hist, &ArModel::zero(5), 1).is_err());
    }

    #[test]
    fn constant_channel_one_step_bound() {
        let e = CMat::from_fn(3, 2, |i, j| Complex64::new(i as f64 + 1.0, j as f64 - 0.5));
        for q in [1, 4, 16] {
            let m = fit_jakes(0.0, q, 0.1).unwrap();
            let hist = vec![e.clone(); q];
            let p = &ar_predict(&hist, &m, 1).unwrap()[0];
            let err = (p - &e).norm() / e.norm();
            assert!(err < 0.1 / 1.1 + 1e-6, "q={q} err={err}");
        }
    }

    #[test]
    fn preprocess_examples() {
        let h = vec![scalar(Complex64::new(0.0, 1.0))];
        let c = preprocess_csi(&h, 1).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));

        let real: Vec<CMat> = (0..3)
            .map(|t| CMat::from_fn(2, 2, |i, j| Complex64::new((t + i + j) as f64, 0.0)))
            .collect();
        let c = preprocess_csi(&real, 3).unwrap();
        assert_eq!(c.shape(), (4, 6));
        assert!(c.rows(2, 2).iter().all(|&v| v == 0.0));
        assert!(preprocess_csi(&real, 2).is_err());

        let cplx: Vec<CMat> = (0..3)
            .map(|t| CMat::from_fn(2, 3, |i, j| Complex64::new((t * i) as f64, j as f64 - 1.0)))
            .collect();
        let back = reassemble_csi(&preprocess_csi(&cplx, 3).unwrap(), 3).unwrap();
        assert_eq!(back, cplx);
    }

    #[test]
    fn sample_acf_of_constant_series() {
        let s = vec![scalar(Complex64::new(0.3, -0.4)); 20];
        let acf = sample_acf(&s, 3).unwrap();
        assert!((acf[0] - 1.0).abs() < 1e-15);
        assert!((acf[1] - 19.0 / 20.0).abs() < 1e-12);
        assert!(sample_acf(&s[..3], 3).is_err());
    }

    #[test]
    fn bank_csv_round_trip_and_nearest() {
        let grid = log_grid(2.5e-4, 1e-2, 10);
        assert_eq!(grid.len(), 10);
        assert!((grid[0] - 2.5e-4).abs() < 1e-18 && (grid[9] - 1e-2).abs() < 1e-15);
        let bank = PatternBank::from_jakes(&grid, 4, 0.1).unwrap();
        let back = PatternBank::from_csv(&bank.to_csv()).unwrap();
        assert_eq!(back.len(), 10);
        for ((f1, m1), (f2, m2)) in bank.entries.iter().zip(&back.entries) {
            assert_eq!(f1, f2);
            assert_eq!(m1.a, m2.a);
        }
        assert_eq!(bank.nearest(2.5e-4), 0);
        assert_eq!(bank.nearest(1.0), 9);
        assert_eq!(bank.nearest(0.0), 0);
        assert!(PatternBank::from_jakes(&[0.01, 0.005], 4, 0.1).is_err());
    }
}
