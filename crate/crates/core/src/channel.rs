//! System configuration, correlated Rician channels with aging, and the
//! noisy uplink pilot observation.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aging::{fit_jakes, jakes_acf, ArModel};
use crate::bdris::{PilotBook, Topology};
use crate::error::{dim_err, Error, Result};
use crate::io::{self, Bundle};
use crate::rng::{cn, cn_matrix};
use crate::tensor::{matmul, CMat, Tensor3};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// High-order AR process matched to the Jakes ACF.
    #[default]
    Ar,
    /// Common deterministic Doppler rotation `exp(j 2 pi f_n l)`.
    PhaseRotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// BS antennas.
    pub n: usize,
    /// Users.
    pub k: usize,
    /// RIS elements.
    pub m: usize,
    /// Group-connected BD-RIS when true.
    pub grouped: bool,
    pub groups: usize,
    /// Training blocks per interval.
    pub t: usize,
    /// Training-phase intervals.
    pub q: usize,
    /// Prediction-phase intervals.
    pub p: usize,
    /// Slots per coherence interval.
    pub t_c: usize,
    /// Sampling duration in seconds.
    pub t_s: f64,
    /// Carrier frequency in Hz.
    pub f_c: f64,
    /// User speed in m/s; used when `f_n` is absent.
    pub speed: Option<f64>,
    pub f_n: Option<f64>,
    pub rician_factor: f64,
    pub beta_e: f64,
    pub beta_h: f64,
    pub snr_db: f64,
    pub pilot_power: f64,
    /// Exponential correlation coefficient for both arrays.
    pub rho: f64,
    pub generator: Generator,
    pub generator_order: usize,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n: 5,
            k: 5,
            m: 16,
            grouped: false,
            groups: 1,
            t: 20,
            q: 16,
            p: 10,
            t_c: 10_000,
            t_s: 1e-5,
            f_c: 3e9,
            speed: None,
            f_n: Some(2.5e-3),
            rician_factor: 2.8,
            beta_e: 1.0,
            beta_h: 1.0,
            snr_db: 20.0,
            pilot_power: 1.0,
            rho: 0.5,
            generator: Generator::Ar,
            generator_order: 32,
            seed: 1,
        }
    }
}

impl SystemConfig {
    pub fn topology(&self) -> Topology {
        if self.grouped {
            Topology::GroupConnected { groups: self.groups, group_size: self.m / self.groups.max(1) }
        } else {
            Topology::FullyConnected
        }
    }

    /// Elements per group (`M` itself for fully-connected).
    pub fn group_size(&self) -> usize {
        self.topology().group_size(self.m)
    }

    /// Normalized Doppler `f_d T_s`.
    pub fn f_n(&self) -> f64 {
        match (self.f_n, self.speed) {
            (Some(f), _) => f,
            (None, Some(v)) => v * self.f_c / SPEED_OF_LIGHT * self.t_s,
            (None, None) => 0.0,
        }
    }

    pub fn noise_power(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0) * self.pilot_power
    }

    pub fn intervals(&self) -> usize {
        self.q + self.p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [("n", self.n), ("k", self.k), ("m", self.m), ("groups", self.groups), ("t", self.t), ("q", self.q), ("t_c", self.t_c)] {
            if v == 0 {
                return bad(format!("`{name}` must be at least 1"));
            }
        }
        if self.grouped && !self.m.is_multiple_of(self.groups) {
            return bad(format!("m = {} is not a multiple of groups = {}", self.m, self.groups));
        }
        if self.grouped && !self.t.is_multiple_of(self.groups) {
            return bad(format!("t = {} is not a multiple of groups = {}", self.t, self.groups));
        }
        if self.t_c <= self.k * self.t {
            return bad(format!("t_c = {} must exceed K*T = {}", self.t_c, self.k * self.t));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must be in [0, 1), got {}", self.rho));
        }
        let f = self.f_n();
        if !(f.is_finite() && f >= 0.0) {
            return bad(format!("normalized Doppler must be finite and >= 0, got {f}"));
        }
        for (name, v) in [("rician_factor", self.rician_factor), ("beta_e", self.beta_e), ("beta_h", self.beta_h), ("pilot_power", self.pilot_power)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("`{name}` must be finite and >= 0"));
            }
        }
        if self.pilot_power == 0.0 {
            return bad("`pilot_power` must be positive".into());
        }
        if !self.snr_db.is_finite() {
            return bad("`snr_db` must be finite".into());
        }
        if self.generator_order == 0 {
            return bad("`generator_order` must be at least 1".into());
        }
        Ok(())
    }
}

/// Exponential correlation matrix `rho^|i-j|`.
pub fn gen_correlation(dim: usize, rho: f64) -> Result<CMat> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho must be in [0, 1), got {rho}")));
    }
    Ok(CMat::from_fn(dim, dim, |i, j| Complex64::new(rho.powi(i.abs_diff(j) as i32), 0.0)))
}

/// Hermitian PSD square root; negative rounding eigenvalues are clamped to 0.
pub fn herm_sqrt(r: &CMat) -> Result<CMat> {
    if r.nrows() != r.ncols() {
        return dim_err("square root of a non-square matrix");
    }
    let eig = SymmetricEigen::new(r.clone());
    let d = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
    let v = &eig.eigenvectors;
    Ok(v * CMat::from_diagonal(&d) * v.adjoint())
}

/// Unit-modulus array response with spatial frequency `sin(angle)`.
fn steering(len: usize, angle: f64) -> CMat {
    let s = angle.sin();
    CMat::from_fn(len, 1, |i, _| Complex64::from_polar(1.0, std::f64::consts::PI * i as f64 * s))
}

/// Rician RIS-BS channel `sqrt(beta_H) R_BS^1/2 Q_H R_RIS^1/2`. Returns the
/// channel and the line-of-sight component `Q_LOS`.
pub fn gen_h_with_los<R: Rng + ?Sized>(cfg: &SystemConfig, r_bs: &CMat, r_ris: &CMat, rng: &mut R) -> Result<(CMat, CMat)> {
    if r_bs.shape() != (cfg.n, cfg.n) || r_ris.shape() != (cfg.m, cfg.m) {
        return dim_err(format!(
            "correlation matrices {:?} / {:?} do not match N={} M={}",
            r_bs.shape(),
            r_ris.shape(),
            cfg.n,
            cfg.m
        ));
    }
    let kap = cfg.rician_factor;
    let (a_bs, a_ris): (f64, f64) = (
        rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2),
        rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2),
    );
    let los = steering(cfg.n, a_bs) * steering(cfg.m, a_ris).adjoint();
    let nlos = cn_matrix(rng, cfg.n, cfg.m, 1.0);
    let qh = los.scale((kap / (kap + 1.0)).sqrt()) + nlos.scale((1.0 / (kap + 1.0)).sqrt());
    let h = (herm_sqrt(r_bs)? * qh * herm_sqrt(r_ris)?).scale(cfg.beta_h.sqrt());
    Ok((h, los))
}

pub fn gen_h<R: Rng + ?Sized>(cfg: &SystemConfig, r_bs: &CMat, r_ris: &CMat, rng: &mut R) -> Result<CMat> {
    Ok(gen_h_with_los(cfg, r_bs, r_ris, rng)?.0)
}

/// Loading used by the temporal generator. Scales with the one-lag
/// decorrelation so the generated ACF stays within a small fraction of Jakes.
pub fn generator_loading(f_n: f64) -> Result<f64> {
    Ok((1e-3 * (1.0 - jakes_acf(f_n, 1)?)).max(1e-10))
}

/// Stable AR model used to synthesize Jakes-correlated series. The loading is
/// raised tenfold until Levinson-Durbin accepts it.
pub fn generator_model(f_n: f64, order: usize) -> Result<ArModel> {
    let mut eps = generator_loading(f_n)?;
    let mut last = None;
    for _ in 0..12 {
        match fit_jakes(f_n, order, eps) {
            Ok(m) => return Ok(m),
            Err(e) => last = Some(e),
        }
        eps *= 10.0;
    }
    Err(last.unwrap_or_else(|| Error::UnstableFilter(format!("no stable generator for f_n = {f_n}"))))
}

/// Samples `len` unit-variance complex series from a fitted AR model, started
/// from its stationary distribution. Returns one `Vec` per series.
pub struct ArSynth {
    model: ArModel,
    chol: DMatrix<f64>,
    scale: f64,
}

impl ArSynth {
    pub fn new(model: ArModel) -> Result<Self> {
        let q = model.order;
        let r0 = 1.0 + model.epsilon;
        let f_n = model.f_n.unwrap_or(0.0);
        let acf: Vec<f64> = (0..q as i64).map(|l| jakes_acf(f_n, l)).collect::<Result<_>>()?;
        let toe = DMatrix::from_fn(q, q, |i, j| if i == j { r0 } else { acf[i.abs_diff(j)] });
        let chol = Cholesky::new(toe)
            .ok_or_else(|| Error::UnstableFilter("generator covariance is not positive definite".into()))?
            .l();
        Ok(ArSynth { model, chol, scale: 1.0 / r0.sqrt() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<Complex64> {
        let q = self.model.order;
        let w: Vec<Complex64> = (0..q).map(|_| cn(rng, 1.0)).collect();
        let mut x: Vec<Complex64> = (0..q)
            .map(|i| (0..=i).map(|j| w[j] * self.chol[(i, j)]).sum())
            .collect();
        let sd = self.model.sigma2_omega.max(0.0);
        while x.len() < len {
            let l = x.len();
            let mut v = cn(rng, sd);
            for (qi, a) in self.model.a.iter().enumerate() {
                v -= x[l - 1 - qi] * *a;
            }
            x.push(v);
        }
        x.truncate(len);
        x.iter_mut().for_each(|z| *z *= self.scale);
        x
    }
}

/// UE-RIS channel series `E[0..len]`, each `M x K`.
pub fn gen_e_series_len<R: Rng + ?Sized>(cfg: &SystemConfig, r_ris: &CMat, len: usize, rng: &mut R) -> Result<Vec<CMat>> {
    if r_ris.shape() != (cfg.m, cfg.m) {
        return dim_err("R_RIS does not match M");
    }
    let f_n = cfg.f_n();
    let (m, k) = (cfg.m, cfg.k);
    let root = herm_sqrt(r_ris)?.scale(cfg.beta_e.sqrt());
    let white: Vec<CMat> = match cfg.generator {
        Generator::PhaseRotation => {
            let q = cn_matrix(rng, m, k, 1.0);
            (0..len)
                .map(|l| &q * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * f_n * l as f64))
                .collect()
        }
        Generator::Ar if f_n == 0.0 => {
            let q = cn_matrix(rng, m, k, 1.0);
            vec![q; len]
        }
        Generator::Ar => {
            let synth = ArSynth::new(generator_model(f_n, cfg.generator_order)?)?;
            let mut out = vec![CMat::zeros(m, k); len];
            for j in 0..k {
                for i in 0..m {
                    for (l, z) in synth.sample(len, rng).into_iter().enumerate() {
                        out[l][(i, j)] = z;
                    }
                }
            }
            out
        }
    };
    Ok(white.iter().map(|x| matmul(&root, x)).collect())
}

pub fn gen_e_series<R: Rng + ?Sized>(cfg: &SystemConfig, r_ris: &CMat, rng: &mut R) -> Result<Vec<CMat>> {
    gen_e_series_len(cfg, r_ris, cfg.intervals(), rng)
}

/// Ground truth for one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h: CMat,
    pub e_series: Vec<CMat>,
    pub r_ris: CMat,
    pub r_bs: CMat,
}

impl ChannelSet {
    pub fn generate<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        Self::generate_len(cfg, cfg.intervals(), rng)
    }

    pub fn generate_len<R: Rng + ?Sized>(cfg: &SystemConfig, len: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let r_ris = gen_correlation(cfg.m, cfg.rho)?;
        let r_bs = gen_correlation(cfg.n, cfg.rho)?;
        let h = gen_h(cfg, &r_bs, &r_ris, rng)?;
        let e_series = gen_e_series_len(cfg, &r_ris, len, rng)?;
        Ok(ChannelSet { h, e_series, r_ris, r_bs })
    }

    pub fn e(&self, l: usize) -> &CMat {
        &self.e_series[l]
    }

    /// `H Theta E[l]`.
    pub fn cascade(&self, theta: &CMat, l: usize) -> CMat {
        matmul(&matmul(&self.h, theta), &self.e_series[l])
    }

    /// `H E[l]`, the cascade with `Theta = I`.
    pub fn composite(&self, l: usize) -> CMat {
        matmul(&self.h, &self.e_series[l])
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b: Bundle = vec![
            ("H".into(), self.h.clone()),
            ("R_RIS".into(), self.r_ris.clone()),
            ("R_BS".into(), self.r_bs.clone()),
        ];
        for (l, e) in self.e_series.iter().enumerate() {
            b.push((format!("E{l}"), e.clone()));
        }
        b
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let h = io::take(b, "H")?.clone();
        let r_ris = io::take(b, "R_RIS")?.clone();
        let r_bs = io::take(b, "R_BS")?.clone();
        let e_series = io::take_series(b, "E");
        if r_bs.shape() != (h.nrows(), h.nrows()) || r_ris.shape() != (h.ncols(), h.ncols()) {
            return Err(Error::Format("bundle dims are inconsistent".into()));
        }
        if e_series.iter().any(|e| e.nrows() != h.ncols()) {
            return Err(Error::Format("E matrices do not match H".into()));
        }
        Ok(ChannelSet { h, e_series, r_ris, r_bs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    /// `N x K x T` stack of post-processed slices.
    pub y: Tensor3,
    pub noise_power: f64,
    pub pilot_power: f64,
}

/// `H Theta_t E + P_p^{-1/2} V_t X^H` for each reflection `Theta_t`.
pub fn observe<R: Rng + ?Sized>(
    h: &CMat,
    e: &CMat,
    thetas: &[CMat],
    x: &CMat,
    noise_power: f64,
    pilot_power: f64,
    rng: &mut R,
) -> Result<Vec<CMat>> {
    let (n, k) = (h.nrows(), e.ncols());
    if h.ncols() != e.nrows() || x.shape() != (k, k) {
        return dim_err(format!("H {:?}, E {:?}, X {:?} are inconsistent", h.shape(), e.shape(), x.shape()));
    }
    let xh = x.adjoint();
    let s = pilot_power.sqrt().recip();
    thetas
        .iter()
        .map(|th| {
            if th.shape() != (h.ncols(), h.ncols()) {
                return dim_err("reflection does not match M");
            }
            let mut g = h * th * e;
            if noise_power > 0.0 {
                let v = cn_matrix(rng, n, k, noise_power);
                g += (v * &xh).scale(s);
            }
            Ok(g)
        })
        .collect()
}

/// Noisy training observation of interval `l` under `book`.
pub fn simulate_training<R: Rng + ?Sized>(
    ch: &ChannelSet,
    book: &PilotBook,
    l: usize,
    snr_db: f64,
    pilot_power: f64,
    rng: &mut R,
) -> Result<PilotObservation> {
    if l >= ch.e_series.len() {
        return Err(Error::InvalidArgument(format!("interval {l} beyond the generated series")));
    }
    let noise_power = 10f64.powf(-snr_db / 10.0) * pilot_power;
    let slices = observe(&ch.h, ch.e(l), &book.thetas, &book.x, noise_power, pilot_power, rng)?;
    Ok(PilotObservation { y: Tensor3::from_slices(&slices)?, noise_power, pilot_power })
}
