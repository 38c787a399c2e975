//! Conventional least-squares baseline: estimate the composite channel
//! `Z = [E_1^T (x) H_1, .., E_G^T (x) H_G]` from `T = G M_bar^2` training
//! slices driven by the DFT pilot reflection matrix `Phi`, then rebuild any
//! cascade channel from `Z`.

use rand::Rng;

use crate::bdris::{dft_pilot_phi, phi_blocks, pilot_symbols};
use crate::channel::{observe, ChannelSet};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{block_diag, fro2, identity, is_finite, kron, matmul, pinv_with_rank, CMat, PINV_REL_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct LsEstimate {
    /// `NK x G M_bar^2`.
    pub z_hat: CMat,
    pub interval: usize,
}

#[derive(Debug, Clone)]
pub struct LsEstimator {
    pub group_size: usize,
    pub groups: usize,
    pub phi: CMat,
    /// Right inverse `Phi^H (Phi Phi^H)^-1`; `None` when `Phi Phi^H = M I`
    /// and the inverse is `Phi^H / M`.
    rinv: Option<CMat>,
}

impl LsEstimator {
    /// DFT pilot design. Its rows are orthogonal with squared norm
    /// `G M_bar = M`, so no inverse is formed.
    pub fn new(group_size: usize, groups: usize) -> Result<Self> {
        let phi = dft_pilot_phi(group_size, groups)?;
        Ok(LsEstimator { group_size, groups, phi, rinv: None })
    }

    /// Estimator for an arbitrary square pilot matrix.
    pub fn with_phi(phi: CMat, group_size: usize, groups: usize) -> Result<Self> {
        let d = groups * group_size * group_size;
        if phi.shape() != (d, d) {
            return dim_err(format!("phi must be {d}x{d}, got {:?}", phi.shape()));
        }
        let gram = &phi * phi.adjoint();
        let scale = gram[(0, 0)].re;
        let rinv = if (scale - (groups * group_size) as f64).abs() < 1e-9 * scale
            && (&gram - identity(d).scale(scale)).norm() <= 1e-10 * scale * d as f64
        {
            None
        } else {
            let (p, rank) = pinv_with_rank(&phi, PINV_REL_TOL)?;
            if rank < d {
                return Err(Error::Singular(format!("pilot matrix has rank {rank} < {d}")));
            }
            Some(p)
        };
        Ok(LsEstimator { group_size, groups, phi, rinv })
    }

    pub fn m(&self) -> usize {
        self.groups * self.group_size
    }

    /// Training slices consumed per interval, `G M_bar^2`.
    pub fn pilot_len(&self) -> usize {
        self.phi.ncols()
    }

    /// Effective `M x M` reflection of every training state.
    pub fn training_thetas(&self) -> Result<Vec<CMat>> {
        (0..self.pilot_len())
            .map(|t| Ok(block_diag(&phi_blocks(&self.phi, t, self.group_size, self.groups)?)))
            .collect()
    }

    /// Noisy training slices of interval `l`, one per column of `Phi`.
    pub fn observe<R: Rng + ?Sized>(
        &self,
        ch: &ChannelSet,
        l: usize,
        snr_db: f64,
        pilot_power: f64,
        rng: &mut R,
    ) -> Result<Vec<CMat>> {
        if ch.h.ncols() != self.m() {
            return dim_err(format!("channel has M = {}, estimator expects {}", ch.h.ncols(), self.m()));
        }
        if l >= ch.e_series.len() {
            return Err(Error::InvalidArgument(format!("interval {l} beyond the generated series")));
        }
        let noise_power = 10f64.powf(-snr_db / 10.0) * pilot_power;
        let x = pilot_symbols(ch.e(l).ncols())?;
        observe(&ch.h, ch.e(l), &self.training_thetas()?, &x, noise_power, pilot_power, rng)
    }

    /// `Z_hat = Upsilon Phi^H (Phi Phi^H)^-1` with `Upsilon = [vec G_1 .. vec G_T]`.
    pub fn estimate(&self, slices: &[CMat], interval: usize) -> Result<LsEstimate> {
        if slices.len() != self.pilot_len() {
            return dim_err(format!("{} slices given, the pilot design needs T = {}", slices.len(), self.pilot_len()));
        }
        let (n, k) = slices[0].shape();
        if slices.iter().any(|s| s.shape() != (n, k)) {
            return dim_err("slices differ in shape");
        }
        if slices.iter().any(|s| !is_finite(s)) {
            return Err(Error::NonFinite("ls_estimate"));
        }
        let ups = CMat::from_fn(n * k, slices.len(), |r, c| slices[c][(r % n, r / n)]);
        let z_hat = match &self.rinv {
            Some(r) => matmul(&ups, r),
            None => matmul(&self.phi, &ups.adjoint()).adjoint().unscale(self.m() as f64),
        };
        Ok(LsEstimate { z_hat, interval })
    }
}

/// `vec G = sum_g Z_g vec Theta_g`, reshaped to `N x K`.
pub fn cascade_from_z(z: &LsEstimate, blocks: &[CMat], n: usize, k: usize) -> Result<CMat> {
    let d: usize = blocks.iter().map(|b| b.len()).sum();
    if z.z_hat.shape() != (n * k, d) {
        return dim_err(format!("Z is {:?}, expected {}x{d}", z.z_hat.shape(), n * k));
    }
    let mut off = 0;
    let mut g = CMat::zeros(n * k, 1);
    for b in blocks {
        let cols = b.len();
        let v = CMat::from_column_slice(cols, 1, b.as_slice());
        g += matmul(&z.z_hat.columns(off, cols).into_owned(), &v);
        off += cols;
    }
    Ok(CMat::from_column_slice(n, k, g.as_slice()))
}

/// Ground-truth `Z` of a channel split into `groups` equal blocks.
pub fn true_z(h: &CMat, e: &CMat, groups: usize) -> Result<CMat> {
    let m = h.ncols();
    if e.nrows() != m || groups == 0 || !m.is_multiple_of(groups) {
        return dim_err(format!("cannot split M = {m} into {groups} groups"));
    }
    let mb = m / groups;
    let parts: Vec<CMat> = (0..groups)
        .map(|g| kron(&e.rows(g * mb, mb).transpose(), &h.columns(g * mb, mb).into_owned()))
        .collect();
    let nk = h.nrows() * e.ncols();
    let mut z = CMat::zeros(nk, groups * mb * mb);
    for (g, p) in parts.iter().enumerate() {
        z.view_mut((0, g * mb * mb), (nk, mb * mb)).copy_from(p);
    }
    Ok(z)
}

/// Composite-channel NMSE of a baseline estimate, `|Z_hat - Z|^2 / |Z|^2`.
pub fn z_nmse(est: &LsEstimate, z: &CMat) -> f64 {
    fro2(&(&est.z_hat - z)) / fro2(z)
}

/// `Theta` split into its `groups` diagonal blocks.
pub fn diagonal_blocks(theta: &CMat, groups: usize) -> Vec<CMat> {
    let mb = theta.nrows() / groups.max(1);
    (0..groups).map(|g| theta.view((g * mb, g * mb), (mb, mb)).into_owned()).collect()
}
