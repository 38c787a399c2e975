//! BD-RIS reflection matrices, training books and the DFT pilot matrix used
//! by the least-squares baseline.

use std::fmt;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::SystemConfig;
use crate::error::{dim_err, Error, Result};
use crate::io::{self, Bundle};
use crate::rng::cn_matrix;
use crate::tensor::{block_diag, circshift, dft_matrix, fro2, identity, kron, matmul, singular_values, CMat, vec, CVec, ONE, ZERO};

/// Default tolerance for the symmetry and unitarity checks.
pub const FEASIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    FullyConnected,
    GroupConnected { groups: usize, group_size: usize },
}

impl Topology {
    pub fn groups(&self) -> usize {
        match *self {
            Topology::FullyConnected => 1,
            Topology::GroupConnected { groups, .. } => groups,
        }
    }

    /// Block size for `m` elements.
    pub fn group_size(&self, m: usize) -> usize {
        match *self {
            Topology::FullyConnected => m,
            Topology::GroupConnected { group_size, .. } => group_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionMatrix {
    pub topology: Topology,
    pub theta: CMat,
}

impl ReflectionMatrix {
    /// Wraps `theta` after checking symmetry, unitarity per block and the
    /// zero pattern outside the diagonal blocks.
    pub fn new(topology: Topology, theta: CMat) -> Result<Self> {
        let r = ReflectionMatrix { topology, theta };
        r.check(FEASIBILITY_TOL)?;
        Ok(r)
    }

    pub fn m(&self) -> usize {
        self.theta.nrows()
    }

    pub fn blocks(&self) -> Vec<CMat> {
        let mb = self.topology.group_size(self.m());
        (0..self.topology.groups())
            .map(|g| self.theta.view((g * mb, g * mb), (mb, mb)).into_owned())
            .collect()
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        let m = self.m();
        if self.theta.ncols() != m {
            return dim_err("reflection matrix must be square");
        }
        let g = self.topology.groups();
        let mb = self.topology.group_size(m);
        if g * mb != m {
            return dim_err(format!("{g} groups of {mb} do not cover {m} elements"));
        }
        let asym = (&self.theta - self.theta.transpose()).norm();
        if asym > tol {
            return Err(Error::InvalidArgument(format!("reflection not symmetric (|T - T^T| = {asym:e})")));
        }
        for (i, b) in self.blocks().iter().enumerate() {
            let dev = (b * b.adjoint() - identity(mb)).norm();
            if dev > tol {
                return Err(Error::InvalidArgument(format!("block {i} not unitary (deviation {dev:e})")));
            }
        }
        for j in 0..m {
            for i in 0..m {
                if i / mb != j / mb && self.theta[(i, j)].norm() > tol {
                    return Err(Error::InvalidArgument(format!("nonzero entry ({i},{j}) outside the diagonal blocks")));
                }
            }
        }
        Ok(())
    }
}

/// Haar-distributed unitary: QR of a complex Gaussian matrix with the phases of
/// the diagonal of R pushed into Q.
pub fn haar_unitary<R: Rng + ?Sized>(m: usize, rng: &mut R) -> CMat {
    let z = cn_matrix(rng, m, m, 1.0);
    let qr = z.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..m {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..m {
            q[(i, j)] *= ph;
        }
    }
    q
}

/// Random symmetric unitary `U U^T` with `U` Haar-distributed.
pub fn random_symmetric_unitary<R: Rng + ?Sized>(m: usize, rng: &mut R) -> ReflectionMatrix {
    let u = haar_unitary(m, rng);
    let mut theta = matmul(&u, &u.transpose());
    // remove rounding asymmetry
    theta = (&theta + theta.transpose()).scale(0.5);
    ReflectionMatrix { topology: Topology::FullyConnected, theta }
}

/// Random feasible reflection for `topology` with an independent block per group.
pub fn random_reflection<R: Rng + ?Sized>(topology: Topology, m: usize, rng: &mut R) -> ReflectionMatrix {
    let mb = topology.group_size(m);
    let blocks: Vec<CMat> = (0..topology.groups()).map(|_| random_symmetric_unitary(mb, rng).theta).collect();
    ReflectionMatrix { topology, theta: block_diag(&blocks) }
}

/// Why a configuration cannot be identified by the Tucker2 estimator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub elements: usize,
    pub n_blocks: usize,
    pub k_blocks: usize,
    pub grouped: bool,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lhs, t) = if self.grouped { ("M_bar", "N*T_g") } else { ("M", "N*T") };
        write!(
            f,
            "{lhs} <= min({t}, K*T{}) violated: {} > min({}, {})",
            if self.grouped { "_g" } else { "" },
            self.elements,
            self.n_blocks,
            self.k_blocks
        )
    }
}

/// Checks `M <= min(NT, KT)`, or `M_bar <= min(N T_g, K T_g)` per group.
pub fn validate_identifiability(cfg: &SystemConfig) -> std::result::Result<(), Violation> {
    let topo = cfg.topology();
    let tb = cfg.t / topo.groups();
    let elements = topo.group_size(cfg.m);
    let v = Violation {
        elements,
        n_blocks: cfg.n * tb,
        k_blocks: cfg.k * tb,
        grouped: matches!(topo, Topology::GroupConnected { .. }),
    };
    if elements <= v.n_blocks.min(v.k_blocks) {
        Ok(())
    } else {
        Err(v)
    }
}

/// Unit-energy `K x K` pilot symbols (scaled DFT, `X X^H = I`).
pub fn pilot_symbols(k: usize) -> Result<CMat> {
    Ok(dft_matrix(k)?.unscale((k as f64).sqrt()))
}

/// Training reflections shared by the BS and the RIS controller.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    pub topology: Topology,
    /// Effective `M x M` reflection for each training block.
    pub thetas: Vec<CMat>,
    pub x: CMat,
    /// Active group of each block (always 0 for fully-connected).
    pub schedule: Vec<usize>,
}

impl PilotBook {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn effective(&self, t: usize) -> &CMat {
        &self.thetas[t]
    }

    /// Blocks per group.
    pub fn blocks_per_group(&self) -> usize {
        self.len() / self.topology.groups()
    }

    /// Training block indices that switch on group `g`.
    pub fn group_indices(&self, g: usize) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.schedule[t] == g).collect()
    }

    /// The active `M_bar x M_bar` blocks of group `g`, in schedule order.
    pub fn group_thetas(&self, g: usize) -> Vec<CMat> {
        let m = self.thetas.first().map_or(0, |t| t.nrows());
        let mb = self.topology.group_size(m);
        self.group_indices(g)
            .into_iter()
            .map(|t| self.thetas[t].view((g * mb, g * mb), (mb, mb)).into_owned())
            .collect()
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b: Bundle = vec![("X".into(), self.x.clone())];
        let m = self.thetas.first().map_or(0, |t| t.nrows());
        let meta = CMat::from_row_slice(
            1,
            3,
            &[
                Complex64::new(self.topology.groups() as f64, 0.0),
                Complex64::new(self.topology.group_size(m) as f64, 0.0),
                Complex64::new(matches!(self.topology, Topology::GroupConnected { .. }) as u8 as f64, 0.0),
            ],
        );
        b.push(("topology".into(), meta));
        let sched = CMat::from_iterator(1, self.len(), self.schedule.iter().map(|&g| Complex64::new(g as f64, 0.0)));
        b.push(("schedule".into(), sched));
        for (t, th) in self.thetas.iter().enumerate() {
            b.push((format!("Theta{t}"), th.clone()));
        }
        b
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let x = io::take(b, "X")?.clone();
        let meta = io::take(b, "topology")?;
        if meta.len() != 3 {
            return Err(Error::Format("topology record must hold 3 values".into()));
        }
        let topology = if meta[2].re > 0.5 {
            Topology::GroupConnected { groups: meta[0].re as usize, group_size: meta[1].re as usize }
        } else {
            Topology::FullyConnected
        };
        let schedule = io::take(b, "schedule")?.iter().map(|z| z.re as usize).collect();
        let thetas = io::take_series(b, "Theta");
        Ok(PilotBook { topology, thetas, x, schedule })
    }
}

/// Random books drawn per training schedule; the best conditioned is kept.
pub const BOOK_CANDIDATES: usize = 8;

/// `sigma_r / sigma_1` of `[vec Theta_1 .. vec Theta_T]`, where `r` is the
/// largest rank symmetric blocks allow.
pub fn book_conditioning(blocks: &[CMat]) -> f64 {
    let Some(first) = blocks.first() else { return 0.0 };
    let m = first.nrows();
    let cols: Vec<CVec> = blocks.iter().map(vec).collect();
    let Ok(s) = singular_values(&CMat::from_columns(&cols)) else { return 0.0 };
    let r = blocks.len().min(m * (m + 1) / 2);
    if s[0] == 0.0 {
        0.0
    } else {
        s[r - 1] / s[0]
    }
}

fn conditioned_blocks<R: Rng + ?Sized>(m: usize, t: usize, rng: &mut R) -> Vec<CMat> {
    let mut best: Option<(f64, Vec<CMat>)> = None;
    for _ in 0..BOOK_CANDIDATES {
        let cand: Vec<CMat> = (0..t).map(|_| random_symmetric_unitary(m, rng).theta).collect();
        let score = book_conditioning(&cand);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, cand));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

/// Random training book for the Tucker2 estimators.
///
/// Fully-connected: `T` symmetric unitaries. Group-connected: group `g` is
/// trained on blocks `g*T_g..(g+1)*T_g` with every other group switched off
/// (zero blocks). Each schedule is the best conditioned of
/// [`BOOK_CANDIDATES`] random draws.
pub fn build_training_book<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<PilotBook> {
    cfg.validate()?;
    validate_identifiability(cfg).map_err(|v| Error::Identifiability(v.to_string()))?;
    let topology = cfg.topology();
    let x = pilot_symbols(cfg.k)?;
    let m = cfg.m;
    let (thetas, schedule) = match topology {
        Topology::FullyConnected => (conditioned_blocks(m, cfg.t, rng), vec![0; cfg.t]),
        Topology::GroupConnected { groups, group_size } => {
            let tg = cfg.t / groups;
            let mut th = Vec::with_capacity(cfg.t);
            let mut sch = Vec::with_capacity(cfg.t);
            for g in 0..groups {
                for b in conditioned_blocks(group_size, tg, rng) {
                    let mut full = CMat::from_element(m, m, ZERO);
                    full.view_mut((g * group_size, g * group_size), (group_size, group_size)).copy_from(&b);
                    th.push(full);
                    sch.push(g);
                }
            }
            (th, sch)
        }
    };
    Ok(PilotBook { topology, thetas, x, schedule })
}

/// `Psi_1 (x) Psi_2` pilot matrix of size `G M_bar^2` square.
pub fn dft_pilot_phi(group_size: usize, groups: usize) -> Result<CMat> {
    if group_size == 0 || groups == 0 {
        return Err(Error::InvalidArgument("group size and group count must be >= 1".into()));
    }
    let mb = group_size;
    let f = dft_matrix(mb)?;
    let u2 = f.unscale((mb as f64).sqrt());
    let vf: Vec<Complex64> = f.iter().copied().collect();
    let d = mb * mb;
    let mut psi2 = CMat::zeros(d, d);
    for m in 0..mb {
        for n in 0..mb {
            let shifted = circshift(&vf, n * mb);
            let col = m * mb + n;
            for r in 0..d {
                psi2[(r, col)] = shifted[r] * u2[(r / mb, m)];
            }
        }
    }
    Ok(kron(&dft_matrix(groups)?, &psi2))
}

/// Reflection blocks of baseline training state `t`: the column of `phi`
/// split into `groups` pieces of length `M_bar^2`, each reshaped by inverse vec.
pub fn phi_blocks(phi: &CMat, t: usize, group_size: usize, groups: usize) -> Result<Vec<CMat>> {
    let d = group_size * group_size;
    if phi.nrows() != d * groups || t >= phi.ncols() {
        return dim_err(format!("phi is {}x{}, expected {} rows and column {t}", phi.nrows(), phi.ncols(), d * groups));
    }
    Ok((0..groups)
        .map(|g| CMat::from_fn(group_size, group_size, |i, j| phi[(g * d + j * group_size + i, t)]))
        .collect())
}

/// Mean squared magnitude of the off-diagonal sample correlation between the
/// columns `vec(Theta_t)` of a training book.
pub fn book_column_correlation(book: &PilotBook) -> f64 {
    let cols: Vec<CMat> = book.thetas.iter().map(|t| CMat::from_column_slice(t.len(), 1, t.as_slice())).collect();
    let mut worst: f64 = 0.0;
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let num = cols[i].dotc(&cols[j]).norm();
            let den = (fro2(&cols[i]) * fro2(&cols[j])).sqrt();
            if den > 0.0 {
                worst = worst.max(num / den);
            }
        }
    }
    worst
}
