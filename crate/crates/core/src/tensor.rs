//! Dense complex linear and multilinear algebra kernels.
//!
//! Matrices are `nalgebra` complex matrices (column-major storage), so `vec`
//! is a plain copy of the backing buffer. Third-order tensors use the layout
//! `(i, j, t) -> i + I1 * (j + I2 * t)`: every frontal slice is a contiguous
//! column-major `I1 x I2` block.
//!
//! Unfoldings follow the cyclic convention
//!
//! ```text
//! [X]_(1) = [X_1, X_2, ..., X_I3]          (I1 x I2*I3)
//! [X]_(2) = [X_1^T, X_2^T, ..., X_I3^T]    (I2 x I1*I3)
//! [X]_(3) row t = vec(X_t)^T               (I3 x I1*I2)
//! ```
//!
//! under which `X = G x1 A x2 B` satisfies `[X]_(1) = A [G]_(1) (I ⊗ B)^T`
//! and `[X]_(2) = B [G]_(2) (I ⊗ A)^T` with [`kron`] as implemented here.
//!
//! Matrix products and SVDs issued through this module are charged to a
//! per-thread operation counter (see [`flops`]).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Default relative truncation threshold for [`pinv`].
pub const PINV_REL_TOL: f64 = 1e-12;

/// Per-thread complex multiply counter for the instrumented kernels.
///
/// Only matrix products and SVDs are charged. The SVD of a `p x q` matrix
/// with `p >= q` is charged `4 p q^2 + 8 q^3`, the leading Golub-Kahan count.
pub mod flops {
    use std::cell::Cell;

    thread_local! {
        static COUNT: Cell<u64> = const { Cell::new(0) };
    }

    pub fn reset() {
        COUNT.with(|c| c.set(0));
    }

    pub fn read() -> u64 {
        COUNT.with(|c| c.get())
    }

    pub(crate) fn charge(n: u64) {
        COUNT.with(|c| c.set(c.get().wrapping_add(n)));
    }

    pub(crate) fn svd_cost(rows: usize, cols: usize) -> u64 {
        let (p, q) = (rows.max(cols) as u64, rows.min(cols) as u64);
        4 * p * q * q + 8 * q * q * q
    }
}

/// Counted matrix product.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    flops::charge((a.nrows() * a.ncols() * b.ncols()) as u64);
    a * b
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Column-stacking vectorization.
pub fn vec(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub fn unvec(v: &CVec, rows: usize, cols: usize) -> Result<CMat> {
    if v.len() != rows * cols {
        return dim_err(format!("unvec: length {} != {rows}x{cols}", v.len()));
    }
    Ok(CMat::from_column_slice(rows, cols, v.as_slice()))
}

/// Kronecker product; block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    flops::charge((a.len() * b.len()) as u64);
    a.kronecker(b)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Squared Frobenius norm.
pub fn fro2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Block-diagonal assembly of square or rectangular blocks.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `vec(A B C^T) = (C ⊗ A) vec(B)` evaluated without forming the Kronecker
/// product; used where the explicit form would be quadratic in memory.
pub fn kron_apply(c: &CMat, a: &CMat, b: &CMat) -> CVec {
    vec(&matmul(&matmul(a, b), &c.transpose()))
}

/// Moore-Penrose pseudo-inverse via SVD; singular values below
/// `rel_tol * sigma_max` are treated as zero.
pub fn pinv(m: &CMat, rel_tol: f64) -> Result<CMat> {
    pinv_with_rank(m, rel_tol).map(|(p, _)| p)
}

fn to_faer(m: &CMat) -> faer::Mat<Complex64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Singular values in descending order.
pub fn singular_values(m: &CMat) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    flops::charge(flops::svd_cost(m.nrows(), m.ncols()));
    let mut s = to_faer(m).singular_values().map_err(|e| Error::Singular(format!("SVD failed: {e:?}")))?;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// [`pinv`] that also reports the numerical rank it retained.
pub fn pinv_with_rank(m: &CMat, rel_tol: f64) -> Result<(CMat, usize)> {
    if !is_finite(m) {
        return Err(Error::NonFinite("pinv"));
    }
    if m.is_empty() {
        return Ok((CMat::zeros(m.ncols(), m.nrows()), 0));
    }
    flops::charge(flops::svd_cost(m.nrows(), m.ncols()));
    let svd = to_faer(m).thin_svd().map_err(|e| Error::Singular(format!("SVD failed: {e:?}")))?;
    let (u, v, sv) = (svd.U(), svd.V(), svd.S().column_vector());
    let k = sv.nrows();
    let sigma_max = (0..k).map(|i| sv[i].re).fold(0.0_f64, f64::max);
    let cut = rel_tol * sigma_max;
    // pinv = V diag(1/s) U^H
    let mut scaled_v = CMat::from_fn(m.ncols(), k, |i, j| v[(i, j)]);
    let mut rank = 0;
    for i in 0..k {
        let s = sv[i].re;
        let w = if s > cut && s > 0.0 {
            rank += 1;
            1.0 / s
        } else {
            0.0
        };
        scaled_v.column_mut(i).scale_mut(w);
    }
    let u = CMat::from_fn(m.nrows(), k, |i, j| u[(i, j)]);
    Ok((matmul(&scaled_v, &u.adjoint()), rank))
}

/// Minimum-norm `X` minimizing `|Y - X A|_F` for a wide `A` (`m x n`,
/// `m <= n`), with the numerical rank of `A`. Uses the normal equations
/// `X (A A^H) = Y A^H` with a Cholesky solve when the pivots show `A` is well
/// conditioned, and the SVD pseudo-inverse otherwise.
pub fn right_lstsq(y: &CMat, a: &CMat, rel_tol: f64) -> Result<(CMat, usize)> {
    if y.ncols() != a.ncols() {
        return dim_err(format!("Y {:?} and A {:?} differ in columns", y.shape(), a.shape()));
    }
    if !is_finite(a) || !is_finite(y) {
        return Err(Error::NonFinite("right_lstsq"));
    }
    let m = a.nrows();
    if m > 0 && m <= a.ncols() {
        let ah = a.adjoint();
        let g = matmul(a, &ah);
        let scale = (0..m).map(|i| g[(i, i)].re).fold(0.0_f64, f64::max);
        if let Some(ch) = g.cholesky() {
            let l = ch.l_dirty();
            let min_pivot = (0..m).map(|i| l[(i, i)].norm_sqr()).fold(f64::INFINITY, f64::min);
            // pivots bound the smallest eigenvalue from above
            if min_pivot > 1e-10 * scale {
                flops::charge((m * m * m / 3 + y.nrows() * m * m) as u64);
                let ya = matmul(y, &ah);
                return Ok((ch.solve(&ya.adjoint()).adjoint(), m));
            }
        }
    }
    let (p, rank) = pinv_with_rank(a, rel_tol)?;
    Ok((matmul(y, &p), rank))
}

/// Circular shift: element `i` of the output is element `(i - k) mod len`.
pub fn circshift<T: Clone>(v: &[T], k: usize) -> Vec<T> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k % n;
    (0..n).map(|i| v[(i + n - k) % n].clone()).collect()
}

/// Unnormalized DFT matrix, entry `(j, k) = exp(-2πi jk / n)`.
pub fn dft_matrix(n: usize) -> Result<CMat> {
    if n == 0 {
        return Err(Error::InvalidArgument("dft_matrix: n must be >= 1".into()));
    }
    Ok(CMat::from_fn(n, n, |j, k| {
        // reduce jk mod n first so large sizes keep full phase accuracy
        let p = ((j * k) % n) as f64;
        Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * p / n as f64)
    }))
}

/// Dense complex third-order tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<Complex64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![ZERO; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Stacks equally sized matrices as frontal slices.
    pub fn from_slices(slices: &[CMat]) -> Result<Self> {
        let (r, c) = match slices.first() {
            Some(s) => s.shape(),
            None => return Ok(Self::zeros([0, 0, 0])),
        };
        let mut data = Vec::with_capacity(r * c * slices.len());
        for s in slices {
            if s.shape() != (r, c) {
                return dim_err(format!("slice shape {:?} != {:?}", s.shape(), (r, c)));
            }
            data.extend_from_slice(s.as_slice());
        }
        Ok(Self {
            dims: [r, c, slices.len()],
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, t: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * t)
    }

    pub fn get(&self, i: usize, j: usize, t: usize) -> Complex64 {
        self.data[self.idx(i, j, t)]
    }

    pub fn set(&mut self, i: usize, j: usize, t: usize, z: Complex64) {
        let k = self.idx(i, j, t);
        self.data[k] = z;
    }

    /// Frontal slice `t` (zero-based) as an `I1 x I2` matrix.
    pub fn slice(&self, t: usize) -> CMat {
        let n = self.dims[0] * self.dims[1];
        CMat::from_column_slice(self.dims[0], self.dims[1], &self.data[t * n..(t + 1) * n])
    }

    pub fn slices(&self) -> Vec<CMat> {
        (0..self.dims[2]).map(|t| self.slice(t)).collect()
    }

    pub fn fro2(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return dim_err(format!("tensor dims {:?} vs {:?}", self.dims, other.dims));
        }
        Ok(Tensor3 {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// Mode-`n` unfolding, `n` in `1..=3`.
    pub fn unfold(&self, n: usize) -> Result<CMat> {
        let [i1, i2, i3] = self.dims;
        match n {
            1 => Ok(CMat::from_column_slice(i1, i2 * i3, &self.data)),
            2 => Ok(CMat::from_fn(i2, i1 * i3, |j, col| {
                self.get(col % i1, j, col / i1)
            })),
            3 => Ok(CMat::from_fn(i3, i1 * i2, |t, col| {
                self.get(col % i1, col / i1, t)
            })),
            _ => Err(Error::InvalidArgument(format!("unfolding mode {n} not in 1..=3"))),
        }
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn fold(m: &CMat, n: usize, dims: [usize; 3]) -> Result<Tensor3> {
        let [i1, i2, i3] = dims;
        let expect = match n {
            1 => (i1, i2 * i3),
            2 => (i2, i1 * i3),
            3 => (i3, i1 * i2),
            _ => return Err(Error::InvalidArgument(format!("fold mode {n} not in 1..=3"))),
        };
        if m.shape() != expect {
            return dim_err(format!("fold: matrix {:?} != {:?}", m.shape(), expect));
        }
        let mut t = Tensor3::zeros(dims);
        match n {
            1 => t.data.copy_from_slice(m.as_slice()),
            2 => {
                for col in 0..i1 * i3 {
                    for j in 0..i2 {
                        t.set(col % i1, j, col / i1, m[(j, col)]);
                    }
                }
            }
            _ => {
                for col in 0..i1 * i2 {
                    for s in 0..i3 {
                        t.set(col % i1, col / i1, s, m[(s, col)]);
                    }
                }
            }
        }
        Ok(t)
    }

    /// n-mode product `self x_n m`, defined by `[result]_(n) = m [self]_(n)`.
    pub fn n_mode_product(&self, m: &CMat, n: usize) -> Result<Tensor3> {
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidArgument(format!("n-mode product mode {n} not in 1..=3")));
        }
        let size = self.dims[n - 1];
        if m.ncols() != size {
            return dim_err(format!(
                "n-mode product: matrix has {} columns, mode {n} has size {size}",
                m.ncols()
            ));
        }
        let mut dims = self.dims;
        dims[n - 1] = m.nrows();
        let unfolded = matmul(m, &self.unfold(n)?);
        Tensor3::fold(&unfolded, n, dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn randm(rng: &mut ChaCha8Rng, r: usize, cc: usize) -> CMat {
        CMat::from_fn(r, cc, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn rel(a: &CMat, b: &CMat) -> f64 {
        fro2(&(a - b)).sqrt() / fro2(b).sqrt().max(1e-300)
    }

    #[test]
    fn vec_is_column_stacking() {
        let m = CMat::from_row_slice(2, 2, &[c(1., 0.), c(3., 0.), c(2., 0.), c(4., 0.)]);
        let v: Vec<f64> = vec(&m).iter().map(|z| z.re).collect();
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0]);
        let v: Vec<f64> = vec(&identity(2)).iter().map(|z| z.re).collect();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn unvec_roundtrip_and_length_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = randm(&mut rng, 3, 2);
        assert_eq!(unvec(&vec(&m), 3, 2).unwrap(), m);
        assert!(unvec(&vec(&m), 2, 2).is_err());
    }

    #[test]
    fn kron_small_cases() {
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
        let a = CMat::from_element(1, 1, c(2., 0.));
        let b = CMat::from_element(1, 1, c(3., 0.));
        assert_eq!(kron(&a, &b)[(0, 0)], c(6., 0.));
    }

    #[test]
    fn kron_vec_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = randm(&mut rng, 2, 2);
        let b = randm(&mut rng, 2, 3);
        let cm = randm(&mut rng, 2, 3);
        let lhs = vec(&(&a * &b * cm.transpose()));
        let rhs = kron(&cm, &a) * vec(&b);
        assert!((&lhs - &rhs).norm() / lhs.norm() < 1e-12);
        assert!((kron_apply(&cm, &a, &b) - lhs).norm() < 1e-12);
    }

    #[test]
    fn tucker2_unfolding_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let core_slices: Vec<CMat> = (0..4).map(|_| randm(&mut rng, 3, 2)).collect();
        let g = Tensor3::from_slices(&core_slices).unwrap();
        let a1 = randm(&mut rng, 5, 3);
        let a2 = randm(&mut rng, 4, 2);
        let x = g.n_mode_product(&a1, 1).unwrap().n_mode_product(&a2, 2).unwrap();
        assert_eq!(x.dims(), [5, 4, 4]);
        let i3 = identity(4);
        let m1 = &a1 * g.unfold(1).unwrap() * kron(&i3, &a2).transpose();
        assert!(rel(&x.unfold(1).unwrap(), &m1) < 1e-12);
        let m2 = &a2 * g.unfold(2).unwrap() * kron(&i3, &a1).transpose();
        assert!(rel(&x.unfold(2).unwrap(), &m2) < 1e-12);
        // frontal slices are A1 G_t A2^T
        for t in 0..4 {
            let s = &a1 * &core_slices[t] * a2.transpose();
            assert!(rel(&x.slice(t), &s) < 1e-12);
        }
    }

    #[test]
    fn fold_inverts_unfold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let slices: Vec<CMat> = (0..3).map(|_| randm(&mut rng, 2, 4)).collect();
        let t = Tensor3::from_slices(&slices).unwrap();
        for n in 1..=3 {
            let back = Tensor3::fold(&t.unfold(n).unwrap(), n, t.dims()).unwrap();
            assert_eq!(back, t);
        }
        assert!(t.unfold(4).is_err());
        assert!(t.unfold(0).is_err());
    }

    #[test]
    fn n_mode_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let slices: Vec<CMat> = (0..2).map(|_| randm(&mut rng, 3, 2)).collect();
        let t = Tensor3::from_slices(&slices).unwrap();
        assert_eq!(t.n_mode_product(&identity(3), 1).unwrap(), t);
        let a = randm(&mut rng, 4, 3);
        let b = randm(&mut rng, 5, 2);
        let ab = t.n_mode_product(&a, 1).unwrap().n_mode_product(&b, 2).unwrap();
        let ba = t.n_mode_product(&b, 2).unwrap().n_mode_product(&a, 1).unwrap();
        let diff = ab.sub(&ba).unwrap().fro2().sqrt();
        assert!(diff < 1e-12 * ab.fro2().sqrt());
        assert!(t.n_mode_product(&a, 2).is_err());

        let one = Tensor3::from_slices(&[CMat::from_element(1, 1, c(2., 0.))]).unwrap();
        let r = one.n_mode_product(&CMat::from_element(1, 1, c(3., 0.)), 1).unwrap();
        assert_eq!(r.get(0, 0, 0), c(6., 0.));
    }

    #[test]
    fn pinv_examples() {
        let p = pinv(&identity(3), PINV_REL_TOL).unwrap();
        assert!(rel(&p, &identity(3)) < 1e-14);
        let d = CMat::from_diagonal(&CVec::from_vec(vec![c(2., 0.), ZERO]));
        let p = pinv(&d, PINV_REL_TOL).unwrap();
        assert!((p[(0, 0)] - c(0.5, 0.)).norm() < 1e-14);
        assert!(p[(1, 1)].norm() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = randm(&mut rng, 3, 5);
        let resid = &m * pinv(&m, PINV_REL_TOL).unwrap() - identity(3);
        assert!(fro2(&resid).sqrt() < 1e-10);
        let mut bad = m.clone();
        bad[(0, 0)] = c(f64::NAN, 0.0);
        assert!(matches!(pinv(&bad, PINV_REL_TOL), Err(Error::NonFinite(_))));
    }

    #[test]
    fn circshift_examples() {
        assert_eq!(circshift(&[1, 2, 3, 4], 1), vec![4, 1, 2, 3]);
        assert_eq!(circshift(&[1, 2, 3, 4], 4), vec![1, 2, 3, 4]);
        assert_eq!(circshift(&[1, 2, 3], 0), vec![1, 2, 3]);
    }

    #[test]
    fn dft_examples() {
        assert_eq!(dft_matrix(1).unwrap()[(0, 0)], ONE);
        let f2 = dft_matrix(2).unwrap();
        let expect = [[1.0, 1.0], [1.0, -1.0]];
        for j in 0..2 {
            for k in 0..2 {
                assert!((f2[(j, k)] - c(expect[j][k], 0.)).norm() < 1e-15);
            }
        }
        let f4 = dft_matrix(4).unwrap();
        let g = f4.adjoint() * &f4 - identity(4).scale(4.0);
        assert!(fro2(&g).sqrt() < 1e-12);
        assert!(dft_matrix(0).is_err());
    }

    #[test]
    fn flop_counter_charges_products() {
        flops::reset();
        let a = CMat::zeros(2, 3);
        let b = CMat::zeros(3, 4);
        let _ = matmul(&a, &b);
        assert_eq!(flops::read(), 24);
    }
}
