//! Dense and matrix-free symmetric linear algebra.
//!
//! Dense eigendecomposition serves as the oracle; Lanczos with full
//! reorthogonalization and power iteration handle operators given only by
//! their action.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative symmetry tolerance for dense symmetric inputs.
const SYM_TOL: f64 = 1e-10;

/// Row-major dense matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "DenseMatrix::from_rows".into(),
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: context.into(),
            });
        }
        Ok(())
    }

    fn check_symmetric(&self) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::NonSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = SYM_TOL * scale.max(1e-300);
        let mut max_asym = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                max_asym = max_asym.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        if max_asym > tol {
            return Err(Error::Asymmetric { max_asym, tol });
        }
        Ok(())
    }
}

/// A symmetric operator given only by its action on vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

/// Wrap a closure as an operator.
pub struct FnOperator<F: Fn(&[f64]) -> Vec<f64> + Sync> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (self.f)(v)
    }
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.rows
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matvec(v)
    }
}

/// Eigenvalue with its unit-norm eigenvector.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Solver settings for the matrix-free eigensolvers.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 64,
            tol: 1e-6,
            seed: 0,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn scale(v: &mut [f64], a: f64) {
    for x in v.iter_mut() {
        *x *= a;
    }
}

/// Fix the eigenvector sign: the component of largest absolute value is
/// made positive. Ties broken by the first such index.
pub fn fix_sign(v: &mut [f64]) {
    let mut idx = 0;
    let mut best = 0.0f64;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        scale(v, -1.0);
    }
}

/// Full eigendecomposition of a dense symmetric matrix, descending by value.
pub fn dense_sym_eig(a: &DenseMatrix) -> Result<Vec<EigenPair>> {
    a.check_finite("dense_sym_eig input")?;
    a.check_symmetric()?;
    if a.rows > 5000 {
        return Err(Error::InvalidArgument(format!(
            "dense_sym_eig dimension {} exceeds 5000",
            a.rows
        )));
    }
    let n = a.rows;
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut pairs: Vec<EigenPair> = (0..n)
        .map(|k| {
            let mut vector: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let nrm = norm2(&vector);
            scale(&mut vector, 1.0 / nrm);
            fix_sign(&mut vector);
            EigenPair {
                value: eig.eigenvalues[k],
                vector,
            }
        })
        .collect();
    pairs.sort_by(|p, q| q.value.partial_cmp(&p.value).unwrap());
    Ok(pairs)
}

/// Seeded unit-norm random start vector.
fn random_unit(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
    let nrm = norm2(&v);
    scale(&mut v, 1.0 / nrm);
    v
}

/// Top-k eigenpairs via Lanczos with full reorthogonalization.
///
/// The Krylov basis is kept and every new vector is reorthogonalized against
/// all previous ones (twice). Ritz pairs are accepted once the residual
/// `‖op(v) - λv‖ ≤ tol·max(1, |λ|)` holds for the k leading values.
pub fn lanczos_topk(
    op: &dyn LinearOperator,
    k: usize,
    cfg: &SolverConfig,
) -> Result<Vec<EigenPair>> {
    let n = op.dim();
    if k == 0 || k > n.min(16) {
        return Err(Error::InvalidArgument(format!(
            "lanczos_topk: k = {k} out of range 1..={}",
            n.min(16)
        )));
    }
    if cfg.tol <= 0.0 {
        return Err(Error::InvalidArgument("lanczos_topk: tol must be > 0".into()));
    }
    let max_m = cfg.max_iters.min(n);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_m);
    let mut alphas: Vec<f64> = Vec::with_capacity(max_m);
    let mut betas: Vec<f64> = Vec::with_capacity(max_m);

    basis.push(random_unit(n, cfg.seed));

    let mut best: Option<(Vec<EigenPair>, Vec<f64>)> = None;

    for m in 0..max_m {
        let v = basis[m].clone();
        let mut w = op.apply(&v);
        if w.len() != n {
            return Err(Error::Dimension {
                context: "operator apply output".into(),
                expected: n,
                actual: w.len(),
            });
        }
        let alpha = dot(&w, &v);
        alphas.push(alpha);

        // Full reorthogonalization, two passes.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                axpy(&mut w, -c, b);
            }
        }
        let beta = norm2(&w);

        // Check convergence of the current Ritz pairs once we have k of them.
        if m + 1 >= k {
            let (pairs, residuals) = ritz_pairs(op, &basis, &alphas, &betas, k)?;
            let converged = pairs
                .iter()
                .zip(&residuals)
                .all(|(p, r)| *r <= cfg.tol * p.value.abs().max(1.0));
            let better = match &best {
                None => true,
                Some((_, old)) => residuals.iter().sum::<f64>() < old.iter().sum::<f64>(),
            };
            if better {
                best = Some((pairs.clone(), residuals));
            }
            if converged {
                return Ok(pairs);
            }
        }

        // Invariant subspace found: the Krylov space cannot grow further, so
        // the Ritz pairs above are exact for the reachable spectrum.
        if beta < 1e-14 {
            if let Some((pairs, residuals)) = best {
                let ok = pairs
                    .iter()
                    .zip(&residuals)
                    .all(|(p, r)| *r <= cfg.tol * p.value.abs().max(1.0));
                if ok {
                    return Ok(pairs);
                }
                return Err(Error::NoConvergence {
                    iters: m + 1,
                    estimates: pairs.iter().map(|p| p.value).collect(),
                    residuals,
                });
            }
            return Err(Error::NoConvergence {
                iters: m + 1,
                estimates: vec![],
                residuals: vec![],
            });
        }

        betas.push(beta);
        scale(&mut w, 1.0 / beta);
        basis.push(w);
    }

    match best {
        Some((pairs, residuals)) => Err(Error::NoConvergence {
            iters: max_m,
            estimates: pairs.iter().map(|p| p.value).collect(),
            residuals,
        }),
        None => Err(Error::NoConvergence {
            iters: max_m,
            estimates: vec![],
            residuals: vec![],
        }),
    }
}

/// Leading-k Ritz pairs of the current tridiagonal, with true residuals.
fn ritz_pairs(
    op: &dyn LinearOperator,
    basis: &[Vec<f64>],
    alphas: &[f64],
    betas: &[f64],
    k: usize,
) -> Result<(Vec<EigenPair>, Vec<f64>)> {
    let m = alphas.len();
    let t = DenseMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alphas[i]
        } else if j == i + 1 || i == j + 1 {
            betas[i.min(j)]
        } else {
            0.0
        }
    });
    let tri = dense_sym_eig(&t)?;
    let n = basis[0].len();
    let mut pairs = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for p in tri.iter().take(k) {
        let mut v = vec![0.0; n];
        for (j, b) in basis.iter().take(m).enumerate() {
            axpy(&mut v, p.vector[j], b);
        }
        let nrm = norm2(&v);
        scale(&mut v, 1.0 / nrm);
        fix_sign(&mut v);
        let mut r = op.apply(&v);
        axpy(&mut r, -p.value, &v);
        residuals.push(norm2(&r));
        pairs.push(EigenPair {
            value: p.value,
            vector: v,
        });
    }
    Ok((pairs, residuals))
}

/// Top eigenpair via power iteration. Requires a positive, isolated top
/// eigenvalue; returns a non-convergence error otherwise.
pub fn power_iteration(op: &dyn LinearOperator, cfg: &SolverConfig) -> Result<EigenPair> {
    let n = op.dim();
    let mut v = random_unit(n, cfg.seed);
    let mut lambda = 0.0;
    let mut residual_history = Vec::new();
    for _ in 0..cfg.max_iters {
        let mut w = op.apply(&v);
        lambda = dot(&w, &v);
        let mut r = w.clone();
        axpy(&mut r, -lambda, &v);
        let res = norm2(&r);
        residual_history.push(res);
        if res <= cfg.tol * lambda.abs().max(1.0) {
            fix_sign(&mut v);
            // Recompute the Rayleigh quotient under the fixed sign (unchanged).
            return Ok(EigenPair {
                value: lambda,
                vector: v,
            });
        }
        let nrm = norm2(&w);
        if nrm == 0.0 {
            break;
        }
        scale(&mut w, 1.0 / nrm);
        v = w;
    }
    Err(Error::NoConvergence {
        iters: cfg.max_iters,
        estimates: vec![lambda],
        residuals: residual_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.gen::<f64>() * 2.0 - 1.0;
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        a
    }

    /// Eigenvalue counting via LDL^T inertia: number of eigenvalues < x.
    /// Independent of any eigensolver path; used as the n=5 oracle.
    fn count_eigs_below(a: &DenseMatrix, x: f64) -> usize {
        let n = a.rows();
        let mut m = nalgebra::DMatrix::from_fn(n, n, |i, j| a.get(i, j));
        for i in 0..n {
            m[(i, i)] -= x;
        }
        // Gaussian elimination without pivoting on m; count negative pivots.
        // Shift x slightly if a pivot vanishes.
        let mut neg = 0;
        for k in 0..n {
            let piv = m[(k, k)];
            if piv.abs() < 1e-12 {
                return count_eigs_below(a, x + 1e-9);
            }
            if piv < 0.0 {
                neg += 1;
            }
            for i in (k + 1)..n {
                let f = m[(i, k)] / piv;
                for j in k..n {
                    m[(i, j)] -= f * m[(k, j)];
                }
            }
        }
        neg
    }

    /// Bisection on the inertia count: the i-th smallest eigenvalue.
    fn oracle_eigenvalue(a: &DenseMatrix, i: usize) -> f64 {
        let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut lo = -(a.rows() as f64) * scale - 1.0;
        let mut hi = (a.rows() as f64) * scale + 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_eigs_below(a, mid) > i {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn identity_eigenvalues() {
        let a = DenseMatrix::diagonal(&[1.0, 1.0, 1.0]);
        let pairs = dense_sym_eig(&a).unwrap();
        for p in pairs {
            assert!((p.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_top_pair() {
        let a = DenseMatrix::diagonal(&[1.0, 2.0, 3.0]);
        let pairs = dense_sym_eig(&a).unwrap();
        assert!((pairs[0].value - 3.0).abs() < 1e-12);
        assert!((pairs[0].vector[2].abs() - 1.0).abs() < 1e-12);
        assert!(pairs[0].vector[2] > 0.0, "sign convention");
    }

    #[test]
    fn dense_eig_against_inertia_oracle_n5() {
        let a = random_symmetric(5, 7);
        let pairs = dense_sym_eig(&a).unwrap();
        let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // pairs are descending; oracle index i is the i-th smallest.
        for (rank, p) in pairs.iter().enumerate() {
            let oracle = oracle_eigenvalue(&a, 4 - rank);
            assert!(
                (p.value - oracle).abs() <= 1e-8 * scale.max(1.0),
                "rank {rank}: {} vs oracle {}",
                p.value,
                oracle
            );
            // Residual check ‖Av - λv‖ ≤ 1e-8 ‖A‖.
            let mut r = a.matvec(&p.vector);
            axpy(&mut r, -p.value, &p.vector);
            assert!(norm2(&r) <= 1e-8 * scale.max(1.0));
        }
        // Pairwise orthonormality.
        for i in 0..5 {
            for j in 0..5 {
                let d = dot(&pairs[i].vector, &pairs[j].vector);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        let a = DenseMatrix::from_rows(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(dense_sym_eig(&a), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn non_finite_rejected() {
        let a = DenseMatrix::from_rows(2, 2, vec![1.0, f64::NAN, f64::NAN, 1.0]).unwrap();
        assert!(matches!(dense_sym_eig(&a), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn non_square_rejected() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(dense_sym_eig(&a), Err(Error::NonSquare { .. })));
    }

    #[test]
    fn lanczos_diagonal_1_to_100() {
        let d: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let a = DenseMatrix::diagonal(&d);
        let cfg = SolverConfig {
            max_iters: 100,
            ..Default::default()
        };
        let pairs = lanczos_topk(&a, 3, &cfg).unwrap();
        assert!((pairs[0].value - 100.0).abs() < 1e-6 * 100.0);
        assert!((pairs[1].value - 99.0).abs() < 1e-6 * 99.0);
        assert!((pairs[2].value - 98.0).abs() < 1e-6 * 98.0);
    }

    #[test]
    fn lanczos_identity_k1() {
        let a = DenseMatrix::diagonal(&[1.0; 8]);
        let pairs = lanczos_topk(&a, 1, &SolverConfig::default()).unwrap();
        assert!((pairs[0].value - 1.0).abs() < 1e-10);
        assert!((norm2(&pairs[0].vector) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lanczos_matches_dense_on_rotated_spectrum() {
        // op = Q D Q^T for a random orthogonal Q (from QR of a random matrix).
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let q = raw.qr().q();
        let d: Vec<f64> = (0..n).map(|i| (i as f64) - 10.0).collect();
        let mut dm = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += q[(i, k)] * d[k] * q[(j, k)];
                }
                dm.set(i, j, s);
            }
        }
        // Symmetrize rounding noise.
        let sym = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (dm.get(i, j) + dm.get(j, i)));
        let dense = dense_sym_eig(&sym).unwrap();
        let cfg = SolverConfig {
            max_iters: n,
            tol: 1e-10,
            seed: 3,
        };
        let lz = lanczos_topk(&sym, 4, &cfg).unwrap();
        for (a, b) in lz.iter().zip(dense.iter()) {
            assert!(
                (a.value - b.value).abs() <= 1e-9 * b.value.abs().max(1.0),
                "{} vs {}",
                a.value,
                b.value
            );
        }
        // Mutual orthogonality of returned vectors.
        for i in 0..lz.len() {
            for j in (i + 1)..lz.len() {
                assert!(dot(&lz[i].vector, &lz[j].vector).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lanczos_deterministic_per_seed() {
        let a = random_symmetric(30, 5);
        let cfg = SolverConfig {
            max_iters: 30,
            tol: 1e-9,
            seed: 42,
        };
        let p1 = lanczos_topk(&a, 2, &cfg).unwrap();
        let p2 = lanczos_topk(&a, 2, &cfg).unwrap();
        assert_eq!(p1[0].value.to_bits(), p2[0].value.to_bits());
        for (x, y) in p1[0].vector.iter().zip(&p2[0].vector) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn lanczos_nonconvergence_carries_estimates() {
        let d: Vec<f64> = (1..=40).map(|i| 1.0 + (i as f64) * 1e-3).collect();
        let a = DenseMatrix::diagonal(&d);
        let cfg = SolverConfig {
            max_iters: 3,
            tol: 1e-14,
            seed: 0,
        };
        match lanczos_topk(&a, 2, &cfg) {
            Err(Error::NoConvergence { estimates, residuals, .. }) => {
                assert_eq!(estimates.len(), 2);
                assert_eq!(residuals.len(), 2);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn power_iteration_diagonal() {
        let a = DenseMatrix::diagonal(&[1.0, 2.0, 3.0]);
        let cfg = SolverConfig {
            max_iters: 500,
            tol: 1e-10,
            seed: 1,
        };
        let p = power_iteration(&a, &cfg).unwrap();
        assert!((p.value - 3.0).abs() < 1e-8);
        assert!(p.vector[2] > 0.99);
    }

    #[test]
    fn power_iteration_matches_dense_on_spd() {
        let n = 20;
        let b = random_symmetric(n, 9);
        // SPD: A = B^T B + I.
        let a = DenseMatrix::from_fn(n, n, |i, j| {
            let mut s = if i == j { 1.0 } else { 0.0 };
            for k in 0..n {
                s += b.get(k, i) * b.get(k, j);
            }
            s
        });
        let dense = dense_sym_eig(&a).unwrap();
        let cfg = SolverConfig {
            max_iters: 50_000,
            tol: 1e-9,
            seed: 2,
        };
        let p = power_iteration(&a, &cfg).unwrap();
        assert!((p.value - dense[0].value).abs() <= 1e-6 * dense[0].value.abs());
    }

    #[test]
    fn power_iteration_degenerate_gap_errors() {
        // |λ1| = |λ2| with opposite signs: the iterate oscillates between two
        // directions and the residual cannot shrink. The solver must report
        // non-convergence with its residual history, never a wrong answer.
        let a = DenseMatrix::diagonal(&[2.0, -2.0, 1.0]);
        let cfg = SolverConfig {
            max_iters: 200,
            tol: 1e-8,
            seed: 4,
        };
        match power_iteration(&a, &cfg) {
            Err(Error::NoConvergence { residuals, .. }) => {
                assert_eq!(residuals.len(), 200);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }
}
