//! Small dense symmetric linear algebra: Cholesky factorization, triangular
//! solves, determinants, and the block conditioning formula behind every
//! conditional-distribution expression in the crate.
//!
//! Dimensions are small (tens at most), so everything is plain O(d^3) with no
//! pivoting. Conditioning always goes through a Cholesky solve; covariance
//! matrices are never inverted explicitly because gradients and conditionals
//! through explicit inverses are the unstable path.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A symmetric matrix with finite entries, stored dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch("empty matrix".into()));
        }
        let mut data = vec![0.0; dim * dim];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has length {}, expected {dim}",
                    row.len()
                )));
            }
            data[i * dim..(i + 1) * dim].copy_from_slice(row);
        }
        Self::from_raw(dim, data)
    }

    fn from_raw(dim: usize, data: Vec<f64>) -> Result<Self> {
        for (k, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Domain(format!(
                    "matrix entry ({}, {}) is not finite",
                    k / dim,
                    k % dim
                )));
            }
        }
        for i in 0..dim {
            for j in 0..i {
                let a = data[i * dim + j];
                let b = data[j * dim + i];
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::Domain(format!(
                        "matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Principal submatrix selected by `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> Result<Self> {
        let k = idx.len();
        let mut data = vec![0.0; k * k];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                if i >= self.dim || j >= self.dim {
                    return Err(Error::DimensionMismatch(format!(
                        "index {} out of range for dim {}",
                        i.max(j),
                        self.dim
                    )));
                }
                data[a * k + b] = self.get(i, j);
            }
        }
        Ok(Self { dim: k, data })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| self.data[i * self.dim..(i + 1) * self.dim].to_vec())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.rows()
    }
}

/// Lower-triangular Cholesky factor with strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
}

/// Factor a symmetric positive-definite matrix as L L^T.
pub fn cholesky(m: &SymMatrix) -> Result<CholeskyFactor> {
    let d = m.dim;
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i });
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(CholeskyFactor { dim: d, lower: l })
}

impl CholeskyFactor {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// Build directly from a row-major lower-triangular matrix.
    pub fn from_lower(dim: usize, lower: Vec<f64>) -> Result<Self> {
        if lower.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "lower has {} entries, expected {}",
                lower.len(),
                dim * dim
            )));
        }
        for i in 0..dim {
            if lower[i * dim + i] <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: i });
            }
        }
        Ok(Self { dim, lower })
    }

    /// Solve L z = b (forward substitution).
    pub fn forward_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        if b.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "rhs has length {}, expected {d}",
                b.len()
            )));
        }
        let mut z = b.to_vec();
        for i in 0..d {
            for k in 0..i {
                z[i] -= self.lower[i * d + k] * z[k];
            }
            z[i] /= self.lower[i * d + i];
        }
        Ok(z)
    }

    /// Solve (L L^T) x = b.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut x = self.forward_solve(b)?;
        for i in (0..d).rev() {
            for k in (i + 1)..d {
                x[i] -= self.lower[k * d + i] * x[k];
            }
            x[i] /= self.lower[i * d + i];
        }
        Ok(x)
    }

    /// log det(L L^T) = 2 sum_i log L_ii.
    pub fn log_det(&self) -> f64 {
        let d = self.dim;
        2.0 * (0..d).map(|i| self.lower[i * d + i].ln()).sum::<f64>()
    }

    /// y = L x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| (0..=i).map(|k| self.lower[i * d + k] * x[k]).sum())
            .collect()
    }

    /// Reassemble L L^T.
    pub fn reconstruct(&self) -> SymMatrix {
        let d = self.dim;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..=i.min(j) {
                    s += self.lower[i * d + k] * self.lower[j * d + k];
                }
                data[i * d + j] = s;
            }
        }
        SymMatrix { dim: d, data }
    }
}

/// Solve (L L^T) x = b. Free-function form of [`CholeskyFactor::solve`].
pub fn solve_spd(f: &CholeskyFactor, b: &[f64]) -> Result<Vec<f64>> {
    f.solve(b)
}

/// Free-function form of [`CholeskyFactor::log_det`].
pub fn log_det(f: &CholeskyFactor) -> f64 {
    f.log_det()
}

/// Conditional mean/variance of one Gaussian coordinate given others, plus
/// the Mahalanobis form of the observed block (needed by the student-t
/// conditional).
#[derive(Debug, Clone, Copy)]
pub struct BlockConditional {
    pub mean: f64,
    pub var: f64,
    /// (obs - mu_given)^T Sigma_given^{-1} (obs - mu_given)
    pub mahalanobis_sq: f64,
}

/// Condition coordinate `target` of N(mu, sigma) on the coordinates in
/// `given` taking the values `obs`. Solved through a Cholesky factorization
/// of the conditioning block, never an explicit inverse.
pub fn block_condition_ext(
    mu: &[f64],
    sigma: &SymMatrix,
    target: usize,
    given: &[usize],
    obs: &[f64],
) -> Result<BlockConditional> {
    let d = sigma.dim();
    if mu.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "mu has length {}, sigma is {d}x{d}",
            mu.len()
        )));
    }
    if target >= d {
        return Err(Error::DimensionMismatch(format!(
            "target {target} out of range for dim {d}"
        )));
    }
    if obs.len() != given.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for {} conditioning indices",
            obs.len(),
            given.len()
        )));
    }
    if given.contains(&target) {
        return Err(Error::Domain(format!(
            "target {target} also appears in the conditioning set"
        )));
    }
    if given.is_empty() {
        return Ok(BlockConditional {
            mean: mu[target],
            var: sigma.get(target, target),
            mahalanobis_sq: 0.0,
        });
    }
    let block = sigma.submatrix(given)?;
    let chol = cholesky(&block)?;
    let delta: Vec<f64> = given
        .iter()
        .zip(obs)
        .map(|(&j, &a)| a - mu[j])
        .collect();
    let z = chol.solve(&delta)?;
    let rho: Vec<f64> = given.iter().map(|&j| sigma.get(target, j)).collect();
    let w = chol.solve(&rho)?;
    let mean = mu[target] + rho.iter().zip(&z).map(|(r, zi)| r * zi).sum::<f64>();
    let var = sigma.get(target, target) - rho.iter().zip(&w).map(|(r, wi)| r * wi).sum::<f64>();
    if !(var > 0.0) {
        return Err(Error::Numeric(format!(
            "conditional variance {var} is not positive (near-singular block)"
        )));
    }
    let mahalanobis_sq = delta.iter().zip(&z).map(|(d, zi)| d * zi).sum::<f64>();
    Ok(BlockConditional {
        mean,
        var,
        mahalanobis_sq,
    })
}

/// Conditional mean and variance only.
pub fn block_condition(
    mu: &[f64],
    sigma: &SymMatrix,
    target: usize,
    given: &[usize],
    obs: &[f64],
) -> Result<(f64, f64)> {
    let c = block_condition_ext(mu, sigma, target, given, obs)?;
    Ok((c.mean, c.var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random_spd(d: usize, rng: &mut rng::Rng) -> SymMatrix {
        // A = G G^T + d I is comfortably positive definite.
        let g: Vec<f64> = (0..d * d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = if i == j { d as f64 } else { 0.0 };
                for k in 0..d {
                    s += g[i * d + k] * g[j * d + k];
                }
                data[i * d + j] = s;
            }
        }
        SymMatrix::from_rows(
            &(0..d)
                .map(|i| data[i * d..(i + 1) * d].to_vec())
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    /// Gaussian elimination with partial pivoting; the solve oracle.
    fn eliminate(a: &SymMatrix, b: &[f64]) -> Vec<f64> {
        let d = a.dim();
        let mut m: Vec<Vec<f64>> = a.rows();
        let mut rhs = b.to_vec();
        for col in 0..d {
            let piv = (col..d)
                .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
                .unwrap();
            m.swap(col, piv);
            rhs.swap(col, piv);
            for row in (col + 1)..d {
                let f = m[row][col] / m[col][col];
                for k in col..d {
                    m[row][k] -= f * m[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let mut s = rhs[i];
            for k in (i + 1)..d {
                s -= m[i][k] * x[k];
            }
            x[i] = s / m[i][i];
        }
        x
    }

    #[test]
    fn cholesky_identity() {
        let f = cholesky(&SymMatrix::identity(2)).unwrap();
        assert_eq!(f.get(0, 0), 1.0);
        assert_eq!(f.get(1, 1), 1.0);
        assert_eq!(f.get(1, 0), 0.0);
        assert_eq!(f.log_det(), 0.0);
    }

    #[test]
    fn cholesky_known_factor() {
        let m = SymMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 5.0]]).unwrap();
        let f = cholesky(&m).unwrap();
        assert!((f.get(0, 0) - 2.0).abs() < 1e-15);
        assert!((f.get(1, 0) - 1.0).abs() < 1e-15);
        assert!((f.get(1, 1) - 2.0).abs() < 1e-15);
        let r = f.reconstruct();
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.get(i, j) - m.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match cholesky(&m) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_reconstruction_randomized() {
        let mut r = rng::from_seed(1234);
        for _ in 0..1000 {
            let d = r.gen_range(1..=8);
            let m = random_spd(d, &mut r);
            let f = cholesky(&m).unwrap();
            let rec = f.reconstruct();
            for i in 0..d {
                for j in 0..d {
                    let denom = m.get(i, j).abs().max(1.0);
                    assert!(
                        (rec.get(i, j) - m.get(i, j)).abs() <= 1e-10 * denom,
                        "d={d} ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn solve_matches_elimination_oracle() {
        let mut r = rng::from_seed(99);
        for _ in 0..200 {
            let d = 5;
            let m = random_spd(d, &mut r);
            let b: Vec<f64> = (0..d).map(|_| r.gen::<f64>() * 4.0 - 2.0).collect();
            let f = cholesky(&m).unwrap();
            let x = f.solve(&b).unwrap();
            let oracle = eliminate(&m, &b);
            for i in 0..d {
                assert!((x[i] - oracle[i]).abs() < 1e-9, "i = {i}");
            }
            // residual check
            let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            for i in 0..d {
                let ax: f64 = (0..d).map(|j| m.get(i, j) * x[j]).sum();
                assert!((ax - b[i]).abs() <= 1e-8 * norm_b.max(1.0));
            }
        }
    }

    #[test]
    fn solve_identity_roundtrip() {
        let f = cholesky(&SymMatrix::identity(3)).unwrap();
        let b = vec![1.0, -2.0, 0.5];
        assert_eq!(f.solve(&b).unwrap(), b);
        assert!(f.solve(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn block_condition_marginal_case() {
        let mu = [1.0, -1.0];
        let sigma = SymMatrix::from_rows(&[vec![1.0, 0.8], vec![0.8, 4.0]]).unwrap();
        let (m, v) = block_condition(&mu, &sigma, 1, &[], &[]).unwrap();
        assert_eq!(m, -1.0);
        assert_eq!(v, 4.0);
    }

    #[test]
    fn block_condition_bivariate_example() {
        // Condition Y2 on Y1 = 1 for N((1,-1), [[1, 0.8], [0.8, 4]]).
        let mu = [1.0, -1.0];
        let sigma = SymMatrix::from_rows(&[vec![1.0, 0.8], vec![0.8, 4.0]]).unwrap();
        let (m, v) = block_condition(&mu, &sigma, 1, &[0], &[1.0]).unwrap();
        assert!((m - -1.0).abs() < 1e-14);
        assert!((v - 3.36).abs() < 1e-14);
        // and the reverse direction at y2 = 0
        let (m1, v1) = block_condition(&mu, &sigma, 0, &[1], &[0.0]).unwrap();
        assert!((m1 - (1.0 + 0.8 / 4.0)).abs() < 1e-14);
        assert!((v1 - (1.0 - 0.64 / 4.0)).abs() < 1e-14);
    }

    #[test]
    fn block_condition_zero_cross_covariance() {
        let mu = [0.5, 2.0];
        let sigma = SymMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let (m, v) = block_condition(&mu, &sigma, 0, &[1], &[10.0]).unwrap();
        assert_eq!(m, 0.5);
        assert_eq!(v, 2.0);
    }

    #[test]
    fn block_condition_single_matches_scalar_formula() {
        let mut r = rng::from_seed(5150);
        for _ in 0..200 {
            let sigma = random_spd(3, &mut r);
            let mu: Vec<f64> = (0..3).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect();
            let y = r.gen::<f64>() * 4.0 - 2.0;
            let c = block_condition(&mu, &sigma, 0, &[2], &[y]).unwrap();
            let mean = mu[0] + sigma.get(0, 2) / sigma.get(2, 2) * (y - mu[2]);
            let var = sigma.get(0, 0) - sigma.get(0, 2) * sigma.get(0, 2) / sigma.get(2, 2);
            assert!((c.0 - mean).abs() < 1e-12);
            assert!((c.1 - var).abs() < 1e-12);
        }
    }

    #[test]
    fn block_condition_rejects_singular_block() {
        let mu = [0.0, 0.0, 0.0];
        let sigma = SymMatrix::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(matches!(
            block_condition(&mu, &sigma, 2, &[0, 1], &[0.1, 0.2]),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn symmetry_is_enforced() {
        assert!(SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        assert!(SymMatrix::from_rows(&[vec![1.0, f64::NAN], vec![f64::NAN, 1.0]]).is_err());
    }
}
