//! Dense complex linear-algebra kernel.
//!
//! Thin wrappers over `nalgebra` that pin down the conventions the rest of
//! the crate relies on: eigenvalues and singular values are always sorted in
//! descending order, Hermitian inputs are symmetrized before factorization,
//! and every "is this numerically zero" decision goes through one
//! [`ToleranceConfig`].

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    /// Relative magnitude below which a quantity counts as zero.
    pub zero_tol: f64,
    /// Eigenvalue floor for positive-semidefinite checks.
    pub psd_tol: f64,
    /// Singular-value threshold, relative to the largest one, for numerical rank.
    pub rank_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            zero_tol: 1e-12,
            psd_tol: 1e-10,
            rank_tol: 1e-9,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("zero_tol", self.zero_tol),
            ("psd_tol", self.psd_tol),
            ("rank_tol", self.rank_tol),
        ] {
            if !(v > 0.0 && v < 1e-3) {
                return Err(Error::Config(format!("{name} must lie in (0, 1e-3), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Real eigenvalues, descending.
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the matching eigenvectors.
    pub vectors: ComplexMatrix,
}

#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: ComplexMatrix,
    /// Descending, non-negative, length `k`.
    pub singular_values: Vec<f64>,
    /// `cols × k` with orthonormal columns; `A = U diag(s) V^H`.
    pub v: ComplexMatrix,
}

pub fn check_finite(a: &ComplexMatrix, what: &str) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        contract(format!("{what} has non-finite entries"))
    }
}

pub fn fro_norm_sq(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn fro_norm(a: &ComplexMatrix) -> f64 {
    fro_norm_sq(a).sqrt()
}

pub fn is_hermitian(a: &ComplexMatrix, tol: &ToleranceConfig) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = fro_norm(a);
    let skew = fro_norm(&(a - a.adjoint()));
    skew <= tol.zero_tol * scale.max(f64::MIN_POSITIVE)
}

fn symmetrize(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()).scale(0.5)
}

fn ensure_hermitian(a: &ComplexMatrix, tol: &ToleranceConfig, what: &str) -> Result<()> {
    if !a.is_square() {
        return contract(format!("{what} must be square, got {}x{}", a.nrows(), a.ncols()));
    }
    if !is_hermitian(a, tol) {
        return contract(format!("{what} is not Hermitian"));
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending.
pub fn hermitian_eig(a: &ComplexMatrix) -> Result<HermitianEig> {
    hermitian_eig_with(a, &ToleranceConfig::default())
}

pub fn hermitian_eig_with(a: &ComplexMatrix, tol: &ToleranceConfig) -> Result<HermitianEig> {
    check_finite(a, "hermitian_eig input")?;
    ensure_hermitian(a, tol, "hermitian_eig input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(HermitianEig {
            values: Vec::new(),
            vectors: ComplexMatrix::zeros(0, 0),
        });
    }
    let eig = symmetrize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEig { values, vectors })
}

/// Thin SVD with singular values sorted descending.
pub fn svd(a: &ComplexMatrix) -> Result<Svd> {
    check_finite(a, "svd input")?;
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(Svd {
            u: ComplexMatrix::zeros(rows, 0),
            singular_values: Vec::new(),
            v: ComplexMatrix::zeros(cols, 0),
        });
    }
    let dec = a.clone().svd(true, true);
    let u_raw = dec
        .u
        .ok_or_else(|| Error::Decomposition("svd did not return U".into()))?;
    let vt_raw = dec
        .v_t
        .ok_or_else(|| Error::Decomposition("svd did not return V^H".into()))?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));
    let singular_values = order.iter().map(|&i| dec.singular_values[i].max(0.0)).collect();
    let u = ComplexMatrix::from_fn(rows, k, |r, c| u_raw[(r, order[c])]);
    let v = ComplexMatrix::from_fn(cols, k, |r, c| vt_raw[(order[c], r)].conj());
    Ok(Svd {
        u,
        singular_values,
        v,
    })
}

fn cholesky(a: &ComplexMatrix, tol: &ToleranceConfig, what: &str) -> Result<Cholesky<C64, nalgebra::Dyn>> {
    check_finite(a, what)?;
    ensure_hermitian(a, tol, what)?;
    let not_pd = || Error::Decomposition(format!("{what} is not positive definite"));
    let chol = Cholesky::new(symmetrize(a)).ok_or_else(not_pd)?;
    // complex Cholesky happily takes square roots of negative pivots
    let l = chol.l_dirty();
    for i in 0..a.nrows() {
        let d = l[(i, i)];
        if !(d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re) {
            return Err(not_pd());
        }
    }
    Ok(chol)
}

/// Solves `A X = B` for Hermitian positive-definite `A` through a Cholesky factorization.
pub fn hpd_solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.nrows() != b.nrows() {
        return contract(format!(
            "hpd_solve: A is {}x{} but B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        ));
    }
    check_finite(b, "hpd_solve right-hand side")?;
    let chol = cholesky(a, &ToleranceConfig::default(), "hpd_solve matrix")?;
    Ok(chol.solve(b))
}

/// `log2 det(A)` for Hermitian positive-definite `A`.
pub fn log2_det_hpd(a: &ComplexMatrix) -> Result<f64> {
    let chol = cholesky(a, &ToleranceConfig::default(), "log-det argument")?;
    let l = chol.l_dirty();
    let ln: f64 = (0..a.nrows()).map(|i| l[(i, i)].re.ln()).sum();
    Ok(2.0 * ln / std::f64::consts::LN_2)
}

/// Factor `F` with `Q = F F^H`, namely `U_Q Σ_Q^{1/2}`; negative eigenvalues are clipped to zero.
pub fn psd_sqrt_factor(q: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(q)?;
    let n = q.nrows();
    Ok(ComplexMatrix::from_fn(n, n, |r, c| {
        eig.vectors[(r, c)] * eig.values[c].max(0.0).sqrt()
    }))
}

/// Numerical rank from a descending singular-value list.
pub fn numerical_rank(singular_values: &[f64], tol: &ToleranceConfig) -> usize {
    let Some(&top) = singular_values.first() else {
        return 0;
    };
    if top <= 0.0 {
        return 0;
    }
    singular_values
        .iter()
        .filter(|&&s| s > tol.rank_tol * top)
        .count()
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

/// Unit-modulus complex number `e^{j·phase}`.
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// `arg(z)` with `arg(0) = 0`.
pub fn arg0(z: C64) -> f64 {
    if z == ZERO {
        0.0
    } else {
        z.arg()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(r, c, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn rel_err(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
        fro_norm(&(a - b)) / fro_norm(b).max(1e-300)
    }

    #[test]
    fn tolerance_bounds() {
        ToleranceConfig::default().validate().unwrap();
        let bad = ToleranceConfig {
            zero_tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ToleranceConfig {
            rank_tol: 1e-2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = hermitian_eig(&identity(2)).unwrap();
        assert_eq!(e.values.len(), 2);
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);

        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(3.0, 0.0),
        ]));
        let e = hermitian_eig(&d).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        // eigenvector for 3 is the second standard basis vector, up to phase
        assert!((e.vectors[(1, 0)].norm() - 1.0).abs() < 1e-12);
        assert!(e.vectors[(0, 0)].norm() < 1e-12);
    }

    #[test]
    fn eig_rejects_bad_input() {
        let rect = ComplexMatrix::zeros(2, 3);
        assert!(matches!(hermitian_eig(&rect), Err(Error::Contract(_))));
        let mut nh = identity(2);
        nh[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(hermitian_eig(&nh), Err(Error::Contract(_))));
    }

    #[test]
    fn factorizations_reconstruct_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let n = 1 + trial % 8;
            let m = 1 + (trial / 8) % 8;
            let c = random_matrix(&mut rng, n, n);
            let h = &c + c.adjoint();
            let e = hermitian_eig(&h).unwrap();
            let rebuilt = &e.vectors
                * ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(
                    n,
                    e.values.iter().map(|&v| C64::new(v, 0.0)),
                ))
                * e.vectors.adjoint();
            assert!(rel_err(&rebuilt, &h) < 1e-10);
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));

            let a = random_matrix(&mut rng, n, m);
            let s = svd(&a).unwrap();
            let k = n.min(m);
            let sig = ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(
                k,
                s.singular_values.iter().map(|&v| C64::new(v, 0.0)),
            ));
            let rebuilt = &s.u * sig * s.v.adjoint();
            assert!(rel_err(&rebuilt, &a) < 1e-10);
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.singular_values.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn svd_zero_and_rank_one() {
        let s = svd(&ComplexMatrix::zeros(3, 2)).unwrap();
        assert!(s.singular_values.iter().all(|&v| v == 0.0));

        let u = ComplexVector::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
        let v = ComplexVector::from_vec(vec![
            C64::new(0.0, 1.0) / 3f64.sqrt(),
            C64::new(1.0, 0.0) / 3f64.sqrt(),
            C64::new(-1.0, 0.0) / 3f64.sqrt(),
        ]);
        let a = &u * v.adjoint();
        let s = svd(&a).unwrap();
        assert!((s.singular_values[0] - 1.0).abs() < 1e-12);
        assert!(s.singular_values[1].abs() < 1e-12);
        assert_eq!(numerical_rank(&s.singular_values, &ToleranceConfig::default()), 1);
    }

    #[test]
    fn top_singular_value_matches_random_probes() {
        // Random-probe oracle: max |x^H A y| over unit x, y approaches σ_max from
        // below. Probes are refined by a few alternating power steps.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 4, 4);
        let smax = svd(&a).unwrap().singular_values[0];
        let mut best: f64 = 0.0;
        for _ in 0..10_000 {
            let mut y = random_matrix(&mut rng, 4, 1);
            y /= C64::new(fro_norm(&y), 0.0);
            let mut x = &a * &y;
            x /= C64::new(fro_norm(&x), 0.0);
            for _ in 0..2 {
                y = a.adjoint() * &x;
                y /= C64::new(fro_norm(&y), 0.0);
                x = &a * &y;
                x /= C64::new(fro_norm(&x), 0.0);
            }
            let val = (x.adjoint() * &a * &y)[(0, 0)].norm();
            best = best.max(val);
        }
        assert!(best <= smax + 1e-12);
        assert!((smax - best).abs() < 1e-3, "sigma_max {smax}, probe best {best}");
    }

    #[test]
    fn hpd_solve_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_matrix(&mut rng, 3, 2);
        let x = hpd_solve(&identity(3), &b).unwrap();
        assert!(rel_err(&x, &b) < 1e-15);

        let x = hpd_solve(&identity(3).scale(2.0), &identity(3)).unwrap();
        assert!(rel_err(&x, &identity(3).scale(0.5)) < 1e-15);

        for _ in 0..100 {
            let c = random_matrix(&mut rng, 5, 5);
            let a = &c * c.adjoint() + identity(5);
            let b = random_matrix(&mut rng, 5, 3);
            let x = hpd_solve(&a, &b).unwrap();
            assert!(rel_err(&(&a * &x), &b) < 1e-10);
        }

        let neg = identity(2).scale(-1.0);
        assert!(matches!(
            hpd_solve(&neg, &identity(2)),
            Err(Error::Decomposition(_))
        ));
    }

    #[test]
    fn log_det_matches_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_matrix(&mut rng, 4, 4);
        let a = &c * c.adjoint() + identity(4);
        let e = hermitian_eig(&a).unwrap();
        let expected: f64 = e.values.iter().map(|v| v.log2()).sum();
        assert!((log2_det_hpd(&a).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn sqrt_factor_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = random_matrix(&mut rng, 3, 2);
        let q = &c * c.adjoint();
        let f = psd_sqrt_factor(&q).unwrap();
        assert!(rel_err(&(&f * f.adjoint()), &q) < 1e-10);
    }
}
