use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{fro_norm, ComplexMatrix, ComplexVector, C64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cmat<R: Rng>(rng: &mut R, r: usize, c: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(r, c, |_, _| {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    })
}

pub fn unit_vec<R: Rng>(rng: &mut R, n: usize) -> ComplexVector {
    ComplexVector::from_fn(n, |_, _| crate::numerics::cis(rng.random::<f64>() * std::f64::consts::TAU))
}

/// Random PSD matrix with trace `p`.
pub fn psd<R: Rng>(rng: &mut R, n: usize, p: f64) -> ComplexMatrix {
    let g = cmat(rng, n, n);
    let q = &g * g.adjoint();
    let tr = q.trace().re;
    q.scale(p / tr)
}

pub fn rel_err(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    fro_norm(&(a - b)) / fro_norm(b).max(f64::MIN_POSITIVE)
}
