//! Effective channel, capacity, water-filling and channel diagnostics.

use rand::Rng;

use crate::channel::FlatChannelSet;
use crate::error::{config, contract, Result};
use crate::numerics::{
    cis, hermitian_eig_with, identity, is_hermitian, log2_det_hpd, numerical_rank, svd, ComplexMatrix,
    ComplexVector, ToleranceConfig, ONE,
};

/// Reflection coefficients `α_1..α_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflection {
    pub alphas: ComplexVector,
}

impl Reflection {
    pub fn new(alphas: ComplexVector) -> Self {
        Self { alphas }
    }

    pub fn ones(m: usize) -> Self {
        Self::new(ComplexVector::from_element(m, ONE))
    }

    pub fn from_phases(phases: &[f64]) -> Self {
        Self::new(ComplexVector::from_iterator(phases.len(), phases.iter().map(|&p| cis(p))))
    }

    /// Independent phases uniform on `[0, 2π)`.
    pub fn random<R: Rng>(m: usize, rng: &mut R) -> Self {
        Self::new(ComplexVector::from_fn(m, |_, _| {
            cis(rng.random::<f64>() * std::f64::consts::TAU)
        }))
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.alphas.iter().map(|a| a.arg()).collect()
    }

    pub fn is_unit_modulus(&self, tol: f64) -> bool {
        self.alphas.iter().all(|a| (a.norm() - 1.0).abs() <= tol)
    }

    pub fn max_modulus(&self) -> f64 {
        self.alphas.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    /// Projects every coefficient onto the unit circle, `α/|α|`; zero maps to 1.
    pub fn normalized(&self) -> Self {
        Self::new(self.alphas.map(|a| {
            let r = a.norm();
            if r > 0.0 {
                a / r
            } else {
                ONE
            }
        }))
    }
}

/// Transmit covariance with its trace budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub q: ComplexMatrix,
    pub budget: f64,
}

impl Covariance {
    pub fn new(q: ComplexMatrix, budget: f64, tol: &ToleranceConfig) -> Result<Self> {
        let cov = Self { q, budget };
        cov.validate(tol)?;
        Ok(cov)
    }

    pub fn zero(nt: usize, budget: f64) -> Self {
        Self {
            q: ComplexMatrix::zeros(nt, nt),
            budget,
        }
    }

    /// `(P/N_t) I`.
    pub fn isotropic(nt: usize, budget: f64) -> Self {
        Self {
            q: identity(nt).scale(budget / nt as f64),
            budget,
        }
    }

    pub fn trace(&self) -> f64 {
        self.q.trace().re
    }

    pub fn validate(&self, tol: &ToleranceConfig) -> Result<()> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return contract(format!("covariance budget must be non-negative, got {}", self.budget));
        }
        if !is_hermitian(&self.q, tol) {
            return contract("covariance is not Hermitian");
        }
        let eig = hermitian_eig_with(&self.q, tol)?;
        let floor = -tol.psd_tol * self.budget.max(1.0);
        if eig.values.iter().any(|&v| v < floor) {
            return contract("covariance is not positive semidefinite");
        }
        if self.trace() > self.budget * (1.0 + 1e-9) {
            return contract(format!(
                "covariance trace {} exceeds budget {}",
                self.trace(),
                self.budget
            ));
        }
        Ok(())
    }
}

/// `H + Σ_m α_m r_m t_m^H`.
pub fn effective_channel(ch: &FlatChannelSet, refl: &Reflection) -> Result<ComplexMatrix> {
    if refl.len() != ch.m() {
        return contract(format!(
            "reflection has {} coefficients but the surface has {} elements",
            refl.len(),
            ch.m()
        ));
    }
    if ch.m() == 0 {
        return Ok(ch.h.clone());
    }
    let mut scaled = ch.r.clone();
    for (m, a) in refl.alphas.iter().enumerate() {
        let mut col = scaled.column_mut(m);
        col *= *a;
    }
    Ok(&ch.h + scaled * &ch.t)
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return config(format!("noise power must be positive, got {sigma2}"));
    }
    Ok(())
}

/// `log2 det(I + H̃ Q H̃^H / σ²)` in bits/s/Hz.
pub fn capacity(h_tilde: &ComplexMatrix, q: &ComplexMatrix, sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    if q.nrows() != h_tilde.ncols() || !q.is_square() {
        return contract(format!(
            "covariance is {}x{} but the channel has {} columns",
            q.nrows(),
            q.ncols(),
            h_tilde.ncols()
        ));
    }
    let nr = h_tilde.nrows();
    let gram = h_tilde * q * h_tilde.adjoint();
    let a = identity(nr) + gram.unscale(sigma2);
    Ok(log2_det_hpd(&a)?.max(0.0))
}

/// Optimal powers over parallel channels with SNR gains `g_i` (gain × power = SNR).
///
/// Solves `p_i = max(μ − 1/g_i, 0)`, `Σ p_i = total`, exactly via the active-set form
/// of the water level.
pub fn waterfill_gains(gains: &[f64], total: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut powers = vec![0.0; gains.len()];
    if order.is_empty() || total <= 0.0 {
        return powers;
    }
    let mut inv_sum = 0.0;
    let mut level = 0.0;
    let mut active = 0;
    for (k, &i) in order.iter().enumerate() {
        let inv = 1.0 / gains[i];
        let candidate = (total + inv_sum + inv) / (k + 1) as f64;
        if candidate <= inv {
            break;
        }
        inv_sum += inv;
        level = candidate;
        active = k + 1;
    }
    for &i in &order[..active] {
        powers[i] = (level - 1.0 / gains[i]).max(0.0);
    }
    // remove rounding drift so the budget is met to machine precision
    let sum: f64 = powers.iter().sum();
    if sum > 0.0 {
        for p in &mut powers {
            *p *= total / sum;
        }
    }
    powers
}

/// Water level `μ = 1/p_0` matching [`waterfill_gains`].
pub fn water_level(gains: &[f64], powers: &[f64]) -> Option<f64> {
    gains
        .iter()
        .zip(powers)
        .find(|(_, &p)| p > 0.0)
        .map(|(&g, &p)| p + 1.0 / g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waterfill {
    pub covariance: Covariance,
    pub rate: f64,
    /// Power per right singular vector of `H̃`, in descending singular-value order.
    pub powers: Vec<f64>,
    pub singular_values: Vec<f64>,
}

/// Capacity-achieving covariance for a fixed channel under `tr(Q) ≤ P`.
///
/// An all-zero channel yields `Q = 0` and zero rate.
pub fn waterfill(h_tilde: &ComplexMatrix, p: f64, sigma2: f64) -> Result<Waterfill> {
    check_sigma2(sigma2)?;
    if !(p >= 0.0 && p.is_finite()) {
        return config(format!("power budget must be non-negative, got {p}"));
    }
    let nt = h_tilde.ncols();
    let s = svd(h_tilde)?;
    let gains: Vec<f64> = s.singular_values.iter().map(|&v| v * v / sigma2).collect();
    let powers = waterfill_gains(&gains, p);
    let mut q = ComplexMatrix::zeros(nt, nt);
    for (i, &pi) in powers.iter().enumerate() {
        if pi > 0.0 {
            let v = s.v.column(i);
            q += (v * v.adjoint()).scale(pi);
        }
    }
    let rate = gains
        .iter()
        .zip(&powers)
        .map(|(g, p)| (g * p).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2;
    Ok(Waterfill {
        covariance: Covariance { q, budget: p },
        rate,
        powers,
        singular_values: s.singular_values,
    })
}

/// Diagnostics of an effective channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMetrics {
    /// `‖H̃‖_F²`.
    pub total_power: f64,
    pub rank: usize,
    /// `σ_max/σ_min` over the `min(N_t, N_r)` singular values; infinite when rank-deficient to zero.
    pub condition_number: f64,
    /// `σ_max²`.
    pub strongest_eigenchannel_power: f64,
}

pub fn channel_metrics(h_tilde: &ComplexMatrix, tol: &ToleranceConfig) -> Result<ChannelMetrics> {
    let s = svd(h_tilde)?;
    let sv = &s.singular_values;
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = sv.last().copied().unwrap_or(0.0);
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    Ok(ChannelMetrics {
        total_power: crate::numerics::fro_norm_sq(h_tilde),
        rank: numerical_rank(sv, tol),
        condition_number,
        strongest_eigenchannel_power: smax * smax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fro_norm, fro_norm_sq, C64};
    use crate::testutil::{cmat, psd, rel_err, rng, unit_vec};
    use proptest::prelude::*;

    fn random_set(seed: u64, nt: usize, nr: usize, m: usize) -> FlatChannelSet {
        let mut g = rng(seed);
        FlatChannelSet::new(cmat(&mut g, nr, nt), cmat(&mut g, m, nt), cmat(&mut g, nr, m)).unwrap()
    }

    #[test]
    fn effective_channel_cases() {
        let ch = random_set(1, 3, 2, 5);
        let zero = Reflection::new(ComplexVector::zeros(5));
        assert_eq!(effective_channel(&ch, &zero).unwrap(), ch.h);
        let bare = ch.without_surface();
        assert_eq!(effective_channel(&bare, &Reflection::ones(0)).unwrap(), ch.h);
        assert!(effective_channel(&ch, &Reflection::ones(4)).is_err());

        for seed in 0..20 {
            let ch = random_set(seed, 4, 3, 7);
            let refl = Reflection::new(unit_vec(&mut rng(seed + 100), 7));
            let mut sum = ch.h.clone();
            for m in 0..7 {
                sum += (ch.r.column(m) * ch.t.row(m)) * refl.alphas[m];
            }
            let fast = effective_channel(&ch, &refl).unwrap();
            assert!(fro_norm(&(fast - sum)) < 1e-12);
        }
    }

    #[test]
    fn capacity_cases() {
        let h = cmat(&mut rng(2), 3, 3);
        assert_eq!(capacity(&h, &ComplexMatrix::zeros(3, 3), 1.0).unwrap(), 0.0);
        let (p, s2) = (3.0, 0.7);
        let c = capacity(&identity(2), &identity(2).scale(p / 2.0), s2).unwrap();
        assert!((c - 2.0 * (1.0 + p / (2.0 * s2)).log2()).abs() < 1e-12);
        assert!(matches!(capacity(&h, &identity(3), 0.0), Err(crate::Error::Config(_))));
        assert!(matches!(capacity(&h, &identity(3), -1.0), Err(crate::Error::Config(_))));
    }

    #[test]
    fn capacity_matches_eigenmode_route() {
        for seed in 0..50 {
            let mut g = rng(seed);
            let h = cmat(&mut g, 3, 3);
            let s = svd(&h).unwrap();
            let p: Vec<f64> = (0..3).map(|_| g.random::<f64>()).collect();
            let mut q = ComplexMatrix::zeros(3, 3);
            for (i, &pi) in p.iter().enumerate() {
                q += (s.v.column(i) * s.v.column(i).adjoint()).scale(pi);
            }
            let s2 = 0.3;
            let route: f64 = (0..3)
                .map(|i| (1.0 + s.singular_values[i].powi(2) * p[i] / s2).log2())
                .sum();
            assert!((capacity(&h, &q, s2).unwrap() - route).abs() < 1e-10);
        }
    }

    #[test]
    fn waterfill_trivial_cases() {
        let u = ComplexVector::from_vec(vec![ONE, ONE]).unscale(2f64.sqrt());
        let v = ComplexVector::from_vec(vec![ONE, C64::new(0.0, 1.0), ONE]).unscale(3f64.sqrt());
        let h = (&u * v.adjoint()).scale(2.0);
        let w = waterfill(&h, 5.0, 0.5).unwrap();
        assert!((w.powers[0] - 5.0).abs() < 1e-12);
        assert!((w.rate - (1.0 + 4.0 * 5.0 / 0.5f64).log2()).abs() < 1e-10);

        let h = identity(2).scale(1.3);
        let w = waterfill(&h, 4.0, 1.0).unwrap();
        assert!((w.powers[0] - 2.0).abs() < 1e-12 && (w.powers[1] - 2.0).abs() < 1e-12);

        let w = waterfill(&ComplexMatrix::zeros(3, 2), 4.0, 1.0).unwrap();
        assert_eq!(w.rate, 0.0);
        assert_eq!(w.covariance.q, ComplexMatrix::zeros(2, 2));
    }

    #[test]
    fn waterfill_beats_random_psd_grid() {
        let mut g = rng(11);
        let h = cmat(&mut g, 4, 4);
        let (p, s2) = (2.0, 0.1);
        let w = waterfill(&h, p, s2).unwrap();
        assert!((capacity(&h, &w.covariance.q, s2).unwrap() - w.rate).abs() < 1e-10);
        for _ in 0..100_000 {
            let q = psd(&mut g, 4, p);
            assert!(capacity(&h, &q, s2).unwrap() <= w.rate + 1e-12);
        }
    }

    #[test]
    fn metrics_cases() {
        let tol = ToleranceConfig::default();
        let m = channel_metrics(&identity(3), &tol).unwrap();
        assert_eq!(m.rank, 3);
        assert!((m.condition_number - 1.0).abs() < 1e-14);
        assert!((m.total_power - 3.0).abs() < 1e-14);

        let mut g = rng(4);
        let u = cmat(&mut g, 4, 1);
        let v = cmat(&mut g, 3, 1);
        let h = &u * v.adjoint();
        let m = channel_metrics(&h, &tol).unwrap();
        assert_eq!(m.rank, 1);
        assert!((m.strongest_eigenchannel_power - m.total_power).abs() < 1e-12 * m.total_power);

        let h = cmat(&mut g, 4, 4);
        let m = channel_metrics(&h, &tol).unwrap();
        let s = svd(&h).unwrap();
        let sum: f64 = s.singular_values.iter().map(|v| v * v).sum();
        assert!((fro_norm_sq(&h) - sum).abs() < 1e-10 * sum);
        assert!(m.condition_number >= 1.0);
        assert!(m.strongest_eigenchannel_power <= m.total_power);
    }

    #[test]
    fn covariance_validation() {
        let tol = ToleranceConfig::default();
        assert!(Covariance::new(identity(2), 2.0, &tol).is_ok());
        assert!(Covariance::new(identity(2), 1.0, &tol).is_err());
        assert!(Covariance::new(identity(2).scale(-0.1), 1.0, &tol).is_err());
        assert!(Covariance::isotropic(4, 3.0).validate(&tol).is_ok());
    }

    #[test]
    fn reflection_helpers() {
        let r = Reflection::new(ComplexVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(0.0, 2.0)]));
        let n = r.normalized();
        assert_eq!(n.alphas[0], ONE);
        assert!((n.alphas[1] - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!(n.is_unit_modulus(1e-12));
        assert!(!r.is_unit_modulus(1e-9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn waterfill_kkt_and_budget(seed in any::<u64>(), nt in 1usize..6, nr in 1usize..6, p in 0.01f64..100.0, s2 in 0.001f64..10.0) {
            let h = cmat(&mut rng(seed), nr, nt);
            let w = waterfill(&h, p, s2).unwrap();
            let tr = w.covariance.trace();
            prop_assert!((tr - p).abs() <= 1e-9 * p);
            let gains: Vec<f64> = w.singular_values.iter().map(|v| v * v / s2).collect();
            let mu = water_level(&gains, &w.powers).unwrap();
            for (g, &pi) in gains.iter().zip(&w.powers) {
                if pi > 0.0 {
                    prop_assert!((mu - 1.0 / g - pi).abs() <= 1e-8 * p);
                } else {
                    prop_assert!(1.0 / g >= mu - 1e-8);
                }
            }
            prop_assert!(w.covariance.validate(&ToleranceConfig::default()).is_ok());
        }

        #[test]
        fn waterfill_rate_unitary_invariant(seed in any::<u64>(), n in 1usize..5) {
            let mut g = rng(seed);
            let h = cmat(&mut g, n, n);
            let qr = cmat(&mut g, n, n).qr();
            let u = qr.q();
            let a = waterfill(&h, 1.5, 0.2).unwrap().rate;
            let b = waterfill(&(&h * u), 1.5, 0.2).unwrap().rate;
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn effective_channel_forms_agree(seed in any::<u64>(), m in 0usize..12) {
            let ch = random_set(seed, 3, 2, m);
            let refl = Reflection::new(unit_vec(&mut rng(seed ^ 1), m));
            let d = ComplexMatrix::from_diagonal(&refl.alphas);
            let dense = &ch.h + &ch.r * d * &ch.t;
            prop_assert!(rel_err(&effective_channel(&ch, &refl).unwrap(), &dense) < 1e-12);
        }
    }
}
