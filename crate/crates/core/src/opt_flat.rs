//! Alternating optimization of the reflection coefficients and transmit
//! covariance for frequency-flat channels.
//!
//! Each outer iteration sweeps `m = 1..M`, replacing `α_m` by the closed-form
//! maximizer of the rank-one subproblem, and then re-solves `Q` by
//! water-filling on the updated effective channel.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::channel::FlatChannelSet;
use crate::error::{config, Result};
use crate::mimo::{capacity, effective_channel, waterfill, Covariance, Reflection};
use crate::numerics::{
    cis, hpd_solve, identity, log2_det_hpd, psd_sqrt_factor, ComplexMatrix, ComplexVector,
    ToleranceConfig, C64, ONE,
};
use crate::seed::{stream_rng, RESTART_STREAM};

/// `H' = H U_Q Σ_Q^{1/2}` and `T' = T U_Q Σ_Q^{1/2}` (row `m` of `T'` is `t'_m^H`).
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedChannels {
    pub h_prime: ComplexMatrix,
    pub t_prime: ComplexMatrix,
}

pub fn transformed_channels(ch: &FlatChannelSet, q: &ComplexMatrix) -> Result<TransformedChannels> {
    let f = psd_sqrt_factor(q)?;
    Ok(TransformedChannels {
        h_prime: &ch.h * &f,
        t_prime: &ch.t * &f,
    })
}

/// `f_m(α) = log2 det(A_m + α B_m + α* B_m^H)`.
#[derive(Debug, Clone)]
pub struct RankOneSubproblem {
    pub a: ComplexMatrix,
    pub b: ComplexMatrix,
    /// `tr(A_m⁻¹ B_m)`, the only possibly-nonzero eigenvalue of `A_m⁻¹ B_m`.
    pub lambda: C64,
    pub diagonalizable: bool,
}

impl RankOneSubproblem {
    pub fn value(&self, alpha: C64) -> Result<f64> {
        let s = &self.a + &self.b * alpha + self.b.adjoint() * alpha.conj();
        log2_det_hpd(&s)
    }
}

/// Sum `H' + Σ_{i≠m} α_i r_i t'_i^H`.
fn partial_sum(m: usize, tc: &TransformedChannels, ch: &FlatChannelSet, refl: &Reflection) -> ComplexMatrix {
    let mut g = tc.h_prime.clone();
    for i in (0..ch.m()).filter(|&i| i != m) {
        g += (ch.r.column(i) * tc.t_prime.row(i)) * refl.alphas[i];
    }
    g
}

/// Core of the subproblem built from `G = H' + Σ_{i≠m} α_i r_i t'_i^H`.
///
/// Returns `(A_m, λ_m, ‖A_m⁻¹ B_m‖_F)` without forming `B_m`.
fn subproblem_scalars(
    g: &ComplexMatrix,
    r_m: &ComplexVector,
    t_row: &ComplexMatrix,
    sigma2: f64,
) -> Result<(ComplexMatrix, C64, f64)> {
    let nr = g.nrows();
    let tt = t_row.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let a = identity(nr) + (g * g.adjoint()).unscale(sigma2) + (r_m * r_m.adjoint()).scale(tt / sigma2);
    let x = hpd_solve(&a, &ComplexMatrix::from_column_slice(nr, 1, r_m.as_slice()))?;
    // w = G t'_m
    let w = g * t_row.adjoint();
    let lambda = (w.adjoint() * &x)[(0, 0)] / sigma2;
    let norm = x.norm() * w.norm() / sigma2;
    Ok((a, lambda, norm))
}

pub fn build_subproblem(
    m: usize,
    tc: &TransformedChannels,
    ch: &FlatChannelSet,
    refl: &Reflection,
    sigma2: f64,
    tol: &ToleranceConfig,
) -> Result<RankOneSubproblem> {
    let g = partial_sum(m, tc, ch, refl);
    let r_m: ComplexVector = ch.r.column(m).into_owned();
    let t_row: ComplexMatrix = tc.t_prime.rows(m, 1).into_owned();
    let (a, lambda, norm) = subproblem_scalars(&g, &r_m, &t_row, sigma2)?;
    let b = (&r_m * &t_row * g.adjoint()).unscale(sigma2);
    Ok(RankOneSubproblem {
        a,
        b,
        lambda,
        diagonalizable: lambda.norm() > tol.zero_tol * norm,
    })
}

fn closed_form(lambda: C64, diagonalizable: bool) -> C64 {
    if diagonalizable {
        cis(-lambda.arg())
    } else {
        ONE
    }
}

/// `α_m* = e^{−j arg λ_m}`, or 1 when `A_m⁻¹ B_m` is nilpotent (any phase is optimal).
pub fn solve_subproblem(sp: &RankOneSubproblem) -> C64 {
    closed_form(sp.lambda, sp.diagonalizable)
}

/// Achievable rate for reflection `refl` and covariance `q`.
pub fn objective(ch: &FlatChannelSet, refl: &Reflection, q: &ComplexMatrix, sigma2: f64) -> Result<f64> {
    capacity(&effective_channel(ch, refl)?, q, sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    /// Number of random initial reflection vectors.
    pub restarts: usize,
    /// Stop when the relative increase of the objective over one outer iteration drops below this.
    pub epsilon: f64,
    pub max_outer_iters: usize,
    pub seed: u64,
    pub tolerances: ToleranceConfig,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            epsilon: 1e-5,
            max_outer_iters: 200,
            seed: 0,
            tolerances: ToleranceConfig::default(),
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return config("algorithm.restarts must be at least 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return config(format!("algorithm.epsilon must be positive, got {}", self.epsilon));
        }
        if self.max_outer_iters == 0 {
            return config("algorithm.max_outer_iters must be at least 1");
        }
        self.tolerances.validate()
    }
}

/// Optimizer output.
#[derive(Debug, Clone, PartialEq)]
pub struct OptReport<Q = Covariance> {
    pub reflection: Reflection,
    pub covariance: Q,
    /// Final achievable rate (bits/s/Hz).
    pub rate: f64,
    /// Objective after initialization followed by its value after each outer iteration.
    pub rate_trace: Vec<f64>,
    /// Objective after every single-variable update, in order.
    pub step_trace: Vec<f64>,
    pub outer_iters: usize,
    pub restarts_evaluated: usize,
    pub elapsed: Duration,
}

fn relative_increment(new: f64, old: f64) -> f64 {
    if old.abs() > 0.0 {
        (new - old) / old.abs()
    } else if new > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// One sweep `m = 1..M` of closed-form coefficient updates for a fixed covariance.
///
/// Returns the objective after each update.
fn alpha_sweep(
    ch: &FlatChannelSet,
    refl: &mut Reflection,
    q: &ComplexMatrix,
    sigma2: f64,
    tol: &ToleranceConfig,
) -> Result<Vec<f64>> {
    let tc = transformed_channels(ch, q)?;
    let nr = ch.nr();
    let mut s = tc.h_prime.clone();
    for i in 0..ch.m() {
        s += (ch.r.column(i) * tc.t_prime.row(i)) * refl.alphas[i];
    }
    let mut steps = Vec::with_capacity(ch.m());
    for m in 0..ch.m() {
        let r_m: ComplexVector = ch.r.column(m).into_owned();
        let t_row: ComplexMatrix = tc.t_prime.rows(m, 1).into_owned();
        let term = &r_m * &t_row;
        let g = &s - &term * refl.alphas[m];
        let (_, lambda, norm) = subproblem_scalars(&g, &r_m, &t_row, sigma2)?;
        let alpha = closed_form(lambda, lambda.norm() > tol.zero_tol * norm);
        refl.alphas[m] = alpha;
        s = g + term * alpha;
        let a = identity(nr) + (&s * s.adjoint()).unscale(sigma2);
        steps.push(log2_det_hpd(&a)?.max(0.0));
    }
    Ok(steps)
}

#[derive(Clone, Copy)]
enum CovarianceMode<'a> {
    WaterFill(f64),
    Fixed(&'a Covariance),
}

fn covariance_for(ch: &FlatChannelSet, refl: &Reflection, sigma2: f64, mode: CovarianceMode) -> Result<(Covariance, f64)> {
    let h = effective_channel(ch, refl)?;
    match mode {
        CovarianceMode::WaterFill(p) => {
            let w = waterfill(&h, p, sigma2)?;
            Ok((w.covariance, w.rate))
        }
        CovarianceMode::Fixed(q) => Ok((q.clone(), capacity(&h, &q.q, sigma2)?)),
    }
}

fn run(ch: &FlatChannelSet, sigma2: f64, cfg: &AlgoConfig, mode: CovarianceMode) -> Result<OptReport> {
    cfg.validate()?;
    let start = Instant::now();
    let m = ch.m();
    let mut rng = stream_rng(cfg.seed, RESTART_STREAM);
    let restarts = if m == 0 { 1 } else { cfg.restarts };
    let mut best: Option<(Reflection, Covariance, f64)> = None;
    for _ in 0..restarts {
        let refl = Reflection::random(m, &mut rng);
        let (cov, rate) = covariance_for(ch, &refl, sigma2, mode)?;
        if best.as_ref().is_none_or(|b| rate > b.2) {
            best = Some((refl, cov, rate));
        }
    }
    let (mut refl, mut cov, mut rate) = best.expect("at least one restart");
    let mut rate_trace = vec![rate];
    let mut step_trace = vec![rate];
    let mut outer_iters = if m == 0 { 1 } else { 0 };
    while m > 0 && outer_iters < cfg.max_outer_iters {
        outer_iters += 1;
        step_trace.extend(alpha_sweep(ch, &mut refl, &cov.q, sigma2, &cfg.tolerances)?);
        let (new_cov, new_rate) = covariance_for(ch, &refl, sigma2, mode)?;
        step_trace.push(new_rate);
        rate_trace.push(new_rate);
        let inc = relative_increment(new_rate, rate);
        cov = new_cov;
        rate = new_rate;
        if inc < cfg.epsilon {
            break;
        }
    }
    Ok(OptReport {
        reflection: refl,
        covariance: cov,
        rate,
        rate_trace,
        step_trace,
        outer_iters,
        restarts_evaluated: restarts,
        elapsed: start.elapsed(),
    })
}

/// Jointly optimizes `{α_m}` and `Q` under `tr(Q) ≤ P`.
pub fn optimize(ch: &FlatChannelSet, p: f64, sigma2: f64, cfg: &AlgoConfig) -> Result<OptReport> {
    run(ch, sigma2, cfg, CovarianceMode::WaterFill(p))
}

/// The same coefficient sweeps with the covariance held at `q`.
pub fn optimize_fixed_q(ch: &FlatChannelSet, q: &Covariance, sigma2: f64, cfg: &AlgoConfig) -> Result<OptReport> {
    run(ch, sigma2, cfg, CovarianceMode::Fixed(q))
}
