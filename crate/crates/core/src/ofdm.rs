//! MIMO-OFDM extension: one reflection vector shared by all subcarriers,
//! one covariance per subcarrier under an average power budget.
//!
//! The unit-modulus constraint is relaxed to `|α_m| ≤ 1`, under which both
//! blocks of the alternating scheme are concave maximizations:
//! each `α_m` is solved over the unit disk and the covariances by projected
//! gradient ascent. The relaxed coefficients are finally projected back onto
//! the unit circle and the covariances re-solved by space-frequency
//! water-filling.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::asymptotic::heuristic_power_max;
use crate::channel::{FlatChannelSet, FreqChannelSet};
use crate::error::{config, contract, Result};
use crate::mimo::{effective_channel, waterfill_gains, Reflection};
use crate::numerics::{
    arg0, cis, hermitian_eig, hpd_solve, identity, log2_det_hpd, svd, ComplexMatrix, ComplexVector, C64,
};
use crate::opt_flat::{optimize, AlgoConfig, OptReport};
use crate::seed::{derive_seed, stream_rng, RESTART_STREAM};

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    /// Total number of subcarriers `N_f`.
    pub n_f: usize,
    /// Subcarriers allocated to the link, `N`.
    pub n: usize,
    /// Cyclic prefix length `μ`.
    pub mu: usize,
    /// Noise power per subcarrier (W).
    pub sigma_bar2: f64,
    /// Average transmit power per subcarrier (W).
    pub p: f64,
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n > 1 && self.n <= self.n_f) {
            return config(format!("ofdm: need 1 < N <= N_f, got N = {}, N_f = {}", self.n, self.n_f));
        }
        if !(self.sigma_bar2 > 0.0 && self.sigma_bar2.is_finite()) {
            return config("ofdm: noise power must be positive");
        }
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return config("ofdm: power budget must be non-negative");
        }
        Ok(())
    }

    pub fn prefactor(&self) -> f64 {
        self.n_f as f64 / (self.n_f + self.mu) as f64
    }

    /// Whether the cyclic prefix covers an effective impulse response of `l_max` taps.
    pub fn prefix_covers(&self, l_max: usize) -> bool {
        self.mu >= l_max
    }
}

/// `N_f/(N_f + μ) · (1/N) · sum_rate`.
pub fn ofdm_rate(sum_rate: f64, cfg: &OfdmConfig) -> f64 {
    cfg.prefactor() * sum_rate / cfg.n as f64
}

/// Per-subcarrier covariances with average-trace budget `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqCovariances {
    pub qs: Vec<ComplexMatrix>,
    pub budget: f64,
}

impl FreqCovariances {
    pub fn zeros(n: usize, nt: usize, budget: f64) -> Self {
        Self {
            qs: vec![ComplexMatrix::zeros(nt, nt); n],
            budget,
        }
    }

    pub fn average_trace(&self) -> f64 {
        self.qs.iter().map(|q| q.trace().re).sum::<f64>() / self.qs.len() as f64
    }
}

fn check_relaxed(refl: &Reflection) -> Result<()> {
    if refl.max_modulus() > 1.0 + 1e-9 {
        return contract(format!(
            "relaxed reflection needs |α_m| <= 1, got max modulus {}",
            refl.max_modulus()
        ));
    }
    Ok(())
}

/// `t_m^H Q t_m` for every `m`, i.e. `diag(T Q T^H)`.
fn quad_forms(t: &ComplexMatrix, q: &ComplexMatrix) -> Vec<f64> {
    let tq = t * q;
    (0..t.nrows())
        .map(|m| (tq.row(m) * t.row(m).adjoint())[(0, 0)].re.max(0.0))
        .collect()
}

/// `Σ_m w_m (t_m^H Q t_m) r_m r_m^H`.
fn leakage(sc: &FlatChannelSet, weights: &[f64], q: &ComplexMatrix) -> ComplexMatrix {
    let nr = sc.nr();
    let mut e = ComplexMatrix::zeros(nr, nr);
    if weights.iter().all(|&w| w == 0.0) {
        return e;
    }
    let qf = quad_forms(&sc.t, q);
    for (m, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            let r = sc.r.column(m);
            e += (r * r.adjoint()).scale(w * qf[m]);
        }
    }
    e
}

fn relaxation_weights(refl: &Reflection) -> Vec<f64> {
    refl.alphas.iter().map(|a| (1.0 - a.norm_sqr()).max(0.0)).collect()
}

/// Relaxed sum objective `Σ_n log2 det(I + (H̃[n]Q[n]H̃[n]^H + Σ_m (1−|α_m|²) r_m t_m^H Q t_m r_m^H)/σ̄²)`.
pub fn ofdm_objective(fc: &FreqChannelSet, refl: &Reflection, qs: &FreqCovariances, sigma_bar2: f64) -> Result<f64> {
    check_relaxed(refl)?;
    if qs.qs.len() != fc.n() {
        return contract(format!("{} covariances for {} subcarriers", qs.qs.len(), fc.n()));
    }
    let w = relaxation_weights(refl);
    let mut total = 0.0;
    for (sc, q) in fc.subcarriers.iter().zip(&qs.qs) {
        let h = effective_channel(sc, refl)?;
        let s = &h * q * h.adjoint() + leakage(sc, &w, q);
        total += log2_det_hpd(&(identity(sc.nr()) + s.unscale(sigma_bar2)))?.max(0.0);
    }
    Ok(total)
}

/// Space-frequency water-filling: one water level across every eigenmode of every
/// subcarrier, `Σ_n tr(Q[n]) = N P`. Returns the covariances and the sum rate.
pub fn space_frequency_waterfill(h_tilde: &[ComplexMatrix], p: f64, sigma_bar2: f64) -> Result<(FreqCovariances, f64)> {
    if sigma_bar2.is_nan() || sigma_bar2 <= 0.0 {
        return config("noise power must be positive");
    }
    let n = h_tilde.len();
    let svds = h_tilde.iter().map(svd).collect::<Result<Vec<_>>>()?;
    let gains: Vec<f64> = svds
        .iter()
        .flat_map(|s| s.singular_values.iter().map(|v| v * v / sigma_bar2))
        .collect();
    let powers = waterfill_gains(&gains, p * n as f64);
    let mut qs = Vec::with_capacity(n);
    let mut k = 0;
    for (h, s) in h_tilde.iter().zip(&svds) {
        let nt = h.ncols();
        let mut q = ComplexMatrix::zeros(nt, nt);
        for i in 0..s.singular_values.len() {
            if powers[k + i] > 0.0 {
                let v = s.v.column(i);
                q += (v * v.adjoint()).scale(powers[k + i]);
            }
        }
        k += s.singular_values.len();
        qs.push(q);
    }
    let rate = gains.iter().zip(&powers).map(|(g, p)| (g * p).ln_1p()).sum::<f64>() / LN2;
    Ok((FreqCovariances { qs, budget: p }, rate))
}

/// `H̃[n]` for every subcarrier.
pub fn effective_channels(fc: &FreqChannelSet, refl: &Reflection) -> Result<Vec<ComplexMatrix>> {
    fc.subcarriers.iter().map(|sc| effective_channel(sc, refl)).collect()
}

fn inner(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn norm_all(xs: &[ComplexMatrix]) -> f64 {
    xs.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

/// Euclidean projection of `v` onto `{x ≥ 0, Σx ≤ total}`.
fn project_capped_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= total {
        return clipped;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - total) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Projection onto `{X_n ⪰ 0, Σ_n tr X_n ≤ total}` in the Frobenius norm.
fn project_budget(xs: &[ComplexMatrix], total: f64) -> Result<Vec<ComplexMatrix>> {
    let eigs = xs
        .iter()
        .map(|x| hermitian_eig(&(x + x.adjoint()).scale(0.5)))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = eigs.iter().flat_map(|e| e.values.iter().copied()).collect();
    let proj = project_capped_simplex(&all, total);
    let mut out = Vec::with_capacity(xs.len());
    let mut k = 0;
    for e in &eigs {
        let n = e.values.len();
        let mut x = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            if proj[k + i] > 0.0 {
                let v = e.vectors.column(i);
                x += (v * v.adjoint()).scale(proj[k + i]);
            }
        }
        k += n;
        out.push(x);
    }
    Ok(out)
}

/// Concave covariance block in the normalized variables `X_n = Q_n / P`.
struct CovarianceProblem<'a> {
    h: Vec<ComplexMatrix>,
    r: Vec<ComplexMatrix>,
    t: Vec<&'a ComplexMatrix>,
    w: Vec<f64>,
    leaky: bool,
}

impl<'a> CovarianceProblem<'a> {
    fn new(fc: &'a FreqChannelSet, refl: &Reflection, p: f64, sigma_bar2: f64) -> Result<Self> {
        let g = (p / sigma_bar2).sqrt();
        let w = relaxation_weights(refl);
        Ok(Self {
            h: effective_channels(fc, refl)?.into_iter().map(|h| h.scale(g)).collect(),
            r: fc.subcarriers.iter().map(|sc| sc.r.scale(g)).collect(),
            t: fc.subcarriers.iter().map(|sc| &sc.t).collect(),
            leaky: w.iter().any(|&x| x > 0.0),
            w,
        })
    }

    fn matrix(&self, n: usize, x: &ComplexMatrix) -> ComplexMatrix {
        let h = &self.h[n];
        let mut s = identity(h.nrows()) + h * x * h.adjoint();
        if self.leaky {
            let qf = quad_forms(self.t[n], x);
            for (m, &w) in self.w.iter().enumerate() {
                if w > 0.0 {
                    let r = self.r[n].column(m);
                    s += (r * r.adjoint()).scale(w * qf[m]);
                }
            }
        }
        s
    }

    /// Objective in nats.
    fn value(&self, xs: &[ComplexMatrix]) -> Result<f64> {
        let mut v = 0.0;
        for (n, x) in xs.iter().enumerate() {
            v += log2_det_hpd(&self.matrix(n, x))? * LN2;
        }
        Ok(v)
    }

    fn value_and_grad(&self, xs: &[ComplexMatrix]) -> Result<(f64, Vec<ComplexMatrix>)> {
        let mut v = 0.0;
        let mut grads = Vec::with_capacity(xs.len());
        for (n, x) in xs.iter().enumerate() {
            let s = self.matrix(n, x);
            v += log2_det_hpd(&s)? * LN2;
            let winv = hpd_solve(&s, &identity(s.nrows()))?;
            let h = &self.h[n];
            let mut g = h.adjoint() * &winv * h;
            if self.leaky {
                let rw = self.r[n].adjoint() * &winv * &self.r[n];
                let t = self.t[n];
                for (m, &w) in self.w.iter().enumerate() {
                    if w > 0.0 {
                        let tm = t.row(m).adjoint();
                        g += (&tm * tm.adjoint()).scale(w * rw[(m, m)].re);
                    }
                }
            }
            grads.push((&g + g.adjoint()).scale(0.5));
        }
        Ok((v, grads))
    }
}

/// Outcome of the relaxed covariance solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedCovariances {
    pub covariances: FreqCovariances,
    /// Relaxed sum objective in bits/s/Hz.
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the stationarity test passed.
    pub converged: bool,
}

const Q_TOL: f64 = 1e-6;
const Q_MAX_ITERS: usize = 2000;

/// Scale-free stationarity measure `‖Π(X + τ∇) − X‖/‖X‖` with `τ = ‖X‖/‖∇‖`.
fn stationarity(xs: &[ComplexMatrix], g: &[ComplexMatrix], total: f64) -> Result<f64> {
    let nx = norm_all(xs);
    let ng = norm_all(g);
    if ng == 0.0 {
        return Ok(0.0);
    }
    let tau = nx.max(total * 1e-12) / ng;
    let trial: Vec<ComplexMatrix> = xs.iter().zip(g).map(|(x, gi)| x + gi.scale(tau)).collect();
    let p = project_budget(&trial, total)?;
    let d: f64 = p.iter().zip(xs).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
    Ok(d / nx.max(total * 1e-12))
}

/// Maximizes the relaxed objective over `{Q[n] ⪰ 0, (1/N)Σ tr Q[n] ≤ P}` for fixed `|α_m| ≤ 1`.
///
/// Starts from the better of space-frequency water-filling on `H̃[n]` and `warm` (if given),
/// then runs spectral projected gradient ascent with a monotone Armijo search.
pub fn solve_covariances_relaxed_from(
    fc: &FreqChannelSet,
    refl: &Reflection,
    cfg: &OfdmConfig,
    warm: Option<&FreqCovariances>,
) -> Result<RelaxedCovariances> {
    check_relaxed(refl)?;
    let n = fc.n();
    let total = n as f64;
    let hs = effective_channels(fc, refl)?;
    let (sfw, _) = space_frequency_waterfill(&hs, cfg.p, cfg.sigma_bar2)?;
    if cfg.p == 0.0 {
        return Ok(RelaxedCovariances {
            covariances: sfw,
            objective: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let prob = CovarianceProblem::new(fc, refl, cfg.p, cfg.sigma_bar2)?;
    let unscale = |qs: &FreqCovariances| -> Vec<ComplexMatrix> { qs.qs.iter().map(|q| q.unscale(cfg.p)).collect() };
    let mut x = unscale(&sfw);
    let mut f = prob.value(&x)?;
    if let Some(w) = warm {
        let xw = project_budget(&unscale(w), total)?;
        let fw = prob.value(&xw)?;
        if fw > f {
            x = xw;
            f = fw;
        }
    }
    let mut converged = !prob.leaky;
    let mut iterations = 0;
    if prob.leaky {
        let (_, mut g) = prob.value_and_grad(&x)?;
        let mut step = norm_all(&x).max(1.0) / norm_all(&g).max(f64::MIN_POSITIVE);
        while iterations < Q_MAX_ITERS {
            if stationarity(&x, &g, total)? < Q_TOL {
                converged = true;
                break;
            }
            iterations += 1;
            let trial: Vec<ComplexMatrix> = x.iter().zip(&g).map(|(xi, gi)| xi + gi.scale(step)).collect();
            let p = project_budget(&trial, total)?;
            let d: Vec<ComplexMatrix> = p.iter().zip(&x).map(|(a, b)| a - b).collect();
            let slope: f64 = g.iter().zip(&d).map(|(gi, di)| inner(gi, di)).sum();
            if slope <= 0.0 {
                converged = true;
                break;
            }
            let mut t = 1.0;
            let (x_new, f_new) = loop {
                let cand: Vec<ComplexMatrix> = x.iter().zip(&d).map(|(xi, di)| xi + di.scale(t)).collect();
                let fc_ = prob.value(&cand)?;
                if fc_ >= f + 1e-4 * t * slope {
                    break (cand, fc_);
                }
                t *= 0.5;
                if t < 1e-12 {
                    break (x.clone(), f);
                }
            };
            if t < 1e-12 {
                converged = true;
                break;
            }
            let (_, g_new) = prob.value_and_grad(&x_new)?;
            let sx: f64 = x_new.iter().zip(&x).map(|(a, b)| (a - b).norm_squared()).sum();
            let sy: f64 = x_new
                .iter()
                .zip(&x)
                .zip(g_new.iter().zip(&g))
                .map(|((a, b), (c, e))| inner(&(a - b), &(c - e)))
                .sum();
            step = if sy < 0.0 { (sx / -sy).clamp(1e-12, 1e12) } else { (step * 4.0).min(1e12) };
            x = x_new;
            f = f_new;
            g = g_new;
        }
    }
    let qs = x.iter().map(|xi| xi.scale(cfg.p)).collect();
    Ok(RelaxedCovariances {
        covariances: FreqCovariances { qs, budget: cfg.p },
        objective: f / LN2,
        iterations,
        converged,
    })
}

pub fn solve_covariances_relaxed(fc: &FreqChannelSet, refl: &Reflection, cfg: &OfdmConfig) -> Result<RelaxedCovariances> {
    solve_covariances_relaxed_from(fc, refl, cfg, None)
}

/// Single-coefficient relaxed block `Σ_n [log det A_n + ln(1 + 2Re(α a_n) + |α|² k_n)]`.
///
/// `a_n = v_n^H A_n⁻¹ u_n`, `k_n = |a_n|² − (u_n^H A_n⁻¹ u_n)(v_n^H A_n⁻¹ v_n) ≤ 0`
/// for the rank-one coupling `B_n = u_n v_n^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskProblem {
    pub a: Vec<C64>,
    pub k: Vec<f64>,
    /// `Σ_n log2 det A_n`.
    pub log2_det_a: f64,
}

impl DiskProblem {
    fn nats(&self, alpha: C64) -> f64 {
        self.a
            .iter()
            .zip(&self.k)
            .map(|(a, k)| (1.0 + 2.0 * (alpha * a).re + k * alpha.norm_sqr()).ln())
            .sum()
    }

    /// Objective in bits.
    pub fn value(&self, alpha: C64) -> f64 {
        self.log2_det_a + self.nats(alpha) / LN2
    }

    /// `∂/∂Re α + j ∂/∂Im α` of the nats objective.
    pub fn gradient(&self, alpha: C64) -> C64 {
        self.a
            .iter()
            .zip(&self.k)
            .map(|(a, k)| {
                let d = 1.0 + 2.0 * (alpha * a).re + k * alpha.norm_sqr();
                (a.conj() * 2.0 + alpha * (2.0 * k)) / d
            })
            .sum()
    }
}

fn project_disk(z: C64) -> C64 {
    let r = z.norm();
    if r > 1.0 {
        z / r
    } else {
        z
    }
}

pub const DISK_TOL: f64 = 1e-8;
const DISK_MAX_ITERS: usize = 500;

/// Outcome of the disk-constrained coefficient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskSolution {
    pub alpha: C64,
    /// `|Π(α + ∇) − α|` at the returned point.
    pub projected_gradient: f64,
    pub iterations: usize,
}

/// Projected gradient ascent over `|α| ≤ 1` with Barzilai-Borwein steps and monotone backtracking.
pub fn maximize_on_disk(prob: &DiskProblem, start: C64) -> DiskSolution {
    let mut x = project_disk(start);
    let mut f = prob.nats(x);
    let mut g = prob.gradient(x);
    let mut step = 1.0 / (prob.a.iter().map(|a| a.norm()).sum::<f64>() + prob.k.iter().map(|k| k.abs()).sum::<f64>()).max(1e-300);
    let pg = |x: C64, g: C64| (project_disk(x + g) - x).norm();
    let mut iterations = 0;
    while iterations < DISK_MAX_ITERS && pg(x, g) >= DISK_TOL {
        iterations += 1;
        let d = project_disk(x + g * step) - x;
        let slope = (g.conj() * d).re;
        if slope <= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-16 {
            let cand = x + d * t;
            let fc = prob.nats(cand);
            if fc >= f + 1e-4 * t * slope - 1e-15 * (1.0 + f.abs()) {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let gn = prob.gradient(xn);
        let s = xn - x;
        let y = gn - g;
        let sy = (s.conj() * y).re;
        step = if sy < 0.0 { (s.norm_sqr() / -sy).clamp(1e-300, 1e300) } else { step * 4.0 };
        x = xn;
        f = fnew;
        g = gn;
    }
    DiskSolution {
        alpha: x,
        projected_gradient: pg(x, g),
        iterations,
    }
}

/// Running per-subcarrier state of the relaxed sweep.
struct SweepState {
    /// `H̃[n]` under the current (relaxed) coefficients.
    s: Vec<ComplexMatrix>,
    /// `Σ_m (1 − |α_m|²) q_m[n] r_m[n] r_m[n]^H`.
    e: Vec<ComplexMatrix>,
    /// `q_m[n] = t_m[n]^H Q[n] t_m[n]`, indexed `[n][m]`.
    qf: Vec<Vec<f64>>,
}

impl SweepState {
    fn new(fc: &FreqChannelSet, refl: &Reflection, qs: &FreqCovariances) -> Result<Self> {
        let w = relaxation_weights(refl);
        Ok(Self {
            s: effective_channels(fc, refl)?,
            e: fc.subcarriers.iter().zip(&qs.qs).map(|(sc, q)| leakage(sc, &w, q)).collect(),
            qf: fc.subcarriers.iter().zip(&qs.qs).map(|(sc, q)| quad_forms(&sc.t, q)).collect(),
        })
    }
}

/// Builds the disk subproblem for coefficient `m`, returning it with the per-subcarrier partial sums.
fn build_disk_problem(
    m: usize,
    fc: &FreqChannelSet,
    refl: &Reflection,
    qs: &FreqCovariances,
    state: &SweepState,
    sigma_bar2: f64,
) -> Result<(DiskProblem, Vec<ComplexMatrix>, Vec<ComplexMatrix>)> {
    let alpha = refl.alphas[m];
    let w_old = (1.0 - alpha.norm_sqr()).max(0.0);
    let mut a_vals = Vec::with_capacity(fc.n());
    let mut k_vals = Vec::with_capacity(fc.n());
    let mut log2_det_a = 0.0;
    let mut gs = Vec::with_capacity(fc.n());
    let mut es = Vec::with_capacity(fc.n());
    for (n, (sc, q)) in fc.subcarriers.iter().zip(&qs.qs).enumerate() {
        let r: ComplexVector = sc.r.column(m).into_owned();
        let t_row = sc.t.rows(m, 1).into_owned();
        let qm = state.qf[n][m];
        let rr = &r * r.adjoint();
        let g = &state.s[n] - (&r * &t_row) * alpha;
        let e_minus = &state.e[n] - rr.scale(w_old * qm);
        let a_mat = identity(sc.nr()) + (&g * q * g.adjoint() + &e_minus + rr.scale(qm)).unscale(sigma_bar2);
        let u = r.unscale(sigma_bar2);
        let v: ComplexVector = (&g * q * t_row.adjoint()).column(0).into_owned();
        let rhs = ComplexMatrix::from_columns(&[u.clone(), v.clone()]);
        let sol = hpd_solve(&a_mat, &rhs)?;
        let a_n = (v.adjoint() * sol.column(0))[(0, 0)];
        let b_n = (u.adjoint() * sol.column(0))[(0, 0)].re;
        let c_n = (v.adjoint() * sol.column(1))[(0, 0)].re;
        a_vals.push(a_n);
        k_vals.push((a_n.norm_sqr() - b_n * c_n).min(0.0));
        log2_det_a += log2_det_hpd(&a_mat)?;
        gs.push(g);
        es.push(e_minus);
    }
    Ok((
        DiskProblem {
            a: a_vals,
            k: k_vals,
            log2_det_a,
        },
        gs,
        es,
    ))
}

/// Optimal `α_m` over the unit disk for the relaxed objective with everything else fixed.
pub fn solve_alpha_disk(
    m: usize,
    fc: &FreqChannelSet,
    refl: &Reflection,
    qs: &FreqCovariances,
    sigma_bar2: f64,
) -> Result<(DiskSolution, DiskProblem)> {
    check_relaxed(refl)?;
    let state = SweepState::new(fc, refl, qs)?;
    let (prob, _, _) = build_disk_problem(m, fc, refl, qs, &state, sigma_bar2)?;
    Ok((maximize_on_disk(&prob, refl.alphas[m]), prob))
}

/// One relaxed sweep `m = 1..M`; returns the objective after each update.
fn disk_sweep(fc: &FreqChannelSet, refl: &mut Reflection, qs: &FreqCovariances, sigma_bar2: f64) -> Result<Vec<f64>> {
    let mut state = SweepState::new(fc, refl, qs)?;
    let mut steps = Vec::with_capacity(refl.len());
    for m in 0..refl.len() {
        let (prob, gs, es) = build_disk_problem(m, fc, refl, qs, &state, sigma_bar2)?;
        let sol = maximize_on_disk(&prob, refl.alphas[m]);
        let alpha = sol.alpha;
        refl.alphas[m] = alpha;
        let w_new = (1.0 - alpha.norm_sqr()).max(0.0);
        for (n, sc) in fc.subcarriers.iter().enumerate() {
            let r = sc.r.column(m);
            state.s[n] = &gs[n] + (r * sc.t.row(m)) * alpha;
            state.e[n] = &es[n] + (r * r.adjoint()).scale(w_new * state.qf[n][m]);
        }
        steps.push(prob.value(alpha));
    }
    Ok(steps)
}

/// Algorithm output; `inner.rate` is the feasible rate including the OFDM prefactor.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmReport {
    /// Normalized reflection, water-filled covariances, and the relaxed sum objective
    /// in `rate_trace`/`step_trace` (bits/s/Hz summed over subcarriers).
    pub inner: OptReport<FreqCovariances>,
    pub relaxed_reflection: Reflection,
    pub relaxed_sum_rate: f64,
    pub feasible_sum_rate: f64,
    /// All relaxed moduli above `1 − 1e-6`.
    pub tight: bool,
    /// Covariance solves that hit their iteration cap.
    pub q_solver_warnings: usize,
}

fn relative_increment(new: f64, old: f64) -> f64 {
    if old > 0.0 {
        (new - old) / old
    } else if new > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn check_subcarriers(fc: &FreqChannelSet, cfg: &OfdmConfig) -> Result<()> {
    if fc.n() != cfg.n {
        return contract(format!("channel has {} subcarriers but the config has N = {}", fc.n(), cfg.n));
    }
    Ok(())
}

/// Relaxed alternating optimization followed by normalization and space-frequency water-filling.
pub fn algorithm2(fc: &FreqChannelSet, cfg: &OfdmConfig, algo: &AlgoConfig) -> Result<OfdmReport> {
    algo.validate()?;
    check_subcarriers(fc, cfg)?;
    let start = Instant::now();
    let m = fc.dims().m;
    let restarts = if m == 0 { 1 } else { algo.restarts };
    let mut rng = stream_rng(algo.seed, RESTART_STREAM);
    let mut warnings = 0;
    let mut best: Option<(Reflection, RelaxedCovariances)> = None;
    for _ in 0..restarts {
        let refl = Reflection::random(m, &mut rng);
        let sol = solve_covariances_relaxed(fc, &refl, cfg)?;
        warnings += usize::from(!sol.converged);
        if best.as_ref().is_none_or(|b| sol.objective > b.1.objective) {
            best = Some((refl, sol));
        }
    }
    let (mut refl, sol) = best.expect("at least one restart");
    let mut qs = sol.covariances;
    let mut value = sol.objective;
    let mut rate_trace = vec![value];
    let mut step_trace = vec![value];
    let mut outer_iters = if m == 0 { 1 } else { 0 };
    while m > 0 && outer_iters < algo.max_outer_iters {
        outer_iters += 1;
        step_trace.extend(disk_sweep(fc, &mut refl, &qs, cfg.sigma_bar2)?);
        let sol = solve_covariances_relaxed_from(fc, &refl, cfg, Some(&qs))?;
        warnings += usize::from(!sol.converged);
        qs = sol.covariances;
        step_trace.push(sol.objective);
        rate_trace.push(sol.objective);
        let inc = relative_increment(sol.objective, value);
        value = sol.objective;
        if inc < algo.epsilon {
            break;
        }
    }
    let relaxed_reflection = refl.clone();
    let tight = refl.alphas.iter().all(|a| a.norm() > 1.0 - 1e-6);
    let normalized = refl.normalized();
    let (covs, feasible) = space_frequency_waterfill(&effective_channels(fc, &normalized)?, cfg.p, cfg.sigma_bar2)?;
    Ok(OfdmReport {
        inner: OptReport {
            reflection: normalized,
            covariance: covs,
            rate: ofdm_rate(feasible, cfg),
            rate_trace,
            step_trace,
            outer_iters,
            restarts_evaluated: restarts,
            elapsed: start.elapsed(),
        },
        relaxed_reflection,
        relaxed_sum_rate: value,
        feasible_sum_rate: feasible,
        tight,
        q_solver_warnings: warnings,
    })
}

/// Reflection-only variant: covariances frozen at the direct-channel space-frequency
/// water-filling solution. Returns the normalized reflection and the sum rate.
pub fn ofdm_fixed_q(fc: &FreqChannelSet, cfg: &OfdmConfig, algo: &AlgoConfig) -> Result<(Reflection, f64)> {
    algo.validate()?;
    check_subcarriers(fc, cfg)?;
    let m = fc.dims().m;
    let direct: Vec<ComplexMatrix> = fc.subcarriers.iter().map(|sc| sc.h.clone()).collect();
    let (qs, _) = space_frequency_waterfill(&direct, cfg.p, cfg.sigma_bar2)?;
    let restarts = if m == 0 { 1 } else { algo.restarts };
    let mut rng = stream_rng(algo.seed, RESTART_STREAM);
    let mut best: Option<(Reflection, f64)> = None;
    for _ in 0..restarts {
        let refl = Reflection::random(m, &mut rng);
        let v = ofdm_objective(fc, &refl, &qs, cfg.sigma_bar2)?;
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((refl, v));
        }
    }
    let (mut refl, mut value) = best.expect("at least one restart");
    let mut iters = 0;
    while m > 0 && iters < algo.max_outer_iters {
        iters += 1;
        let steps = disk_sweep(fc, &mut refl, &qs, cfg.sigma_bar2)?;
        let new = *steps.last().expect("M > 0");
        let inc = relative_increment(new, value);
        value = new;
        if inc < algo.epsilon {
            break;
        }
    }
    let normalized = refl.normalized();
    let rate = ofdm_objective(fc, &normalized, &qs, cfg.sigma_bar2)?;
    Ok((normalized, rate))
}

/// Sum over subcarriers of `Σ_{i,j}` channel entries, `(h̃^d, h̃^r_m)`.
pub fn ofdm_heuristic_sums(fc: &FreqChannelSet) -> (C64, ComplexVector) {
    let m = fc.dims().m;
    let mut hd = C64::new(0.0, 0.0);
    let mut hr = ComplexVector::zeros(m);
    for sc in &fc.subcarriers {
        hd += sc.h.iter().sum::<C64>();
        for k in 0..m {
            hr[k] += sc.r.column(k).iter().sum::<C64>() * sc.t.row(k).iter().sum::<C64>();
        }
    }
    (hd, hr)
}

/// `α_m = e^{j(arg h̃^d − arg h̃^r_m)}` with the sums running over subcarriers too.
pub fn ofdm_heuristic_power(fc: &FreqChannelSet) -> Reflection {
    if fc.n() == 1 {
        return heuristic_power_max(&fc.subcarriers[0]);
    }
    let (hd, hr) = ofdm_heuristic_sums(fc);
    let phase = arg0(hd);
    Reflection::new(hr.map(|z| cis(phase - arg0(z))))
}

/// Sum rate of a fixed unit-modulus reflection with space-frequency water-filled covariances.
pub fn ofdm_waterfilled_sum_rate(fc: &FreqChannelSet, refl: &Reflection, cfg: &OfdmConfig) -> Result<f64> {
    Ok(space_frequency_waterfill(&effective_channels(fc, refl)?, cfg.p, cfg.sigma_bar2)?.1)
}

/// Per-subcarrier reflections (not realizable by a frequency-flat surface): Algorithm 1 on
/// each subcarrier at budget `P`, then space-frequency water-filling over the resulting channels.
/// Returns the sum rate and the reflection chosen for every subcarrier.
pub fn upper_bound_per_subcarrier(
    fc: &FreqChannelSet,
    cfg: &OfdmConfig,
    algo: &AlgoConfig,
) -> Result<(f64, Vec<Reflection>)> {
    check_subcarriers(fc, cfg)?;
    let mut refls = Vec::with_capacity(fc.n());
    let mut hs = Vec::with_capacity(fc.n());
    for (n, sc) in fc.subcarriers.iter().enumerate() {
        let sub = AlgoConfig {
            seed: derive_seed(algo.seed, n as u64),
            ..*algo
        };
        let rep = optimize(sc, cfg.p, cfg.sigma_bar2, &sub)?;
        hs.push(effective_channel(sc, &rep.reflection)?);
        refls.push(rep.reflection);
    }
    Ok((space_frequency_waterfill(&hs, cfg.p, cfg.sigma_bar2)?.1, refls))
}

/// Reference sum rates: `ofdm_no_irs`, `ofdm_random_phase` (first restart draw), `ofdm_heuristic`.
pub fn ofdm_simple_baselines(
    fc: &FreqChannelSet,
    cfg: &OfdmConfig,
    algo: &AlgoConfig,
) -> Result<std::collections::BTreeMap<&'static str, f64>> {
    let m = fc.dims().m;
    let mut out = std::collections::BTreeMap::new();
    out.insert("ofdm_no_irs", ofdm_waterfilled_sum_rate(fc, &Reflection::new(ComplexVector::zeros(m)), cfg)?);
    let random = Reflection::random(m, &mut stream_rng(algo.seed, RESTART_STREAM));
    out.insert("ofdm_random_phase", ofdm_waterfilled_sum_rate(fc, &random, cfg)?);
    out.insert("ofdm_heuristic", ofdm_waterfilled_sum_rate(fc, &ofdm_heuristic_power(fc), cfg)?);
    Ok(out)
}
