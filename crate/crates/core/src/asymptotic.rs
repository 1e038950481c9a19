//! Low-complexity specializations: strongest-eigenmode (low-SNR) design,
//! total-power (high-SNR) design, MISO/SIMO sweeps, the closed-form heuristic
//! and the simple benchmark schemes.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::channel::FlatChannelSet;
use crate::error::{contract, Result};
use crate::mimo::{effective_channel, waterfill, Covariance, Reflection};
use crate::numerics::{arg0, cis, fro_norm_sq, svd, ComplexMatrix, ComplexVector, C64};
use crate::opt_flat::{optimize_fixed_q, AlgoConfig, OptReport};
use crate::seed::{stream_rng, RESTART_STREAM};

/// Unit-norm beamformers `(x̄, ȳ)` paired with the reflection they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct LowSnrState {
    pub x_bar: ComplexVector,
    pub y_bar: ComplexVector,
    pub reflection: Reflection,
}

fn top_singular_pair(h: &ComplexMatrix) -> Result<(ComplexVector, ComplexVector, f64)> {
    let s = svd(h)?;
    Ok((
        s.u.column(0).into_owned(),
        s.v.column(0).into_owned(),
        s.singular_values[0],
    ))
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

/// Best of `L` uniform random reflections under `score`, drawn from the restart stream.
fn best_random_start(
    ch: &FlatChannelSet,
    cfg: &AlgoConfig,
    score: impl Fn(&ComplexMatrix) -> Result<f64>,
) -> Result<(Reflection, f64, usize)> {
    let m = ch.m();
    let restarts = if m == 0 { 1 } else { cfg.restarts };
    let mut rng = stream_rng(cfg.seed, RESTART_STREAM);
    let mut best: Option<(Reflection, f64)> = None;
    for _ in 0..restarts {
        let refl = Reflection::random(m, &mut rng);
        let v = score(&effective_channel(ch, &refl)?)?;
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((refl, v));
        }
    }
    let (r, v) = best.expect("at least one restart");
    Ok((r, v, restarts))
}

/// Closed-form phases aligning every reflected term of `x̄^H H̃ ȳ` with the direct one.
pub fn low_snr_alphas(ch: &FlatChannelSet, x_bar: &ComplexVector, y_bar: &ComplexVector) -> Reflection {
    let direct = arg0((x_bar.adjoint() * &ch.h * y_bar)[(0, 0)]);
    let xr = x_bar.adjoint() * &ch.r;
    let ty = &ch.t * y_bar;
    Reflection::new(ComplexVector::from_fn(ch.m(), |m, _| cis(direct - arg0(xr[(0, m)] * ty[m]))))
}

/// Maximizes the strongest eigenchannel power by alternating closed-form
/// phase alignment with the top singular-vector update; transmits on that mode.
///
/// `rate_trace` holds `log2(1 + P σ_max²/σ²)` after initialization and after each
/// outer iteration; `step_trace` holds `|x̄^H H̃ ȳ|²` after every half-step.
pub fn low_snr_optimize(ch: &FlatChannelSet, p: f64, sigma2: f64, cfg: &AlgoConfig) -> Result<(OptReport, LowSnrState)> {
    cfg.validate()?;
    let start = Instant::now();
    let rate_of = |g: f64| (1.0 + p * g / sigma2).log2();
    let (mut refl, mut gain, restarts) = best_random_start(ch, cfg, |h| Ok(top_singular_pair(h)?.2.powi(2)))?;
    let (mut x, mut y, _) = top_singular_pair(&effective_channel(ch, &refl)?)?;
    let mut rate_trace = vec![rate_of(gain)];
    let mut step_trace = vec![gain];
    let mut outer_iters = if ch.m() == 0 { 1 } else { 0 };
    while ch.m() > 0 && outer_iters < cfg.max_outer_iters {
        outer_iters += 1;
        refl = low_snr_alphas(ch, &x, &y);
        let h = effective_channel(ch, &refl)?;
        step_trace.push((x.adjoint() * &h * &y)[(0, 0)].norm_sqr());
        let (nx, ny, s) = top_singular_pair(&h)?;
        x = nx;
        y = ny;
        let new_gain = s * s;
        step_trace.push(new_gain);
        rate_trace.push(rate_of(new_gain));
        let inc = relative_increment(new_gain, gain);
        gain = new_gain;
        if inc < cfg.epsilon {
            break;
        }
    }
    let q = (&y * y.adjoint()).scale(p);
    let report = OptReport {
        reflection: refl.clone(),
        covariance: Covariance { q, budget: p },
        rate: rate_of(gain),
        rate_trace,
        step_trace,
        outer_iters,
        restarts_evaluated: restarts,
        elapsed: start.elapsed(),
    };
    Ok((
        report,
        LowSnrState {
            x_bar: x,
            y_bar: y,
            reflection: refl,
        },
    ))
}

/// Result of a total-power sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSweep {
    pub reflection: Reflection,
    /// `‖H̃‖_F²` after initialization and after each outer iteration.
    pub power_trace: Vec<f64>,
    /// `‖H̃‖_F²` after every single-coefficient update.
    pub step_trace: Vec<f64>,
    pub outer_iters: usize,
    pub restarts_evaluated: usize,
}

impl PowerSweep {
    pub fn total_power(&self) -> f64 {
        *self.power_trace.last().expect("trace is never empty")
    }
}

/// `β_m = r_m^H G t_m` for the partial sum `G`, with `t_m^H` the `m`-th row of `T`.
fn beta(g: &ComplexMatrix, r_m: &ComplexVector, t_row: &ComplexMatrix) -> C64 {
    (r_m.adjoint() * g * t_row.adjoint())[(0, 0)]
}

/// Coordinate ascent on `‖H̃‖_F²` with `α_m = e^{j arg β_m}`.
pub fn power_max_optimize(ch: &FlatChannelSet, cfg: &AlgoConfig) -> Result<PowerSweep> {
    cfg.validate()?;
    let (mut refl, mut power, restarts) = best_random_start(ch, cfg, |h| Ok(fro_norm_sq(h)))?;
    let mut h = effective_channel(ch, &refl)?;
    let mut power_trace = vec![power];
    let mut step_trace = vec![power];
    let mut outer_iters = if ch.m() == 0 { 1 } else { 0 };
    while ch.m() > 0 && outer_iters < cfg.max_outer_iters {
        outer_iters += 1;
        for m in 0..ch.m() {
            let r_m: ComplexVector = ch.r.column(m).into_owned();
            let t_row: ComplexMatrix = ch.t.rows(m, 1).into_owned();
            let term = &r_m * &t_row;
            let g = &h - &term * refl.alphas[m];
            let alpha = cis(arg0(beta(&g, &r_m, &t_row)));
            refl.alphas[m] = alpha;
            h = g + term * alpha;
            step_trace.push(fro_norm_sq(&h));
        }
        let new_power = fro_norm_sq(&h);
        power_trace.push(new_power);
        let inc = relative_increment(new_power, power);
        power = new_power;
        if inc < cfg.epsilon {
            break;
        }
    }
    Ok(PowerSweep {
        reflection: refl,
        power_trace,
        step_trace,
        outer_iters,
        restarts_evaluated: restarts,
    })
}

fn single_stream_report(
    ch: &FlatChannelSet,
    p: f64,
    sigma2: f64,
    cfg: &AlgoConfig,
    covariance: impl Fn(&ComplexMatrix) -> ComplexMatrix,
) -> Result<OptReport> {
    let start = Instant::now();
    let sweep = power_max_optimize(ch, cfg)?;
    let rate_of = |g: f64| (1.0 + p * g / sigma2).log2();
    let h = effective_channel(ch, &sweep.reflection)?;
    Ok(OptReport {
        covariance: Covariance {
            q: covariance(&h),
            budget: p,
        },
        rate: rate_of(sweep.total_power()),
        rate_trace: sweep.power_trace.iter().map(|&g| rate_of(g)).collect(),
        step_trace: sweep.step_trace.iter().map(|&g| rate_of(g)).collect(),
        outer_iters: sweep.outer_iters,
        restarts_evaluated: sweep.restarts_evaluated,
        reflection: sweep.reflection,
        elapsed: start.elapsed(),
    })
}

/// Single receive antenna: maximize `‖h̃‖²`, then maximum-ratio transmission `Q = P h̃ h̃^H / ‖h̃‖²`.
pub fn miso_optimize(ch: &FlatChannelSet, p: f64, sigma2: f64, cfg: &AlgoConfig) -> Result<OptReport> {
    if ch.nr() != 1 {
        return contract(format!("MISO optimizer needs one receive antenna, got {}", ch.nr()));
    }
    single_stream_report(ch, p, sigma2, cfg, |h| {
        // h is the 1×N_t row h̃^H
        let n = fro_norm_sq(h);
        if n > 0.0 {
            (h.adjoint() * h).scale(p / n)
        } else {
            ComplexMatrix::zeros(h.ncols(), h.ncols())
        }
    })
}

/// Single transmit antenna: maximize `‖h̃‖²` with `Q = P`.
pub fn simo_optimize(ch: &FlatChannelSet, p: f64, sigma2: f64, cfg: &AlgoConfig) -> Result<OptReport> {
    if ch.nt() != 1 {
        return contract(format!("SIMO optimizer needs one transmit antenna, got {}", ch.nt()));
    }
    single_stream_report(ch, p, sigma2, cfg, |_| ComplexMatrix::from_element(1, 1, C64::new(p, 0.0)))
}

/// `h̃^d = Σ_{i,j} [H]_{ij}` and `h̃^r_m = Σ_{i,j} [R]_{im} [T]_{mj}`.
pub fn heuristic_sums(ch: &FlatChannelSet) -> (C64, ComplexVector) {
    let hd: C64 = ch.h.iter().sum();
    let hr = ComplexVector::from_fn(ch.m(), |m, _| {
        let rs: C64 = ch.r.column(m).iter().sum();
        let ts: C64 = ch.t.row(m).iter().sum();
        rs * ts
    });
    (hd, hr)
}

/// Aligns every `h̃^r_m` with `h̃^d`: `α_m = e^{j(arg h̃^d − arg h̃^r_m)}`.
pub fn heuristic_power_max(ch: &FlatChannelSet) -> Reflection {
    let (hd, hr) = heuristic_sums(ch);
    let phase = arg0(hd);
    Reflection::new(hr.map(|z| cis(phase - arg0(z))))
}

/// Scheme name → achieved rate for the reference schemes that need no joint optimization.
///
/// `random_phase` uses the first draw of the restart stream, which is also the
/// first initialization tried by [`crate::opt_flat::optimize`] under the same seed.
pub fn baselines(ch: &FlatChannelSet, p: f64, sigma2: f64, cfg: &AlgoConfig) -> Result<BTreeMap<&'static str, f64>> {
    let mut out = BTreeMap::new();
    let direct = waterfill(&ch.h, p, sigma2)?;
    out.insert("no_irs", direct.rate);
    let random = Reflection::random(ch.m(), &mut stream_rng(cfg.seed, RESTART_STREAM));
    out.insert("random_phase", waterfill(&effective_channel(ch, &random)?, p, sigma2)?.rate);
    out.insert("fixed_Q", optimize_fixed_q(ch, &direct.covariance, sigma2, cfg)?.rate);
    Ok(out)
}
