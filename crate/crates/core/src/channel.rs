//! Deployment geometry, array responses, path loss and random channel synthesis.
//!
//! The transmitter sits at `(0, 0, H̄)`, the surface's reference element at
//! `(d̄_D − d̄_h, d̄_p, H̄)` and the receiver at `(d̄_D, 0, 0)`. Both ends use
//! uniform linear arrays; the surface is a uniform planar array with `M_x`
//! elements per row.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::numerics::{cis, ComplexMatrix, ComplexVector, C64};
use crate::seed::{stream_rng, CHANNEL_STREAM};

/// Which angles feed the LoS component of the surface-receiver link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RLosAngles {
    /// `a_R(θ_IR^A) a_I(θ_IR^D, ψ_IR^D)^H`.
    #[default]
    ReceiverLink,
    /// The transmitter-surface angles `a_R(θ_TI^A) a_I(θ_TI^D, ψ_TI^A)^H`, taken literally
    /// from the printed parameter table (which has no `ψ_TI^D`, so `ψ_TI^A` is used).
    TransmitterLink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Horizontal transmitter-receiver distance (m).
    pub d_bar_d: f64,
    /// Surface offset along x from the receiver (m).
    #[serde(default = "defaults::d_bar_h")]
    pub d_bar_h: f64,
    /// Surface offset perpendicular to the Tx-Rx line (m).
    #[serde(default = "defaults::d_bar_p")]
    pub d_bar_p: f64,
    /// Altitude of transmitter and surface above the receiver (m).
    #[serde(default = "defaults::h_bar")]
    pub h_bar: f64,
    #[serde(default = "defaults::antenna_spacing")]
    pub antenna_spacing_over_lambda: f64,
    #[serde(default = "defaults::element_spacing")]
    pub element_spacing_over_lambda: f64,
    /// Surface elements per row; `None` means `min(M, 10)`.
    #[serde(default)]
    pub m_x: Option<usize>,
    #[serde(default)]
    pub r_los_angles: RLosAngles,
}

mod defaults {
    pub fn d_bar_h() -> f64 {
        2.0
    }
    pub fn d_bar_p() -> f64 {
        2.0
    }
    pub fn h_bar() -> f64 {
        10.0
    }
    pub fn antenna_spacing() -> f64 {
        0.5
    }
    pub fn element_spacing() -> f64 {
        0.125
    }
}

impl GeometryConfig {
    pub fn with_distance(d_bar_d: f64) -> Self {
        Self {
            d_bar_d,
            d_bar_h: defaults::d_bar_h(),
            d_bar_p: defaults::d_bar_p(),
            h_bar: defaults::h_bar(),
            antenna_spacing_over_lambda: defaults::antenna_spacing(),
            element_spacing_over_lambda: defaults::element_spacing(),
            m_x: None,
            r_los_angles: RLosAngles::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_bar_d", self.d_bar_d),
            ("d_bar_h", self.d_bar_h),
            ("d_bar_p", self.d_bar_p),
            ("h_bar", self.h_bar),
            ("antenna_spacing_over_lambda", self.antenna_spacing_over_lambda),
            ("element_spacing_over_lambda", self.element_spacing_over_lambda),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return config(format!("geometry.{name} must be positive, got {v}"));
            }
        }
        if self.m_x == Some(0) {
            return config("geometry.m_x must be at least 1");
        }
        Ok(())
    }

    pub fn elements_per_row(&self, m: usize) -> usize {
        self.m_x.unwrap_or(m.min(10)).max(1)
    }
}

/// 3D distances and arrival/departure angles of the three links (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub d_d: f64,
    pub d_ti: f64,
    pub d_ir: f64,
    pub theta_d_a: f64,
    pub theta_d_d: f64,
    pub theta_ti_a: f64,
    pub psi_ti_a: f64,
    pub theta_ti_d: f64,
    pub theta_ir_a: f64,
    pub theta_ir_d: f64,
    pub psi_ir_d: f64,
}

pub fn link_geometry(cfg: &GeometryConfig) -> LinkGeometry {
    let GeometryConfig {
        d_bar_d,
        d_bar_h,
        d_bar_p,
        h_bar,
        ..
    } = *cfg;
    let theta_ti_a = ((d_bar_d - d_bar_h) / d_bar_p).atan();
    let theta_ir_a = (d_bar_h / d_bar_p).atan();
    LinkGeometry {
        d_d: (d_bar_d * d_bar_d + h_bar * h_bar).sqrt(),
        d_ti: ((d_bar_d - d_bar_h).powi(2) + d_bar_p * d_bar_p).sqrt(),
        d_ir: (d_bar_h * d_bar_h + d_bar_p * d_bar_p + h_bar * h_bar).sqrt(),
        theta_d_a: 0.0,
        theta_d_d: 0.0,
        theta_ti_a,
        psi_ti_a: 0.0,
        theta_ti_d: FRAC_PI_2 - theta_ti_a,
        theta_ir_a,
        theta_ir_d: FRAC_PI_2 - theta_ir_a,
        psi_ir_d: (-h_bar / (d_bar_p * d_bar_p + d_bar_h * d_bar_h).sqrt()).atan(),
    }
}

/// ULA response: entry `n` (0-based) is `e^{j 2π n s sin θ}`.
pub fn ula_response(n_elems: usize, theta: f64, spacing_over_lambda: f64) -> ComplexVector {
    let k = 2.0 * PI * spacing_over_lambda * theta.sin();
    ComplexVector::from_fn(n_elems, |n, _| cis(k * n as f64))
}

/// UPA response; element `m ∈ 0..M` has phase
/// `2π s (⌊m/M_x⌋ sin ψ sin θ + (m − ⌊m/M_x⌋ M_x) sin ψ cos θ)`.
pub fn upa_response(
    m_total: usize,
    m_x: usize,
    theta: f64,
    psi: f64,
    spacing_over_lambda: f64,
) -> ComplexVector {
    let m_x = m_x.max(1);
    let (st, ct) = theta.sin_cos();
    let sp = psi.sin();
    ComplexVector::from_fn(m_total, |m, _| {
        let row = (m / m_x) as f64;
        let col = (m % m_x) as f64;
        cis(2.0 * PI * spacing_over_lambda * (row * sp * st + col * sp * ct))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossModel {
    #[serde(default = "pl_defaults::beta0_db")]
    pub beta0_db: f64,
    #[serde(default = "pl_defaults::d0")]
    pub d0: f64,
    #[serde(default = "pl_defaults::alpha_d")]
    pub alpha_d: f64,
    #[serde(default = "pl_defaults::alpha_ti")]
    pub alpha_ti: f64,
    #[serde(default = "pl_defaults::alpha_ir")]
    pub alpha_ir: f64,
}

mod pl_defaults {
    pub fn beta0_db() -> f64 {
        -30.0
    }
    pub fn d0() -> f64 {
        1.0
    }
    pub fn alpha_d() -> f64 {
        3.5
    }
    pub fn alpha_ti() -> f64 {
        2.2
    }
    pub fn alpha_ir() -> f64 {
        2.8
    }
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self {
            beta0_db: pl_defaults::beta0_db(),
            d0: pl_defaults::d0(),
            alpha_d: pl_defaults::alpha_d(),
            alpha_ti: pl_defaults::alpha_ti(),
            alpha_ir: pl_defaults::alpha_ir(),
        }
    }
}

impl PathLossModel {
    pub fn validate(&self) -> Result<()> {
        if self.d0.is_nan() || self.d0 <= 0.0 || !self.beta0_db.is_finite() {
            return config("path_loss: d0 must be positive and beta0_db finite");
        }
        for (name, a) in [
            ("alpha_d", self.alpha_d),
            ("alpha_ti", self.alpha_ti),
            ("alpha_ir", self.alpha_ir),
        ] {
            if !(1.5..=6.0).contains(&a) {
                return config(format!("path_loss.{name} must lie in [1.5, 6], got {a}"));
            }
        }
        Ok(())
    }
}

/// Linear power gain `10^{β0/10} (d/d0)^{-exponent}`.
pub fn path_loss_linear(model: &PathLossModel, d: f64, exponent: f64) -> f64 {
    10f64.powf(model.beta0_db / 10.0) * (d / model.d0).powf(-exponent)
}

/// Linear path-loss gains of the direct, transmitter-surface and surface-receiver links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGains {
    pub beta_d: f64,
    pub beta_ti: f64,
    pub beta_ir: f64,
}

impl LinkGains {
    pub fn new(geom: &LinkGeometry, pl: &PathLossModel) -> Self {
        Self {
            beta_d: path_loss_linear(pl, geom.d_d, pl.alpha_d),
            beta_ti: path_loss_linear(pl, geom.d_ti, pl.alpha_ti),
            beta_ir: path_loss_linear(pl, geom.d_ir, pl.alpha_ir),
        }
    }
}

/// Rician K-factor; infinity is a distinct pure line-of-sight state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub enum RicianFactor {
    Finite(f64),
    PureLos,
}

impl From<f64> for RicianFactor {
    fn from(k: f64) -> Self {
        if k.is_infinite() && k > 0.0 {
            RicianFactor::PureLos
        } else {
            RicianFactor::Finite(k)
        }
    }
}

impl From<RicianFactor> for f64 {
    fn from(k: RicianFactor) -> f64 {
        match k {
            RicianFactor::Finite(k) => k,
            RicianFactor::PureLos => f64::INFINITY,
        }
    }
}

impl RicianFactor {
    /// `(LoS weight, NLoS weight)` multiplying the two components, before path loss.
    fn weights(self) -> (f64, f64) {
        match self {
            RicianFactor::Finite(k) => ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt()),
            RicianFactor::PureLos => (1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RicianConfig {
    pub k_d: RicianFactor,
    pub k_ti: RicianFactor,
    pub k_ir: RicianFactor,
}

impl RicianConfig {
    pub fn rayleigh() -> Self {
        Self {
            k_d: RicianFactor::Finite(0.0),
            k_ti: RicianFactor::Finite(0.0),
            k_ir: RicianFactor::Finite(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("k_d", self.k_d), ("k_ti", self.k_ti), ("k_ir", self.k_ir)] {
            if let RicianFactor::Finite(v) = k {
                if !(v.is_finite() && v >= 0.0) {
                    return config(format!("rician.{name} must be non-negative, got {v}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub nt: usize,
    pub nr: usize,
    pub m: usize,
}

/// Direct `H` (`N_r×N_t`), transmitter-surface `T` (`M×N_t`) and
/// surface-receiver `R` (`N_r×M`) channels.
///
/// Column `m` of `R` is `r_m`; row `m` of `T` is `t_m^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatChannelSet {
    pub h: ComplexMatrix,
    pub t: ComplexMatrix,
    pub r: ComplexMatrix,
}

impl FlatChannelSet {
    pub fn new(h: ComplexMatrix, t: ComplexMatrix, r: ComplexMatrix) -> Result<Self> {
        let (nr, nt) = h.shape();
        if t.ncols() != nt || r.nrows() != nr || r.ncols() != t.nrows() {
            return Err(crate::Error::Contract(format!(
                "inconsistent channel shapes: H {}x{}, T {}x{}, R {}x{}",
                nr,
                nt,
                t.nrows(),
                t.ncols(),
                r.nrows(),
                r.ncols()
            )));
        }
        for (m, name) in [(&h, "H"), (&t, "T"), (&r, "R")] {
            crate::numerics::check_finite(m, name)?;
        }
        Ok(Self { h, t, r })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            nt: self.h.ncols(),
            nr: self.h.nrows(),
            m: self.t.nrows(),
        }
    }

    pub fn nt(&self) -> usize {
        self.h.ncols()
    }

    pub fn nr(&self) -> usize {
        self.h.nrows()
    }

    pub fn m(&self) -> usize {
        self.t.nrows()
    }

    /// `r_m r_m`-style reflected path `r_m t_m^H` as an `N_r×N_t` matrix.
    pub fn reflected_path(&self, m: usize) -> ComplexMatrix {
        self.r.column(m) * self.t.row(m)
    }

    /// Same channel without the surface (M = 0).
    pub fn without_surface(&self) -> Self {
        Self {
            h: self.h.clone(),
            t: ComplexMatrix::zeros(0, self.nt()),
            r: ComplexMatrix::zeros(self.nr(), 0),
        }
    }
}

fn cn<R: Rng>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> ComplexMatrix {
    // column-major fill order, fixed for reproducibility
    ComplexMatrix::from_fn(rows, cols, |_, _| cn(rng, variance))
}

fn rician(beta: f64, k: RicianFactor, los: &ComplexMatrix, nlos: &ComplexMatrix) -> ComplexMatrix {
    let (wl, wn) = k.weights();
    (los.scale(wl) + nlos.scale(wn)).scale(beta.sqrt())
}

/// LoS components `(H_LoS, T_LoS, R_LoS)` for the given geometry.
pub fn los_components(
    cfg: &GeometryConfig,
    geom: &LinkGeometry,
    dims: Dims,
) -> (ComplexMatrix, ComplexMatrix, ComplexMatrix) {
    let da = cfg.antenna_spacing_over_lambda;
    let di = cfg.element_spacing_over_lambda;
    let mx = cfg.elements_per_row(dims.m);
    let h_los = ula_response(dims.nr, geom.theta_d_a, da) * ula_response(dims.nt, geom.theta_d_d, da).adjoint();
    let t_los = upa_response(dims.m, mx, geom.theta_ti_a, geom.psi_ti_a, di)
        * ula_response(dims.nt, geom.theta_ti_d, da).adjoint();
    let r_los = match cfg.r_los_angles {
        RLosAngles::ReceiverLink => {
            ula_response(dims.nr, geom.theta_ir_a, da)
                * upa_response(dims.m, mx, geom.theta_ir_d, geom.psi_ir_d, di).adjoint()
        }
        RLosAngles::TransmitterLink => {
            ula_response(dims.nr, geom.theta_ti_a, da)
                * upa_response(dims.m, mx, geom.theta_ti_d, geom.psi_ti_a, di).adjoint()
        }
    };
    (h_los, t_los, r_los)
}

/// Draws one frequency-flat Rician realization.
///
/// NLoS parts are drawn in the order H, T, R from the channel stream of
/// `seed`, so the direct channel of a given seed does not depend on `M` or on
/// the K-factors.
pub fn draw_flat_channels(
    cfg: &GeometryConfig,
    pl: &PathLossModel,
    rician_cfg: &RicianConfig,
    dims: Dims,
    seed: u64,
) -> FlatChannelSet {
    let geom = link_geometry(cfg);
    let gains = LinkGains::new(&geom, pl);
    let (h_los, t_los, r_los) = los_components(cfg, &geom, dims);
    let mut rng = stream_rng(seed, CHANNEL_STREAM);
    let h_n = gaussian_matrix(&mut rng, dims.nr, dims.nt, 1.0);
    let t_n = gaussian_matrix(&mut rng, dims.m, dims.nt, 1.0);
    let r_n = gaussian_matrix(&mut rng, dims.nr, dims.m, 1.0);
    FlatChannelSet {
        h: rician(gains.beta_d, rician_cfg.k_d, &h_los, &h_n),
        t: rician(gains.beta_ti, rician_cfg.k_ti, &t_los, &t_n),
        r: rician(gains.beta_ir, rician_cfg.k_ir, &r_los, &r_n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapCounts {
    pub l_d: usize,
    pub l_ti: usize,
    pub l_ir: usize,
}

impl TapCounts {
    pub fn max(&self) -> usize {
        self.l_d.max(self.l_ti).max(self.l_ir)
    }

    /// Length of the overall effective impulse response, `max(L_D, L_TI + L_IR − 1)`.
    pub fn effective_max(&self) -> usize {
        self.l_d.max(self.l_ti + self.l_ir - 1)
    }
}

/// Time-domain impulse responses of the three links, tap 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDomainChannelSet {
    pub taps_h: Vec<ComplexMatrix>,
    pub taps_t: Vec<ComplexMatrix>,
    pub taps_r: Vec<ComplexMatrix>,
}

impl TimeDomainChannelSet {
    pub fn tap_counts(&self) -> TapCounts {
        TapCounts {
            l_d: self.taps_h.len(),
            l_ti: self.taps_t.len(),
            l_ir: self.taps_r.len(),
        }
    }
}

/// Independent Rayleigh taps, tap `l` of each link ~ `CN(0, β_link / L_link)` entrywise.
pub fn draw_selective_channels(
    gains: &LinkGains,
    taps: TapCounts,
    dims: Dims,
    seed: u64,
) -> Result<TimeDomainChannelSet> {
    if taps.l_d == 0 || taps.l_ti == 0 || taps.l_ir == 0 {
        return config("tap counts must be at least 1");
    }
    let mut rng = stream_rng(seed, CHANNEL_STREAM);
    let taps_h = (0..taps.l_d)
        .map(|_| gaussian_matrix(&mut rng, dims.nr, dims.nt, gains.beta_d / taps.l_d as f64))
        .collect();
    let taps_t = (0..taps.l_ti)
        .map(|_| gaussian_matrix(&mut rng, dims.m, dims.nt, gains.beta_ti / taps.l_ti as f64))
        .collect();
    let taps_r = (0..taps.l_ir)
        .map(|_| gaussian_matrix(&mut rng, dims.nr, dims.m, gains.beta_ir / taps.l_ir as f64))
        .collect();
    Ok(TimeDomainChannelSet {
        taps_h,
        taps_t,
        taps_r,
    })
}

/// Per-subcarrier channel triples, subcarrier `n = 1..N` stored at index `n − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqChannelSet {
    pub subcarriers: Vec<FlatChannelSet>,
}

impl FreqChannelSet {
    pub fn n(&self) -> usize {
        self.subcarriers.len()
    }

    pub fn dims(&self) -> Dims {
        self.subcarriers[0].dims()
    }
}

fn dft(taps: &[ComplexMatrix], n_total: usize, n: usize) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(taps[0].nrows(), taps[0].ncols());
    for (l, tap) in taps.iter().enumerate() {
        // e^{-j2π(n−1)l/N} with `n` already 0-based
        let w = cis(-2.0 * PI * ((n * l) % n_total) as f64 / n_total as f64);
        out += tap * w;
    }
    out
}

/// `X[n] = Σ_l X̄_l e^{−j2π(n−1)l/N}` for every link.
pub fn to_frequency_domain(td: &TimeDomainChannelSet, n: usize) -> Result<FreqChannelSet> {
    let taps = td.tap_counts();
    if taps.l_d == 0 || taps.l_ti == 0 || taps.l_ir == 0 {
        return config("time-domain channel has an empty tap list");
    }
    if n < taps.max() {
        return config(format!(
            "subcarrier count {n} is smaller than the longest impulse response ({} taps)",
            taps.max()
        ));
    }
    let subcarriers = (0..n)
        .map(|k| FlatChannelSet {
            h: dft(&td.taps_h, n, k),
            t: dft(&td.taps_t, n, k),
            r: dft(&td.taps_r, n, k),
        })
        .collect();
    Ok(FreqChannelSet { subcarriers })
}
