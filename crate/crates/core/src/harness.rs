//! Experiment configuration, scheme registry, Monte-Carlo runner and CSV output.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotic::{heuristic_power_max, low_snr_optimize, miso_optimize, power_max_optimize, simo_optimize};
use crate::channel::{
    draw_flat_channels, draw_selective_channels, link_geometry, to_frequency_domain, Dims, FlatChannelSet,
    FreqChannelSet, GeometryConfig, LinkGains, PathLossModel, RicianConfig, TapCounts,
};
use crate::error::{config, Error, Result};
use crate::mimo::{channel_metrics, effective_channel, waterfill, Reflection};
use crate::numerics::{ComplexMatrix, ComplexVector};
use crate::ofdm::{
    algorithm2, effective_channels, ofdm_fixed_q, ofdm_heuristic_power, ofdm_rate, ofdm_waterfilled_sum_rate,
    upper_bound_per_subcarrier, OfdmConfig,
};
use crate::opt_flat::{optimize, optimize_fixed_q, AlgoConfig};
use crate::seed::{derive_seed, stream_rng, RESTART_STREAM};

pub fn dbm_to_watts(x: f64) -> f64 {
    10f64.powf((x - 30.0) / 10.0)
}

fn watts_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "convergence")]
    Convergence,
    #[serde(rename = "rate_vs_M_lowsnr")]
    RateVsMLowSnr,
    #[serde(rename = "rate_vs_M_highsnr")]
    RateVsMHighSnr,
    #[serde(rename = "rate_vs_P")]
    RateVsP,
    #[serde(rename = "ofdm_rate_vs_M")]
    OfdmRateVsM,
    #[serde(rename = "metrics_vs_M")]
    MetricsVsM,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Convergence,
        Experiment::RateVsMLowSnr,
        Experiment::RateVsMHighSnr,
        Experiment::RateVsP,
        Experiment::OfdmRateVsM,
        Experiment::MetricsVsM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Convergence => "convergence",
            Experiment::RateVsMLowSnr => "rate_vs_M_lowsnr",
            Experiment::RateVsMHighSnr => "rate_vs_M_highsnr",
            Experiment::RateVsP => "rate_vs_P",
            Experiment::OfdmRateVsM => "ofdm_rate_vs_M",
            Experiment::MetricsVsM => "metrics_vs_M",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::Convergence => "rate after each outer iteration (sweep value = iteration index)",
            Experiment::RateVsMLowSnr => "rate and strongest eigenchannel power versus M, far receiver",
            Experiment::RateVsMHighSnr => "rate, total power and condition number versus M, near receiver",
            Experiment::RateVsP => "rate versus transmit power in dBm",
            Experiment::OfdmRateVsM => "MIMO-OFDM rate versus M",
            Experiment::MetricsVsM => "effective-channel metrics versus M",
        }
    }

    pub fn is_ofdm(self) -> bool {
        self == Experiment::OfdmRateVsM
    }

    fn sweeps_m(self) -> bool {
        matches!(
            self,
            Experiment::RateVsMLowSnr | Experiment::RateVsMHighSnr | Experiment::OfdmRateVsM | Experiment::MetricsVsM
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    ProposedFlat,
    LowSnr,
    PowerMax,
    HeuristicPower,
    FixedQ,
    RandomPhase,
    NoIrs,
    Miso,
    Simo,
    ProposedOfdm,
    OfdmUpperBound,
    OfdmHeuristic,
    OfdmRandomPhase,
    OfdmNoIrs,
    OfdmFixedQ,
}

impl Scheme {
    pub const ALL: [Scheme; 15] = [
        Scheme::ProposedFlat,
        Scheme::LowSnr,
        Scheme::PowerMax,
        Scheme::HeuristicPower,
        Scheme::FixedQ,
        Scheme::RandomPhase,
        Scheme::NoIrs,
        Scheme::Miso,
        Scheme::Simo,
        Scheme::ProposedOfdm,
        Scheme::OfdmUpperBound,
        Scheme::OfdmHeuristic,
        Scheme::OfdmRandomPhase,
        Scheme::OfdmNoIrs,
        Scheme::OfdmFixedQ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::ProposedFlat => "proposed_flat",
            Scheme::LowSnr => "low_snr",
            Scheme::PowerMax => "power_max",
            Scheme::HeuristicPower => "heuristic_power",
            Scheme::FixedQ => "fixed_Q",
            Scheme::RandomPhase => "random_phase",
            Scheme::NoIrs => "no_irs",
            Scheme::Miso => "miso",
            Scheme::Simo => "simo",
            Scheme::ProposedOfdm => "proposed_ofdm",
            Scheme::OfdmUpperBound => "ofdm_upper_bound",
            Scheme::OfdmHeuristic => "ofdm_heuristic",
            Scheme::OfdmRandomPhase => "ofdm_random_phase",
            Scheme::OfdmNoIrs => "ofdm_no_irs",
            Scheme::OfdmFixedQ => "ofdm_fixed_Q",
        }
    }

    pub fn is_ofdm(self) -> bool {
        matches!(
            self,
            Scheme::ProposedOfdm
                | Scheme::OfdmUpperBound
                | Scheme::OfdmHeuristic
                | Scheme::OfdmRandomPhase
                | Scheme::OfdmNoIrs
                | Scheme::OfdmFixedQ
        )
    }

    /// Schemes with an iterative trace, usable in the convergence experiment.
    pub fn has_trace(self) -> bool {
        matches!(
            self,
            Scheme::ProposedFlat | Scheme::LowSnr | Scheme::FixedQ | Scheme::Miso | Scheme::Simo
        )
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Scheme::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown scheme `{s}` (known: {})", known.join(", ")))
            })
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.name().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub nt: usize,
    pub nr: usize,
    /// Surface size for experiments that do not sweep `M`.
    #[serde(default)]
    pub m: usize,
    #[serde(default = "default_p_dbm")]
    pub p_dbm: f64,
    #[serde(default = "default_noise_dbm")]
    pub noise_dbm: f64,
}

fn default_p_dbm() -> f64 {
    30.0
}

fn default_noise_dbm() -> f64 {
    -90.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmBlock {
    pub n_f: usize,
    pub n: usize,
    pub mu: usize,
    pub taps: TapCounts,
}

fn default_realizations() -> usize {
    20
}

fn default_rician() -> RicianConfig {
    RicianConfig::rayleigh()
}

fn default_path_loss() -> PathLossModel {
    toml::from_str("").expect("path-loss defaults")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: Experiment,
    /// `M` values, or `P` in dBm for `rate_vs_P`; unused by `convergence`.
    #[serde(default)]
    pub sweep: Vec<f64>,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub system: SystemConfig,
    pub geometry: GeometryConfig,
    #[serde(default = "default_path_loss")]
    pub path_loss: PathLossModel,
    #[serde(default = "default_rician")]
    pub rician: RicianConfig,
    #[serde(default)]
    pub algorithm: AlgoConfig,
    #[serde(default)]
    pub ofdm: Option<OfdmBlock>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Full-scale Monte-Carlo settings: 100 restarts and 100 realizations.
    pub fn apply_paper_scale(&mut self) {
        self.algorithm.restarts = 100;
        self.realizations = 100;
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.experiment_id;
        if self.realizations == 0 {
            return config("realizations must be at least 1");
        }
        if self.schemes.is_empty() {
            return config("schemes must not be empty");
        }
        let s = &self.system;
        if s.nt == 0 || s.nr == 0 {
            return config("system.nt and system.nr must be at least 1");
        }
        if !s.p_dbm.is_finite() || !s.noise_dbm.is_finite() {
            return config("system.p_dbm and system.noise_dbm must be finite");
        }
        if id != Experiment::Convergence && self.sweep.is_empty() {
            return config(format!("experiment {id} needs a non-empty sweep"));
        }
        if id.sweeps_m() {
            if let Some(v) = self.sweep.iter().find(|v| !(v.is_finite() && **v >= 0.0 && v.fract() == 0.0)) {
                return config(format!("sweep values for {id} are surface sizes; got {v}"));
            }
        } else if let Some(v) = self.sweep.iter().find(|v| !v.is_finite()) {
            return config(format!("sweep values must be finite; got {v}"));
        }
        for &k in &self.schemes {
            if k.is_ofdm() != id.is_ofdm() {
                return config(format!("scheme {k} does not apply to experiment {id}"));
            }
            if id == Experiment::Convergence && !k.has_trace() {
                return config(format!("scheme {k} has no iteration trace for the convergence experiment"));
            }
            if k == Scheme::Miso && s.nr != 1 {
                return config("scheme miso needs system.nr = 1");
            }
            if k == Scheme::Simo && s.nt != 1 {
                return config("scheme simo needs system.nt = 1");
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(k) = self.schemes.iter().find(|k| !seen.insert(**k)) {
            return config(format!("scheme {k} listed twice"));
        }
        self.geometry.validate()?;
        self.path_loss.validate()?;
        self.rician.validate()?;
        self.algorithm.validate()?;
        match (&self.ofdm, id.is_ofdm()) {
            (None, true) => return config(format!("experiment {id} needs an [ofdm] block")),
            (Some(_), false) => return config(format!("experiment {id} does not use an [ofdm] block")),
            (Some(o), true) => {
                self.ofdm_config(o, s.p_dbm).validate()?;
                if o.taps.l_d == 0 || o.taps.l_ti == 0 || o.taps.l_ir == 0 {
                    return config("ofdm.taps counts must be at least 1");
                }
                if o.n < o.taps.max() {
                    return config(format!("ofdm.n = {} is below the longest tap list ({})", o.n, o.taps.max()));
                }
            }
            (None, false) => {}
        }
        Ok(())
    }

    /// Non-fatal findings, such as a cyclic prefix shorter than the effective channel.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(o) = &self.ofdm {
            if !self.ofdm_config(o, self.system.p_dbm).prefix_covers(o.taps.effective_max()) {
                out.push(format!(
                    "cyclic prefix {} is shorter than the effective impulse response ({} taps)",
                    o.mu,
                    o.taps.effective_max()
                ));
            }
        }
        out
    }

    /// Seed of realization `r`; channels and restarts both derive from it.
    pub fn realization_seed(&self, r: usize) -> u64 {
        derive_seed(self.master_seed, r as u64)
    }

    fn dims(&self, m: usize) -> Dims {
        Dims {
            nt: self.system.nt,
            nr: self.system.nr,
            m,
        }
    }

    /// Frequency-flat channels of realization `r` with `m` surface elements.
    pub fn flat_channels(&self, m: usize, r: usize) -> FlatChannelSet {
        draw_flat_channels(&self.geometry, &self.path_loss, &self.rician, self.dims(m), self.realization_seed(r))
    }

    /// Per-subcarrier channels of realization `r` with `m` surface elements.
    pub fn freq_channels(&self, o: &OfdmBlock, m: usize, r: usize) -> Result<FreqChannelSet> {
        let gains = LinkGains::new(&link_geometry(&self.geometry), &self.path_loss);
        let td = draw_selective_channels(&gains, o.taps, self.dims(m), self.realization_seed(r))?;
        to_frequency_domain(&td, o.n)
    }

    /// OFDM settings at transmit power `p_dbm`, noise scaled down by `N_f`.
    pub fn ofdm_config(&self, o: &OfdmBlock, p_dbm: f64) -> OfdmConfig {
        OfdmConfig {
            n_f: o.n_f,
            n: o.n,
            mu: o.mu,
            sigma_bar2: dbm_to_watts(self.system.noise_dbm - 10.0 * (o.n_f as f64).log10()),
            p: dbm_to_watts(p_dbm),
        }
    }
}

/// One CSV row. Metric columns are empty for convergence rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment_id: Experiment,
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub realization_index: usize,
    pub seed: u64,
    pub rate: f64,
    pub metrics: Option<RowMetrics>,
    pub outer_iters: Option<usize>,
    pub wall_ms: Option<f64>,
}

/// Effective-channel metrics; OFDM rows average over subcarriers and report the smallest rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMetrics {
    pub channel_total_power_db: f64,
    pub strongest_eig_power_db: f64,
    pub condition_number: f64,
    pub rank: usize,
}

pub const CSV_HEADER: &str = "experiment_id,scheme,sweep_value,realization_index,seed,rate,channel_total_power,strongest_eig_power,condition_number,rank,outer_iters,wall_ms";

fn sci(x: f64) -> String {
    format!("{x:.9e}")
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        let (tp, sp, cn, rk) = match &self.metrics {
            Some(m) => (
                sci(m.channel_total_power_db),
                sci(m.strongest_eig_power_db),
                sci(m.condition_number),
                m.rank.to_string(),
            ),
            None => Default::default(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment_id,
            self.scheme,
            self.sweep_value,
            self.realization_index,
            self.seed,
            sci(self.rate),
            tp,
            sp,
            cn,
            rk,
            self.outer_iters.map(|v| v.to_string()).unwrap_or_default(),
            self.wall_ms.map(sci).unwrap_or_default(),
        )
    }
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(128 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_csv(rows))?;
    Ok(())
}

fn metrics_of(hs: &[ComplexMatrix], algo: &AlgoConfig) -> Result<RowMetrics> {
    let ms = hs
        .iter()
        .map(|h| channel_metrics(h, &algo.tolerances))
        .collect::<Result<Vec<_>>>()?;
    let n = ms.len() as f64;
    Ok(RowMetrics {
        channel_total_power_db: watts_to_db(ms.iter().map(|m| m.total_power).sum::<f64>() / n),
        strongest_eig_power_db: watts_to_db(ms.iter().map(|m| m.strongest_eigenchannel_power).sum::<f64>() / n),
        condition_number: ms.iter().map(|m| m.condition_number).sum::<f64>() / n,
        rank: ms.iter().map(|m| m.rank).min().unwrap_or(0),
    })
}

/// Result of one scheme on one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOutcome {
    pub rate: f64,
    /// Effective channel(s) the rate was computed on, one per subcarrier for OFDM.
    pub channels: Vec<ComplexMatrix>,
    pub outer_iters: Option<usize>,
    pub rate_trace: Option<Vec<f64>>,
}

fn flat_outcome(ch: &FlatChannelSet, refl: &Reflection, p: f64, sigma2: f64) -> Result<SchemeOutcome> {
    let h = effective_channel(ch, refl)?;
    Ok(SchemeOutcome {
        rate: waterfill(&h, p, sigma2)?.rate,
        channels: vec![h],
        outer_iters: None,
        rate_trace: None,
    })
}

/// Runs a flat-fading scheme. Reflection-only schemes are scored with the water-filled
/// covariance of their effective channel; `fixed_Q` keeps the direct-channel covariance.
pub fn run_flat_scheme(scheme: Scheme, ch: &FlatChannelSet, p: f64, sigma2: f64, algo: &AlgoConfig) -> Result<SchemeOutcome> {
    let traced = |rep: crate::opt_flat::OptReport, rate: f64| -> Result<SchemeOutcome> {
        Ok(SchemeOutcome {
            rate,
            channels: vec![effective_channel(ch, &rep.reflection)?],
            outer_iters: Some(rep.outer_iters),
            rate_trace: Some(rep.rate_trace),
        })
    };
    match scheme {
        Scheme::ProposedFlat => {
            let rep = optimize(ch, p, sigma2, algo)?;
            let rate = rep.rate;
            traced(rep, rate)
        }
        Scheme::LowSnr => {
            let (rep, _) = low_snr_optimize(ch, p, sigma2, algo)?;
            let rate = waterfill(&effective_channel(ch, &rep.reflection)?, p, sigma2)?.rate;
            traced(rep, rate)
        }
        Scheme::PowerMax => {
            let sweep = power_max_optimize(ch, algo)?;
            let mut out = flat_outcome(ch, &sweep.reflection, p, sigma2)?;
            out.outer_iters = Some(sweep.outer_iters);
            Ok(out)
        }
        Scheme::HeuristicPower => flat_outcome(ch, &heuristic_power_max(ch), p, sigma2),
        Scheme::FixedQ => {
            let direct = waterfill(&ch.h, p, sigma2)?;
            let rep = optimize_fixed_q(ch, &direct.covariance, sigma2, algo)?;
            let rate = rep.rate;
            traced(rep, rate)
        }
        Scheme::RandomPhase => {
            let refl = Reflection::random(ch.m(), &mut stream_rng(algo.seed, RESTART_STREAM));
            flat_outcome(ch, &refl, p, sigma2)
        }
        Scheme::NoIrs => flat_outcome(ch, &Reflection::new(ComplexVector::zeros(ch.m())), p, sigma2),
        Scheme::Miso => {
            let rep = miso_optimize(ch, p, sigma2, algo)?;
            let rate = rep.rate;
            traced(rep, rate)
        }
        Scheme::Simo => {
            let rep = simo_optimize(ch, p, sigma2, algo)?;
            let rate = rep.rate;
            traced(rep, rate)
        }
        k => config(format!("scheme {k} needs a frequency-selective channel")),
    }
}

/// Runs an OFDM scheme; `rate` includes the cyclic-prefix factor and the `1/N` average.
pub fn run_ofdm_scheme(scheme: Scheme, fc: &FreqChannelSet, cfg: &OfdmConfig, algo: &AlgoConfig) -> Result<SchemeOutcome> {
    let m = fc.dims().m;
    let fixed = |refl: Reflection| -> Result<SchemeOutcome> {
        Ok(SchemeOutcome {
            rate: ofdm_rate(ofdm_waterfilled_sum_rate(fc, &refl, cfg)?, cfg),
            channels: effective_channels(fc, &refl)?,
            outer_iters: None,
            rate_trace: None,
        })
    };
    match scheme {
        Scheme::ProposedOfdm => {
            let rep = algorithm2(fc, cfg, algo)?;
            Ok(SchemeOutcome {
                rate: rep.inner.rate,
                channels: effective_channels(fc, &rep.inner.reflection)?,
                outer_iters: Some(rep.inner.outer_iters),
                rate_trace: Some(rep.inner.rate_trace),
            })
        }
        Scheme::OfdmUpperBound => {
            let (sum, refls) = upper_bound_per_subcarrier(fc, cfg, algo)?;
            let channels = fc
                .subcarriers
                .iter()
                .zip(&refls)
                .map(|(sc, r)| effective_channel(sc, r))
                .collect::<Result<Vec<_>>>()?;
            Ok(SchemeOutcome {
                rate: ofdm_rate(sum, cfg),
                channels,
                outer_iters: None,
                rate_trace: None,
            })
        }
        Scheme::OfdmHeuristic => fixed(ofdm_heuristic_power(fc)),
        Scheme::OfdmRandomPhase => fixed(Reflection::random(m, &mut stream_rng(algo.seed, RESTART_STREAM))),
        Scheme::OfdmNoIrs => fixed(Reflection::new(ComplexVector::zeros(m))),
        Scheme::OfdmFixedQ => {
            let (refl, sum) = ofdm_fixed_q(fc, cfg, algo)?;
            Ok(SchemeOutcome {
                rate: ofdm_rate(sum, cfg),
                channels: effective_channels(fc, &refl)?,
                outer_iters: None,
                rate_trace: None,
            })
        }
        k => config(format!("scheme {k} needs a frequency-flat channel")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Fill the `wall_ms` column.
    pub timing: bool,
}

/// Runs every (sweep value, realization, scheme) triple; rows come back sorted in that order.
pub fn run(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let sweep: Vec<f64> = if cfg.experiment_id == Experiment::Convergence {
        vec![cfg.system.m as f64]
    } else {
        cfg.sweep.clone()
    };
    let jobs: Vec<(usize, usize)> = (0..sweep.len())
        .flat_map(|i| (0..cfg.realizations).map(move |r| (i, r)))
        .collect();
    let chunks = jobs
        .par_iter()
        .map(|&(i, r)| run_job(cfg, sweep[i], r, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

enum Drawn {
    Flat(FlatChannelSet),
    Freq(FreqChannelSet, OfdmConfig),
}

fn run_job(cfg: &ExperimentConfig, value: f64, realization: usize, opts: RunOptions) -> Result<Vec<ResultRow>> {
    let id = cfg.experiment_id;
    let seed = cfg.realization_seed(realization);
    let algo = AlgoConfig { seed, ..cfg.algorithm };
    let m = if id.sweeps_m() { value as usize } else { cfg.system.m };
    let p_dbm = if id == Experiment::RateVsP { value } else { cfg.system.p_dbm };
    let channels = match &cfg.ofdm {
        Some(o) => {
            let fc = cfg.freq_channels(o, m, realization)?;
            Drawn::Freq(fc, cfg.ofdm_config(o, p_dbm))
        }
        None => Drawn::Flat(cfg.flat_channels(m, realization)),
    };
    let sigma2 = dbm_to_watts(cfg.system.noise_dbm);
    let p = dbm_to_watts(p_dbm);
    let mut rows = Vec::new();
    for &scheme in &cfg.schemes {
        let start = Instant::now();
        let out = match &channels {
            Drawn::Flat(ch) => run_flat_scheme(scheme, ch, p, sigma2, &algo)?,
            Drawn::Freq(fc, ocfg) => run_ofdm_scheme(scheme, fc, ocfg, &algo)?,
        };
        let wall_ms = opts.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
        if id == Experiment::Convergence {
            let trace = out.rate_trace.unwrap_or_else(|| vec![out.rate]);
            for (k, rate) in trace.into_iter().enumerate() {
                rows.push(ResultRow {
                    experiment_id: id,
                    scheme,
                    sweep_value: k as f64,
                    realization_index: realization,
                    seed,
                    rate,
                    metrics: None,
                    outer_iters: out.outer_iters,
                    wall_ms,
                });
            }
        } else {
            rows.push(ResultRow {
                experiment_id: id,
                scheme,
                sweep_value: value,
                realization_index: realization,
                seed,
                rate: out.rate.max(0.0),
                metrics: Some(metrics_of(&out.channels, &algo)?),
                outer_iters: out.outer_iters,
                wall_ms,
            });
        }
    }
    Ok(rows)
}

/// Mean and standard error of the rate for one (scheme, sweep value).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Groups rows by (scheme, sweep value); convergence rows group by iteration index.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Scheme, u64), (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let key = (r.scheme, r.sweep_value.to_bits());
        groups.entry(key).or_insert((r.sweep_value, Vec::new())).1.push(r.rate);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((scheme, _), (sweep_value, v))| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            SummaryRow {
                scheme,
                sweep_value,
                count: v.len(),
                mean,
                std_error: (var / n).sqrt(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.sweep_value.total_cmp(&b.sweep_value).then(a.scheme.cmp(&b.scheme)));
    out
}

pub fn format_summary(summary: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {:>12} {:>6} {:>14} {:>12}", "scheme", "sweep", "n", "mean_rate", "std_err");
    for s in summary {
        let _ = writeln!(
            out,
            "{:<18} {:>12} {:>6} {:>14.6} {:>12.6}",
            s.scheme.name(),
            s.sweep_value,
            s.count,
            s.mean,
            s.std_error
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(extra: &str) -> String {
        format!(
            r#"
experiment_id = "rate_vs_M_highsnr"
sweep = [0, 4]
realizations = 2
master_seed = 7
schemes = ["proposed_flat", "no_irs"]
{extra}

[system]
nt = 2
nr = 2

[geometry]
d_bar_d = 170

[algorithm]
restarts = 2
"#
        )
    }

    #[test]
    fn dbm_conversions() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(-90.0) - 1e-12).abs() < 1e-27);
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn registry_names_round_trip() {
        assert_eq!(Scheme::ALL.len(), 15);
        for k in Scheme::ALL {
            assert_eq!(k.name().parse::<Scheme>().unwrap(), k);
        }
        assert!(matches!("nope".parse::<Scheme>(), Err(Error::Config(_))));
        for e in Experiment::ALL {
            let s = format!("experiment_id = \"{}\"", e.name());
            #[derive(Deserialize)]
            struct W {
                experiment_id: Experiment,
            }
            assert_eq!(toml::from_str::<W>(&s).unwrap().experiment_id, e);
        }
    }

    #[test]
    fn config_defaults_and_errors() {
        let cfg = ExperimentConfig::from_toml_str(&base_config("")).unwrap();
        assert_eq!(cfg.system.p_dbm, 30.0);
        assert_eq!(cfg.rician, RicianConfig::rayleigh());
        assert_eq!(cfg.path_loss.alpha_d, 3.5);
        assert!(ExperimentConfig::from_toml_str(&base_config("").replace("no_irs", "bogus")).is_err());
        assert!(ExperimentConfig::from_toml_str(&base_config("").replace("realizations = 2", "realizations = 0")).is_err());
        assert!(ExperimentConfig::from_toml_str(&base_config("").replace("no_irs", "ofdm_no_irs")).is_err());
        assert!(ExperimentConfig::from_toml_str(&base_config("").replace("no_irs", "miso")).is_err());
        assert!(ExperimentConfig::from_toml_str(&base_config("bogus_key = 1")).is_err());
    }

    #[test]
    fn infinite_rician_factor_parses() {
        let cfg = ExperimentConfig::from_toml_str(&base_config("").replace(
            "[algorithm]",
            "[rician]\nk_d = inf\nk_ti = 1.0\nk_ir = 0.0\n\n[algorithm]",
        ))
        .unwrap();
        assert_eq!(cfg.rician.k_d, crate::channel::RicianFactor::PureLos);
    }

    #[test]
    fn run_is_sorted_and_deterministic() {
        let cfg = ExperimentConfig::from_toml_str(&base_config("")).unwrap();
        let rows = run(&cfg, RunOptions::default()).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        let keys: Vec<_> = rows.iter().map(|r| (r.sweep_value.to_bits(), r.realization_index)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(to_csv(&rows), to_csv(&run(&cfg, RunOptions::default()).unwrap()));
        assert!(rows.iter().all(|r| r.rate >= 0.0 && r.wall_ms.is_none()));

        let no_irs: Vec<_> = rows.iter().filter(|r| r.scheme == Scheme::NoIrs).collect();
        for r in 0..2 {
            let at: Vec<_> = no_irs.iter().filter(|x| x.realization_index == r).collect();
            assert_eq!(at[0].rate, at[1].rate);
        }
        let s = summarize(&rows);
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|x| x.count == 2));
    }

    #[test]
    fn csv_layout() {
        let row = ResultRow {
            experiment_id: Experiment::RateVsP,
            scheme: Scheme::FixedQ,
            sweep_value: 40.0,
            realization_index: 3,
            seed: 9,
            rate: 12.5,
            metrics: None,
            outer_iters: Some(4),
            wall_ms: None,
        };
        assert_eq!(row.to_csv_line(), "rate_vs_P,fixed_Q,40,3,9,1.250000000e1,,,,,4,");
        let csv = to_csv(&[row]);
        assert!(csv.starts_with(CSV_HEADER));
        assert!(!csv.contains('\r'));
        assert_eq!(CSV_HEADER.split(',').count(), 12);
    }

    #[test]
    fn ofdm_noise_is_scaled_by_subcarrier_count() {
        let text = r#"
experiment_id = "ofdm_rate_vs_M"
sweep = [2]
realizations = 1
schemes = ["proposed_ofdm", "ofdm_no_irs"]

[system]
nt = 2
nr = 2

[geometry]
d_bar_d = 800

[ofdm]
n_f = 512
n = 8
mu = 128
taps = { l_d = 2, l_ti = 1, l_ir = 1 }
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let o = cfg.ofdm_config(cfg.ofdm.as_ref().unwrap(), 30.0);
        assert!((watts_to_db(o.sigma_bar2) + 30.0 - (-90.0 - 10.0 * 512f64.log10())).abs() < 1e-9);
        assert!(cfg.warnings().is_empty());
        let rows = run(&cfg, RunOptions { timing: true }).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.wall_ms.is_some()));
        assert!(rows[0].rate >= rows[1].rate);
    }

    #[test]
    fn convergence_rows_follow_the_trace() {
        let text = base_config("")
            .replace("rate_vs_M_highsnr", "convergence")
            .replace(", \"no_irs\"", "")
            .replace("nr = 2", "nr = 2\nm = 6");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let rows = run(&cfg, RunOptions::default()).unwrap();
        for r in 0..2 {
            let trace: Vec<f64> = rows.iter().filter(|x| x.realization_index == r).map(|x| x.rate).collect();
            assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
            assert_eq!(trace.len(), rows.iter().find(|x| x.realization_index == r).unwrap().outer_iters.unwrap() + 1);
        }
    }
}
