use std::path::PathBuf;

use irs_core::channel::{draw_flat_channels, Dims, GeometryConfig, PathLossModel, RicianConfig};
use irs_core::harness::{dbm_to_watts, run, summarize, ExperimentConfig, RunOptions, Scheme};
use irs_core::mimo::{channel_metrics, effective_channel, waterfill};
use irs_core::opt_flat::{optimize, AlgoConfig};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn bundled_configs_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 7);
}

#[test]
fn surface_improves_physical_link() {
    let geom = GeometryConfig::with_distance(600.0);
    let pl: PathLossModel = toml::from_str("").unwrap();
    let dims = Dims { nt: 4, nr: 4, m: 40 };
    let (p, s2) = (dbm_to_watts(30.0), dbm_to_watts(-90.0));
    for seed in 0..5 {
        let ch = draw_flat_channels(&geom, &pl, &RicianConfig::rayleigh(), dims, seed);
        let rep = optimize(&ch, p, s2, &AlgoConfig { seed, ..AlgoConfig::default() }).unwrap();
        let direct = waterfill(&ch.h, p, s2).unwrap().rate;
        assert!(rep.rate > direct);
        assert!(rep.reflection.is_unit_modulus(1e-12));
        let h = effective_channel(&ch, &rep.reflection).unwrap();
        let m = channel_metrics(&h, &AlgoConfig::default().tolerances).unwrap();
        assert!(m.strongest_eigenchannel_power <= m.total_power);
        assert!(m.condition_number >= 1.0);
    }
}

#[test]
fn no_irs_ignores_surface_size() {
    let mut cfg = ExperimentConfig::load(&configs_dir().join("fig5.cfg")).unwrap();
    cfg.sweep = vec![0.0, 40.0];
    cfg.realizations = 3;
    cfg.schemes = vec![Scheme::NoIrs];
    let rows = run(&cfg, RunOptions::default()).unwrap();
    for r in 0..3 {
        let rates: Vec<f64> = rows.iter().filter(|x| x.realization_index == r).map(|x| x.rate).collect();
        assert_eq!(rates.len(), 2);
        assert_eq!(rates[0], rates[1]);
    }
}

#[test]
fn convergence_experiment_is_monotone() {
    let cfg = ExperimentConfig::load(&configs_dir().join("fig3.cfg")).unwrap();
    let rows = run(&cfg, RunOptions::default()).unwrap();
    assert!(rows.len() >= 2);
    assert!(rows.windows(2).all(|w| w[1].rate >= w[0].rate - 1e-9));
    let s = summarize(&rows);
    assert_eq!(s.len(), rows.len());
}

#[test]
fn ofdm_experiment_orders_bound_and_benchmarks() {
    let mut cfg = ExperimentConfig::load(&configs_dir().join("fig7a.cfg")).unwrap();
    cfg.sweep = vec![10.0];
    cfg.realizations = 4;
    let rows = run(&cfg, RunOptions::default()).unwrap();
    for r in 0..4 {
        let rate = |s: Scheme| rows.iter().find(|x| x.realization_index == r && x.scheme == s).unwrap().rate;
        assert!(rate(Scheme::OfdmUpperBound) >= rate(Scheme::ProposedOfdm) - 1e-9);
        assert!(rate(Scheme::ProposedOfdm) >= rate(Scheme::OfdmNoIrs));
    }
}
