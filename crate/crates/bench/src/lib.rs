//! Fixtures shared by the benchmarks.

use caf_core::causal::{build_network, MultilayerNetwork, NetworkConfig};
use caf_core::data::{make_windows, Dataset, NormStats, WindowSet};
use caf_core::model::{CausalForecaster, ModelConfig};
use caf_core::rng::SplitMix64;
use chrono::{NaiveDate, TimeDelta};

pub fn han_river() -> MultilayerNetwork {
    build_network(&NetworkConfig::han_river()).expect("built-in network is valid")
}

/// Gaussian noise for every variable of `net`, hourly from 2021-05-01.
pub fn noise_dataset(net: &MultilayerNetwork, hours: usize, seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let start = NaiveDate::from_ymd_opt(2021, 5, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let stamps = (0..hours).map(|h| start + TimeDelta::hours(h as i64)).collect();
    let cols = net
        .variables()
        .iter()
        .map(|_| (0..hours).map(|_| rng.normal()).collect())
        .collect();
    Dataset::new(stamps, net.variables(), cols).expect("hourly grid")
}

/// A freshly initialised model on the river network with `history`-step
/// windows over noise.
pub fn river_fixture(history: usize, horizon: usize) -> (CausalForecaster, WindowSet) {
    let net = han_river();
    let ds = noise_dataset(&net, history + horizon + 64, 1);
    let stats = NormStats::fit(&ds).expect("non-empty");
    let target = net.target_name().expect("target declared");
    let cfg = ModelConfig {
        history,
        horizon,
        ..ModelConfig::default()
    };
    let model = CausalForecaster::new(cfg, net, 0)
        .and_then(|m| m.with_stats(stats.clone()))
        .expect("valid config");
    let windows = make_windows(&ds.with_stats(stats).expect("same columns"), &target, history, horizon, 8)
        .expect("enough rows");
    (model, windows)
}
