use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::causal::{ClusterDecl, NetworkConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

pub const DRIVER: &str = "rain";
pub const DECOY: &str = "decoy";
pub const TARGET: &str = "level";

/// Variable order of the generated dataset.
pub const VARIABLES: [&str; 6] = ["rain", "tide", "dam_inflow", "dam_outflow", "level", "decoy"];

/// One driver spike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub hour_index: usize,
    pub magnitude: f64,
}

/// Parameters of the synthetic river. With `e` the rain spikes, `m` the dam
/// inflow, `a1` the tide, `a2` the dam outflow, `t` the level and `c` the
/// decoy, each hour draws
///
/// ```text
/// e[h]  = Exp(spike_mean) with probability spike_rate, else 0
/// m[h]  = alpha * sum_l k_l e[h-l]                     + 0.1 noise eps
/// a1[h] = 0.9 a1[h-1]                                  + 0.3 noise eps
/// a2[h] = 0.8 m[h-1]                                   + 0.1 noise eps
/// t[h]  = beta * sum_l k_l m[h-l] + gamma * sum_l k_l a1[h-l]
///         + amplitude sin(2 pi h / 12)                 + 0.1 noise eps
/// c[h]  = noise eps
/// ```
///
/// with `k_l = decay^(l - min_lag)` for `l` in `min_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub start: NaiveDateTime,
    pub spike_rate: f64,
    pub spike_mean: f64,
    /// Spike rate multiplier applied in July and August.
    pub shift_multiplier: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub amplitude: f64,
    pub noise: f64,
    pub min_lag: usize,
    pub max_lag: usize,
    pub decay: f64,
    /// Spikes added on top of the random ones.
    pub planted: Vec<SpikeEvent>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2021, 5, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            spike_rate: 0.1,
            spike_mean: 3.0,
            shift_multiplier: 1.0,
            alpha: 1.0,
            beta: 0.6,
            gamma: 0.5,
            amplitude: 1.0,
            noise: 1.0,
            min_lag: 1,
            max_lag: 6,
            decay: 0.6,
            planted: Vec::new(),
        }
    }
}

impl SynthSpec {
    pub fn kernel(&self) -> Vec<f64> {
        (self.min_lag..=self.max_lag)
            .map(|l| self.decay.powi((l - self.min_lag) as i32))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.spike_rate)
            && self.spike_mean > 0.0
            && self.shift_multiplier >= 0.0
            && self.noise >= 0.0
            && self.min_lag >= 1
            && self.max_lag >= self.min_lag;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid synthetic settings {self:?}")))
        }
    }

    /// Network matching the generator: rain feeds the dam and the river,
    /// tide and dam feed the river, the decoy is declared as a river parent
    /// although it has no effect.
    pub fn network() -> NetworkConfig {
        let decl = |name: &str, vars: &[&str]| ClusterDecl {
            name: name.into(),
            variables: vars.iter().map(|v| v.to_string()).collect(),
        };
        let edge = |a: &str, b: &str| (a.to_string(), b.to_string());
        NetworkConfig {
            clusters: vec![
                decl("rain", &["rain"]),
                decl("tide", &["tide"]),
                decl("dam", &["dam_inflow", "dam_outflow"]),
                decl("river", &["level"]),
                decl("decoy", &["decoy"]),
            ],
            edges: vec![
                edge("rain", "dam"),
                edge("rain", "river"),
                edge("tide", "river"),
                edge("dam", "river"),
                edge("decoy", "river"),
            ],
            target_variable: TARGET.into(),
        }
    }
}

fn lagged(series: &[f64], h: usize, kernel: &[f64], min_lag: usize) -> f64 {
    kernel
        .iter()
        .enumerate()
        .filter_map(|(j, k)| {
            let l = min_lag + j;
            (h >= l).then(|| k * series[h - l])
        })
        .sum()
}

/// Deterministic in `(seed, n_hours, spec)`.
pub fn synth_generate(seed: u64, n_hours: usize, spec: &SynthSpec) -> Result<(Dataset, Vec<SpikeEvent>)> {
    spec.validate()?;
    if n_hours == 0 {
        return Err(Error::config("n_hours must be positive"));
    }
    let mut rng = SplitMix64::new(derive_seed(seed, "synth"));
    let kernel = spec.kernel();
    let timestamps: Vec<NaiveDateTime> = (0..n_hours)
        .map(|h| spec.start + TimeDelta::hours(h as i64))
        .collect();
    let mut e = vec![0.0; n_hours];
    let mut tide = vec![0.0; n_hours];
    let mut m = vec![0.0; n_hours];
    let mut a2 = vec![0.0; n_hours];
    let mut t = vec![0.0; n_hours];
    let mut c = vec![0.0; n_hours];
    let mut events = Vec::new();

    for h in 0..n_hours {
        let rate = if matches!(timestamps[h].month(), 7 | 8) {
            (spec.spike_rate * spec.shift_multiplier).min(1.0)
        } else {
            spec.spike_rate
        };
        // fixed draw order: spike, magnitude, then one normal per channel
        let spike = rng.next_f64() < rate;
        let magnitude = rng.exponential(spec.spike_mean);
        let eps: [f64; 5] = std::array::from_fn(|_| rng.normal());

        if spike {
            e[h] += magnitude;
        }
        for p in spec.planted.iter().filter(|p| p.hour_index == h) {
            e[h] += p.magnitude;
        }
        if e[h] != 0.0 {
            events.push(SpikeEvent {
                hour_index: h,
                magnitude: e[h],
            });
        }
        m[h] = spec.alpha * lagged(&e, h, &kernel, spec.min_lag) + 0.1 * spec.noise * eps[0];
        tide[h] = if h > 0 { 0.9 * tide[h - 1] } else { 0.0 } + 0.3 * spec.noise * eps[1];
        a2[h] = if h > 0 { 0.8 * m[h - 1] } else { 0.0 } + 0.1 * spec.noise * eps[2];
        let phase = 2.0 * std::f64::consts::PI * (h % 12) as f64 / 12.0;
        t[h] = spec.beta * lagged(&m, h, &kernel, spec.min_lag)
            + spec.gamma * lagged(&tide, h, &kernel, spec.min_lag)
            + spec.amplitude * phase.sin()
            + 0.1 * spec.noise * eps[3];
        c[h] = spec.noise * eps[4];
    }

    let variables = VARIABLES.iter().map(|v| v.to_string()).collect();
    let ds = Dataset::new(timestamps, variables, vec![e, tide, m, a2, t, c])?;
    Ok((ds, events))
}
