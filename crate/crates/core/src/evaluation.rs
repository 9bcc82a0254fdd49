//! Test-set scores, reference forecasters and the stable versus shifted
//! split comparison.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::causal::MultilayerNetwork;
use crate::data::{make_windows, split, split_by_year, Dataset, NormStats, SplitSpec, WindowSet};
use crate::error::{Error, Result};
use crate::model::{CausalForecaster, ModelConfig};
use crate::tensor::Tensor;
use crate::training::{fit, quantile_loss, TrainConfig};

/// Forecasts in original units with the matching observations. Entry
/// `forecasts[w]` is `horizon x |Q|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub quantiles: Vec<f64>,
    pub forecasts: Vec<Tensor>,
    pub targets: Vec<Vec<f64>>,
}

impl ForecastSet {
    pub fn new(quantiles: Vec<f64>, forecasts: Vec<Tensor>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if forecasts.len() != targets.len() || forecasts.is_empty() {
            return Err(Error::shape(format!(
                "{} forecasts for {} target windows",
                forecasts.len(),
                targets.len()
            )));
        }
        let tau = targets[0].len();
        for (f, y) in forecasts.iter().zip(&targets) {
            if y.len() != tau || f.shape() != (tau, quantiles.len()) {
                return Err(Error::shape(format!(
                    "forecast {:?} for {} targets and {} levels",
                    f.shape(),
                    y.len(),
                    quantiles.len()
                )));
            }
        }
        Ok(Self {
            quantiles,
            forecasts,
            targets,
        })
    }

    pub fn horizon(&self) -> usize {
        self.targets[0].len()
    }

    fn level(&self, q: f64) -> Result<usize> {
        self.quantiles
            .iter()
            .position(|x| (x - q).abs() < 1e-12)
            .ok_or_else(|| Error::config(format!("quantile {q} was not forecast ({:?})", self.quantiles)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QlScore {
    pub total: f64,
    /// `total / (windows * horizon)`.
    pub average: f64,
    /// Totals per horizon step; they sum to `total`.
    pub per_horizon: Vec<f64>,
}

/// Quantile loss of the level-`q` forecasts summed over windows and steps.
pub fn q_level_ql(set: &ForecastSet, q: f64) -> Result<QlScore> {
    let j = set.level(q)?;
    let tau = set.horizon();
    let mut per_horizon = vec![0.0; tau];
    for (f, y) in set.forecasts.iter().zip(&set.targets) {
        for k in 0..tau {
            per_horizon[k] += quantile_loss(y[k], f.get(k, j), q)?;
        }
    }
    let total: f64 = per_horizon.iter().sum();
    Ok(QlScore {
        total,
        average: total / (set.targets.len() * tau) as f64,
        per_horizon,
    })
}

/// Share of observations strictly below the level-`q` forecast.
pub fn q_rate(set: &ForecastSet, q: f64) -> Result<f64> {
    let j = set.level(q)?;
    let tau = set.horizon();
    let below = set
        .forecasts
        .iter()
        .zip(&set.targets)
        .map(|(f, y)| (0..tau).filter(|&k| y[k] < f.get(k, j)).count())
        .sum::<usize>();
    Ok(below as f64 / (set.targets.len() * tau) as f64)
}

/// Standard normal quantile.
pub fn gaussian_quantile(q: f64) -> f64 {
    if q == 0.5 {
        return 0.0;
    }
    Normal::standard().inverse_cdf(q)
}

/// Something that produces original-unit forecasts for a window set.
pub trait Forecaster: Sync {
    fn predict(&self, windows: &WindowSet) -> Result<Vec<Tensor>>;
}

/// Produces a fitted [`Forecaster`] from training and validation windows.
pub trait Method: Sync {
    fn name(&self) -> String;
    fn fit(&self, train: &WindowSet, validation: &WindowSet) -> Result<Box<dyn Forecaster>>;
}

fn pooled_std(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn offsets(quantiles: &[f64], sigma: f64) -> Vec<f64> {
    quantiles.iter().map(|&q| gaussian_quantile(q) * sigma).collect()
}

/// Last observation plus a Gaussian offset, `y_u + z_q * sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persistence {
    pub quantiles: Vec<f64>,
    /// Standard deviation of `y_{u+k} - y_u` pooled over training windows
    /// and steps.
    pub sigma: f64,
}

impl Persistence {
    pub fn fit(train: &WindowSet, quantiles: &[f64]) -> Self {
        let residuals: Vec<f64> = train
            .windows
            .iter()
            .flat_map(|w| {
                let last = train.last_observed_raw(w);
                train.target_raw(w).unwrap_or_default().into_iter().map(move |y| y - last)
            })
            .collect();
        Self {
            quantiles: quantiles.to_vec(),
            sigma: pooled_std(&residuals),
        }
    }
}

impl Forecaster for Persistence {
    fn predict(&self, ws: &WindowSet) -> Result<Vec<Tensor>> {
        let off = offsets(&self.quantiles, self.sigma);
        Ok(ws
            .windows
            .iter()
            .map(|w| {
                let last = ws.last_observed_raw(w);
                Tensor::from_fn(ws.horizon, off.len(), |_, j| last + off[j])
            })
            .collect())
    }
}

/// Value one period earlier plus a Gaussian offset. Steps further ahead than
/// one period reuse the latest observed cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalNaive {
    pub period: usize,
    pub quantiles: Vec<f64>,
    pub sigma: f64,
}

fn seasonal_source(history: usize, period: usize, k: usize) -> usize {
    // index into the history of the value `period * ceil(k / period)` before u + k
    let back = period * k.div_ceil(period);
    history - 1 + k - back
}

impl SeasonalNaive {
    pub fn fit(train: &WindowSet, period: usize, quantiles: &[f64]) -> Result<Self> {
        if period == 0 || train.history < period {
            return Err(Error::config(format!(
                "seasonal period {period} needs a history of at least that length (have {})",
                train.history
            )));
        }
        let mut residuals = Vec::new();
        for w in &train.windows {
            let hist = train.target_history_raw(w);
            if let Some(y) = train.target_raw(w) {
                for (k, yk) in y.iter().enumerate() {
                    residuals.push(yk - hist[seasonal_source(train.history, period, k + 1)]);
                }
            }
        }
        Ok(Self {
            period,
            quantiles: quantiles.to_vec(),
            sigma: pooled_std(&residuals),
        })
    }
}

impl Forecaster for SeasonalNaive {
    fn predict(&self, ws: &WindowSet) -> Result<Vec<Tensor>> {
        if ws.history < self.period {
            return Err(Error::config(format!(
                "seasonal period {} exceeds history {}",
                self.period, ws.history
            )));
        }
        let off = offsets(&self.quantiles, self.sigma);
        Ok(ws
            .windows
            .iter()
            .map(|w| {
                let hist = ws.target_history_raw(w);
                Tensor::from_fn(ws.horizon, off.len(), |k, j| {
                    hist[seasonal_source(ws.history, self.period, k + 1)] + off[j]
                })
            })
            .collect())
    }
}

impl Forecaster for CausalForecaster {
    fn predict(&self, ws: &WindowSet) -> Result<Vec<Tensor>> {
        ws.windows
            .par_iter()
            .map(|w| self.forward(w).map(|(f, _)| f.values))
            .collect()
    }
}

pub struct PersistenceMethod {
    pub quantiles: Vec<f64>,
}

impl Method for PersistenceMethod {
    fn name(&self) -> String {
        "persistence".into()
    }

    fn fit(&self, train: &WindowSet, _: &WindowSet) -> Result<Box<dyn Forecaster>> {
        Ok(Box::new(Persistence::fit(train, &self.quantiles)))
    }
}

pub struct SeasonalNaiveMethod {
    pub period: usize,
    pub quantiles: Vec<f64>,
}

impl Method for SeasonalNaiveMethod {
    fn name(&self) -> String {
        format!("seasonal-naive-{}", self.period)
    }

    fn fit(&self, train: &WindowSet, _: &WindowSet) -> Result<Box<dyn Forecaster>> {
        Ok(Box::new(SeasonalNaive::fit(train, self.period, &self.quantiles)?))
    }
}

/// An already trained forecaster, used as is on every split.
pub struct FixedMethod {
    pub name: String,
    pub model: CausalForecaster,
}

impl Method for FixedMethod {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn fit(&self, _: &WindowSet, _: &WindowSet) -> Result<Box<dyn Forecaster>> {
        Ok(Box::new(self.model.clone()))
    }
}

/// Trains a fresh forecaster on every split it is given.
pub struct ModelMethod {
    pub name: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub network: MultilayerNetwork,
    pub seed: u64,
}

impl Method for ModelMethod {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn fit(&self, train: &WindowSet, validation: &WindowSet) -> Result<Box<dyn Forecaster>> {
        let mut model = CausalForecaster::new(self.model.clone(), self.network.clone(), self.seed)?
            .with_stats(train.stats.clone())?;
        fit(&mut model, train, validation, &self.train)?;
        Ok(Box::new(model))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub q: f64,
    pub average_ql: f64,
    pub total_ql: f64,
    pub per_horizon_ql: Vec<f64>,
    pub q_rate: f64,
    /// `|q - q_rate|`
    pub calibration_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    pub levels: Vec<LevelScore>,
}

impl MethodScores {
    pub fn level(&self, q: f64) -> Option<&LevelScore> {
        self.levels.iter().find(|l| (l.q - q).abs() < 1e-12)
    }
}

pub fn score(method: &str, set: &ForecastSet) -> Result<MethodScores> {
    let mut levels = Vec::with_capacity(set.quantiles.len());
    for &q in &set.quantiles {
        let ql = q_level_ql(set, q)?;
        let rate = q_rate(set, q)?;
        levels.push(LevelScore {
            q,
            average_ql: ql.average,
            total_ql: ql.total,
            per_horizon_ql: ql.per_horizon,
            q_rate: rate,
            calibration_error: (q - rate).abs(),
        });
    }
    Ok(MethodScores {
        method: method.to_string(),
        levels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub windows: usize,
    pub horizon: usize,
    pub methods: Vec<MethodScores>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodScores> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "split {} ({} windows, horizon {})",
            self.split, self.windows, self.horizon
        );
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>12} {:>10} {:>10}",
            "method", "q", "avg QL", "q-Rate", "|q-rate|"
        );
        for m in &self.methods {
            for l in &m.levels {
                let _ = writeln!(
                    out,
                    "{:<24} {:>6.2} {:>12.6} {:>10.4} {:>10.4}",
                    m.method, l.q, l.average_ql, l.q_rate, l.calibration_error
                );
            }
        }
        out
    }
}

/// Windows of `train`, `validation` and `test` all normalised with `stats`,
/// or with statistics fitted on `train` when `stats` is `None`.
pub struct SplitWindows {
    pub train: WindowSet,
    pub validation: WindowSet,
    pub test: WindowSet,
}

pub fn window_splits(
    train: &Dataset,
    validation: &Dataset,
    test: &Dataset,
    target: &str,
    history: usize,
    horizon: usize,
    stats: Option<&NormStats>,
) -> Result<SplitWindows> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(train)?,
    };
    let mk = |ds: &Dataset| -> Result<WindowSet> {
        make_windows(&ds.clone().with_stats(stats.clone())?, target, history, horizon, 1)
    };
    Ok(SplitWindows {
        train: mk(train)?,
        validation: mk(validation)?,
        test: mk(test)?,
    })
}

/// Fits every method on `train`/`validation` and scores it on `test`.
pub fn evaluate_methods(methods: &[&dyn Method], windows: &SplitWindows, quantiles: &[f64]) -> Result<Vec<(String, ForecastSet)>> {
    let targets: Vec<Vec<f64>> = windows
        .test
        .windows
        .iter()
        .map(|w| windows.test.target_raw(w).ok_or_else(|| Error::data("test window without targets")))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(methods.len());
    for m in methods {
        let fitted = m.fit(&windows.train, &windows.validation)?;
        let forecasts = fitted.predict(&windows.test)?;
        out.push((m.name(), ForecastSet::new(quantiles.to_vec(), forecasts, targets.clone())?));
    }
    Ok(out)
}

fn report(split: &str, sets: &[(String, ForecastSet)]) -> Result<EvalReport> {
    let first = sets.first().ok_or_else(|| Error::config("no methods to evaluate"))?;
    Ok(EvalReport {
        split: split.to_string(),
        windows: first.1.targets.len(),
        horizon: first.1.horizon(),
        methods: sets.iter().map(|(n, s)| score(n, s)).collect::<Result<_>>()?,
    })
}

/// Scores on a single split. `stats` as in [`window_splits`].
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split(
    methods: &[&dyn Method],
    ds: &Dataset,
    spec: &SplitSpec,
    target: &str,
    history: usize,
    horizon: usize,
    quantiles: &[f64],
    stats: Option<&NormStats>,
) -> Result<EvalReport> {
    let (train, val, test) = split(ds, spec)?;
    let windows = window_splits(&train, &val, &test, target, history, horizon, stats)?;
    let sets = evaluate_methods(methods, &windows, quantiles)?;
    report(split_name(spec), &sets)
}

fn split_name(spec: &SplitSpec) -> &'static str {
    match spec {
        SplitSpec::Chronological { .. } | SplitSpec::ChronologicalFraction { .. } => "chronological",
        SplitSpec::MonthlyShift { .. } => "monthly-shift",
    }
}

/// Scores under the monthly shift protocol: each year is fitted on its own
/// May-June rows and tested on its July-August rows; test forecasts of all
/// years are pooled before scoring.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_shift(
    methods: &[&dyn Method],
    ds: &Dataset,
    validation_fraction: f64,
    target: &str,
    history: usize,
    horizon: usize,
    quantiles: &[f64],
    stats: Option<&NormStats>,
) -> Result<EvalReport> {
    let spec = SplitSpec::MonthlyShift { validation_fraction };
    let mut pooled: Vec<(String, ForecastSet)> = Vec::new();
    let mut years = 0;
    for (year, part) in split_by_year(ds) {
        let Ok((train, val, test)) = split(&part, &spec) else {
            log::debug!("year {year} lacks summer months, skipped");
            continue;
        };
        let windows = window_splits(&train, &val, &test, target, history, horizon, stats)?;
        let sets = evaluate_methods(methods, &windows, quantiles)?;
        years += 1;
        if pooled.is_empty() {
            pooled = sets;
        } else {
            for ((_, acc), (_, s)) in pooled.iter_mut().zip(sets) {
                acc.forecasts.extend(s.forecasts);
                acc.targets.extend(s.targets);
            }
        }
    }
    if years == 0 {
        return Err(Error::config("no year holds both May-June and July-August data"));
    }
    report("monthly-shift", &pooled)
}

/// Ratio of shifted to stable average loss above which a method is flagged.
pub const DEGRADATION_RATIO: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub method: String,
    pub q: f64,
    pub stable_ql: f64,
    pub shift_ql: f64,
    pub ratio: f64,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub stable: EvalReport,
    pub shift: EvalReport,
    pub degradation: Vec<Degradation>,
}

impl ShiftReport {
    pub fn to_text(&self) -> String {
        let mut out = self.stable.to_text();
        out.push('\n');
        out.push_str(&self.shift.to_text());
        out.push('\n');
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>12} {:>12} {:>8} {:>9}",
            "method", "q", "stable QL", "shift QL", "ratio", "degraded"
        );
        for d in &self.degradation {
            let _ = writeln!(
                out,
                "{:<24} {:>6.2} {:>12.6} {:>12.6} {:>8.3} {:>9}",
                d.method, d.q, d.stable_ql, d.shift_ql, d.ratio, if d.degraded { "yes" } else { "no" }
            );
        }
        out
    }
}

/// Runs the same methods under the chronological split `stable` and under
/// the monthly shift protocol, and flags every method and level whose
/// average loss grows by more than [`DEGRADATION_RATIO`]. Every split is
/// normalised with statistics of its own training part.
#[allow(clippy::too_many_arguments)]
pub fn compare_shift(
    methods: &[&dyn Method],
    ds: &Dataset,
    stable: &SplitSpec,
    validation_fraction: f64,
    target: &str,
    history: usize,
    horizon: usize,
    quantiles: &[f64],
) -> Result<ShiftReport> {
    let stable = evaluate_split(methods, ds, stable, target, history, horizon, quantiles, None)?;
    let shift = evaluate_shift(methods, ds, validation_fraction, target, history, horizon, quantiles, None)?;
    let mut degradation = Vec::new();
    for (a, b) in stable.methods.iter().zip(&shift.methods) {
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            let ratio = if la.average_ql > 0.0 {
                lb.average_ql / la.average_ql
            } else if lb.average_ql > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
            degradation.push(Degradation {
                method: a.method.clone(),
                q: la.q,
                stable_ql: la.average_ql,
                shift_ql: lb.average_ql,
                ratio,
                degraded: ratio > DEGRADATION_RATIO,
            });
        }
    }
    Ok(ShiftReport {
        stable,
        shift,
        degradation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::hourly;
    use proptest::prelude::*;

    fn set(q: Vec<f64>, f: Vec<Vec<Vec<f64>>>, y: Vec<Vec<f64>>) -> ForecastSet {
        ForecastSet::new(q, f.iter().map(|w| Tensor::from_rows(w).unwrap()).collect(), y).unwrap()
    }

    #[test]
    fn ql_examples() {
        let perfect = set(vec![0.5], vec![vec![vec![1.0]], vec![vec![2.0]]], vec![vec![1.0], vec![2.0]]);
        assert_eq!(q_level_ql(&perfect, 0.5).unwrap().total, 0.0);

        let over = set(vec![0.9], vec![vec![vec![2.0], vec![3.0]]], vec![vec![1.0, 2.0]]);
        assert!((q_level_ql(&over, 0.9).unwrap().average - 0.1).abs() < 1e-12);

        let signs = set(vec![0.5], vec![vec![vec![0.0]], vec![vec![2.0]]], vec![vec![1.0], vec![1.0]]);
        assert!((q_level_ql(&signs, 0.5).unwrap().total - 1.0).abs() < 1e-15);

        assert!(matches!(q_level_ql(&signs, 0.7), Err(Error::Config(_))));
        assert!(matches!(q_rate(&signs, 0.7), Err(Error::Config(_))));
    }

    #[test]
    fn rate_examples() {
        let above = set(vec![0.5], vec![vec![vec![5.0], vec![5.0]]], vec![vec![1.0, 2.0]]);
        assert_eq!(q_rate(&above, 0.5).unwrap(), 1.0);
        let below = set(vec![0.5], vec![vec![vec![-5.0], vec![-5.0]]], vec![vec![1.0, 2.0]]);
        assert_eq!(q_rate(&below, 0.5).unwrap(), 0.0);
        let tie = set(vec![0.5], vec![vec![vec![1.0]]], vec![vec![1.0]]);
        assert_eq!(q_rate(&tie, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn empirical_quantile_rate() {
        let mut rng = crate::rng::SplitMix64::new(3);
        let n = 200;
        let ys: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut sorted = ys.clone();
        sorted.sort_by(f64::total_cmp);
        for q in [0.1, 0.5, 0.9] {
            let c = sorted[(q * n as f64 - 1e-9).ceil() as usize - 1];
            let s = set(vec![q], ys.iter().map(|_| vec![vec![c]]).collect(), ys.iter().map(|&y| vec![y]).collect());
            assert!((q_rate(&s, q).unwrap() - q).abs() <= 1.0 / n as f64 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rate_and_loss_invariants(
            ys in proptest::collection::vec(-3.0f64..3.0, 6),
            fs in proptest::collection::vec(-3.0f64..3.0, 6),
            c in 0.0f64..2.0,
        ) {
            let f: Vec<Vec<Vec<f64>>> = fs.chunks(2).map(|w| w.iter().map(|v| vec![*v - 0.5, *v, *v + 0.5]).collect()).collect();
            let y: Vec<Vec<f64>> = ys.chunks(2).map(|w| w.to_vec()).collect();
            let s = set(vec![0.1, 0.5, 0.9], f.clone(), y.clone());
            let r: Vec<f64> = [0.1, 0.5, 0.9].iter().map(|&q| q_rate(&s, q).unwrap()).collect();
            prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(r[0] <= r[1] && r[1] <= r[2]);
            let ql = q_level_ql(&s, 0.5).unwrap();
            prop_assert!((ql.per_horizon.iter().sum::<f64>() - ql.total).abs() < 1e-12);
            let shifted: Vec<Vec<Vec<f64>>> = f.iter().map(|w| w.iter().map(|row| row.iter().map(|v| v + c).collect()).collect()).collect();
            let s2 = set(vec![0.1, 0.5, 0.9], shifted, y);
            prop_assert!(q_rate(&s2, 0.5).unwrap() >= r[1]);
        }
    }

    fn windows_of(values: Vec<f64>, history: usize, horizon: usize) -> WindowSet {
        let n = values.len();
        let ds = Dataset::new(hourly(n), vec!["y".into()], vec![values]).unwrap();
        make_windows(&ds, "y", history, horizon, 1).unwrap()
    }

    #[test]
    fn persistence_examples() {
        let flat = windows_of(vec![2.5; 30], 4, 3);
        let p = Persistence::fit(&flat, &[0.1, 0.5, 0.9]);
        assert_eq!(p.sigma, 0.0);
        let f = p.predict(&flat).unwrap();
        assert!(f.iter().all(|t| t.data().iter().all(|v| *v == 2.5)));

        let ramp = windows_of((0..40).map(|i| 0.5 * i as f64).collect(), 5, 4);
        let p = Persistence::fit(&ramp, &[0.5]);
        let f = p.predict(&ramp).unwrap();
        for (w, t) in ramp.windows.iter().zip(&f) {
            let y = ramp.target_raw(w).unwrap();
            assert_eq!(t.get(0, 0), ramp.last_observed_raw(w));
            for k in 0..4 {
                assert!((y[k] - t.get(k, 0) - 0.5 * (k + 1) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seasonal_examples() {
        let periodic: Vec<f64> = (0..80).map(|i| ((i % 12) as f64).powi(2)).collect();
        let ws = windows_of(periodic, 12, 5);
        let s = SeasonalNaive::fit(&ws, 12, &[0.5]).unwrap();
        let set_ = ForecastSet::new(
            vec![0.5],
            s.predict(&ws).unwrap(),
            ws.windows.iter().map(|w| ws.target_raw(w).unwrap()).collect(),
        )
        .unwrap();
        assert_eq!(q_level_ql(&set_, 0.5).unwrap().total, 0.0);

        // period equal to history: step 1 uses the oldest row
        let w = &ws.windows[0];
        assert_eq!(s.predict(&ws).unwrap()[0].get(0, 0), ws.target_history_raw(w)[0]);

        let flat = windows_of(vec![1.0; 40], 12, 3);
        let q = [0.1, 0.5, 0.9];
        let a = SeasonalNaive::fit(&flat, 12, &q).unwrap().predict(&flat).unwrap();
        let b = Persistence::fit(&flat, &q).predict(&flat).unwrap();
        assert_eq!(a, b);

        let short = windows_of(vec![1.0; 40], 6, 3);
        assert!(matches!(SeasonalNaive::fit(&short, 12, &q), Err(Error::Config(_))));
    }

    #[test]
    fn median_offset_is_zero() {
        assert_eq!(gaussian_quantile(0.5), 0.0);
        assert!((gaussian_quantile(0.9) - 1.2815515655446004).abs() < 1e-9);
    }

    struct Oracle;

    impl Forecaster for Oracle {
        fn predict(&self, ws: &WindowSet) -> Result<Vec<Tensor>> {
            Ok(ws
                .windows
                .iter()
                .map(|w| {
                    let y = ws.target_raw(w).unwrap();
                    Tensor::from_fn(ws.horizon, 3, |k, _| y[k])
                })
                .collect())
        }
    }

    impl Method for Oracle {
        fn name(&self) -> String {
            "oracle".into()
        }

        fn fit(&self, _: &WindowSet, _: &WindowSet) -> Result<Box<dyn Forecaster>> {
            Ok(Box::new(Oracle))
        }
    }

    #[test]
    fn shift_comparison_report() {
        use crate::data::synth::{synth_generate, SynthSpec, TARGET};
        let spec = SynthSpec {
            shift_multiplier: 4.0,
            ..SynthSpec::default()
        };
        let (ds, _) = synth_generate(2, 24 * 123, &spec).unwrap();
        let q = [0.1, 0.5, 0.9];
        let persistence = PersistenceMethod { quantiles: q.to_vec() };
        let seasonal = SeasonalNaiveMethod {
            period: 12,
            quantiles: q.to_vec(),
        };
        let methods: [&dyn Method; 3] = [&Oracle, &persistence, &seasonal];
        let r = compare_shift(&methods, &ds, &SplitSpec::default(), 0.1, TARGET, 24, 6, &q).unwrap();
        assert_eq!(r.stable.split, "chronological");
        assert_eq!(r.shift.split, "monthly-shift");
        assert_eq!(r.degradation.len(), 9);
        let oracle = r.shift.method("oracle").unwrap();
        assert!(oracle.levels.iter().all(|l| l.average_ql == 0.0 && l.q_rate == 0.0));
        for d in &r.degradation {
            assert_eq!(d.degraded, d.ratio > DEGRADATION_RATIO);
        }
        // more summer rain makes persistence worse off the training months
        let p50 = r.degradation.iter().find(|d| d.method == "persistence" && d.q == 0.5).unwrap();
        assert!(p50.degraded, "{p50:?}");
        let text = r.to_text();
        assert!(text.contains("seasonal-naive-12") && text.contains("degraded"));
        let back: ShiftReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
