use std::fs;
use std::path::{Path, PathBuf};

use caf_core::causal::{build_network, MultilayerNetwork, NetworkConfig};
use caf_core::checkpoint::Checkpoint;
use caf_core::data::synth::{synth_generate, SynthSpec};
use caf_core::data::{make_windows, parse_csv, split, write_csv, Dataset, NormStats, SplitSpec, WindowSet};
use caf_core::evaluation::{
    compare_shift, evaluate_shift, evaluate_split, FixedMethod, Method, ModelMethod, PersistenceMethod,
    SeasonalNaiveMethod,
};
use caf_core::interpretability::{
    export_curves, export_heatmap, export_importance, export_timeline, importance_timeline, spatial_heatmap,
    temporal_weight_curves, variable_importance, Reduce, SpatialLayer,
};
use caf_core::model::{AttentionTrace, CausalForecaster, ModelConfig};
use caf_core::training::fit_from;
use caf_core::{Error, Result};
use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{EvaluateArgs, InterpretArgs, Layer, SplitMode, SynthArgs, TraceSplit, TrainArgs, What};

const SEASONAL_PERIOD: usize = 12;
/// Longest hole, in hours, filled by interpolation when loading data.
const MAX_GAP: usize = 6;

fn load_data(path: &Path, net: &MultilayerNetwork) -> Result<Dataset> {
    Ok(parse_csv(path, &net.variables())?.repair_gaps(MAX_GAP))
}

fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap())
        .map_err(|_| Error::Config(format!("cannot read {s:?} as a timestamp")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load_network(path: &Path) -> Result<MultilayerNetwork> {
    build_network(&NetworkConfig::load(path)?)
}

fn target_of(net: &MultilayerNetwork) -> Result<String> {
    net.target_name()
        .ok_or_else(|| Error::Config("network declares no target variable".into()))
}

fn windows(ds: &Dataset, stats: &NormStats, target: &str, cfg: &ModelConfig) -> Result<WindowSet> {
    make_windows(&ds.clone().with_stats(stats.clone())?, target, cfg.history, cfg.horizon, 1)
}

#[derive(Serialize)]
struct EventRecord {
    hour_index: usize,
    timestamp: String,
    magnitude: f64,
}

#[derive(Serialize)]
struct SynthRecord<'a> {
    seed: u64,
    hours: usize,
    spec: &'a SynthSpec,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::default();
    if let Some(s) = &args.start {
        spec.start = parse_timestamp(s)?;
    }
    if let Some(m) = args.shift {
        spec.shift_multiplier = m;
    }
    if let Some(r) = args.spike_rate {
        spec.spike_rate = r;
    }
    let (ds, events) = synth_generate(args.seed, args.hours, &spec)?;
    fs::create_dir_all(&args.out)?;
    write_csv(&ds, args.out.join("data.csv"))?;
    let events: Vec<EventRecord> = events
        .iter()
        .map(|e| EventRecord {
            hour_index: e.hour_index,
            timestamp: ds.timestamps()[e.hour_index]
                .format(caf_core::data::TIMESTAMP_FORMAT)
                .to_string(),
            magnitude: e.magnitude,
        })
        .collect();
    write_json(&args.out.join("events.json"), &events)?;
    fs::write(args.out.join("network.json"), SynthSpec::network().to_json() + "\n")?;
    write_json(
        &args.out.join("synth.json"),
        &SynthRecord {
            seed: args.seed,
            hours: args.hours,
            spec: &spec,
        },
    )?;
    println!(
        "wrote {} hours and {} spike events to {}",
        ds.len(),
        events.len(),
        args.out.display()
    );
    Ok(())
}

fn history_path(out: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| out.with_extension("history.csv"))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let (mut model, split_spec, previous, seed, mut tc) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if let Some(n) = &args.network {
                if load_network(n)? != build_network(&ck.network)? {
                    return Err(Error::Config(format!(
                        "{} differs from the network stored in {}",
                        n.display(),
                        path.display()
                    )));
                }
            }
            let tc = if args.config.is_some() { cfg.train.clone() } else { ck.train.clone() };
            (ck.forecaster()?, ck.split.clone(), Some(ck.outcome()?), ck.seed, tc)
        }
        None => {
            let path = args
                .network
                .as_ref()
                .ok_or_else(|| Error::Config("--network is required unless --resume is given".into()))?;
            let net = load_network(path)?;
            let seed = args.seed.unwrap_or(cfg.train.seed);
            let model = CausalForecaster::new(cfg.model.clone(), net, seed)?;
            (model, cfg.split.clone(), None, seed, cfg.train.clone())
        }
    };
    tc.seed = args.seed.unwrap_or(seed);

    let net = model.network().clone();
    let target = target_of(&net)?;
    let ds = load_data(&args.data, &net)?;
    let (train_ds, val_ds, _) = split(&ds, &split_spec)?;
    let stats = match model.stats() {
        Some(s) => s.clone(),
        None => NormStats::fit(&train_ds)?,
    };
    if model.stats().is_none() {
        model = model.with_stats(stats.clone())?;
    }
    let train_ws = windows(&train_ds, &stats, &target, model.config())?;
    let val_ws = windows(&val_ds, &stats, &target, model.config())?;
    log::info!(
        "training on {} windows, validating on {}, {} epochs",
        train_ws.len(),
        val_ws.len(),
        tc.epochs
    );

    let outcome = fit_from(&mut model, &train_ws, &val_ws, &tc, previous.as_ref())?;
    let ck = Checkpoint::new(seed, &model, &tc, &split_spec, &outcome)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ck.save(&args.out)?;
    let hist = history_path(&args.out, args.history);
    outcome.history.write_csv(&hist)?;
    let best = outcome.history.best().map_or(f64::NAN, |r| r.val_cql);
    println!(
        "best epoch {} (validation CQL {best:.6}), checkpoint {}, history {}",
        outcome.history.best_epoch,
        args.out.display(),
        hist.display()
    );
    Ok(())
}

/// Chronological split stored in the checkpoint, or the default one.
fn chronological_spec(stored: Option<&SplitSpec>) -> SplitSpec {
    match stored {
        Some(s @ (SplitSpec::Chronological { .. } | SplitSpec::ChronologicalFraction { .. })) => s.clone(),
        _ => SplitSpec::default(),
    }
}

fn shift_fraction(stored: Option<&SplitSpec>) -> f64 {
    match stored {
        Some(SplitSpec::MonthlyShift { validation_fraction }) => *validation_fraction,
        _ => match SplitSpec::monthly_shift() {
            SplitSpec::MonthlyShift { validation_fraction } => validation_fraction,
            _ => unreachable!(),
        },
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let ck = args.ckpt.as_ref().map(Checkpoint::load).transpose()?;
    let (net, model_cfg) = match &ck {
        Some(ck) => (build_network(&ck.network)?, ck.model.clone()),
        None => {
            let path = args
                .network
                .as_ref()
                .ok_or_else(|| Error::Config("--network is required without --ckpt".into()))?;
            (load_network(path)?, RunConfig::load(args.config.as_deref())?.model)
        }
    };
    let target = target_of(&net)?;
    let ds = load_data(&args.data, &net)?;
    let q = model_cfg.quantiles.clone();
    let stored = ck.as_ref().map(|c| &c.split);

    let persistence = PersistenceMethod { quantiles: q.clone() };
    let seasonal = SeasonalNaiveMethod {
        period: SEASONAL_PERIOD,
        quantiles: q.clone(),
    };
    let mut baselines: Vec<&dyn Method> = vec![&persistence];
    if model_cfg.history >= SEASONAL_PERIOD {
        baselines.push(&seasonal);
    } else {
        log::warn!("history {} is shorter than the seasonal period, seasonal naive skipped", model_cfg.history);
    }

    fs::create_dir_all(&args.out)?;
    let (json, text) = if args.split == SplitMode::Shift {
        let retrain = match (&ck, args.baselines_only) {
            (Some(ck), false) => Some(ModelMethod {
                name: "caf".into(),
                model: ck.model.clone(),
                train: ck.train.clone(),
                network: net.clone(),
                seed: ck.seed,
            }),
            _ => None,
        };
        let mut methods = baselines.clone();
        if let Some(m) = &retrain {
            methods.push(m);
        }
        let report = compare_shift(
            &methods,
            &ds,
            &chronological_spec(stored),
            shift_fraction(stored),
            &target,
            model_cfg.history,
            model_cfg.horizon,
            &q,
        )?;
        (serde_json::to_string_pretty(&report)?, report.to_text())
    } else {
        let fixed = match (&ck, args.baselines_only) {
            (Some(ck), false) => Some(FixedMethod {
                name: "caf".into(),
                model: ck.forecaster()?,
            }),
            _ => None,
        };
        let mut methods = baselines.clone();
        if let Some(m) = &fixed {
            methods.push(m);
        }
        let stats = ck.as_ref().map(|c| &c.stats);
        let report = match args.split {
            SplitMode::Chronological => evaluate_split(
                &methods,
                &ds,
                &chronological_spec(stored),
                &target,
                model_cfg.history,
                model_cfg.horizon,
                &q,
                stats,
            )?,
            _ => evaluate_shift(
                &methods,
                &ds,
                shift_fraction(stored),
                &target,
                model_cfg.history,
                model_cfg.horizon,
                &q,
                stats,
            )?,
        };
        (serde_json::to_string_pretty(&report)?, report.to_text())
    };
    fs::write(args.out.join("report.json"), json + "\n")?;
    fs::write(args.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn traces_of(model: &CausalForecaster, ws: &WindowSet) -> Result<Vec<AttentionTrace>> {
    ws.windows
        .par_iter()
        .map(|w| model.forward(w).map(|(_, t)| t))
        .collect()
}

pub fn interpret(args: InterpretArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.ckpt)?;
    let model = ck.forecaster()?;
    let net = model.network();
    let target = target_of(net)?;
    let labels = net.variables();
    let ds = load_data(&args.data, net)?;
    let spec = match args.split {
        TraceSplit::Chronological => chronological_spec(Some(&ck.split)),
        TraceSplit::MonthlyShift => SplitSpec::MonthlyShift {
            validation_fraction: shift_fraction(Some(&ck.split)),
        },
    };
    let (_, _, test) = split(&ds, &spec)?;
    let ws = windows(&test, &ck.stats, &target, &ck.model)?;
    let traces = traces_of(&model, &ws)?;
    let origin = traces
        .first()
        .map(|t| t.origin)
        .ok_or_else(|| Error::Data("test split yields no windows".into()))?;
    fs::create_dir_all(&args.out)?;

    let artifacts = match args.what {
        What::Heatmap => {
            let layer = match args.layer {
                Layer::First => SpatialLayer::First,
                Layer::Second => SpatialLayer::Second,
            };
            let reduce = args.index.map_or(Reduce::Mean, Reduce::Single);
            let h = spatial_heatmap(&traces, &labels, layer, reduce)?;
            let name = match (layer, reduce) {
                (SpatialLayer::First, Reduce::Mean) => "heatmap-first-mean",
                (SpatialLayer::First, Reduce::Single(_)) => "heatmap-first",
                (SpatialLayer::Second, Reduce::Mean) => "heatmap-second-mean",
                (SpatialLayer::Second, Reduce::Single(_)) => "heatmap-second",
            };
            export_heatmap(&h, name, &args.out)?
        }
        What::Importance => {
            let stats = variable_importance(&traces, &labels);
            for s in &stats {
                println!(
                    "{:<16} mean {:.4} std {:.4} q10 {:.4} q50 {:.4} q90 {:.4}",
                    s.variable, s.mean, s.std, s.q10, s.q50, s.q90
                );
            }
            export_importance(&stats, &origin, &args.out)?
        }
        What::Temporal => {
            let c = temporal_weight_curves(&traces, ck.model.history, ck.model.horizon)?;
            export_curves(&c, &origin, &args.out)?
        }
        What::Timeline => {
            let variable = args
                .variable
                .as_deref()
                .ok_or_else(|| Error::Config("--what timeline needs --variable".into()))?;
            let points = importance_timeline(&traces, &ws, variable)?;
            export_timeline(variable, &points, &args.out)?
        }
    };
    for f in &artifacts.files {
        println!("{}", f.display());
    }
    Ok(())
}
