//! Acceptance criteria 1-8. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and exits non-zero when any of them fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use caf_core::autodiff::Graph;
use caf_core::causal::{build_network, spatial_mask, ClusterDecl, MultilayerNetwork, NetworkConfig};
use caf_core::data::synth::{synth_generate, SynthSpec, DECOY, DRIVER, TARGET};
use caf_core::data::{make_windows, split, Dataset, NormStats, SplitSpec, WindowSet};
use caf_core::evaluation::{q_level_ql, q_rate, ForecastSet, Forecaster, Persistence};
use caf_core::gradcheck::grad_check;
use caf_core::interpretability::{spatial_heatmap, variable_importance, Reduce, SpatialLayer};
use caf_core::model::{AttentionTrace, CausalForecaster, ModelConfig};
use caf_core::rng::SplitMix64;
use caf_core::training::{
    composite_quantile_loss, fit, quantile_loss, window_loss, TrainConfig, TrainHistory,
};
use caf_core::Tensor;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_dataset(net: &MultilayerNetwork, seed: u64, n: usize) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let stamps = (0..n).map(|h| start + chrono::TimeDelta::hours(h as i64)).collect();
    let cols = net
        .variables()
        .iter()
        .map(|_| (0..n).map(|_| 3.0 * rng.normal()).collect())
        .collect();
    Dataset::new(stamps, net.variables(), cols).unwrap()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let net = build_network(&NetworkConfig::han_river()).unwrap();
    let p = net.p();
    let mask = spatial_mask(&net);
    let (b, tau) = (24, 6);
    let ds = random_dataset(&net, 1, 3000);
    let stats = NormStats::fit(&ds).unwrap();
    let ws = make_windows(&ds.with_stats(stats.clone()).unwrap(), "WL_B0", b, tau, 1).unwrap();
    let mut rng = SplitMix64::new(2);
    let mut violations = 0usize;
    let mut overflowed = 0usize;
    let settings = 1000;
    for s in 0..settings {
        let cfg = ModelConfig {
            history: b,
            horizon: tau,
            ..ModelConfig::default()
        };
        let mut model = CausalForecaster::new(cfg, net.clone(), s).unwrap();
        let scale = rng.uniform(0.1, 4.0);
        let spread = rng.uniform(0.0, 1.0);
        for (_, t) in model.params_mut().iter_mut() {
            for v in t.data_mut() {
                *v = *v * scale + spread * rng.normal();
            }
        }
        let model = model.with_stats(stats.clone()).unwrap();
        let w = &ws.windows[rng.below(ws.len())];
        let trace = match model.forward(w) {
            Ok((_, t)) => t,
            Err(_) => {
                overflowed += 1;
                continue;
            }
        };
        for a in trace.spatial_first.iter().chain(&trace.spatial_second) {
            for i in 0..p {
                for j in 0..p {
                    if !mask.permits(i, j) && a.get(i, j) != 0.0 {
                        violations += 1;
                    }
                }
            }
        }
        for a in [&trace.temporal_encoder, &trace.temporal_decoder] {
            for i in 0..a.rows() {
                for j in i + 1..a.cols() {
                    if a.get(i, j) != 0.0 {
                        violations += 1;
                    }
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        violations == 0 && overflowed == 0 && secs < 60.0,
        format!("{settings} settings on p={p}, {violations} non-zero forbidden cells, {overflowed} non-finite passes, {secs:.1} s"),
    )
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let decl = |name: &str, vars: &[&str]| ClusterDecl {
        name: name.into(),
        variables: vars.iter().map(|v| v.to_string()).collect(),
    };
    let net = build_network(&NetworkConfig {
        clusters: vec![decl("a", &["a"]), decl("b", &["b1", "b2"]), decl("c", &["c"])],
        edges: vec![("a".into(), "b".into()), ("a".into(), "c".into()), ("b".into(), "c".into())],
        target_variable: "c".into(),
    })
    .unwrap();
    let cfg = ModelConfig {
        history: 4,
        horizon: 2,
        quantiles: vec![0.25, 0.75],
        d1: 3,
        d2: 3,
        d3: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let model = CausalForecaster::new(cfg, net.clone(), 21).unwrap();
    let ds = random_dataset(&net, 4, 40);
    let ws = make_windows(&ds, "c", 4, 2, 5).unwrap();
    let batch: Vec<_> = ws.windows.iter().take(4).cloned().collect();
    let report = grad_check(model.params(), 1e-4, 1e-4, |g: &mut Graph, params| {
        let mut total = window_loss(&model, g, params, &batch[0], None)?;
        for w in &batch[1..] {
            let l = window_loss(&model, g, params, w, None)?;
            total = g.add(total, l)?;
        }
        Ok(total)
    })
    .unwrap();
    let secs = started.elapsed().as_secs_f64();
    outcome(
        report.passed() && secs < 60.0,
        format!(
            "{} entries, max relative error {:.2e} (tolerance 1e-4, worst {}[{}]), {secs:.1} s",
            report.entries_checked, report.max_rel_error, report.worst_param, report.worst_index
        ),
    )
}

fn mean_ql(sample: &[f64], c: f64, q: f64) -> f64 {
    sample.iter().map(|y| quantile_loss(*y, c, q).unwrap()).sum::<f64>() / sample.len() as f64
}

fn criterion_3() -> Outcome {
    let exact = quantile_loss(1.0, 0.0, 0.9).unwrap() == 0.9
        && quantile_loss(0.0, 1.0, 0.9).unwrap() == (0.9f64 - 1.0) * -1.0
        && quantile_loss(0.37, 0.37, 0.9).unwrap() == 0.0;
    let cql = composite_quantile_loss(
        &[vec![1.0, 1.0]],
        &[Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap()],
        &[0.5, 0.9],
    )
    .unwrap()
    .total;
    let cql_ok = (cql - 2.8).abs() < 1e-15;

    let mut rng = SplitMix64::new(33);
    let mut worst_gap = f64::NEG_INFINITY;
    for s in 0..20 {
        let n = 1 + rng.below(50);
        let sample: Vec<f64> = (0..n).map(|_| (rng.normal() * 4.0).round() / 2.0).collect();
        let q = [0.1, 0.25, 0.5, 0.7, 0.9][s % 5];
        let mut sorted = sample.clone();
        sorted.sort_by(f64::total_cmp);
        let k = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
        let emp = sorted[k - 1];
        let at_emp = mean_ql(&sample, emp, q);
        let lo = sorted[0] - 1.0;
        let hi = sorted[n - 1] + 1.0;
        let grid = (0..=2000).map(|i| lo + (hi - lo) * i as f64 / 2000.0);
        let best = grid.chain(sample.iter().copied()).map(|c| mean_ql(&sample, c, q)).fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.max(at_emp - best);
    }
    outcome(
        exact && cql_ok && worst_gap <= 1e-12,
        format!("exact examples {exact}, CQL 2.8 case {cql_ok}, empirical quantile excess over scan minimum {worst_gap:.1e}"),
    )
}

struct SyntheticRun {
    model: CausalForecaster,
    history: TrainHistory,
    test: WindowSet,
    train: WindowSet,
    validation: WindowSet,
    seconds: f64,
}

const SEED: u64 = 7;
const QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

fn synthetic_windows() -> (MultilayerNetwork, NormStats, WindowSet, WindowSet, WindowSet) {
    let (ds, _) = synth_generate(SEED, 4000, &SynthSpec::default()).unwrap();
    let net = build_network(&SynthSpec::network()).unwrap();
    let ds = ds.select_columns(&net.variables()).unwrap();
    let (tr, va, te) = split(&ds, &SplitSpec::default()).unwrap();
    let stats = NormStats::fit(&tr).unwrap();
    let w = |d: &Dataset| make_windows(&d.clone().with_stats(stats.clone()).unwrap(), TARGET, 24, 6, 1).unwrap();
    let (a, b, c) = (w(&tr), w(&va), w(&te));
    (net, stats, a, b, c)
}

fn synthetic_config(spatial_mask: bool) -> ModelConfig {
    ModelConfig {
        history: 24,
        horizon: 6,
        quantiles: QUANTILES.to_vec(),
        spatial_mask,
        ..ModelConfig::default()
    }
}

fn synthetic_run() -> SyntheticRun {
    let started = Instant::now();
    let (net, stats, train, validation, test) = synthetic_windows();
    let mut model = CausalForecaster::new(synthetic_config(true), net, SEED)
        .unwrap()
        .with_stats(stats)
        .unwrap();
    let tc = TrainConfig {
        epochs: 30,
        seed: SEED,
        ..TrainConfig::default()
    };
    let out = fit(&mut model, &train, &validation, &tc).unwrap();
    SyntheticRun {
        model,
        history: out.history,
        test,
        train,
        validation,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn test_set(forecasts: Vec<Tensor>, ws: &WindowSet) -> ForecastSet {
    let targets = ws.windows.iter().map(|w| ws.target_raw(w).unwrap()).collect();
    ForecastSet::new(QUANTILES.to_vec(), forecasts, targets).unwrap()
}

fn criterion_4(run: &SyntheticRun) -> Outcome {
    let initial = run.history.records[0].train_cql;
    let last = run.history.records.last().unwrap();
    let ratio = last.train_cql / initial;
    let model = test_set(run.model.predict(&run.test).unwrap(), &run.test);
    let persistence = Persistence::fit(&run.train, &QUANTILES);
    let base = test_set(persistence.predict(&run.test).unwrap(), &run.test);
    let ql = q_level_ql(&model, 0.5).unwrap().average;
    let pql = q_level_ql(&base, 0.5).unwrap().average;
    outcome(
        ratio <= 0.5 && ql < pql && run.seconds < 600.0,
        format!(
            "train CQL {initial:.4} -> {:.4} at epoch {} (ratio {ratio:.3}), test 0.5-level QL {ql:.4} vs persistence {pql:.4}, {} train / {} validation / {} test windows, {:.0} s",
            last.train_cql,
            last.epoch,
            run.train.len(),
            run.validation.len(),
            run.test.len(),
            run.seconds
        ),
    )
}

fn criterion_5(run: &SyntheticRun) -> Outcome {
    let set = test_set(run.model.predict(&run.test).unwrap(), &run.test);
    let rates: Vec<f64> = QUANTILES.iter().map(|q| q_rate(&set, *q).unwrap()).collect();
    let worst = QUANTILES.iter().zip(&rates).map(|(q, r)| (q - r).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 0.10,
        format!(
            "q-Rates {:?} for q {:?}, worst |q - q-Rate| {worst:.3}",
            rates.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            QUANTILES
        ),
    )
}

fn traces(model: &CausalForecaster, ws: &WindowSet) -> Vec<AttentionTrace> {
    ws.windows.iter().map(|w| model.forward(w).unwrap().1).collect()
}

fn criterion_6(run: &SyntheticRun) -> Outcome {
    let labels = run.model.network().variables();
    let stats = variable_importance(&traces(&run.model, &run.test), &labels);
    let median = |name: &str| stats.iter().find(|s| s.variable == name).unwrap().q50;
    let (driver, decoy) = (median(DRIVER), median(DECOY));
    let ratio = driver / decoy;
    outcome(
        ratio >= 1.2,
        format!("median importance {DRIVER} {driver:.4}, {DECOY} {decoy:.4}, ratio {ratio:.2}"),
    )
}

fn caf(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_caf"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let config = r#"{"model":{"history":24,"horizon":6,"quantiles":[0.1,0.5,0.9]},"train":{"epochs":3}}"#;
    fs::write(dir.join("config.json"), config).map_err(|e| e.to_string())?;
    caf(&["synth", "--seed", "7", "--hours", "1500", "--out", "data"], dir)?;
    caf(
        &["train", "--data", "data/data.csv", "--network", "data/network.json", "--config", "config.json", "--seed", "7", "--out", "run/checkpoint.json"],
        dir,
    )?;
    caf(&["evaluate", "--ckpt", "run/checkpoint.json", "--data", "data/data.csv", "--out", "eval"], dir)?;
    for what in ["heatmap", "importance", "temporal"] {
        caf(&["interpret", "--ckpt", "run/checkpoint.json", "--data", "data/data.csv", "--what", what, "--out", "interpret"], dir)?;
    }
    let mut files = Vec::new();
    for sub in ["data", "run", "eval", "interpret"] {
        let mut entries: Vec<_> = fs::read_dir(dir.join(sub)).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            let name = format!("{sub}/{}", p.file_name().unwrap().to_string_lossy());
            files.push((name, fs::read(&p).map_err(|e| e.to_string())?));
        }
    }
    Ok(files)
}

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (fa, fb) = match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("pipeline failed: {e}")),
    };
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|((na, da), (nb, db))| na != nb || da != db)
        .map(|((n, _), _)| n.as_str())
        .collect();
    let has_all = ["run/checkpoint.json", "eval/report.json", "eval/report.txt"]
        .iter()
        .all(|f| names.contains(f))
        && names.iter().any(|n| n.starts_with("interpret/heatmap"));
    outcome(
        fa.len() == fb.len() && differing.is_empty() && has_all,
        format!(
            "{} files compared byte for byte, {} differ {:?}, {:.0} s",
            fa.len(),
            differing.len(),
            differing,
            started.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_8(run: &SyntheticRun) -> Outcome {
    let (net, stats, train, validation, test) = synthetic_windows();
    let mut unmasked = CausalForecaster::new(synthetic_config(false), net.clone(), SEED)
        .unwrap()
        .with_stats(stats)
        .unwrap();
    let tc = TrainConfig {
        epochs: 5,
        seed: SEED,
        ..TrainConfig::default()
    };
    fit(&mut unmasked, &train, &validation, &tc).unwrap();
    let labels = net.variables();
    let mask = spatial_mask(&net);
    let masked_map = spatial_heatmap(&traces(&run.model, &test), &labels, SpatialLayer::First, Reduce::Mean).unwrap();
    let open_map = spatial_heatmap(&traces(&unmasked, &test), &labels, SpatialLayer::First, Reduce::Mean).unwrap();
    let p = labels.len();
    let mut forbidden = 0;
    let mut opened = 0;
    let mut largest = 0.0f64;
    let mut masked_leak = false;
    for i in 0..p {
        for j in 0..p {
            if !mask.permits(i, j) {
                forbidden += 1;
                masked_leak |= masked_map.values.get(i, j) != 0.0;
                let v = open_map.values.get(i, j);
                if v > 0.0 {
                    opened += 1;
                    largest = largest.max(v);
                }
            }
        }
    }
    outcome(
        opened > 0 && !masked_leak,
        format!("{opened} of {forbidden} masked cells carry weight without the mask (largest mean weight {largest:.4}), masked run leaks {masked_leak}"),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "mask fidelity", criterion_1()),
        (2, "gradient correctness", criterion_2()),
        (3, "quantile-loss identities", criterion_3()),
    ];
    let run = synthetic_run();
    results.push((4, "synthetic training", criterion_4(&run)));
    results.push((5, "calibration", criterion_5(&run)));
    results.push((6, "interpretability recovery", criterion_6(&run)));
    results.push((7, "determinism", criterion_7()));
    results.push((8, "ablation hook", criterion_8(&run)));

    let mut failed = 0;
    for (n, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("[{tag}] criterion {n} {name}: {}", o.detail);
    }
    println!(
        "acceptance: {} passed, {failed} failed, {:.0} s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
