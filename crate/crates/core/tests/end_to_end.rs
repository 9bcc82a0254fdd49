use caf_core::autodiff::Graph;
use caf_core::causal::{build_network, spatial_mask, ClusterDecl, MultilayerNetwork, NetworkConfig};
use caf_core::data::{make_windows, Dataset, WindowSet};
use caf_core::gradcheck::grad_check;
use caf_core::model::{Arrangement, CausalForecaster, ModelConfig};
use caf_core::rng::SplitMix64;
use caf_core::training::window_loss;
use chrono::{NaiveDate, TimeDelta};

fn tiny_network() -> MultilayerNetwork {
    let decl = |name: &str, vars: &[&str]| ClusterDecl {
        name: name.into(),
        variables: vars.iter().map(|v| v.to_string()).collect(),
    };
    build_network(&NetworkConfig {
        clusters: vec![decl("up", &["u"]), decl("mid", &["m1", "m2"]), decl("down", &["y"])],
        edges: vec![
            ("up".into(), "mid".into()),
            ("up".into(), "down".into()),
            ("mid".into(), "down".into()),
        ],
        target_variable: "y".into(),
    })
    .unwrap()
}

fn random_windows(net: &MultilayerNetwork, seed: u64, n: usize, b: usize, tau: usize) -> WindowSet {
    let mut rng = SplitMix64::new(seed);
    let start = NaiveDate::from_ymd_opt(2021, 3, 30).unwrap().and_hms_opt(20, 0, 0).unwrap();
    let stamps = (0..n).map(|h| start + TimeDelta::hours(h as i64)).collect();
    let cols = net.variables().iter().map(|_| (0..n).map(|_| rng.normal()).collect()).collect();
    let ds = Dataset::new(stamps, net.variables(), cols).unwrap();
    make_windows(&ds, &net.target_name().unwrap(), b, tau, 3).unwrap()
}

fn tiny_config(arrangement: Arrangement, spatial_mask: bool) -> ModelConfig {
    ModelConfig {
        history: 4,
        horizon: 2,
        quantiles: vec![0.3, 0.8],
        d1: 3,
        d2: 3,
        d3: 3,
        dropout: 0.0,
        spatial_mask,
        arrangement,
    }
}

fn check(arrangement: Arrangement, masked: bool) {
    let net = tiny_network();
    let model = CausalForecaster::new(tiny_config(arrangement, masked), net.clone(), 17).unwrap();
    let ws = random_windows(&net, 5, 40, 4, 2);
    let batch: Vec<_> = ws.windows.iter().take(3).cloned().collect();
    let report = grad_check(model.params(), 1e-4, 1e-4, |g: &mut Graph, p| {
        let mut total = window_loss(&model, g, p, &batch[0], None)?;
        for w in &batch[1..] {
            let l = window_loss(&model, g, p, w, None)?;
            total = g.add(total, l)?;
        }
        Ok(total)
    })
    .unwrap();
    assert_eq!(report.entries_checked, model.params().scalar_count());
    assert!(report.passed(), "{report:?}");
}

#[test]
fn composite_loss_gradient_matches_finite_differences() {
    check(Arrangement::Sequential, true);
}

#[test]
fn parallel_arrangement_gradient() {
    check(Arrangement::Parallel, true);
}

#[test]
fn unmasked_gradient() {
    check(Arrangement::Sequential, false);
}

#[test]
fn han_river_traces_respect_masks() {
    let net = build_network(&NetworkConfig::han_river()).unwrap();
    let mask = spatial_mask(&net);
    let (b, tau) = (6, 3);
    let ws = random_windows(&net, 9, 60, b, tau);
    for seed in 0..25u64 {
        let cfg = ModelConfig {
            history: b,
            horizon: tau,
            ..ModelConfig::default()
        };
        let mut model = CausalForecaster::new(cfg, net.clone(), seed).unwrap();
        let mut rng = SplitMix64::new(seed);
        // spread the weights far beyond the initial range
        model.params_mut().map_values(|v| v * 5.0);
        for (_, t) in model.params_mut().iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.normal());
        }
        let model = model.with_stats(ws.stats.clone()).unwrap();
        let w = &ws.windows[seed as usize % ws.len()];
        let (_, trace) = model.forward(w).unwrap();
        for a in trace.spatial_first.iter().chain(&trace.spatial_second) {
            for i in 0..16 {
                for j in 0..16 {
                    if !mask.permits(i, j) {
                        assert_eq!(a.get(i, j), 0.0);
                    }
                }
            }
        }
        for a in [&trace.temporal_encoder, &trace.temporal_decoder] {
            for i in 0..a.rows() {
                for j in i + 1..a.cols() {
                    assert_eq!(a.get(i, j), 0.0);
                }
            }
        }
    }
}
