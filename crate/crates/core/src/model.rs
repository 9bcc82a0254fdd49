//! The spatiotemporal forecaster: covariate and calendar embedding, spatial
//! attention restricted by the cause graph, temporal attention over the
//! history, a second spatial pass, variable selection, and a decoder that
//! emits every horizon and quantile in one pass.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::causal::{spatial_mask, temporal_mask, MultilayerNetwork};
use crate::data::{NormStats, SeriesWindow, TimeFeature};
use crate::error::{Error, Result};
use crate::mask::MaskMatrix;
use crate::nn::{dropout, vsn, VsnParams};
use crate::params::ParamStore;
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// Order in which spatial and temporal attention see the embedded inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arrangement {
    /// Spatial attention, then temporal attention over its output.
    #[default]
    Sequential,
    /// Both read the embedding; their outputs are summed before the second
    /// spatial pass.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub history: usize,
    pub horizon: usize,
    pub quantiles: Vec<f64>,
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub dropout: f64,
    /// `false` replaces the spatial mask with all-permit.
    pub spatial_mask: bool,
    pub arrangement: Arrangement,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history: 48,
            horizon: 12,
            quantiles: vec![0.1, 0.5, 0.7, 0.9],
            d1: 3,
            d2: 10,
            d3: 10,
            dropout: 0.1,
            spatial_mask: true,
            arrangement: Arrangement::Sequential,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::config("history and horizon must be at least 1"));
        }
        if self.d1 == 0 || self.d2 == 0 || self.d3 == 0 {
            return Err(Error::config("layer widths must be at least 1"));
        }
        if self.quantiles.is_empty() {
            return Err(Error::config("at least one quantile level is required"));
        }
        if self.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(Error::config(format!(
                "quantile levels must lie in (0, 1): {:?}",
                self.quantiles
            )));
        }
        if self.quantiles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "quantile levels must be strictly increasing: {:?}",
                self.quantiles
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// `horizon x |Q|` forecasts in original units; entry `(k, j)` is the
/// `quantiles[j]` forecast for hour `origin + k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastQuantiles {
    pub origin: NaiveDateTime,
    pub quantiles: Vec<f64>,
    pub values: Tensor,
}

impl ForecastQuantiles {
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values.get(k, j)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.values.rows()).map(|k| self.values.get(k, j)).collect()
    }
}

/// Every attention and selection weight of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub origin: NaiveDateTime,
    /// First spatial pass, one `p x p` matrix per history step.
    pub spatial_first: Vec<Tensor>,
    /// Second spatial pass, one `p x p` matrix per history step.
    pub spatial_second: Vec<Tensor>,
    /// `B x B` history self-attention.
    pub temporal_encoder: Tensor,
    /// `(B + tau) x (B + tau)` decoder self-attention.
    pub temporal_decoder: Tensor,
    /// Compression weights over variables feeding temporal attention, `B` vectors of length `p`.
    pub vsn_compress_weights: Vec<Vec<f64>>,
    /// Encoder selection weights over variables, `B` vectors of length `p`.
    /// These are the variable importances.
    pub vsn_encoder_weights: Vec<Vec<f64>>,
    /// Global context weights over the `B` history steps.
    pub vsn_global_weights: Vec<f64>,
    /// Per future step, weights over the month, day and hour embeddings.
    pub vsn_local_weights: Vec<Vec<f64>>,
}

/// Tape handles produced by [`CausalForecaster::forward_graph`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `horizon x |Q|`, normalised units.
    pub forecast: Var,
    pub spatial_first: Vec<Var>,
    pub spatial_second: Vec<Var>,
    pub temporal_encoder: Var,
    pub temporal_decoder: Var,
    pub vsn_compress: Vec<Var>,
    pub vsn_encoder: Vec<Var>,
    pub vsn_global: Var,
    pub vsn_local: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct CausalForecaster {
    config: ModelConfig,
    network: MultilayerNetwork,
    spatial: MaskMatrix,
    encoder_mask: MaskMatrix,
    decoder_mask: MaskMatrix,
    params: ParamStore,
    stats: Option<NormStats>,
}

fn vsn_shapes(prefix: &str, n: usize, d: usize, hidden: usize) -> [(String, usize, usize, bool); 4] {
    [
        (format!("{prefix}.w1"), n * d, hidden, true),
        (format!("{prefix}.b1"), 1, hidden, false),
        (format!("{prefix}.w2"), hidden, n, true),
        (format!("{prefix}.b2"), 1, n, false),
    ]
}

/// Every parameter id with its shape, and whether it is a weight (random
/// init) rather than a bias (zero init).
pub fn parameter_shapes(config: &ModelConfig, p: usize) -> Vec<(String, usize, usize, bool)> {
    let (b, d1, d2, d3) = (config.history, config.d1, config.d2, config.d3);
    let mut out = vec![
        ("embed.cov.weight".to_string(), p, d1, true),
        ("embed.cov.bias".to_string(), p, d1, false),
        ("embed.month".to_string(), 12, d1, true),
        ("embed.day".to_string(), 31, d1, true),
        ("embed.hour".to_string(), 24, d1, true),
        ("scan1.wq".to_string(), d1, d2, true),
        ("scan1.wk".to_string(), d1, d2, true),
        ("scan1.wv".to_string(), d1, d2, true),
        ("tan.wq".to_string(), d2, d3, true),
        ("tan.wk".to_string(), d2, d3, true),
        ("scan2.wq".to_string(), d2, d2, true),
        ("scan2.wk".to_string(), d2, d2, true),
        ("scan2.wv".to_string(), d2, d2, true),
        ("local.w3".to_string(), d1, d2, true),
        ("local.b3".to_string(), 1, d2, false),
        ("dec.wq".to_string(), d2, d3, true),
        ("dec.wk".to_string(), d2, d3, true),
        ("dec.wv".to_string(), d2, d3, true),
        ("head.w".to_string(), d3, config.quantiles.len(), true),
        ("head.b".to_string(), 1, config.quantiles.len(), false),
    ];
    out.extend(vsn_shapes("vsn1", p, d2, d2));
    out.extend(vsn_shapes("vsn2", p, d2, d2));
    out.extend(vsn_shapes("vsn3", b, d2, d2));
    out.extend(vsn_shapes("vsn4", 3, d2, d2));
    if config.arrangement == Arrangement::Parallel {
        out.push(("parallel.lift".to_string(), d1, d2, true));
    }
    out
}

/// Freshly initialised parameters: weights uniform in `+-1/sqrt(rows)`,
/// biases zero. Embedding tables and the scalar covariate lift act on a
/// single input and use the unit bound.
pub fn init_params(config: &ModelConfig, p: usize, seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new(derive_seed(seed, "model.init"));
    for (id, r, c, weight) in parameter_shapes(config, p) {
        if !weight {
            store.insert_zeros(&id, r, c)?;
        } else if id.starts_with("embed.") {
            store.insert_uniform_fan(&id, r, c, 1)?;
        } else {
            store.insert_uniform(&id, r, c)?;
        }
    }
    Ok(store)
}

fn vsn_params(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<VsnParams> {
    Ok(VsnParams {
        w1: g.param(store, &format!("{prefix}.w1"))?,
        b1: g.param(store, &format!("{prefix}.b1"))?,
        w2: g.param(store, &format!("{prefix}.w2"))?,
        b2: g.param(store, &format!("{prefix}.b2"))?,
    })
}

/// `softmax(q k^T / sqrt(d_k) (.) M) v`.
fn attend(g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<&MaskMatrix>) -> Result<(Var, Var)> {
    let dk = g.value(k).cols();
    let logits = g.matmul_t(q, k)?;
    let scaled = g.scale(logits, 1.0 / (dk as f64).sqrt());
    let a = g.softmax(scaled, mask)?;
    let out = g.matmul(a, v)?;
    Ok((out, a))
}

/// Month, day and hour embedding rows of one calendar position, `3 x d1`.
fn time_rows(g: &mut Graph, tables: [Var; 3], t: &TimeFeature) -> Result<[Var; 3]> {
    Ok([
        g.select_rows(tables[0], vec![t.month as usize - 1])?,
        g.select_rows(tables[1], vec![t.day as usize - 1])?,
        g.select_rows(tables[2], vec![t.hour as usize])?,
    ])
}

impl CausalForecaster {
    /// The network must name its target variable.
    pub fn new(config: ModelConfig, network: MultilayerNetwork, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, network.p(), seed)?;
        Self::with_params(config, network, params)
    }

    pub fn with_params(config: ModelConfig, network: MultilayerNetwork, params: ParamStore) -> Result<Self> {
        config.validate()?;
        if network.target_index().is_none() {
            return Err(Error::config("the network has no target variable"));
        }
        let p = network.p();
        for (id, r, c, _) in parameter_shapes(&config, p) {
            let t = params
                .get(&id)
                .map_err(|_| Error::config(format!("parameter {id:?} is missing")))?;
            if t.shape() != (r, c) {
                return Err(Error::config(format!(
                    "parameter {id:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    (r, c)
                )));
            }
        }
        let expected = parameter_shapes(&config, p).len();
        if params.len() != expected {
            return Err(Error::config(format!(
                "{} parameters supplied, {expected} expected",
                params.len()
            )));
        }
        let spatial = if config.spatial_mask {
            spatial_mask(&network)
        } else {
            MaskMatrix::all_permit(p, p)
        };
        let encoder_mask = temporal_mask(config.history)?;
        let decoder_mask = temporal_mask(config.history + config.horizon)?;
        Ok(Self {
            config,
            network,
            spatial,
            encoder_mask,
            decoder_mask,
            params,
            stats: None,
        })
    }

    pub fn with_stats(mut self, stats: NormStats) -> Result<Self> {
        let vars = self.network.variables();
        if stats.variables != vars {
            return Err(Error::Schema(format!(
                "normalisation statistics cover {:?}, the network has {:?}",
                stats.variables, vars
            )));
        }
        self.stats = Some(stats);
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn network(&self) -> &MultilayerNetwork {
        &self.network
    }

    pub fn spatial_mask(&self) -> &MaskMatrix {
        &self.spatial
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamStore) -> Result<()> {
        let checked = Self::with_params(self.config.clone(), self.network.clone(), params)?;
        self.params = checked.params;
        Ok(())
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn target_index(&self) -> usize {
        self.network.target_index().expect("checked at construction")
    }

    pub fn check_window(&self, w: &SeriesWindow) -> Result<()> {
        let (b, tau, p) = (self.config.history, self.config.horizon, self.network.p());
        if w.x.shape() != (b, p) {
            return Err(Error::Input(format!(
                "window covariates are {:?}, model expects {:?}",
                w.x.shape(),
                (b, p)
            )));
        }
        if w.times.len() != b + tau {
            return Err(Error::Input(format!(
                "window has {} calendar steps, model expects {}",
                w.times.len(),
                b + tau
            )));
        }
        for t in &w.times {
            t.validate()?;
        }
        if !w.x.is_finite() {
            return Err(Error::Input("window covariates are not finite".into()));
        }
        if let Some(y) = &w.y {
            if y.len() != tau {
                return Err(Error::Input(format!(
                    "window has {} targets, model expects {tau}",
                    y.len()
                )));
            }
        }
        Ok(())
    }

    /// Records the whole forward pass on `g` using `params` (which need not
    /// be the stored parameters). Dropout is active iff `rng` is given.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        w: &SeriesWindow,
        mut rng: Option<&mut SplitMix64>,
    ) -> Result<ForwardVars> {
        self.check_window(w)?;
        let cfg = &self.config;
        let (b, tau, p) = (cfg.history, cfg.horizon, self.network.p());
        let rate = cfg.dropout;
        let spatial = Some(&self.spatial);

        // Embedding of all history steps, stacked as (B p) x d1.
        let cov_w = g.param(params, "embed.cov.weight")?;
        let cov_b = g.param(params, "embed.cov.bias")?;
        let tables = [
            g.param(params, "embed.month")?,
            g.param(params, "embed.day")?,
            g.param(params, "embed.hour")?,
        ];
        let var_idx: Vec<usize> = (0..b).flat_map(|_| 0..p).collect();
        let lift = g.select_rows(cov_w, var_idx.clone())?;
        let lift = g.scale_rows(lift, w.x.data().to_vec())?;
        let bias = g.select_rows(cov_b, var_idx)?;
        let cov = g.add(lift, bias)?;
        let per_step = |f: fn(&TimeFeature) -> usize| -> Vec<usize> {
            w.times[..b].iter().flat_map(|t| std::iter::repeat(f(t)).take(p)).collect()
        };
        let month = g.select_rows(tables[0], per_step(|t| t.month as usize - 1))?;
        let day = g.select_rows(tables[1], per_step(|t| t.day as usize - 1))?;
        let hour = g.select_rows(tables[2], per_step(|t| t.hour as usize))?;
        let cal = g.add(month, day)?;
        let cal = g.add(cal, hour)?;
        let cal = g.scale(cal, 1.0 / 3.0);
        let h0 = g.add(cov, cal)?;

        // First spatial pass, one attention per step.
        let wq = g.param(params, "scan1.wq")?;
        let wk = g.param(params, "scan1.wk")?;
        let wv = g.param(params, "scan1.wv")?;
        let q_all = g.matmul(h0, wq)?;
        let k_all = g.matmul(h0, wk)?;
        let v_all = g.matmul(h0, wv)?;
        let mut h1_steps = Vec::with_capacity(b);
        let mut spatial_first = Vec::with_capacity(b);
        for t in 0..b {
            let q = g.slice_rows(q_all, t * p, p)?;
            let k = g.slice_rows(k_all, t * p, p)?;
            let v = g.slice_rows(v_all, t * p, p)?;
            let (out, a) = attend(g, q, k, v, spatial)?;
            h1_steps.push(out);
            spatial_first.push(a);
        }
        let h1 = g.concat_rows(&h1_steps)?;
        let h1 = dropout(g, h1, rate, rng.as_deref_mut())?;

        // Temporal attention over compressed steps; values are the flattened
        // step states themselves.
        let temporal_in = match cfg.arrangement {
            Arrangement::Sequential => h1,
            Arrangement::Parallel => {
                let lift = g.param(params, "parallel.lift")?;
                g.matmul(h0, lift)?
            }
        };
        let vsn1 = vsn_params(g, params, "vsn1")?;
        let mut compressed = Vec::with_capacity(b);
        let mut vsn_compress = Vec::with_capacity(b);
        for t in 0..b {
            let step = g.slice_rows(temporal_in, t * p, p)?;
            let (c, wts) = vsn(g, step, &vsn1)?;
            compressed.push(c);
            vsn_compress.push(wts);
        }
        let h_tilde = g.concat_rows(&compressed)?;
        let tq = g.param(params, "tan.wq")?;
        let tk = g.param(params, "tan.wk")?;
        let q = g.matmul(h_tilde, tq)?;
        let k = g.matmul(h_tilde, tk)?;
        let flat = g.reshape(temporal_in, b, p * cfg.d2)?;
        let (h2, temporal_encoder) = attend(g, q, k, flat, Some(&self.encoder_mask))?;
        let h2 = g.reshape(h2, b * p, cfg.d2)?;
        let h2 = match cfg.arrangement {
            Arrangement::Sequential => h2,
            Arrangement::Parallel => g.add(h2, h1)?,
        };
        let h2 = dropout(g, h2, rate, rng.as_deref_mut())?;

        // Second spatial pass and per-step variable selection.
        let wq = g.param(params, "scan2.wq")?;
        let wk = g.param(params, "scan2.wk")?;
        let wv = g.param(params, "scan2.wv")?;
        let q_all = g.matmul(h2, wq)?;
        let k_all = g.matmul(h2, wk)?;
        let v_all = g.matmul(h2, wv)?;
        let vsn2 = vsn_params(g, params, "vsn2")?;
        let mut spatial_second = Vec::with_capacity(b);
        let mut vsn_encoder = Vec::with_capacity(b);
        let mut h3_rows = Vec::with_capacity(b);
        for t in 0..b {
            let q = g.slice_rows(q_all, t * p, p)?;
            let k = g.slice_rows(k_all, t * p, p)?;
            let v = g.slice_rows(v_all, t * p, p)?;
            let (out, a) = attend(g, q, k, v, spatial)?;
            spatial_second.push(a);
            let out = dropout(g, out, rate, rng.as_deref_mut())?;
            let (row, wts) = vsn(g, out, &vsn2)?;
            h3_rows.push(row);
            vsn_encoder.push(wts);
        }
        let h3 = g.concat_rows(&h3_rows)?;

        // Decoder: global context plus per-step calendar context.
        let vsn3 = vsn_params(g, params, "vsn3")?;
        let (h4, vsn_global) = vsn(g, h3, &vsn3)?;
        let w3 = g.param(params, "local.w3")?;
        let b3 = g.param(params, "local.b3")?;
        let vsn4 = vsn_params(g, params, "vsn4")?;
        let mut rows = vec![h3];
        let mut vsn_local = Vec::with_capacity(tau);
        for t in &w.times[b..] {
            let parts = time_rows(g, tables, t)?;
            let stacked = g.concat_rows(&parts)?;
            let lifted = g.matmul(stacked, w3)?;
            let lifted = g.add_row(lifted, b3)?;
            let (local, wts) = vsn(g, lifted, &vsn4)?;
            rows.push(g.add(h4, local)?);
            vsn_local.push(wts);
        }
        let h4_all = g.concat_rows(&rows)?;
        let dq = g.param(params, "dec.wq")?;
        let dk = g.param(params, "dec.wk")?;
        let dv = g.param(params, "dec.wv")?;
        let q = g.matmul(h4_all, dq)?;
        let k = g.matmul(h4_all, dk)?;
        let v = g.matmul(h4_all, dv)?;
        let (h5, temporal_decoder) = attend(g, q, k, v, Some(&self.decoder_mask))?;
        let h5 = dropout(g, h5, rate, rng.as_deref_mut())?;
        let future = g.slice_rows(h5, b, tau)?;
        let hw = g.param(params, "head.w")?;
        let hb = g.param(params, "head.b")?;
        let out = g.matmul(future, hw)?;
        let forecast = g.add_row(out, hb)?;

        Ok(ForwardVars {
            forecast,
            spatial_first,
            spatial_second,
            temporal_encoder,
            temporal_decoder,
            vsn_compress,
            vsn_encoder,
            vsn_global,
            vsn_local,
        })
    }

    /// Inference-mode forecast in normalised units.
    pub fn forecast_normalized(&self, w: &SeriesWindow) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.forward_graph(&mut g, &self.params, w, None)?;
        Ok(g.value(vars.forecast).clone())
    }

    /// Inference-mode forecast in original units together with the full
    /// trace.
    pub fn forward(&self, w: &SeriesWindow) -> Result<(ForecastQuantiles, AttentionTrace)> {
        let stats = self
            .stats
            .as_ref()
            .ok_or_else(|| Error::State("model has no normalisation statistics".into()))?;
        let mut g = Graph::new();
        let vars = self.forward_graph(&mut g, &self.params, w, None)?;
        let target = self.target_index();
        let values = g.value(vars.forecast).map(|v| stats.denormalize(target, v));
        if !values.is_finite() {
            return Err(Error::Numeric("forecast is not finite".into()));
        }
        let vec_of = |v: Var| g.value(v).data().to_vec();
        let trace = AttentionTrace {
            origin: w.origin,
            spatial_first: vars.spatial_first.iter().map(|v| g.value(*v).clone()).collect(),
            spatial_second: vars.spatial_second.iter().map(|v| g.value(*v).clone()).collect(),
            temporal_encoder: g.value(vars.temporal_encoder).clone(),
            temporal_decoder: g.value(vars.temporal_decoder).clone(),
            vsn_compress_weights: vars.vsn_compress.iter().map(|v| vec_of(*v)).collect(),
            vsn_encoder_weights: vars.vsn_encoder.iter().map(|v| vec_of(*v)).collect(),
            vsn_global_weights: vec_of(vars.vsn_global),
            vsn_local_weights: vars.vsn_local.iter().map(|v| vec_of(*v)).collect(),
        };
        Ok((
            ForecastQuantiles {
                origin: w.origin,
                quantiles: self.config.quantiles.clone(),
                values,
            },
            trace,
        ))
    }

    /// Embedding of one history row, `p x d1`.
    pub fn embed(&self, x: &[f64], t: &TimeFeature) -> Result<Tensor> {
        t.validate()?;
        let p = self.network.p();
        if x.len() != p {
            return Err(Error::Input(format!("{} covariates for {p} variables", x.len())));
        }
        let w = self.params.get("embed.cov.weight")?;
        let bias = self.params.get("embed.cov.bias")?;
        let rows = [
            self.params.get("embed.month")?.row(t.month as usize - 1),
            self.params.get("embed.day")?.row(t.day as usize - 1),
            self.params.get("embed.hour")?.row(t.hour as usize),
        ];
        Ok(Tensor::from_fn(p, self.config.d1, |i, j| {
            x[i] * w.get(i, j) + bias.get(i, j) + (rows[0][j] + rows[1][j] + rows[2][j]) / 3.0
        }))
    }
}
