//! The radial relay/satellite transformer.
//!
//! One relay node carries the query; `n` satellite nodes carry the
//! candidate models. Per layer every satellite attends over its own
//! previous state, its model embedding and the relay (never over another
//! satellite), then the relay attends over itself and all freshly updated
//! satellites. Both updates pass through ReLU and layer normalization.
//!
//! Two execution paths share the parameters: [`RadialFormerParams::forward_graph`]
//! records every op for training, and [`RadialFormerParams::forward`] is a
//! batched value-only pass used for routing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{
    multi_head_attention, softmax_in_place, AttentionVars, Graph, Tensor, Var, LAYER_NORM_EPS,
};
use crate::params::{BoundParams, ParamId, ParamStore};

/// Which nodes a satellite may attend to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Satellites see only themselves, their embedding and the relay.
    #[default]
    Radial,
    /// Adds ring connections to the two neighbouring satellites.
    Star,
    /// Every node attends over every node.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialFormerConfig {
    /// Number of satellites, one per candidate LLM.
    pub n: usize,
    /// Hidden width.
    pub d: usize,
    /// Number of layers.
    pub layers: usize,
    pub heads: usize,
    /// Reuse one set of layer weights for every layer.
    #[serde(default)]
    pub share_layers: bool,
    #[serde(default)]
    pub topology: Topology,
}

impl RadialFormerConfig {
    pub fn new(n: usize, d: usize, layers: usize, heads: usize) -> Self {
        Self {
            n,
            d,
            layers,
            heads,
            share_layers: false,
            topology: Topology::Radial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("at least one satellite is required".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.d < 2 {
            return Err(Error::Config("hidden width must be at least 2".into()));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden width {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl AttentionIds {
    fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut w = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::uniform(d, d, bound, rng));
        Self {
            wq: w("wq"),
            wk: w("wk"),
            wv: w("wv"),
            wo: w("wo"),
        }
    }

    fn bind(&self, bound: &BoundParams) -> AttentionVars {
        AttentionVars {
            wq: bound.var(self.wq),
            wk: bound.var(self.wk),
            wv: bound.var(self.wv),
            wo: bound.var(self.wo),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl NormIds {
    pub(crate) fn init(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.gain"), Tensor::filled(1, d, 1.0)),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(1, d)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerIds {
    pub satellite: AttentionIds,
    pub relay: AttentionIds,
    pub satellite_norm: NormIds,
    pub relay_norm: NormIds,
}

/// Parameter layout of a RadialFormer inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct RadialFormerParams {
    pub config: RadialFormerConfig,
    /// `n x d`; row `i` is the learnable embedding of model `i`.
    pub embeddings: ParamId,
    /// One entry per layer. With shared layers all entries are equal.
    pub layers: Vec<LayerIds>,
}

/// Relay and satellite states after `step` layers.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialState {
    pub relay: Tensor,
    pub satellites: Tensor,
    pub step: usize,
    /// Layer the satellites have reached; one ahead of `step` between the
    /// satellite and relay halves of a layer.
    pub satellite_step: usize,
}

/// Graph handles for the final states of a recorded forward pass.
#[derive(Clone, Debug)]
pub struct GraphState {
    pub relay: Var,
    /// `n x d` stack of final satellite rows.
    pub satellites: Var,
}

/// Order in which node updates happened during a traced forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateEvent {
    Satellite { layer: usize, index: usize },
    Relay { layer: usize },
}

impl RadialFormerParams {
    /// Registers freshly initialized parameters in `store`. Attention
    /// weights are uniform in `±1/sqrt(d)`, model embeddings are
    /// `N(0, 0.02²)` and normalization starts at unit gain, zero bias.
    pub fn init<R: Rng + ?Sized>(
        config: RadialFormerConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let embeddings = store.add("backbone.model_embeddings", Tensor::normal(config.n, d, 0.02, rng));
        let distinct = if config.share_layers { 1 } else { config.layers };
        let mut unique = Vec::with_capacity(distinct);
        for t in 0..distinct {
            let prefix = format!("backbone.layer{t}");
            unique.push(LayerIds {
                satellite: AttentionIds::init(store, &format!("{prefix}.satellite_attn"), d, rng),
                relay: AttentionIds::init(store, &format!("{prefix}.relay_attn"), d, rng),
                satellite_norm: NormIds::init(store, &format!("{prefix}.satellite_norm"), d),
                relay_norm: NormIds::init(store, &format!("{prefix}.relay_norm"), d),
            });
        }
        let layers = (0..config.layers)
            .map(|t| unique[if config.share_layers { 0 } else { t }])
            .collect();
        Ok(Self {
            config,
            embeddings,
            layers,
        })
    }

    fn check_query(&self, shape: [usize; 2]) -> Result<()> {
        if shape != [1, self.config.d] {
            return Err(Error::Config(format!(
                "query embedding has shape {:?}, expected [1, {}]",
                shape, self.config.d
            )));
        }
        Ok(())
    }

    /// Records a full forward pass on `g`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        query: Var,
        mut trace: Option<&mut Vec<UpdateEvent>>,
    ) -> Result<GraphState> {
        self.check_query(g.shape(query))?;
        let cfg = &self.config;
        let emb = bound.var(self.embeddings);
        let models: Vec<Var> = (0..cfg.n)
            .map(|i| g.slice_rows(emb, i, 1))
            .collect::<Result<_>>()?;
        let mut sats = models.clone();
        let mut relay = query;

        for (t, layer) in self.layers.iter().enumerate() {
            let sat_w = layer.satellite.bind(bound);
            let relay_w = layer.relay.bind(bound);
            let (sg, sb) = (bound.var(layer.satellite_norm.gain), bound.var(layer.satellite_norm.bias));
            let (rg, rb) = (bound.var(layer.relay_norm.gain), bound.var(layer.relay_norm.bias));

            let mut next = Vec::with_capacity(cfg.n);
            for i in 0..cfg.n {
                let ctx_rows: Vec<Var> = match cfg.topology {
                    Topology::Radial => vec![sats[i], models[i], relay],
                    Topology::Star => {
                        let prev = sats[(i + cfg.n - 1) % cfg.n];
                        let succ = sats[(i + 1) % cfg.n];
                        vec![prev, sats[i], succ, models[i], relay]
                    }
                    Topology::Full => std::iter::once(relay).chain(sats.iter().copied()).collect(),
                };
                let ctx = g.concat_rows(&ctx_rows)?;
                let att = multi_head_attention(g, sats[i], ctx, &sat_w, cfg.heads)?;
                let act = g.relu(att);
                next.push(g.layer_norm(act, sg, sb)?);
                if let Some(tr) = trace.as_deref_mut() {
                    tr.push(UpdateEvent::Satellite { layer: t + 1, index: i });
                }
            }

            let relay_ctx: Vec<Var> = match cfg.topology {
                Topology::Full => std::iter::once(relay).chain(sats.iter().copied()).collect(),
                _ => std::iter::once(relay).chain(next.iter().copied()).collect(),
            };
            let ctx = g.concat_rows(&relay_ctx)?;
            let att = multi_head_attention(g, relay, ctx, &relay_w, cfg.heads)?;
            let act = g.relu(att);
            relay = g.layer_norm(act, rg, rb)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(UpdateEvent::Relay { layer: t + 1 });
            }
            sats = next;
        }
        let satellites = g.concat_rows(&sats)?;
        Ok(GraphState { relay, satellites })
    }

    /// Initial state: relay is the query, satellite `i` is `m_i`.
    pub fn init_state(&self, store: &ParamStore, query: &Tensor) -> Result<RadialState> {
        self.check_query(query.shape())?;
        Ok(RadialState {
            relay: query.clone(),
            satellites: store.get(self.embeddings).clone(),
            step: 0,
            satellite_step: 0,
        })
    }

    /// Next state of satellite `i` (0-based) for layer `state.step + 1`,
    /// computed from its own context only.
    pub fn update_satellite(&self, store: &ParamStore, state: &RadialState, i: usize) -> Result<Tensor> {
        let cfg = &self.config;
        if i >= cfg.n {
            return Err(Error::Index(format!("satellite {i} of {}", cfg.n)));
        }
        if state.step >= cfg.layers {
            return Err(Error::Contract(format!("state already at final layer {}", state.step)));
        }
        let layer = &self.layers[state.step];
        let s_i = state.satellites.slice_rows(i, 1);
        let m_i = store.get(self.embeddings).slice_rows(i, 1);
        let ctx = stack(&[s_i.data(), m_i.data(), state.relay.data()], cfg.d);
        let mut g = Graph::new();
        let q = g.constant(s_i);
        let c = g.constant(ctx);
        let w = frozen_attention(&mut g, store, &layer.satellite);
        let att = multi_head_attention(&mut g, q, c, &w, cfg.heads)?;
        let act = g.relu(att);
        let gain = g.constant(store.get(layer.satellite_norm.gain).clone());
        let bias = g.constant(store.get(layer.satellite_norm.bias).clone());
        let out = g.layer_norm(act, gain, bias)?;
        Ok(g.value(out).clone())
    }

    /// Updates all satellites to layer `state.step + 1`.
    pub fn advance_satellites(&self, store: &ParamStore, state: &mut RadialState) -> Result<()> {
        if state.satellite_step != state.step {
            return Err(Error::Contract("satellites already advanced for this layer".into()));
        }
        let rows = (0..self.config.n)
            .map(|i| self.update_satellite(store, state, i).map(Tensor::into_data))
            .collect::<Result<Vec<_>>>()?;
        state.satellites = Tensor::from_rows(&rows)?;
        state.satellite_step += 1;
        Ok(())
    }

    /// Next relay state. Requires the satellites to have been advanced for
    /// the current layer.
    pub fn update_relay(&self, store: &ParamStore, state: &RadialState) -> Result<Tensor> {
        let cfg = &self.config;
        if state.satellite_step != state.step + 1 {
            return Err(Error::Contract(format!(
                "relay update for layer {} before satellite updates",
                state.step + 1
            )));
        }
        let layer = &self.layers[state.step];
        let mut rows = vec![state.relay.data()];
        rows.extend((0..cfg.n).map(|i| state.satellites.row(i)));
        let ctx = stack(&rows, cfg.d);
        let mut g = Graph::new();
        let q = g.constant(state.relay.clone());
        let c = g.constant(ctx);
        let w = frozen_attention(&mut g, store, &layer.relay);
        let att = multi_head_attention(&mut g, q, c, &w, cfg.heads)?;
        let act = g.relu(att);
        let gain = g.constant(store.get(layer.relay_norm.gain).clone());
        let bias = g.constant(store.get(layer.relay_norm.bias).clone());
        let out = g.layer_norm(act, gain, bias)?;
        Ok(g.value(out).clone())
    }

    /// One full layer: all satellites, then the relay.
    pub fn step(&self, store: &ParamStore, state: &mut RadialState) -> Result<()> {
        self.advance_satellites(store, state)?;
        state.relay = self.update_relay(store, state)?;
        state.step += 1;
        Ok(())
    }

    /// Forward pass without recording. Radial topology uses a batched
    /// kernel; the ablation topologies replay the recorded path.
    pub fn forward(&self, store: &ParamStore, query: &Tensor) -> Result<RadialState> {
        self.check_query(query.shape())?;
        if !query.is_finite() {
            return Err(Error::NonFinite("query embedding".into()));
        }
        if self.config.topology != Topology::Radial {
            let mut g = Graph::new();
            let bound = store.bind_frozen(&mut g);
            let q = g.constant(query.clone());
            let out = self.forward_graph(&mut g, &bound, q, None)?;
            return Ok(RadialState {
                relay: g.value(out.relay).clone(),
                satellites: g.value(out.satellites).clone(),
                step: self.config.layers,
                satellite_step: self.config.layers,
            });
        }

        let cfg = &self.config;
        let (n, d) = (cfg.n, cfg.d);
        let models = store.get(self.embeddings);
        let mut sats = models.clone();
        let mut relay = query.clone();
        let mut heads_out = Tensor::zeros(n, d);
        for layer in &self.layers {
            let w = &layer.satellite;
            let (wq, wk, wv, wo) = (store.get(w.wq), store.get(w.wk), store.get(w.wv), store.get(w.wo));
            let q = sats.matmul(wq)?;
            let ks = sats.matmul(wk)?;
            let vs = sats.matmul(wv)?;
            let km = models.matmul(wk)?;
            let vm = models.matmul(wv)?;
            let kr = relay.matmul(wk)?;
            let vr = relay.matmul(wv)?;
            for i in 0..n {
                attend_rows(
                    q.row(i),
                    &[ks.row(i), km.row(i), kr.data()],
                    &[vs.row(i), vm.row(i), vr.data()],
                    cfg.heads,
                    heads_out.row_mut(i),
                );
            }
            let mut next = heads_out.matmul(wo)?;
            let (gain, bias) = (store.get(layer.satellite_norm.gain), store.get(layer.satellite_norm.bias));
            for i in 0..n {
                relu_norm_row(next.row_mut(i), gain.data(), bias.data());
            }

            let w = &layer.relay;
            let (wq, wk, wv, wo) = (store.get(w.wq), store.get(w.wk), store.get(w.wv), store.get(w.wo));
            let mut ctx_rows = Vec::with_capacity(n + 1);
            ctx_rows.push(relay.data());
            ctx_rows.extend((0..n).map(|i| next.row(i)));
            let ctx = stack(&ctx_rows, d);
            let q = relay.matmul(wq)?;
            let k = ctx.matmul(wk)?;
            let v = ctx.matmul(wv)?;
            let keys: Vec<&[f64]> = (0..=n).map(|j| k.row(j)).collect();
            let vals: Vec<&[f64]> = (0..=n).map(|j| v.row(j)).collect();
            let mut pre = Tensor::zeros(1, d);
            attend_rows(q.data(), &keys, &vals, cfg.heads, pre.data_mut());
            let mut new_relay = pre.matmul(wo)?;
            let (gain, bias) = (store.get(layer.relay_norm.gain), store.get(layer.relay_norm.bias));
            relu_norm_row(new_relay.data_mut(), gain.data(), bias.data());

            sats = next;
            relay = new_relay;
        }
        Ok(RadialState {
            relay,
            satellites: sats,
            step: cfg.layers,
            satellite_step: cfg.layers,
        })
    }
}

/// Closed-form multiply-add count of the matrix products in one forward
/// pass of the radial topology.
///
/// Per layer each satellite projects one query row and three context rows
/// (`d²` each for the query and output projections, `3d²` each for keys and
/// values) and spends `3d` on logits plus `3d` on the weighted sum. The
/// relay does the same over `n + 1` context rows. The total is affine in
/// `n`: `T · (n(10d² + 8d) + 4d² + 2d)`.
pub fn flop_count(config: &RadialFormerConfig) -> u64 {
    let (n, d, t) = (config.n as u64, config.d as u64, config.layers as u64);
    let satellite = 8 * d * d + 6 * d;
    let ctx = n + 1;
    let relay = (2 * ctx + 2) * d * d + 2 * ctx * d;
    t * (n * satellite + relay)
}

fn frozen_attention(g: &mut Graph, store: &ParamStore, ids: &AttentionIds) -> AttentionVars {
    AttentionVars {
        wq: g.constant(store.get(ids.wq).clone()),
        wk: g.constant(store.get(ids.wk).clone()),
        wv: g.constant(store.get(ids.wv).clone()),
        wo: g.constant(store.get(ids.wo).clone()),
    }
}

fn stack(rows: &[&[f64]], d: usize) -> Tensor {
    let data = rows.concat();
    Tensor::new(data.len() / d, d, data).expect("rows share width d")
}

/// Multi-head attention of one projected query row over projected key and
/// value rows, written into `out` before the output projection.
fn attend_rows(q: &[f64], keys: &[&[f64]], values: &[&[f64]], heads: usize, out: &mut [f64]) {
    let width = q.len() / heads;
    let scale = 1.0 / (width as f64).sqrt();
    let mut weights = vec![0.0; keys.len()];
    for h in 0..heads {
        let cols = h * width..(h + 1) * width;
        for (w, k) in weights.iter_mut().zip(keys) {
            let dot: f64 = q[cols.clone()].iter().zip(&k[cols.clone()]).map(|(a, b)| a * b).sum();
            *w = dot * scale;
        }
        softmax_in_place(&mut weights);
        let dst = &mut out[cols.clone()];
        dst.iter_mut().for_each(|v| *v = 0.0);
        for (w, v) in weights.iter().zip(values) {
            for (o, x) in dst.iter_mut().zip(&v[cols.clone()]) {
                *o += w * x;
            }
        }
    }
}

pub(crate) fn relu_norm_row(row: &mut [f64], gain: &[f64], bias: &[f64]) {
    row.iter_mut().for_each(|v| *v = v.max(0.0));
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for ((v, g), b) in row.iter_mut().zip(gain).zip(bias) {
        *v = (*v - mean) * inv * g + b;
    }
}
