//! The joint prediction network.
//!
//! * **Encoder**: a GRU over each agent's 11 observed states expressed in
//!   the agent's own frame at the current time.
//! * **Interaction network**: two vanilla graph-network layers over the
//!   agent graph (node attributes: encoding + agent features, edge
//!   attributes: pair features) followed by a per-edge readout producing
//!   softmax scores over IGNORING/GOING/YIELDING.
//! * **Decoder**: a 10-step rollout. Each step rebuilds the graph from the
//!   running states, runs two typed graph-network layers whose edge update
//!   is the score-weighted sum of one MLP per interaction type, predicts a
//!   local-frame acceleration per agent and integrates it.
//!
//! Edge `(i, j)` has receiver `i` and sender `j`; its attributes describe
//! `j` in `i`'s frame and its type is `i`'s interaction toward `j`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{current_frame, Frame};
use crate::nn::{Grads, GruCell, Mlp, ParamStore, Rotation, Tape, Tensor2, Var};
use crate::scene::{
    AgentState, InteractionLabel, PairKey, Scene, AGENT_FEATURES, DT, FUTURE_LEN, PAIR_FEATURES,
    PAIR_RADIUS, PAST_LEN,
};

/// Number of interaction types.
pub const NUM_TYPES: usize = 3;
pub const CHECKPOINT_VERSION: u32 = 2;

const POS_SCALE: f64 = 1.0 / 20.0;
const VEL_SCALE: f64 = 1.0 / 10.0;
/// Times to a conflict along the current velocity rays are capped here (s).
const CONFLICT_HORIZON: f64 = 10.0;
/// Interaction-network edge inputs derived from the stored pair features and
/// current states: angles as (cos, sin), plus ray conflict times and a flag.
pub const EDGE_INPUTS: usize = 10;

/// Model variants of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Per-agent decoder without any edges.
    Baseline,
    /// One edge type on every edge.
    Untyped,
    /// One edge type; IGNORING-labeled edges removed.
    UntypedNoIgnoring,
    /// Ground-truth labels as one-hot type scores.
    Oracle,
    /// Ground-truth labels; IGNORING-labeled edges removed.
    OracleNoIgnoring,
    /// Predicted scores, cross-entropy weighted by α = 5.
    JointSupervised,
    /// Predicted scores, no interaction supervision.
    JointUnsupervised,
}

/// Where decoder edge types come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    None,
    Constant,
    Labels,
    Predicted,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Baseline,
        Variant::Untyped,
        Variant::UntypedNoIgnoring,
        Variant::Oracle,
        Variant::OracleNoIgnoring,
        Variant::JointSupervised,
        Variant::JointUnsupervised,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Untyped => "untyped",
            Self::UntypedNoIgnoring => "untyped_no_ignoring",
            Self::Oracle => "oracle",
            Self::OracleNoIgnoring => "oracle_no_ignoring",
            Self::JointSupervised => "joint_supervised",
            Self::JointUnsupervised => "joint_unsupervised",
        }
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            Self::JointSupervised => 5.0,
            _ => 0.0,
        }
    }

    pub fn score_source(self) -> ScoreSource {
        match self {
            Self::Baseline => ScoreSource::None,
            Self::Untyped | Self::UntypedNoIgnoring => ScoreSource::Constant,
            Self::Oracle | Self::OracleNoIgnoring => ScoreSource::Labels,
            Self::JointSupervised | Self::JointUnsupervised => ScoreSource::Predicted,
        }
    }

    pub fn num_types(self) -> usize {
        match self.score_source() {
            ScoreSource::None => 0,
            ScoreSource::Constant => 1,
            _ => NUM_TYPES,
        }
    }

    pub fn drops_ignoring(self) -> bool {
        matches!(self, Self::UntypedNoIgnoring | Self::OracleNoIgnoring)
    }

    pub fn predicts_interactions(self) -> bool {
        self.score_source() == ScoreSource::Predicted
    }

    /// Labels are read at prediction time, not only for the loss.
    pub fn needs_labels(self) -> bool {
        self.drops_ignoring() || self.score_source() == ScoreSource::Labels
    }

    pub fn supports_injection(self) -> bool {
        self.num_types() == NUM_TYPES
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::Input(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Encoder/decoder GRU width.
    pub hidden: usize,
    /// Graph-network attribute width and MLP hidden width.
    pub width: usize,
    pub num_types: usize,
    pub interaction_depth: usize,
    pub decoder_depth: usize,
    pub alpha: f64,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            hidden: 64,
            width: 64,
            num_types: variant.num_types(),
            interaction_depth: 2,
            decoder_depth: 2,
            alpha: variant.default_alpha(),
        }
    }

    pub fn with_sizes(mut self, hidden: usize, width: usize) -> Self {
        self.hidden = hidden;
        self.width = width;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.width == 0 {
            return Err(Error::Input("model widths must be positive".into()));
        }
        if self.num_types != self.variant.num_types() {
            return Err(Error::Input(format!(
                "variant {} uses {} edge types, config says {}",
                self.variant,
                self.variant.num_types(),
                self.num_types
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Input(format!("invalid alpha {}", self.alpha)));
        }
        if self.interaction_depth == 0 && self.variant.predicts_interactions() {
            return Err(Error::Input("interaction network needs at least one layer".into()));
        }
        Ok(())
    }
}

/// Edge index lists shared by every graph built for one scene.
#[derive(Debug, Clone)]
pub struct Edges {
    pub receivers: Arc<[usize]>,
    pub senders: Arc<[usize]>,
}

impl Edges {
    pub fn new(pairs: &[PairKey]) -> Self {
        Self {
            receivers: pairs.iter().map(|p| p.0).collect(),
            senders: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.receivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receivers.is_empty()
    }
}

/// `e'_k = Σ_m scores[k, m] · f_m(x_k)`.
pub fn typed_edge_update(tape: &mut Tape, edge_fns: &[Mlp], x: Var, scores: Var) -> Result<Var> {
    let (rows, m) = tape.shape(scores);
    if m != edge_fns.len() || rows != tape.shape(x).0 {
        return Err(Error::shape(
            "typed_edge_update",
            format!("{rows}×{m} scores for {} edge functions and {} edges", edge_fns.len(), tape.shape(x).0),
        ));
    }
    let mut total: Option<Var> = None;
    for (k, f) in edge_fns.iter().enumerate() {
        let out = f.forward(tape, x)?;
        let w = tape.slice_cols(scores, k, 1);
        let term = tape.scale_rows(out, w);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term),
        });
    }
    total.ok_or_else(|| Error::shape("typed_edge_update", "no edge functions"))
}

/// One graph-network layer. With a single edge function and no scores it
/// is the vanilla layer; otherwise its edge update is typed.
#[derive(Debug, Clone, PartialEq)]
pub struct GnLayer {
    pub edge_fns: Vec<Mlp>,
    pub node_fn: Mlp,
}

impl GnLayer {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        node_in: usize,
        edge_in: usize,
        types: usize,
        width: usize,
    ) -> Result<Self> {
        let edge_fns = (0..types)
            .map(|m| {
                let name = if types == 1 { format!("{prefix}.edge") } else { format!("{prefix}.edge{m}") };
                Mlp::new(store, rng, &name, &[edge_in + 2 * node_in, width, width])
            })
            .collect::<Result<_>>()?;
        let node_fn = Mlp::new(store, rng, &format!("{prefix}.node"), &[node_in + width, width, width])?;
        Ok(Self { edge_fns, node_fn })
    }

    /// Returns updated `(nodes, edges)`; incoming messages are averaged per
    /// receiver, nodes without incoming edges aggregate a zero vector.
    pub fn forward(
        &self,
        tape: &mut Tape,
        nodes: Var,
        edges: Var,
        graph: &Edges,
        scores: Option<Var>,
    ) -> Result<(Var, Var)> {
        let n = tape.shape(nodes).0;
        let v_r = tape.gather_rows(nodes, graph.receivers.clone());
        let v_s = tape.gather_rows(nodes, graph.senders.clone());
        let x = tape.concat_cols(&[edges, v_r, v_s]);
        let e_new = match scores {
            Some(s) => typed_edge_update(tape, &self.edge_fns, x, s)?,
            None if self.edge_fns.len() == 1 => self.edge_fns[0].forward(tape, x)?,
            None => return Err(Error::shape(&self.node_fn.name, "typed layer called without scores")),
        };
        let agg = tape.segment_mean(e_new, graph.receivers.clone(), n);
        let y = tape.concat_cols(&[nodes, agg]);
        let v_new = self.node_fn.forward(tape, y)?;
        Ok((v_new, e_new))
    }
}

/// Everything the network reads from a scene, prepared once.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    pub num_agents: usize,
    /// Ordered pairs within the pairing radius, in ascending order.
    pub pairs: Vec<PairKey>,
    pub edges: Edges,
    /// 11 tensors of N×4 local-frame states (scaled).
    pub past_local: Vec<Tensor2>,
    pub agent_features: Tensor2,
    /// Per pair, the [`EDGE_INPUTS`] interaction-network edge inputs.
    pub pair_features: Tensor2,
    pub position: Tensor2,
    pub velocity: Tensor2,
    /// Unit heading of each agent's current frame.
    pub heading: Tensor2,
    /// Label code per pair, when the scene is labeled.
    pub labels: Option<Vec<usize>>,
    /// Per future step, N×4 `[x − x_τ, y − y_τ, vx, vy]`.
    pub targets: Option<Vec<Tensor2>>,
}

impl SceneInputs {
    pub fn new(scene: &Scene) -> Result<Self> {
        let n = scene.num_agents();
        if n == 0 {
            return Err(Error::Input(format!("scene {} has no agents", scene.scene_id)));
        }
        for (i, a) in scene.agents.iter().enumerate() {
            if a.past.len() != PAST_LEN {
                return Err(Error::Input(format!(
                    "scene {} agent {i} has {} past states, expected {PAST_LEN}",
                    scene.scene_id,
                    a.past.len()
                )));
            }
        }
        let pairs = scene.pairs_within(PAIR_RADIUS);
        let frames: Vec<Frame> = scene.agents.iter().map(|a| current_frame(&a.past)).collect();
        let past_local = (0..PAST_LEN)
            .map(|t| {
                let rows: Vec<Vec<f64>> = scene
                    .agents
                    .iter()
                    .zip(&frames)
                    .map(|(a, f)| {
                        let s = f.state_to_local(&a.past[t]);
                        vec![s.x * POS_SCALE, s.y * POS_SCALE, s.vx * VEL_SCALE, s.vy * VEL_SCALE]
                    })
                    .collect();
                Tensor2::from_rows(&rows)
            })
            .collect();
        let agent_feats = scene.agent_features.as_ref().ok_or_else(|| {
            Error::Input(format!("scene {} lacks agent features", scene.scene_id))
        })?;
        if agent_feats.len() != n {
            return Err(Error::Input(format!("scene {} has {} agent feature rows", scene.scene_id, agent_feats.len())));
        }
        let pair_feats = scene
            .pair_features
            .as_ref()
            .ok_or_else(|| Error::Input(format!("scene {} lacks pair features", scene.scene_id)))?;
        let agent_features = Tensor2::from_rows(&agent_feats.iter().map(|f| scale_agent_features(f)).collect::<Vec<_>>());
        let pair_rows = pairs
            .iter()
            .map(|&(i, j)| {
                pair_feats
                    .get(&(i, j))
                    .map(|f| edge_inputs(f, scene.current(i), scene.current(j)))
                    .ok_or_else(|| Error::Input(format!("scene {} lacks features for pair {:?}", scene.scene_id, (i, j))))
            })
            .collect::<Result<Vec<_>>>()?;
        let pair_features = if pair_rows.is_empty() {
            Tensor2::zeros(0, EDGE_INPUTS)
        } else {
            Tensor2::from_rows(&pair_rows)
        };
        let labels = match &scene.labels {
            Some(map) => Some(
                pairs
                    .iter()
                    .map(|p| {
                        map.get(p).map(|l| l.code() as usize).ok_or_else(|| {
                            Error::Input(format!("scene {} has no label for pair {p:?}", scene.scene_id))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        let current: Vec<&AgentState> = scene.agents.iter().map(|a| a.current()).collect();
        let position = Tensor2::from_rows(&current.iter().map(|s| vec![s.x, s.y]).collect::<Vec<_>>());
        let velocity = Tensor2::from_rows(&current.iter().map(|s| vec![s.vx, s.vy]).collect::<Vec<_>>());
        let heading = Tensor2::from_rows(
            &frames.iter().map(|f| vec![f.heading().cos(), f.heading().sin()]).collect::<Vec<_>>(),
        );
        let targets = scene.has_futures().then(|| {
            (0..FUTURE_LEN)
                .map(|t| {
                    let rows: Vec<Vec<f64>> = scene
                        .agents
                        .iter()
                        .map(|a| {
                            let (s, c) = (&a.future[t], a.current());
                            vec![s.x - c.x, s.y - c.y, s.vx, s.vy]
                        })
                        .collect();
                    Tensor2::from_rows(&rows)
                })
                .collect()
        });
        Ok(Self {
            num_agents: n,
            edges: Edges::new(&pairs),
            pairs,
            past_local,
            agent_features,
            pair_features,
            position,
            velocity,
            heading,
            labels,
            targets,
        })
    }
}

fn scale_agent_features(f: &[f64; AGENT_FEATURES]) -> Vec<f64> {
    vec![f[0] * VEL_SCALE, f[1] * VEL_SCALE, f[2] / std::f64::consts::PI, f[3] / 50.0]
}

/// Times for `a` and `b` to reach the meeting point of their velocity rays,
/// or `None` when the rays are parallel or meet behind either agent.
fn ray_conflict(a: &AgentState, b: &AgentState) -> Option<(f64, f64)> {
    let (u, v) = (a.velocity(), b.velocity());
    let cross = u[0] * v[1] - u[1] * v[0];
    if cross.abs() < 1e-9 {
        return None;
    }
    let d = [b.x - a.x, b.y - a.y];
    let t = (d[0] * v[1] - d[1] * v[0]) / cross;
    let s = (d[0] * u[1] - d[1] * u[0]) / cross;
    (t >= 0.0 && s >= 0.0).then_some((t, s))
}

fn edge_inputs(f: &[f64; PAIR_FEATURES], a: &AgentState, b: &AgentState) -> Vec<f64> {
    let (flag, ta, tb) = match ray_conflict(a, b) {
        Some((ta, tb)) => (1.0, ta.min(CONFLICT_HORIZON), tb.min(CONFLICT_HORIZON)),
        None => (0.0, CONFLICT_HORIZON, CONFLICT_HORIZON),
    };
    vec![
        f[0] * POS_SCALE,
        f[1].cos(),
        f[1].sin(),
        f[2] * VEL_SCALE,
        f[3].cos(),
        f[3].sin(),
        f[4] * VEL_SCALE,
        flag,
        ta / CONFLICT_HORIZON,
        tb / CONFLICT_HORIZON,
    ]
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub encoding: Var,
    /// Interaction probabilities per pair (E×3), for predicting variants.
    pub probs: Option<Var>,
    /// Type scores actually fed to the decoder for every pair.
    pub scores: Option<Tensor2>,
    /// Global positions and velocities per future step.
    pub positions: Vec<Var>,
    pub velocities: Vec<Var>,
}

/// Layer layout of a model; parameter values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    encoder: GruCell,
    interaction: Vec<GnLayer>,
    readout: Option<Mlp>,
    decoder: Vec<GnLayer>,
    head: Mlp,
    decoder_gru: GruCell,
}

impl Network {
    pub fn new(config: ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (config.hidden, config.width);
        let encoder = GruCell::new(store, &mut rng, "enc.gru", 4, h)?;
        let (interaction, readout) = if config.variant.predicts_interactions() {
            let mut layers = Vec::new();
            let (mut node_in, mut edge_in) = (h + AGENT_FEATURES, EDGE_INPUTS);
            for l in 0..config.interaction_depth {
                layers.push(GnLayer::new(store, &mut rng, &format!("int.gn{l}"), node_in, edge_in, 1, w)?);
                (node_in, edge_in) = (w, w);
            }
            let readout = Mlp::new(store, &mut rng, "int.readout", &[w, w, NUM_TYPES])?;
            (layers, Some(readout))
        } else {
            (Vec::new(), None)
        };
        let types = config.num_types;
        let mut decoder = Vec::new();
        let mut node_in = h + 2;
        if types > 0 {
            let mut edge_in = 4 + types;
            for l in 0..config.decoder_depth {
                decoder.push(GnLayer::new(store, &mut rng, &format!("dec.gn{l}"), node_in, edge_in, types, w)?);
                (node_in, edge_in) = (w, w);
            }
        }
        let head = Mlp::new(store, &mut rng, "dec.head", &[node_in, w, 2])?;
        let decoder_gru = GruCell::new(store, &mut rng, "dec.gru", 4, h)?;
        Ok(Self { config, encoder, interaction, readout, decoder, head, decoder_gru })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn encoder(&self) -> &GruCell {
        &self.encoder
    }

    pub fn decoder_layers(&self) -> &[GnLayer] {
        &self.decoder
    }

    pub fn interaction_layers(&self) -> &[GnLayer] {
        &self.interaction
    }

    /// Final GRU state per agent (N×hidden).
    pub fn encode(&self, tape: &mut Tape, inputs: &SceneInputs) -> Result<Var> {
        if inputs.past_local.len() != PAST_LEN {
            return Err(Error::shape(
                "enc.gru",
                format!("{} past steps, expected {PAST_LEN}", inputs.past_local.len()),
            ));
        }
        let mut h = tape.constant(Tensor2::zeros(inputs.num_agents, self.config.hidden));
        for x in &inputs.past_local {
            let xv = tape.constant(x.clone());
            h = self.encoder.step(tape, h, xv)?;
        }
        Ok(h)
    }

    /// Softmax interaction scores per pair (E×3).
    pub fn predict_interactions(&self, tape: &mut Tape, encoding: Var, inputs: &SceneInputs) -> Result<Var> {
        let readout = self
            .readout
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("variant {} has no interaction network", self.variant())))?;
        let feats = tape.constant(inputs.agent_features.clone());
        let mut nodes = tape.concat_cols(&[encoding, feats]);
        let mut edges = tape.constant(inputs.pair_features.clone());
        for layer in &self.interaction {
            (nodes, edges) = layer.forward(tape, nodes, edges, &inputs.edges, None)?;
        }
        let logits = readout.forward(tape, edges)?;
        Ok(tape.softmax_rows(logits))
    }

    /// Rolls out 10 steps from the current states. `scores` has one row per
    /// edge of `graph` (ignored by the baseline).
    pub fn decode_rollout(
        &self,
        tape: &mut Tape,
        encoding: Var,
        scores: Option<Var>,
        graph: &Edges,
        inputs: &SceneInputs,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let typed = !self.decoder.is_empty();
        if typed {
            let s = scores.ok_or_else(|| Error::shape("dec.gn0", "decoder needs type scores"))?;
            let (rows, cols) = tape.shape(s);
            if rows != graph.len() || cols != self.config.num_types {
                return Err(Error::shape(
                    "dec.gn0",
                    format!("{rows}×{cols} scores for {} edges and {} types", graph.len(), self.config.num_types),
                ));
            }
        }
        let mut p = tape.constant(inputs.position.clone());
        let mut v = tape.constant(inputs.velocity.clone());
        let mut cs = tape.constant(inputs.heading.clone());
        let mut h = encoding;
        let mut positions = Vec::with_capacity(FUTURE_LEN);
        let mut velocities = Vec::with_capacity(FUTURE_LEN);
        for step in 0..FUTURE_LEN {
            if step > 0 {
                let fallback = tape.value(cs).clone();
                cs = tape.heading(v, &fallback);
            }
            let v_local = tape.rotate(v, cs, Rotation::ToLocal);
            let v_local_scaled = tape.scale(v_local, VEL_SCALE);
            let mut nodes = tape.concat_cols(&[h, v_local_scaled]);
            if typed {
                let s = scores.unwrap();
                let cs_r = tape.gather_rows(cs, graph.receivers.clone());
                let p_r = tape.gather_rows(p, graph.receivers.clone());
                let p_s = tape.gather_rows(p, graph.senders.clone());
                let v_s = tape.gather_rows(v, graph.senders.clone());
                let dp = tape.sub(p_s, p_r);
                let dp_local = tape.rotate(dp, cs_r, Rotation::ToLocal);
                let vs_local = tape.rotate(v_s, cs_r, Rotation::ToLocal);
                let dp_scaled = tape.scale(dp_local, POS_SCALE);
                let vs_scaled = tape.scale(vs_local, VEL_SCALE);
                let mut edges = tape.concat_cols(&[dp_scaled, vs_scaled, s]);
                for layer in &self.decoder {
                    (nodes, edges) = layer.forward(tape, nodes, edges, graph, Some(s))?;
                }
            }
            let accel = self.head.forward(tape, nodes)?;
            let dv = tape.scale(accel, DT);
            let v_next_local = tape.add(v_local, dv);
            let dp_local = tape.scale(v_next_local, DT);
            let v_next = tape.rotate(v_next_local, cs, Rotation::ToGlobal);
            let dp = tape.rotate(dp_local, cs, Rotation::ToGlobal);
            p = tape.add(p, dp);
            v = v_next;
            positions.push(p);
            velocities.push(v);
            if step + 1 < FUTURE_LEN {
                let dp_in = tape.scale(dp_local, POS_SCALE);
                let v_in = tape.scale(v_next_local, VEL_SCALE);
                let x = tape.concat_cols(&[dp_in, v_in]);
                h = self.decoder_gru.step(tape, h, x)?;
            }
        }
        Ok((positions, velocities))
    }

    /// Full forward pass. `overrides` replaces the scores of the listed
    /// pairs with exact one-hots.
    pub fn record(
        &self,
        tape: &mut Tape,
        inputs: &SceneInputs,
        overrides: Option<&BTreeMap<PairKey, InteractionLabel>>,
    ) -> Result<Recorded> {
        let variant = self.variant();
        let overrides = overrides.filter(|o| !o.is_empty());
        if overrides.is_some() && !variant.supports_injection() {
            return Err(Error::Unsupported("variant does not support injection".into()));
        }
        if let Some(o) = overrides {
            if let Some(p) = o.keys().find(|p| inputs.pairs.binary_search(p).is_err()) {
                return Err(Error::Input(format!("no edge for pair {p:?} within {PAIR_RADIUS} m")));
            }
        }
        if variant.needs_labels() && inputs.labels.is_none() {
            return Err(Error::Input(format!("variant {variant} needs labeled scenes")));
        }
        let encoding = self.encode(tape, inputs)?;
        let probs = if variant.predicts_interactions() {
            Some(self.predict_interactions(tape, encoding, inputs)?)
        } else {
            None
        };
        let e = inputs.pairs.len();
        let scores: Option<Var> = match variant.score_source() {
            ScoreSource::None => None,
            ScoreSource::Constant => Some(tape.constant(Tensor2::full(e, 1, 1.0))),
            ScoreSource::Labels => Some(tape.constant(one_hot(inputs.labels.as_ref().unwrap()))),
            ScoreSource::Predicted => probs,
        };
        let scores = match (scores, overrides) {
            (Some(s), Some(o)) => {
                let mut value = tape.value(s).clone();
                for (k, pair) in inputs.pairs.iter().enumerate() {
                    if let Some(label) = o.get(pair) {
                        let row = value.row_mut(k);
                        row.fill(0.0);
                        row[label.code() as usize] = 1.0;
                    }
                }
                Some(tape.constant(value))
            }
            (s, _) => s,
        };
        let score_values = scores.map(|s| tape.value(s).clone());

        let (graph, dec_scores) = if variant.drops_ignoring() {
            let labels = inputs.labels.as_ref().unwrap();
            let keep: Vec<usize> = (0..e)
                .filter(|&k| {
                    let label = overrides
                        .and_then(|o| o.get(&inputs.pairs[k]).map(|l| l.code() as usize))
                        .unwrap_or(labels[k]);
                    label != InteractionLabel::Ignoring.code() as usize
                })
                .collect();
            let kept: Vec<PairKey> = keep.iter().map(|&k| inputs.pairs[k]).collect();
            let s = scores.map(|s| tape.gather_rows(s, keep.into()));
            (Edges::new(&kept), s)
        } else {
            (inputs.edges.clone(), scores)
        };
        let (positions, velocities) = self.decode_rollout(tape, encoding, dec_scores, &graph, inputs)?;
        Ok(Recorded { encoding, probs, scores: score_values, positions, velocities })
    }

    /// `α · CE(labels, probs) + MSE(anchored futures)`.
    pub fn joint_loss(&self, tape: &mut Tape, rec: &Recorded, inputs: &SceneInputs, alpha: f64) -> Result<Var> {
        let targets = inputs
            .targets
            .as_ref()
            .ok_or_else(|| Error::Input("scene has no future states to fit".into()))?;
        let p0 = tape.constant(inputs.position.clone());
        let mut se: Option<Var> = None;
        for (t, target) in targets.iter().enumerate() {
            let rel = tape.sub(rec.positions[t], p0);
            let pred = tape.concat_cols(&[rel, rec.velocities[t]]);
            let term = tape.squared_error(pred, target.clone());
            se = Some(match se {
                None => term,
                Some(acc) => tape.add(acc, term),
            });
        }
        let count = (FUTURE_LEN * inputs.num_agents * 4) as f64;
        let mut loss = tape.scale(se.unwrap(), 1.0 / count);
        if alpha > 0.0 {
            if let Some(probs) = rec.probs {
                let labels = inputs
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::Input("supervised loss needs a labeled scene".into()))?;
                if !labels.is_empty() {
                    let ce = tape.cross_entropy(probs, labels);
                    let weighted = tape.scale(ce, alpha);
                    loss = tape.add(loss, weighted);
                }
            }
        }
        Ok(loss)
    }

    /// Loss and parameter gradients for one scene.
    pub fn loss_and_grads(&self, store: &ParamStore, inputs: &SceneInputs) -> Result<(f64, Grads)> {
        let mut tape = Tape::new(store);
        let rec = self.record(&mut tape, inputs, None)?;
        let loss = self.joint_loss(&mut tape, &rec, inputs, self.config.alpha)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            let culprit = tape.first_non_finite().unwrap_or_else(|| "loss".into());
            return Err(Error::NonFinite(format!("non-finite loss; first non-finite tensor: {culprit}")));
        }
        Ok((value, tape.backward(loss)))
    }

    /// Loss without gradients.
    pub fn loss(&self, store: &ParamStore, inputs: &SceneInputs) -> Result<f64> {
        let mut tape = Tape::new(store);
        let rec = self.record(&mut tape, inputs, None)?;
        let loss = self.joint_loss(&mut tape, &rec, inputs, self.config.alpha)?;
        Ok(tape.value(loss).item())
    }

    pub fn predict(
        &self,
        store: &ParamStore,
        inputs: &SceneInputs,
        overrides: Option<&BTreeMap<PairKey, InteractionLabel>>,
    ) -> Result<Prediction> {
        let mut tape = Tape::new(store);
        let rec = self.record(&mut tape, inputs, overrides)?;
        let futures = (0..inputs.num_agents)
            .map(|i| {
                (0..FUTURE_LEN)
                    .map(|t| {
                        let (p, v) = (tape.value(rec.positions[t]), tape.value(rec.velocities[t]));
                        AgentState::new(p.get(i, 0), p.get(i, 1), v.get(i, 0), v.get(i, 1))
                    })
                    .collect()
            })
            .collect();
        let probs = rec.probs.map(|p| rows3(tape.value(p)));
        let scores = rec.scores.as_ref().filter(|s| s.cols() == NUM_TYPES).map(rows3);
        Ok(Prediction { futures, pairs: inputs.pairs.clone(), probs, scores })
    }
}

fn rows3(t: &Tensor2) -> Vec<[f64; NUM_TYPES]> {
    (0..t.rows()).map(|r| [t.get(r, 0), t.get(r, 1), t.get(r, 2)]).collect()
}

fn one_hot(codes: &[usize]) -> Tensor2 {
    let mut t = Tensor2::zeros(codes.len(), NUM_TYPES);
    for (r, &c) in codes.iter().enumerate() {
        t.set(r, c, 1.0);
    }
    t
}

/// Model output for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Per agent, 10 predicted global states.
    pub futures: Vec<Vec<AgentState>>,
    pub pairs: Vec<PairKey>,
    /// Interaction-network probabilities per pair.
    pub probs: Option<Vec<[f64; NUM_TYPES]>>,
    /// Three-type scores the decoder used per pair (after injection).
    pub scores: Option<Vec<[f64; NUM_TYPES]>>,
}

impl Prediction {
    /// Label with the highest score per pair, from the decoder scores.
    pub fn interaction_argmax(&self) -> Option<BTreeMap<PairKey, InteractionLabel>> {
        let scores = self.probs.as_ref().or(self.scores.as_ref())?;
        Some(
            self.pairs
                .iter()
                .zip(scores)
                .map(|(&p, s)| {
                    let best = (0..NUM_TYPES).fold(0, |b, k| if s[k] > s[b] { k } else { b });
                    (p, InteractionLabel::from_code(best as u8).unwrap())
                })
                .collect(),
        )
    }
}

/// Network layout plus parameter values.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub store: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    format_version: u32,
    hyperparams: serde_json::Value,
    config: ModelConfig,
    params: BTreeMap<String, TensorRecord>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let network = Network::new(config, &mut store, seed)?;
        Ok(Self { network, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.network.config
    }

    pub fn variant(&self) -> Variant {
        self.network.variant()
    }

    pub fn predict(&self, scene: &Scene) -> Result<Prediction> {
        self.network.predict(&self.store, &SceneInputs::new(scene)?, None)
    }

    pub fn predict_with(&self, scene: &Scene, overrides: &BTreeMap<PairKey, InteractionLabel>) -> Result<Prediction> {
        self.network.predict(&self.store, &SceneInputs::new(scene)?, Some(overrides))
    }

    /// Zeroes the output head so the decoder extrapolates at constant velocity.
    pub fn zero_head(&mut self) {
        self.network.head.zero_output(&mut self.store);
    }

    pub fn to_json(&self, hyperparams: serde_json::Value) -> Result<String> {
        let record = CheckpointRecord {
            format_version: CHECKPOINT_VERSION,
            hyperparams,
            config: self.network.config.clone(),
            params: self
                .store
                .snapshot()
                .into_iter()
                .map(|(k, t)| {
                    let shape = [t.rows(), t.cols()];
                    (k, TensorRecord { shape, data: t.into_vec() })
                })
                .collect(),
        };
        Ok(serde_json::to_string(&record)?)
    }

    pub fn from_json(text: &str) -> Result<(Self, serde_json::Value)> {
        let record: CheckpointRecord = serde_json::from_str(text)?;
        if record.format_version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!(
                "unsupported checkpoint format version {}",
                record.format_version
            )));
        }
        let mut model = Model::new(record.config, 0)?;
        let values = record
            .params
            .into_iter()
            .map(|(k, t)| {
                if t.data.len() != t.shape[0] * t.shape[1] {
                    return Err(Error::shape(k, "data length does not match shape"));
                }
                Ok((k, Tensor2::from_vec(t.shape[0], t.shape[1], t.data)))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        model.store.load_snapshot(&values)?;
        Ok((model, record.hyperparams))
    }

    pub fn save(&self, path: &Path, hyperparams: serde_json::Value) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(self.to_json(hyperparams)?.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut text)?;
        Self::from_json(&text)
    }
}
