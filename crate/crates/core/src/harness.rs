//! Training, evaluation metrics, the variant ablation and edge injection.
//!
//! Scenes are split 70/15/15 into train/validation/test by an FNV-1a hash of
//! their id. Training is deterministic: the epoch order comes from a seeded
//! shuffle, per-scene gradients are computed in parallel and reduced in
//! scene order, then clipped to global norm 5 and applied with Adam.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{headings, path_crossing_with, Vec2, DEFAULT_NEAR_MISS};
use crate::model::{Model, ModelConfig, Prediction, SceneInputs, Variant, NUM_TYPES};
use crate::nn::Adam;
use crate::scene::{AgentState, InteractionLabel, PairKey, Scene, DT};

/// Global gradient-norm clip applied before each optimizer step.
pub const CLIP_NORM: f64 = 5.0;
/// Future indices reported separately: 1 s, 3 s and 5 s ahead.
pub const HORIZON_STEPS: [usize; 3] = [1, 5, 9];
/// An agent within this distance of a crossing point has reached it.
pub const ARRIVAL_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn split_of(scene_id: &str) -> Split {
    match fnv1a(scene_id.as_bytes()) % 100 {
        0..=69 => Split::Train,
        70..=84 => Split::Val,
        _ => Split::Test,
    }
}

pub fn select_split(scenes: &[Scene], split: Split) -> Vec<Scene> {
    scenes.iter().filter(|s| split_of(&s.scene_id) == split).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Overrides the variant's default loss weight.
    pub alpha: Option<f64>,
    pub hidden: usize,
    pub width: usize,
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            epochs: 50,
            batch: 16,
            lr: 1e-3,
            seed: 0,
            alpha: None,
            hidden: 64,
            width: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Input("epochs and batch must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Input(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let cfg = ModelConfig::new(self.variant).with_sizes(self.hidden, self.width);
        match self.alpha {
            Some(a) => cfg.with_alpha(a),
            None => cfg,
        }
    }

    pub fn hyperparams(&self) -> serde_json::Value {
        serde_json::json!({
            "epochs": self.epochs,
            "batch": self.batch,
            "lr": self.lr,
            "seed": self.seed,
            "clip_norm": CLIP_NORM,
        })
    }
}

/// Errors at one horizon, in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub seconds: f64,
    pub dpe: f64,
    pub ate: f64,
    pub cte: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dpe: f64,
    pub ate: f64,
    pub cte: f64,
    pub horizons: Vec<HorizonMetrics>,
    /// Agent-timesteps averaged over.
    pub samples: usize,
    /// Argmax accuracy over labeled pairs, where the model produces scores.
    pub int_acc: Option<f64>,
    /// `confusion[label][predicted]` counts.
    pub confusion: Option<[[usize; NUM_TYPES]; NUM_TYPES]>,
}

/// Running sums behind a [`MetricsReport`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsAccumulator {
    sum: [f64; 3],
    count: usize,
    horizon_sum: [[f64; 3]; HORIZON_STEPS.len()],
    horizon_count: [usize; HORIZON_STEPS.len()],
    confusion: Option<[[usize; NUM_TYPES]; NUM_TYPES]>,
}

/// `(DPE, ATE, CTE)` of `pred` against `truth` with `heading` the unit
/// direction of travel.
pub fn decompose(pred: Vec2, truth: Vec2, heading: f64) -> (f64, f64, f64) {
    let d = [pred[0] - truth[0], pred[1] - truth[1]];
    let (c, s) = (heading.cos(), heading.sin());
    let along = d[0] * c + d[1] * s;
    let cross = -d[0] * s + d[1] * c;
    (d[0].hypot(d[1]), along.abs(), cross.abs())
}

impl MetricsAccumulator {
    /// Adds one agent's predicted future. `current` seeds the heading
    /// fallback for slow ground-truth samples.
    pub fn add_agent(&mut self, pred: &[AgentState], truth: &[AgentState], current: Option<&AgentState>) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::shape(
                "metrics",
                format!("{} predicted states against {} true states", pred.len(), truth.len()),
            ));
        }
        let mut seq: Vec<AgentState> = current.into_iter().copied().collect();
        let offset = seq.len();
        seq.extend_from_slice(truth);
        let hs = headings(&seq);
        for (t, (p, g)) in pred.iter().zip(truth).enumerate() {
            let (dpe, ate, cte) = decompose(p.position(), g.position(), hs[t + offset]);
            self.sum[0] += dpe;
            self.sum[1] += ate;
            self.sum[2] += cte;
            self.count += 1;
            if let Some(h) = HORIZON_STEPS.iter().position(|&k| k == t) {
                self.horizon_sum[h][0] += dpe;
                self.horizon_sum[h][1] += ate;
                self.horizon_sum[h][2] += cte;
                self.horizon_count[h] += 1;
            }
        }
        Ok(())
    }

    pub fn add_interaction(&mut self, label: usize, predicted: usize) {
        self.confusion.get_or_insert([[0; NUM_TYPES]; NUM_TYPES])[label][predicted] += 1;
    }

    /// Adds a scene's prediction: trajectories and, where scores and labels
    /// both exist, interaction confusion.
    pub fn add_scene(&mut self, scene: &Scene, pred: &Prediction) -> Result<()> {
        for (i, agent) in scene.agents.iter().enumerate() {
            self.add_agent(&pred.futures[i], &agent.future, Some(agent.current()))?;
        }
        if let (Some(argmax), Some(labels)) = (pred.interaction_argmax(), scene.labels.as_ref()) {
            self.confusion.get_or_insert([[0; NUM_TYPES]; NUM_TYPES]);
            for (pair, p) in argmax {
                if let Some(l) = labels.get(&pair) {
                    self.add_interaction(l.code() as usize, p.code() as usize);
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        for k in 0..3 {
            self.sum[k] += other.sum[k];
            for h in 0..HORIZON_STEPS.len() {
                self.horizon_sum[h][k] += other.horizon_sum[h][k];
            }
        }
        self.count += other.count;
        for h in 0..HORIZON_STEPS.len() {
            self.horizon_count[h] += other.horizon_count[h];
        }
        if let Some(c) = other.confusion {
            let mine = self.confusion.get_or_insert([[0; NUM_TYPES]; NUM_TYPES]);
            for a in 0..NUM_TYPES {
                for b in 0..NUM_TYPES {
                    mine[a][b] += c[a][b];
                }
            }
        }
    }

    pub fn report(&self) -> MetricsReport {
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        let horizons = HORIZON_STEPS
            .iter()
            .enumerate()
            .map(|(h, &k)| HorizonMetrics {
                seconds: (k + 1) as f64 * DT,
                dpe: mean(self.horizon_sum[h][0], self.horizon_count[h]),
                ate: mean(self.horizon_sum[h][1], self.horizon_count[h]),
                cte: mean(self.horizon_sum[h][2], self.horizon_count[h]),
            })
            .collect();
        let int_acc = self.confusion.and_then(|c| {
            let total: usize = c.iter().flatten().sum();
            let right: usize = (0..NUM_TYPES).map(|k| c[k][k]).sum();
            (total > 0).then(|| right as f64 / total as f64)
        });
        MetricsReport {
            dpe: mean(self.sum[0], self.count),
            ate: mean(self.sum[1], self.count),
            cte: mean(self.sum[2], self.count),
            horizons,
            samples: self.count,
            int_acc,
            confusion: self.confusion,
        }
    }
}

/// Metrics of predicted futures against true futures, one sequence per agent.
pub fn compute_metrics(pred: &[Vec<AgentState>], truth: &[Vec<AgentState>]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::shape("metrics", format!("{} predicted agents, {} true agents", pred.len(), truth.len())));
    }
    let mut acc = MetricsAccumulator::default();
    for (p, t) in pred.iter().zip(truth) {
        acc.add_agent(p, t, None)?;
    }
    Ok(acc.report())
}

/// Predictions for every scene, in order.
pub fn predict_all(model: &Model, scenes: &[Scene]) -> Result<Vec<Prediction>> {
    scenes.par_iter().map(|s| model.predict(s)).collect()
}

pub fn evaluate(model: &Model, scenes: &[Scene]) -> Result<MetricsReport> {
    let preds = predict_all(model, scenes)?;
    let mut acc = MetricsAccumulator::default();
    for (scene, pred) in scenes.iter().zip(&preds) {
        acc.add_scene(scene, pred)?;
    }
    Ok(acc.report())
}

/// Metrics CSV: one overall row and one row per horizon.
pub fn write_metrics_csv<W: Write>(out: W, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scope", "dpe", "ate", "cte", "int_acc"])?;
    let acc = report.int_acc.map(|a| a.to_string()).unwrap_or_default();
    w.write_record(["overall".to_string(), report.dpe.to_string(), report.ate.to_string(), report.cte.to_string(), acc])?;
    for h in &report.horizons {
        w.write_record([format!("{}s", h.seconds), h.dpe.to_string(), h.ate.to_string(), h.cte.to_string(), String::new()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics CSV written by [`write_metrics_csv`]. The confusion
/// matrix is not part of the file.
pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<MetricsReport> {
    let mut r = csv::Reader::from_reader(input);
    let mut overall = None;
    let mut horizons = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse { line: k + 2, detail: format!("bad value in column {c}") })
        };
        let scope = rec.get(0).unwrap_or_default();
        if scope == "overall" {
            let acc = rec.get(4).filter(|v| !v.is_empty()).map(|_| field(4)).transpose()?;
            overall = Some((field(1)?, field(2)?, field(3)?, acc));
        } else if let Some(secs) = scope.strip_suffix('s').and_then(|v| v.parse::<f64>().ok()) {
            horizons.push(HorizonMetrics { seconds: secs, dpe: field(1)?, ate: field(2)?, cte: field(3)? });
        } else {
            return Err(Error::Parse { line: k + 2, detail: format!("unknown scope {scope:?}") });
        }
    }
    let (dpe, ate, cte, int_acc) =
        overall.ok_or_else(|| Error::Parse { line: 1, detail: "no overall row".into() })?;
    Ok(MetricsReport { dpe, ate, cte, horizons, samples: 0, int_acc, confusion: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dpe: f64,
    pub val_ate: f64,
    pub val_cte: f64,
    pub val_int_acc: Option<f64>,
}

pub fn write_log_csv<W: Write>(out: W, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Row 0 is the untrained model; row k follows epoch k.
    pub log: Vec<LogRow>,
}

fn prepare(scenes: &[Scene]) -> Result<Vec<SceneInputs>> {
    scenes.par_iter().map(SceneInputs::new).collect()
}

fn mean_loss(model: &Model, inputs: &[SceneInputs]) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let losses: Vec<f64> = inputs
        .par_iter()
        .map(|x| model.network.loss(&model.store, x))
        .collect::<Result<_>>()?;
    let total: f64 = losses.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("validation loss is not finite".into()));
    }
    Ok(total / inputs.len() as f64)
}

fn log_row(model: &Model, epoch: usize, train_loss: f64, val: &[Scene], val_inputs: &[SceneInputs]) -> Result<LogRow> {
    let report = evaluate(model, val)?;
    Ok(LogRow {
        epoch,
        train_loss,
        val_loss: mean_loss(model, val_inputs)?,
        val_dpe: report.dpe,
        val_ate: report.ate,
        val_cte: report.cte,
        val_int_acc: report.int_acc,
    })
}

fn check_labels(cfg: &ModelConfig, scenes: &[Scene]) -> Result<()> {
    let needed = cfg.variant.needs_labels() || (cfg.variant.predicts_interactions() && cfg.alpha > 0.0);
    if let Some(s) = scenes.iter().find(|s| needed && s.labels.is_none()) {
        return Err(Error::Input(format!(
            "variant {} needs labeled scenes; {} has no labels",
            cfg.variant, s.scene_id
        )));
    }
    Ok(())
}

/// One optimizer step on a batch; returns the summed batch loss.
fn train_step(model: &mut Model, batch: &[&SceneInputs], adam: &Adam) -> Result<f64> {
    let results: Vec<_> = batch
        .par_iter()
        .map(|x| model.network.loss_and_grads(&model.store, x))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    model.store.zero_grads();
    for (l, g) in &results {
        loss += l;
        model.store.accumulate(g, scale);
    }
    let norm = model.store.clip_grad_norm(CLIP_NORM);
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm is {norm}")));
    }
    adam.step(&mut model.store);
    Ok(loss)
}

/// Trains on `train`, validating on `val` after every epoch.
pub fn train(cfg: &TrainConfig, train: &[Scene], val: &[Scene]) -> Result<TrainOutcome> {
    train_with(cfg, train, val, |_| {})
}

/// [`train`] with a callback after every log row.
pub fn train_with(
    cfg: &TrainConfig,
    train: &[Scene],
    val: &[Scene],
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let model_cfg = cfg.model_config();
    check_labels(&model_cfg, train)?;
    check_labels(&model_cfg, val)?;
    let mut model = Model::new(model_cfg, cfg.seed)?;
    let train_inputs = prepare(train)?;
    let val_inputs = prepare(val)?;
    let adam = Adam::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1e);

    let mut log = vec![log_row(&model, 0, mean_loss(&model, &train_inputs)?, val, &val_inputs)?];
    on_row(&log[0]);
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&SceneInputs> = chunk.iter().map(|&k| &train_inputs[k]).collect();
            total += train_step(&mut model, &batch, &adam)?;
        }
        let row = log_row(&model, epoch, total / train_inputs.len() as f64, val, &val_inputs)?;
        on_row(&row);
        log.push(row);
    }
    Ok(TrainOutcome { model, log })
}

/// Trains and evaluates every variant for every seed on the train/test
/// splits of `scenes`, validating on the validation split.
pub fn ablate(
    scenes: &[Scene],
    seeds: &[u64],
    base: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    ablate_with(scenes, seeds, base, variants, |_, _| {})
}

/// [`ablate`] with a callback receiving each row and its trained model.
pub fn ablate_with(
    scenes: &[Scene],
    seeds: &[u64],
    base: &TrainConfig,
    variants: &[Variant],
    mut on_run: impl FnMut(&AblationRow, &Model),
) -> Result<Vec<AblationRow>> {
    let train_set = select_split(scenes, Split::Train);
    let val_set = select_split(scenes, Split::Val);
    let test_set = select_split(scenes, Split::Test);
    let mut rows = Vec::new();
    for &variant in variants {
        for &seed in seeds {
            let cfg = TrainConfig { variant, seed, alpha: None, ..base.clone() };
            let outcome = train(&cfg, &train_set, &val_set)?;
            let report = evaluate(&outcome.model, &test_set)?;
            let row = AblationRow { variant, seed, report };
            on_run(&row, &outcome.model);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-run rows, then `mean` and `std` rows per variant in the seed column.
pub fn write_ablation_csv<W: Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "seed", "dpe", "ate", "cte", "int_acc"])?;
    let fmt_acc = |a: Option<f64>| a.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            r.seed.to_string(),
            r.report.dpe.to_string(),
            r.report.ate.to_string(),
            r.report.cte.to_string(),
            fmt_acc(r.report.int_acc),
        ])?;
    }
    let mut variants: Vec<Variant> = rows.iter().map(|r| r.variant).collect();
    variants.dedup();
    for v in variants {
        let of = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<f64> {
            rows.iter().filter(|r| r.variant == v).filter_map(|r| f(&r.report)).collect()
        };
        let cols = [
            of(&|m| Some(m.dpe)),
            of(&|m| Some(m.ate)),
            of(&|m| Some(m.cte)),
            of(&|m| m.int_acc),
        ];
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let mut rec = vec![v.name().to_string(), label.to_string()];
            for (k, c) in cols.iter().enumerate() {
                if k == 3 && c.is_empty() {
                    rec.push(String::new());
                } else {
                    let (m, s) = mean_std(c);
                    rec.push(if pick == 0 { m } else { s }.to_string());
                }
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean DPE per variant over the rows.
pub fn mean_dpe_by_variant(rows: &[AblationRow]) -> BTreeMap<Variant, f64> {
    let mut out = BTreeMap::new();
    for v in Variant::ALL {
        let d: Vec<f64> = rows.iter().filter(|r| r.variant == v).map(|r| r.report.dpe).collect();
        if !d.is_empty() {
            out.insert(v, mean_std(&d).0);
        }
    }
    out
}

/// Which agent of a pair reaches the pair's crossing point first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairArrival {
    pub i: usize,
    pub j: usize,
    pub point: Option<Vec2>,
    /// Seconds after the current time; `None` if never within reach.
    pub t_i: Option<f64>,
    pub t_j: Option<f64>,
    pub first: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionOverride {
    pub i: usize,
    pub j: usize,
    pub label: InteractionLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub scene_id: String,
    pub overrides: Vec<InjectionOverride>,
    pub arrivals: Vec<PairArrival>,
    /// Predicted `[x, y, vx, vy]` per agent and future step.
    pub predictions: Vec<Vec<[f64; 4]>>,
}

/// Current position followed by the predicted positions.
fn rollout_path(scene: &Scene, pred: &Prediction, i: usize) -> Vec<Vec2> {
    std::iter::once(scene.current(i).position())
        .chain(pred.futures[i].iter().map(AgentState::position))
        .collect()
}

/// Time (s after the current time) at which `path` passes closest to
/// `point`, if that distance is within [`ARRIVAL_RADIUS`].
pub fn arrival_time(path: &[Vec2], point: Vec2) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (k, w) in path.windows(2).enumerate() {
        let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let u = if len2 > 0.0 {
            (((point[0] - w[0][0]) * d[0] + (point[1] - w[0][1]) * d[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [w[0][0] + u * d[0], w[0][1] + u * d[1]];
        let dist = (q[0] - point[0]).hypot(q[1] - point[1]);
        if best.map_or(true, |(b, _)| dist < b - 1e-12) {
            best = Some((dist, (k as f64 + u) * DT));
        }
    }
    best.filter(|&(d, _)| d <= ARRIVAL_RADIUS).map(|(_, t)| t)
}

/// Intersection of the lines through `p` along `u` and `q` along `v`.
fn ray_meeting(p: Vec2, u: Vec2, q: Vec2, v: Vec2) -> Option<Vec2> {
    let det = u[0] * (-v[1]) + v[0] * u[1];
    if det.abs() < 1e-9 {
        return None;
    }
    let dx = q[0] - p[0];
    let dy = q[1] - p[1];
    let s = (dx * (-v[1]) + v[0] * dy) / det;
    Some([p[0] + u[0] * s, p[1] + u[1] * s])
}

/// Where the pair's paths meet: the predicted paths' crossing, else the
/// true futures' crossing, else the meeting point of the current headings.
fn conflict_point(scene: &Scene, pred: &Prediction, i: usize, j: usize) -> Option<Vec2> {
    let (pi, pj) = (rollout_path(scene, pred, i), rollout_path(scene, pred, j));
    if let Some(c) = path_crossing_with(&pi, &pj, DT, DEFAULT_NEAR_MISS) {
        return Some(c.point);
    }
    if scene.has_futures() {
        let fi = scene.future_trajectory(i).positions();
        let fj = scene.future_trajectory(j).positions();
        if let Some(c) = path_crossing_with(&fi, &fj, DT, DEFAULT_NEAR_MISS) {
            return Some(c.point);
        }
    }
    let (a, b) = (scene.current(i), scene.current(j));
    ray_meeting(a.position(), a.velocity(), b.position(), b.velocity())
}

pub fn arrival_order(scene: &Scene, pred: &Prediction, i: usize, j: usize) -> PairArrival {
    let point = conflict_point(scene, pred, i, j);
    let (t_i, t_j) = match point {
        Some(p) => (
            arrival_time(&rollout_path(scene, pred, i), p),
            arrival_time(&rollout_path(scene, pred, j), p),
        ),
        None => (None, None),
    };
    let first = match (t_i, t_j) {
        (Some(a), Some(b)) if a < b => Some(i),
        (Some(a), Some(b)) if b < a => Some(j),
        (Some(_), None) => Some(i),
        (None, Some(_)) => Some(j),
        _ => None,
    };
    PairArrival { i, j, point, t_i, t_j, first }
}

/// Rolls out with the listed pair scores replaced by exact one-hots and
/// reports the arrival order of every overridden pair.
pub fn inject_edges(
    model: &Model,
    scene: &Scene,
    overrides: &BTreeMap<PairKey, InteractionLabel>,
) -> Result<(Prediction, InjectionReport)> {
    if !model.variant().supports_injection() {
        return Err(Error::Unsupported("variant does not support injection".into()));
    }
    let pred = model.predict_with(scene, overrides)?;
    let mut pairs: Vec<PairKey> = overrides.keys().map(|&(i, j)| (i.min(j), i.max(j))).collect();
    pairs.dedup();
    let arrivals = pairs.iter().map(|&(i, j)| arrival_order(scene, &pred, i, j)).collect();
    let report = InjectionReport {
        scene_id: scene.scene_id.clone(),
        overrides: overrides.iter().map(|(&(i, j), &label)| InjectionOverride { i, j, label }).collect(),
        arrivals,
        predictions: pred.futures.iter().map(|f| f.iter().map(|s| s.to_array()).collect()).collect(),
    };
    Ok((pred, report))
}

/// Parses `i,j=label` override specs.
pub fn parse_override(spec: &str) -> Result<(PairKey, InteractionLabel)> {
    let bad = || Error::Input(format!("expected i,j=label, got {spec:?}"));
    let (pair, label) = spec.split_once('=').ok_or_else(bad)?;
    let (i, j) = pair.split_once(',').ok_or_else(bad)?;
    let i: usize = i.trim().parse().map_err(|_| bad())?;
    let j: usize = j.trim().parse().map_err(|_| bad())?;
    if i == j {
        return Err(Error::Input(format!("override {spec:?} pairs an agent with itself")));
    }
    let label = InteractionLabel::parse(label.trim()).ok_or_else(bad)?;
    Ok(((i, j), label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::FUTURE_LEN;
    use crate::scenegen::{gen_dataset, parse_mix};
    use proptest::prelude::*;

    fn straight(n: usize, speed: f64, offset: Vec2) -> (Vec<AgentState>, Vec<AgentState>) {
        let truth: Vec<AgentState> = (0..n).map(|k| AgentState::new(k as f64 * speed, 0.0, speed, 0.0)).collect();
        let pred = truth
            .iter()
            .map(|s| AgentState::new(s.x + offset[0], s.y + offset[1], s.vx, s.vy))
            .collect();
        (pred, truth)
    }

    #[test]
    fn metric_examples() {
        let (p, t) = straight(10, 2.0, [0.0, 0.0]);
        let r = compute_metrics(&[p], &[t]).unwrap();
        assert_eq!((r.dpe, r.ate, r.cte), (0.0, 0.0, 0.0));
        let (p, t) = straight(10, 2.0, [0.0, 1.0]);
        let r = compute_metrics(&[p], &[t]).unwrap();
        assert!((r.dpe - 1.0).abs() < 1e-12 && r.ate.abs() < 1e-12 && (r.cte - 1.0).abs() < 1e-12);
        let (p, t) = straight(10, 2.0, [3.0, 4.0]);
        let r = compute_metrics(&[p], &[t]).unwrap();
        assert!((r.dpe - 5.0).abs() < 1e-12 && (r.ate - 3.0).abs() < 1e-12 && (r.cte - 4.0).abs() < 1e-12);
        assert_eq!(r.horizons.len(), 3);
        assert_eq!(r.horizons[0].seconds, 1.0);
        assert_eq!(r.horizons[2].seconds, 5.0);
        assert!(compute_metrics(&[vec![]], &[]).is_err());
    }

    #[test]
    fn stationary_truth_uses_fallback_heading() {
        let truth = vec![AgentState::new(0.0, 0.0, 0.0, 0.0); 10];
        let pred = vec![AgentState::new(0.0, 2.0, 0.0, 0.0); 10];
        let mut acc = MetricsAccumulator::default();
        acc.add_agent(&pred, &truth, Some(&AgentState::new(0.0, 0.0, 0.0, 3.0))).unwrap();
        let r = acc.report();
        // Heading +y from the current state: the offset is purely along-track.
        assert!((r.ate - 2.0).abs() < 1e-12 && r.cte.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn decomposition_identity(px in -50.0..50.0f64, py in -50.0..50.0f64, tx in -50.0..50.0f64,
                                  ty in -50.0..50.0f64, h in -4.0..4.0f64) {
            let (d, a, c) = decompose([px, py], [tx, ty], h);
            prop_assert!((a * a + c * c - d * d).abs() <= 1e-9 * (1.0 + d * d));
        }
    }

    #[test]
    fn split_is_stable_and_roughly_proportional() {
        let ids: Vec<String> = (0..3000).map(|k| format!("scene-{k}")).collect();
        let train = ids.iter().filter(|s| split_of(s) == Split::Train).count();
        let val = ids.iter().filter(|s| split_of(s) == Split::Val).count();
        assert!((1950..2250).contains(&train), "{train}");
        assert!((350..550).contains(&val), "{val}");
        assert_eq!(split_of("crossing-00001"), split_of("crossing-00001"));
    }

    fn tiny(variant: Variant) -> TrainConfig {
        TrainConfig { epochs: 2, batch: 4, hidden: 6, width: 6, ..TrainConfig::new(variant) }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let scenes = gen_dataset(&parse_mix("crossing=6,multi=2").unwrap(), 3, 0.05).unwrap();
        let cfg = TrainConfig { lr: 0.0, epochs: 1, ..tiny(Variant::JointSupervised) };
        let out = train(&cfg, &scenes, &scenes).unwrap();
        let fresh = Model::new(cfg.model_config(), cfg.seed).unwrap();
        assert_eq!(out.model.store.snapshot(), fresh.store.snapshot());
    }

    #[test]
    fn training_is_deterministic() {
        let scenes = gen_dataset(&parse_mix("crossing=6,following=3").unwrap(), 4, 0.05).unwrap();
        let cfg = tiny(Variant::JointSupervised);
        let a = train(&cfg, &scenes, &scenes).unwrap();
        let b = train(&cfg, &scenes, &scenes).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.to_json(cfg.hyperparams()).unwrap(), b.model.to_json(cfg.hyperparams()).unwrap());
        assert_eq!(a.log.len(), 3);
        let mut csv = Vec::new();
        write_log_csv(&mut csv, &a.log).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,val_dpe,val_ate,val_cte,val_int_acc\n"));
    }

    #[test]
    fn unlabeled_data_is_rejected_when_labels_are_needed() {
        let mut scenes = gen_dataset(&parse_mix("crossing=3").unwrap(), 4, 0.05).unwrap();
        scenes.iter_mut().for_each(|s| s.labels = None);
        assert!(train(&tiny(Variant::Oracle), &scenes, &scenes).is_err());
        assert!(train(&tiny(Variant::JointSupervised), &scenes, &scenes).is_err());
        assert!(train(&tiny(Variant::JointUnsupervised), &scenes, &scenes).is_ok());
    }

    #[test]
    fn zero_head_matches_constant_velocity_metrics() {
        let scenes = gen_dataset(&parse_mix("crossing=4,multi=3").unwrap(), 8, 0.05).unwrap();
        let mut model = Model::new(ModelConfig::new(Variant::JointSupervised).with_sizes(6, 6), 1).unwrap();
        model.zero_head();
        let report = evaluate(&model, &scenes).unwrap();
        let mut acc = MetricsAccumulator::default();
        for s in &scenes {
            for a in &s.agents {
                let c = a.current();
                let cv: Vec<AgentState> = (1..=FUTURE_LEN)
                    .map(|k| {
                        let t = k as f64 * DT;
                        AgentState::new(c.x + c.vx * t, c.y + c.vy * t, c.vx, c.vy)
                    })
                    .collect();
                acc.add_agent(&cv, &a.future, Some(c)).unwrap();
            }
        }
        let expect = acc.report();
        assert!((report.dpe - expect.dpe).abs() < 1e-9);
        assert!((report.cte - expect.cte).abs() < 1e-9);
        assert_eq!(evaluate(&model, &scenes).unwrap(), report);
    }

    #[test]
    fn oracle_accuracy_is_perfect() {
        let scenes = gen_dataset(&parse_mix("crossing=4,multi=3,independent=2").unwrap(), 8, 0.05).unwrap();
        let model = Model::new(ModelConfig::new(Variant::Oracle).with_sizes(6, 6), 1).unwrap();
        assert_eq!(evaluate(&model, &scenes).unwrap().int_acc, Some(1.0));
        let base = Model::new(ModelConfig::new(Variant::Baseline).with_sizes(6, 6), 1).unwrap();
        assert_eq!(evaluate(&base, &scenes).unwrap().int_acc, None);
    }

    #[test]
    fn arrival_time_interpolates() {
        let path = vec![[0.0, 0.0], [2.0, 0.0], [4.0, 0.0]];
        assert!((arrival_time(&path, [3.0, 0.5]).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(arrival_time(&path, [3.0, 5.0]), None);
    }

    #[test]
    fn overrides_parse() {
        assert_eq!(parse_override("0,1=going").unwrap(), ((0, 1), InteractionLabel::Going));
        assert_eq!(parse_override(" 2 , 0 = Yielding").unwrap(), ((2, 0), InteractionLabel::Yielding));
        assert!(parse_override("0,0=going").is_err());
        assert!(parse_override("0-1=going").is_err());
        assert!(parse_override("0,1=maybe").is_err());
    }

    #[test]
    fn ablation_csv_has_summary_rows() {
        let report = MetricsReport {
            dpe: 1.0,
            ate: 0.5,
            cte: 0.5,
            horizons: vec![],
            samples: 1,
            int_acc: None,
            confusion: None,
        };
        let rows: Vec<AblationRow> = [1.0, 3.0]
            .iter()
            .enumerate()
            .map(|(k, &d)| AblationRow {
                variant: Variant::Baseline,
                seed: k as u64,
                report: MetricsReport { dpe: d, ..report.clone() },
            })
            .collect();
        let mut out = Vec::new();
        write_ablation_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("baseline,mean,2,"));
        assert!(text.contains("baseline,std,1,"));
    }
}
