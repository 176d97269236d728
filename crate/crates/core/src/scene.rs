//! Domain data model: agent states, trajectories, interaction labels and
//! windowed multi-agent scenes.
//!
//! A [`Scene`] is one 10 s episode sampled at 2 Hz. The first 11 samples
//! (indices 0..=10) are observed, index 10 being the current time τ; the
//! remaining 10 samples are the prediction targets.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Sampling interval in seconds.
pub const DT: f64 = 0.5;
/// Observed samples per agent, including the current state.
pub const PAST_LEN: usize = 11;
/// Predicted samples per agent.
pub const FUTURE_LEN: usize = 10;
/// Total samples in one scene window.
pub const WINDOW_LEN: usize = PAST_LEN + FUTURE_LEN;
/// Pairs closer than this at the current time are labeled and connected.
pub const PAIR_RADIUS: f64 = 100.0;
/// Agent-wise feature width.
pub const AGENT_FEATURES: usize = 4;
/// Pair-wise feature width.
pub const PAIR_FEATURES: usize = 5;
/// Default speed slack used when checking position/velocity consistency.
pub const DEFAULT_SPEED_SLACK: f64 = 5.0;

/// 2D position and velocity of one agent at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl AgentState {
    pub const fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self { x, y, vx, vy }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.vx, self.vy]
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.vx.is_finite() && self.vy.is_finite()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.vx, self.vy]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// A sampled state sequence for one agent on a fixed clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub agent_id: String,
    pub states: Vec<AgentState>,
    pub dt: f64,
    /// Timestamp of `states[0]` in seconds on the shared clock.
    pub start_time: f64,
}

impl Trajectory {
    pub fn new(agent_id: impl Into<String>, states: Vec<AgentState>) -> Self {
        Self {
            agent_id: agent_id.into(),
            states,
            dt: DT,
            start_time: 0.0,
        }
    }

    pub fn with_start_time(mut self, start_time: f64) -> Self {
        self.start_time = start_time;
        self
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.states.iter().map(AgentState::position).collect()
    }

    pub fn duration(&self) -> f64 {
        self.states.len().saturating_sub(1) as f64 * self.dt
    }

    /// Returns the index of the first sample violating the
    /// position/velocity consistency bound, if any.
    pub fn first_inconsistency(&self, slack: f64) -> Option<usize> {
        self.states.windows(2).position(|w| {
            let step = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            let bound = (w[0].speed().max(w[1].speed()) + slack) * self.dt;
            step > bound + 1e-12
        })
    }

    pub fn validate(&self, slack: f64) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::Input(format!("trajectory {} is empty", self.agent_id)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Input(format!("trajectory {} has dt <= 0", self.agent_id)));
        }
        if let Some(k) = self.states.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!(
                "trajectory {} has a non-finite state at sample {k}",
                self.agent_id
            )));
        }
        if let Some(k) = self.first_inconsistency(slack) {
            return Err(Error::Input(format!(
                "trajectory {} moves faster than its speed allows between samples {k} and {}",
                self.agent_id,
                k + 1
            )));
        }
        Ok(())
    }
}

/// Pairwise interaction type of agent i toward agent j.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InteractionLabel {
    Ignoring = 0,
    Going = 1,
    Yielding = 2,
}

impl InteractionLabel {
    pub const ALL: [InteractionLabel; 3] = [
        InteractionLabel::Ignoring,
        InteractionLabel::Going,
        InteractionLabel::Yielding,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Ignoring),
            1 => Some(Self::Going),
            2 => Some(Self::Yielding),
            _ => None,
        }
    }

    /// The label the other agent of the pair must carry.
    pub fn reversed(self) -> Self {
        match self {
            Self::Ignoring => Self::Ignoring,
            Self::Going => Self::Yielding,
            Self::Yielding => Self::Going,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ignoring => "ignoring",
            Self::Going => "going",
            Self::Yielding => "yielding",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ignoring" | "0" => Some(Self::Ignoring),
            "going" | "1" => Some(Self::Going),
            "yielding" | "2" => Some(Self::Yielding),
            _ => None,
        }
    }
}

impl fmt::Display for InteractionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl serde::Serialize for InteractionLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for InteractionLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        InteractionLabel::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown label {s:?}")))
    }
}

/// One agent inside a scene. `past[10]` is the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: String,
    pub past: Vec<AgentState>,
    pub future: Vec<AgentState>,
}

impl Agent {
    pub fn current(&self) -> &AgentState {
        self.past.last().expect("agent without past states")
    }
}

pub type PairKey = (usize, usize);

/// A fixed-length windowed multi-agent episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub dt: f64,
    pub agents: Vec<Agent>,
    pub agent_features: Option<Vec<[f64; AGENT_FEATURES]>>,
    pub pair_features: Option<BTreeMap<PairKey, [f64; PAIR_FEATURES]>>,
    pub labels: Option<BTreeMap<PairKey, InteractionLabel>>,
}

impl Scene {
    pub fn new(scene_id: impl Into<String>, agents: Vec<Agent>) -> Self {
        Self {
            scene_id: scene_id.into(),
            dt: DT,
            agents,
            agent_features: None,
            pair_features: None,
            labels: None,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn current(&self, i: usize) -> &AgentState {
        self.agents[i].current()
    }

    pub fn has_futures(&self) -> bool {
        !self.agents.is_empty() && self.agents.iter().all(|a| a.future.len() == FUTURE_LEN)
    }

    /// Ordered pairs (i, j), i ≠ j, closer than `radius` at the current time.
    pub fn pairs_within(&self, radius: f64) -> Vec<PairKey> {
        let n = self.num_agents();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (a, b) = (self.current(i), self.current(j));
                if (a.x - b.x).hypot(a.y - b.y) < radius {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    pub fn future_trajectory(&self, i: usize) -> Trajectory {
        let a = &self.agents[i];
        Trajectory::new(a.id.clone(), a.future.clone()).with_start_time(PAST_LEN as f64 * self.dt)
    }

    pub fn full_trajectory(&self, i: usize) -> Trajectory {
        let a = &self.agents[i];
        let mut states = a.past.clone();
        states.extend_from_slice(&a.future);
        Trajectory::new(a.id.clone(), states)
    }
}

/// One failed scene invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoAgents,
    PastLength { agent: usize, len: usize },
    FutureLength { agent: usize, len: usize },
    NonFiniteState { agent: usize, step: usize },
    Kinematics { agent: usize, step: usize },
    BadDt(f64),
    SelfPairLabel { agent: usize },
    LabelOutOfRange { i: usize, j: usize },
    LabelCoverage { i: usize, j: usize },
    LabelAntisymmetry { i: usize, j: usize },
    AgentFeatureCount { expected: usize, found: usize },
    NonFiniteFeature { what: String },
    DuplicateAgentId { agent: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoAgents => write!(f, "scene has no agents"),
            Violation::PastLength { agent, len } => {
                write!(f, "agent {agent}: past has {len} samples, expected {PAST_LEN}")
            }
            Violation::FutureLength { agent, len } => {
                write!(f, "agent {agent}: future has {len} samples, expected {FUTURE_LEN}")
            }
            Violation::NonFiniteState { agent, step } => {
                write!(f, "agent {agent}: non-finite state at step {step}")
            }
            Violation::Kinematics { agent, step } => write!(
                f,
                "agent {agent}: displacement between steps {step} and {} exceeds speed bound",
                step + 1
            ),
            Violation::BadDt(dt) => write!(f, "dt {dt} is not {DT}"),
            Violation::SelfPairLabel { agent } => write!(f, "label on self pair ({agent},{agent})"),
            Violation::LabelOutOfRange { i, j } => write!(f, "label pair ({i},{j}) out of range"),
            Violation::LabelCoverage { i, j } => {
                write!(f, "label coverage: pair ({i},{j}) labeled iff within {PAIR_RADIUS} m violated")
            }
            Violation::LabelAntisymmetry { i, j } => {
                write!(f, "label antisymmetry violated for pair ({i},{j})")
            }
            Violation::AgentFeatureCount { expected, found } => {
                write!(f, "agent features: {found} rows, expected {expected}")
            }
            Violation::NonFiniteFeature { what } => write!(f, "non-finite feature: {what}"),
            Violation::DuplicateAgentId { agent } => write!(f, "agent {agent}: duplicate id"),
        }
    }
}

/// Checks every scene invariant; an empty report means the scene is valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    validate_scene_with_slack(scene, DEFAULT_SPEED_SLACK)
}

pub fn validate_scene_with_slack(scene: &Scene, slack: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = scene.num_agents();
    if n == 0 {
        out.push(Violation::NoAgents);
        return out;
    }
    if (scene.dt - DT).abs() > 1e-12 {
        out.push(Violation::BadDt(scene.dt));
    }
    let mut shapes_ok = true;
    for (i, agent) in scene.agents.iter().enumerate() {
        if scene.agents[..i].iter().any(|a| a.id == agent.id) {
            out.push(Violation::DuplicateAgentId { agent: i });
        }
        if agent.past.len() != PAST_LEN {
            out.push(Violation::PastLength { agent: i, len: agent.past.len() });
            shapes_ok = false;
        }
        if agent.future.len() != FUTURE_LEN {
            out.push(Violation::FutureLength { agent: i, len: agent.future.len() });
        }
        let mut finite = true;
        for (step, s) in agent.past.iter().chain(agent.future.iter()).enumerate() {
            if !s.is_finite() {
                out.push(Violation::NonFiniteState { agent: i, step });
                finite = false;
                shapes_ok = false;
            }
        }
        if finite {
            if let Some(step) = scene.full_trajectory(i).first_inconsistency(slack) {
                out.push(Violation::Kinematics { agent: i, step });
            }
        }
    }

    if let Some(labels) = &scene.labels {
        for (&(i, j), &label) in labels {
            if i >= n || j >= n {
                out.push(Violation::LabelOutOfRange { i, j });
                continue;
            }
            if i == j {
                out.push(Violation::SelfPairLabel { agent: i });
                continue;
            }
            if labels.get(&(j, i)) != Some(&label.reversed()) {
                out.push(Violation::LabelAntisymmetry { i, j });
            }
        }
        if shapes_ok {
            let expected = scene.pairs_within(PAIR_RADIUS);
            for &(i, j) in &expected {
                if !labels.contains_key(&(i, j)) {
                    out.push(Violation::LabelCoverage { i, j });
                }
            }
            for &(i, j) in labels.keys() {
                if i < n && j < n && i != j && !expected.contains(&(i, j)) {
                    out.push(Violation::LabelCoverage { i, j });
                }
            }
        }
    }

    if let Some(features) = &scene.agent_features {
        if features.len() != n {
            out.push(Violation::AgentFeatureCount { expected: n, found: features.len() });
        }
        for (i, f) in features.iter().enumerate() {
            if f.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFiniteFeature { what: format!("agent {i}") });
            }
        }
    }
    if let Some(features) = &scene.pair_features {
        for (&(i, j), f) in features {
            if i >= n || j >= n || i == j {
                out.push(Violation::LabelOutOfRange { i, j });
            } else if f.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFiniteFeature { what: format!("pair ({i},{j})") });
            }
        }
    }
    out
}

/// Cuts aligned tracks into sliding scene windows of [`WINDOW_LEN`] samples.
///
/// Windows start at every `stride`-th sample of the shared clock, beginning
/// with the earliest sample of any track. Agents that do not cover a window
/// completely are dropped from it; windows with no complete agent are
/// skipped.
pub fn window_tracks(tracks: &[Trajectory], stride: usize) -> Result<Vec<Scene>> {
    if stride == 0 {
        return Err(Error::Input("stride must be at least 1".into()));
    }
    if tracks.is_empty() {
        return Ok(Vec::new());
    }
    let mut spans = Vec::with_capacity(tracks.len());
    for track in tracks {
        if (track.dt - DT).abs() > 1e-9 {
            return Err(Error::Alignment(format!(
                "track {} has dt {} (expected {DT})",
                track.agent_id, track.dt
            )));
        }
        let start = track.start_time / DT;
        let rounded = start.round();
        if (start - rounded).abs() > 1e-6 {
            return Err(Error::Alignment(format!(
                "track {} starts at {} s, off the {DT} s clock",
                track.agent_id, track.start_time
            )));
        }
        spans.push((rounded as i64, track.states.len() as i64));
    }
    let first = spans.iter().map(|s| s.0).min().unwrap_or(0);
    let last = spans.iter().map(|s| s.0 + s.1).max().unwrap_or(0);

    let mut scenes = Vec::new();
    let mut w = first;
    while w + WINDOW_LEN as i64 <= last {
        let mut agents = Vec::new();
        for (track, &(start, len)) in tracks.iter().zip(&spans) {
            if start <= w && w + WINDOW_LEN as i64 <= start + len {
                let offset = (w - start) as usize;
                let slice = &track.states[offset..offset + WINDOW_LEN];
                agents.push(Agent {
                    id: track.agent_id.clone(),
                    past: slice[..PAST_LEN].to_vec(),
                    future: slice[PAST_LEN..].to_vec(),
                });
            }
        }
        if !agents.is_empty() {
            scenes.push(Scene::new(format!("w{w}"), agents));
        }
        w += stride as i64;
    }
    Ok(scenes)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn straight_track(id: &str, n: usize, start: f64) -> Trajectory {
        let states = (0..n)
            .map(|k| AgentState::new(k as f64 * DT, 0.0, 1.0, 0.0))
            .collect();
        Trajectory::new(id, states).with_start_time(start)
    }

    pub(crate) fn straight_scene(n_agents: usize, spacing: f64) -> Scene {
        let agents = (0..n_agents)
            .map(|i| {
                let y = i as f64 * spacing;
                let states: Vec<_> = (0..WINDOW_LEN)
                    .map(|k| AgentState::new(k as f64 * DT * 2.0, y, 2.0, 0.0))
                    .collect();
                Agent {
                    id: format!("a{i}"),
                    past: states[..PAST_LEN].to_vec(),
                    future: states[PAST_LEN..].to_vec(),
                }
            })
            .collect();
        Scene::new("s", agents)
    }

    #[test]
    fn minimal_window() {
        let scenes = window_tracks(&[straight_track("a", 21, 0.0)], 1).unwrap();
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].num_agents(), 1);
        assert_eq!(scenes[0].agents[0].past.len(), PAST_LEN);
        assert_eq!(scenes[0].agents[0].future.len(), FUTURE_LEN);
    }

    #[test]
    fn window_count_matches_enumeration() {
        let track = straight_track("a", 23, 0.0);
        let scenes = window_tracks(&[track.clone()], 1).unwrap();
        let starts: Vec<usize> = (0..track.states.len()).filter(|s| s + WINDOW_LEN <= 23).collect();
        assert_eq!(scenes.len(), starts.len());
        assert_eq!(scenes.len(), 3);
        for (scene, &s) in scenes.iter().zip(&starts) {
            assert_eq!(scene.agents[0].past[0], track.states[s]);
            assert_eq!(*scene.agents[0].future.last().unwrap(), track.states[s + 20]);
        }
    }

    #[test]
    fn partial_coverage_drops_agents() {
        let a = straight_track("a", 21, 0.0);
        let b = straight_track("b", 21, 5.0 * DT);
        let scenes = window_tracks(&[a, b], 1).unwrap();
        let at = |w: i64| scenes.iter().find(|s| s.scene_id == format!("w{w}")).unwrap();
        assert_eq!(at(0).num_agents(), 1);
        assert_eq!(at(5).num_agents(), 1);
        // brute-force coverage per window
        for scene in &scenes {
            let w: i64 = scene.scene_id[1..].parse().unwrap();
            let expected = [(0i64, 21i64), (5, 21)]
                .iter()
                .filter(|(s, l)| *s <= w && w + 21 <= s + l)
                .count();
            assert_eq!(scene.num_agents(), expected);
        }
    }

    #[test]
    fn two_tracks_overlapping_window() {
        let a = straight_track("a", 26, 0.0);
        let b = straight_track("b", 21, 5.0 * DT);
        let scenes = window_tracks(&[a, b], 1).unwrap();
        assert_eq!(scenes[0].num_agents(), 1);
        assert_eq!(scenes[5].num_agents(), 2);
    }

    #[test]
    fn stride_and_errors() {
        let track = straight_track("a", 30, 0.0);
        assert_eq!(window_tracks(&[track.clone()], 3).unwrap().len(), 4);
        assert!(window_tracks(&[], 1).unwrap().is_empty());
        assert!(window_tracks(&[track.clone()], 0).is_err());
        let shifted = straight_track("b", 30, 0.2);
        assert!(matches!(
            window_tracks(&[track, shifted], 1),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn valid_scene_has_no_violations() {
        let mut scene = straight_scene(2, 5.0);
        let mut labels = BTreeMap::new();
        labels.insert((0, 1), InteractionLabel::Ignoring);
        labels.insert((1, 0), InteractionLabel::Ignoring);
        scene.labels = Some(labels);
        assert!(validate_scene(&scene).is_empty());
    }

    #[test]
    fn antisymmetry_violation_reported() {
        let mut scene = straight_scene(2, 5.0);
        let mut labels = BTreeMap::new();
        labels.insert((0, 1), InteractionLabel::Going);
        labels.insert((1, 0), InteractionLabel::Going);
        scene.labels = Some(labels);
        let report = validate_scene(&scene);
        assert!(report.contains(&Violation::LabelAntisymmetry { i: 0, j: 1 }));
    }

    #[test]
    fn nan_velocity_reported_with_location() {
        let mut scene = straight_scene(2, 5.0);
        scene.agents[1].past[4].vy = f64::NAN;
        let report = validate_scene(&scene);
        assert_eq!(report, vec![Violation::NonFiniteState { agent: 1, step: 4 }]);
    }

    #[test]
    fn coverage_violation_for_far_pair() {
        let mut scene = straight_scene(2, 150.0);
        let mut labels = BTreeMap::new();
        labels.insert((0, 1), InteractionLabel::Ignoring);
        labels.insert((1, 0), InteractionLabel::Ignoring);
        scene.labels = Some(labels);
        let report = validate_scene(&scene);
        assert!(report.contains(&Violation::LabelCoverage { i: 0, j: 1 }));
    }

    #[test]
    fn teleport_is_a_kinematic_violation() {
        let mut scene = straight_scene(1, 0.0);
        scene.agents[0].future[3].x += 50.0;
        let report = validate_scene(&scene);
        assert!(matches!(report[0], Violation::Kinematics { agent: 0, .. }));
    }

    #[test]
    fn label_codes_are_fixed() {
        assert_eq!(InteractionLabel::Ignoring.code(), 0);
        assert_eq!(InteractionLabel::Going.code(), 1);
        assert_eq!(InteractionLabel::Yielding.code(), 2);
        for l in InteractionLabel::ALL {
            assert_eq!(InteractionLabel::from_code(l.code()), Some(l));
            assert_eq!(l.reversed().reversed(), l);
        }
    }
}
