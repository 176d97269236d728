//! Synthetic traffic scenarios whose interaction structure is fixed by
//! construction: perpendicular crossings with a designated yielder, car
//! following, independent agents on parallel lanes of a curved road, and
//! multi-agent four-way intersections served first come, first served.
//!
//! Every agent moves along a path with a closed-form speed profile. Positions
//! are sampled at 0.5 s from one sample before the window (so the first
//! velocity can be a backward difference), perturbed with Gaussian noise,
//! rigidly moved to a random place and orientation, and only then turned into
//! velocities by finite differences.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::complete_scene;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::labeler::label_scene;
use crate::scene::{Agent, AgentState, Scene, DT, PAST_LEN, WINDOW_LEN};

/// Current time τ in seconds from the first window sample.
pub const TAU: f64 = (PAST_LEN - 1) as f64 * DT;
/// Comfortable deceleration bound (m/s²).
pub const COMFORT_DECEL: f64 = 4.0;
/// Hard deceleration cap (m/s²).
pub const MAX_DECEL: f64 = 8.0;
/// Slowest creep speed a yielding agent may fall to (m/s).
pub const MIN_CREEP_SPEED: f64 = 0.3;
/// Radius of the conflict disk around each crossing point (m).
pub const CONFLICT_RADIUS: f64 = 2.0;
const MAX_ATTEMPTS: usize = 100;
const DECELS: [f64; 4] = [3.0, COMFORT_DECEL, 6.0, MAX_DECEL];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    Crossing,
    Following,
    Independent,
    MultiIntersection,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Crossing,
        ScenarioKind::Following,
        ScenarioKind::Independent,
        ScenarioKind::MultiIntersection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Crossing => "crossing",
            Self::Following => "following",
            Self::Independent => "independent",
            Self::MultiIntersection => "multi",
        }
    }

    fn code(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "crossing" => Ok(Self::Crossing),
            "following" => Ok(Self::Following),
            "independent" => Ok(Self::Independent),
            "multi" | "multi_intersection" | "multi-intersection" => Ok(Self::MultiIntersection),
            other => Err(Error::Input(format!("unknown scenario kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub num_agents: usize,
    pub speed_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self {
            kind,
            num_agents: if kind == ScenarioKind::MultiIntersection { 4 } else { 2 },
            speed_range: (3.0, 12.0),
            noise_sigma: 0.05,
            seed,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_agents(mut self, n: usize) -> Self {
        self.num_agents = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.speed_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Input(format!("invalid speed range {lo}..{hi}")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Input(format!("invalid noise sigma {}", self.noise_sigma)));
        }
        let ok = match self.kind {
            ScenarioKind::MultiIntersection => (3..=6).contains(&self.num_agents),
            _ => self.num_agents == 2,
        };
        if !ok {
            return Err(Error::Input(format!(
                "{} scenes cannot have {} agents",
                self.kind, self.num_agents
            )));
        }
        Ok(())
    }

    fn expect(&self, kind: ScenarioKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Input(format!("expected a {kind} config, got {}", self.kind)));
        }
        self.validate()
    }
}

/// Straight path that optionally turns into a circular arc after
/// `straight_len` metres. Arc length `s` may be negative (before `origin`).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Path {
    origin: Vec2,
    heading: f64,
    straight_len: f64,
    curvature: f64,
}

impl Path {
    fn straight(origin: Vec2, heading: f64) -> Self {
        Self { origin, heading, straight_len: f64::INFINITY, curvature: 0.0 }
    }

    fn dir(&self) -> Vec2 {
        [self.heading.cos(), self.heading.sin()]
    }

    fn position(&self, s: f64) -> Vec2 {
        let d = self.dir();
        if s <= self.straight_len || self.curvature == 0.0 {
            return [self.origin[0] + d[0] * s, self.origin[1] + d[1] * s];
        }
        let base = [
            self.origin[0] + d[0] * self.straight_len,
            self.origin[1] + d[1] * self.straight_len,
        ];
        let r = 1.0 / self.curvature;
        let centre = [base[0] - d[1] * r, base[1] + d[0] * r];
        let phi = self.heading + (s - self.straight_len) * self.curvature;
        [centre[0] + phi.sin() * r, centre[1] - phi.cos() * r]
    }

    /// Arc lengths at which two straight paths meet, if they are not parallel.
    fn intersect(&self, other: &Path) -> Option<(f64, f64)> {
        let (a, b) = (self.dir(), other.dir());
        let det = a[0] * (-b[1]) + b[0] * a[1];
        if det.abs() < 1e-9 {
            return None;
        }
        let dx = other.origin[0] - self.origin[0];
        let dy = other.origin[1] - self.origin[1];
        let s = (dx * (-b[1]) + b[0] * dy) / det;
        let t = (a[0] * dy - a[1] * dx) / det;
        Some((s, t))
    }
}

/// Decelerate at `onset`, creep at `v1` until `release`, then speed back up.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Yield {
    onset: f64,
    decel: f64,
    v1: f64,
    release: f64,
}

/// Closed-form arc length over time.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Profile {
    s0: f64,
    v0: f64,
    yielding: Option<Yield>,
}

impl Profile {
    fn constant(s0: f64, v0: f64) -> Self {
        Self { s0, v0, yielding: None }
    }

    fn s_at(&self, t: f64) -> f64 {
        let v0 = self.v0;
        let Some(y) = self.yielding else {
            return self.s0 + v0 * t;
        };
        if t <= y.onset {
            return self.s0 + v0 * t;
        }
        let s_on = self.s0 + v0 * y.onset;
        let td = (v0 - y.v1) / y.decel;
        let t1 = y.onset + td;
        if t <= t1 {
            let u = t - y.onset;
            return s_on + v0 * u - 0.5 * y.decel * u * u;
        }
        let s1 = s_on + 0.5 * (v0 + y.v1) * td;
        let t2 = if s1 >= y.release { t1 } else { t1 + (y.release - s1) / y.v1 };
        if t <= t2 {
            return s1 + y.v1 * (t - t1);
        }
        let s2 = s1 + y.v1 * (t2 - t1);
        let accel = y.decel.min(COMFORT_DECEL);
        let ta = (v0 - y.v1) / accel;
        if t <= t2 + ta {
            let u = t - t2;
            return s2 + y.v1 * u + 0.5 * accel * u * u;
        }
        s2 + 0.5 * (v0 + y.v1) * ta + v0 * (t - t2 - ta)
    }

    /// First time the profile reaches arc length `s` (profiles never stop).
    fn time_at(&self, s: f64) -> f64 {
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.s_at(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Creep speed that makes an agent decelerating at `decel` from speed `v0`
/// cover `distance` in exactly `duration`, holding the creep speed once the
/// deceleration ends. `None` when no such profile exists.
pub fn solve_creep_speed(v0: f64, distance: f64, duration: f64, decel: f64) -> Option<f64> {
    // distance = v1·T + (v0 − v1)²/(2a)  ⇒  v1² + 2(aT − v0)v1 + v0² − 2a·distance = 0
    let b = decel * duration - v0;
    let c = v0 * v0 - 2.0 * decel * distance;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let v1 = -b + disc.sqrt();
    let feasible = v1 >= MIN_CREEP_SPEED && v1 < v0 && (v0 - v1) / decel <= duration;
    feasible.then_some(v1)
}

struct Placed {
    path: Path,
    profile: Profile,
}

impl Placed {
    /// Arc length at every rendered sample, starting one step before the window.
    fn sampled(&self) -> Sampled {
        let samples = (0..=WINDOW_LEN).map(|n| self.profile.s_at((n as f64 - 1.0) * DT)).collect();
        Sampled { path: self.path, samples }
    }
}

/// Arc lengths along a path at the rendered sample times.
struct Sampled {
    path: Path,
    samples: Vec<f64>,
}

/// Places every sample on its path, adds noise, applies a random rigid
/// motion and derives velocities by backward differences.
fn render<R: Rng>(
    rng: &mut R,
    scene_id: String,
    tracks: &[Sampled],
    noise_sigma: f64,
    transform: bool,
) -> Scene {
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let (theta, shift) = if transform {
        (
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            [rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0)],
        )
    } else {
        (0.0, [0.0, 0.0])
    };
    let (c, s) = (theta.cos(), theta.sin());
    let agents = tracks
        .iter()
        .enumerate()
        .map(|(k, track)| {
            let pts: Vec<Vec2> = track
                .samples
                .iter()
                .map(|&arc| {
                    let mut p = track.path.position(arc);
                    if noise_sigma > 0.0 {
                        p[0] += noise.sample(rng);
                        p[1] += noise.sample(rng);
                    }
                    [c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1]]
                })
                .collect();
            to_agent(k, &pts)
        })
        .collect();
    Scene::new(scene_id, agents)
}

fn to_agent(k: usize, pts: &[Vec2]) -> Agent {
    let states: Vec<AgentState> = pts
        .windows(2)
        .map(|w| AgentState::new(w[1][0], w[1][1], (w[1][0] - w[0][0]) / DT, (w[1][1] - w[0][1]) / DT))
        .collect();
    Agent {
        id: format!("a{k}"),
        past: states[..PAST_LEN].to_vec(),
        future: states[PAST_LEN..].to_vec(),
    }
}

fn render_placed<R: Rng>(
    rng: &mut R,
    scene_id: String,
    placed: &[Placed],
    noise_sigma: f64,
    transform: bool,
) -> Scene {
    let tracks: Vec<Sampled> = placed.iter().map(Placed::sampled).collect();
    render(rng, scene_id, &tracks, noise_sigma, transform)
}

fn finish(mut scene: Scene) -> Result<Scene> {
    scene = label_scene(&scene)?;
    complete_scene(&mut scene);
    Ok(scene)
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Timing of a crossing scene, in seconds from the first window sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingParams {
    /// When the agent that goes first reaches the crossing point.
    pub goer_arrival: (f64, f64),
    /// How much later the yielder would arrive at its initial speed.
    pub nominal_lag: (f64, f64),
    /// How much later the yielder actually arrives.
    pub actual_lag: (f64, f64),
    /// Deceleration onset after the current time.
    pub onset: (f64, f64),
    /// Latest allowed yielder arrival.
    pub latest_arrival: f64,
    /// Both agents share one speed.
    pub equal_speeds: bool,
    /// Apply a random rotation and translation.
    pub transform: bool,
}

impl Default for CrossingParams {
    fn default() -> Self {
        Self {
            goer_arrival: (5.8, 7.0),
            nominal_lag: (0.3, 1.2),
            actual_lag: (1.5, 2.5),
            onset: (0.0, 0.5),
            latest_arrival: 9.5,
            equal_speeds: false,
            transform: true,
        }
    }
}

impl CrossingParams {
    /// Both agents share speed and nominal arrival time, so nothing in the
    /// observed past tells them apart.
    pub fn symmetric() -> Self {
        Self { nominal_lag: (0.0, 0.0), equal_speeds: true, ..Self::default() }
    }
}

/// Two agents on perpendicular straight paths; `yielder` slows down and
/// passes the crossing point after the other agent.
pub fn gen_crossing(cfg: &ScenarioConfig, yielder: usize) -> Result<Scene> {
    gen_crossing_with(cfg, yielder, &CrossingParams::default())
}

pub fn gen_crossing_with(cfg: &ScenarioConfig, yielder: usize, params: &CrossingParams) -> Result<Scene> {
    cfg.expect(ScenarioKind::Crossing)?;
    if yielder > 1 {
        return Err(Error::Input(format!("yielder must be 0 or 1, got {yielder}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..MAX_ATTEMPTS {
        let v_go = uniform(&mut rng, cfg.speed_range);
        let v_yield = if params.equal_speeds { v_go } else { uniform(&mut rng, cfg.speed_range) };
        let t_go = uniform(&mut rng, params.goer_arrival);
        let t_nominal = t_go + uniform(&mut rng, params.nominal_lag);
        let t_yield = (t_go + uniform(&mut rng, params.actual_lag)).min(params.latest_arrival);
        let onset = TAU + uniform(&mut rng, params.onset);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };

        let s0 = -v_yield * t_nominal;
        let distance = -(s0 + v_yield * onset);
        let Some((decel, v1)) = DECELS.iter().find_map(|&a| {
            solve_creep_speed(v_yield, distance, t_yield - onset, a).map(|v1| (a, v1))
        }) else {
            continue;
        };
        let go = Placed {
            path: Path::straight([0.0, 0.0], 0.0),
            profile: Profile::constant(-v_go * t_go, v_go),
        };
        let yi = Placed {
            path: Path::straight([0.0, 0.0], side * std::f64::consts::FRAC_PI_2),
            profile: Profile {
                s0,
                v0: v_yield,
                yielding: Some(Yield { onset, decel, v1, release: 0.0 }),
            },
        };
        let placed = if yielder == 0 { [yi, go] } else { [go, yi] };
        let id = format!("crossing-{:016x}", cfg.seed);
        return finish(render_placed(&mut rng, id, &placed, cfg.noise_sigma, params.transform));
    }
    Err(Error::Generation(format!(
        "no feasible crossing after {MAX_ATTEMPTS} attempts (seed {})",
        cfg.seed
    )))
}

/// Leader speed change for a following scene.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowingParams {
    pub headway: (f64, f64),
    /// Start of the leader's speed change relative to the current time.
    pub change_onset: (f64, f64),
    /// Magnitude of the leader's acceleration; the sign is random.
    pub change_accel: (f64, f64),
    pub change_duration: (f64, f64),
    pub transform: bool,
}

impl Default for FollowingParams {
    fn default() -> Self {
        Self {
            headway: (1.0, 2.0),
            change_onset: (-1.0, 0.5),
            change_accel: (1.0, 3.0),
            change_duration: (1.5, 3.0),
            transform: true,
        }
    }
}

impl FollowingParams {
    /// Leader at constant speed.
    pub fn steady() -> Self {
        Self { change_accel: (0.0, 0.0), ..Self::default() }
    }
}

const FOLLOW_SUBSTEPS: usize = 50;
const GAP_GAIN: f64 = 0.3;
const SPEED_GAIN: f64 = 0.8;

/// Leader and follower in one lane. The follower keeps the initial gap,
/// stretched by `headway` per m/s of extra speed.
pub fn gen_following(cfg: &ScenarioConfig) -> Result<Scene> {
    gen_following_with(cfg, &FollowingParams::default())
}

pub fn gen_following_with(cfg: &ScenarioConfig, params: &FollowingParams) -> Result<Scene> {
    cfg.expect(ScenarioKind::Following)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let v_lead = uniform(&mut rng, cfg.speed_range);
    let headway = uniform(&mut rng, params.headway);
    let gap0 = v_lead * headway + 2.0;
    let onset = TAU + uniform(&mut rng, params.change_onset);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let accel = sign * uniform(&mut rng, params.change_accel);
    let duration = uniform(&mut rng, params.change_duration);
    let leader_index = rng.gen_range(0..2);
    let (v_min, v_max) = (1.0, cfg.speed_range.1 + 2.0);

    // Semi-implicit Euler for both agents with identical arithmetic, sampled
    // from one step before the window.
    let h = DT / FOLLOW_SUBSTEPS as f64;
    let start = -DT;
    let (mut x_l, mut v_l) = (v_lead * start, v_lead);
    let (mut x_f, mut v_f) = (x_l - gap0, v_lead);
    let mut lead_s = vec![x_l];
    let mut follow_s = vec![x_f];
    for n in 0..WINDOW_LEN * FOLLOW_SUBSTEPS {
        let t = start + n as f64 * h;
        let a_l = if t >= onset && t < onset + duration { accel } else { 0.0 };
        let desired = gap0 + headway * (v_f - v_lead);
        let a_f = (GAP_GAIN * ((x_l - x_f) - desired) + SPEED_GAIN * (v_l - v_f)).clamp(-MAX_DECEL, COMFORT_DECEL);
        v_l = (v_l + a_l * h).clamp(v_min, v_max);
        v_f = (v_f + a_f * h).max(0.0);
        x_l += v_l * h;
        x_f += v_f * h;
        if (n + 1) % FOLLOW_SUBSTEPS == 0 {
            lead_s.push(x_l);
            follow_s.push(x_f);
        }
    }
    let mk = |samples: Vec<f64>| Sampled { path: Path::straight([0.0, 0.0], 0.0), samples };
    let mut tracks = vec![mk(follow_s), mk(lead_s)];
    if leader_index == 0 {
        tracks.swap(0, 1);
    }
    let id = format!("following-{:016x}", cfg.seed);
    finish(render(&mut rng, id, &tracks, cfg.noise_sigma, params.transform))
}

/// Road layout for independent scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentParams {
    pub lane_offset: (f64, f64),
    pub curve_radius: (f64, f64),
    /// When the leading agent enters the curve.
    pub leader_curve_time: (f64, f64),
    /// When the trailing agent enters the curve.
    pub trailer_curve_time: (f64, f64),
    pub transform: bool,
}

impl Default for IndependentParams {
    fn default() -> Self {
        Self {
            lane_offset: (5.0, 7.0),
            curve_radius: (40.0, 100.0),
            leader_curve_time: (2.5, 4.5),
            trailer_curve_time: (6.0, 8.5),
            transform: true,
        }
    }
}

/// Two agents at constant speed on adjacent lanes of a road that bends
/// shortly before the current time; the lanes never come within the lane
/// offset of each other.
pub fn gen_independent(cfg: &ScenarioConfig) -> Result<Scene> {
    gen_independent_with(cfg, &IndependentParams::default())
}

pub fn gen_independent_with(cfg: &ScenarioConfig, params: &IndependentParams) -> Result<Scene> {
    cfg.expect(ScenarioKind::Independent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let offset = uniform(&mut rng, params.lane_offset);
    let radius = uniform(&mut rng, params.curve_radius);
    let turn = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let leader_lane = if rng.gen_bool(0.5) { 0.5 } else { -0.5 } * offset;
    let lanes = [leader_lane, -leader_lane];
    let curve_times = [
        uniform(&mut rng, params.leader_curve_time),
        uniform(&mut rng, params.trailer_curve_time),
    ];
    let placed: Vec<Placed> = lanes
        .iter()
        .zip(curve_times)
        .map(|(&o, t_curve)| {
            let v = uniform(&mut rng, cfg.speed_range);
            Placed {
                path: Path {
                    origin: [0.0, o],
                    heading: 0.0,
                    straight_len: 0.0,
                    curvature: turn / (radius - turn * o),
                },
                profile: Profile::constant(-v * t_curve, v),
            }
        })
        .collect();
    let mut placed = placed;
    if rng.gen_bool(0.5) {
        placed.swap(0, 1);
    }
    let id = format!("independent-{:016x}", cfg.seed);
    finish(render_placed(&mut rng, id, &placed, cfg.noise_sigma, params.transform))
}

/// Intersection layout for multi-agent scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiParams {
    /// Approach directions allowed, as multiples of 90°.
    pub legs: Vec<usize>,
    /// Lateral offsets of the two lanes per leg, to the right of travel.
    pub lane_offsets: [f64; 2],
    /// Nominal arrival at the intersection centre at initial speed.
    pub nominal_arrival: (f64, f64),
    /// Extra clearance time on top of the conflict disk.
    pub margin: f64,
    pub onset: (f64, f64),
    /// Every crossing of two lanes must be passed by both agents inside
    /// this absolute time window, so the future resolves the interaction.
    pub window: (f64, f64),
    pub transform: bool,
}

impl Default for MultiParams {
    fn default() -> Self {
        Self {
            legs: vec![0, 1, 2, 3],
            lane_offsets: [2.0, 6.0],
            nominal_arrival: (5.6, 8.5),
            margin: 0.3,
            onset: (0.0, 0.5),
            window: (TAU + 0.75, TAU + 4.5),
            transform: true,
        }
    }
}

/// Agents approach a four-way intersection on distinct lanes and pass in
/// order of nominal arrival. Each later agent whose path crosses an earlier
/// one's slows just enough to enter every shared conflict disk only after the
/// earlier agent has left it. Agents are placed in go order; an agent whose
/// crossings would not all be passed inside the window gets a new lane and
/// speed.
pub fn gen_multi(cfg: &ScenarioConfig) -> Result<Scene> {
    gen_multi_with(cfg, &MultiParams::default())
}

/// Profile for an agent on `path` that passes after every agent in `placed`,
/// or `None` when the kinematics or the window rule cannot be met.
fn schedule_after(
    path: &Path,
    v0: f64,
    t_nom: f64,
    onset: f64,
    placed: &[Placed],
    params: &MultiParams,
) -> Option<Profile> {
    let base = Profile::constant(-v0 * t_nom, v0);
    // (entry and exit arc length on this path, time the earlier agent leaves the disk)
    let mut constraints = Vec::new();
    let mut crossings = Vec::new();
    for m in placed {
        if let Some((s_k, s_m)) = path.intersect(&m.path) {
            let clear = m.profile.time_at(s_m + CONFLICT_RADIUS) + params.margin;
            constraints.push((s_k - CONFLICT_RADIUS, s_k + CONFLICT_RADIUS, clear));
            crossings.push((s_k, m.profile.time_at(s_m)));
        }
    }
    let satisfied = |p: &Profile| constraints.iter().all(|&(entry, _, clear)| p.time_at(entry) >= clear);
    let profile = if satisfied(&base) {
        base
    } else {
        let s_on = base.s_at(onset);
        if constraints.iter().any(|&(entry, _, _)| entry <= s_on + 0.5) {
            return None;
        }
        let release = constraints.iter().map(|c| c.1).fold(f64::MIN, f64::max);
        let with = |decel: f64, v1: f64| Profile {
            yielding: Some(Yield { onset, decel, v1, release }),
            ..base
        };
        let decel = *DECELS.iter().find(|&&a| satisfied(&with(a, MIN_CREEP_SPEED)))?;
        let (mut lo, mut hi) = (MIN_CREEP_SPEED, v0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if satisfied(&with(decel, mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        with(decel, lo)
    };
    let inside = |t: f64| t >= params.window.0 && t <= params.window.1;
    crossings
        .iter()
        .all(|&(s_k, t_m)| inside(t_m) && inside(profile.time_at(s_k)))
        .then_some(profile)
}

pub fn gen_multi_with(cfg: &ScenarioConfig, params: &MultiParams) -> Result<Scene> {
    cfg.expect(ScenarioKind::MultiIntersection)?;
    let slots: Vec<(usize, f64)> = params
        .legs
        .iter()
        .flat_map(|&leg| params.lane_offsets.iter().map(move |&o| (leg % 4, o)))
        .collect();
    if slots.len() < cfg.num_agents {
        return Err(Error::Input(format!(
            "{} lanes cannot hold {} agents",
            slots.len(),
            cfg.num_agents
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    'attempt: for _ in 0..MAX_ATTEMPTS {
        let mut arrivals: Vec<f64> = (0..cfg.num_agents).map(|_| uniform(&mut rng, params.nominal_arrival)).collect();
        arrivals.sort_by(f64::total_cmp);
        let mut free = slots.clone();
        let mut placed: Vec<Placed> = Vec::with_capacity(cfg.num_agents);
        for &t_nom in &arrivals {
            let mut found = None;
            for _ in 0..MAX_ATTEMPTS {
                let slot = rng.gen_range(0..free.len());
                let (leg, offset) = free[slot];
                let heading = leg as f64 * std::f64::consts::FRAC_PI_2;
                let path = Path::straight([heading.sin() * offset, -heading.cos() * offset], heading);
                let v0 = uniform(&mut rng, cfg.speed_range);
                let onset = TAU + uniform(&mut rng, params.onset);
                if let Some(profile) = schedule_after(&path, v0, t_nom, onset, &placed, params) {
                    found = Some((slot, Placed { path, profile }));
                    break;
                }
            }
            let Some((slot, agent)) = found else { continue 'attempt };
            free.swap_remove(slot);
            placed.push(agent);
        }
        placed.shuffle(&mut rng);
        let id = format!("multi-{:016x}", cfg.seed);
        return finish(render_placed(&mut rng, id, &placed, cfg.noise_sigma, params.transform));
    }
    Err(Error::Generation(format!(
        "no feasible intersection schedule after {MAX_ATTEMPTS} attempts (seed {})",
        cfg.seed
    )))
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of scene `index` of `kind` in a dataset generated from `master_seed`.
pub fn scene_seed(master_seed: u64, kind: ScenarioKind, index: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ kind.code()) ^ index as u64)
}

/// One scene of the given kind with per-scene choices (yielder, agent count)
/// drawn from the seed.
pub fn gen_scene(kind: ScenarioKind, seed: u64, noise_sigma: f64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let cfg = ScenarioConfig::new(kind, seed).with_noise(noise_sigma);
    match kind {
        ScenarioKind::Crossing => gen_crossing(&cfg, rng.gen_range(0..2)),
        ScenarioKind::Following => gen_following(&cfg),
        ScenarioKind::Independent => gen_independent(&cfg),
        ScenarioKind::MultiIntersection => gen_multi(&cfg.with_agents(rng.gen_range(3..=6))),
    }
}

/// Parses `crossing=K,following=K,...`.
pub fn parse_mix(spec: &str) -> Result<BTreeMap<ScenarioKind, usize>> {
    let mut mix = BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (kind, count) = part
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("expected kind=count, got {part:?}")))?;
        let kind: ScenarioKind = kind.trim().parse()?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("invalid count in {part:?}")))?;
        *mix.entry(kind).or_insert(0) += count;
    }
    Ok(mix)
}

/// Labeled, feature-complete scenes in kind order, then index order.
pub fn gen_dataset(mix: &BTreeMap<ScenarioKind, usize>, master_seed: u64, noise_sigma: f64) -> Result<Vec<Scene>> {
    let jobs: Vec<(ScenarioKind, usize)> = mix
        .iter()
        .flat_map(|(&kind, &count)| (0..count).map(move |i| (kind, i)))
        .collect();
    jobs.par_iter()
        .map(|&(kind, i)| {
            let mut scene = gen_scene(kind, scene_seed(master_seed, kind, i), noise_sigma)?;
            scene.scene_id = format!("{kind}-{i:05}");
            Ok(scene)
        })
        .collect()
}
