//! Coordinate frames, relative-state edge attributes, hand-built agent and
//! pair features, and polyline crossing detection.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::scene::{AgentState, PairKey, Scene, Trajectory, AGENT_FEATURES, PAIR_FEATURES, PAIR_RADIUS};

/// Below this speed (m/s) the velocity direction is considered noise.
pub const MIN_HEADING_SPEED: f64 = 0.1;
/// Closest-approach distance (m) that still counts as a path crossing.
pub const DEFAULT_NEAR_MISS: f64 = 1.0;

pub type Vec2 = [f64; 2];

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// An agent-centric reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: Vec2,
    heading: f64,
    cos: f64,
    sin: f64,
}

impl Frame {
    pub fn new(origin: Vec2, heading: f64) -> Self {
        let heading = wrap_angle(heading);
        Self {
            origin,
            heading,
            cos: heading.cos(),
            sin: heading.sin(),
        }
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1]];
        self.to_local_velocity(d)
    }

    pub fn to_local_velocity(&self, v: Vec2) -> Vec2 {
        [
            self.cos * v[0] + self.sin * v[1],
            -self.sin * v[0] + self.cos * v[1],
        ]
    }

    pub fn from_local(&self, p: Vec2) -> Vec2 {
        let r = self.from_local_velocity(p);
        [r[0] + self.origin[0], r[1] + self.origin[1]]
    }

    pub fn from_local_velocity(&self, v: Vec2) -> Vec2 {
        [
            self.cos * v[0] - self.sin * v[1],
            self.sin * v[0] + self.cos * v[1],
        ]
    }

    pub fn state_to_local(&self, s: &AgentState) -> AgentState {
        let p = self.to_local(s.position());
        let v = self.to_local_velocity(s.velocity());
        AgentState::new(p[0], p[1], v[0], v[1])
    }

    pub fn state_from_local(&self, s: &AgentState) -> AgentState {
        let p = self.from_local(s.position());
        let v = self.from_local_velocity(s.velocity());
        AgentState::new(p[0], p[1], v[0], v[1])
    }
}

/// Frame centred on `state`, aligned with its velocity when the agent
/// moves fast enough, otherwise with `fallback_heading`.
pub fn frame_of(state: &AgentState, fallback_heading: f64) -> Frame {
    Frame::new(state.position(), heading_or(state, fallback_heading))
}

pub fn heading_or(state: &AgentState, fallback: f64) -> f64 {
    if state.speed() >= MIN_HEADING_SPEED {
        state.vy.atan2(state.vx)
    } else {
        fallback
    }
}

/// Per-sample headings; slow samples inherit the most recent valid heading
/// (0 before the first valid one).
pub fn headings(states: &[AgentState]) -> Vec<f64> {
    let mut last = 0.0;
    states
        .iter()
        .map(|s| {
            last = wrap_angle(heading_or(s, last));
            last
        })
        .collect()
}

/// Frame of the last state in an observed sequence.
pub fn current_frame(past: &[AgentState]) -> Frame {
    let hs = headings(past);
    let cur = past.last().expect("empty past");
    Frame::new(cur.position(), *hs.last().unwrap())
}

/// Destination state expressed in the source frame: `[x, y, vx, vy]`.
pub fn relative_edge_attr(_src: &AgentState, dst: &AgentState, src_frame: &Frame) -> [f64; 4] {
    let p = src_frame.to_local(dst.position());
    let v = src_frame.to_local_velocity(dst.velocity());
    [p[0], p[1], v[0], v[1]]
}

fn agent_features(past: &[AgentState]) -> [f64; AGENT_FEATURES] {
    let cur = past.last().expect("empty past");
    let mean_speed = past.iter().map(AgentState::speed).sum::<f64>() / past.len() as f64;
    let hs = headings(past);
    let heading_change: f64 = hs.windows(2).map(|w| wrap_angle(w[1] - w[0])).sum();
    let path_len: f64 = past
        .windows(2)
        .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
        .sum();
    [cur.speed(), mean_speed, heading_change, path_len]
}

fn pair_features(
    si: &AgentState,
    sj: &AgentState,
    frame_i: &Frame,
    heading_i: f64,
    heading_j: f64,
) -> [f64; PAIR_FEATURES] {
    let dp = [sj.x - si.x, sj.y - si.y];
    let dv = [sj.vx - si.vx, sj.vy - si.vy];
    let dist = dp[0].hypot(dp[1]);
    let local = frame_i.to_local(sj.position());
    let bearing = if dist > 0.0 { local[1].atan2(local[0]) } else { 0.0 };
    let closing = if dist > 0.0 {
        -(dp[0] * dv[0] + dp[1] * dv[1]) / dist
    } else {
        0.0
    };
    [
        dist,
        bearing,
        closing,
        wrap_angle(heading_j - heading_i),
        sj.speed() - si.speed(),
    ]
}

/// Agent features `[speed, mean past speed, past heading change, past path
/// length]` and pair features `[distance, bearing, closing speed, heading
/// difference, speed difference]` for every ordered pair within
/// [`PAIR_RADIUS`] at the current time.
pub fn compute_features(
    scene: &Scene,
) -> (Vec<[f64; AGENT_FEATURES]>, BTreeMap<PairKey, [f64; PAIR_FEATURES]>) {
    let agents: Vec<_> = scene.agents.iter().map(|a| agent_features(&a.past)).collect();
    let frames: Vec<_> = scene.agents.iter().map(|a| current_frame(&a.past)).collect();
    let pairs = scene
        .pairs_within(PAIR_RADIUS)
        .into_iter()
        .map(|(i, j)| {
            let f = pair_features(
                scene.current(i),
                scene.current(j),
                &frames[i],
                frames[i].heading(),
                frames[j].heading(),
            );
            ((i, j), f)
        })
        .collect();
    (agents, pairs)
}

/// Where two paths meet and when each agent gets there, in seconds from the
/// first sample of its trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathCrossing {
    pub point: Vec2,
    pub t_i: f64,
    pub t_j: f64,
}

impl PathCrossing {
    fn swapped(self) -> Self {
        Self { point: self.point, t_i: self.t_j, t_j: self.t_i }
    }

    // Role-independent ordering: earliest first arrival, then earliest
    // second arrival, then position.
    fn order_key(&self) -> [f64; 4] {
        [
            self.t_i.min(self.t_j),
            self.t_i.max(self.t_j),
            self.point[0],
            self.point[1],
        ]
    }
}

fn cmp_keys(a: &[f64; 4], b: &[f64; 4]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn lerp(a: Vec2, b: Vec2, s: f64) -> Vec2 {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Parameter of the closest point to `p` on segment `a→b`.
fn project(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = sub(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    }
}

fn segments(pos: &[Vec2]) -> Vec<(Vec2, Vec2)> {
    match pos.len() {
        0 => Vec::new(),
        1 => vec![(pos[0], pos[0])],
        _ => pos.windows(2).map(|w| (w[0], w[1])).collect(),
    }
}

/// Proper (non-parallel) intersection of two segments as `(s, u)`.
fn segment_intersection(a: (Vec2, Vec2), b: (Vec2, Vec2)) -> Option<(f64, f64)> {
    let r = sub(a.1, a.0);
    let w = sub(b.1, b.0);
    let denom = cross(r, w);
    let scale = (r[0].hypot(r[1])) * (w[0].hypot(w[1]));
    if scale == 0.0 || denom.abs() <= 1e-12 * scale {
        return None;
    }
    let qp = sub(b.0, a.0);
    let s = cross(qp, w) / denom;
    let u = cross(qp, r) / denom;
    const TOL: f64 = 1e-12;
    if (-TOL..=1.0 + TOL).contains(&s) && (-TOL..=1.0 + TOL).contains(&u) {
        Some((s.clamp(0.0, 1.0), u.clamp(0.0, 1.0)))
    } else {
        None
    }
}

/// First crossing of two sampled paths with the default near-miss distance.
pub fn path_crossing(traj_i: &Trajectory, traj_j: &Trajectory) -> Option<PathCrossing> {
    path_crossing_with(&traj_i.positions(), &traj_j.positions(), traj_i.dt, DEFAULT_NEAR_MISS)
}

/// Crossing of two polylines sampled every `dt` seconds.
///
/// Exact segment intersections take precedence; among several, the one
/// reached first by either agent wins. Without an exact intersection the
/// closest approach counts as a crossing when it is at most `near_miss`
/// apart, located at the midpoint of the closest point pair.
pub fn path_crossing_with(
    path_i: &[Vec2],
    path_j: &[Vec2],
    dt: f64,
    near_miss: f64,
) -> Option<PathCrossing> {
    let seg_i = segments(path_i);
    let seg_j = segments(path_j);

    let mut best: Option<PathCrossing> = None;
    for (a, sa) in seg_i.iter().enumerate() {
        for (b, sb) in seg_j.iter().enumerate() {
            if let Some((s, u)) = segment_intersection(*sa, *sb) {
                let c = PathCrossing {
                    point: lerp(sa.0, sa.1, s),
                    t_i: (a as f64 + s) * dt,
                    t_j: (b as f64 + u) * dt,
                };
                if best.map_or(true, |bc| cmp_keys(&c.order_key(), &bc.order_key()).is_lt()) {
                    best = Some(c);
                }
            }
        }
    }
    if best.is_some() {
        return best;
    }

    // Closest approach between non-intersecting segments is attained at an
    // endpoint of one of them.
    let mut candidates: Vec<(f64, PathCrossing)> = Vec::new();
    for (a, sa) in seg_i.iter().enumerate() {
        for (b, sb) in seg_j.iter().enumerate() {
            for (end, p) in [(0.0, sa.0), (1.0, sa.1)] {
                let u = project(p, sb.0, sb.1);
                let q = lerp(sb.0, sb.1, u);
                candidates.push((
                    dist(p, q),
                    PathCrossing {
                        point: [(p[0] + q[0]) * 0.5, (p[1] + q[1]) * 0.5],
                        t_i: (a as f64 + end) * dt,
                        t_j: (b as f64 + u) * dt,
                    },
                ));
            }
            for (end, q) in [(0.0, sb.0), (1.0, sb.1)] {
                let s = project(q, sa.0, sa.1);
                let p = lerp(sa.0, sa.1, s);
                candidates.push((
                    dist(p, q),
                    PathCrossing {
                        point: [(p[0] + q[0]) * 0.5, (p[1] + q[1]) * 0.5],
                        t_i: (a as f64 + s) * dt,
                        t_j: (b as f64 + end) * dt,
                    },
                ));
            }
        }
    }
    let min_dist = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    if !(min_dist <= near_miss) {
        return None;
    }
    candidates
        .into_iter()
        .filter(|c| c.0 <= min_dist + 1e-9)
        .map(|c| c.1)
        .min_by(|x, y| cmp_keys(&x.order_key(), &y.order_key()))
}

/// Same as [`path_crossing_with`] with the roles of the agents swapped.
pub fn path_crossing_swapped(
    path_i: &[Vec2],
    path_j: &[Vec2],
    dt: f64,
    near_miss: f64,
) -> Option<PathCrossing> {
    path_crossing_with(path_j, path_i, dt, near_miss).map(PathCrossing::swapped)
}
