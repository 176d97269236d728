//! Programmatic interaction labels from future trajectories.
//!
//! A pair whose future paths never meet is `Ignoring`. Otherwise the agent
//! that reaches the crossing point first is `Going` and the other one
//! `Yielding`. Arrivals closer than `tie_epsilon` are resolved in favour of
//! the agent with the smaller index.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{path_crossing_with, DEFAULT_NEAR_MISS};
use crate::scene::{InteractionLabel, Scene, Trajectory, PAIR_RADIUS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labeler {
    /// Arrival-time difference (s) below which two arrivals tie.
    pub tie_epsilon: f64,
    /// Closest-approach distance (m) counted as a crossing.
    pub near_miss: f64,
    /// Pairs at least this far apart at the current time get no label.
    pub radius: f64,
}

impl Default for Labeler {
    fn default() -> Self {
        Self {
            tie_epsilon: 0.25,
            near_miss: DEFAULT_NEAR_MISS,
            radius: PAIR_RADIUS,
        }
    }
}

impl Labeler {
    /// Label of agent `i` toward agent `j`. `i` and `j` are only used to
    /// break ties and must differ.
    pub fn label_pair(
        &self,
        future_i: &Trajectory,
        future_j: &Trajectory,
        i: usize,
        j: usize,
    ) -> Result<InteractionLabel> {
        if future_i.states.len() != future_j.states.len()
            || (future_i.dt - future_j.dt).abs() > 1e-12
            || (future_i.start_time - future_j.start_time).abs() > 1e-9
        {
            return Err(Error::Input(format!(
                "future horizons differ: {} samples at {} s vs {} samples at {} s",
                future_i.states.len(),
                future_i.dt,
                future_j.states.len(),
                future_j.dt
            )));
        }
        if future_i.states.is_empty() {
            return Err(Error::Input("empty future trajectory".into()));
        }
        // Evaluate in canonical order so (i, j) and (j, i) can never disagree.
        if i > j {
            return self
                .label_pair(future_j, future_i, j, i)
                .map(InteractionLabel::reversed);
        }
        let crossing = path_crossing_with(
            &future_i.positions(),
            &future_j.positions(),
            future_i.dt,
            self.near_miss,
        );
        Ok(match crossing {
            None => InteractionLabel::Ignoring,
            Some(c) if c.t_i < c.t_j - self.tie_epsilon => InteractionLabel::Going,
            Some(c) if c.t_i > c.t_j + self.tie_epsilon => InteractionLabel::Yielding,
            Some(_) if i < j => InteractionLabel::Going,
            Some(_) => InteractionLabel::Yielding,
        })
    }

    /// Returns a copy of `scene` with labels for every ordered pair closer
    /// than the radius at the current time.
    pub fn label_scene(&self, scene: &Scene) -> Result<Scene> {
        let mut out = scene.clone();
        out.labels = Some(self.labels_for(scene)?);
        Ok(out)
    }

    pub fn labels_for(&self, scene: &Scene) -> Result<BTreeMap<(usize, usize), InteractionLabel>> {
        if !scene.has_futures() {
            return Err(Error::Input(format!(
                "scene {} has no complete future trajectories",
                scene.scene_id
            )));
        }
        let futures: Vec<Trajectory> = (0..scene.num_agents())
            .map(|i| scene.future_trajectory(i))
            .collect();
        let mut labels = BTreeMap::new();
        for (i, j) in scene.pairs_within(self.radius) {
            if i < j {
                let label = self.label_pair(&futures[i], &futures[j], i, j)?;
                labels.insert((i, j), label);
                labels.insert((j, i), label.reversed());
            }
        }
        Ok(labels)
    }
}

/// [`Labeler::label_scene`] with default thresholds.
pub fn label_scene(scene: &Scene) -> Result<Scene> {
    Labeler::default().label_scene(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{tests::straight_scene, AgentState, DT, FUTURE_LEN};

    /// Straight-line constant-speed future passing `through` at time `t_arrive`
    /// (seconds after the first sample) along direction `dir`.
    fn straight(dir: [f64; 2], through: [f64; 2], speed: f64, t_arrive: f64) -> Trajectory {
        let states = (0..FUTURE_LEN)
            .map(|k| {
                let t = k as f64 * DT - t_arrive;
                AgentState::new(
                    through[0] + dir[0] * speed * t,
                    through[1] + dir[1] * speed * t,
                    dir[0] * speed,
                    dir[1] * speed,
                )
            })
            .collect();
        Trajectory::new("a", states)
    }

    #[test]
    fn perpendicular_crossing_goes_first() {
        let l = Labeler::default();
        let fi = straight([1.0, 0.0], [0.0, 0.0], 4.0, 2.0);
        let fj = straight([0.0, 1.0], [0.0, 0.0], 3.0, 3.5);
        // oracle: straight lines cross at the origin at the chosen times
        let c = path_crossing_with(&fi.positions(), &fj.positions(), DT, 1.0).unwrap();
        assert!((c.t_i - 2.0).abs() < 1e-9 && (c.t_j - 3.5).abs() < 1e-9);
        assert_eq!(l.label_pair(&fi, &fj, 0, 1).unwrap(), InteractionLabel::Going);
        assert_eq!(l.label_pair(&fj, &fi, 1, 0).unwrap(), InteractionLabel::Yielding);
    }

    #[test]
    fn parallel_lanes_ignore_each_other() {
        let l = Labeler::default();
        let fi = straight([1.0, 0.0], [0.0, 0.0], 4.0, 0.0);
        let fj = straight([1.0, 0.0], [0.0, 5.0], 4.0, 0.0);
        assert_eq!(l.label_pair(&fi, &fj, 0, 1).unwrap(), InteractionLabel::Ignoring);
        assert_eq!(l.label_pair(&fj, &fi, 1, 0).unwrap(), InteractionLabel::Ignoring);
    }

    #[test]
    fn simultaneous_arrival_breaks_tie_by_index() {
        let l = Labeler::default();
        let fi = straight([1.0, 0.0], [0.0, 0.0], 4.0, 2.0);
        let fj = straight([0.0, 1.0], [0.0, 0.0], 4.0, 2.0);
        assert_eq!(l.label_pair(&fi, &fj, 0, 1).unwrap(), InteractionLabel::Going);
        assert_eq!(l.label_pair(&fj, &fi, 1, 0).unwrap(), InteractionLabel::Yielding);
        assert_eq!(l.label_pair(&fi, &fj, 3, 2).unwrap(), InteractionLabel::Yielding);
    }

    #[test]
    fn horizon_mismatch_is_an_error() {
        let l = Labeler::default();
        let fi = straight([1.0, 0.0], [0.0, 0.0], 4.0, 2.0);
        let mut fj = fi.clone();
        fj.states.pop();
        assert!(l.label_pair(&fi, &fj, 0, 1).is_err());
    }

    #[test]
    fn far_pairs_are_unlabeled() {
        let scene = straight_scene(2, 150.0);
        let labeled = label_scene(&scene).unwrap();
        assert!(labeled.labels.unwrap().is_empty());
    }

    #[test]
    fn three_close_agents_get_six_labels() {
        let scene = straight_scene(3, 6.0);
        let labels = label_scene(&scene).unwrap().labels.unwrap();
        assert_eq!(labels.len(), 6);
        assert!(labels.values().all(|&l| l == InteractionLabel::Ignoring));
    }

    #[test]
    fn scene_without_future_is_rejected() {
        let mut scene = straight_scene(2, 5.0);
        scene.agents.iter_mut().for_each(|a| a.future.clear());
        assert!(matches!(label_scene(&scene), Err(Error::Input(_))));
    }

    #[test]
    fn single_agent_scene_has_no_labels() {
        let scene = straight_scene(1, 0.0);
        assert!(label_scene(&scene).unwrap().labels.unwrap().is_empty());
    }
}
