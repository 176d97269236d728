//! JSON Lines dataset format, one [`Scene`] per line.
//!
//! ```text
//! {"scene_id": "...", "dt": 0.5,
//!  "agents": [{"id": "...", "past": [[x,y,vx,vy] x 11], "future": [[x,y,vx,vy] x 10]}],
//!  "labels": [{"i": 0, "j": 1, "label": 1}],            (optional)
//!  "agent_features": [[f0,f1,f2,f3], ...],               (optional)
//!  "pair_features": [{"i": 0, "j": 1, "f": [f0,..,f4]}]} (optional)
//! ```
//!
//! Missing optional blocks are computed on load by [`complete_scene`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::compute_features;
use crate::scene::{
    Agent, AgentState, InteractionLabel, Scene, AGENT_FEATURES, PAIR_FEATURES,
};

#[derive(Debug, Serialize, Deserialize)]
struct SceneRecord {
    scene_id: String,
    dt: f64,
    agents: Vec<AgentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<LabelRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    agent_features: Option<Vec<[f64; AGENT_FEATURES]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair_features: Option<Vec<PairFeatureRecord>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentRecord {
    id: String,
    past: Vec<[f64; 4]>,
    future: Vec<[f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    i: usize,
    j: usize,
    label: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairFeatureRecord {
    i: usize,
    j: usize,
    f: [f64; PAIR_FEATURES],
}

impl From<&Scene> for SceneRecord {
    fn from(scene: &Scene) -> Self {
        let states = |s: &[AgentState]| s.iter().map(|s| s.to_array()).collect();
        SceneRecord {
            scene_id: scene.scene_id.clone(),
            dt: scene.dt,
            agents: scene
                .agents
                .iter()
                .map(|a| AgentRecord {
                    id: a.id.clone(),
                    past: states(&a.past),
                    future: states(&a.future),
                })
                .collect(),
            labels: scene.labels.as_ref().map(|labels| {
                labels
                    .iter()
                    .map(|(&(i, j), l)| LabelRecord { i, j, label: l.code() })
                    .collect()
            }),
            agent_features: scene.agent_features.clone(),
            pair_features: scene.pair_features.as_ref().map(|pf| {
                pf.iter()
                    .map(|(&(i, j), &f)| PairFeatureRecord { i, j, f })
                    .collect()
            }),
        }
    }
}

impl SceneRecord {
    fn into_scene(self, line: usize) -> Result<Scene> {
        let parse_err = |detail: String| Error::Parse { line, detail };
        let labels = match self.labels {
            None => None,
            Some(records) => {
                let mut map = BTreeMap::new();
                for r in records {
                    let label = InteractionLabel::from_code(r.label)
                        .ok_or_else(|| parse_err(format!("unknown label code {}", r.label)))?;
                    if map.insert((r.i, r.j), label).is_some() {
                        return Err(parse_err(format!("duplicate label for ({}, {})", r.i, r.j)));
                    }
                }
                Some(map)
            }
        };
        let pair_features = self.pair_features.map(|records| {
            records.into_iter().map(|r| ((r.i, r.j), r.f)).collect()
        });
        Ok(Scene {
            scene_id: self.scene_id,
            dt: self.dt,
            agents: self
                .agents
                .into_iter()
                .map(|a| Agent {
                    id: a.id,
                    past: a.past.into_iter().map(AgentState::from_array).collect(),
                    future: a.future.into_iter().map(AgentState::from_array).collect(),
                })
                .collect(),
            agent_features: self.agent_features,
            pair_features,
            labels,
        })
    }
}

/// Serializes one scene as a single JSON line (no trailing newline).
pub fn scene_to_line(scene: &Scene) -> Result<String> {
    Ok(serde_json::to_string(&SceneRecord::from(scene))?)
}

pub fn scene_from_line(line: &str, line_no: usize) -> Result<Scene> {
    let record: SceneRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        detail: e.to_string(),
    })?;
    record.into_scene(line_no)
}

/// Fills in features that the file did not carry.
pub fn complete_scene(scene: &mut Scene) {
    if scene.agent_features.is_none() || scene.pair_features.is_none() {
        if scene.agents.iter().all(|a| !a.past.is_empty()) {
            let (agent, pair) = compute_features(scene);
            scene.agent_features.get_or_insert(agent);
            scene.pair_features.get_or_insert(pair);
        }
    }
}

pub fn write_scenes<W: Write>(mut out: W, scenes: &[Scene]) -> Result<()> {
    for scene in scenes {
        out.write_all(scene_to_line(scene)?.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scenes<R: BufRead>(input: R) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(scene_from_line(&line, k + 1)?);
    }
    Ok(scenes)
}

pub fn save_dataset(path: &Path, scenes: &[Scene]) -> Result<()> {
    let file = File::create(path)?;
    write_scenes(BufWriter::new(file), scenes)
}

/// Reads a dataset file exactly as stored, without computing features.
pub fn load_dataset_raw(path: &Path) -> Result<Vec<Scene>> {
    read_scenes(BufReader::new(File::open(path)?))
}

/// Reads a dataset file and computes any missing features.
pub fn load_dataset(path: &Path) -> Result<Vec<Scene>> {
    let mut scenes = load_dataset_raw(path)?;
    scenes.iter_mut().for_each(complete_scene);
    Ok(scenes)
}
