//! Star-graph versus complete-graph message accounting.

use std::io::Write;

use crate::dataset::NeighborIndex;
use crate::error::Result;
use crate::social_graph::{complete_edges, star_edges};

pub const GRAPH_STATS_HEADER: &str = "scene,timestep,N,star_edges,complete_edges";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimestepCost {
    pub scene: String,
    pub frame: i64,
    pub population: usize,
    /// Edges of one POI's star graph.
    pub star_edges: usize,
    /// Edges of the complete graph over everyone present.
    pub complete_edges: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneCost {
    pub scene: String,
    pub timesteps: usize,
    pub star_messages: usize,
    pub complete_messages: usize,
}

impl SceneCost {
    pub fn ratio(&self) -> f64 {
        if self.complete_messages == 0 {
            1.0
        } else {
            self.star_messages as f64 / self.complete_messages as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub scenes: Vec<SceneCost>,
    pub timesteps: Vec<TimestepCost>,
    /// Scalar parameter counts per model module.
    pub parameters: Vec<(String, usize)>,
}

/// Message counts for `scenes`, one entry per annotated frame.
pub fn cost_report(index: &NeighborIndex, scenes: &[&str], parameters: Vec<(String, usize)>) -> CostReport {
    let mut per_scene = Vec::new();
    let mut timesteps = Vec::new();
    for &scene in scenes {
        let mut cost = SceneCost {
            scene: scene.to_string(),
            timesteps: 0,
            star_messages: 0,
            complete_messages: 0,
        };
        for frame in index.frames_of(scene) {
            let n = index.population(scene, frame);
            let t = TimestepCost {
                scene: scene.to_string(),
                frame,
                population: n,
                star_edges: star_edges(n),
                complete_edges: complete_edges(n),
            };
            cost.timesteps += 1;
            cost.star_messages += t.star_edges;
            cost.complete_messages += t.complete_edges;
            timesteps.push(t);
        }
        per_scene.push(cost);
    }
    CostReport {
        scenes: per_scene,
        timesteps,
        parameters,
    }
}

pub fn write_graph_stats_csv(mut w: impl Write, report: &CostReport) -> Result<()> {
    writeln!(w, "{GRAPH_STATS_HEADER}")?;
    for t in &report.timesteps {
        writeln!(
            w,
            "{},{},{},{},{}",
            t.scene, t.frame, t.population, t.star_edges, t.complete_edges
        )?;
    }
    Ok(())
}
