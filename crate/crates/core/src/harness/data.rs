//! Loaded scenes and conversion of windows into model samples.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dataset::{build_windows, parse_scene, NeighborIndex, NormMode, NormParams, SceneAnnotations, TrajWindow};
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::model::Sample;
use crate::scene::{load_raster, SceneRaster};
use crate::social_graph::StarGraphSeq;
use crate::T_OBS;

#[derive(Clone, Debug)]
pub struct SceneData {
    pub name: Arc<str>,
    pub annotations: SceneAnnotations,
    pub windows: Vec<TrajWindow>,
    /// The raster in each of the four orientations.
    pub rasters: [SceneRaster; 4],
}

/// Every scene of a run with a shared neighbour index.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub scenes: Vec<SceneData>,
    pub index: NeighborIndex,
    by_name: HashMap<Arc<str>, usize>,
}

impl Corpus {
    /// Parses every scene listed in `cfg`, in declaration order.
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let parts = cfg
            .scenes
            .par_iter()
            .map(|s| Ok((s.name.clone(), parse_scene(&s.annotations)?, load_raster(&s.raster)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_scenes(parts)
    }

    pub fn from_scenes(parts: Vec<(String, SceneAnnotations, SceneRaster)>) -> Result<Self> {
        let mut index = NeighborIndex::new();
        let mut scenes = Vec::with_capacity(parts.len());
        let mut by_name = HashMap::new();
        for (name, annotations, raster) in parts {
            let name: Arc<str> = Arc::from(name);
            if by_name.insert(name.clone(), scenes.len()).is_some() {
                return Err(Error::Config(format!("scene `{name}` listed twice")));
            }
            if let Some(first) = scenes.first() {
                let SceneData { rasters, .. } = first;
                if rasters[0].dims() != raster.dims() {
                    return Err(Error::Config(format!(
                        "raster of `{name}` is {:?}, expected {:?}",
                        raster.dims(),
                        rasters[0].dims()
                    )));
                }
            }
            let (_, h, w) = raster.dims();
            if h != w {
                return Err(Error::Config(format!("raster of `{name}` must be square, got {h}x{w}")));
            }
            index.insert_scene(&name, &annotations);
            let windows = build_windows(&name, &annotations);
            let rasters = [
                raster.rotated(0),
                raster.rotated(1),
                raster.rotated(2),
                raster.rotated(3),
            ];
            scenes.push(SceneData {
                name,
                annotations,
                windows,
                rasters,
            });
        }
        Ok(Self { scenes, index, by_name })
    }

    pub fn names(&self) -> Vec<String> {
        self.scenes.iter().map(|s| s.name.to_string()).collect()
    }

    pub fn scene(&self, name: &str) -> Result<&SceneData> {
        self.by_name
            .get(name)
            .map(|&i| &self.scenes[i])
            .ok_or_else(|| Error::UnknownScene(name.to_string()))
    }

    /// `(channels, size)` of the rasters, if any scene is loaded.
    pub fn raster_dims(&self) -> Option<(usize, usize)> {
        self.scenes.first().map(|s| {
            let (c, h, _) = s.rasters[0].dims();
            (c, h)
        })
    }

    /// Raster table addressed by [`Sample::raster`].
    pub fn raster_table(&self) -> Vec<&SceneRaster> {
        self.scenes.iter().flat_map(|s| s.rasters.iter()).collect()
    }

    /// Normalised model input for `window`.
    pub fn sample(&self, window: &TrajWindow, window_id: usize, norm: &NormParams) -> Result<Sample> {
        let slot = *self
            .by_name
            .get(&window.scene)
            .ok_or_else(|| Error::UnknownScene(window.scene.to_string()))?;
        let graph = StarGraphSeq::build(window, &self.index).normalized(norm);
        Ok(Sample {
            window_id,
            obs: window.obs.map(|p| norm.normalize(p)),
            gt: window.gt.map(|p| norm.normalize(p)),
            graph,
            raster: 4 * slot + usize::from(window.rotation % 4),
        })
    }

    /// Samples for `windows`, numbered by position.
    pub fn samples(&self, windows: &[TrajWindow], norms: &SceneNorms) -> Result<Vec<Sample>> {
        windows
            .par_iter()
            .enumerate()
            .map(|(i, w)| self.sample(w, i, norms.get(&w.scene)))
            .collect()
    }
}

/// Normalisation bounds per scene, falling back to the run-wide bounds.
#[derive(Clone, Debug)]
pub struct SceneNorms {
    pub global: NormParams,
    pub per_scene: HashMap<Arc<str>, NormParams>,
}

impl SceneNorms {
    pub fn global(norm: NormParams) -> Self {
        Self {
            global: norm,
            per_scene: HashMap::new(),
        }
    }

    /// Fits bounds on `train` (global and, in per-scene mode, per scene).
    pub fn fit(mode: NormMode, train: &[TrajWindow]) -> Result<Self> {
        let mut norms = Self::global(NormParams::fit(train)?);
        if mode == NormMode::PerScene {
            let mut groups: HashMap<Arc<str>, Vec<&TrajWindow>> = HashMap::new();
            for w in train {
                groups.entry(w.scene.clone()).or_default().push(w);
            }
            for (scene, ws) in groups {
                norms.per_scene.insert(scene, NormParams::fit(ws)?);
            }
        }
        Ok(norms)
    }

    /// Bounds for an unseen scene in per-scene mode, from observed points only.
    pub fn add_from_observations(&mut self, scene: &str, windows: &[TrajWindow]) -> Result<()> {
        let norm = NormParams::fit_points(windows.iter().flat_map(|w| w.obs[..T_OBS].iter().copied()))?;
        self.per_scene.insert(Arc::from(scene), norm);
        Ok(())
    }

    pub fn get(&self, scene: &str) -> &NormParams {
        self.per_scene.get(scene).unwrap_or(&self.global)
    }
}
