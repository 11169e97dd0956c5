//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Scenes are declared as
//! `scene.<NAME> = <annotations> <raster>`, paths relative to the config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::NormMode;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub annotations: PathBuf,
    pub raster: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub kld_weight: f64,
    /// Toggles, merge mode, self-loop and embedding tying.
    pub model: ModelConfig,
    pub held_out: Option<String>,
    pub patience: usize,
    pub val_fraction: f64,
    pub max_train_windows: Option<usize>,
    /// Extra 90-degree copies of each training window.
    pub augment_rotations: usize,
    pub teacher_forcing: bool,
    pub prior_sampling: bool,
    pub norm_mode: NormMode,
    pub scenes: Vec<SceneSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 128,
            epochs: 200,
            seed: 0,
            kld_weight: 1.0,
            model: ModelConfig::default(),
            held_out: None,
            patience: 20,
            val_fraction: 0.1,
            max_train_windows: None,
            augment_rotations: 1,
            teacher_forcing: false,
            prior_sampling: false,
            norm_mode: NormMode::Global,
            scenes: Vec::new(),
        }
    }
}

fn value<T: FromStr>(path: &Path, line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("invalid value `{v}` for `{key}`"),
    })
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Parses config text; scene paths are resolved against `base`.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                msg,
            };
            let (key, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (o, n, k) = (origin, line_no, key);
            match k {
                "lr" => cfg.lr = value(o, n, k, v)?,
                "batch_size" => cfg.batch_size = value(o, n, k, v)?,
                "epochs" => cfg.epochs = value(o, n, k, v)?,
                "seed" => cfg.seed = value(o, n, k, v)?,
                "kld_weight" => cfg.kld_weight = value(o, n, k, v)?,
                "merge_mode" => cfg.model.merge = value(o, n, k, v)?,
                "use_sg" => cfg.model.use_sg = value(o, n, k, v)?,
                "use_vae" => cfg.model.use_vae = value(o, n, k, v)?,
                "use_scene" => cfg.model.use_scene = value(o, n, k, v)?,
                "gcn_self_loop" => cfg.model.gcn_self_loop = value(o, n, k, v)?,
                "tie_embedding" => cfg.model.tie_embedding = value(o, n, k, v)?,
                "held_out" => cfg.held_out = Some(v.to_string()),
                "patience" => cfg.patience = value(o, n, k, v)?,
                "val_fraction" => cfg.val_fraction = value(o, n, k, v)?,
                "max_train_windows" => cfg.max_train_windows = Some(value(o, n, k, v)?),
                "augment_rotations" => cfg.augment_rotations = value(o, n, k, v)?,
                "teacher_forcing" => cfg.teacher_forcing = value(o, n, k, v)?,
                "prior_sampling" => cfg.prior_sampling = value(o, n, k, v)?,
                "norm_mode" => cfg.norm_mode = value(o, n, k, v)?,
                other => match other.strip_prefix("scene.") {
                    Some(name) if !name.is_empty() => {
                        let mut parts = v.split_whitespace();
                        let (Some(ann), Some(ras), None) = (parts.next(), parts.next(), parts.next()) else {
                            return Err(err(format!("scene `{name}` needs `<annotations> <raster>`")));
                        };
                        if cfg.scenes.iter().any(|s| s.name == name) {
                            return Err(err(format!("scene `{name}` declared twice")));
                        }
                        cfg.scenes.push(SceneSpec {
                            name: name.to_string(),
                            annotations: base.join(ann),
                            raster: base.join(ras),
                        });
                    }
                    _ => return Err(err(format!("unknown key `{other}`"))),
                },
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if !(self.kld_weight >= 0.0) {
            return Err(Error::Config("kld_weight must be non-negative".into()));
        }
        self.model.validate()
    }

    pub fn scene(&self, name: &str) -> Result<&SceneSpec> {
        self.scenes
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::UnknownScene(name.to_string()))
    }
}
