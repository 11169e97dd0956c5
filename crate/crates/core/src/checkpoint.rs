//! Self-describing binary checkpoints.
//!
//! Layout: the magic `SGSGCKPT`, a little-endian `u32` format version, a
//! little-endian `u32` header length, a UTF-8 header, then every tensor as
//! little-endian `f32` values in header order. The header holds one
//! `meta <key> <value>` line per setting and one `tensor <name> <shape>` line
//! per parameter, shape written as `AxBxC`.

use std::fs;
use std::path::Path;

use crate::dataset::{NormMode, NormParams};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SgsgModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SGSGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model together with the normalisation it was trained under.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SgsgModel<f32>,
    pub norm: NormParams,
    pub norm_mode: NormMode,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_meta<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| format_err(format!("bad value `{value}` for `{key}`")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.model.config;
        let mut header = String::new();
        let mut meta = |k: &str, v: String| header.push_str(&format!("meta {k} {v}\n"));
        meta("use_sg", c.use_sg.to_string());
        meta("use_scene", c.use_scene.to_string());
        meta("use_vae", c.use_vae.to_string());
        meta("merge", c.merge.to_string());
        meta("gcn_self_loop", c.gcn_self_loop.to_string());
        meta("tie_embedding", c.tie_embedding.to_string());
        meta("raster_channels", c.raster_channels.to_string());
        meta("raster_size", c.raster_size.to_string());
        meta("norm_mode", self.norm_mode.to_string());
        meta("norm_min_x", format!("{:?}", self.norm.min[0]));
        meta("norm_min_y", format!("{:?}", self.norm.min[1]));
        meta("norm_max_x", format!("{:?}", self.norm.max[0]));
        meta("norm_max_y", format!("{:?}", self.norm.max[1]));
        let mut payload = Vec::new();
        for (_, name, value) in self.model.params.iter() {
            let shape: Vec<String> = value.shape().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!("tensor {name} {}\n", shape.join("x")));
            for v in value.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(format_err("file too short for a checkpoint preamble"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(format_err("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let header = bytes
            .get(16..16 + header_len)
            .ok_or_else(|| format_err("truncated header"))?;
        let header = std::str::from_utf8(header).map_err(|_| format_err("header is not UTF-8"))?;
        let mut payload = &bytes[16 + header_len..];

        let mut config = ModelConfig::default();
        let mut norm_mode = NormMode::Global;
        let mut norm = [f64::NAN; 4];
        let mut tensors: Vec<(String, Vec<usize>)> = Vec::new();
        for line in header.lines() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(key), Some(v), None) => match key {
                    "use_sg" => config.use_sg = parse_meta(key, v)?,
                    "use_scene" => config.use_scene = parse_meta(key, v)?,
                    "use_vae" => config.use_vae = parse_meta(key, v)?,
                    "merge" => config.merge = parse_meta(key, v)?,
                    "gcn_self_loop" => config.gcn_self_loop = parse_meta(key, v)?,
                    "tie_embedding" => config.tie_embedding = parse_meta(key, v)?,
                    "raster_channels" => config.raster_channels = parse_meta(key, v)?,
                    "raster_size" => config.raster_size = parse_meta(key, v)?,
                    "norm_mode" => norm_mode = parse_meta(key, v)?,
                    "norm_min_x" => norm[0] = parse_meta(key, v)?,
                    "norm_min_y" => norm[1] = parse_meta(key, v)?,
                    "norm_max_x" => norm[2] = parse_meta(key, v)?,
                    "norm_max_y" => norm[3] = parse_meta(key, v)?,
                    other => return Err(format_err(format!("unknown header key `{other}`"))),
                },
                (Some("tensor"), Some(name), Some(shape), None) => {
                    let dims = shape
                        .split('x')
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|_| format_err(format!("bad shape `{shape}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    tensors.push((name.to_string(), dims));
                }
                _ => return Err(format_err(format!("malformed header line `{line}`"))),
            }
        }
        let norm = NormParams::new([norm[0], norm[1]], [norm[2], norm[3]])
            .map_err(|e| format_err(format!("normalisation bounds: {e}")))?;
        let mut model = SgsgModel::<f32>::new(config, 0).map_err(|e| format_err(e.to_string()))?;
        if tensors.len() != model.params.len() {
            return Err(format_err(format!(
                "expected {} tensors for this configuration, header lists {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (name, dims) in tensors {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| format_err(format!("unexpected tensor `{name}`")))?;
            if model.params.value(id).shape() != dims.as_slice() {
                return Err(format_err(format!("tensor `{name}` has shape {dims:?}")));
            }
            let n: usize = dims.iter().product();
            if payload.len() < 4 * n {
                return Err(format_err(format!("truncated payload in tensor `{name}`")));
            }
            let data = payload[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            payload = &payload[4 * n..];
            model.params.set_value(id, Tensor::new(dims, data)?)?;
        }
        if !payload.is_empty() {
            return Err(format_err(format!("{} trailing bytes after payload", payload.len())));
        }
        Ok(Self { model, norm, norm_mode })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
