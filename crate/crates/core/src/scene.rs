//! Scene context: semantic rasters, the scene CNN and the merge with the
//! social feature.
//!
//! A raster is a one-hot `[C, H, W]` grid. Row `i`, column `j` covers the
//! world square whose lower-left corner is
//! `origin + (j * meters_per_cell, i * meters_per_cell)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Conv2d, Linear, ParamStore, Real, Tape, Tensor, Var};
use crate::{Point, ENC_HIDDEN};

pub const RASTER_MAGIC: &[u8; 8] = b"SGSGRAST";
/// walkable, obstacle, other
pub const DEFAULT_CLASSES: usize = 3;
pub const DEFAULT_RASTER_SIZE: usize = 64;

const CONV1_CHANNELS: usize = 8;
const CONV2_CHANNELS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRaster {
    grid: Tensor<f32>,
    pub meters_per_cell: f64,
    pub origin: Point,
}

impl SceneRaster {
    /// Builds a one-hot raster from per-cell class labels in row-major order.
    pub fn from_labels(
        classes: usize,
        height: usize,
        width: usize,
        labels: &[u8],
        meters_per_cell: f64,
        origin: Point,
    ) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Format(format!(
                "{} labels for a {height}x{width} grid",
                labels.len()
            )));
        }
        if classes == 0 || height == 0 || width == 0 {
            return Err(Error::Format("empty raster".into()));
        }
        let mut grid = Tensor::zeros(&[classes, height, width]);
        for (cell, &l) in labels.iter().enumerate() {
            let l = l as usize;
            if l >= classes {
                return Err(Error::Format(format!("class {l} out of range 0..{classes}")));
            }
            grid.data_mut()[l * height * width + cell] = 1.0;
        }
        Self::new(grid, meters_per_cell, origin)
    }

    pub fn new(grid: Tensor<f32>, meters_per_cell: f64, origin: Point) -> Result<Self> {
        let r = Self {
            grid,
            meters_per_cell,
            origin,
        };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        if self.grid.shape().len() != 3 {
            return Err(Error::Format(format!("raster shape {:?}", self.grid.shape())));
        }
        if !(self.meters_per_cell > 0.0 && self.meters_per_cell.is_finite()) {
            return Err(Error::Format(format!("meters_per_cell {}", self.meters_per_cell)));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Format("non-finite origin".into()));
        }
        let (c, h, w) = self.dims();
        for cell in 0..h * w {
            let mut sum = 0.0f32;
            for ch in 0..c {
                let v = self.grid.data()[ch * h * w + cell];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Format(format!(
                        "cell ({}, {}) channel {ch} holds {v}, expected 0 or 1",
                        cell / w,
                        cell % w
                    )));
                }
                sum += v;
            }
            if sum != 1.0 {
                return Err(Error::Format(format!(
                    "cell ({}, {}) sums to {sum} across channels",
                    cell / w,
                    cell % w
                )));
            }
        }
        Ok(())
    }

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.grid.shape();
        (s[0], s[1], s[2])
    }

    pub fn grid(&self) -> &Tensor<f32> {
        &self.grid
    }

    /// Number of cells labelled `class`.
    pub fn class_count(&self, class: usize) -> usize {
        let (_, h, w) = self.dims();
        self.grid.data()[class * h * w..(class + 1) * h * w]
            .iter()
            .filter(|&&v| v == 1.0)
            .count()
    }

    /// Class label of the cell containing `p`, if inside the grid.
    pub fn class_at(&self, p: Point) -> Option<usize> {
        let (c, h, w) = self.dims();
        let j = ((p[0] - self.origin[0]) / self.meters_per_cell).floor();
        let i = ((p[1] - self.origin[1]) / self.meters_per_cell).floor();
        if i < 0.0 || j < 0.0 || i >= h as f64 || j >= w as f64 {
            return None;
        }
        let cell = i as usize * w + j as usize;
        (0..c).find(|&ch| self.grid.data()[ch * h * w + cell] == 1.0)
    }

    /// The raster of the world rotated 90° counter-clockwise about the world
    /// origin, matching [`crate::dataset::rotate90`] on points.
    pub fn rotated90(&self) -> Self {
        let (c, h, w) = self.dims();
        // new grid has h' = w rows and w' = h columns; new[i'][j'] = old[h-1-j'][i']
        let (nh, nw) = (w, h);
        let mut data = vec![0.0f32; c * h * w];
        for ch in 0..c {
            for ni in 0..nh {
                for nj in 0..nw {
                    data[ch * nh * nw + ni * nw + nj] = self.grid.data()[ch * h * w + (h - 1 - nj) * w + ni];
                }
            }
        }
        let m = self.meters_per_cell;
        Self {
            grid: Tensor::new(vec![c, nh, nw], data).expect("same size"),
            meters_per_cell: m,
            origin: [-(self.origin[1] + h as f64 * m), self.origin[0]],
        }
    }

    pub fn rotated(&self, quarter_turns: u8) -> Self {
        let mut r = self.clone();
        for _ in 0..quarter_turns % 4 {
            r = r.rotated90();
        }
        r
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, h, w) = self.dims();
        let mut out = Vec::with_capacity(44 + 4 * c * h * w);
        out.extend_from_slice(RASTER_MAGIC);
        for d in [c, h, w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.meters_per_cell.to_le_bytes());
        out.extend_from_slice(&self.origin[0].to_le_bytes());
        out.extend_from_slice(&self.origin[1].to_le_bytes());
        for v in self.grid.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = 8 + 12 + 24;
        if bytes.len() < header {
            return Err(Error::Format(format!("raster truncated: {} bytes", bytes.len())));
        }
        if &bytes[..8] != RASTER_MAGIC {
            return Err(Error::Format("bad raster magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let (c, h, w) = (u32_at(8), u32_at(12), u32_at(16));
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Format(format!("raster shape {c}x{h}x{w}")));
        }
        let n = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::Format("raster shape overflows".into()))?;
        if bytes.len() != header + 4 * n {
            return Err(Error::Format(format!(
                "raster payload is {} bytes, expected {}",
                bytes.len() - header,
                4 * n
            )));
        }
        let mpc = f64_at(20);
        let origin = [f64_at(28), f64_at(36)];
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Self::new(Tensor::new(vec![c, h, w], data)?, mpc, origin)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<SceneRaster> {
    SceneRaster::from_bytes(&std::fs::read(path)?)
}

/// Parses `H` lines of `W` class digits into `(height, width, labels)`.
pub fn parse_label_grid(text: &str) -> Result<(usize, usize, Vec<u8>)> {
    let mut labels = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<u8> = line
            .chars()
            .map(|ch| {
                ch.to_digit(10)
                    .map(|d| d as u8)
                    .ok_or_else(|| Error::Format(format!("line {}: `{ch}` is not a class digit", i + 1)))
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Format(format!(
                    "line {}: {} cells, expected {w}",
                    i + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        labels.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Format("empty label grid".into()))?;
    Ok((height, width, labels))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MergeMode {
    /// `sigmoid(s) * g`
    #[default]
    Gating,
    /// `s + g`
    Add,
    /// learned projection of `s ++ g` back to 32 dims
    Concat,
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gating" => Ok(Self::Gating),
            "add" => Ok(Self::Add),
            "concat" => Ok(Self::Concat),
            other => Err(Error::InvalidArgument(format!(
                "unknown merge mode `{other}` (expected gating, add or concat)"
            ))),
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gating => "gating",
            Self::Add => "add",
            Self::Concat => "concat",
        })
    }
}

/// Two conv + average-pool stages and one fully connected layer to a 32-d
/// scene feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneEncoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: Linear,
    pub channels: usize,
    pub size: usize,
}

impl SceneEncoder {
    /// Encoder for square `size x size` rasters with `channels` classes.
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        channels: usize,
        size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if size < 4 || channels == 0 {
            return Err(Error::Config(format!(
                "scene raster must be at least 4x4 with one class, got {channels}x{size}x{size}"
            )));
        }
        let conv1 = Conv2d::new(store, "scene.conv1", channels, CONV1_CHANNELS, 3, 1, 1, rng)?;
        let conv2 = Conv2d::new(store, "scene.conv2", CONV1_CHANNELS, CONV2_CHANNELS, 3, 1, 1, rng)?;
        let pooled = size / 2 / 2;
        let fc = Linear::new(store, "scene.fc", CONV2_CHANNELS * pooled * pooled, ENC_HIDDEN, rng)?;
        Ok(Self {
            conv1,
            conv2,
            fc,
            channels,
            size,
        })
    }

    /// Scene logits `s`, `[S, 32]`, one row per raster.
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, rasters: &[&SceneRaster]) -> Result<Var> {
        let mut data = Vec::new();
        for r in rasters {
            if r.dims() != (self.channels, self.size, self.size) {
                return Err(dim_err(
                    "encode_scene",
                    format!(
                        "raster {:?} but encoder expects {}x{}x{}",
                        r.dims(),
                        self.channels,
                        self.size,
                        self.size
                    ),
                ));
            }
            data.extend(r.grid().data().iter().map(|&v| F::lit(v as f64)));
        }
        let x = tape.leaf(Tensor::new(
            vec![rasters.len(), self.channels, self.size, self.size],
            data,
        )?);
        let x = self.conv1.forward(tape, store, x)?;
        let x = tape.relu(x);
        let x = tape.avg_pool(x, 2)?;
        let x = self.conv2.forward(tape, store, x)?;
        let x = tape.relu(x);
        let x = tape.avg_pool(x, 2)?;
        let flat = tape.value(x).len() / rasters.len();
        let x = tape.reshape(x, &[rasters.len(), flat])?;
        self.fc.forward(tape, store, x)
    }

    pub fn num_scalars<F: Real>(&self, store: &ParamStore<F>) -> usize {
        store.num_scalars_with_prefix("scene.conv") + self.fc.num_scalars()
    }
}

/// Combination of the scene logits with the social feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Merge {
    pub mode: MergeMode,
    pub projection: Option<Linear>,
}

impl Merge {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, mode: MergeMode, rng: &mut R) -> Result<Self> {
        let projection = match mode {
            MergeMode::Concat => Some(Linear::new(store, "merge.proj", 2 * ENC_HIDDEN, ENC_HIDDEN, rng)?),
            _ => None,
        };
        Ok(Self { mode, projection })
    }

    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, s: Var, g: Var) -> Result<Var> {
        match (self.mode, self.projection) {
            (MergeMode::Gating, _) => {
                let gate = tape.sigmoid(s);
                tape.mul(gate, g)
            }
            (MergeMode::Add, _) => tape.add(s, g),
            (MergeMode::Concat, Some(proj)) => {
                let cat = tape.concat(&[s, g])?;
                proj.forward(tape, store, cat)
            }
            (MergeMode::Concat, None) => Err(Error::Config("concat merge without projection".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block_raster(size: usize, block: Option<(usize, usize, usize)>) -> SceneRaster {
        let mut labels = vec![0u8; size * size];
        if let Some((i0, j0, n)) = block {
            for i in i0..i0 + n {
                for j in j0..j0 + n {
                    labels[i * size + j] = 1;
                }
            }
        }
        SceneRaster::from_labels(3, size, size, &labels, 0.5, [0.0, 0.0]).unwrap()
    }

    #[test]
    fn raster_counts_and_validation() {
        let r = block_raster(64, None);
        assert_eq!(r.class_count(0), 64 * 64);
        let r = block_raster(64, Some((5, 7, 10)));
        assert_eq!(r.class_count(1), 100);
        assert_eq!(r.class_count(0), 64 * 64 - 100);

        let mut grid = r.grid().clone();
        grid.data_mut()[64 * 64] = 1.0; // channel 1 of cell 0, on top of channel 0
        assert!(matches!(SceneRaster::new(grid, 0.5, [0.0, 0.0]), Err(Error::Format(_))));
    }

    #[test]
    fn raster_bytes_roundtrip_and_errors() {
        let r = block_raster(8, Some((1, 1, 2)));
        let bytes = r.to_bytes();
        assert_eq!(SceneRaster::from_bytes(&bytes).unwrap(), r);
        assert!(SceneRaster::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SceneRaster::from_bytes(&bad).is_err());
        let mut two = bytes;
        let off = 44 + 4 * (64 + 3); // channel 1, cell 3 (already class 0)
        two[off..off + 4].copy_from_slice(&1.0f32.to_le_bytes());
        assert!(SceneRaster::from_bytes(&two).is_err());
    }

    #[test]
    fn rotation_keeps_one_hot_and_tracks_world_points() {
        let mut labels = vec![0u8; 6 * 6];
        labels[6 + 4] = 1; // row 1, col 4
        let r = SceneRaster::from_labels(3, 6, 6, &labels, 0.5, [1.0, -2.0]).unwrap();
        let p = [1.0 + 4.25 * 0.5, -2.0 + 1.5 * 0.5];
        assert_eq!(r.class_at(p), Some(1));
        let rr = r.rotated90();
        assert_eq!(rr.class_count(1), 1);
        assert_eq!(rr.class_at(crate::dataset::rotate90(p)), Some(1));
        let full = rr.rotated90().rotated90().rotated90();
        assert_eq!(full.grid(), r.grid());
        assert!((full.origin[0] - r.origin[0]).abs() < 1e-12);
    }

    #[test]
    fn label_grid_parsing() {
        let (h, w, l) = parse_label_grid("0012\n0000\n").unwrap();
        assert_eq!((h, w), (2, 4));
        assert_eq!(l[2..4], [1, 2]);
        assert!(parse_label_grid("01\n012\n").is_err());
        assert!(parse_label_grid("0a\n").is_err());
    }

    fn encode(enc: &SceneEncoder, store: &ParamStore<f64>, r: &SceneRaster) -> Vec<f64> {
        let mut tape = Tape::new();
        let s = enc.forward(&mut tape, store, &[r]).unwrap();
        tape.value(s).data().to_vec()
    }

    #[test]
    fn encoder_examples() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = SceneEncoder::new(&mut store, 3, 16, &mut rng).unwrap();
        let plain = block_raster(16, None);
        let blocked = block_raster(16, Some((4, 4, 4)));
        let a = encode(&enc, &store, &plain);
        assert_eq!(a.len(), ENC_HIDDEN);
        assert_eq!(a, encode(&enc, &store, &plain));
        assert_ne!(a, encode(&enc, &store, &blocked));

        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        assert!(encode(&enc, &store, &plain).iter().all(|&v| v == 0.0));
    }

    fn gate_values(mode: MergeMode, s: &[f64], g: &[f64]) -> Vec<f64> {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let merge = Merge::new(&mut store, mode, &mut rng).unwrap();
        let mut tape = Tape::new();
        let sv = tape.leaf(Tensor::from_slice(s));
        let gv = tape.leaf(Tensor::from_slice(g));
        let out = merge.apply(&mut tape, &store, sv, gv).unwrap();
        tape.value(out).data().to_vec()
    }

    #[test]
    fn gate_examples() {
        let g: Vec<f64> = (0..ENC_HIDDEN).map(|k| k as f64 - 10.0).collect();
        let half = gate_values(MergeMode::Gating, &[0.0; ENC_HIDDEN], &g);
        assert!(half.iter().zip(&g).all(|(a, b)| *a == 0.5 * b));
        let sat = gate_values(MergeMode::Gating, &[50.0; ENC_HIDDEN], &g);
        assert!(sat.iter().zip(&g).all(|(a, b)| (a - b).abs() < 1e-9));
        let zero = gate_values(MergeMode::Gating, &[3.0; ENC_HIDDEN], &[0.0; ENC_HIDDEN]);
        assert!(zero.iter().all(|&v| v == 0.0));
        let add = gate_values(MergeMode::Add, &[0.0; ENC_HIDDEN], &g);
        assert_eq!(add, g);
        assert_eq!(gate_values(MergeMode::Concat, &[0.1; ENC_HIDDEN], &g).len(), ENC_HIDDEN);
        assert!("max".parse::<MergeMode>().is_err());
    }
}
