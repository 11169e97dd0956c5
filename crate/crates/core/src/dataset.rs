//! ETH/UCY-style annotation handling.
//!
//! Annotation files hold one observation per row: `frame_id ped_id x y`,
//! whitespace separated, coordinates in meters. Frame and pedestrian ids may
//! be written as integral floats (`780.0`), as the public benchmark files do.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::{Point, T_OBS, T_PRED};

/// Names of the five benchmark scenes.
pub const BENCHMARK_SCENES: [&str; 5] = ["ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawAnnotation {
    pub frame_id: i64,
    pub ped_id: i64,
    pub x: f64,
    pub y: f64,
}

impl RawAnnotation {
    pub fn pos(&self) -> Point {
        [self.x, self.y]
    }
}

/// Parsed annotations of one scene, sorted by `(ped_id, frame_id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneAnnotations {
    pub annotations: Vec<RawAnnotation>,
    /// Frame delta between consecutive annotated steps (0 when unknown).
    pub stride: i64,
    /// Rows removed because they were not on the stride grid.
    pub dropped: usize,
}

pub fn parse_scene(path: impl AsRef<Path>) -> Result<SceneAnnotations> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_scene_str(&text, path)
}

fn parse_id(tok: &str) -> Option<i64> {
    if let Ok(v) = tok.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = tok.parse().ok()?;
    (f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

/// Parses annotation text; `origin` is only used in error messages.
pub fn parse_scene_str(text: &str, origin: &Path) -> Result<SceneAnnotations> {
    let err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        msg,
    };
    let mut rows = Vec::new();
    let mut seen: HashMap<(i64, i64), usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(err(lineno, format!("expected 4 columns, found {}", toks.len())));
        }
        let frame_id = parse_id(toks[0]).ok_or_else(|| err(lineno, format!("bad frame id `{}`", toks[0])))?;
        let ped_id = parse_id(toks[1]).ok_or_else(|| err(lineno, format!("bad pedestrian id `{}`", toks[1])))?;
        let coord = |t: &str| -> Result<f64> {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(lineno, format!("bad coordinate `{t}`")))
        };
        let (x, y) = (coord(toks[2])?, coord(toks[3])?);
        if let Some(first) = seen.insert((frame_id, ped_id), lineno) {
            return Err(err(
                lineno,
                format!("duplicate (frame {frame_id}, pedestrian {ped_id}), first on line {first}"),
            ));
        }
        rows.push(RawAnnotation { frame_id, ped_id, x, y });
    }
    rows.sort_by_key(|a| (a.ped_id, a.frame_id));

    let stride = detect_stride(&rows);
    let mut dropped = 0;
    if stride > 1 {
        let mut residues: BTreeMap<i64, usize> = BTreeMap::new();
        for a in &rows {
            *residues.entry(a.frame_id.rem_euclid(stride)).or_default() += 1;
        }
        let phase = modal_key(&residues).unwrap_or(0);
        let before = rows.len();
        rows.retain(|a| a.frame_id.rem_euclid(stride) == phase);
        dropped = before - rows.len();
        if dropped > 0 {
            log::warn!(
                "{}: dropped {dropped} rows off the {stride}-frame annotation stride",
                origin.display()
            );
        }
    }
    Ok(SceneAnnotations {
        annotations: rows,
        stride,
        dropped,
    })
}

fn modal_key(counts: &BTreeMap<i64, usize>) -> Option<i64> {
    // ties go to the smallest key
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&k, _)| k)
}

/// Modal positive frame gap between consecutive annotations of a pedestrian.
pub fn detect_stride(sorted: &[RawAnnotation]) -> i64 {
    let mut gaps: BTreeMap<i64, usize> = BTreeMap::new();
    for pair in sorted.windows(2) {
        if pair[0].ped_id == pair[1].ped_id {
            let d = pair[1].frame_id - pair[0].frame_id;
            if d > 0 {
                *gaps.entry(d).or_default() += 1;
            }
        }
    }
    if gaps.is_empty() {
        let mut frames: Vec<i64> = sorted.iter().map(|a| a.frame_id).collect();
        frames.sort_unstable();
        frames.dedup();
        for pair in frames.windows(2) {
            *gaps.entry(pair[1] - pair[0]).or_default() += 1;
        }
    }
    modal_key(&gaps).unwrap_or(if sorted.is_empty() { 0 } else { 1 })
}

/// One POI's observed and future path.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajWindow {
    pub scene: Arc<str>,
    pub poi_id: i64,
    pub start_frame: i64,
    /// Frame delta between consecutive steps.
    pub stride: i64,
    /// Number of 90° counter-clockwise rotations applied.
    pub rotation: u8,
    pub obs: [Point; T_OBS],
    pub gt: [Point; T_PRED],
}

impl TrajWindow {
    /// Frame id of observation step `t` (0-based).
    pub fn frame(&self, t: usize) -> i64 {
        self.start_frame + t as i64 * self.stride
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.obs.iter().chain(self.gt.iter())
    }

    pub fn rotated90(&self) -> Self {
        let mut w = self.clone();
        w.obs.iter_mut().chain(w.gt.iter_mut()).for_each(|p| *p = rotate90(*p));
        w.rotation = (w.rotation + 1) % 4;
        w
    }
}

/// `(x, y) -> (-y, x)`
pub fn rotate90(p: Point) -> Point {
    [-p[1], p[0]]
}

/// Slides a `t_obs + t_pred` window with stride 1 over every maximal run of
/// consecutive annotations of each pedestrian.
pub fn build_windows(scene: &str, parsed: &SceneAnnotations) -> Vec<TrajWindow> {
    let scene: Arc<str> = Arc::from(scene);
    let len = T_OBS + T_PRED;
    let mut out = Vec::new();
    for track in contiguous_tracks(&parsed.annotations, parsed.stride) {
        if track.len() < len {
            continue;
        }
        for start in 0..=track.len() - len {
            let seg = &track[start..start + len];
            let mut obs = [[0.0; 2]; T_OBS];
            let mut gt = [[0.0; 2]; T_PRED];
            for (o, a) in obs.iter_mut().zip(&seg[..T_OBS]) {
                *o = a.pos();
            }
            for (g, a) in gt.iter_mut().zip(&seg[T_OBS..]) {
                *g = a.pos();
            }
            out.push(TrajWindow {
                scene: scene.clone(),
                poi_id: seg[0].ped_id,
                start_frame: seg[0].frame_id,
                stride: parsed.stride,
                rotation: 0,
                obs,
                gt,
            });
        }
    }
    out
}

/// Splits sorted annotations into runs of one pedestrian with frame delta
/// exactly `stride`.
pub fn contiguous_tracks(sorted: &[RawAnnotation], stride: i64) -> Vec<&[RawAnnotation]> {
    let mut tracks = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        let split = i == sorted.len()
            || sorted[i].ped_id != sorted[i - 1].ped_id
            || sorted[i].frame_id - sorted[i - 1].frame_id != stride;
        if split {
            if i > start {
                tracks.push(&sorted[start..i]);
            }
            start = i;
        }
    }
    tracks
}

/// Returns the original windows followed by `extra_rotations` successively
/// rotated copies of each.
pub fn rotate90_augment(windows: &[TrajWindow], extra_rotations: usize) -> Vec<TrajWindow> {
    let mut out = windows.to_vec();
    let mut current = windows.to_vec();
    for _ in 0..extra_rotations {
        current = current.iter().map(TrajWindow::rotated90).collect();
        out.extend(current.iter().cloned());
    }
    out
}

/// Per-axis affine map of `[min, max]` onto `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormParams {
    pub min: Point,
    pub max: Point,
}

impl NormParams {
    pub fn new(min: Point, max: Point) -> Result<Self> {
        for axis in 0..2 {
            if !(max[axis] > min[axis]) || !min[axis].is_finite() || !max[axis].is_finite() {
                return Err(Error::Config(format!(
                    "degenerate normalisation range on axis {axis}: [{}, {}]",
                    min[axis], max[axis]
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// Bounds of all observed and future points of `windows`.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a TrajWindow>) -> Result<Self> {
        Self::fit_points(windows.into_iter().flat_map(|w| w.points().copied()))
    }

    pub fn fit_points(points: impl IntoIterator<Item = Point>) -> Result<Self> {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        let mut any = false;
        for p in points {
            any = true;
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        if !any {
            return Err(Error::Config("no training points to fit normalisation".into()));
        }
        Self::new(min, max)
    }

    pub fn normalize(&self, p: Point) -> Point {
        let mut out = [0.0; 2];
        for a in 0..2 {
            out[a] = 2.0 * (p[a] - self.min[a]) / (self.max[a] - self.min[a]) - 1.0;
        }
        out
    }

    pub fn denormalize(&self, p: Point) -> Point {
        let mut out = [0.0; 2];
        for a in 0..2 {
            out[a] = (p[a] + 1.0) * 0.5 * (self.max[a] - self.min[a]) + self.min[a];
        }
        out
    }

    /// Meters per normalised unit on each axis.
    pub fn half_range(&self) -> Point {
        [0.5 * (self.max[0] - self.min[0]), 0.5 * (self.max[1] - self.min[1])]
    }
}

/// Where normalisation bounds come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormMode {
    /// One set of bounds fit on all training windows of a run.
    #[default]
    Global,
    /// Bounds fit per scene; the held-out scene uses its observed points only.
    PerScene,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "per_scene" => Ok(Self::PerScene),
            other => Err(Error::InvalidArgument(format!(
                "unknown normalisation mode `{other}` (expected global or per_scene)"
            ))),
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Global => "global",
            Self::PerScene => "per_scene",
        })
    }
}

/// Partitions `scenes` into four training scenes and one held-out test scene.
pub fn leave_one_out_split(scenes: &[String], held_out: &str) -> Result<(Vec<String>, String)> {
    if !scenes.iter().any(|s| s == held_out) {
        return Err(Error::UnknownScene(held_out.to_string()));
    }
    let train: Vec<String> = scenes.iter().filter(|s| *s != held_out).cloned().collect();
    if train.is_empty() {
        return Err(Error::Config(format!(
            "holding out `{held_out}` leaves no training scenes"
        )));
    }
    Ok((train, held_out.to_string()))
}

/// `(pedestrian id, position)`
type Occupant = (i64, Point);

/// Who is where, per `(scene, frame)`.
#[derive(Clone, Debug, Default)]
pub struct NeighborIndex {
    frames: HashMap<(Arc<str>, i64), Vec<Occupant>>,
}

impl NeighborIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_scene(&mut self, scene: &str, parsed: &SceneAnnotations) {
        let key: Arc<str> = Arc::from(scene);
        for a in &parsed.annotations {
            self.frames
                .entry((key.clone(), a.frame_id))
                .or_default()
                .push((a.ped_id, a.pos()));
        }
        for ((s, _), v) in self.frames.iter_mut() {
            if **s == *scene {
                v.sort_by_key(|&(id, _)| id);
            }
        }
    }

    /// Everyone annotated at `frame` except `poi`, sorted by pedestrian id.
    pub fn neighbors_at(&self, scene: &str, frame: i64, poi: i64) -> Vec<(i64, Point)> {
        self.frames
            .get(&(Arc::from(scene), frame))
            .map(|v| v.iter().copied().filter(|&(id, _)| id != poi).collect())
            .unwrap_or_default()
    }

    /// Number of pedestrians annotated at `frame`.
    pub fn population(&self, scene: &str, frame: i64) -> usize {
        self.frames.get(&(Arc::from(scene), frame)).map_or(0, Vec::len)
    }

    /// Sorted frame ids known for `scene`.
    pub fn frames_of(&self, scene: &str) -> Vec<i64> {
        let mut f: Vec<i64> = self
            .frames
            .keys()
            .filter(|(s, _)| **s == *scene)
            .map(|&(_, f)| f)
            .collect();
        f.sort_unstable();
        f
    }
}
