//! SVG rendering of prediction dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::evaluate::DUMP_HEADER;
use crate::Point;

const CANVAS: f64 = 800.0;
const MARGIN: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TrackKind {
    Observed,
    GroundTruth,
    Predicted,
}

/// Polylines of one scene keyed by `(window, kind, sample)`.
pub type SceneTracks = BTreeMap<(usize, TrackKind, usize), Vec<Point>>;

/// Reads a prediction dump into per-scene polylines.
pub fn read_prediction_dump(text: &str, origin: &Path) -> Result<BTreeMap<String, SceneTracks>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == DUMP_HEADER => {}
        _ => return Err(err(1, format!("expected header `{DUMP_HEADER}`"))),
    }
    type Steps = BTreeMap<(usize, TrackKind, usize), Vec<(usize, Point)>>;
    let mut out: BTreeMap<String, Steps> = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(err(i + 1, format!("expected 9 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(i + 1, format!("bad number `{s}`")));
        let idx = |s: &str| s.parse::<usize>().map_err(|_| err(i + 1, format!("bad index `{s}`")));
        let kind = match f[4] {
            "obs" => TrackKind::Observed,
            "gt" => TrackKind::GroundTruth,
            "pred" => TrackKind::Predicted,
            other => return Err(err(i + 1, format!("unknown kind `{other}`"))),
        };
        out.entry(f[0].to_string())
            .or_default()
            .entry((idx(f[1])?, kind, idx(f[5])?))
            .or_default()
            .push((idx(f[6])?, [num(f[7])?, num(f[8])?]));
    }
    Ok(out
        .into_iter()
        .map(|(scene, tracks)| {
            let tracks = tracks
                .into_iter()
                .map(|(key, mut pts)| {
                    pts.sort_by_key(|&(step, _)| step);
                    (key, pts.into_iter().map(|(_, p)| p).collect())
                })
                .collect();
            (scene, tracks)
        })
        .collect())
}

/// One SVG document with observed, ground-truth and sampled polylines in
/// separate groups.
pub fn render_svg(scene: &str, tracks: &SceneTracks) -> String {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in tracks.values().flatten() {
        for a in 0..2 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    if !min[0].is_finite() {
        min = [0.0, 0.0];
        max = [1.0, 1.0];
    }
    let span = (max[0] - min[0]).max(max[1] - min[1]).max(1e-9);
    let scale = (CANVAS - 2.0 * MARGIN) / span;
    let map = |p: &Point| {
        (
            MARGIN + (p[0] - min[0]) * scale,
            CANVAS - MARGIN - (p[1] - min[1]) * scale,
        )
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(svg, "<title>{scene}</title>");
    let groups = [
        (TrackKind::Observed, "observed", "#1f4e9e", "2"),
        (TrackKind::GroundTruth, "ground-truth", "#2a8c3a", "2"),
        (TrackKind::Predicted, "samples", "#c8322a", "1"),
    ];
    for (kind, id, colour, width) in groups {
        let _ = writeln!(
            svg,
            r#"<g id="{id}" fill="none" stroke="{colour}" stroke-width="{width}" stroke-opacity="0.8">"#
        );
        for ((window, _, sample), pts) in tracks.iter().filter(|((_, k, _), _)| *k == kind) {
            let coords: Vec<String> = pts
                .iter()
                .map(|p| {
                    let (x, y) = map(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline data-window="{window}" data-sample="{sample}" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `<out_dir>/<scene>.svg` for every scene in the dump.
pub fn plot_dump(dump: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(dump)?;
    let scenes = read_prediction_dump(&text, dump)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (scene, tracks) in &scenes {
        let path = out_dir.join(format!("{scene}.svg"));
        std::fs::write(&path, render_svg(scene, tracks))?;
        written.push(path);
    }
    Ok(written)
}
