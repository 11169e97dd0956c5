//! Synthetic crowds in the ETH/UCY annotation format.
//!
//! A social-force simulator moves goal-directed pedestrians along routes
//! through each scene layout, with obstacle and mutual avoidance, pauses,
//! small groups and measurement noise. Positions are recorded every 0.4 s as
//! frames `0, 10, 20, ...`, matching the benchmark annotation convention.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::dataset::{parse_scene_str, RawAnnotation, SceneAnnotations, BENCHMARK_SCENES};
use crate::error::{Error, Result};
use crate::scene::SceneRaster;
use crate::{Point, T_OBS, T_PRED};

/// Frame delta between recorded steps.
pub const FRAME_STRIDE: i64 = 10;
/// Seconds between recorded steps.
pub const STEP_SECONDS: f64 = 0.4;
const SUBSTEPS: usize = 4;

pub const CLASS_WALKABLE: u8 = 0;
pub const CLASS_OBSTACLE: u8 = 1;
pub const CLASS_OUTSIDE: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min: [x0, y0],
            max: [x1, y1],
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn closest(&self, p: Point) -> Point {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
        ]
    }

    fn sample(&self, rng: &mut impl Rng) -> Point {
        [
            rng.random_range(self.min[0]..=self.max[0]),
            rng.random_range(self.min[1]..=self.max[1]),
        ]
    }
}

/// Entry zone, intermediate waypoints and exit zone.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub entry: Rect,
    pub via: Vec<Point>,
    pub exit: Rect,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub name: String,
    /// Walkable extent `[0, w] x [0, h]` in meters.
    pub size: Point,
    pub obstacles: Vec<Rect>,
    pub routes: Vec<Route>,
    /// Expected arrivals per recorded step.
    pub arrivals_per_step: f64,
    /// Probability that a pedestrian pauses at a waypoint.
    pub pause_probability: f64,
    /// Probability that an arrival brings a companion.
    pub group_probability: f64,
    /// Preferred walking speed (mean, sd) in m/s.
    pub speed: (f64, f64),
    /// Standard deviation of annotation noise in meters.
    pub noise: f64,
}

fn route(entry: Rect, via: &[Point], exit: Rect, weight: f64) -> Route {
    Route {
        entry,
        via: via.to_vec(),
        exit,
        weight,
    }
}

/// Five layouts loosely modelled on the benchmark scenes.
pub fn benchmark_layouts() -> Vec<SceneLayout> {
    let eth = SceneLayout {
        name: "ETH".into(),
        size: [16.0, 20.0],
        obstacles: vec![
            Rect::new(4.0, 9.0, 5.0, 10.0),
            Rect::new(11.0, 9.0, 12.0, 10.0),
            Rect::new(0.0, 18.5, 5.5, 20.0),
        ],
        routes: vec![
            route(
                Rect::new(5.0, 0.0, 11.0, 0.5),
                &[[8.0, 9.5]],
                Rect::new(6.5, 19.5, 10.0, 20.0),
                3.0,
            ),
            route(
                Rect::new(6.5, 19.5, 10.0, 20.0),
                &[[8.0, 9.5]],
                Rect::new(5.0, 0.0, 11.0, 0.5),
                3.0,
            ),
            route(
                Rect::new(0.0, 2.0, 0.5, 7.0),
                &[[7.0, 12.0]],
                Rect::new(6.5, 19.5, 10.0, 20.0),
                1.0,
            ),
            route(
                Rect::new(15.5, 12.0, 16.0, 17.0),
                &[[9.0, 6.0]],
                Rect::new(5.0, 0.0, 11.0, 0.5),
                1.0,
            ),
        ],
        arrivals_per_step: 0.22,
        pause_probability: 0.05,
        group_probability: 0.25,
        speed: (1.35, 0.2),
        noise: 0.04,
    };
    let hotel = SceneLayout {
        name: "HOTEL".into(),
        size: [14.0, 16.0],
        obstacles: vec![Rect::new(6.0, 6.0, 8.0, 10.0), Rect::new(0.0, 0.0, 2.0, 4.0)],
        routes: vec![
            route(
                Rect::new(3.0, 15.5, 11.0, 16.0),
                &[[4.5, 8.0]],
                Rect::new(3.0, 0.0, 11.0, 0.5),
                2.0,
            ),
            route(
                Rect::new(3.0, 0.0, 11.0, 0.5),
                &[[10.0, 8.0]],
                Rect::new(3.0, 15.5, 11.0, 16.0),
                2.0,
            ),
            route(
                Rect::new(13.5, 7.0, 14.0, 9.0),
                &[[10.0, 11.5], [5.0, 12.5]],
                Rect::new(0.0, 11.0, 0.5, 14.0),
                1.0,
            ),
        ],
        arrivals_per_step: 0.16,
        pause_probability: 0.25,
        group_probability: 0.35,
        speed: (1.2, 0.25),
        noise: 0.04,
    };
    let univ = SceneLayout {
        name: "UNIV".into(),
        size: [18.0, 16.0],
        obstacles: vec![Rect::new(8.0, 7.0, 10.0, 9.0), Rect::new(0.0, 13.0, 3.0, 16.0)],
        routes: vec![
            route(
                Rect::new(0.0, 1.0, 0.5, 7.0),
                &[[7.0, 5.0]],
                Rect::new(17.5, 8.0, 18.0, 14.0),
                2.0,
            ),
            route(
                Rect::new(17.5, 8.0, 18.0, 14.0),
                &[[11.0, 11.0]],
                Rect::new(0.0, 1.0, 0.5, 7.0),
                2.0,
            ),
            route(
                Rect::new(4.0, 0.0, 14.0, 0.5),
                &[[12.0, 6.0]],
                Rect::new(5.0, 15.5, 15.0, 16.0),
                2.0,
            ),
            route(
                Rect::new(5.0, 15.5, 15.0, 16.0),
                &[[6.5, 10.0]],
                Rect::new(4.0, 0.0, 14.0, 0.5),
                2.0,
            ),
            route(
                Rect::new(17.5, 0.5, 18.0, 4.0),
                &[[12.0, 3.0]],
                Rect::new(3.5, 15.5, 6.0, 16.0),
                1.0,
            ),
        ],
        arrivals_per_step: 0.45,
        pause_probability: 0.1,
        group_probability: 0.4,
        speed: (1.1, 0.25),
        noise: 0.05,
    };
    let zara = |name: &str, door: f64, car: f64, rate: f64| SceneLayout {
        name: name.into(),
        size: [16.0, 12.0],
        obstacles: vec![
            Rect::new(0.0, 10.5, door - 1.0, 12.0),
            Rect::new(door + 1.0, 10.5, 16.0, 12.0),
            Rect::new(car, 0.0, car + 4.0, 1.8),
        ],
        routes: vec![
            route(
                Rect::new(0.0, 3.0, 0.5, 8.0),
                &[[8.0, 5.5]],
                Rect::new(15.5, 3.0, 16.0, 8.0),
                3.0,
            ),
            route(
                Rect::new(15.5, 3.0, 16.0, 8.0),
                &[[8.0, 6.0]],
                Rect::new(0.0, 3.0, 0.5, 8.0),
                3.0,
            ),
            route(
                Rect::new(door - 0.8, 11.5, door + 0.8, 12.0),
                &[[door, 8.5]],
                Rect::new(0.0, 3.0, 0.5, 8.0),
                1.0,
            ),
            route(
                Rect::new(15.5, 3.0, 16.0, 8.0),
                &[[door, 8.0]],
                Rect::new(door - 0.8, 11.5, door + 0.8, 12.0),
                1.0,
            ),
        ],
        arrivals_per_step: rate,
        pause_probability: 0.1,
        group_probability: 0.4,
        speed: (1.25, 0.2),
        noise: 0.035,
    };
    vec![
        eth,
        hotel,
        univ,
        zara("ZARA1", 9.0, 3.0, 0.25),
        zara("ZARA2", 5.0, 9.0, 0.3),
    ]
}

struct Agent {
    id: i64,
    pos: Point,
    vel: Point,
    speed: f64,
    targets: Vec<Point>,
    exit: Rect,
    pause_after: Option<usize>,
    reached: usize,
    pause_left: f64,
    age: f64,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

/// Runs the simulator for `steps` recorded steps.
pub fn simulate(layout: &SceneLayout, steps: usize, seed: u64) -> Vec<RawAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = STEP_SECONDS / SUBSTEPS as f64;
    let arrivals = Poisson::new(layout.arrivals_per_step.max(1e-9)).expect("positive rate");
    let speed = Normal::new(layout.speed.0, layout.speed.1).expect("finite speed");
    let noise = Normal::new(0.0, layout.noise).expect("finite noise");
    let jitter = Normal::new(0.0, 0.6).expect("finite jitter");
    let total_weight: f64 = layout.routes.iter().map(|r| r.weight).sum();
    let mut agents: Vec<Agent> = Vec::new();
    let mut next_id = 1i64;
    let mut rows = Vec::new();
    let bounds = Rect::new(-1.0, -1.0, layout.size[0] + 1.0, layout.size[1] + 1.0);

    for step in 0..steps {
        let n_new = arrivals.sample(&mut rng) as usize;
        for _ in 0..n_new {
            let mut pick = rng.random_range(0.0..total_weight);
            let r = layout
                .routes
                .iter()
                .find(|r| {
                    pick -= r.weight;
                    pick < 0.0
                })
                .unwrap_or(&layout.routes[0]);
            let start = r.entry.sample(&mut rng);
            let mut targets: Vec<Point> = r
                .via
                .iter()
                .map(|v| [v[0] + jitter.sample(&mut rng), v[1] + jitter.sample(&mut rng)])
                .collect();
            targets.push(r.exit.sample(&mut rng));
            let pref = speed.sample(&mut rng).clamp(0.5, 2.2);
            let pause_after =
                (rng.random::<f64>() < layout.pause_probability).then(|| rng.random_range(0..r.via.len().max(1)));
            let members = if rng.random::<f64>() < layout.group_probability {
                2
            } else {
                1
            };
            let dir = sub(targets[0], start);
            let d = norm(dir).max(1e-6);
            let lateral = [-dir[1] / d, dir[0] / d];
            for m in 0..members {
                let off = 0.7 * m as f64;
                let shift = |p: Point| [p[0] + off * lateral[0], p[1] + off * lateral[1]];
                agents.push(Agent {
                    id: next_id,
                    pos: shift(start),
                    vel: [pref * dir[0] / d, pref * dir[1] / d],
                    speed: pref * (1.0 + 0.03 * m as f64),
                    targets: targets.iter().map(|&t| shift(t)).collect(),
                    exit: r.exit,
                    pause_after,
                    reached: 0,
                    pause_left: 0.0,
                    age: 0.0,
                });
                next_id += 1;
            }
        }

        for _ in 0..SUBSTEPS {
            let snapshot: Vec<(Point, Point)> = agents.iter().map(|a| (a.pos, a.vel)).collect();
            for (i, a) in agents.iter_mut().enumerate() {
                let target = a.targets[0];
                let to = sub(target, a.pos);
                let dist = norm(to).max(1e-6);
                let desired = if a.pause_left > 0.0 {
                    [0.0, 0.0]
                } else {
                    [a.speed * to[0] / dist, a.speed * to[1] / dist]
                };
                let mut acc = [(desired[0] - a.vel[0]) / 0.5, (desired[1] - a.vel[1]) / 0.5];
                let heading = norm(a.vel).max(1e-6);
                for (j, &(p, _)) in snapshot.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let away = sub(a.pos, p);
                    let d = norm(away);
                    if !(1e-6..=3.0).contains(&d) {
                        continue;
                    }
                    let cos = -(a.vel[0] * away[0] + a.vel[1] * away[1]) / (heading * d);
                    let aniso = 0.35 + 0.65 * (1.0 + cos) / 2.0;
                    let f = 2.0 * ((0.5 - d) / 0.3).exp() * aniso;
                    acc[0] += f * away[0] / d;
                    acc[1] += f * away[1] / d;
                }
                for o in &layout.obstacles {
                    let away = sub(a.pos, o.closest(a.pos));
                    let d = norm(away);
                    if !(1e-6..=2.0).contains(&d) {
                        continue;
                    }
                    let f = 5.0 * ((0.3 - d) / 0.25).exp();
                    acc[0] += f * away[0] / d;
                    acc[1] += f * away[1] / d;
                }
                a.vel[0] += acc[0] * dt;
                a.vel[1] += acc[1] * dt;
                let v = norm(a.vel);
                let cap = 1.4 * a.speed;
                if v > cap {
                    a.vel = [a.vel[0] * cap / v, a.vel[1] * cap / v];
                }
                a.pos[0] += a.vel[0] * dt;
                a.pos[1] += a.vel[1] * dt;
                a.age += dt;
                if a.pause_left > 0.0 {
                    a.pause_left -= dt;
                }
                let reached = if a.targets.len() == 1 {
                    a.exit.contains(a.pos) || norm(sub(a.targets[0], a.pos)) < 0.4
                } else {
                    norm(sub(a.targets[0], a.pos)) < 0.8
                };
                if reached {
                    a.targets.remove(0);
                    if a.pause_after == Some(a.reached) {
                        a.pause_left = 2.0 + 6.0 * ((a.id as f64 * 0.618).fract());
                    }
                    a.reached += 1;
                }
            }
            agents.retain(|a| !a.targets.is_empty() && bounds.contains(a.pos) && a.age < 120.0);
        }

        let frame = step as i64 * FRAME_STRIDE;
        for a in &agents {
            rows.push(RawAnnotation {
                frame_id: frame,
                ped_id: a.id,
                x: a.pos[0] + noise.sample(&mut rng),
                y: a.pos[1] + noise.sample(&mut rng),
            });
        }
    }
    rows
}

/// Square raster covering `[0, s]^2`, `s` the larger side of the layout.
pub fn layout_raster(layout: &SceneLayout, size: usize) -> Result<SceneRaster> {
    let side = layout.size[0].max(layout.size[1]);
    let mpc = side / size as f64;
    let mut labels = vec![CLASS_WALKABLE; size * size];
    for i in 0..size {
        for j in 0..size {
            let p = [(j as f64 + 0.5) * mpc, (i as f64 + 0.5) * mpc];
            labels[i * size + j] = if p[0] > layout.size[0] || p[1] > layout.size[1] {
                CLASS_OUTSIDE
            } else if layout.obstacles.iter().any(|o| o.contains(p)) {
                CLASS_OBSTACLE
            } else {
                CLASS_WALKABLE
            };
        }
    }
    SceneRaster::from_labels(3, size, size, &labels, mpc, [0.0, 0.0])
}

/// Annotation text in `frame ped x y` rows, ordered by frame then pedestrian.
pub fn annotation_text(rows: &[RawAnnotation]) -> String {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|a| (a.frame_id, a.ped_id));
    let mut out = String::with_capacity(sorted.len() * 28);
    for a in &sorted {
        let _ = writeln!(out, "{}\t{}\t{:.4}\t{:.4}", a.frame_id, a.ped_id, a.x, a.y);
    }
    out
}

/// Parses rows back exactly as a file on disk would be.
pub fn to_scene(rows: &[RawAnnotation]) -> Result<SceneAnnotations> {
    parse_scene_str(&annotation_text(rows), Path::new("<synthetic>"))
}

/// Writes the five scenes, their rasters and `benchmark.cfg` into `dir`.
pub fn write_benchmark(dir: &Path, seed: u64, steps: usize, raster_size: usize) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let layouts = benchmark_layouts();
    let mut cfg = String::from("# synthetic crowds\nseed = 0\n");
    for (i, layout) in layouts.iter().enumerate() {
        debug_assert_eq!(layout.name, BENCHMARK_SCENES[i]);
        let rows = simulate(layout, steps, seed.wrapping_add(1_000_003 * i as u64));
        let ann = format!("{}.txt", layout.name);
        let ras = format!("{}.rast", layout.name);
        fs::write(dir.join(&ann), annotation_text(&rows))?;
        layout_raster(layout, raster_size)?.save(dir.join(&ras))?;
        let _ = writeln!(cfg, "scene.{} = {ann} {ras}", layout.name);
    }
    let path = dir.join("benchmark.cfg");
    fs::write(&path, cfg)?;
    Ok(path)
}

/// `n` pedestrians wandering inside a box, all present at every step.
pub fn constant_crowd(n: usize, steps: usize, seed: u64) -> Vec<RawAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (n as f64).sqrt() * 2.0 + 2.0;
    let mut pos: Vec<Point> = (0..n)
        .map(|_| [rng.random_range(0.0..side), rng.random_range(0.0..side)])
        .collect();
    let mut rows = Vec::with_capacity(n * steps);
    for step in 0..steps {
        for (id, p) in pos.iter_mut().enumerate() {
            p[0] = (p[0] + rng.random_range(-0.3..0.3)).clamp(0.0, side);
            p[1] = (p[1] + rng.random_range(-0.3..0.3)).clamp(0.0, side);
            rows.push(RawAnnotation {
                frame_id: step as i64 * FRAME_STRIDE,
                ped_id: id as i64 + 1,
                x: p[0],
                y: p[1],
            });
        }
    }
    rows
}

/// 32 tracks of exactly one window each: 16 straight lines and 16 that turn
/// by 90 degrees. Pairs of tracks share their frames.
pub fn overfit_tracks(seed: u64) -> Vec<RawAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = T_OBS + T_PRED;
    let mut rows = Vec::with_capacity(32 * len);
    for i in 0..32usize {
        let start_frame = (i / 2) as i64 * (len as i64 + 5) * FRAME_STRIDE;
        let mut p = [rng.random_range(2.0..10.0), rng.random_range(2.0..10.0)];
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let step_len = rng.random_range(0.35..0.6);
        let mut v = [step_len * angle.cos(), step_len * angle.sin()];
        let turn_at = (i % 2 == 1).then(|| rng.random_range(5..15usize));
        let left = rng.random::<bool>();
        for t in 0..len {
            rows.push(RawAnnotation {
                frame_id: start_frame + t as i64 * FRAME_STRIDE,
                ped_id: i as i64 + 1,
                x: p[0],
                y: p[1],
            });
            if turn_at == Some(t) {
                v = if left { [-v[1], v[0]] } else { [v[1], -v[0]] };
            }
            p = [p[0] + v[0], p[1] + v[1]];
        }
    }
    rows
}

/// Plain raster for scenes without a layout.
pub fn open_raster(side_m: f64, size: usize) -> Result<SceneRaster> {
    if !(side_m > 0.0) || size == 0 {
        return Err(Error::InvalidArgument("raster needs a positive side and size".into()));
    }
    let labels = vec![CLASS_WALKABLE; size * size];
    SceneRaster::from_labels(3, size, size, &labels, side_m / size as f64, [0.0, 0.0])
}
