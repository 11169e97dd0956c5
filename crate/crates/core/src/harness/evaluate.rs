//! Best-of-K evaluation on a test scene, metric CSVs and prediction dumps.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::dataset::{NormMode, TrajWindow};
use crate::error::{Error, Result};
use crate::harness::data::{Corpus, SceneNorms};
use crate::harness::metrics::{ade, best_of_k, constant_velocity_baseline, fde};
use crate::model::{Sample, SampleMode};
use crate::{Point, T_PRED};

/// Windows predicted per batch.
const EVAL_CHUNK: usize = 64;

pub const METRICS_HEADER: &str = "scene,k,ade_m,fde_m,baseline_ade_m,baseline_fde_m,n_windows";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    pub seed: u64,
    /// Draw `z` from the prior instead of the posterior.
    pub prior_sampling: bool,
    /// Sample the latent even when `k == 1`.
    pub stochastic: bool,
}

impl EvalOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            prior_sampling: false,
            stochastic: false,
        }
    }

    pub fn sample_mode(&self) -> SampleMode {
        if self.k == 1 && !self.stochastic {
            SampleMode::Deterministic
        } else if self.prior_sampling {
            SampleMode::Prior { seed: self.seed }
        } else {
            SampleMode::Posterior { seed: self.seed }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowMetrics {
    pub window: usize,
    pub poi_id: i64,
    pub start_frame: i64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub baseline_ade: f64,
    pub baseline_fde: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub scene: String,
    pub k: usize,
    pub ade_m: f64,
    pub fde_m: f64,
    pub baseline_ade_m: f64,
    pub baseline_fde_m: f64,
    pub n_windows: usize,
    pub wall_time_s: f64,
    pub windows: Vec<WindowMetrics>,
}

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.scene, self.k, self.ade_m, self.fde_m, self.baseline_ade_m, self.baseline_fde_m, self.n_windows
        )
    }
}

/// Writes the header and one row per report, then an `AVG` row when there
/// is more than one scene.
pub fn write_metrics_csv(mut w: impl Write, reports: &[MetricsReport]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    if reports.len() > 1 {
        let n = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        writeln!(
            w,
            "AVG,{},{},{},{},{},{}",
            reports[0].k,
            mean(|r| r.ade_m),
            mean(|r| r.fde_m),
            mean(|r| r.baseline_ade_m),
            mean(|r| r.baseline_fde_m),
            reports.iter().map(|r| r.n_windows).sum::<usize>()
        )?;
    }
    Ok(())
}

/// Metrics plus every predicted trajectory, in meters.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub windows: Vec<TrajWindow>,
    /// `predictions[w][k]`
    pub predictions: Vec<Vec<[Point; T_PRED]>>,
}

/// Normalisation used for a test scene.
pub fn test_norms(ck: &Checkpoint, scene: &str, windows: &[TrajWindow]) -> Result<SceneNorms> {
    let mut norms = SceneNorms::global(ck.norm);
    if ck.norm_mode == NormMode::PerScene {
        norms.add_from_observations(scene, windows)?;
    }
    Ok(norms)
}

/// Evaluates every window of `scene`.
///
/// Windows are predicted in parallel batches; each window's noise comes from
/// its own seeded stream, so the result matches a serial run exactly.
pub fn evaluate(ck: &Checkpoint, corpus: &Corpus, scene: &str, opts: &EvalOptions) -> Result<Evaluation> {
    let started = Instant::now();
    let windows = corpus.scene(scene)?.windows.clone();
    if windows.is_empty() {
        return Err(Error::InvalidArgument(format!("scene `{scene}` has no test windows")));
    }
    let norms = test_norms(ck, scene, &windows)?;
    let norm = *norms.get(scene);
    let samples = corpus.samples(&windows, &norms)?;
    let rasters = corpus.raster_table();
    let model = &ck.model;
    let mode = opts.sample_mode();
    let chunks = samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let refs: Vec<&Sample> = chunk.iter().collect();
            model.predict(&refs, &rasters, opts.k, mode)
        })
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<Vec<[Point; T_PRED]>> = chunks
        .into_iter()
        .flatten()
        .map(|per_window| {
            per_window
                .into_iter()
                .map(|p| p.points.map(|q| norm.denormalize(q)))
                .collect()
        })
        .collect();
    let mut per_window = Vec::with_capacity(windows.len());
    for (i, (w, preds)) in windows.iter().zip(&predictions).enumerate() {
        let (min_ade, min_fde) = best_of_k(preds, &w.gt)?;
        let cv = constant_velocity_baseline(&w.obs);
        per_window.push(WindowMetrics {
            window: i,
            poi_id: w.poi_id,
            start_frame: w.start_frame,
            min_ade,
            min_fde,
            baseline_ade: ade(&cv, &w.gt)?,
            baseline_fde: fde(&cv, &w.gt)?,
        });
    }
    let n = per_window.len() as f64;
    let mean = |f: fn(&WindowMetrics) -> f64| per_window.iter().map(f).sum::<f64>() / n;
    let report = MetricsReport {
        scene: scene.to_string(),
        k: opts.k,
        ade_m: mean(|m| m.min_ade),
        fde_m: mean(|m| m.min_fde),
        baseline_ade_m: mean(|m| m.baseline_ade),
        baseline_fde_m: mean(|m| m.baseline_fde),
        n_windows: per_window.len(),
        wall_time_s: started.elapsed().as_secs_f64(),
        windows: per_window,
    };
    Ok(Evaluation {
        report,
        windows,
        predictions,
    })
}

pub const DUMP_HEADER: &str = "scene,window,poi_id,start_frame,kind,sample,step,x,y";

/// One CSV row per point: observed (`obs`), ground truth (`gt`) and each
/// predicted sample (`pred`).
pub fn write_prediction_dump(mut w: impl Write, eval: &Evaluation) -> Result<()> {
    writeln!(w, "{DUMP_HEADER}")?;
    let scene = &eval.report.scene;
    for (i, (win, preds)) in eval.windows.iter().zip(&eval.predictions).enumerate() {
        let head = format!("{scene},{i},{},{}", win.poi_id, win.start_frame);
        for (t, p) in win.obs.iter().enumerate() {
            writeln!(w, "{head},obs,0,{t},{},{}", p[0], p[1])?;
        }
        for (t, p) in win.gt.iter().enumerate() {
            writeln!(w, "{head},gt,0,{t},{},{}", p[0], p[1])?;
        }
        for (k, pred) in preds.iter().enumerate() {
            for (t, p) in pred.iter().enumerate() {
                writeln!(w, "{head},pred,{k},{t},{},{}", p[0], p[1])?;
            }
        }
    }
    Ok(())
}
