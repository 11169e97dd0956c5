//! Central finite-difference oracle for verifying reverse-mode gradients.
//!
//! The oracle only ever calls a forward evaluation, so it stays independent of
//! the tape's backward rules.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed `|a - n| / max(|a|, |n|)`.
    pub rel_tol: f64,
    /// Absolute differences below this pass regardless (vanishing gradients).
    pub abs_floor: f64,
    /// Entries checked individually per tensor; larger tensors are sampled and
    /// additionally checked along one random direction covering every entry.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-8,
            max_entries: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub name: String,
    /// Flat index, or `None` for a directional check.
    pub index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Largest relative error, excluding entries accepted by the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Entries above the relative tolerance accepted only by the absolute floor.
    pub floor_passes: usize,
    pub failures: Vec<Mismatch>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for a plain vector function.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] = x[i] + h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

fn record(report: &mut GradReport, cfg: &GradCheckConfig, m: Mismatch) {
    report.checked += 1;
    let diff = (m.analytic - m.numeric).abs();
    report.max_abs_error = report.max_abs_error.max(diff);
    if m.rel_error < cfg.rel_tol {
        report.max_rel_error = report.max_rel_error.max(m.rel_error);
    } else if diff <= cfg.abs_floor {
        report.floor_passes += 1;
    } else {
        report.max_rel_error = report.max_rel_error.max(m.rel_error);
        report.failures.push(m);
    }
}

/// Compares the gradients held in `store` against central differences of `loss`.
pub fn check_store(
    store: &ParamStore<f64>,
    cfg: &GradCheckConfig,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
) -> GradReport {
    let mut report = GradReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let base = store.value(id).clone();
        let grad = store.grad(id).clone();
        let n = base.len();
        let indices: Vec<usize> = if n <= cfg.max_entries {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, cfg.max_entries).into_vec();
            v.sort_unstable();
            v
        };
        for i in indices {
            let numeric = perturbed_slope(&mut probe, id, &base, cfg.step, &mut loss, |d| {
                d[i] = 1.0;
            });
            let analytic = grad.data()[i];
            record(
                &mut report,
                cfg,
                Mismatch {
                    name: name.clone(),
                    index: Some(i),
                    analytic,
                    numeric,
                    rel_error: relative_error(analytic, numeric),
                },
            );
        }
        if n > cfg.max_entries {
            let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let analytic: f64 = dir.iter().zip(grad.data()).map(|(d, g)| d * g).sum();
            let numeric = perturbed_slope(&mut probe, id, &base, cfg.step, &mut loss, |d| {
                d.copy_from_slice(&dir);
            });
            record(
                &mut report,
                cfg,
                Mismatch {
                    name: name.clone(),
                    index: None,
                    analytic,
                    numeric,
                    rel_error: relative_error(analytic, numeric),
                },
            );
        }
        probe.set_value(id, base).expect("same shape");
    }
    report
}

fn perturbed_slope(
    probe: &mut ParamStore<f64>,
    id: ParamId,
    base: &Tensor<f64>,
    h: f64,
    loss: &mut impl FnMut(&ParamStore<f64>) -> f64,
    fill_direction: impl FnOnce(&mut [f64]),
) -> f64 {
    let mut dir = vec![0.0; base.len()];
    fill_direction(&mut dir);
    let shifted = |sign: f64| {
        let data = base.data().iter().zip(&dir).map(|(b, d)| b + sign * h * d).collect();
        Tensor::new(base.shape().to_vec(), data).expect("same shape")
    };
    probe.set_value(id, shifted(1.0)).expect("same shape");
    let fp = loss(probe);
    probe.set_value(id, shifted(-1.0)).expect("same shape");
    let fm = loss(probe);
    (fp - fm) / (2.0 * h)
}
