//! Displacement metrics and the constant-velocity reference.

use crate::error::{Error, Result};
use crate::{Point, T_OBS, T_PRED};

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_lengths(pred: &[Point], gt: &[Point]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "trajectory lengths differ or are empty: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Average displacement error: mean Euclidean distance over all steps.
pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_lengths(pred, gt)?;
    let total: f64 = pred.iter().zip(gt).map(|(p, g)| dist(*p, *g)).sum();
    Ok(total / pred.len() as f64)
}

/// Final displacement error: distance at the last step.
pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(dist(pred[pred.len() - 1], gt[gt.len() - 1]))
}

/// `(minADE, minFDE)` over the samples, each minimised independently.
pub fn best_of_k<P: AsRef<[Point]>>(preds: &[P], gt: &[Point]) -> Result<(f64, f64)> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("best-of-K needs at least one prediction".into()));
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for p in preds {
        let p = p.as_ref();
        let a = ade(p, gt)?;
        let f = fde(p, gt)?;
        if a < best.0 {
            best.0 = a;
        }
        if f < best.1 {
            best.1 = f;
        }
    }
    Ok(best)
}

/// Extrapolates the last observed step for the whole prediction period.
pub fn constant_velocity_baseline(obs: &[Point; T_OBS]) -> [Point; T_PRED] {
    let last = obs[T_OBS - 1];
    let v = [last[0] - obs[T_OBS - 2][0], last[1] - obs[T_OBS - 2][1]];
    let mut out = [[0.0; 2]; T_PRED];
    for (k, p) in out.iter_mut().enumerate() {
        let s = (k + 1) as f64;
        *p = [last[0] + s * v[0], last[1] + s * v[1]];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::rotate90;

    #[test]
    fn offset_fixture() {
        let gt = [[0.0, 0.0]; T_PRED];
        let pred = gt.map(|p| [p[0] + 0.3, p[1] + 0.4]);
        assert_eq!(ade(&pred, &gt).unwrap(), 0.5);
        assert_eq!(fde(&pred, &gt).unwrap(), 0.5);
        assert_eq!(ade(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn final_step_error() {
        let gt = [[0.0, 0.0]; T_PRED];
        let mut pred = gt;
        pred[T_PRED - 1] = [1.2, 0.0];
        assert!((ade(&pred, &gt).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(fde(&pred, &gt).unwrap(), 1.2);
    }

    #[test]
    fn length_mismatch_and_empty_set() {
        assert!(ade(&[[0.0; 2]; 3], &[[0.0; 2]; 4]).is_err());
        assert!(fde(&[], &[]).is_err());
        let empty: Vec<[Point; T_PRED]> = Vec::new();
        assert!(best_of_k(&empty, &[[0.0; 2]; T_PRED]).is_err());
    }

    #[test]
    fn best_of_k_minimises_independently() {
        let gt = [[0.0, 0.0]; T_PRED];
        let mut a = [[0.1, 0.0]; T_PRED];
        a[T_PRED - 1] = [2.0, 0.0];
        let b = [[0.5, 0.0]; T_PRED];
        let (ma, mf) = best_of_k(&[a, b], &gt).unwrap();
        assert_eq!(ma, ade(&a, &gt).unwrap());
        assert_eq!(mf, 0.5);
        let (one_a, one_f) = best_of_k(&[b], &gt).unwrap();
        assert_eq!((one_a, one_f), (0.5, 0.5));
        assert_eq!(best_of_k(&[b, gt], &gt).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn baseline_examples() {
        let mut obs = [[0.0; 2]; T_OBS];
        for (t, o) in obs.iter_mut().enumerate() {
            *o = [t as f64 - 7.0, 0.0];
        }
        let pred = constant_velocity_baseline(&obs);
        for (k, p) in pred.iter().enumerate() {
            assert_eq!(*p, [(k + 1) as f64, 0.0]);
        }
        let still = constant_velocity_baseline(&[[2.5, -1.0]; T_OBS]);
        assert!(still.iter().all(|p| *p == [2.5, -1.0]));
    }

    #[test]
    fn baseline_is_rotation_equivariant() {
        let obs: [Point; T_OBS] = std::array::from_fn(|t| [0.3 * t as f64 + 1.0, 0.1 * (t * t) as f64]);
        let rotated_first = constant_velocity_baseline(&obs.map(rotate90));
        let rotated_after = constant_velocity_baseline(&obs).map(rotate90);
        assert_eq!(rotated_first, rotated_after);
    }
}
