//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgsg_core::checkpoint::Checkpoint;
use sgsg_core::dataset::NeighborIndex;
use sgsg_core::gradcheck::{check_store, GradCheckConfig, GradReport};
use sgsg_core::harness::config::TrainConfig;
use sgsg_core::harness::cost::cost_report;
use sgsg_core::harness::data::{Corpus, SceneNorms};
use sgsg_core::harness::evaluate::{evaluate, test_norms, EvalOptions};
use sgsg_core::harness::metrics::{ade, fde};
use sgsg_core::harness::train::{fit, mean_ade, TrainOptions};
use sgsg_core::model::{kld, ModelConfig, Sample, SgsgModel};
use sgsg_core::scene::{MergeMode, SceneRaster};
use sgsg_core::social_graph::StarGraphSeq;
use sgsg_core::synthetic::{annotation_text, constant_crowd, open_raster, overfit_tracks, to_scene};
use sgsg_core::tensor::{LstmParams, ParamStore, Tape, Tensor, Var};
use sgsg_core::{Error, Point, T_OBS, T_PRED};
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn report(id: usize, title: &str, outcome: &Outcome, secs: f64) {
    let line = match outcome {
        Ok(detail) => format!("criterion {id:>2} PASS  {title}: {detail} [{secs:.1}s]\n"),
        Err(detail) => format!("criterion {id:>2} FAIL  {title}: {detail} [{secs:.1}s]\n"),
    };
    // written directly so the harness does not capture it
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sgsg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgsg"))
        .args(args)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("sgsg binary runs")
}

fn sgsg_ok(args: &[&str]) -> Result<Output, String> {
    let out = sgsg(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`sgsg {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

// ---------------------------------------------------------------- criterion 1

const REL_TOL: f64 = 1e-4;

fn grad_cfg(max_entries: usize) -> GradCheckConfig {
    GradCheckConfig {
        rel_tol: REL_TOL,
        max_entries,
        ..GradCheckConfig::default()
    }
}

fn randn_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-2.0..2.0);
            if v.abs() > 0.05 && (v.abs() - 1.0).abs() > 0.05 {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type PrimOp = fn(&mut Tape<f64>, &[Var]) -> Var;

/// Treats the op's inputs as parameters so the store-level oracle applies.
fn check_primitive(shapes: &[&[usize]], op: PrimOp, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.insert(format!("in{i}"), randn_tensor(&mut rng, s)).unwrap())
        .collect();
    let loss_of = |s: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
        let out = op(&mut tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        let w = tape.leaf(randn_tensor(&mut ChaCha8Rng::seed_from_u64(77), &shape));
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod);
        (tape, loss)
    };
    let (tape, loss) = loss_of(&store);
    tape.backward(loss, &mut store).unwrap();
    check_store(&store, &grad_cfg(usize::MAX), |s| {
        let (tape, loss) = loss_of(s);
        tape.value(loss).item()
    })
}

fn toy_samples() -> Vec<Sample> {
    let a: [Point; T_OBS] = std::array::from_fn(|t| [-0.5 + 0.07 * t as f64, 0.1 - 0.03 * t as f64]);
    let b: [Point; T_OBS] = std::array::from_fn(|t| [0.4 - 0.05 * t as f64, -0.2 + 0.06 * t as f64]);
    let make = |id: usize, obs: [Point; T_OBS], other: [Point; T_OBS]| Sample {
        window_id: id,
        obs,
        gt: std::array::from_fn(|k| [obs[T_OBS - 1][0] + 0.05 * k as f64, obs[T_OBS - 1][1] - 0.02 * k as f64]),
        graph: StarGraphSeq {
            poi_id: id as i64,
            poi: obs,
            neighbors: (0..T_OBS).map(|t| vec![(1 - id as i64, other[t])]).collect(),
        },
        raster: 0,
    };
    vec![make(0, a, b), make(1, b, a)]
}

fn toy_raster() -> SceneRaster {
    let mut labels = vec![0u8; 256];
    labels[17] = 1;
    labels[100] = 2;
    labels[101] = 1;
    SceneRaster::from_labels(3, 16, 16, &labels, 1.0, [-8.0, -8.0]).unwrap()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let prims: Vec<(&str, Vec<&[usize]>, PrimOp)> = vec![
        ("affine", vec![&[3, 4], &[5, 4], &[5]], |t, v| {
            t.affine(v[0], v[1], Some(v[2])).unwrap()
        }),
        ("add", vec![&[2, 5], &[2, 5]], |t, v| t.add(v[0], v[1]).unwrap()),
        ("sub", vec![&[2, 5], &[2, 5]], |t, v| t.sub(v[0], v[1]).unwrap()),
        ("mul", vec![&[2, 5], &[2, 5]], |t, v| t.mul(v[0], v[1]).unwrap()),
        ("scale", vec![&[2, 5]], |t, v| t.scale(v[0], 0.7)),
        ("add_scalar", vec![&[2, 5]], |t, v| t.add_scalar(v[0], -0.4)),
        ("relu", vec![&[2, 5]], |t, v| t.relu(v[0])),
        ("sigmoid", vec![&[2, 5]], |t, v| t.sigmoid(v[0])),
        ("tanh", vec![&[2, 5]], |t, v| t.tanh(v[0])),
        ("exp", vec![&[2, 5]], |t, v| t.exp(v[0])),
        ("clamp", vec![&[2, 5]], |t, v| t.clamp(v[0], -1.0, 1.0)),
        ("concat", vec![&[2, 3], &[2, 2]], |t, v| {
            t.concat(&[v[0], v[1]]).unwrap()
        }),
        ("slice", vec![&[2, 6]], |t, v| t.slice(v[0], 2, 3).unwrap()),
        ("sum", vec![&[2, 6]], |t, v| t.sum(v[0])),
        ("gather_rows", vec![&[3, 2]], |t, v| {
            t.gather_rows(v[0], &[2, 2, 0]).unwrap()
        }),
        ("reshape", vec![&[2, 6]], |t, v| t.reshape(v[0], &[3, 4]).unwrap()),
        ("conv2d", vec![&[1, 2, 5, 5], &[3, 2, 3, 3], &[3]], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap()
        }),
        ("avg_pool", vec![&[1, 2, 4, 4]], |t, v| t.avg_pool(v[0], 2).unwrap()),
        (
            "lstm_cell",
            vec![&[2, 3], &[2, 4], &[2, 4], &[16, 3], &[16, 4], &[16]],
            |t, v| {
                let p = LstmParams {
                    w_ih: v[3],
                    w_hh: v[4],
                    b: v[5],
                };
                let (h, c) = t.lstm_cell(v[0], v[1], v[2], &p).unwrap();
                t.concat(&[h, c]).unwrap()
            },
        ),
    ];
    let (mut worst, mut worst_abs, mut floored) = (0.0f64, 0.0f64, 0);
    let mut checked = 0;
    for (i, (name, shapes, op)) in prims.iter().enumerate() {
        let r = check_primitive(shapes, *op, i as u64);
        ensure(r.passed(), || format!("{name}: {:?}", r.failures.first()))?;
        worst = worst.max(r.max_rel_error);
        worst_abs = worst_abs.max(r.max_abs_error);
        floored += r.floor_passes;
        checked += r.checked;
    }

    let samples = toy_samples();
    let refs: Vec<&Sample> = samples.iter().collect();
    let raster = toy_raster();
    let config = ModelConfig {
        raster_size: 16,
        merge: MergeMode::Gating,
        ..ModelConfig::default()
    };
    let mut model = SgsgModel::<f64>::new(config, 3).unwrap();
    let eps = Tensor::new(vec![2, 8], (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let loss_of = |m: &SgsgModel<f64>| {
        let mut tape = Tape::new();
        let l = m
            .batch_loss(&mut tape, &refs, &[&raster], Some(eps.clone()), 1.0, false)
            .unwrap();
        (tape, l)
    };
    let (tape, loss) = loss_of(&model);
    tape.backward(loss, &mut model.params).unwrap();
    let mut probe = model.clone();
    let r = check_store(&model.params, &grad_cfg(40), |store| {
        probe.params = store.clone();
        let (tape, l) = loss_of(&probe);
        tape.value(l).item()
    });
    ensure(r.passed(), || {
        format!(
            "full model: {} failures, first {:?}",
            r.failures.len(),
            r.failures.first()
        )
    })?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} primitives ({checked} entries, max rel {worst:.1e}, max abs {worst_abs:.1e}, {floored} floor-only); \
         full model ({} entries, max rel {:.1e}, max abs {:.1e}, {} floor-only)",
        prims.len(),
        r.checked,
        r.max_rel_error,
        r.max_abs_error,
        r.floor_passes
    ))
}

// ---------------------------------------------------------------- criterion 2

fn brute_ade(a: &[Point], b: &[Point]) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        let dx = a[i][0] - b[i][0];
        let dy = a[i][1] - b[i][1];
        total += (dx * dx + dy * dy).sqrt();
    }
    total / a.len() as f64
}

fn brute_fde(a: &[Point], b: &[Point]) -> f64 {
    let (x, y) = (a[a.len() - 1], b[b.len() - 1]);
    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=T_PRED * 2);
        let mut traj = || -> Vec<Point> {
            (0..n)
                .map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)])
                .collect()
        };
        let (a, b) = (traj(), traj());
        worst = worst
            .max((ade(&a, &b).unwrap() - brute_ade(&a, &b)).abs())
            .max((fde(&a, &b).unwrap() - brute_fde(&a, &b)).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    let gt = [[1.0, -2.0]; T_PRED];
    let shifted = gt.map(|q| [q[0] + 0.3, q[1] + 0.4]);
    let zero = [[0.0, 0.0]; T_PRED];
    let offset = zero.map(|q| [q[0] + 0.3, q[1] + 0.4]);
    let (a0, f0) = (ade(&offset, &zero).unwrap(), fde(&offset, &zero).unwrap());
    ensure(a0 == 0.5 && f0 == 0.5, || format!("offset fixture gave {a0}/{f0}"))?;
    let shifted_err = (ade(&shifted, &gt).unwrap() - 0.5).abs();
    ensure(shifted_err < 1e-12, || {
        format!("shifted fixture off by {shifted_err:e}")
    })?;
    Ok(format!(
        "max deviation {worst:.1e} over 1000 pairs; offset fixture {a0}/{f0}"
    ))
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let zero = kld(&[0.0; 8], &[0.0; 8]);
    ensure(zero == 0.0, || format!("kld(0,0) = {zero}"))?;
    let ones = kld(&[1.0; 8], &[0.0; 8]);
    ensure((ones - 4.0).abs() <= 1e-6, || format!("kld(1,0) = {ones}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut min = f64::INFINITY;
    for _ in 0..100_000 {
        let scale: f64 = rng.random_range(0.0..1.0f64).powi(4);
        let mu: [f64; 8] = std::array::from_fn(|_| rng.random_range(-5.0..5.0) * scale);
        let gamma: [f64; 8] = std::array::from_fn(|_| rng.random_range(-10.0..10.0) * scale);
        min = min.min(kld(&mu, &gamma));
    }
    ensure(min >= 0.0, || format!("negative KLD {min}"))?;
    let mut tape = Tape::<f64>::new();
    let mu_t = Tensor::new(vec![3, 8], (0..24).map(|i| (i as f64 * 0.71).cos() * 3.0).collect()).unwrap();
    let mu = tape.leaf(mu_t.clone());
    let gamma = tape.leaf(Tensor::new(vec![3, 8], (0..24).map(|i| i as f64 * 0.3 - 4.0).collect()).unwrap());
    let z = SgsgModel::<f64>::sample_latent(&mut tape, mu, gamma, Tensor::zeros(&[3, 8])).unwrap();
    ensure(tape.value(z) == &mu_t, || "z != mu at eps = 0".into())?;
    Ok(format!(
        "kld(0,0)=0, kld(1,0)={ones}, min over 1e5 draws {min:.2e}, z(eps=0)=mu"
    ))
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4(dir: &Path) -> Outcome {
    let mut details = Vec::new();
    for n in [3usize, 10, 50] {
        let parsed = to_scene(&constant_crowd(n, 40, n as u64)).map_err(|e| e.to_string())?;
        let mut index = NeighborIndex::new();
        index.insert_scene("crowd", &parsed);
        let r = cost_report(&index, &["crowd"], Vec::new());
        let s = &r.scenes[0];
        ensure(s.star_messages < s.complete_messages, || {
            format!("N={n}: star not cheaper")
        })?;
        let expected = 2.0 / n as f64;
        let dev = (s.ratio() - expected).abs() / expected;
        ensure(dev <= 0.05, || format!("N={n}: ratio {} vs {expected}", s.ratio()))?;
        details.push(format!("N={n} ratio {:.4}", s.ratio()));
    }
    let ann = dir.join("crowd5.txt");
    fs::write(&ann, annotation_text(&constant_crowd(5, 6, 5))).map_err(|e| e.to_string())?;
    let csv = dir.join("crowd5_stats.csv");
    sgsg_ok(&["graph-stats", "--annotations", p(&ann), "--out", p(&csv)])?;
    let text = fs::read_to_string(&csv).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    ensure(
        lines.next() == Some("scene,timestep,N,star_edges,complete_edges"),
        || "bad header".into(),
    )?;
    let rows: Vec<&str> = lines.collect();
    ensure(!rows.is_empty(), || "no rows".into())?;
    for row in &rows {
        ensure(row.starts_with("crowd5,") && row.ends_with(",5,4,10"), || {
            format!("row `{row}`")
        })?;
    }
    details.push(format!("N=5 CSV {} rows of 4 vs 10", rows.len()));
    Ok(details.join(", "))
}

// ---------------------------------------------------------------- criterion 5

/// Overfitting uses a larger step and a lighter KLD weight than the defaults;
/// see the project notes.
const OVERFIT_LR: f64 = 5e-3;
const OVERFIT_KLD: f64 = 0.1;

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let parsed = to_scene(&overfit_tracks(0)).map_err(|e| e.to_string())?;
    let raster = open_raster(16.0, 32).map_err(|e| e.to_string())?;
    let corpus = Corpus::from_scenes(vec![("FIT".into(), parsed, raster)]).map_err(|e| e.to_string())?;
    let windows = corpus.scene("FIT").unwrap().windows.clone();
    ensure(windows.len() == 32, || format!("{} windows", windows.len()))?;
    let norms = SceneNorms::fit(Default::default(), &windows).map_err(|e| e.to_string())?;
    let samples = corpus.samples(&windows, &norms).map_err(|e| e.to_string())?;
    let rasters = corpus.raster_table();
    let config = ModelConfig {
        raster_size: 32,
        ..ModelConfig::default()
    };
    let mut model = SgsgModel::<f32>::new(config, 0).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        lr: OVERFIT_LR,
        batch_size: 16,
        epochs: 500,
        seed: 0,
        kld_weight: OVERFIT_KLD,
        teacher_forcing: false,
        patience: 0,
    };
    let rep = fit(&mut model, &samples, &[], &[], &rasters, &opts).map_err(|e| e.to_string())?;
    let a = mean_ade(&model, &samples, &rasters, None).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    ensure(a < 0.02, || {
        format!("train ADE {a:.4} normalised after {} steps", rep.steps)
    })?;
    ensure(secs < 600.0, || format!("took {secs:.0}s"))?;
    Ok(format!("train ADE {a:.4} normalised after {} Adam steps", rep.steps))
}

// ---------------------------------------------------------------- criteria 6-10

struct Bench {
    dir: PathBuf,
    full_cfg: PathBuf,
    small_cfg: PathBuf,
}

const SCENES: &str = "scene.ETH = ETH.txt ETH.rast
scene.HOTEL = HOTEL.txt HOTEL.rast
scene.UNIV = UNIV.txt UNIV.rast
scene.ZARA1 = ZARA1.txt ZARA1.rast
scene.ZARA2 = ZARA2.txt ZARA2.rast
";

fn bench(root: &Path) -> Result<Bench, String> {
    let dir = root.join("bench");
    sgsg_ok(&[
        "synthesize",
        "--out-dir",
        p(&dir),
        "--seed",
        "0",
        "--steps",
        "600",
        "--raster-size",
        "32",
    ])?;
    let full_cfg = dir.join("reduced.cfg");
    let small_cfg = dir.join("small.cfg");
    let write = |path: &Path, body: &str| fs::write(path, format!("{body}{SCENES}")).map_err(|e| e.to_string());
    write(
        &full_cfg,
        "seed = 0\nheld_out = ZARA1\nepochs = 50\nbatch_size = 64\nmax_train_windows = 2000\naugment_rotations = 0\n",
    )?;
    write(
        &small_cfg,
        "seed = 3\nheld_out = ZARA1\nepochs = 2\nbatch_size = 32\nmax_train_windows = 150\naugment_rotations = 0\n",
    )?;
    Ok(Bench {
        dir,
        full_cfg,
        small_cfg,
    })
}

fn metrics_row(path: &Path) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let row = text.lines().nth(1).ok_or("metrics CSV has no rows")?;
    row.split(',')
        .skip(1)
        .map(|v| v.parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

fn criterion_6(b: &Bench) -> Outcome {
    let ckpt = b.dir.join("reduced.ckpt");
    let log = b.dir.join("reduced_log.csv");
    let metrics = b.dir.join("reduced_k1.csv");
    sgsg_ok(&[
        "train",
        "--config",
        p(&b.full_cfg),
        "--held-out",
        "ZARA1",
        "--out",
        p(&ckpt),
        "--log",
        p(&log),
    ])?;
    sgsg_ok(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--config",
        p(&b.full_cfg),
        "--k",
        "1",
        "--out",
        p(&metrics),
    ])?;
    let row = metrics_row(&metrics)?;
    let (model_ade, cv_ade) = (row[1], row[3]);
    let ratio = model_ade / cv_ade;
    ensure(ratio <= 1.10, || {
        format!("ADE {model_ade:.3} m vs constant velocity {cv_ade:.3} m (x{ratio:.3})")
    })?;
    Ok(format!(
        "ZARA1 held out: ADE {model_ade:.3} m vs constant velocity {cv_ade:.3} m (x{ratio:.3}) over {} windows",
        row[5]
    ))
}

fn criterion_7(b: &Bench) -> Outcome {
    let ck = Checkpoint::load(b.dir.join("reduced.ckpt")).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::load(&b.full_cfg).map_err(|e| e.to_string())?;
    let corpus = Corpus::load(&cfg).map_err(|e| e.to_string())?;
    let one = EvalOptions {
        stochastic: true,
        ..EvalOptions::new(1, 11)
    };
    let twenty = EvalOptions::new(20, 11);
    let e1 = evaluate(&ck, &corpus, "ZARA1", &one).map_err(|e| e.to_string())?;
    let e20 = evaluate(&ck, &corpus, "ZARA1", &twenty).map_err(|e| e.to_string())?;

    let windows = &e1.windows;
    let norms = test_norms(&ck, "ZARA1", windows).map_err(|e| e.to_string())?;
    let samples = corpus.samples(windows, &norms).map_err(|e| e.to_string())?;
    let rasters = corpus.raster_table();
    let mut open = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let enc = ck.model.encode(&mut tape, &refs, &rasters).map_err(|e| e.to_string())?;
        let gamma = tape.value(enc.gamma.ok_or("model has no latent")?);
        for r in 0..chunk.len() {
            open.push(gamma.row(r).iter().any(|&g| (0.5 * f64::from(g)).exp() > 1e-2));
        }
    }

    let mut violations = 0;
    let (mut improved, mut eligible) = (0, 0);
    for ((w1, w20), &is_open) in e1.report.windows.iter().zip(&e20.report.windows).zip(&open) {
        if w20.min_ade > w1.min_ade {
            violations += 1;
        }
        if is_open {
            eligible += 1;
            if w20.min_ade < w1.min_ade {
                improved += 1;
            }
        }
    }
    ensure(violations == 0, || {
        format!("{violations} windows where K=20 is worse than K=1")
    })?;
    ensure(eligible > 0, || "every window has a collapsed latent".into())?;
    let share = improved as f64 / eligible as f64;
    ensure(share >= 0.3, || {
        format!("strictly better on {:.1}% of {eligible} windows", 100.0 * share)
    })?;
    Ok(format!(
        "K=20 <= K=1 on all {} windows, strictly better on {:.1}% of {eligible} non-collapsed; minADE {:.3} -> {:.3} m",
        e1.report.n_windows,
        100.0 * share,
        e1.report.ade_m,
        e20.report.ade_m
    ))
}

fn criterion_8(b: &Bench) -> Outcome {
    let mut trained = Vec::new();
    for variant in ["v1", "v2", "v3", "v4", "v5", "alpha", "beta"] {
        let ckpt = b.dir.join(format!("{variant}.ckpt"));
        let log = b.dir.join(format!("{variant}_log.csv"));
        let metrics = b.dir.join(format!("{variant}.csv"));
        sgsg_ok(&[
            "train",
            "--config",
            p(&b.small_cfg),
            "--held-out",
            "ZARA1",
            "--variant",
            variant,
            "--epochs",
            "1",
            "--out",
            p(&ckpt),
            "--log",
            p(&log),
        ])?;
        let want = ModelConfig::variant(variant).map_err(|e| e.to_string())?;
        let k = if want.use_vae { "20" } else { "1" };
        sgsg_ok(&[
            "evaluate",
            "--checkpoint",
            p(&ckpt),
            "--config",
            p(&b.small_cfg),
            "--k",
            k,
            "--out",
            p(&metrics),
        ])?;
        let row = metrics_row(&metrics)?;
        ensure(row[1].is_finite(), || format!("{variant}: ADE {}", row[1]))?;
        let ck = Checkpoint::load(&ckpt).map_err(|e| e.to_string())?;
        let got = ck.model.config;
        ensure(
            (got.use_sg, got.use_scene, got.use_vae, got.merge)
                == (want.use_sg, want.use_scene, want.use_vae, want.merge),
            || format!("{variant}: checkpoint config {got:?}"),
        )?;
        trained.push(variant);
    }
    let flags = b.dir.join("flags.ckpt");
    sgsg_ok(&[
        "train",
        "--config",
        p(&b.small_cfg),
        "--held-out",
        "ZARA1",
        "--epochs",
        "1",
        "--no-scene",
        "--no-vae",
        "--merge",
        "add",
        "--gcn-self-loop",
        "--out",
        p(&flags),
        "--log",
        p(&b.dir.join("flags_log.csv")),
    ])?;
    let got = Checkpoint::load(&flags).map_err(|e| e.to_string())?.model.config;
    ensure(
        !got.use_scene && !got.use_vae && got.use_sg && got.gcn_self_loop && got.merge == MergeMode::Add,
        || format!("flags gave {got:?}"),
    )?;

    let samples = toy_samples();
    let refs: Vec<&Sample> = samples.iter().collect();
    let raster = toy_raster();
    for (name, config, want_social) in [
        (
            "no scene",
            ModelConfig {
                use_scene: false,
                raster_size: 16,
                ..ModelConfig::default()
            },
            true,
        ),
        (
            "no SG",
            ModelConfig {
                use_sg: false,
                raster_size: 16,
                ..ModelConfig::default()
            },
            false,
        ),
    ] {
        let model = SgsgModel::<f32>::new(config, 8).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let enc = model.encode(&mut tape, &refs, &[&raster]).map_err(|e| e.to_string())?;
        let source = if want_social { enc.social } else { enc.scene }.ok_or("missing branch")?;
        let (g, s) = (tape.value(enc.merged).data(), tape.value(source).data());
        let same = g.len() == s.len() && g.iter().zip(s).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || {
            format!("{name}: merged feature differs from the remaining branch")
        })?;
    }
    Ok(format!(
        "{} trained and evaluated via flags; G == g / G == s bitwise",
        trained.join(", ")
    ))
}

fn criterion_9(b: &Bench) -> Outcome {
    let mut outputs = Vec::new();
    for run in 0..2 {
        let ckpt = b.dir.join(format!("det{run}.ckpt"));
        let metrics = b.dir.join(format!("det{run}.csv"));
        sgsg_ok(&[
            "train",
            "--config",
            p(&b.small_cfg),
            "--held-out",
            "ZARA1",
            "--seed",
            "7",
            "--out",
            p(&ckpt),
            "--log",
            p(&b.dir.join(format!("det{run}_log.csv"))),
        ])?;
        sgsg_ok(&[
            "evaluate",
            "--checkpoint",
            p(&ckpt),
            "--config",
            p(&b.small_cfg),
            "--k",
            "20",
            "--seed",
            "5",
            "--out",
            p(&metrics),
        ])?;
        outputs.push((
            fs::read(&ckpt).map_err(|e| e.to_string())?,
            fs::read(&metrics).map_err(|e| e.to_string())?,
        ));
    }
    ensure(outputs[0].0 == outputs[1].0, || "checkpoints differ".into())?;
    ensure(outputs[0].1 == outputs[1].1, || "metric CSVs differ".into())?;
    Ok(format!(
        "checkpoints ({} bytes) and K=20 metric CSVs identical across runs",
        outputs[0].0.len()
    ))
}

fn criterion_10(b: &Bench) -> Outcome {
    let first = b.dir.join("reduced.ckpt");
    let second = b.dir.join("resaved.ckpt");
    let ck = Checkpoint::load(&first).map_err(|e| e.to_string())?;
    ck.save(&second).map_err(|e| e.to_string())?;
    let (a, c) = (fs::read(&first).unwrap(), fs::read(&second).unwrap());
    ensure(a == c, || "re-saved checkpoint differs".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut cuts: Vec<usize> = (0..256.min(a.len())).collect();
    cuts.extend((0..300).map(|_| rng.random_range(0..a.len())));
    cuts.push(a.len() - 1);
    for &cut in &cuts {
        match Checkpoint::from_bytes(&a[..cut]) {
            Err(Error::Format(_)) => {}
            Err(other) => return Err(format!("truncation at {cut}: unexpected error {other}")),
            Ok(_) => return Err(format!("truncation at {cut} loaded")),
        }
    }
    let truncated = b.dir.join("truncated.ckpt");
    fs::write(&truncated, &a[..a.len() / 2]).unwrap();
    let out = sgsg(&["evaluate", "--checkpoint", p(&truncated), "--config", p(&b.small_cfg)]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    ensure(out.status.code() == Some(1) && stderr.contains("error:"), || {
        format!("CLI on truncated checkpoint: {:?} {stderr}", out.status.code())
    })?;
    Ok(format!(
        "{} bytes roundtrip identically; {} truncations rejected as format errors",
        a.len(),
        cuts.len()
    ))
}

#[test]
fn acceptance_criteria() {
    let tmp = TempDir::new().unwrap();
    let mut failed = Vec::new();
    let mut run = |id: usize, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let outcome = f();
        report(id, title, &outcome, started.elapsed().as_secs_f64());
        if outcome.is_err() {
            failed.push(id);
        }
    };
    run(1, "gradient suite", &mut criterion_1);
    run(2, "metric oracle", &mut criterion_2);
    run(3, "closed-form VAE checks", &mut criterion_3);
    run(4, "star-graph message counts", &mut || criterion_4(tmp.path()));
    run(5, "overfit capacity", &mut criterion_5);
    match bench(tmp.path()) {
        Ok(b) => {
            run(6, "learning sanity vs constant velocity", &mut || criterion_6(&b));
            run(7, "multimodality", &mut || criterion_7(&b));
            run(8, "ablation wiring", &mut || criterion_8(&b));
            run(9, "determinism", &mut || criterion_9(&b));
            run(10, "checkpoint roundtrip", &mut || criterion_10(&b));
        }
        Err(e) => {
            for (id, title) in [
                (6, "learning sanity"),
                (7, "multimodality"),
                (8, "ablation"),
                (9, "determinism"),
                (10, "checkpoint"),
            ] {
                run(id, title, &mut || Err(format!("benchmark setup failed: {e}")));
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
