//! The SGSG network: trajectory encoder, social graph encoder, scene encoder,
//! merge, VAE and recurrent decoder, plus the training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scene::{Merge, MergeMode, SceneEncoder, SceneRaster, DEFAULT_CLASSES, DEFAULT_RASTER_SIZE};
use crate::social_graph::{SocialEncoder, StarGraphSeq};
use crate::tensor::{Linear, LstmCell, ParamStore, Real, Tape, Tensor, Var};
use crate::{Point, DEC_HIDDEN, EMBED_DIM, ENC_HIDDEN, LATENT_DIM, T_OBS, T_PRED};

const _: () = assert!(
    2 * ENC_HIDDEN == DEC_HIDDEN,
    "decoder state is the social ++ history feature"
);

/// Bound applied to the log-variance before exponentiation.
pub const GAMMA_CLAMP: f64 = 10.0;

/// Architecture switches; the defaults give the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub use_sg: bool,
    pub use_scene: bool,
    pub use_vae: bool,
    pub merge: MergeMode,
    pub gcn_self_loop: bool,
    /// Share the location embedding between encoder and decoder.
    pub tie_embedding: bool,
    pub raster_channels: usize,
    pub raster_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            use_sg: true,
            use_scene: true,
            use_vae: true,
            merge: MergeMode::Gating,
            gcn_self_loop: false,
            tie_embedding: true,
            raster_channels: DEFAULT_CLASSES,
            raster_size: DEFAULT_RASTER_SIZE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.use_sg && !self.use_scene {
            return Err(Error::Config(
                "at least one of the social graph and scene encoders must be enabled".into(),
            ));
        }
        Ok(())
    }

    /// Ablation presets: `v1`..`v5`, `alpha`, `beta` and `sgsg`.
    pub fn variant(name: &str) -> Result<Self> {
        let base = Self::default();
        let (use_sg, use_vae, use_scene, merge) = match name {
            "v1" => (true, false, false, MergeMode::Gating),
            "v2" => (false, false, true, MergeMode::Gating),
            "v3" => (false, true, true, MergeMode::Gating),
            "v4" => (true, true, false, MergeMode::Gating),
            "v5" => (true, false, true, MergeMode::Gating),
            "alpha" => (true, true, true, MergeMode::Add),
            "beta" => (true, true, true, MergeMode::Concat),
            "sgsg" => (true, true, true, MergeMode::Gating),
            other => return Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        };
        Ok(Self {
            use_sg,
            use_vae,
            use_scene,
            merge,
            ..base
        })
    }
}

/// One model input, in normalised coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Position of the window in its dataset; seeds per-window sampling.
    pub window_id: usize,
    pub obs: [Point; T_OBS],
    pub gt: [Point; T_PRED],
    pub graph: StarGraphSeq,
    /// Index into the raster list passed alongside the samples.
    pub raster: usize,
}

/// Encoder outputs for a batch, one row per sample.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// Trajectory history feature `h`.
    pub history: Var,
    /// Social feature `g`.
    pub social: Option<Var>,
    /// Scene logits `s`.
    pub scene: Option<Var>,
    /// Merged feature `G`.
    pub merged: Var,
    pub mu: Option<Var>,
    /// Log-variance after clamping.
    pub gamma: Option<Var>,
    pub rows: usize,
}

/// How latent draws are made at prediction time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// `z = mu`; only meaningful for a single sample.
    Deterministic,
    /// `z = mu + sigma * eps` with seeded `eps`.
    Posterior { seed: u64 },
    /// `z = eps`.
    Prior { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictedTrajectory {
    pub sample: usize,
    pub points: [Point; T_PRED],
}

#[derive(Clone, Debug)]
pub struct SgsgModel<F> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    pub embed: Linear,
    pub dec_embed: Linear,
    pub encoder: LstmCell,
    pub social: Option<SocialEncoder>,
    pub scene: Option<SceneEncoder>,
    pub merge: Option<Merge>,
    pub vae_enc: Option<Linear>,
    pub vae_dec: Option<Linear>,
    pub decoder: LstmCell,
    pub output: Linear,
}

/// Location embedding `phi`: affine map to 32 dims followed by ReLU.
fn embed<F: Real>(tape: &mut Tape<F>, store: &ParamStore<F>, layer: &Linear, x: Var) -> Result<Var> {
    let e = layer.forward(tape, store, x)?;
    Ok(tape.relu(e))
}

fn points_tensor<F: Real>(pts: impl Iterator<Item = Point>) -> Result<Tensor<F>> {
    let data: Vec<F> = pts.flat_map(|p| p.map(F::lit)).collect();
    Tensor::new(vec![data.len() / 2, 2], data)
}

impl<F: Real> SgsgModel<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embed = Linear::new(&mut params, "emb", 2, EMBED_DIM, &mut rng)?;
        let encoder = LstmCell::new(&mut params, "enc.lstm", EMBED_DIM, ENC_HIDDEN, &mut rng)?;
        let social = config
            .use_sg
            .then(|| SocialEncoder::new(&mut params, config.gcn_self_loop, &mut rng))
            .transpose()?;
        let scene = config
            .use_scene
            .then(|| SceneEncoder::new(&mut params, config.raster_channels, config.raster_size, &mut rng))
            .transpose()?;
        let merge = (config.use_sg && config.use_scene)
            .then(|| Merge::new(&mut params, config.merge, &mut rng))
            .transpose()?;
        let (vae_enc, vae_dec) = if config.use_vae {
            (
                Some(Linear::new(
                    &mut params,
                    "vae.enc",
                    ENC_HIDDEN,
                    2 * LATENT_DIM,
                    &mut rng,
                )?),
                Some(Linear::new(&mut params, "vae.dec", LATENT_DIM, ENC_HIDDEN, &mut rng)?),
            )
        } else {
            (None, None)
        };
        let dec_embed = if config.tie_embedding {
            embed
        } else {
            Linear::new(&mut params, "dec.emb", 2, EMBED_DIM, &mut rng)?
        };
        let decoder = LstmCell::new(&mut params, "dec.lstm", EMBED_DIM, DEC_HIDDEN, &mut rng)?;
        let output = Linear::new(&mut params, "dec.out", DEC_HIDDEN, 2, &mut rng)?;
        if decoder.hidden != ENC_HIDDEN + ENC_HIDDEN {
            return Err(Error::Config(format!(
                "decoder hidden {} must equal the concatenated feature width {}",
                decoder.hidden,
                2 * ENC_HIDDEN
            )));
        }
        Ok(Self {
            config,
            params,
            embed,
            dec_embed,
            encoder,
            social,
            scene,
            merge,
            vae_enc,
            vae_dec,
            decoder,
            output,
        })
    }

    /// Same architecture in another precision.
    pub fn cast<G: Real>(&self) -> SgsgModel<G> {
        SgsgModel {
            config: self.config,
            params: self.params.cast(),
            embed: self.embed,
            dec_embed: self.dec_embed,
            encoder: self.encoder,
            social: self.social,
            scene: self.scene,
            merge: self.merge,
            vae_enc: self.vae_enc,
            vae_dec: self.vae_dec,
            decoder: self.decoder,
            output: self.output,
        }
    }

    /// Trajectory encoder over normalised observed points, `[B, 32]`.
    pub fn encode_history(&self, tape: &mut Tape<F>, samples: &[&Sample]) -> Result<Var> {
        let p = &self.params;
        let mut xs = Vec::with_capacity(T_OBS);
        for t in 0..T_OBS {
            let x = tape.leaf(points_tensor(samples.iter().map(|s| s.obs[t]))?);
            xs.push(embed(tape, p, &self.embed, x)?);
        }
        Ok(self.encoder.unroll(tape, p, &xs)?.0)
    }

    /// Scene logits for each sample, computing each distinct raster once.
    fn encode_scenes(
        &self,
        tape: &mut Tape<F>,
        enc: &SceneEncoder,
        samples: &[&Sample],
        rasters: &[&SceneRaster],
    ) -> Result<Var> {
        let mut unique: Vec<usize> = Vec::new();
        let mut rows = Vec::with_capacity(samples.len());
        for s in samples {
            let r = match unique.iter().position(|&u| u == s.raster) {
                Some(r) => r,
                None => {
                    unique.push(s.raster);
                    unique.len() - 1
                }
            };
            rows.push(r);
        }
        let picked: Vec<&SceneRaster> = unique
            .iter()
            .map(|&i| {
                rasters
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("sample refers to missing raster {i}")))
            })
            .collect::<Result<_>>()?;
        let s = enc.forward(tape, &self.params, &picked)?;
        tape.gather_rows(s, &rows)
    }

    /// Runs every encoder and the VAE encoder on a batch.
    pub fn encode(&self, tape: &mut Tape<F>, samples: &[&Sample], rasters: &[&SceneRaster]) -> Result<Encoded> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let p = &self.params;
        let history = self.encode_history(tape, samples)?;
        let social = match &self.social {
            Some(sg) => {
                let graphs: Vec<&StarGraphSeq> = samples.iter().map(|s| &s.graph).collect();
                Some(sg.forward(tape, p, &graphs)?)
            }
            None => None,
        };
        let scene = match &self.scene {
            Some(enc) => Some(self.encode_scenes(tape, enc, samples, rasters)?),
            None => None,
        };
        let merged = match (social, scene, &self.merge) {
            (Some(g), Some(s), Some(m)) => m.apply(tape, p, s, g)?,
            (Some(g), None, _) => g,
            (None, Some(s), _) => s,
            _ => return Err(Error::Config("no upstream feature for the merge".into())),
        };
        let (mu, gamma) = match &self.vae_enc {
            Some(venc) => {
                let stats = venc.forward(tape, p, merged)?;
                let mu = tape.slice(stats, 0, LATENT_DIM)?;
                let raw = tape.slice(stats, LATENT_DIM, LATENT_DIM)?;
                let gamma = tape.clamp(raw, F::lit(-GAMMA_CLAMP), F::lit(GAMMA_CLAMP));
                (Some(mu), Some(gamma))
            }
            None => (None, None),
        };
        Ok(Encoded {
            history,
            social,
            scene,
            merged,
            mu,
            gamma,
            rows: samples.len(),
        })
    }

    /// `z = mu + exp(gamma / 2) * eps`; `eps` is a constant so gradients
    /// reach only `mu` and `gamma`.
    pub fn sample_latent(tape: &mut Tape<F>, mu: Var, gamma: Var, eps: Tensor<F>) -> Result<Var> {
        let half = tape.scale(gamma, F::lit(0.5));
        let sigma = tape.exp(half);
        let e = tape.leaf(eps);
        let spread = tape.mul(sigma, e)?;
        tape.add(mu, spread)
    }

    /// Decodes `rows` of an encoded batch (rows may repeat, one per sample).
    ///
    /// `eps` is `[rows.len(), 8]`; `None` means `eps = 0`. With `prior` the
    /// latent is `eps` itself. `teacher` replaces fed-back predictions with
    /// the given future points (training only).
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        tape: &mut Tape<F>,
        enc: &Encoded,
        rows: &[usize],
        last_obs: &[Point],
        eps: Option<Tensor<F>>,
        prior: bool,
        teacher: Option<&[[Point; T_PRED]]>,
    ) -> Result<Vec<Var>> {
        let p = &self.params;
        let n = rows.len();
        let ghat = match (&self.vae_dec, enc.mu, enc.gamma) {
            (Some(vdec), Some(mu), Some(gamma)) => {
                let eps = eps.unwrap_or_else(|| Tensor::zeros(&[n, LATENT_DIM]));
                if eps.shape() != [n, LATENT_DIM] {
                    return Err(crate::error::dim_err("decode", format!("eps {:?}", eps.shape())));
                }
                let z = if prior {
                    tape.leaf(eps)
                } else {
                    let mu = tape.gather_rows(mu, rows)?;
                    let gamma = tape.gather_rows(gamma, rows)?;
                    Self::sample_latent(tape, mu, gamma, eps)?
                };
                let d = vdec.forward(tape, p, z)?;
                tape.relu(d)
            }
            _ => tape.gather_rows(enc.merged, rows)?,
        };
        let history = tape.gather_rows(enc.history, rows)?;
        let mut h = tape.concat(&[ghat, history])?;
        if tape.value(h).cols() != self.decoder.hidden {
            return Err(Error::Config("decoder initial state width mismatch".into()));
        }
        let mut c = tape.leaf(Tensor::zeros(&[n, self.decoder.hidden]));
        let lstm = self.decoder.record(tape, p);
        let x0 = tape.leaf(points_tensor(last_obs.iter().copied())?);
        let mut input = embed(tape, p, &self.dec_embed, x0)?;
        let mut preds = Vec::with_capacity(T_PRED);
        for k in 0..T_PRED {
            (h, c) = tape.lstm_cell(input, h, c, &lstm)?;
            let out = self.output.forward(tape, p, h)?;
            preds.push(out);
            if k + 1 < T_PRED {
                let fed = match teacher {
                    Some(gt) => tape.leaf(points_tensor(gt.iter().map(|g| g[k]))?),
                    None => out,
                };
                input = embed(tape, p, &self.dec_embed, fed)?;
            }
        }
        Ok(preds)
    }

    /// Mean per-sample loss over a batch: summed squared error over the
    /// 12 future points plus `kld_weight` times the KL divergence.
    pub fn batch_loss(
        &self,
        tape: &mut Tape<F>,
        samples: &[&Sample],
        rasters: &[&SceneRaster],
        eps: Option<Tensor<F>>,
        kld_weight: f64,
        teacher_forcing: bool,
    ) -> Result<Var> {
        let enc = self.encode(tape, samples, rasters)?;
        let rows: Vec<usize> = (0..samples.len()).collect();
        let last: Vec<Point> = samples.iter().map(|s| s.obs[T_OBS - 1]).collect();
        let gts: Vec<[Point; T_PRED]> = samples.iter().map(|s| s.gt).collect();
        let preds = self.decode(
            tape,
            &enc,
            &rows,
            &last,
            eps,
            false,
            teacher_forcing.then_some(&gts[..]),
        )?;
        let gt_vars: Vec<Var> = (0..T_PRED)
            .map(|k| Ok(tape.leaf(points_tensor(gts.iter().map(|g| g[k]))?)))
            .collect::<Result<_>>()?;
        let mut total = l2_term(tape, &preds, &gt_vars)?;
        if let (Some(mu), Some(gamma)) = (enc.mu, enc.gamma) {
            if kld_weight != 0.0 {
                let kl = kld_term(tape, mu, gamma)?;
                let kl = tape.scale(kl, F::lit(kld_weight));
                total = tape.add(total, kl)?;
            }
        }
        Ok(tape.scale(total, F::lit(1.0 / samples.len() as f64)))
    }

    /// `k` predicted trajectories per sample in normalised coordinates.
    ///
    /// Each sample draws its noise from its own stream (keyed by
    /// `window_id`), so results do not depend on batch composition and the
    /// first `k'` samples of a larger `k` coincide with a run at `k'`.
    pub fn predict(
        &self,
        samples: &[&Sample],
        rasters: &[&SceneRaster],
        k: usize,
        mode: SampleMode,
    ) -> Result<Vec<Vec<PredictedTrajectory>>> {
        if k < 1 {
            return Err(Error::InvalidArgument("number of samples must be at least 1".into()));
        }
        if mode == SampleMode::Deterministic && k != 1 {
            return Err(Error::InvalidArgument(
                "deterministic prediction yields a single sample".into(),
            ));
        }
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, samples, rasters)?;
        let rows: Vec<usize> = (0..samples.len()).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let last: Vec<Point> = rows.iter().map(|&i| samples[i].obs[T_OBS - 1]).collect();
        let (eps, prior) = match (mode, self.config.use_vae) {
            (SampleMode::Deterministic, _) | (_, false) => (None, false),
            (SampleMode::Posterior { seed }, true) => (Some(noise(samples, k, seed)?), false),
            (SampleMode::Prior { seed }, true) => (Some(noise(samples, k, seed)?), true),
        };
        let preds = self.decode(&mut tape, &enc, &rows, &last, eps, prior, None)?;
        let mut out: Vec<Vec<PredictedTrajectory>> = vec![Vec::with_capacity(k); samples.len()];
        for (r, &i) in rows.iter().enumerate() {
            let mut points = [[0.0; 2]; T_PRED];
            for (step, &pv) in preds.iter().enumerate() {
                let row = tape.value(pv).row(r);
                points[step] = [row[0].to_f64_lossy(), row[1].to_f64_lossy()];
            }
            let sample = out[i].len();
            out[i].push(PredictedTrajectory { sample, points });
        }
        Ok(out)
    }

    /// Scalar parameter counts per module.
    pub fn parameter_counts(&self) -> Vec<(&'static str, usize)> {
        let p = &self.params;
        let mut v = vec![(
            "trajectory_encoder",
            p.num_scalars_with_prefix("emb.") + self.encoder.num_scalars(),
        )];
        if let Some(sg) = &self.social {
            v.push(("social_graph", sg.num_scalars()));
        }
        if let Some(sc) = &self.scene {
            v.push(("scene", sc.num_scalars(p)));
        }
        if self.merge.is_some() {
            v.push(("merge", p.num_scalars_with_prefix("merge.")));
        }
        if self.config.use_vae {
            v.push(("vae", p.num_scalars_with_prefix("vae.")));
        }
        v.push(("decoder", p.num_scalars_with_prefix("dec.")));
        v
    }
}

/// Standard-normal noise `[samples * k, 8]`, drawn per sample from stream
/// `window_id` of a ChaCha generator seeded with `seed`.
pub fn noise<F: Real>(samples: &[&Sample], k: usize, seed: u64) -> Result<Tensor<F>> {
    let mut data = Vec::with_capacity(samples.len() * k * LATENT_DIM);
    for s in samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s.window_id as u64);
        for _ in 0..k * LATENT_DIM {
            let v: f64 = rng.sample(StandardNormal);
            data.push(F::lit(v));
        }
    }
    Tensor::new(vec![samples.len() * k, LATENT_DIM], data)
}

/// Summed squared error over all steps and rows.
pub fn l2_term<F: Real>(tape: &mut Tape<F>, preds: &[Var], gts: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&p, &g) in preds.iter().zip(gts) {
        let d = tape.sub(p, g)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("no predicted steps".into()))
}

/// `-0.5 * sum(1 + gamma - mu^2 - exp(gamma))`, summed over every row.
pub fn kld_term<F: Real>(tape: &mut Tape<F>, mu: Var, gamma: Var) -> Result<Var> {
    let mu2 = tape.mul(mu, mu)?;
    let eg = tape.exp(gamma);
    let a = tape.add_scalar(gamma, F::one());
    let b = tape.sub(a, mu2)?;
    let c = tape.sub(b, eg)?;
    let s = tape.sum(c);
    Ok(tape.scale(s, F::lit(-0.5)))
}

/// Closed-form KL divergence of `N(mu, exp(gamma))` from `N(0, I)`.
pub fn kld(mu: &[f64], gamma: &[f64]) -> f64 {
    assert_eq!(mu.len(), gamma.len(), "mu and gamma dims differ");
    -0.5 * mu
        .iter()
        .zip(gamma)
        .map(|(m, g)| 1.0 + g - m * m - g.exp())
        .sum::<f64>()
}

/// Per-sample training loss on plain values.
pub fn loss(pred: &[Point], gt: &[Point], mu: &[f64], gamma: &[f64], kld_weight: f64) -> f64 {
    assert_eq!(pred.len(), gt.len(), "prediction and ground truth lengths differ");
    let l2: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2))
        .sum();
    l2 + kld_weight * kld(mu, gamma)
}
