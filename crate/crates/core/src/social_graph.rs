//! Dynamic star graphs around each POI and the social encoder over them.
//!
//! At every observation step the POI is connected to each co-present
//! pedestrian and to nobody else. One mean-aggregation graph convolution turns
//! each star graph into an embedding, and an LSTM summarises the sequence of
//! embeddings into the social feature `g`.

use rand::Rng;

use crate::dataset::{rotate90, NeighborIndex, NormParams, TrajWindow};
use crate::error::Result;
use crate::tensor::{Linear, LstmCell, ParamStore, Real, Tape, Tensor, Var};
use crate::{Point, ENC_HIDDEN, T_OBS};

/// Per-step neighbourhoods of one POI over the observation period.
#[derive(Clone, Debug, PartialEq)]
pub struct StarGraphSeq {
    pub poi_id: i64,
    pub poi: [Point; T_OBS],
    /// `neighbors[t]` is sorted by pedestrian id and never contains the POI.
    pub neighbors: Vec<Vec<(i64, Point)>>,
}

impl StarGraphSeq {
    /// Looks up co-present pedestrians for each observed frame of `window`,
    /// rotating them the same way the window was rotated.
    pub fn build(window: &TrajWindow, index: &NeighborIndex) -> Self {
        let neighbors = (0..T_OBS)
            .map(|t| {
                index
                    .neighbors_at(&window.scene, window.frame(t), window.poi_id)
                    .into_iter()
                    .map(|(id, mut p)| {
                        for _ in 0..window.rotation {
                            p = rotate90(p);
                        }
                        (id, p)
                    })
                    .collect()
            })
            .collect();
        Self {
            poi_id: window.poi_id,
            poi: window.obs,
            neighbors,
        }
    }

    /// Star edges at step `t`: one per neighbour.
    pub fn edges_at(&self, t: usize) -> usize {
        self.neighbors[t].len()
    }

    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Self {
        Self {
            poi_id: self.poi_id,
            poi: self.poi.map(&f),
            neighbors: self
                .neighbors
                .iter()
                .map(|v| v.iter().map(|&(id, p)| (id, f(p))).collect())
                .collect(),
        }
    }

    pub fn normalized(&self, norm: &NormParams) -> Self {
        self.map_points(|p| norm.normalize(p))
    }

    pub fn rotated90(&self) -> Self {
        self.map_points(rotate90)
    }

    /// Mean neighbour location at step `t`, optionally counting the POI
    /// itself. An empty neighbourhood aggregates to the origin, so the layer
    /// output reduces to `ReLU(b)`.
    pub fn aggregate(&self, t: usize, self_loop: bool) -> Point {
        let mut sum = [0.0; 2];
        let mut n = 0usize;
        for (_, p) in &self.neighbors[t] {
            sum[0] += p[0];
            sum[1] += p[1];
            n += 1;
        }
        if self_loop {
            sum[0] += self.poi[t][0];
            sum[1] += self.poi[t][1];
            n += 1;
        }
        if n == 0 {
            [0.0, 0.0]
        } else {
            [sum[0] / n as f64, sum[1] / n as f64]
        }
    }
}

/// Edges of one POI's star graph over `n` co-present pedestrians.
pub fn star_edges(n: usize) -> usize {
    n.saturating_sub(1)
}

/// Edges of the complete graph over `n` pedestrians.
pub fn complete_edges(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Single graph-convolution layer with mean aggregation over neighbours.
///
/// `a = ReLU(b + mean_j W x_j)`; by linearity this is evaluated as
/// `ReLU(b + W mean_j x_j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcnLayer {
    pub linear: Linear,
    pub self_loop: bool,
}

impl GcnLayer {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        d_out: usize,
        self_loop: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(store, prefix, 2, d_out, rng)?,
            self_loop,
        })
    }

    /// Per-step embeddings `[B, d_out]` for a batch of sequences.
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        seqs: &[&StarGraphSeq],
    ) -> Result<Vec<Var>> {
        let w = tape.param(store, self.linear.w);
        let b = tape.param(store, self.linear.b);
        (0..T_OBS)
            .map(|t| {
                let data = seqs
                    .iter()
                    .flat_map(|s| s.aggregate(t, self.self_loop))
                    .map(F::lit)
                    .collect();
                let x = tape.leaf(Tensor::new(vec![seqs.len(), 2], data)?);
                let z = tape.affine(x, w, Some(b))?;
                Ok(tape.relu(z))
            })
            .collect()
    }
}

/// Graph convolution followed by the social LSTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SocialEncoder {
    pub gcn: GcnLayer,
    pub lstm: LstmCell,
}

impl SocialEncoder {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, self_loop: bool, rng: &mut R) -> Result<Self> {
        let gcn = GcnLayer::new(store, "sg.gcn", ENC_HIDDEN, self_loop, rng)?;
        let lstm = LstmCell::new(store, "sg.lstm", ENC_HIDDEN, ENC_HIDDEN, rng)?;
        Ok(Self { gcn, lstm })
    }

    /// LSTM over per-step embeddings from a zero state; returns the final
    /// hidden state.
    pub fn encode<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, embeddings: &[Var]) -> Result<Var> {
        Ok(self.lstm.unroll(tape, store, embeddings)?.0)
    }

    /// Social feature `g`, `[B, 32]`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, seqs: &[&StarGraphSeq]) -> Result<Var> {
        let a = self.gcn.forward(tape, store, seqs)?;
        self.encode(tape, store, &a)
    }

    pub fn num_scalars(&self) -> usize {
        self.gcn.linear.num_scalars() + self.lstm.num_scalars()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_windows, parse_scene_str};
    use crate::tensor::LstmParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::path::Path;

    fn seq_with(neighbors: Vec<Vec<(i64, Point)>>) -> StarGraphSeq {
        StarGraphSeq {
            poi_id: 0,
            poi: [[0.5, 0.5]; T_OBS],
            neighbors,
        }
    }

    fn identity_gcn(store: &mut ParamStore<f64>) -> GcnLayer {
        let w = store
            .insert("g.w", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let b = store.insert("g.b", Tensor::zeros(&[2])).unwrap();
        GcnLayer {
            linear: Linear {
                w,
                b,
                n_in: 2,
                n_out: 2,
            },
            self_loop: false,
        }
    }

    fn gcn_at0(neighbors: &[Point]) -> Vec<f64> {
        let mut store = ParamStore::new();
        let layer = identity_gcn(&mut store);
        let n: Vec<(i64, Point)> = neighbors.iter().enumerate().map(|(i, &p)| (i as i64 + 1, p)).collect();
        let seq = seq_with(vec![n; T_OBS]);
        let mut tape = Tape::new();
        let a = layer.forward(&mut tape, &store, &[&seq]).unwrap();
        tape.value(a[0]).data().to_vec()
    }

    #[test]
    fn gcn_examples() {
        assert_eq!(gcn_at0(&[[1.0, 0.0], [-1.0, 0.0]]), vec![0.0, 0.0]);
        assert_eq!(gcn_at0(&[[-3.0, 1.0]]), vec![0.0, 1.0]);
        assert_eq!(gcn_at0(&[[2.0, 0.0], [0.0, 2.0]]), vec![1.0, 1.0]);
    }

    #[test]
    fn empty_neighbourhood_yields_relu_bias() {
        let mut store = ParamStore::<f64>::new();
        let layer = identity_gcn(&mut store);
        let b = layer.linear.b;
        store.value_mut(b).data_mut().copy_from_slice(&[0.7, -0.2]);
        let seq = seq_with(vec![vec![]; T_OBS]);
        let mut tape = Tape::new();
        let a = layer.forward(&mut tape, &store, &[&seq]).unwrap();
        assert_eq!(tape.value(a[3]).data(), &[0.7, 0.0]);
    }

    #[test]
    fn self_loop_includes_poi() {
        let seq = seq_with(vec![vec![(4, [1.5, 0.5])]; T_OBS]);
        assert_eq!(seq.aggregate(0, false), [1.5, 0.5]);
        assert_eq!(seq.aggregate(0, true), [1.0, 0.5]);
    }

    #[test]
    fn edge_counting() {
        assert_eq!((star_edges(5), complete_edges(5)), (4, 10));
        assert_eq!((star_edges(1), complete_edges(1)), (0, 0));
        assert_eq!((star_edges(2), complete_edges(2)), (1, 1));
        assert_eq!((star_edges(0), complete_edges(0)), (0, 0));
    }

    #[test]
    fn star_graph_from_index() {
        let mut text = String::new();
        for f in 0..20 {
            text += &format!("{} 1 {f} 0\n{} 2 {f} 1\n{} 3 {f} 2\n", f * 10, f * 10, f * 10);
        }
        text += "0 9 5 5\n";
        let parsed = parse_scene_str(&text, Path::new("m")).unwrap();
        let mut idx = NeighborIndex::new();
        idx.insert_scene("S", &parsed);
        let w = build_windows("S", &parsed).into_iter().find(|w| w.poi_id == 1).unwrap();
        let seq = StarGraphSeq::build(&w, &idx);
        assert_eq!(seq.edges_at(0), 3);
        assert!((1..T_OBS).all(|t| seq.edges_at(t) == 2));
        assert!(seq.neighbors.iter().flatten().all(|(id, _)| *id != 1));

        let rotated = StarGraphSeq::build(&w.rotated90(), &idx);
        assert_eq!(rotated, seq.rotated90());

        let alone = seq_with(vec![vec![]; T_OBS]);
        assert!((0..T_OBS).all(|t| alone.edges_at(t) == 0));
    }

    #[test]
    fn social_encoder_zero_weights_give_zero() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = SocialEncoder::new(&mut store, false, &mut rng).unwrap();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let mut tape = Tape::new();
        let zeros: Vec<Var> = (0..T_OBS).map(|_| tape.leaf(Tensor::zeros(&[1, ENC_HIDDEN]))).collect();
        let g = enc.encode(&mut tape, &store, &zeros).unwrap();
        assert_eq!(tape.value(g).shape(), &[1, ENC_HIDDEN]);
        assert!(tape.value(g).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn social_encoder_is_order_sensitive() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = SocialEncoder::new(&mut store, false, &mut rng).unwrap();
        let emb: Vec<Tensor<f64>> = (0..T_OBS)
            .map(|t| {
                Tensor::new(
                    vec![1, ENC_HIDDEN],
                    (0..ENC_HIDDEN).map(|k| ((t * 7 + k) as f64 * 0.3).sin()).collect(),
                )
                .unwrap()
            })
            .collect();
        let run = |order: &[usize]| {
            let mut tape = Tape::new();
            let xs: Vec<Var> = order.iter().map(|&t| tape.leaf(emb[t].clone())).collect();
            let g = enc.encode(&mut tape, &store, &xs).unwrap();
            tape.value(g).clone()
        };
        let forward: Vec<usize> = (0..T_OBS).collect();
        let reversed: Vec<usize> = (0..T_OBS).rev().collect();
        assert_ne!(run(&forward), run(&reversed));
    }

    #[test]
    fn single_step_is_one_cell_application() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = SocialEncoder::new(&mut store, false, &mut rng).unwrap();
        let x = Tensor::new(vec![1, ENC_HIDDEN], vec![0.25; ENC_HIDDEN]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let g = enc.encode(&mut tape, &store, &[xv]).unwrap();

        let mut manual = Tape::new();
        let p = LstmParams {
            w_ih: manual.param(&store, enc.lstm.w_ih),
            w_hh: manual.param(&store, enc.lstm.w_hh),
            b: manual.param(&store, enc.lstm.b),
        };
        let xm = manual.leaf(x);
        let z = manual.leaf(Tensor::zeros(&[1, ENC_HIDDEN]));
        let (h, _) = manual.lstm_cell(xm, z, z, &p).unwrap();
        assert_eq!(tape.value(g), manual.value(h));
    }
}
