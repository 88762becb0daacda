//! Invariant message-passing vector-field model with hand-written
//! reverse-mode differentiation.
//!
//! The network sees only rigid-invariant features (residue identity, chain
//! position, psi, time, pairwise distances, body-frame directions, sequence
//! offsets) and emits, per refined residue, a translation and a rotation
//! vector in the standpoint body frame. Equivariance comes from composing
//! those outputs with the standpoint: `x1 = r0 o1 + x0`, `r1 = r0 exp(o2)`.
//!
//! Architecture: dense encoder, two message-passing rounds over a k-nearest
//! neighbor graph (edge MLP, mean aggregation, node update), then two
//! two-layer heads fed with the node state and the time embedding. All
//! nonlinearities are tanh. Both head output layers start at zero, so a fresh
//! model predicts the standpoint itself.

pub mod adam;
pub mod checkpoint;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{FlowState, VectorFieldSample};
use crate::frames::{BackboneChain, Frame};
use crate::so3::{
    exp_rotvec, hat, log_rotation, right_jacobian, vee, Rotation, TangentVector,
};

/// Residue feature width: 21 restype + 1 chain position + 1 CDR flag +
/// 2 psi trig + 8 time embedding.
pub const NODE_FEATURES: usize = 33;
/// Pair feature width: 16 RBF + 3 body-frame direction + 9 sequence offset.
pub const PAIR_FEATURES: usize = 28;
/// Time embedding width: sin/cos at 4 octave frequencies.
pub const TIME_FEATURES: usize = 8;
/// Neighbors per residue in the message-passing graph.
pub const K_NEIGHBORS: usize = 8;

const RBF_COUNT: usize = 16;
const RBF_MAX: f64 = 20.0;
const SEQ_CLIP: i64 = 4;

/// Hidden widths; the two knobs of the architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub hidden: usize,
    pub head_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            hidden: 128,
            head_hidden: 64,
        }
    }
}

/// Dense layer y = W x + b.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Linear {
    fn zeros(rows: usize, cols: usize) -> Self {
        Linear {
            w: DMatrix::zeros(rows, cols),
            b: DVector::zeros(rows),
        }
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.b
    }
}

/// One message-passing round: edge MLP over [h_i, h_j, e_ij], node update
/// over [h_i, mean_j m_ij].
#[derive(Clone, Debug, PartialEq)]
pub struct RoundParams {
    pub edge: Linear,
    pub node: Linear,
}

/// Two-layer head: tanh hidden layer, affine output.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub l1: Linear,
    pub l2: Linear,
}

/// All parameters. Tensor order (encoder, round 1 edge/node, round 2
/// edge/node, translation head, rotation head; weights before biases) is the
/// checkpoint and optimizer-state order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: Linear,
    pub rounds: [RoundParams; 2],
    pub head_x: HeadParams,
    pub head_r: HeadParams,
}

impl ModelParams {
    /// All-zero parameters of the given dimensions.
    pub fn zeros(dims: ModelDims) -> Self {
        let h = dims.hidden;
        let hh = dims.head_hidden;
        let round = || RoundParams {
            edge: Linear::zeros(h, 2 * h + PAIR_FEATURES),
            node: Linear::zeros(h, 2 * h),
        };
        ModelParams {
            dims,
            encoder: Linear::zeros(h, NODE_FEATURES),
            rounds: [round(), round()],
            head_x: HeadParams {
                l1: Linear::zeros(hh, h + TIME_FEATURES),
                l2: Linear::zeros(3, hh),
            },
            head_r: HeadParams {
                l1: Linear::zeros(hh, h + TIME_FEATURES),
                l2: Linear::zeros(3, hh),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.dims)
    }

    /// Tensors in declaration order: (name, rows, cols, column-major data).
    pub fn tensor_views(&self) -> Vec<(&'static str, usize, usize, &[f64])> {
        fn linear<'a>(
            wn: &'static str,
            bn: &'static str,
            l: &'a Linear,
        ) -> [(&'static str, usize, usize, &'a [f64]); 2] {
            [
                (wn, l.w.nrows(), l.w.ncols(), l.w.as_slice()),
                (bn, l.b.nrows(), 1, l.b.as_slice()),
            ]
        }
        [
            linear("encoder.w", "encoder.b", &self.encoder),
            linear("round1.edge.w", "round1.edge.b", &self.rounds[0].edge),
            linear("round1.node.w", "round1.node.b", &self.rounds[0].node),
            linear("round2.edge.w", "round2.edge.b", &self.rounds[1].edge),
            linear("round2.node.w", "round2.node.b", &self.rounds[1].node),
            linear("head_x.l1.w", "head_x.l1.b", &self.head_x.l1),
            linear("head_x.l2.w", "head_x.l2.b", &self.head_x.l2),
            linear("head_r.l1.w", "head_r.l1.b", &self.head_r.l1),
            linear("head_r.l2.w", "head_r.l2.b", &self.head_r.l2),
        ]
        .into_iter()
        .flatten()
        .collect()
    }

    /// Mutable data slices in the same order as [`tensor_views`].
    pub fn tensor_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(20);
        macro_rules! push {
            ($l:expr) => {
                out.push($l.w.as_mut_slice());
                out.push($l.b.as_mut_slice());
            };
        }
        push!(self.encoder);
        let [r0, r1] = &mut self.rounds;
        push!(r0.edge);
        push!(r0.node);
        push!(r1.edge);
        push!(r1.node);
        push!(self.head_x.l1);
        push!(self.head_x.l2);
        push!(self.head_r.l1);
        push!(self.head_r.l2);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensor_views().iter().map(|(_, _, _, d)| d.len()).sum()
    }

    /// Reads the parameter at a flat index (tensor order, column-major within
    /// each tensor). Test and finite-difference plumbing.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for (_, _, _, data) in self.tensor_views() {
            if idx < data.len() {
                return data[idx];
            }
            idx -= data.len();
        }
        panic!("flat index out of range");
    }

    /// Adds `delta` at a flat index.
    pub fn add_flat(&mut self, mut idx: usize, delta: f64) {
        for data in self.tensor_slices_mut() {
            if idx < data.len() {
                data[idx] += delta;
                return;
            }
            idx -= data.len();
        }
        panic!("flat index out of range");
    }
}

/// Random initialization: hidden weights uniform in +-1/sqrt(fan_in), biases
/// zero, both head output layers zero so the fresh model is the identity
/// refinement.
pub fn init_params(seed: u64, dims: ModelDims) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(dims);
    let mut fill = |l: &mut Linear| {
        let scale = 1.0 / (l.w.ncols() as f64).sqrt();
        for v in l.w.as_mut_slice() {
            *v = scale * (2.0 * rng.random::<f64>() - 1.0);
        }
    };
    fill(&mut params.encoder);
    fill(&mut params.rounds[0].edge);
    fill(&mut params.rounds[0].node);
    fill(&mut params.rounds[1].edge);
    fill(&mut params.rounds[1].node);
    fill(&mut params.head_x.l1);
    fill(&mut params.head_r.l1);
    // head_x.l2 and head_r.l2 stay zero.
    params
}

/// Invariant features of one system at one time.
#[derive(Clone, Debug)]
pub struct Features {
    /// Refined residue indices, in order; output rows align with this.
    pub selection: Vec<usize>,
    /// Per residue, width [`NODE_FEATURES`].
    pub node: Vec<DVector<f64>>,
    /// Per residue, ordered neighbor indices (nearest first, index tiebreak).
    pub neighbors: Vec<Vec<usize>>,
    /// Per residue, pair features aligned with `neighbors`.
    pub pair: Vec<Vec<DVector<f64>>>,
    /// Width [`TIME_FEATURES`].
    pub time_emb: DVector<f64>,
}

/// Sin/cos time embedding at octave frequencies.
pub fn time_embedding(t: f64) -> DVector<f64> {
    let mut v = DVector::zeros(TIME_FEATURES);
    for k in 0..TIME_FEATURES / 2 {
        let freq = (1u32 << k) as f64 * std::f64::consts::PI;
        v[2 * k] = (freq * t).sin();
        v[2 * k + 1] = (freq * t).cos();
    }
    v
}

/// Builds features for the chain with the selected residues moved to their
/// current flow-state frames. Neighbor lists use current coordinates.
pub fn featurize(
    chain: &BackboneChain,
    state: &FlowState,
    selection: &[usize],
    t: f64,
) -> Result<Features> {
    let n = chain.len();
    if selection.is_empty() {
        return Err(Error::BadSelection("empty selection".into()));
    }
    if state.len() != selection.len() {
        return Err(Error::LengthMismatch {
            left: state.len(),
            right: selection.len(),
        });
    }
    let mut frames: Vec<Frame> = chain.residues.iter().map(|r| r.frame).collect();
    let mut is_selected = vec![false; n];
    for (s, &i) in selection.iter().enumerate() {
        if i >= n {
            return Err(Error::BadSelection(format!(
                "residue index {i} out of range for chain of length {n}"
            )));
        }
        frames[i] = state.frames[s];
        is_selected[i] = true;
    }

    let time_emb = time_embedding(t);
    let mut node = Vec::with_capacity(n);
    for (i, res) in chain.residues.iter().enumerate() {
        let mut f = DVector::zeros(NODE_FEATURES);
        f[res.restype.index()] = 1.0;
        f[21] = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        f[22] = if is_selected[i] { 1.0 } else { 0.0 };
        f[23] = res.psi.sin();
        f[24] = res.psi.cos();
        for k in 0..TIME_FEATURES {
            f[25 + k] = time_emb[k];
        }
        node.push(f);
    }

    let mut neighbors = Vec::with_capacity(n);
    let mut pair = Vec::with_capacity(n);
    let sigma = RBF_MAX / (RBF_COUNT - 1) as f64;
    for i in 0..n {
        let mut dist: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((frames[j].x - frames[i].x).norm(), j))
            .collect();
        dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
        dist.truncate(K_NEIGHBORS);
        let mut nbr = Vec::with_capacity(dist.len());
        let mut feats = Vec::with_capacity(dist.len());
        for (d, j) in dist {
            let mut e = DVector::zeros(PAIR_FEATURES);
            for m in 0..RBF_COUNT {
                let c = m as f64 * sigma;
                e[m] = (-(d - c) * (d - c) / (2.0 * sigma * sigma)).exp();
            }
            if d > 1e-9 {
                let u = frames[i].r.coact(&(frames[j].x - frames[i].x)) / d;
                e[RBF_COUNT] = u.x;
                e[RBF_COUNT + 1] = u.y;
                e[RBF_COUNT + 2] = u.z;
            }
            let off = (j as i64 - i as i64).clamp(-SEQ_CLIP, SEQ_CLIP) + SEQ_CLIP;
            e[RBF_COUNT + 3 + off as usize] = 1.0;
            nbr.push(j);
            feats.push(e);
        }
        neighbors.push(nbr);
        pair.push(feats);
    }

    Ok(Features {
        selection: selection.to_vec(),
        node,
        neighbors,
        pair,
        time_emb,
    })
}

/// Per-edge and per-node activations of one message-passing round.
#[derive(Clone, Debug)]
struct RoundCache {
    h_in: Vec<DVector<f64>>,
    msgs: Vec<Vec<DVector<f64>>>,
    mean: Vec<DVector<f64>>,
    h_out: Vec<DVector<f64>>,
}

#[derive(Clone, Debug)]
struct HeadCache {
    inp: DVector<f64>,
    a: DVector<f64>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    h0: Vec<DVector<f64>>,
    rounds: [RoundCache; 2],
    head_x: Vec<HeadCache>,
    head_r: Vec<HeadCache>,
    /// Rotation-vector outputs of the rotation head, per selected residue.
    out_r: Vec<Vector3<f64>>,
}

/// Model outputs: predicted target frames per selected residue.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub x1: Vec<Vector3<f64>>,
    pub r1: Vec<Rotation>,
}

fn tanh_vec(v: &DVector<f64>) -> DVector<f64> {
    v.map(f64::tanh)
}

fn run_round(params: &RoundParams, h: &[DVector<f64>], feats: &Features) -> RoundCache {
    let n = h.len();
    let hd = h[0].nrows();
    let mut msgs = Vec::with_capacity(n);
    let mut mean = Vec::with_capacity(n);
    for i in 0..n {
        let nbrs = &feats.neighbors[i];
        let mut m_i = DVector::zeros(hd);
        let mut edge_msgs = Vec::with_capacity(nbrs.len());
        for (idx, &j) in nbrs.iter().enumerate() {
            let mut z = DVector::zeros(2 * hd + PAIR_FEATURES);
            z.rows_mut(0, hd).copy_from(&h[i]);
            z.rows_mut(hd, hd).copy_from(&h[j]);
            z.rows_mut(2 * hd, PAIR_FEATURES)
                .copy_from(&feats.pair[i][idx]);
            let m = tanh_vec(&params.edge.apply(&z));
            m_i += &m;
            edge_msgs.push(m);
        }
        if !nbrs.is_empty() {
            m_i /= nbrs.len() as f64;
        }
        msgs.push(edge_msgs);
        mean.push(m_i);
    }
    let mut h_out = Vec::with_capacity(n);
    for i in 0..n {
        let mut u = DVector::zeros(2 * hd);
        u.rows_mut(0, hd).copy_from(&h[i]);
        u.rows_mut(hd, hd).copy_from(&mean[i]);
        h_out.push(tanh_vec(&params.node.apply(&u)));
    }
    RoundCache {
        h_in: h.to_vec(),
        msgs,
        mean,
        h_out,
    }
}

fn run_head(params: &HeadParams, h: &DVector<f64>, time_emb: &DVector<f64>) -> (HeadCache, Vector3<f64>) {
    let hd = h.nrows();
    let mut inp = DVector::zeros(hd + TIME_FEATURES);
    inp.rows_mut(0, hd).copy_from(h);
    inp.rows_mut(hd, TIME_FEATURES).copy_from(time_emb);
    let a = tanh_vec(&params.l1.apply(&inp));
    let out = params.l2.apply(&a);
    (
        HeadCache { inp, a },
        Vector3::new(out[0], out[1], out[2]),
    )
}

/// Forward pass returning predictions and the activation cache for
/// [`backward`]. `standpoints` are per-residue frames (whole chain); only the
/// selected entries are read.
pub fn forward_cached(
    params: &ModelParams,
    feats: &Features,
    standpoints: &[Frame],
) -> Result<(Prediction, ForwardCache)> {
    let n = feats.node.len();
    if standpoints.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} standpoints for {} residues",
            standpoints.len(),
            n
        )));
    }
    if params.encoder.w.ncols() != NODE_FEATURES {
        return Err(Error::ShapeMismatch(format!(
            "encoder expects {} inputs, got width {}",
            params.encoder.w.ncols(),
            NODE_FEATURES
        )));
    }
    let h0: Vec<DVector<f64>> = feats
        .node
        .iter()
        .map(|f| tanh_vec(&params.encoder.apply(f)))
        .collect();
    let round1 = run_round(&params.rounds[0], &h0, feats);
    let round2 = run_round(&params.rounds[1], &round1.h_out, feats);

    let mut head_x = Vec::with_capacity(feats.selection.len());
    let mut head_r = Vec::with_capacity(feats.selection.len());
    let mut out_r = Vec::with_capacity(feats.selection.len());
    let mut x1 = Vec::with_capacity(feats.selection.len());
    let mut r1 = Vec::with_capacity(feats.selection.len());
    for &i in &feats.selection {
        if i >= n {
            return Err(Error::BadSelection(format!(
                "selection index {i} out of range"
            )));
        }
        let sp = &standpoints[i];
        let (cx, ox) = run_head(&params.head_x, &round2.h_out[i], &feats.time_emb);
        let (cr, or) = run_head(&params.head_r, &round2.h_out[i], &feats.time_emb);
        x1.push(sp.r.act(&ox) + sp.x);
        r1.push(sp.r * exp_rotvec(&or));
        head_x.push(cx);
        head_r.push(cr);
        out_r.push(or);
    }
    Ok((
        Prediction { x1, r1 },
        ForwardCache {
            h0,
            rounds: [round1, round2],
            head_x,
            head_r,
            out_r,
        },
    ))
}

/// Forward pass without keeping activations.
pub fn forward(
    params: &ModelParams,
    feats: &Features,
    standpoints: &[Frame],
) -> Result<Prediction> {
    forward_cached(params, feats, standpoints).map(|(p, _)| p)
}

/// Which frames the heads use as reference (the x0/r0 of the update
/// equations): the prior structure's, or the current flow state's.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Standpoint {
    #[default]
    Prior,
    State,
}

impl std::str::FromStr for Standpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(Standpoint::Prior),
            "state" => Ok(Standpoint::State),
            other => Err(Error::Config(format!(
                "unknown standpoint `{other}` (expected prior|state)"
            ))),
        }
    }
}

impl std::fmt::Display for Standpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Standpoint::Prior => "prior",
            Standpoint::State => "state",
        })
    }
}

/// Whole-chain standpoint frames for a forward pass: the chain's own frames,
/// with the selected residues replaced by the state's when `mode` is `State`.
pub fn standpoint_frames(
    chain: &BackboneChain,
    state: &FlowState,
    selection: &[usize],
    mode: Standpoint,
) -> Vec<Frame> {
    let mut frames: Vec<Frame> = chain.residues.iter().map(|r| r.frame).collect();
    if mode == Standpoint::State {
        for (s, &i) in selection.iter().enumerate() {
            frames[i] = state.frames[s];
        }
    }
    frames
}

/// Converts predicted frames to a vector field at the current state, with the
/// 1/(1-t) denominator clamped at eps_t.
pub fn predicted_vf(
    pred: &Prediction,
    state: &FlowState,
    eps_t: f64,
) -> Result<VectorFieldSample> {
    if pred.x1.len() != state.len() {
        return Err(Error::LengthMismatch {
            left: pred.x1.len(),
            right: state.len(),
        });
    }
    let denom = (1.0 - state.t).max(eps_t);
    let mut v_x = Vec::with_capacity(pred.x1.len());
    let mut v_r = Vec::with_capacity(pred.x1.len());
    for (s, frame) in state.frames.iter().enumerate() {
        v_x.push((pred.x1[s] - frame.x) / denom);
        let rel = log_rotation(&frame.r.between(&pred.r1[s]))?;
        v_r.push(TangentVector::new(rel / denom, frame.r));
    }
    Ok(VectorFieldSample { v_x, v_r })
}

fn head_backward(
    params: &HeadParams,
    cache: &HeadCache,
    d_out: &Vector3<f64>,
    grads: &mut HeadParams,
    d_h: &mut DVector<f64>,
) {
    let d_out = DVector::from_column_slice(&[d_out.x, d_out.y, d_out.z]);
    grads.l2.w += &d_out * cache.a.transpose();
    grads.l2.b += &d_out;
    let d_a = params.l2.w.transpose() * &d_out;
    let d_pre = d_a.zip_map(&cache.a, |g, a| g * (1.0 - a * a));
    grads.l1.w += &d_pre * cache.inp.transpose();
    grads.l1.b += &d_pre;
    let d_inp = params.l1.w.transpose() * &d_pre;
    let hd = d_h.nrows();
    *d_h += d_inp.rows(0, hd);
}

fn round_backward(
    params: &RoundParams,
    cache: &RoundCache,
    feats: &Features,
    d_h_out: &[DVector<f64>],
    grads: &mut RoundParams,
) -> Vec<DVector<f64>> {
    let n = cache.h_in.len();
    let hd = cache.h_in[0].nrows();
    let mut d_h_in: Vec<DVector<f64>> = (0..n).map(|_| DVector::zeros(hd)).collect();
    let mut d_mean: Vec<DVector<f64>> = (0..n).map(|_| DVector::zeros(hd)).collect();

    for i in 0..n {
        let d_pre = d_h_out[i].zip_map(&cache.h_out[i], |g, y| g * (1.0 - y * y));
        let mut u = DVector::zeros(2 * hd);
        u.rows_mut(0, hd).copy_from(&cache.h_in[i]);
        u.rows_mut(hd, hd).copy_from(&cache.mean[i]);
        grads.node.w += &d_pre * u.transpose();
        grads.node.b += &d_pre;
        let d_u = params.node.w.transpose() * &d_pre;
        d_h_in[i] += d_u.rows(0, hd);
        d_mean[i] += d_u.rows(hd, hd);
    }

    for i in 0..n {
        let nbrs = &feats.neighbors[i];
        if nbrs.is_empty() {
            continue;
        }
        let scale = 1.0 / nbrs.len() as f64;
        for (idx, &j) in nbrs.iter().enumerate() {
            let m = &cache.msgs[i][idx];
            let d_m = &d_mean[i] * scale;
            let d_pre = d_m.zip_map(m, |g, y| g * (1.0 - y * y));
            let mut z = DVector::zeros(2 * hd + PAIR_FEATURES);
            z.rows_mut(0, hd).copy_from(&cache.h_in[i]);
            z.rows_mut(hd, hd).copy_from(&cache.h_in[j]);
            z.rows_mut(2 * hd, PAIR_FEATURES)
                .copy_from(&feats.pair[i][idx]);
            grads.edge.w += &d_pre * z.transpose();
            grads.edge.b += &d_pre;
            let d_z = params.edge.w.transpose() * &d_pre;
            d_h_in[i] += d_z.rows(0, hd);
            d_h_in[j] += d_z.rows(hd, hd);
        }
    }
    d_h_in
}

/// Reverse-mode gradients of a scalar loss through the whole network.
///
/// Upstream gradients arrive per selected residue: `d_x1` against the
/// predicted position and `d_r1_raw` against the predicted rotation as raw
/// 3x3 entrywise derivatives (dL = sum G .* dR). The rotation chain runs
/// through the Rodrigues differential: with r1 = r0 exp(w),
/// dL/dw = J_r(w)^T * 2 vee(skew(r1^T G)).
pub fn backward(
    params: &ModelParams,
    feats: &Features,
    standpoints: &[Frame],
    cache: &ForwardCache,
    d_x1: &[Vector3<f64>],
    d_r1_raw: &[Matrix3<f64>],
) -> Result<ModelParams> {
    let n = feats.node.len();
    let sel = &feats.selection;
    if d_x1.len() != sel.len() || d_r1_raw.len() != sel.len() {
        return Err(Error::LengthMismatch {
            left: d_x1.len(),
            right: sel.len(),
        });
    }
    if cache.h0.len() != n {
        return Err(Error::NotCached);
    }
    let hd = params.dims.hidden;
    let mut grads = params.zeros_like();
    let mut d_h2: Vec<DVector<f64>> = (0..n).map(|_| DVector::zeros(hd)).collect();

    for (s, &i) in sel.iter().enumerate() {
        let sp = &standpoints[i];
        // x1 = r0 o_x + x0.
        let d_ox = sp.r.coact(&d_x1[s]);
        head_backward(&params.head_x, &cache.head_x[s], &d_ox, &mut grads.head_x, &mut d_h2[i]);

        // r1 = r0 exp(o_r): pull the raw matrix gradient back to the
        // rotation-vector output.
        let w = cache.out_r[s];
        let r1 = sp.r * exp_rotvec(&w);
        let a = r1.matrix().transpose() * d_r1_raw[s];
        let proj = vee(&(a - a.transpose())); // 2 vee(skew(A))
        let d_or = right_jacobian(&w).transpose() * proj;
        head_backward(&params.head_r, &cache.head_r[s], &d_or, &mut grads.head_r, &mut d_h2[i]);
    }

    let d_h1 = round_backward(&params.rounds[1], &cache.rounds[1], feats, &d_h2, &mut grads.rounds[1]);
    let d_h0 = round_backward(&params.rounds[0], &cache.rounds[0], feats, &d_h1, &mut grads.rounds[0]);

    for i in 0..n {
        let d_pre = d_h0[i].zip_map(&cache.h0[i], |g, y| g * (1.0 - y * y));
        grads.encoder.w += &d_pre * feats.node[i].transpose();
        grads.encoder.b += &d_pre;
    }
    Ok(grads)
}

/// Raw matrix gradient at `r_pred` equivalent to a body-frame tangent
/// gradient `g`: G = r_pred hat(g) / 2, so that dL = g . delta for
/// perturbations r_pred exp(hat(delta)).
pub fn tangent_to_raw_gradient(r_pred: &Rotation, g: &Vector3<f64>) -> Matrix3<f64> {
    r_pred.matrix() * hat(g) * 0.5
}
