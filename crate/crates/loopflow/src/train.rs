//! Training loop for the vector-field model and the combined gradient check.
//!
//! Each epoch walks the samples in a shuffled order. Per sample it draws a
//! time, interpolates prior and target (with tangent noise when gamma > 0),
//! runs the network, assembles the loss gradient against the predicted
//! endpoint frames, and accumulates parameter gradients; one optimizer step
//! is taken per `batch_size` samples on the batch mean. `batch_size = 1`
//! recovers plain per-sample stepping.

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LossMode, RunConfig};
use crate::energy::{
    all_indices, project_rotation_gradient, total_guidance_energy, EnergyParams,
};
use crate::error::{Error, Result};
use crate::flow::{
    adjacent_ca_loss_grads, aux_2d_loss_grads, conditional_vf, fm_loss_grads, full_loss,
    interpolate, noisy_interpolate, regression_loss_grads, regression_losses,
    tangent_grad_to_raw, AuxAtoms, AuxLossMode, FlowState, LossBreakdown,
    REGRESSION_ROTATION_WEIGHT,
};
use crate::frames::{BackboneChain, Frame, IDEAL};
use crate::model::adam::{adam_step, AdamState};
use crate::model::{
    backward, featurize, forward_cached, init_params, predicted_vf, standpoint_frames,
    ModelParams,
};
use crate::so3::exp_rotvec;
use crate::structure::RefinementProblem;

/// One training example: a chain in its prior conformation, the refined span
/// inside it, and the ground-truth frames for that span.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub chain: BackboneChain,
    pub selection: Vec<usize>,
    /// Target frame per selected residue, aligned with `selection`.
    pub target: Vec<Frame>,
}

/// Per-epoch mean losses, in CSV column order.
#[derive(Clone, Copy, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss_r3: f64,
    pub loss_so3: f64,
    pub loss_2d: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,loss_r3,loss_so3,loss_2d,total";

impl EpochRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.epoch, self.loss_r3, self.loss_so3, self.loss_2d, self.total
        )
    }
}

/// [N, CA, C] world positions of a frame under the idealized geometry.
fn aux_atoms(f: &Frame) -> AuxAtoms {
    [f.r.act(&IDEAL.n) + f.x, f.x, f.r.act(&IDEAL.c) + f.x]
}

/// Splits a refinement problem with a known target into per-chain training
/// samples; chains without selected residues contribute none.
pub fn build_samples(problem: &RefinementProblem) -> Result<Vec<TrainSample>> {
    let target = problem
        .target
        .as_ref()
        .ok_or_else(|| Error::Manifest("training requires target structures".into()))?;
    let resolved = crate::structure::resolve_selections(&problem.prior, &problem.selections)?;
    let mut samples = Vec::new();
    for (c, selection) in resolved.into_iter().enumerate() {
        if selection.is_empty() {
            continue;
        }
        let target_frames = selection
            .iter()
            .map(|&i| target[c].residues[i].frame)
            .collect();
        samples.push(TrainSample {
            chain: problem.prior[c].clone(),
            selection,
            target: target_frames,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(samples)
}

/// Loss and parameter gradients for one sample at a prepared flow state.
///
/// Two objectives share this path. `loss=fm` trains on the flow-matching
/// residual, which reaches the predicted frames through
/// `v_x = (x1 - x_t)/(1-t)` and `v_r = log(r_t^T r1)/(1-t)`. `loss=regression`
/// trains on the endpoint losses instead (translation weight 1.0, rotation
/// weight 0.5) — the 1/(1-t) amplification of the residual makes its
/// gradients heavy-tailed in t, which stalls Adam, so the residual serves
/// only as a diagnostic there. Both objectives add the auxiliary 2D loss
/// once t clears its gate. The returned breakdown reports the residual
/// components in `loss_r3`/`loss_so3` either way; `total` is the quantity
/// actually optimized.
pub fn loss_and_grads(
    params: &ModelParams,
    sample: &TrainSample,
    state: &FlowState,
    cfg: &RunConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    let feats = featurize(&sample.chain, state, &sample.selection, state.t)?;
    let standpoints = standpoint_frames(&sample.chain, state, &sample.selection, cfg.standpoint);
    let (pred, cache) = forward_cached(params, &feats, &standpoints)?;

    let vf_pred = predicted_vf(&pred, state, cfg.eps_t)?;
    let vf_true = conditional_vf(state, &sample.target, cfg.eps_t)?;
    let pred_atoms: Vec<AuxAtoms> = pred
        .x1
        .iter()
        .zip(&pred.r1)
        .map(|(x, r)| aux_atoms(&Frame { x: *x, r: *r }))
        .collect();
    let true_atoms: Vec<AuxAtoms> = sample.target.iter().map(aux_atoms).collect();

    let mut breakdown = full_loss(
        &vf_pred,
        &vf_true,
        &pred_atoms,
        &true_atoms,
        state.t,
        cfg.lambda,
        cfg.aux_loss,
    )?;

    let n = sample.selection.len();
    let mut d_x1: Vec<Vector3<f64>> = vec![Vector3::zeros(); n];
    let mut d_r1: Vec<Matrix3<f64>> = vec![Matrix3::zeros(); n];
    match cfg.loss {
        LossMode::Fm => {
            let denom = (1.0 - state.t).max(cfg.eps_t);
            let (g_vx, g_vr) = fm_loss_grads(&vf_pred, &vf_true)?;
            for s in 0..n {
                d_x1[s] = g_vx[s] / denom;
                let d_psi = g_vr[s] / denom;
                d_r1[s] = tangent_grad_to_raw(&state.frames[s].r, &pred.r1[s], &d_psi)?;
            }
        }
        LossMode::Regression => {
            let true_x: Vec<_> = sample.target.iter().map(|f| f.x).collect();
            let true_r: Vec<_> = sample.target.iter().map(|f| f.r).collect();
            let (loss_x, loss_r) = regression_losses(&pred.x1, &pred.r1, &true_x, &true_r)?;
            // Swap the optimized part of the total; keep the diagnostic
            // residual columns.
            breakdown.total += loss_x + REGRESSION_ROTATION_WEIGHT * loss_r
                - breakdown.loss_r3
                - breakdown.loss_so3;
            let (gx, gr_raw) = regression_loss_grads(&pred.x1, &pred.r1, &true_x, &true_r)?;
            for s in 0..n {
                d_x1[s] = gx[s];
                d_r1[s] = REGRESSION_ROTATION_WEIGHT * gr_raw[s];
            }
        }
    }

    // The auxiliary term enters the total only past t = 0.5; its gradient
    // follows the same gate. Atom positions are a = r1 L + x1 with constant
    // local coordinates L, so dL/dx1 sums the atom gradients and dL/dr1
    // collects their outer products with L.
    if state.t > 0.5 && cfg.lambda > 0.0 {
        match cfg.aux_loss {
            AuxLossMode::Pairwise2d => {
                let (_, atom_grads) = aux_2d_loss_grads(&pred_atoms, &true_atoms)?;
                let locals = [IDEAL.n, IDEAL.ca, IDEAL.c];
                for s in 0..n {
                    for (k, local) in locals.iter().enumerate() {
                        let g = cfg.lambda * atom_grads[s][k];
                        d_x1[s] += g;
                        d_r1[s] += g * local.transpose();
                    }
                }
            }
            AuxLossMode::AdjacentCa => {
                let pred_ca: Vec<_> = pred_atoms.iter().map(|a| a[1]).collect();
                let true_ca: Vec<_> = true_atoms.iter().map(|a| a[1]).collect();
                let (_, ca_grads) = adjacent_ca_loss_grads(&pred_ca, &true_ca)?;
                for s in 0..n {
                    d_x1[s] += cfg.lambda * ca_grads[s];
                }
            }
        }
    }

    let grads = backward(params, &feats, &standpoints, &cache, &d_x1, &d_r1)?;
    Ok((breakdown, grads))
}

fn add_params(acc: &mut ModelParams, g: &ModelParams) {
    let gs: Vec<&[f64]> = g.tensor_views().into_iter().map(|(_, _, _, d)| d).collect();
    for (a, b) in acc.tensor_slices_mut().into_iter().zip(gs) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn scale_params(p: &mut ModelParams, s: f64) {
    for sl in p.tensor_slices_mut() {
        for x in sl {
            *x *= s;
        }
    }
}

/// Trains a fresh model on the samples and returns it with the per-epoch
/// loss means. Deterministic in `cfg.seed`; `epochs = 0` returns the
/// untouched initialization.
pub fn train(samples: &[TrainSample], cfg: &RunConfig) -> Result<(ModelParams, Vec<EpochRow>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut params = init_params(cfg.seed, cfg.model_dims());
    let mut adam = AdamState::new(&params);
    let adam_cfg = cfg.adam_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut batch = params.zeros_like();
        let mut in_batch = 0usize;
        for &si in &order {
            let sample = &samples[si];
            let t = rng.random::<f64>() * (1.0 - cfg.eps_t);
            let prior_frames: Vec<Frame> = sample
                .selection
                .iter()
                .map(|&i| sample.chain.residues[i].frame)
                .collect();
            let state = if cfg.gamma > 0.0 {
                noisy_interpolate(
                    &prior_frames,
                    &sample.target,
                    t,
                    cfg.gamma,
                    cfg.gamma,
                    &mut rng,
                )?
            } else {
                interpolate(&prior_frames, &sample.target, t)?
            };
            let (breakdown, grads) = loss_and_grads(&params, sample, &state, cfg)?;
            sums[0] += breakdown.loss_r3;
            sums[1] += breakdown.loss_so3;
            sums[2] += breakdown.loss_2d;
            sums[3] += breakdown.total;
            add_params(&mut batch, &grads);
            in_batch += 1;
            if in_batch == cfg.batch_size {
                scale_params(&mut batch, 1.0 / in_batch as f64);
                adam_step(&mut params, &batch, &mut adam, &adam_cfg);
                batch = params.zeros_like();
                in_batch = 0;
            }
        }
        if in_batch > 0 {
            scale_params(&mut batch, 1.0 / in_batch as f64);
            adam_step(&mut params, &batch, &mut adam, &adam_cfg);
        }
        let m = samples.len() as f64;
        rows.push(EpochRow {
            epoch,
            loss_r3: sums[0] / m,
            loss_so3: sums[1] / m,
            loss_2d: sums[2] / m,
            total: sums[3] / m,
        });
    }
    Ok((params, rows))
}

/// Thresholds of the gradient check: the analytic energy gradient must agree
/// with central differences to 1e-5 relative, the model backward pass to
/// 1e-4 under a floored relative error.
pub const ENERGY_GRAD_TOL: f64 = 1e-5;
pub const MODEL_GRAD_TOL: f64 = 1e-4;

/// Fault-injection hook for the gradient check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCheckCorrupt {
    None,
    /// Offsets one analytic energy gradient component before comparing.
    Energy,
    /// Offsets one analytic model gradient component before comparing.
    Model,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub energy_err: f64,
    pub model_err: f64,
    /// Component with the worst error, e.g. `energy grad_x[2].1` or
    /// `model round1.edge.w[17]`.
    pub worst: String,
    pub pass: bool,
}

fn random_chain<R: Rng + ?Sized>(n: usize, rng: &mut R) -> BackboneChain {
    use crate::frames::{ResidueBackbone, ResidueId, Restype};
    let residues = (0..n)
        .map(|i| {
            let x = Vector3::new(
                3.8 * i as f64 + rng.random_range(-0.5..0.5),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let w = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            ResidueBackbone {
                frame: Frame {
                    x,
                    r: exp_rotvec(&w),
                },
                psi: rng.random_range(-3.0..3.0),
                restype: Restype::Ala,
            }
        })
        .collect();
    let ids = (0..n).map(|i| ResidueId::new(i as i32 + 1)).collect();
    BackboneChain::new('A', residues, ids).expect("valid random chain")
}

/// Relative error with a floor on the denominator; the floor keeps the
/// quotient meaningful where both gradients sit at the finite-difference
/// noise level.  Pairs that both vanish to within that noise compare equal,
/// matching [`finite_difference_check`]'s convention.
fn floored_rel(analytic: f64, fd: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(fd.abs());
    if denom <= 1e-8 {
        return 0.0;
    }
    (analytic - fd).abs() / denom.max(floor)
}

/// Energy finite-difference sweep with per-component naming and optional
/// fault injection. Mirrors [`finite_difference_check`]'s comparison.
fn energy_check(seed: u64, corrupt: bool) -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = random_chain(8, &mut rng);
    let selection = all_indices(chain.len());
    let params = EnergyParams::default();
    let h = 1e-5;
    let (_, mut grads) = total_guidance_energy(&chain, &selection, &params)?;
    if corrupt {
        grads.grad_x[0].x += 1e-2;
    }
    let energy_of =
        |c: &BackboneChain| -> Result<f64> { Ok(total_guidance_energy(c, &selection, &params)?.0) };
    // Same scale-dependent floor as finite_difference_check.
    let mut scale = 0.0f64;
    for &i in &selection {
        let proj = project_rotation_gradient(&chain.residues[i].frame.r, &grads.grad_r[i]);
        for k in 0..3 {
            scale = scale.max(grads.grad_x[i][k].abs());
            scale = scale.max((2.0 * proj.v[k]).abs());
        }
    }
    let floor = crate::energy::GRADIENT_SCALE_FLOOR * scale;
    let mut worst = (0.0f64, String::new());
    for &i in &selection {
        for k in 0..3 {
            let mut plus = chain.clone();
            plus.residues[i].frame.x[k] += h;
            let mut minus = chain.clone();
            minus.residues[i].frame.x[k] -= h;
            let fd = (energy_of(&plus)? - energy_of(&minus)?) / (2.0 * h);
            let err = floored_rel(grads.grad_x[i][k], fd, floor);
            if err > worst.0 {
                worst = (err, format!("energy grad_x[{i}].{k}"));
            }
        }
        let proj = project_rotation_gradient(&chain.residues[i].frame.r, &grads.grad_r[i]);
        for k in 0..3 {
            let mut axis = Vector3::zeros();
            axis[k] = h;
            let mut plus = chain.clone();
            plus.residues[i].frame.r = chain.residues[i].frame.r * exp_rotvec(&axis);
            let mut minus = chain.clone();
            minus.residues[i].frame.r = chain.residues[i].frame.r * exp_rotvec(&-axis);
            let fd = (energy_of(&plus)? - energy_of(&minus)?) / (2.0 * h);
            // The skew-pairing convention doubles the directional derivative.
            let err = floored_rel(2.0 * proj.v[k], fd, floor);
            if err > worst.0 {
                worst = (err, format!("energy grad_r[{i}].{k}"));
            }
        }
    }
    Ok(worst)
}

/// Builds a small training sample and configuration for the model check.
fn gradcheck_fixture(seed: u64) -> Result<(TrainSample, FlowState, RunConfig)> {
    let mut cfg = RunConfig::default();
    cfg.hidden = 4;
    cfg.head_hidden = 4;
    cfg.seed = seed;
    let chain = crate::structure::helix_chain(6, 'A')?;
    let selection = vec![1, 2, 3, 4];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let target: Vec<Frame> = selection
        .iter()
        .map(|&i| {
            let f = chain.residues[i].frame;
            let w = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            let dx = Vector3::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
            );
            Frame {
                x: f.x + dx,
                r: f.r * exp_rotvec(&w),
            }
        })
        .collect();
    let prior: Vec<Frame> = selection.iter().map(|&i| chain.residues[i].frame).collect();
    // t past the gate so the auxiliary path participates.
    let state = interpolate(&prior, &target, 0.7)?;
    let sample = TrainSample {
        chain,
        selection,
        target,
    };
    Ok((sample, state, cfg))
}

/// Full parameter sweep of the model backward pass against central
/// differences of the training loss.
fn model_check(seed: u64, corrupt: bool) -> Result<(f64, String)> {
    let (sample, state, cfg) = gradcheck_fixture(seed)?;
    let params = init_params(seed.wrapping_add(1), cfg.model_dims());
    let (_, mut grads) = loss_and_grads(&params, &sample, &state, &cfg)?;
    if corrupt {
        grads.tensor_slices_mut()[0][0] += 1e-2;
    }
    let names: Vec<(&'static str, usize)> = grads
        .tensor_views()
        .into_iter()
        .map(|(name, _, _, d)| (name, d.len()))
        .collect();
    let flat: Vec<f64> = grads
        .tensor_views()
        .into_iter()
        .flat_map(|(_, _, _, d)| d.to_vec())
        .collect();
    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut idx = 0usize;
    for (ti, (name, len)) in names.iter().enumerate() {
        for k in 0..*len {
            let mut plus = params.clone();
            plus.tensor_slices_mut()[ti][k] += h;
            let mut minus = params.clone();
            minus.tensor_slices_mut()[ti][k] -= h;
            let lp = loss_and_grads(&plus, &sample, &state, &cfg)?.0.total;
            let lm = loss_and_grads(&minus, &sample, &state, &cfg)?.0.total;
            let fd = (lp - lm) / (2.0 * h);
            let err = floored_rel(flat[idx], fd, 1e-3);
            if err > worst.0 {
                worst = (err, format!("model {name}[{k}]"));
            }
            idx += 1;
        }
    }
    Ok(worst)
}

/// Runs both gradient checks and reports the worst offenders.
pub fn grad_check(seed: u64, corrupt: GradCheckCorrupt) -> Result<GradCheckReport> {
    let (energy_err, energy_worst) = energy_check(seed, corrupt == GradCheckCorrupt::Energy)?;
    let (model_err, model_worst) = model_check(seed, corrupt == GradCheckCorrupt::Model)?;
    let pass = energy_err < ENERGY_GRAD_TOL && model_err < MODEL_GRAD_TOL;
    // Name the side that is worse relative to its own threshold.
    let worst = if energy_err / ENERGY_GRAD_TOL >= model_err / MODEL_GRAD_TOL {
        energy_worst
    } else {
        model_worst
    };
    Ok(GradCheckReport {
        energy_err,
        model_err,
        worst,
        pass,
    })
}
