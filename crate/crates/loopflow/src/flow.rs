//! Interpolants, conditional vector fields, and training losses.
//!
//! States move along straight lines in position space and geodesics on SO(3);
//! the conditional fields are the constant velocities of those paths. Losses:
//! squared vector-field regression per component group, an auxiliary pairwise
//! backbone-distance loss gated to late times, and direct frame-regression
//! losses (L2 positions, cosine rotations). Each loss has a matching analytic
//! gradient used by the hand-written trainer.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::so3::{
    geodesic_interp, hat, log_rotation, right_jacobian_inv, rotation_metric_norm,
    sample_rotation_noise, so3_conditional_vf, Rotation, TangentVector,
};

/// Default time guard: training samples t in [0, 1 - EPS_T], inference clamps
/// the 1/(1-t) denominator at EPS_T.
pub const EPS_T: f64 = 1e-2;

/// Distance threshold of the auxiliary pairwise loss (A).
pub const AUX_DISTANCE_CUTOFF: f64 = 6.0;

/// Weight of the rotation term in the combined regression objective.
pub const REGRESSION_ROTATION_WEIGHT: f64 = 0.5;

/// Interpolated state of the refined residues at one time.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub frames: Vec<Frame>,
}

impl FlowState {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Velocities per refined residue: translation in A per unit time, rotation as
/// a body-frame tangent vector in rad per unit time.
#[derive(Clone, Debug)]
pub struct VectorFieldSample {
    pub v_x: Vec<Vector3<f64>>,
    pub v_r: Vec<TangentVector>,
}

/// Which auxiliary structure loss the objective uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AuxLossMode {
    /// Masked pairwise distances over all cross-residue backbone-atom pairs.
    #[default]
    Pairwise2d,
    /// Adjacent C-alpha distances only.
    AdjacentCa,
}

impl std::fmt::Display for AuxLossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AuxLossMode::Pairwise2d => "pairwise2d",
            AuxLossMode::AdjacentCa => "adjacent_ca",
        })
    }
}

impl std::str::FromStr for AuxLossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise2d" | "2d" => Ok(AuxLossMode::Pairwise2d),
            "adjacent_ca" => Ok(AuxLossMode::AdjacentCa),
            other => Err(Error::Config(format!("unknown aux_loss mode '{other}'"))),
        }
    }
}

/// The training objective, split by term.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub loss_r3: f64,
    pub loss_so3: f64,
    pub loss_2d: f64,
    /// loss_r3 + loss_so3 + lambda * [t > 0.5] * loss_2d.
    pub total: f64,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("interpolation time {t} outside [0, 1]")));
    }
    Ok(())
}

/// Deterministic interpolant: x_t = (1-t) x0 + t x1, r_t along the geodesic.
pub fn interpolate(prior: &[Frame], target: &[Frame], t: f64) -> Result<FlowState> {
    check_lengths(prior.len(), target.len())?;
    check_time(t)?;
    let frames = prior
        .iter()
        .zip(target)
        .map(|(p, q)| {
            Ok(Frame {
                x: (1.0 - t) * p.x + t * q.x,
                r: geodesic_interp(&p.r, &q.r, t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowState { t, frames })
}

/// Stochastic interpolant: the deterministic state plus Gaussian noise with
/// per-component variance gamma^2 t(1-t) (positions) and tangent variance
/// gamma_r^2 t(1-t) (rotations).
///
/// Draws, per residue in order, three position normals then three rotation
/// normals; a zero standard deviation skips its draws entirely, so gamma = 0
/// or boundary times reproduce [`interpolate`] bitwise without consuming the
/// RNG.
pub fn noisy_interpolate<R: Rng + ?Sized>(
    prior: &[Frame],
    target: &[Frame],
    t: f64,
    gamma_x: f64,
    gamma_r: f64,
    rng: &mut R,
) -> Result<FlowState> {
    let mut state = interpolate(prior, target, t)?;
    let var_t = t * (1.0 - t);
    let sd_x = gamma_x * var_t.sqrt();
    let var_r = gamma_r * gamma_r * var_t;
    for frame in &mut state.frames {
        if sd_x > 0.0 {
            let xi = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            frame.x += sd_x * xi;
        }
        frame.r = sample_rotation_noise(&frame.r, var_r, rng);
    }
    Ok(state)
}

/// Conditional field toward the target: v_x = (x1 - x_t)/(1-t),
/// v_r = log(r_t^T r1)/(1-t) in body coordinates at r_t.
pub fn conditional_vf(
    state: &FlowState,
    target: &[Frame],
    eps_t: f64,
) -> Result<VectorFieldSample> {
    check_lengths(state.len(), target.len())?;
    let t = state.t;
    if 1.0 - t < eps_t {
        return Err(Error::TimeTooClose { t, eps_t });
    }
    let mut v_x = Vec::with_capacity(target.len());
    let mut v_r = Vec::with_capacity(target.len());
    for (st, tg) in state.frames.iter().zip(target) {
        v_x.push((tg.x - st.x) / (1.0 - t));
        v_r.push(so3_conditional_vf(&st.r, &tg.r, t, eps_t)?);
    }
    Ok(VectorFieldSample { v_x, v_r })
}

/// Mean squared residual of the two vector-field components.
pub fn fm_loss(pred: &VectorFieldSample, target: &VectorFieldSample) -> Result<(f64, f64)> {
    check_lengths(pred.v_x.len(), target.v_x.len())?;
    check_lengths(pred.v_r.len(), target.v_r.len())?;
    let n = pred.v_x.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let loss_r3 = pred
        .v_x
        .iter()
        .zip(&target.v_x)
        .map(|(p, q)| (p - q).norm_squared())
        .sum::<f64>()
        / n as f64;
    let loss_so3 = pred
        .v_r
        .iter()
        .zip(&target.v_r)
        .map(|(p, q)| {
            let d = TangentVector::new(p.v - q.v, p.base);
            rotation_metric_norm(&d).powi(2)
        })
        .sum::<f64>()
        / n as f64;
    Ok((loss_r3, loss_so3))
}

/// Gradients of [`fm_loss`] with respect to the predicted field:
/// d loss_r3 / d v_x_i and d loss_so3 / d v_r_i.
pub fn fm_loss_grads(
    pred: &VectorFieldSample,
    target: &VectorFieldSample,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    check_lengths(pred.v_x.len(), target.v_x.len())?;
    check_lengths(pred.v_r.len(), target.v_r.len())?;
    let n = pred.v_x.len().max(1) as f64;
    let gx = pred
        .v_x
        .iter()
        .zip(&target.v_x)
        .map(|(p, q)| 2.0 / n * (p - q))
        .collect();
    let gr = pred
        .v_r
        .iter()
        .zip(&target.v_r)
        .map(|(p, q)| 2.0 / n * (p.v - q.v))
        .collect();
    Ok((gx, gr))
}

/// Backbone heavy atoms [N, Ca, C] of one residue for the auxiliary loss.
pub type AuxAtoms = [Vector3<f64>; 3];

/// Iterates (residue i, atom a, residue j, atom b, true distance, pred
/// distance) over the masked cross-residue pairs; `f` returns nothing.
fn for_masked_pairs(
    pred: &[AuxAtoms],
    truth: &[AuxAtoms],
    mut f: impl FnMut(usize, usize, usize, usize, f64, f64),
) -> usize {
    let n = truth.len();
    let mut masked = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            for a in 0..3 {
                for b in 0..3 {
                    let d_true = (truth[i][a] - truth[j][b]).norm();
                    if d_true < AUX_DISTANCE_CUTOFF {
                        masked += 1;
                        let d_pred = (pred[i][a] - pred[j][b]).norm();
                        f(i, a, j, b, d_true, d_pred);
                    }
                }
            }
        }
    }
    masked
}

/// Auxiliary pairwise-distance loss over cross-residue backbone-atom pairs.
///
/// Pairs are unordered (each atom pair counted once) and the mask comes from
/// the TRUE distances only: ||masked (D_true - D_pred)||_2 / (masked - N).
pub fn aux_2d_loss(pred: &[AuxAtoms], truth: &[AuxAtoms]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let n = truth.len();
    let mut sum_sq = 0.0;
    let masked = for_masked_pairs(pred, truth, |_, _, _, _, dt, dp| {
        sum_sq += (dt - dp) * (dt - dp);
    });
    if masked <= n {
        return Err(Error::MaskDegenerate {
            masked,
            residues: n,
        });
    }
    Ok(sum_sq.sqrt() / (masked - n) as f64)
}

/// [`aux_2d_loss`] plus its gradient with respect to every predicted atom.
///
/// At a perfect match the square root is not differentiable; the returned
/// subgradient is zero there.
pub fn aux_2d_loss_grads(
    pred: &[AuxAtoms],
    truth: &[AuxAtoms],
) -> Result<(f64, Vec<AuxAtoms>)> {
    let loss = aux_2d_loss(pred, truth)?;
    let n = truth.len();
    let mut grads = vec![[Vector3::zeros(); 3]; n];
    if loss == 0.0 {
        return Ok((loss, grads));
    }
    let mut sum_sq = 0.0;
    let masked = for_masked_pairs(pred, truth, |_, _, _, _, dt, dp| {
        sum_sq += (dt - dp) * (dt - dp);
    });
    // d loss / d d_pred(pair) = -(d_true - d_pred) / (sqrt(sum_sq) * (masked - n))
    let scale = 1.0 / (sum_sq.sqrt() * (masked - n) as f64);
    for_masked_pairs(pred, truth, |i, a, j, b, dt, dp| {
        if dp <= 0.0 {
            return;
        }
        let g = -(dt - dp) * scale;
        let u = (pred[i][a] - pred[j][b]) / dp;
        grads[i][a] += g * u;
        grads[j][b] -= g * u;
    });
    Ok((loss, grads))
}

/// Simplified auxiliary loss: adjacent C-alpha distances, no mask,
/// sqrt(sum of squared deviations) / (N - 1).
pub fn adjacent_ca_loss(pred_ca: &[Vector3<f64>], true_ca: &[Vector3<f64>]) -> Result<f64> {
    check_lengths(pred_ca.len(), true_ca.len())?;
    let n = true_ca.len();
    if n < 2 {
        return Err(Error::MaskDegenerate {
            masked: 0,
            residues: n,
        });
    }
    let sum_sq: f64 = (0..n - 1)
        .map(|i| {
            let dt = (true_ca[i] - true_ca[i + 1]).norm();
            let dp = (pred_ca[i] - pred_ca[i + 1]).norm();
            (dt - dp) * (dt - dp)
        })
        .sum();
    Ok(sum_sq.sqrt() / (n - 1) as f64)
}

/// [`adjacent_ca_loss`] plus its gradient with respect to predicted positions.
pub fn adjacent_ca_loss_grads(
    pred_ca: &[Vector3<f64>],
    true_ca: &[Vector3<f64>],
) -> Result<(f64, Vec<Vector3<f64>>)> {
    let loss = adjacent_ca_loss(pred_ca, true_ca)?;
    let n = true_ca.len();
    let mut grads = vec![Vector3::zeros(); n];
    if loss == 0.0 {
        return Ok((loss, grads));
    }
    let sum_sq = (loss * (n - 1) as f64).powi(2);
    let scale = 1.0 / (sum_sq.sqrt() * (n - 1) as f64);
    for i in 0..n - 1 {
        let dt = (true_ca[i] - true_ca[i + 1]).norm();
        let diff = pred_ca[i] - pred_ca[i + 1];
        let dp = diff.norm();
        if dp <= 0.0 {
            continue;
        }
        let g = -(dt - dp) * scale;
        let u = diff / dp;
        grads[i] += g * u;
        grads[i + 1] -= g * u;
    }
    Ok((loss, grads))
}

/// Full objective: vector-field terms plus the late-time auxiliary loss.
/// The auxiliary loss is always computed; the indicator only gates whether it
/// enters the total.
pub fn full_loss(
    pred: &VectorFieldSample,
    target: &VectorFieldSample,
    pred_atoms: &[AuxAtoms],
    true_atoms: &[AuxAtoms],
    t: f64,
    lambda: f64,
    mode: AuxLossMode,
) -> Result<LossBreakdown> {
    check_time(t)?;
    let (loss_r3, loss_so3) = fm_loss(pred, target)?;
    let loss_2d = match mode {
        AuxLossMode::Pairwise2d => aux_2d_loss(pred_atoms, true_atoms)?,
        AuxLossMode::AdjacentCa => {
            let pred_ca: Vec<_> = pred_atoms.iter().map(|a| a[1]).collect();
            let true_ca: Vec<_> = true_atoms.iter().map(|a| a[1]).collect();
            adjacent_ca_loss(&pred_ca, &true_ca)?
        }
    };
    let gate = if t > 0.5 { 1.0 } else { 0.0 };
    Ok(LossBreakdown {
        loss_r3,
        loss_so3,
        loss_2d,
        total: loss_r3 + loss_so3 + lambda * gate * loss_2d,
    })
}

/// Direct frame-regression losses: mean Euclidean distance for positions and
/// the cosine-embedding loss on flattened rotation matrices,
/// 1 - tr(r_pred^T r_true)/3, averaged over residues.
pub fn regression_losses(
    pred_x: &[Vector3<f64>],
    pred_r: &[Rotation],
    true_x: &[Vector3<f64>],
    true_r: &[Rotation],
) -> Result<(f64, f64)> {
    check_lengths(pred_x.len(), true_x.len())?;
    check_lengths(pred_r.len(), true_r.len())?;
    check_lengths(pred_x.len(), pred_r.len())?;
    let n = pred_x.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let loss_x = pred_x
        .iter()
        .zip(true_x)
        .map(|(p, q)| (p - q).norm())
        .sum::<f64>()
        / n as f64;
    // Flattened rotations have norm sqrt(3), so cosine similarity reduces to
    // tr(p^T q) / 3.
    let loss_r = pred_r
        .iter()
        .zip(true_r)
        .map(|(p, q)| 1.0 - (p.matrix().transpose() * q.matrix()).trace() / 3.0)
        .sum::<f64>()
        / n as f64;
    Ok((loss_x, loss_r))
}

/// Gradients of [`regression_losses`]: d loss_x / d pred_x as vectors and
/// d loss_r / d pred_r as raw 3x3 matrices (entrywise derivatives).
///
/// The position distance is not differentiable at zero; the subgradient there
/// is zero.
pub fn regression_loss_grads(
    pred_x: &[Vector3<f64>],
    pred_r: &[Rotation],
    true_x: &[Vector3<f64>],
    true_r: &[Rotation],
) -> Result<(Vec<Vector3<f64>>, Vec<Matrix3<f64>>)> {
    check_lengths(pred_x.len(), true_x.len())?;
    check_lengths(pred_r.len(), true_r.len())?;
    let n = pred_x.len().max(1) as f64;
    let gx = pred_x
        .iter()
        .zip(true_x)
        .map(|(p, q)| {
            let diff = p - q;
            let d = diff.norm();
            if d <= 1e-12 {
                Vector3::zeros()
            } else {
                diff / (d * n)
            }
        })
        .collect();
    let gr = true_r
        .iter()
        .map(|q| -q.matrix() / (3.0 * n))
        .collect();
    Ok((gx, gr))
}

/// Converts a loss gradient with respect to a predicted tangent coordinate
/// psi = log(base^T r_pred) into a raw matrix gradient at r_pred, such that
/// dL = <G, d r_pred> entrywise.
pub fn tangent_grad_to_raw(
    base: &Rotation,
    r_pred: &Rotation,
    d_psi: &Vector3<f64>,
) -> Result<Matrix3<f64>> {
    let psi = log_rotation(&base.between(r_pred))?;
    // Body perturbation delta at r_pred maps to d psi = J_r^{-1}(psi) delta;
    // G = r_pred hat(g)/2 realizes dL = g . delta for g = J_r^{-T} d psi.
    let g = right_jacobian_inv(&psi).transpose() * d_psi;
    Ok(r_pred.matrix() * hat(&g) * 0.5)
}
