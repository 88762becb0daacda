//! Structure-level plumbing: CDR selections, refinement problems, direct
//! backbone RMSD, and synthetic prior/target generation.
//!
//! A "structure" here is a set of [`BackboneChain`]s sharing one global
//! coordinate frame.  CDR loops are designated by residue-number ranges
//! (`"H:95-102"`), never by a numbering-scheme engine.  RMSD is the raw
//! 4-atom formula with no superposition: the framework region is fixed in
//! a shared frame, so direct comparison is the meaningful one.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::frames::{
    atoms_to_frame, dihedral, frame_to_atoms, BackboneAtoms, BackboneChain, ResidueBackbone,
    Restype, DEFAULT_PSI, IDEAL,
};
use crate::so3::sample_rotation_noise;

/// One CDR designation: an inclusive residue-number range on a chain.
///
/// Surface syntax is `chain:start-end`, e.g. `"H:95-102"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub chain_id: char,
    pub start: i32,
    pub end: i32,
}

impl Selection {
    /// Indices of this chain's residues whose number falls in the range.
    /// Insertion codes ride along: every icode variant of an in-range
    /// number is included.
    pub fn resolve(&self, chain: &BackboneChain) -> Vec<usize> {
        chain
            .residue_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| id.number >= self.start && id.number <= self.end)
            .map(|(i, _)| i)
            .collect()
    }
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::BadSelection(format!("`{s}` (expected chain:start-end)"));
        let (chain, range) = s.split_once(':').ok_or_else(bad)?;
        let mut chars = chain.chars();
        let chain_id = chars.next().ok_or_else(bad)?;
        if chars.next().is_some() {
            return Err(bad());
        }
        // Split on the last '-' so negative residue numbers keep working.
        let (start, end) = range.rsplit_once('-').ok_or_else(bad)?;
        let start: i32 = start.parse().map_err(|_| bad())?;
        let end: i32 = end.parse().map_err(|_| bad())?;
        if start > end {
            return Err(Error::BadSelection(format!(
                "`{s}` (start {start} exceeds end {end})"
            )));
        }
        Ok(Selection { chain_id, start, end })
    }
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}-{}", self.chain_id, self.start, self.end)
    }
}

/// Find a chain by identifier within a structure set.
pub fn find_chain(chains: &[BackboneChain], chain_id: char) -> Option<&BackboneChain> {
    chains.iter().find(|c| c.chain_id == chain_id)
}

/// Resolve selections to per-chain sorted index sets (parallel to `chains`;
/// chains not named by any selection get an empty set).  Overlapping
/// selections on one chain merge.
///
/// Errors if a selection names an absent chain or resolves to no residues.
pub fn resolve_selections(
    chains: &[BackboneChain],
    selections: &[Selection],
) -> Result<Vec<Vec<usize>>> {
    let mut per_chain: Vec<Vec<usize>> = vec![Vec::new(); chains.len()];
    for sel in selections {
        let pos = chains
            .iter()
            .position(|c| c.chain_id == sel.chain_id)
            .ok_or_else(|| Error::SelectionMismatch(format!("no chain `{}` for {sel}", sel.chain_id)))?;
        let idx = sel.resolve(&chains[pos]);
        if idx.is_empty() {
            return Err(Error::SelectionMismatch(format!("{sel} selects no residues")));
        }
        per_chain[pos].extend(idx);
    }
    for set in &mut per_chain {
        set.sort_unstable();
        set.dedup();
    }
    Ok(per_chain)
}

/// Gaussian perturbation spec for synthetic priors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Positional std per coordinate (A).
    pub sigma_x: f64,
    /// Rotational tangent std per axis (rad).
    pub sigma_r: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_x >= 0.0 && self.sigma_x.is_finite())
            || !(self.sigma_r >= 0.0 && self.sigma_r.is_finite())
        {
            return Err(Error::Config(format!(
                "noise stds must be finite and non-negative (sigma_x {}, sigma_r {})",
                self.sigma_x, self.sigma_r
            )));
        }
        Ok(())
    }
}

/// A refinement task: prior chains, optional ground-truth target chains,
/// and the CDR selections to refine.  Residues outside the selections are
/// context and are never moved.
#[derive(Clone, Debug)]
pub struct RefinementProblem {
    pub prior: Vec<BackboneChain>,
    pub target: Option<Vec<BackboneChain>>,
    pub selections: Vec<Selection>,
}

impl RefinementProblem {
    /// Validates that selections resolve and, when a target is present,
    /// that it mirrors the prior's chain layout and residue numbering.
    pub fn new(
        prior: Vec<BackboneChain>,
        target: Option<Vec<BackboneChain>>,
        selections: Vec<Selection>,
    ) -> Result<Self> {
        resolve_selections(&prior, &selections)?;
        if let Some(target) = &target {
            if target.len() != prior.len() {
                return Err(Error::SelectionMismatch(format!(
                    "prior has {} chains, target has {}",
                    prior.len(),
                    target.len()
                )));
            }
            for (p, t) in prior.iter().zip(target) {
                if p.chain_id != t.chain_id || p.residue_ids != t.residue_ids {
                    return Err(Error::SelectionMismatch(format!(
                        "chain `{}` numbering differs between prior and target",
                        p.chain_id
                    )));
                }
            }
        }
        Ok(RefinementProblem { prior, target, selections })
    }
}

/// Mean-square deviation over paired backbone atom sets (4 atoms each).
pub fn rmsd_from_atoms(a: &[BackboneAtoms], b: &[BackboneAtoms]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sq = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        sq += (pa.n - pb.n).norm_squared()
            + (pa.ca - pb.ca).norm_squared()
            + (pa.c - pb.c).norm_squared()
            + (pa.o - pb.o).norm_squared();
    }
    Ok((sq / (4 * a.len()) as f64).sqrt())
}

/// 4-atom backbone RMSD (N, Ca, C, O) over the selected residues, no
/// superposition.  Both structure sets must resolve the selections to the
/// same residue numbering.
pub fn rmsd_backbone(
    a: &[BackboneChain],
    b: &[BackboneChain],
    selections: &[Selection],
) -> Result<f64> {
    let mut atoms_a = Vec::new();
    let mut atoms_b = Vec::new();
    for sel in selections {
        let ca = find_chain(a, sel.chain_id)
            .ok_or_else(|| Error::SelectionMismatch(format!("no chain `{}` in left set", sel.chain_id)))?;
        let cb = find_chain(b, sel.chain_id)
            .ok_or_else(|| Error::SelectionMismatch(format!("no chain `{}` in right set", sel.chain_id)))?;
        let ia = sel.resolve(ca);
        let ib = sel.resolve(cb);
        let ids_a: Vec<_> = ia.iter().map(|&i| ca.residue_ids[i]).collect();
        let ids_b: Vec<_> = ib.iter().map(|&i| cb.residue_ids[i]).collect();
        if ids_a != ids_b {
            return Err(Error::SelectionMismatch(format!(
                "{sel} resolves to different residues in the two sets"
            )));
        }
        atoms_a.extend(ia.iter().map(|&i| frame_to_atoms(&ca.residues[i])));
        atoms_b.extend(ib.iter().map(|&i| frame_to_atoms(&cb.residues[i])));
    }
    if atoms_a.is_empty() {
        return Err(Error::SelectionMismatch("selections resolve to no residues".into()));
    }
    rmsd_from_atoms(&atoms_a, &atoms_b)
}

/// Perturb the selected residues of a target structure into a synthetic
/// prior: x gets iid per-coordinate Gaussian noise, r is composed with
/// `exp` of an iid Gaussian tangent.  Context residues are copied verbatim.
///
/// Draw order is fixed (chains in order, residues in index order; 3
/// position draws then 3 rotation draws per residue); a zero std consumes
/// no RNG draws, so `sigma_x = sigma_r = 0` returns the target bitwise.
pub fn synth_prior<R: Rng + ?Sized>(
    target: &[BackboneChain],
    selections: &[Selection],
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<BackboneChain>> {
    noise.validate()?;
    let per_chain = resolve_selections(target, selections)?;
    let mut out = target.to_vec();
    for (chain, idx) in out.iter_mut().zip(&per_chain) {
        for &i in idx {
            let res = &mut chain.residues[i];
            if noise.sigma_x > 0.0 {
                let xi = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                res.frame.x += noise.sigma_x * xi;
            }
            res.frame.r = sample_rotation_noise(&res.frame.r, noise.sigma_r * noise.sigma_r, rng);
        }
    }
    Ok(out)
}

// --- synthetic test-data generation -------------------------------------

/// Internal coordinates of the generated helix.  Bond lengths and junction
/// angles are chosen so that every bonded distance the guidance energy
/// scores (C-N, Ca-N, C-Ca) sits exactly at its rest value; torsions are
/// the standard alpha-helix (phi -57, psi -47, omega 180 degrees).
struct HelixGeometry {
    n_ca: f64,
    ca_c: f64,
    c_n: f64,
    /// N-Ca-C bond angle (rad).
    tau: f64,
    /// Ca-C-N junction angle (rad).
    ca_c_n: f64,
    /// C-N-Ca junction angle (rad).
    c_n_ca: f64,
    phi: f64,
    psi: f64,
    omega: f64,
}

fn helix_geometry() -> HelixGeometry {
    let p = EnergyParams::default();
    let n_ca = IDEAL.n.norm();
    let ca_c = IDEAL.c.norm();
    let c_n = p.d0_c_n;
    // Law of cosines: junction angles from the rest distances.
    let angle = |a: f64, b: f64, opposite: f64| ((a * a + b * b - opposite * opposite) / (2.0 * a * b)).acos();
    HelixGeometry {
        n_ca,
        ca_c,
        c_n,
        tau: angle(n_ca, ca_c, (IDEAL.n - IDEAL.c).norm()),
        ca_c_n: angle(ca_c, c_n, p.d0_ca_n),
        c_n_ca: angle(c_n, n_ca, p.d0_c_ca),
        phi: (-57.0f64).to_radians(),
        psi: (-47.0f64).to_radians(),
        omega: std::f64::consts::PI,
    }
}

/// Natural-extension-reference-frame placement: the atom at distance `r`
/// from `c`, bond angle `theta` at `c` (against `b`), and torsion `phi`
/// about b-c (against `a`).
fn nerf(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
    r: f64,
    theta: f64,
    phi: f64,
) -> Vector3<f64> {
    let bc = (c - b).normalize();
    let n = (b - a).cross(&bc).normalize();
    let m = n.cross(&bc);
    let d = Vector3::new(
        -r * theta.cos(),
        r * theta.sin() * phi.cos(),
        r * theta.sin() * phi.sin(),
    );
    c + bc * d.x + m * d.y + n * d.z
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    } else if a <= -std::f64::consts::PI {
        a += 2.0 * std::f64::consts::PI;
    }
    a
}

/// Ideal alpha-helical backbone of `n` residues (all alanine, sequential
/// numbering from 1).  Synthetic stand-in for predicted loop structures in
/// tests and experiments.
pub fn helix_chain(n: usize, chain_id: char) -> Result<BackboneChain> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let g = helix_geometry();
    // Seed residue in the xy-plane: N at origin, Ca along +x.
    let mut atoms: Vec<[Vector3<f64>; 3]> = Vec::with_capacity(n);
    let n0 = Vector3::zeros();
    let ca0 = Vector3::new(g.n_ca, 0.0, 0.0);
    let c0 = ca0 + g.ca_c * Vector3::new(-g.tau.cos(), g.tau.sin(), 0.0);
    atoms.push([n0, ca0, c0]);
    for i in 1..n {
        let [pn, pca, pc] = atoms[i - 1];
        let nn = nerf(&pn, &pca, &pc, g.c_n, g.ca_c_n, g.psi);
        let nca = nerf(&pca, &pc, &nn, g.n_ca, g.c_n_ca, g.omega);
        let nc = nerf(&pc, &nn, &nca, g.ca_c, g.tau, g.phi);
        atoms.push([nn, nca, nc]);
    }
    let residues = atoms
        .iter()
        .enumerate()
        .map(|(i, [an, aca, ac])| {
            let frame = atoms_to_frame(an, aca, ac)?;
            // Carbonyl O sits trans to the next residue's N.
            let psi = match atoms.get(i + 1) {
                Some([next_n, _, _]) => {
                    wrap_angle(dihedral(an, aca, ac, next_n) + std::f64::consts::PI)
                }
                None => DEFAULT_PSI,
            };
            Ok(ResidueBackbone { frame, psi, restype: Restype::Ala })
        })
        .collect::<Result<Vec<_>>>()?;
    BackboneChain::with_sequential_ids(chain_id, residues)
}
