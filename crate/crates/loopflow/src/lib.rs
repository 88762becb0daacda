//! Energy-guided SE(3) flow matching for protein backbone loop refinement.
//!
//! The library refines backbone loops (for example antibody CDRs) that are
//! given as per-residue rigid frames. A learned vector field transports a
//! perturbed prior structure toward a native one; peptide-geometry bond
//! potentials steer the integration toward chemically plausible backbones.
//!
//! Modules, bottom up:
//! * [`so3`] — rotation-group primitives (exp/log, geodesics, tangent noise).
//! * [`frames`] — residue frames and backbone heavy-atom coordinates.
//! * [`energy`] — bond potentials, analytic gradients, guidance assembly.
//! * [`flow`] — interpolants, conditional fields, training losses.
//! * [`model`] — invariant featurization and the hand-differentiated network.
//! * [`sampler`] — guided ODE/SDE refinement loops.
//! * [`pdb`] — fixed-column PDB backbone reader/writer.
//! * [`structure`] — refinement problems, selections, RMSD, synthetic priors.
//! * [`config`], [`manifest`], [`cli`] — run configuration and the CLI.

pub mod cli;
pub mod config;
pub mod energy;
pub mod error;
pub mod flow;
pub mod frames;
pub mod manifest;
pub mod model;
pub mod pdb;
pub mod sampler;
pub mod so3;
pub mod structure;
pub mod train;

pub use error::{Error, Result};
