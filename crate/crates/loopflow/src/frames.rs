//! Residue frames and backbone heavy atoms.
//!
//! A residue is a rigid frame (x, r): x is the C-alpha position in Angstrom, r
//! rotates idealized local atom coordinates into the global frame. Atom
//! positions follow `y = r y* + x` with the idealized constants below. The
//! carbonyl O is placed intra-residue from the stored psi dihedral, so every
//! residue (including chain termini) is self-contained.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::so3::Rotation;

/// Idealized local backbone geometry, applied through the frame action.
#[derive(Clone, Copy, Debug)]
pub struct IdealizedGeometry {
    /// N position in the local frame (A).
    pub n: Vector3<f64>,
    /// C-alpha position in the local frame (origin).
    pub ca: Vector3<f64>,
    /// C position in the local frame (A).
    pub c: Vector3<f64>,
    /// C=O bond length (A).
    pub o_bond_length: f64,
    /// Ca-C-O angle (radians).
    pub ca_c_o_angle: f64,
}

pub const IDEAL: IdealizedGeometry = IdealizedGeometry {
    n: Vector3::new(-0.525, 1.363, 0.0),
    ca: Vector3::new(0.0, 0.0, 0.0),
    c: Vector3::new(1.526, 0.0, 0.0),
    o_bond_length: 1.231,
    ca_c_o_angle: 120.8 * std::f64::consts::PI / 180.0,
};

/// Default psi when the input provides no O atom (helical).
pub const DEFAULT_PSI: f64 = -47.0 * std::f64::consts::PI / 180.0;

/// Collinearity guard for frame construction (triangle area, A^2).
pub const MIN_TRIANGLE_AREA: f64 = 1e-6;

/// A residue's rigid transform.
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    pub x: Vector3<f64>,
    pub r: Rotation,
}

impl Frame {
    pub fn identity() -> Self {
        Frame {
            x: Vector3::zeros(),
            r: Rotation::identity(),
        }
    }
}

/// The 20 standard amino acids plus UNK.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Restype {
    Ala, Arg, Asn, Asp, Cys, Gln, Glu, Gly, His, Ile,
    Leu, Lys, Met, Phe, Pro, Ser, Thr, Trp, Tyr, Val,
    Unk,
}

impl Restype {
    pub const COUNT: usize = 21;

    pub fn from_code(code: &str) -> Restype {
        use Restype::*;
        match code.trim().to_ascii_uppercase().as_str() {
            "ALA" => Ala, "ARG" => Arg, "ASN" => Asn, "ASP" => Asp, "CYS" => Cys,
            "GLN" => Gln, "GLU" => Glu, "GLY" => Gly, "HIS" => His, "ILE" => Ile,
            "LEU" => Leu, "LYS" => Lys, "MET" => Met, "PHE" => Phe, "PRO" => Pro,
            "SER" => Ser, "THR" => Thr, "TRP" => Trp, "TYR" => Tyr, "VAL" => Val,
            _ => Unk,
        }
    }

    pub fn code(self) -> &'static str {
        use Restype::*;
        match self {
            Ala => "ALA", Arg => "ARG", Asn => "ASN", Asp => "ASP", Cys => "CYS",
            Gln => "GLN", Glu => "GLU", Gly => "GLY", His => "HIS", Ile => "ILE",
            Leu => "LEU", Lys => "LYS", Met => "MET", Phe => "PHE", Pro => "PRO",
            Ser => "SER", Thr => "THR", Trp => "TRP", Tyr => "TYR", Val => "VAL",
            Unk => "UNK",
        }
    }

    /// Index for one-hot encoding, 0..=20.
    pub fn index(self) -> usize {
        use Restype::*;
        match self {
            Ala => 0, Arg => 1, Asn => 2, Asp => 3, Cys => 4, Gln => 5, Glu => 6,
            Gly => 7, His => 8, Ile => 9, Leu => 10, Lys => 11, Met => 12,
            Phe => 13, Pro => 14, Ser => 15, Thr => 16, Trp => 17, Tyr => 18,
            Val => 19, Unk => 20,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ResidueBackbone {
    pub frame: Frame,
    /// Intra-residue dihedral N-CA-C-O, radians, in (-pi, pi].
    pub psi: f64,
    pub restype: Restype,
}

/// Residue key: author residue number plus insertion code (' ' when absent).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ResidueId {
    pub number: i32,
    pub icode: char,
}

impl ResidueId {
    pub fn new(number: i32) -> Self {
        ResidueId { number, icode: ' ' }
    }
}

impl std::fmt::Display for ResidueId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.icode == ' ' {
            write!(f, "{}", self.number)
        } else {
            write!(f, "{}{}", self.number, self.icode)
        }
    }
}

/// An ordered chain of residues with strictly increasing residue ids.
#[derive(Clone, Debug)]
pub struct BackboneChain {
    pub chain_id: char,
    pub residues: Vec<ResidueBackbone>,
    pub residue_ids: Vec<ResidueId>,
}

impl BackboneChain {
    pub fn new(
        chain_id: char,
        residues: Vec<ResidueBackbone>,
        residue_ids: Vec<ResidueId>,
    ) -> Result<Self> {
        if residues.len() != residue_ids.len() {
            return Err(Error::LengthMismatch {
                left: residues.len(),
                right: residue_ids.len(),
            });
        }
        if residues.is_empty() {
            return Err(Error::EmptyInput);
        }
        if residue_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::MalformedRecord {
                line: 0,
                reason: format!("residue ids of chain {chain_id} not strictly increasing"),
            });
        }
        Ok(BackboneChain {
            chain_id,
            residues,
            residue_ids,
        })
    }

    /// Chain with residues numbered 1..=n.
    pub fn with_sequential_ids(chain_id: char, residues: Vec<ResidueBackbone>) -> Result<Self> {
        let ids = (1..=residues.len() as i32).map(ResidueId::new).collect();
        BackboneChain::new(chain_id, residues, ids)
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Position of a residue id, if present.
    pub fn index_of(&self, id: ResidueId) -> Option<usize> {
        self.residue_ids.binary_search(&id).ok()
    }
}

/// Backbone heavy atoms of one residue, global coordinates (A).
#[derive(Clone, Copy, Debug)]
pub struct BackboneAtoms {
    pub n: Vector3<f64>,
    pub ca: Vector3<f64>,
    pub c: Vector3<f64>,
    pub o: Vector3<f64>,
}

/// O position in the local frame for a given psi: bond length and Ca-C-O angle
/// from [`IDEAL`], dihedral N-CA-C-O equal to psi under [`dihedral`]'s sign
/// convention.
fn o_local(psi: f64) -> Vector3<f64> {
    let theta = IDEAL.ca_c_o_angle;
    let d = IDEAL.o_bond_length;
    IDEAL.c
        + d * Vector3::new(
            -theta.cos(),
            theta.sin() * psi.cos(),
            theta.sin() * psi.sin(),
        )
}

/// Global heavy-atom coordinates of a residue: `y = r y* + x`.
pub fn frame_to_atoms(res: &ResidueBackbone) -> BackboneAtoms {
    let Frame { x, r } = res.frame;
    BackboneAtoms {
        n: r.act(&IDEAL.n) + x,
        ca: x,
        c: r.act(&IDEAL.c) + x,
        o: r.act(&o_local(res.psi)) + x,
    }
}

/// Frame from N, CA, C by Gram-Schmidt: e1 along C-CA, e2 the orthogonalized
/// N-CA direction, e3 = e1 x e2, columns of r.
pub fn atoms_to_frame(n: &Vector3<f64>, ca: &Vector3<f64>, c: &Vector3<f64>) -> Result<Frame> {
    let u = c - ca;
    let w = n - ca;
    let area = 0.5 * u.cross(&w).norm();
    if area <= MIN_TRIANGLE_AREA {
        return Err(Error::CollinearAtoms { area });
    }
    let e1 = u.normalize();
    let e2 = (w - w.dot(&e1) * e1).normalize();
    let e3 = e1.cross(&e2);
    let r = Matrix3::from_columns(&[e1, e2, e3]);
    Ok(Frame {
        x: *ca,
        r: Rotation::from_matrix_unchecked(r),
    })
}

/// Applies the rigid transform (R, t) to every frame: (x, r) -> (R x + t, R r).
pub fn apply_rigid(chain: &BackboneChain, rot: &Rotation, t: &Vector3<f64>) -> BackboneChain {
    let residues = chain
        .residues
        .iter()
        .map(|res| ResidueBackbone {
            frame: Frame {
                x: rot.act(&res.frame.x) + t,
                r: *rot * res.frame.r,
            },
            psi: res.psi,
            restype: res.restype,
        })
        .collect();
    BackboneChain {
        chain_id: chain.chain_id,
        residues,
        residue_ids: chain.residue_ids.clone(),
    }
}

/// Signed dihedral of p1-p2-p3-p4 about the p2-p3 axis, radians in (-pi, pi].
pub fn dihedral(
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    p3: &Vector3<f64>,
    p4: &Vector3<f64>,
) -> f64 {
    let b0 = p1 - p2;
    let b1 = (p3 - p2).normalize();
    let b2 = p4 - p3;
    let v = b0 - b0.dot(&b1) * b1;
    let w = b2 - b2.dot(&b1) * b1;
    let x = v.dot(&w);
    let y = b1.cross(&v).dot(&w);
    let angle = y.atan2(x);
    if angle <= -std::f64::consts::PI {
        angle + 2.0 * std::f64::consts::PI
    } else {
        angle
    }
}

/// Extracts the stored psi from explicit atom coordinates.
pub fn psi_from_atoms(
    n: &Vector3<f64>,
    ca: &Vector3<f64>,
    c: &Vector3<f64>,
    o: &Vector3<f64>,
) -> f64 {
    dihedral(n, ca, c, o)
}
