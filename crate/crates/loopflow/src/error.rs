//! Error type shared across the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Rotation angle is within the rejection band around pi; the axis of the
    /// matrix logarithm is ambiguous there.
    #[error("rotation angle too close to pi (trace {trace:.12}): log axis ambiguous")]
    AngleAtPi { trace: f64 },

    /// A vector-field evaluation was requested with 1-t below the time guard.
    #[error("time t={t} too close to 1 (guard eps_t={eps_t})")]
    TimeTooClose { t: f64, eps_t: f64 },

    /// N, CA, C do not span a plane; no frame can be built.
    #[error("backbone atoms nearly collinear (triangle area {area:.3e} A^2)")]
    CollinearAtoms { area: f64 },

    /// Two atoms of a bond term are closer than the distance guard.
    #[error("atoms coincide (distance {d:.3e} A <= {eps:.1e})")]
    CoincidentAtoms { d: f64, eps: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// The 2D auxiliary loss has too few masked entries for its denominator.
    #[error("2d-loss mask degenerate: {masked} masked entries, {residues} residues")]
    MaskDegenerate { masked: usize, residues: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// backward was called with a cache that does not belong to these parameters.
    #[error("no cached forward pass matches these parameters")]
    NotCached,

    #[error("selection mismatch: {0}")]
    SelectionMismatch(String),

    #[error("residue {chain}:{resnum} missing backbone atom {atom}")]
    MissingBackboneAtom {
        chain: char,
        resnum: i32,
        atom: &'static str,
    },

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("no usable ATOM records in input")]
    EmptyInput,

    #[error("invalid selection '{0}': expected CHAIN:START-END")]
    BadSelection(String),

    #[error("matrix is not a rotation (orthonormality defect {defect:.3e})")]
    NotARotation { defect: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// I/O failure with the offending path attached.
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
}
