//! Fixed-column PDB reading and writing for the backbone subset.
//!
//! Only `ATOM` records with names N, CA, C, O are consumed; everything
//! else (HETATM, headers, anisotropy) is ignored.  Chains are emitted in
//! order with `TER` separators and a final `END`.  The writer round-trips
//! through the parser to within the format's 1e-3 A coordinate precision.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::frames::{
    atoms_to_frame, frame_to_atoms, psi_from_atoms, BackboneChain, ResidueBackbone, ResidueId,
    Restype, DEFAULT_PSI,
};

/// Backbone atom slots collected for one residue while parsing.
#[derive(Clone, Copy, Default)]
struct RawResidue {
    n: Option<Vector3<f64>>,
    ca: Option<Vector3<f64>>,
    c: Option<Vector3<f64>>,
    o: Option<Vector3<f64>>,
}

struct RawChain {
    chain_id: char,
    order: Vec<(ResidueId, Restype)>,
    residues: Vec<RawResidue>,
}

fn field(line: &str, lineno: usize, range: std::ops::Range<usize>) -> Result<&str> {
    line.get(range.clone()).ok_or_else(|| Error::MalformedRecord {
        line: lineno,
        reason: format!("record shorter than column {}", range.end),
    })
}

fn parse_f64(line: &str, lineno: usize, range: std::ops::Range<usize>, what: &str) -> Result<f64> {
    let s = field(line, lineno, range)?.trim();
    s.parse().map_err(|_| Error::MalformedRecord {
        line: lineno,
        reason: format!("bad {what} `{s}`"),
    })
}

/// Parses the backbone of every chain found in `text`.
///
/// Atoms N/CA/C are mandatory per residue; psi comes from O when present
/// (otherwise the default).  Alternate locations other than blank or 'A'
/// are skipped; the first record wins on duplicates.
pub fn parse_pdb_backbone(text: &str) -> Result<Vec<BackboneChain>> {
    let mut chains: Vec<RawChain> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if !line.starts_with("ATOM") {
            continue;
        }
        let name = field(line, lineno, 12..16)?.trim();
        if !matches!(name, "N" | "CA" | "C" | "O") {
            continue;
        }
        let altloc = field(line, lineno, 16..17)?.chars().next().unwrap();
        if altloc != ' ' && altloc != 'A' {
            continue;
        }
        let restype = Restype::from_code(field(line, lineno, 17..20)?);
        let chain_id = field(line, lineno, 21..22)?.chars().next().unwrap();
        let number: i32 = {
            let s = field(line, lineno, 22..26)?.trim();
            s.parse().map_err(|_| Error::MalformedRecord {
                line: lineno,
                reason: format!("bad residue number `{s}`"),
            })?
        };
        let icode = field(line, lineno, 26..27)?.chars().next().unwrap();
        let x = parse_f64(line, lineno, 30..38, "x")?;
        let y = parse_f64(line, lineno, 38..46, "y")?;
        let z = parse_f64(line, lineno, 46..54, "z")?;
        let pos = Vector3::new(x, y, z);

        let id = ResidueId { number, icode };
        let chain = match chains.iter_mut().find(|c| c.chain_id == chain_id) {
            Some(c) => c,
            None => {
                chains.push(RawChain { chain_id, order: Vec::new(), residues: Vec::new() });
                chains.last_mut().unwrap()
            }
        };
        let ri = match chain.order.iter().position(|(rid, _)| *rid == id) {
            Some(i) => i,
            None => {
                chain.order.push((id, restype));
                chain.residues.push(RawResidue::default());
                chain.residues.len() - 1
            }
        };
        let slot = &mut chain.residues[ri];
        let slot = match name {
            "N" => &mut slot.n,
            "CA" => &mut slot.ca,
            "C" => &mut slot.c,
            _ => &mut slot.o,
        };
        if slot.is_none() {
            *slot = Some(pos);
        }
    }

    if chains.is_empty() {
        return Err(Error::EmptyInput);
    }
    chains
        .into_iter()
        .map(|raw| {
            let mut residues = Vec::with_capacity(raw.residues.len());
            let mut ids = Vec::with_capacity(raw.residues.len());
            for ((id, restype), atoms) in raw.order.iter().zip(&raw.residues) {
                let missing = |atom: &'static str| Error::MissingBackboneAtom {
                    chain: raw.chain_id,
                    resnum: id.number,
                    atom,
                };
                let n = atoms.n.ok_or_else(|| missing("N"))?;
                let ca = atoms.ca.ok_or_else(|| missing("CA"))?;
                let c = atoms.c.ok_or_else(|| missing("C"))?;
                let frame = atoms_to_frame(&n, &ca, &c)?;
                let psi = match &atoms.o {
                    Some(o) => psi_from_atoms(&n, &ca, &c, o),
                    None => DEFAULT_PSI,
                };
                residues.push(ResidueBackbone { frame, psi, restype: *restype });
                ids.push(*id);
            }
            BackboneChain::new(raw.chain_id, residues, ids)
        })
        .collect()
}

fn push_atom(
    out: &mut String,
    serial: usize,
    name: &str,
    res: &ResidueBackbone,
    chain_id: char,
    id: ResidueId,
    pos: &Vector3<f64>,
    element: &str,
) {
    out.push_str(&format!(
        "ATOM  {serial:>5} {name:<4} {resname:>3} {chain_id}{number:>4}{icode}   \
         {x:>8.3}{y:>8.3}{z:>8.3}{occ:>6.2}{b:>6.2}          {element:>2}\n",
        resname = res.restype.code(),
        number = id.number,
        icode = id.icode,
        x = pos.x,
        y = pos.y,
        z = pos.z,
        occ = 1.0,
        b = 0.0,
    ));
}

/// Serializes chains as fixed-column ATOM records (N, CA, C, O per
/// residue, O rebuilt from the frame and psi), TER between chains, END
/// at the end.  Coordinates carry three decimals.
pub fn write_pdb_backbone(chains: &[BackboneChain]) -> String {
    let mut out = String::new();
    let mut serial = 1;
    for chain in chains {
        let mut last = None;
        for (res, id) in chain.residues.iter().zip(&chain.residue_ids) {
            let atoms = frame_to_atoms(res);
            for (name, pos, element) in [
                ("N", atoms.n, "N"),
                ("CA", atoms.ca, "C"),
                ("C", atoms.c, "C"),
                ("O", atoms.o, "O"),
            ] {
                // Short names start in column 14; the element occupies 13-14.
                let padded = format!(" {name}");
                push_atom(&mut out, serial, &padded, res, chain.chain_id, *id, &pos, element);
                serial += 1;
            }
            last = Some((res, *id));
        }
        if let Some((res, id)) = last {
            out.push_str(&format!(
                "TER   {serial:>5}      {resname:>3} {chain}{number:>4}{icode}\n",
                resname = res.restype.code(),
                chain = chain.chain_id,
                number = id.number,
                icode = id.icode,
            ));
            serial += 1;
        }
    }
    out.push_str("END\n");
    out
}
