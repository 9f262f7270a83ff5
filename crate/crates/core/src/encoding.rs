//! Location and patch embeddings, and assembly of the backbone input
//! `H_input` (`I x F x M x D`) with token order `[prompt | location | patches]`.

use alloc::format;
use alloc::vec;

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::{Graph, Var};

/// `H_loc = ReLU(Z w3 + b3)`, `M x A -> M x D`.
pub fn spatial_embed<T: Real>(g: &mut Graph<T>, z: Var, w3: Var, b3: Var) -> Result<Var> {
    let (zs, ws) = (g.shape(z).to_vec(), g.shape(w3).to_vec());
    if zs.len() != 2 || ws.len() != 2 || zs[1] != ws[0] {
        return Err(shape_err("spatial_embed", format!("Z {:?} does not fit w3 {:?}", zs, ws)));
    }
    let h = g.linear(z, w3, b3)?;
    Ok(g.relu(h))
}

/// `H_temp = ReLU(C w4 + b4)`, `S x F x M x L -> S x F x M x D`.
pub fn temporal_embed<T: Real>(g: &mut Graph<T>, patches: Var, w4: Var, b4: Var) -> Result<Var> {
    let (cs, ws) = (g.shape(patches).to_vec(), g.shape(w4).to_vec());
    if cs.len() != 4 || ws.len() != 2 || cs[3] != ws[0] {
        return Err(shape_err("temporal_embed", format!("patches {:?} do not fit w4 {:?}", cs, ws)));
    }
    let h = g.linear(patches, w4, b4)?;
    Ok(g.relu(h))
}

/// Stacks prompt rows, the optional location token and the patch tokens on
/// a leading token axis. Prompt rows are copied across every `(f, m)`; the
/// location row of buoy `m` is copied across `f`.
pub fn assemble_input<T: Real>(g: &mut Graph<T>, h_prompt: Var, h_loc: Option<Var>, h_temp: Var) -> Result<Var> {
    let ts = g.shape(h_temp).to_vec();
    if ts.len() != 4 {
        return Err(shape_err("assemble_input", format!("H_temp must be S x F x M x D, got {:?}", ts)));
    }
    let (f, m, d) = (ts[1], ts[2], ts[3]);
    let ps = g.shape(h_prompt).to_vec();
    if ps.len() != 2 || ps[1] != d {
        return Err(shape_err("assemble_input", format!("H_prompt {:?} vs width {}", ps, d)));
    }
    let p = g.reshape(h_prompt, &[ps[0], 1, 1, d])?;
    let mut parts = vec![g.broadcast_to(p, &[ps[0], f, m, d])?];
    if let Some(loc) = h_loc {
        let ls = g.shape(loc).to_vec();
        if ls != [m, d] {
            return Err(shape_err("assemble_input", format!("H_loc {:?} vs {} buoys of width {}", ls, m, d)));
        }
        let l = g.reshape(loc, &[1, 1, m, d])?;
        parts.push(g.broadcast_to(l, &[1, f, m, d])?);
    }
    parts.push(h_temp);
    g.concat(&parts, 0)
}

/// Token count `I = R + E + 1 + S` (the `1` only with a location token).
pub fn token_count(soft_tokens: usize, prompt_tokens: usize, location: bool, patches: usize) -> usize {
    soft_tokens + prompt_tokens + usize::from(location) + patches
}
