//! Forest-proximity diffusion embedding.
//!
//! Proximities are symmetrized into an affinity, turned into a random walk,
//! diffused for `t` steps, log-transformed into potential distances and
//! finally embedded with metric MDS.

mod diffusion;
mod mds;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{gap_proximities, Forest};

pub use diffusion::{
    diffusion_operator, entropy_curve, knee, potential_distances, row_distances, select_t, symmetrize,
    DiffusionOperator, PotentialDistances, TimeSelection,
};
pub use mds::{mds, normalized_stress, select_dimension, smacof, ClassicalBasis, DimensionSelection, MdsFit, MdsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedOptions {
    pub dim_min: usize,
    pub dim_max: usize,
    pub t_max: usize,
    pub eps: f64,
    pub mds: MdsOptions,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            dim_min: 2,
            dim_max: 10,
            t_max: 64,
            eps: 1e-7,
            mds: MdsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    /// n x m coordinates.
    pub coords: Array2<f64>,
    pub m: usize,
    pub stress: f64,
    pub stress_by_dim: Vec<(usize, f64)>,
    pub t: usize,
    pub entropy: Vec<f64>,
    pub eps: f64,
}

/// Embed from a (possibly asymmetric) proximity matrix.
pub fn embed_proximities(k: ArrayView2<'_, f64>, opts: &EmbedOptions) -> Result<Embedding> {
    let n = k.nrows();
    if n < 3 {
        return Err(Error::InvalidInput("embedding needs at least three points".into()));
    }
    let affinity = symmetrize(k)?;
    let op = diffusion_operator(affinity.view())?;
    let sel = select_t(&op, opts.t_max)?;
    log::debug!("diffusion time {} selected from entropy curve", sel.t);
    let pd = potential_distances(&op, sel.t, opts.eps)?;
    drop(op);
    log::debug!("potential distances ready for {n} points");
    let hi = opts.dim_max.min(n - 1);
    let lo = opts.dim_min.min(hi);
    let dims = select_dimension(pd.d.view(), lo..=hi, &opts.mds)?;
    let chosen = dims.chosen();
    Ok(Embedding {
        coords: chosen.coords.clone(),
        m: dims.m,
        stress: chosen.stress,
        stress_by_dim: dims.stress_by_dim.clone(),
        t: sel.t,
        entropy: sel.entropy,
        eps: opts.eps,
    })
}

/// Full pipeline from a forest fitted on the points to embed.
pub fn rf_phate_embed(forest: &Forest, opts: &EmbedOptions) -> Result<Embedding> {
    let k = gap_proximities(forest)?;
    embed_proximities(k.matrix().view(), opts)
}
