//! Graph-permutation-invariant (GPI) generator turning raw node features `z_i`
//! and pair features `z_ij` into contextualized descriptors `z'_i`, `z'_ij`.
//!
//! ```text
//! s_i  = AGG_{j≠i} φ(z_i, z_ij, z_j)
//! g    = AGG_i     α(z_i, s_i)
//! z'_k = ρ_entity(z_k, g)        z'_kl = ρ_relation(z_kl, g)
//! ```
//!
//! `AGG` is a plain sum in [`AggregationMode::Sum`]. In
//! [`AggregationMode::Attention`] it is a convex combination whose weights are a
//! softmax over an extra scalar output column of `φ` (per node `i`, over `j`) or
//! `α` (over `i`). An empty inner aggregation (a single node) is the zero vector
//! in both modes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mlp, ParamId, ParamStore, Result, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    Sum,
    Attention,
}

impl AggregationMode {
    pub fn name(self) -> &'static str {
        match self {
            AggregationMode::Sum => "sum",
            AggregationMode::Attention => "attention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sum" => Some(AggregationMode::Sum),
            "attention" => Some(AggregationMode::Attention),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GpiDims {
    pub node: usize,
    pub pair: usize,
    pub hidden: usize,
    pub value: usize,
    pub summary: usize,
    pub out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpiParams {
    pub dims: GpiDims,
    /// Output: `value` columns then one score column.
    pub phi: Mlp,
    /// Output: `summary` columns then one score column.
    pub alpha: Mlp,
    pub rho_entity: Mlp,
    pub rho_relation: Mlp,
}

/// Forward results; `pairs` holds rows for the requested pairs only.
#[derive(Clone, Debug)]
pub struct DsgOutput {
    pub summary: Var,
    pub nodes: Var,
    pub pairs: Option<Var>,
    pub pair_ids: Vec<usize>,
    pub outer_weights: Option<Var>,
}

impl GpiParams {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dims: GpiDims) -> Self {
        let GpiDims {
            node,
            pair,
            hidden,
            value,
            summary,
            out,
        } = dims;
        GpiParams {
            dims,
            phi: Mlp::new(store, rng, &format!("{name}.phi"), &[2 * node + pair, hidden, value + 1]),
            alpha: Mlp::new(store, rng, &format!("{name}.alpha"), &[node + value, hidden, summary + 1]),
            rho_entity: Mlp::new(store, rng, &format!("{name}.rho_entity"), &[node + summary, hidden, out]),
            rho_relation: Mlp::new(store, rng, &format!("{name}.rho_relation"), &[pair + summary, hidden, out]),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.phi
            .param_ids()
            .chain(self.alpha.param_ids())
            .chain(self.rho_entity.param_ids())
            .chain(self.rho_relation.param_ids())
            .collect()
    }
}

/// Row indices `(i, j)` of every ordered pair, `i`-major.
pub fn pair_endpoints(n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut is = Vec::with_capacity(n * n.saturating_sub(1));
    let mut js = Vec::with_capacity(is.capacity());
    for i in 0..n {
        for j in 0..n {
            if i != j {
                is.push(i);
                js.push(j);
            }
        }
    }
    (is, js)
}

/// Runs the generator. `nodes` is `n × node`, `pairs` is `n(n-1) × pair` in
/// `i`-major order; `relation_rows` selects which pair rows get a `z'_kl`.
pub fn gpi_forward(
    g: &mut Graph,
    store: &ParamStore,
    params: &GpiParams,
    nodes: Var,
    pairs: Option<Var>,
    mode: AggregationMode,
    relation_rows: &[usize],
) -> Result<DsgOutput> {
    let n = g.shape(nodes)[0];
    let d = params.dims;
    if n == 0 {
        return Err(crate::autodiff::AutodiffError::InvalidArgument {
            op: "gpi_forward",
            reason: "no nodes".into(),
        });
    }

    let inner = if n >= 2 {
        let pairs = pairs.ok_or_else(|| crate::autodiff::AutodiffError::InvalidArgument {
            op: "gpi_forward",
            reason: "pair features required for n >= 2".into(),
        })?;
        let (is, js) = pair_endpoints(n);
        let zi = g.gather_rows(nodes, &is)?;
        let zj = g.gather_rows(nodes, &js)?;
        let x = g.concat(&[zi, pairs, zj], 1)?;
        let phi = params.phi.forward(g, store, x)?;
        let values = g.slice_cols(phi, 0, d.value)?;
        let m = n - 1;
        match mode {
            AggregationMode::Sum => {
                // n × n(n-1) block-indicator matrix sums each node's segment
                let mut agg = vec![0.0; n * n * m];
                for i in 0..n {
                    for k in 0..m {
                        agg[i * n * m + i * m + k] = 1.0;
                    }
                }
                let agg = g.input(Tensor::new(vec![n, n * m], agg)?)?;
                g.matmul(agg, values)?
            }
            AggregationMode::Attention => {
                let scores = g.slice_cols(phi, d.value, 1)?;
                let mut rows = Vec::with_capacity(n);
                for i in 0..n {
                    let seg: Vec<usize> = (i * m..(i + 1) * m).collect();
                    let s = g.gather_rows(scores, &seg)?;
                    let s = g.reshape(s, &[1, m])?;
                    let w = g.softmax(s)?;
                    let v = g.gather_rows(values, &seg)?;
                    rows.push(g.matmul(w, v)?);
                }
                g.concat(&rows, 0)?
            }
        }
    } else {
        g.input(Tensor::zeros(&[n, d.value]))?
    };

    let a_in = g.concat(&[nodes, inner], 1)?;
    let a = params.alpha.forward(g, store, a_in)?;
    let a_vals = g.slice_cols(a, 0, d.summary)?;
    let (summary, outer_weights) = match mode {
        AggregationMode::Sum => (g.sum_rows(a_vals)?, None),
        AggregationMode::Attention => {
            let scores = g.slice_cols(a, d.summary, 1)?;
            let scores = g.reshape(scores, &[1, n])?;
            let w = g.softmax(scores)?;
            (g.matmul(w, a_vals)?, Some(w))
        }
    };

    let gn = g.gather_rows(summary, &vec![0; n])?;
    let e_in = g.concat(&[nodes, gn], 1)?;
    let node_out = params.rho_entity.forward(g, store, e_in)?;

    let pair_out = match (pairs, relation_rows.is_empty()) {
        (Some(p), false) => {
            let sel = g.gather_rows(p, relation_rows)?;
            let gp = g.gather_rows(summary, &vec![0; relation_rows.len()])?;
            let r_in = g.concat(&[sel, gp], 1)?;
            Some(params.rho_relation.forward(g, store, r_in)?)
        }
        _ => None,
    };

    Ok(DsgOutput {
        summary,
        nodes: node_out,
        pairs: pair_out,
        pair_ids: relation_rows.to_vec(),
        outer_weights,
    })
}

/// Outer attention weights over nodes. Fails in sum mode.
pub fn attention_weights_report(
    store: &ParamStore,
    params: &GpiParams,
    nodes: &Tensor,
    pairs: Option<&Tensor>,
    mode: AggregationMode,
) -> Result<Vec<f64>> {
    if mode != AggregationMode::Attention {
        return Err(crate::autodiff::AutodiffError::InvalidArgument {
            op: "attention_weights_report",
            reason: "only defined in attention mode".into(),
        });
    }
    let mut g = Graph::new();
    let z = g.input(nodes.clone())?;
    let p = pairs.map(|p| g.input(p.clone())).transpose()?;
    let out = gpi_forward(&mut g, store, params, z, p, mode, &[])?;
    Ok(g.value(out.outer_weights.expect("attention mode")).data().to_vec())
}
