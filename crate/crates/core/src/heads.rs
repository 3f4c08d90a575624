//! Task heads reading node/edge descriptors: the referring-relationship
//! classifier, the box refiner, scene-graph labelers, and scene-graph decoding.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{Graph, Mlp, ParamId, ParamStore, Result, Tensor, Var};
use crate::geometry::BBox;
use crate::scenegen::{Category, Relation, NUM_CATEGORIES, NUM_RELATIONS};

/// Per-proposal class for one query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Role {
    Subject = 0,
    Object = 1,
    Other = 2,
    Background = 3,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Subject, Role::Object, Role::Other, Role::Background];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Learned lookup tables for query components; the query vector is
/// `[E[s]; R[r]; E[o]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryEmbedding {
    pub entity: ParamId,
    pub relation: ParamId,
    pub dim: usize,
}

impl QueryEmbedding {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize) -> Self {
        let mut table = |rows: usize| {
            let data = (0..rows * dim).map(|_| rng.gen_range(-0.5..=0.5)).collect();
            Tensor::new(vec![rows, dim], data).unwrap()
        };
        let e = table(NUM_CATEGORIES);
        let r = table(NUM_RELATIONS);
        QueryEmbedding {
            entity: store.add(format!("{name}.entity"), e),
            relation: store.add(format!("{name}.relation"), r),
            dim,
        }
    }

    pub fn width(&self) -> usize {
        3 * self.dim
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        subject: Category,
        relation: Relation,
        object: Category,
    ) -> Result<Var> {
        let e = g.param(store, self.entity)?;
        let r = g.param(store, self.relation)?;
        let s = g.gather_rows(e, &[subject.index()])?;
        let rv = g.gather_rows(r, &[relation.index()])?;
        let o = g.gather_rows(e, &[object.index()])?;
        g.concat(&[s, rv, o], 1)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.entity, self.relation]
    }
}

/// Two-layer classifier over `[node features; query vector]` giving four role logits.
#[derive(Clone, Debug, PartialEq)]
pub struct RrClassifier {
    pub mlp: Mlp,
}

impl RrClassifier {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, feat: usize, query: usize, hidden: usize) -> Self {
        RrClassifier {
            mlp: Mlp::new(store, rng, "rrc", &[feat + query, hidden, 4]),
        }
    }

    /// `feats` is `B × feat`, `query` is `1 × query`; returns `B × 4` logits.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, feats: Var, query: Var) -> Result<Var> {
        let b = g.shape(feats)[0];
        let q = g.gather_rows(query, &vec![0; b])?;
        let x = g.concat(&[feats, q], 1)?;
        self.mlp.forward(g, store, x)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Boxes whose argmax role is Subject / Object. An empty set falls back to the
/// single box with the highest logit for that role (first index on ties).
pub fn select_boxes(logits: &[[f64; 4]]) -> (Vec<usize>, Vec<usize>) {
    let pick = |role: Role| -> Vec<usize> {
        let chosen: Vec<usize> = logits
            .iter()
            .enumerate()
            .filter(|(_, l)| argmax(&l[..]) == role.index())
            .map(|(i, _)| i)
            .collect();
        if !chosen.is_empty() || logits.is_empty() {
            return chosen;
        }
        let scores: Vec<f64> = logits.iter().map(|l| l[role.index()]).collect();
        vec![argmax(&scores)]
    };
    (pick(Role::Subject), pick(Role::Object))
}

#[derive(Debug, Error, PartialEq)]
pub enum HeadError {
    #[error("refined box {0:?} has no area inside the canvas")]
    EmptyBox([f64; 4]),
}

/// Delta correction `(dx, dy, dw, dh)` on a corner-form box, via center form:
/// `(x + dx·w, y + dy·h, w·e^dw, h·e^dh)`, clipped to the canvas.
pub fn apply_deltas(b: &BBox, d: [f64; 4]) -> std::result::Result<BBox, HeadError> {
    if d == [0.0; 4] {
        return b.clip_to_canvas().ok_or(HeadError::EmptyBox(b.to_array()));
    }
    let (cx, cy) = b.center();
    let r = BBox::from_center(cx + d[0] * b.w, cy + d[1] * b.h, b.w * d[2].exp(), b.h * d[3].exp());
    r.clip_to_canvas().ok_or(HeadError::EmptyBox(r.to_array()))
}

/// Linear map from node features to box deltas.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxRefiner {
    pub linear: Mlp,
}

impl BoxRefiner {
    /// Starts from the identity refinement (zero weights), as detector
    /// box-regression layers usually do.
    pub fn new(store: &mut ParamStore, feat: usize) -> Self {
        BoxRefiner {
            linear: Mlp::zeros(store, "refiner", &[feat, 4]),
        }
    }

    pub fn deltas(&self, g: &mut Graph, store: &ParamStore, feats: Var) -> Result<Var> {
        self.linear.forward(g, store, feats)
    }

    /// Refined boxes in center form `(cx, cy, w, h)`, scaled by `scale`, as a
    /// differentiable `B × 4` tensor.
    pub fn refined_center_form(
        &self,
        g: &mut Graph,
        deltas: Var,
        boxes: &[BBox],
        scale: f64,
    ) -> Result<Var> {
        let n = boxes.len();
        let mut wh = Vec::with_capacity(2 * n);
        let mut c = Vec::with_capacity(2 * n);
        for b in boxes {
            let (cx, cy) = b.center();
            wh.extend([b.w * scale, b.h * scale]);
            c.extend([cx * scale, cy * scale]);
        }
        let wh = g.input(Tensor::new(vec![n, 2], wh)?)?;
        let c = g.input(Tensor::new(vec![n, 2], c)?)?;
        let shift = g.slice_cols(deltas, 0, 2)?;
        let logsize = g.slice_cols(deltas, 2, 2)?;
        let pos = g.mul(shift, wh)?;
        let pos = g.add(pos, c)?;
        let size = g.exp(logsize)?;
        let size = g.mul(size, wh)?;
        g.concat(&[pos, size], 1)
    }

    /// Refines one box from a feature row.
    pub fn refine_box(
        &self,
        store: &ParamStore,
        b: &BBox,
        feat: &[f64],
    ) -> std::result::Result<BBox, HeadError> {
        let d = self.linear.eval_row(store, feat);
        apply_deltas(b, [d[0], d[1], d[2], d[3]])
    }
}

/// Linear classifiers from node features to entity categories and from pair
/// features to relation predicates.
#[derive(Clone, Debug, PartialEq)]
pub struct SgLabelers {
    pub entity: Mlp,
    pub relation: Mlp,
}

impl SgLabelers {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, node: usize, pair: usize) -> Self {
        SgLabelers {
            entity: Mlp::new(store, rng, "sgl.entity", &[node, NUM_CATEGORIES]),
            relation: Mlp::new(store, rng, "sgl.relation", &[pair, NUM_RELATIONS]),
        }
    }

    pub fn label_entities(&self, g: &mut Graph, store: &ParamStore, nodes: Var) -> Result<Var> {
        self.entity.forward(g, store, nodes)
    }

    pub fn label_relations(&self, g: &mut Graph, store: &ParamStore, pairs: Var) -> Result<Var> {
        self.relation.forward(g, store, pairs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SgNode {
    pub category: Category,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SgEdge {
    pub subject: usize,
    pub object: usize,
    pub relation: Relation,
    pub confidence: f64,
}

/// Labeled graph decoded from per-node and per-pair class probabilities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneGraph {
    pub nodes: Vec<SgNode>,
    pub edges: Vec<SgEdge>,
}

/// Per-node entity distributions and per-ordered-pair relation distributions,
/// pairs `i`-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SgProbabilities {
    pub entity: Vec<Vec<f64>>,
    pub relation: Vec<Vec<f64>>,
}

impl SgProbabilities {
    pub fn len(&self) -> usize {
        self.entity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity.is_empty()
    }

    pub fn relation(&self, i: usize, j: usize) -> &[f64] {
        &self.relation[crate::proposals::pair_index(self.len(), i, j)]
    }
}

/// Nodes get their argmax category; edges are the `top_k` most confident
/// argmax relations over ordered pairs (earlier pairs first on ties).
pub fn decode_scene_graph(probs: &SgProbabilities, top_k: usize) -> SceneGraph {
    let nodes = probs
        .entity
        .iter()
        .map(|p| {
            let k = argmax(p);
            SgNode {
                category: Category(k as u8),
                confidence: p[k],
            }
        })
        .collect();
    let n = probs.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = probs.relation(i, j);
            let k = argmax(p);
            edges.push(SgEdge {
                subject: i,
                object: j,
                relation: Relation::from_index(k).unwrap(),
                confidence: p[k],
            });
        }
    }
    // stable sort keeps pair order among equal confidences
    edges.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    edges.truncate(top_k);
    SceneGraph { nodes, edges }
}

pub fn softmax_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (m, _) = t.dims2().expect("2-D logits");
    (0..m)
        .map(|i| crate::autodiff::softmax_values(t.row(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_argmax_and_fallback() {
        let (s, o) = select_boxes(&[[5.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]]);
        assert_eq!(s, vec![0]);
        // no Object argmax: falls back to the highest Object logit, first on ties
        assert_eq!(o, vec![0]);

        let all_bg = [[0.1, 0.5, 0.0, 3.0], [0.7, -1.0, 0.0, 3.0], [0.2, 0.9, 0.0, 3.0]];
        let (s, o) = select_boxes(&all_bg);
        assert_eq!(s, vec![1]);
        assert_eq!(o, vec![2]);
    }

    #[test]
    fn zero_deltas_identity() {
        let b = BBox::new(0.1, 0.2, 0.3, 0.25);
        assert_eq!(apply_deltas(&b, [0.0; 4]).unwrap(), b);
    }

    #[test]
    fn delta_arithmetic() {
        let b = BBox::from_center(0.5, 0.5, 0.2, 0.2);
        let r = apply_deltas(&b, [0.5, 0.0, 2f64.ln(), 0.0]).unwrap();
        let (cx, cy) = r.center();
        assert!((cx - 0.6).abs() < 1e-12);
        assert!((cy - 0.5).abs() < 1e-12);
        assert!((r.w - 0.4).abs() < 1e-12);
        assert!((r.h - 0.2).abs() < 1e-12);
    }

    #[test]
    fn refined_box_clipped_or_rejected() {
        let b = BBox::new(0.8, 0.8, 0.2, 0.2);
        let r = apply_deltas(&b, [0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!(r.is_valid());
        assert!(apply_deltas(&b, [10.0, 0.0, 0.0, 0.0]).is_err());
    }

    fn uniform(n: usize, c: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0 / c as f64; c]; n]
    }

    #[test]
    fn decode_top_k() {
        let n = 3;
        let probs = SgProbabilities {
            entity: uniform(n, NUM_CATEGORIES),
            relation: uniform(n * (n - 1), NUM_RELATIONS),
        };
        let sg = decode_scene_graph(&probs, 0);
        assert_eq!(sg.nodes.len(), 3);
        assert!(sg.edges.is_empty());
        assert_eq!(decode_scene_graph(&probs, 100).edges.len(), 6);
        assert_eq!(decode_scene_graph(&probs, 6).edges[0].subject, 0);
    }
}
