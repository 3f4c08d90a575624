//! The assembled referring-relationship model: descriptor embedders, the scene-graph
//! generator, and the task heads, plus the ablation switches that rewire them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Result, Tensor, Var};
use crate::dsggen::{gpi_forward, AggregationMode, DsgOutput, GpiDims, GpiParams};
use crate::geometry::BBox;
use crate::heads::{
    apply_deltas, softmax_rows, BoxRefiner, QueryEmbedding, RrClassifier, SgLabelers,
    SgProbabilities,
};
use crate::proposals::{BoxSet, Embedder};
use crate::scenegen::Query;

/// Box coordinates appended to a node's appearance features.
pub const NODE_GEOMETRY: usize = 4;
/// Union box plus directional offsets appended to a pair's appearance features.
pub const PAIR_GEOMETRY: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_width: usize,
    pub embed_hidden: usize,
    pub gpi_hidden: usize,
    pub gpi_value: usize,
    pub gpi_summary: usize,
    pub dsg_width: usize,
    pub query_dim: usize,
    pub rrc_hidden: usize,
    pub mode: AggregationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_width: 64,
            embed_hidden: 64,
            gpi_hidden: 64,
            gpi_value: 64,
            gpi_summary: 64,
            dsg_width: 128,
            query_dim: 16,
            rrc_hidden: 64,
            mode: AggregationMode::Attention,
        }
    }
}

/// Which mechanisms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantFlags {
    pub use_dsg: bool,
    pub use_box_refiner: bool,
    pub use_sgl_loss: bool,
    pub two_step: bool,
}

impl Default for VariantFlags {
    fn default() -> Self {
        Ablation::Dsg.flags()
    }
}

/// The five model variants compared in ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    Dsg,
    TwoStep,
    NoSgl,
    NoBr,
    NoDsg,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Dsg,
        Ablation::TwoStep,
        Ablation::NoSgl,
        Ablation::NoBr,
        Ablation::NoDsg,
    ];

    pub fn flags(self) -> VariantFlags {
        let mut f = VariantFlags {
            use_dsg: true,
            use_box_refiner: true,
            use_sgl_loss: true,
            two_step: false,
        };
        match self {
            Ablation::Dsg => {}
            Ablation::TwoStep => f.two_step = true,
            Ablation::NoSgl => f.use_sgl_loss = false,
            Ablation::NoBr => f.use_box_refiner = false,
            Ablation::NoDsg => f.use_dsg = false,
        }
        f
    }

    /// Command-line spelling.
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Dsg => "dsg",
            Ablation::TwoStep => "two-step",
            Ablation::NoSgl => "no-sgl",
            Ablation::NoBr => "no-br",
            Ablation::NoDsg => "no-dsg",
        }
    }

    /// Row label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::Dsg => "DSG",
            Ablation::TwoStep => "Two steps",
            Ablation::NoSgl => "DSG -SGL",
            Ablation::NoBr => "DSG -BR",
            Ablation::NoDsg => "no-DSG",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Ablation::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// Parameters and wiring of the full model.
#[derive(Clone, Debug, PartialEq)]
pub struct DsgModel {
    pub config: ModelConfig,
    pub flags: VariantFlags,
    pub store: ParamStore,
    pub entity_embed: Embedder,
    pub relation_embed: Embedder,
    pub gpi: GpiParams,
    pub query: QueryEmbedding,
    pub rrc: RrClassifier,
    pub refiner: BoxRefiner,
    pub labelers: SgLabelers,
}

/// Graph handles for one scene's features.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `z_i`, one row per proposal.
    pub nodes: Var,
    /// Node features read by the heads: `z'_i` with the generator on, `z_i` without.
    pub head_nodes: Var,
    /// Pair features for the requested pairs, in request order.
    pub head_pairs: Option<Var>,
    /// Features the box refiner reads: the head features, or the detector
    /// features `f_i` when the refiner is ablated.
    pub refiner_input: Var,
    pub dsg: Option<DsgOutput>,
}

/// Inference output for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePrediction {
    /// Per query, per proposal role logits.
    pub role_logits: Vec<Vec<[f64; 4]>>,
    /// Output box per proposal: refined when the refiner is on, else the proposal.
    pub boxes: Vec<BBox>,
    pub sg: Option<SgProbabilities>,
}

fn node_geometry(boxes: &BoxSet) -> Vec<f64> {
    boxes.boxes.iter().flat_map(|b| b.to_array()).collect()
}

fn pair_geometry(boxes: &BoxSet, i: usize, j: usize) -> [f64; PAIR_GEOMETRY] {
    let p = boxes.pair(i, j);
    let (a, b) = (boxes.boxes[i], boxes.boxes[j]);
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    [
        p.union.x,
        p.union.y,
        p.union.w,
        p.union.h,
        bx - ax,
        by - ay,
        b.w - a.w,
        b.h - a.h,
    ]
}

impl DsgModel {
    /// Fresh model, deterministic in `seed`. Flags other than `use_dsg` leave the
    /// initial parameters unchanged, except that an ablated refiner reads the
    /// detector features and so has their width.
    pub fn new(config: ModelConfig, flags: VariantFlags, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let f = config.feature_width;
        let entity_embed = Embedder::new(&mut store, &mut rng, "embed.entity", config.embed_hidden, f);
        let relation_embed =
            Embedder::new(&mut store, &mut rng, "embed.relation", config.embed_hidden, f);
        let node = f + NODE_GEOMETRY;
        let pair = f + PAIR_GEOMETRY;
        let gpi = GpiParams::new(
            &mut store,
            &mut rng,
            "gpi",
            GpiDims {
                node,
                pair,
                hidden: config.gpi_hidden,
                value: config.gpi_value,
                summary: config.gpi_summary,
                out: config.dsg_width,
            },
        );
        let (head_node, head_pair) = if flags.use_dsg {
            (config.dsg_width, config.dsg_width)
        } else {
            (node, pair)
        };
        let query = QueryEmbedding::new(&mut store, &mut rng, "query", config.query_dim);
        let rrc = RrClassifier::new(&mut store, &mut rng, head_node, query.width(), config.rrc_hidden);
        let refiner_width = if flags.use_dsg && !flags.use_box_refiner { f } else { head_node };
        let refiner = BoxRefiner::new(&mut store, refiner_width);
        let labelers = SgLabelers::new(&mut store, &mut rng, head_node, head_pair);
        DsgModel {
            config,
            flags,
            store,
            entity_embed,
            relation_embed,
            gpi,
            query,
            rrc,
            refiner,
            labelers,
        }
    }

    pub fn gpi_param_ids(&self) -> Vec<ParamId> {
        self.gpi.param_ids()
    }

    /// Builds `z_i`, `z_ij` and, with the generator on, `z'`. `pair_rows` lists the
    /// `i`-major pair indices whose head features are wanted.
    pub fn encode(&self, g: &mut Graph, boxes: &BoxSet, pair_rows: &[usize]) -> Result<Encoded> {
        let store = &self.store;
        let n = boxes.len();
        let f = self.entity_embed.embed(g, store, &boxes.descriptors)?;
        let b = g.input(Tensor::new(vec![n, NODE_GEOMETRY], node_geometry(boxes))?)?;
        let nodes = g.concat(&[f, b], 1)?;

        let all_pairs = self.flags.use_dsg && n >= 2;
        let pair_list: Vec<(usize, usize)> = if all_pairs {
            boxes.pairs.iter().map(|p| (p.i, p.j)).collect()
        } else {
            pair_rows.iter().map(|&r| (boxes.pairs[r].i, boxes.pairs[r].j)).collect()
        };
        let pairs = if pair_list.is_empty() {
            None
        } else {
            Some(self.pair_features(g, boxes, &pair_list)?)
        };

        if self.flags.use_dsg {
            let dsg = gpi_forward(g, store, &self.gpi, nodes, pairs, self.config.mode, pair_rows)?;
            Ok(Encoded {
                nodes,
                head_nodes: dsg.nodes,
                head_pairs: dsg.pairs,
                refiner_input: if self.flags.use_box_refiner { dsg.nodes } else { f },
                dsg: Some(dsg),
            })
        } else {
            Ok(Encoded {
                nodes,
                head_nodes: nodes,
                head_pairs: pairs,
                refiner_input: nodes,
                dsg: None,
            })
        }
    }

    /// `z_ij` rows for the given ordered pairs. Union descriptors are shared by
    /// `(i, j)` and `(j, i)`, so each is embedded once.
    fn pair_features(&self, g: &mut Graph, boxes: &BoxSet, pairs: &[(usize, usize)]) -> Result<Var> {
        let n = boxes.len();
        let mut slot = vec![usize::MAX; n * n];
        let mut descs = Vec::new();
        let mut rows = Vec::with_capacity(pairs.len());
        let mut geo = Vec::with_capacity(pairs.len() * PAIR_GEOMETRY);
        for &(i, j) in pairs {
            let key = i.min(j) * n + i.max(j);
            if slot[key] == usize::MAX {
                slot[key] = descs.len();
                descs.push(boxes.pair(i, j).descriptor);
            }
            rows.push(slot[key]);
            geo.extend(pair_geometry(boxes, i, j));
        }
        let emb = self.relation_embed.embed(g, &self.store, &descs)?;
        let f = g.gather_rows(emb, &rows)?;
        let geo = g.input(Tensor::new(vec![pairs.len(), PAIR_GEOMETRY], geo)?)?;
        g.concat(&[f, geo], 1)
    }

    /// Role logits (`B × 4`) for one query.
    pub fn role_logits(&self, g: &mut Graph, enc: &Encoded, q: &Query) -> Result<Var> {
        let qv = self.query.forward(g, &self.store, q.subject, q.relation, q.object)?;
        self.rrc.forward(g, &self.store, enc.head_nodes, qv)
    }

    /// Runs every head needed for evaluation. Scene-graph probabilities over all
    /// ordered pairs are computed when `with_sg` is set or the variant reasons in two steps.
    pub fn predict(&self, boxes: &BoxSet, queries: &[Query], with_sg: bool) -> Result<ScenePrediction> {
        let n = boxes.len();
        let with_sg = with_sg || self.flags.two_step;
        let rows: Vec<usize> = if with_sg { (0..n * n.saturating_sub(1)).collect() } else { Vec::new() };
        let mut g = Graph::new();
        let enc = self.encode(&mut g, boxes, &rows)?;

        let mut role_logits = Vec::with_capacity(queries.len());
        for q in queries {
            let l = self.role_logits(&mut g, &enc, q)?;
            let t = g.value(l);
            role_logits.push((0..n).map(|i| {
                let r = t.row(i);
                [r[0], r[1], r[2], r[3]]
            }).collect());
        }

        let out_boxes = {
            let d = self.refiner.deltas(&mut g, &self.store, enc.refiner_input)?;
            let t = g.value(d);
            boxes
                .boxes
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let r = t.row(i);
                    // a refinement that collapses the box keeps the proposal
                    apply_deltas(b, [r[0], r[1], r[2], r[3]]).unwrap_or(*b)
                })
                .collect()
        };

        let sg = if with_sg {
            let e = self.labelers.label_entities(&mut g, &self.store, enc.head_nodes)?;
            let entity = softmax_rows(g.value(e));
            let relation = match enc.head_pairs {
                Some(p) => {
                    let r = self.labelers.label_relations(&mut g, &self.store, p)?;
                    softmax_rows(g.value(r))
                }
                None => Vec::new(),
            };
            Some(SgProbabilities { entity, relation })
        } else {
            None
        };

        Ok(ScenePrediction {
            role_logits,
            boxes: out_boxes,
            sg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proposals::{propose, ProposalConfig};
    use crate::scenegen::{generate_scene, rasterize, SceneConfig};

    fn scene_boxes(seed: u64) -> (crate::scenegen::Scene, BoxSet) {
        let scene = generate_scene(seed, seed, &SceneConfig::default()).unwrap();
        let img = rasterize(&scene);
        let bs = propose(&scene, &img, seed, &ProposalConfig::default()).unwrap();
        (scene, bs)
    }

    #[test]
    fn init_independent_of_flags() {
        let a = DsgModel::new(ModelConfig::default(), Ablation::Dsg.flags(), 3);
        let b = DsgModel::new(ModelConfig::default(), Ablation::NoBr.flags(), 3);
        let shared = |m: &DsgModel| -> Vec<(String, Tensor)> {
            m.store
                .iter()
                .filter(|(_, name, _)| !name.starts_with("refiner"))
                .map(|(_, name, t)| (name.to_string(), t.clone()))
                .collect()
        };
        assert_eq!(shared(&a), shared(&b));
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(a.name()), Some(a));
        }
    }

    #[test]
    fn predict_shapes() {
        let (scene, bs) = scene_boxes(5);
        for a in Ablation::ALL {
            let m = DsgModel::new(ModelConfig::default(), a.flags(), 1);
            let p = m.predict(&bs, &scene.queries, true).unwrap();
            assert_eq!(p.role_logits.len(), scene.queries.len());
            assert_eq!(p.boxes.len(), bs.len());
            let sg = p.sg.unwrap();
            assert_eq!(sg.entity.len(), bs.len());
            assert_eq!(sg.relation.len(), bs.len() * (bs.len() - 1));
        }
    }

    #[test]
    fn pair_features_directional() {
        let (_, bs) = scene_boxes(2);
        let (a, b) = (pair_geometry(&bs, 0, 1), pair_geometry(&bs, 1, 0));
        assert_eq!(a[..4], b[..4]);
        assert_eq!(a[4], -b[4]);
    }
}
