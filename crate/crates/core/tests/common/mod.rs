//! Independent oracles shared by the integration suites and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;

use dsg::autodiff::{softmax_values, Graph, ParamStore, Tensor};
use dsg::dsggen::{gpi_forward, pair_endpoints, AggregationMode, GpiDims, GpiParams};
use dsg::geometry::BBox;
use dsg::heads::{Role, SgProbabilities};
use dsg::model::{Ablation, DsgModel, ModelConfig};
use dsg::proposals::{pair_index, propose, BoxSet, ProposalConfig};
use dsg::scenegen::{generate_scene, rasterize, Category, Query, Relation, Scene, SceneConfig, NUM_CATEGORIES, NUM_RELATIONS};
use dsg::training::{total_loss, Assignment, LossWeights};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- gradients ----

pub const GRAD_STEP: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Denominator floor so entries with vanishing gradient are judged absolutely.
pub const GRAD_FLOOR: f64 = 1e-4;
pub const GRAD_SEEDS: u64 = 20;

pub const DSG_NETWORKS: &[&str] = &[
    "embed.entity",
    "embed.relation",
    "gpi.phi",
    "gpi.alpha",
    "gpi.rho_entity",
    "gpi.rho_relation",
    "rrc",
    "refiner",
    "sgl.entity",
    "sgl.relation",
];

/// Variants and the networks each must exercise.
pub const GRAD_CASES: &[(Ablation, AggregationMode, &[&str])] = &[
    (Ablation::Dsg, AggregationMode::Attention, DSG_NETWORKS),
    (Ablation::Dsg, AggregationMode::Sum, DSG_NETWORKS),
    (Ablation::NoBr, AggregationMode::Attention, &["embed.entity", "refiner", "rrc"]),
    (
        Ablation::NoDsg,
        AggregationMode::Attention,
        &["embed.entity", "embed.relation", "rrc", "refiner", "sgl.entity", "sgl.relation"],
    ),
];

fn tiny_config(mode: AggregationMode) -> ModelConfig {
    ModelConfig {
        feature_width: 3,
        embed_hidden: 4,
        gpi_hidden: 4,
        gpi_value: 3,
        gpi_summary: 3,
        dsg_width: 3,
        query_dim: 2,
        rrc_hidden: 4,
        mode,
    }
}

fn grad_instance(seed: u64) -> (Scene, BoxSet) {
    let cfg = SceneConfig {
        min_entities: 3,
        max_entities: 3,
        max_queries: 2,
        ..SceneConfig::default()
    };
    let scene = (0..)
        .map(|id| generate_scene(id, 1000 + seed, &cfg).unwrap())
        .find(|s| !s.queries.is_empty())
        .unwrap();
    let props = ProposalConfig {
        n_background: 1,
        ..ProposalConfig::default()
    };
    let boxes = propose(&scene, &rasterize(&scene), seed, &props).unwrap();
    (scene, boxes)
}

fn loss_value(model: &DsgModel, scene: &Scene, boxes: &BoxSet) -> f64 {
    let mut g = Graph::new();
    let t = total_loss(&mut g, model, scene, boxes, &LossWeights::default()).unwrap();
    g.value(t.total).item()
}

/// Network a parameter belongs to: its name up to the layer index.
fn network(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    let cut = parts.iter().position(|p| p.parse::<usize>().is_ok()).unwrap_or(parts.len());
    parts[..cut].join(".")
}

/// Per network of a tiny model: worst relative error between the analytic
/// gradient of the full loss and a central difference, and whether any entry
/// of its gradient was nonzero.
pub fn gradient_errors(ablation: Ablation, mode: AggregationMode, seed: u64) -> BTreeMap<String, (f64, bool)> {
    let (scene, boxes) = grad_instance(seed);
    let mut model = DsgModel::new(tiny_config(mode), ablation.flags(), seed);
    let mut g = Graph::new();
    let t = total_loss(&mut g, &model, &scene, &boxes, &LossWeights::default()).unwrap();
    let grads = g.backward(t.total, &model.store).unwrap();

    let mut worst: BTreeMap<String, (f64, bool)> = BTreeMap::new();
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let analytic = grads.params.get(id).data().to_vec();
        let entry = worst.entry(network(model.store.name(id))).or_insert((0.0, false));
        for (k, &a) in analytic.iter().enumerate() {
            let orig = model.store.get(id).data()[k];
            model.store.get_mut(id).data_mut()[k] = orig + GRAD_STEP;
            let up = loss_value(&model, &scene, &boxes);
            model.store.get_mut(id).data_mut()[k] = orig - GRAD_STEP;
            let down = loss_value(&model, &scene, &boxes);
            model.store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            entry.0 = entry.0.max(rel);
            entry.1 |= a != 0.0;
        }
    }
    worst
}

/// Runs every case over all seeds; returns the worst error or a description of
/// the first failure.
pub fn gradient_suite() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for &(ablation, mode, expected) in GRAD_CASES {
        for seed in 0..GRAD_SEEDS {
            let errs = gradient_errors(ablation, mode, seed);
            for net in expected {
                match errs.get(*net) {
                    None => return Err(format!("{}: {net} has no parameters", ablation.name())),
                    Some((_, false)) => return Err(format!("{} seed {seed}: {net} got no gradient", ablation.name())),
                    Some(_) => {}
                }
            }
            for (net, (err, _)) in &errs {
                if *err >= GRAD_TOLERANCE {
                    return Err(format!("{} {} seed {seed}: {net} error {err:.3e}", ablation.name(), mode.name()));
                }
                worst = worst.max(*err);
            }
        }
    }
    Ok(worst)
}

// ---- permutation ----

pub const GPI_DIMS: GpiDims = GpiDims {
    node: 5,
    pair: 3,
    hidden: 12,
    value: 6,
    summary: 4,
    out: 7,
};

struct GpiOut {
    summary: Vec<f64>,
    nodes: Tensor,
    pairs: Option<Tensor>,
}

fn gpi_run(store: &ParamStore, params: &GpiParams, nodes: &Tensor, pairs: Option<&Tensor>, mode: AggregationMode) -> GpiOut {
    let mut g = Graph::new();
    let n = g.input(nodes.clone()).unwrap();
    let p = pairs.map(|p| g.input(p.clone()).unwrap());
    let rows: Vec<usize> = (0..pairs.map_or(0, |p| p.shape()[0])).collect();
    let out = gpi_forward(&mut g, store, params, n, p, mode, &rows).unwrap();
    GpiOut {
        summary: g.value(out.summary).data().to_vec(),
        nodes: g.value(out.nodes).clone(),
        pairs: out.pairs.map(|v| g.value(v).clone()),
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random generator and graph with `n` nodes, relabelled by a random permutation.
/// Returns the largest deviation from invariance of the summary and from
/// equivariance of node and pair outputs.
pub fn permutation_gap(n: usize, seed: u64, mode: AggregationMode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let params = GpiParams::new(&mut store, &mut rng, "gpi", GPI_DIMS);
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect() };
    let n_pairs = n * (n - 1);
    let nodes = Tensor::new(vec![n, GPI_DIMS.node], draw(n * GPI_DIMS.node)).unwrap();
    let pairs = (n >= 2).then(|| Tensor::new(vec![n_pairs, GPI_DIMS.pair], draw(n_pairs * GPI_DIMS.pair)).unwrap());

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    // new node k is old node perm[k]; new pair (i, j) is old pair (perm[i], perm[j])
    let p_nodes: Vec<f64> = perm.iter().flat_map(|&k| nodes.row(k).to_vec()).collect();
    let p_nodes = Tensor::new(vec![n, GPI_DIMS.node], p_nodes).unwrap();
    let (is, js) = pair_endpoints(n);
    let p_pairs = pairs.as_ref().map(|p| {
        let data: Vec<f64> = is
            .iter()
            .zip(&js)
            .flat_map(|(&i, &j)| p.row(pair_index(n, perm[i], perm[j])).to_vec())
            .collect();
        Tensor::new(vec![n_pairs, GPI_DIMS.pair], data).unwrap()
    });

    let a = gpi_run(&store, &params, &nodes, pairs.as_ref(), mode);
    let b = gpi_run(&store, &params, &p_nodes, p_pairs.as_ref(), mode);
    let mut gap = max_gap(&a.summary, &b.summary);
    for (k, &old) in perm.iter().enumerate() {
        gap = gap.max(max_gap(b.nodes.row(k), a.nodes.row(old)));
    }
    if let (Some(pa), Some(pb)) = (&a.pairs, &b.pairs) {
        for (row, (&i, &j)) in is.iter().zip(&js).enumerate() {
            gap = gap.max(max_gap(pb.row(row), pa.row(pair_index(n, perm[i], perm[j]))));
        }
    }
    gap
}

// ---- role assignment ----

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Subject,
    Object,
    Other,
    Background,
    Ignore,
}

impl From<Assignment> for Label {
    fn from(a: Assignment) -> Self {
        match a {
            Some(Role::Subject) => Label::Subject,
            Some(Role::Object) => Label::Object,
            Some(Role::Other) => Label::Other,
            Some(Role::Background) => Label::Background,
            None => Label::Ignore,
        }
    }
}

/// Facts about one proposal that the rule table reads.
struct Facts {
    best_is_subject: bool,
    best_is_object: bool,
    best_iou: f64,
    other_iou: f64,
}

/// Rows are tried top to bottom; the first matching row decides.
const RULES: &[(fn(&Facts) -> bool, Label)] = &[
    (|f| f.best_is_subject && f.best_iou >= 0.5, Label::Subject),
    (|f| f.best_is_object && f.best_iou >= 0.5, Label::Object),
    (|f| f.other_iou > 0.5, Label::Other),
    (|f| f.best_iou < 0.3, Label::Background),
    (|_| true, Label::Ignore),
];

pub fn role_oracle(proposals: &[BBox], scene: &Scene, qi: usize) -> Vec<Label> {
    let q = &scene.queries[qi];
    let box_of = |id: u32| scene.entities.iter().find(|e| e.id == id).unwrap().bbox;
    let mut other_boxes = Vec::new();
    for (j, o) in scene.queries.iter().enumerate() {
        if j != qi {
            other_boxes.extend(o.gt_subjects.iter().chain(&o.gt_objects).map(|&id| box_of(id)));
        }
    }

    let mut labels: Vec<Label> = proposals
        .iter()
        .map(|p| {
            // lowest entity index wins ties
            let mut best = 0;
            for k in 1..scene.entities.len() {
                if p.iou(&scene.entities[k].bbox) > p.iou(&scene.entities[best].bbox) {
                    best = k;
                }
            }
            let id = scene.entities[best].id;
            let facts = Facts {
                best_is_subject: q.gt_subjects.contains(&id),
                best_is_object: q.gt_objects.contains(&id),
                best_iou: p.iou(&scene.entities[best].bbox),
                other_iou: other_boxes.iter().map(|o| p.iou(o)).fold(0.0, f64::max),
            };
            RULES.iter().find(|(rule, _)| rule(&facts)).unwrap().1
        })
        .collect();

    let mut taken = vec![false; proposals.len()];
    let forced = q
        .gt_subjects
        .iter()
        .map(|&id| (id, Label::Subject))
        .chain(q.gt_objects.iter().map(|&id| (id, Label::Object)));
    for (id, label) in forced {
        let gt = box_of(id);
        let mut best = 0;
        for i in 1..proposals.len() {
            if proposals[i].iou(&gt) > proposals[best].iou(&gt) {
                best = i;
            }
        }
        if !taken[best] {
            taken[best] = true;
            labels[best] = label;
        }
    }
    labels
}

/// Proposals for scene `id` of the role-assignment suite. Tight and loose
/// detectors alternate so every band is populated.
pub fn role_case(id: u64) -> (Scene, BoxSet) {
    let scene = generate_scene(id, 77, &SceneConfig::default()).unwrap();
    let props = ProposalConfig {
        jitter: if id % 2 == 0 { 0.1 } else { 0.35 },
        n_background: 6,
        bg_max_iou: 0.45,
        ..ProposalConfig::default()
    };
    let boxes = propose(&scene, &rasterize(&scene), id, &props).unwrap();
    (scene, boxes)
}

// ---- attention maps ----

pub const FINE: usize = 1400;

/// Pixel `p` spans `[p/FINE, (p+1)/FINE)`; it is covered when it shares positive
/// area with a box. A grid cell is set when any of its pixels is covered.
pub fn raster_oracle(boxes: &[BBox], side: usize) -> Vec<bool> {
    let mut fine = vec![false; FINE * FINE];
    let px = |v: f64| v * FINE as f64;
    for b in boxes {
        if b.w <= 0.0 || b.h <= 0.0 {
            continue;
        }
        let (x0, x1, y0, y1) = (px(b.x), px(b.x + b.w), px(b.y), px(b.y + b.h));
        for row in 0..FINE {
            if !(y1 > row as f64 && y0 < (row + 1) as f64) {
                continue;
            }
            for col in 0..FINE {
                if x1 > col as f64 && x0 < (col + 1) as f64 {
                    fine[row * FINE + col] = true;
                }
            }
        }
    }
    let k = FINE / side;
    let mut cells = vec![false; side * side];
    for row in 0..FINE {
        for col in 0..FINE {
            if fine[row * FINE + col] {
                cells[(row / k) * side + col / k] = true;
            }
        }
    }
    cells
}

pub fn random_box(rng: &mut impl Rng) -> BBox {
    let x0: f64 = rng.gen_range(0.0..1.0);
    let y0: f64 = rng.gen_range(0.0..1.0);
    let w = rng.gen_range(0.0..=(1.0 - x0));
    let h = rng.gen_range(0.0..=(1.0 - y0));
    BBox::new(x0, y0, w, h)
}

/// Random sets of one to six boxes.
pub fn random_box_sets(seed: u64, count: usize) -> Vec<Vec<BBox>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=6);
            (0..n).map(|_| random_box(&mut rng)).collect()
        })
        .collect()
}

// ---- decoded graphs ----

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

/// Coarse integer logits make tied scores common.
pub fn random_graph(rng: &mut impl Rng, n: usize, coarse: bool) -> SgProbabilities {
    let mut dist = |k: usize| -> Vec<f64> {
        let logits: Vec<f64> = (0..k)
            .map(|_| if coarse { rng.gen_range(0..3) as f64 } else { rng.gen_range(-3.0..3.0) })
            .collect();
        softmax_values(&logits)
    };
    SgProbabilities {
        entity: (0..n).map(|_| dist(NUM_CATEGORIES)).collect(),
        relation: (0..n * (n - 1)).map(|_| dist(NUM_RELATIONS)).collect(),
    }
}

pub fn query(s: usize, r: usize, o: usize) -> Query {
    Query {
        subject: Category(s as u8),
        relation: Relation::from_index(r).unwrap(),
        object: Category(o as u8),
        gt_subjects: Vec::new(),
        gt_objects: Vec::new(),
    }
}

/// Every ordered pair `(i, j)` with its score and whether its argmax labels spell the query.
pub fn enumerate_pairs(sg: &SgProbabilities, s: usize, r: usize, o: usize) -> Vec<(usize, usize, f64, bool)> {
    let n = sg.entity.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let rel = sg.relation(i, j);
                let score = sg.entity[i][s] * rel[r] * sg.entity[j][o];
                let exact = argmax(&sg.entity[i]) == s && argmax(rel) == r && argmax(&sg.entity[j]) == o;
                out.push((i, j, score, exact));
            }
        }
    }
    out
}

/// Random graphs with a query none of their triplets spells, paired with the
/// enumerated best pair (first in `i`-major order on ties).
pub fn fallback_cases(seed: u64, count: usize) -> Vec<(SgProbabilities, Query, (usize, usize))> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = rng.gen_range(2..=8);
        let sg = random_graph(&mut rng, n, out.len() % 2 == 1);
        let (s, r, o) = (
            rng.gen_range(0..NUM_CATEGORIES),
            rng.gen_range(0..NUM_RELATIONS),
            rng.gen_range(0..NUM_CATEGORIES),
        );
        let pairs = enumerate_pairs(&sg, s, r, o);
        if pairs.iter().any(|p| p.3) {
            continue;
        }
        let top = pairs.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
        let first = pairs.iter().find(|p| p.2 == top).unwrap();
        out.push((sg, query(s, r, o), (first.0, first.1)));
    }
    out
}

/// Random graphs queried with labels one of their pairs carries, paired with
/// the sorted subject and object nodes of every matching triplet.
pub fn exact_cases(seed: u64, count: usize) -> Vec<(SgProbabilities, Query, (Vec<usize>, Vec<usize>))> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = rng.gen_range(2..=8);
        let sg = random_graph(&mut rng, n, false);
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if i == j {
            continue;
        }
        let (s, r, o) = (argmax(&sg.entity[i]), argmax(sg.relation(i, j)), argmax(&sg.entity[j]));
        let pairs = enumerate_pairs(&sg, s, r, o);
        let mut subj: Vec<usize> = pairs.iter().filter(|p| p.3).map(|p| p.0).collect();
        let mut obj: Vec<usize> = pairs.iter().filter(|p| p.3).map(|p| p.1).collect();
        subj.sort();
        subj.dedup();
        obj.sort();
        obj.dedup();
        out.push((sg, query(s, r, o), (subj, obj)));
    }
    out
}
