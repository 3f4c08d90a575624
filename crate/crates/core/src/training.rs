//! Role assignment, the multi-task loss, the SGD training loop, and the
//! two-step reasoner used by the scene-graph-first ablation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Sgd, Tensor, Var};
use crate::eval::{evaluate_rr, EvalError};
use crate::geometry::BBox;
use crate::heads::{decode_scene_graph, Role, SgProbabilities};
use crate::model::DsgModel;
use crate::proposals::{pair_index, propose, proposal_seed, BoxSet, ProposalConfig, ProposalError};
use crate::scenegen::{rasterize, relation_holds, Query, Scene};

/// Subject/Object need at least this IOU with their ground-truth box.
pub const POSITIVE_IOU: f64 = 0.5;
/// Above this IOU with another query's box a proposal is Other.
pub const OTHER_IOU: f64 = 0.5;
/// Below this best IOU a proposal is Background.
pub const BACKGROUND_IOU: f64 = 0.3;
/// Stream tag for training-time proposal seeds.
pub const TRAIN_STREAM: u64 = 0x7A11;
/// Stream tag for the fixed probe set used to compare initial and final loss.
pub const PROBE_STREAM: u64 = 0x9B0B;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("query {0} has an empty ground-truth list")]
    EmptyGroundTruth(usize),
    #[error("scene {0} has no queries")]
    EmptyBatch(u64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss diverged at epoch {epoch}, scene {scene_id}: {reason}")]
    Diverged {
        epoch: usize,
        scene_id: u64,
        reason: String,
    },
    #[error("two-step reasoning needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Training target per proposal for one query; `None` marks Ignore.
pub type Assignment = Option<Role>;

fn best_entity(p: &BBox, scene: &Scene) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, e) in scene.entities.iter().enumerate() {
        let v = p.iou(&e.bbox);
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

/// Role targets of `proposals` for query `qi` of `scene`. Entities named by the
/// other queries' ground truth supply the Other class. Each ground-truth subject and
/// object box also claims its best proposal (lowest index on ties), unless an
/// earlier box already claimed it; subjects claim before objects.
pub fn assign_roles(proposals: &[BBox], scene: &Scene, qi: usize) -> Result<Vec<Assignment>, TrainError> {
    let q = &scene.queries[qi];
    if q.gt_subjects.is_empty() || q.gt_objects.is_empty() {
        return Err(TrainError::EmptyGroundTruth(qi));
    }
    let role_of = |k: usize| {
        let id = scene.entities[k].id;
        if q.gt_subjects.contains(&id) {
            Some(Role::Subject)
        } else if q.gt_objects.contains(&id) {
            Some(Role::Object)
        } else {
            None
        }
    };
    let others: Vec<BBox> = scene
        .queries
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != qi)
        .flat_map(|(_, o)| o.gt_subjects.iter().chain(&o.gt_objects))
        .filter_map(|&id| scene.entity(id))
        .map(|e| e.bbox)
        .collect();

    let mut out: Vec<Assignment> = proposals
        .iter()
        .map(|p| {
            let (k, best) = best_entity(p, scene);
            match role_of(k) {
                Some(r) if best >= POSITIVE_IOU => return Some(r),
                _ => {}
            }
            if others.iter().any(|o| p.iou(o) > OTHER_IOU) {
                Some(Role::Other)
            } else if best < BACKGROUND_IOU {
                Some(Role::Background)
            } else {
                None
            }
        })
        .collect();

    let mut claimed = vec![false; proposals.len()];
    for (ids, role) in [(&q.gt_subjects, Role::Subject), (&q.gt_objects, Role::Object)] {
        for &id in ids {
            let Some(e) = scene.entity(id) else { continue };
            let mut best: Option<(usize, f64)> = None;
            for (i, p) in proposals.iter().enumerate() {
                let v = p.iou(&e.bbox);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((i, v));
                }
            }
            if let Some((i, _)) = best {
                if !claimed[i] {
                    claimed[i] = true;
                    out[i] = Some(role);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub rr: f64,
    pub r#box: f64,
    pub sgl: f64,
    /// Kept for configuration compatibility; the simulated detector has no loss.
    pub det: f64,
}

impl Default for LossWeights {
    /// Role weight 1, box weight 5, labeling weight 1. Every step is clipped to
    /// a global norm, so a head with a small weight gets almost no share of the
    /// update; the role classifier then stalls unless labeling supervision
    /// carries it.
    fn default() -> Self {
        LossWeights {
            rr: 1.0,
            r#box: 5.0,
            sgl: 1.0,
            det: 1.0,
        }
    }
}

/// Handles to the assembled loss and the values of its unweighted parts.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub rr: f64,
    pub r#box: f64,
    pub sgl: f64,
}

/// Smooth-L1 on boxes is measured in pixels so the delta regression sees
/// unit-scale errors.
fn canvas_scale(scene: &Scene) -> f64 {
    scene.canvas_px as f64
}

/// Weighted multi-task loss for all queries of one scene: role cross-entropy summed
/// over every non-Ignore proposal of every query, smooth-L1 in pixels averaged over
/// the coordinates of proposals matched to an entity, and labeling cross-entropy
/// summed over every role box and every role pair of every query.
pub fn total_loss(
    g: &mut Graph,
    model: &DsgModel,
    scene: &Scene,
    boxes: &BoxSet,
    weights: &LossWeights,
) -> Result<LossTerms, TrainError> {
    if scene.queries.is_empty() {
        return Err(TrainError::EmptyBatch(scene.scene_id));
    }
    let flags = model.flags;
    let n = boxes.len();
    let assignments: Vec<Vec<Assignment>> = (0..scene.queries.len())
        .map(|qi| assign_roles(&boxes.boxes, scene, qi))
        .collect::<Result<_, _>>()?;

    let sgl_on = flags.use_sgl_loss && weights.sgl != 0.0;
    let mut entity_rows = Vec::new();
    let mut entity_targets = Vec::new();
    let mut pair_rows: Vec<usize> = Vec::new();
    let mut relation_targets = Vec::new();
    if sgl_on {
        for (q, roles) in scene.queries.iter().zip(&assignments) {
            let matched = |i: usize, ids: &[u32]| {
                ids.iter()
                    .filter_map(|&id| scene.entity(id))
                    .max_by(|a, b| boxes.boxes[i].iou(&a.bbox).total_cmp(&boxes.boxes[i].iou(&b.bbox)))
            };
            let subj: Vec<usize> = (0..n).filter(|&i| roles[i] == Some(Role::Subject)).collect();
            let obj: Vec<usize> = (0..n).filter(|&i| roles[i] == Some(Role::Object)).collect();
            for &i in &subj {
                entity_rows.push(i);
                entity_targets.push(q.subject.index());
            }
            for &j in &obj {
                entity_rows.push(j);
                entity_targets.push(q.object.index());
            }
            for &i in &subj {
                for &j in &obj {
                    let (Some(a), Some(b)) = (matched(i, &q.gt_subjects), matched(j, &q.gt_objects)) else {
                        continue;
                    };
                    if i != j && relation_holds(a, b, q.relation) {
                        let row = pair_index(n, i, j);
                        let slot = match pair_rows.iter().position(|&r| r == row) {
                            Some(s) => s,
                            None => {
                                pair_rows.push(row);
                                pair_rows.len() - 1
                            }
                        };
                        relation_targets.push((slot, q.relation.index()));
                    }
                }
            }
        }
    }

    let enc = model.encode(g, boxes, &pair_rows)?;
    let mut parts: Vec<Var> = Vec::new();
    let mut terms = (0.0, 0.0, 0.0);

    if weights.rr != 0.0 {
        let mut logits = Vec::new();
        let mut targets = Vec::new();
        for (q, roles) in scene.queries.iter().zip(&assignments) {
            let rows: Vec<usize> = (0..n).filter(|&i| roles[i].is_some()).collect();
            if rows.is_empty() {
                continue;
            }
            let l = model.role_logits(g, &enc, q)?;
            logits.push(g.gather_rows(l, &rows)?);
            targets.extend(rows.iter().map(|&i| roles[i].unwrap().index()));
        }
        if !logits.is_empty() {
            let all = g.concat(&logits, 0)?;
            let ce = g.softmax_cross_entropy(all, &targets)?;
            let ce = g.scalar_mul(ce, targets.len() as f64)?;
            terms.0 = g.value(ce).item();
            parts.push(g.scalar_mul(ce, weights.rr)?);
        }
    }

    if weights.r#box != 0.0 {
        let scale = canvas_scale(scene);
        let mut rows = Vec::new();
        let mut target = Vec::new();
        for (i, b) in boxes.boxes.iter().enumerate() {
            let (k, best) = best_entity(b, scene);
            if best >= POSITIVE_IOU {
                rows.push(i);
                let gt = scene.entities[k].bbox;
                let (cx, cy) = gt.center();
                target.extend([cx * scale, cy * scale, gt.w * scale, gt.h * scale]);
            }
        }
        if !rows.is_empty() {
            let feats = g.gather_rows(enc.refiner_input, &rows)?;
            let deltas = model.refiner.deltas(g, &model.store, feats)?;
            let sel: Vec<BBox> = rows.iter().map(|&i| boxes.boxes[i]).collect();
            let refined = model.refiner.refined_center_form(g, deltas, &sel, scale)?;
            let t = g.input(Tensor::new(vec![rows.len(), 4], target)?)?;
            let l = g.smooth_l1(refined, t)?;
            terms.1 = g.value(l).item();
            parts.push(g.scalar_mul(l, weights.r#box)?);
        }
    }

    if sgl_on && !entity_rows.is_empty() {
        let feats = g.gather_rows(enc.head_nodes, &entity_rows)?;
        let el = model.labelers.label_entities(g, &model.store, feats)?;
        let l = g.softmax_cross_entropy(el, &entity_targets)?;
        let mut l = g.scalar_mul(l, entity_targets.len() as f64)?;
        if let (Some(p), false) = (enc.head_pairs, relation_targets.is_empty()) {
            let slots: Vec<usize> = relation_targets.iter().map(|t| t.0).collect();
            let targets: Vec<usize> = relation_targets.iter().map(|t| t.1).collect();
            let feats = g.gather_rows(p, &slots)?;
            let rl = model.labelers.label_relations(g, &model.store, feats)?;
            let rce = g.softmax_cross_entropy(rl, &targets)?;
            let rce = g.scalar_mul(rce, targets.len() as f64)?;
            l = g.add(l, rce)?;
        }
        terms.2 = g.value(l).item();
        parts.push(g.scalar_mul(l, weights.sgl)?);
    }

    let total = match parts.split_first() {
        None => g.input(Tensor::scalar(0.0))?,
        Some((first, rest)) => {
            let mut t = *first;
            for p in rest {
                t = g.add(t, *p)?;
            }
            t
        }
    };
    Ok(LossTerms {
        total,
        rr: terms.0,
        r#box: terms.1,
        sgl: terms.2,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub decay_period: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub proposals: ProposalConfig,
    /// Score the validation scenes after every epoch.
    pub val_every_epoch: bool,
    /// Training scenes in the fixed probe set for initial/final loss.
    pub probe_scenes: usize,
    /// Global gradient-norm cap per step; zero disables.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 16,
            lr: 0.01,
            momentum: 0.9,
            lr_decay: 0.5,
            decay_period: 3,
            seed: 0,
            weights: LossWeights::default(),
            proposals: ProposalConfig::default(),
            val_every_epoch: true,
            probe_scenes: 100,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.decay_period == 0 {
            return bad("decay_period must be at least 1");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be a finite non-negative number");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        let w = &self.weights;
        if [w.rr, w.r#box, w.sgl, w.det].iter().any(|v| !(*v >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_period) as i32)
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_rr: f64,
    pub loss_box: f64,
    pub loss_sgl: f64,
    pub val_subj_iou: f64,
    pub val_obj_iou: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    /// Mean weighted loss on the probe set before the first step.
    pub initial_loss: f64,
    /// The same after the last epoch.
    pub final_loss: f64,
}

/// Training-time proposals for a scene in a given epoch.
pub fn train_proposals(scene: &Scene, cfg: &TrainConfig, stream: u64) -> Result<BoxSet, TrainError> {
    let img = rasterize(scene);
    Ok(propose(scene, &img, proposal_seed(cfg.seed, stream, scene.scene_id), &cfg.proposals)?)
}

fn probe_loss(model: &DsgModel, probe: &[(Scene, BoxSet)], w: &LossWeights) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for (scene, boxes) in probe {
        let mut g = Graph::new();
        let t = total_loss(&mut g, model, scene, boxes, w)?;
        sum += g.value(t.total).item();
    }
    Ok(sum / probe.len().max(1) as f64)
}

/// Trains `model` in place, one SGD step per scene in dataset order. `on_epoch`
/// sees each epoch's metrics as soon as they are computed.
pub fn train(
    model: &mut DsgModel,
    train_set: &[Scene],
    val_set: &[Scene],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let scenes: Vec<&Scene> = train_set.iter().filter(|s| !s.queries.is_empty()).collect();
    if scenes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let probe: Vec<(Scene, BoxSet)> = scenes
        .iter()
        .take(cfg.probe_scenes)
        .map(|s| Ok(((*s).clone(), train_proposals(s, cfg, PROBE_STREAM)?)))
        .collect::<Result<_, TrainError>>()?;
    let initial_loss = probe_loss(model, &probe, &cfg.weights)?;

    let mut opt = Sgd::new(&model.store, cfg.lr, cfg.momentum);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr_at(epoch);
        let stream = TRAIN_STREAM.wrapping_add(epoch as u64);
        let mut sums = (0.0, 0.0, 0.0);
        for scene in &scenes {
            let boxes = train_proposals(scene, cfg, stream)?;
            let mut g = Graph::new();
            let diverged = |reason: String| TrainError::Diverged {
                epoch,
                scene_id: scene.scene_id,
                reason,
            };
            let terms = match total_loss(&mut g, model, scene, &boxes, &cfg.weights) {
                Err(TrainError::Autodiff(e @ AutodiffError::NonFinite { .. })) => {
                    return Err(diverged(e.to_string()))
                }
                r => r?,
            };
            let value = g.value(terms.total).item();
            if !value.is_finite() {
                return Err(diverged(format!("loss is {value}")));
            }
            let mut grads = g.backward(terms.total, &model.store)?;
            if cfg.clip_norm > 0.0 {
                grads.params.clip_norm(cfg.clip_norm);
            }
            opt.step(&mut model.store, &grads.params)?;
            sums.0 += terms.rr;
            sums.1 += terms.r#box;
            sums.2 += terms.sgl;
        }
        let n = scenes.len() as f64;
        let (val_subj_iou, val_obj_iou) = if cfg.val_every_epoch && !val_set.is_empty() {
            let s = evaluate_rr(&*model, val_set, &cfg.proposals, cfg.seed)?;
            (s.subject_mean(), s.object_mean())
        } else {
            (f64::NAN, f64::NAN)
        };
        let m = EpochMetrics {
            epoch: epoch + 1,
            loss_rr: sums.0 / n,
            loss_box: sums.1 / n,
            loss_sgl: sums.2 / n,
            val_subj_iou,
            val_obj_iou,
            lr: opt.lr,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    let final_loss = probe_loss(model, &probe, &cfg.weights)?;
    Ok(TrainReport {
        metrics,
        initial_loss,
        final_loss,
    })
}

/// Answers a query from a decoded scene graph: nodes of every triplet whose argmax
/// labels read `⟨s, r, o⟩`, or else the ordered pair maximizing
/// `P(s|i)·P(r|i,j)·P(o|j)` (first pair in `i`-major order on ties).
pub fn two_step_reason(sg: &SgProbabilities, q: &Query) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let n = sg.len();
    if n < 2 {
        return Err(TrainError::TooFewNodes(n));
    }
    let graph = decode_scene_graph(sg, n * (n - 1));
    let (mut subj, mut obj) = (Vec::new(), Vec::new());
    for e in &graph.edges {
        if e.relation == q.relation
            && graph.nodes[e.subject].category == q.subject
            && graph.nodes[e.object].category == q.object
        {
            subj.push(e.subject);
            obj.push(e.object);
        }
    }
    if !subj.is_empty() {
        subj.sort_unstable();
        subj.dedup();
        obj.sort_unstable();
        obj.dedup();
        return Ok((subj, obj));
    }
    let (s, r, o) = (q.subject.index(), q.relation.index(), q.object.index());
    let mut best = (0, 1, f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = sg.entity[i][s] * sg.relation(i, j)[r] * sg.entity[j][o];
            if p > best.2 {
                best = (i, j, p);
            }
        }
    }
    Ok((vec![best.0], vec![best.1]))
}
