//! Attention-map IOU for referring relationships, scene-graph decoding accuracy,
//! and side-by-side renders of ground truth against predictions.

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::geometry::BBox;
use crate::heads::{decode_scene_graph, select_boxes};
use crate::model::DsgModel;
use crate::proposals::{propose, proposal_seed, BoxSet, ProposalConfig, ProposalError};
use crate::raster::Image;
use crate::scenegen::{rasterize, relation_holds, Query, Scene};
use crate::training::two_step_reason;

/// Grid side used by the referring-relationship metric.
pub const DEFAULT_GRID: usize = 14;
/// Proposals must overlap a ground-truth box this much to count in decoding accuracy.
pub const DECODING_IOU_FLOOR: f64 = 0.8;
/// Stream tag for evaluation-time proposal seeds.
pub const EVAL_STREAM: u64 = 0xE7A1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("attention maps differ in size: {0} vs {1}")]
    GridMismatch(usize, usize),
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Model(#[from] AutodiffError),
    #[error("two-step reasoning needs at least two proposals, scene {0} has fewer")]
    TooFewProposals(u64),
}

/// `L × L` boolean grid over the unit canvas; cell `(r, c)` covers
/// `[c/L, (c+1)/L) × [r/L, (r+1)/L)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMap {
    side: usize,
    cells: Vec<bool>,
}

impl AttentionMap {
    pub fn empty(side: usize) -> Self {
        AttentionMap {
            side,
            cells: vec![false; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.side + c]
    }

    pub fn set(&mut self, r: usize, c: usize) {
        self.cells[r * self.side + c] = true;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }
}

/// Marks every cell sharing strictly positive area with some box.
pub fn boxes_to_map(boxes: &[BBox], side: usize) -> AttentionMap {
    let mut m = AttentionMap::empty(side);
    let lf = side as f64;
    for b in boxes {
        if b.is_degenerate() {
            continue;
        }
        let (x0, x1, y0, y1) = (b.x, b.x_max(), b.y, b.y_max());
        for r in 0..side {
            let (ca, cb) = (r as f64 / lf, (r + 1) as f64 / lf);
            if !(y1 > ca && y0 < cb) {
                continue;
            }
            for c in 0..side {
                let (ra, rb) = (c as f64 / lf, (c + 1) as f64 / lf);
                if x1 > ra && x0 < rb {
                    m.set(r, c);
                }
            }
        }
    }
    m
}

/// `|a ∧ b| / |a ∨ b|`; 1 when both are empty.
pub fn map_iou(a: &AttentionMap, b: &AttentionMap) -> Result<f64, EvalError> {
    if a.side != b.side {
        return Err(EvalError::GridMismatch(a.side, b.side));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.cells.iter().zip(&b.cells) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Predicted subject and object boxes for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct RoleBoxes {
    pub subject: Vec<BBox>,
    pub object: Vec<BBox>,
}

/// Anything that answers every query of a scene given its proposals.
pub trait QueryAnswerer {
    fn answer(&self, scene: &Scene, boxes: &BoxSet) -> Result<Vec<RoleBoxes>, EvalError>;
}

impl QueryAnswerer for DsgModel {
    fn answer(&self, scene: &Scene, boxes: &BoxSet) -> Result<Vec<RoleBoxes>, EvalError> {
        let pred = self.predict(boxes, &scene.queries, false)?;
        let pick = |ids: &[usize]| ids.iter().map(|&i| pred.boxes[i]).collect();
        if self.flags.two_step {
            let sg = pred.sg.as_ref().expect("two-step prediction carries a scene graph");
            scene
                .queries
                .iter()
                .map(|q| {
                    let (s, o) = two_step_reason(sg, q)
                        .map_err(|_| EvalError::TooFewProposals(scene.scene_id))?;
                    Ok(RoleBoxes {
                        subject: pick(&s),
                        object: pick(&o),
                    })
                })
                .collect()
        } else {
            Ok(pred
                .role_logits
                .iter()
                .map(|l| {
                    let (s, o) = select_boxes(l);
                    RoleBoxes {
                        subject: pick(&s),
                        object: pick(&o),
                    }
                })
                .collect())
        }
    }
}

/// Answers with the ground-truth boxes themselves.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleAnswerer;

impl QueryAnswerer for OracleAnswerer {
    fn answer(&self, scene: &Scene, _boxes: &BoxSet) -> Result<Vec<RoleBoxes>, EvalError> {
        Ok(scene
            .queries
            .iter()
            .map(|q| {
                let (subject, object) = gt_boxes(scene, q);
                RoleBoxes { subject, object }
            })
            .collect())
    }
}

pub fn gt_boxes(scene: &Scene, q: &Query) -> (Vec<BBox>, Vec<BBox>) {
    let get = |ids: &[u32]| ids.iter().filter_map(|&id| scene.entity(id)).map(|e| e.bbox).collect();
    (get(&q.gt_subjects), get(&q.gt_objects))
}

/// Evaluation-time proposals for a scene.
pub fn eval_proposals(scene: &Scene, seed: u64, cfg: &ProposalConfig) -> Result<BoxSet, EvalError> {
    let img = rasterize(scene);
    Ok(propose(scene, &img, proposal_seed(seed, EVAL_STREAM, scene.scene_id), cfg)?)
}

/// Per-query attention-map IOUs, in dataset order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RrScores {
    pub subject: Vec<f64>,
    pub object: Vec<f64>,
}

impl RrScores {
    pub fn len(&self) -> usize {
        self.subject.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject.is_empty()
    }

    pub fn subject_mean(&self) -> f64 {
        mean(&self.subject)
    }

    pub fn object_mean(&self) -> f64 {
        mean(&self.object)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation over `√n`; zero for fewer than two values.
pub fn standard_error(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    var.sqrt() / (n as f64).sqrt()
}

/// Worker count from `DSG_THREADS`, default 1.
pub fn thread_count() -> usize {
    std::env::var("DSG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Maps `f` over `items` on up to `threads` workers; results keep input order.
pub fn par_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    if threads <= 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

/// Referring-relationship scores of `answerer` over `scenes`.
pub fn evaluate_rr<A: QueryAnswerer + Sync>(
    answerer: &A,
    scenes: &[Scene],
    cfg: &ProposalConfig,
    seed: u64,
) -> Result<RrScores, EvalError> {
    let per_scene = par_map(scenes, thread_count(), |scene| -> Result<Vec<(f64, f64)>, EvalError> {
        if scene.queries.is_empty() {
            return Ok(Vec::new());
        }
        let boxes = eval_proposals(scene, seed, cfg)?;
        let answers = answerer.answer(scene, &boxes)?;
        scene
            .queries
            .iter()
            .zip(&answers)
            .map(|(q, a)| {
                let (gs, go) = gt_boxes(scene, q);
                let s = map_iou(&boxes_to_map(&gs, DEFAULT_GRID), &boxes_to_map(&a.subject, DEFAULT_GRID))?;
                let o = map_iou(&boxes_to_map(&go, DEFAULT_GRID), &boxes_to_map(&a.object, DEFAULT_GRID))?;
                Ok((s, o))
            })
            .collect()
    });
    let mut scores = RrScores {
        subject: Vec::new(),
        object: Vec::new(),
    };
    for r in per_scene {
        for (s, o) in r? {
            scores.subject.push(s);
            scores.object.push(o);
        }
    }
    if scores.is_empty() {
        return Err(EvalError::Empty("no queries in dataset"));
    }
    Ok(scores)
}

/// Scene-graph decoding accuracy; `None` when nothing qualified.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SgAccuracy {
    pub entity_acc: Option<f64>,
    pub relation_acc: Option<f64>,
    pub n_entities: usize,
    pub n_relations: usize,
}

/// Best-matching entity index per proposal when its IOU reaches `floor`.
pub fn matched_entities(scene: &Scene, boxes: &BoxSet, floor: f64) -> Vec<Option<usize>> {
    boxes
        .boxes
        .iter()
        .map(|b| {
            let mut best: Option<(usize, f64)> = None;
            for (k, e) in scene.entities.iter().enumerate() {
                let v = b.iou(&e.bbox);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((k, v));
                }
            }
            best.filter(|&(_, v)| v >= floor).map(|(k, _)| k)
        })
        .collect()
}

/// Entity accuracy over proposals whose best ground-truth IOU is at least
/// `iou_floor`; relation accuracy over ordered pairs of such proposals matched to
/// distinct entities, counting a prediction correct when that relation holds.
pub fn evaluate_sg_decoding(
    model: &DsgModel,
    scenes: &[Scene],
    cfg: &ProposalConfig,
    seed: u64,
    iou_floor: f64,
) -> Result<SgAccuracy, EvalError> {
    if scenes.is_empty() {
        return Err(EvalError::Empty("no scenes"));
    }
    let per_scene = par_map(scenes, thread_count(), |scene| -> Result<[usize; 4], EvalError> {
        let boxes = eval_proposals(scene, seed, cfg)?;
        let pred = model.predict(&boxes, &[], true)?;
        let sg = pred.sg.expect("scene graph requested");
        let n = boxes.len();
        let graph = decode_scene_graph(&sg, n * n.saturating_sub(1));
        let matched = matched_entities(scene, &boxes, iou_floor);
        let mut c = [0usize; 4];
        for (i, m) in matched.iter().enumerate() {
            if let Some(k) = m {
                c[1] += 1;
                c[0] += (graph.nodes[i].category == scene.entities[*k].category()) as usize;
            }
        }
        for e in &graph.edges {
            if let (Some(a), Some(b)) = (matched[e.subject], matched[e.object]) {
                if a != b {
                    c[3] += 1;
                    c[2] += relation_holds(&scene.entities[a], &scene.entities[b], e.relation) as usize;
                }
            }
        }
        Ok(c)
    });
    let mut t = [0usize; 4];
    for r in per_scene {
        for (a, b) in t.iter_mut().zip(r?) {
            *a += b;
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(SgAccuracy {
        entity_acc: ratio(t[0], t[1]),
        relation_acc: ratio(t[2], t[3]),
        n_entities: t[1],
        n_relations: t[3],
    })
}

/// Mean box IOU against the matched ground truth before and after refinement.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementReport {
    pub unrefined_iou: f64,
    pub refined_iou: f64,
    pub n_boxes: usize,
}

/// Compares proposals with their refined boxes over every proposal whose best
/// ground-truth IOU reaches `floor`.
pub fn evaluate_refinement(
    model: &DsgModel,
    scenes: &[Scene],
    cfg: &ProposalConfig,
    seed: u64,
    floor: f64,
) -> Result<RefinementReport, EvalError> {
    let per_scene = par_map(scenes, thread_count(), |scene| -> Result<Vec<(f64, f64)>, EvalError> {
        let boxes = eval_proposals(scene, seed, cfg)?;
        let pred = model.predict(&boxes, &[], false)?;
        let matched = matched_entities(scene, &boxes, floor);
        Ok(matched
            .iter()
            .enumerate()
            .filter_map(|(i, m)| {
                let gt = &scene.entities[(*m)?].bbox;
                Some((boxes.boxes[i].iou(gt), pred.boxes[i].iou(gt)))
            })
            .collect())
    });
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for r in per_scene {
        for (a, b) in r? {
            before.push(a);
            after.push(b);
        }
    }
    if before.is_empty() {
        return Err(EvalError::Empty("no positive proposals"));
    }
    Ok(RefinementReport {
        unrefined_iou: mean(&before),
        refined_iou: mean(&after),
        n_boxes: before.len(),
    })
}

/// Summary written by the `eval` command.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub subject_iou: f64,
    pub object_iou: f64,
    pub entity_acc: Option<f64>,
    pub relation_acc: Option<f64>,
    pub n_queries: usize,
}

impl EvalReport {
    pub fn new(rr: &RrScores, sg: &SgAccuracy) -> Self {
        EvalReport {
            subject_iou: rr.subject_mean(),
            object_iou: rr.object_mean(),
            entity_acc: sg.entity_acc,
            relation_acc: sg.relation_acc,
            n_queries: rr.len(),
        }
    }
}

const SUBJECT_COLOR: [u8; 3] = [230, 40, 40];
const OBJECT_COLOR: [u8; 3] = [40, 90, 230];

fn map_panel(px: usize, subject: &AttentionMap, object: &AttentionMap) -> Image {
    let mut img = Image::filled(px, px, [0, 0, 0]);
    let l = subject.side();
    for y in 0..px {
        for x in 0..px {
            let (r, c) = (y * l / px, x * l / px);
            let mut p = [0u8; 3];
            if subject.get(r, c) {
                p[0] = 255;
            }
            if object.get(r, c) {
                p[2] = 255;
            }
            img.set(x, y, p);
        }
    }
    img
}

/// Three panels: the scene with predicted subject (red) and object (blue) boxes,
/// the ground-truth attention maps, and the predicted maps.
pub fn render_query(scene: &Scene, q: &Query, answer: &RoleBoxes) -> Image {
    let mut img = rasterize(scene);
    for b in &answer.subject {
        img.outline(b, SUBJECT_COLOR);
    }
    for b in &answer.object {
        img.outline(b, OBJECT_COLOR);
    }
    let px = scene.canvas_px as usize;
    let (gs, go) = gt_boxes(scene, q);
    let gt = map_panel(px, &boxes_to_map(&gs, DEFAULT_GRID), &boxes_to_map(&go, DEFAULT_GRID));
    let pred = map_panel(
        px,
        &boxes_to_map(&answer.subject, DEFAULT_GRID),
        &boxes_to_map(&answer.object, DEFAULT_GRID),
    );
    img.hstack(&gt).hstack(&pred)
}
