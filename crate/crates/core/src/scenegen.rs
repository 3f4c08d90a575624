//! Procedural CLEVR-like scenes: flat shapes on a gray canvas, spatial relations
//! between them, and referring-relationship queries with exhaustive ground truth.
//!
//! Depth is the vertical position of an entity's center, the way a camera looking
//! down at a table makes far objects appear higher in the frame. `behind` means a
//! smaller depth, `front` a larger one, and rasterization paints in depth order.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::raster::{Image, Rgb};

pub const NUM_SHAPES: usize = 3;
pub const NUM_COLORS: usize = 8;
pub const NUM_SIZES: usize = 2;
/// Shape × color × size.
pub const NUM_CATEGORIES: usize = NUM_SHAPES * NUM_COLORS * NUM_SIZES;
pub const NUM_RELATIONS: usize = 4;

pub const BACKGROUND: Rgb = [128, 128, 128];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Gray,
    Red,
    Blue,
    Green,
    Brown,
    Purple,
    Cyan,
    Yellow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Left,
    Right,
    Front,
    Behind,
}

impl Shape {
    pub const ALL: [Shape; NUM_SHAPES] = [Shape::Square, Shape::Circle, Shape::Triangle];
}

impl Color {
    pub const ALL: [Color; NUM_COLORS] = [
        Color::Gray,
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Brown,
        Color::Purple,
        Color::Cyan,
        Color::Yellow,
    ];

    pub fn rgb(self) -> Rgb {
        match self {
            Color::Gray => [87, 87, 87],
            Color::Red => [173, 35, 35],
            Color::Blue => [42, 75, 215],
            Color::Green => [29, 105, 20],
            Color::Brown => [129, 74, 25],
            Color::Purple => [129, 38, 192],
            Color::Cyan => [41, 208, 208],
            Color::Yellow => [255, 238, 51],
        }
    }
}

impl Size {
    pub const ALL: [Size; NUM_SIZES] = [Size::Small, Size::Large];
}

impl Relation {
    pub const ALL: [Relation; NUM_RELATIONS] =
        [Relation::Left, Relation::Right, Relation::Front, Relation::Behind];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Relation> {
        Relation::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Left => "left",
            Relation::Right => "right",
            Relation::Front => "front",
            Relation::Behind => "behind",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Entity category, `0..NUM_CATEGORIES`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Category(pub u8);

impl Category {
    pub fn from_parts(shape: Shape, color: Color, size: Size) -> Self {
        Category(((shape as usize * NUM_COLORS + color as usize) * NUM_SIZES + size as usize) as u8)
    }

    pub fn parts(self) -> (Shape, Color, Size) {
        let i = self.0 as usize;
        let size = Size::ALL[i % NUM_SIZES];
        let color = Color::ALL[(i / NUM_SIZES) % NUM_COLORS];
        let shape = Shape::ALL[i / (NUM_SIZES * NUM_COLORS)];
        (shape, color, size)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_valid(self) -> bool {
        (self.0 as usize) < NUM_CATEGORIES
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (shape, color, size) = self.parts();
        write!(f, "{size:?} {color:?} {shape:?}").map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: u32,
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub depth: f64,
}

impl Entity {
    pub fn category(&self) -> Category {
        Category::from_parts(self.shape, self.color, self.size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "s")]
    pub subject: Category,
    #[serde(rename = "r")]
    pub relation: Relation,
    #[serde(rename = "o")]
    pub object: Category,
    #[serde(rename = "gt_s")]
    pub gt_subjects: Vec<u32>,
    #[serde(rename = "gt_o")]
    pub gt_objects: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub canvas_px: u32,
    pub entities: Vec<Entity>,
    pub queries: Vec<Query>,
}

impl Scene {
    pub fn entity(&self, id: u32) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// At least two entities share a category.
    pub fn is_ambiguous(&self) -> bool {
        let mut seen = BTreeSet::new();
        !self.entities.iter().all(|e| seen.insert(e.category()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub canvas_px: u32,
    pub min_entities: usize,
    pub max_entities: usize,
    /// Probability that a scene duplicates one category.
    pub ambiguity_rate: f64,
    /// Minimum distance between entity centers, in canvas units.
    pub min_separation: f64,
    pub max_queries: usize,
    /// Inclusive side-length range in pixels for small entities.
    pub small_px: (u32, u32),
    pub large_px: (u32, u32),
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            canvas_px: 64,
            min_entities: 3,
            max_entities: 8,
            ambiguity_rate: 0.33,
            min_separation: 0.15,
            max_queries: 4,
            small_px: (9, 11),
            large_px: (14, 17),
            max_attempts: 500,
        }
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("could not place {entities} entities with separation {separation} after {attempts} attempts")]
    Infeasible {
        entities: usize,
        separation: f64,
        attempts: usize,
    },
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        if self.min_entities < 2 {
            return bad("min_entities must be at least 2");
        }
        if self.max_entities < self.min_entities {
            return bad("max_entities must be >= min_entities");
        }
        if self.max_entities > 32 {
            return bad("max_entities must be <= 32");
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return bad("ambiguity_rate must lie in [0, 1]");
        }
        if self.max_entities > NUM_CATEGORIES {
            return bad("more entities than categories");
        }
        if self.min_separation < 0.0 {
            return bad("min_separation must be non-negative");
        }
        let (s0, s1) = self.small_px;
        let (l0, l1) = self.large_px;
        if s0 == 0 || s0 > s1 || l0 == 0 || l0 > l1 || l1 > self.canvas_px {
            return bad("entity size ranges must be non-empty and fit the canvas");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }
}

/// Spatial predicate `⟨a, r, b⟩`. Ties on the compared coordinate give `false`.
pub fn relation_holds(a: &Entity, b: &Entity, r: Relation) -> bool {
    let (ax, _) = a.bbox.center();
    let (bx, _) = b.bbox.center();
    match r {
        Relation::Left => ax < bx,
        Relation::Right => ax > bx,
        Relation::Behind => a.depth < b.depth,
        Relation::Front => a.depth > b.depth,
    }
}

fn pick_categories(rng: &mut impl Rng, n: usize, ambiguous: bool) -> Vec<Category> {
    let mut all: Vec<u8> = (0..NUM_CATEGORIES as u8).collect();
    all.shuffle(rng);
    let mut cats: Vec<Category> = if ambiguous {
        let mut v: Vec<Category> = all[..n - 1].iter().map(|&c| Category(c)).collect();
        v.push(v[0]);
        v
    } else {
        all[..n].iter().map(|&c| Category(c)).collect()
    };
    cats.shuffle(rng);
    cats
}

fn place(
    rng: &mut impl Rng,
    config: &SceneConfig,
    cats: &[Category],
) -> Option<Vec<Entity>> {
    let canvas = config.canvas_px;
    let cf = canvas as f64;
    let mut entities: Vec<Entity> = Vec::with_capacity(cats.len());
    for (id, &cat) in cats.iter().enumerate() {
        let (shape, color, size) = cat.parts();
        let (lo, hi) = match size {
            Size::Small => config.small_px,
            Size::Large => config.large_px,
        };
        let side = rng.gen_range(lo..=hi);
        let mut placed = None;
        for _ in 0..config.max_attempts {
            let x = rng.gen_range(0..=canvas - side);
            let y = rng.gen_range(0..=canvas - side);
            let b = BBox::new(x as f64 / cf, y as f64 / cf, side as f64 / cf, side as f64 / cf);
            let (cx, cy) = b.center();
            let clear = entities.iter().all(|e| {
                let (ex, ey) = e.bbox.center();
                ((cx - ex).powi(2) + (cy - ey).powi(2)).sqrt() >= config.min_separation
            });
            if clear {
                placed = Some(b);
                break;
            }
        }
        let bbox = placed?;
        entities.push(Entity {
            id: id as u32,
            shape,
            color,
            size,
            bbox,
            depth: bbox.center().1,
        });
    }
    Some(entities)
}

/// Builds one scene, deterministic in `seed`.
pub fn generate_scene(scene_id: u64, seed: u64, config: &SceneConfig) -> Result<Scene, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(config.min_entities..=config.max_entities);
    let ambiguous = rng.gen_bool(config.ambiguity_rate);
    let cats = pick_categories(&mut rng, n, ambiguous);
    const RESTARTS: usize = 20;
    for _ in 0..RESTARTS {
        if let Some(entities) = place(&mut rng, config, &cats) {
            let mut scene = Scene {
                scene_id,
                canvas_px: config.canvas_px,
                entities,
                queries: Vec::new(),
            };
            scene.queries = generate_queries(&scene, config.max_queries, &mut rng);
            return Ok(scene);
        }
    }
    Err(SceneError::Infeasible {
        entities: n,
        separation: config.min_separation,
        attempts: RESTARTS * config.max_attempts,
    })
}

/// Seed of scene `scene_id` within a dataset generated from `seed`.
pub fn scene_seed(seed: u64, scene_id: u64) -> u64 {
    crate::proposals::proposal_seed(seed, 0x5CE7E, scene_id)
}

/// Scenes with ids `ids`, each deterministic in `(seed, id)`.
pub fn generate_dataset(
    ids: std::ops::Range<u64>,
    seed: u64,
    config: &SceneConfig,
) -> Result<Vec<Scene>, SceneError> {
    ids.map(|id| generate_scene(id, scene_seed(seed, id), config)).collect()
}

/// Every satisfied `⟨s, r, o⟩` with distinct categories, ground truth exhaustive,
/// ordered by `(s, r, o)`.
pub fn all_queries(scene: &Scene) -> Vec<Query> {
    let cats: BTreeSet<Category> = scene.entities.iter().map(Entity::category).collect();
    let mut out = Vec::new();
    for &s in &cats {
        for r in Relation::ALL {
            for &o in &cats {
                if s == o {
                    continue;
                }
                let subjects: Vec<&Entity> =
                    scene.entities.iter().filter(|e| e.category() == s).collect();
                let objects: Vec<&Entity> =
                    scene.entities.iter().filter(|e| e.category() == o).collect();
                let mut gt_s: Vec<u32> = subjects
                    .iter()
                    .filter(|a| objects.iter().any(|b| relation_holds(a, b, r)))
                    .map(|a| a.id)
                    .collect();
                let mut gt_o: Vec<u32> = objects
                    .iter()
                    .filter(|b| subjects.iter().any(|a| relation_holds(a, b, r)))
                    .map(|b| b.id)
                    .collect();
                if gt_s.is_empty() {
                    continue;
                }
                gt_s.sort_unstable();
                gt_o.sort_unstable();
                out.push(Query {
                    subject: s,
                    relation: r,
                    object: o,
                    gt_subjects: gt_s,
                    gt_objects: gt_o,
                });
            }
        }
    }
    out
}

/// Samples up to `max_queries` satisfied queries without replacement.
pub fn generate_queries(scene: &Scene, max_queries: usize, rng: &mut impl Rng) -> Vec<Query> {
    let mut all = all_queries(scene);
    all.shuffle(rng);
    all.truncate(max_queries);
    all
}

fn inside(shape: Shape, b: &BBox, u: f64, v: f64) -> bool {
    if u < b.x || u > b.x_max() || v < b.y || v > b.y_max() {
        return false;
    }
    let (cx, cy) = b.center();
    match shape {
        Shape::Square => true,
        Shape::Circle => {
            let dx = (u - cx) / (b.w / 2.0);
            let dy = (v - cy) / (b.h / 2.0);
            dx * dx + dy * dy <= 1.0
        }
        Shape::Triangle => (u - cx).abs() <= (b.w / 2.0) * (v - b.y) / b.h,
    }
}

/// Paints entities far-to-near over a gray background.
pub fn rasterize(scene: &Scene) -> Image {
    let px = scene.canvas_px as usize;
    let mut img = Image::filled(px, px, BACKGROUND);
    let mut order: Vec<&Entity> = scene.entities.iter().collect();
    order.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
    let pf = px as f64;
    for e in order {
        let b = BBox::new(e.bbox.x * pf, e.bbox.y * pf, e.bbox.w * pf, e.bbox.h * pf);
        let x0 = b.x.floor().max(0.0) as usize;
        let y0 = b.y.floor().max(0.0) as usize;
        let x1 = (b.x_max().ceil() as usize).min(px);
        let y1 = (b.y_max().ceil() as usize).min(px);
        let rgb = e.color.rgb();
        for y in y0..y1 {
            for x in x0..x1 {
                if inside(e.shape, &b, x as f64 + 0.5, y as f64 + 0.5) {
                    img.set(x, y, rgb);
                }
            }
        }
    }
    img
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

/// Checks the structural invariants a loaded scene must satisfy.
pub fn validate_scene(scene: &Scene) -> Result<(), String> {
    if scene.canvas_px == 0 {
        return Err("canvas_px must be positive".into());
    }
    let mut ids = BTreeSet::new();
    for e in &scene.entities {
        if !ids.insert(e.id) {
            return Err(format!("duplicate entity id {}", e.id));
        }
        if !e.bbox.is_valid() {
            return Err(format!("entity {} box {:?} outside unit canvas", e.id, e.bbox.to_array()));
        }
        if !(0.0..=1.0).contains(&e.depth) {
            return Err(format!("entity {} depth {} outside [0, 1]", e.id, e.depth));
        }
    }
    for (qi, q) in scene.queries.iter().enumerate() {
        if !q.subject.is_valid() || !q.object.is_valid() {
            return Err(format!("query {qi} category out of range"));
        }
        if q.gt_subjects.is_empty() || q.gt_objects.is_empty() {
            return Err(format!("query {qi} has empty ground truth"));
        }
        for id in q.gt_subjects.iter().chain(&q.gt_objects) {
            if !ids.contains(id) {
                return Err(format!("query {qi} references unknown entity {id}"));
            }
        }
    }
    Ok(())
}

/// Writes one JSON object per line.
pub fn save_dataset(path: impl AsRef<Path>, scenes: &[Scene]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for s in scenes {
        serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Scene>, DatasetError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(&line).map_err(|e| DatasetError::Invalid {
            line: lineno,
            reason: e.to_string(),
        })?;
        validate_scene(&scene).map_err(|reason| DatasetError::Invalid { line: lineno, reason })?;
        out.push(scene);
    }
    Ok(out)
}
