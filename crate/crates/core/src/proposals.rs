//! Detector stand-in: jittered ground-truth boxes plus background boxes, and a
//! fixed-width appearance descriptor for every box and every ordered pair's union box.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{self, Graph, Mlp, ParamStore, Tensor, Var};
use crate::geometry::BBox;
use crate::raster::Image;
use crate::scenegen::{Color, Scene, BACKGROUND};

pub const HIST_BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = 3 * HIST_BINS + 4 + 1 + 1;
pub const MAX_PROPOSALS: usize = 32;
/// Jitter moves box edges by a few percent, so the offset slots are scaled up to
/// sit on the same order as the histogram bins.
pub const EXTENT_SHIFT_GAIN: f64 = 10.0;
pub const EXTENT_SCALE_GAIN: f64 = 5.0;

/// Layout: 24 color-histogram bins (8 per RGB channel, each channel summing to 1),
/// the offset of the crop's dominant foreground color from the crop as
/// `(dx, dy, dw, dh)`, the fraction of that extent the color fills, and mean
/// luminance. The offset slots use the same center/log-size form as box deltas,
/// amplified by [`EXTENT_SHIFT_GAIN`] and [`EXTENT_SCALE_GAIN`]; they are zero
/// when the crop holds no foreground.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Descriptor(pub [f64; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn histogram(&self, channel: usize) -> &[f64] {
        &self.0[channel * HIST_BINS..(channel + 1) * HIST_BINS]
    }

    pub fn foreground_offset(&self) -> [f64; 4] {
        let o = 3 * HIST_BINS;
        [self.0[o], self.0[o + 1], self.0[o + 2], self.0[o + 3]]
    }

    pub fn fill_ratio(&self) -> f64 {
        self.0[3 * HIST_BINS + 4]
    }

    pub fn luminance(&self) -> f64 {
        self.0[3 * HIST_BINS + 5]
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProposalError {
    #[error("box {0:?} does not intersect the canvas")]
    OutsideCanvas([f64; 4]),
    #[error("image is {got}px but scene canvas is {want}px")]
    ImageMismatch { got: usize, want: usize },
}

/// Appearance summary of the pixels whose centers fall inside `b`.
pub fn describe(image: &Image, b: &BBox) -> Result<Descriptor, ProposalError> {
    let (wpx, hpx) = (image.width() as f64, image.height() as f64);
    let clipped = b.clip_to_canvas().ok_or(ProposalError::OutsideCanvas(b.to_array()))?;
    let (bx0, by0) = (clipped.x * wpx, clipped.y * hpx);
    let (bx1, by1) = (clipped.x_max() * wpx, clipped.y_max() * hpx);
    // pixel i has center i + 0.5
    let x0 = (bx0 - 0.5).ceil().max(0.0) as usize;
    let y0 = (by0 - 0.5).ceil().max(0.0) as usize;
    let x1 = ((bx1 - 0.5).floor() as isize).min(image.width() as isize - 1);
    let y1 = ((by1 - 0.5).floor() as isize).min(image.height() as isize - 1);

    let mut d = [0.0; DESCRIPTOR_LEN];
    if x1 < x0 as isize || y1 < y0 as isize {
        for v in d[..3 * HIST_BINS].iter_mut() {
            *v = 1.0 / HIST_BINS as f64;
        }
        return Ok(Descriptor(d));
    }
    let (x1, y1) = (x1 as usize, y1 as usize);
    let npx = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    let mut counts = [0usize; Color::ALL.len()];
    let mut lum = 0.0;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = image.get(x, y);
            for (c, &v) in p.iter().enumerate() {
                d[c * HIST_BINS + v as usize * HIST_BINS / 256] += 1.0;
            }
            lum += 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            if p != BACKGROUND {
                if let Some(k) = Color::ALL.iter().position(|c| c.rgb() == p) {
                    counts[k] += 1;
                }
            }
        }
    }
    for v in d[..3 * HIST_BINS].iter_mut() {
        *v /= npx;
    }
    d[3 * HIST_BINS + 5] = lum / (npx * 255.0);

    let (best, &count) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .unwrap();
    if count > 0 {
        let rgb = Color::ALL[best].rgb();
        let (mut ex0, mut ey0, mut ex1, mut ey1) = (usize::MAX, usize::MAX, 0, 0);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if image.get(x, y) == rgb {
                    ex0 = ex0.min(x);
                    ey0 = ey0.min(y);
                    ex1 = ex1.max(x);
                    ey1 = ey1.max(y);
                }
            }
        }
        let (cw, ch) = (bx1 - bx0, by1 - by0);
        let o = 3 * HIST_BINS;
        let (fw, fh) = ((ex1 + 1 - ex0) as f64, (ey1 + 1 - ey0) as f64);
        d[o] = EXTENT_SHIFT_GAIN * ((ex0 as f64 + fw / 2.0) - (bx0 + cw / 2.0)) / cw;
        d[o + 1] = EXTENT_SHIFT_GAIN * ((ey0 as f64 + fh / 2.0) - (by0 + ch / 2.0)) / ch;
        d[o + 2] = EXTENT_SCALE_GAIN * (fw / cw).ln();
        d[o + 3] = EXTENT_SCALE_GAIN * (fh / ch).ln();
        d[o + 4] = count as f64 / ((ex1 + 1 - ex0) * (ey1 + 1 - ey0)) as f64;
    }
    Ok(Descriptor(d))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairFeature {
    pub i: usize,
    pub j: usize,
    pub union: BBox,
    pub descriptor: Descriptor,
}

/// Candidate boxes with descriptors, plus every ordered pair `(i, j)`, `i ≠ j`,
/// listed `i`-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSet {
    pub boxes: Vec<BBox>,
    pub descriptors: Vec<Descriptor>,
    pub pairs: Vec<PairFeature>,
}

/// Position of the ordered pair `(i, j)` in [`BoxSet::pairs`].
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    i * (n - 1) + if j < i { j } else { j - 1 }
}

impl BoxSet {
    pub fn from_boxes(image: &Image, boxes: Vec<BBox>) -> Result<Self, ProposalError> {
        let descriptors = boxes
            .iter()
            .map(|b| describe(image, b))
            .collect::<Result<Vec<_>, _>>()?;
        let n = boxes.len();
        // union descriptors are symmetric, compute each once
        let mut upper: Vec<Option<(BBox, Descriptor)>> = vec![None; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let u = boxes[i].union(&boxes[j]);
                upper[i * n + j] = Some((u, describe(image, &u)?));
            }
        }
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (union, descriptor) = upper[i.min(j) * n + i.max(j)].unwrap();
                pairs.push(PairFeature {
                    i,
                    j,
                    union,
                    descriptor,
                });
            }
        }
        Ok(BoxSet {
            boxes,
            descriptors,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn pair(&self, i: usize, j: usize) -> &PairFeature {
        &self.pairs[pair_index(self.len(), i, j)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProposalConfig {
    /// Max displacement of each box edge, as a fraction of the box side.
    pub jitter: f64,
    pub n_background: usize,
    /// Area range of background boxes, as a fraction of the canvas.
    pub bg_area: (f64, f64),
    /// Background boxes overlapping any entity more than this are resampled.
    pub bg_max_iou: f64,
    pub shuffle: bool,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            jitter: 0.1,
            n_background: 4,
            bg_area: (0.005, 0.1),
            bg_max_iou: 0.3,
            shuffle: true,
        }
    }
}

fn jitter_box(rng: &mut impl Rng, b: &BBox, frac: f64) -> BBox {
    if frac <= 0.0 {
        return *b;
    }
    let mut j = |s: f64| rng.gen_range(-frac * s..=frac * s);
    let x0 = b.x + j(b.w);
    let x1 = b.x_max() + j(b.w);
    let y0 = b.y + j(b.h);
    let y1 = b.y_max() + j(b.h);
    BBox::from_corners(x0, y0, x1, y1)
        .clip_to_canvas()
        .unwrap_or(*b)
}

fn background_box(rng: &mut impl Rng, gt: &[BBox], cfg: &ProposalConfig) -> Option<BBox> {
    for _ in 0..100 {
        let area = rng.gen_range(cfg.bg_area.0..=cfg.bg_area.1);
        let aspect: f64 = rng.gen_range(0.5f64..=2.0);
        let w = (area * aspect).sqrt().min(1.0);
        let h = (area / aspect).sqrt().min(1.0);
        let b = BBox::new(rng.gen_range(0.0..=1.0 - w), rng.gen_range(0.0..=1.0 - h), w, h);
        if gt.iter().all(|g| g.iou(&b) <= cfg.bg_max_iou) {
            return Some(b);
        }
    }
    None
}

/// Per-scene proposal seed: a splitmix64 mix of a run seed, a stream tag and a scene id.
pub fn proposal_seed(base: u64, stream: u64, scene_id: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(scene_id);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulated detector output for a scene, deterministic in `seed`.
pub fn propose(
    scene: &Scene,
    image: &Image,
    seed: u64,
    cfg: &ProposalConfig,
) -> Result<BoxSet, ProposalError> {
    if image.width() != scene.canvas_px as usize {
        return Err(ProposalError::ImageMismatch {
            got: image.width(),
            want: scene.canvas_px as usize,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt: Vec<BBox> = scene.entities.iter().map(|e| e.bbox).collect();
    let mut boxes: Vec<BBox> = gt.iter().map(|b| jitter_box(&mut rng, b, cfg.jitter)).collect();
    boxes.truncate(MAX_PROPOSALS);
    for _ in 0..cfg.n_background {
        if boxes.len() >= MAX_PROPOSALS {
            break;
        }
        if let Some(b) = background_box(&mut rng, &gt, cfg) {
            boxes.push(b);
        }
    }
    if cfg.shuffle {
        boxes.shuffle(&mut rng);
    }
    BoxSet::from_boxes(image, boxes)
}

/// Trainable map from descriptors to feature vectors `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedder {
    pub mlp: Mlp,
}

impl Embedder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, hidden: usize, out: usize) -> Self {
        Embedder {
            mlp: Mlp::new(store, rng, name, &[DESCRIPTOR_LEN, hidden, out]),
        }
    }

    pub fn width(&self) -> usize {
        self.mlp.output_width()
    }

    /// Embeds each descriptor as one row of the result.
    pub fn embed(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        descriptors: &[Descriptor],
    ) -> autodiff::Result<Var> {
        let data: Vec<f64> = descriptors.iter().flat_map(|d| d.0).collect();
        let x = g.input(Tensor::new(vec![descriptors.len(), DESCRIPTOR_LEN], data)?)?;
        self.mlp.forward(g, store, x)
    }
}
