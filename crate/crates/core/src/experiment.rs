//! Experiment plumbing: flat `key = value` configuration files, parameter
//! checkpoints, and the gen / train / eval / ablate commands.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{ParamStore, Tensor};
use crate::dsggen::AggregationMode;
use crate::eval::{
    eval_proposals, evaluate_rr, evaluate_sg_decoding, render_query, standard_error, EvalError,
    EvalReport, QueryAnswerer, RrScores, DECODING_IOU_FLOOR,
};
use crate::model::{Ablation, DsgModel, ModelConfig};
use crate::proposals::ProposalConfig;
use crate::scenegen::{
    generate_dataset, load_dataset, rasterize, save_dataset, DatasetError, Scene, SceneConfig,
    SceneError,
};
use crate::training::{train, EpochMetrics, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything a run depends on, mirrored one-to-one by the config file keys.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_train: u64,
    pub n_val: u64,
    pub n_test: u64,
    pub scene: SceneConfig,
    pub proposals: ProposalConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: Ablation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            n_train: 2000,
            n_val: 200,
            n_test: 200,
            scene: SceneConfig::default(),
            proposals: ProposalConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: Ablation::Dsg,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| ExperimentError::InvalidValue {
        key: key.to_string(),
        reason: format!("`{v}`: {e}"),
    })
}

/// Every config key, in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "ablation",
    "n_train",
    "n_val",
    "n_test",
    "canvas_px",
    "min_entities",
    "max_entities",
    "ambiguity_rate",
    "min_separation",
    "max_queries",
    "small_px_min",
    "small_px_max",
    "large_px_min",
    "large_px_max",
    "max_attempts",
    "jitter",
    "n_background",
    "bg_area_min",
    "bg_area_max",
    "bg_max_iou",
    "shuffle_proposals",
    "feature_width",
    "embed_hidden",
    "gpi_hidden",
    "gpi_value",
    "gpi_summary",
    "dsg_width",
    "query_dim",
    "rrc_hidden",
    "mode",
    "epochs",
    "lr",
    "momentum",
    "lr_decay",
    "decay_period",
    "probe_scenes",
    "val_every_epoch",
    "clip_norm",
    "w_rr",
    "w_box",
    "w_sgl",
    "w_det",
];

impl ExperimentConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "seed" => self.seed = parse(k, v)?,
            "ablation" => {
                self.ablation = Ablation::parse(v).ok_or_else(|| ExperimentError::InvalidValue {
                    key: k.into(),
                    reason: format!("`{v}` is not one of dsg, two-step, no-sgl, no-br, no-dsg"),
                })?
            }
            "n_train" => self.n_train = parse(k, v)?,
            "n_val" => self.n_val = parse(k, v)?,
            "n_test" => self.n_test = parse(k, v)?,
            "canvas_px" => self.scene.canvas_px = parse(k, v)?,
            "min_entities" => self.scene.min_entities = parse(k, v)?,
            "max_entities" => self.scene.max_entities = parse(k, v)?,
            "ambiguity_rate" => self.scene.ambiguity_rate = parse(k, v)?,
            "min_separation" => self.scene.min_separation = parse(k, v)?,
            "max_queries" => self.scene.max_queries = parse(k, v)?,
            "small_px_min" => self.scene.small_px.0 = parse(k, v)?,
            "small_px_max" => self.scene.small_px.1 = parse(k, v)?,
            "large_px_min" => self.scene.large_px.0 = parse(k, v)?,
            "large_px_max" => self.scene.large_px.1 = parse(k, v)?,
            "max_attempts" => self.scene.max_attempts = parse(k, v)?,
            "jitter" => self.proposals.jitter = parse(k, v)?,
            "n_background" => self.proposals.n_background = parse(k, v)?,
            "bg_area_min" => self.proposals.bg_area.0 = parse(k, v)?,
            "bg_area_max" => self.proposals.bg_area.1 = parse(k, v)?,
            "bg_max_iou" => self.proposals.bg_max_iou = parse(k, v)?,
            "shuffle_proposals" => self.proposals.shuffle = parse(k, v)?,
            "feature_width" => self.model.feature_width = parse(k, v)?,
            "embed_hidden" => self.model.embed_hidden = parse(k, v)?,
            "gpi_hidden" => self.model.gpi_hidden = parse(k, v)?,
            "gpi_value" => self.model.gpi_value = parse(k, v)?,
            "gpi_summary" => self.model.gpi_summary = parse(k, v)?,
            "dsg_width" => self.model.dsg_width = parse(k, v)?,
            "query_dim" => self.model.query_dim = parse(k, v)?,
            "rrc_hidden" => self.model.rrc_hidden = parse(k, v)?,
            "mode" => {
                self.model.mode = AggregationMode::parse(v).ok_or_else(|| ExperimentError::InvalidValue {
                    key: k.into(),
                    reason: format!("`{v}` is not one of sum, attention"),
                })?
            }
            "epochs" => self.train.epochs = parse(k, v)?,
            "lr" => self.train.lr = parse(k, v)?,
            "momentum" => self.train.momentum = parse(k, v)?,
            "lr_decay" => self.train.lr_decay = parse(k, v)?,
            "decay_period" => self.train.decay_period = parse(k, v)?,
            "probe_scenes" => self.train.probe_scenes = parse(k, v)?,
            "val_every_epoch" => self.train.val_every_epoch = parse(k, v)?,
            "clip_norm" => self.train.clip_norm = parse(k, v)?,
            "w_rr" => self.train.weights.rr = parse(k, v)?,
            "w_box" => self.train.weights.r#box = parse(k, v)?,
            "w_sgl" => self.train.weights.sgl = parse(k, v)?,
            "w_det" => self.train.weights.det = parse(k, v)?,
            _ => return Err(ExperimentError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Text form of one key's value; `None` for unknown keys.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.scene;
        let p = &self.proposals;
        let m = &self.model;
        let t = &self.train;
        Some(match key {
            "seed" => self.seed.to_string(),
            "ablation" => self.ablation.name().to_string(),
            "n_train" => self.n_train.to_string(),
            "n_val" => self.n_val.to_string(),
            "n_test" => self.n_test.to_string(),
            "canvas_px" => s.canvas_px.to_string(),
            "min_entities" => s.min_entities.to_string(),
            "max_entities" => s.max_entities.to_string(),
            "ambiguity_rate" => s.ambiguity_rate.to_string(),
            "min_separation" => s.min_separation.to_string(),
            "max_queries" => s.max_queries.to_string(),
            "small_px_min" => s.small_px.0.to_string(),
            "small_px_max" => s.small_px.1.to_string(),
            "large_px_min" => s.large_px.0.to_string(),
            "large_px_max" => s.large_px.1.to_string(),
            "max_attempts" => s.max_attempts.to_string(),
            "jitter" => p.jitter.to_string(),
            "n_background" => p.n_background.to_string(),
            "bg_area_min" => p.bg_area.0.to_string(),
            "bg_area_max" => p.bg_area.1.to_string(),
            "bg_max_iou" => p.bg_max_iou.to_string(),
            "shuffle_proposals" => p.shuffle.to_string(),
            "feature_width" => m.feature_width.to_string(),
            "embed_hidden" => m.embed_hidden.to_string(),
            "gpi_hidden" => m.gpi_hidden.to_string(),
            "gpi_value" => m.gpi_value.to_string(),
            "gpi_summary" => m.gpi_summary.to_string(),
            "dsg_width" => m.dsg_width.to_string(),
            "query_dim" => m.query_dim.to_string(),
            "rrc_hidden" => m.rrc_hidden.to_string(),
            "mode" => m.mode.name().to_string(),
            "epochs" => t.epochs.to_string(),
            "lr" => t.lr.to_string(),
            "momentum" => t.momentum.to_string(),
            "lr_decay" => t.lr_decay.to_string(),
            "decay_period" => t.decay_period.to_string(),
            "probe_scenes" => t.probe_scenes.to_string(),
            "val_every_epoch" => t.val_every_epoch.to_string(),
            "clip_norm" => t.clip_norm.to_string(),
            "w_rr" => t.weights.rr.to_string(),
            "w_box" => t.weights.r#box.to_string(),
            "w_sgl" => t.weights.sgl.to_string(),
            "w_det" => t.weights.det.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ExperimentError::Syntax {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_str(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for p in pairs {
            let (k, v) = p.split_once('=').ok_or_else(|| ExperimentError::Syntax {
                line: 0,
                reason: format!("override `{p}` is not `key=value`"),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Full config, every key on its own line; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in CONFIG_KEYS {
            writeln!(out, "{k} = {}", self.get(k).unwrap()).unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |key: &str, reason: &str| {
            Err(ExperimentError::InvalidValue {
                key: key.into(),
                reason: reason.into(),
            })
        };
        self.scene.validate()?;
        self.train.validate()?;
        let p = &self.proposals;
        if !(0.0..0.5).contains(&p.jitter) {
            return invalid("jitter", "must lie in [0, 0.5)");
        }
        if !(p.bg_area.0 > 0.0 && p.bg_area.0 <= p.bg_area.1 && p.bg_area.1 <= 1.0) {
            return invalid("bg_area_min", "need 0 < bg_area_min <= bg_area_max <= 1");
        }
        let m = &self.model;
        for (k, v) in [
            ("feature_width", m.feature_width),
            ("embed_hidden", m.embed_hidden),
            ("gpi_hidden", m.gpi_hidden),
            ("gpi_value", m.gpi_value),
            ("gpi_summary", m.gpi_summary),
            ("dsg_width", m.dsg_width),
            ("query_dim", m.query_dim),
            ("rrc_hidden", m.rrc_hidden),
        ] {
            if v == 0 {
                return invalid(k, "must be positive");
            }
        }
        Ok(())
    }

    /// Training config with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            proposals: self.proposals.clone(),
            ..self.train.clone()
        }
    }

    pub fn new_model(&self) -> DsgModel {
        DsgModel::new(self.model.clone(), self.ablation.flags(), self.seed)
    }
}

/// Ids of the three splits: train first, then validation, then test.
pub fn split_ids(cfg: &ExperimentConfig) -> [std::ops::Range<u64>; 3] {
    let a = cfg.n_train;
    let b = a + cfg.n_val;
    let c = b + cfg.n_test;
    [0..a, a..b, b..c]
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

/// Writes the three dataset splits and one PPM image per scene under `out`.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_config_echo(cfg, out)?;
    for (split, ids) in SPLITS.iter().zip(split_ids(cfg)) {
        let scenes = generate_dataset(ids, cfg.seed, &cfg.scene)?;
        save_dataset(split_path(out, split), &scenes)?;
        let img_dir = out.join("images").join(split);
        fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
        for s in &scenes {
            let p = img_dir.join(format!("{:06}.ppm", s.scene_id));
            rasterize(s).save_ppm(&p).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

pub fn load_split(data: &Path, split: &str) -> Result<Vec<Scene>> {
    Ok(load_dataset(split_path(data, split))?)
}

fn write_config_echo(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let p = dir.join("config.txt");
    fs::write(&p, cfg.to_text()).map_err(io_err(&p))
}

const MAGIC: &[u8; 4] = b"DSG1";

/// Binary checkpoint: `DSG1`, tensor count, then per tensor its name length and
/// UTF-8 name, rank and dims, and `f64` little-endian values. Integers are `u64` LE.
pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint into `store`, which must already hold tensors with the same
/// names and shapes.
pub fn read_checkpoint<R: Read>(store: &mut ParamStore, mut r: R) -> Result<()> {
    let bad = |m: String| ExperimentError::Checkpoint(m);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| bad(e.to_string()))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = buf.get(pos..pos + n).ok_or_else(|| bad("truncated file".into()))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("missing DSG1 magic bytes".into()));
    }
    let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap()) as usize;
    let count = u64_at(take(8)?);
    if count != store.len() {
        return Err(bad(format!("holds {count} tensors, model has {}", store.len())));
    }
    for _ in 0..count {
        let len = u64_at(take(8)?);
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8".into()))?;
        let rank = u64_at(take(8)?);
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64_at(take(8)?));
        }
        let id = store
            .id(&name)
            .ok_or_else(|| bad(format!("tensor `{name}` does not exist in the model")))?;
        let want = store.get(id).shape().to_vec();
        if want != shape {
            return Err(bad(format!("tensor `{name}` has shape {shape:?}, model expects {want:?}")));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store
            .set(id, Tensor::new(shape, data).unwrap())
            .map_err(|e| bad(e.to_string()))?;
    }
    if pos != buf.len() {
        return Err(bad("trailing bytes after last tensor".into()));
    }
    Ok(())
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(f);
    write_checkpoint(store, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn load_checkpoint(store: &mut ParamStore, path: &Path) -> Result<()> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_checkpoint(store, io::BufReader::new(f))
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub model: DsgModel,
    pub metrics: Vec<EpochMetrics>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Trains on the dataset under `data`; with `out`, writes the config echo,
/// `model.dsg` checkpoint and `metrics.jsonl` there.
pub fn cmd_train(cfg: &ExperimentConfig, data: &Path, out: Option<&Path>) -> Result<TrainedRun> {
    let train_set = load_split(data, "train")?;
    let val_set = load_split(data, "val")?;
    train_on(cfg, &train_set, &val_set, out)
}

pub fn train_on(
    cfg: &ExperimentConfig,
    train_set: &[Scene],
    val_set: &[Scene],
    out: Option<&Path>,
) -> Result<TrainedRun> {
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            write_config_echo(cfg, dir)?;
            let p = dir.join("metrics.jsonl");
            Some((fs::File::create(&p).map_err(io_err(&p))?, p))
        }
        None => None,
    };
    let mut model = cfg.new_model();
    let mut write_err = None;
    let report = train(&mut model, train_set, val_set, &cfg.train_config(), |m| {
        if let Some((f, p)) = log.as_mut() {
            let line = serde_json::to_string(m).expect("metrics serialize");
            if let Err(e) = writeln!(f, "{line}") {
                write_err.get_or_insert(ExperimentError::Io {
                    path: p.clone(),
                    source: e,
                });
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Some(dir) = out {
        save_checkpoint(&model.store, &dir.join("model.dsg"))?;
    }
    Ok(TrainedRun {
        model,
        metrics: report.metrics,
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
    })
}

/// Loads a checkpoint into a model built from `cfg`.
pub fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<DsgModel> {
    let mut model = cfg.new_model();
    load_checkpoint(&mut model.store, path)?;
    Ok(model)
}

/// Evaluation of `model` on `scenes`: attention-map IOU with the configured
/// proposals, decoding accuracy with exact (zero-jitter) proposals.
pub fn evaluate(cfg: &ExperimentConfig, model: &DsgModel, scenes: &[Scene]) -> Result<(EvalReport, RrScores)> {
    let rr = evaluate_rr(model, scenes, &cfg.proposals, cfg.seed)?;
    let exact = ProposalConfig {
        jitter: 0.0,
        ..cfg.proposals.clone()
    };
    let sg = evaluate_sg_decoding(model, scenes, &exact, cfg.seed, DECODING_IOU_FLOOR)?;
    Ok((EvalReport::new(&rr, &sg), rr))
}

/// Writes one PPM per query of the first `limit` scenes.
pub fn render_answers(
    cfg: &ExperimentConfig,
    model: &DsgModel,
    scenes: &[Scene],
    dir: &Path,
    limit: usize,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for scene in scenes.iter().take(limit) {
        let boxes = eval_proposals(scene, cfg.seed, &cfg.proposals)?;
        let answers = model.answer(scene, &boxes)?;
        for (qi, (q, a)) in scene.queries.iter().zip(&answers).enumerate() {
            let p = dir.join(format!("scene{:06}_q{qi}.ppm", scene.scene_id));
            render_query(scene, q, a).save_ppm(&p).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

/// Scenes rendered by `eval --render-dir`.
pub const RENDER_LIMIT: usize = 16;

/// Evaluates a checkpoint on the test split, optionally rendering answers.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    model_path: &Path,
    data: &Path,
    render_dir: Option<&Path>,
) -> Result<EvalReport> {
    let model = load_model(cfg, model_path)?;
    let test = load_split(data, "test")?;
    let (report, _) = evaluate(cfg, &model, &test)?;
    if let Some(dir) = render_dir {
        render_answers(cfg, &model, &test, dir, RENDER_LIMIT)?;
    }
    Ok(report)
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub subject_iou: f64,
    pub subject_se: f64,
    pub object_iou: f64,
    pub object_se: f64,
    pub n_queries: usize,
}

impl AblationRow {
    pub fn new(a: Ablation, scores: &RrScores) -> Self {
        AblationRow {
            variant: a.label().to_string(),
            subject_iou: scores.subject_mean(),
            subject_se: standard_error(&scores.subject),
            object_iou: scores.object_mean(),
            object_se: standard_error(&scores.object),
            n_queries: scores.len(),
        }
    }
}

/// Aligned plain-text rendering of an ablation table.
pub fn ablation_text(rows: &[AblationRow]) -> String {
    let w = rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max("variant".len());
    let mut out = format!("{:<w$}  {:>17}  {:>17}\n", "variant", "subject IOU", "object IOU");
    for r in rows {
        writeln!(
            out,
            "{:<w$}  {:>8.4} ± {:<6.4}  {:>8.4} ± {:<6.4}",
            r.variant, r.subject_iou, r.subject_se, r.object_iou, r.object_se
        )
        .unwrap();
    }
    out
}

/// One trained and evaluated ablation variant.
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub ablation: Ablation,
    pub run: TrainedRun,
    pub scores: RrScores,
    /// Wall-clock training time; zero for a variant that reuses another's weights.
    pub train_secs: f64,
}

/// Trains and evaluates all five variants with the same seed. The two-step variant
/// trains exactly like the full model, so its weights are reused rather than retrained.
pub fn ablation_runs(
    cfg: &ExperimentConfig,
    train_set: &[Scene],
    val_set: &[Scene],
    test: &[Scene],
) -> Result<Vec<VariantRun>> {
    let mut runs: Vec<VariantRun> = Vec::new();
    for a in Ablation::ALL {
        let vcfg = ExperimentConfig {
            ablation: a,
            ..cfg.clone()
        };
        let full = runs.iter().find(|r| r.ablation == Ablation::Dsg);
        let start = Instant::now();
        let run = match (a, full) {
            (Ablation::TwoStep, Some(f)) => {
                let mut run = f.run.clone();
                run.model.flags = a.flags();
                run
            }
            _ => train_on(&vcfg, train_set, val_set, None)?,
        };
        let train_secs = start.elapsed().as_secs_f64();
        let scores = evaluate_rr(&run.model, test, &vcfg.proposals, vcfg.seed)?;
        runs.push(VariantRun {
            ablation: a,
            run,
            scores,
            train_secs,
        });
    }
    Ok(runs)
}

/// Table rows for [`ablation_runs`].
pub fn run_ablation(cfg: &ExperimentConfig, train_set: &[Scene], val_set: &[Scene], test: &[Scene]) -> Result<Vec<AblationRow>> {
    Ok(ablation_runs(cfg, train_set, val_set, test)?
        .iter()
        .map(|r| AblationRow::new(r.ablation, &r.scores))
        .collect())
}

/// Runs the ablation on the dataset under `data`, writing `ablation.json` and
/// `ablation.txt` to `out`.
pub fn cmd_ablate(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<Vec<AblationRow>> {
    let train_set = load_split(data, "train")?;
    let val_set = load_split(data, "val")?;
    let test = load_split(data, "test")?;
    let rows = run_ablation(cfg, &train_set, &val_set, &test)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_config_echo(cfg, out)?;
    let p = out.join("ablation.json");
    fs::write(&p, serde_json::to_string_pretty(&rows).expect("rows serialize")).map_err(io_err(&p))?;
    let p = out.join("ablation.txt");
    fs::write(&p, ablation_text(&rows)).map_err(io_err(&p))?;
    Ok(rows)
}
