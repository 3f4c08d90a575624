//! Acceptance run. Prints one PASS/FAIL line per criterion. With
//! `DSG_STRICT_ACCEPTANCE=1` any failure also makes the run exit nonzero. The
//! training criteria use the default configuration on 2000 scenes and take most
//! of the runtime.

mod common;

use std::time::Instant;

use common::*;
use dsg::dsggen::AggregationMode;
use dsg::eval::{
    boxes_to_map, eval_proposals, evaluate_refinement, evaluate_sg_decoding, map_iou, DECODING_IOU_FLOOR, DEFAULT_GRID,
};
use dsg::experiment::{ablation_runs, ablation_text, split_ids, train_on, AblationRow, ExperimentConfig, VariantRun};
use dsg::geometry::BBox;
use dsg::heads::apply_deltas;
use dsg::model::Ablation;
use dsg::proposals::ProposalConfig;
use dsg::scenegen::{generate_dataset, Scene};
use dsg::training::{assign_roles, two_step_reason, POSITIVE_IOU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    eprintln!("[{id}] {name}: {} ({detail})", if pass { "pass" } else { "fail" });
    Outcome { id, name, pass, detail }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let result = gradient_suite();
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(worst) => (
            secs < 60.0,
            format!("max relative error {worst:.2e} over {} variants x {GRAD_SEEDS} seeds, {secs:.1}s", GRAD_CASES.len()),
        ),
        Err(e) => (false, e),
    };
    outcome(1, "gradient correctness", pass, detail)
}

fn permutation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for mode in [AggregationMode::Sum, AggregationMode::Attention] {
        for _ in 0..100 {
            let n = rng.gen_range(1..=8);
            worst = worst.max(permutation_gap(n, rng.gen(), mode));
        }
    }
    outcome(
        2,
        "GPI permutation properties",
        worst <= 1e-9,
        format!("max deviation {worst:.1e} over 100 instances per mode"),
    )
}

fn role_assignment() -> Outcome {
    let (mut queries, mut mismatched) = (0, 0);
    for id in 0..1000u64 {
        let (scene, boxes) = role_case(id);
        for qi in 0..scene.queries.len() {
            let got: Vec<Label> = assign_roles(&boxes.boxes, &scene, qi)
                .unwrap()
                .into_iter()
                .map(Label::from)
                .collect();
            queries += 1;
            mismatched += (got != role_oracle(&boxes.boxes, &scene, qi)) as usize;
        }
    }
    outcome(
        3,
        "label-assignment oracle",
        mismatched == 0,
        format!("{mismatched} of {queries} queries differ, 1000 scenes"),
    )
}

fn attention_maps() -> Outcome {
    let sets = random_box_sets(4, 500);
    let mismatched = sets
        .iter()
        .filter(|b| boxes_to_map(b, DEFAULT_GRID).cells() != raster_oracle(b, DEFAULT_GRID).as_slice())
        .count();
    let left = boxes_to_map(&[BBox::new(0.0, 0.0, 0.5, 1.0)], 2);
    let full = boxes_to_map(&[BBox::new(0.0, 0.0, 1.0, 1.0)], 2);
    let worked = map_iou(&left, &full).unwrap();
    outcome(
        4,
        "attention-map metric oracle",
        mismatched == 0 && worked == 0.5,
        format!("{mismatched} of 500 sets differ, L=2 example IOU {worked}"),
    )
}

fn two_step() -> Outcome {
    let exact_bad = exact_cases(10, 100)
        .iter()
        .filter(|(sg, q, want)| two_step_reason(sg, q).ok().as_ref() != Some(want))
        .count();
    let fallback_bad = fallback_cases(9, 200)
        .iter()
        .filter(|(sg, q, (i, j))| two_step_reason(sg, q).ok() != Some((vec![*i], vec![*j])))
        .count();
    outcome(
        9,
        "two-step reasoner",
        exact_bad == 0 && fallback_bad == 0,
        format!("exact triplets {exact_bad}/100 wrong, fallback {fallback_bad}/200 differ from enumeration"),
    )
}

struct Data {
    train: Vec<Scene>,
    val: Vec<Scene>,
    test: Vec<Scene>,
}

fn data(cfg: &ExperimentConfig) -> Data {
    let [tr, va, te] = split_ids(cfg);
    Data {
        train: generate_dataset(tr, cfg.seed, &cfg.scene).unwrap(),
        val: generate_dataset(va, cfg.seed, &cfg.scene).unwrap(),
        test: generate_dataset(te, cfg.seed, &cfg.scene).unwrap(),
    }
}

fn variant(runs: &[VariantRun], a: Ablation) -> &VariantRun {
    runs.iter().find(|r| r.ablation == a).unwrap()
}

fn trend(runs: &[VariantRun]) -> Outcome {
    let dsg = variant(runs, Ablation::Dsg);
    let base = variant(runs, Ablation::NoDsg);
    let (ds, dob) = (dsg.scores.subject_mean(), dsg.scores.object_mean());
    let (bs, bo) = (base.scores.subject_mean(), base.scores.object_mean());
    let secs = dsg.train_secs + base.train_secs;
    let pass = ds >= 0.85 && dob >= 0.85 && ds - bs >= 0.01 && dob - bo >= 0.01 && secs < 900.0;
    outcome(
        5,
        "DSG beats no-DSG",
        pass,
        format!(
            "DSG {ds:.4}/{dob:.4}, no-DSG {bs:.4}/{bo:.4}, margins {:+.4}/{:+.4}, training {secs:.0}s on {} thread(s)",
            ds - bs,
            dob - bo,
            dsg::eval::thread_count()
        ),
    )
}

/// Whether the full model has the best subject IOU and the generator-free
/// baseline the worst, among the four trained variants.
fn ordering_holds(runs: &[VariantRun]) -> bool {
    let subj = |a| variant(runs, a).scores.subject_mean();
    let others = [Ablation::NoSgl, Ablation::NoBr, Ablation::NoDsg];
    let best = others.iter().all(|&a| subj(Ablation::Dsg) > subj(a));
    let worst = [Ablation::Dsg, Ablation::NoSgl, Ablation::NoBr]
        .iter()
        .all(|&a| subj(Ablation::NoDsg) < subj(a));
    best && worst
}

fn ordering(per_seed: &[(u64, Vec<VariantRun>)]) -> Outcome {
    let held: Vec<String> = per_seed
        .iter()
        .map(|(s, runs)| format!("seed {s}: {}", if ordering_holds(runs) { "holds" } else { "violated" }))
        .collect();
    let n = per_seed.iter().filter(|(_, r)| ordering_holds(r)).count();
    outcome(6, "ablation ordering", n >= 2, format!("{n}/3 seeds; {}", held.join(", ")))
}

fn refiner(cfg: &ExperimentConfig, runs: &[VariantRun], d: &Data) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut identity_ok = (0..1000).all(|_| {
        let b = random_box(&mut rng);
        b.is_degenerate() || apply_deltas(&b, [0.0; 4]).unwrap() == b
    });
    // a fresh model's refiner starts at the identity
    let fresh = cfg.new_model();
    for scene in d.test.iter().take(20) {
        let boxes = eval_proposals(scene, cfg.seed, &cfg.proposals).unwrap();
        identity_ok &= fresh.predict(&boxes, &[], false).unwrap().boxes == boxes.boxes;
    }
    let model = &variant(runs, Ablation::Dsg).run.model;
    let r = evaluate_refinement(model, &d.test, &cfg.proposals, cfg.seed, POSITIVE_IOU).unwrap();
    let gain = r.refined_iou - r.unrefined_iou;
    outcome(
        7,
        "box refiner",
        identity_ok && gain >= 0.02,
        format!(
            "zero-delta identity {}, IOU {:.4} -> {:.4} ({gain:+.4}) over {} positive proposals",
            if identity_ok { "exact" } else { "broken" },
            r.unrefined_iou,
            r.refined_iou,
            r.n_boxes
        ),
    )
}

fn sanity(cfg: &ExperimentConfig, runs: &[VariantRun], d: &Data) -> Outcome {
    let first = &variant(runs, Ablation::Dsg).run;
    let finite = first
        .metrics
        .iter()
        .all(|m| m.loss_rr.is_finite() && m.loss_box.is_finite() && m.loss_sgl.is_finite());
    let ratio = first.final_loss / first.initial_loss;
    let dsg_cfg = ExperimentConfig {
        ablation: Ablation::Dsg,
        ..cfg.clone()
    };
    let again = train_on(&dsg_cfg, &d.train, &d.val, None).unwrap();
    let log = |run: &dsg::experiment::TrainedRun| -> Vec<String> {
        run.metrics.iter().map(|m| serde_json::to_string(m).unwrap()).collect()
    };
    let identical = log(first) == log(&again) && first.model.store == again.model.store;
    outcome(
        8,
        "training sanity",
        ratio < 0.5 && finite && identical,
        format!(
            "probe loss {:.3} -> {:.3} (ratio {ratio:.3}), finite every epoch: {finite}, rerun identical: {identical}",
            first.initial_loss, first.final_loss
        ),
    )
}

fn decoding(cfg: &ExperimentConfig, runs: &[VariantRun], d: &Data) -> Outcome {
    let model = &variant(runs, Ablation::Dsg).run.model;
    let exact = ProposalConfig {
        jitter: 0.0,
        ..cfg.proposals.clone()
    };
    let sg = evaluate_sg_decoding(model, &d.test, &exact, cfg.seed, DECODING_IOU_FLOOR).unwrap();
    let (e, r) = (sg.entity_acc.unwrap_or(0.0), sg.relation_acc.unwrap_or(0.0));
    outcome(
        10,
        "scene-graph decoding",
        e >= 0.9 && r >= 0.9,
        format!(
            "entity {e:.3} over {}, relation {r:.3} over {} (real-image reference: 0.76 / 0.70)",
            sg.n_entities, sg.n_relations
        ),
    )
}

fn main() {
    let mut results = vec![gradients(), permutation(), role_assignment(), attention_maps(), two_step()];

    let mut per_seed = Vec::new();
    for seed in 0..3u64 {
        let cfg = ExperimentConfig {
            seed,
            ..ExperimentConfig::default()
        };
        let d = data(&cfg);
        let start = Instant::now();
        let runs = ablation_runs(&cfg, &d.train, &d.val, &d.test).unwrap();
        let rows: Vec<AblationRow> = runs.iter().map(|r| AblationRow::new(r.ablation, &r.scores)).collect();
        eprintln!("seed {seed} ablation, {:.0}s\n{}", start.elapsed().as_secs_f64(), ablation_text(&rows));
        if seed == 0 {
            results.push(trend(&runs));
            results.push(refiner(&cfg, &runs, &d));
            results.push(sanity(&cfg, &runs, &d));
            results.push(decoding(&cfg, &runs, &d));
        }
        per_seed.push((seed, runs));
    }
    results.push(ordering(&per_seed));

    results.sort_by_key(|o| o.id);
    println!();
    for o in &results {
        println!("{} {:>2}. {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    }
    let failed = results.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    let strict = std::env::var("DSG_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}
