//! Trains one model variant on a small generated dataset, then reports the
//! test metrics: referring-relationship IOU, box refinement, and scene-graph
//! decoding accuracy.
//!
//! ```text
//! cargo run --release --example train_and_eval -- ablation=no-dsg epochs=4
//! ```
//! Arguments are `key=value` config overrides on top of a reduced default run.

use std::time::Instant;

use dsg::eval::{evaluate_refinement, evaluate_rr, evaluate_sg_decoding, standard_error, DECODING_IOU_FLOOR};
use dsg::experiment::{split_ids, ExperimentConfig};
use dsg::proposals::ProposalConfig;
use dsg::scenegen::generate_dataset;
use dsg::training::{train, POSITIVE_IOU};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(["n_train=400", "n_val=100", "n_test=100", "epochs=6", "decay_period=2"])?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    cfg.apply_overrides(args.iter().map(String::as_str))?;
    cfg.validate()?;

    let [train_ids, val_ids, test_ids] = split_ids(&cfg);
    let train_set = generate_dataset(train_ids, cfg.seed, &cfg.scene)?;
    let val = generate_dataset(val_ids, cfg.seed, &cfg.scene)?;
    let test = generate_dataset(test_ids, cfg.seed, &cfg.scene)?;

    let mut model = cfg.new_model();
    println!("variant {}, {} parameters", cfg.ablation.label(), model.store.numel());
    let start = Instant::now();
    let report = train(&mut model, &train_set, &val, &cfg.train_config(), |m| {
        println!(
            "epoch {:>2}  lr {:.4}  rr {:.3}  box {:.3}  sgl {:.3}  val {:.3}/{:.3}  {:.0}s",
            m.epoch,
            m.lr,
            m.loss_rr,
            m.loss_box,
            m.loss_sgl,
            m.val_subj_iou,
            m.val_obj_iou,
            start.elapsed().as_secs_f64()
        );
    })?;
    println!("probe loss {:.3} -> {:.3}", report.initial_loss, report.final_loss);

    let scores = evaluate_rr(&model, &test, &cfg.proposals, cfg.seed)?;
    println!(
        "test subject IOU {:.4} ± {:.4}, object IOU {:.4} ± {:.4}",
        scores.subject_mean(),
        standard_error(&scores.subject),
        scores.object_mean(),
        standard_error(&scores.object)
    );
    let refine = evaluate_refinement(&model, &test, &cfg.proposals, cfg.seed, POSITIVE_IOU)?;
    println!(
        "box IOU over {} matched proposals: {:.4} before refinement, {:.4} after",
        refine.n_boxes, refine.unrefined_iou, refine.refined_iou
    );
    if model.flags.use_dsg {
        let exact = ProposalConfig {
            jitter: 0.0,
            ..cfg.proposals.clone()
        };
        let sg = evaluate_sg_decoding(&model, &test, &exact, cfg.seed, DECODING_IOU_FLOOR)?;
        println!(
            "scene graph: entity accuracy {:.3} ({}), relation accuracy {:.3} ({})",
            sg.entity_acc.unwrap_or(f64::NAN),
            sg.n_entities,
            sg.relation_acc.unwrap_or(f64::NAN),
            sg.n_relations
        );
    }
    Ok(())
}
