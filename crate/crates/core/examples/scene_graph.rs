//! Trains a small model, decodes the scene graph it builds internally for one
//! test scene, and answers that scene's queries two ways: with the learned
//! classifier and by reasoning over the decoded graph.
//!
//! ```text
//! cargo run --release --example scene_graph -- n_train=600
//! ```

use dsg::eval::{eval_proposals, matched_entities, DECODING_IOU_FLOOR};
use dsg::experiment::{split_ids, ExperimentConfig};
use dsg::heads::{decode_scene_graph, select_boxes};
use dsg::proposals::ProposalConfig;
use dsg::scenegen::{generate_dataset, relation_holds};
use dsg::training::{train, two_step_reason};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(["n_train=400", "n_val=0", "n_test=20", "epochs=6", "decay_period=2", "val_every_epoch=false"])?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    cfg.apply_overrides(args.iter().map(String::as_str))?;
    cfg.validate()?;

    let [train_ids, _, test_ids] = split_ids(&cfg);
    let train_set = generate_dataset(train_ids, cfg.seed, &cfg.scene)?;
    let test = generate_dataset(test_ids, cfg.seed, &cfg.scene)?;
    let mut model = cfg.new_model();
    train(&mut model, &train_set, &[], &cfg.train_config(), |m| {
        println!("epoch {} done, relationship loss {:.3}", m.epoch, m.loss_rr)
    })?;

    let scene = test.iter().max_by_key(|s| s.entities.len()).expect("test split is not empty");
    let exact = ProposalConfig {
        jitter: 0.0,
        ..cfg.proposals.clone()
    };
    let boxes = eval_proposals(scene, cfg.seed, &exact)?;
    let pred = model.predict(&boxes, &scene.queries, true)?;
    let probs = pred.sg.as_ref().expect("scene graph requested");
    let graph = decode_scene_graph(probs, 8);
    let matched = matched_entities(scene, &boxes, DECODING_IOU_FLOOR);

    println!("\nscene {}: nodes", scene.scene_id);
    for (i, node) in graph.nodes.iter().enumerate() {
        let truth = matched[i].map_or("background".to_string(), |k| scene.entities[k].category().to_string());
        println!("  {i:>2} {:<22} p={:.2}  truth {truth}", node.category.to_string(), node.confidence);
    }
    println!("most confident edges");
    for e in &graph.edges {
        let verdict = match (matched[e.subject], matched[e.object]) {
            (Some(a), Some(b)) if a != b => {
                if relation_holds(&scene.entities[a], &scene.entities[b], e.relation) {
                    "holds"
                } else {
                    "wrong"
                }
            }
            _ => "involves background",
        };
        println!("  {} {} {}  p={:.2}  {verdict}", e.subject, e.relation.name(), e.object, e.confidence);
    }

    println!("queries (proposal indices)");
    for (q, logits) in scene.queries.iter().zip(&pred.role_logits) {
        let (s, o) = select_boxes(logits);
        let (ts, to) = two_step_reason(probs, q)?;
        println!("  <{}, {}, {}>", q.subject, q.relation.name(), q.object);
        println!("    classifier  subjects {s:?} objects {o:?}");
        println!("    graph       subjects {ts:?} objects {to:?}");
    }
    Ok(())
}
