//! The referring-relationship metric: boxes are painted onto a coarse grid and
//! scored by the IOU of the painted cells. Also shows that answering with the
//! ground truth scores a perfect 1.
//!
//! ```text
//! cargo run --release --example metrics
//! ```

use dsg::eval::{boxes_to_map, evaluate_rr, map_iou, AttentionMap, OracleAnswerer, DEFAULT_GRID};
use dsg::geometry::BBox;
use dsg::proposals::ProposalConfig;
use dsg::scenegen::{generate_dataset, SceneConfig};

fn show(map: &AttentionMap) {
    for r in 0..map.side() {
        let row: String = (0..map.side()).map(|c| if map.get(r, c) { '#' } else { '.' }).collect();
        println!("    {row}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = boxes_to_map(&[BBox::new(0.1, 0.1, 0.3, 0.3)], DEFAULT_GRID);
    let guess = boxes_to_map(&[BBox::new(0.2, 0.15, 0.3, 0.3), BBox::new(0.7, 0.7, 0.1, 0.1)], DEFAULT_GRID);
    println!("truth ({} cells):", truth.count());
    show(&truth);
    println!("guess ({} cells):", guess.count());
    show(&guess);
    println!("map IOU {:.3}", map_iou(&truth, &guess)?);

    let empty = AttentionMap::empty(DEFAULT_GRID);
    println!("IOU of two empty maps {:.1}", map_iou(&empty, &empty)?);

    let scenes = generate_dataset(0..50, 1, &SceneConfig::default())?;
    let scores = evaluate_rr(&OracleAnswerer, &scenes, &ProposalConfig::default(), 1)?;
    println!(
        "oracle over {} queries: subject {:.3}, object {:.3}",
        scores.len(),
        scores.subject_mean(),
        scores.object_mean()
    );
    Ok(())
}
