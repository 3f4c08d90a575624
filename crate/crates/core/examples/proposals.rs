//! Runs the simulated detector on one scene and shows how each proposal lines
//! up with the ground truth, together with its appearance descriptor.
//!
//! ```text
//! cargo run --release --example proposals -- /tmp/proposals.ppm
//! ```

use dsg::proposals::{propose, ProposalConfig};
use dsg::scenegen::{generate_scene, rasterize, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "proposals.ppm".into());
    let scene = generate_scene(5, 42, &SceneConfig::default())?;
    let image = rasterize(&scene);
    let boxes = propose(&scene, &image, 1, &ProposalConfig::default())?;
    println!("{} entities, {} proposals, {} pairs", scene.entities.len(), boxes.len(), boxes.pairs.len());

    for (i, (b, d)) in boxes.boxes.iter().zip(&boxes.descriptors).enumerate() {
        let (best, iou) = scene
            .entities
            .iter()
            .map(|e| (e.category().to_string(), b.iou(&e.bbox)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or_default();
        let label = if iou >= 0.5 { best } else { "background".into() };
        let off = d.foreground_offset();
        println!(
            "  {i:>2} {label:<22} iou {iou:.2}  fill {:.2}  luma {:.2}  offset [{:+.2} {:+.2} {:+.2} {:+.2}]",
            d.fill_ratio(),
            d.luminance(),
            off[0],
            off[1],
            off[2],
            off[3]
        );
    }

    let mut canvas = image.clone();
    for b in &boxes.boxes {
        canvas.outline(b, [255, 255, 255]);
    }
    image.hstack(&canvas).save_ppm(&out)?;
    println!("wrote {out}");
    Ok(())
}
