//! Generates a few synthetic scenes, prints their entities and queries, and
//! writes the first one as a PPM image.
//!
//! ```text
//! cargo run --release --example scenes -- /tmp/scene.ppm
//! ```

use dsg::scenegen::{generate_dataset, rasterize, Relation, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "scene.ppm".into());
    let scenes = generate_dataset(0..3, 42, &SceneConfig::default())?;
    for scene in &scenes {
        println!(
            "scene {} ({} entities, ambiguous: {})",
            scene.scene_id,
            scene.entities.len(),
            scene.is_ambiguous()
        );
        for e in &scene.entities {
            println!(
                "  #{} {:<22} box ({:.2}, {:.2}, {:.2}, {:.2}) depth {:.2}",
                e.id,
                e.category().to_string(),
                e.bbox.x,
                e.bbox.y,
                e.bbox.w,
                e.bbox.h,
                e.depth
            );
        }
        for q in &scene.queries {
            println!(
                "  query <{}, {}, {}>  subjects {:?} objects {:?}",
                q.subject,
                q.relation.name(),
                q.object,
                q.gt_subjects,
                q.gt_objects
            );
        }
    }
    let counts = Relation::ALL.map(|r| {
        let n: usize = scenes
            .iter()
            .flat_map(|s| &s.queries)
            .filter(|q| q.relation == r)
            .count();
        format!("{}={n}", r.name())
    });
    println!("relations in queries: {}", counts.join(" "));
    rasterize(&scenes[0]).save_ppm(&out)?;
    println!("wrote {out}");
    Ok(())
}
