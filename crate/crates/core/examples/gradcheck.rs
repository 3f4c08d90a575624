//! Compares reverse-mode gradients of a small network against central finite
//! differences.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use dsg::autodiff::{Graph, Mlp, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(store: &ParamStore, mlp: &Mlp, x: &Tensor, targets: &[usize]) -> f64 {
    let mut g = Graph::new();
    let xv = g.input(x.clone()).unwrap();
    let logits = mlp.forward(&mut g, store, xv).unwrap();
    let ce = g.softmax_cross_entropy(logits, targets).unwrap();
    g.value(ce).item()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, &mut rng, "net", &[5, 8, 3]);
    let x = Tensor::new(vec![4, 5], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let targets = [0, 2, 1, 2];

    let mut g = Graph::new();
    let xv = g.input(x.clone())?;
    let logits = mlp.forward(&mut g, &store, xv)?;
    let ce = g.softmax_cross_entropy(logits, &targets)?;
    let grads = g.backward(ce, &store)?;
    println!("loss {:.6}", g.value(ce).item());

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for id in mlp.param_ids() {
        let analytic = grads.params.get(id).data().to_vec();
        for k in 0..analytic.len() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let up = loss(&store, &mlp, &x, &targets);
            store.get_mut(id).data_mut()[k] = orig - h;
            let down = loss(&store, &mlp, &x, &targets);
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        println!("{:<12} {:>4} entries checked", store.name(id), analytic.len());
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
