//! Builds a graph-permutation-invariant generator, feeds it a random graph and
//! a relabelled copy of that graph, and checks that node outputs permute along
//! while the global summary stays put.
//!
//! ```text
//! cargo run --release --example gpi_invariance -- 6
//! ```

use dsg::autodiff::{Graph, ParamStore, Tensor};
use dsg::dsggen::{gpi_forward, pair_endpoints, AggregationMode, GpiDims, GpiParams};
use dsg::proposals::pair_index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(
    store: &ParamStore,
    params: &GpiParams,
    nodes: &Tensor,
    pairs: &Tensor,
    mode: AggregationMode,
) -> Result<(Vec<f64>, Tensor), dsg::autodiff::AutodiffError> {
    let mut g = Graph::new();
    let n = g.input(nodes.clone())?;
    let p = g.input(pairs.clone())?;
    let out = gpi_forward(&mut g, store, params, n, Some(p), mode, &[])?;
    Ok((g.value(out.summary).data().to_vec(), g.value(out.nodes).clone()))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let dims = GpiDims {
        node: 6,
        pair: 4,
        hidden: 16,
        value: 8,
        summary: 8,
        out: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let params = GpiParams::new(&mut store, &mut rng, "gpi", dims);

    let mut sample = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let nodes = Tensor::new(vec![n, dims.node], sample(n * dims.node))?;
    let pairs = Tensor::new(vec![n * (n - 1), dims.pair], sample(n * (n - 1) * dims.pair))?;

    // relabel: new node k is old node perm[k]
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    let p_nodes: Vec<f64> = perm.iter().flat_map(|&k| nodes.row(k).to_vec()).collect();
    let (is, js) = pair_endpoints(n);
    let p_pairs: Vec<f64> = is
        .iter()
        .zip(&js)
        .flat_map(|(&i, &j)| pairs.row(pair_index(n, perm[i], perm[j])).to_vec())
        .collect();
    let p_nodes = Tensor::new(vec![n, dims.node], p_nodes)?;
    let p_pairs = Tensor::new(vec![n * (n - 1), dims.pair], p_pairs)?;

    println!("permutation {perm:?}");
    for mode in [AggregationMode::Sum, AggregationMode::Attention] {
        let (s0, z0) = run(&store, &params, &nodes, &pairs, mode)?;
        let (s1, z1) = run(&store, &params, &p_nodes, &p_pairs, mode)?;
        let summary_gap = s0.iter().zip(&s1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let mut node_gap: f64 = 0.0;
        for (k, &old) in perm.iter().enumerate() {
            for (a, b) in z1.row(k).iter().zip(z0.row(old)) {
                node_gap = node_gap.max((a - b).abs());
            }
        }
        println!(
            "{:<9} max |summary diff| {summary_gap:.1e}  max |node diff after unpermuting| {node_gap:.1e}",
            mode.name()
        );
    }
    Ok(())
}
