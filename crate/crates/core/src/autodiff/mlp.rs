use rand::Rng;

use super::{AutodiffError, Graph, ParamId, ParamStore, Result, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

/// Fully connected stack. Weights are stored `in × out` and applied as `x · W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    widths: Vec<usize>,
}

/// Glorot-uniform weights, zero biases.
fn init_layer(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data")
}

impl Mlp {
    /// `widths` lists input width then each layer's output width. Hidden layers use
    /// ReLU, the last layer is linear.
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, widths: &[usize]) -> Self {
        let n = widths.len() - 1;
        let acts: Vec<Activation> = (0..n)
            .map(|i| if i + 1 == n { Activation::Identity } else { Activation::Relu })
            .collect();
        Self::with_activations(store, rng, name, widths, &acts)
    }

    pub fn with_activations(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        widths: &[usize],
        activations: &[Activation],
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        assert_eq!(activations.len(), widths.len() - 1);
        let layers = widths
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(i, (w, &activation))| Layer {
                weight: store.add(format!("{name}.{i}.weight"), init_layer(rng, w[0], w[1])),
                bias: store.add(format!("{name}.{i}.bias"), Tensor::zeros(&[w[1]])),
                activation,
            })
            .collect();
        Mlp {
            layers,
            widths: widths.to_vec(),
        }
    }

    /// Same layout as [`Mlp::new`] with every weight zero.
    pub fn zeros(store: &mut ParamStore, name: &str, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weight: store.add(format!("{name}.{i}.weight"), Tensor::zeros(&[w[0], w[1]])),
                bias: store.add(format!("{name}.{i}.bias"), Tensor::zeros(&[w[1]])),
                activation: if i + 1 == n { Activation::Identity } else { Activation::Relu },
            })
            .collect();
        Mlp {
            layers,
            widths: widths.to_vec(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }

    /// Applies the network to each row of an `m × input_width` matrix.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mlp",
                left: shape.to_vec(),
                right: vec![self.input_width()],
            });
        }
        let mut h = x;
        for layer in &self.layers {
            let w = g.param(store, layer.weight)?;
            let b = g.param(store, layer.bias)?;
            h = g.matmul(h, w)?;
            h = g.add_row(h, b)?;
            if layer.activation == Activation::Relu {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Plain evaluation of one input row, without a graph.
    pub fn eval_row(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            let w = store.get(layer.weight);
            let b = store.get(layer.bias);
            let (k, n) = w.dims2().unwrap();
            let mut out = b.data().to_vec();
            for p in 0..k {
                let hv = h[p];
                for (o, wv) in out.iter_mut().zip(&w.data()[p * n..(p + 1) * n]) {
                    *o += hv * wv;
                }
            }
            if layer.activation == Activation::Relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        h
    }
}
