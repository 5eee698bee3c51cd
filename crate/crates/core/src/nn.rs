//! Multilayer perceptron with ReLU hidden layers and a softmax output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, VarId};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Layer widths from input to output, e.g. `[784, 50, 30, 10]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec(Vec<usize>);

impl LayerSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!(
                "layer spec needs at least input and output widths, all positive; got {sizes:?}"
            )));
        }
        Ok(Self(sizes))
    }

    /// `[input, hidden..., output]`.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn input(&self) -> usize {
        self.0[0]
    }

    pub fn output(&self) -> usize {
        *self.0.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `in × out`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    spec: LayerSpec,
    layers: Vec<Layer>,
}

/// Glorot-uniform weights and zero biases, deterministic per seed.
pub fn init_params(spec: &LayerSpec, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .sizes()
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            Layer {
                weight: Tensor::from_parts(vec![fan_in, fan_out], data),
                bias: Tensor::zeros(&[fan_out]),
            }
        })
        .collect();
    Params {
        spec: spec.clone(),
        layers,
    }
}

impl Params {
    pub fn from_layers(spec: LayerSpec, layers: Vec<Layer>) -> Result<Self> {
        let sizes = spec.sizes();
        if layers.len() != sizes.len() - 1 {
            return Err(invalid(format!(
                "{} layers for spec {:?}",
                layers.len(),
                sizes
            )));
        }
        for (l, w) in layers.iter().zip(sizes.windows(2)) {
            if l.weight.shape() != [w[0], w[1]] || l.bias.shape() != [w[1]] {
                return Err(Error::ShapeMismatch {
                    op: "params",
                    lhs: l.weight.shape().to_vec(),
                    rhs: vec![w[0], w[1]],
                });
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Weight, bias, weight, bias, ... in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    /// All parameters concatenated in [`Params::tensors`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`Params::flatten`].
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for t in out.tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().flat_map(|t| t.data()).map(|v| v * v).sum()
    }

    /// Hex SHA-256 over the layer sizes and little-endian parameter bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for &s in self.spec.sizes() {
            h.update((s as u32).to_le_bytes());
        }
        for v in self.tensors().flat_map(|t| t.data()) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Registers every weight and bias as a leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        let layers = self
            .layers
            .iter()
            .map(|l| (graph.leaf(l.weight.clone()), graph.leaf(l.bias.clone())))
            .collect();
        BoundParams { layers }
    }
}

/// Parameter leaves of one graph, in layer order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    layers: Vec<(VarId, VarId)>,
}

impl BoundParams {
    /// Weight, bias, weight, bias, ... matching [`Params::tensors`].
    pub fn vars(&self) -> Vec<VarId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Pre-softmax outputs `N × K`.
    pub fn logits(&self, graph: &mut Graph, x: VarId) -> Result<VarId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = graph.matmul(h, w)?;
            h = graph.add(h, b)?;
            if i < last {
                h = graph.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn log_probs(&self, graph: &mut Graph, x: VarId) -> Result<VarId> {
        let z = self.logits(graph, x)?;
        graph.log_softmax(z)
    }

    /// Log-probabilities of a softmax at temperature `t` (logits scaled by `1/t`).
    pub fn log_probs_at(&self, graph: &mut Graph, x: VarId, temperature: f64) -> Result<VarId> {
        check_temperature(temperature)?;
        let z = self.logits(graph, x)?;
        let z = if temperature == 1.0 { z } else { graph.scale(z, 1.0 / temperature)? };
        graph.log_softmax(z)
    }

    /// `Σ θ²` over all weights and biases.
    pub fn squared_norm(&self, graph: &mut Graph) -> Result<VarId> {
        let mut total: Option<VarId> = None;
        for v in self.vars() {
            let sq = graph.square(v)?;
            let s = graph.sum(sq)?;
            total = Some(match total {
                None => s,
                Some(t) => graph.add(t, s)?,
            });
        }
        Ok(total.expect("at least one layer"))
    }
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("temperature must be positive and finite, got {t}")))
    }
}

fn check_input(params: &Params, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != params.spec.input() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: x.shape().to_vec(),
            rhs: vec![params.spec.input()],
        });
    }
    Ok(())
}

/// Log-probabilities `N × K` for inputs `x`, recorded on `graph`.
pub fn forward(params: &Params, x: &Tensor, graph: &mut Graph) -> Result<VarId> {
    forward_with_temperature(params, x, 1.0, graph)
}

pub fn forward_with_temperature(params: &Params, x: &Tensor, temperature: f64, graph: &mut Graph) -> Result<VarId> {
    check_input(params, x)?;
    let bound = params.bind(graph);
    let xv = graph.constant(x.clone());
    bound.log_probs_at(graph, xv, temperature)
}

/// Evaluates log-probabilities without keeping a graph around.
pub fn predict_log_probs(params: &Params, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let lp = forward(params, x, &mut g)?;
    Ok(g.value(lp).clone())
}

pub fn predict_logits(params: &Params, x: &Tensor) -> Result<Tensor> {
    check_input(params, x)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let xv = g.constant(x.clone());
    let z = bound.logits(&mut g, xv)?;
    Ok(g.value(z).clone())
}

pub fn predict(params: &Params, x: &Tensor) -> Result<Vec<usize>> {
    Ok(predict_log_probs(params, x)?.argmax_rows())
}

/// Fraction of rows whose predicted class matches the one-hot label.
pub fn accuracy(params: &Params, x: &Tensor, y: &Tensor) -> Result<f64> {
    let pred = predict(params, x)?;
    let truth = y.argmax_rows();
    Ok(agreement(&pred, &truth))
}

pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(p, t)| p == t).count() as f64 / a.len() as f64
}
