use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = MlpSpec {
            layer_sizes,
            hidden_activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::param("an MLP needs at least input and output sizes"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::param("MLP layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }
}

/// One affine layer, `x · W + b` with `W` stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Multilayer perceptron parameters. Also serves as its own gradient type.
///
/// Serialized as `{"spec": {...}, "layers": [{"weights": [[..]], "bias": [..]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `inputs[k]` is the input to layer `k`; the last entry is the network output.
    inputs: Vec<Matrix>,
    /// Pre-activations of every layer.
    pre: Vec<Matrix>,
}

impl Mlp {
    /// He-uniform init for relu layers, Xavier-uniform otherwise; zero biases.
    pub fn init(spec: MlpSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let n = spec.layer_sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let (fan_in, fan_out) = (spec.layer_sizes[k], spec.layer_sizes[k + 1]);
                let hidden = k + 1 < n;
                let bound = if hidden && spec.hidden_activation == HiddenActivation::Relu {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-bound, bound))
                    .collect();
                Dense {
                    weights: Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Dense {
                weights: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        let mlp = Mlp { spec, layers };
        mlp.validate()?;
        Ok(mlp)
    }

    /// Checks layer shapes against the spec and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.layers.len() != self.spec.layer_sizes.len() - 1 {
            return Err(Error::shape(format!(
                "{} layers for {} layer sizes",
                self.layers.len(),
                self.spec.layer_sizes.len()
            )));
        }
        for (k, (layer, w)) in self
            .layers
            .iter()
            .zip(self.spec.layer_sizes.windows(2))
            .enumerate()
        {
            if layer.weights.shape() != (w[0], w[1]) || layer.bias.len() != w[1] {
                return Err(Error::shape(format!(
                    "layer {k}: weights {:?}, bias {}, expected {}x{}",
                    layer.weights.shape(),
                    layer.bias.len(),
                    w[0],
                    w[1]
                )));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::param(format!("layer {k} holds non-finite values")));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        inputs.push(x.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let z = affine(inputs.last().expect("non-empty"), layer);
            let a = self.activate(k, &z);
            pre.push(z);
            inputs.push(a);
        }
        let out = inputs.last().expect("non-empty").clone();
        Ok((out, MlpCache { inputs, pre }))
    }

    /// Forward pass without recording a cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = affine(&a, layer);
            a = self.activate(k, &z);
        }
        Ok(a)
    }

    /// Gradients of a scalar whose derivative with respect to the network
    /// output is `grad_out`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<Mlp> {
        let n = self.layers.len();
        if cache.pre.len() != n || cache.inputs.len() != n + 1 {
            return Err(Error::shape("cache does not belong to this network"));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if cache.inputs[k].cols() != layer.weights.rows()
                || cache.pre[k].cols() != layer.weights.cols()
            {
                return Err(Error::shape(format!("stale cache at layer {k}")));
            }
        }
        let out = &cache.inputs[n];
        if grad_out.shape() != out.shape() {
            return Err(Error::shape(format!(
                "output gradient {:?} vs output {:?}",
                grad_out.shape(),
                out.shape()
            )));
        }

        let mut g = match self.spec.output_activation {
            OutputActivation::Identity => grad_out.clone(),
            OutputActivation::Softmax => softmax_backward(out, grad_out),
        };
        let mut grads = self.zeros_like();
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let gl = &mut grads.layers[k];
            gl.weights = cache.inputs[k].matmul_tn(&g)?;
            gl.bias = g.col_sums();
            if k == 0 {
                break;
            }
            let mut ga = g.matmul_nt(&layer.weights)?;
            match self.spec.hidden_activation {
                HiddenActivation::Relu => {
                    for (v, z) in ga.data_mut().iter_mut().zip(cache.pre[k - 1].data()) {
                        if *z <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                HiddenActivation::Tanh => {
                    for (v, a) in ga.data_mut().iter_mut().zip(cache.inputs[k].data()) {
                        *v *= 1.0 - a * a;
                    }
                }
            }
            g = ga;
        }
        Ok(grads)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.input_size() {
            return Err(Error::shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.spec.input_size()
            )));
        }
        Ok(())
    }

    fn activate(&self, k: usize, z: &Matrix) -> Matrix {
        if k + 1 < self.layers.len() {
            match self.spec.hidden_activation {
                HiddenActivation::Relu => z.map(|v| v.max(0.0)),
                HiddenActivation::Tanh => z.map(f64::tanh),
            }
        } else {
            match self.spec.output_activation {
                OutputActivation::Identity => z.clone(),
                OutputActivation::Softmax => softmax_rows(z),
            }
        }
    }
}

fn affine(x: &Matrix, layer: &Dense) -> Matrix {
    let mut z = x.matmul(&layer.weights).expect("shape checked");
    z.add_row_broadcast(&layer.bias).expect("shape checked");
    z
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `dz = y ⊙ (g − ⟨g, y⟩)` per row.
fn softmax_backward(y: &Matrix, g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), g.row(r));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, a), b) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *o = a * (b - dot);
        }
    }
    out
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    fn zeros_like(&self) -> Self {
        Mlp::zeros(self.spec.clone()).expect("spec already validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::loss::mse_loss;

    fn spec(sizes: &[usize], h: HiddenActivation, o: OutputActivation) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), h, o).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], HiddenActivation::Relu, OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(
            vec![3, 0, 1],
            HiddenActivation::Relu,
            OutputActivation::Identity
        )
        .is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(spec(
            &[4, 5, 2],
            HiddenActivation::Tanh,
            OutputActivation::Identity,
        ))
        .unwrap();
        let x = Matrix::from_vec(2, 4, vec![1.0, -2.0, 3.0, 0.5, 0.1, 0.2, 0.3, 0.4]).unwrap();
        let (y, _) = net.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let s = spec(&[3, 3], HiddenActivation::Relu, OutputActivation::Identity);
        let net = Mlp::from_layers(
            s,
            vec![Dense {
                weights: Matrix::identity(3),
                bias: vec![0.0; 3],
            }],
        )
        .unwrap();
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.25, 0.5, -0.75]).unwrap();
        assert_eq!(net.forward(&x).unwrap().0, x);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut rng = RngStream::new(3, 0);
        let net = Mlp::init(
            spec(
                &[3, 8, 5],
                HiddenActivation::Relu,
                OutputActivation::Softmax,
            ),
            &mut rng,
        )
        .unwrap();
        let x = Matrix::from_vec(4, 3, (0..12).map(|i| i as f64 * 0.7 - 3.0).collect()).unwrap();
        let y = net.predict(&x).unwrap();
        for r in 0..y.rows() {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(y.row(r).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = RngStream::new(4, 0);
        let net = Mlp::init(
            spec(
                &[2, 6, 3],
                HiddenActivation::Tanh,
                OutputActivation::Softmax,
            ),
            &mut rng,
        )
        .unwrap();
        let x = Matrix::from_vec(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let (y, cache) = net.forward(&x).unwrap();
        let g = net
            .backward(&cache, &Matrix::zeros(y.rows(), y.cols()))
            .unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_mse_gradient_closed_form() {
        // single linear layer: dL/dW = 2 xᵀ(xW + b − t)/n, dL/db = 2·colsum(xW + b − t)/n
        let mut rng = RngStream::new(9, 1);
        let net = Mlp::init(
            spec(&[3, 2], HiddenActivation::Relu, OutputActivation::Identity),
            &mut rng,
        )
        .unwrap();
        let x = Matrix::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
        let t = Matrix::from_vec(4, 2, (0..8).map(|i| (i as f64 * 0.9).sin()).collect()).unwrap();
        let (y, cache) = net.forward(&x).unwrap();
        let (_, gy) = mse_loss(&y, &t).unwrap();
        let g = net.backward(&cache, &gy).unwrap();

        let n = (y.rows() * y.cols()) as f64;
        let resid = y.sub(&t).unwrap();
        let mut want_w = x.matmul_tn(&resid).unwrap();
        want_w.scale_mut(2.0 / n);
        let want_b: Vec<f64> = resid.col_sums().iter().map(|v| 2.0 * v / n).collect();
        assert!(g.layers()[0].weights.max_abs_diff(&want_w).unwrap() < 1e-14);
        for (a, b) in g.layers()[0].bias.iter().zip(&want_b) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = RngStream::new(1, 1);
        let a = Mlp::init(
            spec(
                &[2, 4, 1],
                HiddenActivation::Relu,
                OutputActivation::Identity,
            ),
            &mut rng,
        )
        .unwrap();
        let b = Mlp::init(
            spec(
                &[2, 5, 1],
                HiddenActivation::Relu,
                OutputActivation::Identity,
            ),
            &mut rng,
        )
        .unwrap();
        let (y, cache) = a.forward(&Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(b.backward(&cache, &y), Err(Error::Shape(_))));
        assert!(matches!(
            a.forward(&Matrix::zeros(1, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = RngStream::new(2, 2);
        let net = Mlp::init(
            spec(
                &[3, 16, 16, 2],
                HiddenActivation::Tanh,
                OutputActivation::Identity,
            ),
            &mut rng,
        )
        .unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.3, -0.1, 0.7, 1.0, 2.0, -3.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
        assert_eq!(net.forward(&x).unwrap().0, net.predict(&x).unwrap());
    }
}
