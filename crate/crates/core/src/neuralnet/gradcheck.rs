use serde::Serialize;

use super::loss::mse_loss;
use super::mlp::{Mlp, MlpSpec};
use super::params::Parameters;
use crate::error::Result;
use crate::mathcore::{Matrix, RngStream};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error with a floor on the denominator so that entries whose
/// analytic and numeric gradients are both ~0 do not dominate.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-5)
}

/// Compares analytic gradients against central differences.
///
/// `loss_and_grad` must return the scalar loss and its gradient for the given
/// parameters. At most `max_per_tensor` randomly chosen entries of each tensor
/// are perturbed (all of them when the tensor is smaller).
pub fn grad_check<P, F>(
    params: &P,
    loss_and_grad: F,
    eps: f64,
    tol: f64,
    max_per_tensor: usize,
    rng: &mut RngStream,
) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: Fn(&P) -> Result<(f64, P)>,
{
    let (_, analytic) = loss_and_grad(params)?;
    let analytic_tensors: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    let lens: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = params.clone();
    for (ti, &len) in lens.iter().enumerate() {
        let mut idx: Vec<usize> = (0..len).collect();
        if len > max_per_tensor {
            rng.shuffle(&mut idx);
            idx.truncate(max_per_tensor);
        }
        for i in idx {
            let orig = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = orig + eps;
            let up = loss_and_grad(&probe)?.0;
            probe.tensors_mut()[ti][i] = orig - eps;
            let down = loss_and_grad(&probe)?.0;
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_error(analytic_tensors[ti][i], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        checked,
        tol,
        passed: worst < tol,
    })
}

/// Gradient check of an MLP under MSE against a random regression target.
pub fn mlp_grad_check(spec: &MlpSpec, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let root = RngStream::named(seed, "neuralnet.gradcheck");
    let mut rng = root.derive("init");
    let net = Mlp::init(spec.clone(), &mut rng)?;
    let batch = 4;
    let x = Matrix::from_vec(
        batch,
        spec.input_size(),
        (0..batch * spec.input_size())
            .map(|_| rng.uniform_range(-1.5, 1.5))
            .collect(),
    )?;
    let t = Matrix::from_vec(
        batch,
        spec.output_size(),
        (0..batch * spec.output_size())
            .map(|_| rng.uniform_range(-1.0, 1.0))
            .collect(),
    )?;
    let f = |p: &Mlp| -> Result<(f64, Mlp)> {
        let (y, cache) = p.forward(&x)?;
        let (loss, gy) = mse_loss(&y, &t)?;
        Ok((loss, p.backward(&cache, &gy)?))
    };
    grad_check(&net, f, 1e-5, tol, 64, &mut root.derive("probe"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{HiddenActivation, OutputActivation};

    #[test]
    fn two_hidden_relu_passes() {
        let spec = MlpSpec::new(
            vec![3, 16, 16, 2],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        for seed in 0..3 {
            let r = mlp_grad_check(&spec, seed, 1e-4).unwrap();
            assert!(r.passed, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn tanh_softmax_passes() {
        let spec = MlpSpec::new(
            vec![3, 8, 8, 5],
            HiddenActivation::Tanh,
            OutputActivation::Softmax,
        )
        .unwrap();
        for seed in 0..3 {
            let r = mlp_grad_check(&spec, seed, 1e-4).unwrap();
            assert!(r.passed, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let spec = MlpSpec::new(
            vec![2, 3, 1],
            HiddenActivation::Tanh,
            OutputActivation::Identity,
        )
        .unwrap();
        let mut rng = RngStream::new(0, 0);
        let net = Mlp::init(spec, &mut rng).unwrap();
        let x = Matrix::from_vec(1, 2, vec![0.5, -0.5]).unwrap();
        let f = |p: &Mlp| -> Result<(f64, Mlp)> {
            let (y, cache) = p.forward(&x)?;
            let (loss, mut gy) = mse_loss(&y, &Matrix::zeros(1, 1))?;
            gy.scale_mut(2.0); // deliberately wrong
            Ok((loss, p.backward(&cache, &gy)?))
        };
        let r = grad_check(&net, f, 1e-5, 1e-4, 100, &mut rng).unwrap();
        assert!(!r.passed);
    }
}
