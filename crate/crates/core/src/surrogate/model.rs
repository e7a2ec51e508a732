use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{Matrix, RngStream};
use crate::neuralnet::{
    mse_loss, AdamConfig, AdamState, HiddenActivation, Mlp, MlpSpec, OutputActivation,
};

/// One observation: channel-averaged PPL at `(p, σ, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateRecord {
    pub p: usize,
    pub sigma: f64,
    pub m: f64,
    pub ppl: f64,
}

/// Raw surrogate inputs; `m` enters on a log scale.
fn features(p: usize, sigma: f64, m: f64) -> [f64; 3] {
    [p as f64, sigma, m.ln()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSpec {
    pub hidden: Vec<usize>,
    pub activation: HiddenActivation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec {
            hidden: vec![64, 64],
            activation: HiddenActivation::Relu,
            epochs: 150,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

impl SurrogateSpec {
    fn mlp_spec(&self) -> MlpSpec {
        let mut sizes = vec![3];
        sizes.extend(&self.hidden);
        sizes.push(1);
        MlpSpec {
            layer_sizes: sizes,
            hidden_activation: self.activation,
            output_activation: OutputActivation::Identity,
        }
    }
}

/// Fitted PPL regressor with its input/target standardization and the
/// bounding box of the data it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub x_mean: [f64; 3],
    pub x_std: [f64; 3],
    pub y_mean: f64,
    pub y_std: f64,
    pub hull_lo: [f64; 3],
    pub hull_hi: [f64; 3],
    pub net: Mlp,
}

impl SurrogateModel {
    /// A model that predicts `value` everywhere, with an unbounded hull.
    pub fn constant(value: f64) -> Result<Self> {
        let spec = MlpSpec {
            layer_sizes: vec![3, 1],
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Identity,
        };
        Ok(SurrogateModel {
            x_mean: [0.0; 3],
            x_std: [1.0; 3],
            y_mean: value,
            y_std: 1.0,
            hull_lo: [f64::NEG_INFINITY; 3],
            hull_hi: [f64::INFINITY; 3],
            net: Mlp::zeros(spec)?,
        })
    }

    fn standardize(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| (x[i] - self.x_mean[i]) / self.x_std[i])
    }

    /// Predicted PPL (floored at 1) and whether any input lies outside the
    /// training hull.
    pub fn predict(&self, p: usize, sigma: f64, m: f64) -> (f64, bool) {
        let x = features(p, sigma, m);
        let outside =
            (0..3).any(|i| !(x[i] >= self.hull_lo[i] - 1e-9 && x[i] <= self.hull_hi[i] + 1e-9));
        let z = Matrix::row_vector(&self.standardize(x));
        let y = self
            .net
            .predict(&z)
            .map(|o| o.get(0, 0))
            .unwrap_or(f64::NAN);
        ((self.y_mean + self.y_std * y).max(1.0), outside)
    }

    pub fn predict_many(&self, records: &[SurrogateRecord]) -> Vec<f64> {
        if records.is_empty() {
            return Vec::new();
        }
        let rows: Vec<Vec<f64>> = records
            .iter()
            .map(|r| self.standardize(features(r.p, r.sigma, r.m)).to_vec())
            .collect();
        let x = Matrix::from_rows(&rows).expect("rows share width");
        let y = self
            .net
            .predict(&x)
            .expect("input width matches the network");
        (0..records.len())
            .map(|i| (self.y_mean + self.y_std * y.get(i, 0)).max(1.0))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let finite = self.x_mean.iter().chain(&self.x_std).all(|v| v.is_finite())
            && self.y_mean.is_finite()
            && self.y_std.is_finite();
        if !finite || self.net.spec().input_size() != 3 || self.net.spec().output_size() != 1 {
            return Err(Error::InvalidInput("malformed surrogate checkpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub fold_mse: Vec<f64>,
    pub fold_mae: Vec<f64>,
    pub mean_mse: f64,
    pub mean_mae: f64,
    pub target_variance: f64,
    /// `mean_mse / target_variance` (0 when the targets are constant).
    pub normalized_mse: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains one model on `records` (no validation split).
pub fn train_surrogate(
    records: &[SurrogateRecord],
    spec: &SurrogateSpec,
    rng: &mut RngStream,
) -> Result<SurrogateModel> {
    if records.is_empty() {
        return Err(Error::InvalidDataset("no records to fit".into()));
    }
    if let Some(bad) = records
        .iter()
        .find(|r| !(r.ppl.is_finite() && r.sigma.is_finite() && r.m > 0.0))
    {
        return Err(Error::InvalidDataset(format!("malformed record {bad:?}")));
    }
    if spec.batch_size == 0 || !(spec.lr > 0.0) {
        return Err(Error::param(
            "surrogate batch size and learning rate must be positive",
        ));
    }
    let xs: Vec<[f64; 3]> = records
        .iter()
        .map(|r| features(r.p, r.sigma, r.m))
        .collect();
    let mut x_mean = [0.0; 3];
    let mut x_std = [1.0; 3];
    let mut hull_lo = [0.0; 3];
    let mut hull_hi = [0.0; 3];
    for i in 0..3 {
        let (m, s) = mean_std(xs.iter().map(|x| x[i]));
        x_mean[i] = m;
        x_std[i] = if s > 1e-12 { s } else { 1.0 };
        hull_lo[i] = xs.iter().map(|x| x[i]).fold(f64::INFINITY, f64::min);
        hull_hi[i] = xs.iter().map(|x| x[i]).fold(f64::NEG_INFINITY, f64::max);
    }
    let (y_mean, y_sd) = mean_std(records.iter().map(|r| r.ppl));
    let y_std = if y_sd > 1e-12 { y_sd } else { 1.0 };
    let mut model = SurrogateModel {
        x_mean,
        x_std,
        y_mean,
        y_std,
        hull_lo,
        hull_hi,
        net: Mlp::init(spec.mlp_spec(), rng)?,
    };
    if y_sd <= 1e-12 {
        // constant targets: an all-zero network reproduces the mean exactly
        model.net = Mlp::zeros(spec.mlp_spec())?;
        return Ok(model);
    }
    let zx: Vec<[f64; 3]> = xs.iter().map(|&x| model.standardize(x)).collect();
    let zy: Vec<f64> = records.iter().map(|r| (r.ppl - y_mean) / y_std).collect();
    let mut adam = AdamState::new(&model.net, AdamConfig::with_lr(spec.lr));
    let mut order: Vec<usize> = (0..records.len()).collect();
    for _ in 0..spec.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(spec.batch_size) {
            let mut x = Matrix::zeros(chunk.len(), 3);
            let mut y = Matrix::zeros(chunk.len(), 1);
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).copy_from_slice(&zx[i]);
                y.set(r, 0, zy[i]);
            }
            let (pred, cache) = model.net.forward(&x)?;
            let (loss, grad_out) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::TrainingFailure {
                    step: adam.step_count() as usize,
                });
            }
            let grads = model.net.backward(&cache, &grad_out)?;
            adam.step(&mut model.net, &grads)?;
        }
    }
    Ok(model)
}

/// Balanced fold labels: after shuffling, position `i` goes to fold `i % k`.
pub fn fold_assignment(n: usize, k: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// k-fold cross-validation followed by a final fit on all records.
pub fn fit_surrogate(
    records: &[SurrogateRecord],
    spec: &SurrogateSpec,
    k: usize,
    rng: &mut RngStream,
) -> Result<(SurrogateModel, CvReport)> {
    if k < 2 {
        return Err(Error::param(format!(
            "cross-validation needs k >= 2, got {k}"
        )));
    }
    if records.len() < 10 * k {
        return Err(Error::InvalidDataset(format!(
            "{} records are too few for {k}-fold cross-validation (need {})",
            records.len(),
            10 * k
        )));
    }
    let folds = fold_assignment(records.len(), k, &mut rng.derive("surrogate.folds"));
    let mut fold_mse = Vec::with_capacity(k);
    let mut fold_mae = Vec::with_capacity(k);
    for f in 0..k {
        let train: Vec<SurrogateRecord> = records
            .iter()
            .zip(&folds)
            .filter(|(_, &g)| g != f)
            .map(|(r, _)| *r)
            .collect();
        let test: Vec<SurrogateRecord> = records
            .iter()
            .zip(&folds)
            .filter(|(_, &g)| g == f)
            .map(|(r, _)| *r)
            .collect();
        let model = train_surrogate(
            &train,
            spec,
            &mut rng.derive(&format!("surrogate.fold.{f}")),
        )?;
        let pred = model.predict_many(&test);
        let n = test.len() as f64;
        fold_mse.push(
            test.iter()
                .zip(&pred)
                .map(|(r, y)| (r.ppl - y).powi(2))
                .sum::<f64>()
                / n,
        );
        fold_mae.push(
            test.iter()
                .zip(&pred)
                .map(|(r, y)| (r.ppl - y).abs())
                .sum::<f64>()
                / n,
        );
    }
    let model = train_surrogate(records, spec, &mut rng.derive("surrogate.final"))?;
    let mean_mse = fold_mse.iter().sum::<f64>() / k as f64;
    let mean_mae = fold_mae.iter().sum::<f64>() / k as f64;
    let (_, sd) = mean_std(records.iter().map(|r| r.ppl));
    let target_variance = sd * sd;
    Ok((
        model,
        CvReport {
            k,
            fold_mse,
            fold_mae,
            mean_mse,
            mean_mae,
            target_variance,
            normalized_mse: if target_variance > 0.0 {
                mean_mse / target_variance
            } else {
                0.0
            },
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_records(n: usize, seed: u64) -> Vec<SurrogateRecord> {
        let mut rng = RngStream::new(seed, 0);
        (0..n)
            .map(|_| {
                let p = rng.int_inclusive(1, 7);
                let sigma = rng.uniform_range(0.01, 0.5);
                let m = rng.uniform_range(0.5, 20.0);
                SurrogateRecord {
                    p,
                    sigma,
                    m,
                    ppl: 10.0 - 0.3 * p as f64 + 4.0 * sigma - 0.5 * m.ln(),
                }
            })
            .collect()
    }

    #[test]
    fn folds_are_balanced() {
        let f = fold_assignment(23, 5, &mut RngStream::new(0, 0));
        let counts: Vec<usize> = (0..5)
            .map(|k| f.iter().filter(|&&g| g == k).count())
            .collect();
        assert_eq!(counts.iter().sum::<usize>(), 23);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn too_few_records() {
        let recs = linear_records(49, 1);
        let r = fit_surrogate(
            &recs,
            &SurrogateSpec::default(),
            5,
            &mut RngStream::new(0, 0),
        );
        assert!(matches!(r, Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn learns_linear_ground_truth() {
        let recs = linear_records(400, 2);
        let spec = SurrogateSpec {
            epochs: 150,
            ..Default::default()
        };
        let (model, cv) = fit_surrogate(&recs, &spec, 5, &mut RngStream::new(3, 0)).unwrap();
        assert!(cv.normalized_mse < 1e-2, "{cv:?}");
        let (y, outside) = model.predict(recs[0].p, recs[0].sigma, recs[0].m);
        assert!(!outside);
        assert!((y - recs[0].ppl).abs() < 3.0 * cv.mean_mse.sqrt() + 0.05);
        assert!(model.predict(3, 50.0, 2.0).1);
    }

    #[test]
    fn constant_targets() {
        let recs: Vec<_> = linear_records(60, 4)
            .into_iter()
            .map(|r| SurrogateRecord { ppl: 7.5, ..r })
            .collect();
        let spec = SurrogateSpec {
            epochs: 20,
            ..Default::default()
        };
        let (model, cv) = fit_surrogate(&recs, &spec, 3, &mut RngStream::new(0, 0)).unwrap();
        assert!(cv.mean_mse < 1e-6, "{cv:?}");
        assert!((model.predict(2, 0.2, 3.0).0 - 7.5).abs() < 1e-3);
        let c = SurrogateModel::constant(4.0).unwrap();
        assert_eq!(c.predict(5, 1e3, 1e-3), (4.0, false));
    }

    #[test]
    fn deterministic_report() {
        let recs = linear_records(100, 5);
        let spec = SurrogateSpec {
            epochs: 5,
            ..Default::default()
        };
        let a = fit_surrogate(&recs, &spec, 5, &mut RngStream::new(9, 0)).unwrap();
        let b = fit_surrogate(&recs, &spec, 5, &mut RngStream::new(9, 0)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }
}
