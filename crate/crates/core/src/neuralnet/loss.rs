use crate::error::{Error, Result};
use crate::mathcore::Matrix;

/// Mean squared error over all entries and its gradient `2(pred − target)/n`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse between {:?} and {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data().len().max(1) as f64;
    let mut grad = pred.sub(target)?;
    let loss = grad.data().iter().map(|d| d * d).sum::<f64>() / n;
    grad.scale_mut(2.0 / n);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_is_zero() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (l, g) = mse_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_case() {
        let (l, g) = mse_loss(&Matrix::row_vector(&[2.0]), &Matrix::row_vector(&[0.0])).unwrap();
        assert_eq!(l, 4.0);
        assert_eq!(g.data(), &[4.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pred = Matrix::from_vec(2, 3, vec![0.3, -1.2, 2.0, 0.7, 0.1, -0.4]).unwrap();
        let target = Matrix::from_vec(2, 3, vec![1.0, 0.5, -0.5, 0.2, 0.0, 1.1]).unwrap();
        let (_, g) = mse_loss(&pred, &target).unwrap();
        let eps = 1e-6;
        for i in 0..pred.data().len() {
            let mut up = pred.clone();
            up.data_mut()[i] += eps;
            let mut dn = pred.clone();
            dn.data_mut()[i] -= eps;
            let fd = (mse_loss(&up, &target).unwrap().0 - mse_loss(&dn, &target).unwrap().0)
                / (2.0 * eps);
            let a = g.data()[i];
            assert!((fd - a).abs() / a.abs().max(1e-12) < 1e-6, "{fd} vs {a}");
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(mse_loss(&Matrix::zeros(1, 2), &Matrix::zeros(2, 1)).is_err());
    }
}
