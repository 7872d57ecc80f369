use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Mean cross-entropy over the batch together with the softmax
/// probabilities and the logit gradient `(p - y) / n`.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: f64,
    pub probs: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let n = logits.batch();
    let c = logits.item_len();
    let mut out = Tensor::zeros(logits.shape());
    for s in 0..n {
        let row: Vec<f64> = logits.item(s).iter().map(|v| v.to_f64_lossy()).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for (o, v) in out.item_mut(s).iter_mut().zip(&e) {
            *o = T::from_f64_lossy(v / z);
        }
        debug_assert_eq!(out.item(s).len(), c);
    }
    out
}

pub fn one_hot<T: Scalar>(classes: &[usize], n_classes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros([classes.len(), n_classes, 1, 1]);
    for (s, &c) in classes.iter().enumerate() {
        t.item_mut(s)[c] = T::one();
    }
    t
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<LossOutput<T>> {
    if logits.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} and targets {:?} differ",
            logits.shape(),
            targets.shape()
        )));
    }
    let n = logits.batch();
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    for s in 0..n {
        let row = targets.item(s);
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Shape(format!("target row {s} is not one-hot")));
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut probs = Tensor::zeros(logits.shape());
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for s in 0..n {
        let row: Vec<f64> = logits.item(s).iter().map(|v| v.to_f64_lossy()).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let y = targets.item(s);
        for (j, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            let yj = y[j].to_f64_lossy();
            if yj == 1.0 {
                loss += lse - z;
            }
            probs.item_mut(s)[j] = T::from_f64_lossy(p);
            grad.item_mut(s)[j] = T::from_f64_lossy((p - yj) * inv_n);
        }
    }
    Ok(LossOutput {
        loss: loss * inv_n,
        probs,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits() {
        let logits = Tensor::<f64>::matrix(3, 2, vec![0.7; 6]).unwrap();
        let out = softmax_cross_entropy(&logits, &one_hot(&[0, 0, 0], 2)).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
        for s in 0..3 {
            assert!((out.grad.item(s)[0] - (0.5 - 1.0) / 3.0).abs() < 1e-12);
            assert!((out.grad.item(s)[1] - 0.5 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_for_large_logits() {
        let logits = Tensor::<f32>::matrix(1, 2, vec![1000.0, -1000.0]).unwrap();
        let out = softmax_cross_entropy(&logits, &one_hot(&[1], 2)).unwrap();
        assert!((out.loss - 2000.0).abs() < 1e-3);
        assert!(out.probs.is_finite());
    }

    #[test]
    fn rejects_non_one_hot() {
        let logits = Tensor::<f64>::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let t = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(softmax_cross_entropy(&logits, &t).is_err());
        let t = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        assert!(softmax_cross_entropy(&logits, &t).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let logits = Tensor::matrix(4, 2, data.clone()).unwrap();
        let y = one_hot(&[0, 1, 1, 0], 2);
        let out = softmax_cross_entropy(&logits, &y).unwrap();
        let eps = 1e-6;
        for i in 0..8 {
            let mut p = data.clone();
            p[i] += eps;
            let mut m = data.clone();
            m[i] -= eps;
            let lp = softmax_cross_entropy(&Tensor::matrix(4, 2, p).unwrap(), &y)
                .unwrap()
                .loss;
            let lm = softmax_cross_entropy(&Tensor::matrix(4, 2, m).unwrap(), &y)
                .unwrap()
                .loss;
            let num = (lp - lm) / (2.0 * eps);
            let ana = out.grad.data()[i];
            assert!((num - ana).abs() / num.abs().max(ana.abs()).max(1e-6) < 1e-3);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::<f32>::matrix(2, 3, vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        let p = softmax(&logits);
        for s in 0..2 {
            assert!((p.item(s).iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
