use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stabilised softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Linear classifier `logits = W F_v + b` with `W: classes × m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub classes: usize,
    pub m: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Gradient with respect to the aggregated feature.
    pub input: Tensor,
}

impl ClassifierHead {
    pub fn zeros(classes: usize, m: usize) -> Self {
        Self { classes, m, weight: vec![0.0; classes * m], bias: vec![0.0; classes] }
    }

    /// Uniform `±sqrt(1/m)` weights, zero bias.
    pub fn init(classes: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (1.0 / m as f64).sqrt();
        let mut h = Self::zeros(classes, m);
        for w in &mut h.weight {
            *w = rng.random_range(-bound..bound);
        }
        h
    }

    fn check(&self, fv: &Tensor) -> Result<()> {
        if fv.shape() != [self.m] {
            return Err(Error::dim(format!(
                "classifier expects a feature of length {}, got shape {:?}",
                self.m,
                fv.shape()
            )));
        }
        Ok(())
    }

    /// Returns `(logits, probabilities)`.
    pub fn classify(&self, fv: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(fv)?;
        let x = fv.data();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &self.weight[c * self.m..(c + 1) * self.m];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[c]
            })
            .collect();
        let probs = softmax(&logits);
        Ok((logits, probs))
    }

    /// Cross-entropy loss and its gradients for one labelled feature.
    pub fn loss_and_grads(&self, fv: &Tensor, label: usize) -> Result<(f64, Vec<f64>, HeadGrads)> {
        if label >= self.classes {
            return Err(Error::dim(format!("label {label} out of 0..{}", self.classes)));
        }
        let (_, probs) = self.classify(fv)?;
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
        let mut dlogits = probs.clone();
        dlogits[label] -= 1.0;
        let x = fv.data();
        let mut weight = vec![0.0; self.classes * self.m];
        let mut input = vec![0.0; self.m];
        for (c, &d) in dlogits.iter().enumerate() {
            let row = &self.weight[c * self.m..(c + 1) * self.m];
            for j in 0..self.m {
                weight[c * self.m + j] = d * x[j];
                input[j] += row[j] * d;
            }
        }
        Ok((loss, probs, HeadGrads { weight, bias: dlogits, input: Tensor::vector(input)? }))
    }

    /// `W += alpha · weight`, `b += alpha · bias`.
    pub fn axpy(&mut self, alpha: f64, weight: &[f64], bias: &[f64]) {
        for (w, g) in self.weight.iter_mut().zip(weight) {
            *w += alpha * g;
        }
        for (b, g) in self.bias.iter_mut().zip(bias) {
            *b += alpha * g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_is_uniform() {
        let h = ClassifierHead::zeros(4, 3);
        let (_, p) = h.classify(&Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap()).unwrap();
        assert!(p.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let h = ClassifierHead::init(7, 5, 3);
        let fv = Tensor::vector(vec![10.0, -4.0, 0.5, 30.0, 2.0]).unwrap();
        let (_, p) = h.classify(&fv).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(h.classify(&Tensor::vector(vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_fd() {
        let mut h = ClassifierHead::init(3, 4, 1);
        h.bias = vec![0.1, -0.2, 0.3];
        let fv = Tensor::vector(vec![0.5, -1.0, 0.25, 0.8]).unwrap();
        let label = 2;
        let (_, _, g) = h.loss_and_grads(&fv, label).unwrap();
        let loss = |h: &ClassifierHead, fv: &Tensor| h.loss_and_grads(fv, label).unwrap().0;
        let eps = 1e-6;
        for i in 0..h.weight.len() {
            let (mut p, mut m) = (h.clone(), h.clone());
            p.weight[i] += eps;
            m.weight[i] -= eps;
            let fd = (loss(&p, &fv) - loss(&m, &fv)) / (2.0 * eps);
            assert!((fd - g.weight[i]).abs() < 1e-8);
        }
        for i in 0..3 {
            let (mut p, mut m) = (h.clone(), h.clone());
            p.bias[i] += eps;
            m.bias[i] -= eps;
            let fd = (loss(&p, &fv) - loss(&m, &fv)) / (2.0 * eps);
            assert!((fd - g.bias[i]).abs() < 1e-8);
        }
        for i in 0..4 {
            let (mut p, mut m) = (fv.clone(), fv.clone());
            p.data_mut()[i] += eps;
            m.data_mut()[i] -= eps;
            let fd = (loss(&h, &p) - loss(&h, &m)) / (2.0 * eps);
            assert!((fd - g.input.data()[i]).abs() < 1e-8);
        }
    }
}
