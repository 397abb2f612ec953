use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{join, Module, Param, ParamGroup, Visitor};
use crate::gemm::{gemm, MatRef};
use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Fully connected layer on `N x D x 1 x 1` tensors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_features: usize,
    out_features: usize,
    input: Option<Tensor>,
}

impl Linear {
    /// Weights drawn from `N(0, std^2)`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_features: usize,
        out_features: usize,
        std: f64,
        group: ParamGroup,
    ) -> Self {
        let w = (0..in_features * out_features)
            .map(|_| math::normal(rng) * std)
            .collect();
        Self::from_weights(w, vec![0.0; out_features], in_features, out_features, group)
    }

    pub fn from_weights(
        weight: Vec<f64>,
        bias: Vec<f64>,
        in_features: usize,
        out_features: usize,
        group: ParamGroup,
    ) -> Self {
        assert_eq!(weight.len(), in_features * out_features);
        assert_eq!(bias.len(), out_features);
        Self {
            weight: Param::new(weight, group),
            bias: Param::new(bias, group),
            in_features,
            out_features,
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn forward(&mut self, x: &Tensor, record: bool) -> Result<Tensor> {
        let y = affine(
            &self.weight.value,
            &self.bias.value,
            self.in_features,
            self.out_features,
            x,
        )?;
        self.input = record.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("backward without recorded forward");
        let n = x.batch();
        let (i, o) = (self.in_features, self.out_features);
        gemm(
            1.0,
            MatRef::new(dy.data(), n, o).t(),
            MatRef::new(x.data(), n, i),
            1.0,
            &mut self.weight.grad,
        );
        for row in dy.data().chunks_exact(o) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(n, i, 1, 1);
        gemm(
            1.0,
            MatRef::new(dy.data(), n, o),
            MatRef::new(&self.weight.value, o, i),
            0.0,
            dx.data_mut(),
        );
        dx
    }
}

fn affine(weight: &[f64], bias: &[f64], inf: usize, outf: usize, x: &Tensor) -> Result<Tensor> {
    if x.sample_len() != inf {
        return Err(Error::Shape(format!(
            "linear layer expects {} features, got {}",
            inf,
            x.sample_len()
        )));
    }
    let n = x.batch();
    let mut y = Tensor::zeros(n, outf, 1, 1);
    for row in y.data_mut().chunks_exact_mut(outf) {
        row.copy_from_slice(bias);
    }
    gemm(
        1.0,
        MatRef::new(x.data(), n, inf),
        MatRef::new(weight, outf, inf).t(),
        1.0,
        y.data_mut(),
    );
    Ok(y)
}

/// Logits of the classifier head for a batch of compressed descriptors.
pub fn classify(compressed: &Tensor, head: &Linear) -> Result<Tensor> {
    affine(
        &head.weight.value,
        &head.bias.value,
        head.in_features,
        head.out_features,
        compressed,
    )
}

impl Module for Linear {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        v.param(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_gives_zero_logits() {
        let head = Linear::from_weights(vec![0.0; 12], vec![0.0; 3], 4, 3, ParamGroup::Head);
        let x = Tensor::from_rows(2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0]).unwrap();
        assert!(classify(&x, &head).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_head_on_one_hot() {
        let mut w = vec![0.0; 16];
        for i in 0..4 {
            w[i * 4 + i] = 1.0;
        }
        let head = Linear::from_weights(w, vec![0.0; 4], 4, 4, ParamGroup::Head);
        let x = Tensor::from_rows(1, 4, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let logits = classify(&x, &head).unwrap();
        let arg = logits
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(arg, 2);
    }

    #[test]
    fn matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut head = Linear::new(&mut rng, 5, 7, 1.0, ParamGroup::Head);
        head.bias.value.iter_mut().for_each(|b| *b = math::normal(&mut rng));
        let x = Tensor::from_rows(3, 5, (0..15).map(|_| math::normal(&mut rng)).collect()).unwrap();
        let logits = classify(&x, &head).unwrap();
        for n in 0..3 {
            for o in 0..7 {
                let mut s = head.bias.value[o];
                for i in 0..5 {
                    s += head.weight.value[o * 5 + i] * x.data()[n * 5 + i];
                }
                assert!((logits.data()[n * 7 + o] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let head = Linear::from_weights(vec![0.0; 6], vec![0.0; 2], 3, 2, ParamGroup::Head);
        assert!(classify(&Tensor::zeros(1, 4, 1, 1), &head).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lin = Linear::new(&mut rng, 4, 3, 0.5, ParamGroup::Head);
        let x = Tensor::from_rows(2, 4, (0..8).map(|_| math::normal(&mut rng)).collect()).unwrap();
        let probe = Tensor::from_rows(2, 3, (0..6).map(|_| math::normal(&mut rng)).collect()).unwrap();
        lin.forward(&x, true).unwrap();
        let dx = lin.backward(&probe);
        let f = |l: &mut Linear, x: &Tensor| -> f64 {
            let y = l.forward(x, false).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        for i in 0..8 {
            let mut xp = x.clone();
            xp.data_mut()[i] += 1e-6;
            let mut xm = x.clone();
            xm.data_mut()[i] -= 1e-6;
            let fd = (f(&mut lin, &xp) - f(&mut lin, &xm)) / 2e-6;
            assert!((fd - dx.data()[i]).abs() < 1e-8);
        }
        let g = lin.weight.grad.clone();
        for i in 0..12 {
            let o = lin.weight.value[i];
            lin.weight.value[i] = o + 1e-6;
            let a = f(&mut lin, &x);
            lin.weight.value[i] = o - 1e-6;
            let b = f(&mut lin, &x);
            lin.weight.value[i] = o;
            assert!(((a - b) / 2e-6 - g[i]).abs() < 1e-8);
        }
    }
}
