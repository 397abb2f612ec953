use crate::tensor::Tensor;

pub fn relu_inplace(x: &mut Tensor) {
    for v in x.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(dy: &mut Tensor, y: &Tensor) {
    for (g, &o) in dy.data_mut().iter_mut().zip(y.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}
