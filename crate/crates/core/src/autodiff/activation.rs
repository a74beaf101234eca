use super::Tensor;

/// Negative-side slope of the leaky rectifier used after every layer.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v <= 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
    y
}

/// Scales `grad` in place by the rectifier's derivative at `pre`.
pub fn leaky_relu_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, &x) in grad.data_mut().iter_mut().zip(pre.data()) {
        if x <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slopes() {
        let x = Tensor::from_vec(&[4], vec![-2.0, -0.0, 0.5, 3.0]).unwrap();
        let y = leaky_relu(&x);
        assert_eq!(y.data(), &[-0.4, 0.0, 0.5, 3.0]);
        let mut g = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        leaky_relu_backward(&x, &mut g);
        assert_eq!(g.data(), &[0.2, 0.2, 1.0, 1.0]);
    }
}
