use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Relu,
}

impl ActivationKind {
    fn apply(self, v: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            ActivationKind::Tanh => v.tanh(),
            ActivationKind::Relu => v.max(0.0),
        }
    }

    /// Derivative written in terms of input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Tanh => 1.0 - y * y,
            // subgradient 0 at the kink
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Relu => "relu",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "tanh" => Ok(ActivationKind::Tanh),
            "relu" => Ok(ActivationKind::Relu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

pub fn activation_forward(kind: ActivationKind, x: &Tensor) -> Tensor {
    x.map(|v| kind.apply(v))
}

pub fn activation_backward(kind: ActivationKind, x: &Tensor, y: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    if x.shape() != d_out.shape() || y.shape() != x.shape() {
        return Err(Error::dim("activation_backward", x.shape(), d_out.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(d_out.data())
        .map(|((&xv, &yv), &g)| g * kind.derivative(xv, yv))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_function, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pointwise_values() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(activation_forward(ActivationKind::Relu, &x).data(), &[0.0, 0.0, 2.0]);
        let z = Tensor::vector(vec![0.0]);
        assert_eq!(activation_forward(ActivationKind::Sigmoid, &z).data(), &[0.5]);
        assert_eq!(activation_forward(ActivationKind::Tanh, &z).data(), &[0.0]);
    }

    #[test]
    fn relu_kink_has_zero_gradient() {
        let x = Tensor::vector(vec![0.0]);
        let y = activation_forward(ActivationKind::Relu, &x);
        let d = activation_backward(ActivationKind::Relu, &x, &y, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(d.data(), &[0.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [ActivationKind::Sigmoid, ActivationKind::Tanh, ActivationKind::Relu] {
            for _ in 0..20 {
                let mut x = random_tensor(&[3, 4], 2.0, &mut rng);
                // keep relu probes away from the kink
                x.data_mut().iter_mut().for_each(|v| {
                    if v.abs() < 1e-3 {
                        *v = 0.5
                    }
                });
                let probe = random_tensor(&[3, 4], 1.0, &mut rng);
                let y = activation_forward(kind, &x);
                let g = activation_backward(kind, &x, &y, &probe).unwrap();
                let e = check_function(&x, &g, |t| activation_forward(kind, t).mul(&probe).unwrap().sum());
                assert!(e < 1e-6, "{kind}: {e}");
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("relu".parse::<ActivationKind>().unwrap(), ActivationKind::Relu);
        assert!("gelu".parse::<ActivationKind>().is_err());
    }
}
