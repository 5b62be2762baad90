use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{needs, val, Contribs, Op};
use crate::error::{Error, Result};
use crate::graph::{Graph, Node, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::of(a)
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.check(x)?;
        if let Activation::LeakyRelu(a) = kind {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::invalid("activation", "leaky_relu slope must lie in (0, 1)"));
            }
        }
        let t = self.value(x);
        let data = t.data().iter().map(|v| kind.apply(*v)).collect();
        let shape = t.shape();
        Ok(self.push_op(data, shape, Op::Act(x, kind)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu(alpha))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }
}

pub(super) fn backward<T: Scalar>(
    x: Var,
    kind: Activation,
    out: &Tensor<T>,
    gout: &[T],
    nodes: &[Node<T>],
) -> Contribs<T> {
    if !needs(nodes, x) {
        return Vec::new();
    }
    let input = val(nodes, x).data();
    let g: Vec<T> = match kind {
        // subgradient 0 at the kink
        Activation::Relu => gout
            .iter()
            .zip(input)
            .map(|(g, v)| if *v > T::zero() { *g } else { T::zero() })
            .collect(),
        Activation::LeakyRelu(a) => {
            let a = T::of(a);
            gout.iter()
                .zip(input)
                .map(|(g, v)| if *v > T::zero() { *g } else { *g * a })
                .collect()
        }
        Activation::Sigmoid => gout
            .iter()
            .zip(out.data())
            .map(|(g, y)| *g * *y * (T::one() - *y))
            .collect(),
    };
    alloc::vec![(x, g)]
}
