//! Two-layer MLP blocks and parameter initialisation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::types::Real;

/// Hidden nonlinearity of a two-layer MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

/// `affine → activation → affine`, parameters `{prefix}.w1/b1/w2/b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub activation: Activation,
    /// Without it the final layer is linear and `b2` does not exist.
    pub output_bias: bool,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, activation: Activation) -> Self {
        Self {
            prefix: prefix.into(),
            activation,
            output_bias: true,
        }
    }

    pub fn without_output_bias(mut self) -> Self {
        self.output_bias = false;
        self
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.prefix)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["w1", "b1", "w2"].iter().map(|s| self.name(s)).collect();
        if self.output_bias {
            names.push(self.name("b2"));
        }
        names
    }

    /// Registers freshly initialised weights (uniform in ±[`INIT_GAIN`]/√fan_in)
    /// and zero biases.
    pub fn init<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        dims: (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Result<()> {
        let (input, hidden, output) = dims;
        store.insert(self.name("w1"), uniform(&[input, hidden], weight_bound(input), rng))?;
        store.insert(self.name("b1"), Tensor::zeros(&[hidden]))?;
        store.insert(self.name("w2"), uniform(&[hidden, output], weight_bound(hidden), rng))?;
        if self.output_bias {
            store.insert(self.name("b2"), Tensor::zeros(&[output]))?;
        }
        Ok(())
    }

    /// Applies the MLP to each row of `x: [m, in]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w1, b1) = (g.param(&self.name("w1"))?, g.param(&self.name("b1"))?);
        let w2 = g.param(&self.name("w2"))?;
        let h = g.affine(x, w1, b1)?;
        let h = match self.activation {
            Activation::Tanh => g.tanh(h),
            Activation::Identity => h,
        };
        if self.output_bias {
            let b2 = g.param(&self.name("b2"))?;
            g.affine(h, w2, b2)
        } else {
            g.matmul(h, w2)
        }
    }

    /// Applies the MLP along the channel axis of every column of `p: [C, N]`.
    pub fn forward_columns<T: Real>(&self, g: &mut Graph<'_, T>, p: Var) -> Result<Var> {
        let rows = g.transpose(p)?;
        let out = self.forward(g, rows)?;
        g.transpose(out)
    }
}

/// A refinement map applied per prototype column: either the identity or a
/// learned MLP.
#[derive(Debug, Clone, PartialEq)]
pub enum Refiner {
    Identity,
    Mlp(Mlp),
}

impl Refiner {
    pub fn apply_columns<T: Real>(&self, g: &mut Graph<'_, T>, p: Var) -> Result<Var> {
        match self {
            Refiner::Identity => Ok(p),
            Refiner::Mlp(m) => m.forward_columns(g, p),
        }
    }
}

/// Weight scale relative to `1/√fan_in`. Raw inner-product logits start
/// near zero, where the bilinear loss surface is flat; gains below about 1.7
/// stall the short default schedule and gains above about 2.7 diverge.
pub const INIT_GAIN: f64 = 2.0;

pub fn weight_bound(fan_in: usize) -> f64 {
    INIT_GAIN / (fan_in as f64).sqrt()
}

/// Seeded uniform tensor in `[-bound, bound]`.
pub fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_affine_leaves_input() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap());
        let w = g.param_leaf("w", Tensor::identity(2)).unwrap();
        let b = g.param_leaf("b", Tensor::zeros(&[2])).unwrap();
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn affine_direct_evaluation() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let w = g.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let b = g.constant(Tensor::from_f64(&[1], &[3.0]).unwrap());
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[6.0]);
    }

    #[test]
    fn zero_affine_annihilates() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(&[vec![9.0, -3.0, 1.0]]).unwrap());
        let w = g.constant(Tensor::zeros(&[3, 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.affine(x, w, b).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let w = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        assert!(g.affine(x, w, b).is_err());
    }

    #[test]
    fn mlp_columns_shape() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new("m", Activation::Tanh);
        mlp.init(&mut store, (4, 6, 4), &mut rng).unwrap();
        let mut g = Graph::with_store(&store);
        let p = g.constant(Tensor::zeros(&[4, 7]));
        let out = mlp.forward_columns(&mut g, p).unwrap();
        assert_eq!(g.shape(out), &[4, 7]);
    }
}
