//! Small building blocks shared by the model: scaled-uniform initialization
//! and a dense layer.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Tensor with entries drawn from `U(−1/√fan_in, 1/√fan_in)`.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape and data built together")
}

/// Affine map `x · W + b` with `W: in×out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform_init(&[inputs, outputs], inputs, rng));
        let bias = store.add(format!("{name}.bias"), uniform_init(&[outputs], inputs, rng));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn num_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    /// Applies the layer to each row of `x: n×in`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    /// Applies the layer to a vector, returning a vector.
    pub fn forward_vec(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = tape.value(x).len();
        let row = tape.reshape(x, &[1, n])?;
        let y = self.forward(tape, store, row)?;
        tape.reshape(y, &[self.outputs])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = uniform_init(&[16, 4], 16, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() < 0.25));
    }

    #[test]
    fn linear_maps_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let lin = Linear::init(&mut store, "l", 3, 2, &mut rng);
        assert_eq!(lin.num_params(), 8);
        assert_eq!(store.num_scalars(), 8);
        let mut tape = Tape::new();
        let x = tape.constant_from(&[4, 3], vec![0.5; 12]).unwrap();
        let y = lin.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), &[4, 2]);
        let w = store.get(lin.weight).data();
        let b = store.get(lin.bias).data();
        let expect0 = 0.5 * (w[0] + w[2] + w[4]) + b[0];
        assert!((tape.value(y)[0] - expect0).abs() < 1e-12);
    }
}
