#![allow(dead_code)]

use fsb_core::reference::tape_gradient_error;
use fsb_core::{ModelConfig, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, uniform(rng, n, 1.0)).unwrap()
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig::tiny()
}

/// Worst relative error of tape gradients against finite differences over
/// every coordinate of every input.
pub fn grad_check(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    tape_gradient_error(inputs, None, build).unwrap()
}

/// Reduces any tensor to a scalar through a fixed random projection so that
/// every output element carries a distinct weight.
pub fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let r = tensor(&mut rng(seed), &shape);
    let r = tape.leaf(r);
    let p = tape.mul(y, r).unwrap();
    tape.sum(p).unwrap()
}
