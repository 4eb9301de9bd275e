//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod cases;

use evonas::tensorcore::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(r: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Distinct values 0.1 apart, none within 0.05 of zero, in random order.
pub fn distinct_values(r: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|k| (k as f64 - n as f64 / 2.0 + 0.5) * 0.1).collect();
    v.shuffle(r);
    Tensor::new(shape.to_vec(), v).unwrap()
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

pub struct Case {
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

impl Case {
    pub fn new(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var + 'static) -> Self {
        Self {
            inputs,
            build: Box::new(build),
        }
    }
}

fn projection(n: usize) -> Vec<f64> {
    (0..n).map(|i| (1.3 * i as f64 + 0.7).sin() + 0.25).collect()
}

fn projected(case: &Case, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (case.build)(&mut g, &vars);
    let d = g.value(out).data();
    d.iter().zip(projection(d.len())).map(|(a, b)| a * b).sum()
}

/// Norm-wise relative error between the analytic gradient of `<r, f(x)>` and central differences.
pub fn check_gradients(case: &Case) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.leaf(&t.clone().with_grad())).collect();
    let out = (case.build)(&mut g, &vars);
    let n = g.value(out).numel();
    let flat = g.reshape(out, vec![n]).unwrap();
    let w = g.constant(Tensor::new(vec![1, n], projection(n)).unwrap());
    let b = g.constant(Tensor::zeros(&[1]));
    let loss = g.dense(flat, w, b).unwrap();
    let grads = g.backward(loss).unwrap();

    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).unwrap().to_vec();
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (projected(case, &plus) - projected(case, &minus)) / (2.0 * FD_STEP);
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-8)
}

/// Random cases checked per operation.
pub const GRAD_CASES: u64 = 100;

/// Largest relative gradient error of `make` over seeds `0..GRAD_CASES`.
pub fn worst_gradient_error(make: fn(&mut ChaCha8Rng) -> Case) -> f64 {
    (0..GRAD_CASES).map(|seed| check_gradients(&make(&mut rng(seed)))).fold(0.0, f64::max)
}
