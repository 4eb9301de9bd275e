//! Finite-difference cases for every differentiable operation.

use evonas::tensorcore::{Graph, Tensor, Var};
use evonas::verifier::{ge2e_loss_var, scaled_similarity_var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{distinct_values, rand_tensor, Case};

pub fn conv2d_case(r: &mut ChaCha8Rng) -> Case {
    let stride = r.random_range(1..=2);
    let k = [1, 3, 5][r.random_range(0..3)];
    let padding = r.random_range(0..=k / 2);
    let x = rand_tensor(r, &[2, 6, 7]);
    let w = rand_tensor(r, &[3, 2, k, k]);
    let b = rand_tensor(r, &[3]);
    Case::new(vec![x, w, b], move |g: &mut Graph, v: &[Var]| g.conv2d(v[0], v[1], v[2], stride, padding).unwrap())
}

pub fn max_pool2d_case(r: &mut ChaCha8Rng) -> Case {
    let x = distinct_values(r, &[2, 5, 6]);
    let stride = r.random_range(1..=2);
    Case::new(vec![x], move |g: &mut Graph, v: &[Var]| g.max_pool2d(v[0], 3, stride, 1).unwrap())
}

pub fn adaptive_avg_pool2d_case(r: &mut ChaCha8Rng) -> Case {
    let (oh, ow) = (r.random_range(1..=5), r.random_range(1..=6));
    let x = rand_tensor(r, &[2, 5, 6]);
    Case::new(vec![x], move |g: &mut Graph, v: &[Var]| g.adaptive_avg_pool2d(v[0], oh, ow).unwrap())
}

pub fn dense_case(r: &mut ChaCha8Rng) -> Case {
    let x = rand_tensor(r, &[4]);
    let w = rand_tensor(r, &[3, 4]);
    let b = rand_tensor(r, &[3]);
    Case::new(vec![x, w, b], |g: &mut Graph, v: &[Var]| g.dense(v[0], v[1], v[2]).unwrap())
}

pub fn stats_pool_case(r: &mut ChaCha8Rng) -> Case {
    let x = rand_tensor(r, &[5, 7]);
    Case::new(vec![x], |g: &mut Graph, v: &[Var]| g.stats_pool(v[0]).unwrap())
}

pub fn sigmoid_case(r: &mut ChaCha8Rng) -> Case {
    let x = rand_tensor(r, &[6]);
    Case::new(vec![x], |g: &mut Graph, v: &[Var]| g.sigmoid(v[0]))
}

pub fn relu_case(r: &mut ChaCha8Rng) -> Case {
    // Keep inputs away from the kink.
    let x = distinct_values(r, &[8]);
    Case::new(vec![x], |g: &mut Graph, v: &[Var]| g.relu(v[0]))
}

pub fn splice_dense_case(r: &mut ChaCha8Rng) -> Case {
    let d = r.random_range(1..=3) as isize;
    let offsets: Vec<isize> = vec![-d, 0, d];
    let x = rand_tensor(r, &[3, 9]);
    let w = rand_tensor(r, &[2, 9]);
    let b = rand_tensor(r, &[2]);
    Case::new(vec![x, w, b], move |g: &mut Graph, v: &[Var]| g.splice_dense(v[0], v[1], v[2], &offsets).unwrap())
}

pub fn scaled_similarity_case(r: &mut ChaCha8Rng) -> Case {
    let a = rand_tensor(r, &[6]);
    let p = rand_tensor(r, &[6]);
    let w = Tensor::scalar(r.random_range(0.5..3.0));
    let b = Tensor::scalar(r.random_range(-1.0..1.0));
    Case::new(vec![a, p, w, b], |g: &mut Graph, v: &[Var]| {
        scaled_similarity_var(g, v[0], v[1], v[2], v[3]).unwrap()
    })
}

pub fn ge2e_style_loss_case(r: &mut ChaCha8Rng) -> Case {
    let (n, m) = (3, 3);
    let mut inputs: Vec<Tensor> = (0..n * m).map(|_| rand_tensor(r, &[4])).collect();
    inputs.push(Tensor::scalar(r.random_range(1.0..3.0)));
    inputs.push(Tensor::scalar(r.random_range(-1.0..1.0)));
    Case::new(inputs, move |g: &mut Graph, v: &[Var]| {
        let emb: Vec<Vec<Var>> = (0..n).map(|j| v[j * m..(j + 1) * m].to_vec()).collect();
        ge2e_loss_var(g, &emb, v[n * m], v[n * m + 1]).unwrap()
    })
}

pub fn softmax_xent_case(r: &mut ChaCha8Rng) -> Case {
    let logits = rand_tensor(r, &[5]);
    let label = r.random_range(0..5);
    Case::new(vec![logits], move |g: &mut Graph, v: &[Var]| g.softmax_xent(v[0], label).unwrap())
}

pub fn conv_relu_pool_dense_case(r: &mut ChaCha8Rng) -> Case {
    let x = rand_tensor(r, &[1, 6, 8]);
    let w1 = rand_tensor(r, &[2, 1, 3, 3]);
    let b1 = rand_tensor(r, &[2]);
    let w2 = rand_tensor(r, &[3, 4]);
    let b2 = rand_tensor(r, &[3]);
    Case::new(vec![x, w1, b1, w2, b2], |g: &mut Graph, v: &[Var]| {
        let c = g.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
        let a = g.sigmoid(c);
        let p = g.adaptive_avg_pool2d(a, 2, 1).unwrap();
        let f = g.reshape(p, vec![4]).unwrap();
        g.dense(f, v[3], v[4]).unwrap()
    })
}

/// Builds one randomized gradient case.
pub type CaseFn = fn(&mut ChaCha8Rng) -> Case;

/// Every operation under test, by name.
pub const SUITE: &[(&str, CaseFn)] = &[
    ("conv2d", conv2d_case),
    ("max_pool2d", max_pool2d_case),
    ("adaptive_avg_pool2d", adaptive_avg_pool2d_case),
    ("dense", dense_case),
    ("stats_pool", stats_pool_case),
    ("sigmoid", sigmoid_case),
    ("relu", relu_case),
    ("splice_dense", splice_dense_case),
    ("scaled_similarity", scaled_similarity_case),
    ("ge2e_style_loss", ge2e_style_loss_case),
    ("softmax_xent", softmax_xent_case),
    ("conv-relu-pool-dense", conv_relu_pool_dense_case),
];
