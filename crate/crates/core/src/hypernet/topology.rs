//! Network bodies selectable by search mode.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hypernet::HyperNetConfig;
use crate::searchspace::{ContextWindow, Genome, Mode, OpKind};
use crate::tensorcore::{Binder, Graph, ParamSet, Tensor, Var};

/// Kernel of the shape-preserving max-pool op inside choice blocks.
pub const MAXPOOL_K: usize = 3;
pub const STEM_K: usize = 3;

/// A body that maps a prepared input to the utterance-level vector fed to the tail.
pub trait Topology: Send + Sync {
    fn name(&self) -> &'static str;
    fn mode(&self) -> Mode;

    /// Allocates every weight the body can ever use.
    fn build(&self, cfg: &HyperNetConfig, rng: &mut dyn RngCore, params: &mut ParamSet) -> Result<()>;

    /// Names of the body weights the genome touches, in a stable order.
    fn path_params(&self, cfg: &HyperNetConfig, genome: &Genome) -> Vec<String>;

    /// Width of the vector returned by `body`.
    fn body_width(&self, cfg: &HyperNetConfig) -> usize;

    #[allow(clippy::too_many_arguments)]
    fn body(
        &self,
        cfg: &HyperNetConfig,
        params: &ParamSet,
        genome: &Genome,
        g: &mut Graph,
        binder: &mut Binder,
        x: Var,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var>;
}

pub(crate) fn kaiming(shape: &[usize], fan_in: usize, gain: f64, rng: &mut dyn RngCore) -> Tensor {
    let std = (gain / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub(crate) fn insert_conv(params: &mut ParamSet, prefix: &str, c_out: usize, c_in: usize, k: usize, rng: &mut dyn RngCore) {
    params.insert(format!("{prefix}.weight"), kaiming(&[c_out, c_in, k, k], c_in * k * k, 2.0, rng));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
}

pub(crate) fn insert_dense(params: &mut ParamSet, prefix: &str, d_out: usize, d_in: usize, gain: f64, rng: &mut dyn RngCore) {
    params.insert(format!("{prefix}.weight"), kaiming(&[d_out, d_in], d_in, gain, rng));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(&[d_out]));
}

fn bind_pair(g: &mut Graph, binder: &mut Binder, params: &ParamSet, prefix: &str) -> Result<(Var, Var)> {
    Ok((
        binder.bind(g, params, &format!("{prefix}.weight"))?,
        binder.bind(g, params, &format!("{prefix}.bias"))?,
    ))
}

/// Per-op survival multipliers for one block; `None` marks a dropped op.
///
/// Only two-op blocks are subject to dropout, and at least one op always survives.
fn block_scales(n_ops: usize, p: f64, rng: &mut Option<&mut dyn RngCore>) -> Vec<Option<f64>> {
    match rng {
        Some(rng) if n_ops == 2 && p > 0.0 => loop {
            let keep: Vec<bool> = (0..2).map(|_| !rng.random_bool(p)).collect();
            if keep.iter().any(|&k| k) {
                break keep.into_iter().map(|k| k.then_some(1.0 / (1.0 - p))).collect();
            }
        },
        _ => vec![Some(1.0); n_ops],
    }
}

/// Stem convolution, choice blocks with stride-2 reductions, adaptive average pool.
pub struct AutoVector;

impl AutoVector {
    /// Channel count at the input of block `i`.
    pub fn channels_at(cfg: &HyperNetConfig, block: usize) -> usize {
        let doublings = cfg.reductions().iter().filter(|&&r| r <= block).count();
        cfg.filters << doublings
    }

    fn final_channels(cfg: &HyperNetConfig) -> usize {
        cfg.filters << cfg.reductions().len()
    }

    fn op_prefix(block: usize, op: OpKind) -> String {
        format!("block{block}.{}", op.name())
    }
}

impl Topology for AutoVector {
    fn name(&self) -> &'static str {
        "autovector"
    }

    fn mode(&self) -> Mode {
        Mode::AutoVector
    }

    fn build(&self, cfg: &HyperNetConfig, rng: &mut dyn RngCore, params: &mut ParamSet) -> Result<()> {
        insert_conv(params, "stem", cfg.filters, 1, STEM_K, rng);
        for i in 0..cfg.n_blocks {
            let c = Self::channels_at(cfg, i);
            if cfg.reductions().contains(&i) {
                insert_conv(params, &format!("reduce{i}"), c, c / 2, 3, rng);
            }
            for op in OpKind::ALL {
                if let Some(k) = op.kernel() {
                    insert_conv(params, &Self::op_prefix(i, op), c, c, k, rng);
                }
            }
        }
        Ok(())
    }

    fn path_params(&self, cfg: &HyperNetConfig, genome: &Genome) -> Vec<String> {
        let mut names = vec!["stem.weight".to_string(), "stem.bias".to_string()];
        let blocks = genome.blocks().unwrap_or(&[]);
        for (i, b) in blocks.iter().enumerate() {
            if cfg.reductions().contains(&i) {
                names.push(format!("reduce{i}.weight"));
                names.push(format!("reduce{i}.bias"));
            }
            for &op in b.ops() {
                if op.kernel().is_some() {
                    let p = Self::op_prefix(i, op);
                    names.push(format!("{p}.weight"));
                    names.push(format!("{p}.bias"));
                }
            }
        }
        names
    }

    fn body_width(&self, cfg: &HyperNetConfig) -> usize {
        Self::final_channels(cfg) * cfg.tail_pool.0 * cfg.tail_pool.1
    }

    fn body(
        &self,
        cfg: &HyperNetConfig,
        params: &ParamSet,
        genome: &Genome,
        g: &mut Graph,
        binder: &mut Binder,
        x: Var,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let blocks = genome
            .blocks()
            .ok_or_else(|| Error::Contract("autovector body needs a choice-block genome".into()))?;
        let (w, b) = bind_pair(g, binder, params, "stem")?;
        let stem = g.conv2d(x, w, b, cfg.stem_stride, STEM_K / 2)?;
        let mut h = g.relu(stem);
        for (i, gene) in blocks.iter().enumerate() {
            if cfg.reductions().contains(&i) {
                let (w, b) = bind_pair(g, binder, params, &format!("reduce{i}"))?;
                let r = g.conv2d(h, w, b, 2, 1)?;
                h = g.relu(r);
            }
            let scales = block_scales(gene.ops().len(), cfg.path_dropout, &mut dropout);
            let mut outs = Vec::with_capacity(2);
            for (&op, scale) in gene.ops().iter().zip(scales) {
                let Some(scale) = scale else { continue };
                let y = match op.kernel() {
                    Some(k) => {
                        let (w, b) = bind_pair(g, binder, params, &Self::op_prefix(i, op))?;
                        let c = g.conv2d(h, w, b, 1, k / 2)?;
                        g.relu(c)
                    }
                    None if op == OpKind::MaxPool => g.max_pool2d(h, MAXPOOL_K, 1, MAXPOOL_K / 2)?,
                    None => h,
                };
                outs.push(if scale == 1.0 { y } else { g.affine(y, scale, 0.0) });
            }
            h = outs[0];
            for &o in &outs[1..] {
                h = g.add(h, o)?;
            }
        }
        let (ph, pw) = cfg.tail_pool;
        let pooled = g.adaptive_avg_pool2d(h, ph, pw)?;
        let width = self.body_width(cfg);
        g.reshape(pooled, vec![width])
    }
}

/// Five time-delay layers with searchable context windows, then statistics pooling.
pub struct Tdnn;

impl Tdnn {
    fn prefix(layer: usize, w: ContextWindow) -> String {
        format!("layer{layer}.ctx{}", w.half_width())
    }

    fn in_width(cfg: &HyperNetConfig, layer: usize) -> usize {
        if layer == 0 {
            cfg.input_height()
        } else {
            cfg.tdnn_widths[layer - 1]
        }
    }
}

impl Topology for Tdnn {
    fn name(&self) -> &'static str {
        "tdnn"
    }

    fn mode(&self) -> Mode {
        Mode::Tdnn
    }

    fn build(&self, cfg: &HyperNetConfig, rng: &mut dyn RngCore, params: &mut ParamSet) -> Result<()> {
        for layer in 0..cfg.tdnn_widths.len() {
            let d_in = Self::in_width(cfg, layer);
            for d in 0..ContextWindow::N_CHOICES as u8 {
                let w = ContextWindow::new(d)?;
                let span = w.offsets(layer == 0).len();
                insert_dense(params, &Self::prefix(layer, w), cfg.tdnn_widths[layer], d_in * span, 2.0, rng);
            }
        }
        Ok(())
    }

    fn path_params(&self, _cfg: &HyperNetConfig, genome: &Genome) -> Vec<String> {
        let windows = genome.windows().unwrap_or(&[]);
        windows
            .iter()
            .enumerate()
            .flat_map(|(i, &w)| {
                let p = Self::prefix(i, w);
                [format!("{p}.weight"), format!("{p}.bias")]
            })
            .collect()
    }

    fn body_width(&self, cfg: &HyperNetConfig) -> usize {
        2 * cfg.tdnn_widths[cfg.tdnn_widths.len() - 1]
    }

    fn body(
        &self,
        _cfg: &HyperNetConfig,
        params: &ParamSet,
        genome: &Genome,
        g: &mut Graph,
        binder: &mut Binder,
        x: Var,
        _dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let windows = genome
            .windows()
            .ok_or_else(|| Error::Contract("tdnn body needs a context-window genome".into()))?;
        let shape = g.value(x).shape().to_vec();
        let mut h = g.reshape(x, vec![shape[1], shape[2]])?;
        for (i, &w) in windows.iter().enumerate() {
            let (wt, b) = bind_pair(g, binder, params, &Self::prefix(i, w))?;
            let y = g.splice_dense(h, wt, b, &w.offsets(i == 0))?;
            h = g.relu(y);
        }
        g.stats_pool(h)
    }
}

/// Topologies registered by name.
pub fn registry() -> &'static [&'static dyn Topology] {
    &[&AutoVector, &Tdnn]
}

pub fn topology_for(mode: Mode) -> &'static dyn Topology {
    *registry()
        .iter()
        .find(|t| t.mode() == mode)
        .expect("every mode has a topology")
}

pub fn topology_by_name(name: &str) -> Result<&'static dyn Topology> {
    registry()
        .iter()
        .copied()
        .find(|t| t.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown topology `{name}`")))
}
