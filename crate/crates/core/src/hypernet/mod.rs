//! Weight-sharing hyper-network holding every candidate operation, and the
//! standalone sub-networks cut out of it.

pub mod topology;
mod train;

use std::fs;
use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audiofeat::N_CEPS;
use crate::error::{Error, Result};
use crate::searchspace::{validate_or_contract, Genome, Mode, SpaceConfig, TDNN_LAYERS};
use crate::tensorcore::{checkpoint, kernels, Binder, Graph, ParamSet, Tensor, Var};
use crate::verifier::ScoreParams;

pub use topology::{registry, topology_by_name, topology_for, AutoVector, Tdnn, Topology};
pub use train::{
    evaluate_candidate, lr_at, retrain, train_hypernet, EvalSet, LossMode, PathSampler, TrainConfig, TrainState,
    Trainer,
};

pub const EMBEDDING_LAYER: &str = "tail.dense1";
pub const SECOND_TAIL_LAYER: &str = "tail.dense2";
pub const HEAD_LAYER: &str = "head";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperNetConfig {
    pub mode: Mode,
    /// Filters of the first convolution.
    pub filters: usize,
    pub n_blocks: usize,
    pub embedding_dim: usize,
    /// Width of the second tail layer.
    pub tail_width: usize,
    /// Blocks preceded by a stride-2 channel-doubling convolution; `None` means thirds.
    pub reduction_positions: Option<Vec<usize>>,
    pub path_dropout: f64,
    pub n_train_speakers: usize,
    /// Average-pool the 40×T input to this size before the stem.
    pub input_pool: Option<(usize, usize)>,
    pub stem_stride: usize,
    /// Output size of the adaptive average pool ahead of the tail.
    pub tail_pool: (usize, usize),
    pub tdnn_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for HyperNetConfig {
    fn default() -> Self {
        Self {
            mode: Mode::AutoVector,
            filters: 32,
            n_blocks: 24,
            embedding_dim: 512,
            tail_width: 512,
            reduction_positions: None,
            path_dropout: 0.1,
            n_train_speakers: 30,
            input_pool: None,
            stem_stride: 1,
            tail_pool: (1, 1),
            tdnn_widths: vec![512, 512, 512, 512, 1500],
            seed: 0,
        }
    }
}

/// Reduction positions `floor(B/3)` and `floor(2B/3)`, deduplicated.
pub fn default_reductions(n_blocks: usize) -> Vec<usize> {
    let mut r = vec![n_blocks / 3, 2 * n_blocks / 3];
    r.dedup();
    r.retain(|&p| p < n_blocks);
    r
}

impl HyperNetConfig {
    pub fn auto_vector(filters: usize, n_blocks: usize) -> Self {
        Self {
            filters,
            n_blocks,
            ..Self::default()
        }
    }

    pub fn reductions(&self) -> &[usize] {
        self.reduction_positions.as_deref().unwrap_or(&[])
    }

    /// Fills the default reduction positions and checks ranges.
    pub fn resolved(mut self) -> Result<Self> {
        if self.reduction_positions.is_none() {
            self.reduction_positions = Some(match self.mode {
                Mode::AutoVector => default_reductions(self.n_blocks),
                Mode::Tdnn => Vec::new(),
            });
        }
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.filters == 0 || self.n_blocks == 0 {
            return bad("filters and n_blocks must be at least 1".into());
        }
        if let Some(&r) = self.reductions().iter().find(|&&r| r >= self.n_blocks) {
            return bad(format!("reduction position {r} outside 0..{}", self.n_blocks));
        }
        if !(0.0..1.0).contains(&self.path_dropout) {
            return bad(format!("path_dropout {} outside [0, 1)", self.path_dropout));
        }
        if self.embedding_dim == 0 || self.tail_width == 0 || self.n_train_speakers == 0 {
            return bad("embedding_dim, tail_width and n_train_speakers must be positive".into());
        }
        if self.stem_stride == 0 || self.tail_pool.0 == 0 || self.tail_pool.1 == 0 {
            return bad("stem_stride and tail_pool must be positive".into());
        }
        if let Some((h, w)) = self.input_pool {
            if h == 0 || w == 0 || h > N_CEPS {
                return bad(format!("input_pool ({h}, {w}) invalid for {N_CEPS} coefficients"));
            }
        }
        if self.mode == Mode::Tdnn && (self.tdnn_widths.len() != TDNN_LAYERS || self.tdnn_widths.contains(&0)) {
            return bad(format!("tdnn_widths needs {TDNN_LAYERS} positive widths"));
        }
        Ok(())
    }

    pub fn space(&self) -> SpaceConfig {
        match self.mode {
            Mode::AutoVector => SpaceConfig::auto_vector(self.n_blocks),
            Mode::Tdnn => SpaceConfig::tdnn(),
        }
    }

    pub fn input_height(&self) -> usize {
        self.input_pool.map_or(N_CEPS, |p| p.0)
    }
}

/// Every weight of the search space plus the shared tail, head and score parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperNet {
    pub config: HyperNetConfig,
    pub params: ParamSet,
}

impl HyperNet {
    pub fn build(config: HyperNetConfig) -> Result<Self> {
        let config = config.resolved()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let topo = topology_for(config.mode);
        topo.build(&config, &mut rng, &mut params)?;
        let width = topo.body_width(&config);
        topology::insert_dense(&mut params, EMBEDDING_LAYER, config.embedding_dim, width, 2.0, &mut rng);
        topology::insert_dense(&mut params, SECOND_TAIL_LAYER, config.tail_width, config.embedding_dim, 2.0, &mut rng);
        topology::insert_dense(&mut params, HEAD_LAYER, config.n_train_speakers, config.tail_width, 1.0, &mut rng);
        ScoreParams::default().install(&mut params);
        Ok(Self { config, params })
    }

    pub fn topology(&self) -> &'static dyn Topology {
        topology_for(self.config.mode)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn score_params(&self) -> Result<ScoreParams> {
        ScoreParams::from_params(&self.params)
    }

    /// Average-pools `[40, T]` features to the configured input size, as `[1, H, W]`.
    pub fn prepare_input(&self, features: &Tensor) -> Result<Tensor> {
        let s = features.shape();
        if s.len() != 2 || s[0] != N_CEPS {
            return Err(Error::InvalidShape(format!("input must be [{N_CEPS}, T], got {s:?}")));
        }
        let (h, w) = self.config.input_pool.unwrap_or((s[0], s[1]));
        let shape = [1, s[0], s[1]];
        let data = if (h, w) == (s[0], s[1]) {
            features.data().to_vec()
        } else {
            kernels::adaptive_avg_pool2d_forward(&shape, features.data(), h, w)?
        };
        Tensor::new(vec![1, h, w], data)
    }

    /// Embedding of a prepared input on the graph.
    pub fn embed_var(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        genome: &Genome,
        x: Var,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let body = self
            .topology()
            .body(&self.config, &self.params, genome, g, binder, x, dropout)?;
        let w = binder.bind(g, &self.params, &format!("{EMBEDDING_LAYER}.weight"))?;
        let b = binder.bind(g, &self.params, &format!("{EMBEDDING_LAYER}.bias"))?;
        g.dense(body, w, b)
    }

    /// Speaker logits from an embedding: ReLU, second tail layer, ReLU, head.
    pub fn logits_var(&self, g: &mut Graph, binder: &mut Binder, embedding: Var) -> Result<Var> {
        let mut h = g.relu(embedding);
        for layer in [SECOND_TAIL_LAYER, HEAD_LAYER] {
            let w = binder.bind(g, &self.params, &format!("{layer}.weight"))?;
            let b = binder.bind(g, &self.params, &format!("{layer}.bias"))?;
            h = g.dense(h, w, b)?;
            if layer != HEAD_LAYER {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn check_genome(&self, genome: &Genome) -> Result<()> {
        validate_or_contract(genome, &self.config.space())
    }

    /// Embedding of raw `[40, T]` features, path dropout off.
    pub fn forward(&self, genome: &Genome, features: &Tensor) -> Result<Tensor> {
        Ok(self.embed_prepared(genome, &[self.prepare_input(features)?])?.remove(0))
    }

    /// Embeddings of prepared inputs, reusing one graph.
    pub fn embed_prepared(&self, genome: &Genome, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        self.check_genome(genome)?;
        let mut g = Graph::new();
        let mut binder = Binder::new();
        for name in self.path_params(genome) {
            if self.params.contains(&name) {
                binder.bind(&mut g, &self.params, &name)?;
            }
        }
        let mark = g.len();
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            let xv = g.constant(x.clone());
            let e = self.embed_var(&mut g, &mut binder, genome, xv, None)?;
            out.push(g.value(e).clone());
            g.truncate(mark);
        }
        Ok(out)
    }

    /// Names of every weight a standalone model for `genome` needs.
    pub fn path_params(&self, genome: &Genome) -> Vec<String> {
        let mut names = self.topology().path_params(&self.config, genome);
        for layer in [EMBEDDING_LAYER, SECOND_TAIL_LAYER, HEAD_LAYER] {
            names.push(format!("{layer}.weight"));
            names.push(format!("{layer}.bias"));
        }
        names.push(crate::verifier::SCALE_PARAM.into());
        names.push(crate::verifier::OFFSET_PARAM.into());
        names
    }

    /// Copies the genome's weights into a model that holds nothing else.
    pub fn extract_subnet(&self, genome: &Genome) -> Result<SubNet> {
        self.check_genome(genome)?;
        let params = self.params.subset(self.path_params(genome).iter().map(String::as_str))?;
        Ok(SubNet {
            genome: genome.clone(),
            net: HyperNet {
                config: self.config.clone(),
                params,
            },
        })
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&dir.join(format!("{stem}.ckpt")), &self.params)?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, serde_json::to_string_pretty(&self.config)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let config: HyperNetConfig = serde_json::from_str(&text)?;
        let params = checkpoint::load(&dir.join(format!("{stem}.ckpt")))?;
        Ok(Self {
            config: config.resolved()?,
            params,
        })
    }
}

/// A fixed architecture with only its own weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SubNet {
    pub genome: Genome,
    pub net: HyperNet,
}

impl SubNet {
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        self.net.forward(&self.genome, features)
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::searchspace::{BlockGene, OpKind};

    fn small() -> HyperNetConfig {
        HyperNetConfig {
            filters: 4,
            n_blocks: 3,
            embedding_dim: 16,
            tail_width: 8,
            n_train_speakers: 3,
            input_pool: Some((10, 12)),
            ..HyperNetConfig::default()
        }
    }

    fn feats(seed: f64) -> Tensor {
        Tensor::new(vec![40, 30], (0..1200).map(|i| ((i as f64) * 0.37 + seed).sin()).collect()).unwrap()
    }

    #[test]
    fn default_reductions_at_thirds() {
        assert_eq!(default_reductions(6), vec![2, 4]);
        assert_eq!(default_reductions(24), vec![8, 16]);
        assert_eq!(default_reductions(1), vec![0]);
    }

    #[test]
    fn forward_shape_and_determinism() {
        let h = HyperNet::build(small()).unwrap();
        let g = Genome::uniform_blocks(OpKind::Conv3x3, 3);
        let e = h.forward(&g, &feats(0.0)).unwrap();
        assert_eq!(e.shape(), &[16]);
        assert!(e.is_finite() && e.norm() > 0.0);
        assert_eq!(HyperNet::build(small()).unwrap(), h);
    }

    #[test]
    fn subnet_matches_and_is_smaller() {
        let h = HyperNet::build(small()).unwrap();
        let g = Genome::AutoVector(vec![
            BlockGene::pair(OpKind::Conv5x5, OpKind::MaxPool),
            BlockGene::single(OpKind::Identity),
            BlockGene::pair(OpKind::Conv1x1, OpKind::Identity),
        ]);
        let s = h.extract_subnet(&g).unwrap();
        assert!(s.param_count() < h.param_count());
        assert_eq!(s.forward(&feats(1.0)).unwrap(), h.forward(&g, &feats(1.0)).unwrap());
    }

    #[test]
    fn mismatched_genome_rejected() {
        let h = HyperNet::build(small()).unwrap();
        let g = Genome::uniform_blocks(OpKind::Identity, 4);
        assert!(matches!(h.forward(&g, &feats(0.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn tdnn_builds_and_embeds() {
        let cfg = HyperNetConfig {
            mode: Mode::Tdnn,
            tdnn_widths: vec![6, 6, 6, 6, 10],
            ..small()
        };
        let h = HyperNet::build(cfg).unwrap();
        let g = Genome::decode("L0:{ctx2};L1:{ctx2};L2:{ctx3};L3:{ctx0};L4:{ctx0}").unwrap();
        let x = Tensor::new(vec![40, 40], (0..1600).map(|i| (i as f64 * 0.1).cos()).collect()).unwrap();
        let h2 = HyperNet {
            config: HyperNetConfig {
                input_pool: Some((10, 40)),
                ..h.config.clone()
            },
            params: h.params.clone(),
        };
        assert_eq!(h2.forward(&g, &x).unwrap().shape(), &[16]);
    }
}
