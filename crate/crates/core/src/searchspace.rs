//! Architecture genomes: choice-block operation sets or TDNN context windows.
//!
//! Both modes are viewed as a sequence of loci, each holding one allele index.
//! Mutation and local search work on that view and never look at the mode.

use std::fmt;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Conv1x1,
    Conv3x3,
    Conv5x5,
    Conv7x7,
    Identity,
    MaxPool,
}

/// Number of candidate operations per choice block.
pub const N_OP: usize = 6;

impl OpKind {
    /// Sorted by name, which is also the canonical in-block order.
    pub const ALL: [OpKind; N_OP] = [
        OpKind::Conv1x1,
        OpKind::Conv3x3,
        OpKind::Conv5x5,
        OpKind::Conv7x7,
        OpKind::Identity,
        OpKind::MaxPool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv1x1 => "conv1x1",
            OpKind::Conv3x3 => "conv3x3",
            OpKind::Conv5x5 => "conv5x5",
            OpKind::Conv7x7 => "conv7x7",
            OpKind::Identity => "identity",
            OpKind::MaxPool => "maxpool",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s)
    }

    /// Kernel side for convolutions, `None` otherwise.
    pub fn kernel(self) -> Option<usize> {
        match self {
            OpKind::Conv1x1 => Some(1),
            OpKind::Conv3x3 => Some(3),
            OpKind::Conv5x5 => Some(5),
            OpKind::Conv7x7 => Some(7),
            OpKind::Identity | OpKind::MaxPool => None,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The operations applied in one choice block, kept sorted.
///
/// Construction does not reject duplicates or bad sizes; `validate` reports them.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockGene {
    ops: Vec<OpKind>,
}

impl BlockGene {
    pub fn new(ops: impl IntoIterator<Item = OpKind>) -> Self {
        let mut ops: Vec<OpKind> = ops.into_iter().collect();
        ops.sort();
        Self { ops }
    }

    pub fn single(op: OpKind) -> Self {
        Self { ops: vec![op] }
    }

    pub fn pair(a: OpKind, b: OpKind) -> Self {
        Self::new([a, b])
    }

    pub fn ops(&self) -> &[OpKind] {
        &self.ops
    }

    pub fn contains(&self, op: OpKind) -> bool {
        self.ops.contains(&op)
    }

    fn problem(&self) -> Option<&'static str> {
        match self.ops.len() {
            1 => None,
            2 if self.ops[0] == self.ops[1] => Some("non-distinct ops"),
            2 => None,
            _ => Some("needs 1 or 2 ops"),
        }
    }
}

/// Every valid block gene over `ops`: singles first, then pairs, each in canonical order.
pub fn enumerate_block_genes(ops: &[OpKind]) -> Vec<BlockGene> {
    let mut out: Vec<BlockGene> = ops.iter().map(|&o| BlockGene::single(o)).collect();
    for (i, &a) in ops.iter().enumerate() {
        for &b in &ops[i + 1..] {
            out.push(BlockGene::pair(a, b));
        }
    }
    out
}

pub fn combos_per_block(n_op: usize) -> usize {
    n_op + n_op * n_op.saturating_sub(1) / 2
}

pub fn space_size(n_blocks: usize, n_op: usize) -> BigUint {
    BigUint::from(combos_per_block(n_op)).pow(n_blocks as u32)
}

/// Half-width `d` of a TDNN splice; `d = 0` splices only the current frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContextWindow(u8);

impl ContextWindow {
    pub const MAX_HALF_WIDTH: u8 = 3;
    pub const N_CHOICES: usize = Self::MAX_HALF_WIDTH as usize + 1;

    pub fn new(half_width: u8) -> Result<Self> {
        if half_width > Self::MAX_HALF_WIDTH {
            return Err(Error::Contract(format!(
                "context half-width {half_width} exceeds {}",
                Self::MAX_HALF_WIDTH
            )));
        }
        Ok(Self(half_width))
    }

    pub fn half_width(self) -> usize {
        self.0 as usize
    }

    /// Splice offsets: every offset in `-d..=d` for the first layer, `{-d, 0, d}` afterwards.
    pub fn offsets(self, first_layer: bool) -> Vec<isize> {
        let d = self.0 as isize;
        if d == 0 {
            vec![0]
        } else if first_layer {
            (-d..=d).collect()
        } else {
            vec![-d, 0, d]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    AutoVector,
    Tdnn,
}

impl Mode {
    pub fn n_alleles(self) -> usize {
        match self {
            Mode::AutoVector => combos_per_block(N_OP),
            Mode::Tdnn => ContextWindow::N_CHOICES,
        }
    }
}

/// Frame-level layer count of the TDNN topology.
pub const TDNN_LAYERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub mode: Mode,
    /// Choice blocks in AutoVector mode; ignored for TDNN, which always has five layers.
    pub n_blocks: usize,
}

impl SpaceConfig {
    pub fn auto_vector(n_blocks: usize) -> Self {
        Self {
            mode: Mode::AutoVector,
            n_blocks,
        }
    }

    pub fn tdnn() -> Self {
        Self {
            mode: Mode::Tdnn,
            n_blocks: TDNN_LAYERS,
        }
    }

    pub fn n_loci(&self) -> usize {
        match self.mode {
            Mode::AutoVector => self.n_blocks,
            Mode::Tdnn => TDNN_LAYERS,
        }
    }

    pub fn size(&self) -> BigUint {
        BigUint::from(self.mode.n_alleles()).pow(self.n_loci() as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Genome {
    AutoVector(Vec<BlockGene>),
    Tdnn(Vec<ContextWindow>),
}

fn block_table() -> &'static [BlockGene] {
    static TABLE: std::sync::OnceLock<Vec<BlockGene>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| enumerate_block_genes(&OpKind::ALL))
}

impl Genome {
    pub fn mode(&self) -> Mode {
        match self {
            Genome::AutoVector(_) => Mode::AutoVector,
            Genome::Tdnn(_) => Mode::Tdnn,
        }
    }

    pub fn n_loci(&self) -> usize {
        match self {
            Genome::AutoVector(b) => b.len(),
            Genome::Tdnn(w) => w.len(),
        }
    }

    /// Every block running the same single op.
    pub fn uniform_blocks(op: OpKind, n_blocks: usize) -> Self {
        Genome::AutoVector(vec![BlockGene::single(op); n_blocks])
    }

    pub fn blocks(&self) -> Option<&[BlockGene]> {
        match self {
            Genome::AutoVector(b) => Some(b),
            Genome::Tdnn(_) => None,
        }
    }

    pub fn windows(&self) -> Option<&[ContextWindow]> {
        match self {
            Genome::Tdnn(w) => Some(w),
            Genome::AutoVector(_) => None,
        }
    }

    /// Allele index at `locus`, in `0..mode.n_alleles()`; `None` for an invalid gene.
    pub fn allele(&self, locus: usize) -> Option<usize> {
        match self {
            Genome::AutoVector(b) => block_table().iter().position(|g| *g == b[locus]),
            Genome::Tdnn(w) => Some(w[locus].half_width()),
        }
    }

    pub fn with_allele(&self, locus: usize, allele: usize) -> Genome {
        let mut g = self.clone();
        match &mut g {
            Genome::AutoVector(b) => b[locus] = block_table()[allele].clone(),
            Genome::Tdnn(w) => w[locus] = ContextWindow(allele as u8),
        }
        g
    }

    pub fn from_alleles(mode: Mode, alleles: &[usize]) -> Genome {
        match mode {
            Mode::AutoVector => Genome::AutoVector(alleles.iter().map(|&a| block_table()[a].clone()).collect()),
            Mode::Tdnn => Genome::Tdnn(alleles.iter().map(|&a| ContextWindow(a as u8)).collect()),
        }
    }

    pub fn encode(&self) -> String {
        self.to_string()
    }

    pub fn decode(s: &str) -> Result<Genome> {
        Parser { s, pos: 0 }.genome()
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Genome::AutoVector(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    if i > 0 {
                        f.write_str(";")?;
                    }
                    let names: Vec<&str> = b.ops.iter().map(|o| o.name()).collect();
                    write!(f, "B{i}:{{{}}}", names.join(","))?;
                }
            }
            Genome::Tdnn(windows) => {
                for (i, w) in windows.iter().enumerate() {
                    if i > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "L{i}:{{ctx{}}}", w.0)?;
                }
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for Genome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Genome::decode(s)
    }
}

impl Serialize for Genome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for Genome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Genome::decode(&s).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    s: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            position: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.s[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            self.fail(format!("expected `{c}`"))
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &str {
        let start = self.pos;
        while let Some(c) = self.peek().filter(|&c| f(c)) {
            self.pos += c.len_utf8();
        }
        &self.s[start..self.pos]
    }

    fn genome(mut self) -> Result<Genome> {
        let tag = match self.peek() {
            Some(c @ ('B' | 'L')) => c,
            _ => return self.fail("expected `B` or `L` segment"),
        };
        let mut blocks = Vec::new();
        let mut windows = Vec::new();
        loop {
            let start = self.pos;
            self.expect(tag)?;
            let idx = self.take_while(|c| c.is_ascii_digit()).to_string();
            let expected = blocks.len() + windows.len();
            if idx.parse::<usize>().ok() != Some(expected) || (idx.len() > 1 && idx.starts_with('0')) {
                self.pos = start;
                return self.fail(format!("expected index {tag}{expected}"));
            }
            self.expect(':')?;
            self.expect('{')?;
            if tag == 'B' {
                let mut ops = Vec::new();
                loop {
                    let at = self.pos;
                    let name = self.take_while(|c| c.is_ascii_alphanumeric());
                    match OpKind::from_name(name) {
                        Some(op) => ops.push(op),
                        None => {
                            let msg = format!("unknown op `{name}`");
                            self.pos = at;
                            return self.fail(msg);
                        }
                    }
                    if self.peek() == Some(',') {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                blocks.push(BlockGene::new(ops));
            } else {
                let at = self.pos;
                let tok = self.take_while(|c| c.is_ascii_alphanumeric());
                let w = tok
                    .strip_prefix("ctx")
                    .and_then(|d| d.parse::<u8>().ok())
                    .and_then(|d| ContextWindow::new(d).ok());
                match w {
                    Some(w) => windows.push(w),
                    None => {
                        let msg = format!("bad context window `{tok}`");
                        self.pos = at;
                        return self.fail(msg);
                    }
                }
            }
            self.expect('}')?;
            match self.peek() {
                None => break,
                Some(';') => self.pos += 1,
                Some(_) => return self.fail("expected `;` or end of input"),
            }
        }
        Ok(if tag == 'B' {
            Genome::AutoVector(blocks)
        } else {
            Genome::Tdnn(windows)
        })
    }
}

/// All problems with `g` under `cfg`; empty means valid.
pub fn validate(g: &Genome, cfg: &SpaceConfig) -> std::result::Result<(), Vec<String>> {
    let mut v = Vec::new();
    if g.mode() != cfg.mode {
        v.push(format!("mode mismatch: expected {:?}, got {:?}", cfg.mode, g.mode()));
    }
    if g.n_loci() != cfg.n_loci() {
        v.push(format!(
            "wrong length: expected {} loci, got {}",
            cfg.n_loci(),
            g.n_loci()
        ));
    }
    if let Genome::AutoVector(blocks) = g {
        for (i, b) in blocks.iter().enumerate() {
            if let Some(p) = b.problem() {
                v.push(format!("{p} at block {i}"));
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

pub fn validate_or_contract(g: &Genome, cfg: &SpaceConfig) -> Result<()> {
    validate(g, cfg).map_err(|v| Error::Contract(format!("invalid genome {g}: {}", v.join("; "))))
}

/// Each locus drawn uniformly over its alleles (all 21 block combinations equally likely).
pub fn uniform_sample<R: Rng + ?Sized>(cfg: &SpaceConfig, rng: &mut R) -> Genome {
    let n = cfg.mode.n_alleles();
    let alleles: Vec<usize> = (0..cfg.n_loci()).map(|_| rng.random_range(0..n)).collect();
    Genome::from_alleles(cfg.mode, &alleles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn combination_counts() {
        assert_eq!(combos_per_block(6), 21);
        assert_eq!(combos_per_block(1), 1);
        assert_eq!(combos_per_block(4), 10);
        assert_eq!(enumerate_block_genes(&OpKind::ALL).len(), 21);
        assert_eq!(space_size(2, 6), BigUint::from(441u32));
    }

    #[test]
    fn canonical_text() {
        let g = Genome::AutoVector(vec![
            BlockGene::single(OpKind::Conv3x3),
            BlockGene::new([OpKind::MaxPool, OpKind::Identity]),
        ]);
        assert_eq!(g.encode(), "B0:{conv3x3};B1:{identity,maxpool}");
        assert_eq!(Genome::decode(&g.encode()).unwrap(), g);
        let t = Genome::Tdnn([2, 2, 3, 0, 0].map(|d| ContextWindow::new(d).unwrap()).to_vec());
        assert_eq!(t.encode(), "L0:{ctx2};L1:{ctx2};L2:{ctx3};L3:{ctx0};L4:{ctx0}");
        assert_eq!(Genome::decode(&t.encode()).unwrap(), t);
    }

    #[test]
    fn parse_errors_carry_position() {
        let cases = [
            ("B0:{conv3x3};B2:{identity}", 13),
            ("B0:{conv4x4}", 4),
            ("B0:{conv3x3", 11),
            ("", 0),
            ("L0:{ctx9}", 4),
        ];
        for (s, at) in cases {
            match Genome::decode(s) {
                Err(Error::Parse { position, .. }) => assert_eq!(position, at, "{s}"),
                other => panic!("{s}: {other:?}"),
            }
        }
    }

    #[test]
    fn validation_reports() {
        let cfg = SpaceConfig::auto_vector(2);
        let dup = Genome::AutoVector(vec![
            BlockGene::single(OpKind::Identity),
            BlockGene::new([OpKind::Conv1x1, OpKind::Conv1x1]),
        ]);
        assert_eq!(validate(&dup, &cfg).unwrap_err(), vec!["non-distinct ops at block 1"]);
        let short = Genome::uniform_blocks(OpKind::Identity, 1);
        assert!(validate(&short, &cfg).unwrap_err()[0].contains("expected 2 loci, got 1"));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(validate(&uniform_sample(&cfg, &mut rng), &cfg).is_ok());
    }

    #[test]
    fn alleles_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cfg in [SpaceConfig::auto_vector(7), SpaceConfig::tdnn()] {
            let g = uniform_sample(&cfg, &mut rng);
            let a: Vec<usize> = (0..g.n_loci()).map(|i| g.allele(i).unwrap()).collect();
            assert_eq!(Genome::from_alleles(cfg.mode, &a), g);
        }
    }

    #[test]
    fn splice_offsets() {
        let w = ContextWindow::new(2).unwrap();
        assert_eq!(w.offsets(true), vec![-2, -1, 0, 1, 2]);
        assert_eq!(w.offsets(false), vec![-2, 0, 2]);
        assert_eq!(ContextWindow::new(0).unwrap().offsets(false), vec![0]);
    }
}
