use crate::error::{Error, Result};
use crate::tensorcore::{kernels, Graph, ParamSet, Tensor, Var};

/// Lower bound enforced on the learnable similarity scale.
pub const MIN_SCALE: f64 = 1e-6;

pub const SCALE_PARAM: &str = "score.w";
pub const OFFSET_PARAM: &str = "score.b";

/// Learnable scale `w` and offset `b` of the scored cosine `w·cos + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParams {
    pub w: f64,
    pub b: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self { w: 10.0, b: -5.0 }
    }
}

impl ScoreParams {
    pub fn clamp(&mut self) {
        self.w = self.w.max(MIN_SCALE);
    }

    pub fn from_params(params: &ParamSet) -> Result<Self> {
        Ok(Self {
            w: params.get(SCALE_PARAM)?.item(),
            b: params.get(OFFSET_PARAM)?.item(),
        })
    }

    pub fn install(&self, params: &mut ParamSet) {
        params.insert(SCALE_PARAM, Tensor::scalar(self.w));
        params.insert(OFFSET_PARAM, Tensor::scalar(self.b));
    }

    /// Re-applies the positivity clamp to the scale stored in `params`.
    pub fn clamp_in(params: &mut ParamSet) -> Result<()> {
        let w = params.get_mut(SCALE_PARAM)?;
        let v = w.data()[0].max(MIN_SCALE);
        w.data_mut()[0] = v;
        Ok(())
    }
}

pub fn scaled_similarity(a: &[f64], p: &[f64], params: &ScoreParams) -> Result<f64> {
    if a.len() != p.len() {
        return Err(Error::InvalidShape(format!(
            "similarity of vectors with {} and {} elements",
            a.len(),
            p.len()
        )));
    }
    Ok(params.w * kernels::cosine(a, p)? + params.b)
}

/// `w·cos(a, p) + b` recorded on the graph.
pub fn scaled_similarity_var(g: &mut Graph, a: Var, p: Var, w: Var, b: Var) -> Result<Var> {
    let c = g.cosine(a, p)?;
    let wc = g.mul(w, c)?;
    g.add(wc, b)
}

/// `N` speakers × `M` utterances of equally sized embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    pub speaker_ids: Vec<String>,
    pub embeddings: Vec<Vec<Tensor>>,
}

impl EmbeddingBatch {
    pub fn new(speaker_ids: Vec<String>, embeddings: Vec<Vec<Tensor>>) -> Result<Self> {
        check_grid(embeddings.iter().map(|s| s.len()).collect(), embeddings.len())?;
        if speaker_ids.len() != embeddings.len() {
            return Err(Error::Contract("one speaker id per embedding row required".into()));
        }
        let dim = embeddings[0][0].numel();
        if embeddings.iter().flatten().any(|e| e.numel() != dim) {
            return Err(Error::InvalidShape("embeddings differ in dimension".into()));
        }
        Ok(Self {
            speaker_ids,
            embeddings,
        })
    }

    pub fn n_speakers(&self) -> usize {
        self.embeddings.len()
    }

    pub fn n_utterances(&self) -> usize {
        self.embeddings[0].len()
    }
}

fn check_grid(per_speaker: Vec<usize>, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Contract(format!("need at least 2 speakers, got {n}")));
    }
    let m = per_speaker[0];
    if m < 2 || per_speaker.iter().any(|&k| k != m) {
        return Err(Error::Contract(format!(
            "need the same M ≥ 2 utterances for every speaker, got {per_speaker:?}"
        )));
    }
    Ok(())
}

/// Mean embedding of speaker `k`, optionally leaving out utterance `exclude`.
pub fn centroid(batch: &EmbeddingBatch, k: usize, exclude: Option<usize>) -> Result<Tensor> {
    let utts = batch
        .embeddings
        .get(k)
        .ok_or_else(|| Error::Lookup(format!("speaker index {k}")))?;
    if let Some(x) = exclude {
        if utts.len() < 2 {
            return Err(Error::Contract("excluded centroid needs M ≥ 2".into()));
        }
        if x >= utts.len() {
            return Err(Error::Lookup(format!("utterance index {x}")));
        }
    }
    let dim = utts[0].numel();
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for (i, e) in utts.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        acc.iter_mut().zip(e.data()).for_each(|(a, v)| *a += v);
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Tensor::new(utts[0].shape().to_vec(), acc)
}

/// Per-anchor terms `1 − σ(d(e, c_j⁻)) + max_{k≠j} σ(d(e, c_k))` on the graph,
/// where `c_j⁻` is the anchor's own centroid without the anchor.
pub fn ge2e_anchor_losses(g: &mut Graph, emb: &[Vec<Var>], w: Var, b: Var) -> Result<Vec<Var>> {
    check_grid(emb.iter().map(|s| s.len()).collect(), emb.len())?;
    let centroids = emb
        .iter()
        .map(|utts| g.mean_of(utts))
        .collect::<Result<Vec<_>>>()?;
    let mut losses = Vec::with_capacity(emb.len() * emb[0].len());
    for (j, utts) in emb.iter().enumerate() {
        for (m, &anchor) in utts.iter().enumerate() {
            let others: Vec<Var> = utts
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != m)
                .map(|(_, &v)| v)
                .collect();
            let own = g.mean_of(&others)?;
            let pos = scaled_similarity_var(g, anchor, own, w, b)?;
            let pos = g.sigmoid(pos);
            let mut negs = Vec::with_capacity(emb.len() - 1);
            for (k, &c) in centroids.iter().enumerate() {
                if k == j {
                    continue;
                }
                let d = scaled_similarity_var(g, anchor, c, w, b)?;
                negs.push(g.sigmoid(d));
            }
            let hardest = g.max_of(&negs)?;
            let one_minus = g.affine(pos, -1.0, 1.0);
            losses.push(g.add(one_minus, hardest)?);
        }
    }
    Ok(losses)
}

/// Mean of the per-anchor terms over all `N·M` anchors.
pub fn ge2e_loss_var(g: &mut Graph, emb: &[Vec<Var>], w: Var, b: Var) -> Result<Var> {
    let per_anchor = ge2e_anchor_losses(g, emb, w, b)?;
    let total = g.mean_of(&per_anchor)?;
    Ok(total)
}

fn batch_graph(batch: &EmbeddingBatch, params: &ScoreParams) -> (Graph, Vec<Vec<Var>>, Var, Var) {
    let mut g = Graph::new();
    let emb = batch
        .embeddings
        .iter()
        .map(|utts| utts.iter().map(|e| g.leaf(e)).collect())
        .collect();
    let w = g.leaf(&Tensor::scalar(params.w));
    let b = g.leaf(&Tensor::scalar(params.b));
    (g, emb, w, b)
}

pub fn ge2e_per_anchor(batch: &EmbeddingBatch, params: &ScoreParams) -> Result<Vec<f64>> {
    let (mut g, emb, w, b) = batch_graph(batch, params);
    let losses = ge2e_anchor_losses(&mut g, &emb, w, b)?;
    Ok(losses.iter().map(|&v| g.scalar(v)).collect())
}

pub fn ge2e_style_loss(batch: &EmbeddingBatch, params: &ScoreParams) -> Result<f64> {
    let (mut g, emb, w, b) = batch_graph(batch, params);
    let loss = ge2e_loss_var(&mut g, &emb, w, b)?;
    Ok(g.scalar(loss))
}

pub fn softmax_xent_loss(logits: &Tensor, label: usize) -> Result<f64> {
    if label >= logits.numel() {
        return Err(Error::Contract(format!(
            "label {label} out of range for {} classes",
            logits.numel()
        )));
    }
    Ok(kernels::log_sum_exp(logits.data()) - logits.data()[label])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn similarity_examples() {
        let a = [0.3, -1.0, 2.0];
        let p = ScoreParams { w: 1.0, b: 0.0 };
        assert!((scaled_similarity(&a, &a, &p).unwrap() - 1.0).abs() < 1e-15);
        let z = ScoreParams { w: 0.0, b: 0.7 };
        assert_eq!(scaled_similarity(&a, &[1.0, 1.0, 1.0], &z).unwrap(), 0.7);
        assert!(scaled_similarity(&a, &[0.0; 3], &p).is_err());
    }

    #[test]
    fn centroid_examples() {
        let batch = EmbeddingBatch::new(
            vec!["a".into(), "b".into()],
            vec![vec![v(&[1.0, 0.0]), v(&[3.0, 2.0])], vec![v(&[5.0, 5.0]), v(&[5.0, 5.0])]],
        )
        .unwrap();
        assert_eq!(centroid(&batch, 0, None).unwrap().data(), &[2.0, 1.0]);
        assert_eq!(centroid(&batch, 0, Some(0)).unwrap().data(), &[3.0, 2.0]);
        assert_eq!(centroid(&batch, 1, None).unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn batch_needs_two_by_two() {
        let one = EmbeddingBatch::new(vec!["a".into()], vec![vec![v(&[1.0]), v(&[2.0])]]);
        assert!(matches!(one, Err(Error::Contract(_))));
        let single_utt = EmbeddingBatch::new(
            vec!["a".into(), "b".into()],
            vec![vec![v(&[1.0])], vec![v(&[2.0])]],
        );
        assert!(single_utt.is_err());
    }

    #[test]
    fn hand_evaluated_anchor_loss() {
        // Each anchor equals its own excluded centroid; the other speaker's centroid is orthogonal.
        let e1 = v(&[1.0, 0.0]);
        let e2 = v(&[0.0, 1.0]);
        let batch = EmbeddingBatch::new(
            vec!["a".into(), "b".into()],
            vec![vec![e1.clone(), e1], vec![e2.clone(), e2]],
        )
        .unwrap();
        let losses = ge2e_per_anchor(&batch, &ScoreParams { w: 1.0, b: 0.0 }).unwrap();
        for l in losses {
            assert!((l - 0.768_941).abs() < 1e-6, "{l}");
        }
    }

    #[test]
    fn uniform_logits_cost_log_n() {
        let l = softmax_xent_loss(&v(&[0.3; 4]), 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let mut spike = vec![0.0; 4];
        spike[1] = 1000.0;
        assert!(softmax_xent_loss(&v(&spike), 1).unwrap() < 1e-12);
        assert!(softmax_xent_loss(&v(&spike), 4).is_err());
    }
}
