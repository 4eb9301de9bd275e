use crate::error::{Error, Result};
use crate::verifier::ScoreSet;

/// Counts at one threshold: non-targets accepted (`score ≥ t`) and targets rejected (`score < t`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RocPoint {
    pub false_accepts: usize,
    pub false_rejects: usize,
}

/// Interpolated FAR/FRR crossing of a threshold-ordered ROC sweep.
///
/// `points` must start at FAR = 1, FRR = 0 and end at FAR = 0, FRR = 1.
pub fn crossing(points: &[RocPoint], n_target: usize, n_nontarget: usize) -> f64 {
    let far = |p: &RocPoint| p.false_accepts as f64 / n_nontarget as f64;
    let frr = |p: &RocPoint| p.false_rejects as f64 / n_target as f64;
    for (j, p) in points.iter().enumerate() {
        // frr >= far, compared exactly in integers.
        let lhs = p.false_rejects * n_nontarget;
        let rhs = p.false_accepts * n_target;
        if lhs < rhs {
            continue;
        }
        if lhs == rhs || j == 0 {
            return far(p);
        }
        let q = &points[j - 1];
        let d_prev = far(q) - frr(q);
        let d_cur = far(p) - frr(p);
        let s = d_prev / (d_prev - d_cur);
        return far(q) + s * (far(p) - far(q));
    }
    unreachable!("sweep ends at FAR = 0, FRR = 1")
}

fn check(scores: &ScoreSet) -> Result<(usize, usize)> {
    let n_target = scores.iter().filter(|(_, t)| *t).count();
    let n_nontarget = scores.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::Contract(format!(
            "EER needs both classes, got {n_target} target and {n_nontarget} non-target trials"
        )));
    }
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Contract("non-finite score".into()));
    }
    Ok((n_target, n_nontarget))
}

/// ROC sweep over every distinct score (ascending) plus a final threshold above all scores.
pub fn roc_sweep(scores: &ScoreSet) -> Result<(Vec<RocPoint>, usize, usize)> {
    let (n_target, n_nontarget) = check(scores)?;
    let mut sorted: Vec<(f64, bool)> = scores.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = Vec::new();
    let (mut targets_below, mut nontargets_below) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        points.push(RocPoint {
            false_accepts: n_nontarget - nontargets_below,
            false_rejects: targets_below,
        });
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
    }
    points.push(RocPoint {
        false_accepts: 0,
        false_rejects: n_target,
    });
    Ok((points, n_target, n_nontarget))
}

/// Equal error rate before folding; may exceed 0.5 for anti-correlated scores.
pub fn raw_eer(scores: &ScoreSet) -> Result<f64> {
    let (points, nt, nn) = roc_sweep(scores)?;
    Ok(crossing(&points, nt, nn))
}

/// Equal error rate folded into `[0, 0.5]`.
pub fn compute_eer(scores: &ScoreSet) -> Result<f64> {
    let e = raw_eer(scores)?;
    Ok(e.min(1.0 - e))
}

/// Search fitness `1 − EER`.
pub fn fitness_from_eer(eer: f64) -> f64 {
    1.0 - eer
}
