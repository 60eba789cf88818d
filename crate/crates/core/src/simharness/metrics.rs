//! Navigation and retrieval metrics.

use serde::Serialize;

/// Subgoal success radius in meters.
pub const SUCCESS_RADIUS_M: f64 = 1.0;
/// Recall@1 distance columns in meters.
pub const RECALL_THRESHOLDS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// Outcome of one multi-subgoal episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub success: Vec<bool>,
    /// Meters actually travelled per subgoal.
    pub path_lengths: Vec<f64>,
    /// Shortest feasible path length per subgoal.
    pub shortest: Vec<f64>,
}

/// One SPL term: `S * l / max(p, l)`.
pub fn spl_term(success: bool, p: f64, l: f64) -> f64 {
    if !success {
        return 0.0;
    }
    if l <= 0.0 {
        return 1.0;
    }
    l / p.max(l)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrSpl {
    pub subgoals: usize,
    /// Percent of subgoals reached.
    pub sr: f64,
    pub spl: f64,
    /// `in_a_row[k - 1]`: percent of episodes whose first `k` subgoals all
    /// succeeded. A failure ends the row.
    pub in_a_row: Vec<f64>,
}

/// Percent of episodes whose first `k` subgoals succeeded.
pub fn in_a_row(results: &[EpisodeResult], k: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results.iter().filter(|r| r.success.len() >= k && r.success[..k].iter().all(|&s| s)).count();
    100.0 * hits as f64 / results.len() as f64
}

pub fn eval_sr_spl(results: &[EpisodeResult]) -> SrSpl {
    let terms: Vec<(bool, f64)> = results
        .iter()
        .flat_map(|r| r.success.iter().zip(r.path_lengths.iter().zip(&r.shortest)).map(|(&s, (&p, &l))| (s, spl_term(s, p, l))))
        .collect();
    let n = terms.len();
    let longest = results.iter().map(|r| r.success.len()).max().unwrap_or(0);
    let (sr, spl) = if n == 0 {
        (0.0, 0.0)
    } else {
        (100.0 * terms.iter().filter(|t| t.0).count() as f64 / n as f64, terms.iter().map(|t| t.1).sum::<f64>() / n as f64)
    };
    SrSpl { subgoals: n, sr, spl, in_a_row: (1..=longest).map(|k| in_a_row(results, k)).collect() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    pub thresholds: Vec<f64>,
    /// Percent of queries per threshold.
    pub recall: Vec<f64>,
    /// Mean distance from the top prediction to its ground truth, meters,
    /// over queries that produced a prediction.
    pub avg_min_distance: f64,
    pub queries: usize,
}

/// Recall@1 per threshold. A missing prediction is a miss at every
/// threshold.
pub fn eval_recall(predictions: &[Option<[f64; 2]>], truths: &[[f64; 2]], thresholds: &[f64]) -> RecallReport {
    assert_eq!(predictions.len(), truths.len(), "one prediction per ground truth");
    let dists: Vec<Option<f64>> =
        predictions.iter().zip(truths).map(|(p, t)| p.map(|p| (p[0] - t[0]).hypot(p[1] - t[1]))).collect();
    recall_from_distances(&dists, thresholds)
}

/// Recall@1 from prediction-to-truth distances (`None` = no prediction).
pub fn recall_from_distances(dists: &[Option<f64>], thresholds: &[f64]) -> RecallReport {
    let n = dists.len();
    let recall = thresholds
        .iter()
        .map(|&t| if n == 0 { 0.0 } else { 100.0 * dists.iter().filter(|d| d.is_some_and(|d| d < t)).count() as f64 / n as f64 })
        .collect();
    let present: Vec<f64> = dists.iter().flatten().copied().collect();
    let avg = if present.is_empty() { f64::NAN } else { present.iter().sum::<f64>() / present.len() as f64 };
    RecallReport { thresholds: thresholds.to_vec(), recall, avg_min_distance: avg, queries: n }
}
