//! Retrieval and uncertainty metrics.
//!
//! Rankings sort images by decreasing affinity with ties broken by ascending
//! image id. The rank of a target is the position of its best record; how a
//! tied block around that record is resolved is set by [`TiePolicy`].
//! Entropies are in nats.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::{Gallery, Identity, ImageId, QuestionId};
use crate::query::Query;
use crate::scorer::{score_gallery, ScorerSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Expected position under a uniformly random shuffle of the tied block.
    #[default]
    Expected,
    /// Target records come first in their tied block.
    Optimistic,
    /// Target records come last in their tied block.
    Pessimistic,
}

impl TiePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            TiePolicy::Expected => "expected",
            TiePolicy::Optimistic => "optimistic",
            TiePolicy::Pessimistic => "pessimistic",
        }
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expected" => Ok(TiePolicy::Expected),
            "optimistic" => Ok(TiePolicy::Optimistic),
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            other => Err(Error::Argument(format!("unknown tie policy {other:?}"))),
        }
    }
}

/// Image ids in descending affinity order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub order: Vec<ImageId>,
    pub tie_policy: TiePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: f64,
    pub tied_block_size: usize,
}

/// Indices sorted by descending score, ascending index among equal scores.
pub(crate) fn sorted_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// The `k` highest-scoring image ids (index `j` is image `j + 1`).
pub fn retrieve_topk(scores: &[f64], k: usize) -> Result<Vec<ImageId>> {
    if k == 0 || k > scores.len() {
        return Err(Error::Argument(format!(
            "k must lie in 1..={}, got {k}",
            scores.len()
        )));
    }
    Ok(sorted_indices(scores)
        .into_iter()
        .take(k)
        .map(|j| j as ImageId + 1)
        .collect())
}

pub fn ranking(scores: &[f64], tie_policy: TiePolicy) -> Ranking {
    Ranking {
        order: sorted_indices(scores)
            .into_iter()
            .map(|j| j as ImageId + 1)
            .collect(),
        tie_policy,
    }
}

/// Rank of the best-scoring record among those flagged by `is_target`.
///
/// With `b` records strictly above the best target score, a tied block of
/// `t` records and `m` target records inside it: optimistic is `b + 1`,
/// pessimistic is `b + t - m + 1`, expected is `b + (t + 1) / (m + 1)`, the
/// mean of the minimum of `m` positions drawn without replacement from `1..=t`.
pub fn rank_among(
    scores: &[f64],
    is_target: impl Fn(usize) -> bool,
    tie_policy: TiePolicy,
) -> Option<RankReport> {
    let best = scores
        .iter()
        .enumerate()
        .filter(|(j, _)| is_target(*j))
        .map(|(_, s)| *s)
        .max_by(f64::total_cmp)?;
    let mut above = 0usize;
    let mut tied = 0usize;
    let mut tied_targets = 0usize;
    for (j, s) in scores.iter().enumerate() {
        if *s > best {
            above += 1;
        } else if *s == best {
            tied += 1;
            if is_target(j) {
                tied_targets += 1;
            }
        }
    }
    let rank = match tie_policy {
        TiePolicy::Optimistic => (above + 1) as f64,
        TiePolicy::Pessimistic => (above + tied - tied_targets + 1) as f64,
        TiePolicy::Expected => above as f64 + (tied + 1) as f64 / (tied_targets + 1) as f64,
    };
    Some(RankReport {
        rank,
        tied_block_size: tied,
    })
}

pub fn rank_of(
    scores: &[f64],
    gallery: &Gallery,
    target: Identity,
    tie_policy: TiePolicy,
) -> Result<RankReport> {
    if scores.len() != gallery.n() {
        return Err(Error::Argument(format!(
            "{} scores for a gallery of {} images",
            scores.len(),
            gallery.n()
        )));
    }
    rank_among(
        scores,
        |j| gallery.records[j].identity == target,
        tie_policy,
    )
    .ok_or_else(|| Error::lookup(format!("identity {target} has no record in the gallery")))
}

/// Rank of one query after fusing its answers to `questions`.
pub fn query_rank(
    questions: &[QuestionId],
    query: &Query,
    gallery: &Gallery,
    scorer: &ScorerSpec,
    tie_policy: TiePolicy,
) -> Result<RankReport> {
    let description = query.description(questions)?;
    let scores = score_gallery(scorer, &description, gallery)?;
    rank_of(&scores, gallery, query.target, tie_policy)
}

/// Mean rank `M` over all queries, each scored on its fused answers to `prefix`.
pub fn mean_rank(
    prefix: &[QuestionId],
    queries: &[Query],
    gallery: &Gallery,
    scorer: &ScorerSpec,
    tie_policy: TiePolicy,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Argument("mean rank needs at least one query".into()));
    }
    let ranks = queries
        .par_iter()
        .map(|q| query_rank(prefix, q, gallery, scorer, tie_policy).map(|r| r.rank))
        .collect::<Result<Vec<f64>>>()?;
    // Sequential sum keeps the result independent of thread scheduling.
    Ok(ranks.iter().sum::<f64>() / ranks.len() as f64)
}

/// Performance `R = n - M`.
pub fn performance_r(mean_rank: f64, n: usize) -> Result<f64> {
    if !(1.0..=n as f64).contains(&mean_rank) {
        return Err(Error::Argument(format!(
            "mean rank {mean_rank} outside [1, {n}]"
        )));
    }
    Ok(n as f64 - mean_rank)
}

/// Fraction of rankings whose target owns an image among the first `k`.
pub fn topk_accuracy(rankings: &[(Ranking, Identity)], gallery: &Gallery, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if rankings.is_empty() {
        return Err(Error::Argument("no rankings to evaluate".into()));
    }
    let mut hits = 0usize;
    for (ranking, target) in rankings {
        let mut found = false;
        for image in ranking.order.iter().take(k) {
            let record = gallery
                .record(*image)
                .ok_or_else(|| Error::lookup(format!("unknown image {image}")))?;
            if record.identity == *target {
                found = true;
                break;
            }
        }
        hits += found as usize;
    }
    Ok(hits as f64 / rankings.len() as f64)
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Argument("entropy of an empty score vector".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::validation(format!(
            "scores must be finite and nonnegative, got {bad}"
        )));
    }
    Ok(())
}

fn shannon(masses: impl Iterator<Item = f64> + Clone) -> f64 {
    let total: f64 = masses.clone().sum();
    masses
        .filter(|m| *m > 0.0)
        .map(|m| {
            let p = m / total;
            -p * p.ln()
        })
        .fold(0.0, |acc, h| acc + h)
}

/// Shannon entropy (nats) of the scores normalized to a distribution over
/// images. An all-zero vector is treated as uniform.
pub fn entropy(scores: &[f64]) -> Result<f64> {
    check_scores(scores)?;
    if scores.iter().all(|s| *s == 0.0) {
        return Ok((scores.len() as f64).ln());
    }
    Ok(shannon(scores.iter().copied()))
}

/// Entropy of the normalized mass aggregated per identity rather than per image.
pub fn entropy_by_identity(scores: &[f64], gallery: &Gallery) -> Result<f64> {
    check_scores(scores)?;
    if scores.len() != gallery.n() {
        return Err(Error::Argument(format!(
            "{} scores for a gallery of {} images",
            scores.len(),
            gallery.n()
        )));
    }
    let mut mass: BTreeMap<Identity, f64> = BTreeMap::new();
    let uniform = scores.iter().all(|s| *s == 0.0);
    for (record, s) in gallery.records.iter().zip(scores) {
        *mass.entry(record.identity).or_default() += if uniform { 1.0 } else { *s };
    }
    Ok(shannon(mass.values().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{e1_gallery, e1_queries};
    use crate::scorer::ConstraintSet;

    #[test]
    fn topk_retrieval() {
        assert_eq!(retrieve_topk(&[0.2, 0.9, 0.5], 1).unwrap(), vec![2]);
        assert_eq!(
            retrieve_topk(&[1.0, 1.0, 0.0, 0.0, 1.0], 3).unwrap(),
            vec![1, 2, 5]
        );
        assert!(matches!(retrieve_topk(&[0.2], 0), Err(Error::Argument(_))));
        assert!(retrieve_topk(&[0.2], 2).is_err());
    }

    #[test]
    fn rank_on_e1() {
        let g = e1_gallery();
        let r = rank_of(&[1.0, 0.0, 0.0, 0.0, 0.0], &g, 1, TiePolicy::Expected).unwrap();
        assert_eq!(r.rank, 1.0);
        assert_eq!(r.tied_block_size, 1);
        let scores = [1.0, 1.0, 0.0, 0.0, 1.0];
        assert_eq!(
            rank_of(&scores, &g, 1, TiePolicy::Expected).unwrap().rank,
            2.0
        );
        assert_eq!(
            rank_of(&scores, &g, 1, TiePolicy::Optimistic).unwrap().rank,
            1.0
        );
        assert_eq!(
            rank_of(&scores, &g, 1, TiePolicy::Pessimistic)
                .unwrap()
                .rank,
            3.0
        );
        assert!(matches!(
            rank_of(&scores, &g, 42, TiePolicy::Expected),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn rank_with_several_target_records_in_block() {
        // Block of 4 tied at 0.5 after one strictly higher record; two targets inside.
        let scores = [0.9, 0.5, 0.5, 0.5, 0.5, 0.1];
        let targets = [false, true, false, true, false, true];
        let r = |p| rank_among(&scores, |j| targets[j], p).unwrap().rank;
        assert_eq!(r(TiePolicy::Optimistic), 2.0);
        assert_eq!(r(TiePolicy::Pessimistic), 1.0 + 4.0 - 2.0 + 1.0);
        assert!((r(TiePolicy::Expected) - (1.0 + 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn mean_rank_examples() {
        let g = e1_gallery();
        let q = e1_queries();
        let ideal = ScorerSpec::ideal();
        assert_eq!(
            mean_rank(&[], &q, &g, &ideal, TiePolicy::Expected).unwrap(),
            3.0
        );
        assert_eq!(
            mean_rank(&[1], &q, &g, &ideal, TiePolicy::Expected).unwrap(),
            2.0
        );
        assert!(mean_rank(&[1], &[], &g, &ideal, TiePolicy::Expected).is_err());

        // Three queries whose candidate sets have sizes 1, 3 and 5 after question 1.
        let mut queries = Vec::new();
        for (target, answer) in [
            (1, vec![(1, "a"), (2, "x"), (3, "p")]),
            (2, vec![(1, "a")]),
            (3, vec![]),
        ] {
            let mut query = Query::truthful(&g, target).unwrap();
            let mut c = ConstraintSet::new();
            for (f, v) in answer {
                c.insert(f, [v.to_string()]);
            }
            query.answers.insert(1, c);
            queries.push(query);
        }
        let m = mean_rank(&[1], &queries, &g, &ideal, TiePolicy::Expected);
        // The schema forbids question 1 from touching f2/f3, but mean_rank
        // scores whatever descriptions it is handed.
        assert_eq!(m.unwrap(), 2.0);
    }

    #[test]
    fn performance_examples() {
        assert_eq!(performance_r(2.0, 10).unwrap(), 8.0);
        assert_eq!(performance_r(3.0, 5).unwrap(), 2.0);
        assert_eq!(performance_r(1.0, 5).unwrap(), 4.0);
        assert!(performance_r(0.5, 5).is_err());
        assert!(performance_r(6.0, 5).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let g = e1_gallery();
        let at3 = Ranking {
            order: vec![2, 3, 1, 4, 5],
            tie_policy: TiePolicy::Expected,
        };
        assert_eq!(topk_accuracy(&[(at3.clone(), 1)], &g, 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&[(at3, 1)], &g, 10).unwrap(), 1.0);

        let q = &e1_queries()[0];
        let d = q.description(&[1, 2, 3]).unwrap();
        let scores = score_gallery(&ScorerSpec::ideal(), &d, &g).unwrap();
        let r = ranking(&scores, TiePolicy::Expected);
        assert_eq!(topk_accuracy(&[(r, 1)], &g, 1).unwrap(), 1.0);
        assert!(topk_accuracy(&[], &g, 1).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(entropy(&[1.0, 0.0, 0.0, 0.0]).unwrap().is_sign_positive());
        assert!((entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.7; 4]).unwrap() - 1.386294).abs() < 1e-6);
        assert!((entropy(&[1.0, 1.0, 0.0, 0.0, 1.0]).unwrap() - 1.098612).abs() < 1e-6);
        assert!((entropy(&[0.0; 6]).unwrap() - 6f64.ln()).abs() < 1e-12);
        assert!(matches!(entropy(&[0.5, -0.1]), Err(Error::Validation(_))));
    }

    #[test]
    fn identity_entropy_merges_images() {
        let g = crate::gallery::Gallery::new(
            e1_gallery().schema,
            e1_gallery()
                .records
                .into_iter()
                .map(|mut r| {
                    r.identity = if r.image_id <= 2 { 1 } else { r.image_id - 1 };
                    r
                })
                .collect(),
            0,
        )
        .unwrap();
        let scores = [1.0, 1.0, 0.0, 0.0, 0.0];
        assert!((entropy(&scores).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(entropy_by_identity(&scores, &g).unwrap(), 0.0);
    }

    #[test]
    fn tie_policy_parses() {
        assert_eq!(
            "pessimistic".parse::<TiePolicy>().unwrap(),
            TiePolicy::Pessimistic
        );
        assert!("median".parse::<TiePolicy>().is_err());
    }
}
