//! Question-sequence optimization.
//!
//! The objective is the mean rank `M` of a set of queries after fusing their
//! answers to the asked questions; performance is `R = n - M`. Because fusion
//! is a conjunction, `M` depends only on the *set* of asked questions, which
//! lets [`Objective`] memoize it by subset bitmask.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::{Gallery, QuestionId};
use crate::metrics::{mean_rank, TiePolicy};
use crate::query::Query;
use crate::scorer::ScorerSpec;

/// Largest question count the exhaustive oracles accept.
pub const MAX_EXHAUSTIVE_QUESTIONS: usize = 8;

/// Slack for inequality checks on means of small rationals.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSequence {
    pub order: Vec<QuestionId>,
    /// `M` after each prefix of `order`.
    pub mean_rank_curve: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub question_id: QuestionId,
    pub delta: f64,
}

/// Mean-rank objective over a fixed gallery, query set, scorer and tie policy.
pub struct Objective<'a> {
    gallery: &'a Gallery,
    queries: &'a [Query],
    scorer: ScorerSpec,
    tie_policy: TiePolicy,
    cache: Mutex<HashMap<u64, f64>>,
}

impl<'a> Objective<'a> {
    pub fn new(
        gallery: &'a Gallery,
        queries: &'a [Query],
        scorer: ScorerSpec,
        tie_policy: TiePolicy,
    ) -> Result<Self> {
        scorer.validate()?;
        if queries.is_empty() {
            return Err(Error::Argument("at least one query is required".into()));
        }
        if gallery.schema.num_questions() > 64 {
            return Err(Error::Argument("at most 64 questions are supported".into()));
        }
        Ok(Objective {
            gallery,
            queries,
            scorer,
            tie_policy,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn gallery(&self) -> &Gallery {
        self.gallery
    }

    pub fn num_questions(&self) -> usize {
        self.gallery.schema.num_questions()
    }

    fn mask(&self, questions: &[QuestionId]) -> Result<u64> {
        let n_q = self.num_questions() as QuestionId;
        let mut mask = 0u64;
        for q in questions {
            if *q == 0 || *q > n_q {
                return Err(Error::lookup(format!("unknown question {q}")));
            }
            mask |= 1 << (q - 1);
        }
        Ok(mask)
    }

    /// `M` for the given asked questions (order irrelevant, duplicates ignored).
    pub fn mean_rank(&self, questions: &[QuestionId]) -> Result<f64> {
        let mask = self.mask(questions)?;
        if let Some(m) = self.cache.lock().expect("cache lock").get(&mask) {
            return Ok(*m);
        }
        let mut canonical: Vec<QuestionId> = questions.to_vec();
        canonical.sort_unstable();
        canonical.dedup();
        let m = mean_rank(
            &canonical,
            self.queries,
            self.gallery,
            &self.scorer,
            self.tie_policy,
        )?;
        self.cache.lock().expect("cache lock").insert(mask, m);
        Ok(m)
    }

    /// `R = n - M`.
    pub fn performance(&self, questions: &[QuestionId]) -> Result<f64> {
        Ok(self.gallery.n() as f64 - self.mean_rank(questions)?)
    }

    /// `F(S) = R(S) - R(empty)`, the normalized set function the greedy bound applies to.
    pub fn gain_over_empty(&self, questions: &[QuestionId]) -> Result<f64> {
        Ok(self.mean_rank(&[])? - self.mean_rank(questions)?)
    }

    pub fn marginal_gain(&self, asked: &[QuestionId], candidate: QuestionId) -> Result<GainReport> {
        if asked.contains(&candidate) {
            return Err(Error::Argument(format!(
                "question {candidate} has already been asked"
            )));
        }
        let mut extended = asked.to_vec();
        extended.push(candidate);
        Ok(GainReport {
            question_id: candidate,
            delta: self.mean_rank(asked)? - self.mean_rank(&extended)?,
        })
    }

    pub fn curve(&self, order: &[QuestionId]) -> Result<Vec<f64>> {
        (1..=order.len())
            .map(|len| self.mean_rank(&order[..len]))
            .collect()
    }

    /// Greedy question ordering: repeatedly append the unasked question whose
    /// addition gives the lowest `M`, lowest id on ties.
    pub fn greedy(&self) -> Result<QuestionSequence> {
        let all = self.gallery.schema.question_ids();
        let mut order: Vec<QuestionId> = Vec::with_capacity(all.len());
        let mut curve = Vec::with_capacity(all.len());
        while order.len() < all.len() {
            let scored = all
                .par_iter()
                .filter(|q| !order.contains(q))
                .map(|q| {
                    let mut prefix = order.clone();
                    prefix.push(*q);
                    self.mean_rank(&prefix).map(|m| (*q, m))
                })
                .collect::<Result<Vec<_>>>()?;
            let (best, m) = scored
                .into_iter()
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("at least one unasked question");
            order.push(best);
            curve.push(m);
        }
        Ok(QuestionSequence {
            order,
            mean_rank_curve: curve,
        })
    }

    fn guard(&self) -> Result<()> {
        let n_q = self.num_questions();
        if n_q > MAX_EXHAUSTIVE_QUESTIONS {
            return Err(Error::Refused(format!(
                "exhaustive search supports at most {MAX_EXHAUSTIVE_QUESTIONS} questions, instance has {n_q}"
            )));
        }
        Ok(())
    }

    /// The permutation with the highest final `R`; the lexicographically
    /// smallest order wins ties.
    pub fn best_sequence(&self) -> Result<QuestionSequence> {
        self.guard()?;
        let mut perm = self.gallery.schema.question_ids();
        let mut best: Option<(Vec<QuestionId>, f64)> = None;
        loop {
            let r = self.performance(&perm)?;
            if best.as_ref().is_none_or(|(_, b)| r > *b) {
                best = Some((perm.clone(), r));
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        let (order, _) = best.expect("at least one permutation");
        let mean_rank_curve = self.curve(&order)?;
        Ok(QuestionSequence {
            order,
            mean_rank_curve,
        })
    }

    /// The `k`-subset with the highest `R` when all its answers are fused;
    /// the lexicographically smallest subset wins ties.
    pub fn best_subset(&self, k: usize) -> Result<SubsetReport> {
        self.guard()?;
        let n_q = self.num_questions();
        if k > n_q {
            return Err(Error::Argument(format!(
                "subset size {k} exceeds {n_q} questions"
            )));
        }
        let mut best: Option<SubsetReport> = None;
        for subset in combinations(n_q, k) {
            let r = self.performance(&subset)?;
            if best.as_ref().is_none_or(|b| r > b.performance) {
                best = Some(SubsetReport {
                    questions: subset,
                    performance: r,
                });
            }
        }
        Ok(best.expect("at least one subset"))
    }

    /// Evaluates one chain `A ⊆ B`, `e ∉ B` for diminishing returns and monotonicity.
    pub fn evaluate_chain(
        &self,
        smaller: &[QuestionId],
        larger: &[QuestionId],
        extra: QuestionId,
    ) -> Result<ChainSample> {
        if smaller.iter().any(|q| !larger.contains(q)) {
            return Err(Error::Argument("chain requires A ⊆ B".into()));
        }
        if larger.contains(&extra) {
            return Err(Error::Argument(format!("question {extra} is already in B")));
        }
        let gain_a = self.marginal_gain(smaller, extra)?.delta;
        let gain_b = self.marginal_gain(larger, extra)?.delta;
        Ok(ChainSample {
            smaller: smaller.to_vec(),
            larger: larger.to_vec(),
            extra,
            gain_smaller: gain_a,
            gain_larger: gain_b,
            mean_rank_smaller: self.mean_rank(smaller)?,
            mean_rank_larger: self.mean_rank(larger)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub questions: Vec<QuestionId>,
    pub performance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub smaller: Vec<QuestionId>,
    pub larger: Vec<QuestionId>,
    pub extra: QuestionId,
    pub gain_smaller: f64,
    pub gain_larger: f64,
    pub mean_rank_smaller: f64,
    pub mean_rank_larger: f64,
}

impl ChainSample {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.gain_larger > self.gain_smaller + TOLERANCE {
            out.push(Violation::DiminishingReturns(self.clone()));
        }
        if self.mean_rank_larger > self.mean_rank_smaller + TOLERANCE {
            out.push(Violation::Monotonicity(self.clone()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "chain", rename_all = "snake_case")]
pub enum Violation {
    /// `Δ(e | B) > Δ(e | A)`.
    DiminishingReturns(ChainSample),
    /// `M(B) > M(A)`.
    Monotonicity(ChainSample),
}

/// On-disk form of a question sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceFile {
    pub version: String,
    pub seed: u64,
    pub order: Vec<QuestionId>,
    pub mean_rank_curve: Vec<f64>,
    /// `n - M` after the whole order has been asked.
    pub final_r: f64,
    pub tie_policy: TiePolicy,
    pub scorer: ScorerSpec,
    /// Curve re-evaluated on a held-out query set, when one was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_mean_rank_curve: Option<Vec<f64>>,
}

impl SequenceFile {
    pub fn new(
        seq: &QuestionSequence,
        gallery_size: usize,
        tie_policy: TiePolicy,
        scorer: ScorerSpec,
        seed: u64,
    ) -> Self {
        let final_m = seq.mean_rank_curve.last().copied().unwrap_or(f64::NAN);
        SequenceFile {
            version: crate::VERSION.to_string(),
            seed,
            order: seq.order.clone(),
            mean_rank_curve: seq.mean_rank_curve.clone(),
            final_r: gallery_size as f64 - final_m,
            tie_policy,
            scorer,
            eval_mean_rank_curve: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("sequence serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("sequence file: {e}")))
    }
}

pub fn greedy_order(
    queries: &[Query],
    gallery: &Gallery,
    scorer: &ScorerSpec,
    tie_policy: TiePolicy,
) -> Result<QuestionSequence> {
    Objective::new(gallery, queries, *scorer, tie_policy)?.greedy()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Random,
    Fixed,
}

/// A uniformly random permutation of `1..=n_q` (seeded), or the identity order.
pub fn baseline_order(n_q: usize, mode: BaselineMode, seed: u64) -> Result<Vec<QuestionId>> {
    if n_q == 0 {
        return Err(Error::Argument("need at least one question".into()));
    }
    let mut order: Vec<QuestionId> = (1..=n_q as QuestionId).collect();
    if mode == BaselineMode::Random {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order)
}

pub fn marginal_gain(
    asked: &[QuestionId],
    candidate: QuestionId,
    queries: &[Query],
    gallery: &Gallery,
    scorer: &ScorerSpec,
    tie_policy: TiePolicy,
) -> Result<GainReport> {
    Objective::new(gallery, queries, *scorer, tie_policy)?.marginal_gain(asked, candidate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    BestSequence,
    BestSubset(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleResult {
    Sequence(QuestionSequence),
    Subset(SubsetReport),
}

/// Exhaustive maximization of `R`, refused above [`MAX_EXHAUSTIVE_QUESTIONS`].
pub fn brute_force_oracle(
    queries: &[Query],
    gallery: &Gallery,
    scorer: &ScorerSpec,
    tie_policy: TiePolicy,
    mode: OracleMode,
) -> Result<OracleResult> {
    let objective = Objective::new(gallery, queries, *scorer, tie_policy)?;
    match mode {
        OracleMode::BestSequence => objective.best_sequence().map(OracleResult::Sequence),
        OracleMode::BestSubset(k) => objective.best_subset(k).map(OracleResult::Subset),
    }
}

/// Samples random chains `A ⊆ B ⊆ Q`, `e ∉ B`, and returns every breach of
/// diminishing returns or monotonicity.
pub fn check_submodularity(
    gallery: &Gallery,
    queries: &[Query],
    scorer: &ScorerSpec,
    tie_policy: TiePolicy,
    trials: usize,
    seed: u64,
) -> Result<Vec<Violation>> {
    if trials == 0 {
        return Err(Error::Argument("trials must be at least 1".into()));
    }
    let objective = Objective::new(gallery, queries, *scorer, tie_policy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    for _ in 0..trials {
        let (a, b, e) = sample_chain(objective.num_questions(), &mut rng);
        violations.extend(objective.evaluate_chain(&a, &b, e)?.violations());
    }
    Ok(violations)
}

/// Draws `e` uniformly, puts each other question in `B` with probability 1/2
/// and each member of `B` in `A` with probability 1/2.
pub fn sample_chain<R: Rng + ?Sized>(
    n_q: usize,
    rng: &mut R,
) -> (Vec<QuestionId>, Vec<QuestionId>, QuestionId) {
    let extra = rng.gen_range(1..=n_q as QuestionId);
    let mut larger = Vec::new();
    let mut smaller = Vec::new();
    for q in 1..=n_q as QuestionId {
        if q == extra {
            continue;
        }
        if rng.gen_bool(0.5) {
            larger.push(q);
            if rng.gen_bool(0.5) {
                smaller.push(q);
            }
        }
    }
    (smaller, larger, extra)
}

/// Advances to the next lexicographic permutation; false after the last one.
fn next_permutation<T: Ord>(items: &mut [T]) -> bool {
    let Some(pivot) = items.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let successor = items
        .iter()
        .rposition(|x| *x > items[pivot])
        .expect("a larger element exists after the pivot");
    items.swap(pivot, successor);
    items[pivot + 1..].reverse();
    true
}

/// All `k`-subsets of `1..=n`, lexicographic.
fn combinations(n: usize, k: usize) -> Vec<Vec<QuestionId>> {
    fn rec(
        start: usize,
        n: usize,
        k: usize,
        cur: &mut Vec<QuestionId>,
        out: &mut Vec<Vec<QuestionId>>,
    ) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for q in start..=n {
            if n - q + 1 < k - cur.len() {
                break;
            }
            cur.push(q as QuestionId);
            rec(q + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(1, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}
