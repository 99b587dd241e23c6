//! Interactive question-answer sessions with an entropy budget.
//!
//! A session asks questions in a fixed order. The first question is always
//! asked; after each answer the fused description is rescored, its entropy is
//! recorded, and the next question is asked only while the entropy is strictly
//! above the budget.

use std::fmt;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::{true_constraints, Gallery, Identity, ImageId, QuestionId};
use crate::metrics::{entropy, rank_of, retrieve_topk, RankReport, TiePolicy};
use crate::query::perturb_answer;
use crate::scorer::{score_gallery, AffinityVector, ConstraintSet, ScorerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingAnswer,
    AwaitingDecision,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetMet,
    QuestionsExhausted,
    UserAbort,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::BudgetMet => "budget_met",
            StopReason::QuestionsExhausted => "questions_exhausted",
            StopReason::UserAbort => "user_abort",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Ask,
    Answer,
    Stop,
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: u32,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<QuestionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<Vec<ImageId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<StopReason>,
}

impl Event {
    fn bare(t: u32, event: EventKind) -> Self {
        Event {
            t,
            event,
            question_id: None,
            constraints: None,
            entropy: None,
            topk: None,
            reason: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<Event>,
}

impl Transcript {
    /// One JSON object per line, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let events = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Parse(format!("transcript line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Transcript { events })
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.events.iter().rev().find_map(|e| e.reason)
    }

    pub fn questions_asked(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.event == EventKind::Answer)
            .count()
    }

    pub fn entropy_trace(&self) -> Vec<f64> {
        self.events.iter().filter_map(|e| e.entropy).collect()
    }

    /// Rebuilds a session by feeding the recorded answers back in.
    pub fn replay(&self, gallery: Arc<Gallery>, config: SessionConfig) -> Result<Session> {
        let mut session = Session::start(gallery, config, None)?;
        for event in &self.events {
            match (event.event, event.reason) {
                (EventKind::Answer, _) => {
                    let answer = event.constraints.clone().unwrap_or_default();
                    session.submit_answer(answer)?;
                }
                (EventKind::Stop, Some(StopReason::UserAbort)) => session.abort()?,
                _ => {}
            }
        }
        Ok(session)
    }
}

/// Everything a session needs besides the gallery and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub scorer: ScorerSpec,
    pub order: Vec<QuestionId>,
    /// Entropy budget in nats.
    pub budget: f64,
    /// Number of top candidates reported after each answer.
    pub k_display: usize,
    #[serde(default)]
    pub tie_policy: TiePolicy,
}

impl SessionConfig {
    pub fn new(scorer: ScorerSpec, order: Vec<QuestionId>, budget: f64) -> Self {
        SessionConfig {
            scorer,
            order,
            budget,
            k_display: 10,
            tie_policy: TiePolicy::Expected,
        }
    }

    fn validate(&self, gallery: &Gallery) -> Result<()> {
        self.scorer.validate()?;
        if self.order.is_empty() {
            return Err(Error::validation("question order is empty"));
        }
        for (i, q) in self.order.iter().enumerate() {
            gallery
                .schema
                .question(*q)
                .map_err(|_| Error::validation(format!("order references unknown question {q}")))?;
            if self.order[..i].contains(q) {
                return Err(Error::validation(format!(
                    "question {q} appears more than once in the order"
                )));
            }
        }
        if self.budget.is_nan() || self.budget < 0.0 {
            return Err(Error::validation(format!(
                "budget must be >= 0, got {}",
                self.budget
            )));
        }
        if self.k_display == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        Ok(())
    }
}

/// Result of one answered question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub entropy: f64,
    pub topk: Vec<(ImageId, f64)>,
    pub done: bool,
    pub stop_reason: Option<StopReason>,
    pub next_question: Option<QuestionId>,
}

/// Single-writer session state machine.
#[derive(Debug, Clone)]
pub struct Session {
    gallery: Arc<Gallery>,
    config: SessionConfig,
    target: Option<Identity>,
    asked: Vec<QuestionId>,
    constraints: ConstraintSet,
    affinities: AffinityVector,
    entropy_trace: Vec<f64>,
    status: SessionStatus,
    stop_reason: Option<StopReason>,
    events: Vec<Event>,
}

impl Session {
    /// Opens a session awaiting the answer to the first question in the order.
    pub fn start(
        gallery: Arc<Gallery>,
        config: SessionConfig,
        target: Option<Identity>,
    ) -> Result<Self> {
        config.validate(&gallery)?;
        if let Some(t) = target {
            gallery.exemplar(t)?;
        }
        let affinities = score_gallery(&config.scorer, &ConstraintSet::new(), &gallery)?;
        let first = config.order[0];
        let mut ask = Event::bare(0, EventKind::Ask);
        ask.question_id = Some(first);
        Ok(Session {
            gallery,
            config,
            target,
            asked: Vec::new(),
            constraints: ConstraintSet::new(),
            affinities,
            entropy_trace: Vec::new(),
            status: SessionStatus::AwaitingAnswer,
            stop_reason: None,
            events: vec![ask],
        })
    }

    pub fn gallery(&self) -> &Arc<Gallery> {
        &self.gallery
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop_reason
    }

    pub fn asked(&self) -> &[QuestionId] {
        &self.asked
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn affinities(&self) -> &AffinityVector {
        &self.affinities
    }

    pub fn entropy_trace(&self) -> &[f64] {
        &self.entropy_trace
    }

    pub fn target(&self) -> Option<Identity> {
        self.target
    }

    pub fn pending_question(&self) -> Option<QuestionId> {
        match self.status {
            SessionStatus::AwaitingAnswer => self.config.order.get(self.asked.len()).copied(),
            _ => None,
        }
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            events: self.events.clone(),
        }
    }

    /// Current top candidates with their scores.
    pub fn topk(&self) -> Vec<(ImageId, f64)> {
        let k = self.config.k_display.min(self.gallery.n());
        retrieve_topk(&self.affinities, k)
            .expect("k within 1..=n")
            .into_iter()
            .map(|id| (id, self.affinities[id as usize - 1]))
            .collect()
    }

    /// Rank of the target under the current scores, when the target is known.
    pub fn rank_report(&self) -> Option<RankReport> {
        self.target.map(|t| {
            rank_of(&self.affinities, &self.gallery, t, self.config.tie_policy)
                .expect("target validated at start")
        })
    }

    /// Whether another question should follow: entropy strictly above budget
    /// and questions remain.
    pub fn should_continue(&self) -> bool {
        let over_budget = self
            .entropy_trace
            .last()
            .is_none_or(|e| *e > self.config.budget);
        over_budget && self.asked.len() < self.config.order.len()
    }

    fn next_t(&self) -> u32 {
        self.events.len() as u32
    }

    pub fn submit_answer(&mut self, answer: ConstraintSet) -> Result<StepOutcome> {
        let question = match (self.status, self.pending_question()) {
            (SessionStatus::AwaitingAnswer, Some(q)) => q,
            _ => {
                return Err(Error::State(format!(
                    "session is {:?}; no question is pending",
                    self.status
                )))
            }
        };
        let covered = &self.gallery.schema.question(question)?.facets;
        if let Some(f) = answer.facets().find(|f| !covered.contains(f)) {
            return Err(Error::validation(format!(
                "answer constrains facet {f}, which question {question} does not cover"
            )));
        }
        answer.validate(&self.gallery.schema)?;

        let fused = self.constraints.fuse(&answer);
        let affinities = score_gallery(&self.config.scorer, &fused, &self.gallery)?;
        let e = entropy(&affinities)?;

        self.constraints = fused;
        self.affinities = affinities;
        self.asked.push(question);
        self.entropy_trace.push(e);
        self.status = SessionStatus::AwaitingDecision;

        let topk = self.topk();
        let mut event = Event::bare(self.next_t(), EventKind::Answer);
        event.question_id = Some(question);
        event.constraints = Some(answer);
        event.entropy = Some(e);
        event.topk = Some(topk.iter().map(|(id, _)| *id).collect());
        self.events.push(event);

        if self.should_continue() {
            let next = self.config.order[self.asked.len()];
            self.status = SessionStatus::AwaitingAnswer;
            let mut ask = Event::bare(self.next_t(), EventKind::Ask);
            ask.question_id = Some(next);
            self.events.push(ask);
        } else {
            let reason = if e <= self.config.budget {
                StopReason::BudgetMet
            } else {
                StopReason::QuestionsExhausted
            };
            self.finish(reason);
        }

        Ok(StepOutcome {
            entropy: e,
            topk,
            done: self.status == SessionStatus::Done,
            stop_reason: self.stop_reason,
            next_question: self.pending_question(),
        })
    }

    pub fn abort(&mut self) -> Result<()> {
        if self.status == SessionStatus::Done {
            return Err(Error::State("session is already done".into()));
        }
        self.finish(StopReason::UserAbort);
        Ok(())
    }

    fn finish(&mut self, reason: StopReason) {
        self.status = SessionStatus::Done;
        self.stop_reason = Some(reason);
        let mut stop = Event::bare(self.next_t(), EventKind::Stop);
        stop.reason = Some(reason);
        self.events.push(stop);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub transcript: Transcript,
    pub final_rank: RankReport,
    pub entropy_trace: Vec<f64>,
}

/// Runs a session against a simulated user who answers truthfully except
/// that each facet value is replaced by a random wrong one with probability
/// `noise`.
pub fn simulate_session(
    gallery: &Arc<Gallery>,
    config: &SessionConfig,
    target: Identity,
    noise: f64,
    seed: u64,
) -> Result<SimulationResult> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::config(format!(
            "answer noise must lie in [0, 1], got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut session = Session::start(Arc::clone(gallery), config.clone(), Some(target))?;
    while let Some(question) = session.pending_question() {
        let truth = true_constraints(gallery, target, question)?;
        let answer = perturb_answer(&gallery.schema, &truth, noise, &mut rng)?;
        session.submit_answer(answer)?;
    }
    Ok(SimulationResult {
        final_rank: session.rank_report().expect("target set"),
        entropy_trace: session.entropy_trace().to_vec(),
        transcript: session.transcript(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: f64,
    pub mean_rank: f64,
    pub total_queries: usize,
}

/// Simulates every target under every budget. Each target gets its own
/// seed, shared across budgets, so rows differ only through the budget.
pub fn sweep_budgets(
    gallery: &Arc<Gallery>,
    config: &SessionConfig,
    targets: &[Identity],
    budgets: &[f64],
    noise: f64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if budgets.is_empty() {
        return Err(Error::Argument("no budgets given".into()));
    }
    if targets.is_empty() {
        return Err(Error::Argument("no targets given".into()));
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let target_seeds: Vec<u64> = targets.iter().map(|_| seeder.gen()).collect();

    budgets
        .par_iter()
        .map(|budget| {
            let cell_config = SessionConfig {
                budget: *budget,
                ..config.clone()
            };
            let results = targets
                .iter()
                .zip(&target_seeds)
                .map(|(t, s)| simulate_session(gallery, &cell_config, *t, noise, *s))
                .collect::<Result<Vec<_>>>()?;
            let rank_sum: f64 = results.iter().map(|r| r.final_rank.rank).sum();
            Ok(SweepRow {
                budget: *budget,
                mean_rank: rank_sum / results.len() as f64,
                total_queries: results.iter().map(|r| r.transcript.questions_asked()).sum(),
            })
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("budget,mean_rank,total_queries\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.budget, row.mean_rank, row.total_queries
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::e1_gallery;

    fn e1() -> Arc<Gallery> {
        Arc::new(e1_gallery())
    }

    fn config(budget: f64) -> SessionConfig {
        SessionConfig::new(ScorerSpec::ideal(), vec![1, 2, 3], budget)
    }

    #[test]
    fn first_question_is_unconditional() {
        let s = Session::start(e1(), config(0.0), None).unwrap();
        assert_eq!(s.status(), SessionStatus::AwaitingAnswer);
        assert_eq!(s.pending_question(), Some(1));
        let s = Session::start(e1(), config(5f64.ln()), None).unwrap();
        assert_eq!(s.pending_question(), Some(1));
    }

    #[test]
    fn invalid_orders_rejected() {
        let mut c = config(0.0);
        c.order = vec![1, 2, 1];
        assert!(matches!(
            Session::start(e1(), c, None),
            Err(Error::Validation(_))
        ));
        let mut c = config(0.0);
        c.order = vec![4];
        assert!(Session::start(e1(), c, None).is_err());
        assert!(Session::start(e1(), config(-1.0), None).is_err());
    }

    #[test]
    fn budget_zero_chain_on_e1() {
        let mut s = Session::start(e1(), config(0.0), None).unwrap();
        let o = s
            .submit_answer(ConstraintSet::from_pairs([(1, "a")]))
            .unwrap();
        assert!((o.entropy - 3f64.ln()).abs() < 1e-12);
        assert_eq!(o.next_question, Some(2));
        let o = s
            .submit_answer(ConstraintSet::from_pairs([(2, "x")]))
            .unwrap();
        assert!((o.entropy - 2f64.ln()).abs() < 1e-12);
        assert_eq!(o.next_question, Some(3));
        let o = s
            .submit_answer(ConstraintSet::from_pairs([(3, "p")]))
            .unwrap();
        assert_eq!(o.entropy, 0.0);
        assert!(o.done);
        assert_eq!(o.stop_reason, Some(StopReason::BudgetMet));
        assert_eq!(s.asked(), &[1, 2, 3]);
        assert_eq!(o.topk[0], (1, 1.0));
        assert!(matches!(
            s.submit_answer(ConstraintSet::new()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn generous_budget_stops_after_first() {
        let mut s = Session::start(e1(), config(1.2), None).unwrap();
        let o = s
            .submit_answer(ConstraintSet::from_pairs([(1, "a")]))
            .unwrap();
        assert!(o.done);
        assert_eq!(o.stop_reason, Some(StopReason::BudgetMet));
    }

    #[test]
    fn exhaustion_reason() {
        let mut c = config(0.0);
        c.order = vec![1];
        let mut s = Session::start(e1(), c, None).unwrap();
        let o = s
            .submit_answer(ConstraintSet::from_pairs([(1, "a")]))
            .unwrap();
        assert_eq!(o.stop_reason, Some(StopReason::QuestionsExhausted));
    }

    #[test]
    fn foreign_facet_answer_rejected() {
        let mut s = Session::start(e1(), config(0.0), None).unwrap();
        let err = s
            .submit_answer(ConstraintSet::from_pairs([(3, "p")]))
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("facet 3"));
        assert_eq!(s.status(), SessionStatus::AwaitingAnswer);
        assert!(s.asked().is_empty());
    }

    #[test]
    fn abort_records_reason() {
        let mut s = Session::start(e1(), config(0.0), None).unwrap();
        s.submit_answer(ConstraintSet::from_pairs([(1, "a")]))
            .unwrap();
        s.abort().unwrap();
        assert_eq!(s.stop_reason(), Some(StopReason::UserAbort));
        assert!(s.abort().is_err());
        let replayed = s.transcript().replay(e1(), config(0.0)).unwrap();
        assert_eq!(replayed.transcript(), s.transcript());
    }

    #[test]
    fn simulated_e1_matches_manual_chain() {
        let g = e1();
        let sim = simulate_session(&g, &config(0.0), 1, 0.0, 11).unwrap();
        let mut manual = Session::start(e1(), config(0.0), None).unwrap();
        for (f, v) in [(1, "a"), (2, "x"), (3, "p")] {
            manual
                .submit_answer(ConstraintSet::from_pairs([(f, v)]))
                .unwrap();
        }
        assert_eq!(sim.transcript, manual.transcript());
        assert_eq!(sim.final_rank.rank, 1.0);
        assert_eq!(sim.transcript.stop_reason(), Some(StopReason::BudgetMet));

        let one = simulate_session(&g, &config(5f64.ln()), 1, 0.0, 11).unwrap();
        assert_eq!(one.transcript.questions_asked(), 1);
    }

    #[test]
    fn simulation_is_deterministic() {
        let g = e1();
        let a = simulate_session(&g, &config(0.0), 3, 0.4, 99).unwrap();
        let b = simulate_session(&g, &config(0.0), 3, 0.4, 99).unwrap();
        assert_eq!(a.transcript.to_jsonl(), b.transcript.to_jsonl());
    }

    #[test]
    fn transcript_jsonl_shape() {
        let g = e1();
        let sim = simulate_session(&g, &config(0.0), 1, 0.0, 0).unwrap();
        let text = sim.transcript.to_jsonl();
        let first = text.lines().next().unwrap();
        assert_eq!(first, r#"{"t":0,"event":"ask","question_id":1}"#);
        let second = text.lines().nth(1).unwrap();
        assert!(second.starts_with(
            r#"{"t":1,"event":"answer","question_id":1,"constraints":{"1":["a"]},"entropy":1.0986"#
        ));
        assert!(second.ends_with(r#""topk":[1,2,5,3,4]}"#), "{second}");
        assert_eq!(
            text.lines().last().unwrap(),
            r#"{"t":6,"event":"stop","reason":"budget_met"}"#
        );
        assert_eq!(Transcript::from_jsonl(&text).unwrap(), sim.transcript);
    }

    #[test]
    fn sweep_examples() {
        let g = e1();
        let base = config(0.0);
        let rows = sweep_budgets(&g, &base, &[1], &[0.0, 5f64.ln(), 5f64.ln()], 0.0, 4).unwrap();
        assert_eq!(
            rows[0],
            SweepRow {
                budget: 0.0,
                mean_rank: 1.0,
                total_queries: 3
            }
        );
        assert_eq!(rows[1].mean_rank, 2.0);
        assert_eq!(rows[1].total_queries, 1);
        assert_eq!(rows[1], rows[2]);
        let csv = sweep_to_csv(&rows);
        assert!(csv.starts_with("budget,mean_rank,total_queries\n0,1,3\n"));
        assert!(sweep_budgets(&g, &base, &[1], &[], 0.0, 4).is_err());
    }
}
