//! Queries: a target identity plus its answer to every question.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::{true_constraints, FacetSchema, Gallery, Identity, QuestionId};
use crate::scorer::ConstraintSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub target: Identity,
    pub answers: BTreeMap<QuestionId, ConstraintSet>,
}

impl Query {
    /// A query answered truthfully for every question in the schema.
    pub fn truthful(gallery: &Gallery, target: Identity) -> Result<Self> {
        let answers = gallery
            .schema
            .question_ids()
            .into_iter()
            .map(|q| true_constraints(gallery, target, q).map(|c| (q, c)))
            .collect::<Result<_>>()?;
        Ok(Query { target, answers })
    }

    pub fn answer(&self, question: QuestionId) -> Result<&ConstraintSet> {
        self.answers.get(&question).ok_or_else(|| {
            Error::lookup(format!(
                "query for identity {} has no answer to question {question}",
                self.target
            ))
        })
    }

    /// Fused description for the given questions.
    pub fn description(&self, questions: &[QuestionId]) -> Result<ConstraintSet> {
        let mut fused = ConstraintSet::new();
        for q in questions {
            fused = fused.fuse(self.answer(*q)?);
        }
        Ok(fused)
    }

    pub fn validate(&self, gallery: &Gallery) -> Result<()> {
        if !gallery.has_identity(self.target) {
            return Err(Error::lookup(format!("unknown identity {}", self.target)));
        }
        for (q, answer) in &self.answers {
            let question = gallery.schema.question(*q)?;
            answer.validate(&gallery.schema)?;
            if let Some(f) = answer.facets().find(|f| !question.facets.contains(f)) {
                return Err(Error::validation(format!(
                    "answer to question {q} constrains facet {f}, which that question does not cover"
                )));
            }
        }
        Ok(())
    }
}

/// Truthful queries for the listed identities, in order.
pub fn truthful_queries(gallery: &Gallery, identities: &[Identity]) -> Result<Vec<Query>> {
    identities
        .iter()
        .map(|id| Query::truthful(gallery, *id))
        .collect()
}

/// Replaces each single-valued constraint, with probability `noise`, by a
/// uniformly drawn wrong value from the facet's domain.
pub fn perturb_answer<R: Rng + ?Sized>(
    schema: &FacetSchema,
    answer: &ConstraintSet,
    noise: f64,
    rng: &mut R,
) -> Result<ConstraintSet> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::config(format!(
            "answer noise must lie in [0, 1], got {noise}"
        )));
    }
    let mut out = ConstraintSet::new();
    for (facet, values) in answer.iter() {
        let spec = schema
            .facet(facet)
            .ok_or_else(|| Error::lookup(format!("unknown facet {facet}")))?;
        // Always draw, so the random stream does not depend on earlier outcomes.
        let flip = rng.gen::<f64>() < noise;
        let wrong: Vec<&String> = spec
            .domain
            .iter()
            .filter(|v| !values.contains(*v))
            .collect();
        let pick = rng.gen_range(0..wrong.len().max(1));
        if flip && !wrong.is_empty() {
            out.insert(facet, [wrong[pick].clone()]);
        } else {
            out.insert(facet, values.iter().cloned());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFile {
    pub version: String,
    pub seed: u64,
    pub queries: Vec<Query>,
}

impl QueryFile {
    pub fn new(seed: u64, queries: Vec<Query>) -> Self {
        QueryFile {
            version: crate::VERSION.to_string(),
            seed,
            queries,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("queries serialize");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("query file: {e}")))
    }
}
