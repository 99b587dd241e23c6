//! Description-to-record affinity functions.
//!
//! Descriptions are [`ConstraintSet`]s: for each constrained facet, the set of
//! admissible values. The ideal scorer returns 1 exactly when a record
//! satisfies every constraint; the noisy scorer returns a graded score that
//! stands in for an imperfect learned model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::{FacetId, FacetSchema, Gallery, ImageId, PersonRecord};

/// Admissible values per facet. Serialized as `{"<facet_id>": ["<token>", ...]}`.
///
/// Sets built through [`ConstraintSet::fuse`] may hold an empty admissible set
/// when two answers disagree on a facet; such a constraint is unsatisfiable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConstraintSet {
    constraints: BTreeMap<FacetId, BTreeSet<String>>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (FacetId, &'a str)>) -> Self {
        let mut set = Self::new();
        for (facet, value) in pairs {
            set.insert(facet, [value.to_string()]);
        }
        set
    }

    /// Adds a constraint; an existing constraint on the same facet is narrowed
    /// to the intersection.
    pub fn insert(&mut self, facet: FacetId, values: impl IntoIterator<Item = String>) {
        let values: BTreeSet<String> = values.into_iter().collect();
        match self.constraints.get_mut(&facet) {
            Some(existing) => existing.retain(|v| values.contains(v)),
            None => {
                self.constraints.insert(facet, values);
            }
        }
    }

    pub fn get(&self, facet: FacetId) -> Option<&BTreeSet<String>> {
        self.constraints.get(&facet)
    }

    pub fn facets(&self) -> impl Iterator<Item = FacetId> + '_ {
        self.constraints.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (FacetId, &BTreeSet<String>)> {
        self.constraints.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Description fusion: the conjunction of both constraint sets.
    pub fn fuse(&self, other: &ConstraintSet) -> ConstraintSet {
        let mut out = self.clone();
        for (facet, values) in &other.constraints {
            out.insert(*facet, values.iter().cloned());
        }
        out
    }

    /// True when `self` is at least as specific as `other`: every constraint
    /// of `other` appears in `self` with an equal or narrower admissible set.
    pub fn refines(&self, other: &ConstraintSet) -> bool {
        other.constraints.iter().all(|(facet, values)| {
            self.constraints
                .get(facet)
                .is_some_and(|mine| mine.is_subset(values))
        })
    }

    /// Checks facets exist, admissible sets are nonempty and drawn from the domain.
    pub fn validate(&self, schema: &FacetSchema) -> Result<()> {
        for (facet, values) in &self.constraints {
            let spec = schema
                .facet(*facet)
                .ok_or_else(|| Error::lookup(format!("unknown facet {facet}")))?;
            if values.is_empty() {
                return Err(Error::validation(format!(
                    "facet {facet} has an empty admissible set"
                )));
            }
            if let Some(bad) = values.iter().find(|v| !spec.domain.contains(v)) {
                return Err(Error::validation(format!(
                    "value {bad:?} is not in the domain of facet {facet} ({})",
                    spec.name
                )));
            }
        }
        Ok(())
    }

    /// Counts `(satisfied, constrained)` facets for `record`.
    fn tally(&self, record: &PersonRecord) -> Result<(usize, usize)> {
        let mut satisfied = 0;
        for (facet, values) in &self.constraints {
            let value = record.value(*facet).ok_or_else(|| {
                Error::lookup(format!("image {} has no facet {facet}", record.image_id))
            })?;
            if values.contains(value) {
                satisfied += 1;
            }
        }
        Ok((satisfied, self.constraints.len()))
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (facet, values)) in self.constraints.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            let joined: Vec<&str> = values.iter().map(String::as_str).collect();
            write!(f, "f{facet}={}", joined.join("|"))?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Ideal,
    Noisy,
}

/// Which affinity function to use. `epsilon` is only read by the noisy scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl ScorerSpec {
    pub fn ideal() -> Self {
        ScorerSpec {
            kind: ScorerKind::Ideal,
            epsilon: None,
        }
    }

    pub fn noisy(epsilon: f64) -> Self {
        ScorerSpec {
            kind: ScorerKind::Noisy,
            epsilon: Some(epsilon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScorerKind::Ideal => Ok(()),
            ScorerKind::Noisy => {
                let eps = self
                    .epsilon
                    .ok_or_else(|| Error::config("noisy scorer requires epsilon"))?;
                check_epsilon(eps)
            }
        }
    }

    pub fn affinity(&self, description: &ConstraintSet, record: &PersonRecord) -> Result<f64> {
        match self.kind {
            ScorerKind::Ideal => ideal_affinity(description, record),
            ScorerKind::Noisy => {
                let eps = self
                    .epsilon
                    .ok_or_else(|| Error::config("noisy scorer requires epsilon"))?;
                noisy_affinity(description, record, eps)
            }
        }
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.epsilon) {
            (ScorerKind::Ideal, _) => write!(f, "ideal"),
            (ScorerKind::Noisy, Some(eps)) => write!(f, "noisy(epsilon={eps})"),
            (ScorerKind::Noisy, None) => write!(f, "noisy"),
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 0.5 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "epsilon must lie in (0, 0.5), got {epsilon}"
        )))
    }
}

/// 1 if `record` satisfies every constraint, else 0.
pub fn ideal_affinity(description: &ConstraintSet, record: &PersonRecord) -> Result<f64> {
    let (satisfied, total) = description.tally(record)?;
    Ok(if satisfied == total { 1.0 } else { 0.0 })
}

/// Geometric mean over constrained facets of `1 - epsilon` (satisfied) or
/// `epsilon` (violated). Depends only on the satisfied/total counts.
pub fn noisy_affinity(
    description: &ConstraintSet,
    record: &PersonRecord,
    epsilon: f64,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    let (satisfied, total) = description.tally(record)?;
    if total == 0 {
        return Ok(1.0);
    }
    let hit = satisfied as f64 / total as f64;
    let miss = (total - satisfied) as f64 / total as f64;
    Ok((1.0 - epsilon).powf(hit) * epsilon.powf(miss))
}

/// Scores in `[0, 1]`, index-aligned with gallery records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AffinityVector {
    scores: Vec<f64>,
}

impl AffinityVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::validation(format!(
                "affinity {bad} is outside [0, 1]"
            )));
        }
        Ok(AffinityVector { scores })
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.scores
    }
}

impl Deref for AffinityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.scores
    }
}

/// Scores `description` against every record of `gallery`.
pub fn score_gallery(
    spec: &ScorerSpec,
    description: &ConstraintSet,
    gallery: &Gallery,
) -> Result<AffinityVector> {
    spec.validate()?;
    score_records(spec, description, &gallery.schema, &gallery.records)
}

/// Scores `description` against an arbitrary record slice.
pub fn score_records(
    spec: &ScorerSpec,
    description: &ConstraintSet,
    schema: &FacetSchema,
    records: &[PersonRecord],
) -> Result<AffinityVector> {
    for facet in description.facets() {
        if schema.facet(facet).is_none() {
            return Err(Error::lookup(format!("unknown facet {facet}")));
        }
    }
    let scores = records
        .iter()
        .map(|r| spec.affinity(description, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(AffinityVector { scores })
}

/// Image ids of the records that satisfy every constraint.
pub fn candidate_set(description: &ConstraintSet, gallery: &Gallery) -> Result<BTreeSet<ImageId>> {
    let scores = score_gallery(&ScorerSpec::ideal(), description, gallery)?;
    Ok(gallery
        .records
        .iter()
        .zip(scores.iter())
        .filter(|(_, s)| **s == 1.0)
        .map(|(r, _)| r.image_id)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::e1_gallery;

    fn e1_record(image: ImageId) -> PersonRecord {
        e1_gallery().record(image).unwrap().clone()
    }

    #[test]
    fn ideal_affinity_cases() {
        let rec1 = e1_record(1);
        assert_eq!(
            ideal_affinity(&ConstraintSet::from_pairs([(1, "a")]), &rec1).unwrap(),
            1.0
        );
        let rec = e1_record(1);
        assert_eq!(
            ideal_affinity(&ConstraintSet::from_pairs([(1, "a"), (2, "y")]), &rec).unwrap(),
            0.0
        );
        assert_eq!(ideal_affinity(&ConstraintSet::new(), &rec).unwrap(), 1.0);
        assert!(matches!(
            ideal_affinity(&ConstraintSet::from_pairs([(9, "a")]), &rec),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn noisy_affinity_cases() {
        let rec = e1_record(1);
        let one = noisy_affinity(&ConstraintSet::from_pairs([(1, "a")]), &rec, 0.1).unwrap();
        assert!((one - 0.9).abs() < 1e-15);
        let half =
            noisy_affinity(&ConstraintSet::from_pairs([(1, "a"), (2, "y")]), &rec, 0.1).unwrap();
        assert!((half - (0.9f64 * 0.1).sqrt()).abs() < 1e-12);
        assert!((half - 0.3).abs() < 1e-12);
        assert_eq!(
            noisy_affinity(&ConstraintSet::new(), &rec, 0.2).unwrap(),
            1.0
        );
        assert!(matches!(
            noisy_affinity(&ConstraintSet::new(), &rec, 0.6),
            Err(Error::Config(_))
        ));
        assert!(ScorerSpec::noisy(0.0).validate().is_err());
        assert!(ScorerSpec::noisy(0.5).validate().is_err());
    }

    #[test]
    fn score_gallery_on_e1() {
        let g = e1_gallery();
        let f1a = ConstraintSet::from_pairs([(1, "a")]);
        let ideal = score_gallery(&ScorerSpec::ideal(), &f1a, &g).unwrap();
        assert_eq!(&*ideal, &[1.0, 1.0, 0.0, 0.0, 1.0]);
        let empty = score_gallery(&ScorerSpec::ideal(), &ConstraintSet::new(), &g).unwrap();
        assert_eq!(&*empty, &[1.0; 5]);
        let noisy = score_gallery(&ScorerSpec::noisy(0.1), &f1a, &g).unwrap();
        let expected = [0.9, 0.9, 0.1, 0.1, 0.9];
        for (a, b) in noisy.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn candidate_sets_on_e1() {
        let g = e1_gallery();
        let ids = |s: &[ImageId]| s.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(
            candidate_set(&ConstraintSet::from_pairs([(1, "a")]), &g).unwrap(),
            ids(&[1, 2, 5])
        );
        assert_eq!(
            candidate_set(&ConstraintSet::from_pairs([(1, "a"), (2, "x")]), &g).unwrap(),
            ids(&[1, 5])
        );
        assert_eq!(
            candidate_set(&ConstraintSet::new(), &g).unwrap(),
            ids(&[1, 2, 3, 4, 5])
        );
    }

    #[test]
    fn fuse_narrows_shared_facets() {
        let mut a = ConstraintSet::new();
        a.insert(1, ["a".to_string(), "b".to_string()]);
        let b = ConstraintSet::from_pairs([(1, "a"), (2, "x")]);
        let fused = a.fuse(&b);
        assert_eq!(fused, b);
        assert!(fused.refines(&a));
        assert!(!a.refines(&fused));
    }

    #[test]
    fn validate_rejects_out_of_domain() {
        let g = e1_gallery();
        let err = ConstraintSet::from_pairs([(2, "z")])
            .validate(&g.schema)
            .unwrap_err();
        assert!(err.to_string().contains("facet 2"));
        assert!(ConstraintSet::from_pairs([(7, "a")])
            .validate(&g.schema)
            .is_err());
    }

    #[test]
    fn spec_serde_shape() {
        let json = serde_json::to_string(&ScorerSpec::noisy(0.25)).unwrap();
        assert_eq!(json, r#"{"kind":"noisy","epsilon":0.25}"#);
        let ideal: ScorerSpec = serde_json::from_str(r#"{"kind":"ideal","epsilon":0.3}"#).unwrap();
        assert_eq!(ideal.kind, ScorerKind::Ideal);
        let c: ConstraintSet = serde_json::from_str(r#"{"1":["a"],"3":["p","q"]}"#).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"1":["a"],"3":["p","q"]}"#
        );
    }
}
