//! Gallery entities, facet schemas, and synthetic gallery generation.
//!
//! A gallery is a list of image records, each owned by one identity and carrying
//! one categorical value per facet. Questions group facets; the answer to a
//! question is a [`ConstraintSet`] over the facets it covers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorer::ConstraintSet;

pub type FacetId = u32;
pub type QuestionId = u32;
pub type ImageId = u32;
pub type Identity = u32;

/// A single categorical appearance attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Facet {
    pub id: FacetId,
    pub name: String,
    pub domain: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub prompt: String,
    pub facets: Vec<FacetId>,
}

/// Facets and the questions that cover them.
///
/// Question ids are `1..=n_Q`; every facet is covered by exactly one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetSchema {
    pub facets: Vec<Facet>,
    pub questions: Vec<Question>,
}

impl FacetSchema {
    pub fn new(facets: Vec<Facet>, questions: Vec<Question>) -> Result<Self> {
        let schema = FacetSchema { facets, questions };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for facet in &self.facets {
            if !ids.insert(facet.id) {
                return Err(Error::validation(format!(
                    "duplicate facet id {}",
                    facet.id
                )));
            }
            if facet.domain.len() < 2 {
                return Err(Error::validation(format!(
                    "facet {} ({}) needs at least 2 domain values",
                    facet.id, facet.name
                )));
            }
            let distinct: BTreeSet<&String> = facet.domain.iter().collect();
            if distinct.len() != facet.domain.len() {
                return Err(Error::validation(format!(
                    "facet {} has duplicate domain values",
                    facet.id
                )));
            }
        }
        if self.questions.is_empty() {
            return Err(Error::validation("schema has no questions"));
        }
        let mut covered = BTreeMap::new();
        for (pos, question) in self.questions.iter().enumerate() {
            if question.id as usize != pos + 1 {
                return Err(Error::validation(format!(
                    "question ids must be 1..={} in order, found {} at position {}",
                    self.questions.len(),
                    question.id,
                    pos + 1
                )));
            }
            for facet in &question.facets {
                if !ids.contains(facet) {
                    return Err(Error::validation(format!(
                        "question {} references unknown facet {}",
                        question.id, facet
                    )));
                }
                if let Some(prev) = covered.insert(*facet, question.id) {
                    return Err(Error::validation(format!(
                        "facet {} covered by both question {} and question {}",
                        facet, prev, question.id
                    )));
                }
            }
        }
        if let Some(facet) = ids.iter().find(|id| !covered.contains_key(id)) {
            return Err(Error::validation(format!(
                "facet {facet} is not covered by any question"
            )));
        }
        Ok(())
    }

    /// Seven facets under five questions, one per appearance aspect.
    pub fn default_schema() -> Self {
        fn facet(id: FacetId, name: &str, domain: &[&str]) -> Facet {
            Facet {
                id,
                name: name.to_string(),
                domain: domain.iter().map(|s| s.to_string()).collect(),
            }
        }
        let facets = vec![
            facet(1, "gender", &["female", "male"]),
            facet(2, "age-group", &["child", "adult", "senior"]),
            facet(
                3,
                "dress-color",
                &["black", "white", "red", "blue", "green", "yellow"],
            ),
            facet(
                4,
                "dress-type",
                &["shirt-trousers", "dress", "tshirt-shorts", "suit"],
            ),
            facet(
                5,
                "footwear",
                &["sneakers", "boots", "sandals", "formal-shoes"],
            ),
            facet(
                6,
                "hair",
                &["short-dark", "long-dark", "short-light", "long-light"],
            ),
            facet(
                7,
                "accessory",
                &["none", "bag", "backpack", "glasses", "hat"],
            ),
        ];
        let question = |id: QuestionId, prompt: &str, facets: &[FacetId]| Question {
            id,
            prompt: prompt.to_string(),
            facets: facets.to_vec(),
        };
        let questions =
            vec![
            question(
                1,
                "Describe gender of the person, age group and any action they are involved in.",
                &[1, 2],
            ),
            question(2, "Describe appearance of dress that the person is wearing.", &[3, 4]),
            question(3, "Describe footwear of the person.", &[5]),
            question(4, "Describe appearance of person's hair including color and length.", &[6]),
            question(
                5,
                "Describe other accessories that person might be wearing or carrying or holding.",
                &[7],
            ),
        ];
        FacetSchema { facets, questions }
    }

    pub fn facet(&self, id: FacetId) -> Option<&Facet> {
        self.facets.iter().find(|f| f.id == id)
    }

    pub fn question(&self, id: QuestionId) -> Result<&Question> {
        id.checked_sub(1)
            .and_then(|i| self.questions.get(i as usize))
            .ok_or_else(|| Error::lookup(format!("unknown question {id}")))
    }

    pub fn num_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn question_ids(&self) -> Vec<QuestionId> {
        self.questions.iter().map(|q| q.id).collect()
    }

    /// The question that covers `facet`, if any.
    pub fn question_of(&self, facet: FacetId) -> Option<QuestionId> {
        self.questions
            .iter()
            .find(|q| q.facets.contains(&facet))
            .map(|q| q.id)
    }
}

/// One gallery image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub image_id: ImageId,
    pub identity: Identity,
    #[serde(rename = "values")]
    pub facet_values: BTreeMap<FacetId, String>,
}

impl PersonRecord {
    pub fn value(&self, facet: FacetId) -> Option<&str> {
        self.facet_values.get(&facet).map(String::as_str)
    }

    /// Checks that every schema facet is assigned a value from its domain.
    pub fn validate(&self, schema: &FacetSchema) -> Result<()> {
        for facet in &schema.facets {
            match self.facet_values.get(&facet.id) {
                None => {
                    return Err(Error::validation(format!(
                        "image {} has no value for facet {}",
                        self.image_id, facet.id
                    )))
                }
                Some(v) if !facet.domain.contains(v) => {
                    return Err(Error::validation(format!(
                        "image {} has value {:?} outside the domain of facet {}",
                        self.image_id, v, facet.id
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self
            .facet_values
            .keys()
            .find(|id| schema.facet(**id).is_none())
        {
            return Err(Error::validation(format!(
                "image {} references unknown facet {}",
                self.image_id, extra
            )));
        }
        Ok(())
    }
}

/// The searchable set of records. Records are stored in image-id order, so
/// index `j` holds image `j + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gallery {
    pub seed: u64,
    pub schema: FacetSchema,
    pub records: Vec<PersonRecord>,
}

impl Gallery {
    pub fn new(schema: FacetSchema, mut records: Vec<PersonRecord>, seed: u64) -> Result<Self> {
        records.sort_by_key(|r| r.image_id);
        let gallery = Gallery {
            seed,
            schema,
            records,
        };
        gallery.validate()?;
        Ok(gallery)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.records.is_empty() {
            return Err(Error::validation("gallery has no records"));
        }
        for (pos, record) in self.records.iter().enumerate() {
            if record.image_id as usize != pos + 1 {
                let dup = pos > 0 && self.records[pos - 1].image_id == record.image_id;
                return Err(Error::validation(if dup {
                    format!("duplicate image_id {}", record.image_id)
                } else {
                    format!(
                        "image ids must be contiguous from 1; expected {} found {}",
                        pos + 1,
                        record.image_id
                    )
                }));
            }
            record.validate(&self.schema)?;
        }
        let identities: BTreeSet<Identity> = self.records.iter().map(|r| r.identity).collect();
        let k = self.num_identities();
        if identities.len() != k as usize || identities.contains(&0) {
            return Err(Error::validation(format!(
                "identities must cover 1..={k} with at least one record each"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Number of identities `K` (identities are `1..=K`).
    pub fn num_identities(&self) -> Identity {
        self.records.iter().map(|r| r.identity).max().unwrap_or(0)
    }

    pub fn has_identity(&self, identity: Identity) -> bool {
        self.records.iter().any(|r| r.identity == identity)
    }

    pub fn records_of(&self, identity: Identity) -> impl Iterator<Item = &PersonRecord> {
        self.records.iter().filter(move |r| r.identity == identity)
    }

    pub fn record(&self, image_id: ImageId) -> Option<&PersonRecord> {
        image_id
            .checked_sub(1)
            .and_then(|i| self.records.get(i as usize))
    }

    /// Any record of `identity`; identities share facet values, so this is
    /// the canonical appearance.
    pub fn exemplar(&self, identity: Identity) -> Result<&PersonRecord> {
        self.records_of(identity)
            .next()
            .ok_or_else(|| Error::lookup(format!("unknown identity {identity}")))
    }
}

/// Parameters for [`generate_gallery`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryConfig {
    pub n: usize,
    pub identities: usize,
    pub schema: FacetSchema,
    /// Categorical weights per facet, aligned with the facet's domain.
    pub value_distributions: BTreeMap<FacetId, Vec<f64>>,
}

impl GalleryConfig {
    pub fn uniform(n: usize, identities: usize, schema: FacetSchema) -> Self {
        let value_distributions = schema
            .facets
            .iter()
            .map(|f| (f.id, vec![1.0; f.domain.len()]))
            .collect();
        GalleryConfig {
            n,
            identities,
            schema,
            value_distributions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema
            .validate()
            .map_err(|e| Error::config(format!("invalid schema: {e}")))?;
        if self.identities == 0 {
            return Err(Error::config("identities (K) must be at least 1"));
        }
        if self.identities > self.n {
            return Err(Error::config(format!(
                "K <= n violated: {} identities for {} images",
                self.identities, self.n
            )));
        }
        for facet in &self.schema.facets {
            let weights = self.value_distributions.get(&facet.id).ok_or_else(|| {
                Error::config(format!("no value distribution for facet {}", facet.id))
            })?;
            if weights.len() != facet.domain.len() {
                return Err(Error::config(format!(
                    "facet {} has {} values but {} weights",
                    facet.id,
                    facet.domain.len(),
                    weights.len()
                )));
            }
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::config(format!(
                    "facet {} weights must be finite and nonnegative",
                    facet.id
                )));
            }
            if weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::config(format!(
                    "facet {} weights must have a positive sum",
                    facet.id
                )));
            }
        }
        if let Some(extra) = self
            .value_distributions
            .keys()
            .find(|id| self.schema.facet(**id).is_none())
        {
            return Err(Error::config(format!(
                "value distribution given for unknown facet {extra}"
            )));
        }
        Ok(())
    }
}

/// Generates a gallery whose identities draw facet values independently from
/// the configured categorical distributions. The first `K` images cover every
/// identity once; the rest are assigned uniformly, then all are shuffled.
pub fn generate_gallery(config: &GalleryConfig, seed: u64) -> Result<Gallery> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samplers = config
        .schema
        .facets
        .iter()
        .map(|f| {
            WeightedIndex::new(&config.value_distributions[&f.id])
                .map(|w| (f, w))
                .map_err(|e| Error::config(format!("facet {}: {e}", f.id)))
        })
        .collect::<Result<Vec<_>>>()?;

    let appearances: Vec<BTreeMap<FacetId, String>> = (0..config.identities)
        .map(|_| {
            samplers
                .iter()
                .map(|(facet, dist)| (facet.id, facet.domain[dist.sample(&mut rng)].clone()))
                .collect()
        })
        .collect();

    let mut owners: Vec<Identity> = (1..=config.identities as Identity).collect();
    for _ in config.identities..config.n {
        owners.push(rng.gen_range(1..=config.identities as Identity));
    }
    owners.shuffle(&mut rng);

    let records = owners
        .into_iter()
        .enumerate()
        .map(|(j, identity)| PersonRecord {
            image_id: j as ImageId + 1,
            identity,
            facet_values: appearances[identity as usize - 1].clone(),
        })
        .collect();
    Gallery::new(config.schema.clone(), records, seed)
}

/// The truthful answer to `question_id` for `identity`.
pub fn true_constraints(
    gallery: &Gallery,
    identity: Identity,
    question_id: QuestionId,
) -> Result<ConstraintSet> {
    let record = gallery.exemplar(identity)?;
    let question = gallery.schema.question(question_id)?;
    let mut constraints = ConstraintSet::new();
    for facet in &question.facets {
        let value = record
            .value(*facet)
            .ok_or_else(|| Error::lookup(format!("identity {identity} lacks facet {facet}")))?;
        constraints.insert(*facet, [value.to_string()]);
    }
    Ok(constraints)
}

#[derive(Serialize)]
struct GalleryFileOut<'a> {
    version: &'a str,
    seed: u64,
    schema: &'a FacetSchema,
    records: &'a [PersonRecord],
}

#[derive(Deserialize)]
struct GalleryFileIn {
    #[allow(dead_code)]
    #[serde(default)]
    version: Option<String>,
    seed: u64,
    schema: FacetSchema,
    records: Vec<PersonRecord>,
}

pub fn gallery_to_json(gallery: &Gallery) -> String {
    let file = GalleryFileOut {
        version: crate::VERSION,
        seed: gallery.seed,
        schema: &gallery.schema,
        records: &gallery.records,
    };
    serde_json::to_string_pretty(&file).expect("gallery serializes")
}

pub fn gallery_from_json(text: &str) -> Result<Gallery> {
    let file: GalleryFileIn =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("gallery file: {e}")))?;
    let mut records = file.records;
    records.sort_by_key(|r| r.image_id);
    if let Some(w) = records.windows(2).find(|w| w[0].image_id == w[1].image_id) {
        return Err(Error::validation(format!(
            "duplicate image_id {}",
            w[0].image_id
        )));
    }
    Gallery::new(file.schema, records, file.seed)
}

pub fn save_gallery(gallery: &Gallery, path: impl AsRef<Path>) -> Result<()> {
    let mut text = gallery_to_json(gallery);
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_gallery(path: impl AsRef<Path>) -> Result<Gallery> {
    let text = fs::read_to_string(path)?;
    gallery_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::e1_gallery;

    fn small_schema() -> FacetSchema {
        FacetSchema::new(
            vec![
                Facet {
                    id: 1,
                    name: "coat".into(),
                    domain: vec!["dark".into(), "light".into()],
                },
                Facet {
                    id: 2,
                    name: "hat".into(),
                    domain: vec!["yes".into(), "no".into()],
                },
            ],
            vec![
                Question {
                    id: 1,
                    prompt: "coat?".into(),
                    facets: vec![1],
                },
                Question {
                    id: 2,
                    prompt: "hat?".into(),
                    facets: vec![2],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn default_schema_is_valid() {
        let schema = FacetSchema::default_schema();
        schema.validate().unwrap();
        assert_eq!(schema.num_questions(), 5);
        let sizes: Vec<usize> = schema.facets.iter().map(|f| f.domain.len()).collect();
        assert_eq!(sizes, vec![2, 3, 6, 4, 4, 4, 5]);
    }

    #[test]
    fn schema_rejects_shared_facet() {
        let mut schema = small_schema();
        schema.questions[1].facets = vec![1, 2];
        assert!(matches!(schema.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn schema_rejects_uncovered_facet() {
        let mut schema = small_schema();
        schema.questions[1].facets.clear();
        assert!(schema.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let config = GalleryConfig::uniform(5, 5, FacetSchema::default_schema());
        let a = generate_gallery(&config, 42).unwrap();
        let b = generate_gallery(&config, 42).unwrap();
        assert_eq!(a.n(), 5);
        assert_eq!(a.num_identities(), 5);
        assert_eq!(gallery_to_json(&a), gallery_to_json(&b));
        let c = generate_gallery(&config, 43).unwrap();
        assert_ne!(gallery_to_json(&a), gallery_to_json(&c));
    }

    #[test]
    fn identities_share_appearance() {
        let config = GalleryConfig::uniform(4, 2, FacetSchema::default_schema());
        let g = generate_gallery(&config, 7).unwrap();
        assert_eq!(g.n(), 4);
        for id in 1..=2 {
            let recs: Vec<_> = g.records_of(id).collect();
            assert!(!recs.is_empty());
            assert!(recs.iter().all(|r| r.facet_values == recs[0].facet_values));
        }
    }

    #[test]
    fn skewed_weights_are_followed() {
        let schema = small_schema();
        let mut config = GalleryConfig::uniform(200, 100, schema);
        config.value_distributions.insert(1, vec![0.9, 0.1]);
        let g = generate_gallery(&config, 1).unwrap();
        let majority = g
            .records
            .iter()
            .filter(|r| r.value(1) == Some("dark"))
            .count() as f64
            / g.n() as f64;
        assert!((majority - 0.9).abs() <= 0.06, "frequency {majority}");
    }

    #[test]
    fn invalid_config_names_constraint() {
        let config = GalleryConfig::uniform(3, 5, small_schema());
        let err = generate_gallery(&config, 0).unwrap_err();
        assert!(err.to_string().contains("K <= n"), "{err}");

        let mut config = GalleryConfig::uniform(3, 2, small_schema());
        config.value_distributions.insert(2, vec![0.0, 0.0]);
        let err = generate_gallery(&config, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("positive sum"));
    }

    #[test]
    fn true_constraints_on_e1() {
        let g = e1_gallery();
        let c = true_constraints(&g, 1, 1).unwrap();
        assert_eq!(c, ConstraintSet::from_pairs([(1, "a")]));

        let schema = FacetSchema::new(
            g.schema.facets.clone(),
            vec![
                Question {
                    id: 1,
                    prompt: "f1".into(),
                    facets: vec![1],
                },
                Question {
                    id: 2,
                    prompt: "f2 and f3".into(),
                    facets: vec![2, 3],
                },
            ],
        )
        .unwrap();
        let g2 = Gallery::new(schema, g.records.clone(), 0).unwrap();
        let c = true_constraints(&g2, 1, 2).unwrap();
        assert_eq!(c, ConstraintSet::from_pairs([(2, "x"), (3, "p")]));

        assert!(matches!(true_constraints(&g, 99, 1), Err(Error::Lookup(_))));
        assert!(matches!(true_constraints(&g, 1, 9), Err(Error::Lookup(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let config = GalleryConfig::uniform(30, 12, FacetSchema::default_schema());
        let g = generate_gallery(&config, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        save_gallery(&g, &path).unwrap();
        assert_eq!(load_gallery(&path).unwrap(), g);
    }

    #[test]
    fn load_reports_missing_field() {
        let g = e1_gallery();
        let mut value: serde_json::Value = serde_json::from_str(&gallery_to_json(&g)).unwrap();
        value["records"][2]
            .as_object_mut()
            .unwrap()
            .remove("identity");
        let err = gallery_from_json(&value.to_string()).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        assert!(err.to_string().contains("identity"), "{err}");
    }

    #[test]
    fn load_rejects_duplicate_image_id() {
        let g = e1_gallery();
        let mut value: serde_json::Value = serde_json::from_str(&gallery_to_json(&g)).unwrap();
        value["records"][1]["image_id"] = 1.into();
        let err = gallery_from_json(&value.to_string()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("duplicate image_id"));
    }
}
