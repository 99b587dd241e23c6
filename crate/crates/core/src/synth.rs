//! Random benchmark instances: a gallery plus truthful queries.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::{
    generate_gallery, Facet, FacetId, FacetSchema, Gallery, GalleryConfig, Identity, Question,
    QuestionId,
};
use crate::query::{truthful_queries, Query};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub min_images: usize,
    pub max_images: usize,
    pub min_questions: usize,
    pub max_questions: usize,
    /// Facets per question are drawn from `1..=max_facets_per_question`.
    pub max_facets_per_question: usize,
    /// Domain sizes are drawn from `2..=max_domain`.
    pub max_domain: usize,
    /// Facet weights are `u^a` with `u ~ U(0,1)` and `a ~ U(0, skew)`;
    /// 0 gives uniform facets, larger values make facets unevenly informative.
    pub skew: f64,
    /// When false, every image is its own identity.
    pub repeated_identities: bool,
}

impl Default for InstanceParams {
    fn default() -> Self {
        InstanceParams {
            min_images: 2,
            max_images: 40,
            min_questions: 1,
            max_questions: 6,
            max_facets_per_question: 2,
            max_domain: 4,
            skew: 2.0,
            repeated_identities: true,
        }
    }
}

impl InstanceParams {
    fn validate(&self) -> Result<()> {
        if self.min_images == 0 || self.min_images > self.max_images {
            return Err(Error::config(
                "image range must be nonempty and start at 1 or more",
            ));
        }
        if self.min_questions == 0 || self.min_questions > self.max_questions {
            return Err(Error::config(
                "question range must be nonempty and start at 1 or more",
            ));
        }
        if self.max_facets_per_question == 0 || self.max_domain < 2 {
            return Err(Error::config(
                "need at least one facet per question and domains of 2+",
            ));
        }
        if !(self.skew >= 0.0 && self.skew.is_finite()) {
            return Err(Error::config("skew must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub gallery: Gallery,
    pub queries: Vec<Query>,
}

/// Per-facet weights `u_i^a`, with `a` drawn once per facet.
fn skewed_weights<R: Rng>(len: usize, skew: f64, rng: &mut R) -> Vec<f64> {
    let exponent = rng.gen_range(0.0..=skew);
    (0..len)
        .map(|_| rng.gen_range(0.05f64..1.0).powf(exponent))
        .collect()
}

pub fn random_schema<R: Rng>(params: &InstanceParams, rng: &mut R) -> Result<FacetSchema> {
    let n_q = rng.gen_range(params.min_questions..=params.max_questions);
    let mut facets = Vec::new();
    let mut questions = Vec::new();
    let mut next: FacetId = 1;
    for q in 1..=n_q as QuestionId {
        let count = rng.gen_range(1..=params.max_facets_per_question);
        let ids: Vec<FacetId> = (next..next + count as FacetId).collect();
        next += count as FacetId;
        for id in &ids {
            let size = rng.gen_range(2..=params.max_domain);
            facets.push(Facet {
                id: *id,
                name: format!("facet{id}"),
                domain: (0..size).map(|v| format!("v{v}")).collect(),
            });
        }
        questions.push(Question {
            id: q,
            prompt: format!("Describe aspect {q}."),
            facets: ids,
        });
    }
    FacetSchema::new(facets, questions)
}

/// A random gallery with every identity queried truthfully.
pub fn random_instance(params: &InstanceParams, seed: u64) -> Result<Instance> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = random_schema(params, &mut rng)?;
    let n = rng.gen_range(params.min_images..=params.max_images);
    let k = if params.repeated_identities {
        rng.gen_range(n.div_ceil(2)..=n)
    } else {
        n
    };
    let value_distributions: BTreeMap<FacetId, Vec<f64>> = schema
        .facets
        .iter()
        .map(|f| (f.id, skewed_weights(f.domain.len(), params.skew, &mut rng)))
        .collect();
    let config = GalleryConfig {
        n,
        identities: k,
        schema,
        value_distributions,
    };
    let gallery = generate_gallery(&config, rng.gen())?;
    let targets: Vec<Identity> = (1..=gallery.num_identities()).collect();
    let queries = truthful_queries(&gallery, &targets)?;
    Ok(Instance { gallery, queries })
}

/// The default five-question schema with unevenly skewed facet distributions.
pub fn heterogeneous_gallery_config(
    n: usize,
    identities: usize,
    skew: f64,
    seed: u64,
) -> GalleryConfig {
    let schema = FacetSchema::default_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let value_distributions = schema
        .facets
        .iter()
        .map(|f| (f.id, skewed_weights(f.domain.len(), skew, &mut rng)))
        .collect();
    GalleryConfig {
        n,
        identities,
        schema,
        value_distributions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_valid_and_deterministic() {
        let params = InstanceParams::default();
        for seed in 0..20 {
            let a = random_instance(&params, seed).unwrap();
            a.gallery.validate().unwrap();
            assert!(a.gallery.n() <= 40);
            assert!(a.gallery.schema.num_questions() <= 6);
            assert_eq!(a.queries.len(), a.gallery.num_identities() as usize);
            for q in &a.queries {
                q.validate(&a.gallery).unwrap();
            }
            assert_eq!(a, random_instance(&params, seed).unwrap());
        }
    }

    #[test]
    fn heterogeneous_config_is_valid() {
        let config = heterogeneous_gallery_config(50, 30, 3.0, 1);
        config.validate().unwrap();
        generate_gallery(&config, 2).unwrap();
    }
}
