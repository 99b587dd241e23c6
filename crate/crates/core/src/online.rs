//! Streaming search over a gallery that grows frame by frame.
//!
//! After every frame each description is matched against the cumulative
//! gallery: the best-scoring record is accepted only if its score reaches the
//! threshold, and a description counts as top-k correct when its identity owns
//! one of the first `k` records scoring at or above the threshold.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::{FacetSchema, Gallery, Identity, ImageId, PersonRecord};
use crate::scorer::{score_records, ConstraintSet, ScorerSpec};

pub const DEFAULT_THRESHOLD: f64 = 0.95;
pub const DEFAULT_K_LIST: [usize; 2] = [1, 10];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub frame: u64,
    pub detections: Vec<PersonRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameStream {
    pub frames: Vec<Frame>,
}

impl FrameStream {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let stream = FrameStream { frames };
        stream.check_order()?;
        Ok(stream)
    }

    fn check_order(&self) -> Result<()> {
        if let Some(w) = self.frames.windows(2).find(|w| w[1].frame <= w[0].frame) {
            return Err(Error::validation(format!(
                "frame indices must strictly increase: {} followed by {}",
                w[0].frame, w[1].frame
            )));
        }
        let mut seen = BTreeSet::new();
        for record in self.frames.iter().flat_map(|f| &f.detections) {
            if !seen.insert(record.image_id) {
                return Err(Error::validation(format!(
                    "duplicate image_id {} in stream",
                    record.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self, schema: &FacetSchema) -> Result<()> {
        self.check_order()?;
        for record in self.frames.iter().flat_map(|f| &f.detections) {
            record.validate(schema)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            out.push_str(&serde_json::to_string(f).expect("frame serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let frames = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Parse(format!("stream line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<Frame>>>()?;
        FrameStream::new(frames)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    /// All detections in arrival order.
    pub fn records(&self) -> Vec<PersonRecord> {
        self.frames
            .iter()
            .flat_map(|f| f.detections.iter().cloned())
            .collect()
    }
}

/// Spreads gallery records over `frames` frames (1-based), each record
/// arriving at a uniformly drawn frame. Empty frames are kept.
pub fn synthesize_stream(gallery: &Gallery, frames: u64, seed: u64) -> Result<FrameStream> {
    if frames == 0 {
        return Err(Error::Argument("need at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buckets: Vec<Vec<PersonRecord>> = vec![Vec::new(); frames as usize];
    for record in &gallery.records {
        buckets[rng.gen_range(0..frames as usize)].push(record.clone());
    }
    FrameStream::new(
        buckets
            .into_iter()
            .enumerate()
            .map(|(i, detections)| Frame {
                frame: i as u64 + 1,
                detections,
            })
            .collect(),
    )
}

/// A person of interest: a description plus the identity it truly refers to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoiDescription {
    pub poi_id: u32,
    pub target: Identity,
    pub constraints: ConstraintSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionFile {
    pub version: String,
    pub seed: u64,
    pub descriptions: Vec<PoiDescription>,
}

impl DescriptionFile {
    pub fn new(seed: u64, descriptions: Vec<PoiDescription>) -> Self {
        DescriptionFile {
            version: crate::VERSION.to_string(),
            seed,
            descriptions,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("descriptions serialize");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("description file: {e}")))
    }
}

/// Match state of one description against one gallery snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchState {
    pub best_image: Option<ImageId>,
    pub best_score: Option<f64>,
    pub matched: bool,
    /// One flag per entry of the k list.
    pub topk_correct: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineRow {
    pub frame: u64,
    pub gallery_size: usize,
    pub poi_id: u32,
    pub state: MatchState,
    /// Whether top-k correctness has held at any frame so far.
    pub persistent: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub threshold: f64,
    pub k_list: Vec<usize>,
    pub rows: Vec<OnlineRow>,
}

impl OnlineReport {
    /// `frame,gallery_size,poi_id,best_score,matched,top1,top10` followed by
    /// the persistent flags `top1_persistent,top10_persistent`.
    pub fn to_csv(&self) -> String {
        let mut header = vec![
            "frame".to_string(),
            "gallery_size".into(),
            "poi_id".into(),
            "best_score".into(),
            "matched".into(),
        ];
        header.extend(self.k_list.iter().map(|k| format!("top{k}")));
        header.extend(self.k_list.iter().map(|k| format!("top{k}_persistent")));
        let mut out = header.join(",");
        out.push('\n');
        let flag = |b: bool| if b { "1" } else { "0" };
        for row in &self.rows {
            let mut cells = vec![
                row.frame.to_string(),
                row.gallery_size.to_string(),
                row.poi_id.to_string(),
                row.state
                    .best_score
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
                flag(row.state.matched).to_string(),
            ];
            cells.extend(row.state.topk_correct.iter().map(|b| flag(*b).to_string()));
            cells.extend(row.persistent.iter().map(|b| flag(*b).to_string()));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Per frame, how many descriptions are top-k correct for each k.
    pub fn counts_per_frame(&self) -> Vec<(u64, Vec<usize>)> {
        let mut out: Vec<(u64, Vec<usize>)> = Vec::new();
        for row in &self.rows {
            if out.last().is_none_or(|(f, _)| *f != row.frame) {
                out.push((row.frame, vec![0; self.k_list.len()]));
            }
            let counts = &mut out.last_mut().expect("pushed above").1;
            for (c, hit) in counts.iter_mut().zip(&row.state.topk_correct) {
                *c += *hit as usize;
            }
        }
        out
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )))
    }
}

/// Matches one description against `records` given their precomputed scores.
fn match_scored(
    records: &[PersonRecord],
    scores: &[f64],
    target: Identity,
    threshold: f64,
    k_list: &[usize],
) -> MatchState {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(records[a].image_id.cmp(&records[b].image_id))
    });
    let best = order.first().copied();
    let best_score = best.map(|j| scores[j]);
    let above: Vec<usize> = order
        .into_iter()
        .take_while(|j| scores[*j] >= threshold)
        .collect();
    let topk_correct = k_list
        .iter()
        .map(|k| {
            above
                .iter()
                .take(*k)
                .any(|j| records[*j].identity == target)
        })
        .collect();
    MatchState {
        best_image: best.map(|j| records[j].image_id),
        best_score,
        matched: best_score.is_some_and(|s| s >= threshold),
        topk_correct,
    }
}

/// Matches every description against a fixed gallery in one shot.
pub fn offline_search(
    records: &[PersonRecord],
    schema: &FacetSchema,
    descriptions: &[PoiDescription],
    scorer: &ScorerSpec,
    threshold: f64,
    k_list: &[usize],
) -> Result<Vec<MatchState>> {
    check_threshold(threshold)?;
    scorer.validate()?;
    descriptions
        .par_iter()
        .map(|d| {
            let scores = score_records(scorer, &d.constraints, schema, records)?;
            Ok(match_scored(records, &scores, d.target, threshold, k_list))
        })
        .collect()
}

/// Consumes the stream in order and reports every description after every frame.
pub fn online_search(
    stream: &FrameStream,
    schema: &FacetSchema,
    descriptions: &[PoiDescription],
    scorer: &ScorerSpec,
    threshold: f64,
    k_list: &[usize],
) -> Result<OnlineReport> {
    check_threshold(threshold)?;
    scorer.validate()?;
    stream.validate(schema)?;
    for d in descriptions {
        d.constraints.validate(schema)?;
    }
    if k_list.contains(&0) {
        return Err(Error::Argument("k values must be at least 1".into()));
    }

    let mut gallery: Vec<PersonRecord> = Vec::new();
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); descriptions.len()];
    let mut persistent = vec![vec![false; k_list.len()]; descriptions.len()];
    let mut rows = Vec::new();
    for frame in &stream.frames {
        gallery.extend(frame.detections.iter().cloned());
        let states = descriptions
            .par_iter()
            .zip(scores.par_iter_mut())
            .map(|(d, s)| {
                let fresh = score_records(scorer, &d.constraints, schema, &frame.detections)?;
                s.extend(fresh.iter());
                Ok(match_scored(&gallery, s, d.target, threshold, k_list))
            })
            .collect::<Result<Vec<_>>>()?;
        for ((d, state), seen) in descriptions.iter().zip(states).zip(&mut persistent) {
            for (p, hit) in seen.iter_mut().zip(&state.topk_correct) {
                *p |= *hit;
            }
            rows.push(OnlineRow {
                frame: frame.frame,
                gallery_size: gallery.len(),
                poi_id: d.poi_id,
                state,
                persistent: seen.clone(),
            });
        }
    }
    Ok(OnlineReport {
        threshold,
        k_list: k_list.to_vec(),
        rows,
    })
}
