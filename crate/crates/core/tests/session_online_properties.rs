use std::sync::Arc;

use proptest::prelude::*;
use qsearch_core::online::{offline_search, online_search, synthesize_stream, PoiDescription};
use qsearch_core::scorer::candidate_set;
use qsearch_core::session::{simulate_session, sweep_budgets, SessionConfig};
use qsearch_core::synth::{random_instance, InstanceParams};
use qsearch_core::{ConstraintSet, ScorerSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn entropy_trace_is_log_candidate_count(seed in any::<u64>()) {
        let inst = random_instance(&InstanceParams::default(), seed).unwrap();
        let g = Arc::new(inst.gallery);
        let config = SessionConfig::new(ScorerSpec::ideal(), g.schema.question_ids(), 0.0);
        let target = inst.queries[(seed % inst.queries.len() as u64) as usize].target;
        let sim = simulate_session(&g, &config, target, 0.0, seed).unwrap();
        let q = qsearch_core::Query::truthful(&g, target).unwrap();
        for (step, e) in sim.entropy_trace.iter().enumerate() {
            let d = q.description(&config.order[..=step]).unwrap();
            let size = candidate_set(&d, &g).unwrap().len() as f64;
            prop_assert!((e - size.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn transcripts_replay_exactly(seed in any::<u64>(), noise in 0.0f64..0.5, budget in 0.0f64..2.0) {
        let inst = random_instance(&InstanceParams::default(), seed).unwrap();
        let g = Arc::new(inst.gallery);
        let config = SessionConfig::new(ScorerSpec::noisy(0.2), g.schema.question_ids(), budget);
        let sim = simulate_session(&g, &config, 1, noise, seed).unwrap();
        let replayed = sim.transcript.replay(Arc::clone(&g), config).unwrap();
        prop_assert_eq!(replayed.transcript().to_jsonl(), sim.transcript.to_jsonl());
    }

    #[test]
    fn sweeps_are_monotone_in_budget(seed in any::<u64>()) {
        let inst = random_instance(&InstanceParams::default(), seed).unwrap();
        let g = Arc::new(inst.gallery);
        let config = SessionConfig::new(ScorerSpec::ideal(), g.schema.question_ids(), 0.0);
        let targets: Vec<u32> = inst.queries.iter().map(|q| q.target).collect();
        let budgets: Vec<f64> = (0..12).map(|i| i as f64 * 0.35).collect();
        let rows = sweep_budgets(&g, &config, &targets, &budgets, 0.0, seed).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].total_queries <= w[0].total_queries);
            prop_assert!(w[1].mean_rank >= w[0].mean_rank - 1e-12);
        }
    }
}

#[test]
fn online_gating_retention_and_offline_equivalence() {
    for seed in 0..50u64 {
        let inst = random_instance(&InstanceParams::default(), seed).unwrap();
        let g = &inst.gallery;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = rng.gen_range(1..12);
        let stream = synthesize_stream(g, frames, seed).unwrap();

        // Full truthful descriptions plus a few fuzzed partial ones.
        let mut descriptions: Vec<PoiDescription> = inst
            .queries
            .iter()
            .take(6)
            .enumerate()
            .map(|(i, q)| PoiDescription {
                poi_id: i as u32 + 1,
                target: q.target,
                constraints: q.description(&g.schema.question_ids()).unwrap(),
            })
            .collect();
        for extra in 0..3u32 {
            let q = &inst.queries[rng.gen_range(0..inst.queries.len())];
            let asked: Vec<u32> = g
                .schema
                .question_ids()
                .into_iter()
                .filter(|_| rng.gen_bool(0.5))
                .collect();
            descriptions.push(PoiDescription {
                poi_id: 100 + extra,
                target: q.target,
                constraints: q.description(&asked).unwrap(),
            });
        }

        for scorer in [
            ScorerSpec::ideal(),
            ScorerSpec::noisy(0.02),
            ScorerSpec::noisy(0.3),
        ] {
            let report =
                online_search(&stream, &g.schema, &descriptions, &scorer, 0.95, &[1, 10]).unwrap();
            for row in &report.rows {
                if row.state.matched {
                    assert!(row.state.best_score.unwrap() >= 0.95);
                }
            }
            for w in report.rows.windows(2) {
                assert!(w[1].gallery_size >= w[0].gallery_size);
            }

            let last_frame = stream.frames.last().unwrap().frame;
            let final_rows: Vec<_> = report
                .rows
                .iter()
                .filter(|r| r.frame == last_frame)
                .collect();
            let offline = offline_search(
                &stream.records(),
                &g.schema,
                &descriptions,
                &scorer,
                0.95,
                &[1, 10],
            )
            .unwrap();
            assert_eq!(final_rows.len(), offline.len());
            for (row, state) in final_rows.iter().zip(&offline) {
                assert_eq!(&row.state, state, "seed {seed}");
            }
        }

        // Retention: a description uniquely satisfied by its identity stays top-1 once seen.
        let report = online_search(
            &stream,
            &g.schema,
            &descriptions,
            &ScorerSpec::ideal(),
            0.95,
            &[1, 10],
        )
        .unwrap();
        for d in &descriptions {
            let cands = candidate_set(&d.constraints, g).unwrap();
            let unique = cands
                .iter()
                .all(|id| g.record(*id).unwrap().identity == d.target);
            if !unique {
                continue;
            }
            let mut arrived = false;
            for row in report.rows.iter().filter(|r| r.poi_id == d.poi_id) {
                let frame = stream.frames.iter().find(|f| f.frame == row.frame).unwrap();
                arrived |= frame.detections.iter().any(|r| r.identity == d.target);
                if arrived {
                    assert!(row.state.topk_correct[0], "seed {seed} poi {}", d.poi_id);
                }
            }
        }
    }
}

#[test]
fn empty_description_never_matches_below_threshold() {
    let inst = random_instance(&InstanceParams::default(), 3).unwrap();
    let stream = synthesize_stream(&inst.gallery, 5, 3).unwrap();
    let d = vec![PoiDescription {
        poi_id: 1,
        target: 1,
        constraints: ConstraintSet::new(),
    }];
    let report = online_search(
        &stream,
        &inst.gallery.schema,
        &d,
        &ScorerSpec::noisy(0.1),
        1.0,
        &[1],
    )
    .unwrap();
    assert!(report
        .rows
        .iter()
        .all(|r| r.state.best_score.is_none_or(|s| s == 1.0)));
}
