mod common;

use std::collections::BTreeMap;

use common::world;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tblind_core::dataset::{
    build_grid, classify, generate_corpus, retrieve_similar, sample_sets, Corpus, DatasetError, EditRecord,
    Expectation, MetricClass, SampledSets, WorldConfig, CANONICAL_NINE,
};
use tblind_core::math::cosine;

/// Linear scan: best similarity, then lowest id, among eligible records.
fn exhaustive_retrieve<'a>(edit: &EditRecord, corpus: &'a Corpus) -> Option<&'a EditRecord> {
    let mut best: Option<(&EditRecord, f64)> = None;
    for r in corpus.records() {
        if r.id == edit.id || r.question == edit.question || r.answer == edit.target {
            continue;
        }
        let s = cosine(&edit.embedding, &r.embedding);
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && r.id < b.id),
        };
        if better {
            best = Some((r, s));
        }
    }
    best.map(|(r, _)| r)
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

#[test]
fn priority_scan_agrees_with_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..100u64 {
        let (_, corpus) = world(rng.random_range(5..60), k);
        // Half the corpora get continuous embeddings so ties are rare; the rest keep the tied generator vectors.
        let corpus = if k % 2 == 0 {
            let records = corpus
                .records()
                .iter()
                .cloned()
                .map(|mut r| {
                    r.embedding = random_unit(&mut rng, 5);
                    r
                })
                .collect();
            Corpus::new(corpus.vocab().clone(), records).unwrap()
        } else {
            corpus
        };
        for edit in corpus.records() {
            let fast = retrieve_similar(edit, &corpus).ok().map(|r| r.record.id);
            let slow = exhaustive_retrieve(edit, &corpus).map(|r| r.id);
            assert_eq!(fast, slow, "corpus {k}, edit {}", edit.id);
        }
    }
}

#[test]
fn retrieval_skips_candidates_answering_the_target() {
    let (_, corpus) = world(300, 7);
    for edit in corpus.records() {
        let hit = retrieve_similar(edit, &corpus).unwrap();
        assert_ne!(hit.record.answer, edit.target);
        assert_ne!(hit.record.id, edit.id);
    }
}

#[test]
fn single_record_has_no_neighbour() {
    let (_, corpus) = world(1, 7);
    let edit = &corpus.records()[0];
    assert_eq!(retrieve_similar(edit, &corpus).unwrap_err(), DatasetError::NoCandidate { edit: edit.id });
}

#[test]
fn same_template_neighbours_outrank_other_templates() {
    let (_, corpus) = world(150, 3);
    let recs = corpus.records();
    for a in recs {
        let ta = a.slots.as_ref().unwrap().template;
        let mut same = f64::INFINITY;
        let mut other = f64::NEG_INFINITY;
        for b in recs.iter().filter(|b| b.id != a.id) {
            let s = cosine(&a.embedding, &b.embedding);
            if b.slots.as_ref().unwrap().template == ta {
                same = same.min(s);
            } else {
                other = other.max(s);
            }
        }
        assert!(same > other);
    }
}

#[test]
fn retrieved_question_shares_the_template() {
    let (_, corpus) = world(2000, 7);
    for edit in corpus.records().iter().step_by(13) {
        let hit = retrieve_similar(edit, &corpus).unwrap();
        assert_eq!(hit.record.slots.as_ref().unwrap().template, edit.slots.as_ref().unwrap().template);
    }
}

#[test]
fn corpus_generation_is_deterministic_and_unique() {
    let (_, a) = world(500, 11);
    let (_, b) = world(500, 11);
    assert_eq!(a, b);
    let mut seen = std::collections::BTreeSet::new();
    for r in a.records() {
        assert!(seen.insert((r.image.attrs.clone(), r.question.clone())));
        assert_ne!(r.answer, r.target);
        assert!((r.embedding.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn oversized_request_exhausts_the_world() {
    let cfg = WorldConfig { n_objects: 1, n_attributes: 1, n_values: 2, n_records: 100, ..WorldConfig::default() };
    assert!(matches!(generate_corpus(&cfg), Err(DatasetError::WorldExhausted { requested: 100, .. })));
}

#[test]
fn sampled_sets_respect_the_disjointness_rules() {
    let (_, corpus) = world(2000, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..200u64 {
        let edit = &corpus.records()[rng.random_range(0..corpus.len())];
        let sets = sample_sets(edit, &corpus, seed).unwrap();
        assert_eq!(sets, sample_sets(edit, &corpus, seed).unwrap());
        let p = sets.provenance.clone().unwrap();
        let related = corpus.get(p.related).unwrap();
        let unrelated = corpus.get(p.unrelated).unwrap();
        let text_only = corpus.get(p.text_only).unwrap();
        assert_eq!(related.id, retrieve_similar(edit, &corpus).unwrap().record.id);
        assert_ne!(sets.answers[&(2, 2)], edit.target);

        let (es, us) = (edit.slots.as_ref().unwrap(), unrelated.slots.as_ref().unwrap());
        assert_ne!(es.object, us.object);
        assert_ne!(es.attribute, us.attribute);
        for key in [es.fact_key(), us.fact_key()] {
            assert_ne!(edit.image.attrs.get(&key), unrelated.image.attrs.get(&key));
        }
        assert!(!text_only.slots.as_ref().unwrap().overlaps(es));
        let ids = [edit.id, related.id, unrelated.id, text_only.id];
        assert_eq!(ids.iter().collect::<std::collections::BTreeSet<_>>().len(), 4);
        let texts: std::collections::BTreeSet<_> = sets.texts.iter().collect();
        assert_eq!(texts.len(), 4);
        assert!(sets.images[3].is_none());
        assert_eq!(sets.images[0].as_ref(), Some(&edit.image));
    }
}

#[test]
fn tiny_corpus_cannot_supply_unrelated_sets() {
    let (_, corpus) = world(3, 7);
    let err = sample_sets(&corpus.records()[0], &corpus, 0).unwrap_err();
    assert!(matches!(err, DatasetError::CorpusTooSmall { .. } | DatasetError::NoCandidate { .. }));
}

#[test]
fn full_grid_has_sixteen_pairs_and_fifteen_locality_cells() {
    let (_, corpus) = world(400, 7);
    let edit = &corpus.records()[0];
    let suite = build_grid(&sample_sets(edit, &corpus, 0).unwrap());
    assert_eq!(suite.cells.iter().filter(|c| c.cell.variant == tblind_core::dataset::Variant::Plain).count(), 16);
    assert_eq!(suite.locality_cells().count(), 15);
    assert_eq!(suite.cells.len(), 18);
    let mut counts: BTreeMap<MetricClass, usize> = BTreeMap::new();
    for c in suite.locality_cells() {
        *counts.entry(c.cell.class).or_default() += 1;
    }
    assert_eq!(counts[&MetricClass::CILoc], 3);
    assert_eq!(counts[&MetricClass::NILoc], 2);
    assert_eq!(counts[&MetricClass::RILoc], 2);
    assert_eq!(counts[&MetricClass::TLoc], 1);
    assert_eq!(counts[&MetricClass::ILoc], 1);
    assert_eq!(counts[&MetricClass::Supplementary], 6);
    let family = |f| suite.locality_cells().filter(|c| c.cell.family == Some(f)).count();
    assert_eq!(family(MetricClass::NILoc), 1);
    assert_eq!(family(MetricClass::RILoc), 4);
    assert_eq!(suite.canonical_nine().count(), 9);
    for (t, i) in CANONICAL_NINE {
        assert!(suite.cell(t, i).unwrap().cell.is_canonical());
    }
}

#[test]
fn two_by_two_grid_is_all_compositional() {
    let (_, corpus) = world(50, 7);
    let (e, r) = (&corpus.records()[0], &corpus.records()[1]);
    let sets = SampledSets::from_parts(
        e.clone(),
        vec![e.question.clone(), r.question.clone()],
        vec![Some(e.image.clone()), Some(r.image.clone())],
    );
    let suite = build_grid(&sets);
    assert_eq!(suite.locality_cells().count(), 3);
    assert!(suite.locality_cells().all(|c| c.cell.class == MetricClass::CILoc));
}

#[test]
fn grid_size_is_k_squared_minus_one() {
    let (_, corpus) = world(50, 7);
    let e = &corpus.records()[0];
    for k in 1..=4 {
        let texts = corpus.records()[..k].iter().map(|r| r.question.clone()).collect();
        let images = corpus.records()[..k].iter().map(|r| Some(r.image.clone())).collect();
        let suite = build_grid(&SampledSets::from_parts(e.clone(), texts, images));
        assert_eq!(suite.locality_cells().count(), k * k - 1);
    }
}

#[test]
fn expectations_follow_the_class() {
    for t in 1..=4 {
        for i in 1..=4 {
            let (class, _) = classify(t, i);
            let expected = match class {
                MetricClass::Rel | MetricClass::TGen | MetricClass::IGen => Expectation::EqualsTarget,
                MetricClass::RILoc | MetricClass::NILoc | MetricClass::CILoc => Expectation::NotTarget,
                _ => Expectation::EqualsPreEdit,
            };
            assert_eq!(class.expectation(), expected);
        }
    }
    assert_eq!(classify(1, 1).0, MetricClass::Rel);
    assert_eq!(classify(3, 4), (MetricClass::Supplementary, Some(MetricClass::NILoc)));
}
