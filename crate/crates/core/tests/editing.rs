mod common;

use std::collections::BTreeSet;

use common::{random_params, world};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tblind_core::dataset::{build_grid, sample_sets, Corpus, EditRecord};
use tblind_core::editors::{
    apply_edit, base_locality_loss, composite_loss, edit_loss, locality_kl, multimodal_locality_loss,
    AdversarialBatch, EditError, EditOutcome, EditorConfig, LocalityKind, LossBreakdown, TargetSpec,
};
use tblind_core::evaluation::{aggregate, evaluate_suite};
use tblind_core::math::{kl_divergence, neg_log};
use tblind_core::model::{backward, forward_with_trace, Parameters};

struct Fixture {
    corpus: Corpus,
    params: Parameters,
}

fn fixture() -> Fixture {
    let (_, corpus) = world(200, 7);
    let params = random_params(&corpus, 3);
    Fixture { corpus, params }
}

fn batch_for(f: &Fixture, edit: &EditRecord) -> AdversarialBatch {
    let sets = sample_sets(edit, &f.corpus, 1).unwrap();
    AdversarialBatch::draw(edit, &f.corpus, &sets, 1).unwrap()
}

fn perturbed(params: &Parameters, seed: u64, scale: f64) -> Parameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = params.clone();
    for id in Parameters::tensor_ids(&p.config) {
        for x in p.tensor_mut(id).unwrap() {
            *x += scale * rng.random_range(-1.0..1.0);
        }
    }
    p
}

fn outcome(r: Result<EditOutcome, EditError>) -> EditOutcome {
    match r {
        Ok(o) => o,
        Err(EditError::DidNotConverge(o)) => *o,
        Err(e) => panic!("{e}"),
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64).powi(3) + 1e-9).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Compensated sum of `p * ln(p / q)`.
fn kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        let term = pi * (pi / qi).ln();
        let y = term - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

#[test]
fn kl_matches_independent_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let n = rng.random_range(2..40);
        let p = random_distribution(&mut rng, n);
        let q = random_distribution(&mut rng, n);
        let kl = kl_divergence(&p, &q);
        assert!(kl >= 0.0);
        assert!((kl - kl_oracle(&p, &q)).abs() < 1e-8);
        assert_eq!(kl_divergence(&p, &p), 0.0);
    }
}

#[test]
fn edit_loss_closed_forms() {
    assert!((neg_log(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(neg_log(1.0), 0.0);
    assert!(neg_log(0.0).is_finite());
}

#[test]
fn hand_assembled_composite() {
    let b = LossBreakdown::combine(2.0, 0.3, 0.5, [0.1, 1.0, 1.0]);
    assert!((b.total - 1.0).abs() < 1e-15);
}

#[test]
fn locality_terms_vanish_for_identical_parameters() {
    let f = fixture();
    let edit = &f.corpus.records()[0];
    let batch = batch_for(&f, edit);
    let all: BTreeSet<LocalityKind> = LocalityKind::ALL.into_iter().collect();
    assert_eq!(multimodal_locality_loss(&f.params, &f.params, &batch, &all).unwrap(), 0.0);
    let (m, t) = (batch.unrelated_multimodal.as_ref().unwrap(), batch.unrelated_text.as_ref().unwrap());
    assert_eq!(base_locality_loss(&f.params, &f.params, m, t).unwrap(), 0.0);
}

#[test]
fn multimodal_loss_is_the_sum_of_its_terms() {
    let f = fixture();
    let edited = perturbed(&f.params, 5, 0.05);
    for edit in f.corpus.records().iter().take(5) {
        let batch = batch_for(&f, edit);
        let standalone = |k| locality_kl(&f.params, &edited, batch.sample(k).unwrap()).unwrap();
        let all: BTreeSet<LocalityKind> = LocalityKind::ALL.into_iter().collect();
        let sum: f64 = LocalityKind::ALL.into_iter().map(standalone).sum();
        assert!((multimodal_locality_loss(&f.params, &edited, &batch, &all).unwrap() - sum).abs() < 1e-10);
        let ri: BTreeSet<LocalityKind> = [LocalityKind::RI].into_iter().collect();
        assert_eq!(multimodal_locality_loss(&f.params, &edited, &batch, &ri).unwrap(), standalone(LocalityKind::RI));
    }
}

#[test]
fn composite_loss_is_linear_in_each_weight() {
    let f = fixture();
    let edited = perturbed(&f.params, 6, 0.05);
    let edit = &f.corpus.records()[3];
    let batch = batch_for(&f, edit);
    let mut cfg = EditorConfig::composite();
    let base = composite_loss(&f.params, &edited, edit, &batch, &cfg).unwrap();
    assert!(base.total >= cfg.lambdas[0] * base.edit);
    let le = edit_loss(&edited, edit).unwrap();
    assert_eq!(base.edit, le);

    cfg.lambdas = [0.7, 0.0, 0.0];
    let only_edit = composite_loss(&f.params, &edited, edit, &batch, &cfg).unwrap();
    assert_eq!(only_edit.total, 0.7 * le);

    for (i, w) in [(1usize, 2.0), (2, 3.0)] {
        let mut scaled = EditorConfig::composite();
        scaled.lambdas[i] = w;
        let s = composite_loss(&f.params, &edited, edit, &batch, &scaled).unwrap();
        let term = if i == 1 { base.locality } else { base.multimodal };
        assert!((s.total - base.total - (w - 1.0) * term).abs() < 1e-12);
    }
}

#[test]
fn missing_sample_is_reported() {
    let f = fixture();
    let edit = &f.corpus.records()[0];
    let mut batch = batch_for(&f, edit);
    batch.ni = None;
    let cfg = EditorConfig::composite();
    assert!(matches!(composite_loss(&f.params, &f.params, edit, &batch, &cfg), Err(EditError::IncompleteBatch("NI"))));
    assert!(matches!(apply_edit(&f.params, edit, &batch, &cfg), Err(EditError::IncompleteBatch("NI"))));
}

#[test]
fn zero_steps_is_a_bitwise_noop() {
    let f = fixture();
    let edit = &f.corpus.records()[1];
    let batch = batch_for(&f, edit);
    let cfg = EditorConfig { max_steps: 0, ..EditorConfig::composite() };
    match apply_edit(&f.params, edit, &batch, &cfg) {
        Err(EditError::DidNotConverge(o)) => {
            assert_eq!(o.params, f.params);
            assert!(!o.report.converged);
            assert_eq!(o.report.steps, 0);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn only_target_tensors_change_and_base_is_untouched() {
    let f = fixture();
    let snapshot = f.params.clone();
    let edit = &f.corpus.records()[2];
    let batch = batch_for(&f, edit);
    for targets in [TargetSpec::D, TargetSpec::V, TargetSpec::DV] {
        let cfg = EditorConfig { targets: targets.clone(), max_steps: 5, ..EditorConfig::composite() };
        let out = outcome(apply_edit(&f.params, edit, &batch, &cfg));
        let allowed: BTreeSet<String> =
            targets.resolve(&f.params.config).unwrap().iter().map(|id| id.to_string()).collect();
        for (name, norm) in &out.report.delta_norms {
            if !allowed.contains(name) {
                assert_eq!(*norm, 0.0, "{name} changed under {targets}");
            }
        }
        assert!(out.report.delta_norms.iter().any(|(n, d)| allowed.contains(n) && *d > 0.0));
    }
    assert_eq!(f.params, snapshot);
}

#[test]
fn editing_is_deterministic() {
    let f = fixture();
    let edit = &f.corpus.records()[4];
    let batch = batch_for(&f, edit);
    let cfg = EditorConfig { max_steps: 10, ..EditorConfig::composite() };
    let a = outcome(apply_edit(&f.params, edit, &batch, &cfg));
    let b = outcome(apply_edit(&f.params, edit, &batch, &cfg));
    assert_eq!(a.params, b.params);
    assert_eq!(a.report, b.report);
}

#[test]
fn edit_only_reaches_the_target() {
    let mut f = fixture();
    // A normalised final state caps the logit margin at the unembedding scale.
    f.params.unembedding.data.iter_mut().for_each(|x| *x *= 8.0);
    let edit = &f.corpus.records()[5];
    let batch = batch_for(&f, edit);
    let cfg = EditorConfig { learning_rate: 0.5, max_steps: 1000, ..EditorConfig::edit_only() };
    let out = match apply_edit(&f.params, edit, &batch, &cfg) {
        Ok(o) => o,
        Err(EditError::DidNotConverge(o)) => panic!("{:?} steps {}", o.report.losses, o.report.steps),
        Err(e) => panic!("{e}"),
    };
    assert!(out.report.converged);
    assert!(edit_loss(&out.params, edit).unwrap() < cfg.threshold);
}

#[test]
fn image_projection_edits_leave_text_only_cells_identical() {
    let f = fixture();
    for edit in f.corpus.records().iter().take(4) {
        let sets = sample_sets(edit, &f.corpus, 2).unwrap();
        let suite = build_grid(&sets);
        let batch = AdversarialBatch::draw(edit, &f.corpus, &sets, 2).unwrap();
        let cfg = EditorConfig { targets: TargetSpec::V, ..EditorConfig::edit_only() };
        let out = outcome(apply_edit(&f.params, edit, &batch, &cfg));
        assert_ne!(out.params, f.params);
        let results = evaluate_suite(&f.params, &out.params, &suite).unwrap();
        for (r, c) in results.iter().zip(&suite.cells) {
            if c.image.is_none() {
                let x = tblind_core::evaluation::cell_input(c);
                let (pre, _) = forward_with_trace(&f.params, &x).unwrap();
                let (post, _) = forward_with_trace(&out.params, &x).unwrap();
                assert_eq!(pre, post, "{} changed", r.cell.id());
            }
        }
        let report = aggregate(&[results]).unwrap();
        assert_eq!(report.t_loc, 1.0);
    }
}

#[test]
fn edit_loss_gradient_matches_finite_differences_on_targets() {
    let f = fixture();
    let edit = &f.corpus.records()[6];
    let (_, trace) = forward_with_trace(&f.params, &edit.input()).unwrap();
    let grads = backward(&f.params, &trace, edit.target).unwrap();
    let h = 1e-4;
    let mut worst = 0.0f64;
    for id in TargetSpec::D.resolve(&f.params.config).unwrap() {
        let n = f.params.tensor(id).unwrap().len();
        for i in (0..n).step_by(7) {
            let mut plus = f.params.clone();
            plus.tensor_mut(id).unwrap()[i] += h;
            let mut minus = f.params.clone();
            minus.tensor_mut(id).unwrap()[i] -= h;
            let fd = (edit_loss(&plus, edit).unwrap() - edit_loss(&minus, edit).unwrap()) / (2.0 * h);
            let an = grads.tensor(id).unwrap()[i];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-5));
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}
