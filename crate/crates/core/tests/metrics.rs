mod common;

use std::collections::BTreeMap;

use common::{random_params, world};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tblind_core::dataset::{build_grid, sample_sets, EvalSuite};
use tblind_core::evaluation::{aggregate, evaluate_suite, exact_match, satisfied, CellResult, MetricReport};
use tblind_core::model::TokenId;

/// Raw answers for every cell of a suite, drawn so that the target and the
/// pre-edit answer both occur often.
fn random_results(suite: &EvalSuite, rng: &mut ChaCha8Rng) -> Vec<CellResult> {
    let e = &suite.edit;
    let pool = [e.target, e.answer, TokenId(0), TokenId(1)];
    suite
        .cells
        .iter()
        .map(|c| {
            let pre = pool[rng.random_range(0..pool.len())];
            let post = if rng.random_bool(0.3) { pre } else { pool[rng.random_range(0..pool.len())] };
            CellResult {
                edit_id: e.id,
                cell: c.cell,
                pre,
                post,
                target: e.target,
                pre_edit_answer: e.answer,
                satisfied: satisfied(c.cell.expectation, pre, post, e.target),
                consistent: pre == post,
            }
        })
        .collect()
}

/// Second implementation keyed purely on cell ids and raw answers.
fn oracle(results: &[Vec<CellResult>]) -> BTreeMap<&'static str, f64> {
    let groups: [(&str, &[&str], u8); 8] = [
        ("rel", &["T1I1"], b't'),
        ("t_gen", &["T1'I1"], b't'),
        ("i_gen", &["T1I1'"], b't'),
        ("t_loc", &["T4I4"], b'p'),
        ("i_loc", &["T3I3"], b'p'),
        ("ri_loc", &["T1I3", "T3I1"], b'n'),
        ("ni_loc", &["T1I4", "T2I4"], b'n'),
        ("ci_loc", &["T1I2", "T2I1", "T2I2"], b'n'),
    ];
    let mut out = BTreeMap::new();
    for (name, ids, rule) in groups {
        let (mut hit, mut n) = (0usize, 0usize);
        for r in results.iter().flatten() {
            if !ids.contains(&r.cell.id().as_str()) {
                continue;
            }
            n += 1;
            let ok = match rule {
                b't' => r.post.0 == r.target.0,
                b'n' => r.post.0 != r.target.0,
                _ => r.post.0 == r.pre.0,
            };
            hit += usize::from(ok);
        }
        out.insert(name, hit as f64 / n as f64);
    }
    out
}

fn metrics(r: &MetricReport) -> BTreeMap<&'static str, f64> {
    [
        ("rel", r.rel),
        ("t_gen", r.t_gen),
        ("i_gen", r.i_gen),
        ("t_loc", r.t_loc),
        ("i_loc", r.i_loc),
        ("ri_loc", r.ri_loc),
        ("ni_loc", r.ni_loc),
        ("ci_loc", r.ci_loc),
    ]
    .into_iter()
    .collect()
}

fn suites(n: usize) -> Vec<EvalSuite> {
    let (_, corpus) = world(400, 7);
    corpus.records().iter().take(n).map(|e| build_grid(&sample_sets(e, &corpus, 3).unwrap())).collect()
}

#[test]
fn metrics_agree_with_brute_force_rederivation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let all = suites(100);
    for suite in &all {
        let n_edits = rng.random_range(1..4);
        let results: Vec<Vec<CellResult>> = (0..n_edits).map(|_| random_results(suite, &mut rng)).collect();
        let report = aggregate(&results).unwrap();
        assert_eq!(metrics(&report), oracle(&results));
        let nine: Vec<f64> = ["T4I4", "T3I3", "T3I1", "T1I2", "T1I3", "T1I4", "T2I1", "T2I2", "T2I4"]
            .iter()
            .map(|id| report.per_pair[*id])
            .collect();
        assert!((report.mean_nine - nine.iter().sum::<f64>() / 9.0).abs() <= 1e-12);
        for v in metrics(&report).values() {
            assert!((0.0..=1.0).contains(v));
        }
    }
}

#[test]
fn identical_models_keep_every_preserving_cell() {
    let (_, corpus) = world(300, 7);
    let params = random_params(&corpus, 1);
    let mut results = Vec::new();
    for e in corpus.records().iter().take(10) {
        let suite = build_grid(&sample_sets(e, &corpus, 0).unwrap());
        results.push(evaluate_suite(&params, &params, &suite).unwrap());
    }
    let report = aggregate(&results).unwrap();
    assert_eq!(report.t_loc, 1.0);
    assert_eq!(report.i_loc, 1.0);
    assert!(report.consistency.values().all(|&v| v == 1.0));
}

#[test]
fn always_target_editor_is_totally_blind() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let results: Vec<Vec<CellResult>> = suites(5)
        .iter()
        .map(|s| {
            random_results(s, &mut rng)
                .into_iter()
                .map(|mut r| {
                    r.post = r.target;
                    r.satisfied = satisfied(r.cell.expectation, r.pre, r.post, r.target);
                    r
                })
                .collect()
        })
        .collect();
    let report = aggregate(&results).unwrap();
    assert_eq!((report.rel, report.t_gen, report.i_gen), (1.0, 1.0, 1.0));
    assert_eq!((report.ri_loc, report.ni_loc, report.ci_loc), (0.0, 0.0, 0.0));
}

#[test]
fn aggregation_is_idempotent_and_order_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let all = suites(6);
    let results: Vec<Vec<CellResult>> = all.iter().map(|s| random_results(s, &mut rng)).collect();
    let single = aggregate(&results[..1]).unwrap();
    let repeated = aggregate(&vec![results[0].clone(); 4]).unwrap();
    assert_eq!(metrics(&single), metrics(&repeated));
    let mut reversed = results.clone();
    reversed.reverse();
    assert_eq!(metrics(&aggregate(&results).unwrap()), metrics(&aggregate(&reversed).unwrap()));
    assert!(aggregate(&[]).is_err());
}

#[test]
fn exact_match_is_token_equality() {
    for t in 0..20 {
        assert!(exact_match(TokenId(t), TokenId(t)));
        assert!(!exact_match(TokenId(t), TokenId(t + 1)));
    }
}
