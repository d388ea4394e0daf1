//! Retrieval metrics against scan oracles.

mod common;

use common::suites;
use common::*;
use vireid_core::evalkit;
use vireid_core::{Matrix, Metric};

#[test]
fn metric_suite() {
    let o = suites::metric_suite(300);
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn perfect_ranking_scores_one() {
    assert_eq!(suites::perfect_ranking(), (1.0, 1.0, 1.0));
}

#[test]
fn ap_and_inp_examples() {
    let (ap, inp) = suites::ap_inp_example();
    assert!((ap - 0.833_333_333_333).abs() < 1e-9);
    assert!((inp - 0.666_666_666_667).abs() < 1e-9);
    assert!((ap_oracle(&[1, 3]) - ap).abs() < 1e-15);
    assert!((inp_oracle(&[1, 3]) - inp).abs() < 1e-15);
}

#[test]
fn all_relevant_last() {
    // 2 relevant among 5, placed at ranks 4 and 5
    let res = evalkit::RankingResult::from_relevance(vec![vec![false, false, false, true, true]]).unwrap();
    let want = (1.0 / 4.0 + 2.0 / 5.0) / 2.0;
    assert!((evalkit::mean_ap(&res) - want).abs() < 1e-15);
    assert!((ap_oracle(&[4, 5]) - want).abs() < 1e-15);
    assert!((evalkit::minp(&res) - 2.0 / 5.0).abs() < 1e-15);
}

#[test]
fn ties_go_to_lower_gallery_index() {
    let q = Matrix::from_rows(&[vec![0.0]]).unwrap();
    let g = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![1.0]]).unwrap();
    let res = evalkit::rank(&q, &g, &[0], &[1, 0, 0], Metric::Euclidean).unwrap();
    assert_eq!(res.queries[0].order, vec![0, 1, 2]);
    let ranks = relevant_ranks(&[vec![0.0]], &[0], &[vec![1.0], vec![-1.0], vec![1.0]], &[1, 0, 0]);
    assert_eq!(ranks, vec![vec![2, 3]]);
}
