//! Two-step reasoning over decoded graphs against exhaustive enumeration.

mod common;

use common::{exact_cases, fallback_cases};
use dsg::training::two_step_reason;

#[test]
fn fallback_matches_enumeration_on_200_graphs() {
    for (k, (sg, q, (i, j))) in fallback_cases(9, 200).iter().enumerate() {
        assert_eq!(two_step_reason(sg, q).unwrap(), (vec![*i], vec![*j]), "graph {k}");
    }
}

#[test]
fn exact_triplets_return_all_involved_nodes() {
    for (k, (sg, q, want)) in exact_cases(10, 100).iter().enumerate() {
        assert_eq!(&two_step_reason(sg, q).unwrap(), want, "graph {k}");
    }
}
