//! Property tests over the tree, outline, and sampling operations.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use c2q_core::c2::{select_background, IntentOp};
use c2q_core::outline::{
    random_outline, synthetic_negative, trim_outline, validate_outline, Outline, TrimError,
};
use c2q_core::qtree::{parse_tree, render_tree, QTree, TreePath};

fn tree_from_seed(seed: u64) -> QTree {
    QTree::build_with(format!("base query {seed}"), |path| {
        format!("aspect {seed}-{path} of the topic")
    })
    .unwrap()
}

proptest! {
    /// parse is the inverse of render on arbitrary valid trees.
    #[test]
    fn render_then_parse_is_identity(seed in 0u64..10_000) {
        let tree = tree_from_seed(seed);
        let rendered = render_tree(&tree);
        let parsed = parse_tree(tree.base_query(), &rendered).unwrap();
        prop_assert_eq!(&parsed, &tree);
        prop_assert_eq!(render_tree(&parsed), rendered);
    }

    /// Any permutation of the same four paths canonicalizes to one value.
    #[test]
    fn outline_value_is_permutation_invariant(seed in 0u64..10_000, shuffle in 0u64..1_000) {
        let tree = tree_from_seed(seed);
        let outline = random_outline(&tree, "t", seed);
        let mut paths: Vec<TreePath> = outline.paths().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        paths.shuffle(&mut rng);
        let rebuilt = Outline::new(&tree, "t", paths).unwrap();
        prop_assert_eq!(rebuilt, outline);
    }

    /// Trim output is a connected 4-subset of its input whenever it succeeds,
    /// and fails exactly when no component of the input has four nodes.
    #[test]
    fn trim_output_is_connected_subset(seed in 0u64..10_000, extra in 5usize..9) {
        let tree = tree_from_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let all = TreePath::all();
        let mut picked: BTreeSet<TreePath> = BTreeSet::new();
        while picked.len() < extra {
            picked.insert(all[rand::Rng::random_range(&mut rng, 0..all.len())]);
        }
        let input: Vec<TreePath> = picked.iter().copied().collect();
        match trim_outline(&input) {
            Ok(out) => {
                prop_assert_eq!(out.len(), 4);
                prop_assert!(out.iter().all(|p| picked.contains(p)));
                prop_assert!(validate_outline(&out).valid());
            }
            Err(TrimError::Untrimmable { .. }) => {
                // cross-check: no connected 4-subset exists at all
                let any_connected = subsets_of_four(&input)
                    .into_iter()
                    .any(|s| validate_outline(&s).valid());
                prop_assert!(!any_connected);
            }
            Err(other) => prop_assert!(false, "unexpected error {:?}", other),
        }
        let _ = tree;
    }
}

fn subsets_of_four(paths: &[TreePath]) -> Vec<Vec<TreePath>> {
    let n = paths.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    out.push(vec![paths[i], paths[j], paths[k], paths[l]]);
                }
            }
        }
    }
    out
}

#[test]
fn ten_thousand_random_outlines_are_valid_and_cover_the_tree() {
    let tree = tree_from_seed(1);
    let mut covered: BTreeSet<TreePath> = BTreeSet::new();
    for seed in 0..10_000u64 {
        let outline = random_outline(&tree, "t", seed);
        assert!(validate_outline(outline.paths()).valid(), "seed {seed}");
        covered.extend(outline.paths().iter().copied());
    }
    assert!(
        covered.len() >= 35,
        "only {} of 39 nodes covered",
        covered.len()
    );
}

#[test]
fn random_outline_is_identical_for_identical_seeds() {
    let tree = tree_from_seed(2);
    for seed in [0u64, 1, 7, 42, u64::MAX] {
        assert_eq!(
            random_outline(&tree, "t", seed),
            random_outline(&tree, "t", seed)
        );
    }
}

#[test]
fn thousand_synthetic_negatives_satisfy_membership() {
    let tree = tree_from_seed(3);
    for i in 0..1_000u64 {
        let intent = if i % 2 == 0 {
            IntentOp::Inclusion
        } else {
            IntentOp::Exclusion
        };
        let background = select_background(&tree, i ^ 0xbac);
        let positive = match intent {
            // positives follow the intent: cover the background for
            // inclusion, avoid it for exclusion
            IntentOp::Inclusion => loop_until(|s| {
                let o = random_outline(&tree, "t", s);
                o.contains(background).then_some(o)
            }),
            IntentOp::Exclusion => loop_until(|s| {
                let o = random_outline(&tree, "t", s);
                (!o.contains(background)).then_some(o)
            }),
        };
        let negative = synthetic_negative(&tree, "t", &positive, background, intent, i).unwrap();
        match intent {
            IntentOp::Inclusion => assert!(!negative.contains(background), "record {i}"),
            IntentOp::Exclusion => assert!(negative.contains(background), "record {i}"),
        }
        assert_ne!(negative, positive, "record {i}");
        assert!(validate_outline(negative.paths()).valid(), "record {i}");
    }
}

fn loop_until(mut f: impl FnMut(u64) -> Option<Outline>) -> Outline {
    for s in 0..10_000 {
        if let Some(o) = f(s) {
            return o;
        }
    }
    panic!("no qualifying outline in 10,000 draws");
}

#[test]
fn background_selection_is_uniform_within_three_sigma() {
    let tree = tree_from_seed(4);
    let draws = 39_000u64;
    let mut counts: std::collections::BTreeMap<TreePath, u64> = std::collections::BTreeMap::new();
    for seed in 0..draws {
        *counts.entry(select_background(&tree, seed)).or_insert(0) += 1;
    }
    assert_eq!(counts.len(), 39, "every node drawn at least once");
    // per node: Binomial(39000, 1/39): mean 1000, sigma ~= 31.2
    let p = 1.0 / 39.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (path, count) in counts {
        let dev = (count as f64 - 1_000.0).abs();
        assert!(
            dev <= 3.0 * sigma,
            "node {path}: count {count} deviates {dev:.1} (3 sigma = {:.1})",
            3.0 * sigma
        );
    }
}
