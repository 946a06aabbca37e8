//! Independent oracles checked against the library implementations:
//! a brute-force C(39,4) connectivity scan for outline enumeration, and an
//! exact integer binomial sum for the McNemar test.

use std::collections::BTreeSet;

use c2q_core::outline::enumerate_outlines;
use c2q_core::qtree::{parse_tree, QTree, TreePath};
use c2q_core::stats::{mcnemar_exact, Contingency};

const CANONICAL: &str = include_str!("fixtures/canonical_tree.txt");

// --- brute-force outline oracle --------------------------------------------

/// Adjacency rebuilt from scratch: parent-child plus same-parent siblings.
fn oracle_adjacent(a: &[u8], b: &[u8]) -> bool {
    if a == b {
        return false;
    }
    let parent_child = a.len() + 1 == b.len() && b.starts_with(a);
    let child_parent = b.len() + 1 == a.len() && a.starts_with(b);
    let siblings = a.len() == b.len() && a[..a.len() - 1] == b[..b.len() - 1];
    parent_child || child_parent || siblings
}

fn oracle_connected(subset: &[&[u8]]) -> bool {
    let mut seen = vec![false; subset.len()];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..subset.len() {
            if !seen[j] && oracle_adjacent(subset[i], subset[j]) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Scans all C(39,4) = 82,251 subsets and keeps the connected ones.
fn oracle_outline_sets() -> BTreeSet<Vec<String>> {
    let paths: Vec<Vec<u8>> = TreePath::all()
        .into_iter()
        .map(|p| p.indices().to_vec())
        .collect();
    let n = paths.len();
    assert_eq!(n, 39);
    let mut out = BTreeSet::new();
    let mut scanned = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    scanned += 1;
                    let subset = [
                        paths[i].as_slice(),
                        paths[j].as_slice(),
                        paths[k].as_slice(),
                        paths[l].as_slice(),
                    ];
                    if oracle_connected(&subset) {
                        out.insert(
                            subset
                                .iter()
                                .map(|p| {
                                    p.iter()
                                        .map(u8::to_string)
                                        .collect::<Vec<_>>()
                                        .join(".")
                                })
                                .collect(),
                        );
                    }
                }
            }
        }
    }
    assert_eq!(scanned, 82_251);
    out
}

fn enumerated_sets(tree: &QTree) -> BTreeSet<Vec<String>> {
    enumerate_outlines(tree, "t")
        .into_iter()
        .map(|o| o.paths().iter().map(|p| p.to_string()).collect())
        .collect()
}

fn random_tree(seed: u64) -> QTree {
    QTree::build_with(format!("base query {seed}"), |path| {
        format!("subquery {seed}-{path} of the base")
    })
    .unwrap()
}

#[test]
fn enumeration_matches_brute_force_on_canonical_tree() {
    let oracle = oracle_outline_sets();
    assert_eq!(oracle.len(), 363);
    let tree = parse_tree("Describe the film The Woman Hunt.", CANONICAL).unwrap();
    assert_eq!(enumerated_sets(&tree), oracle);
}

#[test]
fn enumeration_matches_brute_force_on_random_trees() {
    let oracle = oracle_outline_sets();
    for seed in 0..10 {
        let tree = random_tree(seed);
        assert_eq!(enumerated_sets(&tree), oracle, "seed {seed}");
    }
}

// --- exact binomial oracle ---------------------------------------------------

/// Integer-exact two-sided McNemar p for small n: 2 * sum C(n,i) / 2^n.
fn oracle_p(b: u64, c: u64) -> f64 {
    let n = (b + c) as u128;
    let m = b.min(c) as u128;
    // Pascal row n as exact integers
    let mut row = vec![1u128; 1];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let sum: u128 = row.iter().take(m as usize + 1).sum();
    let p = 2.0 * (sum as f64) / 2f64.powi(n as i32);
    p.min(1.0)
}

#[test]
fn mcnemar_agrees_with_integer_oracle_exhaustively() {
    for n in 1..=30u64 {
        for b in 0..=n {
            let c = n - b;
            let got = mcnemar_exact(&Contingency::new(0, b, c, 0)).unwrap();
            assert_eq!(got.statistic, b.min(c));
            let want = oracle_p(b, c);
            assert!(
                (got.p_value - want).abs() < 1e-12,
                "b={b} c={c}: got {} want {want}",
                got.p_value
            );
        }
    }
}

#[test]
fn mcnemar_p_monotone_in_imbalance() {
    // fixed b + c: p must not increase as |b - c| grows
    for n in [10u64, 25, 101] {
        let mut prev = f64::INFINITY;
        for m in (0..=n / 2).rev() {
            let p = mcnemar_exact(&Contingency::new(0, n - m, m, 0)).unwrap().p_value;
            assert!(p <= prev + 1e-15, "n={n} m={m}");
            prev = p;
        }
    }
}
