use std::collections::HashMap;

use relbias::linearize::token_id;
use relbias::rng::derive_seed;
use relbias::table::random_permutation;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail p-value of Pearson's statistic over `counts` against a
/// uniform expectation.
fn uniform_p_value(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn permutations_are_uniform() {
    // 3 rows and 3 columns: 36 equally likely (row, column) permutation pairs.
    let mut seen: HashMap<(Vec<usize>, Vec<usize>), usize> = HashMap::new();
    let draws = 36_000;
    for i in 0..draws {
        let p = random_permutation(3, 3, derive_seed(99, i));
        *seen.entry((p.row_perm().to_vec(), p.col_perm().to_vec())).or_default() += 1;
    }
    assert_eq!(seen.len(), 36);
    let counts: Vec<usize> = seen.values().copied().collect();
    let p = uniform_p_value(&counts);
    assert!(p > 1e-3, "chi-square p = {p}");
}

#[test]
fn consecutive_seeds_are_uniform_too() {
    let mut counts = vec![0usize; 24];
    let index = |perm: &[usize]| {
        // Lehmer code of a permutation of 4.
        let mut code = 0;
        for i in 0..4 {
            let smaller = perm[i + 1..].iter().filter(|&&x| x < perm[i]).count();
            code = code * (4 - i) + smaller;
        }
        code
    };
    for seed in 0..24_000u64 {
        counts[index(random_permutation(4, 1, seed).row_perm())] += 1;
    }
    let p = uniform_p_value(&counts);
    assert!(p > 1e-3, "chi-square p = {p}");
}

#[test]
fn token_hash_spreads_evenly() {
    let buckets = 1000u32;
    let mut counts = vec![0usize; buckets as usize];
    for i in 0..50_000 {
        counts[token_id(&format!("w{i}"), buckets) as usize] += 1;
    }
    let p = uniform_p_value(&counts);
    assert!(p > 1e-3, "chi-square p = {p}");
}
