use std::collections::BTreeSet;

use proptest::prelude::*;
use relbias::table::{permute_table, random_permutation, CellCoord, TableTextPair};
use relbias::toytask::{answer, augment, generate_dataset, AugmentationPlan, TaskKind, TaskSpec};

/// Standalone rule evaluator: reads the query back out of the sentence and
/// recomputes the gold set by scanning the table.
fn rule_gold(kind: TaskKind, pair: &TableTextPair) -> BTreeSet<CellCoord> {
    let t = pair.table();
    let cells = |f: &dyn Fn(usize, usize) -> bool| -> BTreeSet<CellCoord> {
        let mut out = BTreeSet::new();
        for r in 0..t.num_rows() {
            for c in 0..t.num_cols() {
                if f(r, c) {
                    out.insert(CellCoord::new(r, c));
                }
            }
        }
        out
    };
    match kind {
        TaskKind::SelectByHeader => {
            let q = pair.sentence.strip_prefix("select ").unwrap();
            cells(&|_, c| t.headers()[c] == q)
        }
        TaskKind::SelectRowByKey => {
            let q = pair.sentence.strip_prefix("show the row for ").unwrap();
            let key = t.headers().iter().position(|h| h == "name").unwrap();
            cells(&|r, _| t.rows()[r][key] == q)
        }
        TaskKind::ArgmaxInColumn => {
            let q = pair.sentence.strip_prefix("largest ").unwrap();
            let col = t.headers().iter().position(|h| h == q).unwrap();
            let best = (0..t.num_rows())
                .map(|r| t.rows()[r][col].parse::<i64>().unwrap())
                .max()
                .unwrap();
            cells(&|r, c| c == col && t.rows()[r][c].parse::<i64>().unwrap() == best)
        }
    }
}

#[test]
fn generated_gold_agrees_with_rule_checker() {
    for kind in TaskKind::ALL {
        let data = generate_dataset(&TaskSpec::new(kind, 2024), 1000).unwrap();
        for (i, pair) in data.iter().enumerate() {
            assert_eq!(pair.gold_cells(), &rule_gold(kind, pair), "{kind} example {i}");
        }
    }
}

#[test]
fn generated_headers_are_distinct_and_answers_unique() {
    for kind in TaskKind::ALL {
        for pair in generate_dataset(&TaskSpec::new(kind, 5), 300).unwrap() {
            let h: BTreeSet<_> = pair.table().headers().iter().collect();
            assert_eq!(h.len(), pair.table().num_cols());
            if kind == TaskKind::ArgmaxInColumn {
                assert_eq!(pair.gold_cells().len(), 1);
            }
        }
    }
}

#[test]
fn augmented_gold_contents_match_original() {
    let data = generate_dataset(&TaskSpec::new(TaskKind::ArgmaxInColumn, 8), 100).unwrap();
    let aug = augment(&data, &AugmentationPlan::from_base_seed(8, 1).unwrap()).unwrap();
    let contents = |p: &TableTextPair| {
        let mut v: Vec<String> = p.gold_cells().iter().map(|&g| p.table().cell(g).to_string()).collect();
        v.sort();
        v
    };
    for k in 0..aug.copies() {
        assert_eq!(aug.variant(k).len(), data.len());
        for (orig, copy) in data.iter().zip(aug.variant(k)) {
            assert_eq!(contents(orig), contents(copy));
            assert_eq!(orig.sentence, copy.sentence);
        }
    }
}

fn arb_kind() -> impl Strategy<Value = TaskKind> {
    prop::sample::select(TaskKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Gold is a function of content: answering on a permuted table gives
    /// the permuted gold.
    #[test]
    fn gold_is_order_independent(kind in arb_kind(), seed in any::<u64>(), index in 0usize..50, pseed in any::<u64>()) {
        let spec = TaskSpec::new(kind, seed).with_shape((1, 6), (1, 5));
        let pair = generate_dataset(&spec, index + 1).unwrap().pop().unwrap();
        let t = pair.table();
        let perm = random_permutation(t.num_rows(), t.num_cols(), pseed);
        let moved = permute_table(&pair, &perm).unwrap();
        let query = pair.sentence.rsplit(' ').next().unwrap();
        let regold = answer(kind, moved.table(), query, &spec.pool.key_header).unwrap();
        prop_assert_eq!(&regold, moved.gold_cells());
        prop_assert_eq!(rule_gold(kind, &moved), regold);
    }
}
