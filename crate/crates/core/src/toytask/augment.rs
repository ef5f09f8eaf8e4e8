use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::table::{permute_table, random_permutation, TablePermutation, TableTextPair};

pub const ALLOWED_COPIES: [usize; 5] = [1, 2, 4, 8, 16];

/// `K` perturbed copies of every example, served cyclically: epoch `e`
/// trains on copy `e mod K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPlan")]
pub struct AugmentationPlan {
    seeds: Vec<u64>,
}

#[derive(Deserialize)]
struct RawPlan {
    seeds: Vec<u64>,
}

impl TryFrom<RawPlan> for AugmentationPlan {
    type Error = Error;

    fn try_from(raw: RawPlan) -> Result<Self> {
        Self::new(raw.seeds)
    }
}

impl AugmentationPlan {
    pub fn new(seeds: Vec<u64>) -> Result<Self> {
        if !ALLOWED_COPIES.contains(&seeds.len()) {
            return Err(Error::InvalidConfig(format!(
                "{} augmentation copies; expected one of {ALLOWED_COPIES:?}",
                seeds.len()
            )));
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            return Err(Error::InvalidConfig("augmentation seeds must be distinct".into()));
        }
        Ok(Self { seeds })
    }

    /// `copies` seeds derived from `base`.
    pub fn from_base_seed(copies: usize, base: u64) -> Result<Self> {
        Self::new((0..copies as u64).map(|k| derive_seed(base, k)).collect())
    }

    pub fn copies(&self) -> usize {
        self.seeds.len()
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn variant_for_epoch(&self, epoch: usize) -> usize {
        epoch % self.seeds.len()
    }
}

/// The training examples of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    /// `variants[k][i]` is copy `k` of example `i`.
    variants: Vec<Vec<TableTextPair>>,
    /// Permutation that produced each entry of `variants`; empty when the
    /// data is served unperturbed.
    permutations: Vec<Vec<TablePermutation>>,
}

impl AugmentedDataset {
    /// The original examples in every epoch.
    pub fn unaugmented(dataset: Vec<TableTextPair>) -> Self {
        Self {
            variants: vec![dataset],
            permutations: Vec::new(),
        }
    }

    pub fn copies(&self) -> usize {
        self.variants.len()
    }

    pub fn len(&self) -> usize {
        self.variants[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn variant_for_epoch(&self, epoch: usize) -> usize {
        epoch % self.variants.len()
    }

    pub fn variant(&self, k: usize) -> &[TableTextPair] {
        &self.variants[k]
    }

    pub fn epoch(&self, epoch: usize) -> &[TableTextPair] {
        self.variant(self.variant_for_epoch(epoch))
    }

    pub fn permutation(&self, k: usize, i: usize) -> Option<&TablePermutation> {
        self.permutations.get(k).map(|p| &p[i])
    }
}

/// Builds `plan.copies()` permuted copies of `dataset`. Copy `k` of example
/// `i` uses the permutation seeded by `derive_seed(seeds[k], i)`.
pub fn augment(dataset: &[TableTextPair], plan: &AugmentationPlan) -> Result<AugmentedDataset> {
    let mut variants = Vec::with_capacity(plan.copies());
    let mut permutations = Vec::with_capacity(plan.copies());
    for &seed in plan.seeds() {
        let mut pairs = Vec::with_capacity(dataset.len());
        let mut perms = Vec::with_capacity(dataset.len());
        for (i, pair) in dataset.iter().enumerate() {
            let t = pair.table();
            let perm = random_permutation(t.num_rows(), t.num_cols(), derive_seed(seed, i as u64));
            pairs.push(permute_table(pair, &perm)?);
            perms.push(perm);
        }
        variants.push(pairs);
        permutations.push(perms);
    }
    Ok(AugmentedDataset { variants, permutations })
}
