//! Matryoshka structuring: nested atom groups, each fit to the residual left
//! by the groups before it, each with an equal share of the sparsity budget.

use std::ops::Range;
use std::time::Instant;

use crate::encoder::{build_gram_cache, encode_batch, MpSettings};
use crate::error::{Error, Result};
use crate::matrix::{axpy, DenseMatrix, Dictionary, Parallelism};
use crate::seed::derived_rng;
use crate::sparse::SparseCodeMatrix;
use crate::strategy::PhaseTimes;
use crate::updater::{inner_batched_update, UpdateContext};

/// Group sizes used for a 4096-atom dictionary.
pub const GROUPS_4096: [usize; 5] = [256, 256, 512, 1024, 2048];
/// Group sizes used for a 16384-atom dictionary.
pub const GROUPS_16384: [usize; 7] = [256, 256, 512, 1024, 2048, 4096, 8192];

/// Default group sizes for the dictionary sizes that have one.
pub fn default_groups(m: usize) -> Option<Vec<usize>> {
    match m {
        4096 => Some(GROUPS_4096.to_vec()),
        16384 => Some(GROUPS_16384.to_vec()),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupLayout {
    sizes: Vec<usize>,
    budgets: Vec<usize>,
}

impl GroupLayout {
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Per-group sparsity budgets k_i.
    pub fn budgets(&self) -> &[usize] {
        &self.budgets
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn atoms(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn sparsity(&self) -> usize {
        self.budgets.iter().sum()
    }

    /// Atom index range of group `g`.
    pub fn range(&self, g: usize) -> Range<usize> {
        let start: usize = self.sizes[..g].iter().sum();
        start..start + self.sizes[g]
    }
}

/// Splits `k` over the groups: `⌊k/G⌋` each, with the remainder going one
/// apiece to the last groups.
pub fn make_layout(m: usize, k: usize, sizes: &[usize]) -> Result<GroupLayout> {
    let g = sizes.len();
    if g == 0 {
        return Err(Error::BadPartition("no groups given".into()));
    }
    let total: usize = sizes.iter().sum();
    if total != m {
        return Err(Error::BadPartition(format!("sizes sum to {total}, expected {m}")));
    }
    if sizes.contains(&0) {
        return Err(Error::BadPartition("empty group".into()));
    }
    if g > k {
        return Err(Error::BadPartition(format!("{g} groups but only k = {k}")));
    }
    let (base, rem) = (k / g, k % g);
    let budgets: Vec<usize> = (0..g).map(|i| base + usize::from(i >= g - rem)).collect();
    if let Some(i) = (0..g).find(|&i| budgets[i] > sizes[i]) {
        return Err(Error::BadPartition(format!(
            "group {i} has {} atoms but a budget of {}",
            sizes[i], budgets[i]
        )));
    }
    Ok(GroupLayout {
        sizes: sizes.to_vec(),
        budgets,
    })
}

/// Settings for one Matryoshka iteration.
#[derive(Clone, Copy)]
pub struct MatryoshkaStep<'a> {
    pub mp: MpSettings,
    pub workers: usize,
    pub par: Parallelism,
    pub update: UpdateContext<'a>,
    /// Per-iteration seed; group `g` shuffles with a stream derived from it.
    pub seed: u64,
}

/// One forward pass over the groups. Returns the union of the group codes.
pub fn matryoshka_iteration(
    data: &DenseMatrix,
    dict: &mut Dictionary,
    layout: &GroupLayout,
    step: &MatryoshkaStep<'_>,
    times: &mut PhaseTimes,
) -> Result<SparseCodeMatrix> {
    if layout.atoms() != dict.atoms() {
        return Err(Error::BadPartition(format!(
            "layout covers {} atoms, dictionary has {}",
            layout.atoms(),
            dict.atoms()
        )));
    }
    let mut residual = data.clone();
    let mut codes = SparseCodeMatrix::new(dict.atoms(), data.cols(), layout.sparsity());
    for g in 0..layout.len() {
        let range = layout.range(g);
        let mut part = dict.slice(range.start, range.len());
        let settings = step.mp.with_k(layout.budgets()[g]);

        let t = Instant::now();
        let cache = build_gram_cache(&part, &residual, step.par)?;
        times.gram += t.elapsed();
        let t = Instant::now();
        let mut part_codes = encode_batch(&cache, &part, &settings, step.par)?;
        times.encode += t.elapsed();
        drop(cache);

        let t = Instant::now();
        let mut rng = derived_rng(step.seed, "update", &[g as u64]);
        let width = step.workers.min(range.len()).max(1);
        let stats = inner_batched_update(&residual, &mut part, &mut part_codes, width, &mut rng, &step.update)?;
        times.update += t.elapsed();
        times.absorb(&stats);

        for s in 0..residual.cols() {
            let col = residual.col_mut(s);
            for &(j, c) in part_codes.column(s) {
                axpy(-c, part.atom(j), col);
            }
        }
        dict.write_slice(range.start, &part);
        codes.merge_block(range.start, &part_codes)?;
    }
    Ok(codes)
}
