//! Batched Matching Pursuit over a precomputed Gram matrix.
//!
//! With `G = DᵀD` and `p = Dᵀy` cached, one MP step is an argmax over `p`
//! followed by `p ← p − c·G[:, j]`, so the residual itself is never formed.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{gemm_tn, DenseMatrix, Dictionary, Parallelism};
use crate::sparse::SparseCodeMatrix;

/// Stopping rules shared by every MP implementation in the crate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MpSettings {
    /// Distinct-atom budget per sample.
    pub k: usize,
    /// Relative early-stop threshold on the largest residual correlation.
    pub rel_tol: f64,
    /// Hard cap on steps, counting re-selections.
    pub max_steps: usize,
}

impl MpSettings {
    pub const DEFAULT_REL_TOL: f64 = 1e-7;
    pub const DEFAULT_STEP_FACTOR: usize = 10;

    pub fn new(k: usize) -> Self {
        Self {
            k,
            rel_tol: Self::DEFAULT_REL_TOL,
            max_steps: k * Self::DEFAULT_STEP_FACTOR,
        }
    }

    pub fn from_config(cfg: &crate::TrainingConfig) -> Self {
        Self {
            k: cfg.sparsity,
            rel_tol: cfg.mp_rel_tol,
            max_steps: cfg.mp_max_steps(),
        }
    }

    pub fn with_k(self, k: usize) -> Self {
        Self {
            k,
            max_steps: self.max_steps / self.k.max(1) * k,
            ..self
        }
    }

    pub(crate) fn check(&self, atoms: usize) -> Result<()> {
        if self.k == 0 || self.k > atoms {
            return Err(Error::Precondition(format!(
                "sparsity must satisfy 1 <= k <= m, got k = {} with m = {atoms}",
                self.k
            )));
        }
        Ok(())
    }
}

/// `DᵀD` and `DᵀY` for one dictionary and one batch.
#[derive(Clone, Debug)]
pub struct GramCache {
    gram: DenseMatrix,
    correlations: DenseMatrix,
    fingerprint: u64,
}

impl GramCache {
    pub fn gram(&self) -> &DenseMatrix {
        &self.gram
    }

    pub fn correlations(&self) -> &DenseMatrix {
        &self.correlations
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn atoms(&self) -> usize {
        self.gram.rows()
    }

    pub fn samples(&self) -> usize {
        self.correlations.cols()
    }

    pub fn check_fresh(&self, dict: &Dictionary) -> Result<()> {
        if dict.fingerprint() != self.fingerprint {
            return Err(Error::StaleCache);
        }
        Ok(())
    }
}

pub fn build_gram_cache(dict: &Dictionary, data: &DenseMatrix, par: Parallelism) -> Result<GramCache> {
    if dict.dim() != data.rows() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary dimension {} but data has {} rows",
            dict.dim(),
            data.rows()
        )));
    }
    let d = dict.matrix();
    let gram = gemm_tn(d, d, par.chunk(d.cols()))?;
    let correlations = gemm_tn(d, data, par.chunk(data.cols()))?;
    Ok(GramCache {
        gram,
        correlations,
        fingerprint: dict.fingerprint(),
    })
}

/// Index of the largest `|v[i]|`; the lowest index wins ties.
pub(crate) fn argmax_abs(v: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, x) in v.iter().enumerate() {
        let a = x.abs();
        if a > best_abs {
            best = i;
            best_abs = a;
        }
    }
    (best, best_abs)
}

/// Runs MP for one sample on its correlation vector `product`, which is left
/// holding `Dᵀr` for the final residual `r`.
///
/// Entries are returned in first-selection order. When `trace` is given each
/// step's `(atom, coefficient)` is appended to it.
pub fn mp_column(
    gram: &DenseMatrix,
    product: &mut [f64],
    settings: &MpSettings,
    mut trace: Option<&mut Vec<(usize, f64)>>,
) -> Vec<(usize, f64)> {
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(settings.k);
    let (_, initial) = argmax_abs(product);
    if !(initial > 0.0) {
        return entries;
    }
    let threshold = settings.rel_tol * initial;
    for _ in 0..settings.max_steps {
        let (j, mag) = argmax_abs(product);
        if mag < threshold || mag == 0.0 {
            break;
        }
        let c = product[j];
        match entries.iter().position(|e| e.0 == j) {
            Some(p) => entries[p].1 += c,
            None if entries.len() == settings.k => break,
            None => entries.push((j, c)),
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push((j, c));
        }
        for (p, g) in product.iter_mut().zip(gram.col(j)) {
            *p -= c * g;
        }
    }
    entries
}

/// Encodes every column of the cached batch, returning the codes and the
/// final residual correlations `Dᵀ(Y − DX)`.
pub fn encode_batch_with_products(
    cache: &GramCache,
    dict: &Dictionary,
    settings: &MpSettings,
    par: Parallelism,
) -> Result<(SparseCodeMatrix, DenseMatrix)> {
    cache.check_fresh(dict)?;
    settings.check(cache.atoms())?;
    let m = cache.atoms();
    let n = cache.samples();
    let mut products = cache.correlations.clone();
    let chunk = par.chunk(n);
    let columns: Vec<Vec<(usize, f64)>> = if m == 0 || n == 0 {
        vec![Vec::new(); n]
    } else {
        products
            .as_mut_slice()
            .par_chunks_mut(m * chunk)
            .flat_map_iter(|block| {
                block
                    .chunks_mut(m)
                    .map(|p| mp_column(&cache.gram, p, settings, None))
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let codes = SparseCodeMatrix::from_columns(m, settings.k, columns)?;
    Ok((codes, products))
}

pub fn encode_batch(
    cache: &GramCache,
    dict: &Dictionary,
    settings: &MpSettings,
    par: Parallelism,
) -> Result<SparseCodeMatrix> {
    cache.check_fresh(dict)?;
    settings.check(cache.atoms())?;
    let m = cache.atoms();
    let n = cache.samples();
    let chunk = par.chunk(n);
    let columns: Vec<Vec<(usize, f64)>> = if m == 0 || n == 0 {
        vec![Vec::new(); n]
    } else {
        cache
            .correlations
            .as_slice()
            .par_chunks(m * chunk)
            .flat_map_iter(|block| {
                let mut p = vec![0.0; m];
                block
                    .chunks(m)
                    .map(|c| {
                        p.copy_from_slice(c);
                        mp_column(&cache.gram, &mut p, settings, None)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    SparseCodeMatrix::from_columns(m, settings.k, columns)
}

/// Encodes one sample by building a one-column cache.
pub fn encode_one(dict: &Dictionary, y: &[f64], settings: &MpSettings) -> Result<Vec<(usize, f64)>> {
    let data = DenseMatrix::new(y.len(), 1, y.to_vec())?;
    let cache = build_gram_cache(dict, &data, Parallelism::sequential())?;
    let codes = encode_batch(&cache, dict, settings, Parallelism::sequential())?;
    Ok(codes.column(0).to_vec())
}

/// Per-step `(atom, coefficient)` trace of MP on one sample.
pub fn encode_steps(dict: &Dictionary, y: &[f64], settings: &MpSettings) -> Result<Vec<(usize, f64)>> {
    settings.check(dict.atoms())?;
    let data = DenseMatrix::new(y.len(), 1, y.to_vec())?;
    let cache = build_gram_cache(dict, &data, Parallelism::sequential())?;
    let mut p = cache.correlations.col(0).to_vec();
    let mut trace = Vec::new();
    mp_column(&cache.gram, &mut p, settings, Some(&mut trace));
    Ok(trace)
}
