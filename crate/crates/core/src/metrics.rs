//! Dictionary diagnostics: coherence, the Welch bound, the sparsity range
//! with guaranteed recovery, and the two training proxy metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{gemm_tn, norm, DenseMatrix, Dictionary, Parallelism};
use crate::sparse::SparseCodeMatrix;

pub const HISTOGRAM_BINS: usize = 100;

/// Largest sparsity with guaranteed recovery for a given coherence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RecoverabilityLimit {
    Finite(usize),
    /// Zero coherence: no finite limit.
    Unbounded,
}

impl std::fmt::Display for RecoverabilityLimit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RecoverabilityLimit::Finite(k) => write!(f, "{k}"),
            RecoverabilityLimit::Unbounded => f.write_str("inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoherenceReport {
    pub dim: usize,
    pub atoms: usize,
    /// `max_{i≠j} |⟨d_i, d_j⟩|`
    pub mutual_coherence: f64,
    /// `c_j = max_{ℓ≠j} |⟨d_j, d_ℓ⟩|`
    pub per_atom: Vec<f64>,
    /// Counts of `per_atom` over 100 equal bins on `[0, 1]`; values at or
    /// above 1 land in the last bin.
    pub histogram: Vec<usize>,
    pub welch_bound: f64,
    pub recoverability: RecoverabilityLimit,
}

impl CoherenceReport {
    /// `(lo, hi, count)` per histogram bin.
    pub fn histogram_rows(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let w = 1.0 / HISTOGRAM_BINS as f64;
        self.histogram
            .iter()
            .enumerate()
            .map(move |(i, &c)| (i as f64 * w, (i + 1) as f64 * w, c))
    }

    pub fn median_per_atom(&self) -> f64 {
        median(&self.per_atom)
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bin_of(c: f64) -> usize {
    ((c.max(0.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

pub fn coherence_report(dict: &Dictionary, par: Parallelism) -> Result<CoherenceReport> {
    let m = dict.atoms();
    if m < 2 {
        return Err(Error::Precondition("coherence needs at least two atoms".into()));
    }
    let gram = gemm_tn(dict.matrix(), dict.matrix(), par.chunk(m))?;
    let per_atom: Vec<f64> = (0..m)
        .map(|j| {
            gram.col(j)
                .iter()
                .enumerate()
                .filter(|&(l, _)| l != j)
                .map(|(_, g)| g.abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let mutual_coherence = per_atom.iter().copied().fold(0.0, f64::max);
    let mut histogram = vec![0; HISTOGRAM_BINS];
    for &c in &per_atom {
        histogram[bin_of(c)] += 1;
    }
    let recoverability = if mutual_coherence > 0.0 {
        recoverability_limit(mutual_coherence.min(1.0))?
    } else {
        RecoverabilityLimit::Unbounded
    };
    Ok(CoherenceReport {
        dim: dict.dim(),
        atoms: m,
        mutual_coherence,
        per_atom,
        histogram,
        welch_bound: welch_bound(dict.dim(), m),
        recoverability,
    })
}

/// `√((m − d) / (d (m − 1)))`, or 0 when `m ≤ d`.
pub fn welch_bound(d: usize, m: usize) -> f64 {
    if m <= d || m < 2 || d == 0 {
        return 0.0;
    }
    let (d, m) = (d as f64, m as f64);
    ((m - d) / (d * (m - 1.0))).sqrt()
}

/// Largest integer strictly below `½(1 + 1/μ)`.
pub fn recoverability_limit(mu: f64) -> Result<RecoverabilityLimit> {
    if mu == 0.0 {
        return Ok(RecoverabilityLimit::Unbounded);
    }
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::Precondition(format!("coherence must lie in (0, 1], got {mu}")));
    }
    let bound = 0.5 * (1.0 + 1.0 / mu);
    let nearest = bound.round();
    let k = if (bound - nearest).abs() <= 1e-9 * bound {
        nearest - 1.0
    } else {
        bound.floor()
    };
    Ok(RecoverabilityLimit::Finite(k.max(0.0) as usize))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanRelativeError {
    pub value: f64,
    /// Columns skipped because `‖y_i‖ < 1e-12`.
    pub skipped: usize,
}

fn check(data: &DenseMatrix, dict: &Dictionary, codes: &SparseCodeMatrix) -> Result<()> {
    if data.rows() != dict.dim() || data.cols() != codes.samples() || codes.atoms() != dict.atoms() {
        return Err(Error::DimensionMismatch(format!(
            "data {:?}, dictionary {}x{}, codes {}x{}",
            data.shape(),
            dict.dim(),
            dict.atoms(),
            codes.atoms(),
            codes.samples()
        )));
    }
    Ok(())
}

/// `(1/n) Σ_i ‖y_i − D x_i‖ / ‖y_i‖` over nonzero columns.
pub fn mean_relative_error(
    data: &DenseMatrix,
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
) -> Result<MeanRelativeError> {
    check(data, dict, codes)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for s in 0..data.cols() {
        let y = data.col(s);
        let ny = norm(y);
        if ny < crate::matrix::ZERO_NORM {
            continue;
        }
        let recon = codes.reconstruct_column(dict, s);
        let r: f64 = y
            .iter()
            .zip(&recon)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        sum += r / ny;
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllZeroData);
    }
    Ok(MeanRelativeError {
        value: sum / used as f64,
        skipped: data.cols() - used,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceExplained {
    pub value: f64,
    /// Rows skipped because their variance is at most 1e-12.
    pub skipped_rows: usize,
}

fn population_variance(values: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    let mean = values.clone().sum::<f64>() / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

fn row_values(m: &DenseMatrix, j: usize) -> impl Iterator<Item = f64> + Clone + '_ {
    let rows = m.rows();
    m.as_slice().iter().skip(j).step_by(rows).copied()
}

/// `1 − (1/d) Σ_j var((Y − DX)_j) / var(Y_j)` over rows `j` with nonzero
/// variance, using population variances.
pub fn variance_explained(
    data: &DenseMatrix,
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
) -> Result<VarianceExplained> {
    check(data, dict, codes)?;
    let n = data.cols();
    if n == 0 {
        return Err(Error::DegenerateRows);
    }
    let residual = codes.residual(data, dict)?;
    let d = data.rows();
    let mut ratio_sum = 0.0;
    let mut used = 0usize;
    for j in 0..d {
        let vy = population_variance(row_values(data, j), n);
        if vy <= 1e-12 {
            continue;
        }
        ratio_sum += population_variance(row_values(&residual, j), n) / vy;
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateRows);
    }
    Ok(VarianceExplained {
        value: 1.0 - ratio_sum / used as f64,
        skipped_rows: d - used,
    })
}
