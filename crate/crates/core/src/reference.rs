//! Reference oracles and synthetic planted problems.
//!
//! Everything here is single-threaded and written with plain loops. None of
//! it calls the cached encoder, the Gram products, or the Lanczos solver, so
//! comparisons against the production paths are meaningful.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::MpSettings;
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Dictionary};
use crate::seed::derived_rng;
use crate::sparse::SparseCodeMatrix;
use crate::updater::SingularPair;

/// Parameters of a planted sparse-coding problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Standard deviation of the nonzero coefficients.
    pub sigma_x: f64,
    /// Standard deviation of the additive noise.
    pub sigma_noise: f64,
    pub seed: u64,
    /// Plant an orthonormal dictionary (requires `m <= d`) instead of a
    /// normalized Gaussian one.
    #[serde(default)]
    pub orthonormal: bool,
}

impl PlantedSpec {
    pub fn new(d: usize, m: usize, k: usize, n: usize) -> Self {
        Self {
            d,
            m,
            k,
            n,
            sigma_x: 1.0,
            sigma_noise: 0.0,
            seed: 0,
            orthonormal: false,
        }
    }

    pub fn with_noise(mut self, sigma_noise: f64) -> Self {
        self.sigma_noise = sigma_noise;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `σ_X² / σ_ε²`; infinite without noise.
    pub fn snr(&self) -> f64 {
        if self.sigma_noise == 0.0 {
            f64::INFINITY
        } else {
            self.sigma_x * self.sigma_x / (self.sigma_noise * self.sigma_noise)
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedProblem {
    pub spec: PlantedSpec,
    pub dictionary: Dictionary,
    pub codes: SparseCodeMatrix,
    pub data: DenseMatrix,
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Draws `(D*, X*)` and `Y = D* X* + ε`. Deterministic in `spec.seed`.
pub fn generate_planted(spec: &PlantedSpec) -> Result<PlantedProblem> {
    if spec.k > spec.m || spec.k == 0 || spec.d == 0 {
        return Err(Error::Precondition(format!(
            "planted problem needs 1 <= k <= m and d >= 1 (d = {}, m = {}, k = {})",
            spec.d, spec.m, spec.k
        )));
    }
    if !(spec.sigma_x > 0.0 && spec.sigma_noise >= 0.0) {
        return Err(Error::Precondition("need sigma_x > 0 and sigma_noise >= 0".into()));
    }
    let mut drng = derived_rng(spec.seed, "planted/dictionary", &[]);
    let raw = gaussian_matrix(spec.d, spec.m, &mut drng);
    let dictionary = if spec.orthonormal {
        if spec.m > spec.d {
            return Err(Error::Precondition("orthonormal dictionary needs m <= d".into()));
        }
        let q = DMatrix::from_column_slice(spec.d, spec.m, raw.as_slice()).qr().q();
        Dictionary::new(DenseMatrix::from_fn(spec.d, spec.m, |i, j| q[(i, j)]))?
    } else {
        crate::matrix::normalize_columns(raw)?
    };

    let mut crng = derived_rng(spec.seed, "planted/codes", &[]);
    let coef = Normal::new(0.0, spec.sigma_x).expect("positive sigma");
    let columns: Vec<Vec<(usize, f64)>> = (0..spec.n)
        .map(|_| {
            let mut idx = sample(&mut crng, spec.m, spec.k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|j| (j, coef.sample(&mut crng))).collect()
        })
        .collect();
    let codes = SparseCodeMatrix::from_columns(spec.m, spec.k, columns)?;

    let mut data = codes.reconstruct(&dictionary);
    if spec.sigma_noise > 0.0 {
        let mut nrng = derived_rng(spec.seed, "planted/noise", &[]);
        let noise = Normal::new(0.0, spec.sigma_noise).expect("non-negative sigma");
        let values: Vec<f64> = data
            .as_slice()
            .iter()
            .map(|v| v + noise.sample(&mut nrng))
            .collect();
        data = DenseMatrix::new(spec.d, spec.n, values)?;
    }
    Ok(PlantedProblem {
        spec: spec.clone(),
        dictionary,
        codes,
        data,
    })
}

/// Output of [`naive_mp_traced`].
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveMpTrace {
    pub code: Vec<(usize, f64)>,
    /// Smallest relative gap between the two largest `|⟨r, d_j⟩|` over all
    /// selections; near zero means the run hinged on a near-tie.
    pub min_margin: f64,
}

/// Matching Pursuit that recomputes `Dᵀr` from the residual at every step.
pub fn naive_mp(dict: &Dictionary, y: &[f64], settings: &MpSettings) -> Vec<(usize, f64)> {
    naive_mp_traced(dict, y, settings).code
}

pub fn naive_mp_traced(dict: &Dictionary, y: &[f64], settings: &MpSettings) -> NaiveMpTrace {
    let d = dict.dim();
    let m = dict.atoms();
    let mut r = y.to_vec();
    let mut code: Vec<(usize, f64)> = Vec::new();
    let mut min_margin = f64::INFINITY;
    let correlations = |r: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|j| {
                let a = dict.atom(j);
                let mut s = 0.0;
                for i in 0..d {
                    s += a[i] * r[i];
                }
                s
            })
            .collect()
    };
    let initial = correlations(&r).iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    if !(initial > 0.0) {
        return NaiveMpTrace {
            code,
            min_margin,
        };
    }
    let threshold = settings.rel_tol * initial;
    for _ in 0..settings.max_steps {
        let corr = correlations(&r);
        let mut best = 0;
        for j in 1..m {
            if corr[j].abs() > corr[best].abs() {
                best = j;
            }
        }
        let mag = corr[best].abs();
        if mag < threshold || mag == 0.0 {
            break;
        }
        let second = (0..m)
            .filter(|&j| j != best)
            .map(|j| corr[j].abs())
            .fold(0.0f64, f64::max);
        let c = corr[best];
        let pos = code.iter().position(|e| e.0 == best);
        if pos.is_none() && code.len() == settings.k {
            break;
        }
        min_margin = min_margin.min((mag - second) / mag);
        match pos {
            Some(p) => code[p].1 += c,
            None => code.push((best, c)),
        }
        let a = dict.atom(best);
        for i in 0..d {
            r[i] -= c * a[i];
        }
    }
    NaiveMpTrace { code, min_margin }
}

/// Top singular triplet from a full dense SVD, with the largest-magnitude
/// entry of `u` made positive.
pub fn dense_top_singular_pair(e: &DenseMatrix) -> SingularPair {
    let m = DMatrix::from_column_slice(e.rows(), e.cols(), e.as_slice());
    let svd = m.svd(true, true);
    let (idx, sigma) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty matrix");
    let u_mat = svd.u.expect("requested u");
    let vt = svd.v_t.expect("requested v_t");
    let mut u: Vec<f64> = u_mat.column(idx).iter().copied().collect();
    let mut v: Vec<f64> = vt.row(idx).iter().copied().collect();
    let mut lead = 0;
    for i in 1..u.len() {
        if u[i].abs() > u[lead].abs() {
            lead = i;
        }
    }
    if u[lead] < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
        v.iter_mut().for_each(|x| *x = -*x);
    }
    SingularPair { u, sigma, v }
}

fn residual_norm_of(data: &DenseMatrix, dict: &Dictionary, codes: &SparseCodeMatrix, s: usize) -> f64 {
    let mut r = data.col(s).to_vec();
    for &(i, c) in codes.column(s) {
        let a = dict.atom(i);
        for t in 0..r.len() {
            r[t] -= c * a[t];
        }
    }
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One sequential KSVD sweep in atom-index order with a dense SVD per atom.
///
/// Unused atoms follow the same policy as the production updater: the
/// worst-reconstructed sample not yet used in this sweep, normalized.
pub fn naive_ksvd_iteration(
    data: &DenseMatrix,
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
) -> Result<(Dictionary, SparseCodeMatrix)> {
    let order: Vec<usize> = (0..dict.atoms()).collect();
    naive_ksvd_iteration_ordered(data, dict, codes, &order)
}

/// [`naive_ksvd_iteration`] visiting atoms in `order`.
pub fn naive_ksvd_iteration_ordered(
    data: &DenseMatrix,
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
    order: &[usize],
) -> Result<(Dictionary, SparseCodeMatrix)> {
    if data.rows() != dict.dim() || data.cols() != codes.samples() || codes.atoms() != dict.atoms() {
        return Err(Error::DimensionMismatch("naive KSVD operands disagree".into()));
    }
    let d = dict.dim();
    let n = data.cols();
    let mut dict = dict.clone();
    let mut codes = codes.clone();
    let mut taken: Vec<usize> = Vec::new();
    for &j in order {
        let support: Vec<usize> = (0..n)
            .filter(|&s| codes.column(s).iter().any(|e| e.0 == j))
            .collect();
        if support.is_empty() {
            let norms: Vec<f64> = (0..n).map(|s| residual_norm_of(data, &dict, &codes, s)).collect();
            let mut best: Option<usize> = None;
            for s in 0..n {
                let y_norm = data.col(s).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norms[s] <= crate::matrix::ZERO_NORM
                    || y_norm <= crate::matrix::ZERO_NORM
                    || taken.contains(&s)
                {
                    continue;
                }
                if best.is_none_or(|b| norms[s] > norms[b]) {
                    best = Some(s);
                }
            }
            if let Some(s) = best {
                dict.set_atom(j, data.col(s))?;
                taken.push(s);
            }
            continue;
        }
        let mut e = DenseMatrix::zeros(d, support.len());
        for (c, &s) in support.iter().enumerate() {
            for t in 0..d {
                let mut v = data.get(t, s);
                for &(i, x) in codes.column(s) {
                    if i != j {
                        v -= x * dict.atom(i)[t];
                    }
                }
                e.set(t, c, v);
            }
        }
        if e.frobenius_norm() < crate::matrix::ZERO_NORM {
            codes.set_row_values(j, &vec![0.0; support.len()])?;
            continue;
        }
        let pair = dense_top_singular_pair(&e);
        dict.set_atom(j, &pair.u)?;
        let values: Vec<f64> = pair.v.iter().map(|v| pair.sigma * v).collect();
        codes.set_row_values(j, &values)?;
    }
    Ok((dict, codes))
}

/// Fraction of true atoms matched one-to-one (greedily, by descending
/// `|⟨d̂_i, d*_j⟩|`) with a learned atom above `threshold`.
pub fn recovery_score(learned: &Dictionary, truth: &Dictionary, threshold: f64) -> Result<f64> {
    if learned.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(format!(
            "learned dimension {} vs true dimension {}",
            learned.dim(),
            truth.dim()
        )));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(learned.atoms() * truth.atoms());
    for i in 0..learned.atoms() {
        for j in 0..truth.atoms() {
            let a = learned.atom(i);
            let b = truth.atom(j);
            let mut s = 0.0;
            for t in 0..a.len() {
                s += a[t] * b[t];
            }
            pairs.push((s.abs(), i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_learned = vec![false; learned.atoms()];
    let mut used_true = vec![false; truth.atoms()];
    let mut matched = 0usize;
    for (score, i, j) in pairs {
        if score <= threshold {
            break;
        }
        if used_learned[i] || used_true[j] {
            continue;
        }
        used_learned[i] = true;
        used_true[j] = true;
        matched += 1;
    }
    Ok(matched as f64 / truth.atoms() as f64)
}
