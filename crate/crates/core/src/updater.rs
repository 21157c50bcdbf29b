//! Inner-batched dictionary update.
//!
//! Atoms are visited in a shuffled order and processed `w` at a time. Every
//! atom of a batch computes its update from the same `(D, X)` snapshot; the
//! batch's updates are then applied together before the next batch starts.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::eigen::{EigenSettings, TopEigenSolver};
use crate::error::{Error, Result};
use crate::matrix::{axpy, gram_outer, norm, DenseMatrix, Dictionary, ZERO_NORM};
use crate::sparse::SparseCodeMatrix;

/// Reconstruction error over Ω_j with atom `j`'s own contribution excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct RestrictedError {
    pub atom: usize,
    pub support: Vec<usize>,
    /// `d x |Ω_j|`; `None` when the atom is unused.
    pub matrix: Option<DenseMatrix>,
}

impl RestrictedError {
    pub fn is_unused(&self) -> bool {
        self.matrix.is_none()
    }
}

/// Top singular triplet `E ≈ σ u vᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularPair {
    pub u: Vec<f64>,
    pub sigma: f64,
    pub v: Vec<f64>,
}

/// Result of one atom's update, not yet applied.
#[derive(Clone, Debug, PartialEq)]
pub enum AtomUpdate {
    /// New unit-norm column for `atom` and new coefficients on its support.
    Replace {
        atom: usize,
        column: Vec<f64>,
        values: Vec<f64>,
        /// Lanczos stopped at its iteration cap; the best iterate was kept.
        unconverged: bool,
    },
    /// The atom is unused and must be re-initialized.
    ReinitRequested(usize),
}

/// Solver and tolerances used for atom updates.
#[derive(Clone, Copy)]
pub struct UpdateContext<'a> {
    pub solver: &'a dyn TopEigenSolver,
    pub eigen: EigenSettings,
}

impl<'a> UpdateContext<'a> {
    pub fn new(solver: &'a dyn TopEigenSolver, eigen: EigenSettings) -> Self {
        Self { solver, eigen }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    /// Summed per-atom time spent forming `E_j` and `E_j E_jᵀ`.
    pub form: Duration,
    /// Summed per-atom eigen-solve time.
    pub eigen: Duration,
    /// Wall time of the apply phases.
    pub apply: Duration,
    pub reinitialized: usize,
    pub unconverged: usize,
    pub matvecs: usize,
}

impl UpdateStats {
    pub fn merge(&mut self, other: &UpdateStats) {
        self.form += other.form;
        self.eigen += other.eigen;
        self.apply += other.apply;
        self.reinitialized += other.reinitialized;
        self.unconverged += other.unconverged;
        self.matvecs += other.matvecs;
    }
}

fn check_shapes(data: &DenseMatrix, dict: &Dictionary, codes: &SparseCodeMatrix) -> Result<()> {
    if data.rows() != dict.dim()
        || data.cols() != codes.samples()
        || codes.atoms() != dict.atoms()
    {
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

/// Writes `E_j` column-major into `buf` and returns its column count.
fn fill_restricted_error(
    data: &DenseMatrix,
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
    j: usize,
    buf: &mut Vec<f64>,
) -> usize {
    let d = dict.dim();
    let support = codes.row_support(j);
    buf.clear();
    buf.reserve(d * support.len());
    for &s in support {
        let start = buf.len();
        buf.extend_from_slice(data.col(s));
        let col = &mut buf[start..];
        for &(i, c) in codes.column(s) {
            if i != j {
                axpy(-c, dict.atom(i), col);
            }
        }
    }
    support.len()
}

pub fn restricted_error(
    data: &DenseMatrix,
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
    j: usize,
) -> Result<RestrictedError> {
    check_shapes(data, dict, codes)?;
    if j >= dict.atoms() {
        return Err(Error::Precondition(format!(
            "atom index {j} out of range for {} atoms",
            dict.atoms()
        )));
    }
    let support = codes.row_support(j).to_vec();
    if support.is_empty() {
        return Ok(RestrictedError {
            atom: j,
            support,
            matrix: None,
        });
    }
    let mut buf = Vec::new();
    let cols = fill_restricted_error(data, dict, codes, j, &mut buf);
    Ok(RestrictedError {
        atom: j,
        support,
        matrix: Some(DenseMatrix::from_raw(dict.dim(), cols, buf)),
    })
}

/// Flips signs so the largest-magnitude entry of `u` is positive (lowest
/// index on ties); `v` follows.
fn fix_sign(u: &mut [f64], v: &mut [f64]) {
    let (idx, _) = crate::encoder::argmax_abs(u);
    if u[idx] < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top singular triplet of a `d x cols` column-major buffer via the top
/// eigenpair of `E Eᵀ`. `s_buf` receives `E Eᵀ`.
fn singular_pair_from_buffer(
    e: &[f64],
    d: usize,
    cols: usize,
    start: Option<&[f64]>,
    ctx: &UpdateContext<'_>,
    s_buf: &mut Vec<f64>,
    timing: Option<(&mut Duration, &mut Duration)>,
) -> Result<(SingularPair, bool, usize)> {
    let t0 = Instant::now();
    if norm(e) < ZERO_NORM {
        return Err(Error::ZeroMatrix);
    }
    s_buf.resize(d * d, 0.0);
    gram_outer(e, d, cols, s_buf);
    let t1 = Instant::now();
    let out = ctx.solver.top_eigenpair(s_buf, d, start, &ctx.eigen);
    let t2 = Instant::now();
    if let Some((form, eig)) = timing {
        *form += t1 - t0;
        *eig += t2 - t1;
    }
    let mut u = out.vector;
    let sigma = out.value.max(0.0).sqrt();
    let mut v = vec![0.0; cols];
    if sigma > 0.0 {
        for (c, vc) in v.iter_mut().enumerate() {
            *vc = crate::matrix::dot(&e[c * d..(c + 1) * d], &u) / sigma;
        }
    }
    fix_sign(&mut u, &mut v);
    Ok((SingularPair { u, sigma, v }, out.converged, out.matvecs))
}

/// Top singular triplet of a restricted error matrix.
///
/// `NoConvergence` carries the best iterate when the iteration cap is hit.
pub fn top_singular_pair(err: &RestrictedError, ctx: &UpdateContext<'_>) -> Result<SingularPair> {
    let e = err
        .matrix
        .as_ref()
        .ok_or_else(|| Error::Precondition(format!("atom {} has an empty support", err.atom)))?;
    top_singular_pair_of(e, None, ctx)
}

/// [`top_singular_pair`] for any dense matrix, with an optional warm start
/// for the left vector.
pub fn top_singular_pair_of(
    e: &DenseMatrix,
    start: Option<&[f64]>,
    ctx: &UpdateContext<'_>,
) -> Result<SingularPair> {
    let mut s = Vec::new();
    let (pair, converged, _) =
        singular_pair_from_buffer(e.as_slice(), e.rows(), e.cols(), start, ctx, &mut s, None)?;
    if !converged {
        let mut scratch = vec![0.0; e.rows()];
        crate::matrix::symv(&s, e.rows(), &pair.u, &mut scratch);
        let lambda = crate::matrix::dot(&pair.u, &scratch);
        let r: f64 = scratch
            .iter()
            .zip(&pair.u)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        return Err(Error::NoConvergence {
            best: Box::new(pair),
            residual: r / lambda.abs().max(f64::MIN_POSITIVE),
        });
    }
    Ok(pair)
}

/// Per-worker buffers for `E_j` and `E_j E_jᵀ`.
#[derive(Default)]
struct Scratch {
    e: Vec<f64>,
    s: Vec<f64>,
    form: Duration,
    eigen: Duration,
    matvecs: usize,
}

fn compute_update(
    data: &DenseMatrix,
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
    j: usize,
    ctx: &UpdateContext<'_>,
    scratch: &mut Scratch,
) -> Result<AtomUpdate> {
    let t0 = Instant::now();
    let cols = fill_restricted_error(data, dict, codes, j, &mut scratch.e);
    scratch.form += t0.elapsed();
    if cols == 0 {
        return Ok(AtomUpdate::ReinitRequested(j));
    }
    let Scratch {
        e, s, form, eigen, ..
    } = scratch;
    match singular_pair_from_buffer(
        e,
        dict.dim(),
        cols,
        Some(dict.atom(j)),
        ctx,
        s,
        Some((form, eigen)),
    ) {
        Ok((pair, converged, matvecs)) => {
            scratch.matvecs += matvecs;
            let values = pair.v.iter().map(|v| pair.sigma * v).collect();
            Ok(AtomUpdate::Replace {
                atom: j,
                column: pair.u,
                values,
                unconverged: !converged,
            })
        }
        // The samples using atom j are already reconstructed exactly without
        // it: keep the atom and zero its coefficients.
        Err(Error::ZeroMatrix) => Ok(AtomUpdate::Replace {
            atom: j,
            column: dict.atom(j).to_vec(),
            values: vec![0.0; cols],
            unconverged: false,
        }),
        Err(e) => Err(e),
    }
}

/// Computes the update of atom `j` against the current state without
/// applying it.
pub fn update_atom(
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
    data: &DenseMatrix,
    j: usize,
    ctx: &UpdateContext<'_>,
) -> Result<AtomUpdate> {
    check_shapes(data, dict, codes)?;
    if j >= dict.atoms() {
        return Err(Error::Precondition(format!("atom index {j} out of range")));
    }
    compute_update(data, dict, codes, j, ctx, &mut Scratch::default())
}

/// Residual norm of every sample, `‖y_s − D x_s‖`.
pub fn residual_norms(data: &DenseMatrix, dict: &Dictionary, codes: &SparseCodeMatrix) -> Vec<f64> {
    (0..data.cols())
        .into_par_iter()
        .map(|s| {
            let mut r = data.col(s).to_vec();
            for &(i, c) in codes.column(s) {
                axpy(-c, dict.atom(i), &mut r);
            }
            norm(&r)
        })
        .collect()
}

/// Picks replacement samples for unused atoms: the worst-reconstructed
/// samples first, skipping samples already used this sweep and samples that
/// are reconstructed exactly or are zero.
pub fn reinit_candidates(
    data: &DenseMatrix,
    dict: &Dictionary,
    codes: &SparseCodeMatrix,
    taken: &[usize],
    count: usize,
) -> Vec<usize> {
    let norms = residual_norms(data, dict, codes);
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .filter(|s| norms[*s] > ZERO_NORM && norm(data.col(*s)) > ZERO_NORM && !taken.contains(s))
        .take(count)
        .collect()
}

/// Applies one batch of updates; unused atoms take the listed samples in
/// order and keep their column when none is left.
fn apply_updates(
    data: &DenseMatrix,
    dict: &mut Dictionary,
    codes: &mut SparseCodeMatrix,
    updates: Vec<AtomUpdate>,
    taken: &mut Vec<usize>,
    stats: &mut UpdateStats,
) -> Result<()> {
    let wanted = updates
        .iter()
        .filter(|u| matches!(u, AtomUpdate::ReinitRequested(_)))
        .count();
    let mut candidates = if wanted > 0 {
        reinit_candidates(data, dict, codes, taken, wanted).into_iter()
    } else {
        Vec::new().into_iter()
    };
    for u in updates {
        match u {
            AtomUpdate::Replace {
                atom,
                column,
                values,
                unconverged,
            } => {
                dict.set_atom(atom, &column)?;
                codes.set_row_values(atom, &values)?;
                stats.unconverged += usize::from(unconverged);
            }
            AtomUpdate::ReinitRequested(atom) => {
                codes.clear_row(atom);
                if let Some(s) = candidates.next() {
                    dict.set_atom(atom, data.col(s))?;
                    taken.push(s);
                    stats.reinitialized += 1;
                }
            }
        }
    }
    Ok(())
}

/// Inner-batched sweep over atoms in the given order, `workers` atoms per
/// batch.
pub fn inner_batched_update_ordered(
    data: &DenseMatrix,
    dict: &mut Dictionary,
    codes: &mut SparseCodeMatrix,
    workers: usize,
    order: &[usize],
    ctx: &UpdateContext<'_>,
) -> Result<UpdateStats> {
    check_shapes(data, dict, codes)?;
    if workers == 0 {
        return Err(Error::Precondition("workers must be at least 1".into()));
    }
    let mut stats = UpdateStats::default();
    let mut taken = Vec::new();
    for batch in order.chunks(workers) {
        let snapshot_dict: &Dictionary = dict;
        let snapshot_codes: &SparseCodeMatrix = codes;
        let results: Vec<(Result<AtomUpdate>, Duration, Duration, usize)> = batch
            .par_iter()
            .map_init(Scratch::default, |scratch, &j| {
                scratch.form = Duration::ZERO;
                scratch.eigen = Duration::ZERO;
                scratch.matvecs = 0;
                let r = compute_update(data, snapshot_dict, snapshot_codes, j, ctx, scratch);
                (r, scratch.form, scratch.eigen, scratch.matvecs)
            })
            .collect();
        let mut updates = Vec::with_capacity(results.len());
        for (r, form, eigen, matvecs) in results {
            stats.form += form;
            stats.eigen += eigen;
            stats.matvecs += matvecs;
            updates.push(r?);
        }
        let t = Instant::now();
        apply_updates(data, dict, codes, updates, &mut taken, &mut stats)?;
        stats.apply += t.elapsed();
    }
    Ok(stats)
}

/// Shuffles the atom order with `rng`, then runs
/// [`inner_batched_update_ordered`].
pub fn inner_batched_update<R: Rng + ?Sized>(
    data: &DenseMatrix,
    dict: &mut Dictionary,
    codes: &mut SparseCodeMatrix,
    workers: usize,
    rng: &mut R,
    ctx: &UpdateContext<'_>,
) -> Result<UpdateStats> {
    let mut order: Vec<usize> = (0..dict.atoms()).collect();
    order.shuffle(rng);
    inner_batched_update_ordered(data, dict, codes, workers, &order, ctx)
}
