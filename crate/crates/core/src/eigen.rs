//! Top eigenpair of a dense symmetric positive semi-definite matrix.
//!
//! [`Lanczos`] is the production path; [`DenseEigen`] runs a full symmetric
//! eigendecomposition and is kept as a selectable alternative.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::matrix::{axpy, dot, norm, symv};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenSettings {
    /// Relative eigen-residual `‖S u − λ u‖ / λ` accepted as converged.
    pub tol: f64,
    /// Matrix-vector product cap; `None` means `3 * n`.
    pub max_iters: Option<usize>,
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: None,
        }
    }
}

impl EigenSettings {
    pub fn max_iters_for(&self, n: usize) -> usize {
        self.max_iters.unwrap_or(3 * n).max(1)
    }
}

/// Krylov basis length after which Lanczos restarts: `2⌈log₂ n⌉ + 20`.
pub fn restart_length(n: usize) -> usize {
    let log2 = if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    };
    2 * log2 + 20
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenOutcome {
    /// Rayleigh quotient of `vector`.
    pub value: f64,
    /// Unit-norm eigenvector estimate.
    pub vector: Vec<f64>,
    /// Relative eigen-residual of (`value`, `vector`).
    pub residual: f64,
    pub matvecs: usize,
    pub converged: bool,
}

pub trait TopEigenSolver: Send + Sync {
    fn name(&self) -> &'static str;

    /// Largest eigenpair of the column-major `n x n` symmetric matrix `s`.
    /// `start`, when given, seeds the iteration.
    fn top_eigenpair(
        &self,
        s: &[f64],
        n: usize,
        start: Option<&[f64]>,
        settings: &EigenSettings,
    ) -> EigenOutcome;
}

fn relative_residual(s: &[f64], n: usize, u: &[f64], scratch: &mut [f64]) -> (f64, f64) {
    symv(s, n, u, scratch);
    let lambda = dot(u, scratch);
    let mut r2 = 0.0;
    for (su, ui) in scratch.iter().zip(u) {
        let e = su - lambda * ui;
        r2 += e * e;
    }
    let scale = lambda.abs().max(f64::MIN_POSITIVE);
    (lambda, r2.sqrt() / scale)
}

/// Fixed pseudo-random unit vector used to seed or perturb starts.
fn probe_vector(n: usize) -> Vec<f64> {
    // Weyl sequence on the golden ratio, centered; no zero entries for n > 0.
    let phi = 0.618_033_988_749_894_9_f64;
    let v: Vec<f64> = (0..n)
        .map(|i| ((i as f64 + 1.0) * phi).fract() - 0.5 + 1e-3)
        .collect();
    let nv = norm(&v);
    v.into_iter().map(|x| x / nv).collect()
}

/// Start vector: the warm start mixed with a small fixed probe so that no
/// eigendirection is exactly absent from the Krylov space.
fn start_vector(n: usize, start: Option<&[f64]>) -> Vec<f64> {
    let probe = probe_vector(n);
    let mut v = match start {
        Some(s) if norm(s) > 0.0 => {
            let ns = norm(s);
            let mut v: Vec<f64> = s.iter().map(|x| x / ns).collect();
            axpy(1e-2, &probe, &mut v);
            v
        }
        _ => probe,
    };
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

/// Largest eigenpair of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`.
fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let (idx, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty tridiagonal");
    (theta, eig.eigenvectors.column(idx).iter().copied().collect())
}

/// Restarted Lanczos with full reorthogonalization against the current
/// Krylov basis. Each cycle restarts from the current Ritz vector.
#[derive(Clone, Copy, Debug, Default)]
pub struct Lanczos;

impl TopEigenSolver for Lanczos {
    fn name(&self) -> &'static str {
        "lanczos"
    }

    fn top_eigenpair(
        &self,
        s: &[f64],
        n: usize,
        start: Option<&[f64]>,
        settings: &EigenSettings,
    ) -> EigenOutcome {
        let max_iters = settings.max_iters_for(n);
        let restart = restart_length(n).min(n).max(1);
        let mut scratch = vec![0.0; n];
        let mut v0 = start_vector(n, start);
        let mut matvecs = 0;
        let mut best: Option<EigenOutcome> = None;

        loop {
            let mut basis: Vec<Vec<f64>> = vec![v0.clone()];
            let mut alpha = Vec::with_capacity(restart);
            let mut beta: Vec<f64> = Vec::with_capacity(restart);
            let mut w = vec![0.0; n];
            let mut ritz;
            loop {
                let j = basis.len() - 1;
                symv(s, n, &basis[j], &mut w);
                matvecs += 1;
                let a = dot(&basis[j], &w);
                alpha.push(a);
                axpy(-a, &basis[j], &mut w);
                if j > 0 {
                    axpy(-beta[j - 1], &basis[j - 1], &mut w);
                }
                for _ in 0..2 {
                    for q in &basis {
                        let c = dot(q, &w);
                        axpy(-c, q, &mut w);
                    }
                }
                let b = norm(&w);
                ritz = tridiagonal_top(&alpha, &beta);
                let (theta, ref y) = ritz;
                let estimate = (b * y[j]).abs();
                let breakdown = b <= 1e-13 * theta.abs().max(f64::MIN_POSITIVE);
                if estimate <= settings.tol * theta.abs()
                    || breakdown
                    || basis.len() >= restart
                    || matvecs >= max_iters
                {
                    break;
                }
                beta.push(b);
                basis.push(w.iter().map(|x| x / b).collect());
            }

            let y = &ritz.1;
            let mut u = vec![0.0; n];
            for (q, &c) in basis.iter().zip(y) {
                axpy(c, q, &mut u);
            }
            let nu = norm(&u);
            u.iter_mut().for_each(|x| *x /= nu);
            let (value, residual) = relative_residual(s, n, &u, &mut scratch);
            matvecs += 1;
            let converged = residual <= settings.tol;
            if best.as_ref().is_none_or(|b| residual < b.residual) {
                best = Some(EigenOutcome {
                    value,
                    vector: u.clone(),
                    residual,
                    matvecs,
                    converged,
                });
            }
            if converged || matvecs >= max_iters {
                let mut out = best.expect("at least one cycle");
                out.matvecs = matvecs;
                return out;
            }
            v0 = u;
        }
    }
}

/// Full symmetric eigendecomposition of `S`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DenseEigen;

impl TopEigenSolver for DenseEigen {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn top_eigenpair(
        &self,
        s: &[f64],
        n: usize,
        _start: Option<&[f64]>,
        _settings: &EigenSettings,
    ) -> EigenOutcome {
        let eig = SymmetricEigen::new(DMatrix::from_column_slice(n, n, s));
        let (idx, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty matrix");
        let u: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let mut scratch = vec![0.0; n];
        let (value, residual) = relative_residual(s, n, &u, &mut scratch);
        EigenOutcome {
            value,
            vector: u,
            residual,
            matvecs: 1,
            converged: true,
        }
    }
}
