//! Named training strategies and eigen solvers, selected at run time.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::config::TrainingConfig;
use crate::eigen::{DenseEigen, EigenSettings, Lanczos, TopEigenSolver};
use crate::encoder::{build_gram_cache, encode_batch, MpSettings};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Dictionary, Parallelism};
use crate::matryoshka::{default_groups, make_layout, matryoshka_iteration, MatryoshkaStep};
use crate::reference::naive_ksvd_iteration;
use crate::seed::derived_rng;
use crate::sparse::SparseCodeMatrix;
use crate::updater::{inner_batched_update, UpdateContext, UpdateStats};

/// Wall time spent in each phase of an iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseTimes {
    pub gram: Duration,
    pub encode: Duration,
    pub update: Duration,
    /// Summed over workers, so may exceed `update`.
    pub form: Duration,
    pub eigen: Duration,
    pub apply: Duration,
    pub reinitialized: usize,
    pub unconverged: usize,
    pub matvecs: usize,
}

impl PhaseTimes {
    pub fn absorb(&mut self, stats: &UpdateStats) {
        self.form += stats.form;
        self.eigen += stats.eigen;
        self.apply += stats.apply;
        self.reinitialized += stats.reinitialized;
        self.unconverged += stats.unconverged;
        self.matvecs += stats.matvecs;
    }

    /// Cache build plus MP.
    pub fn encode_total(&self) -> Duration {
        self.gram + self.encode
    }
}

/// Everything an iteration needs besides the dictionary it mutates.
#[derive(Clone, Copy)]
pub struct IterationInput<'a> {
    pub data: &'a DenseMatrix,
    pub config: &'a TrainingConfig,
    pub seed: u64,
    pub par: Parallelism,
    pub solver: &'a dyn TopEigenSolver,
}

impl IterationInput<'_> {
    fn update_context(&self) -> UpdateContext<'_> {
        UpdateContext::new(
            self.solver,
            EigenSettings {
                tol: self.config.lanczos_tol,
                max_iters: self.config.lanczos_max_iters,
            },
        )
    }
}

/// One outer training iteration: encode the batch, then update the atoms.
pub trait IterationStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn summary(&self) -> &'static str;

    /// Runs one iteration, returning the codes left after the update.
    fn iterate(
        &self,
        dict: &mut Dictionary,
        input: &IterationInput<'_>,
        times: &mut PhaseTimes,
    ) -> Result<SparseCodeMatrix>;
}

/// Parallel MP plus inner-batched atom updates.
#[derive(Clone, Copy, Debug, Default)]
pub struct DbKsvd;

impl IterationStrategy for DbKsvd {
    fn name(&self) -> &'static str {
        "db-ksvd"
    }

    fn summary(&self) -> &'static str {
        "parallel MP with inner-batched rank-1 updates"
    }

    fn iterate(
        &self,
        dict: &mut Dictionary,
        input: &IterationInput<'_>,
        times: &mut PhaseTimes,
    ) -> Result<SparseCodeMatrix> {
        let mp = MpSettings::from_config(input.config);
        let t = Instant::now();
        let cache = build_gram_cache(dict, input.data, input.par)?;
        times.gram += t.elapsed();
        let t = Instant::now();
        let mut codes = encode_batch(&cache, dict, &mp, input.par)?;
        times.encode += t.elapsed();
        drop(cache);

        let t = Instant::now();
        let mut rng = derived_rng(input.seed, "update", &[0]);
        let ctx = input.update_context();
        let width = input.config.workers.min(dict.atoms()).max(1);
        let stats = inner_batched_update(input.data, dict, &mut codes, width, &mut rng, &ctx)?;
        times.update += t.elapsed();
        times.absorb(&stats);
        Ok(codes)
    }
}

/// Nested groups trained on successive residuals.
#[derive(Clone, Copy, Debug, Default)]
pub struct Matryoshka;

impl IterationStrategy for Matryoshka {
    fn name(&self) -> &'static str {
        "matryoshka"
    }

    fn summary(&self) -> &'static str {
        "nested atom groups, each fit to the residual of the earlier ones"
    }

    fn iterate(
        &self,
        dict: &mut Dictionary,
        input: &IterationInput<'_>,
        times: &mut PhaseTimes,
    ) -> Result<SparseCodeMatrix> {
        let cfg = input.config;
        let sizes = if cfg.groups.is_empty() {
            default_groups(dict.atoms()).ok_or_else(|| {
                Error::InvalidConfig(format!("no default groups for {} atoms; set groups", dict.atoms()))
            })?
        } else {
            cfg.groups.clone()
        };
        let layout = make_layout(dict.atoms(), cfg.sparsity, &sizes)?;
        let step = MatryoshkaStep {
            mp: MpSettings::from_config(cfg),
            workers: cfg.workers,
            par: input.par,
            update: input.update_context(),
            seed: input.seed,
        };
        matryoshka_iteration(input.data, dict, &layout, &step, times)
    }
}

/// Classic sequential K-SVD: atoms in index order, dense SVD per atom.
#[derive(Clone, Copy, Debug, Default)]
pub struct SequentialKsvd;

impl IterationStrategy for SequentialKsvd {
    fn name(&self) -> &'static str {
        "ksvd"
    }

    fn summary(&self) -> &'static str {
        "sequential K-SVD baseline with dense SVD per atom"
    }

    fn iterate(
        &self,
        dict: &mut Dictionary,
        input: &IterationInput<'_>,
        times: &mut PhaseTimes,
    ) -> Result<SparseCodeMatrix> {
        let mp = MpSettings::from_config(input.config);
        let t = Instant::now();
        let cache = build_gram_cache(dict, input.data, input.par)?;
        times.gram += t.elapsed();
        let t = Instant::now();
        let codes = encode_batch(&cache, dict, &mp, input.par)?;
        times.encode += t.elapsed();
        drop(cache);

        let t = Instant::now();
        let (next, codes) = naive_ksvd_iteration(input.data, dict, &codes)?;
        *dict = next;
        times.update += t.elapsed();
        Ok(codes)
    }
}

/// Name-keyed collection of trait objects.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Arc<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds `item` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, item: Arc<T>) {
        match self.entries.iter_mut().find(|e| e.0 == name) {
            Some(e) => e.1 = item,
            None => self.entries.push((name, item)),
        }
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .iter()
            .find(|e| e.0 == name)
            .map(|e| Arc::clone(&e.1))
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.0).collect()
    }
}

/// Built-in training strategies.
pub fn strategies() -> Registry<dyn IterationStrategy> {
    let mut r: Registry<dyn IterationStrategy> = Registry::new("strategy");
    let builtins: [Arc<dyn IterationStrategy>; 3] =
        [Arc::new(DbKsvd), Arc::new(Matryoshka), Arc::new(SequentialKsvd)];
    for s in builtins {
        r.register(s.name(), s);
    }
    r
}

/// Built-in top-eigenpair solvers.
pub fn solvers() -> Registry<dyn TopEigenSolver> {
    let mut r: Registry<dyn TopEigenSolver> = Registry::new("solver");
    let builtins: [Arc<dyn TopEigenSolver>; 2] = [Arc::new(Lanczos), Arc::new(DenseEigen)];
    for s in builtins {
        r.register(s.name(), s);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        assert_eq!(strategies().names(), vec!["db-ksvd", "matryoshka", "ksvd"]);
        assert_eq!(strategies().get("matryoshka").unwrap().name(), "matryoshka");
        assert_eq!(solvers().get("dense").unwrap().name(), "dense");
    }

    #[test]
    fn unknown_name_lists_choices() {
        let err = strategies().get("omp").err().unwrap();
        let text = err.to_string();
        assert!(text.contains("omp") && text.contains("db-ksvd"), "{text}");
    }

    #[test]
    fn register_replaces() {
        let mut r = solvers();
        r.register("lanczos", Arc::new(DenseEigen));
        assert_eq!(r.names().len(), 2);
        assert_eq!(r.get("lanczos").unwrap().name(), "dense");
    }
}
