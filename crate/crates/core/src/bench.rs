//! Per-phase wall times of single training iterations on synthetic data.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::driver::initialize_dictionary;
use crate::eigen::TopEigenSolver;
use crate::encoder::{build_gram_cache, encode_batch, MpSettings};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Dictionary, Parallelism};
use crate::reference::{generate_planted, PlantedSpec};
use crate::seed::derived_rng;
use crate::updater::{inner_batched_update_ordered, UpdateContext};

pub const PHASES: [&str; 6] = ["gram", "mp", "encode", "form", "eigen", "update"];

#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub d: usize,
    pub atoms: usize,
    pub sparsity: usize,
    pub batch: usize,
    pub workers: usize,
    pub trials: usize,
    pub seed: u64,
    /// Update only this many atoms per trial; all when `None`.
    pub update_atoms: Option<usize>,
    pub deterministic: bool,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.atoms == 0 || self.batch == 0 || self.trials == 0 || self.workers == 0 {
            return Err(Error::InvalidConfig("bench sizes must all be positive".into()));
        }
        if self.sparsity == 0 || self.sparsity > self.atoms {
            return Err(Error::InvalidConfig(format!(
                "sparsity {} outside 1..={}",
                self.sparsity, self.atoms
            )));
        }
        Ok(())
    }
}

/// Seconds spent in one phase of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTiming {
    pub phase: &'static str,
    pub trial: usize,
    pub workers: usize,
    pub batch: usize,
    pub seconds: f64,
}

/// Synthetic batch and starting dictionary for a bench configuration.
pub fn bench_inputs(spec: &BenchSpec) -> Result<(DenseMatrix, Dictionary)> {
    let k = spec.sparsity.min(spec.d);
    let planted = generate_planted(
        &PlantedSpec::new(spec.d, spec.atoms, k, spec.batch)
            .with_noise(0.01)
            .with_seed(spec.seed),
    )?;
    let dict = initialize_dictionary(spec.d, spec.atoms, spec.seed)?;
    Ok((planted.data, dict))
}

/// Runs `trials` single iterations from the same starting point. `form` and
/// `eigen` are summed over workers; the other phases are wall times.
pub fn run_bench(
    spec: &BenchSpec,
    data: &DenseMatrix,
    dict: &Dictionary,
    solver: &dyn TopEigenSolver,
) -> Result<Vec<PhaseTiming>> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let par = Parallelism::new(spec.workers, spec.deterministic);
    let mp = MpSettings::new(spec.sparsity);
    let ctx = UpdateContext::new(solver, Default::default());
    let mut out = Vec::new();
    for trial in 0..spec.trials {
        let mut dict = dict.clone();
        let t = Instant::now();
        let cache = pool.install(|| build_gram_cache(&dict, data, par))?;
        let gram = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let mut codes = pool.install(|| encode_batch(&cache, &dict, &mp, par))?;
        let mp_time = t.elapsed().as_secs_f64();
        drop(cache);

        let mut order: Vec<usize> = (0..dict.atoms()).collect();
        order.shuffle(&mut derived_rng(spec.seed, "bench/order", &[trial as u64]));
        order.truncate(spec.update_atoms.unwrap_or(order.len()));
        let t = Instant::now();
        let stats = pool.install(|| {
            inner_batched_update_ordered(data, &mut dict, &mut codes, spec.workers, &order, &ctx)
        })?;
        let update = t.elapsed().as_secs_f64();

        let values = [
            gram,
            mp_time,
            gram + mp_time,
            stats.form.as_secs_f64(),
            stats.eigen.as_secs_f64(),
            update,
        ];
        for (phase, seconds) in PHASES.iter().zip(values) {
            out.push(PhaseTiming {
                phase,
                trial,
                workers: spec.workers,
                batch: spec.batch,
                seconds,
            });
        }
    }
    Ok(out)
}

/// Fastest trial per phase, in [`PHASES`] order.
pub fn minima(timings: &[PhaseTiming]) -> Vec<(&'static str, f64)> {
    PHASES
        .iter()
        .filter_map(|&p| min_phase(timings, p).map(|s| (p, s)))
        .collect()
}

/// Fastest time recorded for `phase`.
pub fn min_phase(timings: &[PhaseTiming], phase: &str) -> Option<f64> {
    timings
        .iter()
        .filter(|t| t.phase == phase)
        .map(|t| t.seconds)
        .reduce(f64::min)
}
