//! The outer training loop over mini-batches, plus corpus-wide encoding.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::TrainingConfig;
use crate::eigen::{restart_length, TopEigenSolver};
use crate::encoder::{build_gram_cache, encode_batch, MpSettings};
use crate::error::{Error, Result};
use crate::io::{load_column_window, load_matrix, read_header};
use crate::matrix::{normalize_columns, DenseMatrix, Dictionary, Parallelism};
use crate::metrics::{mean_relative_error, variance_explained};
use crate::seed::derived_rng;
use crate::sparse::SparseCodeMatrix;
use crate::strategy::{solvers, strategies, IterationInput, IterationStrategy, PhaseTimes};

/// Random dictionary with entries drawn from U(-1/2, 1/2), columns normalized.
pub fn initialize_dictionary(d: usize, m: usize, seed: u64) -> Result<Dictionary> {
    if d == 0 || m == 0 {
        return Err(Error::Precondition(format!("cannot initialize a {d}x{m} dictionary")));
    }
    let mut rng = derived_rng(seed, "init", &[]);
    let values: Vec<f64> = (0..d * m).map(|_| rng.random_range(-0.5..0.5)).collect();
    normalize_columns(DenseMatrix::new(d, m, values)?)
}

#[derive(Clone, Debug)]
enum Backing {
    Memory(Arc<DenseMatrix>),
    File(PathBuf),
}

#[derive(Clone, Copy, Debug)]
struct Window {
    backing: usize,
    start: usize,
    count: usize,
}

/// Where the validation batch comes from.
#[derive(Clone, Debug, Default)]
pub enum Validation {
    /// The first window, held out of training when there are at least two.
    #[default]
    FirstBatch,
    Data(Arc<DenseMatrix>),
    File(PathBuf),
    Off,
}

/// Training samples split into disjoint column windows.
#[derive(Clone, Debug)]
pub struct DataSource {
    dim: usize,
    backings: Vec<Backing>,
    windows: Vec<Window>,
    validation: Validation,
}

fn split(backing: usize, n: usize, batch: usize, out: &mut Vec<Window>) {
    let mut start = 0;
    while start < n {
        let count = batch.min(n - start);
        out.push(Window { backing, start, count });
        start += count;
    }
}

impl DataSource {
    /// Source with no samples.
    pub fn empty(dim: usize) -> Self {
        DataSource {
            dim,
            backings: Vec::new(),
            windows: Vec::new(),
            validation: Validation::Off,
        }
    }

    pub fn in_memory(data: DenseMatrix, batch_size: usize) -> Result<Self> {
        Self::from_matrices(vec![data], batch_size)
    }

    /// Each matrix is split into windows of at most `batch_size` columns.
    pub fn from_matrices(parts: Vec<DenseMatrix>, batch_size: usize) -> Result<Self> {
        let dim = parts.first().map(DenseMatrix::rows).unwrap_or(0);
        let mut src = Self::empty(dim);
        src.validation = Validation::FirstBatch;
        for m in parts {
            let (rows, cols) = (m.rows(), m.cols());
            src.push(Backing::Memory(Arc::new(m)), rows, cols, batch_size)?;
        }
        Ok(src)
    }

    /// EMB1 files, each split into windows of at most `batch_size` columns.
    /// Windows are loaded on demand.
    pub fn from_files<P: AsRef<Path>>(paths: &[P], batch_size: usize) -> Result<Self> {
        let mut src = Self::empty(0);
        src.validation = Validation::FirstBatch;
        for (i, p) in paths.iter().enumerate() {
            let h = read_header(p)?;
            if i == 0 {
                src.dim = h.rows as usize;
            }
            let path = p.as_ref().to_path_buf();
            src.push(Backing::File(path), h.rows as usize, h.cols as usize, batch_size)?;
        }
        Ok(src)
    }

    fn push(&mut self, backing: Backing, rows: usize, cols: usize, batch_size: usize) -> Result<()> {
        if batch_size == 0 {
            return Err(Error::Precondition("batch size must be at least 1".into()));
        }
        if rows != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "batch of dimension {rows} in a source of dimension {}",
                self.dim
            )));
        }
        self.backings.push(backing);
        split(self.backings.len() - 1, cols, batch_size, &mut self.windows);
        Ok(())
    }

    pub fn with_validation(mut self, validation: Validation) -> Self {
        self.validation = validation;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> usize {
        self.windows.iter().map(|w| w.count).sum()
    }

    pub fn windows(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn load_window(&self, index: usize) -> Result<DenseMatrix> {
        let w = *self
            .windows
            .get(index)
            .ok_or_else(|| Error::Precondition(format!("no window {index}")))?;
        match &self.backings[w.backing] {
            Backing::Memory(m) => Ok(m.column_range(w.start, w.count)),
            Backing::File(p) => load_column_window(p, w.start, w.count),
        }
    }

    /// Window indices used for training.
    pub fn training_windows(&self) -> Vec<usize> {
        let skip = usize::from(matches!(self.validation, Validation::FirstBatch) && self.windows.len() >= 2);
        (skip..self.windows.len()).collect()
    }

    /// Window trained on at zero-based iteration `t`. Windows are visited in
    /// an order reshuffled every epoch.
    pub fn training_window(&self, t: usize, seed: u64) -> Result<usize> {
        let pool = self.training_windows();
        if pool.is_empty() {
            return Err(Error::Precondition("data source has no training samples".into()));
        }
        let epoch = t / pool.len();
        let mut order = pool;
        order.shuffle(&mut derived_rng(seed, "epoch", &[epoch as u64]));
        Ok(order[t % order.len()])
    }

    /// The frozen validation batch, if any.
    pub fn validation_batch(&self) -> Result<Option<DenseMatrix>> {
        let m = match &self.validation {
            Validation::Off => return Ok(None),
            Validation::FirstBatch if self.windows.is_empty() => return Ok(None),
            Validation::FirstBatch => self.load_window(0)?,
            Validation::Data(m) => m.as_ref().clone(),
            Validation::File(p) => load_matrix(p)?,
        };
        if m.rows() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "validation data has dimension {}, source has {}",
                m.rows(),
                self.dim
            )));
        }
        Ok(Some(m))
    }
}

/// Reconstruction quality of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchMetrics {
    pub mre: f64,
    pub variance_explained: f64,
}

impl BatchMetrics {
    pub fn measure(data: &DenseMatrix, dict: &Dictionary, codes: &SparseCodeMatrix) -> Result<Self> {
        Ok(BatchMetrics {
            mre: mean_relative_error(data, dict, codes)?.value,
            variance_explained: variance_explained(data, dict, codes)?.value,
        })
    }

    fn is_finite(&self) -> bool {
        self.mre.is_finite() && self.variance_explained.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// One-based.
    pub iteration: usize,
    pub batch: usize,
    pub train: BatchMetrics,
    pub validation: Option<BatchMetrics>,
    pub times: PhaseTimes,
}

pub const HISTORY_HEADER: &str = "iter,batch,mre_train,varexp_train,mre_val,varexp_val,encode_s,update_s";

impl IterationRecord {
    /// One CSV line, without the newline.
    pub fn csv_row(&self) -> String {
        let (mv, vv) = match &self.validation {
            Some(v) => (v.mre.to_string(), v.variance_explained.to_string()),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{:.6},{:.6}",
            self.iteration,
            self.batch,
            self.train.mre,
            self.train.variance_explained,
            mv,
            vv,
            self.times.encode_total().as_secs_f64(),
            self.times.update.as_secs_f64()
        )
    }
}

/// Writes history rows as they arrive, flushing each one.
pub struct HistoryWriter<W: Write> {
    out: W,
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{HISTORY_HEADER}")?;
        out.flush()?;
        Ok(HistoryWriter { out })
    }

    pub fn push(&mut self, record: &IterationRecord) -> Result<()> {
        writeln!(self.out, "{}", record.csv_row())?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub dictionary: Dictionary,
    pub history: Vec<IterationRecord>,
    /// Codes of the last training batch under the final dictionary.
    pub last_codes: Option<SparseCodeMatrix>,
    pub stopped_early: bool,
}

/// Configured training run.
pub struct Trainer {
    config: TrainingConfig,
    strategy: Arc<dyn IterationStrategy>,
    solver: Arc<dyn TopEigenSolver>,
    initial: Option<Dictionary>,
}

impl Trainer {
    /// Validates `config` and resolves its strategy and solver by name.
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let strategy = strategies().get(config.effective_strategy())?;
        let solver = solvers().get(&config.solver)?;
        Ok(Trainer {
            config,
            strategy,
            solver,
            initial: None,
        })
    }

    pub fn with_strategy(mut self, strategy: Arc<dyn IterationStrategy>) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_solver(mut self, solver: Arc<dyn TopEigenSolver>) -> Self {
        self.solver = solver;
        self
    }

    /// Starts from `dict` instead of a random initialization.
    pub fn with_initial(mut self, dict: Dictionary) -> Self {
        self.initial = Some(dict);
        self
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    /// Trains, calling `observer` after every iteration. An observer error
    /// aborts the run.
    pub fn run<F>(&self, source: &DataSource, mut observer: F) -> Result<FitResult>
    where
        F: FnMut(&IterationRecord) -> Result<()>,
    {
        let cfg = &self.config;
        let mut dict = match &self.initial {
            Some(d) => d.clone(),
            None => initialize_dictionary(source.dim(), cfg.atoms, cfg.seed)?,
        };
        if dict.dim() != source.dim() || dict.atoms() != cfg.atoms {
            return Err(Error::DimensionMismatch(format!(
                "dictionary {}x{} for data of dimension {} and {} atoms",
                dict.dim(),
                dict.atoms(),
                source.dim(),
                cfg.atoms
            )));
        }
        let mut result = FitResult {
            dictionary: dict.clone(),
            history: Vec::new(),
            last_codes: None,
            stopped_early: false,
        };
        if cfg.iterations == 0 {
            return Ok(result);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        let par = Parallelism::new(cfg.workers, cfg.deterministic);
        let mp = MpSettings::from_config(cfg);
        let validation = source.validation_batch()?;
        info!(
            "training {} atoms on {} samples of dimension {} with {}",
            cfg.atoms,
            source.samples(),
            source.dim(),
            self.strategy.name()
        );

        for t in 0..cfg.iterations {
            let batch = source.training_window(t, cfg.seed)?;
            let data = source.load_window(batch)?;
            let input = IterationInput {
                data: &data,
                config: cfg,
                seed: crate::seed::derive_seed(cfg.seed, "iteration", &[t as u64]),
                par,
                solver: self.solver.as_ref(),
            };
            let mut times = PhaseTimes::default();
            pool.install(|| self.strategy.iterate(&mut dict, &input, &mut times))?;
            if !dict.matrix().is_finite() {
                return Err(Error::NonFiniteState {
                    iteration: t + 1,
                    what: "dictionary".into(),
                });
            }

            let codes = pool.install(|| encode_with(&dict, &data, &mp, par))?;
            let train = BatchMetrics::measure(&data, &dict, &codes)?;
            let val = match &validation {
                Some(v) => {
                    let c = pool.install(|| encode_with(&dict, v, &mp, par))?;
                    Some(BatchMetrics::measure(v, &dict, &c)?)
                }
                None => None,
            };
            if !train.is_finite() || val.is_some_and(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    iteration: t + 1,
                    what: "metrics".into(),
                });
            }
            let record = IterationRecord {
                iteration: t + 1,
                batch,
                train,
                validation: val,
                times,
            };
            debug!("iteration {}: {}", t + 1, record.csv_row());
            observer(&record)?;
            result.history.push(record);
            result.last_codes = Some(codes);
            if cfg.early_stop && plateaued(&result.history, cfg.early_stop_window, cfg.early_stop_delta) {
                info!("stopping early after {} iterations", t + 1);
                result.stopped_early = true;
                break;
            }
        }
        result.dictionary = dict;
        Ok(result)
    }
}

/// True when the best train error of the last `window` iterations improves on
/// the best before them by less than `delta`.
pub fn plateaued(history: &[IterationRecord], window: usize, delta: f64) -> bool {
    if window == 0 || history.len() <= window {
        return false;
    }
    let split = history.len() - window;
    let best = |r: &[IterationRecord]| r.iter().map(|x| x.train.mre).fold(f64::INFINITY, f64::min);
    best(&history[..split]) - best(&history[split..]) < delta
}

/// Trains with the registered strategy and solver named in `config`.
pub fn fit(source: &DataSource, config: &TrainingConfig) -> Result<FitResult> {
    Trainer::new(config.clone())?.run(source, |_| Ok(()))
}

fn encode_with(
    dict: &Dictionary,
    data: &DenseMatrix,
    mp: &MpSettings,
    par: Parallelism,
) -> Result<SparseCodeMatrix> {
    let cache = build_gram_cache(dict, data, par)?;
    encode_batch(&cache, dict, mp, par)
}

/// Encodes every window of `source` in order with the full dictionary.
pub fn encode(
    dict: &Dictionary,
    source: &DataSource,
    settings: &MpSettings,
    par: Parallelism,
) -> Result<SparseCodeMatrix> {
    if !source.is_empty() && source.dim() != dict.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data of dimension {} for a dictionary of dimension {}",
            source.dim(),
            dict.dim()
        )));
    }
    let mut out = SparseCodeMatrix::new(dict.atoms(), 0, settings.k);
    for w in 0..source.windows() {
        let data = source.load_window(w)?;
        let codes = encode_with(dict, &data, settings, par)?;
        out.append(&codes)?;
    }
    Ok(out)
}

/// Analytic peak-memory estimate for training, in bytes.
///
/// Counts the batch and validation batch, the dictionary, Gram matrix and
/// correlations, the codes with their row index, and per-worker scratch:
/// the restricted error, `S = E Eᵀ`, a dense eigensolver copy and the
/// Lanczos basis.
pub fn memory_estimate(d: usize, m: usize, batch: usize, k: usize, workers: usize) -> u64 {
    let (d, m, n, k, w) = (d as u64, m as u64, batch as u64, k as u64, workers as u64);
    let per_atom = (4 * (k * n).div_ceil(m.max(1))).min(n);
    let restart = restart_length(d as usize) as u64;
    let program = 3 * d * n + d * m + m * m + m * n + 3 * k * n + n;
    let scratch = d * per_atom + 3 * d * d + d * (restart + 4);
    8 * (program + w * scratch)
}
