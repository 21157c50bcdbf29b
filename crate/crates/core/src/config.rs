//! Run parameters and the flat `key = value` config format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Precision;

/// All parameters of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Dictionary size m.
    pub atoms: usize,
    /// Nonzeros per sample code, k.
    pub sparsity: usize,
    /// Samples per outer batch, n_b.
    pub batch_size: usize,
    /// Outer iterations T.
    pub iterations: usize,
    /// Worker count w; also the inner-batch width.
    pub workers: usize,
    pub seed: u64,
    /// Matryoshka group sizes; empty for plain training.
    pub groups: Vec<usize>,
    /// MP stops once the largest residual correlation falls below this
    /// fraction of the initial one.
    pub mp_rel_tol: f64,
    /// MP step cap as a multiple of k (re-selections count as steps).
    pub mp_step_factor: usize,
    /// Relative eigen-residual at which Lanczos stops.
    pub lanczos_tol: f64,
    /// Lanczos matrix-vector product cap; `None` means `3 * d`.
    pub lanczos_max_iters: Option<usize>,
    pub early_stop: bool,
    pub early_stop_delta: f64,
    pub early_stop_window: usize,
    /// Partition parallel products independently of the worker count.
    pub deterministic: bool,
    /// Registered iteration strategy name.
    pub strategy: String,
    /// Registered eigen-solver name.
    pub solver: String,
    /// Scalar width used when writing outputs.
    pub precision: Precision,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            atoms: 4096,
            sparsity: 20,
            batch_size: 1 << 16,
            iterations: 40,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            seed: 0,
            groups: Vec::new(),
            mp_rel_tol: 1e-7,
            mp_step_factor: 10,
            lanczos_tol: 1e-6,
            lanczos_max_iters: None,
            early_stop: false,
            early_stop_delta: 1e-4,
            early_stop_window: 5,
            deterministic: true,
            strategy: String::from("db-ksvd"),
            solver: String::from("lanczos"),
            precision: Precision::F32,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {key} = '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("cannot parse {key} = '{value}' as bool"))),
    }
}

/// Parses a comma list such as `256,256,512`. Empty input yields an empty list.
pub fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl TrainingConfig {
    pub fn new(atoms: usize, sparsity: usize) -> Self {
        Self {
            atoms,
            sparsity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.atoms == 0 {
            return bad("atoms must be at least 1".into());
        }
        if self.sparsity == 0 || self.sparsity > self.atoms {
            return bad(format!(
                "sparsity must satisfy 1 <= k <= m, got k = {} with m = {}",
                self.sparsity, self.atoms
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.mp_step_factor == 0 {
            return bad("mp_step_factor must be at least 1".into());
        }
        if !(self.mp_rel_tol >= 0.0 && self.lanczos_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if !self.groups.is_empty() {
            let total: usize = self.groups.iter().sum();
            if total != self.atoms {
                return bad(format!("group sizes sum to {total}, expected {}", self.atoms));
            }
            if self.groups.windows(2).any(|w| w[0] > w[1]) {
                return bad("group sizes must be nondecreasing".into());
            }
            if self.groups.contains(&0) {
                return bad("group sizes must be positive".into());
            }
            if self.groups.len() > self.sparsity {
                return bad(format!(
                    "{} groups cannot share a budget of k = {}",
                    self.groups.len(),
                    self.sparsity
                ));
            }
        }
        Ok(())
    }

    /// Maximum MP steps per sample.
    pub fn mp_max_steps(&self) -> usize {
        self.sparsity * self.mp_step_factor
    }

    /// Strategy actually used: a plain `db-ksvd` request with groups set runs
    /// the Matryoshka variant.
    pub fn effective_strategy(&self) -> &str {
        if !self.groups.is_empty() && self.strategy == "db-ksvd" {
            "matryoshka"
        } else {
            &self.strategy
        }
    }

    /// Applies one `key = value` setting. Keys match the long CLI flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        match key {
            "atoms" => self.atoms = parse(key, value)?,
            "sparsity" => self.sparsity = parse(key, value)?,
            "batch" | "batch_size" => self.batch_size = parse(key, value)?,
            "iters" | "iterations" => self.iterations = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "groups" => self.groups = parse_list(key, value)?,
            "mp_rel_tol" => self.mp_rel_tol = parse(key, value)?,
            "mp_step_factor" => self.mp_step_factor = parse(key, value)?,
            "lanczos_tol" => self.lanczos_tol = parse(key, value)?,
            "lanczos_max_iters" => {
                self.lanczos_max_iters = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "early_stop" => self.early_stop = parse_bool(key, value)?,
            "early_stop_delta" => self.early_stop_delta = parse(key, value)?,
            "early_stop_window" => self.early_stop_window = parse(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "strategy" => self.strategy = value.to_string(),
            "solver" => self.solver = value.to_string(),
            "precision" => self.precision = value.parse()?,
            other => return Err(Error::InvalidConfig(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every setting in a flat config text. Blank lines and lines
    /// starting with `#` are ignored. Keys this struct does not own are
    /// returned for the caller.
    pub fn apply_flat(&mut self, text: &str) -> Result<Vec<(String, String)>> {
        let mut extra = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", n + 1))
            })?;
            match self.set(k, v) {
                Err(Error::InvalidConfig(msg)) if msg.starts_with("unknown config key") => {
                    extra.push((k.trim().to_string(), v.trim().to_string()))
                }
                r => r?,
            }
        }
        Ok(extra)
    }

    pub fn load_flat(&mut self, path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
        let text = std::fs::read_to_string(path)?;
        self.apply_flat(&text)
    }

    /// Renders every field as flat `key = value` lines.
    pub fn to_flat(&self) -> String {
        let groups = self
            .groups
            .iter()
            .map(|g| g.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let max_iters = self
            .lanczos_max_iters
            .map_or_else(|| "auto".to_string(), |v| v.to_string());
        let precision = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        format!(
            "atoms = {}\nsparsity = {}\nbatch = {}\niters = {}\nworkers = {}\nseed = {}\n\
             groups = {}\nmp_rel_tol = {:e}\nmp_step_factor = {}\nlanczos_tol = {:e}\n\
             lanczos_max_iters = {}\nearly_stop = {}\nearly_stop_delta = {:e}\n\
             early_stop_window = {}\ndeterministic = {}\nstrategy = {}\nsolver = {}\n\
             precision = {}\n",
            self.atoms,
            self.sparsity,
            self.batch_size,
            self.iterations,
            self.workers,
            self.seed,
            groups,
            self.mp_rel_tol,
            self.mp_step_factor,
            self.lanczos_tol,
            max_iters,
            self.early_stop,
            self.early_stop_delta,
            self.early_stop_window,
            self.deterministic,
            self.strategy,
            self.solver,
            precision,
        )
    }
}
