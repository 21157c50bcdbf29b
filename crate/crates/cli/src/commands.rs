use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::CommandFactory;
use log::{info, warn};

use dbksvd::bench::{bench_inputs, minima, run_bench, BenchSpec, PHASES};
use dbksvd::driver::{encode, memory_estimate, DataSource, HistoryWriter, Trainer, Validation};
use dbksvd::encoder::MpSettings;
use dbksvd::io::{load_codes, load_matrix, store_codes, store_matrix};
use dbksvd::metrics::{coherence_report, mean_relative_error, recoverability_limit, variance_explained, welch_bound};
use dbksvd::reference::{generate_planted, PlantedSpec};
use dbksvd::strategy::solvers;
use dbksvd::{normalize_columns, DenseMatrix, Dictionary, Error, Parallelism, TrainingConfig};

use crate::args::{BenchArgs, Cli, EncodeArgs, EvalArgs, SynthArgs, TrainArgs};
use crate::manifest::{digest, now, RunManifest};

fn usage_error(msg: &str) -> ! {
    Cli::command().error(ErrorKind::MissingRequiredArgument, msg).exit()
}

fn host_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")).into())
}

/// `dict.emb1` with suffix `history.csv` becomes `dict.history.csv`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn load_dictionary(path: &Path) -> Result<Dictionary> {
    let m = load_matrix(path).with_context(|| format!("loading dictionary {}", path.display()))?;
    Ok(Dictionary::new(m)?)
}

fn validation_of(flag: Option<&str>) -> Validation {
    match flag {
        None | Some("first") => Validation::FirstBatch,
        Some("none") => Validation::Off,
        Some(path) => Validation::File(PathBuf::from(path)),
    }
}

/// Config from manifest, then config file, then flags.
fn resolve_config(a: &TrainArgs, manifest: Option<&RunManifest>) -> Result<TrainingConfig> {
    let mut cfg = match manifest {
        Some(m) => m.config.clone(),
        None => TrainingConfig {
            atoms: 0,
            sparsity: 0,
            ..TrainingConfig::default()
        },
    };
    if let Some(path) = &a.config {
        let extra = cfg
            .load_flat(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (k, _) in extra {
            warn!("ignoring unknown config key '{k}'");
        }
    }
    if let Some(v) = a.atoms {
        cfg.atoms = v;
    }
    if let Some(v) = a.sparsity {
        cfg.sparsity = v;
    }
    if let Some(v) = a.iters {
        cfg.iterations = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.groups {
        cfg.groups = v.clone();
    }
    if let Some(v) = a.precision {
        cfg.precision = v;
    }
    if let Some(v) = &a.strategy {
        cfg.strategy = v.clone();
    }
    if let Some(v) = &a.solver {
        cfg.solver = v.clone();
    }
    if cfg.atoms == 0 {
        usage_error("the following required arguments were not provided:\n  --atoms <ATOMS>");
    }
    if cfg.sparsity == 0 {
        usage_error("the following required arguments were not provided:\n  --sparsity <SPARSITY>");
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let manifest_in = a.from_manifest.as_deref().map(RunManifest::load).transpose()?;
    let cfg = resolve_config(&a, manifest_in.as_ref())?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let data: Vec<PathBuf> = if !a.data.is_empty() {
        a.data.clone()
    } else if let Some(m) = &manifest_in {
        for input in &m.inputs {
            let now = digest(&input.path)?;
            if now.sha256 != input.sha256 {
                warn!("{} changed since the manifest was written", input.path.display());
            }
        }
        m.inputs.iter().map(|i| i.path.clone()).collect()
    } else {
        usage_error("the following required arguments were not provided:\n  --data <DATA>");
    };
    let validation = a
        .validation
        .clone()
        .or_else(|| manifest_in.as_ref().and_then(|m| m.validation.clone()));
    let init = a
        .init
        .clone()
        .or_else(|| manifest_in.as_ref().and_then(|m| m.init.as_ref().map(|i| i.path.clone())));

    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("dictionary.emb1"));
    let history_path = a.history.clone().unwrap_or_else(|| sibling(&out, "history.csv"));
    let manifest_path = a.manifest.clone().unwrap_or_else(|| sibling(&out, "manifest.json"));

    let source = DataSource::from_files(&data, cfg.batch_size)?.with_validation(validation_of(validation.as_deref()));
    let batch = cfg.batch_size.min(source.samples().max(1));
    let mut manifest = RunManifest {
        toolkit: "dbksvd".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: cfg.clone(),
        inputs: data.iter().map(|p| digest(p)).collect::<Result<_>>()?,
        validation,
        init: init.as_deref().map(digest).transpose()?,
        outputs: vec![out.clone(), history_path.clone()],
        peak_memory_estimate_bytes: memory_estimate(source.dim(), cfg.atoms, batch, cfg.sparsity, cfg.workers),
        started: now(),
        finished: None,
        status: "running".into(),
    };
    manifest.store(&manifest_path)?;

    if let Some(path) = &init {
        trainer = trainer.with_initial(normalize_columns(load_matrix(path)?)?);
    }
    let file = File::create(&history_path).with_context(|| format!("creating {}", history_path.display()))?;
    let mut history = HistoryWriter::new(BufWriter::new(file))?;
    let result = trainer.run(&source, |r| {
        info!(
            "iter {} batch {} mre {:.6} varexp {:.6}",
            r.iteration, r.batch, r.train.mre, r.train.variance_explained
        );
        history.push(r)
    });
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            manifest.finished = Some(now());
            manifest.status = "failed".into();
            manifest.store(&manifest_path)?;
            return Err(e.into());
        }
    };
    store_matrix(&out, result.dictionary.matrix(), cfg.precision)?;
    manifest.finished = Some(now());
    manifest.status = if result.stopped_early { "stopped-early" } else { "completed" }.into();
    manifest.store(&manifest_path)?;
    info!("wrote {}", out.display());
    Ok(())
}

pub fn encode_cmd(a: EncodeArgs) -> Result<()> {
    let dict = load_dictionary(&a.dict)?;
    let source = DataSource::from_files(&a.data, a.batch)?;
    let workers = a.workers.unwrap_or_else(host_workers);
    let settings = MpSettings::new(a.sparsity);
    let codes = pool(workers)?.install(|| encode(&dict, &source, &settings, Parallelism::new(workers, true)))?;
    store_codes(&a.out, &codes)?;
    info!("encoded {} samples into {}", codes.samples(), a.out.display());
    Ok(())
}

fn concat(parts: Vec<DenseMatrix>) -> Result<DenseMatrix> {
    let rows = parts.first().map_or(0, DenseMatrix::rows);
    let cols = parts.iter().map(DenseMatrix::cols).sum();
    let mut values = Vec::with_capacity(rows * cols);
    for p in parts {
        values.extend(p.into_vec());
    }
    Ok(DenseMatrix::new(rows, cols, values)?)
}

/// Values below 1e-12 in magnitude are rounding noise and read as zero.
fn snap(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

fn fmt_value(v: f64) -> String {
    snap(v).to_string()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let dict = load_dictionary(&a.dict)?;
    let workers = a.workers.unwrap_or_else(host_workers);
    let par = Parallelism::new(workers, true);
    let pool = pool(workers)?;
    let report = pool.install(|| coherence_report(&dict, par))?;
    let mut rows: Vec<(&str, String)> = vec![
        ("dim", dict.dim().to_string()),
        ("atoms", dict.atoms().to_string()),
        ("mutual_coherence", fmt_value(report.mutual_coherence)),
        ("median_atom_coherence", fmt_value(report.median_per_atom())),
        ("welch_bound", fmt_value(welch_bound(dict.dim(), dict.atoms()))),
        ("recoverability_limit", recoverability_limit(snap(report.mutual_coherence))?.to_string()),
    ];
    if !a.data.is_empty() {
        let source = DataSource::from_files(&a.data, a.batch)?;
        if source.dim() != dict.dim() {
            return Err(Error::DimensionMismatch(format!(
                "data of dimension {} for a dictionary of dimension {}",
                source.dim(),
                dict.dim()
            ))
            .into());
        }
        let codes = match (&a.codes, a.sparsity) {
            (Some(path), _) => load_codes(path)?,
            (None, Some(k)) => pool.install(|| encode(&dict, &source, &MpSettings::new(k), par))?,
            (None, None) => {
                return Err(Error::InvalidConfig("eval with --data needs --codes or --sparsity".into()).into())
            }
        };
        let data = concat((0..source.windows()).map(|w| source.load_window(w)).collect::<dbksvd::Result<_>>()?)?;
        let mre = mean_relative_error(&data, &dict, &codes)?;
        let ve = variance_explained(&data, &dict, &codes)?;
        rows.push(("samples", data.cols().to_string()));
        rows.push(("mean_relative_error", fmt_value(mre.value)));
        rows.push(("variance_explained", ve.value.to_string()));
    }

    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    writeln!(out, "metric,value")?;
    for (k, v) in rows {
        writeln!(out, "{k},{v}")?;
    }
    out.flush()?;
    if let Some(p) = &a.histogram {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "bin_lo,bin_hi,count")?;
        for (lo, hi, count) in report.histogram_rows() {
            writeln!(w, "{lo},{hi},{count}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = PlantedSpec::new(a.d, a.atoms, a.sparsity, a.samples)
        .with_noise(a.noise)
        .with_seed(a.seed);
    spec.sigma_x = a.sigma_x;
    spec.orthonormal = a.orthonormal;
    let p = generate_planted(&spec)?;
    store_matrix(with_suffix(&a.out, ".y.emb1"), &p.data, a.precision)?;
    store_matrix(with_suffix(&a.out, ".dict.emb1"), p.dictionary.matrix(), a.precision)?;
    store_codes(with_suffix(&a.out, ".codes.spx1"), &p.codes)?;
    let mut w = BufWriter::new(File::create(with_suffix(&a.out, ".json"))?);
    serde_json::to_writer_pretty(&mut w, &spec)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let solver = solvers().get(&a.solver)?;
    let base = BenchSpec {
        d: a.d,
        atoms: a.atoms,
        sparsity: a.sparsity,
        batch: a.batch.first().copied().unwrap_or(0),
        workers: a.workers.first().copied().unwrap_or(0),
        trials: a.trials,
        seed: a.seed,
        update_atoms: a.update_atoms,
        deterministic: true,
    };
    for &batch in &a.batch {
        for &workers in &a.workers {
            BenchSpec { batch, workers, ..base.clone() }.validate()?;
        }
    }
    if a.batch.is_empty() || a.workers.is_empty() {
        return Err(Error::InvalidConfig("bench needs at least one batch size and worker count".into()).into());
    }

    let mut detail = String::from("phase,trial,seconds,workers,batch\n");
    let mut summary = format!("workers,batch,{}\n", PHASES.join(","));
    for &batch in &a.batch {
        let spec = BenchSpec { batch, ..base.clone() };
        let (data, dict) = bench_inputs(&spec)?;
        for &workers in &a.workers {
            let spec = BenchSpec { workers, ..spec.clone() };
            info!("bench d={} m={} n_b={batch} w={workers}", spec.d, spec.atoms);
            let timings = run_bench(&spec, &data, &dict, solver.as_ref())?;
            for t in &timings {
                detail.push_str(&format!("{},{},{:.6},{},{}\n", t.phase, t.trial, t.seconds, t.workers, t.batch));
            }
            let mins: Vec<String> = minima(&timings).iter().map(|(_, s)| format!("{s:.6}")).collect();
            summary.push_str(&format!("{workers},{batch},{}\n", mins.join(",")));
        }
    }
    match &a.out {
        Some(path) => {
            std::fs::write(path, &detail)?;
            let summary_path = a.summary.clone().unwrap_or_else(|| sibling(path, "summary.csv"));
            std::fs::write(summary_path, &summary)?;
        }
        None => {
            let mut out = io::stdout().lock();
            write!(out, "{detail}\n{summary}")?;
            if let Some(p) = &a.summary {
                std::fs::write(p, &summary)?;
            }
        }
    }
    Ok(())
}
