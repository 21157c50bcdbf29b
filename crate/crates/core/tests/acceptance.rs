//! Acceptance criteria 1 to 10. Runs in order, prints one PASS/FAIL line per
//! criterion and exits non-zero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use dbksvd::bench::{bench_inputs, min_phase, run_bench, BenchSpec};
use dbksvd::driver::{fit, initialize_dictionary, DataSource, FitResult};
use dbksvd::eigen::{EigenSettings, Lanczos};
use dbksvd::encoder::{build_gram_cache, encode_batch, MpSettings};
use dbksvd::metrics::{coherence_report, mean_relative_error, variance_explained, welch_bound};
use dbksvd::reference::{
    dense_top_singular_pair, generate_planted, naive_ksvd_iteration, naive_mp_traced, recovery_score,
    PlantedSpec,
};
use dbksvd::seed::{derived_rng, rng};
use dbksvd::updater::{inner_batched_update_ordered, top_singular_pair_of, UpdateContext};
use dbksvd::{normalize_columns, DenseMatrix, Dictionary, Parallelism, SparseCodeMatrix, TrainingConfig};

type Verdict = (bool, String);

fn gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn lanczos() -> UpdateContext<'static> {
    UpdateContext::new(&Lanczos, EigenSettings::default())
}

fn objective(data: &DenseMatrix, dict: &Dictionary, codes: &SparseCodeMatrix) -> f64 {
    codes.residual(data, dict).unwrap().frobenius_norm().powi(2)
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn encoder_oracle() -> Verdict {
    let start = Instant::now();
    let mut r = rng(1001);
    let (mut checked, mut tied, mut bad) = (0usize, 0usize, 0usize);
    let mut worst = 0.0f64;
    for inst in 0..500 {
        let d = [8, 16, 32][inst % 3];
        let m = d * [2, 4][(inst / 3) % 2];
        let k = 1 + (inst / 6) % 8;
        let dict = normalize_columns(gaussian(d, m, &mut r)).unwrap();
        let data = gaussian(d, 4, &mut r);
        let settings = MpSettings::new(k);
        let par = Parallelism::new(2, true);
        let cache = build_gram_cache(&dict, &data, par).unwrap();
        let codes = encode_batch(&cache, &dict, &settings, par).unwrap();
        for s in 0..data.cols() {
            let trace = naive_mp_traced(&dict, data.col(s), &settings);
            if trace.min_margin < 1e-9 {
                tied += 1;
                continue;
            }
            checked += 1;
            let mut want = trace.code.clone();
            want.sort_by_key(|e| e.0);
            let mut got = codes.column(s).to_vec();
            got.sort_by_key(|e| e.0);
            let same_support = want.iter().map(|e| e.0).eq(got.iter().map(|e| e.0));
            if !same_support {
                bad += 1;
                continue;
            }
            for (a, b) in got.iter().zip(&want) {
                let rel = (a.1 - b.1).abs() / b.1.abs();
                worst = worst.max(rel);
                if rel > 1e-5 {
                    bad += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        bad == 0 && secs < 30.0,
        format!(
            "{checked} samples compared, {tied} tied skipped, {bad} mismatches, max coefficient rel err {worst:.2e}, {secs:.1}s"
        ),
    )
}

fn eigen_fidelity() -> Verdict {
    let start = Instant::now();
    let mut r = rng(2002);
    let ctx = lanczos();
    let (mut worst_sigma, mut worst_align) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let rows = r.random_range(2..=64);
        let cols = r.random_range(1..=256);
        let e = gaussian(rows, cols, &mut r);
        let got = top_singular_pair_of(&e, None, &ctx).unwrap();
        let want = dense_top_singular_pair(&e);
        worst_sigma = worst_sigma.max((got.sigma - want.sigma).abs() / want.sigma);
        let align: f64 = got.u.iter().zip(&want.u).map(|(a, b)| a * b).sum::<f64>().abs();
        worst_align = worst_align.max(1.0 - align);
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst_sigma <= 1e-6 && worst_align <= 1e-6 && secs < 10.0,
        format!("max sigma rel err {worst_sigma:.2e}, max 1-|<u,u*>| {worst_align:.2e}, {secs:.2}s"),
    )
}

fn sequential_baseline(dicts: &mut Vec<Dictionary>) -> Verdict {
    let mut r = rng(3003);
    let ctx = lanczos();
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let d = 4 + inst % 13;
        let m = 2 * d;
        let k = 1 + inst % 4;
        let dict = normalize_columns(gaussian(d, m, &mut r)).unwrap();
        let data = gaussian(d, 96, &mut r);
        let par = Parallelism::sequential();
        let cache = build_gram_cache(&dict, &data, par).unwrap();
        let codes = encode_batch(&cache, &dict, &MpSettings::new(k), par).unwrap();

        let (want, _) = naive_ksvd_iteration(&data, &dict, &codes).unwrap();
        let mut got = dict.clone();
        let mut got_codes = codes.clone();
        let order: Vec<usize> = (0..m).collect();
        inner_batched_update_ordered(&data, &mut got, &mut got_codes, 1, &order, &ctx).unwrap();
        let diff = got.matrix().sub(want.matrix()).unwrap().frobenius_norm();
        worst = worst.max(diff);
        dicts.push(got);
    }
    (worst <= 1e-5, format!("max ||D - D_naive||_F = {worst:.2e} over 20 instances"))
}

fn planted_config(m: usize, k: usize, batch: usize, iters: usize, seed: u64) -> TrainingConfig {
    let mut cfg = TrainingConfig::new(m, k);
    cfg.batch_size = batch;
    cfg.iterations = iters;
    cfg.workers = workers();
    cfg.seed = seed;
    cfg
}

fn planted_runs(dicts: &mut Vec<Dictionary>) -> (Verdict, Verdict) {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok4 = true;
    let mut ratios = Vec::new();
    for noise in [0.0, 0.01] {
        let mut scores = Vec::new();
        for seed in 0..5u64 {
            let spec = PlantedSpec::new(32, 64, 4, 16384).with_noise(noise).with_seed(seed);
            let p = generate_planted(&spec).unwrap();
            let src = DataSource::in_memory(p.data.clone(), 4096).unwrap();
            let out: FitResult = fit(&src, &planted_config(64, 4, 4096, 50, seed)).unwrap();
            scores.push(recovery_score(&out.dictionary, &p.dictionary, 0.99).unwrap());
            let first = out.history.first().unwrap().train.mre;
            let last = out.history.last().unwrap().train.mre;
            ratios.push((noise, seed, first, last));
            dicts.push(out.dictionary);
        }
        let floor = if noise == 0.0 { 0.90 } else { 0.80 };
        let med = median(&mut scores.clone());
        ok4 &= med >= floor;
        lines.push(format!(
            "noise {noise}: median recovery {med:.3} (need >= {floor}), scores {scores:?}"
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ok4 &= secs < 300.0;
    lines.push(format!("{secs:.1}s"));

    let ok5 = ratios.iter().all(|&(_, _, a, b)| b * 5.0 <= a);
    let worst = ratios
        .iter()
        .map(|&(_, _, a, b)| a / b)
        .fold(f64::INFINITY, f64::min);
    (
        (ok4, lines.join("; ")),
        (ok5, format!("smallest first/last train MRE ratio {worst:.1} over {} runs", ratios.len())),
    )
}

fn inner_batching(dicts: &mut Vec<Dictionary>) -> Verdict {
    let ctx = lanczos();
    let mut rel = Vec::new();
    for seed in 0..20u64 {
        let p = generate_planted(&PlantedSpec::new(16, 32, 4, 512).with_seed(seed)).unwrap();
        let dict = initialize_dictionary(16, 32, seed).unwrap();
        let par = Parallelism::sequential();
        let cache = build_gram_cache(&dict, &p.data, par).unwrap();
        let codes = encode_batch(&cache, &dict, &MpSettings::new(4), par).unwrap();
        let mut order: Vec<usize> = (0..32).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut derived_rng(seed, "order", &[]));

        let mut objectives = [0.0; 2];
        for (slot, w) in [1usize, 8].into_iter().enumerate() {
            let mut dd = dict.clone();
            let mut cc = codes.clone();
            inner_batched_update_ordered(&p.data, &mut dd, &mut cc, w, &order, &ctx).unwrap();
            objectives[slot] = objective(&p.data, &dd, &cc);
            dicts.push(dd);
        }
        rel.push((objectives[1] - objectives[0]).abs() / objectives[0]);
    }
    let med = median(&mut rel);
    (
        med <= 0.05,
        format!("median |obj(w=8) - obj(w=1)| / obj(w=1) = {med:.4} over 20 seeds"),
    )
}

fn matryoshka_coherence(dicts: &mut Vec<Dictionary>) -> Verdict {
    let par = Parallelism::new(workers(), true);
    let (mut plain, mut nested) = (Vec::new(), Vec::new());
    for seed in 0..10u64 {
        let p = generate_planted(&PlantedSpec::new(32, 64, 8, 8192).with_seed(100 + seed)).unwrap();
        let src = DataSource::in_memory(p.data.clone(), 4096).unwrap();
        let cfg = planted_config(64, 8, 4096, 30, seed);
        let a = fit(&src, &cfg).unwrap().dictionary;
        let mut cfg_m = cfg.clone();
        cfg_m.groups = vec![16, 48];
        let b = fit(&src, &cfg_m).unwrap().dictionary;
        plain.push(coherence_report(&a, par).unwrap().median_per_atom());
        nested.push(coherence_report(&b, par).unwrap().median_per_atom());
        dicts.push(a);
        dicts.push(b);
    }
    let (mp, mm) = (median(&mut plain), median(&mut nested));
    (
        mm <= mp,
        format!("median per-atom max coherence: matryoshka {mm:.4}, plain {mp:.4}"),
    )
}

fn welch_consistency(dicts: &[Dictionary]) -> Verdict {
    let par = Parallelism::new(workers(), true);
    let mut worst = f64::INFINITY;
    let mut checked = 0;
    for dict in dicts.iter().filter(|d| d.atoms() > d.dim()) {
        let mu = coherence_report(dict, par).unwrap().mutual_coherence;
        worst = worst.min(mu - welch_bound(dict.dim(), dict.atoms()));
        checked += 1;
    }
    (
        checked > 0 && worst >= -1e-6,
        format!("{checked} overcomplete dictionaries, min (mu - welch) = {worst:.4}"),
    )
}

fn parallel_scaling() -> Verdict {
    let cores = workers();
    let mut spec = BenchSpec {
        d: 512,
        atoms: 2048,
        sparsity: 20,
        batch: 1 << 15,
        workers: 1,
        trials: 3,
        seed: 9,
        update_atoms: Some(0),
        deterministic: true,
    };
    let (data, dict) = bench_inputs(&spec).unwrap();
    let t1 = min_phase(&run_bench(&spec, &data, &dict, &Lanczos).unwrap(), "encode").unwrap();
    spec.workers = 8;
    let t8 = min_phase(&run_bench(&spec, &data, &dict, &Lanczos).unwrap(), "encode").unwrap();
    drop(data);
    let speedup_ok = t8 <= 0.5 * t1;

    let mut eigen = Vec::new();
    for batch in [1 << 12, 1 << 14] {
        let spec = BenchSpec {
            batch,
            workers: 1,
            update_atoms: Some(128),
            ..spec.clone()
        };
        let (data, dict) = bench_inputs(&spec).unwrap();
        eigen.push(min_phase(&run_bench(&spec, &data, &dict, &Lanczos).unwrap(), "eigen").unwrap());
    }
    let ratio = eigen[1] / eigen[0];
    let eigen_ok = ratio < 1.5;
    (
        speedup_ok && eigen_ok,
        format!(
            "host has {cores} core(s); encode min {t1:.3}s at w=1, {t8:.3}s at w=8 (ratio {:.3}, need <= 0.5): {}; \
             eigen min {:.3}s at n_b=2^12, {:.3}s at n_b=2^14 (ratio {ratio:.3}, need < 1.5): {}",
            t8 / t1,
            if speedup_ok { "ok" } else { "not met" },
            eigen[0],
            eigen[1],
            if eigen_ok { "ok" } else { "not met" },
        ),
    )
}

fn naive_mre(data: &DenseMatrix, recon: &DenseMatrix) -> f64 {
    let mut sum = 0.0;
    let mut used = 0;
    for s in 0..data.cols() {
        let mut ny = 0.0;
        let mut nr = 0.0;
        for i in 0..data.rows() {
            ny += data.get(i, s).powi(2);
            nr += (data.get(i, s) - recon.get(i, s)).powi(2);
        }
        if ny.sqrt() > 1e-12 {
            sum += nr.sqrt() / ny.sqrt();
            used += 1;
        }
    }
    sum / used as f64
}

fn naive_ve(data: &DenseMatrix, recon: &DenseMatrix) -> f64 {
    let n = data.cols() as f64;
    let var = |f: &dyn Fn(usize) -> f64| {
        let mean: f64 = (0..data.cols()).map(f).sum::<f64>() / n;
        (0..data.cols()).map(|s| (f(s) - mean).powi(2)).sum::<f64>() / n
    };
    let mut total = 0.0;
    let mut rows = 0;
    for i in 0..data.rows() {
        let vy = var(&|s| data.get(i, s));
        if vy > 1e-12 {
            total += var(&|s| data.get(i, s) - recon.get(i, s)) / vy;
            rows += 1;
        }
    }
    1.0 - total / rows as f64
}

fn dense_reconstruction(dict: &Dictionary, codes: &SparseCodeMatrix) -> DenseMatrix {
    let dense = codes.to_dense();
    DenseMatrix::from_fn(dict.dim(), codes.samples(), |i, s| {
        (0..dict.atoms()).map(|j| dict.atom(j)[i] * dense.get(j, s)).sum()
    })
}

fn metric_formulas() -> Verdict {
    let mut r = rng(1010);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = r.random_range(2..=16);
        let m = r.random_range(2..=24);
        let n = r.random_range(5..=40);
        let k = r.random_range(1..=m.min(4));
        let dict = normalize_columns(gaussian(d, m, &mut r)).unwrap();
        let data = gaussian(d, n, &mut r);
        let columns = (0..n)
            .map(|_| {
                let idx = rand::seq::index::sample(&mut r, m, k);
                idx.into_iter().map(|j| (j, r.sample::<f64, _>(StandardNormal))).collect()
            })
            .collect();
        let codes = SparseCodeMatrix::from_columns(m, k, columns).unwrap();
        let recon = dense_reconstruction(&dict, &codes);
        let mre = mean_relative_error(&data, &dict, &codes).unwrap().value;
        let ve = variance_explained(&data, &dict, &codes).unwrap().value;
        worst = worst.max((mre - naive_mre(&data, &recon)).abs());
        worst = worst.max((ve - naive_ve(&data, &recon)).abs());
    }

    let dict = normalize_columns(gaussian(6, 10, &mut r)).unwrap();
    let columns = (0..30)
        .map(|s| vec![(s % 10, 1.0 + s as f64), ((s + 3) % 10, -0.5)])
        .collect();
    let codes = SparseCodeMatrix::from_columns(10, 2, columns).unwrap();
    let exact = codes.reconstruct(&dict);
    let mre_perfect = mean_relative_error(&exact, &dict, &codes).unwrap().value;
    let ve_perfect = variance_explained(&exact, &dict, &codes).unwrap().value;

    let raw = gaussian(6, 30, &mut r);
    let centered = DenseMatrix::from_fn(6, 30, |i, s| {
        let mean: f64 = (0..30).map(|t| raw.get(i, t)).sum::<f64>() / 30.0;
        raw.get(i, s) - mean
    });
    let zero = SparseCodeMatrix::new(10, 30, 2);
    let mre_zero = mean_relative_error(&centered, &dict, &zero).unwrap().value;
    let ve_zero = variance_explained(&centered, &dict, &zero).unwrap().value;

    let endpoints_ok = mre_perfect.abs() <= 1e-7
        && (ve_perfect - 1.0).abs() <= 1e-7
        && (mre_zero - 1.0).abs() <= 1e-7
        && ve_zero.abs() <= 1e-7;
    (
        worst <= 1e-7 && endpoints_ok,
        format!(
            "max deviation from naive {worst:.2e}; perfect (mre {mre_perfect:.1e}, ve {ve_perfect:.9}); zero codes (mre {mre_zero:.9}, ve {ve_zero:.1e})"
        ),
    )
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    println!(
        "criterion {id:>2} {}: {name}: {detail} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    pass
}

fn main() -> ExitCode {
    let mut dicts: Vec<Dictionary> = Vec::new();
    let mut results = Vec::new();
    results.push(run(1, "encoder-oracle equivalence", encoder_oracle));
    results.push(run(2, "eigen-solver fidelity", eigen_fidelity));
    results.push(run(3, "sequential-baseline equivalence", || sequential_baseline(&mut dicts)));
    let mut objective_verdict = None;
    results.push(run(4, "planted recovery", || {
        let (v4, v5) = planted_runs(&mut dicts);
        objective_verdict = Some(v5);
        v4
    }));
    results.push(run(5, "objective decrease", || {
        objective_verdict.unwrap_or((false, "planted runs did not complete".into()))
    }));
    results.push(run(6, "inner-batching fidelity", || inner_batching(&mut dicts)));
    results.push(run(7, "matryoshka coherence reduction", || matryoshka_coherence(&mut dicts)));
    let more: Vec<Dictionary> = (0..4)
        .map(|i| initialize_dictionary(8 + 8 * i, 32 + 32 * i, i as u64).unwrap())
        .collect();
    dicts.extend(more);
    results.push(run(8, "welch-bound consistency", || welch_consistency(&dicts)));
    results.push(run(9, "parallel scaling", parallel_scaling));
    results.push(run(10, "metric formulas", metric_formulas));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
