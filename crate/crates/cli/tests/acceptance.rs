//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use tsnmf::matio::{read_matrix, Permutation, SyntheticSpec};
use tsnmf::{
    compute_h, default_sketch_rows, gp_select, kkt_report, nnls_solve, relative_residual, rsvd,
    sketch::scale_columns, sketch_pass, spa, stream_pass, xray_greedy, Algorithm, MemorySource,
    PassOptions, SketchSpec,
};
use tsnmf_cli::commands::{factorize, generate, sweep_cmd, FactorizeOutcome};
use tsnmf_cli::config::{RankList, RunConfig};

const M: u64 = 100_000;
const N: usize = 200;
const R: usize = 20;
const TAU: f64 = 1e-8;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&Fixture) -> Outcome);

struct Instance {
    path: PathBuf,
    rows: usize,
    k_star: Vec<usize>,
    /// Column of `X` holding generating column `t`.
    extreme_columns: Vec<usize>,
    h_true: DMatrix<f64>,
}

struct Fixture {
    dir: TempDir,
    clean: Instance,
    noisy: Instance,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let clean = instance(dir.path(), "clean", 0.0);
        let noisy = instance(dir.path(), "noisy", 1e-3);
        Self { dir, clean, noisy }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn instance(dir: &Path, name: &str, noise: f64) -> Instance {
    let spec = SyntheticSpec {
        m: M,
        n: N,
        r: R,
        noise,
        seed: 2014,
        permutation: Permutation::TenfoldSwap,
    };
    let path = dir.join(format!("{name}.bin"));
    let g = generate(&spec, &path, 8192).expect("generate");
    let (header, data) = read_matrix(&g.h_true).expect("h_true");
    Instance {
        path,
        rows: M as usize,
        k_star: g.report.k_star,
        extreme_columns: g.report.extreme_columns,
        h_true: DMatrix::from_row_slice(header.rows as usize, header.cols, &data),
    }
}

fn config(input: &Path, out: &Path, algs: &[Algorithm], ranks: &str) -> RunConfig {
    RunConfig::new(
        input,
        out,
        algs.to_vec(),
        ranks.parse::<RankList>().unwrap(),
    )
}

fn run(cfg: &RunConfig) -> Result<FactorizeOutcome, String> {
    factorize(cfg).map_err(|e| format!("factorize failed: {}", e.message))
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ------------------------------------------------------------------ 1

fn exact_recovery(fx: &Fixture) -> Outcome {
    let cfg = config(
        &fx.clean.path,
        &fx.out("clean"),
        &[Algorithm::Spa, Algorithm::Gp],
        "20",
    );
    let out = run(&cfg)?;
    let k = default_sketch_rows(R);
    check(out.report.config.sketch_k == Some(k), || {
        format!("sketch k {:?}, expected {k}", out.report.config.sketch_k)
    })?;
    let mut parts = Vec::new();
    for res in &out.report.results {
        let alg = res.extremes.algorithm;
        check(res.extremes.sorted() == fx.clean.k_star, || {
            format!("{alg} selected {:?}", res.extremes.sorted())
        })?;
        check(res.relative_residual <= 1e-10, || {
            format!("{alg} residual {:e}", res.relative_residual)
        })?;
        parts.push(format!(
            "{alg} = K*, residual {:.1e}",
            res.relative_residual
        ));
    }
    Ok(format!("k = {k}; {}", parts.join("; ")))
}

// ------------------------------------------------------------------ 2

fn xray_within_21(fx: &Fixture) -> Outcome {
    let cfg = config(&fx.clean.path, &fx.out("clean"), &[Algorithm::Xray], "21");
    let out = run(&cfg)?;
    let picked = &out.report.results[0].extremes.indices;
    let missing: Vec<usize> = fx
        .clean
        .k_star
        .iter()
        .copied()
        .filter(|c| !picked.contains(c))
        .collect();
    check(picked.len() == 21 && missing.is_empty(), || {
        format!("first 21 {picked:?} miss {missing:?}")
    })?;
    let extra: Vec<usize> = picked
        .iter()
        .copied()
        .filter(|c| !fx.clean.k_star.contains(c))
        .collect();
    Ok(format!("all 20 extremes found, extra pick {extra:?}"))
}

// ------------------------------------------------------------------ 3

fn noisy_recovery(fx: &Fixture) -> Outcome {
    let algs = [Algorithm::Spa, Algorithm::Gp];
    let out = run(&config(&fx.noisy.path, &fx.out("noisy"), &algs, "20"))?;
    for res in &out.report.results {
        check(res.extremes.sorted() == fx.clean.k_star, || {
            format!(
                "{} selected {:?} on noisy data",
                res.extremes.algorithm,
                res.extremes.sorted()
            )
        })?;
    }
    let curves = Algorithm::ALL;
    let sweep = |inst: &Instance, name: &str| {
        sweep_cmd(&config(&inst.path, &fx.out(name), &curves, "20..40"))
            .map_err(|e| format!("sweep failed: {}", e.message))
    };
    let clean = sweep(&fx.clean, "clean")?.file.report;
    let noisy = sweep(&fx.noisy, "noisy")?.file.report;
    let mut worst: f64 = 0.0;
    for alg in curves {
        for ((r, a), (_, b)) in clean.curve(alg).into_iter().zip(noisy.curve(alg)) {
            let (Some(a), Some(b)) = (a, b) else {
                return Err(format!("{alg} has no residual at r = {r}"));
            };
            check((a - b).abs() <= 1e-3, || {
                format!("{alg} at r = {r}: noiseless {a:e}, noisy {b:e}")
            })?;
            worst = worst.max((a - b).abs());
        }
    }
    Ok(format!(
        "spa and gp = K*; curves over r = 20..40 agree to {worst:.1e}"
    ))
}

// ------------------------------------------------------------------ 4

fn h_recovery(fx: &Fixture) -> Outcome {
    let cfg = config(
        &fx.clean.path,
        &fx.out("clean"),
        &[Algorithm::Spa, Algorithm::Gp],
        "20",
    );
    let out = run(&cfg)?;
    let mut parts = Vec::new();
    for (res, h) in out.report.results.iter().zip(&out.h) {
        let sel = &res.extremes.indices;
        let mut id_err: f64 = 0.0;
        for (i, _) in sel.iter().enumerate() {
            for (j, &c) in sel.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                id_err = id_err.max((h[(i, c)] - want).abs());
            }
        }
        let mut h_err: f64 = 0.0;
        for (i, c) in sel.iter().enumerate() {
            let Some(t) = fx.clean.extreme_columns.iter().position(|e| e == c) else {
                return Err(format!("column {c} is not a true extreme"));
            };
            for col in 0..N {
                h_err = h_err.max((h[(i, col)] - fx.clean.h_true[(t, col)]).abs());
            }
        }
        let alg = res.extremes.algorithm;
        check(id_err <= 1e-8, || {
            format!("{alg}: H(:,K) off identity by {id_err:e}")
        })?;
        check(h_err <= 1e-6, || format!("{alg}: |H - H_true| = {h_err:e}"))?;
        parts.push(format!("{alg} identity {id_err:.1e}, H {h_err:.1e}"));
    }
    Ok(parts.join("; "))
}

// ------------------------------------------------------------------ shared generators

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn row_major(x: &DMatrix<f64>) -> Arc<Vec<f64>> {
    Arc::new(x.transpose().as_slice().to_vec())
}

/// Nonnegative `W [I H] Π` plus uniform noise of size `noise`.
fn separable(g: &mut ChaCha8Rng, m: usize, n: usize, r: usize, noise: f64) -> DMatrix<f64> {
    let w = DMatrix::from_fn(m, r, |_, _| g.random::<f64>());
    let mut h = DMatrix::zeros(r, n);
    for t in 0..r {
        h[(t, t)] = 1.0;
    }
    for c in r..n {
        let col: Vec<f64> = (0..r).map(|_| g.random::<f64>()).collect();
        let s: f64 = col.iter().sum();
        for t in 0..r {
            h[(t, c)] = col[t] / s;
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, g.random_range(0..=i));
    }
    let y = w * h;
    DMatrix::from_fn(m, n, |i, p| y[(i, perm[p])] + noise * g.random::<f64>())
}

fn log_uniform(g: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    ((a + (b - a) * g.random::<f64>()).exp().round() as usize).clamp(lo, hi)
}

// ------------------------------------------------------------------ 5

fn tsqr_oracle(_: &Fixture) -> Outcome {
    let mut worst = [0.0f64; 3];
    for inst in 0..50u64 {
        let mut g = rng(500 + inst);
        let n = g.random_range(1..=50);
        let m = log_uniform(&mut g, n.max(2), 100_000);
        let x = if inst % 2 == 0 {
            DMatrix::from_fn(m, n, |_, _| g.random::<f64>())
        } else {
            let scale: Vec<f64> = (0..n)
                .map(|_| 10f64.powf(g.random_range(-3.0..3.0)))
                .collect();
            DMatrix::from_fn(m, n, |_, j| (2.0 * g.random::<f64>() - 1.0) * scale[j])
        };
        let data = row_major(&x);
        let gram = x.tr_mul(&x);
        let col_norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
        let mut rs: Vec<DMatrix<f64>> = Vec::new();
        for chunk in [1, 7, 8192] {
            let mut src = MemorySource::shared(m, n, data.clone(), chunk).unwrap();
            let r = stream_pass(&mut src, &PassOptions::default())
                .map_err(|e| format!("instance {inst}: {e}"))?
                .r
                .into_matrix();
            let gram_err = (r.tr_mul(&r) - &gram).norm() / gram.norm();
            check(gram_err <= 1e-10, || {
                format!("instance {inst} ({m}x{n}), chunk {chunk}: Gram error {gram_err:e}")
            })?;
            for (j, want) in col_norms.iter().enumerate() {
                let e = (r.column(j).norm() - want).abs() / want.max(f64::MIN_POSITIVE);
                worst[1] = worst[1].max(e);
                check(e <= 1e-10, || {
                    format!("instance {inst}, chunk {chunk}: column {j} norm error {e:e}")
                })?;
            }
            worst[0] = worst[0].max(gram_err);
            rs.push(r);
        }
        let scale = rs[2].abs().max();
        for (r, chunk) in rs.iter().zip([1, 7]) {
            let e = (r - &rs[2]).abs().max() / scale;
            worst[2] = worst[2].max(e);
            check(e <= 1e-10, || {
                format!("instance {inst}: chunk {chunk} vs 8192 differ by {e:e}")
            })?;
        }
    }
    Ok(format!(
        "50 instances; Gram {:.1e}, column norms {:.1e}, chunk spread {:.1e}",
        worst[0], worst[1], worst[2]
    ))
}

// ------------------------------------------------------------------ 6

fn reduction_invariance(_: &Fixture) -> Outcome {
    for inst in 0..20u64 {
        let mut g = rng(600 + inst);
        let n = g.random_range(10..=60);
        let r = g.random_range(3..=10.min(n / 2));
        let m = g.random_range(n.max(500)..=10_000);
        let x = separable(&mut g, m, n, r, 0.0);
        let mut src = MemorySource::shared(m, n, row_major(&x), 1000).unwrap();
        let pass = stream_pass(&mut src, &PassOptions::default()).map_err(|e| e.to_string())?;
        let bases = [
            ("R", pass.r.matrix().clone()),
            ("SVt", rsvd(&pass.r).reduced_matrix()),
            ("X", x),
        ];
        let run = |b: &DMatrix<f64>| -> Result<(Vec<usize>, Vec<usize>), String> {
            let s = spa(b, r, Some(&pass.stats)).map_err(|e| e.to_string())?;
            let x = xray_greedy(b, r).map_err(|e| e.to_string())?;
            Ok((s.indices, x.indices))
        };
        let want = run(&bases[0].1)?;
        for (name, b) in &bases[1..] {
            let got = run(b)?;
            check(got == want, || {
                format!(
                    "instance {inst} ({m}x{n}, r = {r}): {name} gives {got:?}, R gives {want:?}"
                )
            })?;
        }
    }
    Ok("20 instances; spa and xray identical on R, SVt and X".into())
}

// ------------------------------------------------------------------ 7

fn reduced_equals_full(_: &Fixture) -> Outcome {
    let (mut worst_h, mut worst_res) = (0.0f64, 0.0f64);
    for inst in 0..20u64 {
        let mut g = rng(700 + inst);
        let n = g.random_range(8..=40);
        let r = g.random_range(2..=8.min(n - 1));
        let m = g.random_range(200..=5000);
        let noise = [0.0, 1e-3, 1e-1][inst as usize % 3];
        let x = separable(&mut g, m, n, r, noise);
        let mut k: Vec<usize> = (0..n).collect();
        for i in 0..r {
            k.swap(i, g.random_range(i..n));
        }
        k.truncate(r);

        let mut src = MemorySource::shared(m, n, row_major(&x), 512).unwrap();
        let pass = stream_pass(&mut src, &PassOptions::default()).map_err(|e| e.to_string())?;
        let reduced = pass.r.matrix();
        let h = compute_h(reduced, &k).map_err(|e| e.to_string())?.h;
        let res = relative_residual(reduced, &k, &h).map_err(|e| e.to_string())?;

        let xk = x.select_columns(k.iter());
        let mut h_full = DMatrix::zeros(r, n);
        for j in 0..n {
            let y = nnls_solve(&xk, x.column(j).as_slice()).map_err(|e| e.to_string())?;
            h_full.set_column(j, &DVector::from_vec(y));
        }
        let res_full = (&x - &xk * &h_full).norm_squared() / x.norm_squared();

        let dh = (&h - &h_full).abs().max();
        let dr = (res - res_full).abs();
        check(dh <= 1e-8 && dr <= 1e-8, || {
            format!("instance {inst} ({m}x{n}, K = {k:?}): H differs by {dh:e}, residual by {dr:e}")
        })?;
        worst_h = worst_h.max(dh);
        worst_res = worst_res.max(dr);
    }
    Ok(format!(
        "20 instances; H within {worst_h:.1e}, residual within {worst_res:.1e}"
    ))
}

// ------------------------------------------------------------------ 8

fn random_problem(g: &mut ChaCha8Rng, inst: u64) -> (DMatrix<f64>, Vec<f64>) {
    let m = g.random_range(1..=40);
    let q = g.random_range(1..=25);
    let a = match inst % 4 {
        // Low rank: a product through a thin inner dimension.
        0 => {
            let k = g.random_range(1..=q.min(m));
            let b = DMatrix::from_fn(m, k, |_, _| g.random::<f64>() * 2.0 - 1.0);
            let c = DMatrix::from_fn(k, q, |_, _| g.random::<f64>() * 2.0 - 1.0);
            b * c
        }
        // Repeated columns.
        1 => {
            let base = DMatrix::from_fn(m, q.div_ceil(2), |_, _| g.random::<f64>());
            DMatrix::from_fn(m, q, |i, j| base[(i, j / 2)])
        }
        2 => DMatrix::from_fn(m, q, |_, _| g.random::<f64>()),
        _ => DMatrix::from_fn(m, q, |_, _| g.random::<f64>() * 2.0 - 1.0),
    };
    let b = (0..m).map(|_| g.random::<f64>() * 2.0 - 1.0).collect();
    (a, b)
}

/// Best unconstrained fit over every support whose solution is nonnegative.
fn nnls_oracle(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let q = a.ncols();
    let b = DVector::from_column_slice(b);
    let mut best = (b.norm_squared(), vec![0.0; q]);
    for mask in 1u32..(1 << q) {
        let support: Vec<usize> = (0..q).filter(|j| mask >> j & 1 == 1).collect();
        let sub = a.select_columns(support.iter());
        let z = sub.clone().svd(true, true).solve(&b, 1e-13).unwrap();
        if z.iter().any(|&v| v < 0.0) {
            continue;
        }
        let obj = (&sub * &z - &b).norm_squared();
        if obj < best.0 - 1e-14 * (1.0 + best.0) {
            let mut y = vec![0.0; q];
            for (&j, &v) in support.iter().zip(z.iter()) {
                y[j] = v;
            }
            best = (obj, y);
        }
    }
    best.1
}

fn nnls_suite(_: &Fixture) -> Outcome {
    for inst in 0..200u64 {
        let mut g = rng(800 + inst);
        let (a, b) = random_problem(&mut g, inst);
        let y = nnls_solve(&a, &b).map_err(|e| format!("instance {inst}: {e}"))?;
        let kkt = kkt_report(&a, &b, &y);
        check(kkt.passes(TAU), || format!("instance {inst}: {kkt:?}"))?;
    }
    let mut worst: f64 = 0.0;
    for inst in 0..30u64 {
        let mut g = rng(900 + inst);
        let q = g.random_range(1..=10);
        let m = g.random_range(q..=30);
        let a = DMatrix::from_fn(m, q, |_, _| g.random::<f64>() * 2.0 - 1.0);
        let b: Vec<f64> = (0..m).map(|_| g.random::<f64>() * 2.0 - 1.0).collect();
        let y = nnls_solve(&a, &b).map_err(|e| format!("oracle instance {inst}: {e}"))?;
        let want = nnls_oracle(&a, &b);
        let d = y
            .iter()
            .zip(&want)
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        check(d <= 1e-8, || {
            format!("oracle instance {inst}: off by {d:e}")
        })?;
        worst = worst.max(d);
    }
    Ok(format!(
        "200 KKT certificates at 1e-8; 30 oracle matches within {worst:.1e}"
    ))
}

// ------------------------------------------------------------------ 9

fn single_pass(fx: &Fixture) -> Outcome {
    let size = std::fs::metadata(&fx.clean.path)
        .map_err(|e| e.to_string())?
        .len();
    let runs: [(&str, &[Algorithm], Option<usize>); 3] = [
        ("all", &Algorithm::ALL, None),
        ("nosketch", &[Algorithm::Spa, Algorithm::Xray], None),
        ("spa+sketch", &[Algorithm::Spa], Some(64)),
    ];
    for (name, algs, k) in runs {
        let mut cfg = config(&fx.clean.path, &fx.out(&format!("pass-{name}")), algs, "20");
        cfg.sketch_k = k;
        let reads = run(&cfg)?.ledger.reads;
        check(
            reads.passes == 1 && reads.bytes == size && reads.rows == fx.clean.rows as u64,
            || format!("factorize {name}: {reads:?}, file {size} bytes"),
        )?;
    }
    for (name, algs) in [
        ("all", &Algorithm::ALL[..]),
        ("nosketch", &[Algorithm::Spa, Algorithm::Xray][..]),
    ] {
        let cfg = config(
            &fx.clean.path,
            &fx.out(&format!("pass-{name}")),
            algs,
            "1..30",
        );
        let out = sweep_cmd(&cfg).map_err(|e| format!("sweep failed: {}", e.message))?;
        let reads = out.ledger.reads;
        check(
            reads.passes == 0 && reads.bytes == 0 && reads.cache_hit,
            || format!("sweep {name}: {reads:?}"),
        )?;
        check(out.file.report.records.len() == 30 * algs.len(), || {
            format!("sweep {name}: {} cells", out.file.report.records.len())
        })?;
    }
    Ok(format!(
        "3 factorize runs read {size} bytes once each; 2 sweeps over 30 ranks read nothing"
    ))
}

// ------------------------------------------------------------------ 10

fn gp_seeds(fx: &Fixture) -> Outcome {
    let (header, data) = read_matrix(&fx.clean.path).map_err(|e| e.to_string())?;
    let data = Arc::new(data);
    let k = default_sketch_rows(R);
    let batch = rayon::current_num_threads() * 2;
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..100u64 {
        let mut src =
            MemorySource::shared(header.rows as usize, header.cols, data.clone(), 8192).unwrap();
        let (stats, sketch) =
            sketch_pass(&mut src, SketchSpec { k, seed }, batch).map_err(|e| e.to_string())?;
        let scaled = scale_columns(&sketch, &stats).map_err(|e| e.to_string())?;
        let set = match gp_select(&scaled, R) {
            Ok(s) => s,
            Err(e) => e.partial().cloned().ok_or_else(|| e.to_string())?,
        };
        if set.sorted() == fx.clean.k_star {
            hits += 1;
        } else {
            misses.push(seed);
        }
    }
    check(hits >= 95, || {
        format!("{hits}/100 seeds recover K*; misses {misses:?}")
    })?;
    Ok(format!("{hits}/100 seeds recover K* at k = {k}"))
}

// ------------------------------------------------------------------ driver

fn main() {
    let criteria: [Criterion; 10] = [
        ("synthetic exact recovery", exact_recovery),
        ("xray within 21", xray_within_21),
        ("noisy recovery", noisy_recovery),
        ("H recovery", h_recovery),
        ("TSQR oracle equivalence", tsqr_oracle),
        ("reduction invariance", reduction_invariance),
        ("reduced equals full", reduced_equals_full),
        ("NNLS KKT suite", nnls_suite),
        ("single-pass contract", single_pass),
        ("GP probabilistic recovery", gp_seeds),
    ];
    let t = Instant::now();
    let fx = Fixture::new();
    println!(
        "acceptance: generated {M}x{N} instances in {:.1} s",
        t.elapsed().as_secs_f64()
    );
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&fx))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.1} s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
