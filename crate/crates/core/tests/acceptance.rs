//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use coprune::copruning::coprune;
use coprune::cost::{integrated_compression_ratio, total_flops, FlopsConfig};
use coprune::io::{load_bundle, save_bundle};
use coprune::oracle;
use coprune::saliency::key_l2_norm;
use coprune::schedule::{ModelDims, PruneSchedule};
use coprune::synth::{synth_bundle, SynthConfig};
use coprune::vic::{cluster, local_density};
use coprune::{run_pipeline, PruneStrategy, TokenKind, TokenSet};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn vic_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let t0 = Instant::now();
    let r = oracle::suite_vic(&mut rng, 64, 250);
    let dt = t0.elapsed();
    outcome(
        r.passed() && r.trials >= 200 && dt < Duration::from_secs(10),
        format!("{} instances, {} mismatches, {:.2}s", r.trials, r.mismatches, dt.as_secs_f64()),
    )
}

fn coprune_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let r = oracle::suite_coprune(&mut rng, 64, 250);
    let first = r.first_failure.clone().map(|f| format!("; first: {f}")).unwrap_or_default();
    outcome(
        r.passed() && r.trials >= 200,
        format!("{} instances, {} mismatches{first}", r.trials, r.mismatches),
    )
}

/// Clusters random instances with the real engine, then co-prunes at a
/// random budget in `[N_c, n]`.
fn budget_invariant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let trials = 250;
    let mut bad = 0;
    for _ in 0..trials {
        let inst = oracle::random_vic_instance(&mut rng, 64);
        let n = inst.features.nrows();
        let a = cluster(inst.features.view(), inst.positions.view(), inst.params).unwrap();
        let nc = a.n_clusters();
        let budget = rng.random_range(nc..=n);
        let tokens = TokenSet {
            features: inst.features.clone(),
            positions: inst.positions.clone(),
            origin: (0..n).map(|i| vec![i]).collect(),
            kind: vec![TokenKind::Kept; n],
        };
        let keys = oracle::random_keys(&mut rng, 2, n, 4);
        let norms = key_l2_norm(keys.view()).unwrap();
        let out = coprune(&tokens, &a, &norms, budget).unwrap();
        let ok = nc <= out.len() && out.len() <= budget && out.origin_union() == (0..n).collect::<Vec<_>>();
        if !ok {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{trials} instances, {bad} violations"))
}

fn knorm_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let r = oracle::suite_key_norm(&mut rng, 64, 150);
    outcome(
        r.passed() && r.trials >= 100,
        format!("{} tensors, {} mismatches (rel tol 1e-9)", r.trials, r.mismatches),
    )
}

fn density_analytics() -> Outcome {
    let d_c = 8.0;
    let two = array![[0.0, 0.0], [d_c, 0.0]];
    let d = coprune::vic::euclidean_matrix(two.view());
    let rho = local_density(d.view(), d_c).unwrap();
    let e = (-1.0f64).exp();
    let pair_ok = rho.iter().all(|r| (r - e).abs() <= 1e-12);
    let mut ident_ok = true;
    for k in [2usize, 3, 7, 16] {
        let pts = Array2::from_elem((k, 5), 0.25);
        let d = coprune::vic::euclidean_matrix(pts.view());
        let rho = local_density(d.view(), d_c).unwrap();
        ident_ok &= rho.iter().all(|&r| r == (k - 1) as f64);
    }
    outcome(pair_ok && ident_ok, format!("pair rho = {:.15} (e^-1 = {e:.15}); k identical tokens give k-1: {ident_ok}", rho[0]))
}

fn cost_model() -> Outcome {
    let s = PruneSchedule::preset("p889").unwrap();
    let cfg = FlopsConfig::paper(4096, 32, 40);
    let t = total_flops(&s, &cfg);
    outcome(
        (0.70e12..=0.95e12).contains(&t),
        format!("total = {:.4} TFLOPs, window [0.70, 0.95], reference 0.82", t / 1e12),
    )
}

fn cr_int() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, expect, headline) in [("p667", 0.6795, 0.667), ("p778", 0.7885, 0.778), ("p889", 0.8974, 0.889)] {
        let v = integrated_compression_ratio(&PruneSchedule::preset(name).unwrap());
        ok &= (v - expect).abs() < 5e-5 && (v - headline).abs() <= 0.02;
        parts.push(format!("{name} {v:.4}"));
    }
    outcome(ok, parts.join(", "))
}

fn identity_pipeline() -> Outcome {
    let b = synth_bundle(&SynthConfig::small(), 11);
    let s = PruneSchedule {
        pi1: 1.0,
        pi2: 1.0,
        pi3: 1.0,
        l_s: 2,
        l_d: 22,
        d_c: 8.0,
        tau: 0.6,
        alpha: 1.0,
        model: ModelDims {
            m: b.meta.m,
            d: b.meta.d,
            n_layers: b.meta.n_layers,
            n_text: 40,
            d_ffn: None,
            ffn_k: 3.0,
        },
    };
    let out = run_pipeline(&b, &s, PruneStrategy::Vitcop).unwrap();
    let input = TokenSet::from_bundle(&b);
    let same = out.tokens == input;
    let cr = out.cost.cr_int;
    let analytic = integrated_compression_ratio(&s);
    outcome(
        same && cr == 0.0 && analytic == 0.0,
        format!("token set identical: {same}, realized cr_int {cr}, analytic cr_int {analytic}"),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_coprune")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> (i32, Vec<u8>) {
    let o = Command::new(bin()).args(args).output().expect("binary runs");
    (o.status.code().unwrap_or(-1), o.stdout)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    for seed in 0..3u64 {
        let cfg = SynthConfig { m: 48, ..SynthConfig::small() };
        save_bundle(&synth_bundle(&cfg, seed), corpus.join(format!("s{seed}.bundle"))).unwrap();
    }
    std::fs::copy(fixture("golden_n8.bundle"), corpus.join("golden_n8.bundle")).unwrap();
    let schedule = fixture("golden_n8.toml");
    let mut ok = true;
    for strategy in ["vitcop", "random_baseline"] {
        let mut reports = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{strategy}-{rep}"));
            let (code, _) = run(&[
                "prune",
                corpus.to_str().unwrap(),
                "--schedule",
                schedule.to_str().unwrap(),
                "--strategy",
                strategy,
                "--seed",
                "5",
                "--out",
                out.to_str().unwrap(),
            ]);
            ok &= code == 0;
            let mut files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
            files.sort();
            let bytes: Vec<(String, Vec<u8>)> = files
                .iter()
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap()))
                .collect();
            reports.push(bytes);
        }
        ok &= reports[0] == reports[1] && reports[0].len() == 5;
    }
    let a = run(&["oracle-check", "--trials", "100", "--seed", "7"]);
    let b = run(&["oracle-check", "--trials", "100", "--seed", "7"]);
    ok &= a.0 == 0 && a == b;
    outcome(ok, "prune (vitcop, random_baseline) x2 and oracle-check x2 byte-identical")
}

fn format_roundtrip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut bad = 0;
    for i in 0..50 {
        let b = oracle::random_bundle(&mut rng, 96);
        let p = dir.path().join(format!("b{i}.bundle"));
        save_bundle(&b, &p).unwrap();
        let back = load_bundle(&p).unwrap();
        let p2 = dir.path().join(format!("b{i}.again.bundle"));
        save_bundle(&back, &p2).unwrap();
        let bit_exact = back.token_features.iter().zip(b.token_features.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
        if back != b || !bit_exact || std::fs::read(&p).unwrap() != std::fs::read(&p2).unwrap() {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("50 bundles, {bad} differ"))
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: [Check; 10] = [
        ("vic_oracle_equivalence", vic_oracle),
        ("coprune_oracle_equivalence", coprune_oracle),
        ("budget_invariant", budget_invariant),
        ("knorm_identity", knorm_identity),
        ("density_analytics", density_analytics),
        ("cost_model_total_flops", cost_model),
        ("cr_int_vs_headline_rates", cr_int),
        ("identity_pipeline", identity_pipeline),
        ("determinism", determinism),
        ("format_roundtrip", format_roundtrip),
    ];
    let mut failed = 0;
    for (name, f) in checks {
        let o = f();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
