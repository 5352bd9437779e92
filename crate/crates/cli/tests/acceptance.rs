//! Acceptance suite: one test per release criterion, each printing a PASS
//! line with its measured values (visible under `--nocapture`). Run with
//!
//! ```text
//! cargo test -p imglsh-cli --test acceptance -- --nocapture
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use imglsh::bitmap::CompressedBitmap;
use imglsh::data::{generate_synthetic, DatasetBundle, SyntheticConfig};
use imglsh::engine::{
    classify_images, stop_s1, stop_s2, ImageClass, ImageScore, QueryEngine, StopReason,
};
use imglsh::hashing::{radius_schedule, ProjectionFamily};
use imglsh::index::{build_index, encode_catalog, IndexReader};
use imglsh::model::{euclidean, Params, QueryImage};
use imglsh_cli::bench::{run_bench, BenchConfig, Method};

fn built(bundle: &DatasetBundle, params: &Params) -> (TempDir, IndexReader) {
    let dir = TempDir::new().unwrap();
    let idx = dir.path().join("idx");
    build_index(bundle, params, &idx).unwrap();
    let reader = IndexReader::open(&idx).unwrap();
    (dir, reader)
}

/// Criterion 1: bitmap algebra against an uncompressed boolean-array oracle,
/// 1000 randomized cases, with the sparse serialization bound.
#[test]
fn acceptance_1_bitmap_algebra() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB17);
    for case in 0..1000 {
        let len = rng.random_range(1..=2048u32);
        let density = rng.random::<f64>() * 0.3;
        let mut bits_a = vec![false; len as usize];
        let mut bits_b = vec![false; len as usize];
        let mut a = CompressedBitmap::empty(len);
        let mut b = CompressedBitmap::empty(len);
        for j in 0..len {
            if rng.random::<f64>() < density {
                bits_a[j as usize] = true;
                a.set(j).unwrap();
                // Idempotence against the oracle.
                a.set(j).unwrap();
            }
            if rng.random::<f64>() < density {
                bits_b[j as usize] = true;
                b.set(j).unwrap();
            }
        }
        let oracle_a: Vec<u32> = (0..len).filter(|&j| bits_a[j as usize]).collect();
        assert_eq!(a.positions(), oracle_a.as_slice(), "case {case}: set bits diverged");
        assert_eq!(a.popcount() as usize, bits_a.iter().filter(|&&v| v).count());

        let and = a.and(&b).unwrap();
        let oracle_and: Vec<u32> = (0..len)
            .filter(|&j| bits_a[j as usize] && bits_b[j as usize])
            .collect();
        assert_eq!(and.positions(), oracle_and.as_slice(), "case {case}: AND diverged");

        let bytes = a.serialize();
        assert_eq!(CompressedBitmap::deserialize(&bytes).unwrap(), a, "case {case}");
        assert_eq!(CompressedBitmap::deserialize(&bytes).unwrap().serialize(), bytes);
        assert!(bytes.len() <= 13 + 5 * a.popcount() as usize, "case {case}: size bound");
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "criterion 1 took {secs:.1}s, budget 10s");
    println!("ACCEPTANCE 1 (bitmap algebra, 1000 cases): PASS in {secs:.2}s");
}

/// Criterion 2: index integrity on 200 images x 50 descriptors, d = 16:
/// per-projection partition, catalog rescan byte-identity, rebuild
/// byte-identity.
#[test]
fn acceptance_2_index_integrity() {
    let start = Instant::now();
    let bundle = generate_synthetic(&SyntheticConfig {
        images: 200,
        per_image: 50,
        dim: 16,
        categories: 10,
        spread: 1.0,
        seed: 1002,
    })
    .unwrap();
    assert_eq!(bundle.n(), 10_000);
    let mut params = Params::for_dataset_size(bundle.n());
    params.seed = 21;

    let dir = TempDir::new().unwrap();
    let idx_a = dir.path().join("a");
    let idx_b = dir.path().join("b");
    let manifest = build_index(&bundle, &params, &idx_a).unwrap();
    build_index(&bundle, &params, &idx_b).unwrap();

    let reader = IndexReader::open(&idx_a).unwrap();
    for i in 0..params.m {
        let mut seen = vec![false; bundle.n()];
        let mut catalog: BTreeMap<i64, CompressedBitmap> = BTreeMap::new();
        for cell in reader.cells(i).collect::<Vec<_>>() {
            let mut meter = Default::default();
            let entries = reader.read_bucket(i, cell, &mut meter).unwrap();
            let mut bitmap = CompressedBitmap::empty(manifest.s);
            for e in &entries {
                assert!(!seen[e.point_id as usize], "projection {i}: point {} duplicated", e.point_id);
                seen[e.point_id as usize] = true;
                bitmap.set(e.image_id).unwrap();
            }
            catalog.insert(cell, bitmap);
        }
        assert!(seen.iter().all(|&v| v), "projection {i} lost points");
        let stored = fs::read(idx_a.join(format!("proj_{i}/bitmaps.cat"))).unwrap();
        assert_eq!(stored, encode_catalog(&catalog), "projection {i}: catalog diverged from rescan");
    }

    fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.insert(
                        p.strip_prefix(root).unwrap().to_string_lossy().into_owned(),
                        fs::read(&p).unwrap(),
                    );
                }
            }
        }
        out
    }
    assert_eq!(snapshot(&idx_a), snapshot(&idx_b), "rebuild not byte-identical");

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 2 took {secs:.1}s, budget 60s");
    println!("ACCEPTANCE 2 (index integrity, 10000 points): PASS in {secs:.2}s");
}

fn oracle_bundle() -> DatasetBundle {
    generate_synthetic(&SyntheticConfig {
        images: 50,
        per_image: 20,
        dim: 8,
        categories: 5,
        spread: 1.0,
        seed: 1003,
    })
    .unwrap()
}

/// Criterion 3: with pruning disabled (uthres = 0, v_images = S, gamma high
/// enough that S1 never fires), the engine's final collision and verified
/// pair counts (hence ci and cDist) equal a direct per-pair recomputation.
#[test]
fn acceptance_3_scoring_oracle_equivalence() {
    let start = Instant::now();
    let bundle = oracle_bundle();
    let s = bundle.image_count();
    let mut params = Params::for_dataset_size(bundle.n());
    params.seed = 30;
    params.uthres = 0.0;
    params.v_images = s;
    params.gamma = 1.0;
    // k above S keeps S1 unfireable regardless of gamma.
    params.k = s + 1;
    params.k_prime = s + 1;
    let (_dir, reader) = built(&bundle, &params);
    let family = reader.family();
    let engine = QueryEngine::new(&reader, &bundle, params.clone()).unwrap();

    for query_image in [2u32, 25, 47] {
        let query = QueryImage::from_image(&bundle, query_image).unwrap();
        let outcome = engine.run(&query).unwrap();
        assert_ne!(outcome.report.stop_reason, StopReason::S1);
        let radius = radius_schedule(params.c, outcome.report.final_radius_exponent);
        let c_radius = params.c * radius;

        for (image, state) in bundle.images.iter().zip(outcome.images.iter()) {
            let mut pairs = 0u64;
            let mut verified = 0u64;
            for q in &query.descriptors {
                let q_proj: Vec<f64> = (0..params.m)
                    .map(|i| family.project(i, q).unwrap())
                    .collect();
                for &pid in &image.descriptor_ids {
                    let x = &bundle.point(pid).unwrap().vector;
                    let cc = (0..params.m)
                        .filter(|&i| {
                            family.within_window(q_proj[i] - family.project(i, x).unwrap(), radius)
                        })
                        .count();
                    if cc >= params.l {
                        pairs += 1;
                        if euclidean(q, x).unwrap() <= c_radius {
                            verified += 1;
                        }
                    }
                }
            }
            assert_eq!(state.collision_pairs, pairs, "image {} ci diverged", image.image_id);
            assert_eq!(state.verified_pairs, verified, "image {} cDist diverged", image.image_id);
            assert_eq!(state.collision_index(), pairs as f64 / state.pair_denominator as f64);
            assert_eq!(state.c_dist(), 1.0 - verified as f64 / state.pair_denominator as f64);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 3 took {secs:.1}s, budget 60s");
    println!("ACCEPTANCE 3 (scoring oracle equivalence, 3 queries): PASS in {secs:.2}s");
}

/// Criterion 4: pruning soundness: pruned runs read no more bucket bytes
/// than pruning-disabled runs on the same queries, and every skip in the
/// audit log is justified by its AND popcount against the uthres floor.
#[test]
fn acceptance_4_pruning_io_soundness() {
    let start = Instant::now();
    let bundle = oracle_bundle();
    let s = bundle.image_count();
    let mut pruned = Params::for_dataset_size(bundle.n());
    pruned.seed = 30;
    pruned.k = 5;
    pruned.v_images = 5;
    let mut unpruned = pruned.clone();
    unpruned.uthres = 0.0;
    unpruned.v_images = s;
    unpruned.gamma = 1.0;

    let (_dir, reader) = built(&bundle, &pruned);
    let engine_pruned = QueryEngine::new(&reader, &bundle, pruned.clone()).unwrap();
    let engine_unpruned = QueryEngine::new(&reader, &bundle, unpruned).unwrap();

    let expected_threshold = (pruned.uthres * s as f64).round().ceil() as u32;
    let mut total_skips = 0usize;
    for query_image in [2u32, 25, 47] {
        let query = QueryImage::from_image(&bundle, query_image).unwrap();
        let a = engine_pruned.run(&query).unwrap();
        let b = engine_unpruned.run(&query).unwrap();
        assert!(
            a.report.io.bucket_bytes_read <= b.report.io.bucket_bytes_read,
            "query {query_image}: pruned {} > unpruned {}",
            a.report.io.bucket_bytes_read,
            b.report.io.bucket_bytes_read
        );
        assert_eq!(a.skips.len() as u64, a.report.io.bucket_files_skipped);
        for skip in &a.skips {
            assert_eq!(skip.threshold, expected_threshold);
            assert!(
                skip.and_popcount < skip.threshold,
                "skip log records an unjustified skip: {skip:?}"
            );
        }
        total_skips += a.skips.len();
    }
    assert!(total_skips > 0, "audit is vacuous: no file was ever skipped");
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 4 took {secs:.1}s, budget 60s");
    println!("ACCEPTANCE 4 (pruning IO soundness, {total_skips} audited skips): PASS in {secs:.2}s");
}

fn comparison_bench() -> (DatasetBundle, Params, BenchConfig) {
    let bundle = generate_synthetic(&SyntheticConfig {
        images: 200,
        per_image: 100,
        dim: 16,
        categories: 10,
        spread: 1.0,
        seed: 202,
    })
    .unwrap();
    let mut params = Params::for_dataset_size(bundle.n());
    params.seed = 7;
    params.k = 5;
    params.v_images = 5;
    let cfg = BenchConfig {
        num_queries: 5,
        methods: vec![Method::Engine, Method::Borda],
        seed: 13,
        holdout: false,
        exact_radius: 1.0,
        timings: false,
    };
    (bundle, params, cfg)
}

fn mean_of(report: &imglsh_cli::bench::BenchReport, method: Method) -> f64 {
    report
        .aggregates
        .iter()
        .find(|a| a.method == method)
        .unwrap()
        .mean_bucket_bytes_read
}

/// Criterion 5: on the 10x20x100 d=16 bench with 5 seeded top-5 queries, the
/// engine's mean bucket bytes are strictly below the Borda baseline's.
#[test]
fn acceptance_5_engine_beats_baseline_io() {
    let start = Instant::now();
    let (bundle, params, cfg) = comparison_bench();
    let (_dir, reader) = built(&bundle, &params);
    let report = run_bench(&reader, &bundle, &params, &cfg).unwrap();

    let engine_mean = mean_of(&report, Method::Engine);
    let borda_mean = mean_of(&report, Method::Borda);
    assert!(
        engine_mean < borda_mean,
        "engine mean {engine_mean} not strictly below baseline mean {borda_mean}"
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 300.0, "criterion 5 took {secs:.1}s, budget 300s");
    println!(
        "ACCEPTANCE 5 (IndexIO comparison): PASS in {secs:.2}s: engine {:.2} MB < baseline {:.2} MB (savings {:.2} MB)",
        engine_mean / 1e6,
        borda_mean / 1e6,
        report.io_savings_bytes.unwrap() / 1e6
    );
}

/// Criterion 6: on the same bench, engine accuracy within 0.15 of the
/// baseline and at least 0.6 in absolute terms.
#[test]
fn acceptance_6_engine_accuracy_holds_up() {
    let start = Instant::now();
    let (bundle, params, cfg) = comparison_bench();
    let (_dir, reader) = built(&bundle, &params);
    let report = run_bench(&reader, &bundle, &params, &cfg).unwrap();

    let acc = |method: Method| {
        report
            .aggregates
            .iter()
            .find(|a| a.method == method)
            .unwrap()
            .mean_acc
            .unwrap()
    };
    let engine_acc = acc(Method::Engine);
    let borda_acc = acc(Method::Borda);
    assert!(
        engine_acc >= borda_acc - 0.15,
        "engine acc {engine_acc} more than 0.15 below baseline {borda_acc}"
    );
    assert!(engine_acc >= 0.6, "engine acc {engine_acc} below 0.6");
    let secs = start.elapsed().as_secs_f64();
    println!(
        "ACCEPTANCE 6 (accuracy comparison): PASS in {secs:.2}s: engine acc {engine_acc:.4}, baseline acc {borda_acc:.4}"
    );
}

/// Criterion 7: the reported bitmap storage overhead is exactly catalog
/// bytes over bucket bytes.
#[test]
fn acceptance_7_storage_overhead_report() {
    let bundle = oracle_bundle();
    let mut params = Params::for_dataset_size(bundle.n());
    params.seed = 70;
    let (_dir, reader) = built(&bundle, &params);
    let manifest = reader.manifest();

    // Independently measure the two byte totals from the directory.
    let mut bucket_bytes = 0u64;
    let mut bitmap_bytes = 0u64;
    for f in &manifest.files {
        bucket_bytes += f.bytes;
    }
    for i in 0..params.m {
        bitmap_bytes += fs::metadata(
            _dir.path().join("idx").join(format!("proj_{i}/bitmaps.cat")),
        )
        .unwrap()
        .len();
    }
    assert_eq!(manifest.bucket_bytes_total, bucket_bytes);
    assert_eq!(manifest.bitmap_bytes_total, bitmap_bytes);
    let ratio = manifest.bitmap_overhead_ratio();
    assert_eq!(ratio, bitmap_bytes as f64 / bucket_bytes as f64);
    assert!(ratio > 0.0);
    println!("ACCEPTANCE 7 (storage overhead report): PASS: measured overhead ratio {ratio:.4}");
}

/// Criterion 8: Monte-Carlo locality property: collision frequency at
/// distance r beats 4r by at least 3 standard errors (w = 2, R = 1).
#[test]
fn acceptance_8_lsh_collision_statistics() {
    let start = Instant::now();
    let trials = 10_000u32;
    let d = 8usize;
    let r = 1.0f32;
    let mut rng = ChaCha8Rng::seed_from_u64(0x15);
    let mut hits_near = 0u32;
    let mut hits_far = 0u32;
    for t in 0..trials {
        let family = ProjectionFamily::new(40_000 + t as u64, 1, d, 2.0, 2.0);
        let q: Vec<f32> = (0..d).map(|_| rng.random::<f32>() * 10.0).collect();
        let mut dir: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let near: Vec<f32> = q.iter().zip(&dir).map(|(&v, &u)| v + r * u as f32).collect();
        let far: Vec<f32> = q.iter().zip(&dir).map(|(&v, &u)| v + 4.0 * r * u as f32).collect();
        if family.collides(0, &q, &near, 1.0).unwrap() {
            hits_near += 1;
        }
        if family.collides(0, &q, &far, 1.0).unwrap() {
            hits_far += 1;
        }
    }
    let p_near = hits_near as f64 / trials as f64;
    let p_far = hits_far as f64 / trials as f64;
    let se = ((p_near * (1.0 - p_near) + p_far * (1.0 - p_far)) / trials as f64).sqrt();
    assert!(
        p_near - p_far >= 3.0 * se,
        "separation {:.4} below 3 standard errors ({:.4})",
        p_near - p_far,
        3.0 * se
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "criterion 8 took {secs:.1}s, budget 30s");
    println!(
        "ACCEPTANCE 8 (collision statistics): PASS in {secs:.2}s: p(r)={p_near:.4}, p(4r)={p_far:.4}, se={se:.5}"
    );
}

/// Criterion 9: constructed stopping-condition scenarios.
#[test]
fn acceptance_9_stopping_conditions() {
    let start = Instant::now();

    // (a) exactly k useful images -> S1 holds; one fewer -> it does not.
    let k = 4usize;
    let mut images: Vec<ImageScore> = (0..10u32)
        .map(|id| ImageScore {
            image_id: id,
            pair_denominator: 100,
            collision_pairs: 50,
            verified_pairs: 50,
            class: ImageClass::MaybeUseful,
        })
        .collect();
    for img in images.iter_mut().take(k) {
        img.class = ImageClass::Useful;
    }
    assert!(stop_s1(&images, k));
    images[0].class = ImageClass::MaybeUseful;
    assert!(!stop_s1(&images, k));

    // Classification itself produces exactly-k useful images when exactly k
    // meet both gamma conditions.
    let mut scored: Vec<ImageScore> = (0..6u32)
        .map(|id| ImageScore {
            image_id: id,
            pair_denominator: 100,
            collision_pairs: if id < 4 { 40 } else { 10 },
            verified_pairs: if id < 4 { 30 } else { 0 },
            class: ImageClass::MaybeUseful,
        })
        .collect();
    classify_images(&mut scored, 0.2, 4, 2, false);
    assert!(stop_s1(&scored, 4));
    assert_eq!(
        scored.iter().filter(|s| s.class == ImageClass::Useful).count(),
        4
    );

    // (b) one descriptor a single candidate short -> S2 false.
    let needed = 200usize;
    assert!(!stop_s2(&[200, 200, 199], needed));
    assert!(stop_s2(&[200, 200, 200], needed));

    // (c) a query that can never satisfy S1 or S2 stops at the radius cap.
    let bundle = oracle_bundle();
    let s = bundle.image_count();
    let mut params = Params::for_dataset_size(bundle.n());
    params.seed = 90;
    params.gamma = 1.0;
    params.v_images = s;
    params.uthres = 0.0;
    params.k = s + 1;
    params.k_prime = bundle.n();
    params.v_prime_points = 1;
    params.max_radius_exponent = 2;
    let (_dir, reader) = built(&bundle, &params);
    let engine = QueryEngine::new(&reader, &bundle, params.clone()).unwrap();
    let query = QueryImage::from_image(&bundle, 0).unwrap();
    let outcome = engine.run(&query).unwrap();
    assert_eq!(outcome.report.stop_reason, StopReason::RadiusCap);
    assert_eq!(outcome.report.final_radius_exponent, 2);

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 5.0, "criterion 9 took {secs:.1}s, budget 5s");
    println!("ACCEPTANCE 9 (stopping conditions S1/S2/cap): PASS in {secs:.2}s");
}

/// Criterion 10: two identical bench invocations of the CLI binary produce
/// byte-identical CSV reports.
#[test]
fn acceptance_10_bench_determinism() {
    let start = Instant::now();
    let dir = TempDir::new().unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_imglsh"))
            .args(args)
            .current_dir(dir.path())
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "command failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "synth", "--images", "50", "--per-image", "30", "--dim", "8",
        "--categories", "5", "--spread", "1.0", "--seed", "66",
        "--out-fvecs", "d.fvecs", "--out-map", "d.map",
    ]);
    run(&[
        "build", "--data", "d.fvecs", "--image-map", "d.map", "--out", "idx", "--seed", "8",
    ]);
    let bench_args = [
        "bench", "--index", "idx", "--data", "d.fvecs", "--image-map", "d.map",
        "--num-queries", "3", "--k", "5", "--seed", "99",
        "--methods", "engine,borda,exact", "--radius", "6.0",
    ];
    run(&[&bench_args[..], &["--out", "run_a"]].concat());
    run(&[&bench_args[..], &["--out", "run_b"]].concat());

    let csv_a = fs::read(dir.path().join("run_a.csv")).unwrap();
    let csv_b = fs::read(dir.path().join("run_b.csv")).unwrap();
    assert!(!csv_a.is_empty());
    assert_eq!(csv_a, csv_b, "bench CSVs differ between identical runs");
    let json_a = fs::read(dir.path().join("run_a.json")).unwrap();
    let json_b = fs::read(dir.path().join("run_b.json")).unwrap();
    assert_eq!(json_a, json_b, "bench JSONs differ between identical runs");

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 300.0, "criterion 10 took {secs:.1}s, budget 300s");
    println!("ACCEPTANCE 10 (bench determinism): PASS in {secs:.2}s");
}
