//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! The cross-lap experiment on the default synthetic route is run once and
//! shared by the criteria that need it.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use placefit::dataio::{
    bank_checksum, generate_synthetic, load_dataset, read_bank, save_dataset, write_bank, Dataset, SynthConfig,
    ANNOTATIONS_FILE, FRAMES_FILE,
};
use placefit::error::Error;
use placefit::eval::{evaluate, ImageEval};
use placefit::experiment::{cross_lap, ExperimentConfig, ExperimentResult, RunResult};
use placefit::mining::train_with_hnm;
use placefit::placebank::ModelBank;
use placefit::similarity::{gist_distance, mutual_information, quantize_intensity, GistExtractor, MiConfig, SimilarityConfig};
use placefit::svm::{balance_weights, objective, train_raw, SvmConfig, TrainSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Experiment {
    dataset: Dataset,
    result: ExperimentResult,
    banks: Vec<(String, Vec<ModelBank>)>,
    elapsed: Duration,
}

fn experiment() -> &'static Experiment {
    static E: OnceLock<Experiment> = OnceLock::new();
    E.get_or_init(|| {
        let start = Instant::now();
        let dataset = generate_synthetic(&SynthConfig::default()).expect("default route");
        let (result, banks) = cross_lap(&dataset, &ExperimentConfig::synthetic(0)).expect("cross-lap experiment");
        Experiment {
            dataset,
            result,
            banks,
            elapsed: start.elapsed(),
        }
    })
}

fn run<'a>(e: &'a Experiment, label: &str) -> Result<&'a RunResult, String> {
    e.result.run(label).ok_or_else(|| format!("run {label} missing"))
}

fn metric_oracle_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let inst = common::random_eval_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let images: Vec<ImageEval<'_>> = inst
            .iter()
            .map(|(d, g)| ImageEval {
                detections: d,
                ground_truth: g,
            })
            .collect();
        let got = evaluate(&images, 0.5).map_err(|e| e.to_string())?;
        let want = common::metric_oracle::evaluate(&inst, 0.5);
        for (name, a, b) in [("ap", got.ap, want.ap), ("lamr", got.lamr, want.lamr), ("max_f1", got.max_f1, want.max_f1)] {
            worst = worst.max((a - b).abs());
            check((a - b).abs() <= 1e-12, || format!("instance {seed}: {name} {a} vs oracle {b}"))?;
        }
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!("200 instances, max deviation {worst:.1e}, {:.2} s", t.as_secs_f64()))
}

fn svm_optimality() -> Outcome {
    let start = Instant::now();
    let config = SvmConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_gap = f64::NEG_INFINITY;
    for p in 0..50 {
        let n = rng.gen_range(2..=8);
        let d = rng.gen_range(1..=2);
        let mut ys: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        ys[0] = 1.0;
        ys[1] = -1.0;
        let n_pos = ys.iter().filter(|&&y| y > 0.0).count();
        let (wp, wn) = balance_weights(n_pos, n - n_pos).map_err(|e| e.to_string())?;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let cs: Vec<f64> = ys.iter().map(|&y| if y > 0.0 { wp } else { wn }).collect();
        let mut set = TrainSet::new(d);
        for i in 0..n {
            set.push(&xs[i], ys[i] as i8, cs[i]).map_err(|e| e.to_string())?;
        }
        let out = train_raw(&set, &config).map_err(|e| e.to_string())?;
        let got = objective(&out.weights, out.bias, &set, config.c).map_err(|e| e.to_string())?;
        let grid = common::svm_grid_oracle(&xs, &ys, &cs, config.c);
        worst_gap = worst_gap.max(got - grid);
        check(got <= grid + 1e-2, || format!("problem {p}: objective {got} vs grid {grid}"))?;
    }

    // Separable fixtures with margin at least 0.1 around a random hyperplane.
    let mut fixtures = 0;
    for f in 0..20 {
        let d = 1 + f % 4;
        let normal: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        let offset = rng.gen_range(-0.5..0.5) * norm;
        let mut set = TrainSet::new(d);
        let mut counts = [0; 2];
        while set.len() < 30 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = (x.iter().zip(&normal).map(|(a, b)| a * b).sum::<f64>() + offset) / norm;
            if m.abs() < 0.1 {
                continue;
            }
            counts[(m > 0.0) as usize] += 1;
            set.push(&x, if m > 0.0 { 1 } else { -1 }, 1.0).map_err(|e| e.to_string())?;
        }
        if counts.contains(&0) {
            continue;
        }
        let out = train_raw(&set, &config).map_err(|e| e.to_string())?;
        let errors = set.training_errors(&out.weights, out.bias);
        check(errors == 0, || format!("separable fixture {f}: {errors} training errors"))?;
        fixtures += 1;
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(60), || format!("took {t:?}"))?;
    Ok(format!(
        "50 problems within grid optimum (worst gap {worst_gap:+.2e}), {fixtures} separable fixtures error-free, {:.2} s",
        t.as_secs_f64()
    ))
}

fn hnm_contract() -> Outcome {
    let f = common::mineable_fixture();
    let (_, r) = train_with_hnm(&f.positives, &f.seeds, &[&f.frame], &f.config).map_err(|e| e.to_string())?;
    check(r.converged && r.new_negatives_per_iteration.last() == Some(&0) && r.iterations_run <= 20, || {
        format!("mineable fixture: {:?}", r.new_negatives_per_iteration)
    })?;
    let mineable = r.new_negatives_per_iteration.clone();

    let f = common::inseparable_fixture();
    let (_, r) = train_with_hnm(&f.positives, &f.seeds, &[&f.frame], &f.config).map_err(|e| e.to_string())?;
    check(!r.converged && r.iterations_run == 20, || {
        format!("inseparable fixture: converged {} after {} rounds", r.converged, r.iterations_run)
    })?;
    Ok(format!(
        "mineable fixture new negatives {mineable:?}; inseparable fixture stopped at 20 rounds, unconverged"
    ))
}

fn trend_reproduction() -> Outcome {
    let e = experiment();
    let n10 = run(e, "temporal_n10")?;
    let full = run(e, "temporal_full")?;
    let generic = run(e, "generic")?;
    for global in [full, generic] {
        check(n10.summary.ap >= global.summary.ap + 0.10, || {
            format!("N=10 AP {:.3} vs {} AP {:.3}", n10.summary.ap, global.label, global.summary.ap)
        })?;
    }
    check(n10.training.models_with_zero_errors == n10.training.models_trained, || {
        format!(
            "only {}/{} N=10 models fit without error",
            n10.training.models_with_zero_errors, n10.training.models_trained
        )
    })?;
    check(full.training.max_training_errors > 0, || "all-frames model has no training error".into())?;
    check(e.elapsed < Duration::from_secs(600), || format!("experiment took {:?}", e.elapsed))?;
    Ok(format!(
        "AP N=10 {:.3}, generic {:.3}, full lap {:.3}; N=10 models error-free {}/{}, full-lap max errors {}; {:.0} s",
        n10.summary.ap,
        generic.summary.ap,
        full.summary.ap,
        n10.training.models_with_zero_errors,
        n10.training.models_trained,
        full.training.max_training_errors,
        e.elapsed.as_secs_f64()
    ))
}

fn swathe_ordering() -> Outcome {
    let e = experiment();
    let (n1, n10, full) = (run(e, "temporal_n1")?, run(e, "temporal_n10")?, run(e, "temporal_full")?);
    let (a1, a10, af) = (n1.summary.ap, n10.summary.ap, full.summary.ap);
    check(a10 >= a1 && af < a10, || format!("AP N=1 {a1:.3}, N=10 {a10:.3}, full {af:.3}"))?;
    Ok(format!("AP N=1 {a1:.3} <= N=10 {a10:.3} > full {af:.3}"))
}

fn similarity_parity() -> Outcome {
    let e = experiment();
    let (t, g) = (run(e, "temporal_n10")?.summary.ap, run(e, "gist_n10")?.summary.ap);
    check((t - g).abs() <= 0.05, || format!("temporal {t:.3} vs GIST {g:.3}"))?;
    Ok(format!("AP temporal N=10 {t:.3}, GIST N=10 {g:.3}, difference {:.3}", (t - g).abs()))
}

fn similarity_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mi = MiConfig::default();
    for p in 0..100 {
        let a = common::random_image(&mut rng, 64, 48);
        let b = common::random_image(&mut rng, 48, 64);
        let (ab, ba) = (mutual_information(&a, &b, &mi), mutual_information(&b, &a, &mi));
        check((ab - ba).abs() < 1e-9, || format!("pair {p}: MI {ab} vs {ba}"))?;
        check(ab >= -1e-12, || format!("pair {p}: MI {ab} < 0"))?;
    }

    let ex = GistExtractor::new(SimilarityConfig::default().gist).map_err(|e| e.to_string())?;
    for t in 0..100 {
        let d: Vec<_> = (0..3)
            .map(|_| ex.describe(&common::random_image(&mut rng, 48, 48)))
            .collect::<placefit::Result<_>>()
            .map_err(|e| e.to_string())?;
        let dist = |i: usize, j: usize| gist_distance(&d[i], &d[j]).expect("equal dims");
        check(dist(0, 0) == 0.0, || format!("triple {t}: d(a, a) != 0"))?;
        check(dist(0, 1) == dist(1, 0), || format!("triple {t}: asymmetric"))?;
        check(dist(0, 2) <= dist(0, 1) + dist(1, 2) + 1e-12, || format!("triple {t}: triangle inequality"))?;
    }

    let (w, h) = mi.working_size;
    let two_level = RgbImage::from_fn(w as u32, h as u32, |x, _| if (x as usize) < w / 2 { Rgb([0; 3]) } else { Rgb([255; 3]) });
    let q = quantize_intensity(&two_level, &mi);
    let mut counts = vec![0usize; mi.bins];
    for v in q {
        counts[v as usize] += 1;
    }
    let (self_mi, entropy) = (mutual_information(&two_level, &two_level, &mi), common::entropy_bits(&counts));
    check(self_mi == entropy, || format!("two-level fixture: MI(X, X) {self_mi} vs H(X) {entropy}"))?;

    let t = start.elapsed();
    check(t < Duration::from_secs(5), || format!("took {t:?}"))?;
    Ok(format!(
        "100 MI pairs, 100 GIST triples, MI(X, X) = H(X) = {entropy} on the two-level fixture, {:.2} s",
        t.as_secs_f64()
    ))
}

fn file_sha(path: &Path) -> Result<String, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Runs `experiment cross-lap --seed 0` through the command-line tool and
/// compares every checksum with the in-process run of the same protocol.
fn determinism() -> Outcome {
    let e = experiment();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_placefit"))
        .args(["experiment", "cross-lap", "--seed", "0", "--out"])
        .arg(dir.path())
        .env_remove("PLACEFIT_DATA")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || format!("cli failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    let summary: serde_json::Value = serde_json::from_slice(
        &std::fs::read(dir.path().join("experiment.summary.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;

    let expected = e.result.summary_checksum();
    check(summary["summary_checksum"] == expected.as_str(), || {
        format!("summary checksum {} vs {expected}", summary["summary_checksum"])
    })?;
    let laps = e.dataset.laps();
    let mut n_banks = 0;
    for (label, banks) in &e.banks {
        for (bank, lap) in banks.iter().zip(&laps) {
            let on_disk = file_sha(&dir.path().join(format!("banks/{label}_lap{lap}.pfbank")))?;
            let want = bank_checksum(bank);
            check(on_disk == want, || format!("bank {label} lap {lap}: {on_disk} vs {want}"))?;
            n_banks += 1;
        }
    }
    Ok(format!("summary checksum {}…, {n_banks} bank checksums identical across two runs", &expected[..12]))
}

fn persistence() -> Outcome {
    let e = experiment();
    let mut n_banks = 0;
    for (label, banks) in &e.banks {
        for bank in banks {
            let bytes = write_bank(bank);
            let back = read_bank(&bytes).map_err(|err| format!("{label}: {err}"))?;
            check(&back == bank && write_bank(&back) == bytes, || format!("bank {label} did not round-trip"))?;
            n_banks += 1;
        }
    }

    let bank = &e.banks[0].1[0];
    let bytes = write_bank(bank);
    let mut flipped = bytes.clone();
    let k = bytes.len() - 9;
    flipped[k] ^= 0x01;
    check(matches!(read_bank(&flipped), Err(Error::Checksum { .. })), || "flipped payload byte accepted".into())?;
    let mut future = bytes.clone();
    future[8] = future[8].wrapping_add(1);
    check(matches!(read_bank(&future), Err(Error::Version { .. })), || "future version accepted".into())?;
    check(read_bank(&bytes[..bytes.len() / 2]).is_err(), || "truncated bank accepted".into())?;

    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    save_dataset(&e.dataset, a.path()).map_err(|e| e.to_string())?;
    let back = load_dataset(a.path()).map_err(|e| e.to_string())?;
    check(back == e.dataset, || "dataset changed on reload".into())?;
    save_dataset(&back, b.path()).map_err(|e| e.to_string())?;
    for f in [FRAMES_FILE, ANNOTATIONS_FILE] {
        check(file_sha(&a.path().join(f))? == file_sha(&b.path().join(f))?, || format!("{f} differs after round trip"))?;
    }

    let annotations = a.path().join(ANNOTATIONS_FILE);
    let mut text = std::fs::read_to_string(&annotations).map_err(|e| e.to_string())?;
    text.push_str("999999,1,1,4,8\n");
    std::fs::write(&annotations, text).map_err(|e| e.to_string())?;
    let err = load_dataset(a.path()).err().ok_or("dangling annotation accepted")?;
    check(err.to_string().contains("frame 999999"), || format!("dangling annotation error: {err}"))?;

    let image = b.path().join(&e.dataset.frames[0].image_ref);
    std::fs::write(&image, b"\x89PNG\r\n\x1a\n broken").map_err(|e| e.to_string())?;
    check(load_dataset(b.path()).is_err(), || "corrupt image accepted".into())?;

    Ok(format!(
        "{n_banks} banks and the {}-frame dataset round-trip byte-exact; corrupted, truncated and future-version files rejected",
        e.dataset.frames.len()
    ))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "metric oracle suite", metric_oracle_suite),
        (2, "SVM optimality", svm_optimality),
        (3, "HNM contract", hnm_contract),
        (4, "trend reproduction", trend_reproduction),
        (5, "swathe-size ordering", swathe_ordering),
        (6, "similarity parity", similarity_parity),
        (7, "similarity invariants", similarity_invariants),
        (8, "determinism", determinism),
        (9, "persistence", persistence),
    ];
    // Only the named criteria when arguments are given, e.g. `-- 1 7`.
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        ran += 1;
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL - {detail}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
