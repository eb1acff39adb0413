//! Acceptance run: one PASS/FAIL line per criterion. Needs an optimized test
//! profile; the toy training runs take several minutes on one core.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segkit::bench::{run_suite, BenchSettings};
use segkit::datakit::{filter_by_coverage, split, synth_corpus, tile, DatasetSplit, RasterPair, TileSample};
use segkit::metrics::{confusion, kappa, ConfusionMatrix, MetricsReport};
use segkit::trainer::{train, validate, TrainingConfig, THRESHOLD};
use segkit::viz::{render_confusion, FN_COLOR, FP_COLOR, TN_COLOR, TP_COLOR};
use segkit::zoo::{bce_loss_graph, build_model, family_loss, ArchitectureConfig, Family, Model};
use segkit::{BinaryMap, Tensor};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_input(n: usize, s: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 3, s, s], |_| rng.gen::<f64>())
}

fn rect_target(n: usize, s: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::zeros(&[n, 1, s, s]);
    for b in 0..n {
        let (r0, c0) = (rng.gen_range(0..s / 2), rng.gen_range(0..s / 2));
        let (h, w) = (rng.gen_range(4..s / 2), rng.gen_range(4..s / 2));
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                t.data_mut()[(b * s + r) * s + c] = 1.0;
            }
        }
    }
    t
}

fn shapes() -> Outcome {
    let mut checked = 0;
    for f in Family::ALL {
        let m: Model<f32> = build_model(&ArchitectureConfig::new(f), 1).map_err(|e| e.to_string())?;
        for s in [32, 64] {
            for b in [1, 3] {
                let x = random_input(b, s, (s + b) as u64).cast::<f32>();
                let p = m.forward(&x).map_err(|e| format!("{f}: {e}"))?.primary;
                check(p.shape() == [b, 1, s, s], || {
                    format!("{f} B={b} S={s}: shape {:?}", p.shape())
                })?;
                check(p.data().iter().all(|&v| v > 0.0 && v < 1.0), || {
                    format!("{f} B={b} S={s}: value outside (0,1)")
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} family/size/batch combinations"))
}

/// Central difference of the training-mode BCE loss, the loss an
/// optimization step differentiates.
fn central_difference(m: &mut Model<f64>, x: &Tensor<f64>, t: &Tensor<f64>, name: &str, idx: usize, h: f64) -> f64 {
    let orig = m.params()[name].data()[idx];
    let mut loss_at = |v: f64| {
        m.params_mut().get_mut(name).unwrap().data_mut()[idx] = v;
        let pass = m.forward_tracked(x, true).unwrap();
        bce_loss_graph(&pass.outputs.primary, t).unwrap().value().data()[0]
    };
    let (up, down) = (loss_at(orig + h), loss_at(orig - h));
    loss_at(orig);
    (up - down) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn gradients() -> Outcome {
    let mut worst_cover: f64 = 1.0;
    let mut worst_err: f64 = 0.0;
    let mut fine = 0;
    for f in Family::ALL {
        let cfg = ArchitectureConfig::new(f).with_base_channels(4);
        let mut m: Model<f64> = build_model(&cfg, 11).map_err(|e| e.to_string())?;
        let (x, t) = (random_input(2, 32, 12), rect_target(2, 32, 13));
        let pass = m.forward_train(&x).map_err(|e| e.to_string())?;
        family_loss(&cfg, &pass.outputs, &t)
            .map_err(|e| e.to_string())?
            .backward();
        let grads = pass.gradients();
        drop(pass);
        let cover = grads.values().filter(|g| g.max_abs() > 0.0).count() as f64 / grads.len() as f64;
        check(cover >= 0.99, || {
            format!("{f}: {:.1}% of parameter arrays have gradient", 100.0 * cover)
        })?;
        worst_cover = worst_cover.min(cover);

        let (x, t) = (random_input(1, 32, 32), rect_target(1, 32, 33));
        let pass = m.forward_tracked(&x, true).map_err(|e| e.to_string())?;
        bce_loss_graph(&pass.outputs.primary, &t)
            .map_err(|e| e.to_string())?
            .backward();
        let grads = pass.gradients();
        drop(pass);
        let names: Vec<String> = m.params().keys().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..10 {
            let name = &names[rng.gen_range(0..names.len())];
            let idx = rng.gen_range(0..m.params()[name].len());
            let analytic = grads[name].data()[idx];
            let mut err = rel_err(central_difference(&mut m, &x, &t, name, idx, 1e-3), analytic);
            if err > 1e-2 {
                // the coarse step straddled a ReLU or max-pool kink
                fine += 1;
                err = rel_err(central_difference(&mut m, &x, &t, name, idx, 1e-6), analytic);
            }
            check(err <= 1e-2, || format!("{f} {name}[{idx}]: relative error {err:.3e}"))?;
            worst_err = worst_err.max(err);
        }
    }
    Ok(format!(
        "min coverage {:.1}%, max relative error {worst_err:.2e}, {fine}/90 samples needed step 1e-6",
        100.0 * worst_cover
    ))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let p = rng.gen_range(0.0..1.0);
        let pred = BinaryMap::from_fn(32, 32, |_, _| rng.gen_bool(p));
        let gt = BinaryMap::from_fn(32, 32, |_, _| rng.gen_bool(0.3));
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (a, b) in pred.data().iter().zip(gt.data()) {
            match (*a != 0, *b != 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let cm = confusion(&pred, &gt).map_err(|e| e.to_string())?;
        check((cm.tp, cm.fp, cm.fn_, cm.tn) == (tp, fp, fn_, tn), || {
            format!("pair {i}: counts {cm:?}")
        })?;
        let r = MetricsReport::<f64>::from_confusion(&cm).map_err(|e| e.to_string())?;
        let (tp, fp, fn_, tn) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
        let n = tp + fp + fn_ + tn;
        let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        let (pr, rc) = (div(tp, tp + fp), div(tp, tp + fn_));
        let pe = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n);
        let oa = (tp + tn) / n;
        let want = [
            pr,
            rc,
            oa,
            div(2.0 * pr * rc, pr + rc),
            div(tp, tp + fp + fn_),
            div(oa - pe, 1.0 - pe),
        ];
        for (k, (got, want)) in r.values().iter().zip(want).enumerate() {
            check((got - want).abs() <= 1e-12, || {
                format!("pair {i} metric {k}: {got} vs {want}")
            })?;
        }
    }
    let k = kappa::<f64>(&ConfusionMatrix::new(6, 2, 3, 5))
        .map_err(|e| e.to_string())?
        .value;
    check((k - 0.375).abs() <= 1e-9, || format!("hand case kappa {k}"))?;
    Ok(format!("1000 pairs exact, hand-case kappa {k}"))
}

/// 50 rasters of 128x128 cut into 200 tiles of 64x64.
fn toy_corpus() -> DatasetSplit {
    let tiles: Vec<TileSample> = synth_corpus(50, 128, 2024)
        .unwrap()
        .iter()
        .flat_map(|p| tile(p, 64, 64).unwrap())
        .collect();
    assert_eq!(tiles.len(), 200);
    split(tiles, (0.8, 0.1, 0.1), 7).unwrap()
}

struct ToyRun {
    jaccard: f64,
    kappa: f64,
    first_loss: f64,
    last_loss: f64,
    seconds: f64,
}

fn toy_run(data: &DatasetSplit, family: Family, seed: u64) -> Result<ToyRun, String> {
    let start = Instant::now();
    let model: Model<f32> =
        build_model(&ArchitectureConfig::new(family).with_base_channels(16), seed).map_err(|e| e.to_string())?;
    let tcfg = TrainingConfig {
        learning_rate: 2e-4,
        batch_size: 8,
        iterations: 300,
        eval_every: 300,
        seed,
        ..Default::default()
    };
    let (model, log) = train(model, data, &tcfg).map_err(|e| format!("{family} seed {seed}: {e}"))?;
    let r = validate(&model, &data.test, THRESHOLD).map_err(|e| e.to_string())?;
    let losses = log.losses();
    Ok(ToyRun {
        jaccard: r.jaccard as f64,
        kappa: r.kappa as f64,
        first_loss: losses[0],
        last_loss: *losses.last().unwrap(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn convergence(data: &DatasetSplit, unet: &HashMap<u64, ToyRun>) -> Outcome {
    let r = &unet[&0];
    check(r.last_loss < r.first_loss, || {
        format!("loss {:.4} -> {:.4}", r.first_loss, r.last_loss)
    })?;
    check(r.jaccard >= 0.80 && r.kappa >= 0.75, || {
        format!(
            "held-out Jaccard {:.3}, kappa {:.3} on {} tiles",
            r.jaccard,
            r.kappa,
            data.test.len()
        )
    })?;
    check(r.seconds < 600.0, || format!("took {:.0} s", r.seconds))?;
    Ok(format!(
        "held-out Jaccard {:.3}, kappa {:.3}, loss {:.4} -> {:.4}, {:.0} s",
        r.jaccard, r.kappa, r.first_loss, r.last_loss, r.seconds
    ))
}

fn ranking(data: &DatasetSplit, unet: &mut HashMap<u64, ToyRun>) -> Outcome {
    let mut held = 0;
    let mut detail = Vec::new();
    for seed in 0..3u64 {
        if let std::collections::hash_map::Entry::Vacant(e) = unet.entry(seed) {
            e.insert(toy_run(data, Family::UNet, seed)?);
        }
        let fcn = toy_run(data, Family::Fcn32s, seed)?;
        let u = unet[&seed].jaccard;
        if fcn.jaccard <= u + 0.02 {
            held += 1;
        }
        detail.push(format!("seed {seed}: FCN32s {:.3} vs UNet {u:.3}", fcn.jaccard));
    }
    let detail = detail.join("; ");
    check(held >= 2, || format!("held on {held}/3 seeds ({detail})"))?;
    Ok(format!("held on {held}/3 seeds ({detail})"))
}

fn benchmark() -> Outcome {
    let settings = BenchSettings {
        batch_size: 4,
        size: 64,
        base_channels: 16,
        warmup_iters: 1,
        timed_iters: 3,
        ..Default::default()
    };
    let report = run_suite::<f32>(&Family::ALL, &settings).map_err(|e| e.to_string())?;
    let mut worst = f64::INFINITY;
    for row in &report.rows {
        let train = row.training.as_ref().map_err(|e| format!("{}: {e}", row.family))?;
        let test = row.testing.as_ref().map_err(|e| format!("{}: {e}", row.family))?;
        check(test.fps > train.fps, || {
            format!(
                "{}: testing {:.1} fps <= training {:.1} fps",
                row.family, test.fps, train.fps
            )
        })?;
        worst = worst.min(test.fps / train.fps);
    }
    Ok(format!("9 families, smallest testing/training ratio {worst:.2}"))
}

fn visualization() -> Outcome {
    let pred = BinaryMap::from_vec(2, 2, vec![1, 1, 0, 0]).unwrap();
    let gt = BinaryMap::from_vec(2, 2, vec![1, 0, 1, 0]).unwrap();
    let img = render_confusion(&pred, &gt).map_err(|e| e.to_string())?;
    let golden = [
        Rgb([0, 255, 0]),
        Rgb([255, 0, 0]),
        Rgb([0, 0, 255]),
        Rgb([255, 255, 255]),
    ];
    let got: Vec<Rgb<u8>> = img.pixels().copied().collect();
    check(got == golden, || format!("2x2 pattern rendered {got:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let pred = BinaryMap::from_fn(24, 24, |_, _| rng.gen_bool(0.5));
        let gt = BinaryMap::from_fn(24, 24, |_, _| rng.gen_bool(0.4));
        let img = render_confusion(&pred, &gt).map_err(|e| e.to_string())?;
        let mut hist: HashMap<[u8; 3], u64> = HashMap::new();
        for px in img.pixels() {
            *hist.entry(px.0).or_default() += 1;
        }
        let cm = confusion(&pred, &gt).map_err(|e| e.to_string())?;
        let count = |c: Rgb<u8>| hist.get(&c.0).copied().unwrap_or(0);
        let want = (cm.tp, cm.fp, cm.fn_, cm.tn);
        let have = (count(TP_COLOR), count(FP_COLOR), count(FN_COLOR), count(TN_COLOR));
        check(have == want && hist.len() <= 4, || {
            format!("pair {i}: histogram {have:?} vs {want:?}")
        })?;
    }
    Ok("golden 2x2 and 100 histograms".into())
}

fn tiling() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let image = RgbImage::from_fn(672, 448, |_, _| Rgb(rng.gen()));
    let mask = BinaryMap::from_fn(448, 672, |r, c| (r * 7 + c * 3) % 11 < 4);
    let pair = RasterPair::new("scene", image.clone(), mask.clone()).map_err(|e| e.to_string())?;
    let tiles = tile(&pair, 224, 224).map_err(|e| e.to_string())?;
    check(tiles.len() == 6, || format!("{} tiles", tiles.len()))?;
    let mut offsets: Vec<(usize, usize)> = tiles.iter().map(|t| t.offset).collect();
    offsets.sort();
    let want: Vec<(usize, usize)> = [0, 224].iter().flat_map(|&r| [0, 224, 448].map(|c| (r, c))).collect();
    check(offsets == want, || format!("offsets {offsets:?}"))?;
    let mut img2 = RgbImage::new(672, 448);
    let mut msk2 = BinaryMap::zeros(448, 672);
    for t in &tiles {
        let (r0, c0) = t.offset;
        for r in 0..224 {
            for c in 0..224 {
                img2.put_pixel((c0 + c) as u32, (r0 + r) as u32, *t.image.get_pixel(c as u32, r as u32));
                msk2.set(r0 + r, c0 + c, t.mask.get(r, c));
            }
        }
    }
    check(img2 == image && msk2 == mask, || "reconstruction differs".into())?;

    let with_coverage = |cov: f64| {
        let on = (cov * 100.0).round() as usize;
        let m = BinaryMap::from_fn(10, 10, |r, c| r * 10 + c < on);
        TileSample::new("c", (0, 0), RgbImage::new(10, 10), m)
    };
    let mixed: Vec<TileSample> = [0.0, 0.04, 0.05, 0.5].iter().map(|&c| with_coverage(c)).collect();
    let kept: Vec<f64> = filter_by_coverage(mixed.clone(), 0.05)
        .iter()
        .map(|t| t.coverage)
        .collect();
    check(kept == [0.05, 0.5], || format!("kept coverages {kept:?}"))?;
    check(filter_by_coverage(mixed.clone(), 0.0) == mixed, || {
        "min 0 changed the set".into()
    })?;
    let empty: Vec<TileSample> = (0..3).map(|_| with_coverage(0.0)).collect();
    check(filter_by_coverage(empty, 0.05).is_empty(), || {
        "zero-coverage tiles kept".into()
    })?;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "6 tiles, bit-exact reconstruction, filter examples hold ({secs:.2} s)"
    ))
}

fn segkit(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_segkit"))
        .args(args)
        .current_dir(dir)
        .env_remove("GEOSEG_DEVICE")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    segkit(&["synth", "--out", "raw", "--count", "8", "--size", "64"], dir)?;
    segkit(
        &[
            "tile",
            "--input",
            "raw",
            "--out",
            "dataset",
            "--size",
            "32",
            "--min-coverage",
            "0",
        ],
        dir,
    )?;
    for run in ["run1", "run2"] {
        segkit(
            &[
                "train",
                "--workdir",
                run,
                "--seed",
                "3",
                "--base-channels",
                "8",
                "--batch-size",
                "4",
                "--iterations",
                "20",
                "--eval-every",
                "10",
            ],
            dir,
        )?;
    }
    let mut compared = 0;
    for file in ["logs/UNet/train_log.csv", "checkpoints/UNet/final.ckpt"] {
        let a = std::fs::read(dir.join("run1").join(file)).map_err(|e| format!("{file}: {e}"))?;
        let b = std::fs::read(dir.join("run2").join(file)).map_err(|e| format!("{file}: {e}"))?;
        check(a == b, || format!("{file} differs between runs"))?;
        compared += a.len();
    }
    Ok(format!("log and checkpoint identical ({compared} bytes)"))
}

/// Criterion numbers given as arguments select a subset; none runs all.
fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let data = toy_corpus();
    let mut unet: HashMap<u64, ToyRun> = HashMap::new();
    let (mut ran, mut failed) = (0, 0);
    let mut report = |n: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        ran += 1;
        let line = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(Ok(detail)) => format!("PASS criterion {n} {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                format!("FAIL criterion {n} {name}: {why}")
            }
            Err(_) => {
                failed += 1;
                format!("FAIL criterion {n} {name}: panicked")
            }
        };
        println!("{line}");
    };
    report(1, "shapes", &mut shapes);
    report(2, "gradients", &mut gradients);
    report(3, "metrics oracle", &mut metrics_oracle);
    report(4, "toy convergence", &mut || {
        unet.insert(0, toy_run(&data, Family::UNet, 0)?);
        convergence(&data, &unet)
    });
    report(5, "ranking", &mut || ranking(&data, &mut unet));
    report(6, "benchmark", &mut benchmark);
    report(7, "visualization", &mut visualization);
    report(8, "tiling", &mut tiling);
    report(9, "determinism", &mut determinism);
    if failed == 0 {
        println!("acceptance: {ran}/{ran} criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of {ran} criteria failed");
        ExitCode::FAILURE
    }
}
