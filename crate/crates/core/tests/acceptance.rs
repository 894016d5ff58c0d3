//! End-to-end acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line, even when an earlier one fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use textsr_core::data::degrade::{misalign_augment, upscale_bicubic};
use textsr_core::data::toy::toy_pairs;
use textsr_core::data::{allocate_subset, bucket_by_height, make_binary_mask, with_mask, HeightBucket};
use textsr_core::eval::{accuracy, Recognizer};
use textsr_core::losses::{gradient_profile_loss_f64, total_loss_grad_f64};
use textsr_core::metrics::{aggregate_report, psnr, ssim, SSIM_K1};
use textsr_core::nn::ParamStore;
use textsr_core::train::{ablation_presets, Trainer};
use textsr_core::{CentralAlign, Error, ImageTensor, ModelConfig, Source, Srb, Subset, TrainConfig, Tsrn};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn run(id: usize, name: &str, limit: Option<Duration>, f: fn() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let outcome = match (outcome, limit) {
        (Ok(_), Some(l)) if took > l => Err(format!("took {:.1}s, limit {:.0}s", took.as_secs_f64(), l.as_secs_f64())),
        (o, _) => o,
    };
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id} [{tag}] {name} ({:.1}s): {detail}", took.as_secs_f64());
    outcome.is_ok()
}

fn random_image(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((c, h, w), |_| rng.gen_range(0.0..1.0))
}

// Criterion 1 --------------------------------------------------------------

/// The loss written out term by term.
fn gp_oracle(sr: &Array3<f64>, hr: &Array3<f64>) -> f64 {
    let (c, h, w) = sr.dim();
    let mut sum = 0.0;
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let gx = |a: &Array3<f64>| if j + 1 < w { a[[ch, i, j + 1]] - a[[ch, i, j]] } else { 0.0 };
                let gy = |a: &Array3<f64>| if i + 1 < h { a[[ch, i + 1, j]] - a[[ch, i, j]] } else { 0.0 };
                sum += (gx(hr) - gx(sr)).abs() + (gy(hr) - gy(sr)).abs();
            }
        }
    }
    sum / (2 * c * h * w) as f64
}

fn gp_loss_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gp_only = TrainConfig {
        weight_pixel_loss: 0.0,
        weight_gp_loss: 1.0,
        ..TrainConfig::default()
    };
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let sr = random_image(&mut rng, 3, 8, 8);
        let hr = random_image(&mut rng, 3, 8, 8);
        let analytic = total_loss_grad_f64(&sr, &hr, &gp_only).map_err(|e| e.to_string())?;
        let mut fd = Array3::<f64>::zeros(sr.dim());
        for idx in ndarray::indices(sr.dim()) {
            let mut plus = sr.clone();
            let mut minus = sr.clone();
            plus[idx] += eps;
            minus[idx] -= eps;
            fd[idx] = (gp_oracle(&plus, &hr) - gp_oracle(&minus, &hr)) / (2.0 * eps);
        }
        let diff = (&analytic - &fd).mapv(|v| v * v).sum().sqrt();
        let norm = fd.mapv(|v| v * v).sum().sqrt();
        worst = worst.max(diff / norm);

        let same = gradient_profile_loss_f64(&sr, &sr).map_err(|e| e.to_string())?;
        ensure(same == 0.0, format!("L_gp(I, I) = {same}"))?;
        let l = gradient_profile_loss_f64(&sr, &hr).map_err(|e| e.to_string())?;
        ensure((l - gp_oracle(&sr, &hr)).abs() < 1e-12, "loss differs from oracle")?;
    }
    ensure(worst < 1e-3, format!("relative gradient error {worst:.2e}"))?;

    let hr = Array3::from_shape_vec((1, 1, 2), vec![0.0, 1.0]).unwrap();
    let sr = Array3::from_shape_vec((1, 1, 2), vec![0.0, 0.0]).unwrap();
    let l = gradient_profile_loss_f64(&sr, &hr).map_err(|e| e.to_string())?;
    let oracle = gp_oracle(&sr, &hr);
    ensure((l - oracle).abs() < 1e-12 && (l - 0.25).abs() < 1e-12, format!("1x1x2 example gave {l}"))?;
    Ok(format!("max relative gradient error {worst:.2e} over 20 pairs; 1x1x2 example = {l}"))
}

// Criterion 2 --------------------------------------------------------------

fn shape_suite() -> Check {
    let dev = Device::Cpu;
    let mut checked = 0;
    for preset in ablation_presets() {
        let cfg = preset.model;
        let model = Tsrn::new(&cfg, 0, DType::F32, &dev).map_err(|e| e.to_string())?;
        let x = Tensor::rand(0f32, 1.0, (2, cfg.input_channels(), 16, 64), &dev).unwrap();
        let y = model.forward(&x, false).map_err(|e| format!("{}: {e}", preset.name))?;
        ensure(y.dims() == [2, 3, 32, 128], format!("{}: output {:?}", preset.name, y.dims()))?;

        let store = ParamStore::new(1, DType::F32, dev.clone());
        let srb = Srb::new(&store.root(), &cfg).map_err(|e| e.to_string())?;
        let f = Tensor::randn(0f32, 1.0, (1, cfg.feature_channels, 4, 8), &dev).unwrap();
        let g = srb.forward(&f, true).map_err(|e| e.to_string())?;
        ensure(g.dims() == f.dims(), format!("{}: SRB changed shape", preset.name))?;
        checked += 1;
    }
    let bad = ModelConfig {
        feature_channels: 48,
        ..ModelConfig::default()
    };
    ensure(bad.validate().is_err(), "C != 2 x hidden accepted by validate")?;
    let store = ParamStore::new(1, DType::F32, Device::Cpu);
    ensure(
        matches!(Srb::new(&store.root(), &bad), Err(Error::ConfigInvalid { .. })),
        "C != 2 x hidden accepted by the SRB",
    )?;
    Ok(format!("{checked} presets emit [B, 3, 2H, 2W]; C = 2 x hidden enforced"))
}

// Criterion 3 --------------------------------------------------------------

fn identity_alignment() -> Check {
    let cfg = ModelConfig::default();
    let store = ParamStore::new(3, DType::F32, Device::Cpu);
    let align = CentralAlign::new(&store.root(), &cfg).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let x = Tensor::rand(0f32, 1.0, (4, cfg.input_channels(), 16, 64), &Device::Cpu).unwrap();
        let y = align.forward(&x, i % 2 == 0).map_err(|e| e.to_string())?;
        let d = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        worst = worst.max(d as f64);
    }
    ensure(worst < 1e-4, format!("max per-pixel change {worst:.2e}"))?;
    Ok(format!("max per-pixel change {worst:.2e} over 10 batches"))
}

// Criteria 4 and 8 share the toy training loop -----------------------------

const TOY_PAIRS: usize = 16;
const TOY_BATCH: usize = 4;

fn toy_model(use_alignment: bool) -> ModelConfig {
    ModelConfig {
        num_srb: 2,
        use_alignment,
        ..ModelConfig::default().with_hidden_units(8)
    }
}

fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: TOY_BATCH,
        seed,
        ..TrainConfig::default()
    }
}

/// Cycles through the pairs in order. Returns the pixel loss of every step.
fn toy_run(trainer: &mut Trainer, lrs: &[ImageTensor], hrs: &[ImageTensor], steps: usize) -> Result<Vec<f64>, String> {
    let inputs: Vec<ImageTensor> = lrs.iter().map(|l| with_mask(l).unwrap()).collect();
    (0..steps)
        .map(|s| {
            let i = (s * TOY_BATCH) % inputs.len();
            trainer
                .train_step_images(&inputs[i..i + TOY_BATCH], &hrs[i..i + TOY_BATCH])
                .map(|p| p.pixel)
                .map_err(|e| format!("step {s}: {e}"))
        })
        .collect()
}

/// Mean over the last pass through the data.
fn final_epoch_loss(losses: &[f64]) -> f64 {
    let per_epoch = TOY_PAIRS / TOY_BATCH;
    losses[losses.len() - per_epoch..].iter().sum::<f64>() / per_epoch as f64
}

fn overfit_sanity() -> Check {
    let pairs = toy_pairs(TOY_PAIRS, 0, &[Subset::Train]).map_err(|e| e.to_string())?;
    let lrs: Vec<ImageTensor> = pairs.iter().map(|p| p.lr.clone()).collect();
    let hrs: Vec<ImageTensor> = pairs.iter().map(|p| p.hr.clone()).collect();
    let mut trainer =
        Trainer::from_configs(&toy_model(false), toy_train_config(0), DType::F32, &Device::Cpu).map_err(|e| e.to_string())?;
    let losses = toy_run(&mut trainer, &lrs, &hrs, 200)?;
    let first = losses[0];
    let last = final_epoch_loss(&losses);
    let ratio = first / last;

    let sr = trainer.model().super_resolve_batch(&lrs).map_err(|e| e.to_string())?;
    let n = pairs.len() as f64;
    let mut sr_db = 0.0;
    let mut bic_db = 0.0;
    for ((s, l), h) in sr.iter().zip(&lrs).zip(&hrs) {
        sr_db += psnr(s, h).unwrap() / n;
        bic_db += psnr(&upscale_bicubic(l).unwrap(), h).unwrap() / n;
    }
    let gain = sr_db - bic_db;
    let detail = format!(
        "pixel loss {first:.4} -> {last:.5} ({ratio:.1}x); PSNR {sr_db:.2} dB vs bicubic {bic_db:.2} dB ({gain:+.2} dB)"
    );
    ensure(ratio >= 10.0 && gain >= 1.0, detail.clone())?;
    Ok(detail)
}

// Criterion 5 --------------------------------------------------------------

fn random_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap()
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_psnr: f64 = 0.0;
    let mut worst_ssim: f64 = 0.0;
    for _ in 0..50 {
        let a = random_tensor(&mut rng, 3, 16, 24);
        let b = random_tensor(&mut rng, 3, 16, 24);
        let mse = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>()
            / a.data().len() as f64;
        worst_psnr = worst_psnr.max((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs());
        worst_ssim = worst_ssim.max((ssim(&a, &a).unwrap() - 1.0).abs());
        worst_ssim = worst_ssim.max((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs());
    }
    ensure(worst_psnr < 1e-9, format!("PSNR off by {worst_psnr:.2e}"))?;
    ensure(worst_ssim < 1e-9, format!("SSIM identity/symmetry off by {worst_ssim:.2e}"))?;

    let mut worst_const: f64 = 0.0;
    for _ in 0..20 {
        let (u, v) = (rng.gen_range(0.0f32..1.0), rng.gen_range(0.0f32..1.0));
        let a = ImageTensor::filled(1, 12, 12, u).unwrap();
        let b = ImageTensor::filled(1, 12, 12, v).unwrap();
        let (u, v) = (u as f64, v as f64);
        // Zero variance and covariance reduce the contrast-structure factor to c2 / c2.
        let c1 = SSIM_K1 * SSIM_K1;
        let closed = (2.0 * u * v + c1) / (u * u + v * v + c1);
        worst_const = worst_const.max((ssim(&a, &b).unwrap() - closed).abs());
    }
    ensure(worst_const < 1e-9, format!("constant SSIM off by {worst_const:.2e}"))?;
    Ok(format!(
        "PSNR err {worst_psnr:.1e}, SSIM identity/symmetry err {worst_ssim:.1e}, constant-pair err {worst_const:.1e}"
    ))
}

// Criterion 6 --------------------------------------------------------------

struct PixelReader;

impl Recognizer for PixelReader {
    fn recognize(&self, img: &ImageTensor) -> textsr_core::Result<String> {
        Ok(if img.get(0, 0, 0) > 0.5 { "hit" } else { "miss" }.into())
    }
}

fn dataset_rules() -> Check {
    let mut mismatches = 0;
    let mut cases = 0;
    for source in [Source::RealSr, Source::SrRaw] {
        for tenth_mm in 1..=2000 {
            let focal = tenth_mm as f64 / 10.0;
            let expected = match source {
                Source::RealSr => Subset::Easy,
                _ if focal > 50.0 => Subset::Medium,
                _ => Subset::Hard,
            };
            cases += 1;
            mismatches += usize::from(allocate_subset(source, focal).ok() != Some(expected));
        }
    }
    ensure(allocate_subset(Source::Synthetic, 35.0).is_err(), "synthetic source allocated")?;
    for h in 0..=100usize {
        let expected = if h < 8 {
            HeightBucket::Discard
        } else if h < 16 {
            HeightBucket::LrGroup
        } else if h <= 32 {
            HeightBucket::HrGroup
        } else {
            HeightBucket::Oversize
        };
        cases += 1;
        mismatches += usize::from(bucket_by_height(h) != expected);
    }
    ensure(mismatches == 0, format!("{mismatches} allocation/bucket mismatches"))?;

    // Synthetic manifest with the published subset sizes.
    let counts = [(Subset::Easy, 1619usize, 0.8f32), (Subset::Medium, 1411, 0.6), (Subset::Hard, 1343, 0.4)];
    let total: usize = counts.iter().map(|c| c.1).sum();
    let mut pairs = Vec::new();
    let mut samples = Vec::new();
    let mut expected_psnr = 0.0;
    let mut expected_hits = 0usize;
    for (s, n, level) in counts {
        let sr = ImageTensor::filled(1, 11, 11, level).unwrap();
        let hr = ImageTensor::filled(1, 11, 11, 1.0).unwrap();
        expected_psnr += n as f64 * psnr(&sr, &hr).unwrap();
        let hits = n * 2 / 3 + n % 7;
        expected_hits += hits;
        for i in 0..n {
            pairs.push((sr.clone(), hr.clone(), s));
            let v = if i < hits { 1.0 } else { 0.0 };
            samples.push((ImageTensor::filled(1, 1, 1, v).unwrap(), "hit".to_string(), s));
        }
    }
    expected_psnr /= total as f64;
    let report = aggregate_report(pairs).map_err(|e| e.to_string())?;
    let overall = report.overall().ok_or("empty report")?;
    let got_counts: Vec<usize> = report.per_subset.values().map(|m| m.n).collect();
    ensure(got_counts == [1619, 1411, 1343], format!("subset counts {got_counts:?}"))?;
    ensure(
        (overall.psnr_db - expected_psnr).abs() < 1e-9,
        format!("weighted PSNR {} vs {expected_psnr}", overall.psnr_db),
    )?;
    let acc = accuracy(&PixelReader, samples).map_err(|e| e.to_string())?;
    let expected_acc = expected_hits as f64 / total as f64;
    let got = acc.weighted_average().ok_or("no accuracy")?;
    ensure((got - expected_acc).abs() < 1e-12, format!("weighted accuracy {got} vs {expected_acc}"))?;
    Ok(format!("{cases} grid cases, 0 mismatches; weights 1619/1411/1343 reproduced"))
}

// Criterion 7 --------------------------------------------------------------

fn mask_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..100 {
        // Odd pixel counts rule out an exact split between the two levels.
        let (h, w) = (2 * rng.gen_range(3..9) + 1, 2 * rng.gen_range(5..20) + 1);
        let dark: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.45));
        let light: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.55..1.0));
        let p = rng.gen_range(0.05..0.95);
        let mut bits: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(p)).collect();
        bits[0] = true;
        bits[1] = false;
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            data.extend(bits.iter().map(|&b| if b { light[c] } else { dark[c] }));
        }
        let img = ImageTensor::from_vec(3, h, w, data.clone()).unwrap();
        let inv = ImageTensor::from_vec(3, h, w, data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let m = make_binary_mask(&img).map_err(|e| e.to_string())?;
        let mi = make_binary_mask(&inv).map_err(|e| e.to_string())?;
        ensure(m.data().iter().all(|&v| v == 0.0 || v == 1.0), format!("image {k}: mask not binary"))?;
        ensure(m.data() == mi.data(), format!("image {k}: mask changed under inversion"))?;
    }
    Ok("100 two-level images: binary and inversion-invariant".into())
}

// Criterion 8 --------------------------------------------------------------

const ALIGN_STEPS: usize = 80;

fn misalignment() -> Check {
    let pairs = toy_pairs(TOY_PAIRS, 8, &[Subset::Train]).map_err(|e| e.to_string())?;
    let lr = &pairs[0].lr;
    let a = misalign_augment(lr, &mut ChaCha8Rng::seed_from_u64(1)).map_err(|e| e.to_string())?;
    let b = misalign_augment(lr, &mut ChaCha8Rng::seed_from_u64(1)).map_err(|e| e.to_string())?;
    ensure(a.dims() == lr.dims(), "augmentation changed the shape")?;
    ensure(a == b, "augmentation not reproducible for a fixed seed")?;

    let hrs: Vec<ImageTensor> = pairs.iter().map(|p| p.hr.clone()).collect();
    let mut rows = Vec::new();
    let mut ok = true;
    for seed in [0u64, 1, 2] {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let lrs: Vec<ImageTensor> = pairs.iter().map(|p| misalign_augment(&p.lr, &mut rng).unwrap()).collect();
        let mut finals = BTreeMap::new();
        for on in [true, false] {
            let mut t = Trainer::from_configs(&toy_model(on), toy_train_config(seed), DType::F32, &Device::Cpu)
                .map_err(|e| e.to_string())?;
            let losses = toy_run(&mut t, &lrs, &hrs, ALIGN_STEPS)?;
            finals.insert(on, final_epoch_loss(&losses));
        }
        ok &= finals[&true] <= finals[&false];
        rows.push(format!("seed {seed}: on {:.5} / off {:.5}", finals[&true], finals[&false]));
    }
    let detail = rows.join("; ");
    ensure(ok, detail.clone())?;
    Ok(detail)
}

// Criterion 9 --------------------------------------------------------------

fn parameter_budget() -> Check {
    let model = Tsrn::new(&ModelConfig::default(), 0, DType::F32, &Device::Cpu).map_err(|e| e.to_string())?;
    let n = model.num_parameters();
    let rel = (n as f64 - 2.8e6).abs() / 2.8e6;
    let detail = format!("{n} parameters ({:+.1}% from 2.8M)", 100.0 * (n as f64 / 2.8e6 - 1.0));
    ensure(rel <= 0.15, detail.clone())?;
    Ok(detail)
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let results = [
        run(1, "gradient profile loss", secs(10), gp_loss_correctness),
        run(2, "shapes and structure", secs(30), shape_suite),
        run(3, "identity alignment", None, identity_alignment),
        run(4, "toy overfit", secs(300), overfit_sanity),
        run(5, "metric oracles", None, metric_oracles),
        run(6, "dataset rules", None, dataset_rules),
        run(7, "mask properties", None, mask_properties),
        run(8, "misalignment and central alignment", None, misalignment),
        run(9, "parameter budget", None, parameter_budget),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
