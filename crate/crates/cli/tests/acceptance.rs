//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured values (visible with `--nocapture`).
//!
//! Criteria 3-6 evaluate trained toy models; the trainings run once and are
//! shared across tests through lazy statics. The full suite is CPU-only and
//! completes in roughly half an hour.

use std::sync::OnceLock;
use std::time::Instant;

use jicd_core::checkpoint::Checkpoint;
use jicd_core::coder::{overhead_bound_bytes, range_decode, range_encode};
use jicd_core::container::{ContainerError, ScalableBitstream};
use jicd_core::entropy::{gaussian_bin_prob_floored, gaussian_residual_pmf, SIGMA_MIN};
use jicd_core::image::ImageBuffer;
use jicd_core::metrics::psnr;
use jicd_core::model::{
    analysis_image, init_params, merge_latent, split_latent, synthesize_full, LatentPartition,
    ModelConfig, ParamSet,
};
use jicd_core::noise::{derive_rng, estimate_sigma, synth_awgn, NoiseSpec};
use jicd_core::pad::{next_multiple_of_64, pad_to_64};
use jicd_core::pipeline::{decode_base, decode_base_bytes, decode_full, encode_image};
use jicd_core::rd::{bd_rate, bpp_accounting, RDCurve, RDPoint, Task};
use jicd_core::synthetic::{generate_corpus, generate_image};
use jicd_core::train::{gradient_check, train_step, TrainConfig, TrainState, LAMBDA_LADDER};
use rand::Rng;

const TRAIN_SEED: u64 = 4242;
const TRAIN_ITERS: u64 = 2000;
const SIGMA_TRAIN: f64 = 50.0;

/// Lambda subset exercised at desk scale: lowest, middle, and a high rung
/// of the published ladder.
const LAMBDAS: [f64; 3] = [LAMBDA_LADDER[0], LAMBDA_LADDER[2], LAMBDA_LADDER[4]];

struct TrainedModel {
    cfg: ModelConfig,
    params: ParamSet<f32>,
    model_id: u64,
    lambda: f64,
    train_secs: f64,
}

fn train_corpus() -> &'static Vec<ImageBuffer> {
    static CORPUS: OnceLock<Vec<ImageBuffer>> = OnceLock::new();
    CORPUS.get_or_init(|| generate_corpus(128, 96, 96, 9001))
}

/// Held-out pairs: clean images never seen in training, with sigma-50
/// clipped-quantized noise.
fn held_out_pairs() -> &'static Vec<(ImageBuffer, ImageBuffer)> {
    static PAIRS: OnceLock<Vec<(ImageBuffer, ImageBuffer)>> = OnceLock::new();
    PAIRS.get_or_init(|| {
        generate_corpus(12, 64, 64, 777_000)
            .into_iter()
            .enumerate()
            .map(|(k, clean)| {
                let noisy = synth_awgn(&clean, SIGMA_TRAIN, 555_000 + k as u64).unwrap();
                (clean, noisy)
            })
            .collect()
    })
}

fn train_toy(lambda: f64) -> TrainedModel {
    let cfg = ModelConfig::toy();
    let tc = TrainConfig::toy_defaults(lambda, NoiseSpec::awgn(SIGMA_TRAIN, TRAIN_SEED), TRAIN_SEED);
    let mut params = init_params::<f32>(&cfg, TRAIN_SEED);
    let mut state = TrainState::new(&params, &tc);
    let start = Instant::now();
    let images = train_corpus();
    while state.step < TRAIN_ITERS {
        let bd = train_step(&mut params, &mut state, &cfg, &tc, images)
            .expect("training step stays finite");
        if state.step % 400 == 0 {
            eprintln!(
                "  [train lambda={lambda}] step {} loss {:.3} bpp {:.3} mse_d {:.1}",
                state.step,
                bd.total,
                bd.bpp(),
                bd.mse_denoise
            );
        }
    }
    let train_secs = start.elapsed().as_secs_f64();
    let model_id = Checkpoint::new(cfg.clone(), params.clone()).model_id();
    TrainedModel { cfg, params, model_id, lambda, train_secs }
}

fn trained(idx: usize) -> &'static TrainedModel {
    static MODELS: [OnceLock<TrainedModel>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    MODELS[idx].get_or_init(|| train_toy(LAMBDAS[idx]))
}

/// Criterion 1: base-layer decode is bit-identical when the enhancement
/// substream is replaced by random bytes or truncated to zero length.
#[test]
fn acceptance_01_scalability_invariant() {
    let start = Instant::now();
    let cfg = ModelConfig::toy();
    let params = init_params::<f32>(&cfg, 11);
    let model_id = 11;
    let mut rng = derive_rng(11, 0xACCE, 1);
    for k in 0..20u64 {
        let clean = generate_image(64, 64, 600_000 + k);
        let noisy = synth_awgn(&clean, SIGMA_TRAIN, 610_000 + k).unwrap();
        let (padded, orig) = pad_to_64(&noisy);
        let (bs, _) = encode_image(&params, &cfg, model_id, &padded, orig).unwrap();
        let reference = decode_base(&params, &cfg, model_id, &bs).unwrap();

        let mut randomized = bs.clone();
        for b in randomized.enhancement.iter_mut() {
            *b = rng.random();
        }
        assert_eq!(
            decode_base(&params, &cfg, model_id, &randomized).unwrap(),
            reference,
            "image {k}: random enhancement bytes changed the base decode"
        );

        let mut truncated = bs.clone();
        truncated.enhancement.clear();
        assert_eq!(
            decode_base(&params, &cfg, model_id, &truncated).unwrap(),
            reference,
            "image {k}: truncated enhancement changed the base decode"
        );

        // Byte-level: file truncated right after the base substream.
        let mut bytes = bs.serialize();
        bytes.truncate(bytes.len() - bs.enhancement.len() - 4);
        assert_eq!(
            decode_base_bytes(&params, &cfg, model_id, &bytes).unwrap(),
            reference,
            "image {k}: truncated file changed the base decode"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 1 must run in under a minute, took {secs:.1}s");
    println!("ACCEPTANCE 1 PASS - base decode invariant over 20 images ({secs:.1}s)");
}

/// Criterion 2: the range coder recovers every quantized symbol exactly and
/// stays within the per-substream overhead bound.
#[test]
fn acceptance_02_entropy_losslessness() {
    let start = Instant::now();
    let mut rng = derive_rng(2, 0xACCE, 2);
    for case in 0..1000u32 {
        let n = 50 + (case as usize % 8) * 50;
        let mut symbols = Vec::with_capacity(n);
        let mut pmfs = Vec::with_capacity(n);
        let mut scales = Vec::with_capacity(n);
        let spread = 1.0 + (case % 17) as f64;
        let mut max_abs = 1i32;
        for _ in 0..n {
            let mu: f64 = rng.random_range(-2.0..2.0);
            let v: f64 = rng.random_range(-spread..spread);
            let sigma = SIGMA_MIN + rng.random_range(0.0..6.0);
            let s = libm::round(v - mu) as i32;
            symbols.push(s);
            scales.push(sigma);
            max_abs = max_abs.max(s.abs());
        }
        for &sc in &scales {
            pmfs.push(gaussian_residual_pmf(sc, max_abs));
        }
        let bytes = range_encode(&symbols, &pmfs).unwrap();
        assert_eq!(range_decode(&bytes, &pmfs).unwrap(), symbols, "case {case}");
        let ideal_bits: f64 = symbols
            .iter()
            .zip(&scales)
            .map(|(&s, &sc)| -libm::log2(gaussian_bin_prob_floored(s as f64, 0.0, sc)))
            .sum();
        let bound = ideal_bits / 8.0 + overhead_bound_bytes(ideal_bits);
        assert!(
            (bytes.len() as f64) <= bound,
            "case {case}: {} bytes over bound {bound:.1}",
            bytes.len()
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 2 must run in under a minute, took {secs:.1}s");
    println!("ACCEPTANCE 2 PASS - 1000 round trips lossless within rate bounds ({secs:.1}s)");
}

/// Criterion 3: per-substream file bits against the model estimate on toy
/// encodes (trained model, so the entropy parameters describe the data).
#[test]
fn acceptance_03_rate_estimate_agreement() {
    let model = trained(1);
    let mut worst_rel = 0.0f64;
    for (k, (_, noisy)) in held_out_pairs().iter().take(10).enumerate() {
        let (padded, orig) = pad_to_64(noisy);
        let (_, report) =
            encode_image(&model.params, &model.cfg, model.model_id, &padded, orig).unwrap();
        for (name, actual, estimate) in [
            ("side", report.actual_bits.side, report.estimated_bits.side),
            ("base", report.actual_bits.base, report.estimated_bits.base),
            ("enh", report.actual_bits.enh, report.estimated_bits.enh),
        ] {
            assert!(
                actual >= estimate - 1e-6,
                "image {k} {name}: actual {actual} under estimate {estimate}"
            );
            let bound = estimate + 8.0 * overhead_bound_bytes(estimate);
            assert!(
                actual <= bound,
                "image {k} {name}: actual {actual} over bound {bound}"
            );
            if estimate > 0.0 {
                worst_rel = worst_rel.max((actual - estimate) / estimate);
            }
        }
    }
    println!(
        "ACCEPTANCE 3 PASS - actual bits within [estimate-1e-6, estimate+bound]; worst overhead {:.2}%",
        100.0 * worst_rel
    );
}

/// Criterion 4: analytic gradients against central finite differences in
/// double precision on a toy model.
#[test]
fn acceptance_04_gradient_check() {
    let start = Instant::now();
    let cfg = ModelConfig::toy();
    let mut tc = TrainConfig::toy_defaults(0.013, NoiseSpec::awgn(SIGMA_TRAIN, 41), 41);
    tc.batch = 1;
    let images = generate_corpus(4, 64, 64, 410_000);
    let report = gradient_check(&cfg, &tc, &images, 100, 1e-3, 1e-2, 42).unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(report.checked, 100);
    assert!(
        report.pass_fraction() >= 0.99,
        "only {}/{} gradients within 1e-2 (max rel err {:.2e})",
        report.within_tol,
        report.checked,
        report.max_rel_err
    );
    assert!(secs < 300.0, "criterion 4 must run in under 5 minutes, took {secs:.1}s");
    println!(
        "ACCEPTANCE 4 PASS - {}/{} gradients within 1e-2, max rel err {:.2e} ({secs:.1}s)",
        report.within_tol, report.checked, report.max_rel_err
    );
}

/// Criterion 5: after 2000 toy iterations at sigma=50, base-layer decoding
/// denoises held-out images by >= 3 dB over the noisy input, and the full
/// reconstruction tracks the noisy input better than the base does.
#[test]
fn acceptance_05_toy_denoising_gain() {
    let model = trained(1);
    assert!(
        model.train_secs < 1800.0,
        "training must fit the 30 minute budget, took {:.0}s",
        model.train_secs
    );
    let pairs = held_out_pairs();
    let (mut p_noisy, mut p_base, mut p_full_vs_noisy, mut p_base_vs_noisy) = (0.0, 0.0, 0.0, 0.0);
    for (clean, noisy) in pairs.iter() {
        let (padded, orig) = pad_to_64(noisy);
        let (bs, _) = encode_image(&model.params, &model.cfg, model.model_id, &padded, orig).unwrap();
        let base = decode_base(&model.params, &model.cfg, model.model_id, &bs).unwrap();
        let full = decode_full(&model.params, &model.cfg, model.model_id, &bs).unwrap();
        p_noisy += psnr(noisy, clean).unwrap();
        p_base += psnr(&base, clean).unwrap();
        p_full_vs_noisy += psnr(&full, noisy).unwrap();
        p_base_vs_noisy += psnr(&base, noisy).unwrap();
    }
    let n = pairs.len() as f64;
    let (p_noisy, p_base) = (p_noisy / n, p_base / n);
    let (p_full_vs_noisy, p_base_vs_noisy) = (p_full_vs_noisy / n, p_base_vs_noisy / n);
    assert!(
        p_base >= p_noisy + 3.0,
        "denoising gain {:.2} dB below the 3 dB bar (noisy {p_noisy:.2}, base {p_base:.2})",
        p_base - p_noisy
    );
    assert!(
        p_full_vs_noisy > p_base_vs_noisy,
        "full reconstruction ({p_full_vs_noisy:.2} dB) does not track the noisy input better \
         than the base layer ({p_base_vs_noisy:.2} dB)"
    );
    println!(
        "ACCEPTANCE 5 PASS - noisy {p_noisy:.2} dB, denoised {p_base:.2} dB (+{:.2}); \
         full-vs-noisy {p_full_vs_noisy:.2} > base-vs-noisy {p_base_vs_noisy:.2}; trained in {:.0}s",
        p_base - p_noisy, model.train_secs
    );
}

/// Criterion 6: across the lambda ladder, rate increases strictly with
/// lambda and denoised quality does not decrease (one adjacent inversion
/// tolerated).
#[test]
fn acceptance_06_lambda_ladder_monotonicity() {
    let pairs = held_out_pairs();
    let mut rows = Vec::new();
    for idx in 0..LAMBDAS.len() {
        let model = trained(idx);
        let (mut bpp_sum, mut psnr_sum) = (0.0, 0.0);
        for (clean, noisy) in pairs.iter() {
            let (padded, orig) = pad_to_64(noisy);
            let (bs, _) =
                encode_image(&model.params, &model.cfg, model.model_id, &padded, orig).unwrap();
            let base = decode_base(&model.params, &model.cfg, model.model_id, &bs).unwrap();
            bpp_sum += bpp_accounting(&bs).unwrap().full_bpp;
            psnr_sum += psnr(&base, clean).unwrap();
        }
        rows.push((model.lambda, bpp_sum / pairs.len() as f64, psnr_sum / pairs.len() as f64));
    }
    for w in rows.windows(2) {
        assert!(
            w[1].1 > w[0].1,
            "full_bpp not strictly increasing: lambda {} -> {:.4} bpp, lambda {} -> {:.4} bpp",
            w[0].0, w[0].1, w[1].0, w[1].1
        );
    }
    let psnr_inversions =
        rows.windows(2).filter(|w| w[1].2 < w[0].2).count();
    assert!(
        psnr_inversions <= 1,
        "{psnr_inversions} PSNR inversions across the ladder: {rows:?}"
    );
    println!("ACCEPTANCE 6 PASS - lambda ladder: {rows:?} ({psnr_inversions} PSNR inversion(s))");
}

/// Criterion 7: synthesized noise statistics on constant-128 images.
#[test]
fn acceptance_07_noise_statistics() {
    let clean = ImageBuffer::constant(256, 256, 128.0 / 255.0);
    // Numerical integration of the clipped-quantized output std at level v.
    let oracle_std = |sigma: f64| {
        let phi = |x: f64| 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2);
        let v = 128.0;
        let (mut m1, mut m2) = (0.0f64, 0.0f64);
        for k in 0..=255u32 {
            let k = k as f64;
            let lo = if k == 0.0 { 0.0 } else { phi((k - 0.5 - v) / sigma) };
            let hi = if k == 255.0 { 1.0 } else { phi((k + 0.5 - v) / sigma) };
            let p = (hi - lo).max(0.0);
            m1 += (k - v) * p;
            m2 += (k - v) * (k - v) * p;
        }
        libm::sqrt(m2 - m1 * m1)
    };
    let mut summary = Vec::new();
    for sigma in [15.0, 25.0, 50.0] {
        let noisy = synth_awgn(&clean, sigma, 700 + sigma as u64).unwrap();
        let measured = estimate_sigma(&noisy, &clean).unwrap().sigma;
        let target = if sigma < 50.0 { sigma } else { oracle_std(sigma) };
        assert!(
            (measured - target).abs() <= 0.02 * target,
            "sigma {sigma}: measured {measured:.3} vs target {target:.3}"
        );
        summary.push(format!("sigma {sigma}: {measured:.2} vs {target:.2}"));
    }
    println!("ACCEPTANCE 7 PASS - {}", summary.join("; "));
}

/// Criterion 8: the BD-rate tool against closed-form and numerical oracles.
#[test]
fn acceptance_08_bd_rate_tool() {
    let mk = |pts: &[(f64, f64)]| {
        RDCurve::new(
            pts.iter()
                .map(|&(bpp, p)| RDPoint { bpp, psnr: p, task: Task::Denoise, model_id: 0, lambda: None })
                .collect(),
        )
        .unwrap()
    };
    let a_pts = [(0.25, 29.5), (0.5, 31.8), (1.0, 33.9), (2.0, 36.2)];
    let a = mk(&a_pts);
    let self_bd = bd_rate(&a, &a).unwrap().delta_rate_percent;
    assert!(self_bd.abs() < 0.005, "bd(A,A) = {self_bd}");

    let doubled = mk(&a_pts.map(|(bpp, p)| (2.0 * bpp, p)));
    let d = bd_rate(&a, &doubled).unwrap().delta_rate_percent;
    assert!((d - 100.0).abs() <= 0.1, "doubled-rate curve gave {d:.3}%");

    // Dense-trapezoid oracle over Lagrange interpolants of 4-point curves.
    let t_pts = [(0.21, 29.9), (0.42, 32.1), (0.86, 34.4), (1.7, 36.0)];
    let t = mk(&t_pts);
    let got = bd_rate(&a, &t).unwrap().delta_rate_percent;
    let lagrange = |pts: &[(f64, f64)], x: f64| -> f64 {
        let mut acc = 0.0;
        for i in 0..4 {
            let (xi, yi) = (pts[i].1, libm::log10(pts[i].0));
            let mut term = yi;
            for j in 0..4 {
                if i != j {
                    term *= (x - pts[j].1) / (xi - pts[j].1);
                }
            }
            acc += term;
        }
        acc
    };
    let lo = a_pts[0].1.max(t_pts[0].1);
    let hi = a_pts[3].1.min(t_pts[3].1);
    let n = 40000;
    let mut acc = 0.0;
    for k in 0..=n {
        let x = lo + (hi - lo) * k as f64 / n as f64;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        acc += w * (lagrange(&t_pts, x) - lagrange(&a_pts, x));
    }
    let oracle = (libm::pow(10.0, acc / n as f64) - 1.0) * 100.0;
    assert!(
        (got - oracle).abs() <= 0.2,
        "bd {got:.4}% vs numerical oracle {oracle:.4}%"
    );
    println!(
        "ACCEPTANCE 8 PASS - bd(A,A)={self_bd:.4}%, doubled {d:.2}%, oracle delta {:.4}%",
        (got - oracle).abs()
    );
}

/// Criterion 9: padding round trip through the real codec for random dims
/// in the low-resolution regime, plus the 500 -> 512 example.
#[test]
fn acceptance_09_padding() {
    assert_eq!(
        (next_multiple_of_64(500), next_multiple_of_64(500)),
        (512, 512),
        "pad(500,500)"
    );
    let cfg = ModelConfig::micro();
    let params = init_params::<f32>(&cfg, 91);
    let model_id = 9;
    let mut rng = derive_rng(9, 0xACCE, 9);
    for k in 0..200u64 {
        let h = rng.random_range(321..=481);
        let w = rng.random_range(321..=481);
        let clean = generate_image(h, w, 900_000 + k);
        let (padded, orig) = pad_to_64(&clean);
        let (bs, _) = encode_image(&params, &cfg, model_id, &padded, orig).unwrap();
        let base = decode_base(&params, &cfg, model_id, &bs).unwrap();
        assert_eq!((base.height(), base.width()), (h, w), "case {k}: {h}x{w}");
        if k % 20 == 0 {
            let full = decode_full(&params, &cfg, model_id, &bs).unwrap();
            assert_eq!((full.height(), full.width()), (h, w), "case {k} full: {h}x{w}");
        }
    }
    println!("ACCEPTANCE 9 PASS - 200 random dims in [321,481]^2 decode to exact original dims");
}

/// Criterion 10: the frozen golden bitstream parses to exact field values
/// and any header magic/version mutation is rejected.
#[test]
fn acceptance_10_golden_bitstream() {
    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden.jicd");
    let bytes = std::fs::read(&path).expect("golden fixture present");
    let bs = ScalableBitstream::parse(&bytes).unwrap();
    assert_eq!(bs.header.orig_h, 80);
    assert_eq!(bs.header.orig_w, 56);
    assert_eq!(bs.header.total_channels, 8);
    assert_eq!(bs.header.base_channels, 6);
    assert_eq!(bs.header.model_id, 0x621a5280b1da0d18);
    assert_eq!(bs.substream_lengths(), (9, 31, 15));
    for pos in 0..6 {
        for delta in [1u8, 0x80] {
            let mut bad = bytes.clone();
            bad[pos] = bad[pos].wrapping_add(delta);
            let err = ScalableBitstream::parse(&bad).unwrap_err();
            assert!(
                matches!(err, ContainerError::BadMagic | ContainerError::UnsupportedVersion(_)),
                "byte {pos} delta {delta} accepted"
            );
        }
    }
    println!("ACCEPTANCE 10 PASS - golden bitstream fields exact; header mutations rejected");
}

/// Companion check to criterion 5: after training, enhancement channels are
/// live inputs of the full decoder.
#[test]
fn trained_enhancement_channels_affect_full_decode() {
    let model = trained(1);
    let (clean, noisy) = &held_out_pairs()[0];
    let _ = clean;
    let (padded, _) = pad_to_64(noisy);
    let y = analysis_image(&model.params, &model.cfg, &padded).unwrap();
    let parts = split_latent(&y, model.cfg.base_channels).unwrap();
    let reference = synthesize_full(&model.params, &model.cfg, &merge_latent(&parts)).unwrap();

    let mut perturbed = parts.clone();
    let (ch, n, m) = perturbed.enhancement.0.dim();
    for r in 0..n {
        for c in 0..m {
            perturbed.enhancement.0[[ch / 2, r, c]] += 3.0;
        }
    }
    let altered = synthesize_full(
        &model.params,
        &model.cfg,
        &merge_latent(&LatentPartition {
            base: parts.base.clone(),
            enhancement: perturbed.enhancement,
        }),
    )
    .unwrap();
    let diff = jicd_core::metrics::mse_255(&reference, &altered).unwrap();
    assert!(diff > 1.0, "perturbing an enhancement channel barely moved the output (mse {diff})");
    println!("trained enhancement sensitivity: mse_255 {diff:.2} after +3.0 on one channel");
}
