//! End-to-end tests of the `jicd` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jicd_cli::pngio::{load_png, save_png};
use jicd_core::checkpoint::Checkpoint;
use jicd_core::model::{init_params, ModelConfig};
use jicd_core::synthetic::generate_image;

fn jicd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jicd"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn jicd");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn micro_overrides() -> Vec<String> {
    [
        "model.profile=custom",
        "model.total_channels=8",
        "model.base_channels=6",
        "model.width=8",
        "model.hyper_channels=8",
        "train.crop=64",
        "train.batch=2",
        "train.epochs=1",
        "data.synthetic_count=4",
        "data.synthetic_height=64",
        "data.synthetic_width=64",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn with_overrides<'a>(cmd: &'a mut Command, overrides: &[String]) -> &'a mut Command {
    for ov in overrides {
        cmd.arg("--override").arg(ov);
    }
    cmd
}

fn write_micro_checkpoint(path: &Path, seed: u64) -> Checkpoint<f32> {
    let cfg = ModelConfig::micro();
    let ck = Checkpoint::new(cfg.clone(), init_params::<f32>(&cfg, seed));
    std::fs::write(path, ck.serialize()).unwrap();
    ck
}

fn first_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.starts_with('{')).expect("json line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn encode_then_base_decode_restores_exact_dims() {
    let dir = tempfile::tempdir().unwrap();
    let ck_path = dir.path().join("model.jicdckpt");
    write_micro_checkpoint(&ck_path, 5);
    let input = dir.path().join("input.png");
    save_png(&input, &generate_image(80, 56, 17)).unwrap();
    let bitstream = dir.path().join("out.jicd");
    let out = run_ok(jicd()
        .arg("encode")
        .arg("--input").arg(&input)
        .arg("--checkpoint").arg(&ck_path)
        .arg("--out").arg(&bitstream));
    let summary = first_json(&out);
    // Actual bits within the overhead bound of the estimate, per substream.
    for key in ["side", "base", "enh"] {
        let est = summary["estimated_bits"][key].as_f64().unwrap();
        let act = summary["actual_bits"][key].as_f64().unwrap();
        let bound = est + 8.0 * (32.0 + 0.01 * est / 8.0);
        assert!(act <= bound, "{key}: actual {act} over bound {bound}");
    }
    assert_eq!(summary["orig_height"], 80);
    assert_eq!(summary["orig_width"], 56);

    let decoded = dir.path().join("denoised.png");
    run_ok(jicd()
        .arg("decode")
        .arg("--input").arg(&bitstream)
        .arg("--checkpoint").arg(&ck_path)
        .arg("--layer").arg("base")
        .arg("--out").arg(&decoded));
    let img = load_png(&decoded).unwrap();
    assert_eq!((img.height(), img.width()), (80, 56));
}

#[test]
fn missing_checkpoint_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input.png");
    save_png(&input, &generate_image(64, 64, 3)).unwrap();
    let missing = dir.path().join("nope.jicdckpt");
    let out = jicd()
        .arg("encode")
        .arg("--input").arg(&input)
        .arg("--checkpoint").arg(&missing)
        .arg("--out").arg(dir.path().join("x.jicd"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nope.jicdckpt"), "stderr must name the path: {stderr}");
}

#[test]
fn base_decode_ignores_corrupted_enhancement_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let ck_path = dir.path().join("model.jicdckpt");
    write_micro_checkpoint(&ck_path, 7);
    let input = dir.path().join("input.png");
    save_png(&input, &generate_image(64, 64, 23)).unwrap();
    let bitstream = dir.path().join("out.jicd");
    run_ok(jicd()
        .arg("encode")
        .arg("--input").arg(&input)
        .arg("--checkpoint").arg(&ck_path)
        .arg("--out").arg(&bitstream));

    let reference = dir.path().join("ref.png");
    run_ok(jicd()
        .arg("decode")
        .arg("--input").arg(&bitstream)
        .arg("--checkpoint").arg(&ck_path)
        .arg("--layer").arg("base")
        .arg("--out").arg(&reference));

    // Corrupt every enhancement byte in the file.
    let mut bytes = std::fs::read(&bitstream).unwrap();
    let bs = jicd_core::container::ScalableBitstream::parse(&bytes).unwrap();
    let enh_len = bs.enhancement.len();
    assert!(enh_len > 0);
    let n = bytes.len();
    for b in bytes[n - enh_len..].iter_mut() {
        *b ^= 0xA5;
    }
    let corrupted = dir.path().join("corrupted.jicd");
    std::fs::write(&corrupted, &bytes).unwrap();

    let decoded = dir.path().join("from_corrupted.png");
    run_ok(jicd()
        .arg("decode")
        .arg("--input").arg(&corrupted)
        .arg("--checkpoint").arg(&ck_path)
        .arg("--layer").arg("base")
        .arg("--out").arg(&decoded));
    assert_eq!(load_png(&decoded).unwrap(), load_png(&reference).unwrap());

    // The full decode must fail against the mangled enhancement data or at
    // least differ; and with the substream stripped it must name it.
    bytes.truncate(n - enh_len);
    // patch the enhancement length prefix to zero
    let prefix_at = n - enh_len - 4;
    bytes[prefix_at..prefix_at + 4].copy_from_slice(&0u32.to_le_bytes());
    let stripped = dir.path().join("stripped.jicd");
    std::fs::write(&stripped, &bytes).unwrap();
    let out = jicd()
        .arg("decode")
        .arg("--input").arg(&stripped)
        .arg("--checkpoint").arg(&ck_path)
        .arg("--layer").arg("full")
        .arg("--out").arg(dir.path().join("never.png"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("enhancement"), "error must name the substream: {stderr}");
}

#[test]
fn future_container_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ck_path = dir.path().join("model.jicdckpt");
    write_micro_checkpoint(&ck_path, 9);
    let input = dir.path().join("input.png");
    save_png(&input, &generate_image(64, 64, 29)).unwrap();
    let bitstream = dir.path().join("out.jicd");
    run_ok(jicd()
        .arg("encode")
        .arg("--input").arg(&input)
        .arg("--checkpoint").arg(&ck_path)
        .arg("--out").arg(&bitstream));
    let mut bytes = std::fs::read(&bitstream).unwrap();
    bytes[4] = 2; // version u16 LE
    std::fs::write(&bitstream, &bytes).unwrap();
    let out = jicd()
        .arg("decode")
        .arg("--input").arg(&bitstream)
        .arg("--checkpoint").arg(&ck_path)
        .arg("--layer").arg("base")
        .arg("--out").arg(dir.path().join("never.png"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unsupported version"), "{stderr}");
}

#[test]
fn eval_writes_two_points_per_task_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck_a = dir.path().join("a.jicdckpt");
    let ck_b = dir.path().join("b.jicdckpt");
    write_micro_checkpoint(&ck_a, 11);
    write_micro_checkpoint(&ck_b, 12);
    let run_dir = dir.path().join("run");
    let mut overrides = micro_overrides();
    overrides.push("data.synthetic_count=3".into());
    run_ok(with_overrides(
        jicd()
            .arg("eval")
            .arg("--out").arg(&run_dir)
            .arg("--checkpoint").arg(&ck_a)
            .arg("--checkpoint").arg(&ck_b)
            .arg("--seed").arg("4"),
        &overrides,
    ));
    let curves = jicd_cli::curves::read_curve_file(&run_dir.join("artifacts/curves.jsonl")).unwrap();
    assert_eq!(curves.len(), 4);
    assert_eq!(curves.iter().filter(|r| r.task == "denoise").count(), 2);
    assert_eq!(curves.iter().filter(|r| r.task == "noisy_recon").count(), 2);
    assert!(run_dir.join("config.resolved.toml").exists());
    assert!(run_dir.join("logs/per_image.jsonl").exists());
}

#[test]
fn bdrate_prints_plus_hundred_for_doubled_rates() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |path: &PathBuf, scale: f64| {
        let records: Vec<jicd_cli::curves::CurveRecord> = [(0.2, 30.0), (0.4, 32.0), (0.8, 34.0), (1.6, 36.0)]
            .iter()
            .map(|&(bpp, psnr)| jicd_cli::curves::CurveRecord {
                dataset: "fixture".into(),
                task: "denoise".into(),
                model_id: 1,
                lambda: None,
                bpp: bpp * scale,
                psnr,
            })
            .collect();
        jicd_cli::curves::write_curve_file(path, &records).unwrap();
    };
    let anchor = dir.path().join("anchor.jsonl");
    let test = dir.path().join("test.jsonl");
    mk(&anchor, 1.0);
    mk(&test, 2.0);
    let out = run_ok(jicd()
        .arg("bdrate")
        .arg("--anchor").arg(&anchor)
        .arg("--test").arg(&test)
        .arg("--out").arg(dir.path().join("bd.json")));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("+100.0%"), "stdout: {stdout}");
    let record: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(dir.path().join("bd.json")).unwrap().trim())
            .unwrap();
    assert!((record["bd_rate_percent"].as_f64().unwrap() - 100.0).abs() < 0.1);
}

#[test]
fn train_one_epoch_writes_checkpoint_and_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut overrides = micro_overrides();
    overrides.push("train.epochs=2".into());

    // Straight 2-epoch run.
    let full_dir = dir.path().join("full");
    run_ok(with_overrides(
        jicd().arg("train").arg("--out").arg(&full_dir).arg("--seed").arg("6"),
        &overrides,
    ));
    let full_log = std::fs::read_to_string(full_dir.join("logs/train.jsonl")).unwrap();
    let ck_path = full_dir.join("artifacts/latest.jicdckpt");
    assert!(ck_path.exists());

    // 1-epoch run, then resume for the second epoch.
    let mut one = micro_overrides();
    one.push("train.epochs=1".into());
    let part_dir = dir.path().join("part");
    run_ok(with_overrides(
        jicd().arg("train").arg("--out").arg(&part_dir).arg("--seed").arg("6"),
        &one,
    ));
    let resume_dir = dir.path().join("resumed");
    run_ok(with_overrides(
        jicd()
            .arg("train")
            .arg("--out").arg(&resume_dir)
            .arg("--seed").arg("6")
            .arg("--resume").arg(part_dir.join("artifacts/latest.jicdckpt")),
        &overrides,
    ));
    let resumed_log = std::fs::read_to_string(resume_dir.join("logs/train.jsonl")).unwrap();

    // The resumed second epoch reproduces the uninterrupted trajectory.
    let full_lines: Vec<&str> = full_log.lines().collect();
    let resumed_lines: Vec<&str> = resumed_log.lines().collect();
    assert_eq!(full_lines.len(), 4, "2 epochs x 2 steps: {full_log}");
    assert_eq!(resumed_lines.len(), 2);
    assert_eq!(&full_lines[2..], &resumed_lines[..]);

    // And the final checkpoints carry identical parameters.
    let a = std::fs::read(&ck_path).unwrap();
    let b = std::fs::read(resume_dir.join("artifacts/latest.jicdckpt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn noise_command_materializes_a_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("noise-run");
    let mut overrides = micro_overrides();
    overrides.push("noise.sigma=25".into());
    run_ok(with_overrides(
        jicd().arg("noise").arg("--out").arg(&run_dir).arg("--seed").arg("8"),
        &overrides,
    ));
    let noisy: Vec<_> = std::fs::read_dir(run_dir.join("artifacts/noisy")).unwrap().collect();
    assert_eq!(noisy.len(), 4);
    let manifest = std::fs::read_to_string(run_dir.join("logs/noise_manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    // Estimated sigma of a 64x64 corpus sits near the requested strength.
    for line in manifest.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let est = v["estimated_sigma"].as_f64().unwrap();
        assert!((20.0..30.0).contains(&est), "estimate {est}");
    }
}

#[test]
fn same_seed_gives_byte_identical_primary_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ck_path = dir.path().join("model.jicdckpt");
    write_micro_checkpoint(&ck_path, 13);
    let input = dir.path().join("input.png");
    save_png(&input, &generate_image(64, 64, 31)).unwrap();

    let encode_to = |name: &str| {
        let path = dir.path().join(name);
        run_ok(jicd()
            .arg("encode")
            .arg("--input").arg(&input)
            .arg("--checkpoint").arg(&ck_path)
            .arg("--out").arg(&path));
        std::fs::read(path).unwrap()
    };
    assert_eq!(encode_to("a.jicd"), encode_to("b.jicd"));

    let eval_to = |name: &str| {
        let run_dir = dir.path().join(name);
        run_ok(with_overrides(
            jicd()
                .arg("eval")
                .arg("--out").arg(&run_dir)
                .arg("--checkpoint").arg(&ck_path)
                .arg("--seed").arg("21"),
            &micro_overrides(),
        ));
        std::fs::read(run_dir.join("artifacts/curves.jsonl")).unwrap()
    };
    assert_eq!(eval_to("eval-a"), eval_to("eval-b"));
}

#[test]
fn plot_emits_figures_for_both_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let curves = dir.path().join("curves.jsonl");
    let mut records = Vec::new();
    for (k, bpp) in [0.2f64, 0.4, 0.8].iter().enumerate() {
        for task in ["denoise", "noisy_recon"] {
            records.push(jicd_cli::curves::CurveRecord {
                dataset: "synthetic".into(),
                task: task.into(),
                model_id: k as u64,
                lambda: None,
                bpp: *bpp,
                psnr: 30.0 + k as f64,
            });
        }
    }
    jicd_cli::curves::write_curve_file(&curves, &records).unwrap();
    let out_dir = dir.path().join("figs");
    run_ok(jicd().arg("plot").arg("--curves").arg(&curves).arg("--out").arg(&out_dir));
    assert!(out_dir.join("rate_psnr_denoise.svg").exists());
    assert!(out_dir.join("rate_psnr_noisy_recon.svg").exists());
}
