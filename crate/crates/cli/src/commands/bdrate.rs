//! `jicd bdrate`: Bjontegaard delta-rate between two curve files.

use anyhow::Result;
use std::path::PathBuf;

use jicd_core::rd::{bd_rate, Task};

use crate::curves::{curve_for_task, read_curve_file};

use super::require_file;

#[derive(Debug, clap::Args)]
pub struct BdrateArgs {
    /// Curve file of the anchor (reference) codec.
    #[arg(long)]
    pub anchor: PathBuf,
    /// Curve file of the codec under test.
    #[arg(long)]
    pub test: PathBuf,
    /// Task to compare: denoise or noisy_recon.
    #[arg(long, default_value = "denoise")]
    pub task: String,
    /// Optional output path for the machine-readable report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &BdrateArgs) -> Result<()> {
    require_file(&args.anchor)?;
    require_file(&args.test)?;
    let task = match args.task.as_str() {
        "denoise" => Task::Denoise,
        "noisy_recon" => Task::NoisyRecon,
        other => anyhow::bail!("unknown task {other:?}"),
    };
    let anchor_records = read_curve_file(&args.anchor)?;
    let test_records = read_curve_file(&args.test)?;
    let anchor = curve_for_task(&anchor_records, task)?;
    let test = curve_for_task(&test_records, task)?;
    let report = bd_rate(&anchor, &test)?;

    println!("task      anchor                     test                       overlap dB       BD-rate");
    println!(
        "{:<9} {:<26} {:<26} {:>6.2}..{:<6.2} {:>+9.1}%",
        task.as_str(),
        trim_path(&args.anchor),
        trim_path(&args.test),
        report.overlap_psnr.0,
        report.overlap_psnr.1,
        report.delta_rate_percent,
    );
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let record = serde_json::json!({
            "task": task.as_str(),
            "anchor": args.anchor.display().to_string(),
            "test": args.test.display().to_string(),
            "overlap_psnr": [report.overlap_psnr.0, report.overlap_psnr.1],
            "bd_rate_percent": report.delta_rate_percent,
        });
        std::fs::write(out, format!("{}\n", serde_json::to_string(&record)?))?;
    }
    Ok(())
}

fn trim_path(p: &std::path::Path) -> String {
    let s = p.display().to_string();
    if s.len() <= 26 {
        s
    } else {
        format!("...{}", &s[s.len() - 23..])
    }
}
