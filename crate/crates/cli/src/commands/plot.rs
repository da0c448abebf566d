//! `jicd plot`: rate-PSNR figures from curve files.

use anyhow::Result;
use std::path::PathBuf;

use crate::curves::read_curve_file;
use crate::plotsvg::render_rate_psnr_svg;

use super::require_file;

#[derive(Debug, clap::Args)]
pub struct PlotArgs {
    /// Curve files to overlay.
    #[arg(long = "curves", required = true)]
    pub curves: Vec<PathBuf>,
    /// Output directory for the figures.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &PlotArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.curves {
        require_file(path)?;
        records.extend(read_curve_file(path)?);
    }
    std::fs::create_dir_all(&args.out)?;
    let mut written = Vec::new();
    for (task, title) in
        [("denoise", "Denoising rate-PSNR"), ("noisy_recon", "Noisy input reconstruction rate-PSNR")]
    {
        if !records.iter().any(|r| r.task == task) {
            continue;
        }
        let svg = render_rate_psnr_svg(&records, task, title);
        let path = args.out.join(format!("rate_psnr_{task}.svg"));
        std::fs::write(&path, svg)?;
        written.push(path.display().to_string());
    }
    println!("{}", serde_json::to_string(&serde_json::json!({ "figures": written }))?);
    Ok(())
}
