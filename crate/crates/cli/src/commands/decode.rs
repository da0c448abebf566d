//! `jicd decode`: bitstream to image, base (denoised) or full (noisy
//! reconstruction) layer.

use anyhow::Result;
use serde::Serialize;
use std::path::PathBuf;

use jicd_core::pipeline::{decode_base_bytes, decode_full_bytes};

use super::{load_checkpoint, require_file};
use crate::pngio::save_png;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DecodeLayer {
    /// Denoised image from side + base substreams; enhancement bytes are
    /// never read.
    Base,
    /// Noisy-input reconstruction from all substreams.
    Full,
}

#[derive(Debug, clap::Args)]
pub struct DecodeArgs {
    /// Input bitstream file.
    #[arg(long)]
    pub input: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output PNG path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub layer: DecodeLayer,
}

#[derive(Serialize)]
struct DecodeSummary {
    input: String,
    checkpoint: String,
    out: String,
    layer: &'static str,
    height: usize,
    width: usize,
}

pub fn run(args: &DecodeArgs) -> Result<()> {
    require_file(&args.input)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let model_id = ck.model_id();
    let bytes = std::fs::read(&args.input)?;
    let (img, layer) = match args.layer {
        DecodeLayer::Base => (decode_base_bytes(&ck.params, &ck.config, model_id, &bytes)?, "base"),
        DecodeLayer::Full => (decode_full_bytes(&ck.params, &ck.config, model_id, &bytes)?, "full"),
    };
    save_png(&args.out, &img)?;
    let summary = DecodeSummary {
        input: args.input.display().to_string(),
        checkpoint: args.checkpoint.display().to_string(),
        out: args.out.display().to_string(),
        layer,
        height: img.height(),
        width: img.width(),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
