//! `jicd encode`: image to scalable bitstream.

use anyhow::Result;
use serde::Serialize;
use std::path::PathBuf;

use jicd_core::pad::pad_to_64;
use jicd_core::pipeline::encode_image;
use jicd_core::rd::bpp_accounting;

use super::{load_checkpoint, require_file};
use crate::pngio::load_png;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EncodeLayer {
    /// Write all three substreams.
    Both,
    /// Write the side and base substreams only (enhancement left empty).
    Base,
}

#[derive(Debug, clap::Args)]
pub struct EncodeArgs {
    /// Input image (8-bit RGB PNG).
    #[arg(long)]
    pub input: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output bitstream path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub layer: EncodeLayer,
}

#[derive(Serialize)]
struct SubstreamBits {
    side: f64,
    base: f64,
    enh: f64,
}

#[derive(Serialize)]
struct EncodeSummary {
    input: String,
    checkpoint: String,
    out: String,
    model_id: String,
    orig_height: usize,
    orig_width: usize,
    base_bpp: f64,
    full_bpp: f64,
    estimated_bits: SubstreamBits,
    actual_bits: SubstreamBits,
}

pub fn run(args: &EncodeArgs) -> Result<()> {
    require_file(&args.input)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let model_id = ck.model_id();
    let img = load_png(&args.input)?;
    let (padded, orig) = pad_to_64(&img);
    let (mut bs, report) = encode_image(&ck.params, &ck.config, model_id, &padded, orig)?;
    if args.layer == EncodeLayer::Base {
        bs.enhancement.clear();
    }
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.out, bs.serialize())?;
    let bpp = bpp_accounting(&bs)?;
    let summary = EncodeSummary {
        input: args.input.display().to_string(),
        checkpoint: args.checkpoint.display().to_string(),
        out: args.out.display().to_string(),
        model_id: format!("{model_id:016x}"),
        orig_height: orig.height,
        orig_width: orig.width,
        base_bpp: bpp.base_bpp,
        full_bpp: bpp.full_bpp,
        estimated_bits: SubstreamBits {
            side: report.estimated_bits.side,
            base: report.estimated_bits.base,
            enh: report.estimated_bits.enh,
        },
        actual_bits: SubstreamBits {
            side: report.actual_bits.side,
            base: report.actual_bits.base,
            enh: if args.layer == EncodeLayer::Base { 0.0 } else { report.actual_bits.enh },
        },
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
