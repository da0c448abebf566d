use clap::Parser;

use jicd_cli::commands::{self, bdrate, decode, encode, evalcmd, noisecmd, plot, traincmd};

/// Scalable joint image compression and denoising codec.
#[derive(Parser)]
#[command(name = "jicd", version, about)]
enum Cli {
    /// Materialize a noisy corpus from a clean corpus.
    Noise(noisecmd::NoiseArgs),
    /// Train a model with the rate-distortion loss.
    Train(traincmd::TrainArgs),
    /// Encode an image into a scalable bitstream.
    Encode(encode::EncodeArgs),
    /// Decode the base (denoised) or full (noisy) image.
    Decode(decode::DecodeArgs),
    /// Evaluate checkpoints into rate-PSNR curves.
    Eval(evalcmd::EvalArgs),
    /// Bjontegaard delta-rate between two curve files.
    Bdrate(bdrate::BdrateArgs),
    /// Render rate-PSNR figures from curve files.
    Plot(plot::PlotArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli {
        Cli::Noise(a) => noisecmd::run(a),
        Cli::Train(a) => traincmd::run(a),
        Cli::Encode(a) => encode::run(a),
        Cli::Decode(a) => decode::run(a),
        Cli::Eval(a) => evalcmd::run(a),
        Cli::Bdrate(a) => bdrate::run(a),
        Cli::Plot(a) => plot::run(a),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        let missing_file = err.chain().any(|c| c.downcast_ref::<commands::MissingFile>().is_some());
        std::process::exit(if missing_file { 2 } else { 1 });
    }
}
