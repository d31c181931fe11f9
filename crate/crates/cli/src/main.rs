//! Command-line front end: noise synthesis, denoising, estimation,
//! segmentation, metrics, the NLM baseline, phantom generation and the
//! benchmark driver.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use whiteprior::bench::{run_benchmark, run_whiteprior, DenoiseJobConfig, ExperimentConfig};
use whiteprior::metrics::{psnr, ssim, SsimParams};
use whiteprior::nlm::{nlm_denoise, NlmParams};
use whiteprior::noise::{add_awgn, estimate_sigma, generate_phantom, NoiseModel, PhantomSpec};
use whiteprior::segment::{felzenszwalb_segment, piecewise_target, SegmentationParams};
use whiteprior::{load_pgm, save_pgm};

#[derive(Parser)]
#[command(
    name = "whiteprior",
    about = "Blind single-image denoising under noise-whiteness and piecewise-constancy priors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contaminate a clean PGM with additive white Gaussian noise.
    /// Values clamp to [0, 1] at export; the in-memory pipeline never clips.
    Synthesize(SynthesizeArgs),
    /// Decompose a noisy PGM into signal and noise estimates.
    Denoise(DenoiseArgs),
    /// Print the blind noise-level estimate on the 8-bit scale.
    EstimateNoise(EstimateNoiseArgs),
    /// Segment an image and emit the piecewise-constant target.
    Segment(SegmentArgs),
    /// Print PSNR and SSIM between two PGM images.
    Metrics(MetricsArgs),
    /// Denoise with the non-local means baseline.
    Nlm(NlmArgs),
    /// Generate a piecewise-constant Voronoi phantom.
    Phantom(PhantomArgs),
    /// Run a full benchmark grid and write CSV/JSON reports.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Clean input image (PGM).
    #[arg(long = "in")]
    input: PathBuf,
    /// Noise level on the 8-bit scale (e.g. 25 means 25/255).
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Noisy input image (PGM).
    #[arg(long = "in")]
    input: PathBuf,
    /// JSON with optional "loss", "optimizer" and "segmentation" sections.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_signal: PathBuf,
    /// Noise estimate, contrast-stretched for visualization.
    #[arg(long)]
    out_noise: PathBuf,
    /// Optional per-iteration loss trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateNoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Scale of the adaptive merge threshold tau(C) = k/|C|.
    #[arg(long, default_value_t = 1.2)]
    k: f64,
    /// Minimum cluster size in pixels.
    #[arg(long, default_value_t = 20)]
    min_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args)]
struct NlmArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Noise level on the 8-bit scale; blind-estimated when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PhantomArgs {
    /// JSON PhantomSpec: width, height, region_count, intensity_levels, seed.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON ExperimentConfig: corpus, sigmas, methods, seeds.
    #[arg(long)]
    config: PathBuf,
    /// Report directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synthesize(args) => {
            let clean = load_pgm(&args.input)?;
            let model = NoiseModel {
                sigma: args.sigma / 255.0,
                seed: args.seed,
            };
            let noisy = add_awgn(&clean, &model)?;
            save_pgm(&noisy.clamped01(), &args.out, 255)?;
        }
        Command::Denoise(args) => {
            let noisy = load_pgm(&args.input)?;
            let job: DenoiseJobConfig = read_json(&args.config)?;
            let (state, trace) = run_whiteprior(&noisy, &job)?;
            save_pgm(&state.signal.clamped01(), &args.out_signal, 255)?;
            save_pgm(&state.noise.contrast_stretch(), &args.out_noise, 255)?;
            if let Some(path) = args.trace {
                let file = fs::File::create(&path)
                    .with_context(|| format!("cannot create {}", path.display()))?;
                trace.write_csv(std::io::BufWriter::new(file))?;
            }
        }
        Command::EstimateNoise(args) => {
            let noisy = load_pgm(&args.input)?;
            let sigma = estimate_sigma(&noisy)?;
            println!("{:.4}", sigma * 255.0);
        }
        Command::Segment(args) => {
            let image = load_pgm(&args.input)?;
            let params = SegmentationParams {
                k_threshold: args.k,
                min_size: args.min_size,
                ..SegmentationParams::default()
            };
            let labels = felzenszwalb_segment(&image, &params);
            let target = piecewise_target(&image, &labels)?;
            save_pgm(&target.clamped01(), &args.out, 255)?;
            println!("clusters: {}", labels.cluster_count());
        }
        Command::Metrics(args) => {
            let a = load_pgm(&args.a)?;
            let b = load_pgm(&args.b)?;
            let p = psnr(&a, &b, 1.0)?;
            if p.is_infinite() {
                println!("PSNR: inf dB");
            } else {
                println!("PSNR: {p:.4} dB");
            }
            let s = ssim(&a, &b, &SsimParams::default())?;
            println!("SSIM: {s:.6}");
        }
        Command::Nlm(args) => {
            let noisy = load_pgm(&args.input)?;
            let sigma = match args.sigma {
                Some(s) => s / 255.0,
                None => estimate_sigma(&noisy)?,
            };
            let denoised = nlm_denoise(&noisy, &NlmParams::for_sigma(sigma))?;
            save_pgm(&denoised.clamped01(), &args.out, 255)?;
        }
        Command::Phantom(args) => {
            let spec: PhantomSpec = read_json(&args.spec)?;
            let phantom = generate_phantom(&spec)?;
            save_pgm(&phantom, &args.out, 255)?;
        }
        Command::Benchmark(args) => {
            let config: ExperimentConfig = read_json(&args.config)?;
            let out_dir = match args.out.or_else(|| config.output_dir.clone()) {
                Some(dir) => dir,
                None => bail!("no output directory: pass --out or set output_dir in the config"),
            };
            let report = run_benchmark(&config, &out_dir)?;
            println!("wrote {}", out_dir.join("report.csv").display());
            println!("wrote {}", out_dir.join("report.json").display());
            for agg in &report.aggregates {
                println!(
                    "sigma {:>5.1}  {:<16} n={:<3} PSNR {:>7.3} +/- {:.3}  SSIM {:.4} +/- {:.4}",
                    agg.sigma,
                    agg.method,
                    agg.count,
                    agg.psnr_mean,
                    agg.psnr_std,
                    agg.ssim_mean,
                    agg.ssim_std
                );
            }
            for tt in &report.ttests {
                match &tt.failure {
                    None => println!(
                        "sigma {:>5.1}  t-test {} vs {}: t={:.3} df={} p={:.3e}",
                        tt.sigma,
                        tt.method_a,
                        tt.method_b,
                        tt.t_statistic,
                        tt.degrees_of_freedom,
                        tt.p_value
                    ),
                    Some(message) => println!(
                        "sigma {:>5.1}  t-test {} vs {}: {}",
                        tt.sigma, tt.method_a, tt.method_b, message
                    ),
                }
            }
        }
    }
    Ok(())
}
