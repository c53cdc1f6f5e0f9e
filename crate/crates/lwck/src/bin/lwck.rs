//! Command-line surface: compress a model manifest, report layerwise
//! speedups from a plan, run calibration analytics over a predictions file,
//! and verify a plan's factorized layers against direct convolution.
//!
//! Exit codes: 0 success, 1 hard error, 2 partial success (at least one
//! layer skipped for infeasibility).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lwck::calibration::{
    apply_temperature, bin_stats, ece, fit_temperature, reliability_data, PredictionSet,
    TemperatureFitOptions,
};
use lwck::conv::{conv2d_forward, forward_sequence, FactorizedLayer};
use lwck::cpd::AlsOptions;
use lwck::io::{
    format_sci4, format_sig4, load_model, read_plan, read_predictions, write_plan, write_tensor,
};
use lwck::planner::{compress_model, CompressConfig, CompressionMethod, CompressionPlan};
use lwck::tensor::DenseTensor;

#[derive(Parser)]
#[command(
    name = "lwck",
    version,
    about = "Low-rank compression of convolutional layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress every layer of a manifest and emit a plan plus factorized
    /// weight files.
    Compress {
        /// Manifest JSON describing the layers and their weight files.
        manifest: PathBuf,
        /// Output directory for the plan and weight files.
        #[arg(long, default_value = "lwck-out")]
        out: PathBuf,
        /// EPC error budget, relative to each kernel's Frobenius norm.
        #[arg(long, default_value_t = 0.002)]
        epc_delta: f64,
        /// Acceptance threshold on the kernel relative reconstruction error.
        #[arg(long, default_value_t = 0.05)]
        rank_threshold: f64,
        /// ALS sweep budget per decomposition.
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        /// Ceiling on the rank-search window.
        #[arg(long)]
        max_rank: Option<usize>,
        /// Layer-name pattern to leave untouched; repeatable. "*" skips
        /// everything, a trailing "*" matches by prefix.
        #[arg(long)]
        skip: Vec<String>,
        /// Rewrite layers even when the factorized form has more parameters.
        #[arg(long)]
        force: bool,
        /// Seed for the factor initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reject unknown manifest fields instead of warning.
        #[arg(long)]
        strict: bool,
    },
    /// Print the layerwise GFLOP table and speedups of a plan.
    SpeedupReport {
        plan: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Expected calibration error, reliability-diagram CSV, and optional
    /// temperature fitting for a predictions file.
    Calibrate {
        /// CSV with header "p_hat,label[,logit]".
        predictions: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Fit a sigmoid temperature (requires the logit column) and report
        /// the post-scaling ECE.
        #[arg(long)]
        fit_temperature: bool,
        /// Where to write the per-bin reliability records.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drive random inputs through original and factorized layers and
    /// compare the outputs.
    Verify {
        manifest: PathBuf,
        plan: PathBuf,
        #[arg(long, default_value_t = 0)]
        input_seed: u64,
        /// Maximum tolerated per-layer max-abs output deviation.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        strict: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // Help and version requests.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Compress {
            manifest,
            out,
            epc_delta,
            rank_threshold,
            max_iters,
            max_rank,
            skip,
            force,
            seed,
            strict,
        } => compress_cmd(
            &manifest,
            &out,
            CompressConfig {
                epc_delta_rel: epc_delta,
                rank_threshold,
                als: AlsOptions {
                    max_iters,
                    seed,
                    ..AlsOptions::default()
                },
                skip,
                force,
                rank_cap: max_rank,
            },
            strict,
        ),
        Command::SpeedupReport { plan, strict } => speedup_report_cmd(&plan, strict),
        Command::Calibrate {
            predictions,
            bins,
            fit_temperature,
            out,
        } => calibrate_cmd(&predictions, bins, fit_temperature, out.as_deref()),
        Command::Verify {
            manifest,
            plan,
            input_seed,
            tol,
            strict,
        } => verify_cmd(&manifest, &plan, input_seed, tol, strict),
    }
}

/// Thread cap from LWCK_THREADS (0 or unset = automatic).
fn thread_pool() -> Option<rayon::ThreadPool> {
    let raw = std::env::var("LWCK_THREADS").ok()?;
    match raw.trim().parse::<usize>() {
        Ok(0) => None,
        Ok(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().ok(),
        Err(_) => {
            eprintln!("warning: ignoring unparsable LWCK_THREADS value '{raw}'");
            None
        }
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn compress_cmd(
    manifest_path: &Path,
    out_dir: &Path,
    cfg: CompressConfig,
    strict: bool,
) -> Result<u8> {
    let manifest = load_model(manifest_path, strict)
        .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let outcome = match thread_pool() {
        Some(pool) => pool.install(|| compress_model(&manifest, &cfg)),
        None => compress_model(&manifest, &cfg),
    }?;

    let mut plan = outcome.plan;
    for (layer_index, (record, compressed)) in
        plan.layers.iter_mut().zip(&outcome.factorized).enumerate()
    {
        for (sub_index, (sub, factorized)) in record
            .sub_layers
            .iter_mut()
            .zip(&compressed.layers)
            .enumerate()
        {
            let file = format!(
                "{:03}_{}__{}.lwtn",
                layer_index,
                sanitize(&compressed.name),
                sub_index
            );
            write_tensor(&factorized.weights, out_dir.join(&file))?;
            sub.weights_path = Some(file);
        }
    }
    let plan_path = out_dir.join("plan.json");
    write_plan(&plan, &plan_path)?;

    let skipped = plan
        .layers
        .iter()
        .filter(|l| l.method == CompressionMethod::Skip)
        .count();
    println!(
        "compressed {} of {} layers (plan: {})",
        plan.layers.len() - skipped,
        plan.layers.len(),
        plan_path.display()
    );
    for record in &plan.layers {
        match record.method {
            CompressionMethod::Skip => println!(
                "  {}: skipped ({})",
                record.name,
                record.skip_reason.as_deref().unwrap_or("unspecified")
            ),
            _ => println!(
                "  {}: rank {} params {} -> {} speedup {}",
                record.name,
                record.rank.unwrap_or(0),
                record.params_before,
                record.params_after,
                format_sig4(record.speedup)
            ),
        }
    }
    println!(
        "totals: params {} -> {}, speedup {}",
        plan.totals.params_before,
        plan.totals.params_after,
        format_sig4(plan.totals.speedup)
    );

    Ok(if outcome.had_unrequested_skip { 2 } else { 0 })
}

fn speedup_report_cmd(plan_path: &Path, strict: bool) -> Result<u8> {
    let (plan, warnings) = read_plan(plan_path, strict)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    print_speedup_table(&plan);
    Ok(0)
}

fn print_speedup_table(plan: &CompressionPlan) {
    println!(
        "{:<24} {:>8} {:>12} {:>34} {:>8}",
        "layer", "method", "GFLOPs", "sub-layer GFLOPs", "speedup"
    );
    for record in &plan.layers {
        let method = match record.method {
            CompressionMethod::CpdEpc => "cpd-epc",
            CompressionMethod::Svd => "svd",
            CompressionMethod::Skip => "skip",
        };
        let subs = if record.sub_layers.is_empty() {
            "-".to_string()
        } else {
            record
                .sub_layers
                .iter()
                .map(|s| format_sci4(s.flops as f64 / 1e9))
                .collect::<Vec<_>>()
                .join(" + ")
        };
        println!(
            "{:<24} {:>8} {:>12} {:>34} {:>8}",
            record.name,
            method,
            format_sci4(record.flops_before as f64 / 1e9),
            subs,
            format_sig4(record.speedup)
        );
    }
    if !plan.layers.is_empty() {
        let ratio = plan.totals.flops_before as f64 / plan.totals.flops_after as f64;
        println!(
            "{:<24} {:>8} {:>12} {:>34} {:>8}",
            "totals",
            "",
            format_sci4(plan.totals.flops_before as f64 / 1e9),
            format_sci4(plan.totals.flops_after as f64 / 1e9),
            format_sig4(ratio)
        );
    }
}

fn calibrate_cmd(
    predictions_path: &Path,
    bins: usize,
    fit: bool,
    out: Option<&Path>,
) -> Result<u8> {
    let preds = read_predictions(predictions_path)
        .with_context(|| format!("reading {}", predictions_path.display()))?;
    let stats = bin_stats(&preds, bins)?;
    let before = ece(&stats, preds.len())?;
    println!("ECE: {:.2}%", 100.0 * before);

    if let Some(out) = out {
        lwck::io::write_reliability_csv(&reliability_data(&stats), out)?;
        println!("reliability records: {}", out.display());
    }

    if fit {
        let t = fit_temperature(&preds, &TemperatureFitOptions::default())?;
        let logits = preds
            .logits()
            .ok_or_else(|| anyhow!("predictions file has no logit column"))?;
        let rescaled =
            PredictionSet::new(apply_temperature(logits, t)?, preds.labels().to_vec(), None)?;
        let after_bins = bin_stats(&rescaled, bins)?;
        let after = ece(&after_bins, rescaled.len())?;
        println!("Temperature: {:.4}", t);
        println!("ECE after temperature scaling: {:.2}%", 100.0 * after);
    }
    Ok(0)
}

fn verify_cmd(
    manifest_path: &Path,
    plan_path: &Path,
    input_seed: u64,
    tol: f64,
    strict: bool,
) -> Result<u8> {
    let manifest = load_model(manifest_path, strict)?;
    let (plan, warnings) = read_plan(plan_path, strict)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let plan_dir = plan_path.parent().unwrap_or_else(|| Path::new("."));

    let mut all_ok = true;
    for record in &plan.layers {
        let layer = manifest
            .layers()
            .iter()
            .find(|l| l.spec.name == record.name)
            .ok_or_else(|| anyhow!("plan layer '{}' not present in manifest", record.name))?;

        if record.method == CompressionMethod::Skip {
            println!("{}: skipped, deviation 0", record.name);
            continue;
        }

        let mut sequence = Vec::with_capacity(record.sub_layers.len());
        for sub in &record.sub_layers {
            let file = sub
                .weights_path
                .as_ref()
                .ok_or_else(|| anyhow!("sub-layer '{}' has no weights path", sub.name))?;
            let weights = lwck::io::read_tensor(plan_dir.join(file))?;
            sequence.push(FactorizedLayer::new(sub.kind, sub.spec.clone(), weights)?);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(input_seed);
        let (h, w) = layer.spec.input_hw;
        let input = DenseTensor::from_fn(vec![layer.spec.in_channels, h, w], |_| {
            rng.gen_range(-1.0..1.0)
        })?;
        let direct = conv2d_forward(&input, &layer.spec, &layer.weights)?;
        let rewritten = forward_sequence(&input, &sequence)?;
        if direct.dims() != rewritten.dims() {
            bail!(
                "layer '{}': output dims {:?} vs {:?}",
                record.name,
                direct.dims(),
                rewritten.dims()
            );
        }
        let max_abs = direct
            .data()
            .iter()
            .zip(rewritten.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let rel = {
            let denom = direct.frobenius_norm();
            let mut diff = 0.0;
            for (a, b) in direct.data().iter().zip(rewritten.data()) {
                diff += (a - b) * (a - b);
            }
            if denom > 0.0 {
                diff.sqrt() / denom
            } else {
                0.0
            }
        };
        let ok = max_abs <= tol;
        all_ok &= ok;
        println!(
            "{}: max_abs={:e} rel={:e} {}",
            record.name,
            max_abs,
            rel,
            if ok { "ok" } else { "EXCEEDS TOL" }
        );
    }
    Ok(if all_ok { 0 } else { 2 })
}
