//! cgram: learn controllability-constrained latent dynamics from rendered
//! frames and evaluate them with random-shooting MPC.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use cgram_envs::dataset::{read_dataset_file, write_dataset_file};
use cgram_envs::{collect_dataset, make_env};
use cgram_harness::config::ExperimentConfig;
use cgram_harness::csvio::{write_summary, write_sweep_rows, write_train_log};
use cgram_harness::rollout::{compare_rollouts, emit_rollout_artifacts};
use cgram_harness::sweep::run_sweep;
use cgram_harness::train::{fixed_batch_loss, train_model};
use cgram_harness::file_checksum;
use cgram_model::checkpoint::{load_checkpoint_file, save_checkpoint_file};

#[derive(Parser)]
#[command(name = "cgram", version, about = "controllability-constrained latent dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect a dataset of rendered transitions.
    Collect {
        #[arg(long)]
        config: PathBuf,
        /// master seed override
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train one model on a collected dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// trade-off weight override
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// run the beta=0 gradient pairing assertion on the first batch
        #[arg(long, default_value_t = false)]
        verify_beta0_pairing: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Open-loop prediction grid: ground truth vs constrained vs baseline.
    Rollout {
        /// checkpoint trained without the constraint
        #[arg(long)]
        baseline: PathBuf,
        /// checkpoint trained with the constraint
        #[arg(long)]
        constrained: PathBuf,
        /// initial state, comma separated (environment dimension)
        #[arg(long)]
        x0: String,
        #[arg(long, default_value_t = 9)]
        steps: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train q models per beta and aggregate closed-loop costs.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// parallel jobs
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Load a checkpoint, re-save it, and compare bytes.
    VerifyCheckpoint {
        #[arg(long)]
        path: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Collect { config, seed, out } => cmd_collect(&config, seed, &out),
        Command::Train { config, dataset, beta, seed, verify_beta0_pairing, out } => {
            cmd_train(&config, &dataset, beta, seed, verify_beta0_pairing, &out)
        }
        Command::Rollout { baseline, constrained, x0, steps, out } => {
            cmd_rollout(&baseline, &constrained, &x0, steps, &out)
        }
        Command::Sweep { config, seed, jobs, out } => cmd_sweep(&config, seed, jobs, &out),
        Command::VerifyCheckpoint { path } => cmd_verify_checkpoint(&path),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_collect(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = load_config(config, seed)?;
    std::fs::create_dir_all(out)?;
    let env = make_env(cfg.env);
    let records =
        collect_dataset(env.as_ref(), cfg.n_samples, cfg.seed, cfg.collect_episode_steps)
            .map_err(|e| anyhow!("collection failed: {e}"))?;
    let path = out.join("dataset.bin");
    let header = write_dataset_file(&path, cfg.env, env.frame_hw(), &records)
        .map_err(|e| anyhow!("writing {}: {e}", path.display()))?;
    println!(
        "wrote {} records ({} bytes) to {}",
        header.n_records,
        header.file_size(),
        path.display()
    );
    println!("sha256 {}", file_checksum(&path)?);
    Ok(())
}

fn cmd_train(
    config: &Path,
    dataset: &Path,
    beta: Option<f64>,
    seed: Option<u64>,
    verify_beta0_pairing: bool,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let beta = beta.unwrap_or(cfg.beta);
    std::fs::create_dir_all(out)?;
    let (header, records) =
        read_dataset_file(dataset).map_err(|e| anyhow!("reading dataset: {e}"))?;
    if header.env != cfg.env {
        bail!(
            "dataset environment {} does not match config environment {}",
            header.env.name(),
            cfg.env.name()
        );
    }
    let (model, outcome) = train_model(&cfg, &records, beta, cfg.seed, verify_beta0_pairing)?;
    let ckpt = out.join("checkpoint.bin");
    save_checkpoint_file(&ckpt, &model).map_err(|e| anyhow!("saving checkpoint: {e}"))?;
    write_train_log(&out.join("train_log.csv"), &outcome.log)?;
    if outcome.aborted {
        eprintln!(
            "training aborted: {} (checkpoint holds the last good parameters)",
            outcome.abort_reason.as_deref().unwrap_or("unknown")
        );
    }
    println!("final loss {:.6} (fixed batch, checkpointed parameters)", outcome.final_loss);
    println!("checkpoint {}", ckpt.display());
    println!("sha256 {}", file_checksum(&ckpt)?);
    // reproduce the logged loss from disk as a self check
    let reloaded = load_checkpoint_file(&ckpt).map_err(|e| anyhow!("reloading: {e}"))?;
    let replay = fixed_batch_loss(&cfg, &reloaded, &records, beta, cfg.seed)?;
    if (replay - outcome.final_loss).abs() > 1e-6 {
        bail!("reloaded checkpoint loss {replay} differs from logged {}", outcome.final_loss);
    }
    Ok(())
}

fn cmd_rollout(
    baseline: &Path,
    constrained: &Path,
    x0: &str,
    steps: usize,
    out: &Path,
) -> Result<()> {
    let baseline_model =
        load_checkpoint_file(baseline).map_err(|e| anyhow!("loading baseline: {e}"))?;
    let constrained_model =
        load_checkpoint_file(constrained).map_err(|e| anyhow!("loading constrained: {e}"))?;
    let x0: Vec<f64> = x0
        .split(',')
        .map(|v| v.trim().parse::<f64>().context("parsing --x0"))
        .collect::<Result<_>>()?;
    let (comparison, truth, constrained_pred, baseline_pred) =
        compare_rollouts(&baseline_model, &constrained_model, &x0, steps)?;
    emit_rollout_artifacts(out, &truth, &constrained_pred, &baseline_pred, &comparison)?;
    println!(
        "cumulative mse over {} steps: constrained {:.6e}, baseline {:.6e}",
        steps,
        comparison.cumulative_constrained(),
        comparison.cumulative_baseline()
    );
    println!("frames and mse.csv in {}", out.display());
    Ok(())
}

fn cmd_sweep(config: &Path, seed: Option<u64>, jobs: usize, out: &Path) -> Result<()> {
    let cfg = load_config(config, seed)?;
    std::fs::create_dir_all(out)?;
    let artifacts = run_sweep(&cfg, jobs, None, true)?;
    write_sweep_rows(&out.join("sweep.csv"), &artifacts.rows)?;
    write_summary(&out.join("summary.csv"), &artifacts.summary)?;
    for ((beta_index, model_index), model) in &artifacts.models {
        let path = out.join(format!("ckpt_b{beta_index}_m{model_index}.bin"));
        save_checkpoint_file(&path, model).map_err(|e| anyhow!("saving {}: {e}", path.display()))?;
    }
    println!("beta      median_cost  mean_cost  d_median%  d_mean%  med_ln_lmin  n_ok");
    for row in &artifacts.summary {
        println!(
            "{:<8} {:>12.3} {:>10.3} {:>9.2} {:>8.2} {:>12.3} {:>5}",
            row.beta,
            row.median_cost,
            row.mean_cost,
            row.pct_change_median,
            row.pct_change_mean,
            row.median_ln_lambda_min,
            row.n_ok
        );
    }
    println!(
        "rows: {} (job seeds derive from master seed {})",
        artifacts.rows.len(),
        cfg.seed
    );
    Ok(())
}

fn cmd_verify_checkpoint(path: &Path) -> Result<()> {
    let original = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let model = load_checkpoint_file(path).map_err(|e| anyhow!("loading checkpoint: {e}"))?;
    let tmp = path.with_extension("verify.tmp");
    save_checkpoint_file(&tmp, &model).map_err(|e| anyhow!("re-saving: {e}"))?;
    let resaved = std::fs::read(&tmp)?;
    std::fs::remove_file(&tmp).ok();
    if original == resaved {
        println!("checkpoint round-trip is byte-exact ({} bytes)", original.len());
        Ok(())
    } else {
        bail!("round-trip mismatch: {} vs {} bytes", original.len(), resaved.len());
    }
}
