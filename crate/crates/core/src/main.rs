use clap::{Parser, Subcommand};
use slimfl::config::{parse_config, ExperimentConfig};
use slimfl::data::CLASSES;
use slimfl::error::Result;
use slimfl::report;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "slimfl", version, about = "Slimmable federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print closed-form vs Monte Carlo decode probabilities for every preset.
    ValidateChannel {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fading draws per preset and direction.
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-device class histogram of the Dirichlet partition.
    PartitionReport {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment and write its per-round CSV log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the configured out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Apply the reduced desk-scale defaults.
        #[arg(long)]
        desk_scale: bool,
    },
    /// Render the summary tables from stored run logs.
    Report {
        /// Directory holding manifest.txt and the run CSVs.
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the table CSVs (defaults to the runs directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured experiment grid and write all artifacts.
    Reproduce {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Apply the reduced desk-scale defaults and grid.
        #[arg(long)]
        desk_scale: bool,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => parse_config(&std::fs::read_to_string(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_validate_channel(
    config: &Option<PathBuf>,
    draws: usize,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let csv = report::validate_channel_csv(&cfg, draws, seed)?;
    emit(&csv, out)
}

fn cmd_partition_report(
    config: &Option<PathBuf>,
    seed: Option<u64>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let (train, _) = slimfl::federation::load_datasets(&cfg)?;
    let shards = slimfl::data::dirichlet_partition(&train, cfg.devices, cfg.alpha, seed)?;
    let mut csv = String::from("device,class,count\n");
    for shard in &shards {
        let mut counts = [0usize; CLASSES];
        for &i in &shard.indices {
            counts[train.labels[i] as usize] += 1;
        }
        for (class, count) in counts.iter().enumerate() {
            csv.push_str(&format!("{},{},{}\n", shard.device, class, count));
        }
    }
    emit(&csv, out)
}

fn cmd_train(
    config: &Option<PathBuf>,
    seed: Option<u64>,
    out: &Option<PathBuf>,
    desk_scale: bool,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if desk_scale {
        cfg.apply_desk_scale();
    }
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    let out_dir = out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let (train, test) = slimfl::federation::load_datasets(&cfg)?;
    let mut entries = Vec::new();
    for &run_seed in &cfg.seeds {
        let records = slimfl::federation::run_experiment::<f32>(&cfg, run_seed, &train, &test)?;
        let entry = report::RunEntry::new(cfg.mode, &cfg.channel, cfg.alpha, run_seed);
        let path = report::write_run_csv(&out_dir, &entry, &records)?;
        let last = records.last().expect("rounds >= 1");
        eprintln!(
            "seed {run_seed}: {} rounds, final top-1 {} / {} -> {}",
            records.len(),
            last.acc_half.map(|a| format!("{a:.2}% (0.5x)")).unwrap_or_else(|| "-".into()),
            last.acc_full.map(|a| format!("{a:.2}% (1.0x)")).unwrap_or_else(|| "-".into()),
            path.display()
        );
        entries.push(entry);
    }
    report::write_manifest(&out_dir, &cfg, &entries)?;
    Ok(())
}

fn cmd_report(runs: &Path, config: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    // Prefer the configuration stored with the runs so tables match them.
    let cfg = match config {
        Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
        None => {
            let stored = runs.join("config.txt");
            if stored.exists() {
                parse_config(&std::fs::read_to_string(stored)?)?
            } else {
                ExperimentConfig::default()
            }
        }
    };
    let out_dir = out.clone().unwrap_or_else(|| runs.to_path_buf());
    std::fs::create_dir_all(&out_dir)?;

    std::fs::write(out_dir.join("table_decode_probs.csv"), report::decode_prob_table(&cfg)?)?;
    std::fs::write(
        out_dir.join("table_decoded_bits.csv"),
        report::bit_accounting_table(&cfg, 205.8)?,
    )?;
    std::fs::write(out_dir.join("table_energy_per_round.csv"), report::energy_constants_table(&cfg))?;

    match report::load_runs(runs) {
        Ok(loaded) if !loaded.is_empty() => {
            std::fs::write(
                out_dir.join("table_accuracy.csv"),
                report::accuracy_table(&loaded, cfg.convergence_window),
            )?;
            std::fs::write(
                out_dir.join("table_energy_to_convergence.csv"),
                report::convergence_energy_table(&loaded, &cfg),
            )?;
        }
        Ok(_) => eprintln!("no runs in manifest; accuracy/energy tables skipped"),
        Err(e) => eprintln!("run logs unavailable ({e}); accuracy/energy tables skipped"),
    }
    eprintln!("tables written under {}", out_dir.display());
    Ok(())
}

fn cmd_reproduce(config: &Option<PathBuf>, out: &Option<PathBuf>, desk_scale: bool) -> Result<()> {
    let mut cfg = load_config(config)?;
    if desk_scale {
        cfg.apply_desk_scale();
    }
    cfg.validate()?;
    let out_dir = out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let cells = cfg.reproduce_cells.len();
    eprintln!(
        "running {} grid cells x {} seeds -> {}",
        cells,
        cfg.seeds.len(),
        out_dir.display()
    );
    report::run_grid(&cfg, &out_dir)?;
    let loaded = report::load_runs(&out_dir)?;
    let summary = report::desk_scale_summary(&loaded, &cfg);
    std::fs::write(out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ValidateChannel { config, draws, seed, out } => {
            cmd_validate_channel(config, *draws, *seed, out)
        }
        Command::PartitionReport { config, seed, out } => cmd_partition_report(config, *seed, out),
        Command::Train { config, seed, out, desk_scale } => {
            cmd_train(config, *seed, out, *desk_scale)
        }
        Command::Report { runs, config, out } => cmd_report(runs, config, out),
        Command::Reproduce { config, out, desk_scale } => cmd_reproduce(config, out, *desk_scale),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
