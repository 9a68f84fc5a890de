use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairppo::harness::{
    self, export_plots, rank_by_disparity, read_records, write_outputs, EnvKind, ExperimentConfig, RunRecord, Scale,
};
use fairppo::Result;

#[derive(Parser)]
#[command(name = "fairppo", version, about = "Fair-PPO experiments on the harvest and hospital simulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults to the preset for --env/--scale.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "ah")]
    env: EnvKind,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::preset(self.env, self.scale),
        };
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration for every seed.
    Train(Common),
    /// Evaluate a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the α/β grid (and any benchmarks listed in the config).
    Sweep(Common),
    /// Render figures from the records of an earlier run.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print configurations ranked by median disparity.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

fn finish(dir: &Path, records: &[RunRecord]) -> Result<()> {
    for p in write_outputs(dir, records)? {
        println!("wrote {}", p.display());
    }
    print_ranking(records);
    Ok(())
}

fn print_ranking(records: &[RunRecord]) {
    println!("{:<28} {:>5} {:>12} {:>12} {:>12} {:>10}", "configuration", "runs", "median dp", "reward", "csp", "PoF");
    for r in rank_by_disparity(records) {
        let pof = r.median_price_of_fairness.map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<28} {:>5} {:>12.5} {:>12.5} {:>12.5} {:>10}",
            r.label, r.runs, r.median_dp, r.median_reward, r.median_csp_total, pof
        );
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(common) => {
            let mut cfg = common.load()?;
            cfg.output_dir = Some(output_dir(&cfg));
            let mut records = Vec::new();
            let mut ok = true;
            for seed in cfg.seeds.clone() {
                match harness::train(&cfg, seed) {
                    Ok(r) => {
                        println!("seed {seed}: dp {:.5} reward {:.5} ({:.1}s)", r.summary.dp, r.summary.mean_reward, r.wall_clock_s);
                        records.push(r);
                    }
                    Err(e) => {
                        eprintln!("seed {seed} failed: {e}");
                        ok = false;
                    }
                }
            }
            if !records.is_empty() {
                finish(&output_dir(&cfg), &records)?;
            }
            Ok(ok)
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load()?;
            let records = cfg
                .seeds
                .iter()
                .map(|s| harness::evaluate(&checkpoint, &cfg, *s))
                .collect::<Result<Vec<_>>>()?;
            finish(&output_dir(&cfg).join("eval"), &records)?;
            Ok(true)
        }
        Command::Sweep(common) => {
            let mut cfg = common.load()?;
            cfg.output_dir = Some(output_dir(&cfg));
            let out = harness::sweep(&cfg)?;
            for f in &out.failures {
                eprintln!("{} seed {} failed: {}", f.label, f.seed, f.error);
            }
            let dir = output_dir(&cfg);
            if !out.records.is_empty() {
                finish(&dir, &out.records)?;
            }
            std::fs::write(dir.join("failures.json"), serde_json::to_vec_pretty(&out.failures)?)?;
            Ok(out.failures.is_empty())
        }
        Command::Plot { input, out } => {
            let records = read_records(&input)?;
            for p in export_plots(&records, &out.unwrap_or_else(|| input.join("plots")))? {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
        Command::Report { input } => {
            print_ranking(&read_records(&input)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
