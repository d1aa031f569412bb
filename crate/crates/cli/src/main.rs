use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plumeshift::config::RunConfig;
use plumeshift::experiments::{self as ex, Layout, RunLock};
use plumeshift::Error;

#[derive(Parser)]
#[command(name = "plumeshift", version, about = "Cross-sensor methane plume detection study")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Run configuration (TOML). Defaults to the built-in desk-scale study.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; artifacts go to <out>/<config hash>/.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides synth.extent_px (tile side in pixels).
    #[arg(long, global = true)]
    tile_size: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Cmd {
    /// Render both synthetic datasets.
    Synth,
    /// Cloud gate and train/val/test split.
    Curate,
    /// Per-instrument clipping ceilings and summary statistics.
    Stats,
    /// Train the airborne and spaceborne classifiers.
    Train,
    /// Fine-tune the airborne classifier on spaceborne data, with sweeps.
    Finetune,
    /// Train the CycleGAN translator.
    Cyclegan,
    /// Cross-domain baseline matrix.
    Eval,
    /// Four-way summary, charts and difference maps.
    Report,
    /// Every stage in order.
    Run,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = cli.tile_size {
        cfg.synth.extent_px = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let cfg = resolve(cli)?;
    if cli.cmd == Cmd::ShowConfig {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let _lock = RunLock::acquire(&cli.out)?;
    let layout = Layout::new(&cli.out, &cfg);
    match cli.cmd {
        Cmd::Synth => ex::stage_synth(&cfg, &layout),
        Cmd::Curate => ex::stage_curate(&cfg, &layout),
        Cmd::Stats => ex::stage_stats(&cfg, &layout),
        Cmd::Train => ex::stage_train(&cfg, &layout),
        Cmd::Finetune => ex::stage_finetune(&cfg, &layout),
        Cmd::Cyclegan => ex::stage_cyclegan(&cfg, &layout),
        Cmd::Eval => ex::stage_eval(&cfg, &layout).map(|_| ()),
        Cmd::Report => ex::stage_report(&cfg, &layout).map(|s| print_summary(&layout.summary(), &s)),
        Cmd::Run => ex::run_full_study(&cfg, &cli.out).map(|s| print_summary(&layout.summary(), &s)),
        Cmd::ShowConfig => unreachable!(),
    }
}

fn print_summary(path: &Path, s: &ex::Summary) {
    for r in &s.approaches {
        let e = &r.eval;
        println!(
            "{:<32} precision {:.3}  recall {:.3}  f1 {:.3}",
            serde_name(r.approach),
            e.plume.precision,
            e.plume.recall,
            e.plume.f1
        );
    }
    println!("summary: {}", path.display());
}

fn serde_name(a: ex::Approach) -> String {
    format!("{:?}", a)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {}", e.category(), msg);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
