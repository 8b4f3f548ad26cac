use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use featloom::llm::write_replay_file;
use featloom::model::{load_dataset, write_dataset, Dataset};
use featloom::pipeline::{self, evaluate_run, ProviderKind, RunConfig, RunError, RunOptions};
use featloom::synthetic::{planted_dataset, planted_replay};

#[derive(Parser)]
#[command(name = "featloom", version, about = "LLM-guided feature generation for windowed biosignals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the knowledge-base index from the configured corpus.
    Init {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run or resume the generation loop.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        provider: Option<ProviderKind>,
        #[arg(long)]
        replay_file: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Discard any state already in the run directory.
        #[arg(long)]
        fresh: bool,
    },
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Apply a run's best feature set and model to held-out windows.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Write a synthetic demo: train/test datasets, a replay transcript
    /// and a config.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        windows: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn dataset(path: &Path) -> Result<Dataset, RunError> {
    Ok(load_dataset(path)?)
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Init { config } => {
            let config = RunConfig::load(&config)?;
            let (path, index) = pipeline::build_index(&config)?;
            println!("indexed {} chunks into {}", index.len(), path.display());
        }
        Command::Run {
            config,
            dataset: ds,
            iterations,
            stride,
            seed,
            provider,
            replay_file,
            run_dir,
            fresh,
        } => {
            let mut config = RunConfig::load(&config)?;
            if let Some(v) = ds {
                config.dataset = Some(v);
            }
            if let Some(v) = iterations {
                config.iterations = v;
            }
            if let Some(v) = stride {
                config.stride = v;
            }
            if let Some(v) = seed {
                config.seed = v;
            }
            if let Some(v) = provider {
                config.llm.provider = v;
            }
            if let Some(v) = replay_file {
                config.llm.replay_file = Some(v);
            }
            if let Some(v) = run_dir {
                config.run_dir = v;
            }
            let path = config
                .dataset
                .clone()
                .ok_or_else(|| RunError::Config("no dataset given ([run] dataset or --dataset)".into()))?;
            let data = dataset(&path)?;
            let state = pipeline::run(&config, &data, RunOptions { fresh, ..RunOptions::default() })?;
            print!("{}", pipeline::render_report(&state));
        }
        Command::Report { run_dir } => print!("{}", pipeline::report(&run_dir)?),
        Command::Eval { run_dir, dataset: path } => {
            let held = evaluate_run(&run_dir, &dataset(&path)?)?;
            println!("windows {}", held.windows);
            println!("AUROC {:.4}", held.auroc);
            println!("accuracy {:.4}", held.accuracy);
            for (a, b) in &held.skipped_pairs {
                println!("skipped pair {a}/{b}: class absent");
            }
            println!("confusion (rows true, columns predicted)");
            println!("  {}", held.confusion.labels.join(" "));
            for (label, row) in held.confusion.labels.iter().zip(&held.confusion.counts) {
                let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                println!("  {label}: {}", cells.join(" "));
            }
        }
        Command::Demo { out, windows, seed } => {
            fs::create_dir_all(&out)?;
            write_dataset(&planted_dataset(windows, seed), &out.join("train.ndjson"))?;
            write_dataset(&planted_dataset(windows / 2, seed + 1000), &out.join("test.ndjson"))?;
            write_replay_file(&out.join("replay.ndjson"), &planted_replay(3, 2))?;
            fs::write(
                out.join("featloom.ini"),
                "[task]\nobjective = separate three synthetic signal classes\nmodalities = two generic channels\n\n\
                 [llm]\nprovider = replay\nreplay_file = replay.ndjson\n\n\
                 [run]\ndataset = train.ndjson\nrun_dir = run\nstride = 2\niterations = 3\nseed = 17\n",
            )?;
            println!("wrote demo into {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("featloom: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
