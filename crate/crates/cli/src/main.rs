use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kmcf::bench::{
    bench_test, bench_training, cross_validate_model, read_toml, run_prior_study, run_ssm_bench,
    seeded_rng, to_toml, write_prior_csv, write_ssm_csv, CvGrid, FilterFile, PriorStudyConfig,
    SsmBenchConfig,
};
use kmcf::filter::{rmse, write_trace_csv, Kmcf};
use kmcf::ssm::{read_trajectory_csv, simulate, write_trajectory_csv, SyntheticModelId, TrainingSet};
use kmcf::Result;

#[derive(Parser)]
#[command(name = "kmcf", version, about = "Kernel Monte Carlo filtering on synthetic state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory and write it as CSV.
    Simulate {
        #[arg(long)]
        model: SyntheticModelId,
        #[arg(long = "T", alias = "steps")]
        t_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on `n` simulated pairs and filter a test sequence.
    Filter {
        #[arg(long)]
        model: SyntheticModelId,
        #[arg(long)]
        n: usize,
        /// TOML file with `[params]` and optional `[filter]` sections.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the per-step trace CSV.
        #[arg(long)]
        trace: PathBuf,
        /// Test trajectory CSV to filter; simulated from the seed otherwise.
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Length of the simulated test sequence.
        #[arg(long = "T", default_value_t = 100)]
        t_len: usize,
    },
    /// Sampling/resampling study on Gaussian targets.
    BenchPrior {
        /// TOML study config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filtering benchmark over models, training sizes and seeds.
    BenchSsm {
        #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-fold cross-validation on the seed-0 training sequence; writes a
    /// filter config.
    Cv {
        #[arg(long)]
        model: SyntheticModelId,
        #[arg(long)]
        n: usize,
        /// TOML file holding a CV grid; the default grid otherwise.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            model,
            t_len,
            seed,
            out,
        } => {
            let traj = simulate(model, t_len, &mut seeded_rng(seed, 1))?;
            write_trajectory_csv(&traj, create(&out)?)?;
        }
        Command::Filter {
            model,
            n,
            config,
            seed,
            trace,
            observations,
            t_len,
        } => {
            let file: FilterFile = read_toml(&config)?;
            let cfg = file.filter.config(&file.params)?;
            let train = bench_training(model, n, seed)?;
            let test = match observations {
                Some(p) => read_trajectory_csv(BufReader::new(File::open(p)?))?,
                None => bench_test(model, t_len, seed)?,
            };
            let training = TrainingSet::new(train.states, train.observations)?;
            let spec = model.spec(training.clone(), test.controls.clone());
            let result = Kmcf::new(&training, &cfg)?.run(&spec, &test.observations, &mut seeded_rng(seed, 2))?;
            write_trace_csv(&result, Some(&test.states), create(&trace)?)?;
            println!("rmse {}", rmse(&result.means(), &test.states)?);
        }
        Command::BenchPrior { config, out } => {
            let cfg: PriorStudyConfig = match config {
                Some(p) => read_toml(&p)?,
                None => PriorStudyConfig::default(),
            };
            write_prior_csv(&run_prior_study(&cfg)?, create(&out)?)?;
        }
        Command::BenchSsm { config, preset, out } => {
            let cfg: SsmBenchConfig = match (config, preset) {
                (Some(p), _) => read_toml(&p)?,
                (None, Some(Preset::Full)) => SsmBenchConfig::full_scale(),
                (None, _) => SsmBenchConfig::desk(),
            };
            write_ssm_csv(&run_ssm_bench(&cfg)?, create(&out)?)?;
        }
        Command::Cv { model, n, grid, out } => {
            let grid: CvGrid = match grid {
                Some(p) => read_toml(&p)?,
                None => CvGrid::default(),
            };
            let file = FilterFile {
                params: cross_validate_model(model, n, &grid, &Default::default())?.best,
                filter: Default::default(),
            };
            let mut w = create(&out)?;
            w.write_all(to_toml(&file)?.as_bytes())?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
