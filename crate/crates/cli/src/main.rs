use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};
use feller_cli::config::ConfigFile;
use feller_cli::runner::{effective, run_scenario, scenario_dir, RunOptions};
use feller_cli::scenarios::{find, registry};
use feller_cli::CliError;
use feller_core::{BaseSemigroup, Engine};

#[derive(Parser)]
#[command(name = "feller", version, about = "Perturbed Feller semigroups: scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixFormat {
    Csv,
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenarios.
    Run {
        #[arg(required = true)]
        names: Vec<String>,
        /// JSON file with extra scenarios (same name replaces a built-in).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the number of grid points.
        #[arg(long)]
        grid_points: Option<usize>,
        /// Override the Dyson series tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Scenarios run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also write the one-step matrix as matrix.csv.
        #[arg(long)]
        dump_matrix: bool,
    },
    /// List available scenarios.
    List {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Assemble a scenario's one-step matrix and write it to a file.
    DumpMatrix {
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: MatrixFormat,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn load(config: &Option<PathBuf>) -> Result<Option<ConfigFile>, CliError> {
    config.as_deref().map(ConfigFile::load).transpose()
}

fn run(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::List { config } => {
            let user = load(&config)?;
            for s in registry(user.as_ref()) {
                println!("{:<22} {}", s.name, s.description);
            }
            Ok(0)
        }
        Command::DumpMatrix {
            name,
            config,
            out,
            format,
            grid_points,
            tol,
        } => {
            let user = load(&config)?;
            let s = find(user.as_ref(), &name).ok_or(CliError::UnknownScenario(name))?;
            let opts = RunOptions {
                grid_points,
                series_tol: tol,
                ..Default::default()
            };
            let s = effective(&s, &opts)?;
            let base = BaseSemigroup::new(s.base.exponent()?, s.grid.build()?)?;
            let m = Engine::new(&base, s.perturbation.build()?, s.tolerances.dyson)?.one_step_matrix()?;
            let w = BufWriter::new(fs::File::create(&out)?);
            match format {
                MatrixFormat::Csv => m.write_csv(w)?,
                MatrixFormat::Binary => m.write_binary(w)?,
            }
            eprintln!("wrote {} ({}x{}, residual {:.2e})", out.display(), m.n(), m.n(), m.meta.residual);
            Ok(0)
        }
        Command::Run {
            names,
            config,
            out,
            seed,
            grid_points,
            tol,
            jobs,
            dump_matrix,
        } => {
            let user = load(&config)?;
            let scenarios = names
                .iter()
                .map(|n| find(user.as_ref(), n).ok_or_else(|| CliError::UnknownScenario(n.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            let opts = RunOptions {
                seed,
                grid_points,
                series_tol: tol,
                dump_matrix,
            };
            for s in &scenarios {
                effective(s, &opts)?;
            }
            let many = scenarios.len() > 1;
            let next = AtomicUsize::new(0);
            let results = Mutex::new(Vec::new());
            std::thread::scope(|scope| {
                for _ in 0..jobs.clamp(1, scenarios.len()) {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(s) = scenarios.get(i) else { break };
                        let dir = scenario_dir(&out, &s.name, many);
                        eprintln!("running {} -> {}", s.name, dir.display());
                        let r = run_scenario(s, &opts, &dir);
                        results.lock().expect("lock").push((i, r));
                    });
                }
            });
            let mut results = results.into_inner().expect("lock");
            results.sort_by_key(|(i, _)| *i);
            let mut code = 0;
            for (i, r) in results {
                let name = &scenarios[i].name;
                let c = match r {
                    Ok(rep) => {
                        let status = match rep.exit_code {
                            0 => "PASS".to_string(),
                            1 => format!("FAIL ({})", rep.properties.failures().join(", ")),
                            _ => format!("DIVERGED ({})", rep.error.as_deref().unwrap_or("")),
                        };
                        println!("{name}: {status}");
                        rep.exit_code
                    }
                    Err(e) => {
                        println!("{name}: ERROR ({e})");
                        e.exit_code()
                    }
                };
                code = code.max(c);
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
