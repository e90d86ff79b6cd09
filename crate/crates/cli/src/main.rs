use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decoopt_cli::ops::{self, CapParams, PlanParams, SweepParams};
use decoopt_cli::server::{self, ServerConfig};
use decoopt_cli::{CliError, CliResult};
use decoopt_core::analysis::ProbeConfig;
use decoopt_core::hardness::KnapsackInstance;

#[derive(Parser)]
#[command(name = "decoopt", version, about = "Decompression schedule optimisation")]
struct Cli {
    /// Worker threads for parallel sweeps.
    #[arg(long, global = true, env = "DECOOPT_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    instance: PathBuf,
    /// Depth grid spacing in metres.
    #[arg(long)]
    dz: f64,
    /// `exp:tau_min,tau_max`, `list:a,b,c` or `uniform:step,max`.
    #[arg(long)]
    menu: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimise T + λR.
    #[command(allow_negative_numbers = true)]
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: f64,
        /// Polish dwell times and attach the stationarity report.
        #[arg(long)]
        polish: bool,
    },
    /// Minimise T subject to a binned risk cap.
    #[command(allow_negative_numbers = true)]
    Cap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        dr: f64,
    },
    /// λ sweep written as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ascending λ values.
        #[arg(long, conflicts_with = "geom")]
        lambdas: Option<String>,
        /// `lo,hi,count`, geometrically spaced.
        #[arg(long)]
        geom: Option<String>,
    },
    /// Optimal J on successively halved (Δz, δ) grids.
    #[command(allow_negative_numbers = true)]
    Converge {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        lambda: f64,
        /// Comma-separated decreasing Δz values.
        #[arg(long)]
        dz: String,
        /// Comma-separated decreasing δ values.
        #[arg(long)]
        delta: String,
        #[arg(long)]
        menu_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid value function, Lipschitz and rollout checks.
    #[command(allow_negative_numbers = true)]
    Probe {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 200)]
        z_layers: usize,
        #[arg(long, default_value_t = 200)]
        p_nodes: usize,
        /// Time step in minutes; layers sit `zdot_max · h` apart.
        #[arg(long, default_value_t = 0.02)]
        h: f64,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Knapsack reduction tools.
    Hardness {
        #[command(subcommand)]
        command: HardnessCommand,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        instance_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct KnapsackArgs {
    /// `value:weight` pairs, comma-separated.
    #[arg(long, default_value = "")]
    items: String,
    #[arg(long, default_value_t = 0)]
    capacity: u64,
    #[arg(long, default_value_t = 0)]
    target: u64,
}

impl KnapsackArgs {
    fn instance(&self) -> CliResult<KnapsackInstance> {
        Ok(KnapsackInstance::new(
            ops::parse_items(&self.items)?,
            self.capacity,
            self.target,
        )?)
    }
}

#[derive(Subcommand)]
enum HardnessCommand {
    /// Build the decompression instance for one knapsack instance.
    Gen {
        #[command(flatten)]
        knapsack: KnapsackArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that the planner's decision matches knapsack brute force.
    Verify {
        #[command(flatten)]
        knapsack: KnapsackArgs,
        /// Every instance with up to `m` items (with --exhaustive) or random sizes up to `m`.
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long)]
        exhaustive: bool,
        /// Number of seeded random instances.
        #[arg(long, conflicts_with = "exhaustive")]
        random: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Largest item value and weight in generated instances.
        #[arg(long, default_value_t = 3)]
        max_vw: u64,
        /// Largest capacity and target in the exhaustive sweep.
        #[arg(long, default_value_t = 6)]
        max_wv: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn numbers(text: &str, what: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::validation(format!("invalid {what}: `{t}` is not a number")))
        })
        .collect()
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n"))
            .map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display()))),
        None => write_stdout(&format!("{text}\n")),
    }
}

/// A closed pipe (`decoopt plan ... | head`) is not an error.
fn write_stdout(text: &str) -> CliResult<()> {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::internal(format!("cannot write stdout: {e}"))),
        _ => Ok(()),
    }
}

fn equivalence_line(pass: bool, detail: &str) -> CliResult<()> {
    write_stdout(&format!("equivalence: {} ({detail})\n", if pass { "PASS" } else { "FAIL" }))?;
    if pass {
        Ok(())
    } else {
        Err(CliError::internal("reduction disagrees with knapsack brute force"))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Plan { common, lambda, polish } => {
            let inst = ops::read_instance(&common.instance)?;
            let params = PlanParams {
                lambda,
                dz: common.dz,
                menu: common.menu,
                polish,
            };
            emit(common.out.as_deref(), &ops::render(&ops::plan(&inst, &params)?)?)
        }
        Command::Cap { common, rho, dr } => {
            let inst = ops::read_instance(&common.instance)?;
            let params = CapParams {
                rho,
                dr,
                dz: common.dz,
                menu: common.menu,
            };
            emit(common.out.as_deref(), &ops::render(&ops::cap(&inst, &params)?)?)
        }
        Command::Sweep { common, lambdas, geom } => {
            let inst = ops::read_instance(&common.instance)?;
            let lambdas = match (lambdas, geom) {
                (Some(l), None) => numbers(&l, "lambdas")?,
                (None, Some(g)) => match numbers(&g, "geom")?[..] {
                    [lo, hi, n] if n >= 2.0 && n.fract() == 0.0 => ops::geometric_lambdas(lo, hi, n as usize)?,
                    _ => return Err(CliError::validation("--geom takes lo,hi,count")),
                },
                _ => return Err(CliError::validation("give --lambdas or --geom")),
            };
            let params = SweepParams {
                lambdas,
                dz: common.dz,
                menu: common.menu,
            };
            let (points, report) = ops::sweep(&inst, &params)?;
            emit(common.out.as_deref(), ops::sweep_csv(&points).trim_end())?;
            if report.passed() {
                eprintln!("envelope: PASS ({} points)", points.len());
            } else {
                eprintln!("envelope: FAIL {report:?}");
            }
            Ok(())
        }
        Command::Converge {
            instance,
            lambda,
            dz,
            delta,
            menu_max,
            out,
        } => {
            let inst = ops::read_instance(&instance)?;
            let table = ops::converge(&inst, lambda, &numbers(&dz, "dz")?, &numbers(&delta, "delta")?, menu_max)?;
            emit(out.as_deref(), &ops::render(&table)?)
        }
        Command::Probe {
            instance,
            lambda,
            z_layers,
            p_nodes,
            h,
            pairs,
            seed,
            out,
        } => {
            let inst = ops::read_instance(&instance)?;
            let cfg = ProbeConfig {
                z_layers,
                p_nodes,
                h,
                lipschitz_pairs: pairs,
                seed,
            };
            emit(out.as_deref(), &ops::render(&ops::probe(&inst, lambda, &cfg)?)?)
        }
        Command::Hardness { command } => match command {
            HardnessCommand::Gen { knapsack, out } => {
                emit(out.as_deref(), &ops::render(&ops::hardness_gen(&knapsack.instance()?)?)?)
            }
            HardnessCommand::Verify {
                knapsack,
                m,
                exhaustive,
                random,
                seed,
                max_vw,
                max_wv,
                out,
            } => {
                if exhaustive {
                    let rep = ops::hardness_exhaustive(m, max_vw, max_wv)?;
                    if let Some(path) = out.as_deref() {
                        emit(Some(path), &ops::render(&rep)?)?;
                    }
                    let detail = format!("{} cases, max interaction error {:.3e}", rep.cases, rep.max_interaction_error);
                    equivalence_line(rep.passed(), &detail)
                } else if let Some(count) = random {
                    let reps = ops::hardness_random(count, m, max_vw, seed)?;
                    if let Some(path) = out.as_deref() {
                        emit(Some(path), &ops::render(&reps)?)?;
                    }
                    let pass = reps.iter().all(|r| r.equivalent);
                    equivalence_line(pass, &format!("{count} random instances"))
                } else {
                    let rep = ops::hardness_verify(&knapsack.instance()?)?;
                    if let Some(path) = out.as_deref() {
                        emit(Some(path), &ops::render(&rep)?)?;
                    }
                    let detail = format!(
                        "knapsack {}, reduction {}",
                        if rep.knapsack_yes { "yes" } else { "no" },
                        if rep.reduction.yes { "yes" } else { "no" }
                    );
                    equivalence_line(rep.equivalent, &detail)
                }
            }
        },
        Command::Serve { port, instance_dir } => {
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| CliError::internal(format!("cannot start runtime: {e}")))?;
            runtime
                .block_on(server::serve(port, ServerConfig { instance_dir }))
                .map_err(|e| CliError::internal(format!("server failed: {e}")))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot configure threads: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
