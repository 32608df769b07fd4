use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trefftz::assembly::{compute_bcm, AssemblyOptions};
use trefftz::basis::BasisPolicy;
use trefftz::decomposition::DecomposeOptions;
use trefftz::io::{self, MatrixFormat};
use trefftz::pipeline::{self, ExtractOptions};
use trefftz::{verify, Error, Result};

#[derive(Parser)]
#[command(name = "trefftz", version, about = "Trefftz boundary capacitance matrices and multilayer capacitance extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for MatrixFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => MatrixFormat::Csv,
            Format::Json => MatrixFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Canonical,
    SkipConstant,
}

#[derive(Subcommand)]
enum Command {
    /// BCM of a single domain given as a JSON boundary mesh.
    Solve {
        /// JSON file `{"elements":[{"geometry_nodes":[{"x","y"},…],"field_degree"}]}`.
        mesh: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long, value_enum, default_value = "canonical")]
        policy: Policy,
        /// Write the matrix here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Print the cond(G) estimate to stderr.
        #[arg(long)]
        report_cond: bool,
    },
    /// Generalized capacitance matrix of a layered problem, pF/m.
    Extract {
        /// Problem file (see the crate docs for the format).
        problem: PathBuf,
        /// Overrides `mesh_level` from the problem file.
        #[arg(long)]
        mesh_level: Option<usize>,
        /// Assemble every leaf; only the cache-off timing is reported.
        #[arg(long)]
        no_cache: bool,
        /// Reference C_G in pF/m for the RMSE line.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Write C_G (pF/m) here.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Also print the largest leaf cond(G) estimate.
        #[arg(long)]
        report_cond: bool,
        /// Timed repetitions per configuration.
        #[arg(long, default_value_t = 3)]
        runs: usize,
        /// Bisect leaves more elongated than this; 0 disables the bound.
        #[arg(long, default_value_t = 2.0)]
        max_aspect: f64,
    },
    /// Mesh-level sweep with a plot-ready table.
    Bench {
        problem: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2])]
        levels: Vec<usize>,
        #[arg(long)]
        no_cache: bool,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Write the table here as well as to stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        /// Bisect leaves more elongated than this; 0 disables the bound.
        #[arg(long, default_value_t = 2.0)]
        max_aspect: f64,
    },
    /// Run the built-in oracle checks.
    Verify {
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn decompose_options(max_aspect: f64) -> DecomposeOptions {
    DecomposeOptions {
        max_leaf_aspect: (max_aspect != 0.0).then_some(max_aspect),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve {
            mesh,
            format,
            policy,
            output,
            report_cond,
        } => {
            let mesh = io::load_mesh(&mesh)?;
            let policy = match policy {
                Policy::Canonical => BasisPolicy::Canonical,
                Policy::SkipConstant => BasisPolicy::SkipConstant,
            };
            let bcm = compute_bcm(&mesh, policy, &AssemblyOptions::default())?;
            if report_cond {
                eprintln!("cond(G) ~ {:.3e}", bcm.cond_estimate_g);
            }
            emit(&io::format_matrix(&bcm.matrix, format.into()), output.as_deref())?;
            Ok(true)
        }
        Command::Extract {
            problem,
            mesh_level,
            no_cache,
            reference,
            format,
            output,
            report_cond,
            runs,
            max_aspect,
        } => {
            let problem = io::parse_problem(&problem)?;
            let reference = reference.map(|r| io::load_reference(&r, &problem)).transpose()?;
            let opts = ExtractOptions {
                mesh_level,
                use_cache: !no_cache,
                reference,
                timing_runs: runs,
                decompose: decompose_options(max_aspect),
                ..Default::default()
            };
            let report = pipeline::run_extract(&problem, &opts)?;
            match output {
                Some(p) => {
                    print!("{}", pipeline::format_report(&report, report_cond));
                    io::export_matrix(&report.c_g.pf_per_m(), &p, format.into())?;
                }
                None => {
                    eprint!("{}", pipeline::format_report(&report, report_cond));
                    print!("{}", io::format_matrix(&report.c_g.pf_per_m(), format.into()));
                }
            }
            Ok(true)
        }
        Command::Bench {
            problem,
            levels,
            no_cache,
            reference,
            output,
            runs,
            max_aspect,
        } => {
            let problem = io::parse_problem(&problem)?;
            let reference = reference.map(|r| io::load_reference(&r, &problem)).transpose()?;
            let opts = ExtractOptions {
                use_cache: !no_cache,
                reference,
                timing_runs: runs,
                decompose: decompose_options(max_aspect),
                ..Default::default()
            };
            let rows = pipeline::bench(&problem, &levels, &opts)?;
            let table = pipeline::bench_table(&rows);
            print!("{table}");
            if let Some(p) = output {
                std::fs::write(p, &table)?;
            }
            // A sweep where every level failed is a failure; partial sweeps are reported.
            if rows.iter().all(|(_, r)| r.is_err()) {
                if let Some((_, Err(e))) = rows.into_iter().next() {
                    return Err(e);
                }
            }
            Ok(true)
        }
        Command::Verify { format } => {
            let checks = verify::run_suite();
            match format {
                Some(Format::Json) => {
                    println!("{}", serde_json::to_string_pretty(&checks).expect("checks serialize"));
                }
                _ => {
                    for c in &checks {
                        let status = match (c.passed, c.advisory) {
                            (true, _) => "PASS",
                            (false, true) => "NOTE",
                            (false, false) => "FAIL",
                        };
                        println!("{status}  {:<40} {}", c.name, c.detail);
                    }
                }
            }
            Ok(verify::all_passed(&checks))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
