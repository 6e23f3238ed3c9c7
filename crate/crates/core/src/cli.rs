//! `spanprof` command-line front end.
//!
//! Exit codes: 0 on success, 1 when an input or run fails validation, 2 on
//! usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{analyze, reconstruct};
use crate::causal::{compute_causal, CausalMode, CausalQuery, Factor};
use crate::measure::CounterBackend;
use crate::profile_io::{dump_text, read_all};
use crate::runtime::{run_profiled, Config, DEFAULT_OUT, OUT_ENV, THREADS_ENV};
use crate::workloads::{Pipeline, TreeSum, Unbalanced, Workload};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "spanprof",
    version,
    about = "Work/span and causal profiler for fork-join programs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a built-in workload under the profiler and write a profile file.
    Demo(DemoArgs),
    /// Print the per-spawn-site parallelism profile.
    Analyze {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Estimate parallelism if annotated regions were made faster.
    Causal {
        path: PathBuf,
        /// Comma-separated region labels or ids. Defaults to every region.
        #[arg(long, value_delimiter = ',')]
        regions: Vec<String>,
        /// Comma-separated speedup factors, e.g. 2,4,8 or 1.5.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64,100")]
        factors: Vec<Factor>,
        /// Also evaluate each region on its own.
        #[arg(long)]
        isolated: bool,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Print every record in text form.
    Dump { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WorkloadName {
    Treesum,
    Pipeline,
    Unbalanced,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    pub workload: WorkloadName,
    /// Output file [env: SPANPROF_OUT]
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Worker threads [env: SPANPROF_THREADS]
    #[arg(long)]
    pub workers: Option<usize>,
    /// cycles, instructions, clock or logical [env: SPANPROF_COUNTER, default: logical]
    #[arg(long)]
    pub counter: Option<CounterBackend>,

    /// treesum, unbalanced: tree depth
    #[arg(long)]
    pub depth: Option<u32>,
    /// treesum: largest subtree summed serially
    #[arg(long)]
    pub base: Option<u64>,
    /// treesum, unbalanced: cost per leaf
    #[arg(long)]
    pub leaf_cost: Option<u64>,
    /// treesum: cost per node built
    #[arg(long)]
    pub build_cost: Option<u64>,
    /// treesum: cost per bookkeeping statement
    #[arg(long)]
    pub stmt_cost: Option<u64>,
    /// pipeline: number of stages
    #[arg(long)]
    pub stages: Option<u32>,
    /// pipeline: cost of one serial stage
    #[arg(long)]
    pub stage_cost: Option<u64>,
    /// pipeline: pieces per stage
    #[arg(long)]
    pub stage_units: Option<u64>,
    /// pipeline: iterations per parallel loop
    #[arg(long)]
    pub loop_size: Option<u64>,
    /// pipeline: cost per loop iteration
    #[arg(long)]
    pub iter_cost: Option<u64>,
    /// pipeline: iterations per loop chunk
    #[arg(long)]
    pub grain: Option<u64>,
    /// pipeline: run the stages as parallel loops
    #[arg(long)]
    pub parallel_stages: bool,
    /// unbalanced: cost ratio of the right child to the left
    #[arg(long)]
    pub skew: Option<u64>,
    /// unbalanced: serial cost between the two spawns
    #[arg(long)]
    pub gap_cost: Option<u64>,
}

impl DemoArgs {
    pub fn workload(&self) -> Workload {
        match self.workload {
            WorkloadName::Treesum => {
                let d = TreeSum::default();
                Workload::TreeSum(TreeSum {
                    depth: self.depth.unwrap_or(d.depth),
                    base: self.base.or(d.base),
                    leaf_cost: self.leaf_cost.unwrap_or(d.leaf_cost),
                    build_cost: self.build_cost.unwrap_or(d.build_cost),
                    stmt_cost: self.stmt_cost.unwrap_or(d.stmt_cost),
                })
            }
            WorkloadName::Pipeline => {
                let d = Pipeline::default();
                Workload::Pipeline(Pipeline {
                    n_stages: self.stages.unwrap_or(d.n_stages),
                    stage_cost: self.stage_cost.unwrap_or(d.stage_cost),
                    stage_units: self.stage_units.unwrap_or(d.stage_units),
                    loop_size: self.loop_size.unwrap_or(d.loop_size),
                    iter_cost: self.iter_cost.unwrap_or(d.iter_cost),
                    grain: self.grain.unwrap_or(d.grain),
                    parallel_stages: self.parallel_stages,
                })
            }
            WorkloadName::Unbalanced => {
                let d = Unbalanced::default();
                Workload::Unbalanced(Unbalanced {
                    depth: self.depth.unwrap_or(d.depth),
                    skew: self.skew.unwrap_or(d.skew),
                    leaf_cost: self.leaf_cost.unwrap_or(d.leaf_cost),
                    gap_cost: self.gap_cost.unwrap_or(d.gap_cost),
                })
            }
        }
    }

    fn config(&self) -> Result<Config, String> {
        let backend = match self.counter {
            Some(b) => b,
            None => CounterBackend::from_env()
                .map_err(|e| e.to_string())?
                .unwrap_or(CounterBackend::Logical),
        };
        let out = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let mut config = Config::new(out, backend);
        if let Some(n) = self.workers {
            config.workers = n;
        } else if let Ok(v) = std::env::var(THREADS_ENV) {
            config.workers = v
                .trim()
                .parse()
                .map_err(|_| format!("{THREADS_ENV}={v} is not a thread count"))?;
        }
        Ok(config)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{rendered}");
            return EXIT_OK;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Invalid(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INVALID
        }
    }
}

enum Failure {
    Usage(String),
    Invalid(String),
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Demo(args) => {
            let config = args.config().map_err(Failure::Usage)?;
            let workload = args.workload();
            let report = run_profiled(&config, workload.body()).map_err(invalid)?;
            writeln!(
                out,
                "{}: wrote {} records to {} ({} backend, {} workers, {:.3} s)",
                workload.name(),
                report.records.len(),
                report.path.display(),
                config.backend,
                config.workers,
                report.wall.as_secs_f64()
            )
            .map_err(invalid)
        }
        Command::Analyze { path, format } => {
            let (header, records) =
                read_all(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let profile = analyze(&header, records).map_err(invalid)?;
            let text = match format {
                Format::Table => profile.to_table(),
                Format::Csv => profile.to_csv(),
            };
            out.write_all(text.as_bytes()).map_err(invalid)
        }
        Command::Causal {
            path,
            regions,
            factors,
            isolated,
            format,
        } => {
            let (header, records) =
                read_all(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let mut query = CausalQuery::all_regions(&header);
            if !regions.is_empty() {
                query.regions = CausalQuery::resolve_regions(&header, &regions).map_err(invalid)?;
            }
            if query.regions.is_empty() {
                return Err(invalid(format!(
                    "{}: profile has no causal regions",
                    path.display()
                )));
            }
            query.factors = factors;
            if isolated {
                query.mode = CausalMode::Isolated;
            }
            let tree = reconstruct(&header, records).map_err(invalid)?;
            let profile = compute_causal(&tree, &header, &query).map_err(invalid)?;
            let text = match format {
                Format::Table => profile.to_table(),
                Format::Csv => profile.to_csv(),
            };
            out.write_all(text.as_bytes()).map_err(invalid)
        }
        Command::Dump { path } => {
            let (header, records) =
                read_all(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            out.write_all(dump_text(&header, &records).as_bytes())
                .map_err(invalid)
        }
    }
}
