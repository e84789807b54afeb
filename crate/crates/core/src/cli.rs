//! Command-line front end: `run`, `info`, `report` and `worker`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::executor::worker::{spawn_worker, WorkerOptions};
use crate::executor::{parse_list, ExecutorError};
use crate::study_file::{load_study_file, Overrides, StudyFileError};
use crate::workflows::report::{StudyReport, REPORT_FILE};
use crate::workflows::{build_and_run, Construction, WorkflowError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_POOL_EXHAUSTED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "simflock", version, about = "Run simulation studies over a pool of simulator workers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the study described by a JSON study file.
    Run {
        file: PathBuf,
        #[arg(long)]
        max_concurrent: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the study log to a timestamped file in the working directory.
        #[arg(long)]
        log_to_file: bool,
        /// Comma-separated endpoints; replaces the file's simulator.
        #[arg(long)]
        workers: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Describe workflows, search algorithms, schedulers or distributions.
    Info { topic: Topic },
    /// Print the summary of a finished study.
    Report { out_dir: PathBuf },
    /// Serve a local simulator command to remote studies over TCP.
    Worker {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        #[arg(long, default_value_t = 1)]
        slots: usize,
        #[arg(last = true, required = true, num_args = 1..)]
        command: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Topic {
    Workflows,
    Search,
    Scheduler,
    Distributions,
}

const WORKFLOWS_INFO: &str = "\
workflows:
  param_est   fit parameters so simulator outputs match `targets`
              rule: least_squares (J = sum w_k (y_k - t_k)^2, rmse = sqrt(J/K))
                    gaussian_mle  (negative log-likelihood with per-output sigmas)
              search: random (default), grid or gp_bo
  bayes_opt   minimize or maximize `objective_metric` with a Gaussian-process
              surrogate and expected improvement; settings via
              {\"search\": \"gp_bo\", \"n_initial\": 8, \"candidates_per_step\": 512}
  opt         minimize or maximize `objective_metric` with any search algorithm
  doe         run every configuration of a sampling `design`:
              {\"design\": \"full_factorial\"}
              {\"design\": \"lhs\", \"n\": 20, \"midpoint\": false}
              {\"design\": \"sobol\", \"n\": 64, \"skip\": 0}
";

const SEARCH_INFO: &str = "\
search algorithms:
  random   independent draws from each parameter's distribution
  grid     every combination of the space's discrete values in order; the budget
           is clamped to the number of combinations
  gp_bo    Sobol initial design of `n_initial` points, then the candidate with the
           highest expected improvement among `candidates_per_step` quasi-random points
";

const SCHEDULER_INFO: &str = "\
schedulers:
  fifo   every trial runs to completion (default)
  asha   asynchronous successive halving; simulators send intermediate reports
         and weak trials are stopped early:
         {\"scheduler\": \"asha\", \"metric\": \"loss\", \"mode\": \"min\",
          \"grace\": 1, \"max_t\": 81, \"reduction\": 3}
";

const DISTRIBUTIONS_INFO: &str = "\
distributions:
  uniform     {\"type\": \"uniform\", \"lo\": 0.1, \"hi\": 1.2}
  loguniform  {\"type\": \"loguniform\", \"lo\": 1e-4, \"hi\": 1e-1}
  randint     {\"type\": \"randint\", \"lo\": 1, \"hi\": 10}       integers in [lo, hi)
  randn       {\"type\": \"randn\", \"mean\": 0, \"stddev\": 1}
  choice      {\"type\": \"choice\", \"values\": [\"a\", \"b\"]}
  grid        {\"type\": \"grid\", \"values\": [1, 2, 4]}       enumerated by grid search
";

pub fn info_text(topic: Topic) -> &'static str {
    match topic {
        Topic::Workflows => WORKFLOWS_INFO,
        Topic::Search => SEARCH_INFO,
        Topic::Scheduler => SCHEDULER_INFO,
        Topic::Distributions => DISTRIBUTIONS_INFO,
    }
}

fn workflow_exit_code(e: &WorkflowError) -> i32 {
    match e {
        WorkflowError::InvalidSpec { .. } => EXIT_INVALID,
        WorkflowError::Executor(ExecutorError::PoolExhausted { .. }) => EXIT_POOL_EXHAUSTED,
        _ => EXIT_FAILURE,
    }
}

fn run_file(file: &Path, overrides: Overrides) -> i32 {
    let spec = match load_study_file(file).and_then(|f| f.to_spec(&overrides)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            if let StudyFileError::Invalid { reasons } = &e {
                for r in reasons {
                    eprintln!("  - {r}");
                }
            }
            return match e {
                StudyFileError::Io { .. } => EXIT_FAILURE,
                _ => EXIT_INVALID,
            };
        }
    };
    let out_dir = spec.out_dir.clone();
    let log_to_file = spec.log_to_file;
    let result = build_and_run(spec).and_then(|c| match c {
        Construction::Finished(r) => Ok(r),
        Construction::Manual(mut study) => {
            study.build()?;
            study.run()
        }
    });
    match result {
        Ok(report) => {
            if log_to_file {
                print!("{}", report.summary_text());
            }
            if let Some(dir) = out_dir {
                println!("report: {}", dir.join(REPORT_FILE).display());
            }
            let _ = std::io::stdout().flush();
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let WorkflowError::InvalidSpec { reasons } = &e {
                for r in reasons {
                    eprintln!("  - {r}");
                }
            }
            workflow_exit_code(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run { file, max_concurrent, seed, log_to_file, workers, out_dir } => {
            let workers = match workers.as_deref().map(parse_list).transpose() {
                Ok(w) => w,
                Err(e) => {
                    eprintln!("error: --workers: {e}");
                    return EXIT_INVALID;
                }
            };
            run_file(&file, Overrides { max_concurrent, seed, log_to_file, workers, out_dir })
        }
        Command::Info { topic } => {
            print!("{}", info_text(topic));
            EXIT_OK
        }
        Command::Report { out_dir } => match StudyReport::load(&out_dir) {
            Ok(r) => {
                print!("{}", r.summary_text());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {}: {e}", out_dir.join(REPORT_FILE).display());
                EXIT_FAILURE
            }
        },
        Command::Worker { listen, slots, command } => {
            if slots == 0 {
                eprintln!("error: --slots must be at least 1");
                return EXIT_INVALID;
            }
            match spawn_worker(WorkerOptions { listen, slots, command, env: Vec::new() }) {
                Ok(h) => {
                    println!("listening on {}", h.addr());
                    let _ = std::io::stdout().flush();
                    h.wait();
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_FAILURE
                }
            }
        }
    }
}
