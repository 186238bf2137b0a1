//! Command-line front end: condition checks, inverse and forward solves, and
//! manufactured-solution refinement studies driven by a plain-text config.
//!
//! Exit codes: 0 on success, 1 when the run completed but its verdict is
//! negative (a condition fails, a stage does not converge, the refinement
//! order falls short), 2 on configuration or runtime errors.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use loadstone_core::{
    check_conditions, manufactured_case, observed_orders, run_mms_level, solve_forward,
    solve_inverse,
};

use config::Loaded;

#[derive(Parser)]
#[command(
    name = "loadstone",
    version,
    about = "Inverse source recovery for a fourth-order mixed-type equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutputArgs {
    /// Problem description file.
    config: PathBuf,
    /// Directory for result files (created if needed).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// File-name prefix; defaults to the config file stem.
    #[arg(long)]
    prefix: Option<String>,
}

impl OutputArgs {
    fn prefix(&self) -> String {
        self.prefix.clone().unwrap_or_else(|| {
            self.config
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string())
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the solvability conditions and write <prefix>_conditions.csv.
    Check(OutputArgs),
    /// Recover h(x, t) from the configured trace observation.
    Solve {
        #[command(flatten)]
        out: OutputArgs,
        /// Also write <prefix>_u_mode<k>.csv for these sine modes (1-based).
        #[arg(long, value_delimiter = ',')]
        modes_dump: Vec<usize>,
    },
    /// Solve the forward problem with the known factor `problem.h`.
    Forward {
        #[command(flatten)]
        out: OutputArgs,
        /// Restrict <prefix>_u_mode<k>.csv output to these modes (default all).
        #[arg(long, value_delimiter = ',')]
        modes_dump: Vec<usize>,
    },
    /// Manufactured-solution refinement study over square n x n grids.
    Mms {
        #[command(flatten)]
        out: OutputArgs,
        /// Grid sizes, e.g. --levels 17,33,65.
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<usize>,
    },
}

fn init_thread_pool() -> Result<()> {
    if let Ok(raw) = std::env::var("LOADSTONE_THREADS") {
        let n: usize = raw
            .parse()
            .with_context(|| format!("LOADSTONE_THREADS=`{raw}` is not a thread count"))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("thread pool already initialized")?;
        }
    }
    Ok(())
}

fn cmd_check(args: &OutputArgs) -> Result<ExitCode> {
    let loaded = Loaded::load(&args.config)?;
    loaded.spec.validate()?;
    let report = check_conditions(
        &loaded.spec,
        &loaded.grid,
        loaded.k_count,
        loaded.opts.c2,
        loaded.opts.c3,
    )?;
    let path = output::write_file(&args.out_dir, &args.prefix(), "conditions.csv", &report.to_csv())?;
    print!("{}", output::check_summary(&report));
    println!("wrote {}", path.display());
    Ok(if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_solve(args: &OutputArgs, modes_dump: &[usize]) -> Result<ExitCode> {
    let loaded = Loaded::load(&args.config)?;
    let sol = solve_inverse(&loaded.spec, &loaded.grid, loaded.k_count, &loaded.opts)?;
    let prefix = args.prefix();
    let dir = &args.out_dir;

    output::write_file(dir, &prefix, "h.csv", &output::field_csv(&loaded.grid, &sol.h))?;
    output::write_file(dir, &prefix, "convergence.csv", &sol.continuation.final_log().to_csv())?;
    output::write_file(dir, &prefix, "conditions.csv", &sol.report.to_csv())?;
    output::write_file(
        dir,
        &prefix,
        "report.txt",
        &output::solve_report(&loaded.grid, loaded.k_count, &sol),
    )?;
    for &k in modes_dump {
        let field = mode_field(&sol.state.modes, k)?;
        output::write_file(
            dir,
            &prefix,
            &format!("u_mode{k}.csv"),
            &output::field_csv(&loaded.grid, field),
        )?;
    }

    let converged = sol.continuation.all_converged();
    println!(
        "solve: {} ({} stages), trace residual {:.6e}, results under {}",
        if converged { "converged" } else { "NOT CONVERGED" },
        sol.continuation.logs.len(),
        sol.trace_residual,
        dir.join(format!("{prefix}_*")).display(),
    );
    Ok(if converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn mode_field(modes: &[loadstone_core::Field], k: usize) -> Result<&loadstone_core::Field> {
    if k == 0 || k > modes.len() {
        bail!("mode {k} out of range; the solver carried modes 1..={}", modes.len());
    }
    Ok(&modes[k - 1])
}

fn cmd_forward(args: &OutputArgs, modes_dump: &[usize]) -> Result<ExitCode> {
    let loaded = Loaded::load(&args.config)?;
    let Some(h) = &loaded.forward_h else {
        bail!("the forward command needs `problem.h` in the config");
    };
    let state = solve_forward(&loaded.spec, &loaded.grid, loaded.k_count, h, &loaded.opts)?;
    let prefix = args.prefix();

    let dump: Vec<usize> = if modes_dump.is_empty() {
        (1..=state.modes.len()).collect()
    } else {
        modes_dump.to_vec()
    };
    for &k in &dump {
        let field = mode_field(&state.modes, k)?;
        output::write_file(
            &args.out_dir,
            &prefix,
            &format!("u_mode{k}.csv"),
            &output::field_csv(&loaded.grid, field),
        )?;
    }
    println!(
        "forward: {} mode fields written under {}",
        dump.len(),
        args.out_dir.join(format!("{prefix}_*")).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_mms(args: &OutputArgs, levels: &[usize]) -> Result<ExitCode> {
    let loaded = Loaded::load(&args.config)?;
    let template = loaded.mms_template()?;
    let case = manufactured_case(&template)?;

    let mut results = Vec::with_capacity(levels.len());
    for &n in levels {
        let level = run_mms_level(&case, n, n, &loaded.opts)?;
        println!(
            "level {n}: err_h {:.6e}, err_u {:.6e}, trace residual {:.6e}",
            level.err_h, level.err_u, level.trace_residual
        );
        results.push(level);
    }
    let errs: Vec<f64> = results.iter().map(|l| l.err_h).collect();
    let steps: Vec<f64> = results.iter().map(|l| l.hx).collect();
    let orders = observed_orders(&errs, &steps);
    let path = output::write_file(
        &args.out_dir,
        &args.prefix(),
        "mms.csv",
        &output::mms_csv(&results, &orders),
    )?;
    println!("wrote {}", path.display());

    if results.len() == 1 {
        return Ok(ExitCode::SUCCESS);
    }
    let final_order = *orders.last().unwrap();
    println!("final observed order: {final_order:.3}");
    Ok(if final_order >= 1.6 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn run() -> Result<ExitCode> {
    init_thread_pool()?;
    match &Cli::parse().command {
        Command::Check(args) => cmd_check(args),
        Command::Solve { out, modes_dump } => cmd_solve(out, modes_dump),
        Command::Forward { out, modes_dump } => cmd_forward(out, modes_dump),
        Command::Mms { out, levels } => cmd_mms(out, levels),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
