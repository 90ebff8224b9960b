use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sap_core::io::{self, ReportRecord};
use sap_core::{
    cm, db, solve_sparse, KrylovMethod, KrylovOptions, PipelineConfig, PrecondKind, SapError,
};

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_SINGULAR: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_OTHER: u8 = 1;

/// Split-and-parallelize sparse linear solver.
#[derive(Parser)]
#[command(name = "sap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one system.
    Solve(SolveArgs),
    /// Run the manufactured-solution benchmark over a directory of `.mtx` files.
    Bench(BenchArgs),
    /// Compute the DB row permutation and CM symmetric permutation only.
    Reorder(ReorderArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecondArg {
    Coupled,
    Decoupled,
    Diag,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum KrylovArg {
    Bicgstab2,
    Cg,
    Auto,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "decoupled")]
    precond: PrecondArg,
    #[arg(long, default_value_t = 8)]
    partitions: usize,
    #[arg(long, default_value_t = 0.0)]
    drop_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    boost_eps: f64,
    #[arg(long, value_enum, default_value = "bicgstab2")]
    krylov: KrylovArg,
    /// Polynomial degree of BiCGStab(l).
    #[arg(long, default_value_t = 2)]
    ell: usize,
    /// Relative residual tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_it: usize,
    /// Declare the matrix symmetric positive definite (`--krylov auto` picks CG).
    #[arg(long)]
    spd: bool,
    #[arg(long)]
    no_db: bool,
    #[arg(long)]
    no_cm: bool,
    #[arg(long)]
    third_stage: bool,
    #[arg(long)]
    db_scaling: bool,
    #[arg(long)]
    mixed_precision: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append one JSON record per solved system to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl SolverArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            use_db: !self.no_db,
            db_scaling: self.db_scaling,
            use_cm: !self.no_cm,
            third_stage: self.third_stage,
            p: self.partitions,
            drop_tol: self.drop_tol,
            precond: match self.precond {
                PrecondArg::Coupled => PrecondKind::Coupled,
                PrecondArg::Decoupled => PrecondKind::Decoupled,
                PrecondArg::Diag => PrecondKind::Diagonal,
                PrecondArg::None => PrecondKind::None,
            },
            krylov: KrylovOptions {
                method: match self.krylov {
                    KrylovArg::Bicgstab2 => KrylovMethod::BiCgStabL,
                    KrylovArg::Cg => KrylovMethod::Cg,
                    KrylovArg::Auto => KrylovMethod::Auto,
                },
                ell: self.ell,
                rel_tol: self.tol,
                abs_tol: 0.0,
                max_iterations: self.max_it,
                mixed_precision: self.mixed_precision,
                spd: self.spd,
            },
            boost_eps: self.boost_eps,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Right-hand side: Matrix Market array file or one value per line.
    #[arg(long, conflicts_with = "manufactured")]
    rhs: Option<PathBuf>,
    /// Use `b = A x*` with the parabolic manufactured solution (default when
    /// no `--rhs` is given).
    #[arg(long)]
    manufactured: bool,
    /// Write the solution, one value per line.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Cases solved concurrently (0: one per core).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct ReorderArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Row permutation of the reordered system (`perm[new] = old`).
    #[arg(long)]
    out_perm: PathBuf,
    /// Column permutation of the reordered system.
    #[arg(long)]
    out_col_perm: Option<PathBuf>,
    #[arg(long)]
    no_db: bool,
    #[arg(long)]
    no_cm: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(e: &SapError) -> u8 {
    match e {
        SapError::NotConverged { .. } => EXIT_NOT_CONVERGED,
        SapError::StructurallySingular { .. } => EXIT_SINGULAR,
        SapError::Io(_) | SapError::Parse { .. } | SapError::Json(_) => EXIT_IO,
        _ => EXIT_OTHER,
    }
}

fn fail(e: SapError) -> ExitCode {
    eprintln!("sap: {} stage: {e}", e.stage());
    ExitCode::from(exit_code(&e))
}

fn append_records(path: &PathBuf, records: &[ReportRecord]) -> Result<(), SapError> {
    use std::io::Write;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut w = std::io::BufWriter::new(file);
    io::write_records_to(&mut w, records)?;
    w.flush()?;
    Ok(())
}

fn solve(args: SolveArgs) -> ExitCode {
    let a = match io::read_matrix_market(&args.matrix) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let (b, x_star) = match &args.rhs {
        Some(p) => match io::read_vector(p) {
            Ok(b) => (b, None),
            Err(e) => return fail(e),
        },
        None => {
            let xs = io::manufactured_solution(a.n());
            (a.mul_vec(&xs), Some(xs))
        }
    };
    let cfg = args.solver.config();
    let matrix = args.matrix.display().to_string();
    match solve_sparse(&a, &b, &cfg) {
        Ok((x, report)) => {
            let err = x_star.as_ref().map(|xs| io::relative_error(&x, xs));
            let stats = report.stats.as_ref().expect("solved systems carry stats");
            println!("status: converged");
            println!(
                "N = {}  nnz = {}  K = {}  P = {}",
                report.n, report.nnz, report.k, report.p
            );
            println!("iterations: {}", stats.iterations);
            println!("relative residual: {:e}", stats.final_relative_residual);
            if let Some(err) = err {
                println!("relative error: {err:e}");
            }
            for (name, t) in report.timings.entries() {
                println!("{name}: {t:.6}");
            }
            if let Some(path) = &args.solver.report {
                if let Err(e) =
                    append_records(path, &[ReportRecord::from_report(&matrix, &report, err)])
                {
                    return fail(e);
                }
            }
            if let Some(path) = &args.out {
                let text: String = x.iter().map(|v| format!("{v:e}\n")).collect();
                if let Err(e) = std::fs::write(path, text) {
                    return fail(e.into());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let (SapError::NotConverged { report, .. }, Some(path)) = (&e, &args.solver.report) {
                if let Err(w) =
                    append_records(path, &[ReportRecord::from_report(&matrix, report, None)])
                {
                    eprintln!("sap: could not write report: {w}");
                }
            }
            fail(e)
        }
    }
}

fn bench(args: BenchArgs) -> ExitCode {
    let paths = match io::list_matrices(&args.dir) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let cfg = args.solver.config();
    let cases = match io::run_benchmark(&paths, &cfg, args.jobs) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    for c in &cases {
        let status = match &c.outcome {
            io::Outcome::Success => "success".to_string(),
            io::Outcome::Failure { stage, .. } => format!("failure ({stage})"),
        };
        let err = c
            .relative_error
            .map_or("-".to_string(), |e| format!("{e:.3e}"));
        println!("{}: {status}, relative error {err}", c.path.display());
    }
    let summary = io::summarize(&cases);
    println!("{} of {} cases succeeded", summary.successes, summary.cases);
    for (stage, count) in &summary.failures {
        println!("  failed in {stage}: {count}");
    }
    if let Some(path) = &args.solver.report {
        let records: Vec<ReportRecord> = cases.iter().map(|c| c.record()).collect();
        if let Err(e) = io::write_records(path, &records) {
            return fail(e);
        }
    }
    ExitCode::SUCCESS
}

fn reorder(args: ReorderArgs) -> ExitCode {
    let a = match io::read_matrix_market(&args.matrix) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let n = a.n();
    println!("K before: {}", a.half_bandwidth());
    let (a1, row_perm) = if args.no_db {
        (a, (0..n).collect::<Vec<_>>())
    } else {
        match db::diagonal_boosting(&a, false) {
            Ok(r) => (r.apply(&a), r.perm),
            Err(e) => return fail(e),
        }
    };
    let sym = if args.no_cm {
        (0..n).collect::<Vec<_>>()
    } else {
        let g = cm::build_graph(&a1);
        let r = cm::cm_reorder(&g, args.seed);
        if r.achieved_k < a1.half_bandwidth() {
            r.perm
        } else {
            (0..n).collect()
        }
    };
    // final row t is original row row_perm[sym[t]]; final column t is sym[t]
    let rows: Vec<usize> = sym.iter().map(|&s| row_perm[s]).collect();
    println!("K after: {}", a1.permute(&sym, &sym).half_bandwidth());
    if let Err(e) = io::write_permutation(&args.out_perm, &rows) {
        return fail(e);
    }
    if let Some(p) = &args.out_col_perm {
        if let Err(e) = io::write_permutation(p, &sym) {
            return fail(e);
        }
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_OTHER } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Reorder(a) => reorder(a),
    }
}
