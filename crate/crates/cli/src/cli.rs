//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::certify::certify;
use crate::compare::compare;
use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::experiment::{execute, RunOutput};
use crate::grid::tune;
use crate::plot::{write_figure, Column, Figure};
use crate::registry::{build, Problem};
use crate::sweep::xi_sweep;
use crate::trace_io::{fmt_f64, slug, write_file, write_run};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUN: i32 = 2;
pub const EXIT_MISS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "adacrit", version, about = "Run and certify NAG, RMSProp and ADAM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML), or a run's metadata sidecar to replay it.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seed list; repeat for several seeds.
    #[arg(long)]
    seed: Vec<u64>,
    /// Output directory; overrides `out_dir` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured optimizer once per seed and write traces.
    Run(Common),
    /// Tune hyperparameters over `[grid]`, then run the best cell.
    Grid(Common),
    /// Run under a theorem budget and report whether its guarantee held.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Exit with status 3 when the certificate is missed or voided.
        #[arg(long)]
        strict: bool,
    },
    /// One run per shift value in `[sweep]`.
    XiSweep(Common),
    /// Track the smallest Hessian eigenvalue along the run.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Iterates between eigenvalue evaluations; defaults to `run.lambda_stride`
        /// or a tenth of the step cap.
        #[arg(long)]
        stride: Option<u64>,
    },
    /// Overlay several optimizers: training loss, test loss and gradient norm.
    Compare(Common),
}

struct Ctx {
    cfg: ExperimentConfig,
    problem: Problem,
    out: PathBuf,
}

fn load(c: &Common) -> Result<Ctx, HarnessError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if !c.seed.is_empty() {
        cfg.seeds = c.seed.clone();
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.out_dir());
    let problem = build(&cfg.objective)?;
    Ok(Ctx { cfg, problem, out })
}

fn stem(label: &str, seed: u64) -> String {
    format!("{}_seed{seed}", slug(label))
}

fn report_runs(out: &Path, runs: &[(String, ExperimentConfig, &RunOutput)]) -> Result<bool, HarnessError> {
    let mut ok = true;
    for (label, cfg, o) in runs {
        let path = write_run(out, &stem(label, o.seed), cfg, o)?;
        println!("{label} {} -> {}", o.summary(), path.display());
        ok &= o.diverged.is_none();
    }
    Ok(ok)
}

fn cmd_run(ctx: &Ctx) -> Result<i32, HarnessError> {
    let label = ctx.cfg.label();
    let outs = ctx
        .cfg
        .seeds
        .iter()
        .map(|&s| execute(&ctx.cfg, &ctx.problem, s, false))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<_> = outs.iter().map(|o| (label.clone(), ctx.cfg.clone(), o)).collect();
    Ok(if report_runs(&ctx.out, &rows)? { EXIT_OK } else { EXIT_RUN })
}

fn cmd_grid(ctx: &Ctx) -> Result<i32, HarnessError> {
    let grid = ctx
        .cfg
        .grid
        .as_ref()
        .ok_or_else(|| HarnessError::Config("grid needs a [grid] section".into()))?;
    let g = tune(&ctx.cfg, grid, &ctx.problem)?;
    write_file(&ctx.out.join("grid_results.csv"), g.table_csv().as_bytes())?;
    let mut best = ctx.cfg.clone();
    best.optimizer = g.best.apply(&ctx.cfg.optimizer);
    best.grid = None;
    write_file(&ctx.out.join("grid_best.toml"), best.to_toml().as_bytes())?;
    println!(
        "best alpha = {:e} (mu {}, beta1 {}, beta2 {}, xi {:e}), final loss {:.6e}, {} cells, {} extensions, {}",
        g.best.alpha,
        g.best.mu,
        g.best.beta1,
        g.best.beta2,
        g.best.xi,
        g.best_loss,
        g.cells.len(),
        g.extensions,
        if g.interior { "interior" } else { "on the grid edge" }
    );
    let label = best.label();
    let outs = best
        .seeds
        .iter()
        .map(|&s| execute(&best, &ctx.problem, s, false))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<_> = outs.iter().map(|o| (label.clone(), best.clone(), o)).collect();
    Ok(if report_runs(&ctx.out, &rows)? { EXIT_OK } else { EXIT_RUN })
}

fn cmd_certify(ctx: &Ctx, strict: bool) -> Result<i32, HarnessError> {
    let r = certify(&ctx.cfg, &ctx.problem)?;
    write_file(&ctx.out.join("certificate.toml"), r.to_toml().as_bytes())?;
    write_file(&ctx.out.join("certificate_curve.csv"), r.curve_csv().as_bytes())?;
    let mut cfg = ctx.cfg.clone();
    cfg.optimizer.rule = crate::config::RuleKind::Budget;
    let label = format!("{}_certify", ctx.cfg.label());
    cfg.label = Some(label.clone());
    for o in &r.runs {
        // sidecars replay exactly what certify ran
        let mut c = cfg.clone();
        c.run.eval_every = 1;
        c.run.lambda_stride = None;
        c.run.eps = if r.theorem.is_stochastic() { 0.0 } else { r.epsilon };
        write_run(&ctx.out, &stem(&label, o.seed), &c, o)?;
    }
    println!("{}", r.summary());
    Ok(if strict && !r.passed() { EXIT_MISS } else { EXIT_OK })
}

fn cmd_sweep(ctx: &Ctx) -> Result<i32, HarnessError> {
    let sweep = ctx
        .cfg
        .sweep
        .as_ref()
        .ok_or_else(|| HarnessError::Config("xi-sweep needs a [sweep] section".into()))?;
    let s = xi_sweep(&ctx.cfg, sweep, &ctx.problem)?;
    write_file(&ctx.out.join("xi_sweep_table.csv"), s.table_csv().as_bytes())?;
    let fig = s.figure(&format!("{}: sensitivity to xi", ctx.cfg.label()));
    let svg = write_figure(&ctx.out, "xi_sweep", &fig)?;
    let mut ok = true;
    for r in &s.runs {
        let mut c = r.config.clone();
        let label = format!("{}_{}", ctx.cfg.label(), r.label);
        c.label = Some(label.clone());
        let path = write_run(&ctx.out, &stem(&label, r.output.seed), &c, &r.output)?;
        println!("{} {} -> {}", r.label, r.output.summary(), path.display());
        ok &= r.output.diverged.is_none();
    }
    println!("figure -> {}", svg.display());
    Ok(if ok { EXIT_OK } else { EXIT_RUN })
}

fn cmd_spectrum(ctx: &Ctx, stride: Option<u64>) -> Result<i32, HarnessError> {
    let mut cfg = ctx.cfg.clone();
    let s = stride
        .or(cfg.run.lambda_stride)
        .unwrap_or((cfg.run.max_steps / 10).max(1));
    cfg.run.lambda_stride = Some(s.max(1));
    let label = cfg.label();
    let mut ok = true;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let o = execute(&cfg, &ctx.problem, seed, false)?;
        let mut table = String::from("t,lambda_min,ritz_residual,iters_used,converged,breakdown\n");
        for (t, res) in &o.lanczos {
            table.push_str(&format!(
                "{t},{},{},{},{},{}\n",
                fmt_f64(res.lambda_min),
                fmt_f64(res.ritz_residual),
                res.iters_used,
                res.converged,
                res.breakdown
            ));
        }
        let st = stem(&label, seed);
        write_file(&ctx.out.join(format!("{st}_lambda.csv")), table.as_bytes())?;
        let path = write_run(&ctx.out, &st, &cfg, &o)?;
        println!("{label} {}, {} eigenvalue evaluations -> {}", o.summary(), o.lanczos.len(), path.display());
        ok &= o.diverged.is_none();
        runs.push(o);
    }
    let traces: Vec<(String, &adacrit_core::Trace)> =
        runs.iter().map(|o| (format!("seed {}", o.seed), &o.trace)).collect();
    let fig = Figure {
        title: format!("{label}: smallest Hessian eigenvalue"),
        panels: vec![Column::LambdaMin.panel(&traces), Column::Loss.panel(&traces)],
    };
    write_figure(&ctx.out, "spectrum", &fig)?;
    Ok(if ok { EXIT_OK } else { EXIT_RUN })
}

fn cmd_compare(ctx: &Ctx) -> Result<i32, HarnessError> {
    let c = compare(&ctx.cfg, &ctx.problem)?;
    let mut ok = true;
    for v in &c.variants {
        if let Some(t) = &v.tuning {
            let name = slug(&v.runs[0].label);
            write_file(&ctx.out.join(format!("tuning_{name}.csv")), t.table_csv().as_bytes())?;
            println!(
                "{}: tuned alpha = {:e} over {} cells, {} extensions, {}",
                v.runs[0].label,
                t.best.alpha,
                t.cells.len(),
                t.extensions,
                if t.interior { "interior" } else { "on the grid edge" }
            );
        }
        for r in &v.runs {
            write_run(&ctx.out, &stem(&r.label, r.output.seed), &r.config, &r.output)?;
            ok &= r.output.diverged.is_none();
        }
    }
    let svg = write_figure(&ctx.out, "compare", &c.figure(&ctx.cfg.label()))?;
    let claims = c.claims();
    let mut text = claims.join("\n");
    text.push('\n');
    write_file(&ctx.out.join("compare_summary.txt"), text.as_bytes())?;
    print!("{text}");
    println!("figure -> {}", svg.display());
    Ok(if ok { EXIT_OK } else { EXIT_RUN })
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(c) => load(c).and_then(|x| cmd_run(&x)),
        Command::Grid(c) => load(c).and_then(|x| cmd_grid(&x)),
        Command::Certify { common, strict } => load(common).and_then(|x| cmd_certify(&x, *strict)),
        Command::XiSweep(c) => load(c).and_then(|x| cmd_sweep(&x)),
        Command::Spectrum { common, stride } => load(common).and_then(|x| cmd_spectrum(&x, *stride)),
        Command::Compare(c) => load(c).and_then(|x| cmd_compare(&x)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
