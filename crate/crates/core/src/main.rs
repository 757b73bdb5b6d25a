use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use diffsim2d::error::exit;
use diffsim2d::fd::grad_check;
use diffsim2d::io::{self, Checkpoint};
use diffsim2d::optimize::{OptTrace, SceneProblem};
use diffsim2d::scene::Block;
use diffsim2d::{Error, Result};

#[derive(Parser)]
#[command(name = "diffsim2d", version, about = "Differentiable 2D elastodynamics with contact")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene and write the trajectory and a run report.
    Forward {
        scene: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Also compute the adjoint gradient of the scene objective.
        #[arg(long)]
        gradient: bool,
    },
    /// Compare adjoint directional derivatives with central differences.
    GradCheck {
        scene: PathBuf,
        /// Blocks to check (default: every non-empty block).
        #[arg(long = "block")]
        blocks: Vec<Block>,
        /// Fixed step instead of the automatic sweep.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        directions: usize,
        /// Write the rows as JSON to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Minimize the scene objective over the blocks listed in its optimization settings.
    Optimize {
        scene: PathBuf,
        #[arg(long, default_value = "opt")]
        out: PathBuf,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Convert a stored trajectory to text.
    Export {
        /// Run directory written by `forward`.
        run: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        /// Destination file (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn forward(scene: &Path, out: &Path, gradient: bool) -> Result<i32> {
    let scene = io::parse_scene(scene)?;
    fs::create_dir_all(out)?;
    io::write_scene(out.join("scene.json"), &scene)?;
    let run = io::run_forward(&scene, gradient)?;
    io::write_trajectory(BufWriter::new(File::create(out.join("trajectory.dtrj"))?), &run.trajectory)?;
    write_json(&out.join("report.json"), &run.report)?;
    if let Some(g) = &run.gradient {
        write_json(&out.join("gradient.json"), &io::gradient_json(g))?;
    }
    let r = &run.report;
    println!("objective          {:.12e}", r.objective);
    println!("states             {}", run.trajectory.u.len());
    if let Some(d) = r.min_distance() {
        println!("min distance       {d:.6e}");
    }
    println!("min det F          {:.6e}", r.min_det_f());
    println!("forward time  [s]  {:.4}", r.forward_time);
    if let (Some(a), Some(o)) = (r.adjoint_time, r.overhead) {
        println!("adjoint time  [s]  {a:.4}  (ratio {o:.3})");
    }
    println!("wrote {}", out.display());
    Ok(exit::OK)
}

fn check(scene: &Path, blocks: Vec<Block>, eps: Option<f64>, seed: u64, directions: usize, json: Option<PathBuf>) -> Result<i32> {
    let scene = io::parse_scene(scene)?;
    let blocks = if blocks.is_empty() { Block::ALL.to_vec() } else { blocks };
    let gc = grad_check(&scene, &blocks, directions, seed, eps)?;
    println!("{:<8} {:>3} {:>22} {:>22} {:>10} {:>10}  ok", "block", "dir", "adjoint", "fd", "eps", "rel err");
    for r in &gc.rows {
        println!(
            "{:<8} {:>3} {:>22.14e} {:>22.14e} {:>10.1e} {:>10.2e}  {}",
            r.block.name(),
            r.direction,
            r.adjoint,
            r.fd,
            r.eps,
            r.rel_error,
            if r.pass { "yes" } else { "NO" }
        );
    }
    println!("forward {:.4}s, adjoint {:.4}s", gc.forward_time, gc.adjoint_time);
    if let Some(p) = json {
        write_json(&p, &gc)?;
    }
    if gc.passed() {
        println!("all {} directions pass", gc.rows.len());
        Ok(exit::OK)
    } else {
        let bad = gc.rows.iter().filter(|r| !r.pass).count();
        eprintln!("{bad} of {} directions exceed tolerance", gc.rows.len());
        Ok(exit::GRAD_CHECK)
    }
}

fn optimize(scene: &Path, out: &Path, max_iterations: Option<usize>) -> Result<i32> {
    let mut scene = io::parse_scene(scene)?;
    if let Some(n) = max_iterations {
        scene.optimization.max_iterations = n;
    }
    fs::create_dir_all(out)?;
    let ckpt = out.join("checkpoint.json");
    let mut problem = SceneProblem::new(scene.clone());
    let mut seen = OptTrace::default();
    let mut best = scene.params();
    let res = problem.run(|e, q| {
        println!(
            "{:>4}  J {:.10e}  |g| {:.3e}  step {:.2e}{}",
            e.iteration,
            e.objective,
            e.grad_norm,
            e.step,
            if e.reset { "  reset" } else { "" }
        );
        seen.entries.push(e.clone());
        best = q.clone();
        let c = Checkpoint {
            iteration: e.iteration,
            objective: e.objective,
            params: q.clone(),
        };
        if let Err(err) = c.write(&ckpt) {
            eprintln!("checkpoint: {err}");
        }
    });
    // keep the accepted iterates of a failed run
    let (q, trace, failure) = match res {
        Ok((q, trace)) => (q, trace, None),
        Err(e) => {
            seen.stop_reason = format!("error: {e}");
            (best, seen, Some(e))
        }
    };
    trace.write_csv(BufWriter::new(File::create(out.join("trace.csv"))?))?;
    io::write_scene(out.join("optimized.json"), &scene.with_params(&q)?)?;
    match failure {
        Some(e) => Err(e),
        None => {
            println!("stopped: {} after {} evaluations", trace.stop_reason, problem.evaluations);
            Ok(exit::OK)
        }
    }
}

fn export(run: &Path, format: Format, output: Option<PathBuf>) -> Result<i32> {
    let path = run.join("trajectory.dtrj");
    let file = File::open(&path).map_err(|e| Error::schema("/", format!("{}: {e}", path.display())))?;
    let (_, traj) = io::read_trajectory(BufReader::new(file))?;
    let mut sink: Box<dyn Write> = match &output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    match format {
        Format::Csv => io::trajectory_csv(&mut sink, &traj)?,
        Format::Json => {
            serde_json::to_writer(&mut sink, &io::trajectory_json(&traj))?;
            writeln!(sink)?;
        }
    }
    sink.flush()?;
    Ok(exit::OK)
}

fn init_threads() {
    if let Some(n) = std::env::var("DIFFSIM_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("DIFFSIM_THREADS: {e}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    let res = match cli.command {
        Command::Forward { scene, out, gradient } => forward(&scene, &out, gradient),
        Command::GradCheck {
            scene,
            blocks,
            eps,
            seed,
            directions,
            json,
        } => check(&scene, blocks, eps, seed, directions, json),
        Command::Optimize {
            scene,
            out,
            max_iterations,
        } => optimize(&scene, &out, max_iterations),
        Command::Export { run, format, output } => export(&run, format, output),
    };
    match res {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
