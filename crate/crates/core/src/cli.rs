//! Command-line entry points. Exit codes: 0 success, 1 validation, 2 runtime.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::engine::EngineConfig;
use crate::metrics::{classify_tracking, compute_measures_in, parse_annotations, write_tracking, MetricsReport, TrackingSummary};
use crate::protocol::{decode_trace, encode_trace};
use crate::recipe::{parse_library, RecipeLibrary};
use crate::scenario::{replay, run_scenario, HumanModel, RunOptions};
use crate::sensorimotor::nod::{evaluate, generate_corpus, load_corpus, write_corpus, NodConfig};
use crate::sensorimotor::Mode;
use crate::session::{serve, ServeConfig};
use crate::stats::anova_single_factor;
use crate::world::World;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "engage", version, about = "Engagement-aware hosting robot: simulation, serving and metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulated visitor against the engine and write trace, transcript and history.
    Run(RunArgs),
    /// Serve the protocol over TCP to one client at a time.
    Serve(ServeArgs),
    /// Report measures for traces or tracking annotations; compare two trace directories.
    Metrics(MetricsArgs),
    /// Re-run the client side of a trace and print the transcript and history.
    Replay(ReplayArgs),
    /// Write a labeled synthetic nod corpus.
    GenNodCorpus(GenNodArgs),
    /// Precision and recall of the nod detector on a corpus directory.
    EvalNod(EvalNodArgs),
}

#[derive(Debug, Args)]
pub struct WorldArgs {
    /// Recipe library file; the bundled demo library when absent.
    #[arg(long, env = "ENGAGE_LIBRARY")]
    pub library: Option<PathBuf>,
    /// Scene file; the bundled demo scene when absent.
    #[arg(long, env = "ENGAGE_SCENE")]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "mover")]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Simulated time limit in milliseconds.
    #[arg(long, default_value_t = 900_000)]
    pub max_ms: u64,
    #[command(flatten)]
    pub world: WorldArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 7878)]
    pub port: u16,
    /// Force this mode regardless of what clients select.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Directory for per-session trace files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Simulated milliseconds per wall millisecond.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    /// Exit after this many sessions.
    #[arg(long)]
    pub sessions: Option<usize>,
    #[command(flatten)]
    pub world: WorldArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Trace or annotation files.
    pub files: Vec<PathBuf>,
    /// Two directories of `.trace` files compared measure by measure.
    #[arg(long, num_args = 2, value_names = ["DIR_A", "DIR_B"])]
    pub compare: Option<Vec<PathBuf>>,
    /// Print the machine-readable summary only.
    #[arg(long)]
    pub json: bool,
    #[arg(long, env = "ENGAGE_SCENE")]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub trace: PathBuf,
    /// Fail unless the regenerated trace equals the recording.
    #[arg(long)]
    pub check: bool,
    #[command(flatten)]
    pub world: WorldArgs,
}

#[derive(Debug, Args)]
pub struct GenNodArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2005)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct EvalNodArgs {
    pub dir: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_VALIDATION, msg: msg.into() }
    }

    fn runtime(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_RUNTIME, msg: msg.into() }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn load_world(args: &WorldArgs) -> Result<(RecipeLibrary, World), Failure> {
    let lib = match &args.library {
        Some(p) => parse_library(&read(p)?).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?,
        None => RecipeLibrary::iglassware(),
    };
    Ok((lib, load_scene(args.scene.as_deref())?))
}

fn load_scene(path: Option<&Path>) -> Result<World, Failure> {
    match path {
        Some(p) => read(p)?.parse().map_err(|e| Failure::invalid(format!("{}: {e}", p.display()))),
        None => Ok(World::default()),
    }
}

/// Runs one parsed command, writing human output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Serve(a) => cmd_serve(&a, out),
        Command::Metrics(a) => cmd_metrics(&a, out),
        Command::Replay(a) => cmd_replay(&a, out),
        Command::GenNodCorpus(a) => {
            let corpus = generate_corpus(a.seed, a.count);
            write_corpus(&a.out, &corpus).map_err(|e| Failure::runtime(format!("{}: {e}", a.out.display())))?;
            emit(out, &format!("wrote {} traces to {}\n", corpus.len(), a.out.display()))
        }
        Command::EvalNod(a) => {
            let corpus = load_corpus(&a.dir).map_err(|e| Failure::invalid(format!("{}: {e}", a.dir.display())))?;
            let mut cfg = NodConfig::default();
            if let Some(t) = a.threshold {
                cfg.threshold = t;
            }
            let p = evaluate(&corpus, &cfg);
            emit(
                out,
                &format!("traces {} threshold {:.2} precision {:.3} recall {:.3}\n", corpus.len(), p.threshold, p.precision, p.recall),
            )
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes()).map_err(|e| Failure::runtime(e.to_string()))
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (lib, world) = load_world(&a.world)?;
    let model: HumanModel = read(&a.scenario)?
        .parse()
        .map_err(|e| Failure::invalid(format!("{}: {e}", a.scenario.display())))?;
    let opts = RunOptions { mode: a.mode, seed: a.seed, max_ms: a.max_ms };
    let r = run_scenario(&model, &lib, &world, &EngineConfig::default(), &opts).map_err(|e| Failure::invalid(e.to_string()))?;
    fs::create_dir_all(&a.out).map_err(|e| Failure::runtime(format!("{}: {e}", a.out.display())))?;
    let report = compute_measures_in(&r.trace, &world);
    write(&a.out.join("trace.jsonl"), &encode_trace(&r.trace))?;
    write(&a.out.join("transcript.txt"), &r.transcript)?;
    write(&a.out.join("history.txt"), &r.history)?;
    write(&a.out.join("metrics.json"), &(report.to_json() + "\n"))?;
    let log: String = r.log.iter().map(|l| format!("{} {}\n", l.t, l.text)).collect();
    write(&a.out.join("log.txt"), &log)?;
    emit(
        out,
        &format!(
            "{} mode {} seed {}: {} messages, phase {:?} at {} ms, output in {}\n",
            model.name,
            a.mode,
            a.seed,
            r.trace.len(),
            r.phase,
            r.end_t,
            a.out.display()
        ),
    )
}

pub fn cmd_serve(a: &ServeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (lib, world) = load_world(&a.world)?;
    if !(a.speed > 0.0 && a.speed.is_finite()) {
        return Err(Failure::invalid("--speed must be positive"));
    }
    let listener = TcpListener::bind(("127.0.0.1", a.port))
        .map_err(|e| Failure::runtime(format!("cannot listen on port {}: {e}", a.port)))?;
    let addr = listener.local_addr().map_err(|e| Failure::runtime(e.to_string()))?;
    emit(out, &format!("listening on {addr}\n"))?;
    let _ = out.flush();
    let mut cfg = ServeConfig::new(lib, world);
    cfg.mode = a.mode;
    cfg.speed = a.speed;
    cfg.out_dir = a.out.clone();
    cfg.max_sessions = a.sessions;
    let sessions = serve(&listener, &cfg).map_err(|e| Failure::runtime(e.to_string()))?;
    for (i, s) in sessions.iter().enumerate() {
        emit(out, &format!("session {}: {} messages, phase {:?}\n", i + 1, s.trace.len(), s.phase))?;
    }
    Ok(())
}

/// True when the text looks like a protocol trace rather than annotations.
fn is_trace(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_none_or(|l| l.starts_with('{'))
}

fn trace_report(path: &Path, world: &World) -> Result<MetricsReport, Failure> {
    let text = read(path)?;
    let trace = decode_trace(&text).map_err(|(line, e)| Failure::invalid(format!("{}:{line}: {e}", path.display())))?;
    Ok(compute_measures_in(&trace, world))
}

pub fn cmd_metrics(a: &MetricsArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let world = load_scene(a.scene.as_deref())?;
    if let Some(dirs) = &a.compare {
        return compare(&dirs[0], &dirs[1], &world, a.json, out);
    }
    if a.files.is_empty() {
        return Err(Failure::invalid("no input files"));
    }
    let mut json = Vec::new();
    let mut text = String::new();
    for path in &a.files {
        let body = read(path)?;
        let _ = writeln!(text, "== {}", path.display());
        if is_trace(&body) {
            let r = trace_report(path, &world)?;
            let _ = write!(text, "{r}");
            json.push(serde_json::json!({ "file": path.display().to_string(), "trace": r }));
        } else {
            let looks = parse_annotations(&body).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
            let summary: TrackingSummary =
                classify_tracking(&looks).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?.into();
            let _ = write_tracking(&mut text, &summary);
            json.push(serde_json::json!({ "file": path.display().to_string(), "tracking": summary }));
        }
    }
    if a.json {
        emit(out, &(serde_json::Value::Array(json).to_string() + "\n"))
    } else {
        emit(out, &text)
    }
}

fn dir_reports(dir: &Path, world: &World) -> Result<Vec<MetricsReport>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::invalid(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "trace" || x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| trace_report(p, world)).collect()
}

fn compare(a: &Path, b: &Path, world: &World, json: bool, out: &mut dyn Write) -> Result<(), Failure> {
    let ra = dir_reports(a, world)?;
    let rb = dir_reports(b, world)?;
    let mut rows = Vec::new();
    let mut text = format!("{:<20} {:>10} {:>10} {:>10} {:>10}\n", "measure", "mean A", "mean B", "F", "p");
    let names: Vec<&str> = MetricsReport::measures(ra.first().or(rb.first()).ok_or_else(|| Failure::invalid("no traces"))?)
        .iter()
        .map(|m| m.0)
        .collect();
    for (i, name) in names.iter().enumerate() {
        let col = |rs: &[MetricsReport]| rs.iter().filter_map(|r| r.measures()[i].1).collect::<Vec<f64>>();
        let (ga, gb) = (col(&ra), col(&rb));
        let mean = |g: &[f64]| if g.is_empty() { f64::NAN } else { g.iter().sum::<f64>() / g.len() as f64 };
        match anova_single_factor(&[ga.clone(), gb.clone()]) {
            Ok(r) => {
                let _ = writeln!(text, "{name:<20} {:>10.3} {:>10.3} {:>10.3} {:>10.4}", mean(&ga), mean(&gb), r.f, r.p);
                rows.push(serde_json::json!({ "measure": name, "mean_a": mean(&ga), "mean_b": mean(&gb), "anova": r }));
            }
            Err(e) => {
                let _ = writeln!(text, "{name:<20} {:>10.3} {:>10.3} {e}", mean(&ga), mean(&gb));
                rows.push(serde_json::json!({ "measure": name, "error": e.to_string() }));
            }
        }
    }
    if json {
        emit(out, &(serde_json::Value::Array(rows).to_string() + "\n"))
    } else {
        emit(out, &text)
    }
}

pub fn cmd_replay(a: &ReplayArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (lib, world) = load_world(&a.world)?;
    let text = read(&a.trace)?;
    let recorded = decode_trace(&text).map_err(|(line, e)| Failure::invalid(format!("{}:{line}: {e}", a.trace.display())))?;
    let engine = replay(&recorded, &lib, &world, &EngineConfig::default()).map_err(|e| Failure::invalid(e.to_string()))?;
    let regenerated = engine.trace();
    if a.check && regenerated != recorded.as_slice() {
        let at = recorded.iter().zip(regenerated).position(|(x, y)| x != y).unwrap_or(recorded.len().min(regenerated.len()));
        return Err(Failure::runtime(format!("replay diverges at message {}", at + 1)));
    }
    emit(out, &crate::engine::transcript(regenerated))?;
    emit(out, "\n")?;
    emit(out, &engine.render_history())
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = String>, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.msg);
            f.code
        }
    }
}

pub fn stdout_main() -> u8 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    main_with(std::env::args(), &mut stdout.lock(), &mut stderr.lock())
}
