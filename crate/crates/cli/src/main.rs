//! `dsi`: adapt a domain interface, translate instructions, score sessions and
//! serve the session API. Machine-readable output goes to stdout, logs to stderr.
//!
//! Exit codes: 0 success, 1 infrastructure failure, 2 usage error or
//! adaptation that did not converge, 3 instruction that could not be grounded.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dsi_core::adapt::{adapt_domain, AdaptConfig};
use dsi_core::catalog::Catalog;
use dsi_core::construct::{parse_program_with, serialize_program, DomainInterface, DslProgram};
use dsi_core::fixtures;
use dsi_core::knowledge::{KnowledgeConfig, KnowledgeMode, KnowledgeSource, StubKnowledge};
use dsi_core::metrics::{information_clarity, rendering_consistency, MetricsReport};
use dsi_core::session::{
    translate_step, DomainRegistry, Event, FailureStage, ServiceConfig, Session, SessionService, OURS,
};
use dsi_core::translator::ModelingProgram;

const NOT_CONVERGED: u8 = 2;
const UNGROUNDED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "dsi", version, about = "Domain-specific modeling interfaces from natural language")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Adapt an interface for a domain and write it with its report.
    Adapt(AdaptArgs),
    /// Translate one instruction against an optional current program.
    Translate(TranslateArgs),
    /// Score a session log or a modeling program.
    Eval(EvalArgs),
    /// Run the HTTP session API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Live,
    Stub,
}

#[derive(Debug, Args)]
struct CatalogArg {
    /// Command catalog JSON; defaults to the bundled CSG catalog.
    #[arg(long, env = "DSI_CATALOG")]
    catalog: Option<PathBuf>,
}

impl CatalogArg {
    fn load(&self) -> Result<Catalog> {
        match &self.catalog {
            Some(p) => Catalog::load(p).with_context(|| format!("loading catalog {}", p.display())),
            None => Ok(Catalog::from_json(fixtures::CSG_CATALOG)?),
        }
    }
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[arg(long, env = "DSI_DOMAIN")]
    domain: String,
    /// Adaptation settings as JSON; unspecified fields keep their defaults.
    #[arg(long, env = "DSI_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long, env = "DSI_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "DSI_OUT", default_value = "out")]
    out: PathBuf,
    #[arg(long, env = "DSI_MODE", value_enum, default_value = "stub")]
    mode: Mode,
    /// Stub fixture; defaults to the bundled fixture for the domain.
    #[arg(long, env = "KNOWLEDGE_STUB_PATH")]
    stub: Option<PathBuf>,
    /// Live mode: record traffic to this transcript, or replay it when no
    /// provider URL is configured.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[command(flatten)]
    catalog: CatalogArg,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    /// The instruction to translate.
    #[arg(value_parser = non_empty)]
    instruction: String,
    /// Adapted interface JSON.
    #[arg(long)]
    interface: PathBuf,
    /// Current DSL program; the empty program when absent.
    #[arg(long)]
    state: Option<PathBuf>,
    #[arg(long, env = "DSI_SEED", default_value_t = 0)]
    seed: u64,
    /// Monte Carlo samples for the scene statistics.
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    /// Also write `program.json` and `modeling.jsonl` here.
    #[arg(long, env = "DSI_OUT")]
    out: Option<PathBuf>,
    #[command(flatten)]
    catalog: CatalogArg,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct EvalInput {
    /// A session event log.
    #[arg(long)]
    session: Option<PathBuf>,
    /// A modeling program in JSON lines.
    #[arg(long)]
    program: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    input: EvalInput,
    /// Method whose rankings are scored.
    #[arg(long, default_value = OURS)]
    method: String,
    /// Domain label for a bare program.
    #[arg(long, env = "DSI_DOMAIN")]
    domain: Option<String>,
    /// Print CSV instead of JSON.
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    catalog: CatalogArg,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "DSI_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, env = "DSI_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Directory of `*.interface.json` files written by `adapt`.
    #[arg(long, env = "DSI_INTERFACES", default_value = "out")]
    interfaces: PathBuf,
    /// Service settings as JSON; unspecified fields keep their defaults.
    #[arg(long, env = "DSI_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long, env = "DSI_SEED")]
    seed: Option<u64>,
    #[command(flatten)]
    catalog: CatalogArg,
}

fn non_empty(s: &str) -> Result<String, String> {
    if s.trim().is_empty() {
        Err("instruction is empty".into())
    } else {
        Ok(s.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Adapt(a) => adapt(a),
        Command::Translate(a) => translate(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {}", describe(&e));
        ExitCode::FAILURE
    })
}

/// The error chain on one line, skipping causes whose text the outer
/// message already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn knowledge(a: &AdaptArgs) -> Result<Box<dyn KnowledgeSource>> {
    let mut k = KnowledgeConfig::from_env()?;
    k.mode = match a.mode {
        Mode::Live => KnowledgeMode::Live,
        Mode::Stub => KnowledgeMode::Stub,
    };
    k.stub_path = a.stub.clone();
    k.transcript = a.transcript.clone();
    if k.mode == KnowledgeMode::Stub && k.stub_path.is_none() {
        let text = fixtures::stub(&a.domain)
            .ok_or_else(|| anyhow!("no bundled stub for `{}`; pass --stub", a.domain))?;
        return Ok(Box::new(StubKnowledge::from_json(text)?));
    }
    Ok(k.build(None)?)
}

fn adapt(a: AdaptArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => AdaptConfig::from_json(&read(p)?)?,
        None => AdaptConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let catalog = a.catalog.load()?;
    let ks = knowledge(&a)?;
    log::info!("adapting `{}` with seed {}", a.domain, cfg.seed);
    let (d, report) = adapt_domain(&a.domain, &cfg, ks.as_ref(), &catalog)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let interface = a.out.join(format!("{}.interface.json", a.domain));
    let report_path = a.out.join(format!("{}.report.json", a.domain));
    let csv_path = a.out.join(format!("{}.iterations.csv", a.domain));
    write(&interface, &d.to_json())?;
    write(&report_path, &serde_json::to_string_pretty(&report)?)?;
    write(&csv_path, &report.to_csv())?;

    print_json(&json!({
        "domain": a.domain,
        "converged": report.converged,
        "iterations": report.iterations_used,
        "soundness": report.soundness,
        "completeness": report.completeness,
        "granularity_alignment": report.granularity_alignment,
        "interface": interface,
        "report": report_path,
        "iterations_csv": csv_path,
    }));
    if report.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        log::warn!("adaptation did not converge in {} iterations", report.iterations_used);
        Ok(ExitCode::from(NOT_CONVERGED))
    }
}

fn translate(a: TranslateArgs) -> Result<ExitCode> {
    let d = DomainInterface::from_json(&read(&a.interface)?)?;
    let catalog = a.catalog.load()?;
    let state = match &a.state {
        Some(p) => parse_program_with(&read(p)?, Some(&d))?,
        None => DslProgram::new(),
    };
    let t = match translate_step(&a.instruction, &d, &state, &catalog, a.samples, a.seed) {
        Ok(t) => t,
        Err(f) if f.stage == FailureStage::Grounding => {
            eprintln!("error: {}", f.message);
            return Ok(ExitCode::from(UNGROUNDED));
        }
        Err(f) => bail!("{:?} stage failed: {}", f.stage, f.message),
    };
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write(&out.join("program.json"), &serialize_program(&t.program))?;
        write(&out.join("modeling.jsonl"), &t.modeling.to_jsonl())?;
    }
    print_json(&json!({
        "delta": t.delta,
        "log_prob": t.log_prob,
        "program": t.program,
        "modeling": t.modeling.commands,
        "stats": t.stats,
    }));
    Ok(ExitCode::SUCCESS)
}

/// Reads a session log without modifying it. An unterminated final line is
/// an interrupted write and is ignored.
fn read_session(path: &Path) -> Result<Session> {
    let text = read(path)?;
    let mut events = Vec::new();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Event>(line.trim_end()) {
            Ok(e) => events.push(e),
            Err(_) if !line.ends_with('\n') => log::warn!("ignoring torn final line of {}", path.display()),
            Err(e) => bail!("{} line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(Session::from_events(&events)?)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let catalog = a.catalog.load()?;
    let report = if let Some(path) = &a.input.session {
        let s = read_session(path)?;
        let rankings = s.rankings();
        let k = s.steps.iter().map(|r| r.methods().len()).max().unwrap_or(0) as u32;
        let consistency = if rankings.is_empty() {
            None
        } else if k < 2 {
            log::warn!("rankings need at least two candidate methods; consistency omitted");
            None
        } else {
            Some(rendering_consistency(&rankings, &a.method, k)?)
        };
        MetricsReport {
            domain: s.domain.clone(),
            session_id: Some(s.session_id.clone()),
            consistency,
            clarity: information_clarity(&s.modeling(), &catalog)?,
        }
    } else {
        let path = a.input.program.as_ref().expect("clap requires one input");
        let m = ModelingProgram::from_jsonl(&read(path)?)?;
        MetricsReport {
            domain: a.domain.clone().unwrap_or_default(),
            session_id: None,
            consistency: None,
            clarity: information_clarity(&m, &catalog)?,
        }
    };
    if a.csv {
        print!("{}", report.to_csv());
    } else {
        print_json(&serde_json::to_value(&report)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(a: ServeArgs) -> Result<ExitCode> {
    let mut cfg: ServiceConfig = match &a.config {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => ServiceConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let registry = DomainRegistry::load_dir(&a.interfaces)?;
    if registry.names().is_empty() {
        log::warn!("no adapted interfaces in {}", a.interfaces.display());
    }
    let svc = SessionService::open(&a.data_dir, registry, Arc::new(a.catalog.load()?), cfg)?;
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(a.addr).await.with_context(|| format!("binding {}", a.addr))?;
        log::info!("listening on {}", listener.local_addr()?);
        dsi_server::serve(listener, Arc::new(svc), shutdown_signal()).await?;
        log::info!("stopped");
        Ok(ExitCode::SUCCESS)
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        tokio::signal::ctrl_c().await.ok();
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                log::warn!("cannot listen for SIGTERM: {e}");
                std::future::pending::<()>().await;
            }
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
