use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use feat_core::index::{Granularity, VectorIndex};
use feat_core::pipeline::RunStatus;
use feat_core::trace::{SystemClock, Tracer};
use feat_eval::{evaluate, EvalPair, DEFAULT_RESAMPLES};
use feat_service::{engine, RunRequest, Service, ServiceConfig, ServiceError};

#[derive(Parser)]
#[command(name = "feat", version, about = "Forensic cause-of-death analysis pipeline")]
struct Cli {
    /// Service config file. Defaults to ./feat.toml when present.
    #[arg(long, global = true, env = "FEAT_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides `data_dir` from the config.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate case files and store them.
    Ingest { files: Vec<PathBuf> },
    /// Embed plain-text reference files into a knowledge-base index.
    IndexKb {
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "sentence")]
        granularity: GranularityArg,
    },
    /// Embed an exemplar corpus into a document-level index.
    IndexCorpus {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one case in the foreground.
    Run {
        #[arg(long)]
        case: PathBuf,
        /// Approve the first draft and conclude without review.
        #[arg(long)]
        headless: bool,
        #[arg(long)]
        nonce: Option<String>,
        /// JSON object of pipeline settings, e.g. '{"replan_cap":1}'.
        #[arg(long)]
        pipeline: Option<String>,
    },
    /// Score candidate texts against references.
    Evaluate {
        #[arg(long)]
        pairs: PathBuf,
        /// Report file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also compute the embedding score with the configured embedder.
        #[arg(long)]
        embed: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Close runs left executing by a stopped service.
    Recover,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum GranularityArg {
    Sentence,
    Paragraph,
    Document,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Sentence => Granularity::Sentence,
            GranularityArg::Paragraph => Granularity::Paragraph,
            GranularityArg::Document => Granularity::Document,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, ServiceError> {
    let mut cfg = match &cli.config {
        Some(p) => ServiceConfig::load(p)?,
        None if Path::new("feat.toml").exists() => ServiceConfig::load(Path::new("feat.toml"))?,
        None => ServiceConfig::default(),
    }
    .from_process_env()?;
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = d.clone();
    }
    Ok(cfg)
}

fn write_index(index: &VectorIndex, out: &Path) -> Result<(), ServiceError> {
    let f = std::fs::File::create(out).map_err(|e| ServiceError::Startup(format!("{}: {e}", out.display())))?;
    index
        .write_to(std::io::BufWriter::new(f))
        .map_err(|e| ServiceError::Startup(format!("{}: {e}", out.display())))
}

fn print_json(v: &impl serde::Serialize) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).unwrap());
}

fn main_inner(cli: Cli) -> Result<ExitCode, ServiceError> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest { files } => {
            let store = feat_service::Store::open(&cfg.data_dir)?;
            let mut failed = 0;
            for f in &files {
                let result = std::fs::read(f)
                    .map_err(|e| e.to_string())
                    .and_then(|b| feat_core::case::parse_dossier(&b).map_err(|e| e.to_string()))
                    .and_then(|d| store.put_case(&d).map(|created| (d, created)).map_err(|e| e.to_string()));
                match result {
                    Ok((d, true)) => println!("stored {} ({})", d.case_id, f.display()),
                    Ok((d, false)) => println!("unchanged {} ({})", d.case_id, f.display()),
                    Err(e) => {
                        failed += 1;
                        eprintln!("{}: {e}", f.display());
                    }
                }
            }
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::IndexKb { files, out, granularity } => {
            let (gw, _) = engine::gateway(&cfg)?;
            let docs = engine::read_text_docs(&files)?;
            let tracer = Tracer::new(Arc::new(SystemClock));
            let index = VectorIndex::build(&gw, &tracer, &docs, granularity.into()).map_err(|e| ServiceError::Startup(e.to_string()))?;
            write_index(&index, &out)?;
            println!("indexed {} passages from {} files into {}", index.len(), docs.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::IndexCorpus { corpus, out } => {
            let (gw, _) = engine::gateway(&cfg)?;
            let docs = engine::corpus_docs(&engine::read_corpus(&corpus)?);
            let tracer = Tracer::new(Arc::new(SystemClock));
            let index = VectorIndex::build(&gw, &tracer, &docs, Granularity::Document).map_err(|e| ServiceError::Startup(e.to_string()))?;
            write_index(&index, &out)?;
            println!("indexed {} documents into {}", index.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { case, headless, nonce, pipeline } => {
            let service = Service::new(cfg)?;
            let bytes = std::fs::read(&case).map_err(|e| ServiceError::Invalid(format!("{}: {e}", case.display())))?;
            let (dossier, _) = service.put_case(&bytes)?;
            let mut overrides = match pipeline {
                Some(p) => serde_json::from_str(&p).map_err(|e| ServiceError::Invalid(format!("--pipeline: {e}")))?,
                None => serde_json::json!({}),
            };
            if headless {
                overrides["headless"] = true.into();
            }
            let req = RunRequest {
                case_id: dossier.case_id,
                config: Some(overrides),
                nonce,
            };
            let state = service.run(&req)?;
            print_json(&serde_json::json!({
                "run_id": state.run_id,
                "status": state.status,
                "log": service.store().log_path(&state.run_id),
                "draft_version": state.chain.as_ref().map(|c| c.current().version),
                "short_form": state.report.as_ref().map(|r| &r.short_form),
                "error": state.error,
            }));
            Ok(if state.status == RunStatus::Failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Evaluate { pairs, out, resamples, seed, embed } => {
            let text = std::fs::read_to_string(&pairs).map_err(|e| ServiceError::Invalid(format!("{}: {e}", pairs.display())))?;
            let mut records = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let p: EvalPair = serde_json::from_str(line).map_err(|e| ServiceError::Invalid(format!("{} line {}: {e}", pairs.display(), i + 1)))?;
                records.push(p);
            }
            let gw = if embed { Some(engine::gateway(&cfg)?.0) } else { None };
            let tracer = Tracer::new(Arc::new(SystemClock));
            let embedder = |texts: &[String]| {
                let gw = gw.as_ref().expect("embedder requested");
                gw.embed(texts, &tracer)
                    .map(|vs| vs.into_iter().map(|v| v.values().to_vec()).collect())
                    .map_err(|e| e.to_string())
            };
            let report = evaluate(&records, gw.as_ref().map(|_| &embedder as feat_eval::Embedder<'_>), resamples, seed);
            if !report.excluded.is_empty() {
                eprintln!("excluded {} pairs without a reference: {}", report.excluded.len(), report.excluded.join(", "));
            }
            match out {
                Some(path) => {
                    let json = serde_json::to_string_pretty(&report).unwrap();
                    std::fs::write(&path, json).map_err(|e| ServiceError::Startup(format!("{}: {e}", path.display())))?;
                    println!("scored {} pairs; report written to {}", report.pairs.len(), path.display());
                }
                None => print_json(&report),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { port, host } => {
            let service = Arc::new(Service::new(cfg)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| ServiceError::Startup(e.to_string()))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(|e| ServiceError::Startup(format!("bind {host}:{port}: {e}")))?;
                let addr = listener.local_addr().map_err(|e| ServiceError::Startup(e.to_string()))?;
                {
                    let mut out = std::io::stdout().lock();
                    let _ = writeln!(out, "listening on http://{addr}");
                    let _ = out.flush();
                }
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                feat_service::api::serve(service, listener, shutdown).await
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Recover => {
            let service = Service::with_engine(cfg, empty_engine())?;
            let out = service.recover()?;
            print_json(&out);
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Recovery reads and appends logs only; it needs no backends.
fn empty_engine() -> feat_core::pipeline::Engine {
    feat_core::pipeline::Engine {
        gateway: Arc::new(feat_core::gateway::Gateway::new(Default::default())),
        tools: Arc::new(feat_core::solver::ToolRegistry::empty()),
        corpus_index: Arc::new(VectorIndex::empty(Granularity::Document)),
        corpus: Arc::new(Vec::new()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
