//! The `meff` command line.
//!
//! Exit status is 0 on success, 1 on runtime failure and 2 on usage errors
//! or tool errors from `meff tools`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use meff_core::backend::MockBackend;
use meff_core::evalkit::{judge_table, run_benchmark, EvalTask, Judge, TaskKind};
use meff_core::factory::{
    make_data, sidecar, BackendTeacher, Batch, Category, FactoryError, Purpose, ReplayTeacher, Sources, Teacher,
    TeacherClient, TemplateRegistry, TEACHER_MOCK_SCRIPT,
};
use meff_core::fintools::{execute, ToolKind};
use meff_core::knowledge::{ingest, Bm25Params, KnowledgeIndex};
use meff_core::router::route;
use meff_core::turn::{ChatEvent, EventPayload, TurnContext};
use serde_json::json;
use tokio::io::{AsyncBufReadExt, BufReader};

use crate::config::ServiceConfig;
use crate::state::{build_backend, parse_expert, AppState, ChatInput};

#[derive(Debug, Parser)]
#[command(name = "meff", version, about = "Multi-expert financial assistant")]
pub struct Cli {
    /// Service configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TeacherKind {
    Mock,
    Remote,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
    /// Chat in the terminal; without --message, read messages from stdin.
    Chat {
        #[arg(long)]
        expert: Option<String>,
        #[arg(long)]
        message: Option<String>,
        #[arg(long)]
        session: Option<String>,
        /// Print every event as a JSON line instead of plain text.
        #[arg(long)]
        json: bool,
    },
    /// Run one tool: Calculator, EquationSolver, Counter or ProbabilityTable.
    Tools { tool: String, input: Vec<String> },
    /// Build a knowledge index from a JSONL corpus.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 128)]
        max_chunk_tokens: usize,
    },
    /// Query a knowledge index.
    Retrieve {
        #[arg(long)]
        query: String,
        /// Index directory; defaults to `kb.index_path`.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Generate instruction records with the teacher model.
    MakeData {
        /// consulting, task, computing, retrieval or all.
        #[arg(long)]
        category: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TeacherKind::Mock)]
        teacher: TeacherKind,
        /// Answer teacher calls from a previous run's `.calls.jsonl`.
        #[arg(long, conflicts_with = "teacher")]
        replay: Option<PathBuf>,
    },
    /// Run a benchmark task file and write its report.
    Eval {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TeacherKind::Mock)]
        judge: TeacherKind,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Show which expert a message would be routed to.
    Route {
        #[arg(long)]
        message: String,
        #[arg(long)]
        expert: Option<String>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl ToString) -> Self {
        CliError {
            code: 2,
            message: message.to_string(),
        }
    }

    fn failed(message: impl ToString) -> Self {
        CliError {
            code: 1,
            message: message.to_string(),
        }
    }
}

type CliResult = Result<(), CliError>;

fn load_config(path: Option<&Path>) -> Result<ServiceConfig, CliError> {
    match path {
        Some(p) => ServiceConfig::load(p).map_err(CliError::usage),
        None => Ok(ServiceConfig::default()),
    }
}

fn print_json(value: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

pub async fn run(cli: Cli) -> CliResult {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Serve { listen } => serve(config, listen).await,
        Command::Chat {
            expert,
            message,
            session,
            json,
        } => chat(config, expert, message, session, json).await,
        Command::Tools { tool, input } => tools(&tool, &input.join(" ")),
        Command::Ingest {
            corpus,
            index,
            max_chunk_tokens,
        } => {
            let (_, stats) =
                ingest(&corpus, &index, Bm25Params::default(), max_chunk_tokens).map_err(CliError::failed)?;
            print_json(&stats);
            Ok(())
        }
        Command::Retrieve {
            query,
            index,
            top_k,
            threshold,
        } => {
            let dir = index
                .or(config.kb.index_path.clone())
                .ok_or_else(|| CliError::usage("no index: pass --index or set kb.index_path"))?;
            let index = KnowledgeIndex::load(&dir).map_err(CliError::failed)?;
            let results = index.retrieve(
                &query,
                top_k.unwrap_or(config.kb.top_k),
                threshold.unwrap_or(config.kb.threshold),
            );
            print_json(&results);
            Ok(())
        }
        Command::MakeData {
            category,
            n,
            seed,
            out,
            teacher,
            replay,
        } => make_data_cmd(config, &category, n, seed, &out, teacher, replay).await,
        Command::Eval { task, out, judge, seed } => eval(config, &task, &out, judge, seed).await,
        Command::Route { message, expert } => {
            let expert = parse_expert(expert.as_deref()).map_err(CliError::usage)?;
            let state = AppState::from_config(config).map_err(CliError::failed)?;
            print_json(&route(&message, expert, &state.profiles()));
            Ok(())
        }
    }
}

async fn serve(mut config: ServiceConfig, listen: Option<std::net::SocketAddr>) -> CliResult {
    if let Some(addr) = listen {
        config.listen = addr;
    }
    let addr = config.listen;
    let state = Arc::new(AppState::from_config(config).map_err(CliError::failed)?);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(CliError::failed)?;
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
    };
    crate::serve(state, listener, shutdown).await.map_err(CliError::failed)
}

fn tools(name: &str, input: &str) -> CliResult {
    let tool = ToolKind::from_command_name(name).ok_or_else(|| {
        CliError::usage(format!(
            "unknown tool `{name}`; expected Calculator, EquationSolver, Counter or ProbabilityTable"
        ))
    })?;
    match execute(tool, input) {
        Ok(outcome) => {
            let _ = writeln!(std::io::stdout().lock(), "{}", outcome.rendered);
            Ok(())
        }
        Err(e) => Err(CliError::usage(format!("{}: {e}", e.kind()))),
    }
}

fn print_event(event: &ChatEvent, json: bool) {
    let mut out = std::io::stdout().lock();
    if json {
        let _ = writeln!(out, "{}", serde_json::to_string(event).expect("events serialize"));
        return;
    }
    let _ = match &event.payload {
        EventPayload::Route { expert, .. } => writeln!(out, "[{expert}]"),
        EventPayload::Retrieval { results, index_loaded } => {
            if !index_loaded {
                writeln!(out, "(no knowledge index loaded)")
            } else {
                results
                    .iter()
                    .try_for_each(|r| writeln!(out, "  ref {} #{} {:.3} {}", r.doc_id, r.seq, r.score, r.title))
            }
        }
        EventPayload::Token { text } | EventPayload::ToolCall { text, .. } | EventPayload::ToolResult { text, .. } => {
            write!(out, "{text}")
        }
        EventPayload::Done { .. } => writeln!(out),
        EventPayload::Error { kind, message, .. } => writeln!(out, "\nerror ({kind}): {message}"),
    };
    let _ = out.flush();
}

async fn chat(
    config: ServiceConfig,
    expert: Option<String>,
    message: Option<String>,
    session: Option<String>,
    json: bool,
) -> CliResult {
    let mut expert = parse_expert(expert.as_deref()).map_err(CliError::usage)?;
    let state = AppState::from_config(config).map_err(CliError::failed)?;
    state.backend.health().await.map_err(CliError::failed)?;
    let mut session = session;

    if let Some(message) = message {
        let result = state
            .chat(
                ChatInput {
                    session_id: session,
                    message,
                    expert,
                },
                |e| print_event(e, json),
            )
            .await
            .map_err(CliError::usage)?;
        return result.outcome.map(|_| ()).map_err(CliError::failed);
    }

    eprintln!("Type a message, `/expert <name|auto>` to switch experts, or `/quit`.");
    let mut lines = BufReader::new(tokio::io::stdin()).lines();
    while let Some(line) = lines.next_line().await.map_err(CliError::failed)? {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "/quit" {
            break;
        }
        if let Some(name) = line.strip_prefix("/expert") {
            match parse_expert(Some(name)) {
                Ok(e) => expert = e,
                Err(e) => eprintln!("{e}"),
            }
            continue;
        }
        let input = ChatInput {
            session_id: session.clone(),
            message: line.to_string(),
            expert,
        };
        match state.chat(input, |e| print_event(e, json)).await {
            Ok(result) => session = Some(result.session_id),
            Err(e) => eprintln!("{e}"),
        }
    }
    Ok(())
}

fn teacher_client(config: &ServiceConfig, kind: TeacherKind, replay: Option<&Path>) -> Result<TeacherClient, CliError> {
    let teacher: Arc<dyn Teacher> = match (replay, kind) {
        (Some(path), _) => Arc::new(ReplayTeacher::from_path(path).map_err(CliError::usage)?),
        (None, TeacherKind::Mock) => {
            let backend = MockBackend::from_toml(TEACHER_MOCK_SCRIPT).map_err(CliError::failed)?;
            Arc::new(BackendTeacher::new(Arc::new(backend)))
        }
        (None, TeacherKind::Remote) => {
            let mut remote = config.clone();
            remote.backend.kind = crate::config::BackendKind::Remote;
            remote.validate().map_err(CliError::usage)?;
            Arc::new(BackendTeacher::new(build_backend(&remote).map_err(CliError::failed)?))
        }
    };
    Ok(TeacherClient::new(teacher, config.factory.budget))
}

async fn make_data_cmd(
    mut config: ServiceConfig,
    category: &str,
    n: usize,
    seed: Option<u64>,
    out: &Path,
    teacher: TeacherKind,
    replay: Option<PathBuf>,
) -> CliResult {
    let categories: Vec<Category> = if category == "all" {
        Category::ALL.to_vec()
    } else {
        vec![category.parse().map_err(CliError::usage)?]
    };
    if let Some(seed) = seed {
        config.factory.seed = seed;
    }
    let sources = Sources::load(&config.factory.sources).map_err(CliError::usage)?;
    let templates = TemplateRegistry::defaults();
    let client = teacher_client(&config, teacher, replay.as_deref())?;

    let mut batch = Batch::default();
    let mut failure = None;
    for c in categories {
        match make_data(c, n, &config.factory, &sources, &client, &templates).await {
            Ok(b) => batch.extend(b),
            Err(FactoryError::TeacherBudgetExceeded { budget, completed }) => {
                batch.extend(*completed);
                failure = Some(format!("teacher budget of {budget} calls exhausted; partial output written"));
                break;
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    batch.write(out).map_err(CliError::failed)?;
    client.write_log(&sidecar(out, "calls")).map_err(CliError::failed)?;
    let mut per_category = std::collections::BTreeMap::new();
    for r in &batch.records {
        *per_category.entry(r.category.as_str()).or_insert(0usize) += 1;
    }
    print_json(&json!({
        "records": batch.records.len(),
        "rejects": batch.rejects.len(),
        "teacher_calls": client.calls(),
        "per_category": per_category,
        "out": out,
    }));
    match failure {
        Some(m) => Err(CliError::failed(m)),
        None => Ok(()),
    }
}

async fn eval(mut config: ServiceConfig, task: &Path, out: &Path, judge: TeacherKind, seed: Option<u64>) -> CliResult {
    let task = EvalTask::load(task).map_err(CliError::usage)?;
    if let Some(seed) = seed {
        config.eval.seed = seed;
    }
    let eval_config = config.eval;
    let client = teacher_client(&config, judge, None)?;
    let state = AppState::from_config(config).map_err(CliError::failed)?;
    let profiles = state.profiles();
    let ctx = TurnContext {
        backend: state.backend.as_ref(),
        profiles: &profiles,
        index: state.index.as_deref(),
        retrieval: state.config.kb.step(),
        limits: state.config.tool_loop,
    };
    let templates = TemplateRegistry::defaults();
    let template = templates.first(Purpose::Judge).map_err(CliError::failed)?;
    let judge = Judge::new(&client, template);
    let judge = (task.kind == TaskKind::JudgeScored).then_some(&judge);
    let report = run_benchmark(&task, &ctx, judge, &eval_config)
        .await
        .map_err(CliError::failed)?;
    std::fs::write(out, report.to_json()).map_err(CliError::failed)?;
    print_json(&report.aggregate);
    if let Some(means) = report.judge_means() {
        let _ = write!(std::io::stdout().lock(), "{}", judge_table(&[(task.id.as_str(), means)]));
    }
    Ok(())
}
