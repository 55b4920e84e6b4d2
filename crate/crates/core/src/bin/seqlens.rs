use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use seqlens::api::{self, ApiConfig, AppState};
use seqlens::fhir;
use seqlens::impute::impute_and_categorize;
use seqlens::io::{self, DatasetDir};
use seqlens::model::{attribute_summary, CohortDataset};
use seqlens::query::TemporalQuery;
use seqlens::session::{Engine, DEFAULT_BUDGET};
use seqlens::stats;
use seqlens::synth::{self, SynthConfig};
use seqlens::{Error, ENGINE_VERSION};

#[derive(Parser)]
#[command(name = "seqlens", version, about = "Event-sequence cohort analytics")]
struct Cli {
    /// Print errors to stderr as JSON objects.
    #[arg(long, global = true)]
    json_errors: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert FHIR resources into a dataset directory.
    Ingest {
        /// FHIR JSON / NDJSON files or directories.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        loinc_allowlist: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Categorize raw lab observations and merge them into the events.
    Impute {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a temporal query and write the scatterplot points of the cut.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        manual: Option<PathBuf>,
        /// Query JSON file, or the JSON itself.
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic cohort.
    Synth {
        /// Config JSON; fields left out take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write FHIR bundles and a LOINC allowlist.
        #[arg(long)]
        fhir: bool,
    },
    /// Serve the HTTP API over one dataset.
    Serve {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        manual: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long, default_value_t = 60)]
        session_timeout_minutes: u64,
    },
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_input_error() { 2 } else { 1 },
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn internal(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            kind: "internal",
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("values serialize"));
}

fn ingest(input: &[PathBuf], allowlist: &Path, out: &Path) -> CmdResult {
    let allowlist = fhir::read_allowlist(allowlist)?;
    let output = fhir::ingest(input, &allowlist)?;
    let dir = DatasetDir::new(out);
    dir.write_dataset(&output.dataset)?;
    dir.write_observations(&output.observations)?;
    print_json(&json!({"engine_version": ENGINE_VERSION, "report": output.report}));
    Ok(())
}

fn impute(dataset: &Path, out: &Path) -> CmdResult {
    if dataset == out {
        return Err(Error::InvalidConfig("--out must differ from --dataset".into()).into());
    }
    let input = DatasetDir::new(dataset);
    let data = input.read_dataset()?;
    let observations = input.read_observations()?;
    let imputed = impute_and_categorize(&observations)?;
    let (patients, mut events) = data.into_parts();
    events.extend(imputed.to_events()?);
    DatasetDir::new(out).write_dataset(&CohortDataset::new(patients, events))?;
    print_json(&json!({"engine_version": ENGINE_VERSION, "report": imputed.report}));
    Ok(())
}

fn read_query(arg: &str) -> Result<TemporalQuery, Error> {
    if arg.trim_start().starts_with('{') {
        return TemporalQuery::from_json(arg);
    }
    TemporalQuery::from_json(&io::read_text(Path::new(arg))?)
}

fn stats_cmd(
    dataset: &Path,
    vocab: Option<&Path>,
    manual: Option<&Path>,
    query: &str,
    budget: usize,
    out: &Path,
) -> CmdResult {
    let query = read_query(query)?;
    let engine = Engine::load(dataset, vocab, manual)?;
    let summary = attribute_summary(&engine.dataset)?;
    let aligned = seqlens::query::run_query(&engine.dataset, &query)?;
    let table = stats::StatsTable::compute(&engine.hierarchy, &aligned, &engine.labels)?;
    let cut = stats::select_cut(&engine.hierarchy, &table, budget)?;
    let points = stats::scatter_points(&engine.hierarchy, &table, &cut)?;
    let text = serde_json::to_string_pretty(&points).map_err(Error::from)? + "\n";
    io::write_text(out, &text)?;
    let female = summary.gender_share("female");
    print_json(&json!({
        "engine_version": ENGINE_VERSION,
        "cohort_size": summary.cohort_size,
        "positives": summary.positives,
        "prevalence": summary.prevalence,
        "female_share": female,
        "matched": aligned.matched_count(),
        "unmatched": aligned.unmatched_patient_ids.len(),
        "budget": budget,
        "points": points.len(),
        "objective": stats::objective(&engine.hierarchy, &table, &cut)?,
        "out": out,
    }));
    Ok(())
}

fn synth_cmd(config: Option<&Path>, out: &Path, fhir: bool) -> CmdResult {
    let mut config = match config {
        Some(path) => SynthConfig::from_json(&io::read_text(path)?)?,
        None => SynthConfig::default(),
    };
    config.fhir |= fhir;
    let output = synth::generate(&config)?;
    synth::write(&output, out)?;
    print_json(&json!({
        "engine_version": ENGINE_VERSION,
        "patients": output.manifest.patients,
        "positives": output.manifest.positives,
        "females": output.manifest.females,
        "events": output.manifest.events,
        "observations": output.manifest.observations,
        "out": out,
    }));
    Ok(())
}

fn serve(
    dataset: &Path,
    vocab: Option<&Path>,
    manual: Option<&Path>,
    addr: (String, u16),
    config: ApiConfig,
) -> CmdResult {
    let engine = Engine::load(dataset, vocab, manual)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::internal(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((addr.0.as_str(), addr.1))
            .await
            .map_err(|e| Failure {
                code: 2,
                kind: "bind",
                message: format!("cannot listen on {}:{}: {e}", addr.0, addr.1),
            })?;
        let local = listener.local_addr().map_err(|e| Failure::internal(e.to_string()))?;
        log::info!(
            "ready: serving {} patients on http://{local} (engine {ENGINE_VERSION})",
            engine.dataset.len()
        );
        api::serve(listener, AppState::new(Some(engine), config))
            .await
            .map_err(|e| Failure::internal(e.to_string()))
    })
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Ingest {
            input,
            loinc_allowlist,
            out,
        } => ingest(&input, &loinc_allowlist, &out),
        Command::Impute { dataset, out } => impute(&dataset, &out),
        Command::Stats {
            dataset,
            vocab,
            manual,
            query,
            budget,
            out,
        } => stats_cmd(&dataset, vocab.as_deref(), manual.as_deref(), &query, budget, &out),
        Command::Synth { config, out, fhir } => synth_cmd(config.as_deref(), &out, fhir),
        Command::Serve {
            dataset,
            vocab,
            manual,
            host,
            port,
            budget,
            session_timeout_minutes,
        } => serve(
            &dataset,
            vocab.as_deref(),
            manual.as_deref(),
            (host, port),
            ApiConfig {
                default_budget: budget,
                session_timeout: Duration::from_secs(session_timeout_minutes * 60),
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if cli.json_errors {
                let v = json!({"error": f.message, "kind": f.kind, "exit_code": f.code});
                eprintln!("{v}");
            } else {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
