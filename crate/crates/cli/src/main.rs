use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use affectlab_core::affect_space::{Octant, Scale};
use affectlab_core::experiments::{
    fixture_ratings, load_expert_csv, load_ratings_csv, reference_replay_store, run_rq1, run_rq2_generate, run_rq2_latent,
    run_rq2_numeric, run_rq3, write_run_dir, ElicitationCase, ExperimentId, ExpertPair, RunOptions, RunOutput,
};
use affectlab_core::llm_client::{
    BackendDescriptor, ChatBackend, ClientError, EngineBackend, HttpBackend, Message, MockBackend, RecordingBackend,
    Reply, ReplayBackend, ReplayMetadata, ReplayStore,
};
use affectlab_core::metrics;
use affectlab_core::occ_engine::{explain, AppraisalFrame, Appraiser, IntensityConfig};
use affectlab_core::par::Execution;
use affectlab_core::prompt_kit::Prompt;
use affectlab_core::stimuli::{fixtures, load_dataset_csv, Dataset, FIXTURE_FILES};

#[derive(Parser)]
#[command(name = "affectlab", version, about = "Affect experiments over chat models: run, replay, appraise, score")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write a run directory.
    Run(RunArgs),
    /// Appraise a frame file with the rule engine and print the prediction.
    Appraise(AppraiseArgs),
    /// Pearson correlation, p-value and RMSE between two CSV columns.
    Stats(StatsArgs),
    /// Inspect the embedded reference tables.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
    /// Run an experiment through a live backend and save the exchanges as a replay file.
    Record(RecordArgs),
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// List embedded fixtures.
    List,
    /// Print one fixture verbatim; `replay` prints the reference replay store.
    Dump { name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BackendKind {
    Replay,
    Mock,
    Engine,
    Http,
}

#[derive(clap::Args, Clone, Debug, Serialize)]
struct ExperimentArgs {
    /// rq1, rq2.1, rq2.2, rq2.3 or rq3.
    #[serde(serialize_with = "ser_display")]
    experiment: ExperimentId,
    /// anet20, words20 or a dataset CSV (rq1 only).
    #[arg(long, default_value = "anet20")]
    dataset: String,
    /// Worker count for independent sessions; 0 means all cores, 1 sequential.
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
    /// Leave the dominance explanation out of the rating instruction.
    #[arg(long)]
    no_dominance_clause: bool,
    /// Use the experimental perspective wording for word picks (rq2.2).
    #[arg(long)]
    perspective_prompt: bool,
    /// Expert mapping CSV (`id,expert_mapping`) for rq2.2.
    #[arg(long)]
    expert: Option<PathBuf>,
    /// Ratings CSV (`octant,rating`) for rq2.3; `reference` uses the published ratings.
    #[arg(long)]
    ratings: Option<String>,
}

fn ser_display<S: serde::Serializer>(v: &ExperimentId, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(v.as_str())
}

#[derive(clap::Args, Debug, Serialize)]
struct RunArgs {
    #[command(flatten)]
    #[serde(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, value_enum, default_value = "replay")]
    backend: BackendKind,
    /// Replay source: `reference` or a replay JSON file.
    #[arg(long, default_value = "reference")]
    fixtures: String,
    /// Fixed reply for the mock backend.
    #[arg(long, default_value = "Joy")]
    mock_reply: String,
    /// Run directory; defaults to runs/<experiment>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct RecordArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Backend to record from.
    #[arg(long, value_enum, default_value = "http")]
    backend: BackendKind,
    #[arg(long, default_value = "Joy")]
    mock_reply: String,
    /// Replay JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Merge into an existing replay file instead of starting fresh.
    #[arg(long)]
    append: bool,
}

#[derive(clap::Args, Debug)]
struct AppraiseArgs {
    /// JSON frame file.
    frame: PathBuf,
    /// Disconfirmed expectations are at least as intense as they were likely.
    #[arg(long)]
    scale_disconfirmation: bool,
}

#[derive(clap::Args, Debug)]
struct StatsArgs {
    /// CSV holding the x column (lines starting with `#` are skipped).
    #[arg(long)]
    file: PathBuf,
    #[arg(long)]
    x: String,
    /// CSV holding the y column; defaults to --file. Rows pair up by position.
    #[arg(long)]
    y_file: Option<PathBuf>,
    #[arg(long)]
    y: String,
    /// Scale of x, used to rescale before RMSE.
    #[arg(long, default_value = "unit_0_1")]
    x_scale: String,
    #[arg(long, default_value = "unit_0_1")]
    y_scale: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run(args) => cmd_run(&args),
        Command::Appraise(args) => cmd_appraise(&args),
        Command::Stats(args) => cmd_stats(&args),
        Command::Fixtures { command } => cmd_fixtures(&command),
        Command::Record(args) => cmd_record(&args),
    }
}

fn options(args: &ExperimentArgs) -> RunOptions {
    RunOptions {
        exec: Execution::with_parallelism(args.parallelism),
        dominance_clause: !args.no_dominance_clause,
        perspective_prompt: args.perspective_prompt,
        ..RunOptions::default()
    }
}

fn load_dataset(spec: &str) -> Result<Dataset> {
    if let Some(d) = fixtures().dataset(spec) {
        return Ok(d.clone());
    }
    let path = Path::new(spec);
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    let file = File::open(path).with_context(|| format!("dataset `{spec}` is neither embedded nor a readable file"))?;
    Ok(load_dataset_csv(name, file)?)
}

fn build_backend(kind: BackendKind, replay_source: &str, mock_reply: &str) -> Result<Box<dyn ChatBackend>> {
    Ok(match kind {
        BackendKind::Replay => {
            let store = if replay_source == "reference" {
                reference_replay_store(fixtures())
            } else {
                ReplayStore::load(Path::new(replay_source))?
            };
            Box::new(ReplayBackend::new(store))
        }
        BackendKind::Mock => Box::new(MockBackend::constant(mock_reply)),
        BackendKind::Engine => {
            let cases = ElicitationCase::from_fixture(&fixtures().elicitation);
            Box::new(EngineBackend::new(cases.iter().map(|c| (c.situation.clone(), c.frame()))))
        }
        BackendKind::Http => Box::new(HttpBackend::from_env()?),
    })
}

fn execute(args: &ExperimentArgs, backend: &dyn ChatBackend) -> Result<RunOutput> {
    let fx = fixtures();
    let opts = options(args);
    let out = match args.experiment {
        ExperimentId::Rq1 => run_rq1(&load_dataset(&args.dataset)?, backend, &opts)?,
        ExperimentId::Rq2Numeric => run_rq2_numeric(&fx.anet20, &fx.words20, Some(&fx.word_mapping), backend, &opts)?,
        ExperimentId::Rq2Latent => {
            let expert = match &args.expert {
                Some(p) => load_expert_csv(File::open(p).with_context(|| p.display().to_string())?)?,
                None => ExpertPair::from_mapping(&fx.word_mapping),
            };
            run_rq2_latent(&fx.anet20, &fx.words20, &expert, backend, &opts)?
        }
        ExperimentId::Rq2Generate => {
            let ratings = match args.ratings.as_deref() {
                None => BTreeMap::new(),
                Some("reference") => fixture_ratings(&fx.octants),
                Some(p) => load_ratings_csv(File::open(p).with_context(|| p.to_string())?)?,
            };
            run_rq2_generate(&Octant::all(), &ratings, backend, &opts)?
        }
        ExperimentId::Rq3 => run_rq3(&ElicitationCase::from_fixture(&fx.elicitation), backend, &opts)?,
    };
    Ok(out)
}

fn cmd_run(args: &RunArgs) -> Result<u8> {
    let backend = build_backend(args.backend, &args.fixtures, &args.mock_reply)?;
    let output = execute(&args.experiment, backend.as_ref())?;
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(args.experiment.experiment.as_str()));
    write_run_dir(&dir, args, &output)?;
    let report = &output.report;
    print!("{}", report.to_canonical_json());
    eprintln!(
        "{}: {} rows, {} parse failures, {} client failures; run directory {}",
        report.experiment,
        report.rows.len(),
        report.parse_failures,
        report.client_failures,
        dir.display()
    );
    Ok(if report.client_failures > 0 {
        1
    } else if report.parse_failures > 0 {
        2
    } else {
        0
    })
}

fn cmd_record(args: &RecordArgs) -> Result<u8> {
    let inner = build_backend(args.backend, "reference", &args.mock_reply)?;
    let model = inner.descriptor().model.unwrap_or_else(|| inner.descriptor().kind);
    let metadata = ReplayMetadata {
        model,
        captured: chrono::Utc::now().format("%Y-%m-%d").to_string(),
    };
    let recorder = RecordingBackend::new(DynBackend(inner), metadata);
    let output = execute(&args.experiment, &recorder)?;
    let mut store = recorder.into_store();
    if args.append && args.out.exists() {
        let mut existing = ReplayStore::load(&args.out)?;
        existing.sessions.extend(store.sessions);
        store = existing;
    }
    store.save(&args.out)?;
    eprintln!(
        "recorded {} sessions ({} client failures) to {}",
        output.transcripts.len(),
        output.report.client_failures,
        args.out.display()
    );
    Ok(if output.report.client_failures > 0 { 1 } else { 0 })
}

/// Owned trait object that can sit inside the generic recorder.
struct DynBackend(Box<dyn ChatBackend>);

impl ChatBackend for DynBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.0.descriptor()
    }

    fn reply(
        &self,
        session_key: &str,
        index: usize,
        history: &[Message],
        prompt: &Prompt,
    ) -> std::result::Result<Reply, ClientError> {
        self.0.reply(session_key, index, history, prompt)
    }
}

#[derive(Serialize)]
struct AppraisalOutput {
    #[serde(flatten)]
    prediction: affectlab_core::occ_engine::EmotionPrediction,
    trace: affectlab_core::occ_engine::Trace,
}

fn cmd_appraise(args: &AppraiseArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.frame).with_context(|| args.frame.display().to_string())?;
    let frame: AppraisalFrame = serde_json::from_str(&text).with_context(|| format!("{} is not a frame", args.frame.display()))?;
    let engine = Appraiser::new(IntensityConfig {
        scale_disconfirmation_by_expectation: args.scale_disconfirmation,
    });
    let prediction = engine.appraise(&frame).map_err(|e| anyhow!("invalid frame: {e}"))?;
    let trace = explain(&frame).map_err(|e| anyhow!("invalid frame: {e}"))?;
    println!("{}", serde_json::to_string_pretty(&AppraisalOutput { prediction, trace })?);
    Ok(0)
}

fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| path.display().to_string())?;
    let idx = reader
        .headers()?
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| anyhow!("{}: no column `{column}`", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(idx).unwrap_or("").trim();
        let x: f64 = cell
            .parse()
            .with_context(|| format!("{}: row {}: `{cell}` is not a number", path.display(), i + 1))?;
        out.push(x);
    }
    Ok(out)
}

fn cmd_stats(args: &StatsArgs) -> Result<u8> {
    let xs = read_column(&args.file, &args.x)?;
    let ys = read_column(args.y_file.as_deref().unwrap_or(&args.file), &args.y)?;
    let x_scale: Scale = args.x_scale.parse()?;
    let y_scale: Scale = args.y_scale.parse()?;
    if xs.len() != ys.len() {
        bail!("columns differ in length: {} vs {}", xs.len(), ys.len());
    }
    let rho = metrics::pearson(&xs, &ys)?;
    let p = metrics::p_value(rho, xs.len())?;
    let xu: Vec<f64> = xs.iter().map(|&x| x_scale.map_value(x, Scale::Unit0To1)).collect();
    let yu: Vec<f64> = ys.iter().map(|&y| y_scale.map_value(y, Scale::Unit0To1)).collect();
    let rmse = metrics::rmse(&xu, &yu)?;
    println!("n={}", xs.len());
    println!("rho={rho:.4}");
    println!("p={p:.4e}");
    println!("rmse={rmse:.4}");
    Ok(0)
}

fn cmd_fixtures(command: &FixturesCommand) -> Result<u8> {
    match command {
        FixturesCommand::List => {
            for (name, content) in FIXTURE_FILES {
                let rows = content.lines().filter(|l| !l.starts_with('#')).count().saturating_sub(1);
                println!("{name}\t{rows} rows");
            }
            println!("replay\t{} sessions", reference_replay_store(fixtures()).sessions.len());
        }
        FixturesCommand::Dump { name } => {
            if name == "replay" {
                println!("{}", reference_replay_store(fixtures()).to_json());
                return Ok(0);
            }
            let wanted = if name.ends_with(".csv") { name.clone() } else { format!("{name}.csv") };
            let (_, content) = FIXTURE_FILES
                .iter()
                .find(|(n, _)| *n == wanted)
                .ok_or_else(|| anyhow!("no fixture named `{name}`"))?;
            print!("{content}");
        }
    }
    Ok(0)
}
