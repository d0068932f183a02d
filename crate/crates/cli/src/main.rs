//! `trajforge` command-line driver.
//!
//! Exit codes: 0 ok, 1 I/O or other failure, 2 invalid config, 3 missing or
//! unparseable input, 4 schema or duplicate-tool error, 5 transport or
//! protocol failure, 6 empty retained corpus, 7 some rollouts failed,
//! 8 could not bind the server socket.

mod exit;

use std::collections::BTreeMap;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args as ClapArgs, Parser, Subcommand};
use serde::Deserialize;
use serde_json::Value;

use trajforge::env::Environment;
use trajforge::pipeline::{
    self, read_file, reference_script, run_group, score_group, write_file, EmbedderChoice,
    GeneratorChoice, PipelineConfig, PipelineError, RolloutError, CORPUS_FILE, GRAPH_FILE,
    REPORT_FILE, SCORES_FILE, TRAJECTORIES_FILE, TRANSCRIPTS_FILE,
};
use trajforge::react::{
    system_prompt, transcripts_from_jsonl, transcripts_to_jsonl, ExternalPolicy, Policy,
    PolicyError, ScriptedPolicy,
};
use trajforge::reward::{MatchMode, RewardWeights};
use trajforge::rpc::{serve, EnvService};
use trajforge::sampler::{trajectories_from_jsonl, trajectories_to_jsonl};
use trajforge::synth::{corpus_from_jsonl, corpus_to_jsonl};
use trajforge::{Args, TaskCandidate, ToolGraph};

use exit::{exit_code, Exit};

#[derive(Parser)]
#[command(
    name = "trajforge",
    version,
    about = "Synthesize, validate and score tool-use tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the tool dependency graph and write it as JSON.
    Graph(Common),
    /// Sample trajectories by walking the graph.
    Sample(Common),
    /// Turn trajectories into task candidates.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Trajectories JSONL; defaults to <out-dir>/trajectories.jsonl.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Deduplicate, diversify and ground a candidate corpus.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Candidate corpus JSONL.
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Run graph, sampling, synthesis and validation end to end.
    Pipeline(Common),
    /// Roll a policy out on every corpus task and score the groups.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Corpus JSONL; defaults to <out-dir>/corpus.jsonl.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Scripted steps JSONL (`{task_id, rollout?, steps}` per line), or
        /// `reference` to replay each task's reference calls.
        #[arg(long)]
        scripted: Option<String>,
    },
    /// Score recorded transcripts against a corpus.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Serve the simulator over newline-delimited JSON-RPC.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
    },
    /// Execute one tool call in a fresh episode and print the result.
    Exec {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tool: String,
        /// Arguments as a JSON object.
        #[arg(long, default_value = "{}")]
        args: String,
    },
    /// Print the tool manifest of the configured registry.
    ExportManifest(Common),
}

/// Flags shared by all commands; each overrides the config field of the same
/// name.
#[derive(ClapArgs, Clone, Default)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    seed_file: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Maximum trajectory length.
    #[arg(long)]
    depth: Option<usize>,
    /// Maximum trajectories per entry node.
    #[arg(long)]
    per_entry: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dedup_threshold: Option<f64>,
    #[arg(long)]
    mmr_lambda: Option<f64>,
    #[arg(long)]
    mmr_k: Option<usize>,
    #[arg(long)]
    mmr_fraction: Option<f64>,
    /// `w1,w2,w3,w4`
    #[arg(long)]
    weights: Option<RewardWeights>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    obs_budget: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// `template` or `external`
    #[arg(long)]
    generator: Option<GeneratorChoice>,
    #[arg(long)]
    generator_endpoint: Option<String>,
    /// `hash` or `external`
    #[arg(long)]
    embedder: Option<EmbedderChoice>,
    #[arg(long)]
    embedder_endpoint: Option<String>,
    #[arg(long)]
    policy_endpoint: Option<String>,
    /// `strict` or `flexible`
    #[arg(long)]
    match_mode: Option<MatchMode>,
    #[arg(long)]
    relaxed_json: bool,
}

macro_rules! overlay {
    ($cfg:ident, $c:ident, $($f:ident),+) => {
        $(if let Some(v) = $c.$f.clone() { $cfg.$f = v; })+
    };
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_json_file(p)?,
            None => PipelineConfig::default(),
        };
        let c = self;
        overlay!(
            cfg,
            c,
            out_dir,
            depth,
            per_entry,
            seed,
            dedup_threshold,
            mmr_lambda,
            mmr_fraction,
            weights,
            t_max,
            obs_budget,
            group_size,
            epsilon,
            temperature,
            generator,
            embedder,
            match_mode
        );
        if c.manifest.is_some() {
            cfg.manifest = c.manifest.clone();
            cfg.endpoint = None;
        }
        if c.endpoint.is_some() {
            cfg.endpoint = c.endpoint.clone();
            cfg.manifest = None;
        }
        if c.seed_file.is_some() {
            cfg.seed_file.clone_from(&c.seed_file);
        }
        for (dst, src) in [
            (&mut cfg.generator_endpoint, &c.generator_endpoint),
            (&mut cfg.embedder_endpoint, &c.embedder_endpoint),
            (&mut cfg.policy_endpoint, &c.policy_endpoint),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        if c.mmr_k.is_some() {
            cfg.mmr_k = c.mmr_k;
        }
        if c.relaxed_json {
            cfg.relaxed_json = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Graph(c) => cmd_graph(&c.resolve()?),
        Command::Sample(c) => cmd_sample(&c.resolve()?),
        Command::Synth {
            common,
            trajectories,
        } => cmd_synth(&common.resolve()?, trajectories),
        Command::Validate { common, candidates } => cmd_validate(&common.resolve()?, &candidates),
        Command::Pipeline(c) => cmd_pipeline(&c.resolve()?),
        Command::Rollout {
            common,
            corpus,
            scripted,
        } => cmd_rollout(&common.resolve()?, corpus, scripted),
        Command::Score {
            common,
            transcripts,
            corpus,
        } => cmd_score(&common.resolve()?, &transcripts, corpus),
        Command::Serve { common, bind } => cmd_serve(&common.resolve()?, &bind),
        Command::Exec { common, tool, args } => cmd_exec(&common.resolve()?, &tool, &args),
        Command::ExportManifest(c) => {
            let reg = c.resolve()?.load_registry()?;
            println!("{}", serde_json::to_string_pretty(&reg.to_manifest())?);
            Ok(())
        }
    }
}

fn cmd_graph(cfg: &PipelineConfig) -> Result<()> {
    let registry = cfg.load_registry()?;
    let seed = cfg.load_seed()?;
    let graph = ToolGraph::build(&registry, &seed);
    write_file(&cfg.out_dir.join(GRAPH_FILE), &graph.to_export_json())?;
    println!(
        "nodes={} edges={} entries={}",
        graph.nodes().len(),
        graph.edges().len(),
        graph.entry_nodes().len()
    );
    Ok(())
}

fn cmd_sample(cfg: &PipelineConfig) -> Result<()> {
    let env = cfg.environment()?;
    let seed = cfg.load_seed()?;
    let (_, trajs) = pipeline::stage_sample(cfg, &env, &seed)?;
    write_file(
        &cfg.out_dir.join(TRAJECTORIES_FILE),
        &trajectories_to_jsonl(&trajs),
    )?;
    println!("trajectories={}", trajs.len());
    Ok(())
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn load_corpus(path: &Path) -> Result<Vec<TaskCandidate>> {
    Ok(corpus_from_jsonl(&read_file(path)?).map_err(|e| parse_err(path, e))?)
}

fn cmd_synth(cfg: &PipelineConfig, trajectories: Option<PathBuf>) -> Result<()> {
    let path = trajectories.unwrap_or_else(|| cfg.out_dir.join(TRAJECTORIES_FILE));
    let trajs = trajectories_from_jsonl(&read_file(&path)?).map_err(|e| parse_err(&path, e))?;
    let registry = cfg.load_registry()?;
    let out = pipeline::stage_synth(cfg, &registry, &trajs);
    write_file(
        &cfg.out_dir.join("candidates.jsonl"),
        &corpus_to_jsonl(&out.candidates),
    )?;
    println!(
        "candidates={} failures={}",
        out.candidates.len(),
        out.failures.len()
    );
    Ok(())
}

fn cmd_validate(cfg: &PipelineConfig, candidates: &Path) -> Result<()> {
    let tasks = load_corpus(candidates)?;
    let env = cfg.environment()?;
    let seed = cfg.load_seed()?;
    let report = pipeline::stage_validate(cfg, &env, &seed, &tasks)?;
    write_file(
        &cfg.out_dir.join(CORPUS_FILE),
        &corpus_to_jsonl(&report.retained),
    )?;
    write_file(&cfg.out_dir.join(REPORT_FILE), &report.to_json())?;
    println!(
        "input={} retained={}",
        report.input_count, report.retained_count
    );
    if report.retained.is_empty() {
        return Err(PipelineError::EmptyCorpus.into());
    }
    Ok(())
}

fn cmd_pipeline(cfg: &PipelineConfig) -> Result<()> {
    let out = pipeline::run_pipeline(cfg)?;
    let s = &out.summary;
    println!(
        "trajectories={} synthesized={} synthesis_failures={} retained={}",
        s.trajectories, s.synthesized, s.synthesis_failures, s.retained
    );
    Ok(())
}

#[derive(Deserialize)]
struct ScriptLine {
    task_id: String,
    #[serde(default)]
    rollout: Option<usize>,
    steps: Vec<String>,
}

enum PolicySource {
    Reference,
    Scripts(BTreeMap<(String, Option<usize>), Vec<String>>),
    Endpoint(String, String),
}

impl PolicySource {
    fn make(&self, task: &TaskCandidate, g: usize) -> Result<Box<dyn Policy>, PolicyError> {
        match self {
            PolicySource::Reference => Ok(Box::new(ScriptedPolicy::new(reference_script(task)))),
            PolicySource::Scripts(m) => m
                .get(&(task.task_id.clone(), Some(g)))
                .or_else(|| m.get(&(task.task_id.clone(), None)))
                .map(|s| Box::new(ScriptedPolicy::new(s.clone())) as Box<dyn Policy>)
                .ok_or_else(|| PolicyError(format!("no script for {} rollout {g}", task.task_id))),
            PolicySource::Endpoint(e, system) => {
                Ok(Box::new(ExternalPolicy::new(e.clone(), system.clone())))
            }
        }
    }
}

fn cmd_rollout(
    cfg: &PipelineConfig,
    corpus: Option<PathBuf>,
    scripted: Option<String>,
) -> Result<()> {
    let env = cfg.environment()?;
    let seed = cfg.load_seed()?;
    let corpus = corpus.unwrap_or_else(|| cfg.out_dir.join(CORPUS_FILE));
    let tasks = load_corpus(&corpus)?;
    let source = match (scripted.as_deref(), &cfg.policy_endpoint) {
        (Some("reference"), _) => PolicySource::Reference,
        (Some(path), _) => {
            let path = Path::new(path);
            let mut m = BTreeMap::new();
            for (i, line) in read_file(path)?
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
            {
                let s: ScriptLine = serde_json::from_str(line)
                    .map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))?;
                m.insert((s.task_id, s.rollout), s.steps);
            }
            PolicySource::Scripts(m)
        }
        (None, Some(e)) => PolicySource::Endpoint(e.clone(), system_prompt(env.registry())),
        (None, None) => {
            return Err(PipelineError::Config(
                "rollout needs --scripted or --policy-endpoint".into(),
            )
            .into())
        }
    };
    let mut transcripts = Vec::new();
    let mut scores = Vec::new();
    let mut skipped = 0usize;
    let mut factory = |t: &TaskCandidate, g: usize| source.make(t, g);
    for task in &tasks {
        match run_group(cfg, &env, &seed, task, &mut factory) {
            Ok(r) => {
                transcripts.extend(r.transcripts);
                scores.extend(r.scores);
            }
            Err(RolloutError::Policy(e)) => {
                log::warn!("skipping {}: {e}", task.task_id);
                skipped += 1;
            }
            Err(RolloutError::Pipeline(e)) => return Err(e.into()),
        }
    }
    write_file(
        &cfg.out_dir.join(TRANSCRIPTS_FILE),
        &transcripts_to_jsonl(&transcripts),
    )?;
    write_file(&cfg.out_dir.join(SCORES_FILE), &jsonl(&scores))?;
    println!(
        "tasks={} rollouts={} skipped={skipped}",
        tasks.len(),
        transcripts.len()
    );
    if skipped > 0 {
        return Err(Exit::PartialRollout(skipped).into());
    }
    Ok(())
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for i in items {
        s.push_str(&serde_json::to_string(i).expect("serializable"));
        s.push('\n');
    }
    s
}

fn cmd_score(cfg: &PipelineConfig, transcripts: &Path, corpus: Option<PathBuf>) -> Result<()> {
    let env = cfg.environment()?;
    let seed = cfg.load_seed()?;
    let corpus = corpus.unwrap_or_else(|| cfg.out_dir.join(CORPUS_FILE));
    let tasks: BTreeMap<String, TaskCandidate> = load_corpus(&corpus)?
        .into_iter()
        .map(|t| (t.task_id.clone(), t))
        .collect();
    let ts =
        transcripts_from_jsonl(&read_file(transcripts)?).map_err(|e| parse_err(transcripts, e))?;
    let mut groups: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for t in &ts {
        groups
            .entry(t.task_id.as_str())
            .or_default()
            .push(t.clone());
    }
    let mut scores = Vec::new();
    for (id, group) in groups {
        let task = tasks
            .get(id)
            .with_context(|| format!("transcript task {id} is not in the corpus"))
            .map_err(|e| parse_err(&corpus, e))?;
        scores.extend(score_group(cfg, &env, &seed, task, &group)?);
    }
    let text = jsonl(&scores);
    write_file(&cfg.out_dir.join(SCORES_FILE), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_serve(cfg: &PipelineConfig, bind: &str) -> Result<()> {
    let env: Arc<Environment> = cfg.environment()?;
    let seed = cfg.load_seed()?;
    let service = Arc::new(EnvService::new(env, seed, cfg.seed).map_err(PipelineError::from)?);
    let listener = TcpListener::bind(bind).map_err(|e| Exit::Bind(format!("{bind}: {e}")))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    serve(listener, service)?;
    Ok(())
}

fn cmd_exec(cfg: &PipelineConfig, tool: &str, args: &str) -> Result<()> {
    let env = cfg.environment()?;
    let seed = cfg.load_seed()?;
    let args: Args = match serde_json::from_str::<Value>(args) {
        Ok(Value::Object(m)) => m,
        Ok(_) => return Err(PipelineError::Config("--args must be a JSON object".into()).into()),
        Err(e) => return Err(PipelineError::Config(format!("--args: {e}")).into()),
    };
    let mut ep = env
        .create_episode(&seed, cfg.seed)
        .map_err(PipelineError::from)?;
    let result = ep.call(tool, &args);
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}
