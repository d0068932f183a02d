//! End-to-end staging: graph, sampling, synthesis, validation, and grouped
//! rollouts with scoring.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{
    desk_registry, desk_seed, EnvError, Environment, DEFAULT_OBSERVATION_BUDGET,
    MIN_OBSERVATION_BUDGET,
};
use crate::graph::ToolGraph;
use crate::react::{
    run_rollout, ParseMode, Policy, PolicyError, RolloutConfig, RolloutTranscript, ACTION,
    ACTION_INPUT, DEFAULT_T_MAX, FINAL_ANSWER, THOUGHT,
};
use crate::registry::{
    load_registry_from_config, validate_arguments, RegistryError, RegistrySource, ToolRegistry,
};
use crate::reward::{
    compile_final_check, group_advantages, match_trajectories, score_trajectory, MatchMode,
    RewardError, RewardWeights, ScoreRecord, DEFAULT_EPSILON,
};
use crate::rpc::discover_tools;
use crate::sampler::{
    sample_trajectories, trajectories_to_jsonl, DefaultArgumentGenerator, SamplerConfig,
    SamplerError, Trajectory, DEFAULT_DEPTH, DEFAULT_PER_ENTRY,
};
use crate::seed::SeedData;
use crate::synth::{
    corpus_to_jsonl, display_value, synthesize_tasks, ExternalGenerator, Generator,
    SynthesisOutput, TaskCandidate, TemplateGenerator, DEFAULT_TEMPERATURE,
};
use crate::validate::{
    ground, validate_corpus, Embedder, ExternalEmbedder, HashEmbedder, ProviderError,
    ValidationConfig, ValidationReport, DEFAULT_DEDUP_THRESHOLD, DEFAULT_MMR_FRACTION,
    DEFAULT_MMR_LAMBDA,
};

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("environment error: {0}")]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("validation retained no tasks")]
    EmptyCorpus,
}

impl PipelineError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorChoice {
    #[default]
    Template,
    External,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderChoice {
    #[default]
    Hash,
    External,
}

macro_rules! choice_from_str {
    ($t:ty, $($name:literal => $v:expr),+) => {
        impl std::str::FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($v),)+
                    other => Err(format!("unknown choice {other:?}")),
                }
            }
        }
    };
}

choice_from_str!(GeneratorChoice, "template" => GeneratorChoice::Template, "external" => GeneratorChoice::External);
choice_from_str!(EmbedderChoice, "hash" => EmbedderChoice::Hash, "external" => EmbedderChoice::External);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Tool manifest; the built-in desk manifest when neither this nor
    /// `endpoint` is set.
    pub manifest: Option<PathBuf>,
    /// Discover tools from a running server instead of a file.
    pub endpoint: Option<String>,
    /// Seed data JSON; the built-in desk seed when unset.
    pub seed_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub depth: usize,
    pub per_entry: usize,
    pub seed: u64,
    pub dedup_threshold: f64,
    pub mmr_lambda: f64,
    pub mmr_k: Option<usize>,
    pub mmr_fraction: f64,
    pub weights: RewardWeights,
    pub t_max: usize,
    pub obs_budget: usize,
    pub group_size: usize,
    pub epsilon: f64,
    pub temperature: f64,
    pub generator: GeneratorChoice,
    pub generator_endpoint: Option<String>,
    pub embedder: EmbedderChoice,
    pub embedder_endpoint: Option<String>,
    pub policy_endpoint: Option<String>,
    pub match_mode: MatchMode,
    pub relaxed_json: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            endpoint: None,
            seed_file: None,
            out_dir: PathBuf::from("out"),
            depth: DEFAULT_DEPTH,
            per_entry: DEFAULT_PER_ENTRY,
            seed: 0,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            mmr_lambda: DEFAULT_MMR_LAMBDA,
            mmr_k: None,
            mmr_fraction: DEFAULT_MMR_FRACTION,
            weights: RewardWeights::default(),
            t_max: DEFAULT_T_MAX,
            obs_budget: DEFAULT_OBSERVATION_BUDGET,
            group_size: 4,
            epsilon: DEFAULT_EPSILON,
            temperature: DEFAULT_TEMPERATURE,
            generator: GeneratorChoice::Template,
            generator_endpoint: None,
            embedder: EmbedderChoice::Hash,
            embedder_endpoint: None,
            policy_endpoint: None,
            match_mode: MatchMode::Flexible,
            relaxed_json: false,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<(), PipelineError> {
    if !(0.0..=1.0).contains(&v) || v.is_nan() {
        return Err(PipelineError::Config(format!(
            "{name} must be in [0, 1], got {v}"
        )));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let c = |m: String| Err(PipelineError::Config(m));
        if self.manifest.is_some() && self.endpoint.is_some() {
            return c("set either manifest or endpoint, not both".into());
        }
        if self.depth < 1 {
            return c("depth must be at least 1".into());
        }
        if self.per_entry < 1 {
            return c("per_entry must be at least 1".into());
        }
        unit_interval("dedup_threshold", self.dedup_threshold)?;
        unit_interval("mmr_lambda", self.mmr_lambda)?;
        if !(self.mmr_fraction > 0.0 && self.mmr_fraction <= 1.0) {
            return c(format!(
                "mmr_fraction must be in (0, 1], got {}",
                self.mmr_fraction
            ));
        }
        if self.mmr_k == Some(0) {
            return c("mmr_k must be at least 1".into());
        }
        RewardWeights::new(self.weights.get()).map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.t_max < 1 {
            return c("t_max must be at least 1".into());
        }
        if self.obs_budget < MIN_OBSERVATION_BUDGET {
            return c(format!(
                "obs_budget must be at least {MIN_OBSERVATION_BUDGET}"
            ));
        }
        if self.group_size < 1 {
            return c("group_size must be at least 1".into());
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return c(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return c(format!(
                "temperature must be in [0, 2], got {}",
                self.temperature
            ));
        }
        if self.generator == GeneratorChoice::External && self.generator_endpoint.is_none() {
            return c("generator = external needs generator_endpoint".into());
        }
        if self.embedder == EmbedderChoice::External && self.embedder_endpoint.is_none() {
            return c("embedder = external needs embedder_endpoint".into());
        }
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            depth: self.depth,
            per_entry: self.per_entry,
            rng_seed: self.seed,
        }
    }

    pub fn validation(&self) -> ValidationConfig {
        ValidationConfig {
            dedup_threshold: self.dedup_threshold,
            mmr_lambda: self.mmr_lambda,
            mmr_k: self.mmr_k,
            mmr_fraction: self.mmr_fraction,
        }
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            t_max: self.t_max,
            observation_budget: self.obs_budget,
            parse_mode: ParseMode {
                relaxed_json: self.relaxed_json,
            },
        }
    }

    pub fn load_registry(&self) -> Result<ToolRegistry, PipelineError> {
        if let Some(p) = &self.manifest {
            Ok(load_registry_from_config(p)?)
        } else if let Some(e) = &self.endpoint {
            Ok(discover_tools(e)?)
        } else {
            Ok(desk_registry().with_source(RegistrySource::ConfigFile))
        }
    }

    pub fn load_seed(&self) -> Result<SeedData, PipelineError> {
        let Some(p) = &self.seed_file else {
            return Ok(desk_seed());
        };
        let text = fs::read_to_string(p).map_err(|e| PipelineError::Parse {
            path: p.display().to_string(),
            message: e.to_string(),
        })?;
        let v: Value = serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
            path: p.display().to_string(),
            message: e.to_string(),
        })?;
        SeedData::from_json(&v).map_err(|e| PipelineError::Parse {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    }

    /// The in-process desk simulator over the configured registry.
    pub fn environment(&self) -> Result<Arc<Environment>, PipelineError> {
        Ok(Arc::new(Environment::desk(self.load_registry()?)?))
    }

    pub fn generator(&self) -> Box<dyn Generator> {
        match (self.generator, &self.generator_endpoint) {
            (GeneratorChoice::External, Some(e)) => Box::new(ExternalGenerator::new(e.clone())),
            _ => Box::new(TemplateGenerator),
        }
    }

    pub fn embedder(&self) -> Box<dyn Embedder> {
        match (self.embedder, &self.embedder_endpoint) {
            (EmbedderChoice::External, Some(e)) => Box::new(ExternalEmbedder::new(e.clone())),
            _ => Box::new(HashEmbedder::default()),
        }
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| PipelineError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

pub fn stage_sample(
    cfg: &PipelineConfig,
    env: &Arc<Environment>,
    seed: &SeedData,
) -> Result<(ToolGraph, Vec<Trajectory>), PipelineError> {
    let graph = ToolGraph::build(env.registry(), seed);
    let mut gen = DefaultArgumentGenerator::new();
    let trajectories = sample_trajectories(&graph, env, seed, cfg.sampler(), &mut gen)?;
    Ok((graph, trajectories))
}

pub fn stage_synth(
    cfg: &PipelineConfig,
    registry: &ToolRegistry,
    trajectories: &[Trajectory],
) -> SynthesisOutput {
    let gen = cfg.generator();
    synthesize_tasks(
        trajectories,
        registry,
        cfg.depth,
        gen.as_ref(),
        cfg.temperature,
    )
}

pub fn stage_validate(
    cfg: &PipelineConfig,
    env: &Arc<Environment>,
    seed: &SeedData,
    tasks: &[TaskCandidate],
) -> Result<ValidationReport, PipelineError> {
    let embedder = cfg.embedder();
    let mut grounder = |t: &TaskCandidate| ground(t, env, seed);
    Ok(validate_corpus(
        tasks,
        &cfg.validation(),
        embedder.as_ref(),
        &mut grounder,
    )?)
}

/// Share of reference steps whose arguments pass schema validation.
pub fn schema_pass_count(registry: &ToolRegistry, tasks: &[TaskCandidate]) -> (usize, usize) {
    let mut pass = 0;
    let mut total = 0;
    for t in tasks {
        for s in &t.reference.steps {
            total += 1;
            if registry
                .get(&s.tool)
                .is_some_and(|spec| validate_arguments(spec, &s.args).is_ok())
            {
                pass += 1;
            }
        }
    }
    (pass, total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub trajectories: usize,
    pub synthesized: usize,
    pub synthesis_failures: usize,
    pub retained: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub graph: ToolGraph,
    pub trajectories: Vec<Trajectory>,
    pub synthesized: Vec<TaskCandidate>,
    pub report: ValidationReport,
    pub summary: PipelineSummary,
}

/// Runs every stage and writes trajectories, corpus and report under
/// `cfg.out_dir`. Output bytes depend only on the config when the template
/// generator and hashing embedder are selected.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let env = cfg.environment()?;
    let seed = cfg.load_seed()?;
    let (graph, trajectories) = stage_sample(cfg, &env, &seed)?;
    let synth = stage_synth(cfg, env.registry(), &trajectories);
    let report = stage_validate(cfg, &env, &seed, &synth.candidates)?;

    write_file(
        &cfg.out_dir.join(TRAJECTORIES_FILE),
        &trajectories_to_jsonl(&trajectories),
    )?;
    write_file(
        &cfg.out_dir.join(CORPUS_FILE),
        &corpus_to_jsonl(&report.retained),
    )?;
    write_file(&cfg.out_dir.join(REPORT_FILE), &report.to_json())?;

    let summary = PipelineSummary {
        trajectories: trajectories.len(),
        synthesized: synth.candidates.len(),
        synthesis_failures: synth.failures.len(),
        retained: report.retained_count,
    };
    if report.retained.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    Ok(PipelineOutput {
        graph,
        trajectories,
        synthesized: synth.candidates,
        report,
        summary,
    })
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// Step texts that replay a task's reference calls and then answer with
/// every string argument value.
pub fn reference_script(task: &TaskCandidate) -> Vec<String> {
    let mut steps: Vec<String> = task
        .reference
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let thought = task
                .thoughts
                .get(i.wrapping_sub(1))
                .filter(|_| i > 0)
                .cloned()
                .unwrap_or_else(|| "I will start with the first operation.".into());
            format!(
                "{THOUGHT}{thought}\n{ACTION}{}\n{ACTION_INPUT}{}",
                s.tool,
                serde_json::to_string(&s.args).expect("args serialize")
            )
        })
        .collect();
    let mut values: Vec<String> = Vec::new();
    for s in &task.reference.steps {
        for v in s.args.values().filter(|v| v.is_string()) {
            let d = display_value(v);
            if !values.contains(&d) {
                values.push(d);
            }
        }
    }
    steps.push(format!(
        "{THOUGHT}Everything requested is finished.\n{FINAL_ANSWER}Completed the request for {}.",
        values.join(", ")
    ));
    steps
}

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub transcripts: Vec<RolloutTranscript>,
    pub scores: Vec<ScoreRecord>,
}

/// Rebuilds the end state of a rollout by replaying its recorded calls in a
/// fresh episode of the task.
pub fn replay_end_state(
    env: &Arc<Environment>,
    seed: &SeedData,
    task: &TaskCandidate,
    t: &RolloutTranscript,
) -> Result<crate::env::Episode, EnvError> {
    let mut ep = env.create_episode(seed, task.provenance.rng_seed)?;
    for c in &t.calls {
        ep.call(&c.tool, &c.args);
    }
    Ok(ep)
}

/// Scores the rollouts of one task and attaches group-relative advantages
/// when there are at least two.
pub fn score_group(
    cfg: &PipelineConfig,
    env: &Arc<Environment>,
    seed: &SeedData,
    task: &TaskCandidate,
    transcripts: &[RolloutTranscript],
) -> Result<Vec<ScoreRecord>, PipelineError> {
    let check = compile_final_check(task, env, seed)
        .map_err(|e| log::warn!("{}: reference failed, rewards zeroed: {e}", task.task_id))
        .ok();
    let gold: Vec<(String, crate::registry::Args)> = task
        .reference
        .steps
        .iter()
        .map(|s| (s.tool.clone(), s.args.clone()))
        .collect();
    let mut scores = Vec::with_capacity(transcripts.len());
    for t in transcripts {
        let ep = replay_end_state(env, seed, task, t)?;
        let reward = score_trajectory(t, &task.reference, check.as_ref(), &ep, &cfg.weights);
        scores.push(ScoreRecord {
            task_id: task.task_id.clone(),
            rollout: t.rollout,
            components: reward.components,
            total: reward.total,
            zeroed: reward.zeroed,
            match_report: match_trajectories(&t.predicted_calls(), &gold, cfg.match_mode),
            advantage: None,
        });
    }
    let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
    match group_advantages(&totals, cfg.epsilon) {
        Ok(a) => {
            for (s, adv) in scores.iter_mut().zip(a.advantages) {
                s.advantage = Some(adv);
            }
        }
        Err(RewardError::DegenerateGroup(_)) => {}
        Err(e) => return Err(PipelineError::Config(e.to_string())),
    }
    Ok(scores)
}

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Builds the policy for rollout `g` of a task.
pub type PolicyFactory<'a> =
    dyn FnMut(&TaskCandidate, usize) -> Result<Box<dyn Policy>, PolicyError> + 'a;

/// Runs `group_size` rollouts of one task, each in a fresh episode, then
/// scores them as a group.
pub fn run_group(
    cfg: &PipelineConfig,
    env: &Arc<Environment>,
    seed: &SeedData,
    task: &TaskCandidate,
    policy_for: &mut PolicyFactory<'_>,
) -> Result<GroupResult, RolloutError> {
    let rollout_cfg = cfg.rollout();
    let mut transcripts = Vec::with_capacity(cfg.group_size);
    for g in 0..cfg.group_size {
        let mut policy = policy_for(task, g)?;
        let mut ep = env
            .create_episode(seed, task.provenance.rng_seed)
            .map_err(PipelineError::from)?;
        let mut t = run_rollout(policy.as_mut(), &mut ep, &task.instruction, &rollout_cfg)?;
        t.task_id = task.task_id.clone();
        t.rollout = g;
        transcripts.push(t);
    }
    let scores = score_group(cfg, env, seed, task, &transcripts)?;
    Ok(GroupResult {
        transcripts,
        scores,
    })
}
