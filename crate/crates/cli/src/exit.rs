use trajforge::pipeline::PipelineError;
use trajforge::registry::RegistryError;
use trajforge::sampler::SamplerError;

pub const OTHER: u8 = 1;
pub const CONFIG: u8 = 2;
pub const PARSE: u8 = 3;
pub const SCHEMA: u8 = 4;
pub const TRANSPORT: u8 = 5;
pub const EMPTY_CORPUS: u8 = 6;
pub const PARTIAL_ROLLOUT: u8 = 7;
pub const BIND: u8 = 8;

/// Failures that exist only at the command level.
#[derive(Debug, thiserror::Error)]
pub enum Exit {
    #[error("{0} task(s) were skipped after policy errors")]
    PartialRollout(usize),
    #[error("cannot bind {0}")]
    Bind(String),
}

fn registry_code(e: &RegistryError) -> u8 {
    match e {
        RegistryError::Io { .. } | RegistryError::Parse(_) => PARSE,
        RegistryError::DuplicateTool(_) | RegistryError::Schema { .. } => SCHEMA,
        RegistryError::Transport(_) | RegistryError::Protocol(_) => TRANSPORT,
    }
}

fn pipeline_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Config(_) => CONFIG,
        PipelineError::Registry(r) => registry_code(r),
        PipelineError::Env(_) => SCHEMA,
        PipelineError::Sampler(SamplerError::Config(_)) => CONFIG,
        PipelineError::Sampler(_) => OTHER,
        PipelineError::Provider(_) => TRANSPORT,
        PipelineError::Io { .. } => OTHER,
        PipelineError::Parse { .. } => PARSE,
        PipelineError::EmptyCorpus => EMPTY_CORPUS,
    }
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return pipeline_code(p);
        }
        if let Some(r) = cause.downcast_ref::<RegistryError>() {
            return registry_code(r);
        }
        if let Some(x) = cause.downcast_ref::<Exit>() {
            return match x {
                Exit::PartialRollout(_) => PARTIAL_ROLLOUT,
                Exit::Bind(_) => BIND,
            };
        }
    }
    OTHER
}
