//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use trajforge::env::{desk_registry, desk_seed, Environment};
use trajforge::sampler::{sample_trajectories, DefaultArgumentGenerator, SamplerConfig};
use trajforge::synth::synthesize_tasks;
use trajforge::synth::template::TemplateGenerator;
use trajforge::validate::HashEmbedder;
use trajforge::{SeedData, TaskCandidate, ToolGraph, Trajectory};

pub struct Desk {
    pub env: Arc<Environment>,
    pub seed: SeedData,
    pub graph: ToolGraph,
}

pub fn desk() -> Desk {
    let registry = desk_registry();
    let seed = desk_seed();
    let graph = ToolGraph::build(&registry, &seed);
    let env = Arc::new(Environment::desk(registry).expect("desk environment builds"));
    Desk { env, seed, graph }
}

pub fn trajectories(d: &Desk, per_entry: usize) -> Vec<Trajectory> {
    let cfg = SamplerConfig {
        depth: 6,
        per_entry,
        rng_seed: 7,
    };
    sample_trajectories(
        &d.graph,
        &d.env,
        &d.seed,
        cfg,
        &mut DefaultArgumentGenerator::new(),
    )
    .expect("sampling succeeds")
}

pub fn candidates(d: &Desk, per_entry: usize) -> Vec<TaskCandidate> {
    synthesize_tasks(
        &trajectories(d, per_entry),
        d.env.registry(),
        6,
        &TemplateGenerator,
        0.7,
    )
    .candidates
}

pub fn embeddings(tasks: &[TaskCandidate]) -> Vec<Vec<f64>> {
    let e = HashEmbedder::default();
    tasks.iter().map(|t| e.embed_text(&t.instruction)).collect()
}
