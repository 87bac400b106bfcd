//! Built-in experiment specs, embedded from the repository's `presets/` directory.

use super::spec::ExperimentSpec;
use crate::error::{Error, Result};

const PRESETS: &[(&str, &str)] = &[
    ("fig-dcsgd-bounds", include_str!("../../../../presets/fig-dcsgd-bounds.json")),
    ("fig-divergence", include_str!("../../../../presets/fig-divergence.json")),
    ("fig-dsignsgd-phases", include_str!("../../../../presets/fig-dsignsgd-phases.json")),
    ("fig-dsignsgd-quadratic", include_str!("../../../../presets/fig-dsignsgd-quadratic.json")),
    ("fig-dsignsgd-quadratic-sde", include_str!("../../../../presets/fig-dsignsgd-quadratic-sde.json")),
    ("fig-heavy-tails-dcsgd", include_str!("../../../../presets/fig-heavy-tails-dcsgd.json")),
    ("fig-heavy-tails-dsignsgd", include_str!("../../../../presets/fig-heavy-tails-dsignsgd.json")),
    ("fig-noise-level-dcsgd", include_str!("../../../../presets/fig-noise-level-dcsgd.json")),
    ("fig-noise-level-dsignsgd", include_str!("../../../../presets/fig-noise-level-dsignsgd.json")),
    ("fig-normtopk-heavy-tails", include_str!("../../../../presets/fig-normtopk-heavy-tails.json")),
    ("fig-rosenbrock-dsgd", include_str!("../../../../presets/fig-rosenbrock-dsgd.json")),
    ("fig-rosenbrock-dsgd-sde", include_str!("../../../../presets/fig-rosenbrock-dsgd-sde.json")),
    ("fig-saddle-dcsgd", include_str!("../../../../presets/fig-saddle-dcsgd.json")),
    ("fig-saddle-dcsgd-sde", include_str!("../../../../presets/fig-saddle-dcsgd-sde.json")),
    ("fig-scaling-dcsgd", include_str!("../../../../presets/fig-scaling-dcsgd.json")),
    ("fig-scaling-dsignsgd", include_str!("../../../../presets/fig-scaling-dsignsgd.json")),
    ("fig-speedup-dcsgd", include_str!("../../../../presets/fig-speedup-dcsgd.json")),
    ("fig-speedup-dsgd", include_str!("../../../../presets/fig-speedup-dsgd.json")),
    ("fig-speedup-dsignsgd", include_str!("../../../../presets/fig-speedup-dsignsgd.json")),
    ("fig-stationary-dcsgd", include_str!("../../../../presets/fig-stationary-dcsgd.json")),
    ("fig-stationary-dsignsgd", include_str!("../../../../presets/fig-stationary-dsignsgd.json")),
    ("fig-topk-heavy-tails", include_str!("../../../../presets/fig-topk-heavy-tails.json")),
    ("fig-weak-dcsgd", include_str!("../../../../presets/fig-weak-dcsgd.json")),
    ("fig-weak-dsgd", include_str!("../../../../presets/fig-weak-dsgd.json")),
    ("fig-weak-dsignsgd", include_str!("../../../../presets/fig-weak-dsignsgd.json")),
];

/// Names of every built-in spec, sorted.
pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Raw JSON text of a preset. Accepts a `presets/` prefix and `.json` suffix.
pub fn text(name: &str) -> Option<&'static str> {
    let key = name.strip_prefix("presets/").unwrap_or(name);
    let key = key.strip_suffix(".json").unwrap_or(key);
    PRESETS.iter().find(|(n, _)| *n == key).map(|(_, t)| *t)
}

pub fn get(name: &str) -> Result<ExperimentSpec> {
    let t = text(name).ok_or_else(|| Error::Unsupported(format!("no preset named `{name}`")))?;
    ExperimentSpec::from_json(t, name)
}
