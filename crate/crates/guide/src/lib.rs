//! The sdelab guide, compiled so its snippets run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/landscapes-and-noise.md")]
pub mod landscapes_and_noise {}

#[doc = include_str!("../../../book/src/compressors-and-optimizers.md")]
pub mod compressors_and_optimizers {}

#[doc = include_str!("../../../book/src/sde-models.md")]
pub mod sde_models {}

#[doc = include_str!("../../../book/src/bounds-and-phases.md")]
pub mod bounds_and_phases {}

#[doc = include_str!("../../../book/src/scaling-rules.md")]
pub mod scaling_rules {}

#[doc = include_str!("../../../book/src/stationary.md")]
pub mod stationary {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
