//! Distributed evaluation: interaction lists, the communication plan and the
//! five far-field phases plus the near field, run on simulated ranks.

mod lists;
mod passes;
mod plan;
pub mod serial;
mod setup;

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use lists::{build_interaction_lists, InteractionLists};
pub use passes::{run_rank, Expansion, RankOutput, RankState};
pub use plan::{build_m2l_comm_plan, chunk_samples, CommPlan, PlanEntry};
pub use setup::{build_setup, LevelData, NodeInfo, Setup, FIRST_EXPANSION_LEVEL};

use crate::error::{Error, Result};
use crate::kernel::Particle;
use crate::spmd::{spawn_world, CostLedger, MessageDescriptor, Scheduler, WorldOptions};
use crate::tree::AlignmentPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub wavelength: f64,
    pub digits: f64,
    /// Leaf box side in wavelengths.
    pub leaf_diameter: f64,
    pub n_ranks: usize,
    /// Per-destination M2L buffer cap, bytes.
    pub buffer_bytes: u64,
    pub alignment: AlignmentPolicy,
    pub one_particle_per_leaf: bool,
    pub seed: u64,
    pub scheduler: Scheduler,
    /// Translation operators beyond this many bytes are evaluated on the fly.
    pub operator_budget: u64,
    /// Force 2 (planar) or 3 (volume); inferred from the particles otherwise.
    pub dim_class: Option<u32>,
    pub audit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            wavelength: 1.0,
            digits: 3.0,
            leaf_diameter: 0.25,
            n_ranks: 1,
            buffer_bytes: u64::MAX,
            alignment: AlignmentPolicy::Aligned,
            one_particle_per_leaf: false,
            seed: 0,
            scheduler: Scheduler::Deterministic,
            operator_budget: 1 << 30,
            dim_class: None,
            audit: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_bytes == 0 {
            return Err(Error::InvalidInput("buffer limit must be positive".into()));
        }
        if self.n_ranks == 0 {
            return Err(Error::InvalidInput("need at least one rank".into()));
        }
        if !(self.digits > 0.0 && self.digits.is_finite()) {
            return Err(Error::InvalidInput(format!("digits must be positive, got {}", self.digits)));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidInput(format!("bad wavelength {}", self.wavelength)));
        }
        if !(self.leaf_diameter > 0.0 && self.leaf_diameter.is_finite()) {
            return Err(Error::InvalidInput(format!("bad leaf diameter {}", self.leaf_diameter)));
        }
        Ok(())
    }
}

pub struct EvalOutput {
    /// Potentials in input order.
    pub potentials: Vec<Complex64>,
    pub ledger: CostLedger,
    pub log: Vec<MessageDescriptor>,
    pub ranks: Vec<RankOutput>,
    pub setup: Arc<Setup>,
}

/// Runs a full evaluation with `config.n_ranks` simulated ranks.
pub fn evaluate_potential(particles: &[Particle], config: &RunConfig) -> Result<EvalOutput> {
    let setup = Arc::new(build_setup(particles, config)?);
    evaluate_with_setup(setup)
}

pub fn evaluate_with_setup(setup: Arc<Setup>) -> Result<EvalOutput> {
    let options = WorldOptions {
        scheduler: setup.config.scheduler,
        audit: setup.config.audit,
    };
    let world = spawn_world(setup.n_ranks(), options, |comm| {
        let setup = setup.clone();
        async move { run_rank(&setup, &comm).await }
    })?;
    let mut potentials = vec![Complex64::new(0.0, 0.0); setup.particles.len()];
    let mut seen = vec![false; potentials.len()];
    for out in &world.results {
        for &(i, v) in &out.potentials {
            potentials[i] = v;
            seen[i] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Protocol(format!("no rank produced the potential of particle {i}")));
    }
    Ok(EvalOutput {
        potentials,
        ledger: world.ledger,
        log: world.log,
        ranks: world.results,
        setup,
    })
}
