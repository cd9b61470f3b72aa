//! Episodic environment over a diffusion model with random holding times.

use rand::RngCore;

use crate::dynamics::{
    default_substep, env_transition, env_transition_with_midpoint, sample_holding_time, Action, DiffusionModel,
    HoldingTimeSpec, StartState, Transition,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Env {
    pub model: DiffusionModel,
    pub holding: HoldingTimeSpec,
    pub start: StartState,
    /// Episode length in model time.
    pub horizon: f64,
    /// Euler–Maruyama substep; `None` uses the default rule.
    pub substep: Option<f64>,
    /// Record the state at `u/2` on every transition.
    pub record_midpoint: bool,
}

impl Env {
    pub fn new(model: DiffusionModel, holding: HoldingTimeSpec, start: StartState, horizon: f64) -> Result<Self> {
        holding.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("episode horizon must be positive, got {horizon}")));
        }
        Ok(Self { model, holding, start, horizon, substep: None, record_midpoint: false })
    }

    pub fn with_midpoint(mut self, on: bool) -> Self {
        self.record_midpoint = on;
        self
    }

    pub fn with_substep(mut self, substep: Option<f64>) -> Self {
        self.substep = substep;
        self
    }

    pub fn beta(&self) -> f64 {
        self.model.beta()
    }

    /// Integration substep used for a holding time `u` under `spec`.
    pub fn substep_for(&self, u: f64, spec: &HoldingTimeSpec) -> f64 {
        self.substep.unwrap_or_else(|| default_substep(u, spec.mean())).min(u)
    }

    pub fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut x = self.start.sample(rng);
        self.model.clamp(&mut x);
        x
    }

    /// Draw a holding time from the training spec and simulate one decision.
    pub fn step(&self, x: &[f64], a: &Action, rng: &mut dyn RngCore) -> Result<Transition> {
        let u = sample_holding_time(&self.holding, rng);
        self.step_for(x, a, u, &self.holding, rng)
    }

    pub fn step_for(
        &self,
        x: &[f64],
        a: &Action,
        u: f64,
        spec: &HoldingTimeSpec,
        rng: &mut dyn RngCore,
    ) -> Result<Transition> {
        let h = self.substep_for(u, spec);
        if self.record_midpoint {
            env_transition_with_midpoint(&self.model, x, a, u, h, rng)
        } else {
            env_transition(&self.model, x, a, u, h, rng)
        }
    }
}
