//! Agent-based SIR simulation.
//!
//! Agents live at discrete locations and advance in one-hour steps. Each
//! step runs four phases in a fixed order:
//!
//! 1. **recover**: an agent infected at step `t` with period `d` recovers
//!    at the start of step `t + d`, so it is infectious for exactly `d`
//!    steps;
//! 2. **move**: every agent (in id order) takes one Markov move;
//! 3. **transmit**: every infected agent (in id order) samples up to `k`
//!    co-located contacts by partial Fisher–Yates and runs one Bernoulli(β)
//!    trial per susceptible, not-yet-pending contact;
//! 4. **apply**: pending agents become infected as of the next step.
//!
//! All randomness comes from one [`Prng`](crate::runtime::Prng) stream consumed in exactly that
//! order, and all arithmetic is integer, so a scenario plus a seed fixes the
//! whole trajectory bit for bit.

mod contacts;
pub mod contract;
mod model;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::epi_data::TransitionMatrix;
use crate::runtime::Q32;

pub use contacts::partial_shuffle;
pub use model::{
    init_sim, move_agents, publish_evidence, recover, run, run_with, step, step_with, transmit,
};

/// Formalism tag carried by every piece of evidence this model publishes.
pub const FORMALISM_ID: &str = "SIR-ABM/1";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SirError {
    #[error("matrix covers {matrix} locations but the scenario has {params}")]
    DimensionMismatch { params: u64, matrix: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("a run needs at least one step")]
    ZeroSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compartment {
    Susceptible,
    Infected,
    Recovered,
}

impl Canonical for Compartment {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(*self as u64);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u64()? {
            0 => Ok(Compartment::Susceptible),
            1 => Ok(Compartment::Infected),
            2 => Ok(Compartment::Recovered),
            tag => Err(DecodeError::BadTag {
                what: "compartment",
                tag,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: u64,
    pub location: u64,
    pub compartment: Compartment,
    pub infected_at_step: Option<u64>,
    pub recovered_at_step: Option<u64>,
    /// The agent whose contact caused the infection; none for index cases.
    pub infected_by: Option<u64>,
    /// Drawn once at initialization.
    pub infectious_period_steps: u64,
    pub contacts_per_step: u64,
}

impl Canonical for AgentState {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.agent_id)
            .u64(self.location)
            .value(&self.compartment)
            .option_u64(self.infected_at_step)
            .option_u64(self.recovered_at_step)
            .option_u64(self.infected_by)
            .u64(self.infectious_period_steps)
            .u64(self.contacts_per_step);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            agent_id: dec.u64()?,
            location: dec.u64()?,
            compartment: dec.value()?,
            infected_at_step: dec.option_u64()?,
            recovered_at_step: dec.option_u64()?,
            infected_by: dec.option_u64()?,
            infectious_period_steps: dec.u64()?,
            contacts_per_step: dec.u64()?,
        })
    }
}

/// Scenario parameters. β and the infectious period are drawn uniformly
/// from `[beta_lo, beta_hi]` and `[inf_period_lo, inf_period_hi]` hours.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SirParams {
    pub population: u64,
    pub n_locations: u64,
    pub beta_lo: Q32,
    pub beta_hi: Q32,
    pub inf_period_lo: u64,
    pub inf_period_hi: u64,
    #[serde(default)]
    pub initial_infected: Vec<u64>,
    /// Overrides the default placement `agent_id mod n_locations`.
    #[serde(default)]
    pub initial_locations: BTreeMap<u64, u64>,
    #[serde(default)]
    pub scenario_seed: u64,
}

impl SirParams {
    pub fn validate(&self) -> Result<(), SirError> {
        let bad = |msg: String| Err(SirError::InvalidParams(msg));
        if self.population == 0 || self.population > u32::MAX as u64 {
            return bad(format!("population {} out of range", self.population));
        }
        if self.n_locations == 0 || self.n_locations > u32::MAX as u64 {
            return bad(format!("location count {} out of range", self.n_locations));
        }
        if self.beta_lo > self.beta_hi {
            return bad("beta_lo exceeds beta_hi".into());
        }
        if self.inf_period_lo == 0 {
            return bad("infectious period must be at least one step".into());
        }
        if self.inf_period_lo > self.inf_period_hi {
            return bad("inf_period_lo exceeds inf_period_hi".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for &id in &self.initial_infected {
            if id >= self.population {
                return bad(format!("initial infected agent {id} not in population"));
            }
            if !seen.insert(id) {
                return bad(format!("agent {id} listed twice as initially infected"));
            }
        }
        for (&id, &loc) in &self.initial_locations {
            if id >= self.population {
                return bad(format!("placement for unknown agent {id}"));
            }
            if loc >= self.n_locations {
                return bad(format!("agent {id} placed at unknown location {loc}"));
            }
        }
        Ok(())
    }

    pub fn initial_location(&self, agent_id: u64) -> u64 {
        self.initial_locations
            .get(&agent_id)
            .copied()
            .unwrap_or(agent_id % self.n_locations)
    }
}

impl Canonical for SirParams {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.population)
            .u64(self.n_locations)
            .value(&self.beta_lo)
            .value(&self.beta_hi)
            .u64(self.inf_period_lo)
            .u64(self.inf_period_hi)
            .list(&self.initial_infected);
        enc.seq(
            self.initial_locations.len(),
            &self.initial_locations,
            |e, (a, l)| {
                e.u64(*a).u64(*l);
            },
        );
        enc.u64(self.scenario_seed);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let population = dec.u64()?;
        let n_locations = dec.u64()?;
        let beta_lo = dec.value()?;
        let beta_hi = dec.value()?;
        let inf_period_lo = dec.u64()?;
        let inf_period_hi = dec.u64()?;
        let initial_infected = dec.list()?;
        let placements: Vec<(u64, u64)> = dec.list()?;
        if !placements.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(DecodeError::invalid("placements", "not strictly ascending"));
        }
        let params = Self {
            population,
            n_locations,
            beta_lo,
            beta_hi,
            inf_period_lo,
            inf_period_hi,
            initial_infected,
            initial_locations: placements.into_iter().collect(),
            scenario_seed: dec.u64()?,
        };
        params
            .validate()
            .map_err(|e| DecodeError::invalid("sir params", e.to_string()))?;
        Ok(params)
    }
}

/// Contacts per step for each agent, with a fallback for agents without
/// an entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactTable {
    pub default: u64,
    #[serde(default)]
    pub per_agent: BTreeMap<u64, u64>,
}

impl ContactTable {
    pub fn uniform(k: u64) -> Self {
        Self {
            default: k,
            per_agent: BTreeMap::new(),
        }
    }

    pub fn contacts_for(&self, agent_id: u64) -> u64 {
        self.per_agent.get(&agent_id).copied().unwrap_or(self.default)
    }
}

impl Canonical for ContactTable {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.default);
        enc.seq(self.per_agent.len(), &self.per_agent, |e, (a, k)| {
            e.u64(*a).u64(*k);
        });
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let default = dec.u64()?;
        let pairs: Vec<(u64, u64)> = dec.list()?;
        if !pairs.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(DecodeError::invalid("contact table", "not strictly ascending"));
        }
        Ok(Self {
            default,
            per_agent: pairs.into_iter().collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveRow {
    pub susceptible: u64,
    pub infected: u64,
    pub recovered: u64,
}

impl CurveRow {
    pub fn total(&self) -> u64 {
        self.susceptible + self.infected + self.recovered
    }

    /// Everyone who has ever been infected.
    pub fn ever_infected(&self) -> u64 {
        self.infected + self.recovered
    }
}

impl Canonical for CurveRow {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.susceptible)
            .u64(self.infected)
            .u64(self.recovered);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            susceptible: dec.u64()?,
            infected: dec.u64()?,
            recovered: dec.u64()?,
        })
    }
}

/// Compartment counts per hour; row `t` describes the state after `t` steps.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpidemicCurve {
    pub rows: Vec<CurveRow>,
}

impl EpidemicCurve {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn infected(&self) -> impl Iterator<Item = u64> + '_ {
        self.rows.iter().map(|r| r.infected)
    }

    /// CSV with header `step,susceptible,infected,recovered`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,susceptible,infected,recovered\n");
        for (t, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{t},{},{},{}\n",
                r.susceptible, r.infected, r.recovered
            ));
        }
        out
    }
}

impl Canonical for EpidemicCurve {
    fn encode(&self, enc: &mut Encoder) {
        enc.list(&self.rows);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { rows: dec.list()? })
    }
}

/// Complete simulation state. It carries its parameters and mobility matrix
/// so that a contract can step it with nothing but its own bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SirState {
    pub params: SirParams,
    pub matrix: TransitionMatrix,
    pub step: u64,
    pub beta: Q32,
    pub agents: Vec<AgentState>,
    pub curve: EpidemicCurve,
    /// Within-step buffer; empty whenever the state is at rest.
    pub pending_infections: Vec<u64>,
}

impl SirState {
    pub fn population(&self) -> u64 {
        self.params.population
    }

    pub fn counts(&self) -> CurveRow {
        let mut row = CurveRow::default();
        for a in &self.agents {
            match a.compartment {
                Compartment::Susceptible => row.susceptible += 1,
                Compartment::Infected => row.infected += 1,
                Compartment::Recovered => row.recovered += 1,
            }
        }
        row
    }

    /// Structural checks applied whenever a state is decoded, so that a
    /// corrupted state is rejected instead of stepping into a panic.
    pub fn validate(&self) -> Result<(), String> {
        self.params.validate().map_err(|e| e.to_string())?;
        if self.matrix.n_locations() != self.params.n_locations {
            return Err("matrix and params disagree on location count".into());
        }
        if self.agents.len() as u64 != self.params.population {
            return Err("agent count differs from population".into());
        }
        if self.curve.len() as u64 != self.step + 1 {
            return Err("curve length does not match step".into());
        }
        if !self.pending_infections.is_empty() {
            return Err("pending infections outside a step".into());
        }
        if !(self.params.beta_lo <= self.beta && self.beta <= self.params.beta_hi) {
            return Err("beta outside its drawing interval".into());
        }
        for (i, a) in self.agents.iter().enumerate() {
            let fail = |what: &str| Err(format!("agent {i}: {what}"));
            if a.agent_id != i as u64 {
                return fail("id out of sequence");
            }
            if a.location >= self.params.n_locations {
                return fail("unknown location");
            }
            if a.infectious_period_steps == 0 {
                return fail("zero infectious period");
            }
            let within = |t: Option<u64>| t.is_none_or(|t| t <= self.step);
            if !within(a.infected_at_step) || !within(a.recovered_at_step) {
                return fail("event recorded in the future");
            }
            let consistent = match a.compartment {
                Compartment::Susceptible => {
                    a.infected_at_step.is_none() && a.recovered_at_step.is_none()
                }
                Compartment::Infected => {
                    a.infected_at_step.is_some() && a.recovered_at_step.is_none()
                }
                Compartment::Recovered => matches!(
                    (a.infected_at_step, a.recovered_at_step),
                    (Some(i), Some(r)) if i <= r
                ),
            };
            if !consistent {
                return fail("compartment inconsistent with its history");
            }
            let sourced = match (a.infected_at_step, a.infected_by) {
                (None | Some(0), None) => true,
                (Some(t), Some(src)) => t > 0 && src != a.agent_id && src < self.params.population,
                _ => false,
            };
            if !sourced {
                return fail("infection source inconsistent with its history");
            }
        }
        if self.curve.rows.iter().any(|r| r.total() != self.params.population) {
            return Err("curve row does not sum to population".into());
        }
        Ok(())
    }
}

impl Canonical for SirState {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.params)
            .value(&self.matrix)
            .u64(self.step)
            .value(&self.beta)
            .list(&self.agents)
            .value(&self.curve)
            .list(&self.pending_infections);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let state = Self {
            params: dec.value()?,
            matrix: dec.value()?,
            step: dec.u64()?,
            beta: dec.value()?,
            agents: dec.list()?,
            curve: dec.value()?,
            pending_infections: dec.list()?,
        };
        state
            .validate()
            .map_err(|reason| DecodeError::invalid("sir state", reason))?;
        Ok(state)
    }
}
