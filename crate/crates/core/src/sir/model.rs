use super::contacts::{sample_contacts, Scratch};
use super::{
    AgentState, Compartment, ContactTable, CurveRow, EpidemicCurve, SirError, SirParams, SirState,
    FORMALISM_ID,
};
use crate::agreement::Evidence;
use crate::codec::{self, Encoder};
use crate::epi_data::TransitionMatrix;
use crate::hash::Hash32;
use crate::runtime::{Honest, Hooks, Prng};

/// Builds the initial state. Draws β once, then one infectious period per
/// agent in ascending id order.
pub fn init_sim(
    params: SirParams,
    matrix: TransitionMatrix,
    contacts: &ContactTable,
    prng: &mut Prng,
) -> Result<SirState, SirError> {
    params.validate()?;
    if matrix.n_locations() != params.n_locations {
        return Err(SirError::DimensionMismatch {
            params: params.n_locations,
            matrix: matrix.n_locations(),
        });
    }
    let invalid = |e: crate::runtime::InvalidRange| SirError::InvalidParams(e.to_string());
    let beta = prng
        .uniform_q32(params.beta_lo, params.beta_hi)
        .map_err(invalid)?;

    let mut agents = Vec::with_capacity(params.population as usize);
    for id in 0..params.population {
        agents.push(AgentState {
            agent_id: id,
            location: params.initial_location(id),
            compartment: Compartment::Susceptible,
            infected_at_step: None,
            recovered_at_step: None,
            infected_by: None,
            infectious_period_steps: prng
                .uniform_int(params.inf_period_lo, params.inf_period_hi)
                .map_err(invalid)?,
            contacts_per_step: contacts.contacts_for(id),
        });
    }
    for &id in &params.initial_infected {
        let a = &mut agents[id as usize];
        a.compartment = Compartment::Infected;
        a.infected_at_step = Some(0);
    }

    let mut state = SirState {
        params,
        matrix,
        step: 0,
        beta,
        agents,
        curve: EpidemicCurve::default(),
        pending_infections: Vec::new(),
    };
    let row = state.counts();
    state.curve.rows.push(row);
    Ok(state)
}

fn due(a: &AgentState, step: u64) -> bool {
    match (a.compartment, a.infected_at_step) {
        (Compartment::Infected, Some(t)) => step.saturating_sub(t) >= a.infectious_period_steps,
        _ => false,
    }
}

/// Phase 1: agents whose infectious period has elapsed become Recovered.
pub fn recover(state: &mut SirState, hooks: &mut dyn Hooks) {
    let step = state.step;
    if !state.agents.iter().any(|a| due(a, step)) || hooks.skip_recovery(step) {
        return;
    }
    for a in state.agents.iter_mut().filter(|a| due(a, step)) {
        a.compartment = Compartment::Recovered;
        a.recovered_at_step = Some(step);
    }
}

/// Phase 2: one Markov move per agent, ascending id, one draw each.
pub fn move_agents(state: &mut SirState, prng: &mut Prng) {
    for a in &mut state.agents {
        a.location = state.matrix.sample(a.location, prng);
    }
}

/// Phase 3: infected agents, ascending id, sample contacts and run one
/// Bernoulli(β) trial per susceptible contact not already pending.
pub fn transmit(state: &mut SirState, prng: &mut Prng, hooks: &mut dyn Hooks) {
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); state.params.n_locations as usize];
    for a in &state.agents {
        buckets[a.location as usize].push(a.agent_id as u32);
    }
    let mut pending = vec![false; state.agents.len()];
    let mut scratch = Scratch::default();
    let mut contacts = Vec::new();
    let mut sources = Vec::new();

    for a in &state.agents {
        if a.compartment != Compartment::Infected {
            continue;
        }
        let bucket = &buckets[a.location as usize];
        let self_pos = bucket
            .binary_search(&(a.agent_id as u32))
            .expect("agent is in its own location bucket");
        contacts.clear();
        sample_contacts(
            bucket,
            self_pos,
            a.contacts_per_step,
            prng,
            &mut scratch,
            &mut contacts,
        );
        for &c in &contacts {
            let c = c as usize;
            if state.agents[c].compartment != Compartment::Susceptible || pending[c] {
                continue;
            }
            let outcome = prng.bernoulli(state.beta);
            if hooks.bernoulli(state.step, outcome) {
                pending[c] = true;
                state.pending_infections.push(c as u64);
                sources.push(a.agent_id);
            }
        }
    }
    for (&c, source) in state.pending_infections.iter().zip(sources) {
        state.agents[c as usize].infected_by = Some(source);
    }
}

/// Phase 4: pending agents become infected as of the next step.
fn apply_pending(state: &mut SirState) {
    let next = state.step + 1;
    for id in std::mem::take(&mut state.pending_infections) {
        let a = &mut state.agents[id as usize];
        a.compartment = Compartment::Infected;
        a.infected_at_step = Some(next);
    }
}

pub fn step(state: &mut SirState, prng: &mut Prng) {
    step_with(state, prng, &mut Honest);
}

pub fn step_with(state: &mut SirState, prng: &mut Prng, hooks: &mut dyn Hooks) {
    debug_assert!(state.pending_infections.is_empty());
    recover(state, hooks);
    move_agents(state, prng);
    transmit(state, prng, hooks);
    apply_pending(state);
    state.step += 1;
    let row = state.counts();
    state.curve.rows.push(row);
}

/// Advances `n_steps` steps, leaving `n_steps` new curve rows.
pub fn run(state: &mut SirState, n_steps: u64, prng: &mut Prng) -> Result<(), SirError> {
    run_with(state, n_steps, prng, &mut Honest)
}

pub fn run_with(
    state: &mut SirState,
    n_steps: u64,
    prng: &mut Prng,
    hooks: &mut dyn Hooks,
) -> Result<(), SirError> {
    if n_steps == 0 {
        return Err(SirError::ZeroSteps);
    }
    for _ in 0..n_steps {
        step_with(state, prng, hooks);
    }
    Ok(())
}

/// Digest of the scenario parameters and mobility matrix.
pub(crate) fn params_digest(params: &SirParams, matrix: &TransitionMatrix) -> Hash32 {
    let mut enc = Encoder::new();
    enc.value(params).value(matrix);
    Hash32::digest(&enc.finish())
}

/// Public summary of a run: the curve plus digests, with no per-agent data.
pub fn publish_evidence(state: &SirState) -> Evidence {
    Evidence {
        formalism_id: FORMALISM_ID.to_string(),
        params_digest: params_digest(&state.params, &state.matrix),
        population: state.params.population,
        curve: state.curve.clone(),
        commitment: Hash32::digest(&codec::to_bytes(state)),
    }
}

impl CurveRow {
    fn is_monotone_after(&self, prev: &CurveRow) -> bool {
        self.recovered >= prev.recovered && self.susceptible <= prev.susceptible
    }
}

impl EpidemicCurve {
    /// Rows sum to `population`, recovered never falls, susceptible never
    /// rises.
    pub fn is_well_formed(&self, population: u64) -> bool {
        self.rows.iter().all(|r| r.total() == population)
            && self.rows.windows(2).all(|w| w[1].is_monotone_after(&w[0]))
    }
}
