//! The simulation as a contract: state is the canonical [`SirState`] bytes.
//!
//! | method    | args          | effect                                  |
//! |-----------|---------------|-----------------------------------------|
//! | `step`    | empty         | one step; event = the new curve row     |
//! | `run`     | `u64` n ≥ 1   | n steps; event = the n new curve rows   |
//! | `publish` | empty         | no state change; event = [`Evidence`]   |
//!
//! [`Evidence`]: crate::agreement::Evidence

use serde::{Deserialize, Serialize};

use super::{init_sim, publish_evidence, run_with, ContactTable, SirError, SirParams, SirState};
use crate::codec::{self, Canonical, DecodeError, Decoder, Encoder};
use crate::epi_data::TransitionMatrix;
use crate::runtime::{ContractError, Hooks, Prng};

pub const METHODS: &[&str] = &["step", "run", "publish"];

/// Deploy payload. Initialization draws from `Prng::new(params.scenario_seed)`
/// so the initial state depends on the scenario alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SirInit {
    pub params: SirParams,
    pub matrix: TransitionMatrix,
    pub contacts: ContactTable,
}

impl Canonical for SirInit {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.params)
            .value(&self.matrix)
            .value(&self.contacts);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            params: dec.value()?,
            matrix: dec.value()?,
            contacts: dec.value()?,
        })
    }
}

impl SirInit {
    pub fn initial_state(&self) -> Result<SirState, SirError> {
        let mut prng = Prng::new(self.params.scenario_seed);
        init_sim(
            self.params.clone(),
            self.matrix.clone(),
            &self.contacts,
            &mut prng,
        )
    }
}

pub(crate) fn init(payload: &[u8]) -> Result<Vec<u8>, ContractError> {
    let init: SirInit = codec::from_bytes(payload)?;
    Ok(codec::to_bytes(&init.initial_state()?))
}

pub(crate) fn call(
    state: &[u8],
    method: &str,
    args: &[u8],
    prng: &mut Prng,
    hooks: &mut dyn Hooks,
) -> Result<(Vec<u8>, Vec<Vec<u8>>), ContractError> {
    let mut sim: SirState = codec::from_bytes(state)?;
    let n_steps = match method {
        "step" => {
            Decoder::new(args).finish()?;
            1
        }
        "run" => codec::from_bytes::<u64>(args)?,
        "publish" => {
            Decoder::new(args).finish()?;
            let evidence = codec::to_bytes(&publish_evidence(&sim));
            return Ok((state.to_vec(), vec![evidence]));
        }
        other => unreachable!("runtime checked method table, got {other}"),
    };
    let before = sim.curve.len();
    run_with(&mut sim, n_steps, prng, hooks)?;
    let mut enc = Encoder::new();
    enc.list(&sim.curve.rows[before..]);
    Ok((codec::to_bytes(&sim), vec![enc.finish()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agreement::Evidence;
    use crate::runtime::{Honest, Q32};
    use crate::sir::CurveRow;

    fn payload() -> Vec<u8> {
        codec::to_bytes(&SirInit {
            params: SirParams {
                population: 20,
                n_locations: 2,
                beta_lo: Q32::HALF,
                beta_hi: Q32::ONE,
                inf_period_lo: 2,
                inf_period_hi: 4,
                initial_infected: vec![0, 1],
                initial_locations: Default::default(),
                scenario_seed: 77,
            },
            matrix: TransitionMatrix::new(
                2,
                vec![
                    vec![(0, Q32::HALF), (1, Q32::HALF)],
                    vec![(0, Q32::HALF), (1, Q32::HALF)],
                ],
            )
            .unwrap(),
            contacts: ContactTable::uniform(3),
        })
    }

    #[test]
    fn run_and_publish() {
        let state = init(&payload()).unwrap();
        let mut prng = Prng::new(1);
        let (state, events) =
            call(&state, "run", &codec::to_bytes(&5u64), &mut prng, &mut Honest).unwrap();
        let rows: Vec<CurveRow> = Decoder::new(&events[0]).list().unwrap();
        assert_eq!(rows.len(), 5);

        let (same, events) = call(&state, "publish", &[], &mut prng, &mut Honest).unwrap();
        assert_eq!(same, state);
        let ev: Evidence = codec::from_bytes(&events[0]).unwrap();
        assert_eq!(ev.curve.len(), 6);
        assert_eq!(ev.commitment, crate::hash::Hash32::digest(&state));
    }

    #[test]
    fn bad_args_rejected() {
        let state = init(&payload()).unwrap();
        let mut prng = Prng::new(1);
        let zero = call(&state, "run", &codec::to_bytes(&0u64), &mut prng, &mut Honest);
        assert!(matches!(zero, Err(ContractError::Sir(SirError::ZeroSteps))));
        assert!(call(&state, "step", &[1], &mut prng, &mut Honest).is_err());
    }

    #[test]
    fn corrupted_state_is_an_error_not_a_panic() {
        let state = init(&payload()).unwrap();
        for i in 0..state.len() {
            let mut bad = state.clone();
            bad[i] ^= 0xFF;
            let _ = call(&bad, "step", &[], &mut Prng::new(0), &mut Honest);
        }
    }
}
