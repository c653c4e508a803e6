//! Deterministic smart-contract runtime with a hash-chained ledger, an
//! agent-based SIR epidemic contract, and an agreement contract that decides
//! whether evidence from two simulations is consistent.
//!
//! ```
//! use epichain::agreement::{compare, Outcome, Tolerances};
//! use epichain::epi_data::TransitionMatrix;
//! use epichain::runtime::Prng;
//! use epichain::sir::{init_sim, publish_evidence, run, ContactTable, SirParams};
//!
//! let params = SirParams {
//!     population: 200,
//!     n_locations: 4,
//!     beta_lo: "0.05".parse().unwrap(),
//!     beta_hi: "0.1".parse().unwrap(),
//!     inf_period_lo: 24,
//!     inf_period_hi: 72,
//!     initial_infected: vec![0],
//!     initial_locations: Default::default(),
//!     scenario_seed: 42,
//! };
//! let mut prng = Prng::new(params.scenario_seed);
//! let matrix = TransitionMatrix::identity(4);
//! let mut sim = init_sim(params, matrix, &ContactTable::uniform(3), &mut prng).unwrap();
//! run(&mut sim, 48, &mut prng).unwrap();
//!
//! let evidence = publish_evidence(&sim);
//! assert_eq!(evidence.curve.len(), 49);
//! let verdict = compare(&evidence, &evidence, &Tolerances::default()).unwrap();
//! assert_eq!(verdict.outcome, Outcome::Consistent);
//! ```

pub mod agreement;
pub mod codec;
pub mod epi_data;
pub mod hash;
pub mod ledger;
pub mod netsim;
pub mod runtime;
pub mod sir;

pub use hash::Hash32;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/fixed-point.md")]
    mod fixed_point {}
    #[doc = include_str!("../../../book/src/ledger.md")]
    mod ledger {}
    #[doc = include_str!("../../../book/src/observations.md")]
    mod observations {}
    #[doc = include_str!("../../../book/src/sir-model.md")]
    mod sir_model {}
    #[doc = include_str!("../../../book/src/agreement.md")]
    mod agreement {}
    #[doc = include_str!("../../../book/src/replication.md")]
    mod replication {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
