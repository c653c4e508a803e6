//! Lock-step replication harness.
//!
//! Every node owns an [`Executor`] and receives the same transaction batch
//! each round. Nodes run a round in parallel, seal one block, and report its
//! state root. A node may be configured to tamper with its own execution;
//! [`detect_divergence`] then finds it by majority vote over the roots.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec;
use crate::hash::Hash32;
use crate::ledger::{DeployContract, InvokeContract, PartyId, Transaction, TxBody};
use crate::runtime::{ContractKind, ContractRecord, ExecError, Executor, Hooks};
use crate::sir::contract::SirInit;

#[derive(Debug, Error)]
pub enum NetsimError {
    #[error("a network needs at least one node")]
    NoNodes,
    #[error("a network needs at least one round")]
    NoRounds,
    #[error("node {node} failed in round {round}: {source}")]
    Node {
        node: usize,
        round: usize,
        #[source]
        source: Box<ExecError>,
    },
    #[error("no strict majority of state roots in round {round}")]
    AmbiguousMajority { round: usize },
    #[error("bad tamper spec {spec:?}: {reason}")]
    BadTamperSpec { spec: String, reason: String },
}

/// Ways a node can deviate from the honest code path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TamperRule {
    /// Inverts the first transmission trial of simulation step `step`.
    FlipBernoulli { step: u64 },
    /// Suppresses every recovery phase that has an agent due to recover.
    SkipRecovery,
    /// XORs `0xFF` into byte `offset % len` of the state produced by the
    /// node's first contract invocation.
    MutateStateByte { offset: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Behavior {
    #[default]
    Honest,
    Tamper(TamperRule),
}

/// A rule bound to the node that applies it, written
/// `node:flip-bernoulli:<step>`, `node:skip-recovery` or
/// `node:mutate-state-byte:<offset>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TamperSpec {
    pub node: usize,
    pub rule: TamperRule,
}

impl FromStr for TamperSpec {
    type Err = NetsimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| NetsimError::BadTamperSpec {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let parts: Vec<&str> = s.split(':').collect();
        let node = parts[0].parse().map_err(|_| bad("node must be an integer"))?;
        let arg = |i: usize| -> Result<u64, NetsimError> {
            parts
                .get(i)
                .ok_or_else(|| bad("missing argument"))?
                .parse()
                .map_err(|_| bad("argument must be an integer"))
        };
        let (rule, arity) = match parts.get(1).copied() {
            Some("flip-bernoulli") => (TamperRule::FlipBernoulli { step: arg(2)? }, 3),
            Some("skip-recovery") => (TamperRule::SkipRecovery, 2),
            Some("mutate-state-byte") => (TamperRule::MutateStateByte { offset: arg(2)? }, 3),
            _ => return Err(bad("unknown rule")),
        };
        if parts.len() != arity {
            return Err(bad("wrong number of fields"));
        }
        Ok(Self { node, rule })
    }
}

impl fmt::Display for TamperSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rule {
            TamperRule::FlipBernoulli { step } => write!(f, "{}:flip-bernoulli:{step}", self.node),
            TamperRule::SkipRecovery => write!(f, "{}:skip-recovery", self.node),
            TamperRule::MutateStateByte { offset } => {
                write!(f, "{}:mutate-state-byte:{offset}", self.node)
            }
        }
    }
}

/// Hooks implementing one node's behavior, recording when a rule first
/// changes something.
#[derive(Debug, Default)]
struct NodeHooks {
    behavior: Behavior,
    round: usize,
    fired_round: Option<usize>,
    spent: bool,
}

impl NodeHooks {
    fn fire(&mut self) {
        self.fired_round.get_or_insert(self.round);
    }
}

impl Hooks for NodeHooks {
    fn bernoulli(&mut self, step: u64, outcome: bool) -> bool {
        match self.behavior {
            Behavior::Tamper(TamperRule::FlipBernoulli { step: target })
                if step == target && !self.spent =>
            {
                self.spent = true;
                self.fire();
                !outcome
            }
            _ => outcome,
        }
    }

    fn skip_recovery(&mut self, _step: u64) -> bool {
        let skip = self.behavior == Behavior::Tamper(TamperRule::SkipRecovery);
        if skip {
            self.fire();
        }
        skip
    }

    fn after_invoke(&mut self, _contract_id: &Hash32, state: &mut Vec<u8>) {
        if let Behavior::Tamper(TamperRule::MutateStateByte { offset }) = self.behavior {
            if !self.spent && !state.is_empty() {
                self.spent = true;
                let i = (offset % state.len() as u64) as usize;
                state[i] ^= 0xFF;
                self.fire();
            }
        }
    }
}

/// One replica in the network.
#[derive(Debug)]
pub struct Node {
    pub node_id: usize,
    pub behavior: Behavior,
    pub executor: Executor,
    hooks: NodeHooks,
    faulted: bool,
}

/// Network configuration: one behavior per node and one transaction batch
/// per round.
#[derive(Debug, Clone)]
pub struct NetworkRun {
    pub chain_seed: u64,
    pub behaviors: Vec<Behavior>,
    pub schedule: Vec<Vec<Transaction>>,
}

impl NetworkRun {
    pub fn honest(chain_seed: u64, nodes: usize, schedule: Vec<Vec<Transaction>>) -> Self {
        Self {
            chain_seed,
            behaviors: vec![Behavior::Honest; nodes],
            schedule,
        }
    }

    pub fn with_tamper(mut self, spec: TamperSpec) -> Self {
        self.behaviors[spec.node] = Behavior::Tamper(spec.rule);
        self
    }
}

/// Roots indexed `[node][round]`. `None` marks a tampering node whose
/// execution failed; it stays `None` for the remaining rounds.
#[derive(Debug)]
pub struct NetworkOutcome {
    pub roots: Vec<Vec<Option<Hash32>>>,
    /// Round in which each node's tamper rule first took effect.
    pub fired: Vec<Option<usize>>,
    pub nodes: Vec<Node>,
}

pub fn run_network(cfg: &NetworkRun) -> Result<NetworkOutcome, NetsimError> {
    if cfg.behaviors.is_empty() {
        return Err(NetsimError::NoNodes);
    }
    if cfg.schedule.is_empty() {
        return Err(NetsimError::NoRounds);
    }
    let mut nodes: Vec<Node> = cfg
        .behaviors
        .iter()
        .enumerate()
        .map(|(node_id, &behavior)| Node {
            node_id,
            behavior,
            executor: Executor::new(cfg.chain_seed),
            hooks: NodeHooks {
                behavior,
                ..NodeHooks::default()
            },
            faulted: false,
        })
        .collect();
    let mut roots = vec![Vec::with_capacity(cfg.schedule.len()); nodes.len()];

    for (round, batch) in cfg.schedule.iter().enumerate() {
        let results: Vec<Result<Option<Hash32>, ExecError>> = std::thread::scope(|s| {
            let handles: Vec<_> = nodes
                .iter_mut()
                .map(|node| s.spawn(move || node.execute_round(round, batch.clone())))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("node thread panicked"))
                .collect()
        });
        for (node, result) in nodes.iter_mut().zip(results) {
            match result {
                Ok(root) => roots[node.node_id].push(root),
                Err(source) if node.behavior == Behavior::Honest => {
                    return Err(NetsimError::Node {
                        node: node.node_id,
                        round,
                        source: Box::new(source),
                    })
                }
                Err(_) => {
                    node.faulted = true;
                    roots[node.node_id].push(None);
                }
            }
        }
    }

    Ok(NetworkOutcome {
        roots,
        fired: nodes.iter().map(|n| n.hooks.fired_round).collect(),
        nodes,
    })
}

impl Node {
    fn execute_round(
        &mut self,
        round: usize,
        batch: Vec<Transaction>,
    ) -> Result<Option<Hash32>, ExecError> {
        if self.faulted {
            return Ok(None);
        }
        self.hooks.round = round;
        let block = self.executor.execute_block_with(batch, &mut self.hooks)?;
        Ok(Some(block.state_root))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub node: usize,
    pub round: usize,
}

/// Nodes whose root differs from the round's strict-majority root, each
/// with the first round it differs in. Fails if some round with
/// disagreement has no strict majority.
pub fn detect_divergence(roots: &[Vec<Option<Hash32>>]) -> Result<Vec<Divergence>, NetsimError> {
    let n = roots.len();
    let rounds = roots.iter().map(Vec::len).min().unwrap_or(0);
    let mut first: Vec<Option<usize>> = vec![None; n];
    for round in 0..rounds {
        let column: Vec<Option<Hash32>> = roots.iter().map(|r| r[round]).collect();
        if column.iter().all(|r| *r == column[0]) {
            continue;
        }
        let majority = column
            .iter()
            .find(|c| column.iter().filter(|x| x == c).count() * 2 > n)
            .copied()
            .ok_or(NetsimError::AmbiguousMajority { round })?;
        for (node, root) in column.iter().enumerate() {
            if *root != majority && first[node].is_none() {
                first[node] = Some(round);
            }
        }
    }
    Ok(first
        .into_iter()
        .enumerate()
        .filter_map(|(node, round)| round.map(|round| Divergence { node, round }))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub rounds: usize,
    pub nodes: usize,
    pub divergences: Vec<Divergence>,
}

impl Report {
    pub fn from_roots(roots: &[Vec<Option<Hash32>>]) -> Result<Self, NetsimError> {
        Ok(Self {
            rounds: roots.first().map_or(0, Vec::len),
            nodes: roots.len(),
            divergences: detect_divergence(roots)?,
        })
    }
}

/// Transaction batches that deploy a simulation in round 0 and then advance
/// it by `steps_per_round[r - 1]` steps in round `r`.
pub fn simulation_schedule(
    init: &SirInit,
    steps_per_round: &[u64],
    submitter: PartyId,
) -> Vec<Vec<Transaction>> {
    let init_payload = codec::to_bytes(init);
    let contract_id = ContractRecord::compute_id(ContractKind::SirSim, &init_payload, 0);
    let deploy = TxBody::DeployContract(DeployContract {
        kind: ContractKind::SirSim,
        init_payload,
    });
    let mut schedule = vec![vec![Transaction::new(&deploy, submitter)]];
    for &steps in steps_per_round {
        let (method, args) = if steps == 1 {
            ("step", Vec::new())
        } else {
            ("run", codec::to_bytes(&steps))
        };
        let invoke = TxBody::InvokeContract(InvokeContract {
            contract_id,
            method: method.to_string(),
            args,
        });
        schedule.push(vec![Transaction::new(&invoke, submitter)]);
    }
    schedule
}
