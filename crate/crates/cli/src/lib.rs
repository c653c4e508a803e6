//! Command-line driver: ingest observations, run scenarios on a fresh
//! ledger, compare and verify evidence, and replay scenarios across
//! simulated nodes.
//!
//! Exit codes: 0 ok or consistent, 1 usage or decode error, 2 inconsistent
//! or unverified, 3 incomparable, 4 chain corrupt, 5 ambiguous majority.

pub mod scenario;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use epichain::agreement::{self, AgreementError, Evidence, Tolerances};
use epichain::codec;
use epichain::epi_data::datastore::{self, Aggregate};
use epichain::epi_data::{self, EstimatedParams};
use epichain::ledger::store::{self, StoreError};
use epichain::ledger::{
    DeployContract, InvokeContract, ObservationBatch, PartyId, Transaction, TxBody,
};
use epichain::netsim::{self, NetsimError, NetworkRun, Report, TamperSpec};
use epichain::runtime::{self, ContractKind, ContractRecord, Executor};
use epichain::sir::EpidemicCurve;
use serde::Serialize;

use scenario::{DataSource, Scenario};

pub const OPERATOR: PartyId = PartyId(*b"operator");

pub const CURVE_FILE: &str = "curve.csv";
pub const EVIDENCE_FILE: &str = "evidence.bin";
pub const EVIDENCE_JSON_FILE: &str = "evidence.json";
pub const LEDGER_DIR: &str = "ledger";

#[derive(Debug, Parser)]
#[command(name = "epichain", version, about = "Replicated SIR simulations on a hash-chained ledger")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Chain seed; for `run` and `netsim` it also replaces the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (ingest, netsim) or directory (run).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file with epsilon_curve, epsilon_peak_time and epsilon_attack_rate.
    #[arg(long, global = true)]
    pub tolerances: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pseudonymize JSON Lines observations and estimate model parameters.
    Ingest {
        observations: PathBuf,
        /// 16-byte salt as 32 hex digits.
        #[arg(long)]
        salt: String,
        #[arg(long)]
        locations: u64,
    },
    /// Deploy and run a scenario on a fresh ledger.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario's step count.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Compare two evidence files.
    Compare { a: PathBuf, b: PathBuf },
    /// Check a ledger directory and an evidence commitment against it.
    Verify { ledger: PathBuf, evidence: PathBuf },
    /// Replay a ledger directory from its chain seed and print every
    /// contract state as JSON.
    Inspect { ledger: PathBuf },
    /// Replay a scenario on several nodes and report state-root divergence.
    Netsim {
        scenario: PathBuf,
        #[arg(long, default_value_t = 5)]
        nodes: usize,
        /// `node:flip-bernoulli:<step>`, `node:skip-recovery` or
        /// `node:mutate-state-byte:<offset>`.
        #[arg(long)]
        tamper: Option<TamperSpec>,
        /// Simulation steps per round.
        #[arg(long, default_value_t = 24)]
        round_steps: u64,
        #[arg(long)]
        steps: Option<u64>,
    },
}

/// Runs one command and returns its exit code. Errors map through
/// [`exit_code`].
pub fn execute(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest {
            observations,
            salt,
            locations,
        } => ingest(observations, salt, *locations, g),
        Command::Run { scenario, steps } => run(scenario, *steps, g),
        Command::Compare { a, b } => compare(a, b, g),
        Command::Verify { ledger, evidence } => verify(ledger, evidence),
        Command::Inspect { ledger } => inspect(ledger, g),
        Command::Netsim {
            scenario,
            nodes,
            tamper,
            round_steps,
            steps,
        } => run_netsim(scenario, *nodes, *tamper, *round_steps, *steps, g),
    }
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(NetsimError::AmbiguousMajority { .. }) = cause.downcast_ref() {
            return 5;
        }
        if let Some(AgreementError::ChainCorrupt { .. }) = cause.downcast_ref() {
            return 4;
        }
        if let Some(StoreError::CorruptBlock { .. }) = cause.downcast_ref() {
            return 4;
        }
    }
    1
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn to_json(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn ingest(observations: &Path, salt: &str, locations: u64, g: &Global) -> Result<u8> {
    let salt = scenario::parse_salt(salt)?;
    let raw = scenario::read_observations(observations)?;
    let records = epi_data::anonymize(&raw, &salt, locations)?;
    let (params, stats) = epi_data::estimate_params(&records, locations)?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("params.json"));
    write(&out, to_json(&params)?)?;
    println!("records {}", stats.records);
    println!("transitions {}", stats.transitions);
    println!("wrote {}", out.display());
    Ok(0)
}

fn deploy(kind: ContractKind, init_payload: Vec<u8>) -> Transaction {
    Transaction::new(&TxBody::DeployContract(DeployContract { kind, init_payload }), OPERATOR)
}

fn invoke(contract_id: epichain::Hash32, method: &str, args: Vec<u8>) -> Transaction {
    Transaction::new(
        &TxBody::InvokeContract(InvokeContract {
            contract_id,
            method: method.into(),
            args,
        }),
        OPERATOR,
    )
}

fn load_scenario(path: &Path, steps: Option<u64>, g: &Global) -> Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if let Some(steps) = steps {
        if steps == 0 {
            bail!("steps must be positive");
        }
        s.steps = steps;
    }
    if let Some(seed) = g.seed {
        s.params.scenario_seed = seed;
    }
    Ok(s)
}

/// Ledger layout of a run: data store deploy, data, simulation deploy, run,
/// publish. Returns the executor and the published evidence.
pub fn run_on_chain(s: &Scenario, chain_seed: u64) -> Result<(Executor, Evidence)> {
    let mut ex = Executor::new(chain_seed);
    let n = s.params.n_locations;

    let store_init = codec::to_bytes(&n);
    let store_id = ContractRecord::compute_id(ContractKind::DataStore, &store_init, 0);
    ex.execute_block(vec![deploy(ContractKind::DataStore, store_init)])?;

    let data_tx = match &s.data {
        DataSource::None => None,
        DataSource::Observations { records, salt } => Some(Transaction::new(
            &TxBody::ObservationBatch(ObservationBatch {
                target: store_id,
                records: epi_data::anonymize(records, salt, n)?,
            }),
            OPERATOR,
        )),
        DataSource::Estimated(params) => {
            let aggregate = Aggregate {
                record_count: 0,
                transition_count: 0,
                params: params.clone(),
            };
            Some(invoke(store_id, "store", codec::to_bytes(&aggregate)))
        }
    };
    let has_data = data_tx.is_some();
    ex.execute_block(data_tx.into_iter().collect())?;
    let estimate: Option<EstimatedParams> = if has_data {
        let state = &ex.runtime().contract(&store_id).expect("deployed").state;
        Some(datastore::read_aggregate(state)?.params)
    } else {
        None
    };

    let sim_init = codec::to_bytes(&s.init(estimate.as_ref())?);
    let height = ex.ledger().next_height();
    let sim_id = ContractRecord::compute_id(ContractKind::SirSim, &sim_init, height);
    ex.execute_block(vec![deploy(ContractKind::SirSim, sim_init)])?;
    ex.execute_block(vec![invoke(sim_id, "run", codec::to_bytes(&s.steps))])?;
    let block = ex.execute_block(vec![invoke(sim_id, "publish", Vec::new())])?;
    let evidence = codec::from_bytes(&block.events[0].data)?;
    Ok((ex, evidence))
}

fn run(path: &Path, steps: Option<u64>, g: &Global) -> Result<u8> {
    let s = load_scenario(path, steps, g)?;
    let (ex, evidence) = run_on_chain(&s, g.seed.unwrap_or(0))?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    write(&out.join(CURVE_FILE), evidence.curve.to_csv())?;
    write(&out.join(EVIDENCE_FILE), codec::to_bytes(&evidence))?;
    write(&out.join(EVIDENCE_JSON_FILE), to_json(&evidence)?)?;
    store::save(ex.ledger(), &out.join(LEDGER_DIR))?;

    let peak = agreement::peak_stats(&evidence)?;
    println!("population {}", evidence.population);
    println!("steps {}", evidence.curve.len() - 1);
    println!("peak_infected {} at step {}", peak.peak_infected, peak.peak_step);
    println!("attack_rate {}", peak.attack_rate);
    println!("infected {}", sparkline(&evidence.curve, 60));
    println!("wrote {}", out.display());
    Ok(0)
}

/// Infected counts as one line of ASCII, each column the maximum over its
/// share of the steps.
pub fn sparkline(curve: &EpidemicCurve, width: usize) -> String {
    const LEVELS: &[u8] = b" .:-=+*#%@";
    let infected: Vec<u64> = curve.infected().collect();
    let peak = infected.iter().copied().max().unwrap_or(0);
    let columns = infected.len().min(width).max(1);
    (0..columns)
        .map(|c| {
            let lo = c * infected.len() / columns;
            let hi = ((c + 1) * infected.len() / columns).max(lo + 1);
            let v = infected[lo..hi.min(infected.len())].iter().copied().max().unwrap_or(0);
            let level = if peak == 0 {
                0
            } else {
                (v * (LEVELS.len() as u64 - 1)).div_ceil(peak) as usize
            };
            LEVELS[level] as char
        })
        .collect()
}

/// Reads evidence as JSON when the file name ends in `.json`, canonical
/// bytes otherwise.
pub fn read_evidence(path: &Path) -> Result<Evidence> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let evidence: Evidence = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?
    } else {
        codec::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))?
    };
    evidence
        .validate()
        .with_context(|| format!("checking {}", path.display()))?;
    Ok(evidence)
}

fn read_tolerances(g: &Global) -> Result<Tolerances> {
    match &g.tolerances {
        None => Ok(Tolerances::default()),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }
}

fn compare(a: &Path, b: &Path, g: &Global) -> Result<u8> {
    let tolerances = read_tolerances(g)?;
    let verdict = agreement::compare(&read_evidence(a)?, &read_evidence(b)?, &tolerances)?;
    print!("{}", to_json(&verdict)?);
    Ok(verdict.outcome.exit_code() as u8)
}

#[derive(Serialize)]
struct VerifyReport {
    chain: epichain::ledger::ChainReport,
    commitment: Option<bool>,
}

fn verify(ledger_dir: &Path, evidence: &Path) -> Result<u8> {
    let evidence = read_evidence(evidence)?;
    let ledger = store::load(ledger_dir)?;
    let chain = ledger.verify_chain();
    if let (false, Some(height)) = (chain.ok, chain.first_bad_height) {
        let reason = chain.reason.clone().unwrap_or_default();
        print!("{}", to_json(&VerifyReport { chain, commitment: None })?);
        return Err(AgreementError::ChainCorrupt { height, reason }.into());
    }
    let found = agreement::verify_commitment(&evidence, &ledger)?;
    print!("{}", to_json(&VerifyReport { chain, commitment: Some(found) })?);
    Ok(if found { 0 } else { 2 })
}

#[derive(Serialize)]
struct ContractView {
    contract_id: epichain::Hash32,
    kind: ContractKind,
    formalism_id: String,
    invocations: u64,
    state: serde_json::Value,
}

fn inspect(ledger_dir: &Path, g: &Global) -> Result<u8> {
    let ledger = store::load(ledger_dir)?;
    let chain = ledger.verify_chain();
    if let (false, Some(height)) = (chain.ok, chain.first_bad_height) {
        let reason = chain.reason.unwrap_or_default();
        return Err(AgreementError::ChainCorrupt { height, reason }.into());
    }
    let mut ex = Executor::new(g.seed.unwrap_or(0));
    for stored in ledger.blocks() {
        let replayed = ex.execute_block(stored.txs.clone())?;
        if replayed.block_hash != stored.block_hash {
            eprintln!(
                "replay diverges at height {}; was the ledger produced with --seed {}?",
                stored.height,
                ex.chain_seed()
            );
            return Ok(2);
        }
    }
    let contracts = ex
        .runtime()
        .contracts()
        .map(|c| {
            Ok(ContractView {
                contract_id: c.contract_id,
                kind: c.kind,
                formalism_id: c.formalism_id.clone(),
                invocations: c.invocations,
                state: runtime::render_state_json(c.kind, &c.state)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", to_json(&contracts)?);
    Ok(0)
}

fn run_netsim(
    path: &Path,
    nodes: usize,
    tamper: Option<TamperSpec>,
    round_steps: u64,
    steps: Option<u64>,
    g: &Global,
) -> Result<u8> {
    if nodes == 0 {
        bail!(NetsimError::NoNodes);
    }
    if round_steps == 0 {
        bail!("round-steps must be positive");
    }
    let s = load_scenario(path, steps, g)?;
    let init = s.init(s.estimate()?.as_ref())?;
    let mut rounds = vec![round_steps; (s.steps / round_steps) as usize];
    if s.steps % round_steps != 0 {
        rounds.push(s.steps % round_steps);
    }

    let mut cfg = NetworkRun::honest(g.seed.unwrap_or(0), nodes, netsim::simulation_schedule(&init, &rounds, OPERATOR));
    if let Some(spec) = tamper {
        if spec.node >= nodes {
            bail!("tamper node {} out of range for {nodes} nodes", spec.node);
        }
        cfg = cfg.with_tamper(spec);
    }
    let outcome = netsim::run_network(&cfg)?;
    let report = Report::from_roots(&outcome.roots)?;
    let json = to_json(&report)?;
    if let Some(out) = &g.out {
        write(out, &json)?;
    }
    print!("{json}");
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use epichain::sir::CurveRow;

    #[test]
    fn sparkline_scales_to_peak() {
        let rows = [0, 5, 10]
            .map(|i| CurveRow {
                susceptible: 10 - i,
                infected: i,
                recovered: 0,
            })
            .to_vec();
        let curve = EpidemicCurve { rows };
        assert_eq!(sparkline(&curve, 60), " +@");
        assert_eq!(sparkline(&curve, 1), "@");
    }
}
