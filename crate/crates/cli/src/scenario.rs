//! Scenario files: simulation parameters plus where the mobility matrix and
//! contact rates come from.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use epichain::epi_data::{self, EstimatedParams, ObservationRecord, SALT_LEN};
use epichain::epi_data::TransitionMatrix;
use epichain::sir::contract::SirInit;
use epichain::sir::{ContactTable, SirParams};
use serde::Deserialize;

pub const DEFAULT_STEPS: u64 = 336;

/// Scenario as written on disk. Paths are relative to the scenario file.
///
/// An explicit `matrix` or `contacts` takes precedence over values estimated
/// from `observations` or loaded from `estimated_params`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub params: SirParams,
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default)]
    pub observations: Option<PathBuf>,
    /// Hex-encoded pseudonymization salt, required with `observations`.
    #[serde(default)]
    pub salt: Option<String>,
    #[serde(default)]
    pub estimated_params: Option<PathBuf>,
    #[serde(default)]
    pub matrix: Option<TransitionMatrix>,
    #[serde(default)]
    pub contacts: Option<ContactTable>,
}

/// Where the aggregated model inputs come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    None,
    Observations { records: Vec<ObservationRecord>, salt: Vec<u8> },
    Estimated(EstimatedParams),
}

/// A loaded and checked scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: SirParams,
    pub steps: u64,
    pub data: DataSource,
    pub matrix: Option<TransitionMatrix>,
    pub contacts: Option<ContactTable>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: ScenarioFile =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        file.params.validate()?;

        let data = match (file.observations, file.estimated_params) {
            (Some(_), Some(_)) => bail!("scenario names both observations and estimated_params"),
            (Some(obs), None) => {
                let salt = file.salt.context("observations need a hex salt")?;
                DataSource::Observations {
                    records: read_observations(&base.join(obs))?,
                    salt: parse_salt(&salt)?,
                }
            }
            (None, Some(est)) => {
                let est = base.join(est);
                let text = fs::read_to_string(&est).with_context(|| format!("reading {}", est.display()))?;
                DataSource::Estimated(
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", est.display()))?,
                )
            }
            (None, None) => DataSource::None,
        };
        let scenario = Self {
            params: file.params,
            steps: file.steps.unwrap_or(DEFAULT_STEPS),
            data,
            matrix: file.matrix,
            contacts: file.contacts,
        };
        if matches!(scenario.data, DataSource::None) {
            if scenario.matrix.is_none() {
                bail!("scenario needs a matrix, observations or estimated_params");
            }
            if scenario.contacts.is_none() {
                bail!("scenario needs contacts, observations or estimated_params");
            }
        }
        if scenario.steps == 0 {
            bail!("steps must be positive");
        }
        Ok(scenario)
    }

    /// Fills matrix and contacts from `estimate` where the scenario leaves
    /// them open.
    pub fn init(&self, estimate: Option<&EstimatedParams>) -> Result<SirInit> {
        let matrix = match (&self.matrix, estimate) {
            (Some(m), _) => m.clone(),
            (None, Some(e)) => e.transition_matrix.clone(),
            (None, None) => bail!("no mobility matrix available"),
        };
        let contacts = match (&self.contacts, estimate) {
            (Some(c), _) => c.clone(),
            (None, Some(e)) => e.contact_table(self.params.population),
            (None, None) => bail!("no contact rates available"),
        };
        Ok(SirInit {
            params: self.params.clone(),
            matrix,
            contacts,
        })
    }

    /// Aggregates the data source off-chain.
    pub fn estimate(&self) -> Result<Option<EstimatedParams>> {
        Ok(match &self.data {
            DataSource::None => None,
            DataSource::Estimated(e) => Some(e.clone()),
            DataSource::Observations { records, salt } => {
                let n = self.params.n_locations;
                let pseudonymized = epi_data::anonymize(records, salt, n)?;
                Some(epi_data::estimate_params(&pseudonymized, n)?.0)
            }
        })
    }
}

pub fn parse_salt(hex_salt: &str) -> Result<Vec<u8>> {
    let salt = hex::decode(hex_salt).context("salt is not hex")?;
    if salt.len() != SALT_LEN {
        bail!("salt must be {SALT_LEN} bytes ({} hex digits), got {}", 2 * SALT_LEN, salt.len());
    }
    Ok(salt)
}

/// Reads JSON Lines observations. Blank lines are skipped; errors cite the
/// 1-based line number.
pub fn read_observations(path: &Path) -> Result<Vec<ObservationRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line)
                .with_context(|| format!("{}: line {}: malformed observation", path.display(), n + 1))
        })
        .collect()
}
