//! Comparing evidence from independently run simulations.
//!
//! Two pieces of evidence are *comparable* only when they name the same
//! formalism. Comparable evidence is *consistent* when three summaries agree
//! within tolerance: the mean absolute difference of the infected-fraction
//! curves, the time of the infection peak, and the final attack rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::hash::Hash32;
use crate::ledger::Ledger;
use crate::runtime::q32::round_half_up;
use crate::runtime::Q32;
use crate::sir::EpidemicCurve;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AgreementError {
    #[error("evidence has an empty curve")]
    EmptyCurve,
    #[error("formalisms differ: {a} vs {b}")]
    FormalismMismatch { a: String, b: String },
    #[error("ledger is corrupt at height {height}: {reason}")]
    ChainCorrupt { height: u64, reason: String },
    #[error("malformed evidence: {0}")]
    InvalidEvidence(String),
}

/// What a simulation publishes: its formalism, a digest of its inputs, the
/// population-level curve, and a hash of its final state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub formalism_id: String,
    pub params_digest: Hash32,
    pub population: u64,
    pub curve: EpidemicCurve,
    pub commitment: Hash32,
}

impl Evidence {
    pub fn validate(&self) -> Result<(), AgreementError> {
        if self.population == 0 {
            return Err(AgreementError::InvalidEvidence("zero population".into()));
        }
        if let Some(t) = self
            .curve
            .rows
            .iter()
            .position(|r| r.total() != self.population)
        {
            return Err(AgreementError::InvalidEvidence(format!(
                "curve row {t} does not sum to the population"
            )));
        }
        Ok(())
    }

    fn infected_fractions(&self) -> impl Iterator<Item = Q32> + '_ {
        self.curve
            .infected()
            .map(|i| Q32::from_ratio(i, self.population).expect("validated: infected <= population"))
    }
}

impl Canonical for Evidence {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.formalism_id)
            .value(&self.params_digest)
            .u64(self.population)
            .value(&self.curve)
            .value(&self.commitment);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let ev = Self {
            formalism_id: dec.string()?,
            params_digest: dec.value()?,
            population: dec.u64()?,
            curve: dec.value()?,
            commitment: dec.value()?,
        };
        ev.validate()
            .map_err(|e| DecodeError::invalid("evidence", e.to_string()))?;
        Ok(ev)
    }
}

/// Consistency thresholds. Each is an inclusive upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tolerances {
    pub epsilon_curve: Q32,
    pub epsilon_peak_time: u64,
    pub epsilon_attack_rate: Q32,
}

impl Default for Tolerances {
    /// 0.05 curve distance, 24 hours of peak shift, 0.05 attack rate.
    fn default() -> Self {
        let five_percent = Q32::from_ratio(5, 100).expect("valid ratio");
        Self {
            epsilon_curve: five_percent,
            epsilon_peak_time: 24,
            epsilon_attack_rate: five_percent,
        }
    }
}

impl Canonical for Tolerances {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.epsilon_curve)
            .u64(self.epsilon_peak_time)
            .value(&self.epsilon_attack_rate);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            epsilon_curve: dec.value()?,
            epsilon_peak_time: dec.u64()?,
            epsilon_attack_rate: dec.value()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Consistent,
    Inconsistent,
    Incomparable,
}

impl Outcome {
    /// Process exit code for this outcome.
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Consistent => 0,
            Outcome::Inconsistent => 2,
            Outcome::Incomparable => 3,
        }
    }
}

/// Absolute differences between two comparable pieces of evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deltas {
    pub curve_distance: Q32,
    pub peak_time_delta: u64,
    pub attack_rate_delta: Q32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    /// Absent exactly when the outcome is `Incomparable`.
    #[serde(flatten)]
    pub detail: Option<Deltas>,
}

impl Canonical for Verdict {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.outcome as u64);
        match &self.detail {
            None => {
                enc.bool(false);
            }
            Some(d) => {
                enc.bool(true)
                    .value(&d.curve_distance)
                    .u64(d.peak_time_delta)
                    .value(&d.attack_rate_delta);
            }
        }
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let outcome = match dec.u64()? {
            0 => Outcome::Consistent,
            1 => Outcome::Inconsistent,
            2 => Outcome::Incomparable,
            tag => return Err(DecodeError::BadTag { what: "outcome", tag }),
        };
        let detail = if dec.bool()? {
            Some(Deltas {
                curve_distance: dec.value()?,
                peak_time_delta: dec.u64()?,
                attack_rate_delta: dec.value()?,
            })
        } else {
            None
        };
        if detail.is_none() != (outcome == Outcome::Incomparable) {
            return Err(DecodeError::invalid("verdict", "detail must be present unless incomparable"));
        }
        Ok(Self { outcome, detail })
    }
}

/// Mean absolute difference of the infected-fraction series.
///
/// Each infected count is normalized by its population to Q32 (half-up);
/// the shorter series is padded with its final value, and the mean is
/// rounded half-up.
pub fn curve_distance(a: &Evidence, b: &Evidence) -> Result<Q32, AgreementError> {
    if a.formalism_id != b.formalism_id {
        return Err(AgreementError::FormalismMismatch {
            a: a.formalism_id.clone(),
            b: b.formalism_id.clone(),
        });
    }
    if a.curve.is_empty() || b.curve.is_empty() {
        return Err(AgreementError::EmptyCurve);
    }
    let fa: Vec<Q32> = a.infected_fractions().collect();
    let fb: Vec<Q32> = b.infected_fractions().collect();
    let len = fa.len().max(fb.len());
    let at = |f: &[Q32], t: usize| f[t.min(f.len() - 1)];
    let sum: u128 = (0..len)
        .map(|t| at(&fa, t).abs_diff(at(&fb, t)).raw() as u128)
        .sum();
    Ok(Q32::from_raw(round_half_up(sum, len as u128) as u64).expect("mean of values <= 1"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakStats {
    pub peak_step: u64,
    pub peak_infected: u64,
    pub attack_rate: Q32,
}

/// Earliest step with the most infected, and final recovered / population.
pub fn peak_stats(e: &Evidence) -> Result<PeakStats, AgreementError> {
    let last = e.curve.rows.last().ok_or(AgreementError::EmptyCurve)?;
    let (peak_step, peak_infected) = e
        .curve
        .infected()
        .enumerate()
        .fold((0, 0), |best, (t, i)| if i > best.1 { (t as u64, i) } else { best });
    let attack_rate = Q32::from_ratio(last.recovered, e.population)
        .map_err(|err| AgreementError::InvalidEvidence(err.to_string()))?;
    Ok(PeakStats {
        peak_step,
        peak_infected,
        attack_rate,
    })
}

pub fn compare(a: &Evidence, b: &Evidence, tol: &Tolerances) -> Result<Verdict, AgreementError> {
    if a.formalism_id != b.formalism_id {
        return Ok(Verdict {
            outcome: Outcome::Incomparable,
            detail: None,
        });
    }
    a.validate()?;
    b.validate()?;
    let curve_distance = curve_distance(a, b)?;
    let (pa, pb) = (peak_stats(a)?, peak_stats(b)?);
    let deltas = Deltas {
        curve_distance,
        peak_time_delta: pa.peak_step.abs_diff(pb.peak_step),
        attack_rate_delta: pa.attack_rate.abs_diff(pb.attack_rate),
    };
    let consistent = deltas.curve_distance <= tol.epsilon_curve
        && deltas.peak_time_delta <= tol.epsilon_peak_time
        && deltas.attack_rate_delta <= tol.epsilon_attack_rate;
    Ok(Verdict {
        outcome: if consistent {
            Outcome::Consistent
        } else {
            Outcome::Inconsistent
        },
        detail: Some(deltas),
    })
}

/// True iff the evidence commitment is the hash of some contract state
/// committed on `ledger`. Only state hashes are consulted, never states.
pub fn verify_commitment(e: &Evidence, ledger: &Ledger) -> Result<bool, AgreementError> {
    let report = ledger.verify_chain();
    if !report.ok {
        return Err(AgreementError::ChainCorrupt {
            height: report.first_bad_height.unwrap_or(0),
            reason: report.reason.unwrap_or_default(),
        });
    }
    Ok(ledger
        .blocks()
        .iter()
        .flat_map(|b| &b.state_entries)
        .any(|entry| entry.state_hash == e.commitment))
}

/// The agreement contract: stores its tolerances and every verdict issued.
pub mod contract {
    use serde::{Deserialize, Serialize};

    use super::{compare, Evidence, Tolerances, Verdict};
    use crate::codec::{self, Canonical, DecodeError, Decoder, Encoder};
    use crate::runtime::ContractError;

    pub const FORMALISM_ID: &str = "AGREEMENT/1";
    pub const METHODS: &[&str] = &["compare"];

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct AgreementState {
        pub tolerances: Tolerances,
        pub verdicts: Vec<Verdict>,
    }

    impl Canonical for AgreementState {
        fn encode(&self, enc: &mut Encoder) {
            enc.value(&self.tolerances).list(&self.verdicts);
        }
        fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
            Ok(Self {
                tolerances: dec.value()?,
                verdicts: dec.list()?,
            })
        }
    }

    /// Init payload: canonical [`Tolerances`].
    pub(crate) fn init(payload: &[u8]) -> Result<Vec<u8>, ContractError> {
        let tolerances: Tolerances = codec::from_bytes(payload)?;
        Ok(codec::to_bytes(&AgreementState {
            tolerances,
            verdicts: Vec::new(),
        }))
    }

    /// `compare` takes a pair of canonical [`Evidence`] and emits the
    /// canonical [`Verdict`].
    pub(crate) fn call(
        state: &[u8],
        method: &str,
        args: &[u8],
    ) -> Result<(Vec<u8>, Vec<Vec<u8>>), ContractError> {
        debug_assert_eq!(method, "compare");
        let mut st: AgreementState = codec::from_bytes(state)?;
        let (a, b): (Evidence, Evidence) = codec::from_bytes(args)?;
        let verdict = compare(&a, &b, &st.tolerances)?;
        st.verdicts.push(verdict);
        Ok((codec::to_bytes(&st), vec![codec::to_bytes(&verdict)]))
    }
}
