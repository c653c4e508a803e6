//! Test support: scenario generators and a brute-force reference
//! interpreter of the simulation rules. Nothing here calls into the
//! library's model code; it shares only the published PRNG algorithm.

#![allow(dead_code)]

use std::collections::BTreeMap;

use epichain::epi_data::TransitionMatrix;
use epichain::runtime::Q32;
use epichain::sir::{Compartment, ContactTable, SirParams};

const ONE: u64 = 1 << 32;

/// SplitMix64, written out from the published constants.
#[derive(Clone, Copy, Debug)]
pub struct Mix(pub u64);

impl Mix {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `0..n` by plain modulo.
    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    pub fn chance(&mut self, numerator: u64, denominator: u64) -> bool {
        self.below(denominator) < numerator
    }
}

/// A random row over `n` locations: a random non-empty destination set and
/// a random split of 2^32 among them.
pub fn random_row(rng: &mut Mix, n: u64) -> Vec<(u64, Q32)> {
    let mut dests: Vec<u64> = (0..n).filter(|_| rng.chance(1, 2)).collect();
    if dests.is_empty() {
        dests.push(rng.below(n));
    }
    let mut cuts: Vec<u64> = (1..dests.len()).map(|_| rng.below(ONE + 1)).collect();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(ONE);
    // Zero-width slices are dropped; the rest still sum to 2^32.
    dests
        .iter()
        .zip(bounds.windows(2))
        .filter(|(_, w)| w[1] > w[0])
        .map(|(&d, w)| (d, Q32::from_raw(w[1] - w[0]).unwrap()))
        .collect()
}

pub fn random_matrix(rng: &mut Mix, n: u64) -> TransitionMatrix {
    let rows = (0..n).map(|_| random_row(rng, n)).collect();
    TransitionMatrix::new(n, rows).expect("generated rows are valid")
}

fn random_q32(rng: &mut Mix) -> Q32 {
    // Mix exact endpoints in with arbitrary values.
    match rng.below(6) {
        0 => Q32::ZERO,
        1 => Q32::ONE,
        _ => Q32::from_raw(rng.below(ONE + 1)).unwrap(),
    }
}

/// Bounds for [`random_scenario`].
pub struct Bounds {
    pub max_population: u64,
    pub max_locations: u64,
    pub max_period: u64,
    pub max_contacts: u64,
}

pub struct Scenario {
    pub params: SirParams,
    pub matrix: TransitionMatrix,
    pub contacts: ContactTable,
}

pub fn random_scenario(rng: &mut Mix, b: &Bounds) -> Scenario {
    let population = rng.range(1, b.max_population);
    let n_locations = rng.range(1, b.max_locations);
    let (x, y) = (random_q32(rng), random_q32(rng));
    let (beta_lo, beta_hi) = if x <= y { (x, y) } else { (y, x) };
    let p1 = rng.range(1, b.max_period);
    let p2 = rng.range(1, b.max_period);
    let infected: Vec<u64> = (0..population).filter(|_| rng.chance(1, 8)).collect();
    let initial_infected = if infected.is_empty() && rng.chance(3, 4) {
        vec![rng.below(population)]
    } else {
        infected
    };
    let mut initial_locations = BTreeMap::new();
    for id in 0..population {
        if rng.chance(1, 3) {
            initial_locations.insert(id, rng.below(n_locations));
        }
    }
    let mut per_agent = BTreeMap::new();
    for id in 0..population {
        if rng.chance(1, 4) {
            per_agent.insert(id, rng.range(0, b.max_contacts));
        }
    }
    Scenario {
        params: SirParams {
            population,
            n_locations,
            beta_lo,
            beta_hi,
            inf_period_lo: p1.min(p2),
            inf_period_hi: p1.max(p2),
            initial_infected,
            initial_locations,
            scenario_seed: rng.next(),
        },
        matrix: random_matrix(rng, n_locations),
        contacts: ContactTable {
            default: rng.range(0, b.max_contacts),
            per_agent,
        },
    }
}

/// One agent in the reference interpreter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefAgent {
    pub location: u64,
    pub compartment: Compartment,
    pub infected_at: Option<u64>,
    pub recovered_at: Option<u64>,
    pub infected_by: Option<u64>,
    pub period: u64,
    pub contacts: u64,
}

/// Straightforward interpreter of the phase rules: recover, move, transmit,
/// apply. Candidate lists are rebuilt from scratch for every infected agent.
pub struct Reference {
    pub rng: Mix,
    pub rows: Vec<Vec<(u64, u64)>>,
    pub beta: u64,
    pub step: u64,
    pub agents: Vec<RefAgent>,
}

impl Reference {
    pub fn new(s: &Scenario, seed: u64) -> Self {
        let mut rng = Mix(seed);
        let p = &s.params;
        let (lo, hi) = (p.beta_lo.raw(), p.beta_hi.raw());
        let beta = lo + (((rng.next() >> 32) as u128 * (hi - lo) as u128) >> 32) as u64;
        let mut agents = Vec::new();
        for id in 0..p.population {
            let period = p.inf_period_lo + rng.next() % (p.inf_period_hi - p.inf_period_lo + 1);
            agents.push(RefAgent {
                location: *p.initial_locations.get(&id).unwrap_or(&(id % p.n_locations)),
                compartment: Compartment::Susceptible,
                infected_at: None,
                recovered_at: None,
                infected_by: None,
                period,
                contacts: *s.contacts.per_agent.get(&id).unwrap_or(&s.contacts.default),
            });
        }
        for &id in &p.initial_infected {
            agents[id as usize].compartment = Compartment::Infected;
            agents[id as usize].infected_at = Some(0);
        }
        let rows = s
            .matrix
            .rows()
            .iter()
            .map(|r| r.iter().map(|&(d, q)| (d, q.raw())).collect())
            .collect();
        Self {
            rng,
            rows,
            beta,
            step: 0,
            agents,
        }
    }

    pub fn step(&mut self) {
        let t = self.step;
        for a in &mut self.agents {
            if a.compartment == Compartment::Infected && t - a.infected_at.unwrap() >= a.period {
                a.compartment = Compartment::Recovered;
                a.recovered_at = Some(t);
            }
        }

        for i in 0..self.agents.len() {
            let u = self.rng.next() >> 32;
            let mut acc = 0;
            for &(dest, p) in &self.rows[self.agents[i].location as usize] {
                acc += p;
                if acc > u {
                    self.agents[i].location = dest;
                    break;
                }
            }
        }

        let mut pending: Vec<(usize, usize)> = Vec::new();
        for i in 0..self.agents.len() {
            if self.agents[i].compartment != Compartment::Infected {
                continue;
            }
            let mut cands: Vec<usize> = (0..self.agents.len())
                .filter(|&j| j != i && self.agents[j].location == self.agents[i].location)
                .collect();
            let m = (self.agents[i].contacts as usize).min(cands.len());
            for x in 0..m {
                let y = x + (self.rng.next() % (cands.len() - x) as u64) as usize;
                cands.swap(x, y);
            }
            for &c in &cands[..m] {
                if self.agents[c].compartment == Compartment::Susceptible && !pending.iter().any(|p| p.0 == c) {
                    let hit = (self.rng.next() >> 32) < self.beta;
                    if hit {
                        pending.push((c, i));
                    }
                }
            }
        }
        for (c, i) in pending {
            self.agents[c].compartment = Compartment::Infected;
            self.agents[c].infected_at = Some(t + 1);
            self.agents[c].infected_by = Some(i as u64);
        }
        self.step += 1;
    }
}
