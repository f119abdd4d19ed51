//! Exact checkers for when subset fusion is guaranteed to detect spoofing
//! or recover the position, given anchor and adversary counts.
//!
//! All conditions are sufficient only. A `false` verdict means "not
//! guaranteed", not "undetectable".

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum pseudoranges for a GNSS fix (three position unknowns plus clock).
pub const GNSS_MIN_ANCHORS: u32 = 4;

/// Above this many adversary allocations the frontier refuses to enumerate.
pub const MAX_FRONTIER_ALLOCATIONS: u128 = 1_000_000;

pub fn binomial(n: u32, k: u32) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// `Σ_{i=lo}^{hi} C(n, i)`, and 1 when `lo > hi`.
pub fn binom_tail(n: u32, lo: u32, hi: u32) -> BigUint {
    if lo > hi {
        return BigUint::from(1u32);
    }
    (lo..=hi).map(|i| binomial(n, i)).sum()
}

/// Some all-benign subset of size above the minimum exists.
pub fn has_benign_subset(n_sat: u32, n_adv: u32, n_min: u32) -> bool {
    n_adv <= n_sat && n_sat - n_adv > n_min
}

/// Enough benign pseudoranges remain for a benign fix to disagree with the
/// spoofed one.
pub fn has_benign_fix(n_sat: u32, n_adv: u32, n_min: u32) -> bool {
    n_adv <= n_sat && n_sat - n_adv >= n_min
}

/// An adversarial subset can absorb at most this many benign measurements
/// and stay self-consistent.
pub fn max_benign_in_adversarial_subset(n_min: u32) -> u32 {
    n_min.saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountCheck {
    pub holds: bool,
    pub lhs: BigUint,
    pub rhs: BigUint,
}

fn majority_terms(n_anc: u32, n_adv: u32, n_min: u32) -> (BigUint, BigUint) {
    let benign = n_anc - n_adv;
    let lhs = binom_tail(benign, n_min, benign);
    let rhs = (1..=n_adv)
        .map(|i| binomial(n_adv, i) * binom_tail(n_min - 1, n_min.saturating_sub(i), n_min - 1))
        .sum();
    (lhs, rhs)
}

/// Benign subsets outnumber the subsets an adversary can make consistent.
pub fn benign_majority(n_sat: u32, n_adv: u32, n_min: u32) -> Result<CountCheck> {
    InfrastructureCount::new("gnss", n_sat, n_adv, n_min)?;
    let (lhs, rhs) = majority_terms(n_sat, n_adv, n_min);
    Ok(CountCheck {
        holds: lhs > rhs,
        lhs,
        rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfrastructureCount {
    pub name: String,
    pub n_anc: u32,
    pub n_adv: u32,
    pub n_min: u32,
}

impl InfrastructureCount {
    pub fn new(name: &str, n_anc: u32, n_adv: u32, n_min: u32) -> Result<Self> {
        let c = Self {
            name: name.to_string(),
            n_anc,
            n_adv,
            n_min,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_adv > self.n_anc {
            return Err(Error::InvalidInput(format!(
                "{}: n_adv {} exceeds n_anc {}",
                self.name, self.n_adv, self.n_anc
            )));
        }
        if self.n_min < 1 {
            return Err(Error::InvalidInput(format!(
                "{}: n_min must be >= 1",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfrastructureCounts {
    pub infrastructures: Vec<InfrastructureCount>,
}

impl InfrastructureCounts {
    pub fn validate(&self) -> Result<()> {
        self.infrastructures
            .iter()
            .try_for_each(InfrastructureCount::validate)
    }
}

/// Some infrastructure has strictly more benign anchors than its minimum.
pub fn recovery_guaranteed(counts: &InfrastructureCounts) -> Result<bool> {
    counts.validate()?;
    Ok(counts
        .infrastructures
        .iter()
        .any(|c| c.n_anc - c.n_adv > c.n_min))
}

/// Benign and adversarial subset counts summed across infrastructures.
pub fn detection_guaranteed(counts: &InfrastructureCounts) -> Result<CountCheck> {
    counts.validate()?;
    let mut lhs = BigUint::from(0u32);
    let mut rhs = BigUint::from(0u32);
    for c in &counts.infrastructures {
        let (l, r) = majority_terms(c.n_anc, c.n_adv, c.n_min);
        lhs += l;
        rhs += r;
    }
    Ok(CountCheck {
        holds: lhs > rhs,
        lhs,
        rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub n_adv: Vec<u32>,
    pub recovery: bool,
    pub detection: bool,
    /// Satisfies the count condition and no single extra adversary anchor
    /// keeps it satisfied.
    pub maximal: bool,
}

/// Every adversary allocation `0 ≤ n_adv[m] ≤ n_anc[m]` in lexicographic
/// order, with both verdicts.
pub fn feasibility_frontier(n_anc: &[u32], n_min: &[u32]) -> Result<Vec<FrontierRow>> {
    if n_anc.len() != n_min.len() {
        return Err(Error::InvalidInput("n_anc and n_min lengths differ".into()));
    }
    if n_anc.is_empty() {
        return Ok(Vec::new());
    }
    let total: u128 = n_anc.iter().map(|&n| n as u128 + 1).product();
    if total > MAX_FRONTIER_ALLOCATIONS {
        return Err(Error::InvalidInput(format!(
            "{total} adversary allocations exceed the enumeration limit {MAX_FRONTIER_ALLOCATIONS}"
        )));
    }
    let counts_for = |adv: &[u32]| InfrastructureCounts {
        infrastructures: n_anc
            .iter()
            .zip(n_min)
            .zip(adv)
            .enumerate()
            .map(|(m, ((&a, &k), &v))| InfrastructureCount {
                name: format!("m{}", m + 1),
                n_anc: a,
                n_adv: v,
                n_min: k,
            })
            .collect(),
    };
    let mut rows = Vec::with_capacity(total as usize);
    let mut adv = vec![0u32; n_anc.len()];
    loop {
        let c = counts_for(&adv);
        rows.push(FrontierRow {
            n_adv: adv.clone(),
            recovery: recovery_guaranteed(&c)?,
            detection: detection_guaranteed(&c)?.holds,
            maximal: false,
        });
        // Odometer increment, last position fastest.
        let mut m = adv.len();
        loop {
            if m == 0 {
                break;
            }
            m -= 1;
            if adv[m] < n_anc[m] {
                adv[m] += 1;
                for x in adv.iter_mut().skip(m + 1) {
                    *x = 0;
                }
                break;
            }
            if m == 0 {
                adv.clear();
            }
        }
        if adv.is_empty() {
            break;
        }
    }
    let holds: std::collections::HashSet<Vec<u32>> = rows
        .iter()
        .filter(|r| r.detection)
        .map(|r| r.n_adv.clone())
        .collect();
    for r in rows.iter_mut().filter(|r| r.detection) {
        r.maximal = (0..r.n_adv.len()).all(|m| {
            if r.n_adv[m] == n_anc[m] {
                return true;
            }
            let mut up = r.n_adv.clone();
            up[m] += 1;
            !holds.contains(&up)
        });
    }
    Ok(rows)
}
