//! Popularity inequality and cross-world unpredictability.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::WorldAggregates;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("metric needs at least one value")]
    EmptyInput,
    #[error("values must be finite and non-negative")]
    InvalidValue,
}

fn check(values: &[f64]) -> Result<(), MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(MetricError::InvalidValue);
    }
    Ok(())
}

/// Gini coefficient via the sorted-rank formula
/// `G = 2 Σ i·x_(i) / (n Σ x) − (n + 1) / n` with 1-based ranks.
/// All-zero input is defined as perfect equality.
pub fn gini(values: &[f64]) -> Result<f64, MetricError> {
    check(values)?;
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (i as f64 + 1.0) * v)
        .sum();
    Ok((2.0 * weighted / (n * total) - (n + 1.0) / n).max(0.0))
}

/// Shannon entropy in bits of the normalized distribution, with `0·log 0 = 0`.
pub fn shannon_entropy(values: &[f64]) -> Result<f64, MetricError> {
    check(values)?;
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let h: f64 = values
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| {
            let p = v / total;
            -p * p.log2()
        })
        .sum();
    Ok(h.max(0.0))
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tie-averaged ranks.
///
/// Two constant vectors are treated as identical rankings (ρ = 1); exactly
/// one constant vector carries no rank information (ρ = 0).
pub fn spearman_rho(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rank vectors must align");
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    if n == 0.0 {
        return 1.0;
    }
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    match (va == 0.0, vb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (cov / (va * vb).sqrt()).clamp(-1.0, 1.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldDiversity {
    pub world_index: usize,
    pub gini: f64,
    pub entropy_bits: f64,
    pub top_entity: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub condition_index: usize,
    pub per_world: Vec<WorldDiversity>,
    /// Mean pairwise `1 − ρ` between worlds' share rankings; 0 with fewer than two worlds.
    pub cross_world_unpredictability: f64,
}

impl DiversityReport {
    pub fn mean_gini(&self) -> f64 {
        if self.per_world.is_empty() {
            return 0.0;
        }
        self.per_world.iter().map(|w| w.gini).sum::<f64>() / self.per_world.len() as f64
    }
}

/// Inequality of final share counts in each world of one condition.
///
/// `universe` lists every entity the condition can display, so entities
/// nobody shared still count as zeros.
pub fn diversity_report(
    condition_index: usize,
    worlds: &[impl AsRef<WorldAggregates>],
    universe: &[String],
) -> Result<DiversityReport, MetricError> {
    if universe.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let vectors: Vec<Vec<f64>> = worlds
        .iter()
        .map(|w| w.as_ref().share_vector(universe))
        .collect();
    let mut per_world = Vec::with_capacity(worlds.len());
    for (world, shares) in worlds.iter().zip(&vectors) {
        let top = shares
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |best, (i, &s)| match best {
                Some((bi, bs)) if bs > s || (bs == s && universe[bi] <= universe[i]) => {
                    Some((bi, bs))
                }
                _ => Some((i, s)),
            })
            .map(|(i, _)| universe[i].clone())
            .expect("non-empty universe");
        per_world.push(WorldDiversity {
            world_index: world.as_ref().world_index,
            gini: gini(shares)?,
            entropy_bits: shannon_entropy(shares)?,
            top_entity: top,
        });
    }
    let mut distance = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            distance += 1.0 - spearman_rho(&vectors[i], &vectors[j]);
            pairs += 1;
        }
    }
    Ok(DiversityReport {
        condition_index,
        per_world,
        cross_world_unpredictability: if pairs == 0 {
            0.0
        } else {
            distance / pairs as f64
        },
    })
}
