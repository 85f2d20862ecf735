//! Hypothesis-space collapse and reward oversensitivity measurements.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::enumerate::{enumerate_pattern, ExhaustiveBound};
use crate::error::{Error, Result};
use crate::executor::evaluate;
use crate::graph::{KnowledgeGraph, RelationId};
use crate::hypothesis::{Hypothesis, PatternId};
use crate::rewards::similarity;
use crate::sampler::{sample_pair, PairRecord};
use crate::set::EntitySet;
use crate::synth::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardinalityProfile {
    pub pattern: PatternId,
    pub samples: usize,
    /// Conclusion size to number of sampled hypotheses with that size.
    pub histogram: BTreeMap<usize, usize>,
    pub mean_conclusion_size: f64,
    /// Per observation: instances of the pattern whose conclusion contains it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_candidates: Option<f64>,
    /// Per observation: instances whose conclusion equals it exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_counts: Option<Vec<usize>>,
}

/// Draws `samples` pairs of one pattern, retrying failed draws on fresh seeds.
pub fn sample_observations(g: &KnowledgeGraph, pattern: PatternId, samples: usize, seed: u64) -> Result<Vec<PairRecord>> {
    if samples == 0 {
        return Err(Error::contract("samples must be at least 1"));
    }
    let mut out = Vec::with_capacity(samples);
    let mut j = 0u64;
    let limit = 4 * samples as u64 + 16;
    while out.len() < samples {
        if j == limit {
            return Err(Error::SamplingFailure {
                pattern,
                attempts: j as u32,
            });
        }
        if let Ok(rec) = sample_pair(g, pattern, derive_seed(&[seed, pattern.index() as u64, j])) {
            out.push(rec);
        }
        j += 1;
    }
    Ok(out)
}

/// Conclusion-size distribution of sampled hypotheses and, when `bound`
/// is given, exhaustive candidate counts per observation.
pub fn evaluate_cardinality_profile(
    g: &KnowledgeGraph,
    pattern: PatternId,
    samples: usize,
    seed: u64,
    bound: Option<&ExhaustiveBound>,
) -> Result<CardinalityProfile> {
    let records = sample_observations(g, pattern, samples, seed)?;
    let mut histogram = BTreeMap::new();
    for r in &records {
        *histogram.entry(r.observation.len()).or_insert(0) += 1;
    }
    let mean_conclusion_size = records.iter().map(|r| r.observation.len() as f64).sum::<f64>() / samples as f64;
    let mut profile = CardinalityProfile {
        pattern,
        samples,
        histogram,
        mean_conclusion_size,
        candidate_counts: None,
        mean_candidates: None,
        exact_counts: None,
    };
    if let Some(bound) = bound {
        let space = enumerate_pattern(g, pattern, None, bound)?;
        let covering: Vec<usize> = records
            .iter()
            .map(|r| space.iter().filter(|(_, s)| r.observation.is_subset(s)).count())
            .collect();
        let exact = records.iter().map(|r| space.iter().filter(|(_, s)| *s == r.observation).count()).collect();
        profile.mean_candidates = Some(covering.iter().sum::<usize>() as f64 / samples as f64);
        profile.candidate_counts = Some(covering);
        profile.exact_counts = Some(exact);
    }
    Ok(profile)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub relations: usize,
    pub patterns: Vec<PatternId>,
    /// Mean of the per-pattern mean candidate counts.
    pub mean_candidates: f64,
    pub mean_exact: f64,
}

/// Candidate counts grouped by hypothesis length (number of relations).
pub fn collapse_profile(g: &KnowledgeGraph, samples: usize, seed: u64, bound: &ExhaustiveBound) -> Result<Vec<CollapseRow>> {
    let mut rows: BTreeMap<usize, (Vec<PatternId>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in PatternId::ALL {
        let prof = evaluate_cardinality_profile(g, p, samples, seed, Some(bound))?;
        let exact = prof.exact_counts.as_ref().expect("bound given");
        let row = rows.entry(p.relation_count()).or_default();
        row.0.push(p);
        row.1.push(prof.mean_candidates.expect("bound given"));
        row.2.push(exact.iter().sum::<usize>() as f64 / samples as f64);
    }
    Ok(rows
        .into_iter()
        .map(|(relations, (patterns, cov, ex))| CollapseRow {
            relations,
            mean_candidates: cov.iter().sum::<f64>() / cov.len() as f64,
            mean_exact: ex.iter().sum::<f64>() / ex.len() as f64,
            patterns,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Oversensitivity {
    pub pairs: usize,
    pub jaccard: f64,
    pub dice: f64,
    pub overlap: f64,
}

/// Replaces one relation of `h` with a different one.
fn perturb<R: Rng>(h: &Hypothesis, relations: usize, rng: &mut R) -> Hypothesis {
    let slots = h.count_relations();
    let target = rng.gen_range(0..slots);
    fn go<R: Rng>(h: &Hypothesis, target: usize, seen: &mut usize, relations: usize, rng: &mut R) -> Hypothesis {
        match h {
            Hypothesis::Proj(r, c) => {
                let here = *seen == target;
                *seen += 1;
                let child = go(c, target, seen, relations, rng);
                let r = if here {
                    let others: Vec<u32> = (0..relations as u32).filter(|&x| x != r.0).collect();
                    RelationId(*others.choose(rng).expect("at least two relations"))
                } else {
                    *r
                };
                Hypothesis::Proj(r, Box::new(child))
            }
            Hypothesis::Anchor(e) => Hypothesis::Anchor(*e),
            Hypothesis::Neg(c) => Hypothesis::Neg(Box::new(go(c, target, seen, relations, rng))),
            Hypothesis::Inter(cs) => Hypothesis::Inter(cs.iter().map(|c| go(c, target, seen, relations, rng)).collect()),
            Hypothesis::Union(cs) => Hypothesis::Union(cs.iter().map(|c| go(c, target, seen, relations, rng)).collect()),
        }
    }
    go(h, target, &mut 0, relations, rng)
}

/// Mean similarity between sampled observations and the conclusions of
/// their hypotheses with one relation swapped. Swaps leading to an empty
/// conclusion are retried a few times, then skipped.
pub fn oversensitivity_profile(g: &KnowledgeGraph, pattern: PatternId, samples: usize, seed: u64) -> Result<Oversensitivity> {
    if g.relation_count() < 2 {
        return Err(Error::contract("need at least two relations to perturb a hypothesis"));
    }
    let records = sample_observations(g, pattern, samples, seed)?;
    let mut acc = Oversensitivity::default();
    for (i, r) in records.iter().enumerate() {
        let mut rng = rng_for(&[seed, i as u64, 0x7065_7274]);
        for _ in 0..8 {
            let h = perturb(&r.hypothesis, g.relation_count(), &mut rng);
            let c: EntitySet = evaluate(g, &h)?;
            if c.is_empty() {
                continue;
            }
            let s = similarity(&c, &r.observation);
            acc.pairs += 1;
            acc.jaccard += s.jaccard;
            acc.dice += s.dice;
            acc.overlap += s.overlap;
            break;
        }
    }
    if acc.pairs > 0 {
        let n = acc.pairs as f64;
        acc.jaccard /= n;
        acc.dice /= n;
        acc.overlap /= n;
    }
    Ok(acc)
}
