//! Condition-constrained hypothesis search for an observation.
//!
//! Candidates come either from exhaustive enumeration or from Monte-Carlo
//! backward construction rooted at observation members. They are ranked
//! adherent-first, then by combined reward, then by fewer relations, then by
//! canonical text.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construct::{Constructor, FreeNodes, Required};
use crate::enumerate::{enumerate_pattern, ExhaustiveBound};
use crate::error::{Error, Result};
use crate::executor::evaluate;
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use crate::hypothesis::{extract_pattern, Condition, Hypothesis, PatternId};
use crate::rewards::{combined_reward, RewardBreakdown, RewardWeights};
use crate::set::EntitySet;
use crate::synth::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    MonteCarlo,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    pub proposals_per_pattern: usize,
    /// Candidates kept per pattern before the final merge (never below `k`).
    pub beam_width: usize,
    pub mode: SearchMode,
    pub seed: u64,
    pub exhaustive_bound: ExhaustiveBound,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            proposals_per_pattern: 512,
            beam_width: 64,
            mode: SearchMode::MonteCarlo,
            seed: 0,
            exhaustive_bound: ExhaustiveBound::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHypothesis {
    pub hypothesis: Hypothesis,
    pub pattern: Option<PatternId>,
    pub conclusion: EntitySet,
    pub breakdown: RewardBreakdown,
    pub condition_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abduction {
    pub hypotheses: Vec<ScoredHypothesis>,
    /// Distinct candidates scored across all patterns.
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

struct Ranked {
    key: String,
    relations: usize,
    scored: ScoredHypothesis,
}

fn rank(a: &Ranked, b: &Ranked) -> Ordering {
    b.scored
        .condition_ok
        .cmp(&a.scored.condition_ok)
        .then_with(|| b.scored.breakdown.r_hat.total_cmp(&a.scored.breakdown.r_hat))
        .then_with(|| a.relations.cmp(&b.relations))
        .then_with(|| a.key.cmp(&b.key))
}

struct Ctx<'a> {
    g: &'a KnowledgeGraph,
    observation: &'a EntitySet,
    condition: &'a Condition,
    w: &'a RewardWeights,
}

impl Ctx<'_> {
    fn score(&self, h: Hypothesis, conclusion: EntitySet) -> Result<Ranked> {
        let h = h.canonicalize();
        let breakdown = combined_reward(&conclusion, self.observation, &h, self.condition, self.w)?;
        Ok(Ranked {
            key: h.to_string(),
            relations: h.count_relations(),
            scored: ScoredHypothesis {
                pattern: extract_pattern(&h),
                condition_ok: breakdown.r_cond == 1.0,
                hypothesis: h,
                conclusion,
                breakdown,
            },
        })
    }
}

fn required_token(c: &Condition) -> Option<Required> {
    match c {
        Condition::SpecificEntity(e) => Some(Required::Entity(*e)),
        Condition::SpecificRelation(r) => Some(Required::Relation(*r)),
        _ => None,
    }
}

/// Backward Monte-Carlo proposals for one pattern. `stream` separates
/// independent proposal sets drawn with the same seed.
fn propose(
    ctx: &Ctx,
    pattern: PatternId,
    count: usize,
    seed: u64,
    stream: u64,
    forced: &dyn Fn(usize) -> Option<Required>,
) -> Vec<(Hypothesis, EntitySet)> {
    let guided = draw_proposals(ctx, pattern, count, &[seed, pattern.index() as u64, stream], forced, true);
    if !guided.is_empty() || forced(0).is_some() {
        return guided;
    }
    // Nothing of this shape reaches the observation; fall back to instances
    // started anywhere in the graph.
    draw_proposals(ctx, pattern, count, &[seed, pattern.index() as u64, stream, 0x616e79], forced, false)
}

fn draw_proposals(
    ctx: &Ctx,
    pattern: PatternId,
    count: usize,
    stream: &[u64],
    forced: &dyn Fn(usize) -> Option<Required>,
    guided: bool,
) -> Vec<(Hypothesis, EntitySet)> {
    let shape = pattern.shape();
    let everywhere: EntitySet;
    let pool = if guided {
        ctx.observation
    } else {
        everywhere = ctx.g.entities().collect();
        &everywhere
    };
    let free = if guided { FreeNodes::Guided(ctx.observation) } else { FreeNodes::Uniform };
    let mut out = Vec::new();
    for j in 0..count {
        let mut parts = stream.to_vec();
        parts.push(j as u64);
        let mut rng = rng_for(&parts);
        let mut c = Constructor::new(ctx.g, &shape, free);
        let starts = match forced(j) {
            Some(token) => {
                c.force(token, &mut rng);
                c.feasible_starts(pool)
            }
            None => pool.as_slice().to_vec(),
        };
        let Some(&v) = starts.choose(&mut rng) else {
            continue;
        };
        if let Some(found) = c.build(v, &mut rng) {
            out.push(found);
        }
    }
    out
}

/// Scores, deduplicates and keeps the best `keep` candidates.
fn shortlist(ctx: &Ctx, raw: Vec<(Hypothesis, EntitySet)>, keep: usize) -> Result<(usize, Vec<Ranked>)> {
    let mut seen: HashMap<String, Ranked> = HashMap::new();
    for (h, c) in raw {
        let r = ctx.score(h, c)?;
        seen.entry(r.key.clone()).or_insert(r);
    }
    let distinct = seen.len();
    let mut all: Vec<Ranked> = seen.into_values().collect();
    all.sort_by(rank);
    all.truncate(keep);
    Ok((distinct, all))
}

/// Union of a branch holding the required token with the best one-hop
/// explanation of the observation. `None` when the token cannot appear in
/// any nonempty one-hop branch.
fn union_splice(ctx: &Ctx, token: Required) -> Option<(Hypothesis, EntitySet)> {
    let g = ctx.g;
    let obs = ctx.observation;
    let best_by_overlap = |cands: Vec<(Hypothesis, EntitySet)>| {
        cands
            .into_iter()
            .max_by(|(ha, a), (hb, b)| {
                a.intersection_len(obs)
                    .cmp(&b.intersection_len(obs))
                    .then_with(|| hb.to_string().cmp(&ha.to_string()))
            })
    };
    let one_hop = |r: RelationId, u: EntityId| {
        let h = Hypothesis::one_hop(r, u);
        let c: EntitySet = g.tails(u, r).collect();
        (h, c)
    };
    let required: Vec<(Hypothesis, EntitySet)> = match token {
        Required::Entity(e) => {
            let mut rels: Vec<RelationId> = g.out_edges(e).iter().map(|&(r, _)| r).collect();
            rels.dedup();
            rels.into_iter().map(|r| one_hop(r, e)).collect()
        }
        Required::Relation(r) => {
            let mut heads: Vec<EntityId> = g.triples().iter().filter(|t| t.rel == r).map(|t| t.head).collect();
            heads.sort_unstable();
            heads.dedup();
            heads.into_iter().map(|u| one_hop(r, u)).collect()
        }
    };
    let (rh, rc) = best_by_overlap(required)?;
    let mut explain = Vec::new();
    for &o in obs.iter() {
        for &(r, u) in g.in_edges(o) {
            explain.push(one_hop(r, u));
        }
    }
    explain.retain(|(h, _)| *h != rh);
    let (bh, bc) = best_by_overlap(explain)?;
    let h = Hypothesis::Union(vec![rh, bh]);
    Some((h, rc.union(&bc)))
}

fn validate(g: &KnowledgeGraph, observation: &EntitySet, condition: &Condition, budget: &SearchBudget, k: usize, w: &RewardWeights) -> Result<()> {
    if observation.is_empty() {
        return Err(Error::contract("observation must be nonempty"));
    }
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    if budget.mode == SearchMode::MonteCarlo && budget.proposals_per_pattern == 0 {
        return Err(Error::contract("proposals_per_pattern must be at least 1"));
    }
    for &e in observation.iter() {
        g.check_entity(e)?;
    }
    condition.validate()?;
    condition.check_ids(g)?;
    w.validate()
}

fn search(
    g: &KnowledgeGraph,
    observation: &EntitySet,
    condition: &Condition,
    budget: &SearchBudget,
    k: usize,
    w: &RewardWeights,
    warm: Option<&ScoredHypothesis>,
) -> Result<Abduction> {
    validate(g, observation, condition, budget, k, w)?;
    let ctx = Ctx {
        g,
        observation,
        condition,
        w,
    };
    let patterns = condition.compatible_patterns();
    if patterns.is_empty() {
        return Ok(Abduction {
            hypotheses: Vec::new(),
            candidates: 0,
            diagnostic: Some(format!("no catalog pattern is compatible with {condition}")),
        });
    }
    let keep = budget.beam_width.max(k);
    let required = required_token(condition);
    let warm_tokens: Vec<Required> = match (warm, required) {
        (Some(prev), None) => {
            let mut t: Vec<Required> = prev.hypothesis.anchors().into_iter().map(Required::Entity).collect();
            t.extend(prev.hypothesis.relations().into_iter().map(Required::Relation));
            t
        }
        _ => Vec::new(),
    };

    let per_pattern: Vec<(usize, Vec<Ranked>)> = patterns
        .par_iter()
        .map(|&p| {
            let mut raw = match budget.mode {
                SearchMode::Exhaustive => enumerate_pattern(g, p, None, &budget.exhaustive_bound)?,
                SearchMode::MonteCarlo => propose(&ctx, p, budget.proposals_per_pattern, budget.seed, 0, &|_| required),
            };
            if let Some(prev) = warm {
                if prev.pattern == Some(p) {
                    raw.push((prev.hypothesis.clone(), evaluate(g, &prev.hypothesis)?));
                }
                if budget.mode == SearchMode::MonteCarlo && !warm_tokens.is_empty() {
                    let extra = budget.proposals_per_pattern.div_ceil(4);
                    raw.extend(propose(&ctx, p, extra, budget.seed, 1, &|j| Some(warm_tokens[j % warm_tokens.len()])));
                }
            }
            shortlist(&ctx, raw, keep)
        })
        .collect::<Result<_>>()?;

    let mut candidates = 0;
    let mut merged = Vec::new();
    for (n, ranked) in per_pattern {
        candidates += n;
        merged.extend(ranked);
    }
    let mut diagnostic = None;
    if let Some(token) = required {
        if !merged.iter().any(|r| r.scored.condition_ok) {
            let union_ok = patterns.contains(&PatternId::U2);
            match union_splice(&ctx, token).filter(|_| union_ok) {
                Some((h, c)) => {
                    merged.push(ctx.score(h, c)?);
                    candidates += 1;
                    diagnostic = Some(format!("{condition} is unreachable from the observation; spliced it in through a union"));
                }
                None => {
                    diagnostic = Some(format!("no candidate satisfies {condition}; results are not adherent"));
                }
            }
        }
    }
    if merged.iter().any(|r| r.scored.condition_ok) {
        merged.retain(|r| r.scored.condition_ok);
    }
    merged.sort_by(rank);
    merged.truncate(k);
    if merged.is_empty() {
        diagnostic.get_or_insert_with(|| "no candidate hypothesis could be built for this observation".into());
    }
    Ok(Abduction {
        hypotheses: merged.into_iter().map(|r| r.scored).collect(),
        candidates,
        diagnostic,
    })
}

/// Top-`k` hypotheses explaining `observation` under `condition`.
pub fn abduce(
    g: &KnowledgeGraph,
    observation: &EntitySet,
    condition: &Condition,
    budget: &SearchBudget,
    k: usize,
    w: &RewardWeights,
) -> Result<Abduction> {
    search(g, observation, condition, budget, k, w, None)
}

/// Re-runs the search under a new condition with the previous hypothesis
/// and proposals seeded from its anchors and relations added to the pool.
pub fn refine(
    previous: &ScoredHypothesis,
    new_condition: &Condition,
    g: &KnowledgeGraph,
    observation: &EntitySet,
    budget: &SearchBudget,
    k: usize,
    w: &RewardWeights,
) -> Result<Abduction> {
    previous.hypothesis.check_ids(g)?;
    search(g, observation, new_condition, budget, k, w, Some(previous))
}
