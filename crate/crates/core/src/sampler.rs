//! Observation–hypothesis pair sampling and sub-logic augmentation.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construct::{Constructor, FreeNodes};
use crate::error::{Error, Result};
use crate::executor::evaluate;
use crate::graph::{EntityId, KnowledgeGraph};
use crate::hypothesis::{extract_pattern, Hypothesis, PatternId};
use crate::set::EntitySet;
use crate::synth::{derive_seed, rng_for};

/// Observations never hold more than this many entities.
pub const MAX_OBSERVATION: usize = 32;

/// Attempts per `sample_pair` call before giving up.
pub const RETRY_BUDGET: u32 = 64;

/// How a sub-hypothesis relates to the hypothesis it was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubRule {
    /// One branch of a union pushed through the outer projection: `[sub] ⊆ [parent]`.
    UnionBranch,
    /// A positive or negated conjunct removed: `[parent] ⊆ [sub]`.
    ConjunctDrop,
    /// A negated branch turned positive; no containment either way.
    NegatedMadePositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Direct,
    Sublogic { parent: PatternId, rule: SubRule },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    #[serde(with = "hypothesis_text")]
    pub hypothesis: Hypothesis,
    pub observation: EntitySet,
    pub pattern: PatternId,
    pub provenance: Provenance,
    pub seed: u64,
    /// The node the construction started from; absent for sub-logic records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<EntityId>,
}

pub(crate) mod hypothesis_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::hypothesis::{parse, Hypothesis};

    pub fn serialize<S: Serializer>(h: &Hypothesis, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&h.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Hypothesis, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Samples one pair of the given pattern. Each attempt draws a fresh start
/// node with its own RNG stream derived from `(seed, pattern, attempt)`.
pub fn sample_pair(g: &KnowledgeGraph, pattern: PatternId, seed: u64) -> Result<PairRecord> {
    if g.entity_count() == 0 || g.triple_count() == 0 {
        return Err(Error::contract("cannot sample pairs from an empty graph"));
    }
    let shape = pattern.shape();
    let constructor = Constructor::new(g, &shape, FreeNodes::Uniform);
    for attempt in 0..RETRY_BUDGET {
        let mut rng = rng_for(&[seed, pattern.index() as u64, attempt as u64]);
        let start = EntityId(rng.gen_range(0..g.entity_count() as u32));
        if let Some((hypothesis, observation)) = constructor.build(start, &mut rng) {
            if observation.len() <= MAX_OBSERVATION {
                return Ok(PairRecord {
                    hypothesis,
                    observation,
                    pattern,
                    provenance: Provenance::Direct,
                    seed,
                    start: Some(start),
                });
            }
        }
    }
    Err(Error::SamplingFailure {
        pattern,
        attempts: RETRY_BUDGET,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetSample {
    pub records: Vec<PairRecord>,
    /// Per-pattern count of `sample_pair` calls that exhausted their retries.
    pub failures: Vec<(PatternId, usize)>,
    /// Patterns that ended with fewer than the requested records.
    pub shortfall: Vec<(PatternId, usize)>,
}

/// Samples `per_pattern` distinct direct records for each of the 13 patterns.
///
/// Records with a hypothesis already drawn are skipped and replaced; a
/// pattern gives up after `4 * per_pattern + 16` draws.
pub fn sample_dataset(g: &KnowledgeGraph, per_pattern: usize, seed: u64) -> Result<DatasetSample> {
    if per_pattern == 0 {
        return Err(Error::contract("per_pattern must be at least 1"));
    }
    if g.entity_count() == 0 || g.triple_count() == 0 {
        return Err(Error::contract("cannot sample pairs from an empty graph"));
    }
    let budget = 4 * per_pattern + 16;
    let per: Vec<(PatternId, Vec<PairRecord>, usize)> = PatternId::ALL
        .par_iter()
        .map(|&p| {
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(per_pattern);
            let mut failures = 0;
            for j in 0..budget {
                if out.len() == per_pattern {
                    break;
                }
                match sample_pair(g, p, derive_seed(&[seed, p.index() as u64, j as u64])) {
                    Ok(rec) => {
                        if seen.insert(rec.hypothesis.clone()) {
                            out.push(rec);
                        }
                    }
                    Err(_) => failures += 1,
                }
            }
            (p, out, failures)
        })
        .collect();
    let mut sample = DatasetSample::default();
    for (p, recs, failures) in per {
        if failures > 0 {
            sample.failures.push((p, failures));
        }
        if recs.len() < per_pattern {
            sample.shortfall.push((p, per_pattern - recs.len()));
        }
        sample.records.extend(recs);
    }
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubLogic {
    pub hypothesis: Hypothesis,
    pub pattern: PatternId,
    pub rule: SubRule,
}

fn sub(hypothesis: Hypothesis, pattern: PatternId, rule: SubRule) -> SubLogic {
    SubLogic {
        hypothesis,
        pattern,
        rule,
    }
}

/// Splits an intersection's children into positive conjuncts and negated inners.
fn split_conjuncts(cs: &[Hypothesis]) -> (Vec<&Hypothesis>, Vec<&Hypothesis>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for c in cs {
        match c {
            Hypothesis::Neg(inner) => neg.push(inner.as_ref()),
            other => pos.push(other),
        }
    }
    (pos, neg)
}

/// Catalog sub-hypotheses of a complex hypothesis, reusing its anchors and relations.
///
/// | parent | subs |
/// |--------|------|
/// | up  | two 2p, one per union branch |
/// | inp | 2p along the positive chain; 2p along the negated chain made positive |
/// | pin | the positive 2p; the negated 1p made positive |
/// | pni | the positive 1p; the negated 2p made positive |
/// | 3in | 2i without the negation; 2in without either positive conjunct |
pub fn decompose(h: &Hypothesis, parent: PatternId) -> Result<Vec<SubLogic>> {
    if !parent.is_decomposable() {
        return Err(Error::UnsupportedPattern(parent));
    }
    if extract_pattern(h) != Some(parent) {
        return Err(Error::contract(format!("{h} is not an instance of `{parent}`")));
    }
    let malformed = || Error::contract(format!("{h} does not have the `{parent}` layout"));
    let proj_of = |r, x: &Hypothesis| Hypothesis::Proj(r, Box::new(x.clone()));
    Ok(match (parent, h) {
        (PatternId::Up, Hypothesis::Proj(r, inner)) => match inner.as_ref() {
            Hypothesis::Union(cs) => cs
                .iter()
                .map(|c| sub(proj_of(*r, c), PatternId::P2, SubRule::UnionBranch))
                .collect(),
            _ => return Err(malformed()),
        },
        (PatternId::Inp, Hypothesis::Proj(r, inner)) => match inner.as_ref() {
            Hypothesis::Inter(cs) => {
                let (pos, neg) = split_conjuncts(cs);
                vec![
                    sub(proj_of(*r, pos[0]), PatternId::P2, SubRule::ConjunctDrop),
                    sub(proj_of(*r, neg[0]), PatternId::P2, SubRule::NegatedMadePositive),
                ]
            }
            _ => return Err(malformed()),
        },
        (PatternId::Pin, Hypothesis::Inter(cs)) | (PatternId::Pni, Hypothesis::Inter(cs)) => {
            let (pos, neg) = split_conjuncts(cs);
            let (pos_pattern, neg_pattern) = if parent == PatternId::Pin {
                (PatternId::P2, PatternId::P1)
            } else {
                (PatternId::P1, PatternId::P2)
            };
            vec![
                sub(pos[0].clone(), pos_pattern, SubRule::ConjunctDrop),
                sub(neg[0].clone(), neg_pattern, SubRule::NegatedMadePositive),
            ]
        }
        (PatternId::In3, Hypothesis::Inter(cs)) => {
            let (pos, neg) = split_conjuncts(cs);
            let negated = Hypothesis::Neg(Box::new(neg[0].clone()));
            vec![
                sub(
                    Hypothesis::Inter(vec![pos[0].clone(), pos[1].clone()]),
                    PatternId::I2,
                    SubRule::ConjunctDrop,
                ),
                sub(
                    Hypothesis::Inter(vec![pos[0].clone(), negated.clone()]),
                    PatternId::In2,
                    SubRule::ConjunctDrop,
                ),
                sub(
                    Hypothesis::Inter(vec![pos[1].clone(), negated]),
                    PatternId::In2,
                    SubRule::ConjunctDrop,
                ),
            ]
        }
        _ => return Err(malformed()),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Augmented {
    pub records: Vec<PairRecord>,
    pub dropped_oversize: usize,
    pub dropped_empty: usize,
    pub dropped_duplicate: usize,
}

/// Appends sub-logic records for every decomposable record. Sub-observations
/// are recomputed on `g`; empty or oversize ones are dropped and counted, as
/// are sub-hypotheses already present.
pub fn augment(g: &KnowledgeGraph, records: &[PairRecord]) -> Result<Augmented> {
    let mut out = Augmented {
        records: records.to_vec(),
        ..Default::default()
    };
    let mut seen: HashSet<Hypothesis> = records.iter().map(|r| r.hypothesis.clone()).collect();
    for rec in records {
        if !rec.pattern.is_decomposable() {
            continue;
        }
        for s in decompose(&rec.hypothesis, rec.pattern)? {
            let observation = evaluate(g, &s.hypothesis)?;
            if observation.is_empty() {
                out.dropped_empty += 1;
                continue;
            }
            if observation.len() > MAX_OBSERVATION {
                out.dropped_oversize += 1;
                continue;
            }
            if !seen.insert(s.hypothesis.clone()) {
                out.dropped_duplicate += 1;
                continue;
            }
            out.records.push(PairRecord {
                hypothesis: s.hypothesis,
                observation,
                pattern: s.pattern,
                provenance: Provenance::Sublogic {
                    parent: rec.pattern,
                    rule: s.rule,
                },
                seed: rec.seed,
                start: None,
            });
        }
    }
    Ok(out)
}

/// Keeps records whose observation holds at least one entity that no triple
/// of `seen_graph` mentions.
pub fn filter_unseen(records: Vec<PairRecord>, seen_graph: &KnowledgeGraph) -> Vec<PairRecord> {
    let mut seen = vec![false; seen_graph.entity_count()];
    for t in seen_graph.triples() {
        seen[t.head.index()] = true;
        seen[t.tail.index()] = true;
    }
    records
        .into_iter()
        .filter(|r| r.observation.iter().any(|e| !seen.get(e.index()).copied().unwrap_or(false)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::toy_g1;
    use crate::hypothesis::parse;
    use crate::synth::random_graph;

    #[test]
    fn toy_one_hop_pair_from_c() {
        let g = toy_g1();
        let c = EntityId(2);
        let constructor = Constructor::new(&g, &PatternId::P1.shape(), FreeNodes::Uniform);
        let mut found = false;
        for s in 0..64 {
            let (h, o) = constructor.build(c, &mut rng_for(&[s])).unwrap();
            assert!(o.contains(c));
            if h == parse("(p r1 (e e0))").unwrap() {
                assert_eq!(o, EntitySet::from_ids([1, 2]));
                found = true;
            }
        }
        assert!(found, "the edge (a, r1, c) was never chosen");
    }

    #[test]
    fn sampled_pairs_are_sound() {
        let g = random_graph(80, 4, 500, 5);
        for p in PatternId::ALL {
            for s in 0..10 {
                let rec = sample_pair(&g, p, s).unwrap();
                assert_eq!(evaluate(&g, &rec.hypothesis).unwrap(), rec.observation);
                assert!(rec.observation.contains(rec.start.unwrap()));
                assert!((1..=MAX_OBSERVATION).contains(&rec.observation.len()));
                assert_eq!(extract_pattern(&rec.hypothesis), Some(p));
            }
        }
    }

    #[test]
    fn intersection_branches_share_the_start_node() {
        let g = random_graph(60, 3, 400, 8);
        for s in 0..20 {
            let rec = sample_pair(&g, PatternId::I2, s).unwrap();
            let v = rec.start.unwrap();
            for branch in rec.hypothesis.children() {
                assert!(evaluate(&g, branch).unwrap().contains(v));
            }
        }
    }

    #[test]
    fn sampling_fails_cleanly_when_no_pattern_fits() {
        // No entity has two distinct incoming edges, so 2i can never be built.
        let g = KnowledgeGraph::from_triples(4, 1, [crate::Triple::new(0, 0, 1), crate::Triple::new(2, 0, 3)]).unwrap();
        assert!(matches!(
            sample_pair(&g, PatternId::I2, 0),
            Err(Error::SamplingFailure { attempts: RETRY_BUDGET, .. })
        ));
        let empty = KnowledgeGraph::from_triples(3, 1, []).unwrap();
        assert!(matches!(sample_pair(&empty, PatternId::P1, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let g = random_graph(120, 5, 900, 11);
        let a = sample_dataset(&g, 10, 3).unwrap();
        assert_eq!(a.records.len(), 130);
        for p in PatternId::ALL {
            assert_eq!(a.records.iter().filter(|r| r.pattern == p).count(), 10);
        }
        assert_eq!(a, sample_dataset(&g, 10, 3).unwrap());
        let b = sample_dataset(&g, 10, 4).unwrap();
        assert_ne!(a.records, b.records);
        for p in PatternId::ALL {
            assert_eq!(b.records.iter().filter(|r| r.pattern == p).count(), 10);
        }
        let distinct: HashSet<_> = a.records.iter().map(|r| &r.hypothesis).collect();
        assert_eq!(distinct.len(), a.records.len());
    }

    #[test]
    fn decompose_inp_example() {
        let h = parse("(p r3 (i (p r1 (e e0)) (n (p r2 (e e1)))))").unwrap();
        let subs = decompose(&h, PatternId::Inp).unwrap();
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].hypothesis, parse("(p r3 (p r1 (e e0)))").unwrap());
        assert_eq!(subs[1].hypothesis, parse("(p r3 (p r2 (e e1)))").unwrap());
        assert!(subs.iter().all(|s| s.pattern == PatternId::P2));
    }

    #[test]
    fn decompose_rule_table() {
        let up = parse("(p r3 (u (p r1 (e e0)) (p r2 (e e1))))").unwrap();
        let subs = decompose(&up, PatternId::Up).unwrap();
        assert_eq!(
            subs.iter().map(|s| s.hypothesis.to_string()).collect::<Vec<_>>(),
            ["(p r3 (p r1 (e e0)))", "(p r3 (p r2 (e e1)))"]
        );
        assert!(subs.iter().all(|s| s.rule == SubRule::UnionBranch));

        let in3 = parse("(i (p r1 (e e0)) (n (p r3 (e e2))) (p r2 (e e1)))").unwrap();
        let subs = decompose(&in3, PatternId::In3).unwrap();
        let patterns: Vec<PatternId> = subs.iter().map(|s| s.pattern).collect();
        assert_eq!(patterns, [PatternId::I2, PatternId::In2, PatternId::In2]);

        let pni = parse("(i (n (p r2 (p r1 (e e0)))) (p r3 (e e1)))").unwrap();
        let subs = decompose(&pni, PatternId::Pni).unwrap();
        assert_eq!(subs[0].hypothesis.to_string(), "(p r3 (e e1))");
        assert_eq!(subs[1].hypothesis.to_string(), "(p r2 (p r1 (e e0)))");

        for s in decompose(&pni, PatternId::Pni).unwrap() {
            assert_eq!(extract_pattern(&s.hypothesis), Some(s.pattern));
        }
        assert!(matches!(
            decompose(&parse("(p r1 (e e0))").unwrap(), PatternId::P1),
            Err(Error::UnsupportedPattern(PatternId::P1))
        ));
        assert!(matches!(decompose(&pni, PatternId::Pin), Err(Error::Contract(_))));
    }

    #[test]
    fn augment_appends_sub_records() {
        let g = random_graph(80, 4, 500, 21);
        let inp = sample_pair(&g, PatternId::Inp, 1).unwrap();
        let out = augment(&g, std::slice::from_ref(&inp)).unwrap();
        assert_eq!(out.records[0], inp);
        assert!(out.records.len() <= 3);
        for r in &out.records[1..] {
            assert_eq!(r.pattern, PatternId::P2);
            assert_eq!(evaluate(&g, &r.hypothesis).unwrap(), r.observation);
            assert!(matches!(r.provenance, Provenance::Sublogic { parent: PatternId::Inp, .. }));
        }
        let simple: Vec<PairRecord> = (0..5).map(|s| sample_pair(&g, PatternId::P1, s).unwrap()).collect();
        assert_eq!(augment(&g, &simple).unwrap().records, simple);
    }

    #[test]
    fn record_json_row_layout() {
        let g = toy_g1();
        let rec = sample_pair(&g, PatternId::P1, 0).unwrap();
        let v = serde_json::to_value(&rec).unwrap();
        assert!(v["hypothesis"].as_str().unwrap().starts_with("(p "));
        assert_eq!(v["pattern"], "1p");
        assert_eq!(v["provenance"], "direct");
        let back: PairRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, rec);
        let sub = PairRecord {
            provenance: Provenance::Sublogic {
                parent: PatternId::Up,
                rule: SubRule::UnionBranch,
            },
            start: None,
            ..rec
        };
        let v = serde_json::to_value(&sub).unwrap();
        assert_eq!(v["provenance"]["sublogic"]["parent"], "up");
    }

    #[test]
    fn unseen_filter_keeps_records_with_new_entities() {
        let split = crate::synth::random_split(200, 3, 300, 2);
        let sample = sample_dataset(&split.test, 5, 1).unwrap();
        let kept = filter_unseen(sample.records.clone(), &split.train);
        assert!(kept.len() <= sample.records.len());
        for r in &kept {
            assert!(r.observation.iter().any(|e| split.train.out_edges(*e).is_empty() && split.train.in_edges(*e).is_empty()));
        }
    }
}
