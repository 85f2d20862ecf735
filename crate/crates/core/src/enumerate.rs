//! Exhaustive enumeration of catalog instances with nonempty conclusions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use crate::hypothesis::{Hypothesis, PatternId, Shape};
use crate::set::EntitySet;

/// Graphs above these sizes are refused for every pattern except 1p and 2p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExhaustiveBound {
    pub max_entities: usize,
    pub max_triples: usize,
}

impl Default for ExhaustiveBound {
    fn default() -> Self {
        ExhaustiveBound {
            max_entities: 200,
            max_triples: 2000,
        }
    }
}

impl ExhaustiveBound {
    pub fn check(&self, g: &KnowledgeGraph, pattern: PatternId) -> Result<()> {
        let exempt = matches!(pattern, PatternId::P1 | PatternId::P2);
        if !exempt && (g.entity_count() > self.max_entities || g.triple_count() > self.max_triples) {
            return Err(Error::SizeBound {
                entities: g.entity_count(),
                triples: g.triple_count(),
                max_entities: self.max_entities,
                max_triples: self.max_triples,
            });
        }
        Ok(())
    }
}

type Instances = Vec<(Hypothesis, EntitySet)>;

struct Enumerator<'a> {
    g: &'a KnowledgeGraph,
    anchors: Vec<EntityId>,
    memo: HashMap<(String, bool), std::rc::Rc<Instances>>,
}

impl<'a> Enumerator<'a> {
    /// Instances of `shape` with nonempty conclusions; with `cover`, only
    /// those whose conclusion contains it.
    fn instances(&mut self, shape: &Shape, cover: Option<&EntitySet>) -> std::rc::Rc<Instances> {
        let key = (shape.canonical_key(), cover.is_some());
        if let Some(hit) = self.memo.get(&key) {
            return hit.clone();
        }
        let out = match shape {
            Shape::Anchor => self
                .anchors
                .iter()
                .map(|&a| (Hypothesis::Anchor(a), EntitySet::singleton(a)))
                .collect(),
            Shape::Proj(c) => {
                let children = self.instances(c, None);
                let mut out = Vec::new();
                for (h, s) in children.iter() {
                    let mut by_rel: Vec<(RelationId, EntityId)> =
                        s.iter().flat_map(|&u| self.g.out_edges(u).iter().copied()).collect();
                    by_rel.sort_unstable();
                    for chunk in by_rel.chunk_by(|a, b| a.0 == b.0) {
                        let conclusion: EntitySet = chunk.iter().map(|&(_, t)| t).collect();
                        out.push((Hypothesis::Proj(chunk[0].0, Box::new(h.clone())), conclusion));
                    }
                }
                out
            }
            Shape::Neg(c) => return self.instances(c, None),
            Shape::Inter(cs) => self.combine(cs, true, cover),
            Shape::Union(cs) => self.combine(cs, false, cover),
        };
        let out: Instances = match cover {
            Some(o) => out.into_iter().filter(|(_, s)| o.is_subset(s)).collect(),
            None => out,
        };
        let out = std::rc::Rc::new(out);
        self.memo.insert(key, out.clone());
        out
    }

    fn combine(&mut self, cs: &[Shape], inter: bool, cover: Option<&EntitySet>) -> Instances {
        let lists: Vec<std::rc::Rc<Instances>> = cs
            .iter()
            .map(|c| {
                let positive = !matches!(c, Shape::Neg(_));
                self.instances(c, if inter && positive { cover } else { None })
            })
            .collect();
        // Index into a previous slot whose shape is identical; such siblings
        // are taken in strictly increasing order so each unordered pair appears once.
        let twin: Vec<Option<usize>> = (0..cs.len()).map(|s| (0..s).rev().find(|&p| cs[p] == cs[s])).collect();
        let negated: Vec<bool> = cs.iter().map(|c| matches!(c, Shape::Neg(_))).collect();
        let index: Vec<Option<HashMap<EntityId, Vec<usize>>>> = (0..cs.len())
            .map(|s| {
                (inter && !negated[s] && s > 0).then(|| {
                    let mut m: HashMap<EntityId, Vec<usize>> = HashMap::new();
                    for (i, (_, set)) in lists[s].iter().enumerate() {
                        for &e in set.iter() {
                            m.entry(e).or_default().push(i);
                        }
                    }
                    m
                })
            })
            .collect();
        // Positive slots are filled before negated ones.
        let mut order: Vec<usize> = (0..cs.len()).filter(|&s| !negated[s]).collect();
        order.extend((0..cs.len()).filter(|&s| negated[s]));

        let mut out = Vec::new();
        let mut picks = vec![usize::MAX; cs.len()];
        self.fill(&order, 0, &lists, &twin, &negated, &index, inter, None, &mut picks, &mut out);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn fill(
        &self,
        order: &[usize],
        depth: usize,
        lists: &[std::rc::Rc<Instances>],
        twin: &[Option<usize>],
        negated: &[bool],
        index: &[Option<HashMap<EntityId, Vec<usize>>>],
        inter: bool,
        acc: Option<&EntitySet>,
        picks: &mut Vec<usize>,
        out: &mut Instances,
    ) {
        if depth == order.len() {
            let acc = acc.expect("at least one positive child");
            if acc.is_empty() {
                return;
            }
            let children = picks
                .iter()
                .enumerate()
                .map(|(s, &i)| {
                    let h = lists[s][i].0.clone();
                    if negated[s] {
                        Hypothesis::Neg(Box::new(h))
                    } else {
                        h
                    }
                })
                .collect();
            let node = if inter {
                Hypothesis::Inter(children)
            } else {
                Hypothesis::Union(children)
            };
            out.push((node, acc.clone()));
            return;
        }
        let slot = order[depth];
        let min = twin[slot].map_or(0, |p| picks[p] + 1);
        let candidates: Vec<usize> = match (&index[slot], acc) {
            (Some(ix), Some(a)) => {
                let mut c: Vec<usize> = a.iter().filter_map(|e| ix.get(e)).flatten().copied().filter(|&i| i >= min).collect();
                c.sort_unstable();
                c.dedup();
                c
            }
            _ => (min..lists[slot].len()).collect(),
        };
        for i in candidates {
            let set = &lists[slot][i].1;
            let next = match acc {
                None => set.clone(),
                Some(a) if !inter => a.union(set),
                Some(a) if negated[slot] => a.difference(set),
                Some(a) => a.intersection(set),
            };
            if inter && next.is_empty() {
                continue;
            }
            picks[slot] = i;
            self.fill(order, depth + 1, lists, twin, negated, index, inter, Some(&next), picks, out);
        }
        picks[slot] = usize::MAX;
    }
}

/// Every instance of `pattern` with a nonempty conclusion, with anchors drawn
/// from `anchor_pool` (all entities when `None`). Commutative siblings
/// appear in one order only, so no two results share a canonical form.
pub fn enumerate_pattern(
    g: &KnowledgeGraph,
    pattern: PatternId,
    anchor_pool: Option<&EntitySet>,
    bound: &ExhaustiveBound,
) -> Result<Vec<(Hypothesis, EntitySet)>> {
    enumerate_covering(g, pattern, anchor_pool, None, bound)
}

/// Like [`enumerate_pattern`] but keeps only instances whose conclusion
/// contains `cover`.
pub fn enumerate_covering(
    g: &KnowledgeGraph,
    pattern: PatternId,
    anchor_pool: Option<&EntitySet>,
    cover: Option<&EntitySet>,
    bound: &ExhaustiveBound,
) -> Result<Vec<(Hypothesis, EntitySet)>> {
    bound.check(g, pattern)?;
    let anchors = match anchor_pool {
        Some(pool) => {
            for &e in pool.iter() {
                g.check_entity(e)?;
            }
            pool.as_slice().to_vec()
        }
        None => g.entities().collect(),
    };
    let mut en = Enumerator {
        g,
        anchors,
        memo: HashMap::new(),
    };
    let out = en.instances(&pattern.shape(), cover);
    Ok(std::rc::Rc::try_unwrap(out).unwrap_or_else(|rc| (*rc).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::evaluate;
    use crate::graph::tests::toy_g1;
    use crate::hypothesis::extract_pattern;
    use crate::synth::{random_graph, random_instance, rng_for};
    use std::collections::HashSet;

    #[test]
    fn one_hop_on_toy_graph() {
        let g = toy_g1();
        let got: HashSet<String> = enumerate_pattern(&g, PatternId::P1, None, &ExhaustiveBound::default())
            .unwrap()
            .into_iter()
            .map(|(h, _)| h.to_string())
            .collect();
        let want: HashSet<String> = ["(p r1 (e e0))", "(p r1 (e e3))", "(p r2 (e e1))", "(p r2 (e e2))"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn results_are_sound_distinct_and_well_formed() {
        let g = random_graph(12, 2, 30, 4);
        let bound = ExhaustiveBound::default();
        for p in PatternId::ALL {
            let all = enumerate_pattern(&g, p, None, &bound).unwrap();
            let mut keys = HashSet::new();
            for (h, s) in &all {
                assert_eq!(extract_pattern(h), Some(p));
                assert!(!s.is_empty());
                assert_eq!(&evaluate(&g, h).unwrap(), s);
                assert!(!h.has_duplicate_siblings(), "{h}");
                assert!(keys.insert(h.canonicalize().to_string()), "duplicate {h}");
            }
        }
    }

    #[test]
    fn union_count_is_unordered_pairs() {
        let g = random_graph(15, 3, 40, 6);
        let bound = ExhaustiveBound::default();
        let m = enumerate_pattern(&g, PatternId::P1, None, &bound).unwrap().len();
        let u = enumerate_pattern(&g, PatternId::U2, None, &bound).unwrap().len();
        assert_eq!(u, m * (m - 1) / 2);
    }

    /// Brute force: fill the skeleton with every anchor/relation combination.
    fn brute_force(g: &KnowledgeGraph, p: PatternId) -> HashSet<String> {
        fn fill(shape: &Shape, g: &KnowledgeGraph) -> Vec<Hypothesis> {
            match shape {
                Shape::Anchor => g.entities().map(Hypothesis::Anchor).collect(),
                Shape::Proj(c) => {
                    let inner = fill(c, g);
                    g.relations()
                        .flat_map(|r| inner.iter().map(move |h| Hypothesis::Proj(r, Box::new(h.clone()))))
                        .collect()
                }
                Shape::Neg(c) => fill(c, g).into_iter().map(|h| Hypothesis::Neg(Box::new(h))).collect(),
                Shape::Inter(cs) | Shape::Union(cs) => {
                    let mut acc: Vec<Vec<Hypothesis>> = vec![vec![]];
                    for c in cs {
                        let opts = fill(c, g);
                        acc = acc
                            .into_iter()
                            .flat_map(|pre| {
                                opts.iter().map(move |o| {
                                    let mut v = pre.clone();
                                    v.push(o.clone());
                                    v
                                })
                            })
                            .collect();
                    }
                    acc.into_iter()
                        .map(|v| if matches!(shape, Shape::Inter(_)) { Hypothesis::Inter(v) } else { Hypothesis::Union(v) })
                        .collect()
                }
            }
        }
        fn blocks_nonempty(h: &Hypothesis, g: &KnowledgeGraph) -> bool {
            let ok = match h {
                Hypothesis::Neg(c) => return blocks_nonempty(c, g),
                Hypothesis::Anchor(_) => true,
                _ => !evaluate(g, h).unwrap().is_empty(),
            };
            ok && h.children().iter().all(|c| blocks_nonempty(c, g))
        }
        fill(&p.shape(), g)
            .into_iter()
            .filter(|h| !h.has_duplicate_siblings() && blocks_nonempty(h, g))
            .map(|h| h.canonicalize().to_string())
            .collect()
    }

    #[test]
    fn matches_brute_force_on_a_tiny_graph() {
        let g = random_graph(5, 2, 12, 1);
        for p in [PatternId::P1, PatternId::P2, PatternId::I2, PatternId::Ip, PatternId::In2, PatternId::Pni, PatternId::Up] {
            let got: HashSet<String> = enumerate_pattern(&g, p, None, &ExhaustiveBound::default())
                .unwrap()
                .into_iter()
                .map(|(h, _)| h.canonicalize().to_string())
                .collect();
            assert_eq!(got, brute_force(&g, p), "{p}");
        }
    }

    #[test]
    fn covering_filter_matches_post_filtering() {
        let g = random_graph(14, 2, 40, 9);
        let bound = ExhaustiveBound::default();
        let mut rng = rng_for(&[2]);
        for p in PatternId::ALL {
            let h = random_instance(p, 14, 2, &mut rng);
            let o = evaluate(&g, &h).unwrap();
            if o.is_empty() {
                continue;
            }
            let all = enumerate_pattern(&g, p, None, &bound).unwrap();
            let want: Vec<_> = all.into_iter().filter(|(_, s)| o.is_subset(s)).collect();
            let got = enumerate_covering(&g, p, None, Some(&o), &bound).unwrap();
            assert_eq!(got, want, "{p}");
        }
    }

    #[test]
    fn anchor_pool_and_bound() {
        let g = toy_g1();
        let pool = EntitySet::from_ids([0]);
        let one = enumerate_pattern(&g, PatternId::P1, Some(&pool), &ExhaustiveBound::default()).unwrap();
        assert_eq!(one.len(), 1);
        let tight = ExhaustiveBound { max_entities: 3, max_triples: 100 };
        assert!(enumerate_pattern(&g, PatternId::P2, None, &tight).is_ok());
        assert!(matches!(enumerate_pattern(&g, PatternId::I2, None, &tight), Err(Error::SizeBound { max_entities: 3, .. })));
    }
}
