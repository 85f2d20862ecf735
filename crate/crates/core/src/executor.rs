//! Bottom-up evaluation of hypotheses to conclusion sets.
//!
//! Negation is never materialized as a complement: an `i` node intersects its
//! positive children (smallest first) and then subtracts each negated child.
//! Intermediate sets switch to a dense bitset once they exceed 1/64 of the
//! entity count.

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Triple};
use crate::hypothesis::Hypothesis;
use crate::set::EntitySet;

#[derive(Debug, Clone, PartialEq, Eq)]
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn empty(n: usize) -> Self {
        BitSet {
            words: vec![0; n.div_ceil(64)],
        }
    }

    fn from_sparse(n: usize, ids: &[EntityId]) -> Self {
        let mut b = BitSet::empty(n);
        for &e in ids {
            b.insert(e);
        }
        b
    }

    fn insert(&mut self, e: EntityId) {
        self.words[e.index() / 64] |= 1 << (e.index() % 64);
    }

    fn contains(&self, e: EntityId) -> bool {
        self.words[e.index() / 64] & (1 << (e.index() % 64)) != 0
    }

    fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn to_set(&self) -> EntitySet {
        let mut out = Vec::with_capacity(self.len());
        for (wi, &w) in self.words.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let bit = w.trailing_zeros();
                out.push(EntityId((wi * 64) as u32 + bit));
                w &= w - 1;
            }
        }
        EntitySet::from_sorted_unchecked(out)
    }
}

/// Working representation of an intermediate result.
#[derive(Debug, Clone)]
enum Work {
    Sparse(EntitySet),
    Dense(BitSet),
}

impl Work {
    fn len(&self) -> usize {
        match self {
            Work::Sparse(s) => s.len(),
            Work::Dense(b) => b.len(),
        }
    }

    fn into_set(self) -> EntitySet {
        match self {
            Work::Sparse(s) => s,
            Work::Dense(b) => b.to_set(),
        }
    }

    fn normalize(self, n: usize) -> Work {
        let dense_at = dense_threshold(n);
        match self {
            Work::Sparse(s) if s.len() > dense_at => Work::Dense(BitSet::from_sparse(n, s.as_slice())),
            Work::Dense(b) if b.len() <= dense_at => Work::Sparse(b.to_set()),
            w => w,
        }
    }

    fn intersect(self, other: &Work) -> Work {
        match (self, other) {
            (Work::Sparse(a), Work::Sparse(b)) => Work::Sparse(a.intersection(b)),
            (Work::Sparse(a), Work::Dense(b)) => {
                Work::Sparse(EntitySet::from_sorted_unchecked(a.iter().copied().filter(|&e| b.contains(e)).collect()))
            }
            (Work::Dense(a), Work::Sparse(b)) => {
                Work::Sparse(EntitySet::from_sorted_unchecked(b.iter().copied().filter(|&e| a.contains(e)).collect()))
            }
            (Work::Dense(mut a), Work::Dense(b)) => {
                a.words.iter_mut().zip(&b.words).for_each(|(x, y)| *x &= y);
                Work::Dense(a)
            }
        }
    }

    fn subtract(self, other: &Work) -> Work {
        match (self, other) {
            (Work::Sparse(a), Work::Sparse(b)) => Work::Sparse(a.difference(b)),
            (Work::Sparse(a), Work::Dense(b)) => {
                Work::Sparse(EntitySet::from_sorted_unchecked(a.iter().copied().filter(|&e| !b.contains(e)).collect()))
            }
            (Work::Dense(mut a), Work::Sparse(b)) => {
                for &e in b {
                    a.words[e.index() / 64] &= !(1 << (e.index() % 64));
                }
                Work::Dense(a)
            }
            (Work::Dense(mut a), Work::Dense(b)) => {
                a.words.iter_mut().zip(&b.words).for_each(|(x, y)| *x &= !y);
                Work::Dense(a)
            }
        }
    }

    fn unite(self, other: &Work, n: usize) -> Work {
        match (self, other) {
            (Work::Sparse(a), Work::Sparse(b)) => Work::Sparse(a.union(b)),
            (Work::Sparse(a), Work::Dense(b)) => {
                let mut b = b.clone();
                a.iter().for_each(|&e| b.insert(e));
                Work::Dense(b)
            }
            (Work::Dense(mut a), Work::Sparse(b)) => {
                b.iter().for_each(|&e| a.insert(e));
                Work::Dense(a)
            }
            (Work::Dense(mut a), Work::Dense(b)) => {
                a.words.iter_mut().zip(&b.words).for_each(|(x, y)| *x |= y);
                Work::Dense(a)
            }
        }
        .normalize(n)
    }
}

fn dense_threshold(n: usize) -> usize {
    (n / 64).max(1)
}

/// The conclusion `[h]_g`.
pub fn evaluate(g: &KnowledgeGraph, h: &Hypothesis) -> Result<EntitySet> {
    h.check_ids(g)?;
    if h.is_neg() {
        return Err(Error::contract("a negation cannot be evaluated outside an intersection"));
    }
    Ok(eval_node(g, h).into_set())
}

/// Projects `from` along `rel`: every tail reachable by one `rel` edge.
pub fn project(g: &KnowledgeGraph, from: &EntitySet, rel: crate::graph::RelationId) -> EntitySet {
    project_work(g, &Work::Sparse(from.clone()), rel).into_set()
}

fn project_work(g: &KnowledgeGraph, input: &Work, rel: crate::graph::RelationId) -> Work {
    let n = g.entity_count();
    let sources: Vec<EntityId> = match input {
        Work::Sparse(s) => s.as_slice().to_vec(),
        Work::Dense(b) => b.to_set().into(),
    };
    let fanout: usize = sources.iter().map(|&u| g.tails(u, rel).len()).sum();
    if fanout > dense_threshold(n) {
        let mut out = BitSet::empty(n);
        for &u in &sources {
            g.tails(u, rel).for_each(|t| out.insert(t));
        }
        Work::Dense(out).normalize(n)
    } else {
        let mut out: Vec<EntityId> = Vec::with_capacity(fanout);
        for &u in &sources {
            out.extend(g.tails(u, rel));
        }
        Work::Sparse(out.into())
    }
}

fn eval_node(g: &KnowledgeGraph, h: &Hypothesis) -> Work {
    let n = g.entity_count();
    match h {
        Hypothesis::Anchor(e) => Work::Sparse(EntitySet::singleton(*e)),
        Hypothesis::Proj(r, child) => project_work(g, &eval_node(g, child), *r),
        Hypothesis::Union(cs) => {
            let mut it = cs.iter().map(|c| eval_node(g, c));
            let first = it.next().unwrap_or(Work::Sparse(EntitySet::new()));
            it.fold(first, |acc, w| acc.unite(&w, n))
        }
        Hypothesis::Inter(cs) => {
            let mut positives: Vec<Work> = cs.iter().filter(|c| !c.is_neg()).map(|c| eval_node(g, c)).collect();
            positives.sort_by_key(Work::len);
            let mut it = positives.into_iter();
            let Some(mut acc) = it.next() else {
                return Work::Sparse(EntitySet::new());
            };
            for w in it {
                if acc.len() == 0 {
                    break;
                }
                acc = acc.intersect(&w);
            }
            for c in cs {
                if let Hypothesis::Neg(inner) = c {
                    if acc.len() == 0 {
                        break;
                    }
                    acc = acc.subtract(&eval_node(g, inner));
                }
            }
            acc.normalize(n)
        }
        // Only reachable through a malformed tree; a bare negation has no finite conclusion here.
        Hypothesis::Neg(_) => Work::Sparse(EntitySet::new()),
    }
}

/// Membership-by-search oracle: for every entity `v`, decides whether the
/// formula holds at `v` by scanning the raw triple list for witnesses.
/// Quadratic or worse; meant for small graphs in tests.
pub fn evaluate_reference(g: &KnowledgeGraph, h: &Hypothesis) -> Result<EntitySet> {
    h.check_ids(g)?;
    if h.is_neg() {
        return Err(Error::contract("a negation cannot be evaluated outside an intersection"));
    }
    let triples = g.triples();
    Ok(g.entities().filter(|&v| holds(triples, h, v)).collect())
}

fn holds(triples: &[Triple], h: &Hypothesis, v: EntityId) -> bool {
    match h {
        Hypothesis::Anchor(a) => *a == v,
        Hypothesis::Proj(r, child) => triples
            .iter()
            .any(|t| t.rel == *r && t.tail == v && holds(triples, child, t.head)),
        Hypothesis::Inter(cs) => cs.iter().all(|c| match c {
            Hypothesis::Neg(inner) => !holds(triples, inner, v),
            _ => holds(triples, c, v),
        }),
        Hypothesis::Union(cs) => cs.iter().any(|c| holds(triples, c, v)),
        Hypothesis::Neg(inner) => !holds(triples, inner, v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::toy_g1;
    use crate::hypothesis::{parse, Hypothesis};

    fn ids(xs: &[u32]) -> EntitySet {
        EntitySet::from_ids(xs.iter().copied())
    }

    #[test]
    fn toy_graph_examples() {
        let g = toy_g1();
        // a=0, b=1, c=2, d=3, e=4
        assert_eq!(evaluate(&g, &parse("(p r1 (e e0))").unwrap()).unwrap(), ids(&[1, 2]));
        assert_eq!(
            evaluate(&g, &parse("(i (p r1 (e e0)) (n (p r1 (e e3))))").unwrap()).unwrap(),
            ids(&[1])
        );
        let x = parse("(p r2 (p r1 (e e0)))").unwrap();
        let ux = Hypothesis::Union(vec![x.clone(), x.clone()]);
        assert_eq!(evaluate(&g, &ux).unwrap(), evaluate(&g, &x).unwrap());
        assert_eq!(evaluate(&g, &x).unwrap(), ids(&[3, 4]));
    }

    #[test]
    fn reference_edge_cases() {
        let g = toy_g1();
        assert_eq!(evaluate_reference(&g, &parse("(e e3)").unwrap()).unwrap(), ids(&[3]));
        assert!(evaluate_reference(&g, &parse("(p r1 (e e4))").unwrap()).unwrap().is_empty());
        assert!(evaluate(&g, &parse("(p r1 (e e4))").unwrap()).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_ids_and_bare_negation() {
        let g = toy_g1();
        assert!(matches!(evaluate(&g, &parse("(p r9 (e e0))").unwrap()), Err(Error::OutOfRange { .. })));
        assert!(matches!(evaluate(&g, &parse("(e e77)").unwrap()), Err(Error::OutOfRange { .. })));
        let bare = Hypothesis::Neg(Box::new(parse("(e e0)").unwrap()));
        assert!(matches!(evaluate(&g, &bare), Err(Error::Contract(_))));
        assert!(matches!(evaluate_reference(&g, &bare), Err(Error::Contract(_))));
    }

    #[test]
    fn dense_and_sparse_paths_agree() {
        // A star graph forces projections over the dense threshold.
        let n = 400u32;
        let mut triples = Vec::new();
        for t in 1..n {
            triples.push(Triple::new(0, 0, t));
            if t % 3 == 0 {
                triples.push(Triple::new(t, 1, (t * 7) % n));
            }
            if t % 5 == 0 {
                triples.push(Triple::new(t, 1, (t * 11) % n));
            }
        }
        let g = KnowledgeGraph::from_triples(n as usize, 2, triples).unwrap();
        for text in [
            "(p r1 (p r0 (e e0)))",
            "(i (p r0 (e e0)) (n (p r1 (p r0 (e e0)))))",
            "(u (p r0 (e e0)) (p r1 (e e3)))",
            "(i (p r0 (e e0)) (p r1 (p r0 (e e0))))",
            "(i (p r1 (e e15)) (n (p r0 (e e0))))",
        ] {
            let h = parse(text).unwrap();
            assert_eq!(evaluate(&g, &h).unwrap(), evaluate_reference(&g, &h).unwrap(), "{text}");
        }
    }
}
