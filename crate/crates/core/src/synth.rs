//! Synthetic graphs and random catalog instances for tests and diagnostics.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{DatasetSplit, EntityId, KnowledgeGraph, RelationId, Triple};
use crate::hypothesis::{Hypothesis, PatternId, Shape};

/// Mixes several words into one well-spread 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut x: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        x ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

pub fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// A graph with `edges` distinct uniformly random triples (capped at the
/// number of possible triples).
pub fn random_graph(entities: usize, relations: usize, edges: usize, seed: u64) -> KnowledgeGraph {
    let mut rng = rng_for(&[seed, 0x6772_6170_68]);
    let max = entities * entities * relations;
    let target = edges.min(max);
    let mut seen = std::collections::HashSet::with_capacity(target);
    let mut triples = Vec::with_capacity(target);
    while triples.len() < target {
        let t = Triple::new(
            rng.gen_range(0..entities as u32),
            rng.gen_range(0..relations as u32),
            rng.gen_range(0..entities as u32),
        );
        if seen.insert(t) {
            triples.push(t);
        }
    }
    KnowledgeGraph::from_triples(entities, relations, triples).expect("ids are in range by construction")
}

/// Random split of a random graph with roughly 8:1:1 edge proportions.
pub fn random_split(entities: usize, relations: usize, edges: usize, seed: u64) -> DatasetSplit {
    let g = random_graph(entities, relations, edges, seed);
    let mut rng = rng_for(&[seed, 0x73_706c_6974]);
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for &t in g.triples() {
        match rng.gen_range(0..10) {
            0 => valid.push(t),
            1 => test.push(t),
            _ => train.push(t),
        }
    }
    let names = |n: usize, p: &str| (0..n).map(|i| format!("{p}{i}")).collect();
    DatasetSplit::from_parts(names(entities, "e"), names(relations, "r"), train, valid, test)
        .expect("ids are in range by construction")
}

/// Fills a pattern's skeleton with uniformly random anchors and relations.
/// The result may have an empty conclusion.
pub fn random_instance<R: Rng>(pattern: PatternId, entities: usize, relations: usize, rng: &mut R) -> Hypothesis {
    fill(&pattern.shape(), entities, relations, rng)
}

fn fill<R: Rng>(shape: &Shape, entities: usize, relations: usize, rng: &mut R) -> Hypothesis {
    match shape {
        Shape::Anchor => Hypothesis::Anchor(EntityId(rng.gen_range(0..entities as u32))),
        Shape::Proj(c) => Hypothesis::Proj(
            RelationId(rng.gen_range(0..relations as u32)),
            Box::new(fill(c, entities, relations, rng)),
        ),
        Shape::Neg(c) => Hypothesis::Neg(Box::new(fill(c, entities, relations, rng))),
        Shape::Inter(cs) => Hypothesis::Inter(cs.iter().map(|c| fill(c, entities, relations, rng)).collect()),
        Shape::Union(cs) => Hypothesis::Union(cs.iter().map(|c| fill(c, entities, relations, rng)).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_graph_has_requested_size_and_is_reproducible() {
        let g = random_graph(50, 5, 300, 3);
        assert_eq!((g.entity_count(), g.relation_count(), g.triple_count()), (50, 5, 300));
        assert_eq!(g, random_graph(50, 5, 300, 3));
        assert_ne!(g.triples(), random_graph(50, 5, 300, 4).triples());
        assert!(g.check_index_duality());
    }

    #[test]
    fn random_split_is_monotone() {
        let s = random_split(40, 3, 200, 9);
        assert!(s.is_monotone());
        assert_eq!(s.test.triple_count(), 200);
    }

    #[test]
    fn derive_seed_separates_streams() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_ne!(derive_seed(&[0]), derive_seed(&[0, 0]));
    }
}
