//! Recursive backward construction of a hypothesis that concludes a given node.
//!
//! Projection picks an incoming edge `(u, r, v)` and recurses at `u`;
//! intersection recurses at the same node for every positive child; union
//! recurses at the node for one child and at freshly chosen nodes for the
//! rest. Negated children are rooted at a freshly chosen node and the whole
//! attempt is rejected if the start node ends up excluded.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::executor::evaluate;
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use crate::hypothesis::{Hypothesis, Shape};
use crate::set::EntitySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Anchor,
    Proj,
    Inter,
    Union,
    Neg,
}

#[derive(Debug, Clone)]
struct Node {
    kind: Kind,
    children: Vec<usize>,
}

fn flatten(shape: &Shape, out: &mut Vec<Node>) -> usize {
    let idx = out.len();
    let kind = match shape {
        Shape::Anchor => Kind::Anchor,
        Shape::Proj(_) => Kind::Proj,
        Shape::Inter(_) => Kind::Inter,
        Shape::Union(_) => Kind::Union,
        Shape::Neg(_) => Kind::Neg,
    };
    out.push(Node {
        kind,
        children: Vec::new(),
    });
    let children = shape.children().iter().map(|c| flatten(c, out)).collect();
    out[idx].children = children;
    idx
}

/// A token the constructed hypothesis must contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Required {
    Entity(EntityId),
    Relation(RelationId),
}

struct Forcing {
    token: Required,
    target: usize,
    on_path: Vec<bool>,
    /// Projection nodes between a node (inclusive) and the target anchor.
    hops: Vec<usize>,
    /// `reach[k]`: nodes with a walk of exactly `k` forward edges from the required entity.
    reach: Vec<EntitySet>,
}

/// How free nodes (negated roots, extra union branches) are drawn.
#[derive(Debug, Clone, Copy)]
pub(crate) enum FreeNodes<'a> {
    /// Uniform over all entities.
    Uniform,
    /// Guided by an observation: union branches start inside it, negated
    /// branches start at entities the positive part over-covers.
    Guided(&'a EntitySet),
}

pub(crate) struct Constructor<'a> {
    g: &'a KnowledgeGraph,
    nodes: Vec<Node>,
    free: FreeNodes<'a>,
    forcing: Option<Forcing>,
}

impl<'a> Constructor<'a> {
    pub(crate) fn new(g: &'a KnowledgeGraph, shape: &Shape, free: FreeNodes<'a>) -> Self {
        let mut nodes = Vec::new();
        flatten(shape, &mut nodes);
        Constructor {
            g,
            nodes,
            free,
            forcing: None,
        }
    }

    /// Forces `token` onto one randomly chosen eligible position. Returns
    /// `false` when the shape has no such position.
    pub(crate) fn force<R: Rng>(&mut self, token: Required, rng: &mut R) -> bool {
        let wanted = match token {
            Required::Entity(_) => Kind::Anchor,
            Required::Relation(_) => Kind::Proj,
        };
        let positions: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == wanted).collect();
        let Some(&target) = positions.choose(rng) else {
            return false;
        };
        let n = self.nodes.len();
        let mut on_path = vec![false; n];
        let mut hops = vec![0usize; n];
        self.mark(0, target, &mut on_path, &mut hops);
        let reach = match token {
            Required::Entity(e) => {
                let max_hops = hops.iter().copied().max().unwrap_or(0);
                let mut layers = vec![EntitySet::singleton(e)];
                for _ in 0..max_hops {
                    let prev = layers.last().unwrap();
                    let next: EntitySet = prev
                        .iter()
                        .flat_map(|&u| self.g.out_edges(u).iter().map(|&(_, t)| t))
                        .collect();
                    layers.push(next);
                }
                layers
            }
            Required::Relation(_) => Vec::new(),
        };
        self.forcing = Some(Forcing {
            token,
            target,
            on_path,
            hops,
            reach,
        });
        true
    }

    fn mark(&self, idx: usize, target: usize, on_path: &mut [bool], hops: &mut [usize]) -> bool {
        let node = &self.nodes[idx];
        let mut found = idx == target;
        let mut below = 0;
        for &c in &node.children {
            if self.mark(c, target, on_path, hops) {
                found = true;
                below = hops[c];
            }
        }
        if found {
            on_path[idx] = true;
            hops[idx] = below + usize::from(node.kind == Kind::Proj);
        }
        found
    }

    /// Entities a branch rooted at `idx` may start from so the forced entity stays reachable.
    fn reach_at(&self, idx: usize) -> Option<&EntitySet> {
        match &self.forcing {
            Some(f) if f.on_path[idx] && matches!(f.token, Required::Entity(_)) => Some(&f.reach[f.hops[idx]]),
            _ => None,
        }
    }

    /// Members of `pool` from which a forced entity is still reachable.
    pub(crate) fn feasible_starts(&self, pool: &EntitySet) -> Vec<EntityId> {
        match self.reach_at(0) {
            Some(reach) => pool.intersection(reach).into(),
            None => pool.as_slice().to_vec(),
        }
    }

    /// Builds a hypothesis of the shape whose conclusion contains `start`.
    /// `None` on a dead end or when `start` ends up excluded.
    pub(crate) fn build<R: Rng>(&self, start: EntityId, rng: &mut R) -> Option<(Hypothesis, EntitySet)> {
        if let Some(reach) = self.reach_at(0) {
            if !reach.contains(start) {
                return None;
            }
        }
        let h = self.node(0, start, rng)?;
        if h.has_duplicate_siblings() {
            return None;
        }
        let conclusion = evaluate(self.g, &h).ok()?;
        conclusion.contains(start).then_some((h, conclusion))
    }

    fn node<R: Rng>(&self, idx: usize, v: EntityId, rng: &mut R) -> Option<Hypothesis> {
        let node = &self.nodes[idx];
        match node.kind {
            Kind::Anchor => {
                if let Some(f) = &self.forcing {
                    if f.target == idx {
                        if let Required::Entity(e) = f.token {
                            if e != v {
                                return None;
                            }
                        }
                    }
                }
                Some(Hypothesis::Anchor(v))
            }
            Kind::Proj => {
                let child = node.children[0];
                let edges = self.g.in_edges(v);
                let (rel, u) = match &self.forcing {
                    Some(f) if f.target == idx => match f.token {
                        Required::Relation(r) => {
                            let start = edges.partition_point(|&(x, _)| x < r);
                            let end = edges.partition_point(|&(x, _)| x <= r);
                            *edges[start..end].choose(rng)?
                        }
                        Required::Entity(_) => unreachable!("entity targets are anchors"),
                    },
                    Some(f) if f.on_path[idx] && matches!(f.token, Required::Entity(_)) => {
                        let allowed = &f.reach[f.hops[idx] - 1];
                        let eligible: Vec<&(RelationId, EntityId)> =
                            edges.iter().filter(|(_, u)| allowed.contains(*u)).collect();
                        **eligible.choose(rng)?
                    }
                    _ => *edges.choose(rng)?,
                };
                Some(Hypothesis::Proj(rel, Box::new(self.node(child, u, rng)?)))
            }
            Kind::Inter => {
                let mut built: Vec<Option<Hypothesis>> = vec![None; node.children.len()];
                for (slot, &c) in node.children.iter().enumerate() {
                    if self.nodes[c].kind != Kind::Neg {
                        built[slot] = Some(self.node(c, v, rng)?);
                    }
                }
                for (slot, &c) in node.children.iter().enumerate() {
                    if self.nodes[c].kind == Kind::Neg {
                        let inner = self.nodes[c].children[0];
                        let w = self.negated_root(inner, v, &built, rng)?;
                        built[slot] = Some(Hypothesis::Neg(Box::new(self.node(inner, w, rng)?)));
                    }
                }
                Some(Hypothesis::Inter(built.into_iter().map(Option::unwrap).collect()))
            }
            Kind::Union => {
                let k = node.children.len();
                // The branch carrying a forced entity must start at a reachable
                // node, so prefer giving `v` to it when `v` qualifies.
                let keep = match node.children.iter().position(|&c| self.reach_at(c).is_some()) {
                    Some(pos) if self.reach_at(node.children[pos]).unwrap().contains(v) => pos,
                    Some(pos) => (pos + rng.gen_range(1..k)) % k,
                    None => rng.gen_range(0..k),
                };
                let mut out = Vec::with_capacity(k);
                for (slot, &c) in node.children.iter().enumerate() {
                    let root = if slot == keep { v } else { self.union_root(c, v, rng)? };
                    out.push(self.node(c, root, rng)?);
                }
                Some(Hypothesis::Union(out))
            }
            Kind::Neg => {
                let inner = node.children[0];
                Some(Hypothesis::Neg(Box::new(self.node(inner, v, rng)?)))
            }
        }
    }

    fn negated_root<R: Rng>(
        &self,
        inner: usize,
        v: EntityId,
        positives: &[Option<Hypothesis>],
        rng: &mut R,
    ) -> Option<EntityId> {
        let mut pool: Vec<EntityId> = match self.free {
            FreeNodes::Uniform => Vec::new(),
            FreeNodes::Guided(observation) => {
                let mut acc: Option<EntitySet> = None;
                for h in positives.iter().flatten() {
                    let c = evaluate(self.g, h).ok()?;
                    acc = Some(match acc {
                        None => c,
                        Some(a) => a.intersection(&c),
                    });
                }
                acc.unwrap_or_default().difference(observation).into()
            }
        };
        pool.retain(|&w| w != v);
        self.pick_root(inner, pool, rng)
    }

    fn union_root<R: Rng>(&self, child: usize, v: EntityId, rng: &mut R) -> Option<EntityId> {
        let pool: Vec<EntityId> = match self.free {
            FreeNodes::Uniform => Vec::new(),
            FreeNodes::Guided(observation) => observation.iter().copied().filter(|&o| o != v).collect(),
        };
        self.pick_root(child, pool, rng)
    }

    /// Draws from `preferred` (intersected with the forced-entity reach set
    /// when relevant), falling back to the reach set, then to all entities.
    fn pick_root<R: Rng>(&self, idx: usize, preferred: Vec<EntityId>, rng: &mut R) -> Option<EntityId> {
        if let Some(reach) = self.reach_at(idx) {
            let both: Vec<EntityId> = preferred.into_iter().filter(|&e| reach.contains(e)).collect();
            return both.choose(rng).or_else(|| reach.as_slice().choose(rng)).copied();
        }
        if let Some(&e) = preferred.choose(rng) {
            return Some(e);
        }
        let n = self.g.entity_count();
        (n > 0).then(|| EntityId(rng.gen_range(0..n as u32)))
    }
}
