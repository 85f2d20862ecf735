//! Structural similarity between hypotheses and aggregate run evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::evaluate;
use crate::graph::KnowledgeGraph;
use crate::hypothesis::{Condition, Hypothesis};
use crate::rewards::{condition_reward, similarity};
use crate::sampler::PairRecord;
use crate::synth::{derive_seed, rng_for};

pub const DEFAULT_RESTARTS: u32 = 10;

/// Variable-node graph of a hypothesis. Nodes are numbered in preorder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AmrGraph {
    /// Operator concept of each variable: `e`, `p`, `i`, `u` or `n`.
    pub concepts: Vec<&'static str>,
    /// `(variable, "rel" | "ent", value)`.
    pub attributes: Vec<(usize, &'static str, String)>,
    /// `(parent, label, child)`.
    pub edges: Vec<(usize, String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AmrTriple {
    pub source: String,
    pub label: String,
    pub target: String,
}

impl AmrGraph {
    pub fn variable_count(&self) -> usize {
        self.concepts.len()
    }

    pub fn triple_count(&self) -> usize {
        self.concepts.len() + self.attributes.len() + self.edges.len()
    }

    /// All triples with variables written `x0, x1, ...`.
    pub fn triples(&self) -> Vec<AmrTriple> {
        let var = |i: usize| format!("x{i}");
        let mut out = Vec::with_capacity(self.triple_count());
        for (i, c) in self.concepts.iter().enumerate() {
            out.push(AmrTriple {
                source: var(i),
                label: "instance".into(),
                target: (*c).into(),
            });
        }
        for (i, label, value) in &self.attributes {
            out.push(AmrTriple {
                source: var(*i),
                label: (*label).into(),
                target: value.clone(),
            });
        }
        for (s, label, t) in &self.edges {
            out.push(AmrTriple {
                source: var(*s),
                label: label.clone(),
                target: var(*t),
            });
        }
        out
    }

    fn attribute_of(&self) -> Vec<Option<(&'static str, &str)>> {
        let mut out = vec![None; self.concepts.len()];
        for (i, l, v) in &self.attributes {
            out[*i] = Some((*l, v.as_str()));
        }
        out
    }
}

/// AMR graph with raw id labels (`e4`, `r2`).
pub fn to_amr(h: &Hypothesis) -> AmrGraph {
    build_amr(h, None)
}

/// AMR graph labelled with vocabulary names from `g`.
pub fn to_amr_named(h: &Hypothesis, g: &KnowledgeGraph) -> AmrGraph {
    build_amr(h, Some(g))
}

fn build_amr(h: &Hypothesis, g: Option<&KnowledgeGraph>) -> AmrGraph {
    let mut amr = AmrGraph {
        concepts: Vec::new(),
        attributes: Vec::new(),
        edges: Vec::new(),
    };
    fn walk(h: &Hypothesis, g: Option<&KnowledgeGraph>, amr: &mut AmrGraph) -> usize {
        let id = amr.concepts.len();
        let (concept, commutative) = match h {
            Hypothesis::Anchor(e) => {
                let name = g.and_then(|g| g.entity_name(*e)).map_or_else(|| e.to_string(), str::to_owned);
                amr.attributes.push((id, "ent", name));
                ("e", false)
            }
            Hypothesis::Proj(r, _) => {
                let name = g.and_then(|g| g.relation_name(*r)).map_or_else(|| r.to_string(), str::to_owned);
                amr.attributes.push((id, "rel", name));
                ("p", false)
            }
            Hypothesis::Inter(_) => ("i", true),
            Hypothesis::Union(_) => ("u", true),
            Hypothesis::Neg(_) => ("n", false),
        };
        amr.concepts.push(concept);
        for (k, c) in h.children().iter().enumerate() {
            let child = walk(c, g, amr);
            let label = if commutative { "arg".to_string() } else { format!("arg{k}") };
            amr.edges.push((id, label, child));
        }
        id
    }
    walk(h, g, &mut amr);
    amr
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmatchResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    /// `mapping[i]` is the right-hand variable matched to left-hand variable `i`.
    pub mapping: Vec<Option<usize>>,
}

/// Scores mappings from the variables of `left` into those of `right`.
struct Scorer<'a> {
    node: Vec<Vec<usize>>,
    left: &'a AmrGraph,
    right_edge: Vec<Vec<Option<&'a str>>>,
    n_left: usize,
    n_right: usize,
}

impl<'a> Scorer<'a> {
    fn new(left: &'a AmrGraph, right: &'a AmrGraph) -> Self {
        let (la, ra) = (left.attribute_of(), right.attribute_of());
        let node = (0..left.variable_count())
            .map(|i| {
                (0..right.variable_count())
                    .map(|j| {
                        usize::from(left.concepts[i] == right.concepts[j])
                            + usize::from(la[i].is_some() && la[i] == ra[j])
                    })
                    .collect()
            })
            .collect();
        let mut right_edge = vec![vec![None; right.variable_count()]; right.variable_count()];
        for (s, l, t) in &right.edges {
            right_edge[*s][*t] = Some(l.as_str());
        }
        Scorer {
            node,
            left,
            right_edge,
            n_left: left.variable_count(),
            n_right: right.variable_count(),
        }
    }

    fn score(&self, m: &[Option<usize>]) -> usize {
        let mut total = 0;
        for (i, t) in m.iter().enumerate() {
            if let Some(j) = t {
                total += self.node[i][*j];
            }
        }
        for (s, l, t) in &self.left.edges {
            if let (Some(a), Some(b)) = (m[*s], m[*t]) {
                if self.right_edge[a][b] == Some(l.as_str()) {
                    total += 1;
                }
            }
        }
        total
    }

    fn greedy(&self) -> Vec<Option<usize>> {
        let mut used = vec![false; self.n_right];
        let mut m = vec![None; self.n_left];
        for (i, slot) in m.iter_mut().enumerate() {
            let best = (0..self.n_right)
                .filter(|&j| !used[j] && self.node[i][j] > 0)
                .max_by_key(|&j| (self.node[i][j], std::cmp::Reverse(j)));
            if let Some(j) = best {
                used[j] = true;
                *slot = Some(j);
            }
        }
        m
    }

    fn random<R: Rng>(&self, rng: &mut R) -> Vec<Option<usize>> {
        let mut targets: Vec<usize> = (0..self.n_right).collect();
        targets.shuffle(rng);
        let mut used = vec![false; self.n_right];
        let mut m = vec![None; self.n_left];
        let mut order: Vec<usize> = (0..self.n_left).collect();
        order.shuffle(rng);
        for i in order {
            if let Some(&j) = targets.iter().find(|&&j| !used[j] && self.node[i][j] > 0) {
                used[j] = true;
                m[i] = Some(j);
            }
        }
        m
    }

    /// Steepest-ascent over reassign and swap moves until no move improves.
    fn climb(&self, mut m: Vec<Option<usize>>) -> (usize, Vec<Option<usize>>) {
        let mut best = self.score(&m);
        loop {
            let mut owner = vec![None; self.n_right];
            for (i, t) in m.iter().enumerate() {
                if let Some(j) = t {
                    owner[*j] = Some(i);
                }
            }
            let mut improved: Option<(usize, Vec<Option<usize>>)> = None;
            let consider = |cand: Vec<Option<usize>>, improved: &mut Option<(usize, Vec<Option<usize>>)>| {
                let s = self.score(&cand);
                if s > improved.as_ref().map_or(best, |x| x.0) {
                    *improved = Some((s, cand));
                }
            };
            for i in 0..self.n_left {
                for j in 0..self.n_right {
                    if owner[j].is_none() {
                        let mut cand = m.clone();
                        cand[i] = Some(j);
                        consider(cand, &mut improved);
                    }
                }
                for k in i + 1..self.n_left {
                    if m[i] != m[k] {
                        let mut cand = m.clone();
                        cand.swap(i, k);
                        consider(cand, &mut improved);
                    }
                }
            }
            match improved {
                Some((s, cand)) => {
                    best = s;
                    m = cand;
                }
                None => return (best, m),
            }
        }
    }
}

fn result(matched: usize, left: &AmrGraph, right: &AmrGraph, mapping: Vec<Option<usize>>) -> SmatchResult {
    let precision = matched as f64 / left.triple_count() as f64;
    let recall = matched as f64 / right.triple_count() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    SmatchResult {
        precision,
        recall,
        f1,
        matched,
        mapping,
    }
}

/// Hill-climbing Smatch between two AMR graphs. The first restart starts
/// from the greedy concept mapping; when both graphs share a skeleton the
/// identity mapping is tried as well.
pub fn smatch_graphs(left: &AmrGraph, right: &AmrGraph, restarts: u32, seed: u64) -> SmatchResult {
    let scorer = Scorer::new(left, right);
    let mut rng = rng_for(&[seed, 0x736d_6174_6368]);
    let mut starts = vec![scorer.greedy()];
    if left.concepts == right.concepts && left.edges == right.edges {
        starts.push((0..left.variable_count()).map(Some).collect());
    }
    for _ in 1..restarts.max(1) {
        starts.push(scorer.random(&mut rng));
    }
    let (matched, mapping) = starts
        .into_iter()
        .map(|m| scorer.climb(m))
        .fold((0, vec![None; left.variable_count()]), |acc, x| if x.0 > acc.0 { x } else { acc });
    result(matched, left, right, mapping)
}

pub fn smatch(h1: &Hypothesis, h2: &Hypothesis, restarts: u32, seed: u64) -> SmatchResult {
    smatch_graphs(&to_amr(h1), &to_amr(h2), restarts, seed)
}

/// Exact Smatch by trying every injective total mapping of the smaller
/// variable set into the larger one.
pub fn smatch_exhaustive(h1: &Hypothesis, h2: &Hypothesis) -> SmatchResult {
    let (left, right) = (to_amr(h1), to_amr(h2));
    let scorer = Scorer::new(&left, &right);
    let (nl, nr) = (left.variable_count(), right.variable_count());
    let mut best = (0, vec![None; nl]);
    let mut m = vec![None; nl];
    if nl <= nr {
        let mut used = vec![false; nr];
        fn rec(i: usize, m: &mut Vec<Option<usize>>, used: &mut [bool], s: &Scorer, best: &mut (usize, Vec<Option<usize>>)) {
            if i == m.len() {
                let v = s.score(m);
                if v > best.0 {
                    *best = (v, m.clone());
                }
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    m[i] = Some(j);
                    rec(i + 1, m, used, s, best);
                    used[j] = false;
                }
            }
            m[i] = None;
        }
        rec(0, &mut m, &mut used, &scorer, &mut best);
    } else {
        // Each right-hand variable picks a distinct left-hand variable.
        let mut inv = vec![0usize; nr];
        let mut used = vec![false; nl];
        fn rec(
            j: usize,
            inv: &mut Vec<usize>,
            used: &mut [bool],
            m: &mut Vec<Option<usize>>,
            s: &Scorer,
            best: &mut (usize, Vec<Option<usize>>),
        ) {
            if j == inv.len() {
                m.iter_mut().for_each(|x| *x = None);
                for (jj, &i) in inv.iter().enumerate() {
                    m[i] = Some(jj);
                }
                let v = s.score(m);
                if v > best.0 {
                    *best = (v, m.clone());
                }
                return;
            }
            for i in 0..used.len() {
                if !used[i] {
                    used[i] = true;
                    inv[j] = i;
                    rec(j + 1, inv, used, m, s, best);
                    used[i] = false;
                }
            }
        }
        rec(0, &mut inv, &mut used, &mut m, &scorer, &mut best);
    }
    result(best.0, &left, &right, best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation; zeros for an empty slice.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return MeanStd::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub jaccard: f64,
    pub dice: f64,
    pub overlap: f64,
    pub adherent: f64,
    pub smatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub count: usize,
    #[serde(rename = "Jaccard")]
    pub jaccard: MeanStd,
    #[serde(rename = "Dice")]
    pub dice: MeanStd,
    #[serde(rename = "Overlap")]
    pub overlap: MeanStd,
    #[serde(rename = "Accuracy")]
    pub accuracy: MeanStd,
    #[serde(rename = "Smatch")]
    pub smatch: MeanStd,
    pub items: Vec<ItemScore>,
}

/// Scores predictions against reference pairs. Conclusions are computed on
/// `g_eval`; Smatch uses vocabulary names so id remappings do not matter.
pub fn evaluate_run(g_eval: &KnowledgeGraph, predictions: &[(Hypothesis, Condition)], references: &[PairRecord]) -> Result<RunReport> {
    if predictions.len() != references.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    let items = predictions
        .par_iter()
        .zip(references.par_iter())
        .enumerate()
        .map(|(idx, ((h, c), r))| {
            let conclusion = evaluate(g_eval, h)?;
            let s = similarity(&conclusion, &r.observation);
            let sm = smatch_graphs(
                &to_amr_named(h, g_eval),
                &to_amr_named(&r.hypothesis, g_eval),
                DEFAULT_RESTARTS,
                derive_seed(&[idx as u64]),
            );
            Ok(ItemScore {
                jaccard: s.jaccard,
                dice: s.dice,
                overlap: s.overlap,
                adherent: condition_reward(h, c),
                smatch: sm.f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let column = |f: fn(&ItemScore) -> f64| MeanStd::of(&items.iter().map(f).collect::<Vec<_>>());
    Ok(RunReport {
        count: items.len(),
        jaccard: column(|i| i.jaccard),
        dice: column(|i| i.dice),
        overlap: column(|i| i.overlap),
        accuracy: column(|i| i.adherent),
        smatch: column(|i| i.smatch),
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::toy_g1;
    use crate::hypothesis::{parse, PatternId};
    use crate::sampler::{sample_pair, Provenance};
    use crate::synth::random_instance;
    use crate::EntitySet;

    #[test]
    fn one_hop_amr_counts() {
        let a = to_amr(&parse("(p r1 (e e0))").unwrap());
        assert_eq!(a.variable_count(), 2);
        assert_eq!(a.attributes.iter().filter(|x| x.1 == "rel").count(), 1);
        assert_eq!(a.attributes.iter().filter(|x| x.1 == "ent").count(), 1);
        assert_eq!(a.edges.len(), 1);
        assert_eq!(a.triple_count(), 5);
        assert_eq!(a.triples()[0].label, "instance");
    }

    #[test]
    fn commutative_edges_share_a_label() {
        let a = to_amr(&parse("(i (p r1 (e e0)) (n (p r2 (e e1))))").unwrap());
        let labels: Vec<&str> = a.edges.iter().map(|e| e.1.as_str()).collect();
        assert_eq!(labels, ["arg0", "arg", "arg0", "arg0", "arg"]);
        let b = to_amr(&parse("(i (p r1 (e e0)) (n (p r2 (e e1))))").unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn named_labels() {
        let g = toy_g1();
        let a = to_amr_named(&parse("(p r1 (e e0))").unwrap(), &g);
        assert!(a.attributes.contains(&(1, "ent", "a".to_string())));
        assert!(a.attributes.contains(&(0, "rel", "r1".to_string())));
    }

    #[test]
    fn self_match_is_perfect() {
        let mut rng = rng_for(&[1]);
        for p in PatternId::ALL {
            let h = random_instance(p, 3, 2, &mut rng);
            let r = smatch(&h, &h, 1, 0);
            assert_eq!(r.f1, 1.0, "{h}");
        }
    }

    #[test]
    fn changed_relation_matches_exhaustive() {
        let a = parse("(i (p r1 (e e0)) (p r2 (e e1)))").unwrap();
        let b = parse("(i (p r1 (e e0)) (p r3 (e e1)))").unwrap();
        let hc = smatch(&a, &b, DEFAULT_RESTARTS, 3);
        let ex = smatch_exhaustive(&a, &b);
        assert_eq!(hc.matched, ex.matched);
        assert_eq!(to_amr(&a).triple_count(), 13);
        assert_eq!(ex.matched, 12);
        assert!((ex.f1 - 12.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_is_symmetric_and_bounds_hill_climbing() {
        let mut rng = rng_for(&[7]);
        for _ in 0..60 {
            let p = *PatternId::ALL.choose(&mut rng).unwrap();
            let q = *PatternId::ALL.choose(&mut rng).unwrap();
            let a = random_instance(p, 3, 2, &mut rng);
            let b = random_instance(q, 3, 2, &mut rng);
            let ab = smatch_exhaustive(&a, &b);
            let ba = smatch_exhaustive(&b, &a);
            assert_eq!(ab.matched, ba.matched);
            assert!((ab.f1 - ba.f1).abs() < 1e-12);
            assert!(smatch(&a, &b, DEFAULT_RESTARTS, 0).matched <= ab.matched);
        }
    }

    #[test]
    fn smatch_is_deterministic() {
        let a = parse("(i (p r1 (p r2 (e e0))) (n (p r2 (e e1))))").unwrap();
        let b = parse("(p r2 (u (p r1 (e e0)) (p r2 (e e1))))").unwrap();
        assert_eq!(smatch(&a, &b, 5, 9), smatch(&a, &b, 5, 9));
    }

    #[test]
    fn run_report_on_identical_predictions() {
        let g = crate::synth::random_graph(50, 3, 300, 2);
        let refs: Vec<PairRecord> = [PatternId::P1, PatternId::I2, PatternId::Up]
            .iter()
            .map(|&p| sample_pair(&g, p, 1).unwrap())
            .collect();
        let preds: Vec<(Hypothesis, Condition)> =
            refs.iter().map(|r| (r.hypothesis.clone(), Condition::Pattern(r.pattern))).collect();
        let rep = evaluate_run(&g, &preds, &refs).unwrap();
        for m in [rep.jaccard, rep.dice, rep.overlap, rep.accuracy, rep.smatch] {
            assert_eq!(m, MeanStd { mean: 1.0, std: 0.0 });
        }
        assert!(matches!(evaluate_run(&g, &preds[..2], &refs), Err(Error::Contract(_))));
    }

    #[test]
    fn run_report_means_match_hand_averages() {
        let g = toy_g1();
        let rec = |h: &str, o: &[u32]| PairRecord {
            hypothesis: parse(h).unwrap(),
            observation: EntitySet::from_ids(o.iter().copied()),
            pattern: PatternId::P1,
            provenance: Provenance::Direct,
            seed: 0,
            start: None,
        };
        let refs = vec![rec("(p r1 (e e0))", &[1, 2]), rec("(p r2 (e e1))", &[3]), rec("(p r1 (e e3))", &[2])];
        let preds = vec![
            (parse("(p r1 (e e0))").unwrap(), Condition::Pattern(PatternId::P1)),
            (parse("(p r2 (e e2))").unwrap(), Condition::RelationCount(2)),
            (parse("(p r1 (e e0))").unwrap(), Condition::Pattern(PatternId::P1)),
        ];
        let rep = evaluate_run(&g, &preds, &refs).unwrap();
        // Conclusions {1,2}, {4}, {1,2} against {1,2}, {3}, {2}.
        let jac = [1.0, 0.0, 0.5];
        let dice = [1.0, 0.0, 2.0 / 3.0];
        let ov = [1.0, 0.0, 1.0];
        let mean = |x: &[f64]| x.iter().sum::<f64>() / 3.0;
        assert!((rep.jaccard.mean - mean(&jac)).abs() < 1e-12);
        assert!((rep.dice.mean - mean(&dice)).abs() < 1e-12);
        assert!((rep.overlap.mean - mean(&ov)).abs() < 1e-12);
        assert!((rep.accuracy.mean - 2.0 / 3.0).abs() < 1e-12);
        let empty = vec![(parse("(p r1 (e e4))").unwrap(), Condition::Pattern(PatternId::P1)); 3];
        let rep = evaluate_run(&g, &empty, &refs).unwrap();
        assert_eq!((rep.jaccard.mean, rep.dice.mean, rep.overlap.mean), (0.0, 0.0, 0.0));
    }
}
