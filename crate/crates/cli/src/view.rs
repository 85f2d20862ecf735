//! JSON shapes shared by the CLI and the HTTP service.

use kgabduce::abducer::ScoredHypothesis;
use kgabduce::rewards::RewardBreakdown;
use kgabduce::{Condition, EntityId, EntitySet, Hypothesis, KnowledgeGraph, PatternId, RelationId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Named {
    pub id: u32,
    pub name: String,
}

pub fn entity(g: &KnowledgeGraph, e: EntityId) -> Named {
    Named {
        id: e.0,
        name: g.entity_name(e).unwrap_or_default().to_string(),
    }
}

pub fn relation(g: &KnowledgeGraph, r: RelationId) -> Named {
    Named {
        id: r.0,
        name: g.relation_name(r).unwrap_or_default().to_string(),
    }
}

/// How a conclusion lines up with the observation it should explain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diff {
    pub hit_ids: EntitySet,
    pub missed_ids: EntitySet,
    pub extra_ids: EntitySet,
}

impl Diff {
    pub fn new(conclusion: &EntitySet, observation: &EntitySet) -> Self {
        Diff {
            hit_ids: conclusion.intersection(observation),
            missed_ids: observation.difference(conclusion),
            extra_ids: conclusion.difference(observation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub hypothesis_text: String,
    pub hypothesis_named: String,
    pub hypothesis_ast: Hypothesis,
    pub pattern: Option<PatternId>,
    pub conclusion_ids: EntitySet,
    pub breakdown: RewardBreakdown,
    pub condition_ok: bool,
    pub diff: Diff,
}

impl ResultItem {
    pub fn new(g: &KnowledgeGraph, s: &ScoredHypothesis, observation: &EntitySet) -> Self {
        ResultItem {
            hypothesis_text: s.hypothesis.to_string(),
            hypothesis_named: s.hypothesis.display_named(g),
            hypothesis_ast: s.hypothesis.clone(),
            pattern: s.pattern,
            conclusion_ids: s.conclusion.clone(),
            breakdown: s.breakdown,
            condition_ok: s.condition_ok,
            diff: Diff::new(&s.conclusion, observation),
        }
    }
}

/// A condition given either in the text grammar or as the tagged JSON object.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ConditionInput {
    Text(String),
    Tagged(Condition),
}

impl ConditionInput {
    pub fn resolve(&self, g: &KnowledgeGraph) -> kgabduce::Result<Condition> {
        match self {
            ConditionInput::Text(s) => Condition::parse(s, Some(g)),
            ConditionInput::Tagged(c) => {
                c.validate()?;
                c.check_ids(g)?;
                Ok(*c)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternInfo {
    pub name: PatternId,
    pub shape: String,
    pub relations: usize,
    pub entities: usize,
    pub decomposable: bool,
}

pub fn patterns() -> Vec<PatternInfo> {
    PatternId::ALL
        .into_iter()
        .map(|p| PatternInfo {
            name: p,
            shape: p.shape().to_string(),
            relations: p.relation_count(),
            entities: p.entity_count(),
            decomposable: p.is_decomposable(),
        })
        .collect()
}

/// Parses `3,17,42`; entries that are not integers are looked up as names.
pub fn parse_observation(text: &str, g: &KnowledgeGraph) -> Result<EntitySet, String> {
    let mut ids = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let id = match part.parse::<u32>() {
            Ok(n) => EntityId(n),
            Err(_) => g.entity_by_name(part).ok_or_else(|| format!("unknown entity `{part}`"))?,
        };
        g.check_entity(id).map_err(|e| e.to_string())?;
        ids.push(id);
    }
    Ok(ids.into_iter().collect())
}
