//! Sorted, deduplicated entity sets and the merge-based set algebra over them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::EntityId;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<EntityId>", into = "Vec<EntityId>")]
pub struct EntitySet(Vec<EntityId>);

impl From<Vec<EntityId>> for EntitySet {
    fn from(mut ids: Vec<EntityId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        EntitySet(ids)
    }
}

impl From<EntitySet> for Vec<EntityId> {
    fn from(s: EntitySet) -> Self {
        s.0
    }
}

impl FromIterator<EntityId> for EntitySet {
    fn from_iter<I: IntoIterator<Item = EntityId>>(iter: I) -> Self {
        iter.into_iter().collect::<Vec<_>>().into()
    }
}

impl<'a> IntoIterator for &'a EntitySet {
    type Item = &'a EntityId;
    type IntoIter = std::slice::Iter<'a, EntityId>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for EntitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str("}")
    }
}

impl EntitySet {
    pub fn new() -> Self {
        EntitySet(Vec::new())
    }

    pub fn singleton(e: EntityId) -> Self {
        EntitySet(vec![e])
    }

    /// Wraps a vector already known to be strictly ascending.
    pub(crate) fn from_sorted_unchecked(ids: Vec<EntityId>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        EntitySet(ids)
    }

    pub fn from_ids(ids: impl IntoIterator<Item = u32>) -> Self {
        ids.into_iter().map(EntityId).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[EntityId] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EntityId> {
        self.0.iter()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.0.binary_search(&e).is_ok()
    }

    pub fn intersection(&self, other: &EntitySet) -> EntitySet {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len().min(b.len()));
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        EntitySet(out)
    }

    pub fn union(&self, other: &EntitySet) -> EntitySet {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        EntitySet(out)
    }

    pub fn difference(&self, other: &EntitySet) -> EntitySet {
        let b = &other.0;
        let mut j = 0;
        let mut out = Vec::with_capacity(self.0.len());
        for &x in &self.0 {
            while j < b.len() && b[j] < x {
                j += 1;
            }
            if j >= b.len() || b[j] != x {
                out.push(x);
            }
        }
        EntitySet(out)
    }

    pub fn intersection_len(&self, other: &EntitySet) -> usize {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn is_subset(&self, other: &EntitySet) -> bool {
        self.len() <= other.len() && self.intersection_len(other) == self.len()
    }

    pub fn is_disjoint(&self, other: &EntitySet) -> bool {
        self.intersection_len(other) == 0
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn naive(a: &[u32], b: &[u32], keep: impl Fn(bool, bool) -> bool) -> EntitySet {
        (0..64u32)
            .filter(|x| keep(a.contains(x), b.contains(x)))
            .map(EntityId)
            .collect()
    }

    proptest! {
        #[test]
        fn merge_ops_match_membership(a in prop::collection::vec(0u32..64, 0..40),
                                      b in prop::collection::vec(0u32..64, 0..40)) {
            let (sa, sb) = (EntitySet::from_ids(a.clone()), EntitySet::from_ids(b.clone()));
            prop_assert_eq!(sa.intersection(&sb), naive(&a, &b, |x, y| x && y));
            prop_assert_eq!(sa.union(&sb), naive(&a, &b, |x, y| x || y));
            prop_assert_eq!(sa.difference(&sb), naive(&a, &b, |x, y| x && !y));
            prop_assert_eq!(sa.intersection_len(&sb), sa.intersection(&sb).len());
            prop_assert_eq!(sa.is_subset(&sb), sa.difference(&sb).is_empty());
        }
    }

    #[test]
    fn serializes_as_plain_id_list() {
        let s = EntitySet::from_ids([3, 1, 3]);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[1,3]");
        let back: EntitySet = serde_json::from_str("[5,2,2]").unwrap();
        assert_eq!(back, EntitySet::from_ids([2, 5]));
    }
}
