use std::cmp::Ordering;

use crate::dataset::VectorId;

/// A scored base point. Ordered by distance, then by id, so every ranking in
/// the crate (oracle, beam pool, pruning) shares one tie rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: VectorId,
    pub dist: f32,
}

impl Neighbor {
    #[inline]
    pub fn new(id: VectorId, dist: f32) -> Self {
        Neighbor { id, dist }
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    #[inline]
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.id.cmp(&other.id))
    }
}

pub fn ids(list: &[Neighbor]) -> Vec<VectorId> {
    list.iter().map(|n| n.id).collect()
}
