use std::collections::BTreeMap;

use super::{GroupKey, StudentRecord};

/// Groups smaller than this are excluded from AUC-gap computation.
pub const DEFAULT_GROUP_FLOOR: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupInfo {
    pub indices: Vec<usize>,
    pub excluded_from_gap: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPartition {
    pub groups: BTreeMap<GroupKey, GroupInfo>,
    pub floor: usize,
}

impl GroupPartition {
    pub fn eligible(&self) -> impl Iterator<Item = GroupKey> + '_ {
        self.groups
            .iter()
            .filter(|(_, g)| !g.excluded_from_gap)
            .map(|(k, _)| *k)
    }
}

pub fn partition_groups(records: &[StudentRecord]) -> GroupPartition {
    let keys: Vec<GroupKey> = records.iter().map(StudentRecord::group).collect();
    partition_keys(&keys, DEFAULT_GROUP_FLOOR)
}

pub fn partition_keys(keys: &[GroupKey], floor: usize) -> GroupPartition {
    let mut groups: BTreeMap<GroupKey, GroupInfo> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups
            .entry(*k)
            .or_insert_with(|| GroupInfo {
                indices: Vec::new(),
                excluded_from_gap: false,
            })
            .indices
            .push(i);
    }
    for g in groups.values_mut() {
        g.excluded_from_gap = g.indices.len() < floor;
    }
    GroupPartition { groups, floor }
}
