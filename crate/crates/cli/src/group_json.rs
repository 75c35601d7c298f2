use serde::{Deserialize, Serialize};

use epnkit_core::geom::Rotation;
use epnkit_core::group::{FiniteRotationGroup, GroupKind};
use epnkit_core::{Error, Result};

/// File form of a group: matrices as 9-element row-major arrays, plus the
/// multiplication and inverse tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFile {
    pub kind: GroupKind,
    pub order: usize,
    pub elements: Vec<[f64; 9]>,
    /// `mul_table[i][j]` is the index of `g_i · g_j`.
    pub mul_table: Vec<Vec<usize>>,
    pub inv_table: Vec<usize>,
}

impl GroupFile {
    pub fn from_group(group: &FiniteRotationGroup) -> Self {
        let n = group.order();
        GroupFile {
            kind: group.kind(),
            order: n,
            elements: group
                .elements()
                .iter()
                .map(|r| {
                    let m = r.0;
                    [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
                })
                .collect(),
            mul_table: group.mul_table().chunks(n).map(|row| row.to_vec()).collect(),
            inv_table: group.inv_table().to_vec(),
        }
    }

    /// Rebuilds the group from the stored elements and checks that the
    /// stored tables agree with the recomputed ones.
    pub fn to_group(&self) -> Result<FiniteRotationGroup> {
        let elements = self
            .elements
            .iter()
            .map(|e| Rotation([[e[0], e[1], e[2]], [e[3], e[4], e[5]], [e[6], e[7], e[8]]]))
            .collect();
        let group = FiniteRotationGroup::from_elements(self.kind, elements)?;
        if self.order != group.order() || GroupFile::from_group(&group) != *self {
            return Err(Error::Parse("group tables do not match the elements".into()));
        }
        Ok(group)
    }
}
