//! Finite rotation subgroups of SO(3) with precomputed Cayley tables.
//!
//! Groups are generated by closure of two generators, deduplicated, snapped
//! back onto SO(3) and put into a canonical order (identity first, then
//! lexicographic on entries rounded to 1e-6). The ordering is what makes the
//! permutation tables and saved checkpoints reproducible.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{relative_cosine, Rotation, Vec3};

/// Elements closer than this (radians) are the same element during closure.
pub const DEDUP_TOLERANCE: f64 = 1e-6;
/// Max-abs tolerance used when matching products against the element list.
pub const CLOSURE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Tetrahedral,
    Octahedral,
    Icosahedral,
}

impl GroupKind {
    pub const ALL: [GroupKind; 3] = [
        GroupKind::Tetrahedral,
        GroupKind::Octahedral,
        GroupKind::Icosahedral,
    ];

    pub fn order(self) -> usize {
        match self {
            GroupKind::Tetrahedral => 12,
            GroupKind::Octahedral => 24,
            GroupKind::Icosahedral => 60,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::Tetrahedral => "tetrahedral",
            GroupKind::Octahedral => "octahedral",
            GroupKind::Icosahedral => "icosahedral",
        }
    }

    fn generators(self) -> [Rotation; 2] {
        let diagonal = Vec3::new(1.0, 1.0, 1.0);
        let z = Vec3::new(0.0, 0.0, 1.0);
        match self {
            GroupKind::Tetrahedral => [
                Rotation::from_axis_angle(diagonal, 120f64.to_radians()),
                Rotation::from_axis_angle(z, 180f64.to_radians()),
            ],
            GroupKind::Octahedral => [
                Rotation::from_axis_angle(z, 90f64.to_radians()),
                Rotation::from_axis_angle(diagonal, 120f64.to_radians()),
            ],
            GroupKind::Icosahedral => {
                // Vertex (0, 1, φ) of the icosahedron with vertices at the
                // cyclic permutations of (0, ±1, ±φ); z passes through the
                // midpoint of the edge joining (0, ±1, φ).
                let phi = (1.0 + 5f64.sqrt()) / 2.0;
                [
                    Rotation::from_axis_angle(Vec3::new(0.0, 1.0, phi), 72f64.to_radians()),
                    Rotation::from_axis_angle(z, 180f64.to_radians()),
                ]
            }
        }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GroupKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tetrahedral" | "tetra" => Ok(GroupKind::Tetrahedral),
            "octahedral" | "octa" => Ok(GroupKind::Octahedral),
            "icosahedral" | "icosa" => Ok(GroupKind::Icosahedral),
            other => Err(Error::InvalidArgument(format!(
                "unknown group kind `{other}` (expected tetrahedral, octahedral or icosahedral)"
            ))),
        }
    }
}

/// A finite rotation group with multiplication, inverse and neighbor tables.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteRotationGroup {
    kind: GroupKind,
    elements: Vec<Rotation>,
    mul_table: Vec<usize>,
    inv_table: Vec<usize>,
    /// Every element index sorted by angle to the identity, ties by index.
    by_angle: Vec<usize>,
}

impl FiniteRotationGroup {
    pub fn build(kind: GroupKind) -> Result<Self> {
        let expected = kind.order();
        let generators = kind.generators();
        let mut elements = vec![Rotation::IDENTITY];
        let mut frontier = 0;
        while frontier < elements.len() {
            let current = elements[frontier];
            frontier += 1;
            for s in &generators {
                let candidate = current * *s;
                if find_within(&elements, &candidate, DEDUP_TOLERANCE).is_none() {
                    elements.push(candidate);
                    if elements.len() > expected {
                        return Err(Error::GroupClosure {
                            kind: kind.name(),
                            expected,
                            found: elements.len(),
                        });
                    }
                }
            }
        }
        if elements.len() != expected {
            return Err(Error::GroupClosure {
                kind: kind.name(),
                expected,
                found: elements.len(),
            });
        }

        let mut elements: Vec<Rotation> = elements.iter().map(|r| r.orthonormalized()).collect();
        let identity = elements.remove(0);
        elements.sort_by(|a, b| rounded_key(a).cmp(&rounded_key(b)));
        elements.insert(0, identity);
        Self::from_elements(kind, elements)
    }

    /// Builds the tables for an already ordered element list.
    pub fn from_elements(kind: GroupKind, elements: Vec<Rotation>) -> Result<Self> {
        let n = elements.len();
        if n != kind.order() {
            return Err(Error::GroupClosure {
                kind: kind.name(),
                expected: kind.order(),
                found: n,
            });
        }
        if elements[0].max_abs_diff(&Rotation::IDENTITY) > CLOSURE_TOLERANCE {
            return Err(Error::InvalidArgument(
                "element 0 of a group must be the identity".into(),
            ));
        }
        let mut mul_table = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                let product = elements[i] * elements[j];
                let k = find_max_abs(&elements, &product, CLOSURE_TOLERANCE).ok_or(
                    Error::GroupClosure {
                        kind: kind.name(),
                        expected: n,
                        found: n + 1,
                    },
                )?;
                mul_table[i * n + j] = k;
            }
        }
        let mut inv_table = vec![0; n];
        for (i, inv) in inv_table.iter_mut().enumerate() {
            *inv = (0..n)
                .find(|&j| mul_table[i * n + j] == 0)
                .ok_or_else(|| Error::InvalidArgument(format!("element {i} has no inverse")))?;
        }
        let mut by_angle: Vec<usize> = (0..n).collect();
        // Larger trace means smaller angle. Traces are rounded so equal-angle
        // elements fall back to index order instead of rounding noise.
        let trace_keys: Vec<i64> = elements
            .iter()
            .map(|r| (r.trace() * 1e9).round() as i64)
            .collect();
        by_angle.sort_by(|&a, &b| trace_keys[b].cmp(&trace_keys[a]).then(a.cmp(&b)));
        Ok(FiniteRotationGroup {
            kind,
            elements,
            mul_table,
            inv_table,
            by_angle,
        })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Rotation] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &Rotation {
        &self.elements[i]
    }

    /// Index of `elements[i] · elements[j]`.
    #[inline]
    pub fn mul(&self, i: usize, j: usize) -> usize {
        self.mul_table[i * self.order() + j]
    }

    #[inline]
    pub fn inv(&self, i: usize) -> usize {
        self.inv_table[i]
    }

    /// Row-major `|G|×|G|` multiplication table.
    pub fn mul_table(&self) -> &[usize] {
        &self.mul_table
    }

    pub fn inv_table(&self) -> &[usize] {
        &self.inv_table
    }

    /// The `k` elements closest to the identity, ascending by angle.
    pub fn identity_neighbors(&self, k: usize) -> Result<&[usize]> {
        if k == 0 || k > self.order() {
            return Err(Error::InvalidArgument(format!(
                "group neighborhood size {k} must be in 1..={}",
                self.order()
            )));
        }
        Ok(&self.by_angle[..k])
    }

    /// Row `g` holds `g · n_j` for the `k` identity neighbors `n_j`: the
    /// identity neighborhood left-translated to `g`.
    pub fn neighbor_table(&self, k: usize) -> Result<Vec<Vec<usize>>> {
        let nbrs = self.identity_neighbors(k)?;
        Ok((0..self.order())
            .map(|g| nbrs.iter().map(|&n| self.mul(g, n)).collect())
            .collect())
    }

    /// `π[j]` = index of `r⁻¹ · g_j`. Reindexing a group axis by `π` applies
    /// the left action of `r` to a signal on the group.
    pub fn left_translation_permutation(&self, r_index: usize) -> Result<Vec<usize>> {
        if r_index >= self.order() {
            return Err(Error::IndexOutOfBounds {
                index: r_index,
                len: self.order(),
            });
        }
        let r_inv = self.inv(r_index);
        Ok((0..self.order()).map(|j| self.mul(r_inv, j)).collect())
    }

    /// Nearest element by geodesic angle (ties to the smallest index) and the
    /// residual `R · g_uᵀ`, so that `residual · g_u = R`.
    pub fn nearest_element(&self, r: &Rotation) -> Result<(usize, Rotation)> {
        let mut best = 0;
        let mut best_cos = f64::NEG_INFINITY;
        for (j, g) in self.elements.iter().enumerate() {
            let c = relative_cosine(r, g)?;
            if c > best_cos {
                best_cos = c;
                best = j;
            }
        }
        Ok((best, *r * self.elements[best].transpose()))
    }

    /// Index of the element equal to `r` within `tol` max-abs, if any.
    pub fn index_of(&self, r: &Rotation, tol: f64) -> Option<usize> {
        find_max_abs(&self.elements, r, tol)
    }
}

/// Free-function form of [`FiniteRotationGroup::build`].
pub fn build_group(kind: GroupKind) -> Result<FiniteRotationGroup> {
    FiniteRotationGroup::build(kind)
}

pub fn left_translation_permutation(
    group: &FiniteRotationGroup,
    r_index: usize,
) -> Result<Vec<usize>> {
    group.left_translation_permutation(r_index)
}

pub fn nearest_group_element(
    group: &FiniteRotationGroup,
    r: &Rotation,
) -> Result<(usize, Rotation)> {
    group.nearest_element(r)
}

fn rounded_key(r: &Rotation) -> [i64; 9] {
    r.to_row_major().map(|v| (v * 1e6).round() as i64)
}

fn find_within(elements: &[Rotation], r: &Rotation, tol_radians: f64) -> Option<usize> {
    elements.iter().position(|e| {
        relative_cosine(e, r)
            .map(|c| c.acos() < tol_radians)
            .unwrap_or(false)
    })
}

fn find_max_abs(elements: &[Rotation], r: &Rotation, tol: f64) -> Option<usize> {
    elements.iter().position(|e| e.max_abs_diff(r) < tol)
}
