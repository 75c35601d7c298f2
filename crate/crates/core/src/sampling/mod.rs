//! Point-set indexing: farthest point sampling, ball query with shadow
//! slots, and the strided downsampling hierarchy.
//!
//! All searches are brute-force distance scans; at desk scale (N ≤ 4096)
//! a spatial tree does not pay for itself.

pub mod io;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Rotation, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Option<Vec<i64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("point cloud must not be empty".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(PointCloud {
            points,
            labels: None,
        })
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        let mut cloud = PointCloud::new(points)?;
        cloud.labels = Some(labels);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rotated(&self, r: &Rotation) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| r.apply(*p)).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn translated(&self, t: Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| *p + t).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Ball-query result. Unused slots hold [`NeighborhoodTable::sentinel`],
/// which equals the source cloud size.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodTable {
    /// Indices of the centers in the source cloud; empty when the centers
    /// were free points.
    pub center_indices: Vec<usize>,
    pub centers: Vec<Vec3>,
    pub neighbor_indices: Vec<usize>,
    pub counts: Vec<usize>,
    pub k_max: usize,
    pub radius: f64,
    pub source_len: usize,
}

impl NeighborhoodTable {
    pub fn num_centers(&self) -> usize {
        self.counts.len()
    }

    pub fn sentinel(&self) -> usize {
        self.source_len
    }

    /// All `k_max` slots of center `m`, shadow slots included.
    pub fn row(&self, m: usize) -> &[usize] {
        &self.neighbor_indices[m * self.k_max..(m + 1) * self.k_max]
    }

    /// Only the real neighbors of center `m`.
    pub fn neighbors(&self, m: usize) -> &[usize] {
        &self.row(m)[..self.counts[m]]
    }

    pub fn is_shadow(&self, index: usize) -> bool {
        index == self.source_len
    }

    /// Same neighbor indices with rotated centers.
    pub fn rotated(&self, r: &Rotation) -> NeighborhoodTable {
        NeighborhoodTable {
            centers: self.centers.iter().map(|c| r.apply(*c)).collect(),
            ..self.clone()
        }
    }

    /// Same neighbor indices with translated centers.
    pub fn translated(&self, t: Vec3) -> NeighborhoodTable {
        NeighborhoodTable {
            centers: self.centers.iter().map(|c| *c + t).collect(),
            ..self.clone()
        }
    }

    /// Block-diagonal union of tables over disjoint source clouds that are
    /// concatenated in the given order. Shadow slots map to the combined
    /// sentinel.
    pub fn concat(tables: &[NeighborhoodTable]) -> Result<NeighborhoodTable> {
        let first = tables
            .first()
            .ok_or_else(|| Error::InvalidArgument("no tables to concatenate".into()))?;
        let k_max = tables.iter().map(|t| t.k_max).max().unwrap_or(0);
        let source_len: usize = tables.iter().map(|t| t.source_len).sum();
        let keep_indices = tables.iter().all(|t| t.center_indices.len() == t.num_centers());
        let mut out = NeighborhoodTable {
            center_indices: Vec::new(),
            centers: Vec::new(),
            neighbor_indices: Vec::new(),
            counts: Vec::new(),
            k_max,
            radius: first.radius,
            source_len,
        };
        let mut offset = 0;
        for t in tables {
            if keep_indices {
                out.center_indices.extend(t.center_indices.iter().map(|i| i + offset));
            }
            out.centers.extend_from_slice(&t.centers);
            out.counts.extend_from_slice(&t.counts);
            for m in 0..t.num_centers() {
                let row = t.row(m);
                out.neighbor_indices
                    .extend(row.iter().map(|&i| if t.is_shadow(i) { source_len } else { i + offset }));
                out.neighbor_indices
                    .extend(std::iter::repeat(source_len).take(k_max - t.k_max));
            }
            offset += t.source_len;
        }
        Ok(out)
    }

    /// Same neighbors, extra trailing shadow slots.
    pub fn padded(&self, k_max: usize) -> NeighborhoodTable {
        assert!(k_max >= self.k_max);
        let mut neighbor_indices = Vec::with_capacity(self.num_centers() * k_max);
        for m in 0..self.num_centers() {
            neighbor_indices.extend_from_slice(self.row(m));
            neighbor_indices.extend(std::iter::repeat(self.source_len).take(k_max - self.k_max));
        }
        NeighborhoodTable {
            neighbor_indices,
            k_max,
            ..self.clone()
        }
    }
}

/// Greedy max-min selection from `seed_index`; ties go to the smallest
/// index. Output is in selection order.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {m} points from a cloud of {n}"
        )));
    }
    if seed_index >= n {
        return Err(Error::IndexOutOfBounds {
            index: seed_index,
            len: n,
        });
    }
    let pts = &cloud.points;
    let mut selected = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = seed_index;
    selected.push(current);
    min_d2[current] = -1.0;
    while selected.len() < m {
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            if min_d2[i] < 0.0 {
                continue;
            }
            let d2 = p.distance_squared(c);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best_d2 {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        current = best;
        min_d2[current] = -1.0;
        selected.push(current);
    }
    Ok(selected)
}

/// For each center, the `k_max` nearest source points within `radius`
/// (ascending distance, ties by index), padded with shadow slots.
pub fn ball_query(
    source: &PointCloud,
    centers: &[Vec3],
    radius: f64,
    k_max: usize,
) -> Result<NeighborhoodTable> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let n = source.len();
    let r2 = radius * radius;
    let rows: Vec<(Vec<usize>, usize)> = centers
        .par_iter()
        .map(|c| {
            let mut hits: Vec<(f64, usize)> = source
                .points
                .iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    let d2 = p.distance_squared(*c);
                    (d2 <= r2).then_some((d2, i))
                })
                .collect();
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            hits.truncate(k_max);
            let count = hits.len();
            let mut row: Vec<usize> = hits.into_iter().map(|(_, i)| i).collect();
            row.resize(k_max, n);
            (row, count)
        })
        .collect();
    let mut neighbor_indices = Vec::with_capacity(centers.len() * k_max);
    let mut counts = Vec::with_capacity(centers.len());
    for (row, count) in rows {
        neighbor_indices.extend(row);
        counts.push(count);
    }
    Ok(NeighborhoodTable {
        center_indices: Vec::new(),
        centers: centers.to_vec(),
        neighbor_indices,
        counts,
        k_max,
        radius,
        source_len: n,
    })
}

/// [`ball_query`] with centers drawn from the source cloud itself.
pub fn ball_query_indexed(
    source: &PointCloud,
    center_indices: &[usize],
    radius: f64,
    k_max: usize,
) -> Result<NeighborhoodTable> {
    let n = source.len();
    if let Some(&bad) = center_indices.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfBounds { index: bad, len: n });
    }
    let centers: Vec<Vec3> = center_indices.iter().map(|&i| source.points[i]).collect();
    let mut table = ball_query(source, &centers, radius, k_max)?;
    table.center_indices = center_indices.to_vec();
    Ok(table)
}

/// One level of a downsampling hierarchy: the sampled centers (indices into
/// the previous level) and their neighborhoods in the previous level.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyLevel {
    pub indices: Vec<usize>,
    pub points: Vec<Vec3>,
    pub table: NeighborhoodTable,
}

pub fn build_hierarchy(
    cloud: &PointCloud,
    levels: usize,
    stride: usize,
    radii: &[f64],
    k_max: &[usize],
) -> Result<Vec<HierarchyLevel>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if radii.len() != levels || k_max.len() != levels {
        return Err(Error::InvalidArgument(format!(
            "{levels} levels need {levels} radii and k_max values, got {} and {}",
            radii.len(),
            k_max.len()
        )));
    }
    let mut out = Vec::with_capacity(levels);
    let mut current = cloud.clone();
    for level in 0..levels {
        let m = current.len().div_ceil(stride);
        if m == 0 {
            return Err(Error::InvalidArgument(format!("level {level} has no points")));
        }
        let indices = if m == current.len() {
            (0..m).collect()
        } else {
            farthest_point_sample(&current, m, 0)?
        };
        let table = ball_query_indexed(&current, &indices, radii[level], k_max[level])?;
        let next = current.select(&indices);
        out.push(HierarchyLevel {
            indices,
            points: next.points.clone(),
            table,
        });
        current = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::random_rotation;
    use proptest::prelude::*;
    use crate::testkit::random_cloud;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;


    /// Recomputes every min-distance from scratch at each step.
    fn fps_oracle(cloud: &PointCloud, m: usize, seed: usize) -> Vec<usize> {
        let mut selected = vec![seed];
        while selected.len() < m {
            let mut best = None;
            let mut best_d = f64::NEG_INFINITY;
            for i in 0..cloud.len() {
                if selected.contains(&i) {
                    continue;
                }
                let d = selected
                    .iter()
                    .map(|&s| cloud.points[i].distance_squared(cloud.points[s]))
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = Some(i);
                }
            }
            selected.push(best.unwrap());
        }
        selected
    }

    fn ball_oracle(source: &PointCloud, centers: &[Vec3], r: f64, k: usize) -> (Vec<usize>, Vec<usize>) {
        let mut rows = vec![];
        let mut counts = vec![];
        for c in centers {
            let mut all: Vec<(f64, usize)> = (0..source.len())
                .map(|i| (source.points[i].distance_squared(*c), i))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let inside: Vec<usize> = all.iter().filter(|(d, _)| *d <= r * r).map(|(_, i)| *i).take(k).collect();
            counts.push(inside.len());
            for s in 0..k {
                rows.push(inside.get(s).copied().unwrap_or(source.len()));
            }
        }
        (rows, counts)
    }

    #[test]
    fn fps_collinear() {
        let cloud = PointCloud::new((0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect()).unwrap();
        assert_eq!(farthest_point_sample(&cloud, 2, 0).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_full_is_permutation() {
        let cloud = random_cloud(20, 1);
        let mut s = farthest_point_sample(&cloud, 20, 0).unwrap();
        s.sort_unstable();
        assert_eq!(s, (0..20).collect::<Vec<_>>());
        assert!(farthest_point_sample(&cloud, 21, 0).is_err());
        assert!(farthest_point_sample(&cloud, 0, 0).is_err());
    }

    #[test]
    fn fps_matches_exhaustive_oracle() {
        for seed in 0..5 {
            let cloud = random_cloud(32, seed);
            assert_eq!(farthest_point_sample(&cloud, 8, 0).unwrap(), fps_oracle(&cloud, 8, 0));
            assert_eq!(farthest_point_sample(&cloud, 8, 5).unwrap(), fps_oracle(&cloud, 8, 5));
        }
    }

    #[test]
    fn ball_query_self_first_and_empty() {
        let cloud = random_cloud(16, 3);
        let t = ball_query_indexed(&cloud, &[4, 9], 0.5, 8).unwrap();
        assert_eq!(t.neighbors(0)[0], 4);
        assert_eq!(t.neighbors(1)[0], 9);
        let far = ball_query(&cloud, &[Vec3::new(10.0, 0.0, 0.0)], 0.5, 4).unwrap();
        assert_eq!(far.counts, vec![0]);
        assert!(far.row(0).iter().all(|&i| far.is_shadow(i)));
        assert!(ball_query(&cloud, &[Vec3::ZERO], 0.0, 4).is_err());
        assert!(ball_query(&cloud, &[Vec3::ZERO], 1.0, 0).is_err());
    }

    #[test]
    fn ball_query_matches_scan_oracle() {
        let cloud = random_cloud(64, 7);
        let centers: Vec<Vec3> = random_cloud(10, 8).points;
        let t = ball_query(&cloud, &centers, 0.3, 16).unwrap();
        let (rows, counts) = ball_oracle(&cloud, &centers, 0.3, 16);
        assert_eq!(t.neighbor_indices, rows);
        assert_eq!(t.counts, counts);
        for m in 0..centers.len() {
            for &i in t.neighbors(m) {
                assert!(cloud.points[i].distance(centers[m]) <= 0.3 + 1e-12);
            }
            assert!(t.row(m)[t.counts[m]..].iter().all(|&i| i == t.sentinel()));
        }
    }

    #[test]
    fn concat_is_block_diagonal() {
        let a = PointCloud::new(vec![Vec3::ZERO, Vec3::new(0.1, 0.0, 0.0)]).unwrap();
        let b = PointCloud::new(vec![Vec3::ZERO, Vec3::new(5.0, 0.0, 0.0), Vec3::new(0.0, 0.2, 0.0)]).unwrap();
        let ta = ball_query_indexed(&a, &[0, 1], 0.5, 2).unwrap();
        let tb = ball_query_indexed(&b, &[1, 2], 0.5, 3).unwrap();
        let t = NeighborhoodTable::concat(&[ta.clone(), tb.clone()]).unwrap();
        assert_eq!(t.source_len, 5);
        assert_eq!(t.k_max, 3);
        assert_eq!(t.num_centers(), 4);
        assert_eq!(t.center_indices, vec![0, 1, 3, 4]);
        for m in 0..2 {
            assert_eq!(t.neighbors(m), ta.neighbors(m));
            let shifted: Vec<usize> = tb.neighbors(m).iter().map(|i| i + 2).collect();
            assert_eq!(t.neighbors(m + 2), &shifted[..]);
        }
        assert_eq!(t.row(1)[2], 5);
        assert!(NeighborhoodTable::concat(&[]).is_err());
    }

    #[test]
    fn hierarchy_sizes() {
        let cloud = random_cloud(1024, 9);
        let h = build_hierarchy(&cloud, 5, 2, &[0.2, 0.3, 0.4, 0.5, 0.6], &[8; 5]).unwrap();
        let sizes: Vec<usize> = h.iter().map(|l| l.points.len()).collect();
        assert_eq!(sizes, vec![512, 256, 128, 64, 32]);

        let small = random_cloud(10, 1);
        let id = build_hierarchy(&small, 1, 1, &[0.5], &[4]).unwrap();
        assert_eq!(id[0].indices, (0..10).collect::<Vec<_>>());
        assert!(build_hierarchy(&small, 2, 2, &[0.5], &[4, 4]).is_err());
        assert!(build_hierarchy(&small, 1, 0, &[0.5], &[4]).is_err());
    }

    #[test]
    fn hierarchy_levels_match_brute_force() {
        let cloud = random_cloud(200, 12);
        let h = build_hierarchy(&cloud, 3, 2, &[0.25, 0.4, 0.6], &[12, 12, 12]).unwrap();
        let mut prev = cloud.clone();
        for level in &h {
            assert_eq!(level.indices, fps_oracle(&prev, level.indices.len(), 0));
            let (rows, counts) = ball_oracle(&prev, &level.points, level.table.radius, level.table.k_max);
            assert_eq!(level.table.neighbor_indices, rows);
            assert_eq!(level.table.counts, counts);
            prev = prev.select(&level.indices);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ball_query_rotation_and_translation_stable(seed in any::<u64>(), tx in -4i32..4, ty in -4i32..4) {
            let cloud = random_cloud(48, seed);
            let centers = cloud.points[..6].to_vec();
            let t = ball_query(&cloud, &centers, 0.6, 10).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
            let r = random_rotation(&mut rng);
            let rc: Vec<Vec3> = centers.iter().map(|c| r.apply(*c)).collect();
            let rt = ball_query(&cloud.rotated(&r), &rc, 0.6, 10).unwrap();
            prop_assert_eq!(&t.neighbor_indices, &rt.neighbor_indices);
            // Dyadic coordinates keep every displacement exact under the shift.
            let grid = crate::testkit::dyadic_cloud(48, seed);
            let gc = grid.points[..6].to_vec();
            let base = ball_query(&grid, &gc, 0.6, 10).unwrap();
            let shift = Vec3::new(tx as f64 * 0.5, ty as f64 * 0.25, 2.0);
            let tc: Vec<Vec3> = gc.iter().map(|c| *c + shift).collect();
            let tt = ball_query(&grid.translated(shift), &tc, 0.6, 10).unwrap();
            prop_assert_eq!(&base.neighbor_indices, &tt.neighbor_indices);
            prop_assert_eq!(&base.counts, &tt.counts);
            let again = ball_query(&cloud, &centers, 0.6, 10).unwrap();
            prop_assert_eq!(t, again);
        }
    }
}
