//! Connected-component cleanup of binary masks: background holes are filled
//! and only the largest foreground component survives.
//!
//! Foreground uses 26-connectivity and background 6-connectivity, the dual
//! pair that keeps the two labellings topologically consistent.

use ndarray::Array3;

use crate::volume::LabelMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets that precede a voxel in `[x, y, z]` scan order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                for dz in -1isize..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if manhattan == 0 || (self == Connectivity::Six && manhattan != 1) {
                        continue;
                    }
                    if (dx, dy, dz) < (0, 0, 0) {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Component map: `ids` holds 0 for non-target voxels and `1..=sizes.len()`
/// otherwise, numbered by first voxel in scan order.
#[derive(Debug, Clone)]
pub struct Components {
    pub ids: Array3<u32>,
    pub sizes: Vec<usize>,
}

impl Components {
    /// Id of the largest component; ties go to the smallest id.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(u32, usize)> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i as u32 + 1, s));
            }
        }
        best.map(|(id, _)| id)
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // keep the earlier voxel as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

pub fn label_components(m: &LabelMask, target: u8, connectivity: Connectivity) -> Components {
    let [nx, ny, nz] = m.shape();
    let data = m.data();
    let flat = |x: usize, y: usize, z: usize| (x * ny + y) * nz + z;
    let mut set = DisjointSet {
        parent: (0..nx * ny * nz).collect(),
    };
    let offsets = connectivity.backward_offsets();
    for ((x, y, z), &v) in data.indexed_iter() {
        if v != target {
            continue;
        }
        for o in &offsets {
            let (qx, qy, qz) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
            if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize || qz >= nz as isize {
                continue;
            }
            let (qx, qy, qz) = (qx as usize, qy as usize, qz as usize);
            if data[[qx, qy, qz]] == target {
                set.union(flat(x, y, z), flat(qx, qy, qz));
            }
        }
    }
    let mut root_id = vec![0u32; nx * ny * nz];
    let mut sizes = Vec::new();
    let mut ids = Array3::<u32>::zeros((nx, ny, nz));
    for ((x, y, z), &v) in data.indexed_iter() {
        if v != target {
            continue;
        }
        let r = set.find(flat(x, y, z));
        if root_id[r] == 0 {
            sizes.push(0);
            root_id[r] = sizes.len() as u32;
        }
        let id = root_id[r];
        sizes[id as usize - 1] += 1;
        ids[[x, y, z]] = id;
    }
    Components { ids, sizes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CleanupWarning {
    EmptyForeground,
}

#[derive(Debug, Clone)]
pub struct Cleaned {
    pub mask: LabelMask,
    pub warning: Option<CleanupWarning>,
}

/// Every background component except the largest becomes foreground.
pub fn fill_background_holes(m: &LabelMask) -> LabelMask {
    let comps = label_components(m, 0, Connectivity::Six);
    let Some(keep) = comps.largest() else {
        return m.clone();
    };
    let data = ndarray::Zip::from(m.data())
        .and(&comps.ids)
        .map_collect(|&v, &id| if v == 0 && id != keep { 1 } else { v });
    LabelMask::new(data, *m.affine()).expect("binary")
}

/// Keep only the largest 26-connected foreground component.
pub fn largest_foreground(m: &LabelMask) -> Cleaned {
    let comps = label_components(m, 1, Connectivity::TwentySix);
    let Some(keep) = comps.largest() else {
        log::warn!("mask has no foreground");
        return Cleaned {
            mask: m.clone(),
            warning: Some(CleanupWarning::EmptyForeground),
        };
    };
    let data = comps.ids.mapv(|id| (id == keep) as u8);
    Cleaned {
        mask: LabelMask::new(data, *m.affine()).expect("binary"),
        warning: None,
    }
}

/// Hole filling followed by largest-component selection.
pub fn cleanup(m: &LabelMask) -> Cleaned {
    largest_foreground(&fill_background_holes(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Affine;
    use proptest::prelude::*;

    fn ball(n: usize, r_out: f64, r_in: f64) -> LabelMask {
        let c = (n as f64 - 1.0) / 2.0;
        LabelMask::from_fn([n; 3], Affine::identity(), |p| {
            let d2: f64 = p.iter().map(|&v| (v as f64 - c).powi(2)).sum();
            d2 <= r_out * r_out && (r_in < 0.0 || d2 > r_in * r_in)
        })
    }

    #[test]
    fn all_background_is_one_component() {
        let m = LabelMask::zeros([4, 5, 6], Affine::identity());
        let c = label_components(&m, 0, Connectivity::Six);
        assert_eq!(c.sizes, vec![120]);
    }

    #[test]
    fn diagonal_islands_depend_on_connectivity() {
        let pts = [[1, 1, 1], [3, 3, 3]];
        let m = LabelMask::from_fn([5; 3], Affine::identity(), |p| pts.contains(&p));
        assert_eq!(label_components(&m, 1, Connectivity::TwentySix).sizes, vec![1, 1]);
        let touching = [[1, 1, 1], [2, 2, 2]];
        let m = LabelMask::from_fn([5; 3], Affine::identity(), |p| touching.contains(&p));
        assert_eq!(label_components(&m, 1, Connectivity::TwentySix).sizes, vec![2]);
        assert_eq!(label_components(&m, 1, Connectivity::Six).sizes, vec![1, 1]);
    }

    #[test]
    fn l_shape_and_isolated_voxel() {
        // L: 5 voxels along x at y=0, 4 more along y at x=0 -> 9 voxels
        let mut pts: Vec<[usize; 3]> = (0..5).map(|x| [x, 0, 0]).collect();
        pts.extend((1..5).map(|y| [0, y, 0]));
        pts.push([3, 3, 4]);
        let m = LabelMask::from_fn([5; 3], Affine::identity(), |p| pts.contains(&p));
        let c = label_components(&m, 1, Connectivity::TwentySix);
        let mut sizes = c.sizes.clone();
        sizes.sort();
        assert_eq!(sizes, vec![1, 9]);
        assert_eq!(c.ids[[0, 0, 0]], 1);
    }

    #[test]
    fn hollow_shell_fills_to_solid_ball() {
        let shell = ball(15, 6.0, 3.0);
        let solid = ball(15, 6.0, -1.0);
        assert_eq!(fill_background_holes(&shell), solid);
        assert_eq!(fill_background_holes(&solid), solid);
    }

    #[test]
    fn two_cavities_filled() {
        let cav = [[3, 3, 3], [3, 3, 4], [6, 6, 5], [6, 6, 6], [6, 6, 7]];
        let blob = LabelMask::from_fn([10; 3], Affine::identity(), |p| {
            p.iter().all(|&c| (1..9).contains(&c)) && !cav.contains(&p)
        });
        let filled = fill_background_holes(&blob);
        assert_eq!(filled.count(), 8 * 8 * 8);
    }

    #[test]
    fn largest_blob_kept() {
        let m = LabelMask::from_fn([12; 3], Affine::identity(), |p| {
            let big = p.iter().all(|&c| c < 5) && p[2] < 4; // 5*5*4 = 100
            let small = p[0] == 11 && p[1] == 11 && (6..11).contains(&p[2]);
            big || small
        });
        assert_eq!(m.count(), 105);
        let kept = largest_foreground(&m);
        assert_eq!(kept.mask.count(), 100);
        assert!(kept.warning.is_none());
        let single = ball(9, 3.0, -1.0);
        assert_eq!(largest_foreground(&single).mask, single);
    }

    #[test]
    fn empty_mask_warns() {
        let m = LabelMask::zeros([4; 3], Affine::identity());
        let out = cleanup(&m);
        assert!(out.mask.is_empty());
        assert_eq!(out.warning, Some(CleanupWarning::EmptyForeground));
    }

    #[test]
    fn shell_plus_speck_becomes_ball() {
        let shell = ball(15, 6.0, 3.0);
        let mut data = shell.into_data();
        data[[0, 0, 0]] = 1;
        let m = LabelMask::from_data(data).unwrap();
        assert_eq!(cleanup(&m).mask, ball(15, 6.0, -1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn cleanup_properties(bits in proptest::collection::vec(prop::bool::weighted(0.4), 7 * 7 * 7)) {
            let data = Array3::from_shape_vec((7, 7, 7), bits.into_iter().map(u8::from).collect()).unwrap();
            let m = LabelMask::from_data(data).unwrap();
            let once = cleanup(&m).mask;
            prop_assert_eq!(&cleanup(&once).mask, &once);
            let comps = label_components(&once, 1, Connectivity::TwentySix);
            prop_assert!(comps.sizes.len() <= 1);
            // only holes are added, and the largest original component survives
            let filled = fill_background_holes(&m);
            for (&o, &f) in once.data().iter().zip(filled.data().iter()) {
                prop_assert!(o <= f);
            }
        }
    }
}
