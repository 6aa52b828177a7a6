use super::BinaryMask;

/// Component id per voxel (`0` = background, components numbered from 1 in
/// raster order of their first voxel) and voxel count per component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub labels: Vec<u32>,
    pub counts: Vec<usize>,
}

impl ComponentLabeling {
    pub fn components(&self) -> usize {
        self.counts.len()
    }

    pub fn count_of(&self, label: u32) -> usize {
        self.counts[label as usize - 1]
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass 26-connected labelling with union–find.
pub fn label_components(mask: &BinaryMask) -> ComponentLabeling {
    let [nx, ny, nz] = mask.dims();
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut provisional = vec![0u32; mask.len()];
    let mut sets = DisjointSet { parent: vec![0] };

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !mask.get(x, y, z) {
                    continue;
                }
                let mut here = 0u32;
                // the 13 neighbours that precede (x, y, z) in raster order
                for dz in -1i64..=0 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dz == 0 && (dy > 0 || (dy == 0 && dx >= 0)) {
                                continue;
                            }
                            let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 {
                                continue;
                            }
                            let l = provisional[idx(xx as usize, yy as usize, zz as usize)];
                            if l == 0 {
                                continue;
                            }
                            if here == 0 {
                                here = l;
                            } else {
                                sets.union(here, l);
                            }
                        }
                    }
                }
                if here == 0 {
                    here = sets.parent.len() as u32;
                    sets.parent.push(here);
                }
                provisional[idx(x, y, z)] = here;
            }
        }
    }

    let mut remap = vec![0u32; sets.parent.len()];
    let mut counts = Vec::new();
    let mut labels = provisional;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if remap[root] == 0 {
            counts.push(0);
            remap[root] = counts.len() as u32;
        }
        *l = remap[root];
        counts[*l as usize - 1] += 1;
    }
    ComponentLabeling { labels, counts }
}

/// Default minimum component size, 1000 voxels (1 cm³ at 1 mm isotropic).
pub const DEFAULT_MIN_COMPONENT_VOXELS: usize = 1000;

/// Reclassifies every 26-connected component smaller than `min_voxels` as
/// background.
pub fn filter_small_components(mask: &BinaryMask, min_voxels: usize) -> BinaryMask {
    let labeling = label_components(mask);
    let voxels = labeling
        .labels
        .iter()
        .map(|&l| l != 0 && labeling.count_of(l) >= min_voxels)
        .collect();
    BinaryMask::new(mask.dims(), mask.spacing(), voxels).expect("same geometry")
}

/// Foreground volume in cm³.
pub fn measure_volume(mask: &BinaryMask) -> f64 {
    let [sx, sy, sz] = mask.spacing();
    mask.count() as f64 * sx * sy * sz / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_neighbours_connect() {
        let mut m = BinaryMask::empty([3, 3, 3], [1.0; 3]);
        m.set(0, 0, 0, true);
        m.set(1, 1, 1, true);
        m.set(2, 2, 2, true);
        m.set(2, 0, 0, true);
        m.set(0, 2, 0, true);
        let l = label_components(&m);
        assert_eq!(l.components(), 1);
        m.set(1, 1, 1, false);
        let l = label_components(&m);
        assert_eq!(l.components(), 4);
        assert_eq!(l.counts.iter().sum::<usize>(), m.count());
    }

    #[test]
    fn u_shape_merges() {
        // two arms joined only at the far end must get one label
        let mut m = BinaryMask::empty([5, 5, 1], [1.0; 3]);
        for y in 0..5 {
            m.set(0, y, 0, true);
            m.set(4, y, 0, true);
        }
        for x in 0..5 {
            m.set(x, 4, 0, true);
        }
        assert_eq!(label_components(&m).components(), 1);
    }

    #[test]
    fn threshold_boundary() {
        let mut m = BinaryMask::empty([40, 40, 40], [1.0; 3]);
        // 999 voxels: 9x111 slab at z = 0
        for y in 0..9 {
            for x in 0..37 {
                for z in 0..3 {
                    if y * 37 * 3 + x * 3 + z < 999 {
                        m.set(x, y, z, true);
                    }
                }
            }
        }
        // 1000 voxels: 10x10x10 cube, well separated
        for z in 20..30 {
            for y in 20..30 {
                for x in 20..30 {
                    m.set(x, y, z, true);
                }
            }
        }
        let l = label_components(&m);
        let mut counts = l.counts.clone();
        counts.sort_unstable();
        assert_eq!(counts, vec![999, 1000]);
        let f = filter_small_components(&m, DEFAULT_MIN_COMPONENT_VOXELS);
        assert_eq!(f.count(), 1000);
        assert!(f.get(25, 25, 25) && !f.get(0, 0, 0));
        assert_eq!(filter_small_components(&f, 1000), f);
    }

    #[test]
    fn volumes() {
        let mut m = BinaryMask::empty([10, 10, 10], [1.0; 3]);
        assert_eq!(measure_volume(&m), 0.0);
        for z in 0..10 {
            for y in 0..10 {
                for x in 0..10 {
                    m.set(x, y, z, true);
                }
            }
        }
        assert_eq!(measure_volume(&m), 1.0);
        let m = BinaryMask::new([2282, 1, 1], [1.0; 3], vec![true; 2282]).unwrap();
        assert!((measure_volume(&m) - 2.282).abs() < 1e-12);
        let e = BinaryMask::empty([3, 3, 3], [1.0; 3]);
        assert_eq!(filter_small_components(&e, 1000), e);
    }
}
