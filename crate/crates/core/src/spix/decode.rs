//! Hard assignment of pixels to cells and connectivity clean-up.

use std::collections::{HashMap, VecDeque};

use super::{GridSpec, NO_CELL, OWNER_SLOT};
use crate::error::{Error, Result};
use crate::maps::LabelMap;
use crate::tensor::{Scalar, Tensor};

/// Dense per-pixel superpixel ids in `[0, count)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    ids: Vec<u32>,
    count: usize,
}

impl SuperpixelMap {
    /// Wraps ids, renumbering them densely in first-appearance order.
    pub fn from_labels(width: usize, height: usize, labels: &[u32]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Usage("superpixel map must not be empty".into()));
        }
        if labels.len() != width * height {
            return Err(Error::dim("superpixel_map", format!("{width}×{height} needs {} ids", width * height)));
        }
        let mut remap = HashMap::new();
        let ids = labels
            .iter()
            .map(|&l| {
                let next = remap.len() as u32;
                *remap.entry(l).or_insert(next)
            })
            .collect();
        Ok(SuperpixelMap { width, height, ids, count: remap.len() })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.ids[y * self.width + x]
    }

    pub fn to_label_map(&self) -> LabelMap {
        LabelMap::new(self.width, self.height, self.ids.clone()).expect("extents already validated")
    }
}

/// Argmax over each pixel's nine cells (ties: owner cell, then lowest id),
/// followed by [`enforce_connectivity`] with the default `S²/16` threshold.
/// `q` is 1×9×H×W or 9×H×W.
pub fn decode_hard<T: Scalar>(q: &Tensor<T>, grid: &GridSpec) -> Result<SuperpixelMap> {
    let plane = grid.height * grid.width;
    if q.numel() != 9 * plane {
        return Err(Error::dim(
            "decode_hard",
            format!("map {:?} is not 9×{}×{}", q.shape(), grid.height, grid.width),
        ));
    }
    let data = q.data();
    let mut labels = vec![0u32; plane];
    for (p, slots) in grid.neighbor_table().iter().enumerate() {
        let owner = slots[OWNER_SLOT];
        let mut best = (data[OWNER_SLOT * plane + p], owner);
        for (k, &c) in slots.iter().enumerate() {
            if c == NO_CELL || k == OWNER_SLOT {
                continue;
            }
            let v = data[k * plane + p];
            if v > best.0 || (v == best.0 && best.1 != owner && c < best.1) {
                best = (v, c);
            }
        }
        labels[p] = best.1;
    }
    let raw = SuperpixelMap { width: grid.width, height: grid.height, ids: labels, count: grid.cells() };
    Ok(enforce_connectivity(&raw, (grid.s * grid.s / 16).max(1)))
}

struct Component {
    label: u32,
    size: usize,
}

/// 4-connected components in raster order of their first pixel.
fn components(width: usize, height: usize, labels: &[u32]) -> (Vec<usize>, Vec<Component>) {
    let mut comp = vec![usize::MAX; labels.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let label = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = (p % width, p / width);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && labels[q] == label {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        comps.push(Component { label, size });
    }
    (comp, comps)
}

/// Keeps each label's largest 4-connected component (earliest in raster
/// order on ties) if it has at least `min_size` pixels; every other
/// component joins the adjacent label it shares most pixel edges with.
/// Output ids are dense in first-appearance order.
pub fn enforce_connectivity(m: &SuperpixelMap, min_size: usize) -> SuperpixelMap {
    let (w, h) = (m.width, m.height);
    let (comp, comps) = components(w, h, &m.ids);

    let mut largest: HashMap<u32, usize> = HashMap::new();
    for (i, c) in comps.iter().enumerate() {
        let e = largest.entry(c.label).or_insert(i);
        if c.size > comps[*e].size {
            *e = i;
        }
    }
    let mut resolved: Vec<Option<u32>> = vec![None; comps.len()];
    for &i in largest.values() {
        if comps[i].size >= min_size {
            resolved[i] = Some(comps[i].label);
        }
    }
    if resolved.iter().all(Option::is_none) {
        // keep the biggest component so something survives
        let best = (0..comps.len()).fold(0, |b, i| if comps[i].size > comps[b].size { i } else { b });
        resolved[best] = Some(comps[best].label);
    }

    // shared edge counts between adjacent components
    let mut edges: Vec<HashMap<usize, usize>> = vec![HashMap::new(); comps.len()];
    for y in 0..h {
        for x in 0..w {
            let a = comp[y * w + x];
            let mut link = |b: usize| {
                if a != b {
                    *edges[a].entry(b).or_insert(0) += 1;
                    *edges[b].entry(a).or_insert(0) += 1;
                }
            };
            if x + 1 < w {
                link(comp[y * w + x + 1]);
            }
            if y + 1 < h {
                link(comp[(y + 1) * w + x]);
            }
        }
    }

    loop {
        let mut changed = false;
        let mut pending = false;
        for i in 0..comps.len() {
            if resolved[i].is_some() {
                continue;
            }
            let mut votes: HashMap<u32, usize> = HashMap::new();
            for (&j, &n) in &edges[i] {
                if let Some(l) = resolved[j] {
                    *votes.entry(l).or_insert(0) += n;
                }
            }
            match votes.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))) {
                Some((l, _)) => {
                    resolved[i] = Some(l);
                    changed = true;
                }
                None => pending = true,
            }
        }
        if !pending || !changed {
            break;
        }
    }

    let labels: Vec<u32> = comp.iter().map(|&c| resolved[c].unwrap_or(comps[c].label)).collect();
    SuperpixelMap::from_labels(w, h, &labels).expect("extents already validated")
}

#[cfg(test)]
mod tests {
    use super::super::init_grid;
    use super::*;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, ids: &[u32]) -> SuperpixelMap {
        SuperpixelMap::from_labels(w, h, ids).unwrap()
    }

    fn four_connected(m: &SuperpixelMap) -> bool {
        let (_, comps) = components(m.width, m.height, &m.ids);
        comps.len() == m.count
    }

    #[test]
    fn peaked_and_uniform_q_reproduce_tiling() {
        let grid = init_grid(32, 48, 16).unwrap();
        let tiling = map(48, 32, &grid.tiling());
        let uniform = Tensor::<f32>::full(&[1, 9, 32, 48], 1.0 / 9.0);
        assert_eq!(decode_hard(&uniform, &grid).unwrap(), tiling);
        let mut peaked = Tensor::<f32>::zeros(&[1, 9, 32, 48]);
        peaked.data_mut()[OWNER_SLOT * 32 * 48..5 * 32 * 48].fill(1.0);
        assert_eq!(decode_hard(&peaked, &grid).unwrap(), tiling);
    }

    #[test]
    fn steered_pixel_joins_neighbor() {
        // 4×4, S = 2: the top-right pixel of cell 0 prefers the cell to its right
        let grid = init_grid(4, 4, 2).unwrap();
        let mut q = Tensor::<f32>::full(&[1, 9, 4, 4], 0.1);
        let plane = 16;
        q.data_mut()[5 * plane + 1] = 0.5;
        let grid_map = SuperpixelMap { width: 4, height: 4, ids: grid.tiling(), count: 4 };
        let raw = {
            let mut ids = grid_map.ids.clone();
            ids[1] = 1;
            ids
        };
        // min size of 1 keeps the steered pixel
        let direct = enforce_connectivity(&map(4, 4, &raw), 1);
        assert_eq!(direct.get(1, 0), direct.get(2, 0));
        let decoded = decode_hard(&q, &grid).unwrap();
        assert_eq!(decoded.get(1, 0), decoded.get(2, 0));
        assert_ne!(decoded.get(0, 0), decoded.get(1, 0));
    }

    #[test]
    fn orphan_is_absorbed() {
        let mut ids = vec![0u32; 25];
        ids[12] = 1;
        let out = enforce_connectivity(&map(5, 5, &ids), 2);
        assert_eq!(out.count(), 1);
    }

    #[test]
    fn connected_map_only_densified() {
        let out = enforce_connectivity(&map(2, 2, &[7, 7, 3, 3]), 1);
        assert_eq!(out.ids(), &[0, 0, 1, 1]);
    }

    #[test]
    fn equal_components_keep_earlier_anchor() {
        // label 1 has two 2×2 pieces; the later one (bottom right) is relabeled
        #[rustfmt::skip]
        let ids = [
            1, 1, 0, 0, 0, 0,
            1, 1, 0, 0, 0, 0,
            0, 0, 0, 0, 0, 0,
            0, 0, 0, 0, 2, 2,
            0, 0, 0, 0, 1, 1,
            0, 0, 0, 0, 1, 1,
        ];
        let out = enforce_connectivity(&map(6, 6, &ids), 1);
        assert_eq!(out.get(0, 0), out.get(1, 1));
        assert_ne!(out.get(4, 4), out.get(0, 0));
        assert_eq!(out.get(4, 4), out.get(3, 4));
        assert!(four_connected(&out));
    }

    proptest! {
        #[test]
        fn enforcement_yields_connected_dense_maps(w in 1usize..12, h in 1usize..12, k in 1u32..6, min in 1usize..6, seed in any::<u64>()) {
            let mut s = seed | 1;
            let ids: Vec<u32> = (0..w * h).map(|_| { s ^= s << 13; s ^= s >> 7; s ^= s << 17; (s % k as u64) as u32 }).collect();
            let out = enforce_connectivity(&map(w, h, &ids), min);
            prop_assert!(four_connected(&out));
            let mut seen = vec![false; out.count()];
            for &i in out.ids() { seen[i as usize] = true; }
            prop_assert!(seen.iter().all(|&b| b));
        }
    }
}
