//! Dense region labelings: compaction, 4-connected components, adjacency, boundaries,
//! and the raw raster export shared by segmentation stages.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

/// Magic bytes of the label raster: `"VSLB"`, `u32` height, `u32` width, then `u32` labels (LE).
pub const LABEL_MAGIC: &[u8; 4] = b"VSLB";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    /// Region id per pixel, `[[row, col]]`, ids in `[0, num_regions)`.
    pub labels: Array2<u32>,
    pub num_regions: usize,
}

impl Labeling {
    /// Wraps arbitrary ids, compacting them to `[0, N)` in raster order of first appearance.
    pub fn from_raw(labels: Array2<u32>) -> Self {
        let mut map = BTreeMap::new();
        let mut next = 0u32;
        let compact = labels.mapv(|l| {
            *map.entry(l).or_insert_with(|| {
                next += 1;
                next - 1
            })
        });
        Self {
            labels: compact,
            num_regions: next as usize,
        }
    }

    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }

    pub fn region_pixels(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.num_regions];
        for ((r, c), &l) in self.labels.indexed_iter() {
            out[l as usize].push((r, c));
        }
        out
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_regions];
        for &l in self.labels.iter() {
            out[l as usize] += 1;
        }
        out
    }

    /// Unordered region pairs sharing a 4-connected pixel edge, as `(low, high)`.
    pub fn adjacency(&self) -> BTreeSet<(u32, u32)> {
        let (h, w) = self.labels.dim();
        let mut edges = BTreeSet::new();
        for r in 0..h {
            for c in 0..w {
                let a = self.labels[[r, c]];
                for (r2, c2) in [(r + 1, c), (r, c + 1)] {
                    if r2 < h && c2 < w {
                        let b = self.labels[[r2, c2]];
                        if a != b {
                            edges.insert((a.min(b), a.max(b)));
                        }
                    }
                }
            }
        }
        edges
    }

    /// Pixels whose right or lower neighbor carries a different label.
    pub fn boundary(&self) -> Array2<bool> {
        let (h, w) = self.labels.dim();
        Array2::from_shape_fn((h, w), |(r, c)| {
            let l = self.labels[[r, c]];
            (c + 1 < w && self.labels[[r, c + 1]] != l) || (r + 1 < h && self.labels[[r + 1, c]] != l)
        })
    }

    /// True when every region is a single 4-connected component.
    pub fn is_four_connected(&self) -> bool {
        let (components, count) = connected_components(&self.labels);
        let mut owner: Vec<Option<u32>> = vec![None; count];
        for (l, comp) in self.labels.iter().zip(components.iter()) {
            owner[*comp as usize] = Some(*l);
        }
        let mut per_label = vec![0usize; self.num_regions];
        for l in owner.into_iter().flatten() {
            per_label[l as usize] += 1;
        }
        per_label.iter().all(|&n| n == 1)
    }

    pub fn encode_raw(&self) -> Vec<u8> {
        let (h, w) = self.labels.dim();
        let mut out = Vec::with_capacity(12 + 4 * h * w);
        out.extend_from_slice(LABEL_MAGIC);
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        for l in self.labels.iter() {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn decode_raw(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 12 || &bytes[..4] != LABEL_MAGIC {
            return Err("not a VSLB label raster".into());
        }
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != 4 * h * w {
            return Err(format!("label raster body has {} bytes, expected {}", body.len(), 4 * h * w));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self::from_raw(Array2::from_shape_vec((h, w), data).expect("length checked")))
    }

    pub fn write_raw(&self, path: &Path) -> std::io::Result<()> {
        crate::rgbd_io::write_atomic(path, &self.encode_raw())
    }

    pub fn read_raw(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::decode_raw(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// RGB image with region boundaries painted red.
    pub fn boundary_overlay(&self, rgb: &RgbImage) -> RgbImage {
        let boundary = self.boundary();
        let mut out = rgb.clone();
        for ((r, c), &b) in boundary.indexed_iter() {
            if b {
                out.put_pixel(c as u32, r as u32, Rgb([255, 0, 0]));
            }
        }
        out
    }
}

/// 4-connected components of equal-valued pixels, numbered in raster order.
pub fn connected_components<T: PartialEq + Copy>(values: &Array2<T>) -> (Array2<u32>, usize) {
    let (h, w) = values.dim();
    let mut comp = Array2::from_elem((h, w), u32::MAX);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if comp[[r, c]] != u32::MAX {
                continue;
            }
            let v = values[[r, c]];
            comp[[r, c]] = next;
            stack.push((r, c));
            while let Some((pr, pc)) = stack.pop() {
                let mut visit = |nr: usize, nc: usize| {
                    if comp[[nr, nc]] == u32::MAX && values[[nr, nc]] == v {
                        comp[[nr, nc]] = next;
                        stack.push((nr, nc));
                    }
                };
                if pr > 0 {
                    visit(pr - 1, pc);
                }
                if pr + 1 < h {
                    visit(pr + 1, pc);
                }
                if pc > 0 {
                    visit(pr, pc - 1);
                }
                if pc + 1 < w {
                    visit(pr, pc + 1);
                }
            }
            next += 1;
        }
    }
    (comp, next as usize)
}

/// Makes every label 4-connected: the largest component of each label keeps it, every
/// other fragment is absorbed by its largest adjacent component (lowest id on ties).
pub fn enforce_connectivity(labels: &Array2<u32>) -> Labeling {
    let (comp, count) = connected_components(labels);
    let (h, w) = labels.dim();
    let mut size = vec![0usize; count];
    let mut owner = vec![0u32; count];
    for (c, l) in comp.iter().zip(labels.iter()) {
        size[*c as usize] += 1;
        owner[*c as usize] = *l;
    }
    let mut largest: BTreeMap<u32, usize> = BTreeMap::new();
    for c in 0..count {
        let best = largest.entry(owner[c]).or_insert(c);
        if size[c] > size[*best] {
            *best = c;
        }
    }
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); count];
    for r in 0..h {
        for c in 0..w {
            let a = comp[[r, c]] as usize;
            for (r2, c2) in [(r + 1, c), (r, c + 1)] {
                if r2 < h && c2 < w {
                    let b = comp[[r2, c2]] as usize;
                    if a != b {
                        neighbors[a].insert(b);
                        neighbors[b].insert(a);
                    }
                }
            }
        }
    }

    let mut parent: Vec<usize> = (0..count).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    // group sizes track absorbed fragments so candidates are judged by merged areas
    let mut group_size = size.clone();
    for c in 0..count {
        if largest[&owner[c]] == c {
            continue;
        }
        let root_c = find(&mut parent, c);
        let mut best: Option<(usize, usize)> = None;
        for &n in &neighbors[c] {
            let root = find(&mut parent, n);
            if root == root_c {
                continue;
            }
            best = match best {
                Some(b) if b.0 > group_size[root] || (b.0 == group_size[root] && b.1 < root) => Some(b),
                _ => Some((group_size[root], root)),
            };
        }
        if let Some((_, target)) = best {
            parent[root_c] = target;
            group_size[target] += group_size[root_c];
        }
    }
    let roots = comp.mapv(|c| find(&mut parent, c as usize) as u32);
    Labeling::from_raw(roots)
}
