//! Volume ingestion and the multiresolution patch pyramid.
//!
//! Layer `r` holds cubic patches of side `3 * 2^(r-1)` voxels placed on a
//! regular lattice with stride `side * 2^(1-r)`; the overlap between adjacent
//! patches is therefore `100 * (1 - 2^(1-r))` percent in each direction (0%
//! at `r = 1`, 75% at `r = 3`). Patches that would cross the volume boundary
//! are discarded. Layer `r = 0` is the voxel layer and is never materialized;
//! voxels are enumerated through the non-overlapping `r = 1` patches.
//!
//! Every patch of layer `r >= 2` links the eight layer-`(r-1)` patches of its
//! octant decomposition as hierarchical children. Octant origins always land
//! on the finer lattice, so children are ordinary layer members. The stored
//! parent is the canonical one: the containing coarser patch at the same
//! origin where the boundary allows it, otherwise the nearest containing
//! origin.

use crate::error::{Error, Result};
use crate::par;

/// A multichannel voxel grid with optional per-voxel class labels.
///
/// Grids are stored x-fastest: index `x + dims.0 * (y + dims.1 * z)`.
#[derive(Debug, Clone)]
pub struct LabeledVolume {
    pub dims: (usize, usize, usize),
    pub channels: Vec<Vec<f32>>,
    pub labels: Option<Vec<u16>>,
}

impl LabeledVolume {
    pub fn new(
        dims: (usize, usize, usize),
        channels: Vec<Vec<f32>>,
        labels: Option<Vec<u16>>,
    ) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        if n == 0 || channels.is_empty() {
            return Err(Error::BadConfig("volume needs nonzero dims and one channel".into()));
        }
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: channels[0].len() });
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: l.len() });
            }
        }
        Ok(Self { dims, channels, labels })
    }

    pub fn n_chan(&self) -> usize {
        self.channels.len()
    }

    #[inline]
    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }
}

/// Patch side at layer `r >= 1`.
pub fn layer_side(r: usize) -> usize {
    3 << (r - 1)
}

/// Lattice stride at layer `r >= 1`: `side * 2^(1-r)`.
pub fn layer_stride(r: usize) -> usize {
    layer_side(r) >> (r - 1)
}

/// Overlap fraction between adjacent patches of layer `r`.
pub fn layer_overlap(r: usize) -> f64 {
    1.0 - (layer_stride(r) as f64 / layer_side(r) as f64)
}

/// One cubic patch. Voxel-level statistics are present when the source volume
/// carries labels; `ref_label` is 0 otherwise.
#[derive(Debug, Clone)]
pub struct Patch {
    pub origin: (usize, usize, usize),
    /// Canonical containing patch in the next coarser layer.
    pub parent: Option<u32>,
    /// Octant decomposition in the next finer layer (empty at `r = 1`).
    pub children: Vec<u32>,
    /// Per-class voxel counts (empty when the volume is unlabeled).
    pub label_histogram: Vec<u32>,
    /// Mode of the histogram, ties to the smallest class id.
    pub ref_label: u16,
    /// Half-max width of the histogram minus one.
    pub heterogeneity: f64,
}

/// All patches of one resolution layer, in x-fastest lattice order.
#[derive(Debug, Clone)]
pub struct Layer {
    pub r: usize,
    pub side: usize,
    pub stride: usize,
    /// Lattice extent per axis.
    pub grid: (usize, usize, usize),
    pub patches: Vec<Patch>,
}

impl Layer {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    #[inline]
    pub fn lattice_index(&self, gx: usize, gy: usize, gz: usize) -> u32 {
        (gx + self.grid.0 * (gy + self.grid.1 * gz)) as u32
    }

    #[inline]
    pub fn lattice_coords(&self, idx: u32) -> (usize, usize, usize) {
        let idx = idx as usize;
        let gx = idx % self.grid.0;
        let gy = (idx / self.grid.0) % self.grid.1;
        let gz = idx / (self.grid.0 * self.grid.1);
        (gx, gy, gz)
    }

    /// Index of the patch whose origin is `origin`, if it lies on the lattice.
    pub fn index_of_origin(&self, origin: (usize, usize, usize)) -> Option<u32> {
        let (ox, oy, oz) = origin;
        if ox % self.stride != 0 || oy % self.stride != 0 || oz % self.stride != 0 {
            return None;
        }
        let (gx, gy, gz) = (ox / self.stride, oy / self.stride, oz / self.stride);
        if gx >= self.grid.0 || gy >= self.grid.1 || gz >= self.grid.2 {
            return None;
        }
        Some(self.lattice_index(gx, gy, gz))
    }

    /// The up-to-26 patches at lattice offsets `{-1,0,1}^3 \ {0}`.
    pub fn neighbors(&self, idx: u32) -> Vec<u32> {
        let (gx, gy, gz) = self.lattice_coords(idx);
        let mut out = Vec::with_capacity(26);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let nx = gx as i64 + dx;
                    let ny = gy as i64 + dy;
                    let nz = gz as i64 + dz;
                    if nx < 0
                        || ny < 0
                        || nz < 0
                        || nx >= self.grid.0 as i64
                        || ny >= self.grid.1 as i64
                        || nz >= self.grid.2 as i64
                    {
                        continue;
                    }
                    out.push(self.lattice_index(nx as usize, ny as usize, nz as usize));
                }
            }
        }
        out
    }
}

/// The full patch pyramid over one volume, layers `1..=n_lay`.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub dims: (usize, usize, usize),
    pub n_lay: usize,
    pub n_clas: u16,
    layers: Vec<Layer>,
}

impl Pyramid {
    /// Extracts every layer, wiring octant children, canonical parents and
    /// (on labeled volumes) per-patch label statistics.
    pub fn build(volume: &LabeledVolume, n_lay: usize, n_clas: u16) -> Result<Self> {
        if n_lay == 0 {
            return Err(Error::BadConfig("pyramid needs at least one layer".into()));
        }
        let coarsest = layer_side(n_lay);
        let dims = volume.dims;
        if dims.0 < coarsest || dims.1 < coarsest || dims.2 < coarsest {
            return Err(Error::VolumeTooSmall { layer: n_lay, side: coarsest, dims });
        }

        let mut layers = Vec::with_capacity(n_lay);
        for r in 1..=n_lay {
            let side = layer_side(r);
            let stride = layer_stride(r);
            let grid = (
                (dims.0 - side) / stride + 1,
                (dims.1 - side) / stride + 1,
                (dims.2 - side) / stride + 1,
            );
            let n = grid.0 * grid.1 * grid.2;
            let layer_template = Layer { r, side, stride, grid, patches: Vec::new() };
            let patches = par::map_indexed(n, |idx| {
                let (gx, gy, gz) = layer_template.lattice_coords(idx as u32);
                let origin = (gx * stride, gy * stride, gz * stride);
                let (hist, ref_label, het) = match &volume.labels {
                    Some(labels) => label_stats_in(labels, dims, origin, side, n_clas),
                    None => (Vec::new(), 0, 0.0),
                };
                Patch {
                    origin,
                    parent: None,
                    children: Vec::new(),
                    label_histogram: hist,
                    ref_label,
                    heterogeneity: het,
                }
            });
            layers.push(Layer { patches, ..layer_template });
        }

        let mut pyramid = Self { dims, n_lay, n_clas, layers };
        pyramid.link_hierarchy();
        Ok(pyramid)
    }

    fn link_hierarchy(&mut self) {
        for r in 2..=self.n_lay {
            let (finer_slice, coarser_slice) = self.layers.split_at_mut(r - 1);
            let finer = &finer_slice[r - 2];
            let coarser = &mut coarser_slice[0];
            let half = coarser.side / 2;
            for idx in 0..coarser.patches.len() {
                let origin = coarser.patches[idx].origin;
                let mut children = Vec::with_capacity(8);
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let child_origin =
                                (origin.0 + dx * half, origin.1 + dy * half, origin.2 + dz * half);
                            let child = finer
                                .index_of_origin(child_origin)
                                .expect("octant child lies on the finer lattice");
                            children.push(child);
                        }
                    }
                }
                coarser.patches[idx].children = children;
            }
        }
        for r in 1..self.n_lay {
            let dims = self.dims;
            let (finer_slice, coarser_slice) = self.layers.split_at_mut(r);
            let finer = &mut finer_slice[r - 1];
            let coarser = &coarser_slice[0];
            for idx in 0..finer.patches.len() {
                let o = finer.patches[idx].origin;
                let parent_origin = (
                    canonical_parent_axis(o.0, coarser.side, dims.0),
                    canonical_parent_axis(o.1, coarser.side, dims.1),
                    canonical_parent_axis(o.2, coarser.side, dims.2),
                );
                let parent = coarser
                    .index_of_origin(parent_origin)
                    .expect("canonical parent lies on the coarser lattice");
                finer.patches[idx].parent = Some(parent);
            }
        }
    }

    /// Layer accessor for `r` in `1..=n_lay`.
    pub fn layer(&self, r: usize) -> &Layer {
        &self.layers[r - 1]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
}

/// Canonical parent origin along one axis: the child's own origin when a
/// coarser patch fits there, else the nearest containing lattice origin.
fn canonical_parent_axis(child_origin: usize, parent_side: usize, dim: usize) -> usize {
    let stride = 3;
    let max_origin = ((dim - parent_side) / stride) * stride;
    child_origin.min(max_origin)
}

/// The `3 x 3 x 3` cell decomposition of a patch: 27 cubic subregions of side
/// `side / 3`, returned as (origin, cell_side) in x-fastest order.
pub fn patch_cells(
    origin: (usize, usize, usize),
    r: usize,
) -> Result<Vec<((usize, usize, usize), usize)>> {
    if r == 0 {
        return Err(Error::NoCells);
    }
    let cell = layer_side(r) / 3;
    let mut out = Vec::with_capacity(27);
    for cz in 0..3 {
        for cy in 0..3 {
            for cx in 0..3 {
                out.push((
                    (origin.0 + cx * cell, origin.1 + cy * cell, origin.2 + cz * cell),
                    cell,
                ));
            }
        }
    }
    Ok(out)
}

/// Histogram, mode label and half-max heterogeneity of a cubic region.
///
/// Heterogeneity is the number of classes whose count reaches half the
/// maximum count, minus one; a single-class region scores zero.
pub fn label_stats_in(
    labels: &[u16],
    dims: (usize, usize, usize),
    origin: (usize, usize, usize),
    side: usize,
    n_clas: u16,
) -> (Vec<u32>, u16, f64) {
    let mut hist = vec![0u32; n_clas as usize];
    for z in origin.2..origin.2 + side {
        for y in origin.1..origin.1 + side {
            let base = dims.0 * (y + dims.1 * z) + origin.0;
            for &l in &labels[base..base + side] {
                if l >= 1 && l <= n_clas {
                    hist[(l - 1) as usize] += 1;
                }
            }
        }
    }
    let (ref_label, heterogeneity) = histogram_mode_and_width(&hist);
    (hist, ref_label, heterogeneity)
}

/// Mode (ties to the smallest class) and half-max width minus one.
pub fn histogram_mode_and_width(hist: &[u32]) -> (u16, f64) {
    let max = hist.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return (0, 0.0);
    }
    let mode = hist.iter().position(|&c| c == max).unwrap();
    let half = max as f64 / 2.0;
    let at_least_half = hist.iter().filter(|&&c| c as f64 >= half && c > 0).count();
    ((mode + 1) as u16, (at_least_half - 1) as f64)
}

/// One voxel of an `r = 1` patch decomposition.
#[derive(Debug, Clone)]
pub struct VoxelRecord {
    pub position: (usize, usize, usize),
    /// Linear voxel id within the volume.
    pub id: u32,
    pub intensities: Vec<f32>,
    /// 1-based reference label, 0 when unlabeled.
    pub label: u16,
}

/// Decomposes an `r = 1` patch into its 27 voxels.
pub fn decompose_to_voxels(
    volume: &LabeledVolume,
    origin: (usize, usize, usize),
) -> Vec<VoxelRecord> {
    let mut out = Vec::with_capacity(27);
    for dz in 0..3 {
        for dy in 0..3 {
            for dx in 0..3 {
                let (x, y, z) = (origin.0 + dx, origin.1 + dy, origin.2 + dz);
                let id = volume.voxel_index(x, y, z);
                out.push(VoxelRecord {
                    position: (x, y, z),
                    id: id as u32,
                    intensities: volume.channels.iter().map(|c| c[id]).collect(),
                    label: volume.labels.as_ref().map_or(0, |l| l[id]),
                });
            }
        }
    }
    out
}
