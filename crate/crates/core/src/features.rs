//! Local and contextual intra-/inter-channel feature extraction, the squared
//! feature expansion, normalization, and per-tree random feature subsetting.
//!
//! The default schema (`loccx-v1`) covers, per channel: the whole-patch
//! median, mean/variance/min/max of the 27 cell medians, and three axis
//! contrasts (median of the positive cell plane minus the negative one); per
//! channel pair: a median ratio and a median difference; per channel over the
//! 26-neighborhood: mean and variance of the neighbors' patch medians and the
//! patch-minus-neighborhood contrast; per channel pair across the
//! neighborhood: the own-channel median minus the neighbors' other-channel
//! mean, both ways. Patches without neighbors degrade the contextual features
//! to their local values (neighbor mean becomes the own median, spreads and
//! contrasts become zero).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::pyramid::{patch_cells, LabeledVolume, Pyramid};

const RATIO_EPS: f64 = 1e-9;
const STD_FLOOR: f64 = 1e-12;

/// Named feature definitions tying vector indices to their meaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub id: String,
    pub n_chan: usize,
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(n_chan: usize) -> Self {
        let mut names = Vec::new();
        for c in 0..n_chan {
            names.push(format!("c{c}.patch_median"));
            names.push(format!("c{c}.cellmed_mean"));
            names.push(format!("c{c}.cellmed_var"));
            names.push(format!("c{c}.cellmed_min"));
            names.push(format!("c{c}.cellmed_max"));
            names.push(format!("c{c}.contrast_x"));
            names.push(format!("c{c}.contrast_y"));
            names.push(format!("c{c}.contrast_z"));
        }
        for a in 0..n_chan {
            for b in a + 1..n_chan {
                names.push(format!("c{a}c{b}.median_ratio"));
                names.push(format!("c{a}c{b}.median_diff"));
            }
        }
        for c in 0..n_chan {
            names.push(format!("c{c}.neigh_median_mean"));
            names.push(format!("c{c}.neigh_median_var"));
            names.push(format!("c{c}.neigh_contrast"));
        }
        for a in 0..n_chan {
            for b in a + 1..n_chan {
                names.push(format!("c{a}c{b}.cross_contrast"));
                names.push(format!("c{b}c{a}.cross_contrast"));
            }
        }
        Self { id: format!("loccx-v1-ch{n_chan}"), n_chan, names }
    }

    pub fn n_tot(&self) -> usize {
        self.names.len()
    }
}

/// Feature rows for every patch of one layer, row-major.
#[derive(Debug, Clone)]
pub struct LayerFeatures {
    pub n_tot: usize,
    data: Vec<f64>,
}

impl LayerFeatures {
    pub fn row(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.n_tot..(idx + 1) * self.n_tot]
    }

    pub fn len(&self) -> usize {
        if self.n_tot == 0 {
            0
        } else {
            self.data.len() / self.n_tot
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Median as the average of the two middle order statistics.
fn median_f64(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let hi = *m;
    if n % 2 == 1 {
        hi
    } else {
        let lo = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Per-patch per-channel basics every derived feature is assembled from.
struct PatchBasics {
    /// Median over all patch voxels, per channel.
    patch_median: Vec<f64>,
    /// 27 cell medians in x-fastest cell order, per channel.
    cell_medians: Vec<[f64; 27]>,
}

fn patch_basics(volume: &LabeledVolume, origin: (usize, usize, usize), r: usize) -> PatchBasics {
    let cells = patch_cells(origin, r).expect("layer patches have r >= 1");
    let n_chan = volume.n_chan();
    let mut patch_median = Vec::with_capacity(n_chan);
    let mut cell_medians = Vec::with_capacity(n_chan);
    for chan in &volume.channels {
        let mut meds = [0.0f64; 27];
        let mut all: Vec<f64> = Vec::with_capacity(cells.len() * cells[0].1.pow(3));
        let mut buf: Vec<f64> = Vec::with_capacity(cells[0].1.pow(3));
        for (k, (co, cs)) in cells.iter().enumerate() {
            buf.clear();
            for z in co.2..co.2 + cs {
                for y in co.1..co.1 + cs {
                    let base = volume.dims.0 * (y + volume.dims.1 * z) + co.0;
                    buf.extend(chan[base..base + cs].iter().map(|&v| v as f64));
                }
            }
            all.extend_from_slice(&buf);
            meds[k] = median_f64(&mut buf);
        }
        patch_median.push(median_f64(&mut all));
        cell_medians.push(meds);
    }
    PatchBasics { patch_median, cell_medians }
}

/// Median of the 9 cell medians in the plane where the given axis is at `lvl`.
fn plane_median(cell_medians: &[f64; 27], axis: usize, lvl: usize) -> f64 {
    let mut vals = [0.0f64; 9];
    let mut k = 0;
    for cz in 0..3 {
        for cy in 0..3 {
            for cx in 0..3 {
                let pos = [cx, cy, cz];
                if pos[axis] == lvl {
                    vals[k] = cell_medians[cx + 3 * (cy + 3 * cz)];
                    k += 1;
                }
            }
        }
    }
    median_f64(&mut vals)
}

/// Extracts the full feature vector of every patch in layer `r`.
///
/// Deterministic: identical volume and geometry yield bitwise-identical rows.
pub fn extract_layer_features(
    volume: &LabeledVolume,
    pyramid: &Pyramid,
    r: usize,
    schema: &FeatureSchema,
) -> Result<LayerFeatures> {
    if schema.n_chan != volume.n_chan() {
        return Err(Error::SchemaMismatch {
            expected: schema.id.clone(),
            got: format!("volume with {} channels", volume.n_chan()),
        });
    }
    let layer = pyramid.layer(r);
    let n_chan = volume.n_chan();
    let basics = par::map_indexed(layer.len(), |idx| {
        patch_basics(volume, layer.patches[idx].origin, r)
    });

    let n_tot = schema.n_tot();
    let rows = par::map_indexed(layer.len(), |idx| {
        let own = &basics[idx];
        let mut row = Vec::with_capacity(n_tot);
        for c in 0..n_chan {
            let meds = &own.cell_medians[c];
            let (mean, var) = mean_var(meds.as_slice());
            let min = meds.iter().copied().fold(f64::INFINITY, f64::min);
            let max = meds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.push(own.patch_median[c]);
            row.push(mean);
            row.push(var);
            row.push(min);
            row.push(max);
            for axis in 0..3 {
                row.push(plane_median(meds, axis, 2) - plane_median(meds, axis, 0));
            }
        }
        for a in 0..n_chan {
            for b in a + 1..n_chan {
                let ma = own.patch_median[a];
                let mb = own.patch_median[b];
                row.push(ma / (ma + mb + RATIO_EPS));
                row.push(ma - mb);
            }
        }
        let neighbors = layer.neighbors(idx as u32);
        let mut neigh_mean = vec![0.0f64; n_chan];
        let mut neigh_var = vec![0.0f64; n_chan];
        if neighbors.is_empty() {
            neigh_mean.copy_from_slice(&own.patch_median);
        } else {
            for c in 0..n_chan {
                let vals: Vec<f64> = neighbors
                    .iter()
                    .map(|&n| basics[n as usize].patch_median[c])
                    .collect();
                let (m, v) = mean_var(&vals);
                neigh_mean[c] = m;
                neigh_var[c] = v;
            }
        }
        for c in 0..n_chan {
            row.push(neigh_mean[c]);
            row.push(neigh_var[c]);
            row.push(own.patch_median[c] - neigh_mean[c]);
        }
        for a in 0..n_chan {
            for b in a + 1..n_chan {
                row.push(own.patch_median[a] - neigh_mean[b]);
                row.push(own.patch_median[b] - neigh_mean[a]);
            }
        }
        debug_assert_eq!(row.len(), n_tot);
        row
    });

    let mut data = Vec::with_capacity(layer.len() * n_tot);
    for row in rows {
        data.extend(row);
    }
    Ok(LayerFeatures { n_tot, data })
}

/// Features of every layer `1..=n_lay`, indexed by `r - 1`.
pub fn extract_all_features(
    volume: &LabeledVolume,
    pyramid: &Pyramid,
    schema: &FeatureSchema,
) -> Result<Vec<LayerFeatures>> {
    (1..=pyramid.n_lay)
        .map(|r| extract_layer_features(volume, pyramid, r, schema))
        .collect()
}

/// Single-voxel patches carry only their channel intensities.
pub fn voxel_features(volume: &LabeledVolume, position: (usize, usize, usize)) -> Vec<f64> {
    let id = volume.voxel_index(position.0, position.1, position.2);
    volume.channels.iter().map(|c| c[id] as f64).collect()
}

/// Length of the squared expansion: `2 n + C(n, 2)`.
pub fn squared_len(n_sel: usize) -> usize {
    2 * n_sel + n_sel * (n_sel - 1) / 2
}

/// Squared feature vector: originals, then all pairwise products in
/// lexicographic `(i < j)` order, then the elementwise squares.
pub fn square_features(selected: &[f64]) -> Vec<f64> {
    let n = selected.len();
    let mut out = Vec::with_capacity(squared_len(n));
    out.extend_from_slice(selected);
    for i in 0..n {
        for j in i + 1..n {
            out.push(selected[i] * selected[j]);
        }
    }
    for &v in selected {
        out.push(v * v);
    }
    out
}

/// Composition of a squared-feature index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SquaredFeature {
    Original(usize),
    Product(usize, usize),
    Square(usize),
}

/// Decodes an index of the squared layout over `n` base features.
pub fn squared_feature_of(index: usize, n: usize) -> SquaredFeature {
    let pairs = n * (n - 1) / 2;
    if index < n {
        SquaredFeature::Original(index)
    } else if index < n + pairs {
        let mut k = index - n;
        for i in 0..n {
            let row = n - i - 1;
            if k < row {
                return SquaredFeature::Product(i, i + 1 + k);
            }
            k -= row;
        }
        unreachable!("pair index in range");
    } else {
        SquaredFeature::Square(index - n - pairs)
    }
}

/// Encodes a squared-feature kind into its index in the layout over `n`.
pub fn squared_feature_index(feature: SquaredFeature, n: usize) -> usize {
    match feature {
        SquaredFeature::Original(i) => i,
        SquaredFeature::Product(i, j) => {
            debug_assert!(i < j && j < n);
            n + i * (2 * n - i - 1) / 2 + (j - i - 1)
        }
        SquaredFeature::Square(i) => n + n * (n - 1) / 2 + i,
    }
}

/// Maps a squared index local to a tree's subset into the squared layout over
/// all `n_tot` base features. `subset` must be sorted ascending.
pub fn global_squared_index(local: usize, subset: &[usize], n_tot: usize) -> usize {
    let feature = match squared_feature_of(local, subset.len()) {
        SquaredFeature::Original(i) => SquaredFeature::Original(subset[i]),
        SquaredFeature::Product(i, j) => SquaredFeature::Product(subset[i], subset[j]),
        SquaredFeature::Square(i) => SquaredFeature::Square(subset[i]),
    };
    squared_feature_index(feature, n_tot)
}

/// Human-readable name of a squared feature in the global layout.
pub fn squared_feature_name(global: usize, schema: &FeatureSchema) -> String {
    match squared_feature_of(global, schema.n_tot()) {
        SquaredFeature::Original(i) => schema.names[i].clone(),
        SquaredFeature::Product(i, j) => format!("{}*{}", schema.names[i], schema.names[j]),
        SquaredFeature::Square(i) => format!("{}^2", schema.names[i]),
    }
}

/// Evaluates one global squared feature from a full base-feature row.
pub fn eval_global_squared(global: usize, base: &[f64]) -> f64 {
    match squared_feature_of(global, base.len()) {
        SquaredFeature::Original(i) => base[i],
        SquaredFeature::Product(i, j) => base[i] * base[j],
        SquaredFeature::Square(i) => base[i] * base[i],
    }
}

/// Per-element standardization statistics over at least one row.
pub fn fit_normalizer(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut means = vec![0.0f64; d];
    for row in rows {
        for (m, &v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut stds = vec![0.0f64; d];
    for row in rows {
        for (s, (&v, &m)) in stds.iter_mut().zip(row.iter().zip(&means)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut stds {
        *s = (*s / n as f64).sqrt().max(STD_FLOOR);
    }
    (means, stds)
}

pub fn apply_normalizer(row: &[f64], means: &[f64], stds: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(means.iter().zip(stds))
        .map(|(&v, (&m, &s))| (v - m) / s)
        .collect()
}

/// Number of base features each tree receives: `floor(sqrt(n_tot))`.
pub fn n_selected(n_tot: usize) -> usize {
    (n_tot as f64).sqrt().floor() as usize
}

/// Disjoint per-tree feature subsets: one global permutation of `0..n_tot`
/// chunked into `n_weak = n_sel` blocks of `n_sel`, each sorted ascending.
pub fn tree_feature_blocks<R: Rng>(n_tot: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let n_sel = n_selected(n_tot);
    let n_weak = n_sel;
    let mut all: Vec<usize> = (0..n_tot).collect();
    all.shuffle(rng);
    (0..n_weak)
        .map(|w| {
            let mut block = all[w * n_sel..(w + 1) * n_sel].to_vec();
            block.sort_unstable();
            block
        })
        .collect()
}

/// The subset of tree `w` (0-based) under the permutation drawn from `rng`.
pub fn select_tree_features<R: Rng>(n_tot: usize, w: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n_sel = n_selected(n_tot);
    if (w + 1) * n_sel > n_tot {
        return Err(Error::TooManyTrees { n_weak: w + 1, n_sel, n_tot });
    }
    Ok(tree_feature_blocks(n_tot, rng).swap_remove(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn volume_2ch(
        dims: (usize, usize, usize),
        f: impl Fn(usize, usize, usize) -> (f32, f32),
    ) -> LabeledVolume {
        let n = dims.0 * dims.1 * dims.2;
        let mut c0 = vec![0.0f32; n];
        let mut c1 = vec![0.0f32; n];
        for z in 0..dims.2 {
            for y in 0..dims.1 {
                for x in 0..dims.0 {
                    let (a, b) = f(x, y, z);
                    let i = x + dims.0 * (y + dims.1 * z);
                    c0[i] = a;
                    c1[i] = b;
                }
            }
        }
        LabeledVolume::new(dims, vec![c0, c1], None).unwrap()
    }

    #[test]
    fn constant_volume_features() {
        let vol = volume_2ch((12, 12, 12), |_, _, _| (1.0, 1.0));
        let pyr = Pyramid::build(&vol, 2, 1).unwrap();
        let schema = FeatureSchema::new(2);
        assert_eq!(schema.n_tot(), 26);
        let feats = extract_layer_features(&vol, &pyr, 2, &schema).unwrap();
        let row = feats.row(0);
        let name = |n: &str| schema.names.iter().position(|s| s == n).unwrap();
        assert_eq!(row[name("c0.patch_median")], 1.0);
        assert_eq!(row[name("c0.cellmed_var")], 0.0);
        assert_eq!(row[name("c0.contrast_x")], 0.0);
        assert_eq!(row[name("c1.cellmed_min")], 1.0);
        assert!((row[name("c0c1.median_ratio")] - 0.5).abs() < 1e-9);
        assert_eq!(row[name("c0c1.median_diff")], 0.0);
        assert_eq!(row[name("c0.neigh_median_var")], 0.0);
        assert_eq!(row[name("c0.neigh_contrast")], 0.0);
    }

    #[test]
    fn step_volume_contrast_is_axis_specific() {
        // Left half of channel 0 is 0, right half is 10.
        let vol = volume_2ch((12, 12, 12), |x, _, _| if x < 6 { (0.0, 1.0) } else { (10.0, 1.0) });
        let pyr = Pyramid::build(&vol, 2, 1).unwrap();
        let schema = FeatureSchema::new(2);
        let feats = extract_layer_features(&vol, &pyr, 2, &schema).unwrap();
        let layer = pyr.layer(2);
        let name = |n: &str| schema.names.iter().position(|s| s == n).unwrap();
        // The patch at x-origin 3 straddles the step.
        let idx = layer.index_of_origin((3, 0, 0)).unwrap() as usize;
        let row = feats.row(idx);
        assert!(row[name("c0.contrast_x")] > 0.0);
        assert_eq!(row[name("c0.contrast_y")], 0.0);
        assert_eq!(row[name("c0.contrast_z")], 0.0);
    }

    #[test]
    fn extraction_is_deterministic() {
        let vol = volume_2ch((12, 12, 12), |x, y, z| ((x * y + z) as f32, (x + 2 * z) as f32));
        let pyr = Pyramid::build(&vol, 2, 1).unwrap();
        let schema = FeatureSchema::new(2);
        let a = extract_layer_features(&vol, &pyr, 1, &schema).unwrap();
        let b = extract_layer_features(&vol, &pyr, 1, &schema).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn square_features_examples() {
        assert_eq!(square_features(&[2.0, 3.0]), vec![2.0, 3.0, 6.0, 4.0, 9.0]);
        assert_eq!(squared_len(4), 14);
        assert_eq!(square_features(&[0.0, 0.0, 0.0]), vec![0.0; squared_len(3)]);
        for n in 1..8 {
            assert_eq!(square_features(&vec![1.0; n]).len(), squared_len(n));
        }
    }

    #[test]
    fn squared_index_roundtrip() {
        for n in 1..10usize {
            for idx in 0..squared_len(n) {
                let f = squared_feature_of(idx, n);
                assert_eq!(squared_feature_index(f, n), idx, "n={n} idx={idx}");
            }
        }
    }

    #[test]
    fn global_mapping_consistent_with_values() {
        let base: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let subset = vec![1usize, 4, 7];
        let selected: Vec<f64> = subset.iter().map(|&i| base[i]).collect();
        let squared = square_features(&selected);
        for (local, &v) in squared.iter().enumerate() {
            let g = global_squared_index(local, &subset, base.len());
            assert_eq!(eval_global_squared(g, &base), v);
        }
    }

    #[test]
    fn normalizer_examples() {
        let rows = vec![vec![0.0, 5.0], vec![2.0, 5.0]];
        let (means, stds) = fit_normalizer(&rows);
        assert_eq!(means, vec![1.0, 5.0]);
        assert_eq!(stds[0], 1.0);
        assert_eq!(stds[1], STD_FLOOR);
        assert_eq!(apply_normalizer(&rows[0], &means, &stds)[0], -1.0);
        assert_eq!(apply_normalizer(&rows[1], &means, &stds)[0], 1.0);
        assert_eq!(apply_normalizer(&rows[0], &means, &stds)[1], 0.0);

        // Applying the fit to its own inputs recenters each column.
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 * 1.3 - 4.0, (i * i) as f64])
            .collect();
        let (means, stds) = fit_normalizer(&rows);
        let mut sums = vec![0.0; 2];
        for row in &rows {
            let n = apply_normalizer(row, &means, &stds);
            sums[0] += n[0];
            sums[1] += n[1];
        }
        assert!(sums.iter().all(|s| s.abs() / 20.0 < 1e-12));
    }

    #[test]
    fn tree_blocks_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let blocks = tree_feature_blocks(144, &mut rng);
        assert_eq!(blocks.len(), 12);
        let mut union = std::collections::BTreeSet::new();
        for b in &blocks {
            assert_eq!(b.len(), 12);
            assert!(b.windows(2).all(|w| w[0] < w[1]));
            for &i in b {
                assert!(union.insert(i), "duplicate feature {i}");
            }
        }
        assert_eq!(union.len(), 144);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_tree_features(1, 0, &mut rng).unwrap(), vec![0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            select_tree_features(4, 2, &mut rng),
            Err(Error::TooManyTrees { .. })
        ));
    }
}
