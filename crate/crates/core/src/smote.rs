//! Per-node multiclass class balancing: synthetic minority oversampling by
//! convex interpolation between same-class nearest neighbors.
//!
//! Every minority class is raised to the majority count. Base samples are
//! drawn uniformly with replacement; each synthetic point interpolates its
//! base with one of the base's nearest realistic same-class neighbors, using
//! the tree-specific weight `w / (n_weak + 1)` so different trees synthesize
//! different points. Synthetic samples are marked and must never propagate to
//! finer resolution layers.

use rand::Rng;

use crate::error::{Error, Result};

/// Balancing targets for one node.
#[derive(Debug, Clone)]
pub struct BalancePlan {
    pub n_clas: u16,
    /// 1-based majority class (ties to the smallest id).
    pub majority_class: u16,
    /// Realistic per-class counts.
    pub counts: Vec<usize>,
    /// `100 * n_majority / n_c` for present classes, 0 for absent ones.
    pub rates_percent: Vec<f64>,
    /// Nearest-neighbor pool size per class (`round(rate / 100)`, clamped to
    /// the class population); 0 when no synthesis is needed or possible.
    pub neighbor_pool: Vec<usize>,
}

impl BalancePlan {
    /// Synthetic samples needed to raise class `c` to the majority count.
    pub fn deficit(&self, c: u16) -> usize {
        self.counts[(self.majority_class - 1) as usize] - self.counts[(c - 1) as usize]
    }
}

/// One input sample for balancing: selected (unsquared) features, label and
/// voxelwise label heterogeneity.
#[derive(Debug, Clone)]
pub struct SmoteSample {
    pub features: Vec<f64>,
    pub label: u16,
    pub heterogeneity: f64,
}

/// Where a balanced sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleOrigin {
    /// Index into the realistic input.
    Realistic(usize),
    /// Interpolated between two realistic inputs; `neighbor == base` marks a
    /// degenerate single-sample class that was duplicated instead.
    Synthetic { base: usize, neighbor: usize },
}

#[derive(Debug, Clone)]
pub struct BalancedSample {
    pub features: Vec<f64>,
    pub label: u16,
    pub heterogeneity: f64,
    pub origin: SampleOrigin,
}

impl BalancedSample {
    pub fn is_synthetic(&self) -> bool {
        matches!(self.origin, SampleOrigin::Synthetic { .. })
    }
}

/// Computes rates and neighbor pools from the realistic label distribution.
pub fn plan_balancing(labels: &[u16], n_clas: u16) -> Result<BalancePlan> {
    let mut counts = vec![0usize; n_clas as usize];
    for &l in labels {
        counts[(l - 1) as usize] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::SingleClass);
    }
    let majority = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let n_major = counts[majority];
    let mut rates = vec![0.0f64; n_clas as usize];
    let mut pools = vec![0usize; n_clas as usize];
    for c in 0..n_clas as usize {
        if counts[c] == 0 {
            continue;
        }
        let ratio = n_major as f64 / counts[c] as f64;
        rates[c] = 100.0 * ratio;
        if counts[c] < n_major && counts[c] >= 2 {
            pools[c] = (ratio.round() as usize).clamp(1, counts[c] - 1);
        }
    }
    Ok(BalancePlan {
        n_clas,
        majority_class: (majority + 1) as u16,
        counts,
        rates_percent: rates,
        neighbor_pool: pools,
    })
}

/// Raises every minority class to the majority count.
///
/// Realistic samples come first, in input order; synthetics follow grouped by
/// ascending class. Bit-reproducible for a fixed rng.
pub fn smote_balance<R: Rng>(
    samples: &[SmoteSample],
    plan: &BalancePlan,
    tree_index: usize,
    n_weak: usize,
    rng: &mut R,
) -> Vec<BalancedSample> {
    debug_assert!(tree_index >= 1 && tree_index <= n_weak);
    let m = tree_index as f64 / (n_weak as f64 + 1.0);
    let mut out: Vec<BalancedSample> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| BalancedSample {
            features: s.features.clone(),
            label: s.label,
            heterogeneity: s.heterogeneity,
            origin: SampleOrigin::Realistic(i),
        })
        .collect();

    for c in 1..=plan.n_clas {
        let ci = (c - 1) as usize;
        if plan.counts[ci] == 0 || c == plan.majority_class {
            continue;
        }
        let deficit = plan.deficit(c);
        if deficit == 0 {
            continue;
        }
        let members: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == c).collect();
        if members.len() == 1 {
            // Nothing to interpolate with; duplicate the lone sample.
            let base = members[0];
            for _ in 0..deficit {
                out.push(BalancedSample {
                    features: samples[base].features.clone(),
                    label: c,
                    heterogeneity: samples[base].heterogeneity,
                    origin: SampleOrigin::Synthetic { base, neighbor: base },
                });
            }
            continue;
        }
        let k = plan.neighbor_pool[ci].max(1);
        let neighbor_lists = nearest_neighbors(samples, &members, k);
        for _ in 0..deficit {
            let pick = rng.gen_range(0..members.len());
            let base = members[pick];
            let pool = &neighbor_lists[pick];
            let neighbor = pool[rng.gen_range(0..pool.len())];
            out.push(interpolate(samples, base, neighbor, m, c));
        }
    }
    out
}

fn interpolate(
    samples: &[SmoteSample],
    base: usize,
    neighbor: usize,
    m: f64,
    label: u16,
) -> BalancedSample {
    let fb = &samples[base].features;
    let fn_ = &samples[neighbor].features;
    let features = fb
        .iter()
        .zip(fn_)
        .map(|(&a, &b)| {
            // Clamp out any last-ulp excursion past the segment ends.
            (m * a + (1.0 - m) * b).clamp(a.min(b), a.max(b))
        })
        .collect();
    let ha = samples[base].heterogeneity;
    let hb = samples[neighbor].heterogeneity;
    BalancedSample {
        features,
        label,
        heterogeneity: (m * ha + (1.0 - m) * hb).clamp(ha.min(hb), ha.max(hb)),
        origin: SampleOrigin::Synthetic { base, neighbor },
    }
}

/// Exact k-nearest neighbors among `members`, per member, excluding itself.
/// Distance ties break on the smaller index.
fn nearest_neighbors(samples: &[SmoteSample], members: &[usize], k: usize) -> Vec<Vec<usize>> {
    members
        .iter()
        .map(|&i| {
            let mut dists: Vec<(f64, usize)> = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| {
                    let d: f64 = samples[i]
                        .features
                        .iter()
                        .zip(&samples[j].features)
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum();
                    (d, j)
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dists.truncate(k);
            dists.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(f: &[f64], label: u16, h: f64) -> SmoteSample {
        SmoteSample { features: f.to_vec(), label, heterogeneity: h }
    }

    #[test]
    fn plan_examples() {
        // 100 vs 50: rate 200% and a deficit of one synthetic per realistic.
        let mut labels = vec![1u16; 100];
        labels.extend(vec![2u16; 50]);
        let plan = plan_balancing(&labels, 2).unwrap();
        assert_eq!(plan.majority_class, 1);
        assert_eq!(plan.rates_percent[1], 200.0);
        assert_eq!(plan.deficit(2), 50);
        assert_eq!(plan.neighbor_pool[1], 2);

        // Equal counts: no synthesis anywhere.
        let labels: Vec<u16> = (0..40).map(|i| (i % 2 + 1) as u16).collect();
        let plan = plan_balancing(&labels, 2).unwrap();
        assert_eq!(plan.deficit(1), 0);
        assert_eq!(plan.deficit(2), 0);
        assert_eq!(plan.neighbor_pool, vec![0, 0]);

        // 90/30/30: both minorities at 300%.
        let mut labels = vec![1u16; 90];
        labels.extend(vec![2u16; 30]);
        labels.extend(vec![3u16; 30]);
        let plan = plan_balancing(&labels, 3).unwrap();
        assert_eq!(plan.rates_percent[1], 300.0);
        assert_eq!(plan.rates_percent[2], 300.0);

        assert!(matches!(plan_balancing(&vec![1u16; 5], 2), Err(Error::SingleClass)));
    }

    #[test]
    fn interpolation_weight_and_arithmetic() {
        // w = 1 of 3 trees: m = 0.25; synthetic = 0.25 base + 0.75 neighbor.
        let samples = vec![
            sample(&[0.0, 0.0], 2, 0.0),
            sample(&[4.0, 8.0], 2, 2.0),
            sample(&[9.0, 9.0], 1, 0.0),
            sample(&[9.5, 9.0], 1, 0.0),
            sample(&[9.0, 9.5], 1, 0.0),
        ];
        let labels: Vec<u16> = samples.iter().map(|s| s.label).collect();
        let plan = plan_balancing(&labels, 2).unwrap();
        assert_eq!(plan.deficit(2), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = smote_balance(&samples, &plan, 1, 3, &mut rng);
        assert_eq!(out.len(), 6);
        let synth = out.last().unwrap();
        assert!(synth.is_synthetic());
        assert_eq!(synth.label, 2);
        // Whichever direction was drawn, the point is the 1:3 mix of the two.
        let expect_a = [0.25 * 4.0, 0.25 * 8.0];
        let expect_b = [0.75 * 4.0, 0.75 * 8.0];
        assert!(
            synth.features == expect_a || synth.features == expect_b,
            "{:?}",
            synth.features
        );
        assert!(synth.heterogeneity == 0.5 || synth.heterogeneity == 1.5);
    }

    #[test]
    fn balanced_input_passes_through() {
        let samples = vec![
            sample(&[0.0], 1, 0.0),
            sample(&[1.0], 2, 0.0),
            sample(&[2.0], 1, 0.0),
            sample(&[3.0], 2, 0.0),
        ];
        let labels: Vec<u16> = samples.iter().map(|s| s.label).collect();
        let plan = plan_balancing(&labels, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = smote_balance(&samples, &plan, 2, 4, &mut rng);
        assert_eq!(out.len(), 4);
        for (i, b) in out.iter().enumerate() {
            assert_eq!(b.origin, SampleOrigin::Realistic(i));
            assert_eq!(b.features, samples[i].features);
        }
    }

    #[test]
    fn counts_equalize_and_convexity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut samples = Vec::new();
        for i in 0..60 {
            samples.push(sample(&[i as f64, -(i as f64)], 1, 0.0));
        }
        for i in 0..17 {
            samples.push(sample(&[100.0 + i as f64, i as f64 * 0.5], 2, 1.0));
        }
        for i in 0..9 {
            samples.push(sample(&[-50.0 - i as f64, 3.0], 3, 2.0));
        }
        let labels: Vec<u16> = samples.iter().map(|s| s.label).collect();
        let plan = plan_balancing(&labels, 3).unwrap();
        let out = smote_balance(&samples, &plan, 2, 5, &mut rng);
        let mut counts = [0usize; 3];
        for b in &out {
            counts[(b.label - 1) as usize] += 1;
        }
        assert_eq!(counts, [60, 60, 60]);

        let m = 2.0 / 6.0;
        for b in &out {
            if let SampleOrigin::Synthetic { base, neighbor } = b.origin {
                assert_ne!(base, neighbor);
                assert_eq!(samples[base].label, b.label);
                assert_eq!(samples[neighbor].label, b.label);
                for ((&v, &a), &nb) in
                    b.features.iter().zip(&samples[base].features).zip(&samples[neighbor].features)
                {
                    assert!(v >= a.min(nb) && v <= a.max(nb));
                    let expect = (m * a + (1.0 - m) * nb).clamp(a.min(nb), a.max(nb));
                    assert_eq!(v, expect);
                }
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces_bitwise() {
        let samples = vec![
            sample(&[0.0, 1.0], 1, 0.0),
            sample(&[1.0, 1.5], 1, 0.0),
            sample(&[2.0, 0.5], 1, 0.0),
            sample(&[5.0, 5.0], 2, 1.0),
            sample(&[6.0, 5.5], 2, 1.0),
        ];
        let labels: Vec<u16> = samples.iter().map(|s| s.label).collect();
        let plan = plan_balancing(&labels, 2).unwrap();
        let a = smote_balance(&samples, &plan, 1, 2, &mut ChaCha8Rng::seed_from_u64(7));
        let b = smote_balance(&samples, &plan, 1, 2, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.origin, y.origin);
        }
    }

    #[test]
    fn lone_minority_sample_is_duplicated() {
        let samples = vec![
            sample(&[0.0], 1, 0.0),
            sample(&[1.0], 1, 0.0),
            sample(&[2.0], 1, 0.0),
            sample(&[9.0], 2, 1.0),
        ];
        let labels: Vec<u16> = samples.iter().map(|s| s.label).collect();
        let plan = plan_balancing(&labels, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = smote_balance(&samples, &plan, 1, 1, &mut rng);
        let synths: Vec<_> = out.iter().filter(|b| b.is_synthetic()).collect();
        assert_eq!(synths.len(), 2);
        for s in synths {
            assert_eq!(s.origin, SampleOrigin::Synthetic { base: 3, neighbor: 3 });
            assert_eq!(s.features, samples[3].features);
        }
    }
}
