//! Synthetic labeled volume generation.
//!
//! Two presets: `blocks` partitions the volume into a grid of cubic blocks
//! with one class per block (cycled) and class-specific channel means;
//! `concentric` nests a sphere inside the background so that the two classes
//! differ only in radial extent. In the concentric preset the channel pair of
//! a voxel points along its in-plane angle with magnitude proportional to its
//! 3-D radius, so class membership is a disk-versus-annulus decision in the
//! intensity plane: linearly inseparable, quadratically clean.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::LabeledVolume;

/// Edge length of one labeled block in the `blocks` preset.
pub const BLOCK_SIDE: usize = 12;
/// Sphere radius as a fraction of the smallest dimension; chosen so the
/// inside and outside voxel counts are close to balanced.
pub const CONCENTRIC_RADIUS_FRACTION: f64 = 0.492;
/// Intensity magnitude at the concentric class boundary.
pub const CONCENTRIC_AMPLITUDE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Blocks,
    Concentric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dims: (usize, usize, usize),
    pub n_clas: u16,
    pub preset: Preset,
    /// Standard deviation of the additive Gaussian channel noise.
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (x, y, z) = self.dims;
        if x == 0 || y == 0 || z == 0 {
            return Err(Error::BadConfig("zero volume dimension".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::BadConfig("noise must be nonnegative".into()));
        }
        match self.preset {
            Preset::Concentric if self.n_clas != 2 => {
                Err(Error::BadConfig("concentric preset is two-class".into()))
            }
            _ if self.n_clas == 0 => Err(Error::BadConfig("need at least one class".into())),
            _ => Ok(()),
        }
    }
}

/// Generates one two-channel labeled volume. Deterministic in the seed.
pub fn generate(config: &SynthConfig) -> Result<LabeledVolume> {
    config.validate()?;
    match config.preset {
        Preset::Blocks => generate_blocks(config),
        Preset::Concentric => generate_concentric(config),
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn generate_blocks(config: &SynthConfig) -> Result<LabeledVolume> {
    let (dx, dy, dz) = config.dims;
    let n = dx * dy * dz;
    let mut c0 = vec![0.0f32; n];
    let mut c1 = vec![0.0f32; n];
    let mut labels = vec![0u16; n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = config.n_clas as usize;
    let mut i = 0;
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                let class = ((x / BLOCK_SIDE + y / BLOCK_SIDE + z / BLOCK_SIDE) % k) as u16 + 1;
                let mean0 = 2.0 * class as f64;
                let mean1 = 2.0 * (config.n_clas - class + 1) as f64;
                c0[i] = (mean0 + config.noise * gaussian(&mut rng)) as f32;
                c1[i] = (mean1 + config.noise * gaussian(&mut rng)) as f32;
                labels[i] = class;
                i += 1;
            }
        }
    }
    LabeledVolume::new(config.dims, vec![c0, c1], Some(labels))
}

fn generate_concentric(config: &SynthConfig) -> Result<LabeledVolume> {
    let (dx, dy, dz) = config.dims;
    let n = dx * dy * dz;
    let radius = CONCENTRIC_RADIUS_FRACTION * dx.min(dy).min(dz) as f64;
    let center = ((dx as f64 - 1.0) / 2.0, (dy as f64 - 1.0) / 2.0, (dz as f64 - 1.0) / 2.0);
    let mut c0 = vec![0.0f32; n];
    let mut c1 = vec![0.0f32; n];
    let mut labels = vec![0u16; n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut i = 0;
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                let ox = x as f64 - center.0;
                let oy = y as f64 - center.1;
                let oz = z as f64 - center.2;
                let r3 = (ox * ox + oy * oy + oz * oz).sqrt();
                let phi = oy.atan2(ox);
                let magnitude = CONCENTRIC_AMPLITUDE * r3 / radius;
                c0[i] = (magnitude * phi.cos() + config.noise * gaussian(&mut rng)) as f32;
                c1[i] = (magnitude * phi.sin() + config.noise * gaussian(&mut rng)) as f32;
                labels[i] = if r3 <= radius { 2 } else { 1 };
                i += 1;
            }
        }
    }
    LabeledVolume::new(config.dims, vec![c0, c1], Some(labels))
}
