use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{MultiPhaseSample, PhantomSpec};
use crate::error::{Error, Result};
use crate::par;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

/// Noise-free geometry of one phantom: where the lesion is and what lies behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct LesionLayout {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    /// Soft lesion membership in `[0, 1]` per voxel.
    pub membership: Vec<f64>,
    /// Background intensity per voxel, shared by all phases.
    pub background: Vec<f64>,
    /// Cyclic phase shift applied to the class curve.
    pub shift: usize,
}

impl LesionLayout {
    /// Lesion intensity per phase after the cyclic shift.
    pub fn curve(&self, base: &[f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|p| base[(p + self.shift) % 3])
    }
}

fn layout_with(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> LesionLayout {
    let dims = spec.shape.map(|d| d as f64);
    let radii = [0, 1, 2].map(|_| rng.random_range(spec.radius_min..=spec.radius_max));
    let center = [0, 1, 2].map(|a| {
        let (lo, hi) = (radii[a], dims[a] - 1.0 - radii[a]);
        if lo < hi {
            rng.random_range(lo..=hi)
        } else {
            (dims[a] - 1.0) / 2.0
        }
    });
    let waves: Vec<([f64; 3], f64)> = (0..3)
        .map(|_| {
            let k = [0, 1, 2].map(|a| {
                let f: f64 = rng.random_range(0.3..1.5);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                2.0 * PI * sign * f / dims[a]
            });
            (k, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let shift = if spec.cyclic_curves { rng.random_range(0..3) } else { 0 };
    let mean_r = radii.iter().sum::<f64>() / 3.0;
    let [d, h, w] = spec.shape;
    let n = d * h * w;
    let mut membership = Vec::with_capacity(n);
    let mut background = Vec::with_capacity(n);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = [z as f64, y as f64, x as f64];
                let rho = (0..3).map(|a| ((p[a] - center[a]) / radii[a]).powi(2)).sum::<f64>().sqrt();
                membership.push(1.0 / (1.0 + (-(1.0 - rho) * mean_r).exp()));
                let tex: f64 = waves.iter().map(|(k, phi)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phi).cos()).sum();
                background.push(1.0 + spec.texture_amplitude * tex / 3.0);
            }
        }
    }
    LesionLayout {
        center,
        radii,
        membership,
        background,
        shift,
    }
}

/// The noise-free layout of the sample generated from `sample_seed`.
pub fn lesion_layout(spec: &PhantomSpec, sample_seed: u64) -> LesionLayout {
    layout_with(spec, &mut ChaCha8Rng::seed_from_u64(sample_seed))
}

/// One phantom of class `label`, fully determined by `sample_seed`.
pub fn generate_one(spec: &PhantomSpec, label: u8, id: String, sample_seed: u64) -> Result<MultiPhaseSample> {
    spec.validate()?;
    if label > 1 {
        return Err(Error::ConfigInvalid(format!("label must be 0 or 1, got {label}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let layout = layout_with(spec, &mut rng);
    let curve = layout.curve(&spec.curves[label as usize]);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let volumes = [0, 1, 2].map(|p| {
        let data = layout
            .background
            .iter()
            .zip(&layout.membership)
            .map(|(&bg, &m)| (bg + m * (curve[p] - bg) + noise.sample(&mut rng)) as f32)
            .collect();
        Tensor::new(spec.shape.to_vec(), data).expect("shape matches voxel count")
    });
    Ok(MultiPhaseSample {
        volumes,
        label,
        spacing: spec.spacing,
        id,
        seed: sample_seed,
    })
}

/// `n` phantoms with class counts from [`PhantomSpec::class_counts`] in seeded random order.
/// Sample `i` uses seed `derive_seed(seed, [1, i])`, so the output does not depend on threading.
pub fn generate(spec: &PhantomSpec, n: usize, seed: u64) -> Result<Vec<MultiPhaseSample>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::TooFewSamples("generate needs n >= 1".into()));
    }
    let (zeros, ones) = spec.class_counts(n);
    let mut labels: Vec<u8> = std::iter::repeat_n(0, zeros).chain(std::iter::repeat_n(1, ones)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0])));
    par::map_indexed(n, |i| generate_one(spec, labels[i], format!("{i:04}"), derive_seed(seed, &[1, i as u64])))
        .into_iter()
        .collect()
}
