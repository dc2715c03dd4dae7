use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::MultiPhaseSample;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

const ZSCORE_EPS: f64 = 1e-12;

fn dims3(t: &Tensor<f32>, op: &'static str) -> Result<[usize; 3]> {
    match *t.shape() {
        [d, h, w] => Ok([d, h, w]),
        _ => Err(shape_err(op, format!("expected [D,H,W], got {:?}", t.shape()))),
    }
}

/// Source coordinate and blend weight along one axis (half-voxel centres, edge clamped).
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, x - lo as f64)
        })
        .collect()
}

/// Trilinear resampling of a `[D, H, W]` volume.
pub fn resample_trilinear(t: &Tensor<f32>, target: [usize; 3]) -> Result<Tensor<f32>> {
    let src = dims3(t, "resample")?;
    if target.contains(&0) {
        return Err(shape_err("resample", format!("empty target {target:?}")));
    }
    if src == target {
        return Ok(t.clone());
    }
    let taps = [0, 1, 2].map(|a| axis_taps(src[a], target[a]));
    let x = t.data();
    let at = |z: usize, y: usize, w: usize| x[(z * src[1] + y) * src[2] + w] as f64;
    let mut out = Vec::with_capacity(target.iter().product());
    for &(z0, z1, fz) in &taps[0] {
        for &(y0, y1, fy) in &taps[1] {
            for &(x0, x1, fx) in &taps[2] {
                let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f;
                let plane = |z| lerp(lerp(at(z, y0, x0), at(z, y0, x1), fx), lerp(at(z, y1, x0), at(z, y1, x1), fx), fy);
                out.push(lerp(plane(z0), plane(z1), fz) as f32);
            }
        }
    }
    Tensor::new(target.to_vec(), out)
}

/// `(x - mean) / std` over the whole volume; a constant volume maps to zeros.
pub fn zscore(t: &Tensor<f32>) -> Tensor<f32> {
    let n = t.len() as f64;
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / var.sqrt().max(ZSCORE_EPS);
    t.map(|v| ((v as f64 - mean) * inv) as f32)
}

/// Resample every phase to `target` and z-score each phase independently.
pub fn preprocess(sample: &MultiPhaseSample, target: [usize; 3]) -> Result<MultiPhaseSample> {
    let src = sample.shape();
    let mut volumes = sample.volumes.clone();
    for v in &mut volumes {
        *v = zscore(&resample_trilinear(v, target)?);
    }
    let spacing = [0, 1, 2].map(|a| sample.spacing[a] * src[a] as f64 / target[a] as f64);
    Ok(MultiPhaseSample {
        volumes,
        spacing,
        ..sample.clone()
    })
}

/// Mirror a `[D, H, W]` volume along `axis` (0 = depth).
pub fn flip_axis(t: &Tensor<f32>, axis: usize) -> Result<Tensor<f32>> {
    let [d, h, w] = dims3(t, "flip")?;
    if axis > 2 {
        return Err(Error::OutOfRange { index: axis, len: 3 });
    }
    let x = t.data();
    let out = Tensor::from_fn(vec![d, h, w], |i| {
        let (mut z, mut y, mut c) = (i / (h * w), (i / w) % h, i % w);
        match axis {
            0 => z = d - 1 - z,
            1 => y = h - 1 - y,
            _ => c = w - 1 - c,
        }
        x[(z * h + y) * w + c]
    });
    Ok(out)
}

fn draw_flips(rng: &mut ChaCha8Rng) -> [bool; 3] {
    [0, 1, 2].map(|_| rng.random_bool(0.5))
}

/// The per-axis flip decisions [`augment`] makes for `seed`.
pub fn augment_flips(seed: u64) -> [bool; 3] {
    draw_flips(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Training-time augmentation: each spatial axis is flipped with probability ½ (the same
/// decision for all phases), then Gaussian noise of `noise_sigma` is added per voxel.
pub fn augment(sample: &MultiPhaseSample, noise_sigma: f64, seed: u64) -> Result<MultiPhaseSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flips = draw_flips(&mut rng);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let mut volumes = sample.volumes.clone();
    for v in &mut volumes {
        for (axis, _) in flips.iter().enumerate().filter(|(_, &f)| f) {
            *v = flip_axis(v, axis)?;
        }
        if noise_sigma > 0.0 {
            for x in v.data_mut() {
                *x += noise.sample(&mut rng) as f32;
            }
        }
    }
    Ok(MultiPhaseSample {
        volumes,
        ..sample.clone()
    })
}
