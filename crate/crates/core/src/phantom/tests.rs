use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn tiny_spec() -> PhantomSpec {
    PhantomSpec {
        shape: [4, 8, 8],
        radius_min: 1.5,
        radius_max: 1.9,
        ..PhantomSpec::default()
    }
}

/// 1-Wasserstein distance between two empirical distributions via a fine shared histogram.
fn wasserstein_hist(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in xs {
            h[(((x - lo) / width) as usize).min(bins - 1)] += 1.0 / xs.len() as f64;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    let (mut ca, mut cb, mut w) = (0.0, 0.0, 0.0);
    for i in 0..bins {
        ca += ha[i];
        cb += hb[i];
        w += (ca - cb).abs() * width;
    }
    w
}

/// Mean intensity per phase over voxels whose lesion membership exceeds ½.
fn lesion_curve(spec: &PhantomSpec, s: &MultiPhaseSample) -> [f64; 3] {
    let layout = lesion_layout(spec, s.seed);
    [0, 1, 2].map(|p| {
        let (sum, n) = s.volumes[p]
            .data()
            .iter()
            .zip(&layout.membership)
            .filter(|(_, &m)| m > 0.5)
            .fold((0.0, 0usize), |(acc, n), (&v, _)| (acc + v as f64, n + 1));
        sum / n as f64
    })
}

#[test]
fn generation_is_deterministic() {
    let spec = tiny_spec();
    let a = generate(&spec, 12, 7).unwrap();
    let b = generate(&spec, 12, 7).unwrap();
    assert_eq!(a, b);
    let c = generate(&spec, 12, 8).unwrap();
    assert_ne!(a, c);
}

#[test]
fn generation_matches_per_sample_seeds() {
    let spec = tiny_spec();
    let all = generate(&spec, 6, 3).unwrap();
    for (i, s) in all.iter().enumerate() {
        let seed = crate::seed::derive_seed(3, &[1, i as u64]);
        assert_eq!(s, &generate_one(&spec, s.label, format!("{i:04}"), seed).unwrap());
    }
}

#[test]
fn class_ratio_two_to_one() {
    let spec = PhantomSpec::default();
    assert_eq!(spec.class_counts(270), (180, 90));
    let samples = generate(&tiny_spec(), 270, 1).unwrap();
    let ones = samples.iter().filter(|s| s.label == 1).count();
    assert_eq!((samples.len() - ones, ones), (180, 90));
}

#[test]
fn zero_samples_rejected() {
    assert!(matches!(generate(&tiny_spec(), 0, 1), Err(Error::TooFewSamples(_))));
}

#[test]
fn spec_validation() {
    let mut spec = PhantomSpec::default();
    spec.radius_max = 4.0;
    assert!(spec.validate().is_err());
    let mut spec = PhantomSpec::default();
    spec.curves[1] = spec.curves[0];
    assert!(spec.validate().is_err());
}

#[test]
fn temporal_only_marginals_match_but_curves_differ() {
    let spec = PhantomSpec::preset(Preset::TemporalOnly);
    let samples = generate(&spec, 200, 11).unwrap();
    for p in 0..3 {
        let pool = |label| -> Vec<f64> {
            samples
                .iter()
                .filter(|s| s.label == label)
                .flat_map(|s| s.volumes[p].data().iter().map(|&v| v as f64))
                .collect()
        };
        let w = wasserstein_hist(&pool(0), &pool(1), 2000);
        assert!(w < 0.05, "phase {p}: W1 {w}");
    }
    let curves: Vec<(u8, [f64; 3])> = samples.iter().map(|s| (s.label, lesion_curve(&spec, s))).collect();
    let nearest_other = |&(label, c): &(u8, [f64; 3])| {
        curves
            .iter()
            .filter(|(l, _)| *l != label)
            .map(|(_, o)| (0..3).map(|p| (c[p] - o[p]).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let mean = curves.iter().map(nearest_other).sum::<f64>() / curves.len() as f64;
    assert!(mean > 0.3, "temporal-curve distance {mean}");
}

#[test]
fn default_preset_marginals_differ() {
    let spec = PhantomSpec::default();
    let samples = generate(&spec, 60, 2).unwrap();
    let pool = |label| -> Vec<f64> {
        samples
            .iter()
            .filter(|s| s.label == label)
            .flat_map(|s| s.volumes[0].data().iter().map(|&v| v as f64))
            .collect()
    };
    assert!(wasserstein_hist(&pool(0), &pool(1), 2000) > 0.02);
}

#[test]
fn regression_recovers_curves() {
    // Least squares of I = a (1 - m) + c m over pooled voxels, noise-free.
    let spec = PhantomSpec {
        noise_sigma: 0.0,
        ..PhantomSpec::default()
    };
    for label in 0..2u8 {
        let samples: Vec<_> = (0..20)
            .map(|i| generate_one(&spec, label, i.to_string(), 100 + i).unwrap())
            .collect();
        for p in 0..3 {
            let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for s in &samples {
                let m = lesion_layout(&spec, s.seed).membership;
                for (&v, &m) in s.volumes[p].data().iter().zip(&m) {
                    let (x1, x2, y) = (1.0 - m, m, v as f64);
                    s11 += x1 * x1;
                    s12 += x1 * x2;
                    s22 += x2 * x2;
                    r1 += x1 * y;
                    r2 += x2 * y;
                }
            }
            let c = (s11 * r2 - s12 * r1) / (s11 * s22 - s12 * s12);
            let want = spec.curves[label as usize][p];
            assert!((c - want).abs() / want < 0.05, "class {label} phase {p}: {c} vs {want}");
        }
    }
}

#[test]
fn lesion_is_strict_subset() {
    let spec = PhantomSpec::default();
    for seed in 0..10 {
        let m = lesion_layout(&spec, seed).membership;
        let inside = m.iter().filter(|&&v| v > 0.5).count();
        assert!(inside > 0 && inside < m.len());
    }
}

#[test]
fn cyclic_shift_rotates_curve() {
    let spec = PhantomSpec::preset(Preset::TemporalOnly);
    let shifts: std::collections::HashSet<usize> = (0..30).map(|s| lesion_layout(&spec, s).shift).collect();
    assert_eq!(shifts.len(), 3);
    let layout = LesionLayout {
        shift: 1,
        ..lesion_layout(&spec, 0)
    };
    assert_eq!(layout.curve(&[1.0, 2.0, 3.0]), [2.0, 3.0, 1.0]);
}

#[test]
fn volume_round_trip_and_size() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(&tiny_spec(), 1, 5).unwrap().remove(0);
    let path = dir.path().join("a.mpv");
    write_volume(&s, &path).unwrap();
    let back = read_volume(&path).unwrap();
    assert_eq!(back, s);
    for (a, b) in back.volumes.iter().zip(&s.volumes) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let bytes = std::fs::read(&path).unwrap();
    let text = String::from_utf8_lossy(&bytes);
    let [d, h, w] = s.shape();
    assert!(text.contains(&format!("bytes {}\n", 4 * 3 * d * h * w)));
    assert!(text.contains("precision f32le\n"));
}

#[test]
fn truncated_volume_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(&tiny_spec(), 1, 5).unwrap().remove(0);
    let path = dir.path().join("a.mpv");
    write_volume(&s, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 3, 20, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert!(matches!(err, Error::BadMagic(_) | Error::ShapeOverflow(_)), "cut {cut}: {err}");
    }
    let mut junk = bytes.clone();
    junk[0] = b'X';
    std::fs::write(&path, &junk).unwrap();
    assert!(matches!(read_volume(&path), Err(Error::BadMagic(_))));
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate(&tiny_spec(), 5, 9).unwrap();
    let entries = write_dataset(dir.path(), &samples).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap(), entries);
    let text = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    assert_eq!(text.lines().next().unwrap(), format!("0000 {} sample_0000.mpv", samples[0].label));
    let (_, back) = load_dataset(dir.path()).unwrap();
    assert_eq!(back, samples);
}

#[test]
fn preprocess_constant_is_zero() {
    let mut s = generate(&tiny_spec(), 1, 1).unwrap().remove(0);
    for v in &mut s.volumes {
        v.data_mut().iter_mut().for_each(|x| *x = 3.25);
    }
    let out = preprocess(&s, s.shape()).unwrap();
    assert!(out.volumes.iter().all(|v| v.data().iter().all(|&x| x == 0.0)));
}

#[test]
fn preprocess_moments() {
    let s = generate(&tiny_spec(), 1, 4).unwrap().remove(0);
    let out = preprocess(&s, [8, 16, 16]).unwrap();
    assert_eq!(out.shape(), [8, 16, 16]);
    for v in &out.volumes {
        let n = v.len() as f64;
        let mean = v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = v.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3, "mean {mean} var {var}");
    }
    assert_eq!(out.spacing, [s.spacing[0] / 2.0, s.spacing[1] / 2.0, s.spacing[2] / 2.0]);
}

#[test]
fn resample_identity_and_linear_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = crate::tensor::Tensor::<f32>::randn(vec![3, 5, 4], 1.0, &mut rng);
    assert_eq!(resample_trilinear(&t, [3, 5, 4]).unwrap(), t);
    // Interior samples of a linear ramp are reproduced exactly by trilinear weights.
    let ramp = crate::tensor::Tensor::<f32>::from_fn(vec![4, 4, 4], |i| (i % 4) as f32);
    let up = resample_trilinear(&ramp, [4, 4, 8]).unwrap();
    let row: Vec<f32> = up.data()[..8].to_vec();
    let want = [0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0];
    for (a, b) in row.iter().zip(want) {
        assert!((a - b).abs() < 1e-6, "{row:?}");
    }
}

#[test]
fn flip_twice_is_identity() {
    let s = generate(&tiny_spec(), 1, 2).unwrap().remove(0);
    for axis in 0..3 {
        let v = &s.volumes[0];
        assert_eq!(&flip_axis(&flip_axis(v, axis).unwrap(), axis).unwrap(), v);
    }
    assert!(matches!(flip_axis(&s.volumes[0], 3), Err(Error::OutOfRange { .. })));
}

#[test]
fn augment_flips_phases_consistently() {
    let mut s = generate(&tiny_spec(), 1, 2).unwrap().remove(0);
    for (p, v) in s.volumes.iter_mut().enumerate() {
        v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        v.data_mut()[1 + 8 + 64] = 10.0 + p as f32;
    }
    for seed in 0..16 {
        let out = augment(&s, 0.0, seed).unwrap();
        let spots: Vec<usize> = out
            .volumes
            .iter()
            .map(|v| v.data().iter().position(|&x| x != 0.0).unwrap())
            .collect();
        assert!(spots.iter().all(|&i| i == spots[0]), "seed {seed}: {spots:?}");
        for (p, v) in out.volumes.iter().enumerate() {
            assert_eq!(v.data()[spots[0]], 10.0 + p as f32);
        }
        let flips = augment_flips(seed);
        let want = [(1usize, 4usize), (1, 8), (1, 8)];
        let expect = [0, 1, 2].map(|a| if flips[a] { want[a].1 - 1 - want[a].0 } else { want[a].0 });
        assert_eq!(spots[0], (expect[0] * 8 + expect[1]) * 8 + expect[2]);
    }
}

#[test]
fn augment_without_flips_or_noise_is_identity() {
    let s = generate(&tiny_spec(), 1, 2).unwrap().remove(0);
    let seed = (0..).find(|&k| augment_flips(k) == [false; 3]).unwrap();
    assert_eq!(augment(&s, 0.0, seed).unwrap(), s);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augment_keeps_label_and_shape(seed in any::<u64>(), sigma in 0.0f64..0.5, which in 0u64..50) {
        let s = generate(&tiny_spec(), 1, which).unwrap().remove(0);
        let out = augment(&s, sigma, seed).unwrap();
        prop_assert_eq!(out.label, s.label);
        prop_assert_eq!(out.shape(), s.shape());
        prop_assert_eq!(&out.id, &s.id);
    }

    #[test]
    fn spec_pairs_round_trip(r in 1.0f64..1.9, sigma in 0.0f64..0.3, ratio in 0.5f64..3.0, cyclic in any::<bool>()) {
        let spec = PhantomSpec { radius_min: r, noise_sigma: sigma, class_ratio: ratio, cyclic_curves: cyclic, ..tiny_spec() };
        let mut back = PhantomSpec::preset(Preset::TemporalOnly);
        for (k, v) in spec.to_pairs() {
            prop_assert!(back.set(k, &v).unwrap());
        }
        prop_assert_eq!(back, spec);
    }
}
