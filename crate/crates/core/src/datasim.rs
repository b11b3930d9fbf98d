//! Synthetic multi-client phantom data and simulated single-coil
//! acquisition `b = M (F x + noise)`.

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstructor::{fft2, KSpace, MaskKind, MaskSpec};
use crate::seed::{rng_for, tag};
use crate::tensor::Tensor;

/// Generator parameters for one (simulated) site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientProfile {
    pub client_id: u64,
    /// Contrast exponent applied as `v -> scale * v^gamma`.
    pub gamma: f64,
    pub intensity_scale: f64,
    /// Per-component std of complex Gaussian k-space noise.
    pub noise_sigma: f64,
    /// Inclusive range of interior ellipses.
    pub ellipse_count: (usize, usize),
    pub seed: u64,
}

impl ClientProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.intensity_scale > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Validation(format!(
                "client {}: gamma and intensity_scale must be > 0, noise_sigma >= 0",
                self.client_id
            )));
        }
        if self.ellipse_count.0 > self.ellipse_count.1 {
            return Err(Error::Validation(format!(
                "client {}: ellipse_count range is reversed",
                self.client_id
            )));
        }
        Ok(())
    }
}

/// Three training sites with distinct contrast transforms.
pub fn default_training_profiles() -> Vec<ClientProfile> {
    vec![
        ClientProfile {
            client_id: 0,
            gamma: 1.0,
            intensity_scale: 1.0,
            noise_sigma: 0.01,
            ellipse_count: (3, 6),
            seed: 11,
        },
        ClientProfile {
            client_id: 1,
            gamma: 0.55,
            intensity_scale: 1.0,
            noise_sigma: 0.015,
            ellipse_count: (4, 8),
            seed: 23,
        },
        ClientProfile {
            client_id: 2,
            gamma: 1.8,
            intensity_scale: 1.2,
            noise_sigma: 0.01,
            ellipse_count: (2, 5),
            seed: 37,
        },
    ]
}

/// Held-out site with a shifted contrast but training-like anatomy.
pub fn default_contrast_shift_profile() -> ClientProfile {
    ClientProfile {
        client_id: 100,
        gamma: 0.35,
        intensity_scale: 1.0,
        noise_sigma: 0.01,
        ellipse_count: (3, 6),
        seed: 101,
    }
}

/// Held-out site whose parameters overlap none of the training sites.
pub fn default_unseen_center_profile() -> ClientProfile {
    ClientProfile {
        client_id: 200,
        gamma: 1.3,
        intensity_scale: 0.7,
        noise_sigma: 0.02,
        ellipse_count: (6, 9),
        seed: 211,
    }
}

/// One ground-truth image and its measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[2, H, W]`, imaginary channel zero.
    pub image: Tensor,
    pub kspace: KSpace,
}

impl Sample {
    pub fn mask(&self) -> &MaskSpec {
        &self.kspace.mask
    }
}

/// Disjoint train/validation/test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> DatasetSplit<T> {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    intensity: f64,
}

impl Ellipse {
    fn random<R: Rng>(rng: &mut R, center_r: f64, axes: (f64, f64), intensity: (f64, f64)) -> Self {
        let r = center_r * rng.gen::<f64>().sqrt();
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let rot = rng.gen_range(0.0..std::f64::consts::PI);
        Self {
            cx: r * t.cos(),
            cy: r * t.sin(),
            a: rng.gen_range(axes.0..axes.1),
            b: rng.gen_range(axes.0..axes.1),
            cos: rot.cos(),
            sin: rot.sin(),
            intensity: rng.gen_range(intensity.0..intensity.1),
        }
    }

    /// Smooth dome profile, zero outside the ellipse.
    fn value(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        let rho2 = u * u + v * v;
        if rho2 < 1.0 {
            self.intensity * (1.0 - 0.4 * rho2)
        } else {
            0.0
        }
    }
}

/// A `[2, size, size]` phantom, deterministic in `(profile, index)`.
///
/// A head-like outer ellipse holds a random number of overlapping interior
/// ellipses with signed smooth intensities; the base image is clipped to
/// `[0, 1]`, then mapped through `scale * v^gamma` and clipped again.
pub fn generate_phantom(profile: &ClientProfile, index: u64, size: usize) -> Result<Tensor> {
    if size == 0 || !size.is_power_of_two() {
        return Err(Error::UnsupportedSize(format!(
            "phantom size {size} is not a power of two"
        )));
    }
    let mut rng = rng_for(&[tag::PHANTOM, profile.seed, index]);
    let mut shapes = vec![Ellipse {
        cx: rng.gen_range(-0.05..0.05),
        cy: rng.gen_range(-0.05..0.05),
        a: rng.gen_range(0.70..0.85),
        b: rng.gen_range(0.78..0.92),
        cos: 1.0,
        sin: 0.0,
        intensity: rng.gen_range(0.45..0.65),
    }];
    let (lo, hi) = profile.ellipse_count;
    let count = rng.gen_range(lo..=hi);
    for _ in 0..count {
        shapes.push(Ellipse::random(&mut rng, 0.45, (0.08, 0.32), (-0.35, 0.45)));
    }
    let mut data = vec![0.0; 2 * size * size];
    for py in 0..size {
        for px in 0..size {
            let x = (px as f64 + 0.5) / size as f64 * 2.0 - 1.0;
            let y = (py as f64 + 0.5) / size as f64 * 2.0 - 1.0;
            let base: f64 = shapes.iter().map(|e| e.value(x, y)).sum::<f64>().clamp(0.0, 1.0);
            data[py * size + px] = (profile.intensity_scale * base.powf(profile.gamma)).clamp(0.0, 1.0);
        }
    }
    Tensor::new(&[2, size, size], data)
}

/// Number of fully sampled center columns.
pub fn acs_columns(width: usize, acs_fraction: f64) -> usize {
    (acs_fraction * width as f64).round() as usize
}

/// Build a 1-D column mask in centered order.
///
/// The ACS block `[W/2 - acs/2, W/2 - acs/2 + acs)` is always sampled.
/// `Random1d` then draws columns without replacement until `round(W/R)`
/// are sampled; `Equispaced1d` adds every `ceil(R)`-th column starting at 0.
pub fn make_mask(kind: MaskKind, acceleration: f64, width: usize, acs_fraction: f64, seed: u64) -> Result<MaskSpec> {
    if !(acceleration >= 1.0) {
        return Err(Error::Config(format!("acceleration must be >= 1, got {acceleration}")));
    }
    if width == 0 || !(acs_fraction > 0.0 && acs_fraction < 1.0) || acs_fraction * (width as f64) < 2.0 {
        return Err(Error::Config(format!(
            "acs_fraction {acs_fraction} must lie in (0,1) and cover at least 2 of {width} columns"
        )));
    }
    let acs = acs_columns(width, acs_fraction);
    let budget = (width as f64 / acceleration).round() as usize;
    if acs > budget {
        return Err(Error::Config(format!(
            "{acs} ACS columns exceed the budget of {budget} columns at {acceleration}x"
        )));
    }
    let start = width / 2 - acs / 2;
    let mut columns = vec![false; width];
    columns[start..start + acs].iter_mut().for_each(|c| *c = true);
    match kind {
        MaskKind::Random1d => {
            let free: Vec<usize> = (0..width).filter(|&c| !columns[c]).collect();
            let mut rng = rng_for(&[tag::MASK, seed]);
            for i in sample_indices(&mut rng, free.len(), budget - acs) {
                columns[free[i]] = true;
            }
        }
        MaskKind::Equispaced1d => {
            let step = acceleration.ceil() as usize;
            (0..width).step_by(step).for_each(|c| columns[c] = true);
        }
    }
    Ok(MaskSpec {
        kind,
        acceleration,
        acs_fraction,
        columns,
    })
}

/// Masked noisy k-space of `image`.
pub fn simulate_kspace(image: &Tensor, mask: &MaskSpec, noise_sigma: f64, seed: u64) -> Result<KSpace> {
    let mut full = fft2(image)?;
    if noise_sigma > 0.0 {
        let mut rng = rng_for(&[tag::NOISE, seed]);
        for v in full.data_mut() {
            *v += noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    KSpace::from_full(full, mask.clone())
}

/// Mask settings shared by every sample of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskParams {
    pub kind: MaskKind,
    pub acceleration: f64,
    pub acs_fraction: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            kind: MaskKind::Random1d,
            acceleration: 4.0,
            acs_fraction: 0.08,
        }
    }
}

/// `count` samples of one client, each with its own mask and noise stream.
///
/// `mask_stream` separates independent mask draws over the same phantoms
/// (e.g. training masks vs. an evaluation scenario's masks).
pub fn generate_client(
    profile: &ClientProfile,
    count: usize,
    size: usize,
    mask: &MaskParams,
    mask_stream: u64,
) -> Result<Vec<Sample>> {
    profile.validate()?;
    (0..count as u64)
        .map(|i| {
            let image = generate_phantom(profile, i, size)?;
            let m = make_mask(
                mask.kind,
                mask.acceleration,
                size,
                mask.acs_fraction,
                crate::seed::derive_seed(&[profile.seed, i, mask_stream]),
            )?;
            let kspace = simulate_kspace(
                &image,
                &m,
                profile.noise_sigma,
                crate::seed::derive_seed(&[profile.seed, i]),
            )?;
            Ok(Sample { image, kspace })
        })
        .collect()
}

/// Shuffled index partition: `floor` sizes for validation and test, the
/// remainder to training.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    if n < 3 {
        return Err(Error::Config(format!("cannot split {n} samples into 3 parts")));
    }
    let total: f64 = ratios.iter().sum();
    let n_val = (n as f64 * ratios[1] / total).floor() as usize;
    let n_test = (n as f64 * ratios[2] / total).floor() as usize;
    let n_train = n - n_val - n_test;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(&[tag::SPLIT, seed]));
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok([idx, val, test])
}

pub fn split_dataset<T: Clone>(samples: &[T], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit<T>> {
    let [tr, va, te] = split_indices(samples.len(), ratios, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(&tr),
        val: pick(&va),
        test: pick(&te),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstructor::zero_filled;

    #[test]
    fn phantoms_are_deterministic_and_clipped() {
        for p in default_training_profiles() {
            let a = generate_phantom(&p, 3, 32).unwrap();
            assert_eq!(a, generate_phantom(&p, 3, 32).unwrap());
            assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(a.data()[32 * 32..].iter().all(|&v| v == 0.0));
        }
        let p = &default_training_profiles()[0];
        assert_ne!(generate_phantom(p, 0, 16).unwrap(), generate_phantom(p, 1, 16).unwrap());
    }

    #[test]
    fn default_profiles_are_distinct() {
        let mut all = default_training_profiles();
        all.push(default_contrast_shift_profile());
        all.push(default_unseen_center_profile());
        for (i, a) in all.iter().enumerate() {
            a.validate().unwrap();
            for b in &all[i + 1..] {
                assert!(a.client_id != b.client_id);
                assert!((a.gamma, a.intensity_scale) != (b.gamma, b.intensity_scale));
            }
        }
    }

    #[test]
    fn masks_keep_acs() {
        for kind in [MaskKind::Random1d, MaskKind::Equispaced1d] {
            for seed in 0..20 {
                let m = make_mask(kind, 4.0, 32, 0.125, seed).unwrap();
                assert!(m.columns[14..18].iter().all(|&c| c), "{kind:?}");
                assert_eq!(m, make_mask(kind, 4.0, 32, 0.125, seed).unwrap());
            }
        }
    }

    #[test]
    fn random_mask_hits_budget() {
        for r in [4.0, 6.0] {
            let m = make_mask(MaskKind::Random1d, r, 64, 0.08, 5).unwrap();
            assert_eq!(m.sampled(), (64.0 / r).round() as usize);
            assert!((m.realized_acceleration() - r).abs() <= 0.1 * r);
        }
    }

    #[test]
    fn infeasible_masks_are_config_errors() {
        assert!(matches!(
            make_mask(MaskKind::Random1d, 8.0, 32, 0.5, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_mask(MaskKind::Random1d, 4.0, 16, 0.08, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_mask(MaskKind::Random1d, 0.5, 16, 0.25, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn noiseless_full_sampling_is_exact() {
        let p = &default_training_profiles()[1];
        let x = generate_phantom(p, 0, 16).unwrap();
        let b = simulate_kspace(&x, &MaskSpec::full(16), 0.0, 1).unwrap();
        assert_eq!(b.data, fft2(&x).unwrap());
        assert!(zero_filled(&b).unwrap().max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn split_sizes_follow_ratio() {
        let [tr, va, te] = split_indices(10, [7.0, 1.0, 2.0], 3).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (7, 1, 2));
        let [tr, va, te] = split_indices(64, [7.0, 1.0, 2.0], 3).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (46, 6, 12));
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
        assert_eq!(split_indices(64, [7.0, 1.0, 2.0], 3).unwrap(), [tr, va, te]);
    }

    #[test]
    fn split_needs_three_samples() {
        assert!(matches!(split_indices(2, [7.0, 1.0, 2.0], 0), Err(Error::Config(_))));
        assert!(matches!(split_indices(9, [7.0, 0.0, 2.0], 0), Err(Error::Config(_))));
    }

    #[test]
    fn generated_samples_satisfy_measurement_model() {
        let p = &default_training_profiles()[2];
        let s = generate_client(
            p,
            3,
            16,
            &MaskParams {
                acs_fraction: 0.125,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        for (i, smp) in s.iter().enumerate() {
            assert_eq!(smp.image, generate_phantom(p, i as u64, 16).unwrap());
            let expect = simulate_kspace(
                &smp.image,
                smp.mask(),
                p.noise_sigma,
                crate::seed::derive_seed(&[p.seed, i as u64]),
            )
            .unwrap();
            assert_eq!(smp.kspace, expect);
        }
    }
}
