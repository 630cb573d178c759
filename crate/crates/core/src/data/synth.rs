use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, HsiCube};

/// Parameters of a synthetic scene: `classes` Voronoi regions, each with a
/// Gaussian-bump spectrum plus i.i.d. noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub noise_sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 32,
            width: 32,
            bands: 30,
            classes: 3,
            noise_sigma: 0.05,
        }
    }
}

impl SynthSpec {
    /// Band at which class index `k` (0-based) peaks: `floor((k + 0.5) C / K)`.
    pub fn peak_band(&self, k: usize) -> usize {
        ((k as f64 + 0.5) * self.bands as f64 / self.classes as f64).floor() as usize
    }

    /// Noise-free spectrum of class index `k`.
    pub fn class_spectrum(&self, k: usize) -> Vec<f64> {
        let center = self.peak_band(k) as f64;
        let width = (self.bands as f64 / (2.0 * self.classes as f64)).max(1.0);
        (0..self.bands)
            .map(|b| (-(b as f64 - center).powi(2) / (2.0 * width * width)).exp())
            .collect()
    }
}

/// Generates a fully labeled cube. Values are rounded to `f32` so the cube
/// survives the file format bit for bit.
pub fn synth_cube(spec: &SynthSpec) -> Result<HsiCube, DataError> {
    let SynthSpec {
        seed,
        height,
        width,
        bands,
        classes,
        noise_sigma,
    } = *spec;
    if classes < 2 || classes > u16::MAX as usize {
        return Err(DataError::Contract(format!(
            "classes must be in [2, 65535], got {classes}"
        )));
    }
    if bands < classes {
        return Err(DataError::Contract(format!(
            "bands ({bands}) must be >= classes ({classes})"
        )));
    }
    if height == 0 || width == 0 || height * width < classes {
        return Err(DataError::Contract(format!(
            "{height}x{width} scene cannot hold {classes} regions"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(DataError::Contract(format!(
            "noise sigma must be finite and >= 0, got {noise_sigma}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sites: Vec<(usize, usize)> = Vec::with_capacity(classes);
    while sites.len() < classes {
        let site = (rng.random_range(0..height), rng.random_range(0..width));
        if !sites.contains(&site) {
            sites.push(site);
        }
    }
    let spectra: Vec<Vec<f64>> = (0..classes).map(|k| spec.class_spectrum(k)).collect();
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| DataError::Contract(e.to_string()))?;

    let mut values = Vec::with_capacity(height * width * bands);
    let mut labels = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let k = nearest_site(&sites, r, c);
            labels.push(k as u16 + 1);
            for &v in &spectra[k] {
                let v = if noise_sigma > 0.0 {
                    v + noise.sample(&mut rng)
                } else {
                    v
                };
                values.push(f64::from(v as f32));
            }
        }
    }
    HsiCube::new(height, width, bands, classes as u16, values, labels)
}

fn nearest_site(sites: &[(usize, usize)], r: usize, c: usize) -> usize {
    let dist = |&(sr, sc): &(usize, usize)| {
        let dr = sr as i64 - r as i64;
        let dc = sc as i64 - c as i64;
        dr * dr + dc * dc
    };
    // min_by_key keeps the first minimum, so ties go to the lower class.
    sites
        .iter()
        .enumerate()
        .min_by_key(|(_, s)| dist(s))
        .map(|(k, _)| k)
        .expect("at least two sites")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_classes_share_one_spectrum() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            ..SynthSpec::default()
        };
        let cube = synth_cube(&spec).unwrap();
        let mut seen: Vec<Option<Vec<f64>>> = vec![None; 4];
        for r in 0..cube.height() {
            for c in 0..cube.width() {
                let l = cube.label(r, c) as usize;
                let s = cube.spectrum(r, c).to_vec();
                match &seen[l] {
                    Some(prev) => assert_eq!(prev, &s),
                    None => seen[l] = Some(s),
                }
            }
        }
        assert!(seen[1..].iter().all(Option::is_some), "every class is present");
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let spec = SynthSpec::default();
        assert!(synth_cube(&spec).unwrap().bitwise_eq(&synth_cube(&spec).unwrap()));
        let other = SynthSpec { seed: 1, ..spec };
        assert!(!synth_cube(&spec).unwrap().bitwise_eq(&synth_cube(&other).unwrap()));
    }

    #[test]
    fn peaks_at_5_15_25() {
        let spec = SynthSpec::default();
        let peaks: Vec<usize> = (0..3).map(|k| spec.peak_band(k)).collect();
        assert_eq!(peaks, vec![5, 15, 25]);
        for k in 0..3 {
            let s = spec.class_spectrum(k);
            let argmax = (0..30).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
            assert_eq!(argmax, peaks[k]);
        }
    }

    #[test]
    fn all_pixels_labeled() {
        let cube = synth_cube(&SynthSpec::default()).unwrap();
        assert_eq!(cube.labeled_count(), 32 * 32);
        assert_eq!(cube.num_classes(), 3);
    }

    #[test]
    fn invalid_extents() {
        for bad in [
            SynthSpec {
                classes: 1,
                ..SynthSpec::default()
            },
            SynthSpec {
                bands: 2,
                ..SynthSpec::default()
            },
            SynthSpec {
                height: 0,
                ..SynthSpec::default()
            },
            SynthSpec {
                noise_sigma: -1.0,
                ..SynthSpec::default()
            },
        ] {
            assert!(matches!(synth_cube(&bad), Err(DataError::Contract(_))));
        }
    }
}
