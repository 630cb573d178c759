use super::{DataError, HsiCube};

/// Border handling for patches that extend past the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PadMode {
    /// Edge-inclusive reflection: index -1 maps to 0, -2 to 1, and so on.
    #[default]
    Mirror,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_size: usize,
    /// Only pixels whose row and column are multiples of `stride` are
    /// selected; 1 selects every labeled pixel.
    pub stride: usize,
    pub pad_mode: PadMode,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            stride: 1,
            pad_mode: PadMode::Mirror,
        }
    }
}

impl PatchConfig {
    pub fn new(patch_size: usize) -> Self {
        Self {
            patch_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.patch_size == 0 || self.stride == 0 {
            return Err(DataError::Contract(format!(
                "patch_size and stride must be >= 1, got {} and {}",
                self.patch_size, self.stride
            )));
        }
        Ok(())
    }

    /// Offset of the center pixel inside a patch, `floor(P / 2)` on both axes.
    pub fn center(&self) -> usize {
        self.patch_size / 2
    }
}

/// Symmetric reflection of `i` into `0..n`, periodic beyond one reflection.
pub fn mirror_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m >= n {
        2 * n - 1 - m
    } else {
        m
    }
}

/// `N` patches of `P x P x C` values, one per selected pixel, each centered
/// on that pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    patch_size: usize,
    bands: usize,
    patches: Vec<f64>,
    center_labels: Vec<u16>,
    center_context: Vec<f64>,
    coords: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Pixels per patch, `P * P`.
    pub fn tokens(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Row-major `P x P x C` values of patch `n`.
    pub fn patch(&self, n: usize) -> &[f64] {
        let size = self.tokens() * self.bands;
        &self.patches[n * size..(n + 1) * size]
    }

    pub fn center_labels(&self) -> &[u16] {
        &self.center_labels
    }

    pub fn center_label(&self, n: usize) -> u16 {
        self.center_labels[n]
    }

    /// Spectrum of the center pixel of patch `n`.
    pub fn context(&self, n: usize) -> &[f64] {
        &self.center_context[n * self.bands..(n + 1) * self.bands]
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    /// Largest center label present.
    pub fn num_classes(&self) -> usize {
        self.center_labels.iter().copied().max().unwrap_or(0) as usize
    }
}

/// One mirror-padded patch per labeled pixel selected by `cfg.stride`, in
/// row-major pixel order.
pub fn extract_patches(cube: &HsiCube, cfg: &PatchConfig) -> Result<PatchSet, DataError> {
    cfg.validate()?;
    let coords: Vec<_> = (0..cube.height())
        .step_by(cfg.stride)
        .flat_map(|r| (0..cube.width()).step_by(cfg.stride).map(move |c| (r, c)))
        .filter(|&(r, c)| cube.label(r, c) != 0)
        .collect();
    if coords.is_empty() {
        return Err(DataError::EmptyData(format!(
            "{}x{} cube has no labeled pixels at stride {}",
            cube.height(),
            cube.width(),
            cfg.stride
        )));
    }
    extract_patches_at(cube, cfg, &coords)
}

/// Patches centered on arbitrary pixels; labels may be 0 for unlabeled
/// pixels. Used to classify whole scenes.
pub fn extract_patches_at(cube: &HsiCube, cfg: &PatchConfig, coords: &[(usize, usize)]) -> Result<PatchSet, DataError> {
    cfg.validate()?;
    let (p, bands) = (cfg.patch_size, cube.bands());
    let half = cfg.center() as isize;
    let mut patches = Vec::with_capacity(coords.len() * p * p * bands);
    let mut center_labels = Vec::with_capacity(coords.len());
    let mut center_context = Vec::with_capacity(coords.len() * bands);
    for &(r, c) in coords {
        if r >= cube.height() || c >= cube.width() {
            return Err(DataError::Contract(format!(
                "pixel ({r}, {c}) outside {}x{} cube",
                cube.height(),
                cube.width()
            )));
        }
        for i in 0..p as isize {
            let src_r = mirror_index(r as isize + i - half, cube.height());
            for j in 0..p as isize {
                let src_c = mirror_index(c as isize + j - half, cube.width());
                patches.extend_from_slice(cube.spectrum(src_r, src_c));
            }
        }
        center_labels.push(cube.label(r, c));
        center_context.extend_from_slice(cube.spectrum(r, c));
    }
    Ok(PatchSet {
        patch_size: p,
        bands,
        patches,
        center_labels,
        center_context,
        coords: coords.to_vec(),
    })
}
