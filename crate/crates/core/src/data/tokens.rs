use super::{DataError, PatchSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatial and spectral token sequences for a batch of patches, both
/// shaped `(B, L, C)` with `L = P * P`, plus each patch's center spectrum
/// `(B, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenPair<T> {
    pub spatial: Tensor<T>,
    pub spectral: Tensor<T>,
    pub context: Tensor<T>,
}

impl<T: Scalar> TokenPair<T> {
    pub fn batch(&self) -> usize {
        self.spatial.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.spatial.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bands(&self) -> usize {
        self.spatial.shape()[2]
    }
}

/// Builds tokens for the patches at `batch`.
///
/// `spatial[b, l, :]` is the spectrum of pixel `l` (row-major) of the patch.
/// `spectral[b, l, j]` reads the transposed `C x L` band-by-pixel matrix
/// with nearest-neighbor resampling onto an `L x C` grid:
/// band `floor(l * C / L)` at pixel `floor(j * L / C)`. When `C == L` this
/// is the exact transpose.
pub fn make_tokens<T: Scalar>(patches: &PatchSet, batch: &[usize]) -> Result<TokenPair<T>, DataError> {
    if batch.is_empty() {
        return Err(DataError::Contract("token batch must not be empty".into()));
    }
    if let Some(&index) = batch.iter().find(|&&i| i >= patches.len()) {
        return Err(DataError::Index {
            index,
            len: patches.len(),
        });
    }
    let (len, bands) = (patches.tokens(), patches.bands());
    let mut spatial = Vec::with_capacity(batch.len() * len * bands);
    let mut spectral = Vec::with_capacity(batch.len() * len * bands);
    let mut context = Vec::with_capacity(batch.len() * bands);
    for &n in batch {
        let patch = patches.patch(n);
        spatial.extend(patch.iter().map(|&v| T::of(v)));
        for l in 0..len {
            let band = l * bands / len;
            for j in 0..bands {
                let pixel = j * len / bands;
                spectral.push(T::of(patch[pixel * bands + band]));
            }
        }
        context.extend(patches.context(n).iter().map(|&v| T::of(v)));
    }
    let shape = [batch.len(), len, bands];
    let to_err = |e: crate::tensor::TensorError| DataError::Contract(e.to_string());
    Ok(TokenPair {
        spatial: Tensor::new(&shape, spatial).map_err(to_err)?,
        spectral: Tensor::new(&shape, spectral).map_err(to_err)?,
        context: Tensor::new(&[batch.len(), bands], context).map_err(to_err)?,
    })
}
