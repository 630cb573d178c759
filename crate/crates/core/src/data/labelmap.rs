//! Netpbm export of per-pixel class maps.

use std::path::Path;

use super::DataError;

/// Colors for classes `label % 16`; index 0 (unlabeled) is black.
pub const PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [128, 0, 0],
    [255, 255, 255],
];

fn check(height: usize, width: usize, labels: &[u16]) -> Result<(), DataError> {
    if height == 0 || width == 0 || labels.len() != height * width {
        return Err(DataError::Contract(format!(
            "{height}x{width} map needs {} labels, got {}",
            height * width,
            labels.len()
        )));
    }
    Ok(())
}

/// Binary PGM (P5) holding raw class indices; two-byte samples when a
/// label exceeds 255.
pub fn encode_pgm(height: usize, width: usize, labels: &[u16]) -> Result<Vec<u8>, DataError> {
    check(height, width, labels)?;
    let max = labels.iter().copied().max().unwrap_or(0).max(1);
    let mut out = format!("P5\n{width} {height}\n{max}\n").into_bytes();
    if max < 256 {
        out.extend(labels.iter().map(|&l| l as u8));
    } else {
        out.extend(labels.iter().flat_map(|l| l.to_be_bytes()));
    }
    Ok(out)
}

/// Binary PPM (P6) colored with [`PALETTE`].
pub fn encode_ppm(height: usize, width: usize, labels: &[u16]) -> Result<Vec<u8>, DataError> {
    check(height, width, labels)?;
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(labels.iter().flat_map(|&l| PALETTE[l as usize % 16]));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, height: usize, width: usize, labels: &[u16]) -> Result<(), DataError> {
    std::fs::write(path, encode_pgm(height, width, labels)?)?;
    Ok(())
}

pub fn write_ppm(path: impl AsRef<Path>, height: usize, width: usize, labels: &[u16]) -> Result<(), DataError> {
    std::fs::write(path, encode_ppm(height, width, labels)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_layout() {
        let bytes = encode_pgm(2, 3, &[0, 1, 2, 3, 2, 1]).unwrap();
        let header = b"P5\n3 2\n3\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 1, 2, 3, 2, 1]);
    }

    #[test]
    fn ppm_uses_palette() {
        let bytes = encode_ppm(1, 2, &[0, 17]).unwrap();
        let header = b"P6\n2 1\n255\n";
        assert_eq!(&bytes[header.len()..], &[0, 0, 0, 230, 25, 75]);
    }

    #[test]
    fn wide_labels_use_two_bytes() {
        let bytes = encode_pgm(1, 1, &[300]).unwrap();
        assert!(bytes.ends_with(&300u16.to_be_bytes()));
    }

    #[test]
    fn size_mismatch() {
        assert!(encode_pgm(2, 2, &[1, 2, 3]).is_err());
    }
}
