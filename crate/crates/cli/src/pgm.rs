//! 8-bit binary PGM (P5) export of B-mode images.

use std::path::Path;

use sosest::BModeImage;

use crate::container::write_text;
use crate::error::CliResult;

/// Maps `[-dynamic_range, 0]` dB to `[0, 255]`; rows run in depth, columns laterally.
pub fn encode(img: &BModeImage) -> Vec<u8> {
    let (n_x, n_z) = img.values.dim();
    let dr = img.dynamic_range as f32;
    let mut out = format!("P5\n{n_x} {n_z}\n255\n").into_bytes();
    out.reserve(n_x * n_z);
    for iz in 0..n_z {
        for ix in 0..n_x {
            let v = (img.values[[ix, iz]] + dr) / dr;
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn write(path: &Path, img: &BModeImage) -> CliResult<()> {
    write_text(path, &encode(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use sosest::ImageGrid;

    #[test]
    fn maps_range_to_bytes() {
        let grid = ImageGrid::new(2, 3, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let img =
            BModeImage::new(grid, array![[0.0, -30.0, -60.0], [-60.0, -15.0, 0.0]], 60.0).unwrap();
        let bytes = encode(&img);
        let header = b"P5\n2 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[255, 0, 128, 191, 0, 255]);
    }
}
