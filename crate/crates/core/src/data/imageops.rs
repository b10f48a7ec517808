use super::Image;
use crate::error::{Error, Result};

/// Central `target_side × target_side` window; the extra margin on odd
/// differences goes to the bottom/right.
pub fn center_crop(image: &Image, target_side: usize) -> Result<Image> {
    if target_side == 0 || target_side > image.side {
        return Err(Error::InvalidArgument(format!(
            "cannot crop {}px image to {}px",
            image.side, target_side
        )));
    }
    let offset = (image.side - target_side) / 2;
    let mut data = Vec::with_capacity(image.channels * target_side * target_side);
    for c in 0..image.channels {
        for y in offset..offset + target_side {
            let row = (c * image.side + y) * image.side;
            data.extend_from_slice(&image.data[row + offset..row + offset + target_side]);
        }
    }
    Image::new(image.channels, target_side, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize, side: usize) -> Image {
        let n = channels * side * side;
        Image::new(channels, side, (0..n).map(|i| i as f32 / n as f32).collect()).unwrap()
    }

    #[test]
    fn same_size_is_identity() {
        let img = ramp(3, 224);
        assert_eq!(center_crop(&img, 224).unwrap(), img);
    }

    #[test]
    fn symmetric_margin() {
        let img = ramp(1, 6);
        let crop = center_crop(&img, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(crop.at(0, y, x), img.at(0, y + 1, x + 1));
            }
        }
    }

    #[test]
    fn crop_mean_matches_window() {
        let img = ramp(2, 9);
        let crop = center_crop(&img, 5).unwrap();
        let mut sum = 0f64;
        for c in 0..2 {
            for y in 2..7 {
                for x in 2..7 {
                    sum += img.at(c, y, x) as f64;
                }
            }
        }
        assert!((crop.mean() - sum / 50.0).abs() < 1e-12);
    }

    #[test]
    fn too_small() {
        assert!(center_crop(&ramp(1, 3), 4).is_err());
    }
}
