//! 8-bit RGB PNG loading and saving.

use anyhow::{Context, Result};
use std::path::Path;

use jicd_core::ImageBuffer;

pub fn load_png(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).with_context(|| format!("cannot read image {}", path.display()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageBuffer::from_u8(h as usize, w as usize, rgb.as_raw())
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn save_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let rgb = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_u8())
        .expect("dimensions match pixel data");
    rgb.save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("cannot write image {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use jicd_core::synthetic::generate_image;

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = generate_image(37, 53, 4);
        save_png(&path, &img).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(load_png(Path::new("/nonexistent/nope.png")).is_err());
    }
}
