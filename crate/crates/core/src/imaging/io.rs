use std::io::Write;
use std::path::Path;

use super::{ImagingError, Raster};
use crate::geometry::GraspRect;

/// Decodes an 8-bit PNG or binary PPM into a `[0, 1]` raster.
///
/// Grayscale inputs stay single-channel; everything else becomes RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<Raster, ImagingError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| ImagingError::Decode(format!("{}: {e}", path.display())))?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded.color() {
        image::ColorType::L8 | image::ColorType::L16 => (1, decoded.into_luma8().into_raw()),
        _ => (3, decoded.to_rgb8().into_raw()),
    };
    let data = raw.into_iter().map(|b| b as f64 / 255.0).collect();
    Raster::new(width, height, channels, data)
}

/// Encodes a raster as binary PPM (P6), quantizing to 8 bits.
pub fn write_ppm<W: Write>(img: &Raster, mut out: W) -> std::io::Result<()> {
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height())?;
    let mut buf = Vec::with_capacity(img.width() * img.height() * 3);
    for row in 0..img.height() {
        for col in 0..img.width() {
            for c in 0..3 {
                let v = if img.channels() == 1 {
                    img.get(col, row, 0)
                } else {
                    img.get(col, row, c)
                };
                buf.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out.write_all(&buf)
}

pub fn save_ppm(img: &Raster, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_ppm(img, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Saves an 8-bit PNG, grayscale or RGB depending on the channel count.
pub fn save_png(img: &Raster, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let bytes: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        n => return Err(ImagingError::UnsupportedChannels(n)),
    };
    image::save_buffer_with_format(path.as_ref(), &bytes, w, h, color, image::ImageFormat::Png)
        .map_err(|e| ImagingError::Decode(e.to_string()))
}

/// Draws the rectangle outline with 1-px edges in the given RGB color. The
/// raster is expanded to RGB if needed.
pub fn draw_rect(img: &Raster, r: &GraspRect, color: [f64; 3]) -> Raster {
    let mut out = img.to_rgb();
    let corners = r.corners();
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (a[0] + t * (b[0] - a[0])).round();
            let y = (a[1] + t * (b[1] - a[1])).round();
            if x < 0.0 || y < 0.0 || x >= out.width() as f64 || y >= out.height() as f64 {
                continue;
            }
            for (c, &v) in color.iter().enumerate() {
                out.set(x as usize, y as usize, c, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}
