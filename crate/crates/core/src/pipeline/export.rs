//! 8-bit PNG previews. Visualization only: nothing reads these back.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Raster;

/// Maps 1-based `bands` (one for grey, three for RGB) to interleaved 8-bit
/// samples, clamping to the raster's value range.
pub fn to_rgb8(raster: &Raster, bands: &[usize]) -> Result<Vec<u8>> {
    if !(bands.len() == 1 || bands.len() == 3) {
        return Err(Error::invalid(format!("band mapping needs 1 or 3 bands, got {}", bands.len())));
    }
    if let Some(&b) = bands.iter().find(|&&b| b == 0 || b > raster.channels()) {
        return Err(Error::invalid(format!("band {b} outside 1..={}", raster.channels())));
    }
    let vr = raster.value_range;
    let span = vr.peak();
    if span <= 0.0 {
        return Err(Error::invalid("empty value range"));
    }
    let n = raster.height() * raster.width();
    let mut out = Vec::with_capacity(n * bands.len());
    for i in 0..n {
        for &b in bands {
            let v = ((raster.plane(b - 1)[i] - vr.lo) / span).clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn export_png(raster: &Raster, bands: &[usize], path: &Path) -> Result<()> {
    let pixels = to_rgb8(raster, bands)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut enc = png::Encoder::new(
        BufWriter::new(File::create(path)?),
        raster.width() as u32,
        raster.height() as u32,
    );
    enc.set_color(if bands.len() == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    enc.write_header()
        .map_err(png_err)?
        .write_image_data(&pixels)
        .map_err(png_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(path: &Path) -> (png::ColorType, Vec<u8>) {
        let file = std::io::BufReader::new(File::open(path).unwrap());
        let mut reader = png::Decoder::new(file).read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (info.color_type, buf)
    }

    #[test]
    fn constant_raster_is_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        export_png(&Raster::filled(1, 5, 7, 0.5), &[1], &p).unwrap();
        let (ct, px) = decode(&p);
        assert_eq!(ct, png::ColorType::Grayscale);
        assert_eq!(px.len(), 35);
        assert!(px.iter().all(|&v| v == 128));
    }

    #[test]
    fn values_clamp_to_the_declared_range() {
        let r = Raster::from_vec(1, 1, 4, vec![-0.5, 0.0, 1.0, 7.0]).unwrap();
        assert_eq!(to_rgb8(&r, &[1]).unwrap(), vec![0, 0, 255, 255]);
    }

    #[test]
    fn rgb_mapping_keeps_band_order() {
        let r = Raster::from_fn(4, 2, 2, |c, _, _| c as f64 * 0.25);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        export_png(&r, &[3, 2, 1], &p).unwrap();
        let (ct, px) = decode(&p);
        assert_eq!(ct, png::ColorType::Rgb);
        assert_eq!(&px[..3], &[128, 64, 0]);
        assert!(to_rgb8(&r, &[5, 1, 1]).is_err());
        assert!(to_rgb8(&r, &[1, 2]).is_err());
    }
}
