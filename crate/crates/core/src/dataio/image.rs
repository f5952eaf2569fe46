use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageReader};

use super::{io_err, DataError, Result};
use crate::raster::Raster;

/// Loads an 8-bit greyscale PGM (P5) or PNG as a `target_side`² raster in `[0, 1]`.
///
/// Non-square images are centred on a zero-padded square first; any size
/// other than the target is then resampled bilinearly.
pub fn load_image(path: impl AsRef<Path>, target_side: usize) -> Result<Raster> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?;
    let decoded = reader.decode().map_err(|e| DataError::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let gray = match decoded {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(DataError::Format {
                path: path.to_path_buf(),
                detail: format!("expected 8-bit greyscale, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let pixels = gray
        .as_raw()
        .iter()
        .map(|&v| f64::from(v) / 255.0)
        .collect();
    let raster = Raster::new(w, h, pixels).ok_or_else(|| DataError::Format {
        path: path.to_path_buf(),
        detail: "empty image".into(),
    })?;
    let square = pad_to_square(&raster);
    if square.is_square(target_side) {
        Ok(square)
    } else {
        Ok(resample_bilinear(&square, target_side, target_side))
    }
}

/// Centres the raster on a zero square of side `max(width, height)`;
/// an odd remainder goes to the right/bottom.
pub fn pad_to_square(raster: &Raster) -> Raster {
    let (w, h) = (raster.width(), raster.height());
    if w == h {
        return raster.clone();
    }
    let side = w.max(h);
    let (ox, oy) = ((side - w) / 2, (side - h) / 2);
    let mut out = Raster::filled(side, side, 0.0);
    for y in 0..h {
        for x in 0..w {
            out.set(x + ox, y + oy, raster.get(x, y));
        }
    }
    out
}

/// Bilinear resampling with corner-aligned grids: output corners sample input corners exactly.
pub fn resample_bilinear(raster: &Raster, out_w: usize, out_h: usize) -> Raster {
    let (w, h) = (raster.width(), raster.height());
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out <= 1 || n_in <= 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Raster::filled(out_w, out_h, 0.0);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, out_h, h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, out_w, w);
            let top = raster.get(x0, y0) * (1.0 - fx) + raster.get(x1, y0) * fx;
            let bottom = raster.get(x0, y1) * (1.0 - fx) + raster.get(x1, y1) * fx;
            out.set(x, y, top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Binary PGM (P5, maxval 255).
pub fn write_pgm(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", raster.width(), raster.height()).map_err(io_err(path))?;
    w.write_all(&raster.to_u8()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_identity_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let px: Vec<f64> = (0..16).map(|v| f64::from(v * 17) / 255.0).collect();
        let r = Raster::new(4, 4, px.clone()).unwrap();
        write_pgm(&p, &r).unwrap();
        let back = load_image(&p, 4).unwrap();
        assert_eq!(back.pixels(), &px[..]);
    }

    #[test]
    fn constant_stays_constant() {
        let r = Raster::filled(7, 7, 0.4);
        let out = resample_bilinear(&r, 3, 3);
        assert!(out.pixels().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn padding_centres() {
        let r = Raster::filled(2, 4, 1.0);
        let sq = pad_to_square(&r);
        assert_eq!(sq.width(), 4);
        assert_eq!(sq.get(0, 0), 0.0);
        assert_eq!(sq.get(1, 0), 1.0);
        assert_eq!(sq.get(2, 3), 1.0);
        assert_eq!(sq.get(3, 3), 0.0);
    }

    #[test]
    fn rgb_png_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        image::RgbImage::new(3, 3).save(&p).unwrap();
        assert!(matches!(load_image(&p, 3), Err(DataError::Format { .. })));
        let p16 = dir.path().join("d.png");
        image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(3, 3)
            .save(&p16)
            .unwrap();
        assert!(matches!(load_image(&p16, 3), Err(DataError::Format { .. })));
    }

    #[test]
    fn png_grey_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        image::GrayImage::from_pixel(5, 5, image::Luma([51]))
            .save(&p)
            .unwrap();
        let r = load_image(&p, 5).unwrap();
        assert!(r.pixels().iter().all(|&v| v == 0.2));
    }
}
