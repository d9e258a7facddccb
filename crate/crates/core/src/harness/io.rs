//! Reconstruction dumps: portable float maps and 8-bit PNG previews.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tomo::{ImageGrid, ScanGeometry, Sinogram};

/// Writes a single-channel little-endian PFM of a row-major array. PFM
/// stores rows bottom-up.
pub fn write_pfm_array(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::mismatch("pfm payload", rows * cols, values.len()));
    }
    let mut buf = format!("Pf\n{cols} {rows}\n-1.0\n").into_bytes();
    for r in (0..rows).rev() {
        for &v in &values[r * cols..(r + 1) * cols] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Reads a single-channel PFM of either byte order as `(rows, cols, values)`.
pub fn read_pfm_array(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    for _ in 0..3 {
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        header.push(line.trim().to_string());
    }
    let bad = |what: &str| Error::InvalidArgument(format!("{}: {what}", path.display()));
    if header[0] != "Pf" {
        return Err(bad("not a grayscale PFM"));
    }
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("bad dimensions")))
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(bad("bad dimensions"));
    }
    let (cols, rows) = (dims[0], dims[1]);
    let scale: f64 = header[2].parse().map_err(|_| bad("bad scale"))?;
    let mut raw = vec![0u8; 4 * rows * cols];
    r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
    let mut values = vec![0.0; rows * cols];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row, col) = (rows - 1 - i / cols, i % cols);
        values[row * cols + col] = v as f64;
    }
    Ok((rows, cols, values))
}

pub fn write_pfm(path: &Path, image: &ImageGrid) -> Result<()> {
    write_pfm_array(path, image.width(), image.width(), image.values())
}

pub fn read_pfm(path: &Path) -> Result<ImageGrid> {
    let (rows, cols, values) = read_pfm_array(path)?;
    if rows != cols {
        return Err(Error::InvalidArgument(format!(
            "{}: image must be square, got {rows}x{cols}",
            path.display()
        )));
    }
    ImageGrid::new(rows, values)
}

pub fn write_sinogram_pfm(path: &Path, sino: &Sinogram) -> Result<()> {
    write_pfm_array(path, sino.rows(), sino.cols(), sino.values())
}

/// Reads a sinogram stored by [`write_sinogram_pfm`] for geometry `geom`.
pub fn read_sinogram_pfm(path: &Path, geom: &ScanGeometry) -> Result<Sinogram> {
    let (rows, cols, values) = read_pfm_array(path)?;
    if rows != geom.rows() || cols != geom.num_detectors() {
        return Err(Error::mismatch(
            "sinogram file",
            format!("{}x{}", geom.rows(), geom.num_detectors()),
            format!("{rows}x{cols}"),
        ));
    }
    Sinogram::new(geom.clone(), values)
}

/// 8-bit preview, linearly mapping `[lo, hi]` to `[0, 255]` with clamping.
pub fn write_png(path: &Path, image: &ImageGrid, lo: f64, hi: f64) -> Result<()> {
    let w = image.width() as u32;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = image::GrayImage::from_fn(w, w, |x, y| {
        let v = (image.get(y as usize, x as usize) - lo) / span;
        image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path)?;
    Ok(())
}
