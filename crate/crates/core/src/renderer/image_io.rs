use std::io::{Read, Write};
use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::linalg::Vec3;
use crate::{Error, Real, Result};

fn to_u8<T: Real>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_len(path: &Path, got: usize, width: usize, height: usize) -> Result<()> {
    if got != width * height {
        return Err(Error::Format { path: path.to_path_buf(), reason: format!("{got} pixels for a {width}×{height} image") });
    }
    Ok(())
}

/// 8-bit RGB PNG, values clamped to `[0, 1]`.
pub fn save_rgb_png<T: Real>(path: &Path, width: usize, height: usize, rgb: &[Vec3<T>]) -> Result<()> {
    check_len(path, rgb.len(), width, height)?;
    let buf: Vec<u8> = rgb.iter().flat_map(|c| c.map(to_u8)).collect();
    let img = RgbImage::from_raw(width as u32, height as u32, buf).expect("buffer length checked");
    img.save(path)?;
    Ok(())
}

/// 8-bit grayscale PNG, values clamped to `[0, 1]`.
pub fn save_gray_png<T: Real>(path: &Path, width: usize, height: usize, values: &[T]) -> Result<()> {
    check_len(path, values.len(), width, height)?;
    let buf: Vec<u8> = values.iter().map(|&v| to_u8(v)).collect();
    let img = GrayImage::from_raw(width as u32, height as u32, buf).expect("buffer length checked");
    img.save(path)?;
    Ok(())
}

/// RGB image in `[0, 1]` as `(width, height, pixels)`.
pub fn load_rgb_png<T: Real>(path: &Path) -> Result<(usize, usize, Vec<Vec3<T>>)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let px = img.pixels().map(|p| p.0.map(|v| T::lit(v as f64 / 255.0))).collect();
    Ok((w as usize, h as usize, px))
}

/// Grayscale image in `[0, 1]` as `(width, height, values)`.
pub fn load_gray_png<T: Real>(path: &Path) -> Result<(usize, usize, Vec<T>)> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let px = img.pixels().map(|p| T::lit(p.0[0] as f64 / 255.0)).collect();
    Ok((w as usize, h as usize, px))
}

/// Little-endian `float32` NPY (format 1.0), C order.
pub fn write_npy<T: Real>(w: &mut impl Write, shape: &[usize], data: &[T]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::ShapeMismatch { op: "write_npy", lhs: shape.to_vec(), rhs: vec![data.len()] });
    }
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let tuple = if dims.len() == 1 { format!("({},)", dims[0]) } else { format!("({})", dims.join(", ")) };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {tuple}, }}");
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');
    w.write_all(b"\x93NUMPY\x01\x00")?;
    w.write_all(&(header.len() as u16).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    for &v in data {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn save_npy<T: Real>(path: &Path, shape: &[usize], data: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_npy(&mut f, shape, data)?;
    f.flush()?;
    Ok(())
}

/// Reads a `<f4` NPY written by [`write_npy`]: `(shape, data)`.
pub fn read_npy(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.to_string() };
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 10 || &bytes[..8] != b"\x93NUMPY\x01\x00" {
        return Err(bad("not an NPY 1.0 file"));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = std::str::from_utf8(bytes.get(10..10 + hlen).ok_or_else(|| bad("truncated header"))?).map_err(|_| bad("header is not UTF-8"))?;
    if !header.contains("'<f4'") || header.contains("'fortran_order': True") {
        return Err(bad("only little-endian float32 C-order arrays are supported"));
    }
    let open = header.find("'shape': (").ok_or_else(|| bad("missing shape"))? + 10;
    let close = open + header[open..].find(')').ok_or_else(|| bad("missing shape"))?;
    let shape = header[open..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape")))
        .collect::<Result<Vec<_>>>()?;
    let body = &bytes[10 + hlen..];
    let n: usize = shape.iter().product();
    if body.len() != n * 4 {
        return Err(bad("payload size does not match shape"));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((shape, data))
}
