//! Row-major grayscale images and binary PGM (P5) files.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> AppResult<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(AppError::Config(format!(
                "image of {rows}x{cols} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Image { rows, cols, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Image {
        let (r, c) = (self.rows * factor, self.cols * factor);
        let data = (0..r * c)
            .map(|k| self.data[(k / c / factor) * self.cols + (k % c) / factor])
            .collect();
        Image {
            rows: r,
            cols: c,
            data,
        }
    }
}

/// Smooth blob, bright rectangle and a low-frequency texture on a grey floor.
pub fn phantom(rows: usize, cols: usize) -> Image {
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let y = i as f64 / rows as f64;
            let x = j as f64 / cols as f64;
            let blob = 80.0 * (-((x - 0.3).powi(2) + (y - 0.35).powi(2)) / 0.02).exp();
            let rect = if (x - 0.65).abs() < 0.15 && (y - 0.6).abs() < 0.2 { 60.0 } else { 0.0 };
            let texture = 30.0 * (6.0 * x).sin() * (4.0 * y).cos();
            data.push(40.0 + blob + rect + texture);
        }
    }
    Image { rows, cols, data }
}

/// Writes a 16-bit binary PGM; values are rounded and clamped to `[0, 65535]`.
pub fn write_pgm(path: &Path, image: &Image) -> AppResult<()> {
    let mut bytes = format!("P5\n{} {}\n65535\n", image.cols, image.rows).into_bytes();
    bytes.reserve(image.data.len() * 2);
    for v in &image.data {
        let q = if v.is_finite() { v.round().clamp(0.0, 65535.0) as u16 } else { 0 };
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| AppError::io(path, e))
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

/// Reads an 8- or 16-bit binary PGM.
pub fn read_pgm(path: &Path) -> AppResult<Image> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AppError::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| AppError::Config(format!("{}: {msg}", path.display())))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Image, String> {
    if !bytes.starts_with(b"P5") {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut pos = 2;
    let cols = header_token(bytes, &mut pos).ok_or("bad width")?;
    let rows = header_token(bytes, &mut pos).ok_or("bad height")?;
    let maxval = header_token(bytes, &mut pos).ok_or("bad maxval")?;
    if cols == 0 || rows == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported header {cols}x{rows} max {maxval}"));
    }
    pos += 1;
    let wide = maxval > 255;
    let need = rows * cols * if wide { 2 } else { 1 };
    let body = bytes.get(pos..pos + need).ok_or("truncated pixel data")?;
    let data = if wide {
        body.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64).collect()
    } else {
        body.iter().map(|&b| b as f64).collect()
    };
    Ok(Image { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let img = Image::new(2, 3, vec![0.0, 1.4, 1.6, 65535.0, 70000.0, -3.0]).unwrap();
        write_pgm(&p, &img).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!(back.dims(), (2, 3));
        assert_eq!(back.data, vec![0.0, 1.0, 2.0, 65535.0, 65535.0, 0.0]);
    }

    #[test]
    fn eight_bit_with_comment() {
        let mut bytes = b"P5\n# hi\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 200]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.data, vec![7.0, 200.0]);
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n4 4\n255\n\x01").is_err());
    }

    #[test]
    fn nearest_upsampling() {
        let img = Image::new(1, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(img.upsample_nearest(2).data, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn phantom_is_positive_and_varied() {
        let p = phantom(32, 32);
        assert!(p.data.iter().all(|v| *v > 0.0));
        let max = p.data.iter().cloned().fold(f64::MIN, f64::max);
        let min = p.data.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min > 50.0);
    }
}
