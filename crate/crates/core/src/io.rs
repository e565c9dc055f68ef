//! Raster file formats: binary PGM (P5), 8-bit grayscale PNG and 16-bit label PNG.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::raster::Raster;

pub fn read_raster(path: &Path) -> Result<Raster> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    match extension(path).as_deref() {
        Some("pgm") => read_pgm(path),
        _ => read_png(path),
    }
}

pub fn write_raster(path: &Path, img: &Raster) -> Result<()> {
    match extension(path).as_deref() {
        Some("pgm") => write_pgm(path, img),
        _ => write_png(path, img),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

pub fn to_bytes(img: &Raster) -> Vec<u8> {
    img.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
}

pub fn write_pgm(path: &Path, img: &Raster) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", img.width(), img.height())?;
    f.write_all(&to_bytes(img))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes).map_err(|msg| Error::format(path, msg))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Raster, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Skip whitespace and comments.
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("expected P5 magic, found {:?}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field {s:?}: {e}"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(format!("only 8-bit PGM is supported, maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h;
    if bytes.len() < pos + need {
        return Err(format!(
            "expected {need} data bytes, found {}",
            bytes.len().saturating_sub(pos)
        ));
    }
    let scale = 255.0 / maxval as f32;
    let data = bytes[pos..pos + need].iter().map(|&b| b as f32 * scale).collect();
    Raster::from_vec(w, h, data).map_err(|e| e.to_string())
}

pub fn write_png(path: &Path, img: &Raster) -> Result<()> {
    let buf = GrayImage::from_raw(img.width() as u32, img.height() as u32, to_bytes(img))
        .expect("buffer length matches dimensions");
    buf.save(path)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Raster> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Raster::from_vec(
        w as usize,
        h as usize,
        img.into_raw().into_iter().map(|b| b as f32).collect(),
    )
}

/// Dense label map; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u16) {
        self.labels[y * self.width + x] = label;
    }

    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

pub fn write_label_png(path: &Path, map: &LabelMap) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, map.labels.clone())
            .expect("buffer length matches dimensions");
    buf.save(path)?;
    Ok(())
}

pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    Ok(LabelMap {
        width: w as usize,
        height: h as usize,
        labels: img.into_raw(),
    })
}
