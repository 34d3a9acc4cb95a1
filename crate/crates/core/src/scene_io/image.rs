//! PFM and PNG images.
//!
//! In memory, rows run top to bottom. PFM files store rows bottom-up with a
//! negative scale for little-endian data.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::{ColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::raster::Texture;
use crate::shading::srgb;

#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major from the top row, channels innermost.
    pub data: Vec<f32>,
}

/// Transfer function of stored 8/16-bit values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    Srgb,
    Linear,
}

impl HdrImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels || width == 0 || height == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!("image {width}x{height}x{channels} given {} values", data.len())));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn from_rgb(width: usize, height: usize, rgb: &[f64]) -> Result<Self> {
        Self::new(width, height, 3, rgb.iter().map(|&v| v as f32).collect())
    }

    /// RGB values as `f64`; grey images are replicated.
    pub fn rgb(&self) -> Vec<f64> {
        match self.channels {
            3 => self.data.iter().map(|&v| v as f64).collect(),
            1 => self.data.iter().flat_map(|&v| [v as f64; 3]).collect(),
            c => self.data.chunks_exact(c).flat_map(|p| [p[0] as f64, p[1] as f64, p[2 % c] as f64]).collect(),
        }
    }

    /// Texture with row 0 at `v = 0`, i.e. the bottom image row.
    pub fn to_texture(&self) -> Texture<f64> {
        let row = self.width * self.channels;
        let data = self.data.chunks_exact(row).rev().flatten().map(|&v| v as f64).collect();
        Texture { width: self.width, height: self.height, channels: self.channels, data }
    }

    pub fn from_texture(t: &Texture<f64>) -> Self {
        let row = t.width * t.channels;
        let data = t.data.chunks_exact(row).rev().flatten().map(|&v| v as f32).collect();
        Self { width: t.width, height: t.height, channels: t.channels, data }
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), msg: msg.into() }
}

pub(crate) fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })
}

fn header_token<R: BufRead>(r: &mut R, path: &Path) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(format_err(path, "truncated PFM header"));
        }
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
        if tok.len() > 64 {
            return Err(format_err(path, "malformed PFM header"));
        }
    }
    String::from_utf8(tok).map_err(|_| format_err(path, "malformed PFM header"))
}

pub fn read_pfm(path: &Path) -> Result<HdrImage> {
    let mut r = BufReader::new(open(path)?);
    let channels = match header_token(&mut r, path)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        m => return Err(format_err(path, format!("unknown PFM magic `{m}`"))),
    };
    let parse = |s: String| s.parse::<usize>().map_err(|_| format_err(path, format!("bad PFM extent `{s}`")));
    let width = parse(header_token(&mut r, path)?)?;
    let height = parse(header_token(&mut r, path)?)?;
    let scale: f64 = header_token(&mut r, path)?.parse().map_err(|_| format_err(path, "bad PFM scale"))?;
    if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
        return Err(format_err(path, "bad PFM header values"));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let mut bytes = vec![0u8; row * height * 4];
    r.read_exact(&mut bytes).map_err(|_| format_err(path, "truncated PFM data"))?;
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let data = floats.chunks_exact(row).rev().flatten().copied().collect();
    HdrImage::new(width, height, channels, data)
}

pub fn write_pfm(path: &Path, img: &HdrImage) -> Result<()> {
    let magic = match img.channels {
        3 => "PF",
        1 => "Pf",
        c => return Err(format_err(path, format!("PFM holds 1 or 3 channels, not {c}"))),
    };
    let mut out = Vec::with_capacity(img.data.len() * 4 + 32);
    write!(out, "{magic}\n{} {}\n-1.0\n", img.width, img.height)?;
    for row in img.data.chunks_exact(img.width * img.channels).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Inverse of the sRGB transfer function.
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn read_png(path: &Path, space: ColorSpace) -> Result<HdrImage> {
    let img = image::io::Reader::new(BufReader::new(open(path)?))
        .with_guessed_format()
        .map_err(Error::Io)?
        .decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data, max): (usize, Vec<f64>, f64) = match img.color() {
        ColorType::L8 => (1, img.into_luma8().into_raw().into_iter().map(f64::from).collect(), 255.0),
        ColorType::La8 => (2, img.into_luma_alpha8().into_raw().into_iter().map(f64::from).collect(), 255.0),
        ColorType::Rgb8 => (3, img.into_rgb8().into_raw().into_iter().map(f64::from).collect(), 255.0),
        ColorType::Rgba8 => (4, img.into_rgba8().into_raw().into_iter().map(f64::from).collect(), 255.0),
        ColorType::L16 => (1, img.into_luma16().into_raw().into_iter().map(f64::from).collect(), 65535.0),
        ColorType::La16 => (2, img.into_luma_alpha16().into_raw().into_iter().map(f64::from).collect(), 65535.0),
        ColorType::Rgb16 => (3, img.into_rgb16().into_raw().into_iter().map(f64::from).collect(), 65535.0),
        ColorType::Rgba16 => (4, img.into_rgba16().into_raw().into_iter().map(f64::from).collect(), 65535.0),
        c => return Err(format_err(path, format!("unsupported PNG color type {c:?}"))),
    };
    // alpha is always stored linearly
    let has_alpha = channels == 2 || channels == 4;
    let data = data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let x = v / max;
            let alpha = has_alpha && i % channels == channels - 1;
            (if space == ColorSpace::Srgb && !alpha { srgb_to_linear(x) } else { x }) as f32
        })
        .collect();
    HdrImage::new(w, h, channels, data)
}

/// Writes 8- or 16-bit PNG, clamping to [0, 1] after the transfer function.
pub fn write_png(path: &Path, img: &HdrImage, space: ColorSpace, bits: u8) -> Result<()> {
    let color = match (img.channels, bits) {
        (1, 8) => ColorType::L8,
        (2, 8) => ColorType::La8,
        (3, 8) => ColorType::Rgb8,
        (4, 8) => ColorType::Rgba8,
        (1, 16) => ColorType::L16,
        (2, 16) => ColorType::La16,
        (3, 16) => ColorType::Rgb16,
        (4, 16) => ColorType::Rgba16,
        (c, b) => return Err(format_err(path, format!("unsupported PNG layout: {c} channels at {b} bits"))),
    };
    let c = img.channels;
    let has_alpha = c == 2 || c == 4;
    let encode = |i: usize, v: f32| {
        let v = v as f64;
        let alpha = has_alpha && i % c == c - 1;
        let v = if space == ColorSpace::Srgb && !alpha { srgb(v.max(0.0)) } else { v };
        v.clamp(0.0, 1.0)
    };
    let file = std::fs::File::create(path)?;
    let enc = image::codecs::png::PngEncoder::new(std::io::BufWriter::new(file));
    let (w, h) = (img.width as u32, img.height as u32);
    if bits == 8 {
        let raw: Vec<u8> = img.data.iter().enumerate().map(|(i, &v)| (encode(i, v) * 255.0).round() as u8).collect();
        enc.write_image(&raw, w, h, color)?;
    } else {
        let raw: Vec<u8> = img
            .data
            .iter()
            .enumerate()
            .flat_map(|(i, &v)| ((encode(i, v) * 65535.0).round() as u16).to_be_bytes())
            .collect();
        enc.write_image(&raw, w, h, color)?;
    }
    Ok(())
}

/// Reads a linear HDR image: PFM as stored, PNG linearized from sRGB.
pub fn read_hdr(path: &Path) -> Result<HdrImage> {
    match extension(path).as_str() {
        "pfm" => read_pfm(path),
        "png" => read_png(path, ColorSpace::Srgb),
        e => Err(format_err(path, format!("unsupported image extension `{e}`"))),
    }
}

pub(crate) fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Loads a texture; PNG values are decoded with `space`.
pub fn load_texture(path: &Path, space: ColorSpace) -> Result<Texture<f64>> {
    let img = match extension(path).as_str() {
        "pfm" => read_pfm(path)?,
        "png" => read_png(path, space)?,
        e => return Err(format_err(path, format!("unsupported texture extension `{e}`"))),
    };
    Ok(img.to_texture())
}

/// Saves a texture as PFM or PNG (16-bit); PNG values are encoded with `space`.
pub fn save_texture(path: &Path, t: &Texture<f64>, space: ColorSpace) -> Result<()> {
    let img = HdrImage::from_texture(t);
    match extension(path).as_str() {
        "pfm" => write_pfm(path, &img),
        "png" => write_png(path, &img, space, 16),
        e => Err(format_err(path, format!("unsupported texture extension `{e}`"))),
    }
}
