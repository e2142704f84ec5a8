//! Feature-tensor interchange (FTZ) and 8-bit label-map PNG I/O.
//!
//! FTZ layout:
//!
//! ```text
//! 0..4      b"FTZ1"
//! 4..8      header length L, u32 little-endian
//! 8..8+L    UTF-8 JSON {"dtype":"f32","shape":[H,W,C],"layout":"HWC","meta":{..}}
//! 8+L..     H*W*C f32 little-endian, index ((h*W)+w)*C+c
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FTZ_MAGIC: &[u8; 4] = b"FTZ1";

/// Largest label value a [`LabelMap`] may hold. 255 is reserved.
pub const MAX_LABEL: u8 = 254;

/// An `H x W x C` grid of pixel features stored HWC-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    pub meta: BTreeMap<String, String>,
}

impl FeatureTensor {
    /// Builds a tensor, checking shape and finiteness.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidTensor(format!(
                "every dimension must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidTensor("shape overflows usize".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidTensor(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.width + w) * self.channels + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> f32 {
        self.data[self.index(h, w, c)]
    }

    /// Feature vector of one pixel.
    pub fn pixel(&self, h: usize, w: usize) -> &[f32] {
        let start = self.index(h, w, 0);
        &self.data[start..start + self.channels]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FtzHeader {
    dtype: String,
    shape: Vec<usize>,
    layout: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

/// Serializes a tensor to FTZ bytes.
pub fn encode_ftz(tensor: &FeatureTensor) -> Result<Vec<u8>> {
    if tensor.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let header = FtzHeader {
        dtype: "f32".into(),
        shape: vec![tensor.height, tensor.width, tensor.channels],
        layout: "HWC".into(),
        meta: tensor.meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::InvalidTensor("header longer than u32::MAX".into()))?;

    let mut out = Vec::with_capacity(8 + header.len() + tensor.data.len() * 4);
    out.extend_from_slice(FTZ_MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses FTZ bytes.
pub fn decode_ftz(bytes: &[u8]) -> Result<FeatureTensor> {
    if bytes.len() < 4 || &bytes[..4] != FTZ_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::HeaderMismatch("truncated header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::HeaderMismatch("truncated JSON header".into()))?;
    let header: FtzHeader = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| Error::HeaderMismatch(format!("invalid JSON header: {e}")))?;

    if header.dtype != "f32" {
        return Err(Error::HeaderMismatch(format!(
            "unsupported dtype `{}`",
            header.dtype
        )));
    }
    if header.layout != "HWC" {
        return Err(Error::HeaderMismatch(format!(
            "unsupported layout `{}`",
            header.layout
        )));
    }
    let [h, w, c] = header.shape[..] else {
        return Err(Error::HeaderMismatch(format!(
            "shape must have 3 entries, got {}",
            header.shape.len()
        )));
    };
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::HeaderMismatch(format!("empty shape {h}x{w}x{c}")));
    }
    let payload = &bytes[header_end..];
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::HeaderMismatch("shape overflows".into()))?;
    if count.checked_mul(4) != Some(payload.len()) {
        return Err(Error::HeaderMismatch(format!(
            "shape {h}x{w}x{c} needs {} payload bytes, found {}",
            count.saturating_mul(4),
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();

    let mut tensor = FeatureTensor::new(h, w, c, data)?;
    tensor.meta = header.meta;
    Ok(tensor)
}

pub fn read_ftz(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let bytes = fs::read(path)?;
    decode_ftz(&bytes)
}

/// Writes a tensor as FTZ. Nothing is written if the tensor holds NaN or Inf.
pub fn write_ftz(tensor: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_ftz(tensor)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Per-pixel integer labels, row-major, each `<= MAX_LABEL`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidTensor(format!(
                "label map must be non-empty, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::InvalidTensor(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > MAX_LABEL) {
            return Err(Error::LabelOutOfRange(bad as u32));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// Builds a map from wider integer labels, rejecting anything above [`MAX_LABEL`].
    pub fn from_usize(height: usize, width: usize, labels: &[usize]) -> Result<Self> {
        let narrowed = labels
            .iter()
            .map(|&l| {
                u8::try_from(l)
                    .ok()
                    .filter(|&v| v <= MAX_LABEL)
                    .ok_or(Error::LabelOutOfRange(l.min(u32::MAX as usize) as u32))
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(height, width, narrowed)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, h: usize, w: usize) -> u8 {
        self.labels[h * self.width + w]
    }

    /// Sorted distinct labels present in the map.
    pub fn distinct(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }
}

pub fn read_label_png(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (height, width, pixels) = read_gray8_png(path.as_ref())?;
    LabelMap::new(height, width, pixels)
}

pub fn write_label_png(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_gray8_png(path.as_ref(), map.height, map.width, &map.labels)
}

/// Writes an arbitrary 8-bit grayscale image (used for PC-map previews).
pub fn write_gray8_png(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != height * width {
        return Err(Error::DimMismatch(format!(
            "{} pixels for a {height}x{width} image",
            pixels.len()
        )));
    }
    let file = File::create(path)?;
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::InvalidTensor("image dimension exceeds u32".into()))
    };
    let mut encoder = png::Encoder::new(BufWriter::new(file), to_u32(width)?, to_u32(height)?);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(png_encode_err)?;
    writer.write_image_data(pixels).map_err(png_encode_err)?;
    writer.finish().map_err(png_encode_err)?;
    Ok(())
}

fn read_gray8_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path)?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_decode_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedPng(format!(
            "expected single-channel grayscale, found {:?}",
            info.color_type
        )));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedPng(format!(
            "expected 8-bit depth, found {:?}",
            info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; width * height];
    let frame = reader.next_frame(&mut buf).map_err(png_decode_err)?;
    if frame.line_size != width {
        return Err(Error::UnsupportedPng("unexpected scanline size".into()));
    }
    Ok((height, width, buf))
}

fn png_decode_err(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) => Error::Io(io),
        other => Error::UnsupportedPng(other.to_string()),
    }
}

fn png_encode_err(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::UnsupportedPng(other.to_string()),
    }
}
