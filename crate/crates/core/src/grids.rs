//! Texture grids and their on-disk formats.
//!
//! Axis order is `(row, col)` for 2D and `(depth, row, col)` for 3D, with
//! row-major storage. 2D textures are stored as 8-bit grayscale PNG; volumes
//! (and optionally 2D grids) use the SGRD container:
//!
//! ```text
//! 0..4   b"SGRD"
//! 4      version = 1
//! 5      ndim (2 or 3)
//! 6..    ndim little-endian u32 dims
//! ...    prod(dims) bytes of u8 phase values, row-major
//! ```

use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SGRD_MAGIC: &[u8; 4] = b"SGRD";
pub const SGRD_VERSION: u8 = 1;
const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ValueDomain {
    /// Phase indicator values, exactly 0 or 1.
    Binary01,
    /// Network range values in `[-1, 1]`.
    ModelRange,
}

/// A dense 2D or 3D texture.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureGrid<T: Scalar> {
    dims: Vec<usize>,
    data: Vec<T>,
    domain: ValueDomain,
    foreground: u8,
}

impl<T: Scalar> TextureGrid<T> {
    /// Builds a grid, checking every invariant of `domain`.
    pub fn new(dims: Vec<usize>, data: Vec<T>, domain: ValueDomain) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?} (product {len})",
                data.len(),
                dims
            )));
        }
        match domain {
            ValueDomain::Binary01 => {
                if let Some(v) = data.iter().find(|&&v| v != T::zero() && v != T::one()) {
                    return Err(Error::Domain(format!("binary grid holds value {v}")));
                }
            }
            ValueDomain::ModelRange => {
                if let Some(v) = data
                    .iter()
                    .find(|&&v| !v.is_finite() || v < -T::one() || v > T::one())
                {
                    return Err(Error::Domain(format!("model-range grid holds value {v}")));
                }
            }
        }
        Ok(TextureGrid {
            dims,
            data,
            domain,
            foreground: 1,
        })
    }

    /// Binary grid from raw phase bytes; any nonzero byte is phase 1.
    pub fn from_phases(dims: Vec<usize>, phases: &[u8]) -> Result<Self> {
        let data = phases
            .iter()
            .map(|&p| if p != 0 { T::one() } else { T::zero() })
            .collect();
        Self::new(dims, data, ValueDomain::Binary01)
    }

    /// Binary grid produced by `f(flat_index)`.
    pub fn binary_from_fn(dims: Vec<usize>, mut f: impl FnMut(usize) -> bool) -> Self {
        let len: usize = dims.iter().product();
        let data = (0..len)
            .map(|i| if f(i) { T::one() } else { T::zero() })
            .collect();
        Self::new(dims, data, ValueDomain::Binary01).expect("binary_from_fn dims are valid")
    }

    pub fn with_foreground(mut self, foreground: u8) -> Self {
        self.foreground = foreground;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn domain(&self) -> ValueDomain {
        self.domain
    }

    pub fn foreground(&self) -> u8 {
        self.foreground
    }

    /// Dims padded to `(depth, row, col)`; 2D grids have depth 1.
    pub fn dims3(&self) -> [usize; 3] {
        dims3(&self.dims)
    }

    /// Phase-of-interest indicator per cell (binary grids only).
    pub fn indicator(&self) -> Vec<bool> {
        let fg = if self.foreground == 0 { T::zero() } else { T::one() };
        self.data.iter().map(|&v| v == fg).collect()
    }

    /// Raw phase bytes (binary grids only).
    pub fn phases(&self) -> Result<Vec<u8>> {
        self.require(ValueDomain::Binary01)?;
        Ok(self
            .data
            .iter()
            .map(|&v| if v == T::one() { 1 } else { 0 })
            .collect())
    }

    pub fn convert<U: Scalar>(&self) -> TextureGrid<U> {
        TextureGrid {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::zero))
                .collect(),
            domain: self.domain,
            foreground: self.foreground,
        }
    }

    fn require(&self, domain: ValueDomain) -> Result<()> {
        if self.domain != domain {
            return Err(Error::Domain(format!(
                "expected a {domain:?} grid, got {:?}",
                self.domain
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_dims(dims: &[usize]) -> Result<()> {
    if !(2..=3).contains(&dims.len()) {
        return Err(Error::Shape(format!(
            "grids are 2D or 3D, got {} dims",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Shape(format!("zero-length axis in dims {dims:?}")));
    }
    Ok(())
}

pub(crate) fn dims3(dims: &[usize]) -> [usize; 3] {
    match *dims {
        [h, w] => [1, h, w],
        [d, h, w] => [d, h, w],
        _ => panic!("grids are 2D or 3D, got dims {dims:?}"),
    }
}

/// Maps phase 0 to -1 and phase 1 to +1.
pub fn to_model_range<T: Scalar>(grid: &TextureGrid<T>) -> Result<TextureGrid<T>> {
    grid.require(ValueDomain::Binary01)?;
    let data = grid
        .data
        .iter()
        .map(|&v| if v == T::one() { T::one() } else { -T::one() })
        .collect();
    Ok(TextureGrid {
        dims: grid.dims.clone(),
        data,
        domain: ValueDomain::ModelRange,
        foreground: grid.foreground,
    })
}

/// Thresholds a model-range grid: values strictly above `threshold` become 1.
pub fn binarize<T: Scalar>(grid: &TextureGrid<T>, threshold: f64) -> Result<TextureGrid<T>> {
    if !threshold.is_finite() {
        return Err(Error::Invalid(format!(
            "binarize threshold must be finite, got {threshold}"
        )));
    }
    grid.require(ValueDomain::ModelRange)?;
    let data = grid
        .data
        .iter()
        .map(|&v| {
            if v.to_f64_lossy() > threshold {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(TextureGrid {
        dims: grid.dims.clone(),
        data,
        domain: ValueDomain::Binary01,
        foreground: grid.foreground,
    })
}

/// Reads a grayscale PNG or an SGRD file (detected by magic bytes).
pub fn load_texture<T: Scalar>(path: impl AsRef<Path>) -> Result<TextureGrid<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(SGRD_MAGIC) {
        decode_sgrd(&bytes)
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(&bytes)
    } else {
        Err(Error::format(
            "magic",
            format!("{} is neither PNG nor SGRD", path.display()),
        ))
    }
}

/// Writes a binary grid; `.png` (2D only) or `.sgrd` chosen by extension.
pub fn save_texture<T: Scalar>(grid: &TextureGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let phases = grid.phases()?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let bytes = match ext.as_deref() {
        Some("png") => encode_png(grid.dims(), &phases)?,
        Some("sgrd") => encode_sgrd(grid.dims(), &phases),
        _ => {
            return Err(Error::Invalid(format!(
                "unsupported texture extension for {} (use .png or .sgrd)",
                path.display()
            )))
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_sgrd(dims: &[usize], phases: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * dims.len() + phases.len());
    out.extend_from_slice(SGRD_MAGIC);
    out.push(SGRD_VERSION);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend(phases.iter().map(|&p| (p != 0) as u8));
    out
}

pub fn decode_sgrd<T: Scalar>(bytes: &[u8]) -> Result<TextureGrid<T>> {
    if bytes.len() < 6 || &bytes[..4] != SGRD_MAGIC {
        return Err(Error::format("magic", "missing SGRD magic bytes"));
    }
    if bytes[4] != SGRD_VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported SGRD version {}", bytes[4]),
        ));
    }
    let ndim = bytes[5] as usize;
    if !(2..=3).contains(&ndim) {
        return Err(Error::format("ndim", format!("ndim must be 2 or 3, got {ndim}")));
    }
    let header = 6 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format("dims", "header truncated before all dims"));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(Error::format("dims", format!("zero-length axis in {dims:?}")));
    }
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::format(
            "payload length",
            format!(
                "dims {dims:?} require {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    TextureGrid::from_phases(dims, payload)
}

fn encode_png(dims: &[usize], phases: &[u8]) -> Result<Vec<u8>> {
    let [h, w] = match *dims {
        [h, w] => [h, w],
        _ => {
            return Err(Error::Invalid(format!(
                "PNG holds 2D grids only, got dims {dims:?}"
            )))
        }
    };
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut buf), w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format("png", e.to_string()))?;
        let pixels: Vec<u8> = phases.iter().map(|&p| if p != 0 { 255 } else { 0 }).collect();
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::format("png", e.to_string()))?;
        writer
            .finish()
            .map_err(|e| Error::format("png", e.to_string()))?;
    }
    Ok(buf)
}

fn decode_png<T: Scalar>(bytes: &[u8]) -> Result<TextureGrid<T>> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format("png", e.to_string()))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(Error::format(
            "color type",
            format!("expected grayscale PNG, got {color:?}"),
        ));
    }
    if depth != png::BitDepth::Eight {
        return Err(Error::format(
            "bit depth",
            format!("unsupported bit depth {depth:?}, expected 8"),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("png", "image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("png", e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut phases = Vec::with_capacity(w * h);
    for row in buf[..frame.buffer_size()].chunks_exact(frame.line_size) {
        phases.extend(row[..w].iter().map(|&p| (p > 127) as u8));
    }
    TextureGrid::from_phases(vec![h, w], &phases)
}
