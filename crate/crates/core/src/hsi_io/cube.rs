use std::fs;
use std::path::Path;

use super::HsiError;

const CUBE_MAGIC: [u8; 4] = *b"HSIC";
const LABEL_MAGIC: [u8; 4] = *b"HSIL";
const VERSION: u16 = 1;
const DTYPE_F32: u16 = 1;

/// `B×h×w` single-precision raster, band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(
        bands: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, HsiError> {
        if bands < 2 {
            return Err(HsiError::TooFewBands(bands));
        }
        if height == 0 || width == 0 {
            return Err(HsiError::InvalidDimensions(vec![bands, height, width]));
        }
        let expected = bands * height * width;
        if data.len() != expected {
            return Err(HsiError::Truncated {
                expected: expected * 4,
                found: data.len() * 4,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(HsiError::NonFinite(i));
        }
        Ok(Self {
            bands,
            height,
            width,
            data,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.bands, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[b * plane..(b + 1) * plane]
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.height + row) * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Label {
    Unchanged = 0,
    Changed = 1,
    Unlabeled = 2,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Unchanged),
            1 => Some(Label::Changed),
            2 => Some(Label::Unlabeled),
            _ => None,
        }
    }

    /// Class index for labelled pixels.
    pub fn class(self) -> Option<u8> {
        match self {
            Label::Unlabeled => None,
            l => Some(l as u8),
        }
    }
}

/// Per-pixel ground truth: 0 unchanged, 1 changed, 2 unlabelled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self, HsiError> {
        if height == 0 || width == 0 {
            return Err(HsiError::InvalidDimensions(vec![height, width]));
        }
        if values.len() != height * width {
            return Err(HsiError::Truncated {
                expected: height * width,
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, &v)| v > 2) {
            return Err(HsiError::InvalidLabel { value, index });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, label: Label) -> Self {
        Self::new(height, width, vec![label as u8; height * width]).expect("valid label")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Label {
        Label::from_u8(self.values[row * self.width + col]).expect("validated on construction")
    }

    pub fn set(&mut self, row: usize, col: usize, label: Label) {
        self.values[row * self.width + col] = label as u8;
    }

    pub fn count(&self, label: Label) -> usize {
        self.values.iter().filter(|&&v| v == label as u8).count()
    }

    /// Both classes present, i.e. something can be trained on the mask.
    pub fn is_trainable(&self) -> bool {
        self.count(Label::Unchanged) > 0 && self.count(Label::Changed) > 0
    }
}

/// Signed `t2 − t1`.
pub fn difference_image(t1: &HsiCube, t2: &HsiCube) -> Result<HsiCube, HsiError> {
    if t1.dims() != t2.dims() {
        return Err(HsiError::ShapeMismatch {
            left: t1.dims().to_vec(),
            right: t2.dims().to_vec(),
        });
    }
    let data = t1.data.iter().zip(&t2.data).map(|(a, b)| b - a).collect();
    HsiCube::new(t1.bands, t1.height, t1.width, data)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HsiError> {
        if self.pos + n > self.buf.len() {
            return Err(HsiError::Truncated {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<(), HsiError> {
        let bytes = self.take(4).map_err(|_| HsiError::BadMagic {
            expected,
            found: [0; 4],
        })?;
        let found: [u8; 4] = bytes.try_into().unwrap();
        if found != expected {
            return Err(HsiError::BadMagic { expected, found });
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16, HsiError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, HsiError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn payload(&mut self, n: usize) -> Result<&'a [u8], HsiError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(HsiError::Truncated {
                expected: n,
                found: rest,
            });
        }
        if rest > n {
            return Err(HsiError::TrailingBytes(rest - n));
        }
        self.take(n)
    }
}

fn version(r: &mut Reader<'_>) -> Result<(), HsiError> {
    let found = r.u16()?;
    if found != VERSION {
        return Err(HsiError::VersionMismatch {
            expected: VERSION,
            found,
        });
    }
    Ok(())
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube, HsiError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(CUBE_MAGIC)?;
    version(&mut r)?;
    let dtype = r.u16()?;
    if dtype != DTYPE_F32 {
        return Err(HsiError::UnsupportedDtype(dtype));
    }
    let (b, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if b < 2 {
        return Err(HsiError::TooFewBands(b));
    }
    let payload = r.payload(b * h * w * 4)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    HsiCube::new(b, h, w, data)
}

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + cube.data.len() * 4);
    out.extend_from_slice(&CUBE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for d in cube.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &cube.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsiCube, HsiError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HsiError::io(path, e))?;
    decode_cube(&bytes)
}

pub fn write_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<(), HsiError> {
    let path = path.as_ref();
    fs::write(path, encode_cube(cube)).map_err(|e| HsiError::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMask, HsiError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HsiError::io(path, e))?;
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
    };
    r.magic(LABEL_MAGIC)?;
    version(&mut r)?;
    let (h, w) = (r.u32()? as usize, r.u32()? as usize);
    let payload = r.payload(h * w)?;
    LabelMask::new(h, w, payload.to_vec())
}

pub fn write_labels(mask: &LabelMask, path: impl AsRef<Path>) -> Result<(), HsiError> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(14 + mask.values.len());
    out.extend_from_slice(&LABEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mask.height as u32).to_le_bytes());
    out.extend_from_slice(&(mask.width as u32).to_le_bytes());
    out.extend_from_slice(&mask.values);
    fs::write(path, out).map_err(|e| HsiError::io(path, e))
}
