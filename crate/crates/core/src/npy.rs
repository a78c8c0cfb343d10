//! Reading and writing in the numpy npy format (version 1.0 only).
//!
//! Only little-endian C-order arrays of a handful of element types are
//! supported; that covers the image, label and prediction files of the
//! dataset. Fortran-order files are rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{ClassMap, Image, InstanceMap, MAX_CLASS_ID};

/// The npy magic number.
pub const MAGIC: [u8; 6] = *b"\x93NUMPY";
const PREAMBLE_LEN: usize = MAGIC.len() + 2 + 2;
const ALIGN: usize = 64;

/// Supported element types, named by their npy `descr` string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::U8 => "|u1",
            Dtype::U16 => "<u2",
            Dtype::I32 => "<i4",
            Dtype::U32 => "<u4",
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    pub fn from_descr(descr: &str) -> Result<Self> {
        Ok(match descr {
            "|u1" | "<u1" => Dtype::U8,
            "<u2" => Dtype::U16,
            "<i4" => Dtype::I32,
            "<u4" => Dtype::U32,
            "<f4" => Dtype::F32,
            "<f8" => Dtype::F64,
            other => return Err(Error::UnsupportedDtype(other.to_string())),
        })
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::I32 | Dtype::U32 | Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Decoded element buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    I32(Vec<i32>),
    U32(Vec<u32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl NpyData {
    pub fn dtype(&self) -> Dtype {
        match self {
            NpyData::U8(_) => Dtype::U8,
            NpyData::U16(_) => Dtype::U16,
            NpyData::I32(_) => Dtype::I32,
            NpyData::U32(_) => Dtype::U32,
            NpyData::F32(_) => Dtype::F32,
            NpyData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NpyData::U8(v) => v.len(),
            NpyData::U16(v) => v.len(),
            NpyData::I32(v) => v.len(),
            NpyData::U32(v) => v.len(),
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            NpyData::U8(v) => out.extend_from_slice(v),
            NpyData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: Dtype, bytes: &[u8]) -> Self {
        fn chunks<const N: usize, T>(bytes: &[u8], f: fn([u8; N]) -> T) -> Vec<T> {
            bytes.chunks_exact(N).map(|c| f(c.try_into().expect("exact chunk"))).collect()
        }
        match dtype {
            Dtype::U8 => NpyData::U8(bytes.to_vec()),
            Dtype::U16 => NpyData::U16(chunks(bytes, u16::from_le_bytes)),
            Dtype::I32 => NpyData::I32(chunks(bytes, i32::from_le_bytes)),
            Dtype::U32 => NpyData::U32(chunks(bytes, u32::from_le_bytes)),
            Dtype::F32 => NpyData::F32(chunks(bytes, f32::from_le_bytes)),
            Dtype::F64 => NpyData::F64(chunks(bytes, f64::from_le_bytes)),
        }
    }

    /// Widens every element to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            NpyData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::U16(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::I32(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::U32(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::F64(v) => v.clone(),
        }
    }
}

/// A C-order array with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    shape: Vec<usize>,
    data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {expected} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &NpyData {
        &self.data
    }

    pub fn into_data(self) -> NpyData {
        self.data
    }
}

/// The parsed header dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyHeader {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

impl NpyHeader {
    fn dict_string(&self) -> String {
        let shape = match self.shape.as_slice() {
            [] => "()".to_string(),
            [n] => format!("({n},)"),
            dims => format!("({})", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
        };
        let fortran = if self.fortran_order { "True" } else { "False" };
        format!("{{'descr': '{}', 'fortran_order': {}, 'shape': {}, }}", self.descr, fortran, shape)
    }

    /// Encodes magic, version, length field and padded dict.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dict = self.dict_string();
        // dict + padding + '\n' must end on an ALIGN boundary.
        let unpadded = PREAMBLE_LEN + dict.len() + 1;
        let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
        let header_len = dict.len() + padding + 1;
        let mut out = Vec::with_capacity(PREAMBLE_LEN + header_len);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header_len as u16).to_le_bytes());
        out.extend_from_slice(dict.as_bytes());
        out.extend(std::iter::repeat_n(b' ', padding));
        out.push(b'\n');
        out
    }

    /// Parses the preamble and dict, returning the header and payload offset.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < PREAMBLE_LEN || bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        let (major, minor) = (bytes[6], bytes[7]);
        if (major, minor) != (1, 0) {
            return Err(Error::UnsupportedVersion(major, minor));
        }
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let end = PREAMBLE_LEN + header_len;
        if bytes.len() < end {
            return Err(Error::MalformedHeader("header extends past end of stream".into()));
        }
        let text = std::str::from_utf8(&bytes[PREAMBLE_LEN..end])
            .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
        Ok((parse_dict(text)?, end))
    }
}

/// Minimal parser for the python literal dict numpy writes.
fn parse_dict(text: &str) -> Result<NpyHeader> {
    let malformed = |m: &str| Error::MalformedHeader(m.to_string());
    let body = text
        .trim_end_matches(['\n', ' ', '\0'])
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| malformed("dict braces missing"))?;

    let mut descr = None;
    let mut fortran_order = None;
    let mut shape = None;

    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest).ok_or_else(|| malformed("expected quoted key"))?;
        let after = after.trim_start().strip_prefix(':').ok_or_else(|| malformed("expected ':'"))?;
        let after = after.trim_start();
        let after = match key {
            "descr" => {
                let (v, a) = take_quoted(after).ok_or_else(|| malformed("descr must be a string"))?;
                descr = Some(v.to_string());
                a
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("True") {
                    fortran_order = Some(true);
                    a
                } else if let Some(a) = after.strip_prefix("False") {
                    fortran_order = Some(false);
                    a
                } else {
                    return Err(malformed("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let inner = after.strip_prefix('(').ok_or_else(|| malformed("shape must be a tuple"))?;
                let close = inner.find(')').ok_or_else(|| malformed("unterminated shape"))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.trim_end_matches('L').parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| malformed("shape entries must be integers"))?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(malformed(&format!("unexpected key {other:?}"))),
        };
        let after = after.trim_start();
        rest = after.strip_prefix(',').unwrap_or(after).trim_start();
    }

    Ok(NpyHeader {
        descr: descr.ok_or_else(|| malformed("missing descr"))?,
        fortran_order: fortran_order.ok_or_else(|| malformed("missing fortran_order"))?,
        shape: shape.ok_or_else(|| malformed("missing shape"))?,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}

/// Decodes a complete npy stream.
pub fn read_npy(bytes: &[u8]) -> Result<NpyArray> {
    let (header, offset) = NpyHeader::parse(bytes)?;
    let dtype = Dtype::from_descr(&header.descr)?;
    if header.fortran_order {
        return Err(Error::FortranOrder);
    }
    let count: usize = header.shape.iter().product();
    let expected = count * dtype.size();
    let payload = &bytes[offset..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload { expected, actual: payload.len() });
    }
    let data = NpyData::read_le(dtype, &payload[..expected]);
    NpyArray::new(header.shape, data)
}

/// Encodes an array as a version 1.0, C-order npy stream.
pub fn write_npy(array: &NpyArray) -> Vec<u8> {
    let header =
        NpyHeader { descr: array.dtype().descr().to_string(), fortran_order: false, shape: array.shape.clone() };
    let mut out = header.to_bytes();
    out.reserve(array.data.len() * array.dtype().size());
    array.data.write_le(&mut out);
    out
}

pub fn read_npy_file(path: impl AsRef<Path>) -> Result<NpyArray> {
    read_npy(&fs::read(path)?)
}

pub fn write_npy_file(path: impl AsRef<Path>, array: &NpyArray) -> Result<()> {
    fs::write(path, write_npy(array))?;
    Ok(())
}

/// Converts an integer label array to `u32`, rejecting negatives and floats.
pub fn labels_to_u32(data: &NpyData) -> Result<Vec<u32>> {
    match data {
        NpyData::U8(v) => Ok(v.iter().map(|&x| x as u32).collect()),
        NpyData::U16(v) => Ok(v.iter().map(|&x| x as u32).collect()),
        NpyData::U32(v) => Ok(v.clone()),
        NpyData::I32(v) => v
            .iter()
            .map(|&x| u32::try_from(x).map_err(|_| Error::InvalidRaster(format!("negative label {x}"))))
            .collect(),
        other => Err(Error::UnsupportedDtype(format!("{} for labels", other.dtype().descr()))),
    }
}

/// Paired image/label arrays in the Lizard layout:
/// images `(N,H,W,3)` u8, labels `(N,H,W,2)` with instance ids then class ids.
#[derive(Debug, Clone)]
pub struct Dataset {
    n_samples: usize,
    height: usize,
    width: usize,
    images: Vec<u8>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn from_arrays(images: &NpyArray, labels: &NpyArray) -> Result<Self> {
        let (n_img, h, w) = match (images.shape(), images.data()) {
            ([n, h, w, 3], NpyData::U8(_)) => (*n, *h, *w),
            (shape, data) => {
                return Err(Error::ShapeMismatch(format!(
                    "images must be (N,H,W,3) |u1, got {shape:?} {}",
                    data.dtype().descr()
                )))
            }
        };
        let (n_lab, lh, lw) = match labels.shape() {
            [n, h, w, 2] => (*n, *h, *w),
            shape => return Err(Error::ShapeMismatch(format!("labels must be (N,H,W,2), got {shape:?}"))),
        };
        if n_img != n_lab {
            return Err(Error::SampleCountMismatch { images: n_img, labels: n_lab });
        }
        if (h, w) != (lh, lw) {
            return Err(Error::ShapeMismatch(format!("image size {h}x{w} differs from label size {lh}x{lw}")));
        }
        let label_values = labels_to_u32(labels.data())?;
        if let Some(&bad) = label_values.iter().skip(1).step_by(2).find(|&&c| c > MAX_CLASS_ID as u32) {
            return Err(Error::ClassIdOutOfRange(bad as u64));
        }
        let NpyData::U8(pixels) = images.data() else { unreachable!("checked above") };
        Ok(Self { n_samples: n_img, height: h, width: w, images: pixels.clone(), labels: label_values })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image(&self, index: usize) -> Result<Image<u8>> {
        self.check_index(index)?;
        let n = self.height * self.width * 3;
        Image::new(self.height, self.width, 3, self.images[index * n..(index + 1) * n].to_vec())
    }

    pub fn labels(&self, index: usize) -> Result<(InstanceMap, ClassMap)> {
        self.check_index(index)?;
        let n = self.height * self.width;
        let chunk = &self.labels[index * 2 * n..(index + 1) * 2 * n];
        let inst = chunk.iter().step_by(2).copied().collect();
        let cls = chunk.iter().skip(1).step_by(2).map(|&c| c as u8).collect();
        Ok((InstanceMap::new(self.height, self.width, inst)?, ClassMap::new(self.height, self.width, cls)?))
    }

    pub fn get(&self, index: usize) -> Result<(Image<u8>, InstanceMap, ClassMap)> {
        let img = self.image(index)?;
        let (inst, cls) = self.labels(index)?;
        Ok((img, inst, cls))
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.n_samples {
            return Err(Error::IndexOutOfBounds { index, len: self.n_samples });
        }
        Ok(())
    }
}

pub fn load_dataset(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_npy_file(images_path)?;
    let labels = read_npy_file(labels_path)?;
    Dataset::from_arrays(&images, &labels)
}

/// Splits an `(N,H,W,C)` u8 array into images.
pub fn images_from_array(array: &NpyArray) -> Result<Vec<Image<u8>>> {
    let (&[n, h, w, c], NpyData::U8(pixels)) = (array.shape(), array.data()) else {
        return Err(Error::ShapeMismatch(format!(
            "images must be (N,H,W,C) |u1, got {:?} {}",
            array.shape(),
            array.dtype().descr()
        )));
    };
    let per = h * w * c;
    (0..n).map(|i| Image::new(h, w, c, pixels[i * per..(i + 1) * per].to_vec())).collect()
}

/// Packs equally sized images into an `(N,H,W,C)` u8 array.
pub fn images_to_array(images: &[Image<u8>]) -> Result<NpyArray> {
    let (h, w, c) = match images.first() {
        Some(img) => (img.height(), img.width(), img.channels()),
        None => (0, 0, 0),
    };
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if (img.height(), img.width(), img.channels()) != (h, w, c) {
            return Err(Error::ShapeMismatch("images differ in size".into()));
        }
        data.extend_from_slice(img.data());
    }
    NpyArray::new(vec![images.len(), h, w, c], NpyData::U8(data))
}

/// Reads a `(N,H,W,2)` label array into per-sample instance/class maps.
pub fn label_array_to_maps(labels: &NpyArray) -> Result<Vec<(InstanceMap, ClassMap)>> {
    let [n, h, w, 2] = *labels.shape() else {
        return Err(Error::ShapeMismatch(format!("labels must be (N,H,W,2), got {:?}", labels.shape())));
    };
    let values = labels_to_u32(labels.data())?;
    let per = h * w * 2;
    (0..n)
        .map(|i| {
            let chunk = &values[i * per..(i + 1) * per];
            let inst = chunk.iter().step_by(2).copied().collect();
            let cls = chunk
                .iter()
                .skip(1)
                .step_by(2)
                .map(|&c| u8::try_from(c).map_err(|_| Error::ClassIdOutOfRange(c as u64)))
                .collect::<Result<Vec<u8>>>()?;
            Ok((InstanceMap::new(h, w, inst)?, ClassMap::new(h, w, cls)?))
        })
        .collect()
}

/// Packs per-sample maps into a `(N,H,W,2)` `<i4` label array.
pub fn maps_to_label_array(maps: &[(InstanceMap, ClassMap)]) -> Result<NpyArray> {
    let (h, w) = match maps.first() {
        Some((inst, _)) => (inst.height(), inst.width()),
        None => (0, 0),
    };
    let mut data = Vec::with_capacity(maps.len() * h * w * 2);
    for (inst, cls) in maps {
        if inst.height() != h || inst.width() != w || cls.height() != h || cls.width() != w {
            return Err(Error::ShapeMismatch("label maps differ in size".into()));
        }
        for (&l, &c) in inst.labels().iter().zip(cls.classes()) {
            let l = i32::try_from(l).map_err(|_| Error::InvalidRaster(format!("label {l} exceeds i32")))?;
            data.push(l);
            data.push(c as i32);
        }
    }
    NpyArray::new(vec![maps.len(), h, w, 2], NpyData::I32(data))
}
