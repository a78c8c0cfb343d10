//! Raster and label types shared by every stage of the pipeline.
//!
//! All rasters are row-major. Multi-channel images are channel-interleaved
//! (`H×W×C`), which is the layout of the NPY payloads in the dataset.

use std::collections::BTreeMap;
use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Element type that may live in an [`Image`] or [`Plane`].
pub trait Pixel: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    fn is_valid(&self) -> bool {
        true
    }
}

impl Pixel for u8 {}
impl Pixel for u16 {}
impl Pixel for u32 {}

impl Pixel for f32 {
    fn is_valid(&self) -> bool {
        self.is_finite()
    }
}

impl Pixel for f64 {
    fn is_valid(&self) -> bool {
        self.is_finite()
    }
}

/// A single-channel `H×W` raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<P> {
    height: usize,
    width: usize,
    data: Vec<P>,
}

impl<P: Pixel> Plane<P> {
    pub fn new(height: usize, width: usize, data: Vec<P>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidRaster(format!(
                "plane buffer has {} elements, expected {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_valid()) {
            return Err(Error::InvalidRaster(format!("non-finite value {bad:?}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: P) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> P) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> P {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[P] {
        &self.data
    }

    pub fn into_data(self) -> Vec<P> {
        self.data
    }

    pub fn same_shape<Q>(&self, other: &Plane<Q>) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// An `H×W×C` raster with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<P> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<P>,
}

impl<P: Pixel> Image<P> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<P>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidRaster("image must have at least one channel".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidRaster(format!(
                "image buffer has {} elements, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_valid()) {
            return Err(Error::InvalidRaster(format!("non-finite value {bad:?}")));
        }
        Ok(Self { height, width, channels, data })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> P {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn data(&self) -> &[P] {
        &self.data
    }

    pub fn into_data(self) -> Vec<P> {
        self.data
    }

    /// Splits the image into one plane per channel, in channel order.
    pub fn split_channels(&self) -> Vec<Plane<P>> {
        (0..self.channels)
            .map(|c| Plane {
                height: self.height,
                width: self.width,
                data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
            })
            .collect()
    }

    /// Copies one channel out as a plane.
    pub fn channel(&self, c: usize) -> Plane<P> {
        assert!(c < self.channels, "channel {c} out of range");
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Interleaves planes into an image; channel `k` is `planes[k]`.
    pub fn merge_channels(planes: &[Plane<P>]) -> Result<Self> {
        let first = planes.first().ok_or(Error::InconsistentPlaneShapes)?;
        if planes.iter().any(|p| !p.same_shape(first)) {
            return Err(Error::InconsistentPlaneShapes);
        }
        let channels = planes.len();
        let n = first.height * first.width;
        let mut data = Vec::with_capacity(n * channels);
        for i in 0..n {
            data.extend(planes.iter().map(|p| p.data[i]));
        }
        Ok(Self { height: first.height, width: first.width, channels, data })
    }
}

/// Free-function form of [`Image::split_channels`].
pub fn split_channels<P: Pixel>(img: &Image<P>) -> Vec<Plane<P>> {
    img.split_channels()
}

/// Free-function form of [`Image::merge_channels`].
pub fn merge_channels<P: Pixel>(planes: &[Plane<P>]) -> Result<Image<P>> {
    Image::merge_channels(planes)
}

/// Nucleus types of the Lizard/CoNiC label set. Discriminants are the class ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum NucleusClass {
    Neutrophil = 1,
    Epithelial = 2,
    Lymphocyte = 3,
    Plasma = 4,
    Eosinophil = 5,
    Connective = 6,
}

impl NucleusClass {
    pub const ALL: [NucleusClass; 6] = [
        NucleusClass::Neutrophil,
        NucleusClass::Epithelial,
        NucleusClass::Lymphocyte,
        NucleusClass::Plasma,
        NucleusClass::Eosinophil,
        NucleusClass::Connective,
    ];

    /// Column order used by the evaluation report.
    pub const REPORT_ORDER: [NucleusClass; 6] = [
        NucleusClass::Plasma,
        NucleusClass::Neutrophil,
        NucleusClass::Epithelial,
        NucleusClass::Lymphocyte,
        NucleusClass::Eosinophil,
        NucleusClass::Connective,
    ];

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get((id as usize).wrapping_sub(1)).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            NucleusClass::Neutrophil => "neu",
            NucleusClass::Epithelial => "epi",
            NucleusClass::Lymphocyte => "lym",
            NucleusClass::Plasma => "pla",
            NucleusClass::Eosinophil => "eos",
            NucleusClass::Connective => "con",
        }
    }
}

/// Highest valid class id (0 is background).
pub const MAX_CLASS_ID: u8 = 6;
/// Number of class slots including background.
pub const NUM_CLASS_SLOTS: usize = 7;

/// Per-pixel instance labels. 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl InstanceMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::InvalidRaster(format!(
                "instance map has {} labels, expected {}x{}",
                labels.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, labels: vec![0; height * width] }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u32> {
        self.labels
    }

    /// Pixel count per positive id, ordered by id.
    pub fn areas(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for &l in self.labels.iter().filter(|&&l| l > 0) {
            *out.entry(l).or_insert(0) += 1;
        }
        out
    }

    /// Sorted list of positive ids present.
    pub fn ids(&self) -> Vec<u32> {
        self.areas().into_keys().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }

    /// Binary support as a `{0,1}` plane.
    pub fn support(&self) -> Plane<u8> {
        Plane { height: self.height, width: self.width, data: self.labels.iter().map(|&l| u8::from(l > 0)).collect() }
    }

    pub fn same_shape(&self, other: &InstanceMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Per-pixel class ids in `0..=6`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassMap {
    height: usize,
    width: usize,
    classes: Vec<u8>,
}

impl ClassMap {
    pub fn new(height: usize, width: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(Error::InvalidRaster(format!(
                "class map has {} entries, expected {}x{}",
                classes.len(),
                height,
                width
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c > MAX_CLASS_ID) {
            return Err(Error::ClassIdOutOfRange(bad as u64));
        }
        Ok(Self { height, width, classes })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, classes: vec![0; height * width] }
    }

    /// Paints each instance with its class; `classes[k]` belongs to `ids[k]`.
    pub fn from_instances(instances: &InstanceMap, ids: &[u32], classes: &[u8]) -> Result<Self> {
        if ids.len() != classes.len() {
            return Err(Error::ShapeMismatch("instance ids vs classes".into()));
        }
        let lookup: BTreeMap<u32, u8> = ids.iter().copied().zip(classes.iter().copied()).collect();
        let data =
            instances.labels().iter().map(|l| if *l == 0 { 0 } else { lookup.get(l).copied().unwrap_or(0) }).collect();
        Self::new(instances.height(), instances.width(), data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn into_classes(self) -> Vec<u8> {
        self.classes
    }
}

/// Horizontal and vertical centroid-offset maps, each `H×W` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoVerMaps<T> {
    height: usize,
    width: usize,
    h: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> HoVerMaps<T> {
    pub fn new(height: usize, width: usize, h: Vec<T>, v: Vec<T>) -> Result<Self> {
        let n = height * width;
        if h.len() != n || v.len() != n {
            return Err(Error::InvalidRaster(format!(
                "hover maps have {}/{} values, expected {}x{}",
                h.len(),
                v.len(),
                height,
                width
            )));
        }
        if h.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidRaster("non-finite hover value".into()));
        }
        Ok(Self { height, width, h, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, h: vec![T::zero(); height * width], v: vec![T::zero(); height * width] }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn h(&self) -> &[T] {
        &self.h
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<T>) {
        (self.h, self.v)
    }
}
