//! Contrast enhancement and multi-color-space channel stacking.
//!
//! The network input is built from the three RGB channels plus HSV saturation
//! and the two YCrCb chroma channels (BT.601 full range, 8-bit offsets).

use std::fmt;
use std::str::FromStr;

use crate::border::reflect101;
use crate::error::{Error, Result};
use crate::raster::{Image, Plane};

/// A single output channel of the stacked image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorSelector {
    B,
    G,
    R,
    /// HSV saturation.
    S,
    /// YCrCb red-difference chroma.
    Cr,
    /// YCrCb blue-difference chroma.
    Cb,
}

impl ColorSelector {
    pub const DEFAULT_ORDER: [ColorSelector; 6] =
        [ColorSelector::B, ColorSelector::G, ColorSelector::R, ColorSelector::S, ColorSelector::Cr, ColorSelector::Cb];

    fn is_rgb(self) -> bool {
        matches!(self, ColorSelector::R | ColorSelector::G | ColorSelector::B)
    }

    /// Value of this channel for one RGB pixel.
    #[inline]
    pub fn pixel(self, r: u8, g: u8, b: u8) -> u8 {
        match self {
            ColorSelector::R => r,
            ColorSelector::G => g,
            ColorSelector::B => b,
            ColorSelector::S => saturation(r, g, b),
            ColorSelector::Cr => chroma_cr(r, g, b),
            ColorSelector::Cb => chroma_cb(r, g, b),
        }
    }
}

impl fmt::Display for ColorSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorSelector::B => "B",
            ColorSelector::G => "G",
            ColorSelector::R => "R",
            ColorSelector::S => "S",
            ColorSelector::Cr => "Cr",
            ColorSelector::Cb => "Cb",
        })
    }
}

impl FromStr for ColorSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "B" => ColorSelector::B,
            "G" => ColorSelector::G,
            "R" => ColorSelector::R,
            "S" => ColorSelector::S,
            "Cr" => ColorSelector::Cr,
            "Cb" => ColorSelector::Cb,
            other => return Err(Error::InvalidParameter(format!("unknown channel selector {other:?}"))),
        })
    }
}

#[inline]
fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// HSV saturation scaled to `0..=255`; 0 for black.
#[inline]
pub fn saturation(r: u8, g: u8, b: u8) -> u8 {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if max == 0 {
        return 0;
    }
    clamp_u8(255.0 * f64::from(max - min) / f64::from(max))
}

#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)
}

#[inline]
pub fn chroma_cr(r: u8, g: u8, b: u8) -> u8 {
    clamp_u8((f64::from(r) - luma(r, g, b)) * 0.713 + 128.0)
}

#[inline]
pub fn chroma_cb(r: u8, g: u8, b: u8) -> u8 {
    clamp_u8((f64::from(b) - luma(r, g, b)) * 0.564 + 128.0)
}

fn require_rgb(img: &Image<u8>) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::ChannelCount { expected: 3, actual: img.channels() });
    }
    Ok(())
}

/// Derives one plane from an RGB image (channels in R,G,B order).
pub fn extract_plane(img: &Image<u8>, selector: ColorSelector) -> Result<Plane<u8>> {
    require_rgb(img)?;
    let data = img.data().chunks_exact(3).map(|px| selector.pixel(px[0], px[1], px[2])).collect();
    Plane::new(img.height(), img.width(), data)
}

/// CLAHE settings. A non-positive `clip_limit` disables clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    /// Tile counts along (x, y).
    pub tile_grid: (usize, usize),
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self { tile_grid: (8, 8), clip_limit: 2.0 }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tile_grid.0 == 0 || self.tile_grid.1 == 0 {
            return Err(Error::InvalidParameter("CLAHE tile grid must be at least 1x1".into()));
        }
        if !self.clip_limit.is_finite() {
            return Err(Error::InvalidParameter("CLAHE clip limit must be finite".into()));
        }
        Ok(())
    }
}

/// Tile geometry of a CLAHE pass over a `height×width` plane.
#[derive(Debug, Clone, Copy)]
struct TileGrid {
    tiles_x: usize,
    tiles_y: usize,
    tile_w: usize,
    tile_h: usize,
}

impl TileGrid {
    fn new(height: usize, width: usize, params: &ClaheParams) -> Result<Self> {
        params.validate()?;
        let (tiles_x, tiles_y) = params.tile_grid;
        if width < tiles_x || height < tiles_y {
            return Err(Error::PlaneSmallerThanTile);
        }
        Ok(Self { tiles_x, tiles_y, tile_w: width.div_ceil(tiles_x), tile_h: height.div_ceil(tiles_y) })
    }

    fn area(&self) -> usize {
        self.tile_w * self.tile_h
    }
}

fn tile_histogram(plane: &Plane<u8>, grid: &TileGrid, tx: usize, ty: usize) -> [u32; 256] {
    let mut hist = [0u32; 256];
    for py in ty * grid.tile_h..(ty + 1) * grid.tile_h {
        let y = reflect101(py as isize, plane.height());
        for px in tx * grid.tile_w..(tx + 1) * grid.tile_w {
            let x = reflect101(px as isize, plane.width());
            hist[plane.get(y, x) as usize] += 1;
        }
    }
    hist
}

fn clip_histogram(hist: &mut [u32; 256], clip: u32) {
    let mut excess = 0u32;
    for bin in hist.iter_mut() {
        if *bin > clip {
            excess += *bin - clip;
            *bin = clip;
        }
    }
    let quotient = excess / 256;
    let remainder = (excess % 256) as usize;
    for (i, bin) in hist.iter_mut().enumerate() {
        *bin += quotient + u32::from(i < remainder);
    }
}

fn histogram_lut(hist: &[u32; 256], area: u32) -> [u8; 256] {
    let mut lut = [0u8; 256];
    let cdf_min = hist.iter().copied().find(|&c| c > 0).unwrap_or(area);
    if cdf_min == area {
        for (i, v) in lut.iter_mut().enumerate() {
            *v = i as u8;
        }
        return lut;
    }
    let denom = f64::from(area - cdf_min);
    let mut cdf = 0u32;
    for (i, v) in lut.iter_mut().enumerate() {
        cdf += hist[i];
        *v = if cdf < cdf_min { 0 } else { clamp_u8(f64::from(cdf - cdf_min) / denom * 255.0) };
    }
    lut
}

/// Per-tile lookup tables in row-major tile order.
pub fn clahe_tile_luts(plane: &Plane<u8>, params: &ClaheParams) -> Result<Vec<[u8; 256]>> {
    let grid = TileGrid::new(plane.height(), plane.width(), params)?;
    let area = grid.area() as u32;
    let clip = (params.clip_limit > 0.0).then(|| ((params.clip_limit * f64::from(area) / 256.0).floor() as u32).max(1));

    let mut luts = Vec::with_capacity(grid.tiles_x * grid.tiles_y);
    for ty in 0..grid.tiles_y {
        for tx in 0..grid.tiles_x {
            let mut hist = tile_histogram(plane, &grid, tx, ty);
            // A constant tile maps to itself whatever the clip limit does.
            if hist.iter().filter(|&&c| c > 0).count() == 1 {
                luts.push(histogram_lut(&hist, area));
                continue;
            }
            if let Some(clip) = clip {
                clip_histogram(&mut hist, clip);
            }
            luts.push(histogram_lut(&hist, area));
        }
    }
    Ok(luts)
}

/// Interpolation anchors along one axis: (tile0, tile1, weight of tile1).
#[inline]
fn axis_weights(coord: usize, tile: usize, tiles: usize) -> (usize, usize, f64) {
    let f = (coord as f64 + 0.5) / tile as f64 - 0.5;
    let lo = f.floor();
    let w = f - lo;
    let lo = lo as isize;
    let clamp = |i: isize| i.clamp(0, tiles as isize - 1) as usize;
    (clamp(lo), clamp(lo + 1), w)
}

/// Contrast-limited adaptive histogram equalization of one plane.
pub fn clahe_plane(plane: &Plane<u8>, params: &ClaheParams) -> Result<Plane<u8>> {
    let grid = TileGrid::new(plane.height(), plane.width(), params)?;
    let luts = clahe_tile_luts(plane, params)?;

    let xw: Vec<_> = (0..plane.width()).map(|x| axis_weights(x, grid.tile_w, grid.tiles_x)).collect();
    let mut out = Vec::with_capacity(plane.height() * plane.width());
    for y in 0..plane.height() {
        let (ty0, ty1, wy) = axis_weights(y, grid.tile_h, grid.tiles_y);
        let row0 = &luts[ty0 * grid.tiles_x..(ty0 + 1) * grid.tiles_x];
        let row1 = &luts[ty1 * grid.tiles_x..(ty1 + 1) * grid.tiles_x];
        for (x, &(tx0, tx1, wx)) in xw.iter().enumerate() {
            let v = plane.get(y, x) as usize;
            let top = (1.0 - wx) * f64::from(row0[tx0][v]) + wx * f64::from(row0[tx1][v]);
            let bottom = (1.0 - wx) * f64::from(row1[tx0][v]) + wx * f64::from(row1[tx1][v]);
            out.push(clamp_u8((1.0 - wy) * top + wy * bottom));
        }
    }
    Plane::new(plane.height(), plane.width(), out)
}

/// Channel stacking configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    pub channel_order: Vec<ColorSelector>,
    pub clahe: Option<ClaheParams>,
    /// Derive S/Cr/Cb from the CLAHE-enhanced RGB instead of the raw input.
    pub derive_from_enhanced: bool,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            channel_order: ColorSelector::DEFAULT_ORDER.to_vec(),
            clahe: Some(ClaheParams::default()),
            derive_from_enhanced: false,
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channel_order.is_empty() {
            return Err(Error::InvalidParameter("channel order must not be empty".into()));
        }
        for (i, sel) in self.channel_order.iter().enumerate() {
            if self.channel_order[..i].contains(sel) {
                return Err(Error::InvalidParameter(format!("duplicate channel selector {sel}")));
            }
        }
        if let Some(clahe) = &self.clahe {
            clahe.validate()?;
        }
        Ok(())
    }
}

/// Builds the stacked network input from an RGB tile.
pub fn preprocess_tile(img: &Image<u8>, cfg: &StackConfig) -> Result<Image<u8>> {
    require_rgb(img)?;
    cfg.validate()?;

    let enhanced = match &cfg.clahe {
        Some(params) => {
            let planes = img.split_channels().iter().map(|p| clahe_plane(p, params)).collect::<Result<Vec<_>>>()?;
            Some(Image::merge_channels(&planes)?)
        }
        None => None,
    };
    let rgb = enhanced.as_ref().unwrap_or(img);
    let color_source = if cfg.derive_from_enhanced { rgb } else { img };

    let planes = cfg
        .channel_order
        .iter()
        .map(|&sel| extract_plane(if sel.is_rgb() { rgb } else { color_source }, sel))
        .collect::<Result<Vec<_>>>()?;
    Image::merge_channels(&planes)
}
