//! HoVer target generation and post-processing of predicted maps.
//!
//! Targets encode, for every nuclear pixel, its horizontal and vertical offset
//! from the instance centroid normalized per instance to `[-1, 1]`. Touching
//! nuclei show a sign flip along the shared border, which post-processing
//! turns into watershed markers and an energy surface.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::border::reflect101;
use crate::error::{Error, Result};
use crate::raster::{HoVerMaps, InstanceMap, Plane, NUM_CLASS_SLOTS};
use crate::scalar::Real;

/// Builds HoVer regression targets and the binary nuclear-pixel map.
pub fn make_targets<T: Real>(instances: &InstanceMap) -> (HoVerMaps<T>, Plane<u8>) {
    let (height, width) = (instances.height(), instances.width());
    let labels = instances.labels();
    let areas = instances.areas();
    let slot: std::collections::HashMap<u32, usize> = areas.keys().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut sums = vec![(0.0f64, 0.0f64); areas.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            let s = &mut sums[slot[&l]];
            s.0 += (i % width) as f64;
            s.1 += (i / width) as f64;
        }
    }
    let centroids: Vec<(f64, f64)> =
        sums.iter().zip(areas.values()).map(|(&(sx, sy), &n)| (sx / n as f64, sy / n as f64)).collect();

    let mut h = vec![0.0f64; labels.len()];
    let mut v = vec![0.0f64; labels.len()];
    // (max positive, max |negative|) per instance and axis
    let mut ext = vec![[0.0f64; 4]; areas.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let k = slot[&l];
        let (cx, cy) = centroids[k];
        h[i] = (i % width) as f64 - cx;
        v[i] = (i / width) as f64 - cy;
        let e = &mut ext[k];
        e[0] = e[0].max(h[i]);
        e[1] = e[1].max(-h[i]);
        e[2] = e[2].max(v[i]);
        e[3] = e[3].max(-v[i]);
    }
    let normalize = |val: f64, pos: f64, neg: f64| {
        if val > 0.0 && pos > 0.0 {
            val / pos
        } else if val < 0.0 && neg > 0.0 {
            val / neg
        } else {
            val
        }
    };
    let mut hn = Vec::with_capacity(labels.len());
    let mut vn = Vec::with_capacity(labels.len());
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            hn.push(T::zero());
            vn.push(T::zero());
        } else {
            let e = ext[slot[&l]];
            hn.push(T::lit(normalize(h[i], e[0], e[1])));
            vn.push(T::lit(normalize(v[i], e[2], e[3])));
        }
    }
    let maps = HoVerMaps::new(height, width, hn, vn).expect("finite by construction");
    (maps, instances.support())
}

/// Derivative direction of [`sobel_plane`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

fn binomial_row(order: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..order {
        let mut next = vec![0.0; row.len() + 1];
        for (i, &c) in row.iter().enumerate() {
            next[i] += c;
            next[i + 1] += c;
        }
        row = next;
    }
    row
}

/// Smoothing and difference kernels of a Sobel operator of odd `aperture`.
pub fn sobel_kernels(aperture: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if aperture < 3 || aperture.is_multiple_of(2) {
        return Err(Error::BadAperture(aperture));
    }
    let smooth = binomial_row(aperture - 1);
    let base = binomial_row(aperture - 3);
    let mut diff = vec![0.0; aperture];
    for (i, &c) in base.iter().enumerate() {
        diff[i] -= c;
        diff[i + 2] += c;
    }
    Ok((smooth, diff))
}

/// Correlates along x with `kx` and then along y with `ky`, mirroring borders.
fn correlate_separable<T: Real>(data: &[T], height: usize, width: usize, kx: &[T], ky: &[T]) -> Vec<T> {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = vec![T::zero(); data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = T::zero();
            for (j, &k) in kx.iter().enumerate() {
                acc += k * row[reflect101(x as isize + j as isize - rx, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![T::zero(); data.len()];
    for y in 0..height {
        for (j, &k) in ky.iter().enumerate() {
            let src = reflect101(y as isize + j as isize - ry, height) * width;
            let dst = y * width;
            for x in 0..width {
                out[dst + x] += k * tmp[src + x];
            }
        }
    }
    out
}

/// Transpose of [`correlate_separable`].
fn correlate_separable_adjoint<T: Real>(grad: &[T], height: usize, width: usize, kx: &[T], ky: &[T]) -> Vec<T> {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = vec![T::zero(); grad.len()];
    for y in 0..height {
        for (j, &k) in ky.iter().enumerate() {
            let dst = reflect101(y as isize + j as isize - ry, height) * width;
            let src = y * width;
            for x in 0..width {
                tmp[dst + x] += k * grad[src + x];
            }
        }
    }
    let mut out = vec![T::zero(); grad.len()];
    for y in 0..height {
        for x in 0..width {
            let g = tmp[y * width + x];
            for (j, &k) in kx.iter().enumerate() {
                out[y * width + reflect101(x as isize + j as isize - rx, width)] += k * g;
            }
        }
    }
    out
}

fn axis_kernels<T: Real>(axis: Axis, aperture: usize) -> Result<(Vec<T>, Vec<T>)> {
    let (smooth, diff) = sobel_kernels(aperture)?;
    let smooth: Vec<T> = smooth.into_iter().map(T::lit).collect();
    let diff: Vec<T> = diff.into_iter().map(T::lit).collect();
    Ok(match axis {
        Axis::X => (diff, smooth),
        Axis::Y => (smooth, diff),
    })
}

fn check_aperture(aperture: usize, height: usize, width: usize) -> Result<()> {
    if aperture < 3 || aperture.is_multiple_of(2) || aperture > height.min(width) {
        return Err(Error::BadAperture(aperture));
    }
    Ok(())
}

/// Sobel derivative of `plane` along `axis` with mirrored borders.
pub fn sobel_plane<T: Real>(plane: &Plane<T>, axis: Axis, aperture: usize) -> Result<Plane<T>> {
    check_aperture(aperture, plane.height(), plane.width())?;
    let (kx, ky) = axis_kernels::<T>(axis, aperture)?;
    let out = correlate_separable(plane.data(), plane.height(), plane.width(), &kx, &ky);
    Plane::new(plane.height(), plane.width(), out)
}

/// Applies the transpose of the linear map `sobel_plane(·, axis, aperture)`.
pub(crate) fn sobel_adjoint<T: Real>(
    grad: &[T],
    height: usize,
    width: usize,
    axis: Axis,
    aperture: usize,
) -> Result<Vec<T>> {
    check_aperture(aperture, height, width)?;
    let (kx, ky) = axis_kernels::<T>(axis, aperture)?;
    Ok(correlate_separable_adjoint(grad, height, width, &kx, &ky))
}

const NEIGHBORS_8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
const NEIGHBORS_4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

#[inline]
fn neighbors<'a>(
    idx: usize,
    height: usize,
    width: usize,
    offsets: &'a [(isize, isize)],
) -> impl Iterator<Item = usize> + 'a {
    let (y, x) = ((idx / width) as isize, (idx % width) as isize);
    offsets.iter().filter_map(move |&(dy, dx)| {
        let (ny, nx) = (y + dy, x + dx);
        (ny >= 0 && nx >= 0 && (ny as usize) < height && (nx as usize) < width)
            .then(|| ny as usize * width + nx as usize)
    })
}

/// Labels 8-connected foreground components `1..=K` in raster order of their
/// first pixel, dropping components smaller than `min_size`.
pub fn label_components(binary: &Plane<u8>, min_size: usize) -> InstanceMap {
    let (height, width) = (binary.height(), binary.width());
    let fg = binary.data();
    let mut labels = vec![0u32; fg.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    let mut members = Vec::new();
    for start in 0..fg.len() {
        if fg[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        members.clear();
        while let Some(p) = stack.pop() {
            members.push(p);
            for q in neighbors(p, height, width, &NEIGHBORS_8) {
                if fg[q] != 0 && labels[q] == 0 {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
        if members.len() < min_size {
            for &p in &members {
                labels[p] = u32::MAX;
            }
            next -= 1;
        }
    }
    for l in labels.iter_mut() {
        if *l == u32::MAX {
            *l = 0;
        }
    }
    InstanceMap::new(height, width, labels).expect("shape preserved")
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Out-of-image samples are ignored, so borders never erode or dilate.
fn morph(mask: &[bool], height: usize, width: usize, se: &[(isize, isize)], erode: bool) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut hit = erode;
            for &(dy, dx) in se {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                    continue;
                }
                let v = mask[ny as usize * width + nx as usize];
                if erode && !v {
                    hit = false;
                    break;
                }
                if !erode && v {
                    hit = true;
                    break;
                }
            }
            out[y as usize * width + x as usize] = hit;
        }
    }
    out
}

/// Morphological opening with a disk of the given radius.
pub fn binary_opening(mask: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let se = disk_offsets(radius);
    let eroded = morph(mask, height, width, &se, true);
    morph(&eroded, height, width, &se, false)
}

/// `k×k` mean filter with mirrored borders.
pub fn box_smooth<T: Real>(data: &[T], height: usize, width: usize, k: usize) -> Vec<T> {
    if k <= 1 {
        return data.to_vec();
    }
    let w = T::one() / T::from_usize_lossy(k);
    let kernel = vec![w; k];
    correlate_separable(data, height, width, &kernel, &kernel)
}

#[derive(Debug, Clone, Copy)]
struct FloodEntry {
    level: f64,
    label: u32,
    seq: u64,
    idx: usize,
}

impl PartialEq for FloodEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FloodEntry {}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FloodEntry {
    // Reversed: BinaryHeap is a max-heap and the lowest entry must pop first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .level
            .total_cmp(&self.level)
            .then_with(|| other.seq.cmp(&self.seq))
            .then_with(|| other.label.cmp(&self.label))
    }
}

/// Marker-controlled watershed: floods `surface` from the labeled `markers`
/// through 4-connected pixels where `mask` is set. Equal levels resolve in
/// queue order, so a flat ridge is shared between the floods reaching it.
pub fn watershed<T: Real>(surface: &[T], markers: &InstanceMap, mask: &[bool]) -> InstanceMap {
    let (height, width) = (markers.height(), markers.width());
    let mut labels = markers.labels().to_vec();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<FloodEntry>, idx: usize, label: u32| {
        heap.push(FloodEntry { level: surface[idx].to_f64_lossy(), label, seq, idx });
        seq += 1;
    };
    for idx in 0..labels.len() {
        let label = labels[idx];
        if label == 0 {
            continue;
        }
        for q in neighbors(idx, height, width, &NEIGHBORS_4) {
            if labels[q] == 0 && mask[q] {
                push(&mut heap, q, label);
            }
        }
    }
    while let Some(FloodEntry { label, idx, .. }) = heap.pop() {
        if labels[idx] != 0 {
            continue;
        }
        labels[idx] = label;
        for q in neighbors(idx, height, width, &NEIGHBORS_4) {
            if labels[q] == 0 && mask[q] {
                push(&mut heap, q, label);
            }
        }
    }
    InstanceMap::new(height, width, labels).expect("shape preserved")
}

/// Network outputs for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMaps<T> {
    pub np_prob: Plane<T>,
    pub hv: HoVerMaps<T>,
    /// `H×W×7` class probabilities, background first.
    pub tp_prob: Option<Vec<T>>,
}

impl<T: Real> PredictionMaps<T> {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.np_prob.height(), self.np_prob.width());
        if self.hv.height() != h || self.hv.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "np map is {h}x{w}, hv maps are {}x{}",
                self.hv.height(),
                self.hv.width()
            )));
        }
        if let Some(tp) = &self.tp_prob {
            if tp.len() != h * w * NUM_CLASS_SLOTS {
                return Err(Error::ShapeMismatch(format!(
                    "tp map has {} values, expected {h}x{w}x{NUM_CLASS_SLOTS}",
                    tp.len()
                )));
            }
            if tp.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRaster("non-finite tp probability".into()));
            }
        }
        Ok(())
    }
}

/// Post-processing hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocParams {
    pub np_threshold: f64,
    pub sobel_aperture: usize,
    pub boundary_threshold: f64,
    pub min_object_px: usize,
    pub marker_open_radius: usize,
    pub smooth_kernel: usize,
}

impl Default for PostprocParams {
    fn default() -> Self {
        Self {
            np_threshold: 0.5,
            sobel_aperture: 5,
            boundary_threshold: 0.4,
            min_object_px: 10,
            marker_open_radius: 2,
            smooth_kernel: 3,
        }
    }
}

impl PostprocParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.np_threshold) {
            return Err(Error::InvalidParameter("np_threshold must lie in (0,1)".into()));
        }
        if !unit(self.boundary_threshold) {
            return Err(Error::InvalidParameter("boundary_threshold must lie in (0,1)".into()));
        }
        if self.sobel_aperture < 3 || self.sobel_aperture.is_multiple_of(2) {
            return Err(Error::BadAperture(self.sobel_aperture));
        }
        if self.smooth_kernel == 0 || self.smooth_kernel.is_multiple_of(2) {
            return Err(Error::InvalidParameter("smooth_kernel must be odd".into()));
        }
        Ok(())
    }
}

fn minmax_normalize<T: Real>(data: &mut [T]) {
    let (lo, hi) = data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > T::zero()) {
        data.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    data.iter_mut().for_each(|v| *v = (*v - lo) / range);
}

/// Intermediate rasters of [`postprocess`], exposed for inspection.
#[derive(Debug, Clone)]
pub struct PostprocStages<T> {
    pub foreground: Vec<bool>,
    pub boundary: Vec<T>,
    pub surface: Vec<T>,
    pub markers: InstanceMap,
    pub instances: InstanceMap,
}

pub fn postprocess_stages<T: Real>(maps: &PredictionMaps<T>, params: &PostprocParams) -> Result<PostprocStages<T>> {
    params.validate()?;
    maps.validate()?;
    let (height, width) = (maps.np_prob.height(), maps.np_prob.width());
    let n = height * width;
    let threshold = T::lit(params.np_threshold);

    let raw_fg = Plane::from_fn(height, width, |y, x| u8::from(maps.np_prob.get(y, x) > threshold));
    let fg_labels = label_components(&raw_fg, params.min_object_px);
    let foreground: Vec<bool> = fg_labels.labels().iter().map(|&l| l > 0).collect();
    if !foreground.iter().any(|&f| f) {
        return Ok(PostprocStages {
            foreground,
            boundary: vec![T::zero(); n],
            surface: vec![T::zero(); n],
            markers: InstanceMap::empty(height, width),
            instances: InstanceMap::empty(height, width),
        });
    }

    let h = Plane::new(height, width, maps.hv.h().to_vec())?;
    let v = Plane::new(height, width, maps.hv.v().to_vec())?;
    let mut gx = sobel_plane(&h, Axis::X, params.sobel_aperture)?.into_data();
    let mut gy = sobel_plane(&v, Axis::Y, params.sobel_aperture)?.into_data();
    minmax_normalize(&mut gx);
    minmax_normalize(&mut gy);

    let one = T::one();
    let boundary: Vec<T> = (0..n)
        .map(|i| {
            let b = (one - gx[i]).max(one - gy[i]);
            let q = if foreground[i] { one } else { T::zero() };
            (b - (one - q)).max(T::zero())
        })
        .collect();

    let energy: Vec<T> = (0..n).map(|i| if foreground[i] { one - boundary[i] } else { T::zero() }).collect();
    let surface: Vec<T> = box_smooth(&energy, height, width, params.smooth_kernel).into_iter().map(|e| -e).collect();

    let boundary_threshold = T::lit(params.boundary_threshold);
    let seeds: Vec<bool> = (0..n).map(|i| foreground[i] && boundary[i] < boundary_threshold).collect();
    let opened = binary_opening(&seeds, height, width, params.marker_open_radius);
    let marker_plane = Plane::new(height, width, opened.iter().map(|&b| u8::from(b)).collect())?;
    let markers = label_components(&marker_plane, params.min_object_px);

    let instances = watershed(&surface, &markers, &foreground);
    Ok(PostprocStages { foreground, boundary, surface, markers, instances })
}

/// Majority class per instance id `1..=K`; see [`postprocess`].
pub fn vote_classes<T: Real>(instances: &InstanceMap, tp_prob: Option<&[T]>) -> Vec<u8> {
    let count = instances.labels().iter().copied().max().unwrap_or(0) as usize;
    let Some(tp) = tp_prob else {
        return vec![0; count];
    };
    let mut votes = vec![[0usize; NUM_CLASS_SLOTS]; count];
    for (i, &l) in instances.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let probs = &tp[i * NUM_CLASS_SLOTS..(i + 1) * NUM_CLASS_SLOTS];
        let mut best = 0;
        for c in 1..NUM_CLASS_SLOTS {
            if probs[c] > probs[best] {
                best = c;
            }
        }
        votes[l as usize - 1][best] += 1;
    }
    votes.iter().map(majority).collect()
}

/// Most frequent non-background class, or 0 if every vote is background.
/// Ties go to the lower class id.
pub(crate) fn majority(votes: &[usize; NUM_CLASS_SLOTS]) -> u8 {
    let mut best = 0usize;
    for c in 1..NUM_CLASS_SLOTS {
        if votes[c] > 0 && (best == 0 || votes[c] > votes[best]) {
            best = c;
        }
    }
    best as u8
}

/// Turns predicted maps into labeled instances `1..=K` and one class per
/// instance (index `k-1` holds the class of instance `k`).
///
/// Foreground is the thresholded probability map without small blobs. The
/// min-max normalized Sobel responses of the h and v maps give a boundary
/// strength; markers are foreground pixels with weak boundary after a disk
/// opening, and the smoothed negated `1 - boundary` energy is flooded from
/// them. Each instance's class is the majority vote of per-pixel argmax
/// over `tp_prob`.
pub fn postprocess<T: Real>(maps: &PredictionMaps<T>, params: &PostprocParams) -> Result<(InstanceMap, Vec<u8>)> {
    let stages = postprocess_stages(maps, params)?;
    let classes = vote_classes(&stages.instances, maps.tp_prob.as_deref());
    Ok((stages.instances, classes))
}
