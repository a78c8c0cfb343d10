//! Seeded, label-consistent augmentation.
//!
//! Parameters are drawn from a ChaCha8 stream addressed by `(seed, index)`,
//! so any sample can be reproduced independently of processing order.
//! Geometry (shear and scale about the center) is applied to image and labels
//! alike; blur, median, noise and HSV jitter touch the image only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::border::reflect101;
use crate::error::{Error, Result};
use crate::raster::{ClassMap, Image, InstanceMap};

/// Closed interval `[lo, hi]`; `lo == hi` always yields `lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::InvalidParameter(format!("{name}: bad range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub shear_deg: Span,
    pub scale: Span,
    pub blur_sigma: Span,
    pub median_kernels: Vec<usize>,
    /// Standard deviation in 8-bit intensity units.
    pub noise_sigma: Span,
    /// Additive hue shift bound in degrees.
    pub hue_deg: f64,
    /// Saturation and value are multiplied by `1 + u`, `u ∈ [−bound, bound]`.
    pub sat: f64,
    pub val: f64,
    pub p_affine: f64,
    pub p_blur: f64,
    pub p_median: f64,
    pub p_noise: f64,
    pub p_hsv: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            shear_deg: Span::new(-5.0, 5.0),
            scale: Span::new(0.8, 1.2),
            blur_sigma: Span::new(0.0, 1.0),
            median_kernels: vec![3, 5],
            noise_sigma: Span::new(0.0, 10.0),
            hue_deg: 8.0,
            sat: 0.2,
            val: 0.2,
            p_affine: 0.5,
            p_blur: 0.5,
            p_median: 0.5,
            p_noise: 0.5,
            p_hsv: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Never changes anything.
    pub fn identity() -> Self {
        Self {
            shear_deg: Span::fixed(0.0),
            scale: Span::fixed(1.0),
            p_affine: 0.0,
            p_blur: 0.0,
            p_median: 0.0,
            p_noise: 0.0,
            p_hsv: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shear_deg.validate("shear_deg")?;
        self.scale.validate("scale")?;
        self.blur_sigma.validate("blur_sigma")?;
        self.noise_sigma.validate("noise_sigma")?;
        if self.shear_deg.lo <= -90.0 || self.shear_deg.hi >= 90.0 {
            return Err(Error::InvalidParameter("shear_deg must lie inside (-90, 90)".into()));
        }
        if self.scale.lo <= 0.0 {
            return Err(Error::InvalidParameter("scale must be positive".into()));
        }
        if self.blur_sigma.lo < 0.0 || self.noise_sigma.lo < 0.0 {
            return Err(Error::InvalidParameter("sigma ranges must be non-negative".into()));
        }
        if self.median_kernels.is_empty() || self.median_kernels.iter().any(|&k| k % 2 == 0) {
            return Err(Error::InvalidParameter("median kernels must be a non-empty set of odd sizes".into()));
        }
        for (name, v) in [("hue_deg", self.hue_deg), ("sat", self.sat), ("val", self.val)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be finite and non-negative")));
            }
        }
        if self.sat >= 1.0 || self.val >= 1.0 {
            return Err(Error::InvalidParameter("sat and val bounds must be below 1".into()));
        }
        for (name, p) in [
            ("p_affine", self.p_affine),
            ("p_blur", self.p_blur),
            ("p_median", self.p_median),
            ("p_noise", self.p_noise),
            ("p_hsv", self.p_hsv),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub shear_deg: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvJitter {
    pub hue_deg: f64,
    pub sat_factor: f64,
    pub val_factor: f64,
}

/// Concrete transforms for one sample; `None` means skipped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    pub affine: Option<Affine>,
    pub hsv: Option<HsvJitter>,
    pub blur_sigma: Option<f64>,
    pub median_kernel: Option<usize>,
    /// Noise sigma and the seed of the per-pixel noise stream.
    pub noise: Option<(f64, u64)>,
}

impl AugmentParams {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }
}

/// Draws the transforms for sample `index` under `seed`.
///
/// Every value is drawn whether or not its transform fires, so changing one
/// probability does not shift the other draws.
pub fn sample_params(cfg: &AugmentConfig, seed: u64, index: u64) -> AugmentParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let coin = |rng: &mut ChaCha8Rng, p: f64| rng.random::<f64>() < p;

    let fire = coin(&mut rng, cfg.p_affine);
    let affine = Affine { shear_deg: cfg.shear_deg.draw(&mut rng), scale: cfg.scale.draw(&mut rng) };
    let affine = (fire && affine != Affine { shear_deg: 0.0, scale: 1.0 }).then_some(affine);

    let fire = coin(&mut rng, cfg.p_hsv);
    let sym = |rng: &mut ChaCha8Rng, b: f64| Span::new(-b, b).draw(rng);
    let hsv = HsvJitter {
        hue_deg: sym(&mut rng, cfg.hue_deg),
        sat_factor: 1.0 + sym(&mut rng, cfg.sat),
        val_factor: 1.0 + sym(&mut rng, cfg.val),
    };
    let hsv = fire.then_some(hsv);

    let fire = coin(&mut rng, cfg.p_blur);
    let sigma = cfg.blur_sigma.draw(&mut rng);
    let blur_sigma = (fire && sigma > 0.0).then_some(sigma);

    let fire = coin(&mut rng, cfg.p_median);
    let k = match cfg.median_kernels.len() {
        0 => 1,
        n => cfg.median_kernels[rng.random_range(0..n)],
    };
    let median_kernel = (fire && k > 1).then_some(k);

    let fire = coin(&mut rng, cfg.p_noise);
    let sigma = cfg.noise_sigma.draw(&mut rng);
    let noise_seed = rng.random::<u64>();
    let noise = (fire && sigma > 0.0).then_some((sigma, noise_seed));

    AugmentParams { affine, hsv, blur_sigma, median_kernel, noise }
}

/// An image with its instance and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image<u8>,
    pub instances: InstanceMap,
    pub classes: ClassMap,
}

impl Sample {
    pub fn new(image: Image<u8>, instances: InstanceMap, classes: ClassMap) -> Result<Self> {
        let (h, w) = (image.height(), image.width());
        if instances.height() != h || instances.width() != w || classes.height() != h || classes.width() != w {
            return Err(Error::ShapeMismatch("image and label maps must share H and W".into()));
        }
        Ok(Self { image, instances, classes })
    }
}

/// Applies `params` to a sample.
pub fn apply(params: &AugmentParams, sample: &Sample) -> Result<Sample> {
    let mut out = sample.clone();
    if let Some(a) = params.affine {
        out = warp(&out, a)?;
    }
    if let Some(j) = params.hsv {
        if out.image.channels() == 3 {
            out.image = hsv_jitter(&out.image, j)?;
        }
    }
    if let Some(s) = params.blur_sigma {
        out.image = gaussian_blur(&out.image, s)?;
    }
    if let Some(k) = params.median_kernel {
        out.image = median_blur(&out.image, k)?;
    }
    if let Some((sigma, seed)) = params.noise {
        out.image = add_noise(&out.image, sigma, seed)?;
    }
    Ok(out)
}

/// `sample_params` followed by `apply`.
pub fn augment(cfg: &AugmentConfig, seed: u64, index: u64, sample: &Sample) -> Result<Sample> {
    cfg.validate()?;
    apply(&sample_params(cfg, seed, index), sample)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Inverse-maps every output pixel through `shear ∘ scale` about the center.
/// Images are sampled bilinearly with mirrored borders; labels take the
/// nearest source pixel and are 0 outside the source.
fn warp(sample: &Sample, a: Affine) -> Result<Sample> {
    let img = &sample.image;
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let t = a.shear_deg.to_radians().tan();
    let inv = 1.0 / a.scale;
    let src = |y: usize, x: usize| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        ((dx - t * dy) * inv + cx, dy * inv + cy)
    };

    let mut pixels = Vec::with_capacity(h * w * c);
    let mut labels = Vec::with_capacity(h * w);
    let mut classes = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(y, x);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let xs = [reflect101(x0 as isize, w), reflect101(x0 as isize + 1, w)];
            let ys = [reflect101(y0 as isize, h), reflect101(y0 as isize + 1, h)];
            for ch in 0..c {
                let p = |yy: usize, xx: usize| f64::from(img.get(ys[yy], xs[xx], ch));
                let top = p(0, 0) * (1.0 - fx) + p(0, 1) * fx;
                let bottom = p(1, 0) * (1.0 - fx) + p(1, 1) * fx;
                pixels.push(to_u8(top * (1.0 - fy) + bottom * fy));
            }
            let (nx, ny) = (sx.round(), sy.round());
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                let i = ny as usize * w + nx as usize;
                labels.push(sample.instances.labels()[i]);
                classes.push(sample.classes.classes()[i]);
            } else {
                labels.push(0);
                classes.push(0);
            }
        }
    }
    Sample::new(Image::new(h, w, c, pixels)?, InstanceMap::new(h, w, labels)?, ClassMap::new(h, w, classes)?)
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let hue = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (hue, s, max)
}

fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = hue.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

fn hsv_jitter(img: &Image<u8>, j: HsvJitter) -> Result<Image<u8>> {
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let (hue, s, v) = rgb_to_hsv(px[0].into(), px[1].into(), px[2].into());
            let s = (s * j.sat_factor).clamp(0.0, 1.0);
            let v = (v * j.val_factor).clamp(0.0, 255.0);
            let (r, g, b) = hsv_to_rgb(hue + j.hue_deg, s, v);
            [to_u8(r), to_u8(g), to_u8(b)]
        })
        .collect();
    Image::new(img.height(), img.width(), 3, data)
}

fn gaussian_blur(img: &Image<u8>, sigma: f64) -> Result<Image<u8>> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut tmp = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                tmp[(y * w + x) * c + ch] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| kv * f64::from(img.get(y, reflect101(x as isize + k as isize - radius, w), ch)))
                    .sum();
            }
        }
    }
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| kv * tmp[(reflect101(y as isize + k as isize - radius, h) * w + x) * c + ch])
                    .sum();
                out.push(to_u8(v));
            }
        }
    }
    Image::new(h, w, c, out)
}

fn median_blur(img: &Image<u8>, k: usize) -> Result<Image<u8>> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let r = (k / 2) as isize;
    let mut window = Vec::with_capacity(k * k);
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                window.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let yy = reflect101(y as isize + dy, h);
                        let xx = reflect101(x as isize + dx, w);
                        window.push(img.get(yy, xx, ch));
                    }
                }
                let mid = window.len() / 2;
                out.push(*window.select_nth_unstable(mid).1);
            }
        }
    }
    Image::new(h, w, c, out)
}

fn add_noise(img: &Image<u8>, sigma: f64, seed: u64) -> Result<Image<u8>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img.data().iter().map(|&v| to_u8(f64::from(v) + normal.sample(&mut rng))).collect();
    Image::new(img.height(), img.width(), img.channels(), data)
}
