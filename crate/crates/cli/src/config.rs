//! TOML run configuration. Every section and key is optional; unknown keys
//! are rejected and every value is validated before a command runs.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use nucleiseg::augment::{AugmentConfig, Span};
use nucleiseg::hover::PostprocParams;
use nucleiseg::metrics::{check_iou_threshold, DEFAULT_IOU_THRESHOLD};
use nucleiseg::preprocess::{ClaheParams, ColorSelector, StackConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub stack: StackConfig,
    pub augment: AugmentConfig,
    pub postproc: PostprocParams,
    pub iou_threshold: f64,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            stack: StackConfig::default(),
            augment: AugmentConfig::default(),
            postproc: PostprocParams::default(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    stack: StackSection,
    augment: AugmentSection,
    postproc: PostprocSection,
    metrics: MetricsSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct StackSection {
    channel_order: Vec<String>,
    clahe: bool,
    tile_grid: [usize; 2],
    clip_limit: f64,
    derive_from_enhanced: bool,
}

impl Default for StackSection {
    fn default() -> Self {
        let cfg = StackConfig::default();
        let clahe = cfg.clahe.unwrap_or_default();
        Self {
            channel_order: cfg.channel_order.iter().map(ToString::to_string).collect(),
            clahe: cfg.clahe.is_some(),
            tile_grid: [clahe.tile_grid.0, clahe.tile_grid.1],
            clip_limit: clahe.clip_limit,
            derive_from_enhanced: cfg.derive_from_enhanced,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AugmentSection {
    shear_deg: [f64; 2],
    scale: [f64; 2],
    blur_sigma: [f64; 2],
    median_kernels: Vec<usize>,
    noise_sigma: [f64; 2],
    hue_deg: f64,
    sat: f64,
    val: f64,
    p_affine: f64,
    p_blur: f64,
    p_median: f64,
    p_noise: f64,
    p_hsv: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let c = AugmentConfig::default();
        let pair = |s: Span| [s.lo, s.hi];
        Self {
            shear_deg: pair(c.shear_deg),
            scale: pair(c.scale),
            blur_sigma: pair(c.blur_sigma),
            median_kernels: c.median_kernels,
            noise_sigma: pair(c.noise_sigma),
            hue_deg: c.hue_deg,
            sat: c.sat,
            val: c.val,
            p_affine: c.p_affine,
            p_blur: c.p_blur,
            p_median: c.p_median,
            p_noise: c.p_noise,
            p_hsv: c.p_hsv,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PostprocSection {
    np_threshold: f64,
    sobel_aperture: usize,
    boundary_threshold: f64,
    min_object_px: usize,
    marker_open_radius: usize,
    smooth_kernel: usize,
}

impl Default for PostprocSection {
    fn default() -> Self {
        let p = PostprocParams::default();
        Self {
            np_threshold: p.np_threshold,
            sobel_aperture: p.sobel_aperture,
            boundary_threshold: p.boundary_threshold,
            min_object_px: p.min_object_px,
            marker_open_radius: p.marker_open_radius,
            smooth_kernel: p.smooth_kernel,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MetricsSection {
    iou_threshold: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { iou_threshold: DEFAULT_IOU_THRESHOLD }
    }
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text)?;
        let s = file.stack;
        let channel_order = s
            .channel_order
            .iter()
            .map(|name| name.parse::<ColorSelector>())
            .collect::<Result<Vec<_>, _>>()
            .context("[stack] channel_order")?;
        let stack = StackConfig {
            channel_order,
            clahe: s
                .clahe
                .then_some(ClaheParams { tile_grid: (s.tile_grid[0], s.tile_grid[1]), clip_limit: s.clip_limit }),
            derive_from_enhanced: s.derive_from_enhanced,
        };
        stack.validate().context("[stack]")?;

        let a = file.augment;
        let span = |v: [f64; 2]| Span::new(v[0], v[1]);
        let augment = AugmentConfig {
            shear_deg: span(a.shear_deg),
            scale: span(a.scale),
            blur_sigma: span(a.blur_sigma),
            median_kernels: a.median_kernels,
            noise_sigma: span(a.noise_sigma),
            hue_deg: a.hue_deg,
            sat: a.sat,
            val: a.val,
            p_affine: a.p_affine,
            p_blur: a.p_blur,
            p_median: a.p_median,
            p_noise: a.p_noise,
            p_hsv: a.p_hsv,
        };
        augment.validate().context("[augment]")?;

        let p = file.postproc;
        let postproc = PostprocParams {
            np_threshold: p.np_threshold,
            sobel_aperture: p.sobel_aperture,
            boundary_threshold: p.boundary_threshold,
            min_object_px: p.min_object_px,
            marker_open_radius: p.marker_open_radius,
            smooth_kernel: p.smooth_kernel,
        };
        postproc.validate().context("[postproc]")?;

        check_iou_threshold(file.metrics.iou_threshold).context("[metrics]")?;
        Ok(Self { stack, augment, postproc, iou_threshold: file.metrics.iou_threshold })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }
}
