//! Order-preserving data-parallel drivers over whole datasets.
//!
//! Every per-sample call is pure, results are collected in input order, and
//! evaluation statistics are folded sequentially afterwards, so the worker
//! count never changes an output.

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::augment::{augment, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::hover::{make_targets, postprocess, PostprocParams, PredictionMaps};
use crate::metrics::{image_stats, merge_stats, report, EvalReport, PqStats};
use crate::preprocess::{preprocess_tile, StackConfig};
use crate::raster::{ClassMap, HoVerMaps, Image, InstanceMap, Plane};
use crate::scalar::Real;

/// A fixed-size worker pool.
pub struct Workers {
    pool: ThreadPool,
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("threads", &self.pool.current_num_threads()).finish()
    }
}

impl Workers {
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::InvalidParameter("worker count must be at least 1".into()));
        }
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Maps `f` over `items` (with their index), keeping input order. The
    /// first error by index wins.
    pub fn map<A, R, F>(&self, items: &[A], f: F) -> Result<Vec<R>>
    where
        A: Sync,
        R: Send,
        F: Fn(usize, &A) -> Result<R> + Sync,
    {
        let results: Vec<Result<R>> =
            self.pool.install(|| items.par_iter().enumerate().map(|(i, a)| f(i, a)).collect());
        results.into_iter().collect()
    }
}

fn with_sample<R>(i: usize, r: Result<R>) -> Result<R> {
    r.map_err(|e| Error::InSample { index: i, source: Box::new(e) })
}

pub fn stack_batch(workers: &Workers, images: &[Image<u8>], cfg: &StackConfig) -> Result<Vec<Image<u8>>> {
    cfg.validate()?;
    workers.map(images, |i, img| with_sample(i, preprocess_tile(img, cfg)))
}

pub fn targets_batch<T: Real>(workers: &Workers, instances: &[InstanceMap]) -> Result<Vec<(HoVerMaps<T>, Plane<u8>)>> {
    workers.map(instances, |_, inst| Ok(make_targets(inst)))
}

/// Post-processes each prediction into an instance map and painted class map.
pub fn postproc_batch<T: Real>(
    workers: &Workers,
    maps: &[PredictionMaps<T>],
    params: &PostprocParams,
) -> Result<Vec<(InstanceMap, ClassMap)>> {
    params.validate()?;
    workers.map(maps, |i, m| {
        with_sample(i, {
            postprocess(m, params).and_then(|(inst, classes)| {
                let ids: Vec<u32> = (1..=classes.len() as u32).collect();
                let painted = ClassMap::from_instances(&inst, &ids, &classes)?;
                Ok((inst, painted))
            })
        })
    })
}

/// Scores predictions against ground truth, both given as
/// `(instances, classes)` per sample.
pub fn eval_batch(
    workers: &Workers,
    gt: &[(InstanceMap, ClassMap)],
    pred: &[(InstanceMap, ClassMap)],
    iou_threshold: f64,
) -> Result<EvalReport> {
    if gt.len() != pred.len() {
        return Err(Error::SampleCountMismatch { images: pred.len(), labels: gt.len() });
    }
    let pairs: Vec<_> = gt.iter().zip(pred).collect();
    let per_image =
        workers.map(&pairs, |i, ((gi, gc), (pi, pc))| with_sample(i, image_stats(gi, gc, pi, pc, iou_threshold)))?;
    let pooled = per_image.iter().fold(PqStats::default(), |acc, s| merge_stats(&acc, s));
    let agnostic: Vec<_> = per_image.iter().map(|s| s.agnostic).collect();
    report(&agnostic, &pooled)
}

/// Augments sample `k` with stream index `first_index + k`.
pub fn augment_batch(
    workers: &Workers,
    samples: &[Sample],
    cfg: &AugmentConfig,
    seed: u64,
    first_index: u64,
) -> Result<Vec<Sample>> {
    cfg.validate()?;
    workers.map(samples, |i, s| with_sample(i, augment(cfg, seed, first_index + i as u64, s)))
}
