//! Finite-difference self-checks of the loss gradients on random inputs.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::losses::{
    asym_focal_loss, asym_focal_tversky_loss, composite_loss, dice_loss, hv_loss, unified_focal_loss, CompositeParams,
    HvInput, LossInput, UflParams,
};
use crate::raster::{HoVerMaps, Plane};

/// Number of classes used by the random class-loss cases.
pub const CHECK_CLASSES: usize = 7;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Largest acceptable [`relative_error`].
pub const FD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Dice,
    AsymFocal,
    AsymFocalTversky,
    UnifiedFocal,
    Hv,
    Composite,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Dice,
        LossKind::AsymFocal,
        LossKind::AsymFocalTversky,
        LossKind::UnifiedFocal,
        LossKind::Hv,
        LossKind::Composite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Dice => "dice",
            LossKind::AsymFocal => "asym-focal",
            LossKind::AsymFocalTversky => "asym-focal-tversky",
            LossKind::UnifiedFocal => "ufl",
            LossKind::Hv => "hv",
            LossKind::Composite => "composite",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown loss {s:?}")))
    }
}

pub type ObjectiveFn = dyn Fn(&[f64]) -> (f64, Vec<f64>);
pub type Objective = Box<ObjectiveFn>;

fn class_case(rng: &mut ChaCha8Rng, classes: usize, n: usize) -> LossInput<f64> {
    let normal = Normal::new(0.0, 1.5).expect("valid normal");
    let logits: Vec<f64> = (0..n * classes).map(|_| normal.sample(rng)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    LossInput::new(logits, n, classes, labels).expect("consistent random case")
}

fn hv_case(rng: &mut ChaCha8Rng) -> HvInput<f64> {
    let h = rng.random_range(5..=8);
    let w = rng.random_range(5..=8);
    let mut maps = || {
        let hh = (0..h * w).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let vv = (0..h * w).map(|_| rng.random_range(-1.0..=1.0)).collect();
        HoVerMaps::new(h, w, hh, vv).expect("consistent maps")
    };
    let pred = maps();
    let target = maps();
    let mask = Plane::from_fn(h, w, |_, _| u8::from(rng.random::<bool>()));
    HvInput { pred, target, mask }
}

fn split_hv(x: &[f64], like: &HvInput<f64>) -> HvInput<f64> {
    let n = like.pred.height() * like.pred.width();
    let pred = HoVerMaps::new(like.pred.height(), like.pred.width(), x[..n].to_vec(), x[n..2 * n].to_vec())
        .expect("consistent maps");
    HvInput { pred, ..like.clone() }
}

/// A random instance of `kind` as a flat objective and its starting point.
pub fn random_case(kind: LossKind, seed: u64) -> (Objective, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=64);
    let ufl = UflParams::default();
    let class_loss = |input: LossInput<f64>, f: fn(&LossInput<f64>) -> (f64, Vec<f64>)| -> (Objective, Vec<f64>) {
        let x0 = input.logits().to_vec();
        (Box::new(move |x: &[f64]| f(&input.with_logits(x.to_vec()).expect("same length"))), x0)
    };
    match kind {
        LossKind::Dice => class_loss(class_case(&mut rng, CHECK_CLASSES, n), |i| {
            let r = dice_loss(i, 1e-6);
            (r.value, r.grad)
        }),
        LossKind::AsymFocal => class_loss(class_case(&mut rng, CHECK_CLASSES, n), |i| {
            let p = UflParams::<f64>::default();
            let r = asym_focal_loss(i, p.delta, p.gamma);
            (r.value, r.grad)
        }),
        LossKind::AsymFocalTversky => class_loss(class_case(&mut rng, CHECK_CLASSES, n), |i| {
            let p = UflParams::<f64>::default();
            let r = asym_focal_tversky_loss(i, p.delta, p.gamma, p.smooth);
            (r.value, r.grad)
        }),
        LossKind::UnifiedFocal => {
            let input = class_case(&mut rng, CHECK_CLASSES, n);
            let x0 = input.logits().to_vec();
            let f = move |x: &[f64]| {
                let r = unified_focal_loss(&input.with_logits(x.to_vec()).expect("same length"), &ufl);
                (r.value, r.grad)
            };
            (Box::new(f), x0)
        }
        LossKind::Hv => {
            let input = hv_case(&mut rng);
            let x0 = [input.pred.h(), input.pred.v()].concat();
            let f = move |x: &[f64]| {
                let r = hv_loss(&split_hv(x, &input)).expect("consistent shapes");
                (r.value, r.grad)
            };
            (Box::new(f), x0)
        }
        LossKind::Composite => {
            let hv = hv_case(&mut rng);
            let pixels = hv.pred.height() * hv.pred.width();
            let np = class_case(&mut rng, 2, pixels);
            let tp = class_case(&mut rng, CHECK_CLASSES, pixels);
            let (a, b) = (np.logits().len(), tp.logits().len());
            let x0 = [np.logits(), tp.logits(), hv.pred.h(), hv.pred.v()].concat();
            let params = CompositeParams::default();
            let f = move |x: &[f64]| {
                let np = np.with_logits(x[..a].to_vec()).expect("same length");
                let tp = tp.with_logits(x[a..a + b].to_vec()).expect("same length");
                let hv = split_hv(&x[a + b..], &hv);
                let r = composite_loss(&np, &tp, &hv, &params).expect("consistent shapes");
                (r.value, [r.np_grad, r.tp_grad, r.hv_grad].concat())
            };
            (Box::new(f), x0)
        }
    }
}

/// Central differences of the scalar part of `f` at `x`.
pub fn central_differences(f: &ObjectiveFn, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe).0;
            probe[i] = x[i] - step;
            let down = f(&probe).0;
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or 0 when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOutcome {
    pub kind: LossKind,
    pub seed: u64,
    pub params: usize,
    pub rel_error: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.rel_error < FD_TOLERANCE
    }
}

pub fn check_loss(kind: LossKind, seed: u64) -> CheckOutcome {
    let (f, x0) = random_case(kind, seed);
    let analytic = f(&x0).1;
    let numeric = central_differences(&*f, &x0, FD_STEP);
    CheckOutcome { kind, seed, params: x0.len(), rel_error: relative_error(&analytic, &numeric) }
}
