//! Segmentation losses with analytic gradients with respect to the logits.
//!
//! Class-probability losses take `N×C` logits and apply a row-wise softmax
//! internally, so gradients include the softmax Jacobian. The asymmetric
//! terms treat a configurable set of "rare" classes differently from the
//! rest: focal suppression is applied only to non-rare pixels, and the
//! focal-Tversky exponent only to rare classes.

use crate::error::{Error, Result};
use crate::hover::{sobel_adjoint, sobel_plane, Axis};
use crate::raster::{HoVerMaps, Plane};
use crate::scalar::Real;

/// Sobel aperture used by the HoVer gradient term.
pub const HV_SOBEL_APERTURE: usize = 5;

/// Logits and integer targets for `n` pixels over `classes` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LossInput<T> {
    n: usize,
    classes: usize,
    logits: Vec<T>,
    labels: Vec<usize>,
    rare: Vec<bool>,
}

impl<T: Real> LossInput<T> {
    /// Rare classes default to every class except 0.
    pub fn new(logits: Vec<T>, n: usize, classes: usize, labels: Vec<usize>) -> Result<Self> {
        if classes == 0 || logits.len() != n * classes || labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} logits and {} labels for {n} pixels x {classes} classes",
                logits.len(),
                labels.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("logits must be finite".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidParameter(format!("target class {bad} >= {classes}")));
        }
        let rare = (0..classes).map(|c| c != 0).collect();
        Ok(Self { n, classes, logits, labels, rare })
    }

    /// Builds the input from one-hot target rows.
    pub fn from_one_hot(logits: Vec<T>, n: usize, classes: usize, targets: &[T]) -> Result<Self> {
        if targets.len() != n * classes {
            return Err(Error::ShapeMismatch("one-hot targets must be N×C".into()));
        }
        let labels = targets
            .chunks_exact(classes.max(1))
            .map(|row| {
                let hot: Vec<usize> = (0..classes).filter(|&c| row[c] == T::one()).collect();
                let zeros = row.iter().filter(|&&v| v == T::zero()).count();
                match hot.as_slice() {
                    [c] if zeros == classes - 1 => Ok(*c),
                    _ => Err(Error::InvalidParameter("target row is not one-hot".into())),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(logits, n, classes, labels)
    }

    pub fn with_rare_classes(mut self, rare: &[usize]) -> Result<Self> {
        if let Some(&bad) = rare.iter().find(|&&c| c >= self.classes) {
            return Err(Error::InvalidParameter(format!("rare class {bad} >= {}", self.classes)));
        }
        self.rare = (0..self.classes).map(|c| rare.contains(&c)).collect();
        Ok(self)
    }

    /// Same targets, new logits.
    pub fn with_logits(&self, logits: Vec<T>) -> Result<Self> {
        if logits.len() != self.logits.len() {
            return Err(Error::ShapeMismatch("replacement logits have a different length".into()));
        }
        Ok(Self { logits, ..self.clone() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_rare(&self, class: usize) -> bool {
        self.rare[class]
    }

    fn target(&self, i: usize, c: usize) -> T {
        if self.labels[i] == c {
            T::one()
        } else {
            T::zero()
        }
    }

    /// Row-wise softmax probabilities and the log-probability of the target.
    fn softmax(&self) -> (Vec<T>, Vec<T>) {
        let c = self.classes;
        let mut probs = vec![T::zero(); self.logits.len()];
        let mut log_pt = Vec::with_capacity(self.n);
        for (i, row) in self.logits.chunks_exact(c).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let out = &mut probs[i * c..(i + 1) * c];
            let mut sum = T::zero();
            for (o, &z) in out.iter_mut().zip(row) {
                *o = (z - max).exp();
                sum += *o;
            }
            out.iter_mut().for_each(|o| *o /= sum);
            log_pt.push(row[self.labels[i]] - max - sum.ln());
        }
        (probs, log_pt)
    }
}

/// Loss value and its gradient. For class losses the gradient is `N×C`
/// w.r.t. logits; for [`hv_loss`] it is the h plane followed by the v plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult<T> {
    pub value: T,
    pub grad: Vec<T>,
}

impl<T: Real> LossResult<T> {
    fn scaled(mut self, w: T) -> Self {
        self.value *= w;
        self.grad.iter_mut().for_each(|g| *g *= w);
        self
    }

    fn add(mut self, other: &Self) -> Self {
        self.value += other.value;
        self.grad.iter_mut().zip(&other.grad).for_each(|(a, &b)| *a += b);
        self
    }
}

/// Maps `dL/dp` to `dL/dz` through each row's softmax.
fn softmax_backward<T: Real>(probs: &[T], dl_dp: &[T], classes: usize) -> Vec<T> {
    let mut out = vec![T::zero(); probs.len()];
    for ((p, d), o) in probs.chunks_exact(classes).zip(dl_dp.chunks_exact(classes)).zip(out.chunks_exact_mut(classes)) {
        let dot: T = p.iter().zip(d).map(|(&a, &b)| a * b).sum();
        for j in 0..classes {
            o[j] = p[j] * (d[j] - dot);
        }
    }
    out
}

/// Per-class sums `(Σ p·g, Σ p, Σ g)`.
fn class_sums<T: Real>(input: &LossInput<T>, probs: &[T]) -> Vec<(T, T, T)> {
    let c = input.classes;
    let mut sums = vec![(T::zero(), T::zero(), T::zero()); c];
    for i in 0..input.n {
        for k in 0..c {
            let p = probs[i * c + k];
            let g = input.target(i, k);
            sums[k].0 += p * g;
            sums[k].1 += p;
            sums[k].2 += g;
        }
    }
    sums
}

/// Mean over classes of `1 - (2Σpg + s)/(Σp + Σg + s)`.
pub fn dice_loss<T: Real>(input: &LossInput<T>, smooth: T) -> LossResult<T> {
    let c = input.classes;
    let (probs, _) = input.softmax();
    let sums = class_sums(input, &probs);
    let two = T::lit(2.0);
    let cf = T::from_usize_lossy(c);

    let mut value = T::zero();
    let mut factors = Vec::with_capacity(c);
    for &(inter, p_sum, g_sum) in &sums {
        let num = two * inter + smooth;
        let den = p_sum + g_sum + smooth;
        value += T::one() - num / den;
        factors.push((num, den));
    }
    value /= cf;

    let mut dl_dp = vec![T::zero(); probs.len()];
    for i in 0..input.n {
        for k in 0..c {
            let (num, den) = factors[k];
            let g = input.target(i, k);
            dl_dp[i * c + k] = -(two * g * den - num) / (den * den) / cf;
        }
    }
    LossResult { value, grad: softmax_backward(&probs, &dl_dp, c) }
}

/// Asymmetric focal loss: plain weighted cross-entropy on rare-class pixels,
/// focal-suppressed cross-entropy on the rest.
pub fn asym_focal_loss<T: Real>(input: &LossInput<T>, delta: T, gamma: T) -> LossResult<T> {
    let c = input.classes;
    let (probs, log_pt) = input.softmax();
    let nf = T::from_usize_lossy(input.n);
    let one = T::one();

    let mut value = T::zero();
    let mut grad = vec![T::zero(); probs.len()];
    for i in 0..input.n {
        let t = input.labels[i];
        let row = &probs[i * c..(i + 1) * c];
        let lp = log_pt[i];
        // coefficient k such that dterm/dz_j = k·(p_j − [j = t])
        let k = if input.rare[t] {
            value += -delta * lp;
            delta
        } else {
            let p_t = row[t];
            let q: T = (0..c).filter(|&j| j != t).map(|j| row[j]).sum();
            let focal = q.powf(gamma);
            value += -(one - delta) * focal * lp;
            let curvature = if q > T::zero() { gamma * q.powf(gamma - one) * p_t * lp } else { T::zero() };
            (one - delta) * (focal - curvature)
        };
        for j in 0..c {
            let indicator = if j == t { one } else { T::zero() };
            grad[i * c + j] = k * (row[j] - indicator) / nf;
        }
    }
    LossResult { value: value / nf, grad }
}

/// Asymmetric focal-Tversky loss summed over classes.
///
/// With `gamma = 1` each rare class contributes a constant 1 and no gradient.
pub fn asym_focal_tversky_loss<T: Real>(input: &LossInput<T>, delta: T, gamma: T, smooth: T) -> LossResult<T> {
    let c = input.classes;
    let (probs, _) = input.softmax();
    let sums = class_sums(input, &probs);
    let one = T::one();

    let mut value = T::zero();
    // (A, B, dL/dTI) per class where TI = A/B
    let mut parts = Vec::with_capacity(c);
    for (k, &(inter, p_sum, g_sum)) in sums.iter().enumerate() {
        let fn_ = g_sum - inter;
        let fp = p_sum - inter;
        let a = inter + smooth;
        let b = inter + delta * fn_ + (one - delta) * fp + smooth;
        let gap = (one - a / b).max(T::zero());
        let dl_dti = if input.rare[k] {
            value += gap.powf(one - gamma);
            if gap > T::zero() {
                -(one - gamma) * gap.powf(-gamma)
            } else {
                T::zero()
            }
        } else {
            value += gap;
            -one
        };
        parts.push((a, b, dl_dti));
    }

    let mut dl_dp = vec![T::zero(); probs.len()];
    for i in 0..input.n {
        for k in 0..c {
            let (a, b, dl_dti) = parts[k];
            let g = input.target(i, k);
            // dA/dp = g, dB/dp = g + δ(−g) + (1−δ)(1−g)
            let db = g - delta * g + (one - delta) * (one - g);
            let dti = (g * b - a * db) / (b * b);
            dl_dp[i * c + k] = dl_dti * dti;
        }
    }
    LossResult { value, grad: softmax_backward(&probs, &dl_dp, c) }
}

/// Unified focal loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UflParams<T> {
    /// Weight of the focal term; the focal-Tversky term gets `1 - lambda`.
    pub lambda: T,
    pub delta: T,
    pub gamma: T,
    pub smooth: T,
}

impl<T: Real> Default for UflParams<T> {
    fn default() -> Self {
        Self { lambda: T::lit(0.5), delta: T::lit(0.6), gamma: T::lit(0.5), smooth: T::lit(1e-6) }
    }
}

impl<T: Real> UflParams<T> {
    pub fn validate(&self) -> Result<()> {
        let (z, o) = (T::zero(), T::one());
        if !(self.lambda >= z && self.lambda <= o) {
            return Err(Error::InvalidParameter("lambda must lie in [0,1]".into()));
        }
        if !(self.delta > z && self.delta < o) {
            return Err(Error::InvalidParameter("delta must lie in (0,1)".into()));
        }
        if !(self.gamma >= z && self.gamma < o) {
            return Err(Error::InvalidParameter("gamma must lie in [0,1)".into()));
        }
        if !(self.smooth >= z) || !self.smooth.is_finite() {
            return Err(Error::InvalidParameter("smooth must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `lambda·focal + (1 − lambda)·focal-Tversky` with shared `delta`, `gamma`.
pub fn unified_focal_loss<T: Real>(input: &LossInput<T>, params: &UflParams<T>) -> LossResult<T> {
    let focal = asym_focal_loss(input, params.delta, params.gamma);
    let tversky = asym_focal_tversky_loss(input, params.delta, params.gamma, params.smooth);
    if params.lambda == T::one() {
        return focal;
    }
    if params.lambda == T::zero() {
        return tversky;
    }
    focal.scaled(params.lambda).add(&tversky.scaled(T::one() - params.lambda))
}

/// Predicted and target HoVer maps with the nuclear-pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HvInput<T> {
    pub pred: HoVerMaps<T>,
    pub target: HoVerMaps<T>,
    pub mask: Plane<u8>,
}

/// Per-channel MSE of the maps plus per-channel masked MSE of their Sobel
/// derivatives (x for h, y for v).
pub fn hv_loss<T: Real>(input: &HvInput<T>) -> Result<LossResult<T>> {
    let (pred, target, mask) = (&input.pred, &input.target, &input.mask);
    let (h, w) = (pred.height(), pred.width());
    if target.height() != h || target.width() != w || mask.height() != h || mask.width() != w {
        return Err(Error::ShapeMismatch("hv prediction, target and mask must share a shape".into()));
    }
    let n = h * w;
    let nf = T::from_usize_lossy(n);
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut grad = vec![T::zero(); 2 * n];

    let masked = mask.data().iter().filter(|&&m| m != 0).count();
    let channels = [(pred.h(), target.h(), Axis::X), (pred.v(), target.v(), Axis::Y)];
    for (ch, (p, t, axis)) in channels.into_iter().enumerate() {
        let err: Vec<T> = p.iter().zip(t).map(|(&a, &b)| a - b).collect();
        value += err.iter().map(|&e| e * e).sum::<T>() / nf;
        let g = &mut grad[ch * n..(ch + 1) * n];
        g.iter_mut().zip(&err).for_each(|(g, &e)| *g = two * e / nf);

        if masked == 0 {
            continue;
        }
        let mf = T::from_usize_lossy(masked);
        let derr = sobel_plane(&Plane::new(h, w, err)?, axis, HV_SOBEL_APERTURE)?.into_data();
        let mut back = vec![T::zero(); n];
        for i in 0..n {
            if mask.data()[i] != 0 {
                value += derr[i] * derr[i] / mf;
                back[i] = two * derr[i] / mf;
            }
        }
        let adj = sobel_adjoint(&back, h, w, axis, HV_SOBEL_APERTURE)?;
        g.iter_mut().zip(adj).for_each(|(g, a)| *g += a);
    }
    Ok(LossResult { value, grad })
}

/// Branch weights and shared settings of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeParams<T> {
    pub w_ufl: T,
    pub w_dice: T,
    pub w_hv: T,
    pub ufl: UflParams<T>,
    pub dice_smooth: T,
}

impl<T: Real> Default for CompositeParams<T> {
    fn default() -> Self {
        Self {
            w_ufl: T::lit(4.0),
            w_dice: T::one(),
            w_hv: T::one(),
            ufl: UflParams::default(),
            dice_smooth: T::lit(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeResult<T> {
    pub value: T,
    pub np_grad: Vec<T>,
    pub tp_grad: Vec<T>,
    pub hv_grad: Vec<T>,
}

/// `Σ_{np,tp} (w_ufl·UFL + w_dice·Dice) + w_hv·hv_loss`.
pub fn composite_loss<T: Real>(
    np: &LossInput<T>,
    tp: &LossInput<T>,
    hv: &HvInput<T>,
    params: &CompositeParams<T>,
) -> Result<CompositeResult<T>> {
    let branch = |input: &LossInput<T>| {
        unified_focal_loss(input, &params.ufl)
            .scaled(params.w_ufl)
            .add(&dice_loss(input, params.dice_smooth).scaled(params.w_dice))
    };
    let np_part = branch(np);
    let tp_part = branch(tp);
    let hv_part = hv_loss(hv)?.scaled(params.w_hv);
    Ok(CompositeResult {
        value: np_part.value + tp_part.value + hv_part.value,
        np_grad: np_part.grad,
        tp_grad: tp_part.grad,
        hv_grad: hv_part.grad,
    })
}
