//! Panoptic quality: per-image PQ, dataset-pooled PQ+, and per-class mPQ+.
//!
//! Matching uses IoU strictly above a threshold of at least 0.5, where each
//! ground-truth instance can match at most one prediction. Pair overlaps are
//! collected in a single pass over the label maps.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hover::majority;
use crate::raster::{ClassMap, InstanceMap, NucleusClass, NUM_CLASS_SLOTS};

/// Default matching threshold.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// One matched ground-truth / prediction pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub gt_id: u32,
    pub pred_id: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    /// Sorted by ground-truth id.
    pub matches: Vec<Match>,
    pub unmatched_gt: Vec<u32>,
    pub unmatched_pred: Vec<u32>,
}

/// Ids, areas and pairwise overlaps of two label maps.
struct Overlaps {
    gt_areas: BTreeMap<u32, usize>,
    pred_areas: BTreeMap<u32, usize>,
    pairs: HashMap<(u32, u32), usize>,
}

impl Overlaps {
    fn count(gt: &InstanceMap, pred: &InstanceMap) -> Result<Self> {
        if !gt.same_shape(pred) {
            return Err(Error::ShapeMismatch(format!(
                "ground truth is {}x{}, prediction is {}x{}",
                gt.height(),
                gt.width(),
                pred.height(),
                pred.width()
            )));
        }
        let mut gt_areas = BTreeMap::new();
        let mut pred_areas = BTreeMap::new();
        let mut pairs = HashMap::new();
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            if g > 0 {
                *gt_areas.entry(g).or_insert(0) += 1;
            }
            if p > 0 {
                *pred_areas.entry(p).or_insert(0) += 1;
            }
            if g > 0 && p > 0 {
                *pairs.entry((g, p)).or_insert(0) += 1;
            }
        }
        Ok(Self { gt_areas, pred_areas, pairs })
    }

    fn matching(&self, iou_threshold: f64) -> Matching {
        let mut matches: Vec<Match> = self
            .pairs
            .iter()
            .filter_map(|(&(gt_id, pred_id), &inter)| {
                let union = self.gt_areas[&gt_id] + self.pred_areas[&pred_id] - inter;
                let iou = inter as f64 / union as f64;
                (iou > iou_threshold).then_some(Match { gt_id, pred_id, iou })
            })
            .collect();
        matches.sort_by_key(|m| m.gt_id);
        let matched_gt: std::collections::HashSet<u32> = matches.iter().map(|m| m.gt_id).collect();
        let matched_pred: std::collections::HashSet<u32> = matches.iter().map(|m| m.pred_id).collect();
        Matching {
            unmatched_gt: self.gt_areas.keys().copied().filter(|id| !matched_gt.contains(id)).collect(),
            unmatched_pred: self.pred_areas.keys().copied().filter(|id| !matched_pred.contains(id)).collect(),
            matches,
        }
    }
}

pub fn check_iou_threshold(iou_threshold: f64) -> Result<()> {
    if !(0.5..1.0).contains(&iou_threshold) {
        return Err(Error::InvalidParameter(format!("IoU threshold {iou_threshold} must lie in [0.5, 1)")));
    }
    Ok(())
}

/// Pairs instances with IoU above `iou_threshold` (which must be ≥ 0.5, so
/// the pairing is one-to-one).
pub fn match_instances(gt: &InstanceMap, pred: &InstanceMap, iou_threshold: f64) -> Result<Matching> {
    check_iou_threshold(iou_threshold)?;
    Ok(Overlaps::count(gt, pred)?.matching(iou_threshold))
}

/// Detection counts and summed IoU for one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PqCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
}

impl PqCounts {
    pub fn merge(&self, other: &PqCounts) -> PqCounts {
        PqCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            iou_sum: self.iou_sum + other.iou_sum,
        }
    }

    /// True when the slot saw no instances at all.
    pub fn is_blank(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    /// `iou_sum / (tp + fp/2 + fn/2)`, or 0 for a blank slot.
    pub fn pq(&self) -> f64 {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom == 0.0 {
            0.0
        } else {
            self.iou_sum / denom
        }
    }
}

/// Class-agnostic counts plus one slot per nucleus class (index = class id).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PqStats {
    pub agnostic: PqCounts,
    /// Slot 0 is unused.
    pub per_class: [PqCounts; NUM_CLASS_SLOTS],
}

impl PqStats {
    pub fn class(&self, class: NucleusClass) -> &PqCounts {
        &self.per_class[class.id() as usize]
    }
}

/// Fieldwise sum.
pub fn merge_stats(a: &PqStats, b: &PqStats) -> PqStats {
    let mut per_class = [PqCounts::default(); NUM_CLASS_SLOTS];
    for (slot, (x, y)) in per_class.iter_mut().zip(a.per_class.iter().zip(&b.per_class)) {
        *slot = x.merge(y);
    }
    PqStats { agnostic: a.agnostic.merge(&b.agnostic), per_class }
}

/// Majority class of every instance id; ties go to the lower class.
fn instance_classes(instances: &InstanceMap, classes: &ClassMap) -> Result<BTreeMap<u32, u8>> {
    if instances.height() != classes.height() || instances.width() != classes.width() {
        return Err(Error::ShapeMismatch("instance and class maps differ in size".into()));
    }
    let mut votes: BTreeMap<u32, [usize; NUM_CLASS_SLOTS]> = BTreeMap::new();
    for (&l, &c) in instances.labels().iter().zip(classes.classes()) {
        if l > 0 {
            votes.entry(l).or_insert([0; NUM_CLASS_SLOTS])[c as usize] += 1;
        }
    }
    Ok(votes.into_iter().map(|(id, v)| (id, majority(&v))).collect())
}

/// Adds one image's statistics to `stats`.
///
/// Per-class slots count a pair as a true positive only when both sides carry
/// that class; an exact-shape match with the wrong class is one false
/// positive for the predicted class and one false negative for the true one.
pub fn accumulate_pq(
    gt_inst: &InstanceMap,
    gt_class: &ClassMap,
    pred_inst: &InstanceMap,
    pred_class: &ClassMap,
    stats: &PqStats,
    iou_threshold: f64,
) -> Result<PqStats> {
    Ok(merge_stats(stats, &image_stats(gt_inst, gt_class, pred_inst, pred_class, iou_threshold)?))
}

/// Statistics of a single image.
pub fn image_stats(
    gt_inst: &InstanceMap,
    gt_class: &ClassMap,
    pred_inst: &InstanceMap,
    pred_class: &ClassMap,
    iou_threshold: f64,
) -> Result<PqStats> {
    check_iou_threshold(iou_threshold)?;
    let overlaps = Overlaps::count(gt_inst, pred_inst)?;
    let matching = overlaps.matching(iou_threshold);
    let gt_cls = instance_classes(gt_inst, gt_class)?;
    let pred_cls = instance_classes(pred_inst, pred_class)?;

    let mut stats = PqStats {
        agnostic: PqCounts {
            tp: matching.matches.len() as u64,
            fp: matching.unmatched_pred.len() as u64,
            fn_: matching.unmatched_gt.len() as u64,
            iou_sum: matching.matches.iter().map(|m| m.iou).sum(),
        },
        ..PqStats::default()
    };

    let mut gt_counts = [0u64; NUM_CLASS_SLOTS];
    let mut pred_counts = [0u64; NUM_CLASS_SLOTS];
    gt_cls.values().for_each(|&c| gt_counts[c as usize] += 1);
    pred_cls.values().for_each(|&c| pred_counts[c as usize] += 1);
    for m in &matching.matches {
        let (gc, pc) = (gt_cls[&m.gt_id], pred_cls[&m.pred_id]);
        if gc == pc && gc != 0 {
            let slot = &mut stats.per_class[gc as usize];
            slot.tp += 1;
            slot.iou_sum += m.iou;
        }
    }
    for c in 1..NUM_CLASS_SLOTS {
        let slot = &mut stats.per_class[c];
        slot.fn_ = gt_counts[c] - slot.tp;
        slot.fp = pred_counts[c] - slot.tp;
    }
    Ok(stats)
}

/// Evaluation summary with the fields of the published results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub mpq_plus: f64,
    pub pq: f64,
    pub pq_plus: f64,
    /// Indexed by class id; slot 0 unused.
    pub class_pq_plus: [f64; NUM_CLASS_SLOTS],
}

impl EvalReport {
    /// `(name, value)` pairs in report column order.
    pub fn fields(&self) -> Vec<(String, f64)> {
        let mut out =
            vec![("mPQ+".to_string(), self.mpq_plus), ("PQ".to_string(), self.pq), ("PQ+".to_string(), self.pq_plus)];
        for class in NucleusClass::REPORT_ORDER {
            out.push((format!("PQ+ - {}", class.abbrev()), self.class_pq_plus[class.id() as usize]));
        }
        out
    }

    /// One `name<TAB>value` line per field.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (name, value) in self.fields() {
            let _ = writeln!(s, "{name}\t{value:.5}");
        }
        s
    }

    /// Markdown-style table: a header row of field names and one value row.
    pub fn to_table(&self) -> String {
        let fields = self.fields();
        let header: Vec<_> = fields.iter().map(|(n, _)| n.clone()).collect();
        let values: Vec<_> = fields.iter().map(|(_, v)| format!("{v:.5}")).collect();
        format!("| {} |\n|{}|\n| {} |\n", header.join(" | "), vec!["---"; header.len()].join("|"), values.join(" | "))
    }
}

/// Builds the report from per-image class-agnostic counts and pooled stats.
///
/// Images with no instances on either side are left out of the PQ average.
pub fn report(per_image_agnostic: &[PqCounts], pooled: &PqStats) -> Result<EvalReport> {
    if per_image_agnostic.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scored: Vec<f64> = per_image_agnostic.iter().filter(|c| !c.is_blank()).map(PqCounts::pq).collect();
    let pq = if scored.is_empty() { 0.0 } else { scored.iter().sum::<f64>() / scored.len() as f64 };
    let mut class_pq_plus = [0.0; NUM_CLASS_SLOTS];
    for class in NucleusClass::ALL {
        class_pq_plus[class.id() as usize] = pooled.class(class).pq();
    }
    let mpq_plus = NucleusClass::ALL.iter().map(|c| class_pq_plus[c.id() as usize]).sum::<f64>() / 6.0;
    Ok(EvalReport { mpq_plus, pq, pq_plus: pooled.agnostic.pq(), class_pq_plus })
}

/// Evaluates a list of `(gt_inst, gt_class, pred_inst, pred_class)` samples sequentially.
pub fn evaluate<'a, I>(samples: I, iou_threshold: f64) -> Result<EvalReport>
where
    I: IntoIterator<Item = (&'a InstanceMap, &'a ClassMap, &'a InstanceMap, &'a ClassMap)>,
{
    let mut per_image = Vec::new();
    let mut pooled = PqStats::default();
    for (gi, gc, pi, pc) in samples {
        let s = image_stats(gi, gc, pi, pc, iou_threshold)?;
        per_image.push(s.agnostic);
        pooled = merge_stats(&pooled, &s);
    }
    report(&per_image, &pooled)
}
