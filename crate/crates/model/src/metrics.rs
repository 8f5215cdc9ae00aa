//! Box overlap and frame-level mean average precision.

use std::collections::{BTreeMap, BTreeSet};

use renet_events::BBox;

use crate::detector::Detection;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) as f64 - a.x1.max(b.x1) as f64).max(0.0);
    let ih = (a.y2.min(b.y2) as f64 - a.y1.max(b.y1) as f64).max(0.0);
    let inter = iw * ih;
    let area = |r: &BBox| (r.x2 as f64 - r.x1 as f64).max(0.0) * (r.y2 as f64 - r.y1 as f64).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub ap: f64,
    pub n_gt: usize,
    pub n_det: usize,
    pub true_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    /// Mean AP over classes with at least one ground-truth box; 0 when there are none.
    pub map: f64,
    pub per_class: BTreeMap<u8, ClassAp>,
    pub threshold: f64,
}

/// One frame: its detections and ground-truth `(class, box)` pairs.
#[derive(Debug, Clone, Default)]
pub struct FrameEval {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<(u8, BBox)>,
}

/// Area under the monotone precision envelope of a ranked list, given the number of true
/// positives among the first `r` detections for every `r`.
pub fn average_precision(tp_at_rank: &[usize], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let precision: Vec<f64> = tp_at_rank.iter().enumerate().map(|(r, &tp)| tp as f64 / (r + 1) as f64).collect();
    let mut envelope = precision.clone();
    for r in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[r] = envelope[r].max(envelope[r + 1]);
    }
    let mut ap = 0.0;
    let mut prev_tp = 0;
    for (r, &tp) in tp_at_rank.iter().enumerate() {
        if tp > prev_tp {
            ap += (tp - prev_tp) as f64 / n_gt as f64 * envelope[r];
            prev_tp = tp;
        }
    }
    ap
}

/// Incremental maximum bipartite matching between detections and ground truth of one frame.
struct FrameMatcher {
    /// Candidate ground-truth indices per inserted detection.
    edges: Vec<Vec<usize>>,
    gt_owner: Vec<Option<usize>>,
}

impl FrameMatcher {
    fn new(n_gt: usize) -> Self {
        Self { edges: Vec::new(), gt_owner: vec![None; n_gt] }
    }

    /// Adds a detection; returns whether the maximum matching grew.
    fn insert(&mut self, candidates: Vec<usize>) -> bool {
        let d = self.edges.len();
        self.edges.push(candidates);
        let mut seen = vec![false; self.gt_owner.len()];
        self.augment(d, &mut seen)
    }

    fn augment(&mut self, d: usize, seen: &mut [bool]) -> bool {
        for k in 0..self.edges[d].len() {
            let g = self.edges[d][k];
            if seen[g] {
                continue;
            }
            seen[g] = true;
            let free = match self.gt_owner[g] {
                None => true,
                Some(other) => self.augment(other, seen),
            };
            if free {
                self.gt_owner[g] = Some(d);
                return true;
            }
        }
        false
    }
}

/// Frame mAP at IoU threshold `tau`.
///
/// Detections of a class are ranked by descending score (ties by frame, then list order). At
/// every rank the number of true positives is the size of a maximum one-to-one matching between
/// the detections so far and the ground truth of their frames, over pairs with `IoU >= tau`.
/// It grows by at most one per rank, so the prefix matchings are maintained by augmenting paths.
pub fn frame_map(frames: &[FrameEval], tau: f64) -> MapReport {
    let mut classes: BTreeSet<u8> = BTreeSet::new();
    for f in frames {
        classes.extend(f.ground_truth.iter().map(|(c, _)| *c));
        classes.extend(f.detections.iter().map(|d| d.class_id));
    }
    let mut per_class = BTreeMap::new();
    for &class in &classes {
        let gts: Vec<Vec<BBox>> = frames
            .iter()
            .map(|f| f.ground_truth.iter().filter(|(c, _)| *c == class).map(|(_, b)| *b).collect())
            .collect();
        let n_gt: usize = gts.iter().map(Vec::len).sum();
        let mut ranked: Vec<(f32, usize, usize)> = Vec::new();
        for (fi, f) in frames.iter().enumerate() {
            for (di, d) in f.detections.iter().enumerate() {
                if d.class_id == class {
                    ranked.push((d.score, fi, di));
                }
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut matchers: Vec<FrameMatcher> = gts.iter().map(|g| FrameMatcher::new(g.len())).collect();
        let mut tp = 0;
        let mut tp_at_rank = Vec::with_capacity(ranked.len());
        for &(_, fi, di) in &ranked {
            let det = &frames[fi].detections[di].bbox;
            let candidates = (0..gts[fi].len()).filter(|&g| iou(det, &gts[fi][g]) >= tau).collect();
            if matchers[fi].insert(candidates) {
                tp += 1;
            }
            tp_at_rank.push(tp);
        }
        per_class.insert(
            class,
            ClassAp { ap: average_precision(&tp_at_rank, n_gt), n_gt, n_det: ranked.len(), true_positives: tp },
        );
    }
    let evaluated: Vec<f64> = per_class.values().filter(|c| c.n_gt > 0).map(|c| c.ap).collect();
    let map = if evaluated.is_empty() { 0.0 } else { evaluated.iter().sum::<f64>() / evaluated.len() as f64 };
    MapReport { map, per_class, threshold: tau }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_iou() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(1.0, 1.0, 3.0, 3.0)), 1.0 / 7.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
    }

    #[test]
    fn augmenting_beats_greedy_on_a_conflict() {
        // det 0 overlaps both gts; det 1 overlaps only gt 0. Greedy would match det 0 to gt 0.
        let mut m = FrameMatcher::new(2);
        assert!(m.insert(vec![0, 1]));
        assert!(m.insert(vec![0]));
        assert_eq!(m.gt_owner, vec![Some(1), Some(0)]);
    }

    #[test]
    fn ap_of_hand_ranking() {
        // TP, FP, TP with 2 ground truths: precisions 1, 1/2, 2/3
        assert!((average_precision(&[1, 1, 2], 2) - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(average_precision(&[], 3), 0.0);
    }
}
