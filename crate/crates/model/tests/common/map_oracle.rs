//! Exhaustive frame-mAP reference for tiny instances.

use renet_events::BBox;
use renet_model::metrics::FrameEval;

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) as f64 - a.x1.max(b.x1) as f64).max(0.0);
    let h = (a.y2.min(b.y2) as f64 - a.y1.max(b.y1) as f64).max(0.0);
    let i = w * h;
    let area = |r: &BBox| (r.x2 - r.x1) as f64 * (r.y2 - r.y1) as f64;
    i / (area(a) + area(b) - i)
}

/// Largest number of detections in `dets` that can be paired one-to-one with boxes in `gts`,
/// by trying every assignment.
fn best_assignment(dets: &[BBox], gts: &[BBox], tau: f64, used: &mut Vec<bool>) -> usize {
    let Some((d, rest)) = dets.split_first() else { return 0 };
    let mut best = best_assignment(rest, gts, tau, used);
    for g in 0..gts.len() {
        if !used[g] && overlap(d, &gts[g]) >= tau {
            used[g] = true;
            best = best.max(1 + best_assignment(rest, gts, tau, used));
            used[g] = false;
        }
    }
    best
}

/// All-point interpolated AP from a precision/recall curve.
fn interpolated_ap(tp: &[usize], n_gt: usize) -> f64 {
    let mut recalls = vec![0.0];
    let mut precisions = vec![1.0];
    for (r, &t) in tp.iter().enumerate() {
        recalls.push(t as f64 / n_gt as f64);
        precisions.push(t as f64 / (r + 1) as f64);
    }
    let mut ap = 0.0;
    for i in 1..recalls.len() {
        let p_interp = precisions[i..].iter().cloned().fold(0.0, f64::max);
        ap += (recalls[i] - recalls[i - 1]) * p_interp;
    }
    ap
}

/// mAP where the true-positive count at every rank is the best achievable over all match
/// assignments of the detections ranked so far.
pub fn brute_force_map(frames: &[FrameEval], tau: f64) -> f64 {
    let mut classes: Vec<u8> = frames.iter().flat_map(|f| f.ground_truth.iter().map(|g| g.0)).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &c in &classes {
        let mut ranked = Vec::new();
        for (fi, f) in frames.iter().enumerate() {
            for (di, d) in f.detections.iter().enumerate() {
                if d.class_id == c {
                    ranked.push((d.score, fi, di));
                }
            }
        }
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let gts: Vec<Vec<BBox>> =
            frames.iter().map(|f| f.ground_truth.iter().filter(|g| g.0 == c).map(|g| g.1).collect()).collect();
        let n_gt: usize = gts.iter().map(Vec::len).sum();
        let mut tp = Vec::new();
        for r in 1..=ranked.len() {
            let mut count = 0;
            for (fi, g) in gts.iter().enumerate() {
                let dets: Vec<BBox> =
                    ranked[..r].iter().filter(|x| x.1 == fi).map(|x| frames[fi].detections[x.2].bbox).collect();
                count += best_assignment(&dets, g, tau, &mut vec![false; g.len()]);
            }
            tp.push(count);
        }
        total += interpolated_ap(&tp, n_gt);
    }
    total / classes.len() as f64
}
