use crate::geometry::{iou_2d, Box2d};

/// Inference-time defaults: suppress above IoU 0.4, drop scores below 0.75.
pub const DEFAULT_NMS_IOU: f64 = 0.4;
pub const DEFAULT_SCORE_FLOOR: f64 = 0.75;

/// Greedy non-maximum suppression. Returns kept indices in the order they
/// were accepted (score descending, ties by lower index).
pub fn nms_2d(boxes: &[Box2d], scores: &[f64], iou_thresh: f64, score_thresh: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "one score per box");
    let mut order: Vec<usize> = (0..boxes.len()).filter(|&i| scores[i] >= score_thresh).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou_2d(&boxes[k], &boxes[i]) <= iou_thresh) {
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_box_keeps_higher_score() {
        let b = [10.0, 10.0, 20.0, 20.0];
        assert_eq!(nms_2d(&[b, b], &[0.9, 0.8], DEFAULT_NMS_IOU, DEFAULT_SCORE_FLOOR), vec![0]);
        assert_eq!(nms_2d(&[b, b], &[0.8, 0.9], DEFAULT_NMS_IOU, DEFAULT_SCORE_FLOOR), vec![1]);
    }

    #[test]
    fn disjoint_all_kept() {
        let boxes = [[0.0, 0.0, 1.0, 1.0], [2.0, 2.0, 3.0, 3.0], [5.0, 0.0, 6.0, 1.0]];
        assert_eq!(nms_2d(&boxes, &[0.8, 0.95, 0.9], 0.4, 0.75), vec![1, 2, 0]);
    }

    #[test]
    fn chain_reinstates_third() {
        // a suppresses b; c overlaps only b, so it survives.
        let boxes = [[0.0, 0.0, 2.0, 1.0], [1.0, 0.0, 3.0, 1.0], [2.0, 0.0, 4.0, 1.0]];
        assert_eq!(nms_2d(&boxes, &[0.9, 0.85, 0.8], 0.3, 0.75), vec![0, 2]);
    }

    #[test]
    fn score_floor() {
        let boxes = [[0.0, 0.0, 1.0, 1.0], [2.0, 2.0, 3.0, 3.0]];
        assert_eq!(nms_2d(&boxes, &[0.7, 0.75], 0.4, 0.75), vec![1]);
    }
}
