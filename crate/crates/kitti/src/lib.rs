//! KITTI object-label and calibration I/O together with the metrics used to
//! score 3D detectors on it: rotated bird's-eye-view and 3D IoU, greedy NMS,
//! and 11/40-point interpolated average precision.

mod ap;
mod calib;
mod dataset;
mod error;
mod evaluate;
mod geometry;
mod label;
mod nms;

pub use ap::{average_precision, ApMode, PrCurve};
pub use calib::{parse_calib_file, project_center, write_calib_file, CalibP2};
pub use dataset::{
    frame_file_name, read_detections_for, read_label_dir, read_label_path, write_result_dir,
};
pub use error::{KittiError, Result};
pub use evaluate::{
    category_curve, evaluate_category, match_frame, pooled_curve, Category, EvalRecord, EvalSpec,
    FrameMatch, Metric, Outcome,
};
pub use geometry::{
    bev_intersection, box_area, convex_intersection_area, iou_2d, iou_3d, rotated_bev_iou, Box2d,
    Box3D, RotatedBevBox,
};
pub use label::{
    difficulty_of, parse_label_bytes, parse_label_file, parse_label_line, write_label_file,
    write_result_file, Difficulty, KittiObjectLabel,
};
pub use nms::{nms_2d, DEFAULT_NMS_IOU, DEFAULT_SCORE_FLOOR};
