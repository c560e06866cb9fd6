//! Rigid-pose algebra and geometric distances: Chamfer, EMD, rotation and
//! translation error, oriented-box IoU and AABB size.

mod assignment;
mod boxes;
mod cloud;
mod metrics;
mod pose;

pub use assignment::solve as solve_assignment;
pub use boxes::{box_iou_3d, box_iou_aligned, box_iou_monte_carlo, OrientedBox, MIN_IOU_SAMPLES};
pub use cloud::{aabb_center, aabb_size, apply_pose, PointCloud};
pub use metrics::{
    chamfer, emd, mean_nn_spacing, nearest_neighbors, one_sided_chamfer, rotation_error,
    translation_error, EMD_EXACT_CAP,
};
pub use pose::{
    add, cross, distance, dot, mat_mul, mat_vec, norm, quat_rotation_matrix, scale, sub,
    transpose, Mat3, Pose, Quat, Vec3,
};
