//! Keypoint skeletons and the clustered bounded-PCA pose generator.

mod birch;
mod heatmap;
mod model;
mod normalize;
pub mod pca;
mod skeleton;

pub use birch::{birch, BirchConfig, Clustering};
pub use heatmap::{default_sigma, render_heatmaps, KeypointHeatmaps, DEFAULT_SIGMA_AT_64};
pub use model::{
    cluster_poses, cluster_viewpoints, fit_pca, sample_skeleton, PoseClusterModel, PoseModel, PoseModelConfig, SampleFate,
    ViewpointCluster, MIN_CLUSTER_MEMBERS, NUM_COMPONENTS, POSE_MODEL_FORMAT,
};
pub use normalize::{normalize_skeleton, torso_anchors, NormalizedSkeleton, ANKLE_ABOVE_GROUND, BODY_TO_TORSO, TORSO_CENTER_ABOVE_GROUND};
pub use skeleton::{read_keypoint_jsonl, Keypoint, KeypointRecord, Skeleton, KEYPOINT_NAMES, LIMBS, NUM_KEYPOINTS};

/// Keypoint filter used before clustering.
pub fn filter_sample<T: dummynet_nn::Scalar>(skeleton: &Skeleton<T>) -> bool {
    skeleton.passes_filter()
}
