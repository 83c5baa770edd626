use std::path::Path;

use dummynet_nn::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::birch::{birch, BirchConfig};
use super::normalize::{normalize_skeleton, NormalizedSkeleton};
use super::pca::Pca;
use super::skeleton::{Skeleton, NUM_KEYPOINTS};
use crate::error::{Error, Result};

pub const POSE_MODEL_FORMAT: &str = "pose_model_v1";
pub const NUM_COMPONENTS: usize = 20;
pub const MIN_CLUSTER_MEMBERS: usize = 20;
const DIM: usize = 2 * NUM_KEYPOINTS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseModelConfig {
    pub viewpoint_clusters: usize,
    pub viewpoint_birch: BirchConfig,
    pub pose_birch: BirchConfig,
    /// Pose clusters per viewpoint cluster are `ceil(members / members_per_pose_cluster)`.
    pub members_per_pose_cluster: usize,
}

impl Default for PoseModelConfig {
    fn default() -> Self {
        Self {
            viewpoint_clusters: 189,
            viewpoint_birch: BirchConfig { threshold: 0.5, branching_factor: 50 },
            pose_birch: BirchConfig { threshold: 0.3, branching_factor: 50 },
            members_per_pose_cluster: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewpointCluster {
    pub id: usize,
    pub visibility_pattern: [bool; NUM_KEYPOINTS],
    /// Indices into the sample list given to [`cluster_viewpoints`].
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseClusterModel<T> {
    pub viewpoint_id: usize,
    pub pose_cluster_id: usize,
    pub mean: [T; DIM],
    /// 20 orthonormal rows.
    pub pca_basis: Vec<[T; DIM]>,
    /// `(min, max)` of member projections per component.
    pub component_bounds: Vec<(T, T)>,
    pub member_count: usize,
    pub visibility_pattern: [bool; NUM_KEYPOINTS],
}

fn majority_pattern<'a>(vis: impl Iterator<Item = &'a [bool; NUM_KEYPOINTS]>) -> [bool; NUM_KEYPOINTS] {
    let mut counts = [0usize; NUM_KEYPOINTS];
    let mut n = 0;
    for v in vis {
        n += 1;
        for k in 0..NUM_KEYPOINTS {
            counts[k] += v[k] as usize;
        }
    }
    counts.map(|c| 2 * c > n)
}

/// Groups samples by their binary visibility vectors.
pub fn cluster_viewpoints<T: Scalar>(samples: &[Skeleton<T>], target_clusters: usize, cfg: &BirchConfig) -> Vec<ViewpointCluster> {
    let data: Vec<Vec<f64>> = samples.iter().map(|s| s.visibility().iter().map(|&v| v as u8 as f64).collect()).collect();
    let c = birch(&data, target_clusters, cfg);
    let mut out: Vec<ViewpointCluster> = (0..c.centroids.len())
        .map(|id| ViewpointCluster { id, visibility_pattern: [false; NUM_KEYPOINTS], members: Vec::new() })
        .collect();
    for (i, &l) in c.labels.iter().enumerate() {
        out[l].members.push(i);
    }
    for vc in &mut out {
        vc.visibility_pattern = majority_pattern(vc.members.iter().map(|&i| samples[i].visibility()));
    }
    out
}

/// Pose-cluster label for each of `normalized` (the members of `cluster`, in order).
pub fn cluster_poses<T: Scalar>(
    cluster: &ViewpointCluster,
    normalized: &[NormalizedSkeleton<T>],
    target_clusters: usize,
    cfg: &BirchConfig,
) -> Vec<usize> {
    debug_assert_eq!(cluster.members.len(), normalized.len());
    let data: Vec<Vec<f64>> = normalized.iter().map(|n| n.coords.iter().map(|v| v.as_f64()).collect()).collect();
    birch(&data, target_clusters, cfg).labels
}

/// Bounded PCA model of one pose cluster. Cluster ids are left at zero.
pub fn fit_pca<T: Scalar>(members: &[NormalizedSkeleton<T>]) -> Result<PoseClusterModel<T>> {
    if members.len() < MIN_CLUSTER_MEMBERS {
        return Err(Error::TooFewMembers { found: members.len(), required: MIN_CLUSTER_MEMBERS });
    }
    let samples: Vec<Vec<T>> = members.iter().map(|m| m.coords.to_vec()).collect();
    let pca = Pca::fit(&samples, NUM_COMPONENTS)?;
    let mut bounds = vec![(T::infinity(), T::neg_infinity()); NUM_COMPONENTS];
    for s in &samples {
        for (b, c) in bounds.iter_mut().zip(pca.project(s)) {
            b.0 = b.0.min(c);
            b.1 = b.1.max(c);
        }
    }
    let row = |v: &[T]| -> [T; DIM] { v.try_into().expect("34-d row") };
    Ok(PoseClusterModel {
        viewpoint_id: 0,
        pose_cluster_id: 0,
        mean: row(&pca.mean),
        pca_basis: pca.basis.iter().map(|b| row(b)).collect(),
        component_bounds: bounds,
        member_count: members.len(),
        visibility_pattern: majority_pattern(members.iter().map(|m| &m.visibility)),
    })
}

impl<T: Scalar> PoseClusterModel<T> {
    pub fn project(&self, coords: &[T; DIM]) -> Vec<T> {
        self.pca_basis.iter().map(|b| b.iter().zip(coords).zip(&self.mean).map(|((b, x), m)| *b * (*x - *m)).sum()).collect()
    }

    pub fn reconstruct(&self, coeffs: &[T]) -> NormalizedSkeleton<T> {
        let mut coords = self.mean;
        for (b, c) in self.pca_basis.iter().zip(coeffs) {
            for (o, v) in coords.iter_mut().zip(b) {
                *o += *c * *v;
            }
        }
        NormalizedSkeleton { coords, visibility: self.visibility_pattern }
    }

    pub fn mean_pose(&self) -> NormalizedSkeleton<T> {
        NormalizedSkeleton { coords: self.mean, visibility: self.visibility_pattern }
    }
}

/// Draws each coefficient uniformly inside its bounds and maps back to pose space.
pub fn sample_skeleton<T: Scalar, R: Rng + ?Sized>(model: &PoseClusterModel<T>, rng: &mut R) -> NormalizedSkeleton<T> {
    let coeffs: Vec<T> = model
        .component_bounds
        .iter()
        .map(|&(lo, hi)| {
            let u: f64 = rng.random();
            lo + (hi - lo) * T::lit(u)
        })
        .collect();
    model.reconstruct(&coeffs)
}

/// Where each input sample ended up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFate {
    Filtered,
    /// Indexes into [`PoseModel::clusters`].
    Modeled(usize),
    /// Its pose cluster had fewer than the minimum number of members.
    SmallCluster { viewpoint_id: usize, pose_cluster_id: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseModel<T> {
    pub config: PoseModelConfig,
    pub clusters: Vec<PoseClusterModel<T>>,
}

impl<T: Scalar> PoseModel<T> {
    /// Full pipeline: filter, viewpoint clustering, normalization, pose
    /// clustering and per-cluster bounded PCA.
    pub fn fit(samples: &[Skeleton<T>], config: PoseModelConfig) -> Result<(Self, Vec<SampleFate>)> {
        let mut fates = vec![SampleFate::Filtered; samples.len()];
        let mut kept = Vec::new();
        let mut normalized = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if !s.passes_filter() {
                continue;
            }
            // Filtered samples always have a shoulder and a hip, so only a
            // zero-height torso can fail here.
            if let Ok(n) = normalize_skeleton(s) {
                kept.push(i);
                normalized.push(n);
            }
        }
        if kept.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let kept_skeletons: Vec<Skeleton<T>> = kept.iter().map(|&i| samples[i].clone()).collect();
        let viewpoints = cluster_viewpoints(&kept_skeletons, config.viewpoint_clusters, &config.viewpoint_birch);
        let mut clusters = Vec::new();
        for vc in &viewpoints {
            let members: Vec<NormalizedSkeleton<T>> = vc.members.iter().map(|&j| normalized[j].clone()).collect();
            let target = vc.members.len().div_ceil(config.members_per_pose_cluster.max(1));
            let labels = cluster_poses(vc, &members, target, &config.pose_birch);
            let n_pose = labels.iter().copied().max().map_or(0, |m| m + 1);
            for pc in 0..n_pose {
                let idx: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == pc).collect();
                let group: Vec<NormalizedSkeleton<T>> = idx.iter().map(|&j| members[j].clone()).collect();
                match fit_pca(&group) {
                    Ok(mut m) => {
                        m.viewpoint_id = vc.id;
                        m.pose_cluster_id = pc;
                        m.visibility_pattern = vc.visibility_pattern;
                        for &j in &idx {
                            fates[kept[vc.members[j]]] = SampleFate::Modeled(clusters.len());
                        }
                        clusters.push(m);
                    }
                    Err(Error::TooFewMembers { .. }) => {
                        for &j in &idx {
                            fates[kept[vc.members[j]]] = SampleFate::SmallCluster { viewpoint_id: vc.id, pose_cluster_id: pc };
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if clusters.is_empty() {
            return Err(Error::TooFewMembers { found: kept.len().min(MIN_CLUSTER_MEMBERS - 1), required: MIN_CLUSTER_MEMBERS });
        }
        Ok((Self { config, clusters }, fates))
    }

    /// Picks a cluster with probability proportional to its size, then samples it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, NormalizedSkeleton<T>) {
        let total: usize = self.clusters.iter().map(|c| c.member_count).sum();
        let mut r = rng.random_range(0..total);
        let mut idx = 0;
        for (i, c) in self.clusters.iter().enumerate() {
            if r < c.member_count {
                idx = i;
                break;
            }
            r -= c.member_count;
        }
        (idx, sample_skeleton(&self.clusters[idx], rng))
    }

    /// Index of the most populated cluster.
    pub fn largest_cluster(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.clusters.iter().enumerate() {
            if c.member_count > self.clusters[best].member_count {
                best = i;
            }
        }
        best
    }

    pub fn to_json(&self) -> serde_json::Value {
        let clusters: Vec<StoredCluster> = self.clusters.iter().map(StoredCluster::from_model).collect();
        serde_json::to_value(Store { format: POSE_MODEL_FORMAT.into(), config: self.config.clone(), clusters })
            .expect("pose model serializes")
    }

    pub fn from_json(v: serde_json::Value) -> Result<Self> {
        let store: Store = serde_json::from_value(v)?;
        if store.format != POSE_MODEL_FORMAT {
            return Err(Error::InvalidInput(format!("pose model format {:?}, expected {POSE_MODEL_FORMAT}", store.format)));
        }
        let clusters = store.clusters.into_iter().map(|c| c.into_model()).collect::<Result<_>>()?;
        Ok(Self { config: store.config, clusters })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(serde_json::from_str(&text)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Store {
    format: String,
    config: PoseModelConfig,
    clusters: Vec<StoredCluster>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredCluster {
    viewpoint_id: usize,
    pose_cluster_id: usize,
    member_count: usize,
    visibility_pattern: Vec<bool>,
    mean: Vec<f64>,
    basis: Vec<Vec<f64>>,
    bounds: Vec<(f64, f64)>,
}

impl StoredCluster {
    fn from_model<T: Scalar>(m: &PoseClusterModel<T>) -> Self {
        Self {
            viewpoint_id: m.viewpoint_id,
            pose_cluster_id: m.pose_cluster_id,
            member_count: m.member_count,
            visibility_pattern: m.visibility_pattern.to_vec(),
            mean: m.mean.iter().map(|v| v.as_f64()).collect(),
            basis: m.pca_basis.iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect(),
            bounds: m.component_bounds.iter().map(|(a, b)| (a.as_f64(), b.as_f64())).collect(),
        }
    }

    fn into_model<T: Scalar>(self) -> Result<PoseClusterModel<T>> {
        let bad = |what: &str| Error::InvalidInput(format!("pose model cluster: bad {what}"));
        let row = |v: &[f64]| -> Result<[T; DIM]> {
            let r: Vec<T> = v.iter().map(|&x| T::lit(x)).collect();
            r.try_into().map_err(|_| bad("row length"))
        };
        if self.basis.len() != NUM_COMPONENTS || self.bounds.len() != NUM_COMPONENTS {
            return Err(bad("component count"));
        }
        if self.bounds.iter().any(|(a, b)| !(a <= b)) {
            return Err(bad("bounds"));
        }
        Ok(PoseClusterModel {
            viewpoint_id: self.viewpoint_id,
            pose_cluster_id: self.pose_cluster_id,
            mean: row(&self.mean)?,
            pca_basis: self.basis.iter().map(|r| row(r)).collect::<Result<_>>()?,
            component_bounds: self.bounds.iter().map(|&(a, b)| (T::lit(a), T::lit(b))).collect(),
            member_count: self.member_count,
            visibility_pattern: self.visibility_pattern.try_into().map_err(|_| bad("visibility pattern"))?,
        })
    }
}
