//! Adaptive density control: gradient-driven clone and split, compactness
//! insertion between nearest neighbours, and pruning.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{DensifyConfig, PruneConfig};
use super::OptimError;
use crate::math::Vec3;
use crate::scene::{Gaussian3D, Scene, MIN_SCALE};

/// Per-Gaussian statistics gathered between density steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussStats {
    /// Sum of view-space mean gradient norms over the steps it was visible,
    /// in normalized device coordinates.
    pub grad_accum: f64,
    pub visible: u32,
    /// Largest screen radius seen, as a share of the image diagonal.
    pub max_screen: f64,
}

impl GaussStats {
    pub fn mean_grad(&self) -> f64 {
        if self.visible == 0 {
            0.0
        } else {
            self.grad_accum / self.visible as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Clone,
    Split,
    Compactness,
    PruneOpacity,
    PruneWorldRadius,
    PruneScreenRadius,
    /// Growth skipped because the Gaussian budget was exhausted.
    CapReached,
}

/// One count change, logged with its cause. `count` is the number of
/// Gaussians affected (for splits, the number of parents).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityEvent {
    pub kind: EventKind,
    pub object: String,
    pub count: usize,
}

/// Result of a density pass. `origins[k][i]` is the previous index of
/// Gaussian `i` of object `k`, or `None` when it is new.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityReport {
    pub origins: Vec<Vec<Option<usize>>>,
    pub events: Vec<DensityEvent>,
}

impl DensityReport {
    pub fn changed(&self) -> bool {
        self.events.iter().any(|e| e.kind != EventKind::CapReached && e.count > 0)
    }
}

/// Length of the scene's global box diagonal.
pub fn scene_extent(scene: &Scene) -> f64 {
    scene.global_bounds().map(|b| b.diagonal()).unwrap_or(1.0)
}

fn push_event(events: &mut Vec<DensityEvent>, kind: EventKind, object: &str, count: usize) {
    if count > 0 {
        events.push(DensityEvent { kind, object: object.to_string(), count });
    }
}

/// Gaussians whose mean view-space gradient exceeds `t_pos` are grown:
/// large ones (world max scale above `percent_dense` of the scene extent)
/// are replaced by two samples from themselves with scales divided by
/// `split_factor`, small ones are cloned. Children keep the parent's
/// embedding and region. Growth stops at `max_gaussians`.
pub fn densify<R: Rng>(
    scene: &mut Scene,
    stats: &[Vec<GaussStats>],
    cfg: &DensifyConfig,
    rng: &mut R,
) -> Result<DensityReport, OptimError> {
    check_stats(scene, stats)?;
    let extent = scene_extent(scene);
    let mut total = scene.gaussian_count();
    let mut report = DensityReport::default();
    for (obj, st) in scene.objects.iter_mut().zip(stats) {
        let s = obj.transform.scale;
        let mut kept = Vec::with_capacity(obj.gaussians.len());
        let mut origin = Vec::with_capacity(obj.gaussians.len());
        let mut added = Vec::new();
        let (mut cloned, mut split, mut skipped) = (0, 0, 0);
        for (i, g) in obj.gaussians.iter().enumerate() {
            if !(st[i].mean_grad() > cfg.t_pos) {
                kept.push(g.clone());
                origin.push(Some(i));
                continue;
            }
            if total >= cfg.max_gaussians {
                skipped += 1;
                kept.push(g.clone());
                origin.push(Some(i));
                continue;
            }
            total += 1;
            if g.max_scale() * s > cfg.percent_dense * extent {
                split += 1;
                let rot = g.rotation.to_rotation_matrix();
                for _ in 0..2 {
                    let z = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                    let mut child = g.clone();
                    child.mean = g.mean + rot * g.scale.component_mul(&z);
                    child.scale = (g.scale / cfg.split_factor).map(|v| v.max(MIN_SCALE));
                    added.push(child);
                }
            } else {
                cloned += 1;
                kept.push(g.clone());
                origin.push(Some(i));
                added.push(g.clone());
            }
        }
        origin.extend(std::iter::repeat_n(None, added.len()));
        kept.extend(added);
        obj.gaussians = kept;
        push_event(&mut report.events, EventKind::Clone, &obj.id, cloned);
        push_event(&mut report.events, EventKind::Split, &obj.id, split);
        push_event(&mut report.events, EventKind::CapReached, &obj.id, skipped);
        report.origins.push(origin);
    }
    Ok(report)
}

/// Nearest neighbour of every point (ties to the lower index), by a sweep
/// over the points sorted along `x`.
pub fn nearest_neighbours(points: &[Vec3]) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x).then(a.cmp(&b)));
    let mut out = vec![None; points.len()];
    for (pos, &i) in order.iter().enumerate() {
        let p = points[i];
        let mut best: Option<(f64, usize)> = None;
        let better = |d: f64, j: usize, best: &mut Option<(f64, usize)>| {
            if best.is_none_or(|(bd, bj)| d < bd || (d == bd && j < bj)) {
                *best = Some((d, j));
            }
        };
        for &j in order[pos + 1..].iter() {
            let dx = points[j].x - p.x;
            if best.is_some_and(|(bd, _)| dx * dx > bd) {
                break;
            }
            better((points[j] - p).norm_squared(), j, &mut best);
        }
        for &j in order[..pos].iter().rev() {
            let dx = p.x - points[j].x;
            if best.is_some_and(|(bd, _)| dx * dx > bd) {
                break;
            }
            better((points[j] - p).norm_squared(), j, &mut best);
        }
        out[i] = best.map(|(_, j)| j);
    }
    out
}

/// Pairs every Gaussian with its nearest neighbour in the same object and,
/// when the centers are farther apart than the sum of their radii (largest
/// axis scale), inserts a Gaussian at the midpoint with averaged scale,
/// color and opacity. The new Gaussian takes the first one's rotation,
/// embedding and region.
pub fn compactness(scene: &mut Scene, cfg: &DensifyConfig) -> DensityReport {
    let mut total = scene.gaussian_count();
    let mut report = DensityReport::default();
    for obj in scene.objects.iter_mut() {
        let n = obj.gaussians.len();
        let points: Vec<Vec3> = obj.gaussians.iter().map(|g| g.mean).collect();
        let nn = nearest_neighbours(&points);
        let mut pairs: Vec<(usize, usize)> =
            nn.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i.min(j), i.max(j)))).collect();
        pairs.sort_unstable();
        pairs.dedup();
        let (mut inserted, mut skipped) = (0, 0);
        let mut added = Vec::new();
        for (i, j) in pairs {
            let (a, b) = (&obj.gaussians[i], &obj.gaussians[j]);
            if (a.mean - b.mean).norm() <= a.max_scale() + b.max_scale() {
                continue;
            }
            if total >= cfg.max_gaussians {
                skipped += 1;
                continue;
            }
            total += 1;
            inserted += 1;
            added.push(Gaussian3D {
                mean: (a.mean + b.mean) * 0.5,
                scale: (a.scale + b.scale) * 0.5,
                rotation: a.rotation,
                opacity: 0.5 * (a.opacity + b.opacity),
                color: (a.color + b.color) * 0.5,
                semantic: a.semantic.clone(),
                region: a.region,
            });
        }
        let mut origin: Vec<Option<usize>> = (0..n).map(Some).collect();
        origin.extend(std::iter::repeat_n(None, added.len()));
        obj.gaussians.extend(added);
        push_event(&mut report.events, EventKind::Compactness, &obj.id, inserted);
        push_event(&mut report.events, EventKind::CapReached, &obj.id, skipped);
        report.origins.push(origin);
    }
    report
}

/// Removes Gaussians with opacity below `alpha_min`, a world-space radius
/// (largest axis scale) above `max_world_radius` of the scene extent, or a
/// recorded screen radius above `max_screen_radius` of the image diagonal.
/// Fails without modifying the scene if an object would lose every Gaussian.
pub fn prune(scene: &mut Scene, stats: &[Vec<GaussStats>], cfg: &PruneConfig) -> Result<DensityReport, OptimError> {
    check_stats(scene, stats)?;
    let extent = scene_extent(scene);
    let mut plans = Vec::with_capacity(scene.objects.len());
    for (obj, st) in scene.objects.iter().zip(stats) {
        let s = obj.transform.scale;
        let mut counts = [0usize; 3];
        let keep: Vec<bool> = obj
            .gaussians
            .iter()
            .zip(st)
            .map(|(g, st)| {
                let cause = if g.opacity < cfg.alpha_min {
                    Some(0)
                } else if g.max_scale() * s > cfg.max_world_radius * extent {
                    Some(1)
                } else if st.max_screen > cfg.max_screen_radius {
                    Some(2)
                } else {
                    None
                };
                if let Some(c) = cause {
                    counts[c] += 1;
                }
                cause.is_none()
            })
            .collect();
        if !obj.gaussians.is_empty() && !keep.iter().any(|k| *k) {
            return Err(OptimError::ObjectVanished(obj.id.clone()));
        }
        plans.push((keep, counts));
    }
    let mut report = DensityReport::default();
    for (obj, (keep, counts)) in scene.objects.iter_mut().zip(plans) {
        let mut origin = Vec::with_capacity(keep.len());
        let mut i = 0;
        obj.gaussians.retain(|_| {
            let k = keep[i];
            if k {
                origin.push(Some(i));
            }
            i += 1;
            k
        });
        push_event(&mut report.events, EventKind::PruneOpacity, &obj.id, counts[0]);
        push_event(&mut report.events, EventKind::PruneWorldRadius, &obj.id, counts[1]);
        push_event(&mut report.events, EventKind::PruneScreenRadius, &obj.id, counts[2]);
        report.origins.push(origin);
    }
    Ok(report)
}

fn check_stats(scene: &Scene, stats: &[Vec<GaussStats>]) -> Result<(), OptimError> {
    let aligned = stats.len() == scene.objects.len()
        && scene.objects.iter().zip(stats).all(|(o, s)| o.gaussians.len() == s.len());
    if aligned {
        Ok(())
    } else {
        Err(OptimError::InvalidInput("statistics are not aligned with the Gaussians".into()))
    }
}
