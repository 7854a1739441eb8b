//! Pairwise overlap and gap checks between placed objects.

use serde::{Deserialize, Serialize};

use super::obb::{intersection_volume, surface_distance, OrientedBox};
use crate::scene::Scene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    /// Overlap above this share of the smaller object's volume is flagged.
    pub max_overlap_fraction: f64,
    /// Surface gaps above this distance are flagged.
    pub max_gap: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { max_overlap_fraction: 0.05, max_gap: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub a: String,
    pub b: String,
    pub overlap_volume: f64,
    pub overlap_fraction: f64,
    pub distance: f64,
    pub overlap_flagged: bool,
    pub gap_flagged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub pairs: Vec<PairReport>,
}

impl LayoutReport {
    pub fn flagged(&self) -> impl Iterator<Item = &PairReport> {
        self.pairs.iter().filter(|p| p.overlap_flagged || p.gap_flagged)
    }

    pub fn is_clean(&self) -> bool {
        self.flagged().next().is_none()
    }
}

impl std::fmt::Display for LayoutReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.pairs {
            let mut flags = Vec::new();
            if p.overlap_flagged {
                flags.push("OVERLAP");
            }
            if p.gap_flagged {
                flags.push("GAP");
            }
            writeln!(
                f,
                "{} / {}: overlap {:.4} ({:.1}%), distance {:.4}{}{}",
                p.a,
                p.b,
                p.overlap_volume,
                100.0 * p.overlap_fraction,
                p.distance,
                if flags.is_empty() { "" } else { "  " },
                flags.join(" ")
            )?;
        }
        Ok(())
    }
}

pub fn validate_boxes(boxes: &[(String, OrientedBox)], opts: &ValidationOptions) -> LayoutReport {
    let mut pairs = Vec::new();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let (ref a, ref ba) = boxes[i];
            let (ref b, ref bb) = boxes[j];
            let overlap = intersection_volume(ba, bb);
            let smaller = ba.volume().min(bb.volume());
            let fraction = if smaller > 0.0 { overlap / smaller } else { 0.0 };
            let distance = surface_distance(ba, bb);
            pairs.push(PairReport {
                a: a.clone(),
                b: b.clone(),
                overlap_volume: overlap,
                overlap_fraction: fraction,
                distance,
                overlap_flagged: fraction > opts.max_overlap_fraction,
                gap_flagged: distance > opts.max_gap,
            });
        }
    }
    LayoutReport { pairs }
}

/// World-space oriented box of every object with known bounds.
pub fn object_boxes(scene: &Scene) -> Vec<(String, OrientedBox)> {
    scene
        .objects
        .iter()
        .filter_map(|o| o.local_bounds().map(|b| (o.id.clone(), OrientedBox::transformed(&b, &o.transform))))
        .collect()
}

pub fn validate_layout(scene: &Scene, opts: &ValidationOptions) -> LayoutReport {
    validate_boxes(&object_boxes(scene), opts)
}
