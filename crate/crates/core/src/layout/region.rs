//! Hierarchical splits of an object's box into complementary regions.

use serde::{Deserialize, Serialize};

use super::LayoutError;
use crate::scene::{BoundingBox, Region};

pub const FRACTION_TOLERANCE: f64 = 1e-9;

/// Split direction. Depth runs along z, width along x, length along y.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitAxis {
    Depth,
    Width,
    Length,
}

impl SplitAxis {
    pub fn index(self) -> usize {
        match self {
            SplitAxis::Width => 0,
            SplitAxis::Length => 1,
            SplitAxis::Depth => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionTree {
    Split { axis: SplitAxis, fractions: Vec<f64>, children: Vec<RegionTree> },
    Leaf { subprompt: String },
}

impl RegionTree {
    pub fn leaf(subprompt: impl Into<String>) -> Self {
        RegionTree::Leaf { subprompt: subprompt.into() }
    }

    pub fn split(axis: SplitAxis, fractions: Vec<f64>, children: Vec<RegionTree>) -> Self {
        RegionTree::Split { axis, fractions, children }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            RegionTree::Leaf { .. } => 1,
            RegionTree::Split { children, .. } => children.iter().map(RegionTree::leaf_count).sum(),
        }
    }

    /// Checks the structural invariants; `path` names the offending node.
    pub fn validate(&self) -> Result<(), LayoutError> {
        self.validate_at("root")
    }

    fn validate_at(&self, path: &str) -> Result<(), LayoutError> {
        let err = |message: String| LayoutError::RegionTree { path: path.to_string(), message };
        match self {
            RegionTree::Leaf { subprompt } => {
                if subprompt.trim().is_empty() {
                    return Err(err("leaf has an empty subprompt".into()));
                }
            }
            RegionTree::Split { fractions, children, .. } => {
                if children.len() < 2 {
                    return Err(err(format!("split has {} children, needs at least 2", children.len())));
                }
                if fractions.len() != children.len() {
                    return Err(err(format!("{} fractions for {} children", fractions.len(), children.len())));
                }
                if let Some(f) = fractions.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
                    return Err(err(format!("fraction {f} is not positive")));
                }
                let sum: f64 = fractions.iter().sum();
                if (sum - 1.0).abs() > FRACTION_TOLERANCE {
                    return Err(err(format!("fractions sum to {sum}, expected 1")));
                }
                for (i, c) in children.iter().enumerate() {
                    c.validate_at(&format!("{path}.children[{i}]"))?;
                }
            }
        }
        Ok(())
    }
}

/// Splits `bbox` according to `tree`, returning leaves in depth-first order.
///
/// Cut positions are cumulative, and the last child always ends at the
/// parent's max, so neighbours share their boundary exactly and the union
/// is the input box.
pub fn decompose(bbox: &BoundingBox, tree: &RegionTree) -> Result<Vec<Region>, LayoutError> {
    tree.validate()?;
    let mut out = Vec::with_capacity(tree.leaf_count());
    decompose_into(bbox, tree, &mut out);
    Ok(out)
}

fn decompose_into(bbox: &BoundingBox, tree: &RegionTree, out: &mut Vec<Region>) {
    match tree {
        RegionTree::Leaf { subprompt } => out.push(Region { subprompt: subprompt.clone(), bbox: *bbox }),
        RegionTree::Split { axis, fractions, children } => {
            let a = axis.index();
            let (lo, hi) = (bbox.min[a], bbox.max[a]);
            let mut acc = 0.0;
            let mut start = lo;
            for (i, (f, child)) in fractions.iter().zip(children).enumerate() {
                acc += f;
                let end = if i + 1 == children.len() { hi } else { (lo + (hi - lo) * acc).clamp(start, hi) };
                let mut sub = *bbox;
                sub.min[a] = start;
                sub.max[a] = end;
                decompose_into(&sub, child, out);
                start = end;
            }
        }
    }
}
