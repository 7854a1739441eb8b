use rayon::prelude::*;

use super::project::{project, Splat2D};
use super::{
    splat_alpha, Composition, Image, RenderOutput, Retained, TileRecord, ALPHA_MIN, TILE_SIZE, TRANSMITTANCE_MIN,
};
use crate::scene::{Camera, Gaussian3D, Scene};

#[derive(Clone, Debug)]
pub struct RenderOptions {
    /// Keep the state needed by [`super::render_backward`].
    pub retain: bool,
    /// Feature channels to emit; defaults to the embedding size of the first
    /// Gaussian.
    pub feature_dim: Option<usize>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { retain: true, feature_dim: None }
    }
}

/// Renders with gradient retention on.
pub fn render(gaussians: &[Gaussian3D], camera: &Camera) -> RenderOutput {
    render_with(gaussians, camera, &RenderOptions::default())
}

/// Composes the given objects into global coordinates and renders them; the
/// backward pass of the result also yields per-object transform gradients.
pub fn render_composed(scene: &Scene, objects: &[usize], camera: &Camera, opts: &RenderOptions) -> RenderOutput {
    let globals = scene.compose_indices(objects);
    let mut out = render_with(&globals, camera, opts);
    if let Some(retained) = out.retained.as_mut() {
        let mut ranges = Vec::with_capacity(objects.len());
        let mut locals = Vec::with_capacity(globals.len());
        let mut start = 0;
        for &k in objects {
            let obj = &scene.objects[k];
            ranges.push(start..start + obj.gaussians.len());
            start += obj.gaussians.len();
            locals.extend(obj.gaussians.iter().cloned());
        }
        retained.composition = Some(Composition {
            objects: objects.to_vec(),
            ranges,
            locals,
            transforms: objects.iter().map(|&k| scene.objects[k].transform).collect(),
        });
    }
    out
}

struct TileOut {
    color: Vec<f64>,
    features: Vec<f64>,
    transmittance: Vec<f64>,
    offsets: Vec<u32>,
    contrib: Vec<u32>,
}

pub fn render_with(gaussians: &[Gaussian3D], camera: &Camera, opts: &RenderOptions) -> RenderOutput {
    let (width, height) = (camera.width, camera.height);
    let d_f = opts.feature_dim.unwrap_or_else(|| gaussians.first().map_or(0, |g| g.semantic.len()));
    let projection = project(gaussians, camera);
    let splats = projection.splats;

    let mut screen_radii = vec![0.0; gaussians.len()];
    for s in &splats {
        screen_radii[s.source] = s.radius;
    }

    let tiles = bin_splats(&splats, width, height);
    let outputs: Vec<TileOut> = tiles
        .par_iter()
        .map(|t| render_tile(t, &splats, d_f, opts.retain))
        .collect();

    let mut color = Image::zeros(width, height, 3);
    let mut features = Image::zeros(width, height, d_f);
    let mut alpha = Image::zeros(width, height, 1);
    for (tile, out) in tiles.iter().zip(&outputs) {
        let mut p = 0;
        for y in tile.y0..tile.y1 {
            for x in tile.x0..tile.x1 {
                color.pixel_mut(x, y).copy_from_slice(&out.color[3 * p..3 * p + 3]);
                features.pixel_mut(x, y).copy_from_slice(&out.features[d_f * p..d_f * (p + 1)]);
                alpha.pixel_mut(x, y)[0] = 1.0 - out.transmittance[p];
                p += 1;
            }
        }
    }

    let retained = opts.retain.then(|| Retained {
        camera: camera.clone(),
        gaussians: gaussians.to_vec(),
        tiles: tiles
            .into_iter()
            .zip(outputs)
            .map(|(mut t, o)| {
                t.offsets = o.offsets;
                t.contrib = o.contrib;
                t
            })
            .collect(),
        splats,
        composition: None,
    });

    RenderOutput { color, features, alpha, culled: projection.culled, screen_radii, retained }
}

/// Buckets splats into tiles. Splats are visited in (depth, source index)
/// order so every tile list comes out sorted front to back.
fn bin_splats(splats: &[Splat2D], width: usize, height: usize) -> Vec<TileRecord> {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut tiles: Vec<TileRecord> = (0..tiles_x * tiles_y)
        .map(|i| {
            let (tx, ty) = (i % tiles_x, i / tiles_x);
            TileRecord {
                x0: tx * TILE_SIZE,
                y0: ty * TILE_SIZE,
                x1: ((tx + 1) * TILE_SIZE).min(width),
                y1: ((ty + 1) * TILE_SIZE).min(height),
                list: Vec::new(),
                offsets: Vec::new(),
                contrib: Vec::new(),
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(splats[a].source.cmp(&splats[b].source)));

    for i in order {
        let s = &splats[i];
        // Pixel centers sit at integer + 0.5.
        let Some((px0, px1)) = pixel_span(s.mean.x, s.extent.x, width) else { continue };
        let Some((py0, py1)) = pixel_span(s.mean.y, s.extent.y, height) else { continue };
        for ty in py0 / TILE_SIZE..=py1 / TILE_SIZE {
            for tx in px0 / TILE_SIZE..=px1 / TILE_SIZE {
                tiles[ty * tiles_x + tx].list.push(i as u32);
            }
        }
    }
    tiles
}

/// Inclusive range of pixel indices whose centers lie within
/// `[center - extent, center + extent]`.
fn pixel_span(center: f64, extent: f64, size: usize) -> Option<(usize, usize)> {
    let lo = (center - extent - 0.5).ceil();
    let hi = (center + extent - 0.5).floor();
    if !lo.is_finite() || !hi.is_finite() || hi < 0.0 || lo > (size - 1) as f64 || lo > hi {
        return None;
    }
    Some((lo.max(0.0) as usize, (hi as usize).min(size - 1)))
}

fn render_tile(tile: &TileRecord, splats: &[Splat2D], d_f: usize, retain: bool) -> TileOut {
    let npix = (tile.x1 - tile.x0) * (tile.y1 - tile.y0);
    let mut out = TileOut {
        color: vec![0.0; npix * 3],
        features: vec![0.0; npix * d_f],
        transmittance: vec![1.0; npix],
        offsets: Vec::with_capacity(if retain { npix + 1 } else { 0 }),
        contrib: Vec::new(),
    };
    let mut p = 0;
    for y in tile.y0..tile.y1 {
        for x in tile.x0..tile.x1 {
            if retain {
                out.offsets.push(out.contrib.len() as u32);
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let color = &mut out.color[3 * p..3 * p + 3];
            let feat = &mut out.features[d_f * p..d_f * (p + 1)];
            for (pos, &si) in tile.list.iter().enumerate() {
                let s = &splats[si as usize];
                let (alpha, ..) = splat_alpha(s, px, py);
                if alpha < ALPHA_MIN {
                    continue;
                }
                let w = alpha * t;
                for c in 0..3 {
                    color[c] += w * s.color[c];
                }
                for (f, v) in feat.iter_mut().zip(&s.semantic) {
                    *f += w * v;
                }
                if retain {
                    out.contrib.push(pos as u32);
                }
                t *= 1.0 - alpha;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            out.transmittance[p] = t;
            p += 1;
        }
    }
    if retain {
        out.offsets.push(out.contrib.len() as u32);
    }
    out
}
