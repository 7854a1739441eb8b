mod common;

use common::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use semsplat_core::raster::{
    render, render_backward, render_reference, render_with, Image, RenderError, RenderOptions,
};
use semsplat_core::scene::{Camera, Gaussian3D};

fn front_camera(size: usize) -> Camera {
    Camera::looking_at(Vector3::new(4.0, 0.0, 0.0), Vector3::zeros(), 0.8, size, size).unwrap()
}

#[test]
fn empty_scene_renders_black() {
    let out = render(&[], &front_camera(20));
    assert!(out.color.data.iter().all(|&v| v == 0.0));
    assert!(out.alpha.data.iter().all(|&v| v == 0.0));
    assert_eq!(out.features.channels, 0);
}

#[test]
fn opaque_singleton_shows_its_color() {
    // Huge flat Gaussian so alpha at the center pixel is exactly the opacity.
    let mut g = Gaussian3D::isotropic(Vector3::zeros(), 50.0);
    g.color = Vector3::new(0.2, 0.4, 0.6);
    g.semantic = vec![0.5, -1.0];
    // Odd size puts a pixel center exactly on the optical axis.
    let cam = Camera::looking_at(Vector3::new(60.0, 0.0, 0.0), Vector3::zeros(), 0.01, 9, 9).unwrap();
    let out = render(&[g], &cam);
    let c = out.color.pixel(4, 4);
    assert!((c[0] - 0.2).abs() < 1e-9 && (c[1] - 0.4).abs() < 1e-9 && (c[2] - 0.6).abs() < 1e-9);
    let f = out.features.pixel(4, 4);
    assert!((f[0] - 0.5).abs() < 1e-9 && (f[1] + 1.0).abs() < 1e-9);
}

#[test]
fn two_half_alpha_splats_composite_front_to_back() {
    let cam = Camera::looking_at(Vector3::new(60.0, 0.0, 0.0), Vector3::zeros(), 0.01, 8, 8).unwrap();
    let mut a = Gaussian3D::isotropic(Vector3::new(0.5, 0.0, 0.0), 50.0);
    a.opacity = 0.5;
    a.color = Vector3::new(1.0, 0.0, 0.0);
    let mut b = a.clone();
    b.mean = Vector3::new(-0.5, 0.0, 0.0);
    b.color = Vector3::new(0.0, 1.0, 0.0);
    // b is listed first but a is nearer the camera.
    let out = render(&[b, a], &cam);
    let c = out.color.pixel(4, 4);
    assert!((c[0] - 0.5).abs() < 1e-6 && (c[1] - 0.25).abs() < 1e-6);
    assert!((out.alpha.pixel(4, 4)[0] - 0.75).abs() < 1e-6);
}

#[test]
fn tiled_renderer_matches_reference() {
    for seed in 0..12 {
        let mut r = rng(seed);
        let n = 1 + seed as usize * 16;
        let gs: Vec<Gaussian3D> = (0..n).map(|_| random_gaussian(&mut r, 0.8, 3)).collect();
        let size = [16, 33, 48, 64][seed as usize % 4];
        let cam = random_camera(&mut r, size);
        let fast = render_plain(&gs, &cam, 3);
        let slow = render_reference(&gs, &cam, 3);
        let err = fast
            .color
            .max_abs_diff(&slow.color)
            .max(fast.features.max_abs_diff(&slow.features))
            .max(fast.alpha.max_abs_diff(&slow.alpha));
        assert!(err <= 1e-5, "seed {seed}: L-inf {err}");
        assert_eq!(fast.culled, slow.culled);
    }
}

#[test]
fn semantic_channels_use_color_weights() {
    let mut r = rng(7);
    let mut gs: Vec<Gaussian3D> = (0..40).map(|_| random_gaussian(&mut r, 0.6, 0)).collect();
    for g in &mut gs {
        g.semantic = g.color.iter().copied().collect();
    }
    let out = render(&gs, &random_camera(&mut r, 32));
    assert_eq!(out.color.data, out.features.data);
}

#[test]
fn permutation_invariant_for_distinct_depths() {
    let mut r = rng(3);
    let gs: Vec<Gaussian3D> = (0..30).map(|_| random_gaussian(&mut r, 0.6, 2)).collect();
    let cam = random_camera(&mut r, 32);
    let mut shuffled = gs.clone();
    shuffled.reverse();
    shuffled.swap(3, 17);
    let a = render_plain(&gs, &cam, 2);
    let b = render_plain(&shuffled, &cam, 2);
    assert_eq!(a.color.data, b.color.data);
    assert_eq!(a.features.data, b.features.data);
}

#[test]
fn contributors_are_front_to_back() {
    let mut r = rng(11);
    let gs: Vec<Gaussian3D> = (0..25).map(|_| random_gaussian(&mut r, 0.5, 0)).collect();
    let cam = random_camera(&mut r, 24);
    let out = render(&gs, &cam);
    let depth = |i: usize| cam.world_to_camera(&gs[i].mean).z;
    for y in 0..24 {
        for x in 0..24 {
            let list = out.contributors(x, y).unwrap();
            assert!(list.windows(2).all(|w| depth(w[0]) <= depth(w[1])));
        }
    }
}

#[test]
fn zero_upstream_gradient_gives_zero() {
    let mut r = rng(5);
    let gs: Vec<Gaussian3D> = (0..10).map(|_| random_gaussian(&mut r, 0.5, 2)).collect();
    let cam = random_camera(&mut r, 16);
    let out = render(&gs, &cam);
    let g = render_backward(&out, &Image::zeros(16, 16, 3), &Image::zeros(16, 16, 2)).unwrap();
    for gg in &g.gaussians {
        assert_eq!(gg.mean, Vector3::zeros());
        assert_eq!(gg.scale, Vector3::zeros());
        assert_eq!(gg.opacity, 0.0);
        assert_eq!(gg.color, Vector3::zeros());
        assert!(gg.rotation.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn color_gradient_is_alpha_at_probe_pixel() {
    let mut g = Gaussian3D::isotropic(Vector3::new(0.1, 0.2, -0.1), 0.3);
    g.opacity = 0.6;
    let cam = front_camera(16);
    let out = render(&[g], &cam);
    let mut dc = Image::zeros(16, 16, 3);
    dc.pixel_mut(9, 6)[0] = 1.0;
    let grads = render_backward(&out, &dc, &Image::zeros(16, 16, 0)).unwrap();
    // A single splat: the accumulated alpha is its own alpha.
    let alpha = out.alpha.pixel(9, 6)[0];
    assert!((grads.gaussians[0].color[0] - alpha).abs() < 1e-12);
    assert_eq!(grads.gaussians[0].color[1], 0.0);
}

#[test]
fn backward_requires_retained_state() {
    let cam = front_camera(8);
    let out = render_with(&[], &cam, &RenderOptions { retain: false, feature_dim: Some(0) });
    let err = render_backward(&out, &Image::zeros(8, 8, 3), &Image::zeros(8, 8, 0)).unwrap_err();
    assert!(matches!(err, RenderError::MissingState));
    let out = render(&[], &cam);
    let err = render_backward(&out, &Image::zeros(4, 8, 3), &Image::zeros(8, 8, 0)).unwrap_err();
    assert!(matches!(err, RenderError::ShapeMismatch(_)));
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        let (scene, cam) = gradient_scene(100 + seed, 2, 8, 32);
        let mut r = rng(seed);
        let wc = random_weights(&mut r, 32, 32, 3);
        let wf = random_weights(&mut r, 32, 32, 2);
        let check = finite_difference_check(&scene, &cam, &wc, &wf);
        assert!(check.fraction() >= 0.95, "seed {seed}: {}/{} {:?}", check.passed, check.total, check.worst);
    }
}

#[test]
fn semantic_gradients_match_finite_differences() {
    let mut r = rng(42);
    let mut gs: Vec<Gaussian3D> = (0..8).map(|_| random_gaussian(&mut r, 0.5, 3)).collect();
    let cam = random_camera(&mut r, 24);
    let wc = random_weights(&mut r, 24, 24, 3);
    let wf = random_weights(&mut r, 24, 24, 3);
    let out = render(&gs, &cam);
    let grads = render_backward(&out, &wc, &wf).unwrap();
    let loss = |gs: &[Gaussian3D]| {
        let o = render_plain(gs, &cam, 3);
        let a: f64 = o.color.data.iter().zip(&wc.data).map(|(x, y)| x * y).sum();
        let b: f64 = o.features.data.iter().zip(&wf.data).map(|(x, y)| x * y).sum();
        a + b
    };
    for i in 0..gs.len() {
        for f in 0..3 {
            let base = gs[i].semantic[f];
            gs[i].semantic[f] = base + 1e-4;
            let up = loss(&gs);
            gs[i].semantic[f] = base - 1e-4;
            let down = loss(&gs);
            gs[i].semantic[f] = base;
            let numeric = (up - down) / 2e-4;
            assert!((numeric - grads.gaussians[i].semantic[f]).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weights_sum_to_accumulated_alpha(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let mut gs: Vec<Gaussian3D> = (0..20).map(|_| random_gaussian(&mut r, 0.6, 0)).collect();
        for g in &mut gs {
            g.color = Vector3::repeat(1.0);
        }
        let out = render(&gs, &random_camera(&mut r, 16));
        for (c, a) in out.color.data.chunks(3).zip(&out.alpha.data) {
            prop_assert!((c[0] - a).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn reference_agreement(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let gs: Vec<Gaussian3D> = (0..30).map(|_| random_gaussian(&mut r, 0.8, 1)).collect();
        let cam = random_camera(&mut r, 20);
        let err = render_plain(&gs, &cam, 1).color.max_abs_diff(&render_reference(&gs, &cam, 1).color);
        prop_assert!(err <= 1e-5);
    }
}
