mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::Rng;
use semsplat_core::layout::dsl::{Expr, Op};
use semsplat_core::layout::obb::{intersection_volume, surface_distance};
use semsplat_core::layout::planner::OBJECT_TEMPLATE;
use semsplat_core::layout::*;
use semsplat_core::scene::init::{Sampler, SeedParams};
use semsplat_core::scene::{BoundingBox, ObjectTransform};

use common::http::{chat_reply, serve};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[derive(serde::Deserialize)]
struct TreeFixture {
    name: String,
    bounds: BoundingBox,
    tree: RegionTree,
}

fn tree_fixtures() -> Vec<TreeFixture> {
    #[derive(serde::Deserialize)]
    struct File {
        trees: Vec<TreeFixture>,
    }
    let text = std::fs::read_to_string(fixtures().join("region_trees.json")).unwrap();
    serde_json::from_str::<File>(&text).unwrap().trees
}

fn rot_z_deg(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn assert_transform(xf: &ObjectTransform, scale: f64, rz_deg: f64, t: [f64; 3]) {
    assert!((xf.scale - scale).abs() <= 1e-12, "scale {} vs {scale}", xf.scale);
    let r = xf.rotation_matrix();
    assert!((r - rot_z_deg(rz_deg)).amax() <= 1e-12, "rotation {r} vs z {rz_deg}");
    let t = Vector3::from(t);
    assert!((xf.translation - t).amax() <= 1e-12, "translation {} vs {t}", xf.translation);
}

#[test]
fn desk_program_matches_hand_trace() {
    let plan = CannedPlanner::default().plan("desk_scene").unwrap();
    let placed = execute_program_with(&plan.parse_program().unwrap(), &plan.bindings()).unwrap();
    assert_eq!(placed.len(), 5);
    // desk 1.6 x 0.8 x 0.75 on the floor; top at 0.75.
    assert_transform(&placed["desk"], 1.0, 0.0, [0.0, 0.0, 0.375]);
    // monitor centered a quarter of the desk depth back, 0.45 tall.
    assert_transform(&placed["monitor"], 1.0, 180.0, [0.0, 0.2, 0.975]);
    // lamp: 0.8 - 0.125 - 0.05 = 0.625; 0.75 + 0.25 = 1.0.
    assert_transform(&placed["lamp"], 1.0, -30.0, [0.625, 0.15, 1.0]);
    // mug: scaled 1.2, height 0.12 -> half 0.072.
    assert_transform(&placed["mug"], 1.2, 15.0, [-0.45, -0.1, 0.822]);
    // chair: -(0.4 + 0.27 + 0.1); center at 0.9 * 0.5.
    assert_transform(&placed["chair"], 0.9, 0.0, [0.0, -0.77, 0.45]);
}

#[test]
fn desk_layout_is_clean() {
    let plan = CannedPlanner::default().plan("desk scene").unwrap();
    let layout = plan.resolve().unwrap();
    let report = layout.validate(&ValidationOptions::default());
    assert_eq!(report.pairs.len(), 10);
    assert!(report.is_clean(), "{report}");
    let desk_lamp = report.pairs.iter().find(|p| p.a == "desk" && p.b == "lamp").unwrap();
    assert!(desk_lamp.distance < 1e-9 && desk_lamp.overlap_fraction < 1e-9);
}

#[test]
fn fixture_trees_tile_their_boxes() {
    let trees = tree_fixtures();
    assert_eq!(trees.len(), 20);
    for f in &trees {
        let regions = decompose(&f.bounds, &f.tree).unwrap();
        assert_eq!(regions.len(), f.tree.leaf_count(), "{}", f.name);
        let total: f64 = regions.iter().map(|r| r.bbox.volume()).sum();
        let parent = f.bounds.volume();
        assert!((total - parent).abs() <= 1e-9 * parent, "{}: {total} vs {parent}", f.name);
        for i in 0..regions.len() {
            for j in i + 1..regions.len() {
                assert_eq!(regions[i].bbox.intersection_volume(&regions[j].bbox), 0.0, "{} {i} {j}", f.name);
            }
        }
        let union = regions.iter().map(|r| r.bbox).reduce(|a, b| a.union(&b)).unwrap();
        assert_eq!(union, f.bounds, "{}", f.name);
    }
}

#[test]
fn fixture_trees_roundtrip_bit_for_bit() {
    for f in tree_fixtures() {
        let text = serde_json::to_string(&f.tree).unwrap();
        let back: RegionTree = serde_json::from_str(&text).unwrap();
        assert_eq!(decompose(&f.bounds, &back).unwrap(), decompose(&f.bounds, &f.tree).unwrap());
    }
}

#[test]
fn nested_split_volumes() {
    let tree = RegionTree::split(
        SplitAxis::Depth,
        vec![0.3, 0.7],
        vec![
            RegionTree::leaf("bottom"),
            RegionTree::split(SplitAxis::Width, vec![0.5, 0.5], vec![RegionTree::leaf("a"), RegionTree::leaf("b")]),
        ],
    );
    let r = decompose(&BoundingBox::unit(), &tree).unwrap();
    let v: Vec<f64> = r.iter().map(|r| r.bbox.volume()).collect();
    for (got, want) in v.iter().zip([0.3, 0.35, 0.35]) {
        assert!((got - want).abs() < 1e-15, "{v:?}");
    }
    assert_eq!(r.iter().map(|r| r.subprompt.as_str()).collect::<Vec<_>>(), ["bottom", "a", "b"]);
}

fn unit_box_at(x: f64, y: f64, z: f64) -> OrientedBox {
    OrientedBox::from_aabb(&BoundingBox::new(Vector3::new(x, y, z), Vector3::new(x + 1.0, y + 1.0, z + 1.0)).unwrap())
}

#[test]
fn layout_report_examples() {
    let opts = ValidationOptions { max_overlap_fraction: 0.05, max_gap: 5.0 };
    let far = validate_boxes(&[("a".into(), unit_box_at(0.0, 0.0, 0.0)), ("b".into(), unit_box_at(10.0, 0.0, 0.0))], &opts);
    let p = &far.pairs[0];
    assert_eq!(p.overlap_volume, 0.0);
    assert!((p.distance - 9.0).abs() < 1e-12);
    assert!(p.gap_flagged && !p.overlap_flagged);

    let same = validate_boxes(&[("a".into(), unit_box_at(0.0, 0.0, 0.0)), ("b".into(), unit_box_at(0.0, 0.0, 0.0))], &opts);
    assert!((same.pairs[0].overlap_fraction - 1.0).abs() < 1e-12);
    assert!(same.pairs[0].overlap_flagged);

    let corner = validate_boxes(&[("a".into(), unit_box_at(0.0, 0.0, 0.0)), ("b".into(), unit_box_at(0.8, 0.8, 0.8))], &opts);
    assert!((corner.pairs[0].overlap_volume - 0.008).abs() < 1e-12, "{}", corner.pairs[0].overlap_volume);
    assert_eq!(corner.pairs[0].distance, 0.0);
}

use semsplat_core::layout::validate::validate_boxes;

fn obb_strategy() -> impl Strategy<Value = OrientedBox> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        prop::array::uniform3(-3.2f64..3.2),
        prop::array::uniform3(0.1f64..1.0),
    )
        .prop_map(|(c, e, h)| OrientedBox {
            center: Vector3::from(c),
            axes: *UnitQuaternion::from_euler_angles(e[0], e[1], e[2]).to_rotation_matrix().matrix(),
            half_extents: Vector3::from(h),
        })
}

fn monte_carlo_overlap(a: &OrientedBox, b: &OrientedBox, n: usize, seed: u64) -> f64 {
    let mut r = common::rng(seed);
    let mut hits = 0;
    for _ in 0..n {
        let u = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let p = a.center + a.axes * a.half_extents.component_mul(&u);
        if b.point_distance(&p) == 0.0 {
            hits += 1;
        }
    }
    a.volume() * hits as f64 / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn obb_overlap_matches_sampling(a in obb_strategy(), b in obb_strategy(), seed in 0u64..1000) {
        let v = intersection_volume(&a, &b);
        let sym = intersection_volume(&b, &a);
        prop_assert!((v - sym).abs() <= 1e-9 * (1.0 + v));
        prop_assert!(v <= a.volume().min(b.volume()) + 1e-9);
        let n = 40_000;
        let est = monte_carlo_overlap(&a, &b, n, seed);
        // Binomial standard error on the hit share, with a wide margin.
        let p = (est / a.volume()).clamp(1e-3, 1.0);
        let tol = 6.0 * a.volume() * (p * (1.0 - p) / n as f64).sqrt() + 1e-3 * a.volume();
        prop_assert!((v - est).abs() <= tol, "exact {v} sampled {est} tol {tol}");
    }

    #[test]
    fn obb_overlap_agrees_with_axis_aligned_formula(
        lo1 in prop::array::uniform3(-1.0f64..1.0), e1 in prop::array::uniform3(0.1f64..1.5),
        lo2 in prop::array::uniform3(-1.0f64..1.0), e2 in prop::array::uniform3(0.1f64..1.5),
        angles in prop::array::uniform3(-3.2f64..3.2),
    ) {
        let b1 = BoundingBox::new(Vector3::from(lo1), Vector3::from(lo1) + Vector3::from(e1)).unwrap();
        let b2 = BoundingBox::new(Vector3::from(lo2), Vector3::from(lo2) + Vector3::from(e2)).unwrap();
        let expect = b1.intersection_volume(&b2);
        // Rotating both boxes together about the origin preserves the overlap.
        let xf = ObjectTransform { scale: 1.0, rotation: UnitQuaternion::from_euler_angles(angles[0], angles[1], angles[2]), translation: Vector3::zeros() };
        let v = intersection_volume(&OrientedBox::transformed(&b1, &xf), &OrientedBox::transformed(&b2, &xf));
        prop_assert!((v - expect).abs() <= 1e-9, "{v} vs {expect}");
        // Disjoint axis-aligned boxes: distance is the norm of per-axis gaps.
        let gap = Vector3::from_fn(|i, _| (b1.min[i] - b2.max[i]).max(b2.min[i] - b1.max[i]).max(0.0));
        let d = surface_distance(&OrientedBox::transformed(&b1, &xf), &OrientedBox::transformed(&b2, &xf));
        if expect == 0.0 {
            prop_assert!((d - gap.norm()).abs() <= 1e-9, "{d} vs {}", gap.norm());
        } else {
            prop_assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn surface_distance_is_a_lower_bound(a in obb_strategy(), b in obb_strategy(), seed in 0u64..1000) {
        let d = surface_distance(&a, &b);
        let mut r = common::rng(seed);
        for _ in 0..200 {
            let u = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            let w = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            let p = a.center + a.axes * a.half_extents.component_mul(&u);
            let q = b.center + b.axes * b.half_extents.component_mul(&w);
            prop_assert!(d <= (p - q).norm() + 1e-12);
        }
        // Every corner of a lies at least d from b.
        for c in a.corners() {
            prop_assert!(b.point_distance(&c) + 1e-12 >= d);
        }
    }
}

fn expr_strategy() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0f64..1e3).prop_map(Expr::Num),
        (1e-9f64..1e-3).prop_map(Expr::Num),
        prop::sample::select(vec!["a", "b", "v", "w"]).prop_map(|s| Expr::Var(s.to_string())),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (prop::sample::select(vec![Op::Add, Op::Sub, Op::Mul, Op::Div]), inner.clone(), inner.clone())
                .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
            (prop::sample::select(vec!["min", "max"]), inner.clone(), inner.clone())
                .prop_map(|(f, a, b)| Expr::Call(f.to_string(), vec![a, b])),
            (inner.clone(), inner.clone(), inner.clone())
                .prop_map(|(a, b, c)| Expr::Call("vec".into(), vec![a, b, c])),
            (inner.clone(), 0usize..3).prop_map(|(e, i)| Expr::Component(Box::new(e), i)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn programs_roundtrip_through_text(e in expr_strategy(), a in -10.0f64..10.0, b in 0.1f64..10.0) {
        let lines = vec![
            format!("a = {a:?}"),
            format!("b = {b:?}"),
            "v = vec(a, b, 1.25)".to_string(),
            "w = (0.5, -b, a * b)".to_string(),
            format!("r = {e}"),
            "place(o, 2, (10, 20, 30), v * r)".to_string(),
        ];
        let program = LayoutProgram::parse_statements(&lines).unwrap();
        let printed = program.to_lines();
        let again = LayoutProgram::parse_statements(&printed).unwrap();
        prop_assert_eq!(&program, &again);
        let x = execute_program(&program).map_err(|e| e.to_string());
        let y = execute_program(&again).map_err(|e| e.to_string());
        prop_assert_eq!(format!("{x:?}"), format!("{y:?}"));
    }

    #[test]
    fn execution_is_independent_of_unrelated_statement_order(x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let a = vec![format!("p = {x:?}"), format!("q = {y:?}"), "place(o, 1, (0, 0, 0), vec(p, q, p * q))".into()];
        let b = vec![format!("q = {y:?}"), format!("p = {x:?}"), "place(o, 1, (0, 0, 0), vec(p, q, p * q))".into()];
        let ra = execute_program(&LayoutProgram::parse_statements(&a).unwrap()).unwrap();
        let rb = execute_program(&LayoutProgram::parse_statements(&b).unwrap()).unwrap();
        prop_assert_eq!(ra, rb);
    }
}

#[test]
fn desk_program_roundtrips_bit_for_bit() {
    let plan = CannedPlanner::default().plan("desk_scene").unwrap();
    let program = plan.parse_program().unwrap();
    let again = LayoutProgram::parse_statements(&program.to_lines()).unwrap();
    let a = execute_program_with(&program, &plan.bindings()).unwrap();
    let b = execute_program_with(&again, &plan.bindings()).unwrap();
    assert_eq!(a, b);
    let reparsed = LayoutPlan::from_json(&plan.to_json()).unwrap();
    assert_eq!(reparsed, plan);
}

#[test]
fn plan_errors_name_the_problem() {
    let mut plan = CannedPlanner::default().plan("desk_scene").unwrap();
    if let Some(RegionTree::Split { fractions, .. }) = plan.region_trees.get_mut("lamp") {
        fractions[0] = 0.7;
    }
    let e = plan.resolve().unwrap_err().to_string();
    assert!(e.contains("region_trees.lamp") && e.contains("sum"), "{e}");

    let mut plan = CannedPlanner::default().plan("desk_scene").unwrap();
    plan.region_trees.remove("mug");
    assert!(plan.resolve().unwrap_err().to_string().contains("mug"));

    let mut plan = CannedPlanner::default().plan("desk_scene").unwrap();
    plan.program.retain(|s| !s.starts_with("place(chair"));
    assert!(plan.resolve().unwrap_err().to_string().contains("never places object 'chair'"));

    let mut plan = CannedPlanner::default().plan("desk_scene").unwrap();
    plan.program.insert(0, "desk_size = 3".into());
    assert!(matches!(plan.resolve(), Err(LayoutError::Program { statement: 0, .. })));
}

#[test]
fn built_scene_labels_follow_region_boxes() {
    let layout = CannedPlanner::default().plan("two_tone_pair").unwrap().resolve().unwrap();
    let semantics: Vec<Vec<Vec<f64>>> =
        layout.objects.iter().enumerate().map(|(k, o)| (0..o.regions.len()).map(|l| vec![k as f64, l as f64]).collect()).collect();
    let opts = BuildOptions { gaussians_per_object: 400, sampler: Sampler::UniformBox, seed: SeedParams::default() };
    let scene = build_scene(&layout, &semantics, &opts, &mut common::rng(1)).unwrap();
    assert_eq!(scene.objects.len(), 2);
    for (k, o) in scene.objects.iter().enumerate() {
        assert_eq!(o.gaussians.len(), 400);
        for g in &o.gaussians {
            let l = g.region.region as usize;
            assert!(o.regions[l].bbox.contains(&g.mean));
            assert_eq!(g.semantic, vec![k as f64, l as f64]);
        }
    }
    assert!(build_scene(&layout, &semantics[..1], &opts, &mut common::rng(1)).is_err());
    let again = build_scene(&layout, &semantics, &opts, &mut common::rng(1)).unwrap();
    assert_eq!(scene, again);
}

#[test]
fn canned_directory_is_searched_first() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = CannedPlanner::default().plan("desk_scene").unwrap();
    plan.objects[0].prompt = "a steel desk".into();
    plan.save(&dir.path().join("desk_scene.json")).unwrap();
    let found = CannedPlanner::new(Some(dir.path().to_path_buf())).plan("Desk Scene").unwrap();
    assert_eq!(found.objects[0].prompt, "a steel desk");
}

fn remote(url: &str, repairs: usize) -> RemotePlanner {
    RemotePlanner::new(RemotePlannerConfig {
        endpoint: format!("{url}/v1/chat/completions"),
        model: "test-model".into(),
        api_key: "secret".into(),
        timeout: Duration::from_secs(10),
        max_repairs: repairs,
        temperature: 0.0,
        scene_template: semsplat_core::layout::planner::SCENE_TEMPLATE.into(),
        object_template: OBJECT_TEMPLATE.into(),
    })
}

const SCENE_OK: &str = r#"Here you go:
```json
{"objects": [{"id": "cube", "prompt": "a cube", "size_estimate": [1, 1, 1]}],
 "program": ["place(cube, 1, (0, 0, 0), vec(0, 0, cube_size.z / 2))"]}
```"#;
const TREE_OK: &str = r#"{"axis": "depth", "fractions": [0.5, 0.5], "children": [{"subprompt": "red bottom"}, {"subprompt": "blue top"}]}"#;
const TREE_BAD: &str = r#"{"axis": "depth", "fractions": [0.5, 0.6], "children": [{"subprompt": "red bottom"}, {"subprompt": "blue top"}]}"#;

#[test]
fn remote_planner_repairs_invalid_replies() {
    let server = serve(|_, n| {
        let content = match n {
            0 => SCENE_OK,
            1 | 2 => TREE_BAD,
            _ => TREE_OK,
        };
        (200, chat_reply(content))
    });
    let plan = remote(&server.url, 3).plan("a two-tone cube").unwrap();
    assert_eq!(plan.objects[0].id, "cube");
    assert_eq!(plan.region_trees["cube"].leaf_count(), 2);
    assert_eq!(plan.scene_prompt.as_deref(), Some("a two-tone cube"));
    let reqs = server.requests();
    assert_eq!(reqs.len(), 4);
    assert_eq!(reqs[0].path, "/v1/chat/completions");
    assert!(reqs[0].headers.iter().any(|(k, v)| k == "authorization" && v == "Bearer secret"));
    let last: serde_json::Value = serde_json::from_str(&reqs[3].body).unwrap();
    let messages = last["messages"].as_array().unwrap();
    // Original prompt, then two rejected answers each followed by a diagnostic.
    assert_eq!(messages.len(), 5);
    assert!(messages[4]["content"].as_str().unwrap().contains("sum to"));
    assert!(messages[0]["content"].as_str().unwrap().contains("a cube"));
}

#[test]
fn remote_planner_gives_up_after_repairs() {
    let server = serve(|_, n| (200, chat_reply(if n == 0 { SCENE_OK } else { TREE_BAD })));
    let e = remote(&server.url, 3).plan("a two-tone cube").unwrap_err();
    assert!(matches!(e, LayoutError::Plan(_)), "{e}");
    assert_eq!(server.requests().len(), 1 + 4);
}

#[test]
fn remote_planner_reports_http_errors() {
    let server = serve(|_, _| (500, "{\"error\": \"down\"}".into()));
    let e = remote(&server.url, 3).plan("anything").unwrap_err();
    assert!(matches!(e, LayoutError::Transport(_)), "{e}");
}

#[test]
fn remote_planner_requires_api_key() {
    std::env::remove_var(semsplat_core::layout::planner::API_KEY_VAR);
    let e = RemotePlannerConfig::from_env("http://localhost:1", "m").unwrap_err();
    assert!(matches!(e, LayoutError::Config(_)));
    assert!(e.to_string().contains("PLANNER_API_KEY"));
}

#[test]
fn unused_bindings_are_harmless() {
    let plan = LayoutPlan {
        scene_prompt: None,
        objects: vec![PlannedObjectSpec { id: "a".into(), prompt: "a thing".into(), size_estimate: [1.0, 2.0, 3.0] }],
        program: vec!["place(a, 1, (0, 0, 0), (0, 0, 0))".into()],
        region_trees: BTreeMap::from([("a".to_string(), RegionTree::leaf("a thing"))]),
    };
    let layout = plan.resolve().unwrap();
    assert_eq!(layout.scene_prompt, "a thing");
    assert_eq!(layout.objects[0].regions[0].bbox, BoundingBox::centered(Vector3::new(1.0, 2.0, 3.0)));
}
