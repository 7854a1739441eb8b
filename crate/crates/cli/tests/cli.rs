use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semsplat_core::layout::LayoutPlan;
use semsplat_core::optim::{Session, StepMetrics, TrainConfig};
use semsplat_core::semantic::PseudoEmbedder;

fn core_fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel)
}

fn semsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semsplat"))
        .args(args)
        .env_remove("PLANNER_API_KEY")
        .env_remove("GUIDANCE_URL")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 18] = [
    "--set", "width=32",
    "--set", "height=32",
    "--set", "init.gaussians_per_object=100",
    "--set", "semantic.d_h=64",
    "--set", "semantic.hidden=32",
    "--set", "semantic.codec_epochs=100",
    "--set", "output.preview_every=2",
    "--set", "output.preview_views=2",
    "--set", "densify.interval=2",
];

fn train_small(out: &Path, extra: &[&str]) -> Output {
    let plan = core_fixture("plans/two_tone_pair.json");
    let config = core_fixture("configs/analytic_demo.toml");
    let mut args = vec!["train", plan.to_str().unwrap(), "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    semsplat(&args)
}

fn step_metrics(path: &Path) -> Vec<StepMetrics> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"eval\""))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn canned_plan_matches_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan.json");
    let o = semsplat(&["plan", "desk scene", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let expected = LayoutPlan::load(&core_fixture("plans/desk_scene.json")).unwrap().to_json();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), expected);
    assert!(stderr(&o).contains("desk / lamp"));
}

#[test]
fn unknown_canned_prompt_fails() {
    let o = semsplat(&["plan", "a castle on the moon"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("available"));
}

#[test]
fn invalid_fractions_name_the_region_tree() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(core_fixture("plans/two_tone_pair.json")).unwrap();
    let broken = text.replacen("\"fractions\": [0.5, 0.5]", "\"fractions\": [0.7, 0.5]", 1);
    assert_ne!(broken, text);
    std::fs::write(dir.path().join("broken_pair.json"), broken).unwrap();
    let o = semsplat(&["plan", "broken pair", "--fixtures", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("region_trees.left"), "{}", stderr(&o));

    let o = semsplat(&["validate", dir.path().join("broken_pair.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn remote_planner_without_key_is_an_environment_error() {
    let o = semsplat(&["plan", "desk scene", "--planner", "remote"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("PLANNER_API_KEY"));
}

#[test]
fn validate_reports_pairs_and_flags() {
    let ok = semsplat(&["validate", core_fixture("plans/two_tone_pair.json").to_str().unwrap()]);
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("left / right"));

    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(core_fixture("plans/two_tone_pair.json")).unwrap();
    let stacked = text.replace("vec(-offset, 0, 0)", "vec(0, 0, 0)").replace("vec(offset, 0, 0)", "vec(0.1, 0, 0)");
    let path = dir.path().join("stacked.json");
    std::fs::write(&path, stacked).unwrap();
    let o = semsplat(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("OVERLAP"));
}

#[test]
fn zero_iterations_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_small(dir.path(), &["--iterations", "0", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut overrides: Vec<String> = SMALL.chunks(2).map(|c| c[1].to_string()).collect();
    overrides.extend(["iterations=0".to_string(), "seed=4".to_string()]);
    let cfg = TrainConfig::load(&core_fixture("configs/analytic_demo.toml")).unwrap().with_overrides(&overrides).unwrap();
    let plan = LayoutPlan::load(&core_fixture("plans/two_tone_pair.json")).unwrap();
    let s = Session::initialize(&plan, &cfg, &PseudoEmbedder::new(0, cfg.semantic.d_h)).unwrap();
    let fresh = tempfile::tempdir().unwrap();
    s.save_checkpoint(fresh.path()).unwrap();
    for name in ["scene.json", "object_00.sgs", "object_01.sgs", "codec.aec"] {
        let a = std::fs::read(dir.path().join("checkpoint").join(name)).unwrap();
        let b = std::fs::read(fresh.path().join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
    let log = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn resume_continues_the_step_counter() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_small(dir.path(), &["--iterations", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("previews/step_000002/view_01.png").exists());
    assert!(dir.path().join("previews/final/view_00.png").exists());
    let ckpt = dir.path().join("checkpoint");
    let o = semsplat(&["train", "--resume", ckpt.to_str().unwrap(), "--iterations", "6", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let steps: Vec<usize> = step_metrics(&dir.path().join("metrics.jsonl")).iter().map(|m| m.step).collect();
    assert_eq!(steps, vec![0, 1, 2, 3, 4, 5]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("steps 3..6"));

    let renders = dir.path().join("renders");
    let o = semsplat(&["render", ckpt.to_str().unwrap(), "--out", renders.to_str().unwrap(), "--views", "3", "--size", "24"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 0..3 {
        assert!(renders.join(format!("view_{i:02}.png")).exists());
    }
}

#[test]
fn remote_oracle_needs_a_service_url() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_small(dir.path(), &["--iterations", "1", "--oracle", "remote"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("GUIDANCE_URL"));
}

#[test]
fn bad_overrides_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_small(dir.path(), &["--set", "densify.bogus=1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = train_small(dir.path(), &["--set", "guidance.pool_max_kernel=4"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = train_small(dir.path(), &["--oracle", "recorded"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn check_suites_emit_json_reports() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let o = semsplat(&["check", "layout", "--report", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["suites"][0]["suite"], "layout");
    assert_eq!(v["suites"][0]["cases"].as_array().unwrap().len(), 22);

    for suite in ["masks", "compositing", "gradients"] {
        let o = semsplat(&["check", suite]);
        assert!(o.status.success(), "{suite}: {}", stderr(&o));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["passed"], true, "{suite}");
    }
}

#[test]
fn analytic_demo_recovers_region_colors() {
    let dir = tempfile::tempdir().unwrap();
    let plan = core_fixture("plans/two_tone_pair.json");
    let config = core_fixture("configs/analytic_demo.toml");
    let o = semsplat(&[
        "train",
        plan.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "output.preview_every=0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["phase"], "eval");
    assert_eq!(last["complete"], true);
    let regions = last["regions"].as_array().unwrap();
    assert_eq!(regions.len(), 4);
    for r in regions {
        assert!(r["error"].as_f64().unwrap() < 0.05, "{r}");
    }
}
