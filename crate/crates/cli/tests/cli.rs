use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panfuse::coco::{load_panoptic, DatasetManifest};
use panfuse::metrics::{pq_dataset, pq_summarize, MetricReport};

fn panfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panfuse"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A small degraded synthetic dataset under `dir/data`.
fn synth(dir: &Path) -> PathBuf {
    fs::write(
        dir.join("synth.toml"),
        r#"
seed = 3
[fusion]
stuff_area_min = 32
[synth]
images = 3
width = 96
height = 64
n_things = 4
[synth.degradation]
boundary_erosion_px = 1
false_positive_rate = 0.3
semantic_flip_rate = 0.2
off_category_rate = 0.3
"#,
    )
    .unwrap();
    ok(&panfuse(dir, &["synth", "-c", "synth.toml", "-o", "data"]));
    dir.join("data")
}

#[test]
fn synth_fuse_eval_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    for f in ["run.toml", "gt/panoptic.json", "instances/person.json", "semantic/model_2/synth_000003.pscm"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let fused = ok(&panfuse(&data, &["fuse", "-c", "run.toml"]));
    assert!(fused.contains("fused 3 image(s)"), "{fused}");
    ok(&panfuse(&data, &["eval-pq", "-c", "run.toml", "-o", "eval"]));
    ok(&panfuse(&data, &["eval-miou", "-c", "run.toml", "-o", "eval"]));
    ok(&panfuse(&data, &["eval-map", "-c", "run.toml", "-o", "eval"]));

    let gt = load_panoptic(&data.join("gt/panoptic.json"), &data.join("gt/panoptic")).unwrap();
    let pred = load_panoptic(&data.join("fused/panoptic.json"), &data.join("fused/panoptic")).unwrap();
    let cats = gt.manifest.category_set().unwrap();
    let direct = MetricReport {
        pq: Some(pq_summarize(&pq_dataset(&gt.images, &pred.images, &cats).unwrap(), &cats)),
        ..Default::default()
    };
    assert_eq!(fs::read_to_string(data.join("eval/pq.json")).unwrap(), direct.to_json().unwrap());
    let pq = direct.pq.unwrap().all.pq;
    assert!(pq > 0.0 && pq < 1.0, "{pq}");

    let miou: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("eval/miou.json")).unwrap()).unwrap();
    assert!(miou["miou"]["mean"].as_f64().unwrap() > 0.0);
    let map = fs::read_to_string(data.join("eval/map.txt")).unwrap();
    assert!(map.contains("mAP (bbox)"), "{map}");
}

#[test]
fn single_model_baseline_wiring() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let out = ok(&panfuse(
        &data,
        &[
            "fuse",
            "--gt-json", "gt/panoptic.json",
            "--gt-png-dir", "gt/panoptic",
            "--instances", "model=instances/rest.json",
            "--semantic", "semantic/model_0",
            "-o", "baseline",
        ],
    ));
    assert!(out.contains("fused 3"), "{out}");
    assert!(data.join("baseline/panoptic.json").is_file());
    assert!(data.join("baseline/fusion_stats.json").is_file());
}

#[test]
fn missing_input_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    fs::remove_file(data.join("semantic/model_1/synth_000002.pscm")).unwrap();
    let out = panfuse(&data, &["fuse", "-c", "run.toml", "-o", "partial"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("synth_000002.pscm"), "{err}");
    assert!(!data.join("partial").exists());
    let leftovers: Vec<_> = fs::read_dir(&data)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains("partial"))
        .collect();
    assert!(leftovers.is_empty());

    let out = panfuse(&data, &["eval-pq", "--gt-json", "nope.json", "--gt-png-dir", "gt/panoptic", "-o", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn config_errors_are_actionable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = panfuse(tmp.path(), &["matrix", "-j", "0", "-o", "m"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("parallelism"));
    let out = panfuse(tmp.path(), &["matrix", "--overlap-threshold", "1.5", "-o", "m"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("[fusion]"));
    fs::write(tmp.path().join("bad.toml"), "sead = 1").unwrap();
    let out = panfuse(tmp.path(), &["matrix", "-c", "bad.toml"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
    let out = panfuse(tmp.path(), &["fuse"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--gt-json"));
}

#[test]
fn visualize_is_deterministic_with_legend() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    ok(&panfuse(&data, &["visualize", "--config", "run.toml", "--pred-json", "gt/panoptic.json", "--pred-png-dir", "gt/panoptic", "-o", "v1"]));
    ok(&panfuse(&data, &["visualize", "--config", "run.toml", "--pred-json", "gt/panoptic.json", "--pred-png-dir", "gt/panoptic", "-o", "v2"]));
    for f in ["synth_000001.png", "legend.json"] {
        assert_eq!(fs::read(data.join("v1").join(f)).unwrap(), fs::read(data.join("v2").join(f)).unwrap());
    }
    let legend: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("v1/legend.json")).unwrap()).unwrap();
    let gt = DatasetManifest::read(&data.join("gt/panoptic.json")).unwrap();
    let segments = gt.annotations[0].segments_info.len();
    assert_eq!(legend["synth_000001.png"].as_object().unwrap().len(), segments);
}

#[test]
fn validate_flags_corrupted_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    ok(&panfuse(&data, &["validate", "--gt-json", "gt/panoptic.json", "--gt-png-dir", "gt/panoptic"]));

    let path = data.join("gt/panoptic.json");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    json["annotations"][0]["segments_info"][0]["area"] = 1.into();
    fs::write(&path, json.to_string()).unwrap();
    let out = panfuse(&data, &["validate", "--gt-json", "gt/panoptic.json", "--gt-png-dir", "gt/panoptic", "-o", "report"]);
    assert!(!out.status.success());
    let report = fs::read_to_string(data.join("report/validation.json")).unwrap();
    assert!(report.contains("area"), "{report}");
}

#[test]
fn matrix_report_has_one_row_per_strategy() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let table = ok(&panfuse(tmp.path(), &["matrix", "-c", "synth.toml", "-o", "m", "--images", "2"]));
    assert_eq!(table.lines().filter(|l| !l.trim().is_empty()).count(), 5, "{table}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("m/matrix.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    assert_eq!(json["images"], 2);
}
