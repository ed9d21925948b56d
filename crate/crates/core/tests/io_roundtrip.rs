use std::collections::BTreeMap;

use panfuse::coco::{
    load_panoptic, read_instance_results, read_label_png, save_panoptic, write_instance_results,
    write_label_png, DatasetManifest, ImageInfo, InstancesByImage,
};
use panfuse::ensemble::{read_confidence_map, write_confidence_map};
use panfuse::synth::{degrade, generate_gt, synthetic_categories, synthetic_routing, SceneSpec};
use panfuse::Error;

fn scenes(n: u64) -> Vec<(SceneSpec, panfuse::synth::SyntheticScene)> {
    let cats = synthetic_categories();
    (0..n)
        .map(|seed| {
            let mut spec = SceneSpec::new(64 + 8 * seed as u32, 48, 4, seed);
            spec.degradation.false_positive_rate = 0.5;
            spec.degradation.boundary_erosion_px = 1;
            let scene = generate_gt(&spec, &cats).unwrap();
            (spec, scene)
        })
        .collect()
}

fn manifest(scenes: &[(SceneSpec, panfuse::synth::SyntheticScene)]) -> DatasetManifest {
    let mut m = DatasetManifest::new(synthetic_categories().as_slice().to_vec());
    for (i, (spec, _)) in scenes.iter().enumerate() {
        m.images
            .push(ImageInfo::new(i as u64 + 10, format!("img_{i}.jpg"), spec.width, spec.height));
    }
    m
}

#[test]
fn panoptic_dataset_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenes(3);
    let m = manifest(&s);
    let images: Vec<_> = s
        .iter()
        .enumerate()
        .map(|(i, (_, sc))| (i as u64 + 10, sc.panoptic.clone()))
        .collect();
    let json = dir.path().join("panoptic.json");
    let pngs = dir.path().join("panoptic");
    save_panoptic(&json, &pngs, &m, &images).unwrap();
    assert!(pngs.join("img_1.png").is_file());

    let loaded = load_panoptic(&json, &pngs).unwrap();
    assert_eq!(loaded.images, images);
    assert_eq!(loaded.manifest.annotations.len(), 3);
    assert_eq!(loaded.manifest.category_set().unwrap(), synthetic_categories());
}

#[test]
fn missing_pngs_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenes(3);
    let m = manifest(&s);
    let images: Vec<_> = s
        .iter()
        .enumerate()
        .map(|(i, (_, sc))| (i as u64 + 10, sc.panoptic.clone()))
        .collect();
    let json = dir.path().join("p.json");
    let pngs = dir.path().join("p");
    save_panoptic(&json, &pngs, &m, &images).unwrap();
    std::fs::remove_file(pngs.join("img_0.png")).unwrap();
    std::fs::remove_file(pngs.join("img_2.png")).unwrap();
    match load_panoptic(&json, &pngs) {
        Err(Error::MissingFiles(files)) => assert_eq!(files.len(), 2),
        other => panic!("expected missing files, got {other:?}"),
    }
}

#[test]
fn instance_results_roundtrip_through_coco_rle() {
    let cats = synthetic_categories();
    let routing = synthetic_routing();
    let s = scenes(3);
    let m = manifest(&s);
    let mut by_image = InstancesByImage::new();
    for (i, (spec, scene)) in s.iter().enumerate() {
        let d = degrade(scene, spec, &routing, &cats).unwrap();
        by_image.insert(i as u64 + 10, d.unrouted());
    }
    let text = write_instance_results(&by_image).unwrap();
    let back = read_instance_results(&text, &m.image_dims(), &cats).unwrap();
    assert_eq!(back, by_image);
}

#[test]
fn instance_results_reject_wrong_size() {
    let cats = synthetic_categories();
    let dims = BTreeMap::from([(1u64, (4u32, 3u32))]);
    let bad = r#"[{"image_id":1,"category_id":1,"score":0.9,"segmentation":{"size":[4,3],"counts":[0,12]}}]"#;
    let err = read_instance_results(bad, &dims, &cats).unwrap_err();
    assert!(matches!(err, Error::Record { index: 0, .. }), "{err}");
    let ok = r#"[{"image_id":1,"category_id":1,"score":0.9,"segmentation":{"size":[3,4],"counts":[0,12]}}]"#;
    assert_eq!(read_instance_results(ok, &dims, &cats).unwrap()[&1][0].area(), 12);
}

#[test]
fn semantic_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cats = synthetic_categories();
    let (spec, scene) = scenes(1).remove(0);
    let labels = dir.path().join("labels.png");
    write_label_png(&labels, &scene.semantic).unwrap();
    assert_eq!(read_label_png(&labels).unwrap(), scene.semantic);

    let d = degrade(&scene, &spec, &synthetic_routing(), &cats).unwrap();
    let bytes = write_confidence_map(&d.semantic[0]);
    assert_eq!(read_confidence_map(&bytes).unwrap(), d.semantic[0]);
    assert!(read_confidence_map(&bytes[..bytes.len() - 1]).is_err());
}
