//! Synthetic datasets: a batch of generated scenes with their degraded
//! predictions, held in memory or exported in the on-disk formats.

use std::collections::BTreeMap;

use panfuse::coco::{
    png_name, save_panoptic, write_instance_results, CategorySet, DatasetManifest, ImageInfo,
    InstancesByImage, PanopticImage,
};
use panfuse::ensemble::{write_confidence_map, SemanticConfidenceMap};
use panfuse::expert::ExpertRouting;
use panfuse::par;
use panfuse::synth::{degrade, generate_gt, scene_seed, synthetic_categories, SceneSpec};
use panfuse::LabelMap;

use crate::config::{PanopticPaths, RunConfig, SynthConfig};
use crate::error::{CliError, Result};
use crate::output::Staging;

pub struct SynthDataset {
    pub categories: CategorySet,
    pub manifest: DatasetManifest,
    pub gt: Vec<(u64, PanopticImage)>,
    pub semantic_gt: Vec<(u64, LabelMap)>,
    /// Raw per-expert outputs, grouped by image.
    pub experts: BTreeMap<String, InstancesByImage>,
    /// `semantic[m]` lists model `m`'s map for every image, in image order.
    pub semantic: Vec<Vec<SemanticConfidenceMap>>,
}

pub fn scene_spec(cfg: &SynthConfig, categories: &CategorySet, seed: u64) -> SceneSpec {
    SceneSpec {
        width: cfg.width,
        height: cfg.height,
        n_things: cfg.n_things,
        thing_categories: categories.thing_ids(),
        stuff_categories: categories.stuff_ids(),
        seed,
        degradation: cfg.degradation,
        semantic_models: cfg.semantic_models,
    }
}

/// Image `i` (1-based id) uses scene seed `scene_seed(seed, i - 1)`.
pub fn generate_dataset(cfg: &SynthConfig, seed: u64, routing: &ExpertRouting) -> Result<SynthDataset> {
    if cfg.images == 0 {
        return Err(CliError::Config("[synth] images must be at least 1".into()));
    }
    let categories = synthetic_categories();
    let scenes = par::try_map_range(cfg.images, |i| {
        let spec = scene_spec(cfg, &categories, scene_seed(seed, i));
        let scene = generate_gt(&spec, &categories)?;
        let degraded = degrade(&scene, &spec, routing, &categories)?;
        Ok::<_, panfuse::Error>((scene, degraded))
    })?;

    let mut manifest = DatasetManifest::new(categories.as_slice().to_vec());
    let mut data = SynthDataset {
        categories,
        manifest: DatasetManifest::new(Vec::new()),
        gt: Vec::new(),
        semantic_gt: Vec::new(),
        experts: routing
            .experts()
            .iter()
            .map(|e| (e.name.clone(), InstancesByImage::new()))
            .collect(),
        semantic: vec![Vec::new(); cfg.semantic_models],
    };
    for (i, (scene, degraded)) in scenes.into_iter().enumerate() {
        let id = i as u64 + 1;
        manifest
            .images
            .push(ImageInfo::new(id, format!("synth_{id:06}.jpg"), cfg.width, cfg.height));
        for (name, inst) in degraded.per_expert {
            data.experts.get_mut(&name).expect("routing expert").insert(id, inst);
        }
        for (m, map) in degraded.semantic.into_iter().enumerate() {
            data.semantic[m].push(map);
        }
        data.gt.push((id, scene.panoptic));
        data.semantic_gt.push((id, scene.semantic));
    }
    data.manifest = manifest;
    Ok(data)
}

fn stem(file_name: &str) -> String {
    png_name(file_name).trim_end_matches(".png").to_owned()
}

/// Name of the confidence map file for an image.
pub fn pscm_name(file_name: &str) -> String {
    format!("{}.pscm", stem(file_name))
}

/// Write the dataset under `staging` and return a config that fuses it.
/// Paths in the returned config are relative to the dataset folder.
pub fn export(data: &SynthDataset, staging: &Staging, routing: &ExpertRouting) -> Result<RunConfig> {
    let gt = PanopticPaths {
        json: "gt/panoptic.json".into(),
        png_dir: "gt/panoptic".into(),
    };
    std::fs::create_dir_all(staging.path("gt")).map_err(|e| CliError::io(staging.path("gt"), e))?;
    save_panoptic(
        &staging.path(&gt.json),
        &staging.path(&gt.png_dir),
        &data.manifest,
        &data.gt,
    )?;

    let mut cfg = RunConfig {
        gt: Some(gt),
        routing: Some(routing.experts().to_vec()),
        output_dir: Some("fused".into()),
        ..Default::default()
    };
    for (name, inst) in &data.experts {
        let rel = format!("instances/{name}.json");
        staging.write(&rel, write_instance_results(inst)?)?;
        cfg.instances.insert(name.clone(), rel.into());
    }
    for (m, maps) in data.semantic.iter().enumerate() {
        let dir = format!("semantic/model_{m}");
        for (info, map) in data.manifest.images.iter().zip(maps) {
            staging.write(format!("{dir}/{}", pscm_name(&info.file_name)), write_confidence_map(map))?;
        }
        cfg.semantic.push(dir.into());
    }
    Ok(cfg)
}
