//! One function per subcommand. Each loads its inputs, does the work through
//! the library and writes results via [`Staging`], so a failed run leaves
//! nothing behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use panfuse::coco::{
    load_panoptic, panoptic_to_semantic_gt, read_instance_results, rgb_to_id, save_panoptic,
    validate_panoptic_with, write_panoptic_png, CategorySet, DatasetManifest, InstancesByImage,
    PanopticDataset, Violation,
};
use panfuse::ensemble::{argmax_labels, ensemble_average, read_confidence_map};
use panfuse::expert::{merge_by_image, validate_routing, ExpertRouting, RoutingViolation};
use panfuse::fusion::{fuse_batch, FusionInput, FusionStats};
use panfuse::metrics::{
    coco_map, gt_instances, miou_dataset, pq_dataset, pq_summarize, IouMode, MetricReport,
};
use panfuse::synth::synthetic_routing;
use panfuse::visual::{colorize, legend};
use panfuse::{par, LabelMap, VOID};
use serde::Serialize;

use crate::config::{PanopticPaths, RunConfig};
use crate::error::{CliError, Result};
use crate::matrix::{run_matrix, MatrixReport};
use crate::output::Staging;
use crate::synthdata::{export, generate_dataset, pscm_name};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Fuse,
    EvalPq,
    EvalMiou,
    EvalMap,
    Matrix,
    Visualize,
    Validate,
}

/// Run `f` on a pool of `threads` workers, or on the default pool.
pub fn with_parallelism<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?;
        return Ok(pool.install(f));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(f())
}

/// Validate the config, then run `cmd` on the configured number of workers.
/// Returns a short human-readable summary.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let missing = match cmd {
        Command::Synth | Command::Matrix => Vec::new(),
        Command::Fuse => cfg.missing_paths(false),
        _ => cfg.missing_paths(true),
    };
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::Config(format!("missing input path(s): {}", list.join(", "))));
    }
    with_parallelism(cfg.parallelism, || match cmd {
        Command::Synth => cmd_synth(cfg).map(|p| format!("synthetic dataset written to {}", p.display())),
        Command::Fuse => cmd_fuse(cfg).map(|s| {
            format!(
                "fused {} image(s): kept {}/{} instances, {} stuff segments, {:.2}% void",
                s.images,
                s.instances_kept,
                s.instances_in,
                s.stuff_segments_kept,
                100.0 * s.void_fraction()
            )
        }),
        Command::EvalPq | Command::EvalMiou | Command::EvalMap => {
            let cats = gt_categories(cfg)?;
            cmd_eval(cmd, cfg).map(|r| r.to_table(&cats))
        }
        Command::Matrix => cmd_matrix(cfg).map(|r| r.to_table()),
        Command::Visualize => cmd_visualize(cfg).map(|n| format!("colorized {n} image(s)")),
        Command::Validate => cmd_validate(cfg).map(|_| "no problems found".to_owned()),
    })?
}

fn gt_categories(cfg: &RunConfig) -> Result<CategorySet> {
    Ok(DatasetManifest::read(&cfg.gt()?.json)?.category_set()?)
}

fn load(paths: &PanopticPaths) -> Result<PanopticDataset> {
    Ok(load_panoptic(&paths.json, &paths.png_dir)?)
}

fn in_file(path: &Path) -> impl FnOnce(panfuse::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{}: {e}", path.display()))
}

fn routing_or_default(cfg: &RunConfig) -> Result<ExpertRouting> {
    Ok(cfg.routing()?.unwrap_or_else(synthetic_routing))
}

/// Instance results of every configured source, routed and merged.
pub fn load_instances(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    categories: &CategorySet,
) -> Result<InstancesByImage> {
    let Some(routing) = cfg.routing()? else {
        return Ok(InstancesByImage::new());
    };
    let dims = manifest.image_dims();
    let mut per_expert = BTreeMap::new();
    for (name, path) in &cfg.instances {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let inst = read_instance_results(&text, &dims, categories).map_err(in_file(path))?;
        per_expert.insert(name.clone(), inst);
    }
    merge_by_image(&per_expert, &routing).map_err(|e| CliError::Config(format!("routing: {e}")))
}

/// Semantic labels per image in manifest order: the argmax of the averaged
/// confidence maps of every ensemble member.
pub fn load_semantic(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Vec<(u64, LabelMap)>> {
    if cfg.semantic.is_empty() {
        return Err(CliError::Config(
            "no semantic model; list its folder under `semantic` or pass --semantic".into(),
        ));
    }
    let images = manifest.images_by_id();
    let files: Vec<(u64, Vec<PathBuf>)> = images
        .iter()
        .map(|info| {
            let name = pscm_name(&info.file_name);
            (info.id, cfg.semantic.iter().map(|d| d.join(&name)).collect())
        })
        .collect();
    let missing: Vec<PathBuf> = files
        .iter()
        .flat_map(|(_, f)| f.iter())
        .filter(|p| !p.is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(panfuse::Error::MissingFiles(missing).into());
    }
    par::try_map(&files, |(id, paths)| {
        let maps = paths
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
                read_confidence_map(&bytes).map_err(in_file(p))
            })
            .collect::<Result<Vec<_>>>()?;
        let avg = ensemble_average(&maps).map_err(|e| e.in_image(*id))?;
        Ok((*id, argmax_labels(&avg)))
    })
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let routing = routing_or_default(cfg)?;
    let data = generate_dataset(&cfg.synth, cfg.seed, &routing)?;
    let staging = Staging::new(cfg.output_dir()?)?;
    let mut run = export(&data, &staging, &routing)?;
    run.seed = cfg.seed;
    run.fusion = cfg.fusion;
    run.synth = cfg.synth.clone();
    run.prediction = Some(PanopticPaths {
        json: "fused/panoptic.json".into(),
        png_dir: "fused/panoptic".into(),
    });
    staging.write("run.toml", run.to_toml())?;
    info!("wrote {} synthetic image(s)", data.gt.len());
    staging.commit()
}

pub fn cmd_fuse(cfg: &RunConfig) -> Result<FusionStats> {
    let manifest = DatasetManifest::read(&cfg.gt()?.json)?;
    let categories = manifest.category_set()?;
    let instances = load_instances(cfg, &manifest, &categories)?;
    let semantic = load_semantic(cfg, &manifest)?;
    let inputs: Vec<FusionInput> = semantic
        .into_iter()
        .map(|(id, labels)| FusionInput {
            image_id: id,
            instances: instances.get(&id).cloned().unwrap_or_default(),
            semantic: labels,
        })
        .collect();
    let batch = fuse_batch(&inputs, &cfg.fusion, &categories)?;

    let staging = Staging::new(cfg.output_dir()?)?;
    save_panoptic(
        &staging.path("panoptic.json"),
        &staging.path("panoptic"),
        &manifest,
        &batch.images,
    )?;
    staging.write("fusion_stats.json", serde_json::to_string_pretty(&batch.stats)?)?;
    staging.commit()?;
    Ok(batch.stats)
}

fn write_report(cfg: &RunConfig, stem: &str, report: &MetricReport, cats: &CategorySet) -> Result<()> {
    let staging = Staging::new(cfg.output_dir()?)?;
    staging.write(format!("{stem}.json"), report.to_json()?)?;
    staging.write(format!("{stem}.txt"), report.to_table(cats))?;
    staging.commit()?;
    Ok(())
}

pub fn cmd_eval(which: Command, cfg: &RunConfig) -> Result<MetricReport> {
    let gt = load(cfg.gt()?)?;
    let categories = gt.manifest.category_set()?;
    let mut report = MetricReport::default();
    let stem = match which {
        Command::EvalPq => {
            let pred = load(cfg.prediction()?)?;
            let stats = pq_dataset(&gt.images, &pred.images, &categories)?;
            report.pq = Some(pq_summarize(&stats, &categories));
            "pq"
        }
        Command::EvalMiou => {
            let gt_sem: Vec<(u64, LabelMap)> = par::try_map(&gt.images, |(id, pan)| {
                panoptic_to_semantic_gt(pan, &categories)
                    .map(|l| (*id, l))
                    .map_err(|e| e.in_image(*id))
            })?;
            let pred_sem: BTreeMap<u64, LabelMap> = if cfg.prediction.is_some() {
                let pred = load(cfg.prediction()?)?;
                par::try_map(&pred.images, |(id, pan)| {
                    panoptic_to_semantic_gt(pan, &categories)
                        .map(|l| (*id, l))
                        .map_err(|e| e.in_image(*id))
                })?
                .into_iter()
                .collect()
            } else {
                load_semantic(cfg, &gt.manifest)?.into_iter().collect()
            };
            let mut blanks = BTreeMap::new();
            for (id, g) in &gt_sem {
                if !pred_sem.contains_key(id) {
                    warn!("image {id} has no prediction; scoring it as all VOID");
                    blanks.insert(*id, LabelMap::filled(g.width(), g.height(), VOID)?);
                }
            }
            let pairs: Vec<(u64, &LabelMap, &LabelMap)> = gt_sem
                .iter()
                .map(|(id, g)| (*id, g, pred_sem.get(id).unwrap_or_else(|| &blanks[id])))
                .collect();
            report.miou = Some(miou_dataset(&pairs, &categories)?);
            "miou"
        }
        Command::EvalMap => {
            let truth: BTreeMap<u64, _> = gt
                .images
                .iter()
                .map(|(id, pan)| (*id, gt_instances(pan, &categories)))
                .collect();
            let pred = load_instances(cfg, &gt.manifest, &categories)?;
            report.map_bbox = Some(coco_map(&truth, &pred, IouMode::Bbox)?);
            report.map_mask = Some(coco_map(&truth, &pred, IouMode::Mask)?);
            "map"
        }
        _ => unreachable!("not an evaluation command"),
    };
    write_report(cfg, stem, &report, &categories)?;
    Ok(report)
}

pub fn cmd_matrix(cfg: &RunConfig) -> Result<MatrixReport> {
    let routing = routing_or_default(cfg)?;
    let data = generate_dataset(&cfg.synth, cfg.seed, &routing)?;
    let report = run_matrix(&data, &routing, &cfg.fusion, cfg.seed)?;
    let staging = Staging::new(cfg.output_dir()?)?;
    staging.write("matrix.json", report.to_json()?)?;
    staging.write("matrix.txt", report.to_table())?;
    staging.commit()?;
    Ok(report)
}

/// Colorize the prediction, or the ground truth when no prediction is set.
pub fn cmd_visualize(cfg: &RunConfig) -> Result<usize> {
    let paths = match &cfg.prediction {
        Some(p) => p,
        None => cfg.gt()?,
    };
    let data = load(paths)?;
    let categories = match &cfg.gt {
        Some(g) => DatasetManifest::read(&g.json)?.category_set()?,
        None => data.manifest.category_set()?,
    };
    let staging = Staging::new(cfg.output_dir()?)?;
    let rendered = par::try_map(&data.images, |(id, pan)| {
        let rgb = colorize(pan);
        let ids: Vec<u32> = rgb.chunks_exact(3).map(|c| rgb_to_id([c[0], c[1], c[2]])).collect();
        write_panoptic_png(pan.width(), pan.height(), &ids).map_err(|e| e.in_image(*id))
    })?;
    let mut legends = BTreeMap::new();
    for ((id, pan), png) in data.images.iter().zip(rendered) {
        let info = data
            .manifest
            .image(*id)
            .ok_or_else(|| panfuse::Error::InvalidPanoptic(format!("image {id} not in manifest")))?;
        let name = panfuse::coco::png_name(&info.file_name);
        staging.write(&name, png)?;
        legends.insert(name, legend(pan, &categories));
    }
    staging.write("legend.json", serde_json::to_string_pretty(&legends)?)?;
    staging.commit()?;
    Ok(data.images.len())
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationSummary {
    /// Problems per image, keyed by `"gt"` or `"prediction"` then image id.
    pub panoptic: BTreeMap<String, BTreeMap<u64, Vec<Violation>>>,
    pub routing: Vec<RoutingViolation>,
}

impl ValidationSummary {
    pub fn count(&self) -> usize {
        self.panoptic.values().flat_map(|m| m.values()).map(Vec::len).sum::<usize>()
            + self.routing.len()
    }
}

/// Check GT, prediction and routing. Problems are logged and, when an output
/// directory is set, written to `validation.json`; any problem is an error.
pub fn cmd_validate(cfg: &RunConfig) -> Result<ValidationSummary> {
    let gt = load(cfg.gt()?)?;
    let categories = gt.manifest.category_set()?;
    let mut summary = ValidationSummary::default();
    let mut sets = vec![("gt", gt)];
    if let Some(p) = &cfg.prediction {
        sets.push(("prediction", load(p)?));
    }
    for (label, data) in &sets {
        let per_image: BTreeMap<u64, Vec<Violation>> = par::map(&data.images, |(id, pan)| {
            (*id, validate_panoptic_with(pan, &categories).violations)
        })
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .collect();
        for (id, v) in &per_image {
            for violation in v {
                warn!("{label} image {id}: {violation}");
            }
        }
        summary.panoptic.insert(label.to_string(), per_image);
    }
    if let Some(routing) = cfg.routing()? {
        summary.routing = validate_routing(&routing, &categories).violations;
        for v in &summary.routing {
            warn!("routing: {v}");
        }
    }
    if let Some(out) = &cfg.output_dir {
        let staging = Staging::new(out)?;
        staging.write("validation.json", serde_json::to_string_pretty(&summary)?)?;
        staging.commit()?;
    }
    match summary.count() {
        0 => Ok(summary),
        n => Err(CliError::ValidationFailed(n)),
    }
}
