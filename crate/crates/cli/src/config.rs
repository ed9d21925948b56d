//! Run configuration: one TOML file per run, with command-line overrides.
//!
//! Relative paths in a config file are resolved against the file's directory;
//! paths given on the command line are used as given.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use panfuse::expert::{Expert, ExpertRouting};
use panfuse::fusion::FusionParams;
use panfuse::synth::Degradation;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// A panoptic JSON plus its PNG folder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanopticPaths {
    pub json: PathBuf,
    pub png_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub n_things: usize,
    pub semantic_models: usize,
    pub degradation: Degradation,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            images: 4,
            width: 640,
            height: 480,
            n_things: 5,
            semantic_models: 3,
            degradation: Degradation::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; all available cores when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt: Option<PanopticPaths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PanopticPaths>,
    /// Detection-format result files keyed by expert name.
    pub instances: BTreeMap<String, PathBuf>,
    /// Ensemble members: folders holding one `<image stem>.pscm` per image.
    pub semantic: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub routing: Option<Vec<Expert>>,
    pub fusion: FusionParams,
    pub synth: SynthConfig,
}

/// Values given on the command line; each one replaces the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub gt_json: Option<PathBuf>,
    pub gt_png_dir: Option<PathBuf>,
    pub pred_json: Option<PathBuf>,
    pub pred_png_dir: Option<PathBuf>,
    pub instances: Vec<(String, PathBuf)>,
    pub semantic: Vec<PathBuf>,
    pub score_threshold: Option<f64>,
    pub overlap_threshold: Option<f64>,
    pub stuff_area_min: Option<u64>,
    pub images: Option<usize>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn paths_override(
    slot: &mut Option<PanopticPaths>,
    json: &Option<PathBuf>,
    png_dir: &Option<PathBuf>,
    what: &str,
) -> Result<()> {
    match (slot.as_mut(), json, png_dir) {
        (_, None, None) => {}
        (Some(p), j, d) => {
            if let Some(j) = j {
                p.json = j.clone();
            }
            if let Some(d) = d {
                p.png_dir = d.clone();
            }
        }
        (None, Some(j), Some(d)) => {
            *slot = Some(PanopticPaths {
                json: j.clone(),
                png_dir: d.clone(),
            })
        }
        (None, _, _) => {
            return Err(CliError::Config(format!(
                "{what} needs both --{what}-json and --{what}-png-dir"
            )))
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|source| CliError::ConfigSyntax {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.gt, &mut cfg.prediction].into_iter().flatten() {
            resolve(base, &mut p.json);
            resolve(base, &mut p.png_dir);
        }
        cfg.instances.values_mut().for_each(|p| resolve(base, p));
        cfg.semantic.iter_mut().for_each(|p| resolve(base, p));
        if let Some(p) = cfg.output_dir.as_mut() {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.parallelism.is_some() {
            self.parallelism = o.parallelism;
        }
        if o.output_dir.is_some() {
            self.output_dir = o.output_dir.clone();
        }
        paths_override(&mut self.gt, &o.gt_json, &o.gt_png_dir, "gt")?;
        paths_override(&mut self.prediction, &o.pred_json, &o.pred_png_dir, "pred")?;
        if !o.instances.is_empty() {
            self.instances = o.instances.iter().cloned().collect();
        }
        if !o.semantic.is_empty() {
            self.semantic = o.semantic.clone();
        }
        if let Some(v) = o.score_threshold {
            self.fusion.score_threshold = v;
        }
        if let Some(v) = o.overlap_threshold {
            self.fusion.overlap_threshold = v;
        }
        if let Some(v) = o.stuff_area_min {
            self.fusion.stuff_area_min = v;
        }
        if let Some(v) = o.images {
            self.synth.images = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == Some(0) {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        self.fusion
            .validate()
            .map_err(|e| CliError::Config(format!("[fusion] {e}")))?;
        self.synth
            .degradation
            .validate()
            .map_err(|e| CliError::Config(format!("[synth.degradation] {e}")))?;
        self.routing()?;
        Ok(())
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory; set output_dir or pass --output".into()))
    }

    pub fn gt(&self) -> Result<&PanopticPaths> {
        self.gt
            .as_ref()
            .ok_or_else(|| CliError::Config("no ground truth; set [gt] or pass --gt-json and --gt-png-dir".into()))
    }

    pub fn prediction(&self) -> Result<&PanopticPaths> {
        self.prediction.as_ref().ok_or_else(|| {
            CliError::Config("no prediction; set [prediction] or pass --pred-json and --pred-png-dir".into())
        })
    }

    /// The configured routing; a single instance source with no routing
    /// section is treated as one expert owning every category.
    pub fn routing(&self) -> Result<Option<ExpertRouting>> {
        match (&self.routing, self.instances.len()) {
            (Some(r), _) => ExpertRouting::new(r.clone())
                .map(Some)
                .map_err(|e| CliError::Config(format!("[[routing]] {e}"))),
            (None, 0) => Ok(None),
            (None, 1) => Ok(Some(ExpertRouting::single(
                self.instances.keys().next().expect("one entry"),
            ))),
            (None, _) => Err(CliError::Config(
                "several instance sources need a [[routing]] table naming each expert".into(),
            )),
        }
    }

    /// Every input path the config references that does not exist. The
    /// prediction is skipped unless `with_prediction`, since `fuse` writes it.
    pub fn missing_paths(&self, with_prediction: bool) -> Vec<PathBuf> {
        let mut paths: Vec<&Path> = Vec::new();
        let prediction = self.prediction.as_ref().filter(|_| with_prediction);
        for p in self.gt.iter().chain(prediction) {
            paths.push(&p.json);
            paths.push(&p.png_dir);
        }
        paths.extend(self.instances.values().map(PathBuf::as_path));
        paths.extend(self.semantic.iter().map(PathBuf::as_path));
        paths
            .into_iter()
            .filter(|p| !p.exists())
            .map(Path::to_path_buf)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7
output_dir = "out"

[gt]
json = "gt/panoptic.json"
png_dir = "gt/panoptic"

[instances]
person = "pred/person.json"
rest = "/abs/rest.json"

[[routing]]
name = "person"
categories = [1]

[[routing]]
name = "rest"
rest = true

[fusion]
score_threshold = 0.3
"#;

    #[test]
    fn parses_and_resolves_relative_paths() {
        let cfg = RunConfig::from_toml(SAMPLE, Path::new("/runs/a/run.toml")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.output_dir.as_deref(), Some(Path::new("/runs/a/out")));
        assert_eq!(cfg.gt.as_ref().unwrap().json, Path::new("/runs/a/gt/panoptic.json"));
        assert_eq!(cfg.instances["rest"], Path::new("/abs/rest.json"));
        assert_eq!(cfg.fusion.score_threshold, 0.3);
        assert_eq!(cfg.fusion.overlap_threshold, 0.5);
        assert_eq!(cfg.routing().unwrap().unwrap().experts().len(), 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn flags_win() {
        let mut cfg = RunConfig::from_toml(SAMPLE, Path::new("run.toml")).unwrap();
        cfg.apply(&Overrides {
            seed: Some(3),
            score_threshold: Some(0.9),
            gt_json: Some("other.json".into()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.fusion.score_threshold, 0.9);
        assert_eq!(cfg.gt.as_ref().unwrap().json, Path::new("other.json"));
        assert_eq!(cfg.gt.as_ref().unwrap().png_dir, Path::new("gt/panoptic"));
    }

    #[test]
    fn actionable_errors() {
        assert!(matches!(
            RunConfig::from_toml("sed = 1", Path::new("x.toml")),
            Err(CliError::ConfigSyntax { .. })
        ));
        let cfg = RunConfig {
            parallelism: Some(0),
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("parallelism"));
        let mut cfg = RunConfig::default();
        cfg.fusion.overlap_threshold = 2.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("[fusion]"));
        let mut cfg = RunConfig::default();
        cfg.instances.insert("a".into(), "a.json".into());
        cfg.instances.insert("b".into(), "b.json".into());
        assert!(cfg.validate().unwrap_err().to_string().contains("routing"));
        let o = Overrides { pred_json: Some("p.json".into()), ..Default::default() };
        assert!(RunConfig::default().apply(&o).is_err());
    }

    #[test]
    fn single_source_routes_everything() {
        let mut cfg = RunConfig::default();
        cfg.instances.insert("model".into(), "m.json".into());
        let r = cfg.routing().unwrap().unwrap();
        assert_eq!(r.owner(42), Some("model"));
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = RunConfig::from_toml(SAMPLE, Path::new("/r/run.toml")).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml(), Path::new("/elsewhere/x.toml")).unwrap();
        assert_eq!(cfg, again);
    }
}
