use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::category::{Category, CategorySet};
use super::panoptic::{PanopticImage, SegmentInfo};
use super::png::{read_panoptic_png, write_panoptic_png};
use crate::error::{Error, Result};
use crate::mask::LabelMap;
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ImageInfo {
    pub fn new(id: u64, file_name: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id,
            file_name: file_name.into(),
            width,
            height,
            extra: Default::default(),
        }
    }
}

/// Per-image entry of the `annotations` list; `file_name` names the id PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanopticAnnotation {
    pub image_id: u64,
    pub file_name: String,
    pub segments_info: Vec<SegmentInfo>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// The COCO panoptic JSON document. Unknown fields at every level are kept
/// so that a load/save cycle reproduces the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub images: Vec<ImageInfo>,
    #[serde(default)]
    pub annotations: Vec<PanopticAnnotation>,
    pub categories: Vec<Category>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl DatasetManifest {
    pub fn new(categories: Vec<Category>) -> Self {
        Self {
            images: Vec::new(),
            annotations: Vec::new(),
            categories,
            extra: Default::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Image ids are unique and every annotation points at a listed image.
    pub fn check(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for img in &self.images {
            if !ids.insert(img.id) {
                return Err(Error::InvalidPanoptic(format!(
                    "duplicate image id {}",
                    img.id
                )));
            }
        }
        let mut annotated = BTreeSet::new();
        for ann in &self.annotations {
            if !ids.contains(&ann.image_id) {
                return Err(Error::InvalidPanoptic(format!(
                    "annotation references unlisted image {}",
                    ann.image_id
                )));
            }
            if !annotated.insert(ann.image_id) {
                return Err(Error::InvalidPanoptic(format!(
                    "image {} annotated more than once",
                    ann.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn category_set(&self) -> Result<CategorySet> {
        CategorySet::new(self.categories.clone())
    }

    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    /// `image id -> (width, height)`.
    pub fn image_dims(&self) -> BTreeMap<u64, (u32, u32)> {
        self.images
            .iter()
            .map(|i| (i.id, (i.width, i.height)))
            .collect()
    }

    /// Images sorted by id; the fixed processing order for batch work.
    pub fn images_by_id(&self) -> Vec<&ImageInfo> {
        let mut v: Vec<_> = self.images.iter().collect();
        v.sort_by_key(|i| i.id);
        v
    }
}

/// PNG name for an image: the image file stem with a `.png` extension.
pub fn png_name(file_name: &str) -> String {
    let stem = Path::new(file_name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file_name.to_owned());
    format!("{stem}.png")
}

/// A manifest together with the decoded rasters of its annotations, ordered
/// by image id.
#[derive(Clone, Debug)]
pub struct PanopticDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<(u64, PanopticImage)>,
}

impl PanopticDataset {
    pub fn get(&self, image_id: u64) -> Option<&PanopticImage> {
        self.images
            .binary_search_by_key(&image_id, |(id, _)| *id)
            .ok()
            .map(|i| &self.images[i].1)
    }
}

/// Load a panoptic JSON and its PNG folder. Annotations whose PNG is missing
/// are all reported together; nothing is skipped.
pub fn load_panoptic(json_path: &Path, png_dir: &Path) -> Result<PanopticDataset> {
    let manifest = DatasetManifest::read(json_path)?;
    let mut anns: Vec<&PanopticAnnotation> = manifest.annotations.iter().collect();
    anns.sort_by_key(|a| a.image_id);

    let missing: Vec<PathBuf> = anns
        .iter()
        .map(|a| png_dir.join(&a.file_name))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }

    let dims = manifest.image_dims();
    let images = par::try_map(&anns, |ann| {
        let path = png_dir.join(&ann.file_name);
        let load = || -> Result<PanopticImage> {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let raster = read_panoptic_png(&bytes)?;
            let expected = dims[&ann.image_id];
            if (raster.width, raster.height) != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: (raster.width, raster.height),
                });
            }
            PanopticImage::from_parts(
                raster.width,
                raster.height,
                raster.ids,
                ann.segments_info.clone(),
            )
        };
        load()
            .map(|p| (ann.image_id, p))
            .map_err(|e| e.in_image(ann.image_id))
    })?;
    Ok(PanopticDataset { manifest, images })
}

/// Rebuild annotations from `images` and write the JSON and one PNG per image.
/// `manifest.images` must list every image id.
pub fn save_panoptic(
    json_path: &Path,
    png_dir: &Path,
    manifest: &DatasetManifest,
    images: &[(u64, PanopticImage)],
) -> Result<()> {
    let mut out = manifest.clone();
    out.annotations = Vec::with_capacity(images.len());
    for (image_id, pan) in images {
        let info = manifest.image(*image_id).ok_or_else(|| {
            Error::InvalidPanoptic(format!("image {image_id} missing from manifest"))
        })?;
        out.annotations.push(PanopticAnnotation {
            image_id: *image_id,
            file_name: png_name(&info.file_name),
            segments_info: pan.segments().to_vec(),
            extra: Default::default(),
        });
    }
    out.check()?;
    fs::create_dir_all(png_dir).map_err(|e| Error::io(png_dir, e))?;
    let written = par::try_map(images, |(image_id, pan)| {
        let info = manifest.image(*image_id).expect("checked above");
        let bytes = write_panoptic_png(pan.width(), pan.height(), pan.id_map())
            .map_err(|e| e.in_image(*image_id))?;
        let path = png_dir.join(png_name(&info.file_name));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    });
    written?;
    fs::write(json_path, out.to_json()?).map_err(|e| Error::io(json_path, e))
}

/// Write a semantic label map as an id-encoded PNG.
pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<()> {
    let bytes = write_panoptic_png(labels.width(), labels.height(), labels.labels())?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a semantic label PNG.
pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raster = read_panoptic_png(&bytes)?;
    LabelMap::new(raster.width, raster.height, raster.ids)
}
