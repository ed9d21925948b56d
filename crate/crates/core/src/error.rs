use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("raster of {width}x{height} pixels exceeds the representable run length")]
    DimensionOverflow { width: u64, height: u64 },

    #[error("empty raster: width and height must both be positive (got {width}x{height})")]
    EmptyRaster { width: u32, height: u32 },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("malformed mask: {0}")]
    MalformedMask(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("unknown category id {0}")]
    UnknownCategory(u32),

    #[error("category {0} is a stuff category where a thing category is required")]
    StuffInstance(u32),

    #[error("invalid category set: {0}")]
    InvalidCategories(String),

    #[error("png format error: {0}")]
    PngFormat(String),

    #[error("segment id {0} does not fit in 24 bits")]
    IdOverflow(u32),

    #[error("invalid panoptic image: {0}")]
    InvalidPanoptic(String),

    #[error("invalid confidence map: {0}")]
    InvalidConfidenceMap(String),

    #[error("category mismatch between confidence maps")]
    CategoryMismatch,

    #[error("no inputs: {0}")]
    NoInputs(&'static str),

    #[error("invalid routing: {0}")]
    InvalidRouting(String),

    #[error("predictions from expert `{0}` which is not present in the routing")]
    UnroutedExpert(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("image {image_id}: {source}")]
    Image {
        image_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing files referenced by annotations: {}", display_paths(.0))]
    MissingFiles(Vec<PathBuf>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_image(self, image_id: u64) -> Self {
        Error::Image {
            image_id,
            source: Box::new(self),
        }
    }

    pub fn in_record(self, index: usize) -> Self {
        Error::Record {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
