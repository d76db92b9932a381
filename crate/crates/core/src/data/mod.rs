//! Domain types, class palette, file formats and model serialization.

pub mod codec;
pub mod io;
pub mod model;
pub mod palette;
pub mod types;

pub use palette::{encode_labels, render_labels, ClassPalette, PaletteEntry};
pub use types::{argmax, map_labeling, ClassId, FeatureMatrix, Geometry, LabelGrid, PointCloud, ProbMap};
pub use model::ModelFile;
