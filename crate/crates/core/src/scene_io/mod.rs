//! Datasets, grid files and procedural exemplar scenes.

mod camera;
mod dataset;
mod grid_file;
mod synthetic;

pub use camera::{Camera, ROTATION_TOLERANCE};
pub use dataset::{
    load_dataset, read_png, save_dataset, srgb_to_linear, write_png, ColorSpace, Frame, Manifest,
    PosedImageSet, MANIFEST_NAME,
};
pub use grid_file::{decode_grid, encode_grid, read_grid, write_grid};
pub use synthetic::{
    dataset_focal, make_synthetic_scene, render_dataset, Primitive, PrimitiveKind, SceneKind,
    SyntheticScene,
};
