//! Procedural moving-shapes clips with exact masks and analytic flow, their
//! on-disk format, and the small learned encoders used in place of
//! pretrained backbones.

pub mod encoders;
pub mod io;
pub mod scene;
pub mod vocab;

pub use encoders::{flow_color_preview, FeaturePyramid, TextEncoder, TextFeatures, VisualEncoder};
pub use scene::{generate_clip, generate_dataset, sample_scene, ClipSample, ObjectSpec, Preset, SceneParams, SceneSpec, Shape};
