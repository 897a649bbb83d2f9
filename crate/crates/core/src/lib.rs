//! Background-regeneration augmentation for COCO-style detection datasets.

pub mod annotation;
pub mod inpaint;
pub mod mask;
pub mod pipeline;
pub mod policy;
pub mod remote;
