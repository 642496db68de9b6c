//! masksplitter — blob-level refinement of binarized segmentation output.
//!
//! A two-class backbone produces object and background score maps. Their
//! pixelwise argmax is a binary mask whose connected blobs are the predicted
//! instances. This crate provides:
//!
//! - [`mask`]: binary masks, label maps, connected components, binarization.
//! - [`splitter`]: IoU matrices and the good / merged / fragmented blob split.
//! - [`head`]: the small trainable head on top of the score maps, its
//!   four-term loss, exact backpropagation and Adam.
//! - [`gradcheck`]: finite-difference verification of the head gradient.
//! - [`metrics`]: greedy mask matching and 101-point average precision.
//! - [`dataset`]: ISODATA thresholding, instance-centred crops, seeded
//!   train/val splits and a synthetic occlusion-scene generator.
//! - [`training`]: a seeded single-example training loop.
//! - [`io`]: binary PGM, score-map JSON and CSV manifests.

pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod splitter;
pub mod training;

pub use error::{Error, Result};
pub use mask::{
    binarize_scores, connected_components, extract_instance, mask_union, BinaryMask, Connectivity,
    LabelMap, Plane, ScoreMapPair,
};
pub use splitter::{iou, iou_matrix, split_binary, split_masks, BlobClass, IoUMatrix, SplitResult};
