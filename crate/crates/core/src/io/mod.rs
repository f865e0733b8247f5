//! Images, dataset manifests and checkpoints on disk.

mod checkpoint;
mod image;
mod manifest;

pub use self::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, FORMAT_VERSION, MAGIC};
pub use self::image::{load_image, load_image_native, quantize, resize_bilinear, save_image};
pub use self::manifest::{DatasetManifest, ManifestEntry, RESIZE_POLICY};

#[cfg(test)]
mod tests;
