//! Bundled workload descriptors.
//!
//! `resnet50`, `mobilenetv3_small` and `unet_small` follow the public
//! architecture definitions at batch 1 (activation functions and batch norm
//! are folded into their producing layer; MobileNet-v3 omits squeeze-excite).
//! `chain4` and `chain16` are synthetic 3×3 conv chains.

use crate::model::{parse_model, ModelError, ModelGraph};

pub const RESNET50: &str = include_str!("../assets/resnet50.json");
pub const MOBILENETV3_SMALL: &str = include_str!("../assets/mobilenetv3_small.json");
pub const UNET_SMALL: &str = include_str!("../assets/unet_small.json");
pub const CHAIN4: &str = include_str!("../assets/chain4.json");
pub const CHAIN16: &str = include_str!("../assets/chain16.json");

pub const BUNDLED: [(&str, &str); 5] = [
    ("resnet50", RESNET50),
    ("mobilenetv3_small", MOBILENETV3_SMALL),
    ("unet_small", UNET_SMALL),
    ("chain4", CHAIN4),
    ("chain16", CHAIN16),
];

/// The three CNN workloads (excluding synthetic chains).
pub const NETWORKS: [&str; 3] = ["resnet50", "mobilenetv3_small", "unet_small"];

pub fn bundled(name: &str) -> Option<Result<ModelGraph, ModelError>> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_model(text))
}
