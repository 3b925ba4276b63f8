//! Reference network configurations.

use crate::model::{parse_model_config, NetworkSpec};

/// 11-layer event-camera backbone, 304x240 two-channel input.
pub const SMALL_32_ST_VGG: &str = include_str!("../configs/small_32_st_vgg.cfg");

/// 4-layer 1-D keyword-spotting network, 10 channels x 24 samples.
pub const SCNN_4_LAYER: &str = include_str!("../configs/scnn.cfg");

pub fn small_32_st_vgg() -> NetworkSpec {
    parse_model_config(SMALL_32_ST_VGG).expect("bundled config parses")
}

pub fn scnn_4_layer() -> NetworkSpec {
    parse_model_config(SCNN_4_LAYER).expect("bundled config parses")
}
