use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

pub const CONFIG_SCHEMA: &str = "cfkit_config_v1";

/// MobileNetV2-style block: expand 1×1, depthwise k×k, project 1×1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvertedResidualSpec {
    pub kernel: usize,
    pub expand_ratio: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl InvertedResidualSpec {
    pub const fn new(kernel: usize, expand_ratio: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kernel,
            expand_ratio,
            out_channels,
            stride,
        }
    }

    pub fn has_skip(&self, in_channels: usize) -> bool {
        self.stride == 1 && in_channels == self.out_channels
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub blocks: Vec<InvertedResidualSpec>,
}

/// Bottleneck hyperparameters and the component switches of the ablation
/// grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransBdcConfig {
    pub num_blocks: usize,
    pub num_heads: usize,
    pub q_dim: usize,
    pub k_dim: usize,
    pub v_dim: usize,
    pub ffn_expansion: usize,
    pub ca_reduction: usize,
    pub vit: bool,
    pub dw3x3: bool,
    pub dw1x1: bool,
    pub dwsep: bool,
    pub channel_attention: bool,
}

impl TransBdcConfig {
    pub fn bdc_enabled(&self) -> bool {
        self.dw3x3 || self.dw1x1 || self.dwsep || self.channel_attention
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// FMM at every pyramid scale followed by the segmentation head.
    Seg,
    /// Global pooling and a linear classifier on the bottleneck.
    Cls,
    /// Encoder and bottleneck only.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema: String,
    pub input_channels: usize,
    pub num_classes: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub stem: StemSpec,
    pub tpem_stages: Vec<Vec<InvertedResidualSpec>>,
    pub pool_divisor: usize,
    pub trans_bdc: TransBdcConfig,
    pub fmm_target_channels: usize,
    pub head: HeadKind,
    pub bn_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_threshold: Option<f64>,
}

const STAGES: [[InvertedResidualSpec; 2]; 4] = [
    [
        InvertedResidualSpec::new(3, 4, 16, 2),
        InvertedResidualSpec::new(3, 3, 16, 1),
    ],
    [
        InvertedResidualSpec::new(5, 3, 32, 2),
        InvertedResidualSpec::new(5, 3, 32, 1),
    ],
    [
        InvertedResidualSpec::new(3, 3, 64, 2),
        InvertedResidualSpec::new(3, 3, 64, 1),
    ],
    [
        InvertedResidualSpec::new(5, 6, 96, 2),
        InvertedResidualSpec::new(5, 6, 96, 1),
    ],
];

/// Names accepted by [`ModelConfig::preset`].
pub const PRESETS: [&str; 4] = ["seg", "seg-448", "cls", "micro"];

impl ModelConfig {
    /// Segmentation network at 512×512 with GME input and 150 classes.
    pub fn seg() -> Self {
        Self {
            schema: CONFIG_SCHEMA.to_string(),
            input_channels: 5,
            num_classes: 150,
            input_h: 512,
            input_w: 512,
            stem: StemSpec {
                kernel: 3,
                out_channels: 16,
                stride: 2,
                blocks: vec![InvertedResidualSpec::new(3, 1, 16, 1)],
            },
            tpem_stages: STAGES.iter().map(|s| s.to_vec()).collect(),
            pool_divisor: 64,
            trans_bdc: TransBdcConfig {
                num_blocks: 4,
                num_heads: 4,
                q_dim: 16,
                k_dim: 16,
                v_dim: 32,
                ffn_expansion: 2,
                ca_reduction: 4,
                vit: true,
                dw3x3: true,
                dw1x1: true,
                dwsep: true,
                channel_attention: true,
            },
            fmm_target_channels: 160,
            head: HeadKind::Seg,
            bn_eps: 1e-5,
            edge_threshold: None,
        }
    }

    pub fn seg_448() -> Self {
        Self {
            input_h: 448,
            input_w: 448,
            ..Self::seg()
        }
    }

    /// ImageNet classifier at 224×224. The bottleneck is taken at stride 32
    /// (7×7 tokens) because 224 is not a multiple of 64.
    pub fn cls() -> Self {
        Self {
            num_classes: 1000,
            input_h: 224,
            input_w: 224,
            pool_divisor: 32,
            head: HeadKind::Cls,
            ..Self::seg()
        }
    }

    /// 64×64 input, one bottleneck block, 8 classes. Small enough for
    /// finite-difference checks.
    pub fn micro() -> Self {
        let mut c = Self::seg();
        c.input_h = 64;
        c.input_w = 64;
        c.num_classes = 8;
        c.trans_bdc.num_blocks = 1;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "seg" => Ok(Self::seg()),
            "seg-448" => Ok(Self::seg_448()),
            "cls" => Ok(Self::cls()),
            "micro" => Ok(Self::micro()),
            other => Err(Error::Usage(format!(
                "unknown preset {other:?}, expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Usage(format!("config field {path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Loads a JSON file, or a preset when `path` is one of [`PRESETS`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Some(name) = path.to_str().filter(|p| PRESETS.contains(p)) {
            return Self::preset(name);
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn with_resolution(mut self, h: usize, w: usize) -> Result<Self> {
        self.input_h = h;
        self.input_w = w;
        self.validate()?;
        Ok(self)
    }

    /// Pyramid tap channels `[C(s1), ..., C(s4)]`.
    pub fn tap_channels(&self) -> Vec<usize> {
        self.tpem_stages
            .iter()
            .map(|s| s.last().map_or(0, |b| b.out_channels))
            .collect()
    }

    /// Bottleneck width: sum of the tap channels.
    pub fn bottleneck_channels(&self) -> usize {
        self.tap_channels().iter().sum()
    }

    /// Spatial size of every pyramid tap for the configured input.
    pub fn tap_sizes(&self) -> Vec<(usize, usize)> {
        let mut stride = self.stem.stride * self.stem.blocks.iter().map(|b| b.stride).product::<usize>();
        self.tpem_stages
            .iter()
            .map(|s| {
                stride *= s.iter().map(|b| b.stride).product::<usize>();
                (self.input_h / stride, self.input_w / stride)
            })
            .collect()
    }

    /// Token grid of the bottleneck.
    pub fn bottleneck_size(&self) -> (usize, usize) {
        (self.input_h / self.pool_divisor, self.input_w / self.pool_divisor)
    }

    /// Resolution of the FMM output at every tap: half of the tap.
    pub fn fmm_sizes(&self) -> Vec<(usize, usize)> {
        self.tap_sizes().into_iter().map(|(h, w)| (h / 2, w / 2)).collect()
    }

    pub fn total_stride(&self) -> usize {
        let stem = self.stem.stride * self.stem.blocks.iter().map(|b| b.stride).product::<usize>();
        stem * self.tpem_stages.iter().flatten().map(|b| b.stride).product::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| config_err::<()>(format!("{name}: {msg}"));
        if self.schema != CONFIG_SCHEMA {
            return field("schema", &format!("expected {CONFIG_SCHEMA:?}, got {:?}", self.schema));
        }
        if self.input_channels != 3 && self.input_channels != 5 {
            return field("input_channels", "must be 3 or 5");
        }
        if self.num_classes == 0 {
            return field("num_classes", "must be positive");
        }
        if self.stem.kernel == 0 || self.stem.stride == 0 || self.stem.out_channels == 0 {
            return field("stem", "kernel, out_channels and stride must be positive");
        }
        if self.tpem_stages.iter().any(|s| s.is_empty()) {
            return field("tpem_stages", "stages must not be empty");
        }
        if self.tpem_stages.is_empty() && (self.head != HeadKind::None || self.trans_bdc.num_blocks != 0) {
            return field(
                "tpem_stages",
                "only a head-less model without bottleneck blocks may omit the encoder",
            );
        }
        for (i, b) in self
            .stem
            .blocks
            .iter()
            .chain(self.tpem_stages.iter().flatten())
            .enumerate()
        {
            if b.kernel == 0 || b.kernel % 2 == 0 {
                return field(&format!("block {i}.kernel"), "must be odd");
            }
            if b.expand_ratio == 0 || b.out_channels == 0 || b.stride == 0 {
                return field(
                    &format!("block {i}"),
                    "expand_ratio, out_channels and stride must be positive",
                );
            }
        }
        let stride = self.total_stride();
        if !self.input_h.is_multiple_of(stride)
            || !self.input_w.is_multiple_of(stride)
            || self.input_h == 0
            || self.input_w == 0
        {
            return field(
                "input_h/input_w",
                &format!(
                    "{}x{} is not a positive multiple of the encoder stride {stride}",
                    self.input_h, self.input_w
                ),
            );
        }
        if !(self.bn_eps > 0.0) {
            return field("bn_eps", "must be positive");
        }
        if self.tpem_stages.is_empty() {
            return Ok(());
        }
        if self.pool_divisor == 0 {
            return field("pool_divisor", "must be positive");
        }
        let (bh, bw) = self.bottleneck_size();
        if bh == 0 || bw == 0 {
            return field("pool_divisor", "bottleneck would be empty");
        }
        let (th, tw) = *self.tap_sizes().last().expect("non-empty stages");
        if bh > th || bw > tw {
            return field("pool_divisor", "bottleneck cannot be finer than the last pyramid tap");
        }
        let t = &self.trans_bdc;
        if t.num_heads == 0 || t.q_dim == 0 || t.v_dim == 0 || t.ffn_expansion == 0 || t.ca_reduction == 0 {
            return field("trans_bdc", "dimensions must be positive");
        }
        if t.q_dim != t.k_dim {
            return field("trans_bdc.k_dim", "must equal q_dim");
        }
        if self.bottleneck_channels() / t.ca_reduction == 0 {
            return field("trans_bdc.ca_reduction", "reduces the bottleneck to zero channels");
        }
        if self.head == HeadKind::Seg {
            if self.fmm_target_channels == 0 {
                return field("fmm_target_channels", "must be positive");
            }
            if !self.input_h.is_multiple_of(self.pool_divisor) || !self.input_w.is_multiple_of(self.pool_divisor) {
                return field(
                    "input_h/input_w",
                    &format!("segmentation needs multiples of {}", self.pool_divisor),
                );
            }
            for (h, w) in self.tap_sizes() {
                if h % 2 != 0 || w % 2 != 0 {
                    return field("input_h/input_w", "every pyramid tap must have even size for the FMM");
                }
            }
            let (fh, fw) = *self.fmm_sizes().last().expect("non-empty stages");
            if bh > fh || bw > fw {
                return field(
                    "pool_divisor",
                    "bottleneck must not be finer than the coarsest FMM scale",
                );
            }
        }
        if let Some(t) = self.edge_threshold {
            if !(t >= 0.0) {
                return field("edge_threshold", "must be non-negative");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("huge").is_err());
    }

    #[test]
    fn seg_schedule_shapes() {
        let c = ModelConfig::seg();
        assert_eq!(c.tap_channels(), vec![16, 32, 64, 96]);
        assert_eq!(c.bottleneck_channels(), 208);
        assert_eq!(c.tap_sizes(), vec![(128, 128), (64, 64), (32, 32), (16, 16)]);
        assert_eq!(c.fmm_sizes(), vec![(64, 64), (32, 32), (16, 16), (8, 8)]);
        assert_eq!(c.bottleneck_size(), (8, 8));
        assert_eq!(ModelConfig::seg_448().bottleneck_size(), (7, 7));
        assert_eq!(ModelConfig::cls().bottleneck_size(), (7, 7));
    }

    #[test]
    fn json_round_trip() {
        let c = ModelConfig::cls();
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn violations_name_the_field() {
        let mut c = ModelConfig::seg();
        c.input_h = 500;
        assert!(c.validate().unwrap_err().to_string().contains("input_h"));
        let mut c = ModelConfig::seg();
        c.input_channels = 4;
        assert!(c.validate().unwrap_err().to_string().contains("input_channels"));
        let mut c = ModelConfig::seg();
        c.trans_bdc.k_dim = 8;
        assert!(c.validate().unwrap_err().to_string().contains("k_dim"));
        let bad = ModelConfig::seg().to_json().replace("cfkit_config_v1", "v0");
        assert!(ModelConfig::from_json(&bad).unwrap_err().to_string().contains("schema"));
    }
}
