use serde::{Deserialize, Serialize};

use super::ModelError;

/// Largest channel count a block sequence may use.
pub const MAX_SEQUENCE_CHANNELS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSize {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for InputSize {
    fn default() -> Self {
        Self {
            height: 48,
            width: 48,
            channels: 1,
        }
    }
}

/// One run of bottleneck blocks sharing an output width (`t c n s` in the
/// architecture tables).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSequenceSpec {
    #[serde(alias = "t")]
    pub expansion: usize,
    #[serde(alias = "c")]
    pub channels: usize,
    #[serde(alias = "n")]
    pub length: usize,
    #[serde(alias = "s")]
    pub first_stride: usize,
}

impl BlockSequenceSpec {
    pub const fn new(expansion: usize, channels: usize, length: usize, first_stride: usize) -> Self {
        Self {
            expansion,
            channels,
            length,
            first_stride,
        }
    }
}

/// Declarative description of the adapted MobileNetV2 classifier:
/// stem conv → block sequences → last conv → head → classification layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    #[serde(default)]
    pub input_size: InputSize,
    pub stem_channels: usize,
    pub sequences: Vec<BlockSequenceSpec>,
    pub last_conv_channels: usize,
    /// Hidden dense units before the classifier; `0` selects a global-average-pool head.
    pub head_units: usize,
    pub num_classes: usize,
}

impl ArchitectureSpec {
    /// "Type 1": four sequences, dense-128 head.
    pub fn type1(num_classes: usize) -> Self {
        Self {
            input_size: InputSize::default(),
            stem_channels: 16,
            sequences: vec![
                BlockSequenceSpec::new(8, 64, 4, 2),
                BlockSequenceSpec::new(8, 64, 4, 2),
                BlockSequenceSpec::new(8, 64, 4, 2),
                BlockSequenceSpec::new(8, 96, 2, 2),
            ],
            last_conv_channels: 128,
            head_units: 128,
            num_classes,
        }
    }

    /// "Type 2": three sequences, global-average-pool head.
    pub fn type2(num_classes: usize) -> Self {
        Self {
            input_size: InputSize::default(),
            stem_channels: 24,
            sequences: vec![
                BlockSequenceSpec::new(4, 32, 7, 2),
                BlockSequenceSpec::new(4, 64, 8, 2),
                BlockSequenceSpec::new(4, 96, 4, 2),
            ],
            last_conv_channels: 128,
            head_units: 0,
            num_classes,
        }
    }

    pub fn with_head_units(mut self, units: usize) -> Self {
        self.head_units = units;
        self
    }

    pub fn uses_global_pool(&self) -> bool {
        self.head_units == 0
    }

    /// Spatial size `(h, w)` after each sequence; same padding gives `ceil(in / stride)`.
    pub fn spatial_trail(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.input_size.height, self.input_size.width);
        self.sequences
            .iter()
            .map(|s| {
                h = h.div_ceil(s.first_stride.max(1));
                w = w.div_ceil(s.first_stride.max(1));
                (h, w)
            })
            .collect()
    }

    pub fn final_spatial(&self) -> (usize, usize) {
        self.spatial_trail()
            .last()
            .copied()
            .unwrap_or((self.input_size.height, self.input_size.width))
    }

    /// Width of the feature vector entering the classification layer.
    pub fn feature_width(&self) -> usize {
        if self.uses_global_pool() {
            self.last_conv_channels
        } else {
            self.head_units
        }
    }

    pub fn residual_block_count(&self) -> usize {
        let mut in_c = self.stem_channels;
        let mut count = 0;
        for seq in &self.sequences {
            for j in 0..seq.length {
                let stride = if j == 0 { seq.first_stride } else { 1 };
                if stride == 1 && in_c == seq.channels {
                    count += 1;
                }
                in_c = seq.channels;
            }
        }
        count
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |msg: String| Err(ModelError::InvalidSpec(msg));
        let i = self.input_size;
        if i.height == 0 || i.width == 0 || i.channels == 0 {
            return invalid(format!("input size {}×{}×{} has a zero dimension", i.height, i.width, i.channels));
        }
        if self.stem_channels == 0 || self.last_conv_channels == 0 || self.num_classes == 0 {
            return invalid("stem, last conv and class counts must be positive".into());
        }
        let mut prev = 0;
        // real-valued spatial extent: every stride-2 sequence halves it
        let (mut h, mut w) = (i.height as f64, i.width as f64);
        for (idx, seq) in self.sequences.iter().enumerate() {
            if seq.expansion == 0 || seq.length == 0 || seq.channels == 0 {
                return invalid(format!("sequence {idx}: t, c and n must be positive"));
            }
            if !matches!(seq.first_stride, 1 | 2) {
                return invalid(format!("sequence {idx}: stride {} not in {{1, 2}}", seq.first_stride));
            }
            if seq.channels > MAX_SEQUENCE_CHANNELS {
                return invalid(format!(
                    "sequence {idx}: {} channels exceeds {MAX_SEQUENCE_CHANNELS}",
                    seq.channels
                ));
            }
            if seq.channels < prev {
                return invalid(format!(
                    "sequence {idx}: channels decrease from {prev} to {}",
                    seq.channels
                ));
            }
            prev = seq.channels;
            h /= seq.first_stride as f64;
            w /= seq.first_stride as f64;
            if h < 1.0 || w < 1.0 {
                return Err(ModelError::SpatialUnderflow {
                    sequence: idx,
                    height: h,
                    width: w,
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| ModelError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Three conv/pool stages and a dense hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeNetSpec {
    #[serde(default)]
    pub input_size: InputSize,
    pub conv_channels: Vec<usize>,
    pub hidden_units: usize,
    pub num_classes: usize,
}

impl LeNetSpec {
    /// Channel plan 32/64/128 with a 128-unit hidden layer.
    pub fn baseline(num_classes: usize) -> Self {
        Self {
            input_size: InputSize::default(),
            conv_channels: vec![32, 64, 128],
            hidden_units: 128,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(ModelError::InvalidSpec("LeNet needs positive conv channel counts".into()));
        }
        if self.hidden_units == 0 || self.num_classes == 0 {
            return Err(ModelError::InvalidSpec("LeNet hidden and class counts must be positive".into()));
        }
        let (mut h, mut w) = (self.input_size.height, self.input_size.width);
        for idx in 0..self.conv_channels.len() {
            if h < 2 || w < 2 {
                return Err(ModelError::SpatialUnderflow {
                    sequence: idx,
                    height: h as f64 / 2.0,
                    width: w as f64 / 2.0,
                });
            }
            h /= 2;
            w /= 2;
        }
        Ok(())
    }
}

/// Any architecture this crate can build and checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    MobileNet(ArchitectureSpec),
    LeNet(LeNetSpec),
}

impl ModelSpec {
    pub fn num_classes(&self) -> usize {
        match self {
            ModelSpec::MobileNet(s) => s.num_classes,
            ModelSpec::LeNet(s) => s.num_classes,
        }
    }

    pub fn input_size(&self) -> InputSize {
        match self {
            ModelSpec::MobileNet(s) => s.input_size,
            ModelSpec::LeNet(s) => s.input_size,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::MobileNet(s) => s.validate(),
            ModelSpec::LeNet(s) => s.validate(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::MobileNet(_) => "mobilenet_v2",
            ModelSpec::LeNet(_) => "lenet",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Parses either spec family from JSON and validates it.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| ModelError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ArchitectureSpec> for ModelSpec {
    fn from(s: ArchitectureSpec) -> Self {
        ModelSpec::MobileNet(s)
    }
}

impl From<LeNetSpec> for ModelSpec {
    fn from(s: LeNetSpec) -> Self {
        ModelSpec::LeNet(s)
    }
}
