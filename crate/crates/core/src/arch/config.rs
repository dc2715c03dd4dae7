use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ssm::{ScanMode, SsmConfig};
use crate::tensor::Conv3dSpec;

/// Which sub-modules are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Components {
    pub sci: bool,
    pub spatial: bool,
    pub temporal: bool,
    pub simr: bool,
    pub mgf: bool,
}

/// The ablation ladder, each rung adding one component to the previous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Stem and the four downsampling blocks only.
    Basic,
    /// + SCI.
    C1,
    /// + spatial branch.
    C2,
    /// + temporal branch.
    C3,
    /// + similarity-guided refinement.
    C4,
    /// + multi-granularity fusion.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Basic,
        Variant::C1,
        Variant::C2,
        Variant::C3,
        Variant::C4,
        Variant::Full,
    ];

    pub fn components(self) -> Components {
        let rung = self as u8;
        Components {
            sci: rung >= 1,
            spatial: rung >= 2,
            temporal: rung >= 3,
            simr: rung >= 4,
            mgf: rung >= 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Basic => "basic",
            Variant::C1 => "c1",
            Variant::C2 => "c2",
            Variant::C3 => "c3",
            Variant::C4 => "c4",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown variant `{s}`")))
    }
}

/// Network hyperparameters. Volumes are `(depth, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub roi_shape: [usize; 3],
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub stem_kernel: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
    pub mlp_ratio: usize,
    pub heads: usize,
    pub unified_dim: usize,
    pub mask_rate: f64,
    pub num_classes: usize,
    pub seed: u64,
    pub scan: ScanMode,
    pub bidirectional: bool,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 16×16×8 ROI, sized to train on a CPU in minutes.
    pub fn desk() -> Self {
        Self {
            roi_shape: [8, 16, 16],
            stem_channels: 16,
            stage_channels: [32, 64, 128, 256],
            stem_kernel: 7,
            d_state: 16,
            d_conv: 4,
            expand: 2,
            mlp_ratio: 2,
            heads: 4,
            unified_dim: 128,
            mask_rate: 0.5,
            num_classes: 2,
            seed: 0,
            scan: ScanMode::Sequential,
            bidirectional: false,
            variant: Variant::Full,
        }
    }

    /// Full-resolution 128×128×32 ROI.
    pub fn paper_scale() -> Self {
        Self {
            roi_shape: [32, 128, 128],
            ..Self::desk()
        }
    }

    pub fn components(&self) -> Components {
        self.variant.components()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.stem_channels == 0 || self.stage_channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.stem_kernel.is_multiple_of(2) {
            return bad(format!("stem_kernel must be odd, got {}", self.stem_kernel));
        }
        if self.num_classes != 2 {
            return bad(format!("num_classes must be 2, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return bad(format!("mask_rate must lie in [0, 1), got {}", self.mask_rate));
        }
        if self.d_state == 0 || self.d_conv == 0 || self.expand == 0 || self.mlp_ratio == 0 {
            return bad("d_state, d_conv, expand and mlp_ratio must be positive".into());
        }
        if self.heads == 0 {
            return bad("heads must be positive".into());
        }
        for (what, dim) in [
            ("unified_dim", self.unified_dim),
            ("stage_channels[2]", self.stage_channels[2]),
            ("stage_channels[3]", self.stage_channels[3]),
        ] {
            if dim % self.heads != 0 {
                return bad(format!("{what} = {dim} is not divisible by heads = {}", self.heads));
            }
        }
        let mut dims = self.roi_shape;
        if dims.contains(&0) {
            return bad(format!("roi_shape {:?} has an empty axis", dims));
        }
        for stage in 0..4 {
            let s = Self::stride_for(dims);
            for a in 0..3 {
                if !dims[a].is_multiple_of(s[a]) {
                    return bad(format!(
                        "roi_shape {:?}: axis {a} has odd extent {} before downsample {}",
                        self.roi_shape,
                        dims[a],
                        stage + 1
                    ));
                }
                dims[a] /= s[a];
            }
        }
        Ok(())
    }

    /// Depth halves only while it exceeds 2; height and width always halve.
    fn stride_for(dims: [usize; 3]) -> [usize; 3] {
        [if dims[0] > 2 { 2 } else { 1 }, 2, 2]
    }

    /// Convolution geometry of downsample `stage` (0-based).
    pub fn downsample_spec(&self, stage: usize) -> Conv3dSpec {
        let s = Self::stride_for(self.level_dims(stage));
        Conv3dSpec {
            kernel: s,
            stride: s,
            padding: [0; 3],
            groups: 1,
        }
    }

    /// Spatial extent of level `l` (0 = stem output, 4 = deepest).
    pub fn level_dims(&self, l: usize) -> [usize; 3] {
        let mut dims = self.roi_shape;
        for _ in 0..l {
            let s = Self::stride_for(dims);
            for a in 0..3 {
                dims[a] /= s[a];
            }
        }
        dims
    }

    /// Channel count of level `l` (0 = stem output).
    pub fn level_channels(&self, l: usize) -> usize {
        if l == 0 {
            self.stem_channels
        } else {
            self.stage_channels[l - 1]
        }
    }

    /// Mamba configuration for a sequence of `d_model`-wide tokens.
    pub fn ssm(&self, d_model: usize) -> SsmConfig {
        SsmConfig {
            d_model,
            d_state: self.d_state,
            d_conv: self.d_conv,
            expand: self.expand,
            scan: self.scan,
            bidirectional: self.bidirectional,
        }
    }

    /// Width of the vector the classification head reads.
    pub fn head_dim(&self) -> usize {
        if self.components().mgf {
            self.unified_dim
        } else {
            self.stage_channels[3]
        }
    }

    pub const KEYS: [&'static str; 16] = [
        "roi_shape",
        "stem_channels",
        "stage_channels",
        "stem_kernel",
        "d_state",
        "d_conv",
        "expand",
        "mlp_ratio",
        "heads",
        "unified_dim",
        "mask_rate",
        "num_classes",
        "seed",
        "scan",
        "bidirectional",
        "variant",
    ];

    /// Set one field from its text form. Returns `Ok(false)` when `key` is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "roi_shape" => self.roi_shape = parse_triple(key, v)?,
            "stem_channels" => self.stem_channels = parse(key, v)?,
            "stage_channels" => {
                let parts: Vec<usize> = parse_list(key, v, ',')?;
                self.stage_channels = parts
                    .try_into()
                    .map_err(|_| Error::ConfigInvalid(format!("stage_channels needs 4 values, got `{v}`")))?;
            }
            "stem_kernel" => self.stem_kernel = parse(key, v)?,
            "d_state" => self.d_state = parse(key, v)?,
            "d_conv" => self.d_conv = parse(key, v)?,
            "expand" => self.expand = parse(key, v)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "unified_dim" => self.unified_dim = parse(key, v)?,
            "mask_rate" => self.mask_rate = parse(key, v)?,
            "num_classes" => self.num_classes = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "scan" => {
                self.scan = match v {
                    "sequential" => ScanMode::Sequential,
                    "parallel" => ScanMode::Parallel,
                    _ => return Err(Error::ConfigInvalid(format!("scan must be sequential|parallel, got `{v}`"))),
                }
            }
            "bidirectional" => self.bidirectional = parse(key, v)?,
            "variant" => self.variant = v.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every field as `(key, value)` in [`KEYS`](Self::KEYS) order; [`set`](Self::set) reads these back.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let [d, h, w] = self.roi_shape;
        let ch = self.stage_channels.map(|c| c.to_string()).join(",");
        vec![
            ("roi_shape", format!("{d}x{h}x{w}")),
            ("stem_channels", self.stem_channels.to_string()),
            ("stage_channels", ch),
            ("stem_kernel", self.stem_kernel.to_string()),
            ("d_state", self.d_state.to_string()),
            ("d_conv", self.d_conv.to_string()),
            ("expand", self.expand.to_string()),
            ("mlp_ratio", self.mlp_ratio.to_string()),
            ("heads", self.heads.to_string()),
            ("unified_dim", self.unified_dim.to_string()),
            ("mask_rate", self.mask_rate.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("seed", self.seed.to_string()),
            (
                "scan",
                match self.scan {
                    ScanMode::Sequential => "sequential",
                    ScanMode::Parallel => "parallel",
                }
                .to_string(),
            ),
            ("bidirectional", self.bidirectional.to_string()),
            ("variant", self.variant.to_string()),
        ]
    }
}

pub(crate) fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::ConfigInvalid(format!("bad value `{v}` for `{key}`")))
}

pub(crate) fn parse_list<V: FromStr>(key: &str, v: &str, sep: char) -> Result<Vec<V>> {
    v.split(sep).map(|p| parse(key, p.trim())).collect()
}

/// `DxHxW` (also accepts commas).
pub(crate) fn parse_triple(key: &str, v: &str) -> Result<[usize; 3]> {
    let sep = if v.contains('x') { 'x' } else { ',' };
    parse_list(key, v, sep)?
        .try_into()
        .map_err(|_| Error::ConfigInvalid(format!("`{key}` needs three extents, got `{v}`")))
}
