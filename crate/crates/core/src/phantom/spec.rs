use std::fmt;
use std::str::FromStr;

use crate::arch::{parse, parse_triple};
use crate::error::{Error, Result};

/// Generator parameters. Intensities are in background units (background level 1).
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    /// `(depth, height, width)`.
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    /// Ellipsoid semi-axis range in voxels.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Peak amplitude of the low-frequency background texture.
    pub texture_amplitude: f64,
    /// Lesion intensity per phase (A, V, D) for class 0 and class 1.
    pub curves: [[f64; 3]; 2],
    /// Rotate each sample's curve by a random cyclic shift of the phases.
    pub cyclic_curves: bool,
    pub noise_sigma: f64,
    /// Class-0 samples per class-1 sample.
    pub class_ratio: f64,
}

/// Named starting points for [`PhantomSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Hypo-enhancing versus hyper-enhancing-with-washout curves.
    Default,
    /// Both classes share the same contrast values, in opposite cyclic order.
    TemporalOnly,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::TemporalOnly => "temporal-only",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Preset::Default),
            "temporal-only" | "temporal_only" => Ok(Preset::TemporalOnly),
            _ => Err(Error::ConfigInvalid(format!("unknown preset `{s}`"))),
        }
    }
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::preset(Preset::Default)
    }
}

impl PhantomSpec {
    pub fn preset(preset: Preset) -> Self {
        let base = Self {
            shape: [8, 16, 16],
            spacing: [2.5, 0.8, 0.8],
            radius_min: 2.0,
            radius_max: 3.5,
            texture_amplitude: 0.15,
            curves: [[0.55, 0.70, 0.80], [1.60, 1.15, 0.90]],
            cyclic_curves: false,
            noise_sigma: 0.05,
            class_ratio: 2.0,
        };
        match preset {
            Preset::Default => base,
            Preset::TemporalOnly => Self {
                curves: [[0.55, 1.10, 1.60], [1.60, 1.10, 0.55]],
                cyclic_curves: true,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.shape.contains(&0) {
            return bad(format!("phantom shape {:?} has an empty axis", self.shape));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return bad(format!("radius range [{}, {}] is empty", self.radius_min, self.radius_max));
        }
        let smallest = *self.shape.iter().min().expect("three axes") as f64;
        if 2.0 * self.radius_max >= smallest {
            return bad(format!(
                "radius_max {} does not fit inside shape {:?}",
                self.radius_max, self.shape
            ));
        }
        if self.curves[0] == self.curves[1] {
            return bad("class curves must differ".into());
        }
        if self.noise_sigma < 0.0 || self.texture_amplitude < 0.0 || self.spacing.iter().any(|&s| s <= 0.0) {
            return bad("noise, texture and spacing must be non-negative (spacing positive)".into());
        }
        if !(self.class_ratio > 0.0 && self.class_ratio.is_finite()) {
            return bad(format!("class_ratio must be positive, got {}", self.class_ratio));
        }
        Ok(())
    }

    /// `(class 0, class 1)` counts for `n` samples: `⌊n / (ratio + 1)⌋` of class 1.
    pub fn class_counts(&self, n: usize) -> (usize, usize) {
        let ones = (n as f64 / (self.class_ratio + 1.0)).floor() as usize;
        (n - ones, ones)
    }

    pub const KEYS: [&'static str; 10] = [
        "shape",
        "spacing",
        "radius_min",
        "radius_max",
        "texture_amplitude",
        "curve0",
        "curve1",
        "cyclic_curves",
        "noise_sigma",
        "class_ratio",
    ];

    /// Set one field from its text form. Returns `Ok(false)` when `key` is not a phantom key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "shape" => self.shape = parse_triple(key, v)?,
            "spacing" => self.spacing = parse_floats(key, v)?,
            "radius_min" => self.radius_min = parse(key, v)?,
            "radius_max" => self.radius_max = parse(key, v)?,
            "texture_amplitude" => self.texture_amplitude = parse(key, v)?,
            "curve0" => self.curves[0] = parse_floats(key, v)?,
            "curve1" => self.curves[1] = parse_floats(key, v)?,
            "cyclic_curves" => self.cyclic_curves = parse(key, v)?,
            "noise_sigma" => self.noise_sigma = parse(key, v)?,
            "class_ratio" => self.class_ratio = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let [d, h, w] = self.shape;
        let join = |v: &[f64; 3]| v.map(|x| x.to_string()).join(",");
        vec![
            ("shape", format!("{d}x{h}x{w}")),
            ("spacing", join(&self.spacing)),
            ("radius_min", self.radius_min.to_string()),
            ("radius_max", self.radius_max.to_string()),
            ("texture_amplitude", self.texture_amplitude.to_string()),
            ("curve0", join(&self.curves[0])),
            ("curve1", join(&self.curves[1])),
            ("cyclic_curves", self.cyclic_curves.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("class_ratio", self.class_ratio.to_string()),
        ]
    }
}

fn parse_floats(key: &str, v: &str) -> Result<[f64; 3]> {
    let parts = v
        .split(',')
        .map(|p| parse::<f64>(key, p.trim()))
        .collect::<Result<Vec<_>>>()?;
    parts
        .try_into()
        .map_err(|_| Error::ConfigInvalid(format!("`{key}` needs three values, got `{v}`")))
}
