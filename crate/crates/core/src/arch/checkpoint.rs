use std::fs;
use std::io::Write;
use std::path::Path;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::serial::{from_le_bytes, to_le_bytes, TensorDescriptor};
use crate::tensor::{Precision, Scalar, Tensor};

/// File magic, including the format version byte.
pub const MAGIC: &[u8; 6] = b"CECTM\x01";

/// Model configuration, parameters and free-form metadata in one file.
///
/// Layout: magic, manifest length (`u64` LE), UTF-8 manifest, then the tensor blobs.
/// The manifest holds `config key=value` lines, `meta key=value` lines, a
/// `tensors <count>` line and one descriptor per tensor with offsets relative to
/// the start of the blob section.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub meta: Vec<(String, String)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(config: ModelConfig, params: ParamStore<T>) -> Self {
        Self {
            config,
            params,
            meta: Vec::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut manifest = String::new();
        for (k, v) in self.config.to_pairs() {
            manifest.push_str(&format!("config {k}={v}\n"));
        }
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta {k}={v}\n"));
        }
        manifest.push_str(&format!("tensors {}\n", self.params.len()));
        let mut blobs = Vec::new();
        for (name, t) in self.params.iter() {
            let bytes = to_le_bytes(t);
            let desc = TensorDescriptor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                precision: T::PRECISION,
                offset: blobs.len(),
                nbytes: bytes.len(),
            };
            manifest.push_str(&desc.to_line());
            manifest.push('\n');
            blobs.extend_from_slice(&bytes);
        }
        let mut file = fs::File::create(path)?;
        file.write_all(MAGIC)?;
        file.write_all(&(manifest.len() as u64).to_le_bytes())?;
        file.write_all(manifest.as_bytes())?;
        file.write_all(&blobs)?;
        file.flush()?;
        Ok(())
    }

    /// Reads a checkpoint, converting stored tensors to `T` when the precision differs.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let malformed = |detail: String| Error::Malformed {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic(path.to_path_buf()));
        }
        let len = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
        let body = &bytes[14..];
        if len > body.len() {
            return Err(Error::ShapeOverflow(format!("manifest of {len} bytes in a {}-byte body", body.len())));
        }
        let manifest = std::str::from_utf8(&body[..len]).map_err(|e| malformed(e.to_string()))?;
        let blobs = &body[len..];
        let mut config = ModelConfig::desk();
        let mut meta = Vec::new();
        let mut params = ParamStore::new();
        let mut declared = None;
        for line in manifest.lines() {
            let (tag, rest) = line.split_once(' ').ok_or_else(|| malformed(format!("line `{line}`")))?;
            match tag {
                "config" => {
                    let (k, v) = rest.split_once('=').ok_or_else(|| malformed(format!("line `{line}`")))?;
                    if !config.set(k, v)? {
                        return Err(malformed(format!("unknown config key `{k}`")));
                    }
                }
                "meta" => {
                    let (k, v) = rest.split_once('=').ok_or_else(|| malformed(format!("line `{line}`")))?;
                    meta.push((k.to_string(), v.to_string()));
                }
                "tensors" => declared = Some(rest.parse::<usize>().map_err(|e| malformed(e.to_string()))?),
                _ => {
                    let desc = TensorDescriptor::parse(line)?;
                    let end = desc.offset.checked_add(desc.nbytes).filter(|&e| e <= blobs.len());
                    let Some(end) = end else {
                        return Err(Error::ShapeOverflow(format!(
                            "tensor {} at {}+{} exceeds {} blob bytes",
                            desc.name,
                            desc.offset,
                            desc.nbytes,
                            blobs.len()
                        )));
                    };
                    let raw = &blobs[desc.offset..end];
                    let t: Tensor<T> = match desc.precision {
                        Precision::Single => from_le_bytes::<f32>(&desc.shape, raw)?.cast(),
                        Precision::Double => from_le_bytes::<f64>(&desc.shape, raw)?.cast(),
                    };
                    params.insert(desc.name, t)?;
                }
            }
        }
        if declared != Some(params.len()) {
            return Err(malformed(format!("declared {declared:?} tensors, found {}", params.len())));
        }
        config.validate()?;
        Ok(Self { config, params, meta })
    }
}
