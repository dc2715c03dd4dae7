use std::fs;
use std::io::Write;
use std::path::Path;

use super::{MultiPhaseSample, PHASES};
use crate::error::{Error, Result};
use crate::tensor::serial::{from_le_bytes, to_le_bytes};
use crate::tensor::Precision;

/// First line of every `.mpv` file.
pub const MPV_MAGIC: &[u8; 5] = b"MPV1\n";

const END: &str = "end";

/// Write `sample` as a text descriptor followed by three `f32le` blobs (A, V, D),
/// each in `(depth, height, width)` row-major order.
///
/// ```text
/// MPV1
/// shape 8 16 16
/// spacing 2.5 0.8 0.8
/// phases A V D
/// label 1
/// precision f32le
/// id 0007
/// seed 1234
/// bytes 24576
/// end
/// ```
pub fn write_volume(sample: &MultiPhaseSample, path: &Path) -> Result<()> {
    let [d, h, w] = sample.shape();
    if sample.volumes.iter().any(|v| v.shape() != [d, h, w]) {
        return Err(crate::error::shape_err("write_volume", "phase volumes differ in shape"));
    }
    if sample.id.chars().any(char::is_whitespace) {
        return Err(Error::ConfigInvalid(format!("sample id `{}` contains whitespace", sample.id)));
    }
    let [sd, sh, sw] = sample.spacing;
    let nbytes = 3 * d * h * w * Precision::Single.bytes();
    let header = format!(
        "shape {d} {h} {w}\nspacing {sd} {sh} {sw}\nphases {}\nlabel {}\nprecision {}\nid {}\nseed {}\nbytes {nbytes}\n{END}\n",
        PHASES.join(" "),
        sample.label,
        Precision::Single.tag(),
        sample.id,
        sample.seed,
    );
    let mut buf = Vec::with_capacity(MPV_MAGIC.len() + header.len() + nbytes);
    buf.extend_from_slice(MPV_MAGIC);
    buf.extend_from_slice(header.as_bytes());
    for v in &sample.volumes {
        buf.extend_from_slice(&to_le_bytes(v));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    file.flush()?;
    Ok(())
}

/// Read a `.mpv` file. Nothing is returned unless the whole payload is present.
pub fn read_volume(path: &Path) -> Result<MultiPhaseSample> {
    let bytes = fs::read(path)?;
    if bytes.len() < MPV_MAGIC.len() || &bytes[..MPV_MAGIC.len()] != MPV_MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let malformed = |detail: String| Error::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    let mut pos = MPV_MAGIC.len();
    let mut fields: Vec<(String, String)> = Vec::new();
    loop {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(Error::ShapeOverflow(format!(
                "descriptor runs past the end of {}",
                path.display()
            )));
        };
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|e| malformed(e.to_string()))?;
        pos += nl + 1;
        if line == END {
            break;
        }
        let (k, v) = line.split_once(' ').ok_or_else(|| malformed(format!("line `{line}`")))?;
        fields.push((k.to_string(), v.to_string()));
    }
    let field = |key: &str| {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| malformed(format!("missing `{key}`")))
    };
    let nums = |key: &str| -> Result<Vec<f64>> {
        field(key)?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| malformed(format!("bad `{key}`"))))
            .collect()
    };
    let shape: Vec<usize> = field("shape")?
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| malformed("bad `shape`".into())))
        .collect::<Result<_>>()?;
    let spacing = nums("spacing")?;
    if shape.len() != 3 || spacing.len() != 3 {
        return Err(malformed("shape and spacing need three values".into()));
    }
    if field("phases")?.split_whitespace().ne(PHASES) {
        return Err(malformed(format!("phases `{}`", field("phases")?)));
    }
    if field("precision")? != Precision::Single.tag() {
        return Err(malformed(format!("precision `{}`", field("precision")?)));
    }
    let label: u8 = field("label")?.parse().map_err(|_| malformed("bad `label`".into()))?;
    if label > 1 {
        return Err(malformed(format!("label {label}")));
    }
    let seed: u64 = field("seed")?.parse().map_err(|_| malformed("bad `seed`".into()))?;
    let nbytes: usize = field("bytes")?.parse().map_err(|_| malformed("bad `bytes`".into()))?;
    let voxels = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|v| v.checked_mul(3 * Precision::Single.bytes()));
    if voxels != Some(nbytes) {
        return Err(Error::ShapeOverflow(format!("shape {shape:?} disagrees with {nbytes} declared bytes")));
    }
    let payload = &bytes[pos..];
    if payload.len() != nbytes {
        return Err(Error::ShapeOverflow(format!(
            "{} declares {nbytes} payload bytes, file has {}",
            path.display(),
            payload.len()
        )));
    }
    let per = nbytes / 3;
    let read = |p: usize| from_le_bytes::<f32>(&shape, &payload[p * per..(p + 1) * per]);
    Ok(MultiPhaseSample {
        volumes: [read(0)?, read(1)?, read(2)?],
        label,
        spacing: [spacing[0], spacing[1], spacing[2]],
        id: field("id")?.to_string(),
        seed,
    })
}
