//! Raw little-endian tensor blobs plus the one-line descriptor used in checkpoints.

use super::{Precision, Scalar, Tensor};
use crate::error::{Error, Result};

/// Sidecar record locating one tensor inside a container.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorDescriptor {
    pub name: String,
    pub shape: Vec<usize>,
    pub precision: Precision,
    pub offset: usize,
    pub nbytes: usize,
}

impl TensorDescriptor {
    /// `name shape=a,b,c precision=f32le offset=N bytes=M`
    pub fn to_line(&self) -> String {
        let shape: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        format!(
            "{} shape={} precision={} offset={} bytes={}",
            self.name,
            shape.join(","),
            self.precision.tag(),
            self.offset,
            self.nbytes
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::ConfigInvalid(format!("tensor descriptor `{line}`: {what}"));
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or_else(|| bad("empty"))?.to_string();
        let (mut shape, mut precision, mut offset, mut nbytes) = (None, None, None, None);
        for part in parts {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match k {
                "shape" => {
                    shape = Some(
                        v.split(',')
                            .map(|d| d.parse::<usize>().map_err(|_| bad("shape")))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "precision" => precision = Some(Precision::from_tag(v).ok_or_else(|| bad("precision"))?),
                "offset" => offset = Some(v.parse().map_err(|_| bad("offset"))?),
                "bytes" => nbytes = Some(v.parse().map_err(|_| bad("bytes"))?),
                _ => return Err(bad("unknown key")),
            }
        }
        Ok(Self {
            name,
            shape: shape.ok_or_else(|| bad("missing shape"))?,
            precision: precision.ok_or_else(|| bad("missing precision"))?,
            offset: offset.ok_or_else(|| bad("missing offset"))?,
            nbytes: nbytes.ok_or_else(|| bad("missing bytes"))?,
        })
    }
}

pub fn to_le_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.len() * T::PRECISION.bytes());
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn from_le_bytes<T: Scalar>(shape: &[usize], bytes: &[u8]) -> Result<Tensor<T>> {
    let width = T::PRECISION.bytes();
    let n: usize = shape.iter().product();
    if bytes.len() != n * width {
        return Err(Error::ShapeOverflow(format!(
            "shape {shape:?} needs {} bytes, blob has {}",
            n * width,
            bytes.len()
        )));
    }
    let data = bytes.chunks_exact(width).map(T::read_le).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_line_round_trip() {
        let d = TensorDescriptor {
            name: "stage0.mamba_s.in_proj".into(),
            shape: vec![16, 64],
            precision: Precision::Single,
            offset: 128,
            nbytes: 4096,
        };
        assert_eq!(TensorDescriptor::parse(&d.to_line()).unwrap(), d);
    }

    #[test]
    fn blob_is_bit_exact() {
        let t = Tensor::<f32>::new(vec![2, 2], vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25]).unwrap();
        let back: Tensor<f32> = from_le_bytes(t.shape(), &to_le_bytes(&t)).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
    }
}
