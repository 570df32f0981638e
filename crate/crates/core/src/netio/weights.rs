//! Binary weight container.
//!
//! Layout, all integers big-endian:
//!
//! ```text
//! magic "XBNW" | version u16 | layer count u32
//! per layer: layer index u32 | kind u8 (0 conv, 1 fc) | bits u8 (1 = binary)
//!            | inputs u32 | outputs u32 | payload
//! crc32 of everything above, u32
//! ```
//!
//! A binary payload stores each output's row as `ceil(inputs / 8)` bytes,
//! least significant bit first. A quantised payload stores `outputs * inputs`
//! signed bytes, row by row. Convolution rows are kernels in `[c][r][col]`
//! order; FC rows follow the flattened `[c][y][x]` input.

use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bincore::BinaryTensor;
use crate::error::{Error, Result};
use crate::netio::topology::{LayerKind, NetworkSpec, Precision};

pub const MAGIC: [u8; 4] = *b"XBNW";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerWeights {
    Binary(Vec<BinaryTensor>),
    Quantized { bits: u8, values: Vec<i8> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightLayer {
    /// Position in `NetworkSpec::layers`.
    pub layer: usize,
    pub conv: bool,
    pub inputs: usize,
    pub outputs: usize,
    pub weights: LayerWeights,
}

impl WeightLayer {
    pub fn precision(&self) -> Precision {
        match self.weights {
            LayerWeights::Binary(_) => Precision::Binary,
            LayerWeights::Quantized { bits, .. } => Precision::Quantized { bits },
        }
    }

    pub fn binary_rows(&self) -> Option<&[BinaryTensor]> {
        match &self.weights {
            LayerWeights::Binary(rows) => Some(rows),
            LayerWeights::Quantized { .. } => None,
        }
    }

    /// Row `j` of a quantised layer.
    pub fn quantized_row(&self, j: usize) -> Option<&[i8]> {
        match &self.weights {
            LayerWeights::Quantized { values, .. } => Some(&values[j * self.inputs..(j + 1) * self.inputs]),
            LayerWeights::Binary(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WeightContainer {
    pub layers: Vec<WeightLayer>,
}

fn lerr(layer: usize, message: impl Into<String>) -> Error {
    Error::Layer {
        layer,
        message: message.into(),
    }
}

impl WeightContainer {
    /// Seeded random weights for every weight layer of `net`.
    pub fn random(net: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = net
            .weight_layers()
            .map(|(i, l)| {
                let (inputs, outputs) = (l.fan_in(), l.outputs());
                let weights = match l.precision {
                    Some(Precision::Quantized { bits }) => {
                        let max = (1i16 << (bits.min(8) - 1)) - 1;
                        LayerWeights::Quantized {
                            bits,
                            values: (0..inputs * outputs)
                                .map(|_| rng.random_range(-max..=max) as i8)
                                .collect(),
                        }
                    }
                    _ => LayerWeights::Binary((0..outputs).map(|_| BinaryTensor::random(&[inputs], &mut rng)).collect()),
                };
                WeightLayer {
                    layer: i,
                    conv: matches!(l.kind, LayerKind::Conv { .. }),
                    inputs,
                    outputs,
                    weights,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layer(&self, index: usize) -> Option<&WeightLayer> {
        self.layers.iter().find(|l| l.layer == index)
    }

    /// Checks that every weight layer of `net` has weights of the right shape.
    pub fn validate(&self, net: &NetworkSpec) -> Result<()> {
        for (i, l) in net.weight_layers() {
            let w = self.layer(i).ok_or_else(|| lerr(i, format!("missing weights for {l}")))?;
            if w.conv != matches!(l.kind, LayerKind::Conv { .. }) {
                return Err(lerr(i, "layer kind differs from topology"));
            }
            if (w.inputs, w.outputs) != (l.fan_in(), l.outputs()) {
                return Err(lerr(
                    i,
                    format!(
                        "weights are {}x{}, topology needs {}x{}",
                        w.outputs,
                        w.inputs,
                        l.outputs(),
                        l.fan_in()
                    ),
                ));
            }
            if Some(w.precision()) != l.precision {
                return Err(lerr(i, format!("weights are {:?}, topology needs {:?}", w.precision(), l.precision)));
            }
        }
        if let Some(extra) = self.layers.iter().find(|w| !net.layers.get(w.layer).is_some_and(|l| l.is_weight_layer())) {
            return Err(lerr(extra.layer, "weights for a layer without weights"));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.write_u16::<BigEndian>(VERSION).expect("write to Vec");
        out.write_u32::<BigEndian>(self.layers.len() as u32).expect("write to Vec");
        for l in &self.layers {
            out.write_u32::<BigEndian>(l.layer as u32).expect("write to Vec");
            out.push(u8::from(!l.conv));
            out.push(match l.weights {
                LayerWeights::Binary(_) => 1,
                LayerWeights::Quantized { bits, .. } => bits,
            });
            out.write_u32::<BigEndian>(l.inputs as u32).expect("write to Vec");
            out.write_u32::<BigEndian>(l.outputs as u32).expect("write to Vec");
            match &l.weights {
                LayerWeights::Binary(rows) => {
                    for row in rows {
                        let mut bytes = vec![0u8; row.len().div_ceil(8)];
                        for (i, b) in row.iter().enumerate() {
                            bytes[i / 8] |= u8::from(b) << (i % 8);
                        }
                        out.extend_from_slice(&bytes);
                    }
                }
                LayerWeights::Quantized { values, .. } => out.extend(values.iter().map(|&v| v as u8)),
            }
        }
        let crc = crc32fast::hash(&out);
        out.write_u32::<BigEndian>(crc).expect("write to Vec");
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let ferr = |offset: u64, message: String| Error::Format {
            path: path.to_path_buf(),
            offset,
            message,
        };
        if bytes.len() < 14 {
            return Err(ferr(bytes.len() as u64, "truncated weight container".into()));
        }
        if bytes[..4] != MAGIC {
            return Err(ferr(0, format!("bad magic {:02x?}", &bytes[..4])));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_be_bytes(tail.try_into().expect("4 bytes"));
        let crc = crc32fast::hash(body);
        if crc != stored {
            return Err(ferr(body.len() as u64, format!("checksum mismatch: stored {stored:08x}, computed {crc:08x}")));
        }
        let mut cur = Cursor::new(body);
        cur.set_position(4);
        let truncated = |cur: &Cursor<&[u8]>| ferr(cur.position(), "truncated weight container".into());
        let version = cur.read_u16::<BigEndian>().map_err(|_| truncated(&cur))?;
        if version != VERSION {
            return Err(ferr(4, format!("unsupported version {version}")));
        }
        let count = cur.read_u32::<BigEndian>().map_err(|_| truncated(&cur))?;
        let mut layers = Vec::new();
        for _ in 0..count {
            let at = cur.position();
            let mut head = [0u8; 14];
            cur.read_exact(&mut head).map_err(|_| truncated(&cur))?;
            let mut h = Cursor::new(&head[..]);
            let layer = h.read_u32::<BigEndian>().expect("in buffer") as usize;
            let kind = h.read_u8().expect("in buffer");
            let bits = h.read_u8().expect("in buffer");
            let inputs = h.read_u32::<BigEndian>().expect("in buffer") as usize;
            let outputs = h.read_u32::<BigEndian>().expect("in buffer") as usize;
            if kind > 1 {
                return Err(ferr(at + 4, format!("unknown layer kind {kind}")));
            }
            if bits == 0 || bits > 8 {
                return Err(ferr(at + 5, format!("unsupported weight width {bits}")));
            }
            let weights = if bits == 1 {
                let row_bytes = inputs.div_ceil(8);
                let mut rows = Vec::with_capacity(outputs);
                for _ in 0..outputs {
                    let mut buf = vec![0u8; row_bytes];
                    cur.read_exact(&mut buf).map_err(|_| truncated(&cur))?;
                    rows.push(BinaryTensor::from_bits(&[inputs], (0..inputs).map(|i| (buf[i / 8] >> (i % 8)) & 1 == 1))?);
                }
                LayerWeights::Binary(rows)
            } else {
                let mut buf = vec![0u8; inputs * outputs];
                cur.read_exact(&mut buf).map_err(|_| truncated(&cur))?;
                LayerWeights::Quantized {
                    bits,
                    values: buf.into_iter().map(|b| b as i8).collect(),
                }
            };
            layers.push(WeightLayer {
                layer,
                conv: kind == 0,
                inputs,
                outputs,
                weights,
            });
        }
        if cur.position() != body.len() as u64 {
            return Err(ferr(cur.position(), "trailing bytes before checksum".into()));
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|source| Error::Io {
            path: PathBuf::from(path),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn round_trip_and_validate() {
        let net = NetworkSpec::preset("LeNet-5").unwrap();
        let w = WeightContainer::random(&net, 4);
        w.validate(&net).unwrap();
        let back = WeightContainer::decode(&w.encode(), p()).unwrap();
        assert_eq!(back, w);
        assert_eq!(WeightContainer::random(&net, 4), w);
        assert_ne!(WeightContainer::random(&net, 5), w);
    }

    #[test]
    fn corruption_is_detected() {
        let net = NetworkSpec::parse("FC(16) - FC(9) - FC(10)").unwrap();
        let mut b = WeightContainer::random(&net, 1).encode();
        let mid = b.len() / 2;
        b[mid] ^= 0x10;
        assert!(matches!(WeightContainer::decode(&b, p()), Err(Error::Format { message, .. }) if message.contains("checksum")));
        assert!(WeightContainer::decode(&b[..10], p()).is_err());
        let mut bad = b.clone();
        bad[0] = b'Y';
        assert!(matches!(WeightContainer::decode(&bad, p()), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let net = NetworkSpec::parse("FC(16) - FC(9) - FC(10)").unwrap();
        let other = NetworkSpec::parse("FC(16) - FC(8) - FC(10)").unwrap();
        let w = WeightContainer::random(&other, 1);
        assert!(matches!(w.validate(&net), Err(Error::Layer { layer: 1, .. })));
        let mut missing = WeightContainer::random(&net, 1);
        missing.layers.remove(2);
        assert!(matches!(missing.validate(&net), Err(Error::Layer { layer: 2, .. })));
    }
}
