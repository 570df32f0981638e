//! Text topologies such as `5x5,6 - 2x2 Pool - FC(120) - FC(10)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataflow::ConvShape;
use crate::error::{Error, Result};

/// Default quantisation width of the non-binarised first and last layers.
pub const QUANT_BITS: u8 = 8;

/// Feature-map dimensions `(channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const MNIST: Dims = Dims { c: 1, h: 28, w: 28 };

    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv { kernel: usize, out_channels: usize },
    Pool { size: usize },
    Fc { out: usize },
}

/// How a weight layer's weights and inputs are represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Precision {
    /// 1-bit weights and 1-bit input activations on the XNOR path.
    Binary,
    /// Signed integer weights; the first layer also takes unsigned integer
    /// inputs of the same width.
    Quantized { bits: u8 },
}

impl Precision {
    pub fn is_binary(self) -> bool {
        self == Precision::Binary
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// `None` for pooling layers.
    pub precision: Option<Precision>,
    pub input: Dims,
    pub output: Dims,
}

impl LayerSpec {
    pub fn is_weight_layer(&self) -> bool {
        !matches!(self.kind, LayerKind::Pool { .. })
    }

    pub fn is_binary(&self) -> bool {
        self.precision == Some(Precision::Binary)
    }

    /// Vector size of one output's dot product.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { kernel, .. } => self.input.c * kernel * kernel,
            LayerKind::Fc { .. } => self.input.len(),
            LayerKind::Pool { size } => size * size,
        }
    }

    /// Crossbar columns used: one per output channel or neuron.
    pub fn outputs(&self) -> usize {
        match self.kind {
            LayerKind::Conv { out_channels, .. } => out_channels,
            LayerKind::Fc { out } => out,
            LayerKind::Pool { .. } => self.output.c,
        }
    }

    /// Evaluations of the whole column set per sample.
    pub fn windows(&self) -> usize {
        match self.kind {
            LayerKind::Conv { .. } | LayerKind::Pool { .. } => self.output.h * self.output.w,
            LayerKind::Fc { .. } => 1,
        }
    }

    pub fn weight_count(&self) -> usize {
        if self.is_weight_layer() {
            self.fan_in() * self.outputs()
        } else {
            0
        }
    }

    pub fn conv_shape(&self) -> Option<ConvShape> {
        match self.kind {
            LayerKind::Conv { kernel, out_channels } => Some(ConvShape {
                in_channels: self.input.c,
                out_channels,
                input_h: self.input.h,
                input_w: self.input.w,
                kernel,
                stride: 1,
            }),
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::Conv { kernel, out_channels } => write!(f, "{kernel}x{kernel},{out_channels}"),
            LayerKind::Pool { size } => write!(f, "{size}x{size} Pool"),
            LayerKind::Fc { out } => write!(f, "FC({out})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input: Dims,
    pub layers: Vec<LayerSpec>,
}

/// Table of named topologies.
pub const PRESETS: [(&str, &str); 6] = [
    ("LeNet-5", "5x5,6 - 2x2 Pool - 5x5,16 - 2x2 Pool - FC(120) - FC(84) - FC(10)"),
    ("CNN-1", "5x5,5 - 2x2 Pool - FC(720) - FC(70) - FC(10)"),
    ("CNN-2", "7x7,10 - 2x2 Pool - FC(1210) - FC(1210) - FC(10)"),
    ("MLP-S", "FC(784) - FC(500) - FC(250) - FC(10)"),
    ("MLP-M", "FC(784) - FC(1000) - FC(500) - FC(250) - FC(10)"),
    ("MLP-L", "FC(784) - FC(1500) - FC(1000) - FC(500) - FC(10)"),
];

impl NetworkSpec {
    /// Parses a topology over the default 1x28x28 input.
    pub fn parse(text: &str) -> Result<Self> {
        parse_topology(text)
    }

    /// A named preset (case-insensitive), or `None`.
    pub fn preset(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name.trim()))
            .map(|(n, t)| {
                let mut spec = parse_topology(t).expect("preset topologies parse");
                spec.name = (*n).to_string();
                spec
            })
    }

    /// A preset name or a topology string.
    pub fn resolve(text: &str) -> Result<Self> {
        match Self::preset(text) {
            Some(s) => Ok(s),
            None => parse_topology(text),
        }
    }

    pub fn weight_layers(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        self.layers.iter().enumerate().filter(|(_, l)| l.is_weight_layer())
    }

    pub fn output_dims(&self) -> Dims {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    pub fn topology(&self) -> String {
        self.layers.iter().map(ToString::to_string).collect::<Vec<_>>().join(" - ")
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.topology())
    }
}

pub fn parse_topology(text: &str) -> Result<NetworkSpec> {
    parse_topology_with_input(text, Dims::MNIST)
}

fn perr(position: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        message: message.into(),
    }
}

fn parse_num(s: &str, position: usize) -> Result<usize> {
    let t = s.trim();
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
        return Err(perr(position, format!("expected a number, found {t:?}")));
    }
    t.parse().map_err(|_| perr(position, format!("number {t:?} out of range")))
}

/// `"KxK"` with both sides equal.
fn parse_square(s: &str, position: usize) -> Result<usize> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| perr(position, format!("expected KxK, found {:?}", s.trim())))?;
    let (a, b) = (parse_num(a, position)?, parse_num(b, position)?);
    if a != b {
        return Err(perr(position, format!("only square windows are supported, found {a}x{b}")));
    }
    if a == 0 {
        return Err(perr(position, "window size must be positive"));
    }
    Ok(a)
}

fn parse_token(tok: &str, position: usize) -> Result<LayerKind> {
    let t = tok.trim();
    let upper = t.to_ascii_uppercase();
    if let Some(rest) = upper.strip_prefix("FC") {
        let inner = rest
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| perr(position, format!("expected FC(n), found {t:?}")))?;
        let out = parse_num(inner, position)?;
        if out == 0 {
            return Err(perr(position, "FC layer needs at least one output"));
        }
        return Ok(LayerKind::Fc { out });
    }
    if let Some(win) = upper.strip_suffix("POOL") {
        return Ok(LayerKind::Pool {
            size: parse_square(win, position)?,
        });
    }
    if let Some((win, ch)) = t.split_once(',') {
        let kernel = parse_square(win, position)?;
        let out_channels = parse_num(ch, position)?;
        if out_channels == 0 {
            return Err(perr(position, "convolution needs at least one output channel"));
        }
        return Ok(LayerKind::Conv { kernel, out_channels });
    }
    Err(perr(position, format!("unknown layer token {t:?}")))
}

/// Parses a topology and infers every layer's input and output shape.
///
/// The first and last weight layers are quantised; all others are binary.
pub fn parse_topology_with_input(text: &str, input: Dims) -> Result<NetworkSpec> {
    if input.is_empty() {
        return Err(Error::invalid("network input must be non-empty"));
    }
    let mut layers = Vec::new();
    let mut dims = input;
    let mut offset = 0;
    for raw in text.split('-') {
        let lead = raw.len() - raw.trim_start().len();
        let position = offset + lead;
        offset += raw.len() + 1;
        if raw.trim().is_empty() {
            return Err(perr(position, "empty layer token"));
        }
        let kind = parse_token(raw, position)?;
        let output = match kind {
            LayerKind::Conv { kernel, out_channels } => {
                if kernel > dims.h || kernel > dims.w {
                    return Err(perr(
                        position,
                        format!("{kernel}x{kernel} kernel does not fit a {}x{} input", dims.h, dims.w),
                    ));
                }
                Dims::new(out_channels, dims.h - kernel + 1, dims.w - kernel + 1)
            }
            LayerKind::Pool { size } => {
                if size > dims.h || size > dims.w {
                    return Err(perr(
                        position,
                        format!("{size}x{size} pool does not fit a {}x{} input", dims.h, dims.w),
                    ));
                }
                Dims::new(dims.c, dims.h / size, dims.w / size)
            }
            LayerKind::Fc { out } => Dims::new(out, 1, 1),
        };
        layers.push(LayerSpec {
            kind,
            precision: match kind {
                LayerKind::Pool { .. } => None,
                _ => Some(Precision::Binary),
            },
            input: dims,
            output,
        });
        dims = output;
    }
    match layers.last() {
        Some(l) if matches!(l.kind, LayerKind::Fc { .. }) => {}
        _ => return Err(perr(text.len(), "topology must end with an FC layer")),
    }
    let weight_idx: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].is_weight_layer()).collect();
    for &i in [weight_idx.first(), weight_idx.last()].into_iter().flatten() {
        layers[i].precision = Some(Precision::Quantized { bits: QUANT_BITS });
    }
    Ok(NetworkSpec {
        name: String::new(),
        input,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_shapes() {
        let n = NetworkSpec::preset("lenet-5").unwrap();
        assert_eq!(n.name, "LeNet-5");
        let outs: Vec<_> = n.layers.iter().map(|l| l.output).collect();
        assert_eq!(outs[0], Dims::new(6, 24, 24));
        assert_eq!(outs[1], Dims::new(6, 12, 12));
        assert_eq!(outs[2], Dims::new(16, 8, 8));
        assert_eq!(outs[3], Dims::new(16, 4, 4));
        assert_eq!(n.layers[4].fan_in(), 256);
        assert_eq!(n.layers[0].precision, Some(Precision::Quantized { bits: 8 }));
        assert!(n.layers[2].is_binary());
        assert_eq!(n.layers[6].precision, Some(Precision::Quantized { bits: 8 }));
        assert_eq!(n.layers[1].precision, None);
    }

    #[test]
    fn mlp_s_has_four_fc_layers() {
        let n = parse_topology("FC(784) - FC(500) - FC(250) - FC(10)").unwrap();
        assert_eq!(n.layers.len(), 4);
        assert_eq!(n.layers.iter().map(|l| l.fan_in()).collect::<Vec<_>>(), vec![784, 784, 500, 250]);
        assert_eq!(n.topology(), "FC(784) - FC(500) - FC(250) - FC(10)");
    }

    #[test]
    fn all_presets_parse() {
        for (name, _) in PRESETS {
            let n = NetworkSpec::preset(name).unwrap();
            assert_eq!(n.output_dims(), Dims::new(10, 1, 1), "{name}");
            assert_eq!(NetworkSpec::resolve(&n.topology()).unwrap().layers, n.layers);
        }
    }

    #[test]
    fn errors_carry_position() {
        let e = parse_topology("FC(0)").unwrap_err();
        assert!(matches!(e, Error::Parse { position: 0, .. }), "{e}");
        let e = parse_topology("FC(10) - Bogus - FC(10)").unwrap_err();
        assert!(matches!(e, Error::Parse { position: 9, .. }), "{e}");
        let e = parse_topology("FC(10) - 3x3,4").unwrap_err();
        assert!(matches!(e, Error::Parse { position: 9, .. }), "{e}");
        assert!(parse_topology("5x5,6").is_err());
        assert!(parse_topology("5x3,6 - FC(10)").is_err());
        assert!(parse_topology("").is_err());
        assert!(parse_topology("FC(10) -").is_err());
    }
}
