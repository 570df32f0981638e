//! End-to-end inference on the golden model or the crossbar model.
//!
//! The first weight layer takes the raw 8-bit pixels and integer weights;
//! its pre-activations are binarised at 0. Binary layers run either the
//! golden majority rule or the crossbar path (column mapping, SA readout,
//! cascade). Pooling is an OR over the window. The last weight layer
//! produces integer scores from `+-1` inputs; the prediction is the
//! arg-max, lowest index on ties.
//!
//! With the crossbar backend each binary layer also evaluates the golden
//! rule on the same input, so per-layer mismatch counts isolate that layer's
//! own error.

use rayon::prelude::*;
use serde::Serialize;

use crate::bincore::{BinaryTensor, TieRule};
use crate::cascade::{cascade_levels, CascadePolicy};
use crate::crossbar::{map_weights, sa_read, CrossbarConfig, MappedColumnGroup, ReferenceSet, ReferenceSpec};
use crate::dataflow::{self, column_sliced_kernel};
use crate::error::{Error, Result};
use crate::netio::idx::Dataset;
use crate::netio::topology::{Dims, LayerKind, LayerSpec, NetworkSpec};
use crate::netio::weights::{WeightContainer, WeightLayer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum Backend {
    Golden { tie: TieRule },
    Crossbar { crossbar: CrossbarConfig, policy: CascadePolicy },
}

impl Backend {
    pub fn golden() -> Self {
        Backend::Golden { tie: TieRule::Strict }
    }

    fn tie(&self) -> TieRule {
        match self {
            Backend::Golden { tie } => *tie,
            Backend::Crossbar { policy, .. } => policy.tie,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerMismatch {
    pub layer: usize,
    pub name: String,
    pub fan_in: usize,
    pub splits: usize,
    pub bits: u64,
    pub mismatches: u64,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InferenceReport {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub predictions: Vec<u8>,
    /// Binary layers only; empty for the golden backend.
    pub layers: Vec<LayerMismatch>,
}

/// Golden and crossbar runs over the same data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyComparison {
    pub golden_accuracy: f64,
    pub crossbar_accuracy: f64,
    /// Golden minus crossbar accuracy.
    pub accuracy_delta: f64,
    pub prediction_disagreements: usize,
    pub layers: Vec<LayerMismatch>,
}

/// Column groups of one binary layer with their references.
struct MappedLayer {
    groups: Vec<MappedColumnGroup>,
    refs: Vec<ReferenceSet>,
}

enum Act {
    Pixels(Vec<u8>),
    Bits(BinaryTensor),
}

struct Prepared<'a> {
    net: &'a NetworkSpec,
    weights: Vec<Option<&'a WeightLayer>>,
    mapped: Vec<Option<MappedLayer>>,
    backend: Backend,
    last: usize,
}

fn lerr(layer: usize, message: impl Into<String>) -> Error {
    Error::Layer {
        layer,
        message: message.into(),
    }
}

/// References for a column group: auxiliary ones only where the column is split.
pub fn group_references(group: &MappedColumnGroup, policy: &CascadePolicy) -> Result<Vec<ReferenceSet>> {
    let spec = if group.splits() == 1 { ReferenceSpec::single() } else { policy.refs };
    group.segment_references(spec, policy.tie)
}

fn map_layer(index: usize, spec: &LayerSpec, w: &WeightLayer, cfg: &CrossbarConfig, policy: &CascadePolicy) -> Result<MappedLayer> {
    let rows = w.binary_rows().ok_or_else(|| lerr(index, "binary layer has quantised weights"))?;
    let groups = rows
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let row = match spec.conv_shape() {
                Some(shape) => column_sliced_kernel(&shape, row)?,
                None => row.clone(),
            };
            Ok(map_weights(&row, cfg)?.with_owner(index, j))
        })
        .collect::<Result<Vec<_>>>()?;
    // Every group of a layer shares the same segmentation.
    let refs = group_references(&groups[0], policy).map_err(|e| lerr(index, e.to_string()))?;
    Ok(MappedLayer { groups, refs })
}

impl<'a> Prepared<'a> {
    fn new(net: &'a NetworkSpec, weights: &'a WeightContainer, backend: Backend) -> Result<Self> {
        weights.validate(net)?;
        let last = net.weight_layers().last().map(|(i, _)| i).ok_or_else(|| Error::invalid("network has no weight layers"))?;
        let mut w = Vec::with_capacity(net.layers.len());
        let mut mapped = Vec::with_capacity(net.layers.len());
        for (i, l) in net.layers.iter().enumerate() {
            let wl = weights.layer(i);
            w.push(wl);
            mapped.push(match (backend, wl) {
                (Backend::Crossbar { crossbar, policy }, Some(wl)) if l.is_binary() => {
                    Some(map_layer(i, l, wl, &crossbar, &policy)?)
                }
                _ => None,
            });
        }
        Ok(Self {
            net,
            weights: w,
            mapped,
            backend,
            last,
        })
    }

    /// Prediction and per-layer `(bits, mismatches)`.
    fn run(&self, pixels: &[u8]) -> Result<(u8, Vec<(u64, u64)>)> {
        let mut act = Act::Pixels(pixels.to_vec());
        let mut stats = vec![(0u64, 0u64); self.net.layers.len()];
        for (i, l) in self.net.layers.iter().enumerate() {
            act = match l.kind {
                LayerKind::Pool { size } => pool(&act, l.input, size),
                _ if i == self.last => return Ok((argmax(&self.scores(i, l, &act)?), stats)),
                _ if l.is_binary() => {
                    let Act::Bits(x) = &act else {
                        return Err(lerr(i, "binary layer reached with integer activations"));
                    };
                    Act::Bits(self.binary_layer(i, l, x, &mut stats[i])?)
                }
                _ => {
                    let pre = self.scores(i, l, &act)?;
                    Act::Bits(BinaryTensor::from_bits(&[pre.len()], pre.iter().map(|&v| v >= 0))?)
                }
            };
        }
        Err(Error::invalid("network does not end with a weight layer"))
    }

    /// Integer pre-activations of a quantised layer, `[j][y][x]`.
    fn scores(&self, i: usize, l: &LayerSpec, act: &Act) -> Result<Vec<i64>> {
        let w = self.weights[i].ok_or_else(|| lerr(i, "missing weights"))?;
        let x: Vec<i64> = match act {
            Act::Pixels(p) => p.iter().map(|&v| i64::from(v)).collect(),
            Act::Bits(b) => b.iter().map(|v| if v { 1 } else { -1 }).collect(),
        };
        Error::check_len(l.input.len(), x.len())?;
        let row = |j: usize| w.quantized_row(j).ok_or_else(|| lerr(i, "quantised layer has binary weights"));
        match l.conv_shape() {
            None => (0..l.outputs())
                .map(|j| Ok(row(j)?.iter().zip(&x).map(|(&a, &b)| i64::from(a) * b).sum()))
                .collect(),
            Some(s) => {
                let k = s.kernel;
                let mut out = Vec::with_capacity(s.out_channels * s.windows());
                for j in 0..s.out_channels {
                    let r = row(j)?;
                    for oy in 0..s.out_h() {
                        for ox in 0..s.out_w() {
                            let mut acc = 0i64;
                            for c in 0..s.in_channels {
                                for dy in 0..k {
                                    for dx in 0..k {
                                        acc += i64::from(r[(c * k + dy) * k + dx]) * x[s.input_index(c, oy + dy, ox + dx)];
                                    }
                                }
                            }
                            out.push(acc);
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    fn binary_layer(&self, i: usize, l: &LayerSpec, x: &BinaryTensor, stats: &mut (u64, u64)) -> Result<BinaryTensor> {
        let tie = self.backend.tie();
        let rows = self.weights[i].and_then(|w| w.binary_rows()).ok_or_else(|| lerr(i, "missing binary weights"))?;
        match (&self.mapped[i], l.conv_shape()) {
            (None, None) => BinaryTensor::from_bits(
                &[rows.len()],
                rows.iter().map(|r| Ok(tie.fires(r.xnor_count(x)?, r.len()))).collect::<Result<Vec<_>>>()?,
            ),
            (None, Some(s)) => {
                let out = dataflow::direct_conv_popcounts(x, &s, rows)?;
                BinaryTensor::from_bits(&[out.len()], out.iter().map(|&m| tie.fires(m, s.window_len())))
            }
            (Some(m), None) => {
                let bits = self.crossbar_read(m, x, stats)?;
                BinaryTensor::from_bits(&[bits.len()], bits)
            }
            (Some(m), Some(s)) => {
                let (oh, ow) = (s.out_h(), s.out_w());
                let mut out = BinaryTensor::zeros(&[s.out_channels * oh * ow]);
                dataflow::traverse(x, &s, false, 1, |step| {
                    let bits = self.crossbar_read(m, step.wordlines, stats)?;
                    for (j, b) in bits.into_iter().enumerate() {
                        out.set((j * oh + step.row) * ow + step.col, b);
                    }
                    Ok(())
                })?;
                Ok(out)
            }
        }
    }

    /// One read of every column group, tallying disagreements with the golden rule.
    fn crossbar_read(&self, m: &MappedLayer, x: &BinaryTensor, stats: &mut (u64, u64)) -> Result<Vec<bool>> {
        let Backend::Crossbar { policy, .. } = self.backend else {
            unreachable!("mapped layers exist only for the crossbar backend")
        };
        let wordlines = m.groups[0].split_input(x)?;
        m.groups
            .iter()
            .map(|g| {
                let levels = g.levels(&wordlines)?;
                let golden = policy.tie.fires(levels.iter().sum(), g.vector_len());
                let bit = if levels.len() == 1 {
                    sa_read(levels[0], &m.refs[0])?.above_main(&m.refs[0])
                } else {
                    cascade_levels(&policy, &levels, &m.refs)?
                };
                stats.0 += 1;
                stats.1 += u64::from(bit != golden);
                Ok(bit)
            })
            .collect()
    }
}

fn pool(act: &Act, input: Dims, size: usize) -> Act {
    let (oh, ow) = (input.h / size, input.w / size);
    let idx = |c: usize, y: usize, x: usize| (c * input.h + y) * input.w + x;
    let windows = (0..input.c).flat_map(move |c| {
        (0..oh).flat_map(move |oy| (0..ow).map(move |ox| (c, oy * size, ox * size)))
    });
    match act {
        Act::Pixels(p) => Act::Pixels(
            windows
                .map(|(c, y0, x0)| {
                    (0..size * size)
                        .map(|t| p[idx(c, y0 + t / size, x0 + t % size)])
                        .max()
                        .unwrap_or(0)
                })
                .collect(),
        ),
        Act::Bits(b) => {
            let bits: Vec<bool> = windows
                .map(|(c, y0, x0)| (0..size * size).any(|t| b.get(idx(c, y0 + t / size, x0 + t % size))))
                .collect();
            Act::Bits(BinaryTensor::from_bits(&[bits.len()], bits).expect("length matches"))
        }
    }
}

fn argmax(scores: &[i64]) -> u8 {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = j;
        }
    }
    best as u8
}

/// Classifies every sample of `data` with `backend`.
pub fn run_inference(net: &NetworkSpec, weights: &WeightContainer, data: &Dataset, backend: Backend) -> Result<InferenceReport> {
    let dims = (data.images.rows, data.images.cols);
    if net.input.c != 1 || (net.input.h, net.input.w) != dims {
        return Err(Error::invalid(format!(
            "dataset images are {}x{}, network expects {}",
            dims.0, dims.1, net.input
        )));
    }
    let prepared = Prepared::new(net, weights, backend)?;
    let results = (0..data.len())
        .into_par_iter()
        .map(|s| prepared.run(data.images.image(s)))
        .collect::<Result<Vec<_>>>()?;
    let mut totals = vec![(0u64, 0u64); net.layers.len()];
    let mut predictions = Vec::with_capacity(results.len());
    for (pred, stats) in results {
        predictions.push(pred);
        for (t, s) in totals.iter_mut().zip(stats) {
            t.0 += s.0;
            t.1 += s.1;
        }
    }
    let correct = predictions.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    let layers = match backend {
        Backend::Golden { .. } => Vec::new(),
        Backend::Crossbar { .. } => net
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_binary())
            .map(|(i, l)| {
                let (bits, mismatches) = totals[i];
                LayerMismatch {
                    layer: i,
                    name: l.to_string(),
                    fan_in: l.fan_in(),
                    splits: prepared.mapped[i].as_ref().map_or(1, |m| m.refs.len()),
                    bits,
                    mismatches,
                    fraction: if bits == 0 { 0.0 } else { mismatches as f64 / bits as f64 },
                }
            })
            .collect(),
    };
    Ok(InferenceReport {
        samples: data.len(),
        correct,
        accuracy: if data.is_empty() { 0.0 } else { correct as f64 / data.len() as f64 },
        predictions,
        layers,
    })
}

/// Runs both backends and reports the accuracy delta.
pub fn compare_backends(
    net: &NetworkSpec,
    weights: &WeightContainer,
    data: &Dataset,
    crossbar: CrossbarConfig,
    policy: CascadePolicy,
) -> Result<AccuracyComparison> {
    let golden = run_inference(net, weights, data, Backend::Golden { tie: policy.tie })?;
    let xbar = run_inference(net, weights, data, Backend::Crossbar { crossbar, policy })?;
    Ok(AccuracyComparison {
        golden_accuracy: golden.accuracy,
        crossbar_accuracy: xbar.accuracy,
        accuracy_delta: golden.accuracy - xbar.accuracy,
        prediction_disagreements: golden.predictions.iter().zip(&xbar.predictions).filter(|(a, b)| a != b).count(),
        layers: xbar.layers,
    })
}
