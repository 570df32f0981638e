//! Functional model of a memristor crossbar computing XNOR-popcount columns
//! with sense-amplifier thresholding.
//!
//! A weight vector longer than the crossbar's row count is split into
//! contiguous column segments. Each segment's bitline level (its XNOR
//! popcount) is compared by an SA against one or more references, and a
//! [`CascadePolicy`] merges the per-segment readouts into one activation.
//!
//! The model is ideal: no device variation or stuck cells. All accuracy loss
//! comes from splitting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bincore::{BinaryTensor, TieRule};
use crate::cascade::{self, CascadePolicy};
use crate::error::{Error, Result};

/// Crossbar geometry: wordlines (rows) by bitlines (columns).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
}

impl CrossbarConfig {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::config(format!("crossbar {rows}x{cols} must be at least 1x1")));
        }
        Ok(Self { rows, cols })
    }
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        Self { rows: 512, cols: 512 }
    }
}

impl fmt::Display for CrossbarConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for CrossbarConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::config(format!("crossbar size {s:?} is not ROWSxCOLS")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("crossbar size {s:?} is not ROWSxCOLS")))
        };
        Self::new(parse(r)?, parse(c)?)
    }
}

/// Reference count and auxiliary spacing, independent of segment length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    /// Odd number of references per SA.
    pub count: usize,
    /// Distance `x` between neighbouring references, in popcount units.
    pub distance: usize,
}

impl ReferenceSpec {
    pub fn single() -> Self {
        Self { count: 1, distance: 0 }
    }

    pub fn new(count: usize, distance: usize) -> Result<Self> {
        if count == 0 || count.is_multiple_of(2) {
            return Err(Error::config(format!("reference count {count} must be odd")));
        }
        if count > 1 && distance == 0 {
            return Err(Error::config("auxiliary references need a distance >= 1"));
        }
        Ok(Self { count, distance })
    }

    pub fn aux_pairs(&self) -> usize {
        (self.count - 1) / 2
    }
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self::single()
    }
}

/// SA reference levels for one column segment: `main +- k*x` for
/// `k = 0..=(count-1)/2`, all strictly inside the segment's popcount range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceSet {
    main: usize,
    distance: usize,
    count: usize,
    segment_len: usize,
}

impl ReferenceSet {
    pub fn new(main: usize, distance: usize, count: usize, segment_len: usize) -> Result<Self> {
        let spec = ReferenceSpec::new(count, distance)?;
        let span = spec.aux_pairs() * distance;
        if count > 1 && main <= span {
            return Err(Error::config(format!(
                "lowest reference {main}-{span} must be above 0 (segment {segment_len}, x={distance})"
            )));
        }
        // A lone main reference may sit at 0 so that 1-bit segments stay mappable.
        if main + span >= segment_len {
            return Err(Error::config(format!(
                "highest reference {} must be below segment length {segment_len} (x={distance})",
                main + span
            )));
        }
        Ok(Self {
            main,
            distance,
            count,
            segment_len,
        })
    }

    /// References for a segment of `segment_len` logical cells; the main
    /// reference is half the length so that `level > main` is a strict majority
    /// (or `>=` half under [`TieRule::High`]).
    pub fn for_segment(segment_len: usize, spec: ReferenceSpec, tie: TieRule) -> Result<Self> {
        if segment_len == 0 {
            return Err(Error::config("empty segment"));
        }
        let main = match tie {
            TieRule::Strict => segment_len / 2,
            TieRule::High => segment_len.div_ceil(2) - 1,
        };
        Self::new(main, spec.distance, spec.count, segment_len)
    }

    pub fn main(&self) -> usize {
        self.main
    }

    pub fn distance(&self) -> usize {
        self.distance
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn aux_pairs(&self) -> usize {
        (self.count - 1) / 2
    }

    /// Reference levels in increasing order.
    pub fn levels(&self) -> impl Iterator<Item = usize> + '_ {
        let k = self.aux_pairs();
        (0..self.count).map(move |j| self.main + j * self.distance - k * self.distance)
    }

    /// Index of the interval whose upper edge is the main reference; readouts
    /// with a larger index are above main.
    pub fn main_interval(&self) -> usize {
        self.aux_pairs()
    }

    /// Inclusive popcount range `[lo, hi]` covered by interval `index`.
    pub fn interval_bounds(&self, index: usize) -> (usize, usize) {
        assert!(index <= self.count);
        let level = |j: usize| self.main + j * self.distance - self.aux_pairs() * self.distance;
        let lo = if index == 0 { 0 } else { level(index - 1) + 1 };
        let hi = if index == self.count { self.segment_len } else { level(index) };
        (lo, hi)
    }

    /// Copy with the main reference moved by `delta`; auxiliaries follow.
    pub fn shifted(&self, delta: isize) -> Result<Self> {
        let main = self
            .main
            .checked_add_signed(delta)
            .ok_or_else(|| Error::config("shifted reference below zero"))?;
        Self::new(main, self.distance, self.count, self.segment_len)
    }
}

/// Output of one SA evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SaReadout {
    /// Number of references strictly below the bitline level.
    pub interval: usize,
    /// One comparison cycle per reference.
    pub cycles: usize,
}

impl SaReadout {
    pub fn above_main(&self, refs: &ReferenceSet) -> bool {
        self.interval > refs.main_interval()
    }
}

/// Compares a bitline level against every reference (`level > ref`).
pub fn sa_read(level: usize, refs: &ReferenceSet) -> Result<SaReadout> {
    if level > refs.segment_len {
        return Err(Error::invalid(format!(
            "level {level} exceeds segment length {}",
            refs.segment_len
        )));
    }
    Ok(SaReadout {
        interval: refs.levels().filter(|&r| level > r).count(),
        cycles: refs.count,
    })
}

/// Analog bitline summation in digital form: `popcount(input XNOR weights)`.
pub fn column_popcount(input: &BinaryTensor, weights: &BinaryTensor) -> Result<usize> {
    input.xnor_count(weights)
}

/// One programmed column segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSegment {
    /// Cells, padded with 0 to the crossbar row count.
    pub weights: BinaryTensor,
    /// Cells that carry real weights; the rest are padding.
    pub logical_len: usize,
}

/// A logical weight vector spread over one or more crossbar columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappedColumnGroup {
    segments: Vec<ColumnSegment>,
    segment_length: usize,
    vector_len: usize,
    owner: Option<(usize, usize)>,
}

/// Splits `w` into contiguous segments of at most `cfg.rows` cells.
pub fn map_weights(w: &BinaryTensor, cfg: &CrossbarConfig) -> Result<MappedColumnGroup> {
    if w.is_empty() {
        return Err(Error::invalid("cannot map an empty weight vector"));
    }
    let rows = cfg.rows;
    let segments = (0..w.len())
        .step_by(rows)
        .map(|start| {
            let end = (start + rows).min(w.len());
            let part = w.slice(start, end)?;
            Ok(ColumnSegment {
                weights: part.padded(rows, false),
                logical_len: end - start,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MappedColumnGroup {
        segments,
        segment_length: rows,
        vector_len: w.len(),
        owner: None,
    })
}

impl MappedColumnGroup {
    pub fn with_owner(mut self, layer: usize, output: usize) -> Self {
        self.owner = Some((layer, output));
        self
    }

    pub fn owner(&self) -> Option<(usize, usize)> {
        self.owner
    }

    pub fn splits(&self) -> usize {
        self.segments.len()
    }

    pub fn segment_length(&self) -> usize {
        self.segment_length
    }

    pub fn vector_len(&self) -> usize {
        self.vector_len
    }

    pub fn segments(&self) -> &[ColumnSegment] {
        &self.segments
    }

    /// Logical weights with padding removed.
    pub fn reassemble(&self) -> BinaryTensor {
        let parts: Vec<_> = self
            .segments
            .iter()
            .map(|s| s.weights.slice(0, s.logical_len).expect("in range"))
            .collect();
        BinaryTensor::concat(&parts)
    }

    /// Per-segment reference sets built from the logical segment lengths.
    pub fn segment_references(&self, spec: ReferenceSpec, tie: TieRule) -> Result<Vec<ReferenceSet>> {
        self.segments
            .iter()
            .map(|s| ReferenceSet::for_segment(s.logical_len, spec, tie))
            .collect()
    }

    /// Splits a logical input into padded per-segment wordline vectors.
    /// Padding lines are driven to 1 so that they XNOR with the 0 pad cells
    /// to 0 and contribute nothing to the bitline.
    pub fn split_input(&self, input: &BinaryTensor) -> Result<Vec<BinaryTensor>> {
        Error::check_len(self.vector_len, input.len())?;
        let mut start = 0;
        self.segments
            .iter()
            .map(|s| {
                let part = input.slice(start, start + s.logical_len)?;
                start += s.logical_len;
                Ok(part.padded(self.segment_length, true))
            })
            .collect()
    }

    /// Bitline levels for already split wordline vectors.
    pub fn levels(&self, wordlines: &[BinaryTensor]) -> Result<Vec<usize>> {
        Error::check_len(self.segments.len(), wordlines.len())?;
        self.segments
            .iter()
            .zip(wordlines)
            .map(|(s, x)| column_popcount(x, &s.weights))
            .collect()
    }

    /// Activation for already split wordline vectors against explicit references.
    pub fn forward_split(
        &self,
        wordlines: &[BinaryTensor],
        refs: &[ReferenceSet],
        policy: &CascadePolicy,
    ) -> Result<bool> {
        Error::check_len(self.segments.len(), refs.len())?;
        let levels = self.levels(wordlines)?;
        let readouts = levels
            .iter()
            .zip(refs)
            .map(|(&l, r)| sa_read(l, r))
            .collect::<Result<Vec<_>>>()?;
        if readouts.len() == 1 {
            return Ok(readouts[0].above_main(&refs[0]));
        }
        cascade::cascade(policy, &readouts, refs)
    }
}

/// Evaluates one activation of a mapped weight vector.
///
/// With a single segment this is an SA comparison against `n/2` and equals
/// the golden activation exactly; with several segments the policy's
/// cascading function approximates it.
pub fn layer_forward(
    input: &BinaryTensor,
    group: &MappedColumnGroup,
    policy: &CascadePolicy,
) -> Result<bool> {
    let refs = group.segment_references(policy.refs, policy.tie)?;
    layer_forward_with_refs(input, group, &refs, policy)
}

/// [`layer_forward`] with caller-supplied per-segment references.
pub fn layer_forward_with_refs(
    input: &BinaryTensor,
    group: &MappedColumnGroup,
    refs: &[ReferenceSet],
    policy: &CascadePolicy,
) -> Result<bool> {
    let wordlines = group.split_input(input)?;
    group.forward_split(&wordlines, refs, policy)
}
