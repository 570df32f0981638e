//! Column-sliced convolution dataflow.
//!
//! An operating window of `i` channels and a `k x k` kernel is stored as `k`
//! column-packs; pack `col` holds `input[c][y0 + r][x0 + col]` for every
//! channel `c` and kernel row `r`, at offset `c * k + r`. Sliding the window
//! one column right shifts out the left-most pack and streams in one new
//! pack, so the kernel column programmed in the crossbar never changes.
//!
//! With the parallel-window option the buffer carries one extra lookahead
//! pack and each kernel is programmed twice: column 1 sees packs `0..k` with
//! the cells facing the lookahead pack disabled, column 2 sees packs `1..=k`
//! with the cells facing pack 0 disabled. One read evaluates two windows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bincore::BinaryTensor;
use crate::crossbar::CrossbarConfig;
use crate::error::{Error, Result};

/// Bus width between crossbars, in bits.
pub const BUS_WORD_BITS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub kernel: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

impl ConvShape {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        input_h: usize,
        input_w: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let s = Self {
            in_channels,
            out_channels,
            input_h,
            input_w,
            kernel,
            stride,
        };
        s.validate()?;
        Ok(s)
    }

    /// Square input, stride 1.
    pub fn square(in_channels: usize, out_channels: usize, size: usize, kernel: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, size, size, kernel, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 {
            return Err(Error::Dataflow(format!("degenerate shape {self:?}")));
        }
        if self.kernel > self.input_h || self.kernel > self.input_w {
            return Err(Error::Dataflow(format!(
                "kernel {} larger than input {}x{}",
                self.kernel, self.input_h, self.input_w
            )));
        }
        if self.stride == 0 {
            return Err(Error::Dataflow("stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.input_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.input_w - self.kernel) / self.stride + 1
    }

    /// Elements in one column-pack: `i * k`.
    pub fn pack_len(&self) -> usize {
        self.in_channels * self.kernel
    }

    /// Elements in one window: `i * k^2`.
    pub fn window_len(&self) -> usize {
        self.pack_len() * self.kernel
    }

    pub fn windows(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input_h * self.input_w
    }

    /// Row-major `[c][y][x]` index into the input feature map.
    pub fn input_index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.input_h + y) * self.input_w + x
    }

    /// Position of window element `(c, r, col)` in the column-sliced layout.
    pub fn wordline(&self, c: usize, r: usize, col: usize) -> usize {
        col * self.pack_len() + c * self.kernel + r
    }

    /// Shape of the output feature map as the next layer's input.
    pub fn output_dims(&self) -> (usize, usize, usize) {
        (self.out_channels, self.out_h(), self.out_w())
    }
}

/// Reorders a kernel given row-major as `[c][r][col]` into column-sliced order.
pub fn column_sliced_kernel(shape: &ConvShape, kernel: &BinaryTensor) -> Result<BinaryTensor> {
    Error::check_len(shape.window_len(), kernel.len())?;
    let k = shape.kernel;
    let mut out = BinaryTensor::zeros(&[shape.window_len()]);
    for c in 0..shape.in_channels {
        for r in 0..k {
            for col in 0..k {
                out.set(shape.wordline(c, r, col), kernel.get((c * k + r) * k + col));
            }
        }
    }
    Ok(out)
}

/// Crossbars needed for a kernel image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CapacityPlan {
    pub rows_needed: usize,
    pub columns_needed: usize,
    /// Row-wise splits of each column (cascaded through the SA).
    pub row_splits: usize,
    pub column_tiles: usize,
    pub crossbars: usize,
}

impl CapacityPlan {
    pub fn new(rows_needed: usize, columns_needed: usize, cfg: &CrossbarConfig) -> Self {
        let row_splits = rows_needed.div_ceil(cfg.rows).max(1);
        let column_tiles = columns_needed.div_ceil(cfg.cols).max(1);
        Self {
            rows_needed,
            columns_needed,
            row_splits,
            column_tiles,
            crossbars: row_splits * column_tiles,
        }
    }

    pub fn fits_one_crossbar(&self) -> bool {
        self.crossbars == 1
    }
}

/// One programmed crossbar column.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelColumn {
    pub out_channel: usize,
    /// 0 for the current window, 1 for the lookahead window.
    pub window_offset: usize,
    pub weights: BinaryTensor,
    /// Cells that take part in the computation; the rest are programmed so
    /// that they contribute nothing.
    pub enabled: BinaryTensor,
}

impl KernelColumn {
    /// XNOR matches over the enabled cells.
    pub fn popcount(&self, wordlines: &BinaryTensor) -> Result<usize> {
        Ok(self.weights.xnor(wordlines)?.and(&self.enabled)?.count_ones())
    }
}

/// Weight image of a convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelImage {
    pub shape: ConvShape,
    pub parallel_window: bool,
    pub rows: usize,
    pub columns: Vec<KernelColumn>,
    pub plan: CapacityPlan,
}

impl KernelImage {
    /// Per-column popcounts for one crossbar read.
    pub fn read(&self, wordlines: &BinaryTensor) -> Result<Vec<usize>> {
        Error::check_len(self.rows, wordlines.len())?;
        self.columns.iter().map(|c| c.popcount(wordlines)).collect()
    }
}

/// Programs one column per output channel (two with `parallel_window`).
///
/// `kernels[j]` is output channel `j`'s kernel in `[c][r][col]` order. An
/// image taller or wider than one crossbar is still produced; `plan` states
/// how many crossbars it occupies.
pub fn layout_kernels(
    shape: &ConvShape,
    kernels: &[BinaryTensor],
    cfg: &CrossbarConfig,
    parallel_window: bool,
) -> Result<KernelImage> {
    shape.validate()?;
    Error::check_len(shape.out_channels, kernels.len())?;
    if parallel_window && shape.stride != 1 {
        return Err(Error::Dataflow("parallel windows need stride 1".into()));
    }
    let pack = shape.pack_len();
    let win = shape.window_len();
    let rows = if parallel_window { win + pack } else { win };
    let mut columns = Vec::with_capacity(kernels.len() * (1 + usize::from(parallel_window)));
    for (j, kernel) in kernels.iter().enumerate() {
        let sliced = column_sliced_kernel(shape, kernel)?;
        let offsets: &[usize] = if parallel_window { &[0, 1] } else { &[0] };
        for &off in offsets {
            let lead = BinaryTensor::zeros(&[off * pack]);
            let trail = BinaryTensor::zeros(&[rows - win - off * pack]);
            let weights = BinaryTensor::concat([&lead, &sliced, &trail]);
            let ones = BinaryTensor::ones(&[win]);
            let enabled = BinaryTensor::concat([&lead, &ones, &trail]);
            columns.push(KernelColumn {
                out_channel: j,
                window_offset: off,
                weights,
                enabled,
            });
        }
    }
    let plan = CapacityPlan::new(rows, columns.len(), cfg);
    Ok(KernelImage {
        shape: *shape,
        parallel_window,
        rows,
        columns,
        plan,
    })
}

/// Data movement counters for one layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionLog {
    pub slides: u64,
    /// Full buffer refreshes, including the initial load.
    pub wraps: u64,
    pub bits_streamed: u64,
    pub words_streamed: u64,
    pub reprogram_events: u64,
}

impl TransactionLog {
    fn stream(&mut self, elements: usize, bit_width: usize) {
        let bits = (elements * bit_width) as u64;
        self.bits_streamed += bits;
        self.words_streamed += bits.div_ceil(BUS_WORD_BITS as u64);
    }

    pub fn merge(&mut self, other: &TransactionLog) {
        self.slides += other.slides;
        self.wraps += other.wraps;
        self.bits_streamed += other.bits_streamed;
        self.words_streamed += other.words_streamed;
        self.reprogram_events += other.reprogram_events;
    }
}

pub fn write_transaction_csv<W: Write>(out: W, rows: &[(String, TransactionLog)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "slides", "wraps", "words_streamed", "reprogram_events"])?;
    for (layer, log) in rows {
        w.write_record([
            layer.clone(),
            log.slides.to_string(),
            log.wraps.to_string(),
            log.words_streamed.to_string(),
            log.reprogram_events.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Input column `x` of the band starting at row `y0`, as one pack.
pub fn input_pack(input: &BinaryTensor, shape: &ConvShape, y0: usize, x: usize) -> Result<BinaryTensor> {
    Error::check_len(shape.input_len(), input.len())?;
    if y0 + shape.kernel > shape.input_h || x >= shape.input_w {
        return Err(Error::Dataflow(format!("pack ({y0}, {x}) outside input")));
    }
    let k = shape.kernel;
    BinaryTensor::from_bits(
        &[shape.pack_len()],
        (0..shape.in_channels).flat_map(|c| (0..k).map(move |r| input.get(shape.input_index(c, y0 + r, x)))),
    )
}

/// Window position inside the output feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Position {
    row: usize,
    col: usize,
}

/// Ring of column-packs holding the current operating window.
#[derive(Clone, Debug)]
pub struct ConvWindowBuffer {
    shape: ConvShape,
    parallel_window: bool,
    bit_width: usize,
    packs: Vec<BinaryTensor>,
    head: usize,
    filled: usize,
    pos: Option<Position>,
    log: TransactionLog,
}

impl ConvWindowBuffer {
    pub fn new(shape: ConvShape, parallel_window: bool, bit_width: usize) -> Result<Self> {
        shape.validate()?;
        if parallel_window && shape.stride != 1 {
            return Err(Error::Dataflow("parallel windows need stride 1".into()));
        }
        if bit_width == 0 {
            return Err(Error::Dataflow("bit width must be positive".into()));
        }
        let cap = shape.kernel + usize::from(parallel_window);
        Ok(Self {
            shape,
            parallel_window,
            bit_width,
            packs: vec![BinaryTensor::zeros(&[shape.pack_len()]); cap],
            head: 0,
            filled: 0,
            pos: None,
            log: TransactionLog::default(),
        })
    }

    pub fn shape(&self) -> &ConvShape {
        &self.shape
    }

    pub fn capacity(&self) -> usize {
        self.packs.len() * self.shape.pack_len()
    }

    pub fn log(&self) -> &TransactionLog {
        &self.log
    }

    /// Output row and left-most output column of the current window.
    pub fn position(&self) -> Option<(usize, usize)> {
        self.pos.map(|p| (p.row, p.col))
    }

    /// Windows evaluated by the next read: 2 while the lookahead pack is live.
    pub fn windows_in_read(&self) -> usize {
        match self.pos {
            Some(p) if self.lookahead_live(p.col) => 2,
            Some(_) => 1,
            None => 0,
        }
    }

    fn lookahead_live(&self, col: usize) -> bool {
        self.parallel_window && col + 1 < self.shape.out_w()
    }

    /// Packs resident for a window starting at output column `col`.
    fn span(&self, col: usize) -> usize {
        self.shape.kernel + usize::from(self.lookahead_live(col))
    }

    fn step(&self) -> usize {
        if self.parallel_window {
            2
        } else {
            1
        }
    }

    pub fn at_right_edge(&self) -> bool {
        match self.pos {
            Some(p) => p.col + self.step() >= self.shape.out_w(),
            None => true,
        }
    }

    pub fn at_bottom_edge(&self) -> bool {
        matches!(self.pos, Some(p) if p.row + 1 >= self.shape.out_h())
    }

    /// Input columns the next `slide_right` must stream, in order.
    pub fn next_slide_columns(&self) -> Result<std::ops::Range<usize>> {
        let p = self.pos.ok_or_else(|| Error::Dataflow("buffer not loaded".into()))?;
        if self.at_right_edge() {
            return Err(Error::Dataflow("window at right edge; wrap_down".into()));
        }
        let s = self.shape.stride;
        let old_end = p.col * s + self.span(p.col);
        let col = p.col + self.step();
        let new_start = col * s;
        let new_end = new_start + self.span(col);
        Ok(old_end.max(new_start)..new_end)
    }

    /// Input columns and band row the next `wrap_down` must stream.
    pub fn next_wrap(&self) -> Result<(usize, std::ops::Range<usize>)> {
        let row = match self.pos {
            None => 0,
            Some(_) if !self.at_right_edge() => {
                return Err(Error::Dataflow("wrap_down before reaching the right edge".into()))
            }
            Some(_) if self.at_bottom_edge() => return Err(Error::Dataflow("layer complete".into())),
            Some(p) => p.row + 1,
        };
        Ok((row * self.shape.stride, 0..self.span(0)))
    }

    fn push_pack(&mut self, pack: BinaryTensor) {
        let cap = self.packs.len();
        let slot = (self.head + self.filled) % cap;
        self.packs[slot] = pack;
        self.filled += 1;
    }

    fn check_packs(&self, packs: &[BinaryTensor], expected: usize) -> Result<()> {
        if packs.len() != expected {
            return Err(Error::Dataflow(format!("expected {expected} packs, got {}", packs.len())));
        }
        for p in packs {
            Error::check_len(self.shape.pack_len(), p.len())?;
        }
        Ok(())
    }

    /// Shifts the window right, replacing the oldest packs with `next`.
    pub fn slide_right(&mut self, next: &[BinaryTensor]) -> Result<TransactionLog> {
        let cols = self.next_slide_columns()?;
        self.check_packs(next, cols.len())?;
        let mut p = self.pos.expect("loaded");
        let cap = self.packs.len();
        let shift = (self.step() * self.shape.stride).min(self.filled);
        self.head = (self.head + shift) % cap;
        self.filled -= shift;
        let mut delta = TransactionLog {
            slides: 1,
            ..Default::default()
        };
        for pack in next {
            self.push_pack(pack.clone());
        }
        delta.stream(next.len() * self.shape.pack_len(), self.bit_width);
        p.col += self.step();
        self.pos = Some(p);
        debug_assert_eq!(self.filled, self.span(p.col));
        self.log.merge(&delta);
        Ok(delta)
    }

    /// Refreshes the whole buffer with the first packs of the next row band.
    pub fn wrap_down(&mut self, packs: &[BinaryTensor]) -> Result<TransactionLog> {
        let (_, cols) = self.next_wrap()?;
        self.check_packs(packs, cols.len())?;
        let row = self.pos.map_or(0, |p| p.row + 1);
        self.head = 0;
        self.filled = 0;
        for pack in packs {
            self.push_pack(pack.clone());
        }
        let mut delta = TransactionLog {
            wraps: 1,
            ..Default::default()
        };
        delta.stream(packs.len() * self.shape.pack_len(), self.bit_width);
        self.pos = Some(Position { row, col: 0 });
        self.log.merge(&delta);
        Ok(delta)
    }

    /// Resident packs in logical (left-to-right) order, zero-filled to capacity.
    pub fn wordlines(&self) -> BinaryTensor {
        let cap = self.packs.len();
        let mut parts: Vec<&BinaryTensor> = (0..self.filled).map(|i| &self.packs[(self.head + i) % cap]).collect();
        let empty = BinaryTensor::zeros(&[self.shape.pack_len()]);
        parts.extend(std::iter::repeat_n(&empty, cap - self.filled));
        BinaryTensor::concat(parts)
    }

    /// The current window's `i * k^2` elements in column-sliced order.
    pub fn window(&self) -> BinaryTensor {
        let cap = self.packs.len();
        BinaryTensor::concat((0..self.shape.kernel).map(|i| &self.packs[(self.head + i) % cap]))
    }
}

/// One crossbar read during a traversal.
#[derive(Debug)]
pub struct WindowStep<'a> {
    pub row: usize,
    pub col: usize,
    /// 1, or 2 when the lookahead window is evaluated in the same read.
    pub windows: usize,
    pub wordlines: &'a BinaryTensor,
}

/// Walks every window of `input` through a [`ConvWindowBuffer`], calling
/// `visit` once per crossbar read.
pub fn traverse<F>(
    input: &BinaryTensor,
    shape: &ConvShape,
    parallel_window: bool,
    bit_width: usize,
    mut visit: F,
) -> Result<TransactionLog>
where
    F: FnMut(WindowStep<'_>) -> Result<()>,
{
    Error::check_len(shape.input_len(), input.len())?;
    let mut buf = ConvWindowBuffer::new(*shape, parallel_window, bit_width)?;
    loop {
        let (y0, cols) = buf.next_wrap()?;
        let packs = cols.map(|x| input_pack(input, shape, y0, x)).collect::<Result<Vec<_>>>()?;
        buf.wrap_down(&packs)?;
        loop {
            let (row, col) = buf.position().expect("loaded");
            let wl = buf.wordlines();
            visit(WindowStep {
                row,
                col,
                windows: buf.windows_in_read(),
                wordlines: &wl,
            })?;
            if buf.at_right_edge() {
                break;
            }
            let cols = buf.next_slide_columns()?;
            let packs = cols.map(|x| input_pack(input, shape, y0, x)).collect::<Result<Vec<_>>>()?;
            buf.slide_right(&packs)?;
        }
        if buf.at_bottom_edge() {
            return Ok(*buf.log());
        }
    }
}

/// Direct convolution popcounts `[j][oy][ox]` without any buffering.
pub fn direct_conv_popcounts(input: &BinaryTensor, shape: &ConvShape, kernels: &[BinaryTensor]) -> Result<Vec<usize>> {
    Error::check_len(shape.input_len(), input.len())?;
    Error::check_len(shape.out_channels, kernels.len())?;
    let k = shape.kernel;
    let mut out = Vec::with_capacity(shape.out_channels * shape.windows());
    for kernel in kernels {
        Error::check_len(shape.window_len(), kernel.len())?;
        for oy in 0..shape.out_h() {
            for ox in 0..shape.out_w() {
                let mut m = 0;
                for c in 0..shape.in_channels {
                    for r in 0..k {
                        for col in 0..k {
                            let a = input.get(shape.input_index(c, oy * shape.stride + r, ox * shape.stride + col));
                            let b = kernel.get((c * k + r) * k + col);
                            m += usize::from(a == b);
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    Ok(out)
}

/// Closed-form transaction counts for a full traversal.
pub fn predicted_log(shape: &ConvShape, parallel_window: bool, bit_width: usize) -> Result<TransactionLog> {
    predicted_log_with_bus(shape, parallel_window, bit_width, BUS_WORD_BITS)
}

/// [`predicted_log`] for a bus of `bus_bits` bits per word.
pub fn predicted_log_with_bus(
    shape: &ConvShape,
    parallel_window: bool,
    bit_width: usize,
    bus_bits: usize,
) -> Result<TransactionLog> {
    shape.validate()?;
    if bus_bits == 0 {
        return Err(Error::Dataflow("bus width must be positive".into()));
    }
    if parallel_window && shape.stride != 1 {
        return Err(Error::Dataflow("parallel windows need stride 1".into()));
    }
    let (oh, ow, k, s) = (shape.out_h(), shape.out_w(), shape.kernel, shape.stride);
    let pack_bits = (shape.pack_len() * bit_width) as u64;
    let words = |packs: usize| (packs as u64 * pack_bits).div_ceil(bus_bits as u64);
    let mut log = TransactionLog {
        wraps: oh as u64,
        ..Default::default()
    };
    let first = k + usize::from(parallel_window && ow > 1);
    let mut per_row = TransactionLog {
        bits_streamed: first as u64 * pack_bits,
        words_streamed: words(first),
        ..Default::default()
    };
    // Packs streamed by each slide, in order along the row.
    let mut col = 0;
    let step = if parallel_window { 2 } else { 1 };
    let span = |c: usize| k + usize::from(parallel_window && c + 1 < ow);
    while col + step < ow {
        let old_end = col * s + span(col);
        let next = col + step;
        let n = next * s + span(next) - old_end.max(next * s);
        per_row.slides += 1;
        per_row.bits_streamed += n as u64 * pack_bits;
        per_row.words_streamed += words(n);
        col = next;
    }
    log.slides = per_row.slides * oh as u64;
    log.bits_streamed = per_row.bits_streamed * oh as u64;
    log.words_streamed = per_row.words_streamed * oh as u64;
    Ok(log)
}

/// Crossbar reads per output row.
pub fn steps_per_row(shape: &ConvShape, parallel_window: bool) -> usize {
    if parallel_window {
        shape.out_w().div_ceil(2)
    } else {
        shape.out_w()
    }
}

/// Crossbar reads for a whole layer.
pub fn layer_steps(shape: &ConvShape, parallel_window: bool) -> usize {
    shape.out_h() * steps_per_row(shape, parallel_window)
}

/// A convolution layer followed by an optional `pool x pool` pooling stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PipelineStage {
    pub shape: ConvShape,
    pub pool_after: usize,
}

/// Start offset of each layer, in window-evaluation steps, when layer `l+1`
/// starts as soon as layer `l` has produced the `k_{l+1}` input rows its
/// first window needs.
pub fn pipeline_schedule(layers: &[ConvShape], parallel_window: bool) -> Result<Vec<u64>> {
    let stages: Vec<PipelineStage> = layers
        .iter()
        .map(|&shape| PipelineStage { shape, pool_after: 1 })
        .collect();
    pipeline_schedule_pooled(&stages, parallel_window)
}

pub fn pipeline_schedule_pooled(stages: &[PipelineStage], parallel_window: bool) -> Result<Vec<u64>> {
    if stages.is_empty() {
        return Err(Error::Dataflow("empty layer list".into()));
    }
    let mut offsets = vec![0u64];
    for (l, pair) in stages.windows(2).enumerate() {
        let (prev, next) = (&pair[0], &pair[1]);
        prev.shape.validate()?;
        next.shape.validate()?;
        let p = prev.pool_after.max(1);
        let (c, h, w) = prev.shape.output_dims();
        if next.shape.in_channels != c || next.shape.input_h != h / p || next.shape.input_w != w / p {
            return Err(Error::Dataflow(format!(
                "layer {} input {}x{}x{} does not follow layer {l} output {}x{}x{} pooled by {p}",
                l + 1,
                next.shape.in_channels,
                next.shape.input_h,
                next.shape.input_w,
                c,
                h / p,
                w / p
            )));
        }
        let rows_needed = (next.shape.kernel * p) as u64;
        let step = rows_needed * steps_per_row(&prev.shape, parallel_window) as u64;
        offsets.push(offsets[l] + step);
    }
    Ok(offsets)
}

/// Steps until the last layer finishes. A consumer cannot finish before its
/// producer does, and still owes its final output row after that.
pub fn pipeline_makespan(stages: &[PipelineStage], parallel_window: bool) -> Result<u64> {
    let offsets = pipeline_schedule_pooled(stages, parallel_window)?;
    let mut finish = 0u64;
    for (s, &o) in stages.iter().zip(&offsets) {
        let own = o + layer_steps(&s.shape, parallel_window) as u64;
        let tail = finish + steps_per_row(&s.shape, parallel_window) as u64;
        finish = if o == 0 { own } else { own.max(tail) };
    }
    Ok(finish)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_geometry() {
        let s = ConvShape::square(1, 6, 28, 5).unwrap();
        assert_eq!((s.out_h(), s.out_w(), s.windows()), (24, 24, 576));
        assert_eq!(s.window_len(), 25);
        assert!(ConvShape::square(1, 1, 4, 5).is_err());
        assert!(ConvShape::new(1, 1, 8, 8, 3, 0).is_err());
        let s2 = ConvShape::new(1, 1, 9, 9, 3, 2).unwrap();
        assert_eq!(s2.out_w(), 4);
    }

    #[test]
    fn layout_single_column_and_lookahead() {
        let s = ConvShape::square(1, 6, 28, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ks: Vec<_> = (0..6).map(|_| BinaryTensor::random(&[25], &mut rng)).collect();
        let img = layout_kernels(&s, &ks, &CrossbarConfig::default(), false).unwrap();
        assert_eq!(img.columns.len(), 6);
        assert_eq!(img.rows, 25);
        let par = layout_kernels(&s, &ks, &CrossbarConfig::default(), true).unwrap();
        assert_eq!(par.columns.len(), 12);
        assert_eq!(par.rows, 30);
        let c1 = &par.columns[0];
        assert_eq!(c1.enabled.slice(25, 30).unwrap().count_ones(), 0);
        let c2 = &par.columns[1];
        assert_eq!(c2.enabled.slice(0, 5).unwrap().count_ones(), 0);
        assert_eq!(c2.weights.slice(5, 30).unwrap(), c1.weights.slice(0, 25).unwrap());
    }

    #[test]
    fn oversized_image_reports_plan() {
        let s = ConvShape::square(32, 600, 10, 5).unwrap();
        let ks = vec![BinaryTensor::zeros(&[800]); 600];
        let img = layout_kernels(&s, &ks, &CrossbarConfig::default(), false).unwrap();
        assert_eq!(img.plan.row_splits, 2);
        assert_eq!(img.plan.column_tiles, 2);
        assert!(!img.plan.fits_one_crossbar());
    }

    #[test]
    fn slide_words() {
        for (i, words) in [(6usize, 1u64), (16, 3)] {
            let s = ConvShape::square(i, 1, 28, 5).unwrap();
            let mut buf = ConvWindowBuffer::new(s, false, 1).unwrap();
            let pack = BinaryTensor::zeros(&[s.pack_len()]);
            buf.wrap_down(&vec![pack.clone(); 5]).unwrap();
            let d = buf.slide_right(&[pack]).unwrap();
            assert_eq!(d.words_streamed, words);
            assert_eq!(d.bits_streamed, (5 * i) as u64);
        }
    }

    #[test]
    fn edges_are_enforced() {
        let s = ConvShape::square(1, 1, 4, 3).unwrap();
        let mut buf = ConvWindowBuffer::new(s, false, 1).unwrap();
        let pack = BinaryTensor::zeros(&[3]);
        assert!(buf.slide_right(std::slice::from_ref(&pack)).is_err());
        buf.wrap_down(&vec![pack.clone(); 3]).unwrap();
        assert!(buf.wrap_down(&vec![pack.clone(); 3]).is_err());
        buf.slide_right(std::slice::from_ref(&pack)).unwrap();
        assert!(buf.slide_right(std::slice::from_ref(&pack)).is_err());
        buf.wrap_down(&vec![pack.clone(); 3]).unwrap();
        buf.slide_right(std::slice::from_ref(&pack)).unwrap();
        assert!(matches!(buf.wrap_down(&vec![pack; 3]), Err(Error::Dataflow(m)) if m.contains("complete")));
    }

    #[test]
    fn buffer_holds_current_window() {
        let s = ConvShape::square(2, 1, 6, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = BinaryTensor::random(&[2, 6, 6], &mut rng);
        traverse(&input, &s, false, 1, |st| {
            let expect = BinaryTensor::concat(
                &(0..3).map(|c| input_pack(&input, &s, st.row, st.col + c).unwrap()).collect::<Vec<_>>(),
            );
            assert_eq!(st.wordlines, &expect);
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn traversal_matches_prediction() {
        for (i, h, w, k, st, par) in [
            (1, 28, 28, 5, 1, false),
            (3, 28, 28, 5, 1, true),
            (2, 9, 7, 3, 1, true),
            (2, 9, 8, 3, 1, true),
            (1, 11, 11, 3, 2, false),
            (1, 11, 11, 2, 3, false),
        ] {
            let s = ConvShape::new(i, 1, h, w, k, st).unwrap();
            let input = BinaryTensor::zeros(&[s.input_len()]);
            let mut reads = 0;
            let log = traverse(&input, &s, par, 1, |_| {
                reads += 1;
                Ok(())
            })
            .unwrap();
            assert_eq!(log, predicted_log(&s, par, 1).unwrap(), "{s:?} {par}");
            assert_eq!(reads, layer_steps(&s, par));
        }
    }

    #[test]
    fn schedule_examples() {
        let a = ConvShape::square(1, 6, 28, 5).unwrap();
        let b = ConvShape::square(6, 16, 24, 5).unwrap();
        assert_eq!(pipeline_schedule(&[a], false).unwrap(), vec![0]);
        assert_eq!(pipeline_schedule(&[a, b], false).unwrap(), vec![0, 5 * 24]);
        assert_eq!(pipeline_schedule(&[a, b], true).unwrap(), vec![0, 5 * 12]);
        assert!(pipeline_schedule(&[], false).is_err());
        assert!(pipeline_schedule(&[b, a], false).is_err());
        let pooled = ConvShape::square(6, 16, 12, 5).unwrap();
        let st = [
            PipelineStage { shape: a, pool_after: 2 },
            PipelineStage { shape: pooled, pool_after: 1 },
        ];
        assert_eq!(pipeline_schedule_pooled(&st, false).unwrap(), vec![0, 10 * 24]);
        assert_eq!(pipeline_makespan(&st, false).unwrap(), 576 + 8);
    }

    #[test]
    fn transaction_csv() {
        let mut out = Vec::new();
        write_transaction_csv(&mut out, &[("conv1".into(), TransactionLog { slides: 3, ..Default::default() })]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "layer,slides,wraps,words_streamed,reprogram_events\nconv1,3,0,0,0\n");
    }
}
