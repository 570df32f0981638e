//! Energy and latency estimates for the SA-thresholded design and for a
//! baseline that senses XNOR results differentially and counts them with
//! shared digital popcount units.
//!
//! Every quantity is per inference of one sample. Energies are in joules,
//! latencies in clock cycles. Layers run one after another in the additive
//! total; `pipelined_latency_cycles` overlaps convolution layers following
//! the row-granular start schedule of the dataflow module.
//!
//! Non-binarised layers are costed identically in both designs: inputs are
//! applied bit-serially, each weight bit occupies its own column with its
//! own popcount unit, and the partial sums are combined by shift-and-add.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::crossbar::{CrossbarConfig, ReferenceSet, ReferenceSpec};
use crate::bincore::TieRule;
use crate::dataflow;
use crate::error::{Error, Result};
use crate::netio::topology::{LayerKind, LayerSpec, NetworkSpec, Precision};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams<T> {
    pub clock_hz: T,
    pub bus_width_bits: u32,
    pub buffer_transfer_power_w: T,
    /// Per activated cell per read.
    pub crossbar_read_energy_j: T,
    pub crossbar_read_latency_cycles: T,
    /// Per column per reference comparison.
    pub sa_compare_energy_j: T,
    pub sa_cycle_per_reference: T,
    /// Per column popcount.
    pub popcount_unit_energy_j: T,
    pub popcount_unit_latency_cycles: T,
    /// Per partial sum merged.
    pub shift_add_energy_j: T,
    pub shift_add_latency_cycles: T,
    /// Columns served by one popcount unit in the baseline.
    pub baseline_popcount_group: u32,
    /// Per cell sensed by the baseline's differential sense amplifiers.
    pub baseline_sense_energy_j: T,
    pub baseline_sense_cycles_per_output: T,
}

impl<T: Real> Default for CostParams<T> {
    fn default() -> Self {
        let f = <T as Real>::from_f64_lossy;
        Self {
            clock_hz: f(1e9),
            bus_width_bits: 32,
            buffer_transfer_power_w: f(5e-3),
            crossbar_read_energy_j: f(1e-13),
            crossbar_read_latency_cycles: f(10.0),
            sa_compare_energy_j: f(2e-14),
            sa_cycle_per_reference: f(1.0),
            popcount_unit_energy_j: f(1e-12),
            popcount_unit_latency_cycles: f(2.0),
            shift_add_energy_j: f(5e-13),
            shift_add_latency_cycles: f(1.0),
            baseline_popcount_group: 16,
            baseline_sense_energy_j: f(5e-14),
            baseline_sense_cycles_per_output: f(1.0),
        }
    }
}

impl<T: Real + Serialize + DeserializeOwned> CostParams<T> {
    pub const KEYS: [&'static str; 14] = [
        "clock_hz",
        "bus_width_bits",
        "buffer_transfer_power_w",
        "crossbar_read_energy_j",
        "crossbar_read_latency_cycles",
        "sa_compare_energy_j",
        "sa_cycle_per_reference",
        "popcount_unit_energy_j",
        "popcount_unit_latency_cycles",
        "shift_add_energy_j",
        "shift_add_latency_cycles",
        "baseline_popcount_group",
        "baseline_sense_energy_j",
        "baseline_sense_cycles_per_output",
    ];

    /// Parses a flat TOML table; every key is required.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        Self::from_table(&table)
    }

    pub fn from_table(table: &toml::Table) -> Result<Self> {
        let missing: Vec<String> = Self::KEYS
            .iter()
            .filter(|k| !table.contains_key(**k))
            .map(|k| (*k).to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingKeys(missing));
        }
        // Integers are accepted for float fields.
        let mut table = table.clone();
        for (k, v) in table.iter_mut() {
            if let (toml::Value::Integer(i), false) = (&*v, k == "bus_width_bits" || k == "baseline_popcount_group") {
                *v = toml::Value::Float(*i as f64);
            }
        }
        let p: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("cost params serialise")
    }
}

impl<T: Real> CostParams<T> {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("clock_hz", self.clock_hz),
            ("buffer_transfer_power_w", self.buffer_transfer_power_w),
            ("crossbar_read_energy_j", self.crossbar_read_energy_j),
            ("crossbar_read_latency_cycles", self.crossbar_read_latency_cycles),
            ("sa_compare_energy_j", self.sa_compare_energy_j),
            ("sa_cycle_per_reference", self.sa_cycle_per_reference),
            ("popcount_unit_energy_j", self.popcount_unit_energy_j),
            ("popcount_unit_latency_cycles", self.popcount_unit_latency_cycles),
            ("shift_add_energy_j", self.shift_add_energy_j),
            ("shift_add_latency_cycles", self.shift_add_latency_cycles),
            ("baseline_sense_energy_j", self.baseline_sense_energy_j),
            ("baseline_sense_cycles_per_output", self.baseline_sense_cycles_per_output),
        ];
        for (k, v) in reals {
            if !(v.is_finite() && v > T::zero()) {
                return Err(Error::config(format!("{k} must be finite and > 0, got {v}")));
            }
        }
        if self.bus_width_bits == 0 || self.baseline_popcount_group == 0 {
            return Err(Error::config("bus_width_bits and baseline_popcount_group must be > 0"));
        }
        Ok(())
    }

    /// Energy of moving one bus word.
    fn word_energy(&self) -> T {
        self.buffer_transfer_power_w / self.clock_hz
    }
}

/// Mapping choices shared by both designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[derive(Default)]
pub struct DesignOptions {
    pub crossbar: CrossbarConfig,
    /// References per SA in the proposed design.
    pub refs: ReferenceSpec,
    pub parallel_window: bool,
}


#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Proposed,
    Baseline,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Proposed => "proposed",
            Design::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Breakdown<T> {
    pub crossbar: T,
    pub sa: T,
    pub digital: T,
    pub transfer: T,
}

impl<T: Real> Breakdown<T> {
    pub fn total(&self) -> T {
        self.crossbar + self.sa + self.digital + self.transfer
    }

    fn add(&mut self, o: &Breakdown<T>) {
        self.crossbar += o.crossbar;
        self.sa += o.sa;
        self.digital += o.digital;
        self.transfer += o.transfer;
    }

    fn scale(&self, s: T) -> Breakdown<T> {
        Breakdown {
            crossbar: self.crossbar * s,
            sa: self.sa * s,
            digital: self.digital * s,
            transfer: self.transfer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCost<T> {
    pub layer: usize,
    pub name: String,
    /// Crossbar reads per sample.
    pub steps: u64,
    pub energy_j: Breakdown<T>,
    pub latency_cycles: Breakdown<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport<T> {
    pub design: Design,
    pub network: String,
    pub layers: Vec<LayerCost<T>>,
    pub energy_j: Breakdown<T>,
    pub total_energy_j: T,
    pub latency_cycles: Breakdown<T>,
    pub total_latency_cycles: T,
    pub total_latency_s: T,
    pub pipelined_latency_cycles: T,
}

fn real<T: Real>(v: u64) -> T {
    <T as Real>::from_u64(v)
}

fn ceil_div(a: usize, b: usize) -> u64 {
    a.div_ceil(b) as u64
}

/// Input bits per element for a weight layer at position `first`.
fn input_bits(layer: &LayerSpec, first: bool) -> usize {
    match layer.precision {
        Some(Precision::Quantized { bits }) if first => usize::from(bits),
        _ => 1,
    }
}

/// Words streamed into a layer per sample.
fn transfer_words(layer: &LayerSpec, bits: usize, design: Design, parallel: bool, bus: u32) -> Result<u64> {
    let bus = bus as usize;
    Ok(match (layer.conv_shape(), design) {
        (Some(shape), Design::Proposed) => dataflow::predicted_log_with_bus(&shape, parallel, bits, bus)?.words_streamed,
        (Some(shape), Design::Baseline) => shape.windows() as u64 * ceil_div(shape.window_len() * bits, bus),
        (None, _) => ceil_div(layer.input.len() * bits, bus),
    })
}

/// Cost of a non-binarised weight layer, shared by both designs.
fn quantized_cost<T: Real>(layer: &LayerSpec, wbits: usize, ibits: usize, p: &CostParams<T>, cfg: &CrossbarConfig) -> (Breakdown<T>, Breakdown<T>) {
    let nu = layer.fan_in();
    let cols = layer.outputs() * wbits;
    let splits = nu.div_ceil(cfg.rows);
    let slices = (cols * splits) as u64;
    let reads = real::<T>(ibits as u64);
    let energy = Breakdown {
        crossbar: reads * real::<T>((nu * cols) as u64) * p.crossbar_read_energy_j,
        sa: T::zero(),
        digital: reads * real::<T>(slices) * (p.popcount_unit_energy_j + p.shift_add_energy_j),
        transfer: T::zero(),
    };
    let latency = Breakdown {
        crossbar: reads * p.crossbar_read_latency_cycles,
        sa: T::zero(),
        digital: reads * (p.popcount_unit_latency_cycles + p.shift_add_latency_cycles),
        transfer: T::zero(),
    };
    (energy, latency)
}

fn binary_cost<T: Real>(layer: &LayerSpec, design: Design, p: &CostParams<T>, opts: &DesignOptions) -> (Breakdown<T>, Breakdown<T>) {
    let nu = layer.fan_in();
    let m = layer.outputs();
    let splits = nu.div_ceil(opts.crossbar.rows);
    let cells = real::<T>((nu * m) as u64);
    match design {
        Design::Proposed => {
            let refs = real::<T>(opts.refs.count as u64);
            let energy = Breakdown {
                crossbar: cells * p.crossbar_read_energy_j,
                sa: real::<T>((m * splits) as u64) * refs * p.sa_compare_energy_j,
                digital: T::zero(),
                transfer: T::zero(),
            };
            let latency = Breakdown {
                crossbar: p.crossbar_read_latency_cycles,
                sa: refs * p.sa_cycle_per_reference,
                digital: T::zero(),
                transfer: T::zero(),
            };
            (energy, latency)
        }
        Design::Baseline => {
            let passes = real::<T>(ceil_div(m * splits, p.baseline_popcount_group as usize));
            let two = T::one() + T::one();
            let energy = Breakdown {
                crossbar: two * cells * p.crossbar_read_energy_j,
                sa: cells * p.baseline_sense_energy_j,
                digital: real::<T>((m * splits) as u64) * p.popcount_unit_energy_j,
                transfer: T::zero(),
            };
            let latency = Breakdown {
                crossbar: passes * p.crossbar_read_latency_cycles,
                sa: real::<T>(m as u64) * p.baseline_sense_cycles_per_output,
                digital: passes * p.popcount_unit_latency_cycles,
                transfer: T::zero(),
            };
            (energy, latency)
        }
    }
}

/// Cost of one layer; `first` marks the network's first weight layer.
pub fn estimate_layer<T: Real>(
    index: usize,
    layer: &LayerSpec,
    first: bool,
    design: Design,
    p: &CostParams<T>,
    opts: &DesignOptions,
) -> Result<LayerCost<T>> {
    let name = layer.to_string();
    if !layer.is_weight_layer() {
        // Pooling is an OR in the periphery; its cost is below the model's resolution.
        return Ok(LayerCost {
            layer: index,
            name,
            steps: 0,
            energy_j: Breakdown::default(),
            latency_cycles: Breakdown::default(),
        });
    }
    let steps = match layer.conv_shape() {
        Some(s) if design == Design::Proposed => dataflow::layer_steps(&s, opts.parallel_window),
        _ => layer.windows(),
    } as u64;
    let windows = real::<T>(layer.windows() as u64);
    let step_count = real::<T>(steps);
    let (per_e, per_l) = match layer.precision {
        Some(Precision::Quantized { bits }) => quantized_cost(layer, usize::from(bits), input_bits(layer, first), p, &opts.crossbar),
        _ => {
            if design == Design::Proposed {
                check_references(index, layer, opts)?;
            }
            binary_cost(layer, design, p, opts)
        }
    };
    let parallel = opts.parallel_window && design == Design::Proposed && layer.conv_shape().is_some();
    let words = transfer_words(layer, input_bits(layer, first), design, parallel, p.bus_width_bits)
        .map_err(|e| Error::Layer {
            layer: index,
            message: e.to_string(),
        })?;
    let mut energy_j = per_e.scale(windows);
    energy_j.transfer = real::<T>(words) * p.word_energy();
    let mut latency_cycles = per_l.scale(step_count);
    latency_cycles.transfer = real::<T>(words);
    Ok(LayerCost {
        layer: index,
        name,
        steps,
        energy_j,
        latency_cycles,
    })
}

fn check_references(index: usize, layer: &LayerSpec, opts: &DesignOptions) -> Result<()> {
    let rows = opts.crossbar.rows;
    let nu = layer.fan_in();
    if nu <= rows {
        // Unsplit columns read the main reference only.
        return Ok(());
    }
    let lens: BTreeSet<usize> = (0..nu).step_by(rows).map(|s| rows.min(nu - s)).collect();
    for len in lens {
        ReferenceSet::for_segment(len, opts.refs, TieRule::Strict).map_err(|e| Error::Layer {
            layer: index,
            message: format!("cannot place references on a {len}-row segment: {e}"),
        })?;
    }
    Ok(())
}

fn estimate<T: Real>(net: &NetworkSpec, design: Design, p: &CostParams<T>, opts: &DesignOptions) -> Result<CostReport<T>> {
    p.validate()?;
    let first = net.weight_layers().next().map(|(i, _)| i);
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| estimate_layer(i, l, Some(i) == first, design, p, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut energy_j = Breakdown::default();
    let mut latency_cycles = Breakdown::default();
    for l in &layers {
        energy_j.add(&l.energy_j);
        latency_cycles.add(&l.latency_cycles);
    }
    let total = latency_cycles.total();
    let pipelined = pipelined_latency(net, &layers);
    Ok(CostReport {
        design,
        network: net.topology(),
        layers,
        total_energy_j: energy_j.total(),
        energy_j,
        total_latency_cycles: total,
        total_latency_s: total / p.clock_hz,
        latency_cycles,
        pipelined_latency_cycles: pipelined,
    })
}

/// Overlaps runs of consecutive convolution layers: a layer starts once its
/// producer has emitted the rows its first window needs, and cannot finish
/// earlier than one of its own output rows after the producer finishes.
/// Any other layer waits for its producer to finish.
fn pipelined_latency<T: Real>(net: &NetworkSpec, costs: &[LayerCost<T>]) -> T {
    let mut finish = T::zero();
    // Previous convolution layer: (start, per-row cycles, pool factor since).
    let mut prev: Option<(T, T, usize)> = None;
    for (layer, cost) in net.layers.iter().zip(costs) {
        let lat = cost.latency_cycles.total();
        match (layer.kind, layer.conv_shape()) {
            (LayerKind::Pool { size }, _) => {
                if let Some(p) = prev.as_mut() {
                    p.2 *= size;
                }
            }
            (_, Some(shape)) => {
                let rows = real::<T>(shape.out_h() as u64);
                let per_row = lat / rows;
                let start = match prev {
                    Some((s, producer_row, pool)) => s + real::<T>((shape.kernel * pool) as u64) * producer_row,
                    None => finish,
                };
                let done = start + lat;
                let tail = finish + per_row;
                finish = if done > tail { done } else { tail };
                prev = Some((start, per_row, 1));
            }
            _ => {
                finish += lat;
                prev = None;
            }
        }
    }
    finish
}

pub fn estimate_proposed<T: Real>(net: &NetworkSpec, p: &CostParams<T>, opts: &DesignOptions) -> Result<CostReport<T>> {
    estimate(net, Design::Proposed, p, opts)
}

pub fn estimate_baseline<T: Real>(net: &NetworkSpec, p: &CostParams<T>, opts: &DesignOptions) -> Result<CostReport<T>> {
    estimate(net, Design::Baseline, p, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerComparison<T> {
    pub layer: usize,
    pub name: String,
    pub energy_improvement: T,
    pub latency_improvement: T,
}

/// Baseline cost divided by proposed cost.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison<T> {
    pub network: String,
    pub energy_improvement: T,
    pub latency_improvement: T,
    pub pipelined_latency_improvement: T,
    pub layers: Vec<LayerComparison<T>>,
}

pub fn compare<T: Real>(proposed: &CostReport<T>, baseline: &CostReport<T>) -> Result<Comparison<T>> {
    if proposed.design != Design::Proposed || baseline.design != Design::Baseline {
        return Err(Error::invalid("compare expects a proposed and a baseline report"));
    }
    if proposed.network != baseline.network || proposed.layers.len() != baseline.layers.len() {
        return Err(Error::invalid(format!(
            "reports describe different networks: {:?} vs {:?}",
            proposed.network, baseline.network
        )));
    }
    let layers = proposed
        .layers
        .iter()
        .zip(&baseline.layers)
        .filter(|(p, _)| p.energy_j.total() > T::zero())
        .map(|(p, b)| LayerComparison {
            layer: p.layer,
            name: p.name.clone(),
            energy_improvement: b.energy_j.total() / p.energy_j.total(),
            latency_improvement: b.latency_cycles.total() / p.latency_cycles.total(),
        })
        .collect();
    Ok(Comparison {
        network: proposed.network.clone(),
        energy_improvement: baseline.total_energy_j / proposed.total_energy_j,
        latency_improvement: baseline.total_latency_cycles / proposed.total_latency_cycles,
        pipelined_latency_improvement: baseline.pipelined_latency_cycles / proposed.pipelined_latency_cycles,
        layers,
    })
}

/// Per-layer rows for CSV output.
pub fn write_report_csv<W: std::io::Write, T: Real>(out: W, reports: &[&CostReport<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "network",
        "design",
        "layer",
        "name",
        "steps",
        "energy_crossbar_j",
        "energy_sa_j",
        "energy_digital_j",
        "energy_transfer_j",
        "energy_total_j",
        "latency_crossbar_cycles",
        "latency_sa_cycles",
        "latency_digital_cycles",
        "latency_transfer_cycles",
        "latency_total_cycles",
    ])?;
    for r in reports {
        for l in &r.layers {
            let e = &l.energy_j;
            let t = &l.latency_cycles;
            w.write_record([
                r.network.clone(),
                r.design.to_string(),
                l.layer.to_string(),
                l.name.clone(),
                l.steps.to_string(),
                format!("{:e}", e.crossbar),
                format!("{:e}", e.sa),
                format!("{:e}", e.digital),
                format!("{:e}", e.transfer),
                format!("{:e}", e.total()),
                format!("{}", t.crossbar),
                format!("{}", t.sa),
                format!("{}", t.digital),
                format!("{}", t.transfer),
                format!("{}", t.total()),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fc_net(m: usize) -> NetworkSpec {
        NetworkSpec::parse(&format!("FC(512) - FC({m}) - FC(10)")).unwrap()
    }

    fn both(net: &NetworkSpec, p: &CostParams<f64>, o: &DesignOptions) -> (CostReport<f64>, CostReport<f64>) {
        (estimate_proposed(net, p, o).unwrap(), estimate_baseline(net, p, o).unwrap())
    }

    #[test]
    fn totals_equal_breakdown_sums() {
        let net = NetworkSpec::preset("LeNet-5").unwrap();
        let (pr, ba) = both(&net, &CostParams::default(), &DesignOptions::default());
        for r in [&pr, &ba] {
            let e: f64 = r.layers.iter().map(|l| l.energy_j.total()).sum();
            assert!((e - r.total_energy_j).abs() <= 1e-12 * e);
            let t: f64 = r.layers.iter().map(|l| l.latency_cycles.total()).sum();
            assert!((t - r.total_latency_cycles).abs() <= 1e-9 * t);
            assert!(r.pipelined_latency_cycles <= r.total_latency_cycles);
            assert!(r.pipelined_latency_cycles >= r.layers.iter().map(|l| l.latency_cycles.total()).fold(0.0, f64::max));
        }
    }

    #[test]
    fn baseline_popcount_groups() {
        let net = fc_net(512);
        let p = CostParams::<f64>::default();
        let l = estimate_layer(1, &net.layers[1], false, Design::Baseline, &p, &DesignOptions::default()).unwrap();
        assert_eq!(l.latency_cycles.digital, 32.0 * p.popcount_unit_latency_cycles);
        let pr = estimate_layer(1, &net.layers[1], false, Design::Proposed, &p, &DesignOptions::default()).unwrap();
        assert_eq!(pr.latency_cycles.crossbar + pr.latency_cycles.sa, 11.0);
    }

    #[test]
    fn fc_latency_independent_of_outputs() {
        let p = CostParams::<f64>::default();
        let o = DesignOptions::default();
        let lat = |m| {
            let n = fc_net(m);
            let l = estimate_layer(1, &n.layers[1], false, Design::Proposed, &p, &o).unwrap();
            l.latency_cycles.total()
        };
        assert_eq!(lat(16), lat(512));
    }

    #[test]
    fn latency_ratio_grows_with_outputs() {
        let p = CostParams::<f64>::default();
        let o = DesignOptions::default();
        let mut last = 0.0;
        for m in [16, 64, 256, 512] {
            let n = fc_net(m);
            let pr = estimate_layer(1, &n.layers[1], false, Design::Proposed, &p, &o).unwrap();
            let ba = estimate_layer(1, &n.layers[1], false, Design::Baseline, &p, &o).unwrap();
            let r = ba.latency_cycles.total() / pr.latency_cycles.total();
            assert!(r > last, "m={m}: {r} <= {last}");
            last = r;
        }
    }

    #[test]
    fn three_references() {
        let net = NetworkSpec::preset("MLP-M").unwrap();
        let p = CostParams::<f64>::default();
        let one = estimate_proposed(&net, &p, &DesignOptions::default()).unwrap();
        let o3 = DesignOptions {
            refs: ReferenceSpec::new(3, 8).unwrap(),
            ..Default::default()
        };
        let three = estimate_proposed(&net, &p, &o3).unwrap();
        for (a, b) in one.layers.iter().zip(&three.layers) {
            if net.layers[a.layer].is_binary() {
                assert_eq!(b.latency_cycles.sa - a.latency_cycles.sa, 2.0 * a.steps as f64);
                assert!((b.energy_j.sa / a.energy_j.sa - 3.0).abs() < 1e-12);
            }
        }
        let change = (three.total_energy_j - one.total_energy_j) / one.total_energy_j;
        assert!(change > 0.0 && change < 0.02, "{change}");
    }

    #[test]
    fn improvements_above_one_for_presets() {
        let p = CostParams::<f64>::default();
        for (name, _) in crate::netio::topology::PRESETS {
            let net = NetworkSpec::preset(name).unwrap();
            let (pr, ba) = both(&net, &p, &DesignOptions::default());
            let c = compare(&pr, &ba).unwrap();
            assert!(c.energy_improvement > 1.0 && c.latency_improvement > 1.0, "{name}: {c:?}");
        }
    }

    #[test]
    fn ratios_invariant_under_rescaling() {
        let net = NetworkSpec::preset("CNN-1").unwrap();
        let p = CostParams::<f64>::default();
        let o = DesignOptions::default();
        let (pr, ba) = both(&net, &p, &o);
        let base = compare(&pr, &ba).unwrap();
        let mut fast = p.clone();
        fast.clock_hz *= 3.0;
        let (pr2, ba2) = both(&net, &fast, &o);
        let c = compare(&pr2, &ba2).unwrap();
        assert!((c.latency_improvement - base.latency_improvement).abs() < 1e-12);
        let mut scaled = p.clone();
        for v in [
            &mut scaled.buffer_transfer_power_w,
            &mut scaled.crossbar_read_energy_j,
            &mut scaled.sa_compare_energy_j,
            &mut scaled.popcount_unit_energy_j,
            &mut scaled.shift_add_energy_j,
            &mut scaled.baseline_sense_energy_j,
        ] {
            *v *= 7.5;
        }
        let (pr3, ba3) = both(&net, &scaled, &o);
        let c = compare(&pr3, &ba3).unwrap();
        assert!((c.energy_improvement / base.energy_improvement - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_in_fields() {
        let net = NetworkSpec::preset("LeNet-5").unwrap();
        let p = CostParams::<f64>::default();
        let o = DesignOptions::default();
        let (pr, ba) = both(&net, &p, &o);
        type Field = fn(&mut CostParams<f64>) -> &mut f64;
        let energy_fields: [Field; 6] = [
            |p| &mut p.buffer_transfer_power_w,
            |p| &mut p.crossbar_read_energy_j,
            |p| &mut p.sa_compare_energy_j,
            |p| &mut p.popcount_unit_energy_j,
            |p| &mut p.shift_add_energy_j,
            |p| &mut p.baseline_sense_energy_j,
        ];
        for f in energy_fields {
            let mut q = p.clone();
            *f(&mut q) *= 2.0;
            let (pr2, ba2) = both(&net, &q, &o);
            assert!(pr2.total_energy_j + ba2.total_energy_j > pr.total_energy_j + ba.total_energy_j);
        }
        let latency_fields: [Field; 6] = [
            |p| &mut p.crossbar_read_latency_cycles,
            |p| &mut p.sa_cycle_per_reference,
            |p| &mut p.popcount_unit_latency_cycles,
            |p| &mut p.shift_add_latency_cycles,
            |p| &mut p.baseline_sense_cycles_per_output,
            |p| &mut p.clock_hz,
        ];
        for (i, f) in latency_fields.into_iter().enumerate() {
            let mut q = p.clone();
            *f(&mut q) *= 2.0;
            let (pr2, ba2) = both(&net, &q, &o);
            let before = pr.total_latency_s + ba.total_latency_s;
            let after = pr2.total_latency_s + ba2.total_latency_s;
            if i == 5 {
                assert!(after < before);
            } else {
                assert!(after > before, "field {i}");
            }
        }
    }

    #[test]
    fn first_layer_dominates_lenet() {
        let net = NetworkSpec::preset("LeNet-5").unwrap();
        let pr = estimate_proposed(&net, &CostParams::<f64>::default(), &DesignOptions::default()).unwrap();
        let first = pr.layers[0].energy_j.total();
        assert!(pr.layers.iter().skip(1).all(|l| l.energy_j.total() < first));
        let first = pr.layers[0].latency_cycles.total();
        assert!(pr.layers.iter().skip(1).all(|l| l.latency_cycles.total() < first));
    }

    #[test]
    fn params_toml_round_trip_and_missing_keys() {
        let p = CostParams::<f64>::default();
        let text = p.to_toml_string();
        assert_eq!(CostParams::<f64>::from_toml_str(&text).unwrap(), p);
        let pf = CostParams::<f32>::from_toml_str(&text).unwrap();
        assert_eq!(pf.bus_width_bits, 32);
        let cut: String = text
            .lines()
            .filter(|l| !l.starts_with("clock_hz") && !l.starts_with("sa_compare_energy_j"))
            .map(|l| format!("{l}\n"))
            .collect();
        match CostParams::<f64>::from_toml_str(&cut) {
            Err(Error::MissingKeys(k)) => assert_eq!(k, vec!["clock_hz", "sa_compare_energy_j"]),
            other => panic!("{other:?}"),
        }
        let bad = text.replace("clock_hz = 1000000000.0", "clock_hz = -1.0");
        assert!(matches!(CostParams::<f64>::from_toml_str(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn compare_rejects_mismatch() {
        let p = CostParams::<f64>::default();
        let o = DesignOptions::default();
        let a = estimate_proposed(&fc_net(16), &p, &o).unwrap();
        let b = estimate_baseline(&fc_net(32), &p, &o).unwrap();
        assert!(compare(&a, &b).is_err());
        assert!(compare(&b, &a).is_err());
    }

    #[test]
    fn unplaceable_references_name_the_layer() {
        let net = NetworkSpec::parse("FC(784) - FC(600) - FC(10)").unwrap();
        let o = DesignOptions {
            refs: ReferenceSpec::new(3, 200).unwrap(),
            ..Default::default()
        };
        let e = estimate_proposed(&net, &CostParams::<f64>::default(), &o).unwrap_err();
        assert!(matches!(e, Error::Layer { layer: 1, .. }), "{e}");
    }

    #[test]
    fn mlps_gain_more_latency_than_convnets() {
        let p = CostParams::<f64>::default();
        let gain = |name: &str| {
            let net = NetworkSpec::preset(name).unwrap();
            let (pr, ba) = both(&net, &p, &DesignOptions::default());
            compare(&pr, &ba).unwrap().latency_improvement
        };
        let conv = ["LeNet-5", "CNN-1", "CNN-2"].map(gain);
        let mlp = ["MLP-S", "MLP-M", "MLP-L"].map(gain);
        let best_conv = conv.iter().copied().fold(0.0, f64::max);
        assert!(mlp.iter().all(|&m| m > best_conv), "{conv:?} {mlp:?}");
    }
}
