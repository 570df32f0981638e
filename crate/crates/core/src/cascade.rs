//! Cascading functions for split columns and the accuracy-loss analyses
//! built on them.
//!
//! A cascading function sees only per-segment SA interval indices. AND and
//! OR use the main reference alone. With auxiliary references each interval
//! brackets the segment's true popcount in `[lo, hi]`:
//!
//! - `F1` fires iff the lower bounds alone prove a majority,
//!   `sum(lo) > n/2`. It never produces a false positive.
//! - `F2` fires iff the interval midpoints indicate a majority,
//!   `sum((lo + hi) / 2) > n/2`. It relaxes F1: every F1 positive is an F2
//!   positive.
//!
//! For more than two segments the bounds are folded left to right; since the
//! fold is a sum the order does not change the result.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bincore::TieRule;
use crate::crossbar::{sa_read, ReferenceSet, ReferenceSpec, SaReadout};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CascadeKind {
    And,
    Or,
    F1,
    F2,
}

impl CascadeKind {
    pub const ALL: [CascadeKind; 4] = [CascadeKind::And, CascadeKind::Or, CascadeKind::F1, CascadeKind::F2];

    pub fn needs_aux(self) -> bool {
        matches!(self, CascadeKind::F1 | CascadeKind::F2)
    }
}

impl fmt::Display for CascadeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CascadeKind::And => "and",
            CascadeKind::Or => "or",
            CascadeKind::F1 => "f1",
            CascadeKind::F2 => "f2",
        })
    }
}

impl FromStr for CascadeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "and" => Ok(CascadeKind::And),
            "or" => Ok(CascadeKind::Or),
            "f1" => Ok(CascadeKind::F1),
            "f2" => Ok(CascadeKind::F2),
            other => Err(Error::config(format!("unknown cascade policy {other:?} (and|or|f1|f2)"))),
        }
    }
}

/// A cascading function together with the SA reference configuration it reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadePolicy {
    pub kind: CascadeKind,
    pub refs: ReferenceSpec,
    #[serde(default)]
    pub tie: TieRule,
}

impl CascadePolicy {
    pub fn new(kind: CascadeKind, refs: ReferenceSpec) -> Result<Self> {
        if kind.needs_aux() && refs.count < 3 {
            return Err(Error::config(format!(
                "{kind} needs at least 3 references, got {}",
                refs.count
            )));
        }
        Ok(Self {
            kind,
            refs,
            tie: TieRule::Strict,
        })
    }

    pub fn and() -> Self {
        Self::new(CascadeKind::And, ReferenceSpec::single()).unwrap()
    }

    pub fn or() -> Self {
        Self::new(CascadeKind::Or, ReferenceSpec::single()).unwrap()
    }

    pub fn with_tie(mut self, tie: TieRule) -> Self {
        self.tie = tie;
        self
    }

    pub fn with_distance(self, distance: usize) -> Result<Self> {
        Self::new(self.kind, ReferenceSpec::new(self.refs.count, distance)?).map(|p| p.with_tie(self.tie))
    }
}

/// Running `[lo, hi]` bracket on the summed popcount of folded segments.
#[derive(Clone, Copy, Debug, Default)]
struct Bracket {
    lo: u64,
    hi: u64,
}

impl Bracket {
    fn combine(self, other: Bracket) -> Bracket {
        Bracket {
            lo: self.lo + other.lo,
            hi: self.hi + other.hi,
        }
    }
}

/// Merges per-segment readouts into one activation bit.
pub fn cascade(policy: &CascadePolicy, readouts: &[SaReadout], refs: &[ReferenceSet]) -> Result<bool> {
    if readouts.is_empty() {
        return Err(Error::invalid("cascade needs at least one readout"));
    }
    Error::check_len(readouts.len(), refs.len())?;
    for (r, s) in readouts.iter().zip(refs) {
        if r.interval > s.count() {
            return Err(Error::invalid(format!(
                "interval {} out of range for {} references",
                r.interval,
                s.count()
            )));
        }
        if policy.kind.needs_aux() && s.count() < 3 {
            return Err(Error::config(format!(
                "{} needs at least 3 references, segment has {}",
                policy.kind,
                s.count()
            )));
        }
    }
    let total: u64 = refs.iter().map(|s| s.segment_len() as u64).sum();
    let mut pairs = readouts.iter().zip(refs);
    Ok(match policy.kind {
        CascadeKind::And => pairs.all(|(r, s)| r.above_main(s)),
        CascadeKind::Or => pairs.any(|(r, s)| r.above_main(s)),
        CascadeKind::F1 | CascadeKind::F2 => {
            let b = pairs
                .map(|(r, s)| {
                    let (lo, hi) = s.interval_bounds(r.interval);
                    Bracket {
                        lo: lo as u64,
                        hi: hi as u64,
                    }
                })
                .fold(Bracket::default(), Bracket::combine);
            if policy.kind == CascadeKind::F1 {
                policy.tie.fires_doubled(2 * b.lo, total)
            } else {
                policy.tie.fires_doubled(b.lo + b.hi, total)
            }
        }
    })
}

/// Cascade output for known per-segment popcounts.
pub fn cascade_levels(policy: &CascadePolicy, levels: &[usize], refs: &[ReferenceSet]) -> Result<bool> {
    Error::check_len(refs.len(), levels.len())?;
    let readouts = levels
        .iter()
        .zip(refs)
        .map(|(&l, r)| sa_read(l, r))
        .collect::<Result<Vec<_>>>()?;
    cascade(policy, &readouts, refs)
}

/// Exact mismatch counts of a cascading function against the golden output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRegionReport {
    pub total_pairs: u128,
    pub mismatches: u128,
    /// Cascade 1, golden 0.
    pub false_positives: u128,
    /// Cascade 0, golden 1.
    pub false_negatives: u128,
    pub loss_fraction: f64,
}

impl LossRegionReport {
    fn from_counts(total: u128, fp: u128, fn_: u128) -> Self {
        Self {
            total_pairs: total,
            mismatches: fp + fn_,
            false_positives: fp,
            false_negatives: fn_,
            loss_fraction: (fp + fn_) as f64 / total as f64,
        }
    }
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

/// Number of `(A, B)` half-vector pairs of length `half_len` whose XNOR has
/// exactly `m` ones: `C(half, m) * 2^m * 2^(half - m)`.
pub fn pair_count(half_len: u32, m: u32) -> u128 {
    binomial(u64::from(half_len), u64::from(m)) * (1u128 << m) * (1u128 << (half_len - m))
}

/// Largest vector size whose pair counts fit the 128-bit accumulators.
pub const MAX_ENUMERATED_NU: usize = 62;

/// Exact loss of `policy` over all `(A, B)` pairs of length `nu`, split into
/// two halves, by weighting each `(m, n)` popcount cell with its pair count.
pub fn enumerate_loss(nu: usize, policy: &CascadePolicy) -> Result<LossRegionReport> {
    if nu < 2 || !nu.is_multiple_of(2) || nu > MAX_ENUMERATED_NU {
        return Err(Error::invalid(format!(
            "enumerate_loss needs an even vector size in 2..={MAX_ENUMERATED_NU}, got {nu}"
        )));
    }
    let half = nu / 2;
    let refs = ReferenceSet::for_segment(half, policy.refs, policy.tie)?;
    let refs = [refs.clone(), refs];
    let (mut fp, mut fn_) = (0u128, 0u128);
    for m in 0..=half {
        for n in 0..=half {
            let out = cascade_levels(policy, &[m, n], &refs)?;
            let golden = policy.tie.fires(m + n, nu);
            if out != golden {
                let w = pair_count(half as u32, m as u32) * pair_count(half as u32, n as u32);
                if out {
                    fp += w;
                } else {
                    fn_ += w;
                }
            }
        }
    }
    Ok(LossRegionReport::from_counts(1u128 << (2 * nu), fp, fn_))
}

/// Red region: AND outputs 0 although the halves' popcounts `d1 + d2`
/// exceed `nu/2`, because one half is not above its own main reference.
pub fn region_predicate_and(d1: usize, d2: usize, nu: usize) -> bool {
    2 * (d1 + d2) > nu && (4 * d1 <= nu || 4 * d2 <= nu)
}

/// Blue region: OR outputs 1 although `d1 + d2 <= nu/2`.
pub fn region_predicate_or(d1: usize, d2: usize, nu: usize) -> bool {
    2 * (d1 + d2) <= nu && (4 * d1 > nu || 4 * d2 > nu)
}

/// Probability of a mismatch for AND/OR when every XNOR bit is an
/// independent fair coin, for arbitrary segment lengths.
pub fn uniform_loss_fraction(policy: &CascadePolicy, segment_lens: &[usize]) -> Result<f64> {
    if policy.kind.needs_aux() {
        return Err(Error::config("uniform_loss_fraction supports AND and OR only"));
    }
    if segment_lens.is_empty() || segment_lens.contains(&0) {
        return Err(Error::invalid("segment lengths must be positive"));
    }
    let total: usize = segment_lens.iter().sum();
    // dist[flag][sum]: flag tracks "all above" (AND) or "any above" (OR).
    let mut dist = vec![vec![0.0f64; total + 1]; 2];
    dist[usize::from(policy.kind == CascadeKind::And)][0] = 1.0;
    for &len in segment_lens {
        let refs = ReferenceSet::for_segment(len, ReferenceSpec::single(), policy.tie)?;
        let pmf = binomial_pmf_half(len);
        let mut next = vec![vec![0.0f64; total + 1]; 2];
        for (flag, row) in dist.iter().enumerate() {
            for (s, &p) in row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (d, &q) in pmf.iter().enumerate() {
                    let above = d > refs.main();
                    let f = match policy.kind {
                        CascadeKind::And => flag == 1 && above,
                        _ => flag == 1 || above,
                    };
                    next[usize::from(f)][s + d] += p * q;
                }
            }
        }
        dist = next;
    }
    let mut loss = 0.0;
    for (flag, row) in dist.iter().enumerate() {
        for (s, &p) in row.iter().enumerate() {
            if (flag == 1) != policy.tie.fires(s, total) {
                loss += p;
            }
        }
    }
    Ok(loss)
}

fn binomial_pmf_half(n: usize) -> Vec<f64> {
    // Pascal row normalised step by step to stay in range for large n.
    let mut row = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![0.0; row.len() + 1];
        for (k, &v) in row.iter().enumerate() {
            next[k] += v * 0.5;
            next[k + 1] += v * 0.5;
        }
        row = next;
    }
    row
}

/// Distribution of XNOR-result bits: per vector a bias `p` is drawn from
/// `Normal(mean, sigma)` truncated to `[0, 1]`, then each bit is
/// Bernoulli(`p`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistSpec {
    pub mean: f64,
    pub sigma: f64,
}

impl DistSpec {
    pub fn new(mean: f64, sigma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mean) || !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::invalid(format!(
                "distribution needs mean in [0,1] and finite sigma >= 0, got ({mean}, {sigma})"
            )));
        }
        Ok(Self { mean, sigma })
    }

    /// Every bit a fair coin.
    pub fn uniform() -> Self {
        Self { mean: 0.5, sigma: 0.0 }
    }

    fn sample_bias<R: Rng>(&self, normal: Option<&Normal<f64>>, rng: &mut R) -> f64 {
        match normal {
            None => self.mean,
            Some(n) => loop {
                let p = n.sample(rng);
                if (0.0..=1.0).contains(&p) {
                    break p;
                }
            },
        }
    }
}

impl Default for DistSpec {
    fn default() -> Self {
        Self { mean: 0.5, sigma: 0.15 }
    }
}

/// Monte-Carlo loss estimate with a 95% Wilson score interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub samples: u64,
    pub mismatches: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub loss: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

const Z95: f64 = 1.959_963_984_540_054;

pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Splits `nu` into consecutive segments of at most `segment` cells.
pub fn segment_lengths(nu: usize, segment: usize) -> Result<Vec<usize>> {
    if nu == 0 || segment == 0 {
        return Err(Error::invalid("vector and segment sizes must be positive"));
    }
    Ok((0..nu).step_by(segment).map(|s| segment.min(nu - s)).collect())
}

const MC_BATCH: u64 = 8192;

/// Estimates the loss of `policy` on vectors of size `nu` split into
/// `segment`-cell columns.
///
/// Samples are drawn in fixed-size batches, each from its own ChaCha stream
/// of `seed`, so the estimate is identical regardless of thread count. The
/// same seed yields the same popcount samples for every policy and
/// reference distance, which pairs comparisons between them.
pub fn monte_carlo_loss(
    policy: &CascadePolicy,
    nu: usize,
    segment: usize,
    dist: DistSpec,
    samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::invalid("monte_carlo_loss needs at least one sample"));
    }
    let dist = DistSpec::new(dist.mean, dist.sigma)?;
    let lens = segment_lengths(nu, segment)?;
    let refs = lens
        .iter()
        .map(|&l| ReferenceSet::for_segment(l, policy.refs, policy.tie))
        .collect::<Result<Vec<_>>>()?;
    let normal = if dist.sigma > 0.0 {
        Some(Normal::new(dist.mean, dist.sigma).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let batches = samples.div_ceil(MC_BATCH);
    let (fp, fn_) = (0..batches)
        .into_par_iter()
        .map(|b| -> Result<(u64, u64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let n = MC_BATCH.min(samples - b * MC_BATCH);
            let mut levels = vec![0usize; lens.len()];
            let (mut fp, mut fn_) = (0u64, 0u64);
            for _ in 0..n {
                let p = dist.sample_bias(normal.as_ref(), &mut rng);
                for (slot, &len) in levels.iter_mut().zip(&lens) {
                    let bin = Binomial::new(len as u64, p).map_err(|e| Error::invalid(e.to_string()))?;
                    *slot = bin.sample(&mut rng) as usize;
                }
                let out = cascade_levels(policy, &levels, &refs)?;
                let golden = policy.tie.fires(levels.iter().sum(), nu);
                match (out, golden) {
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            Ok((fp, fn_))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    let mismatches = fp + fn_;
    let (ci_low, ci_high) = wilson_interval(mismatches, samples);
    Ok(McEstimate {
        samples,
        mismatches,
        false_positives: fp,
        false_negatives: fn_,
        loss: mismatches as f64 / samples as f64,
        ci_low,
        ci_high,
    })
}

/// One line of a loss table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub policy: CascadeKind,
    pub nu: usize,
    pub segment: usize,
    pub ref_count: usize,
    pub x: usize,
    pub loss_fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mismatch_fp: u128,
    pub mismatch_fn: u128,
}

impl SweepRow {
    pub fn from_estimate(policy: &CascadePolicy, nu: usize, segment: usize, e: &McEstimate) -> Self {
        Self {
            policy: policy.kind,
            nu,
            segment,
            ref_count: policy.refs.count,
            x: policy.refs.distance,
            loss_fraction: e.loss,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            mismatch_fp: u128::from(e.false_positives),
            mismatch_fn: u128::from(e.false_negatives),
        }
    }

    /// Exact rows have a degenerate interval at the loss itself.
    pub fn from_exact(policy: &CascadePolicy, nu: usize, r: &LossRegionReport) -> Self {
        Self {
            policy: policy.kind,
            nu,
            segment: nu / 2,
            ref_count: policy.refs.count,
            x: policy.refs.distance,
            loss_fraction: r.loss_fraction,
            ci_low: r.loss_fraction,
            ci_high: r.loss_fraction,
            mismatch_fp: r.false_positives,
            mismatch_fn: r.false_negatives,
        }
    }
}

pub const SWEEP_CSV_COLUMNS: [&str; 10] = [
    "policy",
    "nu",
    "segment",
    "ref_count",
    "x",
    "loss_fraction",
    "ci_low",
    "ci_high",
    "mismatch_fp",
    "mismatch_fn",
];

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.policy.to_string(),
            r.nu.to_string(),
            r.segment.to_string(),
            r.ref_count.to_string(),
            r.x.to_string(),
            format!("{:.8}", r.loss_fraction),
            format!("{:.8}", r.ci_low),
            format!("{:.8}", r.ci_high),
            r.mismatch_fp.to_string(),
            r.mismatch_fn.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Rows of a reference-distance sweep plus the grid points that were rejected.
#[derive(Clone, Debug, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub rejected: Vec<(usize, String)>,
}

/// Runs [`monte_carlo_loss`] for every admissible `x` in `x_grid`.
pub fn sweep_reference_distance(
    policy: &CascadePolicy,
    nu: usize,
    segment: usize,
    x_grid: &[usize],
    dist: DistSpec,
    samples: u64,
    seed: u64,
) -> Result<SweepTable> {
    let lens = segment_lengths(nu, segment)?;
    let mut table = SweepTable::default();
    for &x in x_grid {
        let p = match policy.with_distance(x) {
            Ok(p) => p,
            Err(e) => {
                table.rejected.push((x, e.to_string()));
                continue;
            }
        };
        if let Some(e) = lens
            .iter()
            .find_map(|&l| ReferenceSet::for_segment(l, p.refs, p.tie).err())
        {
            table.rejected.push((x, e.to_string()));
            continue;
        }
        let est = monte_carlo_loss(&p, nu, segment, dist, samples, seed)?;
        table.rows.push(SweepRow::from_estimate(&p, nu, segment, &est));
    }
    Ok(table)
}
