//! Exhaustive self-checks of the arithmetic, the SA mapping and the cascade
//! analyses, each against an independent brute-force computation.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bincore::{golden_activation, xnor_popcount_dot, BinaryTensor, SignedVector, TieRule};
use crate::cascade::{cascade_levels, enumerate_loss, region_predicate_and, region_predicate_or, CascadeKind, CascadePolicy};
use crate::crossbar::{layer_forward_with_refs, map_weights, CrossbarConfig, ReferenceSet, ReferenceSpec};
use crate::error::Result;

/// Deliberate defects for checking that the suite catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Every main reference sits one level too high.
    MainReferenceOffByOne,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("main-ref-off-by-one")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Largest vector size enumerated exhaustively.
    pub nu_max: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { nu_max: 12, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: u64,
    pub failures: u64,
    pub first_failure: Option<String>,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            cases: 0,
            failures: 0,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(describe());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub nu_max: usize,
    pub checks: Vec<CheckResult>,
    /// Command line that reruns the same suite.
    pub reproduce: String,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed() { "ok  " } else { "FAIL" };
            writeln!(f, "{status} {:<28} {:>10} cases {:>8} failures", c.name, c.cases, c.failures)?;
            if let Some(first) = &c.first_failure {
                writeln!(f, "     first failure: {first}")?;
                writeln!(f, "     reproduce with: {}", self.reproduce)?;
            }
        }
        Ok(())
    }
}

/// Largest size for which all `4^n` vector pairs are enumerated.
const PAIR_LIMIT: usize = 10;

fn word_vec(word: u64, n: usize) -> BinaryTensor {
    BinaryTensor::from_word(word, n)
}

fn signed_of(word: u64, n: usize) -> SignedVector {
    SignedVector::new((0..n).map(|i| if word >> i & 1 == 1 { 1 } else { -1 }).collect()).expect("+-1 values")
}

/// Dot-product identity and golden-vs-sign over all pairs up to size 10.
pub fn check_dot(nu_max: usize) -> Result<Vec<CheckResult>> {
    let mut dot = CheckResult::new("dot-equivalence");
    let mut sign = CheckResult::new("golden-vs-sign");
    for n in 1..=nu_max.min(PAIR_LIMIT) {
        let signed: Vec<SignedVector> = (0..1u64 << n).map(|w| signed_of(w, n)).collect();
        for a in 0..1u64 << n {
            let va = word_vec(a, n);
            for b in 0..1u64 << n {
                let vb = word_vec(b, n);
                let d = xnor_popcount_dot(&va, &vb)?;
                let reference = signed[a as usize].dot(&signed[b as usize])?;
                dot.record(d == reference, || format!("n={n} a={a:#x} b={b:#x}: {d} != {reference}"));
                let g = golden_activation(&va, &vb)?;
                sign.record(g == (reference > 0), || format!("n={n} a={a:#x} b={b:#x}: golden {g}, dot {reference}"));
            }
        }
    }
    Ok(vec![dot, sign])
}

/// Unsplit crossbar columns against the golden activation.
pub fn check_no_split(nu_max: usize, fault: Option<Fault>) -> Result<CheckResult> {
    let mut res = CheckResult::new("no-split-exactness");
    let cfg = CrossbarConfig::default();
    let policy = CascadePolicy::and();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for n in 1..=nu_max {
        let weights: Vec<BinaryTensor> = if n <= 8 {
            (0..1u64 << n).map(|w| word_vec(w, n)).collect()
        } else {
            (0..64).map(|_| BinaryTensor::random(&[n], &mut rng)).collect()
        };
        for w in &weights {
            let group = map_weights(w, &cfg)?;
            let mut refs = group.segment_references(ReferenceSpec::single(), TieRule::Strict)?;
            if fault.is_some() {
                match refs.iter().map(|r| r.shifted(1)).collect::<Result<Vec<ReferenceSet>>>() {
                    Ok(r) => refs = r,
                    Err(_) => continue,
                }
            }
            for x in 0..1u64 << n {
                let input = word_vec(x, n);
                let got = layer_forward_with_refs(&input, &group, &refs, &policy)?;
                let want = golden_activation(&input, w)?;
                res.record(got == want, || format!("n={n} x={x:#x} w={w:?}: crossbar {got}, golden {want}"));
            }
        }
    }
    Ok(res)
}

/// Raw pair counts per `(d1, d2)` cell of the two halves' XNOR popcounts.
fn raw_cell_counts(nu: usize) -> Vec<Vec<u64>> {
    let half = nu / 2;
    let mask = (1u64 << nu) - 1;
    let low = (1u64 << half) - 1;
    let mut counts = vec![vec![0u64; half + 1]; half + 1];
    for a in 0..=mask {
        for b in 0..=mask {
            let r = !(a ^ b) & mask;
            counts[(r & low).count_ones() as usize][(r >> half).count_ones() as usize] += 1;
        }
    }
    counts
}

fn policies_for(half: usize) -> Vec<CascadePolicy> {
    let mut v = vec![CascadePolicy::and(), CascadePolicy::or()];
    let main = half / 2;
    for x in [1, 2] {
        if main > x && main + x < half {
            for kind in [CascadeKind::F1, CascadeKind::F2] {
                v.push(CascadePolicy::new(kind, ReferenceSpec::new(3, x).expect("odd count")).expect("3 refs"));
            }
        }
    }
    v
}

/// Weighted `(m, n)` enumeration against raw vector-pair enumeration.
pub fn check_enumeration(nu_max: usize) -> Result<CheckResult> {
    let mut res = CheckResult::new("closed-form-vs-brute-force");
    for nu in (4..=nu_max.min(12)).step_by(2) {
        let counts = raw_cell_counts(nu);
        let half = nu / 2;
        for p in policies_for(half) {
            let refs = vec![ReferenceSet::for_segment(half, p.refs, p.tie)?; 2];
            let (mut fp, mut fn_) = (0u128, 0u128);
            for (d1, row) in counts.iter().enumerate() {
                for (d2, &c) in row.iter().enumerate() {
                    let out = cascade_levels(&p, &[d1, d2], &refs)?;
                    let golden = 2 * (d1 + d2) > nu;
                    match (out, golden) {
                        (true, false) => fp += u128::from(c),
                        (false, true) => fn_ += u128::from(c),
                        _ => {}
                    }
                }
            }
            let rep = enumerate_loss(nu, &p)?;
            res.record(
                (rep.false_positives, rep.false_negatives) == (fp, fn_),
                || format!("nu={nu} {} x={}: closed form ({}, {}) vs raw ({fp}, {fn_})", p.kind, p.refs.distance, rep.false_positives, rep.false_negatives),
            );
        }
    }
    Ok(res)
}

/// F1 never fires below a majority, over every XNOR result vector.
pub fn check_f1_soundness(nu_max: usize) -> Result<CheckResult> {
    let mut res = CheckResult::new("f1-soundness");
    for nu in (4..=nu_max).step_by(2) {
        let half = nu / 2;
        let main = half / 2;
        let low = (1u64 << half) - 1;
        for count in [3usize, 5] {
            let aux = (count - 1) / 2;
            for x in 1..=half {
                if main < aux * x + 1 || main + aux * x >= half {
                    continue;
                }
                let p = CascadePolicy::new(CascadeKind::F1, ReferenceSpec::new(count, x)?)?;
                let refs = vec![ReferenceSet::for_segment(half, p.refs, p.tie)?; 2];
                for r in 0..1u64 << nu {
                    let d = [(r & low).count_ones() as usize, (r >> half).count_ones() as usize];
                    let out = cascade_levels(&p, &d, &refs)?;
                    res.record(!out || 2 * (d[0] + d[1]) > nu, || format!("nu={nu} count={count} x={x} R={r:#x}: F1 fired below majority"));
                }
            }
        }
    }
    Ok(res)
}

/// Closed-form AND/OR loss regions against the cascade outputs.
pub fn check_regions(nu_max: usize) -> Result<CheckResult> {
    let mut res = CheckResult::new("region-predicates");
    for nu in (4..=nu_max).step_by(2) {
        let half = nu / 2;
        let refs = vec![ReferenceSet::for_segment(half, ReferenceSpec::single(), TieRule::Strict)?; 2];
        for d1 in 0..=half {
            for d2 in 0..=half {
                let golden = 2 * (d1 + d2) > nu;
                let a = cascade_levels(&CascadePolicy::and(), &[d1, d2], &refs)? != golden;
                let o = cascade_levels(&CascadePolicy::or(), &[d1, d2], &refs)? != golden;
                res.record(a == region_predicate_and(d1, d2, nu), || format!("AND nu={nu} ({d1},{d2})"));
                res.record(o == region_predicate_or(d1, d2, nu), || format!("OR nu={nu} ({d1},{d2})"));
            }
        }
    }
    Ok(res)
}

pub fn run(opts: &VerifyOptions) -> Result<VerifyReport> {
    let nu_max = opts.nu_max.max(1);
    let mut checks = check_dot(nu_max)?;
    checks.push(check_no_split(nu_max, opts.fault)?);
    checks.push(check_enumeration(nu_max)?);
    checks.push(check_f1_soundness(nu_max)?);
    checks.push(check_regions(nu_max)?);
    let mut reproduce = format!("xnorsim verify --nu-max {nu_max}");
    if let Some(f) = opts.fault {
        reproduce.push_str(&format!(" --inject-fault {f}"));
    }
    Ok(VerifyReport {
        nu_max,
        checks,
        reproduce,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes() {
        let r = run(&VerifyOptions { nu_max: 8, fault: None }).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.checks.iter().all(|c| c.cases > 0), "{r}");
    }

    #[test]
    fn injected_fault_is_caught() {
        let r = run(&VerifyOptions {
            nu_max: 6,
            fault: Some(Fault::MainReferenceOffByOne),
        })
        .unwrap();
        assert!(!r.passed());
        let text = r.to_string();
        assert!(text.contains("no-split-exactness") && text.contains("--inject-fault main-ref-off-by-one"), "{text}");
    }
}
