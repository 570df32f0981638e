//! Experiment config files and their merge with command-line flags.
//!
//! Precedence is flag, then file, then built-in default. Relative paths in a
//! config file are taken relative to the file's directory. The effective
//! config of a run is serialised to TOML and hashed into every output header.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use xnorsim::cascade::{CascadeKind, CascadePolicy};
use xnorsim::costmodel::CostParams;
use xnorsim::crossbar::ReferenceSpec;

use crate::{parse_policy, CostArgs, InferArgs, MappingArgs};

/// Reference distances probed by the Monte-Carlo sweeps.
pub const DEFAULT_X_GRID: [usize; 12] = [1, 2, 4, 6, 8, 12, 16, 24, 32, 64, 128, 255];

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub loss_sweep: LossSweepFile,
    pub infer: InferFile,
    pub cost: CostFile,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.infer.weights);
        rebase(&mut cfg.infer.images);
        rebase(&mut cfg.infer.labels);
        rebase(&mut cfg.cost.params);
        Ok(cfg)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSweepFile {
    pub experiments: Option<Vec<String>>,
    pub exact_nu: Option<Vec<usize>>,
    pub nu: Option<usize>,
    pub segment: Option<usize>,
    pub samples: Option<u64>,
    pub mean: Option<f64>,
    pub sigma: Option<f64>,
    pub policies: Option<Vec<String>>,
    pub ref_count: Option<usize>,
    pub ref_counts: Option<Vec<usize>>,
    pub x_grid: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferFile {
    pub network: Option<String>,
    pub weights: Option<PathBuf>,
    pub random_weights: Option<bool>,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub synthetic: Option<usize>,
    pub limit: Option<usize>,
    pub policy: Option<String>,
    pub refs: Option<usize>,
    pub ref_distance: Option<usize>,
    pub crossbar: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostFile {
    pub networks: Option<Vec<String>>,
    pub params: Option<PathBuf>,
    pub refs: Option<usize>,
    pub ref_distance: Option<usize>,
    pub crossbar: Option<String>,
    pub parallel_window: Option<bool>,
}

/// Lowercase hex SHA-256 of `text`.
pub fn hash_of(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_section<T: Serialize>(name: &str, value: &T) -> String {
    let mut table = toml::Table::new();
    table.insert(name.to_string(), toml::Value::try_from(value).expect("config serialises"));
    hash_of(&toml::to_string(&table).expect("config serialises"))
}

fn single_distance(flag: &[usize]) -> Result<Option<usize>> {
    match flag {
        [] => Ok(None),
        [x] => Ok(Some(*x)),
        _ => bail!("--ref-distance takes a single value here"),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    ensure!(path.is_file(), "{what} file {} does not exist", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct LossSweepConfig {
    pub experiments: Vec<String>,
    pub exact_nu: Vec<usize>,
    pub nu: usize,
    pub segment: usize,
    pub samples: u64,
    pub mean: f64,
    pub sigma: f64,
    pub policies: Vec<CascadeKind>,
    pub ref_count: usize,
    pub ref_counts: Vec<usize>,
    pub x_grid: Vec<usize>,
    pub seed: u64,
}

impl LossSweepConfig {
    pub fn hash(&self) -> String {
        hash_section("loss_sweep", self)
    }
}

impl LossSweepFile {
    pub fn resolve(self, m: &MappingArgs, experiments: &[String], samples: Option<u64>, seed: Option<u64>) -> Result<LossSweepConfig> {
        ensure!(m.crossbar.is_none(), "--crossbar does not apply to loss-sweep");
        let experiments = if experiments.is_empty() {
            self.experiments
                .unwrap_or_else(|| ["exact", "distance", "refcount"].map(String::from).to_vec())
        } else {
            experiments.to_vec()
        };
        let policies = match &m.policy {
            Some(p) => vec![p.clone()],
            None => self.policies.unwrap_or_else(|| vec!["f1".into(), "f2".into()]),
        };
        let policies = policies
            .iter()
            .map(|p| parse_policy(p))
            .collect::<Result<Vec<_>>>()?;
        if let Some(k) = policies.iter().find(|k| !k.needs_aux()) {
            bail!("the distance sweeps compare f1 and f2; {k} uses a single reference and is covered by the exact and refcount tables");
        }
        let stochastic = experiments.iter().any(|e| e != "exact");
        let seed = match seed {
            Some(s) => s,
            None if !stochastic => 0,
            None => bail!("--seed is required for Monte-Carlo experiments"),
        };
        Ok(LossSweepConfig {
            experiments,
            exact_nu: self.exact_nu.unwrap_or_else(|| (8..=20).step_by(2).collect()),
            nu: self.nu.unwrap_or(1024),
            segment: self.segment.unwrap_or(512),
            samples: samples.or(self.samples).unwrap_or(100_000),
            mean: self.mean.unwrap_or(0.5),
            sigma: self.sigma.unwrap_or(0.15),
            policies,
            ref_count: m.refs.or(self.ref_count).unwrap_or(3),
            ref_counts: self.ref_counts.unwrap_or_else(|| vec![1, 3, 5, 7]),
            x_grid: if m.ref_distance.is_empty() {
                self.x_grid.unwrap_or_else(|| DEFAULT_X_GRID.to_vec())
            } else {
                m.ref_distance.clone()
            },
            seed,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct InferConfig {
    pub network: String,
    pub weights: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub synthetic: usize,
    pub limit: Option<usize>,
    pub policy: CascadeKind,
    pub refs: usize,
    pub ref_distance: usize,
    pub crossbar: String,
    pub seed: u64,
}

impl InferConfig {
    pub fn hash(&self) -> String {
        hash_section("infer", self)
    }

    pub fn policy(&self) -> Result<CascadePolicy> {
        let spec = if self.policy.needs_aux() {
            ReferenceSpec::new(self.refs, self.ref_distance)?
        } else {
            ReferenceSpec::single()
        };
        Ok(CascadePolicy::new(self.policy, spec)?)
    }
}

impl InferFile {
    pub fn resolve(self, a: &InferArgs, seed: Option<u64>) -> Result<InferConfig> {
        let file_random = self.random_weights.unwrap_or(false);
        ensure!(!(file_random && self.weights.is_some()), "config sets both weights and random_weights");
        let weights = match (&a.weights, a.random_weights) {
            (Some(w), _) => Some(w.clone()),
            (None, true) => None,
            (None, false) if file_random => None,
            (None, false) => Some(self.weights.context("provide --weights FILE or --random-weights")?),
        };
        let (images, labels) = match (&a.images, &a.labels) {
            (Some(i), Some(l)) => (Some(i.clone()), Some(l.clone())),
            _ => (self.images, self.labels),
        };
        ensure!(images.is_some() == labels.is_some(), "images and labels must be given together");
        for (p, what) in [(&weights, "weights"), (&images, "images"), (&labels, "labels")] {
            if let Some(p) = p {
                require_file(p, what)?;
            }
        }
        let stochastic = weights.is_none() || images.is_none();
        let seed = match seed {
            Some(s) => s,
            None if !stochastic => 0,
            None => bail!("--seed is required with random weights or synthetic data"),
        };
        let policy = parse_policy(a.mapping.policy.as_deref().or(self.policy.as_deref()).unwrap_or("f2"))?;
        Ok(InferConfig {
            network: a.network.clone().or(self.network).unwrap_or_else(|| "LeNet-5".into()),
            weights,
            images,
            labels,
            synthetic: a.synthetic.or(self.synthetic).unwrap_or(256),
            limit: a.limit.or(self.limit),
            policy,
            refs: a.mapping.refs.or(self.refs).unwrap_or(if policy.needs_aux() { 3 } else { 1 }),
            ref_distance: single_distance(&a.mapping.ref_distance)?.or(self.ref_distance).unwrap_or(8),
            crossbar: a.mapping.crossbar.clone().or(self.crossbar).unwrap_or_else(|| "512x512".into()),
            seed,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct CostConfig {
    pub networks: Vec<String>,
    pub params: PathBuf,
    pub refs: usize,
    pub ref_distance: usize,
    pub crossbar: String,
    pub parallel_window: bool,
}

impl CostConfig {
    /// Hash over the run options and the parameter values actually used.
    pub fn hash(&self, params: &CostParams<f64>) -> String {
        #[derive(Serialize)]
        struct Effective<'a> {
            run: &'a CostConfig,
            params: &'a CostParams<f64>,
        }
        hash_section("cost", &Effective { run: self, params })
    }
}

impl CostFile {
    pub fn resolve(self, a: &CostArgs) -> Result<CostConfig> {
        ensure!(a.mapping.policy.is_none(), "--policy does not apply to cost; the design is set by --refs");
        let networks = if a.network.is_empty() {
            self.networks.unwrap_or_else(|| {
                xnorsim::netio::topology::PRESETS.iter().map(|(n, _)| n.to_string()).collect()
            })
        } else {
            a.network.clone()
        };
        let params = a
            .params
            .clone()
            .or(self.params)
            .context("cost needs a parameter file (--params FILE); configs/cost_params.toml holds the defaults")?;
        require_file(&params, "cost parameter")?;
        Ok(CostConfig {
            networks,
            params,
            refs: a.mapping.refs.or(self.refs).unwrap_or(3),
            ref_distance: single_distance(&a.mapping.ref_distance)?.or(self.ref_distance).unwrap_or(8),
            crossbar: a.mapping.crossbar.clone().or(self.crossbar).unwrap_or_else(|| "512x512".into()),
            parallel_window: a.parallel_window || self.parallel_window.unwrap_or(false),
        })
    }
}
