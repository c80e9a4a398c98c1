//! Obfuscate → attack → score sweeps over a noise grid, plus the synthetic
//! bigram source used to build matched corpora and priors.
//!
//! Every `(noise level, method, sequence)` cell is an independent job. Its
//! noise seed is derived from the master seed, the grid index and the
//! sequence id only, so all methods face the same noise realisation.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, CorpusRecord};
use crate::decoder::{decode, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::{asr, dataset_mean, pii_recovery, PiiAnnotation};
use crate::nn::nn_decode;
use crate::noise::{
    epsilon_from_scale, obfuscate_sequence, scale_for_reported_epsilon, NoiseFamily, NoiseMechanismSpec,
    ObfuscatedSequence, DEFAULT_DELTA,
};
use crate::prior::{build_token_map, ExternalPrior, NgramPrior, PriorModel, TokenMap, UniformPrior, DEFAULT_TIMEOUT_MS};
use crate::rng::{fnv1a64, mix_seed, SampleStream};
use crate::table::{EmbeddingTable, Norm, TokenId, TokenSequence};

/// Results CSV header, in column order.
pub const CSV_COLUMNS: [&str; 10] = [
    "mechanism",
    "epsilon",
    "scale",
    "delta",
    "method",
    "seq_id",
    "asr_percent",
    "pii_recovery_percent",
    "runtime_ms",
    "failed",
];

/// Summary CSV header, in column order.
pub const SUMMARY_COLUMNS: [&str; 9] = [
    "mechanism",
    "epsilon",
    "scale",
    "delta",
    "method",
    "sequences",
    "failed",
    "mean_asr_percent",
    "mean_pii_recovery_percent",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Nn,
    Beamclean,
}

impl AttackMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMethod::Nn => "nn",
            AttackMethod::Beamclean => "beamclean",
        }
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(AttackMethod::Nn),
            "beamclean" => Ok(AttackMethod::Beamclean),
            other => Err(Error::invalid(format!("unknown attack method {other:?}"))),
        }
    }
}

impl std::fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where BeamClean's prior comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriorSource {
    Uniform,
    Ngram {
        path: PathBuf,
    },
    /// A provider speaking the line protocol, either spawned from `command`
    /// (program followed by arguments) or reached at `address`.
    External {
        #[serde(default)]
        command: Option<Vec<String>>,
        #[serde(default)]
        address: Option<String>,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
}

/// Cross-vocabulary settings: the prior speaks the vocabulary of
/// `prior_table`; `restrict_to` optionally names a file with one allowed token
/// string per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMapConfig {
    pub prior_table: PathBuf,
    #[serde(default)]
    pub restrict_to: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub table: PathBuf,
    pub corpus: PathBuf,
    pub family: NoiseFamily,
    /// Privacy budgets to sweep; exactly one of `epsilons` and `scales`.
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
    /// Gaussian delta; defaults to 1e-5.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Overrides the table-wide maximum pairwise distance.
    #[serde(default)]
    pub sensitivity: Option<f64>,
    pub methods: Vec<AttackMethod>,
    #[serde(default)]
    pub decode: DecodeConfig,
    /// Surrogate family; defaults to the mechanism's family.
    #[serde(default)]
    pub surrogate_family: Option<NoiseFamily>,
    /// Baseline metric; defaults to l2 for Gaussian and l1 for Laplace noise.
    #[serde(default)]
    pub nn_norm: Option<Norm>,
    #[serde(default = "default_prior")]
    pub prior: PriorSource,
    #[serde(default)]
    pub token_map: Option<TokenMapConfig>,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Fill `runtime_ms`; off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_prior() -> PriorSource {
    PriorSource::Uniform
}

fn default_max_len() -> usize {
    32
}

impl SweepConfig {
    /// Reads a JSON config; relative paths are resolved against the config
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: SweepConfig = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| Error::Format(format!("sweep config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.table);
        fix(&mut self.corpus);
        fix(&mut self.output);
        if let PriorSource::Ngram { path } = &mut self.prior {
            fix(path);
        }
        if let Some(tm) = &mut self.token_map {
            fix(&mut tm.prior_table);
            if let Some(r) = &mut tm.restrict_to {
                fix(r);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64], what: &str| -> Result<()> {
            if v.is_empty() {
                return Err(Error::invalid(format!("{what} grid is empty")));
            }
            if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return Err(Error::invalid(format!("{what} grid entries must be positive, got {bad}")));
            }
            Ok(())
        };
        match (&self.epsilons, &self.scales) {
            (Some(e), None) => positive(e, "epsilon")?,
            (None, Some(s)) => positive(s, "scale")?,
            _ => return Err(Error::invalid("give exactly one of `epsilons` and `scales`")),
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no attack methods selected"));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be >= 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be >= 1"));
        }
        if self.family == NoiseFamily::Laplace && self.delta.is_some() {
            return Err(Error::invalid("the Laplace mechanism does not carry a delta"));
        }
        if let Some(s) = self.sensitivity {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(format!("sensitivity must be positive, got {s}")));
            }
        }
        Ok(())
    }

    fn effective_delta(&self) -> Option<f64> {
        match self.family {
            NoiseFamily::Gaussian => Some(self.delta.unwrap_or(DEFAULT_DELTA)),
            NoiseFamily::Laplace => None,
        }
    }
}

/// Noise seed of one cell; independent of the attack method.
pub fn cell_seed(master: u64, level_index: usize, seq_id: &str) -> u64 {
    mix_seed(&[master, level_index as u64, fnv1a64(seq_id)])
}

/// One point of the noise grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseLevel {
    pub epsilon: f64,
    pub scale: f64,
}

/// Turns the configured grid into `(epsilon, scale)` pairs.
pub fn noise_levels(
    family: NoiseFamily,
    sensitivity: f64,
    epsilons: Option<&[f64]>,
    scales: Option<&[f64]>,
    delta: Option<f64>,
) -> Result<Vec<NoiseLevel>> {
    match (epsilons, scales) {
        (Some(eps), None) => eps
            .iter()
            .map(|&epsilon| {
                Ok(NoiseLevel {
                    epsilon,
                    scale: scale_for_reported_epsilon(family, sensitivity, epsilon, delta)?,
                })
            })
            .collect(),
        (None, Some(sc)) => sc
            .iter()
            .map(|&scale| {
                Ok(NoiseLevel {
                    epsilon: epsilon_from_scale(family, sensitivity, scale, delta)?,
                    scale,
                })
            })
            .collect(),
        _ => Err(Error::invalid("give exactly one of an epsilon grid and a scale grid")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mechanism: NoiseFamily,
    pub epsilon: f64,
    pub scale: f64,
    pub delta: Option<f64>,
    pub method: AttackMethod,
    pub seq_id: String,
    pub asr_percent: Option<f64>,
    pub pii_recovery_percent: Option<f64>,
    pub runtime_ms: Option<f64>,
    pub failed: bool,
    /// Failure message; not part of the CSV.
    #[serde(skip)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mechanism: NoiseFamily,
    pub epsilon: f64,
    pub scale: f64,
    pub delta: Option<f64>,
    pub method: AttackMethod,
    pub sequences: usize,
    pub failed: usize,
    pub mean_asr_percent: Option<f64>,
    pub mean_pii_recovery_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub sensitivity: f64,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn failed_cells(&self) -> usize {
        self.rows.iter().filter(|r| r.failed).count()
    }
}

/// Everything a sweep needs, already in memory.
pub struct SweepInputs<'a> {
    pub table: &'a EmbeddingTable,
    pub corpus: &'a [CorpusRecord],
    pub prior: &'a dyn PriorModel,
    pub token_map: Option<&'a TokenMap>,
}

/// Grid and attack settings for [`run_sweep_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub family: NoiseFamily,
    pub levels: Vec<NoiseLevel>,
    pub delta: Option<f64>,
    pub methods: Vec<AttackMethod>,
    pub decode: DecodeConfig,
    pub nn_norm: Norm,
    pub seed: u64,
    pub max_len: usize,
    pub record_timing: bool,
}

/// Loads the files named in `config` and runs the sweep on a pool of
/// `config.workers` threads.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let table = EmbeddingTable::load(&config.table)?;
    let corpus = load_corpus(&config.corpus)?;
    let map_target = match &config.token_map {
        Some(tm) => {
            let prior_table = EmbeddingTable::load(&tm.prior_table)?;
            let allow = tm.restrict_to.as_ref().map(read_token_list).transpose()?;
            Some(build_token_map(&table, &prior_table, allow.as_ref()))
        }
        None => None,
    };
    let prior_vocab = map_target
        .as_ref()
        .map_or(table.vocab_size(), TokenMap::dst_vocab_size);
    let prior: Box<dyn PriorModel> = if config.methods.contains(&AttackMethod::Beamclean) {
        load_prior(&config.prior, prior_vocab)?
    } else {
        Box::new(UniformPrior::new(prior_vocab)?)
    };
    let sensitivity = match config.sensitivity {
        Some(s) => s,
        None => table.sensitivity(config.family.sensitivity_norm()),
    };
    let delta = config.effective_delta();
    let levels = noise_levels(
        config.family,
        sensitivity,
        config.epsilons.as_deref(),
        config.scales.as_deref(),
        delta,
    )?;
    let mut decode_cfg = config.decode.clone();
    decode_cfg.family = config.surrogate_family.unwrap_or(config.family);
    let plan = SweepPlan {
        family: config.family,
        levels,
        delta,
        methods: config.methods.clone(),
        decode: decode_cfg,
        nn_norm: config.nn_norm.unwrap_or(config.family.sensitivity_norm()),
        seed: config.seed,
        max_len: config.max_len,
        record_timing: config.record_timing,
    };
    let inputs = SweepInputs {
        table: &table,
        corpus: &corpus,
        prior: prior.as_ref(),
        token_map: map_target.as_ref(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("could not start worker pool: {e}")))?;
    let mut result = pool.install(|| run_sweep_with(&inputs, &plan))?;
    result.sensitivity = sensitivity;
    Ok(result)
}

/// Builds the prior named by `source` over a vocabulary of `vocab_size`.
pub fn load_prior(source: &PriorSource, vocab_size: usize) -> Result<Box<dyn PriorModel>> {
    let prior: Box<dyn PriorModel> = match source {
        PriorSource::Uniform => Box::new(UniformPrior::new(vocab_size)?),
        PriorSource::Ngram { path } => Box::new(NgramPrior::load(path)?),
        PriorSource::External {
            command,
            address,
            timeout_ms,
        } => {
            let timeout = timeout_ms.unwrap_or(DEFAULT_TIMEOUT_MS);
            match (command, address) {
                (Some(cmd), None) if !cmd.is_empty() => Box::new(ExternalPrior::spawn(&cmd[0], &cmd[1..], timeout)?),
                (None, Some(addr)) => Box::new(ExternalPrior::connect(addr, timeout)?),
                _ => {
                    return Err(Error::invalid(
                        "an external prior needs exactly one of a non-empty `command` and an `address`",
                    ))
                }
            }
        }
    };
    if prior.vocab_size() != vocab_size {
        return Err(Error::DimensionMismatch {
            expected: vocab_size,
            actual: prior.vocab_size(),
        });
    }
    Ok(prior)
}

/// Reads one token string per line (trailing `\n`/`\r\n` stripped).
pub fn read_token_list(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let mut out = HashSet::new();
    for line in BufReader::new(File::open(path)?).lines() {
        out.insert(line?);
    }
    Ok(out)
}

/// Runs every cell on the current rayon pool. Rows come back sorted by
/// `(epsilon, method, seq_id)`; summary rows by `(epsilon, method)`.
pub fn run_sweep_with(inputs: &SweepInputs<'_>, plan: &SweepPlan) -> Result<SweepResult> {
    if plan.levels.is_empty() || plan.methods.is_empty() {
        return Err(Error::invalid("sweep needs at least one noise level and one method"));
    }
    let mut corpus: Vec<CorpusRecord> = inputs.corpus.to_vec();
    corpus.iter_mut().for_each(|r| r.truncate(plan.max_len));
    let mut seen = HashSet::new();
    if let Some(dup) = corpus.iter().find(|r| !seen.insert(r.id.as_str())) {
        return Err(Error::Format(format!("duplicate sequence id {:?} in corpus", dup.id)));
    }
    let methods: Vec<AttackMethod> = {
        let mut m = plan.methods.clone();
        m.sort_by_key(|m| m.as_str());
        m.dedup();
        m
    };
    let cells: Vec<(usize, AttackMethod, usize)> = (0..plan.levels.len())
        .flat_map(|l| {
            let methods = &methods;
            (0..corpus.len()).flat_map(move |s| methods.iter().map(move |&m| (l, m, s)))
        })
        .collect();
    let mut rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(l, method, s)| run_cell(inputs, plan, l, method, &corpus[s]))
        .collect();
    rows.sort_by(|a, b| {
        a.epsilon
            .total_cmp(&b.epsilon)
            .then_with(|| a.method.as_str().cmp(b.method.as_str()))
            .then_with(|| a.seq_id.cmp(&b.seq_id))
    });
    let summary = summarise(&rows);
    Ok(SweepResult {
        sensitivity: f64::NAN,
        rows,
        summary,
    })
}

fn run_cell(
    inputs: &SweepInputs<'_>,
    plan: &SweepPlan,
    level_index: usize,
    method: AttackMethod,
    record: &CorpusRecord,
) -> SweepRow {
    let level = plan.levels[level_index];
    let started = Instant::now();
    let outcome = (|| -> Result<(f64, Option<f64>)> {
        let spec = NoiseMechanismSpec {
            family: plan.family,
            scale: level.scale,
            epsilon: Some(level.epsilon),
            delta: plan.delta,
            sensitivity: None,
        };
        let seed = cell_seed(plan.seed, level_index, &record.id);
        let mut y = obfuscate_sequence(inputs.table, &record.tokens, &spec, seed)?;
        y.seq_id = record.id.clone();
        let decoded = attack(inputs, plan, method, &y, seed)?;
        let a = asr(&decoded, &record.tokens)?;
        let ann = PiiAnnotation::new(record.id.clone(), record.pii_spans.clone().unwrap_or_default());
        Ok((a, pii_recovery(&decoded, &record.tokens, &ann)?))
    })();
    let runtime = plan.record_timing.then(|| started.elapsed().as_secs_f64() * 1e3);
    let (asr_percent, pii, failed, error) = match outcome {
        Ok((a, p)) => (Some(a), p, false, None),
        Err(e) => (None, None, true, Some(e.to_string())),
    };
    SweepRow {
        mechanism: plan.family,
        epsilon: level.epsilon,
        scale: level.scale,
        delta: plan.delta,
        method,
        seq_id: record.id.clone(),
        asr_percent,
        pii_recovery_percent: pii,
        runtime_ms: runtime,
        failed,
        error,
    }
}

fn attack(
    inputs: &SweepInputs<'_>,
    plan: &SweepPlan,
    method: AttackMethod,
    y: &ObfuscatedSequence,
    seed: u64,
) -> Result<TokenSequence> {
    match method {
        AttackMethod::Nn => nn_decode(inputs.table, y, plan.nn_norm),
        AttackMethod::Beamclean => {
            let cfg = DecodeConfig {
                seed,
                ..plan.decode.clone()
            };
            Ok(decode(y, inputs.table, inputs.prior, &cfg, inputs.token_map)?.decoded)
        }
    }
}

fn summarise(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    for group in rows.chunk_by(|a, b| a.epsilon == b.epsilon && a.method == b.method) {
        let first = &group[0];
        let ok: Vec<&SweepRow> = group.iter().filter(|r| !r.failed).collect();
        out.push(SummaryRow {
            mechanism: first.mechanism,
            epsilon: first.epsilon,
            scale: first.scale,
            delta: first.delta,
            method: first.method,
            sequences: group.len(),
            failed: group.len() - ok.len(),
            mean_asr_percent: dataset_mean(ok.iter().map(|r| r.asr_percent)),
            mean_pii_recovery_percent: dataset_mean(ok.iter().map(|r| r.pii_recovery_percent)),
        });
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_rows_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.mechanism.as_str().to_owned(),
            r.epsilon.to_string(),
            r.scale.to_string(),
            opt(r.delta),
            r.method.as_str().to_owned(),
            r.seq_id.clone(),
            opt(r.asr_percent),
            opt(r.pii_recovery_percent),
            opt(r.runtime_ms),
            r.failed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.mechanism.as_str().to_owned(),
            r.epsilon.to_string(),
            r.scale.to_string(),
            opt(r.delta),
            r.method.as_str().to_owned(),
            r.sequences.to_string(),
            r.failed.to_string(),
            opt(r.mean_asr_percent),
            opt(r.mean_pii_recovery_percent),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `results.csv` → `results.summary.csv` next to it.
pub fn summary_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    output.with_file_name(format!("{stem}.summary.csv"))
}

/// Writes the per-cell CSV to `output` and the aggregates beside it.
pub fn write_results(result: &SweepResult, output: &Path) -> Result<()> {
    write_rows_csv(File::create(output)?, &result.rows)?;
    write_summary_csv(File::create(summary_path(output))?, &result.summary)
}

/// A sparse first-order Markov source over `V` tokens: every token has
/// `branching` distinct successors with random weights, and sequences start
/// from a uniformly drawn token.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramSource {
    vocab_size: usize,
    successors: Vec<Vec<(TokenId, f64)>>,
}

impl BigramSource {
    pub fn new(vocab_size: usize, branching: usize, seed: u64) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::invalid("bigram source needs V >= 2"));
        }
        if branching == 0 || branching > vocab_size {
            return Err(Error::invalid(format!(
                "branching must lie in [1, {vocab_size}], got {branching}"
            )));
        }
        let mut rng = SampleStream::new(seed);
        let successors = (0..vocab_size)
            .map(|_| {
                let mut picked: Vec<TokenId> = Vec::with_capacity(branching);
                while picked.len() < branching {
                    let c = rng.index(vocab_size) as TokenId;
                    if !picked.contains(&c) {
                        picked.push(c);
                    }
                }
                let weights: Vec<f64> = picked.iter().map(|_| 0.2 + rng.uniform()).collect();
                let total: f64 = weights.iter().sum();
                picked.into_iter().zip(weights.into_iter().map(|w| w / total)).collect()
            })
            .collect();
        Ok(Self { vocab_size, successors })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Successors of `token` with their transition probabilities.
    pub fn successors(&self, token: TokenId) -> &[(TokenId, f64)] {
        &self.successors[token as usize]
    }

    pub fn sample_sequence(&self, len: usize, rng: &mut SampleStream) -> TokenSequence {
        let mut ids = Vec::with_capacity(len);
        if len == 0 {
            return TokenSequence(ids);
        }
        let mut cur = rng.index(self.vocab_size) as TokenId;
        ids.push(cur);
        while ids.len() < len {
            let u = rng.uniform();
            let succ = &self.successors[cur as usize];
            let mut acc = 0.0;
            cur = succ[succ.len() - 1].0;
            for &(c, p) in succ {
                acc += p;
                if u < acc {
                    cur = c;
                    break;
                }
            }
            ids.push(cur);
        }
        TokenSequence(ids)
    }

    /// `count` records named `{prefix}{index:05}`; with `pii_span_len > 0`
    /// each gets one span of that length at a random offset.
    pub fn sample_corpus(
        &self,
        count: usize,
        len: usize,
        pii_span_len: usize,
        prefix: &str,
        seed: u64,
    ) -> Vec<CorpusRecord> {
        let mut rng = SampleStream::new(seed);
        (0..count)
            .map(|i| {
                let tokens = self.sample_sequence(len, &mut rng);
                let mut rec = CorpusRecord::new(format!("{prefix}{i:05}"), tokens.0);
                if pii_span_len > 0 && pii_span_len <= len {
                    let start = rng.index(len - pii_span_len + 1);
                    rec.pii_spans = Some(vec![(start, start + pii_span_len)]);
                }
                rec
            })
            .collect()
    }
}
