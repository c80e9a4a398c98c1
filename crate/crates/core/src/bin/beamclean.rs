//! Command-line front end: data generation, obfuscation, attacks, scoring
//! and sweeps.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 sweep finished with
//! failed cells.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamclean::corpus::{load_corpus, save_corpus, CorpusRecord};
use beamclean::decoder::{decode, DecodeConfig};
use beamclean::error::{Error, Result};
use beamclean::harness::{
    load_prior, read_token_list, run_sweep, summary_path, write_results, AttackMethod, BigramSource, PriorSource,
    SweepConfig,
};
use beamclean::metrics::{asr, dataset_mean, pii_recovery, PiiAnnotation};
use beamclean::nn::nn_decode;
use beamclean::noise::{
    calibrate_scale, epsilon_from_scale, load_obfuscated, obfuscate_corpus, save_obfuscated,
    scale_for_reported_epsilon, NoiseFamily, NoiseMechanismSpec,
};
use beamclean::prior::{build_token_map, serve_prior, train_ngram, NgramPrior, PriorModel, TokenMap};
use beamclean::surrogate::{EstimationMethod, ScaleMode};
use beamclean::table::{EmbeddingTable, Norm, TokenSequence};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "beamclean", version, about = "Embedding obfuscation and inversion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic embedding table with i.i.d. standard-normal rows.
    GenTable {
        #[arg(long)]
        vocab: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Minimum l2 distance between any two rows.
        #[arg(long, default_value_t = 0.0)]
        min_gap: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a corpus from a sparse random bigram source.
    GenCorpus {
        #[arg(long)]
        vocab: usize,
        /// Successors per token.
        #[arg(long, default_value_t = 4)]
        branching: usize,
        /// Seed of the transition structure; share it between training and test corpora.
        #[arg(long, default_value_t = 0)]
        source_seed: u64,
        /// Seed of the sampled sequences.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        len: usize,
        /// Length of one PII span per sequence (0 for none).
        #[arg(long, default_value_t = 0)]
        pii_span_len: usize,
        #[arg(long, default_value = "seq")]
        prefix: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an add-alpha n-gram prior on a corpus.
    TrainPrior {
        #[arg(long)]
        corpus: PathBuf,
        /// Vocabulary size; taken from --table when omitted.
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert between a privacy budget and a noise scale.
    Calibrate {
        #[arg(long)]
        family: NoiseFamily,
        #[arg(long, conflicts_with = "table")]
        sensitivity: Option<f64>,
        /// Take the sensitivity from this table's largest pairwise distance.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, conflicts_with = "scale")]
        epsilon: Option<f64>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Add calibrated noise to every sequence of a corpus.
    Obfuscate {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        family: NoiseFamily,
        #[arg(long, conflicts_with = "epsilon")]
        scale: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        sensitivity: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover token sequences from obfuscated embeddings.
    Attack(AttackArgs),
    /// Score decoded sequences against the clean corpus.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        decoded: PathBuf,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        /// Per-sequence CSV; the dataset means go to stdout as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an obfuscate → attack → score sweep from a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve an n-gram prior over the line protocol on stdin/stdout.
    ServePrior {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long, default_value = "ngram")]
        name: String,
    },
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    obfuscated: PathBuf,
    #[arg(long, default_value = "beamclean")]
    method: AttackMethod,
    /// `uniform`, a path to an n-gram JSON file, `exec:<program> [args]`, or `tcp:<host:port>`.
    #[arg(long, default_value = "uniform")]
    prior: String,
    #[arg(long, default_value_t = 20)]
    beam: usize,
    /// Candidates per step (default: whole vocabulary).
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Surrogate family (and NN metric: l2 for gaussian, l1 for laplace).
    #[arg(long, default_value = "gaussian")]
    family: NoiseFamily,
    #[arg(long, default_value = "closed-form")]
    estimation: EstimationMethod,
    #[arg(long, default_value = "isotropic")]
    mode: ScaleMode,
    #[arg(long)]
    estimate_mu: bool,
    /// Fixed starting scale for the surrogate.
    #[arg(long)]
    init_scale: Option<f64>,
    /// Nearest-neighbour metric override.
    #[arg(long)]
    norm: Option<Norm>,
    /// Embedding table of the prior's vocabulary; enables cross-vocabulary decoding.
    #[arg(long)]
    token_map: Option<PathBuf>,
    /// Allowed token strings, one per line; restricts candidates to mapped tokens.
    #[arg(long, requires = "token_map")]
    restrict_to: Option<PathBuf>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    /// Decoded sequences as corpus JSON Lines.
    #[arg(long)]
    out: PathBuf,
    /// Full per-sequence attack records (beam, surrogate trajectory) as JSON Lines.
    #[arg(long)]
    details: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Data(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::GenTable {
            vocab,
            dim,
            seed,
            min_gap,
            out,
        } => {
            let table = EmbeddingTable::generate_synthetic(vocab, dim, seed, min_gap)?;
            table.save(&out)?;
            print_json(&json!({"vocab_size": vocab, "dim": dim, "path": out}))?;
        }
        Command::GenCorpus {
            vocab,
            branching,
            source_seed,
            seed,
            count,
            len,
            pii_span_len,
            prefix,
            out,
        } => {
            let source = BigramSource::new(vocab, branching, source_seed)?;
            save_corpus(&out, &source.sample_corpus(count, len, pii_span_len, &prefix, seed))?;
        }
        Command::TrainPrior {
            corpus,
            vocab,
            table,
            order,
            alpha,
            out,
        } => {
            let vocab = match (vocab, table) {
                (Some(v), _) => v,
                (None, Some(t)) => EmbeddingTable::load(t)?.vocab_size(),
                (None, None) => return Err(usage("give --vocab or --table")),
            };
            let seqs: Vec<TokenSequence> = load_corpus(&corpus)?.into_iter().map(|r| r.tokens).collect();
            train_ngram(&seqs, order, alpha, vocab)?.save(&out)?;
        }
        Command::Calibrate {
            family,
            sensitivity,
            table,
            epsilon,
            scale,
            delta,
        } => {
            let sensitivity = resolve_sensitivity(family, sensitivity, table.as_deref())?;
            let report = match (epsilon, scale) {
                (Some(eps), None) => {
                    let valid = calibrate_scale(family, sensitivity, eps, delta);
                    let scale = match &valid {
                        Ok(s) => *s,
                        Err(_) => scale_for_reported_epsilon(family, sensitivity, eps, delta)?,
                    };
                    json!({"family": family, "sensitivity": sensitivity, "epsilon": eps, "delta": delta,
                           "scale": scale, "guarantee_valid": valid.is_ok()})
                }
                (None, Some(s)) => {
                    let eps = epsilon_from_scale(family, sensitivity, s, delta)?;
                    let delta = match family {
                        NoiseFamily::Gaussian => Some(delta.unwrap_or(beamclean::noise::DEFAULT_DELTA)),
                        NoiseFamily::Laplace => None,
                    };
                    let valid = family == NoiseFamily::Laplace || eps < 1.0;
                    json!({"family": family, "sensitivity": sensitivity, "epsilon": eps, "delta": delta,
                           "scale": s, "guarantee_valid": valid})
                }
                _ => return Err(usage("give exactly one of --epsilon and --scale")),
            };
            print_json(&report)?;
        }
        Command::Obfuscate {
            table,
            corpus,
            family,
            scale,
            epsilon,
            delta,
            sensitivity,
            seed,
            max_len,
            out,
        } => {
            let table = EmbeddingTable::load(&table)?;
            let mut records = load_corpus(&corpus)?;
            records.iter_mut().for_each(|r| r.truncate(max_len));
            let spec = match (scale, epsilon) {
                (Some(s), None) => {
                    let mut spec = NoiseMechanismSpec::new(family, s);
                    spec.delta = delta;
                    spec
                }
                (None, Some(eps)) => {
                    let sens = match sensitivity {
                        Some(s) => s,
                        None => table.sensitivity(family.sensitivity_norm()),
                    };
                    let delta = match family {
                        NoiseFamily::Gaussian => Some(delta.unwrap_or(beamclean::noise::DEFAULT_DELTA)),
                        NoiseFamily::Laplace => delta,
                    };
                    NoiseMechanismSpec {
                        family,
                        scale: scale_for_reported_epsilon(family, sens, eps, delta)?,
                        epsilon: Some(eps),
                        delta,
                        sensitivity: Some(sens),
                    }
                }
                _ => return Err(usage("give exactly one of --scale and --epsilon")),
            };
            spec.validate()?;
            let obf = obfuscate_corpus(&table, &records, &spec, seed)?;
            save_obfuscated(&out, &obf)?;
            print_json(&json!({"sequences": obf.len(), "mechanism": spec}))?;
        }
        Command::Attack(args) => attack(args)?,
        Command::Evaluate {
            corpus,
            decoded,
            max_len,
            out,
        } => evaluate(&corpus, &decoded, max_len, out.as_deref())?,
        Command::Sweep { config } => {
            let cfg = SweepConfig::load(&config)?;
            let result = run_sweep(&cfg)?;
            write_results(&result, &cfg.output)?;
            for row in result.rows.iter().filter(|r| r.failed) {
                eprintln!(
                    "cell failed: epsilon={} method={} seq={}: {}",
                    row.epsilon,
                    row.method,
                    row.seq_id,
                    row.error.as_deref().unwrap_or("unknown error")
                );
            }
            print_json(&json!({
                "rows": result.rows.len(),
                "failed": result.failed_cells(),
                "sensitivity": result.sensitivity,
                "output": cfg.output,
                "summary": summary_path(&cfg.output),
            }))?;
            if result.failed_cells() > 0 {
                return Ok(3);
            }
        }
        Command::ServePrior { prior, name } => {
            let prior = NgramPrior::load(&prior)?;
            let stdin = io::stdin().lock();
            serve_prior(&prior, &name, stdin, io::stdout().lock())?;
        }
    }
    Ok(0)
}

fn resolve_sensitivity(family: NoiseFamily, given: Option<f64>, table: Option<&Path>) -> Result<f64, Failure> {
    match (given, table) {
        (Some(s), _) => Ok(s),
        (None, Some(path)) => Ok(EmbeddingTable::load(path)?.sensitivity(family.sensitivity_norm())),
        (None, None) => Err(usage("give --sensitivity or --table")),
    }
}

fn parse_prior_source(spec: &str, timeout_ms: u64) -> Result<PriorSource, Failure> {
    if spec == "uniform" {
        return Ok(PriorSource::Uniform);
    }
    if let Some(addr) = spec.strip_prefix("tcp:") {
        return Ok(PriorSource::External {
            command: None,
            address: Some(addr.to_owned()),
            timeout_ms: Some(timeout_ms),
        });
    }
    if let Some(cmd) = spec.strip_prefix("exec:") {
        let parts: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
        if parts.is_empty() {
            return Err(usage("exec: prior needs a program"));
        }
        return Ok(PriorSource::External {
            command: Some(parts),
            address: None,
            timeout_ms: Some(timeout_ms),
        });
    }
    Ok(PriorSource::Ngram { path: spec.into() })
}

fn attack(args: AttackArgs) -> Result<(), Failure> {
    let table = EmbeddingTable::load(&args.table)?;
    let sequences = load_obfuscated(&args.obfuscated)?;
    let mut decoded = Vec::with_capacity(sequences.len());
    let mut details = args.details.as_ref().map(File::create).transpose()?.map(BufWriter::new);
    match args.method {
        AttackMethod::Nn => {
            let norm = args.norm.unwrap_or(args.family.sensitivity_norm());
            for y in &sequences {
                let ids = nn_decode(&table, y, norm)?;
                decoded.push(CorpusRecord::new(y.seq_id.clone(), ids.0));
            }
        }
        AttackMethod::Beamclean => {
            let map: Option<TokenMap> = match &args.token_map {
                Some(path) => {
                    let prior_table = EmbeddingTable::load(path)?;
                    let allow = args.restrict_to.as_ref().map(read_token_list).transpose()?;
                    let map = build_token_map(&table, &prior_table, allow.as_ref());
                    let stats = map.stats();
                    eprintln!(
                        "token map: {} of {} tokens mapped into a vocabulary of {}",
                        stats.mapped, stats.src_vocab_size, stats.dst_vocab_size
                    );
                    if stats.empty {
                        return Err(Failure::Data(Error::Format("token map is empty".into())));
                    }
                    Some(map)
                }
                None => None,
            };
            let prior_vocab = map.as_ref().map_or(table.vocab_size(), TokenMap::dst_vocab_size);
            let prior: Box<dyn PriorModel> = load_prior(&parse_prior_source(&args.prior, args.timeout_ms)?, prior_vocab)?;
            let config = DecodeConfig {
                beam_width: args.beam,
                candidate_pool: args.pool,
                prior_weight: args.lambda,
                estimation: args.estimation,
                family: args.family,
                mode: args.mode,
                estimate_mu: args.estimate_mu,
                initial_params: args
                    .init_scale
                    .map(|s| beamclean::surrogate::SurrogateParams::isotropic(args.family, table.dim(), s)),
                seed: 0,
            };
            for y in &sequences {
                let result = decode(y, &table, prior.as_ref(), &config, map.as_ref())?;
                if let Some(w) = details.as_mut() {
                    serde_json::to_writer(&mut *w, &result)?;
                    w.write_all(b"\n")?;
                }
                decoded.push(CorpusRecord::new(y.seq_id.clone(), result.decoded.0));
            }
        }
    }
    if let Some(mut w) = details {
        w.flush()?;
    }
    save_corpus(&args.out, &decoded)?;
    Ok(())
}

fn evaluate(corpus: &Path, decoded: &Path, max_len: usize, out: Option<&Path>) -> Result<(), Failure> {
    let mut truth = load_corpus(corpus)?;
    truth.iter_mut().for_each(|r| r.truncate(max_len));
    let by_id: HashMap<&str, &CorpusRecord> = truth.iter().map(|r| (r.id.as_str(), r)).collect();
    let decoded = load_corpus(decoded)?;
    let mut rows = Vec::with_capacity(decoded.len());
    for rec in &decoded {
        let clean = by_id
            .get(rec.id.as_str())
            .ok_or_else(|| Failure::Data(Error::Format(format!("sequence {:?} is not in the corpus", rec.id))))?;
        let a = asr(&rec.tokens, &clean.tokens)?;
        let ann = PiiAnnotation::new(rec.id.clone(), clean.pii_spans.clone().unwrap_or_default());
        rows.push((rec.id.clone(), a, pii_recovery(&rec.tokens, &clean.tokens, &ann)?));
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
        w.write_record(["seq_id", "asr_percent", "pii_recovery_percent"]).map_err(Error::from)?;
        for (id, a, p) in &rows {
            w.write_record([id.clone(), a.to_string(), p.map(|v| v.to_string()).unwrap_or_default()])
                .map_err(Error::from)?;
        }
        w.flush()?;
    }
    print_json(&json!({
        "sequences": rows.len(),
        "mean_asr_percent": dataset_mean(rows.iter().map(|r| Some(r.1))),
        "mean_pii_recovery_percent": dataset_mean(rows.iter().map(|r| r.2)),
        "sequences_with_pii": rows.iter().filter(|r| r.2.is_some()).count(),
    }))
}

fn print_json(value: &serde_json::Value) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}
