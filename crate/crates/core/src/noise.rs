//! Defender-side additive noise: DP calibration, sampling and the `OBF1`
//! obfuscated-sequence file.
//!
//! Laplace scale is `b = sensitivity / epsilon`; the Gaussian standard
//! deviation is `sigma = sqrt(2 ln(1.25 / delta)) * sensitivity / epsilon`,
//! valid as an (epsilon, delta) guarantee only for `0 < epsilon < 1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::rng::{sequence_seed, SampleStream};
use crate::table::{EmbeddingTable, Norm, RowMatrix, TokenSequence};

const OBF_MAGIC: &[u8; 4] = b"OBF1";
const OBF_VERSION: u32 = 1;
/// Family byte written when a record carries no provenance.
const NO_PROVENANCE: u8 = 0xff;

/// Reporting delta used when none is given.
pub const DEFAULT_DELTA: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
}

impl NoiseFamily {
    /// The norm whose sensitivity calibrates this family.
    pub fn sensitivity_norm(self) -> Norm {
        match self {
            NoiseFamily::Gaussian => Norm::L2,
            NoiseFamily::Laplace => Norm::L1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Laplace => "laplace",
        }
    }

    fn code(self) -> u8 {
        match self {
            NoiseFamily::Gaussian => 0,
            NoiseFamily::Laplace => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(NoiseFamily::Gaussian),
            1 => Ok(NoiseFamily::Laplace),
            other => Err(Error::Format(format!("unknown noise family code {other}"))),
        }
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "gauss" | "normal" => Ok(NoiseFamily::Gaussian),
            "laplace" | "laplacian" => Ok(NoiseFamily::Laplace),
            other => Err(Error::invalid(format!("unknown noise family {other:?}"))),
        }
    }
}

impl std::fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMechanismSpec {
    pub family: NoiseFamily,
    /// Per-coordinate standard deviation (Gaussian) or Laplace scale `b`.
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<f64>,
}

impl NoiseMechanismSpec {
    pub fn new(family: NoiseFamily, scale: f64) -> Self {
        Self {
            family,
            scale,
            epsilon: None,
            delta: None,
            sensitivity: None,
        }
    }

    /// Builds a spec from a privacy budget through [`calibrate_scale`].
    pub fn calibrated(
        family: NoiseFamily,
        sensitivity: f64,
        epsilon: f64,
        delta: Option<f64>,
    ) -> Result<Self> {
        let scale = calibrate_scale(family, sensitivity, epsilon, delta)?;
        let spec = Self {
            family,
            scale,
            epsilon: Some(epsilon),
            delta,
            sensitivity: Some(sensitivity),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid(format!(
                "noise scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
            }
        }
        match (self.family, self.delta) {
            (NoiseFamily::Laplace, Some(_)) => {
                Err(Error::invalid("the Laplace mechanism does not carry a delta"))
            }
            (NoiseFamily::Gaussian, Some(d)) if !(d > 0.0 && d < 1.0) => {
                Err(Error::invalid(format!("delta must lie in (0, 1), got {d}")))
            }
            _ => Ok(()),
        }
    }
}

fn check_sensitivity(sensitivity: f64) -> Result<()> {
    if sensitivity.is_finite() && sensitivity >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "sensitivity must be finite and >= 0, got {sensitivity}"
        )))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// `sqrt(2 ln(1.25 / delta))`, the Gaussian-mechanism multiplier.
pub fn gaussian_factor(delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt()
}

/// Noise scale achieving `epsilon` (and `delta`) for the given sensitivity.
///
/// The Gaussian branch only accepts `0 < epsilon < 1`, the range in which the
/// closed form is a valid guarantee; use [`scale_for_reported_epsilon`] to
/// place a sweep on a wider report-only epsilon axis.
pub fn calibrate_scale(
    family: NoiseFamily,
    sensitivity: f64,
    epsilon: f64,
    delta: Option<f64>,
) -> Result<f64> {
    check_sensitivity(sensitivity)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    match family {
        NoiseFamily::Laplace => {
            if delta.is_some() {
                return Err(Error::invalid("the Laplace mechanism does not carry a delta"));
            }
            Ok(sensitivity / epsilon)
        }
        NoiseFamily::Gaussian => {
            let delta = delta.ok_or_else(|| {
                Error::invalid("the Gaussian mechanism needs delta for calibration")
            })?;
            check_delta(delta)?;
            if epsilon >= 1.0 {
                return Err(Error::invalid(format!(
                    "Gaussian calibration requires epsilon < 1, got {epsilon}"
                )));
            }
            Ok(gaussian_factor(delta) * sensitivity / epsilon)
        }
    }
}

/// Epsilon reported for a mechanism running at `scale`.
///
/// Gaussian values outside (0, 1) are returned as-is (report only); a missing
/// delta defaults to [`DEFAULT_DELTA`].
pub fn epsilon_from_scale(
    family: NoiseFamily,
    sensitivity: f64,
    scale: f64,
    delta: Option<f64>,
) -> Result<f64> {
    check_sensitivity(sensitivity)?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    match family {
        NoiseFamily::Laplace => Ok(sensitivity / scale),
        NoiseFamily::Gaussian => {
            let delta = delta.unwrap_or(DEFAULT_DELTA);
            check_delta(delta)?;
            Ok(gaussian_factor(delta) * sensitivity / scale)
        }
    }
}

/// Algebraic inverse of [`epsilon_from_scale`] without the Gaussian validity
/// range; used to lay out epsilon grids that extend past 1.
pub fn scale_for_reported_epsilon(
    family: NoiseFamily,
    sensitivity: f64,
    epsilon: f64,
    delta: Option<f64>,
) -> Result<f64> {
    check_sensitivity(sensitivity)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    match family {
        NoiseFamily::Laplace => Ok(sensitivity / epsilon),
        NoiseFamily::Gaussian => {
            let delta = delta.unwrap_or(DEFAULT_DELTA);
            check_delta(delta)?;
            Ok(gaussian_factor(delta) * sensitivity / epsilon)
        }
    }
}

/// `rows * cols` i.i.d. zero-centred noise coordinates in row-major order.
pub fn sample_noise(family: NoiseFamily, scale: f64, rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut stream = SampleStream::new(seed);
    let n = rows * cols;
    match family {
        NoiseFamily::Gaussian => (0..n).map(|_| scale * stream.standard_normal()).collect(),
        NoiseFamily::Laplace => (0..n).map(|_| stream.laplace(scale)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mechanism: NoiseMechanismSpec,
    pub seed: u64,
}

/// The leaked `T x d` matrix plus defender-only metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ObfuscatedSequence {
    pub seq_id: String,
    pub values: RowMatrix,
    pub provenance: Option<Provenance>,
}

impl ObfuscatedSequence {
    pub fn new(seq_id: impl Into<String>, values: RowMatrix) -> Result<Self> {
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("obfuscated values must be finite".into()));
        }
        Ok(Self {
            seq_id: seq_id.into(),
            values,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        self.values.row(t)
    }
}

/// `y_t = x(w_t) + n_t`, with all `T * d` coordinates of `n` drawn i.i.d.
/// from the mechanism's family at its scale.
pub fn obfuscate_sequence(
    table: &EmbeddingTable,
    seq: &TokenSequence,
    spec: &NoiseMechanismSpec,
    seed: u64,
) -> Result<ObfuscatedSequence> {
    spec.validate()?;
    let clean = table.embed_sequence(seq)?;
    let noise = sample_noise(spec.family, spec.scale, seq.len(), table.dim(), seed);
    let data: Vec<f32> = clean
        .as_slice()
        .iter()
        .zip(&noise)
        .map(|(&x, &n)| (f64::from(x) + n) as f32)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("noise overflowed binary32".into()));
    }
    Ok(ObfuscatedSequence {
        seq_id: String::new(),
        values: RowMatrix::new(seq.len(), table.dim(), data)?,
        provenance: Some(Provenance {
            mechanism: *spec,
            seed,
        }),
    })
}

/// Obfuscates every record with its own sub-seed `seed ^ fnv1a64(id)`.
pub fn obfuscate_corpus(
    table: &EmbeddingTable,
    corpus: &[CorpusRecord],
    spec: &NoiseMechanismSpec,
    seed: u64,
) -> Result<Vec<ObfuscatedSequence>> {
    corpus
        .par_iter()
        .map(|rec| {
            let mut obf = obfuscate_sequence(table, &rec.tokens, spec, sequence_seed(seed, &rec.id))?;
            obf.seq_id = rec.id.clone();
            Ok(obf)
        })
        .collect()
}

pub fn write_obfuscated<W: Write>(w: &mut W, records: &[ObfuscatedSequence]) -> Result<()> {
    w.write_all(OBF_MAGIC)?;
    w.write_all(&OBF_VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for rec in records {
        let id = rec.seq_id.as_bytes();
        let id_len = u32::try_from(id.len()).map_err(|_| Error::Format("sequence id too long".into()))?;
        let rows = u32::try_from(rec.len()).map_err(|_| Error::Format("sequence too long".into()))?;
        let cols = u32::try_from(rec.dim()).map_err(|_| Error::Format("dimension too large".into()))?;
        w.write_all(&id_len.to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&cols.to_le_bytes())?;
        for v in rec.values.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        let (code, scale, eps, delta, seed) = match &rec.provenance {
            Some(p) => (
                p.mechanism.family.code(),
                p.mechanism.scale,
                p.mechanism.epsilon.unwrap_or(f64::NAN),
                p.mechanism.delta.unwrap_or(f64::NAN),
                p.seed,
            ),
            None => (NO_PROVENANCE, f64::NAN, f64::NAN, f64::NAN, 0),
        };
        w.write_all(&[code])?;
        w.write_all(&scale.to_le_bytes())?;
        w.write_all(&eps.to_le_bytes())?;
        w.write_all(&delta.to_le_bytes())?;
        w.write_all(&seed.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_obfuscated<R: Read>(r: &mut R) -> Result<Vec<ObfuscatedSequence>> {
    let mut magic = [0u8; 4];
    take(r, &mut magic, "magic")?;
    if &magic != OBF_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"OBF1\"")));
    }
    let version = u32::from_le_bytes(take_array(r, "version")?);
    if version != OBF_VERSION {
        return Err(Error::Format(format!("unsupported OBF1 version {version}")));
    }
    let count = u64::from_le_bytes(take_array(r, "record count")?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for k in 0..count {
        let id_len = u32::from_le_bytes(take_array(r, "id length")?) as usize;
        let mut id = vec![0u8; id_len];
        take(r, &mut id, "id")?;
        let seq_id = String::from_utf8(id).map_err(|_| Error::Format(format!("record {k}: id is not UTF-8")))?;
        let rows = u32::from_le_bytes(take_array(r, "T")?) as usize;
        let cols = u32::from_le_bytes(take_array(r, "d")?) as usize;
        let mut data = Vec::with_capacity((rows * cols).min(1 << 26));
        for _ in 0..rows * cols {
            data.push(f32::from_le_bytes(take_array(r, "values")?));
        }
        let [code] = take_array::<_, 1>(r, "family")?;
        let scale = f64::from_le_bytes(take_array(r, "scale")?);
        let eps = f64::from_le_bytes(take_array(r, "epsilon")?);
        let delta = f64::from_le_bytes(take_array(r, "delta")?);
        let seed = u64::from_le_bytes(take_array(r, "seed")?);
        let provenance = if code == NO_PROVENANCE {
            None
        } else {
            Some(Provenance {
                mechanism: NoiseMechanismSpec {
                    family: NoiseFamily::from_code(code)?,
                    scale,
                    epsilon: (!eps.is_nan()).then_some(eps),
                    delta: (!delta.is_nan()).then_some(delta),
                    sensitivity: None,
                },
                seed,
            })
        };
        let mut rec = ObfuscatedSequence::new(seq_id, RowMatrix::new(rows, cols, data)?)?;
        rec.provenance = provenance;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_obfuscated(path: impl AsRef<Path>, records: &[ObfuscatedSequence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_obfuscated(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn load_obfuscated(path: impl AsRef<Path>) -> Result<Vec<ObfuscatedSequence>> {
    read_obfuscated(&mut BufReader::new(File::open(path)?))
}

fn take<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Truncated(format!("OBF1 file ends while reading {what}")))
}

fn take_array<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    take(r, &mut b, what)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::nn_decode;
    use proptest::prelude::*;

    #[test]
    fn laplace_ratio() {
        assert_eq!(calibrate_scale(NoiseFamily::Laplace, 2.0, 1.0, None).unwrap(), 2.0);
        assert_eq!(epsilon_from_scale(NoiseFamily::Laplace, 7.0, 7.0, None).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_zero_sensitivity() {
        let s = calibrate_scale(NoiseFamily::Gaussian, 0.0, 0.5, Some(1e-5)).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn gaussian_validity_range() {
        assert!(calibrate_scale(NoiseFamily::Gaussian, 1.0, 1.0, Some(1e-5)).is_err());
        assert!(calibrate_scale(NoiseFamily::Gaussian, 1.0, 0.5, None).is_err());
        assert!(calibrate_scale(NoiseFamily::Gaussian, 1.0, 0.5, Some(1.0)).is_err());
        assert!(calibrate_scale(NoiseFamily::Laplace, 1.0, 0.0, None).is_err());
        assert!(calibrate_scale(NoiseFamily::Laplace, 1.0, 1.0, Some(1e-5)).is_err());
        assert!(calibrate_scale(NoiseFamily::Laplace, -1.0, 1.0, None).is_err());
        // Report-only epsilons past 1 are fine.
        let eps = epsilon_from_scale(NoiseFamily::Gaussian, 10.0, 0.5, None).unwrap();
        assert!(eps > 1.0);
        assert!(epsilon_from_scale(NoiseFamily::Gaussian, 1.0, 0.0, None).is_err());
    }

    #[test]
    fn epsilon_round_trip_grid() {
        for family in [NoiseFamily::Gaussian, NoiseFamily::Laplace] {
            for i in 1..=20 {
                let eps = i as f64 / 21.0;
                for sens in [0.1, 1.0, 3.7, 120.0] {
                    let delta = (family == NoiseFamily::Gaussian).then_some(1e-6 * i as f64);
                    let scale = calibrate_scale(family, sens, eps, delta).unwrap();
                    let back = epsilon_from_scale(family, sens, scale, delta).unwrap();
                    assert!(((back - eps) / eps).abs() < 1e-12, "{family} {eps} {back}");
                }
            }
        }
    }

    fn small_table() -> EmbeddingTable {
        EmbeddingTable::generate_synthetic(30, 8, 5, 0.5).unwrap()
    }

    #[test]
    fn tiny_scale_is_invisible_to_nn() {
        let t = small_table();
        let w: TokenSequence = vec![3, 17, 0, 29, 29, 8].into();
        for family in [NoiseFamily::Gaussian, NoiseFamily::Laplace] {
            let y = obfuscate_sequence(&t, &w, &NoiseMechanismSpec::new(family, 1e-12), 1).unwrap();
            assert_eq!(nn_decode(&t, &y, Norm::L2).unwrap(), w);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let t = small_table();
        let w: TokenSequence = vec![1, 2, 3].into();
        let spec = NoiseMechanismSpec::new(NoiseFamily::Laplace, 0.3);
        let a = obfuscate_sequence(&t, &w, &spec, 77).unwrap();
        let b = obfuscate_sequence(&t, &w, &spec, 77).unwrap();
        assert_eq!(a, b);
        let c = obfuscate_sequence(&t, &w, &spec, 78).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn gaussian_noise_moments() {
        // T=1000, d=64, sigma=0.5.
        let (t_len, d, sigma) = (1000usize, 64usize, 0.5);
        let table = EmbeddingTable::generate_synthetic(50, d, 2, 0.0).unwrap();
        let w: TokenSequence = (0..t_len as u32).map(|i| i % 50).collect::<Vec<_>>().into();
        let y = obfuscate_sequence(&table, &w, &NoiseMechanismSpec::new(NoiseFamily::Gaussian, sigma), 2024).unwrap();
        let x = table.embed_sequence(&w).unwrap();
        let resid: Vec<f64> = y
            .values
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .map(|(&a, &b)| f64::from(a) - f64::from(b))
            .collect();
        let n = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / n;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn laplace_variance_converges() {
        let b = 0.8;
        let draws = sample_noise(NoiseFamily::Laplace, b, 1000, 100, 31);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        assert!((var / (2.0 * b * b) - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn obf_file_round_trip_and_errors() {
        let t = small_table();
        let spec = NoiseMechanismSpec {
            epsilon: Some(0.5),
            delta: Some(1e-5),
            ..NoiseMechanismSpec::new(NoiseFamily::Gaussian, 0.7)
        };
        let mut a = obfuscate_sequence(&t, &vec![0, 1, 2].into(), &spec, 5).unwrap();
        a.seq_id = "alpha".into();
        let mut b = ObfuscatedSequence::new("", RowMatrix::zeros(0, 8)).unwrap();
        b.seq_id = "empty".into();
        let mut bytes = Vec::new();
        write_obfuscated(&mut bytes, &[a.clone(), b.clone()]).unwrap();
        let back = read_obfuscated(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, vec![a, b]);

        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(read_obfuscated(&mut bad.as_slice()), Err(Error::Format(_))));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(read_obfuscated(&mut &cut[..]), Err(Error::Truncated(_))));
    }

    #[test]
    fn corpus_sub_seeds_differ_per_id() {
        let t = small_table();
        let corpus = vec![
            CorpusRecord::new("a", vec![1, 2]),
            CorpusRecord::new("b", vec![1, 2]),
        ];
        let spec = NoiseMechanismSpec::new(NoiseFamily::Gaussian, 0.4);
        let out = obfuscate_corpus(&t, &corpus, &spec, 9).unwrap();
        assert_eq!(out[0].seq_id, "a");
        assert_ne!(out[0].values, out[1].values);
        assert_eq!(out[0].provenance.unwrap().seed, sequence_seed(9, "a"));
    }

    #[test]
    fn invalid_spec_rejected() {
        let t = small_table();
        let w: TokenSequence = vec![0].into();
        for scale in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let spec = NoiseMechanismSpec::new(NoiseFamily::Gaussian, scale);
            assert!(obfuscate_sequence(&t, &w, &spec, 0).is_err());
        }
        let spec = NoiseMechanismSpec::new(NoiseFamily::Gaussian, 1.0);
        assert!(matches!(
            obfuscate_sequence(&t, &vec![30].into(), &spec, 0),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn noise_is_input_independent(seed in any::<u64>(), a in 0u32..30, b in 0u32..30) {
            let t = small_table();
            let spec = NoiseMechanismSpec::new(NoiseFamily::Laplace, 0.25);
            let wa: TokenSequence = vec![a, b, a].into();
            let wb: TokenSequence = vec![b, a, 7].into();
            let expected = sample_noise(spec.family, spec.scale, 3, t.dim(), seed);
            for w in [wa, wb] {
                let y = obfuscate_sequence(&t, &w, &spec, seed).unwrap();
                let x = t.embed_sequence(&w).unwrap();
                for ((&yv, &xv), &n) in y.values.as_slice().iter().zip(x.as_slice()).zip(&expected) {
                    // y is rounded to binary32 once.
                    let tol = f64::from(f32::EPSILON) * (f64::from(xv) + n).abs().max(1e-30);
                    prop_assert!((f64::from(yv) - f64::from(xv) - n).abs() <= tol);
                }
            }
        }
    }
}
