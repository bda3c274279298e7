//! Sentence embeddings behind one contract: a fixed-dimension vector per text,
//! produced by mean-pooling a frozen model's output token embeddings (over all
//! positions, special tokens included).
//!
//! Three backends are provided:
//! - [`FileEncoder`] looks vectors up in a JSONL store written by an offline
//!   extraction job;
//! - [`SyntheticEncoder`] generates vectors with a known polarity axis and
//!   injected per-group bias, for end-to-end checks without a real model;
//! - [`ExternalEncoder`] talks line-delimited JSON to a child process.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::text;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding has zero dimension"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("embedding entry {i} is not finite")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

pub trait Encoder: Send + Sync {
    fn dimension(&self) -> usize;

    /// Token the model uses for masked positions; probe baselines put it in
    /// the nationality slot.
    fn mask_token(&self) -> &str;

    fn encode(&self, text: &str) -> Result<EmbeddingVector>;

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                self.encode(t).map_err(|e| Error::AtIndex {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    File,
    Synthetic,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub dimension: usize,
    #[serde(default = "default_mask_token")]
    pub mask_token: String,
    /// Synthetic: generator seed. Defaults to the audit seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Synthetic: direction carrying sentiment. Derived from the seed when absent.
    #[serde(default)]
    pub polarity_axis: Option<Vec<f64>>,
    /// Synthetic: injected bias coefficient per surface string.
    #[serde(default)]
    pub bias_map: BTreeMap<String, f64>,
    /// File: JSONL embedding store.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// External: program and arguments speaking the line protocol.
    #[serde(default)]
    pub command: Option<Vec<String>>,
}

fn default_mask_token() -> String {
    "[MASK]".to_string()
}

impl BackendSpec {
    pub fn synthetic(dimension: usize, seed: u64) -> Self {
        BackendSpec {
            kind: BackendKind::Synthetic,
            dimension,
            mask_token: default_mask_token(),
            seed: Some(seed),
            polarity_axis: None,
            bias_map: BTreeMap::new(),
            path: None,
            command: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::invalid("backend dimension must be positive"));
        }
        if self.mask_token.is_empty() {
            return Err(Error::invalid("mask token is empty"));
        }
        match self.kind {
            BackendKind::File if self.path.is_none() => {
                Err(Error::invalid("file backend needs `path`"))
            }
            BackendKind::External if self.command.as_ref().is_none_or(|c| c.is_empty()) => {
                Err(Error::invalid("external backend needs `command`"))
            }
            BackendKind::Synthetic => match &self.polarity_axis {
                Some(axis) if axis.len() != self.dimension => Err(Error::DimensionMismatch {
                    expected: self.dimension,
                    actual: axis.len(),
                }),
                Some(axis) if axis.iter().all(|v| *v == 0.0) => {
                    Err(Error::invalid("polarity axis is the zero vector"))
                }
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Instantiate the backend. `polarity_words` only matters for the
    /// synthetic backend; `default_seed` fills a missing synthetic seed.
    pub fn build(
        &self,
        polarity_words: &[(String, i8)],
        default_seed: u64,
    ) -> Result<Box<dyn Encoder>> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::File => Box::new(FileEncoder::load(
                self.path.as_ref().expect("validated"),
                self.dimension,
                &self.mask_token,
            )?),
            BackendKind::Synthetic => {
                let seed = self.seed.unwrap_or(default_seed);
                let axis = match &self.polarity_axis {
                    Some(a) => a.clone(),
                    None => seeded_unit_axis(self.dimension, seed),
                };
                Box::new(SyntheticEncoder::new(
                    self.dimension,
                    seed,
                    axis,
                    self.bias_map.clone(),
                    polarity_words.to_vec(),
                    &self.mask_token,
                )?)
            }
            BackendKind::External => Box::new(ExternalEncoder::spawn(
                self.command.as_ref().expect("validated"),
                self.dimension,
                &self.mask_token,
            )?),
        })
    }
}

// ---------------------------------------------------------------------------
// File store

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub key: String,
    pub text: String,
    pub vector: Vec<f64>,
}

/// Write a JSONL store. Records with a repeated key are written once.
pub fn write_store<'a, I>(path: &Path, entries: I) -> Result<usize>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    let mut seen = std::collections::HashSet::new();
    for (text, vector) in entries {
        let key = text::content_key(text);
        if !seen.insert(key.clone()) {
            continue;
        }
        let record = StoreRecord {
            key,
            text: text.to_string(),
            vector: vector.to_vec(),
        };
        let line = serde_json::to_string(&record).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(seen.len())
}

pub struct FileEncoder {
    vectors: HashMap<String, EmbeddingVector>,
    dimension: usize,
    mask_token: String,
}

impl FileEncoder {
    pub fn load(path: &Path, dimension: usize, mask_token: &str) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening embedding store {}", path.display()), e))?;
        let mut vectors = HashMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line =
                line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {message}", lineno + 1),
            };
            let record: StoreRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if record.vector.len() != dimension {
                return Err(parse_err(format!(
                    "vector has dimension {}, expected {dimension}",
                    record.vector.len()
                )));
            }
            if !record.text.is_empty() && text::content_key(&record.text) != record.key {
                return Err(parse_err("key does not match the text hash".into()));
            }
            let v = EmbeddingVector::new(record.vector).map_err(|e| parse_err(e.to_string()))?;
            vectors.insert(record.key, v);
        }
        Ok(FileEncoder {
            vectors,
            dimension,
            mask_token: mask_token.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, text: &str) -> bool {
        self.vectors.contains_key(&text::content_key(text))
    }
}

impl Encoder for FileEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        self.vectors
            .get(&text::content_key(text))
            .cloned()
            .ok_or_else(|| Error::MissingEmbedding {
                text: text.to_string(),
            })
    }
}

// ---------------------------------------------------------------------------
// Synthetic backend

fn seeded_rng(domain: &[u8], seed: u64, text: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(domain);
    h.update(seed.to_le_bytes());
    let normalized: String = text.nfc().collect();
    h.update(normalized.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Unit vector drawn from the seed alone.
pub fn seeded_unit_axis(dimension: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(b"polarity-axis", seed, "");
    let v = normals(&mut rng, dimension);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Coefficient of `v` along `axis`: `v·axis / |axis|²`.
pub fn project(v: &[f64], axis: &[f64]) -> f64 {
    let num: f64 = v.iter().zip(axis).map(|(a, b)| a * b).sum();
    let den: f64 = axis.iter().map(|a| a * a).sum();
    num / den
}

/// Mean polarity of the polarity words present in `text` (each distinct word
/// counted once); 0 when none occur.
pub fn text_polarity(text: &str, polarity_words: &[(String, i8)]) -> f64 {
    let present: Vec<i8> = polarity_words
        .iter()
        .filter(|(w, _)| text::contains_word(text, w))
        .map(|(_, p)| *p)
        .collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().map(|&p| p as f64).sum::<f64>() / present.len() as f64
    }
}

/// `base(text) + (polarity(text) + Σ bias[g present]) · axis`.
///
/// The base vector is a seeded, text-hashed standard-normal draw with its
/// component along `axis` removed, so the projection of any difference of two
/// encodings onto `axis` is exactly the difference of their injected
/// coefficients.
pub fn synthetic_encode(
    text: &str,
    seed: u64,
    axis: &[f64],
    bias_map: &BTreeMap<String, f64>,
    polarity_words: &[(String, i8)],
) -> Vec<f64> {
    let d = axis.len();
    let mut rng = seeded_rng(b"base", seed, text);
    let mut v = normals(&mut rng, d);
    let along = project(&v, axis);
    let bias: f64 = bias_map
        .iter()
        .filter(|(g, _)| text::contains_word(text, g))
        .map(|(_, c)| *c)
        .sum();
    let coeff = text_polarity(text, polarity_words) + bias;
    for (x, a) in v.iter_mut().zip(axis) {
        *x += (coeff - along) * a;
    }
    v
}

pub struct SyntheticEncoder {
    dimension: usize,
    seed: u64,
    axis: Vec<f64>,
    bias_map: BTreeMap<String, f64>,
    polarity_words: Vec<(String, i8)>,
    mask_token: String,
}

impl SyntheticEncoder {
    pub fn new(
        dimension: usize,
        seed: u64,
        axis: Vec<f64>,
        bias_map: BTreeMap<String, f64>,
        polarity_words: Vec<(String, i8)>,
        mask_token: &str,
    ) -> Result<Self> {
        if axis.len() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                actual: axis.len(),
            });
        }
        Ok(SyntheticEncoder {
            dimension,
            seed,
            axis,
            bias_map,
            polarity_words,
            mask_token: mask_token.to_string(),
        })
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }
}

impl Encoder for SyntheticEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        EmbeddingVector::new(synthetic_encode(
            text,
            self.seed,
            &self.axis,
            &self.bias_map,
            &self.polarity_words,
        ))
    }
}

// ---------------------------------------------------------------------------
// External process backend

#[derive(Serialize)]
struct ExternalRequest<'a> {
    id: u64,
    text: &'a str,
}

#[derive(Deserialize)]
struct ExternalResponse {
    id: u64,
    vector: Vec<f64>,
}

struct Pipe {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

pub struct ExternalEncoder {
    child: Mutex<Child>,
    pipe: Mutex<Pipe>,
    dimension: usize,
    mask_token: String,
}

impl ExternalEncoder {
    pub fn spawn(command: &[String], dimension: usize, mask_token: &str) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::invalid("empty external command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("spawning `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        Ok(ExternalEncoder {
            child: Mutex::new(child),
            pipe: Mutex::new(Pipe {
                stdin,
                stdout,
                next_id: 0,
            }),
            dimension,
            mask_token: mask_token.to_string(),
        })
    }
}

impl Encoder for ExternalEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        let mut pipe = self.pipe.lock().map_err(|_| Error::Transport("poisoned".into()))?;
        let id = pipe.next_id;
        pipe.next_id += 1;
        let request = serde_json::to_string(&ExternalRequest { id, text }).expect("serializes");
        writeln!(pipe.stdin, "{request}")
            .and_then(|_| pipe.stdin.flush())
            .map_err(|e| Error::Transport(format!("write: {e}")))?;
        let mut line = String::new();
        let n = pipe
            .stdout
            .read_line(&mut line)
            .map_err(|e| Error::Transport(format!("read: {e}")))?;
        if n == 0 {
            return Err(Error::Transport("child closed its output".into()));
        }
        let response: ExternalResponse = serde_json::from_str(&line)
            .map_err(|e| Error::Transport(format!("bad response: {e}")))?;
        if response.id != id {
            return Err(Error::Transport(format!(
                "response id {} does not match request {id}",
                response.id
            )));
        }
        if response.vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: response.vector.len(),
            });
        }
        EmbeddingVector::new(response.vector)
    }
}

impl Drop for ExternalEncoder {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words() -> Vec<(String, i8)> {
        vec![("happy".into(), 1), ("angry".into(), -1), ("neutral".into(), 0)]
    }

    fn synth(bias: &[(&str, f64)]) -> SyntheticEncoder {
        let axis = seeded_unit_axis(16, 3);
        let bias_map = bias.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        SyntheticEncoder::new(16, 11, axis, bias_map, words(), "[MASK]").unwrap()
    }

    #[test]
    fn synthetic_is_deterministic() {
        let e = synth(&[]);
        assert_eq!(e.encode("a b c").unwrap(), e.encode("a b c").unwrap());
        assert_ne!(e.encode("a b c").unwrap(), e.encode("a b d").unwrap());
    }

    #[test]
    fn synthetic_polarity_direction() {
        let e = synth(&[]);
        let pos = e.encode("This day made me happy.").unwrap();
        let neg = e.encode("This day made me angry.").unwrap();
        let diff: Vec<f64> = pos.as_slice().iter().zip(neg.as_slice()).map(|(a, b)| a - b).collect();
        let along = project(&diff, e.axis());
        assert!((along - 2.0).abs() < 1e-9, "{along}");
    }

    #[test]
    fn synthetic_base_only_without_signal() {
        let e = synth(&[]);
        let v = e.encode("A plain sentence.").unwrap();
        assert!(project(v.as_slice(), e.axis()).abs() < 1e-12);
    }

    #[test]
    fn synthetic_injected_bias_is_exact() {
        let e = synth(&[("groupX", -0.5)]);
        let base = e.encode("This [MASK] person is neutral.").unwrap();
        let var = e.encode("This groupX person is neutral.").unwrap();
        let diff: Vec<f64> = var.as_slice().iter().zip(base.as_slice()).map(|(a, b)| a - b).collect();
        assert!((project(&diff, e.axis()) + 0.5).abs() < 1e-9);
    }

    #[test]
    fn synthetic_seed_sensitivity() {
        let axis = seeded_unit_axis(8, 0);
        let a = synthetic_encode("x", 1, &axis, &BTreeMap::new(), &[]);
        let b = synthetic_encode("x", 2, &axis, &BTreeMap::new(), &[]);
        assert_ne!(a, b);
    }

    #[test]
    fn non_unit_axis_projection() {
        let axis: Vec<f64> = seeded_unit_axis(8, 0).iter().map(|x| x * 3.0).collect();
        let bias = BTreeMap::from([("g".to_string(), 0.25)]);
        let a = synthetic_encode("the g one", 1, &axis, &bias, &[]);
        assert!((project(&a, &axis) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn file_store_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let e = synth(&[]);
        let texts = ["one.", "two.", "one.", "Syri\u{00eb}r"];
        let vecs: Vec<_> = texts.iter().map(|t| e.encode(t).unwrap()).collect();
        let written = write_store(
            &path,
            texts.iter().zip(&vecs).map(|(t, v)| (*t, v.as_slice())),
        )
        .unwrap();
        assert_eq!(written, 3);
        let store = FileEncoder::load(&path, 16, "[MASK]").unwrap();
        assert_eq!(store.len(), 3);
        for (t, v) in texts.iter().zip(&vecs) {
            let got = store.encode(t).unwrap();
            let bits: Vec<u64> = got.as_slice().iter().map(|x| x.to_bits()).collect();
            let want: Vec<u64> = v.as_slice().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits, want);
        }
        // NFC lookup
        assert!(store.contains("Syrie\u{0308}r"));
        let err = store.encode("absent").unwrap_err();
        assert!(err.is_missing_data());
    }

    #[test]
    fn file_store_rejects_wrong_dimension_and_bad_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        write_store(&path, [("a", &[1.0, 2.0][..])]).unwrap();
        assert!(FileEncoder::load(&path, 3, "[MASK]").is_err());
        std::fs::write(&path, "{\"key\":\"00\",\"text\":\"a\",\"vector\":[1.0]}\n").unwrap();
        assert!(FileEncoder::load(&path, 1, "[MASK]").is_err());
    }

    #[test]
    fn batch_matches_single_and_reports_index() {
        let e = synth(&[]);
        assert!(e.encode_batch(&[]).unwrap().is_empty());
        let got = e.encode_batch(&["a", "b"]).unwrap();
        assert_eq!(got, vec![e.encode("a").unwrap(), e.encode("b").unwrap()]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        write_store(&path, [("a", &[1.0][..])]).unwrap();
        let store = FileEncoder::load(&path, 1, "[MASK]").unwrap();
        match store.encode_batch(&["a", "zzz"]).unwrap_err() {
            Error::AtIndex { index, .. } => assert_eq!(index, 1),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn backend_spec_validation() {
        let mut spec = BackendSpec::synthetic(4, 0);
        assert!(spec.validate().is_ok());
        spec.polarity_axis = Some(vec![1.0, 0.0]);
        assert!(spec.validate().is_err());
        spec.polarity_axis = Some(vec![0.0; 4]);
        assert!(spec.validate().is_err());
        spec.dimension = 0;
        assert!(spec.validate().is_err());
        let file = BackendSpec {
            kind: BackendKind::File,
            ..BackendSpec::synthetic(4, 0)
        };
        assert!(file.validate().is_err());
    }
}
