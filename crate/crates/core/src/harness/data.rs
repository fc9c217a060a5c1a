//! Synthetic corpora and acoustic features, plus the on-disk dataset format.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::RunConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::vocab::SEPARATOR;

/// Characters words are drawn from.
const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz";

/// Knobs of the synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub frequent_words: usize,
    pub oov_words: usize,
    /// Training occurrences guaranteed for every frequent word.
    pub min_count: usize,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub max_words: usize,
    /// Chance that a test word is one of the rare words.
    pub test_oov_rate: f64,
    pub frames_per_token: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
}

impl SyntheticSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            seed: cfg.seed,
            frequent_words: cfg.frequent_words,
            oov_words: cfg.oov_words,
            min_count: cfg.min_count,
            train_utterances: cfg.train_utterances,
            test_utterances: cfg.test_utterances,
            max_words: cfg.max_words,
            test_oov_rate: 0.1,
            frames_per_token: cfg.frames_per_token,
            feature_dim: cfg.feature_dim,
            noise_std: cfg.noise_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequent_words == 0 || self.max_words == 0 || self.frames_per_token == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "frequent_words, max_words, frames_per_token and feature_dim must be positive".into(),
            ));
        }
        if self.min_count < 4 {
            // Rare words occur 1 to 3 times and must stay below the threshold.
            return Err(Error::Config("min_count must be at least 4 for synthetic data".into()));
        }
        let slots = self.frequent_words * self.min_count + self.oov_words * 3;
        if slots > self.train_utterances * self.max_words {
            return Err(Error::Config(format!(
                "{} utterances of at most {} words cannot hold {slots} word occurrences",
                self.train_utterances, self.max_words
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

/// Training and test sentences with the word lists they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub frequent: Vec<String>,
    pub rare: Vec<String>,
    pub train: Vec<Vec<String>>,
    pub test: Vec<Vec<String>>,
}

fn random_word<R: Rng + ?Sized>(rng: &mut R, min_len: usize, max_len: usize) -> String {
    let letters: Vec<char> = ALPHABET.chars().collect();
    let len = rng.random_range(min_len..=max_len);
    (0..len).map(|_| *letters.choose(rng).unwrap()).collect()
}

/// Draws the word lists and sentences. Every frequent word occurs at least
/// `min_count` times in training; every rare word one to three times. About
/// half of the rare words extend a frequent word.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = spec.rng(0);
    let mut seen = BTreeSet::new();
    let mut frequent = Vec::with_capacity(spec.frequent_words);
    while frequent.len() < spec.frequent_words {
        let w = random_word(&mut rng, 2, 5);
        if seen.insert(w.clone()) {
            frequent.push(w);
        }
    }
    let mut rare = Vec::with_capacity(spec.oov_words);
    while rare.len() < spec.oov_words {
        let w = if rng.random_bool(0.5) {
            format!("{}{}", frequent.choose(&mut rng).unwrap(), random_word(&mut rng, 1, 3))
        } else {
            random_word(&mut rng, 3, 6)
        };
        if seen.insert(w.clone()) {
            rare.push(w);
        }
    }

    let mut slots: Vec<String> = Vec::new();
    for w in &frequent {
        let n = spec.min_count + rng.random_range(0..3);
        slots.extend(std::iter::repeat_n(w.clone(), n));
    }
    for w in &rare {
        let n = rng.random_range(1..=3);
        slots.extend(std::iter::repeat_n(w.clone(), n));
    }
    let capacity = spec.train_utterances * spec.max_words;
    slots.truncate(capacity);
    while slots.len() < spec.train_utterances {
        slots.push(frequent.choose(&mut rng).unwrap().clone());
    }
    slots.shuffle(&mut rng);

    // One word per sentence, then the remainder spread over sentences with
    // room left.
    let mut sizes = vec![1usize; spec.train_utterances];
    let mut extra = slots.len() - spec.train_utterances;
    while extra > 0 {
        let i = rng.random_range(0..sizes.len());
        if sizes[i] < spec.max_words {
            sizes[i] += 1;
            extra -= 1;
        }
    }
    let mut it = slots.into_iter();
    let train = sizes.iter().map(|&n| it.by_ref().take(n).collect()).collect();

    let test = (0..spec.test_utterances)
        .map(|_| {
            let n = rng.random_range(1..=spec.max_words);
            (0..n)
                .map(|_| {
                    let pool = if !rare.is_empty() && rng.random_bool(spec.test_oov_rate) {
                        &rare
                    } else {
                        &frequent
                    };
                    pool.choose(&mut rng).unwrap().clone()
                })
                .collect()
        })
        .collect();
    Ok(SyntheticCorpus {
        frequent,
        rare,
        train,
        test,
    })
}

/// The acoustic realization of a sentence: single letters with `$` before
/// every word and after the last.
pub fn acoustic_tokens<S: AsRef<str>>(words: &[S]) -> Vec<String> {
    let mut out = vec![SEPARATOR.to_string()];
    for w in words {
        out.extend(w.as_ref().chars().map(|c| c.to_string()));
        out.push(SEPARATOR.to_string());
    }
    out
}

/// One fixed random frame sequence per acoustic token.
#[derive(Clone, Debug, PartialEq)]
pub struct Templates {
    templates: BTreeMap<String, Tensor>,
    frames: usize,
    dim: usize,
}

impl Templates {
    pub fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = spec.rng(1);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut templates = BTreeMap::new();
        let tokens =
            ALPHABET
                .chars()
                .map(|c| c.to_string())
                .chain(["'".to_string(), "*".to_string(), SEPARATOR.to_string()]);
        for tok in tokens {
            let data = (0..spec.frames_per_token * spec.feature_dim)
                .map(|_| normal.sample(&mut rng))
                .collect();
            let t = Tensor::matrix(spec.frames_per_token, spec.feature_dim, data).expect("template shape");
            templates.insert(tok, t);
        }
        Self {
            templates,
            frames: spec.frames_per_token,
            dim: spec.feature_dim,
        }
    }

    pub fn get(&self, token: &str) -> Option<&Tensor> {
        self.templates.get(token)
    }

    pub fn frames_per_token(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Concatenated templates of `tokens` plus Gaussian noise.
    pub fn render<S: AsRef<str>, R: Rng + ?Sized>(&self, tokens: &[S], noise_std: f64, rng: &mut R) -> Result<Tensor> {
        let mut data = Vec::with_capacity(tokens.len() * self.frames * self.dim);
        for tok in tokens {
            let t = self
                .templates
                .get(tok.as_ref())
                .ok_or_else(|| Error::Dataset(format!("no template for token {:?}", tok.as_ref())))?;
            data.extend_from_slice(t.data());
        }
        if noise_std > 0.0 {
            let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
            for x in &mut data {
                *x += normal.sample(rng);
            }
        }
        Tensor::matrix(tokens.len() * self.frames, self.dim, data)
    }
}

/// Features and transcript of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub words: Vec<String>,
    pub features: Tensor,
}

/// Renders `sentences` through `templates`. `stream` selects an independent
/// noise sequence so train and test noise never coincide.
pub fn render_sentences(
    spec: &SyntheticSpec,
    templates: &Templates,
    sentences: &[Vec<String>],
    stream: u64,
) -> Result<Vec<Utterance>> {
    let mut rng = spec.rng(stream);
    sentences
        .iter()
        .map(|words| {
            let features = templates.render(&acoustic_tokens(words), spec.noise_std, &mut rng)?;
            Ok(Utterance {
                words: words.clone(),
                features,
            })
        })
        .collect()
}

/// Rendered train and test sets.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub corpus: SyntheticCorpus,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let corpus = generate_corpus(spec)?;
    let templates = Templates::new(spec);
    let train = render_sentences(spec, &templates, &corpus.train, 2)?;
    let test = render_sentences(spec, &templates, &corpus.test, 3)?;
    Ok(SyntheticData { corpus, train, test })
}

/// The first `count` training utterances of the synthetic corpus.
pub fn generate_dataset(spec: &SyntheticSpec, count: usize) -> Result<Vec<Utterance>> {
    let mut data = generate(spec)?.train;
    data.truncate(count);
    Ok(data)
}

/// Feature block: frame count and dimension as `u64`, then the values as
/// `f64`, all little-endian.
pub fn write_features<W: Write>(mut w: W, features: &Tensor) -> Result<()> {
    if features.rank() != 2 {
        return Err(Error::Dataset(format!(
            "features must be a matrix, got {:?}",
            features.shape()
        )));
    }
    w.write_all(&(features.rows() as u64).to_le_bytes())?;
    w.write_all(&(features.cols() as u64).to_le_bytes())?;
    for x in features.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<Tensor> {
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut word)
            .map_err(|e| Error::Dataset(format!("truncated feature block: {e}")))?;
        Ok(word)
    };
    let frames = u64::from_le_bytes(next(&mut r)?) as usize;
    let dim = u64::from_le_bytes(next(&mut r)?) as usize;
    let len = frames
        .checked_mul(dim)
        .filter(|&n| n <= (1 << 28))
        .ok_or_else(|| Error::Dataset(format!("implausible feature shape {frames} x {dim}")))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(f64::from_le_bytes(next(&mut r)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Dataset("trailing bytes after feature block".into()));
    }
    Tensor::matrix(frames, dim, data)
}

/// Writes `index` (one `feature-path<TAB>words` line per utterance) and the
/// feature files into `dir`, paths relative to the index.
pub fn write_dataset(index: &Path, utterances: &[Utterance]) -> Result<()> {
    let dir = index.parent().unwrap_or(Path::new("."));
    let stem = index
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Dataset(format!("bad index path {}", index.display())))?;
    let feat_dir = dir.join(format!("{stem}.feats"));
    fs::create_dir_all(&feat_dir)?;
    let mut out = String::new();
    for (i, u) in utterances.iter().enumerate() {
        let rel = PathBuf::from(format!("{stem}.feats")).join(format!("{i:06}.feat"));
        let file = fs::File::create(dir.join(&rel))?;
        let mut w = std::io::BufWriter::new(file);
        write_features(&mut w, &u.features)?;
        w.flush()?;
        out.push_str(&format!("{}\t{}\n", rel.display(), u.words.join(" ")));
    }
    fs::write(index, out)?;
    Ok(())
}

pub fn read_dataset(index: &Path) -> Result<Vec<Utterance>> {
    let dir = index.parent().unwrap_or(Path::new("."));
    let file = fs::File::open(index)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (path, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::Dataset(format!("{}:{}: expected path<TAB>words", index.display(), i + 1)))?;
        let feat = fs::File::open(dir.join(path))
            .map_err(|e| Error::Dataset(format!("{}:{}: {path}: {e}", index.display(), i + 1)))?;
        let features = read_features(BufReader::new(feat))?;
        out.push(Utterance {
            words: text.split_whitespace().map(str::to_string).collect(),
            features,
        });
    }
    Ok(out)
}
