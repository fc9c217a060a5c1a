//! Binary checkpoints: magic, a length-prefixed text block carrying the
//! config and vocabularies, then the named tensor table. Little-endian
//! throughout.

use std::fs;
use std::path::Path;

use rand::SeedableRng;

use super::config::RunConfig;
use super::model::Model;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamStore, Parameterized};
use crate::vocab::{read_merges, write_merges, Scheme, TokenVocabulary};

pub const MAGIC: &[u8; 8] = b"MXCTC001";

/// The text block and tensor table of a checkpoint file, uninterpreted.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub text: String,
    pub tensors: ParamStore,
}

impl RawCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u64(&mut out, self.text.len());
        out.extend_from_slice(self.text.as_bytes());
        put_u64(&mut out, self.tensors.len());
        for (name, t) in self.tensors.iter() {
            put_u64(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u64(&mut out, t.rank());
            for &d in t.shape() {
                put_u64(&mut out, d);
            }
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint {
                offset: 0,
                detail: format!("bad magic {:?}", String::from_utf8_lossy(magic)),
            });
        }
        let text = r.string("text block")?;
        let count = r.u64("tensor count")?;
        let mut tensors = ParamStore::new();
        for _ in 0..count {
            let at = r.pos;
            let name = r.string("tensor name")?;
            let rank = r.u64("rank")?;
            if rank > 8 {
                return Err(r.err(format!("tensor {name}: implausible rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("extent")?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| r.err(format!("tensor {name}: shape {shape:?} exceeds the file")))?;
            let raw = r.take(len * 8, "tensor values")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint {
                offset: at,
                detail: e.to_string(),
            })?;
            if tensors.get(&name).is_some() {
                return Err(Error::Checkpoint {
                    offset: at,
                    detail: format!("duplicate tensor {name}"),
                });
            }
            tensors.insert(name, t);
        }
        if r.remaining() != 0 {
            return Err(r.err(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { text, tensors })
    }
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn err(&self, detail: String) -> Error {
        Error::Checkpoint {
            offset: self.pos,
            detail,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.err(format!("truncated {what}: need {n} bytes, {} left", self.remaining())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let b = self.take(8, what)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.err(format!("{what} {v} does not fit in memory")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u64(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint {
            offset: at,
            detail: format!("{what} is not UTF-8"),
        })
    }
}

/// A trained model with everything needed to decode.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: TokenVocabulary,
    /// Letter inventory of the hybrid letter branch.
    pub letter_vocab: Option<TokenVocabulary>,
    pub model: Model,
}

const CONFIG_SECTION: &str = "[config]";
const VOCAB_SECTION: &str = "[vocab]";
const LETTER_SECTION: &str = "[letters]";
const MERGES_SECTION: &str = "[merges]";

impl Checkpoint {
    fn text_block(&self) -> String {
        let mut s = String::new();
        s.push_str(CONFIG_SECTION);
        s.push('\n');
        s.push_str(&self.config.to_text());
        s.push_str(VOCAB_SECTION);
        s.push('\n');
        s.push_str(&self.vocab.to_tsv());
        if let Some(wp) = self.vocab.wordpieces() {
            s.push_str(MERGES_SECTION);
            s.push('\n');
            let mut buf = Vec::new();
            write_merges(&mut buf, &wp.merges).expect("writing to memory");
            s.push_str(&String::from_utf8(buf).expect("merges are UTF-8"));
        }
        if let Some(l) = &self.letter_vocab {
            s.push_str(LETTER_SECTION);
            s.push('\n');
            s.push_str(&l.to_tsv());
        }
        s
    }

    pub fn to_raw(&self) -> RawCheckpoint {
        RawCheckpoint {
            text: self.text_block(),
            tensors: ParamStore::collect(&self.model),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_raw().to_bytes()
    }

    pub fn from_raw(raw: &RawCheckpoint) -> Result<Self> {
        let bad = |detail: String| Error::Checkpoint { offset: 8, detail };
        let mut sections: Vec<(&str, String)> = Vec::new();
        for line in raw.text.lines() {
            if line.starts_with('[') && line.ends_with(']') {
                sections.push((line, String::new()));
            } else {
                let (_, body) = sections
                    .last_mut()
                    .ok_or_else(|| bad("text block does not start with a section".into()))?;
                body.push_str(line);
                body.push('\n');
            }
        }
        let section = |name: &str| sections.iter().find(|(n, _)| *n == name).map(|(_, b)| b.as_str());
        let config = RunConfig::parse(section(CONFIG_SECTION).ok_or_else(|| bad("missing [config]".into()))?)?;
        let merges = section(MERGES_SECTION).map(|m| read_merges(m.as_bytes())).transpose()?;
        let vocab = TokenVocabulary::read_tsv(
            section(VOCAB_SECTION)
                .ok_or_else(|| bad("missing [vocab]".into()))?
                .as_bytes(),
            config.scheme,
            if config.scheme == Scheme::Wordpiece {
                0
            } else {
                config.min_count
            },
            merges,
        )?;
        let letter_vocab = section(LETTER_SECTION)
            .map(|t| TokenVocabulary::read_tsv(t.as_bytes(), Scheme::Letters(1), config.min_count, None))
            .transpose()?;

        let first = raw
            .tensors
            .get("enc/l0/fw/W_x")
            .ok_or_else(|| bad("missing tensor enc/l0/fw/W_x".into()))?;
        let frame_stack = config.stack.frame_stack;
        let stacked = first.shape()[1];
        if stacked % frame_stack != 0 {
            return Err(bad(format!(
                "input width {stacked} is not a multiple of frame_stack {frame_stack}"
            )));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(
            &config,
            stacked / frame_stack,
            vocab.len(),
            letter_vocab.as_ref().map(TokenVocabulary::len),
            &mut rng,
        )?;
        raw.tensors.load_into(&mut model)?;
        Ok(Self {
            config,
            vocab,
            letter_vocab,
            model,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_raw(&RawCheckpoint::from_bytes(bytes)?)
    }

    /// Tensor count of the model.
    pub fn tensor_count(&self) -> usize {
        let mut n = 0;
        self.model.visit("", &mut |_, _| n += 1);
        n
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
