//! Output-unit inventories: whole frequent words, OOV lumping, letter
//! n-gram chunks, mixed word/letter units and BPE wordpieces, plus the
//! token algebra that maps sentences to unit sequences and back.

mod hybrid;
mod wordpiece;

pub use hybrid::{hybrid_replace_oov, interval_overlap, letter_words, Replacement, SegmentedHypothesis};
pub use wordpiece::{apply_merges, merge_wordpieces, read_merges, train_wordpieces, write_merges, WordpieceModel};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const BLANK_UNIT: &str = "<blank>";
pub const SEPARATOR: &str = "$";
pub const OOV_UNIT: &str = "OOV";
pub const UNKNOWN_UNIT: &str = "<unk>";
pub const SILENCE: &str = "<sil>";
pub const WORD_END: &str = "</w>";

pub const DEFAULT_MIN_COUNT: usize = 10;
/// Shortest frequent word that may be matched inside an OOV.
pub const MIN_PREFIX_MATCH: usize = 3;

/// How words become output units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Frequent words whole, everything else the OOV unit.
    WordOov,
    /// Every word chunked into letter n-grams of the given size.
    Letters(usize),
    /// Frequent words whole, OOVs spelled as single letters.
    WordLetter,
    /// Frequent words whole, OOVs split into frequent-word pieces and
    /// letter n-grams of the given size.
    Mixed(usize),
    Wordpiece,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::WordOov,
        Scheme::Letters(1),
        Scheme::Letters(2),
        Scheme::Letters(3),
        Scheme::WordLetter,
        Scheme::Mixed(1),
        Scheme::Mixed(2),
        Scheme::Mixed(3),
        Scheme::Wordpiece,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "word-oov" | "word" => Scheme::WordOov,
            "single" | "single-letter" => Scheme::Letters(1),
            "double" | "double-letter" => Scheme::Letters(2),
            "triple" | "triple-letter" => Scheme::Letters(3),
            "word-letter" => Scheme::WordLetter,
            "mixed-single" => Scheme::Mixed(1),
            "mixed-double" => Scheme::Mixed(2),
            "mixed-triple" => Scheme::Mixed(3),
            "wordpiece" => Scheme::Wordpiece,
            _ => return Err(Error::Config(format!("unknown unit scheme {s:?}"))),
        })
    }

    /// Whether sentences are encoded with `$` word separators.
    pub fn uses_separator(self) -> bool {
        matches!(self, Scheme::Letters(_) | Scheme::WordLetter | Scheme::Mixed(_))
    }

    pub fn is_mixed(self) -> bool {
        matches!(self, Scheme::WordLetter | Scheme::Mixed(_))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let size = |n: usize| match n {
            1 => "single",
            2 => "double",
            3 => "triple",
            _ => "n",
        };
        match self {
            Scheme::WordOov => f.write_str("word-oov"),
            Scheme::Letters(n) if *n <= 3 => f.write_str(size(*n)),
            Scheme::Letters(n) => write!(f, "letters-{n}"),
            Scheme::WordLetter => f.write_str("word-letter"),
            Scheme::Mixed(n) if *n <= 3 => write!(f, "mixed-{}", size(*n)),
            Scheme::Mixed(n) => write!(f, "mixed-{n}"),
            Scheme::Wordpiece => f.write_str("wordpiece"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnitKind {
    Blank,
    LetterKgram,
    Word,
    Separator,
    Oov,
    Wordpiece,
    Unknown,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::Blank => "blank",
            UnitKind::LetterKgram => "letterkgram",
            UnitKind::Word => "word",
            UnitKind::Separator => "separator",
            UnitKind::Oov => "oov",
            UnitKind::Wordpiece => "wordpiece",
            UnitKind::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "blank" => UnitKind::Blank,
            "letterkgram" => UnitKind::LetterKgram,
            "word" => UnitKind::Word,
            "separator" => UnitKind::Separator,
            "oov" => UnitKind::Oov,
            "wordpiece" => UnitKind::Wordpiece,
            "unknown" => UnitKind::Unknown,
            _ => return Err(Error::Vocab(format!("unknown unit kind {s:?}"))),
        })
    }
}

/// Checks a word is nonempty and drawn from `a-z`, `'` and `*`.
pub fn validate_word(word: &str) -> Result<()> {
    if word.is_empty() {
        return Err(Error::Vocab("empty word".into()));
    }
    if let Some(c) = word
        .chars()
        .find(|c| !(c.is_ascii_lowercase() || *c == '\'' || *c == '*'))
    {
        return Err(Error::Vocab(format!("word {word:?} contains {c:?}")));
    }
    Ok(())
}

/// Word counts over a corpus of sentences.
pub fn word_counts<S: AsRef<str>>(corpus: &[Vec<S>]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for sentence in corpus {
        for w in sentence {
            *counts.entry(w.as_ref().to_string()).or_insert(0) += 1;
        }
    }
    counts
}

/// Left-to-right chunks of at most `n` characters; the last may be shorter.
pub fn chunk_letters(word: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars.chunks(n.max(1)).map(|c| c.iter().collect()).collect()
}

/// A unit inventory with the rules to decompose words into it.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenVocabulary {
    scheme: Scheme,
    min_count: usize,
    frequent: BTreeSet<String>,
    /// Units in id order; id 0 is the blank.
    units: Vec<(String, UnitKind)>,
    index: HashMap<String, usize>,
    wordpieces: Option<WordpieceModel>,
}

/// Frequent-word vocabulary with OOV lumping.
pub fn build_frequent_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<TokenVocabulary> {
    TokenVocabulary::build(corpus, Scheme::WordOov, min_count)
}

impl TokenVocabulary {
    /// Builds the inventory for `scheme` from a training corpus. Words seen
    /// at least `min_count` times are frequent.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], scheme: Scheme, min_count: usize) -> Result<Self> {
        if scheme == Scheme::Wordpiece {
            return Err(Error::Vocab(
                "wordpiece inventories are built with from_wordpieces".into(),
            ));
        }
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(Error::Vocab("empty corpus".into()));
        }
        if let Scheme::Letters(0) | Scheme::Mixed(0) = scheme {
            return Err(Error::Config("letter chunk size must be at least 1".into()));
        }
        let counts = word_counts(corpus);
        for w in counts.keys() {
            validate_word(w)?;
        }
        // Letter-only schemes have no whole-word units.
        let frequent: BTreeSet<String> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count && !matches!(scheme, Scheme::Letters(_)))
            .map(|(w, _)| w.clone())
            .collect();
        let mut units: BTreeMap<String, UnitKind> = BTreeMap::new();
        units.insert(UNKNOWN_UNIT.into(), UnitKind::Unknown);
        if scheme.uses_separator() {
            units.insert(SEPARATOR.into(), UnitKind::Separator);
        }
        // Letter inventories carry every substring up to the chunk size so
        // held-out words over the training alphabet stay decomposable.
        let chunk = match scheme {
            Scheme::Letters(n) | Scheme::Mixed(n) => n,
            Scheme::WordLetter => 1,
            _ => 0,
        };
        if chunk > 0 {
            for w in counts.keys() {
                add_substrings(&mut units, w, chunk);
            }
        }
        if scheme == Scheme::WordOov {
            units.insert(OOV_UNIT.into(), UnitKind::Oov);
        }
        if scheme == Scheme::WordOov || scheme.is_mixed() {
            // A frequent word spelled like a letter chunk is the same unit.
            for w in &frequent {
                units.insert(w.clone(), UnitKind::Word);
            }
        }
        let vocab = Self::assemble(scheme, min_count, frequent, units, None);
        for w in counts.keys() {
            vocab.decompose_word(w)?;
        }
        Ok(vocab)
    }

    /// Wordpiece inventory from a trained merge model.
    pub fn from_wordpieces(model: WordpieceModel) -> Self {
        let mut units: BTreeMap<String, UnitKind> = BTreeMap::new();
        units.insert(UNKNOWN_UNIT.into(), UnitKind::Unknown);
        for piece in &model.inventory {
            units.insert(piece.clone(), UnitKind::Wordpiece);
        }
        Self::assemble(Scheme::Wordpiece, 0, BTreeSet::new(), units, Some(model))
    }

    fn assemble(
        scheme: Scheme,
        min_count: usize,
        frequent: BTreeSet<String>,
        units: BTreeMap<String, UnitKind>,
        wordpieces: Option<WordpieceModel>,
    ) -> Self {
        let mut list = vec![(BLANK_UNIT.to_string(), UnitKind::Blank)];
        list.extend(units);
        let index = list.iter().enumerate().map(|(i, (u, _))| (u.clone(), i)).collect();
        Self {
            scheme,
            min_count,
            frequent,
            units: list,
            index,
            wordpieces,
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn frequent_words(&self) -> &BTreeSet<String> {
        &self.frequent
    }

    pub fn is_frequent(&self, word: &str) -> bool {
        self.frequent.contains(word)
    }

    pub fn wordpieces(&self) -> Option<&WordpieceModel> {
        self.wordpieces.as_ref()
    }

    /// Inventory size including the blank.
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> impl Iterator<Item = (&str, UnitKind)> {
        self.units.iter().map(|(u, k)| (u.as_str(), *k))
    }

    pub fn unit_names(&self) -> Vec<String> {
        self.units.iter().map(|(u, _)| u.clone()).collect()
    }

    pub fn id(&self, unit: &str) -> Option<usize> {
        self.index.get(unit).copied()
    }

    pub fn unit(&self, id: usize) -> Option<&str> {
        self.units.get(id).map(|(u, _)| u.as_str())
    }

    pub fn kind(&self, id: usize) -> Option<UnitKind> {
        self.units.get(id).map(|(_, k)| *k)
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.index.contains_key(unit)
    }

    /// Units for one word under this vocabulary's scheme. Units outside the
    /// inventory are an [`Error::UnknownUnit`].
    pub fn decompose_word(&self, word: &str) -> Result<Vec<String>> {
        let units = self.decompose_unchecked(word)?;
        if let Some(u) = units.iter().find(|u| !self.contains(u)) {
            return Err(Error::UnknownUnit(u.clone()));
        }
        Ok(units)
    }

    /// Like [`decompose_word`](Self::decompose_word) but replaces units
    /// outside the inventory with the unknown unit.
    pub fn decompose_lossy(&self, word: &str) -> Vec<String> {
        match self.decompose_unchecked(word) {
            Ok(units) => units
                .into_iter()
                .map(|u| if self.contains(&u) { u } else { UNKNOWN_UNIT.to_string() })
                .collect(),
            Err(_) => vec![UNKNOWN_UNIT.to_string()],
        }
    }

    fn decompose_unchecked(&self, word: &str) -> Result<Vec<String>> {
        validate_word(word)?;
        Ok(match self.scheme {
            Scheme::WordOov => {
                if self.is_frequent(word) {
                    vec![word.to_string()]
                } else {
                    vec![OOV_UNIT.to_string()]
                }
            }
            Scheme::Letters(n) => chunk_letters(word, n),
            Scheme::WordLetter => {
                if self.is_frequent(word) {
                    vec![word.to_string()]
                } else {
                    chunk_letters(word, 1)
                }
            }
            Scheme::Mixed(n) => {
                if self.is_frequent(word) {
                    vec![word.to_string()]
                } else {
                    self.mixed_pieces(word, n)
                }
            }
            Scheme::Wordpiece => {
                let model = self
                    .wordpieces
                    .as_ref()
                    .ok_or_else(|| Error::Vocab("wordpiece vocabulary without merges".into()))?;
                apply_merges(word, &model.merges)
            }
        })
    }

    /// Greedy left-to-right longest frequent-word matches; characters between
    /// matches are chunked into n-grams.
    fn mixed_pieces(&self, word: &str, n: usize) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut pending = String::new();
        let mut pos = 0;
        while pos < chars.len() {
            let mut matched = None;
            for end in (pos + MIN_PREFIX_MATCH..=chars.len()).rev() {
                let cand: String = chars[pos..end].iter().collect();
                if self.frequent.contains(&cand) {
                    matched = Some((cand, end));
                    break;
                }
            }
            match matched {
                Some((w, end)) => {
                    out.extend(chunk_letters(&pending, n).into_iter().filter(|c| !c.is_empty()));
                    pending.clear();
                    out.push(w);
                    pos = end;
                }
                None => {
                    pending.push(chars[pos]);
                    pos += 1;
                }
            }
        }
        if !pending.is_empty() {
            out.extend(chunk_letters(&pending, n));
        }
        out
    }

    /// Unit sequence for a sentence. Separator schemes put `$` before every
    /// word and after the last one; an empty sentence gives `[$]`.
    pub fn encode_sentence<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<String>> {
        self.encode_with(words, |w| self.decompose_word(w))
    }

    /// [`encode_sentence`](Self::encode_sentence) mapping unknown units to
    /// the unknown unit instead of failing.
    pub fn encode_lossy<S: AsRef<str>>(&self, words: &[S]) -> Vec<String> {
        self.encode_with(words, |w| Ok(self.decompose_lossy(w)))
            .expect("lossy decomposition cannot fail")
    }

    fn encode_with<S: AsRef<str>>(
        &self,
        words: &[S],
        mut decompose: impl FnMut(&str) -> Result<Vec<String>>,
    ) -> Result<Vec<String>> {
        let sep = self.scheme.uses_separator();
        let mut out = Vec::new();
        for w in words {
            if sep {
                out.push(SEPARATOR.to_string());
            }
            out.extend(decompose(w.as_ref())?);
        }
        if sep {
            out.push(SEPARATOR.to_string());
        }
        Ok(out)
    }

    pub fn ids<S: AsRef<str>>(&self, units: &[S]) -> Result<Vec<usize>> {
        units
            .iter()
            .map(|u| {
                self.id(u.as_ref())
                    .ok_or_else(|| Error::UnknownUnit(u.as_ref().to_string()))
            })
            .collect()
    }

    pub fn names(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| {
                self.unit(i)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Vocab(format!("unit id {i} outside inventory of {}", self.len())))
            })
            .collect()
    }

    /// Word sequence from decoded units under this vocabulary's scheme.
    pub fn words_from_units<S: AsRef<str>>(&self, units: &[S]) -> Vec<String> {
        match self.scheme {
            Scheme::WordOov => units.iter().map(|u| u.as_ref().to_string()).collect(),
            Scheme::Wordpiece => merge_wordpieces(units),
            _ => merge_mixed_tokens(units),
        }
    }

    /// Tab-separated `id unit kind` lines in id order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, (u, k)) in self.units.iter().enumerate() {
            writeln!(w, "{i}\t{u}\t{}", k.as_str())?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("units are UTF-8")
    }

    /// Reads a vocabulary file. The frequent-word set is recovered from the
    /// `word` units; wordpiece vocabularies need their merge list.
    pub fn read_tsv<R: BufRead>(
        r: R,
        scheme: Scheme,
        min_count: usize,
        merges: Option<Vec<(String, String)>>,
    ) -> Result<Self> {
        let mut units: BTreeMap<String, UnitKind> = BTreeMap::new();
        let mut order = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Vocab(format!("line {}: {what}: {line:?}", lineno + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            let id: usize = fields[0].parse().map_err(|_| bad("bad id"))?;
            if id != order.len() {
                return Err(bad("ids must count up from 0"));
            }
            let kind = UnitKind::parse(fields[2])?;
            if (id == 0) != (kind == UnitKind::Blank) {
                return Err(bad("the blank must be unit 0 and only unit 0"));
            }
            order.push(fields[1].to_string());
            if id > 0 && units.insert(fields[1].to_string(), kind).is_some() {
                return Err(bad("duplicate unit"));
            }
        }
        if order.is_empty() {
            return Err(Error::Vocab("empty vocabulary file".into()));
        }
        if !order[1..].windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Vocab(
                "units after the blank must be in lexicographic order".into(),
            ));
        }
        let frequent = units
            .iter()
            .filter(|(_, k)| **k == UnitKind::Word)
            .map(|(u, _)| u.clone())
            .collect();
        let wordpieces = match (scheme, merges) {
            (Scheme::Wordpiece, Some(merges)) => Some(WordpieceModel {
                merges,
                inventory: units
                    .iter()
                    .filter(|(_, k)| **k == UnitKind::Wordpiece)
                    .map(|(u, _)| u.clone())
                    .collect(),
            }),
            (Scheme::Wordpiece, None) => return Err(Error::Vocab("wordpiece vocabulary needs its merge list".into())),
            _ => None,
        };
        Ok(Self::assemble(scheme, min_count, frequent, units, wordpieces))
    }
}

fn add_substrings(units: &mut BTreeMap<String, UnitKind>, word: &str, n: usize) {
    let chars: Vec<char> = word.chars().collect();
    for len in 1..=n.min(chars.len()) {
        for start in 0..=chars.len() - len {
            units
                .entry(chars[start..start + len].iter().collect())
                .or_insert(UnitKind::LetterKgram);
        }
    }
}

/// Splits on `$`, joins the units of each group into a word and drops empty
/// groups. Missing separators at either end are tolerated.
pub fn merge_mixed_tokens<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for t in tokens {
        let t = t.as_ref();
        if t == SEPARATOR {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push_str(t);
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}
