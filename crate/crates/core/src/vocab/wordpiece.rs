use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use super::{validate_word, word_counts, WORD_END};
use crate::error::{Error, Result};

/// BPE merge list in training order and the resulting piece inventory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordpieceModel {
    pub merges: Vec<(String, String)>,
    pub inventory: BTreeSet<String>,
}

/// Characters of `word`, the last one carrying the end-of-word marker.
fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{WORD_END}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Grows a piece inventory by repeatedly merging the most frequent adjacent
/// pair (ties go to the lexicographically smallest pair) until it holds
/// `target_size` pieces or no pair is left.
pub fn train_wordpieces<S: AsRef<str>>(corpus: &[Vec<S>], target_size: usize) -> Result<WordpieceModel> {
    let counts = word_counts(corpus);
    if counts.is_empty() {
        return Err(Error::Vocab("empty corpus".into()));
    }
    let mut words: Vec<(Vec<String>, usize)> = Vec::with_capacity(counts.len());
    let mut inventory = BTreeSet::new();
    for (w, &c) in &counts {
        validate_word(w)?;
        let syms = initial_symbols(w);
        inventory.extend(syms.iter().cloned());
        words.push((syms, c));
    }
    if target_size < inventory.len() {
        return Err(Error::Vocab(format!(
            "target of {target_size} pieces is below the {} base symbols",
            inventory.len()
        )));
    }
    let mut merges = Vec::new();
    while inventory.len() < target_size {
        let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (syms, c) in &words {
            for p in syms.windows(2) {
                *pairs.entry((p[0].as_str(), p[1].as_str())).or_insert(0) += c;
            }
        }
        // BTreeMap iterates pairs in lexicographic order, so the first
        // maximum is the tie winner.
        let Some((best, _)) = pairs
            .iter()
            .fold(None, |acc: Option<(&(&str, &str), usize)>, (p, &c)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((p, c)),
            })
        else {
            break;
        };
        let (left, right) = (best.0.to_string(), best.1.to_string());
        drop(pairs);
        for (syms, _) in &mut words {
            *syms = merge_pair(syms, &left, &right);
        }
        inventory.insert(format!("{left}{right}"));
        merges.push((left, right));
    }
    Ok(WordpieceModel { merges, inventory })
}

/// Segments one word by replaying merges in rank order.
pub fn apply_merges(word: &str, merges: &[(String, String)]) -> Vec<String> {
    let ranks: HashMap<(&str, &str), usize> = merges
        .iter()
        .enumerate()
        .map(|(i, (l, r))| ((l.as_str(), r.as_str()), i))
        .collect();
    let mut syms = initial_symbols(word);
    loop {
        let best = syms
            .windows(2)
            .filter_map(|p| ranks.get(&(p[0].as_str(), p[1].as_str())).copied())
            .min();
        let Some(rank) = best else { break };
        let (l, r) = &merges[rank];
        syms = merge_pair(&syms, l, r);
    }
    syms
}

/// Joins pieces into words, closing a word at each end-of-word marker.
pub fn merge_wordpieces<S: AsRef<str>>(pieces: &[S]) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for p in pieces {
        let p = p.as_ref();
        match p.strip_suffix(WORD_END) {
            Some(stem) => {
                cur.push_str(stem);
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
            }
            None => cur.push_str(p),
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

pub fn write_merges<W: Write>(mut w: W, merges: &[(String, String)]) -> Result<()> {
    for (l, r) in merges {
        writeln!(w, "{l} {r}")?;
    }
    Ok(())
}

pub fn read_merges<R: BufRead>(r: R) -> Result<Vec<(String, String)>> {
    let mut merges = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => merges.push((l.to_string(), r.to_string())),
            _ => {
                return Err(Error::Vocab(format!(
                    "merge line {}: expected \"left right\": {line:?}",
                    i + 1
                )))
            }
        }
    }
    Ok(merges)
}
