//! Lexical paraphrase index built from a PPDB distribution file.
//!
//! Lines look like `[NN] ||| car ||| automobile ||| <features> ||| <alignment>`.
//! Only the source and target words are read; scores and features are dropped.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};

pub const FIELD_SEPARATOR: &str = " ||| ";

/// One-to-many map from a word to its paraphrase set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParaphraseIndex {
    map: HashMap<String, HashSet<String>>,
    pair_count: usize,
}

/// Line-level bookkeeping from [`build_index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BuildStats {
    pub lines: usize,
    pub self_pairs: usize,
    pub multiword: usize,
    pub duplicates: usize,
}

fn empty_set() -> &'static HashSet<String> {
    static EMPTY: OnceLock<HashSet<String>> = OnceLock::new();
    EMPTY.get_or_init(HashSet::new)
}

impl ParaphraseIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts the directed pair `source → target`, lowercasing both.
    /// Self-pairs are ignored. Returns true if the pair was new.
    pub fn insert(&mut self, source: &str, target: &str) -> bool {
        let s = source.to_lowercase();
        let t = target.to_lowercase();
        if s == t {
            return false;
        }
        let added = self.map.entry(s).or_default().insert(t);
        if added {
            self.pair_count += 1;
        }
        added
    }

    /// Builds an index from directed pairs.
    pub fn from_pairs<'a, I>(pairs: I, symmetrize: bool) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut index = ParaphraseIndex::new();
        for (s, t) in pairs {
            index.insert(s, t);
            if symmetrize {
                index.insert(t, s);
            }
        }
        index
    }

    /// Number of directed pairs, i.e. the sum of set sizes.
    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    /// Number of distinct words with at least one paraphrase.
    pub fn word_count(&self) -> usize {
        self.map.len()
    }

    /// `P(t)`; the empty set when `t` is not a key.
    pub fn paraphrases(&self, t: &str) -> &HashSet<String> {
        self.map.get(t).unwrap_or_else(|| empty_set())
    }

    /// True iff `P(t)` and `other` share at least one word.
    pub fn has_paraphrase_in(&self, t: &str, other: &HashSet<&str>) -> bool {
        let Some(set) = self.map.get(t) else {
            return false;
        };
        if set.len() <= other.len() {
            set.iter().any(|p| other.contains(p.as_str()))
        } else {
            other.iter().any(|w| set.contains(*w))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &HashSet<String>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Paraphrase-set sizes, sorted ascending.
    pub fn set_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.map.values().map(HashSet::len).collect();
        sizes.sort_unstable();
        sizes
    }

    /// Median `|P(t)|` over keys (mean of the two middle values for an even count).
    pub fn median_set_size(&self) -> Option<f64> {
        let sizes = self.set_sizes();
        let n = sizes.len();
        match n {
            0 => None,
            _ if n % 2 == 1 => Some(sizes[n / 2] as f64),
            _ => Some((sizes[n / 2 - 1] + sizes[n / 2]) as f64 / 2.0),
        }
    }
}

/// Splits one line into `(source, target)`. `Ok(None)` for multi-word entries.
pub fn parse_line(line: &str) -> std::result::Result<Option<(&str, &str)>, String> {
    let mut fields = line.split(FIELD_SEPARATOR);
    let _pos = fields.next();
    let (Some(source), Some(target)) = (fields.next(), fields.next()) else {
        return Err(format!(
            "expected at least 3 '|||'-delimited fields, found {}",
            line.split(FIELD_SEPARATOR).count()
        ));
    };
    let (source, target) = (source.trim(), target.trim());
    if source.is_empty() || target.is_empty() {
        return Err("empty source or target word".into());
    }
    if source.contains(char::is_whitespace) || target.contains(char::is_whitespace) {
        return Ok(None);
    }
    Ok(Some((source, target)))
}

/// Reads a lexical PPDB file into a [`ParaphraseIndex`].
pub fn build_index(path: &Path, symmetrize: bool) -> Result<(ParaphraseIndex, BuildStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut index = ParaphraseIndex::new();
    let mut stats = BuildStats::default();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let Some((s, t)) = parse_line(&line).map_err(|m| Error::parse(path, i + 1, m))? else {
            stats.multiword += 1;
            continue;
        };
        if s.to_lowercase() == t.to_lowercase() {
            stats.self_pairs += 1;
            continue;
        }
        if !index.insert(s, t) {
            stats.duplicates += 1;
        }
        if symmetrize {
            index.insert(t, s);
        }
    }
    if stats.multiword > 0 {
        log::warn!("{}: skipped {} multi-word entries", path.display(), stats.multiword);
    }
    Ok((index, stats))
}

/// Histogram of words by `|P(t)|`. Bin `k` covers `[k·w+1, (k+1)·w]` and is
/// reported as `(k·w+1, count)`; bins run contiguously up to the last
/// non-empty one.
pub fn paraphrase_histogram(index: &ParaphraseIndex, bin_width: usize) -> Result<Vec<(usize, usize)>> {
    if bin_width < 1 {
        return Err(Error::InvalidArgument("bin width must be at least 1".into()));
    }
    let mut counts: Vec<usize> = Vec::new();
    for (_, set) in index.iter() {
        let bin = (set.len() - 1) / bin_width;
        if bin >= counts.len() {
            counts.resize(bin + 1, 0);
        }
        counts[bin] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k * bin_width + 1, c))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct PpdbStats {
    pub pair_count: usize,
    pub word_count: usize,
    pub median_paraphrases: Option<f64>,
    pub max_paraphrases: usize,
    pub bin_width: usize,
    pub histogram: Vec<(usize, usize)>,
    pub build: BuildStats,
}

impl PpdbStats {
    pub fn compute(index: &ParaphraseIndex, build: BuildStats, bin_width: usize) -> Result<Self> {
        Ok(PpdbStats {
            pair_count: index.pair_count(),
            word_count: index.word_count(),
            median_paraphrases: index.median_set_size(),
            max_paraphrases: index.set_sizes().last().copied().unwrap_or(0),
            bin_width,
            histogram: paraphrase_histogram(index, bin_width)?,
            build,
        })
    }

    /// Two-column `bin_start\tcount` TSV.
    pub fn histogram_tsv(&self) -> String {
        let mut out = String::from("bin_start\tcount\n");
        for (start, count) in &self.histogram {
            out.push_str(&format!("{start}\t{count}\n"));
        }
        out
    }
}
