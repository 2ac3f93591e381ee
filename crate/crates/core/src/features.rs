//! Frozen GloVe lookup plus the binary exact-match (MA) and
//! paraphrase-match (PR) token features.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{SentencePair, Token};
use crate::error::{Error, Result};
use crate::ppdb::ParaphraseIndex;

pub const GLOVE_DIM: usize = 300;

/// Word vectors, immutable after loading.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    /// Builds a table from in-memory vectors; first occurrence of a word wins.
    pub fn from_vectors<I>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut table = EmbeddingTable::new(dim);
        for (word, v) in entries {
            if v.len() != dim {
                return Err(Error::Shape(format!("vector for '{word}' has length {}, expected {dim}", v.len())));
            }
            table.vectors.entry(word).or_insert(v);
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Order-independent digest of every word and vector bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        let mut h = DefaultHasher::new();
        self.dim.hash(&mut h);
        for k in keys {
            k.hash(&mut h);
            for x in &self.vectors[k] {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Loads a 300-dimensional GloVe text file.
pub fn load_glove(path: &Path, restrict_vocab: Option<&HashSet<String>>) -> Result<EmbeddingTable> {
    load_glove_with_dim(path, GLOVE_DIM, restrict_vocab)
}

/// Loads `word v1 .. v_dim` lines. Entries whose word part contains spaces
/// (present in some GloVe releases) are skipped, as no token can match them.
pub fn load_glove_with_dim(path: &Path, dim: usize, restrict_vocab: Option<&HashSet<String>>) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::new(dim);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
        let n_word = fields.len().saturating_sub(dim);
        let bad_len = || Error::parse(path, i + 1, format!("vector length {} != {dim}", fields.len().saturating_sub(1)));
        if n_word == 0 {
            return Err(bad_len());
        }
        if n_word > 1 {
            // Too many numbers, or a multi-word key.
            if fields[n_word - 1].parse::<f64>().is_ok() {
                return Err(bad_len());
            }
            continue;
        }
        let word = fields[0];
        if let Some(vocab) = restrict_vocab {
            if !vocab.contains(word) {
                continue;
            }
        }
        if table.vectors.contains_key(word) {
            continue;
        }
        let v = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, i + 1, format!("bad number: {e}")))?;
        table.vectors.insert(word.to_string(), v);
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureMode {
    #[serde(rename = "BASE")]
    Base,
    #[serde(rename = "MA")]
    Ma,
    #[serde(rename = "PR")]
    Pr,
    #[serde(rename = "MAPR")]
    Mapr,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 4] = [FeatureMode::Base, FeatureMode::Ma, FeatureMode::Pr, FeatureMode::Mapr];

    pub fn uses_ma(self) -> bool {
        matches!(self, FeatureMode::Ma | FeatureMode::Mapr)
    }

    pub fn uses_pr(self) -> bool {
        matches!(self, FeatureMode::Pr | FeatureMode::Mapr)
    }

    /// Number of appended feature bits.
    pub fn extra_width(self) -> usize {
        self.uses_ma() as usize + self.uses_pr() as usize
    }

    pub fn width(self, embedding_dim: usize) -> usize {
        embedding_dim + self.extra_width()
    }
}

impl FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['+', '-', '_'], "").as_str() {
            "BASE" => Ok(FeatureMode::Base),
            "MA" => Ok(FeatureMode::Ma),
            "PR" => Ok(FeatureMode::Pr),
            "MAPR" => Ok(FeatureMode::Mapr),
            _ => Err(Error::InvalidArgument(format!("unknown feature mode '{s}'"))),
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Base => "BASE",
            FeatureMode::Ma => "MA",
            FeatureMode::Pr => "PR",
            FeatureMode::Mapr => "MAPR",
        })
    }
}

/// The distinct surface forms of a sentence.
pub fn token_set(tokens: &[Token]) -> HashSet<&str> {
    tokens.iter().map(Token::as_str).collect()
}

/// Exact-match bit: `t` occurs in the other sentence.
pub fn ma_feature(t: &str, other_tokens: &HashSet<&str>) -> bool {
    other_tokens.contains(t)
}

/// Paraphrase-match bit: some paraphrase of `t` occurs in the other sentence.
pub fn pr_feature(t: &str, other_tokens: &HashSet<&str>, index: &ParaphraseIndex) -> bool {
    index.has_paraphrase_in(t, other_tokens)
}

/// Per-token `[MA, PR]` bits (only those enabled by `mode`) for `tokens`
/// against `other`.
pub fn feature_bits(tokens: &[Token], other: &HashSet<&str>, mode: FeatureMode, index: Option<&ParaphraseIndex>) -> Result<Vec<Vec<u8>>> {
    let index = match (mode.uses_pr(), index) {
        (true, None) => return Err(Error::InvalidArgument(format!("feature mode {mode} needs a paraphrase index"))),
        (_, idx) => idx,
    };
    Ok(tokens
        .iter()
        .map(|t| {
            let mut bits = Vec::with_capacity(2);
            if mode.uses_ma() {
                bits.push(ma_feature(t, other) as u8);
            }
            if mode.uses_pr() {
                bits.push(pr_feature(t, other, index.expect("checked above")) as u8);
            }
            bits
        })
        .collect())
}

/// Token vectors `[GloVe(t); MA?; PR?]` for one side of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSentence {
    pub tokens: Vec<Token>,
    pub matrix: Vec<Vec<f64>>,
}

impl AugmentedSentence {
    pub fn width(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn augment_side(tokens: &[Token], bits: Vec<Vec<u8>>, table: &EmbeddingTable) -> AugmentedSentence {
    let matrix = tokens
        .iter()
        .zip(bits)
        .map(|(t, b)| {
            let mut row = Vec::with_capacity(table.dim() + b.len());
            match table.get(t) {
                Some(v) => row.extend_from_slice(v),
                None => row.resize(table.dim(), 0.0),
            }
            row.extend(b.into_iter().map(f64::from));
            row
        })
        .collect();
    AugmentedSentence {
        tokens: tokens.to_vec(),
        matrix,
    }
}

/// Augmented inputs for both sentences of `pair`. Out-of-vocabulary words
/// get a zero GloVe component but still carry their feature bits.
pub fn augment_pair(
    pair: &SentencePair,
    table: &EmbeddingTable,
    index: Option<&ParaphraseIndex>,
    mode: FeatureMode,
) -> Result<(AugmentedSentence, AugmentedSentence)> {
    let set1 = token_set(&pair.s1.tokens);
    let set2 = token_set(&pair.s2.tokens);
    let bits1 = feature_bits(&pair.s1.tokens, &set2, mode, index)?;
    let bits2 = feature_bits(&pair.s2.tokens, &set1, mode, index)?;
    Ok((
        augment_side(&pair.s1.tokens, bits1, table),
        augment_side(&pair.s2.tokens, bits2, table),
    ))
}

/// Line record emitted by the `featurize` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedRecord {
    pub mode: FeatureMode,
    pub s1: Vec<Token>,
    pub s2: Vec<Token>,
    pub bits1: Vec<Vec<u8>>,
    pub bits2: Vec<Vec<u8>>,
    pub oov1: Vec<bool>,
    pub oov2: Vec<bool>,
}

pub fn featurize_record(
    pair: &SentencePair,
    table: Option<&EmbeddingTable>,
    index: Option<&ParaphraseIndex>,
    mode: FeatureMode,
) -> Result<FeaturizedRecord> {
    let set1 = token_set(&pair.s1.tokens);
    let set2 = token_set(&pair.s2.tokens);
    let oov = |tokens: &[Token]| -> Vec<bool> {
        tokens
            .iter()
            .map(|t| table.is_some_and(|tab| tab.get(t).is_none()))
            .collect()
    };
    Ok(FeaturizedRecord {
        mode,
        bits1: feature_bits(&pair.s1.tokens, &set2, mode, index)?,
        bits2: feature_bits(&pair.s2.tokens, &set1, mode, index)?,
        oov1: oov(&pair.s1.tokens),
        oov2: oov(&pair.s2.tokens),
        s1: pair.s1.tokens.clone(),
        s2: pair.s2.tokens.clone(),
    })
}
