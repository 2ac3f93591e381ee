//! Sentence pairs, tokenization, dataset loading and score scaling.

use std::borrow::Borrow;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Deref;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lowercased word with no internal whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    /// Builds a token, lowercasing `s`. Returns `None` for empty or
    /// whitespace-containing input.
    pub fn new(s: &str) -> Option<Token> {
        if s.is_empty() || s.chars().any(char::is_whitespace) {
            return None;
        }
        Some(Token(s.to_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Deref for Token {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for Token {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercases, splits on whitespace and detaches leading/trailing ASCII
/// punctuation, one token per punctuation character.
pub fn tokenize(text: &str) -> Vec<Token> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let start = chunk
            .find(|c: char| !c.is_ascii_punctuation())
            .unwrap_or(chunk.len());
        let end = chunk
            .rfind(|c: char| !c.is_ascii_punctuation())
            .map(|i| i + chunk[i..].chars().next().map_or(1, char::len_utf8))
            .unwrap_or(start);
        // All-punctuation chunks have start == len and end == start.
        for c in chunk[..start].chars() {
            out.push(Token(c.to_string()));
        }
        if end > start {
            out.push(Token(chunk[start..end].to_string()));
        }
        for c in chunk[end.max(start)..].chars() {
            out.push(Token(c.to_string()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub raw: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(raw: &str) -> Self {
        Sentence {
            raw: raw.to_string(),
            tokens: tokenize(raw),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "entailment", alias = "entailment3")]
    Entailment3,
    #[serde(rename = "paraphrase", alias = "paraphrase2")]
    Paraphrase2,
    #[serde(rename = "relatedness")]
    Relatedness,
}

impl TaskKind {
    pub const ENTAILMENT_LABELS: [&'static str; 3] = ["entailment", "contradiction", "neutral"];

    /// Width of the output layer.
    pub fn num_outputs(self) -> usize {
        match self {
            TaskKind::Entailment3 => 3,
            TaskKind::Paraphrase2 => 2,
            TaskKind::Relatedness => 1,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, TaskKind::Relatedness)
    }

    pub fn class_name(self, class: usize) -> Option<&'static str> {
        match self {
            TaskKind::Entailment3 => Self::ENTAILMENT_LABELS.get(class).copied(),
            TaskKind::Paraphrase2 => ["0", "1"].get(class).copied(),
            TaskKind::Relatedness => None,
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entailment" | "entailment3" | "nli" => Ok(TaskKind::Entailment3),
            "paraphrase" | "paraphrase2" => Ok(TaskKind::Paraphrase2),
            "relatedness" | "sts" => Ok(TaskKind::Relatedness),
            _ => Err(Error::InvalidArgument(format!("unknown task '{s}'"))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Entailment3 => "entailment",
            TaskKind::Paraphrase2 => "paraphrase",
            TaskKind::Relatedness => "relatedness",
        })
    }
}

/// Gold annotation: a class index or a relatedness score already scaled to [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gold {
    Class(usize),
    Score(f64),
}

impl Gold {
    pub fn class(self) -> Option<usize> {
        match self {
            Gold::Class(c) => Some(c),
            Gold::Score(_) => None,
        }
    }

    pub fn score(self) -> Option<f64> {
        match self {
            Gold::Score(s) => Some(s),
            Gold::Class(_) => None,
        }
    }

    fn matches(self, task: TaskKind) -> bool {
        match (self, task) {
            (Gold::Class(c), TaskKind::Entailment3 | TaskKind::Paraphrase2) => {
                c < task.num_outputs()
            }
            (Gold::Score(s), TaskKind::Relatedness) => (0.0..=1.0).contains(&s),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub s1: Sentence,
    pub s2: Sentence,
    pub gold: Gold,
    pub task: TaskKind,
}

impl SentencePair {
    pub fn new(s1: &str, s2: &str, gold: Gold, task: TaskKind) -> Result<Self> {
        if !gold.matches(task) {
            return Err(Error::InvalidArgument(format!(
                "gold {gold:?} is not valid for task {task}"
            )));
        }
        Ok(SentencePair {
            s1: Sentence::new(s1),
            s2: Sentence::new(s2),
            gold,
            task,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

/// Closed source interval of a relatedness scale, e.g. `[1, 5]` for SICK.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub lo: f64,
    pub hi: f64,
}

impl ScoreRange {
    pub const UNIT: ScoreRange = ScoreRange { lo: 0.0, hi: 1.0 };
    pub const SICK: ScoreRange = ScoreRange { lo: 1.0, hi: 5.0 };
    pub const STSB: ScoreRange = ScoreRange { lo: 0.0, hi: 5.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "score range [{lo}, {hi}] must satisfy lo < hi"
            )));
        }
        Ok(ScoreRange { lo, hi })
    }
}

impl FromStr for ScoreRange {
    type Err = Error;

    /// Parses `lo,hi` or `lo:hi`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("score range '{s}' is not 'lo,hi'"));
        let (lo, hi) = s.split_once([',', ':']).ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        ScoreRange::new(lo, hi)
    }
}

/// Maps `raw` from `range` linearly onto `[0, 1]`.
pub fn scale_score(raw: f64, range: ScoreRange) -> Result<f64> {
    if !(range.lo < range.hi) {
        return Err(Error::InvalidArgument("score range needs lo < hi".into()));
    }
    if !(range.lo..=range.hi).contains(&raw) {
        return Err(Error::InvalidArgument(format!(
            "score {raw} outside [{}, {}]",
            range.lo, range.hi
        )));
    }
    Ok((raw - range.lo) / (range.hi - range.lo))
}

/// Inverse of [`scale_score`].
pub fn unscale_score(unit: f64, range: ScoreRange) -> Result<f64> {
    if !(0.0..=1.0).contains(&unit) {
        return Err(Error::InvalidArgument(format!("unit score {unit} outside [0, 1]")));
    }
    Ok(range.lo + unit * (range.hi - range.lo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub task: TaskKind,
    /// Original scale of relatedness golds, kept for metric reporting.
    pub score_range: Option<ScoreRange>,
    pub pairs: Vec<SentencePair>,
}

impl Dataset {
    pub fn new(name: &str, split: Split, task: TaskKind, pairs: Vec<SentencePair>) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|p| p.task != task) {
            return Err(Error::InvalidArgument(format!(
                "pair with task {} in a {task} dataset",
                p.task
            )));
        }
        Ok(Dataset {
            name: name.to_string(),
            split,
            task,
            score_range: (task == TaskKind::Relatedness).then_some(ScoreRange::UNIT),
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    PairsJsonl,
    Tsv,
}

impl DataFormat {
    /// `.tsv`/`.txt` → TSV, anything else → pairs-jsonl.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => DataFormat::Tsv,
            _ => DataFormat::PairsJsonl,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairs-jsonl" | "jsonl" => Ok(DataFormat::PairsJsonl),
            "tsv" => Ok(DataFormat::Tsv),
            _ => Err(Error::InvalidArgument(format!("unknown data format '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub split: Split,
    /// Source scale of raw relatedness scores.
    pub score_range: ScoreRange,
    /// Skip records whose label is not recognised instead of failing.
    pub skip_bad: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            split: Split::Train,
            score_range: ScoreRange::SICK,
            skip_bad: false,
        }
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    s1: String,
    s2: String,
    label: serde_json::Value,
}

enum RawLabel<'a> {
    Text(&'a str),
    Number(f64),
}

#[derive(Debug)]
enum LabelError {
    Unknown(String),
    Invalid(String),
}

fn parse_gold(label: RawLabel<'_>, task: TaskKind, range: ScoreRange) -> std::result::Result<Gold, LabelError> {
    match task {
        TaskKind::Entailment3 => {
            let text = match label {
                RawLabel::Text(t) => t.trim().to_ascii_lowercase(),
                RawLabel::Number(n) => return Err(LabelError::Unknown(n.to_string())),
            };
            TaskKind::ENTAILMENT_LABELS
                .iter()
                .position(|l| *l == text)
                .map(Gold::Class)
                .ok_or(LabelError::Unknown(text))
        }
        TaskKind::Paraphrase2 => {
            let v = match label {
                RawLabel::Text(t) => t.trim().parse::<f64>().map_err(|_| LabelError::Unknown(t.to_string()))?,
                RawLabel::Number(n) => n,
            };
            match v {
                v if v == 0.0 => Ok(Gold::Class(0)),
                v if v == 1.0 => Ok(Gold::Class(1)),
                v => Err(LabelError::Unknown(v.to_string())),
            }
        }
        TaskKind::Relatedness => {
            let v = match label {
                RawLabel::Text(t) => t.trim().parse::<f64>().map_err(|_| LabelError::Unknown(t.to_string()))?,
                RawLabel::Number(n) => n,
            };
            scale_score(v, range)
                .map(Gold::Score)
                .map_err(|e| LabelError::Invalid(e.to_string()))
        }
    }
}

/// Loads one split. Relatedness scores are scaled from `opts.score_range`
/// into `[0, 1]`; record order is preserved.
pub fn load_dataset(path: &Path, format: DataFormat, task: TaskKind, opts: &LoadOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    let mut skipped = 0usize;

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (s1, s2, gold) = match format {
            DataFormat::PairsJsonl => {
                let rec: JsonRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
                let label = match &rec.label {
                    serde_json::Value::String(s) => RawLabel::Text(s),
                    serde_json::Value::Number(n) => RawLabel::Number(n.as_f64().unwrap_or(f64::NAN)),
                    other => {
                        return Err(Error::parse(path, lineno, format!("label must be a string or number, got {other}")))
                    }
                };
                let gold = parse_gold(label, task, opts.score_range);
                (rec.s1, rec.s2, gold)
            }
            DataFormat::Tsv => {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 3 {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected 3 tab-separated columns, found {}", cols.len()),
                    ));
                }
                let gold = parse_gold(RawLabel::Text(cols[2]), task, opts.score_range);
                (cols[0].to_string(), cols[1].to_string(), gold)
            }
        };
        let gold = match gold {
            Ok(g) => g,
            Err(LabelError::Unknown(l)) if opts.skip_bad => {
                log::debug!("{}:{lineno}: skipping unknown label '{l}'", path.display());
                skipped += 1;
                continue;
            }
            Err(LabelError::Unknown(l)) => {
                return Err(Error::parse(path, lineno, format!("unknown label '{l}' for task {task}")))
            }
            Err(LabelError::Invalid(m)) => return Err(Error::parse(path, lineno, m)),
        };
        let pair = SentencePair {
            s1: Sentence::new(&s1),
            s2: Sentence::new(&s2),
            gold,
            task,
        };
        if pair.s1.is_empty() || pair.s2.is_empty() {
            return Err(Error::parse(path, lineno, "empty sentence"));
        }
        pairs.push(pair);
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} records with unknown labels", path.display());
    }

    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    Ok(Dataset {
        name,
        split: opts.split,
        task,
        score_range: (task == TaskKind::Relatedness).then_some(opts.score_range),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.0).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks("A man is running"), ["a", "man", "is", "running"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("Dogs run, cats sleep."), ["dogs", "run", ",", "cats", "sleep", "."]);
    }

    #[test]
    fn tokenize_punctuation_edges() {
        assert_eq!(toks("\"Hi!\""), ["\"", "hi", "!", "\""]);
        assert_eq!(toks("..."), [".", ".", "."]);
        assert_eq!(toks("don't"), ["don't"]);
        assert_eq!(toks("Café."), ["café", "."]);
    }

    #[test]
    fn token_rejects_whitespace() {
        assert!(Token::new("").is_none());
        assert!(Token::new("a b").is_none());
        assert_eq!(Token::new("Car").unwrap().as_str(), "car");
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale_score(1.0, ScoreRange::SICK).unwrap(), 0.0);
        assert_eq!(scale_score(5.0, ScoreRange::SICK).unwrap(), 1.0);
        assert_eq!(scale_score(3.0, ScoreRange::SICK).unwrap(), 0.5);
        assert_eq!(scale_score(2.5, ScoreRange::STSB).unwrap(), 0.5);
        assert!(scale_score(5.5, ScoreRange::SICK).is_err());
        assert!(scale_score(1.0, ScoreRange { lo: 2.0, hi: 2.0 }).is_err());
    }

    #[test]
    fn unscale_examples() {
        assert_eq!(unscale_score(0.5, ScoreRange::SICK).unwrap(), 3.0);
        assert_eq!(unscale_score(0.0, ScoreRange::STSB).unwrap(), 0.0);
        let direct = 1.0 + 0.73 * (5.0 - 1.0);
        assert!((unscale_score(0.73, ScoreRange::SICK).unwrap() - direct).abs() < 1e-12);
        assert!((unscale_score(0.73, ScoreRange::SICK).unwrap() - 3.92).abs() < 1e-12);
        assert!(unscale_score(1.2, ScoreRange::SICK).is_err());
    }

    #[test]
    fn score_range_parses() {
        assert_eq!("1,5".parse::<ScoreRange>().unwrap(), ScoreRange::SICK);
        assert_eq!("0:5".parse::<ScoreRange>().unwrap(), ScoreRange::STSB);
        assert!("5,1".parse::<ScoreRange>().is_err());
    }

    fn write(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_jsonl_two_lines() {
        let f = write(
            "{\"s1\": \"A man runs\", \"s2\": \"A person runs\", \"label\": \"entailment\"}\n\
             {\"s1\": \"A cat\", \"s2\": \"A dog\", \"label\": \"contradiction\"}\n",
            ".jsonl",
        );
        let ds = load_dataset(f.path(), DataFormat::PairsJsonl, TaskKind::Entailment3, &LoadOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.pairs[0].s1.raw, "A man runs");
        assert_eq!(ds.pairs[0].gold, Gold::Class(0));
        assert_eq!(ds.pairs[1].gold, Gold::Class(1));
        assert_eq!(ds.pairs[1].s2.tokens, tokenize("A dog"));
        assert_eq!(ds.score_range, None);
    }

    #[test]
    fn load_relatedness_scales_scores() {
        let f = write("a man\ta person\t3\nx y\tx z\t4.6\n", ".tsv");
        let opts = LoadOptions::default();
        let ds = load_dataset(f.path(), DataFormat::Tsv, TaskKind::Relatedness, &opts).unwrap();
        assert_eq!(ds.pairs[0].gold, Gold::Score(0.5));
        assert!((ds.pairs[1].gold.score().unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(ds.score_range, Some(ScoreRange::SICK));
    }

    #[test]
    fn load_paraphrase_numeric_labels() {
        let f = write("{\"s1\":\"a\",\"s2\":\"b\",\"label\":1}\n{\"s1\":\"a\",\"s2\":\"b\",\"label\":\"0\"}\n", ".jsonl");
        let ds = load_dataset(f.path(), DataFormat::PairsJsonl, TaskKind::Paraphrase2, &LoadOptions::default()).unwrap();
        assert_eq!(ds.pairs.iter().map(|p| p.gold).collect::<Vec<_>>(), [Gold::Class(1), Gold::Class(0)]);
    }

    #[test]
    fn load_errors_name_the_line() {
        let f = write("{\"s1\":\"a\",\"s2\":\"b\",\"label\":\"neutral\"}\nnot json\n", ".jsonl");
        let err = load_dataset(f.path(), DataFormat::PairsJsonl, TaskKind::Entailment3, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let f = write("{\"s1\":\"a\",\"label\":\"neutral\"}\n", ".jsonl");
        let err = load_dataset(f.path(), DataFormat::PairsJsonl, TaskKind::Entailment3, &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("s2"), "{err}");

        let f = write("a\tb\n", ".tsv");
        let err = load_dataset(f.path(), DataFormat::Tsv, TaskKind::Paraphrase2, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn unknown_label_errors_unless_skipped() {
        let f = write("a\tb\tneutral\nc\td\t-\ne\tf\tentailment\n", ".tsv");
        let err = load_dataset(f.path(), DataFormat::Tsv, TaskKind::Entailment3, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));

        let opts = LoadOptions {
            skip_bad: true,
            ..LoadOptions::default()
        };
        let ds = load_dataset(f.path(), DataFormat::Tsv, TaskKind::Entailment3, &opts).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.pairs[1].gold, Gold::Class(0));
    }

    #[test]
    fn out_of_range_score_is_an_error_even_with_skip() {
        let f = write("a\tb\t7\n", ".tsv");
        let opts = LoadOptions {
            skip_bad: true,
            ..LoadOptions::default()
        };
        assert!(load_dataset(f.path(), DataFormat::Tsv, TaskKind::Relatedness, &opts).is_err());
    }

    #[test]
    fn pair_constructor_checks_gold_domain() {
        assert!(SentencePair::new("a", "b", Gold::Score(0.3), TaskKind::Entailment3).is_err());
        assert!(SentencePair::new("a", "b", Gold::Class(2), TaskKind::Paraphrase2).is_err());
        assert!(SentencePair::new("a", "b", Gold::Score(1.2), TaskKind::Relatedness).is_err());
        assert!(SentencePair::new("a", "b", Gold::Class(2), TaskKind::Entailment3).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scale_round_trip(lo in -10.0f64..10.0, width in 0.1f64..20.0, t in 0.0f64..=1.0) {
                let range = ScoreRange { lo, hi: lo + width };
                let x = (lo + t * width).clamp(lo, lo + width);
                let back = unscale_score(scale_score(x, range).unwrap(), range).unwrap();
                prop_assert!((back - x).abs() < 1e-12);
            }

            #[test]
            fn tokenize_is_idempotent_on_join(text in "[ a-zA-Z0-9,.!?'\"()-]{0,60}") {
                let once = tokenize(&text);
                let joined = once.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(" ");
                prop_assert_eq!(tokenize(&joined), once);
            }

            #[test]
            fn tokens_are_lowercase_and_nonempty(text in "\\PC{0,40}") {
                for t in tokenize(&text) {
                    prop_assert!(!t.is_empty());
                    prop_assert!(!t.chars().any(char::is_whitespace));
                    prop_assert_eq!(t.to_lowercase(), t.as_str());
                }
            }
        }
    }
}
