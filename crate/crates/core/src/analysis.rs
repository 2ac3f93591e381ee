//! Class-conditional MA/PR proportions and their relative difference.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Gold, SentencePair, TaskKind};
use crate::error::{Error, Result};
use crate::features::{ma_feature, pr_feature, token_set};
use crate::ppdb::ParaphraseIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnalysisFeature {
    #[serde(rename = "MA")]
    Ma,
    #[serde(rename = "PR")]
    Pr,
    /// Both bits on.
    #[serde(rename = "MAPR")]
    Mapr,
}

impl AnalysisFeature {
    /// Report order.
    pub const ALL: [AnalysisFeature; 3] = [AnalysisFeature::Pr, AnalysisFeature::Ma, AnalysisFeature::Mapr];

    fn needs_index(self) -> bool {
        self != AnalysisFeature::Ma
    }
}

impl fmt::Display for AnalysisFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnalysisFeature::Ma => "MA",
            AnalysisFeature::Pr => "PR",
            AnalysisFeature::Mapr => "MAPR",
        })
    }
}

impl FromStr for AnalysisFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MA" => Ok(AnalysisFeature::Ma),
            "PR" => Ok(AnalysisFeature::Pr),
            "MAPR" | "MA+PR" => Ok(AnalysisFeature::Mapr),
            _ => Err(Error::InvalidArgument(format!("unknown feature '{s}'"))),
        }
    }
}

/// Positive and negative pairs. Neutral entailment pairs belong to neither.
pub fn partition(dataset: &Dataset) -> Result<(Vec<&SentencePair>, Vec<&SentencePair>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot partition an empty dataset".into()));
    }
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    match dataset.task {
        TaskKind::Paraphrase2 | TaskKind::Entailment3 => {
            // paraphrase: 1 positive, 0 negative; entailment: 0 positive, 1 negative
            let (p, n) = if dataset.task == TaskKind::Paraphrase2 { (1, 0) } else { (0, 1) };
            for pair in &dataset.pairs {
                match pair.gold {
                    Gold::Class(c) if c == p => pos.push(pair),
                    Gold::Class(c) if c == n => neg.push(pair),
                    _ => {}
                }
            }
        }
        TaskKind::Relatedness => {
            let scores: Vec<f64> = dataset.pairs.iter().filter_map(|p| p.gold.score()).collect();
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            for pair in &dataset.pairs {
                if pair.gold.score().is_some_and(|s| s >= mean) {
                    pos.push(pair);
                } else {
                    neg.push(pair);
                }
            }
        }
    }
    Ok((pos, neg))
}

/// Tokens with the feature on, and all tokens, over both sentences of every pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub on: u64,
    pub total: u64,
}

impl TokenCounts {
    fn add(self, o: TokenCounts) -> TokenCounts {
        TokenCounts {
            on: self.on + o.on,
            total: self.total + o.total,
        }
    }
}

fn pair_counts(pair: &SentencePair, feature: AnalysisFeature, index: Option<&ParaphraseIndex>) -> TokenCounts {
    let sets = [token_set(&pair.s1.tokens), token_set(&pair.s2.tokens)];
    let mut c = TokenCounts::default();
    for (side, other) in [(&pair.s1, &sets[1]), (&pair.s2, &sets[0])] {
        for t in &side.tokens {
            let ma = || ma_feature(t, other);
            let pr = || index.is_some_and(|ix| pr_feature(t, other, ix));
            let on = match feature {
                AnalysisFeature::Ma => ma(),
                AnalysisFeature::Pr => pr(),
                AnalysisFeature::Mapr => ma() && pr(),
            };
            c.on += on as u64;
            c.total += 1;
        }
    }
    c
}

pub fn feature_counts(pairs: &[&SentencePair], feature: AnalysisFeature, index: Option<&ParaphraseIndex>) -> Result<TokenCounts> {
    if feature.needs_index() && index.is_none() {
        return Err(Error::InvalidArgument(format!("feature {feature} needs a paraphrase index")));
    }
    Ok(pairs
        .par_iter()
        .map(|p| pair_counts(p, feature, index))
        .reduce(TokenCounts::default, TokenCounts::add))
}

/// Share of tokens (over both sentences of every pair) with `feature` on.
pub fn feature_proportion(pairs: &[&SentencePair], feature: AnalysisFeature, index: Option<&ParaphraseIndex>) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("feature proportion of an empty pair list".into()));
    }
    let c = feature_counts(pairs, feature, index)?;
    if c.total == 0 {
        return Err(Error::InvalidArgument("pairs contain no tokens".into()));
    }
    Ok(c.on as f64 / c.total as f64)
}

/// `(R_P − R_N) / ((R_P + R_N) / 2)`.
pub fn relative_difference(r_p: f64, r_n: f64) -> Result<f64> {
    let mid = (r_p + r_n) / 2.0;
    if mid == 0.0 || !mid.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "relative difference undefined for R_P = {r_p}, R_N = {r_n}"
        )));
    }
    Ok((r_p - r_n) / mid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub feature: AnalysisFeature,
    pub r_p: f64,
    pub r_n: f64,
    /// `None` when both proportions are zero.
    pub r: Option<f64>,
    pub positive: TokenCounts,
    pub negative: TokenCounts,
}

/// One report per feature (PR, MA, MAPR) over the positive/negative split of `dataset`.
pub fn analyze(dataset: &Dataset, index: &ParaphraseIndex) -> Result<Vec<AnalysisReport>> {
    let (pos, neg) = partition(dataset)?;
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "dataset '{}' has {} positive and {} negative pairs; both are needed",
            dataset.name,
            pos.len(),
            neg.len()
        )));
    }
    AnalysisFeature::ALL
        .iter()
        .map(|&feature| {
            let positive = feature_counts(&pos, feature, Some(index))?;
            let negative = feature_counts(&neg, feature, Some(index))?;
            let r_p = positive.on as f64 / positive.total as f64;
            let r_n = negative.on as f64 / negative.total as f64;
            Ok(AnalysisReport {
                feature,
                r_p,
                r_n,
                r: relative_difference(r_p, r_n).ok(),
                positive,
                negative,
            })
        })
        .collect()
}

/// Columns `feature, R_P, R_N, R`; an undefined R is written as `NA`.
pub fn reports_tsv(reports: &[AnalysisReport]) -> String {
    let mut s = String::from("feature\tR_P\tR_N\tR\n");
    for r in reports {
        let rel = r.r.map_or_else(|| "NA".to_string(), |v| v.to_string());
        s.push_str(&format!("{}\t{}\t{}\t{rel}\n", r.feature, r.r_p, r.r_n));
    }
    s
}
