//! End-to-end finite-difference check of the analytic gradients on a tiny model.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Gold, SentencePair, TaskKind};
use crate::encoder::RegularizationConfig;
use crate::error::{Error, Result};
use crate::features::{AugmentedSentence, EmbeddingTable, FeatureMode};
use crate::matcher::ScoreFn;
use crate::model::{Model, ModelConfig, PairNoise};
use crate::ppdb::ParaphraseIndex;
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// No dropout of any kind.
    DropoutOff,
    /// All three dropouts on, masks drawn once per probe and held fixed.
    FixedMasks,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::DropoutOff => "dropout-off",
            Regime::FixedMasks => "fixed-masks",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub hidden: usize,
    pub head_hidden: usize,
    pub embedding_dim: usize,
    pub max_len: usize,
    /// Accepted probes per (task, regime).
    pub probes: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Probes closer than this to a kink are redrawn.
    pub kink_margin: f64,
    /// Sampled coordinates per tensor.
    pub coords: usize,
    /// Dropout rates for the fixed-mask regime.
    pub rate: f64,
    pub score_fn: ScoreFn,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 7,
            hidden: 8,
            head_hidden: 16,
            embedding_dim: 300,
            max_len: 6,
            probes: 20,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            kink_margin: 1e-3,
            coords: 16,
            rate: 0.3,
            score_fn: ScoreFn::MinExp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub task: TaskKind,
    pub regime: Regime,
    pub tensor: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub checks: Vec<TensorCheck>,
    pub accepted: usize,
    pub rejected: usize,
    pub max_rel_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.config.tolerance
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:<12} {:<9} {:>12} {:>12} {:>6}\n", "task", "regime", "tensor", "max_rel", "max_abs", "coords");
        for c in &self.checks {
            s.push_str(&format!(
                "{:<12} {:<12} {:<9} {:>12.3e} {:>12.3e} {:>6}\n",
                c.task.to_string(),
                c.regime.to_string(),
                c.tensor,
                c.max_rel_error,
                c.max_abs_error,
                c.coords
            ));
        }
        s.push_str(&format!(
            "probes {} accepted, {} redrawn near kinks; max relative error {:.3e} (tolerance {:.0e})\n",
            self.accepted, self.rejected, self.max_rel_error, self.config.tolerance
        ));
        s
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

const WORDS: [&str; 12] = [
    "a", "man", "dog", "puppy", "runs", "sprints", "big", "large", "the", "cat", "sits", "park",
];
const PARAPHRASES: [(&str, &str); 4] = [("dog", "puppy"), ("runs", "sprints"), ("big", "large"), ("man", "guy")];

struct Fixture {
    table: EmbeddingTable,
    index: ParaphraseIndex,
}

impl Fixture {
    fn new(cfg: &GradcheckConfig) -> Result<Self> {
        let mut rng = stream(cfg.seed, "gradcheck-vocab", &[]);
        let table = EmbeddingTable::from_vectors(
            cfg.embedding_dim,
            WORDS
                .iter()
                .map(|w| (w.to_string(), (0..cfg.embedding_dim).map(|_| rng.gen_range(-0.5..0.5)).collect())),
        )?;
        Ok(Fixture {
            table,
            index: ParaphraseIndex::from_pairs(PARAPHRASES, true),
        })
    }

    fn sentence(&self, rng: &mut Rng, max_len: usize) -> String {
        let n = rng.gen_range(1..=max_len);
        (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
    }
}

fn random_gold(task: TaskKind, rng: &mut Rng) -> Gold {
    match task {
        TaskKind::Relatedness => Gold::Score(rng.gen_range(0.0..1.0)),
        _ => Gold::Class(rng.gen_range(0..task.num_outputs())),
    }
}

/// Coordinates to probe in each tensor. The input matrices always include
/// the two feature columns.
fn pick_coords(model: &Model, rng: &mut Rng, per_tensor: usize) -> Vec<Vec<usize>> {
    let d = model.config.input_dim();
    let extra = model.config.mode.extra_width();
    model
        .params
        .shapes()
        .into_iter()
        .map(|(name, (rows, cols))| {
            let n = rows * cols;
            let mut idx: Vec<usize> = if n <= per_tensor {
                (0..n).collect()
            } else {
                rand::seq::index::sample(rng, n, per_tensor).into_vec()
            };
            if name.ends_with("W_x") {
                for c in d - extra..d {
                    for _ in 0..4 {
                        idx.push(rng.gen_range(0..rows) * cols + c);
                    }
                }
            }
            idx.sort_unstable();
            idx.dedup();
            idx
        })
        .collect()
}

struct Probe {
    model: Model,
    s1: AugmentedSentence,
    s2: AugmentedSentence,
    gold: Gold,
    noise: PairNoise,
}

fn draw_probe(cfg: &GradcheckConfig, fx: &Fixture, task: TaskKind, regime: Regime, rng: &mut Rng) -> Result<(Probe, f64)> {
    let config = ModelConfig {
        task,
        mode: FeatureMode::Mapr,
        hidden: cfg.hidden,
        head_hidden: cfg.head_hidden,
        embedding_dim: cfg.embedding_dim,
        score_fn: cfg.score_fn,
        score_range: None,
        forget_bias_one: false,
    };
    let model = Model::init(config.clone(), rng)?;
    let gold = random_gold(task, rng);
    let pair = SentencePair::new(&fx.sentence(rng, cfg.max_len), &fx.sentence(rng, cfg.max_len), gold, task)?;
    let (s1, s2) = model.featurize(&pair, &fx.table, Some(&fx.index))?;
    let noise = match regime {
        Regime::DropoutOff => PairNoise::none(),
        Regime::FixedMasks => {
            let reg = RegularizationConfig::new(cfg.rate, cfg.rate, cfg.rate)?;
            let dropped = crate::encoder::DroppedRecurrent::sample(&model.params.encoder, rng, cfg.rate)?;
            PairNoise::sample(&config, &reg, rng, Some(std::sync::Arc::new(dropped)))?
        }
    };
    let tape = model.forward(&s1, &s2, &noise)?;
    let mut margin = tape.kink_margin();
    if task == TaskKind::Relatedness && cfg.score_fn == ScoreFn::MinExp {
        // the clamp region has identically zero gradient; probe where it is open
        let z = tape.head.output_pre_activation()[0];
        if z > 0.0 {
            margin = 0.0;
        }
    }
    Ok((
        Probe {
            model,
            s1,
            s2,
            gold,
            noise,
        },
        margin,
    ))
}

fn probe_loss(p: &Probe) -> Result<f64> {
    let noise = p.noise.rebind(&p.model.params.encoder)?;
    p.model.loss(&p.s1, &p.s2, p.gold, &noise)
}

/// Per-tensor `(max relative error, max absolute error, coords)` for one probe.
fn check_probe(cfg: &GradcheckConfig, probe: &mut Probe, rng: &mut Rng) -> Result<Vec<(f64, f64, usize)>> {
    let (_, grads, _) = probe.model.pair_gradients(&probe.s1, &probe.s2, probe.gold, &probe.noise)?;
    let coords = pick_coords(&probe.model, rng, cfg.coords);
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
    let mut out = Vec::with_capacity(coords.len());
    for (k, idx) in coords.iter().enumerate() {
        let (mut rel, mut abs) = (0.0f64, 0.0f64);
        for &i in idx {
            let orig = probe.model.params.tensors()[k].1[i];
            probe.model.params.tensors_mut()[k].1[i] = orig + cfg.step;
            let up = probe_loss(probe)?;
            probe.model.params.tensors_mut()[k].1[i] = orig - cfg.step;
            let down = probe_loss(probe)?;
            probe.model.params.tensors_mut()[k].1[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic[k][i];
            rel = rel.max(relative_error(a, numeric, cfg.floor));
            abs = abs.max((a - numeric).abs());
        }
        out.push((rel, abs, idx.len()));
    }
    Ok(out)
}

const MAX_DRAWS_PER_PROBE: usize = 200;

/// Runs `cfg.probes` accepted probes for every task and both regimes.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.probes == 0 || cfg.hidden == 0 || cfg.max_len == 0 || !(cfg.step > 0.0) {
        return Err(Error::InvalidArgument("gradcheck needs positive sizes and step".into()));
    }
    let fx = Fixture::new(cfg)?;
    let mut acc: BTreeMap<(usize, Regime, usize), (f64, f64, usize)> = BTreeMap::new();
    let mut names = Vec::new();
    let (mut accepted, mut rejected) = (0, 0);
    let tasks = [TaskKind::Entailment3, TaskKind::Paraphrase2, TaskKind::Relatedness];
    for (ti, &task) in tasks.iter().enumerate() {
        for regime in [Regime::DropoutOff, Regime::FixedMasks] {
            for k in 0..cfg.probes {
                let mut draws = 0;
                let mut probe = loop {
                    let mut rng = stream(cfg.seed, "gradcheck", &[ti as u64, regime as u64, k as u64, draws as u64]);
                    let (probe, margin) = draw_probe(cfg, &fx, task, regime, &mut rng)?;
                    draws += 1;
                    if margin > cfg.kink_margin {
                        break probe;
                    }
                    rejected += 1;
                    if draws >= MAX_DRAWS_PER_PROBE {
                        return Err(Error::NonFinite(format!(
                            "no probe clear of kinks after {draws} draws ({task}, {regime})"
                        )));
                    }
                };
                accepted += 1;
                if names.is_empty() {
                    names = probe.model.params.shapes().into_iter().map(|(n, _)| n.to_string()).collect();
                }
                let mut rng = stream(cfg.seed, "gradcheck-coords", &[ti as u64, regime as u64, k as u64]);
                for (j, (rel, abs, n)) in check_probe(cfg, &mut probe, &mut rng)?.into_iter().enumerate() {
                    let e = acc.entry((ti, regime, j)).or_insert((0.0, 0.0, 0));
                    e.0 = e.0.max(rel);
                    e.1 = e.1.max(abs);
                    e.2 += n;
                }
            }
        }
    }
    let checks: Vec<TensorCheck> = acc
        .into_iter()
        .map(|((ti, regime, j), (rel, abs, n))| TensorCheck {
            task: tasks[ti],
            regime,
            tensor: names[j].clone(),
            max_rel_error: rel,
            max_abs_error: abs,
            coords: n,
        })
        .collect();
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        config: cfg.clone(),
        checks,
        accepted,
        rejected,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert_eq!(relative_error(2.0, 1.0, 1e-6), 0.5);
        assert_eq!(relative_error(1e-9, 0.0, 1e-6), 1e-3);
    }

    #[test]
    fn small_check_passes() {
        let cfg = GradcheckConfig {
            hidden: 3,
            head_hidden: 4,
            embedding_dim: 5,
            probes: 2,
            coords: 6,
            ..GradcheckConfig::default()
        };
        let r = run_gradcheck(&cfg).unwrap();
        assert_eq!(r.accepted, 12);
        assert_eq!(r.checks.len(), 3 * 2 * 10);
        assert!(r.passed(), "{}", r.table());
    }
}
