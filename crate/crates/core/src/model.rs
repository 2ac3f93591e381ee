//! Full pair model: shared encoder, composition, head, loss, checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Gold, ScoreRange, SentencePair, TaskKind};
use crate::encoder::{
    backward_accumulate, dropout_mask, sample_locked_mask, DroppedRecurrent, EncoderParams, EncoderPass,
    ForwardTape, RegularizationConfig,
};
use crate::error::{Error, Result};
use crate::features::{augment_pair, AugmentedSentence, EmbeddingTable, FeatureMode};
use crate::matcher::{
    compose, compose_backward, head_backward_accumulate, head_forward_with_mask, match_width, HeadParams, HeadTape,
    ModelOutput, ScoreFn,
};
use crate::ppdb::ParaphraseIndex;
use crate::rng::Rng;
use crate::training::{cross_entropy, mse_loss};

pub const CHECKPOINT_MAGIC: &str = "regmapr-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: TaskKind,
    pub mode: FeatureMode,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    /// Width of the head's ReLU layer.
    pub head_hidden: usize,
    /// Word vector width before the feature bits.
    pub embedding_dim: usize,
    pub score_fn: ScoreFn,
    /// Reporting scale for relatedness scores.
    pub score_range: Option<ScoreRange>,
    pub forget_bias_one: bool,
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.mode.width(self.embedding_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.head_hidden == 0 || self.embedding_dim == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Parameters {
    pub encoder: EncoderParams,
    pub head: HeadParams,
}

impl Parameters {
    pub fn zeros_like(&self) -> Self {
        Parameters {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<_> = self.encoder.tensors().into_iter().collect();
        out.extend(self.head.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<_> = self.encoder.tensors_mut().into_iter().collect();
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn shapes(&self) -> Vec<(&'static str, (usize, usize))> {
        let e = &self.encoder;
        let h = &self.head;
        let col = |v: &Vec<f64>| (v.len(), 1);
        vec![
            ("fwd.W_x", e.fwd.w_x.shape()),
            ("fwd.W_h", e.fwd.w_h.shape()),
            ("fwd.b", col(&e.fwd.b)),
            ("bwd.W_x", e.bwd.w_x.shape()),
            ("bwd.W_h", e.bwd.w_h.shape()),
            ("bwd.b", col(&e.bwd.b)),
            ("head.W1", h.w1.shape()),
            ("head.b1", col(&h.b1)),
            ("head.W2", h.w2.shape()),
            ("head.b2", col(&h.b2)),
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Parameters) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Dropout randomness for one pair: locked input masks for both sentences,
/// the head dropout mask and the (batch-shared) DropConnect sample.
#[derive(Debug, Clone, Default)]
pub struct PairNoise {
    pub mask1: Option<Vec<f64>>,
    pub mask2: Option<Vec<f64>>,
    pub head_mask: Option<Vec<f64>>,
    pub dropped: Option<Arc<DroppedRecurrent>>,
}

impl PairNoise {
    pub fn none() -> Self {
        PairNoise::default()
    }

    /// Draws the per-pair masks from `rng`. Zero rates leave the slot empty.
    pub fn sample(
        config: &ModelConfig,
        reg: &RegularizationConfig,
        rng: &mut Rng,
        dropped: Option<Arc<DroppedRecurrent>>,
    ) -> Result<Self> {
        reg.validate()?;
        let d = config.input_dim();
        let (mask1, mask2) = if reg.d_e > 0.0 {
            (
                Some(sample_locked_mask(rng, d, reg.d_e)?),
                Some(sample_locked_mask(rng, d, reg.d_e)?),
            )
        } else {
            (None, None)
        };
        let head_mask = if reg.d_f > 0.0 {
            Some(dropout_mask(rng, config.head_hidden, reg.d_f)?)
        } else {
            None
        };
        Ok(PairNoise {
            mask1,
            mask2,
            head_mask,
            dropped,
        })
    }

    /// Same masks with the DropConnect sample recomputed from `params`
    /// (needed after the recurrent weights change).
    pub fn rebind(&self, params: &EncoderParams) -> Result<Self> {
        let dropped = match &self.dropped {
            Some(d) => Some(Arc::new(DroppedRecurrent::new(
                params,
                d.fwd_scale.clone(),
                d.bwd_scale.clone(),
            )?)),
            None => None,
        };
        Ok(PairNoise {
            dropped,
            ..self.clone()
        })
    }
}

/// Everything recorded by a pair forward pass.
#[derive(Debug, Clone)]
pub struct PairTape {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub enc1: ForwardTape,
    pub enc2: ForwardTape,
    pub head: HeadTape,
    pub output: ModelOutput,
}

impl PairTape {
    /// Distance of this evaluation point from the nearest non-differentiable
    /// point: max-pool ties, `|h1−h2|` at zero, ReLU at zero, and the score clamp.
    pub fn kink_margin(&self) -> f64 {
        let mut m = self.enc1.pool_margin().min(self.enc2.pool_margin());
        for (a, b) in self.h1.iter().zip(&self.h2) {
            m = m.min((a - b).abs());
        }
        for p in self.head.pre_activations() {
            m = m.min(p.abs());
        }
        if self.head.task() == TaskKind::Relatedness {
            m = m.min(self.head.output_pre_activation()[0].abs());
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Model {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let encoder = EncoderParams::init(config.hidden, config.input_dim(), config.forget_bias_one, rng);
        let head = HeadParams::init(
            match_width(2 * config.hidden, config.task),
            config.head_hidden,
            config.task.num_outputs(),
            rng,
        );
        Ok(Model {
            config,
            params: Parameters { encoder, head },
        })
    }

    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        self.params.encoder.check()?;
        self.params.head.check()?;
        let c = &self.config;
        if self.params.encoder.hidden() != c.hidden || self.params.encoder.input() != c.input_dim() {
            return Err(Error::Shape("encoder does not match model config".into()));
        }
        let h = &self.params.head;
        if h.input() != match_width(2 * c.hidden, c.task) || h.hidden() != c.head_hidden || h.outputs() != c.task.num_outputs() {
            return Err(Error::Shape("head does not match model config".into()));
        }
        Ok(())
    }

    /// Augmented inputs for `pair` under this model's feature mode.
    pub fn featurize(
        &self,
        pair: &SentencePair,
        table: &EmbeddingTable,
        index: Option<&ParaphraseIndex>,
    ) -> Result<(AugmentedSentence, AugmentedSentence)> {
        if table.dim() != self.config.embedding_dim {
            return Err(Error::Shape(format!(
                "embedding table width {} != model width {}",
                table.dim(),
                self.config.embedding_dim
            )));
        }
        augment_pair(pair, table, index, self.config.mode)
    }

    pub fn forward(&self, s1: &AugmentedSentence, s2: &AugmentedSentence, noise: &PairNoise) -> Result<PairTape> {
        forward_with(&self.config, &self.params, s1, s2, noise)
    }

    /// Eval-mode prediction.
    pub fn predict(&self, s1: &AugmentedSentence, s2: &AugmentedSentence) -> Result<ModelOutput> {
        Ok(self.forward(s1, s2, &PairNoise::none())?.output)
    }

    /// Loss for one pair, with gradients accumulated into `grads`.
    ///
    /// Recurrent-weight gradients are taken w.r.t. the dropped `W_h` when the
    /// noise carries a DropConnect sample; call
    /// [`DroppedRecurrent::apply_to_grads`] once after accumulating a batch.
    pub fn accumulate_gradients(
        &self,
        s1: &AugmentedSentence,
        s2: &AugmentedSentence,
        gold: Gold,
        noise: &PairNoise,
        grads: &mut Parameters,
    ) -> Result<(f64, PairTape)> {
        let tape = self.forward(s1, s2, noise)?;
        let (loss, upstream) = loss_and_upstream(&tape.output, gold, self.config.task)?;
        let dv = head_backward_accumulate(&tape.head, &self.params.head, &upstream, &mut grads.head)?;
        let (g1, g2) = compose_backward(&tape.h1, &tape.h2, self.config.task, &dv)?;
        backward_accumulate(&tape.enc1, &self.params.encoder, &g1, &mut grads.encoder)?;
        backward_accumulate(&tape.enc2, &self.params.encoder, &g2, &mut grads.encoder)?;
        Ok((loss, tape))
    }

    /// Loss and exact gradients w.r.t. the stored parameters for one pair.
    pub fn pair_gradients(
        &self,
        s1: &AugmentedSentence,
        s2: &AugmentedSentence,
        gold: Gold,
        noise: &PairNoise,
    ) -> Result<(f64, Parameters, PairTape)> {
        let mut grads = self.params.zeros_like();
        let (loss, tape) = self.accumulate_gradients(s1, s2, gold, noise, &mut grads)?;
        if let Some(d) = &noise.dropped {
            d.apply_to_grads(&mut grads.encoder);
        }
        Ok((loss, grads, tape))
    }

    /// Loss only, with the given noise.
    pub fn loss(&self, s1: &AugmentedSentence, s2: &AugmentedSentence, gold: Gold, noise: &PairNoise) -> Result<f64> {
        let tape = self.forward(s1, s2, noise)?;
        Ok(loss_and_upstream(&tape.output, gold, self.config.task)?.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_checkpoint(&mut w, self).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_checkpoint(&mut BufReader::new(file))
    }
}

fn forward_with(
    config: &ModelConfig,
    params: &Parameters,
    s1: &AugmentedSentence,
    s2: &AugmentedSentence,
    noise: &PairNoise,
) -> Result<PairTape> {
    let pass = EncoderPass::with_shared(&params.encoder, noise.dropped.clone());
    let (h1, enc1) = pass.encode(&s1.matrix, noise.mask1.as_deref())?;
    let (h2, enc2) = pass.encode(&s2.matrix, noise.mask2.as_deref())?;
    let v = compose(&h1, &h2, config.task)?;
    let (output, head) = head_forward_with_mask(&v, &params.head, noise.head_mask.clone(), config.task, config.score_fn)?;
    Ok(PairTape {
        h1,
        h2,
        enc1,
        enc2,
        head,
        output,
    })
}

/// Loss and its gradient w.r.t. the head output (logits or score).
pub fn loss_and_upstream(output: &ModelOutput, gold: Gold, task: TaskKind) -> Result<(f64, Vec<f64>)> {
    let (loss, up) = match (output, gold) {
        (ModelOutput::Logits(z), Gold::Class(c)) => cross_entropy(z, c)?,
        (ModelOutput::Score(s), Gold::Score(t)) => {
            let (l, g) = mse_loss(*s, t)?;
            (l, vec![g])
        }
        _ => return Err(Error::InvalidArgument(format!("gold label does not fit task {task}"))),
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, up))
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    config: ModelConfig,
    tensors: Vec<(String, usize, usize)>,
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn write_checkpoint<W: Write>(w: &mut W, model: &Model) -> std::io::Result<()> {
    let meta = CheckpointMeta {
        format: CHECKPOINT_MAGIC.to_string(),
        config: model.config.clone(),
        tensors: model
            .params
            .shapes()
            .into_iter()
            .map(|(n, (r, c))| (n.to_string(), r, c))
            .collect(),
    };
    let json = serde_json::to_vec(&meta).map_err(std::io::Error::other)?;
    w.write_all(CHECKPOINT_MAGIC.as_bytes())?;
    w.write_all(b"\n")?;
    write_u32(w, json.len())?;
    w.write_all(&json)?;
    for (_, t) in model.params.tensors() {
        for x in t {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| ckpt_err(format!("truncated checkpoint ({what})")))
}

fn read_checkpoint<R: Read>(r: &mut R) -> Result<Model> {
    let mut magic = vec![0u8; CHECKPOINT_MAGIC.len() + 1];
    read_exact(r, &mut magic, "magic")?;
    if &magic[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC.as_bytes() || magic[CHECKPOINT_MAGIC.len()] != b'\n' {
        return Err(ckpt_err(format!("not a {CHECKPOINT_MAGIC} file")));
    }
    let mut len = [0u8; 4];
    read_exact(r, &mut len, "header length")?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    read_exact(r, &mut json, "header")?;
    let meta: CheckpointMeta = serde_json::from_slice(&json).map_err(|e| ckpt_err(format!("bad header: {e}")))?;
    if meta.format != CHECKPOINT_MAGIC {
        return Err(ckpt_err(format!("unsupported format {}", meta.format)));
    }
    // Build a zero model of the declared shape, then fill it tensor by tensor.
    let config = meta.config;
    config.validate()?;
    let enc_in = config.input_dim();
    let mut params = Parameters {
        encoder: EncoderParams::zeros(config.hidden, enc_in),
        head: HeadParams::zeros(
            match_width(2 * config.hidden, config.task),
            config.head_hidden,
            config.task.num_outputs(),
        ),
    };
    let expected: Vec<(String, usize, usize)> = params
        .shapes()
        .into_iter()
        .map(|(n, (r, c))| (n.to_string(), r, c))
        .collect();
    if meta.tensors != expected {
        return Err(ckpt_err("tensor table does not match the stored config"));
    }
    let mut buf = [0u8; 8];
    for (name, t) in params.tensors_mut() {
        for x in t.iter_mut() {
            read_exact(r, &mut buf, name)?;
            *x = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf).map_err(|e| ckpt_err(e.to_string()))? != 0 {
        return Err(ckpt_err("trailing bytes after last tensor"));
    }
    let model = Model { config, params };
    if !model.params.all_finite() {
        return Err(Error::NonFinite("checkpoint contains non-finite weights".into()));
    }
    Ok(model)
}

/// Shape of the named tensor, as stored in checkpoints.
pub fn tensor_shape(params: &Parameters, name: &str) -> Option<(usize, usize)> {
    params.shapes().into_iter().find(|(n, _)| *n == name).map(|(_, s)| s)
}
