//! Max-pooled bidirectional LSTM sentence encoder with locked input dropout
//! and DropConnect on the recurrent weights.
//!
//! Gate rows are laid out `[input, forget, candidate, output]`, each `H`
//! rows tall, with a single bias vector and no peepholes.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::AugmentedSentence;
use crate::linalg::{sigmoid, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmDirectionParams {
    /// `4H × D`
    pub w_x: Matrix,
    /// `4H × H`
    pub w_h: Matrix,
    /// `4H`
    pub b: Vec<f64>,
}

impl LstmDirectionParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmDirectionParams {
            w_x: Matrix::zeros(4 * hidden, input),
            w_h: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Weights uniform in `±1/√H`, zero biases (forget bias optionally 1).
    pub fn init(hidden: usize, input: usize, forget_bias_one: bool, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut b = vec![0.0; 4 * hidden];
        if forget_bias_one {
            b[hidden..2 * hidden].fill(1.0);
        }
        LstmDirectionParams {
            w_x: Matrix::uniform(4 * hidden, input, bound, rng),
            w_h: Matrix::uniform(4 * hidden, hidden, bound, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.cols()
    }

    pub fn input(&self) -> usize {
        self.w_x.cols()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.w_h.rows() != 4 * h || self.w_x.rows() != 4 * h || self.b.len() != 4 * h {
            return Err(Error::Shape(format!(
                "LSTM params: w_x {:?}, w_h {:?}, b {}",
                self.w_x.shape(),
                self.w_h.shape(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub fwd: LstmDirectionParams,
    pub bwd: LstmDirectionParams,
}

impl EncoderParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        EncoderParams {
            fwd: LstmDirectionParams::zeros(hidden, input),
            bwd: LstmDirectionParams::zeros(hidden, input),
        }
    }

    pub fn init(hidden: usize, input: usize, forget_bias_one: bool, rng: &mut Rng) -> Self {
        let fwd = LstmDirectionParams::init(hidden, input, forget_bias_one, rng);
        let bwd = LstmDirectionParams::init(hidden, input, forget_bias_one, rng);
        EncoderParams { fwd, bwd }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn input(&self) -> usize {
        self.fwd.input()
    }

    /// Output width `2H`.
    pub fn output(&self) -> usize {
        2 * self.hidden()
    }

    pub fn check(&self) -> Result<()> {
        self.fwd.check()?;
        self.bwd.check()?;
        if self.fwd.hidden() != self.bwd.hidden() || self.fwd.input() != self.bwd.input() {
            return Err(Error::Shape("forward and backward LSTMs disagree on H or D".into()));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hidden(), self.input())
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("fwd.W_x", self.fwd.w_x.as_slice()),
            ("fwd.W_h", self.fwd.w_h.as_slice()),
            ("fwd.b", &self.fwd.b),
            ("bwd.W_x", self.bwd.w_x.as_slice()),
            ("bwd.W_h", self.bwd.w_h.as_slice()),
            ("bwd.b", &self.bwd.b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 6] {
        [
            ("fwd.W_x", self.fwd.w_x.as_mut_slice()),
            ("fwd.W_h", self.fwd.w_h.as_mut_slice()),
            ("fwd.b", &mut self.fwd.b),
            ("bwd.W_x", self.bwd.w_x.as_mut_slice()),
            ("bwd.W_h", self.bwd.w_h.as_mut_slice()),
            ("bwd.b", &mut self.bwd.b),
        ]
    }
}

/// Dropout rates for the three regularizers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegularizationConfig {
    /// Locked dropout on the word vectors.
    pub d_e: f64,
    /// Dropout after the head's ReLU.
    pub d_f: f64,
    /// DropConnect on `W_h`.
    pub d_w: f64,
}

impl RegularizationConfig {
    pub fn new(d_e: f64, d_f: f64, d_w: f64) -> Result<Self> {
        let r = RegularizationConfig { d_e, d_f, d_w };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d_e", self.d_e), ("d_f", self.d_f), ("d_w", self.d_w)] {
            check_rate(name, v)?;
        }
        Ok(())
    }

    pub fn is_off(&self) -> bool {
        self.d_e == 0.0 && self.d_f == 0.0 && self.d_w == 0.0
    }
}

pub(crate) fn check_rate(name: &str, rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("{name} = {rate} must lie in [0, 1)")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise `1/(1-rate)`.
pub fn dropout_mask(rng: &mut Rng, width: usize, rate: f64) -> Result<Vec<f64>> {
    check_rate("dropout rate", rate)?;
    if rate == 0.0 {
        return Ok(vec![1.0; width]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..width)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

/// One locked mask per sentence, shared by every timestep.
pub fn sample_locked_mask(rng: &mut Rng, width: usize, d_e: f64) -> Result<Vec<f64>> {
    dropout_mask(rng, width, d_e)
}

/// Inverted-dropout scale for every entry of a `rows × cols` weight matrix.
pub fn sample_weight_scale(rng: &mut Rng, rows: usize, cols: usize, d_w: f64) -> Result<Matrix> {
    Ok(Matrix::from_vec(rows, cols, dropout_mask(rng, rows * cols, d_w)?))
}

/// A copy of `p` with DropConnect applied to `W_h` only.
pub fn drop_recurrent(p: &LstmDirectionParams, rng: &mut Rng, d_w: f64) -> Result<LstmDirectionParams> {
    check_rate("d_w", d_w)?;
    let mut out = p.clone();
    if d_w > 0.0 {
        let scale = sample_weight_scale(rng, p.w_h.rows(), p.w_h.cols(), d_w)?;
        out.w_h.hadamard_assign(&scale);
    }
    Ok(out)
}

/// Standard LSTM update `(h, c) → (h', c')`.
pub fn lstm_cell(x: &[f64], h: &[f64], c: &[f64], p: &LstmDirectionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    p.check()?;
    let hd = p.hidden();
    if x.len() != p.input() || h.len() != hd || c.len() != hd {
        return Err(Error::Shape(format!(
            "lstm_cell: x {} h {} c {} vs D {} H {hd}",
            x.len(),
            h.len(),
            c.len(),
            p.input()
        )));
    }
    let step = step_forward(x, h, c, &p.w_x, &p.w_h, &p.b);
    Ok((step.h, step.c))
}

struct Step {
    /// Activated gates `[i, f, g, o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn step_forward(x: &[f64], h: &[f64], c: &[f64], w_x: &Matrix, w_h: &Matrix, b: &[f64]) -> Step {
    let hd = h.len();
    let mut a = b.to_vec();
    w_x.matvec_acc(x, &mut a);
    w_h.matvec_acc(h, &mut a);
    for v in &mut a[..2 * hd] {
        *v = sigmoid(*v);
    }
    for v in &mut a[2 * hd..3 * hd] {
        *v = v.tanh();
    }
    for v in &mut a[3 * hd..] {
        *v = sigmoid(*v);
    }
    let mut c_new = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    let mut h_new = vec![0.0; hd];
    for j in 0..hd {
        let (i, f, g, o) = (a[j], a[hd + j], a[2 * hd + j], a[3 * hd + j]);
        c_new[j] = f * c[j] + i * g;
        tanh_c[j] = c_new[j].tanh();
        h_new[j] = o * tanh_c[j];
    }
    Step {
        gates: a,
        c: c_new,
        tanh_c,
        h: h_new,
    }
}

/// DropConnect sample for both directions: the dropped `W_h` copies and the
/// scales used to produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedRecurrent {
    pub fwd_scale: Matrix,
    pub bwd_scale: Matrix,
    fwd_w_h: Matrix,
    bwd_w_h: Matrix,
}

impl DroppedRecurrent {
    pub fn new(params: &EncoderParams, fwd_scale: Matrix, bwd_scale: Matrix) -> Result<Self> {
        if fwd_scale.shape() != params.fwd.w_h.shape() || bwd_scale.shape() != params.bwd.w_h.shape() {
            return Err(Error::Shape("DropConnect scale does not match W_h".into()));
        }
        let mut fwd_w_h = params.fwd.w_h.clone();
        fwd_w_h.hadamard_assign(&fwd_scale);
        let mut bwd_w_h = params.bwd.w_h.clone();
        bwd_w_h.hadamard_assign(&bwd_scale);
        Ok(DroppedRecurrent {
            fwd_scale,
            bwd_scale,
            fwd_w_h,
            bwd_w_h,
        })
    }

    pub fn sample(params: &EncoderParams, rng: &mut Rng, d_w: f64) -> Result<Self> {
        let (r, c) = params.fwd.w_h.shape();
        let fwd = sample_weight_scale(rng, r, c, d_w)?;
        let bwd = sample_weight_scale(rng, r, c, d_w)?;
        Self::new(params, fwd, bwd)
    }

    /// Maps gradients taken w.r.t. the dropped `W_h` back onto the originals.
    pub fn apply_to_grads(&self, grads: &mut EncoderParams) {
        grads.fwd.w_h.hadamard_assign(&self.fwd_scale);
        grads.bwd.w_h.hadamard_assign(&self.bwd_scale);
    }

    /// The dropped recurrent matrices `(fwd, bwd)`.
    pub fn dropped_w_h(&self) -> (&Matrix, &Matrix) {
        (&self.fwd_w_h, &self.bwd_w_h)
    }
}

#[derive(Debug, Clone)]
struct DirectionTape {
    /// Indexed by timestep position, not processing order.
    gates: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

/// Everything the backward pass needs from one [`encode`] call.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    hidden: usize,
    /// Inputs after the locked mask.
    inputs: Vec<Vec<f64>>,
    input_mask: Option<Vec<f64>>,
    fwd: DirectionTape,
    bwd: DirectionTape,
    argmax: Vec<usize>,
    dropped: Option<Arc<DroppedRecurrent>>,
}

impl ForwardTape {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Locked mask applied to the inputs (`None` in eval mode).
    pub fn input_mask(&self) -> Option<&[f64]> {
        self.input_mask.as_deref()
    }

    /// Timestep supplying each component of the pooled output.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn dropped(&self) -> Option<&DroppedRecurrent> {
        self.dropped.as_deref()
    }

    /// Smallest gap between the winning and runner-up timestep over all
    /// pooled components; `INFINITY` for single-step sentences.
    pub fn pool_margin(&self) -> f64 {
        let hd = self.hidden;
        let mut margin = f64::INFINITY;
        for j in 0..2 * hd {
            let val = |t: usize| if j < hd { self.fwd.h[t][j] } else { self.bwd.h[t][j - hd] };
            let best = val(self.argmax[j]);
            for t in 0..self.len() {
                if t != self.argmax[j] {
                    margin = margin.min(best - val(t));
                }
            }
        }
        margin
    }

    /// Per-timestep concatenated states `[h_fwd_t; h_bwd_t]`.
    pub fn states(&self) -> Vec<Vec<f64>> {
        self.fwd
            .h
            .iter()
            .zip(&self.bwd.h)
            .map(|(f, b)| f.iter().chain(b).copied().collect())
            .collect()
    }
}

/// Encoder weights for one forward pass, optionally with a DropConnect sample.
#[derive(Debug, Clone)]
pub struct EncoderPass<'a> {
    params: &'a EncoderParams,
    dropped: Option<Arc<DroppedRecurrent>>,
}

impl<'a> EncoderPass<'a> {
    pub fn plain(params: &'a EncoderParams) -> Self {
        EncoderPass { params, dropped: None }
    }

    /// Samples DropConnect at rate `d_w`; a zero rate gives a plain pass.
    pub fn sample(params: &'a EncoderParams, rng: &mut Rng, d_w: f64) -> Result<Self> {
        check_rate("d_w", d_w)?;
        if d_w == 0.0 {
            return Ok(Self::plain(params));
        }
        Ok(Self::with_dropped(params, DroppedRecurrent::sample(params, rng, d_w)?))
    }

    pub fn with_dropped(params: &'a EncoderParams, dropped: DroppedRecurrent) -> Self {
        EncoderPass {
            params,
            dropped: Some(Arc::new(dropped)),
        }
    }

    /// Reuses a sample shared by several passes (one DropConnect draw per batch).
    pub fn with_shared(params: &'a EncoderParams, dropped: Option<Arc<DroppedRecurrent>>) -> Self {
        EncoderPass { params, dropped }
    }

    pub fn params(&self) -> &EncoderParams {
        self.params
    }

    pub fn dropped(&self) -> Option<&DroppedRecurrent> {
        self.dropped.as_deref()
    }

    /// Runs both directions and max-pools the concatenated states.
    pub fn encode(&self, inputs: &[Vec<f64>], input_mask: Option<&[f64]>) -> Result<(Vec<f64>, ForwardTape)> {
        let p = self.params;
        p.check()?;
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty sentence".into()));
        }
        let d = p.input();
        if let Some(bad) = inputs.iter().find(|x| x.len() != d) {
            return Err(Error::Shape(format!("input width {} != encoder width {d}", bad.len())));
        }
        if let Some(m) = input_mask {
            if m.len() != d {
                return Err(Error::Shape(format!("mask width {} != {d}", m.len())));
            }
        }
        let xs: Vec<Vec<f64>> = match input_mask {
            Some(m) => inputs
                .iter()
                .map(|x| x.iter().zip(m).map(|(a, b)| a * b).collect())
                .collect(),
            None => inputs.to_vec(),
        };
        let (fw_h, bw_h) = match &self.dropped {
            Some(dr) => (&dr.fwd_w_h, &dr.bwd_w_h),
            None => (&p.fwd.w_h, &p.bwd.w_h),
        };
        let n = xs.len();
        let fwd = run_direction(&xs, &p.fwd.w_x, fw_h, &p.fwd.b, (0..n).collect());
        let bwd = run_direction(&xs, &p.bwd.w_x, bw_h, &p.bwd.b, (0..n).rev().collect());

        let hd = p.hidden();
        let mut pooled = vec![f64::NEG_INFINITY; 2 * hd];
        let mut argmax = vec![0usize; 2 * hd];
        for t in 0..n {
            for j in 0..hd {
                if fwd.h[t][j] > pooled[j] {
                    pooled[j] = fwd.h[t][j];
                    argmax[j] = t;
                }
                if bwd.h[t][j] > pooled[hd + j] {
                    pooled[hd + j] = bwd.h[t][j];
                    argmax[hd + j] = t;
                }
            }
        }
        if pooled.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output".into()));
        }
        let tape = ForwardTape {
            hidden: hd,
            inputs: xs,
            input_mask: input_mask.map(<[f64]>::to_vec),
            fwd,
            bwd,
            argmax,
            dropped: self.dropped.clone(),
        };
        Ok((pooled, tape))
    }
}

fn run_direction(xs: &[Vec<f64>], w_x: &Matrix, w_h: &Matrix, b: &[f64], order: Vec<usize>) -> DirectionTape {
    let n = xs.len();
    let hd = w_h.cols();
    let mut tape = DirectionTape {
        gates: vec![Vec::new(); n],
        c: vec![Vec::new(); n],
        tanh_c: vec![Vec::new(); n],
        h: vec![Vec::new(); n],
    };
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for t in order {
        let step = step_forward(&xs[t], &h, &c, w_x, w_h, b);
        h.clone_from(&step.h);
        c.clone_from(&step.c);
        tape.gates[t] = step.gates;
        tape.c[t] = step.c;
        tape.tanh_c[t] = step.tanh_c;
        tape.h[t] = step.h;
    }
    tape
}

/// Encodes one augmented sentence. In train mode a fresh locked mask
/// (rate `d_e`) and DropConnect sample (rate `d_w`) are drawn from `rng`;
/// eval mode is a plain deterministic pass.
pub fn encode(
    sent: &AugmentedSentence,
    params: &EncoderParams,
    reg: &RegularizationConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Vec<f64>, ForwardTape)> {
    reg.validate()?;
    match mode {
        Mode::Eval => EncoderPass::plain(params).encode(&sent.matrix, None),
        Mode::Train => {
            let mask = sample_locked_mask(rng, params.input(), reg.d_e)?;
            let pass = EncoderPass::sample(params, rng, reg.d_w)?;
            pass.encode(&sent.matrix, Some(&mask))
        }
    }
}

/// Accumulates into `grads` the gradient of `grad_hs · h_S` with respect to
/// the weights actually used in the pass (the dropped `W_h` when DropConnect
/// was active). Returns gradients w.r.t. the unmasked inputs.
pub fn backward_accumulate(
    tape: &ForwardTape,
    params: &EncoderParams,
    grad_hs: &[f64],
    grads: &mut EncoderParams,
) -> Result<Vec<Vec<f64>>> {
    let hd = params.hidden();
    if tape.hidden != hd || grad_hs.len() != 2 * hd || tape.inputs[0].len() != params.input() {
        return Err(Error::Shape("tape does not match encoder parameters".into()));
    }
    if grads.hidden() != hd || grads.input() != params.input() {
        return Err(Error::Shape("gradient buffer does not match encoder parameters".into()));
    }
    let n = tape.len();
    let d = params.input();
    let mut dx = vec![vec![0.0; d]; n];

    let mut dh_fwd = vec![vec![0.0; hd]; n];
    let mut dh_bwd = vec![vec![0.0; hd]; n];
    for j in 0..hd {
        dh_fwd[tape.argmax[j]][j] += grad_hs[j];
        dh_bwd[tape.argmax[hd + j]][j] += grad_hs[hd + j];
    }

    let (fw_h, bw_h) = match &tape.dropped {
        Some(dr) => (&dr.fwd_w_h, &dr.bwd_w_h),
        None => (&params.fwd.w_h, &params.bwd.w_h),
    };
    backward_direction(&tape.fwd, &tape.inputs, &params.fwd.w_x, fw_h, &dh_fwd, (0..n).collect(), &mut grads.fwd, &mut dx);
    backward_direction(&tape.bwd, &tape.inputs, &params.bwd.w_x, bw_h, &dh_bwd, (0..n).rev().collect(), &mut grads.bwd, &mut dx);

    if let Some(m) = &tape.input_mask {
        for row in &mut dx {
            for (g, s) in row.iter_mut().zip(m) {
                *g *= s;
            }
        }
    }
    Ok(dx)
}

#[allow(clippy::too_many_arguments)]
fn backward_direction(
    tape: &DirectionTape,
    xs: &[Vec<f64>],
    w_x: &Matrix,
    w_h: &Matrix,
    dh_ext: &[Vec<f64>],
    order: Vec<usize>,
    grads: &mut LstmDirectionParams,
    dx: &mut [Vec<f64>],
) {
    let hd = w_h.cols();
    let zeros = vec![0.0; hd];
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut da = vec![0.0; 4 * hd];
    for k in (0..order.len()).rev() {
        let t = order[k];
        let (c_prev, h_prev) = if k > 0 {
            (&tape.c[order[k - 1]], &tape.h[order[k - 1]])
        } else {
            (&zeros, &zeros)
        };
        let gates = &tape.gates[t];
        let tanh_c = &tape.tanh_c[t];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            let dh = dh_ext[t][j] + dh_next[j];
            let d_o = dh * tanh_c[j];
            let dc = dc_next[j] + dh * o * (1.0 - tanh_c[j] * tanh_c[j]);
            let di = dc * g;
            let dg = dc * i;
            let df = dc * c_prev[j];
            dc_next[j] = dc * f;
            da[j] = di * i * (1.0 - i);
            da[hd + j] = df * f * (1.0 - f);
            da[2 * hd + j] = dg * (1.0 - g * g);
            da[3 * hd + j] = d_o * o * (1.0 - o);
        }
        for (gb, a) in grads.b.iter_mut().zip(&da) {
            *gb += a;
        }
        grads.w_x.outer_acc(&da, &xs[t]);
        grads.w_h.outer_acc(&da, h_prev);
        w_x.matvec_t_acc(&da, &mut dx[t]);
        dh_next.fill(0.0);
        w_h.matvec_t_acc(&da, &mut dh_next);
    }
}

/// Exact gradients of `grad_hs · h_S` w.r.t. the encoder parameters and the
/// inputs, honouring the masks and DropConnect sample recorded on the tape.
pub fn encode_backward(
    tape: &ForwardTape,
    params: &EncoderParams,
    grad_hs: &[f64],
) -> Result<(EncoderParams, Vec<Vec<f64>>)> {
    let mut grads = params.zeros_like();
    let dx = backward_accumulate(tape, params, grad_hs, &mut grads)?;
    if let Some(dr) = &tape.dropped {
        dr.apply_to_grads(&mut grads);
    }
    Ok((grads, dx))
}
