//! Pair composition and the fully connected scoring head.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::TaskKind;
use crate::encoder::{check_rate, dropout_mask, Mode};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Composed pair representation.
///
/// Classification tasks use `[h1; h2; |h1−h2|; h1∘h2]`, relatedness uses
/// `[|h1−h2|; h1∘h2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchVector {
    pub values: Vec<f64>,
}

/// Length of the composed vector for encodings of width `enc_width`.
pub fn match_width(enc_width: usize, task: TaskKind) -> usize {
    if task.is_classification() {
        4 * enc_width
    } else {
        2 * enc_width
    }
}

pub fn compose(h1: &[f64], h2: &[f64], task: TaskKind) -> Result<MatchVector> {
    if h1.len() != h2.len() {
        return Err(Error::Shape(format!("compose: {} vs {}", h1.len(), h2.len())));
    }
    let mut v = Vec::with_capacity(match_width(h1.len(), task));
    if task.is_classification() {
        v.extend_from_slice(h1);
        v.extend_from_slice(h2);
    }
    v.extend(h1.iter().zip(h2).map(|(a, b)| (a - b).abs()));
    v.extend(h1.iter().zip(h2).map(|(a, b)| a * b));
    Ok(MatchVector { values: v })
}

/// Gradients of [`compose`] w.r.t. both encodings. The `|·|` subgradient is 0 at equality.
pub fn compose_backward(h1: &[f64], h2: &[f64], task: TaskKind, grad_v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = h1.len();
    if h2.len() != n || grad_v.len() != match_width(n, task) {
        return Err(Error::Shape("compose_backward: mismatched lengths".into()));
    }
    let (mut g1, mut g2) = (vec![0.0; n], vec![0.0; n]);
    let rest = if task.is_classification() {
        g1.copy_from_slice(&grad_v[..n]);
        g2.copy_from_slice(&grad_v[n..2 * n]);
        &grad_v[2 * n..]
    } else {
        grad_v
    };
    let (g_abs, g_prod) = rest.split_at(n);
    for j in 0..n {
        let diff = h1[j] - h2[j];
        let s = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        g1[j] += s * g_abs[j] + h2[j] * g_prod[j];
        g2[j] += -s * g_abs[j] + h1[j] * g_prod[j];
    }
    Ok((g1, g2))
}

/// Maps the scalar head output to a relatedness score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreFn {
    /// `min(exp(z), 1)`
    #[default]
    MinExp,
    /// `exp(-|z|)`
    ExpNegAbs,
}

impl ScoreFn {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            ScoreFn::MinExp => z.exp().min(1.0),
            ScoreFn::ExpNegAbs => (-z.abs()).exp(),
        }
    }

    /// Derivative; zero on the clamped side of `MinExp`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            ScoreFn::MinExp if z > 0.0 => 0.0,
            ScoreFn::MinExp => z.exp(),
            ScoreFn::ExpNegAbs if z > 0.0 => -(-z).exp(),
            ScoreFn::ExpNegAbs if z < 0.0 => z.exp(),
            ScoreFn::ExpNegAbs => 0.0,
        }
    }
}

impl FromStr for ScoreFn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-exp" | "exp-clamp" => Ok(ScoreFn::MinExp),
            "exp-neg-abs" => Ok(ScoreFn::ExpNegAbs),
            _ => Err(Error::InvalidArgument(format!("unknown score function '{s}'"))),
        }
    }
}

impl fmt::Display for ScoreFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreFn::MinExp => "min-exp",
            ScoreFn::ExpNegAbs => "exp-neg-abs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `F × V`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `C × F`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(input: usize, hidden: usize, outputs: usize) -> Self {
        HeadParams {
            w1: Matrix::zeros(hidden, input),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(outputs, hidden),
            b2: vec![0.0; outputs],
        }
    }

    /// Uniform `±1/√fan_in` weights, zero biases.
    pub fn init(input: usize, hidden: usize, outputs: usize, rng: &mut Rng) -> Self {
        HeadParams {
            w1: Matrix::uniform(hidden, input, 1.0 / (input as f64).sqrt(), rng),
            b1: vec![0.0; hidden],
            w2: Matrix::uniform(outputs, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            b2: vec![0.0; outputs],
        }
    }

    pub fn input(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w2.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input(), self.hidden(), self.outputs())
    }

    pub fn check(&self) -> Result<()> {
        let f = self.hidden();
        if self.b1.len() != f || self.w2.cols() != f || self.b2.len() != self.outputs() {
            return Err(Error::Shape("head parameter shapes are inconsistent".into()));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("head.W1", self.w1.as_slice()),
            ("head.b1", &self.b1),
            ("head.W2", self.w2.as_slice()),
            ("head.b2", &self.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 4] {
        [
            ("head.W1", self.w1.as_mut_slice()),
            ("head.b1", &mut self.b1),
            ("head.W2", self.w2.as_mut_slice()),
            ("head.b2", &mut self.b2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelOutput {
    Logits(Vec<f64>),
    Score(f64),
}

impl ModelOutput {
    /// Arg-max class (lowest index on ties) or `None` for scores.
    pub fn predicted_class(&self) -> Option<usize> {
        match self {
            ModelOutput::Logits(z) => {
                let mut best = 0;
                for (i, v) in z.iter().enumerate() {
                    if *v > z[best] {
                        best = i;
                    }
                }
                Some(best)
            }
            ModelOutput::Score(_) => None,
        }
    }

    pub fn score(&self) -> Option<f64> {
        match self {
            ModelOutput::Score(s) => Some(*s),
            ModelOutput::Logits(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadTape {
    task: TaskKind,
    score_fn: ScoreFn,
    v: Vec<f64>,
    pre: Vec<f64>,
    mask: Option<Vec<f64>>,
    /// Hidden activations after ReLU and dropout.
    hidden: Vec<f64>,
    z: Vec<f64>,
}

impl HeadTape {
    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn pre_activations(&self) -> &[f64] {
        &self.pre
    }

    pub fn output_pre_activation(&self) -> &[f64] {
        &self.z
    }

    pub fn dropout_mask(&self) -> Option<&[f64]> {
        self.mask.as_deref()
    }
}

/// `ReLU(W1·v + b1)`, inverted dropout at `d_f` in train mode, then
/// `W2·a + b2` as logits or through the score function.
pub fn head_forward(
    v: &MatchVector,
    p: &HeadParams,
    d_f: f64,
    mode: Mode,
    rng: &mut Rng,
    task: TaskKind,
    score_fn: ScoreFn,
) -> Result<(ModelOutput, HeadTape)> {
    check_rate("d_f", d_f)?;
    let mask = match mode {
        Mode::Train if d_f > 0.0 => Some(dropout_mask(rng, p.hidden(), d_f)?),
        _ => None,
    };
    head_forward_with_mask(v, p, mask, task, score_fn)
}

/// [`head_forward`] with an explicit (possibly absent) dropout mask.
pub fn head_forward_with_mask(
    v: &MatchVector,
    p: &HeadParams,
    mask: Option<Vec<f64>>,
    task: TaskKind,
    score_fn: ScoreFn,
) -> Result<(ModelOutput, HeadTape)> {
    p.check()?;
    if v.values.len() != p.input() {
        return Err(Error::Shape(format!("match vector {} != head input {}", v.values.len(), p.input())));
    }
    if p.outputs() != task.num_outputs() {
        return Err(Error::Shape(format!("head has {} outputs, task {task} needs {}", p.outputs(), task.num_outputs())));
    }
    if mask.as_ref().is_some_and(|m| m.len() != p.hidden()) {
        return Err(Error::Shape("head dropout mask width".into()));
    }
    let mut pre = p.b1.clone();
    p.w1.matvec_acc(&v.values, &mut pre);
    let mut hidden: Vec<f64> = pre.iter().map(|x| x.max(0.0)).collect();
    if let Some(m) = &mask {
        for (a, s) in hidden.iter_mut().zip(m) {
            *a *= s;
        }
    }
    let mut z = p.b2.clone();
    p.w2.matvec_acc(&hidden, &mut z);
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("head output".into()));
    }
    let out = if task.is_classification() {
        ModelOutput::Logits(z.clone())
    } else {
        ModelOutput::Score(score_fn.apply(z[0]))
    };
    let tape = HeadTape {
        task,
        score_fn,
        v: v.values.clone(),
        pre,
        mask,
        hidden,
        z,
    };
    Ok((out, tape))
}

/// Accumulates parameter gradients into `grads` and returns `dL/dv`.
/// `upstream` is `dL/dlogits` for classification or `[dL/dscore]` for relatedness.
pub fn head_backward_accumulate(tape: &HeadTape, p: &HeadParams, upstream: &[f64], grads: &mut HeadParams) -> Result<Vec<f64>> {
    if upstream.len() != p.outputs() || tape.v.len() != p.input() || tape.pre.len() != p.hidden() {
        return Err(Error::Shape("head tape does not match parameters".into()));
    }
    let dz: Vec<f64> = if tape.task.is_classification() {
        upstream.to_vec()
    } else {
        vec![upstream[0] * tape.score_fn.derivative(tape.z[0])]
    };
    for (g, d) in grads.b2.iter_mut().zip(&dz) {
        *g += d;
    }
    grads.w2.outer_acc(&dz, &tape.hidden);
    let mut da = vec![0.0; p.hidden()];
    p.w2.matvec_t_acc(&dz, &mut da);
    for (k, d) in da.iter_mut().enumerate() {
        let relu = if tape.pre[k] > 0.0 { 1.0 } else { 0.0 };
        let keep = tape.mask.as_ref().map_or(1.0, |m| m[k]);
        *d *= relu * keep;
    }
    for (g, d) in grads.b1.iter_mut().zip(&da) {
        *g += d;
    }
    grads.w1.outer_acc(&da, &tape.v);
    let mut dv = vec![0.0; p.input()];
    p.w1.matvec_t_acc(&da, &mut dv);
    Ok(dv)
}

pub fn head_backward(tape: &HeadTape, p: &HeadParams, upstream: &[f64]) -> Result<(HeadParams, Vec<f64>)> {
    let mut grads = p.zeros_like();
    let dv = head_backward_accumulate(tape, p, upstream, &mut grads)?;
    Ok((grads, dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng as _;

    #[test]
    fn compose_identity_relatedness() {
        let h = [0.3, -1.2, 2.0];
        let v = compose(&h, &h, TaskKind::Relatedness).unwrap();
        assert_eq!(&v.values[..3], &[0.0; 3]);
        let squares: Vec<f64> = h.iter().map(|a| a * a).collect();
        assert_eq!(&v.values[3..], squares.as_slice());
    }

    #[test]
    fn compose_entailment_arithmetic() {
        let v = compose(&[1.0, 2.0], &[3.0, 1.0], TaskKind::Entailment3).unwrap();
        assert_eq!(v.values, vec![1.0, 2.0, 3.0, 1.0, 2.0, 1.0, 3.0, 2.0]);
        assert!(compose(&[1.0], &[1.0, 2.0], TaskKind::Entailment3).is_err());
    }

    #[test]
    fn compose_matches_scalar_loop() {
        let mut rng = stream(3, "t", &[]);
        for task in [TaskKind::Paraphrase2, TaskKind::Relatedness] {
            let h1: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let h2: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v = compose(&h1, &h2, task).unwrap();
            let mut expected = Vec::new();
            if task.is_classification() {
                for j in 0..7 {
                    expected.push(h1[j]);
                }
                for j in 0..7 {
                    expected.push(h2[j]);
                }
            }
            for j in 0..7 {
                expected.push(if h1[j] > h2[j] { h1[j] - h2[j] } else { h2[j] - h1[j] });
            }
            for j in 0..7 {
                expected.push(h1[j] * h2[j]);
            }
            assert_eq!(v.values, expected);
        }
    }

    #[test]
    fn zero_head_scores_one() {
        let p = HeadParams::zeros(4, 3, 1);
        let v = MatchVector { values: vec![0.5; 4] };
        let (out, _) = head_forward(&v, &p, 0.0, Mode::Eval, &mut stream(0, "x", &[]), TaskKind::Relatedness, ScoreFn::MinExp).unwrap();
        assert_eq!(out, ModelOutput::Score(1.0));
    }

    #[test]
    fn score_function_values() {
        assert_relative_eq!(ScoreFn::MinExp.apply(-(2f64.ln())), 0.5, epsilon = 1e-15);
        assert_eq!(ScoreFn::MinExp.apply(2.0), 1.0);
        assert_eq!(ScoreFn::MinExp.derivative(2.0), 0.0);
        assert_relative_eq!(ScoreFn::MinExp.derivative(-1.0), (-1f64).exp());
        assert_relative_eq!(ScoreFn::ExpNegAbs.apply(-1.0), (-1f64).exp());
        assert_relative_eq!(ScoreFn::ExpNegAbs.derivative(1.0), -(-1f64).exp());
    }

    #[test]
    fn head_shape_errors() {
        let p = HeadParams::zeros(4, 3, 3);
        let v = MatchVector { values: vec![0.0; 5] };
        let mut rng = stream(0, "x", &[]);
        assert!(head_forward(&v, &p, 0.0, Mode::Eval, &mut rng, TaskKind::Entailment3, ScoreFn::MinExp).is_err());
        let v = MatchVector { values: vec![0.0; 4] };
        assert!(head_forward(&v, &p, 0.0, Mode::Eval, &mut rng, TaskKind::Paraphrase2, ScoreFn::MinExp).is_err());
        assert!(head_forward(&v, &p, 1.0, Mode::Train, &mut rng, TaskKind::Entailment3, ScoreFn::MinExp).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = stream(1, "x", &[]);
        let p = HeadParams::init(6, 5, 3, &mut rng);
        let v = MatchVector { values: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (_, tape) = head_forward(&v, &p, 0.3, Mode::Train, &mut rng, TaskKind::Entailment3, ScoreFn::MinExp).unwrap();
        let (g, dv) = head_backward(&tape, &p, &[0.0; 3]).unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|&x| x == 0.0)));
        assert!(dv.iter().all(|&x| x == 0.0));
        assert!(head_backward(&tape, &p, &[0.0; 2]).is_err());
    }

    /// In the smooth region the head is an affine chain; check against
    /// closed-form values for a single-unit network.
    #[test]
    fn smooth_region_affine_chain() {
        let p = HeadParams {
            w1: Matrix::from_vec(1, 2, vec![0.5, 0.25]),
            b1: vec![0.1],
            w2: Matrix::from_vec(1, 1, vec![-2.0]),
            b2: vec![0.3],
        };
        let v = MatchVector { values: vec![1.0, 2.0] };
        let (out, tape) = head_forward_with_mask(&v, &p, None, TaskKind::Relatedness, ScoreFn::MinExp).unwrap();
        let pre = 0.5 + 0.5 + 0.1;
        let z: f64 = -2.0 * pre + 0.3;
        assert_relative_eq!(out.score().unwrap(), z.exp(), epsilon = 1e-15);
        let (g, dv) = head_backward(&tape, &p, &[1.0]).unwrap();
        let dz = z.exp();
        assert_relative_eq!(g.b2[0], dz, epsilon = 1e-15);
        assert_relative_eq!(g.w2.get(0, 0), dz * pre, epsilon = 1e-15);
        assert_relative_eq!(g.b1[0], dz * -2.0, epsilon = 1e-15);
        assert_relative_eq!(g.w1.get(0, 1), dz * -2.0 * 2.0, epsilon = 1e-15);
        assert_relative_eq!(dv[0], dz * -2.0 * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn eval_head_ignores_rng_and_rate() {
        let mut rng = stream(2, "x", &[]);
        let p = HeadParams::init(6, 5, 2, &mut rng);
        let v = MatchVector { values: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (a, _) = head_forward(&v, &p, 0.0, Mode::Eval, &mut stream(1, "a", &[]), TaskKind::Paraphrase2, ScoreFn::MinExp).unwrap();
        let (b, _) = head_forward(&v, &p, 0.4, Mode::Eval, &mut stream(2, "b", &[]), TaskKind::Paraphrase2, ScoreFn::MinExp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predicted_class_breaks_ties_low() {
        assert_eq!(ModelOutput::Logits(vec![1.0, 3.0, 3.0]).predicted_class(), Some(1));
        assert_eq!(ModelOutput::Score(0.2).predicted_class(), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn compose_swap_symmetry(h1 in prop::collection::vec(-3.0f64..3.0, 1..6), seed in 0u64..100) {
                let mut rng = stream(seed, "p", &[]);
                let h2: Vec<f64> = h1.iter().map(|_| rng.gen_range(-3.0..3.0)).collect();
                let n = h1.len();
                let a = compose(&h1, &h2, TaskKind::Relatedness).unwrap();
                let b = compose(&h2, &h1, TaskKind::Relatedness).unwrap();
                prop_assert_eq!(&a, &b);
                let a = compose(&h1, &h2, TaskKind::Entailment3).unwrap();
                let b = compose(&h2, &h1, TaskKind::Entailment3).unwrap();
                prop_assert_eq!(&a.values[2 * n..], &b.values[2 * n..]);
                prop_assert_eq!(&a.values[..n], &b.values[n..2 * n]);
                prop_assert!(a.values[2 * n..3 * n].iter().all(|&x| x >= 0.0));
            }

            #[test]
            fn relatedness_score_in_unit_interval(seed in 0u64..500, scale in 0.1f64..50.0) {
                let mut rng = stream(seed, "p", &[]);
                let mut p = HeadParams::init(4, 3, 1, &mut rng);
                for x in p.w2.as_mut_slice() { *x *= scale; }
                let v = MatchVector { values: (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect() };
                for f in [ScoreFn::MinExp, ScoreFn::ExpNegAbs] {
                    let (out, _) = head_forward_with_mask(&v, &p, None, TaskKind::Relatedness, f).unwrap();
                    let s = out.score().unwrap();
                    prop_assert!((0.0..=1.0).contains(&s));
                }
            }
        }
    }
}
