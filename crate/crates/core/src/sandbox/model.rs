//! Pairwise ranker with an encoder `f`, a linear relevance head `g`, and an
//! adversarial head `h` attached to the encoder output through a gradient
//! reversal layer. Parameters live in one flat vector so that optimizers,
//! checkpoints and finite-difference checks can treat them uniformly.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse input vector: `(index, value)` pairs.
pub type Sparse = [(u32, f64)];

/// Identity on the way forward, `-λ` times the gradient on the way back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReversal {
    pub lambda: f64,
}

impl GradientReversal {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("GRL scale must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn forward<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        x
    }

    pub fn backward(&self, upstream: &[f64]) -> Vec<f64> {
        upstream.iter().map(|g| -self.lambda * g).collect()
    }

    fn backward_into(&self, upstream: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(upstream) {
            *o += -self.lambda * g;
        }
    }
}

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Length of the concatenated query/document input.
    pub input: usize,
    pub hidden: usize,
    /// Width of the interaction embedding `z`.
    pub embed: usize,
    /// Hidden width of the adversarial head.
    pub adv_hidden: usize,
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub dims: Dims,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wg: usize,
    bg: usize,
    u1: usize,
    c1: usize,
    u2: usize,
    c2: usize,
    len: usize,
}

impl Layout {
    pub fn new(dims: Dims) -> Self {
        let Dims {
            input: d,
            hidden: h,
            embed: e,
            adv_hidden: a,
        } = dims;
        let w1 = 0;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        let b2 = w2 + e * h;
        let wg = b2 + e;
        let bg = wg + e;
        let u1 = bg + 1;
        let c1 = u1 + a * e;
        let u2 = c1 + a;
        let c2 = u2 + 2 * a;
        let len = c2 + 2;
        Self {
            dims,
            w1,
            b1,
            w2,
            b2,
            wg,
            bg,
            u1,
            c1,
            u2,
            c2,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn encoder(&self) -> Range<usize> {
        self.w1..self.wg
    }

    pub fn utility(&self) -> Range<usize> {
        self.wg..self.u1
    }

    pub fn adversary(&self) -> Range<usize> {
        self.u1..self.len
    }
}

/// Which loss terms contribute and which parameter blocks receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Hinge loss into `f` and `g`.
    Utility,
    /// Cross-entropy into `h` only; `f` and `g` are frozen.
    Adversary,
    /// Both terms; the adversary's gradient reaches `f` through the GRL.
    Joint,
}

/// One training pair: the query concatenated with a relevant and with a
/// non-relevant document, each with its protected label.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvDataPoint {
    pub pos: Vec<(u32, f64)>,
    pub neg: Vec<(u32, f64)>,
    pub pos_label: u8,
    pub neg_label: u8,
}

impl AdvDataPoint {
    pub fn gendered(&self) -> bool {
        self.pos_label == 1 || self.neg_label == 1
    }
}

/// Loss terms of a batch, averaged over pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub hinge: f64,
    pub adversary: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.hinge + self.adversary
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub h1: Vec<f64>,
    pub z: Vec<f64>,
    pub score: f64,
    pub adv_hidden: Vec<f64>,
    pub probs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvModel {
    pub dims: Dims,
    pub grl: f64,
    pub params: Vec<f64>,
}

fn xavier<R: Rng>(rng: &mut R, out: &mut [f64], fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out {
        *w = rng.random_range(-bound..bound);
    }
}

pub(crate) fn softmax2(o: [f64; 2]) -> [f64; 2] {
    let m = o[0].max(o[1]);
    let e0 = (o[0] - m).exp();
    let e1 = (o[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// The adversarial head's architecture, shared with freshly trained probes:
/// tanh hidden layer, then a 2-way softmax.
pub(crate) struct Head {
    pub embed: usize,
    pub hidden: usize,
}

impl Head {
    pub fn len(&self) -> usize {
        self.hidden * self.embed + self.hidden + 2 * self.hidden + 2
    }

    pub fn init<R: Rng>(&self, rng: &mut R, p: &mut [f64]) {
        let (e, a) = (self.embed, self.hidden);
        xavier(rng, &mut p[..a * e], e, a);
        p[a * e..a * e + a].fill(0.0);
        let u2 = a * e + a;
        xavier(rng, &mut p[u2..u2 + 2 * a], a, 2);
        p[u2 + 2 * a..].fill(0.0);
    }

    pub fn forward(&self, p: &[f64], z: &[f64]) -> (Vec<f64>, [f64; 2]) {
        let (e, a) = (self.embed, self.hidden);
        let (u1, rest) = p.split_at(a * e);
        let (c1, rest) = rest.split_at(a);
        let (u2, c2) = rest.split_at(2 * a);
        let hidden: Vec<f64> = (0..a)
            .map(|i| {
                let row = &u1[i * e..(i + 1) * e];
                (c1[i] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()).tanh()
            })
            .collect();
        let mut o = [c2[0], c2[1]];
        for (k, ok) in o.iter_mut().enumerate() {
            *ok += u2[k * a..(k + 1) * a].iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>();
        }
        (hidden, softmax2(o))
    }

    /// Adds `scale ·` d CE / d params into `grad` and returns `scale ·` d CE / d z.
    pub fn backward(
        &self,
        p: &[f64],
        z: &[f64],
        hidden: &[f64],
        probs: [f64; 2],
        label: u8,
        scale: f64,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let (e, a) = (self.embed, self.hidden);
        let u2_off = a * e + a;
        let c2_off = u2_off + 2 * a;
        let d_o = [
            scale * (probs[0] - f64::from(label == 0)),
            scale * (probs[1] - f64::from(label == 1)),
        ];
        let mut d_hidden = vec![0.0; a];
        for k in 0..2 {
            grad[c2_off + k] += d_o[k];
            for i in 0..a {
                grad[u2_off + k * a + i] += d_o[k] * hidden[i];
                d_hidden[i] += d_o[k] * p[u2_off + k * a + i];
            }
        }
        let mut dz = vec![0.0; e];
        for i in 0..a {
            let dv = d_hidden[i] * (1.0 - hidden[i] * hidden[i]);
            grad[a * e + i] += dv;
            for j in 0..e {
                grad[i * e + j] += dv * z[j];
                dz[j] += dv * p[i * e + j];
            }
        }
        dz
    }
}

pub(crate) fn cross_entropy(probs: [f64; 2], label: u8) -> f64 {
    -probs[usize::from(label)].max(f64::MIN_POSITIVE).ln()
}

impl AdvModel {
    /// Randomly initialized model (Xavier-uniform weights, zero biases).
    pub fn new<R: Rng>(dims: Dims, grl: f64, rng: &mut R) -> Result<Self> {
        GradientReversal::new(grl)?;
        if dims.input == 0 || dims.hidden == 0 || dims.embed == 0 || dims.adv_hidden == 0 {
            return Err(Error::Config(format!("layer widths must be positive: {dims:?}")));
        }
        let l = Layout::new(dims);
        let mut params = vec![0.0; l.len()];
        xavier(rng, &mut params[l.w1..l.b1], dims.input, dims.hidden);
        xavier(rng, &mut params[l.w2..l.b2], dims.hidden, dims.embed);
        xavier(rng, &mut params[l.wg..l.bg], dims.embed, 1);
        l.head().init(rng, &mut params[l.adversary()]);
        Ok(Self { dims, grl, params })
    }

    /// Rebuilds a model from a flat parameter vector.
    pub fn from_params(dims: Dims, grl: f64, params: Vec<f64>) -> Result<Self> {
        GradientReversal::new(grl)?;
        let expected = Layout::new(dims).len();
        if params.len() != expected {
            return Err(Error::Data(format!(
                "expected {expected} parameters for {dims:?}, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("model has non-finite parameters".into()));
        }
        Ok(Self { dims, grl, params })
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self.dims)
    }

    pub fn grl(&self) -> GradientReversal {
        GradientReversal { lambda: self.grl }
    }

    /// Parameter ranges of `f`, `g` and `h` in [`AdvModel::params`].
    pub fn blocks(&self) -> [Range<usize>; 3] {
        let l = self.layout();
        [l.encoder(), l.utility(), l.adversary()]
    }

    /// Encoder output `z = f(q, d)`.
    pub fn embed(&self, x: &Sparse) -> Vec<f64> {
        self.encode(x).1
    }

    fn encode(&self, x: &Sparse) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout();
        let Dims {
            input: d,
            hidden: h,
            embed: e,
            ..
        } = self.dims;
        let p = &self.params;
        let mut h1: Vec<f64> = p[l.b1..l.b1 + h].to_vec();
        for (i, hi) in h1.iter_mut().enumerate() {
            let row = &p[l.w1 + i * d..l.w1 + (i + 1) * d];
            for &(j, v) in x {
                *hi += row[j as usize] * v;
            }
            *hi = hi.tanh();
        }
        let z: Vec<f64> = (0..e)
            .map(|k| {
                let row = &p[l.w2 + k * h..l.w2 + (k + 1) * h];
                (p[l.b2 + k] + row.iter().zip(&h1).map(|(w, a)| w * a).sum::<f64>()).tanh()
            })
            .collect();
        (h1, z)
    }

    /// Relevance score `g(f(q, d))`.
    pub fn score(&self, x: &Sparse) -> f64 {
        let z = self.embed(x);
        self.score_of(&z)
    }

    fn score_of(&self, z: &[f64]) -> f64 {
        let l = self.layout();
        self.params[l.bg] + self.params[l.wg..l.bg].iter().zip(z).map(|(w, a)| w * a).sum::<f64>()
    }

    /// Adversary class probabilities `h(grl(z))`.
    pub fn adversary_probs(&self, z: &[f64]) -> [f64; 2] {
        let l = self.layout();
        l.head().forward(&self.params[l.adversary()], self.grl().forward(z)).1
    }

    pub fn forward(&self, x: &Sparse) -> Forward {
        let l = self.layout();
        let (h1, z) = self.encode(x);
        let score = self.score_of(&z);
        let (adv_hidden, probs) = l.head().forward(&self.params[l.adversary()], &z);
        Forward {
            h1,
            z,
            score,
            adv_hidden,
            probs,
        }
    }

    /// Loss terms averaged over the batch, regardless of objective.
    pub fn loss(&self, batch: &[AdvDataPoint], margin: f64) -> Result<LossTerms> {
        if batch.is_empty() {
            return Err(Error::Invalid("loss of an empty batch".into()));
        }
        let mut t = LossTerms::default();
        for pt in batch {
            let fp = self.forward(&pt.pos);
            let fn_ = self.forward(&pt.neg);
            t.hinge += (margin - (fp.score - fn_.score)).max(0.0);
            t.adversary += cross_entropy(fp.probs, pt.pos_label) + cross_entropy(fn_.probs, pt.neg_label);
        }
        let n = batch.len() as f64;
        t.hinge /= n;
        t.adversary /= n;
        if !t.total().is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        Ok(t)
    }

    /// Gradient of the batch loss under `objective`, averaged over pairs, and
    /// the loss terms it was computed at.
    pub fn gradient(
        &self,
        batch: &[AdvDataPoint],
        margin: f64,
        objective: Objective,
    ) -> Result<(Vec<f64>, LossTerms)> {
        if batch.is_empty() {
            return Err(Error::Invalid("gradient of an empty batch".into()));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut t = LossTerms::default();
        let scale = 1.0 / batch.len() as f64;
        for pt in batch {
            let fp = self.forward(&pt.pos);
            let fn_ = self.forward(&pt.neg);
            let slack = margin - (fp.score - fn_.score);
            t.hinge += slack.max(0.0);
            t.adversary += cross_entropy(fp.probs, pt.pos_label) + cross_entropy(fn_.probs, pt.neg_label);
            let ds = if objective != Objective::Adversary && slack > 0.0 {
                scale
            } else {
                0.0
            };
            self.backward_one(&pt.pos, &fp, -ds, pt.pos_label, scale, objective, &mut grad);
            self.backward_one(&pt.neg, &fn_, ds, pt.neg_label, scale, objective, &mut grad);
        }
        t.hinge *= scale;
        t.adversary *= scale;
        if !t.total().is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("loss or gradient is not finite".into()));
        }
        Ok((grad, t))
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_one(
        &self,
        x: &Sparse,
        fw: &Forward,
        d_score: f64,
        label: u8,
        adv_scale: f64,
        objective: Objective,
        grad: &mut [f64],
    ) {
        let l = self.layout();
        let Dims {
            input: d,
            hidden: h,
            embed: e,
            ..
        } = self.dims;
        let p = &self.params;

        let mut dz = vec![0.0; e];
        if objective != Objective::Adversary {
            for k in 0..e {
                grad[l.wg + k] += d_score * fw.z[k];
                dz[k] = d_score * p[l.wg + k];
            }
            grad[l.bg] += d_score;
        }
        if objective != Objective::Utility {
            let adv = l.adversary();
            let dz_adv = l.head().backward(
                &p[adv.clone()],
                &fw.z,
                &fw.adv_hidden,
                fw.probs,
                label,
                adv_scale,
                &mut grad[adv],
            );
            if objective == Objective::Adversary {
                return;
            }
            self.grl().backward_into(&dz_adv, &mut dz);
        }

        let mut dh1 = vec![0.0; h];
        for k in 0..e {
            let du = dz[k] * (1.0 - fw.z[k] * fw.z[k]);
            grad[l.b2 + k] += du;
            for i in 0..h {
                grad[l.w2 + k * h + i] += du * fw.h1[i];
                dh1[i] += du * p[l.w2 + k * h + i];
            }
        }
        for i in 0..h {
            let du = dh1[i] * (1.0 - fw.h1[i] * fw.h1[i]);
            grad[l.b1 + i] += du;
            let row = l.w1 + i * d;
            for &(j, v) in x {
                grad[row + j as usize] += du * v;
            }
        }
    }
}

impl Layout {
    pub(crate) fn head(&self) -> Head {
        Head {
            embed: self.dims.embed,
            hidden: self.dims.adv_hidden,
        }
    }
}
