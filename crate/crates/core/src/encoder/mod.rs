//! BERT-style and Conformer encoders over mel frames.
//!
//! Weights live in a [`ParamStore`] keyed `input.*`, `layer.N.<module>.*`
//! and `final_ln.*`. Layer norms carry a learned gain and bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::util::rng;
use crate::Scalar;


pub const LN_EPS: f64 = 1e-5;
/// Additive score for keys outside the valid length.
const MASKED_SCORE: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Bert,
    Conformer,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bert" => Ok(EncoderKind::Bert),
            "conformer" => Ok(EncoderKind::Conformer),
            other => Err(Error::Config(format!("unknown encoder kind `{}`", other))),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Bert => "bert",
            EncoderKind::Conformer => "conformer",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub input_dim: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub conv_kernel: usize,
    /// Relative offsets beyond this share the outermost bias bucket.
    pub max_rel_pos: usize,
    pub token_rate: u32,
    pub max_input_seconds: u32,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Conformer,
            input_dim: 128,
            d_model: 128,
            layers: 4,
            heads: 4,
            ffn_mult: 4,
            conv_kernel: 31,
            max_rel_pos: 128,
            token_rate: 25,
            max_input_seconds: 5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.d_model == 0 || self.layers == 0 || self.heads == 0 || self.ffn_mult == 0 {
            return bad("encoder dimensions must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads));
        }
        if self.kind == EncoderKind::Conformer && self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel {} must be odd", self.conv_kernel));
        }
        if self.token_rate == 0 || self.max_input_seconds == 0 {
            return bad("token_rate and max_input_seconds must be positive".into());
        }
        Ok(())
    }

    pub fn max_frames(&self) -> usize {
        (self.token_rate * self.max_input_seconds) as usize
    }

    fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_mult
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Xavier-uniform with the given fans.
    Xavier(usize, usize),
    Zeros,
    Ones,
}

fn linear_specs(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, fan_in: usize, fan_out: usize) {
    out.push((format!("{name}.weight"), vec![fan_in, fan_out], Init::Xavier(fan_in, fan_out)));
    out.push((format!("{name}.bias"), vec![fan_out], Init::Zeros));
}

fn ln_specs(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, d: usize) {
    out.push((format!("{name}.gamma"), vec![d], Init::Ones));
    out.push((format!("{name}.beta"), vec![d], Init::Zeros));
}

fn ffn_specs(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, cfg: &EncoderConfig) {
    ln_specs(out, &format!("{name}.ln"), cfg.d_model);
    linear_specs(out, &format!("{name}.w1"), cfg.d_model, cfg.ffn_dim());
    linear_specs(out, &format!("{name}.w2"), cfg.ffn_dim(), cfg.d_model);
}

fn attn_specs(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, cfg: &EncoderConfig) {
    let d = cfg.d_model;
    ln_specs(out, &format!("{name}.ln"), d);
    for p in ["q", "k", "v", "o"] {
        linear_specs(out, &format!("{name}.{p}"), d, d);
    }
    // a key bias shifts every score of a query equally, so softmax ignores it
    out.retain(|(n, _, _)| n != &format!("{name}.k.bias"));
    if cfg.kind == EncoderKind::Conformer {
        out.push((format!("{name}.rel_bias"), vec![2 * cfg.max_rel_pos + 1, cfg.heads], Init::Zeros));
    }
}

/// Name, shape and initializer of every parameter, in creation order.
fn param_specs(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d_model;
    let mut s = Vec::new();
    linear_specs(&mut s, "input", cfg.input_dim, d);
    for l in 0..cfg.layers {
        let p = format!("layer.{l}");
        match cfg.kind {
            EncoderKind::Bert => {
                attn_specs(&mut s, &format!("{p}.attn"), cfg);
                ffn_specs(&mut s, &format!("{p}.ffn"), cfg);
            }
            EncoderKind::Conformer => {
                ffn_specs(&mut s, &format!("{p}.ffn1"), cfg);
                attn_specs(&mut s, &format!("{p}.attn"), cfg);
                ln_specs(&mut s, &format!("{p}.conv.ln"), d);
                linear_specs(&mut s, &format!("{p}.conv.pw1"), d, 2 * d);
                let k = cfg.conv_kernel;
                s.push((format!("{p}.conv.dw.weight"), vec![k, d], Init::Xavier(k, k)));
                s.push((format!("{p}.conv.dw.bias"), vec![d], Init::Zeros));
                linear_specs(&mut s, &format!("{p}.conv.pw2"), d, d);
                ffn_specs(&mut s, &format!("{p}.ffn2"), cfg);
                ln_specs(&mut s, &format!("{p}.out_ln"), d);
            }
        }
    }
    if cfg.kind == EncoderKind::Bert {
        ln_specs(&mut s, "final_ln", d);
    }
    s
}

/// Closed-form parameter count.
pub fn param_count(cfg: &EncoderConfig) -> usize {
    let (d, f, h) = (cfg.d_model, cfg.ffn_dim(), cfg.heads);
    let ln = 2 * d;
    let ffn = ln + (d * f + f) + (f * d + d);
    let attn = ln + 4 * d * d + 3 * d;
    let input = cfg.input_dim * d + d;
    match cfg.kind {
        EncoderKind::Bert => input + cfg.layers * (attn + ffn) + ln,
        EncoderKind::Conformer => {
            let rel = (2 * cfg.max_rel_pos + 1) * h;
            let conv = ln + (d * 2 * d + 2 * d) + (cfg.conv_kernel * d + d) + (d * d + d);
            input + cfg.layers * (2 * ffn + attn + rel + conv + ln)
        }
    }
}

/// Xavier-uniform weights, zero biases, unit layer-norm gains.
pub fn init_weights<T: Scalar>(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut r = rng(seed);
    let mut p = ParamStore::new();
    for (name, shape, init) in param_specs(cfg) {
        let t = match init {
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::full(&shape, T::one()),
            Init::Xavier(fi, fo) => {
                let b = (6.0 / (fi + fo) as f64).sqrt();
                Tensor::from_fn(&shape, |_| T::of(r.random_range(-b..=b)))
            }
        };
        p.insert(name, t);
    }
    Ok(p)
}

/// Per-layer encoder outputs: the input projection followed by each block.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates<T: Scalar> {
    pub layers: Vec<Tensor<T>>,
}

impl<T: Scalar> HiddenStates<T> {
    pub fn last(&self) -> &Tensor<T> {
        self.layers.last().expect("at least the input projection")
    }
}

/// `[sin | cos]` absolute position table, `t x d`.
pub fn sinusoidal_positions<T: Scalar>(t: usize, d: usize) -> Tensor<T> {
    let half = d / 2;
    Tensor::from_fn(&[t, d], |i| {
        let (pos, j) = ((i / d) as f64, i % d);
        let k = if j < half { j } else { j - half };
        let freq = 1.0 / 10_000f64.powf(2.0 * k as f64 / d as f64);
        T::of(if j < half { (pos * freq).sin() } else if j < 2 * half { (pos * freq).cos() } else { 0.0 })
    })
}

/// Encoder graph on an existing tape.
pub struct EncoderGraph<'a, 't, T: Scalar> {
    cfg: &'a EncoderConfig,
    p: &'a BoundParams<'t, T>,
    tape: &'t Tape<T>,
}

impl<'a, 't, T: Scalar> EncoderGraph<'a, 't, T> {
    pub fn new(cfg: &'a EncoderConfig, p: &'a BoundParams<'t, T>, tape: &'t Tape<T>) -> Self {
        Self { cfg, p, tape }
    }

    fn linear(&self, x: Var<'t, T>, name: &str) -> Result<Var<'t, T>> {
        x.matmul(self.p.get(&format!("{name}.weight"))?)?.add(self.p.get(&format!("{name}.bias"))?)
    }

    fn ln(&self, x: Var<'t, T>, name: &str) -> Result<Var<'t, T>> {
        x.layer_norm(1, T::of(LN_EPS))?
            .mul(self.p.get(&format!("{name}.gamma"))?)?
            .add(self.p.get(&format!("{name}.beta"))?)
    }

    fn ffn(&self, x: Var<'t, T>, name: &str) -> Result<Var<'t, T>> {
        let h = self.linear(self.ln(x, &format!("{name}.ln"))?, &format!("{name}.w1"))?;
        let h = match self.cfg.kind {
            EncoderKind::Bert => h.gelu(),
            EncoderKind::Conformer => h.swish(),
        };
        self.linear(h, &format!("{name}.w2"))
    }

    /// Multi-head self-attention on a pre-normalized input; `bias` is added
    /// to every head's scores (key mask), `rel` selects the relative table.
    fn attention(&self, x: Var<'t, T>, name: &str, key_mask: Option<Var<'t, T>>, rel_ids: Option<&[usize]>) -> Result<Var<'t, T>> {
        let t = x.shape()[0];
        let (d, heads) = (self.cfg.d_model, self.cfg.heads);
        let dh = d / heads;
        let q = self.linear(x, &format!("{name}.q"))?;
        let k = x.matmul(self.p.get(&format!("{name}.k.weight"))?)?;
        let v = self.linear(x, &format!("{name}.v"))?;
        let rel = match rel_ids {
            Some(ids) => Some(self.p.get(&format!("{name}.rel_bias"))?.embedding_lookup(ids)?),
            None => None,
        };
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let (a, b) = (hd * dh, (hd + 1) * dh);
            let qh = q.slice(1, a, b)?;
            let kh = k.slice(1, a, b)?;
            let vh = v.slice(1, a, b)?;
            let mut s = qh.matmul(kh.transpose()?)?.scale(scale);
            if let Some(r) = rel {
                s = s.add(r.slice(1, hd, hd + 1)?.reshape(&[t, t])?)?;
            }
            if let Some(m) = key_mask {
                s = s.add(m)?;
            }
            outs.push(s.softmax(1)?.matmul(vh)?);
        }
        let cat = if heads == 1 { outs[0] } else { self.tape.concat(&outs, 1)? };
        self.linear(cat, &format!("{name}.o"))
    }

    /// Pointwise -> GLU -> depthwise conv -> swish -> pointwise.
    pub fn conv_module(&self, x: Var<'t, T>, name: &str, row_mask: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let h = self.linear(self.ln(x, &format!("{name}.ln"))?, &format!("{name}.pw1"))?.glu()?;
        // padded rows must read as zeros to the convolution
        let h = match row_mask {
            Some(m) => h.mul(m)?,
            None => h,
        };
        let h = h
            .conv1d_depthwise(self.p.get(&format!("{name}.dw.weight"))?)?
            .add(self.p.get(&format!("{name}.dw.bias"))?)?
            .swish();
        self.linear(h, &format!("{name}.pw2"))
    }

    /// All hidden states for `frames` (`T x input_dim`); rows at or beyond
    /// `valid` are padding, invisible to attention and convolution.
    pub fn forward(&self, frames: Var<'t, T>, valid: Option<usize>) -> Result<Vec<Var<'t, T>>> {
        let cfg = self.cfg;
        let shape = frames.shape();
        if shape.len() != 2 || shape[1] != cfg.input_dim {
            return Err(Error::Shape(format!(
                "encoder expects T x {} frames, got {:?}",
                cfg.input_dim, shape
            )));
        }
        let t = shape[0];
        if t == 0 {
            return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
        }
        if t > cfg.max_frames() {
            return Err(Error::InvalidArgument(format!(
                "{} frames exceed the {} s limit ({} frames at {} Hz)",
                t,
                cfg.max_input_seconds,
                cfg.max_frames(),
                cfg.token_rate
            )));
        }
        let valid = valid.unwrap_or(t).min(t);
        let (key_mask, row_mask) = if valid < t {
            let km = Tensor::from_fn(&[t, t], |i| if i % t >= valid { T::of(MASKED_SCORE) } else { T::zero() });
            let d = cfg.d_model;
            let rm = Tensor::from_fn(&[t, d], |i| if i / d >= valid { T::zero() } else { T::one() });
            (Some(self.tape.constant(km)), Some(self.tape.constant(rm)))
        } else {
            (None, None)
        };

        let mut x = self.linear(frames, "input")?;
        let rel_ids: Option<Vec<usize>> = (cfg.kind == EncoderKind::Conformer).then(|| {
            let r = cfg.max_rel_pos as isize;
            (0..t * t)
                .map(|i| {
                    let (q, k) = ((i / t) as isize, (i % t) as isize);
                    ((k - q).clamp(-r, r) + r) as usize
                })
                .collect()
        });
        if cfg.kind == EncoderKind::Bert {
            x = x.add(self.tape.constant(sinusoidal_positions(t, cfg.d_model)))?;
        }
        let mut states = vec![x];
        let half = T::of(0.5);
        for l in 0..cfg.layers {
            let p = format!("layer.{l}");
            match cfg.kind {
                EncoderKind::Bert => {
                    let a = self.attention(self.ln(x, &format!("{p}.attn.ln"))?, &format!("{p}.attn"), key_mask, None)?;
                    x = x.add(a)?;
                    x = x.add(self.ffn(x, &format!("{p}.ffn"))?)?;
                    if l + 1 == cfg.layers {
                        states.push(self.ln(x, "final_ln")?);
                    } else {
                        states.push(x);
                    }
                }
                EncoderKind::Conformer => {
                    x = x.add(self.ffn(x, &format!("{p}.ffn1"))?.scale(half))?;
                    let a = self.attention(
                        self.ln(x, &format!("{p}.attn.ln"))?,
                        &format!("{p}.attn"),
                        key_mask,
                        rel_ids.as_deref(),
                    )?;
                    x = x.add(a)?;
                    x = x.add(self.conv_module(x, &format!("{p}.conv"), row_mask)?)?;
                    x = x.add(self.ffn(x, &format!("{p}.ffn2"))?.scale(half))?;
                    x = self.ln(x, &format!("{p}.out_ln"))?;
                    states.push(x);
                }
            }
        }
        Ok(states)
    }
}

/// Frozen forward pass.
pub fn encode<T: Scalar>(cfg: &EncoderConfig, weights: &ParamStore<T>, frames: &Tensor<T>) -> Result<HiddenStates<T>> {
    encode_padded(cfg, weights, frames, None)
}

/// Frozen forward pass treating rows at or beyond `valid` as padding.
pub fn encode_padded<T: Scalar>(
    cfg: &EncoderConfig,
    weights: &ParamStore<T>,
    frames: &Tensor<T>,
    valid: Option<usize>,
) -> Result<HiddenStates<T>> {
    let tape = Tape::new();
    let p = weights.bind(&tape, false);
    let x = tape.constant(frames.clone());
    let states = EncoderGraph::new(cfg, &p, &tape).forward(x, valid)?;
    let layers = states.iter().map(|s| s.value().clone()).collect::<Vec<_>>();
    if layers.iter().any(|l| !l.all_finite()) {
        return Err(Error::NonFinite("encoder hidden states".into()));
    }
    Ok(HiddenStates { layers })
}
