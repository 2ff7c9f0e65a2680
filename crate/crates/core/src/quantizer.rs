//! Frozen random-projection quantizer: `tau_t = lookup(C, R x_t)`.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dsp::MelFrameSequence;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};
use crate::util::rng;
use crate::Scalar;

const TOKEN_MAGIC: &[u8; 4] = b"RQTK";
/// Frames per GEMM block during lookup.
const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LookupMode {
    /// Nearest neighbour between unit-normalized code and projection.
    #[default]
    NearestNormalized,
    /// `argmin | ||c_i|| - ||R x|| |`.
    NormDifference,
}

impl LookupMode {
    fn code(self) -> u32 {
        match self {
            LookupMode::NearestNormalized => 0,
            LookupMode::NormDifference => 1,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(LookupMode::NearestNormalized),
            1 => Some(LookupMode::NormDifference),
            _ => None,
        }
    }
}

impl std::str::FromStr for LookupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest-normalized" => Ok(LookupMode::NearestNormalized),
            "norm-difference" => Ok(LookupMode::NormDifference),
            other => Err(Error::Config(format!("unknown lookup mode `{}`", other))),
        }
    }
}

/// Projection `R` (`h x d`) and codebook `C` (`n x h`), never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    projection: Tensor<f64>,
    codebook: Tensor<f64>,
    mode: LookupMode,
    seed: u64,
    /// Unit-normalized codebook rows (zero rows stay zero).
    unit_codes: Vec<f64>,
    unit_sq: Vec<f64>,
    code_norms: Vec<f64>,
}

pub fn build_quantizer(seed: u64, d: usize, h: usize, n: usize, mode: LookupMode) -> Result<Quantizer> {
    if d == 0 || h == 0 || n == 0 {
        return Err(Error::InvalidArgument("quantizer needs d, h, n >= 1".into()));
    }
    let mut r = rng(seed);
    let bound = (6.0 / (d + h) as f64).sqrt();
    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let projection = Tensor::from_fn(&[h, d], |_| u.sample(&mut r));
    let codebook = Tensor::from_fn(&[n, h], |_| StandardNormal.sample(&mut r));
    Quantizer::from_parts(projection, codebook, mode, seed)
}

fn unit(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        (vec![0.0; v.len()], 0.0)
    } else {
        (v.iter().map(|x| x / norm).collect(), norm)
    }
}

impl Quantizer {
    pub fn from_parts(projection: Tensor<f64>, codebook: Tensor<f64>, mode: LookupMode, seed: u64) -> Result<Self> {
        let (h, _) = projection.dims2()?;
        let (n, h2) = codebook.dims2()?;
        if h != h2 || n == 0 || h == 0 {
            return Err(Error::Shape(format!(
                "projection {:?} and codebook {:?} disagree",
                projection.shape(),
                codebook.shape()
            )));
        }
        let mut unit_codes = Vec::with_capacity(n * h);
        let mut unit_sq = Vec::with_capacity(n);
        let mut code_norms = Vec::with_capacity(n);
        for i in 0..n {
            let (u, norm) = unit(codebook.row(i));
            unit_sq.push(u.iter().map(|x| x * x).sum());
            unit_codes.extend(u);
            code_norms.push(norm);
        }
        Ok(Self {
            projection,
            codebook,
            mode,
            seed,
            unit_codes,
            unit_sq,
            code_norms,
        })
    }

    pub fn projection(&self) -> &Tensor<f64> {
        &self.projection
    }

    pub fn codebook(&self) -> &Tensor<f64> {
        &self.codebook
    }

    pub fn mode(&self) -> LookupMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.projection.shape()[1]
    }

    pub fn code_dim(&self) -> usize {
        self.projection.shape()[0]
    }

    pub fn vocab_size(&self) -> usize {
        self.codebook.shape()[0]
    }

    /// `R x_t` for every row of a `T x d` matrix.
    pub fn project<T: Scalar>(&self, frames: &Tensor<T>) -> Result<Tensor<f64>> {
        let (t, d) = frames.dims2()?;
        if d != self.input_dim() {
            return Err(Error::Shape(format!(
                "frames have {} features, quantizer expects {}",
                d,
                self.input_dim()
            )));
        }
        let h = self.code_dim();
        let x: Vec<f64> = frames.data().iter().map(|v| v.as_f64()).collect();
        let mut out = vec![0.0; t * h];
        if t > 0 {
            // (T x d) @ (h x d)^T
            f64::gemm(t, d, h, 1.0, &x, d as isize, 1, self.projection.data(), 1, d as isize, 0.0, &mut out, h as isize, 1);
        }
        Tensor::matrix(t, h, out)
    }

    /// Token per row of a `T x d` matrix.
    pub fn tokenize_frames<T: Scalar>(&self, frames: &Tensor<T>) -> Result<Vec<u32>> {
        let proj = self.project(frames)?;
        let t = proj.shape()[0];
        Ok(match self.mode {
            LookupMode::NormDifference => (0..t)
                .map(|i| {
                    let norm = proj.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                    argmin(self.code_norms.iter().map(|c| (c - norm).abs()))
                })
                .collect(),
            LookupMode::NearestNormalized => self.nearest_normalized(&proj),
        })
    }

    fn nearest_normalized(&self, proj: &Tensor<f64>) -> Vec<u32> {
        let (t, h) = (proj.shape()[0], self.code_dim());
        let n = self.vocab_size();
        let mut tokens = Vec::with_capacity(t);
        let mut dots = vec![0.0; BLOCK * n];
        for start in (0..t).step_by(BLOCK) {
            let rows = BLOCK.min(t - start);
            let units: Vec<f64> = (start..start + rows).flat_map(|i| unit(proj.row(i)).0).collect();
            f64::gemm(rows, h, n, 1.0, &units, h as isize, 1, &self.unit_codes, 1, h as isize, 0.0, &mut dots, n as isize, 1);
            for r in 0..rows {
                // ||c - u||^2 minus the per-frame constant ||u||^2
                let row = &dots[r * n..(r + 1) * n];
                tokens.push(argmin(row.iter().zip(&self.unit_sq).map(|(dot, cc)| cc - 2.0 * dot)));
            }
        }
        tokens
    }

    pub fn tokenize<T: Scalar>(&self, frames: &MelFrameSequence<T>) -> Result<TokenSequence> {
        Ok(TokenSequence {
            tokens: self.tokenize_frames(frames.frames())?,
            frame_rate: frames.frame_rate(),
        })
    }

    /// Tensors for persistence under `projection` / `codebook`.
    pub fn to_params(&self) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("projection", self.projection.clone());
        p.insert("codebook", self.codebook.clone());
        p
    }

    pub fn from_params(p: &ParamStore<f64>, mode: LookupMode, seed: u64) -> Result<Self> {
        Self::from_parts(p.require("projection")?.clone(), p.require("codebook")?.clone(), mode, seed)
    }
}

pub fn tokenize<T: Scalar>(q: &Quantizer, frames: &MelFrameSequence<T>) -> Result<TokenSequence> {
    q.tokenize(frames)
}

/// First index of the minimum.
fn argmin(xs: impl Iterator<Item = f64>) -> u32 {
    let mut best = (0u32, f64::INFINITY);
    for (i, x) in xs.enumerate() {
        if x < best.1 {
            best = (i as u32, x);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub frame_rate: f64,
}

/// Fraction of codes used and entropy of the token histogram in bits.
pub fn utilization(tokens: &[u32], n: usize) -> (f64, f64) {
    if tokens.is_empty() || n == 0 {
        return (0.0, 0.0);
    }
    let mut counts = std::collections::HashMap::new();
    for &t in tokens {
        *counts.entry(t).or_insert(0usize) += 1;
    }
    let total = tokens.len() as f64;
    let entropy = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>();
    (counts.len() as f64 / n as f64, entropy.max(0.0))
}

/// Header of a token dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDump {
    pub tokens: TokenSequence,
    pub vocab_size: u32,
    pub seed: u64,
    pub mode: LookupMode,
}

/// `"RQTK"`, u32 T, u32 n, f32 frame rate, u64 seed, u32 mode, then u32 tokens; all little-endian.
pub fn write_tokens(path: &Path, dump: &TokenDump) -> Result<()> {
    let ts = &dump.tokens;
    let mut b = Vec::with_capacity(28 + 4 * ts.tokens.len());
    b.extend_from_slice(TOKEN_MAGIC);
    b.extend_from_slice(&(ts.tokens.len() as u32).to_le_bytes());
    b.extend_from_slice(&dump.vocab_size.to_le_bytes());
    b.extend_from_slice(&(ts.frame_rate as f32).to_le_bytes());
    b.extend_from_slice(&dump.seed.to_le_bytes());
    b.extend_from_slice(&dump.mode.code().to_le_bytes());
    for t in &ts.tokens {
        b.extend_from_slice(&t.to_le_bytes());
    }
    crate::util::write_atomic(path, &b)
}

pub fn read_tokens(path: &Path) -> Result<TokenDump> {
    let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if b.len() < 28 || &b[..4] != TOKEN_MAGIC {
        return Err(Error::format(path, "not a token dump"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"));
    let t = u32_at(4) as usize;
    let vocab_size = u32_at(8);
    let frame_rate = f32::from_le_bytes(b[12..16].try_into().expect("4 bytes")) as f64;
    let seed = u64::from_le_bytes(b[16..24].try_into().expect("8 bytes"));
    let mode = LookupMode::from_code(u32_at(24)).ok_or_else(|| Error::format(path, "unknown lookup mode"))?;
    if b.len() != 28 + 4 * t {
        return Err(Error::format(path, format!("expected {} tokens", t)));
    }
    let tokens: Vec<u32> = (0..t).map(|i| u32_at(28 + 4 * i)).collect();
    if tokens.iter().any(|&x| x >= vocab_size) {
        return Err(Error::format(path, "token out of vocabulary"));
    }
    Ok(TokenDump {
        tokens: TokenSequence { tokens, frame_rate },
        vocab_size,
        seed,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn frames(t: usize, d: usize, seed: u64, shift: f64) -> Tensor<f64> {
        let mut r = rng(seed);
        Tensor::<f64>::from_fn(&[t, d], |_| StandardNormal.sample(&mut r)).map_add(shift)
    }

    trait MapAdd {
        fn map_add(self, s: f64) -> Self;
    }

    impl MapAdd for Tensor<f64> {
        fn map_add(mut self, s: f64) -> Self {
            self.data_mut().iter_mut().for_each(|v| *v += s);
            self
        }
    }

    #[test]
    fn seeded_construction_is_bit_identical() {
        let a = build_quantizer(7, 128, 16, 8192, LookupMode::default()).unwrap();
        let b = build_quantizer(7, 128, 16, 8192, LookupMode::default()).unwrap();
        assert!(a.projection().data().iter().zip(b.projection().data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.codebook().data().iter().zip(b.codebook().data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = build_quantizer(8, 128, 16, 8192, LookupMode::default()).unwrap();
        assert_ne!(a.codebook(), c.codebook());
    }

    #[test]
    fn projection_respects_xavier_bound() {
        let q = build_quantizer(7, 128, 16, 8192, LookupMode::default()).unwrap();
        let bound = (6.0f64 / 144.0).sqrt();
        assert!(q.projection().data().iter().all(|v| v.abs() <= bound));
        // and actually spans it
        let max = q.projection().data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.95 * bound);
    }

    #[test]
    fn codebook_is_standard_normal() {
        let q = build_quantizer(7, 128, 16, 8192, LookupMode::default()).unwrap();
        let x = q.codebook().data();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // standard errors: 1/sqrt(n) for the mean, sqrt(2/n) for the variance
        assert!(mean.abs() < 3.0 / n.sqrt());
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn single_code_always_wins() {
        for mode in [LookupMode::NearestNormalized, LookupMode::NormDifference] {
            let q = build_quantizer(1, 8, 4, 1, mode).unwrap();
            assert!(q.tokenize_frames(&frames(50, 8, 2, 0.0)).unwrap().iter().all(|&t| t == 0));
        }
    }

    fn oracle(q: &Quantizer, x: &[f64]) -> u32 {
        let (h, d) = (q.code_dim(), q.input_dim());
        let rx: Vec<f64> = (0..h).map(|i| (0..d).map(|j| q.projection().row(i)[j] * x[j]).sum()).collect();
        let rn = rx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut best = (0, f64::INFINITY);
        for i in 0..q.vocab_size() {
            let c = q.codebook().row(i);
            let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dist = match q.mode() {
                LookupMode::NormDifference => (cn - rn).abs(),
                LookupMode::NearestNormalized => (0..h)
                    .map(|k| {
                        let a = if cn > 0.0 { c[k] / cn } else { 0.0 };
                        let b = if rn > 0.0 { rx[k] / rn } else { 0.0 };
                        (a - b).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt(),
            };
            if dist < best.1 {
                best = (i as u32, dist);
            }
        }
        best.0
    }

    #[test]
    fn constructed_quantizer_matches_exhaustive_oracle() {
        let r = Tensor::matrix(2, 2, vec![1.0, 0.5, -0.25, 2.0]).unwrap();
        let c = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 3.0, -2.0, -0.1, 0.7, -0.7]).unwrap();
        for mode in [LookupMode::NearestNormalized, LookupMode::NormDifference] {
            let q = Quantizer::from_parts(r.clone(), c.clone(), mode, 0).unwrap();
            let x = frames(100, 2, 3, 0.0);
            let got = q.tokenize_frames(&x).unwrap();
            for t in 0..100 {
                assert_eq!(got[t], oracle(&q, x.row(t)), "{mode:?} frame {t}");
            }
        }
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        // codes 1 and 3 point the same way; code 2 has the same norm as code 0
        let r = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = Tensor::matrix(4, 2, vec![-1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 5.0]).unwrap();
        let q = Quantizer::from_parts(r.clone(), c.clone(), LookupMode::NearestNormalized, 0).unwrap();
        assert_eq!(q.tokenize_frames(&Tensor::matrix(1, 2, vec![0.0, 2.0]).unwrap()).unwrap(), vec![1]);
        // the zero projection is equidistant from every unit code
        assert_eq!(q.tokenize_frames(&Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap()).unwrap(), vec![0]);
        let q = Quantizer::from_parts(r, c, LookupMode::NormDifference, 0).unwrap();
        assert_eq!(q.tokenize_frames(&Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap()).unwrap(), vec![0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let q = build_quantizer(1, 8, 4, 16, LookupMode::default()).unwrap();
        assert!(q.tokenize_frames(&frames(3, 7, 0, 0.0)).is_err());
        assert!(build_quantizer(1, 0, 4, 16, LookupMode::default()).is_err());
    }

    #[test]
    fn utilization_examples() {
        let (u, e) = utilization(&[0, 0, 1], 4);
        assert_eq!(u, 0.5);
        let want = -((2.0f64 / 3.0) * (2.0f64 / 3.0).log2() + (1.0 / 3.0) * (1.0f64 / 3.0).log2());
        assert!((e - want).abs() < 1e-12);
        assert!((e - 0.9183).abs() < 1e-4);
        assert_eq!(utilization(&[5; 10], 8), (1.0 / 8.0, 0.0));
        let all: Vec<u32> = (0..64).collect();
        let (u, e) = utilization(&all, 64);
        assert_eq!(u, 1.0);
        assert!((e - 6.0).abs() < 1e-12);
        assert_eq!(utilization(&[], 64), (0.0, 0.0));
    }

    #[test]
    fn normalization_raises_utilization() {
        // 10^5 standard-normal frames against the same frames shifted by +10
        for seed in 0..5u64 {
            let q = build_quantizer(seed, 128, 16, 8192, LookupMode::default()).unwrap();
            let x = frames(100_000, 128, 100 + seed, 0.0);
            let (u_norm, _) = utilization(&q.tokenize_frames(&x).unwrap(), 8192);
            let (u_shift, _) = utilization(&q.tokenize_frames(&x.map_add(10.0)).unwrap(), 8192);
            assert!(u_norm > u_shift, "seed {seed}: {u_norm} vs {u_shift}");
        }
    }

    #[test]
    fn token_dump_roundtrip() {
        let dump = TokenDump {
            tokens: TokenSequence { tokens: vec![3, 0, 8191, 7], frame_rate: 50.0 },
            vocab_size: 8192,
            seed: u64::MAX - 3,
            mode: LookupMode::NormDifference,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tok");
        write_tokens(&p, &dump).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 28 + 16);
        assert_eq!(read_tokens(&p).unwrap(), dump);
    }

    #[test]
    fn persisted_parts_rebuild_the_same_tokenizer() {
        let q = build_quantizer(3, 16, 4, 64, LookupMode::default()).unwrap();
        let back = Quantizer::from_params(&q.to_params(), q.mode(), q.seed()).unwrap();
        assert_eq!(back, q);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn tokens_are_scale_invariant(seed in 0u64..1000, alpha in 0.01f64..100.0) {
            let q = build_quantizer(seed, 32, 8, 512, LookupMode::NearestNormalized).unwrap();
            let x = frames(64, 32, seed, 0.0);
            let a = q.tokenize_frames(&x).unwrap();
            let mut scaled = x.clone();
            scaled.data_mut().iter_mut().for_each(|v| *v *= alpha);
            prop_assert_eq!(&a, &q.tokenize_frames(&scaled).unwrap());
            scaled = x.clone();
            scaled.data_mut().iter_mut().for_each(|v| *v *= 3.7);
            prop_assert_eq!(&a, &q.tokenize_frames(&scaled).unwrap());
            prop_assert!(a.iter().all(|&t| (t as usize) < 512));
        }

        #[test]
        fn norm_difference_sees_only_the_norm(seed in 0u64..1000) {
            // with an orthogonal projection, rotating x in the plane of two
            // coordinates keeps ||R x|| fixed
            let d = 6;
            let mut eye = vec![0.0; d * d];
            for i in 0..d { eye[i * d + i] = 1.0; }
            let r = Tensor::matrix(d, d, eye).unwrap();
            let mut rg = rng(seed);
            let c = Tensor::from_fn(&[256, d], |_| StandardNormal.sample(&mut rg));
            let q = Quantizer::from_parts(r, c, LookupMode::NormDifference, 0).unwrap();
            let x = frames(1, d, seed, 0.0);
            let theta: f64 = rg.random_range(0.0..std::f64::consts::TAU);
            let mut y = x.clone();
            let (a, b) = (x.data()[0], x.data()[1]);
            y.data_mut()[0] = a * theta.cos() - b * theta.sin();
            y.data_mut()[1] = a * theta.sin() + b * theta.cos();
            let n0 = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            let n1 = y.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!((n0 - n1).abs() < 1e-12);
            prop_assert_eq!(q.tokenize_frames(&x).unwrap(), q.tokenize_frames(&y).unwrap());
        }
    }
}
