//! Forward kernels for the tape primitives.

use super::{split_axis, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) fn map<T: Scalar>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&x| f(x)).collect(),
    }
}

/// `b` must equal `a`'s shape, a suffix of it, or hold a single element.
pub(crate) fn broadcast_zip<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let ok = b.len() == 1 || a.shape.ends_with(&b.shape);
    if !ok || b.is_empty() {
        return Err(Error::Shape(format!(
            "cannot broadcast {:?} onto {:?}",
            b.shape, a.shape
        )));
    }
    let blen = b.len();
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, b.data[i % blen]))
        .collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub(crate) fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul {:?} @ {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        &a.data,
        k as isize,
        1,
        &b.data,
        n as isize,
        1,
        T::zero(),
        &mut out,
        n as isize,
        1,
    );
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

pub(crate) fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = a.dims2()?;
    let mut data = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = a.data[i * c + j];
        }
    }
    Ok(Tensor {
        shape: vec![c, r],
        data,
    })
}

pub(crate) fn slice<T: Scalar>(
    a: &Tensor<T>,
    axis: usize,
    start: usize,
    end: usize,
) -> Result<Tensor<T>> {
    let (outer, len, inner) = split_axis(&a.shape, axis)?;
    if start > end || end > len {
        return Err(Error::Shape(format!(
            "slice {}..{} of axis {} with length {}",
            start, end, axis, len
        )));
    }
    let take = end - start;
    let mut data = Vec::with_capacity(outer * take * inner);
    for o in 0..outer {
        let s = (o * len + start) * inner;
        data.extend_from_slice(&a.data[s..s + take * inner]);
    }
    let mut shape = a.shape.clone();
    shape[axis] = take;
    Ok(Tensor { shape, data })
}

pub(crate) fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts[0];
    split_axis(&first.shape, axis)?;
    let mut total = 0;
    for p in parts {
        let same_rank = p.shape.len() == first.shape.len();
        let same_other = same_rank
            && p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !same_other {
            return Err(Error::Shape(format!(
                "concat along {} of {:?} and {:?}",
                axis, first.shape, p.shape
            )));
        }
        total += p.shape[axis];
    }
    let outer: usize = first.shape[..axis].iter().product();
    let inner: usize = first.shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape[axis];
            let s = o * len * inner;
            data.extend_from_slice(&p.data[s..s + len * inner]);
        }
    }
    let mut shape = first.shape.clone();
    shape[axis] = total;
    Ok(Tensor { shape, data })
}

pub(crate) fn softmax<T: Scalar>(a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = split_axis(&a.shape, axis)?;
    let mut data = a.data.clone();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).fold(T::neg_infinity(), |m, k| m.max(a.data[idx(k)]));
            let mut sum = T::zero();
            for k in 0..len {
                let e = (a.data[idx(k)] - max).exp();
                data[idx(k)] = e;
                sum += e;
            }
            for k in 0..len {
                data[idx(k)] /= sum;
            }
        }
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Returns the normalized tensor and one inverse standard deviation per lane.
pub(crate) fn layer_norm<T: Scalar>(
    a: &Tensor<T>,
    axis: usize,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (outer, len, inner) = split_axis(&a.shape, axis)?;
    let n = T::of(len as f64);
    let mut data = a.data.clone();
    let mut inv_std = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mean = (0..len).map(|k| a.data[idx(k)]).sum::<T>() / n;
            let var = (0..len)
                .map(|k| {
                    let d = a.data[idx(k)] - mean;
                    d * d
                })
                .sum::<T>()
                / n;
            let s = T::one() / (var + eps).sqrt();
            inv_std[o * inner + i] = s;
            for k in 0..len {
                data[idx(k)] = (a.data[idx(k)] - mean) * s;
            }
        }
    }
    Ok((
        Tensor {
            shape: a.shape.clone(),
            data,
        },
        inv_std,
    ))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh approximation of GELU.
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044_715);
    T::of(0.5) * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044_715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::of(3.0) * k * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn swish<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

pub(crate) fn swish_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s + x * s * (T::one() - s)
}

pub(crate) fn depthwise_conv1d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (t_len, c) = x.dims2()?;
    let (k, wc) = w.dims2()?;
    if wc != c || k % 2 == 0 {
        return Err(Error::Shape(format!(
            "depthwise conv of {:?} with kernel {:?} (kernel must be odd x channels)",
            x.shape, w.shape
        )));
    }
    let pad = (k - 1) / 2;
    let mut out = vec![T::zero(); t_len * c];
    for t in 0..t_len {
        let row = &mut out[t * c..(t + 1) * c];
        for j in 0..k {
            let src = t + j;
            if src < pad || src - pad >= t_len {
                continue;
            }
            let xr = &x.data[(src - pad) * c..(src - pad + 1) * c];
            let wr = &w.data[j * c..(j + 1) * c];
            for ch in 0..c {
                row[ch] += wr[ch] * xr[ch];
            }
        }
    }
    Ok(Tensor {
        shape: vec![t_len, c],
        data: out,
    })
}

pub(crate) fn depthwise_conv1d_grad_input<T: Scalar>(
    g: &[T],
    w: &[T],
    t_len: usize,
    c: usize,
    k: usize,
    dx: &mut [T],
) {
    let pad = (k - 1) / 2;
    for t in 0..t_len {
        for j in 0..k {
            let src = t + j;
            if src < pad || src - pad >= t_len {
                continue;
            }
            let s = src - pad;
            for ch in 0..c {
                dx[s * c + ch] += w[j * c + ch] * g[t * c + ch];
            }
        }
    }
}

pub(crate) fn depthwise_conv1d_grad_weight<T: Scalar>(
    g: &[T],
    x: &[T],
    t_len: usize,
    c: usize,
    k: usize,
    dw: &mut [T],
) {
    let pad = (k - 1) / 2;
    for t in 0..t_len {
        for j in 0..k {
            let src = t + j;
            if src < pad || src - pad >= t_len {
                continue;
            }
            let s = src - pad;
            for ch in 0..c {
                dw[j * c + ch] += x[s * c + ch] * g[t * c + ch];
            }
        }
    }
}

pub(crate) fn glu<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let full = *a
        .shape
        .last()
        .ok_or_else(|| Error::Shape("glu of a scalar".into()))?;
    if full % 2 != 0 {
        return Err(Error::Shape(format!(
            "glu needs an even last dimension, got {:?}",
            a.shape
        )));
    }
    let half = full / 2;
    let mut data = Vec::with_capacity(a.len() / 2);
    for row in a.data.chunks(full) {
        for j in 0..half {
            data.push(row[j] * sigmoid(row[half + j]));
        }
    }
    let mut shape = a.shape.clone();
    *shape.last_mut().expect("rank >= 1") = half;
    Ok(Tensor { shape, data })
}

pub(crate) fn gather_rows<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    let (rows, d) = table.dims2()?;
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= rows {
            return Err(Error::Shape(format!(
                "lookup id {} out of range for {} rows",
                id, rows
            )));
        }
        data.extend_from_slice(&table.data[id * d..(id + 1) * d]);
    }
    Ok(Tensor {
        shape: vec![ids.len(), d],
        data,
    })
}

pub(crate) fn mean_axis<T: Scalar>(a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = split_axis(&a.shape, axis)?;
    if len == 0 {
        return Err(Error::Shape("mean over an empty axis".into()));
    }
    let n = T::of(len as f64);
    let mut data = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                data[o * inner + i] += a.data[(o * len + k) * inner + i];
            }
        }
    }
    data.iter_mut().for_each(|v| *v /= n);
    let mut shape = a.shape.clone();
    shape.remove(axis);
    Ok(Tensor { shape, data })
}

/// Returns (mean loss over masked rows, row softmax probabilities, masked count).
pub(crate) fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    mask: &[bool],
) -> Result<(T, Vec<T>, usize)> {
    let (n, c) = logits.dims2()?;
    if targets.len() != n || mask.len() != n {
        return Err(Error::Shape(format!(
            "cross_entropy: {} rows, {} targets, {} mask entries",
            n,
            targets.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::InvalidArgument("cross_entropy with an empty mask".into()));
    }
    let mut probs = vec![T::zero(); n * c];
    let mut total = T::zero();
    for r in 0..n {
        if !mask[r] {
            continue;
        }
        if targets[r] >= c {
            return Err(Error::Shape(format!(
                "target {} out of range for {} classes",
                targets[r], c
            )));
        }
        let row = &logits.data[r * c..(r + 1) * c];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for j in 0..c {
            let e = (row[j] - max).exp();
            probs[r * c + j] = e;
            sum += e;
        }
        for j in 0..c {
            probs[r * c + j] /= sum;
        }
        total += max + sum.ln() - row[targets[r]];
    }
    Ok((total / T::of(count as f64), probs, count))
}

pub(crate) fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, targets: &[T]) -> Result<T> {
    if targets.len() != logits.len() || logits.is_empty() {
        return Err(Error::Shape(format!(
            "bce_with_logits: {} logits, {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut total = T::zero();
    for (&z, &y) in logits.data.iter().zip(targets) {
        // softplus(z) - y z, computed stably
        let softplus = z.max(T::zero()) + (T::one() + (-z.abs()).exp()).ln();
        total += softplus - y * z;
    }
    Ok(total / T::of(logits.len() as f64))
}
