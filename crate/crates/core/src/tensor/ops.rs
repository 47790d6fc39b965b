use super::graph::{Graph, Var};
use super::linalg::{gemm, MatLayout};
use super::{strides, Tensor};
use crate::error::{Error, Result};
use crate::lightfield::filter::{bilinear_taps, reflect_index};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// 1/sqrt(2*pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Axis along which [`Graph::forward_diff`] differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffAxis {
    /// Last axis (x).
    Horizontal,
    /// Second-to-last axis (y).
    Vertical,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape(format!(
                    "cannot broadcast {a:?} with {b:?}"
                )))
            }
        };
    }
    Ok(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
fn broadcast_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let src_strides = strides(src);
    // Stride per output axis; zero on broadcast axes.
    let eff: Vec<usize> = (0..n)
        .map(|i| {
            if i + src.len() < n {
                0
            } else {
                let j = i + src.len() - n;
                if src[j] == 1 {
                    0
                } else {
                    src_strides[j]
                }
            }
        })
        .collect();
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for ax in (0..n).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn reduce_into(values: impl Iterator<Item = f64>, map: Option<&[usize]>, shape: &[usize]) -> Tensor {
    match map {
        None => Tensor {
            shape: shape.to_vec(),
            data: values.collect(),
        },
        Some(map) => {
            let mut acc = Tensor::zeros(shape);
            for (v, &m) in values.zip(map) {
                acc.data[m] += v;
            }
            acc
        }
    }
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = out_shape.len();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return (out, out_shape);
    }
    let inner = out_shape[n - 1];
    let inner_stride = eff[n - 1];
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    let outer = total / inner;
    for _ in 0..outer {
        let mut o = off;
        for _ in 0..inner {
            out.push(data[o]);
            o += inner_stride;
        }
        for ax in (0..n - 1).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(outer, axis_len, inner)` split of `shape` around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb)?;
        let (ma, mb) = if sa == out_shape && sb == out_shape {
            (None, None)
        } else {
            let ma = (sa != out_shape).then(|| broadcast_map(&sa, &out_shape));
            let mb = (sb != out_shape).then(|| broadcast_map(&sb, &out_shape));
            (ma, mb)
        };
        let (av, bv) = (self.value(a), self.value(b));
        let n: usize = out_shape.iter().product();
        let at = |i: usize| av.data[ma.as_ref().map_or(i, |m| m[i])];
        let bt = |i: usize| bv.data[mb.as_ref().map_or(i, |m| m[i])];
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (at(i), bt(i));
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let out = Tensor {
            shape: out_shape,
            data,
        };
        self.record(
            out,
            &[a, b],
            Box::new(move |p, _y, g, need| {
                let (av, bv) = (p[0], p[1]);
                let at = |i: usize| av.data[ma.as_ref().map_or(i, |m| m[i])];
                let bt = |i: usize| bv.data[mb.as_ref().map_or(i, |m| m[i])];
                let gi = g.data.iter().copied().enumerate();
                let ga = need[0].then(|| {
                    let vals = gi.clone().map(|(i, g)| match kind {
                        BinaryKind::Add | BinaryKind::Sub => g,
                        BinaryKind::Mul => g * bt(i),
                        BinaryKind::Div => g / bt(i),
                    });
                    reduce_into(vals, ma.as_deref(), &av.shape)
                });
                let gb = need[1].then(|| {
                    let vals = gi.clone().map(|(i, g)| match kind {
                        BinaryKind::Add => g,
                        BinaryKind::Sub => -g,
                        BinaryKind::Mul => g * at(i),
                        BinaryKind::Div => {
                            let y = bt(i);
                            -g * at(i) / (y * y)
                        }
                    });
                    reduce_into(vals, mb.as_deref(), &bv.shape)
                });
                vec![ga, gb]
            }),
        )
    }

    /// Broadcasting elementwise sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Div)
    }

    /// Elementwise map with derivative `dfdx(x, y)` where `y = f(x)`.
    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        dfdx: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let out = self.value(x).map(f);
        self.record(
            out,
            &[x],
            Box::new(move |p, y, g, _| {
                let data = p[0]
                    .data
                    .iter()
                    .zip(&y.data)
                    .zip(&g.data)
                    .map(|((&x, &y), &g)| g * dfdx(x, y))
                    .collect();
                vec![Some(Tensor {
                    shape: y.shape.clone(),
                    data,
                })]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, gelu, |x, _| gelu_grad(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::exp, |_, y| y)
    }

    /// `|x|`, with subgradient 0 at 0.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v * v, |x, _| 2.0 * x)
    }

    /// `max(x, lo)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Result<Var> {
        self.unary(x, move |v| v.max(lo), move |x, _| if x >= lo { 1.0 } else { 0.0 })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.record(
            out,
            &[x],
            Box::new(|p, _, g, _| vec![Some(Tensor::full(&p[0].shape, g.data[0]))]),
        )
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let out = Tensor::scalar(self.value(x).sum() / n);
        self.record(
            out,
            &[x],
            Box::new(move |p, _, g, _| vec![Some(Tensor::full(&p[0].shape, g.data[0] / n))]),
        )
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_at_axis(&shape, axis);
        let xv = self.value(x);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &xv.data[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let inv = 1.0 / len as f64;
        data.iter_mut().for_each(|d| *d *= inv);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let out = Tensor {
            shape: out_shape,
            data,
        };
        self.record(
            out,
            &[x],
            Box::new(move |_, _, g, _| {
                let mut gx = Tensor::zeros(&shape);
                for o in 0..outer {
                    for a in 0..len {
                        let dst = &mut gx.data[(o * len + a) * inner..(o * len + a + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(&g.data[o * inner..(o + 1) * inner]) {
                            *d = s * inv;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.record(
            out,
            &[x],
            Box::new(|p, _, g, _| vec![Some(Tensor {
                shape: p[0].shape.clone(),
                data: g.data.clone(),
            })]),
        )
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Shape(format!("invalid permutation {axes:?} for {shape:?}")));
        }
        let (data, out_shape) = permute_data(&self.value(x).data, &shape, axes);
        let inv = inverse_axes(axes);
        self.record(
            Tensor {
                shape: out_shape,
                data,
            },
            &[x],
            Box::new(move |_, y, g, _| {
                let (data, shape) = permute_data(&g.data, &y.shape, &inv);
                vec![Some(Tensor { shape, data })]
            }),
        )
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("axis {axis} out of range for {base:?}")));
        }
        let mut lens = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Shape(format!(
                    "concat along {axis}: {:?} incompatible with {base:?}",
                    s
                )));
            }
            lens.push(s[axis]);
        }
        let total_len: usize = lens.iter().sum();
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (&x, &len) in xs.iter().zip(&lens) {
                let v = &self.value(x).data;
                data.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total_len;
        self.record(
            Tensor {
                shape: out_shape,
                data,
            },
            xs,
            Box::new(move |p, _, g, need| {
                let mut grads: Vec<Vec<f64>> = lens
                    .iter()
                    .map(|&len| Vec::with_capacity(outer * len * inner))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gx, &len) in grads.iter_mut().zip(&lens) {
                        gx.extend_from_slice(&g.data[off..off + len * inner]);
                        off += len * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(p)
                    .zip(need)
                    .map(|((data, pv), &n)| {
                        n.then(|| Tensor {
                            shape: pv.shape.clone(),
                            data,
                        })
                    })
                    .collect()
            }),
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "narrow axis {axis} [{start}, {}) out of range for {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = split_at_axis(&shape, axis);
        let v = &self.value(x).data;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.record(
            Tensor {
                shape: out_shape,
                data,
            },
            &[x],
            Box::new(move |_, _, g, _| {
                let mut gx = Tensor::zeros(&shape);
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx.data[base..base + len * inner]
                        .copy_from_slice(&g.data[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Splits `axis` into consecutive chunks of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let extent = self
            .shape(x)
            .get(axis)
            .copied()
            .ok_or_else(|| Error::Shape(format!("axis {axis} out of range")))?;
        if sizes.iter().sum::<usize>() != extent {
            return Err(Error::Shape(format!(
                "split sizes {sizes:?} do not cover extent {extent}"
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.narrow(x, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::Shape(format!("matmul needs rank >= 2, got {sa:?} and {sb:?}")));
        }
        let (n, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, m) = if transpose_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let shared_b = batch_b.iter().product::<usize>() == 1;
        if kb != k || !(shared_b || batch_a == batch_b) {
            return Err(Error::Shape(format!(
                "matmul {sa:?} x {sb:?}{}",
                if transpose_b { "^T" } else { "" }
            )));
        }
        let batches: usize = batch_a.iter().product();
        let lb = if transpose_b {
            MatLayout::transposed(m, k)
        } else {
            MatLayout::row_major(k, m)
        };
        let mut data = vec![0.0; batches * n * m];
        {
            let (av, bv) = (&self.value(a).data, &self.value(b).data);
            for bi in 0..batches {
                let bo = if shared_b { 0 } else { bi * k * m };
                gemm(
                    &av[bi * n * k..(bi + 1) * n * k],
                    MatLayout::row_major(n, k),
                    &bv[bo..bo + k * m],
                    lb,
                    &mut data[bi * n * m..(bi + 1) * n * m],
                    0.0,
                );
            }
        }
        let mut out_shape = batch_a.to_vec();
        out_shape.extend([n, m]);
        self.record(
            Tensor {
                shape: out_shape,
                data,
            },
            &[a, b],
            Box::new(move |p, _, g, need| {
                let (av, bv) = (&p[0].data, &p[1].data);
                let ga = need[0].then(|| {
                    // dA = dC · B^T  (B^T for plain, B for transposed storage)
                    let mut ga = Tensor::zeros(&p[0].shape);
                    let lbt = if transpose_b {
                        MatLayout::row_major(m, k)
                    } else {
                        MatLayout::transposed(k, m)
                    };
                    for bi in 0..batches {
                        let bo = if shared_b { 0 } else { bi * k * m };
                        gemm(
                            &g.data[bi * n * m..(bi + 1) * n * m],
                            MatLayout::row_major(n, m),
                            &bv[bo..bo + k * m],
                            lbt,
                            &mut ga.data[bi * n * k..(bi + 1) * n * k],
                            0.0,
                        );
                    }
                    ga
                });
                let gb = need[1].then(|| {
                    let mut gb = Tensor::zeros(&p[1].shape);
                    for bi in 0..batches {
                        let bo = if shared_b { 0 } else { bi * k * m };
                        let gslice = &g.data[bi * n * m..(bi + 1) * n * m];
                        let aslice = &av[bi * n * k..(bi + 1) * n * k];
                        let beta = if shared_b && bi > 0 { 1.0 } else { 0.0 };
                        if transpose_b {
                            // dB (m x k) = dC^T · A
                            gemm(
                                gslice,
                                MatLayout::transposed(n, m),
                                aslice,
                                MatLayout::row_major(n, k),
                                &mut gb.data[bo..bo + k * m],
                                beta,
                            );
                        } else {
                            // dB (k x m) = A^T · dC
                            gemm(
                                aslice,
                                MatLayout::transposed(n, k),
                                gslice,
                                MatLayout::row_major(n, m),
                                &mut gb.data[bo..bo + k * m],
                                beta,
                            );
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Batched matrix product over the last two axes. `b` may be a single
    /// matrix shared by every batch of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// `x · weight + bias` over the last axis of `x`; `weight` is `[in, out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 || shape.last() != Some(&ws[0]) {
            return Err(Error::Shape(format!("linear: input {shape:?}, weight {ws:?}")));
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let x2 = self.reshape(x, &[rows, ws[0]])?;
        let mut y = self.matmul(x2, weight)?;
        if let Some(b) = bias {
            y = self.add(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = ws[1];
        self.reshape(y, &out_shape)
    }

    /// Normalizes each vector along the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Shape("layer_norm on rank-0 tensor".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm: gamma {:?} / beta {:?} vs feature dim {d}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let rows = self.value(x).len() / d;
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let mut data = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data[r * d..(r + 1) * d];
            let (mu, rstd) = moments(row, eps);
            for j in 0..d {
                data[r * d + j] = (row[j] - mu) * rstd * gv.data[j] + bv.data[j];
            }
        }
        self.record(
            Tensor {
                shape: shape.clone(),
                data,
            },
            &[x, gamma, beta],
            Box::new(move |p, _, g, need| {
                let (xv, gv) = (p[0], p[1]);
                let mut gx = Tensor::zeros(&xv.shape);
                let mut ggamma = Tensor::zeros(&[d]);
                let mut gbeta = Tensor::zeros(&[d]);
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let row = &xv.data[r * d..(r + 1) * d];
                    let grow = &g.data[r * d..(r + 1) * d];
                    let (mu, rstd) = moments(row, eps);
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..d {
                        xhat[j] = (row[j] - mu) * rstd;
                        dxhat[j] = grow[j] * gv.data[j];
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[j];
                        ggamma.data[j] += grow[j] * xhat[j];
                        gbeta.data[j] += grow[j];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    for j in 0..d {
                        gx.data[r * d + j] =
                            rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                vec![
                    need[0].then_some(gx),
                    need[1].then_some(ggamma),
                    need[2].then_some(gbeta),
                ]
            }),
        )
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Shape("softmax on rank-0 tensor".into()))?;
        let xv = self.value(x);
        let mut data = xv.data.clone();
        for row in data.chunks_mut(d) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.record(
            Tensor { shape, data },
            &[x],
            Box::new(move |_, y, g, _| {
                let mut gx = vec![0.0; y.len()];
                for ((gxr, yr), gr) in gx.chunks_mut(d).zip(y.data.chunks(d)).zip(g.data.chunks(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![Some(Tensor {
                    shape: y.shape.clone(),
                    data: gx,
                })]
            }),
        )
    }

    /// `softmax(q·kᵀ/√d)·v` over the last two axes, batched over the rest.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let d = *self
            .shape(q)
            .last()
            .ok_or_else(|| Error::Shape("attention on rank-0 query".into()))?;
        if d == 0 {
            return Err(Error::Shape("attention with zero-width queries".into()));
        }
        let scores = self.matmul_nt(q, k)?;
        let scores = self.scale(scores, 1.0 / (d as f64).sqrt())?;
        let weights = self.softmax(scores)?;
        self.matmul(weights, v)
    }

    /// `[B, c, h, w]` → `[B·n², c, h/n, w/n]`, windows in row-major order.
    pub fn window_partition(&mut self, x: Var, n: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || n == 0 || s[2] % n != 0 || s[3] % n != 0 {
            return Err(Error::Dimension(format!(
                "window_partition: {s:?} not divisible into {n}x{n} windows"
            )));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (hs, ws) = (h / n, w / n);
        let r = self.reshape(x, &[b, c, n, hs, n, ws])?;
        let r = self.permute(r, &[0, 2, 4, 1, 3, 5])?;
        self.reshape(r, &[b * n * n, c, hs, ws])
    }

    /// Inverse of [`Graph::window_partition`].
    pub fn window_merge(&mut self, x: Var, n: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || n == 0 || s[0] % (n * n) != 0 {
            return Err(Error::Dimension(format!(
                "window_merge: {s:?} does not hold whole {n}x{n} window grids"
            )));
        }
        let (b, c, hs, ws) = (s[0] / (n * n), s[1], s[2], s[3]);
        let r = self.reshape(x, &[b, n, n, c, hs, ws])?;
        let r = self.permute(r, &[0, 3, 1, 4, 2, 5])?;
        self.reshape(r, &[b, c, n * hs, n * ws])
    }

    /// Adaptive average pooling of the last two axes to `(ph, pw)`. Cell `i`
    /// covers input rows `floor(i·h/ph) .. ceil((i+1)·h/ph)`.
    pub fn adaptive_avg_pool(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::Shape(format!("adaptive_avg_pool on {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if ph == 0 || pw == 0 || ph > h || pw > w {
            return Err(Error::InvalidArgument(format!(
                "pool target {ph}x{pw} invalid for {h}x{w} input"
            )));
        }
        let planes = s[..s.len() - 2].iter().product::<usize>();
        let rows: Vec<(usize, usize)> = (0..ph).map(|i| pool_span(i, h, ph)).collect();
        let cols: Vec<(usize, usize)> = (0..pw).map(|j| pool_span(j, w, pw)).collect();
        let xv = self.value(x);
        let mut data = vec![0.0; planes * ph * pw];
        for p in 0..planes {
            let plane = &xv.data[p * h * w..(p + 1) * h * w];
            for (i, &(r0, r1)) in rows.iter().enumerate() {
                for (j, &(c0, c1)) in cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        for c in c0..c1 {
                            acc += plane[r * w + c];
                        }
                    }
                    data[(p * ph + i) * pw + j] = acc / ((r1 - r0) * (c1 - c0)) as f64;
                }
            }
        }
        let mut out_shape = s.clone();
        let nd = out_shape.len();
        out_shape[nd - 2] = ph;
        out_shape[nd - 1] = pw;
        self.record(
            Tensor {
                shape: out_shape,
                data,
            },
            &[x],
            Box::new(move |_, _, g, _| {
                let mut gx = Tensor::zeros(&s);
                for p in 0..planes {
                    for (i, &(r0, r1)) in rows.iter().enumerate() {
                        for (j, &(c0, c1)) in cols.iter().enumerate() {
                            let share =
                                g.data[(p * ph + i) * pw + j] / ((r1 - r0) * (c1 - c0)) as f64;
                            for r in r0..r1 {
                                for c in c0..c1 {
                                    gx.data[p * h * w + r * w + c] += share;
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Bilinear 2× upsampling of the last two axes (half-pixel centers).
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::Shape(format!("upsample2x on {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = s[..s.len() - 2].iter().product::<usize>();
        let ty = bilinear_taps(h);
        let tx = bilinear_taps(w);
        let xv = self.value(x);
        let (ho, wo) = (2 * h, 2 * w);
        let mut data = vec![0.0; planes * ho * wo];
        for p in 0..planes {
            let src = &xv.data[p * h * w..(p + 1) * h * w];
            let dst = &mut data[p * ho * wo..(p + 1) * ho * wo];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let top = (1.0 - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1];
                    let bot = (1.0 - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1];
                    dst[oy * wo + ox] = (1.0 - wy) * top + wy * bot;
                }
            }
        }
        let mut out_shape = s.clone();
        let nd = out_shape.len();
        out_shape[nd - 2] = ho;
        out_shape[nd - 1] = wo;
        self.record(
            Tensor {
                shape: out_shape,
                data,
            },
            &[x],
            Box::new(move |_, _, g, _| {
                let mut gx = Tensor::zeros(&s);
                for p in 0..planes {
                    let gs = &g.data[p * ho * wo..(p + 1) * ho * wo];
                    let gd = &mut gx.data[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let v = gs[oy * wo + ox];
                            gd[y0 * w + x0] += (1.0 - wy) * (1.0 - wx) * v;
                            gd[y0 * w + x1] += (1.0 - wy) * wx * v;
                            gd[y1 * w + x0] += wy * (1.0 - wx) * v;
                            gd[y1 * w + x1] += wy * wx * v;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Forward difference `x[i+1] - x[i]` along one of the last two axes, with
    /// reflect indexing past the far border.
    pub fn forward_diff(&mut self, x: Var, axis: DiffAxis) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::Shape(format!("forward_diff on {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = s[..s.len() - 2].iter().product::<usize>();
        let next = move |y: usize, xx: usize| -> usize {
            match axis {
                DiffAxis::Horizontal => y * w + reflect_index(xx as isize + 1, w),
                DiffAxis::Vertical => reflect_index(y as isize + 1, h) * w + xx,
            }
        };
        let xv = self.value(x);
        let mut data = vec![0.0; xv.len()];
        for p in 0..planes {
            let o = p * h * w;
            for y in 0..h {
                for xx in 0..w {
                    data[o + y * w + xx] = xv.data[o + next(y, xx)] - xv.data[o + y * w + xx];
                }
            }
        }
        self.record(
            Tensor {
                shape: s.clone(),
                data,
            },
            &[x],
            Box::new(move |_, _, g, _| {
                let mut gx = Tensor::zeros(&s);
                for p in 0..planes {
                    let o = p * h * w;
                    for y in 0..h {
                        for xx in 0..w {
                            let v = g.data[o + y * w + xx];
                            gx.data[o + next(y, xx)] += v;
                            gx.data[o + y * w + xx] -= v;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Min-max normalization of every 2-D map (last two axes) to `[0, 1]`.
    /// Maps whose range is below `1e-8` are divided by `1e-8` instead, so
    /// constant maps become all zeros.
    pub fn normalize_minmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::Shape(format!("normalize_minmax on {s:?}")));
        }
        let n = s[s.len() - 2] * s[s.len() - 1];
        let xv = self.value(x);
        let mut data = vec![0.0; xv.len()];
        for (dst, src) in data.chunks_mut(n).zip(xv.data.chunks(n)) {
            let (imin, imax) = argminmax(src);
            let (mn, range) = (src[imin], (src[imax] - src[imin]).max(NORMALIZE_FLOOR));
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mn) / range;
            }
        }
        self.record(
            Tensor {
                shape: s.clone(),
                data,
            },
            &[x],
            Box::new(move |p, y, g, _| {
                let mut gx = vec![0.0; y.len()];
                for ((gd, src), (yv, gv)) in gx
                    .chunks_mut(n)
                    .zip(p[0].data.chunks(n))
                    .zip(y.data.chunks(n).zip(g.data.chunks(n)))
                {
                    let (imin, imax) = argminmax(src);
                    let raw = src[imax] - src[imin];
                    let range = raw.max(NORMALIZE_FLOOR);
                    let mut dmin = 0.0;
                    let mut dmax = 0.0;
                    for j in 0..n {
                        gd[j] = gv[j] / range;
                        if raw >= NORMALIZE_FLOOR {
                            dmin += gv[j] * (yv[j] - 1.0) / range;
                            dmax -= gv[j] * yv[j] / range;
                        } else {
                            dmin -= gv[j] / range;
                        }
                    }
                    gd[imin] += dmin;
                    gd[imax] += dmax;
                }
                vec![Some(Tensor {
                    shape: s.clone(),
                    data: gx,
                })]
            }),
        )
    }
}

/// Denominator floor used by [`Graph::normalize_minmax`].
pub const NORMALIZE_FLOOR: f64 = 1e-8;

fn argminmax(v: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    let mut imax = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[imin] {
            imin = i;
        }
        if x > v[imax] {
            imax = i;
        }
    }
    (imin, imax)
}

fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mu = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
    (mu, 1.0 / (var + eps).sqrt())
}

fn pool_span(i: usize, n: usize, p: usize) -> (usize, usize) {
    let start = i * n / p;
    let end = ((i + 1) * n).div_ceil(p);
    (start, end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape(&[4, 1, 5], &[1]).unwrap(), vec![4, 1, 5]);
        assert_eq!(broadcast_shape(&[2, 1, 4], &[2, 3, 1]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shape(&[2, 3], &[4]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[5, 7], 3.0, &mut rng()));
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes_tokens() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[6, 16], 2.0, &mut rng()).map(|v| v + 3.0));
        let gamma = g.constant(Tensor::ones(&[16]));
        let beta = g.constant(Tensor::zeros(&[16]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        for row in g.value(y).data().chunks(16) {
            let mu = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 16.0;
            assert!(mu.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn attention_uniform_for_equal_logits() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(&[3, 2]));
        let k = g.constant(Tensor::randn(&[4, 2], 1.0, &mut rng()));
        let v = g.constant(Tensor::randn(&[4, 3], 1.0, &mut rng()));
        let out = g.attention(q, k, v).unwrap();
        let vv = g.value(v).clone();
        for i in 0..3 {
            for j in 0..3 {
                let mean: f64 = (0..4).map(|r| vv.get(&[r, j])).sum::<f64>() / 4.0;
                assert!((g.value(out).get(&[i, j]) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_saturates_on_dominant_key() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap());
        let k = g.constant(Tensor::from_vec(&[3, 2], vec![0.0, 0.0, 200.0, 0.0, 0.0, 1.0]).unwrap());
        let v = g.constant(Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let out = g.attention(q, k, v).unwrap();
        assert!((g.value(out).data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn attention_matches_dense_oracle() {
        let mut r = rng();
        let qt = Tensor::randn(&[4, 2], 1.0, &mut r);
        let kt = Tensor::randn(&[4, 2], 1.0, &mut r);
        let vt = Tensor::randn(&[4, 3], 1.0, &mut r);
        let mut g = Graph::new();
        let (q, k, v) = (g.constant(qt.clone()), g.constant(kt.clone()), g.constant(vt.clone()));
        let out = g.attention(q, k, v).unwrap();
        for i in 0..4 {
            let logits: Vec<f64> = (0..4)
                .map(|j| (qt.get(&[i, 0]) * kt.get(&[j, 0]) + qt.get(&[i, 1]) * kt.get(&[j, 1])) / 2f64.sqrt())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in 0..3 {
                let want: f64 = (0..4).map(|j| logits[j].exp() / z * vt.get(&[j, c])).sum();
                assert!((g.value(out).get(&[i, c]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn window_partition_shapes_and_round_trip() {
        let mut g = Graph::new();
        let t = Tensor::randn(&[1, 3, 16, 16], 1.0, &mut rng());
        let x = g.constant(t.clone());
        let one = g.window_partition(x, 1).unwrap();
        assert_eq!(g.value(one), &t);
        let p = g.window_partition(x, 4).unwrap();
        assert_eq!(g.shape(p), &[16, 3, 4, 4]);
        // Window (1, 2) holds rows 4..8, cols 8..12.
        assert_eq!(g.value(p).get(&[6, 2, 1, 3]), t.get(&[0, 2, 5, 11]));
        let m = g.window_merge(p, 4).unwrap();
        assert_eq!(g.value(m), &t);
        assert!(g.window_partition(x, 3).is_err());
    }

    #[test]
    fn adaptive_pool_cases() {
        let mut g = Graph::new();
        let t = Tensor::randn(&[2, 4, 4], 1.0, &mut rng());
        let x = g.constant(t.clone());
        let same = g.adaptive_avg_pool(x, 4, 4).unwrap();
        assert_eq!(g.value(same), &t);
        let q = g.adaptive_avg_pool(x, 2, 2).unwrap();
        let want = (t.get(&[1, 2, 0]) + t.get(&[1, 2, 1]) + t.get(&[1, 3, 0]) + t.get(&[1, 3, 1])) / 4.0;
        assert!((g.value(q).get(&[1, 1, 0]) - want).abs() < 1e-15);
        let c = g.constant(Tensor::full(&[1, 5, 7], 0.3));
        let pc = g.adaptive_avg_pool(c, 3, 3).unwrap();
        assert!(g.value(pc).data().iter().all(|v| (v - 0.3).abs() < 1e-15));
        assert!(g.adaptive_avg_pool(x, 5, 5).is_err());
    }

    #[test]
    fn upsample_ramp_matches_bilinear_weights() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, 3], vec![0.0, 1.0, 2.0]).unwrap());
        let y = g.upsample2x(x).unwrap();
        assert_eq!(g.shape(y), &[2, 6]);
        let want = [0.0, 0.25, 0.75, 1.25, 1.75, 2.0];
        for (a, b) in g.value(y).data()[..6].iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_diff_reflects_at_border() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap());
        let dx = g.forward_diff(x, DiffAxis::Horizontal).unwrap();
        assert_eq!(g.value(dx).data(), &[1.0, -1.0, 1.0, -1.0]);
        let dy = g.forward_diff(x, DiffAxis::Vertical).unwrap();
        assert_eq!(g.value(dy).data(), &[0.0; 4]);
    }

    #[test]
    fn normalize_minmax_edges() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, 3], vec![0.2, 0.5, 0.8]).unwrap());
        let y = g.normalize_minmax(x).unwrap();
        let d = g.value(y).data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.5).abs() < 1e-15);
        assert_eq!(d[2], 1.0);
        let c = g.constant(Tensor::full(&[2, 2], 0.7));
        let z = g.normalize_minmax(c).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_split_inverse() {
        let mut g = Graph::new();
        let t = Tensor::randn(&[2, 5, 3], 1.0, &mut rng());
        let x = g.constant(t.clone());
        let parts = g.split(x, 1, &[2, 1, 2]).unwrap();
        let back = g.concat(&parts, 1).unwrap();
        assert_eq!(g.value(back), &t);
    }

    fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let w = g.constant(Tensor::randn(g.shape(y), 1.0, &mut r));
        let p = g.mul(y, w)?;
        g.sum(p)
    }

    fn check_unary(op: fn(&mut Graph, Var) -> Result<Var>) {
        let x = Tensor::randn(&[3, 5], 1.0, &mut rng());
        let report = grad_check(
            |g, v| {
                let y = op(g, v[0])?;
                weighted_sum(g, y, 5)
            },
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn elementwise_gradients() {
        check_unary(|g, x| g.tanh(x));
        check_unary(|g, x| g.sigmoid(x));
        check_unary(|g, x| g.gelu(x));
        check_unary(|g, x| g.exp(x));
        check_unary(|g, x| g.square(x));
        check_unary(|g, x| g.softmax(x));
        check_unary(|g, x| g.upsample2x(x));
        check_unary(|g, x| g.forward_diff(x, DiffAxis::Vertical));
        check_unary(|g, x| g.forward_diff(x, DiffAxis::Horizontal));
        check_unary(|g, x| g.normalize_minmax(x));
        check_unary(|g, x| g.adaptive_avg_pool(x, 2, 3));
        check_unary(|g, x| g.permute(x, &[1, 0]));
        check_unary(|g, x| g.mean_axis(x, 0));
    }

    #[test]
    fn binary_broadcast_gradients() {
        let mut r = rng();
        let a = Tensor::randn(&[2, 3, 4], 1.0, &mut r);
        let b = Tensor::rand_uniform(&[3, 1], 0.5, 1.5, &mut r);
        for kind in 0..4 {
            let report = grad_check(
                |g, v| {
                    let y = match kind {
                        0 => g.add(v[0], v[1]),
                        1 => g.sub(v[0], v[1]),
                        2 => g.mul(v[0], v[1]),
                        _ => g.div(v[0], v[1]),
                    }?;
                    weighted_sum(g, y, 9)
                },
                &[a.clone(), b.clone()],
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.pass, "kind {kind}: {report:?}");
        }
    }

    #[test]
    fn matmul_and_linear_gradients() {
        let mut r = rng();
        let a = Tensor::randn(&[2, 3, 4], 1.0, &mut r);
        let b = Tensor::randn(&[2, 4, 5], 1.0, &mut r);
        let w = Tensor::randn(&[4, 5], 1.0, &mut r);
        let bias = Tensor::randn(&[5], 1.0, &mut r);
        let opts = GradCheckOptions::default();
        let rep = grad_check(
            |g, v| {
                let y = g.matmul(v[0], v[1])?;
                weighted_sum(g, y, 1)
            },
            &[a.clone(), b.clone()],
            &opts,
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
        let bt = Tensor::randn(&[2, 5, 4], 1.0, &mut r);
        let rep = grad_check(
            |g, v| {
                let y = g.matmul_nt(v[0], v[1])?;
                weighted_sum(g, y, 2)
            },
            &[a.clone(), bt],
            &opts,
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
        let rep = grad_check(
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                weighted_sum(g, y, 3)
            },
            &[a, w, bias],
            &opts,
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn layer_norm_and_attention_gradients() {
        let mut r = rng();
        let x = Tensor::randn(&[4, 6], 1.0, &mut r);
        let gamma = Tensor::rand_uniform(&[6], 0.5, 1.5, &mut r);
        let beta = Tensor::randn(&[6], 1.0, &mut r);
        let opts = GradCheckOptions::default();
        let rep = grad_check(
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(g, y, 4)
            },
            &[x, gamma, beta],
            &opts,
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
        let q = Tensor::randn(&[2, 3, 4], 1.0, &mut r);
        let k = Tensor::randn(&[2, 5, 4], 1.0, &mut r);
        let v = Tensor::randn(&[2, 5, 3], 1.0, &mut r);
        let rep = grad_check(
            |g, vs| {
                let y = g.attention(vs[0], vs[1], vs[2])?;
                weighted_sum(g, y, 6)
            },
            &[q, k, v],
            &opts,
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
    }
}
