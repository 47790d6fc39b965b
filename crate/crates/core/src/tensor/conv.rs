use super::graph::{Graph, Var};
use super::linalg::{gemm, MatLayout};
use super::Tensor;
use crate::error::{Error, Result};
use crate::lightfield::filter::reflect_index;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PaddingMode {
    #[default]
    Reflect,
    Zero,
}

/// Per-side padding of the two spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
    pub mode: PaddingMode,
}

impl Padding {
    pub fn none() -> Self {
        Self::default()
    }

    /// `k / 2` on every side, which keeps the size for odd `k` at stride 1.
    pub fn same(k: usize, mode: PaddingMode) -> Self {
        let p = k / 2;
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
            mode,
        }
    }

    fn source(&self, i: isize, n: usize) -> Option<usize> {
        if (0..n as isize).contains(&i) {
            return Some(i as usize);
        }
        match self.mode {
            PaddingMode::Zero => None,
            PaddingMode::Reflect => Some(reflect_index(i, n)),
        }
    }
}

/// Source row/col for every (kernel tap, output position) pair.
fn tap_map(k: usize, out: usize, stride: usize, before: usize, n: usize, pad: &Padding) -> Vec<Option<usize>> {
    let mut m = Vec::with_capacity(k * out);
    for t in 0..k {
        for o in 0..out {
            let i = (o * stride + t) as isize - before as isize;
            m.push(pad.source(i, n));
        }
    }
    m
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

impl ConvGeom {
    fn im2col(&self, img: &[f64], out: &mut [f64]) {
        let p = self.ho * self.wo;
        for c in 0..self.cin {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    let dst = &mut out[row..row + p];
                    for oy in 0..self.ho {
                        let src_y = self.rows[ky * self.ho + oy];
                        let d = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        match src_y {
                            None => d.iter_mut().for_each(|v| *v = 0.0),
                            Some(y) => {
                                let line = &plane[y * self.w..(y + 1) * self.w];
                                for (ox, v) in d.iter_mut().enumerate() {
                                    *v = self.cols[kx * self.wo + ox].map_or(0.0, |x| line[x]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let p = self.ho * self.wo;
        for c in 0..self.cin {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    let src = &cols[row..row + p];
                    for oy in 0..self.ho {
                        let Some(y) = self.rows[ky * self.ho + oy] else {
                            continue;
                        };
                        for ox in 0..self.wo {
                            if let Some(x) = self.cols[kx * self.wo + ox] {
                                plane[y * self.w + x] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Grouped 2-D cross-correlation.
    ///
    /// `x` is `[n, c_in, h, w]`, `kernel` is `[c_out, c_in / groups, kh, kw]`
    /// and `bias` is `[c_out]`. Output extents are
    /// `floor((h + top + bottom - kh) / stride) + 1` (likewise for `w`).
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
        groups: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::Shape(format!("conv2d: input {xs:?}, kernel {ks:?}")));
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_g, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if groups == 0 || stride == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(Error::Shape(format!(
                "conv2d: input {xs:?}, kernel {ks:?}, groups {groups}, stride {stride}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::Shape(format!(
                    "conv2d bias {:?} for {cout} output channels",
                    self.shape(b)
                )));
            }
        }
        let hp = h + padding.top + padding.bottom;
        let wp = w + padding.left + padding.right;
        if hp < kh || wp < kw {
            return Err(Error::Shape(format!(
                "conv2d: padded input {hp}x{wp} smaller than kernel {kh}x{kw}"
            )));
        }
        let ho = (hp - kh) / stride + 1;
        let wo = (wp - kw) / stride + 1;
        let geom = ConvGeom {
            cin,
            h,
            w,
            kh,
            kw,
            ho,
            wo,
            rows: tap_map(kh, ho, stride, padding.top, h, &padding),
            cols: tap_map(kw, wo, stride, padding.left, w, &padding),
        };
        let cout_g = cout / groups;
        let kdim = cin_g * kh * kw;
        let p = ho * wo;

        let mut data = vec![0.0; n * cout * p];
        {
            let xv = &self.value(x).data;
            let kv = &self.value(kernel).data;
            let mut colbuf = vec![0.0; cin * kh * kw * p];
            for b in 0..n {
                geom.im2col(&xv[b * cin * h * w..(b + 1) * cin * h * w], &mut colbuf);
                for gi in 0..groups {
                    gemm(
                        &kv[gi * cout_g * kdim..(gi + 1) * cout_g * kdim],
                        MatLayout::row_major(cout_g, kdim),
                        &colbuf[gi * kdim * p..(gi + 1) * kdim * p],
                        MatLayout::row_major(kdim, p),
                        &mut data[(b * cout + gi * cout_g) * p..(b * cout + (gi + 1) * cout_g) * p],
                        0.0,
                    );
                }
            }
            if let Some(bv) = bias.map(|b| &self.value(b).data) {
                for (i, chunk) in data.chunks_mut(p).enumerate() {
                    let add = bv[i % cout];
                    chunk.iter_mut().for_each(|v| *v += add);
                }
            }
        }

        let mut parents = vec![x, kernel];
        parents.extend(bias);
        self.record(
            Tensor {
                shape: vec![n, cout, ho, wo],
                data,
            },
            &parents,
            Box::new(move |pv, _, g, need| {
                let (xv, kv) = (&pv[0].data, &pv[1].data);
                let mut gx = need[0].then(|| Tensor::zeros(&pv[0].shape));
                let mut gk = need[1].then(|| Tensor::zeros(&pv[1].shape));
                let mut colbuf = vec![0.0; cin * kh * kw * p];
                let mut gcol = vec![0.0; cin * kh * kw * p];
                for b in 0..n {
                    let gout = &g.data[b * cout * p..(b + 1) * cout * p];
                    if let Some(gk) = gk.as_mut() {
                        geom.im2col(&xv[b * cin * h * w..(b + 1) * cin * h * w], &mut colbuf);
                        for gi in 0..groups {
                            gemm(
                                &gout[gi * cout_g * p..(gi + 1) * cout_g * p],
                                MatLayout::row_major(cout_g, p),
                                &colbuf[gi * kdim * p..(gi + 1) * kdim * p],
                                MatLayout::transposed(kdim, p),
                                &mut gk.data[gi * cout_g * kdim..(gi + 1) * cout_g * kdim],
                                1.0,
                            );
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        for gi in 0..groups {
                            gemm(
                                &kv[gi * cout_g * kdim..(gi + 1) * cout_g * kdim],
                                MatLayout::transposed(cout_g, kdim),
                                &gout[gi * cout_g * p..(gi + 1) * cout_g * p],
                                MatLayout::row_major(cout_g, p),
                                &mut gcol[gi * kdim * p..(gi + 1) * kdim * p],
                                0.0,
                            );
                        }
                        geom.col2im(&gcol, &mut gx.data[b * cin * h * w..(b + 1) * cin * h * w]);
                    }
                }
                let mut out = vec![gx, gk];
                if pv.len() == 3 {
                    out.push(need[2].then(|| {
                        let mut gb = Tensor::zeros(&[cout]);
                        for (i, chunk) in g.data.chunks(p).enumerate() {
                            gb.data[i % cout] += chunk.iter().sum::<f64>();
                        }
                        gb
                    }));
                }
                out
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Nested-loop oracle with zero padding semantics disabled (valid conv).
    fn naive_valid(x: &Tensor, k: &Tensor, stride: usize) -> Tensor {
        let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, _, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        let ho = (h - kh) / stride + 1;
        let wo = (w - kw) / stride + 1;
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    acc += x.get(&[b, ci, oy * stride + ky, ox * stride + kx])
                                        * k.get(&[co, ci, ky, kx]);
                                }
                            }
                        }
                        out.set(&[b, co, oy, ox], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::randn(&[1, 3, 5, 5], 1.0, &mut r);
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            k.set(&[c, c, 0, 0], 1.0);
        }
        let mut g = Graph::new();
        let (x, kv) = (g.constant(t.clone()), g.constant(k));
        let y = g.conv2d(x, kv, None, 1, Padding::none(), 1).unwrap();
        assert_eq!(g.value(y), &t);
    }

    #[test]
    fn depthwise_box_filter_keeps_constants() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 4, 6, 6], 0.42));
        let k = g.constant(Tensor::full(&[4, 1, 3, 3], 1.0 / 9.0));
        let y = g.conv2d(x, k, None, 1, Padding::same(3, PaddingMode::Reflect), 4).unwrap();
        assert_eq!(g.shape(y), &[1, 4, 6, 6]);
        assert!(g.value(y).data().iter().all(|v| (v - 0.42).abs() < 1e-15));
    }

    #[test]
    fn strided_conv_matches_nested_loops() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let xt = Tensor::randn(&[1, 1, 8, 8], 1.0, &mut r);
        let kt = Tensor::randn(&[1, 1, 2, 2], 1.0, &mut r);
        let mut g = Graph::new();
        let (x, k) = (g.constant(xt.clone()), g.constant(kt.clone()));
        let y = g.conv2d(x, k, None, 2, Padding::none(), 1).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 4, 4]);
        assert!(g.value(y).max_abs_diff(&naive_valid(&xt, &kt, 2)) < 1e-12);
    }

    #[test]
    fn rejects_bad_groups() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let k = g.constant(Tensor::zeros(&[2, 1, 3, 3]));
        assert!(g.conv2d(x, k, None, 1, Padding::none(), 2).is_err());
    }

    #[test]
    fn conv_gradients_all_paddings() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[2, 4, 5, 6], 1.0, &mut r);
        let k = Tensor::randn(&[6, 2, 3, 3], 0.5, &mut r);
        let b = Tensor::randn(&[6], 0.5, &mut r);
        for (stride, pad) in [
            (1, Padding::same(3, PaddingMode::Reflect)),
            (2, Padding::same(3, PaddingMode::Zero)),
            (1, Padding { top: 0, bottom: 2, left: 1, right: 0, mode: PaddingMode::Zero }),
        ] {
            let rep = grad_check(
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad, 2)?;
                    let s = g.shape(y).to_vec();
                    let wv = g.constant(Tensor::randn(&s, 1.0, &mut ChaCha8Rng::seed_from_u64(7)));
                    let p = g.mul(y, wv)?;
                    g.sum(p)
                },
                &[x.clone(), k.clone(), b.clone()],
                // linear in every single coordinate, so a wide step is exact
                &GradCheckOptions {
                    eps: 1e-3,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(rep.pass, "stride {stride} {pad:?}: {rep:?}");
        }
    }
}
