//! Naive reference computations shared by the integration tests.
#![allow(dead_code)]

use lfrt_core::net::angular::{AngularBlock, AngularConfig};
use lfrt_core::net::layers::{Init, LayerNorm, Linear};
use lfrt_core::net::spatial::{SpatialBlock, SpatialConfig};
use lfrt_core::net::ParamStore;
use lfrt_core::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adds N(0, std²) noise to every parameter so no block is the identity.
pub fn perturb(store: &mut ParamStore, std: f64, seed: u64) {
    let mut r = rng(seed);
    let n = Normal::new(0.0, std).unwrap();
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += n.sample(&mut r);
        }
    }
}

pub fn angular_block(c: usize, cfg: AngularConfig, seed: u64) -> (AngularBlock, ParamStore) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let block = {
        let mut init = Init::new(&mut store, &mut r);
        AngularBlock::new(&mut init, "ang", c, cfg, 1e-5).unwrap()
    };
    perturb(&mut store, 0.3, seed + 1);
    (block, store)
}

pub fn spatial_block(c: usize, seed: u64) -> (SpatialBlock, ParamStore) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let block = {
        let mut init = Init::new(&mut store, &mut r);
        SpatialBlock::new(&mut init, "sp", c, &SpatialConfig::default(), 1e-5).unwrap()
    };
    perturb(&mut store, 0.3, seed + 1);
    (block, store)
}

pub fn run_angular(block: &AngularBlock, store: &ParamStore, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let y = block.forward(&mut g, &p, xv).unwrap();
    g.value(y).clone()
}

pub fn run_spatial(block: &SpatialBlock, store: &ParamStore, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let y = block.forward(&mut g, &p, xv).unwrap();
    g.value(y).clone()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

fn layer_norm(ln: &LayerNorm, store: &ParamStore, x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let (gamma, beta) = (store.get(ln.gamma).data(), store.get(ln.beta).data());
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - mu) / (var + ln.eps).sqrt() * gamma[j] + beta[j])
        .collect()
}

fn linear(l: &Linear, store: &ParamStore, x: &[f64]) -> Vec<f64> {
    let w = store.get(l.weight);
    let d_out = w.shape()[1];
    (0..d_out)
        .map(|o| {
            let b = l.bias.map_or(0.0, |b| store.get(b).data()[o]);
            b + x.iter().enumerate().map(|(i, v)| v * w.data()[i * d_out + o]).sum::<f64>()
        })
        .collect()
}

/// Row-softmax weighted sum: `Σ_j softmax(q·k_j / √d)_j v_j`.
fn attend(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let scale = 1.0 / (q.len() as f64).sqrt();
    let s: Vec<f64> = keys
        .iter()
        .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut out = vec![0.0; values[0].len()];
    for (wj, v) in e.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += wj / z * x;
        }
    }
    out
}

fn span(i: usize, n: usize, p: usize) -> std::ops::Range<usize> {
    i * n / p..((i + 1) * n).div_ceil(p)
}

/// Dense angular block on `[uv, c, h, w]`.
pub fn angular_oracle(block: &AngularBlock, store: &ParamStore, x: &Tensor) -> Tensor {
    let s = x.shape();
    let (uv, c, h, w) = (s[0], s[1], s[2], s[3]);
    let AngularConfig { m, p, .. } = block.cfg;
    let cg = c / m;
    let at = |a: usize, ch: usize, y: usize, xx: usize| x.data()[((a * c + ch) * h + y) * w + xx];
    let mut cat = vec![0.0; uv * c * h * w];
    for (gi, grp) in block.groups.iter().enumerate() {
        let mut qs = Vec::new();
        let mut ks = Vec::new();
        for a in 0..uv {
            let mut tok = Vec::with_capacity(cg * p * p);
            for ch in 0..cg {
                for i in 0..p {
                    for j in 0..p {
                        let (rs, cs) = (span(i, h, p), span(j, w, p));
                        let cnt = (rs.len() * cs.len()) as f64;
                        let mut acc = 0.0;
                        for y in rs.clone() {
                            for xx in cs.clone() {
                                acc += at(a, gi * cg + ch, y, xx);
                            }
                        }
                        tok.push(acc / cnt);
                    }
                }
            }
            let tok = layer_norm(&grp.norm, store, &tok);
            qs.push(linear(&grp.wq, store, &tok));
            ks.push(linear(&grp.wk, store, &tok));
        }
        let values: Vec<Vec<f64>> = (0..uv)
            .map(|b| {
                let mut v = Vec::with_capacity(cg * h * w);
                for ch in 0..cg {
                    for y in 0..h {
                        for xx in 0..w {
                            v.push(at(b, gi * cg + ch, y, xx));
                        }
                    }
                }
                v
            })
            .collect();
        for a in 0..uv {
            let o = attend(&qs[a], &ks, &values);
            let base = (a * c + gi * cg) * h * w;
            cat[base..base + cg * h * w].copy_from_slice(&o);
        }
    }
    let fw = store.get(block.fuse.weight).data();
    let fb = store.get(block.fuse.bias.unwrap()).data();
    let mut out = x.data().to_vec();
    for a in 0..uv {
        for o in 0..c {
            for px in 0..h * w {
                let mut acc = fb[o];
                for i in 0..c {
                    acc += fw[o * c + i] * cat[(a * c + i) * h * w + px];
                }
                out[(a * c + o) * h * w + px] += acc;
            }
        }
    }
    Tensor::from_vec(s, out).unwrap()
}

fn reflect(i: isize, n: usize) -> usize {
    let mut i = i;
    while i < 0 || i >= n as isize {
        i = if i < 0 { -i } else { 2 * (n as isize - 1) - i };
    }
    i as usize
}

/// Dense per-window spatial block on `[1, c, h, w]`.
pub fn spatial_oracle(block: &SpatialBlock, store: &ParamStore, x: &Tensor) -> Tensor {
    let s = x.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let ng = block.groups.len();
    let dq = 2 * c / ng;
    let px = |y: usize, xx: usize| -> Vec<f64> { (0..c).map(|ch| x.data()[(ch * h + y) * w + xx]).collect() };
    let tokens: Vec<Vec<f64>> = (0..h * w).map(|i| px(i / w, i % w)).collect();
    let xn: Vec<Vec<f64>> = tokens.iter().map(|t| layer_norm(&block.norm1, store, t)).collect();
    let q: Vec<Vec<f64>> = xn.iter().map(|t| linear(&block.wq, store, t)).collect();

    let mut cat = vec![vec![0.0; 2 * c]; h * w];
    for (gi, grp) in block.groups.iter().enumerate() {
        let (n, t) = (grp.n, grp.t);
        let (hs, ws) = (h / n, w / n);
        let (hr, wr) = (hs.div_ceil(t), ws.div_ceil(t));
        let rw = store.get(grp.reduce.weight).data();
        let rb = store.get(grp.reduce.bias.unwrap()).data();
        let dr = rb.len();
        for wy in 0..n {
            for wx in 0..n {
                let src = |ch: usize, yy: usize, xx: usize| {
                    if yy < hs && xx < ws {
                        xn[(wy * hs + yy) * w + wx * ws + xx][ch]
                    } else {
                        0.0
                    }
                };
                let mut keys = Vec::new();
                let mut vals = Vec::new();
                for ry in 0..hr {
                    for rx in 0..wr {
                        let red: Vec<f64> = (0..dr)
                            .map(|o| {
                                let mut acc = rb[o];
                                for ch in 0..c {
                                    for ky in 0..t {
                                        for kx in 0..t {
                                            acc += rw[((o * c + ch) * t + ky) * t + kx] * src(ch, ry * t + ky, rx * t + kx);
                                        }
                                    }
                                }
                                acc
                            })
                            .collect();
                        let red: Vec<f64> = layer_norm(&grp.norm, store, &red).into_iter().map(gelu).collect();
                        keys.push(linear(&grp.wk, store, &red));
                        vals.push(linear(&grp.wv, store, &red));
                    }
                }
                for yy in 0..hs {
                    for xx in 0..ws {
                        let i = (wy * hs + yy) * w + wx * ws + xx;
                        let o = attend(&q[i][gi * dq..(gi + 1) * dq], &keys, &vals);
                        cat[i][gi * dq..(gi + 1) * dq].copy_from_slice(&o);
                    }
                }
            }
        }
    }

    let y: Vec<Vec<f64>> = tokens
        .iter()
        .zip(&cat)
        .map(|(t, cv)| t.iter().zip(linear(&block.fuse, store, cv)).map(|(a, b)| a + b).collect())
        .collect();
    let hid: Vec<Vec<f64>> = y
        .iter()
        .map(|t| linear(&block.ffn_in, store, &layer_norm(&block.norm2, store, t)))
        .collect();
    let hd = hid[0].len();
    let dw = store.get(block.ffn_dw.weight);
    let k = dw.shape()[2];
    let pad = (k / 2) as isize;
    let db = store.get(block.ffn_dw.bias.unwrap()).data();
    let mut out = vec![0.0; c * h * w];
    for yy in 0..h {
        for xx in 0..w {
            let act: Vec<f64> = (0..hd)
                .map(|ch| {
                    let mut acc = db[ch];
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = reflect(yy as isize + ky as isize - pad, h);
                            let sx = reflect(xx as isize + kx as isize - pad, w);
                            acc += dw.data()[(ch * k + ky) * k + kx] * hid[sy * w + sx][ch];
                        }
                    }
                    gelu(acc)
                })
                .collect();
            let f = linear(&block.ffn_out, store, &act);
            let i = yy * w + xx;
            for ch in 0..c {
                out[(ch * h + yy) * w + xx] = y[i][ch] + f[ch];
            }
        }
    }
    Tensor::from_vec(s, out).unwrap()
}

/// Mean SSIM of two planes by direct 11×11 Gaussian-window sums at every
/// valid position.
pub fn ssim_reference(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    const K: usize = 11;
    let g: Vec<f64> = (0..K).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let mut win = vec![0.0; K * K];
    for i in 0..K {
        for j in 0..K {
            win[i * K + j] = g[i] * g[j];
        }
    }
    let z: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= z);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - K {
        for x in 0..=w - K {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let wt = win[i * K + j];
                    let (p, q) = (a[(y + i) * w + x + j], b[(y + i) * w + x + j]);
                    ma += wt * p;
                    mb += wt * q;
                    saa += wt * p * p;
                    sbb += wt * q * q;
                    sab += wt * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
