//! Plane-level filtering kernels shared by the light-field ops and the tensor engine.

/// Anti-alias kernel applied before 2× decimation.
pub const ANTIALIAS_SIZE: usize = 5;
pub const ANTIALIAS_SIGMA: f64 = 1.0;
/// Low-pass kernel whose residual defines the high-frequency target.
pub const HIGHFREQ_SIZE: usize = 5;
pub const HIGHFREQ_SIGMA: f64 = 1.5;

/// Maps any integer coordinate into `[0, n)` by mirror reflection without
/// repeating the edge sample (`-1 -> 1`, `n -> n - 2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Normalized 1-D Gaussian taps; the 2-D kernel is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "same"-size filtering of an `h × w` plane with reflect borders.
pub fn filter_plane(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                acc += k * row[reflect_index(x as isize + t as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (t, &k) in taps.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            for (o, s) in out[y * w..(y + 1) * w].iter_mut().zip(src) {
                *o += k * s;
            }
        }
    }
    out
}

/// Bilinear 2× taps along one axis: for each of the `2n` outputs,
/// `(i0, i1, weight of i1)`.
///
/// Output `o` samples source coordinate `max(0, (o + 0.5) / 2 - 0.5)`, the
/// half-pixel-center convention; indices clamp at the far border.
pub fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2× upsampling of an `h × w` plane.
pub fn upsample_plane(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let wo = 2 * w;
    let mut out = vec![0.0; 4 * h * w];
    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
            let top = (1.0 - wx) * plane[y0 * w + x0] + wx * plane[y0 * w + x1];
            let bot = (1.0 - wx) * plane[y1 * w + x0] + wx * plane[y1 * w + x1];
            out[oy * wo + ox] = (1.0 - wy) * top + wy * bot;
        }
    }
    out
}

/// Anti-aliased 2× decimation: Gaussian pre-filter, then keep even samples.
pub fn downsample_plane(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let taps = gaussian_taps(ANTIALIAS_SIZE, ANTIALIAS_SIGMA);
    let blurred = filter_plane(plane, h, w, &taps);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(ho * wo);
    for y in 0..ho {
        for x in 0..wo {
            out.push(blurred[2 * y * w + 2 * x]);
        }
    }
    out
}
