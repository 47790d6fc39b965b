//! Light-field containers and the pattern, scale and slice operations on them.
//!
//! A [`LightField`] stores its sub-aperture views as a 5-D array indexed
//! `(u, v, channel, y, x)`, angular row-major. A [`PlenopticImage`] is the
//! interleaved sensor layout of the same samples: plenoptic pixel
//! `(y·U + a, x·V + b)` is pixel `(y, x)` of view `(a, b)`.

pub mod filter;
pub mod io;

use ndarray::{s, Array2, Array3, Array5, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use filter::{downsample_plane, filter_plane, gaussian_taps, upsample_plane, HIGHFREQ_SIGMA, HIGHFREQ_SIZE};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ColorSpace {
    #[default]
    #[serde(rename = "RGB")]
    Rgb,
    #[serde(rename = "Y")]
    Y,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Rgb => 3,
            ColorSpace::Y => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LightField {
    views: Array5<f64>,
    color: ColorSpace,
    white_level: f64,
}

impl LightField {
    /// Wraps a `(u, v, c, h, w)` array. Every extent must be at least 1 and
    /// every value finite.
    pub fn new(views: Array5<f64>, color: ColorSpace, white_level: f64) -> Result<Self> {
        let dims = views.dim();
        if [dims.0, dims.1, dims.2, dims.3, dims.4].contains(&0) {
            return Err(Error::Dimension(format!("light field with empty extent {dims:?}")));
        }
        if dims.2 != color.channels() {
            return Err(Error::Dimension(format!(
                "{color:?} light field needs {} channels, got {}",
                color.channels(),
                dims.2
            )));
        }
        if !views.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericFault("light field contains non-finite values".into()));
        }
        if !(white_level > 0.0) {
            return Err(Error::InvalidArgument(format!("white level {white_level}")));
        }
        Ok(Self {
            views,
            color,
            white_level,
        })
    }

    /// Like [`LightField::new`], clamping every value into `[0, 1]`.
    pub fn ingest(mut views: Array5<f64>, color: ColorSpace, white_level: f64) -> Result<Self> {
        views.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(views, color, white_level)
    }

    pub fn zeros(angular: (usize, usize), color: ColorSpace, spatial: (usize, usize)) -> Result<Self> {
        Self::new(
            Array5::zeros((angular.0, angular.1, color.channels(), spatial.0, spatial.1)),
            color,
            1.0,
        )
    }

    pub fn views(&self) -> &Array5<f64> {
        &self.views
    }

    pub fn into_views(self) -> Array5<f64> {
        self.views
    }

    pub fn color(&self) -> ColorSpace {
        self.color
    }

    pub fn white_level(&self) -> f64 {
        self.white_level
    }

    pub fn angular_dims(&self) -> (usize, usize) {
        let d = self.views.dim();
        (d.0, d.1)
    }

    pub fn spatial_dims(&self) -> (usize, usize) {
        let d = self.views.dim();
        (d.3, d.4)
    }

    pub fn channels(&self) -> usize {
        self.views.dim().2
    }

    pub fn view_count(&self) -> usize {
        let (u, v) = self.angular_dims();
        u * v
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.views.sum() / self.views.len() as f64
    }

    fn with_views(&self, views: Array5<f64>) -> Result<Self> {
        Self::new(views, self.color, self.white_level)
    }

    /// Applies `f` to every `(h, w)` plane, producing planes of `out_dims`.
    fn map_planes(&self, out_dims: (usize, usize), f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let (u, v, c, h, w) = self.views.dim();
        let mut out = Array5::zeros((u, v, c, out_dims.0, out_dims.1));
        let mut buf = Vec::with_capacity(h * w);
        for a in 0..u {
            for b in 0..v {
                for ch in 0..c {
                    buf.clear();
                    buf.extend(self.views.slice(s![a, b, ch, .., ..]).iter().copied());
                    let res = f(&buf);
                    let plane = Array2::from_shape_vec(out_dims, res).expect("plane size");
                    out.slice_mut(s![a, b, ch, .., ..]).assign(&plane);
                }
            }
        }
        self.with_views(out)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        self.with_views(self.views.mapv(|x| x * factor))
    }

    /// The centered `a × a` sub-grid of views.
    pub fn central_crop_views(&self, a: usize) -> Result<Self> {
        let (u, v) = self.angular_dims();
        if a == 0 || a > u || a > v {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {a}x{a} views from a {u}x{v} light field"
            )));
        }
        if (u - a) % 2 != 0 || (v - a) % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "asymmetric crop: {u}x{v} views to {a}x{a}"
            )));
        }
        let (ou, ov) = ((u - a) / 2, (v - a) / 2);
        self.with_views(self.views.slice(s![ou..ou + a, ov..ov + a, .., .., ..]).to_owned())
    }

    /// The `h × w` window at `(y, x)` of every view.
    pub fn crop_spatial(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        let (sh, sw) = self.spatial_dims();
        if h == 0 || w == 0 || y + h > sh || x + w > sw {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w} at ({y}, {x}) exceeds {sh}x{sw} views"
            )));
        }
        self.with_views(self.views.slice(s![.., .., .., y..y + h, x..x + w]).to_owned())
    }

    /// Gaussian pre-filter (5×5, σ = 1, reflect) followed by 2× decimation.
    pub fn downsample_half(&self) -> Result<Self> {
        let (h, w) = self.spatial_dims();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!("downsample_half needs even dims, got {h}x{w}")));
        }
        self.map_planes((h / 2, w / 2), |p| downsample_plane(p, h, w))
    }

    /// Bilinear 2× upsampling.
    pub fn upsample2x(&self) -> Result<Self> {
        let (h, w) = self.spatial_dims();
        self.map_planes((2 * h, 2 * w), |p| upsample_plane(p, h, w))
    }

    /// `L - blur(L)` with the 5×5, σ = 1.5 Gaussian and reflect borders.
    pub fn highfreq_target(&self) -> Result<Self> {
        let (h, w) = self.spatial_dims();
        let taps = gaussian_taps(HIGHFREQ_SIZE, HIGHFREQ_SIGMA);
        self.map_planes((h, w), |p| {
            let blurred = filter_plane(p, h, w, &taps);
            p.iter().zip(blurred).map(|(x, b)| x - b).collect()
        })
    }

    /// BT.601 luma of an RGB field as a `(u, v, 1, h, w)` field; a Y field is
    /// returned as is.
    pub fn luma(&self) -> Result<Self> {
        match self.color {
            ColorSpace::Y => Ok(self.clone()),
            ColorSpace::Rgb => {
                let (u, v, _, h, w) = self.views.dim();
                let mut out = Array5::zeros((u, v, 1, h, w));
                for (ch, wt) in LUMA_WEIGHTS.iter().enumerate() {
                    let plane = self.views.index_axis(Axis(2), ch);
                    out.index_axis_mut(Axis(2), 0).scaled_add(*wt, &plane);
                }
                Self::new(out, ColorSpace::Y, self.white_level)
            }
        }
    }

    pub fn extract_epi(&self, axis: EpiAxis, fixed_view_index: usize, fixed_spatial: usize) -> Result<Epi> {
        let (u, v, c, h, w) = self.views.dim();
        let out_of_range = |what: &str, i: usize, n: usize| {
            Error::IndexOutOfRange(format!("{what} {i} not below {n}"))
        };
        let values = match axis {
            EpiAxis::Horizontal => {
                if fixed_view_index >= u {
                    return Err(out_of_range("angular row", fixed_view_index, u));
                }
                if fixed_spatial >= h {
                    return Err(out_of_range("spatial row", fixed_spatial, h));
                }
                // (c, v, w)
                self.views
                    .slice(s![fixed_view_index, .., .., fixed_spatial, ..])
                    .permuted_axes([1, 0, 2])
                    .to_owned()
            }
            EpiAxis::Vertical => {
                if fixed_view_index >= v {
                    return Err(out_of_range("angular column", fixed_view_index, v));
                }
                if fixed_spatial >= w {
                    return Err(out_of_range("spatial column", fixed_spatial, w));
                }
                // (c, u, h)
                self.views
                    .slice(s![.., fixed_view_index, .., .., fixed_spatial])
                    .permuted_axes([1, 0, 2])
                    .to_owned()
            }
        };
        debug_assert_eq!(values.dim().0, c);
        Ok(Epi { axis, values })
    }

    /// Interleaves the views into the sensor layout.
    pub fn to_plenoptic(&self) -> PlenopticImage {
        let (u, v, c, h, w) = self.views.dim();
        let mut pixels = Array3::zeros((c, h * u, w * v));
        for ((a, b, ch, y, x), &val) in self.views.indexed_iter() {
            pixels[[ch, y * u + a, x * v + b]] = val;
        }
        PlenopticImage {
            pixels,
            grid: (u, v),
            white_level: self.white_level,
        }
    }

    /// Views as a `[u·v, c, h, w]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (u, v, c, h, w) = self.views.dim();
        let data = self.views.iter().copied().collect();
        Tensor::from_vec(&[u * v, c, h, w], data).expect("element count matches")
    }

    /// Inverse of [`LightField::to_tensor`] for the given angular grid.
    pub fn from_tensor(t: &Tensor, angular: (usize, usize), color: ColorSpace, white_level: f64) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != angular.0 * angular.1 {
            return Err(Error::Shape(format!(
                "tensor {s:?} is not a {}x{} view stack",
                angular.0, angular.1
            )));
        }
        let views = Array5::from_shape_vec((angular.0, angular.1, s[1], s[2], s[3]), t.data().to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(views, color, white_level)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpiAxis {
    /// Fixed angular row and spatial row; axes are (v, x).
    Horizontal,
    /// Fixed angular column and spatial column; axes are (u, y).
    Vertical,
}

/// Epipolar-plane image: `(channel, angular, spatial)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Epi {
    pub axis: EpiAxis,
    pub values: Array3<f64>,
}

impl Epi {
    pub fn angular_extent(&self) -> usize {
        self.values.dim().1
    }

    pub fn spatial_extent(&self) -> usize {
        self.values.dim().2
    }
}

/// Rectified raw sensor image, `(channel, rows, cols)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlenopticImage {
    pub pixels: Array3<f64>,
    /// Views per micro-image along rows and columns.
    pub grid: (usize, usize),
    pub white_level: f64,
}

impl PlenopticImage {
    pub fn new(pixels: Array3<f64>, grid: (usize, usize), white_level: f64) -> Result<Self> {
        let (_, rows, cols) = pixels.dim();
        if grid.0 == 0 || grid.1 == 0 || rows % grid.0 != 0 || cols % grid.1 != 0 {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} sensor is not divisible into {}x{} micro-images",
                grid.0, grid.1
            )));
        }
        Ok(Self {
            pixels,
            grid,
            white_level,
        })
    }

    /// A single-channel image.
    pub fn mono(pixels: Array2<f64>, grid: (usize, usize), white_level: f64) -> Result<Self> {
        Self::new(pixels.insert_axis(Axis(0)), grid, white_level)
    }

    pub fn rows(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn cols(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    /// De-interleaves into sub-aperture views.
    pub fn to_sai(&self, color: ColorSpace) -> Result<LightField> {
        let (c, rows, cols) = self.pixels.dim();
        let (u, v) = self.grid;
        if rows % u != 0 || cols % v != 0 {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} sensor is not divisible into {u}x{v} micro-images"
            )));
        }
        let (h, w) = (rows / u, cols / v);
        let mut views = Array5::zeros((u, v, c, h, w));
        for ((ch, r, col), &val) in self.pixels.indexed_iter() {
            views[[r % u, col % v, ch, r / u, col / v]] = val;
        }
        LightField::new(views, color, self.white_level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_lf(u: usize, v: usize, c: usize, h: usize, w: usize) -> LightField {
        let color = if c == 3 { ColorSpace::Rgb } else { ColorSpace::Y };
        let views = Array5::from_shape_fn((u, v, c, h, w), |(a, b, ch, y, x)| {
            ((a * 31 + b * 17 + ch * 7 + y * 3 + x) % 97) as f64 / 97.0
        });
        LightField::new(views, color, 1023.0).unwrap()
    }

    #[test]
    fn plenoptic_layout_matches_definition() {
        let mut px = Array2::zeros((4, 4));
        // macro (0,0), offset (1,0) -> sensor row 1, col 0
        px[[1, 0]] = 0.75;
        let p = PlenopticImage::mono(px, (2, 2), 1.0).unwrap();
        let lf = p.to_sai(ColorSpace::Y).unwrap();
        assert_eq!(lf.views()[[1, 0, 0, 0, 0]], 0.75);
        assert_eq!(lf.views().sum(), 0.75);
    }

    #[test]
    fn plenoptic_divisibility_enforced() {
        assert!(PlenopticImage::mono(Array2::zeros((5, 4)), (2, 2), 1.0).is_err());
    }

    #[test]
    fn nine_by_nine_to_central_seven() {
        let lf = ramp_lf(9, 9, 1, 4, 4);
        let p = lf.to_plenoptic();
        assert_eq!((p.rows(), p.cols()), (36, 36));
        let back = p.to_sai(ColorSpace::Y).unwrap();
        let c = back.central_crop_views(7).unwrap();
        assert_eq!(c.angular_dims(), (7, 7));
        for a in 0..7 {
            for b in 0..7 {
                assert_eq!(
                    c.views().slice(s![a, b, .., .., ..]),
                    lf.views().slice(s![a + 1, b + 1, .., .., ..])
                );
            }
        }
    }

    #[test]
    fn crop_edge_cases() {
        let lf = ramp_lf(7, 7, 1, 2, 2);
        assert_eq!(lf.central_crop_views(7).unwrap(), lf);
        let lf3 = ramp_lf(3, 3, 1, 2, 2);
        let one = lf3.central_crop_views(1).unwrap();
        assert_eq!(one.views().slice(s![0, 0, .., .., ..]), lf3.views().slice(s![1, 1, .., .., ..]));
        assert!(lf.central_crop_views(8).is_err());
        assert!(lf.central_crop_views(6).is_err());
    }

    #[test]
    fn downsample_shapes_and_constants() {
        let lf = LightField::new(Array5::from_elem((2, 2, 3, 16, 12), 0.5), ColorSpace::Rgb, 1.0).unwrap();
        let d = lf.downsample_half().unwrap();
        assert_eq!(d.views().dim(), (2, 2, 3, 8, 6));
        assert!(d.views().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let odd = LightField::new(Array5::zeros((1, 1, 1, 5, 4)), ColorSpace::Y, 1.0).unwrap();
        assert!(odd.downsample_half().is_err());
    }

    #[test]
    fn downsample_impulse_matches_direct_convolution() {
        let (h, w) = (12, 12);
        let mut views = Array5::zeros((1, 1, 1, h, w));
        views[[0, 0, 0, 6, 6]] = 1.0;
        let lf = LightField::new(views, ColorSpace::Y, 1.0).unwrap();
        let d = lf.downsample_half().unwrap();
        // Oracle: explicit 2-D kernel k(i)k(j), evaluated at even output sites.
        let t = gaussian_taps(5, 1.0);
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let (dy, dx) = (6 - 2 * oy as isize, 6 - 2 * ox as isize);
                let want = if dy.abs() <= 2 && dx.abs() <= 2 {
                    t[(dy + 2) as usize] * t[(dx + 2) as usize]
                } else {
                    0.0
                };
                assert!((d.views()[[0, 0, 0, oy, ox]] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn upsample_shapes_and_ramp() {
        let lf = LightField::new(Array5::from_elem((1, 2, 3, 4, 5), 0.3), ColorSpace::Rgb, 1.0).unwrap();
        let up = lf.upsample2x().unwrap();
        assert_eq!(up.views().dim(), (1, 2, 3, 8, 10));
        assert!(up.views().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let ramp = Array5::from_shape_vec((1, 1, 1, 1, 3), vec![0.0, 1.0, 2.0]).unwrap();
        let up = LightField::new(ramp, ColorSpace::Y, 1.0).unwrap().upsample2x().unwrap();
        let row: Vec<f64> = up.views().slice(s![0, 0, 0, 0, ..]).to_vec();
        assert_eq!(row, vec![0.0, 0.25, 0.75, 1.25, 1.75, 2.0]);
    }

    #[test]
    fn highfreq_constant_impulse_and_affine() {
        let c = LightField::new(Array5::from_elem((1, 1, 1, 8, 8), 0.7), ColorSpace::Y, 1.0).unwrap();
        assert!(c.highfreq_target().unwrap().views().iter().all(|&v| v == 0.0 || v.abs() < 1e-15));

        let mut views = Array5::zeros((1, 1, 1, 9, 9));
        views[[0, 0, 0, 4, 4]] = 1.0;
        let hf = LightField::new(views, ColorSpace::Y, 1.0).unwrap().highfreq_target().unwrap();
        let t = gaussian_taps(5, 1.5);
        for y in 0..9usize {
            for x in 0..9usize {
                let (dy, dx) = (y as isize - 4, x as isize - 4);
                let blur = if dy.abs() <= 2 && dx.abs() <= 2 {
                    t[(dy + 2) as usize] * t[(dx + 2) as usize]
                } else {
                    0.0
                };
                let delta = if dy == 0 && dx == 0 { 1.0 } else { 0.0 };
                assert!((hf.views()[[0, 0, 0, y, x]] - (delta - blur)).abs() < 1e-15);
            }
        }

        let affine = Array5::from_shape_fn((1, 1, 1, 10, 10), |(_, _, _, y, x)| 0.01 * y as f64 + 0.03 * x as f64 + 0.1);
        let hf = LightField::new(affine, ColorSpace::Y, 1.0).unwrap().highfreq_target().unwrap();
        for y in 2..8 {
            for x in 2..8 {
                assert!(hf.views()[[0, 0, 0, y, x]].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn epi_shapes_constant_and_slope() {
        let lf = ramp_lf(7, 7, 3, 5, 11);
        let e = lf.extract_epi(EpiAxis::Horizontal, 3, 2).unwrap();
        assert_eq!(e.values.dim(), (3, 7, 11));
        assert!(lf.extract_epi(EpiAxis::Horizontal, 7, 0).is_err());
        assert!(lf.extract_epi(EpiAxis::Vertical, 0, 11).is_err());

        let same = Array5::from_shape_fn((3, 3, 1, 4, 6), |(_, _, _, y, x)| (y * 6 + x) as f64 / 24.0);
        let e = LightField::new(same, ColorSpace::Y, 1.0)
            .unwrap()
            .extract_epi(EpiAxis::Horizontal, 1, 2)
            .unwrap();
        for x in 0..6usize {
            let first = e.values[[0, 0, x]];
            assert!((0..3).all(|a| e.values[[0, a, x]] == first));
        }

        // View b is the base signal shifted right by b pixels: a bright point
        // at x0 traces the line x = x0 + b.
        let shifted = Array5::from_shape_fn((1, 5, 1, 3, 16), |(_, b, _, _, x)| if x == 4 + b { 1.0 } else { 0.0 });
        let e = LightField::new(shifted, ColorSpace::Y, 1.0)
            .unwrap()
            .extract_epi(EpiAxis::Horizontal, 0, 1)
            .unwrap();
        for b in 0..5 {
            let row = e.values.slice(s![0, b, ..]);
            let peak = row.iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(peak, 4 + b);
        }
    }

    #[test]
    fn tensor_round_trip() {
        let lf = ramp_lf(2, 3, 3, 4, 5);
        let t = lf.to_tensor();
        assert_eq!(t.shape(), &[6, 3, 4, 5]);
        let back = LightField::from_tensor(&t, (2, 3), ColorSpace::Rgb, 1023.0).unwrap();
        assert_eq!(back, lf);
    }

    proptest! {
        #[test]
        fn pattern_round_trip_is_bitwise(u in 1usize..5, v in 1usize..5, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let px = Array3::from_shape_fn((1, u * h, v * w), |_| rng.random::<f64>());
            let p = PlenopticImage::new(px, (u, v), 1.0).unwrap();
            let back = p.to_sai(ColorSpace::Y).unwrap().to_plenoptic();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn crop_is_idempotent(n in 1usize..5) {
            let lf = ramp_lf(2 * n + 1, 2 * n + 1, 1, 2, 2);
            let once = lf.central_crop_views(3.min(2 * n + 1)).unwrap();
            let twice = once.central_crop_views(once.angular_dims().0).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
