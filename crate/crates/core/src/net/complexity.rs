//! Analytic multiply-accumulate counts of the attention blocks.
//!
//! Counts are exact rationals; every documented example is an integer.

use num_rational::Ratio;
use serde::Serialize;

pub type Count = Ratio<i128>;

fn r(v: usize) -> Count {
    Ratio::from_integer(v as i128)
}

/// Display form: the integer when exact, else `num/den`.
pub fn format_count(c: &Count) -> String {
    if c.is_integer() {
        c.to_integer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngularComplexity {
    /// Token projections: `uv · c² (p² + 2) / m`.
    pub tokens: Count,
    /// Applying the view attention to every pixel: `(uv)² hwc`.
    pub apply: Count,
    /// View-token scores: `(uv)² c`.
    pub scores: Count,
    /// Channel fusion: `uv hw c²`.
    pub fusion: Count,
    /// Macro-pixel attention: `4 uv hw c² + 2 (uv)² hw c`.
    pub baseline: Count,
}

impl AngularComplexity {
    pub fn total(&self) -> Count {
        self.tokens + self.apply + self.scores + self.fusion
    }
}

pub fn angular_complexity(u: usize, v: usize, c: usize, h: usize, w: usize, p: usize, m: usize) -> AngularComplexity {
    let (uv, hw) = (r(u * v), r(h * w));
    let c = r(c);
    AngularComplexity {
        tokens: uv * c * c * (r(p * p) + r(2)) / r(m),
        apply: uv * uv * hw * c,
        scores: uv * uv * c,
        fusion: uv * hw * c * c,
        baseline: r(4) * uv * hw * c * c + r(2) * uv * uv * hw * c,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGroupCost {
    pub n: usize,
    pub t: usize,
    /// Query projection: `hwc² / (2n²)` per window.
    pub query: Count,
    /// Key/value reduction: `hwc² / (4 (nt)²)` per window.
    pub reduction: Count,
    /// Scores and their application: `(hw)² c / (2 (nt)² n²)` per window.
    pub attention: Count,
}

impl SpatialGroupCost {
    /// Over all `n²` windows.
    pub fn total(&self) -> Count {
        (self.query + self.reduction + self.attention) * r(self.n * self.n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialComplexity {
    pub groups: Vec<SpatialGroupCost>,
    /// Input and output projections: `2hwc²`.
    pub projections: Count,
    /// Global attention: `4hwc² + 2(hw)²c`.
    pub baseline: Count,
}

impl SpatialComplexity {
    pub fn total(&self) -> Count {
        self.groups.iter().map(SpatialGroupCost::total).sum::<Count>() + self.projections
    }
}

pub const DEFAULT_GROUPS: [(usize, usize); 4] = [(1, 4), (2, 4), (4, 2), (8, 2)];

pub fn spatial_complexity(c: usize, h: usize, w: usize) -> SpatialComplexity {
    spatial_complexity_groups(c, h, w, &DEFAULT_GROUPS)
}

pub fn spatial_complexity_groups(c: usize, h: usize, w: usize, groups: &[(usize, usize)]) -> SpatialComplexity {
    let (hw, c) = (r(h * w), r(c));
    let groups = groups
        .iter()
        .map(|&(n, t)| {
            let (n2, nt2) = (r(n * n), r(n * t * n * t));
            SpatialGroupCost {
                n,
                t,
                query: hw * c * c / (r(2) * n2),
                reduction: hw * c * c / (r(4) * nt2),
                attention: hw * hw * c / (r(2) * nt2 * n2),
            }
        })
        .collect();
    SpatialComplexity {
        groups,
        projections: r(2) * hw * c * c,
        baseline: r(4) * hw * c * c + r(2) * hw * hw * c,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComplexityReport {
    pub kind: &'static str,
    pub total: String,
    pub baseline: String,
    pub ratio: f64,
}

impl ComplexityReport {
    pub fn new(kind: &'static str, total: Count, baseline: Count) -> Self {
        let q = total / baseline;
        let ratio = *q.numer() as f64 / *q.denom() as f64;
        Self {
            kind,
            total: format_count(&total),
            baseline: format_count(&baseline),
            ratio,
        }
    }
}
