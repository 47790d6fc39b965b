use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Settings for [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Largest accepted relative error.
    pub tol: f64,
    /// Number of coordinates compared (all of them when fewer exist).
    pub coords: usize,
    /// Seed of the coordinate sampler.
    pub seed: u64,
    /// Lower bound of the relative-error denominator, so gradients that are
    /// zero up to rounding compare in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            tol: 1e-6,
            coords: 128,
            seed: 0x5eed,
            floor: 1e-4,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
    pub checked: usize,
    /// `(input index, flat offset, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::unchecked();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::NumericFault("function under check returned a non-finite value".into()));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences `(f(x+eps) - f(x-eps)) / 2eps`.
///
/// Coordinates are drawn without replacement by a ChaCha8 sampler seeded with
/// `opts.seed` from the concatenation of all inputs. The relative error of a
/// coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {}", opts.eps)));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let sizes: Vec<usize> = inputs.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picks: Vec<usize> = if total <= opts.coords {
        (0..total).collect()
    } else {
        sample(&mut rng, total, opts.coords).into_vec()
    };
    picks.sort_unstable();

    let mut worst: Option<(usize, usize, f64, f64)> = None;
    let mut max_rel: f64 = 0.0;
    let mut perturbed = inputs.to_vec();
    for flat in picks {
        let mut which = 0;
        let mut off = flat;
        while off >= sizes[which] {
            off -= sizes[which];
            which += 1;
        }
        let analytic = grads
            .get(vars[which])
            .map_or(0.0, |t| t.data()[off]);
        let orig = inputs[which].data()[off];
        perturbed[which].data_mut()[off] = orig + opts.eps;
        let fp = eval(&f, &perturbed)?;
        perturbed[which].data_mut()[off] = orig - opts.eps;
        let fm = eval(&f, &perturbed)?;
        perturbed[which].data_mut()[off] = orig;
        let numeric = (fp - fm) / (2.0 * opts.eps);
        let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
        let rel = (analytic - numeric).abs() / denom;
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some((which, off, analytic, numeric));
        }
    }
    let checked = total.min(opts.coords);
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        pass: max_rel <= opts.tol,
        checked,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_function_is_exact() {
        let x = Tensor::from_vec(&[4], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let rep = grad_check(
            |g, v| {
                let y = g.scale(v[0], 3.0)?;
                let y = g.add_scalar(y, 1.0)?;
                g.sum(y)
            },
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-9, "{rep:?}");
        assert_eq!(rep.checked, 4);
    }

    #[test]
    fn sum_has_unit_gradient_and_disconnected_branch_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let unused = g.param(Tensor::ones(&[3]));
        let _dead = g.tanh(unused).unwrap();
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn two_layer_tanh_perceptron() {
        use rand::SeedableRng;
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[5, 4], 1.0, &mut r);
        let w1 = Tensor::randn(&[4, 6], 0.5, &mut r);
        let b1 = Tensor::randn(&[6], 0.1, &mut r);
        let w2 = Tensor::randn(&[6, 1], 0.5, &mut r);
        let rep = grad_check(
            |g, v| {
                let h = g.linear(v[0], v[1], Some(v[2]))?;
                let h = g.tanh(h)?;
                let o = g.matmul(h, v[3])?;
                let o = g.square(o)?;
                g.mean(o)
            },
            &[x, w1, b1, w2],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn softmax_cross_product_composite() {
        use rand::SeedableRng;
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::randn(&[3, 5], 1.0, &mut r);
        let b = Tensor::randn(&[3, 5], 1.0, &mut r);
        let rep = grad_check(
            |g, v| {
                let sa = g.softmax(v[0])?;
                let p = g.mul(sa, v[1])?;
                g.sum(p)
            },
            &[a, b],
            &GradCheckOptions::with_tol(1e-6),
        )
        .unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let opts = GradCheckOptions {
            eps: 0.0,
            ..Default::default()
        };
        let r = grad_check(|g, v| g.sum(v[0]), &[Tensor::ones(&[1])], &opts);
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_function_is_a_numeric_fault() {
        let x = Tensor::from_vec(&[1], vec![800.0]).unwrap();
        let r = grad_check(
            |g, v| {
                let e = g.exp(v[0])?;
                g.sum(e)
            },
            &[x],
            &GradCheckOptions::default(),
        );
        assert!(matches!(r, Err(Error::NumericFault(_))));
    }
}
