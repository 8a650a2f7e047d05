//! Finite-difference validation of the backward rules.

use crate::attention::{AttentionParams, PyramidAttentionConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::network;
use crate::rng::Rng;
use crate::tensor::{Elem, Tensor};

/// Default central-difference step for the current element type.
pub fn default_eps() -> Elem {
    if cfg!(feature = "f64") {
        1e-5
    } else {
        1e-2
    }
}

/// Default pass tolerance for the current element type.
pub fn default_tolerance() -> Elem {
    if cfg!(feature = "f64") {
        1e-4
    } else {
        1e-2
    }
}

/// Compares the tape gradient of a scalar-valued function against central
/// differences and returns the maximum relative error over all elements:
/// |analytic − numeric| / max(1e-8, |analytic| + |numeric|).
pub fn grad_check<F>(f: F, x: &Tensor, eps: Elem) -> Result<Elem>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be > 0, got {eps}")));
    }

    let mut graph = Graph::new();
    let xv = graph.leaf(x.clone(), true);
    let out = f(&mut graph, xv)?;
    if graph.value(out).shape() != [1, 1, 1, 1] {
        return Err(Error::Dim(
            "grad_check requires a scalar-valued function".into(),
        ));
    }
    if !graph.value(out).all_finite() {
        return Err(Error::Numeric("non-finite value at the base point".into()));
    }
    graph.backward(out)?;
    let analytic = graph
        .grad(xv)
        .map(<[Elem]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |probe: &Tensor| -> Result<Elem> {
        let mut g = Graph::new();
        let v = g.leaf(probe.clone(), false);
        let out = f(&mut g, v)?;
        let val = g.value(out).data()[0];
        if !val.is_finite() {
            return Err(Error::Numeric(
                "non-finite value while probing finite differences".into(),
            ));
        }
        Ok(val)
    };

    let mut max_rel = 0.0 as Elem;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs()
            / (analytic[i].abs() + numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

/// One entry of the standard gradient suite.
pub struct SuiteResult {
    pub op: &'static str,
    pub max_rel_err: Elem,
    pub tolerance: Elem,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Names accepted by [`run_suite`]'s filter.
pub const SUITE_OPS: &[&str] = &[
    "conv2d",
    "conv_transpose2d",
    "bicubic_resize",
    "softmax",
    "residual_block",
    "nonlocal_attention",
    "scale_agnostic_attention",
    "pyramid_attention",
];

/// Runs finite-difference checks over every differentiable operator on
/// randomized small shapes. `only` restricts to a single named op.
pub fn run_suite(eps: Elem, only: Option<&str>) -> Result<Vec<SuiteResult>> {
    if let Some(name) = only {
        if !SUITE_OPS.contains(&name) {
            return Err(Error::Config(format!(
                "unknown gradcheck op '{name}'; expected one of {SUITE_OPS:?}"
            )));
        }
    }
    let tol = default_tolerance();
    let mut rng = Rng::seed_from(0x9d2c5680);
    let mut results = Vec::new();
    let mut push = |op: &'static str, err: Result<Elem>| -> Result<()> {
        results.push(SuiteResult {
            op,
            max_rel_err: err?,
            tolerance: tol,
        });
        Ok(())
    };

    let rand = |shape: [usize; 4], rng: &mut Rng| -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal() as Elem).collect()).unwrap()
    };

    let want = |name: &str| only.is_none() || only == Some(name);

    if want("conv2d") {
        let x = rand([2, 3, 6, 6], &mut rng);
        let w = rand([4, 3, 3, 3], &mut rng).map(|v| v * 0.3);
        let b = rand([1, 4, 1, 1], &mut rng).map(|v| v * 0.1);
        push(
            "conv2d",
            grad_check(
                |g, xv| {
                    let wv = g.leaf(w.clone(), false);
                    let bv = g.leaf(b.clone(), false);
                    let y = g.conv2d(xv, wv, Some(bv), 1, 1)?;
                    Ok(g.sum_all(y))
                },
                &x,
                eps,
            ),
        )?;
    }
    if want("conv_transpose2d") {
        let s = rand([1, 4, 5, 5], &mut rng);
        let w = rand([4, 3, 3, 3], &mut rng).map(|v| v * 0.3);
        push(
            "conv_transpose2d",
            grad_check(
                |g, sv| {
                    let wv = g.leaf(w.clone(), false);
                    let y = g.conv_transpose2d(sv, wv, 1, 1)?;
                    Ok(g.sum_all(y))
                },
                &s,
                eps,
            ),
        )?;
    }
    // An L1 target offset far from the op's output range, with a random sign
    // per element, turns l1_loss into a kink-free random ±1-weighted sum, so
    // the objective is smooth yet sensitive to every output element.
    let far_mask = |base: &Tensor, rng: &mut Rng| -> Tensor {
        let data = base
            .data()
            .iter()
            .map(|&v| v + if rng.below(2) == 0 { 10.0 } else { -10.0 })
            .collect();
        Tensor::from_vec(base.shape(), data).unwrap()
    };
    if want("bicubic_resize") {
        let x = rand([1, 2, 8, 8], &mut rng);
        let base = crate::ops::bicubic_resize(&x, 0.75)?;
        let mask = far_mask(&base, &mut rng);
        push(
            "bicubic_resize",
            grad_check(
                |g, xv| {
                    let y = g.bicubic_resize(xv, 0.75)?;
                    let m = g.leaf(mask.clone(), false);
                    g.l1_loss(y, m)
                },
                &x,
                eps,
            ),
        )?;
    }
    if want("softmax") {
        let x = rand([1, 6, 3, 3], &mut rng);
        let base = crate::ops::softmax(&x, 1)?;
        // sum(softmax) is constant along the axis; the signed far target makes
        // the gradient informative.
        let mask = far_mask(&base, &mut rng);
        push(
            "softmax",
            grad_check(
                |g, xv| {
                    let y = g.softmax(xv, 1)?;
                    let m = g.leaf(mask.clone(), false);
                    g.l1_loss(y, m)
                },
                &x,
                eps,
            ),
        )?;
    }
    if want("residual_block") {
        let x = rand([1, 4, 6, 6], &mut rng);
        let w1 = rand([4, 4, 3, 3], &mut rng).map(|v| v * 0.2);
        let b1 = rand([1, 4, 1, 1], &mut rng).map(|v| v * 0.1);
        let w2 = rand([4, 4, 3, 3], &mut rng).map(|v| v * 0.2);
        let b2 = rand([1, 4, 1, 1], &mut rng).map(|v| v * 0.1);
        push(
            "residual_block",
            grad_check(
                |g, xv| {
                    let w1v = g.leaf(w1.clone(), false);
                    let b1v = g.leaf(b1.clone(), false);
                    let w2v = g.leaf(w2.clone(), false);
                    let b2v = g.leaf(b2.clone(), false);
                    let y = network::residual_block_graph(g, xv, w1v, Some(b1v), w2v, Some(b2v))?;
                    Ok(g.sum_all(y))
                },
                &x,
                eps,
            ),
        )?;
    }

    let attn_cfg = |scales: &[f64], r: usize| PyramidAttentionConfig {
        scales: scales.to_vec(),
        patch_size: r,
        embed_channels: 2,
        feature_channels: 4,
    };
    if want("nonlocal_attention") {
        let x = rand([1, 4, 5, 5], &mut rng);
        let params = AttentionParams::init(&attn_cfg(&[1.0], 1), &mut rng);
        push(
            "nonlocal_attention",
            grad_check(
                |g, xv| {
                    let p = crate::attention::params_into_graph(g, &params, false);
                    let y = crate::attention::nonlocal_attention_graph(g, xv, &p)?;
                    Ok(g.sum_all(y))
                },
                &x,
                eps,
            ),
        )?;
    }
    if want("scale_agnostic_attention") {
        let x = rand([1, 4, 6, 6], &mut rng);
        let params = AttentionParams::init(&attn_cfg(&[1.0], 1), &mut rng);
        push(
            "scale_agnostic_attention",
            grad_check(
                |g, xv| {
                    let p = crate::attention::params_into_graph(g, &params, false);
                    let y = crate::attention::scale_agnostic_attention_graph(g, xv, 0.5, &p)?;
                    Ok(g.sum_all(y))
                },
                &x,
                eps,
            ),
        )?;
    }
    if want("pyramid_attention") {
        let x = rand([1, 4, 8, 8], &mut rng);
        let cfg = attn_cfg(&[1.0, 0.9, 0.8, 0.7, 0.6], 3);
        let params = AttentionParams::init(&cfg, &mut rng);
        push(
            "pyramid_attention",
            grad_check(
                |g, xv| {
                    let p = crate::attention::params_into_graph(g, &params, false);
                    let y = crate::attention::pyramid_attention_graph(g, xv, &cfg, &p)?;
                    Ok(g.sum_all(y))
                },
                &x,
                eps,
            ),
        )?;
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exactly_linear() {
        // Dyadic values keep the floating-point sums exact, so the central
        // difference reproduces the all-ones gradient bit for bit.
        let mut rng = Rng::seed_from(1);
        let x = Tensor::from_vec(
            [1, 2, 3, 3],
            (0..18)
                .map(|_| (rng.below(256) as Elem - 128.0) / 64.0)
                .collect(),
        )
        .unwrap();
        let err = grad_check(|g, v| Ok(g.sum_all(v)), &x, 0.015625).unwrap();
        assert!(err < 1e-6, "sum gradient error {err}");
    }

    #[test]
    fn l1_away_from_ties() {
        let mut rng = Rng::seed_from(2);
        let x = Tensor::from_vec(
            [1, 1, 4, 4],
            (0..16).map(|_| rng.normal() as Elem + 3.0).collect(),
        )
        .unwrap();
        let target = Tensor::zeros(1, 1, 4, 4);
        let err = grad_check(
            |g, v| {
                let t = g.leaf(target.clone(), false);
                g.l1_loss(v, t)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-3, "l1 gradient error {err}");
    }

    #[test]
    fn rejects_non_scalar_objective() {
        let x = Tensor::zeros(1, 1, 2, 2);
        assert!(matches!(
            grad_check(|g, v| Ok(g.relu(v)), &x, 1e-2),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn rejects_bad_eps() {
        let x = Tensor::zeros(1, 1, 1, 1);
        assert!(grad_check(|g, v| Ok(g.sum_all(v)), &x, 0.0).is_err());
    }

    #[test]
    fn unknown_suite_op_is_config_error() {
        assert!(matches!(
            run_suite(1e-2, Some("no_such_op")),
            Err(Error::Config(_))
        ));
    }
}
