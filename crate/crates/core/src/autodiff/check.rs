//! Finite-difference oracle for gradients.

use super::{Graph, Result, TensorError, TensorId};

/// Differences below this are treated as exact agreement. Central
/// differences carry rounding noise around `ulp(loss) / (2 eps)`, so a
/// gradient that is analytically zero never matches to machine precision;
/// the floor keeps such coordinates from dominating the relative gap.
const ABS_FLOOR: f64 = 1e-10;

/// Relative disagreement between an analytic and a numeric gradient
/// coordinate: `|a - n| / (|a| + |n| + 1e-12)`, floored for ties near zero.
pub fn relative_gap(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < ABS_FLOOR {
        0.0
    } else {
        diff / (analytic.abs() + numeric.abs() + 1e-12)
    }
}

/// Compare the analytic gradient of a scalar-valued graph against central
/// finite differences at `point`; returns the worst [`relative_gap`] over
/// all coordinates.
///
/// `build` must construct the same computation each time it is called; it
/// receives a fresh graph and the id of the point tensor and returns the
/// scalar loss id.
pub fn grad_check<F>(build: F, point: &[f64], shape: &[usize], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, TensorId) -> Result<TensorId>,
{
    if eps <= 0.0 {
        return Err(TensorError::Invalid(format!("grad_check: eps must be positive, got {eps}")));
    }

    let mut graph = Graph::new();
    let x = graph.leaf(point.to_vec(), shape, true)?;
    let loss = build(&mut graph, x)?;
    if graph.value(loss).numel() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: graph.shape(loss).to_vec(),
        });
    }
    let loss_val = graph.data(loss)[0];
    if !loss_val.is_finite() {
        return Err(TensorError::NonFinite { context: "grad_check loss".into(), index: 0 });
    }
    graph.backward(loss)?;
    let analytic = graph
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.len()]);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(data, shape, false)?;
        let loss = build(&mut g, x)?;
        Ok(g.data(loss)[0])
    };

    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.to_vec();
        plus[i] += eps;
        let mut minus = point.to_vec();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(TensorError::NonFinite { context: "grad_check gradient".into(), index: i });
        }
        worst = worst.max(relative_gap(analytic[i], numeric));
    }
    Ok(worst)
}
