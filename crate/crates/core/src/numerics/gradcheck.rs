//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// `max |analytic − fd| / max(1, |fd|)` over the checked coordinates.
    pub max_rel_error: Real,
    /// Coordinate where the maximum was attained.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

/// Exclusion predicate that keeps every coordinate.
pub fn no_exclusion(_: usize) -> bool {
    false
}

/// Compare the tape gradient of `f` at `point` with central differences on
/// every coordinate not flagged by `exclude`.
///
/// `f` builds a scalar on the graph it is handed from the leaf standing for
/// `point`.
pub fn gradcheck<F>(
    f: F,
    point: &Tensor,
    step: Real,
    exclude: &dyn Fn(usize) -> bool,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    gradcheck_coords(f, point, step, &coords, exclude)
}

/// [`gradcheck`] restricted to the listed coordinates.
pub fn gradcheck_coords<F>(
    f: F,
    point: &Tensor,
    step: Real,
    coords: &[usize],
    exclude: &dyn Fn(usize) -> bool,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::domain("gradcheck", format!("step {step} outside (0, 1e-2]")));
    }
    let analytic = {
        let mut g = Graph::new();
        let x = g.param(point.clone());
        let y = f(&mut g, x)?;
        let mut grads = g.backward(y)?;
        grads.take(x).expect("leaf gradient is always present")
    };

    let eval = |p: Tensor, coord: usize| -> Result<Real> {
        let mut g = Graph::new();
        let x = g.constant(p);
        let y = f(&mut g, x).map_err(|e| match e {
            Error::NonFinite { op, msg } => Error::NonFinite {
                op,
                msg: format!("{msg} while probing coordinate {coord}"),
            },
            other => other,
        })?;
        let v = g.value(y).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op: "gradcheck",
                msg: format!("objective is {v} while probing coordinate {coord}"),
            });
        }
        Ok(v)
    };

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
    };
    for &i in coords {
        if i >= point.numel() {
            return Err(Error::Length(format!(
                "coordinate {i} outside point of {} elements",
                point.numel()
            )));
        }
        if exclude(i) {
            report.skipped += 1;
            continue;
        }
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let fd = (eval(plus, i)? - eval(minus, i)?) / (2.0 * step);
        let err = (analytic.data()[i] - fd).abs() / fd.abs().max(1.0);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact_enough() {
        let p = Tensor::from_fn(&[3, 3], |i| i as Real * 0.3 - 1.0);
        let r = gradcheck(
            |g, x| {
                let y = g.mul(x, x)?;
                g.sum(y)
            },
            &p,
            1e-6,
            &no_exclusion,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 9);
    }

    #[test]
    fn step_out_of_range_is_rejected() {
        let p = Tensor::zeros(&[1]);
        let f = |g: &mut Graph, x: Var| g.sum(x);
        assert!(gradcheck(f, &p, 0.0, &no_exclusion).is_err());
        assert!(gradcheck(f, &p, 0.1, &no_exclusion).is_err());
    }

    #[test]
    fn exclusion_skips_coordinates() {
        let p = Tensor::zeros(&[4]);
        let r = gradcheck(|g, x| g.sum(x), &p, 1e-6, &|i| i % 2 == 0).unwrap();
        assert_eq!((r.checked, r.skipped), (2, 2));
    }

    #[test]
    fn step_function_without_exclusion_is_flagged() {
        // A hard threshold composed with a smooth map: the analytic gradient
        // treats the mask as constant, the finite difference sees the jump.
        let p = Tensor::from_rows(&[[0.13 + 1e-8, 0.5]]).unwrap();
        let f = |g: &mut Graph, x: Var| {
            let mask = g.value(x).map(|v| (v > 0.13) as u8 as Real);
            let y = g.mul_const(x, mask)?;
            g.sum(y)
        };
        let r = gradcheck(f, &p, 1e-6, &no_exclusion).unwrap();
        assert!(r.max_rel_error > 0.01, "{r:?}");
        assert_eq!(r.worst_index, Some(0));
        let r = gradcheck(f, &p, 1e-6, &|i| i == 0).unwrap();
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn non_finite_probe_reports_coordinate() {
        let err = gradcheck(
            |g, x| {
                // blows up as soon as the second coordinate turns positive
                let c = g.value(x).map(|v| if v > 0.0 { Real::INFINITY } else { 1.0 });
                let y = g.mul_const(x, c)?;
                g.sum(y)
            },
            &Tensor::from_rows(&[[-0.5, 0.0]]).unwrap(),
            1e-6,
            &no_exclusion,
        )
        .unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }
}
