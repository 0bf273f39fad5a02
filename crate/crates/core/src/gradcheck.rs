//! Central finite-difference verification of tape gradients in 64-bit mode.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest refinement step is `step / 10^REFINE_DECADES`.
const REFINE_DECADES: i32 = 6;

/// Coordinate-wise error measure used by [`check_gradients`]:
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, element index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    /// Coordinates that needed the smaller-step re-probe.
    pub refined: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Check at most this many evenly spaced coordinates per input.
    pub max_per_input: Option<usize>,
    /// When set, a coordinate whose error exceeds this tolerance is re-probed
    /// at `step/10`, `step/100`, … Piecewise-linear activations make the
    /// difference quotient invalid when a probe crosses a kink; the first
    /// pair of consecutive smaller steps that agree within a tenth of the
    /// tolerance replaces the estimate, and both must match the analytic
    /// value.
    pub refine_above: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            floor: 1e-3,
            max_per_input: None,
            refine_above: None,
        }
    }
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with respect to every tensor in `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        refined: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let stride = match opts.max_per_input {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for ei in (0..n).step_by(stride) {
            let orig = t.data()[ei];
            let mut central = |h: f64| -> Result<f64> {
                work[ti].data_mut()[ei] = orig + h;
                let plus = eval(&work)?;
                work[ti].data_mut()[ei] = orig - h;
                let minus = eval(&work)?;
                work[ti].data_mut()[ei] = orig;
                Ok((plus - minus) / (2.0 * h))
            };
            let a = analytic[ti][ei];
            let mut numeric = central(opts.step)?;
            let mut err = relative_error(a, numeric, opts.floor);
            if let Some(tol) = opts.refine_above.filter(|&tol| err > tol) {
                let mut prev = central(opts.step / 10.0)?;
                for k in 2..=REFINE_DECADES {
                    let next = central(opts.step / 10f64.powi(k))?;
                    if relative_error(prev, next, opts.floor) <= tol / 10.0 {
                        report.refined += 1;
                        numeric = next;
                        err = relative_error(a, next, opts.floor).max(relative_error(a, prev, opts.floor));
                        break;
                    }
                    prev = next;
                }
            }
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((ti, ei));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        return Err(Error::Usage(format!("gradient check needs a scalar, got {:?}", t.shape())));
    }
    Ok(t.data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Backward;

    /// Square with a deliberately doubled gradient.
    struct WrongSquare;

    impl Backward<f64> for WrongSquare {
        fn name(&self) -> &'static str {
            "wrong_square"
        }

        fn backward(&self, inputs: &[&Tensor<f64>], _: &Tensor<f64>, grad: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
            vec![Some(inputs[0].data().iter().zip(grad).map(|(x, g)| 4.0 * x * g).collect())]
        }
    }

    fn near_kink() -> Vec<Tensor<f64>> {
        vec![Tensor::new(&[3], vec![0.0004, -0.3, 0.7]).unwrap()]
    }

    #[test]
    fn smooth_graph_passes() {
        let x = vec![Tensor::new(&[4], vec![0.3, -0.2, 1.1, 0.5]).unwrap()];
        let rep = check_gradients(&x, GradCheckOptions::default(), |t, v| {
            let y = t.mul(v[0], v[0])?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(rep.max_rel_err < 1e-6, "{rep:?}");
        assert_eq!(rep.checked, 4);
    }

    #[test]
    fn kink_crossing_is_refined() {
        let f = |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.leaky_relu(v[0], 0.1);
            Ok(t.sum(y))
        };
        let plain = check_gradients(&near_kink(), GradCheckOptions::default(), f).unwrap();
        assert!(plain.max_rel_err > 1e-3);
        let opts = GradCheckOptions { refine_above: Some(1e-3), ..GradCheckOptions::default() };
        let refined = check_gradients(&near_kink(), opts, f).unwrap();
        assert!(refined.max_rel_err < 1e-6, "{refined:?}");
        assert_eq!(refined.refined, 1);
    }

    #[test]
    fn refinement_does_not_hide_wrong_gradients() {
        let opts = GradCheckOptions { refine_above: Some(1e-3), ..GradCheckOptions::default() };
        let rep = check_gradients(&near_kink(), opts, |t, v| {
            let value = t.value(v[0]).map(|x| x * x);
            let y = t.record(value, &[v[0]], Box::new(WrongSquare));
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(rep.max_rel_err > 0.4, "{rep:?}");
    }
}
