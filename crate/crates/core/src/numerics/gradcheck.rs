use serde::Serialize;

use super::{Element, Result, Tape, Tensor, Var};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub label: String,
    pub coordinates: usize,
    pub max_rel_err: f64,
    /// Coordinate where the largest relative error occurred.
    pub worst_index: Option<usize>,
    /// First coordinate where a perturbed evaluation was not finite.
    pub non_finite_at: Option<usize>,
    pub h: f64,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn evaluate<T, F>(f: &F, x: &Tensor<T>) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).item()?.f64())
}

/// Checks d f / d x from [`Tape::backward`] against
/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate of `x`.
///
/// `f` must build a scalar from the leaf it is handed and be deterministic.
pub fn finite_difference_check<T, F>(f: F, x: &Tensor<T>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let loss = f(&mut tape, v)?;
    tape.backward(loss)?;
    let analytic: Vec<f64> = match tape.grad(v) {
        Some(g) => g.iter().map(|g| g.f64()).collect(),
        None => vec![0.0; x.numel()],
    };

    let mut report = GradCheckReport {
        label: String::new(),
        coordinates: x.numel(),
        max_rel_err: 0.0,
        worst_index: None,
        non_finite_at: None,
        h,
        tol,
        pass: true,
    };
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let base = x.data()[i];
        probe.data_mut()[i] = base + T::of(h);
        let up_x = probe.data()[i];
        let up = evaluate(&f, &probe)?;
        probe.data_mut()[i] = base - T::of(h);
        let down_x = probe.data()[i];
        let down = evaluate(&f, &probe)?;
        probe.data_mut()[i] = base;
        if !up.is_finite() || !down.is_finite() {
            report.non_finite_at = Some(i);
            report.pass = false;
            report.max_rel_err = f64::INFINITY;
            report.worst_index = Some(i);
            return Ok(report);
        }
        // divide by the step actually taken after rounding
        let numeric = (up - down) / (up_x - down_x).f64();
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_err || report.worst_index.is_none() {
            report.max_rel_err = err;
            report.worst_index = Some(i);
        }
    }
    report.pass = report.max_rel_err <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_unit_gradient() {
        let x = Tensor::<f64>::from_f64(vec![2, 3], &[0.3, -1.0, 2.0, 0.5, 4.0, -0.7]).unwrap();
        let r = finite_difference_check(|t, v| t.sum(v), &x, 1e-3, 1e-3).unwrap();
        assert!(r.pass);
        assert!(r.max_rel_err < 1e-9, "{r:?}");
    }

    #[test]
    fn non_finite_evaluation_fails_with_coordinate() {
        let x = Tensor::<f64>::from_f64(vec![3], &[1.0, 709.7825, 1.0]).unwrap();
        let r = finite_difference_check(
            |t, v| {
                let e = t.exp(v)?;
                t.sum(e)
            },
            &x,
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(!r.pass);
        assert_eq!(r.non_finite_at, Some(1));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // relu evaluated exactly at its kink: the subgradient 0 disagrees with
        // the central difference 0.5
        let x = Tensor::<f64>::from_f64(vec![2], &[0.0, 1.0]).unwrap();
        let r = finite_difference_check(
            |t, v| {
                let y = t.relu(v)?;
                t.sum(y)
            },
            &x,
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst_index, Some(0));
    }

    #[test]
    fn report_serializes_as_one_json_line() {
        let x = Tensor::<f64>::from_f64(vec![1], &[1.0]).unwrap();
        let r = finite_difference_check(|t, v| t.sum(v), &x, 1e-3, 1e-3)
            .unwrap()
            .with_label("sum");
        let line = r.to_json_line();
        assert!(!line.contains('\n'));
        assert!(line.contains("\"label\":\"sum\""));
    }
}
