//! Central finite-difference verification of analytic gradients.

use std::fmt;

use crate::error::Result;
use crate::numerics::units::{softmax_cross_entropy, DifferentiableUnit, Linear};
use crate::numerics::DenseVector;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Floor on the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

/// A scalar function of named parameter arrays with an analytic gradient.
pub trait Objective {
    fn name(&self) -> String;

    /// Named parameter arrays at which the check is performed.
    fn parameters(&self) -> Vec<(String, Vec<f64>)>;

    fn evaluate(&self, params: &[Vec<f64>]) -> Result<f64>;

    /// Analytic gradient, one array per parameter in `parameters()` order.
    fn gradient(&self, params: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Set when either gradient had a non-finite entry.
    pub non_finite: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub objective: String,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| !p.non_finite && p.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| if p.non_finite { f64::INFINITY } else { p.max_rel_error })
            .fold(0.0, f64::max)
    }

    /// First parameter that failed, if any.
    pub fn offender(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .find(|p| p.non_finite || p.max_rel_error >= self.tolerance)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(
            f,
            "{status} {} (max rel err {:.3e}, tol {:.0e})",
            self.objective,
            self.max_rel_error(),
            self.tolerance
        )?;
        for p in &self.params {
            if p.non_finite {
                writeln!(f, "    {:<24} non-finite gradient", p.name)?;
            } else {
                writeln!(f, "    {:<24} {:.3e}", p.name, p.max_rel_error)?;
            }
        }
        Ok(())
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compare the analytic gradient of `objective` with central differences at
/// step [`FD_STEP`], element by element.
pub fn gradient_check(objective: &dyn Objective, tolerance: f64) -> Result<GradCheckReport> {
    let named = objective.parameters();
    let mut values: Vec<Vec<f64>> = named.iter().map(|(_, v)| v.clone()).collect();
    let analytic = objective.gradient(&values)?;
    let mut params = Vec::with_capacity(named.len());
    for (pi, (name, _)) in named.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut non_finite = false;
        for i in 0..values[pi].len() {
            let orig = values[pi][i];
            values[pi][i] = orig + FD_STEP;
            let plus = objective.evaluate(&values)?;
            values[pi][i] = orig - FD_STEP;
            let minus = objective.evaluate(&values)?;
            values[pi][i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[pi][i];
            if !a.is_finite() || !numeric.is_finite() {
                non_finite = true;
                continue;
            }
            worst = worst.max(relative_error(a, numeric));
        }
        params.push(ParamCheck {
            name: name.clone(),
            max_rel_error: worst,
            non_finite,
        });
    }
    Ok(GradCheckReport {
        objective: objective.name(),
        tolerance,
        params,
    })
}

/// `unit → readout linear → softmax cross-entropy`, differentiated with
/// respect to the unit's parameters, the readout, and the input.
pub struct ClassifierObjective<U: DifferentiableUnit> {
    pub label: String,
    pub unit: U,
    pub readout: Linear,
    pub input: DenseVector,
    pub target: usize,
}

impl<U: DifferentiableUnit> ClassifierObjective<U> {
    fn split(&self, params: &[Vec<f64>]) -> Result<(U, Linear, DenseVector)> {
        let n_unit = self.unit.parameters().len();
        let unit = self.unit.with_parameters(&params[..n_unit])?;
        let readout = self.readout.with_parameters(&params[n_unit..n_unit + 2])?;
        let input = DenseVector::new(params[n_unit + 2].clone());
        Ok((unit, readout, input))
    }
}

impl<U: DifferentiableUnit> Objective for ClassifierObjective<U> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn parameters(&self) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = self
            .unit
            .parameters()
            .into_iter()
            .map(|(n, v)| (format!("unit.{n}"), v))
            .collect();
        for (n, v) in self.readout.parameters() {
            out.push((format!("readout.{n}"), v));
        }
        out.push(("input".into(), self.input.to_vec()));
        out
    }

    fn evaluate(&self, params: &[Vec<f64>]) -> Result<f64> {
        let (unit, readout, input) = self.split(params)?;
        let (hidden, _) = unit.forward(&input)?;
        let logits = readout.apply(&hidden)?;
        Ok(softmax_cross_entropy(&logits, self.target)?.loss)
    }

    fn gradient(&self, params: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let (unit, readout, input) = self.split(params)?;
        let (hidden, unit_tape) = unit.forward(&input)?;
        let (logits, readout_tape) = readout.forward(&hidden)?;
        let ce = softmax_cross_entropy(&logits, self.target)?;
        let d_logits = ce.grad_logits(self.target);
        let readout_grads = readout.backward(&readout_tape, &d_logits)?;
        let unit_grads = unit.backward(&unit_tape, &readout_grads.input)?;
        let mut out = unit_grads.params;
        out.extend(readout_grads.params);
        out.push(unit_grads.input.into_vec());
        Ok(out)
    }
}

/// Wraps a unit and multiplies its backward pass by a constant. Used to
/// confirm the checker rejects wrong gradients.
pub struct ScaledBackward<U> {
    pub inner: U,
    pub factor: f64,
}

impl<U: DifferentiableUnit> DifferentiableUnit for ScaledBackward<U> {
    type Tape = U::Tape;

    fn forward(&self, input: &[f64]) -> Result<(DenseVector, U::Tape)> {
        self.inner.forward(input)
    }

    fn backward(&self, tape: &U::Tape, grad_output: &[f64]) -> Result<crate::numerics::UnitGradients> {
        let mut g = self.inner.backward(tape, grad_output)?;
        for v in g.input.iter_mut() {
            *v *= self.factor;
        }
        for p in g.params.iter_mut() {
            for v in p.iter_mut() {
                *v *= self.factor;
            }
        }
        Ok(g)
    }

    fn parameters(&self) -> Vec<(String, Vec<f64>)> {
        self.inner.parameters()
    }

    fn with_parameters(&self, values: &[Vec<f64>]) -> Result<Self> {
        Ok(ScaledBackward {
            inner: self.inner.with_parameters(values)?,
            factor: self.factor,
        })
    }
}
