//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1, |analytic|) over all coordinates.
    pub max_rel_error: f64,
    /// Flat coordinate (across all checked inputs) where the maximum occurred.
    pub worst_coordinate: usize,
    pub coordinates: usize,
}

impl GradCheckReport {
    fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_coordinate = self.coordinates + other.worst_coordinate;
        }
        self.coordinates += other.coordinates;
    }
}

/// Compares `analytic` against central differences of `f` around `point`.
///
/// `f` is evaluated twice per coordinate with that coordinate shifted by ±ε.
pub fn check_coordinates<T: Scalar>(
    point: &mut [T],
    analytic: &[T],
    epsilon: T,
    mut f: impl FnMut(&[T]) -> Result<T>,
) -> Result<GradCheckReport> {
    if point.len() != analytic.len() {
        return Err(Error::Shape { op: "grad_check", lhs: vec![point.len()], rhs: vec![analytic.len()] });
    }
    let two = T::lit(2.0);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_coordinate: 0, coordinates: point.len() };
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + epsilon;
        let up = f(point)?;
        point[i] = orig - epsilon;
        let down = f(point)?;
        point[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { coordinate: i, stage: "perturbed evaluation" });
        }
        if !analytic[i].is_finite() {
            return Err(Error::NonFinite { coordinate: i, stage: "analytic gradient" });
        }
        let numeric = (up - down) / (two * epsilon);
        let a = analytic[i].as_f64();
        let err = (a - numeric.as_f64()).abs() / a.abs().max(1.0);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coordinate = i;
        }
    }
    Ok(report)
}

/// Gradient check of a scalar function built on a tape, with respect to
/// the given input tensors.
pub fn grad_check<T: Scalar>(
    inputs: &[Tensor<T>],
    epsilon: T,
    build: impl Fn(&mut Tape<'_, T>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let store = ParamStore::new();
    let eval = |values: &[Tensor<T>], want_grads: bool| -> Result<(T, Vec<Tensor<T>>)> {
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = values.iter().map(|t| tape.input(t.clone(), want_grads)).collect();
        let out = build(&mut tape, &vars)?;
        let value = tape.value(out).data()[0];
        if !want_grads {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(out)?;
        let gs = vars
            .iter()
            .zip(values)
            .map(|(v, t)| grads.of(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect();
        Ok((value, gs))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_coordinate: 0, coordinates: 0 };
    let mut current: Vec<Tensor<T>> = inputs.to_vec();
    for k in 0..current.len() {
        let mut point = current[k].data().to_vec();
        let partial = check_coordinates(&mut point, analytic[k].data(), epsilon, |p| {
            let mut probe = current.clone();
            probe[k].data_mut().copy_from_slice(p);
            eval(&probe, false).map(|(v, _)| v)
        })?;
        current[k].data_mut().copy_from_slice(&point);
        report.merge(partial);
    }
    Ok(report)
}

/// Per-parameter outcome of [`grad_check_params`].
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub report: GradCheckReport,
}

/// Gradient check over every trainable parameter of `store`.
///
/// `loss` builds the scalar objective on a fresh tape; it is called once for
/// the analytic gradients and twice per parameter coordinate.
pub fn grad_check_params<T: Scalar>(
    store: &mut ParamStore<T>,
    epsilon: T,
    loss: impl Fn(&mut Tape<'_, T>) -> Result<Var>,
) -> Result<Vec<ParamCheck>> {
    let analytic: Vec<(ParamId, Tensor<T>)> = {
        let mut tape = Tape::new(&*store);
        let out = loss(&mut tape)?;
        tape.backward(out)?.into_params()
    };
    let mut results = Vec::new();
    for (id, grad) in analytic {
        let name = store.get(id).name.clone();
        let mut point = store.tensor(id).data().to_vec();
        let report = check_coordinates(&mut point, grad.data(), epsilon, |p| {
            store.get_mut(id).tensor.data_mut().copy_from_slice(p);
            let tape_store = &*store;
            let mut tape = Tape::inference(tape_store);
            let out = loss(&mut tape)?;
            Ok(tape.value(out).data()[0])
        })?;
        store.get_mut(id).tensor.data_mut().copy_from_slice(&point);
        results.push(ParamCheck { name, report });
    }
    Ok(results)
}
