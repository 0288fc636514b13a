use alloc::string::String;
use alloc::vec::Vec;

use super::{ParamId, ParamStore, Tape, Var};
use crate::Result;

/// Coordinates checked per parameter before switching to a strided sample.
const FULL_CHECK_LIMIT: usize = 256;

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name, flat index, tape gradient and finite difference of
    /// the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub coordinates: usize,
    /// Loss value at the unperturbed parameters.
    pub loss: f64,
    /// Every checked coordinate, in check order.
    pub samples: Vec<GradSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }

    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }
}

/// Compares tape gradients of the scalar built by `f` with central
/// differences `(f(x + h) - f(x - h)) / 2h`.
///
/// Parameters with more than 256 entries are checked on an evenly strided
/// sample of 256 coordinates.
pub fn gradient_check<F>(store: &mut ParamStore, params: &[ParamId], h: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let loss_value = tape.value(loss).item();
    tape.backward(loss, store)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        loss: loss_value,
        samples: Vec::new(),
    };
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let v = f(&mut tape, store)?;
        Ok(tape.value(v).item())
    };
    for &id in params {
        let n = store.get(id).value.len();
        let coords: Vec<usize> = if n <= FULL_CHECK_LIMIT {
            (0..n).collect()
        } else {
            (0..FULL_CHECK_LIMIT).map(|i| i * n / FULL_CHECK_LIMIT).collect()
        };
        for i in coords {
            let analytic = store.get(id).grad.data()[i];
            let original = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = original + h;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = original - h;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i, analytic, numeric));
            }
            report.samples.push(GradSample {
                param: store.get(id).name.clone(),
                index: i,
                analytic,
                numeric,
            });
        }
    }
    Ok(report)
}
