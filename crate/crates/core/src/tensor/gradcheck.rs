//! Central-difference verification of tape gradients.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng;

use super::{Element, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Denominator floor for the relative error, so exactly-zero gradients
    /// are compared absolutely.
    pub abs_floor: f64,
    /// Check at most this many entries per parameter tensor.
    pub max_samples_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-3, tol: 1e-3, abs_floor: 1e-8, max_samples_per_param: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub param: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<T, F>(f: &F, params: &[Tensor<T>]) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.var(p.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::Usage("grad_check function must return a scalar".into()));
    }
    Ok(tape.value(out).item().as_f64())
}

/// Compares tape gradients of the scalar function `f` against central
/// differences for every (or a seeded sample of every) parameter entry.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if cfg.step <= 0.0 {
        return Err(Error::Usage("grad_check step must be positive".into()));
    }
    let first = evaluate(&f, params)?;
    let second = evaluate(&f, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism(format!(
            "two forward passes disagree: {first:e} vs {second:e}"
        )));
    }

    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.var(p.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();

    let mut rng = rng::keyed(cfg.seed, &[0x6772_6164]);
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let picks: Vec<usize> = match cfg.max_samples_per_param {
            Some(s) if s < n => {
                let mut v = index::sample(&mut rng, n, s).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for &i in &picks {
            let orig = p.data()[i];
            let base = orig.as_f64();
            work[pi].data_mut()[i] = T::of_f64(base + cfg.step);
            let plus = evaluate(&f, &work)?;
            work[pi].data_mut()[i] = T::of_f64(base - cfg.step);
            let minus = evaluate(&f, &work)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[pi].data()[i].as_f64();
            max_rel = max_rel.max(relative_error(a, numeric, cfg.abs_floor));
            max_abs = max_abs.max((a - numeric).abs());
        }
        reports.push(ParamCheck { param: pi, checked: picks.len(), max_rel_error: max_rel, max_abs_error: max_abs });
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { passed: max_rel_error <= cfg.tol, max_rel_error, tol: cfg.tol, params: reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::<f64>::from_fn([5], |i| i as f64 * 0.3 - 0.7);
        let report = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[x],
            &GradCheckConfig { tol: 1e-6, ..Default::default() },
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn sampling_limits_checked_entries() {
        let x = Tensor::<f64>::from_fn([50], |i| i as f64 * 0.01);
        let report = grad_check(
            |t, v| t.sum(v[0]),
            &[x],
            &GradCheckConfig { max_samples_per_param: Some(7), ..Default::default() },
        )
        .unwrap();
        assert_eq!(report.checked(), 7);
    }

    #[test]
    fn detects_nondeterminism() {
        use std::cell::Cell;
        let calls = Cell::new(0u32);
        let x = Tensor::<f64>::ones([2]);
        let res = grad_check(
            |t, v| {
                calls.set(calls.get() + 1);
                let s = t.sum(v[0])?;
                t.scale(s, calls.get() as f64)
            },
            &[x],
            &GradCheckConfig::default(),
        );
        assert!(matches!(res, Err(Error::Determinism(_))));
    }
}
