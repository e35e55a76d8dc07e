use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::params::{BoundParams, ParamRegistry};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step, must lie in `[1e-7, 1e-3]`.
    pub step: f64,
    /// Coordinates to sample; `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over checked coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn evaluate<F, E>(registry: &ParamRegistry, f: &mut F) -> Result<(f64, Tape, BoundParams, Var), E>
where
    F: FnMut(&mut Tape, &BoundParams) -> Result<Var, E>,
    E: From<Error>,
{
    let mut tape = Tape::new();
    let bound = registry.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    let value = tape.value(loss).item()?;
    Ok((value, tape, bound, loss))
}

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` builds a scalar loss on a fresh tape from the bound parameters; it is
/// called once for the analytic gradient and twice per checked coordinate.
pub fn gradient_check<F, E>(registry: &ParamRegistry, mut f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape, &BoundParams) -> Result<Var, E>,
    E: From<Error>,
{
    if !(1e-7..=1e-3).contains(&cfg.step) {
        return Err(Error::StepSize(cfg.step).into());
    }
    let (value, mut tape, bound, loss) = evaluate(registry, &mut f)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            stage: "loss evaluation",
            name: "loss".into(),
            index: 0,
            value,
        }
        .into());
    }
    tape.backward(loss)?;
    let analytic = bound.gradients(&tape);

    let coords: Vec<(usize, usize)> = (0..registry.len())
        .flat_map(|p| (0..registry.value_at(p).len()).map(move |k| (p, k)))
        .collect();
    let chosen: Vec<(usize, usize)> = match cfg.max_coords {
        Some(limit) if limit < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut picks = index::sample(&mut rng, coords.len(), limit).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| coords[i]).collect()
        }
        _ => coords,
    };

    let mut work = registry.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (p, k) in chosen {
        let original = registry.value_at(p).data()[k];
        work.value_at_mut(p).data_mut()[k] = original + cfg.step;
        let (plus, ..) = evaluate(&work, &mut f)?;
        work.value_at_mut(p).data_mut()[k] = original - cfg.step;
        let (minus, ..) = evaluate(&work, &mut f)?;
        work.value_at_mut(p).data_mut()[k] = original;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let exact = analytic.get(p).data()[k];
        for (stage, v) in [("finite difference", numeric), ("backward", exact)] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    stage,
                    name: registry.name_at(p).to_string(),
                    index: k,
                    value: v,
                }
                .into());
            }
        }
        let rel = (exact - numeric).abs() / numeric.abs().max(1.0);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((registry.name_at(p).to_string(), k));
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn registry() -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        reg.insert("w", Tensor::from_fn(3, 2, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.1))
            .unwrap();
        reg
    }

    #[test]
    fn linear_function_is_exact() {
        let reg = registry();
        let report = gradient_check(
            &reg,
            |tape: &mut Tape, p: &BoundParams| -> Result<Var, Error> {
                let w = p.var("w")?;
                let s = tape.scale(w, 3.5);
                Ok(tape.sum(s))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 6);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn wrong_backward_rule_is_detected() {
        let reg = registry();
        let report = gradient_check(
            &reg,
            |tape: &mut Tape, p: &BoundParams| -> Result<Var, Error> {
                let w = p.var("w")?;
                // Square with a deliberately wrong derivative (x instead of 2x).
                let sq = tape.custom_unary(w, |x| x * x, Box::new(|x, _, g| Tensor::from_fn(x.rows(), x.cols(), |i, j| g.get(i, j) * x.get(i, j))));
                let shifted = tape.add_scalar(sq, 1.0);
                Ok(tape.sum(shifted))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error > 1e-1, "{report:?}");
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let reg = registry();
        let cfg = GradCheckConfig {
            step: 1e-2,
            ..GradCheckConfig::default()
        };
        let res = gradient_check(&reg, |tape: &mut Tape, p: &BoundParams| -> Result<Var, Error> { Ok(tape.sum(p.var("w")?)) }, &cfg);
        assert!(matches!(res, Err(Error::StepSize(_))));
    }

    #[test]
    fn non_finite_loss_reports_error() {
        let reg = registry();
        let res = gradient_check(
            &reg,
            |tape: &mut Tape, p: &BoundParams| -> Result<Var, Error> {
                let w = p.var("w")?;
                let l = tape.ln(w);
                Ok(tape.sum(l))
            },
            &GradCheckConfig::default(),
        );
        assert!(matches!(res, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn sampling_limits_checked_coordinates() {
        let reg = registry();
        let cfg = GradCheckConfig {
            max_coords: Some(4),
            ..GradCheckConfig::default()
        };
        let report = gradient_check(&reg, |tape: &mut Tape, p: &BoundParams| -> Result<Var, Error> { Ok(tape.sum(p.var("w")?)) }, &cfg).unwrap();
        assert_eq!(report.checked, 4);
    }
}
