//! Reconstruction of the HIV infection rate from the measurable outputs
//! `y1 = T_U + T_I` and `y2 = V`, by the two output relations obtained
//! from eliminating the unobserved states.

use crate::error::{Error, Result};
use crate::models::{Hiv, OdeSystem};
use crate::solver::{integrate, EtaFn, Grid, Method, NumericalSolution};

/// Default relative threshold for a usable denominator.
pub const WELL_CONDITIONED: f64 = 1e-6;

/// Outputs and their first two time derivatives along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDerivatives {
    pub times: Vec<f64>,
    pub y1: Vec<f64>,
    pub dy1: Vec<f64>,
    pub d2y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub dy2: Vec<f64>,
    pub d2y2: Vec<f64>,
}

/// Exact output derivatives from the model equations evaluated at the
/// interpolated states.
pub fn output_derivatives(
    system: &Hiv,
    params: &[f64],
    trajectory: &NumericalSolution,
    eta: Option<EtaFn<'_>>,
    times: &[f64],
) -> Result<OutputDerivatives> {
    if params.len() != 5 {
        return Err(Error::invalid("HIV output derivatives need (lambda, rho, N, delta, c)"));
    }
    if trajectory.dim() != 3 {
        return Err(Error::invalid("trajectory is not an HIV solution"));
    }
    let (rho, n, delta, c) = (params[1], params[2], params[3], params[4]);
    let mut od = OutputDerivatives {
        times: times.to_vec(),
        y1: Vec::with_capacity(times.len()),
        dy1: Vec::with_capacity(times.len()),
        d2y1: Vec::with_capacity(times.len()),
        y2: Vec::with_capacity(times.len()),
        dy2: Vec::with_capacity(times.len()),
        d2y2: Vec::with_capacity(times.len()),
    };
    let mut x = [0.0; 3];
    let mut dx = [0.0; 3];
    for &t in times {
        trajectory.interpolate_into(t, &mut x)?;
        system.rhs(t, &x, params, eta.map(|f| f(t)), &mut dx);
        od.y1.push(x[0] + x[1]);
        od.dy1.push(dx[0] + dx[1]);
        od.d2y1.push(-rho * dx[0] - delta * dx[1]);
        od.y2.push(x[2]);
        od.dy2.push(dx[2]);
        od.d2y2.push(n * delta * dx[1] - c * dx[2]);
    }
    Ok(od)
}

/// Pointwise reconstruction with a conditioning flag per time.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub eta: Vec<f64>,
    pub denominator: Vec<f64>,
    /// `true` where the denominator is too small to trust.
    pub flagged: Vec<bool>,
}

fn reconstruct(num: Vec<f64>, den: Vec<f64>, threshold: f64) -> Reconstruction {
    let scale = den.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let flagged: Vec<bool> = den.iter().map(|d| !(d.abs() > threshold * scale) || scale == 0.0).collect();
    let eta = num
        .iter()
        .zip(&den)
        .zip(&flagged)
        .map(|((n, d), &f)| if f { f64::NAN } else { n / d })
        .collect();
    Reconstruction {
        eta,
        denominator: den,
        flagged,
    }
}

/// Infection rate from the total CD4 count relation:
/// `eta = [y1'' + (rho+delta) y1' + delta rho y1 - delta lambda] / [-y2 (y1' + delta y1 - lambda)]`.
pub fn eta_from_cd4_relation(od: &OutputDerivatives, beta: &[f64], threshold: f64) -> Reconstruction {
    let (lambda, rho, delta) = (beta[0], beta[1], beta[3]);
    let n = od.times.len();
    let num = (0..n)
        .map(|i| od.d2y1[i] + (rho + delta) * od.dy1[i] + delta * rho * od.y1[i] - delta * lambda)
        .collect();
    let den = (0..n).map(|i| -od.y2[i] * (od.dy1[i] + delta * od.y1[i] - lambda)).collect();
    reconstruct(num, den, threshold)
}

/// Infection rate from the viral load relation:
/// `eta = [y2'' + (delta+c) y2' + delta c y2] / [y2 (N delta y1 - y2' - c y2)]`.
pub fn eta_from_viral_relation(od: &OutputDerivatives, beta: &[f64], threshold: f64) -> Reconstruction {
    let (big_n, delta, c) = (beta[2], beta[3], beta[4]);
    let n = od.times.len();
    let num = (0..n)
        .map(|i| od.d2y2[i] + (delta + c) * od.dy2[i] + delta * c * od.y2[i])
        .collect();
    let den = (0..n)
        .map(|i| od.y2[i] * (big_n * delta * od.y1[i] - od.dy2[i] - c * od.y2[i]))
        .collect();
    reconstruct(num, den, threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentRow {
    pub time: f64,
    pub eta_cd4: f64,
    pub eta_viral: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentCheck {
    pub rows: Vec<IdentRow>,
    /// Largest relative gap between the two reconstructions over unflagged times.
    pub max_gap: f64,
    /// Largest relative error of either reconstruction against the true `eta`.
    pub max_error: f64,
}

/// Solve the HIV model under `truth`, then reconstruct `eta` on `times`
/// from the outputs using the constants `candidate`.
pub fn ident_check(
    system: &Hiv,
    truth: &[f64],
    candidate: &[f64],
    eta: EtaFn<'_>,
    h: f64,
    times: &[f64],
    threshold: f64,
) -> Result<IdentCheck> {
    if candidate.len() != 5 {
        return Err(Error::invalid("candidate needs (lambda, rho, N, delta, c)"));
    }
    let (t0, t_end) = system.interval();
    let grid = Grid::uniform(t0, t_end, h)?;
    let sol = integrate(system, truth, Some(eta), &grid, Method::Rk4)?;
    let od = output_derivatives(system, truth, &sol, Some(eta), times)?;
    let a = eta_from_cd4_relation(&od, candidate, threshold);
    let b = eta_from_viral_relation(&od, candidate, threshold);
    let mut max_gap = 0.0_f64;
    let mut max_error = 0.0_f64;
    let rows = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let flagged = a.flagged[i] || b.flagged[i];
            if !flagged {
                let gap = ((a.eta[i] - b.eta[i]) / b.eta[i]).abs();
                max_gap = max_gap.max(if gap.is_finite() { gap } else { f64::INFINITY });
                let truth = eta(t);
                max_error = max_error.max(((a.eta[i] - truth) / truth).abs()).max(((b.eta[i] - truth) / truth).abs());
            }
            IdentRow {
                time: t,
                eta_cd4: a.eta[i],
                eta_viral: b.eta[i],
                flagged,
            }
        })
        .collect();
    Ok(IdentCheck { rows, max_gap, max_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{hiv_system, ScenarioId, HIV_TRUTH};

    fn dense() -> Vec<f64> {
        (0..=400).map(|i| i as f64 * 0.05).collect()
    }

    fn derivs(id: ScenarioId, params: &[f64]) -> OutputDerivatives {
        let sys = hiv_system();
        let f = move |t: f64| id.eta(t);
        let grid = Grid::uniform(0.0, 20.0, 1e-3).unwrap();
        let sol = integrate(&sys, params, Some(&f), &grid, Method::Rk4).unwrap();
        output_derivatives(&sys, params, &sol, Some(&f), &dense()).unwrap()
    }

    #[test]
    fn first_derivative_matches_finite_differences() {
        let sys = hiv_system();
        let f = |t: f64| ScenarioId::IV.eta(t);
        let grid = Grid::uniform(0.0, 20.0, 1e-3).unwrap();
        let sol = integrate(&sys, &HIV_TRUTH, Some(&f), &grid, Method::Rk4).unwrap();
        let times = [1.0, 3.3, 7.77, 12.0, 19.5];
        let od = output_derivatives(&sys, &HIV_TRUTH, &sol, Some(&f), &times).unwrap();
        let fd = 1e-4;
        for (i, &t) in times.iter().enumerate() {
            let y = |s: f64| {
                let x = sol.interpolate(s).unwrap();
                (x[0] + x[1], x[2])
            };
            let (a1, a2) = y(t + fd);
            let (b1, b2) = y(t - fd);
            let d1 = (a1 - b1) / (2.0 * fd);
            let d2 = (a2 - b2) / (2.0 * fd);
            assert!(((d1 - od.dy1[i]) / od.dy1[i]).abs() < 1e-5, "t={t}");
            assert!(((d2 - od.dy2[i]) / od.dy2[i]).abs() < 1e-5, "t={t}");
            // Second derivatives against differenced first derivatives.
            let c = output_derivatives(&sys, &HIV_TRUTH, &sol, Some(&f), &[t - fd, t + fd]).unwrap();
            let dd2 = (c.dy2[1] - c.dy2[0]) / (2.0 * fd);
            assert!(((dd2 - od.d2y2[i]) / od.d2y2[i]).abs() < 1e-4, "t={t}");
        }
    }

    #[test]
    fn viral_derivative_at_start() {
        let od = derivs(ScenarioId::I, &HIV_TRUTH);
        assert!((od.dy2[0] + 285_000.0).abs() < 1e-6);
    }

    #[test]
    fn equilibrium_has_flat_outputs() {
        // T_U* = c/(N delta eta), T_I* = (lambda - rho T_U*)/delta, V* = N delta T_I*/c.
        let eta = 9e-5;
        let (lambda, rho, n, delta, c) = (36.0, 0.108, 1000.0, 0.5, 3.0);
        let tu = c / (n * delta * eta);
        let ti = (lambda - rho * tu) / delta;
        let v = n * delta * ti / c;
        let sys = Hiv {
            x0: [tu, ti, v],
            ..Hiv::default()
        };
        let f = |_: f64| eta;
        let grid = Grid::uniform(0.0, 20.0, 0.1).unwrap();
        let p = [lambda, rho, n, delta, c];
        let sol = integrate(&sys, &p, Some(&f), &grid, Method::Rk4).unwrap();
        let od = output_derivatives(&sys, &p, &sol, Some(&f), &[0.0]).unwrap();
        assert!(od.dy1[0].abs() < 1e-9 && od.dy2[0].abs() < 1e-6, "{} {}", od.dy1[0], od.dy2[0]);
    }

    #[test]
    fn constant_rate_recovered_by_both_relations() {
        let od = derivs(ScenarioId::I, &HIV_TRUTH);
        for r in [
            eta_from_cd4_relation(&od, &HIV_TRUTH, WELL_CONDITIONED),
            eta_from_viral_relation(&od, &HIV_TRUTH, WELL_CONDITIONED),
        ] {
            for (i, e) in r.eta.iter().enumerate() {
                if !r.flagged[i] && od.times[i] > 0.0 && od.times[i] < 20.0 {
                    assert!((e / 9.5e-6 - 1.0).abs() < 1e-3, "t={} {e}", od.times[i]);
                }
            }
        }
    }

    #[test]
    fn varying_rate_recovered() {
        let od = derivs(ScenarioId::IV, &HIV_TRUTH);
        let r = eta_from_cd4_relation(&od, &HIV_TRUTH, WELL_CONDITIONED);
        let mut used = 0;
        for (i, e) in r.eta.iter().enumerate() {
            if !r.flagged[i] {
                used += 1;
                let truth = ScenarioId::IV.eta(od.times[i]);
                assert!((e / truth - 1.0).abs() < 5e-3);
            }
        }
        assert!(used > 300);
    }

    #[test]
    fn wrong_lambda_biases_reconstruction() {
        let od = derivs(ScenarioId::I, &HIV_TRUTH);
        let mut wrong = HIV_TRUTH;
        wrong[0] *= 1.5;
        let r = eta_from_cd4_relation(&od, &wrong, WELL_CONDITIONED);
        let devs: Vec<f64> = r
            .eta
            .iter()
            .zip(&r.flagged)
            .filter(|(_, f)| !**f)
            .map(|(e, _)| (e / 9.5e-6 - 1.0).abs())
            .collect();
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        assert!(mean > 0.05, "{mean}");
    }

    #[test]
    fn zero_virus_flags_everything() {
        let od = OutputDerivatives {
            times: vec![0.0, 1.0, 2.0],
            y1: vec![600.0; 3],
            dy1: vec![1.0; 3],
            d2y1: vec![0.1; 3],
            y2: vec![0.0; 3],
            dy2: vec![0.0; 3],
            d2y2: vec![0.0; 3],
        };
        for r in [
            eta_from_cd4_relation(&od, &HIV_TRUTH, WELL_CONDITIONED),
            eta_from_viral_relation(&od, &HIV_TRUTH, WELL_CONDITIONED),
        ] {
            assert!(r.flagged.iter().all(|f| *f));
            assert!(r.eta.iter().all(|e| e.is_nan()));
        }
    }

    #[test]
    fn relations_agree_at_truth() {
        for id in [ScenarioId::I, ScenarioId::IV, ScenarioId::Complex] {
            let f = move |t: f64| id.eta(t);
            let c = ident_check(&hiv_system(), &HIV_TRUTH, &HIV_TRUTH, &f, 1e-3, &dense(), WELL_CONDITIONED).unwrap();
            assert!(c.max_gap < 2e-3, "{id:?} {}", c.max_gap);
        }
    }

    #[test]
    fn perturbed_constants_break_agreement() {
        for id in [ScenarioId::I, ScenarioId::IV] {
            let f = move |t: f64| id.eta(t);
            for j in 0..5 {
                for factor in [0.9, 1.1] {
                    let mut cand = HIV_TRUTH;
                    cand[j] *= factor;
                    let c = ident_check(&hiv_system(), &HIV_TRUTH, &cand, &f, 1e-3, &dense(), WELL_CONDITIONED).unwrap();
                    assert!(c.max_gap > 5e-3, "{id:?} param {j} x{factor}: {}", c.max_gap);
                }
            }
        }
    }

    #[test]
    fn flagged_rows_are_marked_in_check() {
        let f = |t: f64| ScenarioId::I.eta(t);
        let c = ident_check(&hiv_system(), &HIV_TRUTH, &HIV_TRUTH, &f, 1e-3, &[0.5, 1.0], 1.5).unwrap();
        assert!(c.rows.iter().all(|r| r.flagged));
        assert_eq!(c.max_gap, 0.0);
    }
}
