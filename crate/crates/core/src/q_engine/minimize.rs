//! Derivative-free global search on a torus: coarse grid, then coordinate
//! descent with a shrinking step from the best grid points.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use crate::circular::wrap_angle;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub(crate) struct SearchPlan {
    pub dims: usize,
    pub points: usize,
    pub starts: usize,
    pub budget: u64,
    /// Refinement stops once the step drops below this.
    pub min_step: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct Found {
    pub value: f64,
    pub point: Vec<f64>,
    pub evaluations: u64,
    pub grid_evaluations: u64,
    pub iterations: u64,
    /// Objective decrease achieved by the last accepted move.
    pub last_gain: f64,
}

/// Grid abscissa `i` of `points` on `(-π, π]`; includes `0` and `π` for even counts.
pub(crate) fn grid_value(i: usize, points: usize) -> f64 {
    -PI + TAU * (i + 1) as f64 / points as f64
}

fn grid_point(mut idx: u64, dims: usize, points: usize, out: &mut [f64]) {
    for d in (0..dims).rev() {
        out[d] = grid_value((idx % points as u64) as usize, points);
        idx /= points as u64;
    }
}

fn by_value(a: &(f64, u64), b: &(f64, u64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn keep_best(mut v: Vec<(f64, u64)>, k: usize) -> Vec<(f64, u64)> {
    v.sort_by(by_value);
    v.truncate(k);
    v
}

/// `coarse` ranks grid points, `fine` drives the refinement. Both return
/// `None` where the objective is undefined; such points are skipped.
pub(crate) fn minimize<C, F>(plan: &SearchPlan, coarse: C, fine: F) -> Result<Found>
where
    C: Fn(&[f64]) -> Option<f64> + Sync,
    F: Fn(&[f64]) -> Option<f64>,
{
    let total = (plan.points as u64)
        .checked_pow(plan.dims as u32)
        .unwrap_or(u64::MAX);
    if total > plan.budget {
        return Err(Error::BudgetExhausted {
            budget: plan.budget,
            needed: total,
        });
    }
    let k = plan.starts.max(1);
    let dims = plan.dims;
    let best = (0..total)
        .into_par_iter()
        .fold_with((Vec::new(), vec![0.0; dims]), |(mut acc, mut buf), idx| {
            grid_point(idx, dims, plan.points, &mut buf);
            if let Some(v) = coarse(&buf).filter(|v| !v.is_nan()) {
                acc.push((v, idx));
                if acc.len() >= 4 * k {
                    acc = keep_best(acc, k);
                }
            }
            (acc, buf)
        })
        .map(|(acc, _)| keep_best(acc, k))
        .reduce(Vec::new, |mut a, b| {
            a.extend(b);
            keep_best(a, k)
        });
    if best.is_empty() {
        return Err(Error::Numerical("objective undefined on the whole search grid".into()));
    }

    let mut evaluations = total;
    let mut iterations = 0;
    let mut winner: Option<(f64, Vec<f64>, f64)> = None;
    for &(_, idx) in &best {
        let mut x = vec![0.0; dims];
        grid_point(idx, dims, plan.points, &mut x);
        let Some(mut fx) = fine(&x) else { continue };
        evaluations += 1;
        let mut step = 0.5 * TAU / plan.points as f64;
        let mut last_gain = 0.0;
        // Hooke-Jeeves: axis exploration, then pattern moves along the last
        // successful displacement; the step shrinks when exploration fails.
        while step >= plan.min_step && evaluations < plan.budget {
            iterations += 1;
            let (y, fy) = explore(&fine, &x, fx, step, &mut evaluations);
            if fy >= fx {
                step *= 0.5;
                continue;
            }
            let (mut base, mut fbase) = (x, fx);
            let (mut cur, mut fcur) = (y, fy);
            while evaluations < plan.budget {
                let jump: Vec<f64> = cur.iter().zip(&base).map(|(c, b)| wrap_angle(c + wrap_angle(c - b))).collect();
                evaluations += 1;
                let fj = fine(&jump).unwrap_or(f64::INFINITY);
                let (z, fz) = explore(&fine, &jump, fj, step, &mut evaluations);
                if fz < fcur {
                    base = cur;
                    fbase = fcur;
                    cur = z;
                    fcur = fz;
                } else {
                    break;
                }
            }
            last_gain = fbase - fcur;
            x = cur;
            fx = fcur;
        }
        let better = match &winner {
            None => true,
            Some((v, p, _)) => fx < *v || (fx == *v && lex_less(&x, p)),
        };
        if better {
            winner = Some((fx, x, last_gain));
        }
    }
    let (value, point, last_gain) =
        winner.ok_or_else(|| Error::Numerical("objective undefined at every refinement start".into()))?;
    Ok(Found {
        value,
        point,
        evaluations,
        grid_evaluations: total,
        iterations,
        last_gain,
    })
}

/// One sweep of `±step` trials along each axis, keeping improvements.
fn explore<F: Fn(&[f64]) -> Option<f64>>(f: &F, x: &[f64], fx: f64, step: f64, evaluations: &mut u64) -> (Vec<f64>, f64) {
    let mut y = x.to_vec();
    let mut fy = fx;
    for d in 0..y.len() {
        let orig = y[d];
        for dir in [1.0, -1.0] {
            y[d] = wrap_angle(orig + dir * step);
            *evaluations += 1;
            match f(&y) {
                Some(v) if v < fy => {
                    fy = v;
                    break;
                }
                _ => y[d] = orig,
            }
        }
    }
    (y, fy)
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .find_map(|(x, y)| match x.total_cmp(y) {
            Ordering::Equal => None,
            o => Some(o == Ordering::Less),
        })
        .unwrap_or(false)
}
