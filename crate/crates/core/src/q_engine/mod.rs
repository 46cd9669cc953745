//! The randomisation parameter `q`: the largest uniform fraction of the
//! conditional density of a pulse phase given its `ℓc` neighbours on each side,
//!
//! ```text
//! q = 2π · min  N(φ) / ∫ N(φ) dφ_i,     N = Π_{k=0..ℓc} f(φ_{i+k} | φ_{i+k-ℓc}, …, φ_{i+k-1})
//! ```
//!
//! minimised over all `2ℓc + 1` phases. The factors of `N` that involve only
//! the left neighbours cancel between numerator and denominator, so the
//! marginal is always a one-dimensional integral over the centre phase.
//! One phase is pinned to zero (the objective is invariant under a common
//! shift); the remaining `2ℓc - 1` outer phases are searched on a grid and
//! refined by coordinate descent, while the centre phase is handled exactly
//! for each outer point: the same quadrature nodes give the marginal and a
//! starting point for the inner minimum.

mod minimize;
pub mod quadrature;

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::circular::{wrap_angle, Angle, WrappedGaussian};
use crate::error::{Error, Result};
use crate::phase_model::{combined_phase, CorrelationModel, DEGENERATE_TOL};
use minimize::{minimize, SearchPlan};
use quadrature::{Rule, EXACT_JUMP, STRIP_NODES};
pub use quadrature::{QuadratureScheme, QuadratureSpec};

/// Closest approach of a trial centre phase to an exact jump of a combined phase.
const JUMP_GUARD: f64 = 1e-9;

/// Slack allowed on the raw estimate before clamping to `[0, 1]`.
pub const RAW_Q_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exactness {
    /// Two-dimensional minimisation of a closed-form ratio.
    ClosedForm,
    /// Grid plus local refinement at the default resolution.
    Refined,
    /// Best value found; an upper bound on the true minimum, not certified.
    BestFound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub evaluations: u64,
    pub grid_points_per_dim: usize,
    pub grid_evaluations: u64,
    pub refinement_iterations: u64,
    pub quadrature_nodes: usize,
    /// `|q(n) - q(n/2)|` at the minimiser, plus the last refinement gain.
    pub error_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QResult {
    pub q: f64,
    /// Estimate before clamping to `[0, 1]`.
    pub raw_q: f64,
    /// Minimising phases, oldest first, `φ_{i-ℓc}` through `φ_{i+ℓc}`.
    pub argmin_phases: Vec<Angle>,
    pub exactness: Exactness,
    pub solver_stats: SolverStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Coarse grid points per free outer phase.
    pub grid_points: usize,
    /// Number of best grid points refined by coordinate descent.
    pub starts: usize,
    /// Cap on objective evaluations (each one is a full inner quadrature).
    pub budget: u64,
    pub min_step: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            grid_points: 36,
            starts: 8,
            budget: 20_000_000,
            min_step: 1e-6,
        }
    }
}

impl SearchOptions {
    fn validate(&self) -> Result<()> {
        if self.grid_points < 4 {
            return Err(Error::invalid("grid needs at least 4 points per dimension"));
        }
        if !(self.min_step > 0.0) {
            return Err(Error::invalid("refinement step floor must be positive"));
        }
        Ok(())
    }
}

fn finish(raw_q: f64, argmin_phases: Vec<Angle>, exactness: Exactness, solver_stats: SolverStats) -> Result<QResult> {
    if !(-RAW_Q_SLACK..=1.0 + RAW_Q_SLACK).contains(&raw_q) {
        return Err(Error::Numerical(format!("raw q = {raw_q} is outside [0, 1]")));
    }
    Ok(QResult {
        q: raw_q.clamp(0.0, 1.0),
        raw_q,
        argmin_phases,
        exactness,
        solver_stats,
    })
}

/// First-order `q` from the closed-form two-step marginal, which is a wrapped
/// Gaussian of spread `√2 σ`. With `u = φ_i - φ_{i-1} - δφ̄` and
/// `v = φ_{i+1} - φ_i - δφ̄` the ratio is `f(u) f(v) / f₂(u + v)`, so the
/// mean increment drops out. No quadrature is needed; `quad` is only validated.
pub fn q_first_order(sigma: f64, delta_phi_bar: Angle, quad: &QuadratureSpec) -> Result<QResult> {
    quad.validate()?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive and finite, got {sigma}")));
    }
    let f = WrappedGaussian::new(sigma)?;
    let f2 = WrappedGaussian::new(2f64.sqrt() * sigma)?;
    let obj = |x: &[f64]| Some(f.log_density(x[0], 0.0) + f.log_density(x[1], 0.0) - f2.log_density(x[0] + x[1], 0.0));
    let plan = SearchPlan {
        dims: 2,
        points: 720,
        starts: 8,
        budget: u64::MAX,
        min_step: 1e-9,
    };
    let found = minimize(&plan, obj, obj)?;
    let d = delta_phi_bar.value();
    let (u, v) = (found.point[0], found.point[1]);
    let argmin = vec![Angle::ZERO, Angle::new(u + d), Angle::new(u + v + 2.0 * d)];
    let raw = TAU * found.value.exp();
    let stats = SolverStats {
        evaluations: found.evaluations,
        grid_points_per_dim: plan.points,
        grid_evaluations: found.grid_evaluations,
        refinement_iterations: found.iterations,
        quadrature_nodes: 0,
        error_bound: raw * found.last_gain,
    };
    finish(raw, argmin, Exactness::ClosedForm, stats)
}

/// Second-order `q`, searching the reduced five-phase configuration
/// `(0, φ_{i-1}, φ_i, φ_{i+1}, φ_{i+2})`.
pub fn q_second_order(m: &CorrelationModel, quad: &QuadratureSpec) -> Result<QResult> {
    q_second_order_with(m, quad, &SearchOptions::default())
}

pub fn q_second_order_with(m: &CorrelationModel, quad: &QuadratureSpec, opts: &SearchOptions) -> Result<QResult> {
    m.validate()?;
    if m.ell_c != 2 {
        return Err(Error::invalid(format!("second-order q needs ℓc = 2, got {}", m.ell_c)));
    }
    solve(m, quad, opts, second_order_factors, Exactness::Refined)
}

/// `q` for any correlation length. For `ℓc >= 3` the result is the best
/// value found within the budget, an upper bound on the true minimum.
pub fn q_general(m: &CorrelationModel, quad: &QuadratureSpec, opts: &SearchOptions) -> Result<QResult> {
    m.validate()?;
    let exactness = if m.ell_c >= 3 { Exactness::BestFound } else { Exactness::Refined };
    solve(m, quad, opts, window_factors, exactness)
}

/// A factor of `N` whose conditioning window contains the centre phase:
/// density of `target` about `arg(C + w e^{jx}) + δφ̄`.
#[derive(Clone, Copy, Debug)]
struct Moving {
    cr: f64,
    ci: f64,
    w: f64,
    target: f64,
}

/// `N` as a function of the centre phase `x` for fixed outer phases.
#[derive(Clone, Debug)]
struct Integrand {
    /// Mean of the `k = 0` factor, density of `x` itself.
    fixed_mean: f64,
    moving: Vec<Moving>,
}

type FactorBuilder = fn(&CorrelationModel, &[f64]) -> Option<Integrand>;

/// Explicit five-phase layout: outer `[φ_{i-1}, φ_{i+1}, φ_{i+2}]`, `φ_{i-2} = 0`.
fn second_order_factors(m: &CorrelationModel, outer: &[f64]) -> Option<Integrand> {
    let r2 = m.r[1];
    let (prev1, next1, next2) = (outer[0], outer[1], outer[2]);
    // f(φ_i | φ_{i-2} = 0, φ_{i-1})
    let centre = combined_phase([0.0, prev1], &m.r)?;
    let (s1, c1) = prev1.sin_cos();
    let (s2, c2) = next1.sin_cos();
    Some(Integrand {
        fixed_mean: centre + m.delta_phi_bar,
        moving: vec![
            // f(φ_{i+1} | φ_{i-1}, φ_i): φ_i at lag 1, φ_{i-1} at lag 2.
            Moving {
                cr: r2 * c1,
                ci: r2 * s1,
                w: 1.0,
                target: next1,
            },
            // f(φ_{i+2} | φ_i, φ_{i+1}): φ_{i+1} at lag 1, φ_i at lag 2.
            Moving {
                cr: c2,
                ci: s2,
                w: r2,
                target: next2,
            },
        ],
    })
}

/// Generic layout: phases `p[0..=2ℓc]` with `p[0] = 0`, `p[ℓc]` the centre
/// and the outer vector filling the remaining slots in order.
fn window_factors(m: &CorrelationModel, outer: &[f64]) -> Option<Integrand> {
    let l = m.ell_c;
    let mut p = Vec::with_capacity(2 * l + 1);
    p.push(0.0);
    p.extend_from_slice(&outer[..l - 1]);
    p.push(f64::NAN);
    p.extend_from_slice(&outer[l - 1..]);
    let centre = combined_phase(p[..l].iter().copied(), &m.r)?;
    let scale: f64 = m.r.iter().sum();
    let mut moving = Vec::with_capacity(l);
    for k in 1..=l {
        let (mut cr, mut ci) = (0.0, 0.0);
        for (j, &phi) in p.iter().enumerate().take(l + k).skip(k) {
            if j == l {
                continue;
            }
            let w = m.r[l + k - 1 - j];
            let (s, c) = phi.sin_cos();
            cr += w * c;
            ci += w * s;
        }
        let w = m.r[k - 1];
        if w == 0.0 && cr.hypot(ci) <= DEGENERATE_TOL * scale {
            return None;
        }
        moving.push(Moving { cr, ci, w, target: p[l + k] });
    }
    Some(Integrand {
        fixed_mean: centre + m.delta_phi_bar,
        moving,
    })
}

impl Integrand {
    #[inline]
    fn log_n(&self, wg: &WrappedGaussian, shift: f64, x: f64, s: f64, c: f64) -> f64 {
        let mut acc = wg.log_density(x, self.fixed_mean);
        for f in &self.moving {
            let mean = (f.ci + f.w * s).atan2(f.cr + f.w * c) + shift;
            acc += wg.log_density(f.target, mean);
        }
        acc
    }

    #[inline]
    fn log_n_at(&self, wg: &WrappedGaussian, shift: f64, x: f64) -> f64 {
        let (s, c) = x.sin_cos();
        self.log_n(wg, shift, x, s, c)
    }

    /// Angles where `C + w e^{jx}` comes closest to zero, with the distance
    /// `|ln(|C| / w)|` of the complex singularity from the real axis.
    fn breakpoints(&self, nodes: usize, out: &mut Vec<(f64, f64)>) {
        out.clear();
        for f in &self.moving {
            let mag = f.cr.hypot(f.ci);
            if f.w <= 0.0 || mag == 0.0 {
                continue;
            }
            let y = (mag / f.w).ln().abs();
            if y * (nodes as f64) < STRIP_NODES {
                out.push((wrap_angle(f.ci.atan2(f.cr) + PI), y));
            }
        }
    }
}

struct Problem<'a> {
    model: &'a CorrelationModel,
    wg: WrappedGaussian,
    scheme: QuadratureScheme,
    build: FactorBuilder,
}

/// Per-resolution state shared by evaluations.
struct Resolution {
    nodes: usize,
    trapezoid: Rule,
}

impl Resolution {
    fn new(nodes: usize) -> Self {
        Resolution {
            nodes,
            trapezoid: Rule::trapezoid(nodes),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Inner {
    log_ratio: f64,
    argmin: f64,
}

impl Problem<'_> {
    fn evaluate(&self, res: &Resolution, outer: &[f64], precise: bool) -> Option<Inner> {
        let g = (self.build)(self.model, outer)?;
        let shift = self.model.delta_phi_bar;
        let mut breaks = Vec::new();
        let mut panels = Rule::default();
        if self.scheme == QuadratureScheme::Auto {
            g.breakpoints(res.nodes, &mut breaks);
        }
        let rule = if breaks.is_empty() {
            &res.trapezoid
        } else {
            Rule::panels(&mut breaks, res.nodes, &mut panels);
            &panels
        };
        let n = rule.len();
        let mut vals = Vec::with_capacity(n);
        let mut hi = f64::NEG_INFINITY;
        let mut lo = (f64::INFINITY, 0);
        for j in 0..n {
            let v = g.log_n(&self.wg, shift, rule.x[j], rule.sin[j], rule.cos[j]);
            hi = hi.max(v);
            if v < lo.0 {
                lo = (v, j);
            }
            vals.push(v);
        }
        if !hi.is_finite() {
            return None;
        }
        let sum: f64 = vals.iter().zip(&rule.w).map(|(v, w)| w * (v - hi).exp()).sum();
        let log_d = hi + sum.ln();

        let (mut best, mut arg) = (lo.0, rule.x[lo.1]);
        if precise {
            // Within ~1e-13 of an exact jump the phasor sum is pure rounding
            // noise, so trial points are kept JUMP_GUARD away from it; the
            // one-sided limits are taken at that distance.
            let jumps: Vec<f64> = breaks.iter().filter(|b| b.1 <= EXACT_JUMP).map(|b| b.0).collect();
            let guard = |x: f64| {
                for &b in &jumps {
                    let d = wrap_angle(x - b);
                    if d.abs() < JUMP_GUARD {
                        return b + JUMP_GUARD.copysign(d);
                    }
                }
                x
            };
            let j = lo.1;
            let left = if j == 0 { rule.x[n - 1] - TAU } else { rule.x[j - 1] };
            let right = if j + 1 == n { rule.x[0] + TAU } else { rule.x[j + 1] };
            let (x, v) = golden(|x| g.log_n_at(&self.wg, shift, guard(x)), left, right);
            if v < best {
                best = v;
                arg = guard(x);
            }
            for &b in &jumps {
                for x in [b - JUMP_GUARD, b + JUMP_GUARD] {
                    let v = g.log_n_at(&self.wg, shift, x);
                    if v < best {
                        best = v;
                        arg = x;
                    }
                }
            }
        }
        Some(Inner {
            log_ratio: best - log_d,
            argmin: wrap_angle(arg),
        })
    }
}

fn golden<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if b - a < 1e-12 {
            break;
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Outer phases plus the centre phase, reassembled oldest first.
fn assemble(l: usize, outer: &[f64], centre: f64) -> Vec<Angle> {
    let mut p = Vec::with_capacity(2 * l + 1);
    p.push(Angle::ZERO);
    p.extend(outer[..l - 1].iter().map(|&x| Angle::new(x)));
    p.push(Angle::new(centre));
    p.extend(outer[l - 1..].iter().map(|&x| Angle::new(x)));
    p
}

fn solve(
    m: &CorrelationModel,
    quad: &QuadratureSpec,
    opts: &SearchOptions,
    build: FactorBuilder,
    exactness: Exactness,
) -> Result<QResult> {
    quad.validate()?;
    opts.validate()?;
    if !(m.sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {}", m.sigma)));
    }
    let problem = Problem {
        model: m,
        wg: WrappedGaussian::new(m.sigma)?,
        scheme: quad.scheme,
        build,
    };
    let nodes = quad.nodes_for(m.sigma);
    let full = Resolution::new(nodes);
    let plan = SearchPlan {
        dims: 2 * m.ell_c - 1,
        points: opts.grid_points,
        starts: opts.starts,
        budget: opts.budget,
        min_step: opts.min_step,
    };
    // The grid only ranks refinement starts, so it runs at reduced resolution.
    let coarse = Resolution::new((nodes / 4).max(128));
    let found = minimize(
        &plan,
        |x| problem.evaluate(&coarse, x, false).map(|r| r.log_ratio),
        |x| problem.evaluate(&full, x, true).map(|r| r.log_ratio),
    )?;
    let at = problem
        .evaluate(&full, &found.point, true)
        .ok_or_else(|| Error::Numerical("objective undefined at the reported minimiser".into()))?;
    let raw = TAU * at.log_ratio.exp();
    let half = Resolution::new(nodes / 2);
    let raw_half = problem
        .evaluate(&half, &found.point, true)
        .map_or(f64::INFINITY, |r| TAU * r.log_ratio.exp());
    let stats = SolverStats {
        evaluations: found.evaluations + 2,
        grid_points_per_dim: opts.grid_points,
        grid_evaluations: found.grid_evaluations,
        refinement_iterations: found.iterations,
        quadrature_nodes: nodes,
        error_bound: (raw - raw_half).abs() + raw * found.last_gain,
    };
    finish(raw, assemble(m.ell_c, &found.point, at.argmin), exactness, stats)
}

#[cfg(test)]
mod tests;
