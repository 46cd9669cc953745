//! Quadrature rules on the circle for the centre-phase marginal.

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureScheme {
    /// Periodic trapezoid where the integrand is analytic in a wide enough
    /// strip, otherwise Gauss-Legendre panels split at the near-singular
    /// angles of the combined-phase map.
    Auto,
    /// Plain periodic trapezoid on `node_count` equispaced nodes.
    PeriodicTrapezoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub node_count: usize,
    pub scheme: QuadratureScheme,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            node_count: 512,
            scheme: QuadratureScheme::Auto,
        }
    }
}

pub const MIN_NODES: usize = 64;

impl QuadratureSpec {
    pub fn new(node_count: usize, scheme: QuadratureScheme) -> Result<Self> {
        let q = QuadratureSpec { node_count, scheme };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count < MIN_NODES {
            return Err(Error::invalid(format!(
                "quadrature needs at least {MIN_NODES} nodes, got {}",
                self.node_count
            )));
        }
        Ok(())
    }

    /// Node count used for a kernel of spread `sigma`: sharply peaked kernels
    /// get at least 64 nodes per standard deviation.
    pub fn nodes_for(&self, sigma: f64) -> usize {
        self.node_count.max((64.0 * TAU / sigma).ceil() as usize)
    }
}

/// Strip half-width times node count above which the trapezoid error
/// (`~exp(-y n)`) is negligible.
pub(crate) const STRIP_NODES: f64 = 30.0;
/// Below this strip half-width a breakpoint is treated as an exact jump.
pub(crate) const EXACT_JUMP: f64 = 1e-10;
const PANEL: usize = 16;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL))
}

/// A rule on one period, nodes ascending within `[start, start + 2π)`.
#[derive(Clone, Debug, Default)]
pub(crate) struct Rule {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub sin: Vec<f64>,
    pub cos: Vec<f64>,
}

impl Rule {
    pub fn trapezoid(n: usize) -> Rule {
        let h = TAU / n as f64;
        let x: Vec<f64> = (1..=n).map(|j| -PI + h * j as f64).collect();
        let (sin, cos) = x.iter().map(|v| v.sin_cos()).unzip();
        Rule {
            w: vec![h; n],
            x,
            sin,
            cos,
        }
    }

    /// Gauss-Legendre panels between consecutive breakpoints `(angle, y)`,
    /// where `y` is the distance of the nearest complex singularity from the
    /// real axis. Panels are graded geometrically toward breakpoints with
    /// `y > EXACT_JUMP`; at exact jumps each side is analytic up to the end.
    pub fn panels(breaks: &mut Vec<(f64, f64)>, n: usize, out: &mut Rule) {
        out.x.clear();
        out.w.clear();
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0));
        breaks.dedup_by(|b, a| {
            if (b.0 - a.0).abs() < 1e-12 {
                a.1 = a.1.min(b.1);
                true
            } else {
                false
            }
        });
        if breaks.len() > 1 && breaks[0].0 + TAU - breaks[breaks.len() - 1].0 < 1e-12 {
            let last = breaks.pop().unwrap();
            breaks[0].1 = breaks[0].1.min(last.1);
        }
        let (gx, gw) = panel_rule();
        let hmax = TAU * PANEL as f64 / n as f64;
        let m = breaks.len();
        let mut edges = Vec::new();
        for i in 0..m {
            let (a, ya) = breaks[i];
            let (b, yb) = if i + 1 < m { breaks[i + 1] } else { (breaks[0].0 + TAU, breaks[0].1) };
            let mid = 0.5 * (a + b);
            edges.clear();
            edges.push(a);
            if ya > EXACT_JUMP {
                let mut s = ya;
                while a + s < mid {
                    edges.push(a + s);
                    s *= 2.0;
                }
            }
            edges.push(mid);
            let right_start = edges.len();
            if yb > EXACT_JUMP {
                let mut s = yb;
                while b - s > mid {
                    edges.push(b - s);
                    s *= 2.0;
                }
            }
            edges.push(b);
            edges[right_start..].reverse();
            // `b` now sits at right_start; restore ascending order.
            edges[right_start..].rotate_left(1);
            for e in edges.windows(2) {
                let len = e[1] - e[0];
                if len <= 0.0 {
                    continue;
                }
                let pieces = (len / hmax).ceil().max(1.0) as usize;
                let step = len / pieces as f64;
                for p in 0..pieces {
                    let c = e[0] + step * (p as f64 + 0.5);
                    let half = 0.5 * step;
                    for (t, wt) in gx.iter().zip(gw) {
                        out.x.push(c + half * t);
                        out.w.push(half * wt);
                    }
                }
            }
        }
        out.sin.clear();
        out.cos.clear();
        for &x in &out.x {
            let (s, c) = x.sin_cos();
            out.sin.push(s);
            out.cos.push(c);
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for deg in 0..32 {
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((got - want).abs() < 1e-13, "degree {deg}: {got} vs {want}");
        }
        let (x, w) = gauss_legendre(5);
        assert!((x[4] - 0.906_179_845_938_664).abs() < 1e-14);
        assert!((w[2] - 128.0 / 225.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_covers_half_open_period() {
        let r = Rule::trapezoid(64);
        assert_eq!(r.len(), 64);
        assert!((r.x[63] - PI).abs() < 1e-15);
        assert!(r.x[0] > -PI);
        let cos2: f64 = r.x.iter().zip(&r.w).map(|(x, w)| w * (2.0 * x).cos().powi(2)).sum();
        assert!((cos2 - PI).abs() < 1e-12);
    }

    #[test]
    fn panels_integrate_piecewise_function_exactly() {
        // Jumps at 1.0 and -2.0, analytic on each arc.
        let f = |x: f64| {
            let t = crate::circular::wrap_angle(x);
            if (-2.0..1.0).contains(&t) {
                t.cos()
            } else {
                3.0 + (2.0 * t).sin()
            }
        };
        let exact = (1f64.sin() + 2f64.sin()) + 3.0 * (TAU - 3.0) + (2f64.cos() - 4f64.cos()) / 2.0;
        let mut rule = Rule::default();
        let mut breaks = vec![(1.0, 0.0), (-2.0, 0.0)];
        Rule::panels(&mut breaks, 256, &mut rule);
        let got: f64 = rule.x.iter().zip(&rule.w).map(|(x, w)| w * f(*x)).sum();
        assert!((got - exact).abs() < 1e-12, "{got} vs {exact}");
        assert!(rule.x.windows(2).all(|p| p[1] > p[0]));
        assert!(rule.x[rule.len() - 1] - rule.x[0] < TAU);
    }

    #[test]
    fn graded_panels_resolve_near_singularity() {
        // 1 / (cosh(y) - cos(x - a)) has poles at a ± i y; integral 2π / sinh(y).
        // Written with half-angle sines to avoid cancellation near the peak.
        for &y in &[1e-3, 1e-6] {
            let a = 0.4;
            let mut rule = Rule::default();
            let mut breaks = vec![(a, y)];
            Rule::panels(&mut breaks, 512, &mut rule);
            let f = |x: f64| {
                let d = crate::circular::wrap_angle(x - a);
                1.0 / (2.0 * (0.5 * y).sinh().powi(2) + 2.0 * (0.5 * d).sin().powi(2))
            };
            let got: f64 = rule.x.iter().zip(&rule.w).map(|(x, w)| w * f(*x)).sum();
            let want = TAU / y.sinh();
            assert!(((got - want) / want).abs() < 1e-9, "y = {y}: {got} vs {want}");
        }
    }

    #[test]
    fn spec_validation_and_scaling() {
        assert!(QuadratureSpec::new(32, QuadratureScheme::Auto).is_err());
        let q = QuadratureSpec::default();
        assert_eq!(q.nodes_for(1.0), 512);
        assert_eq!(q.nodes_for(0.05), 8043);
    }
}
