//! Brute-force grid oracles for `q`, written independently of the library:
//! densities by a plain image sum, centres by complex arithmetic, every
//! phase (including the centre one) on a fixed grid, and the marginal by the
//! rectangle rule on that grid. Values are upper bounds on the true minimum
//! up to the marginal's discretisation error.
#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

/// Wrapped-Gaussian density by direct image summation over `|k| <= 12`.
pub fn wg_series(d: f64, sigma: f64) -> f64 {
    let norm = 1.0 / (sigma * TAU.sqrt());
    (-12..=12)
        .map(|k| {
            let t = d + TAU * k as f64;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .sum::<f64>()
        * norm
}

fn grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| -PI + TAU * (i + 1) as f64 / points as f64).collect()
}

fn centre(terms: &[(f64, f64)]) -> f64 {
    terms
        .iter()
        .map(|&(w, phi)| Complex64::from_polar(w, phi))
        .sum::<Complex64>()
        .arg()
}

/// First order, exhaustive over `(φ_{i-1}, φ_i, φ_{i+1})` on a `points³` grid.
pub fn q1_grid(sigma: f64, delta: f64, points: usize) -> f64 {
    let g = grid(points);
    let h = TAU / points as f64;
    // Densities depend only on index differences.
    let step: Vec<f64> = (0..points).map(|d| wg_series(h * d as f64 - delta, sigma)).collect();
    let two: Vec<f64> = (0..points)
        .map(|d| wg_series(h * d as f64 - 2.0 * delta, 2f64.sqrt() * sigma))
        .collect();
    let mut best = f64::INFINITY;
    for a in 0..g.len() {
        for b in 0..g.len() {
            let fab = step[(b + points - a) % points];
            for c in 0..g.len() {
                let v = fab * step[(c + points - b) % points] / two[(c + points - a) % points];
                if v < best {
                    best = v;
                }
            }
        }
    }
    TAU * best
}

/// Second order with `φ_{i-2} = 0`: outer `(φ_{i-1}, φ_{i+1}, φ_{i+2})` on
/// `points³`, centre phase and marginal on an `inner`-point grid.
pub fn q2_grid(r2: f64, sigma: f64, delta: f64, points: usize, inner: usize) -> f64 {
    let g = grid(points);
    let x = grid(inner);
    let hx = TAU / inner as f64;
    let ni = inner;
    let dens = |t: f64, c: f64| wg_series(t - c - delta, sigma);
    // f(x | 0, b)
    let mut f1 = vec![0.0; points * ni];
    // f(d | b, x)
    let mut f2 = vec![0.0; points * points * ni];
    // f(e | x, d)
    let mut f3 = vec![0.0; points * points * ni];
    for (ib, &b) in g.iter().enumerate() {
        let c0 = centre(&[(r2, 0.0), (1.0, b)]);
        for (ix, &xv) in x.iter().enumerate() {
            f1[ib * ni + ix] = dens(xv, c0);
        }
    }
    for (ib, &b) in g.iter().enumerate() {
        for (id, &d) in g.iter().enumerate() {
            for (ix, &xv) in x.iter().enumerate() {
                f2[(ib * points + id) * ni + ix] = dens(d, centre(&[(r2, b), (1.0, xv)]));
                // Same loop shape: here `ib` indexes φ_{i+1} and `id` φ_{i+2}.
                f3[(ib * points + id) * ni + ix] = dens(d, centre(&[(r2, xv), (1.0, b)]));
            }
        }
    }
    let mut best = f64::INFINITY;
    for ib in 0..points {
        let t1 = &f1[ib * ni..(ib + 1) * ni];
        for id in 0..points {
            let t2 = &f2[(ib * points + id) * ni..(ib * points + id + 1) * ni];
            for ie in 0..points {
                let t3 = &f3[(id * points + ie) * ni..(id * points + ie + 1) * ni];
                let (mut sum, mut lo) = (0.0, f64::INFINITY);
                for k in 0..ni {
                    let v = t1[k] * t2[k] * t3[k];
                    sum += v;
                    lo = lo.min(v);
                }
                let ratio = lo / (sum * hx);
                if ratio < best {
                    best = ratio;
                }
            }
        }
    }
    TAU * best
}

/// Third order with `φ_{i-3} = 0`: all six other phases on a `points`-grid.
pub fn q3_grid(r: [f64; 3], sigma: f64, delta: f64, points: usize) -> f64 {
    let g = grid(points);
    let n = points;
    let h = TAU / n as f64;
    let dens = |t: f64, c: f64| wg_series(t - c - delta, sigma);
    // Oldest-first windows; lag-k weight r[k-1] on the k-th most recent phase.
    let w = |older2: f64, older1: f64, newest: f64| centre(&[(r[2], older2), (r[1], older1), (r[0], newest)]);
    let idx = |parts: &[usize]| parts.iter().fold(0, |acc, &p| acc * n + p);
    // f(x | 0, a, b)
    let mut t0 = vec![0.0; n * n * n];
    // f(c | a, b, x), f(d | b, x, c), f(e | x, c, d)
    let mut t1 = vec![0.0; n * n * n * n];
    let mut t2 = vec![0.0; n * n * n * n];
    let mut t3 = vec![0.0; n * n * n * n];
    for (ia, &a) in g.iter().enumerate() {
        for (ib, &b) in g.iter().enumerate() {
            let c0 = w(0.0, a, b);
            for (ix, &x) in g.iter().enumerate() {
                t0[idx(&[ia, ib, ix])] = dens(x, c0);
                for (ic, &c) in g.iter().enumerate() {
                    t1[idx(&[ia, ib, ic, ix])] = dens(c, w(a, b, x));
                    // Reuse (a, b, c) as generic slots for the two later factors.
                    t2[idx(&[ia, ib, ic, ix])] = dens(b, w(a, x, c));
                    t3[idx(&[ia, ib, ic, ix])] = dens(c, w(x, a, b));
                }
            }
        }
    }
    // t2 slot (p, q, s) = f(q | p, x, s): window (φ_{i-1}=p, x, φ_{i+1}=s), target φ_{i+2}=q.
    // t3 slot (p, q, s) = f(s | x, p, q): window (x, φ_{i+1}=p, φ_{i+2}=q), target φ_{i+3}=s.
    let mut best = f64::INFINITY;
    for ia in 0..n {
        for ib in 0..n {
            let r0 = &t0[idx(&[ia, ib, 0])..][..n];
            for ic in 0..n {
                let r1 = &t1[idx(&[ia, ib, ic, 0])..][..n];
                for id in 0..n {
                    let r2 = &t2[idx(&[ib, id, ic, 0])..][..n];
                    for ie in 0..n {
                        let r3 = &t3[idx(&[ic, id, ie, 0])..][..n];
                        let (mut sum, mut lo) = (0.0, f64::INFINITY);
                        for k in 0..n {
                            let v = r0[k] * r1[k] * r2[k] * r3[k];
                            sum += v;
                            lo = lo.min(v);
                        }
                        let ratio = lo / (sum * h);
                        if ratio < best {
                            best = ratio;
                        }
                    }
                }
            }
        }
    }
    TAU * best
}
