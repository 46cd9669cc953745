//! Visibility statistics from detector intensities and calibration of the
//! correlation model by sweeping interferometer settings.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circular::{wrap_angle, Angle};
use crate::error::{Error, Result};
use crate::io::{finite_or_null, fmt_f64};
use crate::optics::{for_each_record, DetectionRecord, InputIntensity, NetworkConfig, Topology};
use crate::phase_model::PhaseSequence;

/// Rounds with `μ'_i·μ_χ` below this fraction of `(Σμ')²` are skipped.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityEstimate {
    pub value: f64,
    #[serde(with = "finite_or_null")]
    pub standard_error: f64,
    pub n_rounds: usize,
    pub n_skipped: usize,
}

/// Running mean and variance (Welford).
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn standard_error(&self) -> f64 {
        if self.n < 2 {
            f64::INFINITY
        } else {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        }
    }
}

/// `σ = √(-2 ln V)`; `+∞` for `V <= 0`, `0` for `V >= 1`.
pub fn sigma_from_visibility(v: f64) -> Result<f64> {
    if v.is_nan() {
        return Err(Error::invalid("visibility is NaN"));
    }
    Ok(if v <= 0.0 {
        f64::INFINITY
    } else if v >= 1.0 {
        0.0
    } else {
        (-2.0 * v.ln()).sqrt()
    })
}

/// Standard visibility from the constructive-port intensity recorded at the
/// phase settings of maximal and minimal output.
pub fn visibility_first_order(at_max: &[DetectionRecord], at_min: &[DetectionRecord]) -> Result<VisibilityEstimate> {
    if at_max.is_empty() || at_min.is_empty() {
        return Err(Error::invalid("both record sets must be non-empty"));
    }
    let moments = |recs: &[DetectionRecord]| {
        let mut m = Moments::default();
        recs.iter().filter(|r| !r.warmup).for_each(|r| m.push(r.mu_beta1));
        m
    };
    let (hi, lo) = (moments(at_max), moments(at_min));
    if hi.n == 0 || lo.n == 0 {
        return Err(Error::invalid("no settled rounds in a record set"));
    }
    let s = hi.mean + lo.mean;
    if s <= 0.0 {
        return Err(Error::DegenerateData("total detected intensity is zero".into()));
    }
    let (a, b) = (hi.mean, lo.mean);
    let se = ((2.0 * b / (s * s) * hi.standard_error()).powi(2) + (2.0 * a / (s * s) * lo.standard_error()).powi(2)).sqrt();
    Ok(VisibilityEstimate {
        value: (a - b) / s,
        standard_error: se,
        n_rounds: hi.n + lo.n,
        n_skipped: 0,
    })
}

fn expected_arity(cfg: &NetworkConfig) -> (usize, usize) {
    match cfg.topology {
        Topology::Feedback => (3, 2),
        _ => (cfg.ell_c + 1, cfg.ell_c - 1),
    }
}

fn check_arity(rec: &DetectionRecord, cfg: &NetworkConfig) -> Result<()> {
    let (prime, xi) = expected_arity(cfg);
    if rec.mu_prime.len() != prime || rec.mu_xi.len() != xi {
        return Err(Error::invalid(format!(
            "record {} has {} input and {} monitor intensities; configuration expects {prime} and {xi}",
            rec.round_index,
            rec.mu_prime.len(),
            rec.mu_xi.len()
        )));
    }
    Ok(())
}

/// Per-round `cos(δφ_i - ε'_i + φ)` from `β1` and the monitors, or `None`
/// when the denominator guard trips.
pub fn round_cosine(rec: &DetectionRecord) -> Option<f64> {
    let total = rec.total_in();
    let den2 = rec.mu_current() * rec.mu_chi();
    if !(den2 >= DENOMINATOR_GUARD * total * total) || den2 <= 0.0 {
        return None;
    }
    let num = 2.0 * rec.mu_beta1 + rec.mu_xi.iter().sum::<f64>() - total;
    Some(num / (2.0 * den2.sqrt()))
}

#[derive(Clone, Copy, Debug, Default)]
struct VAccumulator {
    moments: Moments,
    skipped: usize,
}

impl VAccumulator {
    fn push(&mut self, rec: &DetectionRecord) {
        if rec.warmup {
            return;
        }
        match round_cosine(rec) {
            Some(c) => self.moments.push(c),
            None => self.skipped += 1,
        }
    }

    fn finish(self) -> Result<VisibilityEstimate> {
        if self.moments.n == 0 {
            return Err(Error::DegenerateData(format!(
                "all {} rounds failed the denominator guard",
                self.skipped
            )));
        }
        Ok(VisibilityEstimate {
            value: self.moments.mean,
            standard_error: self.moments.standard_error(),
            n_rounds: self.moments.n,
            n_skipped: self.skipped,
        })
    }
}

/// Generalised visibility: sample mean of the per-round cosine. Feedback
/// rounds flagged as warmup are left out.
pub fn v_statistic(records: &[DetectionRecord], cfg: &NetworkConfig) -> Result<VisibilityEstimate> {
    if records.is_empty() {
        return Err(Error::invalid("no detection records"));
    }
    let mut acc = VAccumulator::default();
    for r in records {
        check_arity(r, cfg)?;
        acc.push(r);
    }
    acc.finish()
}

/// [`v_statistic`] computed while propagating, without storing records.
pub fn v_statistic_streamed(cfg: &NetworkConfig, phases: &PhaseSequence) -> Result<VisibilityEstimate> {
    let mut acc = VAccumulator::default();
    let mut arity = Ok(());
    for_each_record(cfg, phases, |r| {
        if acc.moments.n + acc.skipped == 0 && arity.is_ok() {
            arity = check_arity(r, cfg);
        }
        acc.push(r);
    })?;
    arity?;
    acc.finish()
}

/// Supplier replaying the same phase sequence at every setting.
pub fn replay(phases: &PhaseSequence) -> impl Fn(&NetworkConfig) -> Result<VisibilityEstimate> + Sync + '_ {
    move |cfg| v_statistic_streamed(cfg, phases)
}

/// Phase-shifter and attenuator values of one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub phase_shift: Angle,
    pub attenuators: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub settings: Settings,
    pub v: VisibilityEstimate,
}

/// Cartesian grid over the phase shift and each attenuator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub phase_shifts: Vec<f64>,
    pub attenuators: Vec<Vec<f64>>,
    /// Follow the coarse grid with a 3x finer pass around its best cell.
    #[serde(default = "yes")]
    pub refine: bool,
}

fn yes() -> bool {
    true
}

/// `n` evenly spaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect(),
    }
}

impl SweepGrid {
    /// `n_phase` shifts on the half-open period and `n_att` values on
    /// `[0, 1]` for each of `attenuators` attenuators.
    pub fn uniform(n_phase: usize, attenuators: usize, n_att: usize) -> Self {
        SweepGrid {
            phase_shifts: (0..n_phase).map(|i| -PI + TAU * (i + 1) as f64 / n_phase as f64).collect(),
            attenuators: vec![linspace(0.0, 1.0, n_att); attenuators],
            refine: true,
        }
    }

    pub fn validate(&self, base: &NetworkConfig) -> Result<()> {
        if self.phase_shifts.is_empty() || self.attenuators.iter().any(|a| a.is_empty()) {
            return Err(Error::invalid("sweep grid has an empty axis"));
        }
        if self.attenuators.len() != base.attenuators.len() {
            return Err(Error::invalid(format!(
                "sweep has {} attenuator axes; the network has {} attenuators",
                self.attenuators.len(),
                base.attenuators.len()
            )));
        }
        if self.attenuators.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("attenuator sweep values must lie in [0, 1]"));
        }
        Ok(())
    }

    fn axes(&self) -> Vec<&[f64]> {
        std::iter::once(self.phase_shifts.as_slice())
            .chain(self.attenuators.iter().map(|a| a.as_slice()))
            .collect()
    }
}

fn cartesian(axes: &[&[f64]]) -> Vec<Settings> {
    let total: usize = axes.iter().map(|a| a.len()).product();
    (0..total)
        .map(|mut k| {
            let mut vals = vec![0.0; axes.len()];
            for (d, axis) in axes.iter().enumerate().rev() {
                vals[d] = axis[k % axis.len()];
                k /= axis.len();
            }
            Settings {
                phase_shift: Angle::new(vals[0]),
                attenuators: vals[1..].to_vec(),
            }
        })
        .collect()
}

/// Spacing to the nearest other value on an axis.
fn local_step(axis: &[f64], at: f64, periodic: bool) -> f64 {
    let step = axis
        .iter()
        .map(|&x| if periodic { wrap_angle(x - at).abs() } else { (x - at).abs() })
        .filter(|d| *d > 1e-15)
        .fold(f64::INFINITY, f64::min);
    if step.is_finite() { step } else { 0.0 }
}

fn refined_axes(grid: &SweepGrid, best: &Settings) -> Vec<Vec<f64>> {
    let axes = grid.axes();
    let centre: Vec<f64> = std::iter::once(best.phase_shift.value()).chain(best.attenuators.iter().copied()).collect();
    axes.iter()
        .zip(&centre)
        .enumerate()
        .map(|(d, (axis, &c))| {
            let h = local_step(axis, c, d == 0) / 3.0;
            let mut v: Vec<f64> = (-3..=3)
                .map(|k| c + k as f64 * h)
                .map(|x| if d == 0 { wrap_angle(x) } else { x.clamp(0.0, 1.0) })
                .collect();
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
            v
        })
        .collect()
}

fn with_settings(base: &NetworkConfig, s: &Settings) -> NetworkConfig {
    NetworkConfig {
        phase_shift: s.phase_shift,
        attenuators: s.attenuators.clone(),
        ..base.clone()
    }
}

fn evaluate<F>(base: &NetworkConfig, settings: Vec<Settings>, supplier: &F) -> Result<Vec<SweepPoint>>
where
    F: Fn(&NetworkConfig) -> Result<VisibilityEstimate> + Sync,
{
    settings
        .into_par_iter()
        .map(|s| {
            let v = supplier(&with_settings(base, &s))?;
            Ok(SweepPoint { settings: s, v })
        })
        .collect()
}

/// Largest value; ties go to the smaller `|φ|`, then the earlier point.
fn best_index(points: &[SweepPoint]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        let b = &points[best];
        if p.v.value > b.v.value
            || (p.v.value == b.v.value && p.settings.phase_shift.value().abs() < b.settings.phase_shift.value().abs())
        {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// `+∞` (null in JSON) when the best visibility is not positive.
    #[serde(with = "finite_or_null")]
    pub sigma_hat: f64,
    /// The sweep found no positive visibility: phases look fully randomised.
    pub fully_randomized: bool,
    /// Estimated lag weights, lag 1 first.
    pub r_hat: Vec<f64>,
    pub delta_phi_bar_hat: Angle,
    pub v_max: VisibilityEstimate,
    pub settings_max: Settings,
    /// Every evaluated point, coarse grid first.
    pub sweep_grid: Vec<SweepPoint>,
}

impl CalibrationResult {
    /// Sweep surface as CSV: `phase_shift, a1.., v, standard_error`.
    pub fn sweep_csv(&self) -> String {
        let n_att = self.settings_max.attenuators.len();
        let mut out = String::from("phase_shift");
        for k in 1..=n_att {
            out.push_str(&format!(",a{k}"));
        }
        out.push_str(",v,standard_error\n");
        for p in &self.sweep_grid {
            out.push_str(&fmt_f64(p.settings.phase_shift.value()));
            for a in &p.settings.attenuators {
                out.push(',');
                out.push_str(&fmt_f64(*a));
            }
            out.push_str(&format!(",{},{}\n", fmt_f64(p.v.value), fmt_f64(p.v.standard_error)));
        }
        out
    }
}

/// Sweeps the settings in `grid`, locates the maximal visibility and turns
/// it into model estimates. `supplier` must be deterministic per setting;
/// replaying one phase sequence (see [`replay`]) gives common random numbers.
pub fn calibrate<F>(base: &NetworkConfig, grid: &SweepGrid, supplier: F) -> Result<CalibrationResult>
where
    F: Fn(&NetworkConfig) -> Result<VisibilityEstimate> + Sync,
{
    base.validate()?;
    grid.validate(base)?;
    let mut points = evaluate(base, cartesian(&grid.axes()), &supplier)?;
    if grid.refine {
        let best = points[best_index(&points)].settings.clone();
        let axes = refined_axes(grid, &best);
        let refs: Vec<&[f64]> = axes.iter().map(|a| a.as_slice()).collect();
        points.extend(evaluate(base, cartesian(&refs), &supplier)?);
    }
    let best = &points[best_index(&points)];
    let v_max = best.v;
    let settings_max = best.settings.clone();
    let cfg = with_settings(base, &settings_max);
    let r_hat = match cfg.topology {
        Topology::Mzi => vec![1.0],
        Topology::Feedback => vec![1.0, cfg.loop_transmittance().sqrt()],
        Topology::Cascade => {
            let mu = match &cfg.input_intensities {
                InputIntensity::Constant(mu) => *mu,
                InputIntensity::PerRound(v) => v.iter().sum::<f64>() / v.len().max(1) as f64,
            };
            cfg.effective_weights(&vec![mu; cfg.ell_c])?
        }
    };
    Ok(CalibrationResult {
        sigma_hat: sigma_from_visibility(v_max.value)?,
        fully_randomized: v_max.value <= 0.0,
        r_hat,
        delta_phi_bar_hat: -settings_max.phase_shift,
        v_max,
        settings_max,
        sweep_grid: points,
    })
}
