//! Stochastic rate equations of a gain-switched single-mode semiconductor
//! laser and extraction of per-pulse phases.
//!
//! The field `E` is normalised so that `|E|²` is the intracavity photon
//! number; `N` is the carrier number. Integration is Itô Euler-Maruyama with
//! complex spontaneous-emission noise `ξ = ξ₁ + jξ₂`, `⟨ξξ*⟩ = δ`, so each
//! quadrature has increment variance `dt/2`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::circular::Angle;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::phase_model::PhaseSequence;
use crate::rng;

/// Elementary charge (C).
pub const ELECTRON_CHARGE: f64 = 1.602_176_634e-19;

/// Largest step the integrator accepts (s).
pub const MAX_DT: f64 = 0.05e-12;

/// Largest fraction of steps allowed to hit the carrier clamp.
pub const MAX_CLAMPED_FRACTION: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaserParams {
    /// Differential gain (1/s).
    pub g_n: f64,
    /// Carriers at transparency.
    pub n_t: f64,
    /// Nonlinear gain coefficient (per photon).
    pub epsilon: f64,
    /// Photon lifetime (s).
    pub tau_p: f64,
    /// Spontaneous-emission coupling fraction.
    pub beta: f64,
    /// Linewidth enhancement factor.
    pub alpha: f64,
    /// Non-radiative, spontaneous and Auger recombination coefficients.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Electron charge (C).
    pub e: f64,
}

impl Default for LaserParams {
    /// Discrete-mode laser values.
    fn default() -> Self {
        LaserParams {
            g_n: 1.48e4,
            n_t: 1.93e7,
            epsilon: 7.73e-8,
            tau_p: 2.17e-12,
            beta: 5.3e-6,
            alpha: 3.0,
            a: 2.8e8,
            b: 9.8,
            c: 3.84e-7,
            e: ELECTRON_CHARGE,
        }
    }
}

impl LaserParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("g_n", self.g_n),
            ("n_t", self.n_t),
            ("tau_p", self.tau_p),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("e", self.e),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("laser parameter {name} must be positive, got {v}")));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    fn recombination(&self, n: f64) -> f64 {
        n * (self.a + n * (self.b + n * self.c))
    }

    pub fn threshold_carriers(&self) -> f64 {
        self.n_t + 1.0 / (self.g_n * self.tau_p)
    }

    pub fn threshold_current(&self) -> f64 {
        self.e * self.recombination(self.threshold_carriers())
    }
}

/// Square-wave drive: `i_on` for the first `duty` of each period, `i_off` after.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveWaveform {
    /// Repetition rate (Hz).
    pub nu: f64,
    /// Currents (A).
    pub i_on: f64,
    pub i_off: f64,
    #[serde(default = "half")]
    pub duty: f64,
}

fn half() -> f64 {
    0.5
}

impl DriveWaveform {
    pub fn new(nu: f64, i_on: f64, i_off: f64) -> Result<Self> {
        let d = DriveWaveform { nu, i_on, i_off, duty: 0.5 };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::invalid(format!("repetition rate must be positive, got {}", self.nu)));
        }
        if !(self.i_off >= 0.0 && self.i_on > self.i_off && self.i_on.is_finite()) {
            return Err(Error::invalid(format!(
                "need i_on > i_off >= 0, got {} and {}",
                self.i_on, self.i_off
            )));
        }
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(Error::invalid(format!("duty must lie in (0, 1), got {}", self.duty)));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.nu
    }
}

/// Where in each period the pulse phase is read.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseSampling {
    /// Instant of peak `|E|²` inside the on-window.
    Peak,
    /// Fixed fraction of the period after its start.
    FixedOffset(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    /// Step (s).
    pub dt: f64,
    /// Multiplies every noise amplitude; 0 gives the deterministic equations.
    pub noise: f64,
    /// Keep every `decimate`-th state in the stored trajectory; 0 keeps none.
    pub decimate: usize,
    pub sampling: PulseSampling,
    /// Leading periods flagged as startup transient.
    pub startup_periods: usize,
    /// Pulses with peak photon number below this count as not lasing.
    pub lasing_floor: f64,
    /// Initial field amplitude (square root of photons) and carrier number.
    pub initial_field: f64,
    pub initial_carriers: Option<f64>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            dt: 0.01e-12,
            noise: 1.0,
            decimate: 1000,
            sampling: PulseSampling::Peak,
            startup_periods: 1,
            lasing_floor: 10.0,
            initial_field: 1.0,
            initial_carriers: None,
        }
    }
}

impl IntegrateOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= MAX_DT * (1.0 + 1e-12)) {
            return Err(Error::invalid(format!("dt must lie in (0, {MAX_DT}] s, got {}", self.dt)));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::invalid("noise scale must be >= 0"));
        }
        if let PulseSampling::FixedOffset(f) = self.sampling {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::invalid(format!("sampling offset must lie in [0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub t: f64,
    pub e_re: f64,
    pub e_im: f64,
    pub n: f64,
}

impl FieldSample {
    pub fn intensity(&self) -> f64 {
        self.e_re * self.e_re + self.e_im * self.e_im
    }
}

/// Field read out for one period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub period: usize,
    /// Time of the sampled instant (s).
    pub t: f64,
    pub phase: Angle,
    /// Photon number at the sampled instant.
    pub intensity: f64,
    pub warmup: bool,
    pub lasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldTrajectory {
    pub dt: f64,
    pub seed: u64,
    pub decimate: usize,
    /// Stored states, every `decimate`-th step.
    pub samples: Vec<FieldSample>,
    /// One entry per complete period.
    pub pulses: Vec<Pulse>,
    pub steps: u64,
    pub clamped_steps: u64,
}

/// Picks the sampling instant of each period from a stream of states.
struct PulseTracker {
    steps_per_period: u64,
    window: (u64, u64),
    offset: Option<u64>,
    startup: usize,
    floor: f64,
    best: Option<FieldSample>,
    pulses: Vec<Pulse>,
}

impl PulseTracker {
    fn new(steps_per_period: u64, on_steps: u64, opts: &IntegrateOptions) -> Self {
        let offset = match opts.sampling {
            PulseSampling::Peak => None,
            PulseSampling::FixedOffset(f) => Some(((f * steps_per_period as f64).round() as u64).min(steps_per_period - 1)),
        };
        PulseTracker {
            steps_per_period,
            window: (0, on_steps.max(1)),
            offset,
            startup: opts.startup_periods,
            floor: opts.lasing_floor,
            best: None,
            pulses: Vec::new(),
        }
    }

    /// `step` is the index of the state within the whole run.
    fn feed(&mut self, step: u64, s: FieldSample) {
        let k = step % self.steps_per_period;
        let take = match self.offset {
            Some(o) => k == o,
            None => k >= self.window.0 && k < self.window.1 && self.best.is_none_or(|b| s.intensity() > b.intensity()),
        };
        if take {
            self.best = Some(s);
        }
        if k == self.steps_per_period - 1 {
            let period = (step / self.steps_per_period) as usize;
            if let Some(b) = self.best.take() {
                self.pulses.push(Pulse {
                    period,
                    t: b.t,
                    phase: Angle::new(b.e_im.atan2(b.e_re)),
                    intensity: b.intensity(),
                    warmup: period < self.startup,
                    lasing: b.intensity() >= self.floor,
                });
            }
        }
    }
}

fn steps_per_period(period: f64, dt: f64) -> Result<u64> {
    let spp = period / dt;
    let r = spp.round();
    if r < 2.0 || (spp - r).abs() > 1e-6 * r {
        return Err(Error::invalid(format!(
            "period {period} s is not a whole number of steps of {dt} s"
        )));
    }
    Ok(r as u64)
}

fn run(
    p: &LaserParams,
    current: impl Fn(u64) -> f64,
    spp: u64,
    on_steps: u64,
    periods: u64,
    opts: &IntegrateOptions,
    seed: u64,
) -> Result<FieldTrajectory> {
    p.validate()?;
    opts.validate()?;
    let mut rng = rng::seeded(seed);
    let dt = opts.dt;
    let sq_dt = dt.sqrt();
    let half_sq_dt = sq_dt * FRAC_1_SQRT_2;
    let spont = (p.beta * p.b).sqrt() * opts.noise;
    let total = spp * periods;
    let (mut er, mut ei) = (opts.initial_field, 0.0);
    let mut n = opts.initial_carriers.unwrap_or(p.n_t);
    let mut tracker = PulseTracker::new(spp, on_steps, opts);
    let mut samples = Vec::new();
    if opts.decimate > 0 {
        samples.reserve((total / opts.decimate as u64 + 1).min(1 << 24) as usize);
    }
    let mut clamped = 0u64;
    let loss = 1.0 / p.tau_p;
    for step in 0..total {
        let t = step as f64 * dt;
        let s = FieldSample { t, e_re: er, e_im: ei, n };
        if opts.decimate > 0 && step % opts.decimate as u64 == 0 {
            samples.push(s);
        }
        tracker.feed(step, s);

        let i = current(step);
        let photons = er * er + ei * ei;
        let sat = 1.0 / (1.0 + p.epsilon * photons);
        let g = p.g_n * (n - p.n_t);
        // dE/dt = [(sat + jα) g - (1 + jα)/τp] E / 2
        let kr = 0.5 * (sat * g - loss);
        let ki = 0.5 * p.alpha * (g - loss);
        let drift_r = kr * er - ki * ei;
        let drift_i = kr * ei + ki * er;
        let recomb = p.recombination(n);
        let drift_n = i / p.e - recomb - g * photons * sat;

        let (w1, w2, wn) = if opts.noise > 0.0 {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let z3: f64 = rng.sample(StandardNormal);
            (z1 * half_sq_dt, z2 * half_sq_dt, z3 * sq_dt)
        } else {
            (0.0, 0.0, 0.0)
        };
        let amp = spont * n;
        let carrier_noise = opts.noise * (2.0 * (recomb + i / p.e)).max(0.0).sqrt() * wn - 2.0 * amp * (er * w1 + ei * w2);

        er += drift_r * dt + amp * w1;
        ei += drift_i * dt + amp * w2;
        n += drift_n * dt + carrier_noise;
        if n < 0.0 {
            n = 0.0;
            clamped += 1;
        }
        if !(er.is_finite() && ei.is_finite() && n.is_finite()) {
            return Err(Error::IntegrationDiverged {
                step,
                reason: format!("state became non-finite (E = {er} + {ei}j, N = {n})"),
            });
        }
    }
    if total > 0 && clamped as f64 > MAX_CLAMPED_FRACTION * total as f64 {
        return Err(Error::Numerical(format!(
            "carrier number clamped at zero in {clamped} of {total} steps; reduce dt"
        )));
    }
    Ok(FieldTrajectory {
        dt,
        seed,
        decimate: opts.decimate,
        samples,
        pulses: tracker.pulses,
        steps: total,
        clamped_steps: clamped,
    })
}

/// Integrates for `duration` seconds, which must cover whole periods.
pub fn integrate(
    p: &LaserParams,
    d: &DriveWaveform,
    duration: f64,
    opts: &IntegrateOptions,
    seed: u64,
) -> Result<FieldTrajectory> {
    d.validate()?;
    opts.validate()?;
    let periods = duration * d.nu;
    let whole = periods.round();
    if whole < 1.0 || (periods - whole).abs() > 1e-6 {
        return Err(Error::invalid(format!("duration {duration} s is not a whole number of periods")));
    }
    let spp = steps_per_period(d.period(), opts.dt)?;
    let on = ((d.duty * spp as f64).round() as u64).clamp(1, spp - 1);
    let (i_on, i_off) = (d.i_on, d.i_off);
    run(p, move |s| if s % spp < on { i_on } else { i_off }, spp, on, whole as u64, opts, seed)
}

/// Integrates at constant current; the whole run counts as one period.
pub fn integrate_constant(
    p: &LaserParams,
    current: f64,
    duration: f64,
    opts: &IntegrateOptions,
    seed: u64,
) -> Result<FieldTrajectory> {
    opts.validate()?;
    if !(current.is_finite() && current >= 0.0) {
        return Err(Error::invalid(format!("current must be >= 0, got {current}")));
    }
    let spp = (duration / opts.dt).round() as u64;
    if spp < 2 {
        return Err(Error::invalid("duration shorter than two steps"));
    }
    run(p, move |_| current, spp, spp, 1, opts, seed)
}

/// Per-pulse readout ready for the interferometers.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseTrain {
    pub phases: PhaseSequence,
    /// Photon number of each pulse in `phases`.
    pub intensities: Vec<f64>,
    /// Settled periods without lasing, excluded from `phases`.
    pub dark_periods: Vec<usize>,
}

/// Drops startup pulses and splits off dark periods. `traj` must come from
/// a run driven by `d`.
pub fn extract_pulses(traj: &FieldTrajectory, d: &DriveWaveform) -> Result<PulseTrain> {
    d.validate()?;
    if traj.pulses.is_empty() {
        return Err(Error::DegenerateData("trajectory covers no complete period".into()));
    }
    let mut phases = Vec::new();
    let mut intensities = Vec::new();
    let mut dark = Vec::new();
    for p in traj.pulses.iter().filter(|p| !p.warmup) {
        if p.lasing {
            phases.push(p.phase);
            intensities.push(p.intensity);
        } else {
            dark.push(p.period);
        }
    }
    if phases.is_empty() {
        return Err(Error::DegenerateData("no lasing pulse after the startup transient".into()));
    }
    let mut seq = PhaseSequence::external(phases);
    seq.seed = Some(traj.seed);
    Ok(PulseTrain {
        phases: seq,
        intensities,
        dark_periods: dark,
    })
}

impl FieldTrajectory {
    /// Builds a trajectory from stored states (every step), reading pulses
    /// with the same rule as the integrator.
    pub fn from_samples(samples: Vec<FieldSample>, dt: f64, d: &DriveWaveform, opts: &IntegrateOptions) -> Result<Self> {
        d.validate()?;
        let spp = steps_per_period(d.period(), dt)?;
        let on = ((d.duty * spp as f64).round() as u64).clamp(1, spp - 1);
        let mut tracker = PulseTracker::new(spp, on, opts);
        for (k, s) in samples.iter().enumerate() {
            tracker.feed(k as u64, *s);
        }
        Ok(FieldTrajectory {
            dt,
            seed: 0,
            decimate: 1,
            steps: samples.len() as u64,
            samples,
            pulses: tracker.pulses,
            clamped_steps: 0,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,e_re,e_im,n\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}\n", fmt_f64(s.t), fmt_f64(s.e_re), fmt_f64(s.e_im), fmt_f64(s.n)));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }

    /// Columnar little-endian `f64` file: magic, header length, JSON header,
    /// then the `t`, `e_re`, `e_im` and `n` columns.
    pub fn write_binary(&self, path: &Path, params: &LaserParams) -> Result<()> {
        let header = serde_json::to_vec(&BinaryHeader {
            params: params.clone(),
            seed: self.seed,
            dt: self.dt,
            decimate: self.decimate,
            count: self.samples.len(),
        })?;
        let mut buf = Vec::with_capacity(16 + header.len() + 32 * self.samples.len());
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        let cols: [fn(&FieldSample) -> f64; 4] = [|s| s.t, |s| s.e_re, |s| s.e_im, |s| s.n];
        for col in cols {
            for s in &self.samples {
                buf.extend_from_slice(&col(s).to_le_bytes());
            }
        }
        write_atomic(path, &buf)
    }

    pub fn read_binary(path: &Path) -> Result<(LaserParams, Vec<FieldSample>, f64, u64)> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let bad = || Error::invalid(format!("{} is not a trajectory file", path.display()));
        if buf.len() < 16 || &buf[..8] != BINARY_MAGIC {
            return Err(bad());
        }
        let hlen = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let header: BinaryHeader = serde_json::from_slice(buf.get(16..16 + hlen).ok_or_else(bad)?)?;
        let body = &buf[16 + hlen..];
        let n = header.count;
        if body.len() != 32 * n {
            return Err(bad());
        }
        let col = |c: usize, i: usize| {
            let at = (c * n + i) * 8;
            f64::from_le_bytes(body[at..at + 8].try_into().unwrap())
        };
        let samples = (0..n)
            .map(|i| FieldSample { t: col(0, i), e_re: col(1, i), e_im: col(2, i), n: col(3, i) })
            .collect();
        Ok((header.params, samples, header.dt, header.seed))
    }
}

const BINARY_MAGIC: &[u8; 8] = b"PCTRAJ1\n";

#[derive(Serialize, Deserialize)]
struct BinaryHeader {
    params: LaserParams,
    seed: u64,
    dt: f64,
    decimate: usize,
    count: usize,
}

/// Writes the pulse train as the phase CSV plus an intensity column file.
pub fn write_pulse_train(train: &PulseTrain, phases_csv: &Path) -> Result<()> {
    train.phases.write_csv(phases_csv)?;
    let mut out = Vec::new();
    writeln!(out, "round_index,intensity").unwrap();
    for (i, v) in train.intensities.iter().enumerate() {
        writeln!(out, "{i},{}", fmt_f64(*v)).unwrap();
    }
    write_atomic(&phases_csv.with_extension("intensity.csv"), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circular::{circular_moment, wrap_angle};

    fn resultant_of_steps(train: &PulseTrain) -> f64 {
        let p = &train.phases.phases;
        let d: Vec<Angle> = p.windows(2).map(|w| Angle::new(w[1].value() - w[0].value())).collect();
        circular_moment(&d).unwrap().resultant_length
    }

    #[test]
    fn threshold_values() {
        let p = LaserParams::default();
        let nth = p.threshold_carriers();
        assert!((nth - (1.93e7 + 1.0 / (1.48e4 * 2.17e-12))).abs() < 1.0);
        assert!((nth / 5.04e7 - 1.0).abs() < 2e-3);
        assert!((p.threshold_current() - 14.14e-3).abs() < 0.05e-3, "{}", p.threshold_current());

        let unit = LaserParams { b: 1e-300, c: 1e-300, ..LaserParams::default() };
        let unit = LaserParams { a: 1.0 / (unit.e * unit.threshold_carriers()), ..unit };
        assert!((unit.threshold_current() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parameter_validation() {
        assert!(LaserParams { tau_p: 0.0, ..LaserParams::default() }.validate().is_err());
        assert!(LaserParams { epsilon: 0.0, ..LaserParams::default() }.validate().is_ok());
        assert!(DriveWaveform::new(1e9, 0.01, 0.02).is_err());
        assert!(DriveWaveform { duty: 1.0, ..DriveWaveform::new(1e9, 0.14, 0.0).unwrap() }.validate().is_err());
        let opts = IntegrateOptions { dt: 0.1e-12, ..IntegrateOptions::default() };
        assert!(integrate_constant(&LaserParams::default(), 0.0, 1e-12, &opts, 0).is_err());
        let d = DriveWaveform::new(3e9, 0.14, 0.0).unwrap();
        assert!(integrate(&LaserParams::default(), &d, 1e-9, &IntegrateOptions::default(), 0).is_err());
    }

    #[test]
    fn unpumped_field_decays() {
        let p = LaserParams::default();
        let opts = IntegrateOptions { noise: 0.0, decimate: 1, initial_field: 100.0, initial_carriers: Some(0.0), ..IntegrateOptions::default() };
        let tr = integrate_constant(&p, 0.0, 20.0 * p.tau_p, &opts, 1).unwrap();
        let i0 = tr.samples[0].intensity();
        assert!(tr.samples.windows(2).all(|w| w[1].intensity() <= w[0].intensity()));
        let end = tr.samples.last().unwrap().intensity() / i0;
        assert!(end < 1e-12, "{end}");
    }

    #[test]
    fn constant_drive_reaches_steady_state() {
        let p = LaserParams::default();
        let opts = IntegrateOptions { noise: 0.0, dt: 0.05e-12, decimate: 20, ..IntegrateOptions::default() };
        let tr = integrate_constant(&p, 0.14, 10e-9, &opts, 0).unwrap();
        let s = &tr.samples;
        let tail: Vec<f64> = s[s.len() - 200..].iter().map(|x| x.intensity()).collect();
        let (lo, hi) = tail.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        assert!((hi - lo) / hi < 1e-3, "not stationary: {lo} {hi}");
        // Relaxation oscillations overshoot the final level.
        let peak = s.iter().map(|x| x.intensity()).fold(0.0, f64::max);
        assert!(peak > 1.2 * hi);
        // Above threshold the steady state holds roughly τp (I - I_th)/e photons.
        let approx = p.tau_p * (0.14 - p.threshold_current()) / p.e;
        assert!(hi > 0.3 * approx && hi < 3.0 * approx, "{hi} vs {approx}");
    }

    #[test]
    fn zero_noise_matches_plain_euler() {
        let p = LaserParams::default();
        let d = DriveWaveform::new(10e9, 0.14, 0.007).unwrap();
        let opts = IntegrateOptions { noise: 0.0, decimate: 1, ..IntegrateOptions::default() };
        let tr = integrate(&p, &d, 2e-10, &opts, 3).unwrap();
        // Independent deterministic Euler written out directly.
        let (mut er, mut ei, mut n) = (1.0f64, 0.0f64, p.n_t);
        for (k, s) in tr.samples.iter().enumerate() {
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
            assert!(close(s.e_re, er) && close(s.e_im, ei) && close(s.n, n), "step {k}");
            let i = if k % 10_000 < 5_000 { 0.14 } else { 0.007 };
            let ph = er * er + ei * ei;
            let gain = p.g_n * (n - p.n_t) / (1.0 + p.epsilon * ph);
            let gi = p.g_n * (n - p.n_t);
            let dr = 0.5 * ((gain - 1.0 / p.tau_p) * er - p.alpha * (gi - 1.0 / p.tau_p) * ei);
            let di = 0.5 * ((gain - 1.0 / p.tau_p) * ei + p.alpha * (gi - 1.0 / p.tau_p) * er);
            let dn = i / p.e - (p.a * n + p.b * n * n + p.c * n * n * n) - gain * ph;
            er += dr * opts.dt;
            ei += di * opts.dt;
            n += dn * opts.dt;
        }
    }

    #[test]
    fn runs_are_deterministic_and_carriers_non_negative() {
        let p = LaserParams::default();
        let d = DriveWaveform::new(10e9, 0.14, 0.0).unwrap();
        let opts = IntegrateOptions { decimate: 7, ..IntegrateOptions::default() };
        let a = integrate(&p, &d, 2e-9, &opts, 11).unwrap();
        let b = integrate(&p, &d, 2e-9, &opts, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().all(|s| s.n >= 0.0));
        assert_eq!(a.pulses.len(), 20);
        let c = integrate(&p, &d, 2e-9, &opts, 12).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn constant_field_fixture() {
        let d = DriveWaveform::new(1e12, 1.0, 0.0).unwrap();
        let dt = 0.01e-12;
        let samples: Vec<FieldSample> = (0..1000)
            .map(|k| FieldSample { t: k as f64 * dt, e_re: 3.0, e_im: -4.0, n: 1e7 })
            .collect();
        let opts = IntegrateOptions { startup_periods: 0, ..IntegrateOptions::default() };
        let tr = FieldTrajectory::from_samples(samples, dt, &d, &opts).unwrap();
        let train = extract_pulses(&tr, &d).unwrap();
        assert_eq!(train.phases.len(), 10);
        let want = Angle::new((-4.0f64).atan2(3.0)).value();
        assert!(train.phases.phases.iter().all(|p| p.value() == want));
        assert!(train.intensities.iter().all(|&i| i == 25.0));
    }

    #[test]
    fn sampling_rules() {
        let d = DriveWaveform::new(1e12, 1.0, 0.0).unwrap();
        let dt = 0.01e-12;
        // Intensity peaks at step 30 of each 100-step period; phase tracks the step.
        let samples: Vec<FieldSample> = (0..300)
            .map(|k| {
                let j = (k % 100) as f64;
                let amp = 1.0 + 10.0 * (-(j - 30.0).powi(2) / 20.0).exp() + if j >= 50.0 { 100.0 } else { 0.0 };
                let ph = 0.01 * j;
                FieldSample { t: k as f64 * dt, e_re: amp * ph.cos(), e_im: amp * ph.sin(), n: 0.0 }
            })
            .collect();
        let peak = FieldTrajectory::from_samples(samples.clone(), dt, &d, &IntegrateOptions { startup_periods: 1, ..IntegrateOptions::default() }).unwrap();
        assert!(peak.pulses.iter().all(|p| (p.phase.value() - 0.30).abs() < 1e-12));
        assert!(peak.pulses[0].warmup && !peak.pulses[1].warmup);
        let fixed = IntegrateOptions { sampling: PulseSampling::FixedOffset(0.8), ..IntegrateOptions::default() };
        let off = FieldTrajectory::from_samples(samples, dt, &d, &fixed).unwrap();
        assert!(off.pulses.iter().all(|p| (p.phase.value() - 0.80).abs() < 1e-12));
    }

    #[test]
    fn dark_periods_are_reported() {
        let d = DriveWaveform::new(1e12, 1.0, 0.0).unwrap();
        let samples: Vec<FieldSample> = (0..300)
            .map(|k| FieldSample { t: 0.0, e_re: if !(100..200).contains(&k) { 10.0 } else { 0.1 }, e_im: 0.0, n: 0.0 })
            .collect();
        let opts = IntegrateOptions { startup_periods: 0, ..IntegrateOptions::default() };
        let tr = FieldTrajectory::from_samples(samples, 0.01e-12, &d, &opts).unwrap();
        let train = extract_pulses(&tr, &d).unwrap();
        assert_eq!(train.dark_periods, vec![1]);
        assert_eq!(train.phases.len(), 2);
    }

    #[test]
    fn fast_weak_off_current_keeps_phase_memory() {
        let p = LaserParams::default();
        let d = DriveWaveform::new(10e9, 0.14, 0.014).unwrap();
        let opts = IntegrateOptions { decimate: 0, ..IntegrateOptions::default() };
        let tr = integrate(&p, &d, 2e-8, &opts, 5).unwrap();
        let train = extract_pulses(&tr, &d).unwrap();
        assert!(train.dark_periods.is_empty());
        let r = resultant_of_steps(&train);
        assert!(r > 0.9, "resultant {r}");
    }

    #[test]
    fn slow_pulses_are_randomised() {
        let p = LaserParams::default();
        let d = DriveWaveform::new(100e6, 0.14, 0.0).unwrap();
        let opts = IntegrateOptions { decimate: 0, dt: MAX_DT, ..IntegrateOptions::default() };
        let tr = integrate(&p, &d, 1001e-8, &opts, 6).unwrap();
        let train = extract_pulses(&tr, &d).unwrap();
        assert_eq!(train.phases.len(), 1000);
        let r = resultant_of_steps(&train);
        assert!(r < 0.1, "resultant {r}");
    }

    #[test]
    fn binary_and_csv_roundtrip() {
        let p = LaserParams::default();
        let d = DriveWaveform::new(10e9, 0.14, 0.0).unwrap();
        let tr = integrate(&p, &d, 3e-10, &IntegrateOptions { decimate: 100, ..IntegrateOptions::default() }, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.bin");
        tr.write_binary(&path, &p).unwrap();
        let (p2, s2, dt, seed) = FieldTrajectory::read_binary(&path).unwrap();
        assert_eq!((p2, dt, seed), (p.clone(), tr.dt, 2));
        assert_eq!(s2, tr.samples);
        assert_eq!(tr.to_csv_string().lines().count(), tr.samples.len() + 1);
        fs::write(&path, b"nonsense").unwrap();
        assert!(FieldTrajectory::read_binary(&path).is_err());

        let train = extract_pulses(&tr, &d).unwrap();
        let csv = dir.path().join("pulses.csv");
        write_pulse_train(&train, &csv).unwrap();
        let back = PhaseSequence::from_csv_str(&fs::read_to_string(&csv).unwrap()).unwrap();
        assert_eq!(back.phases.len(), train.phases.len());
        assert!(wrap_angle(back.phases[0].value() - train.phases.phases[0].value()).abs() < 1e-15);
    }
}
