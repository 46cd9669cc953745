//! Coherent-state propagation through delay-line interferometers.
//!
//! Detectors are ideal: they read the mean intensity `|α|²` of the state.
//! All balanced splitters use `sum = (a + b)/√2`, `diff = (b - a)/√2` with `a`
//! the older input.
//!
//! Topologies:
//!  * `Mzi`: undelayed arm (phase shifter) and a `T` arm, one final splitter.
//!  * `Cascade`: arms delayed by `0, T, …, ℓc·T`. The two oldest arms meet
//!    first; every later arm joins the running sum port; the last sum port
//!    meets the undelayed arm. Difference ports go to monitor detectors.
//!  * `Feedback`: the `T` arm meets a loop register at a balanced splitter.
//!    The difference port is monitored; the sum port goes to an unbalanced
//!    splitter whose reflected share re-enters the loop through an attenuator
//!    and whose transmitted share meets the undelayed arm. The pulse `k`
//!    rounds back then enters with amplitude weight `t^{(k-1)/2}`, where
//!    `t = R·A/2` is the loop transmittance.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circular::Angle;
use crate::error::{Error, Result};
use crate::phase_model::PhaseSequence;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoherentAmplitude {
    pub re: f64,
    pub im: f64,
}

impl CoherentAmplitude {
    pub const VACUUM: CoherentAmplitude = CoherentAmplitude { re: 0.0, im: 0.0 };

    pub fn from_polar(intensity: f64, phase: f64) -> Self {
        Complex64::from_polar(intensity.max(0.0).sqrt(), phase).into()
    }

    pub fn intensity(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn phase(self) -> f64 {
        self.im.atan2(self.re)
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl From<Complex64> for CoherentAmplitude {
    fn from(z: Complex64) -> Self {
        CoherentAmplitude { re: z.re, im: z.im }
    }
}

impl From<CoherentAmplitude> for Complex64 {
    fn from(a: CoherentAmplitude) -> Self {
        Complex64::new(a.re, a.im)
    }
}

/// Balanced lossless splitter; `a` is the older input.
pub fn beamsplit(a: CoherentAmplitude, b: CoherentAmplitude) -> (CoherentAmplitude, CoherentAmplitude) {
    let (a, b): (Complex64, Complex64) = (a.into(), b.into());
    (((a + b) * FRAC_1_SQRT_2).into(), ((b - a) * FRAC_1_SQRT_2).into())
}

/// Sum-port output of the cascade fed with `arms` oldest first.
pub fn chi_state(arms: &[CoherentAmplitude]) -> Result<CoherentAmplitude> {
    if arms.len() < 2 {
        return Err(Error::invalid("cascade needs at least two arm states"));
    }
    Ok(arms[1..].iter().fold(arms[0], |chi, &arm| beamsplit(chi, arm).0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Mzi,
    Cascade,
    Feedback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputIntensity {
    Constant(f64),
    /// One entry per round of the phase sequence.
    PerRound(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub topology: Topology,
    /// Cascade depth; 1 for the MZI, unused by the feedback loop.
    pub ell_c: usize,
    /// Shift applied to the undelayed arm.
    pub phase_shift: Angle,
    /// Power transmittances. Cascade: `A_2 … A_ℓc` on the arms delayed by
    /// `2T … ℓc·T`. Feedback: the single loop attenuator.
    pub attenuators: Vec<f64>,
    /// Balanced splitters only.
    pub splitter_ratio: f64,
    /// Feedback only: share of the combined state sent back into the loop.
    #[serde(default = "default_loop_reflectance")]
    pub loop_reflectance: f64,
    pub input_intensities: InputIntensity,
}

fn default_loop_reflectance() -> f64 {
    0.9
}

/// Amplitude below which the truncated loop history counts as settled.
pub const FEEDBACK_SETTLE: f64 = 1e-12;

impl NetworkConfig {
    pub fn mzi(phase_shift: Angle, mu: f64) -> Self {
        NetworkConfig {
            topology: Topology::Mzi,
            ell_c: 1,
            phase_shift,
            attenuators: Vec::new(),
            splitter_ratio: 0.5,
            loop_reflectance: default_loop_reflectance(),
            input_intensities: InputIntensity::Constant(mu),
        }
    }

    pub fn cascade(ell_c: usize, phase_shift: Angle, attenuators: Vec<f64>, mu: f64) -> Self {
        NetworkConfig {
            topology: if ell_c == 1 { Topology::Mzi } else { Topology::Cascade },
            ell_c,
            attenuators,
            ..Self::mzi(phase_shift, mu)
        }
    }

    pub fn feedback(phase_shift: Angle, loop_attenuation: f64, loop_reflectance: f64, mu: f64) -> Self {
        NetworkConfig {
            topology: Topology::Feedback,
            ell_c: 1,
            attenuators: vec![loop_attenuation],
            loop_reflectance,
            ..Self::mzi(phase_shift, mu)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.splitter_ratio != 0.5 {
            return Err(Error::invalid(format!(
                "only 50:50 splitters are supported, got ratio {}",
                self.splitter_ratio
            )));
        }
        if let Some(a) = self.attenuators.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid(format!("attenuator transmittance {a} is outside [0, 1]")));
        }
        let expected = match self.topology {
            Topology::Mzi if self.ell_c != 1 => {
                return Err(Error::invalid("the two-arm interferometer has ℓc = 1"));
            }
            Topology::Mzi => 0,
            Topology::Cascade if self.ell_c < 2 => {
                return Err(Error::invalid("a cascade needs ℓc >= 2"));
            }
            Topology::Cascade => self.ell_c - 1,
            Topology::Feedback => {
                if !(0.0..=1.0).contains(&self.loop_reflectance) {
                    return Err(Error::invalid(format!(
                        "loop reflectance {} is outside [0, 1]",
                        self.loop_reflectance
                    )));
                }
                1
            }
        };
        if self.attenuators.len() != expected {
            return Err(Error::invalid(format!(
                "{:?} needs {expected} attenuators, got {}",
                self.topology,
                self.attenuators.len()
            )));
        }
        match &self.input_intensities {
            InputIntensity::Constant(mu) if !(mu.is_finite() && *mu > 0.0) => {
                Err(Error::invalid(format!("input intensity must be positive, got {mu}")))
            }
            InputIntensity::PerRound(v) if v.iter().any(|mu| !(mu.is_finite() && *mu >= 0.0)) => {
                Err(Error::invalid("per-round input intensities must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }

    /// Number of delayed arms feeding the combined state.
    pub fn depth(&self) -> usize {
        match self.topology {
            Topology::Feedback => 1,
            _ => self.ell_c,
        }
    }

    /// Fraction of the input intensity routed into the arm delayed by `d`
    /// rounds by the input splitter chain.
    pub fn split_fraction(&self, d: usize) -> f64 {
        let l = self.depth();
        match d {
            0 => 0.5,
            d if d < l => 0.5f64.powi(d as i32 + 1),
            _ => 0.5f64.powi(l as i32),
        }
    }

    fn attenuation(&self, d: usize) -> f64 {
        match self.topology {
            Topology::Cascade if d >= 2 => self.attenuators[d - 2],
            _ => 1.0,
        }
    }

    /// Loop intensity transmittance per round, `t = R·A/2`.
    pub fn loop_transmittance(&self) -> f64 {
        match self.topology {
            Topology::Feedback => self.loop_reflectance * self.attenuators[0] / 2.0,
            _ => 0.0,
        }
    }

    /// Rounds after a cold (vacuum) loop start before the missing history
    /// falls below [`FEEDBACK_SETTLE`] in amplitude.
    pub fn feedback_warmup(&self) -> usize {
        let t = self.loop_transmittance();
        if self.topology != Topology::Feedback || t <= 0.0 {
            return 0;
        }
        (FEEDBACK_SETTLE.ln() / (0.5 * t.ln())).ceil().max(0.0) as usize
    }

    /// Weights with which the previous pulses (lag 1 first) enter the phase
    /// of the combined state, relative to the lag-1 pulse, given input
    /// intensities `mu` oldest first ending with `μ_{i-1}`. Splitter factors
    /// along each path are folded in.
    pub fn effective_weights(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let l = self.depth();
        if mu.len() < l || self.topology == Topology::Feedback {
            return Err(Error::invalid("effective weights need a cascade and ℓc input intensities"));
        }
        let last = mu[mu.len() - 1];
        Ok((1..=l)
            .map(|d| {
                let ratio = self.attenuation(d) * mu[mu.len() - d] / last;
                ratio.sqrt() * 0.5f64.powi(d.min(l.max(2) - 1) as i32 - 1)
            })
            .collect())
    }

    /// Attenuator settings that reproduce lag weights `r` (lag 1 first,
    /// `r[0] = 1`) for constant input intensity.
    pub fn attenuators_for(ell_c: usize, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != ell_c || ell_c < 2 {
            return Err(Error::invalid("need ℓc >= 2 weights"));
        }
        (2..=ell_c)
            .map(|d| {
                let a = r[d - 1].powi(2) * 4f64.powi(d.min(ell_c - 1) as i32 - 1);
                if a > 1.0 {
                    Err(Error::invalid(format!(
                        "weight {} at lag {d} needs gain {a} > 1 after splitter losses",
                        r[d - 1]
                    )))
                } else {
                    Ok(a)
                }
            })
            .collect()
    }

    fn intensity(&self, round: usize) -> f64 {
        match &self.input_intensities {
            InputIntensity::Constant(mu) => *mu,
            InputIntensity::PerRound(v) => v[round],
        }
    }
}

/// Mean detector intensities for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub round_index: usize,
    pub mu_beta1: f64,
    pub mu_beta2: f64,
    /// Monitor detectors. Cascade: difference ports, oldest splitter first.
    /// Feedback: difference port, then the share sent back into the loop.
    pub mu_xi: Vec<f64>,
    /// Intensities entering the combining network, oldest first; the last
    /// entry is the undelayed arm. Feedback: loop register, `T` arm, undelayed arm.
    pub mu_prime: Vec<f64>,
    /// Feedback rounds still influenced by the cold loop start.
    #[serde(default)]
    pub warmup: bool,
}

impl DetectionRecord {
    pub fn total_in(&self) -> f64 {
        self.mu_prime.iter().sum()
    }

    pub fn total_out(&self) -> f64 {
        self.mu_beta1 + self.mu_beta2 + self.mu_xi.iter().sum::<f64>()
    }

    /// Undelayed-arm intensity `μ'_i`.
    pub fn mu_current(&self) -> f64 {
        self.mu_prime[self.mu_prime.len() - 1]
    }

    /// Intensity of the combined state at the final splitter, by energy balance.
    pub fn mu_chi(&self) -> f64 {
        let n = self.mu_prime.len();
        self.mu_prime[..n - 1].iter().sum::<f64>() - self.mu_xi.iter().sum::<f64>()
    }

    /// Per-round interference term from `β1` and the monitors only.
    pub fn cos_statistic(&self) -> Option<f64> {
        let den = 2.0 * (self.mu_current() * self.mu_chi()).sqrt();
        let num = 2.0 * self.mu_beta1 + self.mu_xi.iter().sum::<f64>() - self.total_in();
        (den > 0.0 && den.is_finite()).then(|| num / den)
    }

    /// Same quantity from the two final detectors.
    pub fn cos_statistic_balanced(&self) -> Option<f64> {
        let den = 2.0 * (self.mu_current() * self.mu_chi()).sqrt();
        (den > 0.0 && den.is_finite()).then(|| (self.mu_beta1 - self.mu_beta2) / den)
    }
}

/// All fields in one round, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundFields {
    /// Arm states entering the combining network, oldest first; the last one
    /// is the undelayed arm after the phase shifter.
    pub arms: Vec<CoherentAmplitude>,
    pub chi: CoherentAmplitude,
    pub xi: Vec<CoherentAmplitude>,
    pub beta1: CoherentAmplitude,
    pub beta2: CoherentAmplitude,
}

impl RoundFields {
    fn fill(&self, rec: &mut DetectionRecord, round_index: usize, warmup: bool) {
        rec.round_index = round_index;
        rec.mu_beta1 = self.beta1.intensity();
        rec.mu_beta2 = self.beta2.intensity();
        rec.mu_xi.clear();
        rec.mu_xi.extend(self.xi.iter().map(|x| x.intensity()));
        rec.mu_prime.clear();
        rec.mu_prime.extend(self.arms.iter().map(|a| a.intensity()));
        rec.warmup = warmup;
    }
}

/// Propagates every round, handing each round's fields to `visit` together
/// with the round index and the warmup flag. Buffers are reused across rounds.
pub fn for_each_round(
    cfg: &NetworkConfig,
    phases: &PhaseSequence,
    mut visit: impl FnMut(usize, &RoundFields, bool),
) -> Result<()> {
    cfg.validate()?;
    let n = phases.len();
    if let InputIntensity::PerRound(v) = &cfg.input_intensities {
        if v.len() != n {
            return Err(Error::invalid(format!(
                "{} input intensities for {} phases",
                v.len(),
                n
            )));
        }
    }
    let l = cfg.depth();
    if n <= l {
        return Err(Error::invalid(format!("need more than {l} phases, got {n}")));
    }
    let arm = |round: usize, delay: usize| -> CoherentAmplitude {
        let mu = cfg.intensity(round) * cfg.split_fraction(delay) * cfg.attenuation(delay);
        let mut phase = phases.phases[round].value();
        if delay == 0 {
            phase += cfg.phase_shift.value();
        }
        CoherentAmplitude::from_polar(mu, phase)
    };
    let mut f = RoundFields {
        arms: Vec::with_capacity(l + 2),
        chi: CoherentAmplitude::VACUUM,
        xi: Vec::with_capacity(l.max(2)),
        beta1: CoherentAmplitude::VACUUM,
        beta2: CoherentAmplitude::VACUUM,
    };
    match cfg.topology {
        Topology::Mzi | Topology::Cascade => {
            for i in l..n {
                f.arms.clear();
                f.xi.clear();
                f.arms.extend((1..=l).rev().map(|d| arm(i - d, d)));
                f.chi = f.arms[0];
                for k in 1..l {
                    let (s, d) = beamsplit(f.chi, f.arms[k]);
                    f.chi = s;
                    f.xi.push(d);
                }
                let current = arm(i, 0);
                (f.beta1, f.beta2) = beamsplit(f.chi, current);
                f.arms.push(current);
                visit(i, &f, false);
            }
        }
        Topology::Feedback => {
            let r = cfg.loop_reflectance;
            let keep = cfg.attenuators[0].sqrt();
            let warm = cfg.feedback_warmup();
            let mut register = CoherentAmplitude::VACUUM;
            for i in 1..n {
                let delayed = arm(i - 1, 1);
                let (sum, diff) = beamsplit(register, delayed);
                let s: Complex64 = sum.into();
                let back = s * r.sqrt();
                f.chi = (s * (1.0 - r).sqrt()).into();
                let current = arm(i, 0);
                (f.beta1, f.beta2) = beamsplit(f.chi, current);
                f.arms.clear();
                f.arms.extend([register, delayed, current]);
                f.xi.clear();
                f.xi.extend([diff, back.into()]);
                visit(i, &f, i <= warm);
                register = (back * keep).into();
            }
        }
    }
    Ok(())
}

/// Streams detection records; the record passed to `visit` is reused.
pub fn for_each_record(
    cfg: &NetworkConfig,
    phases: &PhaseSequence,
    mut visit: impl FnMut(&DetectionRecord),
) -> Result<()> {
    let mut rec = DetectionRecord {
        round_index: 0,
        mu_beta1: 0.0,
        mu_beta2: 0.0,
        mu_xi: Vec::new(),
        mu_prime: Vec::new(),
        warmup: false,
    };
    for_each_round(cfg, phases, |i, f, warm| {
        f.fill(&mut rec, i, warm);
        visit(&rec);
    })
}

/// Propagates every round and returns the full field picture.
pub fn propagate(cfg: &NetworkConfig, phases: &PhaseSequence) -> Result<Vec<(usize, RoundFields, bool)>> {
    let mut out = Vec::with_capacity(phases.len());
    for_each_round(cfg, phases, |i, f, warm| out.push((i, f.clone(), warm)))?;
    Ok(out)
}

pub fn run_network(cfg: &NetworkConfig, phases: &PhaseSequence) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::with_capacity(phases.len());
    for_each_record(cfg, phases, |r| out.push(r.clone()))?;
    Ok(out)
}
