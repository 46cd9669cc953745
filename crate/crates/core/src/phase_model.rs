//! Generative model of correlated pulse phases.
//!
//! Each phase is the argument of a weighted sum of the previous `ℓc` phasors
//! plus an i.i.d. wrapped-Gaussian increment:
//!
//! ```text
//! φ_i = arg(Σ_{k=1..ℓc} r_k e^{jφ_{i-k}}) + δφ_i  (mod 2π),   δφ_i ~ WG(δφ̄, σ)
//! ```
//!
//! Ordering convention, used everywhere in the crate: a window of previous
//! phases is **oldest first**, so `prev[ℓc - 1]` is `φ_{i-1}`. Weights are
//! **lag ordered**: `r[0]` is the lag-1 weight (fixed to 1) and multiplies
//! `prev[ℓc - 1]`; `r[k]` multiplies `prev[ℓc - 1 - k]`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circular::{wg_pdf, wg_sample, Angle, WGParams};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::rng::SimRng;

/// Relative size below which a phasor sum counts as exact cancellation.
pub const DEGENERATE_TOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationModel {
    pub ell_c: usize,
    /// Lag-ordered residual amplitudes; `r[0] = 1`.
    pub r: Vec<f64>,
    pub delta_phi_bar: f64,
    pub sigma: f64,
}

impl CorrelationModel {
    pub fn new(r: Vec<f64>, delta_phi_bar: f64, sigma: f64) -> Result<Self> {
        let m = CorrelationModel {
            ell_c: r.len(),
            r,
            delta_phi_bar,
            sigma,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn first_order(sigma: f64, delta_phi_bar: f64) -> Result<Self> {
        Self::new(vec![1.0], delta_phi_bar, sigma)
    }

    pub fn second_order(r2: f64, sigma: f64, delta_phi_bar: f64) -> Result<Self> {
        Self::new(vec![1.0, r2], delta_phi_bar, sigma)
    }

    /// Exponentially fading weights `r_k = r0^(k-1)` truncated at `ell_c` lags.
    pub fn geometric(r0: f64, ell_c: usize, sigma: f64, delta_phi_bar: f64) -> Result<Self> {
        Self::new((0..ell_c).map(|k| r0.powi(k as i32)).collect(), delta_phi_bar, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ell_c == 0 {
            return Err(Error::invalid("correlation length must be >= 1"));
        }
        if self.r.len() != self.ell_c {
            return Err(Error::invalid(format!(
                "expected {} residual weights, got {}",
                self.ell_c,
                self.r.len()
            )));
        }
        if self.r[0] != 1.0 {
            return Err(Error::invalid(format!("lag-1 weight must be 1, got {}", self.r[0])));
        }
        if let Some(w) = self.r.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("residual weights must be finite and >= 0, got {w}")));
        }
        WGParams::new(self.delta_phi_bar, self.sigma).map(|_| ())
    }

    pub fn noise(&self) -> WGParams {
        WGParams {
            mean: self.delta_phi_bar,
            sigma: self.sigma,
        }
    }
}

/// `arg(Σ_k w_k e^{jφ_k})` for an oldest-first window and lag-ordered weights.
pub fn combine_h(prev: &[Angle], r: &[f64]) -> Result<Angle> {
    if prev.len() != r.len() || prev.is_empty() {
        return Err(Error::invalid(format!(
            "window of {} phases does not match {} weights",
            prev.len(),
            r.len()
        )));
    }
    combined_phase(prev.iter().map(|a| a.value()), r)
        .map(Angle::new)
        .ok_or(Error::DegenerateResultant)
}

/// Raw form of [`combine_h`]; `None` on cancellation. `window` is oldest first.
#[inline]
pub(crate) fn combined_phase<I>(window: I, r: &[f64]) -> Option<f64>
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: ExactSizeIterator,
{
    let it = window.into_iter();
    let n = it.len();
    let (mut re, mut im, mut scale) = (0.0, 0.0, 0.0);
    for (j, phi) in it.enumerate() {
        let w = r[n - 1 - j];
        let (s, c) = phi.sin_cos();
        re += w * c;
        im += w * s;
        scale += w;
    }
    if re.hypot(im) <= DEGENERATE_TOL * scale {
        None
    } else {
        Some(im.atan2(re))
    }
}

/// `f(φ_i | φ_{i-ℓc}, …, φ_{i-1})`, a wrapped Gaussian about `h(prev) + δφ̄`.
pub fn conditional_pdf(phi_i: Angle, prev: &[Angle], m: &CorrelationModel) -> Result<f64> {
    if prev.len() != m.ell_c {
        return Err(Error::invalid(format!(
            "conditional density needs {} previous phases, got {}",
            m.ell_c,
            prev.len()
        )));
    }
    let centre = combine_h(prev, &m.r)?;
    wg_pdf(phi_i.value(), &WGParams::new(centre.value() + m.delta_phi_bar, m.sigma)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSequence {
    pub phases: Vec<Angle>,
    pub seed: Option<u64>,
    pub model: Option<CorrelationModel>,
    /// Rounds whose centre was undefined (exact cancellation); their centre
    /// was drawn uniformly.
    #[serde(default)]
    pub degenerate_rounds: usize,
}

impl PhaseSequence {
    /// Wraps externally supplied phases (e.g. extracted from a laser run).
    pub fn external(phases: Vec<Angle>) -> Self {
        PhaseSequence {
            phases,
            seed: None,
            model: None,
            degenerate_rounds: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Residuals `φ_i - h(prev)` for every round with a full window.
    pub fn residuals(&self, r: &[f64]) -> Vec<Option<f64>> {
        let l = r.len();
        (l..self.phases.len())
            .map(|i| {
                combined_phase(self.phases[i - l..i].iter().map(|a| a.value()), r)
                    .map(|c| self.phases[i].diff(Angle::new(c)))
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("round_index,phase\n");
        for (i, p) in self.phases.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i, fmt_f64(p.value())));
        }
        s
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "round_index,phase" => {}
            other => {
                return Err(Error::invalid(format!(
                    "phase CSV must start with `round_index,phase`, found {other:?}"
                )))
            }
        }
        let mut phases = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut cols = line.split(',');
            let (Some(_), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::invalid(format!("phase CSV line {}: expected 2 columns", n + 2)));
            };
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| Error::invalid(format!("phase CSV line {}: {e}", n + 2)))?;
            phases.push(Angle::new(v));
        }
        Ok(PhaseSequence::external(phases))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        serde_json::to_writer_pretty(&mut buf, self)?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        write_atomic(path, &buf)
    }
}

pub fn default_warmup(m: &CorrelationModel) -> usize {
    10 * m.ell_c
}

/// Runs the recursion from i.i.d. uniform initial phases, drops `warmup`
/// rounds and returns `n` phases.
pub fn generate_sequence(m: &CorrelationModel, n: usize, rng: &mut SimRng, warmup: usize) -> Result<PhaseSequence> {
    m.validate()?;
    if n == 0 {
        return Err(Error::invalid("sequence length must be >= 1"));
    }
    let l = m.ell_c;
    let noise = m.noise();
    let total = l + warmup + n;
    let mut phases: Vec<Angle> = Vec::with_capacity(total);
    for _ in 0..l {
        phases.push(Angle::new(rng.random_range(-PI..PI)));
    }
    let mut degenerate = 0;
    while phases.len() < total {
        let i = phases.len();
        let centre = match combined_phase(phases[i - l..i].iter().map(|a| a.value()), &m.r) {
            Some(c) => c,
            None => {
                degenerate += 1;
                rng.random_range(-PI..PI)
            }
        };
        let step = wg_sample(&noise, rng)?;
        phases.push(Angle::new(centre + step.value()));
    }
    phases.drain(..l + warmup);
    Ok(PhaseSequence {
        phases,
        seed: None,
        model: Some(m.clone()),
        degenerate_rounds: degenerate,
    })
}

/// Seeded convenience wrapper around [`generate_sequence`] with the default warmup.
pub fn synthesize(m: &CorrelationModel, n: usize, seed: u64) -> Result<PhaseSequence> {
    let mut rng = crate::rng::seeded(seed);
    let mut seq = generate_sequence(m, n, &mut rng, default_warmup(m))?;
    seq.seed = Some(seed);
    Ok(seq)
}
