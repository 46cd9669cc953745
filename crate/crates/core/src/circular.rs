//! Wrapped-Gaussian distribution and circular statistics.
//!
//! Angles live on `(-π, π]`. All reductions go through [`wrap_angle`] so
//! every module agrees on which representative `±π` maps to.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::{Add, Neg, Sub};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduces any real angle onto `(-π, π]`.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// An angle in radians, always stored in its canonical representative.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct Angle(f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);
    pub const PI: Angle = Angle(PI);

    pub fn new(radians: f64) -> Self {
        Angle(wrap_angle(radians))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Signed distance `self - other` reduced to `(-π, π]`.
    pub fn diff(self, other: Angle) -> f64 {
        wrap_angle(self.0 - other.0)
    }
}

impl From<f64> for Angle {
    fn from(x: f64) -> Self {
        Angle::new(x)
    }
}

impl From<Angle> for f64 {
    fn from(a: Angle) -> f64 {
        a.0
    }
}

impl Add for Angle {
    type Output = Angle;
    fn add(self, rhs: Angle) -> Angle {
        Angle::new(self.0 + rhs.0)
    }
}

impl Add<f64> for Angle {
    type Output = Angle;
    fn add(self, rhs: f64) -> Angle {
        Angle::new(self.0 + rhs)
    }
}

impl Sub for Angle {
    type Output = Angle;
    fn sub(self, rhs: Angle) -> Angle {
        Angle::new(self.0 - rhs.0)
    }
}

impl Neg for Angle {
    type Output = Angle;
    fn neg(self) -> Angle {
        Angle::new(-self.0)
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Mean and standard deviation of a wrapped Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WGParams {
    pub mean: f64,
    pub sigma: f64,
}

impl WGParams {
    pub fn new(mean: f64, sigma: f64) -> Result<Self> {
        let p = WGParams { mean, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() {
            return Err(Error::invalid(format!("wrapped Gaussian mean {} is not finite", self.mean)));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::invalid(format!(
                "wrapped Gaussian sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

// Above this spread the Fourier (theta-function) form converges in a handful
// of terms; below it the image sum over k needs at most |k| <= 2.
const FOURIER_SIGMA: f64 = 2.0;
const LN_TAU: f64 = 1.837_877_066_409_345_5;

/// Evaluator for a wrapped Gaussian kernel of fixed spread.
///
/// Image sum `Σ_k N(d + 2kπ; 0, σ)` with `d = wrap(x - mean)`:
///  * `σ <= 1`: `|k| <= 1`. The first omitted image sits at `|d + 4π| >= 3π`,
///    which is below the dominant term by a factor `< exp(-4π²/σ²) < 1e-17`.
///  * `1 < σ <= 2`: `|k| <= 2`. The omitted images are `>= 5π` away, relative
///    size `< exp(-12π²/σ²) < 1e-12`.
///  * `σ > 2`: `(1/2π)(1 + 2 Σ_n exp(-n²σ²/2) cos(n d))`, truncated once the
///    coefficient falls below `1e-18`.
#[derive(Clone, Debug)]
pub struct WrappedGaussian {
    sigma: f64,
    inv_two_var: f64,
    log_norm: f64,
    images: i32,
    fourier: Vec<f64>,
}

impl WrappedGaussian {
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        if sigma == 0.0 {
            return Err(Error::DegenerateDistribution);
        }
        let mut fourier = Vec::new();
        let images = if sigma <= 1.0 { 1 } else { 2 };
        if sigma > FOURIER_SIGMA {
            let mut n = 1.0_f64;
            loop {
                let c = (-0.5 * n * n * sigma * sigma).exp();
                if c < 1e-18 {
                    break;
                }
                fourier.push(2.0 * c);
                n += 1.0;
            }
        }
        Ok(WrappedGaussian {
            sigma,
            inv_two_var: 0.5 / (sigma * sigma),
            log_norm: -(sigma.ln() + 0.5 * LN_TAU),
            images,
            fourier,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Natural log of the density at `x` for a kernel centred at `mean`.
    #[inline]
    pub fn log_density(&self, x: f64, mean: f64) -> f64 {
        let d = wrap_angle(x - mean);
        if self.sigma > FOURIER_SIGMA {
            let mut s = 1.0;
            for (n, c) in self.fourier.iter().enumerate() {
                s += c * ((n + 1) as f64 * d).cos();
            }
            return s.ln() - LN_TAU;
        }
        // log-sum-exp over the images; the k = 0 image is the largest since |d| <= π.
        let e0 = -d * d * self.inv_two_var;
        let mut acc = 1.0;
        for k in 1..=self.images {
            let shift = TAU * k as f64;
            let ep = -(d + shift) * (d + shift) * self.inv_two_var;
            let em = -(d - shift) * (d - shift) * self.inv_two_var;
            acc += (ep - e0).exp() + (em - e0).exp();
        }
        self.log_norm + e0 + acc.ln()
    }

    #[inline]
    pub fn density(&self, x: f64, mean: f64) -> f64 {
        self.log_density(x, mean).exp()
    }
}

fn check_finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} is not finite ({x})")))
    }
}

/// Wrapped-Gaussian density at `x`. `σ = 0` is rejected with
/// [`Error::DegenerateDistribution`].
pub fn wg_pdf(x: f64, p: &WGParams) -> Result<f64> {
    Ok(wg_log_pdf(x, p)?.exp())
}

pub fn wg_log_pdf(x: f64, p: &WGParams) -> Result<f64> {
    check_finite(x, "angle")?;
    p.validate()?;
    Ok(WrappedGaussian::new(p.sigma)?.log_density(x, p.mean))
}

/// Draws `mean + σ·z` with `z ~ N(0, 1)` and wraps it onto `(-π, π]`.
pub fn wg_sample<R: Rng + ?Sized>(p: &WGParams, rng: &mut R) -> Result<Angle> {
    p.validate()?;
    if p.sigma == 0.0 {
        return Ok(Angle::new(p.mean));
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok(Angle::new(p.mean + p.sigma * z))
}

/// First trigonometric moment of a sample set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircularMoment {
    /// `|<e^{jφ}>|`, in `[0, 1]`.
    pub resultant_length: f64,
    pub mean_angle: Angle,
}

pub fn circular_moment(samples: &[Angle]) -> Result<CircularMoment> {
    circular_moment_iter(samples.iter().map(|a| a.value()))
}

pub(crate) fn circular_moment_iter<I: IntoIterator<Item = f64>>(samples: I) -> Result<CircularMoment> {
    let (mut c, mut s, mut n) = (0.0, 0.0, 0usize);
    for x in samples {
        c += x.cos();
        s += x.sin();
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("circular moment of an empty sample"));
    }
    let (c, s) = (c / n as f64, s / n as f64);
    Ok(CircularMoment {
        resultant_length: c.hypot(s).min(1.0),
        mean_angle: Angle::new(s.atan2(c)),
    })
}
