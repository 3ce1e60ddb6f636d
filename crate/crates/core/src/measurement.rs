//! Reduction of power traces to encoding energies and the repeat-until-confident
//! stopping rule.
//!
//! Encoding energy is the integral of the total power over the encoding run
//! minus the integral of the idle power over an equally long idle window.
//! Traces are integrated with the trapezoidal rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::student_t::t_critical;

/// Relative tolerance on the duration of a total/idle trace pair.
pub const DURATION_TOLERANCE: f64 = 0.01;

pub const DEFAULT_ALPHA: f64 = 0.99;
pub const DEFAULT_BETA: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    samples: Vec<(f64, f64)>,
}

impl PowerTrace {
    /// Builds a trace from `(seconds, watts)` samples.
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(t, p)) in samples.iter().enumerate() {
            if !t.is_finite() || !p.is_finite() {
                return Err(Error::data(format!("power trace sample {i} is not finite")));
            }
            if p < 0.0 {
                return Err(Error::data(format!("power trace sample {i} has negative power {p}")));
            }
        }
        if let Some(i) = samples.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(Error::data(format!("power trace time not strictly increasing at sample {}", i + 1)));
        }
        Ok(PowerTrace { samples })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        }
    }

    /// Parses a two-column `t_seconds,watts` file. A non-numeric first line
    /// is taken as a header.
    pub fn parse(text: &str) -> Result<Self> {
        const WHAT: &str = "power trace";
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split([',', ';', '\t', ' ']).filter(|s| !s.is_empty());
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse(WHAT, i + 1, "expected two columns"));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(t), Ok(p)) => samples.push((t, p)),
                _ if samples.is_empty() && i == 0 => continue,
                _ => return Err(Error::parse(WHAT, i + 1, format!("malformed sample '{line}'"))),
            }
        }
        PowerTrace::new(samples)
    }
}

/// Trapezoidal integral of power over time, in joules.
pub fn integrate_power(trace: &PowerTrace) -> Result<f64> {
    let s = trace.samples();
    if s.len() < 2 {
        return Err(Error::data(format!("power trace needs at least 2 samples, found {}", s.len())));
    }
    Ok(s.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingEnergy {
    pub joules: f64,
    /// Idle energy exceeded total energy; the value is negative and kept as is.
    pub negative: bool,
    pub duration_s: f64,
}

/// Encoding energy as total-trace energy minus idle-trace energy.
pub fn encoding_energy(total: &PowerTrace, idle: &PowerTrace) -> Result<EncodingEnergy> {
    let e_total = integrate_power(total)?;
    let e_idle = integrate_power(idle)?;
    let (tt, ti) = (total.duration(), idle.duration());
    if (tt - ti).abs() > DURATION_TOLERANCE * tt.max(ti) {
        return Err(Error::data(format!("trace duration mismatch: total {tt} s vs idle {ti} s")));
    }
    let joules = e_total - e_idle;
    if joules < 0.0 {
        log::warn!("idle energy {e_idle} J exceeds total energy {e_total} J");
    }
    Ok(EncodingEnergy { joules, negative: joules < 0.0, duration_s: tt })
}

/// Repeated energy measurements of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub values: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl MeasurementSet {
    pub fn new(values: Vec<f64>) -> Self {
        MeasurementSet { values, alpha: DEFAULT_ALPHA, beta: DEFAULT_BETA }
    }

    pub fn with_bounds(values: Vec<f64>, alpha: f64, beta: f64) -> Self {
        MeasurementSet { values, alpha, beta }
    }

    // deviations from the first sample, so identical values stay exact
    fn shifted_mean(&self) -> (f64, f64) {
        let shift = self.values.first().copied().unwrap_or(0.0);
        let d = self.values.iter().map(|v| v - shift).sum::<f64>() / self.values.len() as f64;
        (shift, d)
    }

    pub fn mean(&self) -> f64 {
        let (shift, d) = self.shifted_mean();
        shift + d
    }

    /// Sample standard deviation (n - 1 denominator).
    pub fn std_dev(&self) -> f64 {
        let (shift, d) = self.shifted_mean();
        let ss: f64 = self.values.iter().map(|v| (v - shift - d).powi(2)).sum();
        (ss / (self.values.len() as f64 - 1.0)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceVerdict {
    pub satisfied: bool,
    /// Confidence-interval width `2 * sigma / sqrt(m) * t_alpha(m - 1)`.
    pub lhs: f64,
    /// Allowed deviation `beta * mean`.
    pub rhs: f64,
}

/// Checks whether the measurement set is tight enough to stop repeating.
pub fn confidence_check(m: &MeasurementSet) -> Result<ConfidenceVerdict> {
    let n = m.values.len();
    if n < 2 {
        return Err(Error::data(format!("confidence check needs at least 2 values, found {n}")));
    }
    if !(m.alpha > 0.0 && m.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), found {}", m.alpha)));
    }
    if m.beta < 0.0 || !m.beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be >= 0, found {}", m.beta)));
    }
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("measurement values must be finite"));
    }
    let t = t_critical(m.alpha, (n - 1) as u32)?;
    let lhs = 2.0 * m.std_dev() / (n as f64).sqrt() * t;
    let rhs = m.beta * m.mean();
    Ok(ConfidenceVerdict { satisfied: lhs < rhs, lhs, rhs })
}
