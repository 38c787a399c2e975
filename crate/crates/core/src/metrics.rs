//! NMSE, pilot-overhead accounting and operation counts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::SystemConfig;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{fro2, CMat};

/// `|est - truth|^2 / |truth|^2`.
pub fn nmse(est: &CMat, truth: &CMat) -> Result<f64> {
    if est.shape() != truth.shape() {
        return dim_err(format!("estimate {:?} vs truth {:?}", est.shape(), truth.shape()));
    }
    let den = fro2(truth);
    if den == 0.0 {
        return Err(Error::InvalidArgument("NMSE of a zero channel is undefined".into()));
    }
    Ok(fro2(&(est - truth)) / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "FC-CONV")]
    FcConv,
    #[serde(rename = "GC-CONV")]
    GcConv,
    #[serde(rename = "FC-PROP")]
    FcProp,
    #[serde(rename = "GC-PROP")]
    GcProp,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::FcConv, Scheme::GcConv, Scheme::FcProp, Scheme::GcProp];

    pub fn is_proposed(self) -> bool {
        matches!(self, Scheme::FcProp | Scheme::GcProp)
    }

    pub fn is_grouped(self) -> bool {
        matches!(self, Scheme::GcConv | Scheme::GcProp)
    }

    /// Conventional counterpart on the same architecture.
    pub fn baseline(self) -> Scheme {
        if self.is_grouped() {
            Scheme::GcConv
        } else {
            Scheme::FcConv
        }
    }

    fn groups(self, cfg: &SystemConfig) -> usize {
        if self.is_grouped() {
            cfg.groups
        } else {
            1
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::FcConv => "FC-CONV",
            Scheme::GcConv => "GC-CONV",
            Scheme::FcProp => "FC-PROP",
            Scheme::GcProp => "GC-PROP",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// Pilot slots the proposed scheme spends per training interval: `T` plus
/// one anchor probe per group.
pub fn proposed_coefficient(scheme: Scheme, cfg: &SystemConfig) -> usize {
    cfg.t + scheme.groups(cfg)
}

/// Total pilot length over the `Q + P` intervals.
pub fn pilot_length(scheme: Scheme, cfg: &SystemConfig) -> usize {
    let g = scheme.groups(cfg);
    let mb = cfg.m / g;
    match scheme {
        Scheme::FcConv | Scheme::GcConv => mb * mb * g * cfg.intervals(),
        Scheme::FcProp | Scheme::GcProp => proposed_coefficient(scheme, cfg) * cfg.q,
    }
}

/// Average pilot overhead `P_a`, pilot slots per coherence interval.
pub fn average_overhead(scheme: Scheme, cfg: &SystemConfig) -> f64 {
    pilot_length(scheme, cfg) as f64 / cfg.intervals() as f64
}

/// `100 (1 - prop / conv)`.
pub fn overhead_reduction(prop: f64, conv: f64) -> Result<f64> {
    if !(conv > 0.0) {
        return Err(Error::InvalidArgument(format!("conventional overhead must be positive, got {conv}")));
    }
    Ok(100.0 * (1.0 - prop / conv))
}

/// Data transmission coefficient `(T_c - P_a) / T_c`.
pub fn data_fraction(p_a: f64, t_c: usize) -> f64 {
    ((t_c as f64 - p_a) / t_c as f64).clamp(0.0, 1.0)
}

/// Leading-order operation count of the complexity table. For the proposed
/// schemes `iterations` is the BALS iteration count per training interval.
pub fn flop_model(scheme: Scheme, cfg: &SystemConfig, iterations: usize) -> f64 {
    let (n, k, t, q) = (cfg.n as f64, cfg.k as f64, cfg.t as f64, cfg.q as f64);
    let g = scheme.groups(cfg) as f64;
    let m = cfg.m as f64;
    let mb = m / g;
    let i = iterations as f64;
    let cnn = 28514.0 * k * m * q + 64.0 * (q + 1.0) + 8192.0;
    match scheme {
        Scheme::FcProp | Scheme::GcProp => i * q * g * (mb * mb * t * (k + n) + 2.0 * n * k * t * mb) + cnn,
        Scheme::FcConv | Scheme::GcConv => cfg.intervals() as f64 * g * g * mb.powi(4) * (1.0 + n * k),
    }
}

/// One row of the overhead table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadRow {
    pub label: String,
    pub t: usize,
    pub coefficient: usize,
    pub p_a_proposed: f64,
    pub p_a_conventional: f64,
    pub reduction_percent: f64,
}

pub fn overhead_row(label: &str, grouped: bool, cfg: &SystemConfig) -> Result<OverheadRow> {
    let (prop, conv) = if grouped { (Scheme::GcProp, Scheme::GcConv) } else { (Scheme::FcProp, Scheme::FcConv) };
    let p = average_overhead(prop, cfg);
    let c = average_overhead(conv, cfg);
    Ok(OverheadRow {
        label: label.to_string(),
        t: cfg.t,
        coefficient: proposed_coefficient(prop, cfg),
        p_a_proposed: p,
        p_a_conventional: c,
        reduction_percent: overhead_reduction(p, c)?,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
