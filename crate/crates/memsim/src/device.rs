//! Single-memristor model: parameter sampling under device-to-device (D2D)
//! and pulse-to-pulse (P2P) variation, read current, and closed-form state
//! evolution under programming pulses.
//!
//! The device state `omega` is the filament-area fraction in [0, 1]. Its
//! dynamics under a constant voltage V are
//!
//! ```text
//!   d(omega)/dt = (1 - omega)^2 * xi(V)   for V < 0 (potentiation)
//!   d(omega)/dt = omega^2 * xi(V)         for V > 0 (depression)
//!   xi(V) = k * (exp(-mu1 * V) - exp(mu2 * V))
//! ```
//!
//! Both branches are separable, so a pulse of width T advances the state in
//! closed form; no time stepping is involved.

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// The seven physical parameters of one memristor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceParams {
    /// Ion-hopping coefficient (1/s scale factor).
    pub k: f64,
    /// Hopping barrier height 1 (1/V).
    pub mu1: f64,
    /// Hopping barrier height 2 (1/V).
    pub mu2: f64,
    /// Effective tunneling distance (A).
    pub gamma: f64,
    /// Tunneling barrier (1/V).
    pub delta: f64,
    /// Schottky depletion width (A).
    pub alpha: f64,
    /// Schottky barrier height (1/V).
    pub beta: f64,
}

impl DeviceParams {
    /// Nominal parameter set of the reference device.
    pub fn nominal() -> Self {
        Self {
            k: 1e-4,
            mu1: 19.25,
            mu2: 13.0,
            gamma: 3.01e-3,
            delta: 0.5,
            alpha: 1.58e-3,
            beta: 0.5,
        }
    }

    pub fn field(&self, i: usize) -> f64 {
        match i {
            0 => self.k,
            1 => self.mu1,
            2 => self.mu2,
            3 => self.gamma,
            4 => self.delta,
            5 => self.alpha,
            _ => self.beta,
        }
    }

    fn field_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0 => &mut self.k,
            1 => &mut self.mu1,
            2 => &mut self.mu2,
            3 => &mut self.gamma,
            4 => &mut self.delta,
            5 => &mut self.alpha,
            _ => &mut self.beta,
        }
    }
}

pub const PARAM_COUNT: usize = 7;

/// Filament-area state of one memristor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceState {
    /// Filament-area fraction, kept in [0, 1].
    pub omega: f64,
}

impl DeviceState {
    pub fn new(omega: f64) -> Self {
        Self { omega: omega.clamp(0.0, 1.0) }
    }
}

/// One programming pulse: signed amplitude and width.
///
/// Potentiation pulses carry negative voltage, depression pulses positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    /// Amplitude in volts, signed.
    pub voltage: f64,
    /// Duration in seconds, > 0.
    pub width: f64,
}

/// The potentiation/depression pulse pair used by a crossbar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulsePair {
    pub potentiation: PulseSpec,
    pub depression: PulseSpec,
}

impl Default for PulsePair {
    fn default() -> Self {
        Self {
            potentiation: PulseSpec { voltage: -1.1, width: 3e-6 },
            depression: PulseSpec { voltage: 1.4, width: 30e-6 },
        }
    }
}

impl PulsePair {
    /// Scale both pulse widths, keeping amplitudes fixed.
    pub fn with_width_scale(mut self, s: f64) -> Self {
        self.potentiation.width *= s;
        self.depression.width *= s;
        self
    }
}

/// Relative standard deviations of the D2D Gaussians, per parameter,
/// in field order (k, mu1, mu2, gamma, delta, alpha, beta).
pub const DEFAULT_D2D_FRACTIONS: [f64; PARAM_COUNT] = [0.03, 0.03, 0.03, 0.10, 0.03, 0.15, 0.03];

/// Variation model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationConfig {
    /// Relative std of the D2D Gaussian per parameter.
    pub d2d_fraction: [f64; PARAM_COUNT],
    /// P2P std as a fraction of the D2D std.
    pub p2p_ratio: f64,
    /// Sweep multiplier on the D2D stds.
    pub d2d_scale: f64,
    /// Sweep multiplier on the P2P stds.
    pub p2p_scale: f64,
    pub d2d_enabled: bool,
    pub p2p_enabled: bool,
    /// Relative std of additive Gaussian noise on read conductance; 0 disables.
    pub read_noise_std: f64,
}

impl Default for VariationConfig {
    fn default() -> Self {
        Self {
            d2d_fraction: DEFAULT_D2D_FRACTIONS,
            p2p_ratio: 0.1,
            d2d_scale: 1.0,
            p2p_scale: 1.0,
            d2d_enabled: true,
            p2p_enabled: true,
            read_noise_std: 0.0,
        }
    }
}

impl VariationConfig {
    /// Variation fully disabled; every device is the nominal one.
    pub fn disabled() -> Self {
        Self { d2d_enabled: false, p2p_enabled: false, ..Self::default() }
    }
}

/// Gaussian draw with redraw-on-nonpositive. At most 16 attempts, then the
/// value clamps to `mean * 1e-3`; the physical model needs positive
/// coefficients and the tails of wide Gaussians can cross zero.
fn positive_normal(mean: f64, sigma: f64, stream: &StreamKey, event: u64, field: usize) -> f64 {
    for attempt in 0..16 {
        let v = mean + sigma * stream.normal(event, (field * 16 + attempt) as u64);
        if v > 0.0 {
            return v;
        }
    }
    mean * 1e-3
}

/// Draw one device's parameter set around `mean` under the D2D model.
///
/// Each field is drawn independently from
/// `Normal(mean.f, mean.f * d2d_fraction(f) * d2d_scale)`. With D2D disabled
/// the mean is returned exactly.
pub fn sample_device_params(
    mean: &DeviceParams,
    var: &VariationConfig,
    stream: &StreamKey,
    event: u64,
) -> DeviceParams {
    if !var.d2d_enabled {
        return *mean;
    }
    let mut out = *mean;
    for f in 0..PARAM_COUNT {
        let m = mean.field(f);
        let sigma = m * var.d2d_fraction[f] * var.d2d_scale;
        *out.field_mut(f) = positive_normal(m, sigma, stream, event, f);
    }
    out
}

/// Fresh P2P perturbation of a device's base parameters.
///
/// Non-cumulative: always centered on the D2D base, with std
/// `mean.f * d2d_fraction(f) * p2p_ratio * p2p_scale`. Identity when P2P is
/// disabled.
pub fn perturb_p2p(
    base: &DeviceParams,
    mean: &DeviceParams,
    var: &VariationConfig,
    stream: &StreamKey,
    event: u64,
) -> DeviceParams {
    if !var.p2p_enabled {
        return *base;
    }
    let mut out = *base;
    for f in 0..PARAM_COUNT {
        let sigma = mean.field(f) * var.d2d_fraction[f] * var.p2p_ratio * var.p2p_scale;
        *out.field_mut(f) = positive_normal(base.field(f), sigma, stream, event, f);
    }
    out
}

/// Current through the device at voltage `v`.
///
/// `I = omega * gamma * sinh(delta v) + (1 - omega) * alpha * (1 - exp(-beta v))`
#[inline]
pub fn current(p: &DeviceParams, s: &DeviceState, v: f64) -> f64 {
    s.omega * p.gamma * (p.delta * v).sinh()
        + (1.0 - s.omega) * p.alpha * -(-(p.beta * v)).exp_m1()
}

/// Read conductance at read voltage `vr` (> 0): `I(vr) / vr`.
///
/// Affine in omega between the device's own extreme conductances. Reads do
/// not disturb the state.
#[inline]
pub fn read_conductance(p: &DeviceParams, s: &DeviceState, vr: f64) -> f64 {
    current(p, s, vr) / vr
}

/// Optional read-noise hook: relative Gaussian noise on a read conductance.
/// Inactive (identity) at the default `read_noise_std = 0`.
#[inline]
pub fn apply_read_noise(g: f64, var: &VariationConfig, stream: &StreamKey, event: u64) -> f64 {
    if var.read_noise_std > 0.0 {
        g * (1.0 + var.read_noise_std * stream.normal(event, 0))
    } else {
        g
    }
}

/// State-change rate coefficient `xi(V) = k (exp(-mu1 V) - exp(mu2 V))`.
///
/// Positive for potentiation voltages (V < 0), negative for depression
/// voltages (V > 0). V = 0 has no programming semantics.
pub fn rate_coefficient(p: &DeviceParams, v: f64) -> Result<f64> {
    if v == 0.0 {
        return Err(Error::ZeroVoltage);
    }
    Ok(p.k * ((-p.mu1 * v).exp() - (p.mu2 * v).exp()))
}

/// Advance omega over a pulse of width `t` at the polarity implied by the
/// voltage sign, using the exact solution of the separable state ODE.
#[inline]
pub fn advance_omega(omega: f64, xi: f64, t: f64, voltage: f64) -> f64 {
    let next = if voltage < 0.0 {
        // potentiation branch: d(omega)/dt = (1-omega)^2 xi
        let u = 1.0 - omega;
        let denom = 1.0 + u * xi * t;
        if denom <= 0.0 || !denom.is_finite() {
            0.0 // xi < 0 runaway; the ODE drains the state
        } else {
            1.0 - u / denom
        }
    } else {
        // depression branch: d(omega)/dt = omega^2 xi
        let denom = 1.0 - omega * xi * t;
        if denom <= 0.0 || !denom.is_finite() {
            1.0 // xi > 0 runaway; the ODE saturates the state
        } else {
            omega / denom
        }
    };
    next.clamp(0.0, 1.0)
}

/// Apply one programming pulse: perturb the base parameters under P2P, then
/// advance the state in closed form and clamp to [0, 1].
pub fn apply_pulse(
    s: &DeviceState,
    base: &DeviceParams,
    mean: &DeviceParams,
    pulse: &PulseSpec,
    var: &VariationConfig,
    stream: &StreamKey,
    event: u64,
) -> DeviceState {
    debug_assert!(pulse.width > 0.0);
    let p = perturb_p2p(base, mean, var, stream, event);
    let xi = p.k * ((-p.mu1 * pulse.voltage).exp() - (p.mu2 * pulse.voltage).exp());
    DeviceState { omega: advance_omega(s.omega, xi, pulse.width, pulse.voltage) }
}
