//! Weight-change programming: converts requested weight deltas into pulse
//! trains under four schemes (open-loop floor, open-loop stochastic,
//! closed-loop, closed-loop with boundary compensation) and performs
//! crossbar re-initialization.

use crate::crossbar::{weight_to_omega, Crossbar, MappingConstants};
use crate::device::{self, DeviceParams, DeviceState, PulsePair, PulseSpec};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use ndarray::ArrayView2;
use rayon::prelude::*;

/// Safety cap on pulses applied per cell per update. The pulse-time solve
/// diverges as the request approaches the reachable boundary; beyond this
/// cap additional pulses change omega by less than 1e-4.
pub const MAX_PULSES_PER_UPDATE: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    /// Continuous pulse time; no discretization.
    None,
    /// Integer pulse count by magnitude truncation.
    Floor,
    /// Integer part plus a Bernoulli draw on the fraction.
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReinitMode {
    Uniform,
    Gaussian,
}

/// Programming-scheme configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub loop_mode: LoopMode,
    pub rounding: Rounding,
    /// Open-loop amplification coefficient N.
    pub n_coefficient: f64,
    pub compensation: bool,
    /// Compensation applies when the read state lies outside this band.
    pub compensation_band: (f64, f64),
    pub reinit_mode: ReinitMode,
    /// Uniform re-initialization boundary.
    pub reinit_epsilon: f64,
    /// Target weight std; 0 selects sqrt(2 / (rows + cols)) per layer.
    pub reinit_target_std: f64,
    pub reinit_max_cycles: u32,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            loop_mode: LoopMode::Open,
            rounding: Rounding::Stochastic,
            n_coefficient: 2.0,
            compensation: false,
            compensation_band: (0.1, 0.9),
            reinit_mode: ReinitMode::Uniform,
            reinit_epsilon: 0.1,
            reinit_target_std: 0.0,
            reinit_max_cycles: 40,
        }
    }
}

impl SchemeConfig {
    pub fn target_std_for(&self, rows: usize, cols: usize) -> f64 {
        if self.reinit_target_std > 0.0 {
            self.reinit_target_std
        } else {
            (2.0 / (rows + cols) as f64).sqrt()
        }
    }
}

/// Intermediate quantities of one pulse-time solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSolve {
    /// Rate coefficient at the programming voltage (1/s).
    pub xi: f64,
    /// Boundary distance: 1 - omega for potentiation, -omega for depression.
    pub lambda: f64,
    /// Compensation auxiliary psi = T * xi * lambda.
    pub psi: f64,
    /// Continuous pulse time (s), >= 0.
    pub t: f64,
    /// Integer pulse count floor(t / T).
    pub n: u64,
    /// The solve produced a negative / non-finite time and was clamped.
    pub clamped_to_zero: bool,
    /// Compensation guard failed; plain closed-loop solve was used.
    pub fallback: bool,
}

impl PulseSolve {
    fn zero(xi: f64, lambda: f64, psi: f64, clamped: bool) -> Self {
        PulseSolve { xi, lambda, psi, t: 0.0, n: 0, clamped_to_zero: clamped, fallback: false }
    }
}

/// Counters for one programming or re-initialization pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProgramReport {
    pub pulses_potentiation: u64,
    pub pulses_depression: u64,
    pub reads: u64,
    pub cells_touched: u64,
    /// Requests whose endpoint had to be clamped into the reachable range.
    pub clamped_requests: u64,
    /// Solves clamped to zero pulses (negative or non-finite time).
    pub clamped_solves: u64,
    /// Compensation solves that fell back to the plain closed-loop form.
    pub comp_fallbacks: u64,
    /// Updates truncated by the per-update pulse cap.
    pub capped_updates: u64,
}

impl ProgramReport {
    pub fn total_pulses(&self) -> u64 {
        self.pulses_potentiation + self.pulses_depression
    }

    pub fn merge(&mut self, other: &ProgramReport) {
        self.pulses_potentiation += other.pulses_potentiation;
        self.pulses_depression += other.pulses_depression;
        self.reads += other.reads;
        self.cells_touched += other.cells_touched;
        self.clamped_requests += other.clamped_requests;
        self.clamped_solves += other.clamped_solves;
        self.comp_fallbacks += other.comp_fallbacks;
        self.capped_updates += other.capped_updates;
    }
}

/// Open-loop pulse demand `n = N * delta_g / 2`, signed: positive values
/// request potentiation. Rounding is the caller's choice.
#[inline]
pub fn open_loop_pulse_demand(delta_g: f64, n_coefficient: f64) -> f64 {
    n_coefficient * delta_g / 2.0
}

/// Magnitude truncation of a nonnegative pulse demand.
#[inline]
pub fn floor_round(n_real: f64) -> u64 {
    debug_assert!(n_real >= 0.0);
    n_real as u64
}

/// Stochastic rounding: `floor(n) + Bernoulli(frac(n))`. Unbiased: the
/// expectation equals `n_real`.
#[inline]
pub fn stochastic_round(n_real: f64, stream: &StreamKey, event: u64) -> u64 {
    debug_assert!(n_real >= 0.0);
    let base = n_real.floor();
    let frac = n_real - base;
    base as u64 + u64::from(frac > 0.0 && stream.bernoulli(event, 0, frac))
}

/// Expected state change for a requested weight change, evaluated at the
/// nominal parameter set (device properties are not measured during learning).
pub fn delta_omega_from_delta_g(delta_g: f64, mapping: &MappingConstants, mean: &DeviceParams) -> f64 {
    let vr = mapping.vr;
    let den = mean.gamma * (mean.delta * vr).sinh() - mean.alpha * -(-(mean.beta * vr)).exp_m1();
    delta_g * vr / (mapping.a * den)
}

/// Clamp the requested endpoint into [0, 1], pick the polarity branch, and
/// bound |delta| below |lambda| (the ODE cannot reach the boundary in finite
/// time). Returns (delta_omega, lambda, xi, pulse, clamped_request).
fn prepare_solve(
    omega_read: f64,
    delta_omega: f64,
    pulses: &PulsePair,
    mean: &DeviceParams,
) -> (f64, f64, f64, PulseSpec, bool) {
    let omega = omega_read.clamp(0.0, 1.0);
    let endpoint = omega + delta_omega;
    let clamped_request = !(0.0..=1.0).contains(&endpoint);
    let mut dw = endpoint.clamp(0.0, 1.0) - omega;
    let (pulse, lambda) = if dw >= 0.0 {
        (pulses.potentiation, 1.0 - omega)
    } else {
        (pulses.depression, -omega)
    };
    let xi = mean.k * ((-mean.mu1 * pulse.voltage).exp() - (mean.mu2 * pulse.voltage).exp());
    if dw.abs() >= 0.999 * lambda.abs() {
        dw = 0.999 * lambda;
    }
    (dw, lambda, xi, pulse, clamped_request)
}

/// Closed-loop pulse time: `t = delta / (xi * lambda * (lambda - delta))`
/// with `lambda` per the polarity branch, then `n = floor(t / T)`.
pub fn closed_loop_pulse_time(
    omega_read: f64,
    delta_omega: f64,
    pulses: &PulsePair,
    mean: &DeviceParams,
) -> PulseSolve {
    let (dw, lambda, xi, pulse, _) = prepare_solve(omega_read, delta_omega, pulses, mean);
    let psi = pulse.width * xi * lambda;
    if dw == 0.0 || lambda == 0.0 {
        return PulseSolve::zero(xi, lambda, psi, false);
    }
    let t = dw / (xi * lambda * (lambda - dw));
    if !t.is_finite() || t <= 0.0 {
        return PulseSolve::zero(xi, lambda, psi, true);
    }
    PulseSolve {
        xi,
        lambda,
        psi,
        t,
        n: (t / pulse.width) as u64,
        clamped_to_zero: false,
        fallback: false,
    }
}

/// Boundary-compensated pulse time:
/// `t_c = (delta + psi (delta - lambda)) / (xi lambda (psi + 1)(lambda - delta))`
/// with `psi = T xi lambda`. Falls back to the plain closed-loop solve when
/// the guard conditions fail.
pub fn compensated_pulse_time(
    omega_read: f64,
    delta_omega: f64,
    pulses: &PulsePair,
    mean: &DeviceParams,
) -> PulseSolve {
    let (dw, lambda, xi, pulse, _) = prepare_solve(omega_read, delta_omega, pulses, mean);
    let psi = pulse.width * xi * lambda;
    if lambda == 0.0 {
        return PulseSolve::zero(xi, lambda, psi, false);
    }
    if psi + 1.0 <= 0.0 || lambda - dw == 0.0 {
        let mut solve = closed_loop_pulse_time(omega_read, delta_omega, pulses, mean);
        solve.fallback = true;
        return solve;
    }
    let t = (dw + psi * (dw - lambda)) / (xi * lambda * (psi + 1.0) * (lambda - dw));
    if !t.is_finite() || t <= 0.0 {
        return PulseSolve::zero(xi, lambda, psi, true);
    }
    PulseSolve {
        xi,
        lambda,
        psi,
        t,
        n: (t / pulse.width) as u64,
        clamped_to_zero: false,
        fallback: false,
    }
}

/// Per-cell working context for one program pass.
struct CellCtx<'a> {
    mean: &'a DeviceParams,
    mapping: &'a MappingConstants,
    var: &'a device::VariationConfig,
    pulses: &'a PulsePair,
    scheme: &'a SchemeConfig,
}

/// Apply `n` identical pulses to one cell, each with a fresh P2P draw.
fn apply_n_pulses(
    n: u64,
    pulse: &PulseSpec,
    ctx: &CellCtx,
    base: &DeviceParams,
    omega: &mut f64,
    counter: &mut u64,
    stream: &StreamKey,
    report: &mut ProgramReport,
) {
    let n_applied = n.min(MAX_PULSES_PER_UPDATE);
    if n_applied < n {
        report.capped_updates += 1;
    }
    for _ in 0..n_applied {
        let state = device::apply_pulse(
            &DeviceState { omega: *omega },
            base,
            ctx.mean,
            pulse,
            ctx.var,
            stream,
            *counter,
        );
        *counter += 1;
        *omega = state.omega;
    }
    if pulse.voltage < 0.0 {
        report.pulses_potentiation += n_applied;
    } else {
        report.pulses_depression += n_applied;
    }
    if n_applied > 0 {
        report.cells_touched += 1;
    }
}

/// Apply one continuous pulse of width `t` (no discretization). Counts as
/// its ceil-rounded pulse-width equivalent in the tallies. Widths are
/// capped at the per-update pulse budget; beyond it the state change is
/// saturation either way.
fn apply_continuous(
    t: f64,
    pulse: &PulseSpec,
    ctx: &CellCtx,
    base: &DeviceParams,
    omega: &mut f64,
    counter: &mut u64,
    stream: &StreamKey,
    report: &mut ProgramReport,
) {
    if t <= 0.0 {
        return;
    }
    let t_cap = pulse.width * MAX_PULSES_PER_UPDATE as f64;
    let t = if t > t_cap {
        report.capped_updates += 1;
        t_cap
    } else {
        t
    };
    let spec = PulseSpec { voltage: pulse.voltage, width: t };
    let state = device::apply_pulse(
        &DeviceState { omega: *omega },
        base,
        ctx.mean,
        &spec,
        ctx.var,
        stream,
        *counter,
    );
    *counter += 1;
    *omega = state.omega;
    let equivalent = (t / pulse.width).ceil() as u64;
    if pulse.voltage < 0.0 {
        report.pulses_potentiation += equivalent;
    } else {
        report.pulses_depression += equivalent;
    }
    report.cells_touched += 1;
}

/// Read one cell's weight through the mapping (per-cell parameters, nominal
/// mapping constants), applying the read-noise hook if enabled. The read is
/// a lerp of the cell's precomputed endpoint weights.
fn read_cell_weight(
    w_lo: f64,
    w_hi: f64,
    omega: f64,
    ctx: &CellCtx,
    counter: &mut u64,
    stream: &StreamKey,
) -> f64 {
    let g = omega * w_hi + (1.0 - omega) * w_lo;
    if ctx.var.read_noise_std > 0.0 {
        // noise is relative on the conductance; (g + b) / a is linear in G,
        // so relative noise on G maps through the same factor
        let cond = (g + ctx.mapping.b) / ctx.mapping.a;
        let noisy = device::apply_read_noise(cond, ctx.var, stream, *counter);
        *counter += 1;
        ctx.mapping.a * noisy - ctx.mapping.b
    } else {
        g
    }
}

#[allow(clippy::too_many_arguments)]
fn program_cell(
    delta_g: f64,
    ctx: &CellCtx,
    base: &DeviceParams,
    omega: &mut f64,
    counter: &mut u64,
    stream: &StreamKey,
    w_lo: f64,
    w_hi: f64,
) -> ProgramReport {
    let mut report = ProgramReport::default();
    match ctx.scheme.loop_mode {
        LoopMode::Open => {
            let n_real = open_loop_pulse_demand(delta_g, ctx.scheme.n_coefficient);
            if n_real == 0.0 {
                return report;
            }
            let pulse = if n_real > 0.0 { ctx.pulses.potentiation } else { ctx.pulses.depression };
            match ctx.scheme.rounding {
                Rounding::None => {
                    apply_continuous(
                        n_real.abs() * pulse.width,
                        &pulse,
                        ctx,
                        base,
                        omega,
                        counter,
                        stream,
                        &mut report,
                    );
                }
                Rounding::Floor | Rounding::Stochastic => {
                    let mut n = if ctx.scheme.rounding == Rounding::Floor {
                        floor_round(n_real.abs())
                    } else {
                        let n = stochastic_round(n_real.abs(), stream, *counter);
                        *counter += 1;
                        n
                    };
                    if n >= 1 && ctx.scheme.compensation {
                        // one read decides whether the boundary correction
                        // replaces the open-loop pulse train
                        report.reads += 1;
                        let g_read = read_cell_weight(w_lo, w_hi, *omega, ctx, counter, stream);
                        let omega_hat = weight_to_omega(g_read, ctx.mean, ctx.mapping);
                        let (lo, hi) = ctx.scheme.compensation_band;
                        if omega_hat < lo || omega_hat > hi {
                            let dw = delta_omega_from_delta_g(delta_g, ctx.mapping, ctx.mean);
                            let solve = compensated_pulse_time(omega_hat, dw, ctx.pulses, ctx.mean);
                            if solve.fallback {
                                report.comp_fallbacks += 1;
                            }
                            if solve.clamped_to_zero {
                                report.clamped_solves += 1;
                            }
                            n = solve.n;
                        }
                    }
                    apply_n_pulses(n, &pulse, ctx, base, omega, counter, stream, &mut report);
                }
            }
        }
        LoopMode::Closed => {
            report.reads += 1;
            let g_read = read_cell_weight(w_lo, w_hi, *omega, ctx, counter, stream);
            let omega_hat = weight_to_omega(g_read, ctx.mean, ctx.mapping);
            let dw = delta_omega_from_delta_g(delta_g, ctx.mapping, ctx.mean);
            if dw == 0.0 {
                return report;
            }
            let endpoint = omega_hat + dw;
            if !(0.0..=1.0).contains(&endpoint) {
                report.clamped_requests += 1;
            }
            let (lo, hi) = ctx.scheme.compensation_band;
            let use_comp = ctx.scheme.compensation && (omega_hat < lo || omega_hat > hi);
            let solve = if use_comp {
                let s = compensated_pulse_time(omega_hat, dw, ctx.pulses, ctx.mean);
                if s.fallback {
                    report.comp_fallbacks += 1;
                }
                s
            } else {
                closed_loop_pulse_time(omega_hat, dw, ctx.pulses, ctx.mean)
            };
            if solve.clamped_to_zero {
                report.clamped_solves += 1;
                return report;
            }
            let pulse = if dw > 0.0 { ctx.pulses.potentiation } else { ctx.pulses.depression };
            match ctx.scheme.rounding {
                Rounding::None => {
                    apply_continuous(solve.t, &pulse, ctx, base, omega, counter, stream, &mut report);
                }
                Rounding::Floor => {
                    apply_n_pulses(solve.n, &pulse, ctx, base, omega, counter, stream, &mut report);
                }
                Rounding::Stochastic => {
                    let n = stochastic_round(solve.t / pulse.width, stream, *counter);
                    *counter += 1;
                    apply_n_pulses(n, &pulse, ctx, base, omega, counter, stream, &mut report);
                }
            }
        }
    }
    report
}

/// Program a crossbar toward the requested per-cell weight changes under the
/// configured scheme. Per-cell work is independent; rows are processed in
/// parallel and every stochastic draw is keyed by the owning cell, so the
/// result does not depend on the thread count.
pub fn program(cb: &mut Crossbar, delta_g: ArrayView2<f64>, scheme: &SchemeConfig) -> Result<ProgramReport> {
    if delta_g.dim() != (cb.rows, cb.cols) {
        return Err(Error::DimensionMismatch {
            expected: cb.rows * cb.cols,
            got: delta_g.len(),
            context: "program delta_g",
        });
    }
    let cols = cb.cols;
    let seed = cb.seed;
    let layer = cb.layer_id;
    let mean = cb.mean_params;
    let mapping = cb.mapping;
    let var = cb.variation.clone();
    let pulses = cb.pulses;
    let ctx = CellCtx { mean: &mean, mapping: &mapping, var: &var, pulses: &pulses, scheme };
    let dg = delta_g.to_owned();
    let dg_slice = dg.as_slice().expect("contiguous delta_g");

    let cells = cb.cells_mut();
    let report = cells
        .params
        .par_chunks(cols)
        .zip(cells.omegas.par_chunks_mut(cols))
        .zip(cells.counters.par_chunks_mut(cols))
        .zip(cells.w_lo.par_chunks(cols))
        .zip(cells.w_hi.par_chunks(cols))
        .enumerate()
        .map(|(r, ((((p_row, w_row), c_row), lo_row), hi_row))| {
            let mut row_report = ProgramReport::default();
            for c in 0..cols {
                let stream = StreamKey::new(seed, layer, r as u32, c as u32);
                let cell = program_cell(
                    dg_slice[r * cols + c],
                    &ctx,
                    &p_row[c],
                    &mut w_row[c],
                    &mut c_row[c],
                    &stream,
                    lo_row[c],
                    hi_row[c],
                );
                row_report.merge(&cell);
            }
            row_report
        })
        .reduce(ProgramReport::default, |mut a, b| {
            a.merge(&b);
            a
        });
    cb.add_pulses(report.total_pulses());
    Ok(report)
}

/// Outcome of a re-initialization pass.
#[derive(Debug, Clone)]
pub struct ReinitReport {
    pub program: ProgramReport,
    /// Pulse cycles executed (reads happen once more than this).
    pub cycles: u32,
    pub final_std: f64,
    pub target_std: f64,
    /// Weight std observed before each pulse cycle, plus the final value.
    pub std_history: Vec<f64>,
}

/// Iterative re-initialization: read all weights, pulse cells toward zero
/// (gaussian mode) or toward the epsilon band (uniform mode), and stop once
/// the weight std reaches the target or the cycle budget runs out.
pub fn reinitialize(cb: &mut Crossbar, scheme: &SchemeConfig) -> ReinitReport {
    let target = scheme.target_std_for(cb.rows, cb.cols);
    let cols = cb.cols;
    let seed = cb.seed;
    let layer = cb.layer_id;
    let mean = cb.mean_params;
    let mapping = cb.mapping;
    let var = cb.variation.clone();
    let pulses = cb.pulses;
    let ctx = CellCtx { mean: &mean, mapping: &mapping, var: &var, pulses: &pulses, scheme };

    let mut report = ProgramReport::default();
    let mut history = Vec::new();
    let mut cycles = 0;
    loop {
        let cells = cb.cells_mut();
        // read pass
        let n = cells.params.len();
        let mut weights = vec![0.0; n];
        weights
            .par_chunks_mut(cols)
            .zip(cells.omegas.par_chunks(cols))
            .zip(cells.counters.par_chunks_mut(cols))
            .zip(cells.w_lo.par_chunks(cols))
            .zip(cells.w_hi.par_chunks(cols))
            .enumerate()
            .for_each(|(r, ((((w_out, w_row), c_row), lo_row), hi_row))| {
                for c in 0..cols {
                    let stream = StreamKey::new(seed, layer, r as u32, c as u32);
                    w_out[c] =
                        read_cell_weight(lo_row[c], hi_row[c], w_row[c], &ctx, &mut c_row[c], &stream);
                }
            });
        report.reads += n as u64;
        let m = weights.iter().sum::<f64>() / n as f64;
        let std = (weights.iter().map(|w| (w - m) * (w - m)).sum::<f64>() / n as f64).sqrt();
        history.push(std);
        if std <= target || cycles >= scheme.reinit_max_cycles {
            cb.add_pulses(report.total_pulses());
            return ReinitReport { program: report, cycles, final_std: std, target_std: target, std_history: history };
        }
        // pulse pass
        let eps = scheme.reinit_epsilon;
        let mode = scheme.reinit_mode;
        let cycle_report = cells
            .params
            .par_chunks(cols)
            .zip(cells.omegas.par_chunks_mut(cols))
            .zip(cells.counters.par_chunks_mut(cols))
            .enumerate()
            .map(|(r, ((p_row, w_row), c_row))| {
                let mut rr = ProgramReport::default();
                for c in 0..cols {
                    let g = weights[r * cols + c];
                    let pulse = match mode {
                        ReinitMode::Gaussian => {
                            if g >= 0.0 { Some(pulses.depression) } else { Some(pulses.potentiation) }
                        }
                        ReinitMode::Uniform => {
                            if g >= eps {
                                Some(pulses.depression)
                            } else if g <= -eps {
                                Some(pulses.potentiation)
                            } else {
                                None
                            }
                        }
                    };
                    if let Some(p) = pulse {
                        let stream = StreamKey::new(seed, layer, r as u32, c as u32);
                        apply_n_pulses(1, &p, &ctx, &p_row[c], &mut w_row[c], &mut c_row[c], &stream, &mut rr);
                    }
                }
                rr
            })
            .reduce(ProgramReport::default, |mut a, b| {
                a.merge(&b);
                a
            });
        report.merge(&cycle_report);
        cycles += 1;
    }
}
