//! Experiment runner: dispatches parsed configurations to training runs,
//! device-level sweeps, the re-initialization study, the compensation
//! study, and the ablation matrix, emitting deterministic CSV metrics.
//!
//! Every CSV cell is reproducible from (config, seed); wall-clock time is
//! reported on stdout only so outputs stay byte-identical across runs.

use crate::config::{DatasetKind, ExperimentConfig, ExperimentKind, SweepMode};
use crate::crossbar::Crossbar;
use crate::data::{load_idx, mnist_paths, synthetic_toy, Dataset, ToyKind};
use crate::device::{self, DeviceState};
use crate::error::{Error, Result};
use crate::network::{train, NetworkModel, ReinitPolicy, RunReport, WeightBackend};
use crate::programmer::{
    compensated_pulse_time, delta_omega_from_delta_g, reinitialize, Rounding,
    MAX_PULSES_PER_UPDATE,
};
use crate::rng::StreamKey;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// Result of one harness invocation.
pub enum ExperimentOutcome {
    Train(Box<RunReport>),
    Sweep(Vec<SweepRecord>),
    ReinitStudy(ReinitStudyResult),
    CompensationStudy(Vec<CompStudyBin>),
    Ablation(Vec<AblationRow>),
}

#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub d2d_scale: f64,
    pub width_scale: f64,
    pub device: usize,
    pub cycle: usize,
    pub step: usize,
    pub phase: &'static str,
    pub omega: f64,
    pub conductance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct ReinitStudyResult {
    pub rows: usize,
    pub cols: usize,
    pub d2d_scale: f64,
    pub cycles: u32,
    pub final_std: f64,
    pub target_std: f64,
    pub pulses_total: u64,
    pub pulses_per_cell: f64,
    pub reads: u64,
    pub std_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CompStudyBin {
    pub decile: usize,
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub samples: usize,
    pub mean_abs_err_plain: f64,
    pub mean_abs_err_comp: f64,
    pub std_err_plain: f64,
    pub std_err_comp: f64,
    pub mean_pulses_plain: f64,
    pub mean_pulses_comp: f64,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub status: String,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub convergence_epoch: usize,
    pub pulses_total: u64,
    pub reads_total: u64,
    /// Training-time programming pulses over the first five epochs.
    pub pulses_first5: u64,
    /// Mean per-iteration touched-cell fraction over the first five epochs.
    pub touched_mean_first5: f64,
}

/// Load the dataset pair named by the config.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (mut train_ds, mut test_ds) = match cfg.dataset_kind {
        DatasetKind::Idx => {
            let dir = PathBuf::from(&cfg.dataset_dir);
            let (ti, tl, vi, vl) = mnist_paths(&dir);
            let pick = |explicit: &str, fallback: PathBuf| -> PathBuf {
                if explicit.is_empty() { fallback } else { PathBuf::from(explicit) }
            };
            let train = load_idx(
                &pick(&cfg.dataset_train_images, ti),
                &pick(&cfg.dataset_train_labels, tl),
            )?;
            let test = load_idx(
                &pick(&cfg.dataset_test_images, vi),
                &pick(&cfg.dataset_test_labels, vl),
            )?;
            (train, test)
        }
        DatasetKind::Blobs => (
            synthetic_toy(ToyKind::GaussianBlobs, cfg.dataset_synthetic_train, cfg.seed),
            synthetic_toy(ToyKind::GaussianBlobs, cfg.dataset_synthetic_test, cfg.seed + 1),
        ),
        DatasetKind::Parity => (
            synthetic_toy(ToyKind::Parity, cfg.dataset_synthetic_train, cfg.seed),
            synthetic_toy(ToyKind::Parity, cfg.dataset_synthetic_test, cfg.seed + 1),
        ),
    };
    train_ds.truncate(cfg.dataset_train_limit);
    test_ds.truncate(cfg.dataset_test_limit);
    train_ds.split = "train".into();
    test_ds.split = "test".into();
    Ok((train_ds, test_ds))
}

/// Build the model named by the config.
pub fn build_model(cfg: &ExperimentConfig) -> Result<NetworkModel> {
    NetworkModel::build(
        &cfg.model_spec()?,
        cfg.train_backend,
        cfg.device_mean,
        &cfg.variation(),
        cfg.pulses(),
        cfg.device_vr,
        cfg.seed,
        cfg.train_init,
    )
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), body)?;
    Ok(())
}

fn train_config(cfg: &ExperimentConfig) -> crate::network::TrainConfig {
    crate::network::TrainConfig {
        eta: cfg.train_eta,
        momentum: cfg.train_momentum,
        batch_size: cfg.train_batch_size,
        epochs: cfg.train_epochs,
        scheme: cfg.scheme(),
        seed: cfg.seed,
        init: cfg.train_init,
        reinit: cfg.train_reinit,
    }
}

/// Run one training experiment and emit report.csv, pulses.csv,
/// weights_final.csv, reinit.csv (when re-initialization ran), and
/// config.echo into the output directory.
pub fn run_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let (train_ds, test_ds) = load_dataset(cfg)?;
    let mut model = build_model(cfg)?;
    let report = train(&mut model, &train_ds, &test_ds, &train_config(cfg))?;
    write_train_outputs(cfg, out_dir, &report, &model)?;
    Ok(report)
}

fn write_train_outputs(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    report: &RunReport,
    model: &NetworkModel,
) -> Result<()> {
    let mut rep = String::from(
        "schema_version,epoch,test_accuracy,train_loss,pulses_pot_cum,pulses_dep_cum,reads_cum,touched_fraction\n",
    );
    for e in 0..report.accuracy.len() {
        let (pot, dep) = report.pulses_cumulative[e];
        writeln!(
            rep,
            "{SCHEMA_VERSION},{},{},{},{},{},{},{}",
            e,
            report.accuracy[e],
            report.train_loss[e],
            pot,
            dep,
            report.reads_cumulative[e],
            report.touched_fraction[e]
        )
        .expect("string write");
    }
    write_file(out_dir, "report.csv", &rep)?;

    let mut pul = String::from("schema_version,epoch,pulses_pot,pulses_dep,reads,touched_fraction\n");
    let mut prev = (0u64, 0u64, 0u64);
    for e in 0..report.accuracy.len() {
        let (pot, dep) = report.pulses_cumulative[e];
        let reads = report.reads_cumulative[e];
        writeln!(
            pul,
            "{SCHEMA_VERSION},{},{},{},{},{}",
            e,
            pot - prev.0,
            dep - prev.1,
            reads - prev.2,
            report.touched_fraction[e]
        )
        .expect("string write");
        prev = (pot, dep, reads);
    }
    write_file(out_dir, "pulses.csv", &pul)?;

    // final weight histogram: fixed bins of width 0.05 spanning [-2, 2],
    // outliers clamp into the end bins
    let mut hist = String::from("schema_version,layer,bin_lo,bin_hi,count\n");
    let nbins = 80usize;
    for (li, w) in model.effective_weights().iter().enumerate() {
        let mut counts = vec![0u64; nbins];
        for &v in w.iter() {
            let idx = (((v + 2.0) / 0.05).floor() as i64).clamp(0, nbins as i64 - 1) as usize;
            counts[idx] += 1;
        }
        for (bi, c) in counts.iter().enumerate() {
            let lo = -2.0 + bi as f64 * 0.05;
            writeln!(hist, "{SCHEMA_VERSION},{li},{lo},{},{c}", lo + 0.05).expect("string write");
        }
    }
    write_file(out_dir, "weights_final.csv", &hist)?;

    if !report.reinit.is_empty() {
        let mut ri = String::from("schema_version,layer,cycle,weight_std\n");
        for summary in &report.reinit {
            for (cycle, std) in summary.std_history.iter().enumerate() {
                writeln!(ri, "{SCHEMA_VERSION},{},{cycle},{std}", summary.layer).expect("string write");
            }
        }
        write_file(out_dir, "reinit.csv", &ri)?;
    }

    write_file(out_dir, "config.echo", &cfg.echo())?;
    Ok(())
}

/// Pulse-train trajectories over sampled devices (ramp or alternating),
/// for each configured d2d/width scale.
pub fn device_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SweepRecord>> {
    let mean = cfg.device_mean;
    let vr = cfg.device_vr;
    let mapping = crate::crossbar::MappingConstants::from_mean(&mean, vr);
    let mut records = Vec::new();
    for &d2d_scale in &cfg.sweep_d2d_scales {
        for &width_scale in &cfg.sweep_width_scales {
            let var = crate::device::VariationConfig {
                d2d_scale,
                ..cfg.variation()
            };
            let pulses = cfg.pulses().with_width_scale(width_scale);
            for dev in 0..cfg.sweep_devices {
                let stream = StreamKey::new(cfg.seed, 0, 0, dev as u32);
                let params = device::sample_device_params(&mean, &var, &stream, 0);
                let mut state = DeviceState::new(0.5);
                let mut event = 1u64;
                let mut step = 0usize;
                let mut push = |phase: &'static str, state: &DeviceState, step: usize, cycle: usize| {
                    let g = device::read_conductance(&params, state, vr);
                    records.push(SweepRecord {
                        d2d_scale,
                        width_scale,
                        device: dev,
                        cycle,
                        step,
                        phase,
                        omega: state.omega,
                        conductance: g,
                        weight: mapping.a * g - mapping.b,
                    });
                };
                push("init", &state, step, 0);
                for cycle in 0..cfg.sweep_cycles {
                    match cfg.sweep_mode {
                        SweepMode::UpDown => {
                            if cycle == 0 && cfg.sweep_mode == SweepMode::UpDown {
                                state = DeviceState::new(0.05);
                            }
                            for _ in 0..cfg.sweep_pulses {
                                state = device::apply_pulse(
                                    &state, &params, &mean, &pulses.potentiation, &var, &stream, event,
                                );
                                event += 1;
                                step += 1;
                                push("pot", &state, step, cycle);
                            }
                            for _ in 0..cfg.sweep_pulses {
                                state = device::apply_pulse(
                                    &state, &params, &mean, &pulses.depression, &var, &stream, event,
                                );
                                event += 1;
                                step += 1;
                                push("dep", &state, step, cycle);
                            }
                        }
                        SweepMode::Alternating => {
                            for _ in 0..cfg.sweep_pulses {
                                state = device::apply_pulse(
                                    &state, &params, &mean, &pulses.potentiation, &var, &stream, event,
                                );
                                event += 1;
                                step += 1;
                                push("pot", &state, step, cycle);
                                state = device::apply_pulse(
                                    &state, &params, &mean, &pulses.depression, &var, &stream, event,
                                );
                                event += 1;
                                step += 1;
                                push("dep", &state, step, cycle);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut csv = String::from(
        "schema_version,d2d_scale,width_scale,device,cycle,step,phase,omega,conductance,weight\n",
    );
    for r in &records {
        writeln!(
            csv,
            "{SCHEMA_VERSION},{},{},{},{},{},{},{},{},{}",
            r.d2d_scale, r.width_scale, r.device, r.cycle, r.step, r.phase, r.omega, r.conductance, r.weight
        )
        .expect("string write");
    }
    write_file(out_dir, "sweep.csv", &csv)?;
    write_file(out_dir, "config.echo", &cfg.echo())?;
    Ok(records)
}

/// Re-initialization convergence study on one crossbar.
pub fn reinit_study(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ReinitStudyResult> {
    let var = crate::device::VariationConfig {
        d2d_scale: cfg.reinit_study_d2d_scale,
        d2d_enabled: true,
        ..cfg.variation()
    };
    let mut cb = Crossbar::new(
        cfg.reinit_study_rows,
        cfg.reinit_study_cols,
        cfg.device_mean,
        var,
        cfg.pulses(),
        cfg.device_vr,
        cfg.seed,
        0,
    )?;
    let scheme = cfg.scheme();
    let rep = reinitialize(&mut cb, &scheme);
    let n_cells = (cfg.reinit_study_rows * cfg.reinit_study_cols) as f64;
    let result = ReinitStudyResult {
        rows: cfg.reinit_study_rows,
        cols: cfg.reinit_study_cols,
        d2d_scale: cfg.reinit_study_d2d_scale,
        cycles: rep.cycles,
        final_std: rep.final_std,
        target_std: rep.target_std,
        pulses_total: rep.program.total_pulses(),
        pulses_per_cell: rep.program.total_pulses() as f64 / n_cells,
        reads: rep.program.reads,
        std_history: rep.std_history.clone(),
    };
    let mut csv = String::from("schema_version,cycle,weight_std\n");
    for (cycle, std) in result.std_history.iter().enumerate() {
        writeln!(csv, "{SCHEMA_VERSION},{cycle},{std}").expect("string write");
    }
    write_file(out_dir, "reinit.csv", &csv)?;
    let mut summary = String::from(
        "schema_version,rows,cols,d2d_scale,cycles,final_std,target_std,pulses_total,pulses_per_cell,reads\n",
    );
    writeln!(
        summary,
        "{SCHEMA_VERSION},{},{},{},{},{},{},{},{},{}",
        result.rows,
        result.cols,
        result.d2d_scale,
        result.cycles,
        result.final_std,
        result.target_std,
        result.pulses_total,
        result.pulses_per_cell,
        result.reads
    )
    .expect("string write");
    write_file(out_dir, "reinit_summary.csv", &summary)?;
    write_file(out_dir, "config.echo", &cfg.echo())?;
    Ok(result)
}

/// Weight-update precision study: random (omega, delta_g) updates applied
/// as one open-loop pulse versus the compensated pulse train, binned by
/// omega. Nominal device, no P2P: the study isolates the discretization
/// error the compensation formula corrects.
pub fn compensation_study(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<CompStudyBin>> {
    let mean = cfg.device_mean;
    let pulses = cfg.pulses();
    let mapping = crate::crossbar::MappingConstants::from_mean(&mean, cfg.device_vr);
    let key = StreamKey::new(cfg.seed, u32::MAX - 2, 0, 0);
    let bins = cfg.comp_study_bins.max(1);
    let mut acc: Vec<(usize, f64, f64, f64, f64, f64, f64)> = vec![(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0); bins];
    for s in 0..cfg.comp_study_samples {
        let omega = key.uniform(s as u64, 0);
        let delta_g = 0.2 * key.uniform(s as u64, 1) - 0.1;
        let bin = ((omega * bins as f64) as usize).min(bins - 1);
        if delta_g == 0.0 {
            acc[bin].0 += 1;
            continue;
        }
        let pulse = if delta_g > 0.0 { pulses.potentiation } else { pulses.depression };
        let xi = mean.k * ((-mean.mu1 * pulse.voltage).exp() - (mean.mu2 * pulse.voltage).exp());
        // plain: exactly one open-loop pulse of the requested polarity
        let w_plain = device::advance_omega(omega, xi, pulse.width, pulse.voltage);
        let err_plain = (2.0 * (w_plain - omega) - delta_g).abs();
        // compensated: the boundary-aware pulse count
        let dw = delta_omega_from_delta_g(delta_g, &mapping, &mean);
        let solve = compensated_pulse_time(omega, dw, &pulses, &mean);
        let n_comp = solve.n.min(MAX_PULSES_PER_UPDATE);
        let mut w_comp = omega;
        for _ in 0..n_comp {
            w_comp = device::advance_omega(w_comp, solve.xi, pulse.width, pulse.voltage);
        }
        let err_comp = (2.0 * (w_comp - omega) - delta_g).abs();
        let a = &mut acc[bin];
        a.0 += 1;
        a.1 += err_plain;
        a.2 += err_comp;
        a.3 += err_plain * err_plain;
        a.4 += err_comp * err_comp;
        a.5 += 1.0; // plain always applies one pulse
        a.6 += n_comp as f64;
    }
    let mut out = Vec::new();
    let mut csv = String::from(
        "schema_version,decile,omega_lo,omega_hi,samples,mean_abs_err_plain,mean_abs_err_comp,std_err_plain,std_err_comp,mean_pulses_plain,mean_pulses_comp\n",
    );
    for (bi, a) in acc.iter().enumerate() {
        let n = a.0.max(1) as f64;
        let mean_p = a.1 / n;
        let mean_c = a.2 / n;
        let std_p = (a.3 / n - mean_p * mean_p).max(0.0).sqrt();
        let std_c = (a.4 / n - mean_c * mean_c).max(0.0).sqrt();
        let bin = CompStudyBin {
            decile: bi,
            omega_lo: bi as f64 / bins as f64,
            omega_hi: (bi + 1) as f64 / bins as f64,
            samples: a.0,
            mean_abs_err_plain: mean_p,
            mean_abs_err_comp: mean_c,
            std_err_plain: std_p,
            std_err_comp: std_c,
            mean_pulses_plain: a.5 / n,
            mean_pulses_comp: a.6 / n,
        };
        writeln!(
            csv,
            "{SCHEMA_VERSION},{},{},{},{},{},{},{},{},{},{}",
            bin.decile,
            bin.omega_lo,
            bin.omega_hi,
            bin.samples,
            bin.mean_abs_err_plain,
            bin.mean_abs_err_comp,
            bin.std_err_plain,
            bin.std_err_comp,
            bin.mean_pulses_plain,
            bin.mean_pulses_comp
        )
        .expect("string write");
        out.push(bin);
    }
    write_file(out_dir, "compensation.csv", &csv)?;
    write_file(out_dir, "config.echo", &cfg.echo())?;
    Ok(out)
}

/// Derive the configuration of one ablation row from the base config.
pub fn ablation_row_config(base: &ExperimentConfig, row: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.experiment = ExperimentKind::Train;
    // non-SSM rows train with plain SGD (no momentum filter)
    cfg.train_momentum = 0.0;
    cfg.scheme_compensation = false;
    match row {
        "vanilla" => {
            cfg.train_backend = WeightBackend::Digital;
            cfg.variation_d2d = false;
            cfg.variation_p2p = false;
        }
        "ideal" => {
            cfg.variation_d2d = false;
            cfg.variation_p2p = false;
            cfg.scheme_loop = crate::programmer::LoopMode::Closed;
            cfg.scheme_rounding = Rounding::None;
        }
        "p2p" => {
            cfg.variation_d2d = false;
            cfg.variation_p2p = true;
            cfg.scheme_loop = crate::programmer::LoopMode::Closed;
            cfg.scheme_rounding = Rounding::None;
        }
        "d2d" => {
            cfg.variation_d2d = true;
            cfg.variation_p2p = false;
            cfg.scheme_loop = crate::programmer::LoopMode::Closed;
            cfg.scheme_rounding = Rounding::None;
            cfg.train_reinit = ReinitPolicy::Off;
        }
        "open-loop" => {
            cfg.variation_d2d = false;
            cfg.variation_p2p = false;
            cfg.scheme_loop = crate::programmer::LoopMode::Open;
            cfg.scheme_rounding = Rounding::None;
        }
        "rounding" => {
            cfg.variation_d2d = false;
            cfg.variation_p2p = false;
            cfg.scheme_loop = crate::programmer::LoopMode::Closed;
            cfg.scheme_rounding = Rounding::Floor;
        }
        "non-ideal" => {
            cfg.variation_d2d = true;
            cfg.variation_p2p = true;
            cfg.scheme_loop = crate::programmer::LoopMode::Open;
            cfg.scheme_rounding = Rounding::Floor;
            cfg.scheme_n = base.ablate_baseline_n;
            cfg.train_reinit = ReinitPolicy::Off;
        }
        "ssm" => {
            cfg.variation_d2d = true;
            cfg.variation_p2p = true;
            cfg.scheme_loop = crate::programmer::LoopMode::Open;
            cfg.scheme_rounding = Rounding::Stochastic;
            cfg.train_momentum = base.train_momentum;
        }
        "ssm-comp" => {
            cfg.variation_d2d = true;
            cfg.variation_p2p = true;
            cfg.scheme_loop = crate::programmer::LoopMode::Open;
            cfg.scheme_rounding = Rounding::Stochastic;
            cfg.train_momentum = base.train_momentum;
            cfg.scheme_compensation = true;
        }
        other => {
            return Err(Error::Config { line: 0, message: format!("unknown ablation row `{other}`") })
        }
    }
    Ok(cfg)
}

/// Execute the configured ablation rows, writing per-row outputs under
/// `out/<row>/` and a summary `ablation.csv`. Per-row failures are recorded
/// and the matrix continues.
pub fn ablation_matrix(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<AblationRow>> {
    let mut rows = cfg.ablate_rows.clone();
    if cfg.ablate_include_ssm {
        rows.push("ssm".into());
        rows.push("ssm-comp".into());
    }
    let mut summaries = Vec::new();
    for row in &rows {
        let summary = match ablation_row_config(cfg, row)
            .and_then(|row_cfg| run_train(&row_cfg, &out_dir.join(row)))
        {
            Ok(report) => summarize_row(row, &report),
            Err(e) => AblationRow {
                name: row.clone(),
                status: format!("error: {e}"),
                final_accuracy: f64::NAN,
                best_accuracy: f64::NAN,
                convergence_epoch: 0,
                pulses_total: 0,
                reads_total: 0,
                pulses_first5: 0,
                touched_mean_first5: 0.0,
            },
        };
        summaries.push(summary);
    }
    let mut csv = String::from(
        "schema_version,row,status,final_accuracy,best_accuracy,convergence_epoch,pulses_total,reads_total,pulses_first5,touched_mean_first5,pulses_first5_vs_non_ideal\n",
    );
    let baseline = summaries
        .iter()
        .find(|s| s.name == "non-ideal" && s.status == "ok")
        .map(|s| s.pulses_first5);
    for s in &summaries {
        let norm = match baseline {
            Some(b) if b > 0 => (s.pulses_first5 as f64 / b as f64).to_string(),
            _ => String::from("nan"),
        };
        writeln!(
            csv,
            "{SCHEMA_VERSION},{},{},{},{},{},{},{},{},{},{}",
            s.name,
            s.status,
            s.final_accuracy,
            s.best_accuracy,
            s.convergence_epoch,
            s.pulses_total,
            s.reads_total,
            s.pulses_first5,
            s.touched_mean_first5,
            norm
        )
        .expect("string write");
    }
    write_file(out_dir, "ablation.csv", &csv)?;
    write_file(out_dir, "config.echo", &cfg.echo())?;
    Ok(summaries)
}

fn summarize_row(name: &str, report: &RunReport) -> AblationRow {
    let final_accuracy = *report.accuracy.last().unwrap_or(&f64::NAN);
    let best_accuracy = report.accuracy.iter().cloned().fold(f64::NAN, f64::max);
    let five = report.pulses_cumulative.len().min(5);
    let pulses_first5 = if five > 0 {
        let (p, d) = report.pulses_cumulative[five - 1];
        p + d
    } else {
        0
    };
    let touched_mean_first5 = if five > 0 {
        report.touched_fraction[..five].iter().sum::<f64>() / five as f64
    } else {
        0.0
    };
    let (pot, dep) = report.pulses_cumulative.last().copied().unwrap_or((0, 0));
    AblationRow {
        name: name.to_string(),
        status: "ok".into(),
        final_accuracy,
        best_accuracy,
        convergence_epoch: report.convergence_epoch,
        pulses_total: pot + dep,
        reads_total: report.reads_cumulative.last().copied().unwrap_or(0),
        pulses_first5,
        touched_mean_first5,
    }
}

/// Dispatch one experiment. Every run writes `config.echo` plus its
/// experiment-specific CSV files into the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let out_dir = PathBuf::from(&cfg.out);
    match cfg.experiment {
        ExperimentKind::Train => Ok(ExperimentOutcome::Train(Box::new(run_train(cfg, &out_dir)?))),
        ExperimentKind::DeviceSweep => Ok(ExperimentOutcome::Sweep(device_sweep(cfg, &out_dir)?)),
        ExperimentKind::ReinitStudy => Ok(ExperimentOutcome::ReinitStudy(reinit_study(cfg, &out_dir)?)),
        ExperimentKind::CompensationStudy => Ok(ExperimentOutcome::CompensationStudy(
            compensation_study(cfg, &out_dir)?,
        )),
        ExperimentKind::AblationMatrix => Ok(ExperimentOutcome::Ablation(ablation_matrix(cfg, &out_dir)?)),
    }
}
