//! Experiment configuration: a flat `key = value` text format with dotted
//! section keys. Every field has a default; unknown keys are hard errors so
//! typos never pass silently. `#` starts a comment.

use crate::device::{DeviceParams, PulsePair, VariationConfig};
use crate::error::{Error, Result};
use crate::network::{InitPolicy, LayerSpec, ModelSpec, ReinitPolicy, WeightBackend};
use crate::programmer::{LoopMode, ReinitMode, Rounding, SchemeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Train,
    DeviceSweep,
    ReinitStudy,
    CompensationStudy,
    AblationMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Idx,
    Blobs,
    Parity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// A potentiation ramp followed by a depression ramp.
    UpDown,
    /// Alternating single potentiation/depression pulses.
    Alternating,
}

/// Full description of one harness invocation.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub out: String,

    pub model_arch: String,
    pub model_input: String,

    pub dataset_kind: DatasetKind,
    pub dataset_dir: String,
    pub dataset_train_images: String,
    pub dataset_train_labels: String,
    pub dataset_test_images: String,
    pub dataset_test_labels: String,
    pub dataset_train_limit: usize,
    pub dataset_test_limit: usize,
    pub dataset_synthetic_train: usize,
    pub dataset_synthetic_test: usize,

    pub train_eta: f64,
    pub train_momentum: f64,
    pub train_batch_size: usize,
    pub train_epochs: usize,
    pub train_backend: WeightBackend,
    pub train_init: InitPolicy,
    pub train_reinit: ReinitPolicy,

    pub scheme_loop: LoopMode,
    pub scheme_rounding: Rounding,
    pub scheme_n: f64,
    pub scheme_compensation: bool,
    pub scheme_band_low: f64,
    pub scheme_band_high: f64,
    pub scheme_reinit_mode: ReinitMode,
    pub scheme_reinit_epsilon: f64,
    pub scheme_reinit_target_std: f64,
    pub scheme_reinit_max_cycles: u32,

    pub variation_d2d: bool,
    pub variation_p2p: bool,
    pub variation_d2d_scale: f64,
    pub variation_p2p_scale: f64,
    pub variation_p2p_ratio: f64,
    pub variation_read_noise: f64,
    pub variation_std: [f64; 7],

    pub device_mean: DeviceParams,
    pub device_vr: f64,

    pub pulse_v_pot: f64,
    pub pulse_t_pot: f64,
    pub pulse_v_dep: f64,
    pub pulse_t_dep: f64,
    pub pulse_width_scale: f64,

    pub sweep_mode: SweepMode,
    pub sweep_devices: usize,
    pub sweep_pulses: usize,
    pub sweep_cycles: usize,
    pub sweep_d2d_scales: Vec<f64>,
    pub sweep_width_scales: Vec<f64>,

    pub reinit_study_rows: usize,
    pub reinit_study_cols: usize,
    pub reinit_study_d2d_scale: f64,

    pub comp_study_samples: usize,
    pub comp_study_bins: usize,

    pub ablate_rows: Vec<String>,
    pub ablate_include_ssm: bool,
    pub ablate_baseline_n: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mean = DeviceParams::nominal();
        let var = VariationConfig::default();
        ExperimentConfig {
            experiment: ExperimentKind::Train,
            seed: 0,
            out: "out".into(),
            model_arch: "784-256-10".into(),
            model_input: String::new(),
            dataset_kind: DatasetKind::Idx,
            dataset_dir: "data".into(),
            dataset_train_images: String::new(),
            dataset_train_labels: String::new(),
            dataset_test_images: String::new(),
            dataset_test_labels: String::new(),
            dataset_train_limit: 0,
            dataset_test_limit: 0,
            dataset_synthetic_train: 2000,
            dataset_synthetic_test: 500,
            train_eta: 1.0,
            train_momentum: 0.9,
            train_batch_size: 100,
            train_epochs: 25,
            train_backend: WeightBackend::Analog,
            train_init: InitPolicy::Auto,
            train_reinit: ReinitPolicy::Auto,
            scheme_loop: LoopMode::Open,
            scheme_rounding: Rounding::Stochastic,
            scheme_n: 2.0,
            scheme_compensation: false,
            scheme_band_low: 0.1,
            scheme_band_high: 0.9,
            scheme_reinit_mode: ReinitMode::Uniform,
            scheme_reinit_epsilon: 0.1,
            scheme_reinit_target_std: 0.0,
            scheme_reinit_max_cycles: 40,
            variation_d2d: true,
            variation_p2p: true,
            variation_d2d_scale: 1.0,
            variation_p2p_scale: 1.0,
            variation_p2p_ratio: 0.1,
            variation_read_noise: 0.0,
            variation_std: var.d2d_fraction,
            device_mean: mean,
            device_vr: 0.05,
            pulse_v_pot: -1.1,
            pulse_t_pot: 3e-6,
            pulse_v_dep: 1.4,
            pulse_t_dep: 30e-6,
            pulse_width_scale: 1.0,
            sweep_mode: SweepMode::UpDown,
            sweep_devices: 10,
            sweep_pulses: 64,
            sweep_cycles: 1,
            sweep_d2d_scales: vec![1.0],
            sweep_width_scales: vec![1.0],
            reinit_study_rows: 784,
            reinit_study_cols: 256,
            reinit_study_d2d_scale: 2.0,
            comp_study_samples: 1000,
            comp_study_bins: 10,
            ablate_rows: vec![
                "vanilla".into(),
                "ideal".into(),
                "p2p".into(),
                "d2d".into(),
                "open-loop".into(),
                "rounding".into(),
                "non-ideal".into(),
            ],
            ablate_include_ssm: false,
            ablate_baseline_n: 64.0,
        }
    }
}

fn parse_list(v: &str, line: usize) -> Result<Vec<f64>> {
    v.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config { line, message: format!("bad number `{t}`: {e}") })
        })
        .collect()
}

impl ExperimentConfig {
    /// Parse a config file body, applying keys on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{stripped}`"),
            })?;
            cfg.set(key.trim(), value.trim(), line)?;
        }
        Ok(cfg)
    }

    /// Apply one `key=value` override (config line or CLI `--set`).
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let bad = |message: String| Error::Config { line, message };
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|e| bad(format!("bad number `{v}`: {e}")))
        };
        let int = |v: &str| -> Result<u64> {
            v.parse::<u64>().map_err(|e| bad(format!("bad integer `{v}`: {e}")))
        };
        let boolean = |v: &str| -> Result<bool> {
            match v {
                "true" | "on" | "1" | "yes" => Ok(true),
                "false" | "off" | "0" | "no" => Ok(false),
                _ => Err(bad(format!("bad boolean `{v}`"))),
            }
        };
        match key {
            "experiment" => {
                self.experiment = match value {
                    "train" => ExperimentKind::Train,
                    "device-sweep" => ExperimentKind::DeviceSweep,
                    "reinit-study" => ExperimentKind::ReinitStudy,
                    "compensation-study" => ExperimentKind::CompensationStudy,
                    "ablation-matrix" => ExperimentKind::AblationMatrix,
                    _ => return Err(bad(format!("unknown experiment `{value}`"))),
                }
            }
            "seed" => self.seed = int(value)?,
            "out" => self.out = value.to_string(),
            "model.arch" => self.model_arch = value.to_string(),
            "model.input" => self.model_input = value.to_string(),
            "dataset.kind" => {
                self.dataset_kind = match value {
                    "idx" => DatasetKind::Idx,
                    "blobs" => DatasetKind::Blobs,
                    "parity" => DatasetKind::Parity,
                    _ => return Err(bad(format!("unknown dataset kind `{value}`"))),
                }
            }
            "dataset.dir" => self.dataset_dir = value.to_string(),
            "dataset.train_images" => self.dataset_train_images = value.to_string(),
            "dataset.train_labels" => self.dataset_train_labels = value.to_string(),
            "dataset.test_images" => self.dataset_test_images = value.to_string(),
            "dataset.test_labels" => self.dataset_test_labels = value.to_string(),
            "dataset.train_limit" => self.dataset_train_limit = int(value)? as usize,
            "dataset.test_limit" => self.dataset_test_limit = int(value)? as usize,
            "dataset.synthetic_train" => self.dataset_synthetic_train = int(value)? as usize,
            "dataset.synthetic_test" => self.dataset_synthetic_test = int(value)? as usize,
            "train.eta" => self.train_eta = num(value)?,
            "train.momentum" => self.train_momentum = num(value)?,
            "train.batch_size" => self.train_batch_size = int(value)?.max(1) as usize,
            "train.epochs" => self.train_epochs = int(value)? as usize,
            "train.backend" => {
                self.train_backend = match value {
                    "analog" => WeightBackend::Analog,
                    "digital" => WeightBackend::Digital,
                    _ => return Err(bad(format!("unknown backend `{value}`"))),
                }
            }
            "train.init" => {
                self.train_init = match value {
                    "auto" => InitPolicy::Auto,
                    "software" => InitPolicy::Software,
                    "hardware" => InitPolicy::Hardware,
                    _ => return Err(bad(format!("unknown init policy `{value}`"))),
                }
            }
            "train.reinit" => {
                self.train_reinit = match value {
                    "auto" => ReinitPolicy::Auto,
                    "on" => ReinitPolicy::On,
                    "off" => ReinitPolicy::Off,
                    _ => return Err(bad(format!("unknown reinit policy `{value}`"))),
                }
            }
            "scheme.loop" => {
                self.scheme_loop = match value {
                    "open" => LoopMode::Open,
                    "closed" => LoopMode::Closed,
                    _ => return Err(bad(format!("unknown loop mode `{value}`"))),
                }
            }
            "scheme.rounding" => {
                self.scheme_rounding = match value {
                    "none" => Rounding::None,
                    "floor" => Rounding::Floor,
                    "stochastic" => Rounding::Stochastic,
                    _ => return Err(bad(format!("unknown rounding `{value}`"))),
                }
            }
            "scheme.n" => self.scheme_n = num(value)?,
            "scheme.compensation" => self.scheme_compensation = boolean(value)?,
            "scheme.band_low" => self.scheme_band_low = num(value)?,
            "scheme.band_high" => self.scheme_band_high = num(value)?,
            "scheme.reinit_mode" => {
                self.scheme_reinit_mode = match value {
                    "uniform" => ReinitMode::Uniform,
                    "gaussian" => ReinitMode::Gaussian,
                    _ => return Err(bad(format!("unknown reinit mode `{value}`"))),
                }
            }
            "scheme.reinit_epsilon" => self.scheme_reinit_epsilon = num(value)?,
            "scheme.reinit_target_std" => self.scheme_reinit_target_std = num(value)?,
            "scheme.reinit_max_cycles" => self.scheme_reinit_max_cycles = int(value)? as u32,
            "variation.d2d" => self.variation_d2d = boolean(value)?,
            "variation.p2p" => self.variation_p2p = boolean(value)?,
            "variation.d2d_scale" => self.variation_d2d_scale = num(value)?,
            "variation.p2p_scale" => self.variation_p2p_scale = num(value)?,
            "variation.p2p_ratio" => self.variation_p2p_ratio = num(value)?,
            "variation.read_noise" => self.variation_read_noise = num(value)?,
            "variation.std_k" => self.variation_std[0] = num(value)?,
            "variation.std_mu1" => self.variation_std[1] = num(value)?,
            "variation.std_mu2" => self.variation_std[2] = num(value)?,
            "variation.std_gamma" => self.variation_std[3] = num(value)?,
            "variation.std_delta" => self.variation_std[4] = num(value)?,
            "variation.std_alpha" => self.variation_std[5] = num(value)?,
            "variation.std_beta" => self.variation_std[6] = num(value)?,
            "device.k" => self.device_mean.k = num(value)?,
            "device.mu1" => self.device_mean.mu1 = num(value)?,
            "device.mu2" => self.device_mean.mu2 = num(value)?,
            "device.gamma" => self.device_mean.gamma = num(value)?,
            "device.delta" => self.device_mean.delta = num(value)?,
            "device.alpha" => self.device_mean.alpha = num(value)?,
            "device.beta" => self.device_mean.beta = num(value)?,
            "device.vr" => self.device_vr = num(value)?,
            "pulse.v_pot" => self.pulse_v_pot = num(value)?,
            "pulse.t_pot" => self.pulse_t_pot = num(value)?,
            "pulse.v_dep" => self.pulse_v_dep = num(value)?,
            "pulse.t_dep" => self.pulse_t_dep = num(value)?,
            "pulse.width_scale" => self.pulse_width_scale = num(value)?,
            "sweep.mode" => {
                self.sweep_mode = match value {
                    "updown" => SweepMode::UpDown,
                    "alternating" => SweepMode::Alternating,
                    _ => return Err(bad(format!("unknown sweep mode `{value}`"))),
                }
            }
            "sweep.devices" => self.sweep_devices = int(value)? as usize,
            "sweep.pulses" => self.sweep_pulses = int(value)? as usize,
            "sweep.cycles" => self.sweep_cycles = int(value)? as usize,
            "sweep.d2d_scales" => self.sweep_d2d_scales = parse_list(value, line)?,
            "sweep.width_scales" => self.sweep_width_scales = parse_list(value, line)?,
            "reinit_study.rows" => self.reinit_study_rows = int(value)? as usize,
            "reinit_study.cols" => self.reinit_study_cols = int(value)? as usize,
            "reinit_study.d2d_scale" => self.reinit_study_d2d_scale = num(value)?,
            "comp_study.samples" => self.comp_study_samples = int(value)? as usize,
            "comp_study.bins" => self.comp_study_bins = int(value)? as usize,
            "ablate.rows" => {
                self.ablate_rows = value.split(',').map(|s| s.trim().to_string()).collect()
            }
            "ablate.include_ssm" => self.ablate_include_ssm = boolean(value)?,
            "ablate.baseline_n" => self.ablate_baseline_n = num(value)?,
            _ => return Err(Error::UnknownKey { key: key.to_string(), line }),
        }
        Ok(())
    }

    /// Canonical echo of the effective configuration; parsing it reproduces
    /// this config exactly.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut s, "experiment", match self.experiment {
            ExperimentKind::Train => "train",
            ExperimentKind::DeviceSweep => "device-sweep",
            ExperimentKind::ReinitStudy => "reinit-study",
            ExperimentKind::CompensationStudy => "compensation-study",
            ExperimentKind::AblationMatrix => "ablation-matrix",
        }
        .into());
        kv(&mut s, "seed", self.seed.to_string());
        kv(&mut s, "out", self.out.clone());
        kv(&mut s, "model.arch", self.model_arch.clone());
        kv(&mut s, "model.input", self.model_input.clone());
        kv(&mut s, "dataset.kind", match self.dataset_kind {
            DatasetKind::Idx => "idx",
            DatasetKind::Blobs => "blobs",
            DatasetKind::Parity => "parity",
        }
        .into());
        kv(&mut s, "dataset.dir", self.dataset_dir.clone());
        kv(&mut s, "dataset.train_images", self.dataset_train_images.clone());
        kv(&mut s, "dataset.train_labels", self.dataset_train_labels.clone());
        kv(&mut s, "dataset.test_images", self.dataset_test_images.clone());
        kv(&mut s, "dataset.test_labels", self.dataset_test_labels.clone());
        kv(&mut s, "dataset.train_limit", self.dataset_train_limit.to_string());
        kv(&mut s, "dataset.test_limit", self.dataset_test_limit.to_string());
        kv(&mut s, "dataset.synthetic_train", self.dataset_synthetic_train.to_string());
        kv(&mut s, "dataset.synthetic_test", self.dataset_synthetic_test.to_string());
        kv(&mut s, "train.eta", self.train_eta.to_string());
        kv(&mut s, "train.momentum", self.train_momentum.to_string());
        kv(&mut s, "train.batch_size", self.train_batch_size.to_string());
        kv(&mut s, "train.epochs", self.train_epochs.to_string());
        kv(&mut s, "train.backend", match self.train_backend {
            WeightBackend::Analog => "analog",
            WeightBackend::Digital => "digital",
        }
        .into());
        kv(&mut s, "train.init", match self.train_init {
            InitPolicy::Auto => "auto",
            InitPolicy::Software => "software",
            InitPolicy::Hardware => "hardware",
        }
        .into());
        kv(&mut s, "train.reinit", match self.train_reinit {
            ReinitPolicy::Auto => "auto",
            ReinitPolicy::On => "on",
            ReinitPolicy::Off => "off",
        }
        .into());
        kv(&mut s, "scheme.loop", match self.scheme_loop {
            LoopMode::Open => "open",
            LoopMode::Closed => "closed",
        }
        .into());
        kv(&mut s, "scheme.rounding", match self.scheme_rounding {
            Rounding::None => "none",
            Rounding::Floor => "floor",
            Rounding::Stochastic => "stochastic",
        }
        .into());
        kv(&mut s, "scheme.n", self.scheme_n.to_string());
        kv(&mut s, "scheme.compensation", self.scheme_compensation.to_string());
        kv(&mut s, "scheme.band_low", self.scheme_band_low.to_string());
        kv(&mut s, "scheme.band_high", self.scheme_band_high.to_string());
        kv(&mut s, "scheme.reinit_mode", match self.scheme_reinit_mode {
            ReinitMode::Uniform => "uniform",
            ReinitMode::Gaussian => "gaussian",
        }
        .into());
        kv(&mut s, "scheme.reinit_epsilon", self.scheme_reinit_epsilon.to_string());
        kv(&mut s, "scheme.reinit_target_std", self.scheme_reinit_target_std.to_string());
        kv(&mut s, "scheme.reinit_max_cycles", self.scheme_reinit_max_cycles.to_string());
        kv(&mut s, "variation.d2d", self.variation_d2d.to_string());
        kv(&mut s, "variation.p2p", self.variation_p2p.to_string());
        kv(&mut s, "variation.d2d_scale", self.variation_d2d_scale.to_string());
        kv(&mut s, "variation.p2p_scale", self.variation_p2p_scale.to_string());
        kv(&mut s, "variation.p2p_ratio", self.variation_p2p_ratio.to_string());
        kv(&mut s, "variation.read_noise", self.variation_read_noise.to_string());
        let names = ["k", "mu1", "mu2", "gamma", "delta", "alpha", "beta"];
        for (i, n) in names.iter().enumerate() {
            kv(&mut s, &format!("variation.std_{n}"), self.variation_std[i].to_string());
        }
        for (i, n) in names.iter().enumerate() {
            kv(&mut s, &format!("device.{n}"), self.device_mean.field(i).to_string());
        }
        kv(&mut s, "device.vr", self.device_vr.to_string());
        kv(&mut s, "pulse.v_pot", self.pulse_v_pot.to_string());
        kv(&mut s, "pulse.t_pot", self.pulse_t_pot.to_string());
        kv(&mut s, "pulse.v_dep", self.pulse_v_dep.to_string());
        kv(&mut s, "pulse.t_dep", self.pulse_t_dep.to_string());
        kv(&mut s, "pulse.width_scale", self.pulse_width_scale.to_string());
        kv(&mut s, "sweep.mode", match self.sweep_mode {
            SweepMode::UpDown => "updown",
            SweepMode::Alternating => "alternating",
        }
        .into());
        kv(&mut s, "sweep.devices", self.sweep_devices.to_string());
        kv(&mut s, "sweep.pulses", self.sweep_pulses.to_string());
        kv(&mut s, "sweep.cycles", self.sweep_cycles.to_string());
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        kv(&mut s, "sweep.d2d_scales", list(&self.sweep_d2d_scales));
        kv(&mut s, "sweep.width_scales", list(&self.sweep_width_scales));
        kv(&mut s, "reinit_study.rows", self.reinit_study_rows.to_string());
        kv(&mut s, "reinit_study.cols", self.reinit_study_cols.to_string());
        kv(&mut s, "reinit_study.d2d_scale", self.reinit_study_d2d_scale.to_string());
        kv(&mut s, "comp_study.samples", self.comp_study_samples.to_string());
        kv(&mut s, "comp_study.bins", self.comp_study_bins.to_string());
        kv(&mut s, "ablate.rows", self.ablate_rows.join(","));
        kv(&mut s, "ablate.include_ssm", self.ablate_include_ssm.to_string());
        kv(&mut s, "ablate.baseline_n", self.ablate_baseline_n.to_string());
        s
    }

    /// The variation model implied by this config.
    pub fn variation(&self) -> VariationConfig {
        VariationConfig {
            d2d_fraction: self.variation_std,
            p2p_ratio: self.variation_p2p_ratio,
            d2d_scale: self.variation_d2d_scale,
            p2p_scale: self.variation_p2p_scale,
            d2d_enabled: self.variation_d2d,
            p2p_enabled: self.variation_p2p,
            read_noise_std: self.variation_read_noise,
        }
    }

    pub fn pulses(&self) -> PulsePair {
        PulsePair {
            potentiation: crate::device::PulseSpec { voltage: self.pulse_v_pot, width: self.pulse_t_pot },
            depression: crate::device::PulseSpec { voltage: self.pulse_v_dep, width: self.pulse_t_dep },
        }
        .with_width_scale(self.pulse_width_scale)
    }

    pub fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            loop_mode: self.scheme_loop,
            rounding: self.scheme_rounding,
            n_coefficient: self.scheme_n,
            compensation: self.scheme_compensation,
            compensation_band: (self.scheme_band_low, self.scheme_band_high),
            reinit_mode: self.scheme_reinit_mode,
            reinit_epsilon: self.scheme_reinit_epsilon,
            reinit_target_std: self.scheme_reinit_target_std,
            reinit_max_cycles: self.scheme_reinit_max_cycles,
        }
    }

    /// Parse `model.arch` (and `model.input` when conv layers appear).
    ///
    /// Grammar: either a dash-separated dense stack `784-256-10`, or
    /// comma-separated segments `conv:OC:KHxKW:sS`, `pool:W`, `dense:OUT`
    /// with `model.input = CxHxW`.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let arch = self.model_arch.trim();
        let arch = arch.strip_prefix("mlp:").unwrap_or(arch);
        let bad = |message: String| Error::Config { line: 0, message };
        if !arch.contains(':') {
            let sizes: Vec<usize> = arch
                .split('-')
                .map(|t| t.trim().parse::<usize>().map_err(|e| bad(format!("bad arch `{arch}`: {e}"))))
                .collect::<Result<_>>()?;
            if sizes.len() < 2 {
                return Err(bad(format!("arch `{arch}` needs at least two sizes")));
            }
            return Ok(ModelSpec::mlp(&sizes));
        }
        // segmented grammar
        let input = self.model_input.trim();
        let dims: Vec<usize> = input
            .split('x')
            .map(|t| t.trim().parse::<usize>().map_err(|e| bad(format!("bad model.input `{input}`: {e}"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(bad("model.input must be CxHxW for conv architectures".into()));
        }
        let mut shape = (dims[0], dims[1], dims[2]);
        let mut layers = Vec::new();
        for seg in arch.split(',') {
            let seg = seg.trim();
            let parts: Vec<&str> = seg.split(':').collect();
            match parts[0] {
                "conv" => {
                    if parts.len() < 3 {
                        return Err(bad(format!("conv segment `{seg}` needs OC and KHxKW")));
                    }
                    let oc: usize =
                        parts[1].parse().map_err(|e| bad(format!("bad conv channels `{seg}`: {e}")))?;
                    let kdims: Vec<usize> = parts[2]
                        .split('x')
                        .map(|t| t.parse::<usize>().map_err(|e| bad(format!("bad kernel `{seg}`: {e}"))))
                        .collect::<Result<_>>()?;
                    if kdims.len() != 2 {
                        return Err(bad(format!("kernel in `{seg}` must be KHxKW")));
                    }
                    let stride = if parts.len() > 3 {
                        parts[3]
                            .strip_prefix('s')
                            .unwrap_or(parts[3])
                            .parse::<usize>()
                            .map_err(|e| bad(format!("bad stride `{seg}`: {e}")))?
                    } else {
                        1
                    };
                    layers.push(LayerSpec::Conv {
                        in_channels: shape.0,
                        out_channels: oc,
                        kernel: (kdims[0], kdims[1]),
                        stride,
                    });
                    let oh = (shape.1 - kdims[0]) / stride + 1;
                    let ow = (shape.2 - kdims[1]) / stride + 1;
                    shape = (oc, oh, ow);
                }
                "pool" => {
                    let w: usize =
                        parts[1].parse().map_err(|e| bad(format!("bad pool `{seg}`: {e}")))?;
                    layers.push(LayerSpec::MaxPool { window: w });
                    shape = (shape.0, shape.1 / w, shape.2 / w);
                }
                "dense" => {
                    let out: usize =
                        parts[1].parse().map_err(|e| bad(format!("bad dense `{seg}`: {e}")))?;
                    let input = shape.0 * shape.1 * shape.2;
                    layers.push(LayerSpec::Dense { input, output: out });
                    shape = (1, 1, out);
                }
                _ => return Err(bad(format!("unknown layer segment `{seg}`"))),
            }
        }
        Ok(ModelSpec { input_shape: (dims[0], dims[1], dims[2]), layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_echo() {
        let cfg = ExperimentConfig::default();
        let echoed = cfg.echo();
        let reparsed = ExperimentConfig::parse(&echoed).unwrap();
        assert_eq!(reparsed.echo(), echoed);
    }

    #[test]
    fn unknown_key_is_hard_error() {
        let err = ExperimentConfig::parse("scheme.looop = open\n").unwrap_err();
        assert!(matches!(err, Error::UnknownKey { .. }), "{err}");
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = ExperimentConfig::parse(
            "# a comment\nscheme.loop = closed # trailing\ntrain.eta = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.scheme_loop, LoopMode::Closed);
        assert_eq!(cfg.train_eta, 0.5);
    }

    #[test]
    fn bad_value_reports_line() {
        let err = ExperimentConfig::parse("\n\ntrain.eta = fast\n").unwrap_err();
        match err {
            Error::Config { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn mlp_arch_parses() {
        let mut cfg = ExperimentConfig::default();
        cfg.model_arch = "784-256-10".into();
        let spec = cfg.model_spec().unwrap();
        assert_eq!(spec.layers.len(), 2);
        assert_eq!(spec.input_shape, (1, 1, 784));
    }

    #[test]
    fn lenet_style_arch_parses() {
        let mut cfg = ExperimentConfig::default();
        cfg.model_arch = "conv:6:5x5:s1,pool:2,conv:16:5x5:s1,pool:2,dense:120,dense:84,dense:10".into();
        cfg.model_input = "1x28x28".into();
        let spec = cfg.model_spec().unwrap();
        assert_eq!(spec.layers.len(), 7);
        match spec.layers[4] {
            LayerSpec::Dense { input, output } => {
                assert_eq!(input, 16 * 4 * 4);
                assert_eq!(output, 120);
            }
            _ => panic!("expected dense"),
        }
    }
}
