//! Acceptance suite: end-to-end checks of the simulator against its
//! specification targets, one printed PASS/FAIL line per criterion.
//!
//! The MNIST IDX files are looked up under `$MEMSIM_DATA_DIR`, defaulting
//! to `<workspace>/data`. Criteria 3-6 train real networks on the full
//! dataset; the suite takes tens of minutes on one core.

use memsim::config::{DatasetKind, ExperimentConfig};
use memsim::crossbar::MappingConstants;
use memsim::device::{DeviceParams, DeviceState, PulsePair, VariationConfig};
use memsim::harness::{
    ablation_matrix, ablation_row_config, compensation_study, device_sweep, reinit_study, run_train,
};
use memsim::network::{
    InitPolicy, ModelSpec, NetworkModel, WeightBackend,
};
use memsim::rng::StreamKey;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

fn data_dir() -> String {
    std::env::var("MEMSIM_DATA_DIR").unwrap_or_else(|_| {
        let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
        manifest
            .parent()
            .and_then(|p| p.parent())
            .map(|p| p.join("data"))
            .unwrap_or_else(|| PathBuf::from("data"))
            .to_string_lossy()
            .into_owned()
    })
}

fn out_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join("memsim-acceptance").join(tag);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).expect("create acceptance out dir");
    d
}

struct Gate {
    lines: Vec<(bool, String)>,
}

impl Gate {
    fn new() -> Self {
        Gate { lines: Vec::new() }
    }

    fn check(&mut self, id: &str, ok: bool, detail: String) {
        let line = format!("[{}] criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((ok, line));
    }

    fn finish(self) {
        let failures: Vec<&String> =
            self.lines.iter().filter(|(ok, _)| !ok).map(|(_, l)| l).collect();
        assert!(
            failures.is_empty(),
            "{} acceptance criteria failed:\n{}",
            failures.len(),
            failures.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n")
        );
    }
}

/// Independent RK4 integrator for the device state ODE (test-side oracle,
/// no shared code with the closed-form implementation path).
fn rk4_omega(omega0: f64, p: &DeviceParams, voltage: f64, t: f64, steps: usize) -> f64 {
    let xi = p.k * ((-p.mu1 * voltage).exp() - (p.mu2 * voltage).exp());
    let f = |w: f64| {
        if voltage < 0.0 {
            (1.0 - w) * (1.0 - w) * xi
        } else {
            w * w * xi
        }
    };
    let h = t / steps as f64;
    let mut w = omega0;
    for _ in 0..steps {
        let k1 = f(w);
        let k2 = f(w + h * k1 / 2.0);
        let k3 = f(w + h * k2 / 2.0);
        let k4 = f(w + h * k3);
        w += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    w.clamp(0.0, 1.0)
}

fn criterion_1_closed_form(gate: &mut Gate) {
    let start = Instant::now();
    let p = DeviceParams::nominal();
    let key = StreamKey::new(1001, 0, 0, 0);
    let mut worst = 0.0f64;
    for case in 0..1000u64 {
        let w0 = key.uniform(case, 0);
        let (v, t_base) = if key.draw_u64(case, 1) % 2 == 0 {
            (-1.1, 3e-6)
        } else {
            (1.4, 30e-6)
        };
        let t = t_base * (0.1 + 9.9 * key.uniform(case, 2));
        let xi = p.k * ((-p.mu1 * v).exp() - (p.mu2 * v).exp());
        let closed = memsim::device::advance_omega(w0, xi, t, v);
        let oracle = rk4_omega(w0, &p, v, t, 4000);
        worst = worst.max((closed - oracle).abs());
    }
    let dt = start.elapsed().as_secs_f64();
    gate.check(
        "1 device closed-form vs RK4",
        worst < 1e-6 && dt < 5.0,
        format!("worst |diff| {worst:.2e} over 1000 pulses in {dt:.2}s (limits 1e-6, 5s)"),
    );
}

fn criterion_2_pulse_sweep(gate: &mut Gate) {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.variation_d2d = false;
    cfg.variation_p2p = false;
    cfg.sweep_devices = 1;
    cfg.sweep_pulses = 64;
    let records = device_sweep(&cfg, &out_dir("sweep")).expect("sweep");
    let pots: Vec<f64> = records.iter().filter(|r| r.phase == "pot").map(|r| r.omega).collect();
    let deps: Vec<f64> = records.iter().filter(|r| r.phase == "dep").map(|r| r.omega).collect();
    let top = *pots.last().unwrap();
    let bottom = *deps.last().unwrap();
    let monotone = pots.windows(2).all(|w| w[1] >= w[0]) && deps.windows(2).all(|w| w[1] <= w[0]);
    let dt = start.elapsed().as_secs_f64();
    gate.check(
        "2 pulse sweep",
        top >= 0.9 && bottom <= 0.25 && monotone && dt < 1.0,
        format!("64 potentiation pulses reach {top:.3} (>=0.9), 64 depression reach {bottom:.3} (<=0.25), monotone={monotone}, {dt:.2}s"),
    );
}

struct MnistRuns {
    ideal_acc: f64,
    open_acc: f64,
    d2d_acc: f64,
    rounding_acc: f64,
    non_ideal_acc: f64,
    non_ideal_pulses_first5: u64,
}

fn criteria_3_4_ablation(gate: &mut Gate) -> Option<MnistRuns> {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset_kind = DatasetKind::Idx;
    cfg.dataset_dir = data_dir();
    cfg.model_arch = "784-256-10".into();
    cfg.train_epochs = 25;
    cfg.train_batch_size = 100;
    cfg.train_eta = 1.0;
    cfg.ablate_rows = vec![
        "ideal".into(),
        "open-loop".into(),
        "d2d".into(),
        "rounding".into(),
        "non-ideal".into(),
    ];
    let dir = out_dir("ablation");
    let rows = match ablation_matrix(&cfg, &dir) {
        Ok(r) => r,
        Err(e) => {
            gate.check("3 ideal accuracy", false, format!("ablation failed: {e}"));
            gate.check("4 ablation ordering", false, format!("ablation failed: {e}"));
            return None;
        }
    };
    let acc = |name: &str| -> f64 {
        rows.iter()
            .find(|r| r.name == name && r.status == "ok")
            .map(|r| r.final_accuracy)
            .unwrap_or(f64::NAN)
    };
    let runs = MnistRuns {
        ideal_acc: acc("ideal"),
        open_acc: acc("open-loop"),
        d2d_acc: acc("d2d"),
        rounding_acc: acc("rounding"),
        non_ideal_acc: acc("non-ideal"),
        non_ideal_pulses_first5: rows
            .iter()
            .find(|r| r.name == "non-ideal")
            .map(|r| r.pulses_first5)
            .unwrap_or(0),
    };
    gate.check(
        "3 ideal accuracy",
        (runs.ideal_acc - 0.9734).abs() <= 0.010,
        format!("ideal MLP/MNIST finishes at {:.4} (target 0.9734 +- 0.010, 25 epochs)", runs.ideal_acc),
    );
    let ordering = runs.ideal_acc > runs.open_acc
        && runs.open_acc > runs.d2d_acc
        && runs.d2d_acc > runs.rounding_acc
        && runs.rounding_acc > runs.non_ideal_acc;
    gate.check(
        "4 ablation ordering",
        ordering && runs.non_ideal_acc <= 0.50,
        format!(
            "ideal {:.4} > open-loop {:.4} > d2d {:.4} > rounding {:.4} > non-ideal {:.4} (<= 0.50)",
            runs.ideal_acc, runs.open_acc, runs.d2d_acc, runs.rounding_acc, runs.non_ideal_acc
        ),
    );
    Some(runs)
}

fn criteria_5_6_ssm(gate: &mut Gate, baseline_pulses_first5: Option<u64>) {
    let mut base = ExperimentConfig::default();
    base.dataset_kind = DatasetKind::Idx;
    base.dataset_dir = data_dir();
    base.model_arch = "784-256-10".into();
    base.train_epochs = 8;
    base.train_batch_size = 100;
    base.train_eta = 1.0;
    base.train_momentum = 0.9;
    base.scheme_n = 2.0;

    let ssm_cfg = ablation_row_config(&base, "ssm").expect("ssm preset");
    let ssm = run_train(&ssm_cfg, &out_dir("ssm"));
    let comp_cfg = ablation_row_config(&base, "ssm-comp").expect("ssm-comp preset");
    let comp = run_train(&comp_cfg, &out_dir("ssm-comp"));

    match (&ssm, &comp) {
        (Ok(ssm), Ok(comp)) => {
            let ssm_acc = *ssm.accuracy.last().unwrap_or(&0.0);
            let comp_acc = *comp.accuracy.last().unwrap_or(&0.0);
            gate.check(
                "5 SSM recovery",
                ssm_acc >= 0.85 && comp_acc >= 0.88,
                format!(
                    "SSM reaches {ssm_acc:.4} (>= 0.85) and with compensation {comp_acc:.4} (>= 0.88) within 8 epochs (eta 1.0)"
                ),
            );
            let five = ssm.pulses_cumulative.len().min(5);
            let ssm_first5 = {
                let (p, d) = ssm.pulses_cumulative[five - 1];
                p + d
            };
            let sparsity =
                ssm.touched_fraction[..five].iter().sum::<f64>() / five as f64;
            let ratio = baseline_pulses_first5
                .filter(|&b| b > 0)
                .map(|b| ssm_first5 as f64 / b as f64);
            gate.check(
                "6 pulse economy",
                ratio.is_some_and(|r| r <= 0.15) && sparsity < 0.01,
                format!(
                    "first-5-epoch pulses SSM/no-SSM = {} (<= 0.15), mean touched fraction {sparsity:.5} (< 0.01)",
                    ratio.map_or("n/a".into(), |r| format!("{r:.4}"))
                ),
            );
        }
        _ => {
            let msg = format!(
                "ssm: {:?}, ssm-comp: {:?}",
                ssm.as_ref().err().map(|e| e.to_string()),
                comp.as_ref().err().map(|e| e.to_string())
            );
            gate.check("5 SSM recovery", false, msg.clone());
            gate.check("6 pulse economy", false, msg);
        }
    }
}

fn criterion_7_reinit(gate: &mut Gate) {
    let mut cfg = ExperimentConfig::default();
    cfg.reinit_study_rows = 784;
    cfg.reinit_study_cols = 256;
    cfg.reinit_study_d2d_scale = 2.0;
    match reinit_study(&cfg, &out_dir("reinit")) {
        Ok(r) => {
            let reached = r.final_std <= r.target_std;
            let ok = reached && r.cycles <= 40 && r.pulses_per_cell <= 8.0;
            gate.check(
                "7 re-initialization",
                ok,
                format!(
                    "784x256 at 2x D2D: std {:.4} vs target {:.4} after {} cycles, {:.2} pulses/cell \
                     (the mapped weight range of ~18% of cells excludes the target band at 2x D2D, \
                     so the array std cannot reach the per-layer target; see the study CSV)",
                    r.final_std, r.target_std, r.cycles, r.pulses_per_cell
                ),
            );
        }
        Err(e) => gate.check("7 re-initialization", false, format!("study failed: {e}")),
    }
}

fn criterion_8_compensation(gate: &mut Gate) {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    match compensation_study(&cfg, &out_dir("comp")) {
        Ok(bins) => {
            let every_bin = bins
                .iter()
                .all(|b| b.samples == 0 || b.mean_abs_err_comp < b.mean_abs_err_plain);
            let boundary = bins.first().map(|b| b.mean_pulses_comp).unwrap_or(0.0)
                .max(bins.last().map(|b| b.mean_pulses_comp).unwrap_or(0.0));
            let mid = bins[bins.len() / 2 - 1]
                .mean_pulses_comp
                .max(bins[bins.len() / 2].mean_pulses_comp);
            let dt = start.elapsed().as_secs_f64();
            let mut detail = String::new();
            write!(
                detail,
                "comp < plain in every decile: {every_bin}; boundary pulses {boundary:.1} > mid {mid:.1}; {dt:.2}s"
            )
            .unwrap();
            gate.check(
                "8 compensation study",
                every_bin && boundary > mid && dt < 10.0,
                detail,
            );
        }
        Err(e) => gate.check("8 compensation study", false, format!("study failed: {e}")),
    }
}

fn criterion_9_gradient_check(gate: &mut Gate) {
    let start = Instant::now();
    let mut model = NetworkModel::build(
        &ModelSpec::mlp(&[4, 3, 2]),
        WeightBackend::Digital,
        DeviceParams::nominal(),
        &VariationConfig::disabled(),
        PulsePair::default(),
        0.05,
        2024,
        InitPolicy::Auto,
    )
    .expect("model");
    let key = StreamKey::new(77, 0, 0, 0);
    let mut x = ndarray::Array2::zeros((3, 4));
    for (i, v) in x.iter_mut().enumerate() {
        *v = key.uniform(i as u64, 0);
    }
    let labels = [0usize, 1, 0];
    let cache = model.forward(x.view()).expect("forward");
    let (_, grads) = model.backward(&cache, &labels);
    let weights = model.effective_weights();
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for (li, w) in weights.iter().enumerate() {
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                let mut wp = weights.clone();
                wp[li][[r, c]] += eps;
                model.set_weights(&wp).unwrap();
                let lp = model.backward(&model.forward(x.view()).unwrap(), &labels).0;
                let mut wm = weights.clone();
                wm[li][[r, c]] -= eps;
                model.set_weights(&wm).unwrap();
                let lm = model.backward(&model.forward(x.view()).unwrap(), &labels).0;
                let fd = (lp - lm) / (2.0 * eps);
                let an = grads[li][[r, c]];
                worst = worst.max((fd - an).abs() / an.abs().max(1e-6));
            }
        }
    }
    let dt = start.elapsed().as_secs_f64();
    gate.check(
        "9 gradient check",
        worst <= 1e-4 && dt < 1.0,
        format!("worst relative error {worst:.2e} on 4-3-2 (<= 1e-4), {dt:.2}s"),
    );
}

fn criterion_10_determinism(gate: &mut Gate) {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset_kind = DatasetKind::Blobs;
    cfg.dataset_synthetic_train = 400;
    cfg.dataset_synthetic_test = 100;
    cfg.model_arch = "16-8-4".into();
    cfg.train_epochs = 2;
    cfg.train_batch_size = 40;
    cfg.seed = 99;

    let d1 = out_dir("det1");
    let d2 = out_dir("det2");
    let d3 = out_dir("det3");
    let r1 = run_train(&cfg, &d1);
    let r2 = run_train(&cfg, &d2);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let r3 = pool.install(|| run_train(&cfg, &d3));
    if r1.is_err() || r2.is_err() || r3.is_err() {
        gate.check("10 determinism", false, "runs failed".into());
        return;
    }
    let mut same = true;
    let mut detail = String::new();
    for f in ["report.csv", "pulses.csv", "weights_final.csv"] {
        let a = std::fs::read(d1.join(f)).unwrap_or_default();
        let b = std::fs::read(d2.join(f)).unwrap_or_default();
        let c = std::fs::read(d3.join(f)).unwrap_or_default();
        let ok = !a.is_empty() && a == b && a == c;
        same &= ok;
        write!(detail, "{f}: rerun {} / threads {}; ", a == b, a == c).unwrap();
    }
    gate.check("10 determinism", same, detail);
}

#[test]
fn acceptance() {
    // table sanity used by several criteria below
    let mapping = MappingConstants::from_mean(&DeviceParams::nominal(), 0.05);
    assert!((mapping.a * mapping.g_max_bar - mapping.b - 1.0).abs() < 1e-12);
    let _ = DeviceState::new(0.5);

    let mut gate = Gate::new();
    criterion_1_closed_form(&mut gate);
    criterion_2_pulse_sweep(&mut gate);
    criterion_9_gradient_check(&mut gate);
    criterion_8_compensation(&mut gate);
    criterion_7_reinit(&mut gate);
    criterion_10_determinism(&mut gate);
    let runs = criteria_3_4_ablation(&mut gate);
    criteria_5_6_ssm(&mut gate, runs.map(|r| r.non_ideal_pulses_first5));
    gate.finish();
}
