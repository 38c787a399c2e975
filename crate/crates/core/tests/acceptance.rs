//! Acceptance suite. Each test prints one `criterion N ...: PASS|FAIL` line to
//! stderr and then asserts. Tests hold a global lock so the runtime limits
//! are measured without contention.

#![allow(clippy::needless_range_loop)]

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;

use bdris_core::aging::{bessel_j0, fit_jakes, jakes_acf_vec, levinson_durbin, ArModel};
use bdris_core::bdris::build_training_book;
use bdris_core::channel::{simulate_training, ChannelSet, SystemConfig};
use bdris_core::cnn::{synth_dataset, train, CnnConfig, CnnModel, TrainSettings};
use bdris_core::experiments::{
    measured_flops, nmse_vs_snr_drops, prediction_drops, prediction_grid, run_complexity, run_nmse_vs_snr, run_nmse_vs_t, run_overhead,
    run_prediction, run_sumrate, sumrate_drops, train_classifier, ExperimentSpec, Selection, TopologyCase, CNN_AR,
};
use bdris_core::metrics::{average_overhead, flop_model, loglog_slope, overhead_reduction, pilot_length, proposed_coefficient, Scheme};
use bdris_core::rng::stream;
use bdris_core::tensor::{fro2, CMat};
use bdris_core::tucker2::{bals_fully, bals_group, split_by_group, true_anchors, BalsSettings};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

struct Verdict {
    id: u32,
    name: &'static str,
    checks: Vec<(String, bool)>,
}

impl Verdict {
    fn new(id: u32, name: &'static str) -> Self {
        Verdict { id, name, checks: vec![] }
    }

    fn check(&mut self, what: impl Into<String>, ok: bool) {
        self.checks.push((what.into(), ok));
    }

    fn runtime(&mut self, elapsed: Duration, limit: Duration) {
        self.check(format!("runtime {:.1}s < {}s", elapsed.as_secs_f64(), limit.as_secs()), elapsed < limit);
    }

    fn finish(self) {
        let pass = self.checks.iter().all(|c| c.1);
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
        let detail = if pass {
            self.checks.iter().map(|c| c.0.as_str()).collect::<Vec<_>>().join("; ")
        } else {
            format!("failed: {}", failed.join("; "))
        };
        let line = format!("criterion {} {}: {} ({detail})", self.id, self.name, if pass { "PASS" } else { "FAIL" });
        let _ = writeln!(std::io::stderr(), "{line}");
        assert!(pass, "{line}");
    }
}

fn nmse(a: &CMat, b: &CMat) -> f64 {
    fro2(&(a - b)) / fro2(b)
}

fn sci(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", "))
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Desk-scale spec shared by criteria 6 to 8.
fn desk_spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.cnn.train.max_epochs = 150;
    spec
}

struct Trained {
    model: CnnModel,
    seconds: f64,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let (model, _, _) = train_classifier(&desk_spec()).expect("classifier trains");
        Trained { model, seconds: t.elapsed().as_secs_f64() }
    })
}

#[test]
fn criterion_1_noiseless_oracle_recovery() {
    let _g = serial();
    let mut v = Verdict::new(1, "noiseless oracle recovery");
    let start = Instant::now();
    let settings = BalsSettings { kappa: 1e-12, line_search: true, restarts: 3, ..BalsSettings::default() };

    let fc = SystemConfig { n: 4, k: 4, m: 4, t: 6, rician_factor: 0.0, rho: 0.0, ..SystemConfig::default() };
    let gc = SystemConfig { t: 8, grouped: true, groups: 2, ..fc.clone() };
    for (label, cfg) in [("FC", fc), ("GC", gc)] {
        let (mut worst_c, mut worst_f) = (0.0f64, 0.0f64);
        for seed in 0..5 {
            let mut rng = stream(seed, &[]);
            let ch = ChannelSet::generate_len(&cfg, 1, &mut rng).unwrap();
            let book = build_training_book(&cfg, &mut rng).unwrap();
            let obs = simulate_training(&ch, &book, 0, f64::INFINITY, 1.0, &mut rng).unwrap();
            let s = BalsSettings { seed, ..settings };
            let r = if cfg.grouped {
                let parts = split_by_group(&obs, &book).unwrap();
                bals_group(&parts, &book, &s, Some(&true_anchors(&ch.h, book.topology))).unwrap()
            } else {
                bals_fully(&obs, &book, &s, Some(ch.h[(0, 0)])).unwrap()
            };
            worst_c = worst_c.max(nmse(&r.composite(), &ch.composite(0)));
            worst_f = worst_f.max(nmse(&r.h_hat, &ch.h).max(nmse(&r.e_hat, ch.e(0))));
        }
        v.check(format!("{label} cascade NMSE {worst_c:.1e} < 1e-10"), worst_c < 1e-10);
        v.check(format!("{label} factor NMSE {worst_f:.1e} < 1e-6"), worst_f < 1e-6);
    }
    v.runtime(start.elapsed(), Duration::from_secs(1));
    v.finish();
}

#[test]
fn criterion_2_pilot_overhead_table() {
    let _g = serial();
    let mut v = Verdict::new(2, "pilot overhead table");
    let start = Instant::now();
    let conv_expected = [256.0, 1024.0, 4096.0, 128.0, 512.0, 2048.0];
    let coef_expected = [21, 37, 79, 24, 42, 86];
    let red_expected = [94.95, 97.78, 98.81, 88.46, 94.95, 97.42];
    let rows = [(16, 1, 20), (32, 1, 36), (64, 1, 78), (16, 2, 22), (32, 2, 40), (64, 2, 84)];
    let mut ok_conv = true;
    let mut ok_coef = true;
    let mut worst_red: f64 = 0.0;
    for (i, &(m, g, t)) in rows.iter().enumerate() {
        let cfg = SystemConfig { m, t, q: 16, p: 10, grouped: g > 1, groups: g, ..SystemConfig::default() };
        let (prop, conv) = if g > 1 { (Scheme::GcProp, Scheme::GcConv) } else { (Scheme::FcProp, Scheme::FcConv) };
        let pa_conv = average_overhead(conv, &cfg);
        let pa_prop = average_overhead(prop, &cfg);
        ok_conv &= pa_conv == conv_expected[i];
        ok_coef &= proposed_coefficient(prop, &cfg) == coef_expected[i];
        ok_coef &= pilot_length(prop, &cfg) == coef_expected[i] * 16;
        let red = overhead_reduction(pa_prop, pa_conv).unwrap();
        // independent form: 1 - coefficient * Q / (Q + P) / P_a,conv
        let oracle = 100.0 * (1.0 - coef_expected[i] as f64 * 8.0 / 13.0 / conv_expected[i]);
        worst_red = worst_red.max((red - red_expected[i]).abs()).max((red - oracle).abs());
    }
    v.check("conventional P_a exact", ok_conv);
    v.check("proposed coefficients exact", ok_coef);
    v.check(format!("reduction error {worst_red:.3}% <= 0.05%"), worst_red <= 0.05);

    let table = run_overhead(&ExperimentSpec::default()).unwrap();
    let col = table.column("reduction_percent").unwrap();
    let printed: Vec<f64> = table.rows.iter().map(|r| r[col].parse().unwrap()).collect();
    v.check("overhead command rows", printed.iter().zip(red_expected).all(|(a, b)| (a - b).abs() <= 0.05));
    v.runtime(start.elapsed(), Duration::from_secs(1));
    v.finish();
}

fn two_sig(x: f64) -> f64 {
    let e = x.abs().log10().floor() - 1.0;
    (x / 10f64.powf(e)).round() * 10f64.powf(e)
}

#[test]
fn criterion_3_complexity() {
    let _g = serial();
    let mut v = Verdict::new(3, "complexity spot values and scaling");
    let start = Instant::now();
    let spec = ExperimentSpec::default();
    let iters = spec.overhead.iterations;
    let fc16 = SystemConfig { m: 16, t: 20, ..spec.system.clone() };
    let prop = flop_model(Scheme::FcProp, &fc16, iters);
    v.check(format!("FC-PROP M=16 model {prop:.3e} rounds to 7.5e7"), two_sig(prop) == 7.5e7);
    let fc64 = SystemConfig { m: 64, t: 78, ..spec.system.clone() };
    let conv = flop_model(Scheme::FcConv, &fc64, iters);
    v.check(format!("FC-CONV M=64 model {conv:.3e} rounds to 6.6e9"), two_sig(conv) == 6.6e9);

    let ms = &spec.overhead.measure_m;
    let x: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
    for (scheme, target, tol) in [(Scheme::FcProp, 2.0, 0.3), (Scheme::FcConv, 4.0, 0.5)] {
        let y: Vec<f64> = ms
            .iter()
            .map(|&m| measured_flops(scheme, &spec.system, m, spec.overhead.measure_t, iters, spec.seed).unwrap() as f64)
            .collect();
        let slope = loglog_slope(&x, &y);
        v.check(format!("{scheme} measured slope {slope:.2} within {target}+-{tol}"), (slope - target).abs() <= tol);
    }
    v.runtime(start.elapsed(), Duration::from_secs(120));
    v.finish();
}

/// Non-increasing, allowing one rise of at most 5% between neighbours.
fn monotone_decreasing(y: &[f64]) -> bool {
    let rises: Vec<f64> = y.windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] / w[0] - 1.0).collect();
    rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.05)
}

#[test]
fn criterion_4_estimation_dominance() {
    let _g = serial();
    let mut v = Verdict::new(4, "estimation dominance over DFT-LS");
    let start = Instant::now();
    let mut spec = ExperimentSpec::default();
    spec.system = SystemConfig { n: 5, k: 5, m: 16, t: 20, ..spec.system };
    spec.sweep.topologies = vec![TopologyCase { groups: 1, t: 20 }];
    let drops = nmse_vs_snr_drops(&spec).unwrap();
    let snrs = &spec.sweep.snr_db;
    let bals: Vec<f64> = (0..snrs.len()).map(|s| mean(drops.iter().map(|d| d.bals[0][s]))).collect();
    let ls: Vec<f64> = (0..snrs.len()).map(|s| mean(drops.iter().map(|d| d.ls[0][s]))).collect();
    let i20 = snrs.iter().position(|&s| s == 20.0).unwrap();
    let ratio = ls[i20] / bals[i20];
    v.check(format!("LS/BALS NMSE at 20 dB = {:.2e}/{:.2e} = {ratio:.2} >= 10", ls[i20], bals[i20]), ratio >= 10.0);
    v.check(format!("BALS monotone {}", sci(&bals)), monotone_decreasing(&bals));
    v.check(format!("LS monotone {}", sci(&ls)), monotone_decreasing(&ls));
    v.check("BALS below LS at every SNR", bals.iter().zip(&ls).all(|(b, l)| b < l));
    v.runtime(start.elapsed(), Duration::from_secs(600));
    v.finish();
}

/// Moduli of the roots of `z^Q + a_1 z^{Q-1} + ... + a_Q`.
fn pole_moduli(m: &ArModel) -> Vec<f64> {
    let q = m.order;
    let mut c = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        c[(0, j)] = -m.a[j];
    }
    for i in 1..q {
        c[(i, i - 1)] = 1.0;
    }
    c.complex_eigenvalues().iter().map(|z| z.norm()).collect()
}

#[test]
fn criterion_5_levinson_durbin() {
    let _g = serial();
    let mut v = Verdict::new(5, "Levinson-Durbin correctness");
    let start = Instant::now();
    let mut worst_res: f64 = 0.0;
    let mut worst_pole: f64 = 0.0;
    let f_grid = [1e-4, 2.5e-4, 1e-3, 2.5e-3, 5e-3, 1e-2, 2e-2, 3.5e-2, 5e-2];
    for &eps in &[0.1, 1e-2] {
        for &f in &f_grid {
            for q in 1..=32 {
                let r = jakes_acf_vec(f, q).unwrap();
                let m = levinson_durbin(&r, eps).unwrap();
                // (R + eps I) a + w with R = Toeplitz(r[0..q-1]), w = r[1..=q]
                for i in 0..q {
                    let mut acc = r[i + 1];
                    for j in 0..q {
                        let lag = (i as i64 - j as i64).unsigned_abs() as usize;
                        acc += (r[lag] + if i == j { eps } else { 0.0 }) * m.a[j];
                    }
                    worst_res = worst_res.max(acc.abs());
                }
                worst_pole = worst_pole.max(pole_moduli(&m).into_iter().fold(0.0, f64::max));
            }
        }
    }
    v.check(format!("max residual {worst_res:.1e} < 1e-10"), worst_res < 1e-10);
    v.check(format!("max pole modulus {worst_pole:.6} < 1"), worst_pole < 1.0);

    let mut worst_q1: f64 = 0.0;
    for &eps in &[0.0, 0.1, 1e-3] {
        for &f in &f_grid {
            let a1 = fit_jakes(f, 1, eps).unwrap().a[0];
            let closed = -bessel_j0(2.0 * std::f64::consts::PI * f) / (1.0 + eps);
            worst_q1 = worst_q1.max((a1 - closed).abs());
        }
    }
    v.check(format!("Q=1 closed form error {worst_q1:.1e} <= 1e-12"), worst_q1 <= 1e-12);
    v.runtime(start.elapsed(), Duration::from_secs(1));
    v.finish();
}

fn uniform_input(rng: &mut impl Rng, h: usize, w: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn criterion_6_cnn_validity() {
    let _g = serial();
    let mut v = Verdict::new(6, "CNN validity");
    let start = Instant::now();

    let mini = CnnConfig { conv_channels: vec![2, 3], kernel: [2, 2], col_dilation: 2, hidden: vec![4, 3], classes: 3 };
    let mut rng = stream(21, &[]);
    let model = CnnModel::init(mini, &mut rng).unwrap();
    let batch: Vec<_> = (0..3).map(|i| (uniform_input(&mut rng, 5, 8), i % 3)).collect();
    let (_, g) = model.loss_and_grad(&batch).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..model.num_params() {
        let (mut a, mut b) = (model.clone(), model.clone());
        a.params[j] += h;
        b.params[j] -= h;
        let fd = (a.loss(&batch).unwrap() - b.loss(&batch).unwrap()) / (2.0 * h);
        worst = worst.max((fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-6));
    }
    v.check(format!("gradient relative error {worst:.1e} < 1e-4"), worst < 1e-4);

    let classes = [0.0, 0.05];
    let (m, k, vv) = (4, 5, 16);
    let tr = synth_dataset(&classes, 1000, m, k, vv, 0.5, 0.0, 31).unwrap();
    let va = synth_dataset(&classes, 100, m, k, vv, 0.5, 0.0, 32).unwrap();
    let te = synth_dataset(&classes, 200, m, k, vv, 0.5, 0.0, 33).unwrap();
    let net = CnnConfig { classes: 2, col_dilation: k, ..CnnConfig::default() };
    let init = CnnModel::init(net, &mut stream(34, &[])).unwrap();
    let s = TrainSettings { max_epochs: 10, patience: 3, seed: 35, ..TrainSettings::default() };
    let (two, _) = train(init, &tr, &va, &s).unwrap();
    let acc2 = two.accuracy(&te).unwrap();
    v.check(format!("two-class held-out accuracy {acc2:.3} >= 0.95"), acc2 >= 0.95);

    // clean inputs call for a classifier trained on clean inputs
    let mut spec = desk_spec();
    spec.cnn.noise_nmse = 0.0;
    let (_, report, acc10) = train_classifier(&spec).unwrap();
    v.check(format!("F=10 clean accuracy at M={} {acc10:.3} >= 0.80", spec.system.m), acc10 >= 0.8);
    v.check("training did not stall", !report.stalled);
    v.runtime(start.elapsed(), Duration::from_secs(300));
    v.finish();
}

/// One-sided sign test: `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
fn sign_test_p(wins: usize, n: usize) -> f64 {
    let ln_fact = |x: usize| (1..=x).map(|i| (i as f64).ln()).sum::<f64>();
    (wins..=n).map(|j| (ln_fact(n) - ln_fact(j) - ln_fact(n - j) - n as f64 * 2f64.ln()).exp()).sum()
}

/// Training time already spent by the shared classifier when this test
/// did not pay for it itself.
fn charged(start: Instant, t: &Trained) -> Duration {
    let e = start.elapsed();
    if e.as_secs_f64() >= t.seconds {
        e
    } else {
        e + Duration::from_secs_f64(t.seconds)
    }
}

#[test]
fn criterion_7_prediction_orderings() {
    let _g = serial();
    let mut v = Verdict::new(7, "prediction orderings");
    let start = Instant::now();
    let spec = desk_spec();
    let t = trained();
    let horizon = spec.predictor.horizon;

    let mixed = prediction_drops(&spec, Some(&t.model), &spec.predictor.bank).unwrap();
    let pairs: Vec<(f64, f64)> = mixed.iter().map(|d| (d.get(CNN_AR, horizon).unwrap(), d.get("AR(16)", horizon).unwrap())).collect();
    let wins = pairs.iter().filter(|(c, a)| c < a).count();
    let losses = pairs.iter().filter(|(c, a)| c > a).count();
    let p = sign_test_p(wins, wins + losses);
    v.check(format!("CNN-AR beats AR(16) in {wins}/{} drops, sign test p = {p:.1e} < 0.05", wins + losses), p < 0.05);
    let (mc, ma) = (mean(pairs.iter().map(|p| p.0)), mean(pairs.iter().map(|p| p.1)));
    v.check(format!("mean NMSE CNN-AR {mc:.2e} <= AR(16) {ma:.2e}"), mc <= ma);

    let grid = prediction_grid(&spec, Some(&t.model), &spec.sweep.f_n).unwrap();
    let curve: Vec<f64> = (0..spec.sweep.f_n.len()).map(|j| mean(grid.iter().map(|d| d[j].get(CNN_AR, horizon).unwrap()))).collect();
    v.check(format!("CNN-AR NMSE non-decreasing in f_n {}", sci(&curve)), curve.windows(2).all(|w| w[1] >= w[0]));
    v.runtime(charged(start, t), Duration::from_secs(600));
    v.finish();
}

#[test]
fn criterion_8_sum_rate_orderings() {
    let _g = serial();
    let mut v = Verdict::new(8, "sum-rate orderings");
    let start = Instant::now();
    let spec = desk_spec();
    let t = trained();
    let drops = sumrate_drops(&spec, Some(&t.model)).unwrap();
    let margin = drops.iter().flat_map(|d| d.bd_margin.iter().copied()).fold(f64::INFINITY, f64::min);
    v.check(format!("min F_bd - F_diag {margin:.2e} >= 0"), margin >= -1e-9);

    let snrs = &spec.sweep.downlink_snr_db;
    let avg = |csi: usize, s: usize| mean(drops.iter().map(|d| d.rate[0][csi][0][s]));
    let ordered = (0..snrs.len()).all(|s| avg(1, s) >= avg(2, s));
    let prop: Vec<f64> = (0..snrs.len()).map(|s| avg(1, s)).collect();
    let conv: Vec<f64> = (0..snrs.len()).map(|s| avg(2, s)).collect();
    v.check(format!("proposed {prop:.3?} >= conventional {conv:.3?}"), ordered);
    let i20 = snrs.iter().position(|&s| s == 20.0).unwrap();
    let gap = 1.0 - avg(1, i20) / avg(0, i20);
    v.check(format!("proposed {:.3} vs perfect {:.3} at 20 dB, gap {:.2}% <= 5%", avg(1, i20), avg(0, i20), 100.0 * gap), gap <= 0.05);
    v.runtime(charged(start, t), Duration::from_secs(600));
    v.finish();
}

fn small_spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.drops = 6;
    spec.seed = 42;
    spec.system = SystemConfig { n: 3, k: 3, m: 8, t: 6, q: 8, p: 3, ..spec.system };
    spec.sweep.snr_db = vec![10.0, 20.0];
    spec.sweep.t_values = vec![4, 6];
    spec.sweep.f_n = vec![2.5e-3, 1e-2];
    spec.sweep.downlink_snr_db = vec![10.0, 20.0];
    spec.sweep.topologies = vec![TopologyCase { groups: 1, t: 6 }, TopologyCase { groups: 2, t: 8 }];
    spec.predictor.orders = vec![4];
    spec.predictor.history = 20;
    spec.predictor.horizon = 3;
    spec.predictor.bank = vec![2.5e-3, 1e-2];
    spec.predictor.bank_order = 8;
    spec.beamforming.rounds = 10;
    spec.cnn.per_class = 6;
    spec.cnn.val_per_class = 2;
    spec.cnn.test_per_class = 2;
    spec.cnn.v = 8;
    spec.cnn.train.max_epochs = 3;
    spec.cnn.train.batch = 4;
    spec.overhead.measure_m = vec![4, 8];
    spec.overhead.measure_t = 12;
    spec.overhead.iterations = 3;
    spec
}

/// Every table and the trained weights, as bytes.
fn outputs(spec: &ExperimentSpec) -> Vec<Vec<u8>> {
    let (model, _, _) = train_classifier(spec).unwrap();
    let mut weights = Vec::new();
    model.write_to(&mut weights).unwrap();
    let mut oracle = spec.clone();
    oracle.predictor.selection = Selection::Oracle;
    vec![
        run_nmse_vs_snr(spec).unwrap().to_csv().into_bytes(),
        run_nmse_vs_t(spec).unwrap().to_csv().into_bytes(),
        run_prediction(spec, Some(&model)).unwrap().to_csv().into_bytes(),
        run_prediction(&oracle, None).unwrap().to_csv().into_bytes(),
        run_sumrate(spec, Some(&model)).unwrap().to_csv().into_bytes(),
        run_overhead(spec).unwrap().to_csv().into_bytes(),
        run_complexity(spec).unwrap().to_csv().into_bytes(),
        weights,
    ]
}

#[test]
fn criterion_9_determinism() {
    let _g = serial();
    let mut v = Verdict::new(9, "determinism across parallelism");
    let base = small_spec();
    let runs: Vec<Vec<Vec<u8>>> = [1usize, 2, 3]
        .iter()
        .map(|&p| {
            let spec = ExperimentSpec { parallelism: p, ..base.clone() };
            let pool = rayon::ThreadPoolBuilder::new().num_threads(p).build().unwrap();
            pool.install(|| outputs(&spec))
        })
        .collect();
    let names = ["estimate", "sweep", "predict", "predict (oracle)", "sumrate", "overhead", "complexity", "train-cnn weights"];
    for (i, name) in names.iter().enumerate() {
        let same = runs.iter().all(|r| r[i] == runs[0][i]) && !runs[0][i].is_empty();
        v.check(format!("{name} identical at 1, 2, 3 workers"), same);
    }
    let rerun = outputs(&ExperimentSpec { parallelism: 2, ..base.clone() });
    v.check("rerun identical", rerun == runs[0]);
    v.finish();
}

#[test]
fn sign_test_reference_values() {
    // exact binomial tails
    assert!((sign_test_p(5, 5) - 1.0 / 32.0).abs() < 1e-15);
    assert!((sign_test_p(0, 7) - 1.0).abs() < 1e-12);
    assert!((sign_test_p(8, 10) - 56.0 / 1024.0).abs() < 1e-14);
}

#[test]
fn stability_oracle_matches_known_roots() {
    // (z - 0.5)(z + 0.25) = z^2 - 0.25 z - 0.125
    let m = ArModel { order: 2, a: vec![-0.25, -0.125], sigma2_omega: 1.0, epsilon: 0.0, f_n: None };
    let mut r = pole_moduli(&m);
    r.sort_by(f64::total_cmp);
    assert!((r[0] - 0.25).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
}
