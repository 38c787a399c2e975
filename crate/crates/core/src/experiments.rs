//! Scenario configuration and Monte-Carlo drivers.
//!
//! Every drop draws its randomness from streams keyed by `(seed, drop, ..)`,
//! drops run on a worker pool and results are reduced in drop order, so the
//! CSV output does not depend on the number of workers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aging::{fit_from_samples, ar_predict, log_grid, PatternBank, DEFAULT_EPSILON};
use crate::bdris::{build_training_book, validate_identifiability, PilotBook, Topology};
use crate::beamforming::{optimize, sinrs, sum_rate, BeamformingSettings, Csi};
use crate::channel::{simulate_training, ChannelSet, SystemConfig};
use crate::cnn::{cnn_ar_predict, synth_dataset, train, CnnConfig, CnnModel, TrainReport, TrainSettings};
use crate::error::{Error, Result};
use crate::ls::{cascade_from_z, diagonal_blocks, LsEstimator};
use crate::metrics::{average_overhead, data_fraction, flop_model, nmse, overhead_row, Scheme};
use crate::rng::{cn_matrix, purpose, stream};
use crate::tensor::{flops, identity, CMat};
use crate::tucker2::{bals_fully, bals_group, bals_slices, resolve_scaling, spectral_init, split_by_group, true_anchors, BalsSettings, EstimateResult};

pub const SCHEMA_VERSION: u32 = 1;
/// Worker count used when the spec leaves `parallelism` at 0.
pub const THREADS_ENV: &str = "BDRIS_THREADS";

/// One architecture to evaluate: `groups = 1` is fully connected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyCase {
    pub groups: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub snr_db: Vec<f64>,
    pub t_values: Vec<usize>,
    pub f_n: Vec<f64>,
    pub topologies: Vec<TopologyCase>,
    pub downlink_snr_db: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            t_values: vec![8, 12, 16, 20, 24, 28, 32, 36, 40],
            f_n: vec![2.5e-4, 1.25e-3, 2.5e-3, 5e-3, 1e-2],
            topologies: vec![TopologyCase { groups: 1, t: 20 }],
            downlink_snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        }
    }
}

/// How the AR model of a forecast is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Trained classifier on the measured history.
    #[default]
    Cnn,
    /// Bank entry nearest to the true `f_n`.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSpec {
    /// Orders of the sample-fitted AR baselines.
    pub orders: Vec<usize>,
    pub epsilon: f64,
    /// Measured intervals before the forecast.
    pub history: usize,
    pub horizon: usize,
    pub bank: Vec<f64>,
    pub bank_order: usize,
    pub selection: Selection,
    /// Start BALS from the previous interval's estimate.
    pub warm_start: bool,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec {
            orders: vec![8, 16, 24],
            epsilon: DEFAULT_EPSILON,
            history: 32,
            horizon: 10,
            bank: log_grid(2.5e-4, 1e-2, 10),
            bank_order: 16,
            selection: Selection::Cnn,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSpec {
    pub net: CnnConfig,
    pub train: TrainSettings,
    /// RIS size of the synthetic training inputs.
    pub train_m: usize,
    pub per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Intervals per training input.
    pub v: usize,
    /// Relative power of white noise added to training inputs.
    pub noise_nmse: f64,
    /// Pre-trained weights; trained inline when absent.
    pub weights: Option<PathBuf>,
}

impl Default for CnnSpec {
    fn default() -> Self {
        CnnSpec {
            net: CnnConfig::default(),
            train: TrainSettings::default(),
            train_m: 4,
            per_class: 200,
            val_per_class: 50,
            test_per_class: 50,
            v: 16,
            noise_nmse: 1e-3,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverheadCase {
    pub label: String,
    pub m: usize,
    pub groups: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverheadSpec {
    pub rows: Vec<OverheadCase>,
    /// BALS iterations assumed by the complexity model.
    pub iterations: usize,
    /// Training blocks of the measured complexity runs.
    pub measure_t: usize,
    pub measure_m: Vec<usize>,
}

impl Default for OverheadSpec {
    fn default() -> Self {
        let row = |label: &str, m, groups, t| OverheadCase { label: label.into(), m, groups, t };
        OverheadSpec {
            rows: vec![
                row("FC M=16", 16, 1, 20),
                row("FC M=32", 32, 1, 36),
                row("FC M=64", 64, 1, 78),
                row("GC M_bar=8", 16, 2, 22),
                row("GC M_bar=16", 32, 2, 40),
                row("GC M_bar=32", 64, 2, 84),
            ],
            iterations: 36,
            measure_t: 100,
            measure_m: vec![8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema: u32,
    pub name: String,
    pub drops: usize,
    pub seed: u64,
    /// Worker threads; 0 defers to `BDRIS_THREADS`, then to the CPU count.
    pub parallelism: usize,
    pub output: Option<PathBuf>,
    pub system: SystemConfig,
    pub bals: BalsSettings,
    pub sweep: Sweep,
    pub predictor: PredictorSpec,
    pub cnn: CnnSpec,
    pub beamforming: BeamformingSettings,
    pub overhead: OverheadSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            schema: SCHEMA_VERSION,
            name: "default".into(),
            drops: 200,
            seed: 1,
            parallelism: 0,
            output: None,
            system: SystemConfig::default(),
            bals: BalsSettings::default(),
            sweep: Sweep::default(),
            predictor: PredictorSpec::default(),
            cnn: CnnSpec::default(),
            beamforming: BeamformingSettings::default(),
            overhead: OverheadSpec::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Checks shared by every command; sweep-specific checks happen in the
    /// drivers.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        if self.drops == 0 {
            return Err(Error::Config("drops must be at least 1".into()));
        }
        self.system.validate()?;
        self.bals.validate()?;
        validate_identifiability(&self.system).map_err(|v| Error::Identifiability(v.to_string()))?;
        for c in &self.sweep.topologies {
            validate_identifiability(&self.case(c)).map_err(|v| Error::Identifiability(format!("groups = {}, T = {}: {v}", c.groups, c.t)))?;
        }
        let p = &self.predictor;
        if p.orders.contains(&0) || p.bank_order == 0 {
            return Err(Error::Config("AR orders must be at least 1".into()));
        }
        if p.orders.iter().any(|&q| q >= p.history) || p.bank_order > p.history {
            return Err(Error::Config(format!("sample-fitted AR orders must be < history = {} and the bank order <= history", p.history)));
        }
        if !(p.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }

    /// System configuration of one topology case.
    pub fn case(&self, c: &TopologyCase) -> SystemConfig {
        SystemConfig { grouped: c.groups > 1, groups: c.groups, t: c.t, ..self.system.clone() }
    }

    fn require<T>(&self, list: &[T], what: &str) -> Result<()> {
        if list.is_empty() {
            return Err(Error::Config(format!("sweep.{what} must not be empty")));
        }
        Ok(())
    }
}

/// Resolved worker count.
pub fn worker_count(requested: usize) -> usize {
    if requested > 0 {
        return requested;
    }
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` for every drop on a pool of `workers` threads and returns the
/// results in drop order.
pub fn par_drops<T, F>(drops: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..drops).into_par_iter().map(f).collect())
}

/// Result table; rendered as CSV with full-precision floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Anchored BALS estimate of interval `l`, optionally warm-started (fully
/// connected only) from a previous `E` estimate.
#[allow(clippy::too_many_arguments)]
pub fn estimate_interval(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    book: &PilotBook,
    l: usize,
    snr_db: f64,
    settings: &BalsSettings,
    warm: Option<&CMat>,
    rng: &mut crate::rng::SimRng,
) -> Result<EstimateResult> {
    let obs = simulate_training(ch, book, l, snr_db, cfg.pilot_power, rng)?;
    let topo = cfg.topology();
    let anchors = true_anchors(&ch.h, topo);
    match topo {
        Topology::FullyConnected => match warm {
            Some(e0) => resolve_scaling(bals_slices(&obs.y.slices(), &book.thetas, e0.clone(), settings)?, anchors[0]),
            None => bals_fully(&obs, book, settings, Some(anchors[0])),
        },
        Topology::GroupConnected { .. } => bals_group(&split_by_group(&obs, book)?, book, settings, Some(&anchors)),
    }
}

/// Per-drop NMSE for every topology case and SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrDrop {
    /// `[case][snr]`.
    pub bals: Vec<Vec<f64>>,
    pub ls: Vec<Vec<f64>>,
}

pub fn nmse_vs_snr_drops(spec: &ExperimentSpec) -> Result<Vec<SnrDrop>> {
    spec.validate()?;
    spec.require(&spec.sweep.snr_db, "snr_db")?;
    spec.require(&spec.sweep.topologies, "topologies")?;
    let cases: Vec<SystemConfig> = spec.sweep.topologies.iter().map(|c| spec.case(c)).collect();
    let ls: Vec<LsEstimator> = cases.iter().map(|c| LsEstimator::new(c.group_size(), c.groups.max(1))).collect::<Result<_>>()?;
    par_drops(spec.drops, worker_count(spec.parallelism), |i| {
        let d = i as u64;
        let ch = ChannelSet::generate_len(&spec.system, 1, &mut stream(spec.seed, &[purpose::CHANNEL, d]))?;
        let truth = ch.composite(0);
        let mut out = SnrDrop { bals: vec![], ls: vec![] };
        for (ci, (cfg, est)) in cases.iter().zip(&ls).enumerate() {
            let book = build_training_book(cfg, &mut stream(spec.seed, &[purpose::BOOK, d, ci as u64]))?;
            let ident = diagonal_blocks(&identity(cfg.m), est.groups);
            let (mut b, mut l) = (vec![], vec![]);
            for (si, &snr) in spec.sweep.snr_db.iter().enumerate() {
                let mut rng = stream(spec.seed, &[purpose::NOISE, d, ci as u64, si as u64]);
                let r = estimate_interval(cfg, &ch, &book, 0, snr, &spec.bals, None, &mut rng)?;
                b.push(nmse(&r.composite(), &truth)?);
                let slices = est.observe(&ch, 0, snr, cfg.pilot_power, &mut rng)?;
                let z = est.estimate(&slices, 0)?;
                l.push(nmse(&cascade_from_z(&z, &ident, cfg.n, cfg.k)?, &truth)?);
            }
            out.bals.push(b);
            out.ls.push(l);
        }
        Ok(out)
    })
}

/// Mean cascade NMSE of Tucker2-BALS and DFT-LS over the SNR grid.
pub fn run_nmse_vs_snr(spec: &ExperimentSpec) -> Result<Table> {
    let drops = nmse_vs_snr_drops(spec)?;
    let mut t = Table::new(&["groups", "t", "snr_db", "bals_nmse", "ls_nmse", "ls_pilots", "drops"]);
    for (ci, c) in spec.sweep.topologies.iter().enumerate() {
        let pilots = spec.case(c).group_size().pow(2) * c.groups;
        for (si, &snr) in spec.sweep.snr_db.iter().enumerate() {
            t.rows.push(vec![
                c.groups.to_string(),
                c.t.to_string(),
                num(snr),
                num(mean(drops.iter().map(|d| d.bals[ci][si]))),
                num(mean(drops.iter().map(|d| d.ls[ci][si]))),
                pilots.to_string(),
                spec.drops.to_string(),
            ]);
        }
    }
    Ok(t)
}

/// Smallest swept `T` whose NMSE is within 5% of the NMSE at the largest `T`.
pub fn plateau_onset(ts: &[usize], nmse: &[f64]) -> Option<usize> {
    let last = *nmse.last()?;
    ts.iter().zip(nmse).find(|(_, &v)| v <= 1.05 * last).map(|(&t, _)| t)
}

/// BALS NMSE against the number of training blocks at `system.snr_db`, for
/// every topology case (the case's own `T` is replaced by the sweep).
pub fn run_nmse_vs_t(spec: &ExperimentSpec) -> Result<Table> {
    spec.validate()?;
    spec.require(&spec.sweep.t_values, "t_values")?;
    spec.require(&spec.sweep.topologies, "topologies")?;
    let mut cfgs = Vec::new();
    for c in &spec.sweep.topologies {
        for &t in &spec.sweep.t_values {
            let cfg = spec.case(&TopologyCase { groups: c.groups, t });
            cfg.validate()?;
            validate_identifiability(&cfg).map_err(|v| Error::Identifiability(format!("groups = {}, T = {t}: {v}", c.groups)))?;
            cfgs.push(cfg);
        }
    }
    let per: Vec<Vec<f64>> = par_drops(spec.drops, worker_count(spec.parallelism), |i| {
        let d = i as u64;
        let ch = ChannelSet::generate_len(&spec.system, 1, &mut stream(spec.seed, &[purpose::CHANNEL, d]))?;
        let truth = ch.composite(0);
        cfgs.iter()
            .enumerate()
            .map(|(j, cfg)| {
                let book = build_training_book(cfg, &mut stream(spec.seed, &[purpose::BOOK, d, j as u64]))?;
                let mut rng = stream(spec.seed, &[purpose::NOISE, d, j as u64]);
                let r = estimate_interval(cfg, &ch, &book, 0, spec.system.snr_db, &spec.bals, None, &mut rng)?;
                nmse(&r.composite(), &truth)
            })
            .collect()
    })?;
    let nt = spec.sweep.t_values.len();
    let mut t = Table::new(&["groups", "t", "snr_db", "bals_nmse", "plateau_onset", "drops"]);
    for (ci, c) in spec.sweep.topologies.iter().enumerate() {
        let curve: Vec<f64> = (0..nt).map(|j| mean(per.iter().map(|d| d[ci * nt + j]))).collect();
        let onset = plateau_onset(&spec.sweep.t_values, &curve);
        for (j, &tv) in spec.sweep.t_values.iter().enumerate() {
            t.rows.push(vec![
                c.groups.to_string(),
                tv.to_string(),
                num(spec.system.snr_db),
                num(curve[j]),
                (onset == Some(tv)).to_string(),
                spec.drops.to_string(),
            ]);
        }
    }
    Ok(t)
}

/// Pattern bank of the spec.
pub fn build_bank(spec: &ExperimentSpec) -> Result<PatternBank> {
    PatternBank::from_jakes(&spec.predictor.bank, spec.predictor.bank_order, spec.predictor.epsilon)
}

/// Trains the aging classifier on synthetic data for the spec's bank.
/// Returns the model, the training report and the held-out accuracy at the
/// system's `M`.
pub fn train_classifier(spec: &ExperimentSpec) -> Result<(CnnModel, TrainReport, f64)> {
    let c = &spec.cnn;
    let s = &spec.system;
    let classes = &spec.predictor.bank;
    let net = CnnConfig { classes: classes.len(), col_dilation: s.k, ..c.net.clone() };
    let tr = synth_dataset(classes, c.per_class, c.train_m, s.k, c.v, s.rho, c.noise_nmse, spec.seed)?;
    let va = synth_dataset(classes, c.val_per_class, c.train_m, s.k, c.v, s.rho, c.noise_nmse, spec.seed.wrapping_add(1))?;
    let te = synth_dataset(classes, c.test_per_class, s.m, s.k, c.v, s.rho, c.noise_nmse, spec.seed.wrapping_add(2))?;
    let model = CnnModel::init(net, &mut stream(spec.seed, &[purpose::CNN, 0]))?;
    let settings = TrainSettings { seed: spec.seed, ..c.train.clone() };
    let (model, report) = train(model, &tr, &va, &settings)?;
    let acc = model.accuracy(&te)?;
    Ok((model, report, acc))
}

/// Loads the configured weights or trains inline.
pub fn classifier(spec: &ExperimentSpec) -> Result<CnnModel> {
    match &spec.cnn.weights {
        Some(p) => {
            let m = CnnModel::load(p)?;
            if m.config.classes != spec.predictor.bank.len() {
                return Err(Error::Config(format!("model at {} has {} classes, the bank has {}", p.display(), m.config.classes, spec.predictor.bank.len())));
            }
            Ok(m)
        }
        None => Ok(train_classifier(spec)?.0),
    }
}

pub const CNN_AR: &str = "CNN-AR";

/// Per-drop prediction NMSE, `nmse[method][h]` for horizons `1..=P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDrop {
    pub f_n: f64,
    /// NMSE of the last measured interval (horizon 0).
    pub estimation_nmse: f64,
    pub methods: Vec<String>,
    pub nmse: Vec<Vec<f64>>,
    pub selected: usize,
}

impl PredictionDrop {
    pub fn get(&self, method: &str, horizon: usize) -> Option<f64> {
        if horizon == 0 {
            return Some(self.estimation_nmse);
        }
        let i = self.methods.iter().position(|m| m == method)?;
        self.nmse[i].get(horizon - 1).copied()
    }
}

fn method_names(spec: &ExperimentSpec) -> Vec<String> {
    let mut v: Vec<String> = spec.predictor.orders.iter().map(|q| format!("AR({q})")).collect();
    v.push(CNN_AR.into());
    v
}

/// Measured history then forecast, for one drop at `f_n`.
fn predict_drop(spec: &ExperimentSpec, model: Option<&CnnModel>, bank: &PatternBank, drop: usize, f_n: f64) -> Result<PredictionDrop> {
    let p = &spec.predictor;
    let cfg = SystemConfig { f_n: Some(f_n), speed: None, ..spec.system.clone() };
    let d = drop as u64;
    let len = p.history + p.horizon;
    let ch = ChannelSet::generate_len(&cfg, len, &mut stream(spec.seed, &[purpose::CHANNEL, d]))?;
    let book = build_training_book(&cfg, &mut stream(spec.seed, &[purpose::BOOK, d]))?;
    let mut rng = stream(spec.seed, &[purpose::NOISE, d]);
    let mut hist: Vec<CMat> = Vec::with_capacity(p.history);
    let mut last: Option<EstimateResult> = None;
    for l in 0..p.history {
        let warm = if p.warm_start && !cfg.grouped { hist.last() } else { None };
        let r = estimate_interval(&cfg, &ch, &book, l, cfg.snr_db, &spec.bals, warm, &mut rng)?;
        hist.push(r.e_hat.clone());
        last = Some(r);
    }
    let h_hat = last.ok_or_else(|| Error::Config("history must be at least 1".into()))?.h_hat;
    let truth = |l: usize| ch.composite(l);
    let est_nmse = nmse(&(&h_hat * &hist[p.history - 1]), &truth(p.history - 1))?;
    let score = |preds: &[CMat]| -> Result<Vec<f64>> {
        preds.iter().enumerate().map(|(j, e)| nmse(&(&h_hat * e), &truth(p.history + j))).collect()
    };
    let mut out = Vec::new();
    for &q in &p.orders {
        let ar = fit_from_samples(&hist, q, p.epsilon)?;
        out.push(score(&ar_predict(&hist, &ar, p.horizon)?)?);
    }
    let (selected, preds) = match (p.selection, model) {
        (Selection::Cnn, Some(m)) => cnn_ar_predict(m, bank, &hist, spec.cnn.v.min(hist.len()), p.horizon)?,
        (Selection::Cnn, None) => return Err(Error::Config("CNN selection needs a trained model".into())),
        (Selection::Oracle, _) => {
            let idx = bank.nearest(f_n);
            (idx, ar_predict(&hist, bank.model(idx), p.horizon)?)
        }
    };
    out.push(score(&preds)?);
    Ok(PredictionDrop { f_n, estimation_nmse: est_nmse, methods: method_names(spec), nmse: out, selected })
}

/// Drops with `f_n` cycling through `f_values`; drop `i` of every `f_n`
/// shares its channel, book and noise streams (common random numbers).
pub fn prediction_drops(spec: &ExperimentSpec, model: Option<&CnnModel>, f_values: &[f64]) -> Result<Vec<PredictionDrop>> {
    spec.validate()?;
    if f_values.is_empty() {
        return Err(Error::Config("no f_n values to predict at".into()));
    }
    let bank = build_bank(spec)?;
    par_drops(spec.drops, worker_count(spec.parallelism), |i| predict_drop(spec, model, &bank, i, f_values[i % f_values.len()]))
}

/// Like [`prediction_drops`] but every drop index runs at every `f_n`.
pub fn prediction_grid(spec: &ExperimentSpec, model: Option<&CnnModel>, f_values: &[f64]) -> Result<Vec<Vec<PredictionDrop>>> {
    spec.validate()?;
    let bank = build_bank(spec)?;
    par_drops(spec.drops, worker_count(spec.parallelism), |i| f_values.iter().map(|&f| predict_drop(spec, model, &bank, i, f)).collect())
}

/// Prediction NMSE against the horizon for the sample-fitted AR baselines
/// and CNN-AR. Rows with `f_n = mixed` average drops whose `f_n` cycles
/// through the bank; the other rows sweep `sweep.f_n` at every drop.
pub fn run_prediction(spec: &ExperimentSpec, model: Option<&CnnModel>) -> Result<Table> {
    spec.require(&spec.sweep.f_n, "f_n")?;
    let mixed = prediction_drops(spec, model, &spec.predictor.bank)?;
    let grid = prediction_grid(spec, model, &spec.sweep.f_n)?;
    let methods = method_names(spec);
    let mut t = Table::new(&["f_n", "method", "horizon", "nmse", "drops"]);
    let mut emit = |label: String, drops: &[&PredictionDrop]| {
        for m in &methods {
            for h in 0..=spec.predictor.horizon {
                let v = mean(drops.iter().map(|d| d.get(m, h).unwrap_or(f64::NAN)));
                t.rows.push(vec![label.clone(), m.clone(), h.to_string(), num(v), drops.len().to_string()]);
            }
        }
    };
    emit("mixed".into(), &mixed.iter().collect::<Vec<_>>());
    for (j, &f) in spec.sweep.f_n.iter().enumerate() {
        emit(num(f), &grid.iter().map(|d| &d[j]).collect::<Vec<_>>());
    }
    Ok(t)
}

pub const CSI_KINDS: [&str; 3] = ["perfect", "proposed", "conventional"];

/// Per-drop sum rates, `rate[case][csi][ris][snr]` averaged over the
/// `Q + P` intervals, with `ris` 0 = BD-RIS and 1 = diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SumrateDrop {
    pub rate: Vec<Vec<[Vec<f64>; 2]>>,
    /// Smallest `F_bd - F_diag` over all intervals and CSI kinds, per case.
    pub bd_margin: Vec<f64>,
}

/// `lambda` of each CSI kind for `cfg`.
pub fn lambdas(cfg: &SystemConfig) -> [f64; 3] {
    let (prop, conv) = if cfg.grouped { (Scheme::GcProp, Scheme::GcConv) } else { (Scheme::FcProp, Scheme::FcConv) };
    [1.0, data_fraction(average_overhead(prop, cfg), cfg.t_c), data_fraction(average_overhead(conv, cfg), cfg.t_c)]
}

fn sumrate_drop(spec: &ExperimentSpec, model: Option<&CnnModel>, bank: &PatternBank, cases: &[SystemConfig], drop: usize) -> Result<SumrateDrop> {
    let d = drop as u64;
    let base = &spec.system;
    let (q, p) = (base.q, base.p);
    let ch = ChannelSet::generate_len(base, q + p, &mut stream(spec.seed, &[purpose::CHANNEL, d]))?;
    let snrs = &spec.sweep.downlink_snr_db;
    let mut out = SumrateDrop { rate: vec![], bd_margin: vec![] };
    for (ci, cfg) in cases.iter().enumerate() {
        let c = ci as u64;
        let topo = cfg.topology();
        let lam = lambdas(cfg);
        // proposed: estimates over Q, forecast over P
        let book = build_training_book(cfg, &mut stream(spec.seed, &[purpose::BOOK, d, c]))?;
        let mut rng = stream(spec.seed, &[purpose::NOISE, d, c, 0]);
        let mut hist = Vec::with_capacity(q);
        let mut h_hat = None;
        for l in 0..q {
            let warm = if spec.predictor.warm_start && !cfg.grouped { hist.last() } else { None };
            let r = estimate_interval(cfg, &ch, &book, l, cfg.snr_db, &spec.bals, warm, &mut rng)?;
            hist.push(r.e_hat.clone());
            h_hat = Some(r.h_hat);
        }
        let h_hat = h_hat.ok_or_else(|| Error::Config("Q must be at least 1".into()))?;
        let forecast = match (spec.predictor.selection, model) {
            (Selection::Cnn, Some(m)) => cnn_ar_predict(m, bank, &hist, spec.cnn.v.min(hist.len()), p)?.1,
            (Selection::Cnn, None) => return Err(Error::Config("CNN selection needs a trained model".into())),
            (Selection::Oracle, _) => ar_predict(&hist, bank.model(bank.nearest(base.f_n())), p)?,
        };
        let e_prop: Vec<CMat> = hist.into_iter().chain(forecast).collect();
        let ls = LsEstimator::new(cfg.group_size(), cfg.groups.max(1))?;
        let mut ls_rng = stream(spec.seed, &[purpose::NOISE, d, c, 1]);
        let mut rate = vec![[vec![0.0; snrs.len()], vec![0.0; snrs.len()]]; 3];
        let mut margin = f64::INFINITY;
        for l in 0..q + p {
            let z = ls.estimate(&ls.observe(&ch, l, cfg.snr_db, cfg.pilot_power, &mut ls_rng)?, l)?;
            let csis = [
                Csi::Factors { h: ch.h.clone(), e: ch.e(l).clone() },
                Csi::Factors { h: h_hat.clone(), e: e_prop[l].clone() },
                Csi::Composite { z: z.z_hat, n: cfg.n, k: cfg.k, groups: cfg.groups.max(1) },
            ];
            for (k, csi) in csis.iter().enumerate() {
                let diag = optimize(csi, topo, true, &spec.beamforming)?;
                let bd = optimize(csi, topo, false, &spec.beamforming)?;
                margin = margin.min(bd.objective() - diag.objective());
                for (ri, sol) in [&bd, &diag].into_iter().enumerate() {
                    let g = ch.cascade(&sol.theta, l);
                    for (si, &snr) in snrs.iter().enumerate() {
                        let s = sinrs(sol, &g, 10f64.powf(snr / 10.0), 1.0)?;
                        rate[k][ri][si] += sum_rate(&s, lam[k])? / (q + p) as f64;
                    }
                }
            }
        }
        out.rate.push(rate);
        out.bd_margin.push(margin);
    }
    Ok(out)
}

pub fn sumrate_drops(spec: &ExperimentSpec, model: Option<&CnnModel>) -> Result<Vec<SumrateDrop>> {
    spec.validate()?;
    spec.require(&spec.sweep.downlink_snr_db, "downlink_snr_db")?;
    spec.require(&spec.sweep.topologies, "topologies")?;
    if spec.predictor.bank_order > spec.system.q {
        return Err(Error::Config(format!(
            "bank_order {} needs at least as many estimated intervals, q is {}",
            spec.predictor.bank_order, spec.system.q
        )));
    }
    let bank = build_bank(spec)?;
    let cases: Vec<SystemConfig> = spec.sweep.topologies.iter().map(|c| spec.case(c)).collect();
    par_drops(spec.drops, worker_count(spec.parallelism), |i| sumrate_drop(spec, model, &bank, &cases, i))
}

/// Average downlink sum rate against the downlink SNR for perfect,
/// proposed and conventional CSI, each with BD-RIS and diagonal RIS.
pub fn run_sumrate(spec: &ExperimentSpec, model: Option<&CnnModel>) -> Result<Table> {
    let drops = sumrate_drops(spec, model)?;
    let mut t = Table::new(&["groups", "csi", "ris", "snr_db", "sum_rate", "lambda", "drops"]);
    for (ci, c) in spec.sweep.topologies.iter().enumerate() {
        let lam = lambdas(&spec.case(c));
        for (k, name) in CSI_KINDS.iter().enumerate() {
            for (ri, ris) in ["bd", "diagonal"].iter().enumerate() {
                for (si, &snr) in spec.sweep.downlink_snr_db.iter().enumerate() {
                    t.rows.push(vec![
                        c.groups.to_string(),
                        name.to_string(),
                        ris.to_string(),
                        num(snr),
                        num(mean(drops.iter().map(|d| d.rate[ci][k][ri][si]))),
                        num(lam[k]),
                        spec.drops.to_string(),
                    ]);
                }
            }
        }
    }
    Ok(t)
}

/// Pilot overhead table for `overhead.rows` at the system's `Q` and `P`.
pub fn run_overhead(spec: &ExperimentSpec) -> Result<Table> {
    spec.validate()?;
    let mut t = Table::new(&["label", "m", "groups", "t", "coefficient", "p_a_conventional", "p_a_proposed", "reduction_percent"]);
    for r in &spec.overhead.rows {
        let cfg = spec.case(&TopologyCase { groups: r.groups, t: r.t });
        let cfg = SystemConfig { m: r.m, ..cfg };
        cfg.validate()?;
        let row = overhead_row(&r.label, r.groups > 1, &cfg)?;
        t.rows.push(vec![
            r.label.clone(),
            r.m.to_string(),
            r.groups.to_string(),
            r.t.to_string(),
            row.coefficient.to_string(),
            num(row.p_a_conventional),
            num(row.p_a_proposed),
            format!("{:.2}", row.reduction_percent),
        ]);
    }
    Ok(t)
}

/// Operations counted by the instrumented kernels for one fully-connected
/// run of `scheme` at `m` elements: the measured cost of a BALS iteration
/// times `iterations` per training interval over `Q` intervals, or one
/// DFT-LS estimate per interval over `Q + P`.
pub fn measured_flops(scheme: Scheme, base: &SystemConfig, m: usize, t: usize, iterations: usize, seed: u64) -> Result<u64> {
    let cfg = SystemConfig { m, t, grouped: false, groups: 1, ..base.clone() };
    let mut rng = stream(seed, &[purpose::CHANNEL, m as u64]);
    if scheme.is_proposed() {
        let ch = ChannelSet::generate_len(&cfg, 1, &mut rng)?;
        let book = build_training_book(&cfg, &mut rng)?;
        let obs = simulate_training(&ch, &book, 0, cfg.snr_db, cfg.pilot_power, &mut rng)?;
        let slices = obs.y.slices();
        let e0 = spectral_init(&slices, &book.thetas)?;
        let settings = BalsSettings { kappa: f64::MIN_POSITIVE, i_max: iterations, ..BalsSettings::default() };
        flops::reset();
        let r = bals_slices(&slices, &book.thetas, e0, &settings)?;
        // runs that reach machine precision stop early; scale per iteration
        let per = flops::read() as f64 / r.iterations.max(1) as f64;
        Ok((per * iterations as f64 * cfg.q as f64).round() as u64)
    } else {
        let est = LsEstimator::new(m, 1)?;
        let slices: Vec<CMat> = (0..est.pilot_len()).map(|_| cn_matrix(&mut rng, cfg.n, cfg.k, 1.0)).collect();
        flops::reset();
        est.estimate(&slices, 0)?;
        Ok(flops::read() * cfg.intervals() as u64)
    }
}

/// Model and measured operation counts over `overhead.measure_m`.
pub fn run_complexity(spec: &ExperimentSpec) -> Result<Table> {
    spec.validate()?;
    let o = &spec.overhead;
    let mut t = Table::new(&["scheme", "m", "t", "iterations", "model_flops", "measured_flops"]);
    for scheme in [Scheme::FcProp, Scheme::FcConv] {
        for &m in &o.measure_m {
            let cfg = SystemConfig { m, t: o.measure_t, grouped: false, groups: 1, ..spec.system.clone() };
            let measured = measured_flops(scheme, &spec.system, m, o.measure_t, o.iterations, spec.seed)?;
            t.rows.push(vec![
                scheme.to_string(),
                m.to_string(),
                o.measure_t.to_string(),
                o.iterations.to_string(),
                num(flop_model(scheme, &cfg, o.iterations)),
                measured.to_string(),
            ]);
        }
    }
    Ok(t)
}

/// Writes `text` to `path` through a temporary file so a failed run leaves
/// no partial output.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Short human summary of a training report.
pub fn describe_training(r: &TrainReport, accuracy: f64) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "epochs = {}, best epoch = {}, initial val loss = {:.4e}, best val loss = {:.4e}, stalled = {}, held-out accuracy = {:.3}",
        r.val_loss.len(),
        r.best_epoch,
        r.initial_val_loss,
        r.val_loss.iter().copied().fold(f64::INFINITY, f64::min),
        r.stalled,
        accuracy
    );
    s
}
