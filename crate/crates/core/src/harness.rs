//! Experiment runner: scenario presets, sweeps, Monte Carlo aggregation and
//! CSV reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::ActionSpace;
use crate::dqn::{self, DqnConfig, DqnError, DqnPolicy};
use crate::env::{run_episode, EnvError, Environment, MetricsSummary};
use crate::model::{build_topology, ConfigError, PerDevice, ScenarioConfig, TrafficModel};
use crate::rng::{derive_seed, labels, stream};
use crate::schedulers::{PolicyName, Scheduler};
use crate::stats::{welch, Summary};

/// Significance level for pairwise comparisons.
pub const ALPHA: f64 = 0.01;

/// Seed behind the loss probabilities and periods of the general presets.
pub const PRESET_SEED: u64 = 2021;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("policy dqn needs a checkpoint or a training section")]
    MissingCheckpoint,
    #[error("cannot compare: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `Σ_t Σ_m AoI^TBS / M`.
    AoiTbs,
    AoiTbsPerSlot,
    AoiUav,
    AoiUavPerSlot,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::AoiTbs, Metric::AoiTbsPerSlot, Metric::AoiUav, Metric::AoiUavPerSlot];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::AoiTbs => "aoi_tbs",
            Metric::AoiTbsPerSlot => "aoi_tbs_per_slot",
            Metric::AoiUav => "aoi_uav",
            Metric::AoiUavPerSlot => "aoi_uav_per_slot",
        }
    }

    pub fn of(&self, m: &MetricsSummary) -> f64 {
        match self {
            Metric::AoiTbs => m.aoi_tbs,
            Metric::AoiTbsPerSlot => m.aoi_tbs_per_slot,
            Metric::AoiUav => m.aoi_uav,
            Metric::AoiUavPerSlot => m.aoi_uav_per_slot,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn d_loss_range() -> [f64; 2] {
    [0.1, 0.5]
}
fn d_periods() -> Vec<u32> {
    vec![2, 3, 4]
}
fn d_preset_seed() -> u64 {
    PRESET_SEED
}

/// Heterogeneous losses and periods drawn per device index, so device `m`
/// gets the same values in every scenario built from the same seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralConditions {
    #[serde(default = "d_loss_range")]
    pub loss_range: [f64; 2],
    #[serde(default = "d_periods")]
    pub periods: Vec<u32>,
    #[serde(default = "d_preset_seed")]
    pub seed: u64,
}

impl Default for GeneralConditions {
    fn default() -> Self {
        GeneralConditions {
            loss_range: d_loss_range(),
            periods: d_periods(),
            seed: PRESET_SEED,
        }
    }
}

impl GeneralConditions {
    /// `(l_s, l_u, p)` of device `m`.
    pub fn draw(&self, m: usize) -> (f64, f64, u32) {
        let mut rng = stream(derive_seed(self.seed, m as u64), labels::PRESET);
        let [lo, hi] = self.loss_range;
        let mut loss = || if hi > lo { rng.random_range(lo..hi) } else { lo };
        let ls = loss();
        let lu = loss();
        let p = self.periods[rng.random_range(0..self.periods.len())];
        (ls, lu, p)
    }

    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        let draws: Vec<_> = (0..cfg.num_devices).map(|m| self.draw(m)).collect();
        cfg.sample_loss = PerDevice::List(draws.iter().map(|d| d.0).collect());
        cfg.update_loss = PerDevice::List(draws.iter().map(|d| d.1).collect());
        cfg.traffic = TrafficModel::Periodic {
            periods: PerDevice::List(draws.iter().map(|d| d.2).collect()),
        };
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let [lo, hi] = self.loss_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(HarnessError::Spec("loss_range must satisfy 0 <= lo <= hi < 1".into()));
        }
        if self.periods.is_empty() || self.periods.contains(&0) {
            return Err(HarnessError::Spec("periods must be a non-empty list of positive values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Devices,
    Uavs,
    SampleChannels,
    UpdateChannels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Vec<usize>,
}

/// Where the `dqn` policy comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnSource {
    pub checkpoint: Option<PathBuf>,
    pub train: Option<DqnConfig>,
}

fn d_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Scenarios to run; with a sweep, exactly one base scenario.
    pub scenarios: Vec<ScenarioConfig>,
    pub sweep: Option<Sweep>,
    /// Overrides losses and traffic of every (expanded) scenario.
    pub general: Option<GeneralConditions>,
    pub policies: Vec<PolicyName>,
    pub n_runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "d_metrics")]
    pub metrics: Vec<Metric>,
    pub dqn: Option<DqnSource>,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Spec(m.to_string()));
        if self.n_runs == 0 {
            return bad("n_runs must be at least 1");
        }
        if self.policies.is_empty() {
            return bad("no policies listed");
        }
        if self.scenarios.is_empty() {
            return bad("no scenarios listed");
        }
        if let Some(sweep) = &self.sweep {
            if self.scenarios.len() != 1 {
                return bad("a sweep needs exactly one base scenario");
            }
            if sweep.values.is_empty() {
                return bad("sweep has no values");
            }
        }
        if let Some(g) = &self.general {
            g.validate()?;
        }
        if self.policies.contains(&PolicyName::Dqn) {
            match &self.dqn {
                Some(DqnSource { checkpoint: None, train: None }) | None => return Err(HarnessError::MissingCheckpoint),
                _ => {}
            }
        }
        Ok(())
    }

    /// The concrete scenarios after sweep expansion and general conditions.
    pub fn expand(&self) -> Result<Vec<ScenarioConfig>, HarnessError> {
        let mut out = match &self.sweep {
            None => self.scenarios.clone(),
            Some(sweep) => sweep
                .values
                .iter()
                .map(|&v| {
                    let mut c = self.scenarios[0].clone();
                    match sweep.axis {
                        Axis::Devices => c.num_devices = v,
                        Axis::Uavs => c.num_uavs = v,
                        Axis::SampleChannels => c.sample_channels = v,
                        Axis::UpdateChannels => c.update_channels = v,
                    }
                    c
                })
                .collect(),
        };
        for c in &mut out {
            if let Some(g) = &self.general {
                g.apply(c);
            }
            c.validate()?;
        }
        Ok(out)
    }
}

/// Fixed deployment of a scenario, drawn from its own seed.
pub fn environment(cfg: &ScenarioConfig) -> Environment {
    let topo = build_topology(cfg, &mut stream(cfg.seed, labels::TOPOLOGY));
    Environment::new(cfg.clone(), topo)
}

fn desk_dqn(episodes: usize) -> DqnConfig {
    DqnConfig {
        hidden: vec![64, 64],
        episodes,
        ..DqnConfig::default()
    }
}

pub const PRESETS: [&str; 10] = [
    "small-ideal",
    "small-general",
    "desk-ideal",
    "desk-general",
    "var-M",
    "var-N",
    "var-L",
    "var-K",
    "large",
    "large-general",
];

pub fn preset(name: &str) -> Result<ExperimentSpec, HarnessError> {
    let all = vec![
        PolicyName::MafMad,
        PolicyName::Maf,
        PolicyName::Rr,
        PolicyName::Random,
        PolicyName::Dqn,
    ];
    let base = |scenarios: Vec<ScenarioConfig>| ExperimentSpec {
        name: name.to_string(),
        scenarios,
        sweep: None,
        general: None,
        policies: PolicyName::BASELINES.to_vec(),
        n_runs: 10_000,
        base_seed: 0,
        metrics: Metric::ALL.to_vec(),
        dqn: None,
        output: None,
    };
    let sweep = |axis, values: Vec<usize>, cfg| ExperimentSpec {
        sweep: Some(Sweep { axis, values }),
        general: Some(GeneralConditions::default()),
        ..base(vec![cfg])
    };
    let with_dqn = |spec: ExperimentSpec, train: DqnConfig| ExperimentSpec {
        policies: all.clone(),
        dqn: Some(DqnSource {
            checkpoint: None,
            train: Some(train),
        }),
        ..spec
    };
    let small = ScenarioConfig::ideal(12, 2, 1, 1, 10);
    let desk = ScenarioConfig::ideal(4, 1, 1, 1, 10);
    let large = vec![ScenarioConfig::ideal(60, 2, 2, 2, 10), ScenarioConfig::ideal(45, 3, 2, 2, 10)];
    let small_dqn = DqnConfig {
        hidden: vec![128, 128],
        episodes: 10_000,
        ..DqnConfig::default()
    };
    let spec = match name {
        "small-ideal" => with_dqn(base(vec![small]), small_dqn),
        "small-general" => with_dqn(
            ExperimentSpec {
                general: Some(GeneralConditions::default()),
                ..base(vec![small])
            },
            small_dqn,
        ),
        "desk-ideal" => with_dqn(base(vec![desk]), desk_dqn(3_000)),
        "desk-general" => with_dqn(
            ExperimentSpec {
                general: Some(GeneralConditions::default()),
                ..base(vec![desk])
            },
            desk_dqn(10_000),
        ),
        "var-M" => sweep(Axis::Devices, vec![6, 9, 12, 15, 18], ScenarioConfig::ideal(6, 3, 2, 1, 10)),
        "var-N" => sweep(Axis::Uavs, vec![2, 3, 5], ScenarioConfig::ideal(10, 2, 2, 1, 10)),
        "var-L" => sweep(Axis::SampleChannels, vec![1, 2, 3], ScenarioConfig::ideal(9, 3, 1, 1, 10)),
        "var-K" => sweep(Axis::UpdateChannels, vec![1, 2, 3], ScenarioConfig::ideal(9, 3, 3, 1, 10)),
        "large" => with_dqn(base(large), DqnConfig::default()),
        "large-general" => with_dqn(
            ExperimentSpec {
                general: Some(GeneralConditions::default()),
                ..base(large)
            },
            DqnConfig::default(),
        ),
        other => return Err(HarnessError::UnknownPreset(other.to_string())),
    };
    Ok(spec)
}

/// Input of the `train` command: one scenario and the DQN settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub scenario: ScenarioConfig,
    pub general: Option<GeneralConditions>,
    #[serde(default)]
    pub dqn: DqnConfig,
}

impl TrainSpec {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let spec: TrainSpec = toml::from_str(&std::fs::read_to_string(path)?)?;
        spec.dqn.validate()?;
        if let Some(g) = &spec.general {
            g.validate()?;
        }
        Ok(spec)
    }

    pub fn scenario(&self) -> Result<ScenarioConfig, HarnessError> {
        let mut c = self.scenario.clone();
        if let Some(g) = &self.general {
            g.apply(&mut c);
        }
        c.validate()?;
        Ok(c)
    }
}

/// One aggregated CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub policy: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_runs: usize,
    pub seconds: f64,
}

/// Metric name used when the dqn policy cannot be built because the joint
/// action space is too large; `mean` then holds the action count.
pub const CAP_EXCEEDED: &str = "action_space_exceeds_cap";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    /// Record wall-clock seconds; off gives byte-identical output.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { jobs: 0, timing: true }
    }
}

/// Runs `n_runs` episodes with seeds `base_seed + i`; results come back in
/// seed order whatever the thread count.
pub fn simulate<F>(env: &Environment, make: F, n_runs: usize, base_seed: u64) -> Result<Vec<MetricsSummary>, EnvError>
where
    F: Fn() -> Box<dyn Scheduler + Send> + Sync,
{
    (0..n_runs)
        .into_par_iter()
        .map_init(&make, |sched, i| {
            let ep = run_episode(env, sched.as_mut(), base_seed.wrapping_add(i as u64), false)?;
            ep.metrics.finalize(env.num_devices(), env.horizon())
        })
        .collect()
}

pub fn summarize(runs: &[MetricsSummary], metric: Metric) -> Summary {
    let xs: Vec<f64> = runs.iter().map(|r| metric.of(r)).collect();
    Summary::of(&xs)
}

fn dqn_policy(env: &Environment, source: &DqnSource) -> Result<DqnPolicy, HarnessError> {
    match source {
        DqnSource {
            checkpoint: Some(path), ..
        } => {
            let cfg = source.train.clone().unwrap_or_default();
            Ok(dqn::load_policy(path, env, &cfg)?)
        }
        DqnSource { train: Some(cfg), .. } => Ok(dqn::train(env.clone(), cfg.clone())?.policy),
        _ => Err(HarnessError::MissingCheckpoint),
    }
}

fn run_scenario(
    spec: &ExperimentSpec,
    cfg: &ScenarioConfig,
    timing: bool,
) -> Result<Vec<ResultRow>, HarnessError> {
    let env = environment(cfg);
    let scenario = cfg.fingerprint();
    let mut rows = Vec::new();
    for &policy in &spec.policies {
        let started = Instant::now();
        let runs = match policy.heuristic() {
            Some(_) => simulate(&env, || policy.heuristic().expect("heuristic"), spec.n_runs, spec.base_seed)?,
            None => {
                let source = spec.dqn.as_ref().ok_or(HarnessError::MissingCheckpoint)?;
                let cap = source.train.as_ref().map(|c| c.action_cap).unwrap_or(crate::actions::DEFAULT_ACTION_CAP);
                let count = ActionSpace::count(&env.topology, cfg.sample_channels, cfg.update_channels);
                if count > cap as u128 {
                    rows.push(ResultRow {
                        scenario: scenario.clone(),
                        policy: policy.to_string(),
                        metric: CAP_EXCEEDED.to_string(),
                        mean: count as f64,
                        stderr: f64::NAN,
                        n_runs: 0,
                        seconds: 0.0,
                    });
                    continue;
                }
                let trained = dqn_policy(&env, source)?;
                simulate(&env, || Box::new(trained.clone()), spec.n_runs, spec.base_seed)?
            }
        };
        let seconds = if timing { started.elapsed().as_secs_f64() } else { 0.0 };
        for &metric in &spec.metrics {
            let s = summarize(&runs, metric);
            rows.push(ResultRow {
                scenario: scenario.clone(),
                policy: policy.to_string(),
                metric: metric.to_string(),
                mean: s.mean,
                stderr: s.stderr(),
                n_runs: s.n,
                seconds,
            });
        }
    }
    Ok(rows)
}

pub fn run_experiment(spec: &ExperimentSpec, opts: RunOptions) -> Result<Vec<ResultRow>, HarnessError> {
    spec.validate()?;
    let scenarios = spec.expand()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs).build()?;
    pool.install(|| {
        let mut rows = Vec::new();
        for cfg in &scenarios {
            rows.extend(run_scenario(spec, cfg, opts.timing)?);
        }
        Ok(rows)
    })
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

/// One ranked policy against one lower-ranked competitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub metric: String,
    pub rank: usize,
    pub policy: String,
    pub versus: String,
    /// `(mean_versus - mean_policy) / mean_versus`.
    pub gap: f64,
    pub p_value: f64,
    pub significant: bool,
}

pub fn gap(mean_p: f64, mean_q: f64) -> f64 {
    (mean_q - mean_p) / mean_q
}

fn summary_of(row: &ResultRow) -> Summary {
    let n = row.n_runs;
    Summary {
        n,
        mean: row.mean,
        variance: row.stderr * row.stderr * n as f64,
    }
}

/// Ranks policies per (scenario, metric) by mean, lowest first, and compares
/// each with every policy ranked below it.
pub fn compare_report(rows: &[ResultRow]) -> Result<Vec<Comparison>, HarnessError> {
    let mut groups: BTreeMap<(String, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.n_runs > 0) {
        groups.entry((r.scenario.clone(), r.metric.clone())).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((scenario, metric), mut group) in groups {
        if group.len() < 2 {
            continue;
        }
        group.sort_by(|a, b| a.mean.total_cmp(&b.mean).then_with(|| a.policy.cmp(&b.policy)));
        for (i, p) in group.iter().enumerate() {
            for q in &group[i + 1..] {
                let w = welch(&summary_of(p), &summary_of(q));
                out.push(Comparison {
                    scenario: scenario.clone(),
                    metric: metric.clone(),
                    rank: i + 1,
                    policy: p.policy.clone(),
                    versus: q.policy.clone(),
                    gap: gap(p.mean, q.mean),
                    p_value: w.p_value,
                    significant: w.p_value < ALPHA,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Mismatch(
            "no scenario has results for two or more policies".into(),
        ));
    }
    Ok(out)
}

pub fn write_report<W: Write>(report: &[Comparison], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for c in report {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(policy: &str, mean: f64, stderr: f64) -> ResultRow {
        ResultRow {
            scenario: "s".into(),
            policy: policy.into(),
            metric: "aoi_tbs".into(),
            mean,
            stderr,
            n_runs: 1000,
            seconds: 0.0,
        }
    }

    #[test]
    fn presets_match_the_settings() {
        let s = preset("small-ideal").unwrap();
        let c = &s.expand().unwrap()[0];
        assert_eq!((c.num_devices, c.num_uavs, c.sample_channels, c.update_channels, c.horizon), (12, 2, 1, 1, 10));
        assert!(c.is_ideal());

        let large = preset("large").unwrap().expand().unwrap();
        let shapes: Vec<_> = large.iter().map(|c| (c.num_devices, c.num_uavs, c.sample_channels, c.update_channels)).collect();
        assert_eq!(shapes, vec![(60, 2, 2, 2), (45, 3, 2, 2)]);

        let var_m = preset("var-M").unwrap().expand().unwrap();
        assert!(var_m.iter().all(|c| c.num_uavs == 3 && c.sample_channels == 2 && c.update_channels == 1));
        assert!(var_m.windows(2).all(|w| w[0].num_devices < w[1].num_devices));
        assert!(var_m.iter().all(|c| !c.is_ideal()));

        assert!(matches!(preset("nope"), Err(HarnessError::UnknownPreset(_))));
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn general_draws_depend_on_device_index_only() {
        let g = GeneralConditions::default();
        let mut a = ScenarioConfig::ideal(6, 3, 2, 1, 10);
        let mut b = ScenarioConfig::ideal(12, 3, 2, 1, 10);
        g.apply(&mut a);
        g.apply(&mut b);
        for m in 0..6 {
            assert_eq!(a.sample_loss_of(m), b.sample_loss_of(m));
            assert_eq!(a.update_loss_of(m), b.update_loss_of(m));
        }
        for m in 0..12 {
            let (ls, lu, p) = g.draw(m);
            assert!((0.1..0.5).contains(&ls) && (0.1..0.5).contains(&lu));
            assert!([2, 3, 4].contains(&p));
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = preset("small-ideal").unwrap();
        s.n_runs = 0;
        assert!(s.validate().is_err());
        let mut s = preset("small-ideal").unwrap();
        s.dqn = None;
        assert!(matches!(s.validate(), Err(HarnessError::MissingCheckpoint)));
        let mut s = preset("var-K").unwrap();
        s.scenarios.push(s.scenarios[0].clone());
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_toml_round_trip() {
        let text = r#"
name = "mine"
policies = ["maf-mad", "rr"]
n_runs = 20
base_seed = 4
metrics = ["aoi_tbs"]

[[scenarios]]
num_devices = 6
num_uavs = 2
sample_channels = 1
update_channels = 1
horizon = 10
traffic = { model = "generate-at-will" }
sample_loss = 0.0
update_loss = 0.0
association = "explicit-equal-split"
seed = 0

[sweep]
axis = "update-channels"
values = [1, 2]
"#;
        let spec = ExperimentSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.expand().unwrap().len(), 2);
        let rows = run_experiment(&spec, RunOptions { jobs: 1, timing: false }).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.metric == "aoi_tbs" && r.n_runs == 20));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let mut spec = preset("small-general").unwrap();
        spec.policies = PolicyName::BASELINES.to_vec();
        spec.n_runs = 300;
        let one = run_experiment(&spec, RunOptions { jobs: 1, timing: false }).unwrap();
        let four = run_experiment(&spec, RunOptions { jobs: 4, timing: false }).unwrap();
        assert_eq!(one, four);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_rows(&one, &mut a).unwrap();
        write_rows(&four, &mut b).unwrap();
        assert_eq!(a, b);
        let header = String::from_utf8(a).unwrap();
        assert!(header.starts_with("scenario,policy,metric,mean,stderr,n_runs,seconds\n"));
        assert_eq!(read_rows(header.as_bytes()).unwrap(), one);
    }

    #[test]
    fn large_dqn_records_the_cap() {
        let mut spec = preset("large").unwrap();
        spec.n_runs = 2;
        spec.policies = vec![PolicyName::MafMad, PolicyName::Dqn];
        let rows = run_experiment(&spec, RunOptions { jobs: 1, timing: false }).unwrap();
        let capped: Vec<_> = rows.iter().filter(|r| r.metric == CAP_EXCEEDED).collect();
        assert_eq!(capped.len(), 2);
        assert_eq!(capped[0].mean, (435u64 * 435 * 1770) as f64);
        assert_eq!(rows.iter().filter(|r| r.policy == "maf-mad").count(), 8);
    }

    #[test]
    fn gap_arithmetic() {
        assert!((gap(8.0, 10.0) - 0.2).abs() < 1e-12);
        let report = compare_report(&[row("a", 8.0, 0.05), row("b", 10.0, 0.05)]).unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!((report[0].policy.as_str(), report[0].versus.as_str()), ("a", "b"));
        assert!((report[0].gap - 0.2).abs() < 1e-12);
        assert!(report[0].significant);
    }

    #[test]
    fn identical_policies_are_not_significant() {
        let report = compare_report(&[row("a", 9.0, 0.1), row("b", 9.0, 0.1)]).unwrap();
        assert_eq!(report[0].gap, 0.0);
        assert!(!report[0].significant);
    }

    #[test]
    fn comparison_needs_a_common_scenario() {
        let mut other = row("b", 9.0, 0.1);
        other.scenario = "t".into();
        assert!(matches!(compare_report(&[row("a", 9.0, 0.1), other]), Err(HarnessError::Mismatch(_))));
    }
}
