use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{DemandProfile, SimError};
use crate::grid::{GridTopology, Line};
use crate::market::{load_units, GenerationUnit};
use crate::nn::InitScheme;
use crate::rl::{AgentConfig, Method, NoiseSchedule};

/// Line sets removed by the disconnection experiments on the 30-bus system (1-based labels).
pub const FAULT_LINES_3: [(usize, usize); 3] = [(3, 4), (8, 6), (10, 21)];
pub const FAULT_LINES_5: [(usize, usize); 5] = [(3, 4), (7, 6), (16, 17), (10, 21), (24, 25)];
/// The ambiguous entry "4,6- 2-5" is read as lines 4-6 and 2-5.
pub const FAULT_LINES_10: [(usize, usize); 10] = [
    (1, 2),
    (3, 4),
    (4, 6),
    (2, 5),
    (1, 3),
    (2, 4),
    (4, 12),
    (29, 30),
    (27, 28),
    (19, 20),
];
pub const FAULT_IDS: [u32; 3] = [3, 5, 10];

/// Episode loop and learner settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub agent: AgentConfig,
    pub noise: NoiseSchedule,
}

/// Seed layout. Agent and demand streams are independent, so changing one agent's
/// seed leaves the demand trajectory untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Seeds {
    pub base: u64,
    /// Pinned demand seed; derived from `base` when absent.
    pub demand: Option<u64>,
    pub agent_overrides: BTreeMap<usize, u64>,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Self {
            base,
            demand: None,
            agent_overrides: BTreeMap::new(),
        }
    }

    pub fn demand_seed(&self) -> u64 {
        self.demand.unwrap_or(self.base ^ 0x5eed_d3a4_d000_0000)
    }

    pub fn agent(&self, unit: usize) -> u64 {
        self.agent_overrides
            .get(&unit)
            .copied()
            .unwrap_or_else(|| self.base.wrapping_mul(1_000_003).wrapping_add(unit as u64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub method: Method,
    /// Topology before any line removal.
    pub base_topology: GridTopology,
    pub topology: GridTopology,
    pub removed_lines: Vec<Line>,
    pub units: Vec<GenerationUnit>,
    /// `Some(k)` units never learn and always bid `k`.
    pub fixed_bids: Vec<Option<f64>>,
    pub training: TrainingConfig,
    pub evaluation_episodes: usize,
    pub demand: DemandProfile,
    pub seeds: Seeds,
    pub ten_line_fault: Vec<Line>,
    pub fault_id: Option<u32>,
    /// Subtract each unit's fixed cost from reported per-step profit.
    pub report_fixed_cost: bool,
}

impl Scenario {
    /// Minimal scenario with default hyperparameters; demand follows the default profile.
    pub fn new(
        name: &str,
        topology: GridTopology,
        units: Vec<GenerationUnit>,
        method: Method,
    ) -> Self {
        let demand = DemandProfile::default_for(&units, 0);
        let mut s = Self {
            name: name.into(),
            method,
            base_topology: topology.clone(),
            topology,
            removed_lines: vec![],
            fixed_bids: vec![None; units.len()],
            units,
            training: TrainingConfig {
                episodes: 50,
                steps_per_episode: 720,
                agent: AgentConfig::default(),
                noise: NoiseSchedule::default(),
            },
            evaluation_episodes: 1,
            demand,
            seeds: Seeds::from_base(0),
            ten_line_fault: default_ten_line_fault(),
            fault_id: None,
            report_fixed_cost: false,
        };
        s.set_seed(0);
        s
    }

    /// Resets the base seed; a pinned demand seed is kept.
    pub fn set_seed(&mut self, base: u64) {
        self.seeds.base = base;
        self.demand.seed = self.seeds.demand_seed();
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.training.episodes < 1 {
            return bad("training.episodes must be at least 1".into());
        }
        if self.training.steps_per_episode < 1 {
            return bad("training.steps_per_episode must be at least 1".into());
        }
        if self.units.is_empty() {
            return bad("no units".into());
        }
        if self.fixed_bids.len() != self.units.len() {
            return bad("fixed bid list does not match the units".into());
        }
        let g = self.training.agent.gamma;
        if !(0.0..1.0).contains(&g) {
            return bad(format!("gamma {g} outside [0, 1)"));
        }
        let tau = self.training.agent.tau;
        if !(tau > 0.0 && tau <= 1.0) {
            return bad(format!("tau {tau} outside (0, 1]"));
        }
        if self.training.agent.batch_size == 0 || self.training.agent.buffer_capacity == 0 {
            return bad("batch size and buffer capacity must be positive".into());
        }
        for u in &self.units {
            u.validate()?;
            if u.bus >= self.topology.n_buses() {
                return bad(format!(
                    "unit {} sits on bus {} but the case has {} buses",
                    u.id + 1,
                    u.bus + 1,
                    self.topology.n_buses()
                ));
            }
            if let Some(b) = self.topology.bus_of(u.id) {
                if b != u.bus {
                    return bad(format!(
                        "unit {} is on bus {} in the unit file but bus {} in the case file",
                        u.id + 1,
                        u.bus + 1,
                        b + 1
                    ));
                }
            }
        }
        for (u, bid) in self.units.iter().zip(&self.fixed_bids) {
            if let Some(k) = bid {
                if !(1.0..=u.k_max).contains(k) {
                    return bad(format!(
                        "fixed bid {k} for unit {} outside [1, k_max]",
                        u.id + 1
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn learners(&self) -> impl Iterator<Item = &GenerationUnit> {
        self.units
            .iter()
            .zip(&self.fixed_bids)
            .filter(|(_, f)| f.is_none())
            .map(|(u, _)| u)
    }

    /// Loads a scenario file; relative paths inside are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, SimError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        file.resolve(base_dir)
    }
}

pub(crate) fn default_ten_line_fault() -> Vec<Line> {
    FAULT_LINES_10
        .iter()
        .map(|&(a, b)| Line::from_labels(a, b).expect("distinct labels"))
        .collect()
}

fn parse_line(s: &str) -> Result<Line, SimError> {
    let err = || SimError::Config(format!("bad line `{s}` (expected `a-b`)"));
    let (a, b) = s.split_once('-').ok_or_else(err)?;
    let a = a.trim().parse::<usize>().map_err(|_| err())?;
    let b = b.trim().parse::<usize>().map_err(|_| err())?;
    Line::from_labels(a, b).map_err(|_| err())
}

/// Line set for a disconnection experiment.
pub fn fault_lines(fault_id: u32, ten_line: &[Line]) -> Result<Vec<Line>, SimError> {
    let labels: &[(usize, usize)] = match fault_id {
        3 => &FAULT_LINES_3,
        5 => &FAULT_LINES_5,
        10 => return Ok(ten_line.to_vec()),
        other => return Err(SimError::UnknownFault(other)),
    };
    Ok(labels
        .iter()
        .map(|&(a, b)| Line::from_labels(a, b).expect("distinct labels"))
        .collect())
}

/// Copy of a 30-bus scenario with the lines of `fault_id` disconnected.
pub fn apply_fault_scenario(scenario: &Scenario, fault_id: u32) -> Result<Scenario, SimError> {
    let removed = fault_lines(fault_id, &scenario.ten_line_fault)?;
    if scenario.base_topology.n_buses() != 30 {
        return Err(SimError::Config(format!(
            "fault scenarios apply to the 30-bus system, got {} buses",
            scenario.base_topology.n_buses()
        )));
    }
    let mut out = scenario.clone();
    out.topology = scenario.base_topology.remove_lines(&removed)?;
    out.removed_lines = removed;
    out.fault_id = Some(fault_id);
    out.name = format!("{}-fault{fault_id}", scenario.name);
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    method: Option<String>,
    topology: TopologySection,
    units: UnitsSection,
    #[serde(default)]
    training: TrainingSection,
    #[serde(default)]
    evaluation: EvaluationSection,
    #[serde(default)]
    demand: DemandSection,
    #[serde(default)]
    faults: FaultSection,
    #[serde(default)]
    seeds: SeedSection,
    #[serde(default)]
    report: ReportSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologySection {
    case: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitsSection {
    file: PathBuf,
    /// Replacement `g_max` per unit, in unit order.
    #[serde(default)]
    capacity: Option<Vec<f64>>,
    /// Unit label (1-based) to constant bid.
    #[serde(default)]
    fixed_bids: BTreeMap<String, f64>,
    #[serde(default)]
    k_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSection {
    episodes: Option<usize>,
    steps_per_episode: Option<usize>,
    gamma: Option<f64>,
    lr_critic: Option<f64>,
    lr_actor: Option<f64>,
    tau: Option<f64>,
    batch_size: Option<usize>,
    buffer_capacity: Option<usize>,
    init: Option<InitScheme>,
    gcn_widths: Option<Vec<usize>>,
    head_widths: Option<Vec<usize>>,
    actor_output_bias: Option<f64>,
    max_grad_norm: Option<f64>,
    noise_start: Option<f64>,
    noise_end: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluationSection {
    episodes: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandSection {
    base: Option<f64>,
    amplitude: Option<f64>,
    base_fraction: Option<f64>,
    amplitude_fraction: Option<f64>,
    period: Option<f64>,
    jitter_sigma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultSection {
    #[serde(default)]
    remove: Vec<String>,
    fault_id: Option<u32>,
    ten_line_set: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedSection {
    base: Option<u64>,
    demand: Option<u64>,
    #[serde(default)]
    agents: BTreeMap<String, u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportSection {
    #[serde(default)]
    subtract_fixed_cost: bool,
}

fn unit_label(key: &str, n: usize) -> Result<usize, SimError> {
    key.parse::<usize>()
        .ok()
        .filter(|&k| k >= 1 && k <= n)
        .map(|k| k - 1)
        .ok_or_else(|| SimError::Config(format!("`{key}` is not a unit label in 1..={n}")))
}

impl ScenarioFile {
    fn resolve(self, base_dir: &Path) -> Result<Scenario, SimError> {
        let method = match self.method.as_deref() {
            None => Method::Gcn,
            Some(m) => m.parse().map_err(SimError::Config)?,
        };
        let case_path = base_dir.join(&self.topology.case);
        let topology = GridTopology::load_case(&case_path)?;
        let mut units = load_units(base_dir.join(&self.units.file))?;
        if let Some(caps) = &self.units.capacity {
            if caps.len() != units.len() {
                return Err(SimError::Config(format!(
                    "{} capacity overrides for {} units",
                    caps.len(),
                    units.len()
                )));
            }
            for (u, &c) in units.iter_mut().zip(caps) {
                u.g_max = c;
            }
        }
        if let Some(k) = self.units.k_max {
            units.iter_mut().for_each(|u| u.k_max = k);
        }
        let mut fixed_bids = vec![None; units.len()];
        for (key, bid) in &self.units.fixed_bids {
            fixed_bids[unit_label(key, units.len())?] = Some(*bid);
        }

        let mut scenario = Scenario::new(&self.name, topology, units, method);
        scenario.fixed_bids = fixed_bids;

        let t = self.training;
        let tc = &mut scenario.training;
        let ac = &mut tc.agent;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(tc.episodes, t.episodes);
        set!(tc.steps_per_episode, t.steps_per_episode);
        set!(ac.gamma, t.gamma);
        set!(ac.lr_critic, t.lr_critic);
        set!(ac.lr_actor, t.lr_actor);
        set!(ac.tau, t.tau);
        set!(ac.batch_size, t.batch_size);
        set!(ac.buffer_capacity, t.buffer_capacity);
        set!(ac.init, t.init);
        set!(ac.gcn_widths, t.gcn_widths);
        set!(ac.head_widths, t.head_widths);
        ac.actor_output_bias = t.actor_output_bias;
        ac.max_grad_norm = t.max_grad_norm;
        set!(tc.noise.start, t.noise_start);
        set!(tc.noise.end, t.noise_end);
        set!(scenario.evaluation_episodes, self.evaluation.episodes);

        let d = self.demand;
        let profile = &mut scenario.demand;
        let cap = profile.max_total;
        profile.base = d.base.unwrap_or(d.base_fraction.unwrap_or(0.6) * cap);
        profile.amplitude = d
            .amplitude
            .unwrap_or(d.amplitude_fraction.unwrap_or(0.2) * cap);
        set!(profile.period, d.period);
        set!(profile.jitter_sigma, d.jitter_sigma);

        if let Some(lines) = &self.faults.ten_line_set {
            scenario.ten_line_fault = lines
                .iter()
                .map(|s| parse_line(s))
                .collect::<Result<_, _>>()?;
        }
        let mut removed: Vec<Line> = self
            .faults
            .remove
            .iter()
            .map(|s| parse_line(s))
            .collect::<Result<_, _>>()?;
        if let Some(id) = self.faults.fault_id {
            scenario = apply_fault_scenario(&scenario, id)?;
            removed.retain(|l| !scenario.removed_lines.contains(l));
        }
        if !removed.is_empty() {
            scenario.topology = scenario.topology.remove_lines(&removed)?;
            scenario.removed_lines.extend(removed);
        }

        let s = self.seeds;
        scenario.seeds.demand = s.demand;
        scenario.set_seed(s.base.unwrap_or(0));
        for (key, seed) in &s.agents {
            let unit = unit_label(key, scenario.units.len())?;
            scenario.seeds.agent_overrides.insert(unit, *seed);
        }
        scenario.report_fixed_cost = self.report.subtract_fixed_cost;
        scenario.validate()?;
        Ok(scenario)
    }
}
