//! Episode/step orchestration: agents bid, the ISO clears, rewards flow back,
//! agents store the transition and learn. Also scenario files, demand,
//! disconnection experiments, metrics and CSV output.

mod output;
mod scenario;

pub use output::{
    write_comparison_csv, write_fault_csv, write_run_csv, write_summary_csv, ComparisonRow,
    FaultRow,
};
pub use scenario::{
    apply_fault_scenario, fault_lines, Scenario, Seeds, TrainingConfig, FAULT_IDS, FAULT_LINES_10,
    FAULT_LINES_3, FAULT_LINES_5,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::grid::GridError;
use crate::market::{self, ClearingResult, GenerationUnit, MarketError};
use crate::rl::{Agent, MarketContext, MarketState, Normalization, RlError, Transition};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    Config(String),
    #[error("unknown fault id {0} (expected 3, 5 or 10)")]
    UnknownFault(u32),
    #[error("step {t}: {source}")]
    Clearing { t: usize, source: MarketError },
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("no policy available for unit {0}")]
    MissingPolicy(usize),
}

/// `d(t) = base + amplitude·sin(2πt/period) + jitter`, clamped into the feasible range.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub base: f64,
    pub amplitude: f64,
    pub period: f64,
    pub jitter_sigma: f64,
    pub seed: u64,
    pub min_total: f64,
    pub max_total: f64,
}

impl DemandProfile {
    /// Base `0.6·Σ g_max`, amplitude `0.2·Σ g_max`, 24-step period, no jitter.
    pub fn default_for(units: &[GenerationUnit], seed: u64) -> Self {
        let max_total: f64 = units.iter().map(|u| u.g_max).sum();
        Self {
            base: 0.6 * max_total,
            amplitude: 0.2 * max_total,
            period: 24.0,
            jitter_sigma: 0.0,
            seed,
            min_total: units.iter().map(|u| u.g_min).sum(),
            max_total,
        }
    }

    pub fn demand_at(&self, t: usize) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * t as f64 / self.period;
        let mut d = self.base + self.amplitude * phase.sin();
        if self.jitter_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(t as u64);
            d += Normal::new(0.0, self.jitter_sigma)
                .expect("positive sigma")
                .sample(&mut rng);
        }
        d.clamp(self.min_total, self.max_total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Global time index, starting at 1.
    pub t: usize,
    pub demand: f64,
    pub price: f64,
    pub bids: Vec<f64>,
    pub dispatch: Vec<f64>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    /// 1-based.
    pub episode: usize,
    pub steps: Vec<StepRecord>,
    /// Mean per-step reward of each unit, accumulated while the episode ran.
    pub unit_avg_profit: Vec<f64>,
    pub unit_avg_bid: Vec<f64>,
}

struct EpisodeAccumulator {
    episode: usize,
    steps: Vec<StepRecord>,
    profit: Vec<f64>,
    bid: Vec<f64>,
}

impl EpisodeAccumulator {
    fn new(episode: usize, n_units: usize, capacity: usize) -> Self {
        Self {
            episode,
            steps: Vec::with_capacity(capacity),
            profit: vec![0.0; n_units],
            bid: vec![0.0; n_units],
        }
    }

    fn push(&mut self, rec: StepRecord) {
        for (acc, r) in self.profit.iter_mut().zip(&rec.rewards) {
            *acc += r;
        }
        for (acc, b) in self.bid.iter_mut().zip(&rec.bids) {
            *acc += b;
        }
        self.steps.push(rec);
    }

    fn finish(self) -> EpisodeLog {
        let n = self.steps.len().max(1) as f64;
        EpisodeLog {
            episode: self.episode,
            steps: self.steps,
            unit_avg_profit: self.profit.iter().map(|p| p / n).collect(),
            unit_avg_bid: self.bid.iter().map(|b| b / n).collect(),
        }
    }
}

pub struct TrainingOutput {
    pub logs: Vec<EpisodeLog>,
    /// Trained agents, one per strategic unit, in unit order.
    pub agents: Vec<Agent>,
    pub normalization: Normalization,
}

/// Initial state of an episode: demand just before its first step, priced under competitive bids.
fn initial_state(scenario: &Scenario, first_t: usize) -> Result<MarketState, SimError> {
    let d = scenario.demand.demand_at(first_t - 1);
    let competitive = vec![1.0; scenario.units.len()];
    let price = market::clear_market(&scenario.units, &competitive, d)
        .map_err(|source| SimError::Clearing {
            t: first_t - 1,
            source,
        })?
        .price;
    Ok(MarketState {
        prev_price: price,
        prev_demand: d,
    })
}

pub fn run_training(scenario: &Scenario) -> Result<TrainingOutput, SimError> {
    run_training_with(scenario, market::clear_market)
}

/// Training with an injectable clearing function (called exactly once per step).
pub fn run_training_with<F>(scenario: &Scenario, mut clear: F) -> Result<TrainingOutput, SimError>
where
    F: FnMut(&[GenerationUnit], &[f64], f64) -> Result<ClearingResult, MarketError>,
{
    scenario.validate()?;
    let units = &scenario.units;
    let norm = Normalization::from_units(units);
    let ctx = MarketContext::new(scenario.method, &scenario.topology, units, norm);
    let cfg = &scenario.training;

    let mut agents: Vec<Option<Agent>> = units
        .iter()
        .zip(&scenario.fixed_bids)
        .map(|(u, fixed)| {
            fixed.is_none().then(|| {
                Agent::new(
                    u,
                    scenario.method,
                    cfg.agent.clone(),
                    scenario.seeds.agent(u.id),
                )
            })
        })
        .collect();

    let steps = cfg.steps_per_episode;
    let mut logs = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let sigma = cfg.noise.sigma(episode, cfg.episodes);
        for agent in agents.iter_mut().flatten() {
            agent.noise_sigma = sigma;
        }
        let first_t = 1 + episode * steps;
        let mut state = initial_state(scenario, first_t)?;
        let mut acc = EpisodeAccumulator::new(episode + 1, units.len(), steps);

        for t in first_t..first_t + steps {
            let mut bids = Vec::with_capacity(units.len());
            for (agent, fixed) in agents.iter_mut().zip(&scenario.fixed_bids) {
                bids.push(match (agent, fixed) {
                    (_, Some(k)) => *k,
                    (Some(a), None) => a.select_action(&ctx, &state, true)?,
                    (None, None) => unreachable!("every unit is fixed or learning"),
                });
            }
            let demand = scenario.demand.demand_at(t);
            let cleared =
                clear(units, &bids, demand).map_err(|source| SimError::Clearing { t, source })?;
            let next_state = MarketState {
                prev_price: cleared.price,
                prev_demand: demand,
            };
            let rewards: Vec<f64> = units
                .iter()
                .zip(&cleared.dispatch)
                .map(|(u, &g)| market::compute_reward(u, cleared.price, g))
                .collect();
            let terminal = t == first_t + steps - 1;
            for (i, agent) in agents.iter_mut().enumerate() {
                if let Some(agent) = agent {
                    agent.remember(Transition {
                        state,
                        next_state,
                        action: bids[i],
                        reward: rewards[i],
                        terminal,
                    });
                    agent.learn(&ctx)?;
                }
            }
            acc.push(StepRecord {
                t,
                demand,
                price: cleared.price,
                bids,
                dispatch: cleared.dispatch,
                rewards,
            });
            state = next_state;
        }
        logs.push(acc.finish());
    }
    Ok(TrainingOutput {
        logs,
        agents: agents.into_iter().flatten().collect(),
        normalization: norm,
    })
}

/// Rolls out frozen policies (no noise, no learning) on `scenario`.
///
/// Each strategic unit uses the policy trained for the same unit index; units
/// beyond the trained set reuse policy `index mod n`. Inputs are scaled with the
/// normalization the policies were trained under.
pub fn run_evaluation(
    policies: &[Agent],
    norm: Normalization,
    scenario: &Scenario,
) -> Result<Vec<EpisodeLog>, SimError> {
    scenario.validate()?;
    let units = &scenario.units;
    let ctx = MarketContext::new(scenario.method, &scenario.topology, units, norm);
    let mut actors: Vec<Option<Agent>> = Vec::with_capacity(units.len());
    for (u, fixed) in units.iter().zip(&scenario.fixed_bids) {
        if fixed.is_some() {
            actors.push(None);
            continue;
        }
        let source = policies
            .iter()
            .find(|a| a.unit == u.id)
            .or_else(|| (!policies.is_empty()).then(|| &policies[u.id % policies.len()]))
            .ok_or(SimError::MissingPolicy(u.id + 1))?;
        source.check_features(&ctx)?;
        actors.push(Some(source.reassigned(u)));
    }

    let steps = scenario.training.steps_per_episode;
    let mut logs = Vec::with_capacity(scenario.evaluation_episodes);
    for episode in 0..scenario.evaluation_episodes {
        let first_t = 1 + episode * steps;
        let mut state = initial_state(scenario, first_t)?;
        let mut acc = EpisodeAccumulator::new(episode + 1, units.len(), steps);
        for t in first_t..first_t + steps {
            let mut bids = Vec::with_capacity(units.len());
            for (actor, fixed) in actors.iter_mut().zip(&scenario.fixed_bids) {
                bids.push(match (actor, fixed) {
                    (_, Some(k)) => *k,
                    (Some(a), None) => a.select_action(&ctx, &state, false)?,
                    (None, None) => unreachable!("every unit is fixed or has a policy"),
                });
            }
            let demand = scenario.demand.demand_at(t);
            let cleared = market::clear_market(units, &bids, demand)
                .map_err(|source| SimError::Clearing { t, source })?;
            let rewards = units
                .iter()
                .zip(&cleared.dispatch)
                .map(|(u, &g)| market::compute_reward(u, cleared.price, g))
                .collect();
            state = MarketState {
                prev_price: cleared.price,
                prev_demand: demand,
            };
            acc.push(StepRecord {
                t,
                demand,
                price: cleared.price,
                bids,
                dispatch: cleared.dispatch,
                rewards,
            });
        }
        logs.push(acc.finish());
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub unit_avg_profit: Vec<f64>,
    pub unit_avg_bid: Vec<f64>,
    /// Mean over units of `unit_avg_profit`.
    pub avg_profit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub episodes: Vec<EpisodeMetrics>,
}

impl Metrics {
    /// Mean overall profit of the first `n` episodes.
    pub fn first_window(&self, n: usize) -> f64 {
        mean(self.episodes.iter().take(n).map(|e| e.avg_profit))
    }

    /// Mean overall profit of the last `n` episodes.
    pub fn last_window(&self, n: usize) -> f64 {
        let skip = self.episodes.len().saturating_sub(n);
        mean(self.episodes.iter().skip(skip).map(|e| e.avg_profit))
    }

    /// Mean overall profit across all episodes.
    pub fn overall(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.avg_profit))
    }

    /// Mean bid of each unit per episode.
    pub fn bid_trajectories(&self) -> Vec<Vec<f64>> {
        let n_units = self.episodes.first().map_or(0, |e| e.unit_avg_bid.len());
        (0..n_units)
            .map(|u| self.episodes.iter().map(|e| e.unit_avg_bid[u]).collect())
            .collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-episode averages recomputed from step records. With `fixed_costs`, each
/// unit's per-step profit is reduced by its fixed cost.
pub fn compute_metrics(logs: &[EpisodeLog], fixed_costs: Option<&[f64]>) -> Metrics {
    let episodes = logs
        .iter()
        .map(|log| {
            let n_units = log.steps.first().map_or(0, |s| s.rewards.len());
            let n = log.steps.len().max(1) as f64;
            let mut profit = vec![0.0; n_units];
            let mut bid = vec![0.0; n_units];
            for step in &log.steps {
                for u in 0..n_units {
                    profit[u] += step.rewards[u];
                    bid[u] += step.bids[u];
                }
            }
            let unit_avg_profit: Vec<f64> = profit
                .iter()
                .enumerate()
                .map(|(u, p)| p / n - fixed_costs.map_or(0.0, |c| c[u]))
                .collect();
            EpisodeMetrics {
                episode: log.episode,
                avg_profit: mean(unit_avg_profit.iter().copied()),
                unit_avg_bid: bid.iter().map(|b| b / n).collect(),
                unit_avg_profit,
            }
        })
        .collect();
    Metrics { episodes }
}
