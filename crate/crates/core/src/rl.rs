//! Independent actor-critic learners, one per generation unit.
//!
//! Each agent observes the previous price and demand, spread over the bus graph
//! as node features, and bids a multiplier `k ∈ [1, k_max]`. The critic sees the
//! same features with the agent's action written into its own generator node.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridTopology, Line, NormalizedAdjacency};
use crate::market::GenerationUnit;
use crate::nn::{
    relative_error, Gradients, InitScheme, Network, NetworkShape, NnError, Tensor2,
    GRAD_CHECK_STEP, KINK_MARGIN,
};

/// Columns: price, demand, is_generator, g_max, marginal cost, action slot.
pub const NODE_FEATURES: usize = 6;
/// Columns: price, demand, action slot.
pub const GLOBAL_FEATURES: usize = 3;
const ACTION_SLOT_GCN: usize = 5;
const ACTION_SLOT_MLP: usize = 2;

const CHECKPOINT_FORMAT: &str = "gridbid-agent";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("batch of {got} transitions, expected {expected}")]
    BatchSize { got: usize, expected: usize },
    #[error("replay buffer holds {len} transitions, cannot sample {want}")]
    NotEnoughSamples { len: usize, want: usize },
    #[error("network expects {expected} features per node, scenario provides {got}")]
    FeatureWidth { expected: usize, got: usize },
    #[error("agent checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Function-approximator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Graph convolutions over bus-level node features.
    Gcn,
    /// Dense layers over the global (price, demand) state.
    Mlp,
}

impl Method {
    pub fn feature_width(self) -> usize {
        match self {
            Method::Gcn => NODE_FEATURES,
            Method::Mlp => GLOBAL_FEATURES,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gcn => "gcn",
            Method::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn" => Ok(Method::Gcn),
            "mlp" | "mlp-baseline" => Ok(Method::Mlp),
            other => Err(format!("unknown method `{other}` (expected gcn or mlp)")),
        }
    }
}

/// `s(t) = (λ(t−1), d(t−1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub prev_price: f64,
    pub prev_demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: MarketState,
    pub next_state: MarketState,
    pub action: f64,
    /// Unscaled profit `r_i(t)`.
    pub reward: f64,
    /// Last step of an episode: the bootstrap term is dropped.
    pub terminal: bool,
}

/// Fixed reference scales applied to inputs and rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub price_ref: f64,
    pub demand_ref: f64,
    pub reward_ref: f64,
}

impl Normalization {
    /// Price ref `max k_max·λ_m`, demand ref `Σ g_max`, reward ref `price ref · Σ g_max / N`.
    pub fn from_units(units: &[GenerationUnit]) -> Self {
        let price_ref = units
            .iter()
            .map(|u| u.k_max * u.marginal_cost)
            .fold(0.0, f64::max);
        let demand_ref: f64 = units.iter().map(|u| u.g_max).sum();
        Self {
            price_ref,
            demand_ref,
            reward_ref: price_ref * demand_ref / units.len() as f64,
        }
    }
}

/// Everything an agent needs to turn a market state into network input.
#[derive(Debug, Clone)]
pub struct MarketContext {
    method: Method,
    norm: Normalization,
    adjacency: NormalizedAdjacency,
    /// Static columns (generator flag, capacity, cost) already filled in.
    template: Tensor2,
    unit_bus: Vec<usize>,
}

impl MarketContext {
    pub fn new(
        method: Method,
        topo: &GridTopology,
        units: &[GenerationUnit],
        norm: Normalization,
    ) -> Self {
        let unit_bus: Vec<usize> = units.iter().map(|u| u.bus).collect();
        let (adjacency, template) = match method {
            Method::Gcn => {
                let mut t = Tensor2::zeros(topo.n_buses(), NODE_FEATURES);
                for u in units {
                    let row = t.row_mut(u.bus);
                    row[2] = 1.0;
                    row[3] += u.g_max / norm.demand_ref;
                    row[4] = u.marginal_cost / norm.price_ref;
                }
                (topo.normalized_adjacency(), t)
            }
            Method::Mlp => (
                NormalizedAdjacency::identity(1),
                Tensor2::zeros(1, GLOBAL_FEATURES),
            ),
        };
        Self {
            method,
            norm,
            adjacency,
            template,
            unit_bus,
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.adjacency
    }

    /// Node features for `state`; `action = Some((unit, k))` fills that unit's
    /// action slot (critic input), `None` leaves every slot at zero (actor input).
    pub fn features(&self, state: &MarketState, action: Option<(usize, f64)>) -> Tensor2 {
        let mut x = self.template.clone();
        let price = state.prev_price / self.norm.price_ref;
        let demand = state.prev_demand / self.norm.demand_ref;
        for r in 0..x.rows() {
            let row = x.row_mut(r);
            row[0] = price;
            row[1] = demand;
        }
        if let Some((unit, k)) = action {
            let (row, col) = self.action_slot(unit);
            x.set(row, col, k);
        }
        x
    }

    fn action_slot(&self, unit: usize) -> (usize, usize) {
        match self.method {
            Method::Gcn => (self.unit_bus[unit], ACTION_SLOT_GCN),
            Method::Mlp => (0, ACTION_SLOT_MLP),
        }
    }
}

/// Node features as a free function over raw inputs.
pub fn build_node_features(
    state: &MarketState,
    topo: &GridTopology,
    units: &[GenerationUnit],
    norm: Normalization,
    action: Option<(usize, f64)>,
) -> Tensor2 {
    MarketContext::new(Method::Gcn, topo, units, norm).features(state, action)
}

/// Ring buffer of transitions with uniform sampling without replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            records: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.records.len() < self.capacity {
            self.records.push(t);
        } else {
            self.records[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    /// Indices of `n` distinct records.
    pub fn sample_indices(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, RlError> {
        if self.records.len() < n {
            return Err(RlError::NotEnoughSamples {
                len: self.records.len(),
                want: n,
            });
        }
        Ok(index::sample(rng, self.records.len(), n).into_vec())
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Transition>, RlError> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.records[i].clone())
            .collect())
    }
}

/// `max(min(raw, k_max), 1)`.
pub fn clip_action(raw: f64, k_max: f64) -> f64 {
    raw.min(k_max).max(1.0)
}

/// Learner hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub init: InitScheme,
    pub gcn_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    /// Initial actor output bias; `None` starts the actor at the middle of `[1, k_max]`.
    pub actor_output_bias: Option<f64>,
    /// Rescales a batch gradient whose L2 norm exceeds this value.
    pub max_grad_norm: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lr_critic: 0.1,
            lr_actor: 0.1,
            tau: 0.01,
            batch_size: 32,
            buffer_capacity: 10_000,
            init: InitScheme::FanIn,
            gcn_widths: vec![16, 16],
            head_widths: vec![15, 10],
            actor_output_bias: None,
            max_grad_norm: None,
        }
    }
}

impl AgentConfig {
    /// Network layout for `method`. The dense baseline replaces each graph
    /// convolution with a dense layer of the same width.
    pub fn network_shape(&self, method: Method) -> NetworkShape {
        match method {
            Method::Gcn => NetworkShape {
                in_features: NODE_FEATURES,
                gcn_widths: self.gcn_widths.clone(),
                head_widths: self.head_widths.clone(),
                outputs: 1,
            },
            Method::Mlp => NetworkShape {
                in_features: GLOBAL_FEATURES,
                gcn_widths: vec![],
                head_widths: self
                    .gcn_widths
                    .iter()
                    .chain(&self.head_widths)
                    .copied()
                    .collect(),
                outputs: 1,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub unit: usize,
    pub method: Method,
    pub k_max: f64,
    pub actor: Network,
    pub critic: Network,
    pub target_actor: Network,
    pub target_critic: Network,
    pub config: AgentConfig,
    /// Standard deviation of exploration noise, in bid units.
    pub noise_sigma: f64,
    pub buffer: ReplayBuffer,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(unit: &GenerationUnit, method: Method, config: AgentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = config.network_shape(method);
        let mut actor = Network::init(&shape, config.init, &mut rng);
        let critic = Network::init(&shape, config.init, &mut rng);
        let bias = config.actor_output_bias.unwrap_or(0.5 * (1.0 + unit.k_max));
        if let Some(last) = actor.head_layers.last_mut() {
            last.bias.iter_mut().for_each(|b| *b = bias);
        }
        Self {
            unit: unit.id,
            method,
            k_max: unit.k_max,
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            noise_sigma: 0.0,
            rng,
        }
    }

    /// Raw actor output `μ(s)` before clipping.
    pub fn actor_output(&self, ctx: &MarketContext, state: &MarketState) -> Result<f64, RlError> {
        let x = ctx.features(state, None);
        Ok(self.actor.forward(&x, ctx.adjacency())?[0])
    }

    /// Bid for this step, always inside `[1, k_max]`.
    pub fn select_action(
        &mut self,
        ctx: &MarketContext,
        state: &MarketState,
        explore: bool,
    ) -> Result<f64, RlError> {
        let mut raw = self.actor_output(ctx, state)?;
        if explore && self.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.noise_sigma).expect("positive sigma");
            raw += noise.sample(&mut self.rng);
        }
        Ok(clip_action(raw, self.k_max))
    }

    /// Critic value `Q(s, a)` from the online critic.
    pub fn q_value(
        &self,
        ctx: &MarketContext,
        state: &MarketState,
        action: f64,
    ) -> Result<f64, RlError> {
        let x = ctx.features(state, Some((self.unit, action)));
        Ok(self.critic.forward(&x, ctx.adjacency())?[0])
    }

    /// `r/reward_ref + γ·Q'(s', clip(μ'(s')))`, or just the scaled reward on terminal steps.
    pub fn critic_target(&self, ctx: &MarketContext, t: &Transition) -> Result<f64, RlError> {
        let reward = t.reward / ctx.normalization().reward_ref;
        if t.terminal || self.config.gamma == 0.0 {
            return Ok(reward);
        }
        let adj = ctx.adjacency();
        let raw = self
            .target_actor
            .forward(&ctx.features(&t.next_state, None), adj)?[0];
        let next_action = clip_action(raw, self.k_max);
        let next_q = self.target_critic.forward(
            &ctx.features(&t.next_state, Some((self.unit, next_action))),
            adj,
        )?[0];
        Ok(bootstrap_target(reward, self.config.gamma, next_q))
    }

    fn check_batch(&self, batch: &[Transition]) -> Result<(), RlError> {
        if batch.len() < self.config.batch_size {
            return Err(RlError::BatchSize {
                got: batch.len(),
                expected: self.config.batch_size,
            });
        }
        Ok(())
    }

    /// Critic loss and gradient on `batch`, without touching any parameters.
    pub fn critic_loss_and_grad(
        &self,
        ctx: &MarketContext,
        batch: &[Transition],
    ) -> Result<(f64, Gradients), RlError> {
        let n = batch.len() as f64;
        let adj = ctx.adjacency();
        let mut grads = Gradients::zeros_like(&self.critic);
        let mut loss = 0.0;
        for t in batch {
            let target = self.critic_target(ctx, t)?;
            let x = ctx.features(&t.state, Some((self.unit, t.action)));
            let (q, cache) = self.critic.forward_cached(&x, adj)?;
            let residual = q[0] - target;
            loss += residual * residual / n;
            let g = self
                .critic
                .backward_params(&cache, adj, &[2.0 * residual / n])?;
            grads.add_assign(&g);
        }
        Ok((loss, grads))
    }

    /// One gradient step on the mean squared target residual. Returns the pre-update loss.
    pub fn update_critic(
        &mut self,
        ctx: &MarketContext,
        batch: &[Transition],
    ) -> Result<f64, RlError> {
        self.check_batch(batch)?;
        let (loss, mut grads) = self.critic_loss_and_grad(ctx, batch)?;
        clip_gradient(&mut grads, self.config.max_grad_norm);
        self.critic.sgd_step(&grads, self.config.lr_critic)?;
        Ok(loss)
    }

    /// Actor loss `−mean Q(s, clip(μ(s)))` and its gradient w.r.t. the actor
    /// parameters. The clip passes gradient strictly inside `(1, k_max)` and
    /// blocks it at the bounds.
    pub fn actor_loss_and_grad(
        &self,
        ctx: &MarketContext,
        batch: &[Transition],
    ) -> Result<(f64, Gradients), RlError> {
        let n = batch.len() as f64;
        let adj = ctx.adjacency();
        let (slot_row, slot_col) = ctx.action_slot(self.unit);
        let mut grads = Gradients::zeros_like(&self.actor);
        let mut loss = 0.0;
        for t in batch {
            let xa = ctx.features(&t.state, None);
            let (mu, actor_cache) = self.actor.forward_cached(&xa, adj)?;
            let action = clip_action(mu[0], self.k_max);
            let xc = ctx.features(&t.state, Some((self.unit, action)));
            let (q, critic_cache) = self.critic.forward_cached(&xc, adj)?;
            loss -= q[0] / n;
            if !(mu[0] > 1.0 && mu[0] < self.k_max) {
                continue;
            }
            let (_, dx) = self.critic.backward(&critic_cache, adj, &[-1.0 / n])?;
            let d_action = dx.get(slot_row, slot_col);
            if d_action == 0.0 {
                continue;
            }
            let g = self.actor.backward_params(&actor_cache, adj, &[d_action])?;
            grads.add_assign(&g);
        }
        Ok((loss, grads))
    }

    /// One gradient step on the actor with the critic held fixed. Returns the pre-update loss.
    pub fn update_actor(
        &mut self,
        ctx: &MarketContext,
        batch: &[Transition],
    ) -> Result<f64, RlError> {
        self.check_batch(batch)?;
        let (loss, mut grads) = self.actor_loss_and_grad(ctx, batch)?;
        clip_gradient(&mut grads, self.config.max_grad_norm);
        self.actor.sgd_step(&grads, self.config.lr_actor)?;
        Ok(loss)
    }

    /// `θ' ← τ·θ + (1−τ)·θ'` for both target networks.
    pub fn soft_update_targets(&mut self, tau: f64) -> Result<(), RlError> {
        assert!(tau > 0.0 && tau <= 1.0, "tau must lie in (0, 1]");
        self.target_actor.soft_update_from(&self.actor, tau)?;
        self.target_critic.soft_update_from(&self.critic, tau)?;
        Ok(())
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// Sample, critic step, actor step, target update. Skipped while the buffer
    /// holds fewer than one batch. Returns `(critic_loss, actor_loss)` when it ran.
    pub fn learn(&mut self, ctx: &MarketContext) -> Result<Option<(f64, f64)>, RlError> {
        let n = self.config.batch_size;
        if self.buffer.len() < n {
            return Ok(None);
        }
        let batch = self.buffer.sample(n, &mut self.rng)?;
        let critic_loss = self.update_critic(ctx, &batch)?;
        let actor_loss = self.update_actor(ctx, &batch)?;
        self.soft_update_targets(self.config.tau)?;
        Ok(Some((critic_loss, actor_loss)))
    }

    /// Same policy acting for another unit, e.g. on a different system.
    pub fn reassigned(&self, unit: &GenerationUnit) -> Self {
        let mut a = self.clone();
        a.unit = unit.id;
        a.k_max = unit.k_max;
        a
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Fails when the networks were built for a different feature layout.
    pub fn check_features(&self, ctx: &MarketContext) -> Result<(), RlError> {
        let got = ctx.method().feature_width();
        let expected = self.actor.in_features();
        if got != expected || self.method != ctx.method() {
            return Err(RlError::FeatureWidth { expected, got });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, norm: Normalization) -> Result<(), RlError> {
        let file = AgentCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            unit: self.unit,
            method: self.method,
            k_max: self.k_max,
            normalization: norm,
            config: self.config.clone(),
            noise_sigma: self.noise_sigma,
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            target_actor: self.target_actor.clone(),
            target_critic: self.target_critic.clone(),
            rng: self.rng.clone(),
        };
        let text =
            serde_json::to_string_pretty(&file).map_err(|e| RlError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| RlError::Checkpoint(e.to_string()))
    }

    /// Loads an agent and the normalization it was trained with. The replay buffer starts empty.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Normalization), RlError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))?;
        let file: AgentCheckpoint = serde_json::from_str(&text)
            .map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(RlError::Checkpoint(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        for net in [
            &file.actor,
            &file.critic,
            &file.target_actor,
            &file.target_critic,
        ] {
            net.validate()?;
        }
        if file.actor.shape() != file.target_actor.shape()
            || file.critic.shape() != file.target_critic.shape()
        {
            return Err(RlError::Checkpoint(
                "target shapes differ from online shapes".into(),
            ));
        }
        let agent = Agent {
            unit: file.unit,
            method: file.method,
            k_max: file.k_max,
            buffer: ReplayBuffer::new(file.config.buffer_capacity),
            config: file.config,
            noise_sigma: file.noise_sigma,
            actor: file.actor,
            critic: file.critic,
            target_actor: file.target_actor,
            target_critic: file.target_critic,
            rng: file.rng,
        };
        Ok((agent, file.normalization))
    }
}

#[derive(Serialize, Deserialize)]
struct AgentCheckpoint {
    format: String,
    version: u32,
    unit: usize,
    method: Method,
    k_max: f64,
    normalization: Normalization,
    config: AgentConfig,
    noise_sigma: f64,
    actor: Network,
    critic: Network,
    target_actor: Network,
    target_critic: Network,
    rng: ChaCha8Rng,
}

/// Loss verified by [`loss_grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Critic,
    Actor,
}

/// Central differences of the critic or actor loss on `batch` against the
/// analytic gradient, perturbing only the network that the loss trains.
pub fn loss_grad_check(
    agent: &Agent,
    ctx: &MarketContext,
    batch: &[Transition],
    kind: LossKind,
) -> Result<f64, RlError> {
    let (analytic, net) = match kind {
        LossKind::Critic => (agent.critic_loss_and_grad(ctx, batch)?.1, &agent.critic),
        LossKind::Actor => (agent.actor_loss_and_grad(ctx, batch)?.1, &agent.actor),
    };
    let base = net.flat_params();
    let mut probe = agent.clone();
    let mut params = base.clone();
    let mut loss_at = |params: &[f64]| -> Result<f64, RlError> {
        Ok(match kind {
            LossKind::Critic => {
                probe.critic.set_flat_params(params)?;
                probe.critic_loss_and_grad(ctx, batch)?.0
            }
            LossKind::Actor => {
                probe.actor.set_flat_params(params)?;
                probe.actor_loss_and_grad(ctx, batch)?.0
            }
        })
    };
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        params[i] = base[i] + GRAD_CHECK_STEP;
        let up = loss_at(&params)?;
        params[i] = base[i] - GRAD_CHECK_STEP;
        let down = loss_at(&params)?;
        params[i] = base[i];
        fd.push((up - down) / (2.0 * GRAD_CHECK_STEP));
    }
    Ok(relative_error(&fd, &analytic.flat()))
}

/// Smallest distance of any ReLU pre-activation from zero, and of any raw actor
/// output from the clip bounds, over the forward passes the losses use on `batch`.
fn batch_margin(agent: &Agent, ctx: &MarketContext, batch: &[Transition]) -> Result<f64, RlError> {
    let adj = ctx.adjacency();
    let mut margin = f64::INFINITY;
    for t in batch {
        let (mu, cache) = agent
            .actor
            .forward_cached(&ctx.features(&t.state, None), adj)?;
        margin = margin
            .min(cache.relu_margin(&agent.actor))
            .min((mu[0] - 1.0).abs())
            .min((mu[0] - agent.k_max).abs());
        for action in [t.action, clip_action(mu[0], agent.k_max)] {
            let x = ctx.features(&t.state, Some((agent.unit, action)));
            let (_, cache) = agent.critic.forward_cached(&x, adj)?;
            margin = margin.min(cache.relu_margin(&agent.critic));
        }
    }
    Ok(margin)
}

/// [`loss_grad_check`] on a random small system, agent and batch. The batch is
/// redrawn until it keeps [`KINK_MARGIN`] away from ReLU kinks and clip bounds.
pub fn random_loss_check(kind: LossKind, seed: u64) -> Result<f64, RlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let n_units = rng.random_range(1..=n.min(3));
    let buses = index::sample(&mut rng, n, n_units).into_vec();
    let units: Vec<GenerationUnit> = buses
        .iter()
        .enumerate()
        .map(|(id, &bus)| GenerationUnit {
            id,
            marginal_cost: rng.random_range(0.5..4.0),
            g_min: 0.0,
            g_max: rng.random_range(20.0..100.0),
            k_max: 2.0,
            fixed_cost: 0.0,
            bus,
        })
        .collect();
    let lines: Vec<Line> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|_| rng.random_bool(0.4))
        .map(|(a, b)| Line::new(a, b).expect("a < b"))
        .collect();
    let topo = GridTopology::new(n, lines, units.iter().map(|u| (u.id, u.bus)))
        .expect("buses drawn in range");
    let method = if rng.random_bool(0.3) {
        Method::Mlp
    } else {
        Method::Gcn
    };
    let norm = Normalization::from_units(&units);
    let ctx = MarketContext::new(method, &topo, &units, norm);

    let mut widths = |lo: usize, hi: usize| -> Vec<usize> {
        let depth = rng.random_range(lo..=hi);
        (0..depth).map(|_| rng.random_range(2..=6)).collect()
    };
    let config = AgentConfig {
        gamma: 0.9,
        batch_size: 4,
        gcn_widths: widths(1, 2),
        head_widths: widths(0, 2),
        ..AgentConfig::default()
    };
    let unit = &units[rng.random_range(0..n_units)];
    let mut agent = Agent::new(unit, method, config, rng.random());
    for net in [&mut agent.actor, &mut agent.critic] {
        let hidden = net.head_layers.len() - 1;
        for layer in &mut net.head_layers[..hidden] {
            layer
                .bias
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
    }
    if kind == LossKind::Actor {
        // An all-positive critic responds to the action on the same relative scale
        // as its value, keeping the actor gradient far above the rounding floor
        // of the difference quotient.
        let shape = agent.critic.shape();
        agent.critic = Network::init(&shape, InitScheme::UnitRange, &mut rng);
    }
    agent.target_actor = agent.actor.clone();
    // Untrained targets equal the online nets; shift them so the bootstrap term is independent.
    let mut shifted = agent.target_critic.flat_params();
    shifted
        .iter_mut()
        .for_each(|p| *p += rng.random_range(-0.1..0.1));
    agent.target_critic.set_flat_params(&shifted)?;

    let demand_total: f64 = units.iter().map(|u| u.g_max).sum();
    let draw_state = |rng: &mut ChaCha8Rng| MarketState {
        prev_price: rng.random_range(0.5..8.0),
        prev_demand: rng.random_range(0.0..demand_total),
    };
    let mut batch = Vec::new();
    for _ in 0..100 {
        batch = (0..agent.config.batch_size)
            .map(|_| Transition {
                state: draw_state(&mut rng),
                next_state: draw_state(&mut rng),
                action: rng.random_range(1.0..=unit.k_max),
                reward: rng.random_range(-50.0..200.0),
                terminal: rng.random_bool(0.2),
            })
            .collect();
        if batch_margin(&agent, &ctx, &batch)? >= KINK_MARGIN {
            break;
        }
    }
    loss_grad_check(&agent, &ctx, &batch, kind)
}

/// `r + γ·q_next`.
pub fn bootstrap_target(reward: f64, gamma: f64, next_q: f64) -> f64 {
    reward + gamma * next_q
}

fn clip_gradient(grads: &mut Gradients, max_norm: Option<f64>) {
    let Some(max_norm) = max_norm else { return };
    let norm = grads.flat().iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

/// Noise level decaying linearly from `start` (first episode) to `end` (last episode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub start: f64,
    pub end: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            start: 0.3,
            end: 0.02,
        }
    }
}

impl NoiseSchedule {
    pub fn sigma(&self, episode: usize, episodes: usize) -> f64 {
        if episodes <= 1 {
            return self.start;
        }
        let frac = episode as f64 / (episodes - 1) as f64;
        self.start + (self.end - self.start) * frac
    }
}
