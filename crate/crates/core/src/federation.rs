//! Curator/client orchestration.
//!
//! Each communication round `t`:
//!
//! 1. with DP enabled, charge the accountant for `(q = m_t / K, sigma_t)` and
//!    stop if the resulting delta exceeds the threshold `Q`;
//! 2. draw `m_t` distinct clients uniformly at random;
//! 3. every sampled client runs `E` epochs of mini-batch SGD from the current
//!    model and returns its unclipped delta and the delta's norm;
//! 4. the curator averages the deltas, with DP through the Gaussian mechanism
//!    clipped at the median norm, and adds the result to the model.
//!
//! Client work within a round is independent and goes through a
//! [`ClientExecutor`]; aggregation always folds updates in client-id order and
//! every random draw comes from a stream keyed by `(seed, round, purpose)`, so
//! a run is reproducible regardless of how client work is scheduled.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::data::{shard_non_iid, ClientPartition, Dataset};
use crate::dp::{self, ClientUpdate, MomentsAccountant};
use crate::model::{self, ModelParams, Workspace, MNIST_ARCH};
use crate::rng::{self, NOISE_TAG, SAMPLING_TAG};
use crate::telemetry::{self, RoundMetrics};
use crate::{Error, Result};

/// A piecewise-constant per-round value. Written as `30` (constant) or as
/// `1:30,6:60` meaning 30 for rounds 1 to 5 and 60 from round 6 on.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T> {
    breakpoints: Vec<(u32, T)>,
}

impl<T: Copy> Schedule<T> {
    pub fn constant(value: T) -> Self {
        Self {
            breakpoints: vec![(1, value)],
        }
    }

    /// Breakpoints must start at round 1 and strictly increase.
    pub fn new(breakpoints: Vec<(u32, T)>) -> Result<Self> {
        match breakpoints.first() {
            Some((1, _)) => {}
            _ => {
                return Err(Error::Config(
                    "a schedule must start with a breakpoint at round 1".into(),
                ))
            }
        }
        if breakpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config(
                "schedule breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self { breakpoints })
    }

    pub fn value_at(&self, round: u32) -> T {
        let i = self.breakpoints.partition_point(|&(r, _)| r <= round);
        self.breakpoints[i.saturating_sub(1)].1
    }

    pub fn breakpoints(&self) -> &[(u32, T)] {
        &self.breakpoints
    }

    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.breakpoints.iter().map(|&(_, v)| v)
    }
}

impl<T: FromStr + Copy> FromStr for Schedule<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |part: &str| Error::Config(format!("bad schedule entry {part:?} in {s:?}"));
        let s = s.trim();
        if !s.contains(':') && !s.contains(',') {
            return s.parse().map(Self::constant).map_err(|_| bad(s));
        }
        let mut points = Vec::new();
        for part in s.split(',') {
            let (round, value) = part.split_once(':').ok_or_else(|| bad(part))?;
            let round = round.trim().parse().map_err(|_| bad(part))?;
            let value = value.trim().parse().map_err(|_| bad(part))?;
            points.push((round, value));
        }
        Self::new(points)
    }
}

impl<T: fmt::Display> fmt::Display for Schedule<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let [(1, v)] = self.breakpoints.as_slice() {
            return write!(f, "{v}");
        }
        for (i, (r, v)) in self.breakpoints.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{r}:{v}")?;
        }
        Ok(())
    }
}

/// How the per-round clipping bound is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipRule {
    /// Median of the sampled clients' unclipped update norms.
    Median,
    /// A fixed bound (`f64::INFINITY` disables clipping).
    Fixed(f64),
}

impl fmt::Display for ClipRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClipRule::Median => f.write_str("median"),
            ClipRule::Fixed(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for ClipRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "median" => Ok(ClipRule::Median),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0)
                .map(ClipRule::Fixed)
                .ok_or_else(|| Error::Config(format!("bad clip rule {s:?}"))),
        }
    }
}

/// Privacy settings; absent from [`FederatedConfig`] for the FedAvg baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    pub sigma_schedule: Schedule<f64>,
    /// Threshold `Q`: a round whose post-charge delta exceeds it is refused.
    pub delta_threshold: f64,
    pub epsilon: f64,
    pub lambda_max: u32,
    pub clip: ClipRule,
}

impl DpConfig {
    pub fn new(sigma: Schedule<f64>, epsilon: f64, delta_threshold: f64) -> Self {
        Self {
            sigma_schedule: sigma,
            delta_threshold,
            epsilon,
            lambda_max: dp::DEFAULT_LAMBDA_MAX,
            clip: ClipRule::Median,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedConfig {
    /// Total number of clients `K`.
    pub clients: usize,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub eta: f64,
    /// Participating clients per round `m_t`.
    pub m_schedule: Schedule<usize>,
    pub dp: Option<DpConfig>,
    pub max_rounds: u32,
    pub seed: u64,
    /// Evaluate on the test set every this many rounds (and after the last).
    pub eval_every: u32,
    pub target_accuracy: Option<f64>,
    pub arch: Vec<usize>,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        Self {
            clients: 100,
            batch_size: 10,
            local_epochs: 1,
            eta: 0.05,
            m_schedule: Schedule::constant(100),
            dp: None,
            max_rounds: 100,
            seed: 1,
            eval_every: 1,
            target_accuracy: None,
            arch: MNIST_ARCH.to_vec(),
        }
    }
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.clients == 0 {
            return fail("need at least one client".into());
        }
        if self.clients >= PARTITION_LIMIT {
            return fail(format!("at most {} clients supported", PARTITION_LIMIT - 1));
        }
        if self.batch_size == 0 || self.local_epochs == 0 {
            return fail("batch size and local epochs must be at least 1".into());
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return fail(format!("learning rate must be positive, got {}", self.eta));
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1".into());
        }
        if let Some(m) = self
            .m_schedule
            .values()
            .find(|&m| m == 0 || m > self.clients)
        {
            return fail(format!("m_t = {m} outside [1, {}]", self.clients));
        }
        if let Some(dp) = &self.dp {
            if let Some(s) = dp
                .sigma_schedule
                .values()
                .find(|s| !(*s >= 0.0) || !s.is_finite())
            {
                return fail(format!("sigma_t = {s} must be finite and non-negative"));
            }
            if !(dp.delta_threshold > 0.0 && dp.delta_threshold <= 1.0) {
                return fail(format!(
                    "delta threshold {} outside (0, 1]",
                    dp.delta_threshold
                ));
            }
            if dp.delta_threshold >= 1.0 / self.clients as f64 {
                log::warn!(
                    "delta threshold {} is not below 1/K = {}; individual clients may be exposed",
                    dp.delta_threshold,
                    1.0 / self.clients as f64
                );
            }
            MomentsAccountant::new(dp.epsilon, dp.lambda_max)?;
            if let ClipRule::Fixed(s) = dp.clip {
                if !(s > 0.0) {
                    return fail(format!("fixed clipping bound {s} must be positive"));
                }
            }
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return fail(format!("target accuracy {t} outside [0, 1]"));
            }
        }
        model::ModelParams::zeros(&self.arch).map(|_| ())
    }
}

const PARTITION_LIMIT: usize = rng::PARTITION_TAG as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    BudgetExhausted,
    MaxRounds,
    TargetReached,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::BudgetExhausted => "budget_exhausted",
            StopReason::MaxRounds => "max_rounds",
            StopReason::TargetReached => "target_reached",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub rounds: Vec<RoundMetrics>,
    pub final_params: ModelParams,
    pub stop_reason: StopReason,
    /// Accountant state after the last executed round (DP runs only).
    pub accountant: Option<MomentsAccountant>,
}

impl TrainingHistory {
    /// Communication cost: total number of client models sent.
    pub fn communication_cost(&self) -> u64 {
        self.rounds.last().map_or(0, |r| r.cc_cumulative)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.rounds.last().and_then(|r| r.accuracy)
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.rounds
            .iter()
            .filter_map(|r| r.accuracy)
            .fold(None, |best, a| Some(best.map_or(a, |b: f64| b.max(a))))
    }
}

/// Runs the per-client jobs of one round. Implementations may execute jobs in
/// any order or in parallel but must return results in input order.
pub trait ClientExecutor {
    fn run(
        &self,
        clients: &[u32],
        job: &(dyn Fn(u32) -> Result<ClientUpdate> + Sync),
    ) -> Vec<Result<ClientUpdate>>;
}

/// Runs every job on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ClientExecutor for Sequential {
    fn run(
        &self,
        clients: &[u32],
        job: &(dyn Fn(u32) -> Result<ClientUpdate> + Sync),
    ) -> Vec<Result<ClientUpdate>> {
        clients.iter().map(|&k| job(k)).collect()
    }
}

/// Training and evaluation data plus the client partition of the training set.
#[derive(Debug, Clone, Copy)]
pub struct FederatedData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub partition: &'a ClientPartition,
}

/// Local training on client `k`: `E` epochs of mini-batch SGD starting at
/// `global`, reshuffling the client's points every epoch. Returns the
/// unclipped model delta and its norm.
pub fn client_update<R: rand::Rng + ?Sized>(
    k: usize,
    global: &ModelParams,
    partition: &ClientPartition,
    dataset: &Dataset,
    config: &FederatedConfig,
    rng: &mut R,
) -> Result<ClientUpdate> {
    let mut order = partition.client(k)?.to_vec();
    let mut local = global.clone();
    let mut ws = Workspace::new(global.arch());
    let mut grad = vec![0.0; global.len()];
    for _ in 0..config.local_epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let samples = batch.iter().map(|&i| {
                let i = i as usize;
                (dataset.row(i), dataset.label(i))
            });
            model::batch_gradient(&local, samples, &mut ws, &mut grad);
            model::sgd_step_in_place(&mut local, &grad, config.eta)?;
        }
    }
    let delta = local
        .values()
        .iter()
        .zip(global.values())
        .map(|(w, w0)| w - w0)
        .collect();
    Ok(ClientUpdate::new(delta))
}

/// Mutable curator state between rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub params: ModelParams,
    pub accountant: Option<MomentsAccountant>,
    pub rounds: Vec<RoundMetrics>,
    pub cc: u64,
}

impl ServerState {
    pub fn new(config: &FederatedConfig) -> Result<Self> {
        config.validate()?;
        let accountant = config
            .dp
            .as_ref()
            .map(|dp| MomentsAccountant::new(dp.epsilon, dp.lambda_max))
            .transpose()?;
        Ok(Self {
            params: model::init_params(&config.arch, config.seed)?,
            accountant,
            rounds: Vec::new(),
            cc: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundOutcome {
    Executed,
    /// The accountant would exceed the threshold; nothing was changed.
    BudgetExhausted,
}

fn check_data(config: &FederatedConfig, data: &FederatedData<'_>) -> Result<()> {
    if data.partition.num_clients() != config.clients {
        return Err(Error::Config(format!(
            "partition has {} clients, config expects {}",
            data.partition.num_clients(),
            config.clients
        )));
    }
    for (what, ds) in [("training", data.train), ("test", data.test)] {
        if ds.input_dim() != config.arch[0] {
            return Err(Error::Shape {
                what: "input dimension",
                expected: config.arch[0],
                actual: ds.input_dim(),
            });
        }
        let classes = config.arch[config.arch.len() - 1];
        if ds.labels().iter().any(|&y| usize::from(y) >= classes) {
            return Err(Error::Data(format!(
                "{what} labels exceed {classes} classes"
            )));
        }
    }
    Ok(())
}

/// Executes communication round `t` (1-based) unless the privacy budget
/// forbids it.
pub fn server_round<E: ClientExecutor + ?Sized>(
    state: &mut ServerState,
    t: u32,
    config: &FederatedConfig,
    data: &FederatedData<'_>,
    executor: &E,
) -> Result<RoundOutcome> {
    let m = config.m_schedule.value_at(t);

    let mut privacy = None;
    if let (Some(dp), Some(acct)) = (&config.dp, &state.accountant) {
        let sigma = dp.sigma_schedule.value_at(t);
        let charged = acct.charged(m as f64 / config.clients as f64, sigma)?;
        let delta = charged.delta(dp.epsilon);
        if delta > dp.delta_threshold {
            return Ok(RoundOutcome::BudgetExhausted);
        }
        state.accountant = Some(charged);
        privacy = Some((dp, sigma, delta));
    }

    let mut sampling = rng::stream(config.seed, t, SAMPLING_TAG);
    let mut clients: Vec<u32> = rand::seq::index::sample(&mut sampling, config.clients, m)
        .into_iter()
        .map(|k| k as u32)
        .collect();
    clients.sort_unstable();

    let global = &state.params;
    let job = |k: u32| {
        let mut r = rng::client_stream(config.seed, t, k);
        client_update(
            k as usize,
            global,
            data.partition,
            data.train,
            config,
            &mut r,
        )
    };
    let updates = executor
        .run(&clients, &job)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    if updates.len() != clients.len() {
        return Err(Error::Protocol(
            "executor returned the wrong number of updates",
        ));
    }

    let deltas: Vec<&[f64]> = updates.iter().map(|u| u.delta.as_slice()).collect();
    let v_c = telemetry::between_clients_variance(&deltas)?;
    let u_s = telemetry::update_scale(&deltas)?;

    let mut clip_bound = None;
    let mut degenerate = false;
    let step = match privacy {
        Some((dp, sigma, _)) => {
            let s = match dp.clip {
                ClipRule::Median => {
                    let norms: Vec<f64> = updates.iter().map(|u| u.norm).collect();
                    dp::median_norm(&norms)?
                }
                ClipRule::Fixed(s) => s,
            };
            clip_bound = Some(s);
            if s > 0.0 {
                let mut noise = rng::stream(config.seed, t, NOISE_TAG);
                Some(dp::dp_average(&updates, s, sigma, &mut noise)?)
            } else {
                log::warn!("round {t}: every sampled update is zero; model left unchanged");
                degenerate = true;
                None
            }
        }
        None => Some(dp::mean_update(&updates)?),
    };
    if let Some(step) = step {
        for (w, d) in state.params.values_mut().iter_mut().zip(&step) {
            *w += d;
        }
    }

    state.cc += m as u64;
    let accuracy = if t % config.eval_every == 0 {
        Some(model::evaluate(
            &state.params,
            data.test.features(),
            data.test.labels(),
        )?)
    } else {
        None
    };
    state.rounds.push(RoundMetrics {
        round: t,
        accuracy,
        delta: privacy.map(|(_, _, d)| d),
        clip_bound,
        v_c,
        u_s,
        m_t: m,
        sigma_t: privacy.map(|(_, s, _)| s),
        cc_cumulative: state.cc,
        degenerate,
    });
    Ok(RoundOutcome::Executed)
}

/// Runs rounds until the budget is spent, `max_rounds` is reached, or the
/// target accuracy is met, on a caller-supplied partition.
pub fn run_with_partition<E: ClientExecutor + ?Sized>(
    config: &FederatedConfig,
    data: &FederatedData<'_>,
    executor: &E,
) -> Result<TrainingHistory> {
    let mut state = ServerState::new(config)?;
    check_data(config, data)?;
    let mut stop_reason = StopReason::MaxRounds;
    for t in 1..=config.max_rounds {
        if server_round(&mut state, t, config, data, executor)? == RoundOutcome::BudgetExhausted {
            stop_reason = StopReason::BudgetExhausted;
            break;
        }
        let reached = matches!(
            (config.target_accuracy, state.rounds.last().and_then(|r| r.accuracy)),
            (Some(target), Some(acc)) if acc >= target
        );
        if reached {
            stop_reason = StopReason::TargetReached;
            break;
        }
    }
    if let Some(last) = state.rounds.last_mut() {
        if last.accuracy.is_none() {
            last.accuracy = Some(model::evaluate(
                &state.params,
                data.test.features(),
                data.test.labels(),
            )?);
        }
    }
    Ok(TrainingHistory {
        rounds: state.rounds,
        final_params: state.params,
        stop_reason,
        accountant: state.accountant,
    })
}

/// Partitions `train` into non-IID shards with the run seed, then trains.
pub fn run_federated<E: ClientExecutor + ?Sized>(
    config: &FederatedConfig,
    train: &Dataset,
    test: &Dataset,
    executor: &E,
) -> Result<TrainingHistory> {
    config.validate()?;
    let partition = shard_non_iid(train, config.clients, config.seed)?;
    let data = FederatedData {
        train,
        test,
        partition: &partition,
    };
    run_with_partition(config, &data, executor)
}

/// Non-private federated averaging: [`run_federated`] without DP.
pub fn run_fedavg_baseline<E: ClientExecutor + ?Sized>(
    config: &FederatedConfig,
    train: &Dataset,
    test: &Dataset,
    executor: &E,
) -> Result<TrainingHistory> {
    let config = FederatedConfig {
        dp: None,
        ..config.clone()
    };
    run_federated(&config, train, test, executor)
}
