//! Multi-agent environments behind a reset/step interface, plus a name-keyed registry.
//!
//! Built-ins are two-player games:
//! * `rps` / `matrix`: one-shot matrix game. Tables are square and shared by both seats:
//!   player 1 receives `A[a1][a2]`, player 2 receives `A[a2][a1]`. The game is zero-sum
//!   exactly when `A` is antisymmetric.
//! * `iterated_rps` / `iterated_matrix`: the same stage game repeated for `horizon` steps,
//!   each agent observing the previous joint action as a one-hot over `1 + n²` states.
//! * `grid_duel`: a 5×5 shoot-out with actions idle/up/down/left/right/fire.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Win,
    Loss,
    Tie,
}

impl Outcome {
    /// Score with a tie counted as half a win.
    pub fn score(self) -> f64 {
        match self {
            Outcome::Win => 1.0,
            Outcome::Loss => 0.0,
            Outcome::Tie => 0.5,
        }
    }

    pub fn flip(self) -> Outcome {
        match self {
            Outcome::Win => Outcome::Loss,
            Outcome::Loss => Outcome::Win,
            Outcome::Tie => Outcome::Tie,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Outcome::Win => 0,
            Outcome::Loss => 1,
            Outcome::Tie => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Outcome> {
        match v {
            0 => Some(Outcome::Win),
            1 => Some(Outcome::Loss),
            2 => Some(Outcome::Tie),
            _ => None,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Win => "win",
            Outcome::Loss => "loss",
            Outcome::Tie => "tie",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub env_name: String,
    pub n_agents: usize,
    pub horizon: usize,
    pub payoff_table: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl EnvSpec {
    /// Spec with the env's default horizon and table.
    pub fn named(env_name: &str, seed: u64) -> Self {
        let horizon = default_horizon(env_name);
        EnvSpec {
            env_name: env_name.to_string(),
            n_agents: 2,
            horizon,
            payoff_table: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_agents must be >= 2, got {}",
                self.n_agents
            )));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        if let Some(t) = &self.payoff_table {
            if t.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("payoff table entry".into()));
            }
        }
        Ok(())
    }
}

pub fn default_horizon(env_name: &str) -> usize {
    match env_name {
        "iterated_rps" | "iterated_matrix" => 10,
        "grid_duel" => GRID_HORIZON,
        _ => 1,
    }
}

/// Per-step information; `outcome` is present exactly on the final step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    pub outcome: Option<Vec<Outcome>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub info: StepInfo,
}

pub trait MultiAgentEnv: Send {
    fn name(&self) -> &str;
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn horizon(&self) -> usize;
    fn zero_sum(&self) -> bool;
    fn reset(&mut self) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[usize]) -> Result<StepResult>;

    /// Stage payoff table for one-shot matrix games (used by the exploitability oracle).
    fn payoff_table(&self) -> Option<&[Vec<f64>]> {
        None
    }

    /// Restarts the env's internal random stream.
    fn reseed(&mut self, _seed: u64) {}
}

pub fn rps_table() -> Vec<Vec<f64>> {
    // rows: own action (rock, paper, scissors); cols: opponent action
    vec![
        vec![0.0, -1.0, 1.0],
        vec![1.0, 0.0, -1.0],
        vec![-1.0, 1.0, 0.0],
    ]
}

fn check_actions(actions: &[usize], n_agents: usize, n_actions: usize) -> Result<()> {
    if actions.len() != n_agents {
        return Err(Error::LengthMismatch(format!(
            "expected {n_agents} actions, got {}",
            actions.len()
        )));
    }
    for (agent, &action) in actions.iter().enumerate() {
        if action >= n_actions {
            return Err(Error::ActionOutOfRange {
                agent,
                action,
                n_actions,
            });
        }
    }
    Ok(())
}

fn outcomes_from_returns(r1: f64, r2: f64) -> Vec<Outcome> {
    if r1 > r2 {
        vec![Outcome::Win, Outcome::Loss]
    } else if r1 < r2 {
        vec![Outcome::Loss, Outcome::Win]
    } else {
        vec![Outcome::Tie, Outcome::Tie]
    }
}

fn validate_table(table: &[Vec<f64>]) -> Result<usize> {
    let n = table.len();
    if n == 0 || table.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidArgument(
            "payoff table must be a non-empty square matrix".into(),
        ));
    }
    if table.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("payoff table entry".into()));
    }
    Ok(n)
}

fn is_antisymmetric(table: &[Vec<f64>]) -> bool {
    let n = table.len();
    (0..n).all(|i| (0..n).all(|j| table[i][j] == -table[j][i]))
}

fn require_two_agents(spec: &EnvSpec) -> Result<()> {
    if spec.n_agents != 2 {
        return Err(Error::InvalidArgument(format!(
            "{} is a two-player game, got n_agents={}",
            spec.env_name, spec.n_agents
        )));
    }
    Ok(())
}

/// One-shot symmetric matrix game.
pub struct MatrixGame {
    name: String,
    table: Vec<Vec<f64>>,
    zero_sum: bool,
    done: bool,
}

impl MatrixGame {
    pub fn new(name: &str, table: Vec<Vec<f64>>) -> Result<Self> {
        validate_table(&table)?;
        let zero_sum = is_antisymmetric(&table);
        Ok(MatrixGame {
            name: name.to_string(),
            table,
            zero_sum,
            done: false,
        })
    }
}

impl MultiAgentEnv for MatrixGame {
    fn name(&self) -> &str {
        &self.name
    }
    fn n_agents(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn n_actions(&self) -> usize {
        self.table.len()
    }
    fn horizon(&self) -> usize {
        1
    }
    fn zero_sum(&self) -> bool {
        self.zero_sum
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.done = false;
        vec![vec![1.0], vec![1.0]]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_actions(actions, 2, self.table.len())?;
        let r1 = self.table[actions[0]][actions[1]];
        let r2 = self.table[actions[1]][actions[0]];
        self.done = true;
        Ok(StepResult {
            observations: vec![vec![1.0], vec![1.0]],
            rewards: vec![r1, r2],
            done: true,
            info: StepInfo {
                outcome: Some(outcomes_from_returns(r1, r2)),
            },
        })
    }

    fn payoff_table(&self) -> Option<&[Vec<f64>]> {
        Some(&self.table)
    }
}

/// Repeated matrix game with memory-one observations.
pub struct IteratedMatrixGame {
    name: String,
    table: Vec<Vec<f64>>,
    zero_sum: bool,
    horizon: usize,
    t: usize,
    returns: [f64; 2],
}

impl IteratedMatrixGame {
    pub fn new(name: &str, table: Vec<Vec<f64>>, horizon: usize) -> Result<Self> {
        validate_table(&table)?;
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        let zero_sum = is_antisymmetric(&table);
        Ok(IteratedMatrixGame {
            name: name.to_string(),
            table,
            zero_sum,
            horizon,
            t: 0,
            returns: [0.0; 2],
        })
    }

    fn one_hot(&self, state: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.obs_dim()];
        v[state] = 1.0;
        v
    }
}

impl MultiAgentEnv for IteratedMatrixGame {
    fn name(&self) -> &str {
        &self.name
    }
    fn n_agents(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        1 + self.table.len() * self.table.len()
    }
    fn n_actions(&self) -> usize {
        self.table.len()
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn zero_sum(&self) -> bool {
        self.zero_sum
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.t = 0;
        self.returns = [0.0; 2];
        vec![self.one_hot(0), self.one_hot(0)]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.t >= self.horizon {
            return Err(Error::EpisodeDone);
        }
        let n = self.table.len();
        check_actions(actions, 2, n)?;
        let (a1, a2) = (actions[0], actions[1]);
        let r1 = self.table[a1][a2];
        let r2 = self.table[a2][a1];
        self.returns[0] += r1;
        self.returns[1] += r2;
        self.t += 1;
        let done = self.t >= self.horizon;
        let outcome = done.then(|| outcomes_from_returns(self.returns[0], self.returns[1]));
        Ok(StepResult {
            observations: vec![self.one_hot(1 + a1 * n + a2), self.one_hot(1 + a2 * n + a1)],
            rewards: vec![r1, r2],
            done,
            info: StepInfo { outcome },
        })
    }
}

pub const GRID_SIZE: i32 = 5;
pub const GRID_HORIZON: usize = 50;
pub const GRID_FIRE_RANGE: i32 = 3;
pub const GRID_OBS_DIM: usize = 2 * 25 + 2 * 4 + 1;

/// Grid actions.
pub const IDLE: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;
pub const RIGHT: usize = 4;
pub const FIRE: usize = 5;

const DIRS: [(i32, i32); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Agent {
    row: i32,
    col: i32,
    facing: usize,
}

/// Two agents on a 5×5 board. Moving also turns the agent; firing hits the opponent if it
/// stands within range along the facing direction. Fire resolves on the board as it was at
/// the start of the step, then non-firing agents move. A mutual hit or the horizon is a tie.
pub struct GridDuel {
    rng: ChaCha8Rng,
    horizon: usize,
    agents: [Agent; 2],
    t: usize,
    done: bool,
}

impl GridDuel {
    pub fn new(seed: u64, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        let blank = Agent {
            row: 0,
            col: 0,
            facing: 0,
        };
        Ok(GridDuel {
            rng: ChaCha8Rng::seed_from_u64(seed),
            horizon,
            agents: [blank; 2],
            t: 0,
            done: true,
        })
    }

    fn observe(&self, me: usize) -> Vec<f64> {
        let mut v = vec![0.0; GRID_OBS_DIM];
        let own = self.agents[me];
        let opp = self.agents[1 - me];
        v[(own.row * GRID_SIZE + own.col) as usize] = 1.0;
        v[25 + (opp.row * GRID_SIZE + opp.col) as usize] = 1.0;
        v[50 + own.facing] = 1.0;
        v[54 + opp.facing] = 1.0;
        v[58] = 1.0;
        v
    }

    fn hits(&self, shooter: usize) -> bool {
        let s = self.agents[shooter];
        let o = self.agents[1 - shooter];
        let (dr, dc) = DIRS[s.facing];
        (1..=GRID_FIRE_RANGE).any(|k| s.row + dr * k == o.row && s.col + dc * k == o.col)
    }

    /// Board cells and facings, for tests and debugging.
    pub fn board(&self) -> [(i32, i32, usize); 2] {
        [
            (self.agents[0].row, self.agents[0].col, self.agents[0].facing),
            (self.agents[1].row, self.agents[1].col, self.agents[1].facing),
        ]
    }
}

impl MultiAgentEnv for GridDuel {
    fn name(&self) -> &str {
        "grid_duel"
    }
    fn n_agents(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        GRID_OBS_DIM
    }
    fn n_actions(&self) -> usize {
        6
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn zero_sum(&self) -> bool {
        true
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        let cells = (GRID_SIZE * GRID_SIZE) as usize;
        let c0 = self.rng.gen_range(0..cells);
        let mut c1 = self.rng.gen_range(0..cells - 1);
        if c1 >= c0 {
            c1 += 1;
        }
        for (agent, cell) in self.agents.iter_mut().zip([c0, c1]) {
            agent.row = cell as i32 / GRID_SIZE;
            agent.col = cell as i32 % GRID_SIZE;
            agent.facing = self.rng.gen_range(0..4);
        }
        self.t = 0;
        self.done = false;
        vec![self.observe(0), self.observe(1)]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_actions(actions, 2, 6)?;
        let hit = [
            actions[0] == FIRE && self.hits(0),
            actions[1] == FIRE && self.hits(1),
        ];

        let mut targets = [None, None];
        for i in 0..2 {
            let a = actions[i];
            if (UP..=RIGHT).contains(&a) {
                let facing = a - UP;
                self.agents[i].facing = facing;
                let (dr, dc) = DIRS[facing];
                let (r, c) = (self.agents[i].row + dr, self.agents[i].col + dc);
                if (0..GRID_SIZE).contains(&r) && (0..GRID_SIZE).contains(&c) {
                    targets[i] = Some((r, c));
                }
            }
        }
        // Moves into the other's current or target cell are cancelled.
        let mut moves = targets;
        if let (Some(a), Some(b)) = (targets[0], targets[1]) {
            if a == b {
                moves = [None, None];
            }
        }
        for i in 0..2 {
            if let Some((r, c)) = moves[i] {
                let other = self.agents[1 - i];
                let other_stays = moves[1 - i].is_none();
                if other_stays && other.row == r && other.col == c {
                    moves[i] = None;
                }
            }
        }
        // A swap of positions is also blocked.
        if let (Some(a), Some(b)) = (moves[0], moves[1]) {
            if a == (self.agents[1].row, self.agents[1].col)
                && b == (self.agents[0].row, self.agents[0].col)
            {
                moves = [None, None];
            }
        }
        for i in 0..2 {
            if let Some((r, c)) = moves[i] {
                self.agents[i].row = r;
                self.agents[i].col = c;
            }
        }

        self.t += 1;
        let rewards = match hit {
            [true, false] => vec![1.0, -1.0],
            [false, true] => vec![-1.0, 1.0],
            _ => vec![0.0, 0.0],
        };
        let done = hit[0] || hit[1] || self.t >= self.horizon;
        self.done = done;
        let outcome = done.then(|| outcomes_from_returns(rewards[0], rewards[1]));
        Ok(StepResult {
            observations: vec![self.observe(0), self.observe(1)],
            rewards,
            done,
            info: StepInfo { outcome },
        })
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

pub type EnvCtor = Arc<dyn Fn(&EnvSpec) -> Result<Box<dyn MultiAgentEnv>> + Send + Sync>;

/// Name-keyed constructor table. `EnvRegistry::global()` is prefilled with the built-ins;
/// extra envs are added with `register`.
#[derive(Clone)]
pub struct EnvRegistry {
    ctors: HashMap<String, EnvCtor>,
}

impl EnvRegistry {
    pub fn empty() -> Self {
        EnvRegistry {
            ctors: HashMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = EnvRegistry::empty();
        r.register("rps", |spec| {
            require_two_agents(spec)?;
            one_shot_horizon(spec)?;
            Ok(Box::new(MatrixGame::new("rps", rps_table())?))
        });
        r.register("matrix", |spec| {
            require_two_agents(spec)?;
            one_shot_horizon(spec)?;
            let table = spec.payoff_table.clone().ok_or_else(|| {
                Error::InvalidArgument("matrix env requires a payoff_table".into())
            })?;
            Ok(Box::new(MatrixGame::new("matrix", table)?))
        });
        r.register("iterated_rps", |spec| {
            require_two_agents(spec)?;
            Ok(Box::new(IteratedMatrixGame::new(
                "iterated_rps",
                rps_table(),
                spec.horizon,
            )?))
        });
        r.register("iterated_matrix", |spec| {
            require_two_agents(spec)?;
            let table = spec.payoff_table.clone().ok_or_else(|| {
                Error::InvalidArgument("iterated_matrix env requires a payoff_table".into())
            })?;
            Ok(Box::new(IteratedMatrixGame::new(
                "iterated_matrix",
                table,
                spec.horizon,
            )?))
        });
        r.register("grid_duel", |spec| {
            require_two_agents(spec)?;
            Ok(Box::new(GridDuel::new(spec.seed, spec.horizon)?))
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, ctor: F)
    where
        F: Fn(&EnvSpec) -> Result<Box<dyn MultiAgentEnv>> + Send + Sync + 'static,
    {
        self.ctors.insert(name.to_string(), Arc::new(ctor));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.ctors.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.ctors.keys().cloned().collect();
        v.sort();
        v
    }

    pub fn make(&self, spec: &EnvSpec) -> Result<Box<dyn MultiAgentEnv>> {
        spec.validate()?;
        let ctor = self
            .ctors
            .get(&spec.env_name)
            .ok_or_else(|| Error::UnknownEnv(spec.env_name.clone()))?;
        ctor(spec)
    }

    fn global_lock() -> &'static RwLock<EnvRegistry> {
        static GLOBAL: OnceLock<RwLock<EnvRegistry>> = OnceLock::new();
        GLOBAL.get_or_init(|| RwLock::new(EnvRegistry::with_builtins()))
    }

    /// Adds an env to the process-wide registry used by `make_env`.
    pub fn register_global<F>(name: &str, ctor: F)
    where
        F: Fn(&EnvSpec) -> Result<Box<dyn MultiAgentEnv>> + Send + Sync + 'static,
    {
        Self::global_lock()
            .write()
            .expect("env registry poisoned")
            .register(name, ctor);
    }

    pub fn global() -> EnvRegistry {
        Self::global_lock()
            .read()
            .expect("env registry poisoned")
            .clone()
    }
}

fn one_shot_horizon(spec: &EnvSpec) -> Result<()> {
    if spec.horizon != 1 {
        return Err(Error::InvalidArgument(format!(
            "{} is a one-shot game; horizon must be 1, got {}",
            spec.env_name, spec.horizon
        )));
    }
    Ok(())
}

pub fn make_env(spec: &EnvSpec) -> Result<Box<dyn MultiAgentEnv>> {
    EnvRegistry::global().make(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROCK: usize = 0;
    const PAPER: usize = 1;
    const SCISSORS: usize = 2;

    #[test]
    fn rps_canonical_payoffs() {
        let mut env = make_env(&EnvSpec::named("rps", 0)).unwrap();
        let obs = env.reset();
        assert_eq!(obs, vec![vec![1.0], vec![1.0]]);
        let r = env.step(&[ROCK, SCISSORS]).unwrap();
        assert_eq!(r.rewards, vec![1.0, -1.0]);
        assert!(r.done);
        assert_eq!(r.info.outcome, Some(vec![Outcome::Win, Outcome::Loss]));

        env.reset();
        let r = env.step(&[PAPER, PAPER]).unwrap();
        assert_eq!(r.rewards, vec![0.0, 0.0]);
        assert_eq!(r.info.outcome, Some(vec![Outcome::Tie, Outcome::Tie]));
        assert!(matches!(env.step(&[0, 0]), Err(Error::EpisodeDone)));
    }

    #[test]
    fn rejects_out_of_range_actions() {
        let mut env = make_env(&EnvSpec::named("rps", 0)).unwrap();
        env.reset();
        assert!(matches!(
            env.step(&[3, 0]),
            Err(Error::ActionOutOfRange { agent: 0, .. })
        ));
        assert!(env.step(&[0]).is_err());
    }

    #[test]
    fn iterated_rps_runs_to_horizon() {
        let mut env = make_env(&EnvSpec::named("iterated_rps", 0)).unwrap();
        let obs = env.reset();
        assert_eq!(obs[0][0], 1.0);
        assert_eq!(obs[0].iter().sum::<f64>(), 1.0);
        for t in 0..10 {
            // player 1 wins only the first round
            let acts = if t == 0 { [PAPER, ROCK] } else { [ROCK, ROCK] };
            let r = env.step(&acts).unwrap();
            assert_eq!(r.done, t == 9);
            assert_eq!(r.info.outcome.is_some(), t == 9);
            if t == 9 {
                assert_eq!(r.info.outcome, Some(vec![Outcome::Win, Outcome::Loss]));
            }
        }
        assert!(env.step(&[0, 0]).is_err());
    }

    #[test]
    fn iterated_observation_encodes_joint_action() {
        let mut env = IteratedMatrixGame::new("it", rps_table(), 3).unwrap();
        env.reset();
        let r = env.step(&[PAPER, SCISSORS]).unwrap();
        assert_eq!(r.observations[0][1 + PAPER * 3 + SCISSORS], 1.0);
        assert_eq!(r.observations[1][1 + SCISSORS * 3 + PAPER], 1.0);
    }

    #[test]
    fn grid_duel_seeded_reset() {
        let spec = EnvSpec::named("grid_duel", 7);
        let mut a = GridDuel::new(spec.seed, spec.horizon).unwrap();
        let mut b = GridDuel::new(spec.seed, spec.horizon).unwrap();
        assert_eq!(a.reset(), b.reset());
        assert_eq!(a.board(), b.board());
        let [(r0, c0, _), (r1, c1, _)] = a.board();
        assert_ne!((r0, c0), (r1, c1));
    }

    #[test]
    fn grid_duel_fire_hits_in_line() {
        let mut env = GridDuel::new(0, 50).unwrap();
        env.reset();
        env.agents[0] = Agent {
            row: 2,
            col: 0,
            facing: 3,
        };
        env.agents[1] = Agent {
            row: 2,
            col: 2,
            facing: 0,
        };
        let r = env.step(&[FIRE, IDLE]).unwrap();
        assert_eq!(r.rewards, vec![1.0, -1.0]);
        assert_eq!(r.info.outcome, Some(vec![Outcome::Win, Outcome::Loss]));
    }

    #[test]
    fn grid_duel_mutual_hit_is_tie() {
        let mut env = GridDuel::new(0, 50).unwrap();
        env.reset();
        env.agents[0] = Agent {
            row: 1,
            col: 1,
            facing: 1,
        };
        env.agents[1] = Agent {
            row: 3,
            col: 1,
            facing: 0,
        };
        let r = env.step(&[FIRE, FIRE]).unwrap();
        assert!(r.done);
        assert_eq!(r.info.outcome, Some(vec![Outcome::Tie, Outcome::Tie]));
    }

    #[test]
    fn grid_duel_idle_until_horizon_ties() {
        let mut env = GridDuel::new(3, 4).unwrap();
        env.reset();
        for t in 0..4 {
            let r = env.step(&[IDLE, IDLE]).unwrap();
            assert_eq!(r.done, t == 3);
        }
    }

    #[test]
    fn matrix_needs_table_and_unknown_env_errors() {
        assert!(make_env(&EnvSpec::named("matrix", 0)).is_err());
        let mut spec = EnvSpec::named("matrix", 0);
        spec.payoff_table = Some(vec![vec![1.0, 0.0], vec![3.0, 2.0]]);
        let mut env = make_env(&spec).unwrap();
        assert!(!env.zero_sum());
        env.reset();
        let r = env.step(&[0, 1]).unwrap();
        assert_eq!(r.rewards, vec![0.0, 3.0]);
        assert!(matches!(
            make_env(&EnvSpec::named("pong", 0)),
            Err(Error::UnknownEnv(_))
        ));
    }

    #[test]
    fn registry_is_extensible() {
        let mut reg = EnvRegistry::with_builtins();
        reg.register("tiny", |_| {
            Ok(Box::new(MatrixGame::new(
                "tiny",
                vec![vec![0.0, 1.0], vec![-1.0, 0.0]],
            )?))
        });
        let env = reg.make(&EnvSpec::named("tiny", 0)).unwrap();
        assert_eq!(env.n_actions(), 2);
        assert!(env.zero_sum());
    }
}
