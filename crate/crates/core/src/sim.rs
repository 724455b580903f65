//! Event-driven MRTA-Flood environment.
//!
//! Robots decide asynchronously: the robot whose current action finishes
//! first is the next to decide, and the clock jumps to that instant. A task
//! selected by one robot is claimed immediately and masked for its peers.
//! Distances are in kilometers, time in minutes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::TalentVector;

/// Node features per graph node (depot is node 0).
pub const NODE_FEATURES: usize = 8;
/// Per-peer features, pooled by mean and max.
pub const PEER_FEATURES: usize = 5;
/// Context vector width.
pub const CONTEXT_FEATURES: usize = 7 + 2 * PEER_FEATURES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub n_tasks: usize,
    pub n_robots: usize,
    /// Square operating area, km^2.
    pub area_km2: f64,
    /// Mission length, minutes.
    pub mission_duration: f64,
    /// Recharge time from empty to full range, minutes.
    pub recharge_full_minutes: f64,
    /// Earliest deadline as a fraction of mission duration.
    pub min_deadline_fraction: f64,
    /// Time a fully charged and loaded robot waits when it picks the depot
    /// while already there.
    pub idle_wait_minutes: f64,
    /// Normalization scale of flight range in observations, km.
    pub range_scale: f64,
    /// Normalization scale of nominal speed in observations, m/s.
    pub speed_scale: f64,
    /// Normalization scale of package capacity for the critic, packages.
    pub capacity_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_tasks: 50,
            n_robots: 5,
            area_km2: 5.0,
            mission_duration: 120.0,
            recharge_full_minutes: 50.0,
            min_deadline_fraction: 0.25,
            idle_wait_minutes: 5.0,
            range_scale: 15.0,
            speed_scale: 15.0,
            capacity_scale: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn side_km(&self) -> f64 {
        self.area_km2.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::InvalidArgument("scenario needs at least one task".into()));
        }
        if self.n_robots == 0 {
            return Err(Error::InvalidArgument("scenario needs at least one robot".into()));
        }
        let positive = [
            ("area_km2", self.area_km2),
            ("mission_duration", self.mission_duration),
            ("range_scale", self.range_scale),
            ("speed_scale", self.speed_scale),
            ("capacity_scale", self.capacity_scale),
            ("idle_wait_minutes", self.idle_wait_minutes),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.recharge_full_minutes >= 0.0) {
            return Err(Error::Config("recharge_full_minutes must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.min_deadline_fraction) {
            return Err(Error::Config("min_deadline_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Talents scaled to roughly [0, 1] (clamped).
    pub fn talent_features(&self, t: &TalentVector) -> [f64; 3] {
        [
            (t.flight_range / self.range_scale).clamp(0.0, 1.0),
            (t.nominal_speed / self.speed_scale).clamp(0.0, 1.0),
            (t.whole_packages() as f64 / self.capacity_scale).clamp(0.0, 1.0),
        ]
    }

    pub fn with_scale(&self, n_tasks: usize, n_robots: usize) -> EnvConfig {
        EnvConfig {
            n_tasks,
            n_robots,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub x: f64,
    pub y: f64,
    /// Deadline, minutes.
    pub deadline: f64,
}

/// Complete task graph with edge weights
/// `w_ij = 1 / (1 + sqrt(dx^2 + dy^2 + dtau^2))` over raw task features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
    pub depot: (f64, f64),
    /// Row-major `n_tasks x n_tasks`.
    pub adjacency: Vec<f64>,
}

pub fn edge_weight(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    1.0 / (1.0 + d2.sqrt())
}

impl TaskGraph {
    pub fn new(tasks: Vec<Task>, depot: (f64, f64)) -> Self {
        let n = tasks.len();
        let mut adjacency = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&tasks[i], &tasks[j]);
                adjacency[i * n + j] = edge_weight([a.x, a.y, a.deadline], [b.x, b.y, b.deadline]);
            }
        }
        TaskGraph {
            tasks,
            depot,
            adjacency,
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.len() + j]
    }

    /// Location of action `a` (0 = depot, i = task i-1).
    pub fn location(&self, action: usize) -> (f64, f64) {
        if action == 0 {
            self.depot
        } else {
            let t = &self.tasks[action - 1];
            (t.x, t.y)
        }
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// m/s to km/min.
pub fn speed_km_per_min(speed_mps: f64) -> f64 {
    speed_mps * 0.06
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Open,
    Completed,
    Expired,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: (f64, f64),
    /// km.
    pub remaining_range: f64,
    pub packages_remaining: u32,
    /// Time the current action finishes, minutes; infinite once retired.
    pub busy_until: f64,
    /// Action index of the current destination (0 = depot).
    pub destination: usize,
    pub talents: TalentVector,
}

impl RobotState {
    fn fresh(depot: (f64, f64), talents: TalentVector) -> Self {
        RobotState {
            position: depot,
            remaining_range: talents.flight_range,
            packages_remaining: talents.whole_packages(),
            busy_until: 0.0,
            destination: 0,
            talents,
        }
    }

    pub fn is_retired(&self) -> bool {
        self.busy_until.is_infinite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Delivered,
    Late,
    Recharged { minutes: f64 },
    Waited,
    Retired,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Delivered => write!(f, "delivered"),
            Outcome::Late => write!(f, "late"),
            Outcome::Recharged { minutes } => write!(f, "recharged:{minutes}"),
            Outcome::Waited => write!(f, "waited"),
            Outcome::Retired => write!(f, "retired"),
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delivered" => Ok(Outcome::Delivered),
            "late" => Ok(Outcome::Late),
            "waited" => Ok(Outcome::Waited),
            "retired" => Ok(Outcome::Retired),
            _ => match s.strip_prefix("recharged:") {
                Some(m) => m
                    .parse()
                    .map(|minutes| Outcome::Recharged { minutes })
                    .map_err(|e| Error::InvalidArgument(format!("bad recharge time `{m}`: {e}"))),
                None => Err(Error::InvalidArgument(format!("unknown outcome `{s}`"))),
            },
        }
    }
}

/// One line of a trajectory log: decision time, robot, action, outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub robot: usize,
    pub action: usize,
    pub outcome: Outcome,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.time, self.robot, self.action, self.outcome)
    }
}

impl FromStr for Event {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::InvalidArgument(format!("bad event line `{s}`")));
        }
        let bad = |what: &str| Error::InvalidArgument(format!("bad {what} in `{s}`"));
        Ok(Event {
            time: parts[0].parse().map_err(|_| bad("time"))?,
            robot: parts[1].parse().map_err(|_| bad("robot"))?,
            action: parts[2].parse().map_err(|_| bad("action"))?,
            outcome: parts[3].parse()?,
        })
    }
}

pub fn format_log(events: &[Event]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}

pub fn parse_log(s: &str) -> Result<Vec<Event>> {
    s.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.parse())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: EnvConfig,
    pub seed: u64,
    pub graph: TaskGraph,
}

impl Scenario {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Random depot, task locations and deadlines.
pub fn generate_scenario(config: &EnvConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.side_km();
    let depot = (rng.random_range(0.0..=side), rng.random_range(0.0..=side));
    let lo = config.min_deadline_fraction * config.mission_duration;
    let tasks = (0..config.n_tasks)
        .map(|_| Task {
            x: rng.random_range(0.0..=side),
            y: rng.random_range(0.0..=side),
            deadline: if lo < config.mission_duration {
                rng.random_range(lo..=config.mission_duration)
            } else {
                config.mission_duration
            },
        })
        .collect();
    Ok(Scenario {
        config: config.clone(),
        seed,
        graph: TaskGraph::new(tasks, depot),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    /// Always zero; the episode reward is paid at the end.
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub graph: TaskGraph,
    pub config: EnvConfig,
    pub robots: Vec<RobotState>,
    pub clock: f64,
    pub status: Vec<TaskStatus>,
    pub done: bool,
    pub log: Vec<Event>,
    /// Robot due to decide next, if the episode is running.
    next: Option<usize>,
}

impl MissionState {
    /// Fleet of identical robots with the given talents, all at the depot.
    pub fn new(scenario: &Scenario, talents: TalentVector) -> Result<Self> {
        scenario.config.validate()?;
        if !talents.is_valid() {
            return Err(Error::InvalidArgument(format!("invalid talents {talents:?}")));
        }
        let robots = (0..scenario.config.n_robots)
            .map(|_| RobotState::fresh(scenario.graph.depot, talents))
            .collect();
        let mut s = MissionState {
            graph: scenario.graph.clone(),
            config: scenario.config.clone(),
            robots,
            clock: 0.0,
            status: vec![TaskStatus::Open; scenario.graph.len()],
            done: false,
            log: Vec::new(),
            next: None,
        };
        s.advance();
        Ok(s)
    }

    pub fn n_tasks(&self) -> usize {
        self.graph.len()
    }

    /// Robot due to decide, or `None` once the episode is over.
    pub fn next_robot(&self) -> Option<usize> {
        if self.done {
            None
        } else {
            self.next
        }
    }

    pub fn completed(&self) -> usize {
        self.status.iter().filter(|s| **s == TaskStatus::Completed).count()
    }

    pub fn expired(&self) -> usize {
        self.status.iter().filter(|s| **s == TaskStatus::Expired).count()
    }

    pub fn open(&self) -> usize {
        self.status.iter().filter(|s| **s == TaskStatus::Open).count()
    }

    fn speed(&self, robot: usize) -> f64 {
        speed_km_per_min(self.robots[robot].talents.nominal_speed)
    }

    /// Feasibility mask over actions {0 = depot, 1..=N_T}. A task is feasible
    /// when open, the robot holds a package, it can reach the task and then
    /// the depot on its remaining range (inclusive), and it arrives no later
    /// than the deadline.
    pub fn feasible_actions(&self, robot: usize) -> Vec<bool> {
        let n = self.n_tasks();
        let mut mask = vec![false; n + 1];
        mask[0] = true;
        let r = &self.robots[robot];
        if r.packages_remaining == 0 {
            return mask;
        }
        let speed = self.speed(robot);
        if speed <= 0.0 {
            return mask;
        }
        for i in 0..n {
            if self.status[i] != TaskStatus::Open {
                continue;
            }
            let loc = self.graph.location(i + 1);
            let out = dist(r.position, loc);
            let back = dist(loc, self.graph.depot);
            let arrival = self.clock + out / speed;
            mask[i + 1] = r.remaining_range >= out + back && arrival <= self.graph.tasks[i].deadline;
        }
        mask
    }

    fn is_stuck(&self, robot: usize) -> bool {
        let r = &self.robots[robot];
        let at_depot = r.position == self.graph.depot;
        let full_range = r.remaining_range >= r.talents.flight_range;
        let full_load = r.packages_remaining >= r.talents.whole_packages();
        at_depot && full_range && full_load && self.feasible_actions(robot).iter().skip(1).all(|m| !m)
    }

    /// Applies `action` for the robot due to decide and advances the clock
    /// to the next decision event.
    pub fn step(&mut self, robot: usize, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        if self.next != Some(robot) {
            return Err(Error::Contract(format!(
                "robot {robot} is not due to decide (next is {:?})",
                self.next
            )));
        }
        let mask = self.feasible_actions(robot);
        if action >= mask.len() || !mask[action] {
            return Err(Error::Contract(format!("action {action} is masked for robot {robot}")));
        }
        let depot = self.graph.depot;
        let speed = self.speed(robot);
        let clock = self.clock;
        let dest = self.graph.location(action);
        let r = &mut self.robots[robot];
        let d = dist(r.position, dest);
        let travel = if d > 0.0 { d / speed } else { 0.0 };
        let arrival = clock + travel;
        let outcome = if action == 0 {
            let full = r.talents.flight_range;
            let cap = r.talents.whole_packages();
            if d == 0.0 && r.remaining_range >= full && r.packages_remaining >= cap {
                r.busy_until = clock + self.config.idle_wait_minutes;
                Outcome::Waited
            } else {
                let left = (r.remaining_range - d).max(0.0);
                let minutes = if full > 0.0 {
                    self.config.recharge_full_minutes * (1.0 - left / full)
                } else {
                    0.0
                };
                r.remaining_range = full;
                r.packages_remaining = cap;
                r.busy_until = arrival + minutes;
                Outcome::Recharged { minutes }
            }
        } else {
            r.remaining_range = (r.remaining_range - d).max(0.0);
            r.packages_remaining -= 1;
            r.busy_until = arrival;
            let deadline = self.graph.tasks[action - 1].deadline;
            if arrival <= deadline && arrival <= self.config.mission_duration {
                self.status[action - 1] = TaskStatus::Completed;
                Outcome::Delivered
            } else {
                self.status[action - 1] = TaskStatus::Expired;
                Outcome::Late
            }
        };
        r.position = dest;
        r.destination = action;
        debug_assert!(dist(r.position, depot).is_finite());
        self.log.push(Event {
            time: clock,
            robot,
            action,
            outcome,
        });
        self.advance();
        Ok(StepResult {
            reward: 0.0,
            done: self.done,
        })
    }

    fn advance(&mut self) {
        loop {
            let next = (0..self.robots.len())
                .filter(|&i| !self.robots[i].is_retired())
                .min_by(|&a, &b| {
                    self.robots[a]
                        .busy_until
                        .partial_cmp(&self.robots[b].busy_until)
                        .expect("finite busy times")
                        .then(a.cmp(&b))
                });
            let Some(i) = next else {
                self.finish();
                return;
            };
            let t = self.robots[i].busy_until;
            if t > self.clock {
                self.clock = t;
            }
            for (k, task) in self.graph.tasks.iter().enumerate() {
                if self.status[k] == TaskStatus::Open && task.deadline < self.clock {
                    self.status[k] = TaskStatus::Expired;
                }
            }
            if self.clock >= self.config.mission_duration || self.open() == 0 {
                self.finish();
                return;
            }
            if self.is_stuck(i) {
                self.robots[i].busy_until = f64::INFINITY;
                self.log.push(Event {
                    time: self.clock,
                    robot: i,
                    action: 0,
                    outcome: Outcome::Retired,
                });
                continue;
            }
            self.next = Some(i);
            return;
        }
    }

    fn finish(&mut self) {
        self.done = true;
        self.next = None;
    }

    /// `10 * N_success / N_T`; only on-time deliveries count.
    pub fn episode_reward(&self) -> Result<f64> {
        if !self.done {
            return Err(Error::Contract(
                "episode_reward called before the episode is done".into(),
            ));
        }
        Ok(10.0 * self.completed() as f64 / self.n_tasks() as f64)
    }

    pub fn completion_rate(&self) -> f64 {
        self.completed() as f64 / self.n_tasks() as f64
    }

    /// Normalized observation for `robot`.
    pub fn observe(&self, robot: usize) -> Observation {
        let cfg = &self.config;
        let side = cfg.side_km();
        let diag = side * std::f64::consts::SQRT_2;
        let dur = cfg.mission_duration;
        let n = self.n_tasks();
        let me = &self.robots[robot];
        let mask = self.feasible_actions(robot);
        let speed = self.speed(robot);
        let unit = |v: f64| v.clamp(0.0, 1.0);

        let mut nodes = Vec::with_capacity(n + 1);
        let d0 = dist(me.position, self.graph.depot);
        nodes.push([
            unit(self.graph.depot.0 / side),
            unit(self.graph.depot.1 / side),
            0.0,
            1.0,
            1.0,
            unit(d0 / diag),
            1.0,
            0.0,
        ]);
        for (i, t) in self.graph.tasks.iter().enumerate() {
            let d = dist(me.position, (t.x, t.y));
            let open = self.status[i] == TaskStatus::Open;
            let slack = if open && speed > 0.0 {
                unit((t.deadline - self.clock - d / speed) / dur)
            } else {
                0.0
            };
            nodes.push([
                unit(t.x / side),
                unit(t.y / side),
                unit(t.deadline / dur),
                if open { 1.0 } else { 0.0 },
                0.0,
                unit(d / diag),
                if mask[i + 1] { 1.0 } else { 0.0 },
                slack,
            ]);
        }

        let mut adjacency = vec![0.0; (n + 1) * (n + 1)];
        for a in 0..=n {
            for b in 0..=n {
                let (pa, pb) = (&nodes[a], &nodes[b]);
                adjacency[a * (n + 1) + b] = edge_weight([pa[0], pa[1], pa[2]], [pb[0], pb[1], pb[2]]);
            }
        }

        let peer_block = |p: &RobotState| {
            let dest = self.graph.location(p.destination);
            let cap = p.talents.whole_packages();
            let arrival = if p.is_retired() { dur } else { p.busy_until - self.clock };
            [
                unit(dest.0 / side),
                unit(dest.1 / side),
                unit(safe_ratio(p.remaining_range, p.talents.flight_range)),
                unit(safe_ratio(p.packages_remaining as f64, cap as f64)),
                unit(arrival / dur),
            ]
        };
        let peers: Vec<[f64; PEER_FEATURES]> = (0..self.robots.len())
            .filter(|&k| k != robot)
            .map(|k| peer_block(&self.robots[k]))
            .collect();
        let mut mean = [0.0; PEER_FEATURES];
        let mut max = [0.0; PEER_FEATURES];
        for p in &peers {
            for k in 0..PEER_FEATURES {
                mean[k] += p[k] / peers.len() as f64;
                max[k] = f64::max(max[k], p[k]);
            }
        }
        let talents = [me.talents.flight_range, me.talents.nominal_speed];
        let mut context = Vec::with_capacity(CONTEXT_FEATURES);
        context.extend([
            unit(self.clock / dur),
            unit(me.position.0 / side),
            unit(me.position.1 / side),
            unit(safe_ratio(me.remaining_range, me.talents.flight_range)),
            unit(safe_ratio(
                me.packages_remaining as f64,
                me.talents.whole_packages() as f64,
            )),
            unit(talents[0] / cfg.range_scale),
            unit(talents[1] / cfg.speed_scale),
        ]);
        context.extend(mean);
        context.extend(max);

        Observation {
            robot,
            nodes,
            adjacency,
            context,
            mask,
            talents,
        }
    }
}

fn safe_ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

/// Everything a robot sees at a decision point. All feature values lie in
/// [0, 1]; positions are scaled by the area side, times by the mission
/// duration, ranges and loads by the robot's own talents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub robot: usize,
    /// Depot first, then tasks: x, y, deadline, open, is-depot, distance from
    /// robot, feasible, deadline slack.
    pub nodes: Vec<[f64; NODE_FEATURES]>,
    /// Edge weights over normalized (x, y, deadline), row-major.
    pub adjacency: Vec<f64>,
    /// Time, own position, own range and load fractions, talent features,
    /// then mean and max of peer blocks (destination, range fraction, load
    /// fraction, time to arrival).
    pub context: Vec<f64>,
    pub mask: Vec<bool>,
    /// Decoded flight range and nominal speed of this episode's robots.
    pub talents: [f64; 2],
}

impl Observation {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn feasible_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Scripted policies for baselines, debugging and the `simulate` command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptedPolicy {
    /// Uniform over feasible actions (depot included).
    Random,
    /// Uniform over feasible tasks; depot only when no task is feasible.
    RandomTask,
    /// Closest feasible task, depot when none.
    Nearest,
    /// Feasible task with the earliest deadline, depot when none.
    EarliestDeadline,
}

impl FromStr for ScriptedPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ScriptedPolicy::Random),
            "random-task" => Ok(ScriptedPolicy::RandomTask),
            "nearest" => Ok(ScriptedPolicy::Nearest),
            "earliest-deadline" | "edf" => Ok(ScriptedPolicy::EarliestDeadline),
            _ => Err(Error::InvalidArgument(format!("unknown scripted policy `{s}`"))),
        }
    }
}

impl ScriptedPolicy {
    pub fn choose<R: Rng>(&self, state: &MissionState, robot: usize, rng: &mut R) -> usize {
        let mask = state.feasible_actions(robot);
        let tasks: Vec<usize> = (1..mask.len()).filter(|&a| mask[a]).collect();
        match self {
            ScriptedPolicy::Random => {
                let all: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
                all[rng.random_range(0..all.len())]
            }
            ScriptedPolicy::RandomTask => {
                if tasks.is_empty() {
                    0
                } else {
                    tasks[rng.random_range(0..tasks.len())]
                }
            }
            ScriptedPolicy::Nearest => {
                let pos = state.robots[robot].position;
                tasks
                    .into_iter()
                    .min_by(|&a, &b| {
                        dist(pos, state.graph.location(a))
                            .partial_cmp(&dist(pos, state.graph.location(b)))
                            .expect("finite")
                    })
                    .unwrap_or(0)
            }
            ScriptedPolicy::EarliestDeadline => tasks
                .into_iter()
                .min_by(|&a, &b| {
                    state.graph.tasks[a - 1]
                        .deadline
                        .partial_cmp(&state.graph.tasks[b - 1].deadline)
                        .expect("finite")
                })
                .unwrap_or(0),
        }
    }

    /// Plays one full episode and returns the final state.
    pub fn play(&self, scenario: &Scenario, talents: TalentVector, seed: u64) -> Result<MissionState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = MissionState::new(scenario, talents)?;
        while let Some(robot) = state.next_robot() {
            let a = self.choose(&state, robot, &mut rng);
            state.step(robot, a)?;
        }
        Ok(state)
    }
}

/// Replays logged decisions on a fresh episode. Retirement events are
/// produced by the environment and skipped on input.
pub fn replay(scenario: &Scenario, talents: TalentVector, events: &[Event]) -> Result<MissionState> {
    let mut state = MissionState::new(scenario, talents)?;
    for e in events.iter().filter(|e| e.outcome != Outcome::Retired) {
        state.step(e.robot, e.action)?;
    }
    Ok(state)
}
