//! Seedable classic-control environments.
//!
//! Each environment owns its random generator, so a seed plus an action
//! sequence fully determines every trajectory. Stepping a finished episode is
//! an error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { dims: usize, low: f64, high: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub actions: ActionSpace,
    pub max_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Steps taken so far in this episode, including this one.
    pub steps: usize,
}

pub trait Env: Send {
    fn spec(&self) -> EnvSpec;
    /// Starts a new episode and returns the observed state.
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<StepResult>;
}

pub const ENV_NAMES: [&str; 4] = ["cartpole", "acrobot", "pointreach", "bandit2"];

pub fn make_env(name: &str, seed: u64) -> Result<Box<dyn Env>> {
    Ok(match name {
        "cartpole" => Box::new(CartPole::new(seed)),
        "acrobot" => Box::new(Acrobot::new(seed)),
        "pointreach" => Box::new(PointReach::new(seed)),
        "bandit2" => Box::new(TwoStateBandit::new(seed)),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown environment `{other}` (expected one of {})",
                ENV_NAMES.join(", ")
            )))
        }
    })
}

pub fn env_spec(name: &str) -> Result<EnvSpec> {
    make_env(name, 0).map(|e| e.spec())
}

fn discrete(action: &Action, n: usize) -> Result<usize> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        other => Err(Error::InvalidAction(format!("{other:?} (expected index < {n})"))),
    }
}

/// Pole balanced on a cart; force of -10 N (action 0) or +10 N (action 1).
#[derive(Clone, Debug)]
pub struct CartPole {
    rng: ChaCha8Rng,
    state: [f64; 4],
    steps: usize,
    done: bool,
}

impl CartPole {
    pub const GRAVITY: f64 = 9.8;
    pub const MASS_CART: f64 = 1.0;
    pub const MASS_POLE: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const FORCE: f64 = 10.0;
    pub const TAU: f64 = 0.02;
    pub const X_LIMIT: f64 = 2.4;
    pub const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
    pub const MAX_STEPS: usize = 200;

    pub fn new(seed: u64) -> Self {
        CartPole {
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: [0.0; 4],
            steps: 0,
            done: true,
        }
    }

    /// Starts an episode from an explicit `(x, x_dot, theta, theta_dot)`.
    pub fn reset_to(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
        self.done = false;
    }

    /// Second derivatives `(x_acc, theta_acc)` under `force`.
    pub fn accelerations(state: &[f64; 4], force: f64) -> (f64, f64) {
        let [_, _, theta, theta_dot] = *state;
        let total_mass = Self::MASS_CART + Self::MASS_POLE;
        let pm_len = Self::MASS_POLE * Self::HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pm_len * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (Self::GRAVITY * sin - cos * temp)
            / (Self::HALF_LENGTH * (4.0 / 3.0 - Self::MASS_POLE * cos * cos / total_mass));
        let x_acc = temp - pm_len * theta_acc * cos / total_mass;
        (x_acc, theta_acc)
    }

    /// One explicit Euler step.
    pub fn dynamics(state: &[f64; 4], action: usize) -> [f64; 4] {
        let force = if action == 1 { Self::FORCE } else { -Self::FORCE };
        let (x_acc, theta_acc) = Self::accelerations(state, force);
        let [x, x_dot, theta, theta_dot] = *state;
        [
            x + Self::TAU * x_dot,
            x_dot + Self::TAU * x_acc,
            theta + Self::TAU * theta_dot,
            theta_dot + Self::TAU * theta_acc,
        ]
    }
}

impl Env for CartPole {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "cartpole",
            state_dim: 4,
            actions: ActionSpace::Discrete(2),
            max_steps: Self::MAX_STEPS,
        }
    }

    fn reset(&mut self) -> Vec<f64> {
        let s: [f64; 4] = std::array::from_fn(|_| self.rng.random_range(-0.05..0.05));
        self.reset_to(s);
        s.to_vec()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = discrete(action, 2)?;
        self.state = Self::dynamics(&self.state, a);
        self.steps += 1;
        let [x, _, theta, _] = self.state;
        let failed = x.abs() > Self::X_LIMIT || theta.abs() > Self::THETA_LIMIT;
        self.done = failed || self.steps >= Self::MAX_STEPS;
        Ok(StepResult {
            next_state: self.state.to_vec(),
            reward: 1.0,
            done: self.done,
            steps: self.steps,
        })
    }
}

/// Two-link underactuated pendulum ("book" dynamics, RK4 at dt = 0.2).
///
/// Internal state is `(theta1, theta2, dtheta1, dtheta2)`; the observation is
/// `(cos theta1, sin theta1, cos theta2, sin theta2, dtheta1, dtheta2)`.
#[derive(Clone, Debug)]
pub struct Acrobot {
    rng: ChaCha8Rng,
    state: [f64; 4],
    steps: usize,
    done: bool,
}

impl Acrobot {
    pub const DT: f64 = 0.2;
    pub const LINK_LENGTH_1: f64 = 1.0;
    pub const LINK_MASS_1: f64 = 1.0;
    pub const LINK_MASS_2: f64 = 1.0;
    pub const LINK_COM_1: f64 = 0.5;
    pub const LINK_COM_2: f64 = 0.5;
    pub const LINK_MOI: f64 = 1.0;
    pub const GRAVITY: f64 = 9.8;
    pub const MAX_VEL_1: f64 = 4.0 * std::f64::consts::PI;
    pub const MAX_VEL_2: f64 = 9.0 * std::f64::consts::PI;
    pub const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
    pub const MAX_STEPS: usize = 500;

    pub fn new(seed: u64) -> Self {
        Acrobot {
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: [0.0; 4],
            steps: 0,
            done: true,
        }
    }

    pub fn reset_to(&mut self, state: [f64; 4]) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        self.done = false;
        Self::observe(&state)
    }

    pub fn internal_state(&self) -> [f64; 4] {
        self.state
    }

    pub fn observe(s: &[f64; 4]) -> Vec<f64> {
        let (s1, c1) = s[0].sin_cos();
        let (s2, c2) = s[1].sin_cos();
        vec![c1, s1, c2, s2, s[2], s[3]]
    }

    /// Time derivative of `(theta1, theta2, dtheta1, dtheta2)` under `torque`.
    pub fn derivatives(s: &[f64; 4], torque: f64) -> [f64; 4] {
        let (m1, m2) = (Self::LINK_MASS_1, Self::LINK_MASS_2);
        let l1 = Self::LINK_LENGTH_1;
        let (lc1, lc2) = (Self::LINK_COM_1, Self::LINK_COM_2);
        let (i1, i2) = (Self::LINK_MOI, Self::LINK_MOI);
        let g = Self::GRAVITY;
        let [theta1, theta2, dtheta1, dtheta2] = *s;
        let half_pi = std::f64::consts::FRAC_PI_2;

        let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
        let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
        let phi2 = m2 * lc2 * g * (theta1 + theta2 - half_pi).cos();
        let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
            - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
            + (m1 * lc1 + m2 * l1) * g * (theta1 - half_pi).cos()
            + phi2;
        let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
            / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
        let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
        [dtheta1, dtheta2, ddtheta1, ddtheta2]
    }

    /// Single classical Runge-Kutta step of length `dt`, without wrapping or clipping.
    pub fn rk4(s: &[f64; 4], torque: f64, dt: f64) -> [f64; 4] {
        let add = |a: &[f64; 4], k: &[f64; 4], h: f64| -> [f64; 4] { std::array::from_fn(|i| a[i] + h * k[i]) };
        let k1 = Self::derivatives(s, torque);
        let k2 = Self::derivatives(&add(s, &k1, dt / 2.0), torque);
        let k3 = Self::derivatives(&add(s, &k2, dt / 2.0), torque);
        let k4 = Self::derivatives(&add(s, &k3, dt), torque);
        std::array::from_fn(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    /// Integrates one environment step: RK4, wrap angles to [-pi, pi), clip velocities.
    pub fn dynamics(s: &[f64; 4], action: usize) -> [f64; 4] {
        let ns = Self::rk4(s, Self::TORQUES[action], Self::DT);
        [
            wrap_angle(ns[0]),
            wrap_angle(ns[1]),
            ns[2].clamp(-Self::MAX_VEL_1, Self::MAX_VEL_1),
            ns[3].clamp(-Self::MAX_VEL_2, Self::MAX_VEL_2),
        ]
    }

    pub fn is_terminal(s: &[f64; 4]) -> bool {
        -s[0].cos() - (s[1] + s[0]).cos() > 1.0
    }
}

fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Env for Acrobot {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "acrobot",
            state_dim: 6,
            actions: ActionSpace::Discrete(3),
            max_steps: Self::MAX_STEPS,
        }
    }

    fn reset(&mut self) -> Vec<f64> {
        let s: [f64; 4] = std::array::from_fn(|_| self.rng.random_range(-0.1..0.1));
        self.reset_to(s)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = discrete(action, 3)?;
        self.state = Self::dynamics(&self.state, a);
        self.steps += 1;
        let terminal = Self::is_terminal(&self.state);
        self.done = terminal || self.steps >= Self::MAX_STEPS;
        Ok(StepResult {
            next_state: Self::observe(&self.state),
            reward: if terminal { 0.0 } else { -1.0 },
            done: self.done,
            steps: self.steps,
        })
    }
}

/// Point mass on a line driven by a bounded continuous force toward the origin.
#[derive(Clone, Debug)]
pub struct PointReach {
    rng: ChaCha8Rng,
    state: [f64; 2],
    steps: usize,
    done: bool,
}

impl PointReach {
    pub const MAX_STEPS: usize = 100;

    pub fn new(seed: u64) -> Self {
        PointReach {
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: [0.0; 2],
            steps: 0,
            done: true,
        }
    }

    pub fn reset_to(&mut self, state: [f64; 2]) {
        self.state = state;
        self.steps = 0;
        self.done = false;
    }
}

impl Env for PointReach {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "pointreach",
            state_dim: 2,
            actions: ActionSpace::Continuous {
                dims: 1,
                low: -1.0,
                high: 1.0,
            },
            max_steps: Self::MAX_STEPS,
        }
    }

    fn reset(&mut self) -> Vec<f64> {
        let s = [self.rng.random_range(-1.0..1.0), 0.0];
        self.reset_to(s);
        s.to_vec()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = match action {
            Action::Continuous(v) if v.len() == 1 && v[0].is_finite() => v[0].clamp(-1.0, 1.0),
            other => return Err(Error::InvalidAction(format!("{other:?} (expected one finite value)"))),
        };
        let [x, v] = self.state;
        let v = v + 0.1 * a;
        let x = x + 0.1 * v;
        self.state = [x, v];
        self.steps += 1;
        self.done = self.steps >= Self::MAX_STEPS;
        Ok(StepResult {
            next_state: self.state.to_vec(),
            reward: -x * x - 0.01 * a * a,
            done: self.done,
            steps: self.steps,
        })
    }
}

/// One-step contextual bandit with two equiprobable states `s0 = +1` and
/// `s0 = -1` and two actions. Small enough to enumerate every trajectory.
#[derive(Clone, Debug)]
pub struct TwoStateBandit {
    rng: ChaCha8Rng,
    state: f64,
    done: bool,
}

impl TwoStateBandit {
    /// Reward for `(state index, action)`, state index 0 is `s0 = +1`.
    pub const REWARDS: [[f64; 2]; 2] = [[1.0, 0.1], [0.2, 2.0]];
    pub const STATES: [f64; 2] = [1.0, -1.0];

    pub fn new(seed: u64) -> Self {
        TwoStateBandit {
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: 1.0,
            done: true,
        }
    }

    pub fn reward(state: f64, action: usize) -> f64 {
        let row = if state > 0.0 { 0 } else { 1 };
        Self::REWARDS[row][action]
    }
}

impl Env for TwoStateBandit {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "bandit2",
            state_dim: 1,
            actions: ActionSpace::Discrete(2),
            max_steps: 1,
        }
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
        self.done = false;
        vec![self.state]
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = discrete(action, 2)?;
        self.done = true;
        Ok(StepResult {
            next_state: vec![self.state],
            reward: Self::reward(self.state, a),
            done: true,
            steps: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartpole_first_step_by_hand() {
        // theta = 0: temp = F / (mc + mp), theta_acc = -temp / (l (4/3 - mp/(mc+mp)))
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        let (xa, ta) = CartPole::accelerations(&[0.0; 4], 10.0);
        assert!((ta - theta_acc).abs() < 1e-12 && (xa - x_acc).abs() < 1e-12);
        // pushing the cart toward +x swings the pole toward -x
        assert!(ta < 0.0 && xa > 0.0);
        let next = CartPole::dynamics(&[0.0; 4], 1);
        assert_eq!(next[0], 0.0);
        assert_eq!(next[2], 0.0);
        assert!((next[1] - 0.02 * x_acc).abs() < 1e-15);
        assert!((next[3] - 0.02 * theta_acc).abs() < 1e-15);
    }

    #[test]
    fn cartpole_termination_keeps_reward() {
        let mut env = CartPole::new(0);
        env.reset_to([0.0, 0.0, 0.2094, 2.0]);
        let r = env.step(&Action::Discrete(1)).unwrap();
        assert!(r.done);
        assert_eq!(r.reward, 1.0);
        assert!(matches!(env.step(&Action::Discrete(0)), Err(Error::EpisodeDone)));
    }

    #[test]
    fn cartpole_truncates_at_cap() {
        let mut env = CartPole::new(0);
        env.reset_to([0.0; 4]);
        // bang-bang controller on pole angle keeps it up for 200 steps
        let mut state = vec![0.0; 4];
        let mut total = 0.0;
        loop {
            let a = if state[2] + 0.5 * state[3] > 0.0 { 1 } else { 0 };
            let r = env.step(&Action::Discrete(a)).unwrap();
            total += r.reward;
            state = r.next_state;
            if r.done {
                assert_eq!(r.steps, 200);
                break;
            }
        }
        assert_eq!(total, 200.0);
    }

    #[test]
    fn invalid_actions() {
        let mut env = CartPole::new(0);
        env.reset();
        assert!(env.step(&Action::Discrete(2)).is_err());
        assert!(env.step(&Action::Continuous(vec![0.0])).is_err());
        let mut acro = Acrobot::new(0);
        acro.reset();
        assert!(acro.step(&Action::Discrete(3)).is_err());
        let mut pr = PointReach::new(0);
        pr.reset();
        assert!(pr.step(&Action::Discrete(0)).is_err());
        assert!(pr.step(&Action::Continuous(vec![f64::NAN])).is_err());
    }

    #[test]
    fn acrobot_rest_is_equilibrium() {
        let next = Acrobot::dynamics(&[0.0; 4], 1);
        for v in next {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn acrobot_observation_is_on_circle() {
        let mut env = Acrobot::new(3);
        let mut s = env.reset();
        let mut i = 0;
        loop {
            for j in [0, 2] {
                assert!((s[j] * s[j] + s[j + 1] * s[j + 1] - 1.0).abs() < 1e-9);
            }
            assert!(s[4].abs() <= Acrobot::MAX_VEL_1 && s[5].abs() <= Acrobot::MAX_VEL_2);
            let r = env.step(&Action::Discrete(i % 3)).unwrap();
            i += 1;
            s = r.next_state;
            if r.done {
                break;
            }
        }
    }

    #[test]
    fn acrobot_return_bounds() {
        let mut env = Acrobot::new(1);
        env.reset();
        let mut total = 0.0;
        loop {
            let r = env.step(&Action::Discrete(1)).unwrap();
            total += r.reward;
            if r.done {
                break;
            }
        }
        assert!((-500.0..=0.0).contains(&total));
        assert_eq!(total, -500.0);
    }

    #[test]
    fn pointreach_rules() {
        let mut env = PointReach::new(0);
        env.reset_to([0.0, 0.0]);
        let r = env.step(&Action::Continuous(vec![0.0])).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.next_state, vec![0.0, 0.0]);
        let r = env.step(&Action::Continuous(vec![5.0])).unwrap();
        assert_eq!(r.next_state, vec![0.1 * 0.1, 0.1]);
        assert!((r.reward - (-(0.01f64 * 0.01) - 0.01)).abs() < 1e-15);
    }

    #[test]
    fn seeds_determine_trajectories() {
        for name in ENV_NAMES {
            let run = |seed| {
                let mut env = make_env(name, seed).unwrap();
                let spec = env.spec();
                let mut out = vec![env.reset()];
                for t in 0..20 {
                    let a = match spec.actions {
                        ActionSpace::Discrete(n) => Action::Discrete(t % n),
                        ActionSpace::Continuous { .. } => Action::Continuous(vec![0.3]),
                    };
                    let r = env.step(&a).unwrap();
                    out.push(r.next_state);
                    if r.done {
                        out.push(env.reset());
                    }
                }
                out
            };
            assert_eq!(run(5), run(5), "{name}");
            assert_ne!(run(5), run(6), "{name}");
        }
        assert!(make_env("lunarlander", 0).is_err());
    }

    #[test]
    fn bandit_rewards() {
        let mut env = TwoStateBandit::new(0);
        let s = env.reset();
        let r = env.step(&Action::Discrete(1)).unwrap();
        assert!(r.done);
        assert_eq!(r.reward, TwoStateBandit::reward(s[0], 1));
    }
}
