//! A latent one-axis manipulation world whose observation map has a
//! tunable entanglement knob `lambda`.
//!
//! The hidden state is effector height `h`, gripper closure `g`, object
//! height `b` and a task phase. Observations play the role of a frozen visual
//! encoder:
//!
//! ```text
//! obs = scene[variant] + (1 - λ)·M·e_inj + λ·M·e_alias + noise
//! e_inj   = (h, g, b, onehot(phase))
//! e_alias = (h, 0.1·g, 0.1·b, 0, 0, 0, 0)
//! ```
//!
//! `M` has orthogonal columns of norm `sqrt(feature_dim / 7)` and `scene` is
//! a fixed per-variant offset orthogonal to them (the static part of the
//! picture). At `λ = 0` the map is injective in the
//! phase; at `λ = 1` the phase is erased and grasp/object cues are faint, so
//! the pre-grasp and post-grasp dwell at the bottom look the same.
//!
//! Proprioception is `(h, g)`; actions are `(Δh, Δg) ∈ [-1, 1]²`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::seeds;
use crate::trajstore::{DemoDataset, FeatureTrajectory, FrameMatrix, TaskDemos, TrajError};

pub const PROPRIO_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;
/// Latent code length: h, g, b and a 4-way phase one-hot.
pub const LATENT_DIM: usize = 7;

const HEIGHT_GAIN: f64 = 0.05;
const GRIP_GAIN: f64 = 0.25;
const CONTACT: f64 = 0.05;
const CLOSED: f64 = 0.8;
const ALIAS_WEIGHT: f64 = 0.1;
const SCENE_NORM: f64 = 0.9;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("scripted expert failed on demo {0}")]
    ExpertFailure(usize),
    #[error(transparent)]
    Traj(#[from] TrajError),
}

impl WorldError {
    pub fn kind(&self) -> &'static str {
        match self {
            WorldError::InvalidConfig(_) => "InvalidConfig",
            WorldError::ExpertFailure(_) => "ExpertFailure",
            WorldError::Traj(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    PickPlace,
    Push,
    Reach,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::PickPlace, Variant::Push, Variant::Reach];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PickPlace => "pick_place",
            Variant::Push => "push",
            Variant::Reach => "reach",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Variant::PickPlace => 0,
            Variant::Push => 1,
            Variant::Reach => 2,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pick_place" => Ok(Variant::PickPlace),
            "push" => Ok(Variant::Push),
            "reach" => Ok(Variant::Reach),
            other => Err(WorldError::InvalidConfig(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub variant: Variant,
    pub feature_dim: usize,
    pub lambda: f64,
    pub obs_noise_sigma: f64,
    pub max_steps: usize,
    /// Seeds the observation map and every episode stream.
    pub seed: u64,
}

impl WorldConfig {
    pub fn new(variant: Variant, lambda: f64, seed: u64) -> Self {
        Self {
            variant,
            feature_dim: 16,
            lambda,
            obs_noise_sigma: 0.01,
            max_steps: 60,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(WorldError::InvalidConfig(format!("lambda {} not in [0, 1]", self.lambda)));
        }
        if self.feature_dim < 8 {
            return Err(WorldError::InvalidConfig("feature_dim must be at least 8".into()));
        }
        if !(self.obs_noise_sigma >= 0.0) {
            return Err(WorldError::InvalidConfig("noise sigma must be non-negative".into()));
        }
        if self.max_steps == 0 {
            return Err(WorldError::InvalidConfig("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Descend,
    Grasp,
    Ascend,
    Done,
}

impl Phase {
    fn index(self) -> usize {
        match self {
            Phase::Descend => 0,
            Phase::Grasp => 1,
            Phase::Ascend => 2,
            Phase::Done => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub h: f64,
    pub g: f64,
    pub b: f64,
    pub phase: Phase,
    pub step: usize,
    /// Object is held by the gripper (pick_place only).
    pub attached: bool,
}

impl WorldState {
    /// Fixed start state for `variant`; demos differ only through the
    /// expert's timing jitter and observation noise.
    pub fn initial(variant: Variant) -> Self {
        match variant {
            Variant::PickPlace => Self {
                h: 0.2,
                g: 1.0,
                b: 0.0,
                phase: Phase::Descend,
                step: 0,
                attached: false,
            },
            Variant::Push => Self {
                h: 0.0,
                g: 0.0,
                b: 0.15,
                phase: Phase::Grasp,
                step: 0,
                attached: false,
            },
            Variant::Reach => Self {
                h: 0.5,
                g: 0.0,
                b: 0.0,
                phase: Phase::Descend,
                step: 0,
                attached: false,
            },
        }
    }

    pub fn proprio(&self) -> [f64; PROPRIO_DIM] {
        [self.h, self.g]
    }

    fn is_success(&self, variant: Variant) -> bool {
        match variant {
            Variant::PickPlace => self.b >= 0.9 && self.g > CLOSED,
            Variant::Push => self.b >= 0.9,
            Variant::Reach => self.h <= 0.02,
        }
    }
}

/// Advance one step. Returns whether the task is (now) solved; a solved
/// state is frozen.
pub fn step(state: &mut WorldState, variant: Variant, action: [f64; ACTION_DIM]) -> bool {
    if state.phase == Phase::Done {
        return true;
    }
    let dh = action[0].clamp(-1.0, 1.0);
    let dg = action[1].clamp(-1.0, 1.0);
    let prev_h = state.h;
    let prev_g = state.g;
    state.h = (state.h + HEIGHT_GAIN * dh).clamp(0.0, 1.0);
    state.g = (state.g + GRIP_GAIN * dg).clamp(0.0, 1.0);
    match variant {
        Variant::PickPlace => {
            if state.g <= CLOSED {
                state.attached = false;
                state.b = 0.0;
            } else if !state.attached && prev_g <= CLOSED && (state.h - state.b).abs() < CONTACT {
                state.attached = true;
            }
            if state.attached {
                state.b = state.h;
            }
            state.phase = if state.attached {
                Phase::Ascend
            } else if state.phase == Phase::Descend && state.h <= 0.02 && state.g <= 0.2 {
                Phase::Grasp
            } else if state.phase == Phase::Ascend {
                Phase::Descend
            } else {
                state.phase
            };
        }
        Variant::Push => {
            // A closed gripper pushes the object once it touches it from below.
            let touching = prev_h >= state.b - CONTACT && prev_h <= state.b;
            if state.g > CLOSED && touching {
                state.b = (state.b + HEIGHT_GAIN * dh).clamp(0.0, 1.0);
            }
            if state.g > CLOSED {
                state.phase = Phase::Ascend;
            }
        }
        Variant::Reach => {}
    }
    state.step += 1;
    let done = state.is_success(variant);
    if done {
        state.phase = Phase::Done;
    }
    done
}

/// Fixed linear "encoder" for one world seed.
#[derive(Debug, Clone)]
pub struct Observer {
    /// `[feature_dim × LATENT_DIM]`, orthonormal columns.
    basis: Vec<[f64; LATENT_DIM]>,
    /// One static offset per variant.
    scenes: Vec<Vec<f64>>,
    lambda: f64,
    noise: f64,
}

impl Observer {
    pub fn new(config: &WorldConfig) -> Self {
        let d = config.feature_dim;
        let mut rng = seeds::rng(config.seed, &[seeds::tag("observer")]);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(LATENT_DIM);
        while cols.len() < LATENT_DIM {
            cols.push(unit_orthogonal(&mut rng, d, &cols));
        }
        let scenes = Variant::ALL
            .iter()
            .map(|_| {
                unit_orthogonal(&mut rng, d, &cols)
                    .into_iter()
                    .map(|x| SCENE_NORM * x)
                    .collect()
            })
            .collect();
        // Rows of unit mean-square norm.
        let k = (d as f64 / LATENT_DIM as f64).sqrt();
        let basis = (0..d)
            .map(|r| std::array::from_fn(|c| k * cols[c][r]))
            .collect();
        Self {
            basis,
            scenes,
            lambda: config.lambda,
            noise: config.obs_noise_sigma,
        }
    }

    fn latent(&self, s: &WorldState) -> [f64; LATENT_DIM] {
        let mut onehot = [0.0; 4];
        onehot[s.phase.index()] = 1.0;
        let inj = [s.h, s.g, s.b, onehot[0], onehot[1], onehot[2], onehot[3]];
        let alias = [s.h, ALIAS_WEIGHT * s.g, ALIAS_WEIGHT * s.b, 0.0, 0.0, 0.0, 0.0];
        std::array::from_fn(|i| (1.0 - self.lambda) * inj[i] + self.lambda * alias[i])
    }

    /// Noise-free observation.
    pub fn clean(&self, s: &WorldState, variant: Variant) -> Vec<f64> {
        let e = self.latent(s);
        self.basis
            .iter()
            .zip(&self.scenes[variant.index()])
            .map(|(row, c)| c + row.iter().zip(&e).map(|(m, x)| m * x).sum::<f64>())
            .collect()
    }

    pub fn observe(&self, s: &WorldState, variant: Variant, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut f = self.clean(s, variant);
        if self.noise > 0.0 {
            for x in &mut f {
                let z: f64 = StandardNormal.sample(rng);
                *x += self.noise * z;
            }
        }
        f
    }
}

/// Random unit vector orthogonal to every vector in `against`.
fn unit_orthogonal(rng: &mut ChaCha8Rng, d: usize, against: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for c in against {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// One observation handed to a policy. `state` is privileged and only read
/// by scripted experts.
#[derive(Debug, Clone)]
pub struct Observation<'a> {
    pub features: &'a [f64],
    pub proprio: [f64; PROPRIO_DIM],
    pub timestep: usize,
    pub state: &'a WorldState,
}

pub trait Policy {
    /// Called before each episode with a per-episode seed.
    fn reset(&mut self, _episode_seed: u64) {}
    fn act(&mut self, obs: &Observation<'_>) -> [f64; ACTION_DIM];
}

/// Adapter for plain `(features, proprio, timestep) -> action` closures.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: FnMut(&[f64], &[f64], usize) -> [f64; ACTION_DIM],
{
    fn act(&mut self, obs: &Observation<'_>) -> [f64; ACTION_DIM] {
        (self.0)(obs.features, &obs.proprio, obs.timestep)
    }
}

/// Per-demo timing randomisation of the scripted expert.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Range of approach velocities; `0.07` maps to a full-magnitude action.
    pub velocity: (f64, f64),
    /// Inclusive range of dwell steps at each gripper stop.
    pub dwell: (usize, usize),
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            velocity: (0.03, 0.07),
            dwell: (3, 8),
        }
    }
}

const VELOCITY_FULL_SCALE: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Approach,
    DwellOpen(usize),
    /// The flag records whether the saturating extra step was taken.
    Open(bool),
    Close,
    DwellLift(usize),
    Lift,
}

/// Scripted expert with privileged state access.
#[derive(Debug, Clone)]
pub struct Expert {
    variant: Variant,
    jitter: Jitter,
    speed: f64,
    stage: Stage,
    dwell: (usize, usize),
}

impl Expert {
    pub fn new(variant: Variant, jitter: Jitter) -> Self {
        Self {
            variant,
            jitter,
            speed: 1.0,
            stage: Stage::Approach,
            dwell: (0, 0),
        }
    }

    fn sample(&mut self, rng: &mut ChaCha8Rng) {
        let (lo, hi) = self.jitter.velocity;
        let v = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        self.speed = (v / VELOCITY_FULL_SCALE).clamp(0.0, 1.0);
        let (dlo, dhi) = self.jitter.dwell;
        let mut dwell = || if dhi > dlo { rng.gen_range(dlo..=dhi) } else { dlo };
        self.dwell = (dwell(), dwell());
        self.stage = match self.variant {
            Variant::Push => Stage::Close,
            _ => Stage::Approach,
        };
    }

    // While holding the object the expert keeps commanding "close", a no-op
    // on a closed gripper.
    fn pick_place(&mut self, s: &WorldState) -> [f64; 2] {
        loop {
            match self.stage {
                Stage::Approach if s.h > 0.0 => return [-self.speed, 0.0],
                Stage::Approach => self.stage = Stage::DwellOpen(self.dwell.0),
                Stage::DwellOpen(0) => self.stage = Stage::Open(false),
                Stage::DwellOpen(k) => {
                    self.stage = Stage::DwellOpen(k - 1);
                    return [0.0, 0.0];
                }
                Stage::Open(_) if s.g > 0.0 => return [0.0, -1.0],
                Stage::Open(false) => {
                    self.stage = Stage::Open(true);
                    return [0.0, -1.0];
                }
                Stage::Open(true) => self.stage = Stage::Close,
                Stage::Close if s.g < 1.0 => return [0.0, 1.0],
                Stage::Close => self.stage = Stage::DwellLift(self.dwell.1),
                Stage::DwellLift(0) => self.stage = Stage::Lift,
                Stage::DwellLift(k) => {
                    self.stage = Stage::DwellLift(k - 1);
                    return [0.0, 1.0];
                }
                Stage::Lift => return [1.0, 1.0],
            }
        }
    }

    fn push(&mut self, s: &WorldState) -> [f64; 2] {
        loop {
            match self.stage {
                Stage::Close if s.g < 1.0 => return [0.0, 1.0],
                Stage::Close => self.stage = Stage::DwellLift(self.dwell.0),
                Stage::DwellLift(0) => self.stage = Stage::Lift,
                Stage::DwellLift(k) => {
                    self.stage = Stage::DwellLift(k - 1);
                    return [0.0, 1.0];
                }
                _ => return [self.speed, 1.0],
            }
        }
    }
}

impl Policy for Expert {
    fn reset(&mut self, episode_seed: u64) {
        let mut rng = seeds::rng(episode_seed, &[seeds::tag("expert")]);
        self.sample(&mut rng);
    }

    fn act(&mut self, obs: &Observation<'_>) -> [f64; ACTION_DIM] {
        match self.variant {
            Variant::PickPlace => self.pick_place(obs.state),
            Variant::Push => self.push(obs.state),
            Variant::Reach => [-self.speed, 0.0],
        }
    }
}

/// Result of one closed-loop episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub features: Vec<Vec<f64>>,
    pub proprio: Vec<[f64; PROPRIO_DIM]>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub success: bool,
}

/// Roll out `policy` for one episode. The episode seed drives the initial
/// state, observation noise and the policy's own reset.
pub fn run_episode<P: Policy + ?Sized>(
    config: &WorldConfig,
    observer: &Observer,
    policy: &mut P,
    episode_seed: u64,
) -> Episode {
    let mut rng = seeds::rng(episode_seed, &[seeds::tag("episode")]);
    let mut state = WorldState::initial(config.variant);
    policy.reset(episode_seed);
    let mut ep = Episode {
        features: Vec::new(),
        proprio: Vec::new(),
        actions: Vec::new(),
        success: false,
    };
    for t in 0..config.max_steps {
        let f = observer.observe(&state, config.variant, &mut rng);
        let obs = Observation {
            features: &f,
            proprio: state.proprio(),
            timestep: t,
            state: &state,
        };
        let a = policy.act(&obs);
        let a = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
        ep.proprio.push(state.proprio());
        ep.features.push(f);
        ep.actions.push(a);
        if step(&mut state, config.variant, a) {
            ep.success = true;
            break;
        }
    }
    ep
}

/// Expert demonstrations for one world, one task.
pub fn generate_demos(
    config: &WorldConfig,
    n_demos: usize,
    jitter: Jitter,
) -> Result<DemoDataset, WorldError> {
    generate_task_demos(config, n_demos, jitter, config.variant.name())
}

/// As [`generate_demos`] with an explicit task name, so several instances of
/// one variant can coexist in a corpus.
pub fn generate_task_demos(
    config: &WorldConfig,
    n_demos: usize,
    jitter: Jitter,
    task_name: &str,
) -> Result<DemoDataset, WorldError> {
    config.validate()?;
    if n_demos == 0 {
        return Err(WorldError::InvalidConfig("n_demos must be at least 1".into()));
    }
    let observer = Observer::new(config);
    let episodes = par::map_range(n_demos, |i| {
        let seed = seeds::derive(config.seed, &[seeds::tag("demo"), seeds::tag(task_name), i as u64]);
        let mut expert = Expert::new(config.variant, jitter);
        run_episode(config, &observer, &mut expert, seed)
    });
    let mut demos = Vec::with_capacity(n_demos);
    for (i, ep) in episodes.into_iter().enumerate() {
        if !ep.success || ep.actions.len() < 2 {
            return Err(WorldError::ExpertFailure(i));
        }
        demos.push(FeatureTrajectory {
            task_name: task_name.to_string(),
            demo_id: i as u64,
            features: FrameMatrix::from_rows_f64(&ep.features)?,
            proprio: FrameMatrix::from_rows_f64(&ep.proprio)?,
            actions: FrameMatrix::from_rows_f64(&ep.actions)?,
            success: true,
        });
    }
    let mut ds = DemoDataset::new(
        vec![TaskDemos {
            name: task_name.to_string(),
            demos,
        }],
        config.feature_dim,
        PROPRIO_DIM,
        ACTION_DIM,
    )?;
    ds.extra = Some(serde_json::json!({ "world": config, "jitter": jitter, "n_demos": n_demos }));
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub success_rate: f64,
    pub successes: usize,
    pub episodes: usize,
    pub mean_length: f64,
}

/// Closed-loop success rate over `n_episodes` fresh episodes. `make_policy`
/// builds an independent policy instance per episode.
pub fn evaluate_policy<P, F>(
    config: &WorldConfig,
    n_episodes: usize,
    eval_seed: u64,
    make_policy: F,
) -> Result<EvalResult, WorldError>
where
    P: Policy,
    F: Fn() -> P + Sync + Send,
{
    config.validate()?;
    if n_episodes == 0 {
        return Err(WorldError::InvalidConfig("n_episodes must be at least 1".into()));
    }
    let observer = Observer::new(config);
    let outcomes = par::map_range(n_episodes, |i| {
        let seed = seeds::derive(config.seed, &[seeds::tag("eval"), eval_seed, i as u64]);
        let mut policy = make_policy();
        let ep = run_episode(config, &observer, &mut policy, seed);
        (ep.success, ep.actions.len())
    });
    let successes = outcomes.iter().filter(|o| o.0).count();
    let total_len: usize = outcomes.iter().map(|o| o.1).sum();
    Ok(EvalResult {
        success_rate: successes as f64 / n_episodes as f64,
        successes,
        episodes: n_episodes,
        mean_length: total_len as f64 / n_episodes as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(h: f64, g: f64, b: f64, phase: Phase) -> WorldState {
        WorldState {
            h,
            g,
            b,
            phase,
            step: 0,
            attached: phase == Phase::Ascend,
        }
    }

    #[test]
    fn reach_threshold() {
        let mut s = state(0.03, 0.0, 0.0, Phase::Descend);
        assert!(step(&mut s, Variant::Reach, [-1.0, 0.0]));
        assert_eq!(s.h, 0.0);
        assert_eq!(s.phase, Phase::Done);
        let frozen = s;
        assert!(step(&mut s, Variant::Reach, [1.0, 1.0]));
        assert_eq!(s, frozen);
    }

    #[test]
    fn open_gripper_never_lifts() {
        let mut s = state(0.2, 0.0, 0.0, Phase::Descend);
        for t in 0..200 {
            let a = if t < 10 { [-1.0, -1.0] } else { [1.0, -1.0] };
            assert!(!step(&mut s, Variant::PickPlace, a));
        }
        assert_eq!(s.b, 0.0);
    }

    #[test]
    fn closing_on_contact_attaches() {
        let mut s = state(0.0, 0.0, 0.0, Phase::Grasp);
        for _ in 0..4 {
            step(&mut s, Variant::PickPlace, [0.0, 1.0]);
        }
        assert!(s.attached);
        assert_eq!(s.phase, Phase::Ascend);
        let mut n = 0;
        while !step(&mut s, Variant::PickPlace, [1.0, 0.0]) {
            n += 1;
        }
        assert_eq!(n + 1, 18);
    }

    #[test]
    fn closed_gripper_does_not_grab_on_arrival() {
        // Gripper already closed when reaching the object: no grasp edge.
        let mut s = state(0.02, 1.0, 0.0, Phase::Descend);
        step(&mut s, Variant::PickPlace, [-1.0, 0.0]);
        assert!(!s.attached);
        step(&mut s, Variant::PickPlace, [1.0, 0.0]);
        assert_eq!(s.b, 0.0);
    }

    #[test]
    fn observe_examples() {
        let mut cfg = WorldConfig::new(Variant::PickPlace, 0.0, 3);
        cfg.obs_noise_sigma = 0.0;
        let obs = Observer::new(&cfg);
        let down = state(0.5, 1.0, 0.0, Phase::Descend);
        let up = state(0.5, 1.0, 0.5, Phase::Ascend);
        let dist = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        let d0 = dist(&obs.clean(&down, cfg.variant), &obs.clean(&up, cfg.variant));
        assert!(d0 > 0.5, "{d0}");

        cfg.lambda = 1.0;
        let obs = Observer::new(&cfg);
        let down = state(0.5, 1.0, 0.5, Phase::Descend);
        let d1 = dist(&obs.clean(&down, cfg.variant), &obs.clean(&up, cfg.variant));
        assert!(d1 < 0.05, "{d1}");

        let mut r1 = seeds::rng(1, &[]);
        let mut r2 = seeds::rng(1, &[]);
        cfg.obs_noise_sigma = 0.01;
        let obs = Observer::new(&cfg);
        assert_eq!(
            obs.observe(&up, cfg.variant, &mut r1),
            obs.observe(&up, cfg.variant, &mut r2)
        );
    }

    #[test]
    fn basis_columns_orthogonal_and_scenes_static() {
        let obs = Observer::new(&WorldConfig::new(Variant::Push, 0.5, 11));
        let k2 = 16.0 / LATENT_DIM as f64;
        for i in 0..LATENT_DIM {
            for j in 0..LATENT_DIM {
                let d: f64 = obs.basis.iter().map(|r| r[i] * r[j]).sum();
                let want = if i == j { k2 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
            for scene in &obs.scenes {
                let d: f64 = obs.basis.iter().zip(scene).map(|(r, s)| r[i] * s).sum();
                assert!(d.abs() < 1e-12);
            }
        }
        let rows: f64 = obs.basis.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>()).sum();
        assert!((rows / 16.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = WorldConfig::new(Variant::Reach, 1.5, 0);
        assert_eq!(c.validate().unwrap_err().kind(), "InvalidConfig");
        c.lambda = 0.5;
        c.feature_dim = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn point_jitter_gives_equal_lengths() {
        let jitter = Jitter {
            velocity: (0.05, 0.05),
            dwell: (4, 4),
        };
        for variant in Variant::ALL {
            let ds = generate_demos(&WorldConfig::new(variant, 0.5, 2), 6, jitter).unwrap();
            let lens: Vec<usize> = ds.demos().map(|d| d.frames()).collect();
            assert!(lens.iter().all(|&n| n == lens[0]), "{variant:?} {lens:?}");
        }
    }
}
