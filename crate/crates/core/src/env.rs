//! Planar mass-spring voxel locomotion environment.
//!
//! Every voxel is a unit square of four lattice vertices joined by four edge
//! springs and two diagonal springs. Edges shared by neighboring voxels are a
//! single spring whose stiffness is the sum of both owners. Actuator voxels
//! rescale the rest lengths of their springs; the reward is the forward
//! progress of the center of mass.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::{VoxelGrid, H_ACTUATOR, RIGID, SOFT, V_ACTUATOR};

pub const LOCAL_OBS_DIM: usize = 16;
pub const GLOBAL_OBS_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("expected {expected} actions (one per voxel), got {got}")]
    ActionLength { expected: usize, got: usize },
    #[error("action {index} is not finite")]
    NonFiniteAction { index: usize },
    #[error("episode is over; call reset before stepping again")]
    EpisodeOver,
    #[error("invalid environment config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub voxel_size: f64,
    pub vertex_mass: f64,
    pub rigid_stiffness: f64,
    pub soft_stiffness: f64,
    pub actuator_stiffness: f64,
    /// Diagonal stiffness as a fraction of the voxel's structural stiffness.
    pub shear_factor: f64,
    pub damping: f64,
    pub gravity: f64,
    pub ground_stiffness: f64,
    pub ground_damping: f64,
    pub friction: f64,
    pub dt: f64,
    pub substeps: usize,
    pub horizon: usize,
    /// Rest-length scale at action 0 and its slope in the action.
    pub actuation_center: f64,
    pub actuation_gain: f64,
    /// Half-width of the uniform position jitter applied on reset.
    pub jitter: f64,
    /// Reward assigned to a step on which the simulation diverged.
    pub divergence_reward: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            voxel_size: 1.0,
            vertex_mass: 1.0,
            rigid_stiffness: 800.0,
            soft_stiffness: 120.0,
            actuator_stiffness: 300.0,
            shear_factor: 0.5,
            damping: 2.0,
            gravity: 9.81,
            ground_stiffness: 2000.0,
            ground_damping: 10.0,
            friction: 0.8,
            dt: 0.05,
            substeps: 10,
            horizon: 128,
            actuation_center: 1.1,
            actuation_gain: 0.5,
            jitter: 1e-4,
            divergence_reward: -10.0,
        }
    }
}

impl EnvConfig {
    pub fn substep_dt(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    /// Rest-length scale an actuator adopts for action `a` (clamped to [-1, 1]).
    pub fn actuation_scale(&self, a: f64) -> f64 {
        self.actuation_center + self.actuation_gain * a.clamp(-1.0, 1.0)
    }

    fn material_stiffness(&self, code: u8) -> f64 {
        match code {
            RIGID => self.rigid_stiffness,
            SOFT => self.soft_stiffness,
            _ => self.actuator_stiffness,
        }
    }

    /// Checks that constants are positive and that the substep is small enough
    /// for the stiffest vertex the lattice can produce.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("voxel_size", self.voxel_size),
            ("vertex_mass", self.vertex_mass),
            ("rigid_stiffness", self.rigid_stiffness),
            ("soft_stiffness", self.soft_stiffness),
            ("actuator_stiffness", self.actuator_stiffness),
            ("shear_factor", self.shear_factor),
            ("damping", self.damping),
            ("gravity", self.gravity),
            ("ground_stiffness", self.ground_stiffness),
            ("ground_damping", self.ground_damping),
            ("friction", self.friction),
            ("dt", self.dt),
            ("actuation_center", self.actuation_center),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EnvError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.actuation_gain.is_finite() && self.actuation_gain >= 0.0 && self.actuation_gain < self.actuation_center) {
            return Err(EnvError::Config("actuation_gain must lie in [0, actuation_center)".into()));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0 && self.jitter < 0.1 * self.voxel_size) {
            return Err(EnvError::Config("jitter must be non-negative and well below the voxel size".into()));
        }
        if !self.divergence_reward.is_finite() {
            return Err(EnvError::Config("divergence_reward must be finite".into()));
        }
        if self.substeps == 0 || self.horizon == 0 {
            return Err(EnvError::Config("substeps and horizon must be at least 1".into()));
        }
        self.check_integrator_bounded()
    }

    /// Runs an undamped two-mass oscillator whose spring is as stiff as the
    /// stiffest lattice vertex (two shared edges, four diagonals, ground) and
    /// fails if its energy grows under the configured substep.
    fn check_integrator_bounded(&self) -> Result<()> {
        let k_max = self.rigid_stiffness.max(self.soft_stiffness).max(self.actuator_stiffness);
        let k = 2.0 * 2.0 * k_max + 4.0 * 0.5 * self.shear_factor * k_max + self.ground_stiffness;
        let (m, h) = (self.vertex_mass, self.substep_dt());
        let (mut x, mut v) = (0.1 * self.voxel_size, 0.0);
        let energy = |x: f64, v: f64| m * v * v + 0.5 * k * (2.0 * x) * (2.0 * x);
        let start = energy(x, v);
        for _ in 0..1000 {
            // Symmetric mode: each mass sees force k·(2x) back toward the middle.
            v += -k * 2.0 * x / m * h;
            x += v * h;
            if !(energy(x, v) <= 1.5 * start) {
                return Err(EnvError::Config(format!(
                    "substep {h} s is unstable for stiffness {k} N/m; raise substeps or lower stiffness"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpringKind {
    Horizontal,
    Vertical,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest: f64,
    pub stiffness: f64,
    pub kind: SpringKind,
    /// Owning voxels (node indices) with the stiffness each contributed.
    pub owners: Vec<(usize, f64)>,
}

/// Simulation state: vertices, springs and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftBodyState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub springs: Vec<Spring>,
    pub step: usize,
}

impl SoftBodyState {
    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn center_of_mass(&self) -> [f64; 2] {
        mean2(&self.positions)
    }

    pub fn center_of_mass_velocity(&self) -> [f64; 2] {
        mean2(&self.velocities)
    }

    fn is_finite(&self) -> bool {
        self.positions.iter().chain(&self.velocities).all(|p| p[0].is_finite() && p[1].is_finite())
    }
}

fn mean2(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    [sx / n, sy / n]
}

/// Local rows (`n × 16`, node order) and the global vector `[vx, vy, height]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub local: Vec<[f64; LOCAL_OBS_DIM]>,
    pub global: [f64; GLOBAL_OBS_DIM],
}

impl Observation {
    pub fn local_flat(&self) -> Vec<f64> {
        self.local.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// True when the step ended because the state went non-finite.
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy)]
struct Voxel {
    code: u8,
    /// Vertex indices: top-left, top-right, bottom-left, bottom-right.
    corners: [usize; 4],
}

#[derive(Debug, Clone)]
pub struct SoftBodyEnv {
    config: EnvConfig,
    voxels: Vec<Voxel>,
    lattice: Vec<[f64; 2]>,
    template: Vec<Spring>,
    state: SoftBodyState,
    finished: bool,
}

impl SoftBodyEnv {
    /// Builds the body for `grid` and resets it with `seed`.
    pub fn new(grid: &VoxelGrid, config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (rows, cols) = (grid.rows(), grid.cols());
        let mut vertex_of = HashMap::new();
        let mut lattice = Vec::new();
        for i in 0..=rows {
            for j in 0..=cols {
                let touches = [(i.wrapping_sub(1), j.wrapping_sub(1)), (i.wrapping_sub(1), j), (i, j.wrapping_sub(1)), (i, j)]
                    .iter()
                    .any(|&(r, c)| r < rows && c < cols && grid.get(r, c) != 0);
                if touches {
                    vertex_of.insert((i, j), lattice.len());
                    lattice.push([j as f64 * config.voxel_size, (rows - i) as f64 * config.voxel_size]);
                }
            }
        }
        let mut voxels = Vec::new();
        let mut edges: Vec<Spring> = Vec::new();
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut diagonals = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let code = grid.get(r, c);
                if code == 0 {
                    continue;
                }
                let node = voxels.len();
                let corners = [vertex_of[&(r, c)], vertex_of[&(r, c + 1)], vertex_of[&(r + 1, c)], vertex_of[&(r + 1, c + 1)]];
                voxels.push(Voxel { code, corners });
                let k = config.material_stiffness(code);
                let [tl, tr, bl, br] = corners;
                for (a, b, kind) in [
                    (tl, tr, SpringKind::Horizontal),
                    (bl, br, SpringKind::Horizontal),
                    (tl, bl, SpringKind::Vertical),
                    (tr, br, SpringKind::Vertical),
                ] {
                    match edge_index.get(&(a, b)) {
                        Some(&e) => {
                            edges[e].stiffness += k;
                            edges[e].owners.push((node, k));
                        }
                        None => {
                            edge_index.insert((a, b), edges.len());
                            edges.push(Spring {
                                a,
                                b,
                                rest: config.voxel_size,
                                stiffness: k,
                                kind,
                                owners: vec![(node, k)],
                            });
                        }
                    }
                }
                let ks = config.shear_factor * k;
                for (a, b) in [(tl, br), (tr, bl)] {
                    diagonals.push(Spring {
                        a,
                        b,
                        rest: config.voxel_size * std::f64::consts::SQRT_2,
                        stiffness: ks,
                        kind: SpringKind::Diagonal,
                        owners: vec![(node, ks)],
                    });
                }
            }
        }
        edges.extend(diagonals);
        let n = lattice.len();
        let mut env = Self {
            config,
            voxels,
            lattice,
            template: edges.clone(),
            state: SoftBodyState {
                positions: vec![[0.0; 2]; n],
                velocities: vec![[0.0; 2]; n],
                springs: edges,
                step: 0,
            },
            finished: false,
        };
        env.reset(seed);
        Ok(env)
    }

    /// Restores the rest configuration with fresh seeded jitter, placed so the
    /// lowest vertex sits on the ground and the leftmost at `x = 0`.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = self.config.jitter;
        let mut positions: Vec<[f64; 2]> = self
            .lattice
            .iter()
            .map(|p| {
                if j > 0.0 {
                    [p[0] + rng.gen_range(-j..=j), p[1] + rng.gen_range(-j..=j)]
                } else {
                    *p
                }
            })
            .collect();
        let min_x = positions.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let min_y = positions.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        for p in &mut positions {
            p[0] -= min_x;
            p[1] -= min_y;
        }
        self.state.positions = positions;
        self.state.velocities = vec![[0.0; 2]; self.lattice.len()];
        self.state.springs = self.template.clone();
        self.state.step = 0;
        self.finished = false;
        self.observe()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &SoftBodyState {
        &self.state
    }

    /// Mutable access for tests and tooling that place the body by hand.
    pub fn state_mut(&mut self) -> &mut SoftBodyState {
        &mut self.state
    }

    pub fn node_count(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Sets spring rest lengths from per-node actions. Non-actuator entries
    /// are ignored; values are clamped to [-1, 1].
    pub fn set_actuation(&mut self, actions: &[f64]) -> Result<()> {
        if actions.len() != self.voxels.len() {
            return Err(EnvError::ActionLength {
                expected: self.voxels.len(),
                got: actions.len(),
            });
        }
        if let Some(index) = actions.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction { index });
        }
        let scales: Vec<(f64, f64)> = self
            .voxels
            .iter()
            .zip(actions)
            .map(|(v, &a)| match v.code {
                H_ACTUATOR => (self.config.actuation_scale(a), 1.0),
                V_ACTUATOR => (1.0, self.config.actuation_scale(a)),
                _ => (1.0, 1.0),
            })
            .collect();
        let size = self.config.voxel_size;
        for s in &mut self.state.springs {
            s.rest = match s.kind {
                SpringKind::Horizontal | SpringKind::Vertical => {
                    let pick = |node: usize| if s.kind == SpringKind::Horizontal { scales[node].0 } else { scales[node].1 };
                    let weighted: f64 = s.owners.iter().map(|&(node, k)| k * pick(node)).sum();
                    let total: f64 = s.owners.iter().map(|&(_, k)| k).sum();
                    size * (weighted / total)
                }
                SpringKind::Diagonal => {
                    let (sh, sv) = scales[s.owners[0].0];
                    size * (sh * sh + sv * sv).sqrt()
                }
            };
        }
        Ok(())
    }

    /// One semi-implicit Euler substep under the current rest lengths.
    pub fn substep(&mut self) {
        let cfg = &self.config;
        let h = cfg.substep_dt();
        let m = cfg.vertex_mass;
        let st = &mut self.state;
        let mut force = vec![[0.0, -m * cfg.gravity]; st.positions.len()];
        for s in &st.springs {
            let (pa, pb) = (st.positions[s.a], st.positions[s.b]);
            let d = [pb[0] - pa[0], pb[1] - pa[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len == 0.0 {
                continue;
            }
            let u = [d[0] / len, d[1] / len];
            let (va, vb) = (st.velocities[s.a], st.velocities[s.b]);
            let closing = (vb[0] - va[0]) * u[0] + (vb[1] - va[1]) * u[1];
            let magnitude = s.stiffness * (len - s.rest) + cfg.damping * closing;
            let f = [magnitude * u[0], magnitude * u[1]];
            force[s.a][0] += f[0];
            force[s.a][1] += f[1];
            force[s.b][0] -= f[0];
            force[s.b][1] -= f[1];
        }
        for (i, p) in st.positions.iter().enumerate() {
            if p[1] < 0.0 {
                let v = st.velocities[i];
                let normal = (-cfg.ground_stiffness * p[1] - cfg.ground_damping * v[1]).max(0.0);
                force[i][1] += normal;
                // Coulomb friction, capped so it can stop but never reverse the slide.
                let cap = m * v[0].abs() / h;
                let tangential = (cfg.friction * normal).min(cap);
                force[i][0] -= tangential * v[0].signum();
            }
        }
        for ((p, v), f) in st.positions.iter_mut().zip(st.velocities.iter_mut()).zip(&force) {
            v[0] += f[0] / m * h;
            v[1] += f[1] / m * h;
            p[0] += v[0] * h;
            p[1] += v[1] * h;
        }
    }

    /// Applies `actions`, advances one control step and reports Δx of the
    /// center of mass. A diverged step restores the pre-step state, ends the
    /// episode and pays `divergence_reward`.
    pub fn step(&mut self, actions: &[f64]) -> Result<StepOutcome> {
        if self.finished {
            return Err(EnvError::EpisodeOver);
        }
        let saved = self.state.clone();
        self.set_actuation(actions)?;
        let before = self.state.center_of_mass()[0];
        for _ in 0..self.config.substeps {
            self.substep();
        }
        self.state.step += 1;
        let (reward, diverged) = if self.state.is_finite() {
            (self.state.center_of_mass()[0] - before, false)
        } else {
            let step = self.state.step;
            self.state = saved;
            self.state.step = step;
            (self.config.divergence_reward, true)
        };
        let done = diverged || self.state.step >= self.config.horizon;
        self.finished = done;
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done,
            diverged,
        })
    }

    pub fn observe(&self) -> Observation {
        let st = &self.state;
        let com = st.center_of_mass();
        let vcom = st.center_of_mass_velocity();
        let local = self
            .voxels
            .iter()
            .map(|v| {
                let mut row = [0.0; LOCAL_OBS_DIM];
                for (k, &c) in v.corners.iter().enumerate() {
                    row[2 * k] = st.positions[c][0] - com[0];
                    row[2 * k + 1] = st.positions[c][1] - com[1];
                    row[8 + 2 * k] = st.velocities[c][0];
                    row[8 + 2 * k + 1] = st.velocities[c][1];
                }
                row
            })
            .collect();
        Observation {
            local,
            global: [vcom[0], vcom[1], com[1]],
        }
    }

    /// Kinetic plus spring, gravitational and ground-penalty potential energy.
    pub fn mechanical_energy(&self) -> f64 {
        let cfg = &self.config;
        let st = &self.state;
        let m = cfg.vertex_mass;
        let mut e = 0.0;
        for (p, v) in st.positions.iter().zip(&st.velocities) {
            e += 0.5 * m * (v[0] * v[0] + v[1] * v[1]) + m * cfg.gravity * p[1];
            if p[1] < 0.0 {
                e += 0.5 * cfg.ground_stiffness * p[1] * p[1];
            }
        }
        for s in &st.springs {
            let (pa, pb) = (st.positions[s.a], st.positions[s.b]);
            let stretch = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt() - s.rest;
            e += 0.5 * s.stiffness * stretch * stretch;
        }
        e
    }
}

pub fn episode_return(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}

/// Mean return of a policy drawing every action uniformly from [-1, 1].
pub fn random_policy_return(grid: &VoxelGrid, config: &EnvConfig, episodes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = SoftBodyEnv::new(grid, config.clone(), seed)?;
    let mut total = 0.0;
    for episode in 0..episodes {
        env.reset(seed.wrapping_add(episode as u64));
        let mut rewards = Vec::with_capacity(config.horizon);
        loop {
            let actions: Vec<f64> = (0..env.node_count()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let out = env.step(&actions)?;
            rewards.push(out.reward);
            if out.done {
                break;
            }
        }
        total += episode_return(&rewards);
    }
    Ok(total / episodes.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&[i64]]) -> VoxelGrid {
        VoxelGrid::new("t", &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn one_by_two_lattice() {
        let env = SoftBodyEnv::new(&grid(&[&[1, 3]]), EnvConfig::default(), 0).unwrap();
        let st = env.state();
        assert_eq!(st.vertex_count(), 6);
        let count = |k| st.springs.iter().filter(|s| s.kind == k).count();
        assert_eq!(count(SpringKind::Horizontal) + count(SpringKind::Vertical), 7);
        assert_eq!(count(SpringKind::Diagonal), 4);
        let shared = st.springs.iter().find(|s| s.owners.len() == 2).unwrap();
        assert_eq!(shared.kind, SpringKind::Vertical);
        assert_eq!(shared.stiffness, 800.0 + 300.0);
    }

    #[test]
    fn placement_on_ground() {
        let env = SoftBodyEnv::new(&grid(&[&[0, 2], &[1, 4]]), EnvConfig::default(), 4).unwrap();
        let ys = env.state().positions.iter().map(|p| p[1]);
        let xs = env.state().positions.iter().map(|p| p[0]);
        assert_eq!(ys.fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(xs.fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(env.state().vertex_count(), 8);
    }

    #[test]
    fn midpoint_action_scale() {
        let cfg = EnvConfig::default();
        assert_eq!(cfg.actuation_scale(0.0), 1.1);
        assert!((cfg.actuation_scale(-1.0) - 0.6).abs() < 1e-15);
        assert_eq!(cfg.actuation_scale(1.0), 1.6);
        assert_eq!(cfg.actuation_scale(7.0), 1.6);
    }

    #[test]
    fn horizontal_actuator_rescales_its_springs() {
        let cfg = EnvConfig::default();
        let mut env = SoftBodyEnv::new(&grid(&[&[1, 3]]), cfg.clone(), 0).unwrap();
        env.set_actuation(&[0.4, 0.0]).unwrap();
        let st = env.state();
        for s in &st.springs {
            let expected = match (s.kind, s.owners.as_slice()) {
                (SpringKind::Horizontal, [(1, _)]) => 1.1,
                (SpringKind::Vertical, [(0, k0), (1, k1)]) => (k0 + k1 * 1.0) / (k0 + k1),
                (SpringKind::Diagonal, [(1, _)]) => (1.1f64 * 1.1 + 1.0).sqrt(),
                (SpringKind::Diagonal, _) => std::f64::consts::SQRT_2,
                _ => 1.0,
            };
            assert!((s.rest - expected).abs() < 1e-15, "{s:?}");
        }
    }

    #[test]
    fn action_length_mismatch() {
        let mut env = SoftBodyEnv::new(&grid(&[&[1, 3]]), EnvConfig::default(), 0).unwrap();
        assert_eq!(env.step(&[0.0]).unwrap_err(), EnvError::ActionLength { expected: 2, got: 1 });
        assert!(matches!(env.step(&[0.0, f64::NAN]), Err(EnvError::NonFiniteAction { index: 1 })));
    }

    #[test]
    fn unstable_substep_rejected() {
        let cfg = EnvConfig {
            substeps: 1,
            dt: 0.1,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(EnvError::Config(_))));
        assert!(EnvConfig::default().validate().is_ok());
        let bad = EnvConfig {
            friction: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn episode_ends_at_horizon() {
        let cfg = EnvConfig {
            horizon: 3,
            ..Default::default()
        };
        let mut env = SoftBodyEnv::new(&grid(&[&[3, 1]]), cfg, 0).unwrap();
        assert!(!env.step(&[0.0, 0.0]).unwrap().done);
        assert!(!env.step(&[0.0, 0.0]).unwrap().done);
        assert!(env.step(&[0.0, 0.0]).unwrap().done);
        assert_eq!(env.step(&[0.0, 0.0]).unwrap_err(), EnvError::EpisodeOver);
        env.reset(1);
        assert!(env.step(&[0.0, 0.0]).is_ok());
    }

    #[test]
    fn return_is_sum() {
        assert!((episode_return(&[0.1, 0.2, -0.05]) - 0.25).abs() < 1e-15);
    }
}
