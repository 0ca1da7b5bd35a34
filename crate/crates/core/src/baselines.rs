//! Reference schemes: constant maximum power (no coordination), almost-blank
//! subframes on a checkerboard grouping, and a minimal DDPG actor-critic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actor::{forward, init_weights, sigmoid_prime_from_output, ActorWeights, DEFAULT_FILTERS};
use crate::error::{Error, Result};
use crate::learner::{apply_update, backward, calibrate_kappa, cost, reward, TrainHistory, TrainRecord};
use crate::netsim::{evaluate, PowerAllocation, Topology};
use crate::observation::{observe, StateMatrix};
use crate::tensor::Matrix;

pub(crate) const DDPG_STREAM: u64 = 2;

/// Every SBS transmits at `p_max` in every subframe.
pub fn max_power_policy(num_sbs: usize, frame_len: usize, p_max: f64) -> PowerAllocation {
    PowerAllocation::constant(num_sbs, frame_len, p_max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbsConfig {
    /// Fraction of subframes each SBS is blanked.
    pub duty: f64,
}

impl Default for AbsConfig {
    fn default() -> Self {
        Self { duty: 0.5 }
    }
}

/// Two-coloring of the SBSs: a checkerboard on square grids, alternating
/// indices otherwise.
pub fn abs_groups(top: &Topology) -> Vec<usize> {
    match top.grid_side() {
        Some(side) => (0..top.num_sbs()).map(|m| (m / side + m % side) % 2).collect(),
        None => (0..top.num_sbs()).map(|m| m % 2).collect(),
    }
}

/// Subframes blanked for `group` when `count` of `frame_len` are muted.
/// Group 0 mutes odd subframes first, group 1 even ones, so at duty 0.5 the
/// two groups alternate.
pub fn blanked_subframes(group: usize, count: usize, frame_len: usize) -> Vec<usize> {
    let first = if group == 0 { 1 } else { 0 };
    let preferred = (first..frame_len).step_by(2);
    let rest = (1 - first..frame_len).step_by(2);
    preferred.chain(rest).take(count).collect()
}

pub fn abs_policy(top: &Topology, cfg: &AbsConfig, frame_len: usize) -> Result<PowerAllocation> {
    if !(0.0..=1.0).contains(&cfg.duty) {
        return Err(Error::InvalidConfig(format!("ABS duty {} outside [0, 1]", cfg.duty)));
    }
    let p_max = top.p_max_w();
    let count = ((cfg.duty * frame_len as f64).ceil() as usize).min(frame_len);
    let mut p = Matrix::filled(top.num_sbs(), frame_len, p_max);
    for (m, group) in abs_groups(top).into_iter().enumerate() {
        for l in blanked_subframes(group, count, frame_len) {
            p[(m, l)] = 0.0;
        }
    }
    PowerAllocation::new(p, p_max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CriticInit {
    Uniform,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdpgConfig {
    /// Widths of the two tanh hidden layers.
    pub hidden: [usize; 2],
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Half-width of the uniform action noise, as a fraction of `p_max`.
    pub noise_scale: f64,
    pub max_iters: usize,
    pub filters: usize,
    pub gamma: f64,
    pub critic_init: CriticInit,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 32],
            actor_lr: 0.1,
            critic_lr: 1e-2,
            noise_scale: 0.1,
            max_iters: 200,
            filters: DEFAULT_FILTERS,
            gamma: 0.5,
            critic_init: CriticInit::Uniform,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden.iter().all(|&h| h > 0)
            && self.actor_lr > 0.0
            && self.critic_lr > 0.0
            && self.noise_scale >= 0.0
            && self.filters > 0
            && self.gamma > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid DDPG configuration {self:?}")))
        }
    }
}

/// Dense critic `Q(s, a)` with two tanh hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticWeights {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

#[derive(Clone, Debug)]
pub struct CriticTrace {
    input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    pub q: f64,
}

impl CriticWeights {
    pub fn zeros(input_dim: usize, hidden: [usize; 2]) -> Self {
        Self {
            w1: Matrix::zeros(hidden[0], input_dim),
            b1: vec![0.0; hidden[0]],
            w2: Matrix::zeros(hidden[1], hidden[0]),
            b2: vec![0.0; hidden[1]],
            w3: vec![0.0; hidden[1]],
            b3: 0.0,
        }
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init(input_dim: usize, hidden: [usize; 2], rng: &mut impl Rng) -> Self {
        let mut c = Self::zeros(input_dim, hidden);
        let mut fill = |xs: &mut [f64], fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            for x in xs {
                *x = rng.gen_range(-b..b);
            }
        };
        fill(c.w1.as_mut_slice(), input_dim);
        fill(c.w2.as_mut_slice(), hidden[0]);
        fill(&mut c.w3, hidden[1]);
        c
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn forward(&self, input: &[f64]) -> CriticTrace {
        assert_eq!(input.len(), self.input_dim(), "critic input size");
        let layer = |w: &Matrix, b: &[f64], x: &[f64]| -> Vec<f64> {
            (0..w.rows())
                .map(|i| (b[i] + w.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh())
                .collect()
        };
        let a1 = layer(&self.w1, &self.b1, input);
        let a2 = layer(&self.w2, &self.b2, &a1);
        let q = self.b3 + self.w3.iter().zip(&a2).map(|(a, b)| a * b).sum::<f64>();
        CriticTrace {
            input: input.to_vec(),
            a1,
            a2,
            q,
        }
    }

    pub fn predict(&self, input: &[f64]) -> f64 {
        self.forward(input).q
    }

    /// Backpropagates `dq` (the upstream derivative of the loss with respect
    /// to `q`). Returns parameter gradients and the input gradient.
    pub fn backprop(&self, tr: &CriticTrace, dq: f64) -> (CriticWeights, Vec<f64>) {
        let h2 = self.w3.len();
        let h1 = self.b1.len();
        let mut g = CriticWeights::zeros(self.input_dim(), [h1, h2]);
        g.b3 = dq;
        let mut d2 = vec![0.0; h2];
        for j in 0..h2 {
            g.w3[j] = dq * tr.a2[j];
            d2[j] = dq * self.w3[j] * (1.0 - tr.a2[j] * tr.a2[j]);
        }
        let mut d1 = vec![0.0; h1];
        for j in 0..h2 {
            g.b2[j] = d2[j];
            for i in 0..h1 {
                g.w2[(j, i)] = d2[j] * tr.a1[i];
                d1[i] += d2[j] * self.w2[(j, i)];
            }
        }
        for (i, d) in d1.iter_mut().enumerate() {
            *d *= 1.0 - tr.a1[i] * tr.a1[i];
        }
        let mut d_in = vec![0.0; self.input_dim()];
        for i in 0..h1 {
            g.b1[i] = d1[i];
            for (k, x) in tr.input.iter().enumerate() {
                g.w1[(i, k)] = d1[i] * x;
                d_in[k] += d1[i] * self.w1[(i, k)];
            }
        }
        (g, d_in)
    }

    fn axpy(&mut self, g: &CriticWeights, scale: f64) {
        let pairs = [
            (self.w1.as_mut_slice(), g.w1.as_slice()),
            (self.w2.as_mut_slice(), g.w2.as_slice()),
            (&mut self.b1[..], &g.b1[..]),
            (&mut self.b2[..], &g.b2[..]),
            (&mut self.w3[..], &g.w3[..]),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        self.b3 += scale * g.b3;
    }

    /// Mean squared error of the predictions on `(input, target)` pairs.
    pub fn loss(&self, batch: &[(Vec<f64>, f64)]) -> f64 {
        batch
            .iter()
            .map(|(x, r)| (self.predict(x) - r).powi(2))
            .sum::<f64>()
            / batch.len().max(1) as f64
    }

    /// One full-batch gradient step on the mean squared error.
    pub fn regression_step(&mut self, batch: &[(Vec<f64>, f64)], lr: f64) {
        if batch.is_empty() {
            return;
        }
        let mut total = CriticWeights::zeros(self.input_dim(), [self.b1.len(), self.w3.len()]);
        let scale = 2.0 / batch.len() as f64;
        for (x, r) in batch {
            let tr = self.forward(x);
            let (g, _) = self.backprop(&tr, scale * (tr.q - r));
            total.axpy(&g, 1.0);
        }
        self.axpy(&total, -lr);
    }

    pub fn all_finite(&self) -> bool {
        self.w1.as_slice().iter().chain(self.w2.as_slice())
            .chain(&self.b1)
            .chain(&self.b2)
            .chain(&self.w3)
            .chain(std::iter::once(&self.b3))
            .all(|x| x.is_finite())
    }
}

/// Critic input: the normalized state followed by the normalized action.
pub fn critic_input(state: &StateMatrix, action_norm: &Matrix) -> Vec<f64> {
    state
        .matrix()
        .as_slice()
        .iter()
        .chain(action_norm.as_slice())
        .copied()
        .collect()
}

/// Final networks and per-iteration history of a DDPG run.
#[derive(Clone, Debug, PartialEq)]
pub struct DdpgRun {
    pub actor: ActorWeights,
    pub critic: CriticWeights,
    pub history: TrainHistory,
}

/// Online DDPG without replay or target networks (discount 0): the critic
/// regresses the observed reward of the executed action and the actor climbs
/// the critic's action gradient.
pub fn ddpg_run(top: &Topology, cfg: &DdpgConfig, seed: u64) -> Result<DdpgRun> {
    cfg.validate()?;
    let (m_count, l_count) = (top.num_sbs(), top.frame_len());
    let p_max = top.p_max_w();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DDPG_STREAM);

    let mut actor = init_weights(m_count, cfg.filters, l_count, seed);
    let input_dim = m_count * m_count + m_count * l_count;
    let mut critic = match cfg.critic_init {
        CriticInit::Uniform => CriticWeights::init(input_dim, cfg.hidden, &mut rng),
        CriticInit::Zeros => CriticWeights::zeros(input_dim, cfg.hidden),
    };
    let mut history = TrainHistory {
        records: Vec::with_capacity(cfg.max_iters),
        kappa: f64::NAN,
    };
    let (lo, hi) = (p_max * f64::EPSILON, p_max * (1.0 - f64::EPSILON));

    for iteration in 0..cfg.max_iters {
        let state = observe(top);
        let (det, trace) = forward(&state, &actor, p_max)?;
        let mut executed = det.matrix().clone();
        if cfg.noise_scale > 0.0 {
            let half = cfg.noise_scale * p_max;
            for p in executed.as_mut_slice() {
                *p = (*p + rng.gen_range(-half..half)).clamp(lo, hi);
            }
        }
        let executed = PowerAllocation::new(executed, p_max)?;
        let metrics = evaluate(top, &executed)?;
        if iteration == 0 {
            history.kappa = calibrate_kappa(metrics.eta);
        }
        let r = reward(metrics.eta, cfg.gamma, history.kappa)?;

        let exec_norm = executed.matrix().map(|p| p / p_max);
        critic.regression_step(&[(critic_input(&state, &exec_norm), r)], cfg.critic_lr);
        if !critic.all_finite() {
            return Err(Error::NonFinite(format!("critic weights at iteration {iteration}")));
        }

        // minimize -Q(s, mu(s)) through the actor
        let tr = critic.forward(&critic_input(&state, &trace.h3o));
        let (_, d_in) = critic.backprop(&tr, -1.0);
        let d_action = &d_in[m_count * m_count..];
        let mut delta3 = Matrix::zeros(m_count, l_count);
        for m in 0..m_count {
            for l in 0..l_count {
                delta3[(m, l)] = d_action[m * l_count + l] * sigmoid_prime_from_output(trace.h3o[(m, l)]);
            }
        }
        let grads = backward(&trace, &actor, &delta3)?;
        let grad_norm = grads.norm();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("actor gradient at iteration {iteration}")));
        }
        history.records.push(TrainRecord {
            iteration,
            eta: metrics.eta,
            reward: r,
            cost: cost(r),
            throughput: metrics.throughput,
            total_power: metrics.total_power,
            violations: metrics.violations,
            grad_norm,
            allocation: executed,
        });
        if iteration + 1 < cfg.max_iters {
            actor = apply_update(&actor, &grads, cfg.actor_lr);
        }
    }
    Ok(DdpgRun {
        actor,
        critic,
        history,
    })
}

pub fn ddpg_train(top: &Topology, cfg: &DdpgConfig, seed: u64) -> Result<TrainHistory> {
    ddpg_run(top, cfg, seed).map(|run| run.history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{build_topology, ScenarioConfig};

    fn grid(side: usize, users: usize, l: usize) -> Topology {
        build_topology(&ScenarioConfig {
            grid_side: side,
            num_users: users,
            frame_len: l,
            rng_seed: 4,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn max_power_is_constant() {
        let a = max_power_policy(2, 2, 1.0);
        assert_eq!(a.matrix().as_slice(), &[1.0; 4]);
    }

    #[test]
    fn abs_zero_duty_is_max_power() {
        let top = grid(2, 10, 10);
        let a = abs_policy(&top, &AbsConfig { duty: 0.0 }, 10).unwrap();
        assert_eq!(a, max_power_policy(4, 10, top.p_max_w()));
    }

    #[test]
    fn abs_half_duty_counts_and_alternation() {
        let top = grid(2, 10, 10);
        let a = abs_policy(&top, &AbsConfig::default(), 10).unwrap();
        for m in 0..4 {
            let muted = (0..10).filter(|&l| a.get(m, l) == 0.0).count();
            assert_eq!(muted, 5);
        }
        // grid neighbours never transmit together
        let side = 2;
        for l in 0..10 {
            for m in 0..4 {
                let (r, c) = (m / side, m % side);
                for (nr, nc) in [(r + 1, c), (r, c + 1)] {
                    if nr < side && nc < side {
                        let k = nr * side + nc;
                        assert!(a.get(m, l) == 0.0 || a.get(k, l) == 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn abs_general_duty_blanks_ceiling() {
        let top = grid(2, 10, 7);
        let a = abs_policy(&top, &AbsConfig { duty: 0.3 }, 7).unwrap();
        for m in 0..4 {
            assert_eq!((0..7).filter(|&l| a.get(m, l) == 0.0).count(), 3);
        }
        assert!(abs_policy(&top, &AbsConfig { duty: 1.2 }, 7).is_err());
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = CriticWeights::init(5, [4, 3], &mut rng);
        let x = vec![0.1, -0.4, 0.7, 0.2, 0.9];
        let tr = c.forward(&x);
        let (g, d_in) = c.backprop(&tr, 1.0);
        let h = 1e-6;
        for k in 0..5 {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (c.predict(&xp) - c.predict(&xm)) / (2.0 * h);
            assert!((fd - d_in[k]).abs() < 1e-8);
        }
        let mut cp = c.clone();
        cp.w1[(2, 3)] += h;
        let mut cm = c.clone();
        cm.w1[(2, 3)] -= h;
        let fd = (cp.predict(&x) - cm.predict(&x)) / (2.0 * h);
        assert!((fd - g.w1[(2, 3)]).abs() < 1e-8);
    }

    #[test]
    fn critic_fits_a_repeated_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut c = CriticWeights::init(8, [64, 32], &mut rng);
        let sample = vec![(vec![0.3, 0.1, 0.8, 0.5, 0.2, 0.9, 0.4, 0.6], 1.359)];
        for _ in 0..1000 {
            c.regression_step(&sample, 1e-2);
        }
        assert!((c.predict(&sample[0].0) - 1.359).abs() < 1e-3);
    }

    #[test]
    fn zero_critic_without_noise_leaves_actor_unchanged() {
        let top = grid(2, 12, 3);
        let cfg = DdpgConfig {
            noise_scale: 0.0,
            critic_init: CriticInit::Zeros,
            max_iters: 2,
            ..Default::default()
        };
        let run = ddpg_run(&top, &cfg, 3).unwrap();
        let recs = &run.history.records;
        assert_eq!(recs[0].allocation, recs[1].allocation);
        assert_eq!(recs[0].grad_norm, 0.0);
    }

    #[test]
    fn ddpg_is_seeded() {
        let top = grid(2, 12, 3);
        let cfg = DdpgConfig {
            max_iters: 20,
            ..Default::default()
        };
        assert_eq!(ddpg_train(&top, &cfg, 5).unwrap(), ddpg_train(&top, &cfg, 5).unwrap());
        assert_ne!(ddpg_train(&top, &cfg, 5).unwrap(), ddpg_train(&top, &cfg, 6).unwrap());
    }
}
