//! Deterministic-target policy gradient training of the actor.
//!
//! The reward is a closed-form function of the frame's energy efficiency,
//! `r = gamma * exp(kappa * eta)`, and the cost is `C = -r`. Because `eta` is
//! an analytic function of the allocation, `dC/dP` is available exactly and is
//! backpropagated through the actor without a learned critic.
//!
//! `kappa` rescales `eta` so the exponent stays in range; it is fixed once
//! from the first frame so that `kappa * eta_0 = 1`.

use crate::actor::{forward, sigmoid_prime_from_output, ActorWeights, ForwardTrace};
use crate::error::{Error, Result};
use crate::netsim::{self, evaluate, grad_ee, FrameMetrics, PowerAllocation, Topology};
use crate::observation::observe;
use crate::tensor::{Matrix, Tensor3};

/// Largest exponent accepted by [`reward`].
pub const MAX_REWARD_EXPONENT: f64 = 500.0;

/// When to stop training, besides the iteration cap.
#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    /// Stop once `|C_i - C_{i-window}| / |C_{i-window}| < rel_tol`.
    Plateau { window: usize, rel_tol: f64 },
    /// Stop once `C <= epsilon`.
    CostBelow(f64),
    /// Run all `max_iters` iterations.
    Never,
}

impl Default for Termination {
    fn default() -> Self {
        Termination::Plateau {
            window: 10,
            rel_tol: 1e-4,
        }
    }
}

/// Source of `d eta / dP` used in the output-layer error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaGradient {
    Analytic,
    /// Central differences with step `rel_step * p_max`.
    FiniteDifference { rel_step: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub lr: f64,
    pub gamma: f64,
    /// Fixed reward scaling; `None` calibrates it from the first frame.
    pub kappa: Option<f64>,
    pub termination: Termination,
    pub max_iters: usize,
    /// Cross-check the analytic efficiency gradient against central
    /// differences every iteration and fail on disagreement.
    pub fd_check: bool,
    pub eta_gradient: EtaGradient,
    /// Experimental, off by default: subtract `lambda` times the total rate
    /// shortfall below the requirement from the throughput in the objective.
    pub violation_penalty: Option<f64>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            gamma: 0.5,
            kappa: None,
            termination: Termination::default(),
            max_iters: 200,
            fd_check: false,
            eta_gradient: EtaGradient::Analytic,
            violation_penalty: None,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig("gamma must be positive".into()));
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidConfig("kappa must be positive".into()));
            }
        }
        if let Termination::Plateau { window, rel_tol } = self.termination {
            if window == 0 || !(rel_tol >= 0.0) {
                return Err(Error::InvalidConfig("plateau window must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `kappa` such that `kappa * eta0 = 1`.
pub fn calibrate_kappa(eta0: f64) -> f64 {
    if eta0 > 0.0 && eta0.is_finite() {
        1.0 / eta0
    } else {
        1.0
    }
}

pub fn reward(eta: f64, gamma: f64, kappa: f64) -> Result<f64> {
    let exponent = kappa * eta;
    if !exponent.is_finite() {
        return Err(Error::NonFinite(format!("reward exponent {exponent}")));
    }
    if exponent > MAX_REWARD_EXPONENT {
        return Err(Error::RewardOverflow { exponent });
    }
    Ok(gamma * exponent.exp())
}

pub fn cost(r: f64) -> f64 {
    -r
}

/// Cost gradients, shaped like [`ActorWeights`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub g1: Tensor3,
    pub g2: Tensor3,
    pub g3: Tensor3,
}

impl GradientSet {
    pub fn norm(&self) -> f64 {
        (self.g1.norm_sq() + self.g2.norm_sq() + self.g3.norm_sq()).sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.g1
            .as_slice()
            .iter()
            .chain(self.g2.as_slice())
            .chain(self.g3.as_slice())
    }
}

/// Output-layer error `dC/dH3i` given `d eta/dP` at the traced allocation.
pub fn output_error(
    trace: &ForwardTrace,
    grad_eta: &Matrix,
    eta: f64,
    gamma: f64,
    kappa: f64,
) -> Result<Matrix> {
    if grad_eta.shape() != trace.h3o.shape() {
        return Err(Error::DimensionMismatch(format!(
            "efficiency gradient is {:?}, output layer is {:?}",
            grad_eta.shape(),
            trace.h3o.shape()
        )));
    }
    // dC/dP = -dr/d eta * d eta/dP, and dP/dH3o = p_max
    let scale = -reward(eta, gamma, kappa)? * kappa * trace.p_max;
    let (rows, cols) = grad_eta.shape();
    let mut delta = Matrix::zeros(rows, cols);
    for m in 0..rows {
        for l in 0..cols {
            delta[(m, l)] = scale * grad_eta[(m, l)] * sigmoid_prime_from_output(trace.h3o[(m, l)]);
        }
    }
    Ok(delta)
}

/// Backpropagates the output error through the actor.
pub fn backward(trace: &ForwardTrace, w: &ActorWeights, delta3: &Matrix) -> Result<GradientSet> {
    let (m_count, f_count, l_count) = w.dims();
    if delta3.shape() != (m_count, l_count)
        || trace.h3o.shape() != (m_count, l_count)
        || trace.h1o.dims() != [m_count, f_count, l_count]
    {
        return Err(Error::DimensionMismatch(
            "trace, weights and output error disagree on shape".into(),
        ));
    }
    let s = trace.input.matrix();

    let mut delta2 = Matrix::zeros(m_count, l_count);
    for m in 0..m_count {
        for l in 0..l_count {
            let back: f64 = (0..m_count).map(|k| delta3[(k, l)] * w.h3[(m, k, l)]).sum();
            delta2[(m, l)] = back * sigmoid_prime_from_output(trace.h2o[(m, l)]);
        }
    }

    let mut delta1 = Tensor3::zeros(m_count, f_count, l_count);
    for m in 0..m_count {
        for f in 0..f_count {
            for l in 0..l_count {
                delta1[(m, f, l)] = delta2[(m, l)]
                    * w.h2[(m, f, l)]
                    * sigmoid_prime_from_output(trace.h1o[(m, f, l)]);
            }
        }
    }

    let mut g3 = Tensor3::zeros(m_count, m_count, l_count);
    for m1 in 0..m_count {
        for m2 in 0..m_count {
            for l in 0..l_count {
                g3[(m1, m2, l)] = delta3[(m2, l)] * trace.h2o[(m1, l)];
            }
        }
    }

    let mut g2 = Tensor3::zeros(m_count, f_count, l_count);
    for m in 0..m_count {
        for f in 0..f_count {
            for l in 0..l_count {
                g2[(m, f, l)] = delta2[(m, l)] * trace.h1o[(m, f, l)];
            }
        }
    }

    let mut g1 = Tensor3::zeros(m_count, f_count, l_count);
    for k in 0..m_count {
        for f in 0..f_count {
            for l in 0..l_count {
                g1[(k, f, l)] = (0..m_count).map(|m| delta1[(m, f, l)] * s[(m, k)]).sum();
            }
        }
    }

    Ok(GradientSet { g1, g2, g3 })
}

/// Plain gradient step `w - lr * g`.
pub fn apply_update(w: &ActorWeights, g: &GradientSet, lr: f64) -> ActorWeights {
    ActorWeights {
        h1: w.h1.sub_scaled(&g.g1, lr),
        h2: w.h2.sub_scaled(&g.g2, lr),
        h3: w.h3.sub_scaled(&g.g3, lr),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub eta: f64,
    pub reward: f64,
    pub cost: f64,
    pub throughput: f64,
    pub total_power: f64,
    pub violations: usize,
    pub grad_norm: f64,
    pub allocation: PowerAllocation,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
    /// Reward scaling in effect during the run.
    pub kappa: f64,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    pub fn etas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eta).collect()
    }
}

/// Objective value and its gradient with respect to the allocation.
fn objective_and_grad(
    top: &Topology,
    alloc: &PowerAllocation,
    metrics: &FrameMetrics,
    cfg: &LearnerConfig,
) -> Result<(f64, Matrix)> {
    if let Some(lambda) = cfg.violation_penalty {
        let req = top.params().rate_req_bps;
        let short: Vec<bool> = metrics.user_rates.iter().map(|&r| r < req).collect();
        let shortfall: f64 = metrics
            .user_rates
            .iter()
            .map(|&r| (req - r).max(0.0))
            .sum();
        let weights: Vec<f64> = short.iter().map(|&s| if s { 1.0 + lambda } else { 1.0 }).collect();
        let numerator = metrics.throughput - lambda * shortfall;
        let dt = netsim::weighted_throughput_grad(top, alloc, &weights);
        let grad = netsim::quotient_grad(top, alloc, dt, numerator);
        let objective = if metrics.total_power > 0.0 {
            numerator / metrics.total_power
        } else {
            0.0
        };
        return Ok((objective, grad));
    }

    let grad = match cfg.eta_gradient {
        EtaGradient::Analytic => grad_ee(top, alloc)?,
        EtaGradient::FiniteDifference { rel_step } => {
            netsim::grad_ee_numeric(top, alloc, rel_step * top.p_max_w())?
        }
    };
    if cfg.fd_check {
        let analytic = grad_ee(top, alloc)?;
        let numeric = netsim::grad_ee_numeric(top, alloc, 1e-4 * top.p_max_w())?;
        let diff: f64 = analytic
            .as_slice()
            .iter()
            .zip(numeric.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = numeric.norm_sq().sqrt().max(f64::MIN_POSITIVE);
        if diff / scale > 1e-4 {
            return Err(Error::GradientMismatch {
                rel_err: diff / scale,
            });
        }
    }
    Ok((metrics.eta, grad))
}

/// Runs the observe / act / execute / train loop from `w0`.
///
/// Returns the weights that produced the last recorded allocation together
/// with one record per iteration.
pub fn train(
    top: &Topology,
    cfg: &LearnerConfig,
    w0: &ActorWeights,
) -> Result<(ActorWeights, TrainHistory)> {
    cfg.validate()?;
    if w0.num_sbs() != top.num_sbs() || w0.frame_len() != top.frame_len() {
        return Err(Error::DimensionMismatch(format!(
            "actor is built for M={}, L={} but topology has M={}, L={}",
            w0.num_sbs(),
            w0.frame_len(),
            top.num_sbs(),
            top.frame_len()
        )));
    }
    let mut history = TrainHistory {
        records: Vec::with_capacity(cfg.max_iters),
        kappa: cfg.kappa.unwrap_or(f64::NAN),
    };
    let mut w = w0.clone();
    let p_max = top.p_max_w();

    for iteration in 0..cfg.max_iters {
        // observe
        let state = observe(top);
        // act
        let (alloc, trace) = forward(&state, &w, p_max)?;
        // execute
        let metrics = evaluate(top, &alloc)?;
        // train
        let (objective, grad_obj) = objective_and_grad(top, &alloc, &metrics, cfg)?;
        if iteration == 0 && cfg.kappa.is_none() {
            history.kappa = calibrate_kappa(objective);
        }
        let kappa = history.kappa;
        let r = reward(objective, cfg.gamma, kappa)?;
        let c = cost(r);
        let delta3 = output_error(&trace, &grad_obj, objective, cfg.gamma, kappa)?;
        let grads = backward(&trace, &w, &delta3)?;
        let grad_norm = grads.norm();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm at iteration {iteration}")));
        }
        history.records.push(TrainRecord {
            iteration,
            eta: metrics.eta,
            reward: r,
            cost: c,
            throughput: metrics.throughput,
            total_power: metrics.total_power,
            violations: metrics.violations,
            grad_norm,
            allocation: alloc,
        });

        if iteration + 1 == cfg.max_iters || should_stop(&history.records, &cfg.termination) {
            break;
        }
        w = apply_update(&w, &grads, cfg.lr);
    }
    Ok((w, history))
}

fn should_stop(records: &[TrainRecord], rule: &Termination) -> bool {
    let Some(last) = records.last() else {
        return false;
    };
    match *rule {
        Termination::Never => false,
        Termination::CostBelow(eps) => last.cost <= eps,
        Termination::Plateau { window, rel_tol } => {
            if records.len() <= window {
                return false;
            }
            let before = records[records.len() - 1 - window].cost;
            (last.cost - before).abs() < rel_tol * before.abs()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actor::init_weights;
    use crate::netsim::{build_topology, ScenarioConfig};
    use crate::observation::observe;

    fn small_top() -> Topology {
        build_topology(&ScenarioConfig {
            grid_side: 2,
            num_users: 8,
            frame_len: 2,
            rng_seed: 21,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn reward_values() {
        assert_eq!(reward(0.0, 0.5, 1.0).unwrap(), 0.5);
        assert!((reward(2.0, 0.5, 0.5).unwrap() - 1.359_140_914).abs() < 1e-9);
        assert!(matches!(reward(600.0, 0.5, 1.0), Err(Error::RewardOverflow { .. })));
        assert_eq!(cost(0.5), -0.5);
        assert_eq!(cost(0.0), 0.0);
    }

    #[test]
    fn reward_is_increasing() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a: f64 = rng.gen_range(-50.0..50.0);
            let b: f64 = rng.gen_range(-50.0..50.0);
            if a == b {
                continue;
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            assert!(reward(lo, 0.5, 1.0).unwrap() < reward(hi, 0.5, 1.0).unwrap());
            assert!(cost(reward(lo, 0.5, 1.0).unwrap()) > cost(reward(hi, 0.5, 1.0).unwrap()));
        }
    }

    #[test]
    fn output_error_signs_and_zero() {
        let top = small_top();
        let w = init_weights(4, 3, 2, 5);
        let (_, trace) = forward(&observe(&top), &w, top.p_max_w()).unwrap();
        let zero = output_error(&trace, &Matrix::zeros(4, 2), 1.0, 0.5, 1.0).unwrap();
        assert!(zero.as_slice().iter().all(|&d| d == 0.0));

        let g = Matrix::from_vec(4, 2, vec![1.0, -2.0, 0.5, -0.1, 3.0, -4.0, 0.2, -0.3]).unwrap();
        let d = output_error(&trace, &g, 1.0, 0.5, 1.0).unwrap();
        for (a, b) in d.as_slice().iter().zip(g.as_slice()) {
            assert!(a * b < 0.0);
        }
    }

    #[test]
    fn scalar_output_error() {
        let top = build_topology(&ScenarioConfig {
            grid_side: 1,
            num_users: 1,
            frame_len: 1,
            ..Default::default()
        })
        .unwrap();
        let mut w = ActorWeights::zeros(1, 1, 1);
        w.h3[(0, 0, 0)] = 0.8;
        let (_, trace) = forward(&observe(&top), &w, 1.0).unwrap();
        let (gamma, kappa, eta, ge) = (0.5, 0.01, 30.0, 2.5);
        let d = output_error(&trace, &Matrix::filled(1, 1, ge), eta, gamma, kappa).unwrap();
        let y = trace.h3o[(0, 0)];
        let expect = -gamma * kappa * (kappa * eta).exp() * 1.0 * ge * y * (1.0 - y);
        assert!((d[(0, 0)] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_error_gives_zero_gradients() {
        let top = small_top();
        let w = init_weights(4, 3, 2, 5);
        let (_, trace) = forward(&observe(&top), &w, top.p_max_w()).unwrap();
        let g = backward(&trace, &w, &Matrix::zeros(4, 2)).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn drawer_gradients_use_own_column() {
        let top = small_top();
        let w = init_weights(4, 3, 2, 5);
        let (_, trace) = forward(&observe(&top), &w, top.p_max_w()).unwrap();
        let mut d = Matrix::zeros(4, 2);
        for m in 0..4 {
            d[(m, 1)] = 0.1 * (m as f64 + 1.0);
        }
        let g = backward(&trace, &w, &d).unwrap();
        for t in [&g.g1, &g.g2, &g.g3] {
            let [a, b, _] = t.dims();
            for i in 0..a {
                for j in 0..b {
                    assert_eq!(t[(i, j, 0)], 0.0);
                }
            }
        }
        assert!(g.g3.as_slice().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn update_rules() {
        let w = init_weights(2, 2, 2, 3);
        let g = GradientSet {
            g1: Tensor3::zeros(2, 2, 2),
            g2: Tensor3::zeros(2, 2, 2),
            g3: Tensor3::zeros(2, 2, 2),
        };
        assert_eq!(apply_update(&w, &g, 0.1), w);
        let g = GradientSet {
            g1: init_weights(2, 2, 2, 4).h1,
            g2: init_weights(2, 2, 2, 5).h2,
            g3: init_weights(2, 2, 2, 6).h3,
        };
        assert_eq!(apply_update(&w, &g, 0.0), w);
        // powers of two keep the round trip exact
        assert_eq!(apply_update(&apply_update(&w, &g, 0.125), &g, -0.125), w);
    }

    #[test]
    fn zero_iterations_return_initial_weights() {
        let top = small_top();
        let w0 = init_weights(4, 3, 2, 5);
        let cfg = LearnerConfig {
            max_iters: 0,
            ..Default::default()
        };
        let (w, h) = train(&top, &cfg, &w0).unwrap();
        assert_eq!(w, w0);
        assert!(h.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_cost_is_negative_reward() {
        let top = small_top();
        let w0 = init_weights(4, 3, 2, 5);
        let cfg = LearnerConfig {
            max_iters: 30,
            ..Default::default()
        };
        let a = train(&top, &cfg, &w0).unwrap();
        let b = train(&top, &cfg, &w0).unwrap();
        assert_eq!(a, b);
        for r in &a.1.records {
            assert_eq!(r.cost, -r.reward);
            assert!(r.reward > 0.0);
            let eta = evaluate(&top, &r.allocation).unwrap().eta;
            assert!((eta - r.eta).abs() <= 1e-12 * eta);
        }
        // final weights reproduce the last allocation
        let (alloc, _) = forward(&observe(&top), &a.0, top.p_max_w()).unwrap();
        assert_eq!(&alloc, &a.1.last().unwrap().allocation);
    }

    #[test]
    fn cost_threshold_stops_immediately() {
        let top = small_top();
        let w0 = init_weights(4, 3, 2, 5);
        let cfg = LearnerConfig {
            max_iters: 50,
            termination: Termination::CostBelow(0.0),
            ..Default::default()
        };
        let (_, h) = train(&top, &cfg, &w0).unwrap();
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn finite_difference_modes_track_analytic() {
        let top = small_top();
        let w0 = init_weights(4, 3, 2, 5);
        let base = LearnerConfig {
            max_iters: 5,
            termination: Termination::Never,
            ..Default::default()
        };
        let checked = LearnerConfig {
            fd_check: true,
            ..base.clone()
        };
        let fd = LearnerConfig {
            eta_gradient: EtaGradient::FiniteDifference { rel_step: 1e-5 },
            ..base.clone()
        };
        let a = train(&top, &base, &w0).unwrap().1;
        let b = train(&top, &checked, &w0).unwrap().1;
        let c = train(&top, &fd, &w0).unwrap().1;
        assert_eq!(a, b);
        for (x, y) in a.etas().iter().zip(c.etas()) {
            assert!((x - y).abs() < 1e-9 * x);
        }
    }

    #[test]
    fn penalty_mode_runs() {
        let top = small_top();
        let w0 = init_weights(4, 3, 2, 5);
        let cfg = LearnerConfig {
            max_iters: 10,
            violation_penalty: Some(0.5),
            ..Default::default()
        };
        let (_, h) = train(&top, &cfg, &w0).unwrap();
        assert!(!h.is_empty() && h.len() <= 10);
        assert!(h.records.iter().all(|r| r.reward.is_finite()));
    }
}
