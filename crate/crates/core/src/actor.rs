//! Deterministic actor: state matrix in, power allocation out.
//!
//! The network is split into `L` independent drawers, one per subframe, all
//! reading the same normalized `M x M` state. Each drawer has three sigmoid
//! layers and no biases:
//!
//! ```text
//! H1i(m,f,l) = sum_k h1(k,f,l) * S(m,k)        single-feature filters
//! H2i(m,l)   = sum_f h2(m,f,l) * H1o(m,f,l)    global features
//! H3i(m,l)   = sum_k h3(k,m,l) * H2o(k,l)      cross-SBS connection
//! P(m,l)     = p_max * sigmoid(H3i(m,l))
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netsim::PowerAllocation;
use crate::observation::StateMatrix;
use crate::tensor::{Matrix, Tensor3};

pub(crate) const ACTOR_STREAM: u64 = 1;

pub const DEFAULT_FILTERS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ActorWeights {
    /// `M x F x L`, indexed `(k, f, l)`.
    pub h1: Tensor3,
    /// `M x F x L`, indexed `(m, f, l)`.
    pub h2: Tensor3,
    /// `M x M x L`, indexed `(k, m, l)`.
    pub h3: Tensor3,
}

impl ActorWeights {
    pub fn zeros(m: usize, f: usize, l: usize) -> Self {
        Self {
            h1: Tensor3::zeros(m, f, l),
            h2: Tensor3::zeros(m, f, l),
            h3: Tensor3::zeros(m, m, l),
        }
    }

    /// Checks that the three tensors agree on `(M, F, L)` and are finite.
    pub fn from_tensors(h1: Tensor3, h2: Tensor3, h3: Tensor3) -> Result<Self> {
        let [m, f, l] = h1.dims();
        if h2.dims() != [m, f, l] || h3.dims() != [m, m, l] {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent actor shapes h1 {:?}, h2 {:?}, h3 {:?}",
                h1.dims(),
                h2.dims(),
                h3.dims()
            )));
        }
        let w = Self { h1, h2, h3 };
        if !w.all_finite() {
            return Err(Error::NonFinite("actor weights".into()));
        }
        Ok(w)
    }

    pub fn num_sbs(&self) -> usize {
        self.h1.dims()[0]
    }

    pub fn filters(&self) -> usize {
        self.h1.dims()[1]
    }

    pub fn frame_len(&self) -> usize {
        self.h1.dims()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.num_sbs(), self.filters(), self.frame_len())
    }

    pub fn all_finite(&self) -> bool {
        [&self.h1, &self.h2, &self.h3]
            .iter()
            .all(|t| t.as_slice().iter().all(|x| x.is_finite()))
    }

    pub fn param_count(&self) -> usize {
        self.h1.len() + self.h2.len() + self.h3.len()
    }

    /// Mutable view of every parameter, in `h1, h2, h3` order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.h1
            .as_mut_slice()
            .iter_mut()
            .chain(self.h2.as_mut_slice().iter_mut())
            .chain(self.h3.as_mut_slice().iter_mut())
    }
}

/// Uniform initialization in the open interval `(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
/// with `fan_in = M` for `h1` and `h3` and `F` for `h2`.
pub fn init_weights(m: usize, f: usize, l: usize, seed: u64) -> ActorWeights {
    assert!(m >= 1 && f >= 1 && l >= 1, "actor dimensions must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ACTOR_STREAM);
    let mut w = ActorWeights::zeros(m, f, l);
    let bounds = [
        1.0 / (m as f64).sqrt(),
        1.0 / (f as f64).sqrt(),
        1.0 / (m as f64).sqrt(),
    ];
    for (tensor, bound) in [&mut w.h1, &mut w.h2, &mut w.h3].into_iter().zip(bounds) {
        for x in tensor.as_mut_slice() {
            *x = open_uniform(&mut rng, bound);
        }
    }
    w
}

fn open_uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    loop {
        let x = rng.gen_range(-bound..bound);
        if x > -bound {
            return x;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the sigmoid expressed through its output `y`.
#[inline]
pub fn sigmoid_prime_from_output(y: f64) -> f64 {
    y * (1.0 - y)
}

/// Intermediate activations of one forward pass, kept for backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub input: StateMatrix,
    pub h1i: Tensor3,
    pub h1o: Tensor3,
    pub h2i: Matrix,
    pub h2o: Matrix,
    pub h3i: Matrix,
    pub h3o: Matrix,
    pub p_max: f64,
}

pub fn forward(
    state: &StateMatrix,
    w: &ActorWeights,
    p_max: f64,
) -> Result<(PowerAllocation, ForwardTrace)> {
    let (m_count, f_count, l_count) = w.dims();
    if state.dim() != m_count {
        return Err(Error::DimensionMismatch(format!(
            "state is {0}x{0} but actor expects {1}x{1}",
            state.dim(),
            m_count
        )));
    }
    let s = state.matrix();

    let mut h1i = Tensor3::zeros(m_count, f_count, l_count);
    for m in 0..m_count {
        for f in 0..f_count {
            for l in 0..l_count {
                h1i[(m, f, l)] = (0..m_count).map(|k| w.h1[(k, f, l)] * s[(m, k)]).sum();
            }
        }
    }
    let h1o = Tensor3::from_vec(
        h1i.dims(),
        h1i.as_slice().iter().map(|&x| sigmoid(x)).collect(),
    )
    .expect("same shape");

    let mut h2i = Matrix::zeros(m_count, l_count);
    for m in 0..m_count {
        for l in 0..l_count {
            h2i[(m, l)] = (0..f_count).map(|f| w.h2[(m, f, l)] * h1o[(m, f, l)]).sum();
        }
    }
    let h2o = h2i.map(sigmoid);

    let mut h3i = Matrix::zeros(m_count, l_count);
    for m in 0..m_count {
        for l in 0..l_count {
            h3i[(m, l)] = (0..m_count).map(|k| w.h3[(k, m, l)] * h2o[(k, l)]).sum();
        }
    }
    let h3o = h3i.map(sigmoid);

    let alloc = PowerAllocation::new(h3o.map(|y| p_max * y), p_max)?;
    let trace = ForwardTrace {
        input: state.clone(),
        h1i,
        h1o,
        h2i,
        h2o,
        h3i,
        h3o,
        p_max,
    };
    Ok((alloc, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(rows: &[Vec<f64>]) -> StateMatrix {
        StateMatrix::from_matrix(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(40.0) > 0.999_999);
        assert!(sigmoid(-745.0) >= 0.0 && sigmoid(-745.0).is_finite());
        assert!((sigmoid(-3.7) - (1.0 - sigmoid(3.7))).abs() < 1e-15);
        let y = sigmoid(0.3);
        let h = 1e-6;
        let fd = (sigmoid(0.3 + h) - sigmoid(0.3 - h)) / (2.0 * h);
        assert!((sigmoid_prime_from_output(y) - fd).abs() < 1e-9);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_weights(3, 4, 2, 9);
        assert_eq!(a, init_weights(3, 4, 2, 9));
        assert_ne!(init_weights(3, 4, 2, 0), init_weights(3, 4, 2, 1));
        let b_m = 1.0 / 3f64.sqrt();
        assert!(a.h1.as_slice().iter().all(|w| w.abs() < b_m));
        assert!(a.h3.as_slice().iter().all(|w| w.abs() < b_m));
        assert!(a.h2.as_slice().iter().all(|w| w.abs() < 0.5));
    }

    #[test]
    fn zero_weights_give_half_power() {
        let w = ActorWeights::zeros(3, 2, 4);
        let s = state(&[vec![0.2, 0.9, 0.1], vec![0.3, 0.4, 1.0], vec![0.0, 0.5, 0.7]]);
        let (alloc, _) = forward(&s, &w, 2.0).unwrap();
        assert!(alloc.matrix().as_slice().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn drawers_are_independent() {
        let s = state(&[vec![0.2, 0.9], vec![0.3, 0.4]]);
        let w = init_weights(2, 3, 3, 4);
        let mut w2 = w.clone();
        for f in 0..3 {
            w2.h1[(1, f, 1)] += 0.3;
            w2.h2[(0, f, 1)] -= 0.2;
        }
        w2.h3[(0, 1, 1)] += 0.5;
        let (a, _) = forward(&s, &w, 1.0).unwrap();
        let (b, _) = forward(&s, &w2, 1.0).unwrap();
        for m in 0..2 {
            assert_eq!(a.get(m, 0), b.get(m, 0));
            assert_eq!(a.get(m, 2), b.get(m, 2));
            assert_ne!(a.get(m, 1), b.get(m, 1));
        }
    }

    #[test]
    fn scalar_hand_evaluation() {
        // M=2, F=1, L=1
        let s = state(&[vec![0.5, 0.25], vec![0.75, 1.0]]);
        let mut w = ActorWeights::zeros(2, 1, 1);
        w.h1[(0, 0, 0)] = 0.4;
        w.h1[(1, 0, 0)] = -0.6;
        w.h2[(0, 0, 0)] = 1.5;
        w.h2[(1, 0, 0)] = -0.8;
        w.h3[(0, 0, 0)] = 0.3;
        w.h3[(1, 0, 0)] = -0.7;
        w.h3[(0, 1, 0)] = 0.9;
        w.h3[(1, 1, 0)] = 0.2;
        let sg = |x: f64| 1.0 / (1.0 + (-x).exp());
        let a1_0 = sg(0.4 * 0.5 - 0.6 * 0.25);
        let a1_1 = sg(0.4 * 0.75 - 0.6 * 1.0);
        let a2_0 = sg(1.5 * a1_0);
        let a2_1 = sg(-0.8 * a1_1);
        let p0 = 3.0 * sg(0.3 * a2_0 - 0.7 * a2_1);
        let p1 = 3.0 * sg(0.9 * a2_0 + 0.2 * a2_1);
        let (alloc, trace) = forward(&s, &w, 3.0).unwrap();
        assert!((alloc.get(0, 0) - p0).abs() < 1e-14);
        assert!((alloc.get(1, 0) - p1).abs() < 1e-14);
        for (i, o) in trace.h3i.as_slice().iter().zip(trace.h3o.as_slice()) {
            assert_eq!(sigmoid(*i), *o);
        }
    }

    #[test]
    fn rejects_wrong_state_size() {
        let s = state(&[vec![0.1]]);
        assert!(matches!(
            forward(&s, &ActorWeights::zeros(2, 1, 1), 1.0),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
