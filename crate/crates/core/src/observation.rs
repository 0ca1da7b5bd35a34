//! Per-SBS partial observations and the M x M state matrix.
//!
//! Row `m` of the state describes SBS `m`: the diagonal entry is the summed
//! rate requirement of its users (the cell load), and entry `k != m` is the
//! power its users receive from SBS `k`. Interference is measured on
//! reference signals sent at maximum power, so the state does not depend on
//! the previous allocation.

use crate::error::{Error, Result};
use crate::netsim::Topology;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct PartialObservation {
    pub sbs: usize,
    pub rho: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateMatrix {
    s: Matrix,
}

impl StateMatrix {
    pub fn from_matrix(s: Matrix) -> Result<Self> {
        if s.rows() != s.cols() {
            return Err(Error::DimensionMismatch(format!(
                "state must be square, got {:?}",
                s.shape()
            )));
        }
        Ok(Self { s })
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.s[(row, col)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.s
    }
}

pub fn partial_observation(top: &Topology, sbs: usize) -> PartialObservation {
    let m_count = top.num_sbs();
    let p_ref = top.p_max_w();
    let mut rho = vec![0.0; m_count];
    for n in top.users_in_cell(sbs) {
        for (k, slot) in rho.iter_mut().enumerate() {
            if k == sbs {
                *slot += top.params().rate_req_bps;
            } else {
                *slot += p_ref * top.gain(k, n);
            }
        }
    }
    PartialObservation { sbs, rho }
}

/// Stacks the partial observations row by row, ordered by SBS index.
pub fn assemble_state(partials: &[PartialObservation]) -> Result<StateMatrix> {
    let m = partials.len();
    let mut s = Matrix::zeros(m, m);
    let mut seen = vec![false; m];
    for p in partials {
        if p.rho.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "partial observation of SBS {} has {} entries, expected {m}",
                p.sbs,
                p.rho.len()
            )));
        }
        if p.sbs >= m || std::mem::replace(&mut seen[p.sbs], true) {
            return Err(Error::DimensionMismatch(format!(
                "SBS index {} is out of range or repeated",
                p.sbs
            )));
        }
        for (k, &v) in p.rho.iter().enumerate() {
            s[(p.sbs, k)] = v;
        }
    }
    Ok(StateMatrix { s })
}

/// Constants of the `[0, 1]` rescaling applied before the actor.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    /// Load mapped to 1.0 on the diagonal.
    pub load_ref_bps: f64,
    /// Interference mapped to 0.0.
    pub floor_dbm: f64,
    /// Interference mapped to 1.0.
    pub ceil_dbm: f64,
}

impl Normalization {
    /// `load_ref` is the largest cell's total rate requirement.
    pub fn for_topology(top: &Topology) -> Self {
        let biggest = (0..top.num_sbs()).map(|m| top.cell_size(m)).max().unwrap_or(1).max(1);
        Self {
            load_ref_bps: biggest as f64 * top.params().rate_req_bps,
            floor_dbm: -120.0,
            ceil_dbm: 0.0,
        }
    }

    pub fn interference(&self, watts: f64) -> f64 {
        if watts <= 0.0 {
            return 0.0;
        }
        let dbm = 10.0 * (watts / 1e-3).log10();
        ((dbm - self.floor_dbm) / (self.ceil_dbm - self.floor_dbm)).clamp(0.0, 1.0)
    }

    pub fn load(&self, bps: f64) -> f64 {
        if self.load_ref_bps > 0.0 {
            (bps / self.load_ref_bps).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

pub fn normalize_state(s: &StateMatrix, norm: &Normalization) -> StateMatrix {
    let m = s.dim();
    let mut out = Matrix::zeros(m, m);
    for r in 0..m {
        for c in 0..m {
            let v = s.get(r, c);
            out[(r, c)] = if r == c { norm.load(v) } else { norm.interference(v) };
        }
    }
    StateMatrix { s: out }
}

/// Observe, assemble and normalize in one step.
pub fn observe(top: &Topology) -> StateMatrix {
    let partials: Vec<_> = (0..top.num_sbs()).map(|m| partial_observation(top, m)).collect();
    let raw = assemble_state(&partials).expect("partials come from one topology");
    normalize_state(&raw, &Normalization::for_topology(top))
}
