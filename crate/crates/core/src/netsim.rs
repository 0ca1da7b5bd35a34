//! Dense small-cell downlink simulator.
//!
//! Small base stations (SBSs) sit on a regular grid and serve users with
//! frame-static path-loss channels. All SBSs share the band, so every other
//! transmitter in a subframe is an interferer. A frame has `L` subframes and a
//! [`PowerAllocation`] fixes one transmit power per (SBS, subframe).
//!
//! Energy efficiency is total user throughput over total power-model
//! consumption. [`grad_ee`] differentiates it analytically with respect to
//! every transmit power.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Thermal noise power spectral density at room temperature.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

/// Random stream used for user placement and shadowing.
pub(crate) const TOPOLOGY_STREAM: u64 = 0;

pub type Point = [f64; 2];

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Scenario parameters. Defaults follow the dense-grid evaluation setup.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub grid_side: usize,
    pub sbs_spacing_m: f64,
    pub num_users: usize,
    pub max_power_dbm: f64,
    pub system_bandwidth_hz: f64,
    /// Subframes per frame.
    pub frame_len: usize,
    pub subframe_dur_s: f64,
    /// Amplifier slope of the linear power model.
    pub delta_p: f64,
    /// Circuit power in watts.
    pub p0_w: f64,
    pub noise_figure_db: f64,
    /// Per-user rate requirement in bit/s.
    pub rate_req_bps: f64,
    /// Log-normal shadowing standard deviation; `None` disables shadowing.
    pub shadowing_std_db: Option<f64>,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            grid_side: 5,
            sbs_spacing_m: 50.0,
            num_users: 100,
            max_power_dbm: 30.0,
            system_bandwidth_hz: 1e7,
            frame_len: 10,
            subframe_dur_s: 1e-3,
            delta_p: 4.0,
            p0_w: 6.8,
            noise_figure_db: 9.0,
            rate_req_bps: 1e6,
            shadowing_std_db: None,
            rng_seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn num_sbs(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn p_max_w(&self) -> f64 {
        dbm_to_watts(self.max_power_dbm)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidScenario(msg.to_owned()));
        if self.grid_side == 0 {
            return fail("grid_side must be at least 1");
        }
        if self.num_users == 0 {
            return fail("num_users must be at least 1");
        }
        if self.frame_len == 0 {
            return fail("frame_len must be at least 1");
        }
        if !self.max_power_dbm.is_finite() {
            return fail("max_power_dbm must be finite");
        }
        if !(self.delta_p > 0.0 && self.delta_p.is_finite()) {
            return fail("delta_p must be positive");
        }
        if !(self.p0_w >= 0.0 && self.p0_w.is_finite()) {
            return fail("p0_w must be non-negative");
        }
        if !(self.system_bandwidth_hz > 0.0 && self.system_bandwidth_hz.is_finite()) {
            return fail("system bandwidth must be positive");
        }
        if !(self.sbs_spacing_m > 0.0 && self.sbs_spacing_m.is_finite()) {
            return fail("sbs_spacing_m must be positive");
        }
        if !(self.subframe_dur_s > 0.0) {
            return fail("subframe_dur_s must be positive");
        }
        if !(self.rate_req_bps >= 0.0 && self.rate_req_bps.is_finite()) {
            return fail("rate_req_bps must be non-negative");
        }
        if !self.noise_figure_db.is_finite() {
            return fail("noise_figure_db must be finite");
        }
        if let Some(s) = self.shadowing_std_db {
            if !(s >= 0.0 && s.is_finite()) {
                return fail("shadowing_std_db must be non-negative");
            }
        }
        Ok(())
    }

    pub fn radio_params(&self) -> RadioParams {
        RadioParams {
            p_max_w: self.p_max_w(),
            delta_p: self.delta_p,
            p0_w: self.p0_w,
            system_bandwidth_hz: self.system_bandwidth_hz,
            frame_len: self.frame_len,
            rate_req_bps: self.rate_req_bps,
        }
    }
}

/// The subset of scenario parameters needed to score an allocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RadioParams {
    pub p_max_w: f64,
    pub delta_p: f64,
    pub p0_w: f64,
    pub system_bandwidth_hz: f64,
    pub frame_len: usize,
    pub rate_req_bps: f64,
}

impl RadioParams {
    /// Consumption `delta_p * p + p0` of one SBS in one subframe.
    pub fn power_consumption(&self, p: f64) -> Result<f64> {
        if !(0.0..=self.p_max_w).contains(&p) {
            return Err(Error::PowerOutOfRange {
                sbs: 0,
                subframe: 0,
                value: p,
                p_max: self.p_max_w,
            });
        }
        Ok(self.delta_p * p + self.p0_w)
    }
}

/// Path loss in dB for a distance in meters: `140.7 + 26.7 log10(d_km)`.
/// Distances below 1 m are clamped to 1 m.
pub fn path_loss_db(distance_m: f64) -> f64 {
    let d_km = distance_m.max(1.0) / 1000.0;
    140.7 + 26.7 * d_km.log10()
}

pub fn db_to_linear_gain(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Deployed network: SBS and user positions, association and channel gains.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    grid_side: Option<usize>,
    sbs_positions: Vec<Point>,
    user_positions: Vec<Point>,
    association: Vec<usize>,
    /// M x N linear channel gains.
    gains: Matrix,
    noise_w: Vec<f64>,
    user_bandwidth_hz: Vec<f64>,
    cell_sizes: Vec<usize>,
    params: RadioParams,
}

impl Topology {
    /// Assembles a topology from explicit parts. The per-user bandwidth is
    /// the system bandwidth split equally among the users of each cell.
    pub fn from_parts(
        sbs_positions: Vec<Point>,
        user_positions: Vec<Point>,
        association: Vec<usize>,
        gains: Matrix,
        noise_w: Vec<f64>,
        params: RadioParams,
    ) -> Result<Self> {
        let m = sbs_positions.len();
        let n = user_positions.len();
        let bad = |msg: String| Err(Error::InvalidTopology(msg));
        if m == 0 || n == 0 {
            return bad("topology needs at least one SBS and one user".into());
        }
        if association.len() != n || noise_w.len() != n {
            return bad(format!(
                "association ({}) and noise ({}) must have one entry per user ({n})",
                association.len(),
                noise_w.len()
            ));
        }
        if gains.shape() != (m, n) {
            return bad(format!("gain matrix is {:?}, expected ({m}, {n})", gains.shape()));
        }
        if let Some(&a) = association.iter().find(|&&a| a >= m) {
            return bad(format!("user associated to unknown SBS {a}"));
        }
        if !gains.as_slice().iter().all(|&g| g > 0.0 && g.is_finite()) {
            return bad("channel gains must be strictly positive and finite".into());
        }
        if !noise_w.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return bad("noise power must be strictly positive".into());
        }
        if params.frame_len == 0 || !(params.p_max_w > 0.0) || !(params.system_bandwidth_hz >= 0.0) {
            return bad("radio parameters out of range".into());
        }
        let mut cell_sizes = vec![0usize; m];
        for &a in &association {
            cell_sizes[a] += 1;
        }
        let user_bandwidth_hz = association
            .iter()
            .map(|&a| params.system_bandwidth_hz / cell_sizes[a] as f64)
            .collect();
        Ok(Self {
            grid_side: None,
            sbs_positions,
            user_positions,
            association,
            gains,
            noise_w,
            user_bandwidth_hz,
            cell_sizes,
            params,
        })
    }

    pub fn num_sbs(&self) -> usize {
        self.sbs_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn frame_len(&self) -> usize {
        self.params.frame_len
    }

    /// Side length when the SBSs form a square grid indexed row-major.
    pub fn grid_side(&self) -> Option<usize> {
        self.grid_side
    }

    pub fn sbs_positions(&self) -> &[Point] {
        &self.sbs_positions
    }

    pub fn user_positions(&self) -> &[Point] {
        &self.user_positions
    }

    pub fn association(&self) -> &[usize] {
        &self.association
    }

    pub fn serving_sbs(&self, user: usize) -> usize {
        self.association[user]
    }

    pub fn gain(&self, sbs: usize, user: usize) -> f64 {
        self.gains[(sbs, user)]
    }

    pub fn gains(&self) -> &Matrix {
        &self.gains
    }

    pub fn noise_w(&self, user: usize) -> f64 {
        self.noise_w[user]
    }

    pub fn user_bandwidth_hz(&self, user: usize) -> f64 {
        self.user_bandwidth_hz[user]
    }

    pub fn cell_size(&self, sbs: usize) -> usize {
        self.cell_sizes[sbs]
    }

    pub fn users_in_cell(&self, sbs: usize) -> impl Iterator<Item = usize> + '_ {
        self.association
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a == sbs)
            .map(|(n, _)| n)
    }

    pub fn params(&self) -> &RadioParams {
        &self.params
    }

    pub fn p_max_w(&self) -> f64 {
        self.params.p_max_w
    }

    /// Relabels SBSs so that old SBS `perm[i]` becomes new SBS `i`.
    /// Users keep their indices; the grid layout is dropped.
    pub fn permute_sbs(&self, perm: &[usize]) -> Result<Topology> {
        let m = self.num_sbs();
        check_permutation(perm, m)?;
        let mut inverse = vec![0; m];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let n = self.num_users();
        let mut gains = Matrix::zeros(m, n);
        for (new, &old) in perm.iter().enumerate() {
            for u in 0..n {
                gains[(new, u)] = self.gains[(old, u)];
            }
        }
        Topology::from_parts(
            perm.iter().map(|&old| self.sbs_positions[old]).collect(),
            self.user_positions.clone(),
            self.association.iter().map(|&a| inverse[a]).collect(),
            gains,
            self.noise_w.clone(),
            self.params.clone(),
        )
    }
}

pub(crate) fn check_permutation(perm: &[usize], m: usize) -> Result<()> {
    let mut seen = vec![false; m];
    if perm.len() != m || perm.iter().any(|&p| p >= m || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::DimensionMismatch(format!(
            "{perm:?} is not a permutation of 0..{m}"
        )));
    }
    Ok(())
}

/// Regular `side x side` grid; SBS `row * side + col` sits at `(row * s, col * s)`.
pub fn grid_sites(side: usize, spacing_m: f64) -> Vec<Point> {
    (0..side)
        .flat_map(|r| (0..side).map(move |c| [r as f64 * spacing_m, c as f64 * spacing_m]))
        .collect()
}

/// Builds the grid deployment described by `cfg`.
pub fn build_topology(cfg: &ScenarioConfig) -> Result<Topology> {
    cfg.validate()?;
    let mut top = build_topology_with_sites(cfg, grid_sites(cfg.grid_side, cfg.sbs_spacing_m))?;
    top.grid_side = Some(cfg.grid_side);
    Ok(top)
}

/// Deploys `cfg.num_users` users around arbitrary SBS sites. Users are drawn
/// uniformly in the sites' bounding box grown by half a spacing and attach to
/// the SBS with the strongest channel.
pub fn build_topology_with_sites(cfg: &ScenarioConfig, sites: Vec<Point>) -> Result<Topology> {
    cfg.validate()?;
    if sites.is_empty() {
        return Err(Error::InvalidScenario("no SBS sites".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(TOPOLOGY_STREAM);

    let margin = cfg.sbs_spacing_m / 2.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for s in &sites {
        for d in 0..2 {
            lo[d] = lo[d].min(s[d] - margin);
            hi[d] = hi[d].max(s[d] + margin);
        }
    }
    let users: Vec<Point> = (0..cfg.num_users)
        .map(|_| [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])])
        .collect();

    let m = sites.len();
    let n = users.len();
    let shadowing = match cfg.shadowing_std_db {
        Some(std) if std > 0.0 => {
            Some(Normal::new(0.0, std).map_err(|e| Error::InvalidScenario(e.to_string()))?)
        }
        _ => None,
    };
    let mut gains = Matrix::zeros(m, n);
    for (k, site) in sites.iter().enumerate() {
        for (u, user) in users.iter().enumerate() {
            let mut loss = path_loss_db(distance(*site, *user));
            if let Some(dist) = &shadowing {
                loss += dist.sample(&mut rng);
            }
            gains[(k, u)] = db_to_linear_gain(loss);
        }
    }

    let association: Vec<usize> = (0..n)
        .map(|u| {
            (0..m).fold(0, |best, k| if gains[(k, u)] > gains[(best, u)] { k } else { best })
        })
        .collect();

    let mut cell_sizes = vec![0usize; m];
    for &a in &association {
        cell_sizes[a] += 1;
    }
    let noise_w = association
        .iter()
        .map(|&a| {
            let bw = cfg.system_bandwidth_hz / cell_sizes[a] as f64;
            dbm_to_watts(THERMAL_NOISE_DBM_PER_HZ + 10.0 * bw.log10() + cfg.noise_figure_db)
        })
        .collect();

    Topology::from_parts(sites, users, association, gains, noise_w, cfg.radio_params())
}

/// Transmit power of every SBS in every subframe, in watts.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerAllocation {
    p: Matrix,
}

impl PowerAllocation {
    /// Validates `0 <= p <= p_max` entrywise.
    pub fn new(p: Matrix, p_max: f64) -> Result<Self> {
        for m in 0..p.rows() {
            for l in 0..p.cols() {
                let v = p[(m, l)];
                if !(0.0..=p_max).contains(&v) {
                    return Err(Error::PowerOutOfRange {
                        sbs: m,
                        subframe: l,
                        value: v,
                        p_max,
                    });
                }
            }
        }
        Ok(Self { p })
    }

    pub fn constant(num_sbs: usize, frame_len: usize, watts: f64) -> Self {
        Self {
            p: Matrix::filled(num_sbs, frame_len, watts),
        }
    }

    pub fn num_sbs(&self) -> usize {
        self.p.rows()
    }

    pub fn frame_len(&self) -> usize {
        self.p.cols()
    }

    pub fn get(&self, sbs: usize, subframe: usize) -> f64 {
        self.p[(sbs, subframe)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn into_matrix(self) -> Matrix {
        self.p
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_sbs(&self, perm: &[usize]) -> Result<PowerAllocation> {
        check_permutation(perm, self.num_sbs())?;
        let l = self.frame_len();
        let mut p = Matrix::zeros(self.num_sbs(), l);
        for (new, &old) in perm.iter().enumerate() {
            for s in 0..l {
                p[(new, s)] = self.p[(old, s)];
            }
        }
        Ok(Self { p })
    }
}

/// Per-frame performance of one allocation.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetrics {
    pub user_rates: Vec<f64>,
    /// Sum of user rates, bit/s.
    pub throughput: f64,
    /// Power-model consumption summed over SBSs and subframes, W.
    pub total_power: f64,
    /// Energy efficiency: throughput over total power.
    pub eta: f64,
    /// Users below the rate requirement.
    pub violations: usize,
}

fn check_dims(top: &Topology, alloc: &PowerAllocation) -> Result<()> {
    if alloc.num_sbs() != top.num_sbs() || alloc.frame_len() != top.frame_len() {
        return Err(Error::DimensionMismatch(format!(
            "allocation is {}x{}, topology needs {}x{}",
            alloc.num_sbs(),
            alloc.frame_len(),
            top.num_sbs(),
            top.frame_len()
        )));
    }
    Ok(())
}

/// Interference-plus-noise seen by `user` in `subframe` when served by `sbs`.
#[inline]
fn interference_plus_noise(top: &Topology, alloc: &PowerAllocation, sbs: usize, user: usize, subframe: usize) -> f64 {
    let mut d = top.noise_w[user];
    for k in 0..top.num_sbs() {
        if k != sbs {
            d += alloc.get(k, subframe) * top.gains[(k, user)];
        }
    }
    d
}

/// SINR of `user` served by `sbs` in `subframe`.
pub fn sinr(top: &Topology, alloc: &PowerAllocation, sbs: usize, user: usize, subframe: usize) -> f64 {
    alloc.get(sbs, subframe) * top.gains[(sbs, user)]
        / interference_plus_noise(top, alloc, sbs, user, subframe)
}

/// Frame-average Shannon rate of `user` in bit/s.
pub fn user_rate(top: &Topology, alloc: &PowerAllocation, user: usize) -> f64 {
    let m = top.serving_sbs(user);
    let l = top.frame_len();
    let acc: f64 = (0..l)
        .map(|s| (1.0 + sinr(top, alloc, m, user, s)).log2())
        .sum();
    top.user_bandwidth_hz[user] * acc / l as f64
}

/// Consumption of one SBS in one subframe; see [`RadioParams::power_consumption`].
pub fn power_consumption(params: &RadioParams, p: f64) -> Result<f64> {
    params.power_consumption(p)
}

fn total_power(top: &Topology, alloc: &PowerAllocation) -> f64 {
    let params = &top.params;
    alloc
        .matrix()
        .as_slice()
        .iter()
        .map(|&p| params.delta_p * p + params.p0_w)
        .sum()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Scores an allocation: user rates, throughput, consumption, efficiency and
/// the number of users whose rate requirement is missed.
pub fn evaluate(top: &Topology, alloc: &PowerAllocation) -> Result<FrameMetrics> {
    check_dims(top, alloc)?;
    let user_rates: Vec<f64> = (0..top.num_users()).map(|n| user_rate(top, alloc, n)).collect();
    let throughput = user_rates.iter().sum();
    let total_power = total_power(top, alloc);
    let violations = user_rates
        .iter()
        .filter(|&&r| r < top.params.rate_req_bps)
        .count();
    Ok(FrameMetrics {
        eta: ratio(throughput, total_power),
        user_rates,
        throughput,
        total_power,
        violations,
    })
}

/// Gradient of `sum_n w_n R_n` with respect to every transmit power.
pub(crate) fn weighted_throughput_grad(
    top: &Topology,
    alloc: &PowerAllocation,
    user_weights: &[f64],
) -> Matrix {
    let (m_count, l_count) = (top.num_sbs(), top.frame_len());
    let mut grad = Matrix::zeros(m_count, l_count);
    let inv = 1.0 / (l_count as f64 * std::f64::consts::LN_2);
    for (n, &w) in user_weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let m = top.serving_sbs(n);
        let scale = w * top.user_bandwidth_hz[n] * inv;
        if scale == 0.0 {
            continue;
        }
        let g_own = top.gains[(m, n)];
        for l in 0..l_count {
            let denom = interference_plus_noise(top, alloc, m, n, l);
            let signal = alloc.get(m, l) * g_own;
            // d/dx ln(1 + x) with x = signal / denom
            let c = scale / (1.0 + signal / denom);
            grad[(m, l)] += c * g_own / denom;
            let cross = -c * signal / (denom * denom);
            for k in 0..m_count {
                if k != m {
                    grad[(k, l)] += cross * top.gains[(k, n)];
                }
            }
        }
    }
    grad
}

/// Analytic gradient of the energy efficiency with respect to `P[m][l]`.
pub fn grad_ee(top: &Topology, alloc: &PowerAllocation) -> Result<Matrix> {
    check_dims(top, alloc)?;
    let ones = vec![1.0; top.num_users()];
    let dt = weighted_throughput_grad(top, alloc, &ones);
    let throughput: f64 = (0..top.num_users()).map(|n| user_rate(top, alloc, n)).sum();
    Ok(quotient_grad(top, alloc, dt, throughput))
}

/// `d(T / E)/dP` given `dT/dP` and `T`, with `E` the power-model total.
pub(crate) fn quotient_grad(top: &Topology, alloc: &PowerAllocation, dt: Matrix, numerator: f64) -> Matrix {
    let e = total_power(top, alloc);
    let dp = top.params.delta_p;
    if e <= 0.0 {
        return Matrix::zeros(dt.rows(), dt.cols());
    }
    let e2 = e * e;
    dt.map(|d| (d * e - numerator * dp) / e2)
}

/// Fourth-order central-difference estimate of [`grad_ee`]. Entries closer
/// than `2 * step` to a bound are differenced about the nearest admissible
/// point instead.
pub fn grad_ee_numeric(top: &Topology, alloc: &PowerAllocation, step: f64) -> Result<Matrix> {
    check_dims(top, alloc)?;
    let p_max = top.p_max_w();
    let mut grad = Matrix::zeros(alloc.num_sbs(), alloc.frame_len());
    let mut work = alloc.clone();
    for m in 0..alloc.num_sbs() {
        for l in 0..alloc.frame_len() {
            let x = alloc.get(m, l);
            let center = x.clamp(2.0 * step, (p_max - 2.0 * step).max(2.0 * step));
            let mut at = |offset: f64| -> Result<f64> {
                work.p[(m, l)] = center + offset;
                Ok(evaluate(top, &work)?.eta)
            };
            let (p1, m1) = (at(step)?, at(-step)?);
            let (p2, m2) = (at(2.0 * step)?, at(-2.0 * step)?);
            work.p[(m, l)] = x;
            grad[(m, l)] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
        }
    }
    Ok(grad)
}
