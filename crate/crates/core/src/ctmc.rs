//! Exact event-driven simulation of the prelimit occupancy process.
//!
//! State is the occupancy vector on the `1/n` lattice, kept as integer
//! counts `s_i = n * G_i` = number of queues with at least `i` jobs. The
//! instantaneous rates are
//!
//! * coordinate `i` goes up by `1/n` at rate `n lambda (beta(G_{i-1}) -
//!   beta(G_i))` with `G_0 = 1` (an arrival whose sampled minimum has
//!   exactly `i-1` jobs), and
//! * coordinate `i` goes down by `1/n` at rate `n (G_i - G_{i+1})`
//!   (service completion at a queue of length exactly `i`).
//!
//! Every path carries its event bookkeeping: per-level arrival/departure
//! counts (the occupancy identity `G_i(t) = G_i(0) - D_i(t)/n + A_i(t)/n`
//! holds exactly in integers), exact piecewise-constant rate integrals, the
//! realized martingale parts and their predictable quadratic variation.
//!
//! A direct per-queue backend (sample `d` distinct queues, join a shortest
//! one) produces the same occupancy law and is kept for cross-validation,
//! along with a generator-matrix oracle for tiny systems.

use crate::choice::beta_lattice;
use crate::fixed_point::{mu_sequence, NearFixedPoint, DEFAULT_FLOOR};
use crate::path::{uniform_grid, SampledPath};
use crate::rng::Streams;
use crate::{Error, Result, SystemParams};
use serde::Serialize;

/// Occupancy counts on the lattice: `counts[i]` queues have `>= i+1` jobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Occupancy {
    pub n: u64,
    counts: Vec<u64>,
}

impl Occupancy {
    pub fn from_counts(n: u64, mut counts: Vec<u64>) -> Result<Self> {
        while counts.last() == Some(&0) {
            counts.pop();
        }
        if counts.iter().any(|&c| c > n) {
            return Err(Error::InvalidParams("occupancy count exceeds n".into()));
        }
        if counts.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParams(
                "occupancy counts must be nonincreasing".into(),
            ));
        }
        Ok(Occupancy { n, counts })
    }

    /// Rounds fractions to the `1/n` lattice, then restores monotonicity
    /// with a backward running-max pass.
    pub fn from_fractions(n: u64, g: &[f64]) -> Result<Self> {
        if g.iter().any(|&v| !(-1e-9..=1.0 + 1e-9).contains(&v)) {
            return Err(Error::InvalidParams(
                "occupancy fractions must lie in [0,1]".into(),
            ));
        }
        let mut counts: Vec<u64> = g
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * n as f64).round() as u64)
            .collect();
        let mut run_max = 0u64;
        for c in counts.iter_mut().rev() {
            run_max = (*c).max(run_max);
            *c = run_max;
        }
        Occupancy::from_counts(n, counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn levels(&self) -> usize {
        self.counts.len()
    }

    pub fn total_jobs(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.n as f64)
            .collect()
    }
}

/// Initial condition for a run, rounded onto the lattice.
#[derive(Debug, Clone, Serialize)]
pub enum InitSpec {
    Empty,
    FluidPoint { k: usize, gamma_coeff: f64 },
    NearMu,
    Explicit(Vec<f64>),
}

impl InitSpec {
    pub fn resolve(&self, params: &SystemParams) -> Result<Occupancy> {
        match self {
            InitSpec::Empty => Occupancy::from_counts(params.n, Vec::new()),
            InitSpec::FluidPoint { k, gamma_coeff } => {
                let f = crate::fixed_point::FluidFixedPoint::new(*k, *gamma_coeff)?;
                Occupancy::from_fractions(params.n, &f.vector(*k + 1))
            }
            InitSpec::NearMu => {
                let mu = mu_sequence(params, DEFAULT_FLOOR)?;
                Occupancy::from_fractions(params.n, mu.as_slice())
            }
            InitSpec::Explicit(g) => Occupancy::from_fractions(params.n, g),
        }
    }
}

/// Simulation backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Backend {
    /// Occupancy-vector state, O(active levels) per event. Primary engine.
    Occupancy,
    /// One length per queue; samples `d` queues per arrival. Cross-check.
    PerQueue,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub t_end: f64,
    pub grid_dt: f64,
    pub seed: u64,
    pub replicate: u64,
    /// Number of coordinates emitted in the output path. Internal state
    /// grows beyond it as needed.
    pub coords: usize,
}

/// Per-level event bookkeeping of one completed path.
#[derive(Debug, Clone, Serialize)]
pub struct EventLog {
    /// Arrival counts per level at `t_end` (full internal state length).
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    /// `lambda * integral of (beta(G_{i-1}) - beta(G_i))` at `t_end`.
    pub integrated_arrival_rate: Vec<f64>,
    /// `integral of (G_i - G_{i+1})` at `t_end`.
    pub integrated_departure_rate: Vec<f64>,
    /// Arrival counts per tracked level at each grid time.
    pub arrivals_grid: Vec<Vec<u64>>,
    pub departures_grid: Vec<Vec<u64>>,
    /// Total jobs in the system at each grid time.
    pub jobs_grid: Vec<u64>,
    pub initial_jobs: u64,
    pub total_arrivals: u64,
    pub total_departures: u64,
    pub final_jobs: u64,
}

/// Realized martingale diagnostics of one path.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleDiag {
    /// `M_i = (A_i - D_i)/n - (compensators)` on the grid, tracked coords.
    pub mart: SampledPath,
    /// Predictable quadratic variation on the grid, tracked coords.
    pub qv: SampledPath,
    /// Exact `sup_{t <= t_end} sum_i M_i(t)^2` over all coordinates
    /// (the supremum of a piecewise-quadratic is attained at interval
    /// endpoints, which are all checked).
    pub sup_mart_l2_sq: f64,
    pub lambda: f64,
    pub n: u64,
    pub t_end: f64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// `G` over coordinates `1..=coords` on the grid.
    pub path: SampledPath,
    pub events: EventLog,
    pub martingale: MartingaleDiag,
}

/// Lazily filled `beta` values on the count lattice.
struct BetaCache {
    n: u64,
    d: u64,
    vals: Vec<f64>,
}

impl BetaCache {
    fn new(n: u64, d: u64) -> Self {
        BetaCache {
            n,
            d,
            vals: vec![f64::NAN; (n + 1) as usize],
        }
    }

    fn get(&mut self, s: u64) -> f64 {
        let v = self.vals[s as usize];
        if v.is_nan() {
            let b = beta_lattice(self.n, self.d, s);
            self.vals[s as usize] = b;
            b
        } else {
            v
        }
    }
}

/// Shared bookkeeping core: both backends feed their event sequence through
/// this, so grid sampling, logs and martingale diagnostics are identical.
struct Bookkeeper<'a> {
    params: SystemParams,
    grid: &'a [f64],
    coords: usize,
    beta: BetaCache,
    t: f64,
    grid_pos: usize,
    s: Vec<u64>,
    arrivals: Vec<u64>,
    departures: Vec<u64>,
    ia: Vec<f64>,
    id: Vec<f64>,
    /// current martingale values per level
    m: Vec<f64>,
    sup_m2: f64,
    jobs: u64,
    total_arr: u64,
    total_dep: u64,
    // grid outputs
    g_rows: Vec<Vec<f64>>,
    m_rows: Vec<Vec<f64>>,
    qv_rows: Vec<Vec<f64>>,
    a_grid: Vec<Vec<u64>>,
    d_grid: Vec<Vec<u64>>,
    jobs_grid: Vec<u64>,
}

impl<'a> Bookkeeper<'a> {
    fn new(params: SystemParams, init: &Occupancy, grid: &'a [f64], coords: usize) -> Self {
        let len = init.levels() + 1;
        let npts = grid.len();
        Bookkeeper {
            params,
            grid,
            coords,
            beta: BetaCache::new(params.n, params.d),
            t: 0.0,
            grid_pos: 0,
            s: init.counts().to_vec(),
            arrivals: vec![0; len],
            departures: vec![0; len],
            ia: vec![0.0; len],
            id: vec![0.0; len],
            m: vec![0.0; len],
            sup_m2: 0.0,
            jobs: init.total_jobs(),
            total_arr: 0,
            total_dep: 0,
            g_rows: vec![Vec::with_capacity(npts); coords],
            m_rows: vec![Vec::with_capacity(npts); coords],
            qv_rows: vec![Vec::with_capacity(npts); coords],
            a_grid: vec![Vec::with_capacity(npts); coords],
            d_grid: vec![Vec::with_capacity(npts); coords],
            jobs_grid: Vec::with_capacity(npts),
        }
    }

    fn busy(&self) -> u64 {
        self.s.first().copied().unwrap_or(0)
    }

    fn count(&self, level: usize) -> u64 {
        if level == 0 {
            self.params.n
        } else if level <= self.s.len() {
            self.s[level - 1]
        } else {
            0
        }
    }

    fn ensure_level(&mut self, level: usize) {
        while self.s.len() < level {
            self.s.push(0);
        }
        let need = self.s.len() + 1;
        for v in [&mut self.arrivals, &mut self.departures] {
            v.resize(need, 0);
        }
        for v in [&mut self.ia, &mut self.id, &mut self.m] {
            v.resize(need, 0.0);
        }
    }

    /// Per-capita arrival rate into level `i` (1-based).
    fn arr_rate(&mut self, i: usize) -> f64 {
        let prev = self.count(i - 1);
        let cur = self.count(i);
        self.params.lambda * (self.beta.get(prev) - self.beta.get(cur))
    }

    /// Per-capita departure rate at level `i` (1-based).
    fn dep_rate(&self, i: usize) -> f64 {
        (self.count(i) - self.count(i + 1)) as f64 / self.params.n as f64
    }

    /// Advances compensators and grid output to `t_next` (no state change),
    /// then records the pre-jump martingale supremum.
    fn advance_time(&mut self, t_next: f64) {
        let levels = self.m.len();
        let mut arr = Vec::with_capacity(levels);
        let mut dep = Vec::with_capacity(levels);
        for i in 1..=levels {
            arr.push(self.arr_rate(i));
            dep.push(self.dep_rate(i));
        }
        // emit grid points in [t, t_next)
        while self.grid_pos < self.grid.len() && self.grid[self.grid_pos] < t_next {
            let g = self.grid[self.grid_pos];
            let el = g - self.t;
            let nf = self.params.n as f64;
            for c in 0..self.coords {
                let level = c + 1;
                let frac = self.count(level) as f64 / nf;
                self.g_rows[c].push(frac);
                let (mi, qvi) = if level <= levels {
                    let i = level - 1;
                    (
                        self.m[i] - (arr[i] - dep[i]) * el,
                        (self.ia[i] + arr[i] * el + self.id[i] + dep[i] * el) / nf,
                    )
                } else {
                    (0.0, 0.0)
                };
                self.m_rows[c].push(mi);
                self.qv_rows[c].push(qvi);
                self.a_grid[c].push(*self.arrivals.get(level - 1).unwrap_or(&0));
                self.d_grid[c].push(*self.departures.get(level - 1).unwrap_or(&0));
            }
            self.jobs_grid.push(self.jobs);
            self.grid_pos += 1;
        }
        // integrate compensators over the full interval
        let dt = t_next - self.t;
        let mut m2 = 0.0;
        for i in 0..levels {
            self.ia[i] += arr[i] * dt;
            self.id[i] += dep[i] * dt;
            self.m[i] -= (arr[i] - dep[i]) * dt;
            m2 += self.m[i] * self.m[i];
        }
        self.sup_m2 = self.sup_m2.max(m2);
        self.t = t_next;
    }

    fn apply_arrival(&mut self, level: usize) {
        self.ensure_level(level);
        debug_assert!(self.count(level) < self.count(level - 1));
        self.s[level - 1] += 1;
        self.arrivals[level - 1] += 1;
        self.jobs += 1;
        self.total_arr += 1;
        self.bump_mart(level - 1, 1.0);
    }

    fn apply_departure(&mut self, level: usize) {
        debug_assert!(self.count(level) > self.count(level + 1));
        self.s[level - 1] -= 1;
        self.departures[level - 1] += 1;
        self.jobs -= 1;
        self.total_dep += 1;
        self.bump_mart(level - 1, -1.0);
    }

    fn bump_mart(&mut self, idx: usize, sign: f64) {
        let old = self.m[idx];
        self.m[idx] = old + sign / self.params.n as f64;
        let mut m2 = 0.0;
        for v in &self.m {
            m2 += v * v;
        }
        self.sup_m2 = self.sup_m2.max(m2);
    }

    fn finish(mut self, init: &Occupancy, t_end: f64) -> Result<SimOutput> {
        self.advance_time(t_end);
        // a grid point exactly at t_end is emitted here (post-advance)
        while self.grid_pos < self.grid.len() {
            let nf = self.params.n as f64;
            for c in 0..self.coords {
                let level = c + 1;
                let frac = self.count(level) as f64 / nf;
                self.g_rows[c].push(frac);
                let (mi, qvi) = if level <= self.m.len() {
                    (
                        self.m[level - 1],
                        (self.ia[level - 1] + self.id[level - 1]) / nf,
                    )
                } else {
                    (0.0, 0.0)
                };
                self.m_rows[c].push(mi);
                self.qv_rows[c].push(qvi);
                self.a_grid[c].push(*self.arrivals.get(level - 1).unwrap_or(&0));
                self.d_grid[c].push(*self.departures.get(level - 1).unwrap_or(&0));
            }
            self.jobs_grid.push(self.jobs);
            self.grid_pos += 1;
        }

        let times = self.grid.to_vec();
        let path = SampledPath::new(times.clone(), self.g_rows)?;
        let mart = SampledPath::new(times.clone(), self.m_rows)?;
        let qv = SampledPath::new(times, self.qv_rows)?;
        Ok(SimOutput {
            path,
            events: EventLog {
                arrivals: self.arrivals,
                departures: self.departures,
                integrated_arrival_rate: self.ia,
                integrated_departure_rate: self.id,
                arrivals_grid: self.a_grid,
                departures_grid: self.d_grid,
                jobs_grid: self.jobs_grid,
                initial_jobs: init.total_jobs(),
                total_arrivals: self.total_arr,
                total_departures: self.total_dep,
                final_jobs: self.jobs,
            },
            martingale: MartingaleDiag {
                mart,
                qv,
                sup_mart_l2_sq: self.sup_m2,
                lambda: self.params.lambda,
                n: self.params.n,
                t_end,
            },
        })
    }
}

fn check_config(cfg: &SimConfig) -> Result<()> {
    if !(cfg.t_end > 0.0) {
        return Err(Error::InvalidParams(format!(
            "t_end must be positive, got {}",
            cfg.t_end
        )));
    }
    if cfg.coords == 0 {
        return Err(Error::InvalidParams("coords must be >= 1".into()));
    }
    Ok(())
}

/// Occupancy-rate backend: exact next-event simulation.
pub fn simulate_path(params: &SystemParams, init: &InitSpec, cfg: &SimConfig) -> Result<SimOutput> {
    check_config(cfg)?;
    let init = init.resolve(params)?;
    let grid = uniform_grid(cfg.t_end, cfg.grid_dt)?;
    let mut bk = Bookkeeper::new(*params, &init, &grid, cfg.coords);
    let mut rng = Streams::new(cfg.seed).replicate(cfg.replicate);
    let arrive_rate = params.n as f64 * params.lambda;

    loop {
        let busy = bk.busy() as f64;
        let total = arrive_rate + busy;
        if total <= 0.0 {
            break; // absorbed: empty system with no arrivals
        }
        let t_next = bk.t + rng.exponential(total);
        if t_next > cfg.t_end {
            break;
        }
        bk.advance_time(t_next);
        if rng.uniform() * total < arrive_rate {
            // arrival: level W with P(W > i) = beta(s_i)
            let v = 1.0 - rng.uniform(); // in (0, 1]
            let mut level = 1;
            loop {
                let s_i = bk.count(level);
                if bk.beta.get(s_i) < v {
                    break;
                }
                level += 1;
            }
            if params.d == params.n {
                // full JSQ: arrivals land exactly at the minimum level
                let m = bk.s.iter().take_while(|&&c| c == params.n).count();
                debug_assert_eq!(level, m + 1);
            }
            bk.apply_arrival(level);
        } else {
            // departure: level i with probability (s_i - s_{i+1}) / busy
            let target = rng.uniform() * busy;
            let mut acc = 0.0;
            let mut level = 1;
            loop {
                acc += (bk.count(level) - bk.count(level + 1)) as f64;
                if target < acc || level >= bk.s.len() {
                    break;
                }
                level += 1;
            }
            bk.apply_departure(level);
        }
    }
    bk.finish(&init, cfg.t_end)
}

/// Per-queue backend: same observable law, kept as a genuine redundancy.
pub fn per_queue_simulate(
    params: &SystemParams,
    init: &InitSpec,
    cfg: &SimConfig,
) -> Result<SimOutput> {
    check_config(cfg)?;
    let init = init.resolve(params)?;
    let grid = uniform_grid(cfg.t_end, cfg.grid_dt)?;
    let n = params.n as usize;

    // queue j gets length #{levels i with s_i > j}
    let mut queue_len: Vec<u32> = (0..n)
        .map(|j| {
            init.counts()
                .iter()
                .take_while(|&&c| c as usize > j)
                .count() as u32
        })
        .collect();

    let mut bk = Bookkeeper::new(*params, &init, &grid, cfg.coords);
    let mut rng = Streams::new(cfg.seed).replicate(cfg.replicate);
    let arrive_rate = params.n as f64 * params.lambda;
    let mut pool: Vec<usize> = (0..n).collect();
    let d = params.d as usize;

    loop {
        let busy = bk.busy() as f64;
        let total = arrive_rate + busy;
        if total <= 0.0 {
            break;
        }
        let t_next = bk.t + rng.exponential(total);
        if t_next > cfg.t_end {
            break;
        }
        bk.advance_time(t_next);
        if rng.uniform() * total < arrive_rate {
            // sample d distinct queues by a partial shuffle
            for i in 0..d {
                let j = i + (rng.uniform() * (n - i) as f64) as usize;
                pool.swap(i, j.min(n - 1));
            }
            let min_len = pool[..d].iter().map(|&q| queue_len[q]).min().unwrap();
            let ties: Vec<usize> = pool[..d]
                .iter()
                .copied()
                .filter(|&q| queue_len[q] == min_len)
                .collect();
            // uniform among sampled minima (occupancy law does not care)
            let pick = ties[(rng.uniform() * ties.len() as f64) as usize % ties.len()];
            queue_len[pick] += 1;
            bk.apply_arrival(queue_len[pick] as usize);
        } else {
            // uniform among busy queues
            let k = (rng.uniform() * busy) as usize;
            let mut seen = 0;
            let mut pick = usize::MAX;
            for (q, &len) in queue_len.iter().enumerate() {
                if len > 0 {
                    if seen == k {
                        pick = q;
                        break;
                    }
                    seen += 1;
                }
            }
            let level = queue_len[pick] as usize;
            queue_len[pick] -= 1;
            bk.apply_departure(level);
        }
    }
    bk.finish(&init, cfg.t_end)
}

/// `Z = sqrt(n) (G - mu)` coordinatewise; `mu` is zero past its truncation.
pub fn scaled_path(g_path: &SampledPath, mu: &NearFixedPoint) -> SampledPath {
    let sqrt_n = mu.params().sqrt_n();
    let values = g_path
        .values
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let mu_c = mu.get(c + 1);
            row.iter().map(|&g| sqrt_n * (g - mu_c)).collect()
        })
        .collect();
    SampledPath {
        times: g_path.times.clone(),
        values,
    }
}

/// `Y = (Z_1 + ... + Z_k, Z_{k+1}, ...)`.
pub fn y_shift(z_path: &SampledPath, k: usize) -> Result<SampledPath> {
    if k == 0 || k > z_path.n_coords() {
        return Err(Error::InvalidParams(format!(
            "shift needs 1 <= k <= coords, got k={k} with {} coords",
            z_path.n_coords()
        )));
    }
    let npts = z_path.len();
    let mut head = vec![0.0; npts];
    for row in &z_path.values[..k] {
        for (h, v) in head.iter_mut().zip(row) {
            *h += v;
        }
    }
    let mut values = vec![head];
    values.extend(z_path.values[k..].iter().cloned());
    Ok(SampledPath {
        times: z_path.times.clone(),
        values,
    })
}

/// Martingale second-moment report against the bound `4 T (1+lambda) / n`.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleCheckReport {
    pub replicates: usize,
    pub mean_sup_l2_sq: f64,
    pub std_error: f64,
    pub bound: f64,
    /// Mean exceeds the bound by more than three standard errors.
    pub violation: bool,
}

pub fn martingale_check(
    sup_values: &[f64],
    params: &SystemParams,
    t_end: f64,
) -> MartingaleCheckReport {
    let k = sup_values.len().max(1) as f64;
    let mean = sup_values.iter().sum::<f64>() / k;
    let var = sup_values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / k;
    let se = (var / k).sqrt();
    let bound = 4.0 * t_end * (1.0 + params.lambda) / params.n as f64;
    MartingaleCheckReport {
        replicates: sup_values.len(),
        mean_sup_l2_sq: mean,
        std_error: se,
        bound,
        violation: mean - 3.0 * se > bound,
    }
}

/// Explicit generator oracle for tiny systems: enumerates all occupancy
/// states with at most `level_cap` levels, fills the rate matrix from the
/// same rates the simulator uses (arrivals beyond `level_cap` are dropped:
/// the truncation of the oracle, not of the simulator), and solves for the
/// stationary law by dense elimination.
#[derive(Debug, Clone)]
pub struct GeneratorOracle {
    pub states: Vec<Vec<u64>>,
    pub rate_matrix: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
}

pub const GENERATOR_STATE_CAP: usize = 20_000;

impl GeneratorOracle {
    pub fn state_index(&self, counts: &[u64]) -> Option<usize> {
        let cap = self.states[0].len();
        let mut key = vec![0u64; cap];
        for (i, &c) in counts.iter().enumerate() {
            if i >= cap {
                if c > 0 {
                    return None;
                }
                continue;
            }
            key[i] = c;
        }
        self.states.binary_search(&key).ok()
    }
}

pub fn brute_force_generator(params: &SystemParams, level_cap: usize) -> Result<GeneratorOracle> {
    if level_cap == 0 {
        return Err(Error::InvalidParams("level_cap must be >= 1".into()));
    }
    let mut states = Vec::new();
    let mut cur = vec![0u64; level_cap];
    enumerate_states(params.n, level_cap, 0, &mut cur, &mut states)?;
    states.sort();
    let size = states.len();

    let index = |counts: &[u64]| states.binary_search(&counts.to_vec()).unwrap();
    let nf = params.n as f64;
    let mut q = vec![vec![0.0; size]; size];
    for (si, state) in states.iter().enumerate() {
        let count = |lvl: usize| -> u64 {
            if lvl == 0 {
                params.n
            } else {
                state[lvl - 1]
            }
        };
        for lvl in 1..=level_cap {
            // arrival into lvl
            let rate = nf
                * params.lambda
                * (beta_lattice(params.n, params.d, count(lvl - 1))
                    - beta_lattice(params.n, params.d, count(lvl)));
            if rate > 0.0 {
                let mut to = state.clone();
                to[lvl - 1] += 1;
                let ti = index(&to);
                q[si][ti] += rate;
                q[si][si] -= rate;
            }
            // departure at lvl
            let next = if lvl == level_cap { 0 } else { count(lvl + 1) };
            let drate = (count(lvl) - next) as f64;
            if drate > 0.0 {
                let mut to = state.clone();
                to[lvl - 1] -= 1;
                let ti = index(&to);
                q[si][ti] += drate;
                q[si][si] -= drate;
            }
        }
        // arrivals past level_cap (rate n*lambda*beta(count(cap))) are dropped
    }

    let stationary = stationary_distribution(&q)?;
    Ok(GeneratorOracle {
        states,
        rate_matrix: q,
        stationary,
    })
}

fn enumerate_states(
    n: u64,
    cap: usize,
    level: usize,
    cur: &mut Vec<u64>,
    out: &mut Vec<Vec<u64>>,
) -> Result<()> {
    if level == cap {
        out.push(cur.clone());
        if out.len() > GENERATOR_STATE_CAP {
            return Err(Error::StateSpace(format!(
                "more than {GENERATOR_STATE_CAP} occupancy states"
            )));
        }
        return Ok(());
    }
    let max = if level == 0 { n } else { cur[level - 1] };
    for c in 0..=max {
        cur[level] = c;
        enumerate_states(n, cap, level + 1, cur, out)?;
    }
    cur[level] = 0;
    Ok(())
}

/// Solves `pi Q = 0`, `sum pi = 1` by Gaussian elimination with partial
/// pivoting on the transposed system (last equation replaced by the
/// normalization).
fn stationary_distribution(q: &[Vec<f64>]) -> Result<Vec<f64>> {
    let size = q.len();
    let mut a = vec![vec![0.0; size + 1]; size];
    for i in 0..size {
        for j in 0..size {
            a[i][j] = q[j][i]; // transpose
        }
    }
    for j in 0..size {
        a[size - 1][j] = 1.0;
    }
    a[size - 1][size] = 1.0;

    for col in 0..size {
        let piv = (col..size)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::InvalidParams(
                "singular generator; stationary solve failed".into(),
            ));
        }
        a.swap(col, piv);
        for row in 0..size {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..=size {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    Ok((0..size).map(|i| a[i][size] / a[i][i]).collect())
}
