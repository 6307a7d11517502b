//! No-U-turn sampler with multinomial trajectory sampling, dual-averaging
//! step size and a windowed diagonal metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AcceptanceStats, ChainResult};
use crate::error::{Error, Result};
use crate::likelihood::prior::LOG_DENSITY_SENTINEL;
use crate::target::LogDensity;

/// Energy error beyond which a trajectory is flagged divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NutsConfig {
    pub n_samples: usize,
    pub n_warmup: usize,
    pub max_depth: usize,
    pub target_accept: f64,
    /// Adapt the diagonal metric during warmup (step size is always adapted).
    pub adapt_metric: bool,
    pub seed: u64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            n_warmup: 1000,
            max_depth: 10,
            target_accept: 0.8,
            adapt_metric: true,
            seed: 0,
        }
    }
}

impl NutsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) || self.max_depth == 0 {
            return Err(Error::Config(format!(
                "NUTS needs a target acceptance in (0, 1) and a positive tree depth: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Position with its log density and gradient.
#[derive(Debug, Clone)]
pub(crate) struct State {
    pub q: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl State {
    pub fn new<T: LogDensity>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = sanitize(target.log_density_grad(&q, &mut grad));
        Self { q, grad, logp }
    }

    pub fn is_usable(&self) -> bool {
        self.logp > LOG_DENSITY_SENTINEL && self.grad.iter().all(|g| g.is_finite())
    }
}

fn sanitize(lp: f64) -> f64 {
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

#[derive(Debug, Clone)]
struct Point {
    state: State,
    p: Vec<f64>,
}

struct Tree {
    minus: Point,
    plus: Point,
    rho: Vec<f64>,
    proposal: State,
    log_weight: f64,
}

struct TreeStats {
    n_leapfrog: usize,
    sum_accept: f64,
    divergent: bool,
}

/// Outcome of one transition.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TransitionInfo {
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// The NUTS transition kernel for a fixed metric and step size.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    /// Inverse metric (diagonal).
    pub minv: Vec<f64>,
    pub step: f64,
    pub max_depth: usize,
    pub rng: ChaCha8Rng,
}

impl Kernel {
    pub fn new(dim: usize, max_depth: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            minv: vec![1.0; dim],
            step: 1.0,
            max_depth,
            rng,
        }
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.minv).map(|(pi, m)| pi * pi * m).sum::<f64>()
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let h = -z.state.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn sample_momentum(&mut self) -> Vec<f64> {
        self.minv
            .iter()
            .map(|m| {
                let z: f64 = self.rng.sample(StandardNormal);
                z / m.sqrt()
            })
            .collect()
    }

    fn leapfrog<T: LogDensity>(&self, target: &T, z: &Point, eps: f64) -> Point {
        let mut p: Vec<f64> = z.p.iter().zip(&z.state.grad).map(|(p, g)| p + 0.5 * eps * g).collect();
        let q: Vec<f64> = z
            .state
            .q
            .iter()
            .zip(p.iter().zip(&self.minv))
            .map(|(q, (p, m))| q + eps * m * p)
            .collect();
        let state = State::new(target, q);
        for (pi, g) in p.iter_mut().zip(&state.grad) {
            *pi += 0.5 * eps * g;
        }
        Point { state, p }
    }

    /// p♯ · rho > 0 at both ends.
    fn no_u_turn(&self, minus: &[f64], plus: &[f64], rho: &[f64]) -> bool {
        let dot = |p: &[f64]| -> f64 { p.iter().zip(&self.minv).zip(rho).map(|((p, m), r)| p * m * r).sum() };
        dot(minus) > 0.0 && dot(plus) > 0.0
    }

    /// Build a subtree of `2^depth` leapfrog steps from `edge` in direction
    /// `dir`. Returns `None` when the subtree diverged or turned back.
    #[allow(clippy::too_many_arguments)]
    fn build<T: LogDensity>(
        &mut self,
        target: &T,
        edge: &Point,
        dir: f64,
        depth: usize,
        h0: f64,
        stats: &mut TreeStats,
    ) -> Option<Tree> {
        if depth == 0 {
            let z = self.leapfrog(target, edge, dir * self.step);
            let h = self.hamiltonian(&z);
            stats.n_leapfrog += 1;
            if h - h0 > MAX_ENERGY_ERROR || !z.state.is_usable() {
                stats.divergent = true;
                return None;
            }
            stats.sum_accept += (h0 - h).exp().min(1.0);
            return Some(Tree {
                rho: z.p.clone(),
                proposal: z.state.clone(),
                log_weight: h0 - h,
                minus: z.clone(),
                plus: z,
            });
        }
        let first = self.build(target, edge, dir, depth - 1, h0, stats)?;
        let next_edge = if dir > 0.0 { first.plus.clone() } else { first.minus.clone() };
        let second = self.build(target, &next_edge, dir, depth - 1, h0, stats)?;
        let log_weight = log_add_exp(first.log_weight, second.log_weight);
        // uniform progressive sampling inside subtrees
        let take_second = self.rng.random::<f64>() < (second.log_weight - log_weight).exp();
        let (tree, turning) = if dir > 0.0 {
            self.join(first, second, log_weight, take_second)
        } else {
            self.join(second, first, log_weight, !take_second)
        };
        (!turning).then_some(tree)
    }

    /// Join two adjacent trees (`lo` earlier in time than `hi`); `prefer_hi`
    /// keeps the proposal of `hi`. Also reports whether the joined trajectory
    /// makes a U-turn, checked on the whole and across the seam.
    fn join(&self, lo: Tree, hi: Tree, log_weight: f64, prefer_hi: bool) -> (Tree, bool) {
        let rho: Vec<f64> = lo.rho.iter().zip(&hi.rho).map(|(a, b)| a + b).collect();
        let extra_lo: Vec<f64> = lo.rho.iter().zip(&hi.minus.p).map(|(a, b)| a + b).collect();
        let extra_hi: Vec<f64> = lo.plus.p.iter().zip(&hi.rho).map(|(a, b)| a + b).collect();
        let turning = !self.no_u_turn(&lo.minus.p, &hi.plus.p, &rho)
            || !self.no_u_turn(&lo.minus.p, &hi.minus.p, &extra_lo)
            || !self.no_u_turn(&lo.plus.p, &hi.plus.p, &extra_hi);
        let proposal = if prefer_hi { hi.proposal } else { lo.proposal };
        let tree = Tree {
            minus: lo.minus,
            plus: hi.plus,
            rho,
            proposal,
            log_weight,
        };
        (tree, turning)
    }

    pub fn transition<T: LogDensity>(&mut self, target: &T, current: &State) -> (State, TransitionInfo) {
        let p = self.sample_momentum();
        let start = Point {
            state: current.clone(),
            p,
        };
        let h0 = self.hamiltonian(&start);
        let mut tree = Tree {
            rho: start.p.clone(),
            proposal: current.clone(),
            log_weight: 0.0,
            minus: start.clone(),
            plus: start,
        };
        let mut stats = TreeStats {
            n_leapfrog: 0,
            sum_accept: 0.0,
            divergent: false,
        };
        let mut depth = 0;
        while depth < self.max_depth {
            let dir = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
            let edge = if dir > 0.0 { tree.plus.clone() } else { tree.minus.clone() };
            let Some(sub) = self.build(target, &edge, dir, depth, h0, &mut stats) else {
                break;
            };
            depth += 1;
            // biased progressive sampling favours the new subtree
            let take = self.rng.random::<f64>() < (sub.log_weight - tree.log_weight).exp();
            let log_weight = log_add_exp(tree.log_weight, sub.log_weight);
            let (joined, turning) = if dir > 0.0 {
                self.join(tree, sub, log_weight, take)
            } else {
                self.join(sub, tree, log_weight, !take)
            };
            tree = joined;
            if turning {
                break;
            }
        }
        let info = TransitionInfo {
            accept_stat: if stats.n_leapfrog > 0 {
                stats.sum_accept / stats.n_leapfrog as f64
            } else {
                0.0
            },
            depth,
            n_leapfrog: stats.n_leapfrog,
            divergent: stats.divergent,
        };
        (tree.proposal, info)
    }
}

/// Nesterov dual averaging of the log step size.
#[derive(Debug, Clone)]
struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step: f64, delta: f64) -> Self {
        Self {
            mu: (10.0 * step).ln(),
            s_bar: 0.0,
            x_bar: 0.0,
            counter: 0.0,
            delta,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance per coordinate.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), xi) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = xi - *m;
            *m += d / n;
            *s += d * (xi - *m);
        }
    }

    /// Variance shrunk towards 1e-3 as in the usual windowed adaptation.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Metric adaptation windows `[start, end)` within the warmup.
fn adaptation_windows(n_warmup: usize) -> Vec<(usize, usize)> {
    if n_warmup < 20 {
        return Vec::new();
    }
    let (mut init, mut term, mut base) = (75, 50, 25);
    if init + term + base > n_warmup {
        init = (0.15 * n_warmup as f64) as usize;
        term = (0.1 * n_warmup as f64) as usize;
        base = n_warmup - init - term;
    }
    let limit = n_warmup - term;
    let mut windows = Vec::new();
    let (mut start, mut size) = (init, base);
    while start < limit {
        let mut end = start + size;
        if end + 2 * size > limit {
            end = limit;
        }
        windows.push((start, end));
        start = end;
        size *= 2;
    }
    windows
}

/// A NUTS chain with its warmup schedule; advanced one transition at a time.
#[derive(Debug, Clone)]
pub(crate) struct Chain {
    pub kernel: Kernel,
    pub state: State,
    da: DualAveraging,
    windows: Vec<(usize, usize)>,
    welford: Welford,
    n_warmup: usize,
    target_accept: f64,
    iter: usize,
}

impl Chain {
    pub fn new<T: LogDensity>(target: &T, theta0: &[f64], cfg: &NutsConfig, stream: u64) -> Result<Self> {
        cfg.validate()?;
        Error::check_len("initial point", target.dim(), theta0.len())?;
        let state = State::new(target, theta0.to_vec());
        if !state.is_usable() {
            return Err(Error::Initialization(format!(
                "log density at the initial point is {} (unusable)",
                state.logp
            )));
        }
        let mut kernel = Kernel::new(theta0.len(), cfg.max_depth, cfg.seed, stream);
        kernel.init_step(target, &state);
        let windows = if cfg.adapt_metric {
            adaptation_windows(cfg.n_warmup)
        } else {
            Vec::new()
        };
        Ok(Self {
            da: DualAveraging::new(kernel.step, cfg.target_accept),
            welford: Welford::new(theta0.len()),
            kernel,
            state,
            windows,
            n_warmup: cfg.n_warmup,
            target_accept: cfg.target_accept,
            iter: 0,
        })
    }

    pub fn in_warmup(&self) -> bool {
        self.iter < self.n_warmup
    }

    pub fn step<T: LogDensity>(&mut self, target: &T) -> TransitionInfo {
        let (next, info) = self.kernel.transition(target, &self.state);
        self.state = next;
        if self.in_warmup() {
            self.adapt(target, &info);
        }
        self.iter += 1;
        info
    }

    /// Replace the current position, e.g. after a replica swap.
    pub fn set_state(&mut self, state: State) {
        self.state = state;
    }

    fn adapt<T: LogDensity>(&mut self, target: &T, info: &TransitionInfo) {
        self.kernel.step = self.da.update(info.accept_stat);
        let i = self.iter;
        if let Some(&(_, end)) = self.windows.iter().find(|(s, e)| (*s..*e).contains(&i)) {
            self.welford.push(&self.state.q);
            if i + 1 == end {
                self.kernel.minv = self.welford.regularized_variance();
                self.welford = Welford::new(self.state.q.len());
                self.kernel.init_step(target, &self.state);
                self.da = DualAveraging::new(self.kernel.step, self.target_accept);
            }
        }
        if i + 1 == self.n_warmup {
            self.kernel.step = self.da.final_step();
        }
    }
}

impl Kernel {
    /// Double or halve the step until a single leapfrog step crosses an
    /// acceptance probability of 0.8.
    fn init_step<T: LogDensity>(&mut self, target: &T, state: &State) {
        let mut direction = 0i32;
        for _ in 0..100 {
            let p = self.sample_momentum();
            let z = Point { state: state.clone(), p };
            let h0 = self.hamiltonian(&z);
            let z1 = self.leapfrog(target, &z, self.step);
            let mut delta = h0 - self.hamiltonian(&z1);
            if delta.is_nan() {
                delta = f64::NEG_INFINITY;
            }
            let dir = if delta > 0.8f64.ln() { 1 } else { -1 };
            if direction == 0 {
                direction = dir;
            }
            if dir != direction {
                break;
            }
            let next = if direction == 1 { 2.0 * self.step } else { 0.5 * self.step };
            if !(1e-12..=1e7).contains(&next) {
                break;
            }
            self.step = next;
        }
    }
}

/// Run one NUTS chain: `n_warmup` adaptive transitions followed by
/// `n_samples` kept draws.
pub fn nuts_sample<T: LogDensity>(target: &T, theta0: &[f64], cfg: &NutsConfig) -> Result<ChainResult> {
    run_chain(target, theta0, cfg, 0)
}

/// Several chains in parallel, chain `i` starting at `inits[i]` with its own
/// random stream.
pub fn nuts_chains<T: LogDensity>(
    target: &T,
    inits: &[Vec<f64>],
    cfg: &NutsConfig,
    parallelism: usize,
) -> Result<Vec<ChainResult>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| {
        inits
            .par_iter()
            .enumerate()
            .map(|(i, x0)| run_chain(target, x0, cfg, i as u64))
            .collect()
    })
}

fn run_chain<T: LogDensity>(target: &T, theta0: &[f64], cfg: &NutsConfig, chain_id: u64) -> Result<ChainResult> {
    let mut chain = Chain::new(target, theta0, cfg, chain_id)?;
    let mut result = ChainResult::empty(chain_id as usize, 1.0);
    if cfg.n_samples == 0 {
        return Ok(result);
    }
    for _ in 0..cfg.n_warmup {
        chain.step(target);
    }
    let mut acc = AcceptanceStats::default();
    for _ in 0..cfg.n_samples {
        let info = chain.step(target);
        acc.record(&info);
        if info.divergent {
            result.divergence_count += 1;
        }
        result.samples.push(chain.state.q.clone());
        result.log_posts.push(chain.state.logp);
    }
    acc.finish(cfg.n_samples, chain.kernel.step, &chain.kernel.minv);
    result.acceptance_stats = acc;
    Ok(result)
}
