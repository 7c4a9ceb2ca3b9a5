//! A compact Hamiltonian Monte Carlo sampler: leapfrog integration,
//! dual-averaging step size adaptation, a diagonal mass matrix estimated
//! from the second half of warmup, and a uniformly jittered number of
//! leapfrog steps per iteration.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A differentiable unnormalized log density over an unconstrained
/// parameter space. Constrained parameters must be transformed by the
/// implementor (with the Jacobian folded into the density).
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density and gradient at `position`. May return non-finite
    /// values away from the typical set; the sampler treats those states
    /// as divergent and rejects them.
    fn log_density_gradient(&self, position: &[f64]) -> (f64, Vec<f64>);
}

/// Sampler settings. The defaults match common practice: 4 chains, 1000
/// warmup and 1000 retained draws per chain, 80% target acceptance.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    /// Leapfrog steps per iteration are drawn uniformly from
    /// {1, ..., max_leapfrog}, which decorrelates trajectory lengths.
    pub max_leapfrog: usize,
    /// Cap on the doubling/halving search for the initial step size.
    pub max_step_doublings: usize,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            target_accept: 0.8,
            max_leapfrog: 32,
            max_step_doublings: 10,
            seed: 0,
        }
    }
}

impl HmcConfig {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::BadSamplerConfig("chains must be >= 1".into()));
        }
        if self.draws == 0 {
            return Err(Error::BadSamplerConfig("draws must be >= 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::BadSamplerConfig(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_leapfrog == 0 {
            return Err(Error::BadSamplerConfig("max_leapfrog must be >= 1".into()));
        }
        if dim == 0 {
            return Err(Error::BadSamplerConfig(
                "target has zero parameters".into(),
            ));
        }
        Ok(())
    }
}

/// Draws and per-chain statistics from [`hmc_sample`].
#[derive(Debug, Clone)]
pub struct HmcRun {
    /// One `draws x dim` matrix per chain, post-warmup only.
    pub samples: Vec<Array2<f64>>,
    /// Mean Metropolis acceptance statistic per chain (sampling phase).
    pub accept_rate: Vec<f64>,
    /// Divergent transitions per chain (sampling phase).
    pub divergences: Vec<usize>,
    /// Adapted step size per chain.
    pub step_size: Vec<f64>,
}

impl HmcRun {
    pub fn n_chains(&self) -> usize {
        self.samples.len()
    }

    pub fn n_draws(&self) -> usize {
        self.samples[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].ncols()
    }

    /// All draws of one parameter as a chains x draws matrix, the shape
    /// the convergence diagnostics consume.
    pub fn param_chain_matrix(&self, param: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_chains(), self.n_draws()));
        for (c, chain) in self.samples.iter().enumerate() {
            for t in 0..chain.nrows() {
                out[[c, t]] = chain[[t, param]];
            }
        }
        out
    }

    /// All chains stacked into one (chains * draws) x dim matrix,
    /// chain-major.
    pub fn stacked(&self) -> Array2<f64> {
        let dim = self.dim();
        let total = self.n_chains() * self.n_draws();
        let mut out = Array2::zeros((total, dim));
        let mut row = 0;
        for chain in &self.samples {
            for t in 0..chain.nrows() {
                for d in 0..dim {
                    out[[row, d]] = chain[[t, d]];
                }
                row += 1;
            }
        }
        out
    }

    pub fn total_divergences(&self) -> usize {
        self.divergences.iter().sum()
    }

    pub fn mean_accept(&self) -> f64 {
        self.accept_rate.iter().sum::<f64>() / self.accept_rate.len() as f64
    }
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(inv_mass)
        .map(|(pi, mi)| pi * pi * mi)
        .sum::<f64>()
}

struct State {
    q: Vec<f64>,
    lp: f64,
    grad: Vec<f64>,
}

/// Integrate `steps` leapfrog steps from `(state.q, p)`. Returns the end
/// state and final momentum, or `None` if the trajectory left the region
/// where the density and gradient are finite.
fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    state: &State,
    p: &[f64],
    eps: f64,
    steps: usize,
    inv_mass: &[f64],
) -> Option<(State, Vec<f64>)> {
    let dim = state.q.len();
    let mut q = state.q.clone();
    let mut grad = state.grad.clone();
    let mut lp = state.lp;
    let mut p = p.to_vec();

    for d in 0..dim {
        p[d] += 0.5 * eps * grad[d];
    }
    for step in 0..steps {
        for d in 0..dim {
            q[d] += eps * inv_mass[d] * p[d];
            if !q[d].is_finite() {
                return None;
            }
        }
        let (l, g) = target.log_density_gradient(&q);
        if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return None;
        }
        lp = l;
        grad = g;
        let scale = if step + 1 == steps { 0.5 } else { 1.0 };
        for d in 0..dim {
            p[d] += scale * eps * grad[d];
        }
    }
    Some((State { q, lp, grad }, p))
}

/// One-step acceptance ratio used by the initial step size search.
fn one_step_ratio<T: LogDensity + ?Sized>(
    target: &T,
    state: &State,
    p: &[f64],
    eps: f64,
    inv_mass: &[f64],
) -> f64 {
    let h0 = -state.lp + kinetic(p, inv_mass);
    match leapfrog(target, state, p, eps, 1, inv_mass) {
        Some((end, p1)) => {
            let h1 = -end.lp + kinetic(&p1, inv_mass);
            let r = (h0 - h1).exp();
            if r.is_nan() {
                0.0
            } else {
                r
            }
        }
        None => 0.0,
    }
}

/// Double or halve from 1.0 until the one-step acceptance ratio crosses
/// one half, capped at `max_doublings` moves in either direction.
fn initial_step_size<T: LogDensity + ?Sized>(
    target: &T,
    state: &State,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
    max_doublings: usize,
) -> f64 {
    let dim = state.q.len();
    let p: Vec<f64> = (0..dim)
        .map(|d| rng.sample::<f64, _>(StandardNormal) / inv_mass[d].sqrt())
        .collect();
    let mut eps = 1.0;
    let doubling = one_step_ratio(target, state, &p, eps, inv_mass) > 0.5;
    for _ in 0..max_doublings {
        let r = one_step_ratio(target, state, &p, eps, inv_mass);
        if doubling {
            if r <= 0.5 {
                break;
            }
            eps *= 2.0;
        } else {
            if r >= 0.5 {
                break;
            }
            eps *= 0.5;
        }
    }
    eps.clamp(1e-10, 1e3)
}

/// Nesterov dual averaging of the log step size toward a target
/// acceptance statistic.
struct DualAverage {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    count: u64,
}

impl DualAverage {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64) -> Self {
        DualAverage {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: eps0.ln(),
            h_bar: 0.0,
            count: 0,
        }
    }

    fn update(&mut self, accept_stat: f64, target: f64) {
        self.count += 1;
        let m = self.count as f64;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (target - accept_stat);
        self.log_eps = self.mu - self.h_bar * m.sqrt() / Self::GAMMA;
        let eta = m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Running mean and unnormalized sum of squared deviations per dimension.
struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for d in 0..x.len() {
            let delta = x[d] - self.mean[d];
            self.mean[d] += delta / n;
            self.m2[d] += delta * (x[d] - self.mean[d]);
        }
    }

    /// Regularized sample variance, shrunk toward 1e-3 as in common
    /// adaptive samplers, so short collection windows stay usable.
    fn regularized_variance(&self, d: usize) -> f64 {
        let n = self.count as f64;
        let var = self.m2[d] / (n - 1.0);
        (var * n / (n + 5.0) + 1e-3 * 5.0 / (n + 5.0)).max(1e-10)
    }
}

struct ChainOutput {
    samples: Array2<f64>,
    accept_rate: f64,
    divergences: usize,
    step_size: f64,
}

/// One Metropolis-adjusted HMC transition. Returns the acceptance
/// statistic (0 for divergent proposals) and whether the proposal
/// diverged. RNG consumption is fixed per call: one leapfrog count, `dim`
/// momentum draws, one acceptance uniform.
fn transition<T: LogDensity + ?Sized>(
    target: &T,
    state: &mut State,
    eps: f64,
    inv_mass: &[f64],
    max_leapfrog: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, bool) {
    let dim = state.q.len();
    let steps = rng.random_range(1..=max_leapfrog);
    let p: Vec<f64> = (0..dim)
        .map(|d| rng.sample::<f64, _>(StandardNormal) / inv_mass[d].sqrt())
        .collect();
    let u: f64 = rng.random();

    let h0 = -state.lp + kinetic(&p, inv_mass);
    let proposal = leapfrog(target, state, &p, eps, steps, inv_mass);
    let (accept_stat, divergent, end) = match proposal {
        Some((end, p1)) => {
            let h1 = -end.lp + kinetic(&p1, inv_mass);
            let delta = h0 - h1;
            if !h1.is_finite() || delta < -1000.0 {
                (0.0, true, None)
            } else {
                (delta.exp().min(1.0), false, Some(end))
            }
        }
        None => (0.0, true, None),
    };
    if let Some(end) = end {
        if u < accept_stat {
            *state = end;
        }
    }
    (accept_stat, divergent)
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    config: &HmcConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64 + 1);

    // Jittered initialization near the origin of the unconstrained space.
    let mut state: Option<State> = None;
    for _ in 0..100 {
        let q: Vec<f64> = (0..dim)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (lp, grad) = target.log_density_gradient(&q);
        if lp.is_finite() && grad.iter().all(|x| x.is_finite()) {
            state = Some(State { q, lp, grad });
            break;
        }
    }
    let mut state = state.ok_or(Error::InitializationFailed(100))?;

    let mut inv_mass = vec![1.0; dim];
    let eps0 = initial_step_size(target, &state, &inv_mass, &mut rng, config.max_step_doublings);
    let mut da = DualAverage::new(eps0);
    let mut welford = Welford::new(dim);

    for t in 0..config.warmup {
        let eps = da.current();
        let (accept_stat, _) = transition(
            target,
            &mut state,
            eps,
            &inv_mass,
            config.max_leapfrog,
            &mut rng,
        );
        da.update(accept_stat, config.target_accept);
        if t >= config.warmup / 2 {
            welford.push(&state.q);
        }
    }

    if welford.count >= 2 {
        for d in 0..dim {
            inv_mass[d] = welford.regularized_variance(d);
        }
    }
    let eps = if config.warmup > 0 { da.adapted() } else { eps0 };

    let mut samples = Array2::zeros((config.draws, dim));
    let mut accept_sum = 0.0;
    let mut divergences = 0;
    for t in 0..config.draws {
        let (accept_stat, divergent) = transition(
            target,
            &mut state,
            eps,
            &inv_mass,
            config.max_leapfrog,
            &mut rng,
        );
        accept_sum += accept_stat;
        divergences += usize::from(divergent);
        for d in 0..dim {
            samples[[t, d]] = state.q[d];
        }
    }

    Ok(ChainOutput {
        samples,
        accept_rate: accept_sum / config.draws as f64,
        divergences,
        step_size: eps,
    })
}

/// Sample `target` with Hamiltonian Monte Carlo.
///
/// Each chain runs on an independent substream of one seeded ChaCha
/// generator, so results are identical for a given seed and chain count
/// whether chains execute serially or in parallel.
pub fn hmc_sample<T: LogDensity + ?Sized>(target: &T, config: &HmcConfig) -> Result<HmcRun> {
    config.validate(target.dim())?;
    let outputs: Vec<Result<ChainOutput>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect();

    let mut samples = Vec::with_capacity(config.chains);
    let mut accept_rate = Vec::with_capacity(config.chains);
    let mut divergences = Vec::with_capacity(config.chains);
    let mut step_size = Vec::with_capacity(config.chains);
    for out in outputs {
        let out = out?;
        samples.push(out.samples);
        accept_rate.push(out.accept_rate);
        divergences.push(out.divergences);
        step_size.push(out.step_size);
    }
    Ok(HmcRun {
        samples,
        accept_rate,
        divergences,
        step_size,
    })
}
