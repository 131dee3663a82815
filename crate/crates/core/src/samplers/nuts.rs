//! Multinomial NUTS with the generalized no-U-turn criterion, diagonal
//! metric, and dual-averaging step size adaptation.

use rand::Rng;

use super::{ChainStats, LogDensity, SamplerConfig};
use crate::error::{Error, Result};
use crate::prob::{log_sum_exp, standard_normal};

const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Hamiltonian<'a, D: LogDensity + ?Sized> {
    target: &'a D,
    inv_metric: Vec<f64>,
    n_grad: u64,
}

impl<D: LogDensity + ?Sized> Hamiltonian<'_, D> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn energy(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum<R: Rng>(&self, z: &mut Point, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            *p = standard_normal(rng) / m.sqrt();
        }
    }

    /// Refresh `logp` and `grad` at `z.q`. Evaluation failures become `-∞`;
    /// a non-finite gradient at a finite density aborts the chain.
    fn update(&mut self, z: &mut Point) -> Result<()> {
        self.n_grad += 1;
        match self.target.log_density_grad(&z.q, &mut z.grad) {
            Ok(lp) => {
                z.logp = lp;
                if lp.is_finite() && z.grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteGradient { theta: z.q.clone() });
                }
            }
            Err(Error::NonFiniteGradient { theta }) => return Err(Error::NonFiniteGradient { theta }),
            Err(_) => z.logp = f64::NEG_INFINITY,
        }
        if !z.logp.is_finite() {
            z.logp = f64::NEG_INFINITY;
        }
        Ok(())
    }

    fn leapfrog(&mut self, z: &mut Point, eps: f64) -> Result<()> {
        if !z.logp.is_finite() {
            return Ok(());
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        self.update(z)?;
        if z.logp.is_finite() {
            for (p, g) in z.p.iter_mut().zip(&z.grad) {
                *p += 0.5 * eps * g;
            }
        }
        Ok(())
    }
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

struct Tree {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

struct Sampler<'a, 'r, D: LogDensity + ?Sized, R: Rng> {
    ham: Hamiltonian<'a, D>,
    eps: f64,
    rng: &'r mut R,
}

/// Subtree boundary data, in trajectory order.
struct Edges {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
}

impl<D: LogDensity + ?Sized, R: Rng> Sampler<'_, '_, D, R> {
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        edges: &mut Edges,
        rho: &mut [f64],
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
        tree: &mut Tree,
    ) -> Result<bool> {
        if depth == 0 {
            self.ham.leapfrog(z, sign * self.eps)?;
            tree.n_leapfrog += 1;
            let h = self.ham.energy(z);
            if h - h0 > MAX_DELTA_H || !h.is_finite() {
                tree.divergent = true;
            }
            *log_sum_weight = log_sum_exp(&[*log_sum_weight, h0 - h]);
            tree.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            edges.p_sharp_beg = self.ham.p_sharp(&z.p);
            edges.p_sharp_end.clone_from(&edges.p_sharp_beg);
            add_into(rho, &z.p);
            edges.p_beg.clone_from(&z.p);
            edges.p_end.clone_from(&z.p);
            return Ok(!tree.divergent);
        }
        let d = z.q.len();

        let mut lsw_init = f64::NEG_INFINITY;
        let mut rho_init = vec![0.0; d];
        let mut init = Edges {
            p_sharp_beg: Vec::new(),
            p_sharp_end: Vec::new(),
            p_beg: Vec::new(),
            p_end: Vec::new(),
        };
        if !self.build_tree(depth - 1, z, z_propose, &mut init, &mut rho_init, h0, sign, &mut lsw_init, tree)? {
            return Ok(false);
        }

        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut rho_final = vec![0.0; d];
        let mut fin = Edges {
            p_sharp_beg: Vec::new(),
            p_sharp_end: Vec::new(),
            p_beg: Vec::new(),
            p_end: Vec::new(),
        };
        if !self.build_tree(depth - 1, z, &mut z_propose_final, &mut fin, &mut rho_final, h0, sign, &mut lsw_final, tree)? {
            return Ok(false);
        }

        let lsw_subtree = log_sum_exp(&[lsw_init, lsw_final]);
        *log_sum_weight = log_sum_exp(&[*log_sum_weight, lsw_subtree]);
        if lsw_final > lsw_subtree || self.rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }

        let rho_subtree = sum(&rho_init, &rho_final);
        add_into(rho, &rho_subtree);

        let mut persist = criterion(&init.p_sharp_beg, &fin.p_sharp_end, &rho_subtree);
        persist &= criterion(&init.p_sharp_beg, &fin.p_sharp_beg, &sum(&rho_init, &fin.p_beg));
        persist &= criterion(&init.p_sharp_end, &fin.p_sharp_end, &sum(&rho_final, &init.p_end));

        edges.p_sharp_beg = init.p_sharp_beg;
        edges.p_beg = init.p_beg;
        edges.p_sharp_end = fin.p_sharp_end;
        edges.p_end = fin.p_end;
        Ok(persist)
    }

    /// One NUTS transition from `z` (position, gradient and density current).
    /// Returns (new point, accept statistic, depth, divergent).
    fn transition(&mut self, z0: &Point, max_depth: usize) -> Result<(Point, f64, usize, bool)> {
        let mut z = z0.clone();
        self.ham.sample_momentum(&mut z, self.rng);
        let h0 = self.ham.energy(&z);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let ps = self.ham.p_sharp(&z.p);
        let mut fwd = Edges {
            p_sharp_beg: ps.clone(),
            p_sharp_end: ps.clone(),
            p_beg: z.p.clone(),
            p_end: z.p.clone(),
        };
        let mut bck = Edges {
            p_sharp_beg: ps.clone(),
            p_sharp_end: ps,
            p_beg: z.p.clone(),
            p_end: z.p.clone(),
        };
        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut tree = Tree {
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };
        let d = z.q.len();
        let mut depth = 0;

        while depth < max_depth {
            let mut rho_fwd = vec![0.0; d];
            let mut rho_bck = vec![0.0; d];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if self.rng.random::<f64>() > 0.5 {
                // Forward: the old trajectory becomes the backward subtree.
                rho_bck.clone_from(&rho);
                bck.p_end.clone_from(&fwd.p_end);
                bck.p_sharp_end.clone_from(&fwd.p_sharp_end);
                let mut cur = z_fwd.clone();
                let mut e = Edges {
                    p_sharp_beg: Vec::new(),
                    p_sharp_end: Vec::new(),
                    p_beg: Vec::new(),
                    p_end: Vec::new(),
                };
                let ok = self.build_tree(depth, &mut cur, &mut z_propose, &mut e, &mut rho_fwd, h0, 1.0, &mut lsw_subtree, &mut tree)?;
                z_fwd = cur;
                if ok {
                    fwd = e;
                }
                ok
            } else {
                rho_fwd.clone_from(&rho);
                fwd.p_beg.clone_from(&bck.p_beg);
                fwd.p_sharp_beg.clone_from(&bck.p_sharp_beg);
                let mut cur = z_bck.clone();
                let mut e = Edges {
                    p_sharp_beg: Vec::new(),
                    p_sharp_end: Vec::new(),
                    p_beg: Vec::new(),
                    p_end: Vec::new(),
                };
                // Built backward in time: its "beginning" is the end nearest the old trajectory.
                let ok = self.build_tree(depth, &mut cur, &mut z_propose, &mut e, &mut rho_bck, h0, -1.0, &mut lsw_subtree, &mut tree)?;
                z_bck = cur;
                if ok {
                    bck = Edges {
                        p_sharp_beg: e.p_sharp_end,
                        p_sharp_end: e.p_sharp_beg,
                        p_beg: e.p_end,
                        p_end: e.p_beg,
                    };
                }
                ok
            };
            if !valid {
                break;
            }
            depth += 1;

            if lsw_subtree > log_sum_weight || self.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_sum_exp(&[log_sum_weight, lsw_subtree]);

            rho = sum(&rho_bck, &rho_fwd);
            // bck spans [beg, end] in time order, followed by fwd [beg, end]
            let mut persist = criterion(&bck.p_sharp_beg, &fwd.p_sharp_end, &rho);
            persist &= criterion(&bck.p_sharp_beg, &fwd.p_sharp_beg, &sum(&rho_bck, &fwd.p_beg));
            persist &= criterion(&bck.p_sharp_end, &fwd.p_sharp_end, &sum(&rho_fwd, &bck.p_end));
            if !persist {
                break;
            }
        }
        let accept = if tree.n_leapfrog > 0 {
            tree.sum_metro_prob / tree.n_leapfrog as f64
        } else {
            0.0
        };
        Ok((z_sample, accept, depth, tree.divergent))
    }
}

/// Nesterov dual averaging of `ln ε` toward a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    pub target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(target: f64, step_size: f64) -> Self {
        Self {
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            mu: (10.0 * step_size).ln(),
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    pub fn restart(&mut self, step_size: f64) {
        *self = Self::new(self.target, step_size);
    }

    /// Update with one acceptance statistic; returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

fn reasonable_step_size<D: LogDensity + ?Sized, R: Rng>(
    ham: &mut Hamiltonian<'_, D>,
    z0: &Point,
    mut eps: f64,
    rng: &mut R,
) -> Result<f64> {
    let probe = |ham: &mut Hamiltonian<'_, D>, eps: f64, rng: &mut R| -> Result<f64> {
        let mut z = z0.clone();
        ham.sample_momentum(&mut z, rng);
        let h0 = ham.energy(&z);
        ham.leapfrog(&mut z, eps)?;
        Ok(h0 - ham.energy(&z))
    };
    let thresh = 0.8f64.ln();
    let direction = if probe(ham, eps, rng)? > thresh { 1 } else { -1 };
    for _ in 0..100 {
        let dh = probe(ham, eps, rng)?;
        if (direction == 1 && !(dh > thresh)) || (direction == -1 && !(dh < thresh)) {
            break;
        }
        eps = if direction == 1 { eps * 2.0 } else { eps * 0.5 };
        if eps > 1e7 {
            return Err(Error::Numerical("step size search diverged; posterior may be improper".into()));
        }
        if eps < 1e-300 {
            return Err(Error::Numerical("step size collapsed to zero; no finite gradients".into()));
        }
    }
    Ok(eps)
}

/// Stan-style initial step size heuristic under a unit metric.
pub fn find_reasonable_step_size<D: LogDensity + ?Sized, R: Rng>(target: &D, theta: &[f64], rng: &mut R) -> Result<f64> {
    let d = target.dim();
    let mut ham = Hamiltonian {
        target,
        inv_metric: vec![1.0; d],
        n_grad: 0,
    };
    let mut z = Point {
        q: theta.to_vec(),
        p: vec![0.0; d],
        grad: vec![0.0; d],
        logp: 0.0,
    };
    ham.update(&mut z)?;
    reasonable_step_size(&mut ham, &z, 1.0, rng)
}

/// Welford accumulator for the metric windows.
#[derive(Debug, Clone)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    /// Sample variance shrunk toward `1e-3`.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|m| (n / (n + 5.0)) * (m / (n - 1.0)) + 1e-3 * (5.0 / (n + 5.0)))
            .collect()
    }
}

/// Metric windows over warmup `W`: `[0.1W, 0.5W)` and `[0.5W, 0.9W)`.
/// Step size alone is adapted in `[0, 0.1W)` and `[0.9W, W)`.
fn metric_windows(warmup: usize) -> Vec<(usize, usize)> {
    if warmup < 20 {
        return Vec::new();
    }
    let w = warmup as f64;
    let a = (0.1 * w).round() as usize;
    let b = (0.5 * w).round() as usize;
    let c = (0.9 * w).round() as usize;
    vec![(a, b), (b, c)]
}

pub(super) fn run_chain<D: LogDensity + ?Sized, R: Rng>(
    target: &D,
    cfg: &SamplerConfig,
    init: Vec<f64>,
    rng: &mut R,
) -> Result<(Vec<f64>, ChainStats)> {
    let d = target.dim();
    let warmup = cfg.warmup();
    let mut ham = Hamiltonian {
        target,
        inv_metric: vec![1.0; d],
        n_grad: 0,
    };
    let mut z = Point {
        q: init,
        p: vec![0.0; d],
        grad: vec![0.0; d],
        logp: 0.0,
    };
    ham.update(&mut z)?;
    let eps0 = reasonable_step_size(&mut ham, &z, 1.0, rng)?;
    let mut adapt = DualAveraging::new(cfg.target_accept, eps0);
    let windows = metric_windows(warmup);
    let mut welford = Welford::new(d);

    let mut sampler = Sampler { ham, eps: eps0, rng };
    let mut draws = Vec::with_capacity(cfg.kept_per_chain() * d);
    let mut stats = ChainStats {
        tree_depth_hist: vec![0; cfg.max_tree_depth + 1],
        ..ChainStats::default()
    };
    let mut accept_sum = 0.0;

    for it in 0..cfg.total_draws {
        let (next, accept, depth, divergent) = sampler.transition(&z, cfg.max_tree_depth)?;
        z = next;
        if it < warmup {
            sampler.eps = adapt.update(accept);
            if divergent {
                stats.warmup_divergences += 1;
            }
            if let Some(&(_, end)) = windows.iter().find(|(s, e)| it >= *s && it < *e) {
                welford.push(&z.q);
                if it + 1 == end {
                    sampler.ham.inv_metric = welford.regularized_variance();
                    welford = Welford::new(d);
                    let e = reasonable_step_size(&mut sampler.ham, &z, sampler.eps, sampler.rng)?;
                    sampler.eps = e;
                    adapt.restart(e);
                }
            }
            if it + 1 == warmup {
                sampler.eps = adapt.final_step_size();
            }
        } else {
            let k = it - warmup;
            if divergent {
                stats.divergences.push(k);
            }
            stats.tree_depth_hist[depth] += 1;
            accept_sum += accept;
            draws.extend_from_slice(&z.q);
        }
    }
    let kept = cfg.kept_per_chain().max(1) as f64;
    stats.step_size = sampler.eps;
    stats.mean_accept = accept_sum / kept;
    stats.n_grad_evals = sampler.ham.n_grad;
    stats.inv_metric = sampler.ham.inv_metric.clone();
    Ok((draws, stats))
}
