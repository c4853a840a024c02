use super::diffusion::{run_key, sbm_outcome_direct, SbmParams, SeedRule, Spread};
use super::graph::GraphTopology;
use super::locations::{Locations, Metric};
use super::matern::MaternParams;
use super::{Generator, Law};
use crate::array::{ModelId, SampleArray};
use crate::error::{invalid, Error, Result};
use crate::kernel::{CovKernel, PairCov};
use crate::rng::{derive_seed, rng_from_seed};
use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::sync::Arc;

/// `reps` replications with seeds `derive_seed(master, stream, r)`, generated
/// in parallel and returned in index order.
pub fn replicate(g: &dyn Generator, master: u64, stream: u64, reps: usize) -> Vec<SampleArray> {
    (0..reps)
        .into_par_iter()
        .map(|r| g.generate(derive_seed(master, stream, r as u64)))
        .collect()
}

fn array(g: &dyn Generator, values: Vec<f64>, seed: u64) -> SampleArray {
    SampleArray::new(g.n(), g.p(), values, g.model_id(), seed, g.positively_associated())
        .expect("generators produce finite values of the declared shape")
}

/// Moving average `Z_i = sum_l a_l eps_{i-l}` of iid innovations.
#[derive(Clone, Debug)]
pub struct MDependent {
    n: usize,
    weights: Vec<f64>,
    law: Law,
}

impl MDependent {
    pub fn new(n: usize, weights: Vec<f64>, law: Law) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("m-dependent weights must be non-empty and finite"));
        }
        law.validate()?;
        Ok(MDependent { n, weights, law })
    }

    /// Lag `M`.
    pub fn lag(&self) -> usize {
        self.weights.len() - 1
    }

    /// Autocovariance at lags `0..=M`.
    pub fn autocovariance(&self) -> Vec<f64> {
        let s2 = self.law.variance();
        (0..self.weights.len())
            .map(|h| {
                s2 * self
                    .weights
                    .iter()
                    .zip(&self.weights[h..])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect()
    }
}

impl Generator for MDependent {
    fn model_id(&self) -> ModelId {
        ModelId::MDependent
    }

    fn n(&self) -> usize {
        self.n
    }

    fn generate(&self, seed: u64) -> SampleArray {
        let mut rng = rng_from_seed(seed);
        let m = self.lag();
        let eps: Vec<f64> = (0..self.n + m).map(|_| self.law.sample(&mut rng)).collect();
        // eps[i + m] is the innovation at time i
        let values = (0..self.n)
            .map(|i| self.weights.iter().enumerate().map(|(l, a)| a * eps[i + m - l]).sum())
            .collect();
        array(self, values, seed)
    }

    fn kernel(&self) -> Option<CovKernel> {
        Some(CovKernel::stationary(self.n, self.autocovariance()))
    }

    fn positively_associated(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0) || self.weights.iter().all(|&w| w <= 0.0)
    }
}

pub fn gen_m_dependent(weights: &[f64], law: Law, n: usize, seed: u64) -> Result<SampleArray> {
    Ok(MDependent::new(n, weights.to_vec(), law)?.generate(seed))
}

/// `X_t = rho X_{t-1} + eps_t`, `eps_t ~ Bernoulli(q)`, de-meaned.
#[derive(Clone, Debug)]
pub struct AndrewsAr {
    n: usize,
    rho: f64,
    q: f64,
    burn_in: usize,
}

impl AndrewsAr {
    pub fn new(n: usize, rho: f64, q: f64, burn_in: Option<usize>) -> Result<Self> {
        if !(rho > 0.0 && rho <= 0.5) {
            return Err(invalid(format!("rho={rho} not in (0, 1/2]")));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(invalid(format!("q={q} not in (0, 1)")));
        }
        Ok(AndrewsAr {
            n,
            rho,
            q,
            burn_in: burn_in.unwrap_or_else(|| default_burn_in(rho)),
        })
    }

    pub fn mean(&self) -> f64 {
        self.q / (1.0 - self.rho)
    }

    pub fn variance(&self) -> f64 {
        self.q * (1.0 - self.q) / (1.0 - self.rho * self.rho)
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    fn autocovariance(&self) -> Vec<f64> {
        let v = self.variance();
        let mut acv = Vec::new();
        let mut c = v;
        while acv.len() < self.n && c > 0.0 {
            acv.push(c);
            c *= self.rho;
        }
        acv
    }
}

/// `64 ln(1/eps) / ln(1/rho)` steps.
pub fn default_burn_in(rho: f64) -> usize {
    (64.0 * (1.0 / f64::EPSILON).ln() / (1.0 / rho).ln()).ceil() as usize
}

impl Generator for AndrewsAr {
    fn model_id(&self) -> ModelId {
        ModelId::AndrewsAr
    }

    fn n(&self) -> usize {
        self.n
    }

    fn generate(&self, seed: u64) -> SampleArray {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let mean = self.mean();
        let mut x = mean;
        for _ in 0..self.burn_in {
            x = self.rho * x + f64::from(u8::from(rng.random::<f64>() < self.q));
        }
        let values = (0..self.n)
            .map(|_| {
                x = self.rho * x + f64::from(u8::from(rng.random::<f64>() < self.q));
                x - mean
            })
            .collect();
        array(self, values, seed)
    }

    fn kernel(&self) -> Option<CovKernel> {
        Some(CovKernel::stationary(self.n, self.autocovariance()))
    }

    fn positively_associated(&self) -> bool {
        true
    }
}

pub fn gen_andrews_ar(rho: f64, q: f64, burn_in: Option<usize>, n: usize, seed: u64) -> Result<SampleArray> {
    Ok(AndrewsAr::new(n, rho, q, burn_in)?.generate(seed))
}

/// Lower Cholesky factor of a dense covariance.
#[derive(Clone, Debug)]
struct GaussianSampler {
    l: Arc<DMatrix<f64>>,
}

impl GaussianSampler {
    fn new(cov: DMatrix<f64>) -> Result<Self> {
        match Cholesky::new(cov.clone()) {
            Some(c) => Ok(GaussianSampler { l: Arc::new(c.l()) }),
            None => {
                let min = SymmetricEigen::new(cov)
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                Err(Error::CovarianceNotPd {
                    min_eigenvalue: min,
                    required_jitter: (-min).max(0.0) * (1.0 + 1e-6) + f64::EPSILON,
                })
            }
        }
    }

    fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let n = self.l.nrows();
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut out = vec![0.0; n];
        for (j, &zj) in z.iter().enumerate() {
            let col = self.l.column(j);
            for i in j..n {
                out[i] += col[i] * zj;
            }
        }
        out
    }
}

/// Covariance that depends on the distance between locations.
struct DistanceCov<F> {
    locs: Locations,
    metric: Metric,
    f: F,
    nugget: f64,
}

impl<F: Fn(f64) -> f64 + Send + Sync> PairCov for DistanceCov<F> {
    fn len(&self) -> usize {
        self.locs.len()
    }

    fn cov(&self, a: usize, b: usize) -> f64 {
        let c = (self.f)(self.locs.distance(a, b, self.metric));
        if a == b {
            c + self.nugget
        } else {
            c
        }
    }
}

fn dense_cov(c: &dyn PairCov) -> DMatrix<f64> {
    let n = c.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = c.cov(i, j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Gaussian field on a `rho0`-spaced lattice with
/// `cov = sigma2 (1 + dist / rho0)^-(d + delta)`, Chebyshev distance.
#[derive(Clone)]
pub struct LatticeField {
    locs: Locations,
    dim: usize,
    rho0: f64,
    delta: f64,
    sigma2: f64,
    sampler: GaussianSampler,
}

impl LatticeField {
    pub fn new(n: usize, dim: usize, rho0: f64, delta: f64, sigma2: f64) -> Result<Self> {
        if !(rho0 > 0.0 && delta > 0.0 && sigma2 > 0.0) {
            return Err(invalid("lattice field needs rho0, delta, sigma2 > 0"));
        }
        let locs = Locations::lattice(n, dim, rho0)?;
        let cov = Self::cov_fn(dim, rho0, delta, sigma2);
        let sampler = GaussianSampler::new(dense_cov(&DistanceCov {
            locs: locs.clone(),
            metric: Metric::Chebyshev,
            f: cov,
            nugget: 0.0,
        }))?;
        Ok(LatticeField {
            locs,
            dim,
            rho0,
            delta,
            sigma2,
            sampler,
        })
    }

    fn cov_fn(dim: usize, rho0: f64, delta: f64, sigma2: f64) -> impl Fn(f64) -> f64 + Send + Sync + Clone {
        let e = dim as f64 + delta;
        move |h: f64| sigma2 * (1.0 + h / rho0).powf(-e)
    }

    pub fn covariance_at(&self, h: f64) -> f64 {
        Self::cov_fn(self.dim, self.rho0, self.delta, self.sigma2)(h)
    }

    /// Decay exponent `d + delta`.
    pub fn exponent(&self) -> f64 {
        self.dim as f64 + self.delta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Generator for LatticeField {
    fn model_id(&self) -> ModelId {
        ModelId::LatticeField
    }

    fn n(&self) -> usize {
        self.locs.len()
    }

    fn generate(&self, seed: u64) -> SampleArray {
        array(self, self.sampler.sample(seed), seed)
    }

    fn kernel(&self) -> Option<CovKernel> {
        let c = DistanceCov {
            locs: self.locs.clone(),
            metric: Metric::Chebyshev,
            f: Self::cov_fn(self.dim, self.rho0, self.delta, self.sigma2),
            nugget: 0.0,
        };
        Some(CovKernel::pairwise(self.n(), 1, Arc::new(c)))
    }

    fn positively_associated(&self) -> bool {
        true
    }

    fn locations(&self) -> Option<&Locations> {
        Some(&self.locs)
    }
}

pub fn gen_lattice_field(dim: usize, rho0: f64, delta: f64, sigma2: f64, n: usize, seed: u64) -> Result<SampleArray> {
    Ok(LatticeField::new(n, dim, rho0, delta, sigma2)?.generate(seed))
}

/// `Z_i = sum of iid shocks on edges incident to i`.
#[derive(Clone, Debug)]
pub struct EdgeShockGraph {
    graph: GraphTopology,
    law: Law,
}

impl EdgeShockGraph {
    pub fn new(graph: GraphTopology, law: Law) -> Result<Self> {
        if graph.edge_count() == 0 {
            return Err(invalid("edge-shock model needs a graph with at least one edge"));
        }
        law.validate()?;
        Ok(EdgeShockGraph { graph, law })
    }
}

impl Generator for EdgeShockGraph {
    fn model_id(&self) -> ModelId {
        ModelId::EdgeShockGraph
    }

    fn n(&self) -> usize {
        self.graph.n()
    }

    fn generate(&self, seed: u64) -> SampleArray {
        let mut rng = rng_from_seed(seed);
        let mut values = vec![0.0; self.n()];
        for &(u, v) in self.graph.edges() {
            let s = self.law.sample(&mut rng);
            values[u as usize] += s;
            values[v as usize] += s;
        }
        array(self, values, seed)
    }

    fn kernel(&self) -> Option<CovKernel> {
        let var = self.law.variance();
        let mut t: Vec<(usize, usize, f64)> = (0..self.n())
            .map(|i| (i, i, var * self.graph.degree(i) as f64))
            .collect();
        t.extend(self.graph.edges().iter().map(|&(u, v)| (u as usize, v as usize, var)));
        Some(CovKernel::sparse(self.n(), 1, &t))
    }

    fn positively_associated(&self) -> bool {
        true
    }

    fn graph(&self) -> Option<&GraphTopology> {
        Some(&self.graph)
    }
}

pub fn gen_edge_shock_graph(graph: &GraphTopology, law: Law, seed: u64) -> Result<SampleArray> {
    Ok(EdgeShockGraph::new(graph.clone(), law)?.generate(seed))
}

/// Infection indicators of an SIR run on a fixed graph, de-meaned by
/// per-node pilot means.
#[derive(Clone, Debug)]
pub struct SirDiffusion {
    graph: GraphTopology,
    rule: SeedRule,
    q: f64,
    periods: usize,
    means: Vec<f64>,
    warnings: Vec<String>,
}

impl SirDiffusion {
    pub fn new(
        graph: GraphTopology,
        rule: SeedRule,
        q: f64,
        periods: usize,
        pilot_reps: usize,
        pilot_seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(invalid(format!("q={q} not in [0, 1]")));
        }
        rule.validate(graph.n())?;
        if pilot_reps == 0 {
            return Err(invalid("pilot replications must be positive"));
        }
        let warnings = super::diffusion::sir_warnings(&graph, periods);
        let mut sir = SirDiffusion {
            graph,
            rule,
            q,
            periods,
            means: Vec::new(),
            warnings,
        };
        let n = sir.graph.n();
        let counts: Vec<u32> = (0..pilot_reps)
            .into_par_iter()
            .map(|r| sir.infected(derive_seed(pilot_seed, 0, r as u64)))
            .fold(
                || vec![0u32; n],
                |mut acc, x| {
                    for (a, b) in acc.iter_mut().zip(x) {
                        *a += u32::from(b);
                    }
                    acc
                },
            )
            .reduce(
                || vec![0u32; n],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
        sir.means = counts.iter().map(|&c| c as f64 / pilot_reps as f64).collect();
        Ok(sir)
    }

    fn infected(&self, seed: u64) -> Vec<bool> {
        let mut rng = rng_from_seed(seed);
        let seeds = self.rule.draw(self.graph.n(), &mut rng);
        let mut spread = Spread::new(self.graph.n());
        let mut x = vec![false; self.graph.n()];
        for &i in spread.run(&self.graph, &seeds, self.q, self.periods, run_key(seed)) {
            x[i] = true;
        }
        x
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }
}

impl Generator for SirDiffusion {
    fn model_id(&self) -> ModelId {
        ModelId::SirDiffusion
    }

    fn n(&self) -> usize {
        self.graph.n()
    }

    fn generate(&self, seed: u64) -> SampleArray {
        let values = self
            .infected(seed)
            .into_iter()
            .zip(&self.means)
            .map(|(x, m)| f64::from(u8::from(x)) - m)
            .collect();
        array(self, values, seed)
    }

    fn kernel(&self) -> Option<CovKernel> {
        None
    }

    fn positively_associated(&self) -> bool {
        self.rule.independent()
    }

    fn warnings(&self) -> Vec<String> {
        self.warnings.clone()
    }

    fn graph(&self) -> Option<&GraphTopology> {
        Some(&self.graph)
    }
}

/// SIR on a freshly sampled SBM per replication, de-meaned by pilot means
/// pooled over nodes in blocks of equal size.
#[derive(Clone, Debug)]
pub struct SbmDiffusion {
    params: SbmParams,
    sizes: Vec<usize>,
    labels: Vec<usize>,
    means: Vec<f64>,
}

impl SbmDiffusion {
    pub fn new(params: SbmParams, pilot_reps: usize, pilot_seed: u64) -> Result<Self> {
        params.validate()?;
        if pilot_reps == 0 {
            return Err(invalid("pilot replications must be positive"));
        }
        let sizes = params.block_sizes();
        let labels: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect();
        let mut classes: Vec<usize> = sizes.clone();
        classes.sort_unstable();
        classes.dedup();
        let class_of: Vec<usize> = labels
            .iter()
            .map(|&b| classes.binary_search(&sizes[b]).unwrap())
            .collect();
        let nodes_per_class: Vec<usize> = classes
            .iter()
            .map(|&s| sizes.iter().filter(|&&t| t == s).count() * s)
            .collect();
        let n = params.n;
        let totals: Vec<u64> = (0..pilot_reps)
            .into_par_iter()
            .map_init(
                || Spread::new(n),
                |spread, r| {
                    let x = sbm_outcome_direct(&params, &sizes, derive_seed(pilot_seed, 0, r as u64), spread);
                    let mut t = vec![0u64; classes.len()];
                    for (i, xi) in x.into_iter().enumerate() {
                        t[class_of[i]] += u64::from(xi);
                    }
                    t
                },
            )
            .reduce(
                || vec![0u64; classes.len()],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
        let class_mean: Vec<f64> = totals
            .iter()
            .zip(&nodes_per_class)
            .map(|(&t, &c)| t as f64 / (c as f64 * pilot_reps as f64))
            .collect();
        let means = class_of.iter().map(|&c| class_mean[c]).collect();
        Ok(SbmDiffusion {
            params,
            sizes,
            labels,
            means,
        })
    }

    pub fn params(&self) -> &SbmParams {
        &self.params
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }
}

impl Generator for SbmDiffusion {
    fn model_id(&self) -> ModelId {
        ModelId::SbmDiffusion
    }

    fn n(&self) -> usize {
        self.params.n
    }

    fn generate(&self, seed: u64) -> SampleArray {
        let mut spread = Spread::new(self.params.n);
        let x = sbm_outcome_direct(&self.params, &self.sizes, seed, &mut spread);
        let values = x
            .into_iter()
            .zip(&self.means)
            .map(|(x, m)| f64::from(u8::from(x)) - m)
            .collect();
        array(self, values, seed)
    }

    fn kernel(&self) -> Option<CovKernel> {
        None
    }

    fn positively_associated(&self) -> bool {
        self.params.seed_rule().independent()
    }

    fn warnings(&self) -> Vec<String> {
        self.params.regime().warnings
    }

    fn blocks(&self) -> Option<Vec<usize>> {
        Some(self.labels.clone())
    }
}

/// Gaussian process with Matérn covariance plus nugget `tau2`.
#[derive(Clone)]
pub struct MaternGp {
    locs: Locations,
    params: MaternParams,
    tau2: f64,
    sampler: GaussianSampler,
}

impl MaternGp {
    pub fn new(locs: Locations, params: MaternParams, tau2: f64, min_separation: f64) -> Result<Self> {
        params.validate()?;
        if !(tau2 >= 0.0) {
            return Err(invalid("nugget must be nonnegative"));
        }
        if !(min_separation > 0.0) {
            return Err(invalid("minimum separation must be positive"));
        }
        if let Some((i, j, d)) = locs.min_separation(Metric::Euclidean) {
            if d < min_separation {
                return Err(Error::MinSeparation {
                    i,
                    j,
                    distance: d,
                    min_separation,
                });
            }
        }
        let cov = Self::pair_cov(&locs, params, tau2);
        let sampler = GaussianSampler::new(dense_cov(&cov))?;
        Ok(MaternGp {
            locs,
            params,
            tau2,
            sampler,
        })
    }

    fn pair_cov(locs: &Locations, params: MaternParams, tau2: f64) -> DistanceCov<impl Fn(f64) -> f64 + Send + Sync> {
        DistanceCov {
            locs: locs.clone(),
            metric: Metric::Euclidean,
            f: move |h| params.cov(h),
            nugget: tau2,
        }
    }

    pub fn params(&self) -> &MaternParams {
        &self.params
    }
}

impl Generator for MaternGp {
    fn model_id(&self) -> ModelId {
        ModelId::MaternGp
    }

    fn n(&self) -> usize {
        self.locs.len()
    }

    fn generate(&self, seed: u64) -> SampleArray {
        array(self, self.sampler.sample(seed), seed)
    }

    fn kernel(&self) -> Option<CovKernel> {
        Some(CovKernel::pairwise(
            self.n(),
            1,
            Arc::new(Self::pair_cov(&self.locs, self.params, self.tau2)),
        ))
    }

    fn positively_associated(&self) -> bool {
        true
    }

    fn locations(&self) -> Option<&Locations> {
        Some(&self.locs)
    }
}

pub fn gen_matern_gp(
    locs: &Locations,
    params: MaternParams,
    tau2: f64,
    min_separation: f64,
    seed: u64,
) -> Result<SampleArray> {
    Ok(MaternGp::new(locs.clone(), params, tau2, min_separation)?.generate(seed))
}
