//! Dependent Dirichlet (DD) priors built from sums of independent Gamma
//! variables, the multiplicative (MDD) subfamily, their covariances, and
//! seeded sampling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::correlation::{rho, CorrelationMode};
use crate::error::{Error, Result};
use crate::model::RowLayout;

/// RNG used for every draw; recorded in sample provenance.
pub const RNG_ALGORITHM: &str = "chacha8";

const SUM_TOL: f64 = 1e-12;

/// Symmetric mixing weights `<pi0, pi1, pi2>` on the 2-simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiVector {
    pub pi0: f64,
    pub pi1: f64,
    pub pi2: f64,
}

impl PiVector {
    pub fn new(pi0: f64, pi1: f64, pi2: f64) -> Result<Self> {
        for (name, v) in [("pi0", pi0), ("pi1", pi1), ("pi2", pi2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::hyper(name, v, "must be finite and >= 0"));
            }
        }
        if (pi0 + pi1 + pi2 - 1.0).abs() > SUM_TOL {
            return Err(Error::hyper(
                "pi",
                format!("<{pi0}, {pi1}, {pi2}>"),
                "components must sum to 1",
            ));
        }
        Ok(PiVector { pi0, pi1, pi2 })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.pi0, self.pi1, self.pi2]
    }
}

/// MDD hyperparameters: component shapes are `alpha * mu_x * pi_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MddPrior {
    pub node: String,
    pub alpha: f64,
    pub mu: Vec<f64>,
    pub pi0: f64,
    /// One weight per parent, in parent order.
    pub pi_parent: Vec<f64>,
    pub pi2: f64,
}

impl MddPrior {
    pub fn new(
        node: impl Into<String>,
        alpha: f64,
        mu: Vec<f64>,
        pi0: f64,
        pi_parent: Vec<f64>,
        pi2: f64,
    ) -> Result<Self> {
        let prior = MddPrior {
            node: node.into(),
            alpha,
            mu,
            pi0,
            pi_parent,
            pi2,
        };
        prior.validate()?;
        Ok(prior)
    }

    /// Symmetric MDD: `pi_w = pi1 / |W|`. With no parents the `pi1` mass is
    /// moved to `pi0` (rows are then a single row and only the total matters).
    pub fn symmetric(
        node: impl Into<String>,
        alpha: f64,
        mu: Vec<f64>,
        pi: PiVector,
        n_parents: usize,
    ) -> Result<Self> {
        let (pi0, pi_parent) = if n_parents == 0 {
            (pi.pi0 + pi.pi1, Vec::new())
        } else {
            (pi.pi0, vec![pi.pi1 / n_parents as f64; n_parents])
        };
        Self::new(node, alpha, mu, pi0, pi_parent, pi.pi2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::hyper("alpha", self.alpha, "must be finite and > 0"));
        }
        validate_mu(&self.mu)?;
        let mut total = self.pi0 + self.pi2;
        for (name, v) in [("pi0", self.pi0), ("pi2", self.pi2)]
            .into_iter()
            .chain(self.pi_parent.iter().map(|&v| ("piW", v)))
        {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::hyper(name, v, "must be finite and >= 0"));
            }
        }
        total += self.pi_parent.iter().sum::<f64>();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::hyper("pi", total, "pi0 + sum(piW) + pi2 must equal 1"));
        }
        Ok(())
    }

    pub fn n_values(&self) -> usize {
        self.mu.len()
    }

    /// `sigma_ff = sum_x mu_x (1 - mu_x) / (alpha + 1)`.
    pub fn sigma_ff(&self) -> f64 {
        self.mu.iter().map(|m| m * (1.0 - m)).sum::<f64>() / (self.alpha + 1.0)
    }

    pub fn check_layout(&self, layout: &RowLayout) -> Result<()> {
        if self.pi_parent.len() != layout.n_parents() {
            return Err(Error::Shape(format!(
                "prior for `{}` has {} parent weights but the node has {} parents",
                self.node,
                self.pi_parent.len(),
                layout.n_parents()
            )));
        }
        Ok(())
    }

    /// `gamma = pi0 + sum over agreeing parents of pi_w + [f == g] pi2`.
    pub fn gamma_of_fg(&self, layout: &RowLayout, f: usize, g: usize) -> f64 {
        let (a, b) = (layout.decode(f), layout.decode(g));
        let shared: f64 = a
            .0
            .iter()
            .zip(&b.0)
            .zip(&self.pi_parent)
            .filter(|((x, y), _)| x == y)
            .map(|(_, &p)| p)
            .sum();
        let own = if f == g { self.pi2 } else { 0.0 };
        self.pi0 + shared + own
    }
}

pub(crate) fn validate_mu(mu: &[f64]) -> Result<()> {
    if mu.len() < 2 {
        return Err(Error::hyper("mu", mu.len(), "needs one entry per value (>= 2)"));
    }
    for &m in mu {
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::hyper("mu", m, "each entry must lie in (0, 1)"));
        }
    }
    let total: f64 = mu.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::hyper("mu", total, "entries must sum to 1"));
    }
    Ok(())
}

/// General DD prior given by its Gamma component shape tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdPrior {
    pub node: String,
    pub n_values: usize,
    pub layout: RowLayout,
    /// `alpha0(x)`.
    pub alpha0: Vec<f64>,
    /// Per parent `w`: `alpha_w(x | f_w)` at `level * n_values + x`.
    pub alpha_parent: Vec<Vec<f64>>,
    /// `alpha2(x | f)` at `row * n_values + x`.
    pub alpha2: Vec<f64>,
}

impl DdPrior {
    pub fn new(
        node: impl Into<String>,
        n_values: usize,
        layout: RowLayout,
        alpha0: Vec<f64>,
        alpha_parent: Vec<Vec<f64>>,
        alpha2: Vec<f64>,
    ) -> Result<Self> {
        let prior = DdPrior {
            node: node.into(),
            n_values,
            layout,
            alpha0,
            alpha_parent,
            alpha2,
        };
        prior.validate()?;
        Ok(prior)
    }

    /// Number of independent Gamma components, `|X| (1 + sum_w |F_w| + |F|)`.
    pub fn component_count(&self) -> usize {
        let levels: usize = self.layout.radices().iter().sum();
        self.n_values * (1 + levels + self.layout.n_rows())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_values;
        if k < 2 {
            return Err(Error::Shape("a DD prior needs at least two values".into()));
        }
        let radices = self.layout.radices();
        if self.alpha0.len() != k
            || self.alpha2.len() != k * self.layout.n_rows()
            || self.alpha_parent.len() != radices.len()
            || self
                .alpha_parent
                .iter()
                .zip(&radices)
                .any(|(a, &r)| a.len() != r * k)
        {
            return Err(Error::Shape(format!(
                "component tables for `{}` do not match a {}-row, {}-value CP-table",
                self.node,
                self.layout.n_rows(),
                k
            )));
        }
        let all = self
            .alpha0
            .iter()
            .chain(self.alpha_parent.iter().flatten())
            .chain(&self.alpha2);
        for &a in all {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::hyper("alpha component", a, "must be finite and >= 0"));
            }
        }
        for row in 0..self.layout.n_rows() {
            if self.row_alpha(row).iter().sum::<f64>() <= 0.0 {
                return Err(Error::ImproperRow { row });
            }
        }
        Ok(())
    }

    /// `alpha_{x|f}` for every `x`.
    pub fn row_alpha(&self, row: usize) -> Vec<f64> {
        let k = self.n_values;
        let f = self.layout.decode(row);
        (0..k)
            .map(|x| {
                let parents: f64 = self
                    .alpha_parent
                    .iter()
                    .zip(&f.0)
                    .map(|(a, &level)| a[level * k + x])
                    .sum();
                self.alpha0[x] + parents + self.alpha2[row * k + x]
            })
            .collect()
    }

    /// Prior means `mu_{x|f} = alpha_{x|f} / alpha_{.|f}`, row-major.
    pub fn means(&self) -> Vec<f64> {
        (0..self.layout.n_rows())
            .flat_map(|row| {
                let a = self.row_alpha(row);
                let total: f64 = a.iter().sum();
                a.into_iter().map(move |v| v / total)
            })
            .collect()
    }
}

/// Expands the multiplicative form into component tables.
pub fn mdd_to_dd(prior: &MddPrior, layout: &RowLayout) -> Result<DdPrior> {
    prior.validate()?;
    prior.check_layout(layout)?;
    let am: Vec<f64> = prior.mu.iter().map(|m| prior.alpha * m).collect();
    let alpha0 = am.iter().map(|a| a * prior.pi0).collect();
    let alpha_parent = layout
        .radices()
        .iter()
        .zip(&prior.pi_parent)
        .map(|(&levels, &pw)| (0..levels).flat_map(|_| am.iter().map(move |a| a * pw)).collect())
        .collect();
    let alpha2 = (0..layout.n_rows())
        .flat_map(|_| am.iter().map(|a| a * prior.pi2))
        .collect();
    DdPrior::new(
        prior.node.clone(),
        prior.mu.len(),
        layout.clone(),
        alpha0,
        alpha_parent,
        alpha2,
    )
}

/// MDD covariance structure: `Cov(theta_{x|f}, theta_{y|g}) =
/// mu_x (delta_xy - mu_y)/(alpha+1) * rho_fg`.
#[derive(Debug, Clone, PartialEq)]
pub struct MddCovariance {
    pub alpha: f64,
    pub mu: Vec<f64>,
    pub sigma_ff: f64,
    pub mode: CorrelationMode,
    n_rows: usize,
    rho: Vec<f64>,
}

impl MddCovariance {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn rho(&self, f: usize, g: usize) -> f64 {
        self.rho[f * self.n_rows + g]
    }

    /// Same model in per-`(x, f, g)` form.
    pub fn to_general(&self) -> GeneralCovariance {
        let (k, r) = (self.mu.len(), self.n_rows);
        let mut cov = vec![0.0; k * r * r];
        for x in 0..k {
            let var = self.mu[x] * (1.0 - self.mu[x]) / (self.alpha + 1.0);
            for f in 0..r {
                for g in 0..r {
                    cov[(x * r + f) * r + g] = var * self.rho(f, g);
                }
            }
        }
        GeneralCovariance {
            n_values: k,
            n_rows: r,
            means: (0..r).flat_map(|_| self.mu.iter().copied()).collect(),
            cov,
            estimate: None,
        }
    }
}

pub fn mdd_covariance_model(
    prior: &MddPrior,
    layout: &RowLayout,
    mode: CorrelationMode,
) -> Result<MddCovariance> {
    prior.validate()?;
    prior.check_layout(layout)?;
    let r = layout.n_rows();
    let mut memo: HashMap<u64, f64> = HashMap::new();
    let mut table = vec![0.0; r * r];
    for f in 0..r {
        table[f * r + f] = 1.0;
        for g in f + 1..r {
            let gamma = prior.gamma_of_fg(layout, f, g);
            let value = match memo.get(&gamma.to_bits()) {
                Some(&v) => v,
                None => {
                    let v = rho(prior.alpha, gamma, mode)?;
                    memo.insert(gamma.to_bits(), v);
                    v
                }
            };
            table[f * r + g] = value;
            table[g * r + f] = value;
        }
    }
    Ok(MddCovariance {
        alpha: prior.alpha,
        mu: prior.mu.clone(),
        sigma_ff: prior.sigma_ff(),
        mode,
        n_rows: r,
        rho: table,
    })
}

/// Monte Carlo diagnostics attached to an estimated covariance model.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub samples: usize,
    pub seed: u64,
    /// Empirical means, row-major, and their standard errors.
    pub sample_means: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// Standard errors of `cov`, same layout.
    pub cov_se: Vec<f64>,
    pub rng: &'static str,
}

/// Means and same-column covariances `sigma_{xfg}` of a general DD prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralCovariance {
    pub n_values: usize,
    pub n_rows: usize,
    /// `mu_{x|f}` at `row * n_values + x`.
    pub means: Vec<f64>,
    /// `sigma_{xfg}` at `(x * n_rows + f) * n_rows + g`.
    pub cov: Vec<f64>,
    pub estimate: Option<McEstimate>,
}

impl GeneralCovariance {
    pub fn mean(&self, row: usize, x: usize) -> f64 {
        self.means[row * self.n_values + x]
    }

    pub fn sigma(&self, x: usize, f: usize, g: usize) -> f64 {
        self.cov[(x * self.n_rows + f) * self.n_rows + g]
    }

    /// `sigma_fg = sum_x sigma_{xfg}`.
    pub fn sigma_sum(&self, f: usize, g: usize) -> f64 {
        (0..self.n_values).map(|x| self.sigma(x, f, g)).sum()
    }

    pub fn sigma_se(&self, x: usize, f: usize, g: usize) -> Option<f64> {
        self.estimate
            .as_ref()
            .map(|e| e.cov_se[(x * self.n_rows + f) * self.n_rows + g])
    }

    /// `Corr(theta_{x|f}, theta_{x|g})`.
    pub fn correlation(&self, x: usize, f: usize, g: usize) -> f64 {
        self.sigma(x, f, g) / (self.sigma(x, f, f) * self.sigma(x, g, g)).sqrt()
    }
}

/// One sampled CP-table, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSample {
    pub theta: Vec<f64>,
    pub seed: u64,
    pub index: usize,
    pub rng: &'static str,
}

/// Draws `ln(eta)` for `eta ~ Gamma(shape)`. Shapes below one use the
/// boost `Gamma(shape) = Gamma(shape + 1) * U^(1/shape)`, carried in log
/// space so tiny shapes cannot underflow to an all-zero row.
#[derive(Debug, Clone, Copy)]
enum LogGamma {
    Zero,
    Direct(Gamma<f64>),
    Boosted(Gamma<f64>, f64),
}

impl LogGamma {
    fn new(shape: f64) -> Result<Self> {
        let dist = |s: f64| Gamma::new(s, 1.0).map_err(|e| Error::Numeric(e.to_string()));
        Ok(if shape == 0.0 {
            LogGamma::Zero
        } else if shape < 1.0 {
            LogGamma::Boosted(dist(shape + 1.0)?, shape)
        } else {
            LogGamma::Direct(dist(shape)?)
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            LogGamma::Zero => f64::NEG_INFINITY,
            LogGamma::Direct(g) => g.sample(rng).ln(),
            LogGamma::Boosted(g, shape) => {
                let u: f64 = rng.random();
                g.sample(rng).ln() + u.ln() / shape
            }
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Streaming sampler over a DD prior. Components are drawn in a fixed order:
/// the `alpha0` block, then each parent's block in parent order, then the
/// `alpha2` block, each row-major.
pub struct PriorSampler {
    n_values: usize,
    layout: RowLayout,
    radices: Vec<usize>,
    base: Vec<LogGamma>,
    parent: Vec<Vec<LogGamma>>,
    own: Vec<LogGamma>,
    rng: ChaCha8Rng,
    // scratch, in log space
    l_base: Vec<f64>,
    l_parent: Vec<Vec<f64>>,
    l_own: Vec<f64>,
    l_row: Vec<f64>,
}

impl PriorSampler {
    pub fn new(spec: &DdPrior, seed: u64) -> Result<Self> {
        spec.validate()?;
        let build = |v: &[f64]| v.iter().map(|&a| LogGamma::new(a)).collect::<Result<Vec<_>>>();
        let parent = spec
            .alpha_parent
            .iter()
            .map(|a| build(a))
            .collect::<Result<Vec<_>>>()?;
        Ok(PriorSampler {
            n_values: spec.n_values,
            layout: spec.layout.clone(),
            radices: spec.layout.radices(),
            base: build(&spec.alpha0)?,
            l_parent: parent.iter().map(|p| vec![0.0; p.len()]).collect(),
            parent,
            own: build(&spec.alpha2)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            l_base: vec![0.0; spec.n_values],
            l_own: vec![0.0; spec.alpha2.len()],
            l_row: vec![0.0; spec.n_values],
        })
    }

    pub fn table_len(&self) -> usize {
        self.n_values * self.layout.n_rows()
    }

    /// Fills `theta` (row-major) with one draw.
    pub fn draw_into(&mut self, theta: &mut [f64]) {
        let k = self.n_values;
        assert_eq!(theta.len(), self.table_len());
        for (out, d) in self.l_base.iter_mut().zip(&self.base) {
            *out = d.sample(&mut self.rng);
        }
        for (outs, dists) in self.l_parent.iter_mut().zip(&self.parent) {
            for (out, d) in outs.iter_mut().zip(dists) {
                *out = d.sample(&mut self.rng);
            }
        }
        for (out, d) in self.l_own.iter_mut().zip(&self.own) {
            *out = d.sample(&mut self.rng);
        }
        let mut digits = vec![0usize; self.radices.len()];
        for row in 0..self.layout.n_rows() {
            let mut total = f64::NEG_INFINITY;
            for x in 0..k {
                let mut v = log_add(self.l_base[x], self.l_own[row * k + x]);
                for (w, &level) in digits.iter().enumerate() {
                    v = log_add(v, self.l_parent[w][level * k + x]);
                }
                self.l_row[x] = v;
                total = log_add(total, v);
            }
            assert!(total.is_finite(), "row {row} drew an all-zero Gamma sum");
            for x in 0..k {
                theta[row * k + x] = (self.l_row[x] - total).exp();
            }
            // advance the mixed-radix counter (last parent fastest)
            for (d, &r) in digits.iter_mut().zip(&self.radices).rev() {
                *d += 1;
                if *d < r {
                    break;
                }
                *d = 0;
            }
        }
    }
}

pub fn sample_prior(spec: &DdPrior, seed: u64, count: usize) -> Result<Vec<PriorSample>> {
    if count == 0 {
        return Err(Error::hyper("count", 0, "must be >= 1"));
    }
    let mut sampler = PriorSampler::new(spec, seed)?;
    Ok((0..count)
        .map(|index| {
            let mut theta = vec![0.0; sampler.table_len()];
            sampler.draw_into(&mut theta);
            PriorSample {
                theta,
                seed,
                index,
                rng: RNG_ALGORITHM,
            }
        })
        .collect())
}

pub const MIN_MC_SAMPLES: usize = 10_000;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompSum {
    sum: f64,
    carry: f64,
}

impl CompSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Estimates `sigma_{xfg}` by sampling. Deviations are taken around the
/// analytic means, which also become the model's means.
pub fn mc_covariance_model(spec: &DdPrior, seed: u64, samples: usize) -> Result<GeneralCovariance> {
    if samples < MIN_MC_SAMPLES {
        return Err(Error::hyper(
            "samples",
            samples,
            &format!("Monte Carlo covariance needs at least {MIN_MC_SAMPLES} draws"),
        ));
    }
    let (k, r) = (spec.n_values, spec.layout.n_rows());
    let means = spec.means();
    let mut sampler = PriorSampler::new(spec, seed)?;
    let mut theta = vec![0.0; k * r];
    let mut dev = vec![0.0; k * r];
    let mut s1 = vec![CompSum::default(); k * r];
    let mut s1sq = vec![CompSum::default(); k * r];
    let mut s2 = vec![CompSum::default(); k * r * r];
    let mut s2sq = vec![CompSum::default(); k * r * r];
    for _ in 0..samples {
        sampler.draw_into(&mut theta);
        for i in 0..k * r {
            dev[i] = theta[i] - means[i];
            s1[i].add(dev[i]);
            s1sq[i].add(dev[i] * dev[i]);
        }
        for x in 0..k {
            for f in 0..r {
                let df = dev[f * k + x];
                for g in f..r {
                    let q = df * dev[g * k + x];
                    let idx = (x * r + f) * r + g;
                    s2[idx].add(q);
                    s2sq[idx].add(q * q);
                }
            }
        }
    }
    let n = samples as f64;
    let mut cov = vec![0.0; k * r * r];
    let mut cov_se = vec![0.0; k * r * r];
    for x in 0..k {
        for f in 0..r {
            for g in f..r {
                let idx = (x * r + f) * r + g;
                let mean_q = s2[idx].value() / n;
                let shift = s1[f * k + x].value() / n * s1[g * k + x].value() / n;
                let var_q = (s2sq[idx].value() / n - mean_q * mean_q).max(0.0);
                let c = mean_q - shift;
                let se = (var_q / n).sqrt();
                for (a, b) in [(f, g), (g, f)] {
                    cov[(x * r + a) * r + b] = c;
                    cov_se[(x * r + a) * r + b] = se;
                }
            }
        }
    }
    let sample_means = (0..k * r).map(|i| means[i] + s1[i].value() / n).collect();
    let mean_se = (0..k * r)
        .map(|i| {
            let m = s1[i].value() / n;
            ((s1sq[i].value() / n - m * m).max(0.0) / n).sqrt()
        })
        .collect();
    Ok(GeneralCovariance {
        n_values: k,
        n_rows: r,
        means,
        cov,
        estimate: Some(McEstimate {
            samples,
            seed,
            sample_means,
            mean_se,
            cov_se,
            rng: RNG_ALGORITHM,
        }),
    })
}
