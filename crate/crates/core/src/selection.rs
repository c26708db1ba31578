//! Choosing `pi`: MSE-ratio sensitivity over the simplex, and empirical Bayes
//! fits of `pi` from pooled pairwise correlation estimates.

use serde::Serialize;

use crate::correlation::CorrelationMode;
use crate::error::{Error, Result};
use crate::estimator::{build_b_mdd, solve_weights, EstimationContext};
use crate::model::{proportions, CountTable, ProportionTable, RowLayout};
use crate::prior::{mdd_covariance_model, validate_mu, MddPrior};

pub use crate::prior::PiVector;

/// Counts and hyperparameters held fixed while `pi` varies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub radices: Vec<usize>,
    /// `n_g` for every row.
    pub totals: Vec<u64>,
    pub alpha: f64,
    pub mu: Vec<f64>,
}

impl Scenario {
    pub fn new(radices: &[usize], totals: Vec<u64>, alpha: f64, mu: Vec<f64>) -> Result<Self> {
        let rows: usize = radices.iter().product();
        if totals.len() != rows {
            return Err(Error::Shape(format!("{} totals for {rows} rows", totals.len())));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::hyper("alpha", alpha, "must be finite and > 0"));
        }
        validate_mu(&mu)?;
        Ok(Scenario {
            radices: radices.to_vec(),
            totals,
            alpha,
            mu,
        })
    }

    /// Four binary parents, three cases per row, `alpha = 2`, `mu = 0.5`.
    pub fn figure1() -> Self {
        Scenario::new(&[2; 4], vec![3; 16], 2.0, vec![0.5, 0.5]).expect("valid fixture")
    }

    pub fn layout(&self) -> RowLayout {
        RowLayout::from_radices(&self.radices)
    }

    fn prior(&self, pi: PiVector) -> Result<MddPrior> {
        MddPrior::symmetric("scenario", self.alpha, self.mu.clone(), pi, self.radices.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRatioPoint {
    pub select: PiVector,
    pub truth: PiVector,
    pub target: usize,
    pub ratio: f64,
}

/// MSE of the weights optimal under `select`, evaluated under `truth`,
/// relative to the minimum MSE under `truth`.
pub fn mse_ratio(
    select: PiVector,
    truth: PiVector,
    scenario: &Scenario,
    target: usize,
    mode: CorrelationMode,
) -> Result<MseRatioPoint> {
    let layout = scenario.layout();
    if target >= layout.n_rows() {
        return Err(Error::Shape(format!("no row {target}")));
    }
    let ctx = EstimationContext::from_totals(target, &scenario.totals);
    let b_of = |pi: PiVector| -> Result<_> {
        let cov = mdd_covariance_model(&scenario.prior(pi)?, &layout, mode)?;
        build_b_mdd(&ctx, &cov, true)
    };
    let b_s = b_of(select)?;
    let b_t = b_of(truth)?;
    let a_s = solve_weights(&b_s)?.weights;
    let best = solve_weights(&b_t)?;
    let d = a_s.len();
    let mut num = 0.0;
    for i in 0..d {
        for j in 0..d {
            num += a_s[i] * b_t.matrix[(i, j)] * a_s[j];
        }
    }
    Ok(MseRatioPoint {
        select,
        truth,
        target,
        ratio: num / best.multiplier,
    })
}

/// Lattice of `pi` with components in multiples of `step`: `pi2` ascending,
/// then `pi0` ascending within each `pi2`.
pub fn simplex_lattice(step: f64) -> Result<Vec<PiVector>> {
    let m = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || (m * step - 1.0).abs() > 1e-9 {
        return Err(Error::hyper("step", step, "must divide 1"));
    }
    let m = m as usize;
    let mut out = Vec::with_capacity((m + 1) * (m + 2) / 2);
    for i in 0..=m {
        for j in 0..=m - i {
            let pi2 = i as f64 / m as f64;
            let pi0 = j as f64 / m as f64;
            let pi1 = (m - i - j) as f64 / m as f64;
            out.push(PiVector { pi0, pi1, pi2 });
        }
    }
    Ok(out)
}

/// [`mse_ratio`] over [`simplex_lattice`]. When every row has the same count
/// the rows are exchangeable, and the first and last rows are checked to give
/// the same ratio.
pub fn mse_ratio_grid(
    select: PiVector,
    scenario: &Scenario,
    step: f64,
    mode: CorrelationMode,
) -> Result<Vec<MseRatioPoint>> {
    let last = scenario.totals.len() - 1;
    let exchangeable = scenario.totals.iter().all(|&n| n == scenario.totals[0]);
    simplex_lattice(step)?
        .into_iter()
        .map(|truth| {
            let point = mse_ratio(select, truth, scenario, 0, mode)?;
            if exchangeable && last > 0 {
                let other = mse_ratio(select, truth, scenario, last, mode)?;
                if (other.ratio - point.ratio).abs() > 1e-9 * point.ratio.abs().max(1.0) {
                    return Err(Error::Numeric(format!(
                        "rows 0 and {last} disagree: {} vs {}",
                        point.ratio, other.ratio
                    )));
                }
            }
            Ok(point)
        })
        .collect()
}

/// One `(rho_hat_fg, c_fg)` pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSample {
    pub node: String,
    pub f: usize,
    pub g: usize,
    pub rho_hat: f64,
    /// Fraction of parents on which `f` and `g` agree.
    pub c: f64,
}

/// `rho_hat_fg = (alpha+1)/(mu_x(1-mu_x)) (p_{x|f}-mu_x)(p_{x|g}-mu_x)`,
/// averaged over `x`, for each unordered pair of active rows.
pub fn rho_hat_pairs(
    props: &ProportionTable,
    alpha: f64,
    mu: &[f64],
) -> Result<Vec<RegressionSample>> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::hyper("alpha", alpha, "must be finite and > 0"));
    }
    validate_mu(mu)?;
    if mu.len() != props.n_values() {
        return Err(Error::Shape(format!(
            "{} means for {} values of `{}`",
            mu.len(),
            props.n_values(),
            props.node
        )));
    }
    let k = mu.len() as f64;
    let n_parents = props.layout.n_parents();
    let active = props.active_rows();
    let mut out = Vec::new();
    for (i, &f) in active.iter().enumerate() {
        let pf = props.p(f).expect("active");
        for &g in &active[i + 1..] {
            let pg = props.p(g).expect("active");
            let rho_hat = mu
                .iter()
                .enumerate()
                .map(|(x, &m)| (alpha + 1.0) / (m * (1.0 - m)) * (pf[x] - m) * (pg[x] - m))
                .sum::<f64>()
                / k;
            out.push(RegressionSample {
                node: props.node.clone(),
                f,
                g,
                rho_hat,
                c: props.layout.agreement(f, g) as f64 / n_parents as f64,
            });
        }
    }
    Ok(out)
}

/// Per-table input to [`pool_across_tables`].
#[derive(Debug, Clone, Copy)]
pub struct PoolInput<'a> {
    pub props: &'a ProportionTable,
    pub alpha: f64,
    pub mu: &'a [f64],
}

/// Concatenates the pairs of every table with at least one parent.
pub fn pool_across_tables(inputs: &[PoolInput<'_>]) -> Result<Vec<RegressionSample>> {
    let mut out = Vec::new();
    for input in inputs.iter().filter(|i| i.props.layout.n_parents() > 0) {
        out.extend(rho_hat_pairs(input.props, input.alpha, input.mu)?);
    }
    if out.is_empty() {
        return Err(Error::Precondition(
            "no pairable rows: no parented node has two rows with data".into(),
        ));
    }
    Ok(out)
}

/// [`pool_across_tables`] with the flat prior `alpha = |X|`, `mu_x = 1/|X|`.
pub fn pool_flat(tables: &[CountTable]) -> Result<Vec<RegressionSample>> {
    let props: Vec<_> = tables.iter().map(proportions).collect();
    let mus: Vec<Vec<f64>> = tables
        .iter()
        .map(|t| vec![1.0 / t.n_values() as f64; t.n_values()])
        .collect();
    let inputs: Vec<_> = props
        .iter()
        .zip(&mus)
        .map(|(p, mu)| PoolInput {
            props: p,
            alpha: mu.len() as f64,
            mu,
        })
        .collect();
    pool_across_tables(&inputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitPath {
    Unconstrained,
    /// `pi0 = 0`.
    ZeroIntercept,
    /// `pi1 = 0`.
    ZeroSlope,
    /// `pi0 + pi1 = 1`.
    NoIdiosyncratic,
}

impl FitPath {
    pub fn as_str(self) -> &'static str {
        match self {
            FitPath::Unconstrained => "unconstrained",
            FitPath::ZeroIntercept => "zero_intercept",
            FitPath::ZeroSlope => "zero_slope",
            FitPath::NoIdiosyncratic => "no_idiosyncratic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiFit {
    pub pi: PiVector,
    pub path: FitPath,
    pub rss: f64,
    pub samples: usize,
    /// Fewer than two distinct `c` values: the slope is not identified.
    pub degenerate: bool,
}

fn rss(samples: &[RegressionSample], pi0: f64, pi1: f64) -> f64 {
    samples
        .iter()
        .map(|s| (s.rho_hat - pi0 - pi1 * s.c).powi(2))
        .sum()
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Least-squares line `rho_hat = pi0 + pi1 c` subject to `pi0, pi1 >= 0`,
/// `pi0 + pi1 <= 1`.
pub fn fit_pi(samples: &[RegressionSample]) -> Result<PiFit> {
    if samples.is_empty() {
        return Err(Error::Precondition("no regression samples".into()));
    }
    if let Some(s) = samples.iter().find(|s| !s.rho_hat.is_finite() || !s.c.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite sample for `{}` rows {}/{}",
            s.node, s.f, s.g
        )));
    }
    let n = samples.len() as f64;
    let c_mean = samples.iter().map(|s| s.c).sum::<f64>() / n;
    let y_mean = samples.iter().map(|s| s.rho_hat).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.c - c_mean).powi(2)).sum();
    let degenerate = !samples.iter().any(|s| s.c != samples[0].c);

    let finish = |pi0: f64, pi1: f64, path| PiFit {
        pi: PiVector {
            pi0,
            pi1,
            pi2: (1.0 - pi0 - pi1).max(0.0),
        },
        path,
        rss: rss(samples, pi0, pi1),
        samples: samples.len(),
        degenerate,
    };

    if !degenerate && samples.len() >= 2 {
        let sxy: f64 = samples
            .iter()
            .map(|s| (s.c - c_mean) * (s.rho_hat - y_mean))
            .sum();
        let pi1 = sxy / sxx;
        let pi0 = y_mean - pi1 * c_mean;
        if pi0 >= 0.0 && pi1 >= 0.0 && pi0 + pi1 <= 1.0 {
            return Ok(finish(pi0, pi1, FitPath::Unconstrained));
        }
    }

    let scc: f64 = samples.iter().map(|s| s.c * s.c).sum();
    let scy: f64 = samples.iter().map(|s| s.c * s.rho_hat).sum();
    let i = ratio_or_zero(scy, scc).clamp(0.0, 1.0);
    let ii = y_mean.clamp(0.0, 1.0);
    let s11: f64 = samples.iter().map(|s| (1.0 - s.c).powi(2)).sum();
    let s1y: f64 = samples
        .iter()
        .map(|s| (1.0 - s.c) * (s.rho_hat - s.c))
        .sum();
    let iii = ratio_or_zero(s1y, s11).clamp(0.0, 1.0);

    let candidates = [
        finish(0.0, i, FitPath::ZeroIntercept),
        finish(ii, 0.0, FitPath::ZeroSlope),
        finish(iii, 1.0 - iii, FitPath::NoIdiosyncratic),
    ];
    let mut best = candidates[0].clone();
    for c in &candidates[1..] {
        if c.rss < best.rss - 1e-12 * (1.0 + best.rss) {
            best = c.clone();
        }
    }
    Ok(best)
}
