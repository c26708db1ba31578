//! Optimal linear estimators for CP-table rows.
//!
//! For a target row `f`, the estimate is `sum_g a_g p*_{x|g}` over the active
//! rows plus a pseudo-row `f*` whose "proportion" is the prior mean. The
//! weights minimise `a'Ba` subject to `sum a = 1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::correlation::CorrelationMode;
use crate::error::{Error, Result};
use crate::model::{proportions, CountTable, ProportionTable, RowLayout};
use crate::prior::{
    mc_covariance_model, mdd_covariance_model, validate_mu, DdPrior, GeneralCovariance,
    MddCovariance, MddPrior,
};

/// Condition number above which the weights are treated as non-unique.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// A member of the solve set `F^c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveRow {
    Row(usize),
    PriorMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationContext {
    pub target: usize,
    /// `F^a`, ascending.
    pub active: Vec<usize>,
    /// `n_g` for each active row.
    pub n: Vec<u64>,
    /// `p*_{x|g}` for each member of `F^c` (active rows, then `f*`). Empty
    /// when the context was built from counts alone.
    pub shifted: Vec<Vec<f64>>,
}

impl EstimationContext {
    /// Context carrying only the row totals; enough to build `B`.
    pub fn from_totals(target: usize, totals: &[u64]) -> Self {
        let active: Vec<usize> = (0..totals.len()).filter(|&g| totals[g] > 0).collect();
        EstimationContext {
            target,
            n: active.iter().map(|&g| totals[g]).collect(),
            active,
            shifted: Vec::new(),
        }
    }

    pub fn d(&self) -> usize {
        self.active.len() + 1
    }

    pub fn labels(&self) -> Vec<SolveRow> {
        self.active
            .iter()
            .map(|&g| SolveRow::Row(g))
            .chain(std::iter::once(SolveRow::PriorMean))
            .collect()
    }
}

/// Builds the context for target row `target`. `means` holds `mu_{x|g}`
/// row-major; `p*_{x|g} = p_{x|g} - mu_{x|g} + mu_{x|f}`.
pub fn build_context(
    target: usize,
    props: &ProportionTable,
    means: &[f64],
) -> Result<EstimationContext> {
    let k = props.n_values();
    if means.len() != k * props.n_rows() || target >= props.n_rows() {
        return Err(Error::Shape(format!(
            "means of length {} / target {target} for a {}x{k} table",
            means.len(),
            props.n_rows()
        )));
    }
    let mu_f = &means[target * k..(target + 1) * k];
    let mut ctx = EstimationContext::from_totals(target, &props.n);
    ctx.shifted = ctx
        .active
        .iter()
        .map(|&g| {
            let p = props.p(g).expect("active rows have proportions");
            (0..k).map(|x| p[x] - means[g * k + x] + mu_f[x]).collect()
        })
        .chain(std::iter::once(mu_f.to_vec()))
        .collect();
    Ok(ctx)
}

/// The `d x d` matrix `b_gh = sum_x E{(p*_{x|g} - theta_{x|f})(p*_{x|h} - theta_{x|f})}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BMatrix {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<SolveRow>,
    /// Factor divided out of every entry (`sigma_ff` when scaled, else 1).
    pub scale: f64,
}

impl BMatrix {
    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_scaled(&self) -> bool {
        self.scale != 1.0
    }

    /// Row-major copy, for dumps.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.matrix.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// MDD form of `B`. With `scaled`, the common factor `sigma_ff` is left out.
pub fn build_b_mdd(ctx: &EstimationContext, cov: &MddCovariance, scaled: bool) -> Result<BMatrix> {
    let f = ctx.target;
    if f >= cov.n_rows() || ctx.active.iter().any(|&g| g >= cov.n_rows()) {
        return Err(Error::Shape(format!(
            "correlation model covers {} rows; context needs row {}",
            cov.n_rows(),
            ctx.active.iter().copied().chain([f]).max().unwrap_or(0)
        )));
    }
    let s = if scaled { 1.0 } else { cov.sigma_ff };
    let d = ctx.d();
    let mut b = DMatrix::zeros(d, d);
    for (i, &g) in ctx.active.iter().enumerate() {
        for (j, &h) in ctx.active.iter().enumerate() {
            let sampling = if i == j { cov.alpha / ctx.n[i] as f64 } else { 0.0 };
            b[(i, j)] = s * (sampling + 1.0 + cov.rho(g, h) - cov.rho(f, g) - cov.rho(f, h));
        }
        let edge = s * (1.0 - cov.rho(f, g));
        b[(i, d - 1)] = edge;
        b[(d - 1, i)] = edge;
    }
    b[(d - 1, d - 1)] = s;
    Ok(BMatrix {
        matrix: b,
        labels: ctx.labels(),
        scale: if scaled { cov.sigma_ff } else { 1.0 },
    })
}

/// General form of `B` from means and same-column covariances.
pub fn build_b_general(ctx: &EstimationContext, cov: &GeneralCovariance) -> Result<BMatrix> {
    let f = ctx.target;
    if f >= cov.n_rows || ctx.active.iter().any(|&g| g >= cov.n_rows) {
        return Err(Error::Shape(format!(
            "covariance model covers {} rows; context needs more",
            cov.n_rows
        )));
    }
    let d = ctx.d();
    let s_ff = cov.sigma_sum(f, f);
    let mut b = DMatrix::zeros(d, d);
    for (i, &g) in ctx.active.iter().enumerate() {
        for (j, &h) in ctx.active.iter().enumerate() {
            let sampling = if i == j {
                (0..cov.n_values)
                    .map(|x| {
                        let m = cov.mean(g, x);
                        m * (1.0 - m) - cov.sigma(x, g, g)
                    })
                    .sum::<f64>()
                    / ctx.n[i] as f64
            } else {
                0.0
            };
            b[(i, j)] = sampling + s_ff + cov.sigma_sum(g, h) - cov.sigma_sum(g, f)
                - cov.sigma_sum(h, f);
        }
        let edge = s_ff - cov.sigma_sum(g, f);
        b[(i, d - 1)] = edge;
        b[(d - 1, i)] = edge;
    }
    b[(d - 1, d - 1)] = s_ff;
    Ok(BMatrix {
        matrix: b,
        labels: ctx.labels(),
        scale: 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSolution {
    pub labels: Vec<SolveRow>,
    pub weights: Vec<f64>,
    /// `a'Ba` in absolute units (scale restored).
    pub mse: f64,
    /// `c` in `Ba = c 1`, in the units of the matrix that was solved.
    pub multiplier: f64,
    pub condition: f64,
    /// `max |Ba - c 1|`.
    pub residual: f64,
    pub unique: bool,
}

impl WeightSolution {
    pub fn weight_of(&self, label: SolveRow) -> f64 {
        self.labels
            .iter()
            .position(|&l| l == label)
            .map_or(0.0, |i| self.weights[i])
    }

    pub fn prior_weight(&self) -> f64 {
        self.weight_of(SolveRow::PriorMean)
    }
}

fn quad_form(b: &DMatrix<f64>, a: &DVector<f64>) -> f64 {
    a.dot(&(b * a))
}

/// Minimises `a'Ba` subject to `sum a = 1`.
///
/// A well-conditioned `B` gives `a = B^-1 1 / (1' B^-1 1)`. Above
/// [`SINGULAR_CONDITION`] the bordered system `[B -1; 1' 0][a; c] = [0; 1]`
/// is solved by SVD pseudo-inverse, giving its minimum-norm solution, and the
/// result is flagged non-unique.
pub fn solve_weights(b: &BMatrix) -> Result<WeightSolution> {
    let m = &b.matrix;
    let d = m.nrows();
    if d == 0 || m.ncols() != d {
        return Err(Error::Shape(format!("B is {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd("non-finite entry".into()));
    }
    let norm = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..d {
        for j in i + 1..d {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * norm.max(f64::MIN_POSITIVE) {
                return Err(Error::NotPsd(format!("B[{i},{j}] != B[{j},{i}]")));
            }
        }
    }
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if lmin < -1e-9 * lmax.abs().max(norm) {
        return Err(Error::NotPsd(format!("smallest eigenvalue {lmin:e}")));
    }
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    let ones = DVector::from_element(d, 1.0);

    let chol = (condition <= SINGULAR_CONDITION)
        .then(|| m.clone().cholesky())
        .flatten();
    let (a, unique) = match chol {
        Some(chol) => {
            let x = chol.solve(&ones);
            let total = x.sum();
            (x / total, true)
        }
        None => {
            let mut kkt = DMatrix::zeros(d + 1, d + 1);
            kkt.view_mut((0, 0), (d, d)).copy_from(m);
            for i in 0..d {
                kkt[(i, d)] = -1.0;
                kkt[(d, i)] = 1.0;
            }
            let mut rhs = DVector::zeros(d + 1);
            rhs[d] = 1.0;
            let svd = kkt.svd(true, true);
            let eps = 1e-12 * svd.singular_values.max();
            let sol = svd
                .solve(&rhs, eps)
                .map_err(|e| Error::Numeric(e.to_string()))?;
            (sol.rows(0, d).into_owned(), false)
        }
    };

    let mse = quad_form(m, &a);
    let residual = (m * &a).iter().fold(0.0f64, |acc, v| acc.max((v - mse).abs()));
    let sum_err = (a.sum() - 1.0).abs();
    if sum_err > 1e-10 || residual > 1e-8 * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Numeric(format!(
            "weight solve failed optimality check (sum error {sum_err:e}, residual {residual:e})"
        )));
    }
    Ok(WeightSolution {
        labels: b.labels.clone(),
        weights: a.iter().copied().collect(),
        mse: mse * b.scale,
        multiplier: mse,
        condition,
        residual,
        unique,
    })
}

/// Prior attached to a node for estimation.
#[derive(Debug, Clone, PartialEq)]
pub enum NodePrior {
    Mdd(MddPrior),
    Dd(DdPrior),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateOptions {
    pub mode: CorrelationMode,
    /// Clamp inadmissible estimates into `[0, 1]`.
    pub adjust: bool,
    /// After clamping, rescale each row to sum to one.
    pub renormalize: bool,
    /// Divide `sigma_ff` out of MDD `B` matrices.
    pub scaled: bool,
    /// Monte Carlo settings for general DD covariances.
    pub mc_seed: u64,
    pub mc_samples: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            mode: CorrelationMode::default(),
            adjust: false,
            renormalize: false,
            scaled: true,
            mc_seed: 0,
            mc_samples: 200_000,
        }
    }
}

/// Weights and `B` used for one target row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowWeights {
    pub solution: WeightSolution,
    pub b: Vec<Vec<f64>>,
    pub b_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    pub node: String,
    pub values: Vec<String>,
    pub layout: RowLayout,
    /// `theta_hat_{x|f}`, row-major.
    pub theta: Vec<f64>,
    pub clamped: Vec<bool>,
    /// Present for optimal linear estimates; `None` for closed forms.
    pub rows: Vec<Option<RowWeights>>,
}

impl EstimateTable {
    fn closed_form(counts: &CountTable, theta: Vec<f64>) -> Self {
        EstimateTable {
            node: counts.node.clone(),
            values: counts.values.clone(),
            layout: counts.layout.clone(),
            clamped: vec![false; theta.len()],
            theta,
            rows: vec![None; counts.n_rows()],
        }
    }

    pub fn n_values(&self) -> usize {
        self.values.len()
    }

    pub fn theta(&self, row: usize, x: usize) -> f64 {
        self.theta[row * self.values.len() + x]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let k = self.values.len();
        &self.theta[row * k..(row + 1) * k]
    }

    pub fn clamped_cells(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }

    pub fn weights(&self, row: usize) -> Option<&WeightSolution> {
        self.rows[row].as_ref().map(|r| &r.solution)
    }
}

fn check_shapes(counts: &CountTable, n_values: usize, layout: &RowLayout) -> Result<()> {
    if counts.n_values() != n_values || counts.layout.radices() != layout.radices() {
        return Err(Error::Shape(format!(
            "prior for `{}` does not cover its {}x{} CP-table",
            counts.node,
            counts.n_rows(),
            counts.n_values()
        )));
    }
    Ok(())
}

/// Optimal linear estimates for every row of one node's CP-table.
pub fn estimate_node(
    counts: &CountTable,
    prior: &NodePrior,
    opts: &EstimateOptions,
) -> Result<EstimateTable> {
    enum Cov {
        Mdd(MddCovariance),
        General(GeneralCovariance),
    }
    let (means, cov) = match prior {
        NodePrior::Mdd(p) => {
            if p.n_values() != counts.n_values() {
                return Err(Error::Shape(format!(
                    "prior for `{}` has {} means but the node has {} values",
                    counts.node,
                    p.n_values(),
                    counts.n_values()
                )));
            }
            let cov = mdd_covariance_model(p, &counts.layout, opts.mode)?;
            let means = (0..counts.n_rows()).flat_map(|_| p.mu.iter().copied()).collect();
            (means, Cov::Mdd(cov))
        }
        NodePrior::Dd(p) => {
            check_shapes(counts, p.n_values, &p.layout)?;
            let cov = mc_covariance_model(p, opts.mc_seed, opts.mc_samples)?;
            (cov.means.clone(), Cov::General(cov))
        }
    };
    let props = proportions(counts);
    let k = counts.n_values();
    let mut theta = vec![0.0; k * counts.n_rows()];
    let mut clamped = vec![false; theta.len()];
    let mut rows = Vec::with_capacity(counts.n_rows());
    for f in 0..counts.n_rows() {
        let ctx = build_context(f, &props, &means)?;
        let b = match &cov {
            Cov::Mdd(c) => build_b_mdd(&ctx, c, opts.scaled)?,
            Cov::General(c) => build_b_general(&ctx, c)?,
        };
        let solution = solve_weights(&b)?;
        let out = &mut theta[f * k..(f + 1) * k];
        for (a, p) in solution.weights.iter().zip(&ctx.shifted) {
            for (o, v) in out.iter_mut().zip(p) {
                *o += a * v;
            }
        }
        if opts.adjust {
            let mut moved = false;
            for (x, o) in out.iter_mut().enumerate() {
                if *o < 0.0 || *o > 1.0 {
                    *o = o.clamp(0.0, 1.0);
                    clamped[f * k + x] = true;
                    moved = true;
                }
            }
            if moved && opts.renormalize {
                let total: f64 = out.iter().sum();
                if total > 0.0 {
                    out.iter_mut().for_each(|o| *o /= total);
                }
            }
        }
        rows.push(Some(RowWeights {
            b: b.to_rows(),
            b_scale: b.scale,
            solution,
        }));
    }
    Ok(EstimateTable {
        node: counts.node.clone(),
        values: counts.values.clone(),
        layout: counts.layout.clone(),
        theta,
        clamped,
        rows,
    })
}

fn check_alpha_mu(counts: &CountTable, alpha: f64, mu: &[f64]) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::hyper("alpha", alpha, "must be finite and > 0"));
    }
    validate_mu(mu)?;
    if mu.len() != counts.n_values() {
        return Err(Error::Shape(format!(
            "{} means for {} values",
            mu.len(),
            counts.n_values()
        )));
    }
    Ok(())
}

/// Independent-rows mean posterior: `(m_xf + alpha mu_x) / (n_f + alpha)`.
pub fn mp_independent(counts: &CountTable, alpha: f64, mu: &[f64]) -> Result<EstimateTable> {
    check_alpha_mu(counts, alpha, mu)?;
    let theta = (0..counts.n_rows())
        .flat_map(|f| {
            let n = counts.n(f) as f64;
            (0..counts.n_values()).map(move |x| (counts.m(f, x) as f64 + alpha * mu[x]) / (n + alpha))
        })
        .collect();
    Ok(EstimateTable::closed_form(counts, theta))
}

/// Which rows share counts in [`pooled_estimates`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    /// Every row: the marginal mean posterior.
    All,
    /// Rows agreeing with the target on this parent (by position).
    Parent(usize),
}

pub fn pooled_estimates(
    counts: &CountTable,
    alpha: f64,
    mu: &[f64],
    pool: Pool,
) -> Result<EstimateTable> {
    check_alpha_mu(counts, alpha, mu)?;
    if let Pool::Parent(w) = pool {
        if w >= counts.layout.n_parents() {
            return Err(Error::Shape(format!("no parent at position {w}")));
        }
    }
    let k = counts.n_values();
    let mut theta = Vec::with_capacity(k * counts.n_rows());
    for f in 0..counts.n_rows() {
        let level = |row: usize| counts.layout.decode(row).0;
        let mut m = vec![0u64; k];
        let mut n = 0u64;
        for g in 0..counts.n_rows() {
            let included = match pool {
                Pool::All => true,
                Pool::Parent(w) => level(g)[w] == level(f)[w],
            };
            if included {
                for (acc, &c) in m.iter_mut().zip(counts.row(g)) {
                    *acc += c;
                }
                n += counts.n(g);
            }
        }
        theta.extend((0..k).map(|x| (m[x] as f64 + alpha * mu[x]) / (n as f64 + alpha)));
    }
    Ok(EstimateTable::closed_form(counts, theta))
}

/// Optimal MDD weights for `target` given only the row totals.
pub fn mdd_weights(
    cov: &MddCovariance,
    totals: &[u64],
    target: usize,
    scaled: bool,
) -> Result<WeightSolution> {
    let ctx = EstimationContext::from_totals(target, totals);
    solve_weights(&build_b_mdd(&ctx, cov, scaled)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPoint {
    pub factor: f64,
    pub n_f: u64,
    pub a_f: f64,
    /// `(1 - a_f) n_f`.
    pub scaled_shortfall: f64,
    /// `max_{g != f} |a_g| n_f`.
    pub scaled_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub target: usize,
    pub points: Vec<DecayPoint>,
    /// max/min of `scaled_shortfall` across factors.
    pub shortfall_band: f64,
    /// max/min of `scaled_spread` across factors.
    pub spread_band: f64,
    /// Both bands within [`DECAY_BAND`].
    pub bounded: bool,
}

pub const DECAY_BAND: f64 = 3.0;

/// Recomputes the target's weights as `n_f` is multiplied by each growth
/// factor (other counts fixed) and checks that `(1 - a_f) n_f` and
/// `max |a_g| n_f` stay within a bounded band, i.e. `a_f = 1 - O(1/n_f)`.
pub fn prop3_diagnostic(
    prior: &MddPrior,
    base: &CountTable,
    target: usize,
    factors: &[f64],
    mode: CorrelationMode,
) -> Result<DecayReport> {
    prior.validate()?;
    prior.check_layout(&base.layout)?;
    if !(prior.pi2 > 0.0 || prior.pi_parent.iter().all(|&p| p > 0.0)) {
        return Err(Error::Precondition(
            "needs pi2 > 0 or every parent weight > 0".into(),
        ));
    }
    if target >= base.n_rows() || base.n(target) == 0 {
        return Err(Error::Precondition(format!("target row {target} has no data")));
    }
    if factors.is_empty() || factors.iter().any(|&g| !(g.is_finite() && g > 0.0)) {
        return Err(Error::hyper("factors", format!("{factors:?}"), "must be positive"));
    }
    let cov = mdd_covariance_model(prior, &base.layout, mode)?;
    let mut totals = base.row_totals();
    let n0 = totals[target];
    let mut points = Vec::with_capacity(factors.len());
    for &factor in factors {
        let n_f = ((n0 as f64 * factor).round() as u64).max(1);
        totals[target] = n_f;
        let sol = mdd_weights(&cov, &totals, target, true)?;
        let a_f = sol.weight_of(crate::estimator::SolveRow::Row(target));
        let spread = sol
            .labels
            .iter()
            .zip(&sol.weights)
            .filter(|(l, _)| **l != SolveRow::Row(target))
            .fold(0.0f64, |acc, (_, w)| acc.max(w.abs()));
        points.push(DecayPoint {
            factor,
            n_f,
            a_f,
            scaled_shortfall: (1.0 - a_f) * n_f as f64,
            scaled_spread: spread * n_f as f64,
        });
    }
    let band = |vals: Vec<f64>| {
        let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
        let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
        if lo > 0.0 {
            hi / lo
        } else if hi <= 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    };
    let shortfall_band = band(points.iter().map(|p| p.scaled_shortfall).collect());
    let spread_band = band(points.iter().map(|p| p.scaled_spread).collect());
    Ok(DecayReport {
        target,
        bounded: shortfall_band <= DECAY_BAND && spread_band <= DECAY_BAND,
        points,
        shortfall_band,
        spread_band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::PiVector;

    fn binary_table(radices: &[usize], rows: &[(u64, u64)]) -> CountTable {
        CountTable::binary_from_totals("X", RowLayout::from_radices(radices), rows).unwrap()
    }

    fn mdd(pi: (f64, f64, f64), parents: usize) -> MddPrior {
        let pi = PiVector::new(pi.0, pi.1, pi.2).unwrap();
        MddPrior::symmetric("X", 2.0, vec![0.5, 0.5], pi, parents).unwrap()
    }

    #[test]
    fn empty_context_has_only_the_prior_row() {
        let t = binary_table(&[2], &[(0, 0), (0, 0)]);
        let ctx = build_context(1, &proportions(&t), &[0.5; 4]).unwrap();
        assert_eq!(ctx.d(), 1);
        assert_eq!(ctx.labels(), vec![SolveRow::PriorMean]);
        let cov = mdd_covariance_model(&mdd((0.2, 0.3, 0.5), 1), &t.layout, CorrelationMode::Exact)
            .unwrap();
        let sol = solve_weights(&build_b_mdd(&ctx, &cov, true).unwrap()).unwrap();
        assert_eq!(sol.weights, vec![1.0]);
    }

    #[test]
    fn shift_with_non_constant_means() {
        let t = CountTable::from_counts(
            "X",
            vec!["0".into(), "1".into()],
            RowLayout::from_radices(&[2]),
            vec![2, 3, 0, 0],
        )
        .unwrap();
        let means = [0.3, 0.7, 0.5, 0.5];
        let ctx = build_context(1, &proportions(&t), &means).unwrap();
        let p = &ctx.shifted[0];
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.4).abs() < 1e-15);
        assert_eq!(ctx.shifted[1], vec![0.5, 0.5]);
    }

    #[test]
    fn b_structure_for_extreme_priors() {
        let totals = [4, 7, 0, 3];
        let layout = RowLayout::from_radices(&[2, 2]);
        let ctx = EstimationContext::from_totals(0, &totals);

        let indep = mdd((0.0, 0.0, 1.0), 2);
        let cov = mdd_covariance_model(&indep, &layout, CorrelationMode::Quadratic).unwrap();
        let b = build_b_mdd(&ctx, &cov, false).unwrap().matrix;
        let s = indep.sigma_ff();
        let d = ctx.d();
        assert!((b[(0, 0)] - s * 2.0 / 4.0).abs() < 1e-15);
        assert_eq!(b[(0, d - 1)], 0.0);
        for i in 1..d - 1 {
            assert!((b[(i, d - 1)] - s).abs() < 1e-15);
            assert_eq!(b[(0, i)], 0.0);
        }

        let shared = mdd((1.0, 0.0, 0.0), 2);
        let cov = mdd_covariance_model(&shared, &layout, CorrelationMode::Quadratic).unwrap();
        let b = build_b_mdd(&ctx, &cov, true).unwrap().matrix;
        for i in 0..d {
            for j in 0..d {
                let want = match (i == j, i == d - 1) {
                    (false, _) => 0.0,
                    (true, true) => 1.0,
                    (true, false) => 2.0 / totals[ctx.active[i]] as f64,
                };
                assert!((b[(i, j)] - want).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn general_form_matches_mdd_form() {
        let layout = RowLayout::from_radices(&[2, 3]);
        let p = MddPrior::new("X", 3.0, vec![0.2, 0.3, 0.5], 0.1, vec![0.3, 0.2], 0.4).unwrap();
        let cov = mdd_covariance_model(&p, &layout, CorrelationMode::Exact).unwrap();
        let general = cov.to_general();
        let totals = [3, 0, 5, 1, 9, 2];
        for f in 0..6 {
            let ctx = EstimationContext::from_totals(f, &totals);
            let a = build_b_mdd(&ctx, &cov, false).unwrap().matrix;
            let b = build_b_general(&ctx, &general).unwrap().matrix;
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-3), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn zero_covariance_general_model() {
        let general = GeneralCovariance {
            n_values: 2,
            n_rows: 2,
            means: vec![0.5; 4],
            cov: vec![0.0; 8],
            estimate: None,
        };
        let ctx = EstimationContext::from_totals(0, &[4, 2]);
        let b = build_b_general(&ctx, &general).unwrap().matrix;
        assert!((b[(0, 0)] - 0.5 / 4.0).abs() < 1e-15);
        assert!((b[(1, 1)] - 0.5 / 2.0).abs() < 1e-15);
        assert_eq!(b[(0, 1)], 0.0);
        assert_eq!(b.column(2).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
    }

    #[test]
    fn singular_b_gives_flagged_optimum() {
        // Two identical zero-variance sources: optimum not unique.
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let b = BMatrix {
            matrix: m,
            labels: vec![SolveRow::Row(0), SolveRow::Row(1), SolveRow::PriorMean],
            scale: 1.0,
        };
        let sol = solve_weights(&b).unwrap();
        assert!(!sol.unique);
        assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        // Minimum-norm optimum splits the duplicated source evenly.
        assert!((sol.weights[0] - sol.weights[1]).abs() < 1e-10);
        assert!((sol.mse - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_non_psd_and_asymmetric() {
        let labels = vec![SolveRow::Row(0), SolveRow::PriorMean];
        let neg = BMatrix {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            labels: labels.clone(),
            scale: 1.0,
        };
        assert!(matches!(solve_weights(&neg), Err(Error::NotPsd(_))));
        let skew = BMatrix {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            labels,
            scale: 1.0,
        };
        assert!(matches!(solve_weights(&skew), Err(Error::NotPsd(_))));
    }

    #[test]
    fn mean_posterior_closed_form() {
        let t = binary_table(&[1], &[(22, 12)]);
        let mp = mp_independent(&t, 2.0, &[0.5, 0.5]).unwrap();
        assert!((mp.theta(0, 1) - 13.0 / 24.0).abs() < 1e-15);
        let empty = binary_table(&[1], &[(0, 0)]);
        assert_eq!(mp_independent(&empty, 2.0, &[0.3, 0.7]).unwrap().row(0), &[0.3, 0.7]);
    }

    #[test]
    fn adjust_clamps_and_flags() {
        // Negative weight on a row whose proportion sits at the far end.
        let t = binary_table(&[2, 2], &[(10, 0), (0, 0), (10, 0), (10, 10)]);
        let prior = NodePrior::Mdd(MddPrior::symmetric(
            "X",
            2.0,
            vec![0.99, 0.01],
            PiVector::new(0.0, 1.0, 0.0).unwrap(),
            2,
        )
        .unwrap());
        let raw = estimate_node(&t, &prior, &EstimateOptions::default()).unwrap();
        let adjusted = estimate_node(
            &t,
            &prior,
            &EstimateOptions {
                adjust: true,
                ..Default::default()
            },
        )
        .unwrap();
        for (i, (&r, &a)) in raw.theta.iter().zip(&adjusted.theta).enumerate() {
            assert!((0.0..=1.0).contains(&a));
            if adjusted.clamped[i] {
                assert!(!(0.0..=1.0).contains(&r));
                assert_eq!(a, r.clamp(0.0, 1.0));
            } else {
                assert_eq!(a, r);
            }
        }
        for row in 0..4 {
            assert!((raw.row(row).iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        assert!(adjusted.clamped_cells() > 0);
    }

    #[test]
    fn prop3_requires_condition_ii() {
        let t = binary_table(&[2, 2], &[(10, 3), (10, 5), (10, 4), (0, 0)]);
        let err = prop3_diagnostic(&mdd((1.0, 0.0, 0.0), 2), &t, 0, &[1.0, 10.0], CorrelationMode::Quadratic);
        assert!(matches!(err, Err(Error::Precondition(_))));
        let err = prop3_diagnostic(&mdd((0.0, 1.0, 0.0), 2), &t, 3, &[1.0], CorrelationMode::Quadratic);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }
}
