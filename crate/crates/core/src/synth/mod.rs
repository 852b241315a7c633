//! Synthetic data with known conditional expectations.
//!
//! Two families: jointly Gaussian features with a linear (or log-linear)
//! rate, where `E[μ(X) | X_C]` has a closed form, and small discrete joint
//! distributions, where it is a finite sum over the pmf.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Coalition, Dataset, FeatureSchema, FeatureSpec};
use crate::error::{Error, Result};
use crate::shapley::ValueTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Exponential,
}

impl Link {
    pub fn apply(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Exponential => eta.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    /// `Y ~ Poisson(r(x))`.
    Poisson,
    /// `Y = r(x)`.
    None,
}

/// `X ~ N(0, Σ)` with rate `r(x) = link(β0 + β·x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinearSpec {
    pub covariance: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub link: Link,
    pub noise: Noise,
    pub n: usize,
    pub seed: u64,
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let q = rows.len();
    DMatrix::from_fn(q, q, |r, c| rows[r][c])
}

/// `Σ[rows, cols]` for index lists.
fn submatrix(sigma: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| sigma[(rows[r], cols[c])])
}

impl GaussianLinearSpec {
    pub fn q(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if q == 0 {
            return Err(Error::InvalidArgument("need at least one feature".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if self.covariance.len() != q || self.covariance.iter().any(|r| r.len() != q) {
            return Err(Error::Shape(format!("covariance must be {q}x{q}")));
        }
        let finite = |v: &f64| v.is_finite();
        if !self.beta.iter().all(finite)
            || !self.intercept.is_finite()
            || !self.covariance.iter().flatten().all(finite)
        {
            return Err(Error::InvalidArgument("parameters must be finite".into()));
        }
        for r in 0..q {
            for c in 0..r {
                let (a, b) = (self.covariance[r][c], self.covariance[c][r]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
            }
        }
        self.cholesky().map(|_| ())
    }

    fn sigma(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.covariance)
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        self.sigma()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))
    }

    /// `r(x)` for raw features `x`.
    pub fn rate(&self, x: &[f64]) -> f64 {
        let eta = self.intercept + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        self.link.apply(eta)
    }

    pub fn schema(&self) -> FeatureSchema {
        let features = (1..=self.q()).map(|j| FeatureSpec::continuous(format!("x{j}"))).collect();
        FeatureSchema::new(features, "y", None).expect("generated names are unique")
    }
}

fn poisson_draw(rate: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    if rate == 0.0 {
        return Ok(0.0);
    }
    Poisson::new(rate)
        .map(|d| d.sample(rng))
        .map_err(|e| Error::Numeric(format!("cannot draw Poisson({rate}): {e}")))
}

fn response(rate: f64, noise: Noise, row: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rate {rate} at generated row {row} is not a valid non-negative mean"
        )));
    }
    match noise {
        Noise::Poisson => poisson_draw(rate, rng),
        Noise::None => Ok(rate),
    }
}

/// Draws `spec.n` rows; continuous columns are standardized on the sample.
pub fn gen_gaussian(spec: &GaussianLinearSpec) -> Result<Dataset> {
    spec.validate()?;
    let q = spec.q();
    let l = spec.cholesky()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut raw = Vec::with_capacity(spec.n * q);
    let mut y = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let z = DVector::from_fn(q, |_, _| StandardNormal.sample(&mut rng));
        let x = &l * z;
        raw.extend(x.iter());
        y.push(response(spec.rate(x.as_slice()), spec.noise, i + 1, &mut rng)?);
    }
    Dataset::from_raw(spec.schema(), raw, vec![], y, None, None)
}

/// `E[r(X) | X_C = x_C]` in closed form for raw features `x`.
///
/// The linear index `η = β0 + β·X` given `X_C = x_C` is Gaussian with mean
/// `a = β0 + β_C·x_C + β_C̄·Σ_C̄C Σ_CC⁻¹ x_C` and variance
/// `v = β_C̄'(Σ_C̄C̄ - Σ_C̄C Σ_CC⁻¹ Σ_CC̄)β_C̄`, so the identity link gives `a`
/// and the exponential link the lognormal mean `exp(a + v/2)`.
pub fn oracle_conditional_gaussian(spec: &GaussianLinearSpec, x: &[f64], c: Coalition) -> Result<f64> {
    let q = spec.q();
    if x.len() != q || c.q() != q {
        return Err(Error::Shape(format!("expected {q} features")));
    }
    let sigma = spec.sigma();
    let inside: Vec<usize> = c.indices().collect();
    let outside: Vec<usize> = c.complement().indices().collect();
    let beta_out = DVector::from_iterator(outside.len(), outside.iter().map(|&j| spec.beta[j]));

    let mut a = spec.intercept + inside.iter().map(|&j| spec.beta[j] * x[j]).sum::<f64>();
    let mut cov_out = submatrix(&sigma, &outside, &outside);
    if !inside.is_empty() && !outside.is_empty() {
        let s_cc = submatrix(&sigma, &inside, &inside);
        let s_oc = submatrix(&sigma, &outside, &inside);
        let chol = s_cc
            .cholesky()
            .ok_or_else(|| Error::Numeric("Σ_CC is not positive definite".into()))?;
        let x_c = DVector::from_iterator(inside.len(), inside.iter().map(|&j| x[j]));
        let cond_mean = &s_oc * chol.solve(&x_c);
        a += beta_out.dot(&cond_mean);
        cov_out -= &s_oc * chol.solve(&s_oc.transpose());
    }
    Ok(match spec.link {
        Link::Identity => a,
        Link::Exponential => {
            let v = if outside.is_empty() {
                0.0
            } else {
                beta_out.dot(&(&cov_out * &beta_out))
            };
            (a + 0.5 * v).exp()
        }
    })
}

/// Categorical features with a joint pmf and a rate per cell.
///
/// Cells are stored row-major with the last feature varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJointSpec {
    pub levels: Vec<usize>,
    pub pmf: Vec<f64>,
    /// Rate `μ(x)` per cell.
    pub mu: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

const MAX_DISCRETE_FEATURES: usize = 4;
const MAX_DISCRETE_LEVELS: usize = 5;

impl DiscreteJointSpec {
    pub fn q(&self) -> usize {
        self.levels.len()
    }

    pub fn cells(&self) -> usize {
        self.levels.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if q == 0 || q > MAX_DISCRETE_FEATURES {
            return Err(Error::InvalidArgument(format!(
                "discrete fixtures need 1..={MAX_DISCRETE_FEATURES} features, got {q}"
            )));
        }
        if self.levels.iter().any(|&k| k == 0 || k > MAX_DISCRETE_LEVELS) {
            return Err(Error::InvalidArgument(format!(
                "level counts must lie in 1..={MAX_DISCRETE_LEVELS}"
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        let cells = self.cells();
        if self.pmf.len() != cells || self.mu.len() != cells {
            return Err(Error::Shape(format!("pmf and rate tables need {cells} cells")));
        }
        if self.pmf.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = self.pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("pmf sums to {total}, not 1")));
        }
        if self.mu.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("rates must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Flat index of the cell with level indices `x`.
    pub fn cell_index(&self, x: &[usize]) -> usize {
        x.iter().zip(&self.levels).fold(0, |acc, (&v, &k)| acc * k + v)
    }

    /// Level indices of flat cell `index`.
    pub fn cell(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.q()];
        for (slot, &k) in out.iter_mut().zip(&self.levels).rev() {
            *slot = index % k;
            index /= k;
        }
        out
    }

    pub fn schema(&self) -> FeatureSchema {
        let features = self
            .levels
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                let names = (0..k).map(|l| char::from(b'a' + l as u8).to_string());
                FeatureSpec::categorical(format!("f{}", j + 1), names)
            })
            .collect();
        FeatureSchema::new(features, "y", None).expect("generated names are unique")
    }

    fn check_instance(&self, x: &[usize], c: Coalition) -> Result<()> {
        if x.len() != self.q() || c.q() != self.q() {
            return Err(Error::Shape(format!("expected {} features", self.q())));
        }
        for (j, (&v, &k)) in x.iter().zip(&self.levels).enumerate() {
            if v >= k {
                return Err(Error::InvalidLevel {
                    feature: j,
                    index: v,
                    allowed: k,
                });
            }
        }
        Ok(())
    }
}

/// Draws `spec.n` cells from the pmf with responses from the rate table.
pub fn gen_discrete(spec: &DiscreteJointSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells = WeightedIndex::new(&spec.pmf).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut cats = Vec::with_capacity(spec.n * spec.q());
    let mut y = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let idx = cells.sample(&mut rng);
        cats.extend(spec.cell(idx));
        y.push(response(spec.mu[idx], Noise::Poisson, i + 1, &mut rng)?);
    }
    Dataset::from_raw(spec.schema(), vec![], cats, y, None, None)
}

/// `Σ_x' μ(x') p(x' | x'_C = x_C)` by summation over all cells.
pub fn oracle_conditional_discrete(spec: &DiscreteJointSpec, x: &[usize], c: Coalition) -> Result<f64> {
    spec.check_instance(x, c)?;
    if c.is_full() {
        let idx = spec.cell_index(x);
        return if spec.pmf[idx] > 0.0 { Ok(spec.mu[idx]) } else { Err(Error::ZeroMass) };
    }
    let (mut mass, mut weighted) = (0.0, 0.0);
    for idx in 0..spec.cells() {
        let cell = spec.cell(idx);
        if c.indices().all(|j| cell[j] == x[j]) {
            mass += spec.pmf[idx];
            weighted += spec.pmf[idx] * spec.mu[idx];
        }
    }
    if mass <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(weighted / mass)
}

/// The conditional-expectation game `C ↦ μ_C(x)` over every coalition.
pub fn discrete_value_table(spec: &DiscreteJointSpec, x: &[usize]) -> Result<ValueTable> {
    let q = spec.q();
    let mut table = ValueTable::new(q);
    for bits in 0..1u64 << q {
        let c = Coalition::from_bits(q, bits)?;
        table.insert(c, oracle_conditional_discrete(spec, x, c)?)?;
    }
    Ok(table)
}

/// Shipped fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fixture {
    /// Independent Gaussian features, identity link.
    F1,
    /// Two blocks of Gaussian features with correlation 0.8.
    F2,
    /// Three categorical features with an empty cell and an unused level.
    F3,
    /// Independent Gaussian features with only the first one active.
    Single,
}

impl Fixture {
    pub const ALL: [Fixture; 4] = [Fixture::F1, Fixture::F2, Fixture::F3, Fixture::Single];

    pub fn spec(self) -> FixtureSpec {
        match self {
            Fixture::F1 => FixtureSpec::Gaussian(f1()),
            Fixture::F2 => FixtureSpec::Gaussian(f2()),
            Fixture::F3 => FixtureSpec::Discrete(f3()),
            Fixture::Single => FixtureSpec::Gaussian(single_active()),
        }
    }
}

impl fmt::Display for Fixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Fixture::F1 => "F1",
            Fixture::F2 => "F2",
            Fixture::F3 => "F3",
            Fixture::Single => "single",
        };
        f.write_str(name)
    }
}

impl FromStr for Fixture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Fixture::ALL
            .into_iter()
            .find(|f| f.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fixture `{s}` (F1, F2, F3, single)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FixtureSpec {
    Gaussian(GaussianLinearSpec),
    Discrete(DiscreteJointSpec),
}

impl FixtureSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match self {
            FixtureSpec::Gaussian(s) => gen_gaussian(s),
            FixtureSpec::Discrete(s) => gen_discrete(s),
        }
    }

    pub fn schema(&self) -> FeatureSchema {
        match self {
            FixtureSpec::Gaussian(s) => s.schema(),
            FixtureSpec::Discrete(s) => s.schema(),
        }
    }

    pub fn with_sample(mut self, n: usize, seed: u64) -> Self {
        match &mut self {
            FixtureSpec::Gaussian(s) => (s.n, s.seed) = (n, seed),
            FixtureSpec::Discrete(s) => (s.n, s.seed) = (n, seed),
        }
        self
    }
}

const GAUSSIAN_BETA: [f64; 4] = [1.5, -1.5, 0.0, 0.0];
// Keeps identity-link rates positive with overwhelming probability.
const GAUSSIAN_INTERCEPT: f64 = 11.0;

fn identity(q: usize) -> Vec<Vec<f64>> {
    (0..q).map(|r| (0..q).map(|c| if r == c { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn f1() -> GaussianLinearSpec {
    GaussianLinearSpec {
        covariance: identity(4),
        beta: GAUSSIAN_BETA.to_vec(),
        intercept: GAUSSIAN_INTERCEPT,
        link: Link::Identity,
        noise: Noise::Poisson,
        n: 20_000,
        seed: 1,
    }
}

pub fn f2() -> GaussianLinearSpec {
    let mut covariance = identity(4);
    for (a, b) in [(0, 1), (2, 3)] {
        covariance[a][b] = 0.8;
        covariance[b][a] = 0.8;
    }
    GaussianLinearSpec {
        covariance,
        seed: 2,
        ..f1()
    }
}

pub fn single_active() -> GaussianLinearSpec {
    GaussianLinearSpec {
        beta: vec![1.0, 0.0, 0.0, 0.0],
        seed: 4,
        ..f1()
    }
}

/// `f1` has 3 levels, `f2` has 4 with `d` never observed, `f3` has 2; the
/// cells with `f1 = a, f2 = a` are empty.
pub fn f3() -> DiscreteJointSpec {
    let levels = vec![3, 4, 2];
    let mut pmf = Vec::with_capacity(24);
    let mut mu = Vec::with_capacity(24);
    for i in 0..3 {
        for j in 0..4 {
            for k in 0..2 {
                let empty = (i == 0 && j == 0) || j == 3;
                let w = if empty { 0.0 } else { (1 + i + k) as f64 * (4 - j) as f64 };
                pmf.push(w);
                let eta = 0.3 * i as f64 - 0.4 * j as f64 + 0.5 * k as f64 + 0.2 * (i * k) as f64;
                mu.push(1.5 * eta.exp());
            }
        }
    }
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    DiscreteJointSpec {
        levels,
        pmf,
        mu,
        n: 20_000,
        seed: 3,
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn small(covariance: Vec<Vec<f64>>, beta: Vec<f64>, link: Link) -> GaussianLinearSpec {
        GaussianLinearSpec {
            covariance,
            beta,
            intercept: 0.3,
            link,
            noise: Noise::None,
            n: 10,
            seed: 0,
        }
    }

    #[test]
    fn identity_covariance_gives_uncorrelated_columns() {
        let spec = GaussianLinearSpec {
            n: 100_000,
            ..f1()
        };
        let data = gen_gaussian(&spec).unwrap();
        let n = data.n() as f64;
        // Standardized columns: the correlation is the mean cross product.
        for a in 0..4 {
            for b in 0..a {
                let r: f64 = (0..data.n())
                    .map(|i| data.continuous_row(i)[a] * data.continuous_row(i)[b])
                    .sum::<f64>()
                    / n;
                assert!(r.abs() <= 0.02, "corr({a},{b}) = {r}");
            }
        }
    }

    #[test]
    fn zero_beta_gives_constant_rate() {
        let spec = GaussianLinearSpec {
            intercept: 2.5,
            ..small(identity(3), vec![0.0; 3], Link::Identity)
        };
        let data = gen_gaussian(&spec).unwrap();
        assert!(data.response().iter().all(|&y| y == 2.5));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GaussianLinearSpec { n: 200, ..f2() };
        let (a, b) = (gen_gaussian(&spec).unwrap(), gen_gaussian(&spec).unwrap());
        assert_eq!(a.response(), b.response());
        assert_eq!(a.raw_continuous_row(17), b.raw_continuous_row(17));
        let d = DiscreteJointSpec { n: 200, ..f3() };
        assert_eq!(gen_discrete(&d).unwrap().response(), gen_discrete(&d).unwrap().response());
    }

    #[test]
    fn non_positive_definite_covariance_is_rejected() {
        let spec = small(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![1.0, 1.0], Link::Identity);
        assert!(matches!(gen_gaussian(&spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn negative_rate_is_rejected() {
        let spec = GaussianLinearSpec {
            intercept: -5.0,
            noise: Noise::Poisson,
            ..small(identity(1), vec![1.0], Link::Identity)
        };
        assert!(gen_gaussian(&spec).is_err());
    }

    #[test]
    fn degenerate_coalitions() {
        let spec = f2();
        let x = [0.4, -1.2, 2.0, 0.1];
        let full = oracle_conditional_gaussian(&spec, &x, Coalition::full(4)).unwrap();
        assert_relative_eq!(full, spec.rate(&x), epsilon = 1e-12);
        let empty = oracle_conditional_gaussian(&spec, &x, Coalition::empty(4)).unwrap();
        assert_eq!(empty, spec.intercept);
    }

    #[test]
    fn bivariate_conditioning() {
        let rho = 0.6;
        let spec = small(vec![vec![1.0, rho], vec![rho, 1.0]], vec![0.0, 1.0], Link::Identity);
        let c = Coalition::from_indices(2, &[0]).unwrap();
        let v = oracle_conditional_gaussian(&spec, &[1.5, 9.0], c).unwrap();
        assert_relative_eq!(v, spec.intercept + rho * 1.5, epsilon = 1e-12);
    }

    /// Draws `X_C̄ | X_C = x_C` through the Cholesky factor of `Σ` with the
    /// features of `C` ordered first: `x_C` fixes the leading standard normals
    /// and the remaining ones are free.
    fn monte_carlo(spec: &GaussianLinearSpec, x: &[f64], c: Coalition, draws: usize, seed: u64) -> (f64, f64) {
        let order: Vec<usize> = c.indices().chain(c.complement().indices()).collect();
        let k = c.len();
        let q = spec.q();
        let sigma = DMatrix::from_fn(q, q, |r, s| spec.covariance[order[r]][order[s]]);
        let l = sigma.cholesky().unwrap().l();
        let mut z = DVector::zeros(q);
        for r in 0..k {
            let partial: f64 = (0..r).map(|s| l[(r, s)] * z[s]).sum();
            z[r] = (x[order[r]] - partial) / l[(r, r)];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut point = vec![0.0; q];
        for _ in 0..draws {
            for r in k..q {
                z[r] = rng.sample(StandardNormal);
            }
            let y = &l * &z;
            for r in 0..q {
                point[order[r]] = y[r];
            }
            let v = spec.rate(&point);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / draws as f64;
        let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
        (mean, (var / draws as f64).sqrt())
    }

    #[test]
    fn gaussian_oracle_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for t in 0..20 {
            let q = rng.random_range(2..=4);
            let a = DMatrix::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0));
            let sigma = &a * a.transpose() + DMatrix::identity(q, q) * 0.3;
            let spec = GaussianLinearSpec {
                covariance: (0..q).map(|r| (0..q).map(|s| sigma[(r, s)]).collect()).collect(),
                beta: (0..q).map(|_| rng.random_range(-0.5..0.5)).collect(),
                intercept: rng.random_range(-0.5..0.5),
                link: if t % 2 == 0 { Link::Identity } else { Link::Exponential },
                noise: Noise::None,
                n: 1,
                seed: 0,
            };
            let x: Vec<f64> = (0..q).map(|_| rng.random_range(-1.5..1.5)).collect();
            let c = Coalition::from_bits(q, rng.random_range(0..1u64 << q)).unwrap();
            let oracle = oracle_conditional_gaussian(&spec, &x, c).unwrap();
            let (mc, se) = monte_carlo(&spec, &x, c, 1_000_000, t);
            assert!(
                (oracle - mc).abs() <= 3.0 * se + 1e-10 * oracle.abs(),
                "triple {t}: oracle {oracle}, mc {mc} ± {se}"
            );
        }
    }

    #[test]
    fn discrete_degenerate_coalitions() {
        let spec = f3();
        let x = [2, 1, 0];
        let full = oracle_conditional_discrete(&spec, &x, Coalition::full(3)).unwrap();
        assert_eq!(full, spec.mu[spec.cell_index(&x)]);
        let expected: f64 = spec.pmf.iter().zip(&spec.mu).map(|(p, m)| p * m).sum();
        let empty = oracle_conditional_discrete(&spec, &x, Coalition::empty(3)).unwrap();
        assert_relative_eq!(empty, expected, epsilon = 1e-14);
    }

    #[test]
    fn zero_mass_conditioning_errors() {
        let spec = f3();
        let c = Coalition::from_indices(3, &[0, 1]).unwrap();
        assert!(matches!(oracle_conditional_discrete(&spec, &[0, 0, 1], c), Err(Error::ZeroMass)));
        let unused = Coalition::from_indices(3, &[1]).unwrap();
        assert!(matches!(oracle_conditional_discrete(&spec, &[1, 3, 0], unused), Err(Error::ZeroMass)));
    }

    #[test]
    fn tower_property() {
        let spec = f3();
        let overall = oracle_conditional_discrete(&spec, &[0, 0, 0], Coalition::empty(3)).unwrap();
        for bits in 1..8u64 {
            let c = Coalition::from_bits(3, bits).unwrap();
            let mut marginal = std::collections::HashMap::<Vec<usize>, (f64, Vec<usize>)>::new();
            for idx in 0..spec.cells() {
                let cell = spec.cell(idx);
                let key: Vec<usize> = c.indices().map(|j| cell[j]).collect();
                marginal.entry(key).or_insert((0.0, cell)).0 += spec.pmf[idx];
            }
            let total: f64 = marginal
                .values()
                .filter(|(p, _)| *p > 0.0)
                .map(|(p, cell)| p * oracle_conditional_discrete(&spec, cell, c).unwrap())
                .sum();
            assert_relative_eq!(total, overall, epsilon = 1e-12);
        }
    }

    #[test]
    fn f3_support() {
        let spec = f3();
        assert_relative_eq!(spec.pmf.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let data = gen_discrete(&DiscreteJointSpec { n: 5000, ..spec }).unwrap();
        assert!((0..data.n()).all(|i| data.categorical_row(i)[1] != 3));
        assert!((0..data.n()).all(|i| data.categorical_row(i)[..2] != [0, 0]));
    }

    #[test]
    fn value_table_feeds_exact_shapley() {
        let spec = f3();
        let x = [1, 2, 1];
        let table = discrete_value_table(&spec, &x).unwrap();
        let att = crate::shapley::exact_shapley(&table).unwrap();
        assert_relative_eq!(att.total(), spec.mu[spec.cell_index(&x)], epsilon = 1e-12);
    }

    #[test]
    fn fixture_names_round_trip() {
        for f in Fixture::ALL {
            assert_eq!(f.to_string().parse::<Fixture>().unwrap(), f);
        }
        assert_eq!("f2".parse::<Fixture>().unwrap(), Fixture::F2);
        assert!("F9".parse::<Fixture>().is_err());
    }

    proptest! {
        #[test]
        fn empty_coalition_ignores_x(x in prop::collection::vec(-3.0..3.0f64, 4)) {
            let spec = GaussianLinearSpec { link: Link::Exponential, intercept: 0.1, ..f2() };
            let a = oracle_conditional_gaussian(&spec, &x, Coalition::empty(4)).unwrap();
            let b = oracle_conditional_gaussian(&spec, &[0.0; 4], Coalition::empty(4)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn cell_indexing_round_trips(idx in 0usize..24) {
            let spec = f3();
            prop_assert_eq!(spec.cell_index(&spec.cell(idx)), idx);
        }
    }
}
