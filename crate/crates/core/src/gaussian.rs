//! Two-subsystem Gaussian team example with delayed sharing.
//!
//! Both subsystems start from a zero-mean Gaussian pair with unit variances
//! and correlation `ρ`. With `S = x₀¹ + x₀²` the dynamics are
//!
//! ```text
//! x₁ = x₀,  x₂ = (S, 0),  x₃ = (S, u₂²),  x₄ = (S − u₂² − u₃¹, 0)
//! ```
//!
//! and every state is observed exactly. Only `u₂²` (subsystem 2 at stage 2)
//! and `u₃¹` (subsystem 1 at stage 3) are free. Because of the two-stage
//! delay, `u₂²` can depend on `x₀²` alone while `u₃¹` sees both initial
//! components. The objective is `½ E[(x₄¹)² + (u₃¹)²]`.
//!
//! The module searches linear strategies `u₂² = a x₀²`,
//! `u₃¹ = b S + c x₀²`. The closed-form optimum is `(1 + ρ, ½, −(1 + ρ)/2)`;
//! the often quoted `(½, ½, −¼)` corresponds to `ρ = −½` only, which
//! [`Walkthrough::consistent_with_claim`] reports.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::numeric::{derive_seed, mean_and_std_error, rng_from_seed, KahanSum};

/// Gains commonly quoted as the unique optimum of this example.
pub const CLAIMED_GAINS: ExampleStrategy = ExampleStrategy { a: 0.5, b: 0.5, c: -0.25 };
/// Correlation under which [`CLAIMED_GAINS`] is optimal.
pub const CLAIMED_CONSISTENT_RHO: f64 = -0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("correlation {0} outside [-1, 1]")]
    InvalidCorrelation(f64),
    #[error("variance of x0^2 is zero; the estimate of S is undefined")]
    Degenerate,
    #[error("non-finite gain in {0:?}")]
    NonFiniteGain(ExampleStrategy),
    #[error("empty gain grid {lo}..{hi} step {step}")]
    EmptyGrid { lo: f64, hi: f64, step: f64 },
}

/// Zero-mean Gaussian initial pair with unit variances and correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianInit {
    rho: f64,
}

impl GaussianInit {
    pub fn new(rho: f64) -> Result<Self, GaussianError> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(GaussianError::InvalidCorrelation(rho));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn var_x2(&self) -> f64 {
        1.0
    }

    pub fn var_s(&self) -> f64 {
        2.0 + 2.0 * self.rho
    }

    pub fn cov_s_x2(&self) -> f64 {
        1.0 + self.rho
    }

    /// Draws `(x₀¹, x₀²)`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let x2 = self.rho * z1 + (1.0 - self.rho * self.rho).max(0.0).sqrt() * z2;
        [z1, x2]
    }
}

/// `u₂² = a x₀²`, `u₃¹ = b (x₀¹ + x₀²) + c x₀²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExampleStrategy {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ExampleStrategy {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, GaussianError> {
        let g = Self { a, b, c };
        if [a, b, c].iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(GaussianError::NonFiniteGain(g))
        }
    }

    /// Subsystem 2 at stage 2; its information reduces to `x₀²`.
    pub fn u2(&self, x0_2: f64) -> f64 {
        self.a * x0_2
    }

    /// Subsystem 1 at stage 3; its information reduces to `(x₀¹, x₀²)`.
    pub fn u3(&self, x0: [f64; 2]) -> f64 {
        self.b * (x0[0] + x0[1]) + self.c * x0[1]
    }

    pub fn controls(&self, x0: [f64; 2]) -> (f64, f64) {
        (self.u2(x0[1]), self.u3(x0))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.a - other.a).abs().max((self.b - other.b).abs()).max((self.c - other.c).abs())
    }
}

/// The quoted closed-form controls `(½ x₀², ½ (x₀¹ + x₀²) − ¼ x₀²)`.
pub fn closed_form_controls(x0: [f64; 2]) -> (f64, f64) {
    (0.5 * x0[1], 0.5 * (x0[0] + x0[1]) - 0.25 * x0[1])
}

/// States `x₀..x₄` of the example under `strategy`.
pub fn trajectory(x0: [f64; 2], strategy: &ExampleStrategy) -> [[f64; 2]; 5] {
    let s = x0[0] + x0[1];
    let u2 = strategy.u2(x0[1]);
    let u3 = strategy.u3(x0);
    [x0, x0, [s, 0.0], [s, u2], [s - u2 - u3, 0.0]]
}

/// `½ ((x₄¹)² + (u₃¹)²)` for one initial state.
pub fn realized_cost(x0: [f64; 2], strategy: &ExampleStrategy) -> f64 {
    let x4 = trajectory(x0, strategy)[4][0];
    let u3 = strategy.u3(x0);
    0.5 * (x4 * x4 + u3 * u3)
}

/// Second moments of `(S, x₀²)`, either exact or estimated from samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub ss: f64,
    pub sx: f64,
    pub xx: f64,
}

impl Moments {
    pub fn exact(init: &GaussianInit) -> Self {
        Self {
            ss: init.var_s(),
            sx: init.cov_s_x2(),
            xx: init.var_x2(),
        }
    }

    /// Sample second moments from `samples` draws, split into parallel
    /// chunks seeded from `seed`; the result does not depend on the thread
    /// count.
    pub fn sampled(init: &GaussianInit, samples: usize, seed: u64) -> Self {
        let parts: Vec<[f64; 3]> = chunks(samples)
            .into_par_iter()
            .map(|(i, len)| {
                let mut rng = rng_from_seed(derive_seed(seed, i as u64));
                let (mut ss, mut sx, mut xx) = (KahanSum::new(), KahanSum::new(), KahanSum::new());
                for _ in 0..len {
                    let x = init.sample(&mut rng);
                    let s = x[0] + x[1];
                    ss.add(s * s);
                    sx.add(s * x[1]);
                    xx.add(x[1] * x[1]);
                }
                [ss.total(), sx.total(), xx.total()]
            })
            .collect();
        let n = samples.max(1) as f64;
        let sum = |k: usize| parts.iter().map(|p| p[k]).collect::<KahanSum>().total() / n;
        Self {
            ss: sum(0),
            sx: sum(1),
            xx: sum(2),
        }
    }

    /// `E[(p S + q x₀²)²]`.
    pub fn quad(&self, p: f64, q: f64) -> f64 {
        p * p * self.ss + 2.0 * p * q * self.sx + q * q * self.xx
    }

    /// `½ E[(S − u₂ − u₃)² + u₃²]` for a linear strategy.
    pub fn cost(&self, g: &ExampleStrategy) -> f64 {
        0.5 * (self.quad(1.0 - g.b, -(g.a + g.c)) + self.quad(g.b, g.c))
    }
}

const CHUNK: usize = 1 << 16;

fn chunks(samples: usize) -> Vec<(usize, usize)> {
    (0..samples.div_ceil(CHUNK))
        .map(|i| (i, CHUNK.min(samples - i * CHUNK)))
        .collect()
}

/// Exact expected cost of a linear strategy.
pub fn expected_cost(strategy: &ExampleStrategy, init: &GaussianInit) -> f64 {
    Moments::exact(init).cost(strategy)
}

/// Best linear gains: `u₃ = ½ (S − u₂)` and `a = Cov(S, x₀²) / Var(x₀²)`.
pub fn optimal_linear_gains(init: &GaussianInit) -> Result<ExampleStrategy, GaussianError> {
    let var = init.var_x2();
    if var == 0.0 {
        return Err(GaussianError::Degenerate);
    }
    let a = init.cov_s_x2() / var;
    ExampleStrategy::new(a, 0.5, -0.5 * a)
}

/// Evenly spaced gain values `lo, lo + step, ..` up to `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for GainGrid {
    fn default() -> Self {
        Self {
            lo: -2.0,
            hi: 2.0,
            step: 0.01,
        }
    }
}

impl GainGrid {
    pub fn points(&self) -> Result<Vec<f64>, GaussianError> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor();
        if !(self.step > 0.0) || !count.is_finite() || count < 0.0 {
            return Err(GaussianError::EmptyGrid {
                lo: self.lo,
                hi: self.hi,
                step: self.step,
            });
        }
        Ok((0..=count as usize).map(|i| self.lo + i as f64 * self.step).collect())
    }
}

/// Objective minimized by [`grid_search_gains`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GridObjective {
    /// Exact Gaussian moments.
    ClosedForm,
    /// Sample moments of `samples` draws.
    Sampled { samples: usize, seed: u64 },
}

/// Exhaustive minimization over `grid³`. Ties keep the first point in
/// `(a, b, c)` lexicographic order.
pub fn grid_search_gains(init: &GaussianInit, grid: &GainGrid, objective: GridObjective) -> Result<ExampleStrategy, GaussianError> {
    let moments = match objective {
        GridObjective::ClosedForm => Moments::exact(init),
        GridObjective::Sampled { samples, seed } => Moments::sampled(init, samples, seed),
    };
    let pts = grid.points()?;
    let best = pts
        .par_iter()
        .enumerate()
        .map(|(ia, &a)| {
            let mut best = (f64::INFINITY, ia, 0, 0);
            for (ib, &b) in pts.iter().enumerate() {
                for (ic, &c) in pts.iter().enumerate() {
                    let j = moments.cost(&ExampleStrategy { a, b, c });
                    if j < best.0 {
                        best = (j, ia, ib, ic);
                    }
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, usize::MAX, 0, 0),
            |x, y| if y.0 < x.0 || (y.0 == x.0 && (y.1, y.2, y.3) < (x.1, x.2, x.3)) { y } else { x },
        );
    ExampleStrategy::new(pts[best.1], pts[best.2], pts[best.3])
}

/// Least squares from sample moments: `a` regresses `S` on `x₀²`, then
/// `(b, c)` solve the normal equations of the sampled cost given `a`.
pub fn least_squares_gains(init: &GaussianInit, samples: usize, seed: u64) -> Result<ExampleStrategy, GaussianError> {
    let m = Moments::sampled(init, samples, seed);
    if m.xx == 0.0 {
        return Err(GaussianError::Degenerate);
    }
    let a = m.sx / m.xx;
    // d/db, d/dc of ½ E[(S − a x − b S − c x)² + (b S + c x)²] = 0:
    //   2 b ss + 2 c sx = ss − a sx
    //   2 b sx + 2 c xx = sx − a xx
    let (r1, r2) = (m.ss - a * m.sx, m.sx - a * m.xx);
    let det = 4.0 * (m.ss * m.xx - m.sx * m.sx);
    if det.abs() < 1e-12 {
        return Err(GaussianError::Degenerate);
    }
    let b = (2.0 * m.xx * r1 - 2.0 * m.sx * r2) / det;
    let c = (2.0 * m.ss * r2 - 2.0 * m.sx * r1) / det;
    ExampleStrategy::new(a, b, c)
}

/// Grid minimizer of the stage-3 objective `½ ((s − u₂ − u₃)² + u₃²)` over
/// `u₃` with the given grid.
pub fn stage3_grid_minimizer(s: f64, u2: f64, grid: &GainGrid) -> Result<f64, GaussianError> {
    let f = |u3: f64| 0.5 * ((s - u2 - u3).powi(2) + u3 * u3);
    let pts = grid.points()?;
    Ok(pts.into_iter().fold((f64::INFINITY, f64::NAN), |best, u| {
        let v = f(u);
        if v < best.0 {
            (v, u)
        } else {
            best
        }
    }).1)
}

/// Monte Carlo estimate of the actual cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloCost {
    pub samples: usize,
    /// Controls evaluated at the actual initial state.
    pub mean: f64,
    pub std_error: f64,
    /// Controls evaluated at an independent model draw and applied to the
    /// actual system, i.e. before the true initial state is substituted.
    pub model_driven_mean: f64,
    pub model_driven_std_error: f64,
}

/// Draws model and actual initial states independently from `init`.
pub fn monte_carlo_cost(strategy: &ExampleStrategy, init: &GaussianInit, samples: usize, seed: u64) -> MonteCarloCost {
    let parts: Vec<(Vec<f64>, Vec<f64>)> = chunks(samples)
        .into_par_iter()
        .map(|(i, len)| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let mut sub = Vec::with_capacity(len);
            let mut drv = Vec::with_capacity(len);
            for _ in 0..len {
                let model = init.sample(&mut rng);
                let actual = init.sample(&mut rng);
                sub.push(realized_cost(actual, strategy));
                let (u2, u3) = strategy.controls(model);
                let x4 = actual[0] + actual[1] - u2 - u3;
                drv.push(0.5 * (x4 * x4 + u3 * u3));
            }
            (sub, drv)
        })
        .collect();
    let sub: Vec<f64> = parts.iter().flat_map(|p| p.0.iter().copied()).collect();
    let drv: Vec<f64> = parts.iter().flat_map(|p| p.1.iter().copied()).collect();
    let (mean, std_error) = mean_and_std_error(&sub);
    let (model_driven_mean, model_driven_std_error) = mean_and_std_error(&drv);
    MonteCarloCost {
        samples,
        mean,
        std_error,
        model_driven_mean,
        model_driven_std_error,
    }
}

/// Paired comparison of the linear optimum against a nonparametric stage-2
/// rule `u₂ = mean of S in the x₀² bin`, fitted and evaluated on separate
/// draws. Both use the optimal `u₃ = ½ (S − u₂)`, so each cost is
/// `¼ (S − u₂)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonlinearCheck {
    pub bins: usize,
    pub linear_cost: f64,
    pub binned_cost: f64,
    /// Standard error of the paired difference `binned − linear`.
    pub std_error: f64,
}

impl NonlinearCheck {
    /// Whether the binned rule fails to beat the linear one beyond noise.
    pub fn linear_not_beaten(&self, sigmas: f64) -> bool {
        self.binned_cost >= self.linear_cost - sigmas * self.std_error
    }
}

pub fn nonlinear_check(init: &GaussianInit, bins: usize, samples: usize, seed: u64) -> Result<NonlinearCheck, GaussianError> {
    let g = optimal_linear_gains(init)?;
    let bins = bins.max(1);
    let (lo, hi) = (-4.0, 4.0);
    let width = (hi - lo) / bins as f64;
    let bin = |x: f64| (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1);
    let mut rng = rng_from_seed(derive_seed(seed, 0));
    let mut sums = vec![KahanSum::new(); bins];
    let mut counts = vec![0usize; bins];
    for _ in 0..samples {
        let x = init.sample(&mut rng);
        let k = bin(x[1]);
        sums[k].add(x[0] + x[1]);
        counts[k] += 1;
    }
    let means: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s.total() / n as f64))
        .collect();
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    let mut lin = Vec::with_capacity(samples);
    let mut diff = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = init.sample(&mut rng);
        let s = x[0] + x[1];
        let l = 0.25 * (s - g.u2(x[1])).powi(2);
        let u2 = means[bin(x[1])].unwrap_or_else(|| g.u2(x[1]));
        let n = 0.25 * (s - u2).powi(2);
        lin.push(l);
        diff.push(n - l);
    }
    let (linear_cost, _) = mean_and_std_error(&lin);
    let (d, std_error) = mean_and_std_error(&diff);
    Ok(NonlinearCheck {
        bins,
        linear_cost,
        binned_cost: linear_cost + d,
        std_error,
    })
}

/// One step of the backward argument, as named coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkthroughRecord {
    pub stage: usize,
    pub step: &'static str,
    pub formula: &'static str,
    pub coefficients: Vec<(&'static str, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Walkthrough {
    pub rho: f64,
    pub records: Vec<WalkthroughRecord>,
    pub gains: ExampleStrategy,
    /// Whether `gains` equals [`CLAIMED_GAINS`] to within `1e-12`.
    pub consistent_with_claim: bool,
}

/// Minimizer of `½ (α S + γ u₂ − u₃)² + ½ u₃²` over `u₃`, as the pair of
/// coefficients on `(S, u₂)`, and the curvature-weighted residual factor.
fn stage3_coefficients(alpha: f64, gamma: f64) -> ((f64, f64), f64) {
    // f(u) = ½ (r − u)² + ½ u², f'(u) = 2u − r, so u* = r / 2 and
    // f(u*) = ½ (r/2)² + ½ (r/2)² = ¼ r².
    let (k_r, residual) = (0.5, 0.25);
    ((k_r * alpha, k_r * gamma), residual)
}

/// Backward induction for the example, recorded step by step.
pub fn dp_walkthrough(init: &GaussianInit) -> Result<Walkthrough, GaussianError> {
    let ((bs, bu2), factor) = stage3_coefficients(1.0, -1.0);
    let var = init.var_x2();
    if var == 0.0 {
        return Err(GaussianError::Degenerate);
    }
    let a = init.cov_s_x2() / var;
    let gains = ExampleStrategy::new(a, bs, bu2 * a)?;
    let records = vec![
        WalkthroughRecord {
            stage: 3,
            step: "minimize over u3",
            formula: "u3 = k_S*S + k_u2*u2",
            coefficients: vec![("k_S", bs), ("k_u2", bu2)],
        },
        WalkthroughRecord {
            stage: 3,
            step: "substitute u3",
            formula: "V3 = E[factor*(S - u2)^2 + mismatch*|S - S_hat|^2]",
            coefficients: vec![("factor", factor), ("mismatch", 0.5)],
        },
        WalkthroughRecord {
            stage: 2,
            step: "add stage-3 mismatch",
            formula: "V2 = min E[factor*(S - u2)^2 + mismatch*|S - S_hat|^2 | x0_2]",
            coefficients: vec![("factor", factor), ("mismatch", 1.0)],
        },
        WalkthroughRecord {
            stage: 2,
            step: "conditional mean estimate",
            formula: "u2 = a*x0_2, a = Cov(S,x0_2)/Var(x0_2)",
            coefficients: vec![("cov", init.cov_s_x2()), ("var", var), ("a", a)],
        },
        WalkthroughRecord {
            stage: 3,
            step: "back-substitute u2",
            formula: "u3 = b*S + c*x0_2",
            coefficients: vec![("b", gains.b), ("c", gains.c)],
        },
        WalkthroughRecord {
            stage: 0,
            step: "substitute actual initial state",
            formula: "u2 = a*xh0_2, u3 = b*(xh0_1 + xh0_2) + c*xh0_2",
            coefficients: vec![("a", gains.a), ("b", gains.b), ("c", gains.c)],
        },
    ];
    Ok(Walkthrough {
        rho: init.rho(),
        records,
        gains,
        consistent_with_claim: gains.max_abs_diff(&CLAIMED_GAINS) <= 1e-12,
    })
}
