//! Two-judge posterior formulas with a Monte-Carlo check, and a direct
//! measurement of how one pseudo-labeled gradient step moves population risk.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JuryParams {
    /// Accuracy of the judgment model.
    pub p_d: f64,
    /// Accuracy of the exclusion model.
    pub p_e: f64,
    /// Prior probability of the positive hypothesis.
    pub pi: f64,
}

impl JuryParams {
    pub fn new(p_d: f64, p_e: f64, pi: f64) -> Self {
        Self { p_d, p_e, pi }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [("p_d", self.p_d), ("p_e", self.p_e), ("pi", self.pi)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} is not a probability")));
            }
        }
        Ok(())
    }
}

fn ratio(num: f64, other: f64) -> Result<f64> {
    let den = num + other;
    if den <= 0.0 {
        return Err(Error::InvalidArgument("posterior denominator is zero".into()));
    }
    Ok(num / den)
}

/// `P(H₁ | D, E)` for independent judge and exclusion decisions.
pub fn posterior_joint(params: &JuryParams) -> Result<f64> {
    params.check()?;
    let JuryParams { p_d, p_e, pi } = *params;
    ratio(p_d * p_e * pi, (1.0 - p_d) * (1.0 - p_e) * (1.0 - pi))
}

/// `P(H₁ | D)` from the judgment model alone.
pub fn posterior_single(p_d: f64, pi: f64) -> Result<f64> {
    JuryParams::new(p_d, 0.5, pi).check()?;
    ratio(p_d * pi, (1.0 - p_d) * (1.0 - pi))
}

pub fn exclusion_gain(params: &JuryParams) -> Result<f64> {
    Ok(posterior_joint(params)? - posterior_single(params.p_d, params.pi)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Binomial standard error of `value`.
    pub sigma: f64,
    /// Trials in which the conditioning event occurred.
    pub count: u64,
}

impl Estimate {
    fn from_counts(hits: u64, count: u64) -> Self {
        let value = hits as f64 / count as f64;
        Self {
            value,
            sigma: (value * (1.0 - value) / count as f64).sqrt(),
            count,
        }
    }

    /// Whether `truth` lies within `k` binomial standard errors, using the
    /// standard error implied by `truth` itself.
    pub fn brackets(&self, truth: f64, k: f64) -> bool {
        let sigma = (truth * (1.0 - truth) / self.count as f64).sqrt();
        (self.value - truth).abs() <= k * sigma + 1e-15
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JuryEstimate {
    pub joint: Estimate,
    pub single: Estimate,
}

const SHARDS: u64 = 8;

/// Samples `H ~ Bernoulli(π)` and independent judge/exclusion verdicts that
/// are correct with probabilities `p_d` and `p_e`, then estimates
/// `P(H₁ | D, E)` and `P(H₁ | D)`. Shards run on separate threads with their
/// own streams and merge in shard order.
pub fn simulate_jury(params: &JuryParams, n: u64, seed: u64) -> Result<JuryEstimate> {
    params.check()?;
    if n == 0 {
        return Err(Error::InsufficientSamples("zero trials requested".into()));
    }
    let counts: Vec<[u64; 4]> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..SHARDS)
            .map(|shard| {
                let trials = n / SHARDS + u64::from(shard < n % SHARDS);
                s.spawn(move || {
                    let mut rng = seeded(seed, 0x7e0 + shard);
                    // [D count, D∧H₁, D∧E count, D∧E∧H₁]
                    let mut c = [0u64; 4];
                    for _ in 0..trials {
                        let h1 = rng.random::<f64>() < params.pi;
                        let d_correct = rng.random::<f64>() < params.p_d;
                        let e_correct = rng.random::<f64>() < params.p_e;
                        // D and E both assert H₁
                        let d = h1 == d_correct;
                        let e = h1 == e_correct;
                        if d {
                            c[0] += 1;
                            c[1] += u64::from(h1);
                            if e {
                                c[2] += 1;
                                c[3] += u64::from(h1);
                            }
                        }
                    }
                    c
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("shard panicked")).collect()
    });
    let total = counts.iter().fold([0u64; 4], |mut acc, c| {
        for i in 0..4 {
            acc[i] += c[i];
        }
        acc
    });
    if total[2] == 0 {
        return Err(Error::InsufficientSamples(format!(
            "no trial had both verdicts positive in {n} trials"
        )));
    }
    Ok(JuryEstimate {
        joint: Estimate::from_counts(total[3], total[2]),
        single: Estimate::from_counts(total[1], total[0]),
    })
}

/// Probabilities `1/steps, 2/steps, …, (steps−1)/steps`.
pub fn probability_grid(steps: usize) -> Vec<f64> {
    (1..steps).map(|i| i as f64 / steps as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub params: JuryParams,
    pub joint: f64,
    pub single: f64,
    pub gain: f64,
    pub mc: Option<JuryEstimate>,
}

/// Analytic values on the full cube of `grid`, with Monte-Carlo estimates
/// when `mc_trials > 0`.
pub fn theory_grid(grid: &[f64], mc_trials: u64, seed: u64) -> Result<Vec<GridRow>> {
    let mut rows = Vec::with_capacity(grid.len().pow(3));
    for &p_d in grid {
        for &p_e in grid {
            for &pi in grid {
                let params = JuryParams::new(p_d, p_e, pi);
                let mc = if mc_trials > 0 {
                    Some(simulate_jury(&params, mc_trials, seed.wrapping_add(rows.len() as u64))?)
                } else {
                    None
                };
                rows.push(GridRow {
                    params,
                    joint: posterior_joint(&params)?,
                    single: posterior_single(p_d, pi)?,
                    gain: exclusion_gain(&params)?,
                    mc,
                });
            }
        }
    }
    Ok(rows)
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("p_d,p_e,pi,joint,single,gain,mc_joint,mc_joint_sigma,mc_single,mc_single_sigma\n");
    for r in rows {
        let mc = r.mc.map_or(",,,".to_string(), |m| {
            format!("{:.6},{:.6},{:.6},{:.6}", m.joint.value, m.joint.sigma, m.single.value, m.single.sigma)
        });
        let _ = writeln!(
            out,
            "{:.4},{:.4},{:.4},{:.10},{:.10},{:.10},{mc}",
            r.params.p_d, r.params.p_e, r.params.pi, r.joint, r.single, r.gain
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskDemoConfig {
    pub seeds: u64,
    pub n_train: usize,
    /// Half-distance between the two class means along each axis.
    pub separation: f64,
    /// Step size of the single pseudo-labeled update.
    pub eta: f64,
    /// Training stops once the gradient norm falls below this.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Quadrature points for the population risk.
    pub quadrature: usize,
}

impl Default for RiskDemoConfig {
    fn default() -> Self {
        Self {
            seeds: 30,
            n_train: 400,
            separation: 1.0,
            eta: 0.5,
            grad_tol: 1e-3,
            max_iters: 200_000,
            quadrature: 4001,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskDelta {
    pub seed: u64,
    pub correct: f64,
    pub wrong: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskDeltaSummary {
    pub mean_correct: f64,
    pub mean_abs_correct: f64,
    pub mean_wrong: f64,
    pub runs: Vec<RiskDelta>,
}

/// Logistic model `σ(w·x + b)` on two features.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Logistic {
    w: [f64; 2],
    b: f64,
}

impl Logistic {
    fn margin(&self, x: &[f64; 2]) -> f64 {
        self.w[0] * x[0] + self.w[1] * x[1] + self.b
    }

    /// Gradient of the mean log-loss over `data`, labels in {0,1}.
    fn gradient(&self, data: &[([f64; 2], f64)]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (x, y) in data {
            let r = sigmoid(self.margin(x)) - y;
            g[0] += r * x[0];
            g[1] += r * x[1];
            g[2] += r;
        }
        g.map(|v| v / data.len() as f64)
    }

    fn step(&self, g: &[f64; 3], eta: f64) -> Self {
        Self {
            w: [self.w[0] - eta * g[0], self.w[1] - eta * g[1]],
            b: self.b - eta * g[2],
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `log(1 + e^{−z})` without overflow.
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Expected log-loss under the mixture `y ~ Bernoulli(½)`,
/// `x | y ~ N(±μ, I)`: for each class the signed margin is Gaussian, so the
/// risk is a one-dimensional integral done by Simpson's rule over ±10σ.
fn population_risk(model: &Logistic, mu: [f64; 2], points: usize) -> f64 {
    let points = points | 1;
    let sd = (model.w[0].powi(2) + model.w[1].powi(2)).sqrt();
    let mut risk = 0.0;
    for sign in [1.0, -1.0] {
        // positive class has mean +μ and label 1; the signed margin is sign·(w·x + b)
        let mean = sign * (model.w[0] * sign * mu[0] + model.w[1] * sign * mu[1] + model.b);
        if sd == 0.0 {
            risk += 0.5 * softplus_neg(mean);
            continue;
        }
        let (lo, hi) = (mean - 10.0 * sd, mean + 10.0 * sd);
        let h = (hi - lo) / (points - 1) as f64;
        let mut acc = 0.0;
        for i in 0..points {
            let z = lo + i as f64 * h;
            let u = (z - mean) / sd;
            let pdf = (-0.5 * u * u).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            let wgt = if i == 0 || i == points - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += wgt * pdf * softplus_neg(z);
        }
        risk += 0.5 * acc * h / 3.0;
    }
    risk
}

fn sample_mixture(rng: &mut impl Rng, mu: [f64; 2]) -> ([f64; 2], f64) {
    let y = rng.random::<bool>();
    let s = if y { 1.0 } else { -1.0 };
    let x = [
        s * mu[0] + rng.sample::<f64, _>(StandardNormal),
        s * mu[1] + rng.sample::<f64, _>(StandardNormal),
    ];
    (x, f64::from(u8::from(y)))
}

/// Risk change from one step on a held-out sample, with its true label and
/// with the flipped label, averaged over seeds.
pub fn risk_delta_demo(config: &RiskDemoConfig) -> Result<RiskDeltaSummary> {
    if config.seeds == 0 || config.n_train == 0 {
        return Err(Error::InvalidArgument("risk demo needs seeds >= 1 and n_train >= 1".into()));
    }
    let mu = [config.separation, 0.5 * config.separation];
    let mut runs = Vec::with_capacity(config.seeds as usize);
    for seed in 0..config.seeds {
        let mut rng = seeded(seed, 0x715c);
        let data: Vec<([f64; 2], f64)> = (0..config.n_train).map(|_| sample_mixture(&mut rng, mu)).collect();
        let mut model = Logistic { w: [0.0, 0.0], b: 0.0 };
        let mut grad_norm = f64::INFINITY;
        for _ in 0..config.max_iters {
            let g = model.gradient(&data);
            grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if grad_norm < config.grad_tol {
                break;
            }
            model = model.step(&g, 1.0);
        }
        if grad_norm >= config.grad_tol {
            return Err(Error::InvalidArgument(format!(
                "seed {seed}: training stalled at gradient norm {grad_norm:e}"
            )));
        }
        let before = population_risk(&model, mu, config.quadrature);
        let (x, y) = sample_mixture(&mut rng, mu);
        let delta = |label: f64| {
            let g = model.gradient(&[(x, label)]);
            population_risk(&model.step(&g, config.eta), mu, config.quadrature) - before
        };
        runs.push(RiskDelta {
            seed,
            correct: delta(y),
            wrong: delta(1.0 - y),
            grad_norm,
        });
    }
    let n = runs.len() as f64;
    Ok(RiskDeltaSummary {
        mean_correct: runs.iter().map(|r| r.correct).sum::<f64>() / n,
        mean_abs_correct: runs.iter().map(|r| r.correct.abs()).sum::<f64>() / n,
        mean_wrong: runs.iter().map(|r| r.wrong).sum::<f64>() / n,
        runs,
    })
}
