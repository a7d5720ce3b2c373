use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropic::displacement_batch;
use crate::geometry::{default_eps_scale, CostMatrix, CostModel, PointCloud};
use crate::sinkhorn::{solve_potentials, SinkhornOptions};
use crate::{Error, Result};

/// Shape of the step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaKind {
    /// `alpha_k = 1/e` until the final full step.
    Decelerated,
    /// Equal increments of the interpolation time.
    Constant,
    /// Quadratic interpolation time.
    Accelerated,
}

impl fmt::Display for AlphaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaKind::Decelerated => "decelerated",
            AlphaKind::Constant => "constant",
            AlphaKind::Accelerated => "accelerated",
        })
    }
}

impl FromStr for AlphaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decelerated" => Ok(AlphaKind::Decelerated),
            "constant" => Ok(AlphaKind::Constant),
            "accelerated" => Ok(AlphaKind::Accelerated),
            other => Err(Error::InvalidParameter(format!("unknown schedule kind {other:?}"))),
        }
    }
}

/// Interpolation times `t_k = 1 - prod_{l <= k} (1 - alpha_l)`.
pub fn times_from_alphas(alphas: &[f64]) -> Vec<f64> {
    let mut remaining = 1.0;
    alphas
        .iter()
        .map(|a| {
            remaining *= 1.0 - a;
            1.0 - remaining
        })
        .collect()
}

/// Step sizes and interpolation times for steps `0..=k`.
///
/// Constant and accelerated schedules are defined by a target time curve,
/// from which `alpha_k = (t_k - t_{k-1}) / (1 - t_{k-1})`.
pub fn alpha_schedule(kind: AlphaKind, k: usize) -> (Vec<f64>, Vec<f64>) {
    let steps = k + 1;
    let mut alphas = match kind {
        AlphaKind::Decelerated => vec![(-1.0f64).exp(); steps],
        AlphaKind::Constant | AlphaKind::Accelerated => {
            let curve = |i: usize| {
                let s = (i + 1) as f64 / steps as f64;
                if kind == AlphaKind::Constant {
                    s
                } else {
                    s * s
                }
            };
            let mut prev = 0.0;
            (0..steps)
                .map(|i| {
                    let t = curve(i);
                    let a = (t - prev) / (1.0 - prev);
                    prev = t;
                    a
                })
                .collect()
        }
    };
    alphas[k] = 1.0;
    let times = match kind {
        AlphaKind::Decelerated => times_from_alphas(&alphas),
        _ => {
            let mut t: Vec<f64> = (0..steps)
                .map(|i| {
                    let s = (i + 1) as f64 / steps as f64;
                    if kind == AlphaKind::Constant {
                        s
                    } else {
                        s * s
                    }
                })
                .collect();
            t[k] = 1.0;
            t
        }
    };
    (alphas, times)
}

/// Linear decrease from `tau_init` to `tau_k` over `k` steps.
pub fn threshold_schedule(tau_init: f64, tau_k: f64, k: usize) -> Result<Vec<f64>> {
    if !(tau_k > 0.0 && tau_init >= tau_k && tau_init.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "thresholds need tau_init >= tau_K > 0, got {tau_init} and {tau_k}"
        )));
    }
    if k == 0 {
        return Ok(vec![tau_k]);
    }
    let mut out: Vec<f64> = (0..=k)
        .map(|i| tau_init + (i as f64 / k as f64) * (tau_k - tau_init))
        .collect();
    out[k] = tau_k;
    Ok(out)
}

/// How the per-step regularizations are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonPlan {
    /// Explicit `eps_k` for every step.
    Fixed(Vec<f64>),
    /// `eps_k = theta * default_eps_scale(X^(k), Y)`, evaluated during the fit.
    MeanCost { theta: f64 },
}

/// Default `theta` for [`EpsilonPlan::MeanCost`].
pub const DEFAULT_THETA: f64 = 0.0625;

/// All per-step parameters of a progressive fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    pub alphas: Vec<f64>,
    pub times: Vec<f64>,
    pub epsilons: EpsilonPlan,
    pub thresholds: Vec<f64>,
}

impl ScheduleSet {
    pub fn new(kind: AlphaKind, k: usize, epsilons: EpsilonPlan, tau_init: f64, tau_k: f64) -> Result<Self> {
        let (alphas, times) = alpha_schedule(kind, k);
        let thresholds = threshold_schedule(tau_init, tau_k, k)?;
        let set = Self {
            alphas,
            times,
            epsilons,
            thresholds,
        };
        set.validate()?;
        Ok(set)
    }

    /// Build from explicit step sizes; times follow from the product formula.
    pub fn from_parts(alphas: Vec<f64>, epsilons: EpsilonPlan, thresholds: Vec<f64>) -> Result<Self> {
        let times = times_from_alphas(&alphas);
        let set = Self {
            alphas,
            times,
            epsilons,
            thresholds,
        };
        set.validate()?;
        Ok(set)
    }

    /// Index of the last step (`K`).
    pub fn k(&self) -> usize {
        self.alphas.len().saturating_sub(1)
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let n = self.alphas.len();
        if n == 0 {
            return bad("schedule needs at least one step".into());
        }
        if self.times.len() != n || self.thresholds.len() != n {
            return bad("schedule components have different lengths".into());
        }
        if let EpsilonPlan::Fixed(e) = &self.epsilons {
            if e.len() != n {
                return bad(format!("{} epsilons for {n} steps", e.len()));
            }
            if !e.iter().all(|v| *v > 0.0 && v.is_finite()) {
                return bad("epsilons must be positive".into());
            }
        }
        if let EpsilonPlan::MeanCost { theta } = self.epsilons {
            if !(theta > 0.0 && theta.is_finite()) {
                return bad(format!("theta must be positive, got {theta}"));
            }
        }
        if !self.alphas.iter().all(|a| *a > 0.0 && *a <= 1.0) {
            return bad("alphas must lie in (0, 1]".into());
        }
        if self.alphas[n - 1] != 1.0 {
            return bad("the last step must be complete (alpha_K = 1)".into());
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) || self.times[n - 1] != 1.0 {
            return bad("times must increase strictly to 1".into());
        }
        if !self.thresholds.iter().all(|t| *t > 0.0) || self.thresholds.windows(2).any(|w| w[1] > w[0]) {
            return bad("thresholds must be positive and non-increasing".into());
        }
        Ok(())
    }
}

/// Outcome of the regularization scheduler.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonSchedule {
    pub epsilons: Vec<f64>,
    /// Starting value `default_eps_scale(X, Y)`.
    pub eps0: f64,
    /// Self-transport scale `default_eps_scale(Y, Y)`.
    pub sigma: f64,
    /// Index of the selected scale.
    pub selected: usize,
    /// Held-out squared error per candidate scale; `None` if its solve failed.
    pub errors: Vec<Option<f64>>,
}

/// Pick the final regularization by self-transport of the target and
/// interpolate from `beta0 * eps0` towards it along `times`.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_schedule(
    target: &PointCloud,
    y_test: &Array2<f64>,
    source: &PointCloud,
    model: &CostModel,
    scales: &[f64],
    beta0: f64,
    times: &[f64],
    tau: f64,
) -> Result<EpsilonSchedule> {
    if scales.is_empty() || !scales.iter().all(|s| *s > 0.0) {
        return Err(Error::InvalidParameter("scales must be nonempty and positive".into()));
    }
    if !(beta0 > 0.0) {
        return Err(Error::InvalidParameter(format!("beta0 must be positive, got {beta0}")));
    }
    if y_test.ncols() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: y_test.ncols(),
        });
    }
    let eps0 = default_eps_scale(model, source, target)?;
    let sigma = default_eps_scale(model, target, target)?;
    let cost = CostMatrix::new(model, target, target)?;
    let opts = SinkhornOptions::new(tau, 100_000);
    let b = target.weights();
    let errors: Vec<Option<f64>> = scales
        .iter()
        .map(|s| {
            let eps = s * sigma;
            let (pot, report) = solve_potentials(&cost, b, b, eps, &opts, None).ok()?;
            if !report.converged {
                return None;
            }
            let g = pot.weight_free_g(b);
            let z = displacement_batch(target, &g, eps, model, y_test, None);
            // y - T(y) is exactly the displacement z
            Some(z.iter().map(|v| v * v).sum())
        })
        .collect();
    let mut selected = None;
    for (p, e) in errors.iter().enumerate() {
        if let Some(e) = e {
            match selected {
                Some((_, best)) if *e >= best => {}
                _ => selected = Some((p, *e)),
            }
        }
    }
    let Some((selected, _)) = selected else {
        let listed: Vec<String> = scales.iter().map(|s| format!("{s}")).collect();
        return Err(Error::NoCandidate(format!(
            "no self-transport solve converged for scales [{}]",
            listed.join(", ")
        )));
    };
    let eps1 = scales[selected] * sigma;
    let start = beta0 * eps0;
    let epsilons = times.iter().map(|t| (1.0 - t) * start + t * eps1).collect();
    Ok(EpsilonSchedule {
        epsilons,
        eps0,
        sigma,
        selected,
        errors,
    })
}

/// Default scale grid `2^-3 .. 2^3`.
pub fn default_scales() -> Vec<f64> {
    (-3..=3).map(|e| 2f64.powi(e)).collect()
}

/// Seeded split of a cloud into a training cloud (renormalized weights) and
/// `ceil(frac * n)` held-out points.
pub fn holdout_split(cloud: &PointCloud, frac: f64, seed: u64) -> Result<(PointCloud, Array2<f64>)> {
    let n = cloud.len();
    let n_test = ((frac * n as f64).ceil() as usize).max(1);
    if n_test >= n {
        return Err(Error::InvalidCloud(format!("cannot hold out {n_test} of {n} points")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = idx.split_at(n_test);
    let mut train = train.to_vec();
    train.sort_unstable();
    let pts = cloud.points().select(ndarray::Axis(0), &train);
    let w = cloud.weights().select(ndarray::Axis(0), &train);
    let total = w.sum();
    let train_cloud = PointCloud::new(pts, w / total)?;
    let test_pts = cloud.points().select(ndarray::Axis(0), test);
    Ok((train_cloud, test_pts))
}
