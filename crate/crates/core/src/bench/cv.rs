use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::entropic::{entropic_map_batch, sinkhorn_divergence, DivergenceEps};
use crate::geometry::{default_eps_scale, CostModel, PointCloud};
use crate::sinkhorn::{sinkhorn_solve, SinkhornOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvOutcome {
    /// Selected regularization `scale * eps0`.
    pub eps: f64,
    pub eps0: f64,
    pub scale: f64,
    /// Mean validation divergence per scale (infinite when a solve failed).
    pub scores: Vec<f64>,
}

fn fold_of(indices: &[usize], folds: usize, f: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (k, i) in indices.iter().enumerate() {
        if k % folds == f {
            val.push(*i);
        } else {
            train.push(*i);
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn subset(cloud: &PointCloud, idx: &[usize]) -> Result<PointCloud> {
    PointCloud::uniform(cloud.points().select(Axis(0), idx))
}

/// Choose the entropic-map regularization from `scales x eps0` by k-fold
/// cross-validation. Each fold fits the map on the training parts and scores
/// the Sinkhorn divergence between mapped validation sources and validation
/// targets; the scale with the lowest mean score wins (ties to the first).
pub fn cv_entropic_eps(
    source: &PointCloud,
    target: &PointCloud,
    model: &CostModel,
    scales: &[f64],
    folds: usize,
    seed: u64,
    tau: f64,
) -> Result<CvOutcome> {
    if folds < 2 || scales.is_empty() {
        return Err(Error::InvalidParameter("need at least two folds and one scale".into()));
    }
    if source.len() < folds || target.len() < folds {
        return Err(Error::InvalidParameter("fewer points than folds".into()));
    }
    let eps0 = default_eps_scale(model, source, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xi: Vec<usize> = (0..source.len()).collect();
    let mut yi: Vec<usize> = (0..target.len()).collect();
    xi.shuffle(&mut rng);
    yi.shuffle(&mut rng);
    let opts = SinkhornOptions::new(tau, 100_000);

    let mut splits = Vec::with_capacity(folds);
    for f in 0..folds {
        let (xt, xv) = fold_of(&xi, folds, f);
        let (yt, yv) = fold_of(&yi, folds, f);
        splits.push((
            subset(source, &xt)?,
            subset(source, &xv)?,
            subset(target, &yt)?,
            subset(target, &yv)?,
        ));
    }

    // Scales are visited from the largest down within each fold, each solve
    // warm-started from the previous one.
    let mut order: Vec<usize> = (0..scales.len()).collect();
    order.sort_by(|p, q| scales[*q].total_cmp(&scales[*p]));
    let mut totals = vec![0.0; scales.len()];
    for (x_tr, x_val, y_tr, y_val) in &splits {
        let mut prev: Option<(Array1<f64>, Array1<f64>)> = None;
        for &p in &order {
            let eps = scales[p] * eps0;
            let init = prev.clone();
            let score = (|| -> Result<f64> {
                let out = sinkhorn_solve(x_tr, y_tr, model, eps, &opts, init.as_ref().map(|(f, g)| (f, g)))?;
                if !out.report.converged {
                    return Ok(f64::INFINITY);
                }
                let g = out.potentials.weight_free_g(y_tr.weights());
                let mapped: Array2<f64> = entropic_map_batch(y_tr, &g, eps, model, x_val.points())?;
                prev = Some((out.potentials.f, out.potentials.g));
                sinkhorn_divergence(&PointCloud::uniform(mapped)?, y_val, model, DivergenceEps::Auto)
            })()
            .unwrap_or(f64::INFINITY);
            totals[p] += score;
        }
    }
    let scores: Vec<f64> = totals.iter().map(|t| t / folds as f64).collect();
    let mut best = None;
    for (p, s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b: usize| *s < scores[b]) {
            best = Some(p);
        }
    }
    let best = best.ok_or_else(|| Error::NoCandidate("no cross-validation fold succeeded".into()))?;
    Ok(CvOutcome {
        eps: scales[best] * eps0,
        eps0,
        scale: scales[best],
        scores,
    })
}
