//! Analysis quantities: feature-drift L2, parameter distance, top-2 PCA
//! projection, convergence step counts, and gradient-norm summaries.

use serde::{Deserialize, Serialize};

use crate::error::{EhError, Result};
use crate::numcore::{ParamStore, Tensor};
use crate::pet::is_body_param;

/// Pooled backbone features over a fixed probe set, labelled by where in a
/// run they were taken ("pretrained", "stage1_end", "final", ...).
#[derive(Debug, Clone)]
pub struct FeatureSnapshot {
    pub tag: String,
    pub features: Tensor,
}

impl FeatureSnapshot {
    pub fn new(tag: impl Into<String>, features: Tensor) -> Self {
        FeatureSnapshot { tag: tag.into(), features }
    }
}

/// Mean over probe examples of the per-example L2 norm of (after − before).
/// Mean (not sum) keeps values comparable across probe-set sizes.
pub fn feature_change(before: &FeatureSnapshot, after: &FeatureSnapshot) -> Result<f32> {
    if before.features.shape() != after.features.shape() {
        return Err(EhError::Contract(format!(
            "feature_change: shapes {:?} vs {:?} (tags {:?}, {:?})",
            before.features.shape(),
            after.features.shape(),
            before.tag,
            after.tag
        )));
    }
    let (n, d) = before.features.expect_2d("feature snapshot")?;
    let mut total = 0.0f64;
    for i in 0..n {
        let mut sq = 0.0f64;
        for j in 0..d {
            let diff = (after.features.at(i, j) - before.features.at(i, j)) as f64;
            sq += diff * diff;
        }
        total += sq.sqrt();
    }
    Ok((total / n as f64) as f32)
}

/// Squared Euclidean distance over backbone body parameters,
/// Σ ‖θ − θ⁰‖² with the `mlm.*` pretraining head excluded.
pub fn param_distance(theta: &ParamStore, theta0: &ParamStore) -> Result<f32> {
    let names: Vec<&str> = theta.names().filter(|n| is_body_param(n)).collect();
    let names0: Vec<&str> = theta0.names().filter(|n| is_body_param(n)).collect();
    {
        let mut a = names.clone();
        let mut b = names0.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(EhError::Contract("param_distance: name sets differ".into()));
        }
    }
    let mut total = 0.0f64;
    for name in names {
        let t = theta.get(name)?;
        let t0 = theta0.get(name)?;
        if t.shape() != t0.shape() {
            return Err(EhError::Contract(format!("param_distance: {name} shape mismatch")));
        }
        for (a, b) in t.data().iter().zip(t0.data()) {
            let d = (a - b) as f64;
            total += d * d;
        }
    }
    Ok(total as f32)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Projection2d {
    /// One (x, y) per input row.
    pub points: Vec<[f32; 2]>,
    /// Fraction of total variance captured by each of the two components.
    pub explained: [f32; 2],
}

const PCA_TOL: f64 = 1e-8;
const PCA_MAX_ITERS: usize = 1000;

/// Deterministic power-iteration start vector.
fn pca_init(d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d)
        .map(|i| {
            let x = ((i as f64 + 1.0) * 12.9898).sin() * 43758.5453;
            x - x.floor() - 0.5
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Center, then project onto the top two principal directions found by
/// power iteration with deflation.
pub fn pca_project_2d(features: &Tensor) -> Result<Projection2d> {
    let (n, d) = features.expect_2d("pca input")?;
    if n < 3 {
        return Err(EhError::Contract(format!("pca: need at least 3 rows, got {n}")));
    }
    let mut centered = vec![0.0f64; n * d];
    for j in 0..d {
        let mean = (0..n).map(|i| features.at(i, j) as f64).sum::<f64>() / n as f64;
        for i in 0..n {
            centered[i * d + j] = features.at(i, j) as f64 - mean;
        }
    }
    let total_var: f64 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if total_var == 0.0 {
        return Err(EhError::Contract("pca: rank-0 features (zero variance)".into()));
    }

    // covariance application: v -> Xᵀ(Xv)/n on the (deflated) data
    let mut data = centered.clone();
    let mut components: Vec<Vec<f64>> = Vec::new();
    let mut eigenvalues = [0.0f64; 2];
    for comp in 0..2 {
        let mut v = pca_init(d);
        let mut lambda = 0.0f64;
        for _ in 0..PCA_MAX_ITERS {
            let mut xv = vec![0.0f64; n];
            for i in 0..n {
                xv[i] = (0..d).map(|j| data[i * d + j] * v[j]).sum();
            }
            let mut w = vec![0.0f64; d];
            for i in 0..n {
                let s = xv[i] / n as f64;
                for j in 0..d {
                    w[j] += data[i * d + j] * s;
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break; // deflated data has no remaining variance
            }
            for x in &mut w {
                *x /= norm;
            }
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = w;
            lambda = norm;
            if delta < PCA_TOL {
                break;
            }
        }
        eigenvalues[comp] = lambda;
        // deflate: remove the component from every row
        for i in 0..n {
            let proj: f64 = (0..d).map(|j| data[i * d + j] * v[j]).sum();
            for j in 0..d {
                data[i * d + j] -= proj * v[j];
            }
        }
        components.push(v);
    }

    let points = (0..n)
        .map(|i| {
            let x: f64 = (0..d).map(|j| centered[i * d + j] * components[0][j]).sum();
            let y: f64 = (0..d).map(|j| centered[i * d + j] * components[1][j]).sum();
            [x as f32, y as f32]
        })
        .collect();
    Ok(Projection2d {
        points,
        explained: [
            (eigenvalues[0] / total_var) as f32,
            (eigenvalues[1] / total_var) as f32,
        ],
    })
}

/// First index whose windowed moving average drops below τ; the window is
/// truncated at the start of the curve.
pub fn steps_to_threshold(loss_curve: &[f32], tau: f32, window: usize) -> Option<usize> {
    if window == 0 {
        return None;
    }
    for i in 0..loss_curve.len() {
        let lo = i.saturating_sub(window - 1);
        let mean =
            loss_curve[lo..=i].iter().map(|v| *v as f64).sum::<f64>() / (i - lo + 1) as f64;
        if (mean as f32) < tau {
            return Some(i);
        }
    }
    None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradNormSummary {
    pub head_norm_mean: f32,
    pub backbone_norm_mean: f32,
    /// backbone/head within one run; None when the head mean is 0.
    pub ratio: Option<f32>,
}

/// Means over the first `window` logged (head, backbone) gradient norms.
pub fn grad_norm_summary(log: &[(f32, f32)], window: usize) -> Result<GradNormSummary> {
    if log.is_empty() {
        return Err(EhError::Contract("grad_norm_summary: no gradient logs".into()));
    }
    let take = window.min(log.len());
    let head = log[..take].iter().map(|(h, _)| *h as f64).sum::<f64>() / take as f64;
    let backbone = log[..take].iter().map(|(_, b)| *b as f64).sum::<f64>() / take as f64;
    Ok(GradNormSummary {
        head_norm_mean: head as f32,
        backbone_norm_mean: backbone as f32,
        ratio: if head > 0.0 { Some((backbone / head) as f32) } else { None },
    })
}
