//! Evaluation metrics: accuracy, Matthews correlation, F1, Pearson and
//! Spearman correlations.

use crate::error::{EhError, Result};

fn check_nonempty(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(EhError::Contract(format!("{what}: empty input")));
    }
    Ok(())
}

fn check_same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(EhError::Contract(format!("{what}: lengths {a} vs {b}")));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f32> {
    check_nonempty(preds.len(), "accuracy")?;
    check_same_len(preds.len(), labels.len(), "accuracy")?;
    let hit = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hit as f32 / preds.len() as f32)
}

fn confusion(preds: &[usize], labels: &[usize]) -> Result<(f64, f64, f64, f64)> {
    let mut tp = 0.0;
    let mut tn = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&p, &l) in preds.iter().zip(labels) {
        if p > 1 || l > 1 {
            return Err(EhError::Contract(format!("binary metric saw class {}", p.max(l))));
        }
        match (p, l) {
            (1, 1) => tp += 1.0,
            (0, 0) => tn += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fn_ += 1.0,
            _ => unreachable!(),
        }
    }
    Ok((tp, tn, fp, fn_))
}

/// Matthews correlation coefficient; 0 when any denominator factor is 0.
pub fn mcc(preds: &[usize], labels: &[usize]) -> Result<f32> {
    check_nonempty(preds.len(), "mcc")?;
    check_same_len(preds.len(), labels.len(), "mcc")?;
    let (tp, tn, fp, fn_) = confusion(preds, labels)?;
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(((tp * tn - fp * fn_) / denom.sqrt()) as f32)
}

/// 2PR/(P+R); 0 when precision + recall is 0.
pub fn f1(preds: &[usize], labels: &[usize]) -> Result<f32> {
    check_nonempty(preds.len(), "f1")?;
    check_same_len(preds.len(), labels.len(), "f1")?;
    let (tp, _, fp, fn_) = confusion(preds, labels)?;
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if p + r == 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * p * r / (p + r)) as f32)
}

pub fn pearson(x: &[f32], y: &[f32]) -> Result<f32> {
    check_same_len(x.len(), y.len(), "pearson")?;
    if x.len() < 2 {
        return Err(EhError::Contract("pearson: need n >= 2".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().map(|v| *v as f64).sum::<f64>() / n;
    let my = y.iter().map(|v| *v as f64).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a as f64 - mx;
        let dy = b as f64 - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EhError::Contract("pearson: zero variance input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()) as f32)
}

/// Fractional ranks with ties averaged.
fn ranks(x: &[f32]) -> Vec<f32> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut out = vec![0.0f32; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f32 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation of fractional ranks.
pub fn spearman(x: &[f32], y: &[f32]) -> Result<f32> {
    check_same_len(x.len(), y.len(), "spearman")?;
    if x.len() < 2 {
        return Err(EhError::Contract("spearman: need n >= 2".into()));
    }
    pearson(&ranks(x), &ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mcc_hand_cases() {
        assert_eq!(mcc(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(mcc(&[1, 0, 1, 0], &[0, 1, 0, 1]).unwrap(), -1.0);
        // TP=2, TN=1, FP=1, FN=1 -> (2·1 − 1·1)/√(3·3·2·2) = 1/6
        let preds = [1, 1, 1, 0, 0];
        let labels = [1, 1, 0, 1, 0];
        assert!((mcc(&preds, &labels).unwrap() - 1.0 / 6.0).abs() < 1e-7);
        // degenerate: all one class predicted
        assert_eq!(mcc(&[0, 0], &[0, 1]).unwrap(), 0.0);
        assert!(mcc(&[], &[]).is_err());
    }

    #[test]
    fn f1_hand_cases() {
        assert_eq!(f1(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(f1(&[0, 0, 0], &[0, 1, 1]).unwrap(), 0.0);
        // P=0.5 (1 of 2 predicted positives), R=1.0 -> 2/3
        let preds = [1, 1, 0];
        let labels = [1, 0, 0];
        assert!((f1(&preds, &labels).unwrap() - 2.0 / 3.0).abs() < 1e-7);
        assert!(f1(&[], &[]).is_err());
    }

    #[test]
    fn correlation_hand_cases() {
        let x = [1.0f32, 2.0, 3.0, 4.0];
        let y: Vec<f32> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-7);
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-7);
        let neg: Vec<f32> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-7);
        assert!((spearman(&x, &neg).unwrap() + 1.0).abs() < 1e-7);
        // rank hand computation
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-7);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    /// Brute-force oracles on 1,000 random vectors: exact for MCC/F1,
    /// 1e-9 for correlations (f64 oracle vs f32-returning implementation).
    #[test]
    fn metrics_match_brute_force_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let n = rng.gen_range(2..40);
            let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();

            // oracle from first principles
            let count = |p: usize, l: usize| {
                preds.iter().zip(&labels).filter(|(&a, &b)| a == p && b == l).count() as f64
            };
            let (tp, tn, fp, fn_) = (count(1, 1), count(0, 0), count(1, 0), count(0, 1));
            let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
            let mcc_oracle = if denom == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / denom };
            assert!((mcc(&preds, &labels).unwrap() as f64 - mcc_oracle).abs() < 1e-6);

            let pr = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rc = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1_oracle = if pr + rc == 0.0 { 0.0 } else { 2.0 * pr * rc / (pr + rc) };
            assert!((f1(&preds, &labels).unwrap() as f64 - f1_oracle).abs() < 1e-6);

            let xs: Vec<f32> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let ys: Vec<f32> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let pearson_oracle = |x: &[f32], y: &[f32]| -> f64 {
                let nn = x.len() as f64;
                let mx = x.iter().map(|v| *v as f64).sum::<f64>() / nn;
                let my = y.iter().map(|v| *v as f64).sum::<f64>() / nn;
                let sxy: f64 =
                    x.iter().zip(y).map(|(a, b)| (*a as f64 - mx) * (*b as f64 - my)).sum();
                let sxx: f64 = x.iter().map(|a| (*a as f64 - mx).powi(2)).sum();
                let syy: f64 = y.iter().map(|b| (*b as f64 - my).powi(2)).sum();
                sxy / (sxx * syy).sqrt()
            };
            if let Ok(p) = pearson(&xs, &ys) {
                assert!((p as f64 - pearson_oracle(&xs, &ys)).abs() < 1e-6);
            }
            // spearman oracle: rank by sorting, average ties, then pearson
            let rank_oracle = |v: &[f32]| -> Vec<f32> {
                let mut sorted: Vec<f32> = v.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                v.iter()
                    .map(|x| {
                        let below = sorted.iter().filter(|s| *s < x).count() as f32;
                        let equal = sorted.iter().filter(|s| *s == x).count() as f32;
                        below + (equal + 1.0) / 2.0
                    })
                    .collect()
            };
            if let Ok(s) = spearman(&xs, &ys) {
                let o = pearson_oracle(&rank_oracle(&xs), &rank_oracle(&ys));
                assert!((s as f64 - o).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn majority_predictor_is_the_sanity_floor() {
        // balanced labels: constant prediction gives mcc 0, accuracy ~0.5
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let preds = vec![1usize; 100];
        assert_eq!(mcc(&preds, &labels).unwrap(), 0.0);
        assert!((accuracy(&preds, &labels).unwrap() - 0.5).abs() < 1e-6);
    }
}
