use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shannon entropy in nats of a histogram with `num_bins` equal-width bins
/// spanning `[min, max]` of the input. Zero-range input has entropy 0.
pub fn entropy(returns: &[f64], num_bins: usize) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::input("entropy of an empty sample"));
    }
    if num_bins == 0 {
        return Err(Error::input("num_bins must be ≥ 1"));
    }
    if returns.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("non-finite return"));
    }
    let lo = returns.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(0.0);
    }
    let mut counts = vec![0usize; num_bins];
    for x in returns {
        let k = (((x - lo) / (hi - lo)) * num_bins as f64).floor() as usize;
        counts[k.min(num_bins - 1)] += 1;
    }
    let n = returns.len() as f64;
    Ok(-counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>())
}

/// `100·(x − random) / (expert − random)`.
pub fn normalized_score(mean_return: f64, random_ref: f64, expert_ref: f64) -> Result<f64> {
    if !(expert_ref > random_ref) {
        return Err(Error::input(format!(
            "expert reference {expert_ref} must exceed random reference {random_ref}"
        )));
    }
    Ok(100.0 * (mean_return - random_ref) / (expert_ref - random_ref))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolated quantile, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// One named scalar with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub metric: String,
    pub value: f64,
    pub context: String,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsRecord {
    pub fn new(metric: &str, value: f64, context: impl Into<String>, seed: u64, config_hash: &str) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!("metric {metric} is not finite")));
        }
        Ok(Self {
            metric: metric.into(),
            value,
            context: context.into(),
            seed,
            config_hash: config_hash.into(),
        })
    }
}

/// Line-delimited run summary, one record per line.
pub fn metrics_jsonl(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"));
    }
    out
}

/// CSV text with a `# config_hash=` line followed by the column header.
pub fn csv_document(config_hash: &str, columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("# config_hash={config_hash}\n{}\n", columns.join(","));
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_anchors() {
        assert_eq!(entropy(&[3.0; 5], 10).unwrap(), 0.0);
        assert_eq!(entropy(&[1.0], 10).unwrap(), 0.0);
        assert!((entropy(&[0.0, 1.0, 2.0, 3.0], 4).unwrap() - 4f64.ln()).abs() < 1e-12);
        let h = entropy(&[0.0, 0.1, 0.2, 1.0], 2).unwrap();
        assert!((h - 0.5623351446188083).abs() < 1e-12);
    }

    #[test]
    fn normalized_score_anchors() {
        assert_eq!(normalized_score(5.0, 1.0, 5.0).unwrap(), 100.0);
        assert_eq!(normalized_score(1.0, 1.0, 5.0).unwrap(), 0.0);
        assert_eq!(normalized_score(3.0, 1.0, 5.0).unwrap(), 50.0);
        assert!(normalized_score(1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn order_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.75), 7.5);
    }

    #[test]
    fn non_finite_metric_is_rejected() {
        assert!(MetricsRecord::new("x", f64::NAN, "", 0, "h").is_err());
        let r = MetricsRecord::new("entropy_nats", 0.5, "bc", 1, "h").unwrap();
        assert_eq!(metrics_jsonl(std::slice::from_ref(&r)).lines().count(), 1);
        let back: MetricsRecord = serde_json::from_str(metrics_jsonl(std::slice::from_ref(&r)).trim()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn entropy_is_permutation_shift_and_scale_invariant(
            ints in proptest::collection::vec(-1000i32..1000, 1..40),
            shift in -500i32..500,
            pow in 0i32..4,
            bins in 1usize..12,
        ) {
            // integer samples with power-of-two scales and integer shifts keep
            // every bin index exact
            let xs: Vec<f64> = ints.iter().map(|&i| i as f64).collect();
            let h = entropy(&xs, bins).unwrap();
            let mut rev = xs.clone();
            rev.reverse();
            prop_assert_eq!(entropy(&rev, bins).unwrap(), h);
            let k = 2f64.powi(pow);
            let moved: Vec<f64> = xs.iter().map(|x| k * x + shift as f64).collect();
            prop_assert!((entropy(&moved, bins).unwrap() - h).abs() < 1e-12);
        }

        #[test]
        fn normalized_score_is_affine_invariant(
            x in -10.0f64..10.0, lo in -10.0f64..0.0, width in 0.1f64..10.0,
            k in 0.1f64..10.0, b in -10.0f64..10.0,
        ) {
            let hi = lo + width;
            let s = normalized_score(x, lo, hi).unwrap();
            let t = normalized_score(k * x + b, k * lo + b, k * hi + b).unwrap();
            prop_assert!((s - t).abs() < 1e-7 * (1.0 + s.abs()));
        }
    }
}
