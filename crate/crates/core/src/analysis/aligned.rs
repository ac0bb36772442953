//! Position-aligned comparison of per-token rewards between two groups of
//! sequences, with a pooled-variance two-sample t-test at every offset.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Student's t-test assuming equal variances (`df = n1 + n2 - 2`).
///
/// `None` when either sample has fewer than two values. Two constant samples
/// give `t = 0, p = 1` when equal and `t = ±inf, p = 0` otherwise.
pub fn pooled_t_test(a: &[f64], b: &[f64]) -> Option<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let df = n1 + n2 - 2.0;
    let pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
    let se = (pooled * (1.0 / n1 + 1.0 / n2)).sqrt();
    let diff = m1 - m2;
    if se == 0.0 {
        return Some(if diff == 0.0 {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest {
                t: diff.signum() * f64::INFINITY,
                df,
                p: 0.0,
            }
        });
    }
    let t = diff / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Some(TTest { t, df, p })
}

/// Per-position rewards of one sequence with the anchor span (for example a
/// connective) that defines offset 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredRewards {
    pub rewards: Vec<f64>,
    pub anchor_start: usize,
    /// Number of anchor tokens (at least 1). Their mean sits at offset 0.
    pub anchor_len: usize,
}

impl AnchoredRewards {
    pub fn new(rewards: Vec<f64>, anchor_start: usize, anchor_len: usize) -> Result<Self> {
        if anchor_len == 0 || anchor_start + anchor_len > rewards.len() {
            return Err(Error::InvalidParameter(format!(
                "anchor {anchor_start}+{anchor_len} outside {} rewards",
                rewards.len()
            )));
        }
        Ok(Self {
            rewards,
            anchor_start,
            anchor_len,
        })
    }

    /// (offset, reward) pairs: tokens before the anchor get negative offsets,
    /// tokens after it positive ones.
    pub fn by_offset(&self) -> Vec<(i64, f64)> {
        let start = self.anchor_start;
        let end = start + self.anchor_len;
        let mut out = Vec::with_capacity(self.rewards.len() - self.anchor_len + 1);
        for (t, &r) in self.rewards[..start].iter().enumerate() {
            out.push((t as i64 - start as i64, r));
        }
        let anchor = &self.rewards[start..end];
        out.push((0, anchor.iter().sum::<f64>() / anchor.len() as f64));
        for (i, &r) in self.rewards[end..].iter().enumerate() {
            out.push((i as i64 + 1, r));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetComparison {
    pub offset: i64,
    pub mean_real: Option<f64>,
    pub mean_fake: Option<f64>,
    pub n_real: usize,
    pub n_fake: usize,
    pub test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedComparison {
    pub rows: Vec<OffsetComparison>,
}

impl AlignedComparison {
    pub fn at(&self, offset: i64) -> Option<&OffsetComparison> {
        self.rows.iter().find(|r| r.offset == offset)
    }

    /// Tab-separated table with a header line; missing values print as `-`.
    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let mut out = String::from("offset\tmean_real\tmean_fake\tn_real\tn_fake\tt\tp\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.offset,
                opt(r.mean_real),
                opt(r.mean_fake),
                r.n_real,
                r.n_fake,
                opt(r.test.map(|t| t.t)),
                r.test.map_or_else(|| "-".to_string(), |t| format!("{:.6e}", t.p)),
            ));
        }
        out
    }
}

pub fn aligned_comparison(real: &[AnchoredRewards], fake: &[AnchoredRewards]) -> AlignedComparison {
    let collect = |items: &[AnchoredRewards]| {
        let mut by: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for item in items {
            for (o, r) in item.by_offset() {
                by.entry(o).or_default().push(r);
            }
        }
        by
    };
    let real_by = collect(real);
    let fake_by = collect(fake);
    let lo = real_by.keys().chain(fake_by.keys()).min().copied();
    let hi = real_by.keys().chain(fake_by.keys()).max().copied();
    let (Some(lo), Some(hi)) = (lo, hi) else {
        return AlignedComparison { rows: Vec::new() };
    };
    let empty = Vec::new();
    let rows = (lo..=hi)
        .map(|offset| {
            let r = real_by.get(&offset).unwrap_or(&empty);
            let f = fake_by.get(&offset).unwrap_or(&empty);
            let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
            OffsetComparison {
                offset,
                mean_real: mean(r),
                mean_fake: mean(f),
                n_real: r.len(),
                n_fake: f.len(),
                test: pooled_t_test(r, f),
            }
        })
        .collect();
    AlignedComparison { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_example() {
        let t = pooled_t_test(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((t.t - (-1.224_744_871)).abs() < 1e-6, "{}", t.t);
        assert_eq!(t.df, 4.0);
        assert!((t.p - 0.2879).abs() < 1e-3, "{}", t.p);
    }

    #[test]
    fn identical_samples() {
        let xs = [0.3, 0.5, 0.9, 0.1];
        let t = pooled_t_test(&xs, &xs).unwrap();
        assert_eq!((t.t, t.p), (0.0, 1.0));
        let c = [2.0, 2.0];
        assert_eq!(pooled_t_test(&c, &c).unwrap().p, 1.0);
        let d = pooled_t_test(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!((d.t, d.p), (f64::NEG_INFINITY, 0.0));
    }

    #[test]
    fn too_few_samples() {
        assert!(pooled_t_test(&[1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn anchored_offsets() {
        let a = AnchoredRewards::new(vec![0.1, 0.2, 0.4, 0.6, 0.9], 2, 2).unwrap();
        let got = a.by_offset();
        assert_eq!(got[0], (-2, 0.1));
        assert_eq!(got[1], (-1, 0.2));
        assert_eq!(got[2].0, 0);
        assert!((got[2].1 - 0.5).abs() < 1e-15);
        assert_eq!(got[3], (1, 0.9));
        assert!(AnchoredRewards::new(vec![0.0], 1, 1).is_err());
        assert!(AnchoredRewards::new(vec![0.0], 0, 0).is_err());
    }

    #[test]
    fn comparison_rows_are_contiguous() {
        let real = vec![
            AnchoredRewards::new(vec![0.9, 1.0, 0.8], 1, 1).unwrap(),
            AnchoredRewards::new(vec![0.7, 0.6, 1.0, 0.9, 0.8], 3, 1).unwrap(),
        ];
        let fake = vec![AnchoredRewards::new(vec![0.5, 0.4], 0, 1).unwrap()];
        let cmp = aligned_comparison(&real, &fake);
        let offsets: Vec<i64> = cmp.rows.iter().map(|r| r.offset).collect();
        assert_eq!(offsets, vec![-3, -2, -1, 0, 1]);
        let zero = cmp.at(0).unwrap();
        assert_eq!((zero.n_real, zero.n_fake), (2, 1));
        assert!(zero.test.is_none());
        assert_eq!(cmp.at(-3).unwrap().mean_fake, None);
        let tsv = cmp.to_tsv();
        assert!(tsv.starts_with("offset\tmean_real\tmean_fake\tn_real\tn_fake\tt\tp\n-3\t"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn swap_negates_t_keeps_p(
                a in proptest::collection::vec(-5f64..5.0, 2..20),
                b in proptest::collection::vec(-5f64..5.0, 2..20),
            ) {
                let ab = pooled_t_test(&a, &b).unwrap();
                let ba = pooled_t_test(&b, &a).unwrap();
                if ab.t.is_finite() {
                    prop_assert!((ab.t + ba.t).abs() <= 1e-9 * ab.t.abs().max(1.0));
                } else {
                    prop_assert_eq!(ab.t, -ba.t);
                }
                prop_assert!((ab.p - ba.p).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&ab.p));
            }
        }
    }
}
