//! Small statistics helpers shared by reports and trend checks.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than 2 values.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Two-sided 95% t critical value for `df` degrees of freedom.
pub fn t_critical_95(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("df > 0")
        .inverse_cdf(0.975)
}

/// Half-width of the 95% t confidence interval of the mean; `None` for
/// fewer than 2 values.
pub fn ci95_half_width(values: &[f64]) -> Option<f64> {
    let n = values.len();
    (n >= 2).then(|| t_critical_95(n - 1) * sample_sd(values) / (n as f64).sqrt())
}

/// Average ranks (ties share the mean rank), 1-based.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    pearson(&ranks(x), &ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_of_one_two_three() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(mean(&v), 2.0);
        assert!((sample_sd(&v) - 1.0).abs() < 1e-15);
        // t(0.975, 2) = 4.302653 from tables; 4.302653 / √3 ≈ 2.4841.
        assert!((t_critical_95(2) - 4.302653).abs() < 1e-5);
        let hw = ci95_half_width(&v).unwrap();
        assert!((hw - 2.4841).abs() < 1e-3, "{hw}");
        assert_eq!(ci95_half_width(&[5.0, 5.0, 5.0]), Some(0.0));
        assert_eq!(ci95_half_width(&[5.0]), None);
    }

    #[test]
    fn spearman_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[1.0, 1.0, 2.0, 2.0]) - 0.894427).abs() < 1e-5);
    }
}
