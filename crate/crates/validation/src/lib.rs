//! Deliberately naive reference implementations of the evaluation metrics.
//! Plain loops over `Vec<Vec<f64>>`, no shared code with `vegan-core`, so the
//! acceptance checks compare against something written independently.

/// Root mean squared difference.
pub fn sqrt_pehe(tau_hat: &[f64], tau: &[f64]) -> f64 {
    let mut sq = 0.0;
    for i in 0..tau.len() {
        sq += (tau_hat[i] - tau[i]) * (tau_hat[i] - tau[i]);
    }
    (sq / tau.len() as f64).sqrt()
}

/// Absolute difference of the means.
pub fn eps_cate(tau_hat: &[f64], tau: &[f64]) -> f64 {
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..tau.len() {
        a += tau_hat[i];
        b += tau[i];
    }
    (a / tau.len() as f64 - b / tau.len() as f64).abs()
}

/// Relative change in percent.
pub fn volatility(e_in: f64, e_out: f64) -> f64 {
    let diff = if e_out > e_in { e_out - e_in } else { e_in - e_out };
    diff / e_in * 100.0
}

fn rbf(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let mut d2 = 0.0;
    for k in 0..x.len() {
        d2 += (x[k] - y[k]) * (x[k] - y[k]);
    }
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn gram(p: &[Vec<f64>], q: &[Vec<f64>], sigma: f64) -> Vec<Vec<f64>> {
    p.iter().map(|x| q.iter().map(|y| rbf(x, y, sigma)).collect()).collect()
}

/// Unbiased squared MMD with a Gaussian kernel, from explicit Gram matrices.
pub fn mmd_rbf(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> f64 {
    let (kaa, kbb, kab) = (gram(a, a, sigma), gram(b, b, sigma), gram(a, b, sigma));
    let off_diagonal = |g: &Vec<Vec<f64>>| {
        let mut s = 0.0;
        for i in 0..g.len() {
            for j in 0..g.len() {
                if i != j {
                    s += g[i][j];
                }
            }
        }
        s
    };
    let (m, n) = (a.len() as f64, b.len() as f64);
    let mut cross = 0.0;
    for row in &kab {
        for v in row {
            cross += v;
        }
    }
    off_diagonal(&kaa) / (m * (m - 1.0)) + off_diagonal(&kbb) / (n * (n - 1.0)) - 2.0 * cross / (m * n)
}

/// Median of the distances between distinct pairs of the pooled sample; the
/// upper middle element when the count is even, 1 when the median is 0.
pub fn median_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let mut d = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let mut s = 0.0;
            for k in 0..pooled[i].len() {
                s += (pooled[i][k] - pooled[j][k]) * (pooled[i][k] - pooled[j][k]);
            }
            d.push(s.sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(sqrt_pehe(&[1.0, 3.0], &[1.0, 1.0]), 2f64.sqrt());
        assert_eq!(eps_cate(&[1.0, 3.0], &[1.0, 1.0]), 1.0);
        assert_eq!(volatility(2.0, 3.0), 50.0);
        // Identical one-point-per-row samples far apart: only the cross term survives.
        let a = vec![vec![0.0], vec![0.0]];
        let b = vec![vec![100.0], vec![100.0]];
        assert!((mmd_rbf(&a, &b, 1.0) - 2.0).abs() < 1e-12);
        // Distances {0, 100, 100, 100, 100, 0}, sorted: upper middle is 100.
        assert_eq!(median_distance(&a, &b), 100.0);
    }
}
