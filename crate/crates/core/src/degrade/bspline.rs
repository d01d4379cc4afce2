//! Cubic B-spline interpolation (mirror-symmetric boundaries).

/// Pole of the cubic B-spline prefilter, `sqrt(3) - 2`.
const POLE: f64 = -0.267_949_192_431_122_7;

/// Centered cubic B-spline basis function.
#[inline]
pub fn beta3(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let t = 2.0 - a;
        t * t * t / 6.0
    } else {
        0.0
    }
}

/// Whole-sample mirror of index `j` into `[0, n)`.
#[inline]
pub fn mirror(j: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let r = j.rem_euclid(period);
    (if r < n as i64 { r } else { period - r }) as usize
}

/// Converts samples to B-spline coefficients in place.
pub fn prefilter(c: &mut [f64]) {
    let n = c.len();
    if n < 2 {
        return;
    }
    let z = POLE;
    let gain = (1.0 - z) * (1.0 - 1.0 / z);
    for v in c.iter_mut() {
        *v *= gain;
    }

    // Causal initialization for the mirror-symmetric extension.
    let zn = z.powi(n as i32 - 1);
    let iz = 1.0 / z;
    let mut z1 = z;
    let mut z2 = zn * zn * iz;
    let mut sum = c[0] + zn * c[n - 1];
    for v in c.iter().take(n - 1).skip(1) {
        sum += (z1 + z2) * v;
        z1 *= z;
        z2 *= iz;
    }
    c[0] = sum / (1.0 - zn * zn);
    for k in 1..n {
        c[k] += z * c[k - 1];
    }

    c[n - 1] = (z / (z * z - 1.0)) * (c[n - 1] + z * c[n - 2]);
    for k in (0..n - 1).rev() {
        c[k] = z * (c[k + 1] - c[k]);
    }
}

/// Evaluates the spline with coefficients `c` at continuous index `x`.
pub fn evaluate(c: &[f64], x: f64) -> f64 {
    let n = c.len();
    let base = x.floor() as i64;
    let mut acc = 0.0;
    for j in base - 1..=base + 2 {
        acc += c[mirror(j, n)] * beta3(x - j as f64);
    }
    acc
}

/// Interpolates `samples` at each position in `positions` (sample index units).
pub fn interpolate(samples: &[f64], positions: &[f64]) -> Vec<f64> {
    let mut c = samples.to_vec();
    prefilter(&mut c);
    positions.iter().map(|&x| evaluate(&c, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense solve of the interpolation conditions `f(i) = sum_j c_ext[j] beta3(i - j)`.
    fn dense_coefficients(s: &[f64]) -> Vec<f64> {
        let n = s.len();
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for j in (i as i64 - 2)..=(i as i64 + 2) {
                a[i][mirror(j, n)] += beta3(i as f64 - j as f64);
            }
            a[i][n] = s[i];
        }
        for col in 0..n {
            let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            for row in 0..n {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..=n {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }

    fn brute_force_eval(c: &[f64], x: f64) -> f64 {
        let n = c.len() as i64;
        (-4..n + 4).map(|j| c[mirror(j, c.len())] * beta3(x - j as f64)).sum()
    }

    #[test]
    fn reproduces_constants() {
        let s = vec![3.25; 9];
        let pos: Vec<f64> = (0..30).map(|i| i as f64 * 0.3).collect();
        for v in interpolate(&s, &pos) {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_linear_ramp_in_interior() {
        let n = 48;
        let s: Vec<f64> = (0..n).map(|i| 0.5 + 0.25 * i as f64).collect();
        let pos: Vec<f64> = (0..3 * n).map(|i| i as f64 / 3.0).collect();
        let out = interpolate(&s, &pos);
        for (x, v) in pos.iter().zip(out) {
            if *x >= 16.0 && *x <= (n - 17) as f64 {
                assert!((v - (0.5 + 0.25 * x)).abs() < 1e-8, "x={x}");
            }
        }
    }

    #[test]
    fn interpolates_samples_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..13).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pos: Vec<f64> = (0..13).map(|i| i as f64).collect();
        for (a, b) in interpolate(&s, &pos).iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_basis_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [2usize, 3, 7, 20] {
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let oracle = dense_coefficients(&s);
            let mut fast = s.clone();
            prefilter(&mut fast);
            for (a, b) in fast.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "n={n}");
            }
            for i in 0..(4 * n) {
                let x = i as f64 * (n as f64 / (4 * n) as f64) + 0.013;
                assert!((evaluate(&fast, x) - brute_force_eval(&oracle, x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mirror_indexing() {
        assert_eq!(mirror(-1, 5), 1);
        assert_eq!(mirror(5, 5), 3);
        assert_eq!(mirror(9, 5), 1);
        assert_eq!(mirror(-7, 1), 0);
    }
}
