//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

/// Four-point rain-flow by repeated full rescans.
///
/// Reversals are the interior points where the slope changes sign after
/// equal neighbours are merged. After every extraction the scan restarts
/// from the first reversal.
pub fn rainflow_oracle(x: &[f64]) -> Vec<(f64, f64)> {
    let mut d: Vec<f64> = Vec::new();
    for &v in x {
        if d.last() != Some(&v) {
            d.push(v);
        }
    }
    let mut r: Vec<f64> = Vec::new();
    for i in 0..d.len() {
        let end = i == 0 || i + 1 == d.len();
        if end || (d[i] - d[i - 1]) * (d[i + 1] - d[i]) < 0.0 {
            r.push(d[i]);
        }
    }
    let mut cycles: Vec<(f64, f64)> = Vec::new();
    'scan: loop {
        for i in 0..r.len().saturating_sub(3) {
            let inner = (r[i + 1] - r[i + 2]).abs();
            if inner <= (r[i] - r[i + 1]).abs() && inner <= (r[i + 2] - r[i + 3]).abs() {
                cycles.push((inner, 1.0));
                r.remove(i + 1);
                r.remove(i + 1);
                continue 'scan;
            }
        }
        break;
    }
    for i in 1..r.len() {
        cycles.push(((r[i] - r[i - 1]).abs(), 0.5));
    }
    let mut out: Vec<(f64, f64)> = Vec::new();
    cycles.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (depth, n) in cycles {
        match out.last_mut() {
            Some(last) if last.0 == depth => last.1 += n,
            _ => out.push((depth, n)),
        }
    }
    out
}

/// Bounded random walk in [0, 1].
pub fn random_walk(seed: u64, n: usize, step: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = 0.5;
    (0..n)
        .map(|_| {
            v = (v + rng.gen_range(-step..step)).clamp(0.0, 1.0);
            v
        })
        .collect()
}

/// Determinant by LU with partial pivoting.
pub fn det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    (0..n)
        .map(|i| (0..m).map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// Monic characteristic polynomial coefficients, highest power first,
/// by the Faddeev-LeVerrier recursion.
pub fn charpoly(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut c = vec![0.0; n + 1];
    c[0] = 1.0;
    let mut m = vec![vec![0.0; n]; n];
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I
        let mut next = matmul(a, &m);
        for (i, row) in next.iter_mut().enumerate() {
            row[i] += c[k - 1];
        }
        let am = matmul(a, &next);
        let tr: f64 = (0..n).map(|i| am[i][i]).sum();
        c[k] = -tr / k as f64;
        m = next;
    }
    c
}

/// All roots of a monic polynomial by Durand-Kerner iteration.
pub fn durand_kerner(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    let eval = |z: Complex64| coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c);
    let radius = 1.0 + coeffs[1..].iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let seed = Complex64::new(0.4, 0.9);
    let mut z: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * radius).collect();
    for _ in 0..5000 {
        let mut moved = 0.0_f64;
        for i in 0..n {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    den *= z[i] - z[j];
                }
            }
            let dz = eval(z[i]) / den;
            z[i] -= dz;
            moved = moved.max(dz.norm() / (1.0 + z[i].norm()));
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

/// Match every value in `a` to its nearest unused value in `b` and return
/// the largest distance.
pub fn max_matched_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst = 0.0_f64;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("same length");
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}
