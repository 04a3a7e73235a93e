//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's algorithms: every value is
//! recomputed by enumeration, brute force or numerical integration.
#![allow(dead_code)]

use trajcluster_core::rng::SplitMix64;

// ---------------------------------------------------------------- Fréchet

fn point_cost(a: (f64, f64), b: (f64, f64), lambda: f64) -> f64 {
    (lambda * (a.0 - b.0)).hypot(a.1 - b.1)
}

/// Every monotone coupling of `0..n` with `0..m`, as index-pair paths.
pub fn all_couplings(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    let mut path = vec![(0, 0)];
    fn walk(n: usize, m: usize, path: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        let (i, j) = *path.last().unwrap();
        if i == n - 1 && j == m - 1 {
            out.push(path.clone());
            return;
        }
        for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
            if i + di < n && j + dj < m {
                path.push((i + di, j + dj));
                walk(n, m, path, out);
                path.pop();
            }
        }
    }
    walk(n, m, &mut path, &mut out);
    out
}

/// Minimum over all couplings of the max (or mean) pointwise cost.
pub fn brute_force_frechet(a: &[(f64, f64)], b: &[(f64, f64)], lambda: f64, mean: bool) -> f64 {
    all_couplings(a.len(), b.len())
        .iter()
        .map(|path| {
            let costs = path.iter().map(|&(i, j)| point_cost(a[i], b[j], lambda));
            if mean {
                costs.sum::<f64>() / path.len() as f64
            } else {
                costs.fold(0.0, f64::max)
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random curve with 1..=max_len points on increasing times.
pub fn random_curve(rng: &mut SplitMix64, max_len: usize) -> (Vec<f64>, Vec<f64>) {
    let len = 1 + rng.next_below(max_len);
    let mut t = 0.0;
    let mut times = Vec::with_capacity(len);
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        times.push(t);
        values.push(2.0 * rng.next_f64() - 1.0);
        t += 1.0 + 11.0 * rng.next_f64();
    }
    (times, values)
}

// ------------------------------------------------------------------- Ward

/// Merge `(left id, right id, ward increase)` computed from cluster
/// centroids at every step, scanning all pairs. Costs within `1e-12` of
/// each other, relative to half the largest squared distance plus the
/// costs, are ties and go to the smallest `(min id, max id)`.
pub fn naive_ward(points: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            scale = scale.max(0.5 * sq(&points[i], &points[j]));
        }
    }
    let tied = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (scale + a.abs().max(b.abs()));
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let centroid = |members: &[usize]| -> Vec<f64> {
        let dim = points[0].len();
        (0..dim)
            .map(|c| members.iter().map(|&i| points[i][c]).sum::<f64>() / members.len() as f64)
            .collect()
    };
    let mut merges = Vec::new();
    for step in 0..n.saturating_sub(1) {
        let cents: Vec<Vec<f64>> = clusters.iter().map(|(_, m)| centroid(m)).collect();
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in (x + 1)..clusters.len() {
                let (na, nb) = (clusters[x].1.len() as f64, clusters[y].1.len() as f64);
                let sq: f64 = cents[x].iter().zip(&cents[y]).map(|(p, q)| (p - q) * (p - q)).sum();
                let cost = na * nb / (na + nb) * sq;
                let (lo, hi) = {
                    let (p, q) = (clusters[x].0, clusters[y].0);
                    (p.min(q), p.max(q))
                };
                let better = match best {
                    None => true,
                    Some((c, l, h, _, _)) => (cost < c && !tied(cost, c)) || (tied(cost, c) && (lo, hi) < (l, h)),
                };
                if better {
                    best = Some((cost, lo, hi, x, y));
                }
            }
        }
        let (cost, lo, hi, x, y) = best.unwrap();
        let mut members = clusters[x].1.clone();
        members.extend_from_slice(&clusters[y].1);
        clusters.remove(y);
        clusters.remove(x);
        clusters.push((n + step, members));
        merges.push((lo, hi, cost));
    }
    merges
}

pub fn total_sum_of_squares(points: &[Vec<f64>]) -> f64 {
    let n = points.len() as f64;
    let dim = points[0].len();
    (0..dim)
        .map(|c| {
            let m = points.iter().map(|p| p[c]).sum::<f64>() / n;
            points.iter().map(|p| (p[c] - m).powi(2)).sum::<f64>()
        })
        .sum()
}

// ------------------------------------------------------------ seriation

/// Smallest `sum_{i<j} S_ij (pos_i - pos_j)^2` over all permutations.
pub fn brute_force_two_sum(s: &[Vec<f64>]) -> f64 {
    let n = s.len();
    let mut pos: Vec<usize> = (0..n).collect();
    let objective = |pos: &[usize]| {
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = pos[i] as f64 - pos[j] as f64;
                total += s[i][j] * d * d;
            }
        }
        total
    };
    // Heap's algorithm.
    let mut best = objective(&pos);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                pos.swap(0, i);
            } else {
                pos.swap(c[i], i);
            }
            best = best.min(objective(&pos));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

// ------------------------------------------------------------ quadrature

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson integral of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    // Split into panels so narrow peaks are not missed by the first probe.
    let panels = 64;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 50)
        })
        .sum()
}

/// Upper tail of the chi-square law. With `u = s^2` the kernel
/// `u^(k/2-1) e^(-u/2) du` becomes `2 s^(k-1) e^(-s^2/2) ds`.
pub fn chi_square_upper_tail(x: f64, df: f64) -> f64 {
    let g = |s: f64| 2.0 * s.powf(df - 1.0) * (-0.5 * s * s).exp();
    let top = (df.sqrt() + 40.0).max(x.sqrt() + 40.0);
    let whole = integrate(&g, 0.0, top, 1e-15);
    integrate(&g, x.sqrt(), top, 1e-15) / whole
}

/// Two-sided Student tail `P(|T| >= |t|)`. With `t = tan(theta)` the
/// kernel `(1 + t^2/df)^(-(df+1)/2) dt` lives on a finite interval.
pub fn student_two_sided(t: f64, df: f64) -> f64 {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let g = |th: f64| {
        let c = th.cos();
        if c <= 0.0 {
            return 0.0;
        }
        let x = th.tan();
        (1.0 + x * x / df).powf(-(df + 1.0) / 2.0) / (c * c)
    };
    let whole = integrate(&g, 0.0, half_pi, 1e-15);
    integrate(&g, t.abs().atan(), half_pi, 1e-15) / whole
}

/// Upper tail of the F law via `y = d1 f / (d1 f + d2)`, which is
/// Beta(d1/2, d2/2), and `y = sin^2(phi)`.
pub fn f_upper_tail(f: f64, d1: f64, d2: f64) -> f64 {
    let (a, b) = (d1 / 2.0, d2 / 2.0);
    let g = |phi: f64| 2.0 * phi.sin().powf(2.0 * a - 1.0) * phi.cos().powf(2.0 * b - 1.0);
    let y0 = d1 * f / (d1 * f + d2);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let whole = integrate(&g, 0.0, half_pi, 1e-15);
    integrate(&g, y0.sqrt().asin(), half_pi, 1e-15) / whole
}

// ------------------------------------------------------- exact counting

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Two-sided Fisher p-value by listing every table with the same
/// margins; probabilities compared as exact integers.
pub fn fisher_enumeration(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (r1, c1, n) = (a + b, a + c, a + b + c + d);
    let weight = |x: u64| binomial(c1, x) * binomial(n - c1, r1 - x);
    let observed = weight(a);
    let lo = (r1 + c1).saturating_sub(n);
    let hi = r1.min(c1);
    let hit: u128 = (lo..=hi).map(weight).filter(|&w| w <= observed).sum();
    hit as f64 / binomial(n, r1) as f64
}

/// Adjusted Rand index from agreement counts over all subject pairs.
pub fn pair_counting_ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let denom = (both + only_a) * (only_a + neither) + (both + only_b) * (only_b + neither);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (both * neither - only_a * only_b) / denom
}

// -------------------------------------------------------------- pixmaps

/// Decodes a pixmap with the `image` crate and maps pixels back to palette
/// indices.
pub fn decode_shades(bytes: &[u8], palette: &[[u8; 3]]) -> (u32, u32, Vec<Vec<usize>>) {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm)
        .expect("valid pixmap")
        .to_rgb8();
    let (w, h) = img.dimensions();
    let grid = (0..h)
        .map(|y| {
            (0..w)
                .map(|x| {
                    let px = img.get_pixel(x, y).0;
                    palette.iter().position(|c| *c == px).expect("palette colour")
                })
                .collect()
        })
        .collect();
    (w, h, grid)
}
