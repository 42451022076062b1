//! Brute-force oracles and random instance generators shared by the
//! integration tests. None of these call into the library's solvers.

#![allow(dead_code)]

use groupsvm::{GroupPartition, GroupWeight, SensorLayout, TrialSet};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).unwrap().sample(rng)
}

/// Random vector of length `n` with occasional exact zeros.
pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| if rng.random::<f64>() < 0.1 { 0.0 } else { normal(rng, sd) }))
}

/// Contiguous partition of `0..dim` into groups of at most `max_size`,
/// with weights in [0.5, 2] and occasionally an eliminated group.
pub fn random_partition(rng: &mut ChaCha8Rng, dim: usize, max_size: usize, weighted: bool) -> GroupPartition {
    let mut groups = Vec::new();
    let mut start = 0;
    while start < dim {
        let len = rng.random_range(1..=max_size).min(dim - start);
        groups.push((start..start + len).collect::<Vec<_>>());
        start += len;
    }
    let weights = groups
        .iter()
        .map(|_| {
            if !weighted {
                GroupWeight::Active(1.0)
            } else if rng.random::<f64>() < 0.1 {
                GroupWeight::Eliminated
            } else {
                GroupWeight::Active(rng.random_range(0.5..2.0))
            }
        })
        .collect();
    GroupPartition::with_weights(dim, groups, weights).unwrap()
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Noisy two-class data on `p` sensors of `r` samples, first sensors informative.
pub fn random_trials(rng: &mut ChaCha8Rng, n: usize, p: usize, r: usize) -> TrialSet {
    let layout = SensorLayout::new(p, r).unwrap();
    let d = p * r;
    let mut x = Array2::zeros((n, d));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let label = if i % 3 == 0 { 1.0 } else { -1.0 };
        y[i] = label;
        for j in 0..d {
            let signal = if j < r { 0.7 * label } else { 0.0 };
            x[[i, j]] = signal + normal(rng, 1.0);
        }
    }
    TrialSet::new(x, y, layout).unwrap()
}

pub fn pnorm(x: &[f64], q: f64) -> f64 {
    x.iter().map(|v| v.abs().powf(q)).sum::<f64>().powf(1.0 / q)
}

/// `1/2 (x - u)^2 + t |x|` minimised by a coarse grid then golden-section refinement.
pub fn scalar_prox_oracle(u: f64, t: f64) -> f64 {
    let f = |x: f64| 0.5 * (x - u) * (x - u) + t * x.abs();
    let span = u.abs() + 1.0;
    let steps = 2000;
    let mut best = 0.0;
    for k in 0..=steps {
        let x = -span + 2.0 * span * k as f64 / steps as f64;
        if f(x) < f(best) {
            best = x;
        }
    }
    let h = 2.0 * span / steps as f64;
    let (mut lo, mut hi) = (best - h, best + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let mid = 0.5 * (lo + hi);
    // Zero is a kink; check it explicitly.
    if f(0.0) <= f(mid) {
        0.0
    } else {
        mid
    }
}

pub fn block_objective(x: &[f64], u: &[f64], t: f64, q: f64) -> f64 {
    0.5 * x.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + t * pnorm(x, q)
}

/// `argmin 1/2 ||x - u||^2 + t ||x||_q` for a small block.
///
/// The minimiser shares the signs of `u` with magnitudes in `[0, |u_i|]`,
/// so this runs projected gradient with Armijo backtracking on the
/// magnitudes, polishes by coordinate pattern search, and compares the
/// result with the zero vector.
pub fn block_prox_oracle(u: &[f64], t: f64, q: f64) -> Vec<f64> {
    let a: Vec<f64> = u.iter().map(|v| v.abs()).collect();
    let obj = |z: &[f64]| block_objective(z, &a, t, q);
    let project = |z: &mut [f64]| {
        for (zi, ai) in z.iter_mut().zip(&a) {
            *zi = zi.clamp(0.0, *ai);
        }
    };
    let grad = |z: &[f64]| -> Vec<f64> {
        let n = pnorm(z, q);
        z.iter()
            .zip(&a)
            .map(|(zi, ai)| zi - ai + if n > 0.0 { t * (zi / n).powf(q - 1.0) } else { 0.0 })
            .collect()
    };

    let mut z: Vec<f64> = a.iter().map(|v| 0.5 * v).collect();
    let mut fz = obj(&z);
    let mut step = 1.0;
    for _ in 0..20_000 {
        let g = grad(&z);
        let mut accepted = false;
        let mut s = step;
        for _ in 0..60 {
            let mut cand: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - s * gi).collect();
            project(&mut cand);
            let fc = obj(&cand);
            let dec: f64 = g.iter().zip(cand.iter().zip(&z)).map(|(gi, (c, zi))| gi * (c - zi)).sum();
            let dist: f64 = cand.iter().zip(&z).map(|(c, zi)| (c - zi) * (c - zi)).sum();
            if fc <= fz + dec + dist / (2.0 * s) {
                let moved = dist.sqrt();
                z = cand;
                fz = fc;
                accepted = moved > 1e-16;
                step = (2.0 * s).min(1.0);
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let mut delta = 1e-2;
    while delta > 1e-16 {
        let mut improved = false;
        for i in 0..z.len() {
            for sign in [1.0, -1.0] {
                let mut cand = z.clone();
                cand[i] = (cand[i] + sign * delta).clamp(0.0, a[i]);
                let fc = obj(&cand);
                if fc < fz {
                    z = cand;
                    fz = fc;
                    improved = true;
                }
            }
        }
        if !improved {
            delta *= 0.5;
        }
    }

    if obj(&vec![0.0; a.len()]) <= fz {
        return vec![0.0; a.len()];
    }
    z.iter().zip(u).map(|(zi, ui)| zi.copysign(*ui)).collect()
}

/// Full-vector oracle for a weighted group penalty; `q = 1` and singleton
/// groups go through the scalar oracle.
pub fn group_prox_oracle(u: &[f64], tau: f64, groups: &GroupPartition, q: f64) -> Vec<f64> {
    let mut x = vec![0.0; u.len()];
    for (idx, w) in groups.iter() {
        let Some(beta) = w.value() else { continue };
        let t = tau * beta;
        if q == 1.0 || idx.len() == 1 {
            for &i in idx {
                x[i] = scalar_prox_oracle(u[i], t);
            }
        } else {
            let block: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
            for (&i, v) in idx.iter().zip(block_prox_oracle(&block, t, q)) {
                x[i] = v;
            }
        }
    }
    x
}

/// `1/2 ||x - u||^2 + tau * sum_g beta_g ||x_g||_q`; infinite if an
/// eliminated group is nonzero.
pub fn prox_objective(x: &[f64], u: &[f64], tau: f64, groups: &GroupPartition, q: f64) -> f64 {
    let mut total = 0.5 * x.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    for (idx, w) in groups.iter() {
        let block: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let norm = pnorm(&block, q);
        match w.value() {
            Some(beta) => total += tau * beta * norm,
            None if norm > 0.0 => return f64::INFINITY,
            None => {}
        }
    }
    total
}

/// `(#{s_pos > s_neg} + #ties / 2) / (n_pos n_neg)` by enumerating all pairs.
pub fn auc_pairs(scores: &[f64], labels: &[f64]) -> f64 {
    let mut wins = 0u64;
    let mut ties = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] <= 0.0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] > 0.0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1;
            } else if si == sj {
                ties += 1;
            }
        }
    }
    (wins as f64 + 0.5 * ties as f64) / pairs as f64
}

/// Two-sided signed-rank p-value by enumerating every sign assignment of
/// the nonzero differences. Ranks include the zeros (Pratt); ties share
/// the average rank.
pub fn wilcoxon_enumerate(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    // Average rank of |d_i| by direct counting.
    let rank = |i: usize| -> f64 {
        let m = d[i].abs();
        let below = d.iter().filter(|v| v.abs() < m).count() as f64;
        let equal = d.iter().filter(|v| v.abs() == m).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let nz: Vec<(f64, bool)> = (0..n).filter(|&i| d[i] != 0.0).map(|i| (rank(i), d[i] > 0.0)).collect();
    if nz.is_empty() {
        return 1.0;
    }
    let observed: f64 = nz.iter().filter(|(_, p)| *p).map(|(r, _)| r).sum();
    let k = nz.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << k) {
        let w: f64 = (0..k).filter(|&j| mask >> j & 1 == 1).map(|j| nz[j].0).sum();
        if w <= observed {
            le += 1;
        }
        if w >= observed {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / (1u64 << k) as f64).min(1.0)
}

/// Central differences of `f` at `x` with a step relative to each coordinate.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / ||b||`, or `||a - b||` when `b` vanishes.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let nb = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if nb > 0.0 {
        diff / nb
    } else {
        diff
    }
}
