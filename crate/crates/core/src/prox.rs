//! Penalty values and proximal operators.
//!
//! Every operator solves `argmin_x 1/2 ||x - u||^2 + tau * Omega(x)` and
//! returns exact zeros wherever the optimality condition for zero holds.
//!
//! The l1-lq proximal map (1 < q < 2) has no closed form. Per group it is
//! computed from the structure of the optimum: with `N = ||x||_q`, each
//! magnitude `z_i = |x_i|` is the unique root of
//! `z + tau * N^(1-q) * z^(q-1) = |u_i|`, so the whole block is determined
//! by the scalar `N`, found by a bracketed Newton iteration on
//! `||z(N)||_q - N = 0`.

use ndarray::{Array1, ArrayView1};

use crate::data::{GroupPartition, GroupWeight, Penalty};
use crate::error::{check_dim, Error, Result};

/// Successive-iterate tolerance of the lq inner solver (relative to the group norm).
pub const LQ_INNER_TOL: f64 = 1e-10;
/// Iteration cap of the lq inner solver.
pub const LQ_INNER_MAX_ITER: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct ProxResult {
    pub x: Array1<f64>,
    /// Total outer iterations spent by the lq solver across groups.
    pub inner_iterations: usize,
    /// False when some lq block hit the iteration cap; `x` then holds the best iterate.
    pub converged: bool,
}

impl ProxResult {
    fn exact(x: Array1<f64>) -> Self {
        ProxResult {
            x,
            inner_iterations: 0,
            converged: true,
        }
    }
}

fn check_inputs(u: &ArrayView1<f64>, tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid("tau", format!("{tau} is not a positive real")));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("u", "input contains non-finite values"));
    }
    Ok(())
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    let m = v.abs() - t;
    if m > 0.0 {
        m.copysign(v)
    } else {
        0.0
    }
}

/// Componentwise soft thresholding `sign(u_i) (|u_i| - tau)_+`.
pub fn prox_l1(u: ArrayView1<f64>, tau: f64) -> Result<ProxResult> {
    check_inputs(&u, tau)?;
    Ok(ProxResult::exact(u.mapv(|v| soft_threshold(v, tau))))
}

/// Block soft thresholding with per-group threshold `tau * beta_g`.
pub fn prox_group_l2(u: ArrayView1<f64>, tau: f64, groups: &GroupPartition) -> Result<ProxResult> {
    check_inputs(&u, tau)?;
    check_dim(groups.dim(), u.len())?;
    let mut x = Array1::zeros(u.len());
    for (idx, weight) in groups.iter() {
        let Some(beta) = weight.value() else { continue };
        block_l2(&u, tau * beta, idx, &mut x);
    }
    Ok(ProxResult::exact(x))
}

fn block_l2(u: &ArrayView1<f64>, t: f64, idx: &[usize], x: &mut Array1<f64>) {
    if let [i] = *idx {
        x[i] = soft_threshold(u[i], t);
        return;
    }
    let norm = idx.iter().map(|&i| u[i] * u[i]).sum::<f64>().sqrt();
    if norm <= t {
        return;
    }
    let shrink = 1.0 - t / norm;
    for &i in idx {
        x[i] = shrink * u[i];
    }
}

/// Proximal map of `tau * sum_g beta_g ||x_g||_q` for `1 < q <= 2` by the
/// iterative solver. [`prox_group`] sends `q = 2` to the closed form instead.
pub fn prox_group_lq(u: ArrayView1<f64>, tau: f64, groups: &GroupPartition, q: f64) -> Result<ProxResult> {
    check_inputs(&u, tau)?;
    check_dim(groups.dim(), u.len())?;
    if !(q > 1.0 && q <= 2.0) {
        return Err(Error::invalid("q", format!("{q} is outside (1, 2]")));
    }
    let mut x = Array1::zeros(u.len());
    let mut result = ProxResult::exact(Array1::zeros(0));
    let mut block = Vec::new();
    for (idx, weight) in groups.iter() {
        let Some(beta) = weight.value() else { continue };
        block.clear();
        block.extend(idx.iter().map(|&i| u[i]));
        let solved = block_lq(&block, tau * beta, q);
        result.inner_iterations += solved.iterations;
        if !solved.converged {
            result.converged = false;
            log::warn!(
                "lq proximal block did not converge within {LQ_INNER_MAX_ITER} iterations"
            );
        }
        for (&i, v) in idx.iter().zip(solved.x) {
            x[i] = v;
        }
    }
    result.x = x;
    Ok(result)
}

/// Dispatches on `q`: 1 is weighted soft thresholding, 2 is block soft
/// thresholding, anything between uses the iterative lq map.
pub fn prox_group(u: ArrayView1<f64>, tau: f64, groups: &GroupPartition, q: f64) -> Result<ProxResult> {
    if q == 1.0 {
        check_inputs(&u, tau)?;
        check_dim(groups.dim(), u.len())?;
        let mut x = Array1::zeros(u.len());
        for (idx, weight) in groups.iter() {
            let Some(beta) = weight.value() else { continue };
            let t = tau * beta;
            for &i in idx {
                x[i] = soft_threshold(u[i], t);
            }
        }
        Ok(ProxResult::exact(x))
    } else if q == 2.0 {
        prox_group_l2(u, tau, groups)
    } else {
        prox_group_lq(u, tau, groups, q)
    }
}

/// Proximal step of `tau * Omega` for a penalty family. The ridge penalty is
/// smooth and handled by the gradient step, so its proximal step is the identity.
pub fn prox_penalty(u: ArrayView1<f64>, tau: f64, penalty: Penalty, groups: &GroupPartition) -> Result<ProxResult> {
    match penalty {
        Penalty::L2 => {
            check_inputs(&u, tau)?;
            Ok(ProxResult::exact(u.to_owned()))
        }
        Penalty::L1 => prox_l1(u, tau),
        Penalty::GroupLq { q } | Penalty::AdaptiveGroupLq { q } => prox_group(u, tau, groups, q),
    }
}

/// `||x||_q`, computed with max-scaling so large exponents do not overflow.
pub fn lq_norm(x: &[f64], q: f64) -> f64 {
    if q == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    if q == 2.0 {
        return x.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return max;
    }
    max * x.iter().map(|v| (v.abs() / max).powf(q)).sum::<f64>().powf(1.0 / q)
}

/// Penalty value `Omega(w)` (not multiplied by lambda): `1/2 ||w||^2`,
/// `||w||_1`, or `sum_g beta_g ||w_g||_q`. An eliminated group with a
/// nonzero block evaluates to infinity.
pub fn regularizer_value(w: ArrayView1<f64>, penalty: Penalty, groups: &GroupPartition) -> Result<f64> {
    match penalty {
        Penalty::L2 => Ok(0.5 * w.dot(&w)),
        Penalty::L1 => Ok(w.iter().map(|v| v.abs()).sum()),
        Penalty::GroupLq { q } | Penalty::AdaptiveGroupLq { q } => {
            check_dim(groups.dim(), w.len())?;
            let mut total = 0.0;
            let mut block = Vec::new();
            for (idx, weight) in groups.iter() {
                // Coordinatewise so unit weights reproduce the plain l1 sum.
                if q == 1.0 {
                    if let GroupWeight::Active(beta) = weight {
                        for &i in idx {
                            total += beta * w[i].abs();
                        }
                        continue;
                    }
                }
                block.clear();
                block.extend(idx.iter().map(|&i| w[i]));
                let norm = lq_norm(&block, q);
                match weight {
                    GroupWeight::Active(beta) => total += beta * norm,
                    GroupWeight::Eliminated if norm > 0.0 => return Ok(f64::INFINITY),
                    GroupWeight::Eliminated => {}
                }
            }
            Ok(total)
        }
    }
}

/// Adaptive group weights `beta_g = 1 / ||w*_g||_q`; zero blocks are eliminated.
pub fn adaptive_weights(w_star: ArrayView1<f64>, groups: &GroupPartition, q: f64) -> Result<GroupPartition> {
    check_dim(groups.dim(), w_star.len())?;
    let weights = groups
        .groups()
        .iter()
        .map(|idx| {
            let block: Vec<f64> = idx.iter().map(|&i| w_star[i]).collect();
            let norm = lq_norm(&block, q);
            let beta = 1.0 / norm;
            if norm > 0.0 && beta.is_finite() {
                GroupWeight::Active(beta)
            } else {
                GroupWeight::Eliminated
            }
        })
        .collect();
    groups.reweighted(weights)
}

struct BlockSolution {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// `argmin_x 1/2 ||x - u||^2 + t ||x||_q` for one block, `1 < q <= 2`.
fn block_lq(u: &[f64], t: f64, q: f64) -> BlockSolution {
    let zero = BlockSolution {
        x: vec![0.0; u.len()],
        iterations: 0,
        converged: true,
    };
    if let [v] = *u {
        return BlockSolution {
            x: vec![soft_threshold(v, t)],
            iterations: 0,
            converged: true,
        };
    }
    let a: Vec<f64> = u.iter().map(|v| v.abs()).collect();
    let dual = q / (q - 1.0);
    if lq_norm(&a, dual) <= t {
        return zero;
    }

    let e = q - 1.0;
    let mut z = vec![0.0; a.len()];
    let mut dz = vec![0.0; a.len()];

    // psi(N) = ||z(N)||_q - N is positive near 0 (dual-norm test failed)
    // and negative at N = ||a||_q, so the root is bracketed.
    let mut lo = 0.0;
    let mut hi = lq_norm(&a, q);
    let mut n = {
        let norm2 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let seed: Vec<f64> = a.iter().map(|v| v * (1.0 - t / norm2).max(0.0)).collect();
        let guess = lq_norm(&seed, q);
        if guess > lo && guess < hi {
            guess
        } else {
            0.5 * hi
        }
    };

    let mut best = (f64::INFINITY, n);
    for iter in 1..=LQ_INNER_MAX_ITER {
        let (psi, dpsi) = eval_psi(&a, t, e, q, n, &mut z, &mut dz);
        if psi.abs() < best.0 {
            best = (psi.abs(), n);
        }
        if psi > 0.0 {
            lo = n;
        } else if psi < 0.0 {
            hi = n;
        } else {
            return finish(u, &z, iter, true);
        }
        let newton = n - psi / dpsi;
        let next = if dpsi.is_finite() && dpsi != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - n).abs();
        n = next;
        if step <= LQ_INNER_TOL * n || hi - lo <= LQ_INNER_TOL * hi {
            eval_psi(&a, t, e, q, n, &mut z, &mut dz);
            return finish(u, &z, iter, true);
        }
    }
    eval_psi(&a, t, e, q, best.1, &mut z, &mut dz);
    finish(u, &z, LQ_INNER_MAX_ITER, false)
}

fn finish(u: &[f64], z: &[f64], iterations: usize, converged: bool) -> BlockSolution {
    BlockSolution {
        x: u.iter().zip(z).map(|(ui, zi)| zi.copysign(*ui)).collect(),
        iterations,
        converged,
    }
}

/// Fills `z` with the magnitudes implied by group norm `n` and returns
/// `(psi(n), psi'(n))`.
fn eval_psi(a: &[f64], t: f64, e: f64, q: f64, n: f64, z: &mut [f64], dz: &mut [f64]) -> (f64, f64) {
    let c = t * n.powf(-e);
    for i in 0..a.len() {
        if a[i] == 0.0 {
            z[i] = 0.0;
            dz[i] = 0.0;
            continue;
        }
        let zi = solve_magnitude(a[i], c, e);
        z[i] = zi;
        // Implicit differentiation of z + c z^e = a with dc/dn = -e c / n.
        let ze = zi.powf(e);
        dz[i] = e * c * ze / (n * (1.0 + c * e * ze / zi));
    }
    let norm = lq_norm(z, q);
    if norm == 0.0 {
        return (-n, -1.0);
    }
    let scale = norm.powf(1.0 - q);
    let dnorm = z
        .iter()
        .zip(dz.iter())
        .map(|(zi, di)| if *zi > 0.0 { zi.powf(e) * di } else { 0.0 })
        .sum::<f64>()
        * scale;
    (norm - n, dnorm - 1.0)
}

/// Root of `z + c z^e = a` for `a > 0`, `c > 0`, `0 < e <= 1`.
///
/// With `z = a exp(v)` the equation becomes `h(v) = exp(v) + k exp(e v) - 1 = 0`,
/// `k = c a^(e-1)`. `h` is convex and increasing, so Newton started where
/// `h >= 0` decreases monotonically onto the root.
fn solve_magnitude(a: f64, c: f64, e: f64) -> f64 {
    let k = c * a.powf(e - 1.0);
    let mut v = (-(k.ln()) / e).min(0.0);
    for _ in 0..200 {
        let ev = v.exp();
        let kev = k * (e * v).exp();
        let h = ev + kev - 1.0;
        if h <= 0.0 {
            break;
        }
        let step = h / (ev + e * kev);
        v -= step;
        if step <= 1e-15 * (1.0 + v.abs()) {
            break;
        }
    }
    a * v.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_group(d: usize) -> GroupPartition {
        GroupPartition::new(d, vec![(0..d).collect()]).unwrap()
    }

    #[test]
    fn l1_example() {
        let r = prox_l1(array![2.0, -0.5, 1.0].view(), 1.0).unwrap();
        assert_eq!(r.x, array![1.0, 0.0, 0.0]);
        let u = array![0.3, -2.0, 1e-3];
        let r = prox_l1(u.view(), 1e-15).unwrap();
        for (a, b) in r.x.iter().zip(u.iter()) {
            assert!((a - b).abs() <= 2e-15);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(prox_l1(array![1.0].view(), 0.0).is_err());
        assert!(prox_l1(array![f64::NAN].view(), 1.0).is_err());
        assert!(prox_group_l2(array![1.0, 2.0].view(), 1.0, &one_group(3)).is_err());
        assert!(prox_group_lq(array![1.0, 2.0].view(), 1.0, &one_group(2), 2.5).is_err());
        assert!(prox_group_lq(array![1.0, 2.0].view(), 1.0, &one_group(2), 1.0).is_err());
    }

    #[test]
    fn group_l2_examples() {
        let g = one_group(2);
        let u = array![1.2, 1.6];
        let r = prox_group_l2(u.view(), 1.0, &g).unwrap();
        assert!((&r.x - &(0.5 * &u)).iter().all(|d| d.abs() < 1e-15));
        let r = prox_group_l2(array![0.54, 0.72].view(), 1.0, &g).unwrap();
        assert_eq!(r.x, array![0.0, 0.0]);

        let u = array![2.0, -0.5, 1.0, -3.0];
        let singles = GroupPartition::singletons(4);
        assert_eq!(prox_group_l2(u.view(), 0.7, &singles).unwrap().x, prox_l1(u.view(), 0.7).unwrap().x);
    }

    #[test]
    fn eliminated_groups_are_zero() {
        let g = GroupPartition::with_weights(
            4,
            vec![vec![0, 1], vec![2, 3]],
            vec![GroupWeight::Eliminated, GroupWeight::Active(0.5)],
        )
        .unwrap();
        let u = array![5.0, 5.0, 3.0, 4.0];
        for q in [1.0, 1.5, 2.0] {
            let x = prox_group(u.view(), 1.0, &g, q).unwrap().x;
            assert_eq!(x[0], 0.0);
            assert_eq!(x[1], 0.0);
            assert!(x[2] != 0.0 && x[3] != 0.0);
        }
    }

    #[test]
    fn lq_near_two_matches_l2() {
        let g = GroupPartition::new(5, vec![vec![0, 1, 2], vec![3, 4]]).unwrap();
        let u = array![0.9, -1.3, 0.2, 2.5, 0.1];
        let a = prox_group_lq(u.view(), 0.8, &g, 1.999999).unwrap();
        let b = prox_group_l2(u.view(), 0.8, &g).unwrap();
        assert!(a.converged);
        for (x, y) in a.x.iter().zip(b.x.iter()) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn lq_zero_block_from_dual_norm() {
        let q = 1.5;
        let u = array![0.3, -0.4, 0.2];
        let dual = lq_norm(&u.to_vec(), q / (q - 1.0));
        let g = one_group(3);
        assert_eq!(prox_group_lq(u.view(), dual * 1.0001, &g, q).unwrap().x, Array1::<f64>::zeros(3));
        let x = prox_group_lq(u.view(), dual * 0.9999, &g, q).unwrap().x;
        assert!(x.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn lq_satisfies_stationarity() {
        let g = one_group(4);
        let u = array![1.5, -0.7, 0.05, 2.2];
        for q in [1.01, 1.2, 1.5, 1.8, 1.99] {
            let t = 0.6;
            let r = prox_group_lq(u.view(), t, &g, q).unwrap();
            assert!(r.converged);
            let x = r.x.to_vec();
            let norm = lq_norm(&x, q);
            for i in 0..4 {
                let grad = x[i].signum() * x[i].abs().powf(q - 1.0) * norm.powf(1.0 - q);
                let resid = x[i] - u[i] + t * grad;
                assert!(resid.abs() < 1e-10, "q={q} i={i} resid={resid}");
            }
        }
    }

    #[test]
    fn regularizer_value_examples() {
        let g = one_group(2);
        for p in [Penalty::L2, Penalty::L1, Penalty::GroupLq { q: 1.5 }] {
            assert_eq!(regularizer_value(array![0.0, 0.0].view(), p, &g).unwrap(), 0.0);
        }
        assert_eq!(regularizer_value(array![3.0, 4.0].view(), Penalty::GroupLq { q: 2.0 }, &g).unwrap(), 5.0);
        let w = array![1.0, 1.0];
        assert_eq!(regularizer_value(w.view(), Penalty::GroupLq { q: 1.0 }, &g).unwrap(), 2.0);
        assert_eq!(regularizer_value(w.view(), Penalty::L1, &g).unwrap(), 2.0);
        assert_eq!(regularizer_value(array![3.0, 4.0].view(), Penalty::L2, &g).unwrap(), 12.5);
        assert!(regularizer_value(array![1.0].view(), Penalty::GroupLq { q: 2.0 }, &g).is_err());
    }

    #[test]
    fn adaptive_weight_examples() {
        let g = GroupPartition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let a = adaptive_weights(array![0.0, 2.0, 0.0, 0.0].view(), &g, 2.0).unwrap();
        assert_eq!(a.weights(), &[GroupWeight::Active(0.5), GroupWeight::Eliminated]);
        let a = adaptive_weights(array![0.6, 0.8, 1.0, 0.0].view(), &g, 2.0).unwrap();
        assert_eq!(a.weights(), &[GroupWeight::Active(1.0), GroupWeight::Active(1.0)]);
    }

    #[test]
    fn lq_norm_is_stable() {
        assert_eq!(lq_norm(&[3.0, 4.0], 2.0), 5.0);
        assert_eq!(lq_norm(&[1e300, 1e300], 1.0), 2e300);
        let big = lq_norm(&[1e200, 1e200], 1.5);
        assert!((big / 1e200 - 2f64.powf(1.0 / 1.5)).abs() < 1e-12);
        assert!((lq_norm(&[1.0, 0.5], 1e6) - 1.0).abs() < 1e-6);
    }
}
