//! Independent reference solvers for small dispatch instances.
//!
//! `exact_optimum` writes the dispatch LP from scratch over exact rationals
//! and solves it with a dense two-phase tableau simplex (Bland's rule).
//! `vertex_enumeration` works in net-power space: with a generous grid cap
//! and nonnegative prices an optimum never charges and discharges at once,
//! so the objective is a convex piecewise-linear function of one signed power
//! per step and its minimum sits on a vertex of the kink arrangement.

#![allow(dead_code)]

use gridlife::dispatch::{BatteryState, DispatchProblem, Tariff, ThetaVector, TIE_BREAK_WEIGHT};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Q = BigRational;

fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

fn qf(v: &Q) -> f64 {
    v.to_f64().unwrap()
}

/// A dispatch instance with exactly representable data.
#[derive(Clone, Debug)]
pub struct Instance {
    pub tau: Q,
    pub pv: Vec<Q>,
    pub load: Vec<Q>,
    pub buy: Vec<Q>,
    pub sell: Vec<Q>,
    pub theta: [Q; 4],
    pub rated: Q,
    pub cap_now: Q,
    pub p_chg: Q,
    pub p_dis: Q,
    pub eta_c: Q,
    pub eta_d: Q,
    pub grid: Q,
}

impl Instance {
    pub fn horizon(&self) -> usize {
        self.load.len()
    }

    pub fn random(seed: u64, horizon: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ints = |lo: i64, hi: i64| rng.random_range(lo..=hi);
        let tau = if ints(0, 1) == 0 { q(1, 1) } else { q(1, 2) };
        let pv: Vec<Q> = (0..horizon).map(|_| q(ints(0, 80), 1)).collect();
        let load: Vec<Q> = (0..horizon).map(|_| q(ints(0, 80), 1)).collect();
        let buy: Vec<Q> = (0..horizon).map(|_| q(ints(5, 50), 100)).collect();
        let sell: Vec<Q> = buy.iter().map(|b| b * q(ints(0, 10), 10)).collect();
        let mut theta_part = |scale: i64| if ints(0, 2) == 0 { q(0, 1) } else { q(ints(1, 20), scale) };
        let theta = [theta_part(1000), theta_part(1000), theta_part(1000), theta_part(1000)];
        let rated = q(ints(20, 120), 1);
        let cap_now = &rated * q(ints(4, 10), 10);
        let etas = [q(1, 1), q(19, 20), q(9, 10)];
        let eta_c = etas[ints(0, 2) as usize].clone();
        let eta_d = etas[ints(0, 2) as usize].clone();
        let p_chg = q(ints(5, 60), 1);
        let p_dis = q(ints(5, 60), 1);
        let grid = q(1000, 1);
        Self { tau, pv, load, buy, sell, theta, rated, cap_now, p_chg, p_dis, eta_c, eta_d, grid }
    }

    pub fn problem(&self) -> DispatchProblem<f64> {
        let v = |xs: &[Q]| xs.iter().map(qf).collect::<Vec<f64>>();
        let battery = BatteryState::new(
            qf(&self.rated),
            qf(&self.cap_now),
            qf(&self.p_chg),
            qf(&self.p_dis),
            qf(&self.eta_c),
            qf(&self.eta_d),
        )
        .unwrap();
        DispatchProblem::new(
            qf(&self.tau),
            v(&self.pv),
            v(&self.load),
            Tariff::new(v(&self.buy), v(&self.sell)).unwrap(),
            ThetaVector::new(qf(&self.theta[0]), qf(&self.theta[1]), qf(&self.theta[2]), qf(&self.theta[3])).unwrap(),
            battery,
            qf(&self.grid),
        )
    }

    fn e_min(&self) -> Q {
        (&self.rated - &self.cap_now) / q(2, 1)
    }

    fn e_max(&self) -> Q {
        (&self.rated + &self.cap_now) / q(2, 1)
    }

    fn e0(&self) -> Q {
        &self.rated / q(2, 1)
    }

    /// Weights on band, charge peak and discharge peak, with the solver's
    /// tie-break weight standing in for zero entries.
    fn aux_weights(&self) -> [f64; 3] {
        let w = |t: &Q| if t.is_positive() { qf(t) } else { TIE_BREAK_WEIGHT };
        [w(&self.theta[1]), w(&self.theta[2]), w(&self.theta[3])]
    }
}

// ---------------------------------------------------------------------------
// exact tableau simplex

struct Tableau {
    /// rows x (cols + 1); last column is the right-hand side
    a: Vec<Vec<Q>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c].clone();
        for v in self.a[r].iter_mut() {
            *v /= &p;
        }
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let f = row[c].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                if !pv.is_zero() {
                    *v -= &f * pv;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost` over the current feasible basis, only letting
    /// columns flagged in `allowed` enter. Returns `None` when unbounded.
    fn minimize(&mut self, cost: &[Q], allowed: &[bool]) -> Option<Q> {
        let m = self.a.len();
        loop {
            // reduced costs d_j = c_j - c_B B^-1 A_j
            let mut entering = None;
            for j in 0..self.cols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let mut d = cost[j].clone();
                for i in 0..m {
                    let a = &self.a[i][j];
                    if !a.is_zero() {
                        d -= &cost[self.basis[i]] * a;
                    }
                }
                if d.is_negative() {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else {
                let mut z = Q::zero();
                for i in 0..m {
                    z += &cost[self.basis[i]] * &self.a[i][self.cols];
                }
                return Some(z);
            };
            let mut leave: Option<(usize, Q)> = None;
            for i in 0..m {
                let a = &self.a[i][c];
                if a.is_positive() {
                    let ratio = &self.a[i][self.cols] / a;
                    let better = match &leave {
                        None => true,
                        Some((li, lr)) => ratio < *lr || (ratio == *lr && self.basis[i] < self.basis[*li]),
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let (r, _) = leave?;
            self.pivot(r, c);
        }
    }
}

/// Exact optimum of the dispatch LP, including tie-break weights, or `None`
/// if infeasible.
pub fn exact_optimum(inst: &Instance) -> Option<Q> {
    let t_len = inst.horizon();
    let eps = Q::from_float(TIE_BREAK_WEIGHT).unwrap();
    let wt = |t: &Q| if t.is_positive() { t.clone() } else { eps.clone() };
    let e_min = inst.e_min();
    let span = inst.e_max() - &e_min;
    // variable order: buy, sell, chg, dis, e' (shifted by e_min), bl', bh', pc, pd
    let nv = 5 * t_len + 4;
    let (buy, sell, chg, dis, en) = (0, t_len, 2 * t_len, 3 * t_len, 4 * t_len);
    let (bl, bh, pc, pd) = (5 * t_len, 5 * t_len + 1, 5 * t_len + 2, 5 * t_len + 3);
    let mut cost = vec![Q::zero(); nv];
    for t in 0..t_len {
        cost[buy + t] = &inst.buy[t] * &inst.tau;
        cost[sell + t] = -(&inst.sell[t] * &inst.tau);
        cost[chg + t] = &inst.theta[0] * &inst.tau;
        cost[dis + t] = &inst.theta[0] * &inst.tau;
    }
    cost[bl] = -wt(&inst.theta[1]);
    cost[bh] = wt(&inst.theta[1]);
    cost[pc] = wt(&inst.theta[2]);
    cost[pd] = wt(&inst.theta[3]);

    // (coefficients, rhs, is_equality); inequalities are `<=`
    let mut rows: Vec<(Vec<(usize, Q)>, Q, bool)> = Vec::new();
    let one = Q::one;
    for t in 0..t_len {
        rows.push((
            vec![(buy + t, one()), (sell + t, -one()), (chg + t, -one()), (dis + t, one())],
            &inst.load[t] - &inst.pv[t],
            true,
        ));
        let mut dynamics = vec![
            (en + t, one()),
            (chg + t, -(&inst.tau * &inst.eta_c)),
            (dis + t, &inst.tau / &inst.eta_d),
        ];
        let rhs = if t == 0 {
            inst.e0() - &e_min
        } else {
            dynamics.push((en + t - 1, -one()));
            Q::zero()
        };
        rows.push((dynamics, rhs, true));
        rows.push((vec![(en + t, one())], span.clone(), false));
        rows.push((vec![(en + t, one()), (bh, -one())], Q::zero(), false));
        rows.push((vec![(bl, one()), (en + t, -one())], Q::zero(), false));
        rows.push((vec![(chg + t, one()), (pc, -one())], Q::zero(), false));
        rows.push((vec![(dis + t, one()), (pd, -one())], Q::zero(), false));
        rows.push((vec![(chg + t, one())], inst.p_chg.clone(), false));
        rows.push((vec![(dis + t, one())], inst.p_dis.clone(), false));
        rows.push((vec![(buy + t, one())], inst.grid.clone(), false));
        rows.push((vec![(sell + t, one())], inst.grid.clone(), false));
    }
    rows.push((vec![(en + t_len - 1, one())], inst.e0() - &e_min, true));
    rows.push((vec![(bh, one())], span.clone(), false));
    rows.push((vec![(bl, one()), (bh, -one())], Q::zero(), false));
    rows.push((vec![(pc, one())], inst.p_chg.clone(), false));
    rows.push((vec![(pd, one())], inst.p_dis.clone(), false));

    // slack for each inequality, artificial where the slack cannot start basic
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| !r.2).count();
    let needs_art: Vec<bool> = rows.iter().map(|(_, rhs, eq)| *eq || rhs.is_negative()).collect();
    let n_art = needs_art.iter().filter(|&&b| b).count();
    let cols = nv + n_slack + n_art;
    let mut a = vec![vec![Q::zero(); cols + 1]; m];
    let mut basis = vec![0; m];
    let (mut s_idx, mut a_idx) = (nv, nv + n_slack);
    for (i, (coeffs, rhs, eq)) in rows.iter().enumerate() {
        let sign = if rhs.is_negative() { -one() } else { one() };
        for (j, v) in coeffs {
            a[i][*j] += v * &sign;
        }
        a[i][cols] = rhs * &sign;
        if !eq {
            a[i][s_idx] = sign.clone();
            if !needs_art[i] {
                basis[i] = s_idx;
            }
            s_idx += 1;
        }
        if needs_art[i] {
            a[i][a_idx] = one();
            basis[i] = a_idx;
            a_idx += 1;
        }
    }
    let mut tab = Tableau { a, basis, cols };
    let mut phase1 = vec![Q::zero(); cols];
    for c in phase1.iter_mut().skip(nv + n_slack) {
        *c = one();
    }
    let all = vec![true; cols];
    let infeas = tab.minimize(&phase1, &all)?;
    if infeas.is_positive() {
        return None;
    }
    // drive remaining zero-level artificials out of the basis where possible
    for r in 0..m {
        if tab.basis[r] >= nv + n_slack {
            if let Some(c) = (0..nv + n_slack).find(|&c| !tab.a[r][c].is_zero()) {
                tab.pivot(r, c);
            }
        }
    }
    let mut phase2 = vec![Q::zero(); cols];
    phase2[..nv].clone_from_slice(&cost);
    let allowed: Vec<bool> = (0..cols).map(|j| j < nv + n_slack).collect();
    let z = tab.minimize(&phase2, &allowed)?;
    // undo the shift of the band variables: cost of bl and bh cancel in the
    // shift, so the objective needs no correction
    Some(z)
}

// ---------------------------------------------------------------------------
// vertex enumeration in net-power space

#[derive(Clone, Debug)]
struct Affine {
    coef: Vec<f64>,
    c: f64,
}

impl Affine {
    fn eval(&self, u: &[f64]) -> f64 {
        self.c + self.coef.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn solve_square(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    for k in col..n {
                        m[r][k] -= f * m[col][k];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / m[i][i]).collect())
}

fn combinations(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Net-power objective of the dispatch LP (with tie-break weights), or
/// `None` if `u` is infeasible.
pub fn reduced_objective(inst: &Instance, u: &[f64]) -> Option<f64> {
    let tol = 1e-7;
    let tau = qf(&inst.tau);
    let (eta_c, eta_d) = (qf(&inst.eta_c), qf(&inst.eta_d));
    let (e_min, e_max, e0) = (qf(&inst.e_min()), qf(&inst.e_max()), qf(&inst.e0()));
    let [w_band, w_pc, w_pd] = inst.aux_weights();
    let theta_efc = qf(&inst.theta[0]);
    let grid = qf(&inst.grid);
    let mut e = e0;
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut peak_c, mut peak_d) = (0.0f64, 0.0f64);
    let mut total = 0.0;
    for (t, &ut) in u.iter().enumerate() {
        let (c, d) = if ut >= 0.0 { (ut, 0.0) } else { (0.0, -ut) };
        if c > qf(&inst.p_chg) + tol || d > qf(&inst.p_dis) + tol {
            return None;
        }
        e += tau * (eta_c * c - d / eta_d);
        if e < e_min - tol || e > e_max + tol {
            return None;
        }
        hi = hi.max(e);
        lo = lo.min(e);
        peak_c = peak_c.max(c);
        peak_d = peak_d.max(d);
        let net = qf(&inst.load[t]) - qf(&inst.pv[t]) + ut;
        if net.abs() > grid + tol {
            return None;
        }
        total += tau * (qf(&inst.buy[t]) * net.max(0.0) - qf(&inst.sell[t]) * (-net).max(0.0));
        total += theta_efc * tau * (c + d);
    }
    if (e - e0).abs() > 1e-6 {
        return None;
    }
    Some(total + w_band * (hi - lo) + w_pc * peak_c + w_pd * peak_d)
}

/// Minimum of [`reduced_objective`] over all arrangement vertices.
pub fn vertex_enumeration(inst: &Instance) -> Option<f64> {
    let n = inst.horizon();
    let tau = qf(&inst.tau);
    let (eta_c, eta_d) = (qf(&inst.eta_c), qf(&inst.eta_d));
    let (e_min, e_max, e0) = (qf(&inst.e_min()), qf(&inst.e_max()), qf(&inst.e0()));
    let unit = |t: usize, c: f64| {
        let mut coef = vec![0.0; n];
        coef[t] = 1.0;
        Affine { coef, c }
    };
    let mut best: Option<f64> = None;
    for signs in 0u32..(1 << n) {
        let positive = |t: usize| signs & (1 << t) != 0;
        let energy: Vec<Affine> = (0..n)
            .map(|t| {
                let coef = (0..n)
                    .map(|s| if s > t { 0.0 } else if positive(s) { tau * eta_c } else { tau / eta_d })
                    .collect();
                Affine { coef, c: e0 }
            })
            .collect();
        let diff = |a: &Affine, b: &Affine| Affine {
            coef: a.coef.iter().zip(&b.coef).map(|(x, y)| x - y).collect(),
            c: a.c - b.c,
        };
        let mut planes: Vec<Affine> = Vec::new();
        for t in 0..n {
            planes.push(unit(t, 0.0));
            let cap = if positive(t) { -qf(&inst.p_chg) } else { qf(&inst.p_dis) };
            planes.push(unit(t, cap));
            let net = qf(&inst.load[t]) - qf(&inst.pv[t]);
            planes.push(unit(t, net));
            planes.push(unit(t, net - qf(&inst.grid)));
            planes.push(unit(t, net + qf(&inst.grid)));
            if t + 1 < n {
                let mut lo = energy[t].clone();
                lo.c -= e_min;
                let mut hi = energy[t].clone();
                hi.c -= e_max;
                planes.push(lo);
                planes.push(hi);
            }
            for s in t + 1..n {
                planes.push(diff(&energy[t], &energy[s]));
                if positive(t) == positive(s) {
                    planes.push(diff(&unit(t, 0.0), &unit(s, 0.0)));
                }
            }
        }
        let mut terminal = energy[n - 1].clone();
        terminal.c -= e0;
        combinations(planes.len(), n - 1, |pick| {
            let mut m = vec![terminal.coef.clone()];
            let mut b = vec![-terminal.c];
            for &k in pick {
                m.push(planes[k].coef.clone());
                b.push(-planes[k].c);
            }
            let Some(u) = solve_square(m, b) else { return };
            let in_orthant = (0..n).all(|t| if positive(t) { u[t] >= -1e-9 } else { u[t] <= 1e-9 });
            if !in_orthant {
                return;
            }
            let u: Vec<f64> = (0..n).map(|t| if positive(t) { u[t].max(0.0) } else { u[t].min(0.0) }).collect();
            if let Some(v) = reduced_objective(inst, &u) {
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        });
    }
    best
}

/// `|a - b| <= rel * max(1, |b|)`.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1.0)
}

pub fn to_f64(v: &Q) -> f64 {
    qf(v)
}
