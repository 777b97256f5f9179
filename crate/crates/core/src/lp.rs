//! Dense bounded-variable primal simplex.
//!
//! Problems are stored as `min c·x` subject to `row_lo <= A x <= row_hi` and
//! `lo <= x <= hi`. Internally every row gets a logical variable `r = A x`
//! carrying the row bounds, so the working system is `A x - r = 0` and the
//! initial basis is the (negated) identity of logicals. Phase 1 minimizes the
//! sum of bound violations of the basic variables; phase 2 the true objective.
//!
//! Pricing is Dantzig's largest reduced cost. After a run of degenerate pivots
//! the solver falls back to Bland's rule (smallest eligible index for both the
//! entering and the leaving variable) until a pivot makes progress again.

use thiserror::Error;

use crate::scalar::Scalar;

/// Sense of a linear constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row<F> {
    pub coeffs: Vec<(usize, F)>,
    pub lower: F,
    pub upper: F,
}

/// A linear program in minimization form with bounded variables.
#[derive(Clone, Debug, Default)]
pub struct LinearProgram<F> {
    pub objective: Vec<F>,
    pub var_lower: Vec<F>,
    pub var_upper: Vec<F>,
    pub rows: Vec<Row<F>>,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug)]
pub struct LpSolution<F> {
    pub x: Vec<F>,
    pub objective: F,
    pub iterations: usize,
}

impl<F: Scalar> LinearProgram<F> {
    pub fn new() -> Self {
        Self {
            objective: Vec::new(),
            var_lower: Vec::new(),
            var_upper: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds a variable and returns its index.
    pub fn add_var(&mut self, cost: F, lower: F, upper: F) -> usize {
        self.objective.push(cost);
        self.var_lower.push(lower);
        self.var_upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, F)>, relation: Relation, rhs: F) {
        let (lower, upper) = match relation {
            Relation::Le => (F::neg_infinity(), rhs),
            Relation::Ge => (rhs, F::infinity()),
            Relation::Eq => (rhs, rhs),
        };
        self.rows.push(Row { coeffs, lower, upper });
    }

    pub fn add_ranged_row(&mut self, coeffs: Vec<(usize, F)>, lower: F, upper: F) {
        self.rows.push(Row { coeffs, lower, upper });
    }

    pub fn evaluate(&self, x: &[F]) -> F {
        self.objective.iter().zip(x).map(|(&c, &v)| c * v).sum()
    }

    /// Largest absolute violation of any row or variable bound at `x`.
    pub fn max_violation(&self, x: &[F]) -> F {
        let mut worst = F::zero();
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.var_lower[j] - v).max(v - self.var_upper[j]);
        }
        for row in &self.rows {
            let ax: F = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            worst = worst.max(row.lower - ax).max(ax - row.upper);
        }
        worst
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.var_lower.len() != n || self.var_upper.len() != n {
            return Err(LpError::Malformed("bound vectors differ in length from objective".into()));
        }
        for j in 0..n {
            let (lo, hi) = (self.var_lower[j], self.var_upper[j]);
            if lo.is_nan() || hi.is_nan() || !self.objective[j].is_finite() {
                return Err(LpError::Malformed(format!("variable {j} has NaN data")));
            }
            if lo > hi {
                return Err(LpError::Infeasible);
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.lower > row.upper {
                return Err(LpError::Infeasible);
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(LpError::Malformed(format!("row {i} references variable {j}")));
                }
                if !a.is_finite() {
                    return Err(LpError::Malformed(format!("row {i} has a non-finite coefficient")));
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution<F>, LpError> {
        self.validate()?;
        Simplex::new(self).run()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable parked at zero.
    Free,
}

const REFACTOR_EVERY: usize = 64;
const DEGENERATE_RUN_FOR_BLAND: usize = 30;

struct Simplex<'a, F> {
    lp: &'a LinearProgram<F>,
    m: usize,
    n: usize,
    /// Column-major sparse matrix of `[A | -I]`.
    cols: Vec<Vec<(usize, F)>>,
    lower: Vec<F>,
    upper: Vec<F>,
    cost: Vec<F>,
    status: Vec<Status>,
    value: Vec<F>,
    basis: Vec<usize>,
    /// Row-major dense inverse of the basis matrix.
    binv: Vec<F>,
    feas_tol: F,
    piv_tol: F,
    opt_tol: F,
}

impl<'a, F: Scalar> Simplex<'a, F> {
    fn new(lp: &'a LinearProgram<F>) -> Self {
        let n = lp.num_vars();
        let m = lp.num_rows();
        let mut cols: Vec<Vec<(usize, F)>> = vec![Vec::new(); n + m];
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                if a != F::zero() {
                    cols[j].push((i, a));
                }
            }
            cols[n + i].push((i, -F::one()));
        }
        // merge duplicate entries within a column
        for col in cols.iter_mut().take(n) {
            col.sort_by_key(|&(i, _)| i);
            col.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
        }
        let mut lower = lp.var_lower.clone();
        let mut upper = lp.var_upper.clone();
        for row in &lp.rows {
            lower.push(row.lower);
            upper.push(row.upper);
        }
        let mut cost = lp.objective.clone();
        cost.extend(std::iter::repeat_n(F::zero(), m));

        let mut status = Vec::with_capacity(n + m);
        let mut value = Vec::with_capacity(n + m);
        for j in 0..n {
            let (s, v) = if lower[j].is_finite() {
                (Status::AtLower, lower[j])
            } else if upper[j].is_finite() {
                (Status::AtUpper, upper[j])
            } else {
                (Status::Free, F::zero())
            };
            status.push(s);
            value.push(v);
        }
        status.extend(std::iter::repeat_n(Status::Basic, m));
        value.extend(std::iter::repeat_n(F::zero(), m));
        let basis: Vec<usize> = (n..n + m).collect();
        let mut binv = vec![F::zero(); m * m];
        for i in 0..m {
            binv[i * m + i] = -F::one();
        }
        let mut s = Self {
            lp,
            m,
            n,
            cols,
            lower,
            upper,
            cost,
            status,
            value,
            basis,
            binv,
            feas_tol: F::of(F::FEASIBILITY_TOL),
            piv_tol: F::of(F::PIVOT_TOL),
            opt_tol: F::of(F::OPTIMALITY_TOL),
        };
        s.recompute_basic_values();
        s
    }

    /// x_B = -B^{-1} (N x_N) since the right-hand side is zero.
    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut rhs = vec![F::zero(); m];
        for j in 0..self.n + m {
            if self.status[j] == Status::Basic {
                continue;
            }
            let v = self.value[j];
            if v == F::zero() {
                continue;
            }
            for &(i, a) in &self.cols[j] {
                rhs[i] -= a * v;
            }
        }
        for (pos, &var) in self.basis.iter().enumerate() {
            let row = &self.binv[pos * m..(pos + 1) * m];
            let mut acc = F::zero();
            for k in 0..m {
                acc += row[k] * rhs[k];
            }
            self.value[var] = acc;
        }
    }

    /// Rebuilds B^{-1} from scratch by Gauss-Jordan elimination with partial pivoting.
    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut b = vec![F::zero(); m * m];
        for (pos, &var) in self.basis.iter().enumerate() {
            for &(i, a) in &self.cols[var] {
                b[i * m + pos] = a;
            }
        }
        let mut inv = vec![F::zero(); m * m];
        for i in 0..m {
            inv[i * m + i] = F::one();
        }
        for c in 0..m {
            let mut piv = c;
            let mut best = b[c * m + c].abs();
            for r in c + 1..m {
                let v = b[r * m + c].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best <= self.piv_tol {
                return Err(LpError::Malformed("singular basis during refactorization".into()));
            }
            if piv != c {
                for k in 0..m {
                    b.swap(c * m + k, piv * m + k);
                    inv.swap(c * m + k, piv * m + k);
                }
            }
            let d = F::one() / b[c * m + c];
            for k in 0..m {
                b[c * m + k] *= d;
                inv[c * m + k] *= d;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = b[r * m + c];
                if f == F::zero() {
                    continue;
                }
                for k in 0..m {
                    let bv = b[c * m + k];
                    let iv = inv[c * m + k];
                    b[r * m + k] -= f * bv;
                    inv[r * m + k] -= f * iv;
                }
            }
        }
        // inv is now B^{-1} with rows indexed by basis position
        self.binv = inv;
        Ok(())
    }

    fn infeasibility_sign(&self, var: usize) -> i8 {
        let v = self.value[var];
        if v < self.lower[var] - self.feas_tol {
            -1
        } else if v > self.upper[var] + self.feas_tol {
            1
        } else {
            0
        }
    }

    fn run(mut self) -> Result<LpSolution<F>, LpError> {
        let m = self.m;
        let total = self.n + m;
        let max_iter = 50 * (total + m) + 1000;
        let mut iterations = 0usize;
        let mut since_refactor = 0usize;
        let mut degenerate_run = 0usize;
        let mut y = vec![F::zero(); m];
        let mut alpha = vec![F::zero(); m];
        let mut cb = vec![F::zero(); m];

        loop {
            if iterations >= max_iter {
                return Err(LpError::IterationLimit(max_iter));
            }
            // phase selection
            let mut phase_one = false;
            for (pos, &var) in self.basis.iter().enumerate() {
                let s = self.infeasibility_sign(var);
                cb[pos] = F::of(s as f64);
                if s != 0 {
                    phase_one = true;
                }
            }
            if !phase_one {
                for (pos, &var) in self.basis.iter().enumerate() {
                    cb[pos] = self.cost[var];
                }
            }
            // y = c_B^T B^{-1}
            y.iter_mut().for_each(|v| *v = F::zero());
            for pos in 0..m {
                let c = cb[pos];
                if c == F::zero() {
                    continue;
                }
                let row = &self.binv[pos * m..(pos + 1) * m];
                for k in 0..m {
                    y[k] += c * row[k];
                }
            }
            // pricing
            let bland = degenerate_run >= DEGENERATE_RUN_FOR_BLAND;
            let mut entering: Option<(usize, F)> = None;
            let mut best_score = F::zero();
            for j in 0..total {
                let st = self.status[j];
                if st == Status::Basic {
                    continue;
                }
                if self.lower[j] == self.upper[j] && st != Status::Free {
                    continue; // fixed
                }
                let cj = if phase_one { F::zero() } else { self.cost[j] };
                let mut d = cj;
                for &(i, a) in &self.cols[j] {
                    d -= y[i] * a;
                }
                let eligible = match st {
                    Status::AtLower => d < -self.opt_tol,
                    Status::AtUpper => d > self.opt_tol,
                    Status::Free => d.abs() > self.opt_tol,
                    Status::Basic => false,
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if d.abs() > best_score {
                    best_score = d.abs();
                    entering = Some((j, d));
                }
            }
            let Some((q, dq)) = entering else {
                if phase_one {
                    return Err(LpError::Infeasible);
                }
                break;
            };
            // direction: +1 increases x_q
            let dir = if dq < F::zero() { F::one() } else { -F::one() };
            // alpha = B^{-1} a_q
            alpha.iter_mut().for_each(|v| *v = F::zero());
            for &(k, a) in &self.cols[q] {
                for pos in 0..m {
                    alpha[pos] += self.binv[pos * m + k] * a;
                }
            }
            // ratio test; basic value moves at rate -dir*alpha per unit step
            let tie = self.feas_tol * F::of(1e-3);
            let mut leaving: Option<(usize, Status)> = None;
            let mut best_limit = F::infinity();
            let mut best_key = (F::zero(), usize::MAX);
            for pos in 0..m {
                let a = alpha[pos];
                if a.abs() <= self.piv_tol {
                    continue;
                }
                let var = self.basis[pos];
                let rate = -dir * a;
                let x = self.value[var];
                let (lo, hi) = (self.lower[var], self.upper[var]);
                let sign = self.infeasibility_sign(var);
                let (limit, bound) = if rate < F::zero() {
                    match sign {
                        0 if lo.is_finite() => ((x - lo) / -rate, Status::AtLower),
                        1 => ((x - hi) / -rate, Status::AtUpper),
                        _ => continue,
                    }
                } else {
                    match sign {
                        0 if hi.is_finite() => ((hi - x) / rate, Status::AtUpper),
                        -1 => ((lo - x) / rate, Status::AtLower),
                        _ => continue,
                    }
                };
                let limit = limit.max(F::zero());
                let take = if leaving.is_none() || limit < best_limit - tie {
                    true
                } else if limit <= best_limit + tie {
                    if bland {
                        var < best_key.1
                    } else {
                        a.abs() > best_key.0
                    }
                } else {
                    false
                };
                if take {
                    best_limit = limit;
                    leaving = Some((pos, bound));
                    best_key = (a.abs(), var);
                }
            }
            let span = self.upper[q] - self.lower[q];
            let mut step = best_limit;
            if span.is_finite() && span < best_limit {
                step = span;
                leaving = None;
            }
            if step.is_infinite() {
                if phase_one {
                    return Err(LpError::Malformed("unbounded phase-one direction".into()));
                }
                return Err(LpError::Unbounded);
            }
            iterations += 1;
            if step <= self.feas_tol {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            // move
            for pos in 0..m {
                let a = alpha[pos];
                if a != F::zero() {
                    let var = self.basis[pos];
                    self.value[var] -= dir * step * a;
                }
            }
            match leaving {
                None => {
                    // bound flip of the entering variable
                    self.value[q] += dir * step;
                    self.status[q] = if dir > F::zero() { Status::AtUpper } else { Status::AtLower };
                    self.value[q] = if dir > F::zero() { self.upper[q] } else { self.lower[q] };
                }
                Some((r, bound)) => {
                    let out = self.basis[r];
                    self.value[q] += dir * step;
                    self.status[out] = bound;
                    self.value[out] = if bound == Status::AtLower { self.lower[out] } else { self.upper[out] };
                    self.status[q] = Status::Basic;
                    self.basis[r] = q;
                    // eta update of B^{-1}
                    let piv = alpha[r];
                    let inv_piv = F::one() / piv;
                    for k in 0..m {
                        self.binv[r * m + k] *= inv_piv;
                    }
                    let (head, rest) = self.binv.split_at_mut(r * m);
                    let (prow, tail) = rest.split_at_mut(m);
                    for pos in 0..m {
                        if pos == r {
                            continue;
                        }
                        let f = alpha[pos];
                        if f == F::zero() {
                            continue;
                        }
                        let row = if pos < r {
                            &mut head[pos * m..(pos + 1) * m]
                        } else {
                            let off = (pos - r - 1) * m;
                            &mut tail[off..off + m]
                        };
                        for k in 0..m {
                            row[k] -= f * prow[k];
                        }
                    }
                    since_refactor += 1;
                    if since_refactor >= REFACTOR_EVERY {
                        self.refactor()?;
                        self.recompute_basic_values();
                        since_refactor = 0;
                    }
                }
            }
        }

        if since_refactor > 0 {
            self.refactor()?;
            self.recompute_basic_values();
        }
        let mut x: Vec<F> = self.value[..self.n].to_vec();
        // snap nonbasic and nearly-feasible basic values onto their bounds
        for (j, v) in x.iter_mut().enumerate() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if *v < lo && lo - *v <= self.feas_tol {
                *v = lo;
            } else if *v > hi && *v - hi <= self.feas_tol {
                *v = hi;
            }
        }
        if self.lp.max_violation(&x) > self.feas_tol * F::of(10.0) {
            // accumulated drift: the final factorization disagrees with the path
            for var in self.basis.clone() {
                if self.infeasibility_sign(var) != 0 {
                    return Err(LpError::Malformed("basis lost feasibility after refactorization".into()));
                }
            }
        }
        let objective = self.lp.evaluate(&x);
        Ok(LpSolution { x, objective, iterations })
    }
}
