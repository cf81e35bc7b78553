//! Dense two-phase simplex for the small linear programs of the trust-region
//! steps: `min cᵀy` subject to `A y ≤ b`, `y ≥ 0`. Bland's rule keeps it
//! finite on degenerate problems.

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

const EPS: f64 = 1e-11;

struct Tableau {
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (i, r) in self.t.iter_mut().enumerate() {
            if i != row {
                let f = r[col];
                if f != 0.0 {
                    for (v, pv) in r.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        self.basis[row] = col;
    }

    /// Runs simplex iterations for cost vector `cost` over enterable columns.
    fn optimize(&mut self, cost: &[f64], enterable: &[bool]) -> bool {
        let rows = self.t.len();
        let scale = 1.0 + cost.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for _ in 0..10_000 {
            let mut entering = None;
            for j in 0..self.cols {
                if !enterable[j] || self.basis.contains(&j) {
                    continue;
                }
                let mut d = cost[j];
                for i in 0..rows {
                    d -= cost[self.basis[i]] * self.t[i][j];
                }
                if d < -EPS * scale {
                    entering = Some(j);
                    break;
                }
            }
            let Some(col) = entering else {
                return true;
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..rows {
                let a = self.t[i][col];
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    let better = match best {
                        None => true,
                        Some((bi, br)) => ratio < br - EPS || (ratio <= br + EPS && self.basis[i] < self.basis[bi]),
                    };
                    if better {
                        best = Some((i, ratio));
                    }
                }
            }
            match best {
                Some((row, _)) => self.pivot(row, col),
                None => return false,
            }
        }
        true
    }
}

pub fn solve(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> LpOutcome {
    let n = c.len();
    let m = a.len();
    let negative: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = negative.len();
    let cols = n + m + n_art;
    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let mut art = 0;
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[i][j];
        }
        t[i][n + i] = sign;
        t[i][cols] = sign * b[i];
        if b[i] < 0.0 {
            t[i][n + m + art] = 1.0;
            basis[i] = n + m + art;
            art += 1;
        } else {
            basis[i] = n + i;
        }
    }
    let mut tab = Tableau { t, basis, cols };

    if n_art > 0 {
        let mut cost1 = vec![0.0; cols];
        for v in cost1.iter_mut().skip(n + m) {
            *v = 1.0;
        }
        tab.optimize(&cost1, &vec![true; cols]);
        let infeas: f64 = (0..m).filter(|&i| tab.basis[i] >= n + m).map(|i| tab.rhs(i)).sum();
        let scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if infeas > 1e-9 * scale {
            return LpOutcome::Infeasible;
        }
        // Drive zero-valued artificials out of the basis where possible.
        for i in 0..m {
            if tab.basis[i] >= n + m {
                if let Some(j) = (0..n + m).find(|&j| tab.t[i][j].abs() > EPS && !tab.basis.contains(&j)) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(c);
    let enterable: Vec<bool> = (0..cols).map(|j| j < n + m).collect();
    if !tab.optimize(&cost, &enterable) {
        return LpOutcome::Unbounded;
    }
    let mut y = vec![0.0; n];
    for i in 0..m {
        if tab.basis[i] < n {
            y[tab.basis[i]] = tab.rhs(i).max(0.0);
        }
    }
    LpOutcome::Optimal(y)
}
