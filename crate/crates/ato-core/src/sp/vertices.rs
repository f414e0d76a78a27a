//! Vertices of the dual polytope `{kappa >= 0 : A' kappa <= c}`.
//!
//! For `q = A x - Y` the last-stage value is
//! `phi0(Y, x) = max_v v . q - c . x`, so once the vertices are known the
//! terminal LP reduces to a maximum over a short list of dot products.

use alloc::vec;
use alloc::vec::Vec;

/// Vertices stored row-major, `n` coordinates each, in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVertices {
    pub n: usize,
    pub coords: Vec<f64>,
}

impl DualVertices {
    pub fn len(&self) -> usize {
        self.coords.len() / self.n.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.coords[v * self.n..(v + 1) * self.n]
    }

    /// `max_v v . q`.
    pub fn support(&self, q: &[i64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for v in self.coords.chunks_exact(self.n) {
            let s: f64 = v.iter().zip(q).map(|(a, b)| a * *b as f64).sum();
            if s > best {
                best = s;
            }
        }
        best
    }
}

/// Enumerates vertices of `{kappa in R^n : kappa >= 0, sum_j a_ji kappa_j <= c_i}`
/// for the `n x m` row-major BOM `bom`.
pub fn dual_vertices(n: usize, m: usize, bom: &[i64], c: &[f64]) -> DualVertices {
    // Constraint t < m: A'_i kappa <= c_i; t >= m: -kappa_{t-m} <= 0.
    let total = m + n;
    let row = |t: usize| -> (Vec<f64>, f64) {
        if t < m {
            ((0..n).map(|j| bom[j * m + t] as f64).collect(), c[t])
        } else {
            let mut e = vec![0.0; n];
            e[t - m] = -1.0;
            (e, 0.0)
        }
    };
    let scale = c.iter().fold(1.0f64, |a, &b| a.max(libm::fabs(b)));
    let tol = 1e-9 * scale;
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut subset: Vec<usize> = (0..n).collect();
    loop {
        let mut mat = vec![0.0; n * n];
        let mut rhs = vec![0.0; n];
        for (r, &t) in subset.iter().enumerate() {
            let (a, b) = row(t);
            mat[r * n..(r + 1) * n].copy_from_slice(&a);
            rhs[r] = b;
        }
        if let Some(sol) = gauss_solve(n, &mut mat, &mut rhs) {
            let feasible = (0..total).all(|t| {
                let (a, b) = row(t);
                a.iter().zip(&sol).map(|(x, y)| x * y).sum::<f64>() <= b + tol
            });
            if feasible && !found.iter().any(|v| v.iter().zip(&sol).all(|(a, b)| libm::fabs(a - b) <= tol)) {
                found.push(sol.iter().map(|&x| if libm::fabs(x) <= tol { 0.0 } else { x }).collect());
            }
        }
        if !next_subset(&mut subset, total) {
            break;
        }
    }
    found.sort_by(|a, b| {
        for (x, y) in a.iter().zip(b) {
            let o = x.total_cmp(y);
            if o != core::cmp::Ordering::Equal {
                return o;
            }
        }
        core::cmp::Ordering::Equal
    });
    DualVertices { n, coords: found.concat() }
}

fn next_subset(s: &mut [usize], total: usize) -> bool {
    let k = s.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if s[i] < total - k + i {
            s[i] += 1;
            for t in i + 1..k {
                s[t] = s[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn gauss_solve(n: usize, a: &mut [f64], b: &mut [f64]) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if libm::fabs(a[r * n + col]) > libm::fabs(a[piv * n + col]) {
                piv = r;
            }
        }
        if libm::fabs(a[piv * n + col]) < 1e-12 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        for r in 0..n {
            if r != col {
                let f = a[r * n + col] / a[col * n + col];
                if f != 0.0 {
                    for c in col..n {
                        a[r * n + c] -= f * a[col * n + c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i * n + i]).collect())
}
