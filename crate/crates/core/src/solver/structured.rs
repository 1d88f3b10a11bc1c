//! O(N) solution of `(rho1 I + rho2 PsiᵀPsi) x = b`, where `Psi` is the
//! lower-triangular all-ones (cumulative sum) matrix.
//!
//! `Psi⁻¹` is unit lower bidiagonal with `-1` on the subdiagonal, so
//! `(PsiᵀPsi)⁻¹ = Psi⁻¹ Psi⁻ᵀ = T` is tridiagonal with diagonal `(1, 2, …, 2)`
//! and off-diagonals `-1`. Multiplying the system by `T` gives the tridiagonal
//! system `(rho2 I + rho1 T) x = T b`, solved by forward elimination and back
//! substitution.

/// `y = Psi x` (running sum).
pub fn psi_mul(x: &[f64], y: &mut [f64]) {
    let mut acc = 0.0;
    for (yi, xi) in y.iter_mut().zip(x) {
        acc += xi;
        *yi = acc;
    }
}

/// `y = Psiᵀ x` (reverse running sum).
pub fn psi_t_mul(x: &[f64], y: &mut [f64]) {
    let mut acc = 0.0;
    for (yi, xi) in y.iter_mut().zip(x).rev() {
        acc += xi;
        *yi = acc;
    }
}

/// Cached elimination coefficients for one `(N, rho1, rho2)` triple.
#[derive(Clone, Debug)]
pub struct StructuredSolver {
    /// Modified super-diagonal of the eliminated system.
    c_prime: Vec<f64>,
    /// Reciprocal pivots.
    inv_pivot: Vec<f64>,
    /// `rho1` times the reciprocal pivots: the forward-substitution weight
    /// of the previous entry.
    carry: Vec<f64>,
}

impl StructuredSolver {
    pub fn new(n: usize, rho1: f64, rho2: f64) -> Self {
        assert!(rho1 > 0.0 && rho2 > 0.0, "structured solve needs positive penalties");
        let mut c_prime = Vec::with_capacity(n);
        let mut inv_pivot = Vec::with_capacity(n);
        let mut carry = Vec::with_capacity(n);
        let off = -rho1;
        let mut prev_c = 0.0;
        while c_prime.len() < n {
            let i = c_prime.len();
            let diag = rho2 + if i == 0 { rho1 } else { 2.0 * rho1 };
            let inv = 1.0 / (diag - off * prev_c);
            let c = off * inv;
            c_prime.push(c);
            inv_pivot.push(inv);
            carry.push(rho1 * inv);
            if i > 0 && c == prev_c {
                // the pivot recurrence reached its fixed point exactly: every
                // remaining row eliminates identically
                c_prime.resize(n, c);
                inv_pivot.resize(n, inv);
                carry.resize(n, rho1 * inv);
            }
            prev_c = c;
        }
        Self { c_prime, inv_pivot, carry }
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    /// Solve in place: `x` holds `b` on entry and the solution on exit.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.len();
        assert_eq!(x.len(), n, "right-hand side has the wrong length");
        if n == 0 {
            return;
        }
        // forward substitution on T b, forming each entry of T b on the fly
        // from a lagged copy of the previous right-hand side entry; the
        // dependency chain is one multiply-add per entry
        let (mut prev_b, mut y) = (0.0, 0.0);
        for i in 0..n {
            let cur = x[i];
            let next = if i + 1 < n { x[i + 1] } else { 0.0 };
            let diag = if i == 0 { 1.0 } else { 2.0 };
            let tb = diag * cur - prev_b - next;
            prev_b = cur;
            y = tb * self.inv_pivot[i] + self.carry[i] * y;
            x[i] = y;
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.c_prime[i] * x[i + 1];
        }
    }
}

/// Solve `(rho1 I + rho2 PsiᵀPsi) x = b`.
pub fn structured_solve(b: &[f64], rho1: f64, rho2: f64) -> Vec<f64> {
    let mut x = b.to_vec();
    StructuredSolver::new(b.len(), rho1, rho2).solve_in_place(&mut x);
    x
}
