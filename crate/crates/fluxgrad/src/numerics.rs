//! Small shared numerical kernels: dense solves, exact rational kernels,
//! conjugate gradients, an embedded Runge-Kutta pair, and derivative helpers.

use num_rational::Ratio;

pub type Rational = Ratio<i128>;

/// SplitMix64 mix of a base seed and a stream index. Used to derive
/// independent, order-free RNG streams for ensemble members.
pub fn derive_stream_seed(seed: u64, stream: u64) -> u64 {
    const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut z = seed ^ stream.wrapping_mul(GOLDEN_GAMMA);
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solve the dense system `a x = b` by Gaussian elimination with partial
/// pivoting. `a` is row-major, consumed as scratch. Returns `None` when the
/// matrix is numerically singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot =
            (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Reduced row echelon form of an integer matrix over the rationals.
/// Returns the pivot columns and an integer basis of the kernel
/// (each basis vector scaled to integer entries with no common factor).
pub struct RationalRref {
    pub pivot_cols: Vec<usize>,
    pub kernel: Vec<Vec<i64>>,
}

pub fn rational_rref(matrix: &[Vec<i64>], cols: usize) -> RationalRref {
    let mut m: Vec<Vec<Rational>> = matrix
        .iter()
        .map(|row| {
            assert_eq!(row.len(), cols);
            row.iter()
                .map(|&v| Rational::from_integer(v as i128))
                .collect()
        })
        .collect();
    let rows = m.len();
    let mut pivot_cols = Vec::new();
    let mut r = 0usize;
    for c in 0..cols {
        let Some(p) = (r..rows).find(|&i| m[i][c] != Rational::from_integer(0)) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c];
        for k in 0..cols {
            m[r][k] /= inv;
        }
        for i in 0..rows {
            if i != r && m[i][c] != Rational::from_integer(0) {
                let f = m[i][c];
                for k in 0..cols {
                    let sub = f * m[r][k];
                    m[i][k] -= sub;
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
        if r == rows {
            break;
        }
    }
    // Kernel: one basis vector per free column.
    let mut kernel = Vec::new();
    for &free in (0..cols)
        .filter(|c| !pivot_cols.contains(c))
        .collect::<Vec<_>>()
        .iter()
    {
        let mut v = vec![Rational::from_integer(0); cols];
        v[free] = Rational::from_integer(1);
        for (row, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = -m[row][free];
        }
        // Scale to integers.
        let denom_lcm = v
            .iter()
            .map(|q| *q.denom())
            .fold(1i128, |acc, d| acc / gcd_i128(acc, d) * d);
        let ints: Vec<i128> = v
            .iter()
            .map(|q| q.numer() * (denom_lcm / q.denom()))
            .collect();
        let g = ints.iter().fold(0i128, |acc, &x| gcd_i128(acc, x.abs()));
        let g = if g == 0 { 1 } else { g };
        kernel.push(
            ints.iter()
                .map(|&x| i64::try_from(x / g).expect("kernel entry overflow"))
                .collect(),
        );
    }
    RationalRref { pivot_cols, kernel }
}

fn gcd_i128(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    if a == 0 {
        1
    } else {
        a
    }
}

/// Least-squares solution of `A x = b` restricted to the given columns of A
/// (which must be linearly independent); the remaining entries of x are zero.
/// Returns `(x, residual_inf_norm)`.
pub fn least_squares_on_columns(
    a_columns: &[Vec<f64>],
    pivot_cols: &[usize],
    b: &[f64],
) -> (Vec<f64>, f64) {
    let n = b.len();
    let k = pivot_cols.len();
    let mut x = vec![0.0; a_columns.len()];
    if k > 0 {
        let mut gram = vec![vec![0.0; k]; k];
        let mut rhs = vec![0.0; k];
        for (i, &ci) in pivot_cols.iter().enumerate() {
            for (j, &cj) in pivot_cols.iter().enumerate() {
                gram[i][j] = dot(&a_columns[ci], &a_columns[cj]);
            }
            rhs[i] = dot(&a_columns[ci], b);
        }
        let y = solve_dense(gram, rhs).expect("pivot columns are independent");
        for (i, &ci) in pivot_cols.iter().enumerate() {
            x[ci] = y[i];
        }
    }
    let mut resid = vec![0.0; n];
    resid.copy_from_slice(b);
    for (c, col) in a_columns.iter().enumerate() {
        if x[c] != 0.0 {
            for (ri, cv) in resid.iter_mut().zip(col) {
                *ri -= x[c] * cv;
            }
        }
    }
    (x, norm_inf(&resid))
}

/// Orthonormal basis of the span of the given vectors (modified Gram-Schmidt,
/// vectors with relative norm below `tol` are dropped).
pub fn orthonormal_basis(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let scale = dot(v, v).sqrt();
        if scale == 0.0 {
            continue;
        }
        let mut u = v.clone();
        for b in &basis {
            let c = dot(&u, b);
            for (ui, bi) in u.iter_mut().zip(b) {
                *ui -= c * bi;
            }
        }
        let n = dot(&u, &u).sqrt();
        if n > tol * scale {
            for ui in u.iter_mut() {
                *ui /= n;
            }
            basis.push(u);
        }
    }
    basis
}

/// Conjugate gradients for a symmetric positive semidefinite operator given
/// as a closure. `project` is applied to keep iterates in the solvable
/// subspace (e.g. mean-zero fields on a torus). Returns the solution and the
/// final relative residual.
pub fn conjugate_gradient<A, P>(
    apply: A,
    project: P,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64)
where
    A: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&mut Vec<f64>),
{
    let n = b.len();
    let mut rhs = b.to_vec();
    project(&mut rhs);
    let b_norm = dot(&rhs, &rhs).sqrt();
    if b_norm == 0.0 {
        return (vec![0.0; n], 0.0);
    }
    let mut x = vec![0.0; n];
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for _ in 0..max_iter {
        let mut ap = apply(&p);
        project(&mut ap);
        let alpha = rs / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        if rs_new.sqrt() <= rel_tol * b_norm {
            project(&mut x);
            return (x, rs_new.sqrt() / b_norm);
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    project(&mut x);
    (x, rs.sqrt() / b_norm)
}

/// Integration failure of the adaptive Runge-Kutta driver.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t}: requested error tolerance unreachable")]
    ToleranceFailure { t: f64 },
}

// Dormand-Prince 5(4) coefficients.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand-Prince 5(4) driver. Calls `record(t, y)` at every time in
/// the sorted `record_grid` (steps are clipped to land on them exactly).
/// `admissible(y)` lets the caller reject steps leaving the feasible set.
pub fn rk45<F, G, R>(
    rhs: F,
    y0: &[f64],
    t_end: f64,
    record_grid: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    admissible: G,
    mut record: R,
) -> Result<Vec<f64>, OdeError>
where
    F: Fn(f64, &[f64], &mut [f64]),
    G: Fn(&[f64]) -> bool,
    R: FnMut(f64, &[f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut next_record = 0usize;
    while next_record < record_grid.len() && record_grid[next_record] <= t {
        record(record_grid[next_record], &y);
        next_record += 1;
    }
    let mut h = (t_end / 100.0).min(1e-2).max(1e-8);
    let mut k = vec![vec![0.0; n]; 7];
    let mut y_stage = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let h_min = 1e-14 * t_end.max(1.0);
    while t < t_end {
        let mut target = t_end;
        if next_record < record_grid.len() {
            target = target.min(record_grid[next_record]);
        }
        // Clip onto record times; on acceptance of a clipped step, snap t to
        // the target so round-off cannot leave an un-advanceable sliver.
        let clipped = t + h >= target;
        if clipped {
            h = target - t;
        }
        // Stages.
        rhs(t, &y, &mut k[0]);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = DP_A[s][j];
                    if a != 0.0 {
                        acc += h * a * kj[i];
                    }
                }
                y_stage[i] = acc;
            }
            let (_, tail) = k.split_at_mut(s);
            rhs(t + DP_C[s] * h, &y_stage, &mut tail[0]);
        }
        let mut err = 0.0f64;
        for i in 0..n {
            let mut v5 = y[i];
            let mut v4 = y[i];
            for s in 0..7 {
                v5 += h * DP_B5[s] * k[s][i];
                v4 += h * DP_B4[s] * k[s][i];
            }
            y5[i] = v5;
            let scale = abs_tol + rel_tol * y[i].abs().max(v5.abs());
            let e = (v5 - v4) / scale;
            err += e * e;
        }
        err = (err / n as f64).sqrt();
        let ok = err <= 1.0 && admissible(&y5);
        if ok {
            t = if clipped { target } else { t + h };
            y.copy_from_slice(&y5);
            while next_record < record_grid.len() && record_grid[next_record] <= t {
                record(record_grid[next_record], &y);
                next_record += 1;
            }
        }
        let factor = if err > 0.0 {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= if ok { factor } else { factor.min(0.5) };
        if h < h_min && t < t_end {
            return Err(OdeError::ToleranceFailure { t });
        }
    }
    Ok(y)
}

/// Central finite-difference gradient with one Richardson extrapolation step
/// (h and h/2 stencils combined to cancel the leading error term).
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut xp = x.to_vec();
    for i in 0..n {
        let base = x[i];
        let mut central = |step: f64| {
            xp[i] = base + step;
            let fp = f(&xp);
            xp[i] = base - step;
            let fm = f(&xp);
            xp[i] = base;
            (fp - fm) / (2.0 * step)
        };
        let d_h = central(h);
        let d_h2 = central(h / 2.0);
        g[i] = (4.0 * d_h2 - d_h) / 3.0;
    }
    g
}

/// Golden-section minimization of a unimodal function on [a, b].
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}
