//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
/// Off-diagonal Frobenius norm at convergence, relative to the Frobenius norm of the input.
const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;

/// Dense symmetric matrix, row-major. `entries[i][j] == entries[j][i]` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    /// Builds the matrix from its upper triangle: `f(i, j)` is called for `i <= j` only.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("symmetric matrix must have dimension >= 1"));
        }
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let x = f(i, j);
                data[i * n + j] = x;
                data[j * n + i] = x;
            }
        }
        Ok(SymmetricMatrix { n, data })
    }

    /// Rejects non-square or asymmetric input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("symmetric matrix must have dimension >= 1"));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::invalid(format!(
                "row {i} has {} entries, expected {n}",
                rows[i].len()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if rows[i][j].to_bits() != rows[j][i].to_bits() {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({i}, {j}): {} != {}",
                        rows[i][j], rows[j][i]
                    )));
                }
            }
        }
        Ok(SymmetricMatrix {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.data
            .chunks(self.n)
            .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.n)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Eigenpairs sorted by descending eigenvalue. `vectors[k]` pairs with `values[k]`,
/// has unit l2 norm, and its largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

pub fn eig_symmetric(m: &SymmetricMatrix) -> Result<EigenResult> {
    let n = m.n;
    if m.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let mut a: Vec<Vec<f64>> = m.data.chunks(n).map(<[f64]>::to_vec).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let scale = m.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut converged = scale == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        if off_diagonal_norm(&a) <= OFF_DIAGONAL_TOLERANCE * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > OFF_DIAGONAL_TOLERANCE * scale {
        return Err(Error::NumericalFailure(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]).then(i.cmp(&j)));
    let values = order.iter().map(|&k| a[k][k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut col: Vec<f64> = (0..n).map(|i| v[i][k]).collect();
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            col.iter_mut().for_each(|x| *x /= norm);
            orient(&mut col);
            col
        })
        .collect();
    Ok(EigenResult { values, vectors })
}

fn off_diagonal_norm(a: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            if i != j {
                s += x * x;
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating a[p][q]; accumulates the rotation into `v`.
fn rotate(a: &mut [Vec<f64>], v: &mut [Vec<f64>], p: usize, q: usize) {
    let apq = a[p][q];
    if apq == 0.0 {
        return;
    }
    let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.len();
    for k in 0..n {
        let (akp, akq) = (a[k][p], a[k][q]);
        a[k][p] = c * akp - s * akq;
        a[k][q] = s * akp + c * akq;
    }
    for k in 0..n {
        let (apk, aqk) = (a[p][k], a[q][k]);
        a[p][k] = c * apk - s * aqk;
        a[q][k] = s * apk + c * aqk;
    }
    a[p][q] = 0.0;
    a[q][p] = 0.0;
    for row in v.iter_mut() {
        let (vkp, vkq) = (row[p], row[q]);
        row[p] = c * vkp - s * vkq;
        row[q] = s * vkp + c * vkq;
    }
}

/// Flip so the largest-magnitude entry (first one on exact ties) is positive.
fn orient(col: &mut [f64]) {
    let mut best = 0;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.iter_mut().for_each(|x| *x = -*x);
    }
}
