//! Small dense linear algebra: row-major matrices, the text matrix format,
//! and power iteration for extreme eigenvalues.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Parse(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Self::from_row_major(n, data)
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::Parse(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut data = vec![0.0; n * n];
        for (i, &v) in d.iter().enumerate() {
            data[i * n + i] = v;
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec(x, &mut out);
        out
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
        (0..self.n).all(|i| {
            (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= rel_tol * scale)
        })
    }

    /// Parses the text format: a header line `N N`, then `N` rows of `N`
    /// whitespace-separated scalars. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header token {t:?}"))))
            .collect::<Result<_>>()?;
        if dims.len() != 2 || dims[0] != dims[1] {
            return Err(Error::Parse(format!("header must be `N N`, got {header:?}")));
        }
        let n = dims[0];
        let mut rows = Vec::with_capacity(n);
        for line in lines {
            rows.push(parse_floats(line)?);
        }
        if rows.len() != n {
            return Err(Error::Parse(format!("expected {n} rows, got {}", rows.len())));
        }
        Self::from_rows(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.n);
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }
}

pub(crate) fn parse_floats(text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number {t:?}")))
        })
        .collect()
}

/// Whitespace-separated scalars (any line layout, `#` comments allowed).
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let cleaned: String = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join(" ");
    let v = parse_floats(&cleaned)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector file"));
    }
    Ok(v)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Result of a power iteration: dominant eigenvalue estimate and vector.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Power iteration on a linear map given as a closure `y = f(x)`. Returns the
/// eigenvalue of largest modulus (as a signed Rayleigh quotient).
pub fn power_iteration<F>(n: usize, mut apply: F, tol: f64, max_iter: usize) -> Eigenpair
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ed0f_e16e);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut x);
    let mut y = vec![0.0; n];
    let mut value = 0.0;
    for _ in 0..max_iter {
        apply(&x, &mut y);
        let rayleigh = dot(&x, &y);
        let ny = dot(&y, &y).sqrt();
        if ny == 0.0 {
            return Eigenpair { value: 0.0, vector: x };
        }
        // residual of the eigen-equation measures convergence even when
        // the two leading moduli are close
        let resid: f64 = y
            .iter()
            .zip(&x)
            .map(|(yi, xi)| (yi - rayleigh * xi).powi(2))
            .sum::<f64>()
            .sqrt();
        let stalled = (rayleigh - value).abs() <= 1e-15 * rayleigh.abs();
        value = rayleigh;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ny;
        }
        if resid <= tol * ny.max(1e-300) || stalled {
            break;
        }
    }
    Eigenpair { value, vector: x }
}

fn normalize(x: &mut [f64]) {
    let n = dot(x, x).sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// Largest eigenvalue of a symmetric matrix together with its eigenvector.
pub fn lambda_max(a: &DenseMatrix) -> Eigenpair {
    // shift by the Gershgorin bound so the top of the spectrum dominates in modulus
    let shift = gershgorin_radius(a);
    let mut pair = power_iteration(
        a.n(),
        |x, y| {
            a.matvec(x, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += shift * xi;
            }
        },
        1e-12,
        200_000,
    );
    pair.value -= shift;
    pair
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(a: &DenseMatrix) -> f64 {
    let shift = gershgorin_radius(a);
    let pair = power_iteration(
        a.n(),
        |x, y| {
            a.matvec(x, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = shift * xi - *yi;
            }
        },
        1e-12,
        200_000,
    );
    shift - pair.value
}

fn gershgorin_radius(a: &DenseMatrix) -> f64 {
    (0..a.n())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
