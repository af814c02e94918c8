//! Symmetric positive-definite Hessians of the joint density in latent
//! coordinates, stored in block-arrow form:
//!
//! ```text
//! H = | A  B |   A = diag(A_1, ..., A_m)   (one s x s block per primary group)
//!     | B' C |   C dense (secondary coordinates)
//! ```
//!
//! Factorization uses the Schur complement `S = C - B' A^{-1} B`, so
//! `log det H = sum_g log det A_g + log det S`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// In-place lower Cholesky of a row-major `n x n` matrix. Only the lower
/// triangle is read; the upper triangle is zeroed.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numerical(format!("non-positive pivot {d:e} at position {j}")));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L x = b` in place.
fn forward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L' x = b` in place.
fn backward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn log_diag(l: &[f64], n: usize) -> f64 {
    2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
}

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
/// Errors when a pivot is not positive.
pub fn logdet_psd(h: &DMatrix<f64>) -> Result<f64> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Dimension("matrix must be square".into()));
    }
    let mut a: Vec<f64> = (0..n * n).map(|k| h[(k / n, k % n)]).collect();
    cholesky_in_place(&mut a, n)?;
    Ok(log_diag(&a, n))
}

#[derive(Debug, Clone)]
pub struct BlockHessian {
    pub(crate) m: usize,
    pub(crate) s: usize,
    pub(crate) nc: usize,
    /// `m` row-major `s x s` blocks.
    pub(crate) a: Vec<f64>,
    /// `m` row-major `s x nc` blocks.
    pub(crate) b: Vec<f64>,
    /// Row-major `nc x nc`.
    pub(crate) c: Vec<f64>,
}

impl BlockHessian {
    pub fn zeros(m: usize, s: usize, nc: usize) -> Self {
        Self {
            m,
            s,
            nc,
            a: vec![0.0; m * s * s],
            b: vec![0.0; m * s * nc],
            c: vec![0.0; nc * nc],
        }
    }

    pub fn dim(&self) -> usize {
        self.m * self.s + self.nc
    }

    pub(crate) fn clear(&mut self) {
        self.a.iter_mut().for_each(|v| *v = 0.0);
        self.b.iter_mut().for_each(|v| *v = 0.0);
        self.c.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `w` to entry `(i, j)` given in global coordinates. Callers add
    /// both `(i, j)` and `(j, i)`. Entries coupling two different primary
    /// blocks must not occur.
    #[inline]
    pub(crate) fn add(&mut self, i: usize, j: usize, w: f64) {
        let base = self.m * self.s;
        match (i < base, j < base) {
            (true, true) => {
                let g = i / self.s;
                debug_assert_eq!(g, j / self.s);
                let (li, lj) = (i % self.s, j % self.s);
                self.a[g * self.s * self.s + li * self.s + lj] += w;
            }
            (true, false) => {
                let g = i / self.s;
                self.b[g * self.s * self.nc + (i % self.s) * self.nc + (j - base)] += w;
            }
            // The coupling block is stored once, as `B`; its mirror is implied.
            (false, true) => {}
            (false, false) => self.c[(i - base) * self.nc + (j - base)] += w,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let base = self.m * self.s;
        match (i < base, j < base) {
            (true, true) => {
                let g = i / self.s;
                if g != j / self.s {
                    0.0
                } else {
                    self.a[g * self.s * self.s + (i % self.s) * self.s + (j % self.s)]
                }
            }
            (true, false) => self.b[(i / self.s) * self.s * self.nc + (i % self.s) * self.nc + (j - base)],
            (false, true) => self.b[(j / self.s) * self.s * self.nc + (j % self.s) * self.nc + (i - base)],
            (false, false) => self.c[(i - base) * self.nc + (j - base)],
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }

    pub fn factor(&self) -> Result<BlockFactor> {
        let (m, s, nc) = (self.m, self.s, self.nc);
        let mut la = self.a.clone();
        let mut w = self.b.clone();
        let mut schur = self.c.clone();
        let mut logdet = 0.0;
        let mut col = vec![0.0; s];
        for g in 0..m {
            let blk = &mut la[g * s * s..(g + 1) * s * s];
            cholesky_in_place(blk, s)?;
            logdet += log_diag(blk, s);
            if nc == 0 {
                continue;
            }
            let wg = &mut w[g * s * nc..(g + 1) * s * nc];
            // W_g = L_g^{-1} B_g, column by column.
            for j in 0..nc {
                for r in 0..s {
                    col[r] = wg[r * nc + j];
                }
                forward(blk, s, &mut col);
                for r in 0..s {
                    wg[r * nc + j] = col[r];
                }
            }
            // S -= W_g' W_g (lower triangle).
            for r in 0..s {
                let row = &wg[r * nc..(r + 1) * nc];
                for i in 0..nc {
                    let wi = row[i];
                    if wi == 0.0 {
                        continue;
                    }
                    let srow = &mut schur[i * nc..i * nc + i + 1];
                    for (sv, wj) in srow.iter_mut().zip(&row[..=i]) {
                        *sv -= wi * wj;
                    }
                }
            }
        }
        cholesky_in_place(&mut schur, nc)?;
        logdet += log_diag(&schur, nc);
        Ok(BlockFactor {
            m,
            s,
            nc,
            la,
            w,
            ls: schur,
            logdet,
        })
    }
}

/// Cholesky factorization of a [`BlockHessian`].
#[derive(Debug, Clone)]
pub struct BlockFactor {
    m: usize,
    s: usize,
    nc: usize,
    la: Vec<f64>,
    w: Vec<f64>,
    ls: Vec<f64>,
    logdet: f64,
}

impl BlockFactor {
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Solves `H x = r`.
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        let (m, s, nc) = (self.m, self.s, self.nc);
        let base = m * s;
        let mut x = r.to_vec();
        for g in 0..m {
            forward(&self.la[g * s * s..(g + 1) * s * s], s, &mut x[g * s..(g + 1) * s]);
        }
        if nc > 0 {
            let (ya, rc) = x.split_at_mut(base);
            for g in 0..m {
                let wg = &self.w[g * s * nc..(g + 1) * s * nc];
                for r in 0..s {
                    let yr = ya[g * s + r];
                    if yr == 0.0 {
                        continue;
                    }
                    for (c, wv) in rc.iter_mut().zip(&wg[r * nc..(r + 1) * nc]) {
                        *c -= wv * yr;
                    }
                }
            }
            forward(&self.ls, nc, rc);
            backward(&self.ls, nc, rc);
            for g in 0..m {
                let wg = &self.w[g * s * nc..(g + 1) * s * nc];
                for r in 0..s {
                    let dot: f64 = wg[r * nc..(r + 1) * nc].iter().zip(rc.iter()).map(|(a, b)| a * b).sum();
                    ya[g * s + r] -= dot;
                }
            }
        }
        for g in 0..m {
            backward(&self.la[g * s * s..(g + 1) * s * s], s, &mut x[g * s..(g + 1) * s]);
        }
        x
    }

    /// Dense inverse, column by column.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.m * self.s + self.nc;
        let mut inv = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}
