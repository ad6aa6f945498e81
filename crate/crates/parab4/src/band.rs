//! Banded linear solvers: LU with partial pivoting (LAPACK gbtrf-style
//! storage) and a banded Cholesky for SPD normal systems. The implicit
//! time stepper factors its operator once and reuses the factorization
//! across all steps.

use crate::error::{Error, Result};

/// General banded matrix with `kl` subdiagonals and `ku` superdiagonals.
/// Storage keeps `kl` extra superdiagonals for pivoting fill.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    ldab: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
        }
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.kl as i64 + self.ku as i64 + i as i64 - j as i64;
        if r < self.kl as i64 || r >= self.ldab as i64 {
            return None;
        }
        Some(j * self.ldab + r as usize)
    }

    #[inline]
    fn offset_fill(&self, i: usize, j: usize) -> Option<usize> {
        // same as `offset` but admits the fill superdiagonals
        let r = self.kl as i64 + self.ku as i64 + i as i64 - j as i64;
        if r < 0 || r >= self.ldab as i64 {
            return None;
        }
        Some(j * self.ldab + r as usize)
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let o = self
            .offset(i, j)
            .unwrap_or_else(|| panic!("entry ({i},{j}) outside band kl={} ku={}", self.kl, self.ku));
        self.ab[o] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let o = self
            .offset(i, j)
            .unwrap_or_else(|| panic!("entry ({i},{j}) outside band kl={} ku={}", self.kl, self.ku));
        self.ab[o] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.offset(i, j) {
            Some(o) => self.ab[o],
            None => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let ilo = j.saturating_sub(self.ku);
            let ihi = (j + self.kl).min(self.n - 1);
            for i in ilo..=ihi {
                y[i] += self.get(i, j) * x[j];
            }
        }
        y
    }

    /// Factor in place with partial pivoting.
    pub fn lu(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // pivot search in column j
            let mut jp = 0;
            let mut best = 0.0f64;
            for i in 0..=km {
                let v = self.ab[self.offset_fill(j + i, j).unwrap()].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(Error::SolverFailure(format!(
                    "banded LU: zero pivot at column {j}"
                )));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for jj in j..=ju {
                    let a = self.offset_fill(j + jp, jj).unwrap();
                    let b = self.offset_fill(j, jj).unwrap();
                    self.ab.swap(a, b);
                }
            }
            if km > 0 {
                let piv = self.ab[self.offset_fill(j, j).unwrap()];
                for i in 1..=km {
                    let o = self.offset_fill(j + i, j).unwrap();
                    self.ab[o] /= piv;
                }
                for jj in (j + 1)..=ju {
                    let t = self.ab[self.offset_fill(j, jj).unwrap()];
                    if t != 0.0 {
                        for i in 1..=km {
                            let m = self.ab[self.offset_fill(j + i, j).unwrap()];
                            let o = self.offset_fill(j + i, jj).unwrap();
                            self.ab[o] -= m * t;
                        }
                    }
                }
            }
        }
        Ok(BandLu { mat: self, ipiv })
    }
}

/// Factored banded matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    mat: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.mat.n;
        debug_assert_eq!(b.len(), n);
        let kl = self.mat.kl;
        let ku = self.mat.ku;
        // L solve with row interchanges
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != 0.0 {
                let km = kl.min(n - 1 - j);
                for i in 1..=km {
                    b[j + i] -= self.mat.ab[self.mat.offset_fill(j + i, j).unwrap()] * bj;
                }
            }
        }
        // U solve (bandwidth ku + kl from fill)
        let ubw = ku + kl;
        for j in (0..n).rev() {
            b[j] /= self.mat.ab[self.mat.offset_fill(j, j).unwrap()];
            let bj = b[j];
            if bj != 0.0 {
                let ilo = j.saturating_sub(ubw);
                for i in ilo..j {
                    b[i] -= self.mat.ab[self.mat.offset_fill(i, j).unwrap()] * bj;
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Symmetric positive definite banded matrix, lower storage with
/// bandwidth `kb` (number of subdiagonals).
#[derive(Debug, Clone)]
pub struct SpdBandMatrix {
    pub n: usize,
    pub kb: usize,
    ab: Vec<f64>, // a(i,j) for 0 <= i-j <= kb at ab[j*(kb+1) + (i-j)]
}

impl SpdBandMatrix {
    pub fn zeros(n: usize, kb: usize) -> Self {
        SpdBandMatrix {
            n,
            kb,
            ab: vec![0.0; n * (kb + 1)],
        }
    }

    #[inline]
    fn off(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j && i - j <= self.kb);
        j * (self.kb + 1) + (i - j)
    }

    /// Accumulate into the lower triangle; `(i, j)` is symmetrized.
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(
            i - j <= self.kb,
            "entry ({i},{j}) outside bandwidth {}",
            self.kb
        );
        let o = self.off(i, j);
        self.ab[o] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.kb {
            return 0.0;
        }
        self.ab[self.off(i, j)]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let ihi = (j + self.kb).min(self.n - 1);
            y[j] += self.get(j, j) * x[j];
            for i in (j + 1)..=ihi {
                let v = self.ab[self.off(i, j)];
                y[i] += v * x[j];
                y[j] += v * x[i];
            }
        }
        y
    }

    /// In-place banded Cholesky, `A = L L^T`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let n = self.n;
        let kb = self.kb;
        for j in 0..n {
            let o = self.off(j, j);
            let d = self.ab[o];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SolverFailure(format!(
                    "banded Cholesky: non-positive pivot {d} at column {j}"
                )));
            }
            let l = d.sqrt();
            self.ab[o] = l;
            let ihi = (j + kb).min(n - 1);
            for i in (j + 1)..=ihi {
                let o = self.off(i, j);
                self.ab[o] /= l;
            }
            for k in (j + 1)..=ihi {
                let ljk = self.ab[self.off(k, j)];
                if ljk != 0.0 {
                    for i in k..=ihi {
                        let lij = self.ab[self.off(i, j)];
                        let o = self.off(i, k);
                        self.ab[o] -= lij * ljk;
                    }
                }
            }
        }
        Ok(BandCholesky { mat: self })
    }
}

impl SpdBandMatrix {
    /// Solve `A x = b` for a severely graded SPD system: symmetric
    /// Jacobi equilibration (unit diagonal), a uniform 1e-12 pivot
    /// floor against elimination round-off, Cholesky, and a few steps
    /// of iterative refinement against the unscaled matrix.
    pub fn solve_equilibrated(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let kb = self.kb;
        let scale: Vec<f64> = (0..n)
            .map(|j| {
                let d = self.get(j, j);
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut scaled = SpdBandMatrix::zeros(n, kb);
        for j in 0..n {
            for i in j..=(j + kb).min(n - 1) {
                let v = self.get(i, j);
                if v != 0.0 {
                    scaled.add_sym(i, j, v * scale[i] * scale[j]);
                }
            }
        }
        for j in 0..n {
            scaled.add_sym(j, j, 1e-12);
        }
        let chol = scaled.cholesky()?;
        let solve_once = |b: &[f64]| -> Vec<f64> {
            let mut y: Vec<f64> = (0..n).map(|j| b[j] * scale[j]).collect();
            chol.solve_in_place(&mut y);
            for j in 0..n {
                y[j] *= scale[j];
            }
            y
        };
        let mut x = solve_once(rhs);
        for _ in 0..3 {
            let ax = self.matvec(&x);
            let r: Vec<f64> = rhs.iter().zip(ax.iter()).map(|(b, a)| b - a).collect();
            let dx = solve_once(&r);
            for j in 0..n {
                x[j] += dx[j];
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    mat: SpdBandMatrix,
}

impl BandCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.mat.n;
        let kb = self.mat.kb;
        // forward: L y = b
        for j in 0..n {
            b[j] /= self.mat.ab[self.mat.off(j, j)];
            let bj = b[j];
            if bj != 0.0 {
                let ihi = (j + kb).min(n - 1);
                for i in (j + 1)..=ihi {
                    b[i] -= self.mat.ab[self.mat.off(i, j)] * bj;
                }
            }
        }
        // backward: L^T x = y
        for j in (0..n).rev() {
            let ihi = (j + kb).min(n - 1);
            let mut acc = b[j];
            for i in (j + 1)..=ihi {
                acc -= self.mat.ab[self.mat.off(i, j)] * b[i];
            }
            b[j] = acc / self.mat.ab[self.mat.off(j, j)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
