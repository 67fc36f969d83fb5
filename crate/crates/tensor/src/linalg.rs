//! Batched dense linear solves with a differentiable wrapper.

use crate::error::{invalid, Result, TensorError};
use crate::tape::{bmm_raw, Var};
use crate::tensor::Tensor;

/// LU factorization with partial pivoting of one row-major `n x n` matrix.
struct Lu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut lu = a.to_vec();
        let mut piv: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for col in 0..n {
            let (p, pv) = (col..n)
                .map(|r| (r, lu[r * n + col].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pv == 0.0 || pv <= scale * 1e-300 || !pv.is_finite() {
                return None;
            }
            if p != col {
                for j in 0..n {
                    lu.swap(p * n + j, col * n + j);
                }
                piv.swap(p, col);
            }
            let d = lu[col * n + col];
            for r in col + 1..n {
                let f = lu[r * n + col] / d;
                lu[r * n + col] = f;
                if f != 0.0 {
                    for j in col + 1..n {
                        lu[r * n + j] -= f * lu[col * n + j];
                    }
                }
            }
        }
        Some(Self { n, lu, piv })
    }

    /// Solves in place for a row-major `n x k` right-hand side.
    fn solve(&self, b: &[f64], k: usize) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n * k];
        for (i, &p) in self.piv.iter().enumerate() {
            x[i * k..(i + 1) * k].copy_from_slice(&b[p * k..(p + 1) * k]);
        }
        for i in 0..n {
            for j in 0..i {
                let f = self.lu[i * n + j];
                if f != 0.0 {
                    for c in 0..k {
                        x[i * k + c] -= f * x[j * k + c];
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let f = self.lu[i * n + j];
                if f != 0.0 {
                    for c in 0..k {
                        x[i * k + c] -= f * x[j * k + c];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for c in 0..k {
                x[i * k + c] /= d;
            }
        }
        x
    }
}

fn check_shapes(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 3 || a[1] != a[2] {
        return Err(invalid("solve", format!("A must be [B,n,n], got {a:?}")));
    }
    if b.len() != 3 || b[0] != a[0] || b[1] != a[1] {
        return Err(TensorError::ShapeMismatch {
            op: "solve",
            expected: vec![a[0], a[1], b.get(2).copied().unwrap_or(1)],
            got: b.to_vec(),
        });
    }
    Ok((a[0], a[1], b[2]))
}

fn solve_raw(a: &[f64], b: &[f64], bs: usize, n: usize, k: usize, transpose: bool) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(bs * n * k);
    let mut at = vec![0.0; n * n];
    for batch in 0..bs {
        let am = &a[batch * n * n..(batch + 1) * n * n];
        let m = if transpose {
            for i in 0..n {
                for j in 0..n {
                    at[j * n + i] = am[i * n + j];
                }
            }
            &at[..]
        } else {
            am
        };
        let lu = Lu::factor(m, n).ok_or(TensorError::Singular { batch })?;
        out.extend(lu.solve(&b[batch * n * k..(batch + 1) * n * k], k));
    }
    Ok(out)
}

/// Solves `A X = B` for every batch element; `A: [B,n,n]`, `B: [B,n,k]`.
pub fn solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (bs, n, k) = check_shapes(a.shape(), b.shape())?;
    Tensor::new(vec![bs, n, k], solve_raw(a.data(), b.data(), bs, n, k, false)?)
}

impl<'t> Var<'t> {
    /// Differentiable batched solve with `self` as the system matrix.
    pub fn solve(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (bs, n, k) = check_shapes(&self.shape(), &rhs.shape())?;
        let x = self.with_value(|a| rhs.with_value(|b| solve_raw(a.data(), b.data(), bs, n, k, false)))?;
        let value = Tensor::new(vec![bs, n, k], x)?;
        Ok(self.tape().custom(
            &[self, rhs],
            value,
            Box::new(move |g, p, x| {
                // dB = A^{-T} G, dA = -dB X^T
                let gb = solve_raw(p[0].data(), g.data(), bs, n, k, true)
                    .expect("system was solvable in the forward pass");
                let ga: Vec<f64> = bmm_raw(&gb, x.data(), bs, n, k, n, false, true)
                    .into_iter()
                    .map(|v| -v)
                    .collect();
                vec![
                    Some(Tensor::new(vec![bs, n, n], ga).unwrap()),
                    Some(Tensor::new(vec![bs, n, k], gb).unwrap()),
                ]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = Tensor::new(vec![1, 2, 2], vec![0.0, 2.0, 1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1, 2, 1], vec![4.0, 3.0]).unwrap();
        let x = solve(&a, &b).unwrap();
        assert!((x.data()[0] - 1.0).abs() < 1e-15);
        assert!((x.data()[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_reports_batch() {
        let a = Tensor::new(vec![2, 1, 1], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
        assert!(matches!(solve(&a, &b), Err(TensorError::Singular { batch: 1 })));
    }
}
