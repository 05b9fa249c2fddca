//! Matrix exponential `exp(dt·A)`.
//!
//! The model only ever needs the diagonal case, which is elementwise. The dense
//! path (scaling and squaring around a degree-13 Padé approximant) is kept as an
//! independent reference for tests.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Generator of a linear flow: either a diagonal (stored as its entries) or a
/// dense square matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    Diagonal(Vec<f64>),
    Dense(Tensor),
}

/// `exp(dt·A)` for either representation. The result has the same form as the input.
pub fn matexp(a: &Generator, dt: f64) -> Result<Generator> {
    check_dt(dt)?;
    match a {
        Generator::Diagonal(d) => Ok(Generator::Diagonal(diag_exp(d, dt))),
        Generator::Dense(m) => Ok(Generator::Dense(expm_dense(&m.scale(dt))?)),
    }
}

pub(crate) fn check_dt(dt: f64) -> Result<()> {
    if !dt.is_finite() {
        return Err(Error::NonFinite(format!("time step {dt}")));
    }
    if dt < 0.0 {
        return Err(Error::Domain(format!("time step must be >= 0, got {dt}")));
    }
    Ok(())
}

/// Elementwise `exp(dt·aᵢ)`.
pub fn diag_exp(diag: &[f64], dt: f64) -> Vec<f64> {
    diag.iter().map(|a| (dt * a).exp()).collect()
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

/// Dense `exp(M)` by scaling and squaring with a [13/13] Padé approximant.
pub fn expm_dense(m: &Tensor) -> Result<Tensor> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Shape(format!("expm needs a square matrix, got {:?}", m.shape())));
    }
    m.ensure_finite("expm input")?;
    if n == 0 {
        return Ok(Tensor::zeros(0, 0));
    }
    let norm1 = (0..n)
        .map(|c| (0..n).map(|r| m.get(r, c).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = m.scale(0.5f64.powi(squarings));
    let id = Tensor::identity(n);
    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    let b = &PADE13;

    let lin = |terms: &[(f64, &Tensor)]| -> Tensor {
        let mut out = Tensor::zeros(n, n);
        for (c, t) in terms {
            out.add_assign(&t.scale(*c));
        }
        out
    };

    let u_inner = a6.matmul(&lin(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)]));
    let mut u_sum = lin(&[(b[7], &a6), (b[5], &a4), (b[3], &a2), (b[1], &id)]);
    u_sum.add_assign(&u_inner);
    let u = a.matmul(&u_sum);

    let mut v = a6.matmul(&lin(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)]));
    v.add_assign(&lin(&[(b[6], &a6), (b[4], &a4), (b[2], &a2), (b[0], &id)]));

    let p = v.zip_map(&u, |x, y| x + y);
    let q = v.zip_map(&u, |x, y| x - y);
    let mut r = solve(&q, &p)?;
    for _ in 0..squarings {
        r = r.matmul(&r);
    }
    Ok(r)
}

/// Solve `A X = B` by LU with partial pivoting.
fn solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    let m = b.cols();
    let mut lu = a.clone();
    let mut x = b.clone();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| lu.get(i, k).abs().total_cmp(&lu.get(j, k).abs()))
            .expect("non-empty");
        if lu.get(piv, k).abs() < 1e-300 {
            return Err(Error::NonFinite("singular Padé denominator".into()));
        }
        if piv != k {
            for c in 0..n {
                let t = lu.get(k, c);
                lu.set(k, c, lu.get(piv, c));
                lu.set(piv, c, t);
            }
            for c in 0..m {
                let t = x.get(k, c);
                x.set(k, c, x.get(piv, c));
                x.set(piv, c, t);
            }
        }
        let d = lu.get(k, k);
        for i in k + 1..n {
            let f = lu.get(i, k) / d;
            if f == 0.0 {
                continue;
            }
            for c in k..n {
                lu.set(i, c, lu.get(i, c) - f * lu.get(k, c));
            }
            for c in 0..m {
                x.set(i, c, x.get(i, c) - f * x.get(k, c));
            }
        }
    }
    for k in (0..n).rev() {
        let d = lu.get(k, k);
        for c in 0..m {
            let mut s = x.get(k, c);
            for j in k + 1..n {
                s -= lu.get(k, j) * x.get(j, c);
            }
            x.set(k, c, s / d);
        }
    }
    Ok(x)
}

/// Embed a diagonal as a dense matrix.
pub fn diag_matrix(diag: &[f64]) -> Tensor {
    let n = diag.len();
    let mut t = Tensor::zeros(n, n);
    for (i, v) in diag.iter().enumerate() {
        t.set(i, i, *v);
    }
    t
}
