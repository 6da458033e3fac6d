//! Eigenvalues of a general real matrix: balancing, Householder reduction
//! to Hessenberg form, then Francis double-shift QR (the classic hqr
//! routine). Eigenvalues only; this backs spectral-radius and gap
//! computations for non-normal attention matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Complex eigenvalues `(re, im)` of a square real matrix, in no particular
/// order.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let n = a.nrows();
    if a.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues needs a square nonempty matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 1 {
        return Ok(vec![(a[(0, 0)], 0.0)]);
    }
    let mut h = a.clone();
    balance(&mut h);
    hessenberg(&mut h);
    francis_qr(&mut h)
}

/// Moduli of the eigenvalues, descending.
pub fn eigenvalue_moduli_desc(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut m: Vec<f64> = eigenvalues(a)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .collect();
    m.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(m)
}

/// Similarity scaling to balance row and column norms (improves QR
/// accuracy; eigenvalues are untouched).
fn balance(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    const RADIX: f64 = 2.0;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                let mut c2 = c;
                while c2 < g {
                    f *= RADIX;
                    c2 *= RADIX * RADIX;
                }
                g = r * RADIX;
                while c2 > g {
                    f /= RADIX;
                    c2 /= RADIX * RADIX;
                }
                if (c2 + r) / f < 0.95 * s {
                    done = false;
                    let ginv = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= ginv;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Householder reduction to upper Hessenberg form (in place).
fn hessenberg(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for m in 1..n.saturating_sub(1) {
        let mut x = 0.0f64;
        let mut i_max = m;
        for i in m..n {
            if a[(i, m - 1)].abs() > x.abs() {
                x = a[(i, m - 1)];
                i_max = i;
            }
        }
        if i_max != m {
            for j in (m - 1)..n {
                a.swap((i_max, j), (m, j));
            }
            for j in 0..n {
                a.swap((j, i_max), (j, m));
            }
        }
        if x != 0.0 {
            for i in (m + 1)..n {
                let mut y = a[(i, m - 1)];
                if y != 0.0 {
                    y /= x;
                    a[(i, m - 1)] = y;
                    for j in m..n {
                        let t = a[(m, j)] * y;
                        a[(i, j)] -= t;
                    }
                    for j in 0..n {
                        let t = a[(j, i)] * y;
                        a[(j, m)] += t;
                    }
                }
            }
        }
    }
    // Zero the sub-Hessenberg fill-in left by the elimination records.
    for i in 2..n {
        for j in 0..(i - 1) {
            a[(i, j)] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix; returns all
/// eigenvalues as `(re, im)` pairs.
fn francis_qr(a: &mut DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let n = a.nrows();
    let mut out = Vec::with_capacity(n);
    let mut anorm = 0.0f64;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }
    if anorm == 0.0 {
        return Ok(vec![(0.0, 0.0); n]);
    }
    let sign = |a: f64, b: f64| if b >= 0.0 { a.abs() } else { -a.abs() };
    let mut nn = n - 1;
    let mut t = 0.0f64;
    'outer: loop {
        let mut its = 0usize;
        loop {
            // Find the smallest l with a negligible subdiagonal entry.
            let mut l = nn;
            while l >= 1 {
                let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[(l, l - 1)].abs() <= f64::EPSILON * s {
                    a[(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[(nn, nn)];
            if l == nn {
                // One real root deflates.
                out.push((x + t, 0.0));
                if nn == 0 {
                    break 'outer;
                }
                nn -= 1;
                break;
            }
            let mut y = a[(nn - 1, nn - 1)];
            let mut w = a[(nn, nn - 1)] * a[(nn - 1, nn)];
            if l == nn - 1 {
                // A 2x2 block deflates: real pair or conjugate pair.
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    let z = p + sign(z, p);
                    let first = x + z;
                    let second = if z != 0.0 { x - w / z } else { first };
                    out.push((first, 0.0));
                    out.push((second, 0.0));
                } else {
                    out.push((x + p, z));
                    out.push((x + p, -z));
                }
                if nn <= 1 {
                    break 'outer;
                }
                nn -= 2;
                break;
            }
            // No deflation: one double-shift iteration.
            if its == 60 {
                return Err(Error::NumericalDegeneracy(
                    "QR iteration failed to converge".into(),
                ));
            }
            if its == 10 || its == 20 {
                // Exceptional shift against stagnation.
                t += x;
                for i in 0..=nn {
                    a[(i, i)] -= x;
                }
                let s = a[(nn, nn - 1)].abs() + a[(nn - 1, nn - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            // Look for two consecutive small subdiagonal elements.
            let mut m = nn - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
                q = a[(m + 1, m + 1)] - z - rr - ss;
                r = a[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs()
                    * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                if u <= f64::EPSILON * v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                a[(i, i - 2)] = 0.0;
                if i != m + 2 {
                    a[(i, i - 3)] = 0.0;
                }
            }
            // Double QR step: chase the bulge from m down to nn-1.
            for k in m..nn {
                if k != m {
                    p = a[(k, k - 1)];
                    q = a[(k + 1, k - 1)];
                    r = if k + 1 != nn { a[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        a[(k, k - 1)] = -a[(k, k - 1)];
                    }
                } else {
                    a[(k, k - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                // Row modification.
                for j in k..=nn {
                    let mut pj = a[(k, j)] + q * a[(k + 1, j)];
                    if k + 1 != nn {
                        pj += r * a[(k + 2, j)];
                        a[(k + 2, j)] -= pj * z;
                    }
                    a[(k + 1, j)] -= pj * y;
                    a[(k, j)] -= pj * x;
                }
                // Column modification.
                let mmin = if nn < k + 3 { nn } else { k + 3 };
                for i in l..=mmin {
                    let mut pi = x * a[(i, k)] + y * a[(i, k + 1)];
                    if k + 1 != nn {
                        pi += z * a[(i, k + 2)];
                        a[(i, k + 2)] -= pi * r;
                    }
                    a[(i, k + 1)] -= pi * q;
                    a[(i, k)] -= pi;
                }
            }
        }
    }
    Ok(out)
}
