//! Truncated power series in one complex variable.

use num_complex::Complex64;

pub type Series = Vec<Complex64>;

pub fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Product of two series truncated to degree `deg`.
pub fn mul(a: &[Complex64], b: &[Complex64], deg: usize) -> Series {
    let mut out = vec![zero(); deg + 1];
    for (i, ai) in a.iter().enumerate().take(deg + 1) {
        if *ai == zero() {
            continue;
        }
        for (j, bj) in b.iter().enumerate().take(deg + 1 - i) {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Horner evaluation.
pub fn eval(a: &[Complex64], z: Complex64) -> Complex64 {
    a.iter().rev().fold(zero(), |acc, c| acc * z + c)
}

/// Derivative evaluated at `z`.
pub fn eval_derivative(a: &[Complex64], z: Complex64) -> Complex64 {
    a.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(zero(), |acc, (k, c)| acc * z + c * k as f64)
}

/// Coefficients of the disc automorphism-type map `(e·ζ + w)/(1 + conj(w)·e·ζ)`
/// (with `|e| ≤ 1`, `|w| < 1`) up to degree `deg`.
pub fn mobius(w: Complex64, e: Complex64, deg: usize) -> Series {
    let mut out = vec![zero(); deg + 1];
    out[0] = w;
    let lead = (1.0 - w.norm_sqr()) * e;
    let ratio = -w.conj() * e;
    let mut p = lead;
    for c in out.iter_mut().skip(1) {
        *c = p;
        p *= ratio;
    }
    out
}

/// `exp(g)` truncated to degree `deg`, from the recurrence `k E_k = Σ j g_j E_{k−j}`.
pub fn exp(g: &[Complex64], deg: usize) -> Series {
    let mut e = vec![zero(); deg + 1];
    e[0] = g.first().copied().unwrap_or_else(zero).exp();
    for k in 1..=deg {
        let mut s = zero();
        for j in 1..=k.min(g.len().saturating_sub(1)) {
            s += g[j] * (j as f64) * e[k - j];
        }
        e[k] = s / k as f64;
    }
    e
}

/// Composition `a(b(ζ))` truncated to degree `deg` (Horner over series).
pub fn compose(a: &[Complex64], b: &[Complex64], deg: usize) -> Series {
    let mut acc: Series = vec![zero(); deg + 1];
    for c in a.iter().rev() {
        acc = mul(&acc, b, deg);
        acc[0] += c;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn mobius_series_matches_closed_form() {
        let w = c(0.3, -0.2);
        let e = c(0.6, 0.8);
        let s = mobius(w, e, 80);
        let z = c(0.4, 0.3);
        let exact = (e * z + w) / (1.0 + w.conj() * e * z);
        assert!((eval(&s, z) - exact).norm() < 1e-14);
    }

    #[test]
    fn exp_series() {
        let g = vec![c(0.1, 0.0), c(0.5, 0.2), c(-0.3, 0.0)];
        let s = exp(&g, 60);
        let z = c(0.7, -0.4);
        let exact = eval(&g, z).exp();
        assert!((eval(&s, z) - exact).norm() < 1e-13);
    }

    #[test]
    fn composition_and_derivative() {
        let a = vec![c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]; // 1 + u²
        let b = vec![c(0.0, 0.0), c(2.0, 0.0)]; // 2ζ
        let ab = compose(&a, &b, 4);
        assert_eq!(ab[0], c(1.0, 0.0));
        assert_eq!(ab[2], c(4.0, 0.0));
        assert_eq!(eval_derivative(&ab, c(0.5, 0.0)), c(4.0, 0.0));
    }
}
