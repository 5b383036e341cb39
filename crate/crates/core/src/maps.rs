//! Holomorphic maps with closed forms: ball automorphisms, disc Möbius maps
//! and the stretching biholomorphism of the stretched ball.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::domains::{DomainKind, DomainSpec};
use crate::{hdot, norm};

type C = Complex64;

/// The involutive ball automorphism `Φ_a` with `Φ_a(0) = a`, `Φ_a(a) = 0`:
/// `Φ_a(z) = (a − P_a z − s_a Q_a z) / (1 − ⟨z, a⟩)`, `s_a = √(1 − |a|²)`.
#[derive(Clone, Debug)]
pub struct BallAutomorphism {
    a: Vec<C>,
    s: f64,
    a_norm_sqr: f64,
}

impl BallAutomorphism {
    pub fn new(a: &[C]) -> Self {
        let a_norm_sqr = a.iter().map(|c| c.norm_sqr()).sum::<f64>();
        assert!(a_norm_sqr < 1.0, "automorphism centre must lie in the ball");
        Self { a: a.to_vec(), s: (1.0 - a_norm_sqr).sqrt(), a_norm_sqr }
    }

    pub fn center(&self) -> &[C] {
        &self.a
    }

    fn split(&self, v: &[C]) -> (Vec<C>, Vec<C>) {
        if self.a_norm_sqr == 0.0 {
            return (vec![C::new(0.0, 0.0); v.len()], v.to_vec());
        }
        let k = hdot(v, &self.a) / self.a_norm_sqr;
        let p: Vec<C> = self.a.iter().map(|x| x * k).collect();
        let q: Vec<C> = v.iter().zip(&p).map(|(x, y)| x - y).collect();
        (p, q)
    }

    pub fn apply(&self, z: &[C]) -> Vec<C> {
        let (p, q) = self.split(z);
        let den = C::new(1.0, 0.0) - hdot(z, &self.a);
        self.a.iter().zip(p.iter().zip(&q)).map(|(a, (pp, qq))| (a - pp - qq * self.s) / den).collect()
    }

    /// Derivative `Φ_a'(z) ξ`.
    pub fn derivative(&self, z: &[C], xi: &[C]) -> Vec<C> {
        let (pz, qz) = self.split(z);
        let (px, qx) = self.split(xi);
        let den = C::new(1.0, 0.0) - hdot(z, &self.a);
        let dden = hdot(xi, &self.a);
        self.a
            .iter()
            .enumerate()
            .map(|(j, a)| {
                let num = a - pz[j] - qz[j] * self.s;
                let dnum = -px[j] - qx[j] * self.s;
                dnum / den + num * dden / (den * den)
            })
            .collect()
    }

    /// `|det Φ_a'(a)| = (1 − |a|²)^{−(n+1)/2}`.
    pub fn jacobian_at_center(&self) -> f64 {
        (1.0 - self.a_norm_sqr).powf(-(self.a.len() as f64 + 1.0) / 2.0)
    }

    /// `|det Φ_a'(0)| = (1 − |a|²)^{(n+1)/2}`.
    pub fn jacobian_at_origin(&self) -> f64 {
        (1.0 - self.a_norm_sqr).powf((self.a.len() as f64 + 1.0) / 2.0)
    }

    /// Full Jacobian matrix at `z`.
    pub fn jacobian(&self, z: &[C]) -> DMatrix<C> {
        let n = z.len();
        let mut m = DMatrix::from_element(n, n, C::new(0.0, 0.0));
        for k in 0..n {
            let mut e = vec![C::new(0.0, 0.0); n];
            e[k] = C::new(1.0, 0.0);
            for (j, v) in self.derivative(z, &e).into_iter().enumerate() {
                m[(j, k)] = v;
            }
        }
        m
    }
}

/// Closed-form Kobayashi (= Carathéodory) metric of the unit ball:
/// `√(|ξ|²/(1 − |z|²) + |⟨ξ, z⟩|²/(1 − |z|²)²)`.
pub fn ball_metric(z: &[C], xi: &[C]) -> f64 {
    let s = 1.0 - z.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let x2 = xi.iter().map(|c| c.norm_sqr()).sum::<f64>();
    (x2 / s + hdot(xi, z).norm_sqr() / (s * s)).sqrt()
}

/// Kobayashi distance of the unit ball, `artanh |Φ_a(b)|`.
pub fn ball_distance(a: &[C], b: &[C]) -> f64 {
    let num = (1.0 - a.iter().map(|c| c.norm_sqr()).sum::<f64>()) * (1.0 - b.iter().map(|c| c.norm_sqr()).sum::<f64>());
    let den = (C::new(1.0, 0.0) - hdot(a, b)).norm_sqr();
    let rho = (1.0 - num / den).max(0.0).sqrt();
    crate::discs::artanh(rho)
}

/// For domains biholomorphic to the unit ball through a diagonal linear map
/// (the ball itself and the stretched ball), the diagonal of `Ψ` with
/// `Ψ(B) = Ω`.
pub fn ball_model_scaling(domain: &DomainSpec) -> Option<Vec<f64>> {
    match domain.kind() {
        DomainKind::Ball { n } => Some(vec![1.0; *n]),
        DomainKind::StretchedBall { stretch } => Some(vec![1.0, *stretch]),
        _ => None,
    }
}

pub fn scale(v: &[C], d: &[f64]) -> Vec<C> {
    v.iter().zip(d).map(|(x, s)| x * s).collect()
}

pub fn unscale(v: &[C], d: &[f64]) -> Vec<C> {
    v.iter().zip(d).map(|(x, s)| x / s).collect()
}

/// Disc Möbius map `u ↦ (u − w)/(1 − conj(w) u)` and its derivative.
pub fn disc_mobius(w: C, u: C) -> C {
    (u - w) / (C::new(1.0, 0.0) - w.conj() * u)
}

pub fn disc_mobius_derivative(w: C, u: C) -> C {
    let d = C::new(1.0, 0.0) - w.conj() * u;
    C::new(1.0 - w.norm_sqr(), 0.0) / (d * d)
}

pub fn det_abs(m: &DMatrix<C>) -> f64 {
    m.clone().determinant().norm()
}

/// Largest singular value of a complex matrix.
pub fn operator_norm(m: &DMatrix<C>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().cloned().fold(0.0, f64::max)
}

pub fn matvec(m: &DMatrix<C>, v: &[C]) -> Vec<C> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum()).collect()
}

pub fn unit(v: &[C]) -> Vec<C> {
    let r = norm(v);
    v.iter().map(|c| c / r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn automorphism_fixes_structure() {
        let a = vec![c(0.3, 0.1), c(-0.2, 0.4)];
        let phi = BallAutomorphism::new(&a);
        let z0 = phi.apply(&[c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(z0.iter().zip(&a).all(|(x, y)| (x - y).norm() < 1e-15));
        assert!(norm(&phi.apply(&a)) < 1e-15);
        let z = vec![c(0.1, -0.5), c(0.3, 0.2)];
        let back = phi.apply(&phi.apply(&z));
        assert!(back.iter().zip(&z).all(|(x, y)| (x - y).norm() < 1e-14));
        // sphere to sphere
        let s = unit(&[c(0.4, 0.1), c(-0.7, 0.3)]);
        assert!((norm(&phi.apply(&s)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn jacobian_determinants_against_finite_differences() {
        let a = vec![c(0.5, 0.0), c(0.0, 0.0)];
        let phi = BallAutomorphism::new(&a);
        // finite-difference Jacobian (holomorphic, so a complex step along each axis suffices)
        let h = 1e-6;
        let mut m = DMatrix::from_element(2, 2, c(0.0, 0.0));
        for k in 0..2 {
            let mut zp = a.clone();
            zp[k] += h;
            let mut zm = a.clone();
            zm[k] -= h;
            let (fp, fm) = (phi.apply(&zp), phi.apply(&zm));
            for j in 0..2 {
                m[(j, k)] = (fp[j] - fm[j]) / (2.0 * h);
            }
        }
        let fd = det_abs(&m);
        assert!((fd - 0.75f64.powf(-1.5)).abs() < 1e-7, "{fd}");
        assert!((phi.jacobian_at_center() - fd).abs() < 1e-7);
        assert!((det_abs(&phi.jacobian(&a)) - fd).abs() < 1e-7);
        assert!((det_abs(&phi.jacobian(&[c(0.0, 0.0), c(0.0, 0.0)])) - phi.jacobian_at_origin()).abs() < 1e-12);
    }

    #[test]
    fn metric_from_automorphism_pullback() {
        let z = vec![c(0.3, -0.2), c(0.1, 0.5)];
        let xi = vec![c(1.0, 0.5), c(-0.3, 0.2)];
        let phi = BallAutomorphism::new(&z);
        let pulled = norm(&phi.derivative(&z, &xi));
        assert!((pulled - ball_metric(&z, &xi)).abs() < 1e-12);
    }

    #[test]
    fn ball_distance_closed_form() {
        assert!((ball_distance(&[c(0.0, 0.0), c(0.0, 0.0)], &[c(0.5, 0.0), c(0.0, 0.0)]) - 0.5f64.atanh()).abs() < 1e-14);
        let a = [c(0.2, 0.1), c(-0.3, 0.0)];
        let b = [c(-0.1, 0.4), c(0.2, 0.2)];
        let phi = BallAutomorphism::new(&a);
        let oracle = norm(&phi.apply(&b)).atanh();
        assert!((ball_distance(&a, &b) - oracle).abs() < 1e-13);
    }
}
