//! One-variable `∂̄` machinery: a radial cutoff, the right-hand side of the
//! cutoff correction, and the Cauchy transform
//! `u(z) = −(1/π) ∬ τ(ξ)/(ξ − z) dA(ξ)`, which solves `∂u/∂z̄ = τ` for
//! compactly supported `τ`. Sums over the grid are FFT convolutions.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

type C = Complex64;

/// Samples on the square grid `origin + h (i + i·j)`, `0 ≤ i, j < size`,
/// stored row by row (`values[j * size + i]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub size: usize,
    pub spacing: f64,
    pub origin: C,
    pub values: Vec<C>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub size: usize,
    pub spacing: f64,
    pub origin: [f64; 2],
}

impl GridField {
    /// Square grid of `size²` cell centres covering `[c − half, c + half]²`.
    pub fn centred(center: C, half_width: f64, size: usize) -> Self {
        let h = 2.0 * half_width / size as f64;
        let origin = center - C::new(half_width - 0.5 * h, half_width - 0.5 * h);
        Self { size, spacing: h, origin, values: vec![C::new(0.0, 0.0); size * size] }
    }

    pub fn point(&self, i: usize, j: usize) -> C {
        self.origin + C::new(i as f64, j as f64) * self.spacing
    }

    pub fn sample<F: Fn(C) -> C>(&self, f: F) -> Self {
        let mut out = self.clone();
        for j in 0..self.size {
            for i in 0..self.size {
                out.values[j * self.size + i] = f(self.point(i, j));
            }
        }
        out
    }

    pub fn at(&self, i: usize, j: usize) -> C {
        self.values[j * self.size + i]
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn l2(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.spacing * self.spacing).sqrt()
    }

    pub fn header(&self) -> GridHeader {
        GridHeader { size: self.size, spacing: self.spacing, origin: [self.origin.re, self.origin.im] }
    }

    /// One `re,im` line per cell, in storage order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re,im\n");
        for v in &self.values {
            out.push_str(&format!("{},{}\n", v.re, v.im));
        }
        out
    }

    /// Centred-difference `∂/∂z̄` and `∂/∂z` on interior cells (zero on the rim).
    pub fn wirtinger(&self) -> (Self, Self) {
        let (n, h) = (self.size, self.spacing);
        let mut dbar = self.clone();
        let mut d = self.clone();
        dbar.values.iter_mut().for_each(|v| *v = C::new(0.0, 0.0));
        d.values.iter_mut().for_each(|v| *v = C::new(0.0, 0.0));
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let ux = (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * h);
                let uy = (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * h);
                dbar.values[j * n + i] = 0.5 * (ux + C::i() * uy);
                d.values[j * n + i] = 0.5 * (ux - C::i() * uy);
            }
        }
        (dbar, d)
    }

    /// Largest centred-difference gradient length `√(|u_x|² + |u_y|²)`.
    pub fn sup_gradient(&self) -> f64 {
        let (dbar, d) = self.wirtinger();
        // |u_x|² + |u_y|² = 2(|∂u|² + |∂̄u|²)
        dbar.values.iter().zip(&d.values).map(|(a, b)| (2.0 * (a.norm_sqr() + b.norm_sqr())).sqrt()).fold(0.0, f64::max)
    }
}

/// Radial cutoff `γ(z) = q(|z − c|/r)`: 1 on the disc of radius `r/2`, 0
/// outside radius `r`, joined by the quintic smoothstep (C²).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub center: C,
    pub radius: f64,
}

/// `max |q'|` over the bridge; `|∇γ| ≤ GRADIENT_CONSTANT / r`.
pub const GRADIENT_CONSTANT: f64 = 3.75;

pub fn build_cutoff(center: C, radius: f64) -> Result<CutoffSpec> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("cutoff radius must be positive, got {radius}")));
    }
    Ok(CutoffSpec { center, radius })
}

impl CutoffSpec {
    fn profile(t: f64) -> (f64, f64) {
        if t <= 0.5 {
            return (1.0, 0.0);
        }
        if t >= 1.0 {
            return (0.0, 0.0);
        }
        let s = 2.0 * t - 1.0;
        let smooth = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        let slope = 30.0 * s * s * (1.0 - s) * (1.0 - s);
        (1.0 - smooth, -2.0 * slope)
    }

    pub fn value(&self, z: C) -> f64 {
        Self::profile((z - self.center).norm() / self.radius).0
    }

    /// `∂γ/∂z̄ = q'(t)/(2r) · (z − c)/|z − c|`.
    pub fn dbar(&self, z: C) -> C {
        let w = z - self.center;
        let d = w.norm();
        if d == 0.0 {
            return C::new(0.0, 0.0);
        }
        let (_, slope) = Self::profile(d / self.radius);
        w / d * (slope / (2.0 * self.radius))
    }
}

/// `τ = −∂̄γ · (ψ∘μ⁻¹) + ∂̄γ · ψ`, with `μ(z) = c + mu (z − c)` the rotation
/// about the cutoff centre (`|mu| = 1`), sampled on `grid`.
pub fn correction_rhs<F: Fn(C) -> C>(psi: F, mu: C, gamma: &CutoffSpec, grid: &GridField) -> Result<GridField> {
    if (mu.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument("mu must be a unit rotation".into()));
    }
    if gamma.radius / grid.spacing < 16.0 {
        return Err(Error::InvalidArgument(format!(
            "grid too coarse: {:.1} cells across the cutoff radius, need 16",
            gamma.radius / grid.spacing
        )));
    }
    if psi(gamma.center).norm() > 1e-12 {
        return Err(Error::InvalidArgument("psi must vanish at the cutoff centre".into()));
    }
    let c = gamma.center;
    Ok(grid.sample(|z| {
        let g = gamma.dbar(z);
        if g == C::new(0.0, 0.0) {
            return g;
        }
        let pulled = psi(c + mu.conj() * (z - c));
        -g * pulled + g * psi(z)
    }))
}

fn fft2(data: &mut [C], m: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    for row in data.chunks_mut(m) {
        fft.process(row);
    }
    let mut col = vec![C::new(0.0, 0.0); m];
    for i in 0..m {
        for j in 0..m {
            col[j] = data[j * m + i];
        }
        fft.process(&mut col);
        for j in 0..m {
            data[j * m + i] = col[j];
        }
    }
}

/// Cauchy transform of grid data (piecewise constant on cells): the sum
/// `(h²/π) Σ τ(ξ)/(z − ξ)` over the other cells; the cell containing `z`
/// contributes its exact integral of `1/(π(z − ξ))`, which vanishes by
/// symmetry.
pub fn cauchy_solve(tau: &GridField) -> GridField {
    let n = tau.size;
    let m = 2 * n;
    let h = tau.spacing;
    let mut a = vec![C::new(0.0, 0.0); m * m];
    for j in 0..n {
        for i in 0..n {
            a[j * m + i] = tau.at(i, j);
        }
    }
    let mut k = vec![C::new(0.0, 0.0); m * m];
    for dy in -(n as i64 - 1)..n as i64 {
        for dx in -(n as i64 - 1)..n as i64 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let idx = (dy.rem_euclid(m as i64) as usize) * m + dx.rem_euclid(m as i64) as usize;
            k[idx] = C::new(h / PI, 0.0) / C::new(dx as f64, dy as f64);
        }
    }
    fft2(&mut a, m, false);
    fft2(&mut k, m, false);
    a.iter_mut().zip(&k).for_each(|(x, y)| *x *= y);
    fft2(&mut a, m, true);
    let scale = 1.0 / (m * m) as f64;
    let mut u = tau.clone();
    for j in 0..n {
        for i in 0..n {
            u.values[j * n + i] = a[j * m + i] * scale;
        }
    }
    u
}

/// `‖∂̄u − τ‖₂ / ‖τ‖₂` over interior cells, `∂̄` by centred differences.
pub fn residual(u: &GridField, tau: &GridField) -> f64 {
    let (dbar, _) = u.wirtinger();
    let n = u.size;
    let (mut num, mut den) = (0.0, 0.0);
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            num += (dbar.at(i, j) - tau.at(i, j)).norm_sqr();
            den += tau.at(i, j).norm_sqr();
        }
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Manufactured problem: `τ = ∂̄b` for the Gaussian `b = e^{−|z|²/s²}`,
/// `s = 0.2`, on `[−1, 1]²` with `size²` cells. Returns the relative
/// residual of the computed solution.
pub fn manufactured_residual(size: usize) -> f64 {
    let s2 = 0.04;
    let grid = GridField::centred(C::new(0.0, 0.0), 1.0, size);
    let tau = grid.sample(|z| -z / s2 * (-z.norm_sqr() / s2).exp());
    residual(&cauchy_solve(&tau), &tau)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub r: f64,
    pub sup_tau: f64,
    pub sup_u: f64,
    pub sup_grad_u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `log sup|u|` against `log r`; `None` when the
    /// correction vanishes identically.
    pub slope: Option<f64>,
}

/// For each `r`: cutoff of radius `r` at `center`, right-hand side for the
/// rotation `mu`, Cauchy solve on a `size²` grid of half-width `1.25 r`
/// (so every radius is resolved by the same number of cells), and the sup
/// norms of `τ`, `u` and `∇u`.
pub fn correction_scaling_experiment<F: Fn(C) -> C>(center: C, psi: F, mu: C, r_values: &[f64], size: usize) -> Result<ScalingTable> {
    if r_values.len() < 3 {
        return Err(Error::InvalidArgument("the scaling fit needs at least three radii".into()));
    }
    if r_values.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("radii must be strictly decreasing".into()));
    }
    let mut rows = vec![];
    for &r in r_values {
        let gamma = build_cutoff(center, r)?;
        let grid = GridField::centred(center, 1.25 * r, size);
        let tau = correction_rhs(&psi, mu, &gamma, &grid)?;
        let u = cauchy_solve(&tau);
        rows.push(ScalingRow { r, sup_tau: tau.sup(), sup_u: u.sup(), sup_grad_u: u.sup_gradient() });
    }
    let slope = if rows.iter().all(|row| row.sup_u > 0.0) {
        let pts: Vec<(f64, f64)> = rows.iter().map(|row| (row.r.ln(), row.sup_u.ln())).collect();
        let k = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    Ok(ScalingTable { rows, slope })
}
