//! Grid-plus-refinement maximization over parametrized compact sets:
//! the unit sphere of `C^n`, tori, and the boundary of a domain.

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::domains::DomainSpec;
use crate::optimize::NelderMead;

/// Maximizes `f` over the box `[lo, hi]` by an axis grid with `per_axis`
/// points, then Nelder-Mead refines the `refine` best grid points
/// (coordinates are clamped into the box).
pub fn grid_maximize<F: FnMut(&[f64]) -> f64>(lo: &[f64], hi: &[f64], per_axis: usize, refine: usize, mut f: F) -> (f64, Vec<f64>) {
    let d = lo.len();
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(d as u32);
    let mut scored: Vec<(f64, Vec<f64>)> = Vec::with_capacity(total);
    let mut x = vec![0.0; d];
    for idx in 0..total {
        let mut k = idx;
        for i in 0..d {
            let t = (k % per_axis) as f64 / (per_axis - 1) as f64;
            x[i] = lo[i] + t * (hi[i] - lo[i]);
            k /= per_axis;
        }
        let v = f(&x);
        scored.push((if v.is_nan() { f64::NEG_INFINITY } else { v }, x.clone()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = scored[0].clone();
    let step: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) / (per_axis - 1) as f64).collect();
    let nm = NelderMead { max_iterations: 60 * d.max(1), f_tol: 1e-14, ..Default::default() };
    for (_, start) in scored.iter().take(refine) {
        let clamp = |p: &[f64]| -> Vec<f64> { p.iter().zip(lo.iter().zip(hi)).map(|(v, (a, b))| v.clamp(*a, *b)).collect() };
        let r = nm.minimize(|p| -f(&clamp(p)), start, &step);
        if -r.value > best.0 {
            best = (-r.value, clamp(&r.x));
        }
    }
    best
}

/// Point of the unit sphere of `C^n` from `n − 1` modulus angles in
/// `[0, π/2]` followed by `n` phases.
pub fn sphere_point(params: &[f64], n: usize) -> Vec<Complex64> {
    let mut moduli = vec![0.0; n];
    let mut s = 1.0;
    for i in 0..n - 1 {
        moduli[i] = s * params[i].cos();
        s *= params[i].sin();
    }
    moduli[n - 1] = s;
    (0..n).map(|j| Complex64::from_polar(moduli[j], params[n - 1 + j])).collect()
}

fn sphere_box(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![0.0; 2 * n - 1];
    let mut hi = vec![FRAC_PI_2; n - 1];
    hi.extend(vec![TAU; n]);
    lo.truncate(2 * n - 1);
    (lo, hi)
}

fn per_axis_for(samples: usize, dims: usize) -> usize {
    ((samples as f64).powf(1.0 / dims as f64).round() as usize).max(3)
}

/// `max_{|u| = 1} f(u)` over the unit sphere of `C^n` with about `samples`
/// grid points.
pub fn sphere_max<F: FnMut(&[Complex64]) -> f64>(n: usize, samples: usize, refine: usize, mut f: F) -> (f64, Vec<Complex64>) {
    let (lo, hi) = sphere_box(n);
    let per = per_axis_for(samples, lo.len());
    let (v, p) = grid_maximize(&lo, &hi, per, refine, |p| f(&sphere_point(p, n)));
    (v, sphere_point(&p, n))
}

/// `max f` over the torus `{|u_j| = radii_j}`.
pub fn torus_max<F: FnMut(&[Complex64]) -> f64>(radii: &[f64], samples: usize, refine: usize, mut f: F) -> (f64, Vec<Complex64>) {
    let n = radii.len();
    let lo = vec![0.0; n];
    let hi = vec![TAU; n];
    let per = per_axis_for(samples, n);
    let pt = |p: &[f64]| -> Vec<Complex64> { radii.iter().zip(p).map(|(r, t)| Complex64::from_polar(*r, *t)).collect() };
    let (v, p) = grid_maximize(&lo, &hi, per, refine, |p| f(&pt(p)));
    (v, pt(&p))
}

/// `max f` over the full topological boundary of the polydisc with the given
/// radii: one coordinate on its circle, the others anywhere in their closed discs.
pub fn polydisc_boundary_max<F: FnMut(&[Complex64]) -> f64>(radii: &[f64], samples: usize, refine: usize, mut f: F) -> (f64, Vec<Complex64>) {
    let n = radii.len();
    let mut best = (f64::NEG_INFINITY, vec![]);
    for face in 0..n {
        // params: phase of the face coordinate, then (modulus fraction, phase) for the others
        let d = 1 + 2 * (n - 1);
        let lo = vec![0.0; d];
        let mut hi = vec![TAU];
        for _ in 0..n - 1 {
            hi.push(1.0);
            hi.push(TAU);
        }
        let pt = |p: &[f64]| -> Vec<Complex64> {
            let mut out = Vec::with_capacity(n);
            let mut k = 1;
            for (j, r) in radii.iter().enumerate() {
                if j == face {
                    out.push(Complex64::from_polar(*r, p[0]));
                } else {
                    out.push(Complex64::from_polar(r * p[k], p[k + 1]));
                    k += 2;
                }
            }
            out
        };
        let per = per_axis_for(samples / n, d);
        let (v, p) = grid_maximize(&lo, &hi, per, refine, |p| f(&pt(p)));
        if v > best.0 {
            best = (v, pt(&p));
        }
    }
    best
}

/// `max f` over the boundary of a domain, parametrized by profile direction
/// angles (radial bisection gives the moduli) and coordinate phases.
pub fn domain_boundary_max<F: FnMut(&[Complex64]) -> f64>(domain: &DomainSpec, samples: usize, refine: usize, mut f: F) -> (f64, Vec<Complex64>) {
    let n = domain.dim();
    let (lo, hi) = sphere_box(n);
    let per = per_axis_for(samples, lo.len());
    let pt = |p: &[f64]| -> Vec<Complex64> {
        let dir: Vec<f64> = sphere_point(p, n).iter().map(|c| c.norm()).collect();
        let b = domain.profile_boundary_point(&dir);
        (0..n).map(|j| Complex64::from_polar(b[j], p[n - 1 + j])).collect()
    };
    let (v, p) = grid_maximize(&lo, &hi, per, refine, |p| f(&pt(p)));
    (v, pt(&p))
}

/// Grid of points `(r_j e^{iθ_j})`: `moduli` lists modulus vectors, each
/// combined with `phases` equispaced angles per coordinate.
fn phase_product(moduli: &[Vec<f64>], phases: usize) -> Vec<Vec<Complex64>> {
    let n = moduli.first().map_or(0, |m| m.len());
    let total = phases.pow(n as u32);
    let mut out = Vec::with_capacity(moduli.len() * total);
    for m in moduli {
        for idx in 0..total {
            let mut k = idx;
            let mut p = Vec::with_capacity(n);
            for r in m {
                p.push(Complex64::from_polar(*r, TAU * (k % phases) as f64 / phases as f64));
                k /= phases;
            }
            out.push(p);
        }
    }
    out
}

fn modulus_directions(n: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let m = n - 1;
    let total = per_axis.pow(m as u32);
    (0..total)
        .map(|idx| {
            let mut k = idx;
            let angles: Vec<f64> = (0..m)
                .map(|_| {
                    let a = FRAC_PI_2 * (k % per_axis) as f64 / (per_axis - 1) as f64;
                    k /= per_axis;
                    a
                })
                .collect();
            let mut p = angles.clone();
            p.extend(vec![0.0; n]);
            sphere_point(&p, n).iter().map(|c| c.re).collect()
        })
        .collect()
}

/// Boundary sample of a domain: `per_axis` modulus directions per angle
/// (endpoints included) times `phases` angles per coordinate.
pub fn boundary_grid(domain: &DomainSpec, per_axis: usize, phases: usize) -> Vec<Vec<Complex64>> {
    let moduli: Vec<Vec<f64>> = modulus_directions(domain.dim(), per_axis.max(2))
        .iter()
        .map(|d| domain.profile_boundary_point(d))
        .collect();
    phase_product(&moduli, phases)
}

/// Sample of the unit sphere of `C^n` laid out like [`boundary_grid`].
pub fn sphere_grid(n: usize, per_axis: usize, phases: usize) -> Vec<Vec<Complex64>> {
    phase_product(&modulus_directions(n, per_axis.max(2)), phases)
}

/// Sample of the torus `{|u_j| = radii_j}`.
pub fn torus_grid(radii: &[f64], phases: usize) -> Vec<Vec<Complex64>> {
    phase_product(&[radii.to_vec()], phases)
}
