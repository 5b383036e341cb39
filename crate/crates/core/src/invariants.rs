//! Volume invariants: lower bounds for `𝒞(z) = sup |det φ'(z)|` over maps
//! `φ: Ω → B` with `φ(z) = 0`, upper bounds for `𝒦(z) = inf 1/|det ψ'(0)|`
//! over maps `ψ: B → Ω` with `ψ(0) = z`, the quotient `ℳ = 𝒦/𝒞`, its
//! polydisc-model analogue, and the circular averaging operator.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::domains::{DomainKind, DomainSpec, Point};
use crate::error::{Error, Result};
use crate::maps::{self, BallAutomorphism};
use crate::optimize::{golden_max, NelderMead, OptimizerBudget};
use crate::sampling;
use crate::norm;

type C = Complex64;

/// Holomorphic map families used as witnesses. Matrices are stored row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapFamily {
    /// `w ↦ Φ_a(w/d)`; parameters `[a, d]`.
    BallAutomorphism,
    /// `v ↦ d·Φ_a(v)`; parameters `[a, d]`.
    ScaledBallAutomorphism,
    /// `w ↦ Φ_b(L w)`; parameters `[L, b]`.
    LinearThenBallAutomorphism,
    /// `v ↦ z + A(Φ_c(v) − c)`; parameters `[z, A, c]`.
    BallAutomorphismThenAffine,
    /// `w ↦ (r_i m_{b_i}((L w)_i))_i`; parameters `[L, b, r]`.
    LinearThenProductMobius,
    /// `v ↦ z + A(M_c(v/r) − c)` with `M_c` the polydisc automorphism
    /// `u_j ↦ (u_j + c_j)/(1 + conj(c_j) u_j)`; parameters `[z, A, c, r]`.
    PolydiscAutomorphismThenAffine,
    /// `w ↦ d·w`; parameters `[d]`.
    DiagonalLinear,
    /// `w ↦ L w`; parameters `[L]`.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolomorphicMapSample {
    pub family: MapFamily,
    pub dim: usize,
    pub parameters: Vec<C>,
}

fn matrix(p: &[C], n: usize) -> DMatrix<C> {
    DMatrix::from_row_slice(n, n, &p[..n * n])
}

fn flat(m: &DMatrix<C>) -> Vec<C> {
    let n = m.nrows();
    (0..n).flat_map(|i| (0..n).map(move |j| m[(i, j)])).collect()
}

fn re(v: &[C]) -> Vec<f64> {
    v.iter().map(|c| c.re).collect()
}

fn disc_automorphism(c: C, u: C) -> C {
    (u + c) / (C::new(1.0, 0.0) + c.conj() * u)
}

impl HolomorphicMapSample {
    fn new(family: MapFamily, dim: usize, parts: &[&[C]]) -> Self {
        Self { family, dim, parameters: parts.concat() }
    }

    pub fn apply(&self, w: &[C]) -> Vec<C> {
        let n = self.dim;
        let p = &self.parameters;
        match self.family {
            MapFamily::BallAutomorphism => BallAutomorphism::new(&p[..n]).apply(&maps::unscale(w, &re(&p[n..2 * n]))),
            MapFamily::ScaledBallAutomorphism => maps::scale(&BallAutomorphism::new(&p[..n]).apply(w), &re(&p[n..2 * n])),
            MapFamily::LinearThenBallAutomorphism => {
                let lw = maps::matvec(&matrix(p, n), w);
                BallAutomorphism::new(&p[n * n..n * n + n]).apply(&lw)
            }
            MapFamily::BallAutomorphismThenAffine => {
                let (z, a, c) = (&p[..n], matrix(&p[n..], n), &p[n + n * n..2 * n + n * n]);
                let shifted: Vec<C> = BallAutomorphism::new(c).apply(w).iter().zip(c).map(|(x, y)| x - y).collect();
                maps::matvec(&a, &shifted).iter().zip(z).map(|(x, y)| x + y).collect()
            }
            MapFamily::LinearThenProductMobius => {
                let lw = maps::matvec(&matrix(p, n), w);
                let (b, r) = (&p[n * n..n * n + n], &p[n * n + n..n * n + 2 * n]);
                (0..n).map(|i| maps::disc_mobius(b[i], lw[i]) * r[i].re).collect()
            }
            MapFamily::PolydiscAutomorphismThenAffine => {
                let (z, a) = (&p[..n], matrix(&p[n..], n));
                let c = &p[n + n * n..2 * n + n * n];
                let r = &p[2 * n + n * n..3 * n + n * n];
                let shifted: Vec<C> = (0..n).map(|j| disc_automorphism(c[j], w[j] / r[j].re) - c[j]).collect();
                maps::matvec(&a, &shifted).iter().zip(z).map(|(x, y)| x + y).collect()
            }
            MapFamily::DiagonalLinear => w.iter().zip(p).map(|(x, d)| x * d).collect(),
            MapFamily::Linear => maps::matvec(&matrix(p, n), w),
        }
    }

    /// `|det f'(w)|` by central differences (the maps are holomorphic, so
    /// complex steps along the coordinate axes give the complex Jacobian).
    pub fn jacobian_det(&self, w: &[C]) -> f64 {
        let n = self.dim;
        let h = 1e-6;
        let mut m = DMatrix::from_element(n, n, C::new(0.0, 0.0));
        for k in 0..n {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[k] += h;
            wm[k] -= h;
            let (fp, fm) = (self.apply(&wp), self.apply(&wm));
            for j in 0..n {
                m[(j, k)] = (fp[j] - fm[j]) / (2.0 * h);
            }
        }
        maps::det_abs(&m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeInvariantEstimate {
    pub c_lower: f64,
    pub k_upper: f64,
    pub m_upper: f64,
    pub m_lower: f64,
    /// True when both bounds are attained (closed forms, circular centres).
    pub exact: bool,
    pub witnesses: Vec<HolomorphicMapSample>,
}

impl VolumeInvariantEstimate {
    fn from_bounds(c: (f64, HolomorphicMapSample), k: (f64, HolomorphicMapSample), exact: bool) -> Self {
        let m = k.0 / c.0;
        Self { c_lower: c.0, k_upper: k.0, m_upper: m, m_lower: if exact { m } else { 1.0 }, exact, witnesses: vec![c.1, k.1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: DomainSpec,
    pub basepoint: Point,
}

impl ModelSpec {
    pub fn new(model: DomainSpec, basepoint: Point) -> Result<Self> {
        if !model.contains(&basepoint)? {
            return Err(Error::OutsideDomain(model.defining_value(&basepoint)?));
        }
        Ok(Self { model, basepoint })
    }

    pub fn unit_polydisc(n: usize) -> Self {
        Self { model: DomainSpec::polydisc(vec![1.0; n]).expect("valid radii"), basepoint: Point::origin(n) }
    }
}

fn check_interior(domain: &DomainSpec, z: &Point) -> Result<()> {
    let rho = domain.defining_value(z)?;
    if rho >= 0.0 {
        return Err(Error::OutsideDomain(rho));
    }
    Ok(())
}

/// Real parameter vector ↔ complex matrix.
fn to_matrix(x: &[f64], n: usize) -> DMatrix<C> {
    DMatrix::from_row_iterator(n, n, (0..n * n).map(|i| C::new(x[2 * i], x[2 * i + 1])))
}

fn to_reals(m: &DMatrix<C>) -> Vec<f64> {
    flat(m).iter().flat_map(|c| [c.re, c.im]).collect()
}

/// Maps `y ∈ C` into the unit disc, `y ↦ y tanh|y| / |y|`.
fn squash(y: C) -> C {
    let r = y.norm();
    if r == 0.0 {
        y
    } else {
        y * (r.tanh() / r)
    }
}

fn squash_ball(y: &[C]) -> Vec<C> {
    let r = norm(y);
    if r == 0.0 {
        y.to_vec()
    } else {
        y.iter().map(|c| c * (r.tanh() / r)).collect()
    }
}

/// Nelder–Mead with restarts from perturbations of the incumbent; maximizes.
fn maximize_restarts<F: FnMut(&[f64]) -> f64>(mut f: F, seeds: &[Vec<f64>], step: f64, budget: &OptimizerBudget, salt: u64) -> (f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ salt);
    let nm = NelderMead { max_iterations: budget.max_iterations, f_tol: 1e-13, ..Default::default() };
    let mut best = (f64::NEG_INFINITY, seeds[0].clone());
    for s in seeds {
        let v = f(s);
        if v > best.0 {
            best = (v, s.clone());
        }
    }
    for round in 0..budget.restarts.max(1) {
        let start: Vec<f64> = if round == 0 { best.1.clone() } else { best.1.iter().map(|v| v + step * (rng.gen::<f64>() - 0.5)).collect() };
        let r = nm.minimize(|x| -f(x), &start, &vec![step; start.len()]);
        if -r.value > best.0 {
            best = (-r.value, r.x);
        }
    }
    best
}

/// Lower bound for `𝒞(z)`. Exact on the ball and the stretched ball
/// (automorphism composed with `Ψ⁻¹`); elsewhere the best `Φ_b ∘ L` with `L`
/// normalized by its supremum over the boundary.
pub fn c_lower(domain: &DomainSpec, z: &Point, budget: &OptimizerBudget) -> Result<(f64, HolomorphicMapSample)> {
    check_interior(domain, z)?;
    let n = z.dim();
    if let Some(d) = maps::ball_model_scaling(domain) {
        let a = maps::unscale(z, &d);
        let value = BallAutomorphism::new(&a).jacobian_at_center() / d.iter().product::<f64>();
        let dc: Vec<C> = d.iter().map(|v| C::new(*v, 0.0)).collect();
        return Ok((value, HolomorphicMapSample::new(MapFamily::BallAutomorphism, n, &[&a, &dc])));
    }
    let (per_axis, phases) = if n == 2 { (24, 16) } else { (6, 8) };
    let pts = sampling::boundary_grid(domain, per_axis, phases);
    let sup = |l: &DMatrix<C>| pts.iter().map(|w| norm(&maps::matvec(l, w))).fold(0.0, f64::max);
    let log_value = |l: &DMatrix<C>, s: f64| -> f64 {
        let b: Vec<C> = maps::matvec(l, z).iter().map(|c| c / s).collect();
        let bb = b.iter().map(|c| c.norm_sqr()).sum::<f64>();
        if !(bb < 1.0) {
            return f64::NEG_INFINITY;
        }
        maps::det_abs(l).ln() - n as f64 * s.ln() - 0.5 * (n as f64 + 1.0) * (1.0 - bb).ln()
    };
    let identity = DMatrix::<C>::identity(n, n);
    let bounds = domain.coordinate_bounds();
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, bounds.iter().map(|r| C::new(1.0 / r, 0.0))));
    let seeds = vec![to_reals(&identity), to_reals(&diag)];
    let (_, x) = maximize_restarts(
        |x| {
            let l = to_matrix(x, n);
            log_value(&l, sup(&l))
        },
        &seeds,
        0.1,
        budget,
        0xC0,
    );
    let l = to_matrix(&x, n);
    let (refined, _) = sampling::domain_boundary_max(domain, 4096, 8, |w| norm(&maps::matvec(&l, w)));
    let s = refined.max(sup(&l));
    let l: DMatrix<C> = l / C::new(s, 0.0);
    let value = log_value(&l, 1.0).exp();
    let b = maps::matvec(&l, z);
    Ok((value, HolomorphicMapSample::new(MapFamily::LinearThenBallAutomorphism, n, &[&flat(&l), &b])))
}

enum Model<'a> {
    Ball,
    Polydisc(&'a [f64]),
}

/// Best affine image `z + s A(model − c)` of the model inside the domain,
/// `ψ(v) = z + s A(Φ_c(v) − c)`, maximizing `|det ψ'(0)|`.
///
/// All kinds are cut out by plurisubharmonic functions, so containment of
/// the image reduces to the image of the sphere (ball model) or of the torus
/// (polydisc model), and the largest admissible `s` is the minimum over those
/// directions of the first exit along the ray from `z`.
fn affine_inscribed(domain: &DomainSpec, z: &[C], model: Model, budget: &OptimizerBudget) -> (f64, HolomorphicMapSample) {
    let n = z.len();
    let dirs = match model {
        Model::Ball => {
            if n == 2 {
                sampling::sphere_grid(2, 8, 12)
            } else {
                sampling::sphere_grid(n, 4, 6)
            }
        }
        Model::Polydisc(_) => sampling::torus_grid(&vec![1.0; n], if n == 2 { 24 } else { 10 }),
    };
    let centre = |x: &[f64]| -> Vec<C> {
        let y: Vec<C> = (0..n).map(|j| C::new(x[2 * n * n + 2 * j], x[2 * n * n + 2 * j + 1])).collect();
        match model {
            Model::Ball => squash_ball(&y),
            Model::Polydisc(_) => y.into_iter().map(squash).collect(),
        }
    };
    let exit = |a: &DMatrix<C>, c: &[C], u: &[C]| -> f64 {
        let v: Vec<C> = u.iter().zip(c).map(|(x, y)| x - y).collect();
        domain.ray_exit(z, &maps::matvec(a, &v))
    };
    let log_gain = |c: &[C]| -> f64 {
        match model {
            Model::Ball => 0.5 * (n as f64 + 1.0) * (1.0 - c.iter().map(|v| v.norm_sqr()).sum::<f64>()).ln(),
            Model::Polydisc(r) => c.iter().zip(r).map(|(v, rj)| (1.0 - v.norm_sqr()).ln() - rj.ln()).sum(),
        }
    };
    let objective = |x: &[f64]| -> f64 {
        let a = to_matrix(x, n);
        let c = centre(x);
        let s = dirs.iter().map(|u| exit(&a, &c, u)).fold(f64::INFINITY, f64::min);
        if !(s > 0.0) {
            return f64::NEG_INFINITY;
        }
        n as f64 * s.ln() + maps::det_abs(&a).ln() + log_gain(&c)
    };
    let mut seed = to_reals(&DMatrix::<C>::identity(n, n));
    seed.extend(vec![0.0; 2 * n]);
    let (_, x) = maximize_restarts(objective, &[seed], 0.1, budget, 0x4B);
    let a = to_matrix(&x, n);
    let c = centre(&x);
    // certify the step size with a refined minimum over the model boundary
    let coarse = dirs.iter().map(|u| exit(&a, &c, u)).fold(f64::INFINITY, f64::min);
    let refined = match model {
        Model::Ball => -sampling::sphere_max(n, 4096, 8, |u| -exit(&a, &c, u)).0,
        Model::Polydisc(_) => -sampling::torus_max(&vec![1.0; n], 4096, 8, |u| -exit(&a, &c, u)).0,
    };
    let s = coarse.min(refined);
    let a: DMatrix<C> = a * C::new(s, 0.0);
    let value = (-(maps::det_abs(&a).ln() + log_gain(&c))).exp();
    let witness = match model {
        Model::Ball => HolomorphicMapSample::new(MapFamily::BallAutomorphismThenAffine, n, &[z, &flat(&a), &c]),
        Model::Polydisc(r) => {
            let rc: Vec<C> = r.iter().map(|v| C::new(*v, 0.0)).collect();
            HolomorphicMapSample::new(MapFamily::PolydiscAutomorphismThenAffine, n, &[z, &flat(&a), &c, &rc])
        }
    };
    (value, witness)
}

/// Upper bound for `𝒦(z)`. Exact on the ball and the stretched ball
/// (`Ψ ∘ Φ_a`); elsewhere the best ball automorphism followed by an affine map.
pub fn k_upper(domain: &DomainSpec, z: &Point, budget: &OptimizerBudget) -> Result<(f64, HolomorphicMapSample)> {
    check_interior(domain, z)?;
    let n = z.dim();
    if let Some(d) = maps::ball_model_scaling(domain) {
        let a = maps::unscale(z, &d);
        let value = 1.0 / (BallAutomorphism::new(&a).jacobian_at_origin() * d.iter().product::<f64>());
        let dc: Vec<C> = d.iter().map(|v| C::new(*v, 0.0)).collect();
        return Ok((value, HolomorphicMapSample::new(MapFamily::ScaledBallAutomorphism, n, &[&a, &dc])));
    }
    Ok(affine_inscribed(domain, z, Model::Ball, budget))
}

/// `ℳ(z) ≤ k_upper / c_lower`.
pub fn quotient_upper(domain: &DomainSpec, z: &Point, budget: &OptimizerBudget) -> Result<VolumeInvariantEstimate> {
    let exact = maps::ball_model_scaling(domain).is_some();
    let c = c_lower(domain, z, budget)?;
    let k = k_upper(domain, z, budget)?;
    Ok(VolumeInvariantEstimate::from_bounds(c, k, exact))
}

/// `min_{t∈[0,1]} g(t)` by a 1001-point scan refined by golden section.
fn min_on_unit_interval<F: Fn(f64) -> f64>(g: F) -> f64 {
    const N: usize = 1000;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..=N {
        let v = g(i as f64 / N as f64);
        if v < best.1 {
            best = (i, v);
        }
    }
    let h = 1.0 / N as f64;
    let t = best.0 as f64 * h;
    let (_, v) = golden_max(|t| -g(t), (t - h).max(0.0), (t + h).min(1.0), 1e-14);
    (-v).min(best.1)
}

/// `max a·b(a)` over `a ∈ (0, 1]`, where `b(a)²` is the largest admissible
/// value of the second entry squared: a grid of step `1e-3`, then golden
/// refinement.
fn diagonal_brute_force<F: Fn(f64) -> f64>(b_sq: F) -> (f64, f64, f64) {
    let b_of = |a: f64| b_sq(a).max(0.0).sqrt();
    let mut best = (0.0, 0.0);
    for k in 1..=1000 {
        let a = k as f64 * 1e-3;
        let v = a * b_of(a);
        if v > best.1 {
            best = (a, v);
        }
    }
    let (a, _) = golden_max(|a| a * b_of(a), (best.0 - 1e-3).max(1e-6), (best.0 + 1e-3).min(1.0), 1e-12);
    let b = b_of(a);
    (a, b, a * b)
}

/// Exact `𝒞(0)`, `𝒦(0)` and `ℳ(0)` for a two-dimensional egg.
///
/// At the centre of a circular domain the averaging reduction leaves only
/// diagonal linear maps, so the extremal problems are solved by brute force
/// over diagonal scalings (`diag(a, b)` maps the egg into the ball, resp. the
/// ball into the egg, iff a one-dimensional profile inequality holds; both
/// are linear in `b²`). A general-linear search from 50 random starts is run
/// as a cross-check and its maps are attached as extra witnesses.
pub fn circular_center_exact(domain: &DomainSpec, budget: &OptimizerBudget) -> Result<VolumeInvariantEstimate> {
    let DomainKind::Egg { exponents } = domain.kind() else {
        return Err(Error::Unsupported("circular centres are implemented for eggs".into()));
    };
    if exponents.len() != 2 {
        return Err(Error::Unsupported("circular centres are implemented in dimension 2".into()));
    }
    let (m1, m2) = (exponents[0] as f64, exponents[1] as f64);
    // egg → ball: a²x1² + b²x2² ≤ 1 on x1^{2m1} + x2^{2m2} = 1, with x2^{2m2} = t
    let (ca, cb, c0) = diagonal_brute_force(|a| min_on_unit_interval(|t| (1.0 - a * a * (1.0 - t).powf(1.0 / m1)) / t.powf(1.0 / m2)));
    // ball → egg: (a²(1−y))^{m1} + (b²y)^{m2} ≤ 1 on |v1|² = 1 − y, |v2|² = y
    let (ka, kb, kdet) = diagonal_brute_force(|a| min_on_unit_interval(|y| (1.0 - (a * a * (1.0 - y)).powf(m1)).max(0.0).powf(1.0 / m2) / y));
    let k0 = 1.0 / kdet;
    let diag = |a: f64, b: f64| HolomorphicMapSample::new(MapFamily::DiagonalLinear, 2, &[&[C::new(a, 0.0), C::new(b, 0.0)]]);
    let mut estimate = VolumeInvariantEstimate {
        c_lower: c0,
        k_upper: k0,
        m_upper: k0 / c0,
        m_lower: k0 / c0,
        exact: true,
        witnesses: vec![diag(ca, cb), diag(ka, kb)],
    };
    let (gc, lc, gk, lk) = general_linear_center(domain, budget);
    if gc > c0 * (1.0 + 1e-6) || 1.0 / gk < k0 * (1.0 - 1e-6) {
        log::warn!("general linear maps beat the diagonal optimum: C {gc} vs {c0}, K {} vs {k0}", 1.0 / gk);
    }
    estimate.witnesses.push(HolomorphicMapSample::new(MapFamily::Linear, 2, &[&flat(&lc)]));
    estimate.witnesses.push(HolomorphicMapSample::new(MapFamily::Linear, 2, &[&flat(&lk)]));
    Ok(estimate)
}

/// General complex-linear maps at the origin: returns
/// `(|det L|, L, |det A|, A)` for the best `L(Ω) ⊂ B` and `A(B) ⊂ Ω` found
/// from 50 random starts.
fn general_linear_center(domain: &DomainSpec, budget: &OptimizerBudget) -> (f64, DMatrix<C>, f64, DMatrix<C>) {
    let n = domain.dim();
    let pts = sampling::boundary_grid(domain, 12, 10);
    let sphere = sampling::sphere_grid(n, 6, 8);
    let origin = vec![C::new(0.0, 0.0); n];
    let c_obj = |x: &[f64]| -> f64 {
        let l = to_matrix(x, n);
        let s = pts.iter().map(|w| norm(&maps::matvec(&l, w))).fold(0.0, f64::max);
        maps::det_abs(&l).ln() - n as f64 * s.ln()
    };
    let k_obj = |x: &[f64]| -> f64 {
        let a = to_matrix(x, n);
        let s = sphere.iter().map(|u| domain.ray_exit(&origin, &maps::matvec(&a, u))).fold(f64::INFINITY, f64::min);
        n as f64 * s.ln() + maps::det_abs(&a).ln()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ 0x50);
    let nm = NelderMead { max_iterations: 100, f_tol: 1e-12, ..Default::default() };
    let mut best_c = (f64::NEG_INFINITY, vec![]);
    let mut best_k = (f64::NEG_INFINITY, vec![]);
    for _ in 0..50 {
        let start: Vec<f64> = (0..2 * n * n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let r = nm.minimize(|x| -c_obj(x), &start, &vec![0.2; start.len()]);
        if -r.value > best_c.0 {
            best_c = (-r.value, r.x);
        }
        let r = nm.minimize(|x| -k_obj(x), &start, &vec![0.2; start.len()]);
        if -r.value > best_k.0 {
            best_k = (-r.value, r.x);
        }
    }
    let l = to_matrix(&best_c.1, n);
    let (s, _) = sampling::domain_boundary_max(domain, 4096, 8, |w| norm(&maps::matvec(&l, w)));
    let l: DMatrix<C> = l / C::new(s, 0.0);
    let a = to_matrix(&best_k.1, n);
    let s = -sampling::sphere_max(n, 4096, 8, |u| -domain.ray_exit(&origin, &maps::matvec(&a, u))).0;
    let a: DMatrix<C> = a * C::new(s, 0.0);
    (maps::det_abs(&l), l, maps::det_abs(&a), a)
}

/// `ℳ̂(z)` with the ball replaced by a polydisc model (basepoint the origin).
///
/// `Ĉ` uses `φ_i = r_i m_{b_i}(ℓ_i · w)` with each row normalized by its exact
/// supremum over the domain; `K̂` uses affine images of the polydisc composed
/// with polydisc automorphisms.
pub fn model_quotient(domain: &DomainSpec, z: &Point, model: &ModelSpec, budget: &OptimizerBudget) -> Result<VolumeInvariantEstimate> {
    check_interior(domain, z)?;
    let DomainKind::Polydisc { radii } = model.model.kind() else {
        return Err(Error::Unsupported(format!("model kind {}", model.model.kind_name())));
    };
    if model.basepoint.norm() != 0.0 {
        return Err(Error::Unsupported("model basepoint must be the origin".into()));
    }
    let n = z.dim();
    if radii.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: radii.len() });
    }
    let normalize = |l: &DMatrix<C>| -> DMatrix<C> {
        let mut out = l.clone();
        for i in 0..n {
            let row: Vec<C> = (0..n).map(|j| l[(i, j)]).collect();
            let s = domain.linear_sup(&row);
            for j in 0..n {
                out[(i, j)] = l[(i, j)] / s;
            }
        }
        out
    };
    let log_value = |l: &DMatrix<C>| -> f64 {
        let b = maps::matvec(l, z);
        if b.iter().any(|v| !(v.norm() < 1.0)) {
            return f64::NEG_INFINITY;
        }
        radii.iter().map(|r| r.ln()).sum::<f64>() + maps::det_abs(l).ln() - b.iter().map(|v| (1.0 - v.norm_sqr()).ln()).sum::<f64>()
    };
    let seed = to_reals(&DMatrix::<C>::identity(n, n));
    let (_, x) = maximize_restarts(|x| log_value(&normalize(&to_matrix(x, n))), &[seed], 0.1, budget, 0x3C);
    let l = normalize(&to_matrix(&x, n));
    let b = maps::matvec(&l, z);
    let rc: Vec<C> = radii.iter().map(|v| C::new(*v, 0.0)).collect();
    let c = (log_value(&l).exp(), HolomorphicMapSample::new(MapFamily::LinearThenProductMobius, n, &[&flat(&l), &b, &rc]));
    let k = affine_inscribed(domain, z, Model::Polydisc(radii), budget);
    Ok(VolumeInvariantEstimate::from_bounds(c, k, false))
}

/// Polynomial map of two variables: `components[j][p][q]` is the coefficient
/// of `z1^p z2^q` in component `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyMap2 {
    pub components: Vec<Vec<Vec<C>>>,
}

impl PolyMap2 {
    pub fn new(components: Vec<Vec<Vec<C>>>) -> Result<Self> {
        if components.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: components.len() });
        }
        Ok(Self { components })
    }

    /// Builds a map from `(component, p, q, coefficient)` terms.
    pub fn from_terms(terms: &[(usize, usize, usize, C)]) -> Self {
        let deg = terms.iter().map(|t| t.1.max(t.2)).max().unwrap_or(0);
        let mut components = vec![vec![vec![C::new(0.0, 0.0); deg + 1]; deg + 1]; 2];
        for &(j, p, q, c) in terms {
            components[j][p][q] += c;
        }
        Self { components }
    }

    /// Total degree (largest `p + q` with a nonzero coefficient).
    pub fn degree(&self) -> usize {
        let mut d = 0;
        for comp in &self.components {
            for (p, row) in comp.iter().enumerate() {
                for (q, c) in row.iter().enumerate() {
                    if *c != C::new(0.0, 0.0) {
                        d = d.max(p + q);
                    }
                }
            }
        }
        d
    }

    pub fn evaluate(&self, z: [C; 2]) -> [C; 2] {
        let f = |comp: &Vec<Vec<C>>| -> C {
            comp.iter()
                .enumerate()
                .map(|(p, row)| row.iter().enumerate().map(|(q, c)| c * z[0].powu(p as u32) * z[1].powu(q as u32)).sum::<C>())
                .sum()
        };
        [f(&self.components[0]), f(&self.components[1])]
    }

    /// Coefficient of `z1^p z2^q` in component `j` (zero outside the table).
    pub fn coefficient(&self, j: usize, p: usize, q: usize) -> C {
        self.components[j].get(p).and_then(|row| row.get(q)).copied().unwrap_or(C::new(0.0, 0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AveragingWeights {
    /// Component `j` weighted by `e^{−iθ_j}`: extracts `∂f_j/∂z_j(0)`.
    PerComponent,
    /// Every component weighted by `e^{−iθ_1} e^{−iθ_2}`: extracts the
    /// `z1 z2` coefficient.
    Product,
}

/// `(1/4π²) ∬ f_j(z1 e^{iθ1}, z2 e^{iθ2}) w_j(θ) dθ` at `z = (1, 1)` by the
/// tensor trapezoid rule with `nodes` points per angle, which is exact once
/// `nodes > degree`. Returns the two extracted coefficients.
pub fn circular_average(map: &PolyMap2, weights: AveragingWeights, nodes: usize) -> Result<[C; 2]> {
    let deg = map.degree();
    if nodes < deg + 1 {
        return Err(Error::InvalidArgument(format!("{nodes} quadrature nodes cannot resolve degree {deg}; need at least {}", deg + 1)));
    }
    let mut acc = [C::new(0.0, 0.0); 2];
    for a in 0..nodes {
        let t1 = TAU * a as f64 / nodes as f64;
        for b in 0..nodes {
            let t2 = TAU * b as f64 / nodes as f64;
            let f = map.evaluate([C::from_polar(1.0, t1), C::from_polar(1.0, t2)]);
            let w = match weights {
                AveragingWeights::PerComponent => [C::from_polar(1.0, -t1), C::from_polar(1.0, -t2)],
                AveragingWeights::Product => [C::from_polar(1.0, -t1 - t2); 2],
            };
            for j in 0..2 {
                acc[j] += f[j] * w[j];
            }
        }
    }
    let scale = 1.0 / (nodes * nodes) as f64;
    Ok([acc[0] * scale, acc[1] * scale])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn quick() -> OptimizerBudget {
        OptimizerBudget { max_iterations: 150, restarts: 2, ..Default::default() }
    }

    #[test]
    fn ball_closed_forms() {
        let ball = DomainSpec::ball(2).unwrap();
        let (v, _) = c_lower(&ball, &Point::origin(2), &quick()).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let z = Point::real(&[0.5, 0.0]);
        let (cv, cw) = c_lower(&ball, &z, &quick()).unwrap();
        assert!((cv - 0.75f64.powf(-1.5)).abs() < 1e-12, "{cv}");
        assert!((cw.jacobian_det(&z) - cv).abs() < 1e-6);
        assert!(norm(&cw.apply(&z)) < 1e-15);
        let (kv, kw) = k_upper(&ball, &z, &quick()).unwrap();
        assert!((kv - cv).abs() < 1e-12);
        assert!((1.0 / kw.jacobian_det(&[c(0.0, 0.0), c(0.0, 0.0)]) - kv).abs() < 1e-6);
        let sb = DomainSpec::stretched_ball(4.0).unwrap();
        let (kv, kw) = k_upper(&sb, &Point::origin(2), &quick()).unwrap();
        assert!((kv - 0.25).abs() < 1e-15);
        assert!((kw.jacobian_det(&[c(0.0, 0.0), c(0.0, 0.0)]) - 4.0).abs() < 1e-6);
        let q = quotient_upper(&sb, &Point::real(&[0.3, 1.2]), &quick()).unwrap();
        assert!((q.m_upper - 1.0).abs() < 1e-12 && q.exact);
    }

    #[test]
    fn ball_quotient_is_one_in_every_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=3 {
            let ball = DomainSpec::ball(n).unwrap();
            for _ in 0..10 {
                let v: Vec<C> = (0..n).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
                let r = 0.95 * rng.gen::<f64>() / norm(&v);
                let z = Point(v.iter().map(|x| x * r).collect());
                let q = quotient_upper(&ball, &z, &quick()).unwrap();
                assert!((q.m_upper - 1.0).abs() < 1e-6, "{}", q.m_upper);
            }
        }
    }

    #[test]
    fn egg_center_values() {
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        let e = circular_center_exact(&egg, &quick()).unwrap();
        // independent closed forms: the ball is the largest ellipsoid in the
        // egg, and diag(a, b) maps the egg into the ball for ab ≤ √(3√3/8)
        assert!((e.k_upper - 1.0).abs() < 1e-6, "{}", e.k_upper);
        assert!((e.c_lower - (3.0 * 3f64.sqrt() / 8.0).sqrt()).abs() < 1e-6, "{}", e.c_lower);
        assert!((e.m_upper - 1.240806).abs() < 1e-5);
        let ball_like = circular_center_exact(&DomainSpec::egg(vec![1, 1]).unwrap(), &quick()).unwrap();
        assert!((ball_like.m_upper - 1.0).abs() < 1e-6);
        // the general-linear cross-check does not beat the diagonal optimum
        let lc = &e.witnesses[2];
        let det = lc.jacobian_det(&[c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(det <= e.c_lower * (1.0 + 1e-6), "{det}");
    }

    #[test]
    fn egg_quotient_respects_the_centre_value() {
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        let q = quotient_upper(&egg, &Point::origin(2), &quick()).unwrap();
        assert!(q.m_upper >= 1.240806 - 1e-6, "{}", q.m_upper);
        assert!(q.m_upper <= 1.240806 * 1.01, "{}", q.m_upper);
        // witnesses map into their targets
        let (phi, psi) = (&q.witnesses[0], &q.witnesses[1]);
        let ball = DomainSpec::ball(2).unwrap();
        let out = sampling::domain_boundary_max(&egg, 4096, 4, |w| norm(&phi.apply(w))).0;
        assert!(out <= 1.0 + 1e-9, "{out}");
        let worst = sampling::sphere_max(2, 4096, 4, |u| egg.defining_value(&psi.apply(u)).unwrap()).0;
        assert!(worst <= 1e-9, "{worst}");
        let _ = ball;
    }

    #[test]
    fn quotient_bounds_at_or_above_one() {
        let budget = quick();
        for (dom, z) in [
            (DomainSpec::egg(vec![1, 2]).unwrap(), Point::real(&[0.5, 0.3])),
            (DomainSpec::polydisc(vec![1.0, 2.0]).unwrap(), Point::real(&[0.2, -0.5])),
            (DomainSpec::lempert(0.5).unwrap(), Point::real(&[0.3, 0.2])),
        ] {
            let q = quotient_upper(&dom, &z, &budget).unwrap();
            assert!(q.m_upper >= 1.0 - 1e-9, "{:?} {}", dom.kind(), q.m_upper);
            let psi = &q.witnesses[1];
            let origin = [c(0.0, 0.0), c(0.0, 0.0)];
            assert!(psi.apply(&origin).iter().zip(z.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
            assert!((1.0 / psi.jacobian_det(&origin) - q.k_upper).abs() < 1e-5 * q.k_upper);
        }
    }

    #[test]
    fn polydisc_model_quotients() {
        let budget = quick();
        let model = ModelSpec::unit_polydisc(2);
        let pd = DomainSpec::polydisc(vec![1.0, 1.0]).unwrap();
        let q = model_quotient(&pd, &Point::origin(2), &model, &budget).unwrap();
        assert!((q.m_upper - 1.0).abs() < 1e-6, "{}", q.m_upper);
        let ball = DomainSpec::ball(2).unwrap();
        let q = model_quotient(&ball, &Point::origin(2), &model, &budget).unwrap();
        assert!(q.m_upper > 1.5 && q.m_upper < 2.0 * 1.01, "{}", q.m_upper);
        let sb = DomainSpec::stretched_ball(4.0).unwrap();
        let q = model_quotient(&sb, &Point::origin(2), &model, &budget).unwrap();
        assert!(q.m_upper > 1.5, "{}", q.m_upper);
        let psi = &q.witnesses[1];
        let worst = sampling::torus_max(&[1.0, 1.0], 4096, 4, |u| sb.defining_value(&psi.apply(u)).unwrap()).0;
        assert!(worst <= 1e-9);
        let bad = ModelSpec::new(DomainSpec::ball(2).unwrap(), Point::origin(2)).unwrap();
        assert!(model_quotient(&ball, &Point::origin(2), &bad, &budget).is_err());
    }

    #[test]
    fn averaging_examples() {
        let one = c(1.0, 0.0);
        let f = PolyMap2::from_terms(&[(0, 1, 0, one), (0, 0, 2, one), (1, 0, 1, one), (1, 1, 1, one)]);
        let d = circular_average(&f, AveragingWeights::PerComponent, 8).unwrap();
        assert!((d[0] - one).norm() < 1e-14 && (d[1] - one).norm() < 1e-14);
        let k = c(0.3, -2.0);
        let g = PolyMap2::from_terms(&[(0, 1, 0, k)]);
        let d = circular_average(&g, AveragingWeights::PerComponent, 2).unwrap();
        assert!((d[0] - k).norm() < 1e-15 && d[1].norm() < 1e-15);
        let swap = PolyMap2::from_terms(&[(0, 0, 1, one), (1, 1, 0, one)]);
        let d = circular_average(&swap, AveragingWeights::PerComponent, 4).unwrap();
        assert!(d[0].norm() < 1e-15 && d[1].norm() < 1e-15);
        // the product weight picks out the z1 z2 coefficient instead
        let d = circular_average(&f, AveragingWeights::Product, 8).unwrap();
        assert!(d[0].norm() < 1e-14 && (d[1] - one).norm() < 1e-14);
        assert!(circular_average(&f, AveragingWeights::PerComponent, 2).is_err());
    }

    fn random_map(rng: &mut ChaCha8Rng, deg: usize) -> PolyMap2 {
        let mut terms = vec![];
        for j in 0..2 {
            for p in 0..=deg {
                for q in 0..=deg - p {
                    terms.push((j, p, q, c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)));
                }
            }
        }
        PolyMap2::from_terms(&terms)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn averaging_is_idempotent_and_extracts_derivatives(seed in 0u64..1000, deg in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_map(&mut rng, deg);
            let d = circular_average(&f, AveragingWeights::PerComponent, deg + 1).unwrap();
            prop_assert!((d[0] - f.coefficient(0, 1, 0)).norm() < 1e-12);
            prop_assert!((d[1] - f.coefficient(1, 0, 1)).norm() < 1e-12);
            let lin = PolyMap2::from_terms(&[(0, 1, 0, d[0]), (1, 0, 1, d[1])]);
            let again = circular_average(&lin, AveragingWeights::PerComponent, deg + 1).unwrap();
            prop_assert!((again[0] - d[0]).norm() < 1e-12 && (again[1] - d[1]).norm() < 1e-12);
        }
    }
}
