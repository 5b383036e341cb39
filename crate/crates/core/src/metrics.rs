//! Bounds for the infinitesimal Kobayashi and Carathéodory metrics.
//!
//! Upper bounds for `F_K` come from explicit analytic discs, lower bounds for
//! `F_C` from explicit maps into the unit disc; both are certified by
//! sampling. All computations run on the unit direction `ξ/|ξ|` and are scaled
//! by `|ξ|` at the end, so every bound is exactly homogeneous in `ξ`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discs::{bounded_polynomial, AnalyticDisc, DEFAULT_SLACK};
use crate::domains::{Direction, DomainKind, DomainSpec, Point};
use crate::error::{Error, Result};
use crate::maps::{self, BallAutomorphism};
use crate::optimize::{bisect_last_true, NelderMead, OptimizerBudget};
use crate::sampling;
use crate::{hdot, norm};

type C = Complex64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricQuery {
    pub point: Point,
    pub direction: Direction,
}

impl MetricQuery {
    pub fn new(point: Point, direction: Direction) -> Result<Self> {
        if point.dim() != direction.dim() {
            return Err(Error::DimensionMismatch { expected: point.dim(), got: direction.dim() });
        }
        if !(direction.norm() > 0.0) {
            return Err(Error::InvalidArgument("direction must be nonzero".into()));
        }
        Ok(Self { point, direction })
    }

    fn check(&self, domain: &DomainSpec) -> Result<(Vec<C>, f64)> {
        let rho = domain.defining_value(&self.point)?;
        if rho >= 0.0 {
            return Err(Error::OutsideDomain(rho));
        }
        if self.direction.dim() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: self.direction.dim() });
        }
        let len = self.direction.norm();
        if !(len > 0.0) {
            return Err(Error::InvalidArgument("direction must be nonzero".into()));
        }
        Ok((self.direction.unit()?.0, len))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    Upper,
    Lower,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateFamily {
    /// `u ↦ m_w(ℓ·u)`, parameters `[ℓ_1..ℓ_n, w]` with `sup_Ω |ℓ·u| = 1`.
    LinearFunctionalMobius,
    /// `u ↦ m_w(ℓ·g_α(u))` with `g_α` the egg automorphism moving `(α, 0, …)`
    /// to the origin; parameters `[α, ℓ_1..ℓ_n, w, m_1..m_n]`.
    EggAutomorphismComponent,
    /// `u ↦ ⟨Φ_a(u/d), v⟩` for ball images `d·B`; parameters
    /// `[a_1..a_n, v_1..v_n, d_1..d_n]`.
    BallAutomorphismComponent,
}

/// A holomorphic map from a domain into the unit disc.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateMap {
    pub family: CandidateFamily,
    pub parameters: Vec<C>,
}

/// `s ↦ (s − w)/(1 − conj(w) s)`.
fn mobius(w: C, s: C) -> C {
    maps::disc_mobius(w, s)
}

fn bilinear(l: &[C], v: &[C]) -> C {
    l.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// The egg automorphism `g_α` and its derivative, for exponents with `m_1 = 1`.
fn egg_automorphism(alpha: C, m: &[f64], u: &[C]) -> Vec<C> {
    let s = 1.0 - alpha.norm_sqr();
    let den = C::new(1.0, 0.0) - alpha.conj() * u[0];
    let mut out = vec![(u[0] - alpha) / den];
    for j in 1..u.len() {
        out.push(u[j] * s.powf(0.5 / m[j]) * (-den.ln() / m[j]).exp());
    }
    out
}

fn egg_automorphism_derivative(alpha: C, m: &[f64], u: &[C], xi: &[C]) -> Vec<C> {
    let s = 1.0 - alpha.norm_sqr();
    let den = C::new(1.0, 0.0) - alpha.conj() * u[0];
    let mut out = vec![xi[0] * s / (den * den)];
    for j in 1..u.len() {
        let c = s.powf(0.5 / m[j]);
        let p = (-den.ln() / m[j]).exp();
        out.push(c * p * (xi[j] + u[j] * alpha.conj() * xi[0] / (m[j] * den)));
    }
    out
}

impl CandidateMap {
    fn split(&self, n: usize) -> (&[C], &[C], &[C]) {
        let p = &self.parameters;
        (&p[..n], &p[n..2 * n], &p[2 * n..])
    }

    fn egg_parts(&self, n: usize) -> (C, &[C], C, Vec<f64>) {
        let p = &self.parameters;
        (p[0], &p[1..=n], p[n + 1], p[n + 2..].iter().map(|c| c.re).collect())
    }

    /// Dimension of the source domain.
    pub fn dim(&self) -> usize {
        match self.family {
            CandidateFamily::LinearFunctionalMobius => self.parameters.len() - 1,
            CandidateFamily::EggAutomorphismComponent => (self.parameters.len() - 2) / 2,
            CandidateFamily::BallAutomorphismComponent => self.parameters.len() / 3,
        }
    }

    pub fn evaluate(&self, u: &[C]) -> C {
        let n = self.dim();
        match self.family {
            CandidateFamily::LinearFunctionalMobius => {
                let p = &self.parameters;
                mobius(p[n], bilinear(&p[..n], u))
            }
            CandidateFamily::EggAutomorphismComponent => {
                let (alpha, l, w, m) = self.egg_parts(n);
                mobius(w, bilinear(l, &egg_automorphism(alpha, &m, u)))
            }
            CandidateFamily::BallAutomorphismComponent => {
                let (a, v, d) = self.split(n);
                let d: Vec<f64> = d.iter().map(|c| c.re).collect();
                hdot(&BallAutomorphism::new(a).apply(&maps::unscale(u, &d)), v)
            }
        }
    }

    /// `f'(u) ξ`.
    pub fn derivative(&self, u: &[C], xi: &[C]) -> C {
        let n = self.dim();
        let dmob = |w: C, s: C| maps::disc_mobius_derivative(w, s);
        match self.family {
            CandidateFamily::LinearFunctionalMobius => {
                let p = &self.parameters;
                dmob(p[n], bilinear(&p[..n], u)) * bilinear(&p[..n], xi)
            }
            CandidateFamily::EggAutomorphismComponent => {
                let (alpha, l, w, m) = self.egg_parts(n);
                let g = egg_automorphism(alpha, &m, u);
                let dg = egg_automorphism_derivative(alpha, &m, u, xi);
                dmob(w, bilinear(l, &g)) * bilinear(l, &dg)
            }
            CandidateFamily::BallAutomorphismComponent => {
                let (a, v, d) = self.split(n);
                let d: Vec<f64> = d.iter().map(|c| c.re).collect();
                let dphi = BallAutomorphism::new(a).derivative(&maps::unscale(u, &d), &maps::unscale(xi, &d));
                hdot(&dphi, v)
            }
        }
    }

    /// Sampled `sup |f|` over the boundary of the domain (≤ 1 for a valid
    /// candidate, up to sampling).
    pub fn boundary_sup(&self, domain: &DomainSpec, samples: usize) -> f64 {
        sampling::domain_boundary_max(domain, samples, 4, |w| self.evaluate(w).norm()).0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Witness {
    Disc(AnalyticDisc),
    Map(CandidateMap),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBound {
    pub value: f64,
    pub kind: BoundKind,
    pub method: String,
    pub witness: Option<Witness>,
}

impl MetricBound {
    fn new(value: f64, kind: BoundKind, method: impl Into<String>, witness: Option<Witness>) -> Self {
        Self { value, kind, method: method.into(), witness }
    }
}

/// Polydisc metric `max_j |ξ_j| r_j / (r_j² − |z_j|²)`.
pub fn polydisc_metric(radii: &[f64], z: &[C], xi: &[C]) -> f64 {
    radii
        .iter()
        .zip(z.iter().zip(xi))
        .map(|(r, (a, x))| x.norm() * r / (r * r - a.norm_sqr()))
        .fold(0.0, f64::max)
}

/// Closed-form `F_K` for the ball, the polydisc and the stretched ball.
pub fn kobayashi_exact_model(domain: &DomainSpec, q: &MetricQuery) -> Result<MetricBound> {
    let (u, len) = q.check(domain)?;
    let z = q.point.as_slice();
    let (value, method) = match domain.kind() {
        DomainKind::Ball { .. } => (maps::ball_metric(z, &u), "ball closed form"),
        DomainKind::Polydisc { radii } => (polydisc_metric(radii, z, &u), "polydisc closed form"),
        DomainKind::StretchedBall { .. } => {
            let d = maps::ball_model_scaling(domain).expect("stretched ball has a ball model");
            (maps::ball_metric(&maps::unscale(z, &d), &maps::unscale(&u, &d)), "pullback of the ball metric")
        }
        other => return Err(Error::Unsupported(format!("no closed-form metric for {other:?}"))),
    };
    Ok(MetricBound::new(len * value, BoundKind::Exact, method, None))
}

/// `F_K` of the smallest circumscribing ball or polydisc, whichever is larger:
/// a lower bound by monotonicity of `F_K` under inclusion.
pub fn kobayashi_lower_inclusion(domain: &DomainSpec, q: &MetricQuery) -> Result<MetricBound> {
    let (u, len) = q.check(domain)?;
    let z = q.point.as_slice();
    if let DomainKind::Ball { .. } | DomainKind::Polydisc { .. } = domain.kind() {
        let exact = kobayashi_exact_model(domain, q)?;
        return Ok(MetricBound::new(exact.value, BoundKind::Lower, "self inclusion", None));
    }
    let radius = domain.circumscribing_radius();
    let shrunk: Vec<C> = z.iter().map(|c| c / radius).collect();
    let in_ball = maps::ball_metric(&shrunk, &u) / radius;
    let radii = domain.coordinate_bounds();
    let in_polydisc = polydisc_metric(&radii, z, &u);
    let (value, method) = if in_polydisc >= in_ball {
        (in_polydisc, format!("circumscribing polydisc {radii:?}"))
    } else {
        (in_ball, format!("circumscribing ball of radius {radius:.6}"))
    };
    Ok(MetricBound::new(len * value, BoundKind::Lower, method, None))
}

/// Best linear functional at `(z, u)`: maximizes `|ℓ·u| / (S (1 − |ℓ·z/S|²))`
/// with `S = sup_Ω |ℓ·w|` over the unit sphere of functionals.
fn best_functional(domain: &DomainSpec, z: &[C], u: &[C]) -> (f64, CandidateMap) {
    let n = z.len();
    let score = |l: &[C]| -> f64 {
        let s = domain.linear_sup(l);
        let w = bilinear(l, z) / s;
        bilinear(l, u).norm() / (s * (1.0 - w.norm_sqr()))
    };
    let samples = if n <= 2 { 2048 } else { 4096 };
    let (value, l) = sampling::sphere_max(n, samples, 4, score);
    let s = domain.linear_sup(&l);
    let mut params: Vec<C> = l.iter().map(|c| c / s).collect();
    params.push(bilinear(&params, z));
    (value, CandidateMap { family: CandidateFamily::LinearFunctionalMobius, parameters: params })
}

/// Lower bound for `F_C`: the best of the linear-functional Möbius maps and,
/// where available, automorphism-based candidates.
pub fn caratheodory_lower(domain: &DomainSpec, q: &MetricQuery, _budget: &OptimizerBudget) -> Result<MetricBound> {
    let (u, len) = q.check(domain)?;
    let z = q.point.as_slice();
    let (mut best, map) = best_functional(domain, z, &u);
    let mut bound = MetricBound::new(0.0, BoundKind::Lower, "linear functional + Möbius", Some(Witness::Map(map)));

    if let Some(d) = maps::ball_model_scaling(domain) {
        let a = maps::unscale(z, &d);
        let eta = maps::unscale(&u, &d);
        let image = BallAutomorphism::new(&a).derivative(&a, &eta);
        let value = norm(&image);
        if value >= best {
            best = value;
            let mut params = a.clone();
            params.extend(maps::unit(&image));
            params.extend(d.iter().map(|s| C::new(*s, 0.0)));
            bound.method = "ball automorphism component".into();
            bound.witness = Some(Witness::Map(CandidateMap { family: CandidateFamily::BallAutomorphismComponent, parameters: params }));
        }
    }

    if let DomainKind::Egg { exponents } = domain.kind() {
        if exponents[0] == 1 {
            let m: Vec<f64> = exponents.iter().map(|&e| e as f64).collect();
            let alpha = z[0];
            let z2 = egg_automorphism(alpha, &m, z);
            let u2 = egg_automorphism_derivative(alpha, &m, z, &u);
            let (value, inner) = best_functional(domain, &z2, &u2);
            if value > best {
                best = value;
                let mut params = vec![alpha];
                params.extend_from_slice(&inner.parameters);
                params.extend(m.iter().map(|v| C::new(*v, 0.0)));
                bound.method = "egg automorphism + linear functional".into();
                bound.witness = Some(Witness::Map(CandidateMap { family: CandidateFamily::EggAutomorphismComponent, parameters: params }));
            }
        }
    }
    bound.value = len * best;
    Ok(bound)
}

/// Smallest exit parameter `s > 0` of `z + (c + s e^{iθ}) u` from the domain.
pub(crate) fn slice_exit(domain: &DomainSpec, z: &[C], u: &[C], c: C, theta: f64) -> f64 {
    let start: Vec<C> = z.iter().zip(u).map(|(a, b)| a + b * c).collect();
    if domain.rho(&start) >= 0.0 {
        return 0.0;
    }
    let dir = C::from_polar(1.0, theta);
    let v: Vec<C> = u.iter().map(|b| b * dir).collect();
    domain.ray_exit(&start, &v)
}

/// Radius of the largest disc centred at `c` inside the slice `{λ : z + λu ∈ Ω}`.
pub(crate) fn slice_inradius(domain: &DomainSpec, z: &[C], u: &[C], c: C) -> f64 {
    (0..96)
        .map(|k| slice_exit(domain, z, u, c, std::f64::consts::TAU * k as f64 / 96.0))
        .fold(f64::INFINITY, f64::min)
}

/// Disc through `z` along `u` built from the round disc `D(c, R)` in the slice
/// that maximizes the Möbius derivative `(R² − |c|²)/R`; the Möbius map is
/// replaced by its best bounded polynomial of the budget degree.
fn slice_seed(domain: &DomainSpec, z: &[C], u: &[C], degree: usize) -> (AnalyticDisc, f64) {
    let gain = |c: C| -> f64 {
        let r = slice_inradius(domain, z, u, c);
        if r <= c.norm() {
            return 0.0;
        }
        (r * r - c.norm_sqr()) / r
    };
    let r0 = slice_inradius(domain, z, u, C::new(0.0, 0.0));
    let nm = NelderMead { max_iterations: 80, f_tol: 1e-10, ..Default::default() };
    let res = nm.minimize(|x| -gain(C::new(x[0], x[1])), &[0.0, 0.0], &[r0 / 4.0, r0 / 4.0]);
    let mut c = C::new(res.x[0], res.x[1]);
    if -res.value < r0 {
        c = C::new(0.0, 0.0);
    }
    let r = slice_inradius(domain, z, u, c);
    let w = -c / r;
    let q = bounded_polynomial(w.norm().min(1.0 - 1e-12), degree.max(1));
    let gamma = w.arg();
    let mut coeffs = vec![z.to_vec()];
    for (k, qk) in q.iter().enumerate().skip(1) {
        let lam = C::from_polar(r * qk, gamma * (1.0 - k as f64));
        coeffs.push(u.iter().map(|b| b * lam).collect());
    }
    (AnalyticDisc::from_coeffs_unchecked(coeffs), r * q[1])
}

/// Componentwise best bounded polynomials for the polydisc: every coordinate
/// is a bounded polynomial in its own factor, the binding one at full speed.
fn polydisc_seed(radii: &[f64], z: &[C], u: &[C], degree: usize) -> (AnalyticDisc, f64) {
    let n = z.len();
    let polys: Vec<Vec<f64>> = (0..n).map(|j| bounded_polynomial((z[j].norm() / radii[j]).min(1.0 - 1e-12), degree.max(1))).collect();
    let t = (0..n)
        .filter(|&j| u[j].norm() > 0.0)
        .map(|j| radii[j] * polys[j][1] / u[j].norm())
        .fold(f64::INFINITY, f64::min);
    let deg = degree.max(1);
    let mut coeffs = vec![z.to_vec(); deg + 1];
    for j in 0..n {
        let gamma = z[j].arg();
        let (lam, beta) = if u[j].norm() > 0.0 { (t * u[j].norm() / (radii[j] * polys[j][1]), u[j].arg()) } else { (0.0, 0.0) };
        for k in 1..=deg {
            // r e^{iγ} q_k (e^{i(β−γ)} λ)^k
            coeffs[k][j] = C::from_polar(radii[j] * polys[j][k] * lam.powi(k as i32), gamma + k as f64 * (beta - gamma));
        }
    }
    (AnalyticDisc::from_coeffs_unchecked(coeffs), t)
}

/// Largest dilation `ρ ≤ 1` for which `φ(ρ ζ)` passes the sampled feasibility
/// test with the given slack.
pub(crate) fn fit_by_dilation(disc: &AnalyticDisc, domain: &DomainSpec, slack: f64) -> (AnalyticDisc, f64) {
    let ok = |rho: f64| disc.dilate(rho).default_margin(domain).is_feasible(slack);
    if ok(1.0) {
        return (disc.clone(), 1.0);
    }
    let rho = bisect_last_true(ok, 0.0, 1.0, 40);
    (disc.dilate(rho), rho)
}

/// Upper bound for `F_K(z, ξ)` from an explicit feasible analytic disc
/// `φ(0) = z`, `φ'(0) = t ξ/|ξ|`: the value is `|ξ|/t`.
///
/// Seeds (slice-inscribed Möbius disc, componentwise polydisc disc) are made
/// feasible by dilation and then, except on the kinds where the seeds track
/// the extremal discs, refined by penalized Nelder–Mead over `t` and the
/// coefficients of degree 2..5, the penalty weight growing tenfold per restart.
pub fn kobayashi_upper(domain: &DomainSpec, q: &MetricQuery, budget: &OptimizerBudget) -> Result<MetricBound> {
    let (u, len) = q.check(domain)?;
    let z = q.point.as_slice();
    let degree = budget.degree.max(1);
    let mut seeds = vec![("slice Möbius disc", slice_seed(domain, z, &u, degree))];
    if let DomainKind::Polydisc { radii } = domain.kind() {
        seeds.push(("componentwise polydisc disc", polydisc_seed(radii, z, &u, degree)));
    }
    let mut best: Option<(&str, AnalyticDisc, f64)> = None;
    for (name, (disc, t)) in seeds {
        let (fitted, rho) = fit_by_dilation(&disc, domain, DEFAULT_SLACK);
        let t_eff = t * rho;
        if t_eff > 0.0 && best.as_ref().is_none_or(|b| t_eff > b.2) {
            best = Some((name, fitted, t_eff));
        }
    }
    let Some((name, disc, t)) = best else {
        return Err(Error::NoFeasibleDisc("every seed collapsed to the constant disc".into()));
    };
    // On the ball, the stretched ball and the polydisc the seeds already follow
    // the extremal discs; refinement only pays off on the other kinds.
    let extremal_seed = matches!(domain.kind(), DomainKind::Ball { .. } | DomainKind::StretchedBall { .. } | DomainKind::Polydisc { .. });
    let (method, disc, t) = if !extremal_seed && budget.restarts > 0 && budget.max_iterations > 0 {
        let (d, t2) = refine_disc(domain, z, &u, disc.clone(), t, budget);
        if t2 > t {
            (format!("{name} + Nelder-Mead refinement"), d, t2)
        } else {
            (name.to_string(), disc, t)
        }
    } else {
        (name.to_string(), disc, t)
    };
    Ok(MetricBound::new(len / t, BoundKind::Upper, method, Some(Witness::Disc(disc))))
}

fn refine_disc(domain: &DomainSpec, z: &[C], u: &[C], seed: AnalyticDisc, t0: f64, budget: &OptimizerBudget) -> (AnalyticDisc, f64) {
    let n = z.len();
    let base = seed.coefficients().to_vec();
    let top = base.len().saturating_sub(1).min(5);
    let build = |x: &[f64]| -> AnalyticDisc {
        let mut coeffs = base.clone();
        coeffs[1] = u.iter().map(|b| b * x[0]).collect();
        let mut i = 1;
        for a in coeffs.iter_mut().take(top + 1).skip(2) {
            for c in a.iter_mut() {
                *c += C::new(x[i], x[i + 1]);
                i += 2;
            }
        }
        AnalyticDisc::from_coeffs_unchecked(coeffs)
    };
    let dims = 1 + 2 * n * top.saturating_sub(1);
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut best_x = vec![0.0; dims];
    best_x[0] = t0;
    let mut best = (seed, t0);
    let mut mu = 10.0;
    for _ in 0..budget.restarts {
        let start: Vec<f64> = best_x
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 0 { *v } else { v + 0.02 * t0 * (rng.gen::<f64>() - 0.5) })
            .collect();
        let step = vec![0.05 * t0; dims];
        let nm = NelderMead { max_iterations: budget.max_iterations, f_tol: 1e-12, ..Default::default() };
        let res = nm.minimize(
            |x| {
                if x[0] <= 0.0 {
                    return f64::INFINITY;
                }
                let m = build(x).default_margin(domain).margin;
                -x[0] + mu * (m + DEFAULT_SLACK).max(0.0)
            },
            &start,
            &step,
        );
        let (fitted, rho) = fit_by_dilation(&build(&res.x), domain, DEFAULT_SLACK);
        let t = res.x[0] * rho;
        if t > best.1 {
            best = (fitted, t);
            best_x = res.x;
        }
        mu *= 10.0;
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EggDirection {
    Normal,
    Tangential,
}

/// Closed-form two-sided bounds at `(α, 0)` of `Egg(1, m)`: the normal
/// direction `(1, 0)` is bounded by the first-coordinate disc and Möbius map,
/// the tangential direction `(0, 1)` by the linear disc through `(α, 0)` and
/// the egg-automorphism component. Returns `(upper, lower)`.
pub fn egg_direction_bounds(m: u32, alpha: f64, direction: EggDirection) -> Result<(MetricBound, MetricBound)> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} outside [0, 1)")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("egg exponent must be positive".into()));
    }
    let zero = C::new(0.0, 0.0);
    let one = C::new(1.0, 0.0);
    let a = C::new(alpha, 0.0);
    let z = [a, zero];
    let s = 1.0 - alpha * alpha;
    Ok(match direction {
        EggDirection::Normal => {
            let disc = AnalyticDisc::linear(&Point(vec![zero, zero]), &[one, zero]);
            let upper = MetricBound::new(1.0 / s, BoundKind::Upper, "disc ζ ↦ (ζ, 0) with node α", Some(Witness::Disc(disc)));
            let map = CandidateMap { family: CandidateFamily::LinearFunctionalMobius, parameters: vec![one, zero, a] };
            let value = map.derivative(&z, &[one, zero]).norm();
            (upper, MetricBound::new(value, BoundKind::Lower, "first-coordinate Möbius map", Some(Witness::Map(map))))
        }
        EggDirection::Tangential => {
            let r = s.powf(0.5 / m as f64);
            let disc = AnalyticDisc::linear(&Point(z.to_vec()), &[zero, C::new(r, 0.0)]);
            let upper = MetricBound::new(1.0 / r, BoundKind::Upper, "linear disc through (α, 0)", Some(Witness::Disc(disc)));
            let map = CandidateMap {
                family: CandidateFamily::EggAutomorphismComponent,
                parameters: vec![a, zero, one, zero, one, C::new(m as f64, 0.0)],
            };
            let value = map.derivative(&z, &[zero, one]).norm();
            (upper, MetricBound::new(value, BoundKind::Lower, "egg automorphism component", Some(Witness::Map(map))))
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparabilityReport {
    pub lower1: MetricBound,
    pub lower2: MetricBound,
    pub difference: f64,
}

/// `caratheodory_lower` along two unit directions at `p`, restricted to the
/// compact set `{boundary_distance ≥ compact_margin}`.
pub fn direction_comparability_report(
    domain: &DomainSpec,
    p: &Point,
    xi1: &Direction,
    xi2: &Direction,
    compact_margin: f64,
    budget: &OptimizerBudget,
) -> Result<ComparabilityReport> {
    for xi in [xi1, xi2] {
        if (xi.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("directions must be Euclidean unit vectors".into()));
        }
    }
    let d = domain.boundary_distance(p)?;
    if d < compact_margin {
        return Err(Error::InvalidArgument(format!("boundary distance {d:.3e} below the compact-set margin {compact_margin:.3e}")));
    }
    let lower1 = caratheodory_lower(domain, &MetricQuery::new(p.clone(), xi1.clone())?, budget)?;
    let lower2 = caratheodory_lower(domain, &MetricQuery::new(p.clone(), xi2.clone())?, budget)?;
    let difference = (lower1.value - lower2.value).abs();
    Ok(ComparabilityReport { lower1, lower2, difference })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn query(z: &[C], xi: &[C]) -> MetricQuery {
        MetricQuery::new(Point(z.to_vec()), Direction(xi.to_vec())).unwrap()
    }

    fn quick() -> OptimizerBudget {
        OptimizerBudget { max_iterations: 60, restarts: 2, ..Default::default() }
    }

    #[test]
    fn exact_model_values() {
        let o = [c(0.0, 0.0), c(0.0, 0.0)];
        let ball = DomainSpec::ball(2).unwrap();
        assert_eq!(kobayashi_exact_model(&ball, &query(&o, &[c(1.0, 0.0), c(0.0, 0.0)])).unwrap().value, 1.0);
        let sb = DomainSpec::stretched_ball(4.0).unwrap();
        assert_eq!(kobayashi_exact_model(&sb, &query(&o, &[c(1.0, 0.0), c(0.0, 0.0)])).unwrap().value, 1.0);
        assert_eq!(kobayashi_exact_model(&sb, &query(&o, &[c(0.0, 0.0), c(1.0, 0.0)])).unwrap().value, 0.25);
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        assert!(kobayashi_exact_model(&egg, &query(&o, &[c(1.0, 0.0), c(0.0, 0.0)])).is_err());
        // polydisc: factor metric |ξ| r/(r² − |z|²)
        let pd = DomainSpec::polydisc(vec![1.0, 2.0]).unwrap();
        let v = kobayashi_exact_model(&pd, &query(&[c(0.5, 0.0), c(1.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)])).unwrap().value;
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn upper_bounds_on_models() {
        let ball = DomainSpec::ball(2).unwrap();
        let b = kobayashi_upper(&ball, &query(&[c(0.0, 0.0), c(0.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)]), &quick()).unwrap();
        assert!(b.value >= 1.0 && b.value <= 1.02, "{}", b.value);
        let pd = DomainSpec::polydisc(vec![1.0, 1.0]).unwrap();
        let b = kobayashi_upper(&pd, &query(&[c(0.0, 0.0), c(0.0, 0.0)], &[c(1.0, 0.0), c(1.0, 0.0)]), &quick()).unwrap();
        assert!(b.value >= 1.0 && b.value <= 1.02, "{}", b.value);
        // off-centre, oblique: the seeds are near-extremal
        let z = [c(0.4, -0.3), c(0.2, 0.1)];
        let xi = [c(0.3, 0.2), c(-1.0, 0.4)];
        let exact = maps::ball_metric(&z, &maps::unit(&xi)) * norm(&xi);
        let b = kobayashi_upper(&ball, &query(&z, &xi), &quick()).unwrap();
        assert!(b.value >= exact * (1.0 - 1e-9) && b.value <= exact * 1.02, "{} vs {exact}", b.value);
        let z = [c(0.7, 0.0), c(-0.3, 0.5)];
        let exact = polydisc_metric(&[1.0, 1.0], &z, &maps::unit(&xi)) * norm(&xi);
        let b = kobayashi_upper(&pd, &query(&z, &xi), &quick()).unwrap();
        assert!(b.value >= exact * (1.0 - 1e-9) && b.value <= exact * 1.02, "{} vs {exact}", b.value);
    }

    #[test]
    fn witness_discs_are_feasible_and_tangent() {
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        let z = [c(0.3, 0.1), c(0.2, -0.4)];
        let xi = [c(1.0, 0.0), c(0.5, 0.5)];
        let b = kobayashi_upper(&egg, &query(&z, &xi), &quick()).unwrap();
        let Some(Witness::Disc(d)) = &b.witness else { panic!() };
        assert!(d.default_margin(&egg).is_feasible(DEFAULT_SLACK));
        assert_eq!(d.coefficients()[0], z.to_vec());
        let a1 = &d.coefficients()[1];
        let t = norm(a1);
        assert!((b.value - norm(&xi) / t).abs() < 1e-12);
        let u = maps::unit(&xi);
        assert!(a1.iter().zip(&u).all(|(a, b)| (a / t - b).norm() < 1e-12));
        // feasible in Egg(1,2) implies feasible in its circumscribing ball
        let r = egg.circumscribing_radius();
        let big = DomainSpec::ball(2).unwrap();
        let shrunk = AnalyticDisc::from_coeffs_unchecked(d.coefficients().iter().map(|a| a.iter().map(|v| v / r).collect()).collect());
        assert!(shrunk.default_margin(&big).margin <= 0.0);
    }

    #[test]
    fn egg_linear_disc_example() {
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        for alpha in [0.0, 0.5, 0.9] {
            let b = kobayashi_upper(&egg, &query(&[c(alpha, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)]), &quick()).unwrap();
            let target = (1.0 - alpha * alpha).powf(-0.25);
            assert!(b.value <= target * 1.01, "alpha={alpha}: {} vs {target}", b.value);
        }
    }

    #[test]
    fn inclusion_lower_bounds() {
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        let o = [c(0.0, 0.0), c(0.0, 0.0)];
        let b = kobayashi_lower_inclusion(&egg, &query(&o, &[c(1.0, 0.0), c(0.0, 0.0)])).unwrap();
        // Egg(1,2) sits in the unit bidisc, which beats the ball of radius √1.25 here
        assert!((b.value - 1.0).abs() < 1e-12, "{}", b.value);
        let b = kobayashi_lower_inclusion(&egg, &query(&o, &[c(0.6, 0.0), c(0.8, 0.0)])).unwrap();
        assert!((b.value - 1.0 / 1.25f64.sqrt()).abs() < 1e-6, "{}", b.value);
        let lem = DomainSpec::lempert(0.5).unwrap();
        let b = kobayashi_lower_inclusion(&lem, &query(&[c(1.0, 0.0), c(0.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)])).unwrap();
        assert!((b.value - 2.0 / 3.0).abs() < 1e-12);
        let ball = DomainSpec::ball(2).unwrap();
        let xi = [c(0.3, 0.4), c(0.0, 1.2)];
        assert!((kobayashi_lower_inclusion(&ball, &query(&o, &xi)).unwrap().value - norm(&xi)).abs() < 1e-15);
    }

    #[test]
    fn caratheodory_examples() {
        let o = [c(0.0, 0.0), c(0.0, 0.0)];
        let ball = DomainSpec::ball(2).unwrap();
        let b = caratheodory_lower(&ball, &query(&o, &[c(1.0, 0.0), c(0.0, 0.0)]), &quick()).unwrap();
        assert!((b.value - 1.0).abs() < 1e-12);
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        for alpha in [0.0, 0.5, 0.9] {
            let b = caratheodory_lower(&egg, &query(&[c(alpha, 0.0), c(0.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)]), &quick()).unwrap();
            assert!(b.value >= 1.0 / (1.0 - alpha * alpha) - 1e-9);
        }
        let sb = DomainSpec::stretched_ball(4.0).unwrap();
        let b = caratheodory_lower(&sb, &query(&o, &[c(0.0, 0.0), c(1.0, 0.0)]), &quick()).unwrap();
        assert!(b.value >= 0.25 - 1e-12);
        // the ball automorphism component is exact off-centre
        let z = [c(0.2, 0.3), c(-0.4, 0.1)];
        let xi = [c(0.7, -0.1), c(0.2, 0.5)];
        let b = caratheodory_lower(&ball, &query(&z, &xi), &quick()).unwrap();
        assert!((b.value - maps::ball_metric(&z, &xi)).abs() < 1e-12);
    }

    #[test]
    fn candidate_maps_send_domain_into_disc() {
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        let z = [c(0.4, 0.2), c(0.3, -0.1)];
        let xi = [c(0.2, 0.0), c(1.0, 1.0)];
        let b = caratheodory_lower(&egg, &query(&z, &xi), &quick()).unwrap();
        let Some(Witness::Map(map)) = &b.witness else { panic!() };
        assert!(map.evaluate(&z).norm() < 1e-12);
        assert!(map.boundary_sup(&egg, 4096) <= 1.0 + 1e-9);
        assert!((map.derivative(&z, &xi).norm() - b.value).abs() < 1e-9 * b.value);
        for dom in [DomainSpec::ball(2).unwrap(), DomainSpec::stretched_ball(3.0).unwrap(), DomainSpec::lempert(0.1).unwrap()] {
            let z = [c(0.3, 0.0), c(0.0, 0.1)];
            let b = caratheodory_lower(&dom, &query(&z, &xi), &quick()).unwrap();
            let Some(Witness::Map(map)) = &b.witness else { panic!() };
            assert!(map.boundary_sup(&dom, 4096) <= 1.0 + 1e-9, "{:?}", dom.kind());
            assert!((map.derivative(&z, &xi).norm() - b.value).abs() < 1e-9 * b.value.max(1.0));
        }
    }

    #[test]
    fn egg_automorphism_preserves_egg() {
        let m = [1.0, 3.0];
        let alpha = c(0.5, -0.2);
        let egg = DomainSpec::egg(vec![1, 3]).unwrap();
        let (sup, _) = sampling::domain_boundary_max(&egg, 2048, 2, |w| egg.profile_value(&egg_automorphism(alpha, &m, w).iter().map(|v| v.norm()).collect::<Vec<_>>()).abs());
        assert!(sup < 1e-12, "{sup}");
        // derivative against finite differences
        let u = [c(0.1, 0.2), c(0.3, -0.1)];
        let xi = [c(0.5, -0.4), c(0.2, 0.7)];
        let h = 1e-6;
        let up: Vec<C> = u.iter().zip(&xi).map(|(a, b)| a + b * h).collect();
        let um: Vec<C> = u.iter().zip(&xi).map(|(a, b)| a - b * h).collect();
        let (gp, gm) = (egg_automorphism(alpha, &m, &up), egg_automorphism(alpha, &m, &um));
        let d = egg_automorphism_derivative(alpha, &m, &u, &xi);
        for j in 0..2 {
            assert!(((gp[j] - gm[j]) / (2.0 * h) - d[j]).norm() < 1e-8);
        }
    }

    #[test]
    fn egg_direction_examples() {
        let (u, l) = egg_direction_bounds(2, 0.0, EggDirection::Tangential).unwrap();
        assert!((u.value - 1.0).abs() < 1e-15 && (l.value - 1.0).abs() < 1e-15);
        let (u, l) = egg_direction_bounds(2, 0.5, EggDirection::Normal).unwrap();
        assert!((u.value - 4.0 / 3.0).abs() < 1e-14 && (l.value - 4.0 / 3.0).abs() < 1e-14);
        let (u, l) = egg_direction_bounds(2, 0.9, EggDirection::Tangential).unwrap();
        let v = 0.19f64.powf(-0.25);
        assert!((u.value - v).abs() < 1e-12 && (l.value - v).abs() < 1e-12 && (v - 1.514).abs() < 1e-3);
        assert!(egg_direction_bounds(2, 1.0, EggDirection::Normal).is_err());
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        let Some(Witness::Map(map)) = l.witness else { panic!() };
        assert!(map.boundary_sup(&egg, 4096) <= 1.0 + 1e-9);
    }

    #[test]
    fn comparability_reports() {
        let e1 = Direction::basis(2, 0);
        let e2 = Direction::basis(2, 1);
        let ball = DomainSpec::ball(2).unwrap();
        let r = direction_comparability_report(&ball, &Point::origin(2), &e1, &e2, 0.1, &quick()).unwrap();
        assert!(r.difference < 1e-12);
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        let r = direction_comparability_report(&egg, &Point::origin(2), &e1, &e2, 0.1, &quick()).unwrap();
        assert!(r.difference < 1e-9, "{}", r.difference);
        let r = direction_comparability_report(&egg, &Point::real(&[0.3, 0.0]), &e1, &e2, 0.1, &quick()).unwrap();
        assert!(r.difference.is_finite());
        assert!(direction_comparability_report(&egg, &Point::real(&[0.99, 0.0]), &e1, &e2, 0.1, &quick()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn caratheodory_below_kobayashi(x in prop::array::uniform4(-0.55f64..0.55), v in prop::array::uniform4(-1.0f64..1.0)) {
            let z = [c(x[0], x[1]), c(x[2], x[3]) * 0.8];
            let xi = [c(v[0], v[1]), c(v[2], v[3])];
            prop_assume!(norm(&xi) > 0.1);
            for dom in [DomainSpec::egg(vec![1, 2]).unwrap(), DomainSpec::ball(2).unwrap(), DomainSpec::polydisc(vec![1.0, 0.8]).unwrap()] {
                if !dom.contains(&z).unwrap() { continue; }
                let q = query(&z, &xi);
                let lo = caratheodory_lower(&dom, &q, &quick()).unwrap().value;
                let up = kobayashi_upper(&dom, &q, &quick()).unwrap().value;
                let incl = kobayashi_lower_inclusion(&dom, &q).unwrap().value;
                prop_assert!(lo <= up * (1.0 + 1e-9), "{:?}: {} > {}", dom.kind(), lo, up);
                prop_assert!(incl <= up * (1.0 + 1e-9));
            }
        }

        #[test]
        fn bounds_are_homogeneous(x in prop::array::uniform4(-0.5f64..0.5), v in prop::array::uniform4(-1.0f64..1.0)) {
            let z = [c(x[0], x[1]), c(x[2], x[3])];
            let xi = [c(v[0], v[1]), c(v[2], v[3])];
            prop_assume!(norm(&xi) > 0.1);
            let egg = DomainSpec::egg(vec![1, 2]).unwrap();
            prop_assume!(egg.contains(&z).unwrap());
            let q1 = query(&z, &xi);
            let q2 = query(&z, &xi.iter().map(|c| c * 2.0).collect::<Vec<_>>());
            let b = quick();
            prop_assert!((2.0 * kobayashi_upper(&egg, &q1, &b).unwrap().value - kobayashi_upper(&egg, &q2, &b).unwrap().value).abs() < 1e-12);
            prop_assert!((2.0 * caratheodory_lower(&egg, &q1, &b).unwrap().value - caratheodory_lower(&egg, &q2, &b).unwrap().value).abs() < 1e-12);
            prop_assert!((2.0 * kobayashi_lower_inclusion(&egg, &q1).unwrap().value - kobayashi_lower_inclusion(&egg, &q2).unwrap().value).abs() < 1e-12);
        }
    }
}
