//! Analytic discs as truncated polynomials `φ(ζ) = Σ a_k ζ^k`.

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::domains::{Direction, DomainSpec, Point};
use crate::error::{Error, Result};
use crate::series;

pub const DEFAULT_MAX_DEGREE: usize = 12;
/// Discs count as feasible when the sampled margin is at most `-DEFAULT_SLACK`.
pub const DEFAULT_SLACK: f64 = 1e-4;
pub const DEFAULT_RADIAL_SAMPLES: usize = 16;
pub const DEFAULT_ANGULAR_SAMPLES: usize = 64;

/// A polynomial map from the closed unit disc into `C^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticDisc {
    /// `coeffs[k][j]` is the `ζ^k` coefficient of coordinate `j`.
    coeffs: Vec<Vec<Complex64>>,
}

/// A parameter strictly inside the unit disc.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscNode(Complex64);

impl DiscNode {
    pub fn new(z: Complex64) -> Result<Self> {
        if !(z.norm() < 1.0) {
            return Err(Error::OutsideUnitDisc(z.norm()));
        }
        Ok(Self(z))
    }

    pub fn real(r: f64) -> Result<Self> {
        Self::new(Complex64::new(r, 0.0))
    }

    pub fn value(&self) -> Complex64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Maximum of the defining function over the sample grid.
    pub margin: f64,
    pub sample_count: usize,
    pub worst_parameter: Complex64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self, slack: f64) -> bool {
        self.margin <= -slack
    }
}

impl AnalyticDisc {
    /// Builds a disc from `coeffs[k][j]`, rejecting degree overflow,
    /// ragged coordinate vectors and non-finite coefficients.
    pub fn new(coeffs: Vec<Vec<Complex64>>, max_degree: usize) -> Result<Self> {
        if coeffs.is_empty() || coeffs[0].is_empty() {
            return Err(Error::InvalidArgument("disc needs at least a constant term".into()));
        }
        let n = coeffs[0].len();
        if coeffs.iter().any(|a| a.len() != n) {
            return Err(Error::InvalidArgument("ragged disc coefficients".into()));
        }
        if coeffs.iter().flatten().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidArgument("non-finite disc coefficient".into()));
        }
        if coeffs.len() - 1 > max_degree {
            return Err(Error::DegreeOverflow { degree: coeffs.len() - 1, max: max_degree });
        }
        Ok(Self { coeffs })
    }

    pub fn constant(p: &Point) -> Self {
        Self { coeffs: vec![p.0.clone()] }
    }

    /// `ζ ↦ p + ζ v`.
    pub fn linear(p: &Point, v: &[Complex64]) -> Self {
        Self { coeffs: vec![p.0.clone(), v.to_vec()] }
    }

    pub(crate) fn from_coeffs_unchecked(coeffs: Vec<Vec<Complex64>>) -> Self {
        Self { coeffs }
    }

    pub fn dim(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coefficients(&self) -> &[Vec<Complex64>] {
        &self.coeffs
    }

    /// Coordinate `j` as a scalar series.
    pub fn component(&self, j: usize) -> Vec<Complex64> {
        self.coeffs.iter().map(|a| a[j]).collect()
    }

    pub(crate) fn eval_unchecked(&self, zeta: Complex64) -> Vec<Complex64> {
        let n = self.dim();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for a in self.coeffs.iter().rev() {
            for j in 0..n {
                out[j] = out[j] * zeta + a[j];
            }
        }
        out
    }

    pub fn evaluate(&self, zeta: Complex64) -> Result<Point> {
        check_closed_disc(zeta)?;
        Ok(Point(self.eval_unchecked(zeta)))
    }

    pub fn derivative_at(&self, zeta: Complex64) -> Result<Direction> {
        check_closed_disc(zeta)?;
        Ok(Direction((0..self.dim()).map(|j| series::eval_derivative(&self.component(j), zeta)).collect()))
    }

    /// `ζ ↦ φ(ρ ζ)`.
    pub fn dilate(&self, rho: f64) -> Self {
        let mut s = 1.0;
        let coeffs = self
            .coeffs
            .iter()
            .map(|a| {
                let v = a.iter().map(|c| c * s).collect();
                s *= rho;
                v
            })
            .collect();
        Self { coeffs }
    }

    /// Expansion of `φ((ζ + a)/(1 + conj(a) ζ))` truncated to `max_degree`.
    /// Also returns the ℓ¹ norm of the discarded coefficients between
    /// `max_degree` and `4·max_degree + 16`, which bounds the truncation
    /// error on the closed disc up to that order.
    pub fn precompose_mobius(&self, a: DiscNode, max_degree: usize) -> Result<(AnalyticDisc, f64)> {
        if self.degree() > max_degree {
            return Err(Error::DegreeOverflow { degree: self.degree(), max: max_degree });
        }
        let ext = 4 * max_degree + 16;
        let m = series::mobius(a.value(), Complex64::new(1.0, 0.0), ext);
        let n = self.dim();
        let comps: Vec<Vec<Complex64>> = (0..n).map(|j| series::compose(&self.component(j), &m, ext)).collect();
        let coeffs = (0..=max_degree).map(|k| comps.iter().map(|c| c[k]).collect()).collect();
        let tail = comps
            .iter()
            .map(|c| c[max_degree + 1..].iter().map(|v| v.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut disc = Self { coeffs };
        disc.trim_trailing_zeros();
        Ok((disc, tail))
    }

    fn trim_trailing_zeros(&mut self) {
        while self.coeffs.len() > 1 && self.coeffs.last().unwrap().iter().all(|c| c.norm() == 0.0) {
            self.coeffs.pop();
        }
    }

    /// Maximum of the defining function over the grid `{r_i e^{iθ_k}}`.
    ///
    /// The radii `r_i = 1 − (1 − i/R)²`, `i = 1..R`, crowd towards the
    /// boundary circle (which is included); each ring is rotated by half an
    /// angular step relative to its neighbour. Sample counts below 8 are
    /// raised to 8.
    pub fn feasibility_margin(&self, domain: &DomainSpec, radial_samples: usize, angular_samples: usize) -> FeasibilityReport {
        let nr = radial_samples.max(8);
        let na = angular_samples.max(8);
        let mut worst = (self.eval_margin(domain, Complex64::new(0.0, 0.0)), Complex64::new(0.0, 0.0));
        for i in 1..=nr {
            let t = i as f64 / nr as f64;
            let r = 1.0 - (1.0 - t) * (1.0 - t);
            let offset = if i % 2 == 0 { 0.5 } else { 0.0 };
            for k in 0..na {
                let zeta = Complex64::from_polar(r, TAU * (k as f64 + offset) / na as f64);
                let v = self.eval_margin(domain, zeta);
                if v > worst.0 || v.is_nan() {
                    worst = (if v.is_nan() { f64::INFINITY } else { v }, zeta);
                }
            }
        }
        FeasibilityReport { margin: worst.0, sample_count: 1 + nr * na, worst_parameter: worst.1 }
    }

    /// Margin with the default grid, widened so the boundary circle carries
    /// at least four samples per unit of degree.
    pub fn default_margin(&self, domain: &DomainSpec) -> FeasibilityReport {
        let na = DEFAULT_ANGULAR_SAMPLES.max(4 * (self.degree() + 1));
        self.feasibility_margin(domain, DEFAULT_RADIAL_SAMPLES, na)
    }

    fn eval_margin(&self, domain: &DomainSpec, zeta: Complex64) -> f64 {
        domain.rho(&self.eval_unchecked(zeta))
    }

    /// Sup over a grid of `|φ(ζ) − ψ(ζ)|` on the closed disc.
    pub fn sup_distance(&self, other: &AnalyticDisc, radial: usize, angular: usize) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..=radial {
            let r = (i as f64 / radial as f64).sqrt().min(1.0);
            for k in 0..angular {
                let z = Complex64::from_polar(r, TAU * k as f64 / angular as f64);
                let a = self.eval_unchecked(z);
                let b = other.eval_unchecked(z);
                let d = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
                best = best.max(d);
            }
        }
        best
    }
}

fn check_closed_disc(zeta: Complex64) -> Result<()> {
    if zeta.norm() > 1.0 + 1e-12 {
        return Err(Error::OutsideUnitDisc(zeta.norm()));
    }
    Ok(())
}

/// Poincaré distance with curvature normalized so the infinitesimal metric
/// is `|dζ|/(1 − |ζ|²)`: `artanh |(a − b)/(1 − conj(a) b)|`.
pub fn poincare_distance(a: DiscNode, b: DiscNode) -> f64 {
    artanh(pseudo_distance(a.value(), b.value()))
}

/// Möbius pseudo-distance `|(a − b)/(1 − conj(a) b)|`.
pub fn pseudo_distance(a: Complex64, b: Complex64) -> f64 {
    ((a - b) / (1.0 - a.conj() * b)).norm()
}

pub fn artanh(x: f64) -> f64 {
    0.5 * ((1.0 + x) / (1.0 - x)).ln()
}

/// Points of the closed-disc sample grid used for images of discs.
pub(crate) fn grid_points(radial: usize, angular: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0)];
    for i in 1..=radial {
        let r = (FRAC_PI_2 * i as f64 / radial as f64).sin();
        for k in 0..angular {
            out.push(Complex64::from_polar(r, TAU * k as f64 / angular as f64));
        }
    }
    out
}

/// Real coefficients of a degree-`degree` polynomial `q` with `q(0) = w`,
/// `|q| ≤ 1` on the unit circle and `q'(0)` as large as possible
/// (`w ∈ [0, 1)`). Schwarz–Pick bounds `q'(0) ≤ 1 − w²`; the Möbius map
/// attains it but is not polynomial, and its Taylor truncation overshoots the
/// circle badly for `w` near 1.
///
/// Solved as a linear program over `4·degree + 5` angles in `[0, π]` (real
/// coefficients make `q` conjugation-symmetric): `|q(e^{iθ})| ≤ 1` is
/// imposed through tangent half-planes, starting from 16 per angle and adding
/// the tangent at `arg q(e^{iθ})` wherever the current solution leaves the
/// circle. Returns `[w, q_1, …, q_degree]`; the bound holds (to 1e-7) only at
/// the sampled angles.
pub fn bounded_polynomial(w: f64, degree: usize) -> Vec<f64> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    assert!((0.0..1.0).contains(&w) && degree >= 1);
    let mut fallback = vec![0.0; degree + 1];
    fallback[0] = w;
    fallback[1] = 1.0 - w;
    if w == 0.0 {
        return fallback;
    }
    let angles: Vec<f64> = (0..4 * degree + 5).map(|i| std::f64::consts::PI * i as f64 / (4 * degree + 4) as f64).collect();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (1..=degree)
        .map(|k| lp.add_var(if k == 1 { 1.0 } else { 0.0 }, (-2.0, 2.0)))
        .collect();
    let tangent = |theta: f64, phi: f64| -> (Vec<(minilp::Variable, f64)>, f64) {
        let row = vars.iter().enumerate().map(|(k, v)| (*v, ((k + 1) as f64 * theta - phi).cos())).collect();
        (row, 1.0 - w * phi.cos())
    };
    for &theta in &angles {
        for j in 0..16 {
            let (row, rhs) = tangent(theta, TAU * j as f64 / 16.0);
            lp.add_constraint(row.as_slice(), ComparisonOp::Le, rhs);
        }
    }
    let Ok(mut sol) = lp.solve() else { return fallback };
    for round in 0..200 {
        let q: Vec<f64> = std::iter::once(w).chain(vars.iter().map(|v| *sol.var_value(*v))).collect();
        let mut cuts = vec![];
        for &theta in &angles {
            let val: Complex64 = q.iter().enumerate().map(|(k, a)| Complex64::from_polar(*a, k as f64 * theta)).sum();
            if val.norm() > 1.0 + 1e-7 {
                cuts.push(tangent(theta, val.arg()));
            }
        }
        if cuts.is_empty() || round == 199 {
            return q;
        }
        for (row, rhs) in cuts {
            sol = match sol.add_constraint(row.as_slice(), ComparisonOp::Le, rhs) {
                Ok(s) => s,
                Err(_) => return fallback,
            };
        }
    }
    unreachable!()
}

/// Polynomial `p` with `p(0) = a`, `p(r) = b` and `|p| ≤ level` on the
/// closed unit disc, with `r` close to the pseudo-distance of `a` and `b`
/// (the Schwarz–Pick minimum, attained by a Möbius map `M`).
///
/// `p` is the degree-`degree` Taylor truncation of `ζ ↦ M(sζ)`, corrected by
/// a linear term so that it interpolates `b` exactly at `r = ρ/s`; the
/// dilation `s` is the largest (by bisection) for which the sup over 2048
/// circle points stays below `level`. Returns `(r, [a, p_1, …])`.
pub fn interpolating_polynomial(a: Complex64, b: Complex64, degree: usize, level: f64) -> Option<(f64, Vec<Complex64>)> {
    if !(a.norm() < level && b.norm() < level) || degree == 0 {
        return None;
    }
    let one = Complex64::new(1.0, 0.0);
    let e = (b - a) / (one - a.conj() * b);
    let rho = e.norm();
    if rho == 0.0 {
        return Some((0.0, vec![a]));
    }
    let rot = e / rho;
    // M(ζ) = (rot ζ + a)/(1 + conj(a) rot ζ)
    let m = series::mobius(a, rot, degree);
    let build = |s: f64| -> (f64, Vec<Complex64>) {
        let r = rho / s;
        let mut p: Vec<Complex64> = m.iter().enumerate().map(|(k, c)| c * s.powi(k as i32)).collect();
        let miss = b - series::eval(&p, Complex64::new(r, 0.0));
        p[1] += miss / r;
        (r, p)
    };
    let sup = |p: &[Complex64]| (0..2048).map(|i| series::eval(p, Complex64::from_polar(1.0, TAU * i as f64 / 2048.0)).norm()).fold(0.0, f64::max);
    let ok = |s: f64| rho / s < 1.0 && sup(&build(s).1) <= level;
    if !ok(rho * (1.0 + 1e-9)) && !ok(rho.max(1e-3)) {
        return None;
    }
    let s = crate::optimize::bisect_last_true(ok, rho, 1.0, 50);
    Some(build(s))
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct DiscRepr(Vec<Vec<[f64; 2]>>);

/// Serialized as one array per coordinate of `[re, im]` coefficient pairs.
impl Serialize for AnalyticDisc {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = DiscRepr(
            (0..self.dim())
                .map(|j| self.coeffs.iter().map(|a| [a[j].re, a[j].im]).collect())
                .collect(),
        );
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AnalyticDisc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = DiscRepr::deserialize(d)?;
        let n = repr.0.len();
        if n == 0 || repr.0.iter().any(|c| c.len() != repr.0[0].len()) || repr.0[0].is_empty() {
            return Err(serde::de::Error::custom("disc coordinates must be non-empty and equally long"));
        }
        let deg = repr.0[0].len() - 1;
        let coeffs = (0..=deg)
            .map(|k| (0..n).map(|j| Complex64::new(repr.0[j][k][0], repr.0[j][k][1])).collect())
            .collect();
        AnalyticDisc::new(coeffs, deg.max(DEFAULT_MAX_DEGREE)).map_err(serde::de::Error::custom)
    }
}
