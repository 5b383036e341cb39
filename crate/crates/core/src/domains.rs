//! Model domains and their boundary geometry.
//!
//! Every domain here is a bounded Reinhardt domain: membership depends only
//! on the moduli `x_j = |z_j|`. The defining function is therefore written
//! once on the absolute-value "profile" and lifted to `C^n`. The profile
//! sublevel set is star-shaped about the origin for every kind, so boundary
//! points along a ray are found by bisection.
//!
//! Defining functions:
//!
//! | kind | ρ |
//! |------|---|
//! | `Ball(n)` | `Σ|z_j|² − 1` |
//! | `Polydisc(r)` | `max_j (|z_j/r_j|² − 1)` |
//! | `Egg(m)` | `Σ|z_j|^{2m_j} − 1` |
//! | `Lempert(ε)` | `max(|z|²/4 − 1, |w|²/4 − 1, |zw|/ε − 1)` |
//! | `StretchedBall(N)` | `|z_1|² + |z_2/N|² − 1` |

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::norm;

/// A point of `C^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point(pub Vec<Complex64>);

/// A tangent vector at a point of `C^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction(pub Vec<Complex64>);

macro_rules! cvec_common {
    ($t:ty) => {
        impl $t {
            pub fn new(coords: Vec<Complex64>) -> Result<Self> {
                if coords.is_empty() {
                    return Err(Error::InvalidArgument("empty coordinate vector".into()));
                }
                if coords.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite coordinate".into()));
                }
                Ok(Self(coords))
            }

            /// Real coordinates lifted to `C^n`.
            pub fn real(coords: &[f64]) -> Self {
                Self(coords.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn norm(&self) -> f64 {
                norm(&self.0)
            }

            pub fn as_slice(&self) -> &[Complex64] {
                &self.0
            }
        }

        impl std::ops::Deref for $t {
            type Target = [Complex64];
            fn deref(&self) -> &[Complex64] {
                &self.0
            }
        }
    };
}

cvec_common!(Point);
cvec_common!(Direction);

impl Point {
    pub fn origin(n: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.0.iter().map(|c| c.norm()).collect()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

impl Direction {
    /// Standard basis vector `e_index` in dimension `n`.
    pub fn basis(n: usize, index: usize) -> Self {
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        v[index] = Complex64::new(1.0, 0.0);
        Self(v)
    }

    pub fn unit(&self) -> Result<Self> {
        let r = self.norm();
        if r <= 0.0 {
            return Err(Error::InvalidArgument("zero direction".into()));
        }
        Ok(Self(self.0.iter().map(|c| c / r).collect()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|c| c * s).collect())
    }
}

/// The parametrized family of model domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    Ball { n: usize },
    Polydisc { radii: Vec<f64> },
    Egg { exponents: Vec<u32> },
    Lempert { epsilon: f64 },
    StretchedBall { stretch: f64 },
}

/// A validated, immutable model domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainKind", into = "DomainKind")]
pub struct DomainSpec {
    kind: DomainKind,
}

impl From<DomainSpec> for DomainKind {
    fn from(d: DomainSpec) -> Self {
        d.kind
    }
}

impl TryFrom<DomainKind> for DomainSpec {
    type Error = Error;

    fn try_from(kind: DomainKind) -> Result<Self> {
        Self::new(kind)
    }
}

/// The JSON domain descriptor accepted by the CLI.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainDescriptor {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponents: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub stretch: Option<f64>,
}

impl DomainSpec {
    /// Validates a kind descriptor and builds the domain.
    pub fn new(kind: DomainKind) -> Result<Self> {
        match &kind {
            DomainKind::Ball { n } => {
                if *n == 0 {
                    return Err(Error::InvalidDomain("ball dimension must be positive".into()));
                }
            }
            DomainKind::Polydisc { radii } => {
                if radii.is_empty() {
                    return Err(Error::InvalidDomain("polydisc needs at least one radius".into()));
                }
                if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return Err(Error::InvalidDomain("polydisc radii must be positive".into()));
                }
            }
            DomainKind::Egg { exponents } => {
                if exponents.is_empty() {
                    return Err(Error::InvalidDomain("egg needs at least one exponent".into()));
                }
                if exponents.contains(&0) {
                    return Err(Error::InvalidDomain("egg exponents must be positive integers".into()));
                }
            }
            DomainKind::Lempert { epsilon } => {
                if !(*epsilon > 0.0 && *epsilon < 1.0) {
                    return Err(Error::InvalidDomain(format!(
                        "epsilon must lie in (0,1), got {epsilon}"
                    )));
                }
            }
            DomainKind::StretchedBall { stretch } => {
                if !(stretch.is_finite() && *stretch >= 1.0) {
                    return Err(Error::InvalidDomain(format!("stretch N must be >= 1, got {stretch}")));
                }
            }
        }
        Ok(Self { kind })
    }

    pub fn ball(n: usize) -> Result<Self> {
        Self::new(DomainKind::Ball { n })
    }

    pub fn polydisc(radii: Vec<f64>) -> Result<Self> {
        Self::new(DomainKind::Polydisc { radii })
    }

    pub fn egg(exponents: Vec<u32>) -> Result<Self> {
        Self::new(DomainKind::Egg { exponents })
    }

    pub fn lempert(epsilon: f64) -> Result<Self> {
        Self::new(DomainKind::Lempert { epsilon })
    }

    pub fn stretched_ball(stretch: f64) -> Result<Self> {
        Self::new(DomainKind::StretchedBall { stretch })
    }

    /// Builds a domain from the CLI JSON descriptor.
    pub fn from_descriptor(d: &DomainDescriptor) -> Result<Self> {
        let missing = |what: &str| Error::InvalidDomain(format!("descriptor for {} needs `{what}`", d.kind));
        match d.kind.as_str() {
            "ball" => Self::ball(d.n.ok_or_else(|| missing("n"))?),
            "polydisc" => {
                let radii = match (&d.radii, d.n) {
                    (Some(r), _) => r.clone(),
                    (None, Some(n)) => vec![1.0; n],
                    (None, None) => return Err(missing("radii")),
                };
                if let Some(n) = d.n {
                    if n != radii.len() {
                        return Err(Error::InvalidDomain("polydisc n does not match radii".into()));
                    }
                }
                Self::polydisc(radii)
            }
            "egg" => {
                let ex = d.exponents.as_ref().ok_or_else(|| missing("exponents"))?;
                if ex.iter().any(|&m| m <= 0 || m > u32::MAX as i64) {
                    return Err(Error::InvalidDomain("egg exponents must be positive integers".into()));
                }
                Self::egg(ex.iter().map(|&m| m as u32).collect())
            }
            "lempert" => Self::lempert(d.epsilon.ok_or_else(|| missing("epsilon"))?),
            "stretched_ball" => Self::stretched_ball(d.stretch.ok_or_else(|| missing("N"))?),
            other => Err(Error::InvalidDomain(format!("unknown domain kind `{other}`"))),
        }
    }

    /// Parses either a JSON object or a path to a file holding one.
    pub fn from_json(text: &str) -> Result<Self> {
        let d: DomainDescriptor = serde_json::from_str(text)?;
        Self::from_descriptor(&d)
    }

    pub fn descriptor(&self) -> DomainDescriptor {
        let mut d = DomainDescriptor { kind: self.kind_name().into(), ..Default::default() };
        match &self.kind {
            DomainKind::Ball { n } => d.n = Some(*n),
            DomainKind::Polydisc { radii } => {
                d.n = Some(radii.len());
                d.radii = Some(radii.clone());
            }
            DomainKind::Egg { exponents } => {
                d.n = Some(exponents.len());
                d.exponents = Some(exponents.iter().map(|&m| m as i64).collect());
            }
            DomainKind::Lempert { epsilon } => {
                d.n = Some(2);
                d.epsilon = Some(*epsilon);
            }
            DomainKind::StretchedBall { stretch } => {
                d.n = Some(2);
                d.stretch = Some(*stretch);
            }
        }
        d
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            DomainKind::Ball { .. } => "ball",
            DomainKind::Polydisc { .. } => "polydisc",
            DomainKind::Egg { .. } => "egg",
            DomainKind::Lempert { .. } => "lempert",
            DomainKind::StretchedBall { .. } => "stretched_ball",
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            DomainKind::Ball { n } => *n,
            DomainKind::Polydisc { radii } => radii.len(),
            DomainKind::Egg { exponents } => exponents.len(),
            DomainKind::Lempert { .. } | DomainKind::StretchedBall { .. } => 2,
        }
    }

    /// True for the convex kinds (everything except the two-branch domain).
    pub fn is_convex(&self) -> bool {
        !matches!(self.kind, DomainKind::Lempert { .. })
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }

    /// Defining function evaluated on moduli `x_j = |z_j| ≥ 0`.
    pub fn profile_value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DomainKind::Ball { .. } => x.iter().map(|v| v * v).sum::<f64>() - 1.0,
            DomainKind::Polydisc { radii } => x
                .iter()
                .zip(radii)
                .map(|(v, r)| (v / r) * (v / r) - 1.0)
                .fold(f64::NEG_INFINITY, f64::max),
            DomainKind::Egg { exponents } => {
                x.iter().zip(exponents).map(|(v, &m)| (v * v).powi(m as i32)).sum::<f64>() - 1.0
            }
            DomainKind::Lempert { epsilon } => {
                let a = x[0] * x[0] / 4.0 - 1.0;
                let b = x[1] * x[1] / 4.0 - 1.0;
                let c = x[0] * x[1] / epsilon - 1.0;
                a.max(b).max(c)
            }
            DomainKind::StretchedBall { stretch } => {
                x[0] * x[0] + (x[1] / stretch) * (x[1] / stretch) - 1.0
            }
        }
    }

    /// ρ(z): negative inside, zero on the boundary, positive outside.
    pub fn defining_value(&self, z: &[Complex64]) -> Result<f64> {
        self.check_dim(z.len())?;
        Ok(self.rho(z))
    }

    /// Unchecked defining function; callers guarantee the dimension.
    pub(crate) fn rho(&self, z: &[Complex64]) -> f64 {
        match &self.kind {
            DomainKind::Ball { .. } => z.iter().map(|c| c.norm_sqr()).sum::<f64>() - 1.0,
            DomainKind::StretchedBall { stretch } => {
                z[0].norm_sqr() + z[1].norm_sqr() / (stretch * stretch) - 1.0
            }
            DomainKind::Polydisc { radii } => z
                .iter()
                .zip(radii)
                .map(|(c, r)| c.norm_sqr() / (r * r) - 1.0)
                .fold(f64::NEG_INFINITY, f64::max),
            DomainKind::Egg { exponents } => {
                z.iter().zip(exponents).map(|(c, &m)| c.norm_sqr().powi(m as i32)).sum::<f64>() - 1.0
            }
            DomainKind::Lempert { epsilon } => {
                let a = z[0].norm_sqr() / 4.0 - 1.0;
                let b = z[1].norm_sqr() / 4.0 - 1.0;
                let c = (z[0] * z[1]).norm() / epsilon - 1.0;
                a.max(b).max(c)
            }
        }
    }

    pub fn contains(&self, z: &[Complex64]) -> Result<bool> {
        Ok(self.defining_value(z)? < 0.0)
    }

    /// Real gradient of ρ packed as `∂ρ/∂x_j + i ∂ρ/∂y_j`; it points along
    /// the outward normal on the boundary. For the piecewise kinds the active
    /// (largest) constraint is differentiated, first index winning ties.
    pub fn gradient(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_dim(z.len())?;
        let zero = Complex64::new(0.0, 0.0);
        let g = match &self.kind {
            DomainKind::Ball { .. } => z.iter().map(|c| c * 2.0).collect(),
            DomainKind::StretchedBall { stretch } => vec![z[0] * 2.0, z[1] * (2.0 / (stretch * stretch))],
            DomainKind::Polydisc { radii } => {
                let (j, _) = z
                    .iter()
                    .zip(radii)
                    .map(|(c, r)| c.norm_sqr() / (r * r))
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
                let mut g = vec![zero; z.len()];
                g[j] = z[j] * (2.0 / (radii[j] * radii[j]));
                g
            }
            DomainKind::Egg { exponents } => z
                .iter()
                .zip(exponents)
                .map(|(c, &m)| c * (2.0 * m as f64 * c.norm_sqr().powi(m as i32 - 1)))
                .collect(),
            DomainKind::Lempert { epsilon } => {
                let a = z[0].norm_sqr() / 4.0 - 1.0;
                let b = z[1].norm_sqr() / 4.0 - 1.0;
                let (m0, m1) = (z[0].norm(), z[1].norm());
                let c = m0 * m1 / epsilon - 1.0;
                if a >= b && a >= c {
                    vec![z[0] / 2.0, zero]
                } else if b >= c {
                    vec![zero, z[1] / 2.0]
                } else {
                    if m0 == 0.0 || m1 == 0.0 {
                        return Err(Error::DegenerateGradient);
                    }
                    vec![z[0] * (m1 / (m0 * epsilon)), z[1] * (m0 / (m1 * epsilon))]
                }
            }
        };
        Ok(g)
    }

    /// Central finite-difference gradient (step `h`) in the same packing as
    /// [`DomainSpec::gradient`].
    pub fn gradient_fd(&self, z: &[Complex64], h: f64) -> Result<Vec<Complex64>> {
        self.check_dim(z.len())?;
        let mut out = Vec::with_capacity(z.len());
        let mut w = z.to_vec();
        for j in 0..z.len() {
            let mut part = [0.0; 2];
            for (k, step) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)].iter().enumerate() {
                w[j] = z[j] + step;
                let fp = self.rho(&w);
                w[j] = z[j] - step;
                let fm = self.rho(&w);
                w[j] = z[j];
                part[k] = (fp - fm) / (2.0 * h);
            }
            out.push(Complex64::new(part[0], part[1]));
        }
        Ok(out)
    }

    /// Radius of the smallest origin-centred ball containing the domain.
    pub fn circumscribing_radius(&self) -> f64 {
        match &self.kind {
            DomainKind::Ball { .. } => 1.0,
            DomainKind::Polydisc { radii } => radii.iter().map(|r| r * r).sum::<f64>().sqrt(),
            DomainKind::StretchedBall { stretch } => *stretch,
            DomainKind::Lempert { epsilon } => (4.0 + epsilon * epsilon / 4.0).sqrt(),
            DomainKind::Egg { .. } => {
                let (v, _) = self.profile_extremum(|b| b.iter().map(|x| x * x).sum::<f64>().sqrt(), true);
                v
            }
        }
    }

    /// Largest modulus each coordinate attains on the closure: the radii of
    /// the smallest circumscribing polydisc.
    pub fn coordinate_bounds(&self) -> Vec<f64> {
        match &self.kind {
            DomainKind::Ball { n } => vec![1.0; *n],
            DomainKind::Polydisc { radii } => radii.clone(),
            DomainKind::Egg { exponents } => vec![1.0; exponents.len()],
            DomainKind::Lempert { .. } => vec![2.0, 2.0],
            DomainKind::StretchedBall { stretch } => vec![1.0, *stretch],
        }
    }

    /// Boundary point of the profile along the ray `t·dir`, `dir ≥ 0`.
    pub fn profile_boundary_point(&self, dir: &[f64]) -> Vec<f64> {
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u: Vec<f64> = dir.iter().map(|v| v / len).collect();
        let mut hi = 2.0 * self.circumscribing_bound();
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let x: Vec<f64> = u.iter().map(|v| v * mid).collect();
            if self.profile_value(&x) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        let t = 0.5 * (lo + hi);
        u.iter().map(|v| v * t).collect()
    }

    /// Smallest `s > 0` with `z + s v` outside the domain (`z` interior).
    /// Convex kinds bisect directly; the two-branch domain is scanned in 512
    /// steps first so that thin excursions between the branches are not
    /// jumped over.
    pub fn ray_exit(&self, z: &[Complex64], v: &[Complex64]) -> f64 {
        let len = norm(v);
        if len == 0.0 {
            return f64::INFINITY;
        }
        let exact = match &self.kind {
            DomainKind::Ball { .. } => quadratic_exit(z, v, &vec![1.0; z.len()]),
            DomainKind::StretchedBall { stretch } => quadratic_exit(z, v, &[1.0, *stretch]),
            DomainKind::Polydisc { radii } => {
                (0..z.len()).map(|j| quadratic_exit(&z[j..=j], &v[j..=j], &radii[j..=j])).fold(f64::INFINITY, f64::min)
            }
            DomainKind::Egg { exponents } => {
                // the egg lies in the polydisc of its coordinate bounds
                let b = self.coordinate_bounds();
                let hi = (0..z.len()).map(|j| quadratic_exit(&z[j..=j], &v[j..=j], &b[j..=j])).fold(f64::INFINITY, f64::min);
                egg_exit(z, v, exponents, hi * (1.0 + 1e-12))
            }
            DomainKind::Lempert { .. } => f64::NAN,
        };
        if exact.is_finite() {
            // step inside if rounding put the root on or past the boundary
            let mut s = exact;
            for k in 0..48 {
                let p: Vec<Complex64> = z.iter().zip(v).map(|(a, b)| a + b * s).collect();
                if self.rho(&p) < 0.0 {
                    break;
                }
                s *= 1.0 - 1e-16 * 2f64.powi(k);
            }
            return s;
        }
        let mut p = z.to_vec();
        let mut inside = |s: f64| {
            for ((q, a), b) in p.iter_mut().zip(z).zip(v) {
                *q = a + b * s;
            }
            self.rho(&p) < 0.0
        };
        let hi = 2.0 * self.circumscribing_bound() / len;
        let (mut lo, mut hi) = if self.is_convex() {
            (0.0, hi)
        } else {
            let h = hi / 512.0;
            let mut s = 0.0;
            while s < hi && inside(s + h) {
                s += h;
            }
            (s, s + h)
        };
        for _ in 0..54 {
            let mid = 0.5 * (lo + hi);
            if inside(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn circumscribing_bound(&self) -> f64 {
        self.coordinate_bounds().iter().map(|r| r * r).sum::<f64>().sqrt()
    }

    /// Extremum of `f` over the profile boundary (the moduli of boundary
    /// points). Directions in the closed positive orthant are sampled on a
    /// grid (512 angles for n = 2, 64² for n = 3) and the best sample is
    /// refined by golden-section search or Nelder-Mead.
    pub fn profile_extremum<F: Fn(&[f64]) -> f64>(&self, f: F, maximize: bool) -> (f64, Vec<f64>) {
        let n = self.dim();
        let sign = if maximize { 1.0 } else { -1.0 };
        if n == 1 {
            let b = self.profile_boundary_point(&[1.0]);
            return (f(&b), b);
        }
        let dir_of = |angles: &[f64]| -> Vec<f64> {
            // hyperspherical coordinates restricted to the positive orthant
            let mut d = vec![0.0; n];
            let mut s = 1.0;
            for (i, a) in angles.iter().enumerate() {
                let a = a.clamp(0.0, FRAC_PI_2);
                d[i] = s * a.cos();
                s *= a.sin();
            }
            d[n - 1] = s;
            d
        };
        let score = |angles: &[f64]| sign * f(&self.profile_boundary_point(&dir_of(angles)));
        let m = n - 1;
        let per_axis = match m {
            1 => 512,
            2 => 64,
            _ => 16,
        };
        let mut best = (f64::NEG_INFINITY, vec![0.0; m]);
        let total = (per_axis as u64).pow(m as u32);
        for idx in 0..total {
            let mut k = idx;
            let mut angles = vec![0.0; m];
            for a in angles.iter_mut() {
                *a = FRAC_PI_2 * (k % per_axis as u64) as f64 / (per_axis - 1) as f64;
                k /= per_axis as u64;
            }
            let s = score(&angles);
            if s > best.0 {
                best = (s, angles);
            }
        }
        let step = FRAC_PI_2 / (per_axis - 1) as f64;
        let refined = if m == 1 {
            let c = best.1[0];
            let (a, v) = crate::optimize::golden_max(|t| score(&[t]), (c - step).max(0.0), (c + step).min(FRAC_PI_2), 1e-13);
            (v, vec![a])
        } else {
            let nm = crate::optimize::NelderMead { max_iterations: 400, ..Default::default() };
            let r = nm.minimize(|a| -score(a), &best.1, &vec![step; m]);
            (-r.value, r.x)
        };
        let chosen = if refined.0 >= best.0 { refined } else { best };
        let b = self.profile_boundary_point(&dir_of(&chosen.1));
        (sign * chosen.0, b)
    }

    /// Euclidean distance from an interior point to the boundary.
    ///
    /// Closed form for the ball and polydisc. For the other kinds the
    /// problem reduces to the profile (moving each coordinate radially is
    /// optimal for a Reinhardt domain) and is solved by ray bisection plus
    /// minimization over the direction sample of [`DomainSpec::profile_extremum`].
    pub fn boundary_distance(&self, z: &[Complex64]) -> Result<f64> {
        let rho = self.defining_value(z)?;
        if rho >= 0.0 {
            return Err(Error::OutsideDomain(rho));
        }
        Ok(match &self.kind {
            DomainKind::Ball { .. } => 1.0 - norm(z),
            DomainKind::Polydisc { radii } => z
                .iter()
                .zip(radii)
                .map(|(c, r)| r - c.norm())
                .fold(f64::INFINITY, f64::min),
            _ => {
                let x: Vec<f64> = z.iter().map(|c| c.norm()).collect();
                let (d, _) = self.profile_extremum(
                    |b| b.iter().zip(&x).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt(),
                    false,
                );
                d
            }
        })
    }

    /// `P − ε ν`, with ν the unit outward normal at the boundary point `P`.
    pub fn normal_ray_point(&self, boundary_point: &[Complex64], eps: f64) -> Result<Point> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        let rho = self.defining_value(boundary_point)?;
        if rho.abs() > 1e-8 {
            return Err(Error::NotOnBoundary(rho));
        }
        let g = self.gradient(boundary_point)?;
        let gn = norm(&g);
        if gn < 1e-12 {
            return Err(Error::DegenerateGradient);
        }
        let p: Vec<Complex64> = boundary_point.iter().zip(&g).map(|(c, d)| c - d * (eps / gn)).collect();
        let rho_p = self.rho(&p);
        if rho_p >= 0.0 {
            return Err(Error::OutsideDomain(rho_p));
        }
        Ok(Point(p))
    }

    /// Supremum of `|Σ ℓ_j w_j|` over the domain (the support function of
    /// the profile at `|ℓ|`), computed in closed form or by a 1-D root solve.
    pub fn linear_sup(&self, ell: &[Complex64]) -> f64 {
        let a: Vec<f64> = ell.iter().map(|c| c.norm()).collect();
        match &self.kind {
            DomainKind::Ball { .. } => a.iter().map(|v| v * v).sum::<f64>().sqrt(),
            DomainKind::Polydisc { radii } => a.iter().zip(radii).map(|(v, r)| v * r).sum(),
            DomainKind::StretchedBall { stretch } => (a[0] * a[0] + stretch * stretch * a[1] * a[1]).sqrt(),
            DomainKind::Lempert { epsilon } => {
                (2.0 * a[0] + a[1] * epsilon / 2.0).max(a[0] * epsilon / 2.0 + 2.0 * a[1])
            }
            DomainKind::Egg { exponents } => egg_support(&a, exponents),
        }
    }
}

/// `max Σ a_j x_j` subject to `Σ x_j^{2m_j} ≤ 1`, `x ≥ 0`. Stationarity gives
/// `x_j = (a_j / (2 m_j μ))^{1/(2m_j − 1)}`; μ is found by bisection in log scale.
fn egg_support(a: &[f64], exponents: &[u32]) -> f64 {
    if a.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let xs = |log_mu: f64| -> Vec<f64> {
        a.iter()
            .zip(exponents)
            .map(|(&v, &m)| {
                if v == 0.0 {
                    0.0
                } else {
                    let m = m as f64;
                    ((v.ln() - (2.0 * m).ln() - log_mu) / (2.0 * m - 1.0)).exp()
                }
            })
            .collect()
    };
    let constraint = |x: &[f64]| -> f64 {
        x.iter().zip(exponents).map(|(v, &m)| v.powi(2 * m as i32)).sum::<f64>()
    };
    let (mut lo, mut hi) = (-200.0_f64, 200.0_f64);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        // the constraint sum decreases as μ grows
        if constraint(&xs(mid)) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = xs(hi);
    x.iter().zip(a).map(|(p, q)| p * q).sum()
}

/// Exit time of `z + s v` from `Σ |w_j/r_j|² < 1`.
fn quadratic_exit(z: &[Complex64], v: &[Complex64], r: &[f64]) -> f64 {
    let (mut a, mut b, mut c) = (0.0, 0.0, -1.0);
    for j in 0..z.len() {
        let (zj, vj) = (z[j] / r[j], v[j] / r[j]);
        a += vj.norm_sqr();
        b += (zj.conj() * vj).re;
        c += zj.norm_sqr();
    }
    if a == 0.0 {
        return f64::INFINITY;
    }
    // root of a s² + 2 b s + c with c < 0, written to avoid cancellation
    let disc = (b * b - a * c).max(0.0).sqrt();
    if b <= 0.0 {
        (disc - b) / a
    } else {
        -c / (b + disc)
    }
}

/// Exit time from the egg. `s ↦ ρ(z + s v)` is convex, so Newton's method
/// started to the right of the root decreases monotonically onto it.
fn egg_exit(z: &[Complex64], v: &[Complex64], m: &[u32], hi: f64) -> f64 {
    let f = |s: f64| -> (f64, f64) {
        let (mut val, mut der) = (-1.0, 0.0);
        for j in 0..z.len() {
            let w = z[j] + v[j] * s;
            let q = w.norm_sqr();
            let k = m[j] as i32;
            val += q.powi(k);
            der += k as f64 * q.powi(k - 1) * 2.0 * (w.conj() * v[j]).re;
        }
        (val, der)
    };
    let mut s = hi;
    for _ in 0..200 {
        let (val, der) = f(s);
        if val <= 0.0 || der <= 0.0 {
            break;
        }
        let step = val / der;
        s -= step;
        if step <= 1e-15 * s {
            break;
        }
    }
    if f(s * (1.0 - 1e-13)).0 < 0.0 {
        return s;
    }
    // Newton stalled: fall back to bisection on [0, hi]
    let (mut lo, mut up) = (0.0, hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + up);
        if f(mid).0 < 0.0 {
            lo = mid;
        } else {
            up = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn construction_validates_parameters() {
        assert_eq!(DomainSpec::ball(2).unwrap().dim(), 2);
        assert!(DomainSpec::egg(vec![1, 0]).is_err());
        assert!(DomainSpec::lempert(0.0).is_err());
        assert!(DomainSpec::lempert(1.0).is_err());
        assert!(DomainSpec::stretched_ball(0.5).is_err());
        assert!(DomainSpec::polydisc(vec![1.0, -1.0]).is_err());
        let l = DomainSpec::lempert(0.25).unwrap();
        assert!(matches!(l.kind(), DomainKind::Lempert { epsilon } if *epsilon == 0.25));
    }

    #[test]
    fn descriptor_round_trip() {
        let d = DomainSpec::from_json(r#"{"kind":"stretched_ball","N":4.0}"#).unwrap();
        assert_eq!(d, DomainSpec::stretched_ball(4.0).unwrap());
        let e = DomainSpec::from_json(r#"{"kind":"egg","n":2,"exponents":[1,2]}"#).unwrap();
        assert_eq!(e, DomainSpec::egg(vec![1, 2]).unwrap());
        assert!(DomainSpec::from_json(r#"{"kind":"egg","exponents":[1,-2]}"#).is_err());
        assert!(DomainSpec::from_json(r#"{"kind":"torus"}"#).is_err());
        let text = serde_json::to_string(&e.descriptor()).unwrap();
        assert_eq!(DomainSpec::from_json(&text).unwrap(), e);
    }

    #[test]
    fn defining_values() {
        let ball = DomainSpec::ball(2).unwrap();
        assert_eq!(ball.defining_value(&Point::origin(2)).unwrap(), -1.0);
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        assert_eq!(egg.defining_value(&Point::real(&[0.0, 1.0])).unwrap(), 0.0);
        let l = DomainSpec::lempert(0.25).unwrap();
        // max(1/4 - 1, 0 - 1, 0 - 1)
        assert_eq!(l.defining_value(&Point::real(&[1.0, 0.0])).unwrap(), -0.75);
        assert!(matches!(
            ball.defining_value(&Point::origin(3)),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn membership() {
        assert!(DomainSpec::ball(2).unwrap().contains(&Point::real(&[0.5, 0.0])).unwrap());
        assert!(!DomainSpec::lempert(0.1).unwrap().contains(&Point::real(&[1.0, 0.2])).unwrap());
        assert!(DomainSpec::stretched_ball(4.0).unwrap().contains(&Point::real(&[0.0, 3.0])).unwrap());
    }

    #[test]
    fn boundary_distances() {
        let ball = DomainSpec::ball(2).unwrap();
        assert_eq!(ball.boundary_distance(&Point::origin(2)).unwrap(), 1.0);
        let pd = DomainSpec::polydisc(vec![1.0, 1.0]).unwrap();
        assert_eq!(pd.boundary_distance(&Point::real(&[0.5, 0.0])).unwrap(), 0.5);
        assert!(ball.boundary_distance(&Point::real(&[1.0, 0.0])).is_err());

        // brute-force oracle: dense sampling of the egg profile curve x² + y⁴ = 1
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        let d = egg.boundary_distance(&Point::real(&[0.9, 0.0])).unwrap();
        let oracle = (0..=200_000)
            .map(|i| {
                let y = i as f64 / 200_000.0;
                let x = (1.0 - y.powi(4)).sqrt();
                ((x - 0.9).powi(2) + y * y).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(d > 0.0 && d <= 0.1);
        assert!((d - oracle).abs() < 1e-6, "{d} vs {oracle}");
    }

    #[test]
    fn stretched_ball_distance_matches_lagrange_solution() {
        // nearest point on x² + y²/N² = 1 from (a, b): p = (a/(1+t), b/(1+t/N²))
        let n = 4.0;
        let dom = DomainSpec::stretched_ball(n).unwrap();
        let (a, b) = (0.3, 2.0);
        let g = |t: f64| (a / (1.0 + t)).powi(2) + (b / (n * (1.0 + t / (n * n)))).powi(2) - 1.0;
        let (mut lo, mut hi) = (-0.999_999, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        let (px, py) = (a / (1.0 + t), b / (1.0 + t / (n * n)));
        let oracle = ((px - a).powi(2) + (py - b).powi(2)).sqrt();
        let d = dom.boundary_distance(&Point::real(&[a, b])).unwrap();
        assert!((d - oracle).abs() < 1e-6, "{d} vs {oracle}");
    }

    #[test]
    fn normal_ray_points() {
        let ball = DomainSpec::ball(2).unwrap();
        let p = ball.normal_ray_point(&Point::real(&[1.0, 0.0]), 0.1).unwrap();
        assert!((p[0] - c(0.9, 0.0)).norm() < 1e-15 && p[1].norm() < 1e-15);
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        let p = egg.normal_ray_point(&Point::real(&[1.0, 0.0]), 0.05).unwrap();
        assert!((p[0] - c(0.95, 0.0)).norm() < 1e-15 && p[1].norm() < 1e-15);
        let p = egg.normal_ray_point(&Point::real(&[0.0, 1.0]), 0.1).unwrap();
        assert!(p[0].norm() < 1e-15 && (p[1] - c(0.9, 0.0)).norm() < 1e-15);
        assert!(matches!(
            egg.normal_ray_point(&Point::real(&[0.5, 0.0]), 0.1),
            Err(Error::NotOnBoundary(_))
        ));
        assert!(ball.normal_ray_point(&Point::real(&[1.0, 0.0]), 2.5).is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cases = vec![
            (DomainSpec::ball(2).unwrap(), vec![c(0.3, 0.2), c(-0.1, 0.4)]),
            (DomainSpec::polydisc(vec![1.0, 2.0]).unwrap(), vec![c(0.3, 0.2), c(-1.1, 0.4)]),
            (DomainSpec::egg(vec![1, 2]).unwrap(), vec![c(0.3, 0.2), c(-0.5, 0.4)]),
            (DomainSpec::egg(vec![2, 3]).unwrap(), vec![c(0.3, 0.2), c(-0.5, 0.4)]),
            (DomainSpec::lempert(0.5).unwrap(), vec![c(0.3, 0.2), c(-0.5, 0.4)]),
            (DomainSpec::lempert(0.5).unwrap(), vec![c(1.9, 0.0), c(0.01, 0.0)]),
            (DomainSpec::stretched_ball(3.0).unwrap(), vec![c(0.3, 0.2), c(-1.5, 0.4)]),
        ];
        for (dom, z) in cases {
            let g = dom.gradient(&z).unwrap();
            let fd = dom.gradient_fd(&z, 1e-6).unwrap();
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).norm() < 1e-6, "{:?}: {a} vs {b}", dom.kind());
            }
        }
    }

    #[test]
    fn egg_circumscribing_radius_from_profile_maximum() {
        // maximize x² + y² on x² + y⁴ = 1: y² = 1/2, value 5/4
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        assert!((egg.circumscribing_radius() - 1.25_f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn linear_sup_matches_boundary_sampling() {
        let ell = [c(0.7, -0.2), c(0.3, 0.5)];
        for dom in [
            DomainSpec::ball(2).unwrap(),
            DomainSpec::polydisc(vec![1.0, 0.5]).unwrap(),
            DomainSpec::egg(vec![1, 2]).unwrap(),
            DomainSpec::egg(vec![3, 2]).unwrap(),
            DomainSpec::lempert(0.3).unwrap(),
            DomainSpec::stretched_ball(2.0).unwrap(),
        ] {
            let a: Vec<f64> = ell.iter().map(|v| v.norm()).collect();
            let (sampled, _) = dom.profile_extremum(|x| x[0] * a[0] + x[1] * a[1], true);
            let exact = dom.linear_sup(&ell);
            assert!(exact >= sampled - 1e-9, "{:?}", dom.kind());
            assert!((exact - sampled).abs() < 1e-6, "{:?}: {exact} vs {sampled}", dom.kind());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn domains() -> Vec<DomainSpec> {
            vec![
                DomainSpec::ball(2).unwrap(),
                DomainSpec::polydisc(vec![1.0, 0.7]).unwrap(),
                DomainSpec::egg(vec![1, 2]).unwrap(),
                DomainSpec::lempert(0.25).unwrap(),
                DomainSpec::stretched_ball(4.0).unwrap(),
            ]
        }

        proptest! {
            #[test]
            fn single_sign_change_along_rays(a in 0.0..6.3f64, b in 0.0..6.3f64, t in 0.0..1.57f64, k in 0usize..5) {
                let dom = &domains()[k];
                let dir = [Complex64::from_polar(t.cos(), a), Complex64::from_polar(t.sin(), b)];
                let mut changes = 0;
                let mut prev = dom.rho(&[Complex64::new(0.0, 0.0); 2]);
                prop_assert!(prev < 0.0);
                for i in 1..=400 {
                    let s = 5.0 * i as f64 / 400.0;
                    let z = [dir[0] * s, dir[1] * s];
                    let v = dom.rho(&z);
                    prop_assert!(v >= prev - 1e-12);
                    if (v < 0.0) != (prev < 0.0) { changes += 1; }
                    prev = v;
                }
                prop_assert_eq!(changes, 1);
            }

            #[test]
            fn interior_distance_below_circumradius(x in 0.0..1.0f64, y in 0.0..1.0f64, k in 0usize..5) {
                let dom = &domains()[k];
                let b = dom.profile_boundary_point(&[x + 1e-3, y + 1e-3]);
                let z = [Complex64::new(b[0] * 0.9, 0.0), Complex64::new(0.0, b[1] * 0.9)];
                prop_assert!(dom.contains(&z).unwrap());
                let d = dom.boundary_distance(&z).unwrap();
                prop_assert!(d > 0.0 && d <= dom.circumscribing_radius());
            }
        }
    }

    #[test]
    fn normal_ray_interior_and_distance_vanishes() {
        for dom in [
            DomainSpec::ball(2).unwrap(),
            DomainSpec::egg(vec![1, 2]).unwrap(),
            DomainSpec::stretched_ball(4.0).unwrap(),
            DomainSpec::polydisc(vec![1.0, 1.0]).unwrap(),
        ] {
            for k in 1..8 {
                let t = FRAC_PI_2 * k as f64 / 8.0;
                let b = dom.profile_boundary_point(&[t.cos(), t.sin()]);
                if matches!(dom.kind(), DomainKind::Polydisc { .. }) && k == 4 {
                    continue; // corner of the distinguished boundary: no normal
                }
                let p = Point::real(&b);
                let mut last = f64::INFINITY;
                for eps in [1e-2, 1e-3, 1e-4] {
                    let q = dom.normal_ray_point(&p, eps).unwrap();
                    let d = dom.boundary_distance(&q).unwrap();
                    assert!(d <= eps + 1e-9 && d < last, "{:?} k={k} eps={eps} d={d}", dom.kind());
                    last = d;
                }
            }
        }
    }

    #[test]
    fn ray_exit_matches_bisection() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for d in [
            DomainSpec::ball(3).unwrap(),
            DomainSpec::stretched_ball(3.0).unwrap(),
            DomainSpec::polydisc(vec![1.0, 0.5]).unwrap(),
            DomainSpec::egg(vec![1, 3]).unwrap(),
            DomainSpec::lempert(0.3).unwrap(),
        ] {
            let n = d.dim();
            for _ in 0..50 {
                let mut cpx = || Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                let z: Vec<Complex64> = (0..n).map(|_| cpx() * 0.4).collect();
                let v: Vec<Complex64> = (0..n).map(|_| cpx()).collect();
                if d.rho(&z) >= 0.0 {
                    continue;
                }
                let s = d.ray_exit(&z, &v);
                let at = |t: f64| -> Vec<Complex64> { z.iter().zip(&v).map(|(a, b)| a + b * t).collect() };
                assert!(d.rho(&at(s)) < 0.0, "{}", d.kind_name());
                assert!(d.rho(&at(s * (1.0 + 1e-9))) >= 0.0, "{} {s}", d.kind_name());
            }
        }
    }
}
