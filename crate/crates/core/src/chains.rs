//! Kobayashi distances from explicit discs: one-disc distances, chains of
//! discs through waypoints, and merging/shortening of chains.
//!
//! Every leg is a polynomial disc `φ` with `φ(0) = P` and `φ(r) = Q` for a
//! real node `r ∈ (0, 1)`; its length is the Poincaré distance `artanh r`.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::TAU;

use crate::discs::{self, artanh, interpolating_polynomial, pseudo_distance, AnalyticDisc, DiscNode, DEFAULT_SLACK};
use crate::domains::{DomainKind, DomainSpec, Point};
use crate::error::{Error, Result};
use crate::maps;
use crate::metrics::slice_inradius;
use crate::optimize::{NelderMead, OptimizerBudget};
use crate::{hdot, norm, series};

type C = Complex64;

/// Legs use at least this degree; two-point interpolation by polynomials
/// loses accuracy quickly below it when the points approach the boundary.
pub const LEG_DEGREE: usize = 24;
/// Tolerance on `|φ(0) − P|` and `|φ(r) − Q|`.
pub const ENDPOINT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneDiscResult {
    pub distance_upper: f64,
    pub disc: AnalyticDisc,
    pub node: DiscNode,
    /// `[|φ(0) − P|, |φ(r) − Q|]`.
    pub residuals: [f64; 2],
    pub method: String,
}

impl OneDiscResult {
    fn constant(p: &Point) -> Self {
        Self {
            distance_upper: 0.0,
            disc: AnalyticDisc::constant(p),
            node: DiscNode::real(0.0).expect("0 is inside the disc"),
            residuals: [0.0, 0.0],
            method: "constant disc".into(),
        }
    }

    pub fn start(&self) -> Vec<C> {
        self.disc.eval_unchecked(C::new(0.0, 0.0))
    }

    pub fn end(&self) -> Vec<C> {
        self.disc.eval_unchecked(self.node.value())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainPath {
    pub waypoints: Vec<Point>,
    pub legs: Vec<OneDiscResult>,
    pub total: f64,
}

impl ChainPath {
    pub fn from_legs(waypoints: Vec<Point>, legs: Vec<OneDiscResult>) -> Self {
        let total = legs.iter().map(|l| l.distance_upper).sum();
        Self { waypoints, legs, total }
    }

    /// Chain through the given waypoints, one optimized disc per leg.
    pub fn through(domain: &DomainSpec, waypoints: Vec<Point>, budget: &OptimizerBudget) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidArgument("a chain needs at least two waypoints".into()));
        }
        let legs = waypoints
            .windows(2)
            .enumerate()
            .map(|(i, w)| one_disc_distance_upper(domain, &w[0], &w[1], &budget.clone().with_seed(leg_seed(budget.seed, i))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_legs(waypoints, legs))
    }
}

fn leg_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
}

/// Which points of a fixed η-net of the domain a disc passes near, and which
/// points of an η'-net of the unit disc (Poincaré metric) lie near its nodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSignature {
    pub net_points: BTreeSet<usize>,
    pub disc_nodes: BTreeSet<usize>,
}

fn check_point(domain: &DomainSpec, p: &Point) -> Result<()> {
    let rho = domain.defining_value(p)?;
    if rho >= 0.0 {
        return Err(Error::OutsideDomain(rho));
    }
    Ok(())
}

fn finish(domain: &DomainSpec, disc: AnalyticDisc, r: f64, p: &[C], q: &[C], method: &str) -> Option<OneDiscResult> {
    if !(r > 0.0 && r < 1.0) || !disc.default_margin(domain).is_feasible(DEFAULT_SLACK) {
        return None;
    }
    let dist = |a: &[C], b: &[C]| norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
    let residuals = [dist(&disc.eval_unchecked(C::new(0.0, 0.0)), p), dist(&disc.eval_unchecked(C::new(r, 0.0)), q)];
    Some(OneDiscResult { distance_upper: artanh(r), disc, node: DiscNode::real(r).ok()?, residuals, method: method.into() })
}

/// Disc `ζ ↦ P + u (c + R p(ζ))` through the round disc `D(c, R)` of the
/// slice `{λ : P + λu ∈ Ω}`, `u = Q − P`, where `p` maps the unit disc into
/// itself with `p(0) = −c/R`, `p(r) = (1 − c)/R`.
fn slice_leg(domain: &DomainSpec, p: &[C], q: &[C], c: C, radius: f64, degree: usize) -> Option<OneDiscResult> {
    let u: Vec<C> = q.iter().zip(p).map(|(a, b)| a - b).collect();
    let (a, b) = (-c / radius, (C::new(1.0, 0.0) - c) / radius);
    for level in [1.0 - 1e-4, 1.0 - 1e-3, 1.0 - 1e-2, 0.95, 0.9] {
        let Some((r, poly)) = interpolating_polynomial(a, b, degree, level) else { continue };
        let coeffs: Vec<Vec<C>> = poly
            .iter()
            .enumerate()
            .map(|(k, pk)| if k == 0 { p.to_vec() } else { u.iter().map(|v| v * radius * pk).collect() })
            .collect();
        if let Some(res) = finish(domain, AnalyticDisc::from_coeffs_unchecked(coeffs), r, p, q, "slice Möbius disc") {
            return Some(res);
        }
    }
    None
}

/// Centre and radius of the slice disc for kinds that are diagonal images
/// of the ball (where the slice is exactly a round disc).
fn ball_slice(d: &[f64], p: &[C], q: &[C]) -> (C, f64) {
    let ps = maps::unscale(p, d);
    let v: Vec<C> = maps::unscale(&q.iter().zip(p).map(|(a, b)| a - b).collect::<Vec<_>>(), d);
    let vv = norm(&v).powi(2);
    let s = hdot(&ps, &v);
    let r2 = (1.0 - norm(&ps).powi(2) + s.norm_sqr() / vv) / vv;
    (-s / vv, r2.max(0.0).sqrt())
}

/// Slice disc for general kinds: the centre minimizes the pseudo-distance of
/// the two endpoints in the inscribed disc (`λ = 0` and `λ = 1`).
fn best_slice_disc(domain: &DomainSpec, p: &[C], q: &[C]) -> Option<(C, f64)> {
    let u: Vec<C> = q.iter().zip(p).map(|(a, b)| a - b).collect();
    let score = |c: C| -> f64 {
        let radius = slice_inradius(domain, p, &u, c);
        let need = c.norm().max((C::new(1.0, 0.0) - c).norm());
        if radius <= need {
            return 2.0 + need - radius;
        }
        pseudo_distance(-c / radius, (C::new(1.0, 0.0) - c) / radius)
    };
    let nm = NelderMead { max_iterations: 120, f_tol: 1e-12, ..Default::default() };
    let mut best: Option<(f64, C)> = None;
    for start in [C::new(0.5, 0.0), C::new(0.5, 0.5), C::new(0.5, -0.5)] {
        let res = nm.minimize(|x| score(C::new(x[0], x[1])), &[start.re, start.im], &[0.25, 0.25]);
        if res.value < 1.0 && best.is_none_or(|b| res.value < b.0) {
            best = Some((res.value, C::new(res.x[0], res.x[1])));
        }
    }
    let (_, c) = best?;
    Some((c, slice_inradius(domain, p, &u, c) * (1.0 - 1e-9)))
}

/// Componentwise discs on a polydisc: each coordinate interpolates its own
/// endpoints, and the coordinates with shorter distance are slowed down to
/// share the largest node.
fn polydisc_leg(domain: &DomainSpec, radii: &[f64], p: &[C], q: &[C], degree: usize) -> Option<OneDiscResult> {
    for level in [1.0 - 1e-4, 1.0 - 1e-3, 1.0 - 1e-2] {
        let parts: Option<Vec<(f64, Vec<C>)>> = (0..p.len())
            .map(|j| interpolating_polynomial(p[j] / radii[j], q[j] / radii[j], degree, level))
            .collect();
        let Some(parts) = parts else { continue };
        let r = parts.iter().map(|x| x.0).fold(0.0, f64::max);
        if r == 0.0 {
            continue;
        }
        let mut coeffs = vec![vec![C::new(0.0, 0.0); p.len()]; degree + 1];
        for (j, (rj, poly)) in parts.iter().enumerate() {
            let s = rj / r;
            for (k, c) in poly.iter().enumerate() {
                coeffs[k][j] = c * radii[j] * s.powi(k as i32);
            }
        }
        if let Some(res) = finish(domain, AnalyticDisc::from_coeffs_unchecked(coeffs), r, p, q, "componentwise polydisc disc") {
            return Some(res);
        }
    }
    None
}

/// `φ_r(ζ) = S(ζ) + (Q − S(r)) ζ/r + ζ(ζ − r) G(ζ)` with `G` affine: keeps
/// both endpoints exact while the node `r` is pushed down by penalized
/// Nelder–Mead (the penalty weight grows tenfold per restart).
fn refine_leg(domain: &DomainSpec, seed: &OneDiscResult, q: &[C], budget: &OptimizerBudget) -> Option<OneDiscResult> {
    let n = q.len();
    let base = seed.disc.coefficients().to_vec();
    let r0 = seed.node.value().re;
    let deg = base.len().max(4) - 1;
    let build = |x: &[f64]| -> (AnalyticDisc, f64) {
        let r = x[0];
        let mut coeffs = base.clone();
        coeffs.resize(deg + 1, vec![C::new(0.0, 0.0); n]);
        let s_r = AnalyticDisc::from_coeffs_unchecked(base.clone()).eval_unchecked(C::new(r, 0.0));
        for j in 0..n {
            let g0 = C::new(x[1 + 4 * j], x[2 + 4 * j]);
            let g1 = C::new(x[3 + 4 * j], x[4 + 4 * j]);
            // ζ(ζ − r)(g0 + g1 ζ) = −r g0 ζ + (g0 − r g1) ζ² + g1 ζ³
            coeffs[1][j] += (q[j] - s_r[j]) / r - g0 * r;
            coeffs[2][j] += g0 - g1 * r;
            coeffs[3][j] += g1;
        }
        (AnalyticDisc::from_coeffs_unchecked(coeffs), r)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ 0x1e9);
    let mut best_x = vec![0.0; 1 + 4 * n];
    best_x[0] = r0;
    let mut best: Option<OneDiscResult> = None;
    let mut mu = 10.0;
    for _ in 0..budget.restarts.min(3) {
        let start: Vec<f64> = best_x.iter().enumerate().map(|(i, v)| if i == 0 { *v } else { v + 0.01 * (rng.gen::<f64>() - 0.5) }).collect();
        let mut step = vec![0.02; start.len()];
        step[0] = 0.05 * (1.0 - r0).max(1e-3);
        let nm = NelderMead { max_iterations: budget.max_iterations, f_tol: 1e-12, ..Default::default() };
        let res = nm.minimize(
            |x| {
                if !(x[0] > 0.0 && x[0] < 1.0) {
                    return f64::INFINITY;
                }
                let m = build(x).0.default_margin(domain).margin;
                artanh(x[0]) + mu * (m + DEFAULT_SLACK).max(0.0)
            },
            &start,
            &step,
        );
        let (disc, r) = build(&res.x);
        if let Some(cand) = finish(domain, disc, r, &base[0], q, "refined slice disc") {
            if cand.distance_upper < best.as_ref().map_or(seed.distance_upper, |b| b.distance_upper) {
                best_x = res.x;
                best = Some(cand);
            }
        }
        mu *= 10.0;
    }
    best
}

/// Upper bound for the one-disc distance between `P` and `Q`: the smallest
/// Poincaré distance `artanh r` over the feasible discs found with
/// `φ(0) = P`, `φ(r) = Q`.
pub fn one_disc_distance_upper(domain: &DomainSpec, p: &Point, q: &Point, budget: &OptimizerBudget) -> Result<OneDiscResult> {
    check_point(domain, p)?;
    check_point(domain, q)?;
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    if p.distance(q) <= 1e-15 {
        return Ok(OneDiscResult::constant(p));
    }
    let (ps, qs) = (p.as_slice(), q.as_slice());
    let degree = budget.degree.max(LEG_DEGREE);
    let mut candidates = vec![];
    if let Some(d) = maps::ball_model_scaling(domain) {
        let (c, radius) = ball_slice(&d, ps, qs);
        candidates.extend(slice_leg(domain, ps, qs, c, radius * (1.0 - 1e-12), degree));
    } else {
        if let Some((c, radius)) = best_slice_disc(domain, ps, qs) {
            candidates.extend(slice_leg(domain, ps, qs, c, radius, degree));
        }
        if let DomainKind::Polydisc { radii } = domain.kind() {
            candidates.extend(polydisc_leg(domain, radii, ps, qs, degree));
        }
        if let DomainKind::Lempert { epsilon } = domain.kind() {
            candidates.extend(lempert_axis_leg(domain, *epsilon, ps, qs));
        }
    }
    if matches!(domain.kind(), DomainKind::Egg { .. } | DomainKind::Lempert { .. }) {
        let refined: Vec<OneDiscResult> = candidates
            .iter()
            .filter(|c| c.method == "slice Möbius disc")
            .filter_map(|c| refine_leg(domain, c, qs, budget))
            .collect();
        candidates.extend(refined);
    }
    let best = candidates
        .into_iter()
        .min_by(|a, b| a.distance_upper.total_cmp(&b.distance_upper))
        .ok_or_else(|| Error::NoFeasibleDisc("no seed disc joins the two points".into()))?;
    let worst = best.residuals[0].max(best.residuals[1]);
    if worst > ENDPOINT_TOLERANCE {
        return Err(Error::EndpointResidual(worst));
    }
    Ok(best)
}

/// Discs from `(p, 0)` to `(0, q)` in the Lempert domain
/// `{|z| < 2, |w| < 2, |zw| < ε}` (or the reverse, by the coordinate swap):
///
/// `f1 = p (1 − ζ/r) e^{−h}`, `f2 = (q/r) ζ e^{h − h(r)}`
///
/// with `h(ζ) = Σ_{k≤24} c_k ζ^k`, real `c_k`. On the circle the three
/// constraints are linear in `c` after taking logarithms; a linear program
/// maximizes the common slack, the node is the smallest `r` with slack at
/// least 0.01, and the exponentials are truncated at degree 256–1024.
fn lempert_axis_leg(domain: &DomainSpec, epsilon: f64, p: &[C], q: &[C]) -> Option<OneDiscResult> {
    let tiny = 1e-15;
    let (swap, a, b) = if p[1].norm() <= tiny && q[0].norm() <= tiny {
        (false, p[0], q[1])
    } else if p[0].norm() <= tiny && q[1].norm() <= tiny {
        (true, p[1], q[0])
    } else {
        return None;
    };
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return None;
    }
    let slack = |r: f64| lempert_lp(epsilon, a.norm(), b.norm(), r).map_or(f64::NEG_INFINITY, |x| x.0);
    const TARGET: f64 = 0.01;
    let (mut lo, mut hi) = (1e-3, 1.0 - 1e-6);
    if slack(hi) < TARGET {
        return None;
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if slack(mid) >= TARGET {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut r = hi;
    for _ in 0..6 {
        let (_, c) = lempert_lp(epsilon, a.norm(), b.norm(), r)?;
        for degree in [256, 512, 1024] {
            let disc = lempert_disc(&c, a, b, r, degree, swap);
            if let Some(res) = finish(domain, disc, r, p, q, "Lempert LP disc") {
                return Some(res);
            }
        }
        r += 0.1 * (1.0 - r);
    }
    None
}

/// Maximal common slack `t ≤ 1` of the log-constraints and the optimal `c`.
fn lempert_lp(epsilon: f64, pa: f64, qa: f64, r: f64) -> Option<(f64, Vec<f64>)> {
    const K: usize = 24;
    const M: usize = 512;
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let c: Vec<_> = (0..K).map(|_| lp.add_var(0.0, (-50.0, 50.0))).collect();
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    let ln2 = 2f64.ln();
    let h_r: Vec<f64> = (1..=K).map(|k| r.powi(k as i32)).collect();
    for i in 0..M {
        let theta = TAU * i as f64 / M as f64;
        let cosk: Vec<f64> = (1..=K).map(|k| (k as f64 * theta).cos()).collect();
        // log|f1| = log p + log|1 − e^{iθ}/r| − Re h ≤ log 2 − t
        let l1 = (C::new(1.0, 0.0) - C::from_polar(1.0 / r, theta)).norm().ln();
        let row: Vec<_> = c.iter().zip(&cosk).map(|(v, w)| (*v, -w)).chain([(t, 1.0)]).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, ln2 - pa.ln() - l1);
        // log|f2| = log(q/r) + Re h − h(r) ≤ log 2 − t
        let row: Vec<_> = c.iter().zip(cosk.iter().zip(&h_r)).map(|(v, (w, hr))| (*v, w - hr)).chain([(t, 1.0)]).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, ln2 - (qa / r).ln());
    }
    // |f1 f2| = (pq/r)|ζ − r|/r · e^{−h(r)} ≤ pq(1 + r)/r² · e^{−h(r)} ≤ ε e^{−t}
    let row: Vec<_> = c.iter().zip(&h_r).map(|(v, hr)| (*v, -hr)).chain([(t, 1.0)]).collect();
    lp.add_constraint(row.as_slice(), ComparisonOp::Le, (epsilon * r * r / (pa * qa * (1.0 + r))).ln());
    let sol = lp.solve().ok()?;
    Some((sol.objective(), c.iter().map(|v| *sol.var_value(*v)).collect()))
}

fn lempert_disc(c: &[f64], a: C, b: C, r: f64, degree: usize, swap: bool) -> AnalyticDisc {
    let mut h = vec![C::new(0.0, 0.0)];
    h.extend(c.iter().map(|v| C::new(*v, 0.0)));
    let neg: Vec<C> = h.iter().map(|v| -v).collect();
    let e1 = series::exp(&neg, degree);
    let f1 = series::mul(&[a, -a / r], &e1, degree);
    let hr = series::eval(&h, C::new(r, 0.0));
    let mut shifted = h.clone();
    shifted[0] = -hr;
    let e2 = series::exp(&shifted, degree);
    let mut f2 = series::mul(&[C::new(0.0, 0.0), b / r], &e2, degree);
    let at_r = series::eval(&f2, C::new(r, 0.0));
    let fix = b / at_r;
    f2.iter_mut().for_each(|v| *v *= fix);
    let coeffs = (0..=degree).map(|k| if swap { vec![f2[k], f1[k]] } else { vec![f1[k], f2[k]] }).collect();
    AnalyticDisc::from_coeffs_unchecked(coeffs)
}

/// Lower bound for the one-disc distance from `(1, 0)` to `(0, 1)` in the
/// Lempert domain: Harnack's inequalities force
/// `log(1/ε) ≤ ((1 + r)/(1 − r))² log 2` for every feasible node, i.e.
/// `r ≥ r_min = (√L − √log 2)/(√L + √log 2)`, `L = log(1/ε)`.
/// Returns `(r_min, artanh r_min)`.
pub fn lempert_lower_bound(epsilon: f64) -> Result<(f64, f64)> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let l = (1.0 / epsilon).ln();
    let ln2 = 2f64.ln();
    if l <= ln2 {
        return Ok((0.0, 0.0));
    }
    let r = (l.sqrt() - ln2.sqrt()) / (l.sqrt() + ln2.sqrt());
    Ok((r, artanh(r)))
}

/// Harnack bounds `((1 − r)/(1 + r), (1 + r)/(1 − r))` for the Poisson kernel `P_r`.
pub fn harnack_poisson_bounds(r: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("r must lie in [0, 1), got {r}")));
    }
    Ok(((1.0 - r) / (1.0 + r), (1.0 + r) / (1.0 - r)))
}

/// Cheap distance estimate used while moving waypoints: exact on the
/// ball-type kinds and the polydisc, the inscribed slice disc otherwise.
fn leg_estimate(domain: &DomainSpec, p: &[C], q: &[C]) -> f64 {
    if domain.rho(p) >= 0.0 || domain.rho(q) >= 0.0 {
        return f64::INFINITY;
    }
    if let Some(d) = maps::ball_model_scaling(domain) {
        return maps::ball_distance(&maps::unscale(p, &d), &maps::unscale(q, &d));
    }
    if let DomainKind::Polydisc { radii } = domain.kind() {
        return (0..p.len()).map(|j| artanh(pseudo_distance(p[j] / radii[j], q[j] / radii[j]))).fold(0.0, f64::max);
    }
    if norm(&p.iter().zip(q).map(|(a, b)| a - b).collect::<Vec<_>>()) <= 1e-15 {
        return 0.0;
    }
    best_slice_disc(domain, p, q).map_or(f64::INFINITY, |(c, radius)| artanh(pseudo_distance(-c / radius, (C::new(1.0, 0.0) - c) / radius)))
}

/// Upper bound for the Kobayashi distance from a chain of `k` discs.
///
/// Initialization is nested: the `k`-leg chain starts from the optimized
/// `(k − 1)`-leg chain with one waypoint duplicated (a zero-length leg) or
/// inserted at the Euclidean midpoint of its longest leg, whichever is
/// shorter, so more legs never do worse. Waypoints are then moved one at a
/// time (Nelder–Mead on a cheap leg estimate); a move is kept only if the
/// rebuilt discs shorten the chain.
pub fn chain_distance_upper(domain: &DomainSpec, p: &Point, q: &Point, k: usize, budget: &OptimizerBudget) -> Result<ChainPath> {
    if k == 0 {
        return Err(Error::InvalidArgument("a chain needs at least one leg".into()));
    }
    let first = one_disc_distance_upper(domain, p, q, budget)?;
    let mut chain = ChainPath::from_legs(vec![p.clone(), q.clone()], vec![first]);
    for legs in 2..=k {
        chain = extend_chain(domain, &chain, budget)?;
        debug_assert_eq!(chain.legs.len(), legs);
        chain = descend_waypoints(domain, chain, budget);
    }
    Ok(chain)
}

fn extend_chain(domain: &DomainSpec, chain: &ChainPath, budget: &OptimizerBudget) -> Result<ChainPath> {
    let longest = (0..chain.legs.len()).max_by(|&a, &b| chain.legs[a].distance_upper.total_cmp(&chain.legs[b].distance_upper)).unwrap_or(0);
    let mut waypoints = chain.waypoints.clone();
    let mut legs = chain.legs.clone();
    let duplicate = waypoints[longest].clone();
    waypoints.insert(longest + 1, duplicate.clone());
    legs.insert(longest, OneDiscResult::constant(&duplicate));
    let nested = ChainPath::from_legs(waypoints, legs);
    let (a, b) = (&chain.waypoints[longest], &chain.waypoints[longest + 1]);
    let mid = Point(a.iter().zip(b.iter()).map(|(x, y)| (x + y) * 0.5).collect());
    if domain.rho(&mid) < 0.0 {
        let seed = leg_seed(budget.seed, 1000 + longest);
        let left = one_disc_distance_upper(domain, a, &mid, &budget.clone().with_seed(seed));
        let right = one_disc_distance_upper(domain, &mid, b, &budget.clone().with_seed(seed + 1));
        if let (Ok(l), Ok(r)) = (left, right) {
            let mut waypoints = chain.waypoints.clone();
            waypoints.insert(longest + 1, mid);
            let mut legs = chain.legs.clone();
            legs.splice(longest..=longest, [l, r]);
            let split = ChainPath::from_legs(waypoints, legs);
            if split.total < nested.total {
                return Ok(split);
            }
        }
    }
    Ok(nested)
}

fn descend_waypoints(domain: &DomainSpec, mut chain: ChainPath, budget: &OptimizerBudget) -> ChainPath {
    let n = domain.dim();
    let nm = NelderMead { max_iterations: budget.max_iterations.min(200), f_tol: 1e-10, ..Default::default() };
    for sweep in 0..3 {
        let before = chain.total;
        for i in 1..chain.waypoints.len() - 1 {
            let (prev, next) = (chain.waypoints[i - 1].0.clone(), chain.waypoints[i + 1].0.clone());
            let to_point = |x: &[f64]| -> Vec<C> { (0..n).map(|j| C::new(x[2 * j], x[2 * j + 1])).collect() };
            let x0: Vec<f64> = chain.waypoints[i].iter().flat_map(|c| [c.re, c.im]).collect();
            let res = nm.minimize(
                |x| {
                    let w = to_point(x);
                    leg_estimate(domain, &prev, &w) + leg_estimate(domain, &w, &next)
                },
                &x0,
                &vec![0.05; 2 * n],
            );
            let w = Point(to_point(&res.x));
            let seed = leg_seed(budget.seed, 100 * (sweep + 1) + i);
            let left = one_disc_distance_upper(domain, &chain.waypoints[i - 1], &w, &budget.clone().with_seed(seed));
            let right = one_disc_distance_upper(domain, &w, &chain.waypoints[i + 1], &budget.clone().with_seed(seed + 1));
            if let (Ok(l), Ok(r)) = (left, right) {
                if l.distance_upper + r.distance_upper < chain.legs[i - 1].distance_upper + chain.legs[i].distance_upper {
                    chain.waypoints[i] = w;
                    chain.legs[i - 1] = l;
                    chain.legs[i] = r;
                    chain.total = chain.legs.iter().map(|l| l.distance_upper).sum();
                }
            }
        }
        if before - chain.total <= 1e-9 {
            break;
        }
    }
    chain
}

/// Replaces two consecutive legs by one disc from the start of `leg1` to the
/// end of `leg2`, if the discs are within `delta` of each other (sup over a
/// sample grid) and the new disc is no longer than the two legs together.
pub fn merge_discs(domain: &DomainSpec, leg1: &OneDiscResult, leg2: &OneDiscResult, delta: f64, budget: &OptimizerBudget) -> Option<OneDiscResult> {
    let gap = norm(&leg1.end().iter().zip(leg2.start()).map(|(a, b)| a - b).collect::<Vec<_>>());
    if gap > ENDPOINT_TOLERANCE * 10.0 {
        return None;
    }
    if leg2.distance_upper == 0.0 {
        return Some(leg1.clone());
    }
    if leg1.distance_upper == 0.0 {
        return Some(leg2.clone());
    }
    if leg1.disc.sup_distance(&leg2.disc, 8, 32) >= delta {
        return None;
    }
    let merged = one_disc_distance_upper(domain, &Point(leg1.start()), &Point(leg2.end()), budget).ok()?;
    (merged.distance_upper <= leg1.distance_upper + leg2.distance_upper).then_some(merged)
}

/// Fixed nets used by [`shorten_chain`].
pub struct ChainNets {
    pub eta: f64,
    pub eta_prime: f64,
    pub domain_net: Vec<Vec<C>>,
    pub disc_net: Vec<C>,
}

impl ChainNets {
    /// A cubic grid of spacing `η` restricted to the domain, and rings of the
    /// unit disc at Poincaré radii `k η'` with about `η'`-spaced points.
    pub fn new(domain: &DomainSpec, eta: f64, eta_prime: f64) -> Result<Self> {
        if !(eta > 0.0 && eta_prime > 0.0) {
            return Err(Error::InvalidArgument("net spacings must be positive".into()));
        }
        let bounds = domain.coordinate_bounds();
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .flat_map(|b| {
                let steps = (b / eta).floor() as i64;
                let axis: Vec<f64> = (-steps..=steps).map(|i| i as f64 * eta).collect();
                [axis.clone(), axis]
            })
            .collect();
        let mut domain_net = vec![];
        let total: usize = axes.iter().map(|a| a.len()).product();
        for idx in 0..total {
            let mut k = idx;
            let coords: Vec<f64> = axes
                .iter()
                .map(|a| {
                    let v = a[k % a.len()];
                    k /= a.len();
                    v
                })
                .collect();
            let z: Vec<C> = coords.chunks(2).map(|c| C::new(c[0], c[1])).collect();
            if domain.rho(&z) < 0.0 {
                domain_net.push(z);
            }
        }
        let mut disc_net = vec![C::new(0.0, 0.0)];
        for ring in 1.. {
            let radius = (ring as f64 * eta_prime).tanh();
            if radius > 0.999 {
                break;
            }
            let count = ((TAU * (ring as f64 * eta_prime).sinh() / eta_prime).ceil() as usize).max(3);
            disc_net.extend((0..count).map(|i| C::from_polar(radius, TAU * i as f64 / count as f64)));
        }
        Ok(Self { eta, eta_prime, domain_net, disc_net })
    }

    /// Default spacings: `η` an eighth of the diameter, `η' = 0.5`.
    pub fn default_for(domain: &DomainSpec) -> Result<Self> {
        Self::new(domain, domain_diameter(domain) / 8.0, 0.5)
    }

    pub fn signature(&self, leg: &OneDiscResult) -> NetSignature {
        let image: Vec<Vec<C>> = discs::grid_points(8, 32).into_iter().map(|z| leg.disc.eval_unchecked(z)).collect();
        let net_points = self
            .domain_net
            .iter()
            .enumerate()
            .filter(|(_, p)| image.iter().any(|w| norm(&w.iter().zip(p.iter()).map(|(a, b)| a - b).collect::<Vec<_>>()) <= self.eta))
            .map(|(i, _)| i)
            .collect();
        let nodes = [C::new(0.0, 0.0), leg.node.value()];
        let disc_nodes = self
            .disc_net
            .iter()
            .enumerate()
            .filter(|(_, s)| nodes.iter().any(|a| artanh(pseudo_distance(*a, **s)) <= self.eta_prime))
            .map(|(i, _)| i)
            .collect();
        NetSignature { net_points, disc_nodes }
    }
}

/// Diameter of a domain; all kinds are circular, so it is twice the largest modulus.
pub fn domain_diameter(domain: &DomainSpec) -> f64 {
    2.0 * domain.circumscribing_radius()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeAttempt {
    /// Index of the first of the two legs.
    pub index: usize,
    /// 1: legs with equal net signatures; 2: any adjacent pair.
    pub phase: u8,
    pub accepted: bool,
    pub total_before: f64,
    pub total_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortenTrace {
    pub attempts: Vec<MergeAttempt>,
    pub initial_legs: usize,
    pub final_legs: usize,
    pub net_size: usize,
    pub disc_net_size: usize,
}

/// [`shorten_chain_traced`] without the trace.
pub fn shorten_chain(domain: &DomainSpec, chain: &ChainPath, eta: f64, eta_prime: f64, budget: &OptimizerBudget) -> Result<ChainPath> {
    Ok(shorten_chain_traced(domain, chain, eta, eta_prime, budget)?.0)
}

/// Repeatedly merges adjacent legs: first pairs with equal net signatures,
/// then any adjacent pair, accepting a merge only when the total does not
/// grow, until no merge is accepted.
pub fn shorten_chain_traced(domain: &DomainSpec, chain: &ChainPath, eta: f64, eta_prime: f64, budget: &OptimizerBudget) -> Result<(ChainPath, ShortenTrace)> {
    let nets = ChainNets::new(domain, eta, eta_prime)?;
    let delta = domain_diameter(domain);
    let mut current = chain.clone();
    let mut attempts = vec![];
    let mut rejected: BTreeSet<(Vec<u64>, Vec<u64>)> = BTreeSet::new();
    let key = |p: &Point| -> Vec<u64> { p.iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]).collect() };
    'outer: loop {
        let signatures: Vec<NetSignature> = current.legs.iter().map(|l| nets.signature(l)).collect();
        for phase in [1u8, 2] {
            for i in 0..current.legs.len().saturating_sub(1) {
                if phase == 1 && signatures[i] != signatures[i + 1] {
                    continue;
                }
                let pair = (key(&current.waypoints[i]), key(&current.waypoints[i + 2]));
                if rejected.contains(&pair) {
                    continue;
                }
                let seed = leg_seed(budget.seed, 7000 + attempts.len());
                let merged = merge_discs(domain, &current.legs[i], &current.legs[i + 1], delta, &budget.clone().with_seed(seed));
                let before = current.total;
                match merged {
                    Some(leg) => {
                        current.waypoints.remove(i + 1);
                        current.legs.splice(i..=i + 1, [leg]);
                        current.total = current.legs.iter().map(|l| l.distance_upper).sum();
                        attempts.push(MergeAttempt { index: i, phase, accepted: true, total_before: before, total_after: current.total });
                        continue 'outer;
                    }
                    None => {
                        rejected.insert(pair);
                        attempts.push(MergeAttempt { index: i, phase, accepted: false, total_before: before, total_after: before });
                    }
                }
            }
        }
        break;
    }
    let trace = ShortenTrace {
        attempts,
        initial_legs: chain.legs.len(),
        final_legs: current.legs.len(),
        net_size: nets.domain_net.len(),
        disc_net_size: nets.disc_net.len(),
    };
    Ok((current, trace))
}

/// Chain through `k − 1` random waypoints drawn from the ball of radius
/// `spread` around the segment midpoint (kept only if inside the domain).
pub fn random_chain(domain: &DomainSpec, p: &Point, q: &Point, k: usize, spread: f64, budget: &OptimizerBudget) -> Result<ChainPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let n = domain.dim();
    let mut waypoints = vec![p.clone()];
    for i in 1..k {
        let t = i as f64 / k as f64;
        let base: Vec<C> = p.iter().zip(q.iter()).map(|(a, b)| a * (1.0 - t) + b * t).collect();
        let w = loop {
            let cand: Vec<C> = base.iter().map(|c| c + C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * (2.0 * spread / (n as f64).sqrt())).collect();
            if domain.rho(&cand) < -1e-3 {
                break cand;
            }
        };
        waypoints.push(Point(w));
    }
    waypoints.push(q.clone());
    ChainPath::through(domain, waypoints, budget)
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

    fn check_leg(domain: &DomainSpec, leg: &OneDiscResult, p: &Point, q: &Point) {
        assert!((norm(&leg.start().iter().zip(p.iter()).map(|(a, b)| a - b).collect::<Vec<_>>())) <= ENDPOINT_TOLERANCE);
        assert!((norm(&leg.end().iter().zip(q.iter()).map(|(a, b)| a - b).collect::<Vec<_>>())) <= ENDPOINT_TOLERANCE);
        assert!(leg.disc.feasibility_margin(domain, 24, 4 * (leg.disc.degree() + 1)).margin < 0.0);
    }

    #[test]
    fn ball_one_disc_distances() {
        let ball = DomainSpec::ball(2).unwrap();
        let o = Point::origin(2);
        let q = Point::real(&[0.5, 0.0]);
        let leg = one_disc_distance_upper(&ball, &o, &q, &quick()).unwrap();
        assert!((leg.distance_upper / 0.5f64.atanh() - 1.0).abs() < 0.01, "{}", leg.distance_upper);
        check_leg(&ball, &leg, &o, &q);
        assert_eq!(one_disc_distance_upper(&ball, &q, &q, &quick()).unwrap().distance_upper, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 3] {
            let ball = DomainSpec::ball(n).unwrap();
            for _ in 0..10 {
                let v: Vec<C> = (0..n).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
                let z = Point(v.iter().map(|x| x * (0.9 * rng.gen::<f64>() / norm(&v))).collect());
                let leg = one_disc_distance_upper(&ball, &Point::origin(n), &z, &quick()).unwrap();
                let exact = z.norm().atanh();
                assert!(leg.distance_upper >= exact * (1.0 - 1e-9) && leg.distance_upper <= exact * 1.01, "{} {exact}", leg.distance_upper);
            }
        }
    }

    #[test]
    fn general_pairs_and_symmetry() {
        let ball = DomainSpec::ball(2).unwrap();
        let a = Point(vec![c(0.3, 0.2), c(-0.4, 0.1)]);
        let b = Point(vec![c(-0.5, 0.0), c(0.2, 0.5)]);
        let exact = maps::ball_distance(&a, &b);
        let ab = one_disc_distance_upper(&ball, &a, &b, &quick()).unwrap();
        let ba = one_disc_distance_upper(&ball, &b, &a, &quick()).unwrap();
        assert!(ab.distance_upper <= exact * 1.01 && ab.distance_upper >= exact * (1.0 - 1e-9));
        assert!((ab.distance_upper / ba.distance_upper - 1.0).abs() < 0.02);
        check_leg(&ball, &ab, &a, &b);
        let pd = DomainSpec::polydisc(vec![1.0, 2.0]).unwrap();
        let leg = one_disc_distance_upper(&pd, &a, &b, &quick()).unwrap();
        let exact = (0..2).map(|j| artanh(pseudo_distance(a[j] / [1.0, 2.0][j], b[j] / [1.0, 2.0][j]))).fold(0.0, f64::max);
        assert!(leg.distance_upper >= exact * (1.0 - 1e-9) && leg.distance_upper <= exact * 1.01, "{} {exact}", leg.distance_upper);
        check_leg(&pd, &leg, &a, &b);
        let egg = DomainSpec::egg(vec![1, 2]).unwrap();
        let ab = one_disc_distance_upper(&egg, &a, &b, &quick()).unwrap();
        let ba = one_disc_distance_upper(&egg, &b, &a, &quick()).unwrap();
        check_leg(&egg, &ab, &a, &b);
        assert!((ab.distance_upper / ba.distance_upper - 1.0).abs() < 0.02, "{} {}", ab.distance_upper, ba.distance_upper);
        // the egg contains the ball, so its distances are smaller
        assert!(ab.distance_upper <= maps::ball_distance(&a, &b) * 1.01);
        assert!(one_disc_distance_upper(&egg, &a, &Point::real(&[1.0, 0.0]), &quick()).is_err());
    }

    #[test]
    fn lempert_bounds_algebra() {
        assert_eq!(lempert_lower_bound(0.5).unwrap(), (0.0, 0.0));
        let (r, d) = lempert_lower_bound(2f64.powi(-9)).unwrap();
        assert!((r - 0.5).abs() < 1e-14 && (d - 0.549_306_144_334_054_9).abs() < 1e-12);
        let (r, d) = lempert_lower_bound(2f64.powi(-25)).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-14 && (d - 0.804_718_956_217_050_2).abs() < 1e-12);
        assert!(lempert_lower_bound(1.0).is_err() && lempert_lower_bound(0.0).is_err());
        assert_eq!(harnack_poisson_bounds(0.0).unwrap(), (1.0, 1.0));
        let (lo, hi) = harnack_poisson_bounds(0.5).unwrap();
        assert!((lo - 1.0 / 3.0).abs() < 1e-15 && (hi - 3.0).abs() < 1e-15);
        let (lo, hi) = harnack_poisson_bounds(0.9).unwrap();
        assert!((lo - 1.0 / 19.0).abs() < 1e-14 && (hi - 19.0).abs() < 1e-12);
        assert!(harnack_poisson_bounds(1.0).is_err());
    }

    #[test]
    fn lempert_axis_discs() {
        let p = Point::real(&[1.0, 0.0]);
        let q = Point::real(&[0.0, 1.0]);
        for k in [2, 9] {
            let eps = 2f64.powi(-k);
            let dom = DomainSpec::lempert(eps).unwrap();
            let leg = one_disc_distance_upper(&dom, &p, &q, &quick()).unwrap();
            check_leg(&dom, &leg, &p, &q);
            assert!(leg.distance_upper >= lempert_lower_bound(eps).unwrap().1);
            let back = one_disc_distance_upper(&dom, &q, &p, &quick()).unwrap();
            check_leg(&dom, &back, &q, &p);
            assert!((back.distance_upper / leg.distance_upper - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn chains_on_the_ball() {
        let ball = DomainSpec::ball(2).unwrap();
        let o = Point::origin(2);
        let q = Point::real(&[0.5, 0.0]);
        let chain = chain_distance_upper(&ball, &o, &q, 2, &quick()).unwrap();
        assert_eq!(chain.legs.len(), 2);
        assert!(chain.total <= 0.5f64.atanh() * 1.01, "{}", chain.total);
        assert!((chain.total - chain.legs.iter().map(|l| l.distance_upper).sum::<f64>()).abs() < 1e-15);
        let one = chain_distance_upper(&ball, &o, &q, 1, &quick()).unwrap();
        assert!(chain.total <= one.total + 1e-9);
        assert_eq!(chain_distance_upper(&ball, &q, &q, 3, &quick()).unwrap().total, 0.0);
    }

    #[test]
    fn shortening_collapses_ball_chains() {
        let ball = DomainSpec::ball(2).unwrap();
        let p = Point(vec![c(0.4, -0.2), c(0.1, 0.3)]);
        let q = Point(vec![c(-0.3, 0.1), c(-0.2, -0.4)]);
        let chain = random_chain(&ball, &p, &q, 4, 0.3, &quick()).unwrap();
        assert_eq!(chain.legs.len(), 4);
        let nets = ChainNets::default_for(&ball).unwrap();
        let (short, trace) = shorten_chain_traced(&ball, &chain, nets.eta, nets.eta_prime, &quick()).unwrap();
        assert_eq!(short.legs.len(), 1);
        assert!(short.total <= chain.total);
        assert!(trace.attempts.iter().all(|a| a.total_after <= a.total_before));
        let exact = maps::ball_distance(&p, &q);
        assert!(short.total <= exact * 1.01, "{} {exact}", short.total);
        let single = ChainPath::through(&ball, vec![p.clone(), q.clone()], &quick()).unwrap();
        assert_eq!(shorten_chain(&ball, &single, 0.25, 0.5, &quick()).unwrap(), single);
    }

    #[test]
    fn merge_edge_cases() {
        let ball = DomainSpec::ball(2).unwrap();
        let p = Point::origin(2);
        let m = Point::real(&[0.25, 0.0]);
        let q = Point::real(&[0.5, 0.0]);
        let l1 = one_disc_distance_upper(&ball, &p, &m, &quick()).unwrap();
        let l2 = one_disc_distance_upper(&ball, &m, &q, &quick()).unwrap();
        let merged = merge_discs(&ball, &l1, &l2, 10.0, &quick()).unwrap();
        assert!(merged.distance_upper <= l1.distance_upper + l2.distance_upper);
        let degenerate = OneDiscResult::constant(&m);
        assert_eq!(merge_discs(&ball, &l1, &degenerate, 10.0, &quick()).unwrap(), l1);
        assert!(merge_discs(&ball, &l1, &l2, 1e-9, &quick()).is_none());
        assert!(merge_discs(&ball, &l2, &l1, 10.0, &quick()).is_none());
    }

    #[test]
    fn nets_and_signatures() {
        let ball = DomainSpec::ball(2).unwrap();
        let nets = ChainNets::default_for(&ball).unwrap();
        assert!((nets.eta - 0.25).abs() < 1e-15);
        assert!(nets.domain_net.iter().all(|p| ball.rho(p) < 0.0));
        let leg = one_disc_distance_upper(&ball, &Point::origin(2), &Point::real(&[0.5, 0.0]), &quick()).unwrap();
        let sig = nets.signature(&leg);
        assert!(!sig.net_points.is_empty() && sig.disc_nodes.contains(&0));
        assert!(sig.net_points.len() <= nets.domain_net.len());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn legs_are_feasible_and_bounded_below(x in -0.6f64..0.6, y in -0.6f64..0.6, u in -0.6f64..0.6, v in -0.6f64..0.6) {
            let egg = DomainSpec::egg(vec![1, 2]).unwrap();
            let p = Point(vec![c(x, 0.1), c(y * 0.8, 0.0)]);
            let q = Point(vec![c(u, -0.1), c(0.0, v * 0.8)]);
            prop_assert!(egg.rho(&p) < 0.0 && egg.rho(&q) < 0.0);
            let leg = one_disc_distance_upper(&egg, &p, &q, &quick()).unwrap();
            prop_assert!(leg.residuals[0] <= ENDPOINT_TOLERANCE && leg.residuals[1] <= ENDPOINT_TOLERANCE);
            // the egg lies in the bidisc, whose distance is a lower bound
            let lower = (0..2).map(|j| artanh(pseudo_distance(p[j], q[j]))).fold(0.0, f64::max);
            prop_assert!(leg.distance_upper >= lower - 1e-9);
        }
    }
}
