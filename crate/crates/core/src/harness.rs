//! Named experiments wiring the library into reproducible sweeps, and their
//! CSV/JSON reports.
//!
//! Sweep points run concurrently, each with a seed derived from the
//! configuration seed and its index, so reports are byte-identical across
//! runs and thread counts. A failing sub-run is recorded in its row's
//! `status` column and never aborts the sweep.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::PathBuf;

use crate::chains::{self, ChainNets};
use crate::dbar;
use crate::domains::{Direction, DomainKind, DomainSpec, Point};
use crate::error::{Error, Result};
use crate::invariants;
use crate::metrics::{self, BoundKind, MetricQuery};
use crate::optimize::OptimizerBudget;

type C = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    BallValidation,
    EggReport,
    LempertSweep,
    Anisotropy,
    QuotientScan,
    ChainDemo,
    DbarScaling,
    StabilitySweep,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::BallValidation,
        Experiment::EggReport,
        Experiment::LempertSweep,
        Experiment::Anisotropy,
        Experiment::QuotientScan,
        Experiment::ChainDemo,
        Experiment::DbarScaling,
        Experiment::StabilitySweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::BallValidation => "ball-validation",
            Experiment::EggReport => "egg-report",
            Experiment::LempertSweep => "lempert-sweep",
            Experiment::Anisotropy => "anisotropy",
            Experiment::QuotientScan => "quotient-scan",
            Experiment::ChainDemo => "chain-demo",
            Experiment::DbarScaling => "dbar-scaling",
            Experiment::StabilitySweep => "stability-sweep",
        }
    }

    /// Domain used when none is given.
    pub fn default_domain(self) -> DomainSpec {
        match self {
            Experiment::BallValidation | Experiment::ChainDemo | Experiment::DbarScaling => DomainSpec::ball(2),
            Experiment::EggReport | Experiment::QuotientScan => DomainSpec::egg(vec![1, 2]),
            Experiment::LempertSweep => DomainSpec::lempert(0.25),
            Experiment::Anisotropy | Experiment::StabilitySweep => DomainSpec::stretched_ball(4.0),
        }
        .expect("default domains are valid")
    }

    fn check_domain(self, domain: &DomainSpec) -> Result<()> {
        let ok = match (self, domain.kind()) {
            (Experiment::BallValidation, DomainKind::Ball { .. }) => true,
            (Experiment::EggReport, DomainKind::Egg { exponents }) => exponents.len() == 2 && exponents[0] == 1,
            (Experiment::LempertSweep, DomainKind::Lempert { .. }) => true,
            (Experiment::Anisotropy | Experiment::StabilitySweep, DomainKind::StretchedBall { .. }) => true,
            (Experiment::QuotientScan, k) => matches!(k, DomainKind::Ball { .. } | DomainKind::Egg { .. } | DomainKind::StretchedBall { .. }),
            (Experiment::ChainDemo | Experiment::DbarScaling, _) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            let want = match self {
                Experiment::BallValidation => "a ball",
                Experiment::EggReport => "an egg with exponents [1, m]",
                Experiment::LempertSweep => "a lempert domain",
                Experiment::Anisotropy | Experiment::StabilitySweep => "a stretched ball",
                _ => "a ball, egg or stretched ball",
            };
            Err(Error::InvalidArgument(format!("{} needs {want}, got a {} domain", self.name(), domain.kind_name())))
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub domain: DomainSpec,
    pub budget: OptimizerBudget,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, domain: DomainSpec, budget: OptimizerBudget, seed: u64) -> Result<Self> {
        experiment.check_domain(&domain)?;
        Ok(Self { experiment, domain, budget: budget.with_seed(seed), seed, out: None, format: ReportFormat::Csv })
    }

    /// The experiment on its default domain with the default budget.
    pub fn standard(experiment: Experiment, seed: u64) -> Self {
        Self::new(experiment, experiment.default_domain(), OptimizerBudget::default(), seed).expect("default domain fits")
    }

    fn sub_budget(&self, index: usize) -> OptimizerBudget {
        self.budget.clone().with_seed(derive_seed(self.seed, index))
    }
}

fn derive_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Flag(bool),
    Text(String),
    /// Not applicable, or not computed because the sub-run failed.
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v}"),
            Cell::Int(v) => format!("{v}"),
            Cell::Flag(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Num(v) => s.serialize_f64(*v),
            Cell::Int(v) => s.serialize_i64(*v),
            Cell::Flag(v) => s.serialize_bool(*v),
            Cell::Text(v) => s.serialize_str(v),
            Cell::Missing => s.serialize_none(),
        }
    }
}

/// One report line: named columns in a fixed order, ending with the
/// `method`, `bound_kind` and `status` columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultRow {
    pub columns: Vec<(String, Cell)>,
}

impl Serialize for ResultRow {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.columns.len()))?;
        for (k, v) in &self.columns {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl ResultRow {
    fn push(mut self, name: &str, cell: Cell) -> Self {
        self.columns.push((name.to_string(), cell));
        self
    }

    fn num(self, name: &str, v: f64) -> Self {
        self.push(name, Cell::Num(v))
    }

    fn opt(self, name: &str, v: Option<f64>) -> Self {
        self.push(name, v.map_or(Cell::Missing, Cell::Num))
    }

    fn int(self, name: &str, v: i64) -> Self {
        self.push(name, Cell::Int(v))
    }

    fn text(self, name: &str, v: impl Into<String>) -> Self {
        self.push(name, Cell::Text(v.into()))
    }

    fn flag(self, name: &str, v: bool) -> Self {
        self.push(name, Cell::Flag(v))
    }

    fn provenance(self, method: impl Into<String>, bound_kind: &str, status: &Result<()>) -> Self {
        let status = match status {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        };
        self.text("method", method).text("bound_kind", bound_kind).text("status", status)
    }

    pub fn get(&self, name: &str) -> Option<&Cell> {
        self.columns.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    pub fn num_of(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(Cell::as_f64)
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.get("status"), Some(Cell::Text(s)) if s == "ok")
    }
}

fn bound_name(kind: BoundKind) -> &'static str {
    match kind {
        BoundKind::Upper => "upper",
        BoundKind::Lower => "lower",
        BoundKind::Exact => "exact",
    }
}

/// Runs the configured experiment. Errors only for configuration problems;
/// sub-run failures end up in the rows.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.experiment.check_domain(&config.domain)?;
    log::info!("running {} on a {} domain, seed {}", config.experiment, config.domain.kind_name(), config.seed);
    match config.experiment {
        Experiment::BallValidation => ball_validation(config),
        Experiment::EggReport => egg_report(config),
        Experiment::LempertSweep => lempert_sweep(config),
        Experiment::Anisotropy => anisotropy(config),
        Experiment::QuotientScan => quotient_scan(config),
        Experiment::ChainDemo => chain_demo(config),
        Experiment::DbarScaling => dbar_scaling(config),
        Experiment::StabilitySweep => stability_sweep(config),
    }
}

/// Uniform sample of the ball of radius `radius` in `C^n`.
fn ball_sample(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<C> {
    loop {
        let v: Vec<C> = (0..n).map(|_| C::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0)).collect();
        let len = crate::norm(&v);
        if len <= 1.0 && len > 1e-3 {
            return v.iter().map(|c| c * radius).collect();
        }
    }
}

/// Random point of the domain, pulled in by `shrink` from the boundary along
/// its ray from the origin.
fn domain_sample(rng: &mut ChaCha8Rng, domain: &DomainSpec, shrink: f64) -> Vec<C> {
    let n = domain.dim();
    let dir = ball_sample(rng, n, 1.0);
    let t = rng.gen::<f64>();
    let exit = domain.ray_exit(&vec![C::new(0.0, 0.0); n], &dir);
    dir.iter().map(|c| c * (exit * shrink * t)).collect()
}

const BALL_TOLERANCE: f64 = 0.02;
const BALL_POINTS: usize = 20;
const BALL_QUOTIENT_POINTS: usize = 10;

fn ball_validation(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let n = config.domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let queries: Vec<(Vec<C>, Vec<C>)> = (0..BALL_POINTS).map(|_| (ball_sample(&mut rng, n, 0.9), ball_sample(&mut rng, n, 1.0))).collect();
    let domain = &config.domain;
    let metric_rows: Vec<Vec<ResultRow>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, (z, xi))| {
            let budget = config.sub_budget(i);
            let row = |quantity: &str, exact: Option<f64>, bound: Result<metrics::MetricBound>| {
                let base = ResultRow::default().int("point", i as i64).text("quantity", quantity).num("z_norm", crate::norm(z)).opt("closed_form", exact);
                match bound {
                    Ok(b) => {
                        let rel = exact.map(|e| (b.value - e).abs() / e);
                        base.num("value", b.value)
                            .opt("rel_error", rel)
                            .flag("within_tolerance", rel.is_some_and(|r| r <= BALL_TOLERANCE))
                            .provenance(b.method, bound_name(b.kind), &Ok(()))
                    }
                    Err(e) => base.push("value", Cell::Missing).push("rel_error", Cell::Missing).flag("within_tolerance", false).provenance("", "none", &Err(e)),
                }
            };
            let q = match MetricQuery::new(Point(z.clone()), Direction(xi.clone())) {
                Ok(q) => q,
                Err(e) => return vec![row("F_K", None, Err(e))],
            };
            let exact = metrics::kobayashi_exact_model(domain, &q).ok().map(|b| b.value);
            vec![
                row("F_K", exact, metrics::kobayashi_upper(domain, &q, &budget)),
                row("F_C", exact, metrics::caratheodory_lower(domain, &q, &budget)),
            ]
        })
        .collect();
    let quotient_rows: Vec<ResultRow> = queries[..BALL_QUOTIENT_POINTS]
        .par_iter()
        .enumerate()
        .map(|(i, (z, _))| {
            let base = ResultRow::default().int("point", i as i64).text("quantity", "M").num("z_norm", crate::norm(z)).num("closed_form", 1.0);
            match invariants::quotient_upper(domain, &Point(z.clone()), &config.sub_budget(i)) {
                Ok(est) => {
                    let rel = (est.m_upper - 1.0).abs();
                    base.num("value", est.m_upper)
                        .num("rel_error", rel)
                        .flag("within_tolerance", est.m_upper <= 1.0 + 1e-6)
                        .provenance("automorphism witnesses", if est.exact { "exact" } else { "upper" }, &Ok(()))
                }
                Err(e) => base.push("value", Cell::Missing).push("rel_error", Cell::Missing).flag("within_tolerance", false).provenance("", "none", &Err(e)),
            }
        })
        .collect();
    Ok(metric_rows.into_iter().flatten().chain(quotient_rows).collect())
}

/// `α ∈ {0, 0.1, …, 0.9, 0.99}`.
pub fn egg_alphas() -> Vec<f64> {
    let mut a: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    a.push(0.99);
    a
}

fn egg_report(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let domain = &config.domain;
    let mut rows = vec![];
    let base = |quantity: &str, alpha: f64, direction: &str| ResultRow::default().text("quantity", quantity).num("alpha", alpha).text("direction", direction);
    match invariants::circular_center_exact(domain, &config.sub_budget(0)) {
        Ok(est) => {
            let kind = if est.exact { "exact" } else { "bracket" };
            for (q, lo, hi) in [("C_center", est.c_lower, est.c_lower), ("K_center", est.k_upper, est.k_upper), ("M_center", est.m_lower, est.m_upper)] {
                rows.push(base(q, 0.0, "none").num("lower", lo).num("upper", hi).push("ratio", Cell::Missing).provenance("circular centre brute force", kind, &Ok(())));
            }
        }
        Err(e) => rows.push(base("M_center", 0.0, "none").push("lower", Cell::Missing).push("upper", Cell::Missing).push("ratio", Cell::Missing).provenance("", "none", &Err(e))),
    }
    let cases: Vec<(f64, &str, [f64; 2])> = egg_alphas().into_iter().flat_map(|a| [(a, "normal", [1.0, 0.0]), (a, "tangential", [0.0, 1.0])]).collect();
    let ratio_rows: Vec<ResultRow> = cases
        .par_iter()
        .enumerate()
        .map(|(i, (alpha, dir, xi))| {
            let budget = config.sub_budget(i + 1);
            let run = || -> Result<(metrics::MetricBound, metrics::MetricBound)> {
                let q = MetricQuery::new(Point::real(&[*alpha, 0.0]), Direction::real(xi))?;
                Ok((metrics::kobayashi_upper(domain, &q, &budget)?, metrics::caratheodory_lower(domain, &q, &budget)?))
            };
            match run() {
                Ok((up, lo)) => base("F_ratio", *alpha, dir)
                    .num("lower", lo.value)
                    .num("upper", up.value)
                    .num("ratio", up.value / lo.value)
                    .provenance(format!("{} / {}", up.method, lo.method), "bracket", &Ok(())),
                Err(e) => base("F_ratio", *alpha, dir).push("lower", Cell::Missing).push("upper", Cell::Missing).push("ratio", Cell::Missing).provenance("", "none", &Err(e)),
            }
        })
        .collect();
    rows.extend(ratio_rows);
    Ok(rows)
}

pub const LEMPERT_KS: std::ops::RangeInclusive<i32> = 2..=12;

fn lempert_sweep(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let ks: Vec<i32> = LEMPERT_KS.collect();
    Ok(ks
        .par_iter()
        .enumerate()
        .map(|(i, &k)| {
            let eps = 2f64.powi(-k);
            let base = ResultRow::default().int("k", k as i64).num("epsilon", eps);
            let run = || -> Result<((f64, f64), chains::OneDiscResult)> {
                let lower = chains::lempert_lower_bound(eps)?;
                let domain = DomainSpec::lempert(eps)?;
                let upper = chains::one_disc_distance_upper(&domain, &Point::real(&[1.0, 0.0]), &Point::real(&[0.0, 1.0]), &config.sub_budget(i))?;
                Ok((lower, upper))
            };
            match run() {
                Ok(((r, lower), upper)) => base
                    .num("harnack_r", r)
                    .num("lower", lower)
                    .num("upper", upper.distance_upper)
                    .flag("consistent", lower <= upper.distance_upper)
                    .provenance(format!("harnack / {}", upper.method), "bracket", &Ok(())),
                Err(e) => base
                    .push("harnack_r", Cell::Missing)
                    .push("lower", Cell::Missing)
                    .push("upper", Cell::Missing)
                    .flag("consistent", false)
                    .provenance("", "none", &Err(e)),
            }
        })
        .collect())
}

fn anisotropy(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let domain = &config.domain;
    let stretch = match domain.kind() {
        DomainKind::StretchedBall { stretch } => *stretch,
        _ => unreachable!("checked by check_domain"),
    };
    let base = |q: &str| ResultRow::default().num("N", stretch).text("quantity", q);
    let run = |xi: [f64; 2], i: usize| -> Result<(metrics::MetricBound, metrics::MetricBound)> {
        let q = MetricQuery::new(Point::origin(2), Direction::real(&xi))?;
        let budget = config.sub_budget(i);
        Ok((metrics::kobayashi_upper(domain, &q, &budget)?, metrics::caratheodory_lower(domain, &q, &budget)?))
    };
    let mut rows = vec![];
    let mut results = vec![];
    for (i, (name, xi, reference)) in [("F_e1", [1.0, 0.0], 1.0), ("F_e2", [0.0, 1.0], 1.0 / stretch)].into_iter().enumerate() {
        match run(xi, i) {
            Ok((up, lo)) => {
                rows.push(
                    base(name)
                        .num("lower", lo.value)
                        .num("upper", up.value)
                        .num("estimate", up.value)
                        .num("reference", reference)
                        .num("rel_error", (up.value - reference).abs() / reference)
                        .provenance(format!("{} / {}", up.method, lo.method), "bracket", &Ok(())),
                );
                results.push(Some((up.value, lo.value)));
            }
            Err(e) => {
                rows.push(
                    base(name)
                        .push("lower", Cell::Missing)
                        .push("upper", Cell::Missing)
                        .push("estimate", Cell::Missing)
                        .num("reference", reference)
                        .push("rel_error", Cell::Missing)
                        .provenance("", "none", &Err(e)),
                );
                results.push(None);
            }
        }
    }
    let ratio = base("ratio");
    rows.push(match (results[0], results[1]) {
        (Some((u1, l1)), Some((u2, l2))) => {
            let est = u1 / u2;
            ratio
                .num("lower", l1 / u2)
                .num("upper", u1 / l2)
                .num("estimate", est)
                .num("reference", stretch)
                .num("rel_error", (est - stretch).abs() / stretch)
                .provenance("ratio of kobayashi upper bounds", "bracket", &Ok(()))
        }
        _ => ratio
            .push("lower", Cell::Missing)
            .push("upper", Cell::Missing)
            .push("estimate", Cell::Missing)
            .num("reference", stretch)
            .push("rel_error", Cell::Missing)
            .provenance("", "none", &Err(Error::InvalidArgument("a direction failed".into()))),
    });
    Ok(rows)
}

const SCAN_STEPS: usize = 6;

/// Boundary point over the profile diagonal; strongly pseudoconvex for the
/// supported kinds (no coordinate vanishes there).
fn scan_boundary_point(domain: &DomainSpec) -> Vec<C> {
    let n = domain.dim();
    let dir = vec![1.0 / (n as f64).sqrt(); n];
    domain.profile_boundary_point(&dir).into_iter().map(|x| C::new(x, 0.0)).collect()
}

fn quotient_scan(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let domain = &config.domain;
    let bp = scan_boundary_point(domain);
    let reach = domain.boundary_distance(&Point::origin(domain.dim()))?;
    let steps: Vec<f64> = (0..SCAN_STEPS).map(|j| 0.5 * reach * 0.5f64.powi(j as i32)).collect();
    Ok(steps
        .par_iter()
        .enumerate()
        .map(|(j, &eps)| {
            let base = ResultRow::default().int("step", j as i64).num("eps", eps);
            let run = || -> Result<(f64, invariants::VolumeInvariantEstimate)> {
                let z = domain.normal_ray_point(&bp, eps)?;
                Ok((domain.boundary_distance(&z)?, invariants::quotient_upper(domain, &z, &config.sub_budget(j))?))
            };
            match run() {
                Ok((d, est)) => base
                    .num("boundary_distance", d)
                    .num("c_lower", est.c_lower)
                    .num("k_upper", est.k_upper)
                    .num("m_lower", est.m_lower)
                    .num("m_upper", est.m_upper)
                    .provenance("normal ray toward a strongly pseudoconvex point", if est.exact { "exact" } else { "bracket" }, &Ok(())),
                Err(e) => ["boundary_distance", "c_lower", "k_upper", "m_lower", "m_upper"]
                    .iter()
                    .fold(base, |r, c| r.push(c, Cell::Missing))
                    .provenance("", "none", &Err(e)),
            }
        })
        .collect())
}

const CHAIN_INSTANCES: usize = 3;
const CHAIN_LEGS: usize = 4;

fn chain_demo(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let domain = &config.domain;
    let nets = ChainNets::default_for(domain)?;
    let per_instance: Vec<Vec<ResultRow>> = (0..CHAIN_INSTANCES)
        .into_par_iter()
        .map(|inst| {
            let budget = config.sub_budget(inst);
            let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
            let p = Point(domain_sample(&mut rng, domain, 0.7));
            let q = Point(domain_sample(&mut rng, domain, 0.7));
            let row = |event: &str| ResultRow::default().int("instance", inst as i64).text("event", event);
            let fill = |r: ResultRow, phase: Option<i64>, index: Option<i64>, accepted: Option<bool>, legs: Option<i64>, total: Option<f64>| {
                r.push("phase", phase.map_or(Cell::Missing, Cell::Int))
                    .push("index", index.map_or(Cell::Missing, Cell::Int))
                    .push("accepted", accepted.map_or(Cell::Missing, Cell::Flag))
                    .push("legs", legs.map_or(Cell::Missing, Cell::Int))
                    .opt("total", total)
            };
            let run = || -> Result<Vec<ResultRow>> {
                let reference = chains::one_disc_distance_upper(domain, &p, &q, &budget)?;
                let chain = chains::random_chain(domain, &p, &q, CHAIN_LEGS, 0.2, &budget)?;
                let (short, trace) = chains::shorten_chain_traced(domain, &chain, nets.eta, nets.eta_prime, &budget)?;
                let mut rows = vec![fill(row("one_disc"), None, None, None, Some(1), Some(reference.distance_upper)).provenance(reference.method.clone(), "upper", &Ok(()))];
                rows.push(fill(row("initial"), None, None, None, Some(chain.legs.len() as i64), Some(chain.total)).provenance("random chain", "upper", &Ok(())));
                for a in &trace.attempts {
                    rows.push(
                        fill(row("merge"), Some(a.phase as i64), Some(a.index as i64), Some(a.accepted), None, Some(if a.accepted { a.total_after } else { a.total_before }))
                            .provenance("merge adjacent discs", "upper", &Ok(())),
                    );
                }
                rows.push(fill(row("final"), None, None, None, Some(short.legs.len() as i64), Some(short.total)).provenance("shortened chain", "upper", &Ok(())));
                Ok(rows)
            };
            run().unwrap_or_else(|e| vec![fill(row("failed"), None, None, None, None, None).provenance("", "none", &Err(e))])
        })
        .collect();
    Ok(per_instance.into_iter().flatten().collect())
}

pub const DBAR_GRID: usize = 128;

fn dbar_scaling(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let scale = config.domain.coordinate_bounds()[0];
    let radii: Vec<f64> = [0.4, 0.2, 0.1, 0.05].iter().map(|r| r * scale).collect();
    let center = C::new(0.0, 0.0);
    let mut rows = vec![];
    for (label, angle) in [("rotation", FRAC_PI_2), ("identity", 0.0)] {
        let mu = C::from_polar(1.0, angle);
        match dbar::correction_scaling_experiment(center, |z| z, mu, &radii, DBAR_GRID) {
            Ok(table) => {
                for r in &table.rows {
                    rows.push(
                        ResultRow::default()
                            .text("mu", label)
                            .num("mu_angle", angle)
                            .num("r", r.r)
                            .num("sup_tau", r.sup_tau)
                            .num("sup_u", r.sup_u)
                            .num("sup_grad_u", r.sup_grad_u)
                            .opt("slope", table.slope)
                            .provenance("fft cauchy transform", "estimate", &Ok(())),
                    );
                }
            }
            Err(e) => rows.push(
                ["r", "sup_tau", "sup_u", "sup_grad_u", "slope"]
                    .iter()
                    .fold(ResultRow::default().text("mu", label).num("mu_angle", angle), |r, c| r.push(c, Cell::Missing))
                    .provenance("", "none", &Err(e)),
            ),
        }
    }
    Ok(rows)
}

fn stability_sweep(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let stretch = match config.domain.kind() {
        DomainKind::StretchedBall { stretch } => *stretch,
        _ => unreachable!("checked by check_domain"),
    };
    // inside StretchedBall(N) and hence in every N_j ≥ N
    let points = [[0.3, 0.0], [0.2, 0.4 * stretch], [0.5, 0.5 * stretch]];
    let stretches: Vec<f64> = (0..6).map(|j| stretch * (1.0 + 0.5f64.powi(j))).chain([stretch]).collect();
    let cases: Vec<(f64, usize)> = stretches.iter().flat_map(|&s| (0..points.len()).map(move |p| (s, p))).collect();
    Ok(cases
        .par_iter()
        .enumerate()
        .map(|(i, &(s, p))| {
            let base = ResultRow::default().num("N_j", s).int("point", p as i64);
            let run = || -> Result<invariants::VolumeInvariantEstimate> {
                let d = DomainSpec::stretched_ball(s)?;
                invariants::quotient_upper(&d, &Point::real(&points[p]), &config.sub_budget(i))
            };
            match run() {
                Ok(est) => base
                    .num("c_lower", est.c_lower)
                    .num("k_upper", est.k_upper)
                    .num("m_lower", est.m_lower)
                    .num("m_upper", est.m_upper)
                    .provenance("linear image of the ball", if est.exact { "exact" } else { "bracket" }, &Ok(())),
                Err(e) => ["c_lower", "k_upper", "m_lower", "m_upper"].iter().fold(base, |r, c| r.push(c, Cell::Missing)).provenance("", "none", &Err(e)),
            }
        })
        .collect())
}

/// Rows whose sub-run failed; the CLI exits with code 3 when nonzero.
pub fn failed_runs(rows: &[ResultRow]) -> usize {
    rows.iter().filter(|r| !r.is_ok()).count()
}

/// Renders the rows (CSV with a header row, or a JSON array of objects)
/// and writes them to `config.out` when set.
pub fn emit_report(rows: &[ResultRow], config: &ExperimentConfig) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to report".into()));
    }
    for row in rows {
        if row.columns.len() != rows[0].columns.len() || row.columns.iter().zip(&rows[0].columns).any(|(a, b)| a.0 != b.0) {
            return Err(Error::InvalidArgument("rows do not share one column layout".into()));
        }
        if let Some((name, v)) = row.columns.iter().find(|(_, c)| matches!(c, Cell::Num(v) if !v.is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite value {v:?} in column {name}")));
        }
    }
    let text = match config.format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(vec![]);
            w.write_record(rows[0].columns.iter().map(|(k, _)| k.as_str()))?;
            for row in rows {
                w.write_record(row.columns.iter().map(|(_, c)| c.render()))?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv output is UTF-8")
        }
        ReportFormat::Json => serde_json::to_string_pretty(rows)? + "\n",
    };
    if let Some(path) = &config.out {
        std::fs::write(path, &text)?;
    }
    Ok(text)
}
