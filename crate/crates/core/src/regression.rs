//! Geodesic regression by gradient descent under an M-type loss.
//!
//! The solver follows the usual recipe: start from the intrinsic mean with a
//! zero slope, centre the covariates, take steps `Exp(p, -λ∇_p)` with the
//! slopes carried along by parallel transport, double `λ` after an accepted
//! step and halve it after a rejected one. A step is accepted when it
//! achieves at least half of the decrease predicted by the gradient. Huber and Tukey cutoffs are
//! rescaled from the median residual after every accepted step.
//!
//! Gradient descent stalls where the L1 loss has a kink, i.e. when a residual
//! reaches zero, and it resolves the minimiser only to about the square root
//! of machine precision. By default a reweighted Gauss-Newton stage follows:
//! residual weights `ψ(d)/d` are frozen, the weighted least-squares model is
//! linearised through the exact differentials of the exponential map, and a
//! damped normal-equation step is accepted when the true loss decreases.
//! Since `ρ(√s)` is concave for all four losses, the weighted problem
//! majorises the loss, and a zero residual receives a large weight that keeps
//! it pinned while the others are reduced.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSpec};
use crate::manifold::{combine, Manifold};
use crate::tuning::{self, DEFAULT_EFFICIENCY};
use crate::vecops::{axpy, scale};
use nalgebra::{DMatrix, DVector};

/// Tolerance on the gradient norm of the Karcher iteration.
pub const MEAN_TOL: f64 = 1e-10;
const MEAN_MAX_ITER: usize = 10_000;
const LAMBDA_FLOOR: f64 = 1e-15;
const POINT_TOL: f64 = 1e-8;
const ARMIJO: f64 = 0.5;
/// Longest parameter step, in tangent coordinates, of the reweighted stage.
const REFINE_TRUST: f64 = 0.5;
/// L1 residuals below this share of the largest are candidates for pinning.
const PIN_RATIO: f64 = 1e-3;
/// Weight multiplier for pinned residuals.
const PIN_WEIGHT: f64 = 1e6;

/// One covariate vector and its manifold-valued response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Observations on a common manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifold: Manifold,
    pub observations: Vec<Observation>,
}

impl Dataset {
    /// Checks that the data are nonempty, share one covariate dimension and lie on `manifold`.
    pub fn new(manifold: Manifold, observations: Vec<Observation>) -> Result<Self> {
        manifold.validate()?;
        let Some(first) = observations.first() else {
            return Err(Error::Degenerate("no observations".into()));
        };
        let k = first.x.len();
        for (i, o) in observations.iter().enumerate() {
            if o.x.len() != k {
                return Err(Error::Dimension { expected: k, got: o.x.len() });
            }
            if o.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("observation {i}: non-finite covariate")));
            }
            manifold.check_point(&o.y, POINT_TOL).map_err(|e| Error::Domain(format!("observation {i}: {e}")))?;
        }
        Ok(Dataset { manifold, observations })
    }

    /// Pairs `xs[i]` with `ys[i]`.
    pub fn from_parts(manifold: Manifold, xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Dimension { expected: xs.len(), got: ys.len() });
        }
        let obs = xs.into_iter().zip(ys).map(|(x, y)| Observation { x, y }).collect();
        Self::new(manifold, obs)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Number of covariates.
    pub fn k(&self) -> usize {
        self.observations[0].x.len()
    }

    pub fn responses(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.y.clone()).collect()
    }

    pub fn x_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.k()];
        for o in &self.observations {
            axpy(1.0, &o.x, &mut m);
        }
        scale(&m, 1.0 / self.len() as f64)
    }

    /// Reads the fit CSV format: an optional `#manifold=<tag>,schema_version=1`
    /// first line, then a header `x1..xk,y1..yd` and one observation per row.
    pub fn read_csv<R: Read>(reader: R, manifold: Option<Manifold>) -> Result<Self> {
        let mut buf = BufReader::new(reader);
        let mut first = String::new();
        buf.read_line(&mut first)?;
        let mut declared = None;
        let rest: Box<dyn Read> = if let Some(meta) = first.trim().strip_prefix('#') {
            for item in meta.split([',', ' ']).filter(|s| !s.is_empty()) {
                // a bare tag is accepted as the manifold
                let (key, value) = item.split_once('=').unwrap_or(("manifold", item));
                match key {
                    "manifold" => declared = Some(value.parse::<Manifold>()?),
                    "schema_version" if value != crate::sim::SCHEMA_VERSION.to_string() => {
                        return Err(Error::Parse(format!("unsupported schema version {value}")));
                    }
                    _ => {}
                }
            }
            Box::new(buf)
        } else {
            Box::new(std::io::Cursor::new(first.into_bytes()).chain(buf))
        };
        let m = match (declared, manifold) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Parse(format!("file declares {a} but {b} was requested")));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::Parse("manifold not declared in file or arguments".into())),
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rest);
        let header = rdr.headers()?.clone();
        let k = header.iter().take_while(|h| h.starts_with('x')).count();
        let d = header.len() - k;
        if d != m.ambient_dim() || header.iter().skip(k).any(|h| !h.starts_with('y')) {
            return Err(Error::Parse(format!(
                "header must be x1..xk followed by {} response columns y1..",
                m.ambient_dim()
            )));
        }
        let mut obs = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("row {}: '{s}' is not a number", row + 1))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != k + d {
                return Err(Error::Parse(format!("row {}: expected {} fields", row + 1, k + d)));
            }
            obs.push(Observation { x: vals[..k].to_vec(), y: vals[k..].to_vec() });
        }
        Self::new(m, obs)
    }

    pub fn load(path: impl AsRef<Path>, manifold: Option<Manifold>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, manifold)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#manifold={},schema_version={}", self.manifold, crate::sim::SCHEMA_VERSION)?;
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.k()).map(|j| format!("x{j}")).collect();
        header.extend((1..=self.manifold.ambient_dim()).map(|j| format!("y{j}")));
        wr.write_record(&header)?;
        for o in &self.observations {
            wr.write_record(o.x.iter().chain(&o.y).map(|v| format!("{v:?}")))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// A base point and one slope per covariate, all tangent at `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicModel {
    pub p: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

impl GeodesicModel {
    pub fn new(manifold: Manifold, p: Vec<f64>, v: Vec<Vec<f64>>) -> Result<Self> {
        manifold.check_point(&p, POINT_TOL)?;
        for (j, vj) in v.iter().enumerate() {
            if vj.len() != p.len() {
                return Err(Error::Dimension { expected: p.len(), got: vj.len() });
            }
            let r = crate::vecops::dist(&manifold.project_tangent(&p, vj), vj);
            if r > 1e-8 * (1.0 + crate::vecops::norm(vj)) {
                return Err(Error::Domain(format!("slope {j} is not tangent at p (residual {r:e})")));
            }
        }
        Ok(GeodesicModel { p, v })
    }

    /// The location-only model at `p`.
    pub fn constant(p: Vec<f64>, k: usize) -> Self {
        let d = p.len();
        GeodesicModel { p, v: vec![vec![0.0; d]; k] }
    }

    pub fn k(&self) -> usize {
        self.v.len()
    }

    /// Tangent vector `Σ x_j v_j` at `p`.
    pub fn velocity(&self, x: &[f64]) -> Vec<f64> {
        combine(&self.v, x, self.p.len())
    }

    pub fn predict(&self, manifold: Manifold, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.k() {
            return Err(Error::Dimension { expected: self.k(), got: x.len() });
        }
        manifold.exp(&self.p, &self.velocity(x))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// Exact adjoints of the differential of the exponential map.
    #[default]
    Jacobi,
    /// Residuals carried back to `p` by parallel transport.
    Transport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub loss: LossKind,
    /// Target asymptotic efficiency used to tune Huber and Tukey cutoffs.
    pub efficiency: f64,
    /// Bound on the length of a base-point step.
    pub lambda_max: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    pub center_x: bool,
    pub gradient_mode: GradientMode,
    /// Follow gradient descent with reweighted Gauss-Newton steps. Ignored in
    /// transport mode, which has no exact differentials.
    pub refine: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            loss: LossKind::L2,
            efficiency: DEFAULT_EFFICIENCY,
            lambda_max: 0.1,
            tol_rel: 1e-9,
            max_iter: 2000,
            center_x: true,
            gradient_mode: GradientMode::Jacobi,
            refine: true,
        }
    }
}

impl SolverConfig {
    pub fn with_loss(loss: LossKind) -> Self {
        SolverConfig { loss, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol_rel > 0.0) || !(self.lambda_max > 0.0) || self.max_iter == 0 {
            return Err(Error::Domain("tol_rel, lambda_max and max_iter must be positive".into()));
        }
        if !(self.efficiency > 0.0 && self.efficiency < 1.0) {
            return Err(Error::Domain(format!("efficiency must lie in (0, 1), got {}", self.efficiency)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Accepted step with relative loss decrease below `tol_rel`.
    RelativeDecrease,
    /// Every residual is zero.
    PerfectFit,
    /// The step size fell below 1e-15, or the damping grew without bound,
    /// without a decrease.
    StepUnderflow,
    MaxIter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Gradient,
    Reweighted,
}

/// One accepted step. Both losses use the cutoff in force when the step was tried.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub phase: Phase,
    /// Step size for gradient steps, damping for reweighted steps.
    pub lambda: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub cutoff: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub manifold: Manifold,
    pub loss: LossKind,
    /// Fitted model in centred covariates; see `x_mean`.
    pub model: GeodesicModel,
    pub x_mean: Vec<f64>,
    pub final_loss: f64,
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    /// MAD/ξ at the final iterate for Huber and Tukey.
    pub sigma_hat: Option<f64>,
    pub cutoff: Option<f64>,
    pub converged: bool,
    pub stop: StopReason,
    pub trace: Vec<TraceStep>,
}

impl FitResult {
    /// Prediction at raw (uncentred) covariates.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.x_mean.len() {
            return Err(Error::Dimension { expected: self.x_mean.len(), got: x.len() });
        }
        let xc: Vec<f64> = x.iter().zip(&self.x_mean).map(|(a, b)| a - b).collect();
        self.model.predict(self.manifold, &xc)
    }

    /// The model in raw covariates: base point moved to `x = 0`, slopes transported along.
    pub fn uncentered_model(&self) -> Result<GeodesicModel> {
        let m = self.manifold;
        let shift = scale(&self.model.velocity(&self.x_mean), -1.0);
        let p0 = m.exp(&self.model.p, &shift)?;
        let v = self.model.v.iter().map(|vj| m.transport(&self.model.p, vj, &p0)).collect::<Result<_>>()?;
        Ok(GeodesicModel { p: p0, v })
    }
}

/// Karcher mean by fixed-point iteration with step halving.
pub fn intrinsic_mean(manifold: Manifold, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Degenerate("mean of an empty set".into()));
    }
    let mut mu = initial_mean(manifold, points);
    let grad = |mu: &[f64]| -> Result<Vec<f64>> {
        let mut g = vec![0.0; mu.len()];
        for (i, y) in points.iter().enumerate() {
            let l = manifold.log(mu, y).map_err(|e| at_index(i, e))?;
            axpy(1.0 / n as f64, &l, &mut g);
        }
        Ok(manifold.project_tangent(mu, &g))
    };
    let mut g = grad(&mu)?;
    let mut gn = manifold.norm(&g);
    let mut f = frechet_variance(manifold, points, &mu)?;
    let mut step = 1.0;
    for _ in 0..MEAN_MAX_ITER {
        if gn <= MEAN_TOL {
            return Ok(mu);
        }
        let cand = manifold.exp(&mu, &scale(&g, step))?;
        let fc = frechet_variance(manifold, points, &cand)?;
        // near the optimum the functional is flat to rounding, so a smaller
        // gradient also counts as progress
        let gc = if fc <= f * (1.0 + 1e-12) { Some(grad(&cand)?) } else { None };
        let gcn = gc.as_ref().map(|v| manifold.norm(v)).unwrap_or(f64::INFINITY);
        if fc < f || gcn < gn {
            mu = cand;
            f = fc;
            g = gc.expect("accepted candidate has a gradient");
            gn = gcn;
            step = (2.0 * step).min(1.0);
        } else {
            step *= 0.5;
            if step < LAMBDA_FLOOR {
                // no representable decrease is left
                return Ok(mu);
            }
        }
    }
    Err(Error::NoConvergence { what: "intrinsic mean", iterations: MEAN_MAX_ITER })
}

fn initial_mean(manifold: Manifold, points: &[Vec<f64>]) -> Vec<f64> {
    let first = &points[0];
    let mut acc = vec![0.0; first.len()];
    for y in points {
        let y = match manifold {
            Manifold::Kendall(_) => crate::manifold::align(first, y).unwrap_or_else(|_| y.clone()),
            _ => y.clone(),
        };
        axpy(1.0, &y, &mut acc);
    }
    let acc = scale(&acc, 1.0 / points.len() as f64);
    match manifold.project_point(&acc) {
        Ok(p) if p.iter().all(|v| v.is_finite()) => p,
        _ => first.clone(),
    }
}

fn at_index(index: usize, e: Error) -> Error {
    match e {
        Error::CutLocus(detail) => Error::CutLocusAt { index, detail },
        other => other,
    }
}

/// Mean squared distance to `mean`.
pub fn frechet_variance(manifold: Manifold, points: &[Vec<f64>], mean: &[f64]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Degenerate("variance of an empty set".into()));
    }
    let mut s = 0.0;
    for y in points {
        s += manifold.distance(mean, y)?.powi(2);
    }
    Ok(s / points.len() as f64)
}

/// Fitted values, residual vectors at the fitted values and their norms.
struct Residuals {
    velocities: Vec<Vec<f64>>,
    fitted: Vec<Vec<f64>>,
    e: Vec<Vec<f64>>,
    r: Vec<f64>,
}

fn residuals(m: Manifold, model: &GeodesicModel, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Residuals> {
    let n = xs.len();
    let mut out = Residuals {
        velocities: Vec::with_capacity(n),
        fitted: Vec::with_capacity(n),
        e: Vec::with_capacity(n),
        r: Vec::with_capacity(n),
    };
    for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
        let w = model.velocity(x);
        let yhat = m.exp(&model.p, &w)?;
        let e = m.log(&yhat, y).map_err(|err| at_index(i, err))?;
        out.r.push(m.norm(&e));
        out.velocities.push(w);
        out.fitted.push(yhat);
        out.e.push(e);
    }
    Ok(out)
}

fn total(spec: &LossSpec, r: &[f64]) -> f64 {
    r.iter().map(|&t| spec.rho(t)).sum()
}

fn split(data: &[Observation]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    data.iter().map(|o| (o.x.clone(), o.y.clone())).unzip()
}

/// `Σ ρ(d(Exp(p, V x_i), y_i))` with covariates used as given.
pub fn loss_value(manifold: Manifold, model: &GeodesicModel, data: &[Observation], spec: &LossSpec) -> Result<f64> {
    let mut s = 0.0;
    for o in data {
        let yhat = model.predict(manifold, &o.x)?;
        s += spec.rho(manifold.distance(&yhat, &o.y)?);
    }
    Ok(s)
}

/// Gradients of the loss with respect to `p` and each slope, all in `T_p`.
pub fn gradients(
    manifold: Manifold,
    model: &GeodesicModel,
    data: &[Observation],
    spec: &LossSpec,
    mode: GradientMode,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (xs, ys) = split(data);
    let res = residuals(manifold, model, &xs, &ys)?;
    gradients_from(manifold, model, &xs, &res, spec, mode)
}

#[allow(clippy::needless_range_loop)]
fn gradients_from(
    m: Manifold,
    model: &GeodesicModel,
    xs: &[Vec<f64>],
    res: &Residuals,
    spec: &LossSpec,
    mode: GradientMode,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = model.p.len();
    let mut gp = vec![0.0; d];
    let mut gv = vec![vec![0.0; d]; model.k()];
    for i in 0..xs.len() {
        let w = spec.weight(res.r[i]);
        if w == 0.0 || res.r[i] == 0.0 {
            continue;
        }
        let (ap, av) = match mode {
            GradientMode::Jacobi => m.adjoint_dexp(&model.p, &res.velocities[i], &res.e[i])?,
            GradientMode::Transport => {
                let t = m.transport(&res.fitted[i], &res.e[i], &model.p).map_err(|e| at_index(i, e))?;
                (t.clone(), t)
            }
        };
        axpy(-w, &ap, &mut gp);
        for (g, &xj) in gv.iter_mut().zip(&xs[i]) {
            axpy(-w * xj, &av, g);
        }
    }
    let gp = m.project_tangent(&model.p, &gp);
    let gv = gv.into_iter().map(|g| m.project_tangent(&model.p, &g)).collect();
    Ok((gp, gv))
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Huber/Tukey scale bookkeeping: `c = c_kind · MAD / ξ`.
struct Scale {
    xi: f64,
    c_kind: f64,
    sigma_hat: f64,
}

impl Scale {
    fn spec(&self, kind: LossKind) -> Result<LossSpec> {
        LossSpec::new(kind, Some(self.c_kind * self.sigma_hat))
    }
}

/// Fits a geodesic model: gradient descent, then reweighted Gauss-Newton.
pub fn fit(data: &Dataset, config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    let m = data.manifold;
    let n_obs = data.len();
    let k = data.k();
    if n_obs < k + 1 {
        return Err(Error::Degenerate(format!("need at least {} observations for {k} covariates", k + 1)));
    }
    let x_mean = if config.center_x { data.x_mean() } else { vec![0.0; k] };
    let (xs, ys) = split(&data.observations);
    let xs: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().zip(&x_mean).map(|(a, b)| a - b).collect()).collect();

    let p0 = intrinsic_mean(m, &ys)?;
    let mut model = GeodesicModel::constant(p0, k);
    let mut res = residuals(m, &model, &xs, &ys)?;

    let kind = config.loss;
    let mut scale_state = None;
    let mut spec = match kind {
        LossKind::L2 => LossSpec::l2(),
        LossKind::L1 => LossSpec::l1(),
        LossKind::Huber | LossKind::Tukey => {
            let dim = m.intrinsic_dim();
            let xi = tuning::xi(dim)?;
            let c_kind = tuning::solve_cutoff(kind, dim, config.efficiency)?;
            let mad = median(&res.r);
            if mad == 0.0 {
                if res.r.iter().all(|&r| r == 0.0) {
                    return Ok(finish(
                        m,
                        kind,
                        model,
                        x_mean,
                        0.0,
                        0,
                        res.r,
                        Some(0.0),
                        None,
                        StopReason::PerfectFit,
                        vec![],
                    ));
                }
                return Err(Error::Degenerate("median residual is zero at the intrinsic mean".into()));
            }
            let s = Scale { xi, c_kind, sigma_hat: mad / xi };
            let spec = s.spec(kind)?;
            scale_state = Some(s);
            spec
        }
    };

    let mut loss = total(&spec, &res.r);
    if loss == 0.0 {
        let sh = scale_state.as_ref().map(|s| s.sigma_hat);
        return Ok(finish(m, kind, model, x_mean, 0.0, 0, res.r, sh, spec.cutoff(), StopReason::PerfectFit, vec![]));
    }
    let (mut gp, mut gv) = gradients_from(m, &model, &xs, &res, &spec, config.gradient_mode)?;
    let cap = |gp: &[f64]| {
        let g = m.norm(gp);
        if g > 0.0 {
            config.lambda_max / g
        } else {
            f64::INFINITY
        }
    };
    let mut lambda = 0.1f64.min(cap(&gp));
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxIter;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let p_new = m.exp(&model.p, &scale(&gp, -lambda))?;
        let v_new = model
            .v
            .iter()
            .zip(&gv)
            .map(|(vj, gj)| {
                let step = crate::vecops::lin2(1.0, vj, -lambda, gj);
                m.transport(&model.p, &step, &p_new)
            })
            .collect::<Result<Vec<_>>>()?;
        let cand = GeodesicModel { p: p_new, v: v_new };
        let cand_res = match residuals(m, &cand, &xs, &ys) {
            Ok(r) => Some(r),
            // a step that lands a fitted value on a cut locus is treated as a failed step
            Err(Error::CutLocusAt { .. }) => None,
            Err(e) => return Err(e),
        };
        let cand_loss = cand_res.as_ref().map(|r| total(&spec, &r.r)).unwrap_or(f64::INFINITY);
        // sufficient decrease: half of the first-order prediction
        let predicted = lambda * (m.inner(&gp, &gp) + gv.iter().map(|g| m.inner(g, g)).sum::<f64>());
        if cand_loss <= loss - ARMIJO * predicted {
            let before = loss;
            model = cand;
            res = cand_res.expect("finite loss implies residuals");
            trace.push(TraceStep {
                iteration: iterations,
                phase: Phase::Gradient,
                lambda,
                loss_before: before,
                loss_after: cand_loss,
                cutoff: spec.cutoff(),
            });
            if res.r.iter().all(|&r| r == 0.0) {
                loss = 0.0;
                stop = StopReason::PerfectFit;
                break;
            }
            if let Some(s) = scale_state.as_mut() {
                let mad = median(&res.r);
                if mad > 0.0 {
                    s.sigma_hat = mad / s.xi;
                    spec = s.spec(kind)?;
                }
            }
            loss = total(&spec, &res.r);
            let rel = (before - cand_loss) / before;
            (gp, gv) = gradients_from(m, &model, &xs, &res, &spec, config.gradient_mode)?;
            if rel < config.tol_rel {
                stop = StopReason::RelativeDecrease;
                break;
            }
            lambda = (2.0 * lambda).min(cap(&gp));
        } else {
            lambda *= 0.5;
            if lambda < LAMBDA_FLOOR {
                stop = StopReason::StepUnderflow;
                break;
            }
        }
    }
    if config.refine && config.gradient_mode == GradientMode::Jacobi && stop != StopReason::PerfectFit {
        let basis = m.tangent_basis(&model.p);
        let mut mu0 = None;
        let mut mu = 0.0;
        let mut steps = 0;
        let mut refine_stop = StopReason::MaxIter;
        'outer: while steps < config.max_iter {
            let basis_now = if steps == 0 { basis.clone() } else { m.tangent_basis(&model.p) };
            let mut systems = vec![normal_equations(m, &model, &xs, &res, &spec, &basis_now, false)?];
            if spec.kind == LossKind::L1
                && res.r.iter().any(|&r| r < PIN_RATIO * res.r.iter().cloned().fold(0.0, f64::max))
            {
                systems.push(normal_equations(m, &model, &xs, &res, &spec, &basis_now, true)?);
            }
            let hmax = systems[0].0.diagonal().max();
            if !(hmax > 0.0) {
                refine_stop = StopReason::StepUnderflow;
                break;
            }
            let base_mu = *mu0.get_or_insert(1e-9);
            if mu == 0.0 {
                mu = base_mu;
            }
            loop {
                steps += 1;
                iterations += 1;
                let mut best: Option<(GeodesicModel, Residuals, f64)> = None;
                for (h, g) in &systems {
                    let hm = h.diagonal().max();
                    // Marquardt scaling: damping proportional to each diagonal
                    // entry, so heavily weighted directions do not dictate the others
                    let mut damped = h.clone();
                    for c in 0..h.nrows() {
                        damped[(c, c)] += mu * h[(c, c)].max(1e-12 * hm);
                    }
                    let Some(ch) = damped.cholesky() else { continue };
                    let mut delta = ch.solve(g);
                    let norm = delta.norm();
                    if norm > REFINE_TRUST {
                        delta *= REFINE_TRUST / norm;
                    }
                    let cand = apply_step(m, &model, &basis_now, &delta)?;
                    match residuals(m, &cand, &xs, &ys) {
                        Ok(r) => {
                            let l = total(&spec, &r.r);
                            if best.as_ref().is_none_or(|b| l < b.2) {
                                best = Some((cand, r, l));
                            }
                        }
                        // a step that lands a fitted value on a cut locus is a failed step
                        Err(Error::CutLocusAt { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
                let (cand, cand_res, cand_loss) = match best {
                    Some((c, r, l)) => (c, Some(r), l),
                    None => (model.clone(), None, f64::INFINITY),
                };
                if cand_loss < loss {
                    let before = loss;
                    trace.push(TraceStep {
                        iteration: iterations,
                        phase: Phase::Reweighted,
                        lambda: mu,
                        loss_before: before,
                        loss_after: cand_loss,
                        cutoff: spec.cutoff(),
                    });
                    model = cand;
                    res = cand_res.expect("finite loss implies residuals");
                    if res.r.iter().all(|&r| r == 0.0) {
                        loss = 0.0;
                        refine_stop = StopReason::PerfectFit;
                        break 'outer;
                    }
                    if let Some(s) = scale_state.as_mut() {
                        let mad = median(&res.r);
                        if mad > 0.0 {
                            s.sigma_hat = mad / s.xi;
                            spec = s.spec(kind)?;
                        }
                    }
                    loss = total(&spec, &res.r);
                    let rel = (before - cand_loss) / before;
                    // a small decrease under heavy damping says little about optimality
                    if rel < config.tol_rel && mu <= base_mu * 16.0 {
                        refine_stop = StopReason::RelativeDecrease;
                        break 'outer;
                    }
                    mu = (mu / 4.0).max(base_mu);
                    break;
                }
                mu *= 4.0;
                if mu > 1e12 {
                    refine_stop = StopReason::StepUnderflow;
                    break 'outer;
                }
                if steps >= config.max_iter {
                    break 'outer;
                }
            }
        }
        // a stage that could not improve on gradient descent keeps its verdict
        if trace.last().is_some_and(|t| t.phase == Phase::Reweighted) || stop == StopReason::MaxIter {
            stop = match (refine_stop, stop) {
                (StopReason::StepUnderflow, StopReason::MaxIter) => StopReason::StepUnderflow,
                (StopReason::StepUnderflow, s) => s,
                (r, _) => r,
            };
        }
    }
    let sh = scale_state.as_ref().map(|s| s.sigma_hat);
    let cutoff = spec.cutoff();
    Ok(finish(m, kind, model, x_mean, loss, iterations, res.r, sh, cutoff, stop, trace))
}

/// Weight of a residual in the reweighted stage; zero L1 residuals get a
/// large finite weight instead of none.
fn stage_weight(spec: &LossSpec, r: f64, floor: f64) -> f64 {
    match spec.kind {
        LossKind::L1 => 1.0 / r.max(floor),
        _ => spec.weight(r),
    }
}

/// `Σ wᵢ JᵢᵀJᵢ` and `Σ wᵢ Jᵢᵀeᵢ` in the coordinates of `basis` (for `p`,
/// then for each slope), with `Jᵢ` the differential of the fitted value.
///
/// With `pin`, small L1 residuals get their weight inflated. Plain
/// reweighting shrinks a residual that is heading for zero only by a constant
/// factor per step, which can be close to one; the pinned system jumps there.
#[allow(clippy::needless_range_loop)]
fn normal_equations(
    m: Manifold,
    model: &GeodesicModel,
    xs: &[Vec<f64>],
    res: &Residuals,
    spec: &LossSpec,
    basis: &[Vec<f64>],
    pin: bool,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = basis.len();
    let k = model.k();
    let dim = n * (k + 1);
    let rmax = res.r.iter().cloned().fold(0.0, f64::max);
    let floor = 1e-10 * (1.0 + rmax);
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    let mut row = DVector::zeros(dim);
    for i in 0..xs.len() {
        let mut w = stage_weight(spec, res.r[i], floor);
        if pin && res.r[i] < PIN_RATIO * rmax {
            w *= PIN_WEIGHT;
        }
        if w == 0.0 {
            continue;
        }
        for b in m.tangent_basis(&res.fitted[i]) {
            let (ap, av) = m.adjoint_dexp(&model.p, &res.velocities[i], &b)?;
            for (c, bc) in basis.iter().enumerate() {
                row[c] = m.inner(&ap, bc);
                let cv = m.inner(&av, bc);
                for (j, &xj) in xs[i].iter().enumerate() {
                    row[n * (j + 1) + c] = xj * cv;
                }
            }
            let eb = m.inner(&b, &res.e[i]);
            h.syger(w, &row, &row, 1.0);
            g.axpy(w * eb, &row, 1.0);
        }
    }
    Ok((h, g))
}

fn apply_step(m: Manifold, model: &GeodesicModel, basis: &[Vec<f64>], delta: &DVector<f64>) -> Result<GeodesicModel> {
    let n = basis.len();
    let lift = |offset: usize| -> Vec<f64> {
        let mut u = vec![0.0; model.p.len()];
        for (c, bc) in basis.iter().enumerate() {
            axpy(delta[offset + c], bc, &mut u);
        }
        u
    };
    let p = m.exp(&model.p, &lift(0))?;
    let v = model
        .v
        .iter()
        .enumerate()
        .map(|(j, vj)| m.transport(&model.p, &crate::vecops::add(vj, &lift(n * (j + 1))), &p))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeodesicModel { p, v })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    manifold: Manifold,
    loss: LossKind,
    model: GeodesicModel,
    x_mean: Vec<f64>,
    final_loss: f64,
    iterations: usize,
    residual_norms: Vec<f64>,
    sigma_hat: Option<f64>,
    cutoff: Option<f64>,
    stop: StopReason,
    trace: Vec<TraceStep>,
) -> FitResult {
    FitResult {
        manifold,
        loss,
        model,
        x_mean,
        final_loss,
        iterations,
        residual_norms,
        sigma_hat,
        cutoff,
        converged: stop != StopReason::MaxIter,
        stop,
        trace,
    }
}

/// Squared error terms of one fit against the truth: `d(p̂, p)²` and
/// `‖Γ_{p̂→p} v̂_j − v_j‖²` for each slope.
pub fn mse_pair(manifold: Manifold, fit: &GeodesicModel, truth: &GeodesicModel) -> Result<(f64, Vec<f64>)> {
    if fit.k() != truth.k() {
        return Err(Error::Dimension { expected: truth.k(), got: fit.k() });
    }
    let dp = manifold.distance(&fit.p, &truth.p)?.powi(2);
    let dv = fit
        .v
        .iter()
        .zip(&truth.v)
        .map(|(vh, v)| {
            let t = manifold.transport(&fit.p, vh, &truth.p)?;
            Ok(manifold.norm(&crate::vecops::sub(&t, v)).powi(2))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dp, dv))
}
