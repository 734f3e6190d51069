//! Monte Carlo harness: MSE-versus-sample-size curves for regression and
//! relative efficiencies of the robust location estimators.
//!
//! Every trial draws from its own ChaCha8 stream whose seed is a hash of the
//! experiment seed, the sample size and the trial index, so a trial's data do
//! not depend on which other trials run. All losses in a trial share the same
//! data. Results are reduced in trial order.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{fit, mse_pair, Dataset, GeodesicModel, Observation, SolverConfig};
use crate::rnormal::{Noise, NoiseSpec};
use crate::{LossKind, Manifold};

/// Version tag written into every CSV and JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one trial's stream.
pub fn trial_seed(seed: u64, group: u64, trial: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ group) ^ trial)
}

pub fn trial_rng(seed: u64, group: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_seed(seed, group, trial))
}

/// Simulation truth: `p = e0`, `v1 = π/4 e1`, and on 3-manifolds a second
/// slope `v2 = -π/6 e3`.
pub fn standard_truth(m: Manifold) -> Result<GeodesicModel> {
    let d = m.ambient_dim();
    if !matches!(m, Manifold::Sphere(2 | 3) | Manifold::Hyperbolic(2 | 3)) {
        return Err(Error::Domain(format!("no standard truth for {m}")));
    }
    let mut p = vec![0.0; d];
    p[0] = 1.0;
    let mut v1 = vec![0.0; d];
    v1[1] = PI / 4.0;
    let mut v = vec![v1];
    if d == 4 {
        let mut v2 = vec![0.0; d];
        v2[3] = -PI / 6.0;
        v.push(v2);
    }
    GeodesicModel::new(m, p, v)
}

/// The three error laws of the simulation study, by label `N`, `T` or `C`.
pub fn standard_noise(label: &str) -> Result<NoiseSpec> {
    match label.to_ascii_uppercase().as_str() {
        "N" => Ok(NoiseSpec::Normal { sigma: PI / 8.0 }),
        "T" => Ok(NoiseSpec::TangentT { scale: PI / 16.0, nu: 4.0 }),
        "C" => Ok(NoiseSpec::default_contaminated()),
        "NONE" => Ok(NoiseSpec::None),
        _ => Err(Error::Parse(format!("unknown noise '{label}', expected N, T, C or none"))),
    }
}

fn default_losses() -> Vec<LossKind> {
    LossKind::ALL.to_vec()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub manifold: Manifold,
    /// Defaults to [`standard_truth`].
    #[serde(default)]
    pub truth: Option<GeodesicModel>,
    pub noise: NoiseSpec,
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossKind>,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ExperimentSpec {
    /// `N = 2^h` for `h` in `2..=h_max`.
    pub fn standard(m: Manifold, noise: NoiseSpec, h_max: u32, trials: usize, seed: u64) -> Self {
        ExperimentSpec {
            manifold: m,
            truth: None,
            noise,
            sample_sizes: (2..=h_max).map(|h| 1usize << h).collect(),
            trials,
            seed,
            losses: default_losses(),
            solver: SolverConfig::default(),
        }
    }

    pub fn truth(&self) -> Result<GeodesicModel> {
        match &self.truth {
            Some(t) => GeodesicModel::new(self.manifold, t.p.clone(), t.v.clone()),
            None => standard_truth(self.manifold),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Domain("at least one trial is needed".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::Domain("sample sizes must be positive".into()));
        }
        if self.losses.is_empty() {
            return Err(Error::Domain("no losses requested".into()));
        }
        Ok(())
    }
}

/// Draw one regression dataset: `x ~ U[-1/2, 1/2]^k`, `y = noise(Exp(p, V x))`.
pub fn simulate_dataset<R: Rng + ?Sized>(
    m: Manifold,
    truth: &GeodesicModel,
    noise: &Noise,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let mut obs = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..truth.k()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let y = noise.sample(&truth.predict(m, &x)?, rng)?;
        obs.push(Observation { x, y });
    }
    Dataset::new(m, obs)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialFailure {
    pub n: usize,
    pub trial: usize,
    pub loss: LossKind,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct MseRow {
    pub manifold: Manifold,
    pub noise: String,
    pub loss: LossKind,
    pub n: usize,
    pub trials_ok: usize,
    pub failures: usize,
    /// Successful trials that stopped on the iteration cap.
    pub not_converged: usize,
    pub mse_p: f64,
    pub mse_v: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MseTable {
    pub schema_version: u32,
    pub rows: Vec<MseRow>,
    pub failures: Vec<TrialFailure>,
}

impl MseTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let k = self.rows.first().map_or(0, |r| r.mse_v.len());
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> =
            ["schema_version", "manifold", "noise", "loss", "n", "trials_ok", "failures", "not_converged", "mse_p"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        header.extend((1..=k).map(|j| format!("mse_v{j}")));
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                SCHEMA_VERSION.to_string(),
                r.manifold.to_string(),
                r.noise.clone(),
                r.loss.to_string(),
                r.n.to_string(),
                r.trials_ok.to_string(),
                r.failures.to_string(),
                r.not_converged.to_string(),
                r.mse_p.to_string(),
            ];
            rec.extend(r.mse_v.iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_failures_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["schema_version", "n", "trial", "loss", "message"])?;
        for f in &self.failures {
            wr.write_record([
                SCHEMA_VERSION.to_string(),
                f.n.to_string(),
                f.trial.to_string(),
                f.loss.to_string(),
                f.message.clone(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn row(&self, loss: LossKind, n: usize) -> Option<&MseRow> {
        self.rows.iter().find(|r| r.loss == loss && r.n == n)
    }
}

#[derive(Default)]
struct Accum {
    ok: usize,
    not_converged: usize,
    sum_p: f64,
    sum_v: Vec<f64>,
}

/// Fit every loss to each trial's data and average the squared errors.
///
/// Estimates are compared at `x = 0`, so fits made with centred covariates
/// are moved back along their own geodesic before comparison.
/// One loss's estimate in one trial, as squared errors against the truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialEstimate {
    pub converged: bool,
    pub err_p: f64,
    pub err_v: Vec<f64>,
}

/// Simulate trial `trial` at sample size `n` and fit every loss of the spec.
/// The result depends only on the seed, `n` and `trial`.
pub fn run_mse_trial(spec: &ExperimentSpec, n: usize, trial: usize) -> Result<Vec<Result<TrialEstimate>>> {
    let m = spec.manifold;
    let truth = spec.truth()?;
    let noise = Noise::new(m, spec.noise)?;
    mse_trial(spec, &truth, &noise, n, trial)
}

fn mse_trial(
    spec: &ExperimentSpec,
    truth: &GeodesicModel,
    noise: &Noise,
    n: usize,
    trial: usize,
) -> Result<Vec<Result<TrialEstimate>>> {
    let m = spec.manifold;
    let mut rng = trial_rng(spec.seed, n as u64, trial as u64);
    let data = simulate_dataset(m, truth, noise, n, &mut rng)?;
    Ok(spec
        .losses
        .iter()
        .map(|&loss| {
            let cfg = SolverConfig { loss, ..spec.solver.clone() };
            fit(&data, &cfg).and_then(|f| {
                let model = f.uncentered_model()?;
                let (err_p, err_v) = mse_pair(m, &model, truth)?;
                if !err_p.is_finite() || err_v.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain("non-finite estimate".into()));
                }
                Ok(TrialEstimate { converged: f.converged, err_p, err_v })
            })
        })
        .collect())
}

pub fn run_mse_experiment(spec: &ExperimentSpec) -> Result<MseTable> {
    spec.validate()?;
    let m = spec.manifold;
    let truth = spec.truth()?;
    let noise = Noise::new(m, spec.noise)?;
    let k = truth.k();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n in &spec.sample_sizes {
        let mut acc: Vec<Accum> =
            spec.losses.iter().map(|_| Accum { sum_v: vec![0.0; k], ..Default::default() }).collect();
        let mut fail_count = vec![0usize; spec.losses.len()];
        for trial in 0..spec.trials {
            let estimates = mse_trial(spec, &truth, &noise, n, trial)?;
            for (li, (&loss, est)) in spec.losses.iter().zip(estimates).enumerate() {
                match est {
                    Ok(e) => {
                        let a = &mut acc[li];
                        a.ok += 1;
                        a.not_converged += usize::from(!e.converged);
                        a.sum_p += e.err_p;
                        for (s, d) in a.sum_v.iter_mut().zip(e.err_v) {
                            *s += d;
                        }
                    }
                    Err(e) => {
                        fail_count[li] += 1;
                        failures.push(TrialFailure { n, trial, loss, message: e.to_string() });
                    }
                }
            }
        }
        for (li, &loss) in spec.losses.iter().enumerate() {
            let a = &acc[li];
            let denom = a.ok as f64;
            rows.push(MseRow {
                manifold: m,
                noise: spec.noise.label().to_string(),
                loss,
                n,
                trials_ok: a.ok,
                failures: fail_count[li],
                not_converged: a.not_converged,
                mse_p: a.sum_p / denom,
                mse_v: a.sum_v.iter().map(|s| s / denom).collect(),
            });
        }
    }
    Ok(MseTable { schema_version: SCHEMA_VERSION, rows, failures })
}

/// σ values of the efficiency study; the desk-scale run uses the first three.
pub const EFFICIENCY_SIGMAS: [f64; 5] = [PI / 32.0, PI / 16.0, PI / 8.0, PI / 4.0, PI / 2.0];

#[derive(Clone, Debug, Serialize)]
pub struct EfficiencyRow {
    pub manifold: Manifold,
    pub sigma: f64,
    pub n: usize,
    pub trials_ok: usize,
    pub failures: usize,
    /// Mean squared distance of the estimates to the true location, per loss
    /// in the order L2, L1, Huber, Tukey.
    pub s2: [f64; 4],
    pub ratio_l1: f64,
    pub ratio_huber: f64,
    pub ratio_tukey: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EfficiencyTable {
    pub schema_version: u32,
    pub rows: Vec<EfficiencyRow>,
    pub failures: Vec<TrialFailure>,
}

impl EfficiencyTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "schema_version",
            "manifold",
            "sigma",
            "n",
            "trials_ok",
            "failures",
            "s2_l2",
            "s2_l1",
            "s2_huber",
            "s2_tukey",
            "ratio_l1",
            "ratio_huber",
            "ratio_tukey",
        ])?;
        for r in &self.rows {
            let mut rec = vec![
                SCHEMA_VERSION.to_string(),
                r.manifold.to_string(),
                r.sigma.to_string(),
                r.n.to_string(),
                r.trials_ok.to_string(),
                r.failures.to_string(),
            ];
            rec.extend(r.s2.iter().map(|v| v.to_string()));
            rec.extend([r.ratio_l1, r.ratio_huber, r.ratio_tukey].iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Relative efficiencies of the robust location estimators to the intrinsic
/// mean under Riemannian normal errors centred at `e0`.
///
/// Each trial fits all four losses to the same sample; a trial counts only if
/// every fit succeeds. The variances are mean squared distances to the true
/// location.
pub fn run_efficiency_experiment(
    m: Manifold,
    sigmas: &[f64],
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<EfficiencyTable> {
    if n == 0 || trials == 0 {
        return Err(Error::Domain("sample size and trial count must be positive".into()));
    }
    let mu = m.origin();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &sigma in sigmas {
        let noise = Noise::new(m, NoiseSpec::Normal { sigma })?;
        let mut sums = [0.0; 4];
        let mut ok = 0;
        let mut failed = 0;
        for trial in 0..trials {
            let mut rng = trial_rng(seed, sigma.to_bits(), trial as u64);
            let obs = (0..n)
                .map(|_| Ok(Observation { x: vec![], y: noise.sample(&mu, &mut rng)? }))
                .collect::<Result<Vec<_>>>()?;
            let data = Dataset::new(m, obs)?;
            let mut d2 = [0.0; 4];
            let mut trial_ok = true;
            for (li, &loss) in LossKind::ALL.iter().enumerate() {
                match fit(&data, &SolverConfig::with_loss(loss)).and_then(|f| m.distance(&f.model.p, &mu)) {
                    Ok(d) => d2[li] = d * d,
                    Err(e) => {
                        trial_ok = false;
                        failures.push(TrialFailure { n, trial, loss, message: e.to_string() });
                    }
                }
            }
            if trial_ok {
                ok += 1;
                for (s, d) in sums.iter_mut().zip(d2) {
                    *s += d;
                }
            } else {
                failed += 1;
            }
        }
        let s2 = sums.map(|s| s / ok as f64);
        rows.push(EfficiencyRow {
            manifold: m,
            sigma,
            n,
            trials_ok: ok,
            failures: failed,
            s2,
            ratio_l1: s2[0] / s2[1],
            ratio_huber: s2[0] / s2[2],
            ratio_tukey: s2[0] / s2[3],
        });
    }
    Ok(EfficiencyTable { schema_version: SCHEMA_VERSION, rows, failures })
}
