//! Planar shape regression on age: loading landmark files, reflecting
//! subjects to create outliers, and comparing fits under several losses.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{landmarks, preshape, Manifold};
use crate::regression::{fit, Dataset, GeodesicModel, Observation, SolverConfig, StopReason};
use crate::rnormal::sample_tangent_normal;
use crate::sim::SCHEMA_VERSION;
use crate::tuning::{tune, TuningConstants};
use crate::vecops::{scale, sub};
use crate::LossKind;

/// Share of subjects reflected when no explicit indices are given (20 of 88).
pub const DEFAULT_TAMPER_FRACTION: f64 = 20.0 / 88.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Subject {
    pub age: f64,
    /// Pre-shape coordinates of the landmarks.
    pub landmarks: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapeDataset {
    pub k: usize,
    pub subjects: Vec<Subject>,
}

impl ShapeDataset {
    /// Pre-shapes every configuration; all must share the landmark count.
    pub fn new(raw: Vec<(f64, Vec<[f64; 2]>)>) -> Result<Self> {
        let k = raw.first().map(|s| s.1.len()).ok_or_else(|| Error::Degenerate("no subjects".into()))?;
        let subjects = raw
            .into_iter()
            .enumerate()
            .map(|(i, (age, lm))| {
                if lm.len() != k {
                    return Err(Error::Parse(format!("subject {i}: {} landmarks, expected {k}", lm.len())));
                }
                if !age.is_finite() {
                    return Err(Error::Parse(format!("subject {i}: non-finite age")));
                }
                Ok(Subject { age, landmarks: landmarks(&preshape(&lm)?) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ShapeDataset { k, subjects })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn manifold(&self) -> Manifold {
        Manifold::Kendall(self.k)
    }

    pub fn preshapes(&self) -> Vec<Vec<f64>> {
        self.subjects.iter().map(|s| s.landmarks.iter().flat_map(|l| [l[0], l[1]]).collect()).collect()
    }

    /// Regression data with age as the single covariate.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let obs = self.subjects.iter().zip(self.preshapes()).map(|(s, y)| Observation { x: vec![s.age], y }).collect();
        Dataset::new(self.manifold(), obs)
    }

    /// Reads `age,x1,y1,...,xK,yK` with one subject per row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let cols = header.len();
        if cols < 7 || cols % 2 == 0 || !header[0].eq_ignore_ascii_case("age") {
            return Err(Error::Parse("header must be age,x1,y1,...,xK,yK with K >= 3".into()));
        }
        let k = (cols - 1) / 2;
        for j in 0..k {
            let (hx, hy) = (&header[1 + 2 * j], &header[2 + 2 * j]);
            if hx != format!("x{}", j + 1) || hy != format!("y{}", j + 1) {
                return Err(Error::Parse(format!("column {} must be x{0}/y{0} pairs", j + 1)));
            }
        }
        let mut raw = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
            if rec.len() != cols {
                return Err(Error::Parse(format!("row {}: expected {cols} fields, got {}", row + 1, rec.len())));
            }
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("row {}: '{s}' is not a number", row + 1))))
                .collect::<Result<Vec<f64>>>()?;
            let lm = vals[1..].chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            raw.push((vals[0], lm));
        }
        Self::new(raw)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["age".to_string()];
        for j in 1..=self.k {
            header.push(format!("x{j}"));
            header.push(format!("y{j}"));
        }
        wr.write_record(&header)?;
        for s in &self.subjects {
            let mut rec = vec![format!("{:?}", s.age)];
            rec.extend(s.landmarks.iter().flat_map(|l| [format!("{:?}", l[0]), format!("{:?}", l[1])]));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn load_shapes(path: impl AsRef<Path>) -> Result<ShapeDataset> {
    ShapeDataset::read_csv(std::fs::File::open(path)?)
}

/// Reflect the selected subjects (negate every landmark's y) and re-preshape.
pub fn tamper(ds: &ShapeDataset, indices: &[usize]) -> Result<ShapeDataset> {
    let mut out = ds.clone();
    for &i in indices {
        let s = out
            .subjects
            .get_mut(i)
            .ok_or_else(|| Error::Domain(format!("subject index {i} out of range (n = {})", ds.len())))?;
        let flipped: Vec<[f64; 2]> = s.landmarks.iter().map(|l| [l[0], -l[1]]).collect();
        s.landmarks = landmarks(&preshape(&flipped)?);
    }
    Ok(out)
}

/// `count` distinct subject indices in increasing order.
pub fn choose_tampered(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, count.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Mean shape distance among the untouched subjects, and mean distance
/// between untouched and tampered subjects.
pub fn tamper_distances(ds: &ShapeDataset, indices: &[usize]) -> Result<(f64, f64)> {
    let m = ds.manifold();
    let z = ds.preshapes();
    let flagged: Vec<bool> = (0..ds.len()).map(|i| indices.contains(&i)).collect();
    let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            match (flagged[i], flagged[j]) {
                (false, false) => {
                    within += m.distance(&z[i], &z[j])?;
                    nw += 1;
                }
                (true, true) => {}
                _ => {
                    across += m.distance(&z[i], &z[j])?;
                    na += 1;
                }
            }
        }
    }
    Ok((within / nw as f64, across / na as f64))
}

/// Synthetic shapes along a geodesic in age, with a lopsided base outline so
/// that reflections are far from the originals.
///
/// Ages are uniform on `[55, 90]`; the returned model is parametrised by
/// `age - 70`. Errors are tangent-space Gaussian with per-coordinate `sigma`.
pub fn synthetic_shapes<R: Rng + ?Sized>(
    k: usize,
    n: usize,
    rate: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<(ShapeDataset, GeodesicModel)> {
    let m = Manifold::Kendall(k);
    let outline = |a: f64, bump: f64| -> [f64; 2] {
        // Fourier outline with unequal phases, so no mirror symmetry.
        let x = 2.0 * a.cos() + 0.3 * (2.0 * a).cos() + 0.1 * (3.0 * a + 0.7).sin();
        let y = a.sin() + 0.35 * (2.0 * a + 0.4).sin() + bump * (3.0 * a).cos();
        [x, y]
    };
    let angles: Vec<f64> = (0..k).map(|j| 2.0 * std::f64::consts::PI * j as f64 / k as f64).collect();
    let p = preshape(&angles.iter().map(|&a| outline(a, 0.0)).collect::<Vec<_>>())?;
    let q = preshape(&angles.iter().map(|&a| outline(a, 0.2)).collect::<Vec<_>>())?;
    let dir = m.project_tangent(&p, &sub(&q, &p));
    let v = scale(&dir, rate / m.norm(&dir));
    let truth = GeodesicModel::new(m, p, vec![v])?;
    let mut raw = Vec::with_capacity(n);
    for _ in 0..n {
        let age: f64 = rng.random_range(55.0..90.0);
        let mu = truth.predict(m, &[age - 70.0])?;
        let y = if sigma > 0.0 { sample_tangent_normal(m, &mu, sigma, rng)? } else { mu };
        raw.push((age, landmarks(&y)));
    }
    Ok((ShapeDataset::new(raw)?, truth))
}

#[derive(Clone, Debug)]
pub struct ShapeStudyConfig {
    pub losses: Vec<LossKind>,
    /// Subjects to reflect; when `None`, a seeded random 20/88 share.
    pub tamper_indices: Option<Vec<usize>>,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Ages at which fitted shapes are reported.
    pub ages: Vec<f64>,
}

impl Default for ShapeStudyConfig {
    fn default() -> Self {
        ShapeStudyConfig {
            // Huber cannot reach 95% efficiency once L1 already exceeds it.
            losses: vec![LossKind::L2, LossKind::L1, LossKind::Tukey],
            tamper_indices: None,
            seed: 0,
            solver: SolverConfig::default(),
            ages: (0..10).map(|i| 50.0 + 5.0 * i as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeFit {
    pub label: String,
    pub loss: LossKind,
    pub tampered: bool,
    pub model: GeodesicModel,
    pub x_mean: f64,
    pub sigma_hat: Option<f64>,
    pub cutoff: Option<f64>,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
}

/// Distance of one fit to the clean L2 baseline.
#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub label: String,
    /// `d(p̂_a, p̂_L2)`.
    pub d_p: f64,
    /// `‖Γ(v̂_a) − v̂_L2‖` with `v̂_a` transported to `p̂_L2`.
    pub d_v: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeSequence {
    pub label: String,
    pub ages: Vec<f64>,
    pub shapes: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeStudy {
    pub schema_version: u32,
    pub manifold: Manifold,
    pub n_subjects: usize,
    pub constants: TuningConstants,
    pub tampered_indices: Vec<usize>,
    pub mean_distance_untampered: f64,
    pub mean_distance_to_tampered: f64,
    pub fits: Vec<ShapeFit>,
    pub comparisons: Vec<Comparison>,
    pub sequences: Vec<ShapeSequence>,
}

impl ShapeStudy {
    pub fn comparison(&self, label: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.label == label)
    }
}

fn label(loss: LossKind, tampered: bool) -> String {
    if tampered {
        format!("{loss}_tampered")
    } else {
        loss.to_string()
    }
}

/// Fit each loss to the clean and the tampered data and compare every fit
/// with the clean L2 fit, which is always computed.
pub fn run_shape_study(ds: &ShapeDataset, cfg: &ShapeStudyConfig) -> Result<ShapeStudy> {
    let m = ds.manifold();
    let n = ds.len();
    let constants = tune(m.intrinsic_dim(), cfg.solver.efficiency)?;
    let tampered_indices = match &cfg.tamper_indices {
        Some(ix) => {
            let mut ix = ix.clone();
            ix.sort_unstable();
            ix.dedup();
            ix
        }
        None => choose_tampered(n, (n as f64 * DEFAULT_TAMPER_FRACTION).round() as usize, cfg.seed),
    };
    let dirty = tamper(ds, &tampered_indices)?;
    let (within, across) = if tampered_indices.is_empty() || tampered_indices.len() == n {
        (f64::NAN, f64::NAN)
    } else {
        tamper_distances(&dirty, &tampered_indices)?
    };

    let mut losses = vec![LossKind::L2];
    losses.extend(cfg.losses.iter().filter(|&&l| l != LossKind::L2));
    let clean_data = ds.to_dataset()?;
    let dirty_data = dirty.to_dataset()?;
    let mut fits = Vec::new();
    for (tampered, data) in [(false, &clean_data), (true, &dirty_data)] {
        for &loss in &losses {
            if tampered && !cfg.losses.contains(&loss) {
                continue;
            }
            let f = fit(data, &SolverConfig { loss, ..cfg.solver.clone() })?;
            fits.push(ShapeFit {
                label: label(loss, tampered),
                loss,
                tampered,
                model: f.model,
                x_mean: f.x_mean[0],
                sigma_hat: f.sigma_hat,
                cutoff: f.cutoff,
                final_loss: f.final_loss,
                iterations: f.iterations,
                converged: f.converged,
                stop: f.stop,
            });
        }
    }

    let base = fits[0].model.clone();
    let comparisons = fits[1..]
        .iter()
        .map(|f| {
            let t = m.transport(&f.model.p, &f.model.v[0], &base.p)?;
            Ok(Comparison {
                label: f.label.clone(),
                d_p: m.distance(&f.model.p, &base.p)?,
                d_v: m.norm(&sub(&t, &base.v[0])),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let sequences = fits
        .iter()
        .filter(|f| f.tampered || cfg.losses.contains(&f.loss))
        .map(|f| {
            let shapes = cfg
                .ages
                .iter()
                .map(|&t| Ok(landmarks(&m.exp(&f.model.p, &scale(&f.model.v[0], t - f.x_mean))?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(ShapeSequence { label: f.label.clone(), ages: cfg.ages.clone(), shapes })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ShapeStudy {
        schema_version: SCHEMA_VERSION,
        manifold: m,
        n_subjects: n,
        constants,
        tampered_indices,
        mean_distance_untampered: within,
        mean_distance_to_tampered: across,
        fits,
        comparisons,
        sequences,
    })
}
