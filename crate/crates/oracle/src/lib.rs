//! Reference computations used only by tests.
//!
//! Nothing here shares code with `geodreg`; each routine is a plain, slow,
//! independent way of computing a quantity the library computes another way.

use std::f64::consts::PI;

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = K15_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for j in 0..7 {
        let x = h * GK_NODES[j];
        let s = f(c - x) + f(c + x);
        kronrod += K15_WEIGHTS[j] * s;
        if j % 2 == 1 {
            gauss += G7_WEIGHTS[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let (val, err) = gk15(f, a, b);
    if depth == 0 || err <= tol.max(1e-15 * whole.abs()) {
        return val;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, whole, 0.5 * tol, depth - 1) + adapt(f, m, b, whole, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod (7/15) quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (whole, _) = gk15(&f, a, b);
    // Pre-split so narrow features are not missed by the first estimate.
    let pieces = 16;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = a + i as f64 * h;
            adapt(&f, lo, lo + h, whole, tol / pieces as f64, 40)
        })
        .sum()
}

/// Integral of `f` over `[a, inf)` via the substitution `t = a + s/(1-s)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> f64 {
    integrate(
        |s: f64| {
            if s >= 1.0 {
                return 0.0;
            }
            let one_minus = 1.0 - s;
            let t = a + s / one_minus;
            let v = f(t) / (one_minus * one_minus);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Central difference of a scalar function.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Fourth-order central difference, for checks that need more than ~1e-7 accuracy.
pub fn central_diff5<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Maclaurin series of erf(z) for complex z, summed until terms drop below 1e-17
/// relative. `z` is given as `(re, im)` and the result likewise.
pub fn erf_series(re: f64, im: f64) -> (f64, f64) {
    // term_k = (-1)^k z^{2k+1} / (k! (2k+1))
    let (z2r, z2i) = (re * re - im * im, 2.0 * re * im);
    let (mut pr, mut pi) = (re, im); // z^{2k+1}/k! * (-1)^k
    let (mut sr, mut si) = (re, im);
    for k in 1..2000 {
        let kf = k as f64;
        let nr = -(pr * z2r - pi * z2i) / kf;
        let ni = -(pr * z2i + pi * z2r) / kf;
        pr = nr;
        pi = ni;
        let tr = pr / (2.0 * kf + 1.0);
        let ti = pi / (2.0 * kf + 1.0);
        sr += tr;
        si += ti;
        if tr.hypot(ti) < 1e-17 * sr.hypot(si).max(1e-300) && k > 5 {
            break;
        }
    }
    let scale = 2.0 / PI.sqrt();
    (sr * scale, si * scale)
}

/// Kolmogorov-Smirnov statistic of `samples` against the continuous CDF `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("NaN sample"));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let lo = f - i as f64 / n;
            let hi = (i as f64 + 1.0) / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov survival function P(K > lambda), K the limiting law of sqrt(n) D_n.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        s += if j % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// KS p-value with the Stephens small-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// Minimise `f` over a rectangular grid, then refine around the best cell.
/// Returns the arg-min. Intended for 2-parameter brute-force checks.
pub fn grid_argmin_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    (mut a0, mut a1): (f64, f64),
    (mut b0, mut b1): (f64, f64),
    steps: usize,
    rounds: usize,
) -> (f64, f64) {
    let mut best = (0.5 * (a0 + a1), 0.5 * (b0 + b1));
    for _ in 0..rounds {
        let ha = (a1 - a0) / steps as f64;
        let hb = (b1 - b0) / steps as f64;
        let mut best_val = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let a = a0 + i as f64 * ha;
                let b = b0 + j as f64 * hb;
                let v = f(a, b);
                if v < best_val {
                    best_val = v;
                    best = (a, b);
                }
            }
        }
        a0 = best.0 - 2.0 * ha;
        a1 = best.0 + 2.0 * ha;
        b0 = best.1 - 2.0 * hb;
        b1 = best.1 + 2.0 * hb;
    }
    best
}

/// Ordinary least squares `y ~ 1 + X` via the normal equations, solved by
/// Gaussian elimination with partial pivoting. Rows of `x` are observations.
/// Returns `(intercept, slopes)` for every response column of `y`.
#[allow(clippy::needless_range_loop)]
pub fn ols(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = x[0].len() + 1;
    let d = y[0].len();
    let design: Vec<Vec<f64>> = x.iter().map(|row| std::iter::once(1.0).chain(row.iter().copied()).collect()).collect();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![vec![0.0; d]; k];
    for (row, yrow) in design.iter().zip(y) {
        for a in 0..k {
            for b in 0..k {
                xtx[a][b] += row[a] * row[b];
            }
            for c in 0..d {
                xty[a][c] += row[a] * yrow[c];
            }
        }
    }
    // Gauss-Jordan on [XtX | XtY]
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| xtx[i][col].abs().partial_cmp(&xtx[j][col].abs()).unwrap()).unwrap();
        xtx.swap(col, piv);
        xty.swap(col, piv);
        let p = xtx[col][col];
        for b in 0..k {
            xtx[col][b] /= p;
        }
        for c in 0..d {
            xty[col][c] /= p;
        }
        for r in 0..k {
            if r != col {
                let f = xtx[r][col];
                for b in 0..k {
                    xtx[r][b] -= f * xtx[col][b];
                }
                for c in 0..d {
                    xty[r][c] -= f * xty[col][c];
                }
            }
        }
    }
    xty
}
