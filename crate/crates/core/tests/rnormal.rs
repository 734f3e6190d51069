mod common;

use std::f64::consts::PI;

use common::rng;
use geodreg::rnormal::*;
use geodreg::tuning::xi;
use geodreg::vecops::{dist, norm, scale};
use geodreg::Manifold;
use geodreg_oracle::{integrate, integrate_to_infinity, ks_pvalue, ks_statistic};

const SIGMAS: [f64; 3] = [PI / 16.0, PI / 8.0, PI / 4.0];

#[test]
fn g_increments_match_quadrature() {
    for m in 0..=6u32 {
        for s in SIGMAS {
            let s2 = s * s;
            let g0 = g_function(m, s2, 0.0).unwrap();
            for r in [PI / 4.0, PI / 2.0, PI] {
                let want = integrate(|t| t.sin().powi(m as i32) * (-t * t / (2.0 * s2)).exp(), 0.0, r, 1e-14);
                let got = g_function(m, s2, r).unwrap() - g0;
                assert!((got - want).abs() < 1e-8, "m={m} σ={s} R={r}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn h_increments_match_quadrature() {
    for m in 0..=6u32 {
        for s in SIGMAS {
            let s2 = s * s;
            for r in [0.25, 1.0, 3.0] {
                let want = integrate(|t| t.sinh().powi(m as i32) * (-t * t / (2.0 * s2)).exp(), 0.0, r, 1e-14);
                let got = h_increment(m, s2, r).unwrap();
                let plain = h_function(m, s2, r).unwrap() - h_function(m, s2, 0.0).unwrap();
                assert!((got - want).abs() < 1e-8, "m={m} σ={s} R={r}");
                assert!((plain - want).abs() < 1e-8, "m={m} σ={s} R={r}");
            }
        }
    }
}

#[test]
fn normalizing_constants_match_quadrature() {
    let s = PI / 8.0;
    let circle = RiemannianNormal::new(Manifold::Sphere(1), s).unwrap();
    let want = 2.0 * integrate(|r| (-r * r / (2.0 * s * s)).exp(), 0.0, PI, 1e-14);
    assert!((circle.normalizing_constant() - want).abs() < 1e-10);

    let s = 0.5;
    let plane = RiemannianNormal::new(Manifold::Hyperbolic(2), s).unwrap();
    let want = 2.0 * PI * integrate_to_infinity(|r| r.sinh() * (-r * r / (2.0 * s * s)).exp(), 0.0, 1e-14);
    assert!((plane.normalizing_constant() - want).abs() < 1e-9 * want);

    let s2_law = RiemannianNormal::new(Manifold::Sphere(2), 0.4).unwrap();
    let want = 2.0 * PI * integrate(|r| r.sin() * (-r * r / 0.32).exp(), 0.0, PI, 1e-14);
    assert!((s2_law.normalizing_constant() - want).abs() < 1e-10);

    for m in [Manifold::Sphere(3), Manifold::Hyperbolic(3)] {
        let mut prev = 0.0;
        for i in 1..40 {
            let c = RiemannianNormal::new(m, 0.02 * i as f64).unwrap().normalizing_constant();
            assert!(c > prev);
            prev = c;
        }
    }
}

fn quadrature_cdf(m: Manifold, sigma: f64, r: f64) -> f64 {
    let s2 = sigma * sigma;
    match m {
        Manifold::Sphere(n) => {
            let f = |t: f64| t.sin().powi(n as i32 - 1) * (-t * t / (2.0 * s2)).exp();
            integrate(f, 0.0, r, 1e-15) / integrate(f, 0.0, PI, 1e-15)
        }
        Manifold::Hyperbolic(n) => {
            let f = |t: f64| t.sinh().powi(n as i32 - 1) * (-t * t / (2.0 * s2)).exp();
            integrate(f, 0.0, r, 1e-15) / integrate_to_infinity(f, 0.0, 1e-15)
        }
        _ => unreachable!(),
    }
}

#[test]
fn radial_cdf_matches_quadrature_ratio() {
    let s = PI / 8.0;
    let law = RiemannianNormal::new(Manifold::Sphere(2), s).unwrap();
    let r = s * xi(2).unwrap();
    assert!((law.radial_cdf(r) - quadrature_cdf(Manifold::Sphere(2), s, r)).abs() < 1e-8);

    let law = RiemannianNormal::new(Manifold::Hyperbolic(3), 0.3).unwrap();
    assert!((law.radial_cdf(0.6) - quadrature_cdf(Manifold::Hyperbolic(3), 0.3, 0.6)).abs() < 1e-8);

    for (m, s) in [(Manifold::Sphere(3), 0.7), (Manifold::Sphere(5), 0.2), (Manifold::Hyperbolic(2), 1.1)] {
        let law = RiemannianNormal::new(m, s).unwrap();
        for r in [0.05, 0.3, 0.9, 2.0] {
            assert!((law.radial_cdf(r) - quadrature_cdf(m, s, r)).abs() < 1e-8, "{m} σ={s} r={r}");
        }
    }
}

#[test]
fn radial_cdf_is_monotone_in_unit_interval() {
    for (m, s) in [(Manifold::Sphere(2), PI / 6.0), (Manifold::Hyperbolic(3), 0.3), (Manifold::Sphere(4), 1.5)] {
        let law = RiemannianNormal::new(m, s).unwrap();
        let mut prev = 0.0;
        for i in 0..=5000 {
            let f = law.radial_cdf(i as f64 * 0.001);
            assert!((0.0..=1.0).contains(&f));
            assert!(f >= prev - 1e-15, "{m} at {}", i as f64 * 0.001);
            prev = f;
        }
    }
}

#[test]
fn quantile_round_trip() {
    for (m, s) in [
        (Manifold::Sphere(2), PI / 8.0),
        (Manifold::Sphere(3), PI / 24.0),
        (Manifold::Sphere(3), PI / 6.0),
        (Manifold::Hyperbolic(3), 0.3),
        (Manifold::Hyperbolic(2), 1.0),
        (Manifold::Euclidean(3), 0.5),
    ] {
        let law = RiemannianNormal::new(m, s).unwrap();
        for i in 1..200 {
            let t = i as f64 / 200.0;
            let r = law.radial_quantile(t).unwrap();
            assert!((law.radial_cdf(r) - t).abs() <= 1e-10, "{m} t={t}");
        }
        assert!(law.radial_quantile(1e-12).unwrap() < 1e-2 * s);
    }
}

#[test]
fn median_matches_dense_tabulation() {
    let s = PI / 8.0;
    let law = RiemannianNormal::new(Manifold::Sphere(2), s).unwrap();
    let n = 1_000_000;
    let h = PI / n as f64;
    let f = |r: f64| r.sin() * (-r * r / (2.0 * s * s)).exp();
    let mut cum = vec![0.0; n + 1];
    for i in 0..n {
        cum[i + 1] = cum[i] + 0.5 * h * (f(i as f64 * h) + f((i + 1) as f64 * h));
    }
    let total = cum[n];
    let i = cum.partition_point(|&c| c < 0.5 * total);
    let frac = (0.5 * total - cum[i - 1]) / (cum[i] - cum[i - 1]);
    let median = (i as f64 - 1.0 + frac) * h;
    assert!((law.radial_quantile(0.5).unwrap() - median).abs() < 1e-8);
}

fn sampled_distances(m: Manifold, law: &RiemannianNormal, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mu = m.random_point(&mut r);
    (0..n)
        .map(|_| {
            let y = law.sample(&mu, &mut r).unwrap();
            m.check_point(&y, 1e-9).unwrap();
            m.distance(&mu, &y).unwrap()
        })
        .collect()
}

#[test]
fn sampled_distances_pass_ks() {
    for (m, s) in [(Manifold::Sphere(2), PI / 8.0), (Manifold::Hyperbolic(3), 0.3), (Manifold::Sphere(3), PI / 6.0)] {
        let law = RiemannianNormal::new(m, s).unwrap();
        let d = sampled_distances(m, &law, 20_000, 17);
        let stat = ks_statistic(&d, |r| law.radial_cdf(r));
        assert!(ks_pvalue(stat, d.len()) > 0.01, "{m} σ={s}: D={stat}");
    }
}

#[test]
fn samples_are_isotropic() {
    let m = Manifold::Sphere(3);
    let s = PI / 8.0;
    let law = RiemannianNormal::new(m, s).unwrap();
    let mut r = rng(5);
    let mu = m.random_point(&mut r);
    let n = 20_000;
    let mut mean = vec![0.0; 4];
    let axis = m.random_tangent(&mu, 1.0, &mut r);
    let axis = scale(&axis, 1.0 / norm(&axis));
    let mut second = 0.0;
    for _ in 0..n {
        let y = law.sample(&mu, &mut r).unwrap();
        let v = m.log(&mu, &y).unwrap();
        for (a, b) in mean.iter_mut().zip(&v) {
            *a += b / n as f64;
        }
        let u = scale(&v, 1.0 / norm(&v));
        let proj: f64 = u.iter().zip(&axis).map(|(a, b)| a * b).sum();
        second += proj * proj / n as f64;
    }
    assert!(norm(&mean) < 4.0 / (n as f64).sqrt() * s);
    // E[(u·a)²] = 1/n for a uniform direction in n dimensions
    assert!((second - 1.0 / 3.0).abs() < 0.01);
}

#[test]
fn small_sigma_variance_is_tangent_gaussian() {
    for m in [Manifold::Sphere(2), Manifold::Hyperbolic(3)] {
        let s = 0.01;
        let law = RiemannianNormal::new(m, s).unwrap();
        let d = sampled_distances(m, &law, 100_000, 23);
        let var = d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
        let want = m.intrinsic_dim() as f64 * s * s;
        assert!((var / want - 1.0).abs() < 0.05, "{m}: {var} vs {want}");
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let m = Manifold::Hyperbolic(2);
    let noise = Noise::new(m, NoiseSpec::default_contaminated()).unwrap();
    let mu = m.origin();
    let a = noise.sample(&mu, &mut rng(99)).unwrap();
    let b = noise.sample(&mu, &mut rng(99)).unwrap();
    assert_eq!(a, b);
    let t1 = sample_tangent_t(m, &mu, 0.2, 4.0, &mut rng(3)).unwrap();
    let t2 = sample_tangent_t(m, &mu, 0.2, 4.0, &mut rng(3)).unwrap();
    assert_eq!(t1, t2);
}

#[test]
fn tangent_t_with_huge_nu_is_gaussian() {
    let m = Manifold::Sphere(2);
    let s = 0.2;
    let mut r = rng(31);
    let mu = m.origin();
    let d: Vec<f64> =
        (0..20_000).map(|_| m.distance(&mu, &sample_tangent_t(m, &mu, s, 1e6, &mut r).unwrap()).unwrap()).collect();
    // tangent norm of a 2-d Gaussian is Rayleigh
    let stat = ks_statistic(&d, |x| 1.0 - (-x * x / (2.0 * s * s)).exp());
    assert!(ks_pvalue(stat, d.len()) > 0.01);
}

#[test]
fn tangent_t_is_heavy_tailed() {
    let m = Manifold::Hyperbolic(3);
    let mu = m.origin();
    let mut r = rng(8);
    let kurt = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n / (v * v)
    };
    let t: Vec<f64> =
        (0..20_000).map(|_| m.distance(&mu, &sample_tangent_t(m, &mu, 0.1, 4.0, &mut r).unwrap()).unwrap()).collect();
    let g: Vec<f64> =
        (0..20_000).map(|_| m.distance(&mu, &sample_tangent_normal(m, &mu, 0.1, &mut r).unwrap()).unwrap()).collect();
    assert!(kurt(&t) > 1.5 * kurt(&g));
}

#[test]
fn sphere_tangent_t_never_wraps() {
    let m = Manifold::Sphere(2);
    let mu = m.origin();
    let mut r = rng(4);
    for _ in 0..5000 {
        let y = sample_tangent_t(m, &mu, 1.0, 1.0, &mut r).unwrap();
        assert!(m.check_point(&y, 1e-10).is_ok());
    }
}

#[test]
fn contamination_extremes_and_frequencies() {
    let m = Manifold::Sphere(2);
    let mu = m.origin();
    let (sm, so) = (PI / 24.0, PI / 6.0);
    for (p, s) in [(0.0, sm), (1.0, so)] {
        let law = RiemannianNormal::new(m, s).unwrap();
        let mut r = rng(12);
        let d: Vec<f64> = (0..10_000)
            .map(|_| m.distance(&mu, &sample_contaminated(m, &mu, sm, so, p, &mut r).unwrap()).unwrap())
            .collect();
        let stat = ks_statistic(&d, |x| law.radial_cdf(x));
        assert!(ks_pvalue(stat, d.len()) > 0.01, "p_out={p}");
    }
    // classify draws by distance: the narrow component essentially never passes 4σ_main
    let noise = Noise::new(m, NoiseSpec::default_contaminated()).unwrap();
    let main = RiemannianNormal::new(m, sm).unwrap();
    let out = RiemannianNormal::new(m, so).unwrap();
    let cut = 4.0 * sm;
    let p_far = 0.1 * (1.0 - out.radial_cdf(cut)) + 0.9 * (1.0 - main.radial_cdf(cut));
    let n = 20_000;
    let mut r = rng(13);
    let far = (0..n).filter(|_| m.distance(&mu, &noise.sample(&mu, &mut r).unwrap()).unwrap() > cut).count() as f64;
    let sd = (n as f64 * p_far * (1.0 - p_far)).sqrt();
    assert!((far - n as f64 * p_far).abs() < 3.0 * sd);
}

#[test]
fn euclidean_law_is_gaussian() {
    let m = Manifold::Euclidean(2);
    let law = RiemannianNormal::new(m, 0.7).unwrap();
    assert!((law.normalizing_constant() - 2.0 * PI * 0.49).abs() < 1e-12);
    let r = 1.1;
    assert!((law.radial_cdf(r) - (1.0 - (-r * r / (2.0 * 0.49f64)).exp())).abs() < 1e-14);
    let y = law.sample(&[1.0, 2.0], &mut rng(1)).unwrap();
    assert!(dist(&y, &[1.0, 2.0]) > 0.0);
}
