use harp::algorithms::{run_baseline, run_harp_with, HarpOptions, RunStreams};
use harp::estimators::{estimate_gradient, sample_hessian};
use harp::gains::{Exponent, GainSchedule};
use harp::hessian::{regularize, shaping_factor};
use harp::perturbation::{harp_from_normal, rdsa_from_normal, sfsa_from_normal, spsa_from_signs, PerturbationDraw};
use harp::problems::{NoiseHandle, Omega, Quadratic, StochasticProblem};
use harp::record::{NoiseMode, RunConfig};
use harp::rng::{spawn_rng, StreamTag};
use harp::{run_algorithm, SchemeKind};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vector(d: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0..3.0f64, d).prop_map(DVector::from_vec)
}

fn signs(d: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(prop::bool::ANY, d)
        .prop_map(|b| DVector::from_iterator(b.len(), b.iter().map(|&s| if s { 1.0 } else { -1.0 })))
}

/// Random SPD matrix `AAᵀ + 0.1 I`.
fn spd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, d * d).prop_map(move |v| {
        let a = DMatrix::from_vec(d, d, v);
        let m = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
        (&m + m.transpose()) * 0.5
    })
}

fn exponents() -> impl Strategy<Value = (Exponent, Exponent)> {
    // α ∈ (1/2, 1], γ ∈ (0, α − 1/2).
    (51..=100i64, 1..50i64).prop_filter_map("γ admissible", |(an, gn)| {
        let alpha = Exponent::new(an, 100);
        let gamma = Exponent::new(gn, 100);
        (gn * 2 < (an * 2 - 100)).then_some((alpha, gamma))
    })
}

fn negated(d: &PerturbationDraw) -> PerturbationDraw {
    PerturbationDraw { delta: -&d.delta, mapped: -&d.mapped }
}

fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    (a - b).abs().max() <= tol * (1.0 + b.abs().max())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gains_are_nonincreasing(
        a in 0.01..10.0f64, c in 0.01..5.0f64, big_a in 0.0..100.0f64,
        (alpha, gamma) in exponents(), k in 0usize..100_000,
    ) {
        let s = GainSchedule::new(a, alpha, c, gamma).unwrap().with_offset(big_a).unwrap();
        let (g0, g1) = (s.at(k), s.at(k + 1));
        prop_assert!(g1.a <= g0.a && g1.c <= g0.c && g1.c_tilde <= g0.c_tilde);
        prop_assert!(g1.w <= g0.w && g1.eps <= g0.eps);
        prop_assert!(g1.a > 0.0 && g1.c > 0.0);
    }

    #[test]
    fn odd_map_for_every_scheme(z in vector(4), s in signs(4), h in spd(4)) {
        let sp = spsa_from_signs(s.clone());
        prop_assert_eq!(spsa_from_signs(-s), negated(&sp));

        prop_assume!(z.norm() > 1e-6);
        let rd = rdsa_from_normal(&z);
        prop_assert_eq!(rdsa_from_normal(&-&z), negated(&rd));

        let sf = sfsa_from_normal(z.clone());
        prop_assert_eq!(sfsa_from_normal(-&z), negated(&sf));

        let shaping = shaping_factor(&h).unwrap();
        let hp = harp_from_normal(&shaping, &h, &z);
        prop_assert_eq!(harp_from_normal(&shaping, &h, &-&z), negated(&hp));
    }

    #[test]
    fn harp_map_inverts_shaping(z in vector(3), h in spd(3)) {
        // CCᵀ = Ĥ⁻¹ means ĤC is the inverse of Cᵀ, so CᵀĤCz = z.
        let shaping = shaping_factor(&h).unwrap();
        let draw = harp_from_normal(&shaping, &h, &z);
        let back = shaping.factor.transpose() * &draw.mapped;
        prop_assert!(close(&back, &z, 1e-9), "{} vs {}", back, z);
    }

    #[test]
    fn hessian_sample_is_exactly_symmetric(
        theta in vector(4), z1 in vector(4), z2 in vector(4), c in 0.01..1.0f64, ct in 0.01..1.0f64, h in spd(4),
    ) {
        let q = Quadratic::new(h, NoiseMode::Iid, 0.5).unwrap();
        let mut rng = spawn_rng(1, 0, StreamTag::Noise);
        let d1 = sfsa_from_normal(z1);
        let d2 = sfsa_from_normal(z2);
        let g = estimate_gradient(&q, &theta, c, &d1, &NoiseHandle::Fresh, &mut rng).unwrap();
        let s = sample_hessian(&q, &theta, c, ct, &d1, &d2, &NoiseHandle::Fresh, &mut rng, g.losses).unwrap();
        prop_assert_eq!(s.matrix.transpose(), s.matrix);
    }

    #[test]
    fn affine_losses_give_zero_lbar(
        slope in vector(3), offset in -5.0..5.0f64, theta in vector(3),
        z1 in vector(3), z2 in vector(3), c in 0.01..1.0f64, ct in 0.01..1.0f64,
    ) {
        struct Affine { slope: DVector<f64>, offset: f64, opt: DVector<f64> }
        impl StochasticProblem for Affine {
            fn dimension(&self) -> usize { self.slope.len() }
            fn loss(&self, t: &DVector<f64>) -> f64 { self.slope.dot(t) + self.offset }
            fn optimum(&self) -> &DVector<f64> { &self.opt }
            fn noise_mode(&self) -> NoiseMode { NoiseMode::Iid }
            fn sample_omega(&self, _: &mut dyn rand::RngCore) -> Omega { Omega::None }
            fn observe(&self, t: &DVector<f64>, _: &Omega) -> f64 { self.loss(t) }
        }
        let p = Affine { slope, offset, opt: DVector::zeros(3) };
        let mut rng = spawn_rng(2, 0, StreamTag::Noise);
        let d1 = sfsa_from_normal(z1);
        let d2 = sfsa_from_normal(z2);
        let g = estimate_gradient(&p, &theta, c, &d1, &NoiseHandle::Fresh, &mut rng).unwrap();
        let s = sample_hessian(&p, &theta, c, ct, &d1, &d2, &NoiseHandle::Fresh, &mut rng, g.losses).unwrap();
        let scale = 1.0 + g.losses.0.abs() + g.losses.1.abs();
        prop_assert!(s.lbar.abs() <= 1e-12 * scale * 4.0, "ℓ̄ = {}", s.lbar);
    }

    #[test]
    fn quadratic_gradient_is_free_of_c(theta in vector(3), s in signs(3), c in 0.05..1.0f64, h in spd(3)) {
        let q = Quadratic::new(h, NoiseMode::Iid, 0.0).unwrap();
        let mut rng = spawn_rng(3, 0, StreamTag::Noise);
        let draw = spsa_from_signs(s);
        let g1 = estimate_gradient(&q, &theta, c, &draw, &NoiseHandle::Fresh, &mut rng).unwrap();
        let g2 = estimate_gradient(&q, &theta, 2.0 * c, &draw, &NoiseHandle::Fresh, &mut rng).unwrap();
        prop_assert!(close(&g1.ghat, &g2.ghat, 1e-9), "{} vs {}", g1.ghat, g2.ghat);
    }

    #[test]
    fn regularized_spectrum_is_sqrt_lambda_sq_plus_eps(h in spd(4), eps in 1e-8..1.0f64) {
        let r = regularize(&h, eps).unwrap();
        let mut got: Vec<f64> = r.symmetric_eigenvalues().iter().copied().collect();
        let mut want: Vec<f64> = h.symmetric_eigenvalues().iter().map(|l| (l * l + eps).sqrt()).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-10 * w.max(1.0), "{g} vs {w}");
        }
    }

    #[test]
    fn crn_handle_repeats_observations(theta in vector(3), seed in any::<u64>()) {
        let q = Quadratic::diagonal(&[1.0, 2.0, 3.0], NoiseMode::Crn, 1.0).unwrap();
        let mut rng = spawn_rng(seed, 0, StreamTag::Noise);
        let handle = NoiseHandle::open(&q, &mut rng);
        let a = q.query(&theta, &handle, &mut rng);
        let b = q.query(&theta, &handle, &mut rng);
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), rep in 0u64..1000, kind in prop::sample::select(vec![
        SchemeKind::Spsa, SchemeKind::Rdsa, SchemeKind::Sfsa, SchemeKind::Harp,
    ])) {
        let q = Quadratic::diagonal(&[4.0, 1.0, 0.25], NoiseMode::Iid, 0.3).unwrap();
        let s = GainSchedule::new(0.1, Exponent::new(602, 1000), 0.2, Exponent::new(101, 1000)).unwrap();
        let cfg = RunConfig::new(3, 40, 1, 4, seed, NoiseMode::Iid).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let a = run_algorithm(kind, &q, &s, &cfg, &x0, &mut RunStreams::new(seed, rep)).unwrap();
        let b = run_algorithm(kind, &q, &s, &cfg, &x0, &mut RunStreams::new(seed, rep)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn frozen_harp_equals_sfsa(seed in any::<u64>(), iid in any::<bool>()) {
        let mode = if iid { NoiseMode::Iid } else { NoiseMode::Crn };
        let q = Quadratic::diagonal(&[3.0, 1.0], mode, 0.5).unwrap();
        let s = GainSchedule::new(0.1, Exponent::new(602, 1000), 0.2, Exponent::new(101, 1000)).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let frozen = HarpOptions { freeze_tracker: true, ..HarpOptions::default() };
        let h = run_harp_with(&q, &s, &RunConfig::new(2, 60, 1, 4, seed, mode).unwrap(), &x0, &mut RunStreams::new(seed, 0), frozen).unwrap();
        let f = run_baseline(SchemeKind::Sfsa, &q, &s, &RunConfig::new(2, 60, 1, 2, seed, mode).unwrap(), &x0, &mut RunStreams::new(seed, 0)).unwrap();
        prop_assert_eq!(&h.record.terminal, &f.terminal);
        prop_assert_eq!(&h.record.distance, &f.distance);
        prop_assert_eq!(h.hhat, DMatrix::identity(2, 2));
    }

    #[test]
    fn query_accounting_is_exact(iters in 1usize..50, kind in prop::sample::select(vec![
        SchemeKind::Spsa, SchemeKind::Rdsa, SchemeKind::Sfsa, SchemeKind::Harp,
    ]), q2 in any::<bool>()) {
        let q = Quadratic::diagonal(&[1.0, 1.0], NoiseMode::Iid, 0.1).unwrap();
        let s = GainSchedule::new(0.1, Exponent::integer(1), 0.1, Exponent::new(1, 6)).unwrap();
        let per = if kind == SchemeKind::Harp || !q2 { 4 } else { 2 };
        let cfg = RunConfig::new(2, iters, 1, per, 0, NoiseMode::Iid).unwrap();
        let rec = run_algorithm(kind, &q, &s, &cfg, &DVector::from_vec(vec![1.0, 1.0]), &mut RunStreams::new(0, 0)).unwrap();
        prop_assert_eq!(rec.len(), iters + 1);
        for (k, &n) in rec.iteration.iter().zip(&rec.cumulative_queries) {
            prop_assert_eq!(n, per as u64 * *k as u64);
        }
    }
}
