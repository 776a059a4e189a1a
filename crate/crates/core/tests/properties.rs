use lrmc::admm::{solve_subproblem, AdmmOptions, SubproblemSpec};
use lrmc::estimators::{cross_validate_lambda, estimate, EstimatorKind, EstimatorSpec};
use lrmc::harness::{results_csv, run_experiment, ExperimentConfig};
use lrmc::likelihood::{empirical_mle, neg_loglik, prox_conjugate_entry, LikelihoodData};
use lrmc::markov::{
    count_transitions, generate_aggregated, generate_latent_lowrank, simulate, stationary_distribution, SamplingMode,
    TransitionCounts, TransitionMatrix,
};
use lrmc::metrics::{eta_metrics, kl_divergence};
use lrmc::spectral::{numerical_rank, project_simplex, project_spectral_ball, singular_values, spectral_norm};
use lrmc::{ExecPolicy, Matrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn counts_of(pm: &TransitionMatrix, n: usize, mode: SamplingMode, seed: u64) -> TransitionCounts {
    count_transitions(&simulate(pm, n, mode, seed).unwrap())
}

#[test]
fn pair_frequencies_pass_chi_square() {
    let pm = TransitionMatrix::from_rows(&[vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.4, 0.4, 0.2]]).unwrap();
    let mu = stationary_distribution(&pm).unwrap();
    let n = 1_000_000;
    let counts = counts_of(&pm, n, SamplingMode::IidPairs, 17);
    let mut chi2 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let expected = n as f64 * mu.weights()[i] * pm.matrix()[(i, j)];
            chi2 += (counts.get(i, j) as f64 - expected).powi(2) / expected;
        }
    }
    // upper 0.001 quantile of chi-square with 8 degrees of freedom
    assert!(chi2 < 26.124, "chi2 = {chi2}");
}

#[test]
fn nu_with_vanishing_penalty_matches_mle_likelihood() {
    let pm = generate_latent_lowrank(5, 2, 3).unwrap().with_uniform_floor(0.2).unwrap();
    let counts = counts_of(&pm, 50_000, SamplingMode::Chain, 4);
    assert!(counts.counts().iter().all(|&c| c > 0));
    let data = LikelihoodData::from_counts(&counts).unwrap();
    let mut spec = EstimatorSpec::nu(Some(1e-7));
    spec.options.admm.tol = 1e-9;
    spec.options.admm.max_iter = 50_000;
    let fit = estimate(&spec, &counts).unwrap();
    let mle = neg_loglik(&data, empirical_mle(&counts).matrix()).unwrap();
    let nu = neg_loglik(&data, fit.matrix.matrix()).unwrap();
    assert!((nu - mle).abs() < 1e-4, "{nu} vs {mle}");
}

#[test]
fn rank_estimator_beats_mle_on_aggregated_chains() {
    let mut wins = 0;
    for seed in 0..5 {
        let truth = generate_aggregated(10, 2, 40 + seed).unwrap();
        let counts = counts_of(&truth, 100_000, SamplingMode::IidPairs, 50 + seed);
        let rank = estimate(&EstimatorSpec::rank(2), &counts).unwrap();
        let mle = estimate(&EstimatorSpec::mle(), &counts).unwrap();
        let err = |q: &TransitionMatrix| eta_metrics(truth.matrix(), q.matrix(), 2).unwrap().eta_f;
        if err(&rank.matrix) < err(&mle.matrix) {
            wins += 1;
        }
        if rank.converged() {
            assert!(numerical_rank(rank.matrix.matrix()) <= 2);
        }
    }
    assert!(wins >= 3, "rank won {wins} of 5");
}

#[test]
fn heavy_penalty_scores_worse_than_moderate() {
    let truth = generate_latent_lowrank(10, 3, 9).unwrap();
    let traj = simulate(&truth, 20_000, SamplingMode::Chain, 10).unwrap();
    let admm = AdmmOptions { record_trace: false, ..AdmmOptions::default() };
    let cv = cross_validate_lambda(&traj, &[1e-3, 1e3], 5, 11, &admm, ExecPolicy::Sequential).unwrap();
    assert_eq!(cv.lambda, 1e-3);
    assert!(cv.scores[0].1 < cv.scores[1].1);
}

#[test]
fn execution_policy_does_not_change_results() {
    let cfg = ExperimentConfig {
        p: 8,
        r: 2,
        c_values: vec![1.0, 2.0],
        seeds: vec![1, 2, 3],
        estimators: vec![EstimatorKind::Mle, EstimatorKind::Svd, EstimatorKind::Nu],
        mode: SamplingMode::IidPairs,
        output: None,
    };
    let a = run_experiment(&cfg, ExecPolicy::Parallel).unwrap();
    let b = run_experiment(&cfg, ExecPolicy::Sequential).unwrap();
    assert_eq!(a.len(), 18);
    assert_eq!(results_csv(&a), results_csv(&b));
}

#[test]
fn converged_subproblem_is_feasible() {
    let pm = generate_latent_lowrank(8, 2, 1).unwrap();
    let counts = counts_of(&pm, 3_000, SamplingMode::Chain, 2);
    let data = LikelihoodData::from_counts(&counts).unwrap();
    let spec = SubproblemSpec { data: &data, linear: Matrix::from_element(8, 8, 0.01), c: 0.05, alpha: 0.01 };
    let sol = solve_subproblem(&spec, None, &AdmmOptions::default()).unwrap();
    assert!(sol.report.converged());
    assert!(sol.report.residuals.primal_feas <= 1e-6 && sol.report.residuals.dual_feas <= 1e-6);
    assert!(sol.x.min() >= -1e-8);
    assert!(neg_loglik(&data, &sol.x.map(|v| v.max(0.0))).unwrap().is_finite());
}

fn stochastic(p: usize, raw: &[f64]) -> Matrix {
    let mut m = DMatrix::from_row_slice(p, p, &raw[..p * p]);
    for i in 0..p {
        let s = m.row(i).sum();
        m.row_mut(i).scale_mut(1.0 / s);
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn latent_generator_is_stochastic_with_bounded_rank(p in 2usize..30, r in 1usize..6, seed in any::<u64>()) {
        let r = r.min(p);
        let pm = generate_latent_lowrank(p, r, seed).unwrap();
        for i in 0..p {
            prop_assert!((pm.matrix().row(i).sum() - 1.0).abs() < 1e-12);
        }
        prop_assert!(pm.matrix().min() >= 0.0);
        let sv = singular_values(pm.matrix());
        if r < p {
            prop_assert!(sv[r] <= 1e-10 * sv[0]);
        }
    }

    #[test]
    fn stationary_distribution_is_invariant(raw in proptest::collection::vec(0.01f64..1.0, 36), p in 2usize..6) {
        let pm = TransitionMatrix::new(stochastic(p, &raw)).unwrap();
        let mu = stationary_distribution(&pm).unwrap();
        let w = mu.weights();
        let residual = (pm.matrix().transpose() * w - w).lp_norm(1);
        prop_assert!(residual <= 1e-10);
        prop_assert!((w.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simulated_counts_total_request(n in 1usize..3000, seed in any::<u64>(), pairs in any::<bool>()) {
        let pm = generate_latent_lowrank(6, 2, seed).unwrap();
        let mode = if pairs { SamplingMode::IidPairs } else { SamplingMode::Chain };
        prop_assert_eq!(counts_of(&pm, n, mode, seed).total(), n as u64);
    }

    #[test]
    fn kl_is_nonnegative(a in proptest::collection::vec(0.01f64..1.0, 16), b in proptest::collection::vec(0.01f64..1.0, 16)) {
        let p = TransitionMatrix::new(stochastic(4, &a)).unwrap();
        let q = TransitionMatrix::new(stochastic(4, &b)).unwrap();
        let mu = stationary_distribution(&p).unwrap();
        prop_assert!(kl_divergence(&p, &mu, &q).unwrap() >= 0.0);
    }

    #[test]
    fn eta_u_is_bounded(a in proptest::collection::vec(0.01f64..1.0, 25), b in proptest::collection::vec(0.01f64..1.0, 25), r in 1usize..=5) {
        let e = eta_metrics(&stochastic(5, &a), &stochastic(5, &b), r).unwrap();
        prop_assert!(e.eta_u <= (r as f64).sqrt() + 1e-12);
        prop_assert!(e.eta_v <= (r as f64).sqrt() + 1e-12);
    }

    #[test]
    fn simplex_projection_is_feasible_and_idempotent(v in proptest::collection::vec(-5.0f64..5.0, 1..12)) {
        let x = project_simplex(&v);
        prop_assert!(x.iter().all(|&e| e >= 0.0));
        prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let again = project_simplex(&x);
        for (a, b) in x.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_ball_projection_lands_in_ball(raw in proptest::collection::vec(-3.0f64..3.0, 16), c in 0.01f64..4.0) {
        let m = DMatrix::from_row_slice(4, 4, &raw);
        let s = project_spectral_ball(&m, c).unwrap();
        prop_assert!(spectral_norm(&s) <= c + 1e-10);
        if spectral_norm(&m) <= c {
            prop_assert!((s - m).amax() < 1e-12);
        }
    }

    #[test]
    fn prox_solves_its_stationarity_equation(g in -10.0f64..10.0, w in 1e-6f64..2.0, sigma in 0.05f64..20.0) {
        let xi = prox_conjugate_entry(g, w, sigma);
        prop_assert!(xi > 0.0);
        let residual = (sigma * xi * xi - sigma * g * xi - w).abs();
        prop_assert!(residual <= 1e-10 * (1.0 + sigma) * (1.0 + g.abs()).powi(2));
    }
}
