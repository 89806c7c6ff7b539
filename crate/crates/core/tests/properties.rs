use proptest::prelude::*;

use squint_sbl::baselines::{greedy_assignment, omp};
use squint_sbl::channel::{channel_matrix, channel_tensor, path_coefficients, steering_vector, Path, PathSet, SystemConfig};
use squint_sbl::dictionary::{build_bundle, build_grids, selection_matrices};
use squint_sbl::experiment::{aggregate, trial_seed, ExperimentConfig, MetricsRow, Preset, Stat};
use squint_sbl::frontend::{make_beamformers, make_pilots, noiseless_whitened, synthesize_received, whiten, BeamformerMode, Whitener};
use squint_sbl::linalg::{c64, cis, hermitian_solve, identity, CMatrix, CVector};
use squint_sbl::vem::{self, e_step_lambda, e_step_x, e_step_xi, init_state, LambdaUpdate, VemOptions};

fn complex() -> impl Strategy<Value = c64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| c64::new(a, b))
}

fn mat(r: usize, c: usize) -> impl Strategy<Value = CMatrix> {
    proptest::collection::vec(complex(), r * c).prop_map(move |v| CMatrix::from_vec(r, c, v))
}

fn small_cfg(n_tx: usize, n_rx: usize, n_s: usize) -> SystemConfig {
    let mut cfg = SystemConfig::desk();
    cfg.n_tx = n_tx;
    cfg.n_rx = n_rx;
    cfg.n_s = n_s;
    cfg.p = 4;
    cfg.training_indices = vec![8, 24, 40, 64];
    cfg
}

fn angle() -> impl Strategy<Value = f64> {
    -0.5f64..0.5
}

fn path() -> impl Strategy<Value = Path> {
    (complex(), 0.0f64..4e-9, angle(), angle()).prop_map(|(gain, delay, aod, aoa)| Path { gain, delay, aod, aoa })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hermitian_solve_reproduces_rhs(a in (1usize..7).prop_flat_map(|n| (mat(n, n), mat(n, 2)))) {
        let (g, b) = a;
        let n = g.nrows();
        let hpd = &g * g.adjoint() + identity(n);
        let x = hermitian_solve(&hpd, &b).unwrap();
        prop_assert!((&hpd * x - &b).norm() <= 1e-10 * b.norm().max(1.0));
    }

    #[test]
    fn steering_entries_have_unit_modulus(nu in angle(), n in 1usize..64, ratio in 1.0f64..1.05) {
        let v = steering_vector(nu, n, ratio);
        prop_assert!(v.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn channel_entries_match_path_sum(paths in proptest::collection::vec(path(), 1..4), k in 1usize..=64) {
        let cfg = small_cfg(5, 3, 2);
        let set = PathSet::new(paths).unwrap();
        let h = channel_matrix(&set, &cfg, k).unwrap();
        let ratio = cfg.squint_ratio(k);
        let coef = path_coefficients(&set, &cfg, k);
        for r in 0..cfg.n_rx {
            for c in 0..cfg.n_tx {
                let want: c64 = set.paths.iter().zip(&coef).map(|(p, g)| {
                    g * cis(-2.0 * std::f64::consts::PI * ratio * (r as f64 * p.aoa + c as f64 * p.aod))
                }).sum();
                prop_assert!((h[(r, c)] - want).norm() <= 1e-12 * (1.0 + want.norm()));
            }
        }
    }

    #[test]
    fn cross_band_coupling_follows_delay(j in 0usize..8, i in 0usize..4, g in complex(), delay in 0.0f64..4e-9, k in 1usize..=64) {
        let cfg = small_cfg(8, 4, 2);
        let grids = build_grids(8, 4).unwrap();
        let set = PathSet::new(vec![Path { gain: g, delay, aod: grids.phi[j], aoa: grids.theta[i] }]).unwrap();
        let x1 = path_coefficients(&set, &cfg, 1)[0];
        let xk = path_coefficients(&set, &cfg, k)[0];
        let shift = cis(-2.0 * std::f64::consts::PI * (cfg.subcarrier_freq(k) - cfg.subcarrier_freq(1)) * delay);
        prop_assert!((xk - x1 * shift).norm() <= 1e-12 * (1.0 + x1.norm()));
    }

    #[test]
    fn whitened_combiner_is_orthonormal(seed in any::<u64>(), n_s in 1usize..6) {
        let cfg = small_cfg(8, 6, n_s);
        let bf = make_beamformers(&cfg, BeamformerMode::Random, seed).unwrap();
        let w = Whitener::new(&bf).unwrap();
        prop_assert!((w.w_w.transpose() * w.w_w.conjugate() - identity(n_s)).norm() <= 1e-10);
    }

    #[test]
    fn on_grid_forward_model_holds(seed in any::<u64>(), j in 0usize..8, i in 0usize..6, g in complex(), delay in 0.0f64..4e-9) {
        prop_assume!(g.norm() > 1e-3);
        let cfg = small_cfg(8, 6, 3);
        let grids = build_grids(8, 6).unwrap();
        let set = PathSet::new(vec![Path { gain: g, delay, aod: grids.phi[j], aoa: grids.theta[i] }]).unwrap();
        let bf = make_beamformers(&cfg, BeamformerMode::Random, seed).unwrap();
        let pilots = make_pilots(&cfg, seed ^ 1);
        let h = channel_tensor(&set, &cfg).unwrap();
        let clean = noiseless_whitened(&h, &cfg, &bf, &pilots).unwrap();
        let obs = whiten(&synthesize_received(&h, &cfg, &bf, &pilots, 0.0, 0).unwrap(), &bf).unwrap();
        let bundle = build_bundle(&cfg, grids, &bf, &obs, &pilots).unwrap();
        for (k, &sub) in cfg.training_indices.iter().enumerate() {
            let mut x = CVector::zeros(bundle.n_cols());
            x[j * 6 + i] = path_coefficients(&set, &cfg, sub)[0];
            prop_assert!((bundle.base_dictionary(k) * x - &clean[k]).norm() <= 1e-10 * clean[k].norm());
        }
    }

    #[test]
    fn selection_matrices_have_one_entry_per_row(np in 1usize..7, nt in 1usize..7) {
        let (b1, b2) = selection_matrices(np, nt);
        for b in [&b1, &b2] {
            for r in 0..b.nrows() {
                prop_assert_eq!(b.row(r).iter().filter(|&&v| v != 0.0).count(), 1);
            }
        }
        prop_assert_eq!(b1.transpose() * &b1, nalgebra::DMatrix::identity(np, np) * nt as f64);
        prop_assert_eq!(b2.transpose() * &b2, nalgebra::DMatrix::identity(nt, nt) * np as f64);
    }

    #[test]
    fn omp_residuals_never_increase(d in mat(8, 12), y in mat(8, 1), l in 1usize..8) {
        let res = omp(&d, &y.column(0).into_owned(), l, 0.0).unwrap();
        prop_assert!(res.residual_norms.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn greedy_pairing_undoes_a_permutation(truth in proptest::collection::vec((angle(), angle()), 1..6), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..truth.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let est: Vec<(f64, f64)> = order.iter().map(|&o| truth[o]).collect();
        let m = greedy_assignment(&est, &truth);
        for (t, e) in m.iter().enumerate() {
            prop_assert_eq!(est[e.unwrap()], truth[t]);
        }
    }

    #[test]
    fn trial_seeds_depend_only_on_their_inputs(base in any::<u64>(), t in 0usize..1000, s in 0usize..50) {
        prop_assert_eq!(trial_seed(base, t, s), trial_seed(base, t, s));
        prop_assert_ne!(trial_seed(base, t, s), trial_seed(base, t + 1, s));
        prop_assert_ne!(trial_seed(base, t, s), trial_seed(base, t, s + 1));
    }

    #[test]
    fn aggregating_identical_rows_returns_the_row(v in 0.0f64..10.0, n in 1usize..6) {
        let row = MetricsRow {
            trial: 0, sweep_value: 5.0, method: "vem".into(), mse_aod: v, mse_aoa: v, nmse_channel: v, nmse_signal: v,
            matched_paths: 1, estimated_paths: 2, converged: true, input_hash: String::new(), error: String::new(),
        };
        for stat in [Stat::Mean, Stat::Median] {
            let out = aggregate(&vec![row.clone(); n], stat);
            prop_assert_eq!(out.len(), 1);
            prop_assert!((out[0].nmse_channel - v).abs() <= 1e-12 * v.max(1.0));
            prop_assert_eq!(out[0].trials, n);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn resolved_configs_round_trip(trials in 1usize..50, seed in any::<u64>(), snr in -10.0f64..30.0) {
        let mut c = ExperimentConfig::preset(Preset::Desk);
        c.trials = trials;
        c.seed = seed;
        c.snr_db = snr;
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn vem_iterations_keep_posteriors_valid(seed in 0u64..1000, snr in 0.0f64..20.0, p in path()) {
        prop_assume!(p.gain.norm() > 0.1);
        let cfg = small_cfg(6, 5, 3);
        let set = PathSet::new(vec![p]).unwrap();
        let bf = make_beamformers(&cfg, BeamformerMode::Random, seed).unwrap();
        let pilots = make_pilots(&cfg, seed + 1);
        let h = channel_tensor(&set, &cfg).unwrap();
        let nv = squint_sbl::frontend::snr_to_noise_var(&h, &cfg, &bf, &pilots, snr).unwrap();
        let obs = whiten(&synthesize_received(&h, &cfg, &bf, &pilots, nv, seed + 2).unwrap(), &bf).unwrap();
        let bundle = build_bundle(&cfg, build_grids(6, 5).unwrap(), &bf, &obs, &pilots).unwrap();
        let mut st = init_state(&bundle, &obs, &VemOptions::default()).unwrap();
        for _ in 0..5 {
            e_step_x(&mut st, &bundle, &obs, 1e-12).unwrap();
            for c in &st.cov {
                let d = c.to_dense();
                prop_assert!(squint_sbl::linalg::hermitian_asymmetry(&d) <= 1e-10 * d.norm());
                prop_assert!(d.clone().cholesky().is_some());
            }
            let once = st.clone();
            e_step_x(&mut st, &bundle, &obs, 1e-12).unwrap();
            for k in 0..st.k() {
                prop_assert!((&st.mean[k] - &once.mean[k]).norm() <= 1e-10 * once.mean[k].norm().max(1.0));
            }
            e_step_lambda(&mut st, LambdaUpdate::Summed);
            e_step_xi(&mut st, &bundle, &obs).unwrap();
            prop_assert!(st.gammas_valid());
        }
    }

    #[test]
    fn scaling_observations_scales_gains(c in 0.1f64..10.0, j in 0usize..8, i in 0usize..4) {
        let cfg = small_cfg(8, 4, 4);
        let grids = build_grids(8, 4).unwrap();
        let set = PathSet::new(vec![Path { gain: c64::new(0.7, 0.2), delay: 1.1e-9, aod: grids.phi[j], aoa: grids.theta[i] }]).unwrap();
        let bf = make_beamformers(&cfg, BeamformerMode::IdentityTruncated, 0).unwrap();
        let pilots = make_pilots(&cfg, 1);
        let h = channel_tensor(&set, &cfg).unwrap();
        let obs = whiten(&synthesize_received(&h, &cfg, &bf, &pilots, 0.0, 0).unwrap(), &bf).unwrap();
        let scaled = obs.scaled(c);
        let b1 = build_bundle(&cfg, grids.clone(), &bf, &obs, &pilots).unwrap();
        let b2 = build_bundle(&cfg, grids, &bf, &scaled, &pilots).unwrap();
        let opts = VemOptions::default();
        let r1 = vem::run(&obs, &b1, &cfg, &opts).unwrap();
        let r2 = vem::run(&scaled, &b2, &cfg, &opts).unwrap();
        prop_assert_eq!(r1.pairs.len(), r2.pairs.len());
        for (a, b) in r1.pairs.iter().zip(&r2.pairs) {
            prop_assert!((a.aod - b.aod).abs() <= 1e-6 && (a.aoa - b.aoa).abs() <= 1e-6);
            prop_assert!((a.delay - b.delay).abs() <= 1e-6 * cfg.delay_window());
            // the Gamma rate β adds a fixed offset to E|x|², a relative bias of order β/|x|²
            prop_assert!((a.gain * c - b.gain).norm() <= 1e-5 * (a.gain * c).norm());
        }
    }
}
