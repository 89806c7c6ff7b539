//! Reference estimators: greedy OMP on angular and angular-delay dictionaries,
//! an off-grid OMP variant, and the truth-aware pairing used for angle metrics.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::channel::PathEstimate;
use crate::dictionary::DictionaryBundle;
use crate::error::{shape_err, Error, Result};
use crate::frontend::WhitenedObservation;
use crate::linalg::{c64, cholesky_jittered, cis, CMatrix, CVector, ZERO};
use crate::vem::{assemble_offset_system, clamp_offsets, estimate_delay_gain, SecondMoment};

/// Output of one greedy run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OmpResult {
    /// Selected dictionary columns, in selection order.
    pub support: Vec<usize>,
    pub coefficients: Vec<c64>,
    /// `‖y‖` followed by the residual norm after each step.
    pub residual_norms: Vec<f64>,
    /// (AOD, AOA) of each selected atom, when the dictionary is angular.
    pub angles: Vec<(f64, f64)>,
    /// Delay of each selected atom (angular-delay dictionary only).
    pub delays: Vec<f64>,
}

impl OmpResult {
    pub fn final_residual(&self) -> f64 {
        *self.residual_norms.last().unwrap_or(&0.0)
    }
}

fn least_squares(d: &CMatrix, support: &[usize], y: &CVector) -> Result<CVector> {
    let ds = d.select_columns(support.iter());
    let ch = cholesky_jittered(&(ds.adjoint() * &ds), 1e-12)?;
    Ok(ch.solve(&(ds.adjoint() * y)))
}

fn residual(d: &CMatrix, support: &[usize], coef: &CVector, y: &CVector) -> CVector {
    let mut r = y.clone();
    for (c, &s) in coef.iter().zip(support) {
        r.axpy(-*c, &d.column(s), c64::new(1.0, 0.0));
    }
    r
}

/// Greedy pursuit: pick the column most correlated with the residual
/// (normalized by column norm), re-fit all selected coefficients by least
/// squares, stop after `l_max` atoms or once the residual norm is ≤ `tol`.
pub fn omp(d: &CMatrix, y: &CVector, l_max: usize, tol: f64) -> Result<OmpResult> {
    if d.nrows() != y.len() {
        return Err(shape_err("omp observation", d.nrows(), y.len()));
    }
    if l_max == 0 {
        return Err(Error::InvalidArgument("l_max must be at least 1".into()));
    }
    let norms: Vec<f64> = d.column_iter().map(|c| c.norm()).collect();
    let y_norm = y.norm();
    let floor = tol.max(1e-12 * y_norm);
    let mut out = OmpResult {
        residual_norms: vec![y_norm],
        ..Default::default()
    };
    let mut res = y.clone();
    let mut coef = CVector::zeros(0);
    while out.support.len() < l_max.min(d.ncols()) && out.final_residual() > floor {
        let corr = d.adjoint() * &res;
        let pick = (0..d.ncols())
            .filter(|c| norms[*c] > 0.0 && !out.support.contains(c))
            .map(|c| (c, corr[c].norm() / norms[c]))
            .fold(None, |best: Option<(usize, f64)>, (c, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((c, v)),
            });
        let Some((c, _)) = pick else { break };
        out.support.push(c);
        coef = least_squares(d, &out.support, y)?;
        res = residual(d, &out.support, &coef, y);
        // LS over a superset never does worse; guard against round-off.
        let prev = out.final_residual();
        out.residual_norms.push(res.norm().min(prev));
    }
    out.coefficients = coef.iter().copied().collect();
    Ok(out)
}

/// On-grid OMP on band `k` of an angular dictionary.
pub fn omp_angular(y: &CVector, bundle: &DictionaryBundle, k: usize, l_max: usize, tol: f64) -> Result<OmpResult> {
    if k >= bundle.k() {
        return Err(Error::IndexOutOfRange { index: k + 1, max: bundle.k() });
    }
    let mut out = omp(&bundle.base_dictionary(k), y, l_max, tol)?;
    out.angles = out.support.iter().map(|&r| bundle.pair_angles(r)).collect();
    Ok(out)
}

/// OMP followed by alternating refinement of the selected atoms' angles
/// (noise-free offset step on the selected columns) and least-squares
/// coefficients. A refinement is kept only if it lowers the residual.
pub fn omp_offgrid_angular(
    y: &CVector,
    bundle: &DictionaryBundle,
    k: usize,
    l_max: usize,
    tol: f64,
    iters: usize,
) -> Result<OmpResult> {
    if iters == 0 {
        return Err(Error::InvalidArgument("iters must be at least 1".into()));
    }
    let mut out = omp_angular(y, bundle, k, l_max, tol)?;
    if out.support.is_empty() {
        return Ok(out);
    }
    let mut sub = bundle.band(k)?.prune(&out.support)?;
    let single = WhitenedObservation {
        y: vec![y.clone()],
        w_w: CMatrix::zeros(0, 0),
        transform: CMatrix::zeros(0, 0),
    };
    let mut coef = CVector::from_vec(out.coefficients.clone());
    let mut res_norm = out.final_residual();
    let cols: Vec<usize> = (0..sub.n_cols()).collect();
    for _ in 0..iters {
        let second = SecondMoment::Dense(&coef * coef.adjoint());
        let sys = assemble_offset_system(&sub, &single, std::slice::from_ref(&coef), std::slice::from_ref(&second))?;
        let (dp, dt) = sys.solve();
        let (dp, dt) = clamp_offsets(&sys, &dp, &dt, sub.grids.max_offset_phi(), sub.grids.max_offset_theta());
        if dp.iter().chain(&dt).all(|x| x.abs() < 1e-14) {
            break;
        }
        let cand = sub.regrid(sub.grids.shifted(&dp, &dt)?);
        let d = cand.base_dictionary(0);
        let c = least_squares(&d, &cols, y)?;
        let n = residual(&d, &cols, &c, y).norm();
        if n > res_norm {
            break;
        }
        sub = cand;
        coef = c;
        res_norm = n;
    }
    out.coefficients = coef.iter().copied().collect();
    out.angles = (0..sub.n_cols()).map(|r| sub.pair_angles(r)).collect();
    out.residual_norms.push(res_norm);
    Ok(out)
}

/// Delay grid for the angular-delay dictionary, `n_tau` points over `[0, window)`.
pub fn delay_grid(n_tau: usize, window: f64) -> Vec<f64> {
    (0..n_tau).map(|t| t as f64 * window / n_tau as f64).collect()
}

/// OMP on the joint angle-delay dictionary spanning all training bands.
/// Atom `(r, t)` sits at column `t·R + r` and stacks, over bands,
/// `e^{-j2π f_k τ_t} D_k[:, r]`. Coefficients estimate equivalent path gains.
pub fn omp_angular_delay(
    obs: &WhitenedObservation,
    bundle: &DictionaryBundle,
    freqs: &[f64],
    delays: &[f64],
    l_max: usize,
    tol: f64,
    budget_bytes: u64,
) -> Result<OmpResult> {
    let (kk, m, r) = (bundle.k(), bundle.obs_len(), bundle.n_cols());
    if freqs.len() != kk || obs.k() != kk {
        return Err(shape_err("angular-delay bands", kk, freqs.len().min(obs.k())));
    }
    let needed = (kk * m) as u64 * (r * delays.len()) as u64 * std::mem::size_of::<c64>() as u64;
    if needed > budget_bytes {
        return Err(Error::MemoryBudgetExceeded { needed, budget: budget_bytes });
    }
    let base: Vec<CMatrix> = (0..kk).map(|k| bundle.base_dictionary(k)).collect();
    let mut d = CMatrix::zeros(kk * m, r * delays.len());
    for (t, &tau) in delays.iter().enumerate() {
        for (k, dk) in base.iter().enumerate() {
            let ph = cis(-2.0 * PI * freqs[k] * tau);
            d.view_mut((k * m, t * r), (m, r)).copy_from(&(dk * ph));
        }
    }
    let y = CVector::from_iterator(kk * m, obs.y.iter().flat_map(|v| v.iter().copied()));
    let mut out = omp(&d, &y, l_max, tol)?;
    out.angles = out.support.iter().map(|&c| bundle.pair_angles(c % r)).collect();
    out.delays = out.support.iter().map(|&c| delays[c / r]).collect();
    Ok(out)
}

/// Parametric paths from an angular-delay OMP result.
pub fn angular_delay_paths(res: &OmpResult) -> Vec<PathEstimate> {
    res.support
        .iter()
        .enumerate()
        .map(|(a, _)| PathEstimate {
            gain: res.coefficients[a],
            delay: res.delays[a],
            aod: res.angles[a].0,
            aoa: res.angles[a].1,
        })
        .collect()
}

/// Parametric paths from independent per-band angular results: atoms are
/// grouped by dictionary column, missing bands contribute a zero coefficient,
/// angles are averaged over the bands that found the atom, and each group's
/// coefficient row goes through the same delay/gain search as the proposed
/// estimator.
pub fn per_band_paths(per_band: &[OmpResult], freqs: &[f64], window: f64, delay_grid: usize) -> Result<Vec<PathEstimate>> {
    if per_band.len() != freqs.len() {
        return Err(shape_err("per-band results", freqs.len(), per_band.len()));
    }
    let kk = per_band.len();
    let mut groups: BTreeMap<usize, (Vec<c64>, f64, f64, usize)> = BTreeMap::new();
    for (k, res) in per_band.iter().enumerate() {
        for (a, &col) in res.support.iter().enumerate() {
            let e = groups.entry(col).or_insert_with(|| (vec![ZERO; kk], 0.0, 0.0, 0));
            e.0[k] = res.coefficients[a];
            e.1 += res.angles[a].0;
            e.2 += res.angles[a].1;
            e.3 += 1;
        }
    }
    groups
        .into_values()
        .map(|(row, sp, st, n)| {
            let (gain, delay) = estimate_delay_gain(&row, freqs, window, delay_grid)?;
            Ok(PathEstimate {
                gain,
                delay,
                aod: sp / n as f64,
                aoa: st / n as f64,
            })
        })
        .collect()
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Greedy minimum-squared-error assignment of estimates to truth. Returns,
/// per true pair, the index of the matched estimate.
pub fn greedy_assignment(estimates: &[(f64, f64)], truth: &[(f64, f64)]) -> Vec<Option<usize>> {
    let mut cand: Vec<(f64, usize, usize)> = estimates
        .iter()
        .enumerate()
        .flat_map(|(e, &ea)| truth.iter().enumerate().map(move |(t, &ta)| (sq_dist(ea, ta), e, t)))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; estimates.len()];
    let mut out = vec![None; truth.len()];
    for (_, e, t) in cand {
        if !used[e] && out[t].is_none() {
            used[e] = true;
            out[t] = Some(e);
        }
    }
    out
}

/// Per band, greedily pair estimates with the true (AOD, AOA) pairs, discard
/// unmatched estimates, then average each true path's matches across bands.
/// `None` marks a true path no band matched.
pub fn pair_and_average(per_band: &[Vec<(f64, f64)>], truth: &[(f64, f64)]) -> Result<Vec<Option<(f64, f64)>>> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("pairing needs at least one true path".into()));
    }
    let mut acc = vec![(0.0, 0.0, 0usize); truth.len()];
    for est in per_band {
        for (t, m) in greedy_assignment(est, truth).into_iter().enumerate() {
            if let Some(e) = m {
                acc[t].0 += est[e].0;
                acc[t].1 += est[e].1;
                acc[t].2 += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(a, b, n)| (n > 0).then(|| (a / n as f64, b / n as f64)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_tensor, Path, PathSet, SystemConfig};
    use crate::dictionary::{build_bundle, build_grids};
    use crate::frontend::{make_beamformers, make_pilots, synthesize_received, whiten, BeamformerMode};
    use crate::linalg::ONE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> CMatrix {
        CMatrix::from_fn(r, c, |_, _| c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn setup(paths: Vec<Path>, grid: usize) -> (SystemConfig, DictionaryBundle, WhitenedObservation) {
        let mut cfg = SystemConfig::desk();
        cfg.training_indices = vec![8, 24, 40, 56];
        let bf = make_beamformers(&cfg, BeamformerMode::Random, 5).unwrap();
        let pilots = make_pilots(&cfg, 6);
        let h = channel_tensor(&PathSet::new(paths).unwrap(), &cfg).unwrap();
        let w = whiten(&synthesize_received(&h, &cfg, &bf, &pilots, 0.0, 0).unwrap(), &bf).unwrap();
        let b = build_bundle(&cfg, build_grids(grid, grid).unwrap(), &bf, &w, &pilots).unwrap();
        (cfg, b, w)
    }

    #[test]
    fn one_sparse_recovered_in_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_matrix(&mut rng, 10, 30);
        let g = c64::new(0.7, -0.4);
        let y = d.column(17) * g;
        let r = omp(&d, &y, 5, 0.0).unwrap();
        assert_eq!(r.support, vec![17]);
        assert!((r.coefficients[0] - g).norm() < 1e-12);
    }

    #[test]
    fn residual_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let d = random_matrix(&mut rng, 12, 40);
            let y = CVector::from_fn(12, |_, _| c64::new(rng.random_range(-1.0..1.0), 0.3));
            let r = omp(&d, &y, 8, 0.0).unwrap();
            assert!(r.residual_norms.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(r.residual_norms.len(), r.support.len() + 1);
        }
    }

    #[test]
    fn two_sparse_matches_exhaustive_subset_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let d = random_matrix(&mut rng, 8, 6);
            let mut x = CVector::zeros(6);
            let a = rng.random_range(0..6);
            let b = (a + rng.random_range(1..6)) % 6;
            x[a] = c64::new(1.0 + rng.random::<f64>(), 0.2);
            x[b] = c64::new(-0.5, 1.0 + rng.random::<f64>());
            let y = &d * &x;
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..6 {
                for j in i + 1..6 {
                    let c = least_squares(&d, &[i, j], &y).unwrap();
                    let n = residual(&d, &[i, j], &c, &y).norm();
                    if n < best.0 {
                        best = (n, i, j);
                    }
                }
            }
            let r = omp(&d, &y, 2, 0.0).unwrap();
            let mut s = r.support.clone();
            s.sort();
            assert_eq!(s, vec![best.1, best.2]);
            assert!((r.final_residual() - best.0).abs() < 1e-9);
        }
    }

    #[test]
    fn l_max_zero_is_rejected() {
        assert!(omp(&CMatrix::identity(2, 2), &CVector::zeros(2), 0, 0.0).is_err());
    }

    #[test]
    fn on_grid_angular_recovery() {
        let g = build_grids(32, 32).unwrap();
        let (_, b, w) = setup(vec![Path { gain: ONE, delay: 0.0, aod: g.phi[5], aoa: g.theta[20] }], 32);
        for k in 0..b.k() {
            let r = omp_angular(&w.y[k], &b, k, 4, 1e-9).unwrap();
            assert_eq!(r.angles[0], (g.phi[5], g.theta[20]));
            assert_eq!(r.support.len(), 1);
        }
    }

    #[test]
    fn offgrid_keeps_on_grid_truth() {
        let g = build_grids(16, 16).unwrap();
        let (_, b, w) = setup(vec![Path { gain: ONE, delay: 0.0, aod: g.phi[3], aoa: g.theta[9] }], 16);
        let r = omp_offgrid_angular(&w.y[1], &b, 1, 1, 0.0, 10).unwrap();
        assert!((r.angles[0].0 - g.phi[3]).abs() < 1e-6);
        assert!((r.angles[0].1 - g.theta[9]).abs() < 1e-6);
    }

    #[test]
    fn offgrid_beats_on_grid_for_quarter_spacing_shift() {
        let g = build_grids(16, 16).unwrap();
        let truth = (g.phi[6] + 0.25 / 16.0, g.theta[10] - 0.25 / 16.0);
        let (_, b, w) = setup(vec![Path { gain: ONE, delay: 0.0, aod: truth.0, aoa: truth.1 }], 16);
        let on = omp_angular(&w.y[0], &b, 0, 1, 0.0).unwrap();
        let off = omp_offgrid_angular(&w.y[0], &b, 0, 1, 0.0, 20).unwrap();
        let e_on = sq_dist(on.angles[0], truth);
        let e_off = sq_dist(off.angles[0], truth);
        assert!(e_off < e_on, "{e_off} vs {e_on}");
        assert!(off.final_residual() <= on.final_residual());
    }

    #[test]
    fn angular_delay_single_atom_and_budget() {
        let g = build_grids(8, 8).unwrap();
        let mut cfg_probe = SystemConfig::desk();
        cfg_probe.training_indices = vec![8, 24, 40, 56];
        let window = cfg_probe.delay_window();
        let taus = delay_grid(10, window);
        let gain = c64::new(0.4, 0.9);
        let path = Path { gain: ONE, delay: taus[3], aod: g.phi[2], aoa: g.theta[6] };
        let alpha = gain * cis(2.0 * PI * cfg_probe.f_c * path.delay);
        let (cfg, b, w) = setup(vec![Path { gain: alpha, ..path }], 8);
        let freqs = cfg.training_freqs();
        let r = omp_angular_delay(&w, &b, &freqs, &taus, 3, 1e-9, 1 << 30).unwrap();
        assert_eq!(r.support, vec![3 * 64 + 2 * 8 + 6]);
        assert!((r.coefficients[0] - gain).norm() < 1e-9);
        assert_eq!(r.delays[0], taus[3]);
        let needed = (4 * b.obs_len() * 64 * 10 * 16) as u64;
        assert!(matches!(
            omp_angular_delay(&w, &b, &freqs, &taus, 3, 0.0, needed - 1),
            Err(Error::MemoryBudgetExceeded { .. })
        ));
        // first pick equals the brute-force best normalized correlation
        let y = CVector::from_iterator(4 * b.obs_len(), w.y.iter().flat_map(|v| v.iter().copied()));
        let mut best = (0.0, 0);
        for t in 0..taus.len() {
            for c in 0..b.n_cols() {
                let atom = CVector::from_iterator(
                    4 * b.obs_len(),
                    (0..4).flat_map(|k| {
                        let ph = cis(-2.0 * PI * freqs[k] * taus[t]);
                        b.base_dictionary(k).column(c).iter().map(move |z| z * ph).collect::<Vec<_>>()
                    }),
                );
                let v = atom.dotc(&y).norm() / atom.norm();
                if v > best.0 {
                    best = (v, t * 64 + c);
                }
            }
        }
        assert_eq!(r.support[0], best.1);
    }

    #[test]
    fn pairing_exact_and_missing_band() {
        let truth = vec![(0.1, 0.2), (-0.3, 0.05)];
        let out = pair_and_average(&[truth.clone(), truth.clone()], &truth).unwrap();
        assert_eq!(out, vec![Some(truth[0]), Some(truth[1])]);
        let out = pair_and_average(&[vec![(0.11, 0.2), (-0.3, 0.05)], vec![(0.13, 0.2)]], &truth).unwrap();
        assert!((out[0].unwrap().0 - 0.12).abs() < 1e-12);
        assert_eq!(out[1], Some((-0.3, 0.05)));
        assert_eq!(pair_and_average(&[vec![]], &truth).unwrap(), vec![None, None]);
        assert!(pair_and_average(&[], &[]).is_err());
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for i in 0..n {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn greedy_matches_exhaustive_assignment_on_four_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let perms = permutations(4);
        for _ in 0..50 {
            let truth: Vec<(f64, f64)> = (0..4).map(|_| (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect();
            let perm = &perms[rng.random_range(0..perms.len())];
            let est: Vec<(f64, f64)> = perm
                .iter()
                .map(|&t| (truth[t].0 + rng.random_range(-1e-3..1e-3), truth[t].1 + rng.random_range(-1e-3..1e-3)))
                .collect();
            let best = perms
                .iter()
                .min_by(|a, b| {
                    let c = |p: &Vec<usize>| (0..4).map(|t| sq_dist(est[p[t]], truth[t])).sum::<f64>();
                    c(a).total_cmp(&c(b))
                })
                .unwrap();
            let greedy = greedy_assignment(&est, &truth);
            for t in 0..4 {
                assert_eq!(greedy[t], Some(best[t]));
            }
        }
    }
}
