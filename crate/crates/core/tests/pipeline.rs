use nalgebra::{DMatrix, Matrix3, SymmetricEigen};

use thzloc_core::channel::{mean_signal, noise_variance, path_gain, BeamformerSet, PathSignal, C64};
use thzloc_core::coverage::{cell_seed, run_trials, trial_pose, CcdfCurve};
use thzloc_core::crb::{
    bound_from_information, constrained_crb, fim_channel_path, fim_state, pose_information, FisherSpace, STATE_DIM,
};
use thzloc_core::geometry::{forward_model, visible_paths};
use thzloc_core::scenario::GainModel;
use thzloc_core::{evaluate_pose, Classification, EulerAngles, FisherMatrix, Metric, PlanarArraySpec, Pose, Scenario};

const FACING_UP: EulerAngles = EulerAngles {
    alpha: 0.0,
    beta: -90.0,
    gamma: 45.0,
};

fn signal_samples(
    scenario: &Scenario,
    p: &nalgebra::Vector3<f64>,
    r: &Matrix3<f64>,
    rho: f64,
    seed: u64,
    pairs: &[(usize, usize)],
    gains: &[C64],
) -> Vec<C64> {
    let mut out = Vec::new();
    for (&(m, n), gain) in pairs.iter().zip(gains) {
        let bs = &scenario.base_stations[m];
        let sa = &scenario.subarrays[n];
        let eta = forward_model(
            &bs.pose.position,
            bs.pose.rotation.matrix(),
            p,
            r,
            &sa.offset,
            sa.rotation.matrix(),
            rho,
        )
        .unwrap();
        let beamformers = BeamformerSet::draw(
            seed,
            m,
            n,
            scenario.signal.num_transmissions,
            scenario.subarray_offsets[n].len(),
            scenario.bs_offsets[m].len(),
        );
        out.extend(mean_signal(&PathSignal {
            eta,
            gain: *gain,
            signal: &scenario.signal,
            ue_offsets: &scenario.subarray_offsets[n],
            bs_offsets: &scenario.bs_offsets[m],
            beamformers: &beamformers,
        }));
    }
    out
}

/// The state FIM built through `Tᵀ I(η) T` agrees with one obtained by
/// differencing the mean signal directly in state space. Path gains are held
/// at their nominal values, as in the model.
#[test]
fn state_fim_matches_direct_finite_differences() {
    let scenario = Scenario::preset("cuboidal-4bs").unwrap();
    for trial in 0..5 {
        let ue = trial_pose(&scenario.distribution, 17, trial);
        let seed = 1000 + trial;
        let info = pose_information(&scenario, &ue, seed).unwrap();
        let Some(fim) = info.fim_state.as_ref() else { continue };
        let pairs = info.visibility.pairs.clone();
        let gains: Vec<C64> = pairs
            .iter()
            .map(|&(m, n)| {
                let sa = &scenario.subarrays[n];
                let d =
                    (ue.position + ue.rotation.matrix() * sa.offset - scenario.base_stations[m].pose.position).norm();
                path_gain(d, scenario.signal.carrier_hz).unwrap()
            })
            .collect();
        let mut columns = Vec::with_capacity(STATE_DIM);
        for col in 0..STATE_DIM {
            let h = match col {
                0..=2 => 1e-6,
                3 => 1e-13,
                _ => 1e-7,
            };
            let eval = |t: f64| {
                let mut p = ue.position;
                let mut r = *ue.rotation.matrix();
                let mut rho = scenario.clock_bias_s;
                match col {
                    0..=2 => p[col] += t,
                    3 => rho += t,
                    _ => r[((col - 4) % 3, (col - 4) / 3)] += t,
                }
                signal_samples(&scenario, &p, &r, rho, seed, &pairs, &gains)
            };
            let (plus, minus) = (eval(h), eval(-h));
            columns.push(
                plus.iter()
                    .zip(&minus)
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect::<Vec<C64>>(),
            );
        }
        let scale = 2.0 / noise_variance(&scenario.signal);
        let direct = DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| {
            scale
                * columns[i]
                    .iter()
                    .zip(&columns[j])
                    .map(|(a, b)| (a.conj() * b).re)
                    .sum::<f64>()
        });
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                let norm = (fim.matrix[(i, i)] * fim.matrix[(j, j)]).sqrt();
                let err = (direct[(i, j)] - fim.matrix[(i, j)]).abs() / norm;
                assert!(err < 1e-4, "trial {trial} entry ({i},{j}): {err:e}");
            }
        }
    }
}

#[test]
fn constrained_crb_has_rank_seven() {
    let scenario = Scenario::preset("cuboidal-2bs").unwrap();
    let ue = Pose::from_euler([0.0, 0.0, 0.0], FACING_UP);
    let info = pose_information(&scenario, &ue, 3).unwrap();
    let crb = constrained_crb(info.fim_state.as_ref().unwrap(), &info.basis).unwrap();
    let sv = crb.matrix.clone().svd(false, false).singular_values;
    // Scale out the unit disparity before counting.
    let d = DMatrix::from_diagonal(&crb.matrix.diagonal().map(|x| 1.0 / x.sqrt().max(1e-300)));
    let normalized = &d * &crb.matrix * &d;
    let nsv = normalized.svd(false, false).singular_values;
    let rank = nsv.iter().filter(|&&s| s > nsv.max() * 1e-9).count();
    assert_eq!(rank, 7, "{nsv:?} (raw {sv:?})");
}

#[test]
fn adding_a_path_tightens_the_bound() {
    let scenario = Scenario::preset("cuboidal-4bs").unwrap();
    let mut compared = 0;
    for trial in 0..20 {
        let ue = trial_pose(&scenario.distribution, 23, trial);
        let info = pose_information(&scenario, &ue, trial).unwrap();
        let (Some(fim_eta), Some(t)) = (&info.fim_eta, &info.jacobian) else {
            continue;
        };
        let d = info.visibility.len();
        if d < 3 {
            continue;
        }
        // drop the last path by zeroing its block
        let mut reduced = fim_eta.matrix.clone();
        reduced.view_mut((5 * (d - 1), 0), (5, 5 * d)).fill(0.0);
        reduced.view_mut((0, 5 * (d - 1)), (5 * d, 5)).fill(0.0);
        let fewer = fim_state(&FisherMatrix::new(reduced, FisherSpace::Channel), t).unwrap();
        let (Ok(a), Ok(b)) = (
            constrained_crb(&fewer, &info.basis),
            constrained_crb(info.fim_state.as_ref().unwrap(), &info.basis),
        ) else {
            continue;
        };
        let diff = &a.matrix - &b.matrix;
        let min = SymmetricEigen::new((&diff + diff.transpose()) * 0.5).eigenvalues.min();
        assert!(min >= -1e-9, "trial {trial}: {min:e}");
        compared += 1;
    }
    assert!(compared >= 10);
}

#[test]
fn doubling_transmissions_doubles_information_on_average() {
    let mut scenario = Scenario::preset("cuboidal-2bs").unwrap();
    scenario.signal.num_transmissions = 25;
    let doubled = {
        let mut s = scenario.clone();
        s.signal.num_transmissions = 50;
        s
    };
    let m = 0;
    let n = 0;
    let ue = Pose::from_euler([1.0, -2.0, 0.5], FACING_UP);
    let bs = &scenario.base_stations[m];
    let sa = &scenario.subarrays[n];
    let eta = forward_model(
        &bs.pose.position,
        bs.pose.rotation.matrix(),
        &ue.position,
        ue.rotation.matrix(),
        &sa.offset,
        sa.rotation.matrix(),
        0.0,
    )
    .unwrap();
    // Per-draw spread of an entry is about √(3/G); 2000 draws put the 5%
    // band near four standard deviations of the ratio. Seeds are disjoint so
    // the doubled run uses fresh draws.
    const DRAWS: u64 = 2000;
    let average = |s: &Scenario, first_seed: u64| {
        let mut acc = nalgebra::DMatrix::<f64>::zeros(5, 5);
        for trial in first_seed..first_seed + DRAWS {
            let beamformers = BeamformerSet::draw(
                trial,
                m,
                n,
                s.signal.num_transmissions,
                s.subarray_offsets[n].len(),
                s.bs_offsets[m].len(),
            );
            let path = PathSignal {
                eta,
                gain: C64::new(1e-5, 0.0),
                signal: &s.signal,
                ue_offsets: &s.subarray_offsets[n],
                bs_offsets: &s.bs_offsets[m],
                beamformers: &beamformers,
            };
            acc += fim_channel_path(&path, GainModel::Known).matrix;
        }
        acc / DRAWS as f64
    };
    let (single, double) = (average(&scenario, 0), average(&doubled, DRAWS));
    for i in 0..5 {
        let ratio = double[(i, i)] / single[(i, i)];
        assert!((ratio - 2.0).abs() < 0.1, "diagonal {i}: ratio {ratio}");
    }
}

#[test]
fn single_element_panels_carry_only_delay_information() {
    let mut cfg = thzloc_core::preset("cuboidal-2bs").unwrap();
    for b in &mut cfg.bs {
        b.panel = PlanarArraySpec::new(1, 1);
    }
    for s in &mut cfg.ue.subarrays {
        s.panel = PlanarArraySpec::new(1, 1);
    }
    let scenario = cfg.build().unwrap();
    let ue = Pose::from_euler([0.0, 0.0, 0.0], FACING_UP);
    let info = pose_information(&scenario, &ue, 5).unwrap();
    let fim = info.fim_eta.unwrap().matrix;
    for p in 0..info.visibility.len() {
        for i in 0..5 {
            for j in 0..5 {
                let v = fim[(5 * p + i, 5 * p + j)];
                if i == 4 && j == 4 {
                    assert!(v > 0.0);
                } else {
                    assert_eq!(v, 0.0, "path {p} entry ({i},{j})");
                }
            }
        }
    }
}

#[test]
fn bs_sees_two_subarrays_under_the_bs_diagonal() {
    let scenario = Scenario::preset("cuboidal-2bs").unwrap();
    for k in -9..=9 {
        let ue = Pose::from_euler([k as f64, k as f64, 0.0], FACING_UP);
        let vis = visible_paths(&scenario.bs_poses(), &ue, &scenario.subarrays);
        for m in 0..2 {
            let seen = vis.pairs.iter().filter(|(b, _)| *b == m).count();
            assert_eq!(seen, 2, "position ({k},{k}), BS {m}: {:?}", vis.pairs);
        }
        // one step off the line exposes a third face to each BS
        let off = Pose::from_euler([k as f64 + 1.0, k as f64 - 1.0, 0.0], FACING_UP);
        let vis = visible_paths(&scenario.bs_poses(), &off, &scenario.subarrays);
        assert_eq!(vis.len(), 6);
    }
}

#[test]
fn cuboidal_bound_is_locally_elevated_under_the_bs_diagonal() {
    let scenario = Scenario::preset("cuboidal-2bs").unwrap();
    let peb = |x: f64, y: f64| {
        evaluate_pose(&scenario, &Pose::from_euler([x, y, 0.0], FACING_UP), 9)
            .unwrap()
            .peb_m
            .unwrap()
    };
    for k in [-6.0, -3.0, 0.0, 3.0, 6.0] {
        let on = peb(k, k);
        assert!(on > peb(k + 1.0, k - 1.0) && on > peb(k - 1.0, k + 1.0), "k = {k}");
    }
}

#[test]
fn planar_array_is_slightly_better_between_the_bss() {
    let planar = Scenario::preset("planar-2bs").unwrap();
    let cuboid = Scenario::preset("cuboidal-2bs").unwrap();
    for (x, y) in [(0.0, 0.0), (1.0, -1.0), (-1.0, 1.0), (2.0, 2.0)] {
        let ue = Pose::from_euler([x, y, 0.0], FACING_UP);
        let p = evaluate_pose(&planar, &ue, 4).unwrap().peb_m.unwrap();
        let c = evaluate_pose(&cuboid, &ue, 4).unwrap().peb_m.unwrap();
        assert!(p < c, "({x}, {y}): planar {p} cuboidal {c}");
    }
}

#[test]
fn planar_panel_facing_down_has_no_link() {
    let scenario = Scenario::preset("planar-2bs").unwrap();
    for gamma in [0.0, 45.0, 90.0, 200.0] {
        let ue = Pose::from_euler([0.0, 0.0, 0.0], EulerAngles::new(0.0, 90.0, gamma));
        let r = evaluate_pose(&scenario, &ue, 0).unwrap();
        assert_eq!(r.classification, Classification::NoLos);
        assert_eq!(r.num_paths, 0);
        assert!(r.peb_m.is_none());
    }
}

#[test]
fn cuboidal_origin_facing_up_regression() {
    let scenario = Scenario::preset("cuboidal-2bs").unwrap();
    let ue = Pose::from_euler([0.0, 0.0, 0.0], FACING_UP);
    let r = evaluate_pose(&scenario, &ue, cell_seed(scenario.seed, 0)).unwrap();
    assert_eq!(r.classification, Classification::Localizable);
    assert_eq!(r.num_paths, 4);
    let (peb, oeb) = (r.peb_m.unwrap(), r.oeb_deg.unwrap());
    assert!((peb - REGRESSION_PEB).abs() < 1e-9 * REGRESSION_PEB, "{peb:?}");
    assert!((oeb - REGRESSION_OEB).abs() < 1e-9 * REGRESSION_OEB, "{oeb:?}");
}

const REGRESSION_PEB: f64 = 1.470_229_259_756_134_4;
const REGRESSION_OEB: f64 = 17.684_598_659_519_537;

#[test]
fn coverage_equals_direct_fraction() {
    let scenario = Scenario::preset("cuboidal-2bs").unwrap();
    let results = run_trials(&scenario, &scenario.distribution, 300, 8).unwrap();
    let bounds: Vec<f64> = results.iter().map(|r| Metric::Peb.value(r)).collect();
    let thresholds = Metric::Peb.default_thresholds();
    let curve = CcdfCurve::from_bounds(&bounds, &thresholds);
    for (i, &xi) in curve.thresholds.iter().enumerate() {
        let covered = bounds.iter().filter(|&&b| b <= xi).count();
        assert_eq!(curve.coverage_at(xi).unwrap(), covered as f64 / bounds.len() as f64);
        assert_eq!(
            curve.exceedance[i],
            (bounds.len() - covered) as f64 / bounds.len() as f64
        );
    }
    // every trial localizable, so the curve reaches zero at the top of the grid
    assert_eq!(curve.outage_fraction, 0.0);
    assert_eq!(*curve.exceedance.last().unwrap(), 0.0);
}

#[test]
fn more_base_stations_never_reduce_coverage() {
    for layout in ["planar", "cuboidal"] {
        let full = Scenario::preset(&format!("{layout}-4bs")).unwrap();
        let thresholds = Metric::Peb.default_thresholds();
        let curves: Vec<CcdfCurve> = (2..=4)
            .map(|count| {
                let s = full.with_base_stations(count);
                let results = run_trials(&s, &s.distribution, 300, 31).unwrap();
                CcdfCurve::from_bounds(
                    &results.iter().map(|r| Metric::Peb.value(r)).collect::<Vec<_>>(),
                    &thresholds,
                )
            })
            .collect();
        for pair in curves.windows(2) {
            for (sub, sup) in pair[0].exceedance.iter().zip(&pair[1].exceedance) {
                assert!(sup <= sub, "{layout}: {sup} > {sub}");
            }
            assert!(pair[1].outage_fraction <= pair[0].outage_fraction);
        }
    }
}

#[test]
fn bound_result_from_information_matches_evaluate_pose() {
    let scenario = Scenario::preset("planar-3bs").unwrap();
    for trial in 0..10 {
        let ue = trial_pose(&scenario.distribution, 2, trial);
        let info = pose_information(&scenario, &ue, trial).unwrap();
        assert_eq!(
            bound_from_information(&info),
            evaluate_pose(&scenario, &ue, trial).unwrap()
        );
    }
}
