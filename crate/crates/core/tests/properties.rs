mod common;

use common::*;
use ldcap_core::geometry::BoundingBox;
use ldcap_core::grid::numerical_rank;
use ldcap_core::injections::{rate_functional, SamplePath};
use ldcap_core::region::{lb_bound, noise_margin, Slice2D, SliceSpec};
use ldcap_core::thermal::xi_map;
use ldcap_core::{CapacityRegion, RegionKind};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const P: f64 = 1e-4;

fn region(
    ctx: &ldcap_core::PsiContext,
    kind: RegionKind,
    eps: f64,
    tau0: f64,
) -> Option<CapacityRegion> {
    CapacityRegion::build(ctx, kind, eps, P, Some(tau0)).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn structural_ranks(seed in any::<u64>(), nodes in 2usize..=20) {
        let case = RandomCase::seeded(seed, nodes, 2 * nodes, 4, false);
        let flow = case.flow();
        let n = nodes - 1;
        prop_assert_eq!(numerical_rank(flow.laplacian()), n);
        prop_assert_eq!(numerical_rank(flow.transfer()), n);
        prop_assert_eq!(numerical_rank(&flow.stochastic_block()), case.stochastic);
        let ones = DVector::from_element(nodes, 1.0);
        prop_assert!((flow.incidence() * ones).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn power_balance(seed in any::<u64>(), nodes in 2usize..=20) {
        let case = RandomCase::seeded(seed, nodes, 2 * nodes, 4, false);
        let flow = case.flow();
        let theta = DVector::from_fn(nodes, |i, _| if i == 0 { 0.0 } else { ((seed as f64) * 0.37 + i as f64).sin() });
        let s = flow.laplacian() * theta;
        let scale = s.amax().max(1.0);
        prop_assert!(s.sum().abs() <= 1e-12 * scale);
    }

    #[test]
    fn transfer_matches_independent_solve(seed in any::<u64>(), nodes in 2usize..=20) {
        let case = RandomCase::seeded(seed, nodes, 2 * nodes, 4, false);
        let flow = case.flow();
        let n = nodes - 1;
        // reduced Laplacian assembled from the edge list, solved by Cholesky
        let mut reduced = DMatrix::zeros(n, n);
        for &(i, j, b) in &case.edges {
            for (a, c, sign) in [(i, i, 1.0), (j, j, 1.0), (i, j, -1.0), (j, i, -1.0)] {
                if a > 0 && c > 0 {
                    reduced[(a - 1, c - 1)] += sign * b;
                }
            }
        }
        let injections = DVector::from_fn(n, |k, _| ((seed % 1000) as f64 * 0.11 + k as f64 * 1.3).cos());
        let theta = reduced.cholesky().expect("reduced Laplacian is positive definite").solve(&injections);
        let angle = |node: usize| if node == 0 { 0.0 } else { theta[node - 1] };
        let mut full = DVector::zeros(nodes);
        full.rows_mut(1, n).copy_from(&injections);
        full[0] = -injections.sum();
        let currents = flow.branch_currents(&full);
        for (l, &(i, j, b)) in case.edges.iter().enumerate() {
            let expected = b * (angle(i) - angle(j));
            prop_assert!((currents[l] - expected).abs() <= 1e-10 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn psi_is_monotone_away_from_the_operating_point(seed in any::<u64>()) {
        let case = RandomCase::seeded(seed, 5, 7, 3, false);
        let ctx = case.ctx(0.1);
        for l in ctx.active_lines() {
            let nu = ctx.nu(l);
            let mut prev = 0.0;
            for k in 0..40 {
                let a = nu + k as f64 * 0.05;
                let psi = ctx.psi(l, a).unwrap();
                prop_assert!(psi >= prev);
                prev = psi;
            }
            prev = 0.0;
            for k in 0..40 {
                let a = nu - k as f64 * 0.05;
                let psi = ctx.psi(l, a).unwrap();
                prop_assert!(psi >= prev);
                prev = psi;
            }
        }
    }

    #[test]
    fn current_rate_bounds_temperature_rates(seed in any::<u64>(), tau0 in 0.0f64..3.0) {
        let case = RandomCase::seeded(seed, 6, 9, 3, true);
        let ctx = case.ctx(0.1);
        let current = ctx.current_decay_rate().unwrap().value;
        prop_assert!(current <= ctx.lb_decay_rate().unwrap().value);
        prop_assert!(current <= ctx.taylor_decay_rate(tau0).unwrap());
    }

    #[test]
    fn rates_do_not_depend_on_line_orientation(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let case = RandomCase::seeded(seed, 6, 9, 3, true);
        let ctx = case.ctx(0.1);
        let line = pick.index(case.edges.len());
        let flipped = ldcap_core::PsiContext::at_mean(ctx.flow().with_flipped_line(line), case.ou(0.1), &case.mu_d).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        prop_assert!(close(ctx.current_decay_rate().unwrap().value, flipped.current_decay_rate().unwrap().value));
        prop_assert!(close(ctx.lb_decay_rate().unwrap().value, flipped.lb_decay_rate().unwrap().value));
        prop_assert!(close(ctx.taylor_decay_rate(0.7).unwrap(), flipped.taylor_decay_rate(0.7).unwrap()));
        if ctx.is_active(line) {
            prop_assert!(close(ctx.psi(line, 1.0).unwrap(), flipped.psi(line, -1.0).unwrap()));
        }
    }

    #[test]
    fn current_rate_shrinks_with_the_horizon(seed in any::<u64>()) {
        let case = RandomCase::seeded(seed, 5, 7, 3, false);
        let ctx = case.ctx(0.1);
        let mut prev = f64::INFINITY;
        for k in 1..=20 {
            let t = 0.1 * k as f64;
            let at_t = ctx.with_model(ctx.ou().with_horizon(t).unwrap()).unwrap();
            let rate = at_t.current_decay_rate().unwrap().value;
            prop_assert!(rate <= prev * (1.0 + 1e-12));
            prev = rate;
        }
    }

    #[test]
    fn noise_margin_decreases_with_mean_reversion(seed in any::<u64>()) {
        let case = RandomCase::seeded(seed, 5, 7, 3, true);
        let ctx = case.ctx(0.1);
        let faster: Vec<f64> = case.gamma.iter().map(|g| g * 1.5).collect();
        let ou = ldcap_core::OuModel::new(faster, case.vol.clone(), case.mu.clone(), 0.1, case.horizon).unwrap();
        let fast = ctx.with_model(ou).unwrap();
        for l in ctx.active_lines() {
            let slow_eta = noise_margin(ctx.line_variance(l), 0.1, P);
            let fast_eta = noise_margin(fast.line_variance(l), 0.1, P);
            prop_assert!(fast_eta < slow_eta);
        }
    }

    #[test]
    fn right_shifted_paths_are_cheaper(
        increments in prop::collection::vec(-0.3f64..0.3, 10..60),
        gamma in 0.1f64..2.0,
        vol in 0.2f64..2.0,
        mean in -0.5f64..0.5,
    ) {
        // a discrete path that reaches the level early, then keeps moving
        let ou = ldcap_core::OuModel::new(vec![gamma], vec![vol], vec![mean], 0.1, 1.0).unwrap();
        let n = increments.len();
        let dt = 1.0 / n as f64;
        let mut values = vec![mean];
        for d in &increments {
            values.push(values.last().unwrap() + d);
        }
        let hit = n / 2;
        let shift = n - hit;
        let shifted: Vec<f64> = (0..=n)
            .map(|k| if k < shift { mean } else { values[k - shift] })
            .collect();
        let as_path = |v: &[f64]| SamplePath {
            times: (0..=n).map(|k| k as f64 * dt).collect(),
            values: v.iter().map(|&x| DVector::from_element(1, x)).collect(),
        };
        let original = rate_functional(&as_path(&values), &ou);
        let moved = rate_functional(&as_path(&shifted), &ou);
        prop_assert_eq!(shifted[n], values[hit]);
        prop_assert!(moved <= original + 1e-12);
    }

    #[test]
    fn temperature_is_monotone_in_the_current(
        currents in prop::collection::vec((-2.0f64..2.0, 0.0f64..1.0), 2..80),
        tau in 0.01f64..3.0,
    ) {
        let n = currents.len() - 1;
        let grid = SamplePath::uniform_grid(1.0, n);
        let low = SamplePath { times: grid.clone(), values: currents.iter().map(|&(y, s)| DVector::from_element(1, y * s)).collect() };
        let high = SamplePath { times: grid, values: currents.iter().map(|&(y, _)| DVector::from_element(1, y)).collect() };
        let theta0 = [0.3];
        let a = xi_map(&low, &[tau], Some(&theta0)).unwrap();
        let b = xi_map(&high, &[tau], Some(&theta0)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(x[0] >= 0.0);
            prop_assert!(x[0] <= y[0] + 1e-15);
        }
    }

    #[test]
    fn lb_limit_lies_between_current_limit_and_one(eta in 1e-3f64..0.9, tau in 0.01f64..5.0, ratio in 0.05f64..20.0) {
        // the gap to 1 − η is about η e^{−T/τ}, so T/τ stays where it is representable
        let horizon = ratio * tau;
        let delta = lb_bound(eta, tau, horizon);
        prop_assume!(delta.is_finite() && delta > 0.0);
        prop_assert!(delta > 1.0 - eta);
        prop_assert!(delta < 1.0);
    }

    #[test]
    fn region_chain(seed in any::<u64>(), eps in 0.01f64..0.3, tau0 in 0.05f64..2.0) {
        let case = RandomCase::seeded(seed, 6, 9, 3, true);
        let ctx = case.ctx(eps);
        let current = region(&ctx, RegionKind::Current, eps, tau0);
        prop_assume!(current.is_some());
        let current = current.unwrap();
        let lb = region(&ctx, RegionKind::TemperatureLb, eps, tau0).unwrap();
        let tl = region(&ctx, RegionKind::TemperatureTaylor, eps, tau0).unwrap();
        for l in 0..current.bounds.len() {
            prop_assert!(current.bounds[l] <= lb.bounds[l]);
            prop_assert!(current.bounds[l] <= tl.bounds[l]);
            prop_assert!(lb.bounds[l] <= 1.0 && tl.bounds[l] <= 1.0);
        }
    }

    #[test]
    fn current_membership_matches_rate_threshold(seed in any::<u64>(), eps in 0.01f64..0.3, shift in prop::collection::vec(-1.0f64..1.0, 4)) {
        let case = RandomCase::seeded(seed, 6, 9, 3, false);
        let base = case.ctx(eps);
        let Some(region) = region(&base, RegionKind::Current, eps, 1.0) else { return Ok(()) };
        let mu: Vec<f64> = case.mu.iter().zip(&shift).map(|(m, s)| m + 0.3 * s).collect();
        let Ok(ctx) = base.with_injections(&mu, &case.mu_d) else { return Ok(()) };
        let threshold = eps * (1.0 / P).ln();
        let rate = ctx.current_decay_rate().unwrap().value;
        prop_assume!((rate - threshold).abs() > 1e-9 * threshold);
        let inside = region.contains(ctx.flow(), &mu, &case.mu_d).unwrap();
        prop_assert_eq!(inside, rate > threshold);
    }

    #[test]
    fn slices_are_convex_and_nested(seed in any::<u64>(), eps in 0.01f64..0.2, tau0 in 0.05f64..2.0) {
        let case = RandomCase::seeded(seed, 6, 9, 2, true);
        let ctx = case.ctx(eps);
        let m = case.stochastic;
        let mut fixed = case.mu.clone();
        fixed.extend(&case.mu_d);
        let spec = SliceSpec {
            free: (m + 1, m + 2),
            fixed: fixed.clone(),
            bbox: BoundingBox::new(fixed[m] - 4.0, fixed[m] + 4.0, fixed[m + 1] - 4.0, fixed[m + 1] + 4.0).unwrap(),
        };
        let mut areas = Vec::new();
        for kind in [RegionKind::Current, RegionKind::TemperatureLb, RegionKind::TemperatureTaylor, RegionKind::Deterministic] {
            let Some(region) = region(&ctx, kind, eps, tau0) else { return Ok(()) };
            let Ok(slice) = Slice2D::new(&region, ctx.flow(), &spec) else { return Ok(()) };
            prop_assert!(slice.polygon.is_convex());
            prop_assert!(slice.polygon.signed_area() >= 0.0);
            areas.push(slice.polygon.area());
        }
        let tol = 1e-9 * areas[3].max(1.0);
        prop_assert!(areas[0] <= areas[1] + tol);
        prop_assert!(areas[0] <= areas[2] + tol);
        prop_assert!(areas[1] <= areas[3] + tol);
        prop_assert!(areas[2] <= areas[3] + tol);
    }

    #[test]
    fn regions_are_convex_in_deterministic_injections(seed in any::<u64>(), eps in 0.01f64..0.2, a in prop::collection::vec(-1.5f64..1.5, 5), b in prop::collection::vec(-1.5f64..1.5, 5)) {
        let case = RandomCase::seeded(seed, 6, 9, 2, true);
        let ctx = case.ctx(eps);
        let Some(region) = region(&ctx, RegionKind::TemperatureLb, eps, 1.0) else { return Ok(()) };
        let k = case.mu_d.len();
        let (a, b) = (&a[..k], &b[..k]);
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let flow = ctx.flow();
        if region.contains(flow, &case.mu, a).unwrap() && region.contains(flow, &case.mu, b).unwrap() {
            prop_assert!(region.contains(flow, &case.mu, &mid).unwrap());
        }
    }
}
