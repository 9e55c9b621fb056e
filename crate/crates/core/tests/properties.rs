use std::f64::consts::{FRAC_PI_2, PI, SQRT_2, TAU};
use std::sync::OnceLock;

use aclab_core::boundary::boundary_value;
use aclab_core::identities::{rect_disk_area, square_grid};
use aclab_core::{
    angle_relations, balance_defect, build_boundary, extract_zero_set, fit_ends, perturb_interior, relax, residual,
    sine_identity_defect, solve_profile, BoundarySpec, EndRay, Exec, Field2D, Grid, Potential, Profile1D, SolveConfig,
};
use proptest::prelude::*;

fn profile() -> &'static Profile1D {
    static P: OnceLock<Profile1D> = OnceLock::new();
    P.get_or_init(|| solve_profile(&Potential::quartic(), 16.0, 0.01, 1e-11).unwrap())
}

fn quick() -> ProptestConfig {
    ProptestConfig::with_cases(12)
}

proptest! {
    #[test]
    fn scaled_quartic_beta_scales_with_the_root(scale in 0.25f64..6.0) {
        let p = Potential::scaled_quartic(scale).unwrap();
        let want = scale.sqrt() * 2.0 * SQRT_2 / 3.0;
        prop_assert!((p.beta().unwrap() - want).abs() < 1e-8);
        prop_assert!(p.eval(1, p.t0()).unwrap().abs() < 1e-10);
    }

    #[test]
    fn validated_polynomials_have_the_double_well_sign_pattern(a in 0.0f64..2.0, u in -0.999f64..0.999) {
        // F = (1 - u²)² (1 + a u²) / 4
        let q = [1.0, 0.0, a - 2.0, 0.0, 1.0 - 2.0 * a, 0.0, a];
        let p = Potential::polynomial(q.iter().map(|c| c / 4.0).collect(), 0.0).unwrap();
        prop_assert!(p.df(p.t0()).abs() < 1e-10);
        let d = p.df(u);
        if u < p.t0() - 1e-9 {
            prop_assert!(d > 0.0, "F'({u}) = {d}");
        } else if u > p.t0() + 1e-9 {
            prop_assert!(d < 0.0, "F'({u}) = {d}");
        }
    }

    #[test]
    fn disk_area_is_additive_over_a_split_rectangle(
        x0 in -3.0f64..0.0, w in 0.1f64..3.0, t in 0.0f64..1.0,
        y0 in -3.0f64..0.0, hgt in 0.1f64..3.0, r in 0.1f64..4.0,
    ) {
        let (x1, y1) = (x0 + w, y0 + hgt);
        let xm = x0 + t * w;
        let whole = rect_disk_area(x0, x1, y0, y1, r);
        let parts = rect_disk_area(x0, xm, y0, y1, r) + rect_disk_area(xm, x1, y0, y1, r);
        prop_assert!((whole - parts).abs() < 1e-12);
        prop_assert!(whole >= -1e-15 && whole <= (w * hgt).min(PI * r * r) + 1e-12);
    }

    #[test]
    fn even_four_end_data_is_even(theta in 0.2f64..1.37, x in -9.0f64..9.0, y in -9.0f64..9.0) {
        let spec = BoundarySpec::saddle(theta);
        let u = boundary_value(&spec, profile(), x, y);
        prop_assert!((u - boundary_value(&spec, profile(), x, -y)).abs() < 1e-12);
        prop_assert!((u - boundary_value(&spec, profile(), -x, y)).abs() < 1e-12);
        prop_assert!(u.abs() <= 1.0);
    }

    #[test]
    fn translation_round_trips(theta in 0.2f64..1.37, dx in -2.0f64..2.0, dy in -2.0f64..2.0) {
        let spec = BoundarySpec::Fourend { theta, offsets: [0.3, -0.1, 0.2, 0.0] };
        let back = spec.translated(dx, dy).translated(-dx, -dy);
        for (a, b) in spec.end_lines().iter().zip(back.end_lines()) {
            prop_assert!((a.offset - b.offset).abs() < 1e-12);
        }
        // Planar data is the original data moved.
        let planar = BoundarySpec::Planar { theta, offset: 0.4 };
        let moved = planar.translated(dx, dy);
        let (x, y) = (1.3, -2.1);
        let u = boundary_value(&planar, profile(), x, y);
        let v = boundary_value(&moved, profile(), x + dx, y + dy);
        prop_assert!((u - v).abs() < 1e-12);
    }

    #[test]
    fn balance_is_rotation_invariant_and_bounds_the_sine_identity(
        angles in prop::collection::vec(0.0f64..TAU, 2..8), rot in 0.0f64..TAU,
    ) {
        let ends: Vec<EndRay> = angles.iter().map(|&a| EndRay::from_angle(a)).collect();
        let turned: Vec<EndRay> = angles.iter().map(|&a| EndRay::from_angle(a + rot)).collect();
        let b = balance_defect(&ends).unwrap();
        prop_assert!((b - balance_defect(&turned).unwrap()).abs() < 1e-12);
        let s = sine_identity_defect(&ends);
        prop_assert!(s <= b + 1e-12);
        prop_assert!(s >= b * (PI / 32.0).cos() - 1e-12);
    }

    #[test]
    fn four_symmetric_ends_give_their_contact_angle(theta in 0.05f64..1.5, rot in -0.5f64..0.5) {
        let ends: Vec<EndRay> = [theta, PI - theta, PI + theta, TAU - theta]
            .iter()
            .map(|&a| EndRay::from_angle(a + rot))
            .collect();
        let r = angle_relations(&ends).unwrap();
        prop_assert!((r.contact_angle.unwrap() - 2.0 * theta).abs() < 1e-9);
        prop_assert!(r.defect_12.unwrap() < 1e-9 && r.defect_13.unwrap() < 1e-9);
        prop_assert!(balance_defect(&ends).unwrap() < 1e-12);
    }
}

proptest! {
    #![proptest_config(quick())]

    #[test]
    fn fitted_ends_follow_a_straight_nodal_line(phi in 0.0f64..PI, c in -1.5f64..1.5) {
        let g = square_grid(8.0, 0.1);
        let (s, co) = phi.sin_cos();
        let f = Field2D::from_fn(g, BoundarySpec::Unspecified, "quartic", |x, y| {
            ((-s * x + co * y - c) / SQRT_2).tanh()
        });
        let z = extract_zero_set(&f);
        let ends = fit_ends(&z, [0.0, 0.0], 3.0, 7.5).unwrap();
        prop_assert_eq!(ends.len(), 2);
        for e in &ends {
            let d = (e.theta - phi).rem_euclid(PI);
            prop_assert!(d.min(PI - d) < 1e-3, "{} vs {phi}", e.theta);
            // The fitted line passes within 2h of the nodal points.
            prop_assert!(e.rms <= 2.0 * g.h_max());
            // Point of the fitted line at the outer support radius.
            let outer = e.support[1];
            let n = [-e.direction[1], e.direction[0]];
            let t = (outer * outer - e.offset * e.offset).max(0.0).sqrt();
            let tip = [e.offset * n[0] + t * e.direction[0], e.offset * n[1] + t * e.direction[1]];
            let near = z.points().map(|q| (q[0] - tip[0]).hypot(q[1] - tip[1])).fold(f64::INFINITY, f64::min);
            prop_assert!(near < 2.0 * g.h_max(), "{near}");
        }
    }

    #[test]
    fn planar_residual_is_second_order(phi in 0.0f64..FRAC_PI_2) {
        let p = Potential::quartic();
        let field = |h: f64| {
            let (s, c) = phi.sin_cos();
            Field2D::from_fn(square_grid(4.0, h), BoundarySpec::Unspecified, "quartic", |x, y| {
                ((x * c - y * s) / SQRT_2).tanh()
            })
        };
        let ratio = residual(&field(0.2), &p) / residual(&field(0.1), &p);
        prop_assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn relaxed_fields_stay_in_the_wells(seed in 0u64..1000, amp in 0.0f64..0.8) {
        let p = Potential::quartic();
        let spec = BoundarySpec::saddle(std::f64::consts::FRAC_PI_4);
        let mut init = build_boundary(&spec, square_grid(6.0, 0.2), profile(), p.interface_width(), p.id()).unwrap();
        perturb_interior(&mut init, amp, seed);
        let cfg = SolveConfig { exec: Exec::Sequential, ..SolveConfig::default() };
        let f = relax(&init, &p, &cfg).unwrap().field;
        prop_assert!(f.values.iter().all(|v| v.abs() <= 1.0 + 1e-6));
    }

    #[test]
    fn snapshots_round_trip_bitwise(seed in 0u64..1000, nx in 2usize..20, ny in 2usize..20) {
        let g = Grid { nx, ny, hx: 0.1, hy: 0.2, x0: -1.0, y0: 0.5 };
        let mut f = Field2D::from_fn(g, BoundarySpec::saddle(0.7), "quartic", |_, _| 0.0);
        perturb_interior(&mut f, 1.0, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ac2");
        f.write_snapshot(&path).unwrap();
        let back = Field2D::read_snapshot(&path).unwrap();
        prop_assert_eq!(back.grid, g);
        prop_assert_eq!(&back.bc, &f.bc);
        prop_assert!(back.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn symmetric_data_gives_a_symmetric_solution() {
    let p = Potential::quartic();
    let spec = BoundarySpec::saddle(0.6);
    let init = build_boundary(&spec, square_grid(7.0, 0.1), profile(), p.interface_width(), p.id()).unwrap();
    let f = relax(&init, &p, &SolveConfig::default()).unwrap().field;
    let g = f.grid;
    let mut worst = 0.0f64;
    for j in 0..g.ny {
        for i in 0..g.nx {
            worst = worst.max((f.at(i, j) - f.at(i, g.ny - 1 - j)).abs());
            worst = worst.max((f.at(i, j) - f.at(g.nx - 1 - i, j)).abs());
        }
    }
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn parallel_and_sequential_solves_agree() {
    let p = Potential::quartic();
    let init = build_boundary(
        &BoundarySpec::saddle(std::f64::consts::FRAC_PI_4),
        square_grid(6.0, 0.1),
        profile(),
        p.interface_width(),
        p.id(),
    )
    .unwrap();
    let run = |exec| {
        relax(
            &init,
            &p,
            &SolveConfig {
                exec,
                ..SolveConfig::default()
            },
        )
        .unwrap()
        .field
    };
    let (a, b) = (run(Exec::Sequential), run(Exec::Parallel));
    let gap = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(gap <= 1e-12, "{gap}");
}
