use lcerod::cross_section::{solve_warping, CrossSectionMesh, EffectiveCoefficients, ElementOrder};
use lcerod::fem1d::{Mesh1D, P1Field};
use lcerod::flow::{BoundaryConditions, EndCondition, Flow, FlowConfig, MovingEnd};
use lcerod::rod::{AnchoringSpec, ForcingField, ModelParams, RodModel, RodState};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

/// Saint-Venant torsion constant of the unit square from the classical
/// series `J = (1/3)(1 − (192/π⁵) Σ_{n odd} tanh(nπ/2)/n⁵)`.
fn square_torsion_series() -> f64 {
    let pi = std::f64::consts::PI;
    let sum: f64 = (0..200).map(|k| 2 * k + 1).map(|n| (n as f64 * pi / 2.0).tanh() / (n as f64).powi(5)).sum();
    (1.0 - 192.0 / pi.powi(5) * sum) / 3.0
}

#[test]
fn square_torsion_constant_matches_series() {
    // c_S is half the torsion constant of the unit-area section.
    let exact = square_torsion_series() / 2.0;
    assert!((exact - 0.070_288_5).abs() < 1e-7);
    let mut errors = Vec::new();
    for n in [8, 16, 32] {
        let c = solve_warping(&CrossSectionMesh::square_halfplane(n).unwrap(), ElementOrder::P2).unwrap().c_s;
        errors.push((c - exact).abs() / exact);
    }
    assert!(errors[2] < 1e-4, "{errors:?}");
    // Corner singularities limit the rate, but refinement must still help.
    assert!(errors[2] < errors[1] && errors[1] < errors[0], "{errors:?}");
    // The disc needs no warping at all.
    let disc = solve_warping(&CrossSectionMesh::disc_halfplane(8).unwrap(), ElementOrder::P1).unwrap();
    assert!(disc.l2_norm < 1e-12);
}

fn unit() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_map(|(a, b, c)| Vector3::new(a, b, c))
        .prop_filter("away from zero", |v| v.norm() > 0.2)
        .prop_map(|v| v.normalize())
}

/// A smooth random state: frame twisted at rate `w`, tangent tilted by a
/// bump, director rotating in the frame. All constrained vectors are unit.
fn smooth_state(mesh: &Mesh1D, w: f64, tilt: f64, spin: f64) -> RodState {
    let mut s = RodState::straight(mesh, Vector3::y(), Vector3::y());
    let l = mesh.length();
    for (i, &x) in mesh.nodes().iter().enumerate() {
        let bump = tilt * (std::f64::consts::PI * x / l).sin().powi(2);
        s.y.derivs[i] = Vector3::new(1.0, bump, 0.5 * bump).normalize();
        s.b.values[i] = Vector3::new(0.0, (w * x).cos(), (w * x).sin());
        s.nhat.values[i] = Vector3::new((spin * x).sin(), (spin * x).cos(), 0.0);
    }
    s
}

fn model(mesh: &Mesh1D, rbar: f64, kappa: f64, anchoring: AnchoringSpec) -> RodModel {
    let c = EffectiveCoefficients::disc_halfplane_reference();
    RodModel::new(mesh.clone(), ModelParams::from_coefficients(&c, rbar, kappa, 1.0 / 200.0).unwrap(), anchoring).unwrap()
}

fn end_condition() -> impl Strategy<Value = EndCondition> {
    prop_oneof![Just(EndCondition::Free), Just(EndCondition::Fixed), Just(EndCondition::Clamped)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Any step keeps prescribed data, moves constrained vectors tangentially
    /// and never shortens them.
    #[test]
    fn steps_respect_constraints_and_boundary_data(
        w in -6.0..6.0f64, tilt in 0.0..0.5f64, spin in -3.0..3.0f64,
        rbar in 0.0..3.0f64, kappa in 0.1..1.5f64,
        ends in proptest::array::uniform3((end_condition(), end_condition())),
        f in unit(), tau in 0.005..0.05f64,
    ) {
        let mesh = Mesh1D::uniform(1.0, 12).unwrap();
        let s = smooth_state(&mesh, w, tilt, spin);
        let bc = BoundaryConditions {
            y: [ends[0].0, ends[0].1],
            b: [ends[1].0, ends[1].1],
            nhat: [ends[2].0, ends[2].1],
            ..Default::default()
        };
        let cfg = FlowConfig { tau, t_final: 3.0 * tau, eps_stop: 0.0, abort_residual: 1e-6 };
        let mut flow = Flow::new(model(&mesh, rbar, kappa, AnchoringSpec::none()), s.clone(), bc.clone(),
            ForcingField::Constant { value: f.into() }, cfg).unwrap();
        for _ in 0..3 {
            let before = flow.state().clone();
            let r = flow.step().unwrap();
            let after = flow.state();
            prop_assert!(r.constraint_residual < 1e-9);
            for z in 0..after.n_nodes() {
                let dyp = Vector3::from_column_slice(&r.dy[6 * z + 3..6 * z + 6]);
                let db = Vector3::from_column_slice(&r.db[3 * z..3 * z + 3]);
                let dn = Vector3::from_column_slice(&r.dn[3 * z..3 * z + 3]);
                prop_assert!(dyp.dot(&before.y.derivs[z]).abs() < 1e-9);
                prop_assert!(db.dot(&before.b.values[z]).abs() < 1e-9);
                prop_assert!(dn.dot(&before.nhat.values[z]).abs() < 1e-9);
                prop_assert!(after.y.derivs[z].norm() >= before.y.derivs[z].norm() - 1e-14);
                prop_assert!(after.b.values[z].norm() >= before.b.values[z].norm() - 1e-14);
            }
            if let Err(e) = bc.check_state(after, &s, 1e-12) {
                prop_assert!(false, "{e}");
            }
        }
    }

    /// Rigid rotations of centerline and frame leave every term except the
    /// field potential unchanged; rotating the field along restores that too.
    #[test]
    fn energy_is_frame_indifferent(
        w in -6.0..6.0f64, tilt in 0.0..0.8f64, spin in -3.0..3.0f64,
        axis in unit(), angle in -3.0..3.0f64, f in unit(), rbar in 0.0..3.0f64,
    ) {
        let mesh = Mesh1D::uniform(1.5, 15).unwrap();
        let md = model(&mesh, rbar, 0.7, AnchoringSpec::tangential(0.5));
        let s = smooth_state(&mesh, w, tilt, spin);
        let q: Matrix3<f64> = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner();
        let e0 = md.energy(&s, &f).unwrap();
        let e1 = md.energy(&s.rotated(&q), &(q * f)).unwrap();
        let tol = 1e-10 * (1.0 + e0.total.abs());
        prop_assert!((e0.total - e1.total).abs() < tol);
        prop_assert!((e0.forcing - e1.forcing).abs() < tol);
        prop_assert!((e0.anchoring - e1.anchoring).abs() < tol);
    }

    /// The alternating field is `odd` exactly on `(10(m−1), 10m]` with `m` odd.
    #[test]
    fn alternating_field_parity(t in 0.001..200.0f64, interval in 0.5..20.0f64) {
        let field = ForcingField::Alternating { interval, odd: [0.0, 1.0, 0.0], even: [1.0, 0.0, 0.0] };
        let m = (t / interval).ceil() as i64;
        let boundary = (t / interval - (t / interval).round()).abs() < 1e-8;
        prop_assume!(!boundary);
        let expect = if m % 2 == 1 { Vector3::y() } else { Vector3::x() };
        prop_assert_eq!(field.at(t), expect);
        prop_assert!(!field.is_settled_after(t));
    }

    /// The compressed end follows the prescribed motion exactly while every
    /// other constraint stays satisfied.
    #[test]
    fn moving_end_tracks_schedule(speed in 0.1..1.0f64, steps in 1usize..6) {
        let mesh = Mesh1D::uniform(2.0, 10).unwrap();
        let s = smooth_state(&mesh, 2.0 * std::f64::consts::PI, 0.0, 0.0);
        let bc = BoundaryConditions {
            moving_end: Some(MovingEnd { velocity: [-speed, 0.0, 0.0], until: 0.5 }),
            ..BoundaryConditions::clamped_both()
        };
        let tau = 0.05;
        let cfg = FlowConfig { tau, t_final: 1.0, eps_stop: 0.0, abort_residual: 1e-6 };
        let mut flow = Flow::new(model(&mesh, 1.0, 0.4, AnchoringSpec::none()), s, bc, ForcingField::None, cfg).unwrap();
        for _ in 0..steps {
            flow.step().unwrap();
        }
        let t = flow.time();
        let want = 2.0 - speed * t.min(0.5);
        let end = flow.state().y.values.last().unwrap();
        prop_assert!((end - Vector3::new(want, 0.0, 0.0)).norm() < 1e-10);
        prop_assert!((flow.state().y.derivs.last().unwrap() - Vector3::x()).norm() < 1e-12);
    }
}

#[test]
fn anchoring_target_must_match_mesh() {
    let mesh = Mesh1D::uniform(1.0, 4).unwrap();
    let other = Mesh1D::uniform(1.0, 5).unwrap();
    let c = EffectiveCoefficients::disc_halfplane_reference();
    let p = ModelParams::from_coefficients(&c, 1.0, 1.0, 0.01).unwrap();
    let bad = AnchoringSpec::full(1.0, P1Field::constant(&other, Vector3::z()));
    assert!(RodModel::new(mesh, p, bad).is_err());
}
