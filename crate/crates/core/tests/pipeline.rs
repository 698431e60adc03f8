use fragcoag_core::control::ActionFunction;
use fragcoag_core::ctmc::{simulate, ControlSchedule, MergeConvention, SimConfig};
use fragcoag_core::meanfield::{integrate, OdeConfig};
use fragcoag_core::reduced1d::{m_flow, optimal_action, value_closed_form, TerminalSpec};
use fragcoag_core::{constant_example_kernel, Composition, ControlPoint, MeanFieldState};
use proptest::prelude::*;

fn composition() -> impl Strategy<Value = Composition> {
    (prop::collection::btree_map(1usize..6, 1u64..5, 1..4), 0.05f64..0.5)
        .prop_map(|(counts, h)| Composition::new(h, counts).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chain_keeps_players_at_every_window(x0 in composition(), b in 0.0f64..=1.0, seed in any::<u64>(), literal in any::<bool>()) {
        let convention = if literal { MergeConvention::Literal } else { MergeConvention::Combinatorial };
        let cfg = SimConfig::new(1.0, 0.2).with_convention(convention);
        let schedule = ControlSchedule::Constant(ControlPoint::new(b).unwrap());
        let kernel = constant_example_kernel();
        let t = simulate(&x0, &kernel, &schedule, &cfg, &[], seed, 0).unwrap();
        prop_assert_eq!(t.step_states.len(), cfg.windows() + 1);
        for s in &t.step_states {
            prop_assert_eq!(s.players(), x0.players());
            prop_assert!((s.mass_norm() - x0.mass_norm()).abs() < 1e-12);
        }
        let again = simulate(&x0, &kernel, &schedule, &cfg, &[], seed, 0).unwrap();
        prop_assert_eq!(again.step_states, t.step_states);
    }

    #[test]
    fn closed_form_value_is_terminal_reward_along_flow(m0 in 0.05f64..3.0, horizon in 0.1f64..2.0) {
        let spec = TerminalSpec::quadratic(1.0).unwrap();
        let opt = optimal_action(m0, horizon, &spec).unwrap();
        let m_t = m_flow(horizon, m0, opt.b.value()).unwrap();
        let v = value_closed_form(0.0, m0, horizon, &spec);
        prop_assert!((v + (m_t - 1.0).powi(2)).abs() < 1e-9, "v {} vs flow {}", v, m_t);
    }
}

#[test]
fn truncated_system_keeps_mass_until_the_boundary() {
    let x0 = MeanFieldState::new(vec![0.5, 0.25]).unwrap();
    let alpha = ActionFunction::constant(ControlPoint::new(0.3).unwrap(), 1.0).unwrap();
    let cfg = OdeConfig::new(64, 1e-3).unwrap();
    let path = integrate(&x0, &constant_example_kernel(), &alpha, 1.0, &cfg, None).unwrap();
    let mass = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum::<f64>();
    let last = path.states.last().unwrap();
    assert!((mass(last) + path.leaked_mass + path.clipped_mass - 1.0).abs() < 1e-10);
    assert!(path.leaked_mass < 1e-8);
}
