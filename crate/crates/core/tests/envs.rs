use posg::envs::{Action, Env, EnvPreset, KdtEnv, KdtLayout, KdtMove, PointMassConfig, PointMassEnv};
use proptest::prelude::*;

proptest! {
    #[test]
    fn kdt_agent_never_enters_a_wall(moves in prop::collection::vec(0usize..4, 1..300), full in prop::bool::ANY) {
        let layout = if full { KdtLayout::full() } else { KdtLayout::small() };
        let mut env = KdtEnv::new(layout.clone(), "test");
        env.reset();
        for m in moves {
            let out = env.step(&Action::Discrete(m)).unwrap();
            let s = env.state();
            prop_assert!(!layout.is_wall(s.cell()));
            if s.cell() == layout.door {
                prop_assert!(s.has_key && s.door_open);
            }
            if out.done() {
                prop_assert!(out.terminated || s.step_count == layout.max_steps);
                env.reset();
            }
        }
    }

    #[test]
    fn point_mass_stays_in_the_arena(actions in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..600)) {
        let cfg = PointMassConfig::default();
        let mut env = PointMassEnv::new(cfg);
        env.reset();
        for (x, y) in actions {
            let out = env.step(&Action::Continuous(vec![x, y])).unwrap();
            let o = &out.observation;
            prop_assert!(o[0].abs() <= cfg.half_extent && o[1].abs() <= cfg.half_extent);
            prop_assert!(o[2].hypot(o[3]) <= cfg.v_max + 1e-12);
            if out.done() {
                env.reset();
            }
        }
    }
}

#[test]
fn layout_text_round_trips() {
    for layout in [KdtLayout::small(), KdtLayout::full()] {
        assert_eq!(KdtLayout::parse(&layout.to_text(), layout.max_steps).unwrap(), layout);
    }
    assert_eq!((KdtLayout::small().height, KdtLayout::small().width), (13, 18));
    assert_eq!((KdtLayout::full().height, KdtLayout::full().width), (26, 36));
}

#[test]
fn invalid_layouts_are_rejected() {
    let no_door = "#####\n#SKT#\n#####\n";
    assert!(KdtLayout::parse(no_door, 10).is_err());
    let bypass = "#######\n#S.K..#\n#.###D#\n#....T#\n#######\n";
    assert!(KdtLayout::parse(bypass, 10).is_err());
    let sealed = "#######\n#SK#D.#\n###T###\n#######\n";
    assert!(KdtLayout::parse(sealed, 10).is_err());
}

#[test]
fn door_needs_the_key() {
    let text = "#######\n#SDK.T#\n#######\n";
    // key lies behind the door: unsolvable
    assert!(KdtLayout::parse(text, 10).is_err());
    let text = "########\n#KS.D.T#\n########\n";
    let layout = KdtLayout::parse(text, 20).unwrap();
    let mut env = KdtEnv::new(layout, "t");
    env.reset();
    for _ in 0..3 {
        env.step_move(KdtMove::East).unwrap();
    }
    assert_eq!(env.state().col, 3);
    for _ in 0..3 {
        env.step_move(KdtMove::West).unwrap();
    }
    assert!(env.state().has_key);
    let mut total = 0.0;
    let mut done = false;
    while !done {
        let out = env.step_move(KdtMove::East).unwrap();
        total += out.reward;
        done = out.done();
    }
    assert_eq!(total, 200.0);
    assert!(env.state().door_open);
}

#[test]
fn presets_build_matching_spaces() {
    for p in EnvPreset::ALL {
        let env = p.build();
        assert_eq!(env.id(), p.id());
        assert_eq!(env.discrete_observations(), p.is_discrete());
        assert_eq!(env.observation_scale().len(), env.observation_dim());
    }
}
