use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use sorts_core::airspace::distance;
use sorts_core::config::load_bundled;
use sorts_core::selfplay::{cruise_straight, first_divergence, replay, EpisodeError};
use sorts_core::{run_episode, EpisodeConfig, EpisodeResult, Outcome, PlannerKind, Runtime};

fn runtime() -> Arc<Runtime> {
    static RT: OnceLock<Arc<Runtime>> = OnceLock::new();
    RT.get_or_init(|| Arc::new(Runtime::new(load_bundled("smoke.json").unwrap()).unwrap()))
        .clone()
}

fn check_bookkeeping(r: &EpisodeResult) {
    let n = r.agents.len();
    assert_eq!(r.trajectories.len(), n);
    assert_eq!(r.paths.len(), n);
    assert_eq!(r.actions.len(), n);
    assert_eq!(Outcome::ALL.iter().map(|o| r.count(*o)).sum::<usize>(), n);
    for (i, a) in r.agents.iter().enumerate() {
        let t = &r.trajectories[i];
        assert!(t.is_well_formed());
        assert_eq!(t.primitives.len(), r.actions[i].len());
        assert!(a.end_tick <= r.ticks);
        assert_eq!(r.loss_of_separation[i][i], 0.0);
        for j in 0..n {
            assert_eq!(r.loss_of_separation[i][j], r.loss_of_separation[j][i]);
            if i != j && r.loss_of_separation[i][j] > 0.0 {
                assert_eq!(a.outcome, Outcome::FailLs);
            }
        }
        if a.outcome == Outcome::Success {
            let arrival = a.arrival.expect("landed aircraft records its arrival");
            let gap = distance(&arrival.position(), &r.paths[i].goal());
            assert!(gap <= r.spec.planner.goal_radius + 1e-12);
        }
    }
    for d in &r.decisions {
        if d.forced || d.root.is_empty() {
            continue;
        }
        // the fallback may fly a safe primitive outside the expanded set
        if let Some(chosen) = d.root.iter().find(|c| c.action == d.action) {
            assert!(!chosen.pruned, "unforced decision picked a pruned action: {d:?}");
        } else {
            assert!(d.root.iter().all(|c| c.pruned), "{d:?}");
        }
        assert!(d.root.iter().all(|c| (0.0..=1.0).contains(&c.q)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn episodes_are_consistent_and_replayable(seed in 0u64..10_000, n in 2usize..=4, sorts in any::<bool>()) {
        let kind = if sorts { PlannerKind::Sorts } else { PlannerKind::Ablation };
        let r = run_episode(runtime(), EpisodeConfig::uniform(n, kind, seed)).unwrap();
        check_bookkeeping(&r);
        let back = EpisodeResult::from_json(&r.to_json()).unwrap();
        prop_assert_eq!(&back, &r);
        let fresh = replay(&back).unwrap();
        prop_assert_eq!(first_divergence(&back, &fresh), None);
    }
}

#[test]
fn mixed_planners_share_an_episode() {
    let config = EpisodeConfig {
        seed: 17,
        planners: vec![PlannerKind::Sorts, PlannerKind::Ablation, PlannerKind::Scripted(vec![cruise_straight()])],
        sectors: None,
        separation_d: None,
    };
    let r = run_episode(runtime(), config).unwrap();
    check_bookkeeping(&r);
    assert_eq!(r.agents[2].planner.label(), "scripted");
    assert!(r.decisions.iter().any(|d| d.planner == "sorts"));
    assert!(r.decisions.iter().any(|d| d.planner == "ablation"));
}

#[test]
fn empty_script_is_rejected() {
    let config = EpisodeConfig {
        seed: 1,
        planners: vec![PlannerKind::Sorts, PlannerKind::Scripted(vec![])],
        sectors: None,
        separation_d: None,
    };
    assert!(matches!(run_episode(runtime(), config), Err(EpisodeError::Invalid(_))));
}
