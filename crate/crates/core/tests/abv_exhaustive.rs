//! A fast slice of the exhaustive ABV exploration. The acceptance suite runs
//! every configuration.

mod support;

use aacons_core::Bit;
use support::abv_enum::{configurations, explore_all, explore_local, explore_terminal, Role, Setup};

fn correct(inputs: [Bit; 3], last: Role, round: u32) -> Setup {
    let mut roles: Vec<Role> = inputs.into_iter().map(Role::Correct).collect();
    roles.push(last);
    Setup { round, roles }
}

#[test]
fn split_inputs_with_a_byzantine_process() {
    for round in [1, 3] {
        let s = correct([Bit::Zero, Bit::One, Bit::One], Role::Byzantine, round);
        let t = explore_terminal(&s);
        assert_eq!(t.terminals, 1 << 12);
        assert!(t.violations.is_empty(), "{:?}", t.violations);
        let l = explore_local(&s);
        assert!(l.states > 0);
        assert!(l.violations.is_empty(), "{:?}", l.violations);
    }
}

#[test]
fn deceitful_flip_to_the_minority() {
    let s = correct(
        [Bit::Zero, Bit::One, Bit::One],
        Role::Deceitful { input: Bit::One, flip_to: vec![0, 1] },
        3,
    );
    let t = explore_all(&[s], true);
    assert!(t.violations.is_empty(), "{:?}", t.violations);
}

#[test]
fn every_round_one_configuration_reaches_a_terminal_state() {
    let setups: Vec<Setup> = configurations().into_iter().filter(|s| s.round == 1).collect();
    let t = explore_all(&setups, false);
    assert!(t.terminals >= setups.len());
    assert!(t.violations.is_empty(), "{:?}", t.violations);
}
