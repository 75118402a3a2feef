mod common;

use cleancausal::dict::DictKind;
use cleancausal::dr::Estimand;
use cleancausal::eiv::{self, Design};

#[test]
fn balance_holds_when_moment_is_in_row_space() {
    let mut gated = 0;
    for seed in 0..20 {
        let case = common::balance_case(1000 + seed);
        if case.row_space_residual <= 1e-8 {
            gated += 1;
            assert!(case.balance_residual <= 1e-8, "{}: residual {:e}", case.label, case.balance_residual);
        }
    }
    assert!(gated >= 10, "only {gated} of 20 cases had the moment in the row space");
}

#[test]
fn estimand_dictionary_pairings() {
    assert!(eiv::check_compatible(&Estimand::Ate, DictKind::PartiallyLinear).is_err());
    assert!(eiv::check_compatible(&Estimand::Ate, DictKind::Interacted).is_ok());
    assert!(eiv::check_compatible(&Estimand::AverageDerivative, DictKind::Interacted).is_err());
    assert!(Design::for_estimand(&Estimand::Late, DictKind::Interacted, 4, true, false).is_ok());
    let cate = Estimand::LocalizedAte { v: 0.0, h: 1.0, kernel: cleancausal::dr::Kernel::Gaussian };
    assert!(Design::for_estimand(&cate, DictKind::Interacted, 4, true, false).is_err());
}
