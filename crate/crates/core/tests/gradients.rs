use fdl_core::model::Architecture;
use fdl_core::verify::{model_suite, ops_suite, worst, FaultInjection};

const TOL: f64 = 1e-4;

#[test]
fn every_backward_rule_matches_finite_differences() {
    let reports = ops_suite(7, FaultInjection(false)).unwrap();
    for r in &reports {
        println!(
            "{:<28} {:.3e} ({} coords)",
            r.component, r.report.max_rel_error, r.report.checked
        );
    }
    let w = worst(&reports).unwrap();
    assert!(
        w.report.max_rel_error < TOL,
        "{}: {:e}",
        w.component,
        w.report.max_rel_error
    );
}

#[test]
fn injected_fault_is_caught() {
    let reports = ops_suite(7, FaultInjection(true)).unwrap();
    assert!(reports
        .iter()
        .all(|r| r.report.max_rel_error > 0.3 || r.report.checked == 0));
    let reports = model_suite(Architecture::ResnetMini, 3, FaultInjection(true)).unwrap();
    assert!(worst(&reports).unwrap().report.max_rel_error > 0.3);
}

#[test]
fn tiny_models_match_finite_differences() {
    for arch in Architecture::ALL {
        for seed in [0, 11] {
            let reports = model_suite(arch, seed, FaultInjection(false)).unwrap();
            for r in &reports {
                println!(
                    "{:<28} {:.3e} ({} coords, {} kink probes)",
                    r.component, r.report.max_rel_error, r.report.checked, r.report.kinks_skipped
                );
                assert!(r.passes(TOL), "seed {seed}: {r:?}");
            }
        }
    }
}

#[test]
fn kink_crossings_are_counted() {
    // seed 0 puts a stem ReLU input within one probe step of zero
    let reports = model_suite(Architecture::DensenetMini, 0, FaultInjection(false)).unwrap();
    let params = &reports[0];
    assert!(params.report.kinks_skipped > 0);
    assert!(params.kink_fraction() <= fdl_core::verify::MAX_KINK_FRACTION);
    let ops = ops_suite(0, FaultInjection(false)).unwrap();
    assert!(ops.iter().all(|r| r.report.kinks_skipped == 0));
}
