use mvmos_core::selfcheck::{run_all, render_table, SelfcheckOptions};
use mvmos_core::Exec;

#[test]
fn all_checks_pass_on_default_seed() {
    let r = run_all(&SelfcheckOptions::default());
    let table = render_table(&r);
    println!("{table}");
    assert!(r.iter().all(|c| c.passed), "{table}");
}

#[test]
fn flipped_scan_fault_is_caught() {
    let opts = SelfcheckOptions { inject_flip_scan: true, exec: Exec::Sequential, ..Default::default() };
    let r = mvmos_core::selfcheck::check_ss2d_oracle(&opts, 50, 1e-5);
    assert!(!r.passed);
    let case = r.failing_case.expect("failing case recorded");
    assert!(case.get("case").is_some());
}
