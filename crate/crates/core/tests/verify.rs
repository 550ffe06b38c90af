use crust_core::verify::{run_all, Fault};

#[test]
fn clean_build_passes_every_check() {
    let results = run_all(3, Fault::None).unwrap();
    assert!(results.len() >= 4);
    for r in &results {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}

#[test]
fn injected_gradient_fault_is_caught() {
    let results = run_all(3, Fault::GradientScale).unwrap();
    assert!(results.iter().any(|r| !r.passed));
}
