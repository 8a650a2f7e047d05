//! Finite-difference validation of every backward rule.
//!
//!     cargo run --release --example gradient_check

use pyratten::gradcheck;

fn main() {
    let eps = gradcheck::default_eps();
    println!("central differences, eps = {eps:.0e}\n");
    let results = gradcheck::run_suite(eps, None).expect("suite runs");
    for r in &results {
        println!(
            "{:<26} max_rel_err {:>12.3e}   tolerance {:>8.1e}   {}",
            r.op,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    assert!(results.iter().all(|r| r.passed()));
}
