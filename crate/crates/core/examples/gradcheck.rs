//! Finite-difference gradient checks over every loss, embedding mode and
//! depth, in 64-bit.
//!
//! `cargo run --release --example gradcheck`

use gru4rec::validation::{gradcheck, GradCase, GRADCHECK_TOL};

fn main() {
    let mut all_pass = true;
    for case in GradCase::all() {
        let r = gradcheck(case, 7);
        all_pass &= r.pass;
        println!("{:<36} {}  max rel. err {:.2e} (tol {GRADCHECK_TOL:e})", r.name, r.status(), r.measured);
    }
    std::process::exit(if all_pass { 0 } else { 1 });
}
