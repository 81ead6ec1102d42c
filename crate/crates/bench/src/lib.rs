//! Fixtures shared by the benchmarks.

use dsm_core::operator::{cubic_default_solution, cubic_with_solution, integral_default_solution};
use dsm_core::{make_diagonal_problem, make_integral_problem, LinearProblem, OperatorProblem, Vector};

pub fn diagonal() -> LinearProblem {
    make_diagonal_problem(&[1.0, 0.1, 0.01], &Vector::from(vec![1.0, 1.0, 1.0])).expect("valid fixture")
}

pub fn integral(n: usize) -> LinearProblem {
    let y = integral_default_solution(n, 0.1).expect("valid fixture");
    make_integral_problem(n, 0.1, &y).expect("valid fixture")
}

pub fn cubic(n: usize) -> OperatorProblem {
    cubic_with_solution(1.0, &cubic_default_solution(n)).expect("valid fixture")
}
