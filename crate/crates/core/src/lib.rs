#![doc = include_str!("../../../book/src/introduction.md")]

pub mod cell_solver;
pub mod corrector;
pub mod effective;
pub mod error;
pub mod evolution;
pub mod hamiltonian;
pub mod numerics;
pub mod potential;

/// Guide chapters, compiled as doc-tests so their snippets stay current.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/hamiltonians.md")]
    struct Hamiltonians;

    #[doc = include_str!("../../../book/src/potentials.md")]
    struct Potentials;

    #[doc = include_str!("../../../book/src/effective.md")]
    struct Effective;

    #[doc = include_str!("../../../book/src/correctors.md")]
    struct Correctors;

    #[doc = include_str!("../../../book/src/cell_problem.md")]
    struct CellProblem;

    #[doc = include_str!("../../../book/src/evolution.md")]
    struct Evolution;
}
