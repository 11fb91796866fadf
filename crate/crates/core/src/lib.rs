//! Dense complex linear algebra for experiments on Jordan structure.
//!
//! - [`matrix`], [`mtx`]: dense matrices, SVD rank, LU, Matrix Market I/O.
//! - [`eigen`], [`structure`]: Hessenberg QR eigenvalues, clustering, Weyr
//!   sequences and Jordan block sizes.
//! - [`jordan`], [`perturb`]: matrices with prescribed Jordan form and the
//!   distinct-eigenvalue bound under rank-r updates.
//! - [`krylov`]: GMRES, Krylov grade and iteration-count doubling.
//! - [`deflation`]: saddle-point preconditioning and deflated Newton.
//!
//! All randomness is seeded through [`rng`].

pub mod deflation;
pub mod eigen;
pub mod error;
pub mod jordan;
pub mod krylov;
pub mod matrix;
pub mod mtx;
pub mod perturb;
pub mod rng;
pub mod structure;
