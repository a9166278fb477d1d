//! Generative-modeling laboratory for discrete latent codes on 2D grid mixtures.
//!
//! The crate is split along the two halves of the ancestral factorization
//! `p(x) = Σ_c p(x|c)·p(c)`:
//!
//! - [`contdiff`] — a continuous DDPM over 2D points with conditional score
//!   networks, drop-token training and classifier-free guidance.
//! - [`codec`] — simplicial-embedding encoders that turn points into discrete
//!   latent codes (argmax tokenization), plus code composition and the token
//!   embedder that maps codes back to conditioning vectors.
//! - [`discdiff`] — absorbing discrete diffusion over codes: masking forward
//!   process, masked cross-entropy training, reverse unmasking sampler and a
//!   remasking correction.
//!
//! Supporting modules: [`nn`] (dense layers, attention, AdamW, gradient
//! checking), [`grid`] (the grid-of-Gaussians benchmark with exact density),
//! [`gmm`] (EM baseline for learned-index conditioning), [`eval`]
//! (Silverman-KDE KL, Vendi score, mode statistics) and [`linalg`]
//! (symmetric eigenvalues for the Vendi spectrum).
//!
//! The crate is `no_std` + `alloc`; all I/O, persistence and orchestration
//! live in the companion `dlc-lab` crate. Every source of randomness is an
//! explicit [`rng::Rng`] so runs are reproducible bit-for-bit.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod codec;
pub mod contdiff;
pub mod discdiff;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod grid;
pub mod linalg;
pub mod math;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{CoreError, Result};
pub use rng::Rng;
pub use tensor::Tensor;
