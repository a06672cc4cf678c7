//! Multi-scale attentive architecture search for single-image de-raining.
//!
//! A supernet of multi-scale cells (transition, searched parallel/fusion
//! columns, searched attention) is searched by alternating first-order
//! updates of network weights and softmax-relaxed architecture logits, then
//! binarised into a [`Genotype`] and retrained as a discrete network on
//! multi-to-one rain data.
//!
//! ```
//! use manas::{ArchParams, DerainNetwork, Mode, NetworkConfig, Tensor};
//!
//! let cfg = NetworkConfig::new(1, 4, 16, 16);
//! let net = DerainNetwork::instantiate(cfg, Mode::Relaxed, None, 7)?;
//! let arch = ArchParams::new(&cfg, false);
//! let out = net.forward_relaxed(&Tensor::full(&[3, 16, 16], 0.5), &arch)?;
//! assert_eq!(out.dims(), &[3, 16, 16]);
//! # Ok::<(), manas::Error>(())
//! ```

pub mod arch;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod genotype;
pub mod gradcheck;
mod kernels;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod pyramid;
pub mod search;
pub mod search_space;
pub mod supernet;
mod tensor;

pub use arch::{argmax_lowest, relax, ArchParams, ArchVars};
pub use autograd::{Grads, Tape, Var};
pub use config::{cosine_lr, validate_config, NetworkConfig, SearchConfig, TrainConfig};
pub use data::{DatasetSplit, MultiToOnePair, Severity};
pub use error::{Error, Result};
pub use genotype::{CellGenotype, ColumnChoice, Genotype, ATTENTION_SITES, GENOTYPE_VERSION};
pub use losses::LossReport;
pub use metrics::{psnr, ssim, MetricReport};
pub use params::{Graph, ParamId, ParamStore};
pub use pyramid::{FeaturePyramid, Scale};
pub use search::{bilevel_step, resume_search, run_search, run_train, SearchOutcome, SearchState, TrainOutcome};
pub use search_space::AttentionOpKind;
pub use supernet::{ComplexityTable, DerainNetwork, Mode};
pub use tensor::Tensor;

/// The guide's code samples, compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/search-space.md")]
    struct SearchSpace;
    #[doc = include_str!("../../../book/src/relaxation.md")]
    struct Relaxation;
    #[doc = include_str!("../../../book/src/losses.md")]
    struct Losses;
    #[doc = include_str!("../../../book/src/search.md")]
    struct Search;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
}
