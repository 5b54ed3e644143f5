//! Transfer learning by fine-tuning a single unit of a pretrained network.
//!
//! A network is an ordered list of units (`N = N_L ∘ … ∘ N_1`). Given a
//! pretrained network and a small labelled target set from a shifted domain,
//! the [`selector`] decides which unit to fine-tune:
//!
//! * [`Selector::flex`] fine-tunes every unit separately plus all units
//!   together and keeps the best on validation data.
//! * [`Selector::fast_flex`] fine-tunes all units once, scores each unit by
//!   transplanting it into the pretrained network, then fine-tunes the winner.
//! * [`Selector::faster_flex`] does the same from a single epoch of full
//!   fine-tuning.
//!
//! Baselines (`ft-fc`, `ft-ss`, `ft-all`), synthetic domain shifts, retrieval
//! metrics and a reproducible experiment driver are included. Everything is
//! computed on the CPU with a small hand-written tensor library.
//!
//! ```
//! use flextune::{Architecture, Network, Rng, Tensor};
//!
//! let net = Architecture::Mnist4.build_initialized(&[1, 16, 16], 10, &mut Rng::new(0))?;
//! let logits = net.forward(&Tensor::zeros(&[2, 1, 16, 16]))?;
//! assert_eq!(logits.shape(), &[2, 10]);
//! let proxy = Network::surgery(&net, &net, 2)?;
//! assert_eq!(proxy.checksum(), net.checksum());
//! # Ok::<(), flextune::Error>(())
//! ```

pub mod checkpoint;
pub mod domains;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod rng;
pub mod selector;
pub mod tensor;
pub mod trainer;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use domains::{apply_shift, subsample_and_split, synth_dataset, LabeledDataset, ShiftSpec, SplitSpec, Splits, TrainSize};
pub use error::{Error, ErrorClass, Result};
pub use eval::{ap_at_k, emit_csv, per_unit_sweep, retrieval_map, RetrievalResult, SweepTable};
pub use layers::{Layer, LayerKind, Param};
pub use loss::softmax_cross_entropy;
pub use network::{Architecture, MaskKind, Network, TrainableMask, Unit, UnitRole};
pub use optim::{adam_step, AdamConfig};
pub use rng::Rng;
pub use selector::{
    attach_pixel_unit, baseline, fast_flex_tune, faster_flex_tune, flex_tune, CandidateId, SelectionReport, Selector,
    Strategy,
};
pub use tensor::{Float, Tensor};
pub use trainer::{
    evaluate_accuracy, fine_tune, ledger_summary, train_fixed_epochs, CostLedger, EarlyStopConfig, FineTuneOutcome,
    TrainConfig,
};
