//! Training engine: parameters, forward pass, optimizer, schedule, and
//! protocol orchestration.

pub mod forward;
pub mod gradcheck;
pub mod metrics;
pub mod optimizer;
pub mod params;
pub mod protocol;
pub mod train;

pub use forward::{forward, loss_values, total_loss, BatchRow, ForwardMode, ForwardNodes, LossValues};
pub use optimizer::RmsProp;
pub use params::{init_params, load_checkpoint, save_checkpoint, Arch, ParamStore};
pub use gradcheck::{check_tensor, rel_err, sample_coords, GradCheckReport, FD_STEP, KINK_TOLERANCE};
pub use protocol::{dataset_tag, run_protocol, ProtocolResult};
pub use train::{derive_rng, eval_records, train_fold, EmbeddingSnapshot, EpochLog, FoldResult, SnapshotPoint};
