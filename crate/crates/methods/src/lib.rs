//! Postprocessing methods for ensemble wind gust forecasts.

pub mod baselines;
pub mod emos;
pub mod gbm;
pub mod idr;
pub mod local;
pub mod mbm;
pub mod nn;
pub mod qrf;

pub use baselines::{EpcModel, RawEnsemble};
pub use emos::{EmosConfig, EmosModel};
pub use gbm::{GbmConfig, GbmModel};
pub use idr::{IdrConfig, IdrModel};
pub use mbm::{MbmConfig, MbmModel};
pub use nn::{HeadKind, NnConfig, NnModel};
pub use qrf::{QrfConfig, QrfModel};
