//! Module-sharing statistics and representation similarity (HSIC / CKA)
//! between tasks, layers and individual modules.

mod activations;
mod cka;
mod report;
mod sharing;

pub use activations::{capture_activations, capture_balanced, ActivationSet};
pub use cka::{cka, gram, hsic, Kernel};
pub use report::{layerwise_cka_report, CkaReport, LayerCka, ModuleEntry};
pub use sharing::{binomial_expected_count, sharing_profile, SharingProfile};
