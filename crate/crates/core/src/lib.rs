//! Random Bernoulli features and PCA-based process monitors built on them:
//! static, dynamic (time-lagged), two-dimensional and moving-window Q-statistic
//! detectors, an exact kernel PCA baseline, and the evaluation harness.

pub mod config;
pub mod data;
pub mod detector;
pub mod dynamic;
pub mod error;
pub mod eval;
pub mod features;
pub mod kde;
pub mod kernel;
pub mod kpca;
pub mod model;
pub mod moving_window;
pub mod pca;
pub mod rng;
pub mod stream;
pub mod twod;

pub use data::{
    gen_numerical_example, inject_fault1, inject_fault2, load_labeled_csv, SampleStream, ZScore,
};
pub use detector::{fit_static, score_online, Detector, MapKind, MonitorConfig, Score, WidthRule};
pub use dynamic::{fit_dynamic, lag_embed, DynamicDetector};
pub use error::{Error, ErrorKind, Result};
pub use eval::{fdr_far, monte_carlo, run_replicate, MonitoringReport, Scenario};
pub use features::{
    AnyFeatureMap, BernoulliFeatureMap, FeatureMap, FourierFeatureMap, GaussianKernel,
};
pub use kernel::{approx_kernel, exact_gaussian_kernel, expected_error_bound, spectral_error};
pub use kpca::{exact_kpca_baseline, KpcaBaseline};
pub use model::{FittedMonitor, Method, MethodSpec, ModelFile};
pub use moving_window::{mw_fit, mw_step, screen_dissimilar, MovingWindowState};
pub use pca::{fit_pca, q_statistic, PcaModel, Retention};
pub use stream::{OnlineMonitor, StepOutcome};
pub use twod::{fit_2d, q2d_statistic, TwoDModel};
