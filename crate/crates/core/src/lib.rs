//! Channel-adaptive rate and relay selection over 802.11b ad hoc links.
//!
//! Link-level analysis lives in [`linkcalc`], channel prediction in
//! [`predictor`] and the packet-level network simulator in [`sim`].

pub mod channel;
pub mod gpsr;
pub mod linkcalc;
pub mod mac;
pub mod mobility;
pub mod phy;
pub mod predictor;
pub mod quadrature;
pub mod seeding;
pub mod sim;
pub mod special;

pub use channel::{FadingProcess, PathLossParams};
pub use linkcalc::{CsiQuality, CurveRow, LinkCalcError, Method, Metric, ThroughputResult};
pub use mac::{CsiScheme, MacTiming};
pub use mobility::Vec2;
pub use phy::RateClass;
pub use predictor::{Predictor, PredictorConfig};
pub use sim::{ConfigError, RunMetrics, ScenarioConfig, Traffic};
