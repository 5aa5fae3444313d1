//! Crowd counting from dense per-pixel attribute maps.
//!
//! The pipeline pools an [`attribute_map::AttributeMap`] into locality-aware
//! cell descriptors ([`laf`]), whitens them and quantizes against a k-means
//! dictionary ([`codebook`]), aggregates residuals with hard or soft
//! assignment weights ([`encoder`]) and regresses the resulting vector onto
//! a count ([`regression`]). [`pipeline`] wires the stages together with
//! dataset manifests, configuration and model persistence.

pub mod attribute_map;
pub mod codebook;
pub mod encoder;
pub mod laf;
pub mod pipeline;
pub mod regression;
