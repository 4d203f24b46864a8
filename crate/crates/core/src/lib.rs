//! Split early-exit transformer inference between an edge device and a cloud
//! server.
//!
//! ```
//! use std::sync::Arc;
//! use cecollm::cloud::{CloudServer, EvictionPolicy, ServerMode};
//! use cecollm::edge::{CostModel, EdgeClient, EdgeConfig, SimCloudLink};
//! use cecollm::model::{Model, ModelConfig};
//! use cecollm::transport::LinkParams;
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let model = Arc::new(Model::generate(&ModelConfig::default(), 7)?);
//! let server = Arc::new(CloudServer::new(model.clone(), ServerMode::Partition, None, EvictionPolicy::default())?);
//! let mut link = SimCloudLink::new(server, LinkParams::default(), 0, CostModel::default(), 8)?;
//! let client = EdgeClient::new(&model, EdgeConfig::default())?;
//! let out = client.run(&[72, 101, 108, 108, 111], 1, &mut link)?;
//! assert_eq!(out.traces.len(), out.tokens.len());
//! # Ok(())
//! # }
//! ```

pub mod codec;
pub mod model;
pub mod transport;
pub mod cloud;
pub mod edge;
pub mod harness;
