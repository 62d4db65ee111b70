//! Network roles of an oblivious CDN and the plumbing they share.
//!
//! Every role implements [`transport::Service`] and talks to its peers
//! through a [`transport::Transport`], so the same code runs over real
//! sockets ([`transport::HttpTransport`]) and inside the deterministic
//! in-process network used by the simulator ([`transport::InProcNetwork`]).

pub mod cachenode;
pub mod clientproxy;
pub mod clock;
pub mod config;
pub mod exitproxy;
pub mod http;
pub mod keydist;
pub mod keystore;
pub mod membership;
pub mod meter;
pub mod publisher;
pub mod transport;
pub mod wire;
