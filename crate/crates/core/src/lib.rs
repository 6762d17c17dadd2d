//! Trajectory design for a UAV serving sleeping ground terminals over a
//! multi-antenna downlink.
//!
//! The world model lives in [`env`], [`channel`] and [`precoding`], and
//! [`mdp`] turns it into an episodic environment. [`ddpg`] trains an
//! actor-critic agent on it, built on the small networks in [`nn`].
//! [`baselines`] flies the Scan and ant-colony reference strategies, and
//! [`experiment`] ties runs to one configuration file and one seed.

pub mod baselines;
pub mod channel;
pub mod ddpg;
pub mod env;
pub mod experiment;
pub mod mdp;
pub mod nn;
pub mod precoding;
pub mod seed;
pub mod units;

/// The guide's chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/map.md")]
    mod map {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/precoding.md")]
    mod precoding {}
    #[doc = include_str!("../../../book/src/mdp.md")]
    mod mdp {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
