//! Multi-agent cause-of-death analysis pipeline.
//!
//! A run decomposes a case into a plan ([`planner`]), solves each step with
//! optional tool use ([`solver`]), keeps a word-bounded validated memory
//! ([`memory`]), and composes a long-form analysis plus short-form
//! conclusion ([`global`]). [`pipeline`] drives the loop; every model call
//! and decision is appended to a [`trace::Tracer`].

pub mod case;
pub mod fixtures;
pub mod gateway;
pub mod global;
pub mod index;
pub mod memory;
pub mod pipeline;
pub mod planner;
pub mod solver;
pub mod text;
pub mod trace;
