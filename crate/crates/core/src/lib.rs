//! Physics-based assembly and disassembly planning.
//!
//! Parts are rigid triangle meshes in their assembled pose. A part is pushed with
//! axis-aligned forces and torques through a penalty-contact simulator, and a
//! breadth-first search over the resulting states finds a path that takes its
//! convex hull clear of the rest of the assembly. Sequences are planned by
//! repeatedly removing parts; assembly plans are the reversed sequence.

pub mod assembly_plan;
pub mod baselines;
pub mod bench;
pub mod config;
pub mod geometric;
pub mod geometry;
pub mod io;
pub mod part;
pub mod path;
pub mod physics;
pub mod model;
pub mod pipeline;
pub mod sequence;
