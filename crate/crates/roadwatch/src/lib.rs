//! Planner library and simulation harness for long-term monitoring of
//! dynamic targets moving on a road network, using a minimal fleet of
//! battery-constrained robots.
//!
//! The planning stack is hierarchical:
//!
//! * [`ordering`] — best-first search over partial robot orderings with
//!   branch-and-bound pruning,
//! * [`assign`] — walks a robot ordering and assigns targets greedily,
//! * [`routing`] — grows a per-robot sub-network one target at a time and
//!   keeps its label sets incrementally,
//! * [`labeling`] — the multi-objective label-setting core (dominance,
//!   lexicographic extraction, resource windows with left-boundary
//!   compensation),
//! * [`graph`] — the time-varying planning graph: robot, target,
//!   intersection-target, dock and charge-level nodes with vector edge costs.
//!
//! [`world`] is the ground-truth discrete-time simulation, [`online`] the
//! execution loop with predictive replanning, [`baselines`] the comparison
//! planners, and [`metrics`] the report summarizer.

pub mod baselines;
pub mod geometry;
pub mod graph;
pub mod labeling;
pub mod assign;
pub mod metrics;
pub mod online;
pub mod ordering;
pub mod report;
pub mod routing;
pub mod scenario;
pub mod world;

pub use geometry::{dist, Rect, Vec2};
pub use scenario::{load_scenario, Scenario};
