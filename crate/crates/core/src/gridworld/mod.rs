//! Deterministic discrete gridworld: map model, action semantics, path
//! planning and map validation.

mod map;
mod palette;
mod path;
mod world;

pub use map::{
    bundled_map, bundled_map_text, parse_layout, parse_map, validate_map, Cell, CellKind, Door, Finding,
    GridMap, MapError, Orientation, Region, RoomRegion, ValidationReport, BUNDLED_MAP_COUNT,
};
pub use palette::PaletteColor;
pub use path::{cells_to_actions, plan_path, plan_path_avoiding, shortest_cells, DoorPolicy, PathError, Pose};
pub use world::{
    step, step_logged, Action, AgentId, AgentState, DoorState, ObjectLocation, ObjectState, Refusal, StepLog,
    WorldError, WorldState,
};
