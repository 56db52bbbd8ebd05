//! Mutable world state and the discrete step function.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::map::{Cell, CellKind, GridMap, Orientation};
use super::palette::PaletteColor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentId {
    Protagonist,
    Participant,
}

impl AgentId {
    pub const BOTH: [AgentId; 2] = [AgentId::Protagonist, AgentId::Participant];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> AgentId {
        match self {
            AgentId::Protagonist => AgentId::Participant,
            AgentId::Participant => AgentId::Protagonist,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub position: Cell,
    pub orientation: Orientation,
    pub color: PaletteColor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoorState {
    pub open: bool,
    pub color: PaletteColor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectLocation {
    Floor(Cell),
    Carried(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectState {
    pub color: PaletteColor,
    pub location: ObjectLocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    TurnLeft,
    TurnRight,
    Forward,
    Pickup,
    Drop,
    Toggle,
    Noop,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("agent {0:?} is not on a floor or door cell")]
    AgentOnWall(AgentId),
    #[error("both agents occupy {0}")]
    SharedCell(Cell),
    #[error("object must rest on a floor cell not occupied by an agent")]
    ObjectPlacement,
    #[error("expected {expected} door states, got {found}")]
    DoorCount { expected: usize, found: usize },
    #[error("agent colors must differ from each other and from room colors")]
    ColorClash,
}

/// Why an action was downgraded to a no-op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refusal {
    Blocked,
    NothingToPickUp,
    HandsFull,
    NotCarrying,
    DropTargetBlocked,
    NoDoor,
    DoorwayOccupied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepLog {
    pub refused: [Option<Refusal>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    #[serde(skip)]
    map: Option<Arc<GridMap>>,
    pub agents: [AgentState; 2],
    pub doors: Vec<DoorState>,
    pub object: ObjectState,
    pub tick: u32,
}

impl WorldState {
    pub fn new(
        map: Arc<GridMap>,
        agents: [AgentState; 2],
        doors: Vec<DoorState>,
        object: ObjectState,
    ) -> Result<Self, WorldError> {
        if doors.len() != map.doors.len() {
            return Err(WorldError::DoorCount { expected: map.doors.len(), found: doors.len() });
        }
        for a in &agents {
            if !map.in_bounds(a.position) || !map.is_walkable_kind(a.position) {
                return Err(WorldError::AgentOnWall(a.id));
            }
        }
        if agents[0].position == agents[1].position {
            return Err(WorldError::SharedCell(agents[0].position));
        }
        if agents[0].color == agents[1].color || doors.iter().any(|d| agents.iter().any(|a| a.color == d.color)) {
            return Err(WorldError::ColorClash);
        }
        if let ObjectLocation::Floor(c) = object.location {
            if !map.in_bounds(c)
                || map.kind(c) != CellKind::Floor
                || agents.iter().any(|a| a.position == c)
            {
                return Err(WorldError::ObjectPlacement);
            }
        }
        Ok(WorldState { map: Some(map), agents, doors, object, tick: 0 })
    }

    pub fn map(&self) -> &GridMap {
        self.map.as_deref().expect("world state detached from its map")
    }

    pub fn map_arc(&self) -> &Arc<GridMap> {
        self.map.as_ref().expect("world state detached from its map")
    }

    pub fn agent(&self, id: AgentId) -> &AgentState {
        &self.agents[id.index()]
    }

    pub fn carrier(&self) -> Option<AgentId> {
        match self.object.location {
            ObjectLocation::Carried(a) => Some(a),
            ObjectLocation::Floor(_) => None,
        }
    }

    /// Cell where the object currently is (its carrier's cell when carried).
    pub fn object_cell(&self) -> Cell {
        match self.object.location {
            ObjectLocation::Floor(c) => c,
            ObjectLocation::Carried(a) => self.agent(a).position,
        }
    }

    pub fn door_open(&self, door: usize) -> bool {
        self.doors[door].open
    }

    pub fn door_flags(&self) -> Vec<bool> {
        self.doors.iter().map(|d| d.open).collect()
    }

    /// Cell in front of `agent`, if inside the grid.
    pub fn front_of(&self, agent: AgentId) -> Option<Cell> {
        let a = self.agent(agent);
        self.map().neighbor(a.position, a.orientation)
    }

    fn occupied_by_other(&self, agent: AgentId, cell: Cell) -> bool {
        self.agent(agent.other()).position == cell
    }

    fn apply(&mut self, agent: AgentId, action: Action) -> Result<(), Refusal> {
        let idx = agent.index();
        match action {
            Action::Noop => Ok(()),
            Action::TurnLeft => {
                self.agents[idx].orientation = self.agents[idx].orientation.left();
                Ok(())
            }
            Action::TurnRight => {
                self.agents[idx].orientation = self.agents[idx].orientation.right();
                Ok(())
            }
            Action::Forward => {
                let front = self.front_of(agent).ok_or(Refusal::Blocked)?;
                let passable = match self.map().kind(front) {
                    CellKind::Wall => false,
                    CellKind::Floor => true,
                    CellKind::Door(d) => self.doors[d].open,
                };
                let object_there = self.object.location == ObjectLocation::Floor(front);
                if !passable || object_there || self.occupied_by_other(agent, front) {
                    return Err(Refusal::Blocked);
                }
                self.agents[idx].position = front;
                Ok(())
            }
            Action::Pickup => {
                if self.carrier() == Some(agent) {
                    return Err(Refusal::HandsFull);
                }
                let front = self.front_of(agent).ok_or(Refusal::NothingToPickUp)?;
                if self.object.location != ObjectLocation::Floor(front) {
                    return Err(Refusal::NothingToPickUp);
                }
                self.object.location = ObjectLocation::Carried(agent);
                Ok(())
            }
            Action::Drop => {
                if self.carrier() != Some(agent) {
                    return Err(Refusal::NotCarrying);
                }
                let front = self.front_of(agent).ok_or(Refusal::DropTargetBlocked)?;
                if self.map().kind(front) != CellKind::Floor || self.occupied_by_other(agent, front) {
                    return Err(Refusal::DropTargetBlocked);
                }
                self.object.location = ObjectLocation::Floor(front);
                Ok(())
            }
            Action::Toggle => {
                let front = self.front_of(agent).ok_or(Refusal::NoDoor)?;
                let CellKind::Door(d) = self.map().kind(front) else {
                    return Err(Refusal::NoDoor);
                };
                if self.doors[d].open && self.occupied_by_other(agent, front) {
                    return Err(Refusal::DoorwayOccupied);
                }
                self.doors[d].open = !self.doors[d].open;
                Ok(())
            }
        }
    }
}

/// Advances the world by one tick. The protagonist's action resolves first.
pub fn step(state: &WorldState, actions: [Action; 2]) -> WorldState {
    step_logged(state, actions).0
}

pub fn step_logged(state: &WorldState, actions: [Action; 2]) -> (WorldState, StepLog) {
    let mut next = state.clone();
    let mut log = StepLog::default();
    for agent in AgentId::BOTH {
        let action = actions[agent.index()];
        if let Err(refusal) = next.apply(agent, action) {
            log::debug!("tick {}: {:?} {:?} refused ({:?})", state.tick, agent, action, refusal);
            log.refused[agent.index()] = Some(refusal);
        }
    }
    next.tick = state.tick + 1;
    (next, log)
}
