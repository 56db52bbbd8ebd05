//! Per-agent visibility with closed-door occlusion, first- and second-order
//! belief tracking, and probe-sample labeling.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{AgentId, Cell, CellKind, GridMap, Orientation, Region, WorldState};
use crate::scenario::{BeliefOrder, Condition, Timeline};

/// Whose view of the world a frame, narration or field represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perspective {
    Omniscient,
    Protagonist,
    Participant,
}

impl Perspective {
    pub const ALL: [Perspective; 3] = [Perspective::Omniscient, Perspective::Protagonist, Perspective::Participant];

    pub fn agent(self) -> Option<AgentId> {
        match self {
            Perspective::Omniscient => None,
            Perspective::Protagonist => Some(AgentId::Protagonist),
            Perspective::Participant => Some(AgentId::Participant),
        }
    }

    pub fn of_agent(agent: AgentId) -> Self {
        match agent {
            AgentId::Protagonist => Perspective::Protagonist,
            AgentId::Participant => Perspective::Participant,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Perspective::Omniscient => "omniscient",
            Perspective::Protagonist => "protagonist",
            Perspective::Participant => "participant",
        }
    }
}

/// Set of cells a viewer can see at one tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerceptionField {
    pub perspective: Perspective,
    pub tick: u32,
    width: usize,
    visible: Vec<bool>,
}

impl PerceptionField {
    pub fn contains(&self, cell: Cell) -> bool {
        cell.col < self.width && self.visible.get(cell.row * self.width + cell.col).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let w = self.width;
        self.visible.iter().enumerate().filter(|(_, v)| **v).map(move |(i, _)| Cell::new(i % w, i / w))
    }

    pub fn is_subset_of(&self, other: &PerceptionField) -> bool {
        self.visible.iter().zip(&other.visible).all(|(a, b)| !*a || *b)
    }
}

/// Region flood fill from the viewer's cell over floor and open doors.
/// Closed doors are neither crossed nor seen.
pub fn visible_cells(state: &WorldState, perspective: Perspective) -> PerceptionField {
    let map = state.map();
    let mut visible = vec![false; map.width * map.height];
    match perspective.agent() {
        None => {
            for cell in map.cells() {
                if map.kind(cell) != CellKind::Wall {
                    visible[map.cell_index(cell)] = true;
                }
            }
        }
        Some(agent) => {
            let start = state.agent(agent).position;
            visible[map.cell_index(start)] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(cell) = queue.pop_front() {
                for o in Orientation::ALL {
                    let Some(n) = map.neighbor(cell, o) else { continue };
                    let i = map.cell_index(n);
                    if visible[i] {
                        continue;
                    }
                    let see = match map.kind(n) {
                        CellKind::Wall => false,
                        CellKind::Floor => true,
                        CellKind::Door(d) => state.door_open(d),
                    };
                    if see {
                        visible[i] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    PerceptionField { perspective, tick: state.tick, width: map.width, visible }
}

/// Where an agent believes the object is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BelievedLocation {
    Unknown,
    Hallway,
    Room(usize),
}

pub fn location_of(map: &GridMap, cell: Cell) -> BelievedLocation {
    match map.room_of(cell) {
        Some(r) => BelievedLocation::Room(r),
        None if map.region(cell) == Region::Hallway => BelievedLocation::Hallway,
        None => BelievedLocation::Unknown,
    }
}

/// Per-tick first-order beliefs and second-order models for both agents.
/// `modeled[a]` is agent `a`'s model of the *other* agent's belief.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefLedger {
    pub believed: [Vec<BelievedLocation>; 2],
    pub modeled: [Vec<BelievedLocation>; 2],
}

impl BeliefLedger {
    pub fn ticks(&self) -> usize {
        self.believed[0].len()
    }

    pub fn believed_at(&self, agent: AgentId, tick: usize) -> BelievedLocation {
        self.believed[agent.index()][tick]
    }

    pub fn modeled_at(&self, agent: AgentId, tick: usize) -> BelievedLocation {
        self.modeled[agent.index()][tick]
    }

    pub fn final_belief(&self, agent: AgentId) -> BelievedLocation {
        self.believed[agent.index()].last().copied().unwrap_or(BelievedLocation::Unknown)
    }

    /// `agent`'s final model of the other agent's belief.
    pub fn final_model(&self, agent: AgentId) -> BelievedLocation {
        self.modeled[agent.index()].last().copied().unwrap_or(BelievedLocation::Unknown)
    }
}

/// Appends one tick to the ledger.
///
/// First order uses the last-seen rule. A modeler updates its model of the
/// other agent only when it can see both the object and the other agent,
/// and then only if the other agent can see the object.
pub fn update_beliefs(mut ledger: BeliefLedger, state: &WorldState, fields: [&PerceptionField; 2]) -> BeliefLedger {
    let map = state.map();
    let object = state.object_cell();
    let here = location_of(map, object);
    for agent in AgentId::BOTH {
        let i = agent.index();
        let prev = ledger.believed[i].last().copied().unwrap_or(BelievedLocation::Unknown);
        let next = if fields[i].contains(object) { here } else { prev };
        ledger.believed[i].push(next);

        let other = agent.other();
        let prev_model = ledger.modeled[i].last().copied().unwrap_or(BelievedLocation::Unknown);
        let sees_object = fields[i].contains(object);
        let sees_other = fields[i].contains(state.agent(other).position);
        let other_sees_object = fields[other.index()].contains(object);
        let next_model = if sees_object && sees_other && other_sees_object { here } else { prev_model };
        ledger.modeled[i].push(next_model);
    }
    ledger
}

/// Runs [`update_beliefs`] over a whole frame sequence.
pub fn track_beliefs(frames: &[WorldState]) -> BeliefLedger {
    frames.iter().fold(BeliefLedger::default(), |ledger, state| {
        let p = visible_cells(state, Perspective::Protagonist);
        let q = visible_cells(state, Perspective::Participant);
        update_beliefs(ledger, state, [&p, &q])
    })
}

/// A statement whose correctness a probe sample is labeled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BeliefStatement {
    /// "The protagonist believes the object is in `room`."
    First { room: BelievedLocation },
    /// "The participant believes the protagonist believes the object is in `room`."
    Second { room: BelievedLocation },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPair {
    pub y_p: bool,
    pub y_o: bool,
    pub condition: Condition,
    /// Belief-inference component: the statement matches the relevant belief.
    pub y_p_tb: bool,
    /// Perspective-separation component: the input perspective is consistent
    /// with the protagonist's own view.
    pub y_p_fb: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("statement {statement:?} cannot be labeled from the {perspective:?} perspective")]
    StatementPerspectiveMismatch { perspective: Perspective, statement: BeliefStatement },
}

pub fn label_sample(
    timeline: &Timeline,
    perspective: Perspective,
    statement: BeliefStatement,
) -> Result<LabelPair, LabelError> {
    let condition = timeline.spec.condition;
    let ledger = &timeline.ledger;
    let mismatch = LabelError::StatementPerspectiveMismatch { perspective, statement };
    match statement {
        BeliefStatement::First { room } => {
            if perspective == Perspective::Participant {
                return Err(mismatch);
            }
            let truth = timeline.final_object_location();
            // Under TB the protagonist's view equals the omniscient one.
            let protagonist_view = perspective == Perspective::Protagonist || condition == Condition::TrueBelief;
            let omniscient_view = perspective == Perspective::Omniscient || condition == Condition::TrueBelief;
            let y_p_tb = room == ledger.final_belief(AgentId::Protagonist);
            let y_p_fb = protagonist_view;
            Ok(LabelPair { y_p: y_p_tb && y_p_fb, y_o: omniscient_view && room == truth, condition, y_p_tb, y_p_fb })
        }
        BeliefStatement::Second { room } => {
            if perspective != Perspective::Omniscient {
                return Err(mismatch);
            }
            let y_p_tb = room == ledger.final_model(AgentId::Participant);
            Ok(LabelPair { y_p: y_p_tb, y_o: y_p_tb, condition, y_p_tb, y_p_fb: true })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRole {
    Positive,
    Negative,
}

/// One probe input: a perspective video paired with a belief statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub perspective: Perspective,
    pub statement: BeliefStatement,
    pub role: SampleRole,
    pub labels: LabelPair,
}

/// Positive/negative probe inputs for a timeline.
///
/// First-order TB contrasts correct and incorrect statements under the
/// shared view. First-order FB contrasts the protagonist's view with the
/// omniscient view for the same protagonist-consistent statement.
/// Second order contrasts correct and incorrect statements only.
pub fn probe_samples(timeline: &Timeline) -> Vec<ProbeSample> {
    let src = BelievedLocation::Room(timeline.roles.source);
    let dst = BelievedLocation::Room(timeline.roles.destination);
    let flip = |room| if room == src { dst } else { src };
    let pairs: [(Perspective, BeliefStatement, SampleRole); 2] = match (timeline.spec.order, timeline.spec.condition) {
        (BeliefOrder::First, Condition::TrueBelief) => {
            let belief = timeline.ledger.final_belief(AgentId::Protagonist);
            [
                (Perspective::Omniscient, BeliefStatement::First { room: belief }, SampleRole::Positive),
                (Perspective::Omniscient, BeliefStatement::First { room: flip(belief) }, SampleRole::Negative),
            ]
        }
        (BeliefOrder::First, Condition::FalseBelief) => {
            let belief = timeline.ledger.final_belief(AgentId::Protagonist);
            [
                (Perspective::Protagonist, BeliefStatement::First { room: belief }, SampleRole::Positive),
                (Perspective::Omniscient, BeliefStatement::First { room: belief }, SampleRole::Negative),
            ]
        }
        (BeliefOrder::Second, _) => {
            let model = timeline.ledger.final_model(AgentId::Participant);
            [
                (Perspective::Omniscient, BeliefStatement::Second { room: model }, SampleRole::Positive),
                (Perspective::Omniscient, BeliefStatement::Second { room: flip(model) }, SampleRole::Negative),
            ]
        }
    };
    pairs
        .into_iter()
        .map(|(perspective, statement, role)| ProbeSample {
            perspective,
            statement,
            role,
            labels: label_sample(timeline, perspective, statement).expect("strategy pairs are well-formed"),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{bundled_map, AgentState, DoorState, ObjectLocation, ObjectState, PaletteColor};
    use std::sync::Arc;

    fn world(prot: Cell, door0_open: bool) -> WorldState {
        let map = Arc::new(bundled_map(0).unwrap());
        let colors = [PaletteColor::Red, PaletteColor::Green, PaletteColor::Blue];
        let doors = map
            .doors
            .iter()
            .enumerate()
            .map(|(i, _)| DoorState { open: i != 0 || door0_open, color: colors[i] })
            .collect();
        let agents = [
            AgentState { id: AgentId::Protagonist, position: prot, orientation: Orientation::South, color: PaletteColor::Yellow },
            AgentState {
                id: AgentId::Participant,
                position: Cell::new(8, 5),
                orientation: Orientation::North,
                color: PaletteColor::Purple,
            },
        ];
        let object = ObjectState { color: PaletteColor::White, location: ObjectLocation::Floor(Cell::new(4, 1)) };
        WorldState::new(map, agents, doors, object).unwrap()
    }

    /// Independent oracle: visible = every non-wall cell connected to the
    /// viewer through non-wall cells that are not closed doors.
    fn oracle(state: &WorldState, start: Cell) -> std::collections::BTreeSet<Cell> {
        let map = state.map();
        let open = |c: Cell| match map.kind(c) {
            CellKind::Wall => false,
            CellKind::Floor => true,
            CellKind::Door(d) => state.doors[d].open,
        };
        let mut seen = std::collections::BTreeSet::from([start]);
        loop {
            let grow: Vec<Cell> = map
                .cells()
                .filter(|c| !seen.contains(c) && open(*c))
                .filter(|c| {
                    seen.iter().any(|s| (s.col as isize - c.col as isize).abs() + (s.row as isize - c.row as isize).abs() == 1)
                })
                .collect();
            if grow.is_empty() {
                return seen;
            }
            seen.extend(grow);
        }
    }

    #[test]
    fn sealed_room_sees_only_itself() {
        let map = bundled_map(0).unwrap();
        let room0 = &map.rooms[0];
        let s = world(room0.cells[0], false);
        let field = visible_cells(&s, Perspective::Protagonist);
        let got: std::collections::BTreeSet<Cell> = field.cells().collect();
        assert_eq!(got, room0.cells.iter().copied().collect());
    }

    #[test]
    fn open_door_matches_oracle() {
        let map = bundled_map(0).unwrap();
        let start = map.rooms[0].cells[0];
        let s = world(start, true);
        let field = visible_cells(&s, Perspective::Protagonist);
        let got: std::collections::BTreeSet<Cell> = field.cells().collect();
        assert_eq!(got, oracle(&s, start));
        // Everything non-wall is reachable when every door is open.
        assert_eq!(got.len(), map.width * map.height - map.wall_count());
    }

    #[test]
    fn omniscient_sees_all_non_wall() {
        let s = world(Cell::new(1, 4), false);
        let field = visible_cells(&s, Perspective::Omniscient);
        assert_eq!(field.len(), 70 - s.map().wall_count());
    }

    #[test]
    fn opening_doors_never_shrinks_view() {
        let map = bundled_map(0).unwrap();
        for cell in map.cells().filter(|c| map.kind(*c) == CellKind::Floor) {
            if cell == Cell::new(8, 5) || cell == Cell::new(4, 1) {
                continue;
            }
            let closed = visible_cells(&world(cell, false), Perspective::Protagonist);
            let open = visible_cells(&world(cell, true), Perspective::Protagonist);
            assert!(closed.is_subset_of(&open), "{cell}");
        }
    }

    #[test]
    fn object_never_seen_stays_unknown() {
        let map = bundled_map(0).unwrap();
        // Protagonist sealed in room 0, object in room 1.
        let s = world(map.rooms[0].cells[0], false);
        let frames = vec![s.clone(), crate::gridworld::step(&s, [crate::gridworld::Action::Noop; 2])];
        let ledger = track_beliefs(&frames);
        assert!(ledger.believed[0].iter().all(|b| *b == BelievedLocation::Unknown));
        assert!(ledger.believed[1].iter().all(|b| *b == BelievedLocation::Room(1)));
    }
}
