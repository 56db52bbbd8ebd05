//! Scenario enumeration, staged timeline construction and dataset splits.
//!
//! Every timeline follows the same three-stage unexpected-transfer script:
//!
//! 1. Both agents see the object just inside the source room's door. The
//!    protagonist walks into the remaining room and, in the false-belief
//!    condition, closes its door. The participant walks to the source door.
//! 2. The participant carries the object to the destination room and drops
//!    it just inside the door.
//! 3. Settle. For second-order stories the participant first seals itself
//!    in the source room; in the false-belief condition the protagonist then
//!    reopens its door and sees the object, leaving the participant's model
//!    of the protagonist stale.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{
    bundled_map, plan_path_avoiding, step_logged, Action, AgentId, AgentState, Cell, CellKind, DoorPolicy,
    DoorState, GridMap, MapError, ObjectLocation, ObjectState, Orientation, PaletteColor, PathError, Pose,
    WorldState, BUNDLED_MAP_COUNT,
};
use crate::perception::{location_of, track_beliefs, visible_cells, BeliefLedger, BelievedLocation, PerceptionField, Perspective};

/// Base samples per map: 2 starts x 2 orientations x 6 transfers.
pub const BASE_SAMPLES_PER_MAP: usize = 24;
pub const BASE_SAMPLES: usize = BUNDLED_MAP_COUNT * BASE_SAMPLES_PER_MAP;
pub const MIN_FRAMES: usize = 30;
pub const MAX_FRAMES: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "TB")]
    TrueBelief,
    #[serde(rename = "FB")]
    FalseBelief,
}

impl Condition {
    pub const BOTH: [Condition; 2] = [Condition::TrueBelief, Condition::FalseBelief];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn short(self) -> &'static str {
        match self {
            Condition::TrueBelief => "TB",
            Condition::FalseBelief => "FB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeliefOrder {
    First,
    Second,
}

impl BeliefOrder {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Ordered (source room, destination room) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transfer {
    pub source: usize,
    pub destination: usize,
}

pub const TRANSFERS: [Transfer; 6] = [
    Transfer { source: 0, destination: 1 },
    Transfer { source: 0, destination: 2 },
    Transfer { source: 1, destination: 0 },
    Transfer { source: 1, destination: 2 },
    Transfer { source: 2, destination: 0 },
    Transfer { source: 2, destination: 1 },
];

impl Transfer {
    pub fn index(self) -> usize {
        TRANSFERS.iter().position(|t| *t == self).expect("transfer must be one of TRANSFERS")
    }

    /// The room not involved in the transfer; it becomes the protagonist's.
    pub fn bystander_room(self) -> usize {
        3 - self.source - self.destination
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub map_id: usize,
    pub start_variant: u8,
    pub orientation_variant: u8,
    pub transfer: Transfer,
    pub condition: Condition,
    pub order: BeliefOrder,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Index of the underlying base sample in `[0, 648)`.
    pub fn base_index(&self) -> usize {
        ((self.map_id * 2 + self.start_variant as usize) * 2 + self.orientation_variant as usize) * 6
            + self.transfer.index()
    }

    /// Identifier shared by the TB and FB members of a pair.
    pub fn pair_id(&self) -> usize {
        self.order.index() * BASE_SAMPLES + self.base_index()
    }

    pub fn spec_id(&self) -> usize {
        self.pair_id() * 2 + self.condition.code() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("no maps selected")]
    EmptyMapSet,
    #[error("no belief orders selected")]
    EmptyOrderSet,
    #[error("map {0} is not available")]
    UnknownMap(usize),
    #[error("map error: {0}")]
    Map(#[from] MapError),
    #[error("agent {agent:?} cannot reach {to} (invalid map?)")]
    Unreachable { agent: AgentId, to: Cell },
    #[error("script needs {needed} frames but the timeline has {frame_count}")]
    StageOverflow { needed: usize, frame_count: usize },
    #[error("frame count {0} outside [{MIN_FRAMES}, {MAX_FRAMES}]")]
    FrameCount(usize),
    #[error("room {0} has no floor cell behind its door")]
    RoomTooShallow(usize),
    #[error("tick {tick}: scripted action {action:?} by {agent:?} was refused")]
    ActionRefused { tick: u32, agent: AgentId, action: Action },
}

impl From<PathError> for ScenarioError {
    fn from(e: PathError) -> Self {
        match e {
            PathError::Unreachable { to, .. } => ScenarioError::Unreachable { agent: AgentId::Protagonist, to },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub map_ids: Vec<usize>,
    pub orders: Vec<BeliefOrder>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig { map_ids: (0..BUNDLED_MAP_COUNT).collect(), orders: vec![BeliefOrder::First], seed: 0 }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// Full cross product ordered by (order, map, start, orientation, transfer, condition).
pub fn enumerate_scenarios(config: &ScenarioConfig) -> Result<Vec<ScenarioSpec>, ScenarioError> {
    if config.map_ids.is_empty() {
        return Err(ScenarioError::EmptyMapSet);
    }
    if config.orders.is_empty() {
        return Err(ScenarioError::EmptyOrderSet);
    }
    if let Some(&bad) = config.map_ids.iter().find(|&&m| m >= BUNDLED_MAP_COUNT) {
        return Err(ScenarioError::UnknownMap(bad));
    }
    let mut specs = Vec::with_capacity(config.orders.len() * config.map_ids.len() * BASE_SAMPLES_PER_MAP * 2);
    for &order in &config.orders {
        for &map_id in &config.map_ids {
            for start_variant in 0..2u8 {
                for orientation_variant in 0..2u8 {
                    for transfer in TRANSFERS {
                        for condition in Condition::BOTH {
                            let mut spec = ScenarioSpec {
                                map_id,
                                start_variant,
                                orientation_variant,
                                transfer,
                                condition,
                                order,
                                seed: 0,
                            };
                            spec.seed = derive_seed(config.seed, spec.pair_id() as u64);
                            specs.push(spec);
                        }
                    }
                }
            }
        }
    }
    Ok(specs)
}

/// Palette assignment for one map: three room colors, then the two agents
/// and the object from the remaining colors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneColors {
    pub rooms: [PaletteColor; 3],
    pub protagonist: PaletteColor,
    pub participant: PaletteColor,
    pub object: PaletteColor,
}

impl SceneColors {
    pub fn agent(&self, agent: AgentId) -> PaletteColor {
        match agent {
            AgentId::Protagonist => self.protagonist,
            AgentId::Participant => self.participant,
        }
    }
}

pub fn scene_colors(map_id: usize) -> SceneColors {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0xC0_10_25, map_id as u64));
    let mut colors = PaletteColor::ALL;
    colors.shuffle(&mut rng);
    SceneColors {
        rooms: [colors[0], colors[1], colors[2]],
        protagonist: colors[3],
        participant: colors[4],
        object: colors[5],
    }
}

/// Starting poses `[start_variant][orientation_variant] -> [protagonist, participant]`.
pub fn start_poses(map: &GridMap) -> [[[Pose; 2]; 2]; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0x57_A7_75, map.map_id as u64));
    let door_fronts: Vec<Cell> = map.doors.iter().filter_map(|d| d.hallway_side).collect();
    let mut cells: Vec<Cell> = map.hallway.iter().copied().filter(|c| !door_fronts.contains(c)).collect();
    cells.shuffle(&mut rng);
    let mut orientation_pairs: Vec<[Orientation; 2]> =
        Orientation::ALL.iter().flat_map(|&a| Orientation::ALL.iter().map(move |&b| [a, b])).collect();
    orientation_pairs.shuffle(&mut rng);
    let mut out = [[[Pose { cell: Cell::new(0, 0), facing: Orientation::North }; 2]; 2]; 2];
    for (s, starts) in out.iter_mut().enumerate() {
        for (o, poses) in starts.iter_mut().enumerate() {
            for (a, pose) in poses.iter_mut().enumerate() {
                *pose = Pose { cell: cells[s * 2 + a], facing: orientation_pairs[o][a] };
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub protagonist_room: usize,
    pub source: usize,
    pub destination: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageInterval {
    /// First frame of the stage (inclusive).
    pub start: usize,
    /// Last frame of the stage (inclusive); equals the next stage's start.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub spec: ScenarioSpec,
    pub roles: Roles,
    pub colors: SceneColors,
    pub frames: Vec<WorldState>,
    /// `actions[t]` takes `frames[t]` to `frames[t + 1]`.
    pub actions: Vec<[Action; 2]>,
    pub key_frames: [usize; 4],
    pub stages: [StageInterval; 3],
    pub ledger: BeliefLedger,
}

impl Timeline {
    pub fn map(&self) -> &GridMap {
        self.frames[0].map()
    }

    pub fn last_frame(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn field(&self, frame: usize, perspective: Perspective) -> PerceptionField {
        visible_cells(&self.frames[frame], perspective)
    }

    pub fn final_object_location(&self) -> BelievedLocation {
        let last = &self.frames[self.last_frame()];
        location_of(last.map(), last.object_cell())
    }

    pub fn room_color(&self, room: usize) -> PaletteColor {
        self.colors.rooms[room]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimelineOptions {
    /// Total frame count; `None` uses the per-order default.
    pub frame_count: Option<usize>,
}

pub fn default_frame_count(order: BeliefOrder) -> usize {
    match order {
        BeliefOrder::First => 36,
        BeliefOrder::Second => 48,
    }
}

/// Bundled maps, parsed once and shared.
#[derive(Debug, Clone)]
pub struct MapLibrary {
    maps: Vec<Arc<GridMap>>,
}

impl MapLibrary {
    pub fn bundled() -> Result<Self, MapError> {
        let maps = (0..BUNDLED_MAP_COUNT).map(|i| bundled_map(i).map(Arc::new)).collect::<Result<_, _>>()?;
        Ok(MapLibrary { maps })
    }

    pub fn get(&self, map_id: usize) -> Option<&Arc<GridMap>> {
        self.maps.get(map_id)
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn build(&self, spec: &ScenarioSpec, opts: &TimelineOptions) -> Result<Timeline, ScenarioError> {
        let map = self.get(spec.map_id).ok_or(ScenarioError::UnknownMap(spec.map_id))?;
        build_timeline(spec, map, opts)
    }
}

#[derive(Debug, Clone, Copy)]
enum Task {
    Reach(Cell),
    Face(Orientation),
    Act(Action),
}

type Script = VecDeque<Task>;

/// Next action for `agent`, popping tasks that are already satisfied.
/// `None` means the script is finished.
fn next_action(state: &WorldState, agent: AgentId, script: &mut Script) -> Result<Option<Action>, ScenarioError> {
    let me = *state.agent(agent);
    while let Some(task) = script.front().copied() {
        match task {
            Task::Reach(cell) if me.position == cell => {
                script.pop_front();
            }
            Task::Reach(cell) => {
                let pose = Pose { cell: me.position, facing: me.orientation };
                let other = state.agent(agent.other()).position;
                let doors = &state.doors;
                let map = state.map();
                return match plan_path_avoiding(map, doors, pose, cell, DoorPolicy::OpenOnly, &[other]) {
                    Ok(plan) => Ok(Some(plan[0])),
                    Err(_) => match plan_path_avoiding(map, doors, pose, cell, DoorPolicy::OpenOnly, &[]) {
                        // Only the other agent is in the way: wait for it.
                        Ok(_) => Ok(Some(Action::Noop)),
                        Err(_) => Err(ScenarioError::Unreachable { agent, to: cell }),
                    },
                };
            }
            Task::Face(o) if me.orientation == o => {
                script.pop_front();
            }
            Task::Face(o) => {
                return Ok(Some(if me.orientation.turns_to(o) == 3 { Action::TurnLeft } else { Action::TurnRight }));
            }
            Task::Act(action) => {
                script.pop_front();
                return Ok(Some(action));
            }
        }
    }
    Ok(None)
}

struct Runner {
    frames: Vec<WorldState>,
    actions: Vec<[Action; 2]>,
    limit: usize,
}

impl Runner {
    fn state(&self) -> &WorldState {
        self.frames.last().expect("runner always holds the initial frame")
    }

    fn push(&mut self, actions: [Action; 2], scripted: [bool; 2]) -> Result<(), ScenarioError> {
        if self.frames.len() >= self.limit {
            return Err(ScenarioError::StageOverflow { needed: self.frames.len() + 1, frame_count: self.limit });
        }
        let (next, log) = step_logged(self.state(), actions);
        for agent in AgentId::BOTH {
            let i = agent.index();
            if let Some(_refusal) = log.refused[i] {
                // A blocked Forward is retried next tick; anything else is a script bug.
                if scripted[i] && actions[i] != Action::Forward {
                    return Err(ScenarioError::ActionRefused { tick: self.state().tick, agent, action: actions[i] });
                }
            }
        }
        self.frames.push(next);
        self.actions.push(actions);
        Ok(())
    }

    fn idle(&mut self, ticks: usize) -> Result<(), ScenarioError> {
        for _ in 0..ticks {
            self.push([Action::Noop; 2], [false; 2])?;
        }
        Ok(())
    }

    /// Runs both scripts to completion, protagonist resolving first.
    fn run(&mut self, mut scripts: [Script; 2]) -> Result<(), ScenarioError> {
        loop {
            let state = self.state().clone();
            let p = next_action(&state, AgentId::Protagonist, &mut scripts[0])?;
            let (after_p, _) = step_logged(&state, [p.unwrap_or(Action::Noop), Action::Noop]);
            let q = next_action(&after_p, AgentId::Participant, &mut scripts[1])?;
            if p.is_none() && q.is_none() {
                return Ok(());
            }
            self.push([p.unwrap_or(Action::Noop), q.unwrap_or(Action::Noop)], [p.is_some(), q.is_some()])?;
        }
    }
}

struct Placement {
    door: Cell,
    entry: Cell,
    inward: Orientation,
}

fn room_placement(map: &GridMap, room: usize) -> Result<Placement, ScenarioError> {
    let door = map.room_door(room).ok_or(ScenarioError::Map(MapError::RoomDoorCount {
        room,
        doors: map.rooms.get(room).map_or(0, |r| r.doors.len()),
    }))?;
    let entry = door.room_side.ok_or(ScenarioError::RoomTooShallow(room))?;
    let inward = door.inward().ok_or(ScenarioError::RoomTooShallow(room))?;
    if map.kind(entry) != CellKind::Floor || map.room_of(entry) != Some(room) {
        return Err(ScenarioError::RoomTooShallow(room));
    }
    Ok(Placement { door: door.cell, entry, inward })
}

fn initial_state(spec: &ScenarioSpec, map: &Arc<GridMap>, colors: &SceneColors, roles: &Roles) -> Result<WorldState, ScenarioError> {
    let poses = start_poses(map)[spec.start_variant as usize][spec.orientation_variant as usize];
    let agents = [
        AgentState {
            id: AgentId::Protagonist,
            position: poses[0].cell,
            orientation: poses[0].facing,
            color: colors.protagonist,
        },
        AgentState {
            id: AgentId::Participant,
            position: poses[1].cell,
            orientation: poses[1].facing,
            color: colors.participant,
        },
    ];
    let doors = map
        .doors
        .iter()
        .map(|d| DoorState { open: true, color: colors.rooms[d.room.unwrap_or(0)] })
        .collect();
    let src = room_placement(map, roles.source)?;
    let object = ObjectState { color: colors.object, location: ObjectLocation::Floor(src.entry) };
    WorldState::new(map.clone(), agents, doors, object).map_err(|_| ScenarioError::RoomTooShallow(roles.source))
}

struct Pads {
    lead: usize,
    before_transfer: usize,
}

fn run_script(
    spec: &ScenarioSpec,
    map: &Arc<GridMap>,
    initial: WorldState,
    roles: &Roles,
    frame_count: usize,
    pads: &Pads,
) -> Result<(Runner, [usize; 4], usize), ScenarioError> {
    let own = room_placement(map, roles.protagonist_room)?;
    let src = room_placement(map, roles.source)?;
    let dst = room_placement(map, roles.destination)?;
    let fb = spec.condition == Condition::FalseBelief;
    let close_own = match spec.order {
        BeliefOrder::First => fb,
        BeliefOrder::Second => true,
    };

    let mut runner = Runner { frames: vec![initial], actions: Vec::new(), limit: frame_count };

    // Stage 1
    runner.idle(pads.lead)?;
    runner.run([
        Script::from([
            Task::Reach(own.entry),
            Task::Face(own.inward.reverse()),
            Task::Act(if close_own { Action::Toggle } else { Action::Noop }),
        ]),
        Script::from([Task::Reach(src.door), Task::Face(src.inward)]),
    ])?;
    let k1 = runner.frames.len() - 1;

    // Stage 2
    runner.idle(pads.before_transfer)?;
    runner.run([
        Script::new(),
        Script::from([Task::Act(Action::Pickup), Task::Reach(dst.door), Task::Face(dst.inward), Task::Act(Action::Drop)]),
    ])?;
    let k2 = runner.frames.len() - 1;

    // Stage 3
    if spec.order == BeliefOrder::Second {
        runner.run([
            Script::new(),
            Script::from([Task::Reach(src.entry), Task::Face(src.inward.reverse()), Task::Act(Action::Toggle)]),
        ])?;
        runner.run([Script::from([Task::Act(if fb { Action::Toggle } else { Action::Noop })]), Script::new()])?;
    }
    // Settle so that the last key frame sits at least two frames after the drop.
    let settle = if runner.frames.len() > k2 + 1 { 1 } else { 2 };
    runner.idle(settle)?;
    let needed = runner.frames.len();
    let remaining = frame_count - needed;
    runner.idle(remaining)?;
    Ok((runner, [0, k1, k2, frame_count - 1], needed))
}

/// Builds the full staged timeline for one scenario.
pub fn build_timeline(spec: &ScenarioSpec, map: &Arc<GridMap>, opts: &TimelineOptions) -> Result<Timeline, ScenarioError> {
    let frame_count = opts.frame_count.unwrap_or_else(|| default_frame_count(spec.order));
    if !(MIN_FRAMES..=MAX_FRAMES).contains(&frame_count) {
        return Err(ScenarioError::FrameCount(frame_count));
    }
    if map.rooms.len() != 3 {
        return Err(ScenarioError::Map(MapError::RoomCountNot3 { found: map.rooms.len() }));
    }
    let roles = Roles {
        protagonist_room: spec.transfer.bystander_room(),
        source: spec.transfer.source,
        destination: spec.transfer.destination,
    };
    let colors = scene_colors(spec.map_id);
    let initial = initial_state(spec, map, &colors, &roles)?;

    // Dry run without padding measures the slack.
    let overflow = |e: ScenarioError| match e {
        ScenarioError::StageOverflow { .. } => ScenarioError::StageOverflow { needed: usize::MAX, frame_count },
        other => other,
    };
    let probe_limit = MAX_FRAMES * 4;
    let (_, _, needed) =
        run_script(spec, map, initial.clone(), &roles, probe_limit, &Pads { lead: 0, before_transfer: 0 })
            .map_err(overflow)?;
    if needed > frame_count {
        return Err(ScenarioError::StageOverflow { needed, frame_count });
    }
    let slack = frame_count - needed;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lead = rng.gen_range(0..=slack.min(3));
    let before_transfer = rng.gen_range(0..=(slack - lead).min(3));

    let (runner, key_frames, _) = run_script(spec, map, initial, &roles, frame_count, &Pads { lead, before_transfer })?;
    let ledger = track_beliefs(&runner.frames);
    let stages = [
        StageInterval { start: key_frames[0], end: key_frames[1] },
        StageInterval { start: key_frames[1], end: key_frames[2] },
        StageInterval { start: key_frames[2], end: key_frames[3] },
    ];
    Ok(Timeline { spec: *spec, roles, colors, frames: runner.frames, actions: runner.actions, key_frames, stages, ledger })
}

/// Pair-level train/val/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub test: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Test,
    Train,
    Val,
}

impl DatasetSplit {
    pub fn which(&self, base_index: usize) -> Option<SplitName> {
        if self.test.contains(&base_index) {
            Some(SplitName::Test)
        } else if self.train.contains(&base_index) {
            Some(SplitName::Train)
        } else if self.val.contains(&base_index) {
            Some(SplitName::Val)
        } else {
            None
        }
    }

    pub fn members(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Test => &self.test,
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
        }
    }
}

/// Canonical split of the 648 base pairs: 500 test, 111 train, 37 val.
pub fn split_dataset(seed: u64) -> DatasetSplit {
    split_pairs(&(0..BASE_SAMPLES).collect::<Vec<_>>(), seed)
}

/// Seeded shuffle of `pairs`, cut in the 500 : 148 test-to-rest ratio with the
/// rest divided 75 : 25 into train and val.
pub fn split_pairs(pairs: &[usize], seed: u64) -> DatasetSplit {
    let mut ids = pairs.to_vec();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5B_11_7));
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_test = (n * 500 + BASE_SAMPLES / 2) / BASE_SAMPLES;
    let rest = n - n_test;
    let n_train = (rest * 3 + 2) / 4;
    let val = ids.split_off(n_test + n_train);
    let train = ids.split_off(n_test);
    DatasetSplit { seed, test: ids, train, val }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::AgentId;
    use proptest::prelude::*;

    #[test]
    fn default_enumeration_counts() {
        let specs = enumerate_scenarios(&ScenarioConfig::default()).unwrap();
        assert_eq!(specs.len(), 1296);
        let pairs: std::collections::HashSet<_> = specs.iter().map(|s| s.pair_id()).collect();
        assert_eq!(pairs.len(), 648);
        let ids: std::collections::HashSet<_> = specs.iter().map(|s| s.spec_id()).collect();
        assert_eq!(ids.len(), 1296);
    }

    #[test]
    fn single_map_enumeration() {
        let config = ScenarioConfig { map_ids: vec![3], ..Default::default() };
        // 1 map x 2 starts x 2 orientations x 6 transfers x 2 conditions
        assert_eq!(enumerate_scenarios(&config).unwrap().len(), 1 * 2 * 2 * 6 * 2);
    }

    #[test]
    fn empty_map_set_rejected() {
        let config = ScenarioConfig { map_ids: vec![], ..Default::default() };
        assert_eq!(enumerate_scenarios(&config), Err(ScenarioError::EmptyMapSet));
    }

    #[test]
    fn pair_members_share_seed() {
        let specs = enumerate_scenarios(&ScenarioConfig::default()).unwrap();
        for pair in specs.chunks(2) {
            assert_eq!(pair[0].pair_id(), pair[1].pair_id());
            assert_eq!(pair[0].seed, pair[1].seed);
            assert_ne!(pair[0].condition, pair[1].condition);
        }
    }

    #[test]
    fn map0_first_spec_has_36_frames() {
        let lib = MapLibrary::bundled().unwrap();
        let spec = enumerate_scenarios(&ScenarioConfig::default()).unwrap()[0];
        let t = lib.build(&spec, &TimelineOptions::default()).unwrap();
        assert_eq!(t.frames.len(), 36);
        assert_eq!(t.key_frames[0], 0);
        assert_eq!(t.key_frames[3], 35);
        assert!(t.key_frames.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(t.stages[0].end, t.stages[1].start);
        assert_eq!(t.stages[1].end, t.stages[2].start);
    }

    #[test]
    fn frame_count_bounds() {
        let lib = MapLibrary::bundled().unwrap();
        let spec = enumerate_scenarios(&ScenarioConfig::default()).unwrap()[0];
        assert_eq!(lib.build(&spec, &TimelineOptions { frame_count: Some(12) }), Err(ScenarioError::FrameCount(12)));
        let t = lib.build(&spec, &TimelineOptions { frame_count: Some(48) }).unwrap();
        assert_eq!(t.frames.len(), 48);
    }

    #[test]
    fn tb_keeps_protagonist_door_open_during_transfer() {
        let lib = MapLibrary::bundled().unwrap();
        let specs = enumerate_scenarios(&ScenarioConfig { map_ids: vec![0, 9, 18], ..Default::default() }).unwrap();
        for spec in specs.iter().filter(|s| s.condition == Condition::TrueBelief) {
            let t = lib.build(spec, &TimelineOptions::default()).unwrap();
            let door = t.map().room_door(t.roles.protagonist_room).unwrap().id;
            for f in t.stages[1].start..=t.stages[1].end {
                assert!(t.frames[f].door_open(door));
            }
        }
    }

    #[test]
    fn object_ends_in_destination() {
        let lib = MapLibrary::bundled().unwrap();
        let spec = enumerate_scenarios(&ScenarioConfig::default()).unwrap()[5];
        let t = lib.build(&spec, &TimelineOptions::default()).unwrap();
        assert_eq!(t.final_object_location(), BelievedLocation::Room(t.roles.destination));
        let expected = if spec.condition == Condition::FalseBelief { t.roles.source } else { t.roles.destination };
        assert_eq!(t.ledger.final_belief(AgentId::Protagonist), BelievedLocation::Room(expected));
    }

    #[test]
    fn split_sizes() {
        let split = split_dataset(0);
        assert_eq!((split.test.len(), split.train.len(), split.val.len()), (500, 111, 37));
        assert_eq!(split, split_dataset(0));
    }

    #[test]
    fn second_order_model_separation() {
        let lib = MapLibrary::bundled().unwrap();
        let config = ScenarioConfig { map_ids: vec![2, 13, 22], orders: vec![BeliefOrder::Second], seed: 9 };
        for spec in enumerate_scenarios(&config).unwrap() {
            let t = lib.build(&spec, &TimelineOptions::default()).unwrap();
            assert_eq!(t.frames.len(), 48);
            let belief = t.ledger.final_belief(AgentId::Protagonist);
            let model = t.ledger.final_model(AgentId::Participant);
            // The participant last saw the protagonist shut in before the transfer.
            assert_eq!(model, BelievedLocation::Room(t.roles.source));
            match spec.condition {
                Condition::TrueBelief => assert_eq!(belief, model),
                Condition::FalseBelief => assert_eq!(belief, BelievedLocation::Room(t.roles.destination)),
            }
        }
    }

    #[test]
    fn pair_members_differ_only_in_protagonist_door_actions() {
        let lib = MapLibrary::bundled().unwrap();
        let specs = enumerate_scenarios(&ScenarioConfig { map_ids: vec![4, 20], ..Default::default() }).unwrap();
        for pair in specs.chunks(2) {
            let tb = lib.build(&pair[0], &TimelineOptions::default()).unwrap();
            let fb = lib.build(&pair[1], &TimelineOptions::default()).unwrap();
            assert_eq!(tb.key_frames, fb.key_frames);
            for (a, b) in tb.actions.iter().zip(&fb.actions) {
                assert_eq!(a[1], b[1]);
                if a[0] != b[0] {
                    assert_eq!((a[0], b[0]), (Action::Noop, Action::Toggle));
                }
            }
            for (a, b) in tb.frames.iter().zip(&fb.frames) {
                assert_eq!(a.agents, b.agents);
                assert_eq!(a.object, b.object);
            }
        }
    }

    proptest! {
        #[test]
        fn split_is_a_partition(seed in any::<u64>()) {
            let split = split_dataset(seed);
            let mut all: Vec<usize> = split.test.iter().chain(&split.train).chain(&split.val).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..BASE_SAMPLES).collect::<Vec<_>>());
        }
    }
}
