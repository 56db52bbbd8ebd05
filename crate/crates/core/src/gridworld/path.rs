//! Breadth-first path planning on the cell graph.

use std::collections::VecDeque;

use thiserror::Error;

use super::map::{direction_between, Cell, CellKind, GridMap, Orientation};
use super::world::{Action, DoorState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pose {
    pub cell: Cell,
    pub facing: Orientation,
}

/// How closed doors are treated by the planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DoorPolicy {
    /// Closed doors are impassable.
    #[default]
    OpenOnly,
    /// Closed doors are traversable after a `Toggle`.
    ToggleClosed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("no path from {from} to {to}")]
    Unreachable { from: Cell, to: Cell },
}

fn passable(map: &GridMap, doors: &[DoorState], cell: Cell, policy: DoorPolicy) -> bool {
    match map.kind(cell) {
        CellKind::Wall => false,
        CellKind::Floor => true,
        CellKind::Door(d) => doors.get(d).map_or(true, |s| s.open) || policy == DoorPolicy::ToggleClosed,
    }
}

/// Shortest cell sequence from `from` to `to` (both inclusive), expanding
/// neighbors N, E, S, W. Cells listed in `avoid` are treated as blocked
/// unless they are the start.
pub fn shortest_cells(
    map: &GridMap,
    doors: &[DoorState],
    from: Cell,
    to: Cell,
    policy: DoorPolicy,
    avoid: &[Cell],
) -> Option<Vec<Cell>> {
    if !map.in_bounds(from) || !map.in_bounds(to) {
        return None;
    }
    if from == to {
        return Some(vec![from]);
    }
    let n = map.width * map.height;
    let mut parent = vec![usize::MAX; n];
    let start = map.cell_index(from);
    parent[start] = start;
    let mut queue = VecDeque::from([from]);
    while let Some(cell) = queue.pop_front() {
        for o in Orientation::ALL {
            let Some(next) = map.neighbor(cell, o) else { continue };
            let j = map.cell_index(next);
            if parent[j] != usize::MAX || !passable(map, doors, next, policy) || avoid.contains(&next) {
                continue;
            }
            parent[j] = map.cell_index(cell);
            if next == to {
                let mut path = vec![to];
                let mut cur = j;
                while cur != start {
                    cur = parent[cur];
                    path.push(Cell::new(cur % map.width, cur / map.width));
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back(next);
        }
    }
    None
}

/// Converts a cell path into turn/toggle/forward actions starting from `facing`.
pub fn cells_to_actions(
    map: &GridMap,
    doors: &[DoorState],
    path: &[Cell],
    mut facing: Orientation,
) -> Vec<Action> {
    let mut actions = Vec::new();
    for pair in path.windows(2) {
        let dir = direction_between(pair[0], pair[1]).expect("path cells must be 4-adjacent");
        match facing.turns_to(dir) {
            0 => {}
            1 => actions.push(Action::TurnRight),
            2 => actions.extend([Action::TurnRight, Action::TurnRight]),
            _ => actions.push(Action::TurnLeft),
        }
        facing = dir;
        if let CellKind::Door(d) = map.kind(pair[1]) {
            if doors.get(d).is_some_and(|s| !s.open) {
                actions.push(Action::Toggle);
            }
        }
        actions.push(Action::Forward);
    }
    actions
}

/// Plans an action sequence taking an agent at `from` to cell `to`.
///
/// The number of `Forward` actions is the minimal cell distance under
/// `policy`; among such routes the one with the fewest turns is taken.
pub fn plan_path(
    map: &GridMap,
    doors: &[DoorState],
    from: Pose,
    to: Cell,
    policy: DoorPolicy,
) -> Result<Vec<Action>, PathError> {
    plan_path_avoiding(map, doors, from, to, policy, &[])
}

pub fn plan_path_avoiding(
    map: &GridMap,
    doors: &[DoorState],
    from: Pose,
    to: Cell,
    policy: DoorPolicy,
    avoid: &[Cell],
) -> Result<Vec<Action>, PathError> {
    let cells = fewest_turn_cells(map, doors, from, to, policy, avoid)
        .ok_or(PathError::Unreachable { from: from.cell, to })?;
    Ok(cells_to_actions(map, doors, &cells, from.facing))
}

fn turn_cost(from: Orientation, to: Orientation) -> usize {
    match from.turns_to(to) {
        0 => 0,
        2 => 2,
        _ => 1,
    }
}

/// Among all shortest cell paths, the one needing the fewest turns.
/// Ties go to the earliest direction in N, E, S, W order.
fn fewest_turn_cells(
    map: &GridMap,
    doors: &[DoorState],
    from: Pose,
    to: Cell,
    policy: DoorPolicy,
    avoid: &[Cell],
) -> Option<Vec<Cell>> {
    if !map.in_bounds(from.cell) || !map.in_bounds(to) {
        return None;
    }
    if from.cell == to {
        return Some(vec![to]);
    }
    // Distances to the target; the start itself may sit on an avoided cell.
    let n = map.width * map.height;
    let mut dist = vec![usize::MAX; n];
    dist[map.cell_index(to)] = 0;
    let mut order = vec![to];
    let mut queue = VecDeque::from([to]);
    while let Some(cell) = queue.pop_front() {
        let d = dist[map.cell_index(cell)];
        if cell == from.cell {
            continue;
        }
        if cell != to && !passable(map, doors, cell, policy) {
            continue;
        }
        for o in Orientation::ALL {
            let Some(next) = map.neighbor(cell, o) else { continue };
            let j = map.cell_index(next);
            if dist[j] != usize::MAX || (next != from.cell && (avoid.contains(&next) || !passable(map, doors, next, policy))) {
                continue;
            }
            dist[j] = d + 1;
            order.push(next);
            queue.push_back(next);
        }
    }
    if dist[map.cell_index(from.cell)] == usize::MAX || !passable(map, doors, to, policy) || avoid.contains(&to) {
        return None;
    }
    // best[cell][facing]: fewest turns from `cell` already facing `facing`.
    let mut best = vec![[usize::MAX; 4]; n];
    best[map.cell_index(to)] = [0; 4];
    let mut choice = vec![[None; 4]; n];
    for &cell in &order[1..] {
        let i = map.cell_index(cell);
        for facing in Orientation::ALL {
            for o in Orientation::ALL {
                let Some(next) = map.neighbor(cell, o) else { continue };
                let j = map.cell_index(next);
                if dist[j] == usize::MAX || dist[j] + 1 != dist[i] {
                    continue;
                }
                let cost = turn_cost(facing, o) + best[j][o.index()];
                if cost < best[i][facing.index()] {
                    best[i][facing.index()] = cost;
                    choice[i][facing.index()] = Some((next, o));
                }
            }
        }
    }
    let mut path = vec![from.cell];
    let (mut cell, mut facing) = (from.cell, from.facing);
    while cell != to {
        let (next, o) = choice[map.cell_index(cell)][facing.index()]?;
        path.push(next);
        cell = next;
        facing = o;
    }
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::map::{bundled_map, parse_layout};
    use crate::gridworld::palette::PaletteColor;

    fn open_doors(map: &GridMap) -> Vec<DoorState> {
        map.doors.iter().map(|_| DoorState { open: true, color: PaletteColor::Red }).collect()
    }

    #[test]
    fn same_cell_is_empty_plan() {
        let map = bundled_map(0).unwrap();
        let doors = open_doors(&map);
        let pose = Pose { cell: Cell::new(2, 4), facing: Orientation::West };
        assert_eq!(plan_path(&map, &doors, pose, pose.cell, DoorPolicy::OpenOnly).unwrap(), vec![]);
    }

    #[test]
    fn straight_corridor() {
        let map = parse_layout(0, "######\n#....#\n######\n").unwrap();
        let pose = Pose { cell: Cell::new(1, 1), facing: Orientation::East };
        let plan = plan_path(&map, &[], pose, Cell::new(4, 1), DoorPolicy::OpenOnly).unwrap();
        assert_eq!(plan, vec![Action::Forward; 3]);
    }

    #[test]
    fn reverse_costs_two_right_turns() {
        let map = parse_layout(0, "#####\n#...#\n#####\n").unwrap();
        let pose = Pose { cell: Cell::new(2, 1), facing: Orientation::East };
        let plan = plan_path(&map, &[], pose, Cell::new(1, 1), DoorPolicy::OpenOnly).unwrap();
        assert_eq!(plan, vec![Action::TurnRight, Action::TurnRight, Action::Forward]);
    }

    #[test]
    fn closed_door_policies() {
        let map = bundled_map(0).unwrap();
        let mut doors = open_doors(&map);
        let door = &map.doors[0];
        doors[0].open = false;
        let from = Pose { cell: door.hallway_side.unwrap(), facing: door.inward().unwrap() };
        let inside = door.room_side.unwrap();
        assert!(matches!(
            plan_path(&map, &doors, from, inside, DoorPolicy::OpenOnly),
            Err(PathError::Unreachable { .. })
        ));
        let plan = plan_path(&map, &doors, from, inside, DoorPolicy::ToggleClosed).unwrap();
        assert_eq!(plan, vec![Action::Toggle, Action::Forward, Action::Forward]);
    }

    #[test]
    fn avoid_reroutes() {
        let map = parse_layout(0, "#####\n#...#\n#...#\n#####\n").unwrap();
        let a = Cell::new(1, 1);
        let b = Cell::new(3, 1);
        let direct = shortest_cells(&map, &[], a, b, DoorPolicy::OpenOnly, &[]).unwrap();
        assert_eq!(direct.len(), 3);
        let around = shortest_cells(&map, &[], a, b, DoorPolicy::OpenOnly, &[Cell::new(2, 1)]).unwrap();
        assert_eq!(around.len(), 5);
    }

    #[test]
    fn prefers_fewer_turns() {
        let map = parse_layout(0, "######\n#....#\n#....#\n#....#\n######\n").unwrap();
        let pose = Pose { cell: Cell::new(1, 1), facing: Orientation::East };
        let plan = plan_path(&map, &[], pose, Cell::new(4, 3), DoorPolicy::OpenOnly).unwrap();
        let forwards = plan.iter().filter(|a| **a == Action::Forward).count();
        let turns = plan.len() - forwards;
        assert_eq!((forwards, turns), (5, 1));
    }
}
