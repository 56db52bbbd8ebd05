//! Static map model: cells, rooms, hallway and doors.
//!
//! Maps are authored as ASCII grids (`#` wall, `.` floor, `D` door). Regions
//! are discovered by flood fill over floor cells with doors acting as
//! boundaries; the region touching the most doors is the hallway and every
//! other region is a room.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A grid coordinate. `col` grows east, `row` grows south.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

impl Cell {
    pub const fn new(col: usize, row: usize) -> Self {
        Cell { col, row }
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

/// Facing direction. The declaration order N, E, S, W is also the BFS
/// neighbor expansion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    North,
    East,
    South,
    West,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::North,
        Orientation::East,
        Orientation::South,
        Orientation::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    pub fn right(self) -> Self {
        Self::from_index(self.index() + 1)
    }

    pub fn left(self) -> Self {
        Self::from_index(self.index() + 3)
    }

    pub fn reverse(self) -> Self {
        Self::from_index(self.index() + 2)
    }

    /// Number of clockwise quarter turns needed to go from `self` to `to`.
    pub fn turns_to(self, to: Orientation) -> usize {
        (to.index() + 4 - self.index()) % 4
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Orientation::North => (0, -1),
            Orientation::East => (1, 0),
            Orientation::South => (0, 1),
            Orientation::West => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Wall,
    Floor,
    Door(usize),
}

/// Which region a cell belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Wall,
    Hallway,
    Room(usize),
    Door(usize),
    /// Floor region that is neither the hallway nor counted as a room.
    /// Only appears on maps that fail validation.
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomRegion {
    pub id: usize,
    /// Row-major sorted cells.
    pub cells: Vec<Cell>,
    pub doors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Door {
    pub id: usize,
    pub cell: Cell,
    /// Room this door seals, when it borders exactly one room.
    pub room: Option<usize>,
    /// Room cell adjacent to the door.
    pub room_side: Option<Cell>,
    /// Hallway cell adjacent to the door.
    pub hallway_side: Option<Cell>,
}

impl Door {
    /// Direction of travel from the hallway into the room through this door.
    pub fn inward(&self) -> Option<Orientation> {
        let inside = self.room_side?;
        direction_between(self.cell, inside)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    pub map_id: usize,
    pub width: usize,
    pub height: usize,
    cells: Vec<CellKind>,
    regions: Vec<Region>,
    pub rooms: Vec<RoomRegion>,
    pub hallway: Vec<Cell>,
    pub doors: Vec<Door>,
    /// Floor components that could not be classified (room/hallway); used only
    /// by validation.
    unassigned: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("map rows have unequal lengths (row {row} has {found}, expected {expected})")]
    NonRectangular { row: usize, expected: usize, found: usize },
    #[error("unknown map character {ch:?} at {cell}")]
    UnknownChar { ch: char, cell: Cell },
    #[error("map is empty")]
    Empty,
    #[error("expected 3 rooms, found {found}")]
    RoomCountNot3 { found: usize },
    #[error("door {door} at {cell} does not separate a room from the hallway")]
    DoorNotOnBoundary { door: usize, cell: Cell },
    #[error("room {room} has {doors} doors, expected exactly one")]
    RoomDoorCount { room: usize, doors: usize },
    #[error("non-wall cell {cell} on the map border")]
    OpenBorder { cell: Cell },
    #[error("map has no hallway region")]
    NoHallway,
}

/// One violated map invariant.
pub type Finding = MapError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

pub(crate) fn direction_between(from: Cell, to: Cell) -> Option<Orientation> {
    let dc = to.col as isize - from.col as isize;
    let dr = to.row as isize - from.row as isize;
    Orientation::ALL.into_iter().find(|o| o.delta() == (dc, dr))
}

impl GridMap {
    /// Builds a map from raw cell kinds and classifies regions. No invariant
    /// is enforced here; see [`validate_map`].
    pub fn from_cells(map_id: usize, width: usize, height: usize, kinds: Vec<CellKind>) -> Self {
        assert_eq!(kinds.len(), width * height, "cell count must equal width*height");
        // Renumber doors in row-major order so door ids are canonical.
        let mut kinds = kinds;
        let mut door_cells = Vec::new();
        for (i, k) in kinds.iter_mut().enumerate() {
            if let CellKind::Door(id) = k {
                *id = door_cells.len();
                door_cells.push(Cell::new(i % width, i / width));
            }
        }

        let mut map = GridMap {
            map_id,
            width,
            height,
            cells: kinds,
            regions: vec![Region::Wall; width * height],
            rooms: Vec::new(),
            hallway: Vec::new(),
            doors: Vec::new(),
            unassigned: Vec::new(),
        };

        // Floor components, discovered in row-major order.
        let mut component = vec![usize::MAX; width * height];
        let mut components: Vec<Vec<Cell>> = Vec::new();
        for start in 0..width * height {
            if map.cells[start] != CellKind::Floor || component[start] != usize::MAX {
                continue;
            }
            let id = components.len();
            let mut cells = Vec::new();
            let mut queue = VecDeque::from([start]);
            component[start] = id;
            while let Some(i) = queue.pop_front() {
                let cell = Cell::new(i % width, i / width);
                cells.push(cell);
                for o in Orientation::ALL {
                    if let Some(n) = map.neighbor(cell, o) {
                        let j = map.index(n);
                        if map.cells[j] == CellKind::Floor && component[j] == usize::MAX {
                            component[j] = id;
                            queue.push_back(j);
                        }
                    }
                }
            }
            cells.sort();
            components.push(cells);
        }

        // Doors adjacent to each component.
        let mut comp_doors: Vec<Vec<usize>> = vec![Vec::new(); components.len()];
        for (d, &cell) in door_cells.iter().enumerate() {
            for o in Orientation::ALL {
                if let Some(n) = map.neighbor(cell, o) {
                    let c = component[map.index(n)];
                    if c != usize::MAX && !comp_doors[c].contains(&d) {
                        comp_doors[c].push(d);
                    }
                }
            }
        }

        // Hallway: most doors, then largest, then earliest.
        let hallway = (0..components.len()).max_by(|&a, &b| {
            comp_doors[a]
                .len()
                .cmp(&comp_doors[b].len())
                .then(components[a].len().cmp(&components[b].len()))
                .then(b.cmp(&a))
        });

        let mut room_of_component = vec![None; components.len()];
        for (c, cells) in components.iter().enumerate() {
            if Some(c) == hallway {
                for &cell in cells {
                    let i = map.index(cell);
                    map.regions[i] = Region::Hallway;
                }
                map.hallway = cells.clone();
            } else if !comp_doors[c].is_empty() {
                let id = map.rooms.len();
                room_of_component[c] = Some(id);
                for &cell in cells {
                    let i = map.index(cell);
                    map.regions[i] = Region::Room(id);
                }
                map.rooms.push(RoomRegion { id, cells: cells.clone(), doors: Vec::new() });
            } else {
                for &cell in cells {
                    let i = map.index(cell);
                    map.regions[i] = Region::Unassigned;
                }
                map.unassigned.push(cells.clone());
            }
        }

        for (d, &cell) in door_cells.iter().enumerate() {
            let i = map.index(cell);
            map.regions[i] = Region::Door(d);
            let mut rooms_seen = Vec::new();
            let mut room_side = None;
            let mut hallway_side = None;
            for o in Orientation::ALL {
                if let Some(n) = map.neighbor(cell, o) {
                    match map.regions[map.index(n)] {
                        Region::Room(r) => {
                            if !rooms_seen.contains(&r) {
                                rooms_seen.push(r);
                            }
                            room_side.get_or_insert(n);
                        }
                        Region::Hallway => {
                            hallway_side.get_or_insert(n);
                        }
                        _ => {}
                    }
                }
            }
            let room = if rooms_seen.len() == 1 { Some(rooms_seen[0]) } else { None };
            if let Some(r) = room {
                map.rooms[r].doors.push(d);
            }
            map.doors.push(Door { id: d, cell, room, room_side, hallway_side });
        }
        map
    }

    fn index(&self, cell: Cell) -> usize {
        cell.row * self.width + cell.col
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.col < self.width && cell.row < self.height
    }

    pub fn kind(&self, cell: Cell) -> CellKind {
        self.cells[self.index(cell)]
    }

    pub fn region(&self, cell: Cell) -> Region {
        self.regions[self.index(cell)]
    }

    /// Room that owns `cell`; door cells belong to the room they seal.
    pub fn room_of(&self, cell: Cell) -> Option<usize> {
        match self.region(cell) {
            Region::Room(r) => Some(r),
            Region::Door(d) => self.doors[d].room,
            _ => None,
        }
    }

    pub fn neighbor(&self, cell: Cell, o: Orientation) -> Option<Cell> {
        let (dc, dr) = o.delta();
        let col = cell.col.checked_add_signed(dc)?;
        let row = cell.row.checked_add_signed(dr)?;
        let n = Cell::new(col, row);
        self.in_bounds(n).then_some(n)
    }

    /// Every cell, row-major.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| Cell::new(c, r)))
    }

    pub fn is_walkable_kind(&self, cell: Cell) -> bool {
        !matches!(self.kind(cell), CellKind::Wall)
    }

    pub fn wall_count(&self) -> usize {
        self.cells.iter().filter(|k| **k == CellKind::Wall).count()
    }

    /// The single door of `room`, if it has one.
    pub fn room_door(&self, room: usize) -> Option<&Door> {
        let room = self.rooms.get(room)?;
        match room.doors.as_slice() {
            [d] => Some(&self.doors[*d]),
            _ => None,
        }
    }

    pub fn cell_index(&self, cell: Cell) -> usize {
        self.index(cell)
    }

    /// Renders the map back to its `#`/`.`/`D` text form.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(match self.kind(Cell::new(c, r)) {
                    CellKind::Wall => '#',
                    CellKind::Floor => '.',
                    CellKind::Door(_) => 'D',
                });
            }
            out.push('\n');
        }
        out
    }

    /// Returns a copy with one cell replaced, regions recomputed.
    pub fn with_cell(&self, cell: Cell, kind: CellKind) -> GridMap {
        let mut kinds = self.cells.clone();
        let i = self.index(cell);
        kinds[i] = kind;
        GridMap::from_cells(self.map_id, self.width, self.height, kinds)
    }
}

/// Parses the text grid without checking room/door invariants.
pub fn parse_layout(map_id: usize, text: &str) -> Result<GridMap, MapError> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    if rows.is_empty() {
        return Err(MapError::Empty);
    }
    let width = rows[0].chars().count();
    let mut kinds = Vec::with_capacity(width * rows.len());
    for (r, line) in rows.iter().enumerate() {
        let found = line.chars().count();
        if found != width {
            return Err(MapError::NonRectangular { row: r, expected: width, found });
        }
        for (c, ch) in line.chars().enumerate() {
            kinds.push(match ch {
                '#' => CellKind::Wall,
                '.' => CellKind::Floor,
                'D' => CellKind::Door(0),
                other => return Err(MapError::UnknownChar { ch: other, cell: Cell::new(c, r) }),
            });
        }
    }
    Ok(GridMap::from_cells(map_id, width, rows.len(), kinds))
}

/// Parses and validates a map; the first finding becomes the error.
pub fn parse_map(map_id: usize, text: &str) -> Result<GridMap, MapError> {
    let map = parse_layout(map_id, text)?;
    match validate_map(&map).findings.into_iter().next() {
        Some(finding) => Err(finding),
        None => Ok(map),
    }
}

pub fn validate_map(map: &GridMap) -> ValidationReport {
    let mut findings = Vec::new();

    for cell in map.cells() {
        let border = cell.row == 0 || cell.col == 0 || cell.row + 1 == map.height || cell.col + 1 == map.width;
        if border && map.kind(cell) != CellKind::Wall {
            findings.push(MapError::OpenBorder { cell });
        }
    }

    if map.hallway.is_empty() && !map.rooms.is_empty() {
        findings.push(MapError::NoHallway);
    }

    let room_count = map.rooms.len() + map.unassigned.len();
    if room_count != 3 {
        findings.push(MapError::RoomCountNot3 { found: room_count });
    }

    for door in &map.doors {
        let mut floor_neighbors = 0;
        for o in Orientation::ALL {
            if let Some(n) = map.neighbor(door.cell, o) {
                if map.kind(n) != CellKind::Wall {
                    floor_neighbors += 1;
                }
            }
        }
        let ok = door.room.is_some()
            && door.hallway_side.is_some()
            && floor_neighbors == 2
            && door.inward().is_some()
            && door.hallway_side.and_then(|h| direction_between(h, door.cell)) == door.inward();
        if !ok {
            findings.push(MapError::DoorNotOnBoundary { door: door.id, cell: door.cell });
        }
    }

    for room in &map.rooms {
        if room.doors.len() != 1 {
            findings.push(MapError::RoomDoorCount { room: room.id, doors: room.doors.len() });
        }
    }
    for (i, _) in map.unassigned.iter().enumerate() {
        findings.push(MapError::RoomDoorCount { room: map.rooms.len() + i, doors: 0 });
    }

    ValidationReport { findings }
}

const BUNDLED: [&str; 27] = [
    include_str!("../../maps/map_00.txt"),
    include_str!("../../maps/map_01.txt"),
    include_str!("../../maps/map_02.txt"),
    include_str!("../../maps/map_03.txt"),
    include_str!("../../maps/map_04.txt"),
    include_str!("../../maps/map_05.txt"),
    include_str!("../../maps/map_06.txt"),
    include_str!("../../maps/map_07.txt"),
    include_str!("../../maps/map_08.txt"),
    include_str!("../../maps/map_09.txt"),
    include_str!("../../maps/map_10.txt"),
    include_str!("../../maps/map_11.txt"),
    include_str!("../../maps/map_12.txt"),
    include_str!("../../maps/map_13.txt"),
    include_str!("../../maps/map_14.txt"),
    include_str!("../../maps/map_15.txt"),
    include_str!("../../maps/map_16.txt"),
    include_str!("../../maps/map_17.txt"),
    include_str!("../../maps/map_18.txt"),
    include_str!("../../maps/map_19.txt"),
    include_str!("../../maps/map_20.txt"),
    include_str!("../../maps/map_21.txt"),
    include_str!("../../maps/map_22.txt"),
    include_str!("../../maps/map_23.txt"),
    include_str!("../../maps/map_24.txt"),
    include_str!("../../maps/map_25.txt"),
    include_str!("../../maps/map_26.txt"),
];

pub const BUNDLED_MAP_COUNT: usize = BUNDLED.len();

/// Raw text of bundled map `id` (`maps/map_{id:02}.txt`).
pub fn bundled_map_text(id: usize) -> Option<&'static str> {
    BUNDLED.get(id).copied()
}

pub fn bundled_map(id: usize) -> Result<GridMap, MapError> {
    let text = bundled_map_text(id).ok_or(MapError::Empty)?;
    parse_map(id, text)
}
