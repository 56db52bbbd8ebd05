//! Flat-color rasterizer for world states, one image per perspective.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{AgentState, Cell, CellKind, ObjectLocation, Orientation, Region, WorldState};
use crate::perception::{visible_cells, PerceptionField, Perspective};
use crate::scenario::Timeline;

pub const CELL_PX: usize = 42;
pub const MASK_RGB: [u8; 3] = [64, 64, 64];
pub const WALL_RGB: [u8; 3] = [100, 100, 100];
pub const HALLWAY_RGB: [u8; 3] = [0, 0, 0];
/// Number of frames in the evaluation subset.
pub const EVAL_FRAME_COUNT: usize = 7;

const DOOR_OUTLINE_PX: usize = 4;
const OBJECT_RADIUS: i64 = 12;
const CARRIED_RADIUS: i64 = 5;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("field belongs to {found:?} but {expected:?} was requested")]
    FieldPerspectiveMismatch { expected: Perspective, found: Perspective },
    #[error("expected 4 key frames, got {0}")]
    KeyFrameCountMismatch(usize),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    pub width: usize,
    pub height: usize,
    /// RGB8, row-major.
    pub pixels: Vec<u8>,
    pub perspective: Perspective,
}

impl FrameImage {
    fn blank(width: usize, height: usize, perspective: Perspective) -> Self {
        FrameImage { width, height, pixels: vec![0; width * height * 3], perspective }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn count_rgb(&self, rgb: [u8; 3]) -> usize {
        self.pixels.chunks_exact(3).filter(|p| *p == rgb).count()
    }

    pub fn mask_pixels(&self) -> usize {
        self.count_rgb(MASK_RGB)
    }

    /// Center pixel of a cell.
    pub fn cell_center(&self, cell: Cell) -> [u8; 3] {
        self.pixel(cell.col * CELL_PX + CELL_PX / 2, cell.row * CELL_PX + CELL_PX / 2)
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header()?;
            writer.write_image_data(&self.pixels)?;
        }
        Ok(out)
    }

    pub fn write_png(&self, path: &Path) -> Result<(), RenderError> {
        let bytes = self.to_png()?;
        fs::write(path, bytes).map_err(|source| RenderError::Io { path: path.to_path_buf(), source })
    }
}

fn fill_cell(img: &mut FrameImage, cell: Cell, rgb: [u8; 3]) {
    for y in cell.row * CELL_PX..(cell.row + 1) * CELL_PX {
        for x in cell.col * CELL_PX..(cell.col + 1) * CELL_PX {
            img.put(x, y, rgb);
        }
    }
}

fn outline_cell(img: &mut FrameImage, cell: Cell, rgb: [u8; 3], thickness: usize) {
    for dy in 0..CELL_PX {
        for dx in 0..CELL_PX {
            let edge = dx < thickness || dy < thickness || dx >= CELL_PX - thickness || dy >= CELL_PX - thickness;
            if edge {
                img.put(cell.col * CELL_PX + dx, cell.row * CELL_PX + dy, rgb);
            }
        }
    }
}

/// Pixel offsets from the cell center, doubled so the center is exact.
fn doubled_offsets(dx: usize, dy: usize) -> (i64, i64) {
    (2 * dx as i64 + 1 - CELL_PX as i64, 2 * dy as i64 + 1 - CELL_PX as i64)
}

fn disc(img: &mut FrameImage, cell: Cell, radius: i64, rgb: [u8; 3]) {
    let r2 = (2 * radius) * (2 * radius);
    for dy in 0..CELL_PX {
        for dx in 0..CELL_PX {
            let (x, y) = doubled_offsets(dx, dy);
            if x * x + y * y <= r2 {
                img.put(cell.col * CELL_PX + dx, cell.row * CELL_PX + dy, rgb);
            }
        }
    }
    // The doubled grid has no exact center pixel; make the sampled center exact.
    img.put(cell.col * CELL_PX + CELL_PX / 2, cell.row * CELL_PX + CELL_PX / 2, rgb);
}

fn triangle(img: &mut FrameImage, agent: &AgentState) {
    let rgb = agent.color.rgb();
    let cell = agent.position;
    for dy in 0..CELL_PX {
        for dx in 0..CELL_PX {
            let (x, y) = doubled_offsets(dx, dy);
            // (across, ahead) in the agent's frame.
            let (a, f) = match agent.orientation {
                Orientation::North => (x, -y),
                Orientation::East => (y, x),
                Orientation::South => (-x, y),
                Orientation::West => (-y, -x),
            };
            if (-30..=30).contains(&f) && a.abs() * 60 <= 26 * (30 - f) {
                img.put(cell.col * CELL_PX + dx, cell.row * CELL_PX + dy, rgb);
            }
        }
    }
}

fn floor_rgb(state: &WorldState, cell: Cell) -> [u8; 3] {
    let map = state.map();
    match map.region(cell) {
        Region::Room(r) => {
            let door = map.room_door(r).map(|d| d.id);
            let base = door.and_then(|d| state.doors.get(d)).map_or([255; 3], |d| d.color.rgb());
            base.map(|c| (c as u16 * 3 / 10) as u8)
        }
        _ => HALLWAY_RGB,
    }
}

/// Renders `state` as seen through `field`.
pub fn render_frame(state: &WorldState, perspective: Perspective, field: &PerceptionField) -> Result<FrameImage, RenderError> {
    if field.perspective != perspective {
        return Err(RenderError::FieldPerspectiveMismatch { expected: perspective, found: field.perspective });
    }
    let map = state.map();
    let mut img = FrameImage::blank(map.width * CELL_PX, map.height * CELL_PX, perspective);
    for cell in map.cells() {
        match map.kind(cell) {
            CellKind::Wall => fill_cell(&mut img, cell, WALL_RGB),
            CellKind::Floor => fill_cell(&mut img, cell, floor_rgb(state, cell)),
            CellKind::Door(d) => {
                let door = &state.doors[d];
                if door.open {
                    fill_cell(&mut img, cell, HALLWAY_RGB);
                    outline_cell(&mut img, cell, door.color.rgb(), DOOR_OUTLINE_PX);
                } else {
                    fill_cell(&mut img, cell, door.color.rgb());
                }
            }
        }
    }
    if let ObjectLocation::Floor(c) = state.object.location {
        disc(&mut img, c, OBJECT_RADIUS, state.object.color.rgb());
    }
    for agent in &state.agents {
        triangle(&mut img, agent);
    }
    if let ObjectLocation::Carried(id) = state.object.location {
        disc(&mut img, state.agent(id).position, CARRIED_RADIUS, state.object.color.rgb());
    }
    for cell in map.cells() {
        if map.kind(cell) != CellKind::Wall && !field.contains(cell) {
            fill_cell(&mut img, cell, MASK_RGB);
        }
    }
    Ok(img)
}

/// Renders with the perspective's own perception field.
pub fn render_view(state: &WorldState, perspective: Perspective) -> FrameImage {
    let field = visible_cells(state, perspective);
    render_frame(state, perspective, &field).expect("field computed for the same perspective")
}

/// Key frames plus the floor midpoint of each gap, ascending.
pub fn select_eval_frames(key_frames: &[usize]) -> Result<Vec<usize>, RenderError> {
    if key_frames.len() != 4 {
        return Err(RenderError::KeyFrameCountMismatch(key_frames.len()));
    }
    let mut out: Vec<usize> = key_frames.to_vec();
    out.extend(key_frames.windows(2).map(|w| (w[0] + w[1]) / 2));
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSelection {
    All,
    #[default]
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedFrame {
    pub frame: usize,
    pub perspective: Perspective,
    /// File name relative to the export directory.
    pub file: String,
}

pub fn frame_file_name(spec_id: usize, perspective: Perspective, frame: usize) -> String {
    format!("s{spec_id:04}_p{}_f{frame:02}.png", perspective.index())
}

pub fn frames_for(timeline: &Timeline, selection: FrameSelection) -> Vec<usize> {
    match selection {
        FrameSelection::All => (0..timeline.frames.len()).collect(),
        FrameSelection::Eval => select_eval_frames(&timeline.key_frames).expect("timelines carry 4 key frames"),
    }
}

/// Writes one PNG per (frame, perspective) into `out_dir`.
pub fn export_frames(timeline: &Timeline, out_dir: &Path, selection: FrameSelection) -> Result<Vec<ExportedFrame>, RenderError> {
    fs::create_dir_all(out_dir).map_err(|source| RenderError::Io { path: out_dir.to_path_buf(), source })?;
    let spec_id = timeline.spec.spec_id();
    let mut out = Vec::new();
    for frame in frames_for(timeline, selection) {
        for perspective in Perspective::ALL {
            let img = render_view(&timeline.frames[frame], perspective);
            let file = frame_file_name(spec_id, perspective, frame);
            img.write_png(&out_dir.join(&file))?;
            out.push(ExportedFrame { frame, perspective, file });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{enumerate_scenarios, Condition, MapLibrary, ScenarioConfig, TimelineOptions};

    fn first_timeline(condition: Condition) -> Timeline {
        let lib = MapLibrary::bundled().unwrap();
        let spec = enumerate_scenarios(&ScenarioConfig::default())
            .unwrap()
            .into_iter()
            .find(|s| s.condition == condition)
            .unwrap();
        lib.build(&spec, &TimelineOptions::default()).unwrap()
    }

    #[test]
    fn eval_frame_examples() {
        assert_eq!(select_eval_frames(&[0, 10, 20, 35]).unwrap(), vec![0, 5, 10, 15, 20, 27, 35]);
        assert_eq!(select_eval_frames(&[0, 2, 4, 6]).unwrap(), vec![0, 1, 2, 3, 4, 5, 6]);
        assert!(matches!(select_eval_frames(&[0, 2, 4]), Err(RenderError::KeyFrameCountMismatch(3))));
    }

    #[test]
    fn image_size_and_determinism() {
        let t = first_timeline(Condition::FalseBelief);
        let a = render_view(&t.frames[3], Perspective::Protagonist);
        let b = render_view(&t.frames[3], Perspective::Protagonist);
        assert_eq!((a.width, a.height), (420, 294));
        assert_eq!(a.pixels.len(), 420 * 294 * 3);
        assert_eq!(a, b);
        assert_eq!(a.to_png().unwrap(), b.to_png().unwrap());
    }

    #[test]
    fn mismatched_field_rejected() {
        let t = first_timeline(Condition::TrueBelief);
        let field = visible_cells(&t.frames[0], Perspective::Participant);
        assert!(matches!(
            render_frame(&t.frames[0], Perspective::Protagonist, &field),
            Err(RenderError::FieldPerspectiveMismatch { .. })
        ));
    }

    #[test]
    fn omniscient_has_no_mask_and_object_center_matches() {
        let t = first_timeline(Condition::FalseBelief);
        for state in &t.frames {
            let img = render_view(state, Perspective::Omniscient);
            assert_eq!(img.mask_pixels(), 0);
            if let ObjectLocation::Floor(c) = state.object.location {
                assert_eq!(img.cell_center(c), state.object.color.rgb());
            }
        }
    }

    #[test]
    fn sealed_protagonist_mask_area() {
        let t = first_timeline(Condition::FalseBelief);
        let state = &t.frames[t.key_frames[1] + 1];
        let map = state.map();
        let field = visible_cells(state, Perspective::Protagonist);
        // Independent count: room cells the protagonist stands in.
        let room = map.room_of(state.agent(crate::gridworld::AgentId::Protagonist).position).unwrap();
        let visible = map.rooms[room].cells.len();
        assert_eq!(field.len(), visible);
        let img = render_frame(state, Perspective::Protagonist, &field).unwrap();
        let open_cells = map.width * map.height - map.wall_count();
        assert_eq!(img.mask_pixels(), (open_cells - visible) * CELL_PX * CELL_PX);
    }

    #[test]
    fn export_eval_subset() {
        let t = first_timeline(Condition::TrueBelief);
        let dir = tempfile::tempdir().unwrap();
        let files = export_frames(&t, dir.path(), FrameSelection::Eval).unwrap();
        assert_eq!(files.len(), 7 * 3);
        let first = fs::read(dir.path().join(&files[0].file)).unwrap();
        export_frames(&t, dir.path(), FrameSelection::Eval).unwrap();
        assert_eq!(first, fs::read(dir.path().join(&files[0].file)).unwrap());
    }
}
