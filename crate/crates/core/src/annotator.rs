//! Template narration and question generation.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{Action, AgentId, CellKind, ObjectLocation, PaletteColor, WorldState};
use crate::perception::{location_of, visible_cells, BeliefStatement, BelievedLocation, PerceptionField, Perspective};
use crate::scenario::{derive_seed, Condition, Timeline};

pub const TEMPLATE_VERSION: &str = "narration-v1";

/// Template table. Placeholders: `{agent}`, `{other}`, `{room}`, `{object}`.
pub mod templates {
    pub const ENVIRONMENT: &str = "Three rooms, the {rooms}, open onto a shared hallway. A {object} ball lies in the {room} room. The {agent} agent and the {other} agent start in the hallway.";
    pub const ENTER_ROOM: &str = "The {agent} agent enters the {room} room.";
    pub const ENTER_HALLWAY: &str = "The {agent} agent steps out into the hallway.";
    pub const OPEN_DOOR: &str = "The {agent} agent opens the door of the {room} room.";
    pub const CLOSE_DOOR: &str = "The {agent} agent closes the door of the {room} room.";
    pub const PICKUP: &str = "The {agent} agent picks up the {object} ball.";
    pub const DROP: &str = "The {agent} agent puts the {object} ball down in the {room} room.";
    pub const IDLE: &str = "Everything remains in place.";

    pub const STATEMENT_INITIAL: &str = "At the start the {object} ball is in the {room} room.";
    pub const STATEMENT_FIRST: &str = "The {agent} agent believes the {object} ball is in the {room} room.";
    pub const STATEMENT_SECOND: &str =
        "The {other} agent believes that the {agent} agent thinks the {object} ball is in the {room} room.";
    pub const STATEMENT_UNKNOWN: &str = "The {agent} agent has no belief about where the {object} ball is.";

    pub const Q_QUANTITY_COLOR: &str = "What color is the single ball in the scene at the start?";
    pub const Q_SPATIAL_OBJECT: &str = "In which room is the ball at the start?";
    pub const Q_SPATIAL_AGENT: &str = "Which room does the {agent} agent walk into?";
    pub const Q_FIRST: &str = "At the end, where does the {agent} agent think the {object} ball is?";
    pub const Q_SECOND: &str = "At the end, where does the {other} agent think the {agent} agent believes the {object} ball is?";
    pub const OPTION_ROOM: &str = "the {room} room";
    pub const OPTION_COLOR: &str = "{color}";
}

#[derive(Default)]
struct Fill<'a> {
    agent: Option<&'a str>,
    other: Option<&'a str>,
    room: Option<&'a str>,
    object: Option<&'a str>,
    rooms: Option<&'a str>,
    color: Option<&'a str>,
}

fn fill(template: &str, f: &Fill) -> String {
    let mut s = template.to_string();
    for (key, value) in [
        ("{agent}", f.agent),
        ("{other}", f.other),
        ("{room}", f.room),
        ("{object}", f.object),
        ("{rooms}", f.rooms),
        ("{color}", f.color),
    ] {
        if let Some(v) = value {
            s = s.replace(key, v);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Narration {
    pub stage: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefStatements {
    pub initial: String,
    pub first_order: String,
    pub second_order: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationBundle {
    pub template_version: String,
    pub perspective: Perspective,
    pub environment: String,
    pub intervals: Vec<Narration>,
    pub statements: BeliefStatements,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    EnterRoom(AgentId, usize),
    EnterHallway(AgentId),
    Door { agent: AgentId, room: usize, open: bool },
    Pickup(AgentId),
    Drop(AgentId, usize),
}

fn room_name(t: &Timeline, room: usize) -> &'static str {
    t.colors.rooms[room].name()
}

fn agent_name(t: &Timeline, agent: AgentId) -> &'static str {
    t.colors.agent(agent).name()
}

fn event_text(t: &Timeline, e: Event) -> String {
    let object = t.colors.object.name();
    match e {
        Event::EnterRoom(a, r) => {
            fill(templates::ENTER_ROOM, &Fill { agent: Some(agent_name(t, a)), room: Some(room_name(t, r)), ..Default::default() })
        }
        Event::EnterHallway(a) => fill(templates::ENTER_HALLWAY, &Fill { agent: Some(agent_name(t, a)), ..Default::default() }),
        Event::Door { agent, room, open } => fill(
            if open { templates::OPEN_DOOR } else { templates::CLOSE_DOOR },
            &Fill { agent: Some(agent_name(t, agent)), room: Some(room_name(t, room)), ..Default::default() },
        ),
        Event::Pickup(a) => {
            fill(templates::PICKUP, &Fill { agent: Some(agent_name(t, a)), object: Some(object), ..Default::default() })
        }
        Event::Drop(a, r) => fill(
            templates::DROP,
            &Fill { agent: Some(agent_name(t, a)), object: Some(object), room: Some(room_name(t, r)), ..Default::default() },
        ),
    }
}

/// Events between frames `tick` and `tick + 1` that `perspective` can see in
/// either frame.
fn transition_events(t: &Timeline, tick: usize, before: &PerceptionField, after: &PerceptionField) -> Vec<Event> {
    let (s0, s1): (&WorldState, &WorldState) = (&t.frames[tick], &t.frames[tick + 1]);
    let map = s0.map();
    let seen = |c| before.contains(c) || after.contains(c);
    let mut events = Vec::new();
    for agent in AgentId::BOTH {
        let (a0, a1) = (s0.agent(agent), s1.agent(agent));
        if a0.position != a1.position && seen(a1.position) {
            match (location_of(map, a0.position), location_of(map, a1.position)) {
                (from, BelievedLocation::Room(r)) if from != BelievedLocation::Room(r) => events.push(Event::EnterRoom(agent, r)),
                (BelievedLocation::Room(_), BelievedLocation::Hallway) => events.push(Event::EnterHallway(agent)),
                _ => {}
            }
        }
        if t.actions[tick][agent.index()] == Action::Toggle {
            if let Some(front) = s0.front_of(agent) {
                if let CellKind::Door(d) = map.kind(front) {
                    if s0.doors[d].open != s1.doors[d].open && (seen(front) || seen(a0.position)) {
                        if let Some(room) = map.doors[d].room {
                            events.push(Event::Door { agent, room, open: s1.doors[d].open });
                        }
                    }
                }
            }
        }
    }
    match (s0.object.location, s1.object.location) {
        (ObjectLocation::Floor(c), ObjectLocation::Carried(a)) if seen(c) || seen(s1.agent(a).position) => {
            events.push(Event::Pickup(a))
        }
        (ObjectLocation::Carried(a), ObjectLocation::Floor(c)) if seen(c) || seen(s0.agent(a).position) => {
            if let BelievedLocation::Room(r) = location_of(map, c) {
                events.push(Event::Drop(a, r));
            }
        }
        _ => {}
    }
    events
}

fn statement(t: &Timeline, template: &str, location: BelievedLocation) -> String {
    let f = Fill {
        agent: Some(agent_name(t, AgentId::Protagonist)),
        other: Some(agent_name(t, AgentId::Participant)),
        object: Some(t.colors.object.name()),
        ..Default::default()
    };
    match location {
        BelievedLocation::Room(r) => fill(template, &Fill { room: Some(room_name(t, r)), ..f }),
        _ => fill(templates::STATEMENT_UNKNOWN, &f),
    }
}

/// Text of a probe statement, filled with this timeline's names.
pub fn statement_text(t: &Timeline, s: &BeliefStatement) -> String {
    match *s {
        BeliefStatement::First { room } => statement(t, templates::STATEMENT_FIRST, room),
        BeliefStatement::Second { room } => statement(t, templates::STATEMENT_SECOND, room),
    }
}

pub fn environment_description(t: &Timeline) -> String {
    let rooms = format!(
        "{} room, the {} room and the {} room",
        t.colors.rooms[0].name(),
        t.colors.rooms[1].name(),
        t.colors.rooms[2].name()
    );
    fill(
        templates::ENVIRONMENT,
        &Fill {
            rooms: Some(&rooms),
            object: Some(t.colors.object.name()),
            room: Some(room_name(t, t.roles.source)),
            agent: Some(agent_name(t, AgentId::Protagonist)),
            other: Some(agent_name(t, AgentId::Participant)),
            ..Default::default()
        },
    )
}

/// Per-stage narration restricted to what `perspective` observes.
pub fn narrate(t: &Timeline, perspective: Perspective) -> AnnotationBundle {
    let fields: Vec<PerceptionField> = t.frames.iter().map(|s| visible_cells(s, perspective)).collect();
    let intervals = t
        .stages
        .iter()
        .enumerate()
        .map(|(stage, iv)| {
            let sentences: Vec<String> = (iv.start..iv.end)
                .flat_map(|tick| transition_events(t, tick, &fields[tick], &fields[tick + 1]))
                .map(|e| event_text(t, e))
                .collect();
            let text = if sentences.is_empty() { templates::IDLE.to_string() } else { sentences.join(" ") };
            Narration { stage: stage + 1, start: iv.start, end: iv.end, text }
        })
        .collect();
    AnnotationBundle {
        template_version: TEMPLATE_VERSION.to_string(),
        perspective,
        environment: environment_description(t),
        intervals,
        statements: BeliefStatements {
            initial: statement(t, templates::STATEMENT_INITIAL, BelievedLocation::Room(t.roles.source)),
            first_order: statement(t, templates::STATEMENT_FIRST, t.ledger.final_belief(AgentId::Protagonist)),
            second_order: statement(t, templates::STATEMENT_SECOND, t.ledger.final_model(AgentId::Participant)),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QaCategory {
    InitQuantityColor,
    InitSpatial1,
    InitSpatial2,
    FirstOrder,
    SecondOrder,
}

impl QaCategory {
    pub const ALL: [QaCategory; 5] = [
        QaCategory::InitQuantityColor,
        QaCategory::InitSpatial1,
        QaCategory::InitSpatial2,
        QaCategory::FirstOrder,
        QaCategory::SecondOrder,
    ];

    pub fn is_initial(self) -> bool {
        matches!(self, QaCategory::InitQuantityColor | QaCategory::InitSpatial1 | QaCategory::InitSpatial2)
    }

    fn tag(self) -> &'static str {
        match self {
            QaCategory::InitQuantityColor => "init_qc",
            QaCategory::InitSpatial1 => "init_s1",
            QaCategory::InitSpatial2 => "init_s2",
            QaCategory::FirstOrder => "first",
            QaCategory::SecondOrder => "second",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ItemCondition {
    #[serde(rename = "TB")]
    TrueBelief,
    #[serde(rename = "FB")]
    FalseBelief,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl From<Condition> for ItemCondition {
    fn from(c: Condition) -> Self {
        match c {
            Condition::TrueBelief => ItemCondition::TrueBelief,
            Condition::FalseBelief => ItemCondition::FalseBelief,
        }
    }
}

impl ItemCondition {
    pub fn condition(self) -> Option<Condition> {
        match self {
            ItemCondition::TrueBelief => Some(Condition::TrueBelief),
            ItemCondition::FalseBelief => Some(Condition::FalseBelief),
            ItemCondition::NotApplicable => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptionLetter {
    A,
    B,
}

impl OptionLetter {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(OptionLetter::A),
            1 => Some(OptionLetter::B),
            _ => None,
        }
    }
}

/// What an option denotes, kept so answers can be re-derived from the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionValue {
    Room(usize),
    Color(PaletteColor),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub pair_id: usize,
    /// `None` for pair-level initial items.
    pub spec_id: Option<usize>,
    pub category: QaCategory,
    pub condition: ItemCondition,
    pub question: String,
    pub options: [String; 2],
    pub option_values: [OptionValue; 2],
    pub correct: OptionLetter,
}

impl QaItem {
    pub fn prompt(&self) -> String {
        format!("{}\nA. {}\nB. {}", self.question, self.options[0], self.options[1])
    }
}

fn option_text(t: &Timeline, v: OptionValue) -> String {
    match v {
        OptionValue::Room(r) => fill(templates::OPTION_ROOM, &Fill { room: Some(room_name(t, r)), ..Default::default() }),
        OptionValue::Color(c) => fill(templates::OPTION_COLOR, &Fill { color: Some(c.name()), ..Default::default() }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QaError {
    #[error("{category:?}: derived answer {answer:?} is not among the options")]
    AnswerNotAnOption { category: QaCategory, answer: BelievedLocation },
}

fn make_item(
    t: &Timeline,
    category: QaCategory,
    question: String,
    correct: OptionValue,
    distractor: OptionValue,
    condition: ItemCondition,
) -> QaItem {
    // Option order depends only on the pair seed and category, so TB and FB
    // members of a pair list options identically.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(t.spec.seed, category as u64 + 101));
    let swap = rng.gen_bool(0.5);
    let values = if swap { [distractor, correct] } else { [correct, distractor] };
    let id = match category.is_initial() {
        true => format!("p{:04}_{}", t.spec.pair_id(), category.tag()),
        false => format!("s{:04}_{}", t.spec.spec_id(), category.tag()),
    };
    QaItem {
        id,
        pair_id: t.spec.pair_id(),
        spec_id: (!category.is_initial()).then(|| t.spec.spec_id()),
        category,
        condition,
        question,
        options: [option_text(t, values[0]), option_text(t, values[1])],
        option_values: values,
        correct: if swap { OptionLetter::B } else { OptionLetter::A },
    }
}

/// Pair-level initial-belief items; identical for both members of a pair.
pub fn gen_initial_questions(t: &Timeline) -> Vec<QaItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(t.spec.seed, 77));
    let other_colors: Vec<PaletteColor> = PaletteColor::ALL.iter().copied().filter(|c| *c != t.colors.object).collect();
    let color_distractor = *other_colors.choose(&mut rng).expect("palette has six colors");
    let spatial_distractor = [t.roles.destination, t.roles.protagonist_room][rng.gen_range(0..2)];
    let agent_distractor = [t.roles.source, t.roles.destination][rng.gen_range(0..2)];
    let na = ItemCondition::NotApplicable;
    let p = agent_name(t, AgentId::Protagonist);
    vec![
        make_item(
            t,
            QaCategory::InitQuantityColor,
            templates::Q_QUANTITY_COLOR.to_string(),
            OptionValue::Color(t.colors.object),
            OptionValue::Color(color_distractor),
            na,
        ),
        make_item(
            t,
            QaCategory::InitSpatial1,
            templates::Q_SPATIAL_OBJECT.to_string(),
            OptionValue::Room(t.roles.source),
            OptionValue::Room(spatial_distractor),
            na,
        ),
        make_item(
            t,
            QaCategory::InitSpatial2,
            fill(templates::Q_SPATIAL_AGENT, &Fill { agent: Some(p), ..Default::default() }),
            OptionValue::Room(t.roles.protagonist_room),
            OptionValue::Room(agent_distractor),
            na,
        ),
    ]
}

fn belief_item(t: &Timeline, category: QaCategory, template: &str, answer: BelievedLocation) -> Result<QaItem, QaError> {
    let BelievedLocation::Room(room) = answer else {
        return Err(QaError::AnswerNotAnOption { category, answer });
    };
    let (src, dst) = (t.roles.source, t.roles.destination);
    let distractor = match room {
        r if r == src => dst,
        r if r == dst => src,
        _ => return Err(QaError::AnswerNotAnOption { category, answer }),
    };
    let question = fill(
        template,
        &Fill {
            agent: Some(agent_name(t, AgentId::Protagonist)),
            other: Some(agent_name(t, AgentId::Participant)),
            object: Some(t.colors.object.name()),
            ..Default::default()
        },
    );
    // Keep the (source, destination) order fixed before shuffling so both
    // conditions show the same option texts.
    let mut item = make_item(t, category, question, OptionValue::Room(src), OptionValue::Room(dst), t.spec.condition.into());
    if room != src {
        item.correct = match item.correct {
            OptionLetter::A => OptionLetter::B,
            OptionLetter::B => OptionLetter::A,
        };
    }
    debug_assert_eq!(item.option_values[1 - item.correct.index()], OptionValue::Room(distractor));
    Ok(item)
}

/// First-order and second-order items for one timeline.
pub fn gen_belief_questions(t: &Timeline) -> Result<Vec<QaItem>, QaError> {
    Ok(vec![
        belief_item(t, QaCategory::FirstOrder, templates::Q_FIRST, t.ledger.final_belief(AgentId::Protagonist))?,
        belief_item(t, QaCategory::SecondOrder, templates::Q_SECOND, t.ledger.final_model(AgentId::Participant))?,
    ])
}

/// Full battery for one timeline: 3 initial items plus first and second order.
pub fn gen_questions(t: &Timeline) -> Result<Vec<QaItem>, QaError> {
    let mut items = gen_initial_questions(t);
    items.extend(gen_belief_questions(t)?);
    Ok(items)
}

/// Re-derives the correct letter from the timeline's ledger.
pub fn rederive_answer(t: &Timeline, item: &QaItem) -> Option<OptionLetter> {
    let truth = match item.category {
        QaCategory::InitQuantityColor => OptionValue::Color(t.colors.object),
        QaCategory::InitSpatial1 => OptionValue::Room(t.roles.source),
        QaCategory::InitSpatial2 => OptionValue::Room(t.roles.protagonist_room),
        QaCategory::FirstOrder | QaCategory::SecondOrder => {
            let loc = match item.category {
                QaCategory::FirstOrder => t.ledger.final_belief(AgentId::Protagonist),
                _ => t.ledger.final_model(AgentId::Participant),
            };
            match loc {
                BelievedLocation::Room(r) => OptionValue::Room(r),
                _ => return None,
            }
        }
    };
    item.option_values.iter().position(|v| *v == truth).and_then(OptionLetter::from_index)
}

/// Drops repeated ids, keeping first occurrences in order.
pub fn dedup_items(items: Vec<QaItem>) -> Vec<QaItem> {
    let mut seen = BTreeSet::new();
    items.into_iter().filter(|i| seen.insert(i.id.clone())).collect()
}

pub fn write_qa_jsonl(path: &Path, items: &[QaItem]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_qa_jsonl(path: &Path) -> io::Result<Vec<QaItem>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{enumerate_scenarios, BeliefOrder, MapLibrary, ScenarioConfig, TimelineOptions};

    fn pair(map: usize, index: usize) -> (Timeline, Timeline) {
        let lib = MapLibrary::bundled().unwrap();
        let specs = enumerate_scenarios(&ScenarioConfig { map_ids: vec![map], ..Default::default() }).unwrap();
        let tb = lib.build(&specs[index * 2], &TimelineOptions::default()).unwrap();
        let fb = lib.build(&specs[index * 2 + 1], &TimelineOptions::default()).unwrap();
        assert_eq!(tb.spec.condition, Condition::TrueBelief);
        (tb, fb)
    }

    #[test]
    fn fb_transfer_hidden_from_protagonist() {
        let (_, fb) = pair(0, 0);
        let omni = narrate(&fb, Perspective::Omniscient);
        let prot = narrate(&fb, Perspective::Protagonist);
        let pickup = fill(templates::PICKUP, &Fill {
            agent: Some(agent_name(&fb, AgentId::Participant)),
            object: Some(fb.colors.object.name()),
            ..Default::default()
        });
        assert!(omni.intervals[1].text.contains(&pickup));
        assert!(!prot.intervals[1].text.contains(&pickup));
        assert!(!prot.intervals[1].text.contains("puts the"));
    }

    #[test]
    fn tb_stage2_identical_across_perspectives() {
        let (tb, _) = pair(5, 3);
        let omni = narrate(&tb, Perspective::Omniscient);
        let prot = narrate(&tb, Perspective::Protagonist);
        assert_eq!(omni.intervals[1].text, prot.intervals[1].text);
    }

    #[test]
    fn settle_only_stage_uses_idle_template() {
        let (tb, _) = pair(0, 0);
        let omni = narrate(&tb, Perspective::Omniscient);
        assert_eq!(omni.intervals[2].text, templates::IDLE);
    }

    #[test]
    fn intervals_cover_timeline() {
        let (_, fb) = pair(11, 2);
        let b = narrate(&fb, Perspective::Participant);
        assert_eq!(b.intervals.first().unwrap().start, 0);
        assert_eq!(b.intervals.last().unwrap().end, fb.last_frame());
        for w in b.intervals.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn first_order_answers() {
        let (tb, fb) = pair(3, 4);
        let first = |t: &Timeline| gen_belief_questions(t).unwrap()[0].clone();
        let (qt, qf) = (first(&tb), first(&fb));
        assert_eq!(qt.options, qf.options);
        assert_eq!(qt.option_values[qt.correct.index()], OptionValue::Room(tb.roles.destination));
        assert_eq!(qf.option_values[qf.correct.index()], OptionValue::Room(fb.roles.source));
    }

    #[test]
    fn initial_items_shared_by_pair() {
        let (tb, fb) = pair(8, 1);
        assert_eq!(gen_initial_questions(&tb), gen_initial_questions(&fb));
        let all = dedup_items([gen_questions(&tb).unwrap(), gen_questions(&fb).unwrap()].concat());
        assert_eq!(all.len(), 3 + 2 + 2);
    }

    #[test]
    fn second_order_items_sound() {
        let lib = MapLibrary::bundled().unwrap();
        let config = ScenarioConfig { map_ids: vec![19], orders: vec![BeliefOrder::Second], seed: 4 };
        for spec in enumerate_scenarios(&config).unwrap() {
            let t = lib.build(&spec, &TimelineOptions::default()).unwrap();
            for item in gen_questions(&t).unwrap() {
                assert_eq!(rederive_answer(&t, &item), Some(item.correct), "{}", item.id);
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let (tb, _) = pair(2, 0);
        let items = gen_questions(&tb).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qa.jsonl");
        write_qa_jsonl(&path, &items).unwrap();
        assert_eq!(read_qa_jsonl(&path).unwrap(), items);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"condition\":\"n/a\""));
        assert!(text.contains("\"condition\":\"TB\""));
    }
}
