//! Grounded conversations: task templates, text construction with
//! grounded spans, pointer prompts, and the wire format fed to the LM.
//!
//! Span positions are token indices into the owning turn's
//! whitespace-tokenized text, pointing at the `<GRD>` and `</GRD>` tokens.
//! The wire format renders a conversation as
//! `<system text> <s> USER: <utterance> ASSISTANT: <utterance> </s>`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::scene::{Region, Scene, Shape, COLOR_NAMES};
use crate::error::{Error, Result};
use crate::mask::{mask_to_box, BinaryMask, BoundingBox, Pointer};
use crate::seeds;

pub const GRD_OPEN: &str = "<GRD>";
pub const GRD_CLOSE: &str = "</GRD>";
pub const PTR_TOKEN: &str = "<PTR>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PAD: &str = "<pad>";
pub const USER_MARK: &str = "USER:";
pub const ASSISTANT_MARK: &str = "ASSISTANT:";

/// Default system preamble (disabled unless requested).
pub const SYSTEM_MESSAGE: &str = "A chat between a user and an assistant .";

pub const RES_TEMPLATES: [&str; 3] =
    ["Segment: {}.", "Help me segment out {}.", "Help me localize {}."];
pub const GCAP_TEMPLATES: [&str; 2] =
    ["Describe the image briefly.", "Describe the image in a few words."];
pub const GVQA_PRESENCE_TEMPLATE: &str = "Is {} present in the image?";
pub const GVQA_COUNT_TEMPLATE: &str = "Count the number of {}.";
pub const RD_TEMPLATES: [&str; 3] = [
    "Describe the region <PTR> in a few words.",
    "Describe the selected area <PTR>.",
    "Describe it <PTR>.",
];

/// Substitute `{}` and keep the result whitespace-tokenizable: any
/// punctuation glued to the placeholder (or to `<PTR>`) becomes its own
/// token, so "Segment: {}." fills to "Segment: the red square ."
pub fn fill(template: &str, arg: &str) -> String {
    let out = match template.find("{}") {
        Some(i) => {
            let rest = &template[i + 2..];
            let sep = match rest.chars().next() {
                Some(c) if c.is_ascii_punctuation() => " ",
                _ => "",
            };
            format!("{}{}{}{}", &template[..i], arg, sep, rest)
        }
        None => template.to_string(),
    };
    // detach punctuation glued to the pointer placeholder
    out.split_whitespace()
        .flat_map(|w| {
            if let Some(p) = w.strip_prefix(PTR_TOKEN) {
                if !p.is_empty() {
                    return vec![PTR_TOKEN.to_string(), p.to_string()];
                }
            }
            vec![w.to_string()]
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// What supervises a grounded span: a set of target masks (possibly empty
/// for no-target queries), a single box, or nothing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Supervision {
    Masks(Vec<BinaryMask>),
    Box(BoundingBox),
    None,
}

/// One groundable phrase: `start` and `end` index the `<GRD>` and
/// `</GRD>` tokens of the turn's whitespace tokenization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundedSpan {
    pub start: usize,
    pub end: usize,
    pub supervision: Supervision,
}

/// A spatial prompt bound to one `<PTR>` occurrence, in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum PointerInput {
    Box(BoundingBox),
    Mask(BinaryMask),
}

impl PointerInput {
    pub fn to_pointer(&self) -> Pointer {
        match self {
            PointerInput::Box(b) => Pointer::Box(*b),
            PointerInput::Mask(m) => Pointer::Mask(m.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<GroundedSpan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pointers: Vec<PointerInput>,
}

impl Turn {
    pub fn tokens(&self) -> Vec<&str> {
        self.text.split_whitespace().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Gcap,
    Res,
    Gvqa,
    Rd,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Gcap, Task::Res, Task::Gvqa, Task::Rd];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Gcap => "gcap",
            Task::Res => "res",
            Task::Gvqa => "gvqa",
            Task::Rd => "rd",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundedConversation {
    pub task: Task,
    pub source: String,
    pub turns: Vec<Turn>,
}

impl GroundedConversation {
    /// All grounded spans, tagged with their turn index.
    pub fn spans(&self) -> impl Iterator<Item = (usize, &GroundedSpan)> {
        self.turns
            .iter()
            .enumerate()
            .flat_map(|(i, t)| t.spans.iter().map(move |s| (i, s)))
    }

    /// The phrase between a span's grounding tokens.
    pub fn span_text(&self, turn_idx: usize, span: &GroundedSpan) -> String {
        let tokens = self.turns[turn_idx].tokens();
        tokens[span.start + 1..span.end].join(" ")
    }

    /// Structural checks: spans only in assistant turns, anchored on
    /// grounding tokens, properly paired and non-nested; pointer counts
    /// match `<PTR>` occurrences.
    pub fn validate(&self) -> Result<()> {
        for (i, turn) in self.turns.iter().enumerate() {
            let tokens = turn.tokens();
            if !turn.spans.is_empty() && turn.role != Role::Assistant {
                return Err(Error::Schema(format!(
                    "turn {i}: grounded spans outside an assistant turn"
                )));
            }
            let mut last_end = None;
            for span in &turn.spans {
                if span.start >= span.end || span.end >= tokens.len() {
                    return Err(Error::Schema(format!(
                        "turn {i}: span {}..{} out of bounds",
                        span.start, span.end
                    )));
                }
                if tokens[span.start] != GRD_OPEN || tokens[span.end] != GRD_CLOSE {
                    return Err(Error::Schema(format!(
                        "turn {i}: span {}..{} not anchored on grounding tokens",
                        span.start, span.end
                    )));
                }
                if let Some(prev) = last_end {
                    if span.start <= prev {
                        return Err(Error::Schema(format!(
                            "turn {i}: spans overlap or are out of order"
                        )));
                    }
                }
                for t in &tokens[span.start + 1..span.end] {
                    if *t == GRD_OPEN || *t == GRD_CLOSE {
                        return Err(Error::Schema(format!("turn {i}: nested grounding tokens")));
                    }
                }
                last_end = Some(span.end);
            }
            let n_grd = tokens.iter().filter(|t| **t == GRD_OPEN || **t == GRD_CLOSE).count();
            if n_grd != 2 * turn.spans.len() {
                return Err(Error::Schema(format!(
                    "turn {i}: {} grounding tokens for {} spans",
                    n_grd,
                    turn.spans.len()
                )));
            }
            let n_ptr = tokens.iter().filter(|t| **t == PTR_TOKEN).count();
            if n_ptr != turn.pointers.len() {
                return Err(Error::Schema(format!(
                    "turn {i}: {} pointers for {} {PTR_TOKEN} tokens",
                    turn.pointers.len(),
                    n_ptr
                )));
            }
        }
        Ok(())
    }
}

/// Wire rendering: system text, `<s>`, role-marked utterances, `</s>`.
/// Also reports, per turn, the wire-token offset of that turn's first
/// text token (so span indices can be mapped onto wire positions).
pub fn render_wire(conv: &GroundedConversation) -> (Vec<String>, Vec<usize>) {
    let mut tokens: Vec<String> = Vec::new();
    let mut offsets = vec![0usize; conv.turns.len()];
    for (i, turn) in conv.turns.iter().enumerate() {
        if turn.role == Role::System {
            offsets[i] = tokens.len();
            tokens.extend(turn.tokens().iter().map(|t| t.to_string()));
        }
    }
    tokens.push(BOS.to_string());
    for (i, turn) in conv.turns.iter().enumerate() {
        let mark = match turn.role {
            Role::System => continue,
            Role::User => USER_MARK,
            Role::Assistant => ASSISTANT_MARK,
        };
        tokens.push(mark.to_string());
        offsets[i] = tokens.len();
        tokens.extend(turn.tokens().iter().map(|t| t.to_string()));
    }
    tokens.push(EOS.to_string());
    (tokens, offsets)
}

/// Wire rendering of the generation prompt: a strict prefix of
/// [`render_wire`] that stops right after the first assistant role
/// marker, where decoding takes over. Offsets are meaningful for the
/// rendered (system and user) turns only.
pub fn render_prompt(conv: &GroundedConversation) -> (Vec<String>, Vec<usize>) {
    let mut tokens: Vec<String> = Vec::new();
    let mut offsets = vec![0usize; conv.turns.len()];
    for (i, turn) in conv.turns.iter().enumerate() {
        if turn.role == Role::System {
            offsets[i] = tokens.len();
            tokens.extend(turn.tokens().iter().map(|t| t.to_string()));
        }
    }
    tokens.push(BOS.to_string());
    for (i, turn) in conv.turns.iter().enumerate() {
        match turn.role {
            Role::System => continue,
            Role::Assistant => break,
            Role::User => {}
        }
        tokens.push(USER_MARK.to_string());
        offsets[i] = tokens.len();
        tokens.extend(turn.tokens().iter().map(|t| t.to_string()));
    }
    tokens.push(ASSISTANT_MARK.to_string());
    (tokens, offsets)
}

/// Conversation-construction switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConvOptions {
    /// RES spans carry box supervision instead of mask supervision.
    pub box_supervision: bool,
    /// Query an attribute combination absent from the scene.
    pub negative: bool,
    /// Refer to the scene's duplicated pair with a "both ..." phrase.
    pub two_target: bool,
    /// Prepend the system preamble.
    pub with_system: bool,
}

struct TextBuilder {
    words: Vec<String>,
    spans: Vec<GroundedSpan>,
}

impl TextBuilder {
    fn new() -> Self {
        Self { words: Vec::new(), spans: Vec::new() }
    }

    fn push(&mut self, text: &str) {
        self.words.extend(text.split_whitespace().map(|w| w.to_string()));
    }

    fn push_grounded(&mut self, phrase: &str, supervision: Supervision) {
        let start = self.words.len();
        self.push(GRD_OPEN);
        self.push(phrase);
        self.push(GRD_CLOSE);
        let end = self.words.len() - 1;
        self.spans.push(GroundedSpan { start, end, supervision });
    }

    fn into_turn(self, role: Role) -> Turn {
        Turn { role, text: self.words.join(" "), spans: self.spans, pointers: vec![] }
    }
}

fn pair_phrase(color: usize, shape: Shape) -> String {
    format!("the {} {}", COLOR_NAMES[color], shape.name())
}

fn entity_phrase(scene: &Scene, idx: usize, with_region: bool) -> String {
    let e = &scene.entities[idx];
    if with_region {
        format!("{} {}", pair_phrase(e.color, e.shape), e.region.phrase())
    } else {
        pair_phrase(e.color, e.shape)
    }
}

fn matching_entities(scene: &Scene, color: usize, shape: Shape) -> Vec<usize> {
    (0..scene.entities.len())
        .filter(|&i| scene.entities[i].color == color && scene.entities[i].shape == shape)
        .collect()
}

fn res_supervision(masks: Vec<BinaryMask>, box_supervision: bool) -> Result<Supervision> {
    if !box_supervision {
        return Ok(Supervision::Masks(masks));
    }
    match masks.len() {
        1 => Ok(Supervision::Box(mask_to_box(&masks[0])?)),
        n => Err(Error::InvalidArgument(format!(
            "box supervision needs exactly one target mask, got {n}"
        ))),
    }
}

fn make_res(
    scene: &Scene,
    rng: &mut rand_chacha::ChaCha8Rng,
    opts: &ConvOptions,
) -> Result<(Turn, Turn)> {
    let template = RES_TEMPLATES[rng.gen_range(0..RES_TEMPLATES.len())];
    let (phrase, supervision) = if opts.negative {
        let absent = scene.absent_pairs();
        if absent.is_empty() {
            return Err(Error::InvalidArgument("no absent pair for a negative query".into()));
        }
        let (color, shape) = absent[rng.gen_range(0..absent.len())];
        (pair_phrase(color, shape), res_supervision(vec![], false)?)
    } else if opts.two_target {
        let pairs = scene.present_pairs();
        let dup = pairs
            .iter()
            .position(|p| pairs.iter().filter(|q| *q == p).count() == 2)
            .ok_or_else(|| {
                Error::InvalidArgument("two-target query needs a duplicated pair".into())
            })?;
        let (color, shape) = pairs[dup];
        let members = matching_entities(scene, color, shape);
        let masks = members.iter().map(|&i| scene.entities[i].mask.clone()).collect();
        let phrase = format!("both {} {}", COLOR_NAMES[color], shape.plural());
        if opts.box_supervision {
            return Err(Error::InvalidArgument(
                "box supervision is single-target only".into(),
            ));
        }
        (phrase, Supervision::Masks(masks))
    } else {
        // pick an entity whose (color, shape) is unique in this scene, and
        // optionally qualify with the region
        let pairs = scene.present_pairs();
        let unique: Vec<usize> = (0..pairs.len())
            .filter(|&i| pairs.iter().filter(|p| **p == pairs[i]).count() == 1)
            .collect();
        if unique.is_empty() {
            return Err(Error::InvalidArgument("no uniquely referable entity".into()));
        }
        let idx = unique[rng.gen_range(0..unique.len())];
        let phrase = entity_phrase(scene, idx, rng.gen_bool(0.5));
        let sup = res_supervision(vec![scene.entities[idx].mask.clone()], opts.box_supervision)?;
        (phrase, sup)
    };

    let user = Turn {
        role: Role::User,
        text: fill(template, &phrase),
        spans: vec![],
        pointers: vec![],
    };
    let mut b = TextBuilder::new();
    if matches!(&supervision, Supervision::Masks(m) if m.is_empty()) {
        b.push("There is no match for");
        b.push_grounded(&phrase, supervision);
        b.push(".");
    } else {
        b.push("Here it is:");
        b.push_grounded(&phrase, supervision);
    }
    Ok((user, b.into_turn(Role::Assistant)))
}

fn make_gcap(scene: &Scene, rng: &mut rand_chacha::ChaCha8Rng) -> Result<(Turn, Turn)> {
    let template = GCAP_TEMPLATES[rng.gen_range(0..GCAP_TEMPLATES.len())];
    let user =
        Turn { role: Role::User, text: template.to_string(), spans: vec![], pointers: vec![] };
    let mut b = TextBuilder::new();
    b.push("I see");
    for (i, e) in scene.entities.iter().enumerate() {
        if i > 0 {
            b.push("and");
        }
        let phrase =
            format!("a {} {} {}", COLOR_NAMES[e.color], e.shape.name(), e.region.phrase());
        b.push_grounded(&phrase, Supervision::Masks(vec![e.mask.clone()]));
    }
    b.push(".");
    Ok((user, b.into_turn(Role::Assistant)))
}

fn make_gvqa(
    scene: &Scene,
    rng: &mut rand_chacha::ChaCha8Rng,
    opts: &ConvOptions,
) -> Result<(Turn, Turn)> {
    if rng.gen_bool(0.5) {
        // presence
        let (color, shape) = if opts.negative {
            let absent = scene.absent_pairs();
            if absent.is_empty() {
                return Err(Error::InvalidArgument("no absent pair for a negative query".into()));
            }
            absent[rng.gen_range(0..absent.len())]
        } else {
            let pairs = scene.present_pairs();
            pairs[rng.gen_range(0..pairs.len())]
        };
        let question = fill(
            GVQA_PRESENCE_TEMPLATE,
            &format!("a {} {}", COLOR_NAMES[color], shape.name()),
        );
        let user = Turn { role: Role::User, text: question, spans: vec![], pointers: vec![] };
        let members = matching_entities(scene, color, shape);
        let mut b = TextBuilder::new();
        if members.is_empty() {
            b.push("No .");
        } else {
            b.push("Yes ,");
            let masks = members.iter().map(|&i| scene.entities[i].mask.clone()).collect();
            b.push_grounded(&pair_phrase(color, shape), Supervision::Masks(masks));
            b.push(".");
        }
        Ok((user, b.into_turn(Role::Assistant)))
    } else {
        // count by shape
        let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
        let question = fill(GVQA_COUNT_TEMPLATE, shape.plural());
        let user = Turn { role: Role::User, text: question, spans: vec![], pointers: vec![] };
        let n = scene.entities.iter().filter(|e| e.shape == shape).count();
        let answer =
            Turn { role: Role::Assistant, text: format!("{n} ."), spans: vec![], pointers: vec![] };
        Ok((user, answer))
    }
}

fn make_rd(scene: &Scene, rng: &mut rand_chacha::ChaCha8Rng) -> Result<(Turn, Turn)> {
    let template = RD_TEMPLATES[rng.gen_range(0..RD_TEMPLATES.len())];
    let idx = rng.gen_range(0..scene.entities.len());
    let e = &scene.entities[idx];
    let pointer = if rng.gen_bool(0.5) {
        PointerInput::Box(mask_to_box(&e.mask)?)
    } else {
        PointerInput::Mask(e.mask.clone())
    };
    let user = Turn {
        role: Role::User,
        text: fill(template, ""),
        spans: vec![],
        pointers: vec![pointer],
    };
    let answer = Turn {
        role: Role::Assistant,
        text: format!(
            "It is the {} {} {} .",
            COLOR_NAMES[e.color],
            e.shape.name(),
            e.region.phrase()
        ),
        spans: vec![],
        pointers: vec![],
    };
    Ok((user, answer))
}

/// Build one conversation for the task, deterministically from the seed.
pub fn make_conversation(
    scene: &Scene,
    task: Task,
    seed: u64,
    opts: &ConvOptions,
) -> Result<GroundedConversation> {
    let mut rng = seeds::rng(seed, "conversation");
    let (user, assistant) = match task {
        Task::Res => make_res(scene, &mut rng, opts)?,
        Task::Gcap => make_gcap(scene, &mut rng)?,
        Task::Gvqa => make_gvqa(scene, &mut rng, opts)?,
        Task::Rd => make_rd(scene, &mut rng)?,
    };
    let mut turns = Vec::new();
    if opts.with_system {
        turns.push(Turn {
            role: Role::System,
            text: SYSTEM_MESSAGE.to_string(),
            spans: vec![],
            pointers: vec![],
        });
    }
    turns.push(user);
    turns.push(assistant);
    let conv = GroundedConversation { task, source: task.name().to_string(), turns };
    conv.validate()?;
    Ok(conv)
}

/// Every non-special word the conversation generator can emit, sorted and
/// deduplicated. The LM vocabulary is built from this closure.
pub fn vocabulary_words() -> Vec<String> {
    let mut words = std::collections::BTreeSet::new();
    let mut add = |text: &str| {
        for w in text.split_whitespace() {
            if w != GRD_OPEN && w != GRD_CLOSE && w != PTR_TOKEN && w != "{}" {
                words.insert(w.to_string());
            }
        }
    };
    for t in RES_TEMPLATES {
        add(&fill(t, ""));
    }
    for t in GCAP_TEMPLATES {
        add(t);
    }
    add(&fill(GVQA_PRESENCE_TEMPLATE, ""));
    add(&fill(GVQA_COUNT_TEMPLATE, ""));
    for t in RD_TEMPLATES {
        add(&fill(t, ""));
    }
    add(SYSTEM_MESSAGE);
    add(USER_MARK);
    add(ASSISTANT_MARK);
    // phrase and answer fragments
    add("the a an both and of in on sky ground tip");
    add("Here it is: There is no match for I see It Yes No , .");
    for c in COLOR_NAMES {
        add(c);
    }
    for s in Shape::ALL {
        add(s.name());
        add(s.plural());
    }
    for r in Region::ALL {
        add(r.phrase());
    }
    for n in 0..=8 {
        add(&n.to_string());
    }
    words.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{gen_scene, SceneConfig};

    fn scene(seed: u64) -> Scene {
        gen_scene(seed, &SceneConfig::default()).unwrap()
    }

    #[test]
    fn prompt_is_a_strict_prefix_of_the_wire() {
        for (i, task) in Task::ALL.iter().enumerate() {
            let s = scene(40 + i as u64);
            let opts = ConvOptions { with_system: true, ..ConvOptions::default() };
            let conv = make_conversation(&s, *task, 7, &opts).unwrap();
            let (wire, _) = render_wire(&conv);
            let (prompt, _) = render_prompt(&conv);
            assert!(prompt.len() < wire.len());
            assert_eq!(prompt[..], wire[..prompt.len()]);
            assert_eq!(prompt.last().unwrap(), ASSISTANT_MARK);
        }
    }

    #[test]
    fn fill_detaches_punctuation() {
        assert_eq!(fill("Segment: {}.", "the red square"), "Segment: the red square .");
        assert_eq!(fill("Is {} present in the image?", "a disc"), "Is a disc present in the image?");
        assert_eq!(fill("Describe it <PTR>.", ""), "Describe it <PTR> .");
        assert_eq!(
            fill("Describe the region <PTR> in a few words.", ""),
            "Describe the region <PTR> in a few words."
        );
    }

    #[test]
    fn res_echoes_phrase_with_mask_supervision() {
        let s = scene(1);
        let conv = make_conversation(&s, Task::Res, 5, &ConvOptions::default()).unwrap();
        assert_eq!(conv.turns.len(), 2);
        let answer = &conv.turns[1];
        assert_eq!(answer.spans.len(), 1);
        let span = &answer.spans[0];
        let tokens = answer.tokens();
        assert_eq!(tokens[span.start], GRD_OPEN);
        assert_eq!(tokens[span.end], GRD_CLOSE);
        let phrase = conv.span_text(1, span);
        assert!(conv.turns[0].text.contains(&phrase), "user question echoes the phrase");
        match &span.supervision {
            Supervision::Masks(m) => {
                assert_eq!(m.len(), 1);
                assert!(s.entities.iter().any(|e| e.mask == m[0]));
            }
            other => panic!("unexpected supervision {other:?}"),
        }
    }

    #[test]
    fn negative_res_has_empty_mask_set() {
        let s = scene(2);
        let opts = ConvOptions { negative: true, ..ConvOptions::default() };
        let conv = make_conversation(&s, Task::Res, 9, &opts).unwrap();
        let span = &conv.turns[1].spans[0];
        match &span.supervision {
            Supervision::Masks(m) => assert!(m.is_empty()),
            other => panic!("unexpected supervision {other:?}"),
        }
        let phrase = conv.span_text(1, span);
        let pairs = s.present_pairs();
        for (c, sh) in pairs {
            assert_ne!(phrase, pair_phrase(c, sh));
        }
    }

    #[test]
    fn two_target_res_supervises_both_masks() {
        let s = gen_scene(
            3,
            &SceneConfig { n_entities: 3, duplicate_pair: true, ..SceneConfig::default() },
        )
        .unwrap();
        let opts = ConvOptions { two_target: true, ..ConvOptions::default() };
        let conv = make_conversation(&s, Task::Res, 4, &opts).unwrap();
        let span = &conv.turns[1].spans[0];
        match &span.supervision {
            Supervision::Masks(m) => assert_eq!(m.len(), 2),
            other => panic!("unexpected supervision {other:?}"),
        }
        assert!(conv.span_text(1, span).starts_with("both "));
    }

    #[test]
    fn box_supervision_carries_the_tight_box() {
        let s = scene(4);
        let opts = ConvOptions { box_supervision: true, ..ConvOptions::default() };
        let conv = make_conversation(&s, Task::Res, 11, &opts).unwrap();
        match &conv.turns[1].spans[0].supervision {
            Supervision::Box(b) => {
                assert!(s.entities.iter().any(|e| mask_to_box(&e.mask).unwrap() == *b));
            }
            other => panic!("unexpected supervision {other:?}"),
        }
    }

    #[test]
    fn gcap_grounds_every_entity() {
        let s = scene(5);
        let conv = make_conversation(&s, Task::Gcap, 6, &ConvOptions::default()).unwrap();
        assert_eq!(conv.turns[1].spans.len(), s.entities.len());
    }

    #[test]
    fn gvqa_answers_parse_as_yes_no_or_count() {
        for seed in 0..30 {
            let s = scene(seed);
            let neg = seed % 3 == 0;
            let opts = ConvOptions { negative: neg, ..ConvOptions::default() };
            let conv = make_conversation(&s, Task::Gvqa, seed * 7 + 1, &opts).unwrap();
            let answer = &conv.turns[1];
            let first = answer.tokens()[0].to_string();
            let is_count = conv.turns[0].text.starts_with("Count");
            if is_count {
                let n: usize = first.parse().expect("count answer starts with a number");
                assert!(n <= s.entities.len());
            } else {
                assert!(first == "Yes" || first == "No");
                if neg {
                    assert_eq!(first, "No");
                }
            }
        }
    }

    #[test]
    fn rd_answer_names_the_pointed_entity() {
        for seed in 0..20 {
            let s = scene(seed);
            let conv = make_conversation(&s, Task::Rd, seed + 100, &ConvOptions::default()).unwrap();
            let user = &conv.turns[0];
            assert_eq!(user.pointers.len(), 1);
            assert!(user.text.contains(PTR_TOKEN));
            // the answer's attributes must identify exactly one entity, the
            // one the pointer overlaps best
            let answer_text = &conv.turns[1].text;
            let named: Vec<usize> = (0..s.entities.len())
                .filter(|&i| {
                    let e = &s.entities[i];
                    answer_text.contains(e.color_name())
                        && answer_text.contains(e.shape.name())
                        && answer_text.contains(e.region.phrase())
                })
                .collect();
            assert_eq!(named.len(), 1);
            let e = &s.entities[named[0]];
            match &user.pointers[0] {
                PointerInput::Mask(m) => assert_eq!(*m, e.mask),
                PointerInput::Box(b) => assert_eq!(*b, mask_to_box(&e.mask).unwrap()),
            }
        }
    }

    #[test]
    fn wire_format_and_offsets() {
        let s = scene(6);
        let opts = ConvOptions { with_system: true, ..ConvOptions::default() };
        let conv = make_conversation(&s, Task::Res, 3, &opts).unwrap();
        let (tokens, offsets) = render_wire(&conv);
        // system text precedes <s>
        let bos = tokens.iter().position(|t| t == BOS).unwrap();
        assert!(offsets[0] < bos);
        assert_eq!(tokens[bos + 1], USER_MARK);
        assert_eq!(tokens.last().unwrap(), EOS);
        // marker immediately precedes each mapped turn
        assert_eq!(tokens[offsets[1] - 1], USER_MARK);
        assert_eq!(tokens[offsets[2] - 1], ASSISTANT_MARK);
        // span anchors land on grounding tokens in wire coordinates
        let span = &conv.turns[2].spans[0];
        assert_eq!(tokens[offsets[2] + span.start], GRD_OPEN);
        assert_eq!(tokens[offsets[2] + span.end], GRD_CLOSE);
    }

    #[test]
    fn conversations_validate_and_round_trip() {
        for seed in 0..40 {
            let dup = seed % 5 == 0;
            let s = gen_scene(
                seed,
                &SceneConfig { n_entities: 3, duplicate_pair: dup, ..SceneConfig::default() },
            )
            .unwrap();
            let task = Task::ALL[(seed % 4) as usize];
            let opts = ConvOptions {
                negative: task == Task::Res && seed % 7 == 0,
                two_target: dup && task == Task::Res && seed % 7 != 0,
                with_system: seed % 11 == 0,
                ..ConvOptions::default()
            };
            let conv = make_conversation(&s, task, seed + 1000, &opts).unwrap();
            conv.validate().unwrap();
            let json = serde_json::to_string(&conv).unwrap();
            let back: GroundedConversation = serde_json::from_str(&json).unwrap();
            back.validate().unwrap();
            assert_eq!(serde_json::to_string(&back).unwrap(), json);
        }
    }

    #[test]
    fn vocabulary_covers_generated_text() {
        let vocab: std::collections::BTreeSet<String> =
            vocabulary_words().into_iter().collect();
        for seed in 0..60 {
            let dup = seed % 5 == 0;
            let s = gen_scene(
                seed,
                &SceneConfig { n_entities: 3, duplicate_pair: dup, ..SceneConfig::default() },
            )
            .unwrap();
            let task = Task::ALL[(seed % 4) as usize];
            let opts = ConvOptions {
                negative: task != Task::Rd && seed % 6 == 0,
                two_target: dup && task == Task::Res,
                with_system: seed % 2 == 0,
                ..ConvOptions::default()
            };
            let conv = make_conversation(&s, task, seed, &opts).unwrap();
            let (tokens, _) = render_wire(&conv);
            for t in tokens {
                let special = [BOS, EOS, GRD_OPEN, GRD_CLOSE, PTR_TOKEN].contains(&t.as_str());
                assert!(
                    special || vocab.contains(&t),
                    "word {t:?} missing from the vocabulary closure"
                );
            }
        }
    }
}
