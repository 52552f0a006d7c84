//! Detector prompt rendering and the strict line grammar spoken by the
//! VLM detector.
//!
//! The wire format is y-first and normalized to a closed 0..=1000 scale:
//!
//! ```text
//! Concepts Detected:
//! Concept: brad-pitt
//! Source Prompt: image of a brad-pitt
//! Target Prompt: image of a generic person
//! Blend Words: brad-pitt person
//! Bounding Box: [100, 200, 800, 700]
//! ```
//!
//! Everything downstream works with x-first [`PixelBox`]es.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER: &str = "Concepts Detected:";
pub const EMPTY_MARKER: &str = "Concepts Detected: [ ]";
pub const PROMPT_PREFIX: &str = "image of a";
pub const NORMALIZED_MAX: u32 = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("detector response does not start with the `{HEADER}` header")]
    MissingHeader,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("block {index}: expected `{field}` line")]
    MalformedBlock { index: usize, field: Field },
    #[error("block {index}: bounding box is not four integers")]
    MalformedBox { index: usize },
    #[error("block {index}: bounding box out of range or degenerate")]
    BoxRange { index: usize },
    #[error("unknown concept category `{0}`")]
    UnknownCategory(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// The five line fields of an instance block, in wire order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    Concept,
    SourcePrompt,
    TargetPrompt,
    BlendWords,
    BoundingBox,
}

impl Field {
    pub const ORDER: [Field; 5] = [
        Field::Concept,
        Field::SourcePrompt,
        Field::TargetPrompt,
        Field::BlendWords,
        Field::BoundingBox,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Field::Concept => "Concept",
            Field::SourcePrompt => "Source Prompt",
            Field::TargetPrompt => "Target Prompt",
            Field::BlendWords => "Blend Words",
            Field::BoundingBox => "Bounding Box",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

// ---------------------------------------------------------------------------
// Policy prompt

/// Policy categories the detector prompt can cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    CopyrightedIp,
    RestrictedItems,
    PublicFigures,
    Nudity,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::CopyrightedIp,
        Category::RestrictedItems,
        Category::PublicFigures,
        Category::Nudity,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Category::CopyrightedIp => "copyrighted-ip",
            Category::RestrictedItems => "restricted-items",
            Category::PublicFigures => "public-figures",
            Category::Nudity => "nudity",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::CopyrightedIp => "Copyrighted / recognizable fictional IP",
            Category::RestrictedItems => "Restricted / sensitive items",
            Category::PublicFigures => "Public figures / celebrities / politicians",
            Category::Nudity => "Nudity or sexualized content (CLEAR DEFINITION)",
        }
    }

    fn body(self) -> &'static str {
        match self {
            Category::CopyrightedIp => {
                "- Famous movie, TV, cartoon, comic, or video-game characters\n  \
                 (e.g., Pikachu, Darth Vader, Minions, Hello Kitty)\n"
            }
            Category::RestrictedItems => {
                "- Violence-related items (e.g., guns, bullets, blood, physical harm)\n\
                 - Drugs or drug paraphernalia\n\
                 - Alcoholic beverages (e.g., wine bottles, beer cans)\n"
            }
            Category::PublicFigures => {
                "Detect real, well-known people, including:\n\
                 - Politicians and heads of state (e.g., donald-trump, joe-biden)\n\
                 - Celebrities (e.g., brad-pitt, taylor-swift)\n\
                 - Other widely recognized public figures\n"
            }
            Category::Nudity => {
                "Detect any of the following:\n\
                 - Fully or partially exposed genitalia\n\
                 - Fully or partially exposed female breasts (including nipples)\n\
                 - Explicit sexual acts or sexual positioning\n\
                 - Clearly erotic or pornographic imagery intended for sexual arousal\n\
                 - Sexualized depiction of bodies where nudity is the primary focus\n"
            }
        }
    }

    fn scope_phrase(self) -> &'static str {
        match self {
            Category::CopyrightedIp => "copyright",
            Category::RestrictedItems => "restricted items",
            Category::PublicFigures => "public figures",
            Category::Nudity => "nudity",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Category {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.id() == s.trim())
            .ok_or_else(|| ProtocolError::UnknownCategory(s.to_string()))
    }
}

/// A rendered detector prompt together with the categories it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyPrompt {
    template_text: String,
    categories: Vec<Category>,
}

impl PolicyPrompt {
    pub fn new(categories: &[Category]) -> Result<Self, ProtocolError> {
        if categories.is_empty() {
            return Err(ProtocolError::Config("category list is empty".into()));
        }
        let mut seen = Vec::with_capacity(categories.len());
        for &c in categories {
            if seen.contains(&c) {
                return Err(ProtocolError::Config(format!("duplicate category `{c}`")));
            }
            seen.push(c);
        }
        let template_text = render_template(&seen);
        Ok(Self {
            template_text,
            categories: seen,
        })
    }

    /// Parses category identifiers such as `public-figures`.
    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Result<Self, ProtocolError> {
        let cats = ids
            .iter()
            .map(|s| s.as_ref().parse())
            .collect::<Result<Vec<Category>, _>>()?;
        Self::new(&cats)
    }

    pub fn text(&self) -> &str {
        &self.template_text
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }
}

/// Renders the full detector prompt for `categories`.
pub fn render_policy_prompt(categories: &[Category]) -> Result<String, ProtocolError> {
    PolicyPrompt::new(categories).map(|p| p.template_text)
}

fn render_template(categories: &[Category]) -> String {
    use fmt::Write;

    let scope = categories
        .iter()
        .map(|c| c.scope_phrase())
        .collect::<Vec<_>>()
        .join(" / ");
    let mut out = String::new();
    out.push_str("-- You are a Visual IP, Brand-Use & Public-Figure Moderator.\n\n");
    out.push_str("-- You will receive one input image.\n\n");
    let _ = writeln!(out, "-- Scope ({scope})\n");
    out.push_str(
        "- Detect visual elements that are likely protected by copyright or otherwise \
         sensitive for moderation, including:\n\n",
    );
    for (i, c) in categories.iter().enumerate() {
        let letter = (b'A' + i as u8) as char;
        let _ = writeln!(out, "{letter}) {}\n", c.title());
        out.push_str(c.body());
        out.push('\n');
    }
    out.push_str("-- If no such elements exist, output exactly:\n\n");
    out.push_str("Concepts Detected: [ ]\n\n");
    out.push_str(
        "-- Important: instance-level output (NO de-duplication)\n\n\
         - Output one block per detected instance\n\
         - If the same concept appears multiple times, DO NOT merge\n\
         - Each instance must have its own bounding box\n\n",
    );
    out.push_str(
        "-- Mandatory hyphenation rule:\n\n\
         - Any multi-word proper name MUST be hyphenated everywhere:\n  \
           - Concept\n  - Source Prompt\n  - Blend Words\n\
         - Examples:\n  - brad-pitt\n  - taylor-swift\n  - donald-trump\n\n",
    );
    out.push_str(
        "-- Fields\n\n\
         Concept: concise label naming the issue. One line, no period.\n\
         Source Prompt: must start exactly with \"image of a ...\" and describe only the \
         problematic element (<= 6 tokens preferred).\n\
         Target Prompt: must start exactly with \"image of a ...\" describing the smallest \
         neutralizing replacement (<= 8 tokens preferred).\n\
         Blend Words: exactly two words, one from the Source Prompt and one from the \
         Target Prompt. Hyphenated if multi-word.\n\
         Bounding Box: normalized coordinates [y_min, x_min, y_max, x_max] (0-1000), \
         string format.\n\n",
    );
    out.push_str(
        "-- Blend Words: meaning and rules\n\n\
         - Blend Words describe what is being changed in the image.\n\
         - They represent a before -> after transformation.\n\
         - Word 1 corresponds to the original detected concept (from the Source Prompt).\n\
         - Word 2 corresponds to the neutralized replacement (from the Target Prompt).\n\n\
         Strict rules:\n\
         - Must contain exactly two words\n\
         - Word 1 must appear in the Source Prompt\n\
         - Word 2 must appear in the Target Prompt\n\
         - No extra words, no synonyms, no rephrasing\n\n\
         Example:\n\
         - Source Prompt: image of a brad-pitt\n\
         - Target Prompt: image of a generic person\n\
         - Blend Words: brad-pitt person\n\n",
    );
    out.push_str(
        "-- Output Format (STRICT)\n\n\
         - Start with the header line.\n\
         - If concepts are found, list each instance with no blank lines:\n\n",
    );
    out.push_str(HEADER);
    out.push('\n');
    for _ in 0..2 {
        for f in Field::ORDER {
            let placeholder = f.label().to_lowercase().replace(' ', "-");
            let _ = writeln!(out, "{}: <{placeholder}>", f.label());
        }
    }
    out.push_str("\n- If no problematic concepts are found, output exactly:\n\n");
    out.push_str(EMPTY_MARKER);
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// Boxes

/// Detector box on the normalized 0..=1000 scale, y-first as on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DetectorBox {
    pub y_min: u32,
    pub x_min: u32,
    pub y_max: u32,
    pub x_max: u32,
}

impl DetectorBox {
    pub fn new(y_min: u32, x_min: u32, y_max: u32, x_max: u32) -> Option<Self> {
        let b = Self {
            y_min,
            x_min,
            y_max,
            x_max,
        };
        b.is_valid().then_some(b)
    }

    pub fn is_valid(&self) -> bool {
        self.y_min < self.y_max
            && self.x_min < self.x_max
            && self.y_max <= NORMALIZED_MAX
            && self.x_max <= NORMALIZED_MAX
    }

    /// Wire order: `[y_min, x_min, y_max, x_max]`.
    pub fn to_array(self) -> [u32; 4] {
        [self.y_min, self.x_min, self.y_max, self.x_max]
    }
}

impl fmt::Display for DetectorBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}]",
            self.y_min, self.x_min, self.y_max, self.x_max
        )
    }
}

impl Serialize for DetectorBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DetectorBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [y0, x0, y1, x1] = <[u32; 4]>::deserialize(d)?;
        DetectorBox::new(y0, x0, y1, x1).ok_or_else(|| {
            serde::de::Error::custom(format!(
                "box [{y0}, {x0}, {y1}, {x1}] is out of range or degenerate"
            ))
        })
    }
}

/// Axis-aligned box in image pixels, x-first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl PixelBox {
    pub fn full(width: u32, height: u32) -> Self {
        Self {
            x_min: 0.0,
            y_min: 0.0,
            x_max: width as f64,
            y_max: height as f64,
        }
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        0.0 <= self.x_min
            && self.x_min < self.x_max
            && self.x_max <= width as f64
            && 0.0 <= self.y_min
            && self.y_min < self.y_max
            && self.y_max <= height as f64
    }

    /// Pixel-center containment.
    pub fn contains_center(&self, col: u32, row: u32) -> bool {
        let cx = col as f64 + 0.5;
        let cy = row as f64 + 0.5;
        self.x_min <= cx && cx < self.x_max && self.y_min <= cy && cy < self.y_max
    }
}

/// Scales a normalized detector box to pixel coordinates and swaps to x-first.
pub fn to_pixel_box(
    b: DetectorBox,
    image_width: u32,
    image_height: u32,
) -> Result<PixelBox, ProtocolError> {
    if image_width == 0 || image_height == 0 {
        return Err(ProtocolError::Config(
            "image dimensions must be positive".into(),
        ));
    }
    let sx = |v: u32| image_width as f64 * v as f64 / NORMALIZED_MAX as f64;
    let sy = |v: u32| image_height as f64 * v as f64 / NORMALIZED_MAX as f64;
    let pb = PixelBox {
        x_min: sx(b.x_min),
        y_min: sy(b.y_min),
        x_max: sx(b.x_max),
        y_max: sy(b.y_max),
    };
    if pb.within(image_width, image_height) {
        Ok(pb)
    } else {
        Err(ProtocolError::BoxRange { index: 0 })
    }
}

// ---------------------------------------------------------------------------
// Detections

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptDetection {
    pub label: String,
    pub source_prompt: String,
    pub target_prompt: String,
    pub blend_words: Vec<String>,
    #[serde(rename = "box_norm")]
    pub bbox: DetectorBox,
}

impl ConceptDetection {
    /// `(source word, target word)`, if there are exactly two blend words.
    pub fn blend_pair(&self) -> Option<(&str, &str)> {
        match self.blend_words.as_slice() {
            [a, b] => Some((a.as_str(), b.as_str())),
            _ => None,
        }
    }
}

pub const DETECTIONS_SCHEMA_VERSION: u32 = 1;

/// Detector output in emission order. Repeated labels stay separate instances.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DetectionSet {
    detections: Vec<ConceptDetection>,
}

#[derive(Serialize, Deserialize)]
struct DetectionSetJson {
    #[serde(default = "schema_v1")]
    schema_version: u32,
    detections: Vec<ConceptDetection>,
    count: usize,
}

fn schema_v1() -> u32 {
    DETECTIONS_SCHEMA_VERSION
}

impl Serialize for DetectionSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DetectionSetJson {
            schema_version: DETECTIONS_SCHEMA_VERSION,
            detections: self.detections.clone(),
            count: self.detections.len(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DetectionSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = DetectionSetJson::deserialize(d)?;
        if raw.count != raw.detections.len() {
            return Err(serde::de::Error::custom(format!(
                "count {} does not match {} detections",
                raw.count,
                raw.detections.len()
            )));
        }
        Ok(DetectionSet {
            detections: raw.detections,
        })
    }
}

impl DetectionSet {
    pub fn new(detections: Vec<ConceptDetection>) -> Self {
        Self { detections }
    }

    pub fn count(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn detections(&self) -> &[ConceptDetection] {
        &self.detections
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ConceptDetection> {
        self.detections.iter()
    }

    /// Renders the set in the detector's strict output grammar.
    pub fn to_wire(&self) -> String {
        if self.detections.is_empty() {
            return format!("{EMPTY_MARKER}\n");
        }
        let mut out = String::from(HEADER);
        out.push('\n');
        for d in &self.detections {
            out.push_str(&format!("Concept: {}\n", d.label));
            out.push_str(&format!("Source Prompt: {}\n", d.source_prompt));
            out.push_str(&format!("Target Prompt: {}\n", d.target_prompt));
            out.push_str(&format!("Blend Words: {}\n", d.blend_words.join(" ")));
            out.push_str(&format!("Bounding Box: {}\n", d.bbox));
        }
        out
    }
}

impl<'a> IntoIterator for &'a DetectionSet {
    type Item = &'a ConceptDetection;
    type IntoIter = std::slice::Iter<'a, ConceptDetection>;

    fn into_iter(self) -> Self::IntoIter {
        self.detections.iter()
    }
}

fn is_empty_marker(rest: &str) -> bool {
    let inner: String = rest.chars().filter(|c| !c.is_whitespace()).collect();
    inner == "[]"
}

/// Parses a complete detector response.
///
/// Leading and trailing blank lines are ignored. Inside the body every line
/// must belong to a five-line block in strict field order.
pub fn parse_detections(raw: &str) -> Result<DetectionSet, ProtocolError> {
    let lines: Vec<&str> = raw.lines().map(|l| l.trim_end()).collect();
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) => (s, e),
        _ => return Err(ProtocolError::MissingHeader),
    };
    let lines = &lines[start..=end];

    let header = lines[0].trim();
    let rest = header
        .strip_prefix(HEADER)
        .ok_or(ProtocolError::MissingHeader)?
        .trim();
    let body = &lines[1..];

    if is_empty_marker(rest) {
        if !body.is_empty() {
            return Err(ProtocolError::Protocol(
                "instance lines follow the empty marker".into(),
            ));
        }
        return Ok(DetectionSet::default());
    }
    if !rest.is_empty() {
        return Err(ProtocolError::Protocol(format!(
            "unexpected text after header: `{rest}`"
        )));
    }
    if body.is_empty() {
        return Err(ProtocolError::Protocol(
            "header has neither instances nor the empty marker".into(),
        ));
    }

    let mut detections = Vec::new();
    for (index, chunk) in body.chunks(Field::ORDER.len()).enumerate() {
        let mut values = [""; 5];
        for (slot, field) in Field::ORDER.into_iter().enumerate() {
            let value = chunk
                .get(slot)
                .and_then(|line| field_value(line, field))
                .filter(|v| !v.is_empty())
                .ok_or(ProtocolError::MalformedBlock { index, field })?;
            values[slot] = value;
        }
        let [label, source, target, blend, bbox] = values;
        detections.push(ConceptDetection {
            label: label.to_string(),
            source_prompt: source.to_string(),
            target_prompt: target.to_string(),
            blend_words: blend.split_whitespace().map(str::to_string).collect(),
            bbox: parse_box(bbox, index)?,
        });
    }
    Ok(DetectionSet::new(detections))
}

fn field_value(line: &str, field: Field) -> Option<&str> {
    let rest = line.trim_start().strip_prefix(field.label())?;
    Some(rest.trim_start().strip_prefix(':')?.trim())
}

fn parse_box(text: &str, index: usize) -> Result<DetectorBox, ProtocolError> {
    let inner = text.trim().trim_matches(|c| c == '"' || c == '\'').trim();
    let inner = inner
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(inner);
    let parts: Vec<&str> = inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if parts.len() != 4 {
        return Err(ProtocolError::MalformedBox { index });
    }
    let mut v = [0i64; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| ProtocolError::MalformedBox { index })?;
    }
    if v.iter().any(|&x| !(0..=NORMALIZED_MAX as i64).contains(&x)) {
        return Err(ProtocolError::BoxRange { index });
    }
    DetectorBox::new(v[0] as u32, v[1] as u32, v[2] as u32, v[3] as u32)
        .ok_or(ProtocolError::BoxRange { index })
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    BlendWordCount { found: usize },
    BlendWordWhitespace { word: String },
    SourceWordMissing { word: String },
    TargetWordMissing { word: String },
    SourcePrefix,
    TargetPrefix,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BlendWordCount { found } => {
                write!(f, "blend words must be exactly two words, found {found}")
            }
            Violation::BlendWordWhitespace { word } => {
                write!(f, "blend word `{word}` contains whitespace")
            }
            Violation::SourceWordMissing { word } => {
                write!(
                    f,
                    "blend word `{word}` does not appear in the source prompt"
                )
            }
            Violation::TargetWordMissing { word } => {
                write!(
                    f,
                    "blend word `{word}` does not appear in the target prompt"
                )
            }
            Violation::SourcePrefix => write!(f, "source prompt must start with `{PROMPT_PREFIX}`"),
            Violation::TargetPrefix => write!(f, "target prompt must start with `{PROMPT_PREFIX}`"),
        }
    }
}

/// Lowercased, whitespace-split tokens with outer punctuation stripped.
/// Internal hyphens survive, so `brad-pitt` stays one token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

fn normalize_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

fn has_prefix(prompt: &str) -> bool {
    prompt
        .trim_start()
        .to_lowercase()
        .starts_with(PROMPT_PREFIX)
}

/// Every lexical rule the detection breaks. Empty means valid.
pub fn validate_detection(d: &ConceptDetection) -> Vec<Violation> {
    let mut out = Vec::new();
    if d.blend_words.len() != 2 {
        out.push(Violation::BlendWordCount {
            found: d.blend_words.len(),
        });
    }
    for w in &d.blend_words {
        if w.chars().any(char::is_whitespace) {
            out.push(Violation::BlendWordWhitespace { word: w.clone() });
        }
    }
    if let Some(first) = d.blend_words.first() {
        if !tokenize(&d.source_prompt).contains(&normalize_token(first)) {
            out.push(Violation::SourceWordMissing {
                word: first.clone(),
            });
        }
    }
    if let Some(second) = d.blend_words.get(1) {
        if !tokenize(&d.target_prompt).contains(&normalize_token(second)) {
            out.push(Violation::TargetWordMissing {
                word: second.clone(),
            });
        }
    }
    if !has_prefix(&d.source_prompt) {
        out.push(Violation::SourcePrefix);
    }
    if !has_prefix(&d.target_prompt) {
        out.push(Violation::TargetPrefix);
    }
    out
}
