use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::Camera;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewTag {
    Front,
    Side,
    Back,
    Overhead,
}

impl ViewTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewTag::Front => "front",
            ViewTag::Side => "side",
            ViewTag::Back => "back",
            ViewTag::Overhead => "overhead",
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            ViewTag::Front => "a front view of",
            ViewTag::Side => "a side view of",
            ViewTag::Back => "a back view of",
            ViewTag::Overhead => "an overhead view of",
        }
    }
}

impl std::str::FromStr for ViewTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front" => Ok(ViewTag::Front),
            "side" => Ok(ViewTag::Side),
            "back" => Ok(ViewTag::Back),
            "overhead" => Ok(ViewTag::Overhead),
            other => Err(Error::Config(format!("unknown view tag {other:?}"))),
        }
    }
}

/// View tag from azimuth and elevation in degrees. Elevation above 60°
/// wins; otherwise the azimuth quadrant decides.
pub fn classify_angles(azimuth_deg: f64, elevation_deg: f64) -> ViewTag {
    if elevation_deg > 60.0 {
        return ViewTag::Overhead;
    }
    let az = (azimuth_deg + 180.0).rem_euclid(360.0) - 180.0;
    let a = az.abs();
    if a < 45.0 {
        ViewTag::Front
    } else if a < 135.0 {
        ViewTag::Side
    } else {
        ViewTag::Back
    }
}

pub fn classify_view<T: Real>(camera: &Camera<T>) -> ViewTag {
    classify_angles(camera.azimuth.as_f64().to_degrees(), camera.elevation.as_f64().to_degrees())
}

/// One parsed garment: segmentation category, recognised garment type,
/// colour and style answers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarmentRecord {
    pub category: String,
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub color: Option<String>,
    #[serde(default)]
    pub style: Option<String>,
}

impl GarmentRecord {
    fn text(&self) -> String {
        let noun = self.kind.as_deref().unwrap_or(&self.category);
        [self.color.as_deref(), self.style.as_deref(), Some(noun)]
            .into_iter()
            .flatten()
            .filter(|s| !s.trim().is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Pre-answered appearance questions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attributes {
    #[serde(default)]
    pub gender: Option<String>,
    /// Free-text garment answers keyed by body region.
    #[serde(default)]
    pub upper: Option<String>,
    #[serde(default)]
    pub lower: Option<String>,
    #[serde(default)]
    pub shoes: Option<String>,
    #[serde(default)]
    pub garments: Vec<GarmentRecord>,
    #[serde(default)]
    pub hair_color: Option<String>,
    #[serde(default)]
    pub hairstyle: Option<String>,
    #[serde(default)]
    pub face: Option<String>,
    #[serde(default)]
    pub facial_hair: Option<String>,
    /// Extra fixed description appended verbatim before deduplication.
    #[serde(default)]
    pub extra: Option<String>,
}

impl Attributes {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    fn garment_texts(&self) -> Vec<String> {
        let mut out: Vec<String> = [&self.upper, &self.lower, &self.shoes].into_iter().flatten().cloned().collect();
        out.extend(self.garments.iter().map(GarmentRecord::text));
        out
    }

    fn hair_text(&self) -> Option<String> {
        match (self.hair_color.as_deref(), self.hairstyle.as_deref()) {
            (None, None) => None,
            (c, s) => Some([c, s, Some("hair")].into_iter().flatten().collect::<Vec<_>>().join(" ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCondition {
    /// Identifier, class word and appearance description.
    pub base_prompt: String,
    pub view_tag: ViewTag,
    pub face_zoom: bool,
    pub normal_mode: bool,
}

impl PromptCondition {
    /// Full conditioning text.
    pub fn text(&self) -> String {
        let mut s = String::new();
        if self.normal_mode {
            s.push_str("a detailed sculpture of ");
        }
        s.push_str(self.view_tag.phrase());
        s.push(' ');
        if self.face_zoom {
            s.push_str("the face of ");
        }
        s.push_str(&self.base_prompt);
        s
    }
}

/// Drop every word already seen earlier (case-insensitive) and empty
/// segments.
fn dedup_segments(segments: &[String], seen: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    for seg in segments {
        let words: Vec<&str> = seg
            .split_whitespace()
            .filter(|w| seen.insert(w.to_lowercase()))
            .collect();
        if !words.is_empty() {
            out.push(words.join(" "));
        }
    }
    out
}

/// Fill the prompt template:
/// `[a detailed sculpture of] a <view> view of [the face of] <id> <gender>
/// [wearing <garments>][, <hair>][, <face>]`.
pub fn compose_prompt<T: Real>(
    attributes: &Attributes,
    identifier: &str,
    camera: &Camera<T>,
    face_zoom: bool,
    normal_mode: bool,
) -> Result<PromptCondition> {
    compose_prompt_for_view(attributes, identifier, classify_view(camera), face_zoom, normal_mode)
}

pub fn compose_prompt_for_view(
    attributes: &Attributes,
    identifier: &str,
    view_tag: ViewTag,
    face_zoom: bool,
    normal_mode: bool,
) -> Result<PromptCondition> {
    let gender = attributes.gender.as_deref().map(str::trim).filter(|g| !g.is_empty()).ok_or(Error::MissingGender)?;
    let mut seen: HashSet<String> = HashSet::new();
    let head = dedup_segments(&[identifier.to_string(), gender.to_string()], &mut seen).join(" ");
    let garments = dedup_segments(&attributes.garment_texts(), &mut seen);
    let mut rest: Vec<String> = Vec::new();
    rest.extend(attributes.hair_text());
    rest.extend(attributes.face.clone());
    rest.extend(attributes.facial_hair.clone());
    rest.extend(attributes.extra.clone());
    let rest = dedup_segments(&rest, &mut seen);

    let mut base = head;
    if !garments.is_empty() {
        base.push_str(" wearing ");
        base.push_str(&garments.join(", "));
    }
    for r in rest {
        base.push_str(", ");
        base.push_str(&r);
    }
    Ok(PromptCondition { base_prompt: base, view_tag, face_zoom, normal_mode })
}
