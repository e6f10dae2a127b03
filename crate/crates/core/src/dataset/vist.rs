//! Readers for the VIST story-in-sequence (SIS) and description-in-isolation
//! (DII) annotation files.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

use super::STORY_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryEntry {
    pub image_id: String,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawStory {
    pub story_id: String,
    pub entries: Vec<StoryEntry>,
}

impl RawStory {
    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.image_id.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SisLoad {
    pub stories: Vec<RawStory>,
    /// Stories with a number of entries other than five.
    pub rejected_length: usize,
    /// Stories with at least one annotation missing a required field.
    pub skipped_missing_fields: usize,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// VIST wraps each annotation in a one-element list.
fn annotations(root: &Value) -> impl Iterator<Item = &Value> {
    root.get("annotations")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .flat_map(|a| match a {
            Value::Array(items) => items.iter().collect::<Vec<_>>(),
            other => vec![other],
        })
}

fn string_field(v: &Value, key: &str) -> Option<String> {
    match v.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn order_field(v: &Value) -> Option<i64> {
    match v.get("worker_arranged_photo_order")? {
        Value::Number(n) => n.as_i64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

pub fn load_sis(path: &Path) -> Result<SisLoad> {
    parse_sis(&read_json(path)?)
}

pub fn parse_sis(root: &Value) -> Result<SisLoad> {
    struct Pending {
        entries: Vec<(i64, StoryEntry)>,
        broken: bool,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Pending> = HashMap::new();
    let mut orphans = 0;

    for ann in annotations(root) {
        let Some(story_id) = string_field(ann, "story_id") else {
            orphans += 1;
            continue;
        };
        let group = groups.entry(story_id.clone()).or_insert_with(|| {
            order.push(story_id.clone());
            Pending {
                entries: Vec::new(),
                broken: false,
            }
        });
        match (
            string_field(ann, "photo_flickr_id"),
            string_field(ann, "text"),
            order_field(ann),
        ) {
            (Some(image_id), Some(sentence), Some(pos)) => {
                group.entries.push((pos, StoryEntry { image_id, sentence }))
            }
            _ => group.broken = true,
        }
    }

    let mut out = SisLoad {
        skipped_missing_fields: orphans,
        ..SisLoad::default()
    };
    for id in order {
        let mut group = groups.remove(&id).expect("grouped above");
        if group.broken {
            out.skipped_missing_fields += 1;
            continue;
        }
        if group.entries.len() != STORY_LEN {
            out.rejected_length += 1;
            continue;
        }
        group.entries.sort_by_key(|(pos, _)| *pos);
        out.stories.push(RawStory {
            story_id: id,
            entries: group.entries.into_iter().map(|(_, e)| e).collect(),
        });
    }
    if out.rejected_length + out.skipped_missing_fields > 0 {
        log::warn!(
            "sis: {} stories without exactly {STORY_LEN} entries, {} with missing fields",
            out.rejected_length,
            out.skipped_missing_fields
        );
    }
    Ok(out)
}

/// Image id to description. The first description in file order wins.
pub fn load_dii(path: &Path) -> Result<HashMap<String, String>> {
    Ok(parse_dii(&read_json(path)?))
}

pub fn parse_dii(root: &Value) -> HashMap<String, String> {
    let mut out = HashMap::new();
    for ann in annotations(root) {
        if let (Some(id), Some(text)) = (
            string_field(ann, "photo_flickr_id"),
            string_field(ann, "text"),
        ) {
            out.entry(id).or_insert(text);
        }
    }
    out
}

/// Keeps the stories whose every image has a description.
pub fn filter_stories(
    stories: &[RawStory],
    descriptions: &HashMap<String, String>,
) -> Vec<RawStory> {
    stories
        .iter()
        .filter(|s| s.image_ids().all(|id| descriptions.contains_key(id)))
        .cloned()
        .collect()
}
