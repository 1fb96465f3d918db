//! Idea files: an ordered list of text and image segments in TOML. Image
//! paths are relative to the idea file.
//!
//! ```toml
//! title = "dog in snow"          # optional, for humans
//! [[segment]]
//! text = "a dog that looks like this one"
//! [[segment]]
//! image = "images/dog.png"
//! [[segment]]
//! text = "playing in snow"
//! ```

use std::path::Path;

use idearefine_core::{Idea, IdeaSegment, ImageAsset, MediaType};
use serde::Deserialize;

use crate::exit::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdeaFile {
    #[serde(default)]
    #[allow(dead_code)]
    title: Option<String>,
    segment: Vec<SegmentEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentEntry {
    text: Option<String>,
    image: Option<String>,
}

pub fn load(path: &Path) -> CliResult<Idea> {
    let fail = |msg: String| CliError::config(format!("{}: {msg}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let file: IdeaFile = toml::from_str(&text).map_err(|e| fail(format!("invalid idea file: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut segments = Vec::with_capacity(file.segment.len());
    for (k, entry) in file.segment.into_iter().enumerate() {
        segments.push(match (entry.text, entry.image) {
            (Some(text), None) => IdeaSegment::text(text),
            (None, Some(image)) => {
                let image_path = base.join(&image);
                let bytes = std::fs::read(&image_path)
                    .map_err(|e| fail(format!("segment {k}: {}: {e}", image_path.display())))?;
                let media = MediaType::sniff(&bytes)
                    .ok_or_else(|| fail(format!("segment {k}: {image} is neither PNG nor JPEG")))?;
                let asset = ImageAsset::new(bytes, media).map_err(|e| fail(format!("segment {k}: {e}")))?;
                IdeaSegment::image(asset)
            }
            _ => return Err(fail(format!("segment {k} must have exactly one of `text` or `image`"))),
        });
    }
    Idea::new(segments).map_err(|e| fail(e.to_string()))
}
