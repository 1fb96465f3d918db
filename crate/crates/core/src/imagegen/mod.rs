//! Access to text-conditioned image generators, in text-to-image and
//! image-to-image modes.

mod http;
mod mock;
pub mod protocol;
pub mod raster;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use http::HttpGenerator;
pub use mock::MockGenerator;

use crate::model::{ImageAsset, MediaType};
use crate::sync::Limiter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    RemoteHttp,
    LocalSidecar,
    Mock,
}

impl GeneratorKind {
    /// Default square output size.
    pub fn default_resolution(self) -> u32 {
        match self {
            GeneratorKind::Mock => 64,
            GeneratorKind::RemoteHttp | GeneratorKind::LocalSidecar => 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDescriptor {
    pub id: String,
    pub kind: GeneratorKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub supports_img2img: bool,
}

impl GeneratorDescriptor {
    pub fn mock(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: GeneratorKind::Mock,
            endpoint: None,
            supports_img2img: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("generator id is empty".into());
        }
        if self.kind != GeneratorKind::Mock && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(format!("generator `{}` needs an endpoint", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub width: u32,
    pub height: u32,
    pub seed: Option<u64>,
    pub init_image: Option<ImageAsset>,
    /// Noise strength for image-to-image; only meaningful with `init_image`.
    pub strength: Option<f64>,
    pub images_per_prompt: u32,
}

impl GenerateOptions {
    pub fn text_to_image(size: u32, seed: Option<u64>) -> Self {
        Self {
            width: size,
            height: size,
            seed,
            init_image: None,
            strength: None,
            images_per_prompt: 1,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.width == 0 || self.height == 0 {
            return Err(GenError::InvalidOptions("width and height must be positive".into()));
        }
        if self.images_per_prompt == 0 {
            return Err(GenError::InvalidOptions("images_per_prompt must be at least 1".into()));
        }
        if let Some(strength) = self.strength {
            if self.init_image.is_none() {
                return Err(GenError::InvalidOptions("strength given without an init image".into()));
            }
            if !(strength > 0.0 && strength <= 1.0) {
                return Err(GenError::InvalidOptions(format!("strength {strength} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenError {
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("generation refused: {0}")]
    Refused(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("malformed generator response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationOutput {
    pub images: Vec<ImageAsset>,
    pub seed_used: Option<u64>,
}

pub trait ImageGenerator: Send + Sync {
    fn descriptor(&self) -> &GeneratorDescriptor;

    /// Backend call without precondition or cardinality checks; use
    /// [`generate`] instead.
    fn generate_unchecked(&self, prompt: &str, opts: &GenerateOptions) -> Result<GenerationOutput, GenError>;

    fn health(&self) -> Result<protocol::HealthResponse, GenError> {
        Ok(protocol::HealthResponse {
            status: "ok".into(),
            model: self.descriptor().id.clone(),
        })
    }
}

/// Generates exactly `opts.images_per_prompt` images for `prompt`, or fails.
pub fn generate(gen: &dyn ImageGenerator, prompt: &str, opts: &GenerateOptions) -> Result<GenerationOutput, GenError> {
    opts.validate()?;
    if opts.init_image.is_some() && !gen.descriptor().supports_img2img {
        return Err(GenError::UnsupportedMode(format!(
            "generator `{}` does not accept an init image",
            gen.descriptor().id
        )));
    }
    let out = gen.generate_unchecked(prompt, opts)?;
    if out.images.len() != opts.images_per_prompt as usize {
        return Err(GenError::BadResponse(format!(
            "asked for {} images, got {}",
            opts.images_per_prompt,
            out.images.len()
        )));
    }
    Ok(out)
}

/// Neutral mid-gray stand-in for a refused generation.
pub fn placeholder_image(width: u32, height: u32) -> ImageAsset {
    let bytes = raster::solid(width, height, [raster::PLACEHOLDER_GRAY; 3]);
    ImageAsset::new(bytes, MediaType::Png).expect("encoded PNG is non-empty")
}

/// Shareable handle bundling a generator with an in-flight cap.
#[derive(Clone)]
pub struct GenGateway {
    generator: Arc<dyn ImageGenerator>,
    limiter: Option<Arc<Limiter>>,
}

impl GenGateway {
    /// Uncapped: concurrency is bounded by the engine's fan-out width.
    pub fn new(generator: Arc<dyn ImageGenerator>) -> Self {
        Self {
            generator,
            limiter: None,
        }
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.limiter = Some(Arc::new(Limiter::new(cap)));
        self
    }

    pub fn descriptor(&self) -> &GeneratorDescriptor {
        self.generator.descriptor()
    }

    pub fn generate(&self, prompt: &str, opts: &GenerateOptions) -> Result<GenerationOutput, GenError> {
        let _permit = self.limiter.as_ref().map(|l| l.acquire());
        generate(self.generator.as_ref(), prompt, opts)
    }

    pub fn health(&self) -> Result<protocol::HealthResponse, GenError> {
        self.generator.health()
    }
}

impl std::fmt::Debug for GenGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GenGateway")
            .field("generator", &self.generator.descriptor().id)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn options_validation() {
        let mut o = GenerateOptions::text_to_image(64, Some(1));
        assert!(o.validate().is_ok());
        o.strength = Some(1.0);
        assert!(matches!(o.validate(), Err(GenError::InvalidOptions(_))));
        o.init_image = Some(placeholder_image(2, 2));
        assert!(o.validate().is_ok());
        o.strength = Some(1.5);
        assert!(o.validate().is_err());
        let zero = GenerateOptions::text_to_image(0, None);
        assert!(zero.validate().is_err());
    }

    #[test]
    fn descriptor_validation() {
        assert!(GeneratorDescriptor::mock("m").validate().is_ok());
        let remote = GeneratorDescriptor {
            id: "sdxl".into(),
            kind: GeneratorKind::RemoteHttp,
            endpoint: None,
            supports_img2img: false,
        };
        assert!(remote.validate().is_err());
    }

    #[test]
    fn placeholder_is_gray() {
        let img = placeholder_image(4, 4);
        let pixels = raster::decode_rgb(img.bytes()).unwrap();
        assert!(pixels.iter().all(|&p| p == raster::PLACEHOLDER_GRAY));
    }
}
