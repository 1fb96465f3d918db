use std::sync::Mutex;

use base64::Engine as _;
use sha2::{Digest, Sha256};

use super::protocol::{
    ErrorBody, GenerateRequestBody, GenerateResponseBody, HealthResponse, STATUS_BAD_REQUEST, STATUS_REFUSED,
    STATUS_UNSUPPORTED,
};
use super::{raster, GenError, GenerateOptions, GenerationOutput, GeneratorDescriptor, ImageGenerator};
use crate::calllog::{CallKind, CallLog};
use crate::model::{ImageAsset, MediaType};

/// Procedural generator: each image is a grid of colored blocks whose colors
/// are a hash of (prompt, seed, options, image index). With a fixed seed the
/// output bytes depend on nothing else.
#[derive(Debug)]
pub struct MockGenerator {
    descriptor: GeneratorDescriptor,
    refuse_containing: Vec<String>,
    log: Option<CallLog>,
    prompts: Mutex<Vec<String>>,
}

impl MockGenerator {
    pub fn new(id: impl Into<String>) -> Self {
        Self::with_descriptor(GeneratorDescriptor::mock(id))
    }

    pub fn with_descriptor(descriptor: GeneratorDescriptor) -> Self {
        Self {
            descriptor,
            refuse_containing: Vec::new(),
            log: None,
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Refuses any prompt containing `pattern`, as a safety filter would.
    pub fn refusing(mut self, pattern: impl Into<String>) -> Self {
        self.refuse_containing.push(pattern.into());
        self
    }

    pub fn with_call_log(mut self, log: CallLog) -> Self {
        self.log = Some(log);
        self
    }

    /// Prompts received so far; order across concurrent calls is arbitrary.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("mock poisoned").clone()
    }

    fn render(prompt: &str, seed: u64, opts: &GenerateOptions, index: u32) -> Vec<u8> {
        let mut key = Sha256::new();
        key.update((prompt.len() as u64).to_le_bytes());
        key.update(prompt.as_bytes());
        key.update(seed.to_le_bytes());
        key.update(opts.width.to_le_bytes());
        key.update(opts.height.to_le_bytes());
        match &opts.init_image {
            Some(init) => key.update(init.digest().as_bytes()),
            None => key.update(b"-"),
        }
        key.update(opts.strength.unwrap_or(0.0).to_bits().to_le_bytes());
        key.update(index.to_le_bytes());
        raster::blocks(opts.width, opts.height, &key.finalize())
    }

    /// Answers one raw HTTP exchange of the wire protocol: returns the
    /// status code and JSON body for `method path` with request `body`.
    pub fn handle_http(&self, method: &str, path: &str, body: &[u8]) -> (u16, String) {
        match (method, path.trim_end_matches('/')) {
            ("GET", "/health") => (200, to_json(&self.health().expect("mock is healthy"))),
            ("POST", "/generate") => match serde_json::from_slice::<GenerateRequestBody>(body) {
                Ok(request) => match self.handle_generate(&request) {
                    Ok(response) => (200, to_json(&response)),
                    Err((status, error)) => (status, to_json(&error)),
                },
                Err(e) => (
                    STATUS_BAD_REQUEST,
                    to_json(&ErrorBody {
                        error: format!("malformed request body: {e}"),
                    }),
                ),
            },
            _ => (
                404,
                to_json(&ErrorBody {
                    error: format!("no route for {method} {path}"),
                }),
            ),
        }
    }

    /// Serves one protocol request; errors are `(status, body)`.
    pub fn handle_generate(&self, body: &GenerateRequestBody) -> Result<GenerateResponseBody, (u16, ErrorBody)> {
        let err = |status: u16, msg: String| (status, ErrorBody { error: msg });
        let init_image = match &body.init_image {
            Some(data) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(data)
                    .map_err(|e| err(STATUS_BAD_REQUEST, format!("init_image is not base64: {e}")))?;
                let asset =
                    ImageAsset::new(bytes, MediaType::Png).map_err(|e| err(STATUS_BAD_REQUEST, e.to_string()))?;
                Some(asset)
            }
            None => None,
        };
        let opts = GenerateOptions {
            width: body.width,
            height: body.height,
            seed: body.seed,
            init_image,
            strength: body.strength,
            images_per_prompt: body.n,
        };
        opts.validate().map_err(|e| err(STATUS_BAD_REQUEST, e.to_string()))?;
        match self.generate_unchecked(&body.prompt, &opts) {
            Ok(out) => Ok(GenerateResponseBody {
                images: out
                    .images
                    .iter()
                    .map(|a| base64::engine::general_purpose::STANDARD.encode(a.bytes()))
                    .collect(),
                seed_used: out.seed_used.unwrap_or_default(),
                backend: self.descriptor.id.clone(),
            }),
            Err(GenError::Refused(m)) => Err(err(STATUS_REFUSED, m)),
            Err(GenError::UnsupportedMode(m)) => Err(err(STATUS_UNSUPPORTED, m)),
            Err(e) => Err(err(STATUS_BAD_REQUEST, e.to_string())),
        }
    }
}

impl ImageGenerator for MockGenerator {
    fn descriptor(&self) -> &GeneratorDescriptor {
        &self.descriptor
    }

    fn generate_unchecked(&self, prompt: &str, opts: &GenerateOptions) -> Result<GenerationOutput, GenError> {
        if let Some(log) = &self.log {
            log.push(CallKind::Generate);
        }
        self.prompts.lock().expect("mock poisoned").push(prompt.to_owned());
        if opts.init_image.is_some() && !self.descriptor.supports_img2img {
            return Err(GenError::UnsupportedMode("img2img disabled on this mock".into()));
        }
        if let Some(pattern) = self.refuse_containing.iter().find(|p| prompt.contains(p.as_str())) {
            return Err(GenError::Refused(format!("prompt matched `{pattern}`")));
        }
        let seed = opts.seed.unwrap_or_else(rand::random);
        let images = (0..opts.images_per_prompt)
            .map(|i| {
                ImageAsset::new(Self::render(prompt, seed, opts, i), MediaType::Png).expect("encoded PNG is non-empty")
            })
            .collect();
        Ok(GenerationOutput {
            images,
            seed_used: Some(seed),
        })
    }

    fn health(&self) -> Result<HealthResponse, GenError> {
        Ok(HealthResponse {
            status: "ok".into(),
            model: format!("mock:{}", self.descriptor.id),
        })
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("protocol bodies serialize")
}
