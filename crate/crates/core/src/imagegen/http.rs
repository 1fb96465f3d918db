use std::time::Duration;

use base64::Engine as _;

use super::protocol::{
    ErrorBody, GenerateRequestBody, GenerateResponseBody, HealthResponse, STATUS_REFUSED, STATUS_UNSUPPORTED,
};
use super::{GenError, GenerateOptions, GenerationOutput, GeneratorDescriptor, ImageGenerator};
use crate::model::{ImageAsset, MediaType};

/// Client for a remote generator or local sidecar speaking the JSON protocol.
pub struct HttpGenerator {
    descriptor: GeneratorDescriptor,
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpGenerator {
    pub fn new(descriptor: GeneratorDescriptor, timeout: Duration) -> Result<Self, GenError> {
        descriptor.validate().map_err(GenError::InvalidOptions)?;
        let endpoint = descriptor
            .endpoint
            .clone()
            .unwrap_or_default()
            .trim_end_matches('/')
            .to_owned();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GenError::Transport(e.to_string()))?;
        Ok(Self {
            descriptor,
            endpoint,
            client,
        })
    }

    fn error_message(body: &str) -> String {
        serde_json::from_str::<ErrorBody>(body)
            .map(|e| e.error)
            .unwrap_or_else(|_| body.to_owned())
    }
}

pub(crate) fn request_body(prompt: &str, opts: &GenerateOptions) -> GenerateRequestBody {
    GenerateRequestBody {
        prompt: prompt.to_owned(),
        seed: opts.seed,
        width: opts.width,
        height: opts.height,
        n: opts.images_per_prompt,
        init_image: opts
            .init_image
            .as_ref()
            .map(|a| base64::engine::general_purpose::STANDARD.encode(a.bytes())),
        strength: opts.init_image.as_ref().map(|_| opts.strength.unwrap_or(1.0)),
    }
}

pub(crate) fn decode_response(body: GenerateResponseBody) -> Result<GenerationOutput, GenError> {
    let images = body
        .images
        .iter()
        .enumerate()
        .map(|(i, data)| {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(data)
                .map_err(|e| GenError::BadResponse(format!("image {i} is not base64: {e}")))?;
            if MediaType::sniff(&bytes) != Some(MediaType::Png) {
                return Err(GenError::BadResponse(format!("image {i} is not a PNG")));
            }
            ImageAsset::new(bytes, MediaType::Png).map_err(|e| GenError::BadResponse(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GenerationOutput {
        images,
        seed_used: Some(body.seed_used),
    })
}

impl ImageGenerator for HttpGenerator {
    fn descriptor(&self) -> &GeneratorDescriptor {
        &self.descriptor
    }

    fn generate_unchecked(&self, prompt: &str, opts: &GenerateOptions) -> Result<GenerationOutput, GenError> {
        let response = self
            .client
            .post(format!("{}/generate", self.endpoint))
            .json(&request_body(prompt, opts))
            .send()
            .map_err(|e| GenError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| GenError::Transport(e.to_string()))?;
        match status {
            200..=299 => {
                let body: GenerateResponseBody =
                    serde_json::from_str(&text).map_err(|e| GenError::BadResponse(e.to_string()))?;
                decode_response(body)
            }
            STATUS_REFUSED => Err(GenError::Refused(Self::error_message(&text))),
            STATUS_UNSUPPORTED => Err(GenError::UnsupportedMode(Self::error_message(&text))),
            400..=499 => Err(GenError::InvalidOptions(Self::error_message(&text))),
            _ => Err(GenError::Transport(format!(
                "HTTP {status}: {}",
                Self::error_message(&text)
            ))),
        }
    }

    fn health(&self) -> Result<HealthResponse, GenError> {
        let response = self
            .client
            .get(format!("{}/health", self.endpoint))
            .send()
            .map_err(|e| GenError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(GenError::Transport(format!(
                "health check returned {}",
                response.status()
            )));
        }
        response
            .json::<HealthResponse>()
            .map_err(|e| GenError::BadResponse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagegen::placeholder_image;

    #[test]
    fn body_carries_init_image_and_strength() {
        let init = placeholder_image(2, 2);
        let opts = GenerateOptions {
            init_image: Some(init.clone()),
            strength: Some(1.0),
            ..GenerateOptions::text_to_image(512, Some(7))
        };
        let body = request_body("a red fox", &opts);
        assert_eq!(body.strength, Some(1.0));
        assert_eq!(
            base64::engine::general_purpose::STANDARD
                .decode(body.init_image.unwrap())
                .unwrap(),
            init.bytes()
        );
        let json = serde_json::to_value(request_body("x", &GenerateOptions::text_to_image(8, None))).unwrap();
        assert_eq!(json["seed"], serde_json::Value::Null);
        assert_eq!(json["init_image"], serde_json::Value::Null);
        assert_eq!(json["strength"], serde_json::Value::Null);
    }

    #[test]
    fn rejects_non_png_payloads() {
        let body = GenerateResponseBody {
            images: vec![base64::engine::general_purpose::STANDARD.encode(b"GIF89a....")],
            seed_used: 1,
            backend: "x".into(),
        };
        assert!(matches!(decode_response(body), Err(GenError::BadResponse(_))));
    }
}
