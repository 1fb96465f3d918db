//! JSON bodies of the generator HTTP protocol.
//!
//! ```text
//! POST {endpoint}/generate
//!   {"prompt": str, "seed": int|null, "width": int, "height": int, "n": int,
//!    "init_image": base64 PNG|null, "strength": number|null}
//!   200 -> {"images": [base64 PNG, ...], "seed_used": int, "backend": str}
//!   400 -> malformed body, 422 -> unsupported mode,
//!   451 -> generation refused by a safety filter, 500 -> pipeline failure
//! GET {endpoint}/health
//!   200 -> {"status": "ok", "model": str}
//! ```
//!
//! Error responses carry `{"error": str}`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequestBody {
    pub prompt: String,
    pub seed: Option<u64>,
    pub width: u32,
    pub height: u32,
    pub n: u32,
    pub init_image: Option<String>,
    pub strength: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponseBody {
    pub images: Vec<String>,
    pub seed_used: u64,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub const STATUS_BAD_REQUEST: u16 = 400;
pub const STATUS_REFUSED: u16 = 451;
pub const STATUS_UNSUPPORTED: u16 = 422;
pub const STATUS_PIPELINE_FAILURE: u16 = 500;
